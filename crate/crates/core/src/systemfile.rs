//! The on-disk system description: a single JSON document whose numeric
//! entries are all strings (exact rationals, decimals, or expressions in
//! the parameter t), plus loading into the exact, floating, or family
//! pipeline and serialization of certificates.

use crate::certify::{Mode, SystemData};
use crate::derivatives::FamilySystem;
use crate::family::{Expr, FamilyError};
use crate::numeric::{Precision, Rational, Real, Scalar, DEFAULT_PRECISION};
use crate::projective::Mat2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{context}: {source}")]
    Entry {
        context: String,
        source: FamilyError,
    },
    #[error("alphabet letter {0:?} has no matrix")]
    MissingMatrix(String),
    #[error("alphabet letter {0:?} has no multicone component")]
    MissingCone(String),
    #[error("transition matrix shape does not match the alphabet")]
    BadTransitionShape,
    #[error("parameter-dependent entries but no parameter section with t0")]
    MissingParameter,
    #[error("bad option {name}: {reason}")]
    BadOption { name: String, reason: String },
}

fn entry_err(context: impl Into<String>) -> impl FnOnce(FamilyError) -> FileError {
    let context = context.into();
    move |source| FileError::Entry { context, source }
}

/// Optional user-supplied disk constants for the derivative bounds.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct OmegaConstantsSection {
    pub q_bar: Option<String>,
    pub d_bar: Option<String>,
    pub m_ell: Option<String>,
    pub m_sigma_pi: Option<String>,
    pub m_pi_min: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct OptionsSection {
    pub precision_bits: Option<u32>,
    pub epsilon: Option<String>,
    pub order: Option<usize>,
    pub disk_radius: Option<String>,
    pub rho_bar: Option<String>,
    pub mode: Option<String>,
    pub class_choice: Option<usize>,
    pub omega_constants: Option<OmegaConstantsSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterSection {
    pub t0: String,
}

/// The file format. Matrices and charts are 2x2 arrays of entry strings,
/// row-major; multicone arcs are endpoint pairs in increasing-slope
/// orientation with "inf" for the point at infinity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    pub alphabet: Vec<String>,
    pub matrices: BTreeMap<String, [[String; 2]; 2]>,
    pub transition: Vec<Vec<String>>,
    /// May be empty for files that only serve as reduction input; any
    /// command that needs a multicone will reject such files loudly.
    #[serde(default)]
    pub multicone: BTreeMap<String, Vec<[String; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub charts: Option<BTreeMap<String, Vec<[[String; 2]; 2]>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameter: Option<ParameterSection>,
    /// Set when this file describes the d-step block system of an
    /// original chain: certified values are divided by this factor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_period: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub options: Option<OptionsSection>,
}

/// A loaded system, classified by the arithmetic it supports.
pub enum LoadedSystem {
    /// Every entry is an exact rational: validation is exact.
    Exact(SystemData<Rational>),
    /// Constant but irrational entries (e.g. square roots): validation
    /// over reals with loud tolerance checks.
    Floating(SystemData<Real>),
    /// Genuine parameter dependence.
    Family { family: FamilySystem, t0: Real },
}

impl SystemFile {
    pub fn from_path(path: &std::path::Path) -> Result<Self, FileError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn from_str(text: &str) -> Result<Self, FileError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// The base-period divisor (1 when absent).
    pub fn divisor(&self) -> u32 {
        self.base_period.unwrap_or(1).max(1)
    }

    /// Build the expression-level family (also used for constant files).
    pub fn family(&self) -> Result<FamilySystem, FileError> {
        let n = self.alphabet.len();
        if self.transition.len() != n || self.transition.iter().any(|r| r.len() != n) {
            return Err(FileError::BadTransitionShape);
        }
        let parse_entry = |ctx: &str, s: &str| -> Result<Expr, FileError> {
            Expr::parse(s).map_err(entry_err(format!("{ctx} ({s:?})")))
        };

        let mut matrices = Vec::with_capacity(n);
        for letter in &self.alphabet {
            let m = self
                .matrices
                .get(letter)
                .ok_or_else(|| FileError::MissingMatrix(letter.clone()))?;
            matrices.push(Mat2::new(
                parse_entry(&format!("matrix {letter}[0][0]"), &m[0][0])?,
                parse_entry(&format!("matrix {letter}[0][1]"), &m[0][1])?,
                parse_entry(&format!("matrix {letter}[1][0]"), &m[1][0])?,
                parse_entry(&format!("matrix {letter}[1][1]"), &m[1][1])?,
            ));
        }

        let mut chain_rows = Vec::with_capacity(n);
        let mut chain_support = Vec::with_capacity(n);
        for (i, row) in self.transition.iter().enumerate() {
            let mut exprs = Vec::with_capacity(n);
            let mut support = Vec::with_capacity(n);
            for (j, s) in row.iter().enumerate() {
                let e = parse_entry(&format!("transition[{i}][{j}]"), s)?;
                // Support is structural: a literal zero is a non-edge.
                support.push(!matches!(&e, Expr::Constant(q) if q.is_zero()));
                exprs.push(e);
            }
            chain_rows.push(exprs);
            chain_support.push(support);
        }

        let mut cone_endpoints = Vec::with_capacity(n);
        for letter in &self.alphabet {
            let arcs = match self.multicone.get(letter) {
                Some(a) => a.as_slice(),
                // Tolerated at parse time; multicone validation rejects
                // empty cones when a command actually needs them.
                None => &[],
            };
            let mut comps = Vec::with_capacity(arcs.len());
            for (k, [lo, hi]) in arcs.iter().enumerate() {
                let parse_end = |s: &str| -> Result<Option<Expr>, FileError> {
                    let t = s.trim();
                    if t == "inf" || t == "-inf" || t == "+inf" {
                        Ok(None)
                    } else {
                        Ok(Some(parse_entry(
                            &format!("multicone {letter} component {}", k + 1),
                            s,
                        )?))
                    }
                };
                comps.push((parse_end(lo)?, parse_end(hi)?));
            }
            cone_endpoints.push(comps);
        }

        let charts = match &self.charts {
            None => None,
            Some(map) => {
                let mut list = Vec::new();
                for (letter, frames) in map {
                    let i = self
                        .alphabet
                        .iter()
                        .position(|l| l == letter)
                        .ok_or_else(|| FileError::MissingMatrix(letter.clone()))?;
                    for (a, f) in frames.iter().enumerate() {
                        list.push((
                            (i, a),
                            Mat2::new(
                                parse_entry(&format!("chart {letter}[0][0]"), &f[0][0])?,
                                parse_entry(&format!("chart {letter}[0][1]"), &f[0][1])?,
                                parse_entry(&format!("chart {letter}[1][0]"), &f[1][0])?,
                                parse_entry(&format!("chart {letter}[1][1]"), &f[1][1])?,
                            ),
                        ));
                    }
                }
                Some(list)
            }
        };

        Ok(FamilySystem {
            labels: self.alphabet.clone(),
            matrices,
            chain_rows,
            chain_support,
            cone_endpoints,
            charts,
            base_divisor: self.divisor(),
        })
    }

    /// True when some entry mentions the parameter.
    pub fn is_family(&self) -> Result<bool, FileError> {
        let fam = self.family()?;
        let dependent = fam
            .matrices
            .iter()
            .any(|m| ![&m.a, &m.b, &m.c, &m.d].iter().all(|e| e.is_constant()))
            || fam
                .chain_rows
                .iter()
                .any(|r| r.iter().any(|e| !e.is_constant()));
        Ok(dependent)
    }

    /// Load and classify.
    pub fn load(&self, precision: Precision) -> Result<LoadedSystem, FileError> {
        let fam = self.family()?;
        if self.is_family()? {
            let t0_text = self
                .parameter
                .as_ref()
                .ok_or(FileError::MissingParameter)?
                .t0
                .clone();
            let t0_expr =
                Expr::parse(&t0_text).map_err(entry_err(format!("parameter t0 ({t0_text:?})")))?;
            let t0 = t0_expr
                .eval(&Real::new(precision).one_like())
                .map_err(entry_err("parameter t0"))?;
            return Ok(LoadedSystem::Family { family: fam, t0 });
        }
        // Constant system: try the exact route first.
        let zero_q = Rational::new();
        match fam.instantiate(&zero_q) {
            Ok(data) => Ok(LoadedSystem::Exact(data)),
            Err(_) => {
                let zero_r = Real::new(precision);
                let data = fam.instantiate(&zero_r).map_err(|e| FileError::Entry {
                    context: "evaluating constant system over reals".to_string(),
                    source: FamilyError::Domain(e.to_string()),
                })?;
                Ok(LoadedSystem::Floating(data))
            }
        }
    }

    pub fn precision(&self) -> Precision {
        self.options
            .as_ref()
            .and_then(|o| o.precision_bits)
            .unwrap_or(DEFAULT_PRECISION)
            .max(crate::numeric::MIN_PRECISION)
    }

    pub fn epsilon(&self, precision: Precision) -> Result<Real, FileError> {
        match self.options.as_ref().and_then(|o| o.epsilon.as_ref()) {
            None => Ok(Real::with_val(precision, 1e-10)),
            Some(s) => crate::numeric::parse_real(s, precision).map_err(|e| FileError::BadOption {
                name: "epsilon".to_string(),
                reason: e.to_string(),
            }),
        }
    }

    pub fn mode(&self) -> Result<Mode, FileError> {
        match self
            .options
            .as_ref()
            .and_then(|o| o.mode.as_deref())
            .unwrap_or("float")
        {
            "float" => Ok(Mode::Float),
            "interval" => Ok(Mode::Interval),
            other => Err(FileError::BadOption {
                name: "mode".to_string(),
                reason: format!("expected \"float\" or \"interval\", got {other:?}"),
            }),
        }
    }

    /// Evaluate an option value to a real at the given precision: plain
    /// decimal strings (including scientific notation) first, then
    /// expression forms like "1/5" or "sqrt(29)/5".
    pub fn option_real(name: &str, text: &str, precision: Precision) -> Result<Real, FileError> {
        if let Ok(v) = crate::numeric::parse_real(text, precision) {
            return Ok(v);
        }
        let e = Expr::parse(text).map_err(entry_err(format!("option {name}")))?;
        e.eval(&Real::new(precision).one_like())
            .map_err(entry_err(format!("option {name}")))
    }
}

/// The d-step block reduction of a (possibly family) system file:
/// block alphabet of admissible d-paths starting in the anchored cyclic
/// class, symbolic product matrices, block transition products, and the
/// multiplied base period. The multicone is not carried over: a multicone
/// for the d-step dynamics is the user's input.
pub fn reduce_base_file(file: &SystemFile) -> Result<SystemFile, FileError> {
    let fam = file.family()?;
    let n = fam.labels.len();

    // Period and cyclic classes from the structural support alone.
    let support_chain = {
        let rows: Vec<Vec<Rational>> = fam
            .chain_support
            .iter()
            .map(|row| {
                let out_deg = row.iter().filter(|&&b| b).count().max(1) as u32;
                row.iter()
                    .map(|&b| {
                        if b {
                            Rational::from((1u32, out_deg))
                        } else {
                            Rational::new()
                        }
                    })
                    .collect()
            })
            .collect();
        crate::markov::StochasticMatrix::new(fam.labels.clone(), rows).map_err(|e| {
            FileError::BadOption {
                name: "transition".to_string(),
                reason: e.to_string(),
            }
        })?
    };
    let d = support_chain.period().map_err(|e| FileError::BadOption {
        name: "transition".to_string(),
        reason: e.to_string(),
    })?;
    if d == 1 {
        return Ok(file.clone());
    }
    let classes = support_chain
        .cyclic_classes()
        .map_err(|e| FileError::BadOption {
            name: "transition".to_string(),
            reason: e.to_string(),
        })?;

    // Admissible d-paths starting in the anchor class.
    let mut frontier: Vec<Vec<usize>> = classes[0].iter().map(|&i| vec![i]).collect();
    for _ in 1..d {
        let mut next = Vec::new();
        for path in frontier {
            let last = *path.last().unwrap();
            for j in 0..n {
                if fam.chain_support[last][j] {
                    let mut ext = path.clone();
                    ext.push(j);
                    next.push(ext);
                }
            }
        }
        frontier = next;
    }
    let mut blocks = frontier;
    blocks.sort_by_key(|b| {
        b.iter()
            .map(|&i| fam.labels[i].clone())
            .collect::<Vec<_>>()
    });
    let labels: Vec<String> = blocks
        .iter()
        .map(|b| {
            b.iter()
                .map(|&i| fam.labels[i].as_str())
                .collect::<Vec<_>>()
                .join(".")
        })
        .collect();

    let mul = |a: &Expr, b: &Expr| Expr::Mul(Box::new(a.clone()), Box::new(b.clone()));
    let add = |a: Expr, b: Expr| Expr::Add(Box::new(a), Box::new(b));
    let mat_mul = |x: &Mat2<Expr>, y: &Mat2<Expr>| -> Mat2<Expr> {
        Mat2::new(
            add(mul(&x.a, &y.a), mul(&x.b, &y.c)),
            add(mul(&x.a, &y.b), mul(&x.b, &y.d)),
            add(mul(&x.c, &y.a), mul(&x.d, &y.c)),
            add(mul(&x.c, &y.b), mul(&x.d, &y.d)),
        )
    };

    let mut matrices = BTreeMap::new();
    for (label, block) in labels.iter().zip(&blocks) {
        // Product with the last letter leftmost (applied last).
        let mut acc = fam.matrices[block[0]].clone();
        for &i in &block[1..] {
            acc = mat_mul(&fam.matrices[i], &acc);
        }
        matrices.insert(
            label.clone(),
            [
                [acc.a.print(), acc.b.print()],
                [acc.c.print(), acc.d.print()],
            ],
        );
    }

    let nb = blocks.len();
    let mut transition = vec![vec!["0".to_string(); nb]; nb];
    for (bi, b) in blocks.iter().enumerate() {
        for (bj, c) in blocks.iter().enumerate() {
            let last = *b.last().unwrap();
            if !fam.chain_support[last][c[0]] {
                continue;
            }
            let mut ok = true;
            let mut prob = fam.chain_rows[last][c[0]].clone();
            for w in c.windows(2) {
                if !fam.chain_support[w[0]][w[1]] {
                    ok = false;
                    break;
                }
                prob = mul(&prob, &fam.chain_rows[w[0]][w[1]]);
            }
            if ok {
                transition[bi][bj] = prob.print();
            }
        }
    }

    Ok(SystemFile {
        alphabet: labels,
        matrices,
        transition,
        multicone: BTreeMap::new(),
        charts: None,
        parameter: file.parameter.clone(),
        base_period: Some(file.divisor() * d),
        options: file.options.clone(),
    })
}

/// Decimal string for a real at full stored precision, round-trippable
/// through [`crate::numeric::parse_real`].
pub fn real_to_string(x: &Real) -> String {
    // Full significand; rug picks enough digits to round-trip.
    x.to_string_radix(10, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_file() -> &'static str {
        r#"{
            "alphabet": ["a"],
            "matrices": {"a": [["2", "0"], ["0", "1/2"]]},
            "transition": [["1"]],
            "multicone": {"a": [["1", "-1"]]}
        }"#
    }

    #[test]
    fn load_exact_system() {
        let file = SystemFile::from_str(minimal_file()).unwrap();
        assert!(!file.is_family().unwrap());
        match file.load(128).unwrap() {
            LoadedSystem::Exact(data) => {
                assert_eq!(data.chain.size(), 1);
                assert_eq!(data.cone.components.len(), 1);
            }
            _ => panic!("expected the exact route"),
        }
    }

    #[test]
    fn load_family_system() {
        let text = r#"{
            "alphabet": ["a"],
            "matrices": {"a": [["2 + (t - 3)", "1"], ["1", "2"]]},
            "transition": [["1"]],
            "multicone": {"a": [["0", "inf"]]},
            "parameter": {"t0": "3"}
        }"#;
        let file = SystemFile::from_str(text).unwrap();
        assert!(file.is_family().unwrap());
        match file.load(96).unwrap() {
            LoadedSystem::Family { family, t0 } => {
                assert_eq!(family.labels, vec!["a"]);
                assert_eq!(t0.to_f64(), 3.0);
            }
            _ => panic!("expected the family route"),
        }
    }

    #[test]
    fn family_file_without_t0_errors() {
        let text = r#"{
            "alphabet": ["a"],
            "matrices": {"a": [["t", "1"], ["1", "2"]]},
            "transition": [["1"]],
            "multicone": {"a": [["0", "inf"]]}
        }"#;
        let file = SystemFile::from_str(text).unwrap();
        assert!(matches!(
            file.load(96),
            Err(FileError::MissingParameter)
        ));
    }

    #[test]
    fn irrational_constants_take_float_route() {
        let text = r#"{
            "alphabet": ["a"],
            "matrices": {"a": [["2", "sqrt(2)"], ["1", "2"]]},
            "transition": [["1"]],
            "multicone": {"a": [["0", "inf"]]}
        }"#;
        let file = SystemFile::from_str(text).unwrap();
        match file.load(128).unwrap() {
            LoadedSystem::Floating(data) => {
                let b = &data.matrices[0].b;
                assert!((b.to_f64() - 2f64.sqrt()).abs() < 1e-15);
            }
            _ => panic!("expected the floating route"),
        }
    }

    #[test]
    fn reduce_base_builds_block_products() {
        // Two letters alternating: the blocks and products of the 2-step
        // reduction.
        let text = r#"{
            "alphabet": ["a", "b"],
            "matrices": {
                "a": [["2", "0"], ["0", "1/2"]],
                "b": [["3", "0"], ["0", "1/3"]]
            },
            "transition": [["0", "1"], ["1", "0"]],
            "multicone": {"a": [["1", "-1"]], "b": [["1", "-1"]]}
        }"#;
        let file = SystemFile::from_str(text).unwrap();
        let reduced = reduce_base_file(&file).unwrap();
        assert_eq!(reduced.alphabet, vec!["a.b"]);
        assert_eq!(reduced.base_period, Some(2));
        assert_eq!(reduced.transition, vec![vec!["(1 * 1)".to_string()]]);
        // The block matrix is A_b A_a = diag(6, 1/6).
        let m = &reduced.matrices["a.b"];
        let entry = |s: &str| {
            Expr::parse(s)
                .unwrap()
                .eval_rational(&Rational::new())
                .unwrap()
        };
        assert_eq!(entry(&m[0][0]), Rational::from(6));
        assert_eq!(entry(&m[0][1]), Rational::new());
        assert_eq!(entry(&m[1][0]), Rational::new());
        assert_eq!(entry(&m[1][1]), Rational::from((1, 6)));
        // Period-1 file passes through unchanged.
        let f1 = SystemFile::from_str(minimal_file()).unwrap();
        let r1 = reduce_base_file(&f1).unwrap();
        assert_eq!(r1.alphabet, f1.alphabet);
        assert_eq!(r1.base_period, None);
    }

    #[test]
    fn real_strings_round_trip() {
        let x = Real::with_val(192, Rational::from((279, 359)));
        let s = real_to_string(&x);
        let back = crate::numeric::parse_real(&s, 192).unwrap();
        assert_eq!(x, back);
    }
}
