//! Local charts, the chart-conjugated positive matrices B_r, their
//! Moebius actions f_r on [-1, 1], the contraction factor rho, and the
//! assembled lifted system the series engine runs on. When the branch
//! transition matrix restricted to the chosen class is periodic, the lift
//! is replaced by its d-step block version and d is recorded.

use crate::markov::{accelerate, MarkovError, StochasticMatrix};
use crate::multicone::{BranchState, BranchSystem, Multicone, MulticoneError};
use crate::numeric::{FromRationalPrec, Precision, Scalar, Sign, SignScalar};
use crate::projective::{Arc, Mat2, Mobius, ProjectiveError};

#[derive(Debug, Clone, thiserror::Error)]
pub enum LiftError {
    #[error("chart for {0} does not frame the declared arc")]
    ChartMismatch(String),
    #[error("conjugated matrix for state {0} is not strictly positive")]
    NotPositive(String),
    #[error("no strict contraction: |f({0})| >= 1 for state {1}")]
    NoContraction(String, String),
    #[error("transposed map not contracting at 0 for state {0}")]
    TransposeNotContracting(String),
    #[error(transparent)]
    Projective(#[from] ProjectiveError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Multicone(#[from] MulticoneError),
}

/// Per-state data for the series engine: the positive matrix, its
/// conjugated Moebius map, and the scalars the kernel entries are built
/// from.
#[derive(Debug, Clone)]
pub struct StateMaps<S: Scalar> {
    /// Strictly positive matrix for this state.
    pub matrix: Mat2<S>,
    /// Moebius self-map of [-1, 1] (coefficients of the conjugate).
    pub map: Mobius<S>,
    /// f(0) = beta/delta.
    pub f_at_zero: S,
    /// f'(0) = (alpha delta - beta gamma)/delta^2.
    pub f_prime_at_zero: S,
    /// f^T(0) = gamma/delta.
    pub f_transpose_at_zero: S,
    /// delta, the conjugate's value at the cone barycenter; positive.
    pub delta: S,
}

impl<S: Scalar> StateMaps<S> {
    /// Derive the Moebius data from a strictly positive matrix.
    pub fn from_positive_matrix(matrix: Mat2<S>) -> Self {
        let conj = matrix.interval_conjugate();
        let map = Mobius::from_mat2(&conj);
        let f_at_zero = map.beta.div(&map.delta);
        let f_transpose_at_zero = map.gamma.div(&map.delta);
        let det = map.alpha.mul(&map.delta).sub(&map.beta.mul(&map.gamma));
        let f_prime_at_zero = det.div(&map.delta.mul(&map.delta));
        StateMaps {
            matrix,
            map,
            f_at_zero,
            f_prime_at_zero,
            f_transpose_at_zero,
            delta: conj.d,
        }
    }

    pub fn convert<T: Scalar>(&self, f: &impl Fn(&S) -> T) -> StateMaps<T> {
        StateMaps {
            matrix: self.matrix.convert(f),
            map: self.map.convert(f),
            f_at_zero: f(&self.f_at_zero),
            f_prime_at_zero: f(&self.f_prime_at_zero),
            f_transpose_at_zero: f(&self.f_transpose_at_zero),
            delta: f(&self.delta),
        }
    }
}

/// The lifted, chart-conjugated, aperiodic system: everything the kernel
/// expansion consumes.
#[derive(Debug, Clone)]
pub struct LiftedSystem<S: Scalar> {
    /// State labels (after any acceleration).
    pub chain: StochasticMatrix<S>,
    /// Stationary probability vector of `chain`.
    pub stationary: Vec<S>,
    /// Per-state maps, indexed like `chain`.
    pub states: Vec<StateMaps<S>>,
    /// Contraction factor: max over states of max(|f(-1)|, |f(1)|).
    pub rho: S,
    /// max over states of |f^T(0)|.
    pub transpose_bound: S,
    /// Period absorbed by accelerating the lift (1 when none).
    pub lift_period: u32,
    /// Extra divisor carried by inputs that are already a d-step block
    /// system of some original chain (1 when none).
    pub base_divisor: u32,
}

impl<S: Scalar> LiftedSystem<S> {
    /// Total factor by which the series value must be divided to recover
    /// the exponent of the original system.
    pub fn divisor(&self) -> u32 {
        self.lift_period * self.base_divisor
    }
}

/// Canonical frame for the arc swept from `e1` to `e2` in the direction
/// of increasing slope (wrapping through infinity when e1 >= e2 or an
/// endpoint is infinite). Finite endpoints get representatives [s; 1]
/// (second column sign-flipped for wrapped arcs); infinity is [1; 0].
pub fn default_chart<S: Scalar + SignScalar>(
    e1: Option<&S>,
    e2: Option<&S>,
) -> Result<Mat2<S>, ProjectiveError> {
    match (e1, e2) {
        (Some(a), Some(b)) => {
            let d = b.sub(a);
            match d.sign_strict()? {
                Sign::Zero => Err(ProjectiveError::DegenerateArc),
                // Plain interval (a, b).
                Sign::Pos => Ok(Mat2::new(
                    a.clone(),
                    b.clone(),
                    a.one_like(),
                    a.one_like(),
                )),
                // Wrapped through infinity: flip the second representative.
                Sign::Neg => Ok(Mat2::new(
                    a.clone(),
                    b.neg(),
                    a.one_like(),
                    a.one_like().neg(),
                )),
            }
        }
        // (a, inf): slopes above a.
        (Some(a), None) => Ok(Mat2::new(
            a.clone(),
            a.one_like(),
            a.one_like(),
            a.zero_like(),
        )),
        // (inf, b): slopes below b.
        (None, Some(b)) => Ok(Mat2::new(
            b.one_like().neg(),
            b.clone(),
            b.zero_like(),
            b.one_like(),
        )),
        (None, None) => Err(ProjectiveError::DegenerateArc),
    }
}

/// Verify that `chart` frames the same arc as `arc` (same endpoint pair
/// and same side), so user-supplied charts cannot silently change the
/// multicone.
pub fn chart_frames_arc<S: Scalar + SignScalar>(
    chart: &Mat2<S>,
    arc: &Arc<S>,
) -> Result<bool, ProjectiveError> {
    let candidate = Arc::from_frame(chart.clone())?;
    candidate.same_arc(arc)
}

/// Everything needed to re-assemble the lift over another scalar kind
/// (jets in the parameter, complexified values), reusing the routing,
/// signs, charts, class order, and acceleration structure fixed by the
/// validated real/rational instance.
#[derive(Debug, Clone)]
pub struct LiftRecipe<S: Scalar> {
    /// Resolved chart per (letter, component).
    pub charts: Vec<Vec<Mat2<S>>>,
    /// Class states in class order.
    pub class_states: Vec<BranchState>,
    /// Positivity sign per class state.
    pub class_signs: Vec<Sign>,
    /// Acceleration blocks: paths of class-state indices (singletons when
    /// the class chain is aperiodic).
    pub blocks: Vec<Vec<usize>>,
    pub block_labels: Vec<String>,
    pub block_support: Vec<Vec<bool>>,
    pub lift_period: u32,
    pub base_divisor: u32,
}

/// Build the lifted system over the chosen recurrent class.
///
/// For each state r in the class, the chart of the source component is
/// composed with the acting matrix and the inverse chart of the target
/// component; the validation sign makes the result strictly positive.
/// The contraction factor is evaluated at the interval endpoints only
/// (Moebius maps with pole outside [-1, 1] are monotone there); a
/// midpoint-grid sanity check lives in the tests. If the class chain has
/// period d > 1 the whole lift is accelerated and d recorded.
///
/// Also returns the recipe for re-assembling the same lift over other
/// scalar kinds.
pub fn build_lift<S: Scalar + SignScalar>(
    matrices: &[Mat2<S>],
    chain: &StochasticMatrix<S>,
    cone: &Multicone<S>,
    system: &BranchSystem<S>,
    class: &[usize],
    explicit_charts: Option<&ChartSet<S>>,
    base_divisor: u32,
) -> Result<(LiftedSystem<S>, LiftRecipe<S>), LiftError> {
    // Charts per (letter, component).
    let mut charts: Vec<Vec<Mat2<S>>> = Vec::with_capacity(cone.components.len());
    for (i, comps) in cone.components.iter().enumerate() {
        let mut row = Vec::with_capacity(comps.len());
        for (a, arc) in comps.iter().enumerate() {
            let chart = match explicit_charts.and_then(|c| c.get(i, a)) {
                Some(explicit) => {
                    if !chart_frames_arc(explicit, arc)? {
                        return Err(LiftError::ChartMismatch(format!(
                            "{}.{}",
                            chain.labels()[i],
                            a + 1
                        )));
                    }
                    explicit.clone()
                }
                None => arc.frame().clone(),
            };
            row.push(chart);
        }
        charts.push(row);
    }

    // Restrict the branch chain to the class.
    let labels: Vec<String> = class
        .iter()
        .map(|&r| system.chain.labels()[r].clone())
        .collect();
    let proto = chain.entry(0, 0).clone();
    let zero = proto.zero_like();
    let nc = class.len();
    let mut rows = vec![vec![zero.clone(); nc]; nc];
    let mut support = vec![vec![false; nc]; nc];
    for (ci, &r) in class.iter().enumerate() {
        for (cj, &rp) in class.iter().enumerate() {
            if system.chain.is_edge(r, rp) {
                rows[ci][cj] = system.chain.entry(r, rp).clone();
                support[ci][cj] = true;
            }
        }
    }
    let class_chain = StochasticMatrix::with_support(labels, rows, support)?;

    // Positive matrices per class state.
    let mut positives: Vec<Mat2<S>> = Vec::with_capacity(nc);
    for (ci, &r) in class.iter().enumerate() {
        let state: &BranchState = &system.states[r];
        let sign = system.signs[r];
        let source_chart = &charts[state.source.0][state.source.1];
        let target_chart = &charts[state.target.0][state.target.1];
        let conj = target_chart
            .inverse()?
            .mul_mat(&matrices[state.letter()])
            .mul_mat(source_chart);
        let signed = match sign {
            Sign::Pos => conj,
            Sign::Neg => conj.neg(),
            Sign::Zero => unreachable!("validation never records a zero sign"),
        };
        match signed.uniform_sign() {
            Ok(Sign::Pos) => {}
            _ => {
                return Err(LiftError::NotPositive(
                    class_chain.labels()[ci].clone(),
                ))
            }
        }
        positives.push(signed);
    }

    // Accelerate when the class chain is periodic.
    let accelerated = accelerate(&class_chain, &positives)?;
    let lift_period = accelerated.period;
    let final_chain = accelerated.chain;
    let final_matrices = accelerated.matrices;

    let recipe = LiftRecipe {
        charts,
        class_states: class.iter().map(|&r| system.states[r]).collect(),
        class_signs: class.iter().map(|&r| system.signs[r]).collect(),
        blocks: accelerated.blocks,
        block_labels: final_chain.labels().to_vec(),
        block_support: final_chain.support().to_vec(),
        lift_period,
        base_divisor,
    };

    // Re-check positivity after taking block products (products of
    // positive matrices stay positive; this guards indeterminate floats).
    let mut states = Vec::with_capacity(final_matrices.len());
    for (k, m) in final_matrices.into_iter().enumerate() {
        if m.uniform_sign().ok() != Some(Sign::Pos) {
            return Err(LiftError::NotPositive(final_chain.labels()[k].clone()));
        }
        states.push(StateMaps::from_positive_matrix(m));
    }

    let stationary = final_chain.stationary(None)?;

    let lift = finish_lift(final_chain, stationary, states, lift_period, base_divisor)?;
    Ok((lift, recipe))
}

/// Re-assemble the lift over another scalar kind from a recipe: the
/// letter matrices and base-chain entries are supplied over the new kind
/// (typically evaluated from an expression family), charts are converted
/// from the validated instance, and the contraction data is injected
/// from the validated instance as well (it only serves as a prototype
/// and for bookkeeping; bounds are computed elsewhere).
pub fn rebuild_lift<S: Scalar, T: Scalar>(
    recipe: &LiftRecipe<S>,
    letter_matrices: &[Mat2<T>],
    chain_entry: &impl Fn(usize, usize) -> T,
    convert: &impl Fn(&S) -> T,
    rho: T,
    transpose_bound: T,
) -> Result<LiftedSystem<T>, LiftError> {
    let charts: Vec<Vec<Mat2<T>>> = recipe
        .charts
        .iter()
        .map(|row| row.iter().map(|m| m.convert(convert)).collect())
        .collect();

    // Positive matrices per class state, over T.
    let mut class_positives: Vec<Mat2<T>> = Vec::with_capacity(recipe.class_states.len());
    for (state, sign) in recipe.class_states.iter().zip(&recipe.class_signs) {
        let source_chart = &charts[state.source.0][state.source.1];
        let target_chart = &charts[state.target.0][state.target.1];
        let conj = target_chart
            .inverse()?
            .mul_mat(&letter_matrices[state.letter()])
            .mul_mat(source_chart);
        class_positives.push(match sign {
            Sign::Pos => conj,
            Sign::Neg => conj.neg(),
            Sign::Zero => unreachable!("validation never records a zero sign"),
        });
    }

    // Block products and block chain entries.
    let states: Vec<StateMaps<T>> = recipe
        .blocks
        .iter()
        .map(|block| {
            let mut acc = class_positives[block[0]].clone();
            for &idx in &block[1..] {
                acc = class_positives[idx].mul_mat(&acc);
            }
            StateMaps::from_positive_matrix(acc)
        })
        .collect();

    let nb = recipe.blocks.len();
    let zero = rho.zero_like();
    let mut rows = vec![vec![zero.clone(); nb]; nb];
    for bi in 0..nb {
        for bj in 0..nb {
            if !recipe.block_support[bi][bj] {
                continue;
            }
            let b = &recipe.blocks[bi];
            let c = &recipe.blocks[bj];
            let letter_of = |class_idx: usize| recipe.class_states[class_idx].letter();
            let mut prob = chain_entry(letter_of(*b.last().unwrap()), letter_of(c[0]));
            for w in c.windows(2) {
                prob = prob.mul(&chain_entry(letter_of(w[0]), letter_of(w[1])));
            }
            rows[bi][bj] = prob;
        }
    }
    let chain = StochasticMatrix::from_parts_unchecked(
        recipe.block_labels.clone(),
        rows,
        recipe.block_support.clone(),
    );
    let stationary = chain
        .stationary(None)
        .map_err(LiftError::Markov)?;

    Ok(LiftedSystem {
        chain,
        stationary,
        states,
        rho,
        transpose_bound,
        lift_period: recipe.lift_period,
        base_divisor: recipe.base_divisor,
    })
}

/// Compute rho and the transpose bound and assemble the system,
/// enforcing the strict-contraction invariants.
fn finish_lift<S: Scalar + SignScalar>(
    chain: StochasticMatrix<S>,
    stationary: Vec<S>,
    states: Vec<StateMaps<S>>,
    lift_period: u32,
    base_divisor: u32,
) -> Result<LiftedSystem<S>, LiftError> {
    let proto = chain.entry(0, 0).clone();
    let one = proto.one_like();
    let mut rho: Option<S> = None;
    let mut transpose_bound: Option<S> = None;
    for (k, st) in states.iter().enumerate() {
        let name = chain.labels()[k].clone();
        // delta > 0 for positive matrices.
        if st.delta.sign_strict().ok() != Some(Sign::Pos) {
            return Err(LiftError::NotPositive(name));
        }
        for x in [one.neg(), one.clone()] {
            let v = st
                .map
                .eval(&x)
                .map_err(LiftError::Projective)?;
            let mag = abs_of(&v);
            if !less_than(&mag, &one) {
                return Err(LiftError::NoContraction(
                    format!("{:+}", if x.is_zero() { 0 } else { 1 }),
                    name,
                ));
            }
            rho = Some(match rho {
                None => mag,
                Some(r) => max_of(&r, &mag),
            });
        }
        let t = abs_of(&st.f_transpose_at_zero);
        if !less_than(&t, &one) {
            return Err(LiftError::TransposeNotContracting(name));
        }
        transpose_bound = Some(match transpose_bound {
            None => t,
            Some(d) => max_of(&d, &t),
        });
    }
    Ok(LiftedSystem {
        chain,
        stationary,
        states,
        rho: rho.expect("nonempty class"),
        transpose_bound: transpose_bound.expect("nonempty class"),
        lift_period,
        base_divisor,
    })
}

fn abs_of<S: Scalar + SignScalar>(x: &S) -> S {
    match x.sign_strict() {
        Ok(Sign::Neg) => x.neg(),
        // Indeterminate values are within tolerance of zero; either sign
        // works for a magnitude only compared against 1.
        _ => x.clone(),
    }
}

fn max_of<S: Scalar + SignScalar>(a: &S, b: &S) -> S {
    match b.sub(a).sign_strict() {
        Ok(Sign::Pos) => b.clone(),
        _ => a.clone(),
    }
}

fn less_than<S: Scalar + SignScalar>(a: &S, b: &S) -> bool {
    matches!(b.sub(a).sign_strict(), Ok(Sign::Pos))
}

/// Explicit charts per (letter, component).
#[derive(Debug, Clone, Default)]
pub struct ChartSet<S: Scalar> {
    entries: Vec<((usize, usize), Mat2<S>)>,
}

impl<S: Scalar> ChartSet<S> {
    pub fn new() -> Self {
        ChartSet {
            entries: Vec::new(),
        }
    }
    pub fn insert(&mut self, letter: usize, component: usize, chart: Mat2<S>) {
        self.entries.push(((letter, component), chart));
    }
    pub fn get(&self, letter: usize, component: usize) -> Option<&Mat2<S>> {
        self.entries
            .iter()
            .find(|(k, _)| *k == (letter, component))
            .map(|(_, m)| m)
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<S: Scalar> LiftedSystem<S> {
    /// Convert every scalar (used to move from exact rational validation
    /// into the analytic stage at a chosen precision).
    pub fn convert<T: Scalar + SignScalar>(
        &self,
        f: &impl Fn(&S) -> T,
    ) -> Result<LiftedSystem<T>, MarkovError> {
        Ok(LiftedSystem {
            chain: self.chain.convert(f)?,
            stationary: self.stationary.iter().map(f).collect(),
            states: self.states.iter().map(|s| s.convert(f)).collect(),
            rho: f(&self.rho),
            transpose_bound: f(&self.transpose_bound),
            lift_period: self.lift_period,
            base_divisor: self.base_divisor,
        })
    }
}

impl LiftedSystem<crate::numeric::Rational> {
    /// The standard bridge: exact lift to a floating lift at precision p.
    pub fn to_real(&self, prec: Precision) -> LiftedSystem<crate::numeric::Real> {
        self.convert(&|q| crate::numeric::Real::from_rational_prec(q, prec))
            .expect("conversion preserves validity")
    }

    /// Exact lift to an outward-rounded interval lift at precision p.
    pub fn to_interval(&self, prec: Precision) -> LiftedSystem<crate::numeric::Interval> {
        self.convert(&|q| crate::numeric::Interval::from_rational_prec(q, prec))
            .expect("conversion preserves validity")
    }
}
