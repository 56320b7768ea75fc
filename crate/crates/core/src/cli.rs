//! Command implementations behind the `lyapcert` binary: validation
//! reports, certified values, Taylor coefficients, simulation estimates,
//! and base-chain reduction, all emitted as machine-parseable JSON.
//!
//! Exit codes: 0 success, 1 validation failure, 2 numeric indeterminacy,
//! 3 I/O or parse error.

use crate::certify::{
    build_validated_lift, compute_lambda, error_bound, error_constants, monte_carlo_lambda,
    Certificate, CertifyError, ComputeOptions, SystemData,
};
use crate::derivatives::{
    check_omega, family_lift_at, taylor, DerivativeError, OmegaData, Provenance,
};
use crate::lift::LiftError;
use crate::markov::MarkovError;
use crate::multicone::MulticoneError;
use crate::numeric::{NumericError, Precision, Real};
use crate::systemfile::{
    real_to_string, reduce_base_file, FileError, LoadedSystem, OmegaConstantsSection, SystemFile,
};
use serde_json::{json, Value};
use std::path::Path;

/// Outcome of a command: the JSON payload or a failure with the exit
/// code it maps to.
pub type CmdResult = Result<Value, CmdError>;

#[derive(Debug, thiserror::Error)]
pub enum CmdError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Indeterminate(String),
    #[error("{0}")]
    Io(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Validation(_) => 1,
            CmdError::Indeterminate(_) => 2,
            CmdError::Io(_) => 3,
        }
    }
}

impl From<FileError> for CmdError {
    fn from(e: FileError) -> Self {
        CmdError::Io(e.to_string())
    }
}

impl From<CertifyError> for CmdError {
    fn from(e: CertifyError) -> Self {
        match &e {
            CertifyError::EpsilonBelowFloor { .. } => CmdError::Indeterminate(e.to_string()),
            CertifyError::Multicone(m) => from_multicone(m),
            CertifyError::Lift(l) => from_lift(l),
            CertifyError::Numeric(NumericError::IndeterminateSign) => {
                CmdError::Indeterminate(e.to_string())
            }
            _ => CmdError::Validation(e.to_string()),
        }
    }
}

fn from_multicone(e: &MulticoneError) -> CmdError {
    match e {
        MulticoneError::Indeterminate { .. } => CmdError::Indeterminate(e.to_string()),
        _ => CmdError::Validation(e.to_string()),
    }
}

fn from_lift(e: &LiftError) -> CmdError {
    CmdError::Validation(e.to_string())
}

impl From<DerivativeError> for CmdError {
    fn from(e: DerivativeError) -> Self {
        match e {
            DerivativeError::Certify(c) => c.into(),
            DerivativeError::SummabilityViolated(_) | DerivativeError::OmegaViolated(_) => {
                CmdError::Validation(e.to_string())
            }
            DerivativeError::Family(f) => CmdError::Io(f.to_string()),
            _ => CmdError::Validation(e.to_string()),
        }
    }
}

impl From<MarkovError> for CmdError {
    fn from(e: MarkovError) -> Self {
        CmdError::Validation(e.to_string())
    }
}

fn certificate_json(cert: &Certificate) -> Value {
    json!({
        "value": real_to_string(&cert.value),
        "epsilon_target": real_to_string(&cert.epsilon_target),
        "bound": real_to_string(&cert.bound),
        "rounding_allowance": real_to_string(&cert.rounding_allowance),
        "n": cert.n,
        "m": cert.m,
        "constants": {
            "tail_constant": real_to_string(&cert.tail_constant),
            "rho": real_to_string(&cert.rho),
            "transpose_bound": real_to_string(&cert.transpose_bound),
            "k_rho": real_to_string(&cert.k_rho),
            "k_rho_ceiling": real_to_string(&cert.k_rho_ceiling),
            "rho_m": real_to_string(&cert.rho_m),
        },
        "divisor": cert.divisor,
        "mode": cert.mode.name(),
        "precision_bits": cert.precision,
        "op_count": cert.op_count,
    })
}

/// Re-derive the truncation bound from the constants stored in a
/// certificate JSON; used by round-trip verification.
pub fn bound_from_certificate_json(v: &Value, prec: Precision) -> Option<Real> {
    let get = |k: &str| -> Option<Real> {
        crate::numeric::parse_real(v["constants"][k].as_str()?, prec).ok()
    };
    let consts = crate::certify::ErrorConstants {
        rho: get("rho")?,
        transpose_bound: get("transpose_bound")?,
        tail_constant: get("tail_constant")?,
        k_rho: get("k_rho")?,
        k_rho_ceiling: get("k_rho_ceiling")?,
        divisor: v["divisor"].as_u64()? as u32,
    };
    let n = v["n"].as_u64()? as usize;
    let m = v["m"].as_u64()? as usize;
    Some(error_bound(&consts, n, m))
}

/// Validation report: multicone check, branch table, recurrent classes,
/// contraction data, and acceleration summary.
pub fn cmd_check(path: &Path) -> CmdResult {
    let file = SystemFile::from_path(path)?;
    let prec = file.precision();
    let class_choice = file.options.as_ref().and_then(|o| o.class_choice);

    // Shared across the exact/floating/family routes via a closure over
    // the validation scalar kind.
    fn report<S: crate::certify::LiftScalar + crate::family::ExprScalar>(
        data: &SystemData<S>,
        class_choice: Option<usize>,
        divisor: u32,
        rho_display: impl Fn(&S) -> String,
    ) -> CmdResult {
        let table = crate::multicone::validate_multicone(&data.matrices, &data.chain, &data.cone)
            .map_err(|e| from_multicone(&e))?;
        let system = crate::multicone::build_branch_system(&data.chain, &table)
            .map_err(|e| from_multicone(&e))?;
        let labels = data.chain.labels();
        let routing: Vec<Value> = table
            .edges
            .iter()
            .map(|e| {
                json!({
                    "from": labels[e.from_letter],
                    "component": e.from_component + 1,
                    "letter": labels[e.to_letter],
                    "to_component": e.to_component + 1,
                    "sign": match e.sign { crate::numeric::Sign::Pos => 1, _ => -1 },
                })
            })
            .collect();
        let (lift, _) = crate::lift::build_lift(
            &data.matrices,
            &data.chain,
            &data.cone,
            &system,
            &system
                .select_class(class_choice)
                .map_err(|e| from_multicone(&e))?
                .to_vec(),
            data.charts.as_ref(),
            divisor,
        )
        .map_err(|e| from_lift(&e))?;
        Ok(json!({
            "branch_states": system.states.len(),
            "recurrent_classes": system.recurrent_classes.iter().map(|c| c.len()).collect::<Vec<_>>(),
            "routing": routing,
            "rho": rho_display(&lift.rho),
            "transpose_bound": rho_display(&lift.transpose_bound),
            "lift_period": lift.lift_period,
            "accelerated": lift.lift_period > 1,
            "divisor": lift.divisor(),
            "states_after_acceleration": lift.chain.size(),
        }))
    }

    match file.load(prec)? {
        LoadedSystem::Exact(data) => report(&data, class_choice, file.divisor(), |q| q.to_string()),
        LoadedSystem::Floating(data) => {
            report(&data, class_choice, file.divisor(), |r| real_to_string(r))
        }
        LoadedSystem::Family { family, t0 } => {
            let data = family.instantiate(&t0).map_err(CmdError::from)?;
            report(&data, class_choice, file.divisor(), |r| real_to_string(r))
        }
    }
}

/// Certified value of the exponent.
pub fn cmd_lyapunov(
    path: &Path,
    epsilon: Option<&str>,
    precision: Option<u32>,
    mode: Option<&str>,
) -> CmdResult {
    let mut file = SystemFile::from_path(path)?;
    if let Some(p) = precision {
        file.options.get_or_insert_with(Default::default).precision_bits = Some(p);
    }
    if let Some(e) = epsilon {
        file.options.get_or_insert_with(Default::default).epsilon = Some(e.to_string());
    }
    if let Some(m) = mode {
        file.options.get_or_insert_with(Default::default).mode = Some(m.to_string());
    }
    let prec = file.precision();
    let eps = file.epsilon(prec)?;
    let mode = file.mode()?;
    let class_choice = file.options.as_ref().and_then(|o| o.class_choice);
    let opts = ComputeOptions {
        precision: prec,
        epsilon: eps,
        mode,
        class_choice,
        base_divisor: file.divisor(),
    };

    let cert = match file.load(prec)? {
        LoadedSystem::Exact(data) => compute_lambda(&data, &opts)?,
        LoadedSystem::Floating(data) => compute_lambda(&data, &opts)?,
        LoadedSystem::Family { family, t0 } => {
            let data = family.instantiate(&t0).map_err(CmdError::from)?;
            compute_lambda(&data, &opts)?
        }
    };
    Ok(certificate_json(&cert))
}

/// Certified Taylor coefficients along the family.
pub fn cmd_taylor(
    path: &Path,
    order: Option<usize>,
    epsilon: Option<&str>,
    radius: Option<&str>,
    rho_bar: Option<&str>,
    estimate: bool,
    precision: Option<u32>,
) -> CmdResult {
    let file = SystemFile::from_path(path)?;
    let prec = precision.unwrap_or_else(|| file.precision());
    let opts = file.options.clone().unwrap_or_default();
    let order = order.or(opts.order).unwrap_or(0);
    let eps = match epsilon.map(str::to_owned).or(opts.epsilon.clone()) {
        Some(s) => SystemFile::option_real("epsilon", &s, prec)?,
        None => Real::with_val(prec, 1e-10),
    };
    let (family, t0) = match file.load(prec)? {
        LoadedSystem::Family { family, t0 } => (family, t0),
        _ => {
            // A constant system is the constant family at t0 = 0.
            (file.family()?, Real::new(prec))
        }
    };
    let class_choice = opts.class_choice;
    let base = family_lift_at(&family, &t0, class_choice).map_err(CmdError::from)?;

    let radius_text = radius
        .map(str::to_owned)
        .or(opts.disk_radius.clone())
        .ok_or_else(|| {
            CmdError::Io("taylor needs a disk radius (--radius or options.disk_radius)".into())
        })?;
    let radius = SystemFile::option_real("disk_radius", &radius_text, prec)?;
    let rho_bar_text = rho_bar.map(str::to_owned).or(opts.rho_bar.clone());

    // Disk constants: user-supplied (rigorous given their certification)
    // or boundary-estimated on request.
    let omega_section = opts.omega_constants.clone().unwrap_or_default();
    let has_user_constants = omega_section.q_bar.is_some()
        && omega_section.d_bar.is_some()
        && omega_section.m_ell.is_some()
        && omega_section.m_sigma_pi.is_some()
        && omega_section.m_pi_min.is_some()
        && rho_bar_text.is_some();

    let (omega, check_report) = if has_user_constants {
        let g = |name: &str, v: &Option<String>| {
            SystemFile::option_real(name, v.as_ref().unwrap(), prec)
        };
        let omega = OmegaData {
            t0: t0.clone(),
            radius: radius.clone(),
            rho_bar: SystemFile::option_real("rho_bar", rho_bar_text.as_ref().unwrap(), prec)?,
            q_bar: g("q_bar", &omega_section.q_bar)?,
            d_bar: g("d_bar", &omega_section.d_bar)?,
            m_ell: g("m_ell", &omega_section.m_ell)?,
            m_sigma_pi: g("m_sigma_pi", &omega_section.m_sigma_pi)?,
            m_pi_min: g("m_pi_min", &omega_section.m_pi_min)?,
            provenance: Provenance::UserCertified,
        };
        (omega, None)
    } else if estimate {
        let rho_bar_val = match &rho_bar_text {
            Some(s) => SystemFile::option_real("rho_bar", s, prec)?,
            None => {
                // Halfway between the base contraction factor and 1.
                let rho = Real::with_val(prec, &base.lift.rho);
                Real::with_val(prec, (Real::with_val(prec, 1) + rho) / 2u32)
            }
        };
        let report = check_omega(&family, &base, &t0, &radius, &rho_bar_val, prec)
            .map_err(CmdError::from)?;
        if !report.all_ok() {
            return Err(CmdError::Validation(format!(
                "disk conditions fail at radius {} (contraction {}, positivity {}, stationary {}, summability {})",
                radius.to_f64(),
                report.contraction_ok,
                report.positive_real_ok,
                report.stationary_ok,
                report.summability_ok,
            )));
        }
        let omega = report.estimated.clone();
        (omega, Some(report))
    } else {
        return Err(CmdError::Io(
            "no disk constants: supply options.omega_constants (with rho_bar) or pass --estimate"
                .into(),
        ));
    };

    let result = taylor(&family, &t0, order, &eps, &omega, prec, class_choice)
        .map_err(CmdError::from)?;

    let mut coeffs = Vec::new();
    for (q, (a, b)) in result
        .coefficients
        .iter()
        .zip(&result.bounds)
        .enumerate()
    {
        coeffs.push(json!({
            "order": q,
            "coefficient": real_to_string(a),
            "bound": real_to_string(b),
            "params": {"n": result.per_order_params[q].0, "m": result.per_order_params[q].1},
        }));
    }
    Ok(json!({
        "t0": real_to_string(&t0),
        "order": order,
        "epsilon_per_coefficient": real_to_string(&eps),
        "coefficients": coeffs,
        "run_params": {"n": result.run_params.0, "m": result.run_params.1},
        "divisor": result.divisor,
        "precision_bits": prec,
        "omega": {
            "radius": real_to_string(&result.omega.radius),
            "rho_bar": real_to_string(&result.omega.rho_bar),
            "q_bar": real_to_string(&result.omega.q_bar),
            "d_bar": real_to_string(&result.omega.d_bar),
            "m_ell": real_to_string(&result.omega.m_ell),
            "m_sigma_pi": real_to_string(&result.omega.m_sigma_pi),
            "m_pi_min": real_to_string(&result.omega.m_pi_min),
            "provenance": result.omega.provenance.name(),
        },
        "certification": if result.omega.provenance == Provenance::UserCertified {
            "rigorous-given-user-constants"
        } else {
            "conditionally-rigorous (boundary-estimated constants)"
        },
        "omega_check": check_report.map(|r| json!({
            "samples": r.samples,
            "max_abs_f": real_to_string(&r.max_abs_f),
            "min_re_denominator": real_to_string(&r.min_re_denominator),
        })),
    }))
}

/// Monte-Carlo sanity estimate.
pub fn cmd_simulate(path: &Path, steps: u64, trials: u64, seed: u64) -> CmdResult {
    let file = SystemFile::from_path(path)?;
    let prec = file.precision();
    let est = match file.load(prec)? {
        LoadedSystem::Exact(data) => monte_carlo_lambda(&data, steps, trials, seed)?,
        LoadedSystem::Floating(data) => monte_carlo_lambda(&data, steps, trials, seed)?,
        LoadedSystem::Family { family, t0 } => {
            let data = family.instantiate(&t0).map_err(CmdError::from)?;
            monte_carlo_lambda(&data, steps, trials, seed)?
        }
    };
    // The estimate is for the raw system; report the divided value too.
    let divisor = file.divisor() as f64;
    Ok(json!({
        "mean": est.mean / divisor,
        "stderr": est.stderr / divisor,
        "raw_mean": est.mean,
        "steps": est.steps,
        "trials": est.trials,
        "seed": est.seed,
        "divisor": file.divisor(),
    }))
}

/// Write the d-step block reduction of the file.
pub fn cmd_reduce_base(path: &Path, output: Option<&Path>) -> CmdResult {
    let file = SystemFile::from_path(path)?;
    // A reducible chain is a validation failure, not an I/O problem.
    let reduced = reduce_base_file(&file).map_err(|e| match &e {
        FileError::BadOption { name, reason } if name == "transition" => {
            CmdError::Validation(reason.clone())
        }
        _ => CmdError::from(e),
    })?;
    let text = reduced.to_json_string();
    if let Some(out) = output {
        std::fs::write(out, &text).map_err(|e| CmdError::Io(e.to_string()))?;
    }
    Ok(serde_json::from_str(&text).expect("round-trip"))
}

/// The constants/report of the validated lift without running the
/// series; used by tests and the Python bindings.
pub fn lift_constants_json(path: &Path) -> CmdResult {
    let file = SystemFile::from_path(path)?;
    let prec = file.precision();
    match file.load(prec)? {
        LoadedSystem::Exact(data) => {
            let (lift, _) = build_validated_lift(&data, None, file.divisor())?;
            let consts = error_constants(&lift.to_real(prec));
            Ok(json!({
                "rho": lift.rho.to_string(),
                "tail_constant": real_to_string(&consts.tail_constant),
            }))
        }
        _ => Err(CmdError::Io("exact systems only".into())),
    }
}

/// Re-export for binary use: parse an OmegaConstantsSection from CLI
/// key=value pairs is not supported; files carry them.
pub fn omega_section_is_complete(s: &OmegaConstantsSection) -> bool {
    s.q_bar.is_some()
        && s.d_bar.is_some()
        && s.m_ell.is_some()
        && s.m_sigma_pi.is_some()
        && s.m_pi_min.is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(name: &str, text: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("lyapcert-cli-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn check_and_lyapunov_on_trivial_file() {
        let path = write_temp(
            "diag.json",
            r#"{
                "alphabet": ["a"],
                "matrices": {"a": [["2", "0"], ["0", "1/2"]]},
                "transition": [["1"]],
                "multicone": {"a": [["1", "-1"]]},
                "options": {"precision_bits": 128, "epsilon": "1e-25"}
            }"#,
        );
        let report = cmd_check(&path).unwrap();
        assert_eq!(report["branch_states"], 1);
        assert_eq!(report["recurrent_classes"][0], 1);

        let cert = cmd_lyapunov(&path, None, None, None).unwrap();
        let value: f64 = cert["value"].as_str().unwrap().parse::<f64>().unwrap_or_else(|_| {
            crate::numeric::parse_real(cert["value"].as_str().unwrap(), 64)
                .unwrap()
                .to_f64()
        });
        assert!((value - 2f64.ln()).abs() < 1e-12);

        // Round trip: the stored bound re-derives from the stored
        // constants.
        let re = bound_from_certificate_json(&cert, 128).unwrap();
        let stored = crate::numeric::parse_real(cert["bound"].as_str().unwrap(), 128).unwrap();
        let diff = Real::with_val(128, &re - &stored).abs();
        assert!(diff < Real::with_val(128, Real::i_exp(1, 24 - 128)));
    }

    #[test]
    fn broken_multicone_maps_to_validation_error() {
        let path = write_temp(
            "broken.json",
            r#"{
                "alphabet": ["a"],
                "matrices": {"a": [["0", "1"], ["1", "0"]]},
                "transition": [["1"]],
                "multicone": {"a": [["0", "inf"]]}
            }"#,
        );
        let err = cmd_check(&path).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn parse_error_maps_to_io_exit() {
        let path = write_temp("bad.json", "{ not json");
        let err = cmd_check(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn check_reports_acceleration_on_periodic_class() {
        let path = write_temp(
            "period2.json",
            r#"{
                "alphabet": ["a", "b"],
                "matrices": {
                    "a": [["2", "0"], ["0", "1/2"]],
                    "b": [["3", "0"], ["0", "1/3"]]
                },
                "transition": [["0", "1"], ["1", "0"]],
                "multicone": {"a": [["1", "-1"]], "b": [["1", "-1"]]}
            }"#,
        );
        let report = cmd_check(&path).unwrap();
        assert_eq!(report["accelerated"], true);
        assert_eq!(report["lift_period"], 2);
        assert_eq!(report["divisor"], 2);
    }

    #[test]
    fn double_precision_run_meets_loose_target() {
        let dir = std::env::temp_dir().join("lyapcert-cli-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let src = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("fixtures/example1.json");
        let path = dir.join("example1-copy.json");
        std::fs::copy(src, &path).unwrap();
        let cert = cmd_lyapunov(&path, Some("1e-6"), Some(53), None).unwrap();
        let value = crate::numeric::parse_real(cert["value"].as_str().unwrap(), 64)
            .unwrap()
            .to_f64();
        assert!((value - 0.8852725442368283).abs() < 1e-6);
        assert_eq!(cert["precision_bits"], 53);
    }

    #[test]
    fn taylor_without_disk_constants_is_instructive() {
        let path = write_temp(
            "family-noconst.json",
            r#"{
                "alphabet": ["a"],
                "matrices": {"a": [["2 + (t - 3)", "1"], ["1", "2"]]},
                "transition": [["1"]],
                "multicone": {"a": [["0", "inf"]]},
                "parameter": {"t0": "3"}
            }"#,
        );
        let err = cmd_taylor(&path, Some(1), None, Some("1/5"), None, false, None).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("omega_constants"));
    }

    #[test]
    fn indeterminate_sign_maps_to_exit_two() {
        // A floating entry far below the sign tolerance makes the
        // containment test indeterminate rather than silently decided
        // (the sqrt forces the floating route; rationals stay exact).
        let path = write_temp(
            "indeterminate.json",
            r#"{
                "alphabet": ["a"],
                "matrices": {"a": [["1", "sqrt(2)*1e-20"], ["1e-20", "1"]]},
                "transition": [["1"]],
                "multicone": {"a": [["0", "inf"]]},
                "options": {"precision_bits": 64}
            }"#,
        );
        let err = cmd_check(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn reduce_base_rejects_reducible_chain() {
        let path = write_temp(
            "reducible.json",
            r#"{
                "alphabet": ["a", "b"],
                "matrices": {
                    "a": [["2", "0"], ["0", "1/2"]],
                    "b": [["3", "0"], ["0", "1/3"]]
                },
                "transition": [["1", "0"], ["1/2", "1/2"]],
                "multicone": {}
            }"#,
        );
        let err = cmd_reduce_base(&path, None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn simulate_is_reproducible() {
        let path = write_temp(
            "diag2.json",
            r#"{
                "alphabet": ["a"],
                "matrices": {"a": [["2", "0"], ["0", "1/2"]]},
                "transition": [["1"]],
                "multicone": {"a": [["1", "-1"]]}
            }"#,
        );
        let a = cmd_simulate(&path, 1000, 4, 7).unwrap();
        let b = cmd_simulate(&path, 1000, 4, 7).unwrap();
        assert_eq!(a["mean"], b["mean"]);
        assert_eq!(a["stderr"], b["stderr"]);
    }
}
