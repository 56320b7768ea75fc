//! Error constants, the a-posteriori truncation bound, parameter
//! selection for a target accuracy, and the top-level certified pipeline,
//! plus a Monte-Carlo cross-check of the certified value.

use crate::kernel::iterate_partial_sums;
use crate::lift::{build_lift, ChartSet, LiftError, LiftedSystem};
use crate::markov::{MarkovError, StochasticMatrix};
use crate::multicone::{build_branch_system, validate_multicone, Multicone, MulticoneError};
use crate::numeric::{
    AnalyticScalar, Interval, NumericError, Precision, Rational, Real, Scalar, Sign, SignScalar,
};
use crate::projective::Mat2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum CertifyError {
    #[error(transparent)]
    Multicone(#[from] MulticoneError),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("target accuracy {eps} is below the rounding floor 2^(24-p) for precision {prec}; increase the precision")]
    EpsilonBelowFloor { eps: String, prec: Precision },
    #[error("invalid option: {0}")]
    BadOption(String),
}

/// Scalars the certified engine runs on: they expose a midpoint and an
/// enclosure radius so float mode (radius 0) and interval mode share one
/// code path.
pub trait EngineScalar: AnalyticScalar + SignScalar {
    fn midpoint_real(&self, prec: Precision) -> Real;
    fn radius_real(&self, prec: Precision) -> Real;
    fn mode_name() -> &'static str;
}

impl EngineScalar for Real {
    fn midpoint_real(&self, prec: Precision) -> Real {
        Real::with_val(prec, self)
    }
    fn radius_real(&self, prec: Precision) -> Real {
        Real::new(prec)
    }
    fn mode_name() -> &'static str {
        "float"
    }
}

impl EngineScalar for Interval {
    fn midpoint_real(&self, prec: Precision) -> Real {
        Real::with_val(prec, self.midpoint())
    }
    fn radius_real(&self, prec: Precision) -> Real {
        Real::with_val(prec, self.radius_upper())
    }
    fn mode_name() -> &'static str {
        "interval"
    }
}

/// The constants entering the truncation bound, kept in the engine
/// scalar so the interval mode stays rigorous.
#[derive(Debug, Clone)]
pub struct ErrorConstants<S: Scalar> {
    /// Contraction factor rho.
    pub rho: S,
    /// D = max |f^T(0)|.
    pub transpose_bound: S,
    /// Tail constant E_C.
    pub tail_constant: S,
    /// K(rho): quadrature value in float mode, closed-form ceiling in
    /// interval mode.
    pub k_rho: S,
    /// The closed-form ceiling for K(rho), always available.
    pub k_rho_ceiling: S,
    /// Total divisor d (lift period times base divisor).
    pub divisor: u32,
}

/// E_C = 1/(1-rho) * max_r |y_r| / (1 + sqrt(1 - y_r^2))
///       * sum_r pi_r * 2 |artanh(f_r(0))|.
pub fn tail_constant<S: AnalyticScalar + SignScalar>(system: &LiftedSystem<S>) -> S {
    let one = system.rho.one_like();
    let mut factor: Option<S> = None;
    for st in &system.states {
        let y = abs_s(&st.f_transpose_at_zero);
        let denom = one.add(&one.sub(&y.mul(&y)).sqrt());
        let val = y.div(&denom);
        factor = Some(match factor {
            None => val,
            Some(f) => max_s(&f, &val),
        });
    }
    let mut distance_sum = system.rho.zero_like();
    for (st, pi) in system.states.iter().zip(&system.stationary) {
        let d = abs_s(&st.f_at_zero.atanh()).mul_small(2, 1);
        distance_sum.acc_mul(pi, &d);
    }
    one.div(&one.sub(&system.rho))
        .mul(&factor.expect("nonempty"))
        .mul(&distance_sum)
}

/// K(rho) = (1/2pi) * integral over the circle of radius rho of
/// |dz| / |1 - z|, by the trapezoid rule on the periodic integrand with
/// node doubling until two resolutions agree to the requested relative
/// error (the integrand is analytic and periodic, so convergence is
/// geometric). Returns the higher-resolution value inflated by the last
/// observed doubling difference.
pub fn k_rho(rho: &Real, rel_tol_exp: i32) -> Real {
    let prec = rho.prec() + 16;
    let two_pi = Real::with_val(prec, rug::float::Constant::Pi) * 2u32;
    let integrand_mean = |n: usize| -> Real {
        let mut acc = Real::new(prec);
        for k in 0..n {
            let theta = Real::with_val(prec, &two_pi) * Real::with_val(prec, k as u32)
                / Real::with_val(prec, n as u32);
            let c = theta.cos();
            // |1 - rho e^{i theta}|^2 = 1 - 2 rho cos + rho^2.
            let sq = Real::with_val(prec, 1)
                - Real::with_val(prec, 2 * rho.clone() * &c)
                + Real::with_val(prec, rho * rho);
            acc += Real::with_val(prec, rho / sq.sqrt());
        }
        acc / Real::with_val(prec, n as u32)
    };
    let tol = Real::with_val(prec, Real::i_exp(1, rel_tol_exp));
    let mut n = 64usize;
    let mut prev = integrand_mean(n);
    loop {
        n *= 2;
        let cur = integrand_mean(n);
        let diff = Real::with_val(prec, &cur - &prev).abs();
        if diff <= Real::with_val(prec, &tol * &cur) || n >= 1 << 22 {
            // Inflate by the last doubling difference as a practical
            // safety margin.
            return Real::with_val(rho.prec(), cur + diff);
        }
        prev = cur;
    }
}

/// Closed-form ceiling for K(rho):
/// min(rho / sqrt(1 - rho^2), 2 rho / (pi (1+rho)) (pi/2 + log((1+rho)/(1-rho)))).
pub fn k_rho_ceiling<S: AnalyticScalar + SignScalar>(rho: &S) -> S {
    let one = rho.one_like();
    let a = rho.div(&one.sub(&rho.mul(rho)).sqrt());
    let pi = pi_like(rho);
    let half_pi = pi.mul_small(1, 2);
    let log_term = one.add(rho).div(&one.sub(rho)).ln();
    let b = rho
        .mul_small(2, 1)
        .div(&pi.mul(&one.add(rho)))
        .mul(&half_pi.add(&log_term));
    min_s(&a, &b)
}

fn pi_like<S: AnalyticScalar>(proto: &S) -> S {
    // pi = 4 atanh(tan(pi/8))... avoid trig: use atanh-based identity
    // pi = 16 atanh(1/5) - 4 atanh(1/239) (Machin, valid in any kind
    // supporting atanh via the log formula used here: atanh on reals).
    let one = proto.one_like();
    let a = one.mul_small(1, 5).atanh().mul_small(16, 1);
    let b = one.mul_small(1, 239).atanh().mul_small(4, 1);
    a.sub(&b)
}

fn abs_s<S: Scalar + SignScalar>(x: &S) -> S {
    match x.sign_strict() {
        Ok(Sign::Neg) => x.neg(),
        _ => x.clone(),
    }
}

fn max_s<S: Scalar + SignScalar>(a: &S, b: &S) -> S {
    match b.sub(a).sign_strict() {
        Ok(Sign::Pos) => b.clone(),
        _ => a.clone(),
    }
}

fn min_s<S: Scalar + SignScalar>(a: &S, b: &S) -> S {
    match b.sub(a).sign_strict() {
        Ok(Sign::Neg) => b.clone(),
        _ => a.clone(),
    }
}

/// Gather all bound constants for a lifted system.
pub fn error_constants<S: EngineScalar>(system: &LiftedSystem<S>) -> ErrorConstants<S> {
    let prec = system.rho.prec_bits().max(64);
    let ceiling = k_rho_ceiling(&system.rho);
    let k = match S::mode_name() {
        // Quadrature (tighter) in float mode; the ceiling is rigorous and
        // is what the interval mode uses.
        "float" => {
            let rho_real = system.rho.midpoint_real(prec);
            let quad = k_rho(&rho_real, 8 - prec as i32);
            let quad_s = system.rho.of_rational(&Rational::from(0)).add(&{
                // Re-embed the Real value into S by parsing through a
                // rational at full precision.
                let q = quad.to_rational().expect("finite");
                system.rho.of_rational(&q)
            });
            min_s(&quad_s, &ceiling)
        }
        _ => ceiling.clone(),
    };
    ErrorConstants {
        rho: system.rho.clone(),
        transpose_bound: system.transpose_bound.clone(),
        tail_constant: tail_constant(system),
        k_rho: k,
        k_rho_ceiling: ceiling,
        divisor: system.divisor(),
    }
}

/// alpha(n, m) = ((1 + rho_m)^(n-1) - 1 - (n-1) rho_m) / rho_m, evaluated
/// as the binomial series sum_{j>=2} C(n-1, j) rho_m^(j-1) to avoid the
/// catastrophic cancellation of the direct formula when rho_m is tiny.
/// The sum is cut once the term ratio drops below 1/2 and padded with the
/// geometric tail, so the result is an upper bound.
pub(crate) fn alpha_series<S: Scalar>(rho_m: &S, n: usize) -> S {
    let zero = rho_m.zero_like();
    if n < 3 {
        return zero;
    }
    let n1 = (n - 1) as u64;
    // t_2 = C(n-1, 2) rho_m.
    let mut term = rho_m
        .mul_small(((n1 * (n1 - 1) / 2) % u32::MAX as u64) as u32, 1);
    if n1 * (n1 - 1) / 2 > u32::MAX as u64 {
        // Large n fallback: build C(n-1,2) in two factors.
        term = rho_m
            .mul_small((n1 - 1) as u32, 2)
            .mul_small(n1 as u32, 1);
    }
    let mut acc = term.clone();
    let mut j = 2u64;
    while j < n1 {
        // ratio to next term: rho_m (n-1-j)/(j+1).
        let next = term
            .mul(rho_m)
            .mul_small((n1 - j) as u32, (j + 1) as u32);
        let ratio = if term.mag_f64() > 0.0 {
            next.mag_f64() / term.mag_f64()
        } else {
            0.0
        };
        if ratio < 0.5 && next.mag_f64() < acc.mag_f64() * 1e-40 {
            // Geometric tail pad: next / (1 - ratio) <= 2 next.
            acc = acc.add(&next.mul_small(2, 1));
            return acc;
        }
        acc = acc.add(&next);
        term = next;
        j += 1;
    }
    acc
}

/// The a-posteriori truncation bound for the n-term, order-m partial sum:
/// E_C rho^(n-1)/d
///   + (2/d) log(1/(1 - rho D)) alpha(n, m)
///   + 2 (n-1) rho^m D^m / (m d (1 - rho D)),
/// with rho_m = rho^(m-1) K(rho).
pub fn error_bound<S: EngineScalar>(consts: &ErrorConstants<S>, n: usize, m: usize) -> S {
    assert!(n >= 1 && m >= 2);
    let one = consts.rho.one_like();
    let d = consts.divisor;

    let term1 = consts
        .tail_constant
        .mul(&consts.rho.pow_u32((n - 1) as u32))
        .mul_small(1, d);

    let rho_d = consts.rho.mul(&consts.transpose_bound);
    let log_factor = one.div(&one.sub(&rho_d)).ln();
    let rho_m = consts.rho.pow_u32((m - 1) as u32).mul(&consts.k_rho);
    let term2 = log_factor
        .mul(&alpha_series(&rho_m, n))
        .mul_small(2, d);

    let term3 = rho_d
        .pow_u32(m as u32)
        .mul_small(2 * (n as u32 - 1), m as u32 * d)
        .div(&one.sub(&rho_d));

    term1.add(&term2).add(&term3)
}

/// Pick the smallest (n, m) meeting the target: first the smallest n
/// with E_C rho^(n-1)/d below half the target, then the smallest m >= 2
/// with the full bound below the target. Termination is guaranteed by
/// rho < 1, rho D < 1, and rho_m -> 0.
pub fn choose_params<S: EngineScalar>(
    consts: &ErrorConstants<S>,
    eps: &Real,
    prec: Precision,
) -> Result<(usize, usize), CertifyError> {
    let floor = Real::with_val(prec, Real::i_exp(1, 24 - prec as i32));
    if *eps <= floor {
        return Err(CertifyError::EpsilonBelowFloor {
            eps: format!("{:.3e}", eps.to_f64()),
            prec,
        });
    }
    let eps_s_half = eps.clone() / 2u32;
    let exceeds = |bound: &S| -> bool {
        // Upper bound of the bound vs eps/2.
        bound.abs_upper(prec) >= eps_s_half
    };
    let d = consts.divisor;
    let mut n = 1usize;
    let mut tail = consts.tail_constant.mul_small(1, d);
    while exceeds(&tail) {
        tail = tail.mul(&consts.rho);
        n += 1;
        if n > 10_000_000 {
            return Err(CertifyError::BadOption(
                "parameter search for n did not terminate".to_string(),
            ));
        }
    }

    let fits = |m: usize| -> bool { error_bound(consts, n, m).abs_upper(prec) < *eps };
    // Exponential probe then binary refinement.
    let mut hi = 2usize;
    while !fits(hi) {
        hi *= 2;
        if hi > 1 << 26 {
            return Err(CertifyError::BadOption(
                "parameter search for m did not terminate; try a larger epsilon".to_string(),
            ));
        }
    }
    let mut lo = hi / 2;
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if mid >= 2 && fits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((n, hi.max(2)))
}

/// Computation mode for the certified pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Float,
    Interval,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Float => "float",
            Mode::Interval => "interval",
        }
    }
}

/// Options for [`compute_lambda`].
#[derive(Debug, Clone)]
pub struct ComputeOptions {
    pub precision: Precision,
    pub epsilon: Real,
    pub mode: Mode,
    pub class_choice: Option<usize>,
    /// Extra divisor when the input is a d-step block system of some
    /// original chain.
    pub base_divisor: u32,
}

impl ComputeOptions {
    pub fn new(precision: Precision, epsilon: Real) -> Self {
        ComputeOptions {
            precision,
            epsilon,
            mode: Mode::Float,
            class_choice: None,
            base_divisor: 1,
        }
    }
}

/// A certified value: the partial sum, the analytic truncation bound, and
/// a separately reported rounding allowance (heuristic in float mode, the
/// exact enclosure radius in interval mode).
#[derive(Debug, Clone)]
pub struct Certificate {
    pub value: Real,
    pub epsilon_target: Real,
    pub bound: Real,
    pub rounding_allowance: Real,
    pub n: usize,
    pub m: usize,
    pub rho: Real,
    pub transpose_bound: Real,
    pub tail_constant: Real,
    pub k_rho: Real,
    pub k_rho_ceiling: Real,
    pub rho_m: Real,
    pub divisor: u32,
    pub mode: Mode,
    pub precision: Precision,
    pub op_count: u64,
}

/// Inputs of the certified pipeline, over the validation scalar
/// (exact rationals whenever the system is rational, reals otherwise).
#[derive(Debug, Clone)]
pub struct SystemData<S: Scalar> {
    pub matrices: Vec<Mat2<S>>,
    pub chain: StochasticMatrix<S>,
    pub cone: Multicone<S>,
    pub charts: Option<ChartSet<S>>,
}

/// Validation scalars know how to enter the analytic engine.
pub trait LiftScalar: Scalar + SignScalar {
    fn to_engine_real(&self, prec: Precision) -> Real;
    fn to_engine_interval(&self, prec: Precision) -> Interval;
}

impl LiftScalar for Rational {
    fn to_engine_real(&self, prec: Precision) -> Real {
        Real::with_val(prec, self)
    }
    fn to_engine_interval(&self, prec: Precision) -> Interval {
        use crate::numeric::FromRationalPrec;
        Interval::from_rational_prec(self, prec)
    }
}

impl LiftScalar for Real {
    fn to_engine_real(&self, prec: Precision) -> Real {
        Real::with_val(prec, self)
    }
    fn to_engine_interval(&self, prec: Precision) -> Interval {
        // Input floats are taken as exact binary values.
        Interval::point(Real::with_val(prec, self))
    }
}

/// Validate the multicone, build the branch system and the lift over the
/// chosen recurrent class. Returns the lift together with its
/// re-assembly recipe.
pub fn build_validated_lift<S: LiftScalar>(
    data: &SystemData<S>,
    class_choice: Option<usize>,
    base_divisor: u32,
) -> Result<(LiftedSystem<S>, crate::lift::LiftRecipe<S>), CertifyError> {
    let table = validate_multicone(&data.matrices, &data.chain, &data.cone)?;
    let system = build_branch_system(&data.chain, &table)?;
    let class: Vec<usize> = system.select_class(class_choice)?.to_vec();
    let pair = build_lift(
        &data.matrices,
        &data.chain,
        &data.cone,
        &system,
        &class,
        data.charts.as_ref(),
        base_divisor,
    )?;
    Ok(pair)
}

/// Run the certified engine on an already-validated lift.
pub fn certify_lift<S: EngineScalar>(
    lift: &LiftedSystem<S>,
    eps: &Real,
    prec: Precision,
    mode: Mode,
) -> Result<Certificate, CertifyError> {
    let consts = error_constants(lift);
    let (n, m) = choose_params(&consts, eps, prec)?;
    let run = iterate_partial_sums(lift, n, m, &[]);
    let bound = error_bound(&consts, n, m);

    let value = run.value.midpoint_real(prec);
    let radius = run.value.radius_real(prec);
    let allowance = match mode {
        Mode::Interval => radius,
        Mode::Float => {
            // Heuristic: op count x 2^(16-p) x magnitude scale.
            let ops = Real::with_val(prec, run.stats.mul_adds.max(1));
            let scale = max_real(&Real::with_val(prec, 1), &value.clone().abs());
            ops * Real::with_val(prec, Real::i_exp(1, 16 - prec as i32)) * scale
        }
    };
    let rho_m = consts
        .rho
        .pow_u32((m - 1) as u32)
        .mul(&consts.k_rho)
        .midpoint_real(prec);
    Ok(Certificate {
        value,
        epsilon_target: eps.clone(),
        bound: bound.abs_upper(prec),
        rounding_allowance: allowance,
        n,
        m,
        rho: consts.rho.abs_upper(prec),
        transpose_bound: consts.transpose_bound.abs_upper(prec),
        tail_constant: consts.tail_constant.abs_upper(prec),
        k_rho: consts.k_rho.abs_upper(prec),
        k_rho_ceiling: consts.k_rho_ceiling.abs_upper(prec),
        rho_m,
        divisor: consts.divisor,
        mode,
        precision: prec,
        op_count: run.stats.mul_adds,
    })
}

/// The full pipeline: validate the multicone, build the branch system,
/// pick a recurrent class, build the (accelerated) lift, choose (n, m)
/// for the requested accuracy, iterate, and certify.
pub fn compute_lambda<S: LiftScalar>(
    data: &SystemData<S>,
    opts: &ComputeOptions,
) -> Result<Certificate, CertifyError> {
    let (lift, _) = build_validated_lift(data, opts.class_choice, opts.base_divisor)?;
    let prec = opts.precision;
    match opts.mode {
        Mode::Float => {
            let real_lift = lift
                .convert(&|s| s.to_engine_real(prec))
                .map_err(CertifyError::Markov)?;
            certify_lift(&real_lift, &opts.epsilon, prec, Mode::Float)
        }
        Mode::Interval => {
            let int_lift = lift
                .convert(&|s| s.to_engine_interval(prec))
                .map_err(CertifyError::Markov)?;
            certify_lift(&int_lift, &opts.epsilon, prec, Mode::Interval)
        }
    }
}

fn max_real(a: &Real, b: &Real) -> Real {
    if a > b {
        a.clone()
    } else {
        b.clone()
    }
}

/// Certify the same system under two chart sets and verify the results
/// agree: the certificate intervals must intersect, and the midpoints
/// may differ by at most twice the combined bounds. Returns the two
/// certificates for inspection.
pub fn chart_invariance_check<S: LiftScalar>(
    data: &SystemData<S>,
    charts_a: Option<ChartSet<S>>,
    charts_b: Option<ChartSet<S>>,
    opts: &ComputeOptions,
) -> Result<(bool, Certificate, Certificate), CertifyError> {
    let mut data_a = data.clone();
    data_a.charts = charts_a;
    let mut data_b = data.clone();
    data_b.charts = charts_b;
    let cert_a = compute_lambda(&data_a, opts)?;
    let cert_b = compute_lambda(&data_b, opts)?;
    let prec = opts.precision;
    let diff = Real::with_val(prec, &cert_a.value - &cert_b.value).abs();
    let combined = Real::with_val(prec, &cert_a.bound + &cert_b.bound)
        + Real::with_val(prec, &cert_a.rounding_allowance + &cert_b.rounding_allowance);
    let agree = diff <= Real::with_val(prec, &combined * 2u32);
    Ok((agree, cert_a, cert_b))
}

/// A simulation estimate of the exponent with its naive standard error.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub steps: u64,
    pub trials: u64,
    pub seed: u64,
}

/// Crude Furstenberg-Kesten sampler in f64: simulate trajectories from
/// the stationary law, average (1/steps) log of the product norms with
/// per-step renormalization. Trials run in parallel on deterministic
/// per-trial substreams, so a fixed seed is bitwise reproducible.
pub fn monte_carlo_lambda<S: LiftScalar>(
    data: &SystemData<S>,
    steps: u64,
    trials: u64,
    seed: u64,
) -> Result<MonteCarloEstimate, CertifyError> {
    assert!(steps >= 1 && trials >= 1);
    let n = data.chain.size();
    let probs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| data.chain.entry(i, j).to_engine_real(53).to_f64())
                .collect()
        })
        .collect();
    let stationary: Vec<f64> = data
        .chain
        .stationary(None)?
        .iter()
        .map(|x| x.to_engine_real(53).to_f64())
        .collect();
    let mats: Vec<[f64; 4]> = data
        .matrices
        .iter()
        .map(|m| {
            [
                m.a.to_engine_real(53).to_f64(),
                m.b.to_engine_real(53).to_f64(),
                m.c.to_engine_real(53).to_f64(),
                m.d.to_engine_real(53).to_f64(),
            ]
        })
        .collect();

    let sample = |cdf_source: &[f64], u: f64| -> usize {
        let mut acc = 0.0;
        for (k, p) in cdf_source.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        cdf_source.len() - 1
    };

    let estimates: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(t.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            let mut state = sample(&stationary, rng.gen::<f64>());
            let (mut v1, mut v2) = (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2);
            let mut log_norm = 0.0f64;
            for _ in 0..steps {
                let m = &mats[state];
                let (w1, w2) = (m[0] * v1 + m[1] * v2, m[2] * v1 + m[3] * v2);
                let norm = w1.hypot(w2);
                log_norm += norm.ln();
                v1 = w1 / norm;
                v2 = w2 / norm;
                state = sample(&probs[state], rng.gen::<f64>());
            }
            log_norm / steps as f64
        })
        .collect();

    let mean = estimates.iter().sum::<f64>() / trials as f64;
    let var = if trials > 1 {
        estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0)
    } else {
        0.0
    };
    Ok(MonteCarloEstimate {
        mean,
        stderr: (var / trials as f64).sqrt(),
        steps,
        trials,
        seed,
    })
}
