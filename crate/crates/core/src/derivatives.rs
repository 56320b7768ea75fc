//! Certified derivatives and Taylor coefficients of the exponent along an
//! analytic one-parameter family: the entire series pipeline re-run in
//! truncated Taylor (jet) arithmetic, complex-disk condition checking,
//! the Cauchy-formula error bound for any order, and an optional
//! radius-free certifier for the first derivative.

use crate::certify::{
    alpha_series, build_validated_lift, error_constants, k_rho, k_rho_ceiling, CertifyError,
    ErrorConstants, SystemData,
};
use crate::family::{Expr, ExprScalar, FamilyError, Jet};
use crate::lift::{rebuild_lift, ChartSet, LiftError, LiftRecipe, LiftedSystem};
use crate::markov::StochasticMatrix;
use crate::multicone::Multicone;
use crate::numeric::{Complex, NumericError, Precision, Real, Scalar, SignScalar};
use crate::projective::{Arc, Mat2, Mobius};
use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum DerivativeError {
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("disk conditions fail: {0}")]
    OmegaViolated(String),
    #[error("rho_bar * Q_bar = {0} >= 1; shrink the disk radius")]
    SummabilityViolated(f64),
    #[error("stationary solve failed at a boundary sample: {0}")]
    BoundarySolve(String),
}

/// A system whose matrix and transition entries are expressions in one
/// real parameter; the multicone and charts are constant in the
/// parameter (their entries may still be irrational expressions).
#[derive(Debug, Clone)]
pub struct FamilySystem {
    pub labels: Vec<String>,
    pub matrices: Vec<Mat2<Expr>>,
    pub chain_rows: Vec<Vec<Expr>>,
    /// Structural support of the chain (constant across the family).
    pub chain_support: Vec<Vec<bool>>,
    /// Arc endpoints per letter/component, `None` = the point at infinity,
    /// ordered so the arc runs from the first endpoint upward in slope.
    pub cone_endpoints: Vec<Vec<(Option<Expr>, Option<Expr>)>>,
    pub charts: Option<Vec<((usize, usize), Mat2<Expr>)>>,
    pub base_divisor: u32,
}

fn eval_mat<S: ExprScalar>(m: &Mat2<Expr>, t: &S) -> Result<Mat2<S>, FamilyError> {
    Ok(Mat2::new(
        m.a.eval(t)?,
        m.b.eval(t)?,
        m.c.eval(t)?,
        m.d.eval(t)?,
    ))
}

impl FamilySystem {
    /// Evaluate every entry at a fixed parameter value over a scalar kind
    /// with decidable signs, yielding data the validators accept.
    pub fn instantiate<S: ExprScalar + SignScalar>(
        &self,
        t: &S,
    ) -> Result<SystemData<S>, DerivativeError> {
        let matrices = self
            .matrices
            .iter()
            .map(|m| eval_mat(m, t))
            .collect::<Result<Vec<_>, _>>()?;
        let rows = self
            .chain_rows
            .iter()
            .map(|row| row.iter().map(|e| e.eval(t)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let chain = StochasticMatrix::with_support(
            self.labels.clone(),
            rows,
            self.chain_support.clone(),
        )
        .map_err(CertifyError::Markov)?;
        let mut components = Vec::with_capacity(self.cone_endpoints.len());
        for arcs in &self.cone_endpoints {
            let mut comps = Vec::with_capacity(arcs.len());
            for (e1, e2) in arcs {
                let v1 = e1.as_ref().map(|e| e.eval(t)).transpose()?;
                let v2 = e2.as_ref().map(|e| e.eval(t)).transpose()?;
                let frame = crate::lift::default_chart(v1.as_ref(), v2.as_ref())
                    .map_err(LiftError::Projective)?;
                comps.push(Arc::from_frame(frame).map_err(LiftError::Projective)?);
            }
            components.push(comps);
        }
        let charts = match &self.charts {
            None => None,
            Some(list) => {
                let mut set = ChartSet::new();
                for ((i, a), m) in list {
                    set.insert(*i, *a, eval_mat(m, t)?);
                }
                Some(set)
            }
        };
        Ok(SystemData {
            matrices,
            chain: chain,
            cone: Multicone { components },
            charts,
        })
    }

    /// Letter matrices and a chain-entry closure over an arbitrary
    /// expression scalar (jets, complexes) at a fixed parameter value.
    fn entries_at<S: ExprScalar>(
        &self,
        t: &S,
    ) -> Result<(Vec<Mat2<S>>, Vec<Vec<S>>), FamilyError> {
        let mats = self
            .matrices
            .iter()
            .map(|m| eval_mat(m, t))
            .collect::<Result<Vec<_>, _>>()?;
        let chain = self
            .chain_rows
            .iter()
            .map(|row| row.iter().map(|e| e.eval(t)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok((mats, chain))
    }
}

/// The validated family at the base point: real instance, lift, recipe,
/// and bound constants.
pub struct FamilyLift {
    pub lift: LiftedSystem<Real>,
    pub recipe: LiftRecipe<Real>,
    pub consts: ErrorConstants<Real>,
}

/// Validate the family at the base point and build the lift and its
/// re-assembly recipe.
pub fn family_lift_at(
    family: &FamilySystem,
    t0: &Real,
    class_choice: Option<usize>,
) -> Result<FamilyLift, DerivativeError> {
    let data = family.instantiate(t0)?;
    let (lift, recipe) = build_validated_lift(&data, class_choice, family.base_divisor)?;
    let consts = error_constants(&lift);
    Ok(FamilyLift {
        lift,
        recipe,
        consts,
    })
}

/// Re-assemble the lift in jet arithmetic of the given order at t0.
pub fn jet_lift(
    family: &FamilySystem,
    base: &FamilyLift,
    t0: &Real,
    order: usize,
) -> Result<LiftedSystem<Jet<Real>>, DerivativeError> {
    let t_jet = Jet::variable(t0.clone(), order);
    let (mats, chain) = family.entries_at(&t_jet)?;
    let lift = rebuild_lift(
        &base.recipe,
        &mats,
        &|i, j| chain[i][j].clone(),
        &|r: &Real| Jet::constant(r.clone(), order),
        Jet::constant(base.lift.rho.clone(), order),
        Jet::constant(base.lift.transpose_bound.clone(), order),
    )?;
    Ok(lift)
}

/// Taylor coefficients a_0..a_Q of the truncated approximation: the
/// whole kernel pipeline evaluated in jet arithmetic (stationary solve,
/// coupling weights, blocks, seed, n iterations), returning coefficient
/// j of the accumulated jet (the j-th derivative over j!). Uncertified;
/// pair with [`derivative_error_bound`] for certificates.
pub fn derivative_series(
    family: &FamilySystem,
    t0: &Real,
    order: usize,
    n: usize,
    m: usize,
    class_choice: Option<usize>,
) -> Result<Vec<Real>, DerivativeError> {
    let base = family_lift_at(family, t0, class_choice)?;
    let lift = jet_lift(family, &base, t0, order)?;
    let run = crate::kernel::iterate_partial_sums(&lift, n, m, &[]);
    Ok(run.value.coeffs)
}

/// Provenance of disk constants: supplied by the user with an external
/// certification, or estimated by boundary sampling here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    UserCertified,
    BoundaryEstimated,
}

impl Provenance {
    pub fn name(&self) -> &'static str {
        match self {
            Provenance::UserCertified => "user-certified",
            Provenance::BoundaryEstimated => "boundary-estimated",
        }
    }
}

/// Constants controlling the holomorphic extension on the closed disk of
/// radius `radius` around `t0`, entering the Cauchy-formula bound.
#[derive(Debug, Clone)]
pub struct OmegaData {
    pub t0: Real,
    pub radius: Real,
    pub rho_bar: Real,
    /// max(1, max_r max_z sum_{r'} |Q(z)_{r,r'}|).
    pub q_bar: Real,
    /// max_r max_z |f_r^T[z](0)|.
    pub d_bar: Real,
    /// max |d/dw log(gamma w + delta)| over the disk of radius rho_bar.
    pub m_ell: Real,
    /// max_z sum_r |pi_r(z)|.
    pub m_sigma_pi: Real,
    /// min_z min_r |pi_r(z)|.
    pub m_pi_min: Real,
    pub provenance: Provenance,
}

/// Per-condition outcome of the disk check.
#[derive(Debug, Clone)]
pub struct OmegaReport {
    pub estimated: OmegaData,
    /// max over boundary samples and the full unit circle of |f_r[z](x)|.
    pub max_abs_f: Real,
    /// min over boundary samples of Re(gamma_r(z) x + delta_r(z)), x on
    /// the unit circle.
    pub min_re_denominator: Real,
    pub stationary_ok: bool,
    pub contraction_ok: bool,
    pub positive_real_ok: bool,
    pub summability_ok: bool,
    pub samples: usize,
}

impl OmegaReport {
    pub fn all_ok(&self) -> bool {
        self.stationary_ok && self.contraction_ok && self.positive_real_ok && self.summability_ok
    }
}

struct BoundarySweep {
    q_sum_max: Real,
    d_max: Real,
    m_ell_max: Real,
    sigma_pi_max: Real,
    pi_min: Real,
    f_max: Real,
    re_den_min: Real,
    solve_failed: bool,
    pole_in_disk: bool,
}

/// Exact maximum of |f| over the unit circle: the Moebius image of the
/// circle is a circle (the pole is off it), so the maximum is
/// |center| + radius, with the center found as a circumcenter of three
/// image points. Falls back to dense sampling if the三 circumcenter
/// solve degenerates.
fn max_abs_on_unit_circle(f: &Mobius<Complex>, prec: Precision) -> Real {
    let proto = f.alpha.clone();
    let one = proto.one_like();
    let i_unit = Complex::new(Real::new(prec), Real::with_val(prec, 1));
    let pts = [one.clone(), one.neg(), i_unit];
    let imgs: Vec<Complex> = pts
        .iter()
        .filter_map(|x| f.eval(x).ok())
        .collect();
    if imgs.len() == 3 {
        if let Some(center) = circumcenter(&imgs[0], &imgs[1], &imgs[2], prec) {
            let radius = imgs[0].sub(&center).abs();
            return center.abs() + radius;
        }
    }
    // Fallback: dense sampling with a small inflation.
    let n = 512;
    let two_pi = Real::with_val(prec, rug::float::Constant::Pi) * 2u32;
    let mut best = Real::new(prec);
    for k in 0..n {
        let theta = Real::with_val(prec, &two_pi) * Real::with_val(prec, k as u32)
            / Real::with_val(prec, n as u32);
        let x = Complex::new(theta.clone().cos(), theta.sin());
        if let Ok(v) = f.eval(&x) {
            let a = v.abs();
            if a > best {
                best = a;
            }
        }
    }
    best * Real::with_val(prec, 1.001)
}

fn circumcenter(z1: &Complex, z2: &Complex, z3: &Complex, prec: Precision) -> Option<Complex> {
    let sq = |z: &Complex| -> Real {
        Real::with_val(prec, &z.re * &z.re) + Real::with_val(prec, &z.im * &z.im)
    };
    let a11 = Real::with_val(prec, &z2.re - &z1.re) * 2u32;
    let a12 = Real::with_val(prec, &z2.im - &z1.im) * 2u32;
    let a21 = Real::with_val(prec, &z3.re - &z1.re) * 2u32;
    let a22 = Real::with_val(prec, &z3.im - &z1.im) * 2u32;
    let b1 = sq(z2) - sq(z1);
    let b2 = sq(z3) - sq(z1);
    let det = Real::with_val(prec, &a11 * &a22) - Real::with_val(prec, &a12 * &a21);
    if det.clone().abs().to_f64() < 1e-300 {
        return None;
    }
    let cx = (Real::with_val(prec, &b1 * &a22) - Real::with_val(prec, &a12 * &b2)) / &det;
    let cy = (Real::with_val(prec, &a11 * &b2) - Real::with_val(prec, &b1 * &a21)) / &det;
    Some(Complex::new(Real::with_val(prec, cx), Real::with_val(prec, cy)))
}

fn sweep_boundary(
    family: &FamilySystem,
    base: &FamilyLift,
    t0: &Real,
    radius: &Real,
    rho_bar: &Real,
    samples: usize,
    prec: Precision,
) -> Result<BoundarySweep, DerivativeError> {
    let two_pi = Real::with_val(prec, rug::float::Constant::Pi) * 2u32;
    let results: Vec<Result<BoundarySweep, DerivativeError>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let theta = Real::with_val(prec, &two_pi) * Real::with_val(prec, k as u32)
                / Real::with_val(prec, samples as u32);
            let z = Complex::new(
                Real::with_val(prec, t0 + Real::with_val(prec, radius * &theta.clone().cos())),
                Real::with_val(prec, radius * &theta.sin()),
            );
            sweep_point(family, base, &z, rho_bar, prec)
        })
        .collect();
    let mut acc: Option<BoundarySweep> = None;
    for r in results {
        let s = r?;
        acc = Some(match acc {
            None => s,
            Some(mut a) => {
                a.q_sum_max = real_max(a.q_sum_max, s.q_sum_max);
                a.d_max = real_max(a.d_max, s.d_max);
                a.m_ell_max = real_max(a.m_ell_max, s.m_ell_max);
                a.sigma_pi_max = real_max(a.sigma_pi_max, s.sigma_pi_max);
                a.pi_min = real_min(a.pi_min, s.pi_min);
                a.f_max = real_max(a.f_max, s.f_max);
                a.re_den_min = real_min(a.re_den_min, s.re_den_min);
                a.solve_failed |= s.solve_failed;
                a.pole_in_disk |= s.pole_in_disk;
                a
            }
        });
    }
    Ok(acc.expect("at least one sample"))
}

fn sweep_point(
    family: &FamilySystem,
    base: &FamilyLift,
    z: &Complex,
    rho_bar: &Real,
    prec: Precision,
) -> Result<BoundarySweep, DerivativeError> {
    let (mats, chain) = family.entries_at(z)?;
    let lift = match rebuild_lift(
        &base.recipe,
        &mats,
        &|i, j| chain[i][j].clone(),
        &|r: &Real| Complex::from_real(Real::with_val(prec, r)),
        Complex::from_real(Real::with_val(prec, &base.lift.rho)),
        Complex::from_real(Real::with_val(prec, &base.lift.transpose_bound)),
    ) {
        Ok(l) => l,
        Err(_) => {
            return Ok(BoundarySweep {
                q_sum_max: Real::new(prec),
                d_max: Real::new(prec),
                m_ell_max: Real::new(prec),
                sigma_pi_max: Real::new(prec),
                pi_min: Real::new(prec),
                f_max: Real::new(prec),
                re_den_min: Real::new(prec),
                solve_failed: true,
                pole_in_disk: false,
            })
        }
    };

    let nb = lift.chain.size();
    let mut q_sum_max = Real::new(prec);
    for r in 0..nb {
        let mut s = Real::new(prec);
        for rp in 0..nb {
            s += lift.chain.entry(r, rp).abs();
        }
        q_sum_max = real_max(q_sum_max, s);
    }
    let mut sigma_pi = Real::new(prec);
    let mut pi_min: Option<Real> = None;
    for pi in &lift.stationary {
        let a = pi.abs();
        sigma_pi += &a;
        pi_min = Some(match pi_min {
            None => a,
            Some(m) => real_min(m, a),
        });
    }

    let mut d_max = Real::new(prec);
    let mut m_ell_max = Real::new(prec);
    let mut f_max = Real::new(prec);
    let mut re_den_min: Option<Real> = None;
    let mut pole_in_disk = false;
    for st in &lift.states {
        let gamma_abs = st.map.gamma.abs();
        let delta_abs = st.map.delta.abs();
        // |f^T(0)| = |gamma / delta|.
        d_max = real_max(d_max, Real::with_val(prec, &gamma_abs / &delta_abs));
        // max over |w| <= rho_bar of |gamma/(gamma w + delta)|:
        // the denominator's minimum modulus over the disk is
        // |delta| - rho_bar |gamma| (requires positivity).
        let den_min = Real::with_val(prec, &delta_abs - Real::with_val(prec, rho_bar * &gamma_abs));
        if den_min <= 0 {
            pole_in_disk = true;
        } else {
            m_ell_max = real_max(m_ell_max, Real::with_val(prec, &gamma_abs / &den_min));
        }
        f_max = real_max(f_max, max_abs_on_unit_circle(&st.map, prec));
        // min over |x| = 1 of Re(gamma x + delta) = Re(delta) - |gamma|.
        let re_min = Real::with_val(prec, &st.map.delta.re - &gamma_abs);
        re_den_min = Some(match re_den_min {
            None => re_min,
            Some(m) => real_min(m, re_min),
        });
    }

    Ok(BoundarySweep {
        q_sum_max,
        d_max,
        m_ell_max,
        sigma_pi_max: sigma_pi,
        pi_min: pi_min.expect("nonempty"),
        f_max,
        re_den_min: re_den_min.expect("nonempty"),
        solve_failed: false,
        pole_in_disk,
    })
}

fn real_max(a: Real, b: Real) -> Real {
    if b > a {
        b
    } else {
        a
    }
}

fn real_min(a: Real, b: Real) -> Real {
    if b < a {
        b
    } else {
        a
    }
}

/// Estimate the disk constants by sampling the boundary circle
/// |z - t0| = radius (and handling the second variable of two-variable
/// conditions by exact circle geometry, justified by the maximum
/// principle in each variable separately). Sampling starts at 1024
/// points and doubles until every estimate moves by less than 1%.
pub fn check_omega(
    family: &FamilySystem,
    base: &FamilyLift,
    t0: &Real,
    radius: &Real,
    rho_bar: &Real,
    prec: Precision,
) -> Result<OmegaReport, DerivativeError> {
    let mut samples = 1024usize;
    let mut prev = sweep_boundary(family, base, t0, radius, rho_bar, samples, prec)?;
    loop {
        samples *= 2;
        let cur = sweep_boundary(family, base, t0, radius, rho_bar, samples, prec)?;
        let close = |a: &Real, b: &Real| -> bool {
            let scale = real_max(a.clone().abs(), b.clone().abs());
            if scale.to_f64() == 0.0 {
                return true;
            }
            (Real::with_val(prec, a - b)).abs() <= scale * Real::with_val(prec, 0.01)
        };
        let settled = close(&prev.q_sum_max, &cur.q_sum_max)
            && close(&prev.d_max, &cur.d_max)
            && close(&prev.m_ell_max, &cur.m_ell_max)
            && close(&prev.sigma_pi_max, &cur.sigma_pi_max)
            && close(&prev.pi_min, &cur.pi_min)
            && close(&prev.f_max, &cur.f_max)
            && close(&prev.re_den_min, &cur.re_den_min);
        prev = cur;
        if settled || samples >= 1 << 16 {
            break;
        }
    }

    let one = Real::with_val(prec, 1);
    let q_bar = real_max(one.clone(), prev.q_sum_max.clone());
    let estimated = OmegaData {
        t0: t0.clone(),
        radius: radius.clone(),
        rho_bar: rho_bar.clone(),
        q_bar: q_bar.clone(),
        d_bar: prev.d_max.clone(),
        m_ell: prev.m_ell_max.clone(),
        m_sigma_pi: prev.sigma_pi_max.clone(),
        m_pi_min: prev.pi_min.clone(),
        provenance: Provenance::BoundaryEstimated,
    };
    let contraction_ok = prev.f_max < *rho_bar && !prev.pole_in_disk;
    let positive_real_ok = prev.re_den_min > 0;
    let stationary_ok = !prev.solve_failed && prev.pi_min > 0;
    let summability_ok = Real::with_val(prec, rho_bar * &q_bar) < one;
    Ok(OmegaReport {
        estimated,
        max_abs_f: prev.f_max,
        min_re_denominator: prev.re_den_min,
        stationary_ok,
        contraction_ok,
        positive_real_ok,
        summability_ok,
        samples,
    })
}

/// The Cauchy-formula error bound for the q-th derivative of the
/// n-term, order-m approximation:
/// (q! Qb^n)/(c^q d) { Msp Ml artanh(rb) / (rb (1 - rb Qb)) rb^n
///   + (2 Msp^2 / mp) ( alpha(n,m) log(1/(1 - rb Db))
///                      + (n-1) rb^m Db^m / (m (1 - rb Db)) ) },
/// with alpha built from rb_m = rb^(m-1) K(rb). Divide by q! for the
/// q-th Taylor coefficient.
pub fn derivative_error_bound(
    omega: &OmegaData,
    divisor: u32,
    q: usize,
    n: usize,
    m: usize,
    prec: Precision,
) -> Result<Real, DerivativeError> {
    let one = Real::with_val(prec, 1);
    let rb = Real::with_val(prec, &omega.rho_bar);
    let qb = Real::with_val(prec, &omega.q_bar);
    let db = Real::with_val(prec, &omega.d_bar);
    let rho_q = Real::with_val(prec, &rb * &qb);
    if rho_q >= one {
        return Err(DerivativeError::SummabilityViolated(rho_q.to_f64()));
    }

    let k = real_min(k_rho(&rb, 8 - prec as i32), k_rho_ceiling(&rb));
    let rb_m = pow_real(&rb, (m - 1) as u32) * &k;
    let alpha = alpha_series(&rb_m, n);

    let term_tail = Real::with_val(prec, &omega.m_sigma_pi)
        * Real::with_val(prec, &omega.m_ell)
        * rb.clone().atanh()
        / Real::with_val(prec, &rb * &Real::with_val(prec, &one - &rho_q))
        * pow_real(&rb, n as u32);

    let rb_db = Real::with_val(prec, &rb * &db);
    let log_factor = Real::with_val(prec, &one / Real::with_val(prec, &one - &rb_db)).ln();
    let msp2 = Real::with_val(prec, &omega.m_sigma_pi * &omega.m_sigma_pi);
    let inner = Real::with_val(prec, &alpha * &log_factor)
        + pow_real(&rb_db, m as u32) * Real::with_val(prec, (n - 1) as u32)
            / (Real::with_val(prec, m as u32) * Real::with_val(prec, &one - &rb_db));
    let term_trunc =
        Real::with_val(prec, 2u32) * msp2 / Real::with_val(prec, &omega.m_pi_min) * inner;

    let q_fact = Real::with_val(prec, rug::Integer::from(rug::Integer::factorial(q as u32)));
    let c_pow = pow_real(&Real::with_val(prec, &omega.radius), q as u32);
    let prefactor =
        q_fact * pow_real(&qb, n as u32) / (c_pow * Real::with_val(prec, divisor));

    Ok(prefactor * (term_tail + term_trunc))
}

fn pow_real(x: &Real, e: u32) -> Real {
    use rug::ops::Pow;
    Real::with_val(x.prec(), x.pow(e))
}

/// Result of a certified Taylor run.
#[derive(Debug, Clone)]
pub struct TaylorResult {
    /// a_0..a_Q.
    pub coefficients: Vec<Real>,
    /// Certified per-coefficient bounds (Cauchy bound over q!).
    pub bounds: Vec<Real>,
    /// (n, m) each order would need on its own.
    pub per_order_params: Vec<(usize, usize)>,
    /// The single (n, m) the series was actually run at.
    pub run_params: (usize, usize),
    pub omega: OmegaData,
    pub divisor: u32,
}

/// Certified Taylor coefficients a_0..a_Q: per order, pick (n, m) so the
/// Cauchy bound over q! beats the target, then run the jet pipeline once
/// at the maximal parameters.
pub fn taylor(
    family: &FamilySystem,
    t0: &Real,
    order: usize,
    eps_per_coefficient: &Real,
    omega: &OmegaData,
    prec: Precision,
    class_choice: Option<usize>,
) -> Result<TaylorResult, DerivativeError> {
    let base = family_lift_at(family, t0, class_choice)?;
    let divisor = base.lift.divisor();

    let mut per_order = Vec::with_capacity(order + 1);
    let mut n_max = 2usize;
    let mut m_max = 2usize;
    for q in 0..=order {
        let q_fact = Real::with_val(prec, rug::Integer::from(rug::Integer::factorial(q as u32)));
        let target = Real::with_val(prec, eps_per_coefficient * &q_fact);
        // Smallest n whose pure-tail part beats half the target.
        let mut n = 2usize;
        loop {
            let b = derivative_error_bound(omega, divisor, q, n, 2, prec)?;
            // The m-independent first summand is what n controls; probe
            // with a large m to isolate it.
            let b_large_m = derivative_error_bound(omega, divisor, q, n, 64, prec)?;
            let _ = b;
            if b_large_m < Real::with_val(prec, &target / 2u32) || n > 1 << 22 {
                break;
            }
            n += 1;
        }
        // Smallest m making the full bound beat the target.
        let mut m = 2usize;
        while derivative_error_bound(omega, divisor, q, n, m, prec)? >= target && m < 1 << 22 {
            m += 1;
        }
        per_order.push((n, m));
        n_max = n_max.max(n);
        m_max = m_max.max(m);
    }

    let coefficients = {
        let lift = jet_lift(family, &base, t0, order)?;
        let run = crate::kernel::iterate_partial_sums(&lift, n_max, m_max, &[]);
        run.value.coeffs
    };
    let mut bounds = Vec::with_capacity(order + 1);
    for q in 0..=order {
        let q_fact = Real::with_val(prec, rug::Integer::from(rug::Integer::factorial(q as u32)));
        let b = derivative_error_bound(omega, divisor, q, n_max, m_max, prec)?;
        bounds.push(b / q_fact);
    }
    Ok(TaylorResult {
        coefficients,
        bounds,
        per_order_params: per_order,
        run_params: (n_max, m_max),
        omega: omega.clone(),
        divisor,
    })
}

// ---------------------------------------------------------------------------
// First-order (radius-free) certifier
// ---------------------------------------------------------------------------

/// The constants entering the radius-free bound for the first
/// derivative.
#[derive(Debug, Clone)]
pub struct FirstOrderConstants {
    pub pi_min: Real,
    pub pi_prime_max: Real,
    pub pi_prime_sum: Real,
    pub q_prime: Real,
    pub transpose_prime: Real,
    pub f_prime_param: Real,
    pub ell_2: Real,
    pub ell_22: Real,
    pub ell_12: Real,
    pub g_12: Real,
    pub g_22: Real,
    pub provenance: Provenance,
}

/// Estimate the first-order constants at the base point from order-1
/// jets (stationary vector, chain, transposed map) and grid/boundary
/// sampling (the two-variable suprema). Grid-estimated values are
/// labeled as such; certificates built on them are conditionally
/// rigorous.
pub fn estimate_first_order_constants(
    family: &FamilySystem,
    base: &FamilyLift,
    t0: &Real,
    prec: Precision,
    grid: usize,
) -> Result<FirstOrderConstants, DerivativeError> {
    let lift1 = jet_lift(family, base, t0, 1)?;
    let nb = lift1.chain.size();

    let mut pi_min: Option<Real> = None;
    let mut pi_prime_max = Real::new(prec);
    let mut pi_prime_sum = Real::new(prec);
    for pi in &lift1.stationary {
        let v0 = pi.coeffs[0].clone().abs();
        pi_min = Some(match pi_min {
            None => v0,
            Some(m) => real_min(m, v0),
        });
        let v1 = pi.coeffs[1].clone().abs();
        pi_prime_sum += &v1;
        pi_prime_max = real_max(pi_prime_max, v1);
    }

    let mut row_sum_max = Real::new(prec);
    let mut col_sums = vec![Real::new(prec); nb];
    for r in 0..nb {
        let mut row = Real::new(prec);
        for rp in 0..nb {
            let d1 = lift1.chain.entry(r, rp).coeffs[1].clone().abs();
            row += &d1;
            col_sums[rp] += &d1;
        }
        row_sum_max = real_max(row_sum_max, row);
    }
    let col_sum_max = col_sums.into_iter().fold(Real::new(prec), real_max);
    let q_prime = real_max(row_sum_max, col_sum_max);

    let mut transpose_prime = Real::new(prec);
    for st in &lift1.states {
        transpose_prime = real_max(
            transpose_prime,
            st.f_transpose_at_zero.coeffs[1].clone().abs(),
        );
    }

    // M_f^(1): max over states and |x| = 1 of |d/dt f_r[t](x)|, via
    // order-1 jets over complex coefficients, sampled on the circle.
    let t_jet_c = Jet::variable(Complex::from_real(Real::with_val(prec, t0)), 1);
    let (mats_c, chain_c) = family.entries_at(&t_jet_c)?;
    let lift_c = rebuild_lift(
        &base.recipe,
        &mats_c,
        &|i, j| chain_c[i][j].clone(),
        &|r: &Real| Jet::constant(Complex::from_real(Real::with_val(prec, r)), 1),
        Jet::constant(Complex::from_real(Real::with_val(prec, &base.lift.rho)), 1),
        Jet::constant(
            Complex::from_real(Real::with_val(prec, &base.lift.transpose_bound)),
            1,
        ),
    )?;
    let two_pi = Real::with_val(prec, rug::float::Constant::Pi) * 2u32;
    let mut f_prime_param = Real::new(prec);
    for st in &lift_c.states {
        for k in 0..grid {
            let theta = Real::with_val(prec, &two_pi) * Real::with_val(prec, k as u32)
                / Real::with_val(prec, grid as u32);
            let x = Jet::constant(Complex::new(theta.clone().cos(), theta.sin()), 1);
            if let Ok(v) = st.map.eval(&x) {
                f_prime_param = real_max(f_prime_param, v.coeffs[1].abs());
            }
        }
    }

    // One-variable suprema at t0 over x in [-rho, rho]: the second-slot
    // derivatives of l are monotone in x, so endpoints suffice.
    let rho = Real::with_val(prec, &base.lift.rho);
    let mut ell_2 = Real::new(prec);
    let mut ell_22 = Real::new(prec);
    for st in &base.lift.states {
        let gamma = Real::with_val(prec, &st.map.gamma);
        let delta = Real::with_val(prec, &st.map.delta);
        for sgn in [1i32, -1i32] {
            let x = Real::with_val(prec, &rho * &Real::with_val(prec, sgn));
            let den = Real::with_val(prec, &gamma * &x) + &delta;
            let v = Real::with_val(prec, &gamma / &den).abs();
            ell_2 = real_max(ell_2, v.clone());
            ell_22 = real_max(ell_22, Real::with_val(prec, &v * &v));
        }
    }

    // Mixed derivative of l: (gamma' delta - gamma delta')/(gamma x + delta)^2,
    // maximal at an endpoint as well.
    let mut ell_12 = Real::new(prec);
    for st in &lift1.states {
        let gamma0 = st.map.gamma.coeffs[0].clone();
        let gamma1 = st.map.gamma.coeffs[1].clone();
        let delta0 = st.map.delta.coeffs[0].clone();
        let delta1 = st.map.delta.coeffs[1].clone();
        let num = Real::with_val(prec, &gamma1 * &delta0) - Real::with_val(prec, &gamma0 * &delta1);
        for sgn in [1i32, -1i32] {
            let x = Real::with_val(prec, &rho * &Real::with_val(prec, sgn));
            let den = Real::with_val(prec, &gamma0 * &x) + &delta0;
            let v = Real::with_val(prec, &num / Real::with_val(prec, &den * &den)).abs();
            ell_12 = real_max(ell_12, v);
        }
    }

    // g-derivatives on the grid x = tanh(s), |s| <= artanh(rho):
    // d/ds g = (1 - x^2) f'(x) / (1 - f(x)^2) =: G(x);
    // d^2/ds^2 g = (1 - x^2) G'(x);
    // d/dt d/ds g = coefficient 1 of G with t as an order-1 jet.
    let mut g_12 = Real::new(prec);
    let mut g_22 = Real::new(prec);
    for k in 0..=grid {
        let x_val = Real::with_val(
            prec,
            &rho * &(Real::with_val(prec, 2 * k as u32) / Real::with_val(prec, grid as u32)
                - Real::with_val(prec, 1)),
        );
        let one = Real::with_val(prec, 1);
        let one_minus_x2 =
            Real::with_val(prec, &one - &Real::with_val(prec, &x_val * &x_val));
        // d^2/ds^2 via x-jets at fixed t0.
        for st in &base.lift.states {
            let map_j: Mobius<Jet<Real>> =
                st.map.convert(&|c: &Real| Jet::constant(Real::with_val(prec, c), 1));
            let xj = Jet::variable(x_val.clone(), 1);
            let f = map_j.eval(&xj).map_err(LiftError::Projective)?;
            let fp = map_j.derivative_at(&xj).map_err(LiftError::Projective)?;
            let one_j = xj.one_like();
            let g_of_x = one_j
                .sub(&xj.mul(&xj))
                .mul(&fp)
                .div(&one_j.sub(&f.mul(&f)));
            let d2 = Real::with_val(prec, &one_minus_x2 * &g_of_x.coeffs[1]).abs();
            g_22 = real_max(g_22, d2);
        }
        // Mixed derivative via t-jets at fixed real x.
        for st in &lift1.states {
            let xj = Jet::constant(x_val.clone(), 1);
            let f = st.map.eval(&xj).map_err(LiftError::Projective)?;
            let fp = st.map.derivative_at(&xj).map_err(LiftError::Projective)?;
            let one_j = xj.one_like();
            let g_of_t = one_j
                .sub(&xj.mul(&xj))
                .mul(&fp)
                .div(&one_j.sub(&f.mul(&f)));
            g_12 = real_max(g_12, g_of_t.coeffs[1].clone().abs());
        }
    }

    Ok(FirstOrderConstants {
        pi_min: pi_min.expect("nonempty"),
        pi_prime_max,
        pi_prime_sum,
        q_prime,
        transpose_prime,
        f_prime_param,
        ell_2,
        ell_22,
        ell_12,
        g_12,
        g_22,
        provenance: Provenance::BoundaryEstimated,
    })
}

/// The radius-free bound on |lambda'(t0) - (first derivative of the
/// (n, m) approximation)|, assembled exactly as the three blocks of the
/// first-order analysis: a rho^(n-1) tail block, an alpha(n, m)
/// truncation block, and a (rho D)^(m-1) truncation block.
pub fn first_order_bound(
    consts: &FirstOrderConstants,
    rho: &Real,
    rho_bar: &Real,
    transpose_bound: &Real,
    divisor: u32,
    n: usize,
    m: usize,
    prec: Precision,
) -> Result<Real, DerivativeError> {
    assert!(n >= 1 && m >= 2);
    let one = Real::with_val(prec, 1);
    let rho = Real::with_val(prec, rho);
    let rb = Real::with_val(prec, rho_bar);
    if rb <= rho {
        return Err(DerivativeError::OmegaViolated(
            "rho_bar must exceed rho".to_string(),
        ));
    }
    let d_bound = Real::with_val(prec, transpose_bound);
    let one_minus_rho = Real::with_val(prec, &one - &rho);
    let one_minus_rho2 = Real::with_val(prec, &one - &Real::with_val(prec, &rho * &rho));
    let artanh_rho = rho.clone().atanh();

    let xi = Real::with_val(prec, &consts.f_prime_param)
        / Real::with_val(prec, &one_minus_rho * &one_minus_rho2);
    let l_g = Real::with_val(prec, &consts.g_12)
        + Real::with_val(prec, &xi / &one_minus_rho2) * &consts.g_22;
    let a_tail = (Real::with_val(prec, &l_g / &rho) + &consts.q_prime)
        * Real::with_val(prec, &consts.ell_2)
        * &artanh_rho;
    let b_tail = (Real::with_val(prec, &consts.pi_prime_sum * &consts.ell_2)
        + &consts.ell_12
        + Real::with_val(prec, &xi * &consts.ell_22)
        + Real::with_val(prec, &xi * &consts.ell_2) / &one_minus_rho2)
        * &artanh_rho
        + Real::with_val(prec, &consts.f_prime_param * &consts.ell_2) / &one_minus_rho2;

    // Block 1: series tail.
    let block1 = ((Real::with_val(prec, n as u32) / &one_minus_rho
        + Real::with_val(prec, &rho / &Real::with_val(prec, &one_minus_rho * &one_minus_rho)))
        * &a_tail
        + Real::with_val(prec, &b_tail / &one_minus_rho))
        * pow_real(&rho, (n - 1) as u32);

    // Block 2: alpha(n, m) truncation block.
    let k_rb = real_min(k_rho(&rb, 8 - prec as i32), k_rho_ceiling(&rb));
    let rb_m = pow_real(&rb, (m - 1) as u32) * &k_rb;
    let alpha = alpha_series(&rb_m, n);
    let beta = |k: i64| -> Real {
        if k <= 0 {
            return Real::new(prec);
        }
        let k = k as u32;
        ((Real::with_val(prec, 2u32) * &consts.pi_prime_max
            + Real::with_val(prec, k + 1) * &consts.q_prime)
            / &consts.pi_min
            + Real::with_val(prec, 2 * k + 1) * &consts.f_prime_param
                / Real::with_val(prec, &rb - &rho))
            * 2u32
    };
    let rho_d = Real::with_val(prec, &rho * &d_bound);
    let rb_d = Real::with_val(prec, &rb * &d_bound);
    let log_rb_d = Real::with_val(prec, &one / Real::with_val(prec, &one - &rb_d)).ln();
    let block2 = ((beta(n as i64 - 2)
        + Real::with_val(prec, 2u32) * &consts.pi_prime_sum
        + (Real::with_val(prec, 4u32) * &consts.pi_prime_max
            + Real::with_val(prec, 2u32) * &consts.q_prime)
            / &consts.pi_min)
        * &log_rb_d
        + Real::with_val(prec, 2u32) * Real::with_val(prec, &rho * &consts.transpose_prime)
            / Real::with_val(prec, &one - &rho_d))
        * &alpha;

    // Block 3: (rho D)^(m-1) truncation block.
    let inner3 = Real::with_val(prec, &rho_d / &Real::with_val(prec, m as u32))
        * (Real::with_val(prec, 2 * (n as u32 - 1)) * &consts.pi_prime_sum
            + (Real::with_val(prec, 4u32) * &consts.pi_prime_max
                + Real::with_val(prec, n as u32) * &consts.q_prime)
                / &consts.pi_min)
        + Real::with_val(prec, &rho * &consts.transpose_prime)
        + Real::with_val(prec, &consts.f_prime_param * &d_bound)
            * Real::with_val(prec, &one - &pow_real(&rho, (n - 1) as u32))
            / Real::with_val(prec, &one_minus_rho2 * &one_minus_rho);
    let block3 = inner3 * pow_real(&rho_d, (m - 1) as u32)
        / Real::with_val(prec, &one - &rho_d);

    Ok((block1 + block2 + block3) / Real::with_val(prec, divisor))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kernel::partial_sum;

    fn e(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    /// One positive letter varying analytically: A(t) = [[2+(t-3), 1], [1, 2]]
    /// on the cone (0, inf) with a self-loop.
    pub(crate) fn toy_family() -> FamilySystem {
        FamilySystem {
            labels: vec!["a".to_string()],
            matrices: vec![Mat2::new(e("2 + (t - 3)"), e("1"), e("1"), e("2"))],
            chain_rows: vec![vec![e("1")]],
            chain_support: vec![vec![true]],
            cone_endpoints: vec![vec![(Some(e("0")), None)]],
            charts: None,
            base_divisor: 1,
        }
    }

    /// The two-letter block family with rotation-conjugation matrices and
    /// a wraparound cone (the second golden system, pre-reduced).
    pub(crate) fn two_letter_family() -> FamilySystem {
        FamilySystem {
            labels: vec!["xby".to_string(), "xy".to_string()],
            matrices: vec![
                // A_y * A_xbar(t)
                Mat2::new(
                    e("sqrt(3)*t^2/2"),
                    e("-1/2"),
                    e("1/2"),
                    e("sqrt(3)/(2*t^2)"),
                ),
                // A_y * A_x(t)
                Mat2::new(
                    e("-sqrt(3)*t^2/2"),
                    e("-1/2"),
                    e("1/2"),
                    e("-sqrt(3)/(2*t^2)"),
                ),
            ],
            chain_rows: vec![
                vec![e("1 - (1/2 + (t - 3))"), e("1/2 + (t - 3)")],
                vec![e("1 - (1/2 + (t - 3))"), e("1/2 + (t - 3)")],
            ],
            chain_support: vec![vec![true, true], vec![true, true]],
            cone_endpoints: vec![
                vec![(Some(e("sqrt(3)/9")), Some(e("-sqrt(3)/9")))],
                vec![(Some(e("sqrt(3)/9")), Some(e("-sqrt(3)/9")))],
            ],
            charts: None,
            base_divisor: 2,
        }
    }

    #[test]
    fn order_zero_series_equals_scalar_pipeline() {
        let prec = 128;
        let t0 = Real::with_val(prec, 3);
        let family = toy_family();
        let base = family_lift_at(&family, &t0, None).unwrap();
        let coeffs = derivative_series(&family, &t0, 0, 12, 8, None).unwrap();
        let scalar = partial_sum(&base.lift, 12, 8);
        // Bit-for-bit agreement of the order-0 jet run.
        assert_eq!(coeffs[0], scalar);
    }

    #[test]
    fn toy_first_derivative_matches_finite_differences() {
        let prec = 192;
        let t0 = Real::with_val(prec, 3);
        let family = toy_family();
        let coeffs = derivative_series(&family, &t0, 2, 60, 24, None).unwrap();
        let lambda_at = |t: f64| -> f64 {
            let tt = Real::with_val(prec, t);
            let base = family_lift_at(&family, &tt, None).unwrap();
            partial_sum(&base.lift, 60, 24).to_f64()
        };
        let h = 1e-5;
        let fd1 = (lambda_at(3.0 + h) - lambda_at(3.0 - h)) / (2.0 * h);
        assert!((coeffs[1].to_f64() - fd1).abs() < 1e-8, "jet={} fd={}", coeffs[1].to_f64(), fd1);
        let fd2 = (lambda_at(3.0 + h) - 2.0 * lambda_at(3.0) + lambda_at(3.0 - h)) / (h * h);
        assert!((coeffs[2].to_f64() * 2.0 - fd2).abs() < 1e-4);
    }

    #[test]
    fn coefficients_consistent_across_orders() {
        let prec = 128;
        let t0 = Real::with_val(prec, 3);
        let family = toy_family();
        let full = derivative_series(&family, &t0, 4, 40, 16, None).unwrap();
        for q in 0..=4usize {
            let partial = derivative_series(&family, &t0, q, 40, 16, None).unwrap();
            let diff = full[q].clone() - &partial[q];
            assert!(
                diff.abs().to_f64() < 2f64.powi(24 - prec as i32),
                "order {q}"
            );
        }
    }

    #[test]
    fn jet_stationarity_propagates() {
        // pi(t) Q(t) = pi(t) and sum pi(t) = 1, coefficientwise.
        let prec = 128;
        let t0 = Real::with_val(prec, 3);
        let family = two_letter_family();
        let base = family_lift_at(&family, &t0, None).unwrap();
        let lift = jet_lift(&family, &base, &t0, 3).unwrap();
        let nb = lift.chain.size();
        let tol = 2f64.powi(24 - prec as i32);
        for rp in 0..nb {
            let mut acc = lift.stationary[0].zero_like();
            for r in 0..nb {
                acc.acc_mul(&lift.stationary[r], lift.chain.entry(r, rp));
            }
            let diff = acc.sub(&lift.stationary[rp]);
            for c in &diff.coeffs {
                assert!(c.clone().abs().to_f64() < tol);
            }
        }
        let mut total = lift.stationary[0].zero_like();
        for pi in &lift.stationary {
            total = total.add(pi);
        }
        assert!((total.coeffs[0].to_f64() - 1.0).abs() < tol);
        for c in &total.coeffs[1..] {
            assert!(c.clone().abs().to_f64() < tol);
        }
    }

    #[test]
    fn two_letter_family_base_values() {
        // The block family reproduces the golden stationary structure at
        // the base point: 4 branch states, uniform stationary vector.
        let prec = 128;
        let t0 = Real::with_val(prec, 3);
        let family = two_letter_family();
        let base = family_lift_at(&family, &t0, None).unwrap();
        assert_eq!(base.lift.chain.size(), 4);
        assert_eq!(base.lift.divisor(), 2);
        for pi in &base.lift.stationary {
            assert!((pi.to_f64() - 0.25).abs() < 1e-30);
        }
        // f maps match the closed form (9u - t^2)/(9 t^2 (3u + t^2)) at
        // u = 0, t = 3: -1/81.
        let idx = base
            .lift
            .chain
            .labels()
            .iter()
            .position(|l| l.starts_with("xy.1|xy.1"))
            .unwrap();
        assert!((base.lift.states[idx].f_at_zero.to_f64() + 1.0 / 81.0).abs() < 1e-25);
    }

    #[test]
    fn constant_family_omega_maxima_match_center() {
        // For a family with no t dependence, every boundary maximum
        // equals its value at the center.
        let prec = 96;
        let family = FamilySystem {
            labels: vec!["a".to_string()],
            matrices: vec![Mat2::new(e("2"), e("1"), e("1"), e("2"))],
            chain_rows: vec![vec![e("1")]],
            chain_support: vec![vec![true]],
            cone_endpoints: vec![vec![(Some(e("0")), None)]],
            charts: None,
            base_divisor: 1,
        };
        let t0 = Real::with_val(prec, 3);
        let base = family_lift_at(&family, &t0, None).unwrap();
        let radius = Real::with_val(prec, 0.25);
        let rho_bar = Real::with_val(prec, 0.75);
        let report = check_omega(&family, &base, &t0, &radius, &rho_bar, prec).unwrap();
        assert!(report.all_ok());
        // Q row sums are exactly 1; pi = 1.
        assert!((report.estimated.q_bar.to_f64() - 1.0).abs() < 1e-20);
        assert!((report.estimated.m_sigma_pi.to_f64() - 1.0).abs() < 1e-20);
        assert!((report.estimated.m_pi_min.to_f64() - 1.0).abs() < 1e-20);
        // D matches |gamma/delta| at the center: gamma = 0 for this
        // symmetric matrix.
        assert!(report.estimated.d_bar.to_f64() < 1e-20);
        // max |f| over the closed unit disk equals the real endpoint
        // value max(|f(1)|, |f(-1)|) = 1/3 for [[2,1],[1,2]].
        assert!((report.max_abs_f.to_f64() - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn taylor_constant_family_vanishing_derivatives() {
        let prec = 128;
        let family = FamilySystem {
            labels: vec!["a".to_string()],
            matrices: vec![Mat2::new(e("2"), e("1"), e("1"), e("2"))],
            chain_rows: vec![vec![e("1")]],
            chain_support: vec![vec![true]],
            cone_endpoints: vec![vec![(Some(e("0")), None)]],
            charts: None,
            base_divisor: 1,
        };
        let t0 = Real::with_val(prec, 3);
        let base = family_lift_at(&family, &t0, None).unwrap();
        let radius = Real::with_val(prec, 0.25);
        let rho_bar = Real::with_val(prec, 0.75);
        let report = check_omega(&family, &base, &t0, &radius, &rho_bar, prec).unwrap();
        assert!(report.all_ok());
        let eps = Real::with_val(prec, 1e-10);
        let result = taylor(&family, &t0, 3, &eps, &report.estimated, prec, None).unwrap();
        for (q, (a, b)) in result
            .coefficients
            .iter()
            .zip(&result.bounds)
            .enumerate()
            .skip(1)
        {
            assert!(a.to_f64().abs() < 1e-25, "a_{q} = {}", a.to_f64());
            assert!(b.to_f64() < 1e-10);
        }
        // a_0 within its bound of the scalar value.
        let scalar = partial_sum(&base.lift, result.run_params.0, result.run_params.1);
        assert!((result.coefficients[0].clone() - scalar).abs().to_f64() < 1e-25);
    }

    #[test]
    fn derivative_bound_degenerations() {
        let prec = 128;
        let omega = OmegaData {
            t0: Real::with_val(prec, 3),
            radius: Real::with_val(prec, 0.2),
            rho_bar: Real::with_val(prec, 0.05),
            q_bar: Real::with_val(prec, 1.1),
            d_bar: Real::with_val(prec, 0.4),
            m_ell: Real::with_val(prec, 0.4),
            m_sigma_pi: Real::with_val(prec, 1.2),
            m_pi_min: Real::with_val(prec, 0.09),
            provenance: Provenance::UserCertified,
        };
        // n = 1, m = 2: alpha = 0 and the (n-1) term vanishes, leaving
        // q! Q/(c^q d) Msp Ml artanh(rb) rb/(rb(1-rb Q)).
        let b = derivative_error_bound(&omega, 2, 1, 1, 2, prec).unwrap();
        let one = Real::with_val(prec, 1);
        let rb = omega.rho_bar.clone();
        let qb = omega.q_bar.clone();
        let expect = Real::with_val(prec, &qb / &omega.radius)
            * Real::with_val(prec, &omega.m_sigma_pi * &omega.m_ell)
            * rb.clone().atanh()
            * Real::with_val(prec, &rb / &rb)
            / (Real::with_val(prec, &one - Real::with_val(prec, &rb * &qb)))
            / 2u32;
        let rel = (Real::with_val(prec, &b - &expect)).abs() / &expect;
        assert!(rel.to_f64() < 1e-25, "b={} expect={}", b.to_f64(), expect.to_f64());
        // Bound decreases in both n and m.
        let b1 = derivative_error_bound(&omega, 2, 1, 10, 12, prec).unwrap();
        let b2 = derivative_error_bound(&omega, 2, 1, 20, 24, prec).unwrap();
        assert!(b2 < b1 && b1 < b);
        // Summability violation is loud.
        let mut bad = omega.clone();
        bad.q_bar = Real::with_val(prec, 30);
        assert!(matches!(
            derivative_error_bound(&bad, 2, 1, 5, 5, prec),
            Err(DerivativeError::SummabilityViolated(_))
        ));
    }

    #[test]
    fn order_zero_cauchy_bound_is_looser_than_direct_bound() {
        // The q = 0 specialization of the disk bound also bounds
        // |lambda - partial sum|, but the dedicated truncation bound is
        // sharper; check both the ordering and that both are genuine
        // bounds against a much finer run.
        let prec = 128;
        let t0 = Real::with_val(prec, 3);
        let family = two_letter_family();
        let base = family_lift_at(&family, &t0, None).unwrap();
        let radius = Real::with_val(prec, 0.2);
        let rho_bar = Real::with_val(prec, 0.05);
        let report = check_omega(&family, &base, &t0, &radius, &rho_bar, prec).unwrap();
        assert!(report.all_ok());
        let (n, m) = (8usize, 8usize);
        let cauchy =
            derivative_error_bound(&report.estimated, base.lift.divisor(), 0, n, m, prec).unwrap();
        let direct = crate::certify::error_bound(&base.consts, n, m)
            .mul_small(1, 1);
        assert!(direct < cauchy, "direct {} vs cauchy {}", direct.to_f64(), cauchy.to_f64());
        let coarse = crate::kernel::partial_sum(&base.lift, n, m);
        let fine = crate::kernel::partial_sum(&base.lift, 60, 40);
        let err = coarse.sub(&fine).mag_f64().abs();
        assert!(err <= direct.to_f64() && err <= cauchy.to_f64());
    }

    #[test]
    fn first_order_bound_tighter_than_cauchy_here() {
        // On the block family the radius-free first-order bound lands in
        // the same regime as the Cauchy q = 1 bound; record the ordering
        // claim by checking both dominate the observed truncation error.
        let prec = 128;
        let t0 = Real::with_val(prec, 3);
        let family = two_letter_family();
        let base = family_lift_at(&family, &t0, None).unwrap();
        let consts = estimate_first_order_constants(&family, &base, &t0, prec, 48).unwrap();
        let rho = Real::with_val(prec, &base.lift.rho);
        let rho_bar = Real::with_val(prec, 0.05);
        let d = Real::with_val(prec, &base.lift.transpose_bound);
        let (n, m) = (10usize, 8usize);
        let first = first_order_bound(&consts, &rho, &rho_bar, &d, base.lift.divisor(), n, m, prec)
            .unwrap();
        let report = check_omega(&family, &base, &t0, &Real::with_val(prec, 0.2), &rho_bar, prec)
            .unwrap();
        let cauchy =
            derivative_error_bound(&report.estimated, base.lift.divisor(), 1, n, m, prec).unwrap();
        let d1_coarse = derivative_series(&family, &t0, 1, n, m, None).unwrap()[1].clone();
        let d1_fine = derivative_series(&family, &t0, 1, 60, 40, None).unwrap()[1].clone();
        let err = (d1_coarse - &d1_fine).abs().to_f64();
        assert!(err <= first.to_f64());
        assert!(err <= cauchy.to_f64());
        // Both shrink with the truncation.
        let first_big =
            first_order_bound(&consts, &rho, &rho_bar, &d, base.lift.divisor(), 30, 20, prec)
                .unwrap();
        assert!(first_big < first);
    }

    #[test]
    fn first_order_bound_behaviour() {
        let prec = 128;
        let t0 = Real::with_val(prec, 3);
        let family = toy_family();
        let base = family_lift_at(&family, &t0, None).unwrap();
        let consts = estimate_first_order_constants(&family, &base, &t0, prec, 64).unwrap();
        assert_eq!(consts.provenance, Provenance::BoundaryEstimated);
        let rho = Real::with_val(prec, &base.lift.rho);
        let rho_bar = Real::with_val(prec, (rho.to_f64() + 1.0) / 2.0);
        let d = Real::with_val(prec, &base.lift.transpose_bound);
        let b_small = first_order_bound(&consts, &rho, &rho_bar, &d, 1, 10, 8, prec).unwrap();
        let b_large = first_order_bound(&consts, &rho, &rho_bar, &d, 1, 40, 30, prec).unwrap();
        assert!(b_large < b_small);
        assert!(b_large.to_f64() > 0.0);
        // The bound really covers the first-derivative truncation error:
        // compare a crude (n, m) approximation of lambda'.
        let d1_coarse = derivative_series(&family, &t0, 1, 10, 8, None).unwrap()[1].clone();
        let d1_fine = derivative_series(&family, &t0, 1, 80, 40, None).unwrap()[1].clone();
        let err = (d1_coarse - &d1_fine).abs();
        let bound_coarse =
            first_order_bound(&consts, &rho, &rho_bar, &d, 1, 10, 8, prec).unwrap();
        assert!(err < bound_coarse);
        // All-zero first-order data collapses blocks 1-2 derivative parts.
        let zeroed = FirstOrderConstants {
            pi_prime_max: Real::new(prec),
            pi_prime_sum: Real::new(prec),
            q_prime: Real::new(prec),
            transpose_prime: Real::new(prec),
            f_prime_param: Real::new(prec),
            g_12: Real::new(prec),
            g_22: Real::new(prec),
            ell_12: Real::new(prec),
            ..consts
        };
        let b0 = first_order_bound(&zeroed, &rho, &rho_bar, &d, 1, 10, 8, prec).unwrap();
        assert!(b0.to_f64() == 0.0);
    }
}

