//! Scalar arithmetic shared by the whole pipeline: exact rationals,
//! configurable-precision reals (MPFR-backed), complex numbers, and
//! outward-rounded intervals, together with the traits that let the rest
//! of the crate run generically over any of them (including truncated
//! Taylor jets, see [`crate::family::Jet`]).
//!
//! Precision is carried by every value (in bits); binary operations work
//! at the larger precision of the two operands. All MPFR operations are
//! correctly rounded to nearest in the plain `Real` mode; the `Interval`
//! mode rounds outward instead and is rigorous end-to-end.

use rug::float::Round;
use rug::ops::{AssignRound, NegAssign};
use std::fmt;

/// Exact rational numbers (GMP-backed). Always stored in lowest terms
/// with a positive denominator.
pub type Rational = rug::Rational;

/// Arbitrary-size integers (GMP-backed).
pub type Integer = rug::Integer;

/// Binary floating-point numbers with per-value precision (MPFR-backed).
/// Operations round to nearest.
pub type Real = rug::Float;

/// Working precision in bits.
pub type Precision = u32;

/// Default working precision: enough to reproduce the shipped golden
/// values well beyond double precision.
pub const DEFAULT_PRECISION: Precision = 128;

/// Minimum accepted precision.
pub const MIN_PRECISION: Precision = 24;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum NumericError {
    #[error("cannot parse {0:?} as a rational number (expected \"n\" or \"n/d\")")]
    BadRational(String),
    #[error("cannot parse {0:?} as a real number")]
    BadReal(String),
    #[error("precision {0} below the minimum of {min}", min = MIN_PRECISION)]
    PrecisionTooLow(Precision),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("sign of a quantity is indeterminate at working precision")]
    IndeterminateSign,
}

/// Sign of a scalar, as decided by [`SignScalar::sign_strict`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Neg,
    Zero,
    Pos,
}

impl Sign {
    pub fn flip(self) -> Sign {
        match self {
            Sign::Neg => Sign::Pos,
            Sign::Zero => Sign::Zero,
            Sign::Pos => Sign::Neg,
        }
    }
}

/// Parse "n" or "n/d" into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational, NumericError> {
    let t = s.trim();
    // rug rejects zero denominators at parse time.
    t.parse::<Rational>()
        .map_err(|_| NumericError::BadRational(s.to_string()))
}

/// Parse a decimal string into a `Real` at precision `prec`.
pub fn parse_real(s: &str, prec: Precision) -> Result<Real, NumericError> {
    let parsed = Real::parse(s.trim()).map_err(|_| NumericError::BadReal(s.to_string()))?;
    Ok(Real::with_val(prec, parsed))
}

/// Convert an exact rational to a `Real` at precision `prec` (correctly
/// rounded, hence exact whenever representable).
pub fn rational_to_real(q: &Rational, prec: Precision) -> Real {
    Real::with_val(prec, q)
}

/// Inverse hyperbolic tangent. Errors outside (-1, 1).
pub fn artanh(x: &Real) -> Result<Real, NumericError> {
    if x.clone().abs() >= 1 {
        return Err(NumericError::Domain(format!(
            "artanh requires |x| < 1, got {}",
            x.to_f64()
        )));
    }
    Ok(x.clone().atanh())
}

/// Hyperbolic distance on (-1, 1): `2 |artanh x - artanh y|`.
pub fn hyperbolic_distance(x: &Real, y: &Real) -> Result<Real, NumericError> {
    let mut d = artanh(x)?;
    d -= artanh(y)?;
    d.abs_mut();
    Ok(d * 2u32)
}

/// Symmetric absolute tolerance used by floating-mode sign tests.
pub fn sign_tolerance(prec: Precision) -> Real {
    Real::with_val(prec, Real::i_exp(1, 16 - prec as i32))
}

/// Ring/field operations every pipeline scalar provides. Implemented for
/// `Rational`, `Real`, `Complex`, `Interval`, and jets over these.
pub trait Scalar: Clone + PartialEq + fmt::Debug + Send + Sync + 'static {
    /// Working precision in bits (0 for exact types).
    fn prec_bits(&self) -> Precision;
    fn zero_like(&self) -> Self;
    fn one_like(&self) -> Self;
    /// The value of `q` in this scalar kind, at this value's precision.
    fn of_rational(&self, q: &Rational) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    /// `self += a * b`. The one operation the kernel iteration is made of.
    fn acc_mul(&mut self, a: &Self, b: &Self);
    /// `self * num / den` with small exact factors.
    fn mul_small(&self, num: u32, den: u32) -> Self;
    fn is_zero(&self) -> bool;
    /// Crude magnitude, used only for pivot selection.
    fn mag_f64(&self) -> f64;

    fn of_u32(&self, k: u32) -> Self {
        self.of_rational(&Rational::from(k))
    }
    fn pow_u32(&self, mut e: u32) -> Self {
        let mut base = self.clone();
        let mut acc = self.one_like();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }
}

/// Scalars with a decidable strict sign. Exact for rationals; floating
/// values within [`sign_tolerance`] of zero are reported indeterminate
/// rather than silently classified.
pub trait SignScalar: Scalar {
    fn sign_strict(&self) -> Result<Sign, NumericError>;
    /// Upper bound for |self| as a `Real` at precision `prec`.
    fn abs_upper(&self, prec: Precision) -> Real;
    /// Lower bound for |self| as a `Real` at precision `prec`.
    fn abs_lower(&self, prec: Precision) -> Real;
}

/// Scalars supporting the analytic operations the series pipeline needs.
pub trait AnalyticScalar: Scalar {
    /// Natural logarithm. Pipeline call sites guarantee applicability
    /// (positive constant term / nonvanishing modulus).
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn atanh(&self) -> Self;
}

/// Conversion from an exact rational at a requested precision; the bridge
/// from exact validation data into the analytic stage.
pub trait FromRationalPrec: Sized {
    fn from_rational_prec(q: &Rational, prec: Precision) -> Self;
}

// ---------------------------------------------------------------------------
// Rational
// ---------------------------------------------------------------------------

impl Scalar for Rational {
    fn prec_bits(&self) -> Precision {
        0
    }
    fn zero_like(&self) -> Self {
        Rational::new()
    }
    fn one_like(&self) -> Self {
        Rational::from(1)
    }
    fn of_rational(&self, q: &Rational) -> Self {
        q.clone()
    }
    fn add(&self, o: &Self) -> Self {
        Rational::from(self + o)
    }
    fn sub(&self, o: &Self) -> Self {
        Rational::from(self - o)
    }
    fn mul(&self, o: &Self) -> Self {
        Rational::from(self * o)
    }
    fn div(&self, o: &Self) -> Self {
        assert!(!o.is_zero(), "exact division by zero");
        Rational::from(self / o)
    }
    fn neg(&self) -> Self {
        Rational::from(-self)
    }
    fn acc_mul(&mut self, a: &Self, b: &Self) {
        *self += a.mul(b);
    }
    fn mul_small(&self, num: u32, den: u32) -> Self {
        Rational::from(self * Rational::from((num, den)))
    }
    fn is_zero(&self) -> bool {
        self.cmp0() == std::cmp::Ordering::Equal
    }
    fn mag_f64(&self) -> f64 {
        self.to_f64().abs()
    }
}

impl SignScalar for Rational {
    fn sign_strict(&self) -> Result<Sign, NumericError> {
        Ok(match self.cmp0() {
            std::cmp::Ordering::Less => Sign::Neg,
            std::cmp::Ordering::Equal => Sign::Zero,
            std::cmp::Ordering::Greater => Sign::Pos,
        })
    }
    fn abs_upper(&self, prec: Precision) -> Real {
        let mut r = Real::new(prec);
        r.assign_round(Rational::from(self.clone().abs()), Round::Up);
        r
    }
    fn abs_lower(&self, prec: Precision) -> Real {
        let mut r = Real::new(prec);
        r.assign_round(Rational::from(self.clone().abs()), Round::Down);
        r
    }
}

impl FromRationalPrec for Rational {
    fn from_rational_prec(q: &Rational, _prec: Precision) -> Self {
        q.clone()
    }
}

// ---------------------------------------------------------------------------
// Real
// ---------------------------------------------------------------------------

impl Scalar for Real {
    fn prec_bits(&self) -> Precision {
        self.prec()
    }
    fn zero_like(&self) -> Self {
        Real::new(self.prec())
    }
    fn one_like(&self) -> Self {
        Real::with_val(self.prec(), 1)
    }
    fn of_rational(&self, q: &Rational) -> Self {
        Real::with_val(self.prec(), q)
    }
    fn add(&self, o: &Self) -> Self {
        Real::with_val(self.prec().max(o.prec()), self + o)
    }
    fn sub(&self, o: &Self) -> Self {
        Real::with_val(self.prec().max(o.prec()), self - o)
    }
    fn mul(&self, o: &Self) -> Self {
        Real::with_val(self.prec().max(o.prec()), self * o)
    }
    fn div(&self, o: &Self) -> Self {
        Real::with_val(self.prec().max(o.prec()), self / o)
    }
    fn neg(&self) -> Self {
        Real::with_val(self.prec(), -self)
    }
    fn acc_mul(&mut self, a: &Self, b: &Self) {
        *self += a * b;
    }
    fn mul_small(&self, num: u32, den: u32) -> Self {
        let mut r = Real::with_val(self.prec(), self * num);
        r /= den;
        r
    }
    fn is_zero(&self) -> bool {
        Real::is_zero(self)
    }
    fn mag_f64(&self) -> f64 {
        self.to_f64().abs()
    }
}

impl SignScalar for Real {
    fn sign_strict(&self) -> Result<Sign, NumericError> {
        let tol = sign_tolerance(self.prec());
        if Real::is_zero(self) {
            return Ok(Sign::Zero);
        }
        if self.clone().abs() <= tol {
            return Err(NumericError::IndeterminateSign);
        }
        Ok(if self.is_sign_positive() {
            Sign::Pos
        } else {
            Sign::Neg
        })
    }
    fn abs_upper(&self, prec: Precision) -> Real {
        let mut r = Real::new(prec);
        r.assign_round(self.clone().abs(), Round::Up);
        r
    }
    fn abs_lower(&self, prec: Precision) -> Real {
        let mut r = Real::new(prec);
        r.assign_round(self.clone().abs(), Round::Down);
        r
    }
}

impl AnalyticScalar for Real {
    fn ln(&self) -> Self {
        self.clone().ln()
    }
    fn sqrt(&self) -> Self {
        self.clone().sqrt()
    }
    fn atanh(&self) -> Self {
        self.clone().atanh()
    }
}

impl FromRationalPrec for Real {
    fn from_rational_prec(q: &Rational, prec: Precision) -> Self {
        Real::with_val(prec, q)
    }
}

// ---------------------------------------------------------------------------
// Complex
// ---------------------------------------------------------------------------

/// Complex numbers over `Real`, at the precision of their parts.
#[derive(Clone, PartialEq)]
pub struct Complex {
    pub re: Real,
    pub im: Real,
}

impl fmt::Debug for Complex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} + {}i)", self.re.to_f64(), self.im.to_f64())
    }
}

impl Complex {
    pub fn new(re: Real, im: Real) -> Self {
        Complex { re, im }
    }
    pub fn from_real(re: Real) -> Self {
        let im = Real::new(re.prec());
        Complex { re, im }
    }
    /// |self|, computed as a hypotenuse.
    pub fn abs(&self) -> Real {
        self.re.clone().hypot(&self.im)
    }
    pub fn arg(&self) -> Real {
        self.im.clone().atan2(&self.re)
    }
    pub fn conj(&self) -> Self {
        Complex {
            re: self.re.clone(),
            im: Scalar::neg(&self.im),
        }
    }
    pub fn scale(&self, s: &Real) -> Self {
        Complex {
            re: Scalar::mul(&self.re, s),
            im: Scalar::mul(&self.im, s),
        }
    }
}

impl Scalar for Complex {
    fn prec_bits(&self) -> Precision {
        self.re.prec().max(self.im.prec())
    }
    fn zero_like(&self) -> Self {
        Complex {
            re: self.re.zero_like(),
            im: self.im.zero_like(),
        }
    }
    fn one_like(&self) -> Self {
        Complex {
            re: self.re.one_like(),
            im: self.im.zero_like(),
        }
    }
    fn of_rational(&self, q: &Rational) -> Self {
        Complex {
            re: self.re.of_rational(q),
            im: self.im.zero_like(),
        }
    }
    fn add(&self, o: &Self) -> Self {
        Complex {
            re: self.re.add(&o.re),
            im: self.im.add(&o.im),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        Complex {
            re: self.re.sub(&o.re),
            im: self.im.sub(&o.im),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        let p = self.prec_bits().max(o.prec_bits());
        let re = Real::with_val(p, &self.re * &o.re) - Real::with_val(p, &self.im * &o.im);
        let im = Real::with_val(p, &self.re * &o.im) + Real::with_val(p, &self.im * &o.re);
        Complex {
            re: Real::with_val(p, re),
            im: Real::with_val(p, im),
        }
    }
    fn div(&self, o: &Self) -> Self {
        let p = self.prec_bits().max(o.prec_bits());
        let den = Real::with_val(p, &o.re * &o.re) + Real::with_val(p, &o.im * &o.im);
        let num = self.mul(&o.conj());
        Complex {
            re: Real::with_val(p, &num.re / &den),
            im: Real::with_val(p, &num.im / &den),
        }
    }
    fn neg(&self) -> Self {
        Complex {
            re: Scalar::neg(&self.re),
            im: Scalar::neg(&self.im),
        }
    }
    fn acc_mul(&mut self, a: &Self, b: &Self) {
        self.re += &a.re * &b.re;
        self.re -= &a.im * &b.im;
        self.im += &a.re * &b.im;
        self.im += &a.im * &b.re;
    }
    fn mul_small(&self, num: u32, den: u32) -> Self {
        Complex {
            re: self.re.mul_small(num, den),
            im: self.im.mul_small(num, den),
        }
    }
    fn is_zero(&self) -> bool {
        Real::is_zero(&self.re) && Real::is_zero(&self.im)
    }
    fn mag_f64(&self) -> f64 {
        self.re.to_f64().hypot(self.im.to_f64())
    }
}

impl AnalyticScalar for Complex {
    /// Principal branch.
    fn ln(&self) -> Self {
        Complex {
            re: self.abs().ln(),
            im: self.arg(),
        }
    }
    fn sqrt(&self) -> Self {
        // Principal square root via modulus/argument halving.
        let r = self.abs().sqrt();
        let half_arg = self.arg() / 2u32;
        let p = self.prec_bits();
        Complex {
            re: Real::with_val(p, half_arg.clone().cos() * &r),
            im: Real::with_val(p, half_arg.sin() * &r),
        }
    }
    fn atanh(&self) -> Self {
        let one = self.one_like();
        let ratio = one.add(self).div(&one.sub(self));
        ratio.ln().mul_small(1, 2)
    }
}

impl FromRationalPrec for Complex {
    fn from_rational_prec(q: &Rational, prec: Precision) -> Self {
        Complex {
            re: Real::with_val(prec, q),
            im: Real::new(prec),
        }
    }
}

// ---------------------------------------------------------------------------
// Interval
// ---------------------------------------------------------------------------

/// Closed interval [lo, hi] with outward rounding on every operation.
/// Both endpoints carry the same precision.
#[derive(Clone, PartialEq)]
pub struct Interval {
    lo: Real,
    hi: Real,
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo.to_f64(), self.hi.to_f64())
    }
}

fn round_to(prec: Precision, v: Real, dir: Round) -> Real {
    let mut r = Real::new(prec);
    r.assign_round(v, dir);
    r
}

impl Interval {
    pub fn point(x: Real) -> Self {
        Interval {
            lo: x.clone(),
            hi: x,
        }
    }
    pub fn new(lo: Real, hi: Real) -> Self {
        assert!(lo <= hi, "inverted interval endpoints");
        Interval { lo, hi }
    }
    pub fn lo(&self) -> &Real {
        &self.lo
    }
    pub fn hi(&self) -> &Real {
        &self.hi
    }
    pub fn midpoint(&self) -> Real {
        let p = self.prec_bits();
        Real::with_val(p, &self.lo + &self.hi) / 2u32
    }
    /// Half the width, rounded up.
    pub fn radius_upper(&self) -> Real {
        let p = self.prec_bits();
        let mut w = Real::new(p);
        w.assign_round(Real::with_val(p + 8, &self.hi - &self.lo) / 2u32, Round::Up);
        w
    }
    pub fn contains_real(&self, x: &Real) -> bool {
        self.lo <= *x && *x <= self.hi
    }
    fn binop(
        &self,
        o: &Self,
        f: impl Fn(&Real, &Real) -> Real,
        candidates: &[(bool, bool)],
    ) -> Self {
        let p = self.prec_bits().max(o.prec_bits());
        let mut lo: Option<Real> = None;
        let mut hi: Option<Real> = None;
        for &(a_hi, b_hi) in candidates {
            let a = if a_hi { &self.hi } else { &self.lo };
            let b = if b_hi { &o.hi } else { &o.lo };
            let v = f(a, b);
            let vd = round_to(p, v.clone(), Round::Down);
            let vu = round_to(p, v, Round::Up);
            lo = Some(match lo {
                None => vd,
                Some(c) => if vd < c { vd } else { c },
            });
            hi = Some(match hi {
                None => vu,
                Some(c) => if vu > c { vu } else { c },
            });
        }
        Interval {
            lo: lo.unwrap(),
            hi: hi.unwrap(),
        }
    }
}

impl Scalar for Interval {
    fn prec_bits(&self) -> Precision {
        self.lo.prec().max(self.hi.prec())
    }
    fn zero_like(&self) -> Self {
        Interval::point(Real::new(self.prec_bits()))
    }
    fn one_like(&self) -> Self {
        Interval::point(Real::with_val(self.prec_bits(), 1))
    }
    fn of_rational(&self, q: &Rational) -> Self {
        Interval::from_rational_prec(q, self.prec_bits())
    }
    fn add(&self, o: &Self) -> Self {
        let p = self.prec_bits().max(o.prec_bits());
        Interval {
            lo: {
                let mut r = Real::new(p);
                r.assign_round(&self.lo + &o.lo, Round::Down);
                r
            },
            hi: {
                let mut r = Real::new(p);
                r.assign_round(&self.hi + &o.hi, Round::Up);
                r
            },
        }
    }
    fn sub(&self, o: &Self) -> Self {
        let p = self.prec_bits().max(o.prec_bits());
        Interval {
            lo: {
                let mut r = Real::new(p);
                r.assign_round(&self.lo - &o.hi, Round::Down);
                r
            },
            hi: {
                let mut r = Real::new(p);
                r.assign_round(&self.hi - &o.lo, Round::Up);
                r
            },
        }
    }
    fn mul(&self, o: &Self) -> Self {
        let p = self.prec_bits().max(o.prec_bits()) + 4;
        self.binop(
            o,
            |a, b| Real::with_val(p, a * b),
            &[(false, false), (false, true), (true, false), (true, true)],
        )
    }
    fn div(&self, o: &Self) -> Self {
        assert!(
            o.lo.is_sign_positive() && !Real::is_zero(&o.lo)
                || o.hi.is_sign_negative() && !Real::is_zero(&o.hi),
            "interval division by an interval containing zero"
        );
        let p = self.prec_bits().max(o.prec_bits()) + 4;
        self.binop(
            o,
            |a, b| Real::with_val(p, a / b),
            &[(false, false), (false, true), (true, false), (true, true)],
        )
    }
    fn neg(&self) -> Self {
        let mut lo = self.hi.clone();
        let mut hi = self.lo.clone();
        lo.neg_assign();
        hi.neg_assign();
        Interval { lo, hi }
    }
    fn acc_mul(&mut self, a: &Self, b: &Self) {
        *self = self.add(&a.mul(b));
    }
    fn mul_small(&self, num: u32, den: u32) -> Self {
        let q = Rational::from((num, den));
        self.mul(&Interval::from_rational_prec(&q, self.prec_bits()))
    }
    fn is_zero(&self) -> bool {
        Real::is_zero(&self.lo) && Real::is_zero(&self.hi)
    }
    fn mag_f64(&self) -> f64 {
        self.midpoint().to_f64().abs()
    }
}

impl SignScalar for Interval {
    fn sign_strict(&self) -> Result<Sign, NumericError> {
        if self.lo.is_sign_positive() && !Real::is_zero(&self.lo) {
            Ok(Sign::Pos)
        } else if self.hi.is_sign_negative() && !Real::is_zero(&self.hi) {
            Ok(Sign::Neg)
        } else if Real::is_zero(&self.lo) && Real::is_zero(&self.hi) {
            Ok(Sign::Zero)
        } else {
            Err(NumericError::IndeterminateSign)
        }
    }
    fn abs_upper(&self, prec: Precision) -> Real {
        let a = self.lo.clone().abs();
        let b = self.hi.clone().abs();
        round_to(prec, if a > b { a } else { b }, Round::Up)
    }
    fn abs_lower(&self, prec: Precision) -> Real {
        if self.lo.is_sign_negative() && self.hi.is_sign_positive() {
            return Real::new(prec);
        }
        let a = self.lo.clone().abs();
        let b = self.hi.clone().abs();
        round_to(prec, if a < b { a } else { b }, Round::Down)
    }
}

impl AnalyticScalar for Interval {
    fn ln(&self) -> Self {
        assert!(
            self.lo.is_sign_positive() && !Real::is_zero(&self.lo),
            "interval ln requires a strictly positive interval"
        );
        let p = self.prec_bits();
        let mut lo = self.lo.clone();
        lo.ln_round(Round::Down);
        let mut hi = self.hi.clone();
        hi.ln_round(Round::Up);
        Interval {
            lo: round_to(p, lo, Round::Down),
            hi: round_to(p, hi, Round::Up),
        }
    }
    fn sqrt(&self) -> Self {
        assert!(!self.lo.is_sign_negative(), "interval sqrt of a negative interval");
        let p = self.prec_bits();
        let mut lo = self.lo.clone();
        lo.sqrt_round(Round::Down);
        let mut hi = self.hi.clone();
        hi.sqrt_round(Round::Up);
        Interval {
            lo: round_to(p, lo, Round::Down),
            hi: round_to(p, hi, Round::Up),
        }
    }
    fn atanh(&self) -> Self {
        let p = self.prec_bits();
        let mut lo = self.lo.clone();
        lo.atanh_round(Round::Down);
        let mut hi = self.hi.clone();
        hi.atanh_round(Round::Up);
        Interval {
            lo: round_to(p, lo, Round::Down),
            hi: round_to(p, hi, Round::Up),
        }
    }
}

impl FromRationalPrec for Interval {
    fn from_rational_prec(q: &Rational, prec: Precision) -> Self {
        let mut lo = Real::new(prec);
        lo.assign_round(q, Round::Down);
        let mut hi = Real::new(prec);
        hi.assign_round(q, Round::Up);
        Interval { lo, hi }
    }
}

// ---------------------------------------------------------------------------
// Shared linear solve
// ---------------------------------------------------------------------------

/// Solve `A x = b` by Gaussian elimination with partial pivoting by crude
/// magnitude. Works over any `Scalar` whose divisions along the way are
/// well defined (exact rationals, reals, complexes, jets with invertible
/// constant terms).
pub fn gaussian_solve<S: Scalar>(a: &[Vec<S>], b: &[S]) -> Result<Vec<S>, NumericError> {
    let n = a.len();
    assert!(a.iter().all(|row| row.len() == n) && b.len() == n);
    let mut m: Vec<Vec<S>> = a.to_vec();
    let mut rhs: Vec<S> = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                m[i][col]
                    .mag_f64()
                    .partial_cmp(&m[j][col].mag_f64())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if m[pivot][col].is_zero() || m[pivot][col].mag_f64() == 0.0 {
            return Err(NumericError::Domain(
                "singular matrix in linear solve".to_string(),
            ));
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        let inv_diag = m[col][col].one_like().div(&m[col][col]);
        for row in (col + 1)..n {
            if m[row][col].is_zero() {
                continue;
            }
            let factor = m[row][col].mul(&inv_diag);
            for k in col..n {
                let t = factor.mul(&m[col][k]);
                m[row][k] = m[row][k].sub(&t);
            }
            let t = factor.mul(&rhs[col]);
            rhs[row] = rhs[row].sub(&t);
        }
    }
    let mut x: Vec<S> = vec![rhs[0].zero_like(); n];
    for col in (0..n).rev() {
        let mut acc = rhs[col].clone();
        for k in (col + 1)..n {
            let t = m[col][k].mul(&x[k]);
            acc = acc.sub(&t);
        }
        x[col] = acc.div(&m[col][col]);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_parsing() {
        assert_eq!(parse_rational("279/359").unwrap(), Rational::from((279, 359)));
        assert_eq!(parse_rational("-5/12").unwrap(), Rational::from((-5, 12)));
        assert_eq!(parse_rational(" 7 ").unwrap(), Rational::from(7));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
    }

    #[test]
    fn rational_to_real_contract() {
        // Dyadic rationals convert exactly.
        let half = rational_to_real(&Rational::from((1, 2)), 53);
        assert_eq!(half, Real::with_val(53, 0.5));
        // 1/3 at 53 bits: relative error below 2^-52.
        let third = rational_to_real(&Rational::from((1, 3)), 53);
        let err = (Real::with_val(200, &third) - Real::with_val(200, Rational::from((1, 3))))
            .abs()
            / Real::with_val(200, Rational::from((1, 3)));
        assert!(err < Real::with_val(53, Real::i_exp(1, -52)));
        // The golden contraction factor.
        let rho = rational_to_real(&Rational::from((279, 359)), 128);
        assert!((rho.to_f64() - 0.777158).abs() < 1e-6);
    }

    #[test]
    fn artanh_values() {
        let p = 128;
        assert!(Real::is_zero(&artanh(&Real::new(p)).unwrap()));
        // artanh(1/2) = ln(3)/2.
        let v = artanh(&Real::with_val(p, 0.5)).unwrap();
        let oracle = Real::with_val(p, 3).ln() / 2u32;
        let diff = Real::with_val(p, &v - &oracle).abs();
        assert!(diff < Real::with_val(p, Real::i_exp(1, -120)));
        // Inverse pair: artanh(tanh 1) = 1.
        let v = artanh(&Real::with_val(p, 1).tanh()).unwrap();
        let diff = Real::with_val(p, &v - 1u32).abs();
        assert!(diff < Real::with_val(p, Real::i_exp(1, -110)));
        // Domain error at the boundary.
        assert!(artanh(&Real::with_val(p, 1)).is_err());
    }

    #[test]
    fn real_sign_tolerance() {
        let p = 64;
        let x = Real::with_val(p, Real::i_exp(1, 16 - 64 - 2));
        assert_eq!(x.sign_strict(), Err(NumericError::IndeterminateSign));
        let y = Real::with_val(p, 0.25);
        assert_eq!(y.sign_strict(), Ok(Sign::Pos));
    }

    #[test]
    fn interval_outward() {
        let p = 53;
        let third = Interval::from_rational_prec(&Rational::from((1, 3)), p);
        assert!(third.lo() < third.hi());
        let x = third.mul(&third);
        let exact = Rational::from((1, 9));
        assert!(x.lo() < &Real::with_val(100, &exact) && &Real::with_val(100, &exact) < x.hi());
        // Signs.
        assert_eq!(third.sign_strict(), Ok(Sign::Pos));
        let straddle = Interval::new(Real::with_val(p, -1), Real::with_val(p, 1));
        assert!(straddle.sign_strict().is_err());
    }

    #[test]
    fn complex_field_ops() {
        let p = 128;
        let i = Complex::new(Real::new(p), Real::with_val(p, 1));
        let m1 = i.mul(&i);
        assert!((m1.re.to_f64() + 1.0).abs() < 1e-30 && m1.im.to_f64().abs() < 1e-30);
        let z = Complex::new(Real::with_val(p, 3), Real::with_val(p, 4));
        assert!((z.abs().to_f64() - 5.0).abs() < 1e-30);
        let w = z.div(&z);
        assert!((w.re.to_f64() - 1.0).abs() < 1e-30 && w.im.to_f64().abs() < 1e-30);
        // ln(e) = 1 on the real axis.
        let e = Complex::from_real(Real::with_val(p, 1).exp());
        let l = e.ln();
        assert!((l.re.to_f64() - 1.0).abs() < 1e-30 && l.im.to_f64().abs() < 1e-30);
    }

    #[test]
    fn gaussian_solve_rational() {
        // 2x2 exact solve.
        let q = |n: i32, d: i32| Rational::from((n, d));
        let a = vec![vec![q(2, 1), q(1, 1)], vec![q(1, 1), q(3, 1)]];
        let b = vec![q(5, 1), q(10, 1)];
        let x = gaussian_solve(&a, &b).unwrap();
        assert_eq!(x[0], q(1, 1));
        assert_eq!(x[1], q(3, 1));
        // Singular matrix errors.
        let a = vec![vec![q(1, 1), q(2, 1)], vec![q(2, 1), q(4, 1)]];
        assert!(gaussian_solve(&a, &b).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn small_rational() -> impl Strategy<Value = Rational> {
            (-200i32..=200, 1u32..=120).prop_map(|(n, d)| Rational::from((n, d)))
        }

        proptest! {
            #[test]
            fn rational_arithmetic_is_exact(a in small_rational(), b in small_rational()) {
                prop_assert_eq!(a.add(&b).sub(&b), a.clone());
                if !b.is_zero() {
                    prop_assert_eq!(a.mul(&b).div(&b), a);
                }
            }

            #[test]
            fn hyperbolic_distance_triangle(
                xs in proptest::collection::vec(-95i32..=95, 3)
            ) {
                let p = 96;
                let pt = |k: i32| Real::with_val(p, Rational::from((k, 100)));
                let (a, b, c) = (pt(xs[0]), pt(xs[1]), pt(xs[2]));
                let dab = hyperbolic_distance(&a, &b).unwrap();
                let dba = hyperbolic_distance(&b, &a).unwrap();
                prop_assert_eq!(&dab, &dba);
                let dac = hyperbolic_distance(&a, &c).unwrap();
                let dcb = hyperbolic_distance(&c, &b).unwrap();
                let slack = Real::with_val(p, Real::i_exp(1, -80));
                prop_assert!(dab <= Real::with_val(p, &dac + &dcb) + slack);
            }

            #[test]
            fn jet_like_field_ops_on_reals(a in -1e3f64..1e3, b in -1e3f64..1e3) {
                prop_assume!(b.abs() > 1e-6);
                let p = 128;
                let (ra, rb) = (Real::with_val(p, a), Real::with_val(p, b));
                // Multiplying and dividing back is within an ulp scale.
                let back = ra.mul(&rb).div(&rb);
                let diff = back.sub(&ra).mag_f64().abs();
                prop_assert!(diff <= a.abs() * 2f64.powi(-100) + 2f64.powi(-120));
            }
        }
    }

    #[test]
    fn hyperbolic_distance_metric_properties() {
        let p = 96;
        let pts: Vec<Real> = [-0.9, -0.3, 0.1, 0.45, 0.8]
            .iter()
            .map(|&x| Real::with_val(p, x))
            .collect();
        for a in &pts {
            for b in &pts {
                let dab = hyperbolic_distance(a, b).unwrap();
                let dba = hyperbolic_distance(b, a).unwrap();
                assert_eq!(dab, dba);
                for c in &pts {
                    let dac = hyperbolic_distance(a, c).unwrap();
                    let dcb = hyperbolic_distance(c, b).unwrap();
                    assert!(dab <= Real::with_val(p, &dac + &dcb) + Real::with_val(p, Real::i_exp(1, -80)));
                }
            }
        }
    }
}
