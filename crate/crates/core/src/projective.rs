//! 2x2 matrices, Moebius transformations, the conjugation that turns a
//! positive matrix into a self-map of [-1, 1], and points/arcs of the real
//! projective line with exact membership and containment tests.
//!
//! Arcs are stored as frames: a nonsingular 2x2 matrix whose columns span
//! the arc as their set of nonnegative combinations. Membership and strict
//! containment then reduce to sign tests on 2x2 solves, which are exact
//! over rationals and loud (never silently wrong) over floats.

use crate::numeric::{NumericError, Scalar, Sign, SignScalar};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ProjectiveError {
    #[error("matrix is singular")]
    Singular,
    #[error("Moebius evaluation hit a pole")]
    Pole,
    #[error("degenerate arc (equal endpoints)")]
    DegenerateArc,
    #[error("containment cannot be certified: {0}")]
    CannotCertify(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// A 2x2 matrix over any scalar kind (or entry type).
#[derive(Debug, Clone, PartialEq)]
pub struct Mat2<S> {
    pub a: S,
    pub b: S,
    pub c: S,
    pub d: S,
}

impl<S> Mat2<S> {
    pub fn new(a: S, b: S, c: S, d: S) -> Self {
        Mat2 { a, b, c, d }
    }
}

impl<S: Scalar> Mat2<S> {
    pub fn identity_like(proto: &S) -> Self {
        Mat2 {
            a: proto.one_like(),
            b: proto.zero_like(),
            c: proto.zero_like(),
            d: proto.one_like(),
        }
    }

    pub fn det(&self) -> S {
        self.a.mul(&self.d).sub(&self.b.mul(&self.c))
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        Mat2 {
            a: self.a.mul(&o.a).add(&self.b.mul(&o.c)),
            b: self.a.mul(&o.b).add(&self.b.mul(&o.d)),
            c: self.c.mul(&o.a).add(&self.d.mul(&o.c)),
            d: self.c.mul(&o.b).add(&self.d.mul(&o.d)),
        }
    }

    pub fn scale(&self, s: &S) -> Self {
        Mat2 {
            a: self.a.mul(s),
            b: self.b.mul(s),
            c: self.c.mul(s),
            d: self.d.mul(s),
        }
    }

    pub fn neg(&self) -> Self {
        Mat2 {
            a: self.a.neg(),
            b: self.b.neg(),
            c: self.c.neg(),
            d: self.d.neg(),
        }
    }

    /// Inverse, exact up to the scalar kind's arithmetic.
    pub fn inverse(&self) -> Result<Self, ProjectiveError> {
        let det = self.det();
        if det.is_zero() {
            return Err(ProjectiveError::Singular);
        }
        let inv = det.one_like().div(&det);
        Ok(Mat2 {
            a: self.d.mul(&inv),
            b: self.b.neg().mul(&inv),
            c: self.c.neg().mul(&inv),
            d: self.a.mul(&inv),
        })
    }

    /// Apply to a column vector.
    pub fn apply_vec(&self, v: &(S, S)) -> (S, S) {
        (
            self.a.mul(&v.0).add(&self.b.mul(&v.1)),
            self.c.mul(&v.0).add(&self.d.mul(&v.1)),
        )
    }

    /// Conjugate by the change of basis sending the nonnegative cone to
    /// the interval [-1, 1] in the slope chart: the result's Moebius
    /// action on [-1, 1] mirrors `self`'s projective action on the cone.
    /// Equals (1/2) [[a-b-c+d, a+b-c-d], [a-b+c-d, a+b+c+d]].
    pub fn interval_conjugate(&self) -> Mat2<S> {
        let apd = self.a.add(&self.d);
        let bpc = self.b.add(&self.c);
        let amd = self.a.sub(&self.d);
        let bmc = self.b.sub(&self.c);
        Mat2 {
            a: apd.sub(&bpc).mul_small(1, 2),
            b: amd.add(&bmc).mul_small(1, 2),
            c: amd.sub(&bmc).mul_small(1, 2),
            d: apd.add(&bpc).mul_small(1, 2),
        }
    }

    /// Entrywise strict sign: `Pos`/`Neg` when all four entries share a
    /// strict sign, error otherwise.
    pub fn uniform_sign(&self) -> Result<Sign, ProjectiveError>
    where
        S: SignScalar,
    {
        let signs = [
            self.a.sign_strict()?,
            self.b.sign_strict()?,
            self.c.sign_strict()?,
            self.d.sign_strict()?,
        ];
        if signs.iter().all(|&s| s == Sign::Pos) {
            Ok(Sign::Pos)
        } else if signs.iter().all(|&s| s == Sign::Neg) {
            Ok(Sign::Neg)
        } else {
            Err(ProjectiveError::CannotCertify(
                "matrix entries do not have a uniform strict sign".to_string(),
            ))
        }
    }

    pub fn convert<T: Scalar>(&self, f: &impl Fn(&S) -> T) -> Mat2<T> {
        Mat2 {
            a: f(&self.a),
            b: f(&self.b),
            c: f(&self.c),
            d: f(&self.d),
        }
    }
}

/// A Moebius transformation x -> (alpha x + beta) / (gamma x + delta).
#[derive(Debug, Clone, PartialEq)]
pub struct Mobius<S> {
    pub alpha: S,
    pub beta: S,
    pub gamma: S,
    pub delta: S,
}

impl<S: Scalar> Mobius<S> {
    /// Read the coefficients off a matrix (rows = numerator, denominator).
    pub fn from_mat2(m: &Mat2<S>) -> Self {
        Mobius {
            alpha: m.a.clone(),
            beta: m.b.clone(),
            gamma: m.c.clone(),
            delta: m.d.clone(),
        }
    }

    pub fn identity_like(proto: &S) -> Self {
        Mobius {
            alpha: proto.one_like(),
            beta: proto.zero_like(),
            gamma: proto.zero_like(),
            delta: proto.one_like(),
        }
    }

    pub fn eval(&self, x: &S) -> Result<S, ProjectiveError> {
        let den = self.gamma.mul(x).add(&self.delta);
        if den.is_zero() || den.mag_f64() == 0.0 {
            return Err(ProjectiveError::Pole);
        }
        Ok(self.alpha.mul(x).add(&self.beta).div(&den))
    }

    /// Derivative (alpha delta - beta gamma) / (gamma x + delta)^2.
    pub fn derivative_at(&self, x: &S) -> Result<S, ProjectiveError> {
        let den = self.gamma.mul(x).add(&self.delta);
        if den.is_zero() || den.mag_f64() == 0.0 {
            return Err(ProjectiveError::Pole);
        }
        let num = self.alpha.mul(&self.delta).sub(&self.beta.mul(&self.gamma));
        Ok(num.div(&den.mul(&den)))
    }

    /// The transposed transformation: swap the off-diagonal coefficients.
    pub fn transpose(&self) -> Self {
        Mobius {
            alpha: self.alpha.clone(),
            beta: self.gamma.clone(),
            gamma: self.beta.clone(),
            delta: self.delta.clone(),
        }
    }

    pub fn convert<T: Scalar>(&self, f: &impl Fn(&S) -> T) -> Mobius<T> {
        Mobius {
            alpha: f(&self.alpha),
            beta: f(&self.beta),
            gamma: f(&self.gamma),
            delta: f(&self.delta),
        }
    }
}

/// A point of the real projective line, stored as a representative vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjPoint<S: Scalar> {
    pub v1: S,
    pub v2: S,
}

impl<S: Scalar> ProjPoint<S> {
    pub fn new(v1: S, v2: S) -> Self {
        assert!(
            !(v1.is_zero() && v2.is_zero()),
            "projective point needs a nonzero representative"
        );
        ProjPoint { v1, v2 }
    }

    /// The point of finite slope s, represented as [s; 1].
    pub fn from_slope(s: &S) -> Self {
        ProjPoint {
            v1: s.clone(),
            v2: s.one_like(),
        }
    }

    /// The point at infinity, [1; 0].
    pub fn infinity_like(proto: &S) -> Self {
        ProjPoint {
            v1: proto.one_like(),
            v2: proto.zero_like(),
        }
    }

    pub fn is_infinity(&self) -> bool {
        self.v2.is_zero()
    }

    /// Slope coordinate v1/v2; `None` at infinity.
    pub fn slope(&self) -> Option<S> {
        if self.v2.is_zero() {
            None
        } else {
            Some(self.v1.div(&self.v2))
        }
    }

    /// Projective equality: representatives are parallel.
    pub fn same_point(&self, o: &Self) -> bool {
        self.v1.mul(&o.v2).sub(&self.v2.mul(&o.v1)).is_zero()
    }

    pub fn apply(&self, m: &Mat2<S>) -> Self {
        let (v1, v2) = m.apply_vec(&(self.v1.clone(), self.v2.clone()));
        ProjPoint { v1, v2 }
    }
}

/// The chart x -> [(1+x)/2 ; (1-x)/2] from [-1, 1] onto the nonnegative
/// cone of the projective line.
pub fn simplex_chart<S: Scalar>(x: &S) -> ProjPoint<S> {
    let one = x.one_like();
    ProjPoint {
        v1: one.add(x).mul_small(1, 2),
        v2: one.sub(x).mul_small(1, 2),
    }
}

/// Inverse of [`simplex_chart`]: [v1; v2] -> (v1 - v2)/(v1 + v2).
pub fn simplex_chart_inv<S: Scalar>(p: &ProjPoint<S>) -> Result<S, ProjectiveError> {
    let den = p.v1.add(&p.v2);
    if den.is_zero() || (p.v1.prec_bits() > 0 && den.mag_f64() == 0.0) {
        return Err(ProjectiveError::Pole);
    }
    Ok(p.v1.sub(&p.v2).div(&den))
}

/// A closed proper arc of the projective line: the nonnegative span of
/// the two frame columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc<S: Scalar> {
    frame: Mat2<S>,
}

impl<S: Scalar + SignScalar> Arc<S> {
    pub fn from_frame(frame: Mat2<S>) -> Result<Self, ProjectiveError> {
        match frame.det().sign_strict() {
            Ok(Sign::Zero) | Err(_) => Err(ProjectiveError::DegenerateArc),
            _ => Ok(Arc { frame }),
        }
    }

    pub fn frame(&self) -> &Mat2<S> {
        &self.frame
    }

    pub fn endpoints(&self) -> (ProjPoint<S>, ProjPoint<S>) {
        (
            ProjPoint::new(self.frame.a.clone(), self.frame.c.clone()),
            ProjPoint::new(self.frame.b.clone(), self.frame.d.clone()),
        )
    }

    /// Solve frame * x = representative and classify by coordinate signs.
    fn cone_coordinates(&self, p: &ProjPoint<S>) -> Result<(Sign, Sign), ProjectiveError> {
        // Cramer's rule; only the signs matter, so the determinant's sign
        // is factored in rather than divided out.
        let det_sign = self.frame.det().sign_strict()?;
        let x1 = p.v1.mul(&self.frame.d).sub(&self.frame.b.mul(&p.v2));
        let x2 = self.frame.a.mul(&p.v2).sub(&p.v1.mul(&self.frame.c));
        let s1 = x1.sign_strict()?;
        let s2 = x2.sign_strict()?;
        let fix = |s: Sign| if det_sign == Sign::Neg { s.flip() } else { s };
        Ok((fix(s1), fix(s2)))
    }

    /// Membership of a projective point; with `strict`, membership in the
    /// interior.
    pub fn contains(&self, p: &ProjPoint<S>, strict: bool) -> Result<bool, ProjectiveError> {
        let (s1, s2) = self.cone_coordinates(p)?;
        Ok(match (s1, s2) {
            (Sign::Pos, Sign::Pos) | (Sign::Neg, Sign::Neg) => true,
            (Sign::Zero, Sign::Zero) => unreachable!("nonzero representative"),
            (Sign::Zero, _) | (_, Sign::Zero) => !strict,
            _ => false,
        })
    }

    /// Two arcs describe the same point set.
    pub fn same_arc(&self, o: &Self) -> Result<bool, ProjectiveError> {
        let (p, q) = self.endpoints();
        let (u, v) = o.endpoints();
        let ends_match =
            (p.same_point(&u) && q.same_point(&v)) || (p.same_point(&v) && q.same_point(&u));
        if !ends_match {
            return Ok(false);
        }
        // Same endpoints leave two complementary candidates; compare an
        // interior point.
        let mid = ProjPoint::new(
            self.frame.a.add(&self.frame.b),
            self.frame.c.add(&self.frame.d),
        );
        o.contains(&mid, true)
    }

    pub fn convert<T: Scalar + SignScalar>(
        &self,
        f: &impl Fn(&S) -> T,
    ) -> Result<Arc<T>, ProjectiveError> {
        Arc::from_frame(self.frame.convert(f))
    }
}

/// Certify that `m` maps the closure of `source` into the interior of
/// `target`, by checking that `target_frame^-1 * m * source_frame` has a
/// uniform strict entry sign. Returns that sign. An indeterminate sign at
/// working precision is an error, never a silent decision.
pub fn strict_containment<S: Scalar + SignScalar>(
    target: &Arc<S>,
    m: &Mat2<S>,
    source: &Arc<S>,
) -> Result<Sign, ProjectiveError> {
    let t_inv = target.frame().inverse()?;
    let composed = t_inv.mul_mat(m).mul_mat(source.frame());
    composed.uniform_sign()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{parse_rational, Rational, Real};

    fn q(s: &str) -> Rational {
        parse_rational(s).unwrap()
    }

    fn qm(a: &str, b: &str, c: &str, d: &str) -> Mat2<Rational> {
        Mat2::new(q(a), q(b), q(c), q(d))
    }

    #[test]
    fn interval_conjugate_formula() {
        let id = Mat2::identity_like(&Rational::from(1));
        assert_eq!(id.interval_conjugate(), id);

        // Hand-multiplied triple product for [[1,0],[1,4]].
        let m = qm("1", "0", "1", "4");
        let f = m.interval_conjugate();
        assert_eq!(f, qm("2", "-2", "-1", "3"));
    }

    #[test]
    fn mobius_eval_and_transpose() {
        let id = Mobius::identity_like(&Rational::from(1));
        assert_eq!(id.eval(&q("3/10")).unwrap(), q("3/10"));
        assert_eq!(id.transpose(), id);

        // x -> 1/x at 2 has derivative -1/4.
        let inv = Mobius {
            alpha: q("0"),
            beta: q("1"),
            gamma: q("1"),
            delta: q("0"),
        };
        assert_eq!(inv.derivative_at(&q("2")).unwrap(), q("-1/4"));

        // A symmetric coefficient matrix is fixed by transposition.
        let sym = Mobius {
            alpha: q("2"),
            beta: q("3"),
            gamma: q("3"),
            delta: q("5"),
        };
        assert_eq!(sym.transpose(), sym);

        // Pole detection.
        assert!(inv.eval(&q("0")).is_err());
    }

    #[test]
    fn simplex_chart_endpoints() {
        let zero = Rational::new();
        let p = simplex_chart(&zero);
        assert!(p.same_point(&ProjPoint::new(q("1"), q("1"))));
        let p = simplex_chart(&q("1"));
        assert!(p.same_point(&ProjPoint::new(q("1"), q("0"))));
        let p = simplex_chart(&q("-1"));
        assert!(p.same_point(&ProjPoint::new(q("0"), q("1"))));
        // Round trip.
        for x in ["-1", "-2/3", "0", "1/7", "1"] {
            let x = q(x);
            assert_eq!(simplex_chart_inv(&simplex_chart(&x)).unwrap(), x);
        }
        assert!(simplex_chart_inv(&ProjPoint::new(q("1"), q("-1"))).is_err());
    }

    #[test]
    fn chart_conjugation_matches_projective_action() {
        // psi^-1([m] psi(x)) agrees with the Moebius of the conjugated
        // matrix, on a spread of rational points and matrices.
        let mats = [
            qm("1", "0", "1", "4"),
            qm("4", "3", "1", "1"),
            qm("2", "1", "1", "3"),
            qm("1", "-3", "-1", "4"),
        ];
        let xs = ["-9/10", "-1/3", "0", "2/5", "9/10"];
        for m in &mats {
            let f = Mobius::from_mat2(&m.interval_conjugate());
            for xs in &xs {
                let x = q(xs);
                let image = simplex_chart(&x).apply(m);
                let via_chart = simplex_chart_inv(&image).unwrap();
                let via_mobius = f.eval(&x).unwrap();
                assert_eq!(via_chart, via_mobius);
            }
        }
    }

    #[test]
    fn positive_matrix_denominator_positive_on_interval() {
        // For invertible nonnegative matrices, the conjugated denominator
        // c x + d stays positive on [-1, 1]; check at the endpoints.
        let mats = [
            qm("1", "0", "1", "4"),
            qm("4", "3", "1", "1"),
            qm("1/3", "2", "5", "1/7"),
            qm("0", "1", "1", "0"),
        ];
        for m in &mats {
            let f = m.interval_conjugate();
            let at_one = f.c.add(&f.d);
            let at_minus_one = f.d.sub(&f.c);
            assert_eq!(at_one.sign_strict().unwrap(), Sign::Pos, "{m:?}");
            assert_eq!(at_minus_one.sign_strict().unwrap(), Sign::Pos, "{m:?}");
        }
    }

    #[test]
    fn arc_membership() {
        // The nonnegative cone as an arc.
        let cone = Arc::from_frame(Mat2::identity_like(&Rational::from(1))).unwrap();
        assert!(cone
            .contains(&ProjPoint::from_slope(&q("1")), true)
            .unwrap());
        assert!(cone
            .contains(&ProjPoint::from_slope(&q("0")), false)
            .unwrap());
        assert!(!cone
            .contains(&ProjPoint::from_slope(&q("0")), true)
            .unwrap());
        assert!(!cone
            .contains(&ProjPoint::from_slope(&q("-1")), false)
            .unwrap());

        // The interval (-5/12, 31/30) as an arc.
        let arc = Arc::from_frame(qm("-5/12", "31/30", "1", "1")).unwrap();
        assert!(arc
            .contains(&ProjPoint::from_slope(&q("-5/43")), true)
            .unwrap());
        assert!(!arc
            .contains(&ProjPoint::from_slope(&q("2")), false)
            .unwrap());
    }

    #[test]
    fn wrapped_arc_membership() {
        // Slopes outside [-1, 1], through infinity.
        let arc = Arc::from_frame(qm("1", "1", "1", "-1")).unwrap();
        assert!(arc.contains(&ProjPoint::from_slope(&q("5")), true).unwrap());
        assert!(arc
            .contains(&ProjPoint::from_slope(&q("-7/2")), true)
            .unwrap());
        assert!(arc
            .contains(&ProjPoint::infinity_like(&Rational::from(1)), true)
            .unwrap());
        assert!(!arc.contains(&ProjPoint::from_slope(&q("0")), false).unwrap());
        assert!(!arc
            .contains(&ProjPoint::from_slope(&q("1/2")), false)
            .unwrap());
    }

    #[test]
    fn strict_containment_basics() {
        let cone = Arc::from_frame(Mat2::identity_like(&Rational::from(1))).unwrap();
        let pos = qm("2", "1", "1", "3");
        assert_eq!(strict_containment(&cone, &pos, &cone).unwrap(), Sign::Pos);

        // Identity cannot map a strictly larger arc inside a smaller one.
        let small = Arc::from_frame(qm("-5/12", "31/30", "1", "1")).unwrap();
        let big = Arc::from_frame(qm("-1", "2", "1", "1")).unwrap();
        let id = Mat2::identity_like(&Rational::from(1));
        assert!(strict_containment(&small, &id, &big).is_err());
    }

    #[test]
    fn containment_agrees_with_pointwise_membership() {
        // Cross-check on rational instances: success iff endpoints and
        // midpoint of the image land strictly inside the target.
        let sources = [
            qm("-5/12", "31/30", "1", "1"),
            qm("0", "1", "1", "1"),
            qm("1", "1", "1", "-1"),
        ];
        let targets = [
            qm("-1", "2", "1", "1"),
            qm("-13", "-13/10", "1", "1"),
            qm("1", "2", "1", "1"),
        ];
        let maps = [
            qm("1", "0", "1", "4"),
            qm("4", "3", "1", "1"),
            qm("1", "-3", "-1", "4"),
        ];
        for sf in &sources {
            let source = Arc::from_frame(sf.clone()).unwrap();
            for tf in &targets {
                let target = Arc::from_frame(tf.clone()).unwrap();
                for m in &maps {
                    let verdict = strict_containment(&target, m, &source).is_ok();
                    // Pointwise oracle: the image arc sits strictly inside
                    // the target iff its endpoints do and neither target
                    // endpoint lies on the image.
                    let image = Arc::from_frame(m.mul_mat(sf)).unwrap();
                    let (i1, i2) = image.endpoints();
                    let (t1, t2) = target.endpoints();
                    let oracle = target.contains(&i1, true).unwrap()
                        && target.contains(&i2, true).unwrap()
                        && !image.contains(&t1, false).unwrap()
                        && !image.contains(&t2, false).unwrap();
                    assert_eq!(verdict, oracle, "m={m:?} src={sf:?} tgt={tf:?}");
                    if verdict {
                        // Necessary direction of the sampling check: the
                        // image of the source midpoint is inside too.
                        let mid = ProjPoint::new(sf.a.add(&sf.b), sf.c.add(&sf.d));
                        assert!(target.contains(&mid.apply(m), true).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn real_contraction_extends_to_unit_disk() {
        // A Moebius map with f([-1,1]) inside [-rho, rho] satisfies
        // |f(z)| <= rho on the whole closed unit disk; sample the circle.
        use crate::numeric::Complex;
        let prec = 128;
        let mats = [
            qm("2", "1/3", "1/2", "3"),
            qm("5", "1", "2", "7/2"),
            qm("1483/522", "3751/2900", "3875/2349", "1127/522"),
        ];
        for m in &mats {
            let f_q = Mobius::from_mat2(&m.interval_conjugate());
            let one = Rational::from(1);
            let rho = {
                let a = f_q.eval(&one).unwrap().abs();
                let b = f_q.eval(&-one.clone()).unwrap().abs();
                if a > b {
                    a
                } else {
                    b
                }
            };
            assert!(rho < 1);
            let f = f_q.convert(&|q| Complex::from_real(Real::with_val(prec, q)));
            let rho_r = Real::with_val(prec, &rho);
            let two_pi = Real::with_val(prec, rug::float::Constant::Pi) * 2u32;
            for k in 0..64 {
                let theta = Real::with_val(prec, &two_pi) * Real::with_val(prec, k as u32)
                    / Real::with_val(prec, 64);
                let z = Complex::new(theta.clone().cos(), theta.sin());
                let v = f.eval(&z).unwrap().abs();
                let slack = Real::with_val(prec, Real::i_exp(1, -100));
                assert!(v <= Real::with_val(prec, &rho_r + &slack), "{m:?}");
            }
            // And the transposed map contracts at the origin.
            let t = f_q.transpose();
            assert!(t.eval(&Rational::new()).unwrap().abs() < 1);
        }
    }

    #[test]
    fn float_mode_indeterminate_is_loud() {
        let p = 64;
        let r = |x: f64| Real::with_val(p, x);
        let tiny = Real::with_val(p, Real::i_exp(1, 16 - 64 - 4));
        let m = Mat2::new(r(1.0), tiny, r(0.5), r(2.0));
        assert!(m.uniform_sign().is_err());
    }
}
