//! Analytic one-parameter families: a small expression language for
//! matrix and probability entries as functions of a parameter t, and
//! truncated Taylor (jet) arithmetic used to push derivatives of any
//! order through the whole pipeline.

use crate::numeric::{
    AnalyticScalar, Complex, FromRationalPrec, NumericError, Precision, Rational, Real, Scalar,
    Sign, SignScalar,
};
use std::fmt;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum FamilyError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier {0:?}")]
    UnknownIdentifier(String),
    #[error("domain error in evaluation: {0}")]
    Domain(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Expression tree over rational/decimal constants, the parameter t,
/// field operations, integer powers, sqrt, and log.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Constant(Rational),
    Parameter,
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, i32),
    Sqrt(Box<Expr>),
    Log(Box<Expr>),
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, FamilyError> {
        Err(FamilyError::Syntax {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, FamilyError> {
        let mut acc = self.term()?;
        loop {
            if self.eat(b'+') {
                acc = Expr::Add(Box::new(acc), Box::new(self.term()?));
            } else if self.eat(b'-') {
                acc = Expr::Sub(Box::new(acc), Box::new(self.term()?));
            } else {
                return Ok(acc);
            }
        }
    }

    // term := factor (('*'|'/') factor)*
    // A quotient of two constants is folded into an exact rational
    // literal, so "a/b" is a literal and printing round-trips.
    fn term(&mut self) -> Result<Expr, FamilyError> {
        let mut acc = self.factor()?;
        loop {
            if self.eat(b'*') {
                acc = Expr::Mul(Box::new(acc), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                let rhs = self.factor()?;
                acc = match (acc, rhs) {
                    (Expr::Constant(a), Expr::Constant(b)) if !b.is_zero() => {
                        Expr::Constant(Rational::from(&a / &b))
                    }
                    (a, b) => Expr::Div(Box::new(a), Box::new(b)),
                };
            } else {
                return Ok(acc);
            }
        }
    }

    // factor := '-' factor | power; negated constants fold to literals.
    fn factor(&mut self) -> Result<Expr, FamilyError> {
        if self.eat(b'-') {
            return Ok(match self.factor()? {
                Expr::Constant(q) => Expr::Constant(-q),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.power()
    }

    // power := atom ('^' signed-integer)?
    fn power(&mut self) -> Result<Expr, FamilyError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let neg = self.eat(b'-');
            let start = self.pos;
            while self
                .bytes
                .get(self.pos)
                .map_or(false, |c| c.is_ascii_digit())
            {
                self.pos += 1;
            }
            if start == self.pos {
                return self.err("expected integer exponent");
            }
            let digits = &self.src[start..self.pos];
            let e: i32 = digits
                .parse()
                .map_err(|_| FamilyError::Syntax {
                    offset: start,
                    message: "exponent out of range".to_string(),
                })?;
            return Ok(Expr::Pow(Box::new(base), if neg { -e } else { e }));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, FamilyError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return self.err("expected ')'");
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self
                    .bytes
                    .get(self.pos)
                    .map_or(false, |c| c.is_ascii_alphanumeric() || *c == b'_')
                {
                    self.pos += 1;
                }
                let name = &self.src[start..self.pos];
                match name {
                    "t" => Ok(Expr::Parameter),
                    "sqrt" | "log" => {
                        if !self.eat(b'(') {
                            return self.err(format!("expected '(' after {name}"));
                        }
                        let arg = self.expr()?;
                        if !self.eat(b')') {
                            return self.err("expected ')'");
                        }
                        Ok(if name == "sqrt" {
                            Expr::Sqrt(Box::new(arg))
                        } else {
                            Expr::Log(Box::new(arg))
                        })
                    }
                    _ => Err(FamilyError::UnknownIdentifier(name.to_string())),
                }
            }
            Some(_) => self.err("unexpected character"),
            None => self.err("unexpected end of input"),
        }
    }

    // Integer or decimal literal (scientific notation allowed), parsed
    // exactly into a rational.
    fn number(&mut self) -> Result<Expr, FamilyError> {
        use rug::ops::Pow;
        let start = self.pos;
        let mut seen_dot = false;
        while let Some(&c) = self.bytes.get(self.pos) {
            if c.is_ascii_digit() {
                self.pos += 1;
            } else if c == b'.' && !seen_dot {
                seen_dot = true;
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        if text.is_empty() || text == "." {
            return self.err("expected a number");
        }
        let q = if seen_dot {
            let dot = text.find('.').unwrap();
            let digits: String = text.chars().filter(|c| *c != '.').collect();
            let frac_len = text.len() - dot - 1;
            let num: rug::Integer = digits.parse().map_err(|_| FamilyError::Syntax {
                offset: start,
                message: "bad decimal".to_string(),
            })?;
            Rational::from(num) / Rational::from(rug::Integer::from(10).pow(frac_len as u32))
        } else {
            text.parse::<Rational>().map_err(|_| FamilyError::Syntax {
                offset: start,
                message: "bad integer".to_string(),
            })?
        };
        // Optional exponent: consume only when a well-formed exponent
        // follows, leaving a bare 'e' to the caller otherwise.
        if let Some(&e) = self.bytes.get(self.pos) {
            if e == b'e' || e == b'E' {
                let mut probe = self.pos + 1;
                let neg = matches!(self.bytes.get(probe), Some(b'-') | Some(b'+'))
                    && self.bytes[probe] == b'-';
                if matches!(self.bytes.get(probe), Some(b'-') | Some(b'+')) {
                    probe += 1;
                }
                let digits_start = probe;
                while self.bytes.get(probe).map_or(false, |c| c.is_ascii_digit()) {
                    probe += 1;
                }
                if probe > digits_start {
                    let exp: u32 =
                        self.src[digits_start..probe]
                            .parse()
                            .map_err(|_| FamilyError::Syntax {
                                offset: digits_start,
                                message: "exponent out of range".to_string(),
                            })?;
                    self.pos = probe;
                    let scale = Rational::from(rug::Integer::from(10).pow(exp));
                    return Ok(Expr::Constant(if neg { q / scale } else { q * scale }));
                }
            }
        }
        Ok(Expr::Constant(q))
    }
}

impl Expr {
    /// Parse with standard precedence: power, then unary minus, then
    /// products/quotients, then sums. "a/b" on constants stays exact.
    pub fn parse(text: &str) -> Result<Expr, FamilyError> {
        let mut p = Parser {
            src: text,
            bytes: text.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return p.err("trailing input");
        }
        Ok(e)
    }

    /// True when the tree never mentions the parameter.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Constant(_) => true,
            Expr::Parameter => false,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.is_constant() && b.is_constant()
            }
            Expr::Neg(a) | Expr::Sqrt(a) | Expr::Log(a) => a.is_constant(),
            Expr::Pow(a, _) => a.is_constant(),
        }
    }

    /// Evaluate over any scalar kind supporting sqrt and log; the
    /// parameter value is substituted for t. Division by zero, sqrt of
    /// a negative, and log of a non-positive value are domain errors
    /// (decided by sign where available, by constant-term magnitude for
    /// jets and complexes).
    pub fn eval<S: ExprScalar>(&self, t: &S) -> Result<S, FamilyError> {
        match self {
            Expr::Constant(q) => Ok(t.of_rational(q)),
            Expr::Parameter => Ok(t.clone()),
            Expr::Add(a, b) => Ok(a.eval(t)?.add(&b.eval(t)?)),
            Expr::Sub(a, b) => Ok(a.eval(t)?.sub(&b.eval(t)?)),
            Expr::Mul(a, b) => Ok(a.eval(t)?.mul(&b.eval(t)?)),
            Expr::Div(a, b) => {
                let denom = b.eval(t)?;
                if !denom.invertible() {
                    return Err(FamilyError::Domain("division by zero".to_string()));
                }
                Ok(a.eval(t)?.div(&denom))
            }
            Expr::Neg(a) => Ok(a.eval(t)?.neg()),
            Expr::Pow(a, e) => {
                let base = a.eval(t)?;
                if *e >= 0 {
                    Ok(base.pow_u32(*e as u32))
                } else {
                    if !base.invertible() {
                        return Err(FamilyError::Domain(
                            "negative power of zero".to_string(),
                        ));
                    }
                    Ok(base.one_like().div(&base.pow_u32((-e) as u32)))
                }
            }
            Expr::Sqrt(a) => a.eval(t)?.checked_sqrt(),
            Expr::Log(a) => a.eval(t)?.checked_ln(),
        }
    }

    /// Exact rational evaluation; errors if the tree needs sqrt/log of a
    /// non-perfect-square / any value, or hits a zero denominator.
    pub fn eval_rational(&self, t: &Rational) -> Result<Rational, FamilyError> {
        self.eval(t)
    }

    /// Structural pretty-printer; `parse(print(e))` reproduces the tree.
    pub fn print(&self) -> String {
        match self {
            Expr::Constant(q) => {
                if q.cmp0() == std::cmp::Ordering::Less {
                    format!("({q})")
                } else {
                    format!("{q}")
                }
            }
            Expr::Parameter => "t".to_string(),
            Expr::Add(a, b) => format!("({} + {})", a.print(), b.print()),
            Expr::Sub(a, b) => format!("({} - {})", a.print(), b.print()),
            Expr::Mul(a, b) => format!("({} * {})", a.print(), b.print()),
            Expr::Div(a, b) => format!("({} / {})", a.print(), b.print()),
            Expr::Neg(a) => format!("(-{})", a.print()),
            Expr::Pow(a, e) => {
                if *e < 0 {
                    format!("({}^-{})", a.print(), -e)
                } else {
                    format!("({}^{})", a.print(), e)
                }
            }
            Expr::Sqrt(a) => format!("sqrt({})", a.print()),
            Expr::Log(a) => format!("log({})", a.print()),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.print())
    }
}

/// Scalars an expression can evaluate over. `checked_sqrt`/`checked_ln`
/// enforce the domain guards per kind.
pub trait ExprScalar: Scalar {
    fn invertible(&self) -> bool;
    fn checked_sqrt(&self) -> Result<Self, FamilyError>;
    fn checked_ln(&self) -> Result<Self, FamilyError>;
}

impl ExprScalar for Rational {
    fn invertible(&self) -> bool {
        !self.is_zero()
    }
    fn checked_sqrt(&self) -> Result<Self, FamilyError> {
        if self.cmp0() == std::cmp::Ordering::Less {
            return Err(FamilyError::Domain("sqrt of a negative".to_string()));
        }
        if self.numer().is_perfect_square() && self.denom().is_perfect_square() {
            Ok(Rational::from((
                self.numer().clone().sqrt(),
                self.denom().clone().sqrt(),
            )))
        } else {
            Err(FamilyError::Domain(
                "sqrt is irrational; evaluate over reals instead".to_string(),
            ))
        }
    }
    fn checked_ln(&self) -> Result<Self, FamilyError> {
        if *self == 1u32 {
            Ok(Rational::new())
        } else {
            Err(FamilyError::Domain(
                "log is irrational; evaluate over reals instead".to_string(),
            ))
        }
    }
}

impl ExprScalar for Real {
    fn invertible(&self) -> bool {
        !crate::numeric::Scalar::is_zero(self)
    }
    fn checked_sqrt(&self) -> Result<Self, FamilyError> {
        if self.is_sign_negative() && !crate::numeric::Scalar::is_zero(self) {
            return Err(FamilyError::Domain("sqrt of a negative".to_string()));
        }
        Ok(AnalyticScalar::sqrt(self))
    }
    fn checked_ln(&self) -> Result<Self, FamilyError> {
        if self.is_sign_negative() || crate::numeric::Scalar::is_zero(self) {
            return Err(FamilyError::Domain("log of a non-positive".to_string()));
        }
        Ok(AnalyticScalar::ln(self))
    }
}

impl ExprScalar for Complex {
    fn invertible(&self) -> bool {
        !Scalar::is_zero(self)
    }
    fn checked_sqrt(&self) -> Result<Self, FamilyError> {
        Ok(AnalyticScalar::sqrt(self))
    }
    fn checked_ln(&self) -> Result<Self, FamilyError> {
        if Scalar::is_zero(self) {
            return Err(FamilyError::Domain("log of zero".to_string()));
        }
        Ok(AnalyticScalar::ln(self))
    }
}

impl ExprScalar for crate::numeric::Interval {
    fn invertible(&self) -> bool {
        matches!(self.sign_strict(), Ok(Sign::Pos) | Ok(Sign::Neg))
    }
    fn checked_sqrt(&self) -> Result<Self, FamilyError> {
        if self.lo().is_sign_negative() {
            return Err(FamilyError::Domain("sqrt of a possibly-negative".to_string()));
        }
        Ok(AnalyticScalar::sqrt(self))
    }
    fn checked_ln(&self) -> Result<Self, FamilyError> {
        match self.sign_strict() {
            Ok(Sign::Pos) => Ok(AnalyticScalar::ln(self)),
            _ => Err(FamilyError::Domain("log of a non-positive".to_string())),
        }
    }
}

// ---------------------------------------------------------------------------
// Jets
// ---------------------------------------------------------------------------

/// Truncated Taylor expansion of order q at an implicit base point:
/// coefficients c_0..c_q with c_j = (j-th derivative)/j!. Arithmetic
/// truncates at order q; coefficient 0 operations delegate to the
/// underlying scalar's operations in the same order as the plain scalar
/// pipeline, so an order-0 jet run reproduces the scalar run bit for bit.
#[derive(Clone, PartialEq)]
pub struct Jet<S: Scalar> {
    pub coeffs: Vec<S>,
}

impl<S: Scalar> fmt::Debug for Jet<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Jet{:?}", self.coeffs)
    }
}

impl<S: Scalar> Jet<S> {
    pub fn constant(value: S, order: usize) -> Self {
        let zero = value.zero_like();
        let mut coeffs = vec![zero; order + 1];
        coeffs[0] = value;
        Jet { coeffs }
    }

    /// The jet of the parameter itself at the base point: value + (t-t0).
    pub fn variable(value: S, order: usize) -> Self {
        let mut jet = Jet::constant(value, order);
        if order >= 1 {
            jet.coeffs[1] = jet.coeffs[0].one_like();
        }
        jet
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, j: usize) -> &S {
        &self.coeffs[j]
    }

    pub fn convert<T: Scalar>(&self, f: &impl Fn(&S) -> T) -> Jet<T> {
        Jet {
            coeffs: self.coeffs.iter().map(f).collect(),
        }
    }
}

impl<S: Scalar> Scalar for Jet<S> {
    fn prec_bits(&self) -> Precision {
        self.coeffs[0].prec_bits()
    }
    fn zero_like(&self) -> Self {
        Jet::constant(self.coeffs[0].zero_like(), self.order())
    }
    fn one_like(&self) -> Self {
        Jet::constant(self.coeffs[0].one_like(), self.order())
    }
    fn of_rational(&self, q: &Rational) -> Self {
        Jet::constant(self.coeffs[0].of_rational(q), self.order())
    }
    fn add(&self, o: &Self) -> Self {
        assert_eq!(self.order(), o.order());
        Jet {
            coeffs: self
                .coeffs
                .iter()
                .zip(&o.coeffs)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        assert_eq!(self.order(), o.order());
        Jet {
            coeffs: self
                .coeffs
                .iter()
                .zip(&o.coeffs)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        assert_eq!(self.order(), o.order());
        let q = self.order();
        let mut out = Vec::with_capacity(q + 1);
        for k in 0..=q {
            // Exactly one multiplication feeds coefficient 0, keeping the
            // order-0 path identical to scalar arithmetic.
            let mut acc = self.coeffs[0].mul(&o.coeffs[k]);
            for j in 1..=k {
                acc.acc_mul(&self.coeffs[j], &o.coeffs[k - j]);
            }
            out.push(acc);
        }
        Jet { coeffs: out }
    }
    fn div(&self, o: &Self) -> Self {
        assert_eq!(self.order(), o.order());
        let q = self.order();
        let mut out: Vec<S> = Vec::with_capacity(q + 1);
        for k in 0..=q {
            let mut acc = self.coeffs[k].clone();
            for j in 0..k {
                let t = out[j].mul(&o.coeffs[k - j]);
                acc = acc.sub(&t);
            }
            out.push(acc.div(&o.coeffs[0]));
        }
        Jet { coeffs: out }
    }
    fn neg(&self) -> Self {
        Jet {
            coeffs: self.coeffs.iter().map(|c| c.neg()).collect(),
        }
    }
    fn acc_mul(&mut self, a: &Self, b: &Self) {
        let q = self.order();
        for k in 0..=q {
            for j in 0..=k {
                self.coeffs[k].acc_mul(&a.coeffs[j], &b.coeffs[k - j]);
            }
        }
    }
    fn mul_small(&self, num: u32, den: u32) -> Self {
        Jet {
            coeffs: self.coeffs.iter().map(|c| c.mul_small(num, den)).collect(),
        }
    }
    fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }
    fn mag_f64(&self) -> f64 {
        self.coeffs[0].mag_f64()
    }
}

/// ln recurrence given the already-computed head ln(b_0), via b L' = b':
/// L_k = (b_k - (1/k) sum_{j=1}^{k-1} j L_j b_{k-j}) / b_0.
fn jet_ln_from_head<S: Scalar>(head: S, jet: &Jet<S>) -> Jet<S> {
    let q = jet.order();
    let mut out: Vec<S> = Vec::with_capacity(q + 1);
    out.push(head);
    for k in 1..=q {
        let mut acc = jet.coeffs[k].clone();
        for j in 1..k {
            let t = out[j]
                .mul(&jet.coeffs[k - j])
                .mul_small(j as u32, k as u32);
            acc = acc.sub(&t);
        }
        out.push(acc.div(&jet.coeffs[0]));
    }
    Jet { coeffs: out }
}

/// sqrt recurrence given the head s_0 = sqrt(b_0):
/// s_k = (b_k - sum_{j=1}^{k-1} s_j s_{k-j}) / (2 s_0).
fn jet_sqrt_from_head<S: Scalar>(head: S, jet: &Jet<S>) -> Jet<S> {
    let q = jet.order();
    let two_s0 = head.add(&head);
    let mut out: Vec<S> = Vec::with_capacity(q + 1);
    out.push(head);
    for k in 1..=q {
        let mut acc = jet.coeffs[k].clone();
        for j in 1..k {
            let t = out[j].mul(&out[k - j]);
            acc = acc.sub(&t);
        }
        out.push(acc.div(&two_s0));
    }
    Jet { coeffs: out }
}

impl<S: AnalyticScalar> AnalyticScalar for Jet<S> {
    fn ln(&self) -> Self {
        jet_ln_from_head(self.coeffs[0].ln(), self)
    }

    fn sqrt(&self) -> Self {
        jet_sqrt_from_head(self.coeffs[0].sqrt(), self)
    }

    /// atanh via A' = x'/(1 - x^2), integrated coefficientwise.
    fn atanh(&self) -> Self {
        let q = self.order();
        let one = self.one_like();
        let den = one.sub(&self.mul(self));
        // derivative series of self: d_k = (k+1) c_{k+1}, order q-1.
        if q == 0 {
            return Jet {
                coeffs: vec![self.coeffs[0].atanh()],
            };
        }
        let deriv = Jet {
            coeffs: (0..q)
                .map(|k| self.coeffs[k + 1].mul_small((k + 1) as u32, 1))
                .collect(),
        };
        let den_trunc = Jet {
            coeffs: den.coeffs[..q].to_vec(),
        };
        let integrand = deriv.div(&den_trunc);
        let mut out = Vec::with_capacity(q + 1);
        out.push(self.coeffs[0].atanh());
        for k in 1..=q {
            out.push(integrand.coeffs[k - 1].mul_small(1, k as u32));
        }
        Jet { coeffs: out }
    }
}

impl<S: ExprScalar> ExprScalar for Jet<S> {
    fn invertible(&self) -> bool {
        self.coeffs[0].invertible()
    }
    fn checked_sqrt(&self) -> Result<Self, FamilyError> {
        // Guard and compute the head through the base scalar, then run
        // the recurrence (which needs the head to be invertible).
        let head = self.coeffs[0].checked_sqrt()?;
        if !self.coeffs[0].invertible() {
            return Err(FamilyError::Domain(
                "jet sqrt needs a nonzero constant term".to_string(),
            ));
        }
        Ok(jet_sqrt_from_head(head, self))
    }
    fn checked_ln(&self) -> Result<Self, FamilyError> {
        let head = self.coeffs[0].checked_ln()?;
        Ok(jet_ln_from_head(head, self))
    }
}

impl<S: Scalar + FromRationalPrec> FromRationalPrec for Jet<S> {
    fn from_rational_prec(q: &Rational, prec: Precision) -> Self {
        // A zero-order constant; resize with `Jet::constant` as needed.
        Jet::constant(S::from_rational_prec(q, prec), 0)
    }
}

/// Solve a linear system over jets (or any scalar kind): thin wrapper
/// over the shared Gaussian elimination, named for its main use.
pub fn jet_solve_linear<S: Scalar>(
    a: &[Vec<S>],
    b: &[S],
) -> Result<Vec<S>, NumericError> {
    crate::numeric::gaussian_solve(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::parse_rational;

    fn q(s: &str) -> Rational {
        parse_rational(s).unwrap()
    }

    #[test]
    fn parse_and_eval_exact() {
        let e = Expr::parse("1/2 + (t - 3)").unwrap();
        assert_eq!(e.eval_rational(&q("3")).unwrap(), q("1/2"));
        assert_eq!(e.eval_rational(&q("7/2")).unwrap(), q("1"));

        // Power binds tighter than unary minus and products.
        let e = Expr::parse("-t^2").unwrap();
        assert_eq!(e.eval_rational(&q("3")).unwrap(), q("-9"));
        let e = Expr::parse("2*t^2").unwrap();
        assert_eq!(e.eval_rational(&q("3")).unwrap(), q("18"));

        // Decimal literals are exact rationals.
        let e = Expr::parse("0.125").unwrap();
        assert_eq!(e.eval_rational(&q("0")).unwrap(), q("1/8"));

        // Negative powers.
        let e = Expr::parse("t^-2").unwrap();
        assert_eq!(e.eval_rational(&q("2")).unwrap(), q("1/4"));
    }

    #[test]
    fn parse_errors_carry_position() {
        match Expr::parse("1/(t").unwrap_err() {
            FamilyError::Syntax { offset, .. } => assert_eq!(offset, 4),
            other => panic!("unexpected: {other}"),
        }
        assert!(matches!(
            Expr::parse("foo(t)").unwrap_err(),
            FamilyError::UnknownIdentifier(_)
        ));
    }

    #[test]
    fn sqrt_entry_evaluates() {
        // sqrt(3)/(2*t^2) at t = 3 equals sqrt(3)/18.
        let e = Expr::parse("sqrt(3)/(2*t^2)").unwrap();
        let t = Real::with_val(128, 3);
        let v = e.eval(&t).unwrap();
        let oracle = Real::with_val(128, 3).sqrt() / 18u32;
        assert!(v.sub(&oracle).mag_f64() < 1e-35);
        // Exact rational sqrt works on perfect squares only.
        assert_eq!(
            Expr::parse("sqrt(9/4)").unwrap().eval_rational(&q("0")).unwrap(),
            q("3/2")
        );
        assert!(Expr::parse("sqrt(3)").unwrap().eval_rational(&q("0")).is_err());
    }

    #[test]
    fn print_round_trips() {
        for src in [
            "1/2 + (t - 3)",
            "sqrt(3)/(2*t^2)",
            "-(t*t - 1)/(t + 5)",
            "log(t) * 2 - 0.25",
            "t^-3 + 1",
        ] {
            let e = Expr::parse(src).unwrap();
            let printed = e.print();
            let re = Expr::parse(&printed).unwrap();
            assert_eq!(e, re, "{src} -> {printed}");
        }
    }

    #[test]
    fn jet_polynomial_arithmetic() {
        // (t)^2 at t0 = 3 as an order-2 jet: value 9, derivative 6,
        // second derivative 2 (coefficient 1).
        let t = Jet::variable(q("3"), 2);
        let sq = t.mul(&t);
        assert_eq!(sq.coeffs, vec![q("9"), q("6"), q("1")]);

        // p(t) = 1/2 + (t - 3) as a jet.
        let e = Expr::parse("1/2 + (t - 3)").unwrap();
        let val = e.eval(&t).unwrap();
        assert_eq!(val.coeffs, vec![q("1/2"), q("1"), q("0")]);
    }

    #[test]
    fn jet_division_geometric() {
        // 1/(2 + (t - t0)): coefficients 1/2, -1/4, 1/8.
        let t = Jet::variable(q("0"), 2);
        let den = t.add(&Jet::constant(q("2"), 2));
        let inv = den.one_like().div(&den);
        assert_eq!(inv.coeffs, vec![q("1/2"), q("-1/4"), q("1/8")]);
    }

    #[test]
    fn jet_of_example_mobius_value() {
        // f(t) = -1/(9 t^2) at t0 = 3, order 1: value -1/81,
        // derivative 2/(9 t^3) = 2/243.
        let e = Expr::parse("-1/(9*t^2)").unwrap();
        let t = Jet::variable(q("3"), 1);
        let v = e.eval(&t).unwrap();
        assert_eq!(v.coeffs, vec![q("-1/81"), q("2/243")]);
    }

    #[test]
    fn jet_matches_symbolic_derivatives_of_polynomials() {
        // Degree-4 polynomial: jet coefficients equal derivatives/j!.
        let e = Expr::parse("t^4 - 2*t^3 + t - 5").unwrap();
        let t0 = q("2");
        let t = Jet::variable(t0.clone(), 4);
        let v = e.eval(&t).unwrap();
        // p(2) = 16 - 16 + 2 - 5 = -3; p' = 4t^3-6t^2+1 = 32-24+1 = 9;
        // p''/2 = (12t^2-12t)/2 = 12; p'''/6 = 24t-12)/6 = 6; p''''/24 = 1.
        assert_eq!(
            v.coeffs,
            vec![q("-3"), q("9"), q("12"), q("6"), q("1")]
        );
    }

    #[test]
    fn jet_ln_and_sqrt_recurrences() {
        let p = 192;
        let t = Jet::variable(Real::with_val(p, 4), 3);
        let s = AnalyticScalar::sqrt(&t);
        // sqrt(4 + h) = 2 + h/4 - h^2/64 + h^3/512.
        let expect = [2.0, 0.25, -1.0 / 64.0, 1.0 / 512.0];
        for (c, e) in s.coeffs.iter().zip(expect) {
            assert!((c.to_f64() - e).abs() < 1e-15);
        }
        let l = AnalyticScalar::ln(&t);
        // ln(4 + h) = ln 4 + h/4 - h^2/32 + h^3/192.
        let expect = [4f64.ln(), 0.25, -1.0 / 32.0, 1.0 / 192.0];
        for (c, e) in l.coeffs.iter().zip(expect) {
            assert!((c.to_f64() - e).abs() < 1e-15);
        }
        // Zero constant term is rejected through the checked interface.
        let z = Jet::variable(Real::new(p), 2);
        assert!(z.checked_sqrt().is_err());
        assert!(z.checked_ln().is_err());
    }

    #[test]
    fn jet_first_coefficient_matches_finite_differences() {
        // c1 of g(t) = sqrt(3)/(2 t^2) * log(t) at t0 = 3 vs central
        // differences with Richardson consistency.
        let e = Expr::parse("sqrt(3)/(2*t^2) * log(t)").unwrap();
        let p = 256;
        let t = Jet::variable(Real::with_val(p, 3), 1);
        let c1 = e.eval(&t).unwrap().coeffs[1].to_f64();
        let g = |x: f64| 3f64.sqrt() / (2.0 * x * x) * x.ln();
        let fd = |h: f64| (g(3.0 + h) - g(3.0 - h)) / (2.0 * h);
        let e1 = (fd(1e-4) - c1).abs();
        let e2 = (fd(5e-5) - c1).abs();
        assert!(e1 < 1e-8);
        // Quartering with half the step (O(h^2)), with slack for f64
        // cancellation noise.
        assert!(e2 < e1 * 0.6 + 1e-12);
    }

    #[test]
    fn jet_linear_solve_stationary_family() {
        // Q(t) from two probabilities p(t) = 1/2 + (t-3): stationary of
        // the 2x2 chain [[p, 1-p], [p, 1-p]] is (p, 1-p) itself.
        let order = 1;
        let t = Jet::variable(Real::with_val(128, 3), order);
        let p = Expr::parse("1/2 + (t - 3)").unwrap().eval(&t).unwrap();
        let one = p.one_like();
        let q12 = one.sub(&p);
        // Column-replacement system for pi: M = I - Q with column 0
        // replaced by ones; solve M^T x = e_0.
        let a = vec![
            vec![one.clone(), one.clone()],
            vec![q12.neg(), one.sub(&q12)],
        ];
        let b = vec![one.clone(), one.zero_like()];
        let pi = jet_solve_linear(&a, &b).unwrap();
        assert!((pi[0].coeffs[0].to_f64() - 0.5).abs() < 1e-30);
        assert!((pi[0].coeffs[1].to_f64() - 1.0).abs() < 1e-30);
        assert!((pi[1].coeffs[0].to_f64() - 0.5).abs() < 1e-30);
        assert!((pi[1].coeffs[1].to_f64() + 1.0).abs() < 1e-30);
    }

    #[test]
    fn order_zero_jet_mirrors_scalar_ops() {
        // Bit-for-bit agreement of the order-0 jet path with the plain
        // scalar path, including a fused accumulate chain.
        let p = 128;
        let a = Real::with_val(p, Rational::from((1, 3)));
        let b = Real::with_val(p, Rational::from((7, 11)));
        let mut s = Real::with_val(p, Rational::from((355, 113)));
        let mut j = Jet::constant(s.clone(), 0);
        let ja = Jet::constant(a.clone(), 0);
        let jb = Jet::constant(b.clone(), 0);
        s.acc_mul(&a, &b);
        j.acc_mul(&ja, &jb);
        assert_eq!(j.coeffs[0], s);
        let s2 = s.mul(&a).sub(&b).div(&a);
        let j2 = j.mul(&ja).sub(&jb).div(&ja);
        assert_eq!(j2.coeffs[0], s2);
        let s3 = AnalyticScalar::ln(&s2.mul(&s2));
        let j3 = AnalyticScalar::ln(&j2.mul(&j2));
        assert_eq!(j3.coeffs[0], s3);
    }
}
