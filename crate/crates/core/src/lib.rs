//! Certified computation of top Lyapunov exponents of random products of
//! 2x2 matrices driven by a finite Markov shift.
//!
//! Given a family of invertible matrices, a row-stochastic transition
//! matrix, and a strictly invariant multicone on the projective line, the
//! crate rewrites the exponent as an explicit infinite series, truncates
//! it, and returns the value together with an a-posteriori error bound.
//! Along analytic one-parameter families it also computes certified Taylor
//! coefficients of the exponent by running the same series in truncated
//! Taylor (jet) arithmetic.
//!
//! Entry points:
//! - [`certify::compute_lambda`] for a single certified value,
//! - [`derivatives::taylor`] for certified Taylor coefficients,
//! - [`systemfile::SystemFile`] for the on-disk description format used by
//!   the `lyapcert` binary.

pub mod certify;
pub mod cli;
pub mod derivatives;
pub mod family;
pub mod kernel;
pub mod lift;
pub mod markov;
pub mod multicone;
pub mod numeric;
pub mod projective;
pub mod systemfile;

pub use numeric::{Complex, Interval, Precision, Rational, Real};
