//! The series engine: per-state m x m coefficient blocks, the coupled
//! block operator with stationary-weighted coupling, the seed vector, and
//! the iteration that accumulates the weighted 0-coordinates whose sum
//! converges to the Lyapunov exponent.
//!
//! Everything here is generic over the scalar kind, so the same code path
//! runs with plain reals, outward-rounded intervals, and truncated Taylor
//! jets (for parameter derivatives). The inner loop is a single fused
//! multiply-accumulate per entry; iteration keeps only the current state
//! vector and a running sum, for O(|C| m) memory and O(n |C| m^2) work.

use crate::lift::{LiftedSystem, StateMaps};
use crate::numeric::{AnalyticScalar, Scalar};
use rayon::prelude::*;

/// Running count of scalar multiply-accumulate operations, the unit the
/// complexity statements are phrased in.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpStats {
    pub mul_adds: u64,
}

impl OpStats {
    pub fn add(&mut self, other: OpStats) {
        self.mul_adds += other.mul_adds;
    }
}

/// One state's truncated coefficient block, stored row-major:
/// `entries[k][n]`, 0 <= k, n <= m-1. Column 0 is identically zero and
/// row 0 holds the powers of the transposed map's value at 0.
#[derive(Debug, Clone)]
pub struct KernelBlock<S: Scalar> {
    pub entries: Vec<Vec<S>>,
}

impl<S: Scalar> KernelBlock<S> {
    pub fn order(&self) -> usize {
        self.entries.len()
    }
}

/// Fill the m x m block for one state from its Moebius data
/// (y, x0, z) = (f^T(0), -f(0), f'(0)):
/// entry (k, n) = sum over l of C(n,l) C(k-1,l-1) y^(n-l) x0^(k-l) z^l,
/// with the degenerate row/column handled separately. The l-loop is the
/// outer loop so each term costs one multiply-accumulate against
/// incrementally maintained factor tables.
pub fn kernel_block<S: Scalar>(maps: &StateMaps<S>, m: usize, stats: &mut OpStats) -> KernelBlock<S> {
    assert!(m >= 2, "block order must be at least 2");
    let y = &maps.f_transpose_at_zero;
    let x0 = maps.f_at_zero.neg();
    let z = &maps.f_prime_at_zero;
    let zero = y.zero_like();
    let one = y.one_like();

    let mut entries = vec![vec![zero.clone(); m]; m];

    // Row 0: powers of y for n >= 1.
    let mut pow = one.clone();
    for n in 1..m {
        pow = pow.mul(y);
        entries[0][n] = pow.clone();
    }

    // row_factor[n] = C(n,l) y^(n-l); col_factor[k] = C(k-1,l-1) x0^(k-l) z^l.
    let mut row_factor = vec![zero.clone(); m];
    let mut col_factor = vec![zero.clone(); m];
    let mut z_pow = one.clone();
    for l in 1..m {
        z_pow = z_pow.mul(z);
        if l >= m {
            break;
        }
        // row_factor over n = l..m-1: starts at C(l,l) y^0 = 1,
        // then multiply by y * n/(n-l).
        row_factor[l] = one.clone();
        for n in (l + 1)..m {
            row_factor[n] = row_factor[n - 1].mul(y).mul_small(n as u32, (n - l) as u32);
        }
        // col_factor over k = l..m-1: starts at C(l-1,l-1) z^l = z^l,
        // then multiply by x0 * (k-1)/(k-l).
        col_factor[l] = z_pow.clone();
        for k in (l + 1)..m {
            col_factor[k] = col_factor[k - 1]
                .mul(&x0)
                .mul_small((k - 1) as u32, (k - l) as u32);
        }
        for k in l..m {
            let ck = col_factor[k].clone();
            for n in l..m {
                entries[k][n].acc_mul(&ck, &row_factor[n]);
            }
        }
        stats.mul_adds += ((m - l) * (m - l)) as u64;
    }

    KernelBlock { entries }
}

/// The truncated coupled operator: per-state blocks plus the coupling
/// weights w(r, s) = pi_r Q(r, s) / pi_s on the edges of the class chain.
#[derive(Debug, Clone)]
pub struct KernelOperator<S: Scalar> {
    pub blocks: Vec<KernelBlock<S>>,
    /// weights[r] lists (s, w(r, s)) over the out-edges of r.
    pub weights: Vec<Vec<(usize, S)>>,
    pub order: usize,
}

/// Assemble the operator at truncation order m. Block construction is
/// independent per state and runs in parallel.
pub fn build_operator<S: AnalyticScalar>(
    system: &LiftedSystem<S>,
    m: usize,
) -> (KernelOperator<S>, OpStats) {
    let n_states = system.states.len();
    let results: Vec<(KernelBlock<S>, OpStats)> = system
        .states
        .par_iter()
        .map(|maps| {
            let mut stats = OpStats::default();
            let block = kernel_block(maps, m, &mut stats);
            (block, stats)
        })
        .collect();
    let mut stats = OpStats::default();
    let mut blocks = Vec::with_capacity(n_states);
    for (b, s) in results {
        blocks.push(b);
        stats.add(s);
    }

    let weights = (0..n_states)
        .map(|r| {
            (0..n_states)
                .filter(|&s| system.chain.is_edge(r, s))
                .map(|s| {
                    let w = system.stationary[r]
                        .mul(system.chain.entry(r, s))
                        .div(&system.stationary[s]);
                    (s, w)
                })
                .collect()
        })
        .collect();

    (
        KernelOperator {
            blocks,
            weights,
            order: m,
        },
        stats,
    )
}

/// A per-state vector of m coordinates.
#[derive(Debug, Clone)]
pub struct StateVector<S: Scalar> {
    pub coords: Vec<Vec<S>>,
}

impl<S: Scalar> StateVector<S> {
    pub fn zero_like(proto: &S, states: usize, m: usize) -> Self {
        StateVector {
            coords: vec![vec![proto.zero_like(); m]; states],
        }
    }
}

/// The seed vector, already divided by the system divisor d:
/// coordinate 0 of state s is (1/d) sum_r w(r,s) ln(delta_r), and
/// coordinate n >= 1 is -(1/d) sum_r w(r,s) (-f_r(0))^n / n.
pub fn seed_vector<S: AnalyticScalar>(system: &LiftedSystem<S>, m: usize) -> StateVector<S> {
    assert!(m >= 2);
    let n_states = system.states.len();
    let proto = system.rho.clone();
    let d = system.divisor();

    // Per-source generator columns: (ln delta_r, -(-f_r(0))^n / n).
    let generators: Vec<Vec<S>> = system
        .states
        .iter()
        .map(|maps| {
            let mut v = Vec::with_capacity(m);
            v.push(maps.delta.ln());
            let neg_f0 = maps.f_at_zero.neg();
            let mut pow = proto.one_like();
            for n in 1..m {
                pow = pow.mul(&neg_f0);
                v.push(pow.neg().mul_small(1, n as u32));
            }
            v
        })
        .collect();

    let mut out = StateVector::zero_like(&proto, n_states, m);
    for r in 0..n_states {
        for s in 0..n_states {
            if !system.chain.is_edge(r, s) {
                continue;
            }
            let w = system.stationary[r]
                .mul(system.chain.entry(r, s))
                .div(&system.stationary[s]);
            for n in 0..m {
                out.coords[s][n].acc_mul(&w, &generators[r][n]);
            }
        }
    }
    if d > 1 {
        for s in 0..n_states {
            for n in 0..m {
                out.coords[s][n] = out.coords[s][n].mul_small(1, d);
            }
        }
    }
    out
}

/// One application of the truncated operator: block matrix-vector
/// products per source state (in parallel), then the weighted coupling
/// combined in fixed state order for deterministic rounding.
pub fn apply<S: Scalar>(
    op: &KernelOperator<S>,
    u: &StateVector<S>,
    stats: &mut OpStats,
) -> StateVector<S> {
    let m = op.order;
    let n_states = op.blocks.len();
    let proto = u.coords[0][0].clone();

    let per_state: Vec<Vec<S>> = op
        .blocks
        .par_iter()
        .zip(u.coords.par_iter())
        .map(|(block, ur)| {
            let mut y = vec![proto.zero_like(); m];
            for (k, yk) in y.iter_mut().enumerate() {
                let row = &block.entries[k];
                // Column 0 is identically zero; skip it.
                for n in 1..m {
                    yk.acc_mul(&row[n], &ur[n]);
                }
            }
            y
        })
        .collect();
    stats.mul_adds += (n_states * m * (m - 1)) as u64;

    let mut out = StateVector::zero_like(&proto, n_states, m);
    for r in 0..n_states {
        for (s, w) in &op.weights[r] {
            for n in 0..m {
                out.coords[*s][n].acc_mul(w, &per_state[r][n]);
            }
        }
        stats.mul_adds += (op.weights[r].len() * m) as u64;
    }
    out
}

/// The weighted average of 0-coordinates against the stationary vector.
pub fn weighted_zero<S: Scalar>(system: &LiftedSystem<S>, u: &StateVector<S>) -> S {
    let mut acc = system.rho.zero_like();
    for (s, pi) in system.stationary.iter().enumerate() {
        acc.acc_mul(pi, &u.coords[s][0]);
    }
    acc
}

/// Outcome of an iteration run: the accumulated partial sum and, when
/// requested, intermediate partial sums at milestone step counts.
pub struct IterationRun<S: Scalar> {
    pub value: S,
    pub milestones: Vec<(usize, S)>,
    pub stats: OpStats,
}

/// Sum the first n terms of the series at truncation order m:
/// sum over l < n of the weighted 0-coordinate of T^l (seed).
/// `milestones` asks for the partial sums after the listed step counts
/// (useful for sweeping n without re-running).
pub fn iterate_partial_sums<S: AnalyticScalar>(
    system: &LiftedSystem<S>,
    n: usize,
    m: usize,
    milestones: &[usize],
) -> IterationRun<S> {
    assert!(n >= 1 && m >= 2);
    let (op, mut stats) = build_operator(system, m);
    let mut u = seed_vector(system, m);
    let mut total = weighted_zero(system, &u);
    let mut recorded = Vec::new();
    if milestones.contains(&1) {
        recorded.push((1, total.clone()));
    }
    for step in 1..n {
        u = apply(&op, &u, &mut stats);
        total = total.add(&weighted_zero(system, &u));
        if milestones.contains(&(step + 1)) {
            recorded.push((step + 1, total.clone()));
        }
    }
    IterationRun {
        value: total,
        milestones: recorded,
        stats,
    }
}

/// Convenience wrapper returning just the n-term partial sum.
pub fn partial_sum<S: AnalyticScalar>(system: &LiftedSystem<S>, n: usize, m: usize) -> S {
    iterate_partial_sums(system, n, m, &[]).value
}
