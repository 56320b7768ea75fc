//! Row-stochastic matrices over a finite labeled alphabet: validation,
//! irreducibility and period, stationary vectors via the column-replacement
//! linear solve (which extends verbatim to complexified and jet-valued
//! entries), strongly connected components, and the d-step block chain
//! ("aperiodic reduction") together with its matrix products.

use crate::numeric::{gaussian_solve, NumericError, Scalar, Sign, SignScalar};
use crate::projective::Mat2;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum MarkovError {
    #[error("matrix is not square or alphabet is empty")]
    BadShape,
    #[error("row {0} does not sum to 1")]
    BadRowSum(String),
    #[error("negative entry at ({0}, {1})")]
    NegativeEntry(String, String),
    #[error("chain is reducible: state {0} cannot reach state {1}")]
    Reducible(String, String),
    #[error("stationary solve failed: {0}")]
    SingularSolve(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// A row-stochastic matrix over labeled states. Entries are stored dense,
/// row-major; the support (strict positivity pattern) is decided once at
/// construction and never re-derived from floating values.
#[derive(Debug, Clone)]
pub struct StochasticMatrix<S: Scalar> {
    labels: Vec<String>,
    rows: Vec<Vec<S>>,
    support: Vec<Vec<bool>>,
}

impl<S: Scalar + SignScalar> StochasticMatrix<S> {
    /// Build and validate: square shape, nonnegative entries, unit row
    /// sums (exact for rationals, within tolerance for floats). Support is
    /// a hard zero test: an entry is an edge iff it is not exactly zero.
    pub fn new(labels: Vec<String>, rows: Vec<Vec<S>>) -> Result<Self, MarkovError> {
        let n = labels.len();
        if n == 0 || rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(MarkovError::BadShape);
        }
        for (i, row) in rows.iter().enumerate() {
            let mut sum = row[0].zero_like();
            for (j, e) in row.iter().enumerate() {
                if let Ok(Sign::Neg) = e.sign_strict() {
                    return Err(MarkovError::NegativeEntry(
                        labels[i].clone(),
                        labels[j].clone(),
                    ));
                }
                sum = sum.add(e);
            }
            let dev = sum.sub(&sum.one_like());
            let ok = if dev.prec_bits() == 0 {
                dev.is_zero()
            } else {
                let p = dev.prec_bits();
                dev.abs_upper(p) <= crate::numeric::sign_tolerance(p.saturating_sub(8))
            };
            if !ok {
                return Err(MarkovError::BadRowSum(labels[i].clone()));
            }
        }
        let support = rows
            .iter()
            .map(|r| r.iter().map(|e| !e.is_zero()).collect())
            .collect();
        Ok(StochasticMatrix {
            labels,
            rows,
            support,
        })
    }

    /// Construct with an explicitly provided support pattern (used when
    /// entries come from expressions whose zero set is structural).
    pub fn with_support(
        labels: Vec<String>,
        rows: Vec<Vec<S>>,
        support: Vec<Vec<bool>>,
    ) -> Result<Self, MarkovError> {
        let mut m = Self::new(labels, rows)?;
        assert_eq!(support.len(), m.size());
        m.support = support;
        Ok(m)
    }
}

impl<S: Scalar> StochasticMatrix<S> {
    /// Assemble without entry validation, for scalar kinds (jets,
    /// complexified entries) whose rows sum to 1 identically in the
    /// parameter but cannot be sign-checked. The support must come from
    /// a validated real instance.
    pub fn from_parts_unchecked(
        labels: Vec<String>,
        rows: Vec<Vec<S>>,
        support: Vec<Vec<bool>>,
    ) -> Self {
        let n = labels.len();
        assert!(rows.len() == n && support.len() == n);
        StochasticMatrix {
            labels,
            rows,
            support,
        }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entry(&self, i: usize, j: usize) -> &S {
        &self.rows[i][j]
    }

    pub fn rows(&self) -> &[Vec<S>] {
        &self.rows
    }

    pub fn support(&self) -> &[Vec<bool>] {
        &self.support
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.support[i][j]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Carry the support pattern over to another scalar kind.
    pub fn convert<T: Scalar + SignScalar>(
        &self,
        f: &impl Fn(&S) -> T,
    ) -> Result<StochasticMatrix<T>, MarkovError> {
        StochasticMatrix::with_support(
            self.labels.clone(),
            self.rows
                .iter()
                .map(|r| r.iter().map(f).collect())
                .collect(),
            self.support.clone(),
        )
    }

    /// Out-neighbors in the support digraph.
    fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.size()).filter(move |&j| self.support[i][j])
    }

    /// Check irreducibility; returns a witness pair on failure.
    pub fn check_irreducible(&self) -> Result<(), MarkovError> {
        let n = self.size();
        for start in 0..n {
            let mut seen = vec![false; n];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for v in self.successors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            if let Some(unreached) = seen.iter().position(|&s| !s) {
                return Err(MarkovError::Reducible(
                    self.labels[start].clone(),
                    self.labels[unreached].clone(),
                ));
            }
        }
        Ok(())
    }

    /// Period of an irreducible chain: gcd of cycle lengths, computed via
    /// BFS levels on the support digraph.
    pub fn period(&self) -> Result<u32, MarkovError> {
        self.check_irreducible()?;
        let n = self.size();
        let mut level = vec![i64::MIN; n];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        let mut g: i64 = 0;
        while let Some(u) = queue.pop_front() {
            for v in self.successors(u) {
                if level[v] == i64::MIN {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                } else {
                    g = gcd_i64(g, level[u] + 1 - level[v]);
                }
            }
        }
        Ok(g.unsigned_abs().max(1) as u32)
    }

    /// Cyclic classes X_0, ..., X_{d-1} anchored at the lexicographically
    /// smallest label: X_u holds the states reachable from the anchor in
    /// a number of steps congruent to u mod d.
    pub fn cyclic_classes(&self) -> Result<Vec<Vec<usize>>, MarkovError> {
        let d = self.period()? as i64;
        let n = self.size();
        let anchor = (0..n)
            .min_by(|&i, &j| self.labels[i].cmp(&self.labels[j]))
            .unwrap();
        let mut residue = vec![i64::MIN; n];
        residue[anchor] = 0;
        let mut queue = std::collections::VecDeque::from([anchor]);
        while let Some(u) = queue.pop_front() {
            for v in self.successors(u) {
                if residue[v] == i64::MIN {
                    residue[v] = (residue[u] + 1) % d;
                    queue.push_back(v);
                }
            }
        }
        let mut classes = vec![Vec::new(); d as usize];
        for (i, &r) in residue.iter().enumerate() {
            classes[r as usize].push(i);
        }
        for class in &mut classes {
            class.sort_by(|&i, &j| self.labels[i].cmp(&self.labels[j]));
        }
        Ok(classes)
    }

    /// Unique stationary probability vector of an irreducible chain,
    /// computed by replacing one column of I - P with ones and solving
    /// pi^T M = e_pivot^T. The pivot defaults to the lexicographically
    /// smallest label. The same solve applies unchanged to complexified
    /// or jet-valued entries (where row sums are 1 identically in the
    /// parameter), which is why it is used instead of an eigensolver.
    pub fn stationary(&self, pivot: Option<usize>) -> Result<Vec<S>, MarkovError> {
        let n = self.size();
        let pivot = pivot.unwrap_or_else(|| {
            (0..n)
                .min_by(|&i, &j| self.labels[i].cmp(&self.labels[j]))
                .unwrap()
        });
        let proto = self.rows[0][0].clone();
        let one = proto.one_like();
        let zero = proto.zero_like();
        // M = I - P with column `pivot` replaced by ones; solve the
        // transposed system M^T x = e_pivot.
        let mut mt = vec![vec![zero.clone(); n]; n];
        for i in 0..n {
            for j in 0..n {
                let m_ij = if j == pivot {
                    one.clone()
                } else {
                    let delta = if i == j { one.clone() } else { zero.clone() };
                    delta.sub(&self.rows[i][j])
                };
                mt[j][i] = m_ij;
            }
        }
        let mut rhs = vec![zero.clone(); n];
        rhs[pivot] = one;
        gaussian_solve(&mt, &rhs).map_err(|e| MarkovError::SingularSolve(e.to_string()))
    }
}

fn gcd_i64(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Tarjan strongly connected components of an arbitrary digraph.
/// Components come back in a deterministic order (by smallest vertex).
pub fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut comps: Vec<Vec<usize>> = Vec::new();

    // Iterative Tarjan: (vertex, next child position).
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(&mut (v, ref mut ci)) = call.last_mut() {
            if *ci == 0 {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if *ci < adj[v].len() {
                let w = adj[v][*ci];
                *ci += 1;
                if index[w] == usize::MAX {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
                let lv = low[v];
                call.pop();
                if let Some(&mut (parent, _)) = call.last_mut() {
                    low[parent] = low[parent].min(lv);
                }
            }
        }
    }
    comps.sort_by_key(|c| c[0]);
    comps
}

/// The d-step block chain of a periodic chain, with the accompanying
/// block matrix products.
#[derive(Debug, Clone)]
pub struct AcceleratedChain<S: Scalar> {
    /// Block transition matrix over admissible d-paths starting in X_0.
    pub chain: StochasticMatrix<S>,
    /// For each block, the constituent original state indices, in path
    /// order (first step first).
    pub blocks: Vec<Vec<usize>>,
    /// Original period.
    pub period: u32,
    /// Block matrices: product of the per-letter matrices along the path,
    /// last letter leftmost.
    pub matrices: Vec<Mat2<S>>,
}

/// Build the d-step block chain: blocks are admissible d-paths whose
/// first state lies in the cyclic class of the anchor; block transition
/// probability is the product of the step probabilities, and the block
/// matrix is the product of the per-letter matrices (applied first =
/// rightmost). For d = 1 the input is returned unchanged.
pub fn accelerate<S: Scalar + SignScalar>(
    p: &StochasticMatrix<S>,
    matrices: &[Mat2<S>],
) -> Result<AcceleratedChain<S>, MarkovError> {
    assert_eq!(matrices.len(), p.size());
    let d = p.period()?;
    if d == 1 {
        return Ok(AcceleratedChain {
            chain: p.clone(),
            blocks: (0..p.size()).map(|i| vec![i]).collect(),
            period: 1,
            matrices: matrices.to_vec(),
        });
    }
    let classes = p.cyclic_classes()?;
    // Enumerate admissible d-paths starting in X_0.
    let mut frontier: Vec<Vec<usize>> = classes[0].iter().map(|&i| vec![i]).collect();
    for _ in 1..d {
        let mut next = Vec::new();
        for path in frontier {
            let last = *path.last().unwrap();
            for j in 0..p.size() {
                if p.is_edge(last, j) {
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
            .map(|&i| p.labels()[i].clone())
            .collect::<Vec<_>>()
    });

    let labels: Vec<String> = blocks
        .iter()
        .map(|b| {
            b.iter()
                .map(|&i| p.labels()[i].as_str())
                .collect::<Vec<_>>()
                .join(".")
        })
        .collect();

    let proto = p.entry(0, 0).clone();
    let zero = proto.zero_like();
    let nb = blocks.len();
    let mut rows = vec![vec![zero.clone(); nb]; nb];
    let mut support = vec![vec![false; nb]; nb];
    for (bi, b) in blocks.iter().enumerate() {
        for (bj, c) in blocks.iter().enumerate() {
            let last = *b.last().unwrap();
            if !p.is_edge(last, c[0]) {
                continue;
            }
            let mut prob = p.entry(last, c[0]).clone();
            let mut ok = true;
            for w in c.windows(2) {
                if !p.is_edge(w[0], w[1]) {
                    ok = false;
                    break;
                }
                prob = prob.mul(p.entry(w[0], w[1]));
            }
            if ok {
                rows[bi][bj] = prob;
                support[bi][bj] = true;
            }
        }
    }
    let chain = StochasticMatrix::with_support(labels, rows, support)?;

    let block_matrices: Vec<Mat2<S>> = blocks
        .iter()
        .map(|b| {
            let mut acc = matrices[b[0]].clone();
            for &i in &b[1..] {
                acc = matrices[i].mul_mat(&acc);
            }
            acc
        })
        .collect();

    Ok(AcceleratedChain {
        chain,
        blocks,
        period: d,
        matrices: block_matrices,
    })
}
