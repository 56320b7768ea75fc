//! Multicone validation against a cocycle and transition structure, and
//! the branch-state machinery built on top of it: the set R of branch
//! states, the component-routing map, the branch transition matrix Q, and
//! its recurrent (sink) classes.

use crate::markov::{strongly_connected_components, MarkovError, StochasticMatrix};
use crate::numeric::{Scalar, Sign, SignScalar};
use crate::projective::{strict_containment, Arc, Mat2, ProjectiveError};
use rayon::prelude::*;
use std::fmt;

#[derive(Debug, Clone, thiserror::Error)]
pub enum MulticoneError {
    #[error("letter {letter}: multicone has no component")]
    EmptyCone { letter: String },
    #[error("letter {letter}: components {a} and {b} have intersecting closures")]
    OverlappingComponents { letter: String, a: usize, b: usize },
    #[error("multicone violated on {count} edge(s): first at {first}")]
    Violations { count: usize, first: String },
    #[error("edge {edge}: sign indeterminate at working precision")]
    Indeterminate { edge: String },
    #[error("edge {edge}: image lands in more than one component")]
    AmbiguousRouting { edge: String },
    #[error(transparent)]
    Projective(#[from] ProjectiveError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// Per-letter family of disjoint closed arcs.
#[derive(Debug, Clone)]
pub struct Multicone<S: Scalar> {
    /// components[i] lists the arcs of letter i, in input order.
    pub components: Vec<Vec<Arc<S>>>,
}

impl<S: Scalar + SignScalar> Multicone<S> {
    /// Validate shape: every letter has at least one component and the
    /// closures of the components of each letter are pairwise disjoint
    /// (checked by endpoint cross-membership sign tests).
    pub fn validate_shape(&self, labels: &[String]) -> Result<(), MulticoneError> {
        for (i, comps) in self.components.iter().enumerate() {
            if comps.is_empty() {
                return Err(MulticoneError::EmptyCone {
                    letter: labels[i].clone(),
                });
            }
            for a in 0..comps.len() {
                for b in (a + 1)..comps.len() {
                    let (pa, qa) = comps[a].endpoints();
                    let (pb, qb) = comps[b].endpoints();
                    let disjoint = !comps[b].contains(&pa, false)?
                        && !comps[b].contains(&qa, false)?
                        && !comps[a].contains(&pb, false)?
                        && !comps[a].contains(&qb, false)?;
                    if !disjoint {
                        return Err(MulticoneError::OverlappingComponents {
                            letter: labels[i].clone(),
                            a,
                            b,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// One validated edge of the multicone: under the edge i -> j, component
/// a of letter i maps strictly into component b of letter j, with the
/// recorded entry sign for the chart-conjugated matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRouting {
    pub from_letter: usize,
    pub from_component: usize,
    pub to_letter: usize,
    pub to_component: usize,
    pub sign: Sign,
}

/// The full routing table of a validated multicone.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    pub edges: Vec<EdgeRouting>,
}

impl RoutingTable {
    pub fn lookup(&self, i: usize, a: usize, j: usize) -> Option<&EdgeRouting> {
        self.edges
            .iter()
            .find(|e| e.from_letter == i && e.from_component == a && e.to_letter == j)
    }
}

/// Check the strict invariance of a candidate multicone under every
/// admissible edge: for each edge i -> j and each component a of letter
/// i, find the unique component b of letter j with
/// `[A_j](closure M_{i,a})` inside the interior of `M_{j,b}`, recording
/// the uniform entry sign. Violating edges are all collected before
/// reporting. Edge checks are independent and run in parallel; results
/// are merged in deterministic edge order.
pub fn validate_multicone<S: Scalar + SignScalar>(
    matrices: &[Mat2<S>],
    chain: &StochasticMatrix<S>,
    cone: &Multicone<S>,
) -> Result<RoutingTable, MulticoneError> {
    let labels = chain.labels();
    assert_eq!(matrices.len(), labels.len());
    assert_eq!(cone.components.len(), labels.len());
    cone.validate_shape(labels)?;

    // All (i, a, j) triples with an admissible edge i -> j.
    let mut tasks = Vec::new();
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if !chain.is_edge(i, j) {
                continue;
            }
            for a in 0..cone.components[i].len() {
                tasks.push((i, a, j));
            }
        }
    }

    #[derive(Debug)]
    enum Outcome {
        Routed(EdgeRouting),
        NoTarget(String),
        Ambiguous(String),
        Indeterminate(String),
    }

    let outcomes: Vec<Outcome> = tasks
        .par_iter()
        .map(|&(i, a, j)| {
            let edge_name = |comment: &str| {
                format!(
                    "({}, component {}) -> {}{}",
                    labels[i],
                    a + 1,
                    labels[j],
                    comment
                )
            };
            let mut found: Option<EdgeRouting> = None;
            let mut indeterminate = false;
            for (b, target) in cone.components[j].iter().enumerate() {
                match strict_containment(target, &matrices[j], &cone.components[i][a]) {
                    Ok(sign) => {
                        if let Some(prev) = &found {
                            return Outcome::Ambiguous(edge_name(&format!(
                                " (components {} and {})",
                                prev.to_component + 1,
                                b + 1
                            )));
                        }
                        found = Some(EdgeRouting {
                            from_letter: i,
                            from_component: a,
                            to_letter: j,
                            to_component: b,
                            sign,
                        });
                    }
                    Err(ProjectiveError::CannotCertify(_)) => {}
                    Err(ProjectiveError::Numeric(_)) => indeterminate = true,
                    Err(e) => return Outcome::NoTarget(edge_name(&format!(" ({e})"))),
                }
            }
            match found {
                Some(r) => Outcome::Routed(r),
                None if indeterminate => Outcome::Indeterminate(edge_name("")),
                None => Outcome::NoTarget(edge_name("")),
            }
        })
        .collect();

    let mut edges = Vec::new();
    let mut violations = Vec::new();
    for outcome in outcomes {
        match outcome {
            Outcome::Routed(r) => edges.push(r),
            Outcome::NoTarget(e) => violations.push(e),
            Outcome::Ambiguous(e) => return Err(MulticoneError::AmbiguousRouting { edge: e }),
            Outcome::Indeterminate(e) => return Err(MulticoneError::Indeterminate { edge: e }),
        }
    }
    if !violations.is_empty() {
        return Err(MulticoneError::Violations {
            count: violations.len(),
            first: violations[0].clone(),
        });
    }
    Ok(RoutingTable { edges })
}

/// A branch state: the current (letter, component) and the next one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BranchState {
    pub source: (usize, usize),
    pub target: (usize, usize),
}

impl BranchState {
    /// The letter being applied, i.e. the target letter.
    pub fn letter(&self) -> usize {
        self.target.0
    }
}

pub struct BranchStateDisplay<'a> {
    state: &'a BranchState,
    labels: &'a [String],
}

impl fmt::Display for BranchStateDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (i, a) = self.state.source;
        let (j, b) = self.state.target;
        write!(
            f,
            "({}:{} -> {}:{})",
            self.labels[i],
            a + 1,
            self.labels[j],
            b + 1
        )
    }
}

impl BranchState {
    pub fn display<'a>(&'a self, labels: &'a [String]) -> BranchStateDisplay<'a> {
        BranchStateDisplay {
            state: self,
            labels,
        }
    }
}

/// Branch states, their transition matrix, and its recurrent classes.
#[derive(Debug, Clone)]
pub struct BranchSystem<S: Scalar> {
    /// All branch states, sorted; indices into this list are the states
    /// of `chain`.
    pub states: Vec<BranchState>,
    /// Sign chosen for each branch state by the validation table.
    pub signs: Vec<Sign>,
    /// Row-stochastic transition matrix over the branch states.
    pub chain: StochasticMatrix<S>,
    /// Recurrent classes: sink strongly connected components, each sorted,
    /// ordered by their smallest state.
    pub recurrent_classes: Vec<Vec<usize>>,
}

/// Assemble the branch system from a validated routing table:
/// states are (source = (i,a), target = (j, routed b)) for admissible
/// edges; transitions connect r -> r' when target(r) = source(r'), with
/// probability P at the underlying letters.
pub fn build_branch_system<S: Scalar + SignScalar>(
    chain: &StochasticMatrix<S>,
    table: &RoutingTable,
) -> Result<BranchSystem<S>, MulticoneError> {
    let mut states: Vec<BranchState> = table
        .edges
        .iter()
        .map(|e| BranchState {
            source: (e.from_letter, e.from_component),
            target: (e.to_letter, e.to_component),
        })
        .collect();
    states.sort();
    states.dedup();

    let signs: Vec<Sign> = states
        .iter()
        .map(|s| {
            table
                .lookup(s.source.0, s.source.1, s.target.0)
                .expect("state came from the table")
                .sign
        })
        .collect();

    let n = states.len();
    let labels: Vec<String> = states
        .iter()
        .map(|s| {
            format!(
                "{}.{}|{}.{}",
                chain.labels()[s.source.0],
                s.source.1 + 1,
                chain.labels()[s.target.0],
                s.target.1 + 1
            )
        })
        .collect();

    let proto = chain.entry(0, 0).clone();
    let zero = proto.zero_like();
    let mut rows = vec![vec![zero.clone(); n]; n];
    let mut support = vec![vec![false; n]; n];
    for (ri, r) in states.iter().enumerate() {
        for (rj, rp) in states.iter().enumerate() {
            if r.target == rp.source && chain.is_edge(r.letter(), rp.letter()) {
                rows[ri][rj] = chain.entry(r.letter(), rp.letter()).clone();
                support[ri][rj] = true;
            }
        }
    }
    let q = StochasticMatrix::with_support(labels, rows, support)?;

    // Recurrent classes: sink components of the support digraph.
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| q.is_edge(i, j)).collect())
        .collect();
    let comps = strongly_connected_components(&adj);
    let mut comp_of = vec![usize::MAX; n];
    for (c, comp) in comps.iter().enumerate() {
        for &v in comp {
            comp_of[v] = c;
        }
    }
    let recurrent: Vec<Vec<usize>> = comps
        .iter()
        .filter(|comp| {
            comp.iter()
                .all(|&v| adj[v].iter().all(|&w| comp_of[w] == comp_of[v]))
        })
        .cloned()
        .collect();

    Ok(BranchSystem {
        states,
        signs,
        chain: q,
        recurrent_classes: recurrent,
    })
}

impl<S: Scalar> BranchSystem<S> {
    /// Pick a recurrent class: by index when given, else the class
    /// containing the smallest branch state.
    pub fn select_class(&self, choice: Option<usize>) -> Result<&[usize], MulticoneError> {
        match choice {
            Some(k) => self
                .recurrent_classes
                .get(k)
                .map(|c| c.as_slice())
                .ok_or_else(|| {
                    MulticoneError::Violations {
                        count: 0,
                        first: format!(
                            "recurrent class index {k} out of range ({} classes)",
                            self.recurrent_classes.len()
                        ),
                    }
                }),
            None => Ok(self.recurrent_classes[0].as_slice()),
        }
    }
}
