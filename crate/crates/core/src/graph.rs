//! Expert-supplied causal graph, masked coupling matrices, and the canonical
//! bijection between coupling matrices and the flat parameter vector.
//!
//! A [`CausalGraph`] holds the wiring: which node drives which, instantaneously
//! (lag 0, the structural term) and at lags 1..=M. A [`CouplingSet`] holds the
//! numeric coupling factors as one matrix per lag, with diagonals and
//! off-mask entries pinned to exactly zero. [`ParamLayout`] fixes a
//! deterministic order (lag-major, then effect row-major, then cause) on the
//! free parameters so estimator outputs and files stay portable.

use std::collections::BTreeSet;
use std::fmt;

use ndarray::{Array2, ArrayView2};
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Directed causal graph over `G` nodes with instantaneous and lagged edges.
///
/// Edges are ordered pairs `(cause, effect)` of 0-based node indices. Labels
/// are used in files and reports (1-based naming like `B1..B4` is the usual
/// convention for bearing rigs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalGraph {
    labels: Vec<String>,
    lag_order: usize,
    inst_edges: BTreeSet<(usize, usize)>,
    lag_edges: Vec<BTreeSet<(usize, usize)>>,
}

/// A single problem found by [`CausalGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphViolation {
    /// `(cause, effect)` with cause == effect at some lag. Self-causality is
    /// excluded by definition.
    SelfEdge { lag: usize, node: usize },
    /// The instantaneous edge set has a directed cycle; the listed nodes are
    /// the ones left after peeling all sources.
    InstantaneousCycle { nodes: Vec<usize> },
    /// An edge references a node index >= node count.
    IndexOutOfRange { lag: usize, cause: usize, effect: usize },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::SelfEdge { lag, node } => {
                write!(f, "self-edge on node {} at lag {}", node, lag)
            }
            GraphViolation::InstantaneousCycle { nodes } => {
                write!(f, "cycle in instantaneous edges among nodes {:?}", nodes)
            }
            GraphViolation::IndexOutOfRange { lag, cause, effect } => {
                write!(
                    f,
                    "edge ({} -> {}) at lag {} references a node out of range",
                    cause, effect, lag
                )
            }
        }
    }
}

/// Outcome of graph validation: empty means the graph is usable.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<GraphViolation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "ok")
        } else {
            for (i, v) in self.violations.iter().enumerate() {
                if i > 0 {
                    writeln!(f)?;
                }
                write!(f, "violation: {}", v)?;
            }
            Ok(())
        }
    }
}

impl CausalGraph {
    /// Builds a graph from labels and edge sets. `lag_edges[m-1]` holds the
    /// edges at lag `m`. Structural problems (self-edges, cycles) are *not*
    /// rejected here; call [`validate`](Self::validate) to get a report.
    pub fn new(
        labels: Vec<String>,
        lag_order: usize,
        inst_edges: impl IntoIterator<Item = (usize, usize)>,
        lag_edges: Vec<BTreeSet<(usize, usize)>>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidGraph("node set is empty".into()));
        }
        if lag_edges.len() != lag_order {
            return Err(Error::DimensionMismatch {
                context: "lag edge sets vs lag order",
                expected: lag_order,
                actual: lag_edges.len(),
            });
        }
        Ok(Self {
            labels,
            lag_order,
            inst_edges: inst_edges.into_iter().collect(),
            lag_edges,
        })
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn lag_order(&self) -> usize {
        self.lag_order
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> &str {
        &self.labels[node]
    }

    /// Resolves a node label to its 0-based index.
    pub fn node_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownNode(label.to_string()))
    }

    /// Edge set at a given lag; lag 0 is the instantaneous set.
    pub fn edges_at(&self, lag: usize) -> Result<&BTreeSet<(usize, usize)>> {
        if lag == 0 {
            Ok(&self.inst_edges)
        } else if lag <= self.lag_order {
            Ok(&self.lag_edges[lag - 1])
        } else {
            Err(Error::LagOutOfRange {
                lag,
                lag_order: self.lag_order,
            })
        }
    }

    pub fn has_edge(&self, lag: usize, cause: usize, effect: usize) -> bool {
        self.edges_at(lag)
            .map(|s| s.contains(&(cause, effect)))
            .unwrap_or(false)
    }

    /// True if `(cause, effect)` exists at any lag, instantaneous included.
    pub fn has_edge_any_lag(&self, cause: usize, effect: usize) -> bool {
        (0..=self.lag_order).any(|m| self.has_edge(m, cause, effect))
    }

    /// Checks the structural invariants: no self-edges at any lag, node
    /// indices in range, and an acyclic instantaneous edge set. Lagged edges
    /// may form feedback loops; only lag 0 must be a DAG.
    pub fn validate(&self) -> ValidationReport {
        let g = self.node_count();
        let mut violations = Vec::new();
        for lag in 0..=self.lag_order {
            for &(c, e) in self.edges_at(lag).expect("lag in range") {
                if c >= g || e >= g {
                    violations.push(GraphViolation::IndexOutOfRange {
                        lag,
                        cause: c,
                        effect: e,
                    });
                } else if c == e {
                    violations.push(GraphViolation::SelfEdge { lag, node: c });
                }
            }
        }
        if self.instantaneous_topological_order().is_none() {
            // Report the nodes that could not be peeled.
            let mut indegree = vec![0usize; g];
            for &(c, e) in &self.inst_edges {
                if c < g && e < g && c != e {
                    indegree[e] += 1;
                }
            }
            let mut removed = vec![false; g];
            loop {
                let next = (0..g).find(|&n| !removed[n] && indegree[n] == 0);
                match next {
                    Some(n) => {
                        removed[n] = true;
                        for &(c, e) in &self.inst_edges {
                            if c == n && e < g && c != e && !removed[e] {
                                indegree[e] -= 1;
                            }
                        }
                    }
                    None => break,
                }
            }
            let nodes: Vec<usize> = (0..g).filter(|&n| !removed[n]).collect();
            violations.push(GraphViolation::InstantaneousCycle { nodes });
        }
        ValidationReport { violations }
    }

    /// Topological order of the instantaneous edges (smallest index first on
    /// ties, so the order is deterministic). `None` if lag 0 has a cycle.
    /// Out-of-range and self edges are ignored here; `validate` reports them.
    pub fn instantaneous_topological_order(&self) -> Option<Vec<usize>> {
        let g = self.node_count();
        let edges: Vec<(usize, usize)> = self
            .inst_edges
            .iter()
            .copied()
            .filter(|&(c, e)| c < g && e < g && c != e)
            .collect();
        topological_order(g, &edges)
    }
}

/// Kahn's algorithm with a smallest-index-first tie break.
pub(crate) fn topological_order(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut indegree = vec![0usize; n];
    for &(_, e) in edges {
        indegree[e] += 1;
    }
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    for _ in 0..n {
        let next = (0..n).find(|&v| !placed[v] && indegree[v] == 0)?;
        placed[next] = true;
        order.push(next);
        for &(c, e) in edges {
            if c == next && !placed[e] {
                indegree[e] -= 1;
            }
        }
    }
    Some(order)
}

// ── Graph file format ─────────────────────────────────────────────────────

/// One edge entry in the graph file: a `(cause, effect)` pair active at the
/// listed lags (0 = instantaneous).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFileEdge {
    pub cause: String,
    pub effect: String,
    pub lags: Vec<usize>,
}

/// JSON document describing a causal graph: the format domain experts supply.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<String>,
    pub lag_order: usize,
    pub edges: Vec<GraphFileEdge>,
}

impl CausalGraph {
    /// Parses the JSON graph document. Edge endpoints are node labels.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| Error::GraphFile(e.to_string()))?;
        let lag_order = file.lag_order;
        let mut graph = CausalGraph::new(
            file.nodes,
            lag_order,
            std::iter::empty(),
            vec![BTreeSet::new(); lag_order],
        )?;
        for edge in &file.edges {
            let c = graph.node_index(&edge.cause)?;
            let e = graph.node_index(&edge.effect)?;
            for &lag in &edge.lags {
                if lag > lag_order {
                    return Err(Error::LagOutOfRange { lag, lag_order });
                }
                if lag == 0 {
                    graph.inst_edges.insert((c, e));
                } else {
                    graph.lag_edges[lag - 1].insert((c, e));
                }
            }
        }
        Ok(graph)
    }

    /// Serializes back to the JSON document, grouping lags per `(cause,
    /// effect)` pair in deterministic order.
    pub fn to_json(&self) -> String {
        let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
        for lag in 0..=self.lag_order {
            pairs.extend(self.edges_at(lag).expect("lag in range").iter().copied());
        }
        let edges = pairs
            .into_iter()
            .map(|(c, e)| GraphFileEdge {
                cause: self.labels[c].clone(),
                effect: self.labels[e].clone(),
                lags: (0..=self.lag_order)
                    .filter(|&m| self.has_edge(m, c, e))
                    .collect(),
            })
            .collect();
        let file = GraphFile {
            nodes: self.labels.clone(),
            lag_order: self.lag_order,
            edges,
        };
        serde_json::to_string_pretty(&file).expect("graph file serializes")
    }
}

// ── Coupling matrices ─────────────────────────────────────────────────────

/// Coupling factor matrices `A[0..=M]`, one `G x G` matrix per lag.
///
/// Entry `A[m][effect][cause]` is the coupling from `cause` onto `effect` at
/// lag `m`. Diagonals and entries outside the graph mask are exactly zero;
/// every constructor and mutator preserves that.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSet {
    mats: Vec<Array2<f64>>,
}

impl CouplingSet {
    /// All-zero couplings for a graph's shape.
    pub fn zeros(graph: &CausalGraph) -> Self {
        let g = graph.node_count();
        Self {
            mats: vec![Array2::zeros((g, g)); graph.lag_order() + 1],
        }
    }

    /// Builds couplings from `(lag, cause, effect, value)` entries, rejecting
    /// entries that are not edges of the graph.
    pub fn from_entries(
        graph: &CausalGraph,
        entries: &[(usize, usize, usize, f64)],
    ) -> Result<Self> {
        let mut set = Self::zeros(graph);
        for &(lag, cause, effect, value) in entries {
            set.set_coupling(graph, lag, cause, effect, value)?;
        }
        Ok(set)
    }

    /// Sets one coupling value; the `(cause, effect)` pair must be an edge of
    /// the graph at that lag.
    pub fn set_coupling(
        &mut self,
        graph: &CausalGraph,
        lag: usize,
        cause: usize,
        effect: usize,
        value: f64,
    ) -> Result<()> {
        if lag > graph.lag_order() {
            return Err(Error::LagOutOfRange {
                lag,
                lag_order: graph.lag_order(),
            });
        }
        if !graph.has_edge(lag, cause, effect) {
            return Err(Error::UnknownEdge {
                cause: graph
                    .labels()
                    .get(cause)
                    .cloned()
                    .unwrap_or_else(|| cause.to_string()),
                effect: graph
                    .labels()
                    .get(effect)
                    .cloned()
                    .unwrap_or_else(|| effect.to_string()),
            });
        }
        self.mats[lag][[effect, cause]] = value;
        Ok(())
    }

    /// Number of nodes `G`.
    pub fn node_count(&self) -> usize {
        self.mats[0].nrows()
    }

    /// Highest lag `M`.
    pub fn lag_order(&self) -> usize {
        self.mats.len() - 1
    }

    /// The `G x G` matrix at a lag (0 = instantaneous).
    pub fn matrix(&self, lag: usize) -> ArrayView2<'_, f64> {
        self.mats[lag].view()
    }

    pub(crate) fn matrices(&self) -> &[Array2<f64>] {
        &self.mats
    }

    pub fn coupling(&self, lag: usize, cause: usize, effect: usize) -> f64 {
        self.mats[lag][[effect, cause]]
    }

    /// Copy with every coupling multiplied by `alpha`. Masked zeros stay zero.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            mats: self.mats.iter().map(|m| m * alpha).collect(),
        }
    }

    pub(crate) fn from_matrices(mats: Vec<Array2<f64>>) -> Self {
        Self { mats }
    }
}

// ── Parameter layout ──────────────────────────────────────────────────────

/// Deterministic enumeration of the graph's free parameters.
///
/// Order is lag-major, then effect row-major, then cause: all lag-0 couplings
/// first (sorted by effect, then cause), then lag 1, and so on. `flatten` and
/// `unflatten` are mutually inverse under this layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    node_count: usize,
    lag_order: usize,
    triples: Vec<(usize, usize, usize)>, // (lag, effect, cause)
}

impl ParamLayout {
    /// Builds the layout for a graph. The graph must validate cleanly.
    pub fn new(graph: &CausalGraph) -> Result<Self> {
        let report = graph.validate();
        if !report.is_ok() {
            return Err(Error::InvalidGraph(report.to_string()));
        }
        let g = graph.node_count();
        let mut triples = Vec::new();
        for lag in 0..=graph.lag_order() {
            let edges = graph.edges_at(lag).expect("lag in range");
            for effect in 0..g {
                for cause in 0..g {
                    if edges.contains(&(cause, effect)) {
                        triples.push((lag, effect, cause));
                    }
                }
            }
        }
        Ok(Self {
            node_count: g,
            lag_order: graph.lag_order(),
            triples,
        })
    }

    /// Number of free parameters `Q`.
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn lag_order(&self) -> usize {
        self.lag_order
    }

    /// `(lag, effect, cause)` for parameter index `i`.
    pub fn triple(&self, i: usize) -> (usize, usize, usize) {
        self.triples[i]
    }

    pub fn triples(&self) -> &[(usize, usize, usize)] {
        &self.triples
    }

    /// Reads the layout's entries out of a coupling set into a flat vector.
    /// Errors if shapes differ or the set carries nonzero values outside the
    /// layout's mask.
    pub fn flatten(&self, couplings: &CouplingSet) -> Result<Vec<f64>> {
        if couplings.node_count() != self.node_count {
            return Err(Error::DimensionMismatch {
                context: "coupling node count vs layout",
                expected: self.node_count,
                actual: couplings.node_count(),
            });
        }
        if couplings.lag_order() != self.lag_order {
            return Err(Error::DimensionMismatch {
                context: "coupling lag order vs layout",
                expected: self.lag_order,
                actual: couplings.lag_order(),
            });
        }
        let mask: BTreeSet<(usize, usize, usize)> = self.triples.iter().copied().collect();
        for lag in 0..=self.lag_order {
            let m = couplings.matrix(lag);
            for effect in 0..self.node_count {
                for cause in 0..self.node_count {
                    if m[[effect, cause]] != 0.0 && !mask.contains(&(lag, effect, cause)) {
                        return Err(Error::LayoutMismatch { lag, effect, cause });
                    }
                }
            }
        }
        Ok(self
            .triples
            .iter()
            .map(|&(lag, effect, cause)| couplings.coupling(lag, cause, effect))
            .collect())
    }

    /// Places a flat vector back into masked matrices; everything outside the
    /// layout stays exactly zero.
    pub fn unflatten(&self, values: &[f64]) -> Result<CouplingSet> {
        Ok(CouplingSet::from_matrices(self.unflatten_in(values)?))
    }

    /// Generic unflatten used by the complex-step path: the same placement,
    /// any scalar type.
    pub fn unflatten_in<T: Clone + Zero>(&self, values: &[T]) -> Result<Vec<Array2<T>>> {
        if values.len() != self.triples.len() {
            return Err(Error::LengthMismatch {
                expected: self.triples.len(),
                actual: values.len(),
            });
        }
        let g = self.node_count;
        let mut mats = vec![Array2::<T>::zeros((g, g)); self.lag_order + 1];
        for (value, &(lag, effect, cause)) in values.iter().zip(&self.triples) {
            mats[lag][[effect, cause]] = value.clone();
        }
        Ok(mats)
    }
}
