//! Feature graphs: nodes are features, undirected edges license message
//! passing between them.
//!
//! Besides construction this module labels edges against a ground-truth
//! expression, measures hop distances between interacting features, and
//! draws the stratified graph samples (with sibling sets and removal
//! lattices) the experiments are built on.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmie::DmieExpression;

/// Hop count reported for a pair of nodes with no connecting path.
pub const UNREACHABLE_HOPS: u32 = 99;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge endpoint {node} out of range for {num_features} features")]
    NodeOutOfRange { node: usize, num_features: usize },
    #[error("hop query needs two distinct nodes, got {0} twice")]
    SameNode(usize),
    #[error("term of size {0} is outside the pairwise setting")]
    NotPairwise(usize),
    #[error("graph has {graph} features but the expression has {expression}")]
    FeatureMismatch { graph: usize, expression: usize },
    #[error("stratum {stratum} is infeasible: {reason}")]
    InfeasibleStratum { stratum: usize, reason: String },
}

/// An undirected edge stored with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    lo: u32,
    hi: u32,
}

impl Edge {
    pub fn new(a: usize, b: usize) -> Result<Self, GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        Ok(Self {
            lo: lo as u32,
            hi: hi as u32,
        })
    }

    pub fn lo(self) -> usize {
        self.lo as usize
    }

    pub fn hi(self) -> usize {
        self.hi as usize
    }

    pub fn endpoints(self) -> (usize, usize) {
        (self.lo(), self.hi())
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{},{}}}", self.lo, self.hi)
    }
}

/// An undirected simple graph over `num_features` feature nodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureGraph {
    num_features: usize,
    edges: BTreeSet<Edge>,
}

impl FeatureGraph {
    /// The graph without edges.
    pub fn null(num_features: usize) -> Self {
        Self {
            num_features,
            edges: BTreeSet::new(),
        }
    }

    pub fn complete(num_features: usize) -> Self {
        let mut g = Self::null(num_features);
        for a in 0..num_features {
            for b in a + 1..num_features {
                g.edges.insert(Edge::new(a, b).expect("a < b"));
            }
        }
        g
    }

    pub fn from_edges<I>(num_features: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Self::null(num_features);
        for (a, b) in edges {
            g.insert(Edge::new(a, b)?)?;
        }
        Ok(g)
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl ExactSizeIterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn contains(&self, edge: Edge) -> bool {
        self.edges.contains(&edge)
    }

    /// Adds `edge`; returns whether it was new.
    pub fn insert(&mut self, edge: Edge) -> Result<bool, GraphError> {
        if edge.hi() >= self.num_features {
            return Err(GraphError::NodeOutOfRange {
                node: edge.hi(),
                num_features: self.num_features,
            });
        }
        Ok(self.edges.insert(edge))
    }

    pub fn remove(&mut self, edge: Edge) -> bool {
        self.edges.remove(&edge)
    }

    pub fn with_edge(&self, edge: Edge) -> Result<Self, GraphError> {
        let mut g = self.clone();
        g.insert(edge)?;
        Ok(g)
    }

    pub fn without_edge(&self, edge: Edge) -> Self {
        let mut g = self.clone();
        g.remove(edge);
        g
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|e| e.lo() == node || e.hi() == node)
            .count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_features];
        for e in &self.edges {
            deg[e.lo()] += 1;
            deg[e.hi()] += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_features];
        for e in &self.edges {
            adj[e.lo()].push(e.hi());
            adj[e.hi()].push(e.lo());
        }
        adj
    }

    /// Directed arcs `(src, dst)`, two per undirected edge, sorted by
    /// destination then source.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        let mut arcs: Vec<(usize, usize)> = self
            .edges
            .iter()
            .flat_map(|e| [(e.lo(), e.hi()), (e.hi(), e.lo())])
            .collect();
        arcs.sort_unstable_by_key(|&(s, t)| (t, s));
        arcs
    }

    pub fn is_subgraph_of(&self, other: &Self) -> bool {
        self.num_features == other.num_features && self.edges.is_subset(&other.edges)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let mut g = Self::null(self.num_features);
        for e in &self.edges {
            g.insert(Edge::new(perm[e.lo()], perm[e.hi()])?)?;
        }
        Ok(g)
    }
}

impl fmt::Display for FeatureGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d={} [", self.num_features)?;
        for (i, e) in self.edges.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}-{}", e.lo, e.hi)?;
        }
        f.write_str("]")
    }
}

/// All `C(d, 2)` possible edges, in lexicographic order.
pub fn all_pairs(num_features: usize) -> Vec<Edge> {
    FeatureGraph::complete(num_features).edges().collect()
}

pub fn null_graph(num_features: usize) -> FeatureGraph {
    FeatureGraph::null(num_features)
}

pub fn complete_graph(num_features: usize) -> FeatureGraph {
    FeatureGraph::complete(num_features)
}

/// Interaction pairs of a pairwise expression, in term order.
pub fn interaction_pairs(expr: &DmieExpression) -> Result<Vec<Edge>, GraphError> {
    let mut pairs = Vec::new();
    for term in expr.terms() {
        match term.len() {
            1 => {}
            2 => pairs.push(Edge::new(term[0], term[1])?),
            n => return Err(GraphError::NotPairwise(n)),
        }
    }
    Ok(pairs)
}

/// One edge per two-variable term; unary features stay isolated.
pub fn ground_truth_graph(expr: &DmieExpression) -> Result<FeatureGraph, GraphError> {
    let pairs = interaction_pairs(expr)?;
    FeatureGraph::from_edges(expr.num_features(), pairs.iter().map(|e| e.endpoints()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeLabeling {
    pub interaction: Vec<Edge>,
    pub non_interaction: Vec<Edge>,
}

pub fn label_edges(graph: &FeatureGraph, expr: &DmieExpression) -> Result<EdgeLabeling, GraphError> {
    check_sizes(graph, expr)?;
    let truth: BTreeSet<Edge> = interaction_pairs(expr)?.into_iter().collect();
    let (interaction, non_interaction) = graph.edges().partition(|e| truth.contains(e));
    Ok(EdgeLabeling {
        interaction,
        non_interaction,
    })
}

fn check_sizes(graph: &FeatureGraph, expr: &DmieExpression) -> Result<(), GraphError> {
    if graph.num_features() != expr.num_features() {
        return Err(GraphError::FeatureMismatch {
            graph: graph.num_features(),
            expression: expr.num_features(),
        });
    }
    Ok(())
}

/// BFS distances from `source`; unreachable nodes get [`UNREACHABLE_HOPS`].
fn hops_from(adj: &[Vec<usize>], source: usize) -> Vec<u32> {
    let mut dist = vec![UNREACHABLE_HOPS; adj.len()];
    let mut queue = VecDeque::new();
    dist[source] = 0;
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == UNREACHABLE_HOPS {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Shortest-path length between `u` and `v`, or [`UNREACHABLE_HOPS`].
pub fn shortest_hops(graph: &FeatureGraph, u: usize, v: usize) -> Result<u32, GraphError> {
    let d = graph.num_features();
    for node in [u, v] {
        if node >= d {
            return Err(GraphError::NodeOutOfRange {
                node,
                num_features: d,
            });
        }
    }
    if u == v {
        return Err(GraphError::SameNode(u));
    }
    Ok(hops_from(&graph.adjacency(), u)[v])
}

/// Stratum descriptors of a graph relative to a ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphStrata {
    pub total_edges: usize,
    pub interaction_edges: usize,
    pub non_interaction_edges: usize,
    /// Hop distance for each ground-truth pair, in term order.
    pub hops: Vec<u32>,
}

pub fn strata(graph: &FeatureGraph, expr: &DmieExpression) -> Result<GraphStrata, GraphError> {
    let labels = label_edges(graph, expr)?;
    let adj = graph.adjacency();
    let hops = interaction_pairs(expr)?
        .iter()
        .map(|e| hops_from(&adj, e.lo())[e.hi()])
        .collect();
    Ok(GraphStrata {
        total_edges: graph.edge_count(),
        interaction_edges: labels.interaction.len(),
        non_interaction_edges: labels.non_interaction.len(),
        hops,
    })
}

/// All graphs reachable from `graph` by toggling each interaction edge
/// independently, non-interaction edges fixed.
///
/// Member `r` has interaction pair `i` removed iff bit `i` of `r` is set, so
/// the first member holds every interaction edge and the last holds none.
pub fn sibling_set(graph: &FeatureGraph, expr: &DmieExpression) -> Result<Vec<FeatureGraph>, GraphError> {
    check_sizes(graph, expr)?;
    let pairs = interaction_pairs(expr)?;
    let mut full = graph.clone();
    for &e in &pairs {
        full.insert(e)?;
    }
    let members = (0..1usize << pairs.len())
        .map(|removed| {
            let mut g = full.clone();
            for (i, &e) in pairs.iter().enumerate() {
                if removed >> i & 1 == 1 {
                    g.remove(e);
                }
            }
            g
        })
        .collect();
    Ok(members)
}

/// One edge of the removal lattice: `child` is `parent` minus `dropped`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticePair {
    pub parent: FeatureGraph,
    pub child: FeatureGraph,
    pub dropped: Edge,
}

/// Every (parent, child) step of the lattice below `graph` in which one
/// interaction edge is removed.
///
/// Parents are ordered by the set of interaction edges already removed
/// (as a bit mask over the edges `graph` holds), then by dropped edge.
pub fn removal_lattice(graph: &FeatureGraph, expr: &DmieExpression) -> Result<Vec<LatticePair>, GraphError> {
    let present = label_edges(graph, expr)?.interaction;
    let present: Vec<Edge> = interaction_pairs(expr)?
        .into_iter()
        .filter(|e| present.contains(e))
        .collect();
    let mut out = Vec::new();
    for removed in 0..1usize << present.len() {
        let mut parent = graph.clone();
        for (i, &e) in present.iter().enumerate() {
            if removed >> i & 1 == 1 {
                parent.remove(e);
            }
        }
        for (i, &e) in present.iter().enumerate() {
            if removed >> i & 1 == 0 {
                out.push(LatticePair {
                    child: parent.without_edge(e),
                    parent: parent.clone(),
                    dropped: e,
                });
            }
        }
    }
    Ok(out)
}

/// Requested number of graphs in one stratum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumQuota {
    pub interaction_edges: usize,
    pub non_interaction_edges: usize,
    /// Required hop profile, one entry per ground-truth pair.
    #[serde(default)]
    pub hops: Option<Vec<u32>>,
    pub count: usize,
}

impl StratumQuota {
    pub fn new(interaction_edges: usize, non_interaction_edges: usize, count: usize) -> Self {
        Self {
            interaction_edges,
            non_interaction_edges,
            hops: None,
            count,
        }
    }

    pub fn with_hops(mut self, hops: Vec<u32>) -> Self {
        self.hops = Some(hops);
        self
    }

    pub fn total_edges(&self) -> usize {
        self.interaction_edges + self.non_interaction_edges
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub quotas: Vec<StratumQuota>,
    /// Expand every drawn graph into its sibling set.
    pub siblings: bool,
    /// Rejection-sampling budget per stratum.
    pub max_attempts: usize,
}

impl SamplingPlan {
    pub fn new(quotas: Vec<StratumQuota>) -> Self {
        Self {
            quotas,
            siblings: false,
            max_attempts: 10_000,
        }
    }

    pub fn with_siblings(mut self) -> Self {
        self.siblings = true;
        self
    }
}

/// A drawn graph and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledGraph {
    pub graph: FeatureGraph,
    /// Index of the quota the draw was filed under.
    pub stratum: usize,
    /// Sibling-set id; draws without sibling expansion get their own id.
    pub group: usize,
    /// Whether this is the drawn member rather than a toggled sibling.
    pub drawn: bool,
    pub strata: GraphStrata,
}

/// Number of graphs in the (interaction, non-interaction) edge-count stratum.
pub fn stratum_size(expr: &DmieExpression, interaction_edges: usize, non_interaction_edges: usize) -> Result<u128, GraphError> {
    let k = interaction_pairs(expr)?.len();
    let total = expr.num_features() * expr.num_features().saturating_sub(1) / 2;
    Ok(binomial(k, interaction_edges) * binomial(total - k, non_interaction_edges))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Stratified sample of feature graphs.
///
/// Within a stratum the interaction and non-interaction edge subsets are
/// drawn uniformly among subsets of the requested sizes; a hop-profile
/// requirement is met by rejection with `plan.max_attempts` draws. Draws are
/// deduplicated across the whole sample (by non-interaction edge set when
/// siblings are expanded, since that set determines the sibling set).
pub fn sample_stratified<R: Rng + ?Sized>(
    expr: &DmieExpression,
    plan: &SamplingPlan,
    rng: &mut R,
) -> Result<Vec<SampledGraph>, GraphError> {
    let pairs = interaction_pairs(expr)?;
    let d = expr.num_features();
    let truth: BTreeSet<Edge> = pairs.iter().copied().collect();
    let others: Vec<Edge> = all_pairs(d).into_iter().filter(|e| !truth.contains(e)).collect();

    let mut seen: BTreeSet<Vec<Edge>> = BTreeSet::new();
    let mut out = Vec::new();
    let mut group = 0;
    for (stratum, quota) in plan.quotas.iter().enumerate() {
        let infeasible = |reason: String| GraphError::InfeasibleStratum { stratum, reason };
        if quota.interaction_edges > pairs.len() {
            return Err(infeasible(alloc::format!(
                "{} interaction edges requested, {} exist",
                quota.interaction_edges,
                pairs.len()
            )));
        }
        if quota.non_interaction_edges > others.len() {
            return Err(infeasible(alloc::format!(
                "{} non-interaction edges requested, {} exist",
                quota.non_interaction_edges,
                others.len()
            )));
        }
        if let Some(h) = &quota.hops {
            if h.len() != pairs.len() {
                return Err(infeasible(alloc::format!(
                    "hop profile has {} entries for {} pairs",
                    h.len(),
                    pairs.len()
                )));
            }
        }
        let mut filed = 0;
        let mut attempts = 0;
        while filed < quota.count {
            if attempts == plan.max_attempts {
                return Err(infeasible(alloc::format!(
                    "only {filed} of {} distinct graphs found in {attempts} attempts",
                    quota.count
                )));
            }
            attempts += 1;
            let mut g = FeatureGraph::null(d);
            for i in index::sample(rng, pairs.len(), quota.interaction_edges) {
                g.insert(pairs[i])?;
            }
            let mut chosen: Vec<Edge> = index::sample(rng, others.len(), quota.non_interaction_edges)
                .into_iter()
                .map(|i| others[i])
                .collect();
            chosen.sort_unstable();
            for &e in &chosen {
                g.insert(e)?;
            }
            let s = strata(&g, expr)?;
            if let Some(h) = &quota.hops {
                if &s.hops != h {
                    continue;
                }
            }
            let key = if plan.siblings { chosen } else { g.edges().collect() };
            if !seen.insert(key) {
                continue;
            }
            if plan.siblings {
                for sib in sibling_set(&g, expr)? {
                    let strata = strata(&sib, expr)?;
                    out.push(SampledGraph {
                        drawn: sib == g,
                        graph: sib,
                        stratum,
                        group,
                        strata,
                    });
                }
            } else {
                out.push(SampledGraph {
                    graph: g,
                    stratum,
                    group,
                    drawn: true,
                    strata: s,
                });
            }
            group += 1;
            filed += 1;
        }
    }
    Ok(out)
}

/// Groups sampled graphs by sibling id.
pub fn sibling_groups(sample: &[SampledGraph]) -> BTreeMap<usize, Vec<&SampledGraph>> {
    let mut groups: BTreeMap<usize, Vec<&SampledGraph>> = BTreeMap::new();
    for s in sample {
        groups.entry(s.group).or_default().push(s);
    }
    groups
}
