//! Two-part description lengths for graph-induced pairwise models.
//!
//! A graph `G` induces `f_G(x) = Σ_{deg(i)=0} c_i x_i + Σ_{{i,j}∈E} c_ij x_i x_j`
//! (no intercept). This is defined for any graph, not only matchings, so
//! that dense graphs such as the complete graph can be scored too. The
//! coefficients are fitted by least squares and the description length is
//!
//! ```text
//! L(f_G)   = L_R(|E|) + Σ L_R(c)
//! L(S|f_G) = Σ_rows Σ_i L_R(x_i) + Σ_rows L_R(y - f_G(x))
//! ```
//!
//! The feature term is summed entry-wise. It does not depend on the graph,
//! so it never changes a comparison.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmie::{class_representative, enumerate_partitions, graph_to_partition, DmieExpression};
use crate::fgraph::{all_pairs, ground_truth_graph, Edge, FeatureGraph, GraphError};
use crate::linalg;
use crate::rng::{seeded, stream};
use crate::synth::{generate_from, DataView, GeneratorSpec, SynthError};

/// Largest feature count accepted by [`exhaustive_select`].
pub const MAX_EXHAUSTIVE_FEATURES: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdlError {
    #[error("graph has {graph} features but the data has {data}")]
    FeatureMismatch { graph: usize, data: usize },
    #[error("no features to fit")]
    EmptyDesign,
    #[error("{rows} rows cannot determine {cols} coefficients")]
    TooFewRows { rows: usize, cols: usize },
    #[error("exhaustive selection is capped at {max} features, got {got}")]
    TooManyFeatures { got: usize, max: usize },
    #[error("invalid trial plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// A code-length function for reals.
///
/// Implementations are expected to be subadditive, monotone in magnitude,
/// and to change by at most [`difference_bound`](Self::difference_bound)
/// between reals at most 1 apart.
pub trait RealCode {
    fn bits(&self, x: f64) -> f64;
    fn difference_bound(&self) -> f64;
}

/// `L_R(x) = log2(1 + |x|)`.
///
/// Subadditive because `1 + |x + y| ≤ (1 + |x|)(1 + |y|)`; monotone because
/// log is; and for `|x - y| ≤ 1` the ratio `(1 + |x|) / (1 + |y|)` lies in
/// `[1/2, 2]`, so the bound is 1 bit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Log2Code;

impl RealCode for Log2Code {
    fn bits(&self, x: f64) -> f64 {
        libm::log2(1.0 + x.abs())
    }

    fn difference_bound(&self) -> f64 {
        1.0
    }
}

pub fn default_code() -> Log2Code {
    Log2Code
}

/// A fitted `f_G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseModel {
    graph: FeatureGraph,
    unary: Vec<(usize, f64)>,
    pairs: Vec<(Edge, f64)>,
}

impl PairwiseModel {
    /// Coefficients must cover exactly the isolated nodes and the edges of
    /// `graph`, in ascending order.
    pub fn new(graph: FeatureGraph, unary: Vec<(usize, f64)>, pairs: Vec<(Edge, f64)>) -> Result<Self, MdlError> {
        let isolated = isolated_nodes(&graph);
        let edges: Vec<Edge> = graph.edges().collect();
        if unary.iter().map(|u| u.0).ne(isolated.iter().copied()) || pairs.iter().map(|p| p.0).ne(edges.iter().copied()) {
            return Err(MdlError::Plan("coefficients do not match the graph".into()));
        }
        Ok(Self { graph, unary, pairs })
    }

    pub fn graph(&self) -> &FeatureGraph {
        &self.graph
    }

    /// `(node, c_i)` for the isolated nodes.
    pub fn unary(&self) -> &[(usize, f64)] {
        &self.unary
    }

    /// `(edge, c_ij)` per edge.
    pub fn pairs(&self) -> &[(Edge, f64)] {
        &self.pairs
    }

    /// Unary coefficients, then pair coefficients.
    pub fn coefficients(&self) -> impl Iterator<Item = f64> + '_ {
        self.unary.iter().map(|u| u.1).chain(self.pairs.iter().map(|p| p.1))
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let unary: f64 = self.unary.iter().map(|&(i, c)| c * row[i]).sum();
        let pairs: f64 = self.pairs.iter().map(|&(e, c)| c * row[e.lo()] * row[e.hi()]).sum();
        unary + pairs
    }
}

fn isolated_nodes(graph: &FeatureGraph) -> Vec<usize> {
    graph
        .degrees()
        .iter()
        .enumerate()
        .filter(|(_, &deg)| deg == 0)
        .map(|(i, _)| i)
        .collect()
}

/// Row-major design: isolated-node columns, then one product per edge.
fn design(graph: &FeatureGraph, rows: DataView<'_>) -> (Vec<usize>, Vec<Edge>, Vec<f64>) {
    let isolated = isolated_nodes(graph);
    let edges: Vec<Edge> = graph.edges().collect();
    let mut out = Vec::with_capacity(rows.len() * (isolated.len() + edges.len()));
    for row in rows.rows() {
        out.extend(isolated.iter().map(|&i| row[i]));
        out.extend(edges.iter().map(|e| row[e.lo()] * row[e.hi()]));
    }
    (isolated, edges, out)
}

fn check_shape(graph: &FeatureGraph, rows: DataView<'_>) -> Result<(), MdlError> {
    if graph.num_features() != rows.num_features {
        return Err(MdlError::FeatureMismatch {
            graph: graph.num_features(),
            data: rows.num_features,
        });
    }
    if graph.num_features() == 0 {
        return Err(MdlError::EmptyDesign);
    }
    Ok(())
}

/// Least-squares fit, plus classical standard errors in
/// [`PairwiseModel::coefficients`] order when the design has full rank.
pub fn fit_pairwise_with_errors(
    graph: &FeatureGraph,
    rows: DataView<'_>,
) -> Result<(PairwiseModel, Option<Vec<f64>>), MdlError> {
    check_shape(graph, rows)?;
    let (isolated, edges, x) = design(graph, rows);
    let cols = isolated.len() + edges.len();
    if rows.len() < cols || rows.is_empty() {
        return Err(MdlError::TooFewRows { rows: rows.len(), cols });
    }
    let beta = linalg::least_squares(&x, rows.len(), cols, rows.targets);
    let se = linalg::standard_errors(&x, rows.len(), cols, rows.targets, &beta);
    let (bu, bp) = beta.split_at(isolated.len());
    let model = PairwiseModel {
        graph: graph.clone(),
        unary: isolated.into_iter().zip(bu.iter().copied()).collect(),
        pairs: edges.into_iter().zip(bp.iter().copied()).collect(),
    };
    Ok((model, se))
}

/// Ordinary least squares; rank-deficient designs get the minimum-norm
/// solution.
pub fn fit_pairwise(graph: &FeatureGraph, rows: DataView<'_>) -> Result<PairwiseModel, MdlError> {
    fit_pairwise_with_errors(graph, rows).map(|(m, _)| m)
}

pub fn model_bits(model: &PairwiseModel, code: &impl RealCode) -> f64 {
    code.bits(model.graph.edge_count() as f64) + model.coefficients().map(|c| code.bits(c)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataBits {
    pub feature_bits: f64,
    pub residual_bits: f64,
}

impl DataBits {
    pub fn total(&self) -> f64 {
        self.feature_bits + self.residual_bits
    }
}

pub fn feature_bits(rows: DataView<'_>, code: &impl RealCode) -> f64 {
    rows.features.iter().map(|&x| code.bits(x)).sum()
}

pub fn residual_bits(model: &PairwiseModel, rows: DataView<'_>, code: &impl RealCode) -> f64 {
    rows.rows()
        .zip(rows.targets)
        .map(|(row, &y)| code.bits(y - model.predict(row)))
        .sum()
}

pub fn data_bits(model: &PairwiseModel, rows: DataView<'_>, code: &impl RealCode) -> DataBits {
    DataBits {
        feature_bits: feature_bits(rows, code),
        residual_bits: residual_bits(model, rows, code),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdlReport {
    pub graph: FeatureGraph,
    pub model_bits: f64,
    pub feature_bits: f64,
    pub residual_bits: f64,
    pub total_bits: f64,
}

impl MdlReport {
    pub fn data_bits(&self) -> f64 {
        self.feature_bits + self.residual_bits
    }
}

/// Fits `f_G` on `rows` and codes the same rows with it.
pub fn total_bits(graph: &FeatureGraph, rows: DataView<'_>, code: &impl RealCode) -> Result<MdlReport, MdlError> {
    let model = fit_pairwise(graph, rows)?;
    Ok(report_for(&model, rows, code, feature_bits(rows, code)))
}

fn report_for(model: &PairwiseModel, rows: DataView<'_>, code: &impl RealCode, feature: f64) -> MdlReport {
    let mb = model_bits(model, code);
    let rb = residual_bits(model, rows, code);
    MdlReport {
        graph: model.graph.clone(),
        model_bits: mb,
        feature_bits: feature,
        residual_bits: rb,
        total_bits: mb + feature + rb,
    }
}

/// Scores many graphs on one dataset, computing the shared feature term once.
struct Scorer<'a, C> {
    rows: DataView<'a>,
    code: &'a C,
    feature: f64,
}

impl<'a, C: RealCode> Scorer<'a, C> {
    fn new(rows: DataView<'a>, code: &'a C) -> Self {
        Self {
            rows,
            code,
            feature: feature_bits(rows, code),
        }
    }

    fn score(&self, graph: &FeatureGraph) -> Result<MdlReport, MdlError> {
        let model = fit_pairwise(graph, self.rows)?;
        Ok(report_for(&model, self.rows, self.code, self.feature))
    }
}

/// One inequality checked on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// Residual bits do not drop when an interaction edge is deleted.
    Lemma1Remove,
    /// Residual bits do not drop when an edge joins two unary features.
    Lemma1Add,
    /// Total bits do not drop when an interaction edge is deleted.
    Proposition1Remove,
    /// Total bits do not drop when an edge joins two unary features.
    Proposition1Add,
    /// Residual bits of the complete graph are at least the truth's.
    Corollary1Residual,
    /// Total bits of the complete graph are at least the truth's.
    Corollary1Total,
    Corollary2Residual,
    Corollary2Total,
    /// Supergraphs of the truth that keep unary features isolated code no
    /// longer than the complete graph.
    TheoremComplete,
    /// The same family against the null graph.
    TheoremNull,
    /// Arbitrary random supergraphs against both the complete and the null
    /// graph. Reported, not required: extra edges at unary features delete
    /// their linear terms.
    TheoremUnrestricted,
}

impl Inequality {
    pub const ALL: [Inequality; 11] = [
        Self::Lemma1Remove,
        Self::Lemma1Add,
        Self::Proposition1Remove,
        Self::Proposition1Add,
        Self::Corollary1Residual,
        Self::Corollary1Total,
        Self::Corollary2Residual,
        Self::Corollary2Total,
        Self::TheoremComplete,
        Self::TheoremNull,
        Self::TheoremUnrestricted,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::Lemma1Remove => "lemma1_remove",
            Self::Lemma1Add => "lemma1_add",
            Self::Proposition1Remove => "proposition1_remove",
            Self::Proposition1Add => "proposition1_add",
            Self::Corollary1Residual => "corollary1_residual",
            Self::Corollary1Total => "corollary1_total",
            Self::Corollary2Residual => "corollary2_residual",
            Self::Corollary2Total => "corollary2_total",
            Self::TheoremComplete => "theorem_complete",
            Self::TheoremNull => "theorem_null",
            Self::TheoremUnrestricted => "theorem_unrestricted",
        }
    }
}

/// The claims as stated; each holds on a dataset when all its parts do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    Lemma1,
    Proposition1,
    Corollary1,
    Corollary2,
    Theorem,
}

impl Claim {
    pub const ALL: [Claim; 5] = [
        Self::Lemma1,
        Self::Proposition1,
        Self::Corollary1,
        Self::Corollary2,
        Self::Theorem,
    ];

    pub fn parts(self) -> &'static [Inequality] {
        use Inequality::*;
        match self {
            Self::Lemma1 => &[Lemma1Remove, Lemma1Add],
            Self::Proposition1 => &[Proposition1Remove, Proposition1Add],
            Self::Corollary1 => &[Corollary1Residual, Corollary1Total],
            Self::Corollary2 => &[Corollary2Residual, Corollary2Total],
            Self::Theorem => &[TheoremComplete, TheoremNull],
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Self::Lemma1 => "lemma1",
            Self::Proposition1 => "proposition1",
            Self::Corollary1 => "corollary1",
            Self::Corollary2 => "corollary2",
            Self::Theorem => "theorem",
        }
    }
}

/// Outcome of one inequality on one dataset. `instances` counts the graph
/// comparisons made; with none (e.g. no two unary features to join) the
/// check is vacuous and passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub inequality: Inequality,
    pub instances: usize,
    pub violations: usize,
}

impl Check {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// How the supergraph families of the theorem are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyOptions {
    /// Isolation-preserving supergraphs are enumerated when there are at
    /// most this many, otherwise this many are sampled.
    pub max_family: usize,
    /// Random unrestricted supergraphs per dataset.
    pub unrestricted: usize,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        Self {
            max_family: 64,
            unrestricted: 10,
        }
    }
}

/// Supergraphs of `truth` that add only edges between already matched
/// nodes, so no unary feature loses its term.
pub fn isolation_preserving_supergraphs(
    truth: &FeatureGraph,
    max_family: usize,
    rng: &mut impl Rng,
) -> Vec<FeatureGraph> {
    let isolated: BTreeSet<usize> = isolated_nodes(truth).into_iter().collect();
    let extra: Vec<Edge> = all_pairs(truth.num_features())
        .into_iter()
        .filter(|e| !truth.contains(*e) && !isolated.contains(&e.lo()) && !isolated.contains(&e.hi()))
        .collect();
    let build = |mask: u64| {
        let mut g = truth.clone();
        for (i, &e) in extra.iter().enumerate() {
            if mask >> i & 1 == 1 {
                g.insert(e).expect("pairs in range");
            }
        }
        g
    };
    if extra.len() < 63 && (1u64 << extra.len()) <= max_family as u64 {
        (0..1u64 << extra.len()).map(build).collect()
    } else {
        (0..max_family)
            .map(|_| {
                let mut g = truth.clone();
                for &e in &extra {
                    if rng.random_bool(0.5) {
                        g.insert(e).expect("pairs in range");
                    }
                }
                g
            })
            .collect()
    }
}

/// Random supergraph adding each missing pair with probability 0.3.
fn random_supergraph(truth: &FeatureGraph, rng: &mut impl Rng) -> FeatureGraph {
    let mut g = truth.clone();
    for e in all_pairs(truth.num_features()) {
        if !truth.contains(e) && rng.random_bool(0.3) {
            g.insert(e).expect("pairs in range");
        }
    }
    g
}

fn require_pairwise(truth: &DmieExpression) -> Result<FeatureGraph, MdlError> {
    Ok(ground_truth_graph(truth)?)
}

/// Checks every [`Inequality`] on one dataset whose generating expression
/// is `truth` (pairwise and unary terms only). Fits and codes in-sample on
/// `rows`.
pub fn check_dataset(
    truth: &DmieExpression,
    rows: DataView<'_>,
    options: &FamilyOptions,
    rng: &mut impl Rng,
    code: &impl RealCode,
) -> Result<Vec<Check>, MdlError> {
    let g_star = require_pairwise(truth)?;
    let d = g_star.num_features();
    let scorer = Scorer::new(rows, code);
    let star = scorer.score(&g_star)?;
    let complete = scorer.score(&FeatureGraph::complete(d))?;
    let null = scorer.score(&FeatureGraph::null(d))?;

    let mut checks: Vec<Check> = Inequality::ALL
        .iter()
        .map(|&inequality| Check {
            inequality,
            instances: 0,
            violations: 0,
        })
        .collect();
    let mut record = |which: Inequality, holds: bool| {
        let c = checks.iter_mut().find(|c| c.inequality == which).expect("all listed");
        c.instances += 1;
        c.violations += usize::from(!holds);
    };

    for e in g_star.edges() {
        let r = scorer.score(&g_star.without_edge(e))?;
        record(Inequality::Lemma1Remove, r.residual_bits >= star.residual_bits);
        record(Inequality::Proposition1Remove, r.total_bits >= star.total_bits);
    }
    // Joining two unary features keeps every degree at most 1, the setting
    // in which f_G is originally defined.
    let isolated = isolated_nodes(&g_star);
    for (k, &a) in isolated.iter().enumerate() {
        for &b in &isolated[k + 1..] {
            let r = scorer.score(&g_star.with_edge(Edge::new(a, b)?)?)?;
            record(Inequality::Lemma1Add, r.residual_bits >= star.residual_bits);
            record(Inequality::Proposition1Add, r.total_bits >= star.total_bits);
        }
    }
    record(Inequality::Corollary1Residual, complete.residual_bits >= star.residual_bits);
    record(Inequality::Corollary1Total, star.total_bits <= complete.total_bits);
    record(Inequality::Corollary2Residual, null.residual_bits >= star.residual_bits);
    record(Inequality::Corollary2Total, star.total_bits <= null.total_bits);
    for g in isolation_preserving_supergraphs(&g_star, options.max_family, rng) {
        let r = scorer.score(&g)?;
        record(Inequality::TheoremComplete, r.total_bits <= complete.total_bits);
        record(Inequality::TheoremNull, r.total_bits <= null.total_bits);
    }
    for _ in 0..options.unrestricted {
        let r = scorer.score(&random_supergraph(&g_star, rng))?;
        record(
            Inequality::TheoremUnrestricted,
            r.total_bits <= complete.total_bits && r.total_bits <= null.total_bits,
        );
    }
    Ok(checks)
}

/// Monte-Carlo trial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub trials: usize,
    pub min_features: usize,
    pub max_features: usize,
    pub samples: usize,
    pub noise_scale: f64,
    pub seed: u64,
    pub family: FamilyOptions,
}

impl Default for TrialPlan {
    fn default() -> Self {
        Self {
            trials: 50,
            min_features: 3,
            max_features: 8,
            samples: 2000,
            noise_scale: 0.1,
            seed: 0,
            family: FamilyOptions::default(),
        }
    }
}

impl TrialPlan {
    fn validate(&self) -> Result<(), MdlError> {
        if self.min_features < 3 || self.min_features > self.max_features {
            return Err(MdlError::Plan(
                "feature range must start at 3 so that a truth has a pair and a unary term".into(),
            ));
        }
        Ok(())
    }

    fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(trial as u64)
    }
}

/// A random degree-at-most-1 ground truth on `d ∈ [min, max]` features:
/// `p ∈ [1, ⌊(d-1)/2⌋]` disjoint pairs, every other feature unary, placed
/// by a random permutation of the feature indices.
pub fn draw_truth(min_features: usize, max_features: usize, rng: &mut impl Rng) -> DmieExpression {
    let d = rng.random_range(min_features..=max_features);
    let p = rng.random_range(1..=(d - 1) / 2);
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(rng);
    let terms = (0..p)
        .map(|i| vec![perm[2 * i], perm[2 * i + 1]])
        .chain(perm[2 * p..].iter().map(|&i| vec![i]))
        .collect();
    DmieExpression::new(d, terms).expect("terms are disjoint")
}

fn trial_rng(plan: &TrialPlan, trial: usize) -> ChaCha8Rng {
    seeded(plan.trial_seed(trial), stream::TRIALS)
}

fn trial_data(plan: &TrialPlan, trial: usize, truth: DmieExpression) -> Result<crate::synth::SyntheticDataset, MdlError> {
    // Feature columns use seeds base + j with j < d <= 64.
    let spec = GeneratorSpec {
        truth,
        samples: plan.samples,
        noise_scale: plan.noise_scale,
        seed_base: plan.trial_seed(trial).wrapping_mul(64),
    };
    Ok(generate_from(&spec)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub truth: DmieExpression,
    pub checks: Vec<Check>,
    /// Largest `|y - f(x)|`: the Gaussian noise is not truncated, so this
    /// is the realized stand-in for the bound the theory assumes.
    pub max_abs_noise: f64,
}

impl TrialOutcome {
    pub fn holds(&self, inequality: Inequality) -> bool {
        self.checks.iter().find(|c| c.inequality == inequality).is_some_and(Check::pass)
    }

    pub fn claim_holds(&self, claim: Claim) -> bool {
        claim.parts().iter().all(|&i| self.holds(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub plan: TrialPlan,
    pub trials: Vec<TrialOutcome>,
}

impl VerificationReport {
    fn rate(&self, pass: impl Fn(&TrialOutcome) -> bool) -> f64 {
        if self.trials.is_empty() {
            return 0.0;
        }
        self.trials.iter().filter(|t| pass(t)).count() as f64 / self.trials.len() as f64
    }

    pub fn pass_rate(&self, inequality: Inequality) -> f64 {
        self.rate(|t| t.holds(inequality))
    }

    pub fn claim_pass_rate(&self, claim: Claim) -> f64 {
        self.rate(|t| t.claim_holds(claim))
    }

    pub fn max_abs_noise(&self) -> f64 {
        self.trials.iter().map(|t| t.max_abs_noise).fold(0.0, f64::max)
    }
}

/// Runs the inequality checks over `plan.trials` random ground truths.
pub fn verify_inequalities(plan: &TrialPlan, code: &impl RealCode) -> Result<VerificationReport, MdlError> {
    plan.validate()?;
    let mut trials = Vec::with_capacity(plan.trials);
    for trial in 0..plan.trials {
        let mut rng = trial_rng(plan, trial);
        let truth = draw_truth(plan.min_features, plan.max_features, &mut rng);
        let data = trial_data(plan, trial, truth.clone())?;
        let checks = check_dataset(&truth, data.all(), &plan.family, &mut rng, code)?;
        let max_abs_noise = data
            .targets()
            .iter()
            .zip(data.clean_targets())
            .map(|(y, f)| (y - f).abs())
            .fold(0.0, f64::max);
        trials.push(TrialOutcome {
            trial,
            truth,
            checks,
            max_abs_noise,
        });
    }
    Ok(VerificationReport {
        plan: plan.clone(),
        trials,
    })
}

fn matchings(d: usize) -> Vec<FeatureGraph> {
    fn extend(g: FeatureGraph, next: usize, used: &mut Vec<bool>, out: &mut Vec<FeatureGraph>) {
        let d = g.num_features();
        let Some(a) = (next..d).find(|&i| !used[i]) else {
            out.push(g);
            return;
        };
        used[a] = true;
        // `a` stays unmatched ...
        extend(g.clone(), a + 1, used, out);
        // ... or pairs with a later free node.
        for b in a + 1..d {
            if !used[b] {
                used[b] = true;
                extend(g.with_edge(Edge::new(a, b).expect("a < b")).expect("in range"), a + 1, used, out);
                used[b] = false;
            }
        }
        used[a] = false;
    }
    let mut out = Vec::new();
    extend(FeatureGraph::null(d), 0, &mut vec![false; d], &mut out);
    out
}

/// One representative per connectivity class plus every graph of maximum
/// degree at most 1, without duplicates, in ascending order.
pub fn candidate_graphs(num_features: usize) -> Vec<FeatureGraph> {
    let mut set: BTreeSet<FeatureGraph> = enumerate_partitions(num_features)
        .iter()
        .map(class_representative)
        .collect();
    set.extend(matchings(num_features));
    set.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: MdlReport,
    /// Every candidate's report, in [`candidate_graphs`] order.
    pub candidates: Vec<MdlReport>,
}

/// Minimizes total bits over [`candidate_graphs`]; ties go to the earlier
/// candidate.
pub fn exhaustive_select(rows: DataView<'_>, code: &impl RealCode) -> Result<Selection, MdlError> {
    let d = rows.num_features;
    if d > MAX_EXHAUSTIVE_FEATURES {
        return Err(MdlError::TooManyFeatures {
            got: d,
            max: MAX_EXHAUSTIVE_FEATURES,
        });
    }
    let scorer = Scorer::new(rows, code);
    let candidates = candidate_graphs(d)
        .iter()
        .map(|g| scorer.score(g))
        .collect::<Result<Vec<_>, _>>()?;
    let best = candidates
        .iter()
        .fold(None::<&MdlReport>, |acc, r| match acc {
            Some(b) if b.total_bits <= r.total_bits => Some(b),
            _ => Some(r),
        })
        .ok_or(MdlError::EmptyDesign)?
        .clone();
    Ok(Selection { best, candidates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrial {
    pub trial: usize,
    pub truth: DmieExpression,
    pub selected: FeatureGraph,
    /// Whether the selected graph induces the truth's partition.
    pub recovered: bool,
}

/// Exhaustive selection over random ground truths drawn as in
/// [`verify_inequalities`].
pub fn selection_trials(plan: &TrialPlan, code: &impl RealCode) -> Result<Vec<SelectionTrial>, MdlError> {
    plan.validate()?;
    (0..plan.trials)
        .map(|trial| {
            let mut rng = trial_rng(plan, trial);
            let truth = draw_truth(plan.min_features, plan.max_features, &mut rng);
            let data = trial_data(plan, trial, truth.clone())?;
            let selected = exhaustive_select(data.all(), code)?.best.graph;
            let recovered = graph_to_partition(&selected) == truth.to_partition();
            Ok(SelectionTrial {
                trial,
                truth,
                selected,
                recovered,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SyntheticDataset;
    use approx::assert_abs_diff_eq;

    fn graph(d: usize, edges: &[(usize, usize)]) -> FeatureGraph {
        FeatureGraph::from_edges(d, edges.iter().copied()).unwrap()
    }

    fn data(expr: &str, d: usize, n: usize, noise: f64, seed: u64) -> SyntheticDataset {
        generate_from(&GeneratorSpec {
            truth: DmieExpression::parse_with_features(expr, d).unwrap(),
            samples: n,
            noise_scale: noise,
            seed_base: seed,
        })
        .unwrap()
    }

    #[test]
    fn default_code_values() {
        let c = default_code();
        assert_eq!(c.bits(0.0), 0.0);
        assert_eq!(c.bits(3.0), 2.0);
        assert_eq!(c.bits(-3.0), 2.0);
        assert!(c.bits(1.0) + c.bits(1.0) >= c.bits(2.0));
        assert_abs_diff_eq!(c.bits(2.0), 3f64.log2(), epsilon = 1e-15);
        assert_eq!(c.difference_bound(), 1.0);
    }

    #[test]
    fn exact_product_recovery() {
        let ds = data("x0*x1", 2, 200, 0.0, 3);
        let m = fit_pairwise(&graph(2, &[(0, 1)]), ds.all()).unwrap();
        // y = x0 x1 generated with coefficient 1; scale the target by 2.
        let doubled: Vec<f64> = ds.targets().iter().map(|y| 2.0 * y).collect();
        let view = DataView::new(ds.features(), &doubled, 2);
        let m2 = fit_pairwise(&graph(2, &[(0, 1)]), view).unwrap();
        assert!(m.unary().is_empty());
        assert!((m2.pairs()[0].1 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn linear_recovery_on_null_graph() {
        let ds = data("x0 + x1", 2, 100, 0.0, 5);
        let y: Vec<f64> = ds.all().rows().map(|r| 3.0 * r[0] + r[1]).collect();
        let m = fit_pairwise(&FeatureGraph::null(2), DataView::new(ds.features(), &y, 2)).unwrap();
        assert_abs_diff_eq!(m.unary()[0].1, 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.unary()[1].1, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn misfit_inputs() {
        let ds = data("x0*x1", 2, 20, 0.1, 0);
        assert!(matches!(
            fit_pairwise(&FeatureGraph::null(3), ds.all()),
            Err(MdlError::FeatureMismatch { .. })
        ));
        let few = ds.all().slice(0..1);
        assert!(matches!(
            fit_pairwise(&FeatureGraph::null(2), few),
            Err(MdlError::TooFewRows { rows: 1, cols: 2 })
        ));
        let empty = DataView::new(&[], &[], 0);
        assert_eq!(fit_pairwise(&FeatureGraph::null(0), empty), Err(MdlError::EmptyDesign));
    }

    #[test]
    fn model_bit_examples() {
        let c = default_code();
        let ones = PairwiseModel::new(FeatureGraph::null(6), (0..6).map(|i| (i, 1.0)).collect(), vec![]).unwrap();
        assert_eq!(model_bits(&ones, &c), 6.0);
        let zeros = PairwiseModel::new(FeatureGraph::null(6), (0..6).map(|i| (i, 0.0)).collect(), vec![]).unwrap();
        assert_eq!(model_bits(&zeros, &c), 0.0);
        let g = graph(4, &[(0, 1), (2, 3)]);
        let pairs = g.edges().map(|e| (e, 1.0)).collect();
        let two = PairwiseModel::new(g, vec![], pairs).unwrap();
        assert_abs_diff_eq!(model_bits(&two, &c), 3f64.log2() + 2.0, epsilon = 1e-12);
        assert!(PairwiseModel::new(graph(4, &[(0, 1)]), vec![], vec![]).is_err());
    }

    #[test]
    fn data_bit_examples() {
        let c = default_code();
        let zero = PairwiseModel::new(FeatureGraph::null(2), vec![(0, 0.0), (1, 0.0)], vec![]).unwrap();
        let bits = data_bits(&zero, DataView::new(&[0.0, 0.0], &[1.0], 2), &c);
        assert_eq!(bits.feature_bits, 0.0);
        assert_eq!(bits.residual_bits, 1.0);

        let ds = data("x0*x1 + x2", 3, 300, 0.0, 8);
        let fit = total_bits(&graph(3, &[(0, 1)]), ds.all(), &c).unwrap();
        assert!(fit.residual_bits < 1e-9, "perfect fit leaves {} bits", fit.residual_bits);
        let other = total_bits(&FeatureGraph::complete(3), ds.all(), &c).unwrap();
        assert_eq!(fit.feature_bits, other.feature_bits);
        assert_abs_diff_eq!(fit.total_bits, fit.model_bits + fit.data_bits(), epsilon = 1e-9);
    }

    #[test]
    fn complete_graph_keeps_spurious_pairs_small() {
        // Three standard errors bound each spurious coefficient; over 20
        // seeds of 4 spurious pairs the 0.27% two-sided rate predicts about
        // 0.2 exceedances, so allow at most 2.
        let mut exceed = 0;
        for seed in 0..20 {
            let ds = data("x0*x1 + x2*x3", 4, 2000, 0.1, seed * 100);
            let (m, se) = fit_pairwise_with_errors(&FeatureGraph::complete(4), ds.all()).unwrap();
            let se = se.unwrap();
            for (k, &(e, c)) in m.pairs().iter().enumerate() {
                let se = se[m.unary().len() + k];
                if e.endpoints() == (0, 1) || e.endpoints() == (2, 3) {
                    assert!((c - 1.0).abs() < 5.0 * se, "interaction {e} fitted as {c}");
                } else if c.abs() >= 3.0 * se {
                    exceed += 1;
                }
            }
        }
        assert!(exceed <= 2, "{exceed} spurious coefficients beyond 3 standard errors");
    }

    #[test]
    fn true_graph_recovers_coefficients_within_three_standard_errors() {
        let trials = 100;
        let mut covered = 0;
        for seed in 0..trials {
            let ds = data("x0*x1 + x2*x3 + x4 + x5", 6, 1000, 0.1, seed * 100);
            let (m, se) = fit_pairwise_with_errors(&graph(6, &[(0, 1), (2, 3)]), ds.all()).unwrap();
            let se = se.unwrap();
            if m.coefficients().zip(&se).all(|(c, s)| (c - 1.0).abs() < 3.0 * s) {
                covered += 1;
            }
        }
        assert!(covered >= 95, "{covered}/{trials}");
    }

    #[test]
    fn candidate_counts() {
        // Matchings on d nodes: 1, 1, 2, 4, 10, 26 (telephone numbers).
        for (d, m) in [(1, 1), (2, 2), (3, 4), (4, 10), (5, 26)] {
            assert_eq!(matchings(d).len(), m);
        }
        // Classes (Bell numbers) overlap the matchings in the partitions
        // whose blocks have size at most 2.
        assert_eq!(candidate_graphs(2).len(), 2);
        assert_eq!(candidate_graphs(4).len(), 15 + 10 - 10);
        assert_eq!(candidate_graphs(5).len(), 52 + 26 - 26);
    }

    #[test]
    fn selection_examples() {
        let c = default_code();
        let ds = data("x0*x1 + x2 + x3", 4, 2000, 0.1, 11);
        let s = exhaustive_select(ds.all(), &c).unwrap();
        assert_eq!(s.best.graph, graph(4, &[(0, 1)]));

        let ds = data("x0 + x1 + x2 + x3", 4, 2000, 0.1, 12);
        assert_eq!(exhaustive_select(ds.all(), &c).unwrap().best.graph, FeatureGraph::null(4));

        let ds = data("x0*x1", 2, 2000, 0.1, 13);
        let s = exhaustive_select(ds.all(), &c).unwrap();
        assert_eq!(s.candidates.len(), 2);
        assert_eq!(s.best.graph, graph(2, &[(0, 1)]));

        let wide = data("x0 + x1 + x2 + x3 + x4 + x5", 6, 20, 0.1, 0);
        assert!(matches!(
            exhaustive_select(wide.all(), &c),
            Err(MdlError::TooManyFeatures { got: 6, max: 5 })
        ));
    }

    #[test]
    fn bits_order_true_graph_against_complete_and_null() {
        let c = default_code();
        let ds = data("x0*x1 + x2*x3 + x4 + x5", 6, 2000, 0.1, 21);
        let t = total_bits(&graph(6, &[(0, 1), (2, 3)]), ds.all(), &c).unwrap();
        let k = total_bits(&FeatureGraph::complete(6), ds.all(), &c).unwrap();
        let n = total_bits(&FeatureGraph::null(6), ds.all(), &c).unwrap();
        assert!(t.total_bits <= k.total_bits);
        assert!(t.total_bits <= n.total_bits);
        let dropped = total_bits(&graph(6, &[(2, 3)]), ds.all(), &c).unwrap();
        assert!(dropped.residual_bits > t.residual_bits);
    }

    #[test]
    fn noiseless_four_feature_truth_satisfies_every_required_check() {
        // Every graph on 4 nodes is scored, either as a lemma neighbour, a
        // corollary endpoint or a theorem family member.
        let ds = data("x0*x1 + x2 + x3", 4, 2000, 0.0, 31);
        let mut rng = seeded(0, stream::TRIALS);
        let opts = FamilyOptions {
            max_family: 64,
            unrestricted: 0,
        };
        let checks = check_dataset(ds.truth(), ds.all(), &opts, &mut rng, &default_code()).unwrap();
        for c in checks.iter().filter(|c| c.inequality != Inequality::TheoremUnrestricted) {
            assert!(c.pass(), "{:?}", c);
        }
        // The family of isolation-preserving supergraphs of {0-1} is itself.
        let theorem = checks.iter().find(|c| c.inequality == Inequality::TheoremComplete).unwrap();
        assert_eq!(theorem.instances, 1);
    }

    #[test]
    fn unrestricted_supergraphs_can_lose_to_the_null_graph() {
        // {0-1, 2-3} contains the interaction edge but drops the unary
        // terms of x2 and x3.
        let c = default_code();
        let ds = data("x0*x1 + x2 + x3", 4, 2000, 0.0, 31);
        let g = total_bits(&graph(4, &[(0, 1), (2, 3)]), ds.all(), &c).unwrap();
        let n = total_bits(&FeatureGraph::null(4), ds.all(), &c).unwrap();
        assert!(g.total_bits > n.total_bits);
    }

    #[test]
    fn drawn_truths_are_pairwise_with_a_unary_term() {
        let mut rng = seeded(4, stream::TRIALS);
        for _ in 0..200 {
            let t = draw_truth(3, 8, &mut rng);
            let sizes: Vec<usize> = t.terms().iter().map(Vec::len).collect();
            assert!((3..=8).contains(&t.num_features()));
            assert!(sizes.iter().all(|&s| s <= 2));
            assert!(sizes.contains(&1) && sizes.contains(&2));
        }
    }

    #[test]
    fn isolation_preserving_family() {
        let mut rng = seeded(0, stream::TRIALS);
        let g = graph(6, &[(0, 1), (2, 3)]);
        let fam = isolation_preserving_supergraphs(&g, 64, &mut rng);
        // Four extra pairs among {0, 1, 2, 3}.
        assert_eq!(fam.len(), 16);
        assert!(fam.iter().all(|h| g.is_subgraph_of(h) && h.degree(4) == 0 && h.degree(5) == 0));
        let fam = isolation_preserving_supergraphs(&g, 8, &mut rng);
        assert_eq!(fam.len(), 8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100_000))]
            #[test]
            fn log2_code_assumptions(x in -1e6f64..1e6, y in -1e6f64..1e6, t in -1.0f64..1.0) {
                let c = Log2Code;
                prop_assert!(c.bits(x + y) <= c.bits(x) + c.bits(y) + 1e-12);
                let (small, big) = if x.abs() <= y.abs() { (x, y) } else { (y, x) };
                prop_assert!(c.bits(small) <= c.bits(big));
                let near = x + t;
                prop_assert!((c.bits(x) - c.bits(near)).abs() <= c.difference_bound() + 1e-12);
            }
        }
    }
}
