//! Experiment plans, the resumable record store and the aggregate tables.
//!
//! A plan expands into cells `(dataset, graph, layers, seed)`. Each cell is
//! keyed by a hash of everything that determines its result, so re-running
//! a plan only trains cells the store has not seen.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use featgraph_core::dmie::DmieExpression;
use featgraph_core::fgraph::{
    self, ground_truth_graph, label_edges, removal_lattice, sample_stratified, strata, Edge, FeatureGraph,
    GraphStrata, SamplingPlan, StratumQuota,
};
use featgraph_core::gnnmodel::{self, GnnConfig, TrainedModel};
use featgraph_core::linalg::least_squares;
use featgraph_core::rng::{self, stream};
use featgraph_core::synth::{generate, noise_mae_floor, DataView, SyntheticDataset, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::io::sha256_hex;
use crate::stats::{lower_confidence_bound, mean, std_error};
use crate::{Error, Result};

/// Confidence level of every one-sided bound in the tables.
pub const CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Null,
    Complete,
    GroundTruth,
}

impl ReferenceKind {
    pub fn id(self) -> &'static str {
        match self {
            ReferenceKind::Null => "null",
            ReferenceKind::Complete => "complete",
            ReferenceKind::GroundTruth => "ground_truth",
        }
    }

    pub fn build(self, truth: &DmieExpression) -> FeatureGraph {
        let d = truth.num_features();
        match self {
            ReferenceKind::Null => FeatureGraph::null(d),
            ReferenceKind::Complete => FeatureGraph::complete(d),
            ReferenceKind::GroundTruth => ground_truth_graph(truth).expect("truth is disjoint"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSource {
    Stratified {
        quotas: Vec<StratumQuota>,
        #[serde(default)]
        siblings: bool,
        #[serde(default)]
        seed: u64,
    },
    Reference {
        kinds: Vec<ReferenceKind>,
    },
    /// Explicit edge lists over the dataset's features.
    Explicit {
        graphs: Vec<Vec<(usize, usize)>>,
    },
    /// Every graph in the interaction-edge removal lattice below `base`.
    Lattice {
        base: Vec<(usize, usize)>,
    },
}

/// Optional overrides on top of [`GnnConfig::for_layers`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOverrides {
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub plateau_patience: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
}

impl TrainingOverrides {
    pub fn config(&self, layers: usize, seed: u64) -> Result<GnnConfig> {
        let mut c = GnnConfig::for_layers(layers)?.with_seed(seed);
        if let Some(v) = self.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
        if let Some(v) = self.plateau_patience {
            c.plateau.patience = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn one_worker() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub dataset: SyntheticSpec,
    /// Runs the plan once per value, replacing `dataset.pairwise_terms`.
    #[serde(default)]
    pub pairwise_sweep: Vec<usize>,
    pub graphs: GraphSource,
    pub layers: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub training: TrainingOverrides,
    /// Also fit the least-squares linear baseline on each dataset.
    #[serde(default)]
    pub linear_baseline: bool,
    #[serde(default = "one_worker")]
    pub workers: usize,
    /// Cells whose graph has more directed arcs than this are recorded as
    /// exceeded instead of trained.
    #[serde(default)]
    pub arc_cap: Option<usize>,
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::io::read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plans serialize")
    }

    pub fn datasets(&self) -> Vec<SyntheticSpec> {
        if self.pairwise_sweep.is_empty() {
            return vec![self.dataset.clone()];
        }
        self.pairwise_sweep
            .iter()
            .map(|&p| SyntheticSpec {
                pairwise_terms: p,
                ..self.dataset.clone()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("plan {}: {m}", self.name)));
        if self.layers.is_empty() || self.seeds.is_empty() {
            return bad("needs at least one layer count and one seed".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be unique".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        for &l in &self.layers {
            self.training.config(l, 0)?;
        }
        for spec in self.datasets() {
            if spec.num_features() == 0 {
                return bad("dataset has no features".into());
            }
            self.graphs_for(&spec.truth())?;
        }
        Ok(())
    }

    /// The graphs this plan trains on for one ground truth.
    pub fn graphs_for(&self, truth: &DmieExpression) -> Result<Vec<PlannedGraph>> {
        let d = truth.num_features();
        let plain = |graph: FeatureGraph, kind: &str| PlannedGraph {
            graph,
            kind: kind.to_string(),
            stratum: None,
            group: None,
        };
        let explicit = |edges: &[(usize, usize)]| FeatureGraph::from_edges(d, edges.iter().copied());
        let out = match &self.graphs {
            GraphSource::Stratified { quotas, siblings, seed } => {
                let mut sp = SamplingPlan::new(quotas.clone());
                sp.siblings = *siblings;
                let mut r = rng::seeded(*seed, stream::SAMPLING);
                sample_stratified(truth, &sp, &mut r)?
                    .into_iter()
                    .map(|s| PlannedGraph {
                        graph: s.graph,
                        kind: "stratified".into(),
                        stratum: Some(s.stratum),
                        group: Some(s.group),
                    })
                    .collect()
            }
            GraphSource::Reference { kinds } => kinds.iter().map(|k| plain(k.build(truth), k.id())).collect(),
            GraphSource::Explicit { graphs } => graphs
                .iter()
                .map(|g| Ok(plain(explicit(g)?, "explicit")))
                .collect::<Result<Vec<_>>>()?,
            GraphSource::Lattice { base } => {
                let mut seen = BTreeSet::new();
                let mut out = Vec::new();
                for pair in removal_lattice(&explicit(base)?, truth)? {
                    for g in [pair.parent, pair.child] {
                        if seen.insert(g.clone()) {
                            out.push(PlannedGraph {
                                graph: g,
                                kind: "lattice".into(),
                                stratum: None,
                                group: Some(0),
                            });
                        }
                    }
                }
                out
            }
        };
        let mut unique = BTreeSet::new();
        for g in &out {
            if !unique.insert((&g.graph, g.group)) {
                return Err(Error::Invalid(format!("plan {}: graph {} listed twice", self.name, g.graph)));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedGraph {
    pub graph: FeatureGraph,
    pub kind: String,
    pub stratum: Option<usize>,
    pub group: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub spec: SyntheticSpec,
    pub sigma_f: f64,
    pub noise_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { error: String },
    Exceeded { arcs: usize, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gnn,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub key: String,
    pub plan: String,
    pub dataset: DatasetInfo,
    pub model: ModelKind,
    pub graph_id: String,
    pub graph_kind: String,
    pub graph: FeatureGraph,
    pub strata: GraphStrata,
    pub stratum: Option<usize>,
    pub group: Option<usize>,
    /// Absent for the linear baseline.
    pub config: Option<GnnConfig>,
    pub seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub epochs: usize,
    pub stopped_early: bool,
    /// Per-epoch train loss, starting with the untrained model.
    pub train_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub test_mae: Option<f64>,
    pub test_mse: Option<f64>,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn layers(&self) -> usize {
        self.config.as_ref().map_or(0, |c| c.num_layers)
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    pub fn ok_mae(&self) -> Option<f64> {
        self.test_mae.filter(|_| self.is_ok())
    }

    /// The same record with the timing zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn truth(&self) -> DmieExpression {
        self.dataset.spec.truth()
    }

    /// Recomputes the strata and checks the stored metrics are sane.
    pub fn check(&self) -> Result<()> {
        let fresh = strata(&self.graph, &self.truth())?;
        if fresh != self.strata {
            return Err(Error::Invalid(format!("record {}: stored strata do not match the graph", self.key)));
        }
        if self.test_mae.is_some_and(|m| !(m >= 0.0)) {
            return Err(Error::Invalid(format!("record {}: negative MAE", self.key)));
        }
        Ok(())
    }
}

/// Content key of one cell.
pub fn cell_key(spec: &SyntheticSpec, model: ModelKind, graph: &FeatureGraph, config: Option<&GnnConfig>, seed: u64) -> String {
    #[derive(Serialize)]
    struct KeyParts<'a> {
        spec: &'a SyntheticSpec,
        model: ModelKind,
        graph: &'a FeatureGraph,
        config: Option<&'a GnnConfig>,
        seed: u64,
    }
    let parts = KeyParts {
        spec,
        model,
        graph,
        config,
        seed,
    };
    sha256_hex(serde_json::to_string(&parts).expect("key parts serialize").as_bytes())[..32].to_string()
}

/// Append-only JSON-lines store of run records.
#[derive(Debug)]
pub struct RecordStore {
    path: PathBuf,
    records: Vec<RunRecord>,
    keys: HashSet<String>,
}

impl RecordStore {
    /// Opens or creates the store. A trailing line that does not parse
    /// (an interrupted append) is dropped; corruption elsewhere is an error.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut records = Vec::new();
        match File::open(&path) {
            Ok(f) => {
                let lines: Vec<String> = BufReader::new(f)
                    .lines()
                    .collect::<std::io::Result<_>>()
                    .map_err(Error::io(&path))?;
                let last = lines.iter().rposition(|l| !l.trim().is_empty());
                for (i, line) in lines.iter().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<RunRecord>(line) {
                        Ok(r) => records.push(r),
                        Err(_) if Some(i) == last => break,
                        Err(e) => {
                            return Err(Error::Parse {
                                path,
                                line: i + 1,
                                msg: e.to_string(),
                            })
                        }
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir).map_err(Error::io(dir))?;
                }
            }
            Err(e) => return Err(Error::Io { path, source: e }),
        }
        let keys = records.iter().map(|r| r.key.clone()).collect();
        Ok(Self { path, records, keys })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn contains(&self, key: &str) -> bool {
        self.keys.contains(key)
    }

    pub fn append(&mut self, record: RunRecord) -> Result<()> {
        if self.keys.contains(&record.key) {
            return Ok(());
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(Error::io(&self.path))?;
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(Error::io(&self.path))?;
        self.keys.insert(record.key.clone());
        self.records.push(record);
        Ok(())
    }

    /// Records of one plan, sorted by key.
    pub fn table(&self, plan: &str) -> Vec<RunRecord> {
        let mut v: Vec<RunRecord> = self.records.iter().filter(|r| r.plan == plan).cloned().collect();
        v.sort_by(|a, b| a.key.cmp(&b.key));
        v
    }
}

/// Compares two record tables ignoring wall time and order.
pub fn same_results(a: &[RunRecord], b: &[RunRecord]) -> bool {
    let norm = |rs: &[RunRecord]| {
        let mut v: Vec<RunRecord> = rs.iter().map(RunRecord::without_timing).collect();
        v.sort_by(|x, y| x.key.cmp(&y.key));
        v
    };
    norm(a) == norm(b)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub planned: usize,
    pub skipped: usize,
    pub trained: usize,
    pub failed: usize,
    pub exceeded: usize,
}


/// Least-squares fit on the raw features plus an intercept.
pub fn linear_baseline_mae(train: DataView<'_>, test: DataView<'_>) -> f64 {
    let d = train.num_features;
    let design_of = |v: DataView<'_>| {
        let mut m = Vec::with_capacity(v.len() * (d + 1));
        for row in v.rows() {
            m.push(1.0);
            m.extend_from_slice(row);
        }
        m
    };
    let beta = least_squares(&design_of(train), train.len(), d + 1, train.targets);
    let pred = |row: &[f64]| beta[0] + row.iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>();
    test.rows().zip(test.targets).map(|(r, y)| (pred(r) - y).abs()).sum::<f64>() / test.len() as f64
}

/// One unit of work: a model class on one graph of one dataset.
pub struct CellSpec<'a> {
    pub plan: &'a str,
    pub data: &'a (DatasetInfo, SyntheticDataset),
    pub graph: &'a PlannedGraph,
    pub model: ModelKind,
    pub config: Option<&'a GnnConfig>,
    pub seed: u64,
    pub arc_cap: Option<usize>,
}

impl CellSpec<'_> {
    pub fn key(&self) -> String {
        cell_key(&self.data.0.spec, self.model, &self.graph.graph, self.config, self.seed)
    }
}

pub fn dataset_info(spec: &SyntheticSpec, ds: &SyntheticDataset) -> DatasetInfo {
    DatasetInfo {
        spec: spec.clone(),
        sigma_f: ds.sigma_f(),
        noise_floor: noise_mae_floor(ds),
    }
}

/// Runs one cell. Failures land in the record's status; the trained model
/// comes back alongside when there is one.
pub fn run_cell(cell: &CellSpec<'_>) -> (RunRecord, Option<TrainedModel>) {
    let (info, ds) = cell.data;
    let truth = ds.truth();
    let mut rec = RunRecord {
        key: cell.key(),
        plan: cell.plan.to_string(),
        dataset: info.clone(),
        model: cell.model,
        graph_id: cell.graph.graph.to_string(),
        graph_kind: cell.graph.kind.clone(),
        graph: cell.graph.graph.clone(),
        strata: strata(&cell.graph.graph, truth).expect("graph sized to the dataset"),
        stratum: cell.graph.stratum,
        group: cell.graph.group,
        config: cell.config.cloned(),
        seed: cell.seed,
        status: RunStatus::Ok,
        epochs: 0,
        stopped_early: false,
        train_loss: Vec::new(),
        lr: Vec::new(),
        test_mae: None,
        test_mse: None,
        wall_seconds: 0.0,
    };
    let mut trained = None;
    let start = Instant::now();
    match (cell.model, cell.config) {
        (ModelKind::Linear, _) => {
            rec.test_mae = Some(linear_baseline_mae(ds.train(), ds.test()));
        }
        (ModelKind::Gnn, Some(config)) => {
            let arcs = cell.graph.graph.arcs().len();
            match cell.arc_cap {
                Some(cap) if arcs > cap => rec.status = RunStatus::Exceeded { arcs, cap },
                _ => match gnnmodel::train_dataset(&cell.graph.graph, ds, config) {
                    Ok(t) => {
                        rec.epochs = t.epochs_run();
                        rec.stopped_early = t.stopped_early;
                        rec.train_loss = t.history.iter().map(|h| h.train_loss).collect();
                        rec.lr = t.history.iter().map(|h| h.lr).collect();
                        rec.test_mae = Some(t.test.mae);
                        rec.test_mse = Some(t.test.mse);
                        trained = Some(t);
                    }
                    Err(e) => rec.status = RunStatus::Failed { error: e.to_string() },
                },
            }
        }
        (ModelKind::Gnn, None) => rec.status = RunStatus::Failed {
            error: "no model configuration".into(),
        },
    }
    rec.wall_seconds = start.elapsed().as_secs_f64();
    (rec, trained)
}

/// Runs every cell of `plan` not already in `store`.
///
/// Cells run on up to `plan.workers` threads; records are appended by the
/// calling thread as they finish. `progress` sees each new record.
pub fn run_plan(plan: &ExperimentPlan, store: &mut RecordStore, progress: &mut dyn FnMut(&RunRecord)) -> Result<RunSummary> {
    plan.validate()?;
    let mut summary = RunSummary::default();
    let specs = plan.datasets();
    let mut graphs = Vec::with_capacity(specs.len());
    for spec in &specs {
        graphs.push(plan.graphs_for(&spec.truth())?);
    }

    // Datasets are generated only when some cell needs them.
    let mut data: Vec<Option<(DatasetInfo, SyntheticDataset)>> = vec![None; specs.len()];
    let mut pending: Vec<(usize, usize, ModelKind, Option<GnnConfig>, u64, String)> = Vec::new();
    for (di, spec) in specs.iter().enumerate() {
        let mut push = |gi: usize, model: ModelKind, config: Option<GnnConfig>, seed: u64, graph: &FeatureGraph| {
            let key = cell_key(spec, model, graph, config.as_ref(), seed);
            summary.planned += 1;
            if store.contains(&key) {
                summary.skipped += 1;
            } else {
                pending.push((di, gi, model, config, seed, key));
            }
        };
        for (gi, g) in graphs[di].iter().enumerate() {
            for &l in &plan.layers {
                for &seed in &plan.seeds {
                    push(gi, ModelKind::Gnn, Some(plan.training.config(l, seed)?), seed, &g.graph);
                }
            }
        }
        if plan.linear_baseline {
            graphs[di].push(PlannedGraph {
                graph: FeatureGraph::null(spec.num_features()),
                kind: "linear".into(),
                stratum: None,
                group: None,
            });
            let gi = graphs[di].len() - 1;
            push(gi, ModelKind::Linear, None, 0, &graphs[di][gi].graph);
        }
    }
    for &(di, ..) in &pending {
        if data[di].is_none() {
            let ds = generate(&specs[di])?;
            data[di] = Some((dataset_info(&specs[di], &ds), ds));
        }
    }
    let cells: Vec<CellSpec<'_>> = pending
        .iter()
        .map(|(di, gi, model, config, seed, _)| CellSpec {
            plan: &plan.name,
            data: data[*di].as_ref().expect("generated above"),
            graph: &graphs[*di][*gi],
            model: *model,
            config: config.as_ref(),
            seed: *seed,
            arc_cap: plan.arc_cap,
        })
        .collect();

    let next = AtomicUsize::new(0);
    let workers = plan.workers.min(cells.len()).max(1);
    let (tx, rx) = mpsc::channel::<RunRecord>();
    std::thread::scope(|s| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, cells) = (&next, &cells);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                if tx.send(run_cell(cell).0).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for rec in rx {
            match rec.status {
                RunStatus::Ok => summary.trained += 1,
                RunStatus::Failed { .. } => summary.failed += 1,
                RunStatus::Exceeded { .. } => summary.exceeded += 1,
            }
            progress(&rec);
            store.append(rec)?;
        }
        Ok(())
    })?;
    Ok(summary)
}

/// Mean test MAE over the successful GNN runs in one table cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeCell {
    pub layers: usize,
    pub interaction_edges: usize,
    pub non_interaction_edges: usize,
    pub count: usize,
    pub mean_mae: f64,
    pub std_error: Option<f64>,
}

fn gnn_maes(records: &[RunRecord]) -> impl Iterator<Item = (&RunRecord, f64)> {
    records
        .iter()
        .filter(|r| r.model == ModelKind::Gnn)
        .filter_map(|r| r.ok_mae().map(|m| (r, m)))
}

/// Sorts each group's values so the means do not depend on record order.
fn summarize(mut xs: Vec<f64>) -> (usize, f64, Option<f64>) {
    xs.sort_by(f64::total_cmp);
    (xs.len(), mean(&xs).unwrap_or(f64::NAN), std_error(&xs))
}

/// Grouped by `(layers, interaction edges, non-interaction edges)`.
pub fn aggregate_by_edges(records: &[RunRecord]) -> Vec<EdgeCell> {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for (r, mae) in gnn_maes(records) {
        groups
            .entry((r.layers(), r.strata.interaction_edges, r.strata.non_interaction_edges))
            .or_default()
            .push(mae);
    }
    groups
        .into_iter()
        .map(|((layers, i, n), xs)| {
            let (count, mean_mae, std_error) = summarize(xs);
            EdgeCell {
                layers,
                interaction_edges: i,
                non_interaction_edges: n,
                count,
                mean_mae,
                std_error,
            }
        })
        .collect()
}

/// Per-seed differences `MAE(child) - MAE(parent)` for one removal step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedStat {
    pub layers: usize,
    pub group: Option<usize>,
    pub parent_id: String,
    pub child_id: String,
    pub dropped: Edge,
    /// Lattice row label: the parent's interaction edges, then the drop.
    pub row: String,
    pub seeds: Vec<u64>,
    pub differences: Vec<f64>,
    pub mean: f64,
    pub lower_bound: Option<f64>,
}

/// One lattice row pooled over every sibling group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeRow {
    pub layers: usize,
    pub row: String,
    pub pairs: usize,
    pub mean: f64,
    pub lower_bound: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PairedReport {
    pub stats: Vec<PairedStat>,
    pub rows: Vec<LatticeRow>,
    /// Lattice steps missing one side for some seed.
    pub unmatched: Vec<String>,
}

fn edge_list(edges: &[Edge]) -> String {
    if edges.is_empty() {
        return "none".into();
    }
    edges.iter().map(|&e| edge_label(e)).collect::<Vec<_>>().join(",")
}

fn edge_label(e: Edge) -> String {
    format!("{}-{}", e.lo(), e.hi())
}

/// Pairs every removal-lattice step by `(dataset, layers, seed)`.
///
/// A group contributes when it holds a graph carrying every ground-truth
/// pair; its lattice is walked from there.
pub fn paired_removal_stats(records: &[RunRecord]) -> Result<PairedReport> {
    type CellKey = (String, usize, Option<usize>);
    let spec_id = |r: &RunRecord| serde_json::to_string(&r.dataset.spec).expect("spec serializes");
    let mut index: BTreeMap<(CellKey, FeatureGraph), BTreeMap<u64, f64>> = BTreeMap::new();
    let mut fulls: BTreeMap<CellKey, (DmieExpression, BTreeSet<FeatureGraph>)> = BTreeMap::new();
    for (r, mae) in gnn_maes(records) {
        let ck = (spec_id(r), r.layers(), r.group);
        let truth = r.truth();
        let k = fgraph::interaction_pairs(&truth)?.len();
        if k > 0 && r.strata.interaction_edges == k {
            fulls.entry(ck.clone()).or_insert_with(|| (truth, BTreeSet::new())).1.insert(r.graph.clone());
        }
        index.entry((ck, r.graph.clone())).or_default().insert(r.seed, mae);
    }

    let mut report = PairedReport::default();
    let mut pooled: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for (ck, (truth, graphs)) in &fulls {
        for full in graphs {
            for step in removal_lattice(full, truth)? {
                let present = label_edges(&step.parent, truth)?.interaction;
                let row = format!("{} \\ {}", edge_list(&present), edge_label(step.dropped));
                let empty = BTreeMap::new();
                let parent = index.get(&(ck.clone(), step.parent.clone())).unwrap_or(&empty);
                let child = index.get(&(ck.clone(), step.child.clone())).unwrap_or(&empty);
                let mut seeds = Vec::new();
                let mut diffs = Vec::new();
                for (&seed, &pm) in parent {
                    match child.get(&seed) {
                        Some(&cm) => {
                            seeds.push(seed);
                            diffs.push(cm - pm);
                        }
                        None => report.unmatched.push(format!("{} seed {seed}: no run of {}", step.parent, step.child)),
                    }
                }
                for seed in child.keys().filter(|s| !parent.contains_key(s)) {
                    report.unmatched.push(format!("{} seed {seed}: no run of {}", step.child, step.parent));
                }
                if diffs.is_empty() {
                    continue;
                }
                pooled.entry((ck.1, row.clone())).or_default().extend(&diffs);
                report.stats.push(PairedStat {
                    layers: ck.1,
                    group: ck.2,
                    parent_id: step.parent.to_string(),
                    child_id: step.child.to_string(),
                    dropped: step.dropped,
                    row,
                    seeds,
                    mean: mean(&diffs).expect("non-empty"),
                    lower_bound: lower_confidence_bound(&diffs, CONFIDENCE),
                    differences: diffs,
                });
            }
        }
    }
    report.rows = pooled
        .into_iter()
        .map(|((layers, row), mut xs)| {
            xs.sort_by(f64::total_cmp);
            LatticeRow {
                layers,
                row,
                pairs: xs.len(),
                mean: mean(&xs).expect("non-empty"),
                lower_bound: lower_confidence_bound(&xs, CONFIDENCE),
            }
        })
        .collect();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopCell {
    pub layers: usize,
    /// Hop distance of each ground-truth pair; 99 is unreachable.
    pub hops: Vec<u32>,
    pub count: usize,
    pub mean_mae: f64,
    pub std_error: Option<f64>,
}

pub fn hops_heatmap(records: &[RunRecord]) -> Vec<HopCell> {
    let mut groups: BTreeMap<(usize, Vec<u32>), Vec<f64>> = BTreeMap::new();
    for (r, mae) in gnn_maes(records) {
        groups.entry((r.layers(), r.strata.hops.clone())).or_default().push(mae);
    }
    groups
        .into_iter()
        .map(|((layers, hops), xs)| {
            let (count, mean_mae, std_error) = summarize(xs);
            HopCell {
                layers,
                hops,
                count,
                mean_mae,
                std_error,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contrast {
    pub seeds: Vec<u64>,
    /// Per seed, mean MAE of the worse side minus the better side.
    pub differences: Vec<f64>,
    pub mean: f64,
    pub lower_bound: Option<f64>,
}

/// Paired-by-seed contrast between two hop profiles at one depth.
pub fn hop_contrast(records: &[RunRecord], layers: usize, high: &[u32], low: &[u32]) -> Option<Contrast> {
    paired_contrast(
        records,
        |r| r.layers() == layers && r.strata.hops == high,
        |r| r.layers() == layers && r.strata.hops == low,
    )
}

/// For each seed present on both sides, `mean(MAE | high) - mean(MAE | low)`.
pub fn paired_contrast(
    records: &[RunRecord],
    high: impl Fn(&RunRecord) -> bool,
    low: impl Fn(&RunRecord) -> bool,
) -> Option<Contrast> {
    let by_seed = |pick: &dyn Fn(&RunRecord) -> bool| {
        let mut m: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for (r, mae) in gnn_maes(records).filter(|(r, _)| pick(r)) {
            m.entry(r.seed).or_default().push(mae);
        }
        m.into_iter().map(|(s, xs)| (s, summarize(xs).1)).collect::<BTreeMap<_, _>>()
    };
    let (h, l) = (by_seed(&high), by_seed(&low));
    let (seeds, differences): (Vec<u64>, Vec<f64>) =
        h.iter().filter_map(|(s, hm)| l.get(s).map(|lm| (*s, hm - lm))).unzip();
    if differences.is_empty() {
        return None;
    }
    Some(Contrast {
        mean: mean(&differences).expect("non-empty"),
        lower_bound: lower_confidence_bound(&differences, CONFIDENCE),
        seeds,
        differences,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub pairwise_terms: usize,
    pub noise_floor: f64,
    pub linear: Option<f64>,
    /// Graph kind to mean MAE over layers and seeds; `None` when every run
    /// of the kind failed or exceeded the cap.
    pub kinds: BTreeMap<String, Option<f64>>,
    pub exceeded: Vec<String>,
}

pub fn scaling_table(records: &[RunRecord]) -> Vec<ScalingRow> {
    let mut rows: BTreeMap<usize, ScalingRow> = BTreeMap::new();
    let mut maes: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        let p = r.dataset.spec.pairwise_terms;
        let row = rows.entry(p).or_insert_with(|| ScalingRow {
            pairwise_terms: p,
            noise_floor: r.dataset.noise_floor,
            linear: None,
            kinds: BTreeMap::new(),
            exceeded: Vec::new(),
        });
        match (r.model, &r.status) {
            (ModelKind::Linear, RunStatus::Ok) => row.linear = r.test_mae,
            (ModelKind::Gnn, status) => {
                row.kinds.entry(r.graph_kind.clone()).or_insert(None);
                if let RunStatus::Exceeded { .. } = status {
                    if !row.exceeded.contains(&r.graph_kind) {
                        row.exceeded.push(r.graph_kind.clone());
                    }
                }
                if let Some(m) = r.ok_mae() {
                    maes.entry((p, r.graph_kind.clone())).or_default().push(m);
                }
            }
            _ => {}
        }
    }
    for ((p, kind), xs) in maes {
        rows.get_mut(&p).expect("row created").kinds.insert(kind, Some(summarize(xs).1));
    }
    for row in rows.values_mut() {
        row.exceeded.sort();
    }
    rows.into_values().collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

pub fn edges_csv(cells: &[EdgeCell]) -> Result<Vec<u8>> {
    csv_bytes(
        &["layers", "interaction_edges", "non_interaction_edges", "count", "mean_mae", "std_error"],
        cells.iter().map(|c| {
            vec![
                c.layers.to_string(),
                c.interaction_edges.to_string(),
                c.non_interaction_edges.to_string(),
                c.count.to_string(),
                c.mean_mae.to_string(),
                fmt_opt(c.std_error),
            ]
        }),
    )
}

pub fn removal_csv(report: &PairedReport) -> Result<Vec<u8>> {
    csv_bytes(
        &["layers", "row", "pairs", "mean_difference", "lower_bound_95"],
        report.rows.iter().map(|r| {
            vec![
                r.layers.to_string(),
                r.row.clone(),
                r.pairs.to_string(),
                r.mean.to_string(),
                fmt_opt(r.lower_bound),
            ]
        }),
    )
}

pub fn hops_csv(cells: &[HopCell]) -> Result<Vec<u8>> {
    csv_bytes(
        &["layers", "hops", "count", "mean_mae", "std_error"],
        cells.iter().map(|c| {
            vec![
                c.layers.to_string(),
                c.hops.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
                c.count.to_string(),
                c.mean_mae.to_string(),
                fmt_opt(c.std_error),
            ]
        }),
    )
}

pub fn scaling_csv(rows: &[ScalingRow]) -> Result<Vec<u8>> {
    let kinds: BTreeSet<&String> = rows.iter().flat_map(|r| r.kinds.keys()).collect();
    let mut header = vec!["pairwise_terms", "noise_floor", "linear"];
    header.extend(kinds.iter().map(|k| k.as_str()));
    header.push("exceeded");
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            let mut v = vec![r.pairwise_terms.to_string(), r.noise_floor.to_string(), fmt_opt(r.linear)];
            v.extend(kinds.iter().map(|k| fmt_opt(r.kinds.get(*k).copied().flatten())));
            v.push(r.exceeded.join(" "));
            v
        }),
    )
}
