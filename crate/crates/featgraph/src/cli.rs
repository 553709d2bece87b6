//! The `featgraph` command.
//!
//! Every command validates its inputs before writing anything and prints
//! the paths it wrote, one per line, on stdout. Progress goes to stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use featgraph_core::dmie::census;
use featgraph_core::fgraph::{sample_stratified, SamplingPlan, StratumQuota};
use featgraph_core::mdlselect::{
    self, check_dataset, default_code, exhaustive_select, selection_trials, verify_inequalities, Claim, FamilyOptions,
    Inequality, TrialPlan,
};
use featgraph_core::rng::{self, stream};
use featgraph_core::synth::{generate, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::harness::{
    self, aggregate_by_edges, dataset_info, hops_heatmap, paired_removal_stats, run_cell, run_plan, scaling_table,
    CellSpec, ExperimentPlan, ModelKind, PlannedGraph, RecordStore, RunRecord, RunStatus, TrainingOverrides,
};
use crate::io::{self, write_atomic};
use crate::svg::{self, Series};
use crate::workspace::Workspace;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "featgraph", version, about = "Feature-graph experiments: data, graphs, training, MDL checks")]
pub struct Cli {
    /// Workspace root (default: $FEATGRAPH_WORKSPACE, else ./featgraph-workspace).
    #[arg(long, global = true)]
    pub workspace: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (CSV plus JSON sidecar).
    GenData(GenData),
    /// Draw stratified feature graphs for a dataset's ground truth.
    SampleGraphs(SampleGraphs),
    /// Train one model and append its run record.
    Train(Train),
    /// Run an experiment plan, skipping cells already recorded.
    Sweep(Sweep),
    /// Aggregate run records into CSV tables and SVG charts.
    Stats(Stats),
    /// Description-length checks and selection.
    Mdl(Mdl),
    /// Enumeration checks.
    Theory(Theory),
    /// Check every artifact in the workspace manifest against its hash.
    Verify,
}

/// `sequential` or `sequential:<base>`: feature `j` draws from seed `base + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPolicy {
    pub base: u64,
}

impl std::str::FromStr for SeedPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let base = match s.split_once(':') {
            None if s == "sequential" => Some(0),
            Some(("sequential", b)) => b.parse().ok(),
            _ => s.parse().ok(),
        };
        base.map(|base| SeedPolicy { base })
            .ok_or_else(|| format!("expected sequential[:<base>] or a base seed, got {s:?}"))
    }
}

#[derive(Debug, Args)]
pub struct GenData {
    /// Pairwise terms.
    #[arg(long)]
    pub p: usize,
    /// Unary terms.
    #[arg(long)]
    pub q: usize,
    /// Samples.
    #[arg(long)]
    pub n: usize,
    /// Noise scale relative to the standard deviation of f.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value = "sequential:0")]
    pub seed_policy: SeedPolicy,
    /// Output stem (default: <workspace>/datasets/<name>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Strata plan file for `sample-graphs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrataPlan {
    pub quotas: Vec<StratumQuota>,
    #[serde(default)]
    pub siblings: bool,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SampleGraphs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// TOML file with `quotas`, `siblings` and `seed`.
    #[arg(long)]
    pub strata_plan: PathBuf,
    /// Output directory (default: <workspace>/graphs/<dataset>).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainingFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub plateau_patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

impl TrainingFlags {
    fn overrides(&self) -> TrainingOverrides {
        TrainingOverrides {
            max_epochs: self.epochs,
            patience: self.patience,
            plateau_patience: self.plateau_patience,
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Edge-list file.
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Refuse graphs with more directed arcs than this.
    #[arg(long)]
    pub arc_cap: Option<usize>,
    /// Record store (default: <workspace>/runs/train.jsonl).
    #[arg(long)]
    pub runs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Sweep {
    #[arg(long)]
    pub plan: PathBuf,
    /// Record store (default: <workspace>/runs/<plan name>.jsonl).
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Override the plan's worker count.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Table {
    Removal,
    Edges,
    Hops,
    Scaling,
}

#[derive(Debug, Args)]
pub struct Stats {
    #[arg(value_enum)]
    pub table: Table,
    /// Record store to read.
    #[arg(long)]
    pub runs: PathBuf,
    /// Only records of this plan.
    #[arg(long)]
    pub plan: Option<String>,
    /// Output directory (default: <workspace>/reports).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also render an SVG chart.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct Mdl {
    #[command(subcommand)]
    pub action: MdlAction,
}

#[derive(Debug, Args)]
pub struct TrialFlags {
    /// Randomized trials when no dataset is given.
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 3)]
    pub min_features: usize,
    #[arg(long)]
    pub max_features: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default: <workspace>/reports).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum MdlAction {
    /// Check the description-length inequalities.
    Verify {
        /// Check one dataset instead of randomized trials.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        flags: TrialFlags,
    },
    /// Exhaustive minimum-description-length graph selection.
    Select {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        flags: TrialFlags,
    },
}

#[derive(Debug, Args)]
pub struct Theory {
    #[command(subcommand)]
    pub action: TheoryAction,
}

#[derive(Debug, Subcommand)]
pub enum TheoryAction {
    /// Count connectivity classes of all graphs on d nodes against Bell numbers.
    Bell {
        #[arg(long, default_value_t = 5)]
        max_d: usize,
    },
}

/// Largest `d` the census enumerates (2^21 graphs).
pub const MAX_CENSUS_D: usize = 7;

/// Bell numbers from the Bell triangle, independent of the enumeration.
pub fn bell_numbers(n: usize) -> Vec<u64> {
    let mut out = vec![1u64];
    let mut row = vec![1u64];
    for _ in 1..=n {
        let mut next = vec![*row.last().expect("rows are non-empty")];
        for &v in &row {
            next.push(next.last().expect("seeded") + v);
        }
        out.push(next[0]);
        row = next;
    }
    out
}

struct Ctx {
    ws: Workspace,
    written: Vec<(PathBuf, &'static str)>,
}

impl Ctx {
    fn write(&mut self, path: PathBuf, bytes: &[u8], kind: &'static str) -> Result<()> {
        write_atomic(&path, bytes)?;
        self.written.push((path, kind));
        Ok(())
    }

    fn note(&mut self, path: PathBuf, kind: &'static str) {
        self.written.push((path, kind));
    }

    /// Registers what was written (when inside the workspace) and prints it.
    fn finish(self, out: &mut dyn std::io::Write) -> Result<()> {
        let inside: Vec<(&Path, &str)> = self
            .written
            .iter()
            .filter(|(p, _)| p.starts_with(self.ws.root()) && *p != self.ws.manifest_path())
            .map(|(p, k)| (p.as_path(), *k))
            .collect();
        self.ws.register(&inside)?;
        for (p, _) in &self.written {
            writeln!(out, "{}", p.display()).map_err(Error::io("stdout"))?;
        }
        Ok(())
    }
}

pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let ws = Workspace::open(Workspace::resolve(cli.workspace.as_deref()))?;
    let mut ctx = Ctx { ws, written: Vec::new() };
    let result = dispatch(&mut ctx, cli.command, out);
    // Artifacts written before a failure (a refused or failed run record) are still registered.
    let finished = ctx.finish(out);
    result.and(finished)
}

fn dispatch(ctx: &mut Ctx, command: Command, out: &mut dyn std::io::Write) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(ctx, a),
        Command::SampleGraphs(a) => sample_graphs(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Sweep(a) => sweep(ctx, a),
        Command::Stats(a) => stats(ctx, a),
        Command::Mdl(a) => mdl(ctx, a),
        Command::Theory(Theory {
            action: TheoryAction::Bell { max_d },
        }) => bell(ctx, max_d, out),
        Command::Verify => {
            let bad = ctx.ws.verify()?;
            if !bad.is_empty() {
                let list: Vec<String> = bad.iter().map(|m| m.to_string()).collect();
                return Err(Error::Invalid(format!("manifest mismatch:\n  {}", list.join("\n  "))));
            }
            writeln!(out, "{} artifacts verified", ctx.ws.manifest()?.artifacts.len()).map_err(Error::io("stdout"))
        }
    }
}

fn absolute_in(dir: PathBuf, given: Option<PathBuf>, default_name: &str) -> PathBuf {
    given.unwrap_or_else(|| dir.join(default_name))
}

fn gen_data(ctx: &mut Ctx, a: GenData) -> Result<()> {
    if a.p + a.q == 0 {
        return Err(Error::Invalid("need at least one term (--p or --q)".into()));
    }
    let spec = SyntheticSpec {
        pairwise_terms: a.p,
        unary_terms: a.q,
        samples: a.n,
        noise_scale: a.noise,
        seed_base: a.seed_policy.base,
    };
    let ds = generate(&spec)?;
    let name = format!("p{}_q{}_n{}_noise{}_seed{}", a.p, a.q, a.n, a.noise, a.seed_policy.base);
    let stem = absolute_in(ctx.ws.datasets(), a.out, &name);
    let (csv, json) = io::write_dataset(&stem, &ds)?;
    ctx.note(csv, "dataset");
    ctx.note(json, "dataset-sidecar");
    Ok(())
}

fn sample_graphs(ctx: &mut Ctx, a: SampleGraphs) -> Result<()> {
    let sidecar = io::read_sidecar(&a.dataset)?;
    let plan: StrataPlan = toml::from_str(&io::read_text(&a.strata_plan)?)?;
    let truth = sidecar.generator.truth;
    let mut sp = SamplingPlan::new(plan.quotas);
    sp.siblings = plan.siblings;
    let sample = sample_stratified(&truth, &sp, &mut rng::seeded(plan.seed, stream::SAMPLING))?;
    let stem = io::dataset_stem(&a.dataset);
    let name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = a.out_dir.unwrap_or_else(|| ctx.ws.graphs().join(name));
    for (i, s) in sample.iter().enumerate() {
        let mut meta = BTreeMap::new();
        meta.insert("truth".to_string(), truth.to_string());
        meta.insert("stratum".to_string(), s.stratum.to_string());
        meta.insert("group".to_string(), s.group.to_string());
        meta.insert("drawn".to_string(), s.drawn.to_string());
        meta.insert("interaction_edges".to_string(), s.strata.interaction_edges.to_string());
        meta.insert("non_interaction_edges".to_string(), s.strata.non_interaction_edges.to_string());
        let hops: Vec<String> = s.strata.hops.iter().map(u32::to_string).collect();
        meta.insert("hops".to_string(), hops.join(" "));
        let path = dir.join(format!("g{i:04}.edges"));
        ctx.write(path, io::format_graph(&s.graph, &meta).as_bytes(), "graph")?;
    }
    Ok(())
}

fn train(ctx: &mut Ctx, a: Train) -> Result<()> {
    // Everything is validated before the store is touched.
    let ds = io::read_dataset(&a.dataset)?;
    let graph = io::read_graph(&a.graph)?.graph;
    if graph.num_features() != ds.num_features() {
        return Err(Error::Invalid(format!(
            "graph has {} features, dataset has {}",
            graph.num_features(),
            ds.num_features()
        )));
    }
    let spec = io::canonical_spec(ds.spec())
        .ok_or_else(|| Error::Invalid("dataset is not a member of the synthetic family".into()))?;
    let config = a.training.overrides().config(a.layers, a.seed)?;
    let runs = absolute_in(ctx.ws.runs(), a.runs, "train.jsonl");
    let mut store = RecordStore::open(&runs)?;
    let data = (dataset_info(&spec, &ds), ds);
    let planned = PlannedGraph {
        graph,
        kind: "explicit".into(),
        stratum: None,
        group: None,
    };
    let cell = CellSpec {
        plan: "train",
        data: &data,
        graph: &planned,
        model: ModelKind::Gnn,
        config: Some(&config),
        seed: a.seed,
        arc_cap: a.arc_cap,
    };
    let key = cell.key();
    if store.contains(&key) {
        eprintln!("cell {key} already recorded");
        ctx.note(runs, "runs");
        return Ok(());
    }
    let (rec, trained) = run_cell(&cell);
    let status = rec.status.clone();
    if let Some(t) = &trained {
        let stem = ctx.ws.runs().join("checkpoints").join(&key);
        let manifest = io::save_checkpoint(&stem, &t.model, &config)?;
        ctx.note(io::with_extension(&stem, "bin"), "checkpoint-data");
        ctx.note(manifest, "checkpoint");
    }
    if let Some(mae) = rec.test_mae {
        eprintln!("test MAE {mae:.6} after {} epochs", rec.epochs);
    }
    store.append(rec)?;
    ctx.note(runs, "runs");
    match status {
        RunStatus::Ok => Ok(()),
        RunStatus::Failed { error } => Err(Error::Failed(error)),
        RunStatus::Exceeded { arcs, cap } => Err(Error::Resource(format!("{arcs} arcs over the cap of {cap}"))),
    }
}

fn sweep(ctx: &mut Ctx, a: Sweep) -> Result<()> {
    let mut plan = ExperimentPlan::read(&a.plan)?;
    if let Some(w) = a.workers {
        plan.workers = w;
        plan.validate()?;
    }
    let runs = absolute_in(ctx.ws.runs(), a.runs, &format!("{}.jsonl", plan.name));
    let mut store = RecordStore::open(&runs)?;
    let summary = run_plan(&plan, &mut store, &mut |r: &RunRecord| {
        let mae = r.test_mae.map_or_else(|| "-".to_string(), |m| format!("{m:.4}"));
        eprintln!("{} L={} seed={} {:?} mae={mae} {:.1}s", r.graph_id, r.layers(), r.seed, r.status, r.wall_seconds);
    })?;
    eprintln!(
        "{} planned, {} already recorded, {} trained, {} failed, {} exceeded",
        summary.planned, summary.skipped, summary.trained, summary.failed, summary.exceeded
    );
    ctx.note(runs, "runs");
    Ok(())
}

fn stats(ctx: &mut Ctx, a: Stats) -> Result<()> {
    if !a.runs.exists() {
        return Err(Error::Invalid(format!("{}: no such record store", a.runs.display())));
    }
    let store = RecordStore::open(&a.runs)?;
    let records: Vec<RunRecord> = match &a.plan {
        Some(p) => store.table(p),
        None => store.records().to_vec(),
    };
    if records.is_empty() {
        return Err(Error::Invalid("no records to aggregate".into()));
    }
    for r in &records {
        r.check()?;
    }
    let dir = a.out_dir.unwrap_or_else(|| ctx.ws.reports());
    let prefix = a.plan.as_deref().map(|p| format!("{p}_")).unwrap_or_default();
    let path = |name: &str| dir.join(format!("{prefix}{name}"));
    match a.table {
        Table::Edges => {
            let cells = aggregate_by_edges(&records);
            ctx.write(path("edges.csv"), &harness::edges_csv(&cells)?, "table")?;
            if a.svg {
                let mut series: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
                for c in &cells {
                    series
                        .entry((c.layers, c.interaction_edges))
                        .or_default()
                        .push((c.non_interaction_edges as f64, c.mean_mae));
                }
                let series: Vec<Series> = series
                    .into_iter()
                    .map(|((l, i), points)| Series {
                        label: format!("L={l}, {i} interaction"),
                        points,
                    })
                    .collect();
                let svg = svg::line_chart("Mean MAE by edge counts", "non-interaction edges", "MAE", &series);
                ctx.write(path("edges.svg"), svg.as_bytes(), "chart")?;
            }
        }
        Table::Removal => {
            let report = paired_removal_stats(&records)?;
            for u in &report.unmatched {
                eprintln!("unmatched: {u}");
            }
            ctx.write(path("removal.csv"), &harness::removal_csv(&report)?, "table")?;
            ctx.write(path("removal_pairs.json"), serde_json::to_string_pretty(&report.stats)?.as_bytes(), "table")?;
        }
        Table::Hops => {
            let cells = hops_heatmap(&records);
            ctx.write(path("hops.csv"), &harness::hops_csv(&cells)?, "table")?;
            if a.svg {
                let mut layers: Vec<usize> = cells.iter().map(|c| c.layers).collect();
                layers.dedup();
                for l in layers {
                    let two: Vec<_> = cells.iter().filter(|c| c.layers == l && c.hops.len() == 2).collect();
                    let mut axis: Vec<u32> = two.iter().flat_map(|c| c.hops.iter().copied()).collect();
                    axis.sort_unstable();
                    axis.dedup();
                    let at = |h: u32| axis.iter().position(|&x| x == h).expect("axis holds every hop");
                    let labels: Vec<String> = axis.iter().map(u32::to_string).collect();
                    let data: Vec<(usize, usize, f64)> =
                        two.iter().map(|c| (at(c.hops[0]), at(c.hops[1]), c.mean_mae)).collect();
                    let svg = svg::heatmap(&format!("Mean MAE by hops, L={l}"), &labels, &labels, &data);
                    ctx.write(path(&format!("hops_L{l}.svg")), svg.as_bytes(), "chart")?;
                }
            }
        }
        Table::Scaling => {
            let rows = scaling_table(&records);
            ctx.write(path("scaling.csv"), &harness::scaling_csv(&rows)?, "table")?;
            if a.svg {
                let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
                for r in &rows {
                    let p = r.pairwise_terms as f64;
                    series.entry("noise floor".into()).or_default().push((p, r.noise_floor));
                    if let Some(l) = r.linear {
                        series.entry("linear".into()).or_default().push((p, l));
                    }
                    for (k, m) in &r.kinds {
                        if let Some(m) = m {
                            series.entry(k.clone()).or_default().push((p, *m));
                        }
                    }
                }
                let series: Vec<Series> = series.into_iter().map(|(label, points)| Series { label, points }).collect();
                let svg = svg::line_chart("MAE by number of pairwise terms", "pairwise terms", "MAE", &series);
                ctx.write(path("scaling.svg"), svg.as_bytes(), "chart")?;
            }
        }
    }
    Ok(())
}

fn trial_plan(f: &TrialFlags) -> TrialPlan {
    TrialPlan {
        trials: f.trials,
        min_features: f.min_features,
        max_features: f.max_features.unwrap_or(8),
        samples: f.samples,
        noise_scale: f.noise,
        seed: f.seed,
        family: FamilyOptions::default(),
    }
}

#[derive(Debug, Serialize)]
struct PassRates {
    trials: usize,
    max_abs_noise: f64,
    inequalities: BTreeMap<&'static str, f64>,
    claims: BTreeMap<&'static str, f64>,
}

fn mdl(ctx: &mut Ctx, a: Mdl) -> Result<()> {
    let code = default_code();
    match a.action {
        MdlAction::Verify { dataset: Some(path), flags } => {
            let ds = io::read_dataset(&path)?;
            let mut r = rng::seeded(flags.seed, stream::TRIALS);
            let checks = check_dataset(ds.truth(), ds.all(), &FamilyOptions::default(), &mut r, &code)?;
            let report = mdlselect::total_bits(&featgraph_core::fgraph::ground_truth_graph(ds.truth())?, ds.all(), &code)?;
            #[derive(Serialize)]
            struct Out<'a> {
                truth: String,
                report: mdlselect::MdlReport,
                checks: &'a [mdlselect::Check],
            }
            let out = Out {
                truth: ds.truth().to_string(),
                report,
                checks: &checks,
            };
            let dir = flags.out_dir.unwrap_or_else(|| ctx.ws.reports());
            ctx.write(dir.join("mdl_dataset.json"), serde_json::to_string_pretty(&out)?.as_bytes(), "report")?;
            let failed: Vec<&str> = checks
                .iter()
                .filter(|c| !c.pass() && c.inequality != Inequality::TheoremUnrestricted)
                .map(|c| c.inequality.id())
                .collect();
            if !failed.is_empty() {
                eprintln!("violated: {}", failed.join(", "));
            }
        }
        MdlAction::Verify { dataset: None, flags } => {
            let plan = trial_plan(&flags);
            let report = verify_inequalities(&plan, &code)?;
            let rates = PassRates {
                trials: report.trials.len(),
                max_abs_noise: report.max_abs_noise(),
                inequalities: Inequality::ALL.iter().map(|&i| (i.id(), report.pass_rate(i))).collect(),
                claims: Claim::ALL.iter().map(|&c| (c.id(), report.claim_pass_rate(c))).collect(),
            };
            let dir = flags.out_dir.unwrap_or_else(|| ctx.ws.reports());
            ctx.write(dir.join("mdl_verify.csv"), &io::verification_csv(&report)?, "report")?;
            ctx.write(dir.join("mdl_verify.json"), serde_json::to_string_pretty(&rates)?.as_bytes(), "report")?;
            for (c, r) in &rates.claims {
                eprintln!("{c}: {:.1}%", 100.0 * r);
            }
        }
        MdlAction::Select { dataset: Some(path), flags } => {
            let ds = io::read_dataset(&path)?;
            let sel = exhaustive_select(ds.all(), &code)?;
            let dir = flags.out_dir.unwrap_or_else(|| ctx.ws.reports());
            ctx.write(dir.join("mdl_select.json"), serde_json::to_string_pretty(&sel)?.as_bytes(), "report")?;
            eprintln!("selected {}", sel.best.graph);
        }
        MdlAction::Select { dataset: None, flags } => {
            let mut plan = trial_plan(&flags);
            plan.max_features = flags.max_features.unwrap_or(4);
            let trials = selection_trials(&plan, &code)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["trial", "truth", "selected", "recovered"])?;
            for t in &trials {
                w.write_record([
                    t.trial.to_string(),
                    t.truth.to_string(),
                    t.selected.to_string(),
                    t.recovered.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
            let dir = flags.out_dir.unwrap_or_else(|| ctx.ws.reports());
            ctx.write(dir.join("mdl_select.csv"), &bytes, "report")?;
            let hits = trials.iter().filter(|t| t.recovered).count();
            eprintln!("recovered {hits}/{}", trials.len());
        }
    }
    Ok(())
}

fn bell(ctx: &mut Ctx, max_d: usize, out: &mut dyn std::io::Write) -> Result<()> {
    if max_d == 0 || max_d > MAX_CENSUS_D {
        return Err(Error::Invalid(format!("--max-d must be in 1..={MAX_CENSUS_D}")));
    }
    let bell = bell_numbers(max_d);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["d", "graphs", "classes", "bell", "match"])?;
    let mut bad = Vec::new();
    for d in 1..=max_d {
        let c = census(d);
        let ok = c.classes as u64 == bell[d] && c.graphs == 1 << (d * (d - 1) / 2);
        writeln!(out, "d={d}: {} graphs, {} classes (Bell {})", c.graphs, c.classes, bell[d]).map_err(Error::io("stdout"))?;
        w.write_record([d.to_string(), c.graphs.to_string(), c.classes.to_string(), bell[d].to_string(), ok.to_string()])?;
        if !ok {
            bad.push(d);
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    ctx.write(ctx.ws.reports().join("bell.csv"), &bytes, "report")?;
    if !bad.is_empty() {
        return Err(Error::Failed(format!("class counts differ from Bell numbers at d = {bad:?}")));
    }
    Ok(())
}
