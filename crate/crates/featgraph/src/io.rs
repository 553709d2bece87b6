//! On-disk formats.
//!
//! * Dataset: `<stem>.csv` with header `x0,...,x{d-1},y`, one sample per row,
//!   plus a `<stem>.json` sidecar holding the generator parameters, the
//!   split and `sigma_f`. Floats are written in shortest round-trip form,
//!   so a dataset read back is bit-identical.
//! * Graph: a text edge list. `#` lines are comments, and `# key=value`
//!   comments before the header carry metadata. The first other line is
//!   `d=<features>`, followed by one `i j` line per edge with `i < j`, in
//!   ascending order.
//! * Partition: blocks separated by `|`, e.g. `0 1 | 2 | 3 4`.
//! * Checkpoint: `<stem>.json` manifest (configuration, tensor names,
//!   shapes and offsets, batch-norm state, SHA-256 of the data) plus
//!   `<stem>.bin`, all parameter values as little-endian `f64` in manifest
//!   order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use featgraph_core::diffkit::{BatchNorm, Tensor};
use featgraph_core::dmie::FeaturePartition;
use featgraph_core::fgraph::{Edge, FeatureGraph};
use featgraph_core::gnnmodel::{GnnConfig, GnnModel};
use featgraph_core::mdlselect::VerificationReport;
use featgraph_core::synth::{noise_mae_floor, GeneratorSpec, SyntheticDataset, SyntheticSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const DATASET_FORMAT: &str = "featgraph-dataset-v1";
pub const CHECKPOINT_FORMAT: &str = "featgraph-checkpoint-v1";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(Error::io(path))
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn with_extension(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Strips a trailing `.csv` or `.json` so either file of a pair names it.
pub fn dataset_stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv" | "json") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub format: String,
    /// Ground truth in text form, e.g. `x0*x1 + x2`.
    pub truth: String,
    pub generator: GeneratorSpec,
    pub num_features: usize,
    pub samples: usize,
    pub train_len: usize,
    pub sigma_f: f64,
    pub noise_mae_floor: f64,
    /// SHA-256 of the CSV file.
    pub csv_sha256: String,
}

fn dataset_csv(ds: &SyntheticDataset) -> Result<Vec<u8>> {
    let d = ds.num_features();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(d + 1);
    for (row, y) in ds.all().rows().zip(ds.targets()) {
        record.clear();
        record.extend(row.iter().map(|v| v.to_string()));
        record.push(y.to_string());
        w.write_record(&record)?;
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

/// Writes `<stem>.csv` and `<stem>.json`; returns both paths.
pub fn write_dataset(stem: &Path, ds: &SyntheticDataset) -> Result<(PathBuf, PathBuf)> {
    let csv_bytes = dataset_csv(ds)?;
    let sidecar = DatasetSidecar {
        format: DATASET_FORMAT.into(),
        truth: ds.truth().to_string(),
        generator: ds.spec().clone(),
        num_features: ds.num_features(),
        samples: ds.len(),
        train_len: ds.train_len(),
        sigma_f: ds.sigma_f(),
        noise_mae_floor: noise_mae_floor(ds),
        csv_sha256: sha256_hex(&csv_bytes),
    };
    let csv_path = with_extension(stem, "csv");
    let json_path = with_extension(stem, "json");
    write_atomic(&csv_path, &csv_bytes)?;
    write_atomic(&json_path, serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok((csv_path, json_path))
}

/// The `(p, q)` family member `spec` was generated from, if it is one.
pub fn canonical_spec(spec: &GeneratorSpec) -> Option<SyntheticSpec> {
    let terms = spec.truth.terms();
    let p = terms.iter().filter(|t| t.len() == 2).count();
    let q = terms.iter().filter(|t| t.len() == 1).count();
    let candidate = SyntheticSpec {
        pairwise_terms: p,
        unary_terms: q,
        samples: spec.samples,
        noise_scale: spec.noise_scale,
        seed_base: spec.seed_base,
    };
    (candidate.generator() == *spec).then_some(candidate)
}

pub fn read_sidecar(path: &Path) -> Result<DatasetSidecar> {
    let json_path = with_extension(&dataset_stem(path), "json");
    let sidecar: DatasetSidecar = serde_json::from_str(&read_text(&json_path)?)?;
    if sidecar.format != DATASET_FORMAT {
        return Err(Error::Invalid(format!("{}: unknown format {}", json_path.display(), sidecar.format)));
    }
    Ok(sidecar)
}

/// Reads a dataset from either file of the pair.
pub fn read_dataset(path: &Path) -> Result<SyntheticDataset> {
    let stem = dataset_stem(path);
    let sidecar = read_sidecar(&stem)?;
    let csv_path = with_extension(&stem, "csv");
    let bytes = fs::read(&csv_path).map_err(Error::io(&csv_path))?;
    if sha256_hex(&bytes) != sidecar.csv_sha256 {
        return Err(Error::Invalid(format!("{}: content does not match its sidecar hash", csv_path.display())));
    }
    let d = sidecar.num_features;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers()?.clone();
    let expect: Vec<String> = (0..d).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    if header.iter().ne(expect.iter().map(String::as_str)) {
        return Err(Error::Parse {
            path: csv_path,
            line: 1,
            msg: format!("expected header {}", expect.join(",")),
        });
    }
    let mut features = Vec::with_capacity(sidecar.samples * d);
    let mut targets = Vec::with_capacity(sidecar.samples);
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| Error::Parse {
            path: csv_path.clone(),
            line: i + 2,
            msg,
        };
        if rec.len() != d + 1 {
            return Err(bad(format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| bad(format!("not a number: {field:?}")))?;
            if j < d {
                features.push(v);
            } else {
                targets.push(v);
            }
        }
    }
    Ok(SyntheticDataset::from_parts(
        sidecar.generator,
        features,
        targets,
        sidecar.train_len,
        sidecar.sigma_f,
    )?)
}

/// An edge list plus its `# key=value` metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFile {
    pub graph: FeatureGraph,
    pub meta: BTreeMap<String, String>,
}

pub fn format_graph(graph: &FeatureGraph, meta: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}={v}");
    }
    let _ = writeln!(out, "d={}", graph.num_features());
    for e in graph.edges() {
        let _ = writeln!(out, "{} {}", e.lo(), e.hi());
    }
    out
}

pub fn parse_graph(text: &str, path: &Path) -> Result<GraphFile> {
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut meta = BTreeMap::new();
    let mut graph: Option<FeatureGraph> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if graph.is_none() {
                if let Some((k, v)) = c.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
            continue;
        }
        match &mut graph {
            None => {
                let d = line
                    .strip_prefix("d=")
                    .and_then(|d| d.trim().parse::<usize>().ok())
                    .ok_or_else(|| bad(n, "expected header d=<features>".into()))?;
                graph = Some(FeatureGraph::null(d));
            }
            Some(g) => {
                let mut it = line.split_whitespace().map(str::parse::<usize>);
                let (Some(Ok(a)), Some(Ok(b)), None) = (it.next(), it.next(), it.next()) else {
                    return Err(bad(n, format!("expected two node indices, found {line:?}")));
                };
                let e = Edge::new(a, b).map_err(|e| bad(n, e.to_string()))?;
                if !g.insert(e).map_err(|e| bad(n, e.to_string()))? {
                    return Err(bad(n, format!("duplicate edge {a} {b}")));
                }
            }
        }
    }
    let graph = graph.ok_or_else(|| bad(1, "missing d=<features> header".into()))?;
    Ok(GraphFile { graph, meta })
}

pub fn read_graph(path: &Path) -> Result<GraphFile> {
    parse_graph(&read_text(path)?, path)
}

pub fn write_graph(path: &Path, graph: &FeatureGraph, meta: &BTreeMap<String, String>) -> Result<()> {
    write_atomic(path, format_graph(graph, meta).as_bytes())
}

pub fn format_partition(p: &FeaturePartition) -> String {
    p.blocks()
        .iter()
        .map(|b| b.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join(" | ")
}

pub fn parse_partition(text: &str, num_features: usize) -> Result<FeaturePartition> {
    let blocks = text
        .trim()
        .split('|')
        .filter(|b| !b.trim().is_empty())
        .map(|b| {
            b.split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::Invalid(format!("bad node index {t:?}"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeaturePartition::new(num_features, blocks)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data file, in values.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub num_features: usize,
    pub config: GnnConfig,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
    pub norms: Vec<BatchNorm>,
    pub data_file: String,
    pub data_sha256: String,
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save_checkpoint(stem: &Path, model: &GnnModel, config: &GnnConfig) -> Result<PathBuf> {
    let mut data = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in model.parameter_names().into_iter().zip(model.parameters()) {
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let bin = with_extension(stem, "bin");
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        num_features: model.num_features(),
        config: config.clone(),
        seed: config.seed,
        tensors,
        norms: model.norms().to_vec(),
        data_file: bin.file_name().expect("stem has a file name").to_string_lossy().into_owned(),
        data_sha256: sha256_hex(&data),
    };
    write_atomic(&bin, &data)?;
    let json = with_extension(stem, "json");
    write_atomic(&json, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(json)
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<(GnnModel, GnnConfig)> {
    let m: CheckpointManifest = serde_json::from_str(&read_text(manifest_path)?)?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::Invalid(format!("unknown checkpoint format {}", m.format)));
    }
    let bin = manifest_path.with_file_name(&m.data_file);
    let bytes = fs::read(&bin).map_err(Error::io(&bin))?;
    if sha256_hex(&bytes) != m.data_sha256 {
        return Err(Error::Invalid(format!("{}: data does not match the manifest hash", bin.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut params = Vec::with_capacity(m.tensors.len());
    for t in &m.tensors {
        let slice = values
            .get(t.offset..t.offset + t.len)
            .ok_or_else(|| Error::Invalid(format!("tensor {} runs past the data file", t.name)))?;
        params.push(Tensor::new(t.shape.clone(), slice.to_vec()).map_err(|e| Error::Invalid(e.to_string()))?);
    }
    let model = GnnModel::from_parts(m.num_features, &m.config, params, m.norms)?;
    Ok((model, m.config))
}

/// `trial,inequality,pass,instances,violations` rows.
pub fn verification_csv(report: &VerificationReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "truth", "inequality", "pass", "instances", "violations"])?;
    for t in &report.trials {
        for c in &t.checks {
            w.write_record([
                t.trial.to_string(),
                t.truth.to_string(),
                c.inequality.id().to_string(),
                c.pass().to_string(),
                c.instances.to_string(),
                c.violations.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use featgraph_core::synth::generate;

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&SyntheticSpec::new(1, 2, 50)).unwrap();
        let (csv_path, _) = write_dataset(&dir.path().join("d"), &ds).unwrap();
        let text = read_text(&csv_path).unwrap();
        assert!(text.starts_with("x0,x1,x2,x3,y\n"));
        assert_eq!(text.lines().count(), 51);
        assert_eq!(read_dataset(&csv_path).unwrap(), ds);
        assert_eq!(read_dataset(&dir.path().join("d.json")).unwrap(), ds);
        assert_eq!(canonical_spec(ds.spec()), Some(SyntheticSpec::new(1, 2, 50)));
    }

    #[test]
    fn tampered_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&SyntheticSpec::new(1, 1, 20)).unwrap();
        let (csv_path, _) = write_dataset(&dir.path().join("d"), &ds).unwrap();
        let text = read_text(&csv_path).unwrap().replacen('1', "2", 1);
        fs::write(&csv_path, text).unwrap();
        assert!(read_dataset(&csv_path).is_err());
    }

    #[test]
    fn edge_list_round_trip_and_errors() {
        let g = FeatureGraph::from_edges(5, [(3, 1), (0, 4)]).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("stratum".to_string(), "2".to_string());
        let text = format_graph(&g, &meta);
        assert_eq!(text, "# stratum=2\nd=5\n0 4\n1 3\n");
        let back = parse_graph(&text, Path::new("g")).unwrap();
        assert_eq!(back.graph, g);
        assert_eq!(back.meta, meta);
        for bad in ["0 1\n", "d=3\n0 0\n", "d=3\n0 5\n", "d=3\n0 1\n1 0\n", "d=3\n0 1 2\n", ""] {
            assert!(parse_graph(bad, Path::new("g")).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn partition_text() {
        let p = parse_partition("0 1 | 2 | 3 4", 5).unwrap();
        assert_eq!(p.blocks().len(), 3);
        assert_eq!(format_partition(&p), "0 1 | 2 | 3 4");
        assert!(parse_partition("0 1 | 1", 2).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GnnConfig::for_layers(2).unwrap().with_seed(7);
        let mut model = GnnModel::new(4, &cfg).unwrap();
        model.norms_mut()[1].running_mean[3] = 0.25;
        let manifest = save_checkpoint(&dir.path().join("m"), &model, &cfg).unwrap();
        let (back, back_cfg) = load_checkpoint(&manifest).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_cfg, cfg);
        let bin = dir.path().join("m.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[0] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert!(load_checkpoint(&manifest).is_err());
    }
}
