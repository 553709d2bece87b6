use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn featgraph(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featgraph"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).map(|s| s.lines().count()).unwrap_or(0)
}

#[test]
fn bell_counts_for_four_nodes() {
    let ws = tempfile::tempdir().unwrap();
    let o = featgraph(ws.path(), &["theory", "bell", "--max-d", "4"]);
    assert!(o.status.success());
    // Bell(4) = 15 set partitions of four labelled items.
    assert!(stdout(&o).contains("d=4: 64 graphs, 15 classes"), "{}", stdout(&o));
    assert!(ws.path().join("reports/bell.csv").exists());
    assert_eq!(featgraph(ws.path(), &["theory", "bell", "--max-d", "0"]).status.code(), Some(1));
}

#[test]
fn gen_data_shape_and_idempotence() {
    let ws = tempfile::tempdir().unwrap();
    let args = ["gen-data", "--p", "2", "--q", "2", "--n", "10000"];
    let o = featgraph(ws.path(), &args);
    assert!(o.status.success());
    let out = stdout(&o);
    let csv = out.lines().find(|l| l.ends_with(".csv")).unwrap();
    let text = fs::read_to_string(csv).unwrap();
    let mut rows = text.lines();
    assert_eq!(rows.next().unwrap(), "x0,x1,x2,x3,x4,x5,y");
    assert_eq!(rows.count(), 10000);
    let before = fs::read(csv).unwrap();
    assert!(featgraph(ws.path(), &args).status.success());
    assert_eq!(fs::read(csv).unwrap(), before);
    assert_eq!(featgraph(ws.path(), &["gen-data", "--p", "0", "--q", "0", "--n", "10"]).status.code(), Some(1));
}

#[test]
fn train_rejects_missing_graph_without_writing() {
    let ws = tempfile::tempdir().unwrap();
    let o = featgraph(ws.path(), &["gen-data", "--p", "1", "--q", "1", "--n", "100", "--out", &ws.path().join("datasets/d").to_string_lossy()]);
    assert!(o.status.success());
    let o = featgraph(ws.path(), &["train", "--dataset", &ws.path().join("datasets/d.csv").to_string_lossy(), "--graph", "/nonexistent.edges"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!ws.path().join("runs/train.jsonl").exists());
}

#[test]
fn end_to_end_pipeline() {
    let ws = tempfile::tempdir().unwrap();
    let w = ws.path();
    let p = |s: &str| w.join(s).to_string_lossy().into_owned();
    assert!(featgraph(w, &["gen-data", "--p", "2", "--q", "2", "--n", "300", "--out", &p("datasets/small")]).status.success());
    fs::write(
        w.join("strata.toml"),
        "siblings = true\nseed = 3\nquotas = [{ interaction_edges = 2, non_interaction_edges = 2, count = 1 }]\n",
    )
    .unwrap();
    let o = featgraph(w, &["sample-graphs", "--dataset", &p("datasets/small.csv"), "--strata-plan", &p("strata.toml")]);
    assert!(o.status.success());
    let graphs: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(graphs.len(), 4);
    assert!(fs::read_to_string(&graphs[0]).unwrap().contains("# interaction_edges=2"));

    let train = ["train", "--dataset", &p("datasets/small.csv"), "--graph", &graphs[0], "--epochs", "1", "--batch-size", "32"];
    let o = featgraph(w, &train);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = w.join("runs/train.jsonl");
    assert_eq!(lines(&runs), 1);
    assert!(featgraph(w, &train).status.success());
    assert_eq!(lines(&runs), 1, "identical arguments add no record");

    let mut capped = train.to_vec();
    capped.extend(["--arc-cap", "2", "--seed", "9"]);
    assert_eq!(featgraph(w, &capped).status.code(), Some(3));

    assert!(featgraph(w, &["verify"]).status.success());
    fs::write(&graphs[1], "d=6\n").unwrap();
    let o = featgraph(w, &["verify"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("g0001.edges"));
}

#[test]
fn sweep_resume_and_stats() {
    let ws = tempfile::tempdir().unwrap();
    let w = ws.path();
    let plan = w.join("plan.toml");
    fs::write(
        &plan,
        r#"
name = "mini"
layers = [1]
seeds = [0, 1]
linear_baseline = true
[dataset]
pairwise_terms = 1
unary_terms = 1
samples = 120
[graphs]
kind = "reference"
kinds = ["null", "ground_truth"]
[training]
max_epochs = 1
batch_size = 16
"#,
    )
    .unwrap();
    let o = featgraph(w, &["sweep", "--plan", &plan.to_string_lossy()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = w.join("runs/mini.jsonl");
    assert_eq!(lines(&runs), 5);
    let o = featgraph(w, &["sweep", "--plan", &plan.to_string_lossy()]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("5 already recorded, 0 trained"));
    for table in ["edges", "hops", "scaling", "removal"] {
        let o = featgraph(w, &["stats", table, "--runs", &runs.to_string_lossy(), "--svg"]);
        assert!(o.status.success(), "{table}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let scaling = fs::read_to_string(w.join("reports/scaling.csv")).unwrap();
    assert!(scaling.starts_with("pairwise_terms,noise_floor,linear,ground_truth,null,exceeded"));
    assert!(w.join("reports/hops_L1.svg").exists());
    let o = featgraph(w, &["stats", "edges", "--runs", &w.join("none.jsonl").to_string_lossy()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn mdl_commands() {
    let ws = tempfile::tempdir().unwrap();
    let w = ws.path();
    let o = featgraph(w, &["mdl", "verify", "--trials", "3", "--samples", "300"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(w.join("reports/mdl_verify.csv")).unwrap();
    assert!(csv.starts_with("trial,truth,inequality,pass,instances,violations"));
    assert_eq!(csv.lines().count(), 1 + 3 * 11);
    assert!(featgraph(w, &["mdl", "select", "--trials", "3", "--samples", "300"]).status.success());
    assert!(featgraph(w, &["gen-data", "--p", "1", "--q", "2", "--n", "400", "--out", &w.join("datasets/m").to_string_lossy()]).status.success());
    let o = featgraph(w, &["mdl", "select", "--dataset", &w.join("datasets/m.csv").to_string_lossy()]);
    assert!(o.status.success());
    let sel = fs::read_to_string(w.join("reports/mdl_select.json")).unwrap();
    assert!(sel.contains("\"best\""));
    assert!(featgraph(w, &["mdl", "verify", "--dataset", &w.join("datasets/m.csv").to_string_lossy()]).status.success());
}
