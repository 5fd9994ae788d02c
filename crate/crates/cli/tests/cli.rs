use std::fs;
use std::path::Path;
use std::process::Command;

use lsgp::io::read_metrics;

fn lsgp(config: &Path, extra: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lsgp")).arg("run").arg("--config").arg(config).args(extra).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn metrics(dir: &Path) -> Vec<lsgp::io::MetricRow> {
    read_metrics(fs::File::open(dir.join("metrics.csv")).unwrap()).unwrap()
}

const SYNTH: &str = "task = \"synth\"\noutput_dir = \"synth\"\nseed = 3\n[data]\nkind = \"planted\"\nrealizations = 120\n\
                     [data.planted]\nnodes = 14\nknn = 4\ncomponents = 2\norder = 2\n";

#[test]
fn unknown_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "task = \"learn\"\noutput_dir = \"o\"\nbogus = 1\n");
    let out = lsgp(&cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn missing_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "task = \"learn\"\noutput_dir = \"o\"\n[data]\nedges = \"nope.csv\"\nsignals = \"nope.csv\"\n");
    let out = lsgp(&cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn runtime_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "edges.csv", "i,j,w\n0,1,1.0\n2,3,1.0\n");
    write(dir.path(), "signals.csv", "v0,v1,v2,v3\n1,2,3,4\n2,1,0,1\n");
    let cfg = write(
        dir.path(),
        "c.toml",
        "task = \"learn\"\noutput_dir = \"o\"\n[data]\nedges = \"edges.csv\"\nsignals = \"signals.csv\"\n",
    );
    let out = lsgp(&cfg, &[]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_output_feeds_file_pipelines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "synth.toml", SYNTH);
    assert!(lsgp(&cfg, &[]).status.success());
    let synth = dir.path().join("synth");
    for f in ["edges.csv", "signals.csv", "model.json", "metrics.csv", "manifest.json", "run_report.json"] {
        assert!(synth.join(f).exists(), "{f}");
    }
    let m = metrics(&synth);
    assert_eq!(m.iter().find(|r| r.metric == "vertices").unwrap().value, 14.0);

    let learn = write(
        dir.path(),
        "learn.toml",
        "task = \"learn\"\noutput_dir = \"learn\"\n[data]\nedges = \"synth/edges.csv\"\nsignals = \"synth/signals.csv\"\n\
         [learner]\nk = 2\nq = 2\nouter_iters = 4\ninner_iters = 40\nrefine_iters = 50\n",
    );
    let out = lsgp(&learn, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("learn/model.json")).unwrap()).unwrap();
    assert_eq!(doc["K"], 2);
    assert_eq!(doc["n"], 14);
}

#[test]
fn block_synth_satisfies_bounds_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write(
        dir.path(),
        "synth.toml",
        "task = \"synth\"\noutput_dir = \"b\"\n[data]\nkind = \"block\"\nrealizations = 50\n\
         [data.block]\nblocks = 3\nnodes_per_block = 10\nknn = 4\ninter_edges = 4\n",
    );
    assert!(lsgp(&synth, &[]).status.success());
    let bounds = write(
        dir.path(),
        "bounds.toml",
        "task = \"verify-bounds\"\noutput_dir = \"v\"\n[data]\nedges = \"b/edges.csv\"\n\
         [bounds]\nmodel = \"b/model.json\"\npartition = \"b/partition.csv\"\n",
    );
    let out = lsgp(&bounds, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = metrics(&dir.path().join("v"));
    let violations: Vec<_> = m.iter().filter(|r| r.metric.ends_with("_violations")).collect();
    assert_eq!(violations.len(), 3);
    assert!(violations.iter().all(|r| r.value == 0.0), "{violations:?}");
}

#[test]
fn subcommand_and_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "synth.toml", SYNTH);
    let out = Command::new(env!("CARGO_BIN_EXE_lsgp"))
        .args(["partition", "--config"])
        .arg(&cfg)
        .args(["--k", "3", "--seed", "11", "--output-dir"])
        .arg(dir.path().join("p"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("p/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["task"], "partition");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["partition"]["k"], 3);
    let sizes: f64 = metrics(&dir.path().join("p")).iter().filter(|r| r.metric == "part_size").map(|r| r.value).sum();
    assert_eq!(sizes, 14.0);
}

#[test]
fn sweep_reports_every_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        "task = \"sweep\"\noutput_dir = \"s\"\n[data]\nkind = \"planted\"\nrealizations = 100\n\
         [data.planted]\nnodes = 12\nknn = 4\ncomponents = 1\norder = 2\n[learner]\nq = 2\nouter_iters = 3\ninner_iters = 30\nrefine_iters = 30\n\
         [missing]\nratio = 0.25\n[interpolate]\nmethods = [\"sample\", \"true\"]\n[sweep]\nparameter = \"ratio\"\nvalues = [0.1, 0.3]\n",
    );
    let out = lsgp(&cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = metrics(&dir.path().join("s"));
    for v in ["ratio=0.1", "ratio=0.3"] {
        for method in ["method=sample", "method=true"] {
            assert!(m.iter().any(|r| r.metric == "NME" && r.details.contains(v) && r.details.contains(method)), "{v} {method}");
        }
    }
}

#[test]
fn local_approximation_writes_composite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "l.toml",
        "task = \"local-approx\"\noutput_dir = \"l\"\n[data]\nkind = \"block\"\nrealizations = 200\n\
         [data.block]\nblocks = 2\nnodes_per_block = 10\nknn = 4\ninter_edges = 3\n[partition]\nk = 2\n\
         [learner]\nq = 2\nouter_iters = 3\ninner_iters = 30\nrefine_iters = 30\n",
    );
    let out = lsgp(&cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("l/local_models.json")).unwrap()).unwrap();
    assert_eq!(doc["models"].as_array().unwrap().len(), 2);
    let m = metrics(&dir.path().join("l"));
    assert!(m.iter().any(|r| r.metric == "NMI"));
    assert!(m.iter().any(|r| r.metric == "CD" && r.details == "reference=true;estimate=local"));
}
