use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ocfl_cli::output::{read_rounds, PartitionFile, RunManifest};
use ocfl_cli::xai::IndeFile;

fn ocfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocfl")).args(args).env("OCFL_LOG", "warn").output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = "rounds = 8\n[data]\nsamples_per_client = 80\norchestrator_per_class = 20\n";

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = ocfl(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn read<T: for<'de> serde::Deserialize<'de>>(p: PathBuf) -> T {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

#[test]
fn generate_writes_a_stable_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    for out in ["a", "b"] {
        let o = ocfl(&["generate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join(out).to_str().unwrap(), "--seeds", "3"]);
        assert!(o.status.success());
        assert!(String::from_utf8_lossy(&o.stdout).contains("cluster sizes [3, 7, 5]"));
    }
    let a = fs::read(tmp.path().join("a/seed-3/manifest.json")).unwrap();
    let b = fs::read(tmp.path().join("b/seed-3/manifest.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn malformed_config_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "rounds = 3\n[trigger]\npp = 2.0\n");
    for cmd in ["generate", "run"] {
        let o = ocfl(&[cmd, "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
        assert!(!o.status.success());
        assert!(String::from_utf8_lossy(&o.stderr).contains("`pp`"));
    }
}

#[test]
fn ocfl_run_bookkeeping_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &format!("{SMALL}[inde]\nsample_size = 16\nstep = 4\n"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&cfg, &a, &["--seeds", "0,1"]);
    run(&cfg, &b, &["--seeds", "0,1", "--parallel-seeds"]);
    for s in ["seed-0", "seed-1"] {
        let rows = read_rounds(&a.join(s).join("rounds.csv")).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows.iter().filter(|r| r.fired).count(), 1);
        for f in ["rounds.csv", "partition.json", "inde.json", "temperature.csv", "data/manifest.json"] {
            assert_eq!(fs::read(a.join(s).join(f)).unwrap(), fs::read(b.join(s).join(f)).unwrap(), "{s}/{f}");
        }
        let ma: RunManifest = read(a.join(s).join("manifest.json"));
        let mb: RunManifest = read(b.join(s).join("manifest.json"));
        assert_eq!(ma.outputs, mb.outputs);
        assert_eq!(ma.summary, mb.summary);
        let parts: PartitionFile = read(a.join(s).join("partition.json"));
        assert_eq!(parts.rounds.len(), 8);
        assert_eq!(parts.final_partition, parts.ground_truth);
    }
}

#[test]
fn bnc_stays_whole_and_xai_records_per_mode_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &format!("{SMALL}[strategy]\nstrategy = \"bnc\"\n"));
    let out = tmp.path().join("bnc");
    run(&cfg, &out, &["--seeds", "4"]);
    let parts: PartitionFile = read(out.join("seed-4/partition.json"));
    assert!(parts.rounds.iter().all(|r| r.partition.k() == 1));
    assert!(!out.join("seed-4/inde.json").exists());

    let o = ocfl(&["xai", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f: IndeFile = read(out.join("seed-4/inde.json"));
    assert_eq!(f.modes.len(), 3);
    for b in &f.modes {
        let ood = b.mode == ocfl_core::xai::IndeMode::OutOfDistribution;
        assert_eq!(b.error.is_some(), ood);
        assert_eq!(b.result.is_some(), !ood);
    }
    let m: RunManifest = read(out.join("seed-4/manifest.json"));
    assert!(m.outputs.contains_key("inde.json"));

    let first = fs::read(out.join("seed-4/inde.json")).unwrap();
    assert!(ocfl(&["xai", out.to_str().unwrap(), "--seeds", "4"]).status.success());
    assert_eq!(first, fs::read(out.join("seed-4/inde.json")).unwrap());
}

#[test]
fn xai_on_three_clusters_gives_three_blocks_of_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("r");
    run(&cfg, &out, &["--seeds", "2"]);
    let inde = write_config(tmp.path(), "inde.toml", "[inde]\nsample_size = 8\nstep = 5\n");
    assert!(ocfl(&["xai", out.to_str().unwrap(), "--config", inde.to_str().unwrap()]).status.success());
    let f: IndeFile = read(out.join("seed-2/inde.json"));
    assert_eq!(f.modes.len(), 3);
    for b in &f.modes {
        let r = b.result.as_ref().unwrap();
        assert_eq!(r.clusters.len(), 3);
        assert!(r.clusters.iter().all(|c| c.samples == 8 && c.insertion_curve.len() == 5));
    }
}

#[test]
fn xai_without_checkpoints_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("r");
    run(&cfg, &out, &["--seeds", "1"]);
    fs::remove_file(out.join("seed-1/models/cluster-0.json")).unwrap();
    let o = ocfl(&["xai", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing checkpoint"));
}

#[test]
fn report_recomputes_from_rounds_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let ocfl_cfg = write_config(tmp.path(), "o.toml", &format!("name = \"ocfl\"\n{SMALL}"));
    let bnc_cfg = write_config(tmp.path(), "b.toml", &format!("{SMALL}[strategy]\nstrategy = \"bnc\"\n"));
    let (ro, rb) = (tmp.path().join("ro"), tmp.path().join("run-bnc"));
    run(&ocfl_cfg, &ro, &["--seeds", "0,1"]);
    run(&bnc_cfg, &rb, &["--seeds", "0"]);
    let summary = tmp.path().join("summary.csv");
    let o = ocfl(&["report", ro.to_str().unwrap(), rb.to_str().unwrap(), "--out", summary.to_str().unwrap()]);
    assert!(o.status.success());

    let mut r = csv::Reader::from_path(&summary).unwrap();
    let head = r.headers().unwrap().clone();
    let col = |name: &str| head.iter().position(|h| h == name).unwrap();
    let recs: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    let keys: Vec<(String, String)> = recs.iter().map(|x| (x[0].to_string(), x[1].to_string())).collect();
    let expect = [("ocfl", "0"), ("ocfl", "1"), ("ocfl", "mean"), ("ocfl", "std"), ("run-bnc", "0"), ("run-bnc", "mean"), ("run-bnc", "std")];
    assert_eq!(keys, expect.map(|(a, b)| (a.to_string(), b.to_string())));

    // oracle: plain arithmetic means straight from the CSV text
    for (rec, dir) in [(&recs[0], ro.join("seed-0")), (&recs[1], ro.join("seed-1")), (&recs[4], rb.join("seed-0"))] {
        let mut rr = csv::Reader::from_path(dir.join("rounds.csv")).unwrap();
        let h = rr.headers().unwrap().clone();
        let rows: Vec<csv::StringRecord> = rr.records().map(|x| x.unwrap()).collect();
        for name in ["ari", "ami", "com", "rand"] {
            let c = h.iter().position(|x| x == name).unwrap();
            let avg = rows.iter().map(|x| x[c].parse::<f64>().unwrap()).sum::<f64>() / rows.len() as f64;
            let got: f64 = rec[col(&format!("avg_{name}"))].parse().unwrap();
            assert!((got - avg).abs() < 1e-12, "{name}: {got} vs {avg}");
        }
        let fired = rows.iter().find(|x| &x[h.iter().position(|x| x == "fired").unwrap()] == "true").map(|x| x[0].to_string());
        let got = &rec[col("fired_round")];
        assert_eq!(fired.map(|t| format!("{t}.0")).unwrap_or_default(), got);
    }
    let m0: f64 = recs[0][col("pf1")].parse().unwrap();
    let m1: f64 = recs[1][col("pf1")].parse().unwrap();
    let mean: f64 = recs[2][col("pf1")].parse().unwrap();
    assert!((mean - (m0 + m1) / 2.0).abs() < 1e-15);
}

#[test]
fn report_requires_run_directories() {
    let o = ocfl(&["report"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("usage"));
    let o = ocfl(&["report", "/nonexistent/run-dir"]);
    assert!(!o.status.success());
}

#[test]
fn log_level_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "rounds = 2\n[data]\nsamples_per_client = 40\norchestrator_per_class = 5\n");
    let out = tmp.path().join("o");
    let args = ["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let quiet = Command::new(env!("CARGO_BIN_EXE_ocfl")).args(args).env("OCFL_LOG", "error").output().unwrap();
    let loud = Command::new(env!("CARGO_BIN_EXE_ocfl")).args(args).env("OCFL_LOG", "debug").output().unwrap();
    assert!(quiet.status.success() && loud.status.success());
    assert!(quiet.stderr.is_empty());
    assert!(String::from_utf8_lossy(&loud.stderr).contains("DEBUG"));
}
