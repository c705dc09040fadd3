//! On-disk schemas of a run directory.
//!
//! ```text
//! <run>/config.toml                 resolved experiment configuration
//! <run>/seed-<s>/rounds.csv         one row per round
//! <run>/seed-<s>/temperature.csv    t, temperature, fired
//! <run>/seed-<s>/partition.json     ground truth, final and per-round partitions
//! <run>/seed-<s>/models/cluster-<j>.json
//! <run>/seed-<s>/data/              dataset manifest and CSV files
//! <run>/seed-<s>/inde.json          insertion/deletion results (optional)
//! <run>/seed-<s>/manifest.json      config hash, output hashes, timing, summary
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ocfl_core::clustering::Partition;
use ocfl_core::federation::RoundRecord;
use ocfl_core::metrics::ScoreSeries;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const TEMPERATURE_CSV: &str = "temperature.csv";
pub const PARTITION_JSON: &str = "partition.json";
pub const INDE_JSON: &str = "inde.json";
pub const RUN_MANIFEST: &str = "manifest.json";
pub const MODELS_DIR: &str = "models";
pub const DATA_DIR: &str = "data";

pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed-{seed}"))
}

pub fn model_file(seed_dir: &Path, cluster: usize) -> PathBuf {
    seed_dir.join(MODELS_DIR).join(format!("cluster-{cluster}.json"))
}

/// Seeds with a `seed-<s>` directory under `run`, ascending.
pub fn list_seeds(run: &Path) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for entry in fs::read_dir(run).with_context(|| format!("reading run directory {}", run.display()))? {
        let entry = entry?;
        if let Some(s) = entry.file_name().to_str().and_then(|n| n.strip_prefix("seed-")).and_then(|s| s.parse().ok()) {
            if entry.path().is_dir() {
                seeds.push(s);
            }
        }
    }
    seeds.sort_unstable();
    Ok(seeds)
}

/// One line of `rounds.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub t: usize,
    /// Empty when the temperature was not computed this round.
    pub temperature: Option<f64>,
    pub fired: bool,
    pub k: usize,
    pub rand: f64,
    pub ari: f64,
    pub ami: f64,
    pub com: f64,
    pub pf1: f64,
    pub gf1: f64,
    pub lg: f64,
    pub train_loss: f64,
}

impl RoundRow {
    pub fn from_record(r: &RoundRecord, ground_truth: &Partition) -> Result<Self> {
        let s = r.scores(ground_truth)?;
        Ok(Self {
            t: r.t,
            temperature: r.temperature,
            fired: r.fired,
            k: r.partition.k(),
            rand: s.rand,
            ari: s.ari,
            ami: s.ami,
            com: s.com,
            pf1: s.pf1,
            gf1: s.gf1,
            lg: s.lg,
            train_loss: s.train_loss,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRow {
    pub t: usize,
    pub temperature: Option<f64>,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPartition {
    pub t: usize,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub ground_truth: Partition,
    #[serde(rename = "final")]
    pub final_partition: Partition,
    pub rounds: Vec<RoundPartition>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rounds(path: &Path) -> Result<Vec<RoundRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<RoundRow>, _>>().with_context(|| format!("parsing {}", path.display()))?;
    if rows.is_empty() {
        bail!("{} has no rounds", path.display());
    }
    Ok(rows)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path).with_context(|| format!("hashing {}", path.display()))?)))
}

/// Headline numbers of one seed, computed from `rounds.csv` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    /// First round with a clustering event.
    pub fired_round: Option<usize>,
    pub final_k: usize,
    pub final_rand: f64,
    pub final_ari: f64,
    pub final_ami: f64,
    pub final_com: f64,
    pub avg_rand: f64,
    pub avg_ari: f64,
    pub avg_ami: f64,
    pub avg_com: f64,
    pub pf1: f64,
    pub gf1: f64,
    pub lg: f64,
}

impl SeedSummary {
    pub fn from_rows(rows: &[RoundRow]) -> Self {
        let avg = |name: &str, f: fn(&RoundRow) -> f64| {
            let mut s = ScoreSeries::new(name);
            rows.iter().for_each(|r| s.push(f(r)));
            s.time_average()
        };
        let last = rows.last().expect("at least one round");
        Self {
            fired_round: rows.iter().find(|r| r.fired).map(|r| r.t),
            final_k: last.k,
            final_rand: last.rand,
            final_ari: last.ari,
            final_ami: last.ami,
            final_com: last.com,
            avg_rand: avg("rand", |r| r.rand),
            avg_ari: avg("ari", |r| r.ari),
            avg_ami: avg("ami", |r| r.ami),
            avg_com: avg("com", |r| r.com),
            pf1: last.pf1,
            gf1: last.gf1,
            lg: last.lg,
        }
    }
}

/// `manifest.json` of a seed directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    /// SHA-256 of every output file, keyed by path relative to the seed directory.
    pub outputs: BTreeMap<String, String>,
    pub summary: SeedSummary,
}

impl RunManifest {
    pub fn record_output(&mut self, seed_dir: &Path, rel: &str) -> Result<()> {
        self.outputs.insert(rel.to_string(), sha256_file(&seed_dir.join(rel))?);
        Ok(())
    }
}
