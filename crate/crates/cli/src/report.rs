use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use crate::config::{ExperimentConfig, RESOLVED_CONFIG};
use crate::output::*;

/// One line of `summary.csv`. Aggregate rows carry `mean` or `std` in the
/// seed column; `fired_round` aggregates over the seeds that fired.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub run: String,
    pub seed: String,
    pub fired_round: Option<f64>,
    pub final_k: f64,
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

impl SummaryRow {
    fn from_summary(run: &str, seed: u64, s: &SeedSummary) -> Self {
        Self {
            run: run.to_string(),
            seed: seed.to_string(),
            fired_round: s.fired_round.map(|t| t as f64),
            final_k: s.final_k as f64,
            final_rand: s.final_rand,
            final_ari: s.final_ari,
            final_ami: s.final_ami,
            final_com: s.final_com,
            avg_rand: s.avg_rand,
            avg_ari: s.avg_ari,
            avg_ami: s.avg_ami,
            avg_com: s.avg_com,
            pf1: s.pf1,
            gf1: s.gf1,
            lg: s.lg,
        }
    }

    fn numbers(&self) -> [f64; 12] {
        [
            self.final_k,
            self.final_rand,
            self.final_ari,
            self.final_ami,
            self.final_com,
            self.avg_rand,
            self.avg_ari,
            self.avg_ami,
            self.avg_com,
            self.pf1,
            self.gf1,
            self.lg,
        ]
    }

    fn from_numbers(run: &str, seed: &str, fired_round: Option<f64>, v: [f64; 12]) -> Self {
        let [final_k, final_rand, final_ari, final_ami, final_com, avg_rand, avg_ari, avg_ami, avg_com, pf1, gf1, lg] = v;
        Self {
            run: run.to_string(),
            seed: seed.to_string(),
            fired_round,
            final_k,
            final_rand,
            final_ari,
            final_ami,
            final_com,
            avg_rand,
            avg_ari,
            avg_ami,
            avg_com,
            pf1,
            gf1,
            lg,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for a single value.
fn std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn run_label(dir: &Path) -> String {
    let named = ExperimentConfig::load(&dir.join(RESOLVED_CONFIG)).ok().and_then(|c| c.name);
    named.unwrap_or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string()))
}

/// Per-seed and aggregate rows for every run directory, recomputed from
/// the `rounds.csv` files alone.
pub fn summarize(runs: &[PathBuf]) -> Result<Vec<SummaryRow>> {
    if runs.is_empty() {
        bail!("report needs at least one run directory");
    }
    let mut out = Vec::new();
    for dir in runs {
        if !dir.is_dir() {
            bail!("missing run directory {}", dir.display());
        }
        let seeds = list_seeds(dir)?;
        if seeds.is_empty() {
            bail!("missing run: no seed directories in {}", dir.display());
        }
        let label = run_label(dir);
        let mut rows = Vec::with_capacity(seeds.len());
        for s in seeds {
            let summary = SeedSummary::from_rows(&read_rounds(&seed_dir(dir, s).join(ROUNDS_CSV))?);
            rows.push(SummaryRow::from_summary(&label, s, &summary));
        }
        let fired: Vec<f64> = rows.iter().filter_map(|r| r.fired_round).collect();
        let columns: Vec<Vec<f64>> = (0..12).map(|c| rows.iter().map(|r| r.numbers()[c]).collect()).collect();
        let agg = |f: fn(&[f64]) -> f64| std::array::from_fn(|c| f(&columns[c]));
        let fired_mean = (!fired.is_empty()).then(|| mean(&fired));
        let fired_std = (!fired.is_empty()).then(|| std(&fired));
        out.extend(rows);
        out.push(SummaryRow::from_numbers(&label, "mean", fired_mean, agg(mean)));
        out.push(SummaryRow::from_numbers(&label, "std", fired_std, agg(std)));
    }
    Ok(out)
}

pub fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<Vec<SummaryRow>> {
    let rows = summarize(runs)?;
    write_csv(out, &rows)?;
    Ok(rows)
}
