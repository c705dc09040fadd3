use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use ocfl_core::datagen::{export_manifest, generate, load_manifest, MANIFEST_FILE};
use ocfl_core::federation::Simulation;
use ocfl_core::Exec;

use crate::config::{ExperimentConfig, RESOLVED_CONFIG};
use crate::output::*;
use crate::xai::evaluate_seed;

/// Runs every configured seed. Seeds fail independently; the result holds
/// one entry per seed in configuration order.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, parallel_seeds: bool) -> Result<Vec<(u64, Result<SeedSummary>)>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(RESOLVED_CONFIG), cfg.to_toml())?;
    let fan = if parallel_seeds { Exec::Parallel } else { Exec::Sequential };
    let results = fan.map(cfg.seeds.len(), |i| {
        let s = cfg.seeds[i];
        let r = run_seed(cfg, out, s, Exec::default());
        match &r {
            Ok(sum) => log::info!("seed {s}: fired at {:?}, final ARI {:.3}, PF1 {:.3}", sum.fired_round, sum.final_ari, sum.pf1),
            Err(e) => log::error!("seed {s}: {e:#}"),
        }
        (s, r)
    });
    Ok(results)
}

/// Generates the data, trains, and writes every per-seed artifact.
pub fn run_seed(cfg: &ExperimentConfig, out: &Path, seed: u64, exec: Exec) -> Result<SeedSummary> {
    let start = Instant::now();
    let dir = seed_dir(out, seed);
    let models_dir = dir.join(MODELS_DIR);
    if models_dir.exists() {
        fs::remove_dir_all(&models_dir)?;
    }
    fs::create_dir_all(&models_dir)?;
    let _ = fs::remove_file(dir.join(INDE_JSON));

    // Train on exactly what is persisted, so the data files reproduce the run.
    let fd = generate(&cfg.data, &cfg.features, seed).with_context(|| format!("seed {seed}: generating data"))?;
    export_manifest(&fd, &cfg.data, &cfg.features, seed, &dir.join(DATA_DIR))?;
    let (_, fd) = load_manifest(&dir.join(DATA_DIR))?;

    let mut sim = Simulation::new(&fd, cfg.federation(exec), seed).with_context(|| format!("seed {seed}: setting up"))?;
    let mut records = Vec::with_capacity(cfg.rounds);
    while !sim.is_done() {
        let t = sim.round() + 1;
        let rec = sim.step().with_context(|| format!("seed {seed}, round {t}"))?;
        log::debug!("seed {seed} round {t}: T={:?} fired={} k={}", rec.temperature, rec.fired, rec.partition.k());
        records.push(rec);
    }

    let rows = records.iter().map(|r| RoundRow::from_record(r, &fd.ground_truth)).collect::<Result<Vec<_>>>()?;
    write_csv(&dir.join(ROUNDS_CSV), &rows)?;
    let temps: Vec<TemperatureRow> = rows.iter().map(|r| TemperatureRow { t: r.t, temperature: r.temperature, fired: r.fired }).collect();
    write_csv(&dir.join(TEMPERATURE_CSV), &temps)?;
    let partitions = PartitionFile {
        ground_truth: fd.ground_truth.clone(),
        final_partition: sim.partition().clone(),
        rounds: records.iter().map(|r| RoundPartition { t: r.t, partition: r.partition.clone() }).collect(),
    };
    write_json(&dir.join(PARTITION_JSON), &partitions)?;
    for (j, m) in sim.models().iter().enumerate() {
        m.save_json(&model_file(&dir, j))?;
    }

    if let Some(inde) = &cfg.inde {
        evaluate_seed(&dir, seed, inde, exec)?;
    }

    let summary = SeedSummary::from_rows(&rows);
    let mut manifest = RunManifest {
        config_sha256: cfg.hash(),
        seed,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs: BTreeMap::new(),
        summary: summary.clone(),
    };
    let mut files = vec![ROUNDS_CSV.to_string(), TEMPERATURE_CSV.to_string(), PARTITION_JSON.to_string(), format!("{DATA_DIR}/{MANIFEST_FILE}")];
    files.extend((0..sim.models().len()).map(|j| format!("{MODELS_DIR}/cluster-{j}.json")));
    if cfg.inde.is_some() {
        files.push(INDE_JSON.to_string());
    }
    for f in &files {
        manifest.record_output(&dir, f)?;
    }
    write_json(&dir.join(RUN_MANIFEST), &manifest)?;
    Ok(summary)
}
