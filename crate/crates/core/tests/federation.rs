use ocfl_core::clustering::{Algorithm, Partition};
use ocfl_core::datagen::{generate, FeatureSpace, FederatedDataset, SplitPlan};
use ocfl_core::federation::*;
use ocfl_core::model::client_local_train;
use ocfl_core::{seed, Exec};

fn small_plan() -> SplitPlan {
    SplitPlan {
        samples_per_client: 60,
        orchestrator_per_class: 20,
        ..Default::default()
    }
}

fn small_cfg(rounds: usize) -> FederationConfig {
    FederationConfig {
        rounds,
        ..Default::default()
    }
}

fn three_dgp(seed_value: u64) -> FederatedDataset {
    generate(&small_plan(), &FeatureSpace::default(), seed_value).unwrap()
}

/// Two clusters with one class each and identical feature distributions:
/// the only signal is the label, so the two groups pull the output layer in
/// opposite directions.
fn antipodal(seed_value: u64) -> FederatedDataset {
    let plan = SplitPlan {
        n_clients: 8,
        cluster_fractions: vec![0.5, 0.5],
        classes_per_cluster: 1,
        samples_per_client: 40,
        orchestrator_per_class: 20,
        share_rate: 0.0,
        ..Default::default()
    };
    let space = FeatureSpace {
        global_classes: 2,
        feature_dim: 4,
        mean_spacing: 0.0,
        ..Default::default()
    };
    generate(&plan, &space, seed_value).unwrap()
}

fn first_non_decrease(temps: &[Option<f64>]) -> Option<usize> {
    let mut prev = f64::INFINITY;
    for (i, t) in temps.iter().enumerate() {
        let t = (*t)?;
        if t >= prev {
            return Some(i + 1);
        }
        prev = t;
    }
    None
}

#[test]
fn ocfl_one_shot_contract() {
    for s in 0..3 {
        let fd = three_dgp(s);
        let out = run_ocfl(&fd, &small_cfg(8), s).unwrap();
        assert_eq!(out.records.len(), 8);
        let fired: Vec<usize> = out.records.iter().filter(|r| r.fired).map(|r| r.t).collect();
        assert!(fired.len() <= 1);
        let temps: Vec<Option<f64>> = out.records.iter().map(|r| r.temperature).collect();
        assert_eq!(fired.first().copied(), first_non_decrease(&temps));
        assert!(out.records[0].temperature.is_some() && !out.records[0].fired);
        let mut changes = 0;
        let mut prev = Partition::single(fd.n_clients());
        for r in &out.records {
            if let Some(t) = r.temperature {
                assert!((0.0..=1.0).contains(&t));
            }
            if let Some(&f) = fired.first() {
                assert_eq!(r.temperature.is_some(), r.t <= f);
            }
            if r.partition != prev {
                changes += 1;
                prev = r.partition.clone();
            }
        }
        assert!(changes <= 1);
        assert_eq!(out.partition, fd.ground_truth, "seed {s}");
    }
}

#[test]
fn single_round_never_fires() {
    let fd = three_dgp(1);
    let out = run_ocfl(&fd, &small_cfg(1), 1).unwrap();
    assert!(!out.records[0].fired);
    assert_eq!(out.partition.k(), 1);
}

#[test]
fn homogeneous_population_stays_whole() {
    // With a few hundred samples per client the clients' empirical class
    // proportions differ enough to give the divergence matrix real structure;
    // at 1000 samples only optimisation noise separates them.
    let plan = SplitPlan {
        cluster_fractions: vec![1.0],
        samples_per_client: 1000,
        ..small_plan()
    };
    for s in 0..5 {
        let fd = generate(&plan, &FeatureSpace::default(), s).unwrap();
        let out = run_ocfl(&fd, &small_cfg(4), s).unwrap();
        assert_eq!(out.partition.k(), 1, "seed {s}");
    }
}

#[test]
fn bnc_matches_ocfl_with_trigger_off() {
    let fd = three_dgp(2);
    let bnc = run_bnc(&fd, &small_cfg(5), 2).unwrap();
    let mut cfg = small_cfg(5);
    cfg.trigger.enabled = false;
    let off = run_ocfl(&fd, &cfg, 2).unwrap();
    assert_eq!(bnc.models, off.models);
    for (a, b) in bnc.records.iter().zip(&off.records) {
        assert_eq!(a.partition.k(), 1);
        assert_eq!(a.partition, b.partition);
        assert_eq!(a.client_f1, b.client_f1);
        assert!(!b.fired && b.temperature.is_some());
    }
}

#[test]
fn bnc_round_is_fedavg() {
    let fd = three_dgp(3);
    let cfg = small_cfg(1);
    let sim = Simulation::new(&fd, cfg.clone(), 3).unwrap();
    let start = sim.models()[0].clone();
    let out = run_bnc(&fd, &cfg, 3).unwrap();
    // oracle: average the clients' end-of-round parameters
    let n = fd.n_clients();
    let mut avg = vec![0.0; start.param_count()];
    for i in 0..n {
        let mut rng = seed::rng(3, &[seed::STREAM_CLIENT, 1, i as u64]);
        let d = client_local_train(i, &start, &fd.clients[i].train, &cfg.client_opt, &mut rng).unwrap();
        for (a, (p, dd)) in avg.iter_mut().zip(start.params().iter().zip(d.delta.as_slice())) {
            *a += (p + dd) / n as f64;
        }
    }
    for (x, y) in out.models[0].params().iter().zip(&avg) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn clusters_are_isolated_after_firing() {
    let fd = three_dgp(4);
    let mut sim = Simulation::new(&fd, small_cfg(8), 4).unwrap();
    while sim.partition().k() == 1 {
        sim.step().unwrap();
    }
    assert_eq!(sim.partition(), &fd.ground_truth);
    // scramble the data of every client outside cluster 0
    let mut other = fd.clone();
    for (i, c) in other.clients.iter_mut().enumerate() {
        if fd.ground_truth.cluster_of(i) != 0 {
            c.train.features.mapv_inplace(|v| -2.0 * v + 1.0);
        }
    }
    let mut twin = sim.rebind(&other);
    while !sim.is_done() {
        sim.step().unwrap();
        twin.step().unwrap();
    }
    assert_eq!(sim.models()[0].params(), twin.models()[0].params());
    assert_ne!(sim.models()[1].params(), twin.models()[1].params());
}

#[test]
fn deterministic_and_schedule_independent() {
    let fd = three_dgp(5);
    let mut seq = small_cfg(6);
    seq.exec = Exec::Sequential;
    let mut par = small_cfg(6);
    par.exec = Exec::Parallel;
    let a = run_ocfl(&fd, &seq, 5).unwrap();
    let b = run_ocfl(&fd, &par, 5).unwrap();
    let c = run_ocfl(&fd, &par, 5).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(b.records, c.records);
    assert_eq!(a.models, c.models);
}

#[test]
fn zero_learning_rate_never_fires() {
    let fd = three_dgp(6);
    let mut cfg = small_cfg(3);
    cfg.client_opt.learning_rate = 0.0;
    let out = run_ocfl(&fd, &cfg, 6).unwrap();
    assert!(out.records.iter().all(|r| r.temperature.is_none() && !r.fired));
}

#[test]
fn other_backends_recover_ground_truth() {
    let fd = three_dgp(7);
    for algo in [Algorithm::KMeans, Algorithm::MeanShift, Algorithm::AffinityPropagation] {
        let mut cfg = small_cfg(6);
        cfg.clustering.algorithm = algo;
        cfg.clustering.k_hint = Some(3);
        let out = run_ocfl(&fd, &cfg, 7).unwrap();
        assert_eq!(out.partition, fd.ground_truth, "{algo:?}");
    }
}

#[test]
fn scl_epsilon1_zero_never_splits() {
    let fd = three_dgp(8);
    let mut cfg = small_cfg(6);
    cfg.baseline.scl = SclConfig { epsilon1: 0.0, epsilon2: 1.0, cooldown: 1 };
    let out = run_scl(&fd, &cfg, 8).unwrap();
    assert!(out.records.iter().all(|r| r.partition.k() == 1 && !r.fired));
}

#[test]
fn scl_always_true_condition_splits_immediately() {
    let fd = three_dgp(9);
    let mut cfg = small_cfg(2);
    cfg.baseline.scl = SclConfig { epsilon1: 1e9, epsilon2: 0.0, cooldown: 1 };
    let out = run_scl(&fd, &cfg, 9).unwrap();
    assert!(out.records[0].fired);
    assert!(out.records[0].partition.k() >= 2);
}

#[test]
fn scl_recovers_antipodal_groups() {
    let fd = antipodal(10);
    let mut cfg = small_cfg(4);
    cfg.baseline.scl = SclConfig { epsilon1: 1e9, epsilon2: 0.0, cooldown: 1 };
    let out = run_scl(&fd, &cfg, 10).unwrap();
    assert_eq!(out.records[0].partition, fd.ground_truth);
}

#[test]
fn bcl_threshold_two_is_one_cluster() {
    let fd = three_dgp(11);
    let mut cfg = small_cfg(4);
    cfg.baseline.bcl = BclConfig { clustering_round: 2, distance_threshold: 2.0 };
    let out = run_bcl(&fd, &cfg, 11).unwrap();
    assert!(out.records[1].fired);
    assert!(out.records.iter().all(|r| r.partition.k() == 1));
}

#[test]
fn bcl_clusters_once_at_its_round() {
    let fd = antipodal(12);
    let mut cfg = small_cfg(6);
    cfg.model.hidden = vec![];
    cfg.client_opt.learning_rate = 1.0;
    cfg.baseline.bcl = BclConfig { clustering_round: 3, distance_threshold: 0.2 };
    let out = run_bcl(&fd, &cfg, 12).unwrap();
    for r in &out.records {
        assert_eq!(r.fired, r.t == 3);
        assert_eq!(r.partition.k() > 1, r.t >= 3);
    }
    assert_eq!(out.partition, fd.ground_truth);
}

#[test]
fn scores_follow_definitions() {
    let fd = three_dgp(13);
    let out = run_ocfl(&fd, &small_cfg(4), 13).unwrap();
    let r = out.records.last().unwrap();
    let s = r.scores(&fd.ground_truth).unwrap();
    assert_eq!(s.ari, 1.0);
    assert_eq!(s.rand, 1.0);
    let n = fd.n_clients() as f64;
    let pf1: f64 = r.client_f1.iter().sum::<f64>() / n;
    assert!((s.pf1 - pf1).abs() < 1e-15);
    let lg: f64 = (0..fd.n_clients())
        .map(|i| (r.client_f1[i] - r.cluster_gf1[r.partition.cluster_of(i)]).abs())
        .sum::<f64>()
        / n;
    assert!((s.lg - lg).abs() < 1e-15);
}
