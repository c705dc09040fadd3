//! Round-synchronous federated training with one-shot clustering (OCFL) and
//! the BNC, SCL and BCL baselines.
//!
//! Every round each client trains from its cluster's model and reports a
//! delta. The strategy may then re-partition the population, and each
//! cluster closes the round with FedOpt over its own members. Client
//! training fans out under the configured [`Exec`] policy; everything after
//! the join is sequential and ordered by client id.

use serde::{Deserialize, Serialize};

use crate::clustering::{cluster, complete_linkage_bipartition, agglomerative_average_linkage, ClusteringConfig, Partition};
use crate::datagen::FederatedDataset;
use crate::metrics::{adjusted_mutual_information, adjusted_rand_index, completeness, macro_f1, rand_index};
use crate::model::{client_local_train, fedopt_aggregate, Activation, Mlp, ModelDelta, OptimizerConfig, ServerOptConfig};
use crate::numkit::{divergence_matrix, temperature, LambdaMode, ParameterVector, TemperatureState};
use crate::{seed, Error, Exec, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Bnc,
    #[default]
    Ocfl,
    Scl,
    Bcl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SclConfig {
    /// Split when the norm of the cluster's mean delta falls below this...
    pub epsilon1: f64,
    /// ...while some member's delta norm still exceeds this.
    pub epsilon2: f64,
    /// Rounds a cluster must exist before it may split.
    pub cooldown: usize,
}

impl Default for SclConfig {
    fn default() -> Self {
        Self {
            epsilon1: 0.35,
            epsilon2: 1.0,
            cooldown: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BclConfig {
    pub clustering_round: usize,
    pub distance_threshold: f64,
}

impl Default for BclConfig {
    fn default() -> Self {
        Self {
            clustering_round: 21,
            distance_threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub strategy: Strategy,
    pub scl: SclConfig,
    pub bcl: BclConfig,
}

impl BaselineConfig {
    pub fn validate(&self, rounds: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match self.strategy {
            Strategy::Scl => {
                if !(self.scl.epsilon1 < self.scl.epsilon2) && !(self.scl.epsilon2 == 0.0) {
                    return bad(format!(
                        "scl needs epsilon1 < epsilon2, got {} and {}",
                        self.scl.epsilon1, self.scl.epsilon2
                    ));
                }
                if self.scl.cooldown == 0 {
                    return bad("scl cooldown must be >= 1".into());
                }
            }
            Strategy::Bcl => {
                if self.bcl.clustering_round == 0 || self.bcl.clustering_round > rounds {
                    return bad(format!(
                        "bcl clustering_round {} outside 1..={rounds}",
                        self.bcl.clustering_round
                    ));
                }
                if !(self.bcl.distance_threshold > 0.0) {
                    return bad("bcl distance_threshold must be > 0".into());
                }
            }
            Strategy::Bnc | Strategy::Ocfl => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    pub p: f64,
    pub lambda_mode: LambdaMode,
    /// Moving-average window; 1 compares consecutive temperatures.
    pub window: usize,
    /// When false the temperature is still recorded but never fires.
    pub enabled: bool,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            lambda_mode: LambdaMode::MaximalDivergence,
            window: 1,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn layer_dims(&self, input: usize, classes: usize) -> Vec<usize> {
        std::iter::once(input)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub rounds: usize,
    pub model: ModelConfig,
    pub client_opt: OptimizerConfig,
    pub server_opt: ServerOptConfig,
    pub baseline: BaselineConfig,
    pub clustering: ClusteringConfig,
    pub trigger: TriggerConfig,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            model: ModelConfig::default(),
            client_opt: OptimizerConfig::default(),
            server_opt: ServerOptConfig::default(),
            baseline: BaselineConfig::default(),
            clustering: ClusteringConfig::default(),
            trigger: TriggerConfig::default(),
            exec: Exec::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be >= 1".into()));
        }
        self.client_opt.validate()?;
        self.baseline.validate(self.rounds)?;
        if self.baseline.strategy == Strategy::Ocfl {
            self.clustering.validate()?;
            TemperatureState::new(self.trigger.p, self.trigger.lambda_mode, self.trigger.window)?;
        }
        Ok(())
    }
}

/// Everything the orchestrator knows at the end of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub t: usize,
    /// Absent once the one-shot trigger has fired, and for strategies that
    /// do not monitor it.
    pub temperature: Option<f64>,
    /// A clustering event happened this round: the one-shot trigger fired,
    /// the BCL round came up, or SCL split a cluster.
    pub fired: bool,
    pub partition: Partition,
    /// Macro-F1 of each client's cluster model on the client's local test set.
    pub client_f1: Vec<f64>,
    /// Macro-F1 of each cluster model on the orchestrator's test set.
    pub cluster_gf1: Vec<f64>,
    /// Mean final-epoch training loss of each cluster's members.
    pub cluster_train_loss: Vec<f64>,
}

/// Headline scores of one round against the ground-truth partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundScores {
    pub rand: f64,
    pub ari: f64,
    pub ami: f64,
    pub com: f64,
    /// Mean over clients.
    pub pf1: f64,
    /// Mean over clients of their cluster's orchestrator score.
    pub gf1: f64,
    /// Mean over clients of `|PF1_i - GF1_cluster(i)|`.
    pub lg: f64,
    /// Client-weighted mean of the cluster losses.
    pub train_loss: f64,
}

impl RoundRecord {
    pub fn scores(&self, ground_truth: &Partition) -> Result<RoundScores> {
        let n = self.partition.len() as f64;
        let labels = self.partition.labels();
        let gf1_of = |i: usize| self.cluster_gf1[labels[i]];
        Ok(RoundScores {
            rand: rand_index(ground_truth, &self.partition)?,
            ari: adjusted_rand_index(ground_truth, &self.partition)?,
            ami: adjusted_mutual_information(ground_truth, &self.partition)?,
            com: completeness(ground_truth, &self.partition)?,
            pf1: self.client_f1.iter().sum::<f64>() / n,
            gf1: (0..labels.len()).map(gf1_of).sum::<f64>() / n,
            lg: self
                .client_f1
                .iter()
                .enumerate()
                .map(|(i, f)| (f - gf1_of(i)).abs())
                .sum::<f64>()
                / n,
            train_loss: labels.iter().map(|&c| self.cluster_train_loss[c]).sum::<f64>() / n,
        })
    }
}

/// A federated run that can be advanced one round at a time.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    fd: &'a FederatedDataset,
    cfg: FederationConfig,
    seed: u64,
    t: usize,
    partition: Partition,
    models: Vec<Mlp>,
    trigger: TemperatureState,
    /// Round each SCL cluster came into existence.
    born: Vec<usize>,
    /// BCL and OCFL cluster at most once.
    clustered: bool,
}

impl<'a> Simulation<'a> {
    pub fn new(fd: &'a FederatedDataset, cfg: FederationConfig, seed_value: u64) -> Result<Self> {
        cfg.validate()?;
        if fd.n_clients() < 2 {
            return Err(Error::InvalidConfig("federation needs >= 2 clients".into()));
        }
        if let Some(i) = fd.clients.iter().position(|c| c.train.is_empty() || c.test.is_empty()) {
            return Err(Error::InvalidConfig(format!("client {i} has an empty train or test set")));
        }
        let dims = cfg.model.layer_dims(fd.feature_dim(), fd.classes);
        let mut rng = seed::rng(seed_value, &[seed::STREAM_INIT]);
        let init = Mlp::init(&dims, cfg.model.activation, &mut rng)?;
        let trigger = TemperatureState::new(cfg.trigger.p, cfg.trigger.lambda_mode, cfg.trigger.window)?;
        Ok(Self {
            fd,
            partition: Partition::single(fd.n_clients()),
            models: vec![init],
            trigger,
            born: vec![0],
            clustered: false,
            t: 0,
            cfg,
            seed: seed_value,
        })
    }

    /// Same state, different data. Used to check that clusters do not
    /// influence each other once separated.
    pub fn rebind<'b>(&self, fd: &'b FederatedDataset) -> Simulation<'b> {
        Simulation {
            fd,
            cfg: self.cfg.clone(),
            seed: self.seed,
            t: self.t,
            partition: self.partition.clone(),
            models: self.models.clone(),
            trigger: self.trigger.clone(),
            born: self.born.clone(),
            clustered: self.clustered,
        }
    }

    pub fn round(&self) -> usize {
        self.t
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn models(&self) -> &[Mlp] {
        &self.models
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.cfg.rounds
    }

    fn train_clients(&self) -> Result<Vec<ModelDelta>> {
        let labels = self.partition.labels();
        let t = self.t as u64;
        self.cfg.exec.try_map(self.fd.n_clients(), |i| {
            let mut rng = seed::rng(self.seed, &[seed::STREAM_CLIENT, t, i as u64]);
            client_local_train(i, &self.models[labels[i]], &self.fd.clients[i].train, &self.cfg.client_opt, &mut rng)
        })
    }

    /// Advances one round and returns its record.
    pub fn step(&mut self) -> Result<RoundRecord> {
        if self.is_done() {
            return Err(Error::InvalidConfig(format!("all {} rounds already ran", self.cfg.rounds)));
        }
        self.t += 1;
        let deltas = self.train_clients()?;
        let (temperature, fired, next) = match self.cfg.baseline.strategy {
            Strategy::Bnc => (None, false, None),
            Strategy::Ocfl => self.ocfl_round(&deltas)?,
            Strategy::Scl => {
                let next = self.scl_round(&deltas)?;
                (None, next.is_some(), next)
            }
            Strategy::Bcl => {
                let fired = !self.clustered && self.t == self.cfg.baseline.bcl.clustering_round;
                (None, fired, self.bcl_round(&deltas)?)
            }
        };

        // the old cluster model is the starting point of every cluster carved out of it
        let old_labels = self.partition.labels().to_vec();
        if let Some(p) = next {
            self.partition = p;
        }
        let clusters = self.partition.clusters();
        let mut models = Vec::with_capacity(clusters.len());
        let mut losses = Vec::with_capacity(clusters.len());
        for members in &clusters {
            let base = &self.models[old_labels[members[0]]];
            let member_deltas: Vec<ModelDelta> = members.iter().map(|&i| deltas[i].clone()).collect();
            let params = fedopt_aggregate(&base.flatten(), &member_deltas, &self.cfg.server_opt)?;
            models.push(base.unflatten(&params)?);
            losses.push(member_deltas.iter().map(|d| d.train_loss).sum::<f64>() / members.len() as f64);
        }
        self.models = models;

        let (client_f1, cluster_gf1) = self.evaluate()?;
        Ok(RoundRecord {
            t: self.t,
            temperature,
            fired,
            partition: self.partition.clone(),
            client_f1,
            cluster_gf1,
            cluster_train_loss: losses,
        })
    }

    fn evaluate(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let labels = self.partition.labels();
        let k = self.fd.classes;
        let client_f1 = self.cfg.exec.try_map(self.fd.n_clients(), |i| {
            let test = &self.fd.clients[i].test;
            macro_f1(&self.models[labels[i]].predict(test.features.view())?, &test.labels, k)
        })?;
        let orch = &self.fd.orchestrator_test;
        let cluster_gf1 = self.cfg.exec.try_map(self.models.len(), |c| {
            macro_f1(&self.models[c].predict(orch.features.view())?, &orch.labels, k)
        })?;
        Ok((client_f1, cluster_gf1))
    }

    fn ocfl_round(&mut self, deltas: &[ModelDelta]) -> Result<(Option<f64>, bool, Option<Partition>)> {
        if self.clustered {
            return Ok((None, false, None));
        }
        let active: Vec<usize> = (0..deltas.len()).filter(|&i| !deltas[i].delta.is_zero()).collect();
        if active.len() < 2 {
            log::warn!("round {}: fewer than two non-zero deltas, temperature skipped", self.t);
            return Ok((None, false, None));
        }
        let vs: Vec<ParameterVector> = active.iter().map(|&i| deltas[i].delta.clone()).collect();
        let gamma = divergence_matrix(&vs, self.cfg.exec)?;
        if !self.cfg.trigger.enabled {
            let temp = temperature(&gamma, self.cfg.trigger.p, self.cfg.trigger.lambda_mode)?;
            return Ok((Some(temp), false, None));
        }
        let fire = self.trigger.update_and_test_trigger(&gamma)?;
        let temp = Some(self.trigger.t_curr);
        if !fire {
            return Ok((temp, false, None));
        }
        self.clustered = true;
        let outcome = cluster(&gamma, &self.cfg.clustering, seed::derive(self.seed, &[self.t as u64]))?;
        if !outcome.converged {
            log::warn!("round {}: clustering did not converge, keeping the current partition", self.t);
            return Ok((temp, true, None));
        }
        if !outcome.attached.is_empty() {
            log::info!("round {}: attached noise clients {:?}", self.t, outcome.attached);
        }
        log::info!("round {}: trigger fired, {} clusters", self.t, outcome.partition.k());
        let full = expand_partition(&outcome.partition, &active, deltas)?;
        Ok((temp, true, Some(full)))
    }

    fn scl_round(&mut self, deltas: &[ModelDelta]) -> Result<Option<Partition>> {
        let scl = &self.cfg.baseline.scl;
        let clusters = self.partition.clusters();
        let mut labels = self.partition.labels().to_vec();
        let mut next_label = clusters.len();
        let mut born = self.born.clone();
        let mut split_any = false;
        for (c, members) in clusters.iter().enumerate() {
            if members.len() <= 2 || self.t < self.born[c] + scl.cooldown {
                continue;
            }
            let dim = deltas[members[0]].delta.dim();
            let mut mean = ParameterVector::zeros(dim);
            for &i in members {
                mean.add_scaled(1.0 / members.len() as f64, &deltas[i].delta)?;
            }
            let max_norm = members.iter().map(|&i| deltas[i].delta.norm()).fold(0.0, f64::max);
            if !(mean.norm() < scl.epsilon1 && max_norm > scl.epsilon2) {
                continue;
            }
            let active: Vec<usize> = members.iter().copied().filter(|&i| !deltas[i].delta.is_zero()).collect();
            if active.len() < 2 {
                continue;
            }
            let vs: Vec<ParameterVector> = active.iter().map(|&i| deltas[i].delta.clone()).collect();
            let bi = complete_linkage_bipartition(&divergence_matrix(&vs, Exec::Sequential)?);
            if bi.degenerate {
                log::warn!("round {}: cluster {c} has no structure to split on", self.t);
                continue;
            }
            let sub_deltas: Vec<ModelDelta> = members.iter().map(|&i| deltas[i].clone()).collect();
            let local_active: Vec<usize> = active
                .iter()
                .map(|a| members.iter().position(|m| m == a).unwrap())
                .collect();
            let side = expand_partition(&bi.partition, &local_active, &sub_deltas)?;
            for (pos, &i) in members.iter().enumerate() {
                if side.labels()[pos] == 1 {
                    labels[i] = next_label;
                }
            }
            born[c] = self.t;
            born.push(self.t);
            next_label += 1;
            split_any = true;
            log::info!("round {}: split cluster {c}", self.t);
        }
        if !split_any {
            return Ok(None);
        }
        let p = Partition::from_labels(&labels);
        self.born = p.clusters().iter().map(|m| born[labels[m[0]]]).collect();
        Ok(Some(p))
    }

    fn bcl_round(&mut self, deltas: &[ModelDelta]) -> Result<Option<Partition>> {
        let bcl = &self.cfg.baseline.bcl;
        if self.clustered || self.t != bcl.clustering_round {
            return Ok(None);
        }
        self.clustered = true;
        let labels = self.partition.labels();
        let weights: Vec<ParameterVector> = deltas
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut w = self.models[labels[i]].flatten();
                w.add_scaled(1.0, &d.delta)?;
                Ok(w)
            })
            .collect::<Result<_>>()?;
        let gamma = divergence_matrix(&weights, self.cfg.exec)?;
        let p = agglomerative_average_linkage(&gamma, bcl.distance_threshold)?;
        log::info!("round {}: bcl formed {} clusters", self.t, p.k());
        Ok(Some(p))
    }

    /// Runs all remaining rounds.
    pub fn run(mut self) -> Result<RunOutput> {
        let mut records = Vec::with_capacity(self.cfg.rounds);
        while !self.is_done() {
            records.push(self.step()?);
        }
        Ok(RunOutput {
            records,
            partition: self.partition,
            models: self.models,
        })
    }
}

/// Lifts a partition of the `active` clients to all clients. Each inactive
/// (zero-delta) client joins the cluster whose mean delta is nearest.
fn expand_partition(sub: &Partition, active: &[usize], deltas: &[ModelDelta]) -> Result<Partition> {
    let n = deltas.len();
    if active.len() == n {
        return Ok(sub.clone());
    }
    let dim = deltas[0].delta.dim();
    let mut means = vec![ParameterVector::zeros(dim); sub.k()];
    for (members, mean) in sub.clusters().iter().zip(means.iter_mut()) {
        for &m in members {
            mean.add_scaled(1.0 / members.len() as f64, &deltas[active[m]].delta)?;
        }
    }
    let mut labels = vec![usize::MAX; n];
    for (pos, &i) in active.iter().enumerate() {
        labels[i] = sub.labels()[pos];
    }
    for i in 0..n {
        if labels[i] == usize::MAX {
            let mut best = (0, f64::INFINITY);
            for (c, mean) in means.iter().enumerate() {
                let d = deltas[i].delta.sub(mean)?.norm();
                if d < best.1 {
                    best = (c, d);
                }
            }
            labels[i] = best.0;
        }
    }
    Ok(Partition::from_labels(&labels))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub partition: Partition,
    /// Final model of each cluster, indexed like `partition`.
    pub models: Vec<Mlp>,
}

impl RunOutput {
    /// Last round with a clustering event.
    pub fn last_clustering_round(&self) -> Option<usize> {
        self.records.iter().filter(|r| r.fired).map(|r| r.t).next_back()
    }
}

fn with_strategy(mut cfg: FederationConfig, strategy: Strategy) -> FederationConfig {
    cfg.baseline.strategy = strategy;
    cfg
}

pub fn run_ocfl(fd: &FederatedDataset, cfg: &FederationConfig, seed_value: u64) -> Result<RunOutput> {
    Simulation::new(fd, with_strategy(cfg.clone(), Strategy::Ocfl), seed_value)?.run()
}

pub fn run_bnc(fd: &FederatedDataset, cfg: &FederationConfig, seed_value: u64) -> Result<RunOutput> {
    Simulation::new(fd, with_strategy(cfg.clone(), Strategy::Bnc), seed_value)?.run()
}

pub fn run_scl(fd: &FederatedDataset, cfg: &FederationConfig, seed_value: u64) -> Result<RunOutput> {
    Simulation::new(fd, with_strategy(cfg.clone(), Strategy::Scl), seed_value)?.run()
}

pub fn run_bcl(fd: &FederatedDataset, cfg: &FederationConfig, seed_value: u64) -> Result<RunOutput> {
    Simulation::new(fd, with_strategy(cfg.clone(), Strategy::Bcl), seed_value)?.run()
}

/// Dispatches on `cfg.baseline.strategy`.
pub fn run(fd: &FederatedDataset, cfg: &FederationConfig, seed_value: u64) -> Result<RunOutput> {
    Simulation::new(fd, cfg.clone(), seed_value)?.run()
}
