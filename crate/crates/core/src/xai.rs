//! Gradient-times-input saliency and the insertion/deletion evaluation.
//!
//! For each cluster model, `run_inde` draws an evaluation sample, computes
//! the insertion and deletion probability curves of every sample, averages
//! the curves point-wise and integrates the averaged curve once.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::datagen::FederatedDataset;
use crate::dataset::Dataset;
use crate::model::Mlp;
use crate::{seed, Error, Exec, Result};

/// Per-feature importance, aligned with the input feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub scores: Vec<f64>,
}

impl SaliencyMap {
    /// Feature indices by descending score; equal scores keep index order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// `|d logit_y / d x_i * x_i|` for every feature.
pub fn saliency(m: &Mlp, x: ArrayView1<f64>, y: usize) -> Result<SaliencyMap> {
    let g = m.input_gradient(x, y)?;
    let scores = g.iter().zip(x.iter()).map(|(g, x)| (g * x).abs()).collect();
    Ok(SaliencyMap { scores })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndeMode {
    /// Pooled local test sets of the cluster's own clients.
    #[default]
    InDistribution,
    /// Pooled local test sets of every client outside the cluster.
    OutOfDistribution,
    Orchestrator,
}

impl IndeMode {
    pub const ALL: [IndeMode; 3] = [IndeMode::InDistribution, IndeMode::OutOfDistribution, IndeMode::Orchestrator];

    fn stream(self) -> u64 {
        self as u64
    }
}

/// Order in which features are deleted or inserted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureOrder {
    #[default]
    Saliency,
    /// A seeded uniform permutation per sample; the reference ordering.
    Random,
}

/// Which class the explanation targets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetClass {
    /// The model's arg-max class on the unmasked input.
    #[default]
    Predicted,
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndeConfig {
    pub mode: IndeMode,
    /// Values <= 1 are a fraction of the evaluation set, larger values an
    /// absolute count (clamped to what is available).
    pub sample_size: f64,
    /// Features toggled per step.
    pub step: usize,
    pub baseline_value: f64,
    pub order: FeatureOrder,
    pub target: TargetClass,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for IndeConfig {
    fn default() -> Self {
        Self {
            mode: IndeMode::InDistribution,
            sample_size: 64.0,
            step: 1,
            baseline_value: 0.0,
            order: FeatureOrder::Saliency,
            target: TargetClass::Predicted,
            exec: Exec::default(),
        }
    }
}

impl IndeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_size > 0.0) || (self.sample_size > 1.0 && self.sample_size.fract() != 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sample_size must be a fraction in (0, 1] or a positive integer, got {}",
                self.sample_size
            )));
        }
        if self.step == 0 {
            return Err(Error::InvalidConfig("step must be >= 1".into()));
        }
        if !self.baseline_value.is_finite() {
            return Err(Error::NonFinite("baseline_value"));
        }
        Ok(())
    }

    /// Number of masking steps for `d` features.
    pub fn steps(&self, d: usize) -> usize {
        d.div_ceil(self.step)
    }

    /// Requested sample count for an evaluation set of `available` points,
    /// before clamping.
    fn requested(&self, available: usize) -> usize {
        if self.sample_size <= 1.0 {
            ((self.sample_size * available as f64).ceil() as usize).max(1)
        } else {
            self.sample_size as usize
        }
    }
}

fn check_input(m: &Mlp, x: ArrayView1<f64>, y: usize, order: &[usize]) -> Result<()> {
    if x.len() != m.input_dim() {
        return Err(Error::DimensionMismatch { expected: m.input_dim(), found: x.len() });
    }
    if order.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: order.len() });
    }
    if y >= m.classes() {
        return Err(Error::InvalidLabel { label: y, classes: m.classes() });
    }
    Ok(())
}

/// Probability curves for one sample under an explicit feature ordering.
/// Returns `(insertion, deletion)`, each of length `steps + 1`.
///
/// The unmasked input and the all-baseline input are evaluated once and
/// shared between both curves, so `insertion.last() == deletion.first()`
/// and `insertion.first() == deletion.last()` hold exactly.
pub fn curves_for_order(m: &Mlp, x: ArrayView1<f64>, y: usize, order: &[usize], cfg: &IndeConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    check_input(m, x, y, order)?;
    let d = x.len();
    let steps = cfg.steps(d);
    // rows: x, baseline, then interior deletion steps, then interior insertion steps
    let interior = steps.saturating_sub(1);
    let mut batch = Array2::<f64>::from_elem((2 + 2 * interior, d), cfg.baseline_value);
    batch.row_mut(0).assign(&x);
    let mut deleted = x.to_owned();
    let mut inserted = Array1::from_elem(d, cfg.baseline_value);
    for j in 1..steps {
        for &f in &order[(j - 1) * cfg.step..j * cfg.step] {
            deleted[f] = cfg.baseline_value;
            inserted[f] = x[f];
        }
        batch.row_mut(1 + j).assign(&deleted);
        batch.row_mut(1 + interior + j).assign(&inserted);
    }
    let probs = m.forward(batch.view())?;
    let p = probs.column(y);
    let (p_full, p_base) = (p[0], p[1]);
    let mut deletion = Vec::with_capacity(steps + 1);
    let mut insertion = Vec::with_capacity(steps + 1);
    deletion.push(p_full);
    insertion.push(p_base);
    for j in 1..steps {
        deletion.push(p[1 + j]);
        insertion.push(p[1 + interior + j]);
    }
    deletion.push(p_base);
    insertion.push(p_full);
    Ok((insertion, deletion))
}

/// Deletion curve in descending-saliency order.
pub fn deletion_curve(m: &Mlp, x: ArrayView1<f64>, y: usize, sal: &SaliencyMap, cfg: &IndeConfig) -> Result<Vec<f64>> {
    Ok(curves_for_order(m, x, y, &sal.ranking(), cfg)?.1)
}

/// Insertion curve in descending-saliency order.
pub fn insertion_curve(m: &Mlp, x: ArrayView1<f64>, y: usize, sal: &SaliencyMap, cfg: &IndeConfig) -> Result<Vec<f64>> {
    Ok(curves_for_order(m, x, y, &sal.ranking(), cfg)?.0)
}

/// Trapezoidal area under a curve sampled at evenly spaced points of [0, 1].
/// A single point is read as a constant curve.
pub fn auc(curve: &[f64]) -> Result<f64> {
    match curve.len() {
        0 => Err(Error::EmptyCurve),
        1 => Ok(curve[0]),
        n => {
            let inner: f64 = curve[1..n - 1].iter().sum();
            Ok((0.5 * (curve[0] + curve[n - 1]) + inner) / (n - 1) as f64)
        }
    }
}

/// Curves of a single evaluation sample, with the ordering chosen by `cfg`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCurves {
    pub target: usize,
    pub insertion: Vec<f64>,
    pub deletion: Vec<f64>,
}

/// Computes the curves of one sample. `rng_path` seeds the random ordering
/// and is ignored for saliency ordering.
pub fn sample_curves(m: &Mlp, x: ArrayView1<f64>, label: usize, cfg: &IndeConfig, master: u64, rng_path: &[u64]) -> Result<SampleCurves> {
    let target = match cfg.target {
        TargetClass::Label => label,
        TargetClass::Predicted => m.predict(x.insert_axis(ndarray::Axis(0)))?[0],
    };
    let order = match cfg.order {
        FeatureOrder::Saliency => saliency(m, x, target)?.ranking(),
        FeatureOrder::Random => {
            let mut o: Vec<usize> = (0..x.len()).collect();
            o.shuffle(&mut seed::rng(master, rng_path));
            o
        }
    };
    let (insertion, deletion) = curves_for_order(m, x, target, &order, cfg)?;
    Ok(SampleCurves { target, insertion, deletion })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterInde {
    pub cluster: usize,
    pub samples: usize,
    pub insertion_auc: f64,
    pub deletion_auc: f64,
    pub insertion_curve: Vec<f64>,
    pub deletion_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndeResult {
    pub mode: IndeMode,
    pub order: FeatureOrder,
    pub clusters: Vec<ClusterInde>,
    pub mean_insertion_auc: f64,
    pub mean_deletion_auc: f64,
}

/// Evaluation set of `cluster` under `mode`.
pub fn evaluation_set(partition: &Partition, fd: &FederatedDataset, cluster: usize, mode: IndeMode) -> Result<Dataset> {
    let dim = fd.feature_dim();
    let ds = match mode {
        IndeMode::Orchestrator => fd.orchestrator_test.clone(),
        IndeMode::InDistribution | IndeMode::OutOfDistribution => {
            let inside = mode == IndeMode::InDistribution;
            let parts = (0..fd.n_clients()).filter(|&i| (partition.cluster_of(i) == cluster) == inside).map(|i| &fd.clients[i].test);
            Dataset::concat(dim, parts)?
        }
    };
    if ds.is_empty() {
        return Err(Error::EmptyEvaluationSet { cluster });
    }
    Ok(ds)
}

fn evaluate_cluster(j: usize, model: &Mlp, ds: &Dataset, cfg: &IndeConfig, master: u64) -> Result<ClusterInde> {
    let mode = cfg.mode.stream();
    let wanted = cfg.requested(ds.len());
    let n = wanted.min(ds.len());
    if wanted > ds.len() {
        log::warn!("cluster {j}: sample size {wanted} exceeds {} available points, using all", ds.len());
    }
    let mut rng = seed::rng(master, &[seed::STREAM_XAI, mode, j as u64]);
    let mut picked = index::sample(&mut rng, ds.len(), n).into_vec();
    picked.sort_unstable();
    let curves = cfg.exec.try_map(n, |s| {
        let r = picked[s];
        sample_curves(model, ds.row(r), ds.labels[r], cfg, master, &[seed::STREAM_XAI, mode, j as u64, 1 + r as u64])
    })?;
    let len = cfg.steps(ds.dim()) + 1;
    let mut ins = vec![0.0; len];
    let mut del = vec![0.0; len];
    for c in &curves {
        for k in 0..len {
            ins[k] += c.insertion[k] / n as f64;
            del[k] += c.deletion[k] / n as f64;
        }
    }
    Ok(ClusterInde {
        cluster: j,
        samples: n,
        insertion_auc: auc(&ins)?,
        deletion_auc: auc(&del)?,
        insertion_curve: ins,
        deletion_curve: del,
    })
}

/// Insertion/deletion evaluation of every cluster model under `cfg.mode`.
/// `models[j]` must be the model of cluster `j` in `partition`.
pub fn run_inde(partition: &Partition, models: &[Mlp], fd: &FederatedDataset, cfg: &IndeConfig, master: u64) -> Result<IndeResult> {
    cfg.validate()?;
    if models.len() != partition.k() {
        return Err(Error::DimensionMismatch { expected: partition.k(), found: models.len() });
    }
    if partition.len() != fd.n_clients() {
        return Err(Error::MismatchedClients { left: partition.len(), right: fd.n_clients() });
    }
    let sets = (0..partition.k()).map(|j| evaluation_set(partition, fd, j, cfg.mode)).collect::<Result<Vec<_>>>()?;
    let clusters = cfg.exec.try_map(partition.k(), |j| evaluate_cluster(j, &models[j], &sets[j], cfg, master))?;
    let k = clusters.len() as f64;
    Ok(IndeResult {
        mode: cfg.mode,
        order: cfg.order,
        mean_insertion_auc: clusters.iter().map(|c| c.insertion_auc).sum::<f64>() / k,
        mean_deletion_auc: clusters.iter().map(|c| c.deletion_auc).sum::<f64>() / k,
        clusters,
    })
}
