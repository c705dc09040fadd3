//! Synthetic data-generating processes and the federated split regimes.
//!
//! Each DGP owns a label subspace and a class prior. Features are drawn from
//! `N(mu_y, sigma^2 I)` where `mu_y` depends only on the global class, so a
//! class shared by two DGPs looks the same in both (pure label skew). Class
//! means sit on mutually orthogonal directions at pairwise distance
//! `mean_spacing * sigma` and are centred, so the uniform mixture has zero
//! mean.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::Partition;
use crate::dataset::Dataset;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    NonOverlapBalanced,
    NonOverlapImbalanced,
    OverlapBalanced,
    OverlapImbalanced,
}

impl Regime {
    pub fn overlapping(self) -> bool {
        matches!(self, Regime::OverlapBalanced | Regime::OverlapImbalanced)
    }

    pub fn imbalanced(self) -> bool {
        matches!(self, Regime::NonOverlapImbalanced | Regime::OverlapImbalanced)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPlan {
    pub regime: Regime,
    pub n_clients: usize,
    pub cluster_fractions: Vec<f64>,
    /// Symmetric Dirichlet concentration for imbalanced class priors.
    pub alpha: f64,
    pub classes_per_cluster: usize,
    /// Number of classes every cluster shares in the overlap regimes. They
    /// are the lowest class ids; the remaining classes of each cluster are
    /// exclusive.
    pub overlap_classes: usize,
    pub samples_per_client: usize,
    /// Probability that a drawn sample is also copied into one other client.
    pub share_rate: f64,
    /// Fraction of each client's samples held out for local testing.
    pub test_fraction: f64,
    pub orchestrator_per_class: usize,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            regime: Regime::NonOverlapBalanced,
            n_clients: 15,
            cluster_fractions: vec![0.20, 0.47, 0.33],
            alpha: 1.0,
            classes_per_cluster: 3,
            overlap_classes: 1,
            samples_per_client: 200,
            share_rate: 0.05,
            test_fraction: 0.2,
            orchestrator_per_class: 100,
        }
    }
}

impl SplitPlan {
    pub fn n_clusters(&self) -> usize {
        self.cluster_fractions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.cluster_fractions.is_empty() || self.cluster_fractions.iter().any(|f| !(*f > 0.0)) {
            return bad("cluster_fractions must be non-empty and positive".into());
        }
        let total: f64 = self.cluster_fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("cluster_fractions sum to {total}, expected 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        if self.classes_per_cluster == 0 {
            return bad("classes_per_cluster must be >= 1".into());
        }
        if self.regime.overlapping()
            && self.n_clusters() > 1
            && (self.overlap_classes == 0 || self.overlap_classes >= self.classes_per_cluster)
        {
            return bad(format!(
                "overlap regimes need 1 <= overlap_classes < classes_per_cluster, got {}",
                self.overlap_classes
            ));
        }
        if self.samples_per_client < 2 {
            return bad("samples_per_client must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.share_rate) {
            return bad(format!("share_rate {} outside [0, 1)", self.share_rate));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        if self.orchestrator_per_class == 0 {
            return bad("orchestrator_per_class must be >= 1".into());
        }
        Ok(())
    }

    /// Label subspace of every cluster.
    pub fn label_subspaces(&self, global_classes: usize) -> Result<Vec<Vec<usize>>> {
        let c = self.n_clusters();
        let cpc = self.classes_per_cluster;
        let shared = if self.regime.overlapping() && c > 1 { self.overlap_classes } else { 0 };
        let own = cpc - shared;
        let needed = shared + c * own;
        if needed > global_classes {
            return Err(Error::InsufficientClasses {
                needed,
                available: global_classes,
            });
        }
        Ok((0..c)
            .map(|k| (0..shared).chain(shared + k * own..shared + (k + 1) * own).collect())
            .collect())
    }

    /// Largest-remainder rounding of `n_clients * fractions`, then a floor of
    /// two clients per cluster taken from the largest cluster.
    pub fn allocate_clients(&self) -> Result<Vec<usize>> {
        let n = self.n_clients;
        let c = self.n_clusters();
        if n < 2 * c {
            return Err(Error::DegenerateAllocation(format!(
                "{n} clients cannot give {c} clusters two clients each"
            )));
        }
        let quotas: Vec<f64> = self.cluster_fractions.iter().map(|f| f * n as f64).collect();
        let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let assigned: usize = sizes.iter().sum();
        for &k in order.iter().take(n - assigned) {
            sizes[k] += 1;
        }
        while let Some(small) = sizes.iter().position(|&s| s < 2) {
            let largest = (0..c).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap();
            sizes[largest] -= 1;
            sizes[small] += 1;
        }
        Ok(sizes)
    }
}

/// Knobs of the class-conditional feature distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSpace {
    pub global_classes: usize,
    pub feature_dim: usize,
    pub feature_sigma: f64,
    /// Pairwise distance between class means in units of `feature_sigma`.
    pub mean_spacing: f64,
    pub mean_layout: MeanLayout,
}

/// Direction of each class mean before centring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanLayout {
    /// Random mutually orthogonal directions (dense dependence on every feature).
    #[default]
    Random,
    /// Class `c` lifts feature `c` only; features at index >= classes are
    /// pure noise. This is the planted-feature task used to check saliency.
    Axis,
}

impl Default for FeatureSpace {
    fn default() -> Self {
        Self {
            global_classes: 9,
            feature_dim: 20,
            feature_sigma: 1.0,
            mean_spacing: 3.0,
            mean_layout: MeanLayout::Random,
        }
    }
}

impl FeatureSpace {
    pub fn validate(&self) -> Result<()> {
        if self.global_classes < 2 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig("need >= 2 classes and >= 1 feature".into()));
        }
        if !(self.feature_sigma > 0.0) || !(self.mean_spacing >= 0.0) {
            return Err(Error::InvalidConfig("feature_sigma must be > 0 and mean_spacing >= 0".into()));
        }
        if self.mean_layout == MeanLayout::Axis && self.feature_dim < self.global_classes {
            return Err(Error::InvalidConfig("axis mean layout needs feature_dim >= global_classes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dgp_id: usize,
    pub label_subspace: Vec<usize>,
    /// Aligned with `label_subspace`.
    pub class_prior: Vec<f64>,
    /// Mean of every global class, indexed by class id.
    pub feature_means: Vec<Vec<f64>>,
    pub feature_sigma: f64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.label_subspace.is_empty() || self.label_subspace.len() != self.class_prior.len() {
            return Err(Error::InvalidConfig(format!("DGP {} has a malformed label subspace", self.dgp_id)));
        }
        let s: f64 = self.class_prior.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.class_prior.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidConfig(format!("DGP {} prior sums to {s}", self.dgp_id)));
        }
        Ok(())
    }

    fn draw_class(&self, rng: &mut impl Rng) -> usize {
        let mut u: f64 = rng.random();
        for (y, p) in self.label_subspace.iter().zip(&self.class_prior) {
            if u < *p {
                return *y;
            }
            u -= p;
        }
        *self.label_subspace.last().unwrap()
    }
}

fn draw_features(mean: &[f64], sigma: f64, rng: &mut impl Rng, out: &mut Vec<f64>) {
    for m in mean {
        let z: f64 = rng.sample(StandardNormal);
        out.push(m + sigma * z);
    }
}

/// Centred class means at pairwise distance `spacing * sigma`: scaled
/// orthonormal directions when `dim >= classes`, random unit directions
/// otherwise.
fn class_means(space: &FeatureSpace, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let (k, d) = (space.global_classes, space.feature_dim);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    if space.mean_layout == MeanLayout::Axis {
        dirs.extend((0..k).map(|c| (0..d).map(|j| if j == c { 1.0 } else { 0.0 }).collect()));
    }
    while dirs.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if d >= k {
            for u in &dirs {
                let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(u) {
                    *a -= proj * b;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        dirs.push(v.into_iter().map(|a| a / norm).collect());
    }
    let scale = space.mean_spacing * space.feature_sigma / std::f64::consts::SQRT_2;
    let mut means: Vec<Vec<f64>> = dirs.into_iter().map(|u| u.into_iter().map(|a| a * scale).collect()).collect();
    let centre: Vec<f64> = (0..d).map(|j| means.iter().map(|m| m[j]).sum::<f64>() / k as f64).collect();
    for m in &mut means {
        for (a, c) in m.iter_mut().zip(&centre) {
            *a -= c;
        }
    }
    means
}

fn dirichlet(alpha: f64, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let g: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 {
            return g.into_iter().map(|x| x / s).collect();
        }
    }
}

pub fn build_dgps(plan: &SplitPlan, space: &FeatureSpace, seed_value: u64) -> Result<Vec<DgpSpec>> {
    plan.validate()?;
    space.validate()?;
    let subspaces = plan.label_subspaces(space.global_classes)?;
    let mut rng = seed::rng(seed_value, &[seed::STREAM_DATAGEN, 0]);
    let means = class_means(space, &mut rng);
    let dgps: Vec<DgpSpec> = subspaces
        .into_iter()
        .enumerate()
        .map(|(dgp_id, label_subspace)| {
            let m = label_subspace.len();
            let class_prior = if plan.regime.imbalanced() {
                dirichlet(plan.alpha, m, &mut rng)
            } else {
                vec![1.0 / m as f64; m]
            };
            DgpSpec {
                dgp_id,
                label_subspace,
                class_prior,
                feature_means: means.clone(),
                feature_sigma: space.feature_sigma,
            }
        })
        .collect();
    for d in &dgps {
        d.validate()?;
    }
    Ok(dgps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    pub clients: Vec<ClientData>,
    pub ground_truth: Partition,
    pub orchestrator_test: Dataset,
    pub classes: usize,
}

impl FederatedDataset {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.orchestrator_test.dim()
    }
}

/// Draws every client's data from its DGP, applies sample sharing, splits
/// train and local test, and draws the uniform orchestrator set. Clients are
/// numbered cluster by cluster.
pub fn sample_federated_dataset(dgps: &[DgpSpec], plan: &SplitPlan, seed_value: u64) -> Result<FederatedDataset> {
    plan.validate()?;
    if dgps.len() != plan.n_clusters() {
        return Err(Error::InvalidConfig(format!(
            "{} DGPs for {} clusters",
            dgps.len(),
            plan.n_clusters()
        )));
    }
    let sizes = plan.allocate_clients()?;
    let cluster_of: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| vec![c; s]).collect();
    let n = cluster_of.len();
    let dim = dgps[0].feature_means[0].len();
    let classes = dgps[0].feature_means.len();
    let sigma = dgps[0].feature_sigma;
    let mut rng = seed::rng(seed_value, &[seed::STREAM_DATAGEN, 1]);

    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut labels: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut x = Vec::with_capacity(dim);
    for client in 0..n {
        let dgp = &dgps[cluster_of[client]];
        for _ in 0..plan.samples_per_client {
            let y = dgp.draw_class(&mut rng);
            x.clear();
            draw_features(&dgp.feature_means[y], dgp.feature_sigma, &mut rng, &mut x);
            feats[client].extend_from_slice(&x);
            labels[client].push(y);
            if n > 1 && rng.random::<f64>() < plan.share_rate {
                let mut other = rng.random_range(0..n - 1);
                if other >= client {
                    other += 1;
                }
                feats[other].extend_from_slice(&x);
                labels[other].push(y);
            }
        }
    }

    let mut clients = Vec::with_capacity(n);
    for (f, l) in feats.into_iter().zip(labels) {
        let all = Dataset::new(Array2::from_shape_vec((l.len(), dim), f).expect("row-major"), l)?;
        let mut idx: Vec<usize> = (0..all.len()).collect();
        idx.shuffle(&mut rng);
        let n_test = ((all.len() as f64 * plan.test_fraction).round() as usize).clamp(1, all.len() - 1);
        let (test_idx, train_idx) = idx.split_at(n_test);
        clients.push(ClientData {
            train: all.select(train_idx),
            test: all.select(test_idx),
        });
    }

    let per = plan.orchestrator_per_class;
    let mut of = Vec::with_capacity(classes * per * dim);
    let mut ol = Vec::with_capacity(classes * per);
    for y in 0..classes {
        for _ in 0..per {
            draw_features(&dgps[0].feature_means[y], sigma, &mut rng, &mut of);
            ol.push(y);
        }
    }
    let orchestrator_test = Dataset::new(Array2::from_shape_vec((ol.len(), dim), of).expect("row-major"), ol)?;

    Ok(FederatedDataset {
        clients,
        ground_truth: Partition::from_labels(&cluster_of),
        orchestrator_test,
        classes,
    })
}

/// Builds the DGPs and samples the federation in one go.
pub fn generate(plan: &SplitPlan, space: &FeatureSpace, seed_value: u64) -> Result<FederatedDataset> {
    let dgps = build_dgps(plan, space, seed_value)?;
    sample_federated_dataset(&dgps, plan, seed_value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFile {
    pub file: String,
    pub samples: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEntry {
    pub client_id: usize,
    pub cluster: usize,
    pub train: DataFile,
    pub test: DataFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub plan: SplitPlan,
    pub feature_space: FeatureSpace,
    pub layout: String,
    pub feature_dim: usize,
    pub classes: usize,
    pub ground_truth: Partition,
    pub clients: Vec<ClientEntry>,
    pub orchestrator_test: DataFile,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const LAYOUT: &str = "CSV with header f0..f{d-1},label; features float32 shortest round-trip text, label integer";

fn write_csv(dir: &Path, name: &str, data: &Dataset) -> Result<DataFile> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, y) in data.features.rows().into_iter().zip(&data.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| (*v as f32).to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(dir.join(name), &bytes)?;
    Ok(DataFile {
        file: name.to_string(),
        samples: data.len(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Writes per-client CSV files and `manifest.json` into `dir`.
pub fn export_manifest(
    fd: &FederatedDataset,
    plan: &SplitPlan,
    space: &FeatureSpace,
    seed_value: u64,
    dir: &Path,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut clients = Vec::with_capacity(fd.n_clients());
    for (i, c) in fd.clients.iter().enumerate() {
        clients.push(ClientEntry {
            client_id: i,
            cluster: fd.ground_truth.cluster_of(i),
            train: write_csv(dir, &format!("client-{i}-train.csv"), &c.train)?,
            test: write_csv(dir, &format!("client-{i}-test.csv"), &c.test)?,
        });
    }
    let manifest = DatasetManifest {
        seed: seed_value,
        plan: plan.clone(),
        feature_space: space.clone(),
        layout: LAYOUT.to_string(),
        feature_dim: fd.feature_dim(),
        classes: fd.classes,
        ground_truth: fd.ground_truth.clone(),
        clients,
        orchestrator_test: write_csv(dir, "orchestrator-test.csv", &fd.orchestrator_test)?,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

fn read_verified(dir: &Path, entry: &DataFile, dim: usize) -> Result<Dataset> {
    let path: PathBuf = dir.join(&entry.file);
    let bytes = fs::read(&path)?;
    let found = hex::encode(Sha256::digest(&bytes));
    if found != entry.sha256 {
        return Err(Error::HashMismatch {
            file: entry.file.clone(),
            expected: entry.sha256.clone(),
            found,
        });
    }
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut feats = Vec::with_capacity(entry.samples * dim);
    let mut labels = Vec::with_capacity(entry.samples);
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: dim + 1,
                found: rec.len(),
            });
        }
        for j in 0..dim {
            let v: f32 = rec[j]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad feature value in {}", entry.file)))?;
            feats.push(v as f64);
        }
        labels.push(
            rec[dim]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad label in {}", entry.file)))?,
        );
    }
    Dataset::new(
        Array2::from_shape_vec((labels.len(), dim), feats).expect("row-major"),
        labels,
    )
}

/// Reads a manifest and its data files, rejecting any file whose hash does
/// not match.
pub fn load_manifest(dir: &Path) -> Result<(DatasetManifest, FederatedDataset)> {
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let d = manifest.feature_dim;
    let clients = manifest
        .clients
        .iter()
        .map(|c| {
            Ok(ClientData {
                train: read_verified(dir, &c.train, d)?,
                test: read_verified(dir, &c.test, d)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fd = FederatedDataset {
        clients,
        ground_truth: manifest.ground_truth.clone(),
        orchestrator_test: read_verified(dir, &manifest.orchestrator_test, d)?,
        classes: manifest.classes,
    };
    Ok((manifest, fd))
}
