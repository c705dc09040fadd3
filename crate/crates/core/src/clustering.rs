//! Clustering backends over the divergence matrix.
//!
//! Centroid methods (K-Means, Mean Shift) treat the rows of the matrix as
//! embedding vectors under Euclidean distance. Affinity Propagation, HDBSCAN
//! and the agglomerative methods read the matrix as precomputed distances.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numkit::{divergence_matrix, DivergenceMatrix, ParameterVector};
use crate::{seed, Error, Exec, Result};

/// Hard assignment of clients `0..n` to clusters `0..k`.
///
/// Labels are canonical: clusters are numbered in order of first
/// appearance, so two partitions are equal up to relabeling iff they are
/// `==`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    k: usize,
    labels: Vec<usize>,
}

impl Partition {
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels: Vec<usize> = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self {
            k: map.len(),
            labels,
        }
    }

    pub fn single(n: usize) -> Self {
        Self::from_labels(&vec![0; n])
    }

    pub fn singletons(n: usize) -> Self {
        Self::from_labels(&(0..n).collect::<Vec<_>>())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cluster_of(&self, client: usize) -> usize {
        self.labels[client]
    }

    /// Member lists, cluster by cluster; members in ascending order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &c in &self.labels {
            s[c] += 1;
        }
        s
    }

    pub fn same_up_to_relabel(&self, other: &Partition) -> bool {
        self == other
    }

    /// Applies a client permutation: client `i` of the result is client
    /// `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::from_labels(&perm.iter().map(|&i| self.labels[i]).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    KMeans,
    MeanShift,
    AffinityPropagation,
    #[default]
    Hdbscan,
    AgglomerativeAverage,
    SattlerBipartition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceMode {
    #[default]
    MedianSimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub algorithm: Algorithm,
    /// K-Means only.
    pub k_hint: Option<usize>,
    pub min_cluster_fraction: f64,
    pub bandwidth_quantile: f64,
    pub damping: f64,
    pub preference_mode: PreferenceMode,
    pub distance_threshold: f64,
    pub max_iterations: usize,
    pub convergence_patience: usize,
    /// K-Means restarts; the lowest-inertia run wins.
    pub kmeans_restarts: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Hdbscan,
            k_hint: None,
            min_cluster_fraction: 0.2,
            bandwidth_quantile: 0.3,
            damping: 0.5,
            preference_mode: PreferenceMode::MedianSimilarity,
            distance_threshold: 0.2,
            max_iterations: 300,
            convergence_patience: 15,
            kmeans_restarts: 10,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.min_cluster_fraction > 0.0 && self.min_cluster_fraction <= 0.5) {
            return bad(format!(
                "min_cluster_fraction {} outside (0, 0.5]",
                self.min_cluster_fraction
            ));
        }
        if !(0.5..1.0).contains(&self.damping) {
            return bad(format!("damping {} outside [0.5, 1)", self.damping));
        }
        if !(self.bandwidth_quantile > 0.0 && self.bandwidth_quantile <= 1.0) {
            return bad(format!("bandwidth_quantile {} outside (0, 1]", self.bandwidth_quantile));
        }
        if self.algorithm == Algorithm::KMeans && self.k_hint.is_none() {
            return bad("k_means requires k_hint".into());
        }
        if self.distance_threshold <= 0.0 {
            return bad("distance_threshold must be > 0".into());
        }
        if self.max_iterations == 0 || self.convergence_patience == 0 || self.kmeans_restarts == 0 {
            return bad("iteration counts must be >= 1".into());
        }
        Ok(())
    }

    /// `max(2, ceil(min_cluster_fraction * n))`.
    pub fn min_cluster_size(&self, n: usize) -> usize {
        ((self.min_cluster_fraction * n as f64).ceil() as usize).max(2)
    }
}

/// Result of a backend run, with the soft-failure flags the orchestrator
/// needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringOutcome {
    pub partition: Partition,
    /// False when an iterative backend hit its iteration cap.
    pub converged: bool,
    /// Points HDBSCAN labelled as noise and attached post hoc.
    pub attached: Vec<usize>,
    /// The bipartition had no structure to split on.
    pub degenerate: bool,
}

impl ClusteringOutcome {
    fn plain(partition: Partition) -> Self {
        Self {
            partition,
            converged: true,
            attached: Vec::new(),
            degenerate: false,
        }
    }
}

/// Runs the configured backend on `gamma`.
pub fn cluster(gamma: &DivergenceMatrix, cfg: &ClusteringConfig, seed_value: u64) -> Result<ClusteringOutcome> {
    cfg.validate()?;
    let n = gamma.n();
    match cfg.algorithm {
        Algorithm::KMeans => {
            let k = cfg.k_hint.expect("validated");
            let km = KMeans {
                k,
                max_iterations: cfg.max_iterations,
                restarts: cfg.kmeans_restarts,
            };
            Ok(ClusteringOutcome::plain(km.fit(gamma, seed_value)?.partition))
        }
        Algorithm::MeanShift => Ok(ClusteringOutcome::plain(mean_shift_on_rows(gamma, cfg.bandwidth_quantile)?)),
        Algorithm::AffinityPropagation => {
            let ap = AffinityPropagation {
                damping: cfg.damping,
                max_iterations: cfg.max_iterations,
                convergence_patience: cfg.convergence_patience,
            };
            let out = ap.fit(gamma, seed_value)?;
            Ok(ClusteringOutcome {
                partition: out.partition,
                converged: out.converged,
                attached: Vec::new(),
                degenerate: false,
            })
        }
        Algorithm::Hdbscan => {
            let out = hdbscan(gamma, cfg.min_cluster_size(n))?;
            Ok(ClusteringOutcome {
                partition: out.partition,
                converged: true,
                attached: out.attached,
                degenerate: false,
            })
        }
        Algorithm::AgglomerativeAverage => Ok(ClusteringOutcome::plain(agglomerative_average_linkage(
            gamma,
            cfg.distance_threshold,
        )?)),
        Algorithm::SattlerBipartition => {
            let b = complete_linkage_bipartition(gamma);
            Ok(ClusteringOutcome {
                partition: b.partition,
                converged: true,
                attached: Vec::new(),
                degenerate: b.degenerate,
            })
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub k: usize,
    pub max_iterations: usize,
    pub restarts: usize,
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub partition: Partition,
    pub inertia: f64,
}

impl KMeans {
    pub fn fit(&self, gamma: &DivergenceMatrix, seed_value: u64) -> Result<KMeansFit> {
        let n = gamma.n();
        if self.k < 2 || self.k > n {
            return Err(Error::InvalidK { k: self.k, n });
        }
        let rows: Vec<&[f64]> = (0..n).map(|i| gamma.row(i)).collect();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for r in 0..self.restarts {
            let mut rng = seed::rng(seed_value, &[seed::STREAM_CLUSTERING, r as u64]);
            let (labels, inertia) = self.lloyd(&rows, &mut rng);
            if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
                best = Some((labels, inertia));
            }
        }
        let (labels, inertia) = best.expect("restarts >= 1");
        Ok(KMeansFit {
            partition: Partition::from_labels(&labels),
            inertia,
        })
    }

    fn seed_centers(&self, rows: &[&[f64]], rng: &mut impl Rng) -> Vec<Vec<f64>> {
        let n = rows.len();
        let mut chosen = vec![rng.random_range(0..n)];
        let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, rows[chosen[0]])).collect();
        while chosen.len() < self.k {
            let total: f64 = d2.iter().sum();
            let next = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if w > 0.0 && target < w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                pick
            } else {
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            };
            chosen.push(next);
            for (i, r) in rows.iter().enumerate() {
                d2[i] = d2[i].min(sq_dist(r, rows[next]));
            }
        }
        chosen.iter().map(|&i| rows[i].to_vec()).collect()
    }

    fn lloyd(&self, rows: &[&[f64]], rng: &mut impl Rng) -> (Vec<usize>, f64) {
        let n = rows.len();
        let dim = rows[0].len();
        let mut centers = self.seed_centers(rows, rng);
        let mut labels = vec![0usize; n];
        for _ in 0..self.max_iterations {
            for (i, r) in rows.iter().enumerate() {
                labels[i] = nearest(r, &centers).0;
            }
            // repair empty clusters by moving the worst-fit point into them
            loop {
                let mut counts = vec![0usize; self.k];
                for &l in &labels {
                    counts[l] += 1;
                }
                let Some(empty) = counts.iter().position(|&c| c == 0) else {
                    break;
                };
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| {
                        let da = sq_dist(rows[a], &centers[labels[a]]);
                        let db = sq_dist(rows[b], &centers[labels[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("k <= n leaves a multi-member cluster");
                labels[far] = empty;
                centers[empty] = rows[far].to_vec();
            }
            let mut sums = vec![vec![0.0; dim]; self.k];
            let mut counts = vec![0usize; self.k];
            for (i, r) in rows.iter().enumerate() {
                counts[labels[i]] += 1;
                for (s, v) in sums[labels[i]].iter_mut().zip(r.iter()) {
                    *s += v;
                }
            }
            let mut shift: f64 = 0.0;
            for c in 0..self.k {
                let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                shift = shift.max(sq_dist(&new, &centers[c]).sqrt());
                centers[c] = new;
            }
            if shift < 1e-9 {
                break;
            }
        }
        for (i, r) in rows.iter().enumerate() {
            labels[i] = nearest(r, &centers).0;
        }
        let inertia = rows
            .iter()
            .zip(&labels)
            .map(|(r, &l)| sq_dist(r, &centers[l]))
            .sum();
        (labels, inertia)
    }
}

/// K-Means on the rows of `gamma` with default iteration limits.
pub fn kmeans_on_rows(gamma: &DivergenceMatrix, k: usize, seed_value: u64) -> Result<Partition> {
    let cfg = ClusteringConfig::default();
    let km = KMeans {
        k,
        max_iterations: cfg.max_iterations,
        restarts: cfg.kmeans_restarts,
    };
    Ok(km.fit(gamma, seed_value)?.partition)
}

/// Distance from each row to its `ceil(quantile * n)`-th nearest other row,
/// averaged over rows.
pub fn estimate_bandwidth(gamma: &DivergenceMatrix, quantile: f64) -> f64 {
    let n = gamma.n();
    if n < 2 {
        return 0.0;
    }
    let q = ((quantile * n as f64).ceil() as usize).clamp(1, n - 1);
    let total: f64 = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| sq_dist(gamma.row(i), gamma.row(j)).sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            d[q - 1]
        })
        .sum();
    total / n as f64
}

/// Flat-kernel mean shift on the rows of `gamma`, seeded from every row.
pub fn mean_shift_on_rows(gamma: &DivergenceMatrix, bandwidth_quantile: f64) -> Result<Partition> {
    let n = gamma.n();
    if n < 2 {
        return Err(Error::InvalidK { k: 1, n });
    }
    let bw = estimate_bandwidth(gamma, bandwidth_quantile);
    if bw <= 0.0 {
        return Ok(Partition::single(n));
    }
    let rows: Vec<&[f64]> = (0..n).map(|i| gamma.row(i)).collect();
    let bw2 = bw * bw;
    let tol = 1e-3 * bw;
    let mut modes: Vec<(Vec<f64>, usize, usize)> = Vec::new();
    for (s, seed_row) in rows.iter().enumerate() {
        let mut m = seed_row.to_vec();
        let mut count;
        let mut iters = 0;
        loop {
            let inside: Vec<&[f64]> = rows.iter().copied().filter(|r| sq_dist(r, &m) <= bw2).collect();
            count = inside.len();
            if count == 0 {
                break;
            }
            let mut next = vec![0.0; n];
            for r in &inside {
                for (a, b) in next.iter_mut().zip(r.iter()) {
                    *a += b;
                }
            }
            for a in &mut next {
                *a /= count as f64;
            }
            let shift = sq_dist(&next, &m).sqrt();
            m = next;
            iters += 1;
            if shift <= tol || iters >= 300 {
                count = rows.iter().filter(|r| sq_dist(r, &m) <= bw2).count();
                break;
            }
        }
        if count > 0 {
            modes.push((m, count, s));
        }
    }
    modes.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let merge2 = (bw / 2.0) * (bw / 2.0);
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for (m, _, _) in modes {
        if kept.iter().all(|k| sq_dist(k, &m) >= merge2) {
            kept.push(m);
        }
    }
    let labels: Vec<usize> = rows.iter().map(|r| nearest(r, &kept).0).collect();
    Ok(Partition::from_labels(&labels))
}

/// Affinity propagation on similarities `-gamma` with median preference.
#[derive(Debug, Clone)]
pub struct AffinityPropagation {
    pub damping: f64,
    pub max_iterations: usize,
    pub convergence_patience: usize,
}

#[derive(Debug, Clone)]
pub struct ApFit {
    pub partition: Partition,
    pub exemplars: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

impl AffinityPropagation {
    pub fn fit(&self, gamma: &DivergenceMatrix, seed_value: u64) -> Result<ApFit> {
        let n = gamma.n();
        if n < 2 {
            return Err(Error::InvalidK { k: 1, n });
        }
        if !(0.5..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!("damping {} outside [0.5, 1)", self.damping)));
        }
        let mut off: Vec<f64> = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off.push(-gamma.get(i, j));
                }
            }
        }
        let preference = median(&mut off.clone());
        if off.iter().all(|&s| s == off[0]) {
            // no structure: message passing stays at zero, decide from the preference
            let partition = if preference >= off[0] {
                Partition::singletons(n)
            } else {
                Partition::single(n)
            };
            let exemplars = if partition.k() == n { (0..n).collect() } else { vec![0] };
            return Ok(ApFit {
                partition,
                exemplars,
                converged: true,
                iterations: 0,
            });
        }

        let mut rng = seed::rng(seed_value, &[seed::STREAM_CLUSTERING, 0xAF]);
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                s[i * n + j] = if i == j { preference } else { -gamma.get(i, j) };
            }
        }
        // tiny jitter removes degenerate ties between equal similarities
        for v in s.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += (f64::EPSILON * *v + f64::MIN_POSITIVE * 100.0) * z;
        }

        let d = self.damping;
        let mut r = vec![0.0; n * n];
        let mut a = vec![0.0; n * n];
        let mut history: Vec<Vec<bool>> = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let mut exemplar_flags = vec![false; n];
        for it in 0..self.max_iterations {
            iterations = it + 1;
            for i in 0..n {
                let (mut first, mut second, mut arg) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
                for k in 0..n {
                    let v = a[i * n + k] + s[i * n + k];
                    if v > first {
                        second = first;
                        first = v;
                        arg = k;
                    } else if v > second {
                        second = v;
                    }
                }
                for k in 0..n {
                    let competitor = if k == arg { second } else { first };
                    let new = s[i * n + k] - competitor;
                    r[i * n + k] = d * r[i * n + k] + (1.0 - d) * new;
                }
            }
            for k in 0..n {
                let col_pos: f64 = (0..n)
                    .map(|i| if i == k { r[k * n + k] } else { r[i * n + k].max(0.0) })
                    .sum();
                for i in 0..n {
                    let new = if i == k {
                        col_pos - r[k * n + k]
                    } else {
                        (col_pos - r[i * n + k].max(0.0)).min(0.0)
                    };
                    a[i * n + k] = d * a[i * n + k] + (1.0 - d) * new;
                }
            }
            for k in 0..n {
                exemplar_flags[k] = a[k * n + k] + r[k * n + k] > 0.0;
            }
            history.push(exemplar_flags.clone());
            if history.len() > self.convergence_patience {
                history.remove(0);
            }
            if history.len() == self.convergence_patience
                && exemplar_flags.iter().any(|&e| e)
                && history.iter().all(|h| *h == exemplar_flags)
            {
                converged = true;
                break;
            }
        }

        let mut exemplars: Vec<usize> = (0..n).filter(|&k| exemplar_flags[k]).collect();
        if exemplars.is_empty() {
            return Ok(ApFit {
                partition: Partition::single(n),
                exemplars: vec![],
                converged: false,
                iterations,
            });
        }
        let assign = |exemplars: &[usize]| -> Vec<usize> {
            (0..n)
                .map(|i| {
                    if let Some(pos) = exemplars.iter().position(|&e| e == i) {
                        return pos;
                    }
                    let mut best = 0;
                    for (c, &e) in exemplars.iter().enumerate() {
                        if s[i * n + e] > s[i * n + exemplars[best]] {
                            best = c;
                        }
                    }
                    best
                })
                .collect()
        };
        let labels = assign(&exemplars);
        // refine each exemplar to the member with the highest total similarity
        for (c, ex) in exemplars.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let mut best = members[0];
            let mut best_score = f64::NEG_INFINITY;
            for &j in &members {
                let score: f64 = members.iter().map(|&i| s[i * n + j]).sum();
                if score > best_score {
                    best_score = score;
                    best = j;
                }
            }
            *ex = best;
        }
        let labels = assign(&exemplars);
        Ok(ApFit {
            partition: Partition::from_labels(&labels),
            exemplars,
            converged,
            iterations,
        })
    }
}

/// Affinity propagation with default iteration limits.
pub fn affinity_propagation(gamma: &DivergenceMatrix, damping: f64, seed_value: u64) -> Result<ApFit> {
    let cfg = ClusteringConfig::default();
    AffinityPropagation {
        damping,
        max_iterations: cfg.max_iterations,
        convergence_patience: cfg.convergence_patience,
    }
    .fit(gamma, seed_value)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone)]
pub struct HdbscanFit {
    pub partition: Partition,
    /// Clients that came out as noise and were attached to the cluster with
    /// the smallest mean distance.
    pub attached: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
enum CondensedChild {
    Cluster(usize),
    Point(usize),
}

#[derive(Debug, Clone, Copy)]
struct CondensedRow {
    parent: usize,
    child: CondensedChild,
    lambda: f64,
    size: usize,
}

const MIN_DISTANCE: f64 = 1e-12;

/// HDBSCAN on `gamma` as precomputed distances, `min_samples ==
/// min_cluster_size`, excess-of-mass selection. Noise is attached to the
/// nearest cluster by mean distance; when nothing is selected every client
/// lands in one cluster.
pub fn hdbscan(gamma: &DivergenceMatrix, min_cluster_size: usize) -> Result<HdbscanFit> {
    if min_cluster_size < 2 {
        return Err(Error::InvalidMinClusterSize(min_cluster_size));
    }
    let n = gamma.n();
    if n < 2 {
        return Ok(HdbscanFit {
            partition: Partition::single(n),
            attached: vec![],
        });
    }

    // core distance: k-th nearest neighbour counting the point itself
    let k = min_cluster_size.min(n);
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut row = gamma.row(i).to_vec();
            row.sort_by(f64::total_cmp);
            row[k - 1]
        })
        .collect();
    let mr = |i: usize, j: usize| gamma.get(i, j).max(core[i]).max(core[j]);

    // Prim's MST on the dense mutual-reachability graph
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if !in_tree[j] {
                let d = mr(current, j);
                if d < best[j] {
                    best[j] = d;
                    from[j] = current;
                }
            }
        }
        let next = (0..n)
            .filter(|&j| !in_tree[j])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
            .unwrap();
        edges.push((from[next], next, best[next]));
        in_tree[next] = true;
        current = next;
    }
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));

    // single-linkage dendrogram: leaves 0..n, internal nodes n..2n-1
    let mut uf_parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut children = Vec::with_capacity(n - 1);
    let mut node_size = vec![1usize; 2 * n - 1];
    let mut node_dist = vec![0.0; 2 * n - 1];
    for (idx, &(u, v, w)) in edges.iter().enumerate() {
        let node = n + idx;
        let (ru, rv) = (find(&mut uf_parent, u), find(&mut uf_parent, v));
        uf_parent[ru] = node;
        uf_parent[rv] = node;
        children.push((ru, rv));
        node_size[node] = node_size[ru] + node_size[rv];
        node_dist[node] = w;
    }
    let root = 2 * n - 2;

    let leaves_under = |node: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                let (l, r) = children[x - n];
                stack.push(l);
                stack.push(r);
            }
        }
        out
    };

    // condense
    let mut rows: Vec<CondensedRow> = Vec::new();
    let mut cluster_of_node = vec![usize::MAX; 2 * n - 1];
    let mut n_clusters = 1;
    cluster_of_node[root] = 0;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(node) = queue.pop_front() {
        if node < n {
            continue;
        }
        let parent = cluster_of_node[node];
        let (l, r) = children[node - n];
        let lambda = 1.0 / node_dist[node].max(MIN_DISTANCE);
        let (ls, rs) = (node_size[l], node_size[r]);
        let big_l = ls >= min_cluster_size;
        let big_r = rs >= min_cluster_size;
        if big_l && big_r {
            for (c, size) in [(l, ls), (r, rs)] {
                cluster_of_node[c] = n_clusters;
                rows.push(CondensedRow {
                    parent,
                    child: CondensedChild::Cluster(n_clusters),
                    lambda,
                    size,
                });
                n_clusters += 1;
                queue.push_back(c);
            }
        } else {
            for (c, big) in [(l, big_l), (r, big_r)] {
                if big {
                    cluster_of_node[c] = parent;
                    queue.push_back(c);
                } else {
                    for p in leaves_under(c) {
                        rows.push(CondensedRow {
                            parent,
                            child: CondensedChild::Point(p),
                            lambda,
                            size: 1,
                        });
                    }
                }
            }
        }
    }

    // stability and excess-of-mass selection
    let mut birth = vec![0.0; n_clusters];
    let mut cluster_parent = vec![usize::MAX; n_clusters];
    let mut cluster_children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for row in &rows {
        if let CondensedChild::Cluster(c) = row.child {
            birth[c] = row.lambda;
            cluster_parent[c] = row.parent;
            cluster_children[row.parent].push(c);
        }
    }
    let mut stability = vec![0.0; n_clusters];
    for row in &rows {
        stability[row.parent] += (row.lambda - birth[row.parent]) * row.size as f64;
    }
    let mut selected = vec![false; n_clusters];
    for c in (1..n_clusters).rev() {
        let child_sum: f64 = cluster_children[c].iter().map(|&ch| stability[ch]).sum();
        if !cluster_children[c].is_empty() && child_sum > stability[c] {
            stability[c] = child_sum;
        } else {
            selected[c] = true;
            let mut stack = cluster_children[c].clone();
            while let Some(d) = stack.pop() {
                selected[d] = false;
                stack.extend_from_slice(&cluster_children[d]);
            }
        }
    }

    // label points by their nearest selected ancestor
    let mut raw = vec![usize::MAX; n];
    for row in &rows {
        if let CondensedChild::Point(p) = row.child {
            let mut c = row.parent;
            loop {
                if selected[c] {
                    raw[p] = c;
                    break;
                }
                if c == 0 {
                    break;
                }
                c = cluster_parent[c];
            }
        }
    }

    let selected_ids: Vec<usize> = (0..n_clusters).filter(|&c| selected[c]).collect();
    if selected_ids.is_empty() {
        return Ok(HdbscanFit {
            partition: Partition::single(n),
            attached: vec![],
        });
    }
    let noise: Vec<usize> = (0..n).filter(|&i| raw[i] == usize::MAX).collect();
    let members: Vec<Vec<usize>> = selected_ids
        .iter()
        .map(|&c| (0..n).filter(|&i| raw[i] == c).collect())
        .collect();
    for &p in &noise {
        let mut best = (0, f64::INFINITY);
        for (idx, m) in members.iter().enumerate() {
            let d = m.iter().map(|&j| gamma.get(p, j)).sum::<f64>() / m.len() as f64;
            if d < best.1 {
                best = (idx, d);
            }
        }
        raw[p] = selected_ids[best.0];
    }
    Ok(HdbscanFit {
        partition: Partition::from_labels(&raw),
        attached: noise,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    Average,
    Complete,
}

/// One merge of the agglomerative procedure, clusters named by their
/// lowest member.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

enum Stop {
    Threshold(f64),
    Clusters(usize),
}

fn agglomerate(gamma: &DivergenceMatrix, linkage: Linkage, stop: Stop) -> (Partition, Vec<Merge>) {
    let n = gamma.n();
    // clusters kept sorted by lowest member, which is also their name
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut dist: Vec<Vec<f64>> = (0..n).map(|i| gamma.row(i).to_vec()).collect();
    let mut merges = Vec::new();
    while members.len() > 1 {
        if let Stop::Clusters(k) = stop {
            if members.len() <= k {
                break;
            }
        }
        let m = members.len();
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..m {
            for b in (a + 1)..m {
                if dist[a][b] < best.2 {
                    best = (a, b, dist[a][b]);
                }
            }
        }
        let (a, b, d) = best;
        if let Stop::Threshold(t) = stop {
            if d > t {
                break;
            }
        }
        let (na, nb) = (members[a].len() as f64, members[b].len() as f64);
        for c in 0..m {
            if c == a || c == b {
                continue;
            }
            let merged = match linkage {
                Linkage::Average => (na * dist[a][c] + nb * dist[b][c]) / (na + nb),
                Linkage::Complete => dist[a][c].max(dist[b][c]),
            };
            dist[a][c] = merged;
            dist[c][a] = merged;
        }
        merges.push(Merge {
            left: members[a][0],
            right: members[b][0],
            distance: d,
            size: members[a].len() + members[b].len(),
        });
        let moved = members.remove(b);
        members[a].extend(moved);
        members[a].sort_unstable();
        dist.remove(b);
        for row in dist.iter_mut() {
            row.remove(b);
        }
    }
    let mut labels = vec![0; n];
    for (c, ms) in members.iter().enumerate() {
        for &i in ms {
            labels[i] = c;
        }
    }
    (Partition::from_labels(&labels), merges)
}

/// Average-linkage agglomeration, merging while the cheapest merge costs at
/// most `distance_threshold`. Ties go to the lowest pair of cluster names.
pub fn agglomerative_average_linkage(gamma: &DivergenceMatrix, distance_threshold: f64) -> Result<Partition> {
    if !(distance_threshold > 0.0) {
        return Err(Error::InvalidConfig("distance_threshold must be > 0".into()));
    }
    Ok(agglomerate(gamma, Linkage::Average, Stop::Threshold(distance_threshold)).0)
}

/// Full merge history of an average-linkage run.
pub fn average_linkage_dendrogram(gamma: &DivergenceMatrix) -> Vec<Merge> {
    agglomerate(gamma, Linkage::Average, Stop::Clusters(1)).1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bipartition {
    pub partition: Partition,
    /// Every pairwise distance was equal, so the split `{0}` vs rest carries
    /// no information.
    pub degenerate: bool,
}

/// Complete-linkage agglomeration down to two clusters.
pub fn complete_linkage_bipartition(gamma: &DivergenceMatrix) -> Bipartition {
    let n = gamma.n();
    let first = if n > 1 { gamma.get(0, 1) } else { 0.0 };
    let flat = (0..n).all(|i| (0..n).all(|j| i == j || gamma.get(i, j) == first));
    if n < 2 || flat {
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i > 0)).collect();
        return Bipartition {
            partition: Partition::from_labels(&labels),
            degenerate: true,
        };
    }
    Bipartition {
        partition: agglomerate(gamma, Linkage::Complete, Stop::Clusters(2)).0,
        degenerate: false,
    }
}

/// Cosine bipartition of client updates.
pub fn sattler_bipartition(deltas: &[ParameterVector]) -> Result<Bipartition> {
    let gamma = divergence_matrix(deltas, Exec::Sequential)?;
    Ok(complete_linkage_bipartition(&gamma))
}
