//! Dense vector primitives, cosine geometry, the divergence matrix and the
//! clustering temperature trigger.

use serde::{Deserialize, Serialize};

use crate::{Error, Exec, Result};

/// Flattened model parameters, or a per-round pseudo-gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// `self - other`, element-wise.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `self + scale * other`, in place.
    pub fn add_scaled(&mut self, scale: f64, other: &Self) -> Result<()> {
        check_dims(self.dim(), other.dim())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Self {
        p.0
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &ParameterVector, b: &ParameterVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let na2 = dot(&a.0, &a.0);
    if na2 == 0.0 {
        return Err(Error::ZeroVector { index: 0 });
    }
    let nb2 = dot(&b.0, &b.0);
    if nb2 == 0.0 {
        return Err(Error::ZeroVector { index: 1 });
    }
    // sqrt of the product keeps identical vectors at exactly 1
    Ok((dot(&a.0, &b.0) / (na2 * nb2).sqrt()).clamp(-1.0, 1.0))
}

pub fn cosine_distance(a: &ParameterVector, b: &ParameterVector) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Symmetric matrix of pairwise cosine distances, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DivergenceMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
        }
    }

    /// Builds a matrix from row-major entries, checking symmetry, the zero
    /// diagonal and the `[0, 2]` range exactly.
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: entries.len(),
            });
        }
        for i in 0..n {
            if entries[i * n + i] != 0.0 {
                return Err(Error::InvalidMatrix(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !(0.0..=2.0).contains(&v) {
                    return Err(Error::InvalidMatrix(format!(
                        "entry ({i},{j}) = {v} outside [0, 2]"
                    )));
                }
                if v != entries[j * n + i] {
                    return Err(Error::InvalidMatrix(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { n, entries })
    }

    /// Builds a matrix from a distance function over unordered pairs.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in (i + 1)..n {
                m.set_pair(i, j, f(i, j));
            }
        }
        Self::from_entries(n, m.entries)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn set_pair(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n + j] = v;
        self.entries[j * self.n + i] = v;
    }

    /// Restricts the matrix to the given indices, in the given order.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let n = idx.len();
        let mut entries = Vec::with_capacity(n * n);
        for &i in idx {
            for &j in idx {
                entries.push(self.get(i, j));
            }
        }
        Self { n, entries }
    }
}

/// Pairwise cosine distances of `deltas`. Each unordered pair is computed
/// once and mirrored, so symmetry and the zero diagonal hold exactly.
pub fn divergence_matrix(deltas: &[ParameterVector], exec: Exec) -> Result<DivergenceMatrix> {
    let n = deltas.len();
    if n < 2 {
        return Err(Error::InvalidMatrix(format!("need >= 2 vectors, got {n}")));
    }
    let dim = deltas[0].dim();
    for d in deltas {
        check_dims(dim, d.dim())?;
    }
    let sq_norms: Vec<f64> = deltas.iter().map(|d| dot(&d.0, &d.0)).collect();
    if let Some(index) = sq_norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroVector { index });
    }
    let rows = exec.map(n, |i| {
        ((i + 1)..n)
            .map(|j| {
                let s = dot(&deltas[i].0, &deltas[j].0) / (sq_norms[i] * sq_norms[j]).sqrt();
                1.0 - s.clamp(-1.0, 1.0)
            })
            .collect::<Vec<_>>()
    });
    let mut m = DivergenceMatrix::zeros(n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            m.set_pair(i, i + 1 + off, v);
        }
    }
    Ok(m)
}

/// Entry-wise p-norm over all `n²` entries.
pub fn matrix_p_norm(m: &DivergenceMatrix, p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidNorm(p));
    }
    let sum: f64 = m.entries.iter().map(|v| v.abs().powf(p)).sum();
    Ok(sum.powf(1.0 / p))
}

/// `(n (n - 1) 2^p)^(1/p)`: the p-norm of an `n x n` matrix whose
/// off-diagonal entries all sit at the cosine-distance ceiling of 2.
pub fn max_divergence_constant(n: usize, p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidNorm(p));
    }
    let n = n as f64;
    Ok((n * (n - 1.0) * 2f64.powf(p)).powf(1.0 / p))
}

/// Scaling policy for the temperature.
///
/// Both policies resolve to the maximal-divergence constant: cosine
/// distances are non-negative, so normalising by the attainable maximum
/// already maps the trace into `[0, 1]`. Only relative changes drive the
/// trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    #[default]
    MaximalDivergence,
    Normalising,
}

pub fn temperature(m: &DivergenceMatrix, p: f64, mode: LambdaMode) -> Result<f64> {
    let norm = matrix_p_norm(m, p)?;
    if m.n() < 2 {
        return Ok(0.0);
    }
    let lambda = match mode {
        LambdaMode::MaximalDivergence | LambdaMode::Normalising => {
            max_divergence_constant(m.n(), p)?
        }
    };
    Ok(norm / lambda)
}

/// One-shot trigger state.
///
/// With `window == 1` the trigger fires on the first `T_t >= T_{t-1}`
/// (`T_{-1} = +inf`). With `window == w > 1` it compares the mean of the
/// last `w` temperatures against the mean of the `w` before them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureState {
    pub t_prev: f64,
    pub t_curr: f64,
    pub p: f64,
    pub lambda_mode: LambdaMode,
    pub fired: bool,
    pub window: usize,
    pub history: Vec<f64>,
}

impl TemperatureState {
    pub fn new(p: f64, lambda_mode: LambdaMode, window: usize) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidNorm(p));
        }
        if window == 0 {
            return Err(Error::InvalidConfig("temperature window must be >= 1".into()));
        }
        Ok(Self {
            t_prev: f64::INFINITY,
            t_curr: f64::INFINITY,
            p,
            lambda_mode,
            fired: false,
            window,
            history: Vec::new(),
        })
    }

    /// Computes the temperature of `m`, records it, and reports whether the
    /// trigger fires on this observation.
    pub fn update_and_test_trigger(&mut self, m: &DivergenceMatrix) -> Result<bool> {
        if self.fired {
            return Err(Error::AlreadyFired);
        }
        let t = temperature(m, self.p, self.lambda_mode)?;
        self.observe(t)
    }

    /// Trigger logic on an already-computed temperature.
    pub fn observe(&mut self, t: f64) -> Result<bool> {
        if self.fired {
            return Err(Error::AlreadyFired);
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("temperature"));
        }
        self.t_prev = self.t_curr;
        self.t_curr = t;
        self.history.push(t);
        let w = self.window;
        let h = &self.history;
        let fire = if w == 1 {
            self.t_curr >= self.t_prev
        } else if h.len() >= 2 * w {
            let recent = &h[h.len() - w..];
            let before = &h[h.len() - 2 * w..h.len() - w];
            mean(recent) >= mean(before)
        } else {
            false
        };
        if fire {
            self.fired = true;
        }
        Ok(fire)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
