//! Numerical building blocks shared by every trainable model.

use rand::Rng;

use crate::error::{Error, Result};

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln σ(x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-major `rows × dim` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be at least 1");
        EmbeddingMatrix {
            rows,
            dim,
            values: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        if values.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                found: values.len(),
            });
        }
        Ok(EmbeddingMatrix { rows, dim, values })
    }

    /// Entries drawn i.i.d. uniform in `(-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, dim: usize, bound: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(rows, dim);
        if bound > 0.0 {
            for v in &mut m.values {
                *v = rng.gen_range(-bound..bound);
            }
        }
        m
    }

    /// Embedding initialisation: uniform in `(-1/(2d), 1/(2d))`.
    pub fn init_embedding<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Self {
        Self::uniform(rows, dim, 0.5 / dim as f64, rng)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `M · x` treating rows as output coordinates; `x.len() == dim`.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }

    /// `out += Mᵀ · y`; `y.len() == rows`.
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.dim);
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), out);
            }
        }
    }
}

/// Gradient accumulator for an [`EmbeddingMatrix`] that remembers which rows
/// received a contribution. Dense storage, reused across batches.
#[derive(Debug, Clone)]
pub struct RowGrads {
    dim: usize,
    values: Vec<f64>,
    touched: Vec<bool>,
    touched_rows: Vec<usize>,
}

impl RowGrads {
    pub fn new(rows: usize, dim: usize) -> Self {
        RowGrads {
            dim,
            values: vec![0.0; rows * dim],
            touched: vec![false; rows],
            touched_rows: Vec::new(),
        }
    }

    pub fn for_matrix(m: &EmbeddingMatrix) -> Self {
        Self::new(m.rows(), m.dim())
    }

    /// Mutable gradient row; marks the row as touched.
    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        if !self.touched[r] {
            self.touched[r] = true;
            self.touched_rows.push(r);
        }
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn add(&mut self, r: usize, alpha: f64, x: &[f64]) {
        axpy(alpha, x, self.row_mut(r));
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn is_touched(&self, r: usize) -> bool {
        self.touched[r]
    }

    /// Touched rows in the order they were first touched.
    pub fn touched_rows(&self) -> &[usize] {
        &self.touched_rows
    }

    pub fn clear(&mut self) {
        for &r in &self.touched_rows {
            self.touched[r] = false;
            self.values[r * self.dim..(r + 1) * self.dim].fill(0.0);
        }
        self.touched_rows.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Adam moments for one matrix. Only rows touched in a batch are updated
/// (lazy sparse Adam); the step counter advances once per [`AdamState::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(rows: usize, dim: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; rows * dim],
            v: vec![0.0; rows * dim],
            t: 0,
        }
    }

    pub fn for_matrix(m: &EmbeddingMatrix, config: AdamConfig) -> Self {
        Self::new(m.rows(), m.dim(), config)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected update to every touched row of `params`.
    /// Nothing is modified if any touched gradient is non-finite.
    pub fn step(&mut self, params: &mut EmbeddingMatrix, grads: &RowGrads, name: &'static str) -> Result<()> {
        let dim = params.dim();
        debug_assert_eq!(grads.dim, dim);
        for &r in grads.touched_rows() {
            if grads.row(r).iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { matrix: name, row: r });
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for &r in grads.touched_rows() {
            let g = grads.row(r);
            let base = r * dim;
            let p = params.row_mut(r);
            for i in 0..dim {
                let m = &mut self.m[base + i];
                let v = &mut self.v[base + i];
                *m = beta1 * *m + (1.0 - beta1) * g[i];
                *v = beta2 * *v + (1.0 - beta2) * g[i] * g[i];
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Inverted dropout. `p` is the drop probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    p: f64,
    pub training: bool,
}

impl DropoutSpec {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability must lie in [0, 1), got {p}")));
        }
        Ok(DropoutSpec { p, training: true })
    }

    pub fn disabled() -> Self {
        DropoutSpec { p: 0.0, training: false }
    }

    pub fn eval(self) -> Self {
        DropoutSpec {
            training: false,
            ..self
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// True when a forward pass actually drops coordinates.
    pub fn is_active(&self) -> bool {
        self.training && self.p > 0.0
    }

    /// Draws a mask of `dim` entries, each `0` with probability `p` and
    /// `1/(1-p)` otherwise. Inactive specs return all ones and consume no
    /// randomness.
    pub fn sample_mask<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        if !self.is_active() {
            return vec![1.0; dim];
        }
        let keep = 1.0 / (1.0 - self.p);
        (0..dim)
            .map(|_| if rng.gen::<f64>() < self.p { 0.0 } else { keep })
            .collect()
    }
}

/// Returns `row ⊙ mask` together with the mask, so the backward pass can
/// scale gradients by the same mask.
pub fn apply_dropout<R: Rng + ?Sized>(row: &[f64], spec: &DropoutSpec, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mask = spec.sample_mask(row.len(), rng);
    let out = row.iter().zip(&mask).map(|(x, m)| x * m).collect();
    (out, mask)
}

pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Relative error used by [`finite_diff_check`].
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compares `analytic` against central differences of `f` at `point` and
/// returns the largest per-coordinate relative error.
pub fn finite_diff_check<F>(mut f: F, analytic: &[f64], point: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), point.len());
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x);
        x[i] = orig - h;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
