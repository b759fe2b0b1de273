//! Dense linear algebra helpers, Gaussian densities and seeded sampling.
//!
//! Matrices and vectors are `nalgebra` dynamic types. Entropies are in nats.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Ridge added to the diagonal of estimated covariances before taking log-determinants.
pub const DEFAULT_RIDGE: f64 = 1e-9;

/// Relative tolerance for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Name of the only sampling algorithm: ChaCha20 keyed by the 64-bit seed,
/// with the ChaCha stream id used for sub-streams.
pub const RNG_ALGORITHM: &str = "chacha20";

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn check_square(m: &Matrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Largest `|m_ij - m_ji|` relative to the largest entry (0 for the zero matrix).
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows().min(m.ncols());
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Lower-triangular Cholesky factor of `m + ridge * I`.
///
/// Only the lower triangle of `m` is read.
pub fn cholesky_lower(m: &Matrix, ridge: f64) -> Result<Matrix> {
    let n = check_square(m)?;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)] + ridge;
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: diag });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// `log det(m + ridge * I)` through the Cholesky factor.
pub fn cholesky_logdet(m: &Matrix, ridge: f64) -> Result<f64> {
    let l = cholesky_lower(m, ridge)?;
    Ok(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn forward_substitute(l: &Matrix, b: &Vector) -> Vector {
    let n = l.nrows();
    let mut y = Vector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Inverse of a symmetric positive definite matrix (plus ridge) via Cholesky.
pub fn spd_inverse(m: &Matrix, ridge: f64) -> Result<Matrix> {
    let n = check_square(m)?;
    let l = cholesky_lower(m, ridge)?;
    let mut inv = Matrix::zeros(n, n);
    for c in 0..n {
        let mut e = Vector::zeros(n);
        e[c] = 1.0;
        let y = forward_substitute(&l, &e);
        // back substitution with L^T
        let mut x = Vector::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        inv.set_column(c, &x);
    }
    Ok(symmetrize(&inv))
}

/// Eigenvalues of a symmetric matrix, sorted in descending order.
///
/// The input is symmetrized before the decomposition.
pub fn sym_eigenvalues(m: &Matrix) -> Result<Vector> {
    check_square(m)?;
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let mut values: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(Vector::from_vec(values))
}

/// A factor `F` with `F Fᵀ = m` for a PSD matrix. Uses Cholesky when it
/// succeeds and a clamped eigendecomposition for singular inputs.
pub fn psd_factor(m: &Matrix) -> Result<Matrix> {
    let n = check_square(m)?;
    if let Ok(l) = cholesky_lower(m, 0.0) {
        return Ok(l);
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let floor = -SYMMETRY_TOL * max_abs(m);
    let mut f = eig.eigenvectors.clone();
    for j in 0..n {
        let lambda = eig.eigenvalues[j];
        if lambda < floor {
            return Err(Error::NotPositiveDefinite { pivot: j, value: lambda });
        }
        let s = lambda.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    Ok(f)
}

/// Unbiased sample covariance of the rows of `rows`.
pub fn row_covariance(rows: &Matrix) -> Result<(Vector, Matrix)> {
    let n = rows.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mean = rows.row_mean().transpose();
    let mut centered = rows.clone();
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, symmetrize(&cov)))
}

/// A multivariate Gaussian with PSD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    mean: Vector,
    cov: Matrix,
}

impl GaussianDensity {
    /// Validates shape, symmetry and positive semi-definiteness.
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        let d = check_square(&cov)?;
        if mean.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: mean.len() });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Gaussian parameters".into()));
        }
        let asym = asymmetry(&cov);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        if d > 0 && cholesky_lower(&cov, 0.0).is_err() {
            let scale = max_abs(&cov);
            let min_eig = sym_eigenvalues(&cov)?[d - 1];
            if min_eig < -SYMMETRY_TOL * scale {
                return Err(Error::NotPositiveDefinite { pivot: d - 1, value: min_eig });
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn isotropic(mean: Vector, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, Matrix::identity(d, d) * variance)
    }

    pub fn standard(d: usize) -> Self {
        Self { mean: Vector::zeros(d), cov: Matrix::identity(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }
}

/// Entropy in nats of `N(mean, cov + ridge I)`.
pub fn gaussian_entropy(g: &GaussianDensity, ridge: f64) -> Result<f64> {
    let d = g.dim() as f64;
    Ok(0.5 * d * (2.0 * PI * E).ln() + 0.5 * cholesky_logdet(g.cov(), ridge)?)
}

/// Log-density of a Gaussian with a cached Cholesky factor, for repeated evaluation.
#[derive(Debug, Clone)]
pub struct GaussianLogPdf {
    mean: Vector,
    chol: Matrix,
    norm: f64,
}

impl GaussianLogPdf {
    pub fn new(g: &GaussianDensity, ridge: f64) -> Result<Self> {
        let chol = cholesky_lower(g.cov(), ridge)?;
        let logdet = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let norm = -0.5 * (g.dim() as f64 * (2.0 * PI).ln() + logdet);
        Ok(Self { mean: g.mean().clone(), chol, norm })
    }

    pub fn eval(&self, x: &Vector) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), found: x.len() });
        }
        let y = forward_substitute(&self.chol, &(x - &self.mean));
        Ok(self.norm - 0.5 * y.norm_squared())
    }
}

pub fn gaussian_logpdf(g: &GaussianDensity, x: &Vector, ridge: f64) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), found: x.len() });
    }
    GaussianLogPdf::new(g, ridge)?.eval(x)
}

/// `n` i.i.d. draws from `g`, one per row.
pub fn sample_gaussian(g: &GaussianDensity, n: usize, rng: &mut RngStream) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let factor = psd_factor(g.cov())?;
    Ok(sample_with_factor(g.mean(), &factor, n, rng))
}

/// Draws `mean + factor * eps` with `eps ~ N(0, I_r)` where `r = factor.ncols()`.
pub fn sample_with_factor(mean: &Vector, factor: &Matrix, n: usize, rng: &mut RngStream) -> Matrix {
    let d = mean.len();
    let r = factor.ncols();
    let mut out = Matrix::zeros(n, d);
    let mut eps = Vector::zeros(r);
    for i in 0..n {
        for e in eps.iter_mut() {
            *e = rng.standard_normal();
        }
        let x = mean + factor * &eps;
        out.set_row(i, &x.transpose());
    }
    out
}

/// Weighted mixture of Gaussians sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianDensity>,
    weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianDensity>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        if components.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: components.len(), found: weights.len() });
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: c.dim() });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("mixture weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { components, weights })
    }

    /// Equal weights `1/N`.
    pub fn uniform(components: Vec<GaussianDensity>) -> Result<Self> {
        let n = components.len();
        Self::new(components, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianDensity] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Exact mean and covariance of the mixture.
    pub fn moments(&self) -> (Vector, Matrix) {
        let d = self.dim();
        let mut mean = Vector::zeros(d);
        for (c, w) in self.components.iter().zip(&self.weights) {
            mean += c.mean() * *w;
        }
        let mut cov = Matrix::zeros(d, d);
        for (c, w) in self.components.iter().zip(&self.weights) {
            let dm = c.mean() - &mean;
            cov += (c.cov() + &dm * dm.transpose()) * *w;
        }
        (mean, symmetrize(&cov))
    }

    /// Draws `n` samples (rows) and the component index of each.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<(Matrix, Vec<usize>)> {
        let factors = self.components.iter().map(|c| psd_factor(c.cov())).collect::<Result<Vec<_>>>()?;
        let mut cumulative = Vec::with_capacity(self.weights.len());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cumulative.push(acc);
        }
        let d = self.dim();
        let mut out = Matrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let u = rng.uniform() * acc;
            let k = cumulative.iter().position(|c| u < *c).unwrap_or(self.len() - 1);
            let x = sample_with_factor(self.components[k].mean(), &factors[k], 1, rng);
            out.set_row(i, &x.row(0));
            labels.push(k);
        }
        Ok((out, labels))
    }
}

/// Seeded random stream. Identical `(seed, stream)` pairs yield identical
/// sequences on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// Independent stream identified by `(seed, label, index)`.
    ///
    /// The label is hashed with 64-bit FNV-1a and mixed with the index into the
    /// ChaCha stream id, so derivation does not depend on std's hasher.
    pub fn derive(seed: u64, label: &str, index: u64) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Self::with_stream(seed, splitmix64(h ^ splitmix64(index)))
    }

    /// Child stream of this one, keyed by `(label, index)`.
    pub fn fork(&self, label: &str, index: u64) -> Self {
        Self::derive(self.seed ^ splitmix64(self.stream), label, index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn normal_vector(&mut self, d: usize) -> Vector {
        Vector::from_fn(d, |_, _| self.standard_normal())
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        // row-major fill order
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.standard_normal();
            }
        }
        m
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Random symmetric positive definite matrix `G Gᵀ / d + jitter I`.
pub fn random_spd(d: usize, jitter: f64, rng: &mut RngStream) -> Matrix {
    let g = rng.normal_matrix(d, d);
    symmetrize(&(&g * g.transpose() / d as f64 + Matrix::identity(d, d) * jitter))
}

/// Numerically stable `log Σ exp(v_i)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
