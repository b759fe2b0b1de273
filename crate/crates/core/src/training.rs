//! Toy manifold datasets, two-view sampling and the SSL training loop.
//!
//! Each prototype `x*_n` carries a low-rank covariance `Σ_n = s² T_n T_nᵀ`
//! whose frame `T_n` spans the manifold tangent at `x*_n` (extended by extra
//! orthonormal directions when the requested rank exceeds the manifold
//! dimension). Both views of a training pair are independent draws from the
//! same component, so all stochasticity lives in the input.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_with_factor, spd_inverse, GaussianDensity, GaussianMixture, Matrix, RngStream, Vector};
use crate::ssl_objectives::{joint_covariance, loss_gradient, EmbeddingBatch, LossSpec};
use crate::spline_net::{MlpNetwork, ParamGrads};

/// Dataset file format version.
pub const DATASET_VERSION: u32 = 1;

/// Ridge inside the Mahalanobis inverse of [`assign_prototype`].
pub const ASSIGN_RIDGE: f64 = 1e-9;

/// Minimum nearest-prototype distance, in units of `base_sigma`, for the
/// components to count as non-overlapping.
pub const SEPARATION_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Manifold {
    /// Unit circle; prototypes at equally spaced angles.
    Circle,
    /// Two turns of a helix of unit radius and unit pitch; needs `D >= 3`.
    Helix,
    /// Prototypes drawn from `N(0, 4 I)`; the frame is random.
    Blobs,
}

impl std::str::FromStr for Manifold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(Manifold::Circle),
            "helix" => Ok(Manifold::Helix),
            "blobs" => Ok(Manifold::Blobs),
            other => Err(Error::InvalidArgument(format!("unknown manifold '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldDataset {
    pub manifold: Manifold,
    pub ambient_dim: usize,
    pub tangent_rank: usize,
    pub base_sigma: f64,
    pub seed: u64,
    pub prototypes: Vec<Vector>,
    /// `base_sigma * T_n`, a `D x r` factor of each covariance.
    pub factors: Vec<Matrix>,
}

fn orthonormal_completion(first: &[Vector], dim: usize, rank: usize, rng: &mut RngStream) -> Matrix {
    let mut cols: Vec<Vector> = Vec::with_capacity(rank);
    for v in first.iter().take(rank) {
        cols.push(v.normalize());
    }
    while cols.len() < rank {
        let mut v = rng.normal_vector(dim);
        for c in &cols {
            v -= c * c.dot(&v);
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / norm);
        }
    }
    Matrix::from_columns(&cols)
}

/// Random `dim x k` matrix with orthonormal columns.
fn random_isometry(dim: usize, k: usize, rng: &mut RngStream) -> Matrix {
    orthonormal_completion(&[], dim, k, rng)
}

/// Builds `n_prototypes` components on `manifold` inside `R^ambient_dim`.
///
/// Circles in `D = 2` and helices in `D = 3` use their canonical coordinates;
/// larger `D` embeds them through a random isometry.
pub fn make_manifold_dataset(
    n_prototypes: usize,
    ambient_dim: usize,
    tangent_rank: usize,
    manifold: Manifold,
    base_sigma: f64,
    rng: &mut RngStream,
) -> Result<ManifoldDataset> {
    if tangent_rank > ambient_dim || tangent_rank == 0 {
        return Err(Error::InvalidRank { rank: tangent_rank, dim: ambient_dim });
    }
    if n_prototypes < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n_prototypes });
    }
    if !(base_sigma >= 0.0) || !base_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("base_sigma {base_sigma} must be finite and >= 0")));
    }
    let seed = rng.seed();
    let intrinsic = match manifold {
        Manifold::Circle => 2,
        Manifold::Helix => 3,
        Manifold::Blobs => ambient_dim,
    };
    if ambient_dim < intrinsic {
        return Err(Error::InvalidArgument(format!("{manifold:?} needs ambient dimension >= {intrinsic}")));
    }
    let embed = if ambient_dim == intrinsic {
        Matrix::identity(ambient_dim, intrinsic)
    } else {
        random_isometry(ambient_dim, intrinsic, rng)
    };
    let mut prototypes = Vec::with_capacity(n_prototypes);
    let mut factors = Vec::with_capacity(n_prototypes);
    for n in 0..n_prototypes {
        let (point, tangent) = match manifold {
            Manifold::Circle => {
                let t = 2.0 * PI * n as f64 / n_prototypes as f64;
                (Vector::from_row_slice(&[t.cos(), t.sin()]), Some(Vector::from_row_slice(&[-t.sin(), t.cos()])))
            }
            Manifold::Helix => {
                let t = 4.0 * PI * n as f64 / n_prototypes as f64;
                let pitch = 1.0 / (2.0 * PI);
                (
                    Vector::from_row_slice(&[t.cos(), t.sin(), pitch * t]),
                    Some(Vector::from_row_slice(&[-t.sin(), t.cos(), pitch])),
                )
            }
            Manifold::Blobs => (rng.normal_vector(ambient_dim) * 2.0, None),
        };
        let x = &embed * point;
        let frame = match tangent {
            Some(t) => orthonormal_completion(&[&embed * t], ambient_dim, tangent_rank, rng),
            None if tangent_rank == ambient_dim => Matrix::identity(ambient_dim, ambient_dim),
            None => random_isometry(ambient_dim, tangent_rank, rng),
        };
        prototypes.push(x);
        factors.push(frame * base_sigma);
    }
    Ok(ManifoldDataset { manifold, ambient_dim, tangent_rank, base_sigma, seed, prototypes, factors })
}

impl ManifoldDataset {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn covariance(&self, n: usize) -> Matrix {
        &self.factors[n] * self.factors[n].transpose()
    }

    pub fn component(&self, n: usize, noise_scale: f64) -> Result<GaussianDensity> {
        GaussianDensity::new(self.prototypes[n].clone(), self.covariance(n) * noise_scale.powi(2))
    }

    /// Uniform mixture over all components with covariances scaled by `noise_scale²`.
    pub fn mixture(&self, noise_scale: f64) -> Result<GaussianMixture> {
        GaussianMixture::uniform((0..self.len()).map(|n| self.component(n, noise_scale)).collect::<Result<_>>()?)
    }

    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                best = best.min((&self.prototypes[i] - &self.prototypes[j]).norm());
            }
        }
        best
    }

    /// Whether every prototype pair is at least `6 base_sigma` apart.
    pub fn is_well_separated(&self) -> bool {
        self.min_separation() >= SEPARATION_SIGMAS * self.base_sigma
    }

    /// Prototypes as rows.
    pub fn prototype_matrix(&self) -> Matrix {
        Matrix::from_fn(self.len(), self.ambient_dim, |i, j| self.prototypes[i][j])
    }

    pub fn to_file(&self) -> DatasetFile {
        DatasetFile {
            format: "infomax-lab/dataset".into(),
            format_version: DATASET_VERSION,
            manifold: self.manifold,
            ambient_dim: self.ambient_dim,
            tangent_rank: self.tangent_rank,
            base_sigma: self.base_sigma,
            seed: self.seed,
            prototypes: self.prototypes.iter().map(|p| p.as_slice().to_vec()).collect(),
            factors: self.factors.iter().map(|f| f.transpose().as_slice().to_vec()).collect(),
        }
    }

    pub fn from_file(f: &DatasetFile) -> Result<Self> {
        if f.format_version != DATASET_VERSION {
            return Err(Error::UnsupportedVersion { kind: "dataset", version: f.format_version });
        }
        let (d, r) = (f.ambient_dim, f.tangent_rank);
        if r > d || r == 0 {
            return Err(Error::InvalidRank { rank: r, dim: d });
        }
        if f.prototypes.len() != f.factors.len() || f.prototypes.len() < 2 {
            return Err(Error::ShapeMismatch("prototype and factor counts differ or are < 2".into()));
        }
        let mut prototypes = Vec::new();
        let mut factors = Vec::new();
        for (p, fac) in f.prototypes.iter().zip(&f.factors) {
            if p.len() != d || fac.len() != d * r {
                return Err(Error::ShapeMismatch(format!("prototype/factor sizes do not match {d}x{r}")));
            }
            prototypes.push(Vector::from_column_slice(p));
            factors.push(Matrix::from_row_slice(d, r, fac));
        }
        Ok(Self {
            manifold: f.manifold,
            ambient_dim: d,
            tangent_rank: r,
            base_sigma: f.base_sigma,
            seed: f.seed,
            prototypes,
            factors,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: DatasetFile = serde_json::from_str(text)
            .map_err(|e| Error::Parse { what: "dataset".into(), message: e.to_string() })?;
        Self::from_file(&f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::report::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk dataset layout (JSON). Factors are row-major `D x r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub format: String,
    pub format_version: u32,
    pub manifold: Manifold,
    pub ambient_dim: usize,
    pub tangent_rank: usize,
    pub base_sigma: f64,
    pub seed: u64,
    pub prototypes: Vec<Vec<f64>>,
    pub factors: Vec<Vec<f64>>,
}

/// Mahalanobis nearest-prototype assignment with cached inverses.
pub struct PrototypeAssigner<'a> {
    ds: &'a ManifoldDataset,
    precisions: Vec<Matrix>,
}

impl<'a> PrototypeAssigner<'a> {
    pub fn new(ds: &'a ManifoldDataset) -> Result<Self> {
        let precisions = (0..ds.len()).map(|n| spd_inverse(&ds.covariance(n), ASSIGN_RIDGE)).collect::<Result<_>>()?;
        Ok(Self { ds, precisions })
    }

    /// `argmin_n (x - x*_n)ᵀ (Σ_n + ridge I)⁻¹ (x - x*_n)`; ties go to the lowest index.
    pub fn assign(&self, x: &Vector) -> Result<usize> {
        if x.len() != self.ds.ambient_dim {
            return Err(Error::DimensionMismatch { expected: self.ds.ambient_dim, found: x.len() });
        }
        let mut best = (f64::INFINITY, 0);
        for (n, (p, prec)) in self.ds.prototypes.iter().zip(&self.precisions).enumerate() {
            let d = x - p;
            let dist = d.dot(&(prec * &d));
            if dist < best.0 {
                best = (dist, n);
            }
        }
        Ok(best.1)
    }
}

pub fn assign_prototype(ds: &ManifoldDataset, x: &Vector) -> Result<usize> {
    PrototypeAssigner::new(ds)?.assign(x)
}

/// A batch of paired views and the prototype each pair came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoViews {
    pub x: Matrix,
    pub x_prime: Matrix,
    pub indices: Vec<usize>,
}

pub fn sample_two_views(ds: &ManifoldDataset, batch: usize, noise_scale: f64, rng: &mut RngStream) -> Result<TwoViews> {
    sample_two_views_scaled(ds, batch, noise_scale, noise_scale, rng)
}

/// Like [`sample_two_views`] with separate noise multipliers for the two views.
pub fn sample_two_views_scaled(
    ds: &ManifoldDataset,
    batch: usize,
    scale_a: f64,
    scale_b: f64,
    rng: &mut RngStream,
) -> Result<TwoViews> {
    if batch == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let d = ds.ambient_dim;
    let mut x = Matrix::zeros(batch, d);
    let mut x_prime = Matrix::zeros(batch, d);
    let mut indices = Vec::with_capacity(batch);
    for i in 0..batch {
        let n = rng.index(ds.len());
        let a = sample_with_factor(&ds.prototypes[n], &(&ds.factors[n] * scale_a), 1, rng);
        let b = sample_with_factor(&ds.prototypes[n], &(&ds.factors[n] * scale_b), 1, rng);
        x.set_row(i, &a.row(0));
        x_prime.set_row(i, &b.row(0));
        indices.push(n);
    }
    Ok(TwoViews { x, x_prime, indices })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd { .. } => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Multiplier on each component's standard deviation for the first view.
    pub noise_scale: f64,
    /// Second-view multiplier; `None` reuses `noise_scale`.
    pub noise_scale_prime: Option<f64>,
    pub seed: u64,
    pub loss: LossSpec,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if !(self.noise_scale >= 0.0) || self.noise_scale_prime.is_some_and(|s| !(s >= 0.0)) {
            return Err(Error::InvalidArgument("noise scales must be >= 0".into()));
        }
        Ok(())
    }

    /// `epochs * max(1, dataset_size / batch_size)`.
    pub fn total_steps(&self, dataset_size: usize) -> usize {
        self.epochs * (dataset_size / self.batch_size).max(1)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub variance: Option<f64>,
    pub covariance: Option<f64>,
    pub invariance: Option<f64>,
    pub infonce: Option<f64>,
    pub lr: f64,
    pub seed: u64,
}

pub struct TrainOutcome {
    pub net: MlpNetwork,
    pub log: Vec<StepLog>,
}

struct OptimizerState {
    first: ParamGrads,
    second: ParamGrads,
    t: i32,
}

fn apply_update(net: &mut MlpNetwork, grads: &ParamGrads, state: &mut OptimizerState, opt: Optimizer, lr: f64) {
    state.t += 1;
    let layers = net.layers_mut();
    match opt {
        Optimizer::Sgd { momentum } => {
            for (l, layer) in layers.iter_mut().enumerate() {
                let vw = &mut state.first.weights[l];
                *vw = &*vw * momentum + &grads.weights[l];
                layer.weight -= &*vw * lr;
                let vb = &mut state.first.biases[l];
                *vb = &*vb * momentum + &grads.biases[l];
                layer.bias -= &*vb * lr;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let c1 = 1.0 - beta1.powi(state.t);
            let c2 = 1.0 - beta2.powi(state.t);
            let step = |param: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..param.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    param[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            };
            for (l, layer) in layers.iter_mut().enumerate() {
                step(
                    layer.weight.as_mut_slice(),
                    grads.weights[l].as_slice(),
                    state.first.weights[l].as_mut_slice(),
                    state.second.weights[l].as_mut_slice(),
                );
                step(
                    layer.bias.as_mut_slice(),
                    grads.biases[l].as_slice(),
                    state.first.biases[l].as_mut_slice(),
                    state.second.biases[l].as_mut_slice(),
                );
            }
        }
    }
}

/// Runs `cfg.total_steps(ds.len())` optimizer steps on freshly sampled view pairs.
pub fn train(net: &MlpNetwork, ds: &ManifoldDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if net.input_dim() != ds.ambient_dim {
        return Err(Error::DimensionMismatch { expected: ds.ambient_dim, found: net.input_dim() });
    }
    let mut net = net.clone();
    let mut state = OptimizerState { first: ParamGrads::zeros_like(&net), second: ParamGrads::zeros_like(&net), t: 0 };
    let mut rng = RngStream::derive(cfg.seed, "train", 0);
    let steps = cfg.total_steps(ds.len());
    let scale_b = cfg.noise_scale_prime.unwrap_or(cfg.noise_scale);
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let views = sample_two_views_scaled(ds, cfg.batch_size, cfg.noise_scale, scale_b, &mut rng)?;
        let (eval, grads) = match loss_gradient(&net, &views.x, &views.x_prime, &cfg.loss) {
            Ok(v) => v,
            Err(Error::InvalidArgument(_)) => return Err(Error::DivergenceDetected { step }),
            Err(e) => return Err(e),
        };
        if !eval.total.is_finite() || grads.weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::DivergenceDetected { step });
        }
        let b = eval.breakdown;
        log.push(StepLog {
            step,
            total: eval.total,
            variance: b.map(|b| b.variance_term),
            covariance: b.map(|b| b.covariance_term),
            invariance: b.map(|b| b.invariance_term),
            infonce: if b.is_none() { Some(eval.total) } else { None },
            lr: cfg.learning_rate,
            seed: cfg.seed,
        });
        apply_update(&mut net, &grads, &mut state, cfg.optimizer, cfg.learning_rate);
    }
    Ok(TrainOutcome { net, log })
}

/// Joint covariance of the embeddings of both views (the matrix VICReg regularizes).
pub fn embedding_covariance(net: &MlpNetwork, views: &TwoViews) -> Result<Matrix> {
    let z = EmbeddingBatch::new(net.forward_rows(&views.x)?)?;
    let zp = EmbeddingBatch::new(net.forward_rows(&views.x_prime)?)?;
    joint_covariance(&z, &zp)
}

/// Metrics CSV: `step,total,variance,covariance,invariance,infonce,lr,seed`.
/// Columns that do not apply to the loss are left empty.
pub fn metrics_table(log: &[StepLog]) -> crate::report::CsvTable {
    use crate::report::{Cell, CsvTable};
    let opt = |v: Option<f64>| v.map_or(Cell::Text(String::new()), Cell::Float);
    let mut t = CsvTable::new(&["step", "total", "variance", "covariance", "invariance", "infonce", "lr", "seed"]);
    for s in log {
        t.push(vec![
            Cell::from(s.step),
            Cell::Float(s.total),
            opt(s.variance),
            opt(s.covariance),
            opt(s.invariance),
            opt(s.infonce),
            Cell::Float(s.lr),
            Cell::from(s.seed),
        ]);
    }
    t
}
