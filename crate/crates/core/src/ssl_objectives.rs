//! Self-supervised losses on paired embedding batches, their exact gradients
//! through an [`MlpNetwork`], and a central-difference gradient checker.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::spline_net::{MlpNetwork, ParamCoord, ParamGrads};

/// `N x K` matrix of embeddings, one row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch(Matrix);

impl EmbeddingBatch {
    pub fn new(rows: Matrix) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding batch contains non-finite values".into()));
        }
        Ok(Self(rows))
    }

    pub fn rows(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn check_same_shape(&self, other: &EmbeddingBatch) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: other.len() });
        }
        Ok(())
    }

    /// Row stack `[self; other]`.
    pub fn stack(&self, other: &EmbeddingBatch) -> Matrix {
        let (n, m, k) = (self.len(), other.len(), self.dim());
        let mut out = Matrix::zeros(n + m, k);
        out.rows_mut(0, n).copy_from(&self.0);
        out.rows_mut(n, m).copy_from(&other.0);
        out
    }
}

/// Weights of the three VICReg terms.
///
/// `hinge_target` is the standard deviation the variance hinge aims for and
/// `gamma_inv` weighs the invariance residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VicregParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_inv: f64,
    pub hinge_target: f64,
    pub eps: f64,
}

impl Default for VicregParams {
    fn default() -> Self {
        Self { alpha: 25.0, beta: 1.0, gamma_inv: 25.0, hinge_target: 1.0, eps: 1e-4 }
    }
}

impl VicregParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.alpha, self.beta, self.gamma_inv].iter().all(|v| *v >= 0.0 && v.is_finite());
        if !nonneg || !(self.hinge_target > 0.0) || !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid VICReg parameters {self:?}")));
        }
        Ok(())
    }

    /// Only the invariance term (no variance or covariance regularization).
    pub fn invariance_only(gamma_inv: f64) -> Self {
        Self { alpha: 0.0, beta: 0.0, gamma_inv, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub variance_term: f64,
    pub covariance_term: f64,
    pub invariance_term: f64,
}

/// Unbiased covariance of the `2N x K` stack `[z; z']`.
pub fn joint_covariance(z: &EmbeddingBatch, z_prime: &EmbeddingBatch) -> Result<Matrix> {
    z.check_same_shape(z_prime)?;
    Ok(centered_stack(z, z_prime)?.1)
}

fn centered_stack(z: &EmbeddingBatch, z_prime: &EmbeddingBatch) -> Result<(Matrix, Matrix)> {
    let mut y = z.stack(z_prime);
    let m = y.nrows();
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: m });
    }
    let mean = y.row_mean();
    for mut r in y.row_iter_mut() {
        r -= &mean;
    }
    let cov = y.transpose() * &y / (m as f64 - 1.0);
    Ok((y, crate::numerics::symmetrize(&cov)))
}

/// Which variance hinges are active (`hinge_target > sqrt(C_kk + eps)`).
pub fn vicreg_hinge_flags(cov: &Matrix, p: &VicregParams) -> Vec<bool> {
    (0..cov.nrows()).map(|k| p.hinge_target - (cov[(k, k)] + p.eps).sqrt() > 0.0).collect()
}

pub fn vicreg_loss(z: &EmbeddingBatch, z_prime: &EmbeddingBatch, p: &VicregParams) -> Result<LossBreakdown> {
    Ok(vicreg_loss_grad_inner(z, z_prime, p, false)?.0)
}

/// Loss and its gradients with respect to `z` and `z'`.
pub fn vicreg_loss_grad(
    z: &EmbeddingBatch,
    z_prime: &EmbeddingBatch,
    p: &VicregParams,
) -> Result<(LossBreakdown, Matrix, Matrix)> {
    let (loss, grads) = vicreg_loss_grad_inner(z, z_prime, p, true)?;
    let (dz, dzp) = grads.expect("gradients requested");
    Ok((loss, dz, dzp))
}

#[allow(clippy::type_complexity)]
fn vicreg_loss_grad_inner(
    z: &EmbeddingBatch,
    z_prime: &EmbeddingBatch,
    p: &VicregParams,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<(Matrix, Matrix)>)> {
    p.validate()?;
    z.check_same_shape(z_prime)?;
    let (n, k) = (z.len(), z.dim());
    let (centered, cov) = centered_stack(z, z_prime)?;
    let kf = k as f64;

    let mut variance_term = 0.0;
    let mut covariance_term = 0.0;
    let mut g = Matrix::zeros(k, k);
    for a in 0..k {
        let sd = (cov[(a, a)] + p.eps).sqrt();
        let hinge = p.hinge_target - sd;
        if hinge > 0.0 {
            variance_term += p.alpha * hinge / kf;
            g[(a, a)] = -p.alpha / (kf * 2.0 * sd);
        }
        for b in 0..k {
            if a != b {
                covariance_term += p.beta * cov[(a, b)].powi(2) / kf;
                g[(a, b)] = 2.0 * p.beta * cov[(a, b)] / kf;
            }
        }
    }
    let resid = z.rows() - z_prime.rows();
    let invariance_term = p.gamma_inv * resid.norm_squared() / n as f64;
    let loss = LossBreakdown {
        total: variance_term + covariance_term + invariance_term,
        variance_term,
        covariance_term,
        invariance_term,
    };
    if !with_grad {
        return Ok((loss, None));
    }
    let m = centered.nrows() as f64;
    let d_stack = &centered * &g * (2.0 / (m - 1.0));
    let d_inv = &resid * (2.0 * p.gamma_inv / n as f64);
    let dz = d_stack.rows(0, n).into_owned() + &d_inv;
    let dzp = d_stack.rows(n, n).into_owned() - &d_inv;
    Ok((loss, Some((dz, dzp))))
}

fn normalize_rows(m: &Matrix) -> Result<(Matrix, Vector)> {
    let mut out = m.clone();
    let mut norms = Vector::zeros(m.nrows());
    for (i, mut r) in out.row_iter_mut().enumerate() {
        let norm = r.norm();
        if norm < 1e-12 {
            return Err(Error::ZeroNormRow { row: i });
        }
        norms[i] = norm;
        r /= norm;
    }
    Ok((out, norms))
}

fn softmax_rows(s: &Matrix) -> Matrix {
    let mut out = s.clone();
    for mut r in out.row_iter_mut() {
        let max = r.max();
        r.apply(|v| *v = (*v - max).exp());
        let total = r.sum();
        r /= total;
    }
    out
}

pub fn infonce_loss(z: &EmbeddingBatch, z_prime: &EmbeddingBatch, temperature: f64) -> Result<f64> {
    Ok(infonce_inner(z, z_prime, temperature, false)?.0)
}

/// Symmetric InfoNCE with cosine similarity; returns the loss and its
/// gradients with respect to `z` and `z'`.
pub fn infonce_loss_grad(z: &EmbeddingBatch, z_prime: &EmbeddingBatch, temperature: f64) -> Result<(f64, Matrix, Matrix)> {
    let (loss, g) = infonce_inner(z, z_prime, temperature, true)?;
    let (dz, dzp) = g.expect("gradients requested");
    Ok((loss, dz, dzp))
}

#[allow(clippy::type_complexity)]
fn infonce_inner(
    z: &EmbeddingBatch,
    z_prime: &EmbeddingBatch,
    temperature: f64,
    with_grad: bool,
) -> Result<(f64, Option<(Matrix, Matrix)>)> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    z.check_same_shape(z_prime)?;
    let n = z.len();
    let (u, u_norm) = normalize_rows(z.rows())?;
    let (v, v_norm) = normalize_rows(z_prime.rows())?;
    let s = &u * v.transpose() / temperature;
    let p_rows = softmax_rows(&s);
    let p_cols = softmax_rows(&s.transpose());
    let mut loss = 0.0;
    for i in 0..n {
        loss -= p_rows[(i, i)].ln() + p_cols[(i, i)].ln();
    }
    let scale = 1.0 / (2.0 * n as f64);
    loss *= scale;
    if n == 1 {
        loss = 0.0;
    }
    if !with_grad {
        return Ok((loss, None));
    }
    let eye = Matrix::identity(n, n);
    let ds = ((&p_rows - &eye) + (&p_cols - &eye).transpose()) * scale;
    let du = &ds * &v / temperature;
    let dv = ds.transpose() * &u / temperature;
    let back = |d: Matrix, unit: &Matrix, norms: &Vector| {
        let mut out = d;
        for i in 0..n {
            let radial = unit.row(i).dot(&out.row(i));
            let row = (out.row(i) - unit.row(i) * radial) / norms[i];
            out.set_row(i, &row);
        }
        out
    };
    Ok((loss, Some((back(du, &u, &u_norm), back(dv, &v, &v_norm)))))
}

/// Which loss to train or check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Vicreg(VicregParams),
    InfoNce { temperature: f64 },
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Vicreg(_) => "vicreg",
            LossSpec::InfoNce { .. } => "infonce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub total: f64,
    /// Term breakdown (VICReg only).
    pub breakdown: Option<LossBreakdown>,
}

pub fn evaluate_loss(z: &EmbeddingBatch, z_prime: &EmbeddingBatch, spec: &LossSpec) -> Result<LossEval> {
    match spec {
        LossSpec::Vicreg(p) => {
            let b = vicreg_loss(z, z_prime, p)?;
            Ok(LossEval { total: b.total, breakdown: Some(b) })
        }
        LossSpec::InfoNce { temperature } => {
            Ok(LossEval { total: infonce_loss(z, z_prime, *temperature)?, breakdown: None })
        }
    }
}

pub fn evaluate_loss_grad(
    z: &EmbeddingBatch,
    z_prime: &EmbeddingBatch,
    spec: &LossSpec,
) -> Result<(LossEval, Matrix, Matrix)> {
    match spec {
        LossSpec::Vicreg(p) => {
            let (b, dz, dzp) = vicreg_loss_grad(z, z_prime, p)?;
            Ok((LossEval { total: b.total, breakdown: Some(b) }, dz, dzp))
        }
        LossSpec::InfoNce { temperature } => {
            let (l, dz, dzp) = infonce_loss_grad(z, z_prime, *temperature)?;
            Ok((LossEval { total: l, breakdown: None }, dz, dzp))
        }
    }
}

fn check_batch(net: &MlpNetwork, x: &Matrix, x_prime: &Matrix) -> Result<()> {
    if x.shape() != x_prime.shape() {
        return Err(Error::ShapeMismatch(format!("views {:?} and {:?}", x.shape(), x_prime.shape())));
    }
    if x.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), found: x.ncols() });
    }
    Ok(())
}

/// `loss(f(x), f(x'))` with shared weights.
pub fn network_loss(net: &MlpNetwork, x: &Matrix, x_prime: &Matrix, spec: &LossSpec) -> Result<LossEval> {
    check_batch(net, x, x_prime)?;
    let z = EmbeddingBatch::new(net.forward_rows(x)?)?;
    let zp = EmbeddingBatch::new(net.forward_rows(x_prime)?)?;
    evaluate_loss(&z, &zp, spec)
}

/// Exact gradient of `loss(f(x), f(x'))` with respect to every network
/// parameter, summed over both branches.
pub fn loss_gradient(net: &MlpNetwork, x: &Matrix, x_prime: &Matrix, spec: &LossSpec) -> Result<(LossEval, ParamGrads)> {
    check_batch(net, x, x_prime)?;
    let ta = net.forward_batch(x)?;
    let tb = net.forward_batch(x_prime)?;
    let z = EmbeddingBatch::new(ta.output().clone())?;
    let zp = EmbeddingBatch::new(tb.output().clone())?;
    let (eval, dz, dzp) = evaluate_loss_grad(&z, &zp, spec)?;
    let mut grads = net.backward(&ta, &dz)?;
    grads.add_assign(&net.backward(&tb, &dzp)?);
    Ok((eval, grads))
}

/// Absolute floor of the denominator in relative gradient errors.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst: Option<ParamCoord>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Parameters whose `±h` perturbation moves an activation pattern or a variance hinge.
    pub excluded: usize,
}

/// Activation bits of every sample in both views, plus the VICReg hinge flags.
fn boundary_signature(net: &MlpNetwork, x: &Matrix, x_prime: &Matrix, spec: &LossSpec) -> Result<Vec<bool>> {
    let ta = net.forward_batch(x)?;
    let tb = net.forward_batch(x_prime)?;
    let mut sig = Vec::new();
    for t in [&ta, &tb] {
        for p in &t.preacts[..t.preacts.len() - 1] {
            sig.extend(p.iter().map(|v| *v > 0.0));
        }
    }
    if let LossSpec::Vicreg(p) = spec {
        let z = EmbeddingBatch::new(ta.output().clone())?;
        let zp = EmbeddingBatch::new(tb.output().clone())?;
        sig.extend(vicreg_hinge_flags(&joint_covariance(&z, &zp)?, p));
    }
    Ok(sig)
}

/// Central-difference check of [`loss_gradient`] over every parameter.
///
/// Each perturbed loss is a full re-evaluation. A parameter is excluded when
/// either perturbation changes an activation pattern or a hinge state, since
/// the loss is not differentiable across those boundaries.
pub fn gradcheck(net: &MlpNetwork, x: &Matrix, x_prime: &Matrix, spec: &LossSpec, h: f64) -> Result<GradcheckReport> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!("step {h} outside [1e-7, 1e-3]")));
    }
    let (_, grads) = loss_gradient(net, x, x_prime, spec)?;
    let analytic = grads.flatten();
    let base_sig = boundary_signature(net, x, x_prime, spec)?;
    let mut probe = net.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        excluded: 0,
    };
    for (i, a) in analytic.iter().enumerate() {
        let coord = net.param_coord(i).expect("index within parameter count");
        let theta = net.param(coord);
        probe.set_param(coord, theta + h);
        let plus_sig = boundary_signature(&probe, x, x_prime, spec)?;
        let plus = network_loss(&probe, x, x_prime, spec)?.total;
        probe.set_param(coord, theta - h);
        let minus_sig = boundary_signature(&probe, x, x_prime, spec)?;
        let minus = network_loss(&probe, x, x_prime, spec)?.total;
        probe.set_param(coord, theta);
        if plus_sig != base_sig || minus_sig != base_sig {
            report.excluded += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (numeric - a).abs() / numeric.abs().max(a.abs()).max(GRADCHECK_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel.max(report.max_rel_error);
            if rel >= report.max_rel_error {
                report.worst = Some(coord);
                report.worst_analytic = *a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
