//! Entropy estimators for Gaussian mixtures, the Gaussian conditional decoder,
//! and lower bounds on the mutual information between two views.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{
    cholesky_logdet, gaussian_entropy, log_sum_exp, random_spd, spd_inverse, symmetrize, GaussianDensity, GaussianLogPdf,
    GaussianMixture, Matrix, RngStream, Vector, DEFAULT_RIDGE,
};
use crate::ssl_objectives::{joint_covariance, EmbeddingBatch};

/// Minimum sample count for the Monte-Carlo entropy oracle.
pub const MIN_MC_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntropyKind {
    /// Monte-Carlo estimate of `-E[log p(x)]`.
    McOracle,
    /// Entropy of the moment-matched Gaussian.
    MomentUpper,
    /// `H(Z|T)`, the weighted component entropies.
    CondLower,
    /// `H(Z|T) + H(T)`.
    CondPlusCatUpper,
}

impl EntropyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntropyKind::McOracle => "mc_oracle",
            EntropyKind::MomentUpper => "moment_upper",
            EntropyKind::CondLower => "cond_lower",
            EntropyKind::CondPlusCatUpper => "cond_plus_cat_upper",
        }
    }
}

/// Entropy value in nats. The Monte-Carlo fields are only set for [`EntropyKind::McOracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    pub kind: EntropyKind,
    pub mc_std_err: Option<f64>,
    pub sample_count: Option<usize>,
    pub seed: Option<u64>,
}

impl EntropyEstimate {
    pub fn exact(value: f64, kind: EntropyKind) -> Self {
        Self { value, kind, mc_std_err: None, sample_count: None, seed: None }
    }

    pub fn std_err(&self) -> f64 {
        self.mc_std_err.unwrap_or(0.0)
    }
}

/// Observation model `p(z | z') = N(z', sigma_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    sigma_r: Matrix,
}

impl DecoderParams {
    pub fn new(sigma_r: Matrix) -> Result<Self> {
        // validates symmetry and PSD
        let k = sigma_r.nrows();
        GaussianDensity::new(Vector::zeros(k), sigma_r.clone())?;
        Ok(Self { sigma_r })
    }

    /// `sigma_r = I_k`, the mean-squared-error case.
    pub fn identity(k: usize) -> Self {
        Self { sigma_r: Matrix::identity(k, k) }
    }

    pub fn scaled_identity(k: usize, c: f64) -> Result<Self> {
        Self::new(Matrix::identity(k, k) * c)
    }

    pub fn sigma_r(&self) -> &Matrix {
        &self.sigma_r
    }

    pub fn dim(&self) -> usize {
        self.sigma_r.nrows()
    }
}

fn mixture_log_density(logpdfs: &[GaussianLogPdf], log_weights: &[f64], x: &Vector) -> Result<f64> {
    let terms = logpdfs
        .iter()
        .zip(log_weights)
        .map(|(lp, lw)| Ok(lp.eval(x)? + lw))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&terms))
}

/// Monte-Carlo entropy: mean of `-log p(x_i)` over `n` mixture draws.
pub fn mixture_entropy_mc(gmm: &GaussianMixture, n: usize, rng: &mut RngStream) -> Result<EntropyEstimate> {
    if n < MIN_MC_SAMPLES {
        return Err(Error::TooFewSamples { needed: MIN_MC_SAMPLES, got: n });
    }
    let seed = rng.seed();
    let logpdfs = gmm.components().iter().map(|c| GaussianLogPdf::new(c, 0.0)).collect::<Result<Vec<_>>>()?;
    let log_weights: Vec<f64> = gmm.weights().iter().map(|w| w.ln()).collect();
    let (samples, _) = gmm.sample(n, rng)?;
    let neg_logp = (0..n)
        .into_par_iter()
        .map(|i| mixture_log_density(&logpdfs, &log_weights, &samples.row(i).transpose()).map(|v| -v))
        .collect::<Result<Vec<_>>>()?;
    let mean = neg_logp.iter().sum::<f64>() / n as f64;
    let var = neg_logp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = (var / n as f64).sqrt().max(f64::MIN_POSITIVE);
    Ok(EntropyEstimate {
        value: mean,
        kind: EntropyKind::McOracle,
        mc_std_err: Some(se),
        sample_count: Some(n),
        seed: Some(seed),
    })
}

/// Combines independent Monte-Carlo runs, weighting by sample count, in the given order.
pub fn merge_mc_estimates(parts: &[EntropyEstimate]) -> Result<EntropyEstimate> {
    if parts.is_empty() || parts.iter().any(|p| p.kind != EntropyKind::McOracle) {
        return Err(Error::InvalidArgument("merge needs one or more Monte-Carlo estimates".into()));
    }
    let total: usize = parts.iter().map(|p| p.sample_count.unwrap_or(0)).sum();
    let mut value = 0.0;
    let mut var = 0.0;
    for p in parts {
        let w = p.sample_count.unwrap_or(0) as f64 / total as f64;
        value += w * p.value;
        var += (w * p.std_err()).powi(2);
    }
    Ok(EntropyEstimate {
        value,
        kind: EntropyKind::McOracle,
        mc_std_err: Some(var.sqrt()),
        sample_count: Some(total),
        seed: parts[0].seed,
    })
}

/// Entropy of the single Gaussian with the mixture's mean and covariance.
pub fn mixture_entropy_moment_upper(gmm: &GaussianMixture, ridge: f64) -> Result<EntropyEstimate> {
    let (mean, cov) = gmm.moments();
    let g = GaussianDensity::new(mean, cov)?;
    Ok(EntropyEstimate::exact(gaussian_entropy(&g, ridge)?, EntropyKind::MomentUpper))
}

/// `(H(Z|T), H(Z|T) + H(T))` for component label `T`.
pub fn mixture_entropy_cond_bounds(gmm: &GaussianMixture) -> Result<(EntropyEstimate, EntropyEstimate)> {
    let mut lower = 0.0;
    let mut label_entropy = 0.0;
    for (c, w) in gmm.components().iter().zip(gmm.weights()) {
        if *w > 0.0 {
            lower += w * gaussian_entropy(c, 0.0)?;
            label_entropy -= w * w.ln();
        }
    }
    Ok((
        EntropyEstimate::exact(lower, EntropyKind::CondLower),
        EntropyEstimate::exact(lower + label_entropy, EntropyKind::CondPlusCatUpper),
    ))
}

/// `q(z | x'_n) = N(mu_n, sigma_r + sigma_n)`, the observation model with the
/// second view's noise marginalized out.
pub fn conditional_decoder(mu_n: &Vector, sigma_n: &Matrix, dec: &DecoderParams) -> Result<GaussianDensity> {
    let k = dec.dim();
    if mu_n.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: mu_n.len() });
    }
    if sigma_n.nrows() != k || sigma_n.ncols() != k {
        return Err(Error::DimensionMismatch { expected: k, found: sigma_n.nrows() });
    }
    GaussianDensity::new(mu_n.clone(), symmetrize(&(dec.sigma_r() + sigma_n)))
}

/// Terms of the mutual-information lower bound, as batch sums and per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiLowerBound {
    /// `h_z - quadratic - normalizer - decoder_logdet`.
    pub value: f64,
    pub entropy: f64,
    /// `½ Σ_n r_nᵀ Σ_r⁻¹ r_n` with `r_n = z_n - z'_n`.
    pub quadratic: f64,
    /// `(N K / 2) log 2π + (N / 2) log det Σ_r`.
    pub normalizer: f64,
    /// `Σ_n ½ log det(Σ_r + Σ_n)`.
    pub decoder_logdet: f64,
    pub batch_size: usize,
}

impl MiLowerBound {
    pub fn per_sample_quadratic(&self) -> f64 {
        self.quadratic / self.batch_size as f64
    }

    pub fn per_sample_normalizer(&self) -> f64 {
        self.normalizer / self.batch_size as f64
    }

    pub fn per_sample_decoder_logdet(&self) -> f64 {
        self.decoder_logdet / self.batch_size as f64
    }
}

/// Lower bound on `I(Z; X')` under the Gaussian decoder.
///
/// `sigma_n_list` holds one covariance per row, or a single one shared by all rows.
pub fn mi_lower_bound(
    z: &EmbeddingBatch,
    z_prime: &EmbeddingBatch,
    sigma_n_list: &[Matrix],
    dec: &DecoderParams,
    h_z: &EntropyEstimate,
) -> Result<MiLowerBound> {
    z.check_same_shape(z_prime)?;
    let (n, k) = (z.len(), z.dim());
    if dec.dim() != k {
        return Err(Error::DimensionMismatch { expected: k, found: dec.dim() });
    }
    if sigma_n_list.len() != n && sigma_n_list.len() != 1 {
        return Err(Error::DimensionMismatch { expected: n, found: sigma_n_list.len() });
    }
    let precision = spd_inverse(dec.sigma_r(), 0.0)?;
    let mut quadratic = 0.0;
    for i in 0..n {
        let r = (z.rows().row(i) - z_prime.rows().row(i)).transpose();
        quadratic += 0.5 * (r.transpose() * &precision * &r)[(0, 0)];
    }
    let normalizer =
        0.5 * (n * k) as f64 * (2.0 * PI).ln() + 0.5 * n as f64 * cholesky_logdet(dec.sigma_r(), 0.0)?;
    let mut decoder_logdet = 0.0;
    for i in 0..n {
        let s = if sigma_n_list.len() == 1 { &sigma_n_list[0] } else { &sigma_n_list[i] };
        if s.nrows() != k || s.ncols() != k {
            return Err(Error::DimensionMismatch { expected: k, found: s.nrows() });
        }
        decoder_logdet += 0.5 * cholesky_logdet(&symmetrize(&(dec.sigma_r() + s)), 0.0)?;
    }
    Ok(MiLowerBound {
        value: h_z.value - quadratic - normalizer - decoder_logdet,
        entropy: h_z.value,
        quadratic,
        normalizer,
        decoder_logdet,
        batch_size: n,
    })
}

/// Value and terms of the moment-matched information objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoObjective {
    /// `logdet_term - invariance_term`.
    pub objective: f64,
    /// `log det(Σ_Z + ridge I)` over the stacked `[z; z']` batch.
    pub logdet_term: f64,
    /// `(1/N) Σ_n ½ r_nᵀ Σ_r⁻¹ r_n`.
    pub invariance_term: f64,
    /// Per-sample terms that do not depend on the batch:
    /// `-(1/N) Σ_n log det(Σ_n + ridge I) - (K/2) log 2π - ½ log det Σ_r`.
    /// Only computed when per-sample covariances are supplied.
    pub excluded_constants: Option<f64>,
}

fn check_decoder(z: &EmbeddingBatch, z_prime: &EmbeddingBatch, dec: &DecoderParams) -> Result<()> {
    z.check_same_shape(z_prime)?;
    if z.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: z.len() });
    }
    if dec.dim() != z.dim() {
        return Err(Error::DimensionMismatch { expected: z.dim(), found: dec.dim() });
    }
    Ok(())
}

/// Moment-matched objective: `log det Σ_Z` minus the mean Mahalanobis invariance residual.
pub fn info_objective(
    z: &EmbeddingBatch,
    z_prime: &EmbeddingBatch,
    dec: &DecoderParams,
    ridge: f64,
    sigma_n: Option<&[Matrix]>,
) -> Result<InfoObjective> {
    check_decoder(z, z_prime, dec)?;
    let (n, k) = (z.len(), z.dim());
    let cov = joint_covariance(z, z_prime)?;
    let logdet_term = cholesky_logdet(&cov, ridge)?;
    let precision = spd_inverse(dec.sigma_r(), 0.0)?;
    let resid = z.rows() - z_prime.rows();
    let quad = (&resid * &precision).component_mul(&resid).sum();
    let invariance_term = 0.5 * quad / n as f64;
    let excluded_constants = match sigma_n {
        None => None,
        Some(list) => {
            if list.is_empty() {
                return Err(Error::DimensionMismatch { expected: n, found: 0 });
            }
            let mut total = 0.0;
            for s in list {
                total += cholesky_logdet(s, ridge)?;
            }
            Some(
                -total / list.len() as f64
                    - 0.5 * k as f64 * (2.0 * PI).ln()
                    - 0.5 * cholesky_logdet(dec.sigma_r(), 0.0)?,
            )
        }
    };
    Ok(InfoObjective { objective: logdet_term - invariance_term, logdet_term, invariance_term, excluded_constants })
}

/// Gradient of [`info_objective`]'s `objective` with respect to `z` and `z'`.
pub fn info_objective_grad(
    z: &EmbeddingBatch,
    z_prime: &EmbeddingBatch,
    dec: &DecoderParams,
    ridge: f64,
) -> Result<(Matrix, Matrix)> {
    check_decoder(z, z_prime, dec)?;
    let (n, k) = (z.len(), z.dim());
    let stacked = z.stack(z_prime);
    let m = stacked.nrows();
    let mean = stacked.row_mean();
    let mut centered = stacked.clone();
    for mut r in centered.row_iter_mut() {
        r -= &mean;
    }
    let cov = joint_covariance(z, z_prime)?;
    let inv = spd_inverse(&cov, ridge)?;
    let d_stack = &centered * inv * (2.0 / (m as f64 - 1.0));
    let precision = spd_inverse(dec.sigma_r(), 0.0)?;
    let resid = z.rows() - z_prime.rows();
    let d_inv = &resid * &precision / n as f64;
    let dz = d_stack.rows(0, n).into_owned() - &d_inv;
    let dzp = d_stack.rows(n, n).into_owned() + &d_inv;
    debug_assert_eq!(dz.ncols(), k);
    Ok((dz, dzp))
}

/// Standard errors of slack granted to Monte-Carlo estimates in [`sandwich_check`].
pub const SANDWICH_SIGMAS: f64 = 3.0;

/// One benchmark mixture, generated from its own seed so it can be rebuilt in isolation.
pub fn bench_mixture(mixture_seed: u64, max_dim: usize, max_components: usize) -> Result<GaussianMixture> {
    let mut rng = RngStream::new(mixture_seed);
    let d = 1 + rng.index(max_dim);
    let n = 1 + rng.index(max_components);
    let mut comps = Vec::with_capacity(n);
    for _ in 0..n {
        let mean = rng.normal_vector(d) * 3.0;
        let cov = random_spd(d, 0.1, &mut rng);
        comps.push(GaussianDensity::new(mean, cov)?);
    }
    let raw: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // absorb rounding so the weights sum to one exactly enough for validation
    let drift: f64 = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    GaussianMixture::new(comps, weights)
}

/// The four estimates of one mixture and whether they respect the sandwich.
#[derive(Debug, Clone)]
pub struct SandwichCheck {
    pub mc: EntropyEstimate,
    pub moment_upper: EntropyEstimate,
    pub cond_lower: EntropyEstimate,
    pub cond_upper: EntropyEstimate,
    pub holds: bool,
    /// Single-component mixtures must make all four agree.
    pub tight: Option<bool>,
}

/// `cond_lower <= MC ± 3 s.e. <= min(moment_upper, cond_plus_cat_upper)`.
pub fn sandwich_check(gmm: &GaussianMixture, mc_samples: usize, rng: &mut RngStream) -> Result<SandwichCheck> {
    let mc = mixture_entropy_mc(gmm, mc_samples, rng)?;
    let moment_upper = match mixture_entropy_moment_upper(gmm, 0.0) {
        Err(Error::NotPositiveDefinite { .. }) => mixture_entropy_moment_upper(gmm, DEFAULT_RIDGE)?,
        r => r?,
    };
    let (cond_lower, cond_upper) = mixture_entropy_cond_bounds(gmm)?;
    let slack = SANDWICH_SIGMAS * mc.std_err();
    let upper = moment_upper.value.min(cond_upper.value);
    let holds = cond_lower.value <= mc.value + slack && mc.value - slack <= upper && cond_lower.value <= upper + 1e-9;
    let tight = (gmm.len() == 1).then(|| {
        let exact = [moment_upper.value, cond_lower.value, cond_upper.value];
        exact.iter().all(|v| (v - exact[0]).abs() <= 1e-9) && (mc.value - exact[0]).abs() <= 1e-9 + slack
    });
    Ok(SandwichCheck { mc, moment_upper, cond_lower, cond_upper, holds, tight })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::random_spd;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    fn gauss1(mean: f64, var: f64) -> GaussianDensity {
        GaussianDensity::isotropic(Vector::from_element(1, mean), var).unwrap()
    }

    fn batch(rows: usize, cols: usize, data: &[f64]) -> EmbeddingBatch {
        EmbeddingBatch::new(Matrix::from_row_slice(rows, cols, data)).unwrap()
    }

    #[test]
    fn mc_matches_single_gaussian() {
        let gmm = GaussianMixture::uniform(vec![GaussianDensity::standard(2)]).unwrap();
        let est = mixture_entropy_mc(&gmm, 20_000, &mut RngStream::new(1)).unwrap();
        let exact = (2.0 * PI * E).ln();
        assert!((est.value - exact).abs() < 3.0 * est.std_err(), "{est:?}");
        assert_eq!(est.sample_count, Some(20_000));
    }

    #[test]
    fn mc_separated_pair_adds_log_two() {
        let gmm = GaussianMixture::uniform(vec![gauss1(-20.0, 1.0), gauss1(20.0, 1.0)]).unwrap();
        let est = mixture_entropy_mc(&gmm, 20_000, &mut RngStream::new(2)).unwrap();
        let expected = 0.5 * (2.0 * PI * E).ln() + 2f64.ln();
        assert!((est.value - expected).abs() < 3.0 * est.std_err(), "{est:?} vs {expected}");
    }

    #[test]
    fn mc_identical_components_collapse() {
        let gmm = GaussianMixture::uniform(vec![gauss1(1.0, 2.0), gauss1(1.0, 2.0)]).unwrap();
        let est = mixture_entropy_mc(&gmm, 20_000, &mut RngStream::new(3)).unwrap();
        let exact = gaussian_entropy(&gauss1(1.0, 2.0), 0.0).unwrap();
        assert!((est.value - exact).abs() < 3.0 * est.std_err());
    }

    #[test]
    fn mc_requires_samples() {
        let gmm = GaussianMixture::uniform(vec![gauss1(0.0, 1.0)]).unwrap();
        assert!(mixture_entropy_mc(&gmm, 10, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn moment_upper_closed_forms() {
        let g = gauss1(3.0, 2.0);
        let single = GaussianMixture::uniform(vec![g.clone()]).unwrap();
        let up = mixture_entropy_moment_upper(&single, 0.0).unwrap();
        assert_relative_eq!(up.value, gaussian_entropy(&g, 0.0).unwrap(), epsilon = 1e-12);

        let pair = GaussianMixture::uniform(vec![gauss1(-20.0, 1.0), gauss1(20.0, 1.0)]).unwrap();
        let up = mixture_entropy_moment_upper(&pair, 0.0).unwrap();
        assert_relative_eq!(up.value, 0.5 * (2.0 * PI * E * 401.0).ln(), epsilon = 1e-12);
        assert!((up.value - 4.415919).abs() < 1e-6);
        assert!(up.value >= 0.5 * (2.0 * PI * E).ln() + 2f64.ln());
    }

    #[test]
    fn conditional_bounds_cases() {
        let g = gauss1(0.0, 3.0);
        let h = gaussian_entropy(&g, 0.0).unwrap();
        let (lo, hi) = mixture_entropy_cond_bounds(&GaussianMixture::uniform(vec![g.clone()]).unwrap()).unwrap();
        assert_eq!(lo.value, h);
        assert_eq!(hi.value, h);

        let (lo, hi) = mixture_entropy_cond_bounds(&GaussianMixture::uniform(vec![g.clone(), g]).unwrap()).unwrap();
        assert_relative_eq!(lo.value, h, epsilon = 1e-12);
        assert_relative_eq!(hi.value - h, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn separated_mixture_reaches_upper_bound() {
        let comps = (0..4).map(|i| gauss1(40.0 * i as f64, 1.0)).collect();
        let gmm = GaussianMixture::uniform(comps).unwrap();
        let (_, hi) = mixture_entropy_cond_bounds(&gmm).unwrap();
        let mc = mixture_entropy_mc(&gmm, 50_000, &mut RngStream::new(4)).unwrap();
        assert!((hi.value - mc.value).abs() < 0.01, "{} vs {}", hi.value, mc.value);
    }

    #[test]
    fn merging_weights_by_count() {
        let a = EntropyEstimate { value: 1.0, kind: EntropyKind::McOracle, mc_std_err: Some(0.1), sample_count: Some(1000), seed: Some(1) };
        let b = EntropyEstimate { value: 4.0, kind: EntropyKind::McOracle, mc_std_err: Some(0.1), sample_count: Some(3000), seed: Some(2) };
        let m = merge_mc_estimates(&[a, b]).unwrap();
        assert_relative_eq!(m.value, 3.25, epsilon = 1e-12);
        assert_eq!(m.sample_count, Some(4000));
        assert!(merge_mc_estimates(&[]).is_err());
    }

    #[test]
    fn decoder_adds_covariances() {
        let mu = Vector::from_row_slice(&[1.0, 2.0]);
        let dec = DecoderParams::identity(2);
        let g = conditional_decoder(&mu, &Matrix::zeros(2, 2), &dec).unwrap();
        assert_eq!(g.cov(), &Matrix::identity(2, 2));
        let g2 = conditional_decoder(&mu, &Matrix::identity(2, 2), &dec).unwrap();
        assert_eq!(g2.cov(), &(Matrix::identity(2, 2) * 2.0));

        let mut rng = RngStream::new(5);
        let s = random_spd(2, 0.0, &mut rng);
        let base = gaussian_entropy(&GaussianDensity::new(mu.clone(), dec.sigma_r().clone()).unwrap(), 0.0).unwrap();
        let widened = gaussian_entropy(&conditional_decoder(&mu, &s, &dec).unwrap(), 0.0).unwrap();
        assert!(widened >= base);
        assert!(conditional_decoder(&Vector::zeros(3), &s, &dec).is_err());
    }

    #[test]
    fn mi_bound_closed_forms() {
        let h = EntropyEstimate::exact(5.0, EntropyKind::MomentUpper);
        let z = batch(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = mi_lower_bound(&z, &z, &[Matrix::zeros(2, 2)], &DecoderParams::identity(2), &h).unwrap();
        assert_relative_eq!(b.value, 5.0 - 3.0 * (2.0 * PI).ln(), epsilon = 1e-12);

        let z = batch(1, 1, &[2.0]);
        let zp = batch(1, 1, &[0.0]);
        let b = mi_lower_bound(&z, &zp, &[Matrix::zeros(1, 1)], &DecoderParams::identity(1), &h).unwrap();
        assert_relative_eq!(b.value, 5.0 - 2.0 - 0.5 * (2.0 * PI).ln(), epsilon = 1e-12);
        assert_relative_eq!(b.per_sample_quadratic(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mi_bound_rejects_bad_shapes() {
        let h = EntropyEstimate::exact(0.0, EntropyKind::MomentUpper);
        let z = batch(2, 1, &[1.0, 2.0]);
        let sig = vec![Matrix::zeros(1, 1); 3];
        assert!(mi_lower_bound(&z, &z, &sig, &DecoderParams::identity(1), &h).is_err());
        assert!(mi_lower_bound(&z, &z, &sig[..1], &DecoderParams::identity(2), &h).is_err());
    }

    #[test]
    fn mi_bound_grid_maximizer_matches_balance_point() {
        // With Σ_n = 0 and Σ_r = cI the bound is -Q/(2c) - N K log c + const, maximized at c = Q / (2 N K).
        let mut rng = RngStream::new(6);
        let (n, k) = (16, 3);
        let z = EmbeddingBatch::new(rng.normal_matrix(n, k)).unwrap();
        let zp = EmbeddingBatch::new(rng.normal_matrix(n, k)).unwrap();
        let q: f64 = (z.rows() - zp.rows()).norm_squared();
        let predicted = q / (2.0 * (n * k) as f64);
        let h = EntropyEstimate::exact(0.0, EntropyKind::MomentUpper);
        let zero = [Matrix::zeros(k, k)];
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 1..=4000 {
            let c = i as f64 * 1e-3;
            let dec = DecoderParams::scaled_identity(k, c).unwrap();
            let v = mi_lower_bound(&z, &zp, &zero, &dec, &h).unwrap().value;
            if v > best.0 {
                best = (v, c);
            }
        }
        assert!((best.1 - predicted).abs() <= 1e-3, "grid {} vs {}", best.1, predicted);
    }

    #[test]
    fn mi_bound_decreases_with_residual() {
        let h = EntropyEstimate::exact(1.0, EntropyKind::MomentUpper);
        let z = batch(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let dec = DecoderParams::identity(2);
        let mut last = f64::INFINITY;
        for s in [0.0, 0.1, 0.5, 1.0, 3.0] {
            let zp = batch(2, 2, &[s, 0.0, 1.0, 1.0 - s]);
            let v = mi_lower_bound(&z, &zp, &[Matrix::zeros(2, 2)], &dec, &h).unwrap().value;
            assert!(v <= last);
            last = v;
        }
    }

    fn whitened_pair() -> EmbeddingBatch {
        // stacked [z; z] has covariance I when a = sqrt(7/8)
        let a = (7.0f64 / 8.0).sqrt();
        batch(4, 2, &[a, a, a, -a, -a, a, -a, -a])
    }

    #[test]
    fn objective_of_whitened_batch_is_zero() {
        let z = whitened_pair();
        let obj = info_objective(&z, &z, &DecoderParams::identity(2), 0.0, None).unwrap();
        assert!(obj.objective.abs() < 1e-12, "{obj:?}");
        assert!(obj.excluded_constants.is_none());
        let with_consts =
            info_objective(&z, &z, &DecoderParams::identity(2), 1e-9, Some(&[Matrix::identity(2, 2)])).unwrap();
        assert_relative_eq!(with_consts.excluded_constants.unwrap(), -(2.0 * PI).ln(), epsilon = 1e-8);
    }

    #[test]
    fn objective_scaling_law() {
        let mut rng = RngStream::new(7);
        let z = EmbeddingBatch::new(rng.normal_matrix(10, 3)).unwrap();
        let half = EmbeddingBatch::new(z.rows() * 0.5).unwrap();
        let dec = DecoderParams::identity(3);
        let a = info_objective(&z, &z, &dec, 0.0, None).unwrap();
        let b = info_objective(&half, &half, &dec, 0.0, None).unwrap();
        assert_relative_eq!(a.logdet_term - b.logdet_term, 2.0 * 3.0 * 2f64.ln(), epsilon = 1e-10);
        assert_eq!(a.invariance_term, b.invariance_term);
    }

    #[test]
    fn objective_translation_invariant() {
        let mut rng = RngStream::new(8);
        let z = rng.normal_matrix(12, 3);
        let zp = &z + rng.normal_matrix(12, 3) * 0.1;
        let shift = rng.normal_vector(3).transpose();
        let shifted = |m: &Matrix| {
            let mut m = m.clone();
            for mut r in m.row_iter_mut() {
                r += &shift;
            }
            EmbeddingBatch::new(m).unwrap()
        };
        let dec = DecoderParams::identity(3);
        let a = info_objective(&EmbeddingBatch::new(z.clone()).unwrap(), &EmbeddingBatch::new(zp.clone()).unwrap(), &dec, 1e-9, None).unwrap();
        let b = info_objective(&shifted(&z), &shifted(&zp), &dec, 1e-9, None).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-10);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(9);
        let (n, k) = (8, 3);
        let z = rng.normal_matrix(n, k);
        let zp = &z + rng.normal_matrix(n, k) * 0.3;
        let dec = DecoderParams::new(random_spd(k, 0.5, &mut rng)).unwrap();
        let f = |z: &Matrix, zp: &Matrix| {
            info_objective(&EmbeddingBatch::new(z.clone()).unwrap(), &EmbeddingBatch::new(zp.clone()).unwrap(), &dec, 1e-9, None)
                .unwrap()
                .objective
        };
        let (dz, dzp) =
            info_objective_grad(&EmbeddingBatch::new(z.clone()).unwrap(), &EmbeddingBatch::new(zp.clone()).unwrap(), &dec, 1e-9).unwrap();
        let h = 1e-6;
        for i in 0..n {
            for j in 0..k {
                for (which, analytic) in [(0, dz[(i, j)]), (1, dzp[(i, j)])] {
                    let (mut a, mut b) = (z.clone(), zp.clone());
                    let (mut c, mut d) = (z.clone(), zp.clone());
                    if which == 0 {
                        a[(i, j)] += h;
                        c[(i, j)] -= h;
                    } else {
                        b[(i, j)] += h;
                        d[(i, j)] -= h;
                    }
                    let fd = (f(&a, &b) - f(&c, &d)) / (2.0 * h);
                    let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
                    assert!(rel < 1e-4, "({i},{j},{which}): fd {fd} vs {analytic}");
                }
            }
        }
    }

    #[test]
    fn objective_needs_two_rows() {
        let z = batch(1, 1, &[1.0]);
        assert!(matches!(
            info_objective(&z, &z, &DecoderParams::identity(1), 0.0, None),
            Err(Error::TooFewSamples { .. })
        ));
    }
}
