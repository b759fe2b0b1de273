//! Analytic propagation of Gaussian inputs through a piecewise-affine network.
//!
//! A Gaussian whose mass sits inside one linear region is mapped to the affine
//! image `N(A mu + b, A Sigma A^T)` of that region. Mixtures are pushed
//! componentwise, each through the region that contains its mean. The
//! Monte-Carlo containment diagnostic measures how much of the input mass
//! actually stays inside that region.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    row_covariance, sample_gaussian, symmetrize, GaussianDensity, GaussianMixture, Matrix, RngStream, Vector,
};
use crate::spline_net::{ActivationPattern, AffineMap, MlpNetwork};

/// Minimum number of samples for a containment estimate.
pub const MIN_CONTAINMENT_SAMPLES: usize = 100;

/// Monte-Carlo containment estimate with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Containment {
    pub fraction: f64,
    pub samples: usize,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone)]
pub struct PushforwardReport {
    pub output: GaussianDensity,
    pub region: ActivationPattern,
    pub map: AffineMap,
    /// Unset until [`PushforwardReport::measure_containment`] runs.
    pub containment: Option<Containment>,
}

impl PushforwardReport {
    pub fn measure_containment(
        &mut self,
        net: &MlpNetwork,
        input: &GaussianDensity,
        n: usize,
        rng: &mut RngStream,
    ) -> Result<Containment> {
        let (seed, stream) = (rng.seed(), rng.stream());
        let fraction = region_containment(net, input, n, rng)?;
        let c = Containment { fraction, samples: n, seed, stream };
        self.containment = Some(c);
        Ok(c)
    }

    /// Flat record: mean, row-major covariance, containment fields.
    pub fn to_record(&self) -> PushforwardRecord {
        let cov = self.output.cov();
        PushforwardRecord {
            dim: self.output.dim(),
            mean: self.output.mean().as_slice().to_vec(),
            cov: cov.transpose().as_slice().to_vec(),
            containment: self.containment.map(|c| c.fraction),
            sample_count: self.containment.map_or(0, |c| c.samples),
            seed: self.containment.map(|c| c.seed),
        }
    }
}

/// Serializable summary of a [`PushforwardReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushforwardRecord {
    pub dim: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub containment: Option<f64>,
    pub sample_count: usize,
    pub seed: Option<u64>,
}

/// Image of `g` under the affine map of the region containing `g.mean`.
pub fn pushforward_gaussian(net: &MlpNetwork, g: &GaussianDensity) -> Result<PushforwardReport> {
    if g.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), found: g.dim() });
    }
    let (mean_out, region) = net.forward_with_pattern(g.mean())?;
    let map = net.region_affine_map(&region)?;
    let cov_out = symmetrize(&(&map.slope * g.cov() * map.slope.transpose()));
    Ok(PushforwardReport { output: GaussianDensity::new(mean_out, cov_out)?, region, map, containment: None })
}

/// Componentwise pushforward; weights are carried over unchanged.
pub fn pushforward_mixture(net: &MlpNetwork, gmm: &GaussianMixture) -> Result<GaussianMixture> {
    let components = gmm
        .components()
        .par_iter()
        .map(|c| pushforward_gaussian(net, c).map(|r| r.output))
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(components, gmm.weights().to_vec())
}

/// Fraction of `n` draws from `g` whose activation pattern matches the one at `g.mean`.
pub fn region_containment(net: &MlpNetwork, g: &GaussianDensity, n: usize, rng: &mut RngStream) -> Result<f64> {
    if n < MIN_CONTAINMENT_SAMPLES {
        return Err(Error::TooFewSamples { needed: MIN_CONTAINMENT_SAMPLES, got: n });
    }
    if g.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), found: g.dim() });
    }
    let reference = net.activation_pattern(g.mean())?;
    let samples = sample_gaussian(g, n, rng)?;
    let trace = net.forward_batch(&samples)?;
    let inside = (0..n).filter(|i| trace.pattern(*i) == reference).count();
    Ok(inside as f64 / n as f64)
}

/// Sample mean and unbiased covariance of the rows of `samples`.
pub fn empirical_moments(samples: &Matrix) -> Result<(Vector, Matrix)> {
    row_covariance(samples)
}

/// Discrepancy between an analytic Gaussian and the empirical moments of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentError {
    /// max_k |mean_hat_k - mean_k| / std_k
    pub mean_in_std: f64,
    /// ‖cov_hat - cov‖_F / ‖cov‖_F
    pub cov_frobenius: f64,
}

pub fn moment_error(analytic: &GaussianDensity, samples: &Matrix) -> Result<MomentError> {
    if samples.ncols() != analytic.dim() {
        return Err(Error::DimensionMismatch { expected: analytic.dim(), found: samples.ncols() });
    }
    let (mean, cov) = empirical_moments(samples)?;
    let mut mean_in_std = 0.0_f64;
    for k in 0..analytic.dim() {
        let diff = (mean[k] - analytic.mean()[k]).abs();
        let sd = analytic.cov()[(k, k)].max(0.0).sqrt();
        let e = if sd > 0.0 {
            diff / sd
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        mean_in_std = mean_in_std.max(e);
    }
    let denom = analytic.cov().norm();
    let num = (cov - analytic.cov()).norm();
    let cov_frobenius = if denom > 0.0 {
        num / denom
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(MomentError { mean_in_std, cov_frobenius })
}

/// Containment and moment agreement measured on one set of draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PushforwardCheck {
    pub containment: f64,
    pub moments: MomentError,
    pub samples: usize,
}

/// Draws `n` inputs from `g`, counts those sharing the mean's region and compares
/// the outputs with the analytic pushforward.
pub fn check_pushforward(net: &MlpNetwork, g: &GaussianDensity, n: usize, rng: &mut RngStream) -> Result<PushforwardCheck> {
    if n < MIN_CONTAINMENT_SAMPLES {
        return Err(Error::TooFewSamples { needed: MIN_CONTAINMENT_SAMPLES, got: n });
    }
    let report = pushforward_gaussian(net, g)?;
    let samples = sample_gaussian(g, n, rng)?;
    let trace = net.forward_batch(&samples)?;
    let inside = (0..n).filter(|i| trace.pattern(*i) == report.region).count();
    let moments = moment_error(&report.output, trace.output())?;
    Ok(PushforwardCheck { containment: inside as f64 / n as f64, moments, samples: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::random_spd;
    use crate::spline_net::Layer;
    use approx::assert_relative_eq;

    #[test]
    fn affine_network_pushes_exactly() {
        let mut rng = RngStream::new(1);
        let w = rng.normal_matrix(3, 2);
        let b = rng.normal_vector(3);
        let net = MlpNetwork::affine(w.clone(), b.clone()).unwrap();
        let g = GaussianDensity::new(rng.normal_vector(2), random_spd(2, 0.1, &mut rng)).unwrap();
        let r = pushforward_gaussian(&net, &g).unwrap();
        assert_relative_eq!(r.output.mean().clone(), &w * g.mean() + &b, epsilon = 1e-12);
        assert_relative_eq!(r.output.cov().clone(), &w * g.cov() * w.transpose(), epsilon = 1e-12);
        assert!(r.containment.is_none());
    }

    #[test]
    fn identity_network_is_a_no_op() {
        let net = MlpNetwork::affine(Matrix::identity(2, 2), Vector::zeros(2)).unwrap();
        let mut rng = RngStream::new(2);
        let g = GaussianDensity::new(rng.normal_vector(2), random_spd(2, 0.1, &mut rng)).unwrap();
        let out = pushforward_gaussian(&net, &g).unwrap().output;
        assert_eq!(out, g);
    }

    #[test]
    fn mixture_weights_and_components() {
        let mut rng = RngStream::new(3);
        let net = MlpNetwork::random(&[2, 6, 2], 0.1, &mut rng).unwrap();
        let comps: Vec<_> = (0..3)
            .map(|_| GaussianDensity::isotropic(rng.normal_vector(2), 0.01).unwrap())
            .collect();
        let gmm = GaussianMixture::new(comps.clone(), vec![0.2, 0.3, 0.5]).unwrap();
        let pushed = pushforward_mixture(&net, &gmm).unwrap();
        assert_eq!(pushed.weights(), gmm.weights());
        for (c, p) in comps.iter().zip(pushed.components()) {
            assert_eq!(&pushforward_gaussian(&net, c).unwrap().output, p);
        }
        let wrong = GaussianMixture::uniform(vec![GaussianDensity::standard(3)]).unwrap();
        assert!(pushforward_mixture(&net, &wrong).is_err());
    }

    #[test]
    fn tiny_covariance_is_fully_contained() {
        let mut rng = RngStream::new(4);
        let net = MlpNetwork::random(&[3, 8, 8, 2], 0.1, &mut rng).unwrap();
        let mut center = rng.normal_vector(3);
        // make sure the center is not within 1e-6 of a boundary
        while net.hidden_margin(&center).unwrap() < 1e-3 {
            center = rng.normal_vector(3);
        }
        let g = GaussianDensity::isotropic(center, 1e-18).unwrap();
        let mut report = pushforward_gaussian(&net, &g).unwrap();
        let c = report.measure_containment(&net, &g, 500, &mut RngStream::new(5)).unwrap();
        assert_eq!(c.fraction, 1.0);
        assert_eq!(c.samples, 500);
        assert_eq!(report.to_record().sample_count, 500);
    }

    #[test]
    fn gaussian_on_a_hyperplane_is_split_in_half() {
        let w = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let net = MlpNetwork::new(
            vec![
                Layer::new(w, Vector::zeros(1)).unwrap(),
                Layer::new(Matrix::identity(1, 1), Vector::zeros(1)).unwrap(),
            ],
            0.0,
        )
        .unwrap();
        // mean at the origin is on the boundary and counts as inactive
        let g = GaussianDensity::standard(2);
        let n = 20_000;
        let frac = region_containment(&net, &g, n, &mut RngStream::new(6)).unwrap();
        assert!((frac - 0.5).abs() < 3.0 / (n as f64).sqrt(), "{frac}");
    }

    #[test]
    fn tight_gaussian_matches_its_pushforward() {
        let mut rng = RngStream::new(9);
        let net = MlpNetwork::random(&[4, 16, 16, 8], 0.1, &mut rng).unwrap();
        let g = GaussianDensity::isotropic(rng.normal_vector(4), 1e-6).unwrap();
        let c = check_pushforward(&net, &g, 20_000, &mut RngStream::new(10)).unwrap();
        assert!(c.containment > 0.999);
        assert!(c.moments.mean_in_std < 0.05 && c.moments.cov_frobenius < 0.05, "{c:?}");
    }

    #[test]
    fn containment_requires_enough_samples() {
        let net = MlpNetwork::affine(Matrix::identity(2, 2), Vector::zeros(2)).unwrap();
        let g = GaussianDensity::standard(2);
        assert!(matches!(
            region_containment(&net, &g, 10, &mut RngStream::new(1)),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn empirical_moment_cases() {
        let same = Matrix::from_fn(5, 3, |_, j| j as f64);
        let (m, c) = empirical_moments(&same).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 1.0, 2.0]);
        assert_eq!(c, Matrix::zeros(3, 3));

        let rows = Matrix::from_row_slice(4, 2, &[0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
        let (m, c) = empirical_moments(&rows).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 1.0]);
        assert_relative_eq!(c, Matrix::identity(2, 2) * (4.0 / 3.0), epsilon = 1e-12);

        let s = sample_gaussian(&GaussianDensity::standard(2), 100_000, &mut RngStream::new(8)).unwrap();
        let (_, c) = empirical_moments(&s).unwrap();
        assert!((c - Matrix::identity(2, 2)).abs().max() < 0.03);

        assert!(matches!(empirical_moments(&Matrix::zeros(1, 2)), Err(Error::TooFewSamples { .. })));
    }
}
