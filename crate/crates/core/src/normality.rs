//! D'Agostino–Pearson omnibus normality test and the noise-level sweep over a
//! trained network's outputs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{sample_with_factor, RngStream};
use crate::report::{line_plot_svg, Cell, CsvTable, Series};
use crate::spline_net::MlpNetwork;
use crate::training::ManifoldDataset;

/// Rejection level drawn as the reference line.
pub const REJECTION_LEVEL: f64 = 0.01;

/// Default draws per (coefficient, prototype) cell.
pub const DEFAULT_SWEEP_SAMPLES: usize = 512;

const MIN_SKEW_KURT: usize = 8;
const MIN_K2: usize = 20;
const ZERO_VARIANCE: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalityResult {
    pub k2_statistic: f64,
    pub p_value: f64,
    pub skewness: f64,
    pub kurtosis_excess: f64,
    pub z_skew: f64,
    pub z_kurt: f64,
    pub n: usize,
}

/// Biased sample skewness `g1 = m3 / m2^1.5` and excess kurtosis `g2 = m4 / m2² - 3`.
pub fn sample_skew_kurt(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < MIN_SKEW_KURT {
        return Err(Error::TooFewSamples { needed: MIN_SKEW_KURT, got: n });
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if !(m2 >= ZERO_VARIANCE) {
        return Err(Error::ZeroVariance);
    }
    Ok((m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

/// Normal deviate for the sample skewness.
fn skew_z(g1: f64, n: f64) -> f64 {
    let y = g1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    delta * (y / alpha).asinh()
}

/// Anscombe–Glynn normal deviate for the sample kurtosis (`b2 = g2 + 3`).
fn kurt_z(b2: f64, n: f64) -> f64 {
    let mean = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - mean) / var.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    (term1 - term2) / (2.0 / (9.0 * a)).sqrt()
}

/// Omnibus test `K² = Z1² + Z2²` with the χ²(2) survival `p = exp(-K²/2)`.
pub fn dagostino_k2(samples: &[f64]) -> Result<NormalityResult> {
    let n = samples.len();
    if n < MIN_K2 {
        return Err(Error::TooFewSamples { needed: MIN_K2, got: n });
    }
    let (g1, g2) = sample_skew_kurt(samples)?;
    let nf = n as f64;
    let z_skew = skew_z(g1, nf);
    let z_kurt = kurt_z(g2 + 3.0, nf);
    let k2 = z_skew * z_skew + z_kurt * z_kurt;
    if !k2.is_finite() {
        return Err(Error::InvalidArgument(format!("K² is not finite (skewness {g1}, excess kurtosis {g2})")));
    }
    Ok(NormalityResult {
        k2_statistic: k2,
        p_value: (-0.5 * k2).exp(),
        skewness: g1,
        kurtosis_excess: g2,
        z_skew,
        z_kurt,
        n,
    })
}

/// One (coefficient, prototype, output dimension) test. `k2`/`p` are NaN when excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub noise_coeff: f64,
    pub prototype_id: usize,
    pub dim: usize,
    pub k2: f64,
    pub p: f64,
}

impl SweepCell {
    pub fn excluded(&self) -> bool {
        self.p.is_nan()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub noise_coeff: f64,
    /// Mean p-value per output dimension over prototypes.
    pub per_dim_mean_p: Vec<f64>,
    /// Mean over every included (prototype, dimension) cell.
    pub mean_p: f64,
    /// Population standard deviation over the same cells.
    pub std_p: f64,
    pub n_excluded: usize,
    pub prototypes: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// For every coefficient `c` and prototype `n`, pushes `m` draws from
/// `N(x*_n, c² Σ_n)` through `net` and tests each output coordinate.
///
/// Cell `(i, n)` uses the stream `derive(base, "normality", i * N + n)` where
/// `base` is one draw from `rng`, so cells run in parallel without changing results.
pub fn normality_sweep(
    net: &MlpNetwork,
    ds: &ManifoldDataset,
    coeffs: &[f64],
    m: usize,
    rng: &mut RngStream,
) -> Result<SweepOutput> {
    if coeffs.is_empty() || coeffs.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
        return Err(Error::InvalidArgument("coefficients must be a nonempty list of positive reals".into()));
    }
    if m < MIN_K2 {
        return Err(Error::TooFewSamples { needed: MIN_K2, got: m });
    }
    if net.input_dim() != ds.ambient_dim {
        return Err(Error::DimensionMismatch { expected: ds.ambient_dim, found: net.input_dim() });
    }
    let base = rng.next_u64();
    let n_proto = ds.len();
    let k = net.output_dim();
    let jobs: Vec<(usize, usize)> = (0..coeffs.len()).flat_map(|i| (0..n_proto).map(move |n| (i, n))).collect();
    let per_job = jobs
        .par_iter()
        .map(|&(i, n)| -> Result<Vec<SweepCell>> {
            let c = coeffs[i];
            let mut cell_rng = RngStream::derive(base, "normality", (i * n_proto + n) as u64);
            let x = sample_with_factor(&ds.prototypes[n], &(&ds.factors[n] * c), m, &mut cell_rng);
            let z = net.forward_rows(&x)?;
            (0..k)
                .map(|d| {
                    let col: Vec<f64> = z.column(d).iter().copied().collect();
                    let (k2, p) = match dagostino_k2(&col) {
                        Ok(r) => (r.k2_statistic, r.p_value),
                        Err(Error::ZeroVariance) => (f64::NAN, f64::NAN),
                        Err(e) => return Err(e),
                    };
                    Ok(SweepCell { noise_coeff: c, prototype_id: n, dim: d, k2, p })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<SweepCell> = per_job.into_iter().flatten().collect();

    let rows = coeffs
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let block = &cells[i * n_proto * k..(i + 1) * n_proto * k];
            let included: Vec<f64> = block.iter().filter(|x| !x.excluded()).map(|x| x.p).collect();
            let per_dim_mean_p = (0..k)
                .map(|d| {
                    let v: Vec<f64> = block.iter().filter(|x| x.dim == d && !x.excluded()).map(|x| x.p).collect();
                    mean_std(&v).0
                })
                .collect();
            let (mean_p, std_p) = mean_std(&included);
            SweepRow {
                noise_coeff: c,
                per_dim_mean_p,
                mean_p,
                std_p,
                n_excluded: block.len() - included.len(),
                prototypes: n_proto,
                samples: m,
            }
        })
        .collect();
    Ok(SweepOutput { rows, cells })
}

impl SweepOutput {
    /// Per-cell CSV: `coeff,prototype_id,dim,k2,p`.
    pub fn cells_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["coeff", "prototype_id", "dim", "k2", "p"]);
        for c in &self.cells {
            t.push(vec![Cell::Float(c.noise_coeff), Cell::from(c.prototype_id), Cell::from(c.dim), Cell::Float(c.k2), Cell::Float(c.p)]);
        }
        t
    }

    /// Aggregate CSV: `coeff,mean_p,std_p,n_excluded`.
    pub fn aggregate_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["coeff", "mean_p", "std_p", "n_excluded"]);
        for r in &self.rows {
            t.push(vec![Cell::Float(r.noise_coeff), Cell::Float(r.mean_p), Cell::Float(r.std_p), Cell::from(r.n_excluded)]);
        }
        t
    }

    pub fn mean_curve(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.noise_coeff, r.mean_p)).collect()
    }
}

/// Mean p-value against noise coefficient for one or more models.
pub fn sweep_plot_svg(curves: &[(&str, &SweepOutput)]) -> String {
    let series: Vec<Series> = curves.iter().map(|(name, s)| Series { name, points: s.mean_curve() }).collect();
    line_plot_svg("Output normality vs input noise", "noise coefficient", "mean p-value", &series, Some(REJECTION_LEVEL))
}

/// Number of adjacent increases in a sequence (an "inversion" of a non-increasing trend).
pub fn count_increases(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}
