//! Oracles and fixture helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use infomax_lab::cli::parse_config;
use infomax_lab::numerics::RngStream;
use infomax_lab::training::{make_manifold_dataset, ManifoldDataset, TrainConfig};
use infomax_lab::{Matrix, MlpNetwork};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Reference values computed by scipy for a committed sample.
#[derive(serde::Deserialize)]
pub struct NormalityFixture {
    pub samples: Vec<f64>,
    pub skewness: f64,
    pub kurtosis_excess: f64,
    pub z_skew: f64,
    pub z_kurt: f64,
    pub k2: f64,
    pub p_value: f64,
}

pub fn normality_fixture(name: &str) -> NormalityFixture {
    let text = std::fs::read_to_string(fixture(name)).expect("fixture readable");
    serde_json::from_str(&text).expect("fixture parses")
}

/// Second implementation of the omnibus statistic, written from the published
/// formulas without sharing code with the library. Returns (z_skew, z_kurt, k2).
pub fn reference_k2(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m = |k: i32| x.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let (m2, m3, m4) = (m(2), m(3), m(4));
    let b1 = m3 / m2.powf(1.5);
    let b2 = m4 / (m2 * m2);

    // skewness
    let y = b1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = (2.0 * (beta2 - 1.0)).sqrt() - 1.0;
    let delta = 1.0 / (w2.sqrt().ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let r = y / alpha;
    let z1 = delta * (r + (r * r + 1.0).sqrt()).ln();

    // kurtosis
    let eb2 = 3.0 * (n - 1.0) / (n + 1.0);
    let vb2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
    let xs = (b2 - eb2) / vb2.sqrt();
    let sb1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + (8.0 / sb1) * (2.0 / sb1 + (1.0 + 4.0 / (sb1 * sb1)).sqrt());
    let t = (1.0 - 2.0 / a) / (1.0 + xs * (2.0 / (a - 4.0)).sqrt());
    let cube = if t < 0.0 { -(-t).powf(1.0 / 3.0) } else { t.powf(1.0 / 3.0) };
    let z2 = (1.0 - 2.0 / (9.0 * a) - cube) / (2.0 / (9.0 * a)).sqrt();
    (z1, z2, z1 * z1 + z2 * z2)
}

/// Sylvester Hadamard matrix of order `2^k`.
pub fn hadamard(order: usize) -> Matrix {
    assert!(order.is_power_of_two());
    let mut h = Matrix::from_element(1, 1, 1.0);
    while h.nrows() < order {
        let n = h.nrows();
        let mut next = Matrix::zeros(2 * n, 2 * n);
        next.view_mut((0, 0), (n, n)).copy_from(&h);
        next.view_mut((0, n), (n, n)).copy_from(&h);
        next.view_mut((n, 0), (n, n)).copy_from(&h);
        next.view_mut((n, n), (n, n)).copy_from(&(-&h));
        h = next;
    }
    h
}

/// Network, dataset and training config described by a committed TOML file,
/// built with the same stream labels as the `train` command.
pub fn fixture_run(config: &str) -> (MlpNetwork, ManifoldDataset, TrainConfig) {
    let text = std::fs::read_to_string(fixture(config)).expect("config readable");
    let cfg = parse_config(&text).expect("config parses");
    let seed = cfg.seed.expect("fixture has a seed");
    let t = &cfg.train;
    let d = &t.dataset;
    let ds = make_manifold_dataset(
        d.n_prototypes,
        d.ambient_dim,
        d.tangent_rank,
        d.manifold,
        d.base_sigma,
        &mut RngStream::derive(seed, "dataset", 0),
    )
    .expect("dataset");
    let mut dims = vec![d.ambient_dim];
    dims.extend(&t.hidden);
    dims.push(t.output_dim);
    let net = MlpNetwork::random(&dims, t.leaky_slope, &mut RngStream::derive(seed, "init", 0)).expect("net");
    (net, ds, t.train_config(seed))
}
