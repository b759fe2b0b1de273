//! Trains a leaky-ReLU network on a noisy circle with VICReg, then repeats the
//! run with only the invariance term to show representation collapse.
//!
//! cargo run --release --example train_vicreg -- [seed]

use infomax_lab::numerics::RngStream;
use infomax_lab::ssl_objectives::{network_loss, LossSpec, VicregParams};
use infomax_lab::training::{
    embedding_covariance, make_manifold_dataset, sample_two_views, train, Manifold, Optimizer, TrainConfig,
};
use infomax_lab::MlpNetwork;

fn main() -> infomax_lab::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);

    // 64 prototypes on a unit circle in R^8, noise along the tangent only
    let ds = make_manifold_dataset(64, 8, 1, Manifold::Circle, 0.02, &mut RngStream::derive(seed, "dataset", 0))?;
    let net = MlpNetwork::random(&[8, 32, 32, 8], 0.1, &mut RngStream::derive(seed, "init", 0))?;
    let cfg = TrainConfig {
        epochs: 2000,
        batch_size: 64,
        learning_rate: 1e-3,
        optimizer: Optimizer::adam(),
        noise_scale: 1.0,
        noise_scale_prime: None,
        seed,
        loss: LossSpec::Vicreg(VicregParams::default()),
    };

    let probe = sample_two_views(&ds, 512, 1.0, &mut RngStream::derive(seed, "probe", 0))?;
    let report = |label: &str, net: &MlpNetwork| -> infomax_lab::Result<()> {
        let loss = network_loss(net, &probe.x, &probe.x_prime, &cfg.loss)?;
        let c = embedding_covariance(net, &probe)?;
        println!(
            "{label:<16} loss {:>8.4}   C_kk min {:.3e} max {:.3e}",
            loss.total,
            c.diagonal().min(),
            c.diagonal().max()
        );
        Ok(())
    };

    report("initial", &net)?;
    let vicreg = train(&net, &ds, &cfg)?;
    report("vicreg", &vicreg.net)?;
    let inv_cfg = TrainConfig { loss: LossSpec::Vicreg(VicregParams::invariance_only(25.0)), ..cfg.clone() };
    let collapsed = train(&net, &ds, &inv_cfg)?;
    report("invariance only", &collapsed.net)?;
    Ok(())
}
