//! Measures how Gaussian the outputs of trained networks stay as the input
//! noise grows, for a VICReg and an InfoNCE network.
//!
//! Uses the committed test checkpoints, or retrains them with `--retrain`.
//!
//! cargo run --release --example normality_sweep -- [--retrain] [plot.svg]

use std::path::PathBuf;

use infomax_lab::normality::{normality_sweep, sweep_plot_svg, REJECTION_LEVEL};
use infomax_lab::numerics::RngStream;
use infomax_lab::ssl_objectives::{LossSpec, VicregParams};
use infomax_lab::training::{make_manifold_dataset, train, Manifold, ManifoldDataset, Optimizer, TrainConfig};
use infomax_lab::MlpNetwork;

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fig1").join(rel)
}

fn retrain(loss: LossSpec) -> infomax_lab::Result<(MlpNetwork, ManifoldDataset)> {
    let seed = 7;
    let ds = make_manifold_dataset(8, 8, 1, Manifold::Circle, 0.05, &mut RngStream::derive(seed, "dataset", 0))?;
    let init = MlpNetwork::random(&[8, 32, 32, 8], 0.1, &mut RngStream::derive(seed, "init", 0))?;
    let cfg = TrainConfig {
        epochs: 2000,
        batch_size: 64,
        learning_rate: 1e-3,
        optimizer: Optimizer::adam(),
        noise_scale: 1.0,
        noise_scale_prime: None,
        seed,
        loss,
    };
    Ok((train(&init, &ds, &cfg)?.net, ds))
}

fn main() -> infomax_lab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let fresh = args.iter().any(|a| a == "--retrain");
    let plot = args.iter().find(|a| !a.starts_with("--"));

    let (vicreg, infonce) = if fresh {
        (retrain(LossSpec::Vicreg(VicregParams::default()))?, retrain(LossSpec::InfoNce { temperature: 0.2 })?)
    } else {
        let load = |name: &str| -> infomax_lab::Result<(MlpNetwork, ManifoldDataset)> {
            Ok((
                MlpNetwork::load(&fixture(&format!("{name}/checkpoint.json")))?,
                ManifoldDataset::load(&fixture(&format!("{name}/dataset.json")))?,
            ))
        };
        (load("vicreg")?, load("infonce")?)
    };

    let coeffs = [0.25, 0.5, 1.0, 2.0, 4.0];
    let v = normality_sweep(&vicreg.0, &vicreg.1, &coeffs, 512, &mut RngStream::derive(7, "normality-sweep", 0))?;
    let i = normality_sweep(&infonce.0, &infonce.1, &coeffs, 512, &mut RngStream::derive(7, "normality-sweep", 0))?;
    println!("{:>6}  {:>10}  {:>10}", "coeff", "VICReg p", "InfoNCE p");
    for (a, b) in v.rows.iter().zip(&i.rows) {
        println!("{:>6}  {:>10.3e}  {:>10.3e}", a.noise_coeff, a.mean_p, b.mean_p);
    }
    println!("rejection level {REJECTION_LEVEL}");
    if let Some(path) = plot {
        infomax_lab::report::write_atomic(path.as_ref(), sweep_plot_svg(&[("VICReg", &v), ("InfoNCE", &i)]).as_bytes())?;
        println!("wrote {path}");
    }
    Ok(())
}
