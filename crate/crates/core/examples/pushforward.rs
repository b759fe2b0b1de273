//! Pushes Gaussians of growing width through a random network and compares
//! the analytic affine image with Monte-Carlo moments.
//!
//! cargo run --release --example pushforward

use infomax_lab::numerics::{GaussianDensity, RngStream};
use infomax_lab::pushforward::{check_pushforward, pushforward_gaussian};
use infomax_lab::MlpNetwork;

fn main() -> infomax_lab::Result<()> {
    let mut rng = RngStream::new(11);
    let net = MlpNetwork::random(&[4, 32, 32, 8], 0.1, &mut rng)?;
    let center = rng.normal_vector(4);
    println!("{:>8}  {:>11}  {:>14}  {:>12}", "sigma", "containment", "mean err/std", "cov err");
    for sigma in [1e-6, 1e-4, 1e-2, 1e-1, 1.0] {
        let g = GaussianDensity::isotropic(center.clone(), sigma * sigma)?;
        let c = check_pushforward(&net, &g, 50_000, &mut RngStream::derive(11, "pushforward", 0))?;
        println!(
            "{sigma:>8.0e}  {:>11.5}  {:>14.3e}  {:>12.3e}",
            c.containment, c.moments.mean_in_std, c.moments.cov_frobenius
        );
    }
    let out = pushforward_gaussian(&net, &GaussianDensity::isotropic(center, 1e-6)?)?;
    println!("output covariance trace at sigma = 1e-3: {:.4e}", out.output.cov().trace());
    Ok(())
}
