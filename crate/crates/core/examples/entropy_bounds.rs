//! Two Gaussians pulled apart: the Monte-Carlo entropy moves from the
//! conditional lower bound H(Z|T) to the upper bound H(Z|T) + H(T), while the
//! moment-matched Gaussian bound grows without limit.
//!
//! cargo run --release --example entropy_bounds

use infomax_lab::infotheory::{mixture_entropy_cond_bounds, mixture_entropy_mc, mixture_entropy_moment_upper};
use infomax_lab::numerics::{GaussianDensity, GaussianMixture, RngStream, Vector, DEFAULT_RIDGE};

fn main() -> infomax_lab::Result<()> {
    println!("{:>6}  {:>9}  {:>9}  {:>16}  {:>9}", "mu", "H(Z|T)", "MC", "H(Z|T) + H(T)", "moment");
    for mu in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
        let gmm = GaussianMixture::uniform(vec![
            GaussianDensity::isotropic(Vector::from_element(2, -mu / 2.0), 1.0)?,
            GaussianDensity::isotropic(Vector::from_element(2, mu / 2.0), 1.0)?,
        ])?;
        let mc = mixture_entropy_mc(&gmm, 200_000, &mut RngStream::new(1))?;
        let (lo, hi) = mixture_entropy_cond_bounds(&gmm)?;
        let moment = mixture_entropy_moment_upper(&gmm, DEFAULT_RIDGE)?;
        println!(
            "{mu:>6.1}  {:>9.4}  {:>9.4}  {:>16.4}  {:>9.4}   (MC s.e. {:.1e})",
            lo.value,
            mc.value,
            hi.value,
            moment.value,
            mc.std_err()
        );
    }
    Ok(())
}
