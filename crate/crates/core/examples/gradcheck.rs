//! Checks the hand-written backward pass of both SSL losses against central
//! finite differences on a random network.
//!
//! cargo run --release --example gradcheck

use infomax_lab::numerics::RngStream;
use infomax_lab::ssl_objectives::{gradcheck, LossSpec, VicregParams};
use infomax_lab::MlpNetwork;

fn main() -> infomax_lab::Result<()> {
    let mut rng = RngStream::new(5);
    let net = MlpNetwork::random(&[8, 32, 32, 8], 0.1, &mut rng)?;
    let x = rng.normal_matrix(32, 8);
    let x_prime = &x + rng.normal_matrix(32, 8) * 0.1;
    for spec in [LossSpec::Vicreg(VicregParams::default()), LossSpec::InfoNce { temperature: 0.2 }] {
        let r = gradcheck(&net, &x, &x_prime, &spec, 1e-5)?;
        let worst = r.worst.map(|c| c.to_string()).unwrap_or_default();
        println!(
            "{:<8} max relative error {:.2e} at {worst} ({} parameters, {} excluded)",
            spec.name(),
            r.max_rel_error,
            r.checked,
            r.excluded
        );
    }
    Ok(())
}
