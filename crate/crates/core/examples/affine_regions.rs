//! Walks along a line through input space and reports every linear region a
//! random leaky-ReLU network crosses, together with the affine map it uses there.
//!
//! cargo run --example affine_regions

use infomax_lab::numerics::RngStream;
use infomax_lab::{MlpNetwork, Vector};

fn main() -> infomax_lab::Result<()> {
    let mut rng = RngStream::new(3);
    let net = MlpNetwork::random(&[2, 8, 8, 1], 0.1, &mut rng)?;
    let (a, b) = (Vector::from_row_slice(&[-2.0, -1.0]), Vector::from_row_slice(&[2.0, 1.5]));

    let steps = 2000;
    let mut last = None;
    let mut regions = 0;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = &a * (1.0 - t) + &b * t;
        let pattern = net.activation_pattern(&x)?;
        if last.as_ref() != Some(&pattern) {
            regions += 1;
            let map = net.region_affine_map(&pattern)?;
            println!(
                "t = {t:.4}  active units {:>2}  f(x) = [{:+.3}, {:+.3}]·x {:+.3}",
                pattern.active_count(),
                map.slope[(0, 0)],
                map.slope[(0, 1)],
                map.offset[0]
            );
            last = Some(pattern);
        }
        debug_assert!(net.verify_affine_consistency(&x)? < 1e-9);
    }
    println!("{regions} regions crossed");
    Ok(())
}
