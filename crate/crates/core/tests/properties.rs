use proptest::prelude::*;

use infomax_lab::infotheory::{bench_mixture, mixture_entropy_cond_bounds, mixture_entropy_moment_upper};
use infomax_lab::normality::dagostino_k2;
use infomax_lab::numerics::{random_spd, sym_eigenvalues, GaussianDensity, RngStream};
use infomax_lab::pushforward::pushforward_gaussian;
use infomax_lab::ssl_objectives::{infonce_loss, vicreg_loss, EmbeddingBatch, VicregParams};
use infomax_lab::training::{make_manifold_dataset, Manifold, ManifoldDataset};
use infomax_lab::{Matrix, MlpNetwork};

fn net_dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..24, 2..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn region_map_reproduces_forward(dims in net_dims(), slope in 0.0f64..0.9, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let net = MlpNetwork::random(&dims, slope, &mut rng).unwrap();
        let x = rng.normal_vector(dims[0]) * 3.0;
        prop_assert!(net.verify_affine_consistency(&x).unwrap() <= 1e-9);
    }

    #[test]
    fn pushforward_covariance_is_psd(dims in net_dims(), seed in any::<u64>(), scale in 1e-4f64..10.0) {
        let mut rng = RngStream::new(seed);
        let net = MlpNetwork::random(&dims, 0.1, &mut rng).unwrap();
        let g = GaussianDensity::new(rng.normal_vector(dims[0]), random_spd(dims[0], 0.1, &mut rng) * scale).unwrap();
        let out = pushforward_gaussian(&net, &g).unwrap().output;
        let eig = sym_eigenvalues(out.cov()).unwrap();
        let tol = 1e-10 * eig[0].abs().max(1.0);
        prop_assert!(eig.iter().all(|v| *v >= -tol));
    }

    #[test]
    fn checkpoint_round_trip_is_exact(dims in net_dims(), slope in 0.0f64..0.9, seed in any::<u64>()) {
        let net = MlpNetwork::random(&dims, slope, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(MlpNetwork::from_json(&net.to_json()).unwrap(), net);
    }

    #[test]
    fn vicreg_is_nonnegative_and_translation_invariant(n in 2usize..20, k in 1usize..6, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let z = rng.normal_matrix(n, k);
        let zp = &z + rng.normal_matrix(n, k) * 0.3;
        let shift = Matrix::from_fn(n, k, |_, j| j as f64 * 1.7 - 2.0);
        let p = VicregParams::default();
        let a = vicreg_loss(&EmbeddingBatch::new(z.clone()).unwrap(), &EmbeddingBatch::new(zp.clone()).unwrap(), &p).unwrap();
        let b = vicreg_loss(&EmbeddingBatch::new(&z + &shift).unwrap(), &EmbeddingBatch::new(&zp + &shift).unwrap(), &p).unwrap();
        prop_assert!(a.total >= 0.0 && a.variance_term >= 0.0 && a.covariance_term >= 0.0 && a.invariance_term >= 0.0);
        prop_assert!((a.total - b.total).abs() <= 1e-9 * a.total.max(1.0));
    }

    #[test]
    fn infonce_ignores_row_scale(n in 2usize..12, k in 2usize..6, seed in any::<u64>(), s in 0.1f64..10.0) {
        let mut rng = RngStream::new(seed);
        let z = rng.normal_matrix(n, k);
        let zp = rng.normal_matrix(n, k);
        let a = infonce_loss(&EmbeddingBatch::new(z.clone()).unwrap(), &EmbeddingBatch::new(zp.clone()).unwrap(), 0.2).unwrap();
        let b = infonce_loss(&EmbeddingBatch::new(z * s).unwrap(), &EmbeddingBatch::new(zp).unwrap(), 0.2).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn k2_is_affine_invariant(seed in any::<u64>(), a in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0], b in -100.0f64..100.0) {
        let mut rng = RngStream::new(seed);
        let x: Vec<f64> = (0..200).map(|_| rng.standard_normal().powi(3)).collect();
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let (rx, ry) = (dagostino_k2(&x).unwrap(), dagostino_k2(&y).unwrap());
        prop_assert!((rx.k2_statistic - ry.k2_statistic).abs() <= 1e-9 * rx.k2_statistic.max(1.0));
        prop_assert!((rx.p_value - (-rx.k2_statistic / 2.0).exp()).abs() <= 1e-12);
    }

    #[test]
    fn exact_entropy_bounds_are_ordered(seed in any::<u64>()) {
        let gmm = bench_mixture(seed, 8, 6).unwrap();
        let (lower, upper) = mixture_entropy_cond_bounds(&gmm).unwrap();
        let moment = mixture_entropy_moment_upper(&gmm, 0.0).unwrap();
        prop_assert!(lower.value <= upper.value);
        prop_assert!(lower.value <= moment.value + 1e-9);
    }

    #[test]
    fn mixture_covariance_dominates_mean_component(seed in any::<u64>()) {
        let gmm = bench_mixture(seed, 6, 5).unwrap();
        let (_, cov) = gmm.moments();
        let mut avg = Matrix::zeros(gmm.dim(), gmm.dim());
        for (c, w) in gmm.components().iter().zip(gmm.weights()) {
            avg += c.cov() * *w;
        }
        let eig = sym_eigenvalues(&(&cov - &avg)).unwrap();
        prop_assert!(eig.iter().all(|v| *v >= -1e-9 * cov.norm().max(1.0)));
    }

    #[test]
    fn rng_streams_are_reproducible(seed in any::<u64>(), index in 0u64..1000) {
        let mut a = RngStream::derive(seed, "x", index);
        let mut b = RngStream::derive(seed, "x", index);
        let mut c = RngStream::derive(seed, "y", index);
        let va: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let vb: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let vc: Vec<u64> = (0..4).map(|_| c.next_u64()).collect();
        prop_assert_eq!(&va, &vb);
        prop_assert_ne!(va, vc);
    }

    #[test]
    fn dataset_round_trip(n in 2usize..12, d in 3usize..7, seed in any::<u64>(), helix in any::<bool>()) {
        let kind = if helix { Manifold::Helix } else { Manifold::Circle };
        let r = 1 + (seed as usize) % d;
        let ds = make_manifold_dataset(n, d, r, kind, 0.05, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(ManifoldDataset::from_json(&ds.to_json()).unwrap(), ds.clone());
        for k in 0..n {
            let eig = sym_eigenvalues(&ds.covariance(k)).unwrap();
            prop_assert_eq!(eig.iter().filter(|v| **v > 1e-8).count(), r);
        }
    }
}
