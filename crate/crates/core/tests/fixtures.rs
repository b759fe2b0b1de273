mod common;

use infomax_lab::normality::{dagostino_k2, sample_skew_kurt};
use infomax_lab::numerics::RngStream;
use infomax_lab::ssl_objectives::{network_loss, LossSpec, VicregParams};
use infomax_lab::training::{sample_two_views, train, ManifoldDataset};
use infomax_lab::{Matrix, MlpNetwork};

#[test]
fn committed_checkpoints_are_reproducible() {
    for name in ["vicreg", "infonce"] {
        let (init, ds, cfg) = common::fixture_run(&format!("fig1/{name}.toml"));
        let committed_ds = ManifoldDataset::load(&common::fixture(&format!("fig1/{name}/dataset.json"))).unwrap();
        assert_eq!(ds, committed_ds, "{name} dataset");
        let net = train(&init, &ds, &cfg).unwrap().net;
        let committed = MlpNetwork::load(&common::fixture(&format!("fig1/{name}/checkpoint.json"))).unwrap();
        assert_eq!(net, committed, "{name} checkpoint");
    }
}

#[test]
fn scipy_reference_values() {
    for name in ["normal_512.json", "uniform_512.json"] {
        let f = common::normality_fixture(name);
        let (g1, g2) = sample_skew_kurt(&f.samples).unwrap();
        assert!((g1 - f.skewness).abs() < 1e-10 && (g2 - f.kurtosis_excess).abs() < 1e-10);
        let r = dagostino_k2(&f.samples).unwrap();
        assert!((r.z_skew - f.z_skew).abs() < 1e-6, "{name} z_skew");
        assert!((r.z_kurt - f.z_kurt).abs() < 1e-6, "{name} z_kurt");
        assert!((r.k2_statistic - f.k2).abs() < 1e-6, "{name} k2");
        assert!((r.p_value - f.p_value).abs() < 1e-6, "{name} p");
        let (z1, z2, k2) = common::reference_k2(&f.samples);
        assert!((z1 - r.z_skew).abs() < 1e-6 && (z2 - r.z_kurt).abs() < 1e-6 && (k2 - r.k2_statistic).abs() < 1e-6);
    }
    assert!(common::normality_fixture("normal_512.json").p_value > 0.01);
    assert!(common::normality_fixture("uniform_512.json").p_value < 0.01);
}

fn mean_pair_distance(z: &Matrix, zp: &Matrix, same: bool, idx: &[usize]) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for i in 0..z.nrows() {
        for j in 0..zp.nrows() {
            if (idx[i] == idx[j]) == same {
                total += (z.row(i) - zp.row(j)).norm();
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn trained_embeddings_separate_prototypes() {
    let (init, ds, cfg) = common::fixture_run("train_circle.toml");
    let out = train(&init, &ds, &cfg).unwrap();
    let again = train(&init, &ds, &cfg).unwrap();
    assert_eq!(out.net, again.net);

    let views = sample_two_views(&ds, 256, 1.0, &mut RngStream::new(99)).unwrap();
    let z = out.net.forward_rows(&views.x).unwrap();
    let zp = out.net.forward_rows(&views.x_prime).unwrap();
    let same = mean_pair_distance(&z, &zp, true, &views.indices);
    let different = mean_pair_distance(&z, &zp, false, &views.indices);
    assert!(same < different, "{same} vs {different}");

    let first = out.log.first().unwrap().total;
    let last = out.log.last().unwrap().total;
    assert!(last <= 0.2 * first, "{first} -> {last}");
    let spec = LossSpec::Vicreg(VicregParams::default());
    assert!(network_loss(&out.net, &views.x, &views.x_prime, &spec).unwrap().total < first);
}
