use nsh_core::contour::{self, Contour};
use nsh_core::geometry::{load_point_cloud, save_point_cloud, PointFormat};
use nsh_core::sinenet::{load_model, save_model};
use nsh_core::trainer::{self, TrainConfig};
use nsh_core::{Activation, AnalyticField, Architecture, PointCloud, ScalarField, SineNetwork};

fn small_net(dim: usize, seed: u64) -> SineNetwork {
    let arch = Architecture {
        input_dim: dim,
        hidden_layers: 1,
        width: 16,
        activation: Activation::Sine { omega0: 30.0 },
    };
    SineNetwork::init(arch, seed).unwrap()
}

fn sphere_cloud(n: usize) -> PointCloud {
    let pts = AnalyticField::unit_sphere().surface_samples(n).unwrap();
    PointCloud::new(3, pts.iter().map(|x| 2.0 * x + 5.0).collect(), None).unwrap()
}

#[test]
fn fit_save_load_extract() {
    let cloud = sphere_cloud(300);
    let config = TrainConfig {
        iters: 4,
        batch_size: 300,
        log_every: 1,
        ..Default::default()
    };
    let (net, history) = trainer::fit(&cloud, small_net(3, 0), &config, &mut ()).unwrap();
    assert_eq!(history.records.len(), 4);
    assert!(history.records.iter().all(|r| r.total.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nsh");
    save_model(&net, &path).unwrap();
    let again = load_model(&path).unwrap();
    let x = [0.1, -0.3, 0.2];
    assert_eq!(net.jet(&x).unwrap().value, again.jet(&x).unwrap().value);
    assert_eq!(net.transform(), again.transform());

    match contour::extract(&again, 12, 0.0, true).unwrap() {
        Contour::Surface(m) => {
            // world-unit vertices stay inside the cloud's bounding box
            for v in m.vertices() {
                assert!(v.iter().all(|c| (2.9..=7.1).contains(c)), "{v:?}");
            }
        }
        Contour::Curve(_) => panic!("3D network produced a curve"),
    }
}

#[test]
fn training_is_reproducible() {
    let cloud = sphere_cloud(200);
    let config = TrainConfig {
        iters: 3,
        batch_size: 200,
        ..Default::default()
    };
    let a = trainer::fit(&cloud, small_net(3, 4), &config, &mut ()).unwrap().0;
    let b = trainer::fit(&cloud, small_net(3, 4), &config, &mut ()).unwrap().0;
    assert_eq!(a.params(), b.params());
}

#[test]
fn point_cloud_files_round_trip() {
    let cloud = sphere_cloud(50);
    let dir = tempfile::tempdir().unwrap();
    for (name, fmt) in [("c.xyz", PointFormat::Xyz), ("c.ply", PointFormat::Ply)] {
        let path = dir.path().join(name);
        save_point_cloud(&cloud, &path, fmt).unwrap();
        let back = load_point_cloud(&path, fmt).unwrap();
        assert_eq!(back.len(), cloud.len());
        for (p, q) in back.coords().iter().zip(cloud.coords()) {
            assert!((p - q).abs() < 1e-6);
        }
    }
}

#[test]
fn mismatched_dimension_is_rejected() {
    let cloud = sphere_cloud(20);
    let err = trainer::fit(&cloud, small_net(2, 0), &TrainConfig::default(), &mut ());
    assert!(err.is_err());
}
