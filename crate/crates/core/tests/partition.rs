use std::sync::Arc;

use ghlip_core::geometry::{Backend, Geometry};
use ghlip_core::manifold::{FlatTorus, Sphere};
use ghlip_core::nets::{build_net, NetOptions};
use ghlip_core::partition::{check_partition, PartitionOfUnity};

#[test]
fn flat_torus_partition_invariants() {
    let g = Geometry::new(Arc::new(FlatTorus::new(8.0).unwrap()), Backend::PreferExact);
    let net = build_net(&g, 0.5, 1, &NetOptions::default()).unwrap();
    let pou = PartitionOfUnity::new(&g, &net);
    let r = check_partition(&g, &pou, 1000, 2).unwrap();
    assert_eq!(r.probes, 1000);
    assert!(r.max_sum_error <= 1e-12, "{r:?}");
    assert!(r.max_overlap <= 49, "{r:?}");
    assert!(r.max_gradient_error <= 1e-4, "{r:?}");
    assert!(r.max_gradient_sum <= 1e-10, "{r:?}");
    assert!(r.values_in_range && r.plateau_at_every_probe, "{r:?}");
    assert!(r.passed(49));
}

#[test]
fn sphere_partition_invariants() {
    let g = Geometry::new(Arc::new(Sphere::new(4.0).unwrap()), Backend::PreferExact);
    let net = build_net(&g, 0.4, 3, &NetOptions::default()).unwrap();
    let pou = PartitionOfUnity::new(&g, &net);
    let r = check_partition(&g, &pou, 300, 4).unwrap();
    assert!(r.passed(49), "{r:?}");
}

#[test]
fn weights_vanish_beyond_twice_epsilon() {
    let g = Geometry::new(Arc::new(FlatTorus::new(8.0).unwrap()), Backend::PreferExact);
    let net = build_net(&g, 0.5, 1, &NetOptions::default()).unwrap();
    let pou = PartitionOfUnity::new(&g, &net);
    let mut r = ghlip_core::rng::seeded(8);
    for _ in 0..50 {
        let x = g.surface().sample(&mut r);
        let ws = pou.weights(&g, &x).unwrap();
        for w in &ws {
            assert!(g.dist(&x, &net.points[w.index]).unwrap() < 1.0);
        }
        let listed: Vec<usize> = ws.iter().map(|w| w.index).collect();
        for (i, p) in net.points.iter().enumerate() {
            if g.dist(&x, p).unwrap() < 0.5 {
                assert!(listed.contains(&i));
            }
        }
    }
}
