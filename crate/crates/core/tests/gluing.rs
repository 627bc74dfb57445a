use std::sync::Arc;

use ghlip_core::charts::{frame_norm, ChartSet};
use ghlip_core::correspondence::{build_map, oracle_correspondence, MapParams};
use ghlip_core::geometry::{Backend, Geometry};
use ghlip_core::gluing::{audit_differential, injectivity_audit, measure_lipschitz, GluedMap};
use ghlip_core::manifold::{rescale, ConformalTorus, FlatTorus, Mat2, Point, Vec2};
use ghlip_core::nets::{build_net, Net, NetOptions};
use ghlip_core::partition::PartitionOfUnity;

const SIDE: f64 = 8.0;

fn flat() -> Geometry {
    Geometry::new(Arc::new(FlatTorus::new(SIDE).unwrap()), Backend::PreferExact)
}

fn images(v: &Geometry, w: &Geometry, net: &Net, map: &str, params: &[(&str, f64)]) -> Vec<Point> {
    let p: MapParams = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let map = build_map(map, &p).unwrap();
    oracle_correspondence(map.as_ref(), v, w, net, Some(1000), 20, 1)
        .unwrap()
        .images
}

/// Minimal-image displacement on the flat torus.
fn wrap(d: Vec2) -> Vec2 {
    d.map(|c| c - SIDE * (c / SIDE).round())
}

#[test]
fn flat_objective_and_mean_have_closed_forms() {
    let g = flat();
    let net = build_net(&g, 0.5, 1, &NetOptions::default()).unwrap();
    let imgs = images(&g, &g, &net, "identity", &[("jitter", 0.05), ("jitter_seed", 3.0)]);
    let charts = ChartSet::new(&g, &g, &net, &imgs);
    let pou = PartitionOfUnity::new(&g, &net);
    let gm = GluedMap::new(&charts, &pou, 0.25);
    let mut r = ghlip_core::rng::seeded(2);
    for _ in 0..20 {
        let x = g.surface().sample(&mut r);
        let active = gm.active(&x).unwrap();
        let y = Point::new(0, x.coords.x + 0.1, x.coords.y - 0.05);
        let expected: f64 = active
            .iter()
            .map(|a| 0.5 * a.weight.value * wrap(a.target.coords - y.coords).norm_squared())
            .sum();
        let phi = gm.phi_objective(&x, &g.canonical(&y)).unwrap();
        assert!((phi - expected).abs() <= 1e-12, "{phi} vs {expected}");
        let mean = active.iter().fold(x.coords, |acc, a| {
            acc + wrap(a.target.coords - x.coords) * a.weight.value
        });
        let h = gm.h(&x).unwrap();
        let gap = wrap(h.coords - mean).norm();
        assert!(gap <= 1e-9, "{gap}");
    }
}

#[test]
fn shifted_torus_gives_a_translation() {
    let g = flat();
    let net = build_net(&g, 0.5, 1, &NetOptions::default()).unwrap();
    let imgs = images(&g, &g, &net, "shift", &[("dx", 0.3), ("dy", -1.1)]);
    let charts = ChartSet::new(&g, &g, &net, &imgs);
    let pou = PartitionOfUnity::new(&g, &net);
    let gm = GluedMap::new(&charts, &pou, 0.25);
    let mut r = ghlip_core::rng::seeded(3);
    for _ in 0..10 {
        let x = g.surface().sample(&mut r);
        let d = gm.glued_differential(&x).unwrap();
        let moved = wrap(d.karcher.y.coords - x.coords - Vec2::new(0.3, -1.1)).norm();
        assert!(moved <= 1e-9, "{moved}");
        assert!(frame_norm(&(d.frames - Mat2::identity())) <= 1e-9);
    }
    let rep = measure_lipschitz(&gm, 200, 1.0, 10, 4);
    assert!(rep.failures.is_empty());
    assert!(rep.d_lip <= 1e-10, "{rep:?}");
}

#[test]
fn scaled_torus_differential_is_a_homothety() {
    let v = flat();
    let w = Geometry::new(rescale(v.surface_arc().clone(), 1.02).unwrap(), Backend::PreferExact);
    let net = build_net(&v, 0.5, 1, &NetOptions::default()).unwrap();
    let imgs = images(&v, &w, &net, "identity", &[]);
    let charts = ChartSet::new(&v, &w, &net, &imgs);
    let pou = PartitionOfUnity::new(&v, &net);
    let gm = GluedMap::new(&charts, &pou, 0.25);
    let mut r = ghlip_core::rng::seeded(5);
    for _ in 0..10 {
        let x = v.surface().sample(&mut r);
        let d = gm.glued_differential(&x).unwrap();
        assert!(
            frame_norm(&(d.frames - Mat2::identity() * 1.02)) <= 1e-8,
            "{}",
            d.frames
        );
    }
    let rep = measure_lipschitz(&gm, 300, 1.0, 10, 6);
    assert!((rep.d_lip - 1.02f64.ln()).abs() <= 1e-3, "{rep:?}");
}

#[test]
fn perturbed_torus_differential_matches_finite_differences() {
    let v = Geometry::new(Arc::new(FlatTorus::new(10.0).unwrap()), Backend::PreferExact);
    let w = Geometry::new(
        Arc::new(ConformalTorus::seeded(10.0, 0.025, 3, 7).unwrap()),
        Backend::PreferExact,
    );
    let net = build_net(&v, 0.5, 2, &NetOptions::default()).unwrap();
    let imgs = images(&v, &w, &net, "identity", &[("jitter", 0.05), ("jitter_seed", 3.0)]);
    let charts = ChartSet::new(&v, &w, &net, &imgs);
    let pou = PartitionOfUnity::new(&v, &net);
    let gm = GluedMap::new(&charts, &pou, 0.25);
    let audit = audit_differential(&gm, 6, 7);
    assert!(audit.failures.is_empty(), "{:?}", audit.failures);
    assert!(audit.max_fd_gap <= 1e-2, "{audit:?}");
    assert!(audit.max_hessian_gap <= 1e-3, "{audit:?}");
    assert!(audit.min_star_eigenvalue >= 0.75, "{audit:?}");
    assert_eq!(audit.non_monotone, 0);
    assert!(audit.passed());
}

#[test]
fn identity_glued_map_is_injective() {
    let g = flat();
    let net = build_net(&g, 0.5, 1, &NetOptions::default()).unwrap();
    let imgs = images(&g, &g, &net, "identity", &[]);
    let charts = ChartSet::new(&g, &g, &net, &imgs);
    let pou = PartitionOfUnity::new(&g, &net);
    let gm = GluedMap::new(&charts, &pou, 0.25);
    let rep = injectivity_audit(&gm, 1000, 200, 2.0, 1.0, 8);
    assert!(rep.passed(), "{rep:?}");
    assert_eq!(rep.collisions, 0);
    assert!(rep.pairs_checked > 0);
    assert!((rep.min_pair_ratio - 1.0).abs() <= 1e-9, "{rep:?}");
}
