use std::sync::Arc;

use ghlip_core::correspondence::{build_map, oracle_correspondence, MapParams};
use ghlip_core::geometry::{Backend, Geometry};
use ghlip_core::manifold::{rescale, ConformalTorus, FlatTorus, Sphere};
use ghlip_core::nets::{build_net, validate_net, NetOptions};

fn torus(side: f64) -> Geometry {
    Geometry::new(Arc::new(FlatTorus::new(side).unwrap()), Backend::PreferExact)
}

#[test]
fn torus_net_count_is_in_the_packing_bracket() {
    let g = torus(8.0);
    let net = build_net(&g, 0.5, 11, &NetOptions::default()).unwrap();
    // area / (pi eps^2) <= n <= area / (pi (eps/2)^2)
    let area = 64.0;
    let lo = area / (std::f64::consts::PI * 0.25);
    let hi = area / (std::f64::consts::PI * 0.0625);
    assert!(
        (lo.floor() as usize..=hi.ceil() as usize).contains(&net.len()),
        "{}",
        net.len()
    );
    let v = validate_net(&g, &net, 4000, 12).unwrap();
    assert!(v.separation >= 0.5, "{v:?}");
    assert!(v.covering_radius <= 0.5 * (1.0 + 1e-3), "{v:?}");
}

#[test]
fn sphere_net_covers_on_ten_thousand_probes() {
    let g = Geometry::new(Arc::new(Sphere::new(4.0).unwrap()), Backend::PreferExact);
    let net = build_net(&g, 0.3, 13, &NetOptions::default()).unwrap();
    let v = validate_net(&g, &net, 10_000, 14).unwrap();
    assert!(v.separation >= 0.3, "{v:?}");
    assert!(v.covering_radius <= 0.3 * (1.0 + 1e-3), "{v:?}");
}

#[test]
fn net_is_reproducible() {
    let g = torus(5.0);
    let a = build_net(&g, 0.6, 3, &NetOptions::default()).unwrap();
    let b = build_net(&g, 0.6, 3, &NetOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn identity_correspondence_has_no_distortion() {
    let g = torus(6.0);
    let net = build_net(&g, 0.5, 1, &NetOptions::default()).unwrap();
    let map = build_map("identity", &MapParams::new()).unwrap();
    let c = oracle_correspondence(map.as_ref(), &g, &g, &net, None, 500, 2).unwrap();
    assert!(c.distortion <= 1e-12, "{}", c.distortion);
    assert!(c.covering_defect <= 0.5 * (1.0 + 1e-3));
}

#[test]
fn scaled_torus_distortion_is_eta_times_distance() {
    let v = torus(8.0);
    let eta = 0.02;
    let w = Geometry::new(
        rescale(v.surface_arc().clone(), 1.0 + eta).unwrap(),
        Backend::PreferExact,
    );
    let opts = NetOptions {
        cache_radius: 4.0,
        ..NetOptions::default()
    };
    let net = build_net(&v, 0.5, 5, &opts).unwrap();
    let map = build_map("identity", &MapParams::new()).unwrap();
    let c = oracle_correspondence(map.as_ref(), &v, &w, &net, None, 200, 6).unwrap();
    let maxdist = net.pairs.iter().map(|p| p.dist).fold(0.0, f64::max);
    assert!(c.distortion <= 0.08 + 1e-12);
    assert!(
        (c.distortion - eta * maxdist).abs() < 1e-9,
        "{} {}",
        c.distortion,
        eta * maxdist
    );
}

#[test]
fn perturbed_torus_distortion_is_stable_across_seeds() {
    let v = torus(10.0);
    let w = Geometry::new(
        Arc::new(ConformalTorus::seeded(10.0, 0.01, 3, 9).unwrap()),
        Backend::PreferExact,
    );
    assert_eq!(w.surface().name(), "conformal_torus");
    let map = build_map("identity", &MapParams::new()).unwrap();
    let measure = |seed| {
        let net = build_net(&v, 0.7, seed, &NetOptions::default()).unwrap();
        oracle_correspondence(map.as_ref(), &v, &w, &net, None, 200, seed)
            .unwrap()
            .distortion
    };
    let a = measure(1);
    let b = measure(2);
    assert!(a > 0.0 && a <= 2.0 * 0.01 * 2.0, "{a}");
    assert!((a - b).abs() <= 0.1 * a.max(b), "{a} vs {b}");
}
