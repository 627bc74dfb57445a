use std::sync::Arc;

use ghlip_core::estimates::{
    check_dexp_transport, check_log_difference, check_rauch, constant_curvature_envelope_gap, log_difference_sweep,
    sphere_dexp_defect,
};
use ghlip_core::geometry::{Backend, Geometry};
use ghlip_core::manifold::{ConformalTorus, Point, Sphere, Vec2};

fn sphere(r: f64) -> Geometry {
    Geometry::new(Arc::new(Sphere::new(r).unwrap()), Backend::PreferExact)
}

fn perturbed_torus(eta: f64) -> Geometry {
    // side 34 keeps the injectivity radius above 16 = 1 / 0.0625
    Geometry::new(
        Arc::new(ConformalTorus::seeded(34.0, eta, 2, 5).unwrap()),
        Backend::PreferExact,
    )
}

#[test]
fn envelope_holds_on_sphere() {
    let rep = check_rauch(&sphere(4.0), 0.0625, 200, 3);
    assert!(rep.passed(), "{rep:?}");
    assert!(rep.details["lower_ratio"] > 0.9);
    assert!(rep.details["jacobi_residual"] < 1e-6, "{:?}", rep.details);
}

#[test]
fn normal_field_on_sphere_sits_on_lower_envelope() {
    let g = sphere(4.0);
    let gap = constant_curvature_envelope_gap(&g, 4.0, &Point::new(1, 0.5, -0.7), 2.0).unwrap();
    assert!(gap < 1e-6, "{gap}");
}

#[test]
fn envelope_holds_on_perturbed_torus() {
    let rep = check_rauch(&perturbed_torus(0.01), 0.0625, 100, 4);
    assert!(rep.passed(), "{rep:?}");
    assert!(rep.worst_ratio < 1.0);
}

#[test]
fn dexp_transport_on_sphere() {
    let rep = check_dexp_transport(&sphere(4.0), 0.0625, 100, 5);
    assert!(rep.passed(), "{rep:?}");
    assert!(rep.details["defect"] <= sphere_dexp_defect(4.0, 2.0) + 1e-6);
}

#[test]
fn dexp_orthogonal_defect_matches_closed_form() {
    let g = sphere(4.0);
    let p = Point::new(0, 0.3, -0.1);
    for r in [0.5, 1.0, 2.0] {
        let a = g.from_frame(&p, &Vec2::new(r, 0.0));
        let xi = g.from_frame(&p, &Vec2::new(0.0, 1.0));
        let (q, j) = g.dexp(&p, &a, &xi).unwrap();
        let t = g.transport_along(&p, &a, &q, &xi).unwrap();
        let defect = g.norm(&q, &(j - t));
        assert!((defect - sphere_dexp_defect(4.0, r)).abs() < 1e-6, "{defect}");
    }
}

#[test]
fn dexp_transport_on_perturbed_torus() {
    let rep = check_dexp_transport(&perturbed_torus(0.01), 0.0625, 60, 6);
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn log_difference_constant_is_stable_across_seeds() {
    let g = sphere(4.0);
    let a = check_log_difference(&g, 0.0625, 150, 1).worst_ratio;
    let b = check_log_difference(&g, 0.0625, 150, 2).worst_ratio;
    assert!(a.is_finite() && b.is_finite());
    assert!((a - b).abs() <= 0.2 * a.max(b), "{a} vs {b}");
}

#[test]
fn log_difference_is_linear_in_curvature() {
    let cases: Vec<(Geometry, f64)> = [0.0625f64, 0.04, 0.01]
        .iter()
        .map(|d| (sphere(1.0 / d.sqrt()), *d))
        .collect();
    let (points, fit) = log_difference_sweep(&cases, 150, 7);
    let fit = fit.unwrap();
    assert!((fit.exponent - 1.0).abs() <= 0.3, "{points:?} {fit:?}");
}
