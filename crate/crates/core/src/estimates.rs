//! Numerical checks of the comparison estimates for Jacobi fields, the
//! differential of the exponential map, and differences of logarithms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow;
use crate::geometry::Geometry;
use crate::manifold::{Point, Vec2};
use crate::margin::{BoundKind, MarginReport};
use crate::parallel::map_indexed;
use crate::rng::{self, TrialRng};

/// Absolute slack folded into the Jacobi envelope comparison.
pub const RAUCH_SLACK: f64 = 1e-9;

const MIN_LENGTH: f64 = 0.1;
const MAX_LENGTH: f64 = 2.0;

fn random_unit(g: &Geometry, p: &Point, r: &mut TrialRng) -> Vec2 {
    let a = r.random_range(0.0..std::f64::consts::TAU);
    g.from_frame(p, &Vec2::new(a.cos(), a.sin()))
}

fn random_in_disk(g: &Geometry, p: &Point, radius: f64, r: &mut TrialRng) -> Vec2 {
    random_unit(g, p, r) * (radius * r.random_range(0.0f64..1.0).sqrt())
}

/// Families of Jacobi initial data used by the envelope check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobiFamily {
    VanishingStart,
    VanishingDerivative,
    /// `DJ(0)` a positive multiple of `J(0)`.
    Collinear,
    /// Unconstrained data; only the upper envelope applies.
    General,
}

impl JacobiFamily {
    const ALL: [JacobiFamily; 4] = [
        JacobiFamily::VanishingStart,
        JacobiFamily::VanishingDerivative,
        JacobiFamily::Collinear,
        JacobiFamily::General,
    ];
}

struct EnvelopeOutcome {
    lower: f64,
    upper: f64,
    residual: f64,
    family: JacobiFamily,
    length: f64,
}

fn rauch_trial(g: &Geometry, delta: f64, seed: u64, k: usize) -> Result<EnvelopeOutcome> {
    let mut r = rng::stream(seed, "rauch", k as u64);
    let s = g.surface();
    let p = s.sample(&mut r);
    let length = r.random_range(MIN_LENGTH..MAX_LENGTH);
    let u = random_unit(g, &p, &mut r);
    let family = JacobiFamily::ALL[k % 4];
    let a = random_unit(g, &p, &mut r) * r.random_range(0.1..1.0);
    let b = random_unit(g, &p, &mut r) * r.random_range(0.1..1.0);
    let (j0, dj0) = match family {
        JacobiFamily::VanishingStart => (Vec2::zeros(), b),
        JacobiFamily::VanishingDerivative => (a, Vec2::zeros()),
        JacobiFamily::Collinear => (a, a * r.random_range(0.1..2.0)),
        JacobiFamily::General => (a, b),
    };
    let geo = flow::geodesic_ivp(s, &p, &u, length)?;
    let jac = flow::jacobi_field(s, &geo, &j0, &dj0)?;
    let n0 = g.norm(&p, &j0);
    let n1 = g.norm(&p, &dj0);
    let sd = delta.sqrt();
    let mut lower = 0.0f64;
    let mut upper = 0.0f64;
    for (i, node) in jac.nodes.iter().enumerate() {
        let t = node.t;
        let (nj, _) = jac.norm_at(s, i);
        let lo = n0 * (sd * t).cos() + n1 * (sd * t).sin() / sd;
        let hi = n0 * (sd * t).cosh() + n1 * (sd * t).sinh() / sd;
        let scale = RAUCH_SLACK * (1.0 + hi);
        if family != JacobiFamily::General && lo > 0.0 {
            lower = lower.max((lo - scale).max(0.0) / nj.max(f64::MIN_POSITIVE));
        }
        upper = upper.max(nj / (hi + scale));
    }
    Ok(EnvelopeOutcome {
        lower,
        upper,
        residual: jac.residual(s),
        family,
        length,
    })
}

/// Jacobi envelope check: along unit-speed geodesics of length in `[0.1, 2]`,
/// `|J(0)| cos(sqrt(delta) t) + |J'(0)| sin(sqrt(delta) t) / sqrt(delta) <= |J(t)|`
/// `<= |J(0)| cosh(sqrt(delta) t) + |J'(0)| sinh(sqrt(delta) t) / sqrt(delta)`
/// at every node. The lower envelope is checked for the families where it holds.
pub fn check_rauch(g: &Geometry, delta: f64, trials: usize, seed: u64) -> MarginReport {
    let outcomes = map_indexed(trials, |k| rauch_trial(g, delta, seed, k));
    let mut rep = MarginReport::new("jacobi_envelope", BoundKind::Explicit);
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                rep.detail_max("lower_ratio", o.lower);
                rep.detail_max("upper_ratio", o.upper);
                rep.detail_max("jacobi_residual", o.residual);
                let ratio = o.lower.max(o.upper);
                rep.record(k, ratio, || {
                    format!(
                        "{:?} length {:.3}: lower {:.3e}, upper {:.3e}",
                        o.family, o.length, o.lower, o.upper
                    )
                });
            }
            Err(e) => rep.record(k, f64::NAN, || e.to_string()),
        }
    }
    rep
}

/// Largest `| |J(t)| - R sin(t / R) |` for a unit normal Jacobi field with
/// `J(0) = 0` along a unit-speed geodesic of the given length.
pub fn constant_curvature_envelope_gap(g: &Geometry, radius: f64, p: &Point, length: f64) -> Result<f64> {
    let s = g.surface();
    let u = g.from_frame(p, &Vec2::new(1.0, 0.0));
    let n = g.from_frame(p, &Vec2::new(0.0, 1.0));
    let geo = flow::geodesic_ivp(s, p, &u, length)?;
    let jac = flow::jacobi_field(s, &geo, &Vec2::zeros(), &n)?;
    let mut worst = 0.0f64;
    for (i, node) in jac.nodes.iter().enumerate() {
        let (nj, _) = jac.norm_at(s, i);
        worst = worst.max((nj - radius * (node.t / radius).sin()).abs());
    }
    Ok(worst)
}

struct DexpOutcome {
    transport_ratio: f64,
    bilipschitz_ratio: f64,
    defect: f64,
    r: f64,
}

fn dexp_trial(g: &Geometry, delta: f64, seed: u64, k: usize) -> Result<DexpOutcome> {
    let mut rnd = rng::stream(seed, "dexp_transport", k as u64);
    let p = g.surface().sample(&mut rnd);
    let r = rnd.random_range(MIN_LENGTH..MAX_LENGTH);
    let a = random_unit(g, &p, &mut rnd) * r;
    let xi = random_unit(g, &p, &mut rnd);
    let (q, j) = g.dexp(&p, &a, &xi)?;
    let t = g.transport_along(&p, &a, &q, &xi)?;
    let defect = g.norm(&q, &(j - t));
    let bound = r * r * delta;

    let a1 = random_in_disk(g, &p, r, &mut rnd);
    let a2 = random_in_disk(g, &p, r, &mut rnd);
    let x1 = g.exp(&p, &a1)?;
    let x2 = g.exp(&p, &a2)?;
    let tangent = g.norm(&p, &(a1 - a2));
    let dist = g.dist(&x1, &x2)?;
    let stretch = if tangent > 0.0 && dist > 0.0 {
        (dist / tangent).max(tangent / dist)
    } else {
        1.0
    };
    Ok(DexpOutcome {
        transport_ratio: defect / bound,
        bilipschitz_ratio: stretch / (1.0 + delta * r * r),
        defect,
        r,
    })
}

/// Checks `|d exp_p(a) xi - tau xi| <= r^2 delta |xi|` for `|a| = r < 2`, and
/// that `exp_p` is `(1 + delta r^2)`-bi-Lipschitz on the `r`-ball.
pub fn check_dexp_transport(g: &Geometry, delta: f64, trials: usize, seed: u64) -> MarginReport {
    let outcomes = map_indexed(trials, |k| dexp_trial(g, delta, seed, k));
    let mut rep = MarginReport::new("dexp_transport", BoundKind::Explicit);
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                rep.detail_max("transport_ratio", o.transport_ratio);
                rep.detail_max("bilipschitz_ratio", o.bilipschitz_ratio);
                rep.detail_max("defect", o.defect);
                rep.record(k, o.transport_ratio.max(o.bilipschitz_ratio), || {
                    format!("r {:.3}: defect {:.3e}", o.r, o.defect)
                });
            }
            Err(e) => rep.record(k, f64::NAN, || e.to_string()),
        }
    }
    rep
}

/// `|1 - R sin(r / R) / r|`: transport defect of `d exp` on the round sphere
/// for a unit vector orthogonal to `a`, `|a| = r`.
pub fn sphere_dexp_defect(radius: f64, r: f64) -> f64 {
    (1.0 - radius * (r / radius).sin() / r).abs()
}

/// Defect `|log_z y - log_z x - tau_{x,z} log_x y|` at a triple.
pub fn log_difference_defect(g: &Geometry, x: &Point, y: &Point, z: &Point) -> Result<f64> {
    let lzy = g.log(z, y)?;
    let lzx = g.log(z, x)?;
    let lxy = g.log(x, y)?;
    let t = g.transport(x, z, &lxy)?;
    Ok(g.norm(z, &(lzy - lzx - t)))
}

fn log_difference_trial(g: &Geometry, seed: u64, k: usize) -> Result<f64> {
    let mut r = rng::stream(seed, "log_difference", k as u64);
    let x = g.surface().sample(&mut r);
    let y = g.exp(&x, &random_in_disk(g, &x, MAX_LENGTH, &mut r))?;
    let z = g.exp(&x, &random_in_disk(g, &x, MAX_LENGTH, &mut r))?;
    log_difference_defect(g, &x, &y, &z)
}

/// Worst log-difference defect over triples within distance 2 of a base
/// point, as a multiple of `delta` (an empirical constant).
pub fn check_log_difference(g: &Geometry, delta: f64, trials: usize, seed: u64) -> MarginReport {
    let outcomes = map_indexed(trials, |k| log_difference_trial(g, seed, k));
    let mut rep = MarginReport::new("log_difference", BoundKind::Empirical);
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(d) => {
                rep.detail_max("defect", d);
                rep.record(k, d / delta, String::new);
            }
            Err(e) => rep.record(k, f64::NAN, || e.to_string()),
        }
    }
    rep
}

/// Least-squares fit of `log y = exponent log x + log prefactor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub prefactor: f64,
}

pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Option<PowerFit> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    Some(PowerFit {
        exponent,
        prefactor: (my - exponent * mx).exp(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub worst: f64,
}

/// Worst log-difference defect at each `(geometry, delta)` and the fitted exponent.
pub fn log_difference_sweep(
    cases: &[(Geometry, f64)],
    trials: usize,
    seed: u64,
) -> (Vec<SweepPoint>, Option<PowerFit>) {
    let points: Vec<SweepPoint> = cases
        .iter()
        .map(|(g, d)| SweepPoint {
            delta: *d,
            worst: check_log_difference(g, *d, trials, seed)
                .details
                .get("defect")
                .copied()
                .unwrap_or(f64::NAN),
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.delta).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.worst).collect();
    let fit = fit_power_law(&xs, &ys);
    (points, fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Backend;
    use crate::manifold::{FlatTorus, Sphere};
    use std::sync::Arc;

    fn torus() -> Geometry {
        Geometry::new(Arc::new(FlatTorus::new(8.0).unwrap()), Backend::PreferExact)
    }

    #[test]
    fn flat_torus_passes_all_checks() {
        let g = torus();
        let rep = check_rauch(&g, 0.25, 40, 1);
        assert!(rep.passed(), "{rep:?}");
        let rep = check_dexp_transport(&g, 0.25, 40, 1);
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.details["defect"] < 1e-12);
        let rep = check_log_difference(&g, 0.25, 40, 1);
        assert!(rep.details["defect"] < 1e-12);
    }

    #[test]
    fn log_difference_vanishes_when_base_points_coincide() {
        let g = Geometry::new(Arc::new(Sphere::new(4.0).unwrap()), Backend::PreferExact);
        let x = Point::new(0, 0.1, 0.3);
        let y = Point::new(0, -0.2, 0.1);
        assert!(log_difference_defect(&g, &x, &y, &x).unwrap() < 1e-12);
    }

    #[test]
    fn sphere_envelope_equality() {
        let g = Geometry::new(Arc::new(Sphere::new(4.0).unwrap()), Backend::PreferExact);
        let gap = constant_curvature_envelope_gap(&g, 4.0, &Point::new(0, 0.3, 0.2), 2.0).unwrap();
        assert!(gap < 1e-6, "{gap}");
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let xs = [0.01, 0.04, 0.0625];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.1)).collect();
        let f = fit_power_law(&xs, &ys).unwrap();
        assert!((f.exponent - 1.1).abs() < 1e-12);
        assert!((f.prefactor - 3.0).abs() < 1e-10);
        assert!(fit_power_law(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn sphere_defect_formula() {
        // R = 4, r = 1: 1 - 4 sin(1/4)
        assert!((sphere_dexp_defect(4.0, 1.0) - 0.010384163).abs() < 1e-8);
    }
}
