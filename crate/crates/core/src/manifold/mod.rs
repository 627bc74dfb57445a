//! Model surfaces described by metric tensors in charts.
//!
//! Every model implements [`Surface`]; the geometry kernel only ever talks to
//! the trait, and models are created by name through [`registry`].

mod graph;
pub mod registry;
mod rescaled;
mod torus;
mod twocap;

pub use graph::QuadraticGraph;
pub use rescaled::{rescale, Rescaled};
pub use torus::{ConformalTorus, FlatTorus, Mode};
pub use twocap::{Ellipsoid, Sphere};

use std::fmt;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::rng;

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// A point given by chart id and chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub chart: u8,
    pub coords: Vec2,
}

impl Point {
    pub fn new(chart: u8, x: f64, y: f64) -> Self {
        Self {
            chart,
            coords: Vec2::new(x, y),
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]({}, {})", self.chart, self.coords.x, self.coords.y)
    }
}

/// A base point and a tangent vector in the chart frame of that point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentAtPoint {
    pub base: Point,
    pub components: Vec2,
}

/// Christoffel symbols; `self.0[k][(i, j)]` is `Gamma^k_{ij}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Christoffel(pub [Mat2; 2]);

impl Christoffel {
    pub fn zero() -> Self {
        Self([Mat2::zeros(); 2])
    }

    /// `Gamma^k_{ij} a^i b^j`.
    #[inline]
    pub fn contract(&self, a: &Vec2, b: &Vec2) -> Vec2 {
        Vec2::new(a.dot(&(self.0[0] * b)), a.dot(&(self.0[1] * b)))
    }

    /// Symbols of the conformal metric `e^{2f} I` given the gradient of `f`.
    #[inline]
    pub fn conformal(df: &Vec2) -> Self {
        // Gamma^k_ij = d_i f delta_jk + d_j f delta_ik - d_k f delta_ij
        let (fx, fy) = (df.x, df.y);
        Self([Mat2::new(fx, fy, fy, -fx), Mat2::new(-fy, fx, fx, fy)])
    }
}

/// A cell of a candidate grid: centre plus half-width in chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub center: Point,
    pub half_width: f64,
}

/// Closed-form exponential and logarithm (in chart coordinates).
pub trait ExactGeodesics: Send + Sync {
    fn exp(&self, p: &Point, v: &Vec2) -> Point;
    fn log(&self, p: &Point, q: &Point) -> Vec2;
    /// Geodesics are straight lines in coordinates, transport is the identity.
    fn is_flat(&self) -> bool {
        false
    }
}

/// A compact two-dimensional Riemannian model given in charts.
pub trait Surface: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize {
        2
    }

    /// Metric tensor at `p` in the chart of `p`. Must accept unwrapped coordinates.
    fn metric(&self, p: &Point) -> Mat2;

    fn christoffel(&self, p: &Point) -> Christoffel {
        christoffel_fd(self, p)
    }

    fn gaussian_curvature(&self, p: &Point) -> f64 {
        let r = riemann_fd(self, p);
        let g = self.metric(p);
        sectional_from_riemann(&r, &g, &Vec2::new(1.0, 0.0), &Vec2::new(0.0, 1.0))
    }

    /// Canonical representative (periodic wrap, preferred chart).
    fn canonical(&self, p: Point) -> Point {
        p
    }

    fn chart_count(&self) -> u8 {
        1
    }

    /// Re-expresses `p` in `chart`, with the Jacobian of the coordinate change.
    fn transition(&self, p: &Point, chart: u8) -> Option<(Point, Mat2)> {
        (chart == p.chart).then_some((*p, Mat2::identity()))
    }

    /// Chart to switch to during integration, if `p` is leaving a comfortable region.
    fn rechart(&self, _p: &Point) -> Option<u8> {
        None
    }

    /// Coordinates of `to` minus those of `from`, in the chart of `from`
    /// (shortest periodic representative where applicable).
    fn offset(&self, from: &Point, to: &Point) -> Option<Vec2> {
        let (q, _) = self.transition(to, from.chart)?;
        Some(q.coords - from.coords)
    }

    fn injectivity_radius(&self) -> f64;

    /// Key for spatial hashing; `|key(p) - key(q)| <= index_lipschitz() * dist(p, q)`.
    fn index_key(&self, p: &Point) -> [f64; 4];

    fn index_lipschitz(&self) -> f64 {
        1.0
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Point;

    /// Cells covering the surface whose geodesic diameter is at most `spacing`.
    fn grid_cells(&self, spacing: f64) -> Vec<Cell>;

    /// Upper bound of `sqrt(lambda_max(g))` over the region covered by `grid_cells`.
    fn max_metric_scale(&self) -> f64;

    fn area(&self) -> f64;

    fn exact(&self) -> Option<&dyn ExactGeodesics> {
        None
    }

    /// Accumulated rescaling factor (1 for unscaled models).
    fn scale_factor(&self) -> f64 {
        1.0
    }
}

pub const METRIC_FD_STEP: f64 = 1e-5;
pub const CHRISTOFFEL_FD_STEP: f64 = 1e-4;

fn shifted(p: &Point, axis: usize, h: f64) -> Point {
    let mut q = *p;
    q.coords[axis] += h;
    q
}

/// Christoffel symbols from central differences of the metric.
pub fn christoffel_fd<S: Surface + ?Sized>(s: &S, p: &Point) -> Christoffel {
    let h = METRIC_FD_STEP;
    let dg: [Mat2; 2] = [0, 1].map(|a| (s.metric(&shifted(p, a, h)) - s.metric(&shifted(p, a, -h))) / (2.0 * h));
    let ginv = s.metric(p).try_inverse().unwrap_or_else(Mat2::zeros);
    let mut out = [Mat2::zeros(); 2];
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for l in 0..2 {
                    acc += ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                }
                out[k][(i, j)] = 0.5 * acc;
            }
        }
    }
    Christoffel(out)
}

/// Riemann tensor `R[k][l][i][j] = R^k_{lij}` with `R(d_i, d_j) d_l = R^k_{lij} d_k`,
/// from central differences of the Christoffel symbols.
pub type Riemann = [[[[f64; 2]; 2]; 2]; 2];

pub fn riemann_fd<S: Surface + ?Sized>(s: &S, p: &Point) -> Riemann {
    let h = CHRISTOFFEL_FD_STEP;
    let gam = s.christoffel(p);
    let dgam: [Christoffel; 2] = [0, 1].map(|a| {
        let plus = s.christoffel(&shifted(p, a, h));
        let minus = s.christoffel(&shifted(p, a, -h));
        Christoffel([0, 1].map(|k| (plus.0[k] - minus.0[k]) / (2.0 * h)))
    });
    let mut r = [[[[0.0; 2]; 2]; 2]; 2];
    for k in 0..2 {
        for l in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut v = dgam[i].0[k][(j, l)] - dgam[j].0[k][(i, l)];
                    for m in 0..2 {
                        v += gam.0[m][(j, l)] * gam.0[k][(i, m)] - gam.0[m][(i, l)] * gam.0[k][(j, m)];
                    }
                    r[k][l][i][j] = v;
                }
            }
        }
    }
    r
}

/// `R(x, y) z` from a Riemann tensor.
pub fn curvature_operator(r: &Riemann, x: &Vec2, y: &Vec2, z: &Vec2) -> Vec2 {
    let mut out = Vec2::zeros();
    for k in 0..2 {
        let mut acc = 0.0;
        for l in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    acc += r[k][l][i][j] * x[i] * y[j] * z[l];
                }
            }
        }
        out[k] = acc;
    }
    out
}

fn sectional_from_riemann(r: &Riemann, g: &Mat2, u: &Vec2, v: &Vec2) -> f64 {
    let rv = curvature_operator(r, u, v, v);
    let num = u.dot(&(g * rv));
    let den = u.dot(&(g * u)) * v.dot(&(g * v)) - u.dot(&(g * v)).powi(2);
    num / den
}

/// Sectional curvature of the plane spanned by `u`, `v` at `p`, with the
/// curvature tensor taken from finite differences of the Christoffel symbols.
pub fn sectional_curvature(s: &dyn Surface, p: &Point, u: &Vec2, v: &Vec2) -> Result<f64> {
    let g = s.metric(p);
    check_metric(&g, p)?;
    let den = u.dot(&(g * u)) * v.dot(&(g * v)) - u.dot(&(g * v)).powi(2);
    let scale = u.dot(&(g * u)) * v.dot(&(g * v));
    if !(den > 1e-12 * scale) || scale == 0.0 {
        return Err(GeomError::DegeneratePlane);
    }
    Ok(sectional_from_riemann(&riemann_fd(s, p), &g, u, v))
}

/// Christoffel symbols after validating the metric at `p`.
pub fn christoffel(s: &dyn Surface, p: &Point) -> Result<Christoffel> {
    check_metric(&s.metric(p), p)?;
    Ok(s.christoffel(p))
}

pub(crate) fn check_metric(g: &Mat2, p: &Point) -> Result<()> {
    let sym = (g[(0, 1)] - g[(1, 0)]).abs() <= 1e-12 * (g[(0, 0)].abs() + g[(1, 1)].abs());
    if sym && g[(0, 0)] > 0.0 && g.determinant() > 0.0 && g.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GeomError::MetricNotPositive { at: p.to_string() })
    }
}

/// Upper-triangular `R` with `g = R^T R`. Columns of `R^{-1}` form the
/// Gram-Schmidt orthonormalisation of the coordinate frame.
pub fn cholesky_upper(g: &Mat2) -> Mat2 {
    let r11 = g[(0, 0)].sqrt();
    let r12 = g[(0, 1)] / r11;
    let r22 = (g[(1, 1)] - r12 * r12).sqrt();
    Mat2::new(r11, r12, 0.0, r22)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub model: String,
    pub delta: f64,
    pub samples: usize,
    /// Largest |K| over the sampled points and planes.
    pub max_abs_curvature: f64,
    /// Lower estimate of the injectivity radius (from model metadata).
    pub injectivity_radius: f64,
    pub curvature_ok: bool,
    pub injectivity_ok: bool,
    pub pass: bool,
}

const RELATIVE_SLACK: f64 = 1e-12;

/// Checks `max |K| <= delta` on seeded samples and `inj >= 1/delta`.
pub fn admissibility(s: &dyn Surface, delta: f64, sample_count: usize, seed: u64) -> Result<AdmissibilityReport> {
    if !(delta > 0.0 && delta <= 0.25) {
        return Err(GeomError::InvalidParameter(format!(
            "delta = {delta} outside (0, 0.25]"
        )));
    }
    let mut worst = 0.0f64;
    for k in 0..sample_count {
        let mut r = rng::stream(seed, "admissibility", k as u64);
        let p = s.sample(&mut r);
        let a = r.random_range(0.0..std::f64::consts::PI);
        let b = a + r.random_range(0.3..(std::f64::consts::PI - 0.3));
        let u = Vec2::new(a.cos(), a.sin());
        let v = Vec2::new(b.cos(), b.sin());
        let kval = sectional_curvature(s, &p, &u, &v)?;
        worst = worst.max(kval.abs());
    }
    let inj = s.injectivity_radius();
    let curvature_ok = worst <= delta * (1.0 + RELATIVE_SLACK);
    let injectivity_ok = inj >= (1.0 / delta) * (1.0 - RELATIVE_SLACK);
    Ok(AdmissibilityReport {
        model: s.name().to_string(),
        delta,
        samples: sample_count,
        max_abs_curvature: worst,
        injectivity_radius: inj,
        curvature_ok,
        injectivity_ok,
        pass: curvature_ok && injectivity_ok,
    })
}

pub(crate) fn wrap_periodic(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

pub(crate) fn wrap_centered(x: f64, period: f64) -> f64 {
    let r = wrap_periodic(x + 0.5 * period, period) - 0.5 * period;
    if r >= 0.5 * period {
        r - period
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn flat_torus_has_zero_christoffels_and_curvature() {
        let t = FlatTorus::new(8.0).unwrap();
        let mut r = rng::seeded(1);
        for _ in 0..100 {
            let p = t.sample(&mut r);
            let c = christoffel_fd(&t, &p);
            assert!(c.0.iter().all(|m| m.amax() == 0.0));
            let k = sectional_curvature(&t, &p, &Vec2::new(1.0, 0.2), &Vec2::new(-0.3, 1.0)).unwrap();
            assert!(k.abs() <= 1e-8);
        }
    }

    #[test]
    fn sphere_christoffels_match_closed_form() {
        let s = Sphere::new(3.0).unwrap();
        let mut r = rng::seeded(2);
        for _ in 0..50 {
            let p = s.sample(&mut r);
            let fd = christoffel_fd(&s, &p);
            let u = p.coords;
            let den = 1.0 + u.norm_squared();
            // f = ln(2R / (1 + |u|^2)), grad f = -2u / (1 + |u|^2)
            let exact = Christoffel::conformal(&(-2.0 * u / den));
            for k in 0..2 {
                assert!((fd.0[k] - exact.0[k]).amax() < 1e-6, "{fd:?} vs {exact:?}");
            }
        }
    }

    #[test]
    fn sphere_sectional_curvature() {
        for radius in [1.0, 4.0, 10.0] {
            let s = Sphere::new(radius).unwrap();
            let mut r = rng::seeded(3);
            for _ in 0..30 {
                let p = s.sample(&mut r);
                let k = sectional_curvature(&s, &p, &Vec2::new(1.0, 0.5), &Vec2::new(0.1, 1.0)).unwrap();
                let want = 1.0 / (radius * radius);
                assert!(((k - want) / want).abs() < 1e-4, "{k} vs {want}");
            }
        }
    }

    #[test]
    fn degenerate_plane_is_rejected() {
        let s = Sphere::new(2.0).unwrap();
        let p = Point::new(0, 0.1, 0.2);
        let u = Vec2::new(1.0, 2.0);
        assert_eq!(
            sectional_curvature(&s, &p, &u, &(u * 3.0)),
            Err(GeomError::DegeneratePlane)
        );
    }

    #[test]
    fn rescaling_laws() {
        let s: Arc<dyn Surface> = Arc::new(Sphere::new(1.0).unwrap());
        let same = rescale(s.clone(), 1.0).unwrap();
        let p = Point::new(0, 0.3, -0.2);
        assert_eq!(same.metric(&p), s.metric(&p));
        let big = rescale(s.clone(), 4.0).unwrap();
        let k = sectional_curvature(big.as_ref(), &p, &Vec2::new(1.0, 0.0), &Vec2::new(0.0, 1.0)).unwrap();
        assert!((k - 1.0 / 16.0).abs() < 1e-4 / 16.0);
        let back = rescale(big, 0.25).unwrap();
        assert!((back.metric(&p) - s.metric(&p)).amax() <= 1e-14);

        let t: Arc<dyn Surface> = Arc::new(FlatTorus::new(1.0).unwrap());
        assert_eq!(rescale(t, 20.0).unwrap().injectivity_radius(), 10.0);
        assert!(rescale(s, 0.0).is_err());
    }

    #[test]
    fn admissibility_examples() {
        let t = FlatTorus::new(8.0).unwrap();
        let rep = admissibility(&t, 0.25, 50, 1).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_eq!(rep.injectivity_radius, 4.0);

        let s = Sphere::new(4.0).unwrap();
        let rep = admissibility(&s, 0.09, 50, 1).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!((rep.max_abs_curvature - 0.0625).abs() < 1e-5);
        assert!((rep.injectivity_radius - 4.0 * std::f64::consts::PI).abs() < 1e-12);

        let s = Sphere::new(1.0).unwrap();
        let rep = admissibility(&s, 0.01, 20, 1).unwrap();
        assert!(!rep.pass);
        assert!(!rep.injectivity_ok);
        assert!(!rep.curvature_ok);
    }

    #[test]
    fn periodic_wrapping_is_canonical() {
        assert_eq!(wrap_periodic(-1e-18, 8.0), 0.0);
        assert_eq!(wrap_periodic(8.0, 8.0), 0.0);
        assert!((wrap_periodic(-0.5, 8.0) - 7.5).abs() < 1e-15);
        assert!((wrap_centered(7.0, 8.0) + 1.0).abs() < 1e-15);
        assert!((wrap_centered(3.9, 8.0) - 3.9).abs() < 1e-15);
        assert!(wrap_centered(4.0, 8.0) == -4.0);
    }

    #[test]
    fn cholesky_frame_is_orthonormal() {
        let g = Mat2::new(2.0, 0.3, 0.3, 1.5);
        let r = cholesky_upper(&g);
        assert!((r.transpose() * r - g).amax() < 1e-15);
        let f = r.try_inverse().unwrap();
        assert!((f.transpose() * g * f - Mat2::identity()).amax() < 1e-15);
    }
}
