use std::f64::consts::PI;

use nalgebra::{Matrix3x2, Vector3};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Cell, Christoffel, ExactGeodesics, Mat2, Point, Surface, Vec2};
use crate::error::{GeomError, Result};

// Chart 0 is stereographic from the south pole, chart 1 from the north pole;
// the canonical chart of a point is the one with |u| <= 1.

fn unit_embedding(p: &Point) -> Vector3<f64> {
    let u = p.coords;
    let s = 1.0 + u.norm_squared();
    let z = if p.chart == 0 { 2.0 - s } else { s - 2.0 };
    Vector3::new(2.0 * u.x, 2.0 * u.y, z) / s
}

fn unit_embedding_jacobian(p: &Point) -> Matrix3x2<f64> {
    let u = p.coords;
    let s = 1.0 + u.norm_squared();
    let s2 = s * s;
    let sign = if p.chart == 0 { -1.0 } else { 1.0 };
    Matrix3x2::new(
        2.0 / s - 4.0 * u.x * u.x / s2,
        -4.0 * u.x * u.y / s2,
        -4.0 * u.x * u.y / s2,
        2.0 / s - 4.0 * u.y * u.y / s2,
        sign * 4.0 * u.x / s2,
        sign * 4.0 * u.y / s2,
    )
}

fn point_from_unit(n: &Vector3<f64>) -> Point {
    if n.z >= 0.0 {
        Point::new(0, n.x / (1.0 + n.z), n.y / (1.0 + n.z))
    } else {
        Point::new(1, n.x / (1.0 - n.z), n.y / (1.0 - n.z))
    }
}

fn invert(p: &Point, chart: u8) -> Option<(Point, Mat2)> {
    if chart == p.chart {
        return Some((*p, Mat2::identity()));
    }
    if chart > 1 {
        return None;
    }
    let u = p.coords;
    let r2 = u.norm_squared();
    if r2 < 1e-200 {
        return None;
    }
    let jac = (Mat2::identity() * r2 - 2.0 * u * u.transpose()) / (r2 * r2);
    Some((Point { chart, coords: u / r2 }, jac))
}

fn canonical_cap(p: Point) -> Point {
    if p.coords.norm_squared() > 1.0 {
        invert(&p, 1 - p.chart.min(1)).map(|(q, _)| q).unwrap_or(p)
    } else {
        p
    }
}

fn rechart_cap(p: &Point) -> Option<u8> {
    (p.coords.norm_squared() > 2.25).then_some(1 - p.chart.min(1))
}

fn sample_unit(rng: &mut dyn RngCore) -> Vector3<f64> {
    loop {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn cap_cells(spacing: f64, scale: f64) -> Vec<Cell> {
    let hw = spacing / (2.0 * std::f64::consts::SQRT_2 * scale);
    let reach = 1.0 + std::f64::consts::SQRT_2 * hw;
    let n = (reach / (2.0 * hw)).ceil() as i64;
    let mut out = Vec::new();
    for chart in 0..2u8 {
        for i in -n..n {
            for j in -n..n {
                let c = Vec2::new((i as f64 + 0.5) * 2.0 * hw, (j as f64 + 0.5) * 2.0 * hw);
                if c.norm() <= reach {
                    out.push(Cell {
                        center: Point { chart, coords: c },
                        half_width: hw,
                    });
                }
            }
        }
    }
    out
}

/// Round sphere of radius `R` on a two-cap stereographic atlas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub radius: f64,
}

impl Sphere {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeomError::InvalidParameter(format!("sphere radius {radius}")));
        }
        Ok(Self { radius })
    }

    pub fn embed(&self, p: &Point) -> Vector3<f64> {
        unit_embedding(p) * self.radius
    }
}

impl Surface for Sphere {
    fn name(&self) -> &'static str {
        "sphere"
    }
    fn metric(&self, p: &Point) -> Mat2 {
        let e = 2.0 * self.radius / (1.0 + p.coords.norm_squared());
        Mat2::identity() * (e * e)
    }
    fn christoffel(&self, p: &Point) -> Christoffel {
        let u = p.coords;
        Christoffel::conformal(&(-2.0 * u / (1.0 + u.norm_squared())))
    }
    fn gaussian_curvature(&self, _p: &Point) -> f64 {
        1.0 / (self.radius * self.radius)
    }
    fn canonical(&self, p: Point) -> Point {
        canonical_cap(p)
    }
    fn chart_count(&self) -> u8 {
        2
    }
    fn transition(&self, p: &Point, chart: u8) -> Option<(Point, Mat2)> {
        invert(p, chart)
    }
    fn rechart(&self, p: &Point) -> Option<u8> {
        rechart_cap(p)
    }
    fn injectivity_radius(&self) -> f64 {
        PI * self.radius
    }
    fn index_key(&self, p: &Point) -> [f64; 4] {
        let e = self.embed(p);
        [e.x, e.y, e.z, 0.0]
    }
    fn sample(&self, rng: &mut dyn RngCore) -> Point {
        point_from_unit(&sample_unit(rng))
    }
    fn grid_cells(&self, spacing: f64) -> Vec<Cell> {
        cap_cells(spacing, self.max_metric_scale())
    }
    fn max_metric_scale(&self) -> f64 {
        2.0 * self.radius
    }
    fn area(&self) -> f64 {
        4.0 * PI * self.radius * self.radius
    }
    fn exact(&self) -> Option<&dyn ExactGeodesics> {
        Some(self)
    }
}

impl ExactGeodesics for Sphere {
    fn exp(&self, p: &Point, v: &Vec2) -> Point {
        let n = unit_embedding(p);
        let t = unit_embedding_jacobian(p) * v;
        let theta = t.norm();
        if theta == 0.0 {
            return canonical_cap(*p);
        }
        let q = n * theta.cos() + t * (theta.sin() / theta);
        point_from_unit(&(q / q.norm()))
    }

    fn log(&self, p: &Point, q: &Point) -> Vec2 {
        let a = unit_embedding(p);
        let b = unit_embedding(q);
        let cross = a.cross(&b).norm();
        let theta = cross.atan2(a.dot(&b));
        let mut w = b - a * a.dot(&b);
        if w.norm() < 1e-300 {
            return Vec2::zeros();
        }
        w /= w.norm();
        let tangent = w * theta;
        let j = unit_embedding_jacobian(p);
        let jt = j.transpose();
        let g = jt * j;
        g.try_inverse()
            .map(|gi| gi * (jt * tangent))
            .unwrap_or_else(Vec2::zeros)
    }
}

/// Triaxial ellipsoid `diag(a, b, c) S^2` on the two-cap atlas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub axes: [f64; 3],
}

impl Ellipsoid {
    pub fn new(axes: [f64; 3]) -> Result<Self> {
        if !axes.iter().all(|a| *a > 0.0 && a.is_finite()) {
            return Err(GeomError::InvalidParameter(format!("ellipsoid axes {axes:?}")));
        }
        Ok(Self { axes })
    }

    pub fn embed(&self, p: &Point) -> Vector3<f64> {
        unit_embedding(p).component_mul(&Vector3::from(self.axes))
    }

    /// `max |K|`, attained at the vertex on the longest axis.
    pub fn curvature_bound(&self) -> f64 {
        let [a, b, c] = self.axes;
        [a / (b * c), b / (a * c), c / (a * b)]
            .into_iter()
            .fold(0.0, f64::max)
            .powi(2)
    }
}

impl Surface for Ellipsoid {
    fn name(&self) -> &'static str {
        "ellipsoid"
    }
    fn metric(&self, p: &Point) -> Mat2 {
        let mut j = unit_embedding_jacobian(p);
        for r in 0..3 {
            j.row_mut(r).scale_mut(self.axes[r]);
        }
        let g = j.transpose() * j;
        let off = 0.5 * (g[(0, 1)] + g[(1, 0)]);
        Mat2::new(g[(0, 0)], off, off, g[(1, 1)])
    }
    fn gaussian_curvature(&self, p: &Point) -> f64 {
        let e = self.embed(p);
        let [a, b, c] = self.axes;
        let s = e.x * e.x / a.powi(4) + e.y * e.y / b.powi(4) + e.z * e.z / c.powi(4);
        1.0 / ((a * b * c).powi(2) * s * s)
    }
    fn canonical(&self, p: Point) -> Point {
        canonical_cap(p)
    }
    fn chart_count(&self) -> u8 {
        2
    }
    fn transition(&self, p: &Point, chart: u8) -> Option<(Point, Mat2)> {
        invert(p, chart)
    }
    fn rechart(&self, p: &Point) -> Option<u8> {
        rechart_cap(p)
    }
    fn injectivity_radius(&self) -> f64 {
        let shortest = self.axes.iter().copied().fold(f64::INFINITY, f64::min);
        (PI / self.curvature_bound().sqrt()).min(PI * shortest)
    }
    fn index_key(&self, p: &Point) -> [f64; 4] {
        let e = self.embed(p);
        [e.x, e.y, e.z, 0.0]
    }
    fn sample(&self, rng: &mut dyn RngCore) -> Point {
        point_from_unit(&sample_unit(rng))
    }
    fn grid_cells(&self, spacing: f64) -> Vec<Cell> {
        cap_cells(spacing, self.max_metric_scale())
    }
    fn max_metric_scale(&self) -> f64 {
        2.0 * self.axes.iter().copied().fold(0.0, f64::max)
    }
    fn area(&self) -> f64 {
        let [a, b, c] = self.axes;
        let p = 1.6075;
        4.0 * PI * (((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0).powf(1.0 / p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{christoffel_fd, sectional_curvature};
    use crate::rng;

    #[test]
    fn charts_agree_on_overlap() {
        let s = Sphere::new(2.0).unwrap();
        let p = Point::new(0, 0.7, -0.9);
        let (q, jac) = invert(&p, 1).unwrap();
        assert!((s.embed(&p) - s.embed(&q)).norm() < 1e-14);
        // Jacobian against finite differences
        let h = 1e-6;
        for a in 0..2 {
            let mut pp = p;
            pp.coords[a] += h;
            let mut pm = p;
            pm.coords[a] -= h;
            let d = (invert(&pp, 1).unwrap().0.coords - invert(&pm, 1).unwrap().0.coords) / (2.0 * h);
            assert!((d - jac.column(a)).norm() < 1e-8);
        }
        // metric pulls back correctly
        let g0 = s.metric(&p);
        let g1 = s.metric(&q);
        assert!((jac.transpose() * g1 * jac - g0).amax() < 1e-12);
    }

    #[test]
    fn ellipsoid_reduces_to_sphere() {
        let e = Ellipsoid::new([3.0, 3.0, 3.0]).unwrap();
        let s = Sphere::new(3.0).unwrap();
        let mut r = rng::seeded(8);
        for _ in 0..30 {
            let p = s.sample(&mut r);
            assert!((e.metric(&p) - s.metric(&p)).amax() < 1e-12);
            assert!((e.gaussian_curvature(&p) - 1.0 / 9.0).abs() < 1e-12);
        }
        assert!((e.area() - s.area()).abs() < 1e-9);
    }

    #[test]
    fn ellipsoid_curvature_matches_riemann_tensor() {
        let e = Ellipsoid::new([4.4, 4.0, 3.6]).unwrap();
        let mut r = rng::seeded(9);
        for _ in 0..30 {
            let p = e.sample(&mut r);
            let fd = sectional_curvature(&e, &p, &Vec2::new(1.0, 0.0), &Vec2::new(0.0, 1.0)).unwrap();
            let k = e.gaussian_curvature(&p);
            assert!((fd - k).abs() < 2e-5 * k, "{fd} vs {k} at {p}");
            assert!(k <= e.curvature_bound() * (1.0 + 1e-12));
        }
        let _ = christoffel_fd(&e, &Point::new(0, 0.0, 0.0));
    }

    #[test]
    fn exact_exp_log_roundtrip() {
        let s = Sphere::new(1.5).unwrap();
        let mut r = rng::seeded(10);
        for _ in 0..100 {
            let p = s.sample(&mut r);
            let q = s.sample(&mut r);
            let v = s.log(&p, &q);
            let back = s.exp(&p, &v);
            assert!((s.embed(&back) - s.embed(&q)).norm() < 1e-10);
            let len = v.dot(&(s.metric(&p) * v)).sqrt();
            let chord = (s.embed(&p) - s.embed(&q)).norm();
            let want = 2.0 * 1.5 * (chord / 3.0).asin();
            assert!((len - want).abs() < 1e-10);
        }
    }

    #[test]
    fn canonical_chart_is_the_small_one() {
        let p = canonical_cap(Point::new(0, 3.0, 0.0));
        assert_eq!(p.chart, 1);
        assert!((p.coords.x - 1.0 / 3.0).abs() < 1e-15);
        let cells = cap_cells(0.5, 2.0);
        assert!(cells.iter().any(|c| c.center.chart == 1));
    }
}
