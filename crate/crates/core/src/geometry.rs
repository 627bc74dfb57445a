//! Exponential and logarithm maps, distance, transport and Jacobi-field
//! differentials on a [`Surface`], with closed forms used when available.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::flow;
use crate::manifold::{cholesky_upper, Mat2, Point, Surface, Vec2};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Always integrate, even when the model has closed forms.
    Numeric,
    #[default]
    PreferExact,
}

const NEWTON_ITERATIONS: usize = 50;
const NEWTON_FD_STEP: f64 = 1e-6;
const STAGNATION_ACCEPT: f64 = 1e-9;

/// Jacobi fields along `t -> exp(p, t v)` at `t = 1`, columns indexed by the
/// coordinate basis at `p`: `a`, `b` are `J(1)`, `DJ(1)` for `J(0) = 0`,
/// `DJ(0) = e`; `c`, `d` the same for `J(0) = e`, `DJ(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobiBasis {
    pub end: Point,
    pub end_velocity: Vec2,
    pub a: Mat2,
    pub b: Mat2,
    pub c: Mat2,
    pub d: Mat2,
}

impl JacobiBasis {
    fn linear(end: Point, end_velocity: Vec2) -> Self {
        Self {
            end,
            end_velocity,
            a: Mat2::identity(),
            b: Mat2::identity(),
            c: Mat2::identity(),
            d: Mat2::zeros(),
        }
    }

    /// `B A^{-1}`: maps `J(1)` to `DJ(1)` for fields vanishing at `t = 0`.
    pub fn end_shape(&self) -> Result<Mat2> {
        Ok(self.b * self.a.try_inverse().ok_or(GeomError::ConjugatePoints)?)
    }

    /// `D - B A^{-1} C`: maps `J(0)` to `DJ(1)` for fields vanishing at `t = 1`.
    pub fn mixed_shape(&self) -> Result<Mat2> {
        Ok(self.d - self.end_shape()? * self.c)
    }
}

/// Geometry kernel bound to one surface.
#[derive(Clone, Debug)]
pub struct Geometry {
    surface: Arc<dyn Surface>,
    backend: Backend,
    working_radius: f64,
}

impl Geometry {
    pub fn new(surface: Arc<dyn Surface>, backend: Backend) -> Self {
        let inj = surface.injectivity_radius();
        let working_radius = match (backend, surface.exact()) {
            // closed-form logarithms are minimal at any distance
            (Backend::PreferExact, Some(_)) => f64::INFINITY,
            _ => 0.75 * inj,
        };
        Self {
            surface,
            backend,
            working_radius,
        }
    }

    pub fn with_working_radius(mut self, radius: f64) -> Self {
        self.working_radius = radius;
        self
    }

    pub fn surface(&self) -> &dyn Surface {
        self.surface.as_ref()
    }

    pub fn surface_arc(&self) -> &Arc<dyn Surface> {
        &self.surface
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn working_radius(&self) -> f64 {
        self.working_radius
    }

    fn exact(&self) -> Option<&dyn crate::manifold::ExactGeodesics> {
        match self.backend {
            Backend::Numeric => None,
            Backend::PreferExact => self.surface.exact(),
        }
    }

    /// True when geodesics are straight lines in coordinates.
    fn is_flat_exact(&self) -> bool {
        self.exact().is_some_and(|e| e.is_flat())
    }

    pub fn metric(&self, p: &Point) -> Mat2 {
        self.surface.metric(p)
    }

    pub fn inner(&self, p: &Point, a: &Vec2, b: &Vec2) -> f64 {
        a.dot(&(self.surface.metric(p) * b))
    }

    pub fn norm(&self, p: &Point, v: &Vec2) -> f64 {
        flow::speed(self.surface(), p, v)
    }

    /// Upper-triangular `R` with `g = R^T R`; `R v` are the components of
    /// `v` in the orthonormal frame obtained from the coordinate frame.
    pub fn frame(&self, p: &Point) -> Mat2 {
        cholesky_upper(&self.surface.metric(p))
    }

    /// Orthonormal-frame components of `v`.
    pub fn to_frame(&self, p: &Point, v: &Vec2) -> Vec2 {
        self.frame(p) * v
    }

    /// Coordinate vector with orthonormal-frame components `c`.
    pub fn from_frame(&self, p: &Point, c: &Vec2) -> Vec2 {
        let r = self.frame(p);
        // R is upper triangular
        let y = c.y / r[(1, 1)];
        Vec2::new((c.x - r[(0, 1)] * y) / r[(0, 0)], y)
    }

    /// `R M R'^{-1}`: a coordinate linear map `T_p -> T_q` in orthonormal frames.
    pub fn map_to_frames(&self, p: &Point, q: &Point, m: &Mat2) -> Mat2 {
        let rp_inv = self.frame(p).try_inverse().unwrap_or_else(Mat2::zeros);
        self.frame(q) * m * rp_inv
    }

    pub fn canonical(&self, p: &Point) -> Point {
        self.surface.canonical(*p)
    }

    /// Re-expresses a tangent vector at `from` at the chart of `to`, where
    /// both denote the same point.
    pub fn rebase(&self, from: &Point, to: &Point, v: &Vec2) -> Result<Vec2> {
        if from.chart == to.chart {
            return Ok(*v);
        }
        let (_, jac) = self
            .surface
            .transition(from, to.chart)
            .ok_or_else(|| GeomError::ChartTransition { at: from.to_string() })?;
        Ok(jac * v)
    }

    pub fn exp(&self, p: &Point, v: &Vec2) -> Result<Point> {
        if let Some(e) = self.exact() {
            return Ok(e.exp(p, v));
        }
        flow::exp(self.surface(), p, v)
    }

    pub fn log(&self, p: &Point, q: &Point) -> Result<Vec2> {
        let v = match self.exact() {
            Some(e) => e.log(p, q),
            None => self.log_numeric(p, q)?,
        };
        let d = self.norm(p, &v);
        if d > self.working_radius {
            return Err(GeomError::BeyondWorkingRadius {
                distance: d,
                radius: self.working_radius,
            });
        }
        Ok(v)
    }

    pub fn dist(&self, p: &Point, q: &Point) -> Result<f64> {
        Ok(self.norm(p, &self.log(p, q)?))
    }

    /// Distance without the working-radius restriction, available for
    /// models with closed-form geodesics.
    pub fn global_dist(&self, p: &Point, q: &Point) -> Option<f64> {
        self.surface.exact().map(|e| self.norm(p, &e.log(p, q)))
    }

    /// Lower bound on the distance from the spatial index key.
    pub fn key_lower_bound(&self, p: &Point, q: &Point) -> f64 {
        let a = self.surface.index_key(p);
        let b = self.surface.index_key(q);
        let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        d / self.surface.index_lipschitz()
    }

    fn shooting_chart(&self, p: &Point, q: &Point) -> Result<(Point, Point, Mat2)> {
        let s = self.surface();
        let mut best: Option<(f64, Point, Point, Mat2)> = None;
        for c in 0..s.chart_count() {
            let (Some((pc, jac)), Some((qc, _))) = (s.transition(p, c), s.transition(q, c)) else {
                continue;
            };
            let size = pc.coords.norm().max(qc.coords.norm());
            if best.as_ref().is_none_or(|b| size < b.0) {
                best = Some((size, pc, qc, jac));
            }
        }
        best.map(|(_, pc, qc, jac)| (pc, qc, jac))
            .ok_or_else(|| GeomError::ChartTransition { at: p.to_string() })
    }

    fn shoot_residual(&self, p: &Point, target: &Point, v: &Vec2) -> Result<Vec2> {
        let s = self.surface();
        let run = flow::exp(s, p, v)?;
        s.offset(target, &run)
            .ok_or_else(|| GeomError::ChartTransition { at: run.to_string() })
    }

    /// Logarithm by single shooting with a finite-difference Newton iteration.
    pub fn log_numeric(&self, p: &Point, q: &Point) -> Result<Vec2> {
        let s = self.surface();
        let (pc, qc, jac) = self.shooting_chart(p, q)?;
        let mut v = s
            .offset(&pc, &qc)
            .ok_or_else(|| GeomError::ChartTransition { at: q.to_string() })?;
        if v == Vec2::zeros() {
            return Ok(v);
        }
        let guess_len = self.norm(&pc, &v);
        if guess_len > 2.0 * self.working_radius {
            return Err(GeomError::BeyondWorkingRadius {
                distance: guess_len,
                radius: self.working_radius,
            });
        }
        let scale = pc.coords.norm().max(qc.coords.norm()).max(1.0);
        let tol = 1e-13 * scale;
        let mut r = self.shoot_residual(&pc, &qc, &v)?;
        let mut rn = r.norm();
        let mut iterations = 0;
        while rn > tol {
            if iterations == NEWTON_ITERATIONS {
                return Err(GeomError::NoConvergence {
                    iterations,
                    residual: rn,
                });
            }
            iterations += 1;
            let h = NEWTON_FD_STEP * v.norm().max(1.0);
            let mut jm = Mat2::zeros();
            for k in 0..2 {
                let mut vk = v;
                vk[k] += h;
                let col = (self.shoot_residual(&pc, &qc, &vk)? - r) / h;
                jm.set_column(k, &col);
            }
            let Some(inv) = jm.try_inverse() else {
                return Err(GeomError::ConjugatePoints);
            };
            let step = inv * r;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let cand = v - step * lambda;
                let rc = self.shoot_residual(&pc, &qc, &cand)?;
                if rc.norm() < rn {
                    v = cand;
                    r = rc;
                    rn = rc.norm();
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                if rn < STAGNATION_ACCEPT {
                    break;
                }
                return Err(GeomError::NoConvergence {
                    iterations,
                    residual: rn,
                });
            }
        }
        if pc.chart == p.chart {
            Ok(v)
        } else {
            let back = jac
                .try_inverse()
                .ok_or(GeomError::ChartTransition { at: p.to_string() })?;
            Ok(back * v)
        }
    }

    /// Parallel transport of `w` from `p` to `q` along the minimal geodesic.
    pub fn transport(&self, p: &Point, q: &Point, w: &Vec2) -> Result<Vec2> {
        let v = self.log(p, q)?;
        self.transport_along(p, &v, q, w)
    }

    /// Transport along `t -> exp(p, t v)`, expressed in the chart of `q`.
    pub fn transport_along(&self, p: &Point, v: &Vec2, q: &Point, w: &Vec2) -> Result<Vec2> {
        if self.is_flat_exact() {
            return Ok(*w);
        }
        let (end, _, [tw]) = flow::transport(self.surface(), p, v, [*w])?;
        self.rebase(&end, q, &tw)
    }

    /// `d exp_p` at `a` applied to `xi`; returns `exp_p(a)` and the image vector there.
    pub fn dexp(&self, p: &Point, a: &Vec2, xi: &Vec2) -> Result<(Point, Vec2)> {
        if self.is_flat_exact() {
            return Ok((self.exp(p, a)?, *xi));
        }
        let (end, _, f) = flow::jacobi_end(self.surface(), p, a, [Vec2::zeros(), *xi])?;
        Ok((end, f[0]))
    }

    /// Matrix of `d exp_p` at `a` (coordinates at `p` to coordinates at `exp_p(a)`).
    pub fn dexp_matrix(&self, p: &Point, a: &Vec2) -> Result<(Point, Mat2)> {
        let b = self.jacobi_basis(p, a)?;
        Ok((b.end, b.a))
    }

    pub fn jacobi_basis(&self, p: &Point, v: &Vec2) -> Result<JacobiBasis> {
        if self.is_flat_exact() {
            return Ok(JacobiBasis::linear(self.exp(p, v)?, *v));
        }
        let e1 = Vec2::new(1.0, 0.0);
        let e2 = Vec2::new(0.0, 1.0);
        let z = Vec2::zeros();
        let (end, vel, f) = flow::jacobi_end(self.surface(), p, v, [z, e1, z, e2, e1, z, e2, z])?;
        Ok(JacobiBasis {
            end,
            end_velocity: vel,
            a: Mat2::from_columns(&[f[0], f[2]]),
            b: Mat2::from_columns(&[f[1], f[3]]),
            c: Mat2::from_columns(&[f[4], f[6]]),
            d: Mat2::from_columns(&[f[5], f[7]]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{ConformalTorus, FlatTorus, Sphere};
    use crate::rng;
    use rand::Rng;

    fn sphere(backend: Backend) -> Geometry {
        Geometry::new(Arc::new(Sphere::new(4.0).unwrap()), backend)
    }

    #[test]
    fn numeric_log_matches_great_circle() {
        let num = sphere(Backend::Numeric);
        let ex = sphere(Backend::PreferExact);
        let mut r = rng::seeded(21);
        for _ in 0..20 {
            let p = num.surface().sample(&mut r);
            let dir = r.random_range(0.0..std::f64::consts::TAU);
            let u = Vec2::new(dir.cos(), dir.sin());
            let u = u / num.norm(&p, &u) * 1.3;
            let q = ex.exp(&p, &u).unwrap();
            let v = num.log(&p, &q).unwrap();
            assert!((v - u).norm() < 1e-7 * u.norm().max(1.0), "{v} vs {u}");
            assert!((num.dist(&p, &q).unwrap() - 1.3).abs() < 1e-7);
        }
    }

    #[test]
    fn log_trivial_cases() {
        let t = Geometry::new(Arc::new(FlatTorus::new(8.0).unwrap()), Backend::Numeric);
        let p = Point::new(0, 1.0, 2.0);
        assert_eq!(t.log(&p, &p).unwrap(), Vec2::zeros());
        let q = Point::new(0, 7.5, 2.0);
        let v = t.log(&p, &q).unwrap();
        assert!((v - Vec2::new(-1.5, 0.0)).norm() < 1e-12);
        let far = Point::new(0, 5.0, 6.0);
        let g = t.clone().with_working_radius(4.0);
        assert!(matches!(g.log(&p, &far), Err(GeomError::BeyondWorkingRadius { .. })));
        let ex = Geometry::new(Arc::new(FlatTorus::new(8.0).unwrap()), Backend::PreferExact);
        assert_eq!(
            ex.global_dist(&Point::new(0, 0.0, 0.0), &Point::new(0, 4.0, 0.0)),
            Some(4.0)
        );
    }

    #[test]
    fn numeric_roundtrips_on_perturbed_torus() {
        let g = Geometry::new(
            Arc::new(ConformalTorus::seeded(8.0, 0.05, 2, 3).unwrap()),
            Backend::PreferExact,
        );
        let mut r = rng::seeded(22);
        for _ in 0..20 {
            let p = g.surface().sample(&mut r);
            let v = Vec2::new(r.random_range(-1.4..1.4), r.random_range(-1.4..1.4));
            let q = g.exp(&p, &v).unwrap();
            let back = g.log(&p, &q).unwrap();
            assert!((back - v).norm() < 1e-8);
            let again = g.exp(&p, &back).unwrap();
            let off = g.surface().offset(&q, &again).unwrap();
            assert!(off.norm() < 1e-9);
        }
    }

    #[test]
    fn dexp_matches_central_differences() {
        for g in [sphere(Backend::PreferExact), sphere(Backend::Numeric)] {
            let p = Point::new(0, 0.2, -0.4);
            let a = Vec2::new(0.3, 0.25);
            let xi = Vec2::new(-0.2, 0.7);
            let (q, j) = g.dexp(&p, &a, &xi).unwrap();
            let h = 1e-4;
            let qp = g.exp(&p, &(a + xi * h)).unwrap();
            let qm = g.exp(&p, &(a - xi * h)).unwrap();
            let fd = (g.surface().offset(&q, &qp).unwrap() - g.surface().offset(&q, &qm).unwrap()) / (2.0 * h);
            assert!((fd - j).norm() < 1e-5 * j.norm(), "{fd} vs {j}");
        }
    }

    #[test]
    fn jacobi_basis_shapes_at_zero_length() {
        let g = sphere(Backend::Numeric);
        let p = Point::new(0, 0.1, 0.1);
        let b = g.jacobi_basis(&p, &Vec2::zeros()).unwrap();
        assert!((b.end_shape().unwrap() - Mat2::identity()).amax() < 1e-12);
        assert!((b.mixed_shape().unwrap() + Mat2::identity()).amax() < 1e-12);
    }
}
