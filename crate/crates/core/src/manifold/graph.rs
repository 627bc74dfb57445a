use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Cell, Mat2, Point, Surface, Vec2};
use crate::error::{GeomError, Result};

/// Graph of `f(x, y) = (a x^2 + b y^2) / 2 + c x y` over the square `[-B, B]^2`.
///
/// Christoffel symbols come from finite differences of the induced metric;
/// the model is used to validate that path against the closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticGraph {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub half_width: f64,
}

impl QuadraticGraph {
    pub fn new(a: f64, b: f64, c: f64, half_width: f64) -> Result<Self> {
        if ![a, b, c].iter().all(|x| x.is_finite()) || !(half_width > 0.0) {
            return Err(GeomError::InvalidParameter("graph surface coefficients".into()));
        }
        Ok(Self { a, b, c, half_width })
    }

    pub fn gradient(&self, p: &Point) -> Vec2 {
        let (x, y) = (p.coords.x, p.coords.y);
        Vec2::new(self.a * x + self.c * y, self.c * x + self.b * y)
    }

    pub fn hessian(&self) -> Mat2 {
        Mat2::new(self.a, self.c, self.c, self.b)
    }
}

impl Surface for QuadraticGraph {
    fn name(&self) -> &'static str {
        "graph_quadratic"
    }
    fn metric(&self, p: &Point) -> Mat2 {
        let d = self.gradient(p);
        Mat2::identity() + d * d.transpose()
    }
    fn gaussian_curvature(&self, p: &Point) -> f64 {
        let w = 1.0 + self.gradient(p).norm_squared();
        self.hessian().determinant() / (w * w)
    }
    fn injectivity_radius(&self) -> f64 {
        let k = self.hessian().determinant().max(0.0);
        let conj = if k > 0.0 {
            std::f64::consts::PI / k.sqrt()
        } else {
            f64::INFINITY
        };
        conj.min(self.half_width)
    }
    fn index_key(&self, p: &Point) -> [f64; 4] {
        let (x, y) = (p.coords.x, p.coords.y);
        let z = 0.5 * (self.a * x * x + self.b * y * y) + self.c * x * y;
        [x, y, z, 0.0]
    }
    fn sample(&self, rng: &mut dyn RngCore) -> Point {
        let b = self.half_width;
        Point::new(0, rng.random_range(-b..b), rng.random_range(-b..b))
    }
    fn grid_cells(&self, spacing: f64) -> Vec<Cell> {
        let side = 2.0 * self.half_width;
        let n = (side * self.max_metric_scale() * std::f64::consts::SQRT_2 / spacing)
            .ceil()
            .max(1.0) as usize;
        let w = side / n as f64;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(Cell {
                    center: Point::new(
                        0,
                        -self.half_width + (i as f64 + 0.5) * w,
                        -self.half_width + (j as f64 + 0.5) * w,
                    ),
                    half_width: 0.5 * w,
                });
            }
        }
        out
    }
    fn max_metric_scale(&self) -> f64 {
        let b = self.half_width;
        let corner = [(-b, -b), (-b, b), (b, -b), (b, b)]
            .iter()
            .map(|&(x, y)| self.gradient(&Point::new(0, x, y)).norm_squared())
            .fold(0.0, f64::max);
        (1.0 + corner).sqrt()
    }
    fn area(&self) -> f64 {
        let n = 64;
        let w = 2.0 * self.half_width / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = Point::new(
                    0,
                    -self.half_width + (i as f64 + 0.5) * w,
                    -self.half_width + (j as f64 + 0.5) * w,
                );
                total += self.metric(&p).determinant().sqrt() * w * w;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::christoffel_fd;
    use crate::rng;

    #[test]
    fn finite_difference_christoffels_match_closed_form() {
        let s = QuadraticGraph::new(0.3, -0.2, 0.15, 2.0).unwrap();
        let h = s.hessian();
        let mut r = rng::seeded(11);
        for _ in 0..50 {
            let p = s.sample(&mut r);
            let d = s.gradient(&p);
            let w2 = 1.0 + d.norm_squared();
            // Gamma^k_ij = f_k f_ij / (1 + |grad f|^2)
            let fd = christoffel_fd(&s, &p);
            for k in 0..2 {
                let want = h * (d[k] / w2);
                assert!((fd.0[k] - want).amax() < 1e-8, "{:?} vs {want:?}", fd.0[k]);
            }
        }
    }

    #[test]
    fn curvature_at_origin() {
        let s = QuadraticGraph::new(0.5, 0.5, 0.0, 1.0).unwrap();
        assert!((s.gaussian_curvature(&Point::new(0, 0.0, 0.0)) - 0.25).abs() < 1e-15);
        // adaptive quadrature of sqrt(1 + (x^2 + y^2) / 4) over [-1, 1]^2
        assert!((s.area() - 4.316148065766).abs() < 1e-3);
    }
}
