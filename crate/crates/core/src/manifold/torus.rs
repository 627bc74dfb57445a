use std::f64::consts::TAU;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{wrap_centered, wrap_periodic, Cell, Christoffel, ExactGeodesics, Mat2, Point, Surface, Vec2};
use crate::error::{GeomError, Result};
use crate::rng;

fn torus_key(side: f64, p: &Point) -> [f64; 4] {
    let r = side / TAU;
    let (ax, ay) = (TAU * p.coords.x / side, TAU * p.coords.y / side);
    [r * ax.cos(), r * ax.sin(), r * ay.cos(), r * ay.sin()]
}

fn torus_cells(side: f64, spacing: f64, scale: f64) -> Vec<Cell> {
    // geodesic diameter of a square cell is at most scale * sqrt(2) * width
    let n = (side * scale * std::f64::consts::SQRT_2 / spacing).ceil().max(1.0) as usize;
    let w = side / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(Cell {
                center: Point::new(0, (i as f64 + 0.5) * w, (j as f64 + 0.5) * w),
                half_width: 0.5 * w,
            });
        }
    }
    out
}

fn torus_canonical(side: f64, p: Point) -> Point {
    Point::new(0, wrap_periodic(p.coords.x, side), wrap_periodic(p.coords.y, side))
}

fn torus_offset(side: f64, from: &Point, to: &Point) -> Vec2 {
    Vec2::new(
        wrap_centered(to.coords.x - from.coords.x, side),
        wrap_centered(to.coords.y - from.coords.y, side),
    )
}

/// The flat square torus `R^2 / (L Z)^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatTorus {
    pub side: f64,
}

impl FlatTorus {
    pub fn new(side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(GeomError::InvalidParameter(format!("torus side {side}")));
        }
        Ok(Self { side })
    }
}

impl Surface for FlatTorus {
    fn name(&self) -> &'static str {
        "flat_torus"
    }
    fn metric(&self, _p: &Point) -> Mat2 {
        Mat2::identity()
    }
    fn christoffel(&self, _p: &Point) -> Christoffel {
        Christoffel::zero()
    }
    fn gaussian_curvature(&self, _p: &Point) -> f64 {
        0.0
    }
    fn canonical(&self, p: Point) -> Point {
        torus_canonical(self.side, p)
    }
    fn offset(&self, from: &Point, to: &Point) -> Option<Vec2> {
        Some(torus_offset(self.side, from, to))
    }
    fn injectivity_radius(&self) -> f64 {
        0.5 * self.side
    }
    fn index_key(&self, p: &Point) -> [f64; 4] {
        torus_key(self.side, p)
    }
    fn sample(&self, rng: &mut dyn RngCore) -> Point {
        Point::new(0, rng.random_range(0.0..self.side), rng.random_range(0.0..self.side))
    }
    fn grid_cells(&self, spacing: f64) -> Vec<Cell> {
        torus_cells(self.side, spacing, 1.0)
    }
    fn max_metric_scale(&self) -> f64 {
        1.0
    }
    fn area(&self) -> f64 {
        self.side * self.side
    }
    fn exact(&self) -> Option<&dyn ExactGeodesics> {
        Some(self)
    }
}

impl ExactGeodesics for FlatTorus {
    fn exp(&self, p: &Point, v: &Vec2) -> Point {
        torus_canonical(
            self.side,
            Point {
                chart: 0,
                coords: p.coords + v,
            },
        )
    }
    fn log(&self, p: &Point, q: &Point) -> Vec2 {
        torus_offset(self.side, p, q)
    }
    fn is_flat(&self) -> bool {
        true
    }
}

/// One Fourier mode `amplitude * cos(2 pi (k . x) / L + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: [i32; 2],
    pub amplitude: f64,
    pub phase: f64,
}

const WAVEVECTORS: [[i32; 2]; 6] = [[1, 0], [0, 1], [1, 1], [1, -1], [2, 1], [1, 2]];

/// Square torus with conformal metric `(1 + eta g)^2 I`, where `g` is a
/// seeded trigonometric polynomial with `|g| <= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalTorus {
    pub side: f64,
    pub eta: f64,
    pub modes: Vec<Mode>,
}

impl ConformalTorus {
    pub fn new(side: f64, eta: f64, modes: Vec<Mode>) -> Result<Self> {
        FlatTorus::new(side)?;
        if !(0.0..0.5).contains(&eta) {
            return Err(GeomError::InvalidParameter(format!(
                "conformal eta {eta} outside [0, 0.5)"
            )));
        }
        let total: f64 = modes.iter().map(|m| m.amplitude.abs()).sum();
        if total > 1.0 + 1e-12 {
            return Err(GeomError::InvalidParameter(format!(
                "mode amplitudes sum to {total} > 1"
            )));
        }
        Ok(Self { side, eta, modes })
    }

    /// `count` distinct modes with random phases and amplitudes summing to one.
    pub fn seeded(side: f64, eta: f64, count: usize, seed: u64) -> Result<Self> {
        let count = count.clamp(1, WAVEVECTORS.len());
        let mut r = rng::stream(seed, "conformal_torus", 0);
        let mut pool: Vec<[i32; 2]> = WAVEVECTORS.to_vec();
        let mut weights: Vec<f64> = (0..count).map(|_| r.random_range(0.5..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let modes = weights
            .into_iter()
            .map(|amplitude| {
                let k = pool.swap_remove(r.random_range(0..pool.len()));
                Mode {
                    k,
                    amplitude,
                    phase: r.random_range(0.0..TAU),
                }
            })
            .collect();
        Self::new(side, eta, modes)
    }

    fn wave(&self, m: &Mode) -> Vec2 {
        Vec2::new(m.k[0] as f64, m.k[1] as f64) * (TAU / self.side)
    }

    /// `g`, its gradient and its Laplacian.
    pub fn perturbation(&self, p: &Point) -> (f64, Vec2, f64) {
        let mut g = 0.0;
        let mut dg = Vec2::zeros();
        let mut lap = 0.0;
        for m in &self.modes {
            let w = self.wave(m);
            let arg = w.dot(&p.coords) + m.phase;
            let (s, c) = arg.sin_cos();
            g += m.amplitude * c;
            dg -= w * (m.amplitude * s);
            lap -= m.amplitude * c * w.norm_squared();
        }
        (g, dg, lap)
    }

    fn sup_norms(&self) -> (f64, f64) {
        self.modes.iter().fold((0.0, 0.0), |(a, b), m| {
            let w = self.wave(m).norm();
            (a + m.amplitude.abs() * w, b + m.amplitude.abs() * w * w)
        })
    }

    /// Analytic upper bound on `|K|`.
    pub fn curvature_bound(&self) -> f64 {
        let (grad, lap) = self.sup_norms();
        let lo = 1.0 - self.eta;
        (self.eta * lap / lo + (self.eta * grad / lo).powi(2)) / (lo * lo)
    }
}

impl Surface for ConformalTorus {
    fn name(&self) -> &'static str {
        "conformal_torus"
    }
    fn metric(&self, p: &Point) -> Mat2 {
        let (g, _, _) = self.perturbation(p);
        let e = 1.0 + self.eta * g;
        Mat2::identity() * (e * e)
    }
    fn christoffel(&self, p: &Point) -> Christoffel {
        let (g, dg, _) = self.perturbation(p);
        Christoffel::conformal(&(dg * (self.eta / (1.0 + self.eta * g))))
    }
    fn gaussian_curvature(&self, p: &Point) -> f64 {
        let (g, dg, lap) = self.perturbation(p);
        let e = 1.0 + self.eta * g;
        let lap_f = self.eta * lap / e - (self.eta / e).powi(2) * dg.norm_squared();
        -lap_f / (e * e)
    }
    fn canonical(&self, p: Point) -> Point {
        torus_canonical(self.side, p)
    }
    fn offset(&self, from: &Point, to: &Point) -> Option<Vec2> {
        Some(torus_offset(self.side, from, to))
    }
    fn injectivity_radius(&self) -> f64 {
        // non-contractible loops have length >= (1 - eta) L; conjugate radius >= pi / sqrt(K_max)
        let loops = 0.5 * (1.0 - self.eta) * self.side;
        let kmax = self.curvature_bound();
        if kmax > 0.0 {
            loops.min(std::f64::consts::PI / kmax.sqrt())
        } else {
            loops
        }
    }
    fn index_key(&self, p: &Point) -> [f64; 4] {
        torus_key(self.side, p)
    }
    fn index_lipschitz(&self) -> f64 {
        1.0 / (1.0 - self.eta)
    }
    fn sample(&self, rng: &mut dyn RngCore) -> Point {
        Point::new(0, rng.random_range(0.0..self.side), rng.random_range(0.0..self.side))
    }
    fn grid_cells(&self, spacing: f64) -> Vec<Cell> {
        torus_cells(self.side, spacing, self.max_metric_scale())
    }
    fn max_metric_scale(&self) -> f64 {
        1.0 + self.eta
    }
    fn area(&self) -> f64 {
        let sq: f64 = self.modes.iter().map(|m| m.amplitude * m.amplitude).sum();
        self.side * self.side * (1.0 + 0.5 * self.eta * self.eta * sq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{christoffel_fd, riemann_fd, sectional_curvature};

    fn sample_torus() -> ConformalTorus {
        ConformalTorus::seeded(8.0, 0.1, 2, 7).unwrap()
    }

    #[test]
    fn perturbation_is_bounded_and_smooth() {
        let t = sample_torus();
        let mut r = rng::seeded(4);
        for _ in 0..200 {
            let p = t.sample(&mut r);
            let (g, dg, lap) = t.perturbation(&p);
            assert!(g.abs() <= 1.0);
            let h = 1e-5;
            let gx = (t.perturbation(&Point::new(0, p.coords.x + h, p.coords.y)).0
                - t.perturbation(&Point::new(0, p.coords.x - h, p.coords.y)).0)
                / (2.0 * h);
            assert!((gx - dg.x).abs() < 1e-8);
            let h = 1e-3;
            let c = |dx: f64, dy: f64| t.perturbation(&Point::new(0, p.coords.x + dx, p.coords.y + dy)).0;
            let fd_lap = (c(h, 0.0) + c(-h, 0.0) + c(0.0, h) + c(0.0, -h) - 4.0 * g) / (h * h);
            assert!((fd_lap - lap).abs() < 1e-5);
        }
    }

    #[test]
    fn analytic_christoffels_match_finite_differences() {
        let t = sample_torus();
        let mut r = rng::seeded(5);
        for _ in 0..50 {
            let p = t.sample(&mut r);
            let fd = christoffel_fd(&t, &p);
            let an = t.christoffel(&p);
            for k in 0..2 {
                assert!((fd.0[k] - an.0[k]).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn analytic_curvature_matches_riemann_tensor() {
        let t = sample_torus();
        let bound = t.curvature_bound();
        let mut r = rng::seeded(6);
        for _ in 0..50 {
            let p = t.sample(&mut r);
            let k = t.gaussian_curvature(&p);
            let fd = sectional_curvature(&t, &p, &Vec2::new(1.0, 0.0), &Vec2::new(0.3, 1.0)).unwrap();
            assert!((k - fd).abs() < 1e-6, "{k} vs {fd}");
            assert!(k.abs() <= bound);
            let _ = riemann_fd(&t, &p);
        }
    }

    #[test]
    fn index_key_is_lipschitz() {
        let t = sample_torus();
        let a = Point::new(0, 0.1, 7.9);
        let b = Point::new(0, 7.95, 0.05);
        let ka = t.index_key(&a);
        let kb = t.index_key(&b);
        let d: f64 = ka.iter().zip(&kb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let flat = torus_offset(8.0, &a, &b).norm();
        assert!(d <= flat * 1.0000001);
    }

    #[test]
    fn grid_cells_cover_the_torus() {
        let t = FlatTorus::new(8.0).unwrap();
        let cells = t.grid_cells(0.5);
        let total: f64 = cells.iter().map(|c| (2.0 * c.half_width).powi(2)).sum();
        assert!((total - 64.0).abs() < 1e-9);
        assert!(cells
            .iter()
            .all(|c| 2.0 * c.half_width * std::f64::consts::SQRT_2 <= 0.5 + 1e-12));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(FlatTorus::new(-1.0).is_err());
        assert!(ConformalTorus::new(8.0, 0.7, vec![]).is_err());
        let m = Mode {
            k: [1, 0],
            amplitude: 0.8,
            phase: 0.0,
        };
        assert!(ConformalTorus::new(8.0, 0.1, vec![m, m]).is_err());
    }
}
