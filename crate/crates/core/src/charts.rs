//! Local maps `exp_w . L . log_v` around net points and their quantitative checks.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geometry::Geometry;
use crate::linalg::{distance_to_isometry, eps_orthonormality, linear_extension, operator_norm, Basis, LinearMap};
use crate::manifold::{Mat2, Point, Vec2};
use crate::margin::{BoundKind, MarginReport};
use crate::nets::{nearest, Net};
use crate::rng;
use crate::spatial::SpatialIndex;

/// Domain radius in units of epsilon.
pub const DOMAIN_FACTOR: f64 = 4.0;

/// A linear map between tangent spaces in coordinates: `T_from -> T_to`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentMap {
    pub from: Point,
    pub to: Point,
    pub matrix: Mat2,
}

impl TangentMap {
    /// The same map written in the charts of `from` and `to`, which must
    /// denote the same points as `self.from` and `self.to`.
    pub fn rebased(&self, gv: &Geometry, gw: &Geometry, from: &Point, to: &Point) -> Result<TangentMap> {
        let mut m = self.matrix;
        for k in 0..2 {
            let col = gw.rebase(&self.to, to, &m.column(k).into())?;
            m.set_column(k, &col);
        }
        let inv = Mat2::from_columns(&[
            gv.rebase(from, &self.from, &Vec2::new(1.0, 0.0))?,
            gv.rebase(from, &self.from, &Vec2::new(0.0, 1.0))?,
        ]);
        Ok(TangentMap {
            from: *from,
            to: *to,
            matrix: m * inv,
        })
    }

    /// Matrix in the orthonormal frames at both ends.
    pub fn in_frames(&self, gv: &Geometry, gw: &Geometry) -> Mat2 {
        let rp = gv.frame(&self.from).try_inverse().unwrap_or_else(Mat2::zeros);
        gw.frame(&self.to) * self.matrix * rp
    }
}

pub fn isometry_defect(m: &Mat2) -> f64 {
    let l = LinearMap {
        matrix: DMatrix::from_column_slice(2, 2, m.as_slice()),
    };
    distance_to_isometry(&l)
}

pub fn frame_norm(m: &Mat2) -> f64 {
    operator_norm(&DMatrix::from_column_slice(2, 2, m.as_slice()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalChart {
    pub index: usize,
    pub center: Point,
    pub image_center: Point,
    /// Net indices of `e_1, e_2`.
    pub basis_points: [usize; 2],
    /// Columns `log_v e_k` in the orthonormal frame at the centre.
    pub e: Mat2,
    /// Columns `log_w f_k` in the orthonormal frame at the image centre.
    pub f: Mat2,
    /// `L` in orthonormal frames, `L e_k = f_k`.
    pub l: Mat2,
    pub epsilon: f64,
    pub e_orthonormality: f64,
    pub f_orthonormality: f64,
}

fn basis(m: &Mat2) -> Result<Basis> {
    Basis::from_columns(DMatrix::from_column_slice(2, 2, m.as_slice()))
}

/// Builds the chart at net point `i`: `b_k` is the orthonormalised
/// coordinate frame at `v`, `e_k` the nearest net point to `exp_v b_k`.
pub fn construct_chart(
    gv: &Geometry,
    gw: &Geometry,
    net: &Net,
    index: &SpatialIndex,
    images: &[Point],
    i: usize,
) -> Result<LocalChart> {
    let eps = net.epsilon;
    let v = net.points[i];
    let w = images[i];
    let mut basis_points = [0usize; 2];
    let mut e = Mat2::zeros();
    let mut f = Mat2::zeros();
    for k in 0..2 {
        let bk = gv.from_frame(&v, &Vec2::from_fn(|r, _| if r == k { 1.0 } else { 0.0 }));
        let target = gv.exp(&v, &bk)?;
        let j = nearest(gv, index, &net.points, &target, eps)?
            .filter(|(_, d)| *d <= 2.0 * eps)
            .map(|(j, _)| j)
            .ok_or_else(|| GeomError::InvalidNet(format!("no net point within 2 eps of exp_v b_{k} at {v}")))?;
        basis_points[k] = j;
        e.set_column(k, &gv.to_frame(&v, &gv.log(&v, &net.points[j])?));
        f.set_column(k, &gw.to_frame(&w, &gw.log(&w, &images[j])?));
    }
    let be = basis(&e)?;
    let bf = basis(&f)?;
    let lm = linear_extension(&be, &bf)?;
    let l = Mat2::from_fn(|r, c| lm.matrix[(r, c)]);
    Ok(LocalChart {
        index: i,
        center: v,
        image_center: w,
        basis_points,
        e,
        f,
        l,
        epsilon: eps,
        e_orthonormality: eps_orthonormality(&be),
        f_orthonormality: eps_orthonormality(&bf),
    })
}

impl LocalChart {
    pub fn radius(&self) -> f64 {
        DOMAIN_FACTOR * self.epsilon
    }

    /// `L` as a coordinate map from the centre to the image centre.
    pub fn l_coords(&self, gv: &Geometry, gw: &Geometry) -> Mat2 {
        let rw_inv = gw.frame(&self.image_center).try_inverse().unwrap_or_else(Mat2::zeros);
        rw_inv * self.l * gv.frame(&self.center)
    }

    fn lift(&self, gv: &Geometry, x: &Point) -> Result<Vec2> {
        let a = gv.log(&self.center, x)?;
        let d = gv.norm(&self.center, &a);
        if d > self.radius() * (1.0 + 1e-12) {
            return Err(GeomError::OutsideDomain {
                distance: d,
                radius: self.radius(),
            });
        }
        Ok(a)
    }

    pub fn apply(&self, gv: &Geometry, gw: &Geometry, x: &Point) -> Result<Point> {
        let a = self.lift(gv, x)?;
        gw.exp(&self.image_center, &(self.l_coords(gv, gw) * a))
    }

    /// `phi(x)` and `d_x phi = d exp_w . L . (d exp_v)^{-1}`, with the
    /// source expressed in the chart of `x`.
    pub fn differential(&self, gv: &Geometry, gw: &Geometry, x: &Point) -> Result<(Point, TangentMap)> {
        let a = self.lift(gv, x)?;
        let lc = self.l_coords(gv, gw);
        let bv = gv.jacobi_basis(&self.center, &a)?;
        let mut av = bv.a;
        for k in 0..2 {
            let col = gv.rebase(&bv.end, x, &av.column(k).into())?;
            av.set_column(k, &col);
        }
        let bw = gw.jacobi_basis(&self.image_center, &(lc * a))?;
        let inv = av.try_inverse().ok_or(GeomError::ConjugatePoints)?;
        Ok((
            bw.end,
            TangentMap {
                from: *x,
                to: bw.end,
                matrix: bw.a * lc * inv,
            },
        ))
    }
}

/// Charts built on first use, one slot per net point.
#[derive(Debug)]
pub struct ChartSet<'a> {
    pub v: &'a Geometry,
    pub w: &'a Geometry,
    pub net: &'a Net,
    pub images: &'a [Point],
    index: SpatialIndex,
    slots: Vec<OnceLock<Result<LocalChart>>>,
}

impl<'a> ChartSet<'a> {
    pub fn new(v: &'a Geometry, w: &'a Geometry, net: &'a Net, images: &'a [Point]) -> Self {
        Self {
            v,
            w,
            net,
            images,
            index: net.index(v),
            slots: (0..net.len()).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn get(&self, i: usize) -> Result<&LocalChart> {
        self.slots[i]
            .get_or_init(|| construct_chart(self.v, self.w, self.net, &self.index, self.images, i))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Fills slots with previously built charts; occupied slots are kept.
    pub fn preload(&self, charts: Vec<LocalChart>) {
        for c in charts {
            if let Some(slot) = self.slots.get(c.index) {
                let _ = slot.set(Ok(c));
            }
        }
    }

    pub fn net_index(&self) -> &SpatialIndex {
        &self.index
    }

    /// Charts built so far, by index.
    pub fn built(&self) -> Vec<LocalChart> {
        self.slots
            .iter()
            .filter_map(|s| s.get().and_then(|r| r.as_ref().ok()).cloned())
            .collect()
    }
}

fn random_in_ball<R: Rng>(g: &Geometry, p: &Point, radius: f64, r: &mut R) -> Result<Point> {
    let a = r.random_range(0.0..std::f64::consts::TAU);
    let len = radius * r.random_range(0.0f64..1.0).sqrt();
    g.exp(p, &(g.from_frame(p, &Vec2::new(a.cos(), a.sin())) * len))
}

/// `|L log_v e' - log_w f'|` over cached net neighbours `e'` of the centre
/// within `radius`.
pub fn check_chart_respects_net(
    charts: &ChartSet,
    chart: &LocalChart,
    neighbours: &[(usize, f64)],
    delta: f64,
    radius: f64,
) -> Result<MarginReport> {
    let (gv, gw) = (charts.v, charts.w);
    let mut rep = MarginReport::new("chart_respects_net", BoundKind::Empirical);
    rep.detail_max("defect", 0.0);
    for (trial, &(j, d)) in neighbours.iter().filter(|(_, d)| *d < radius).enumerate() {
        let lv = gv.to_frame(&chart.center, &gv.log(&chart.center, &charts.net.points[j])?);
        let lw = gw.to_frame(&chart.image_center, &gw.log(&chart.image_center, &charts.images[j])?);
        let defect = (chart.l * lv - lw).norm();
        rep.detail_max("defect", defect);
        rep.record(trial, defect / delta, || format!("net point {j} at distance {d}"));
    }
    Ok(rep)
}

/// Distance ratios of `phi` on sampled pairs in the domain, and the isometry
/// defect of its differential, both divided by `delta`.
pub fn check_chart_lipschitz(
    charts: &ChartSet,
    chart: &LocalChart,
    delta: f64,
    samples: usize,
    seed: u64,
) -> Result<MarginReport> {
    let (gv, gw) = (charts.v, charts.w);
    let mut rep = MarginReport::new("chart_lipschitz", BoundKind::Empirical);
    let mut r = rng::stream(seed, "chart_lipschitz", chart.index as u64);
    rep.detail_max("ratio_defect", 0.0);
    rep.detail_max("differential_defect", isometry_defect(&chart.l));
    for trial in 0..samples {
        let x = random_in_ball(gv, &chart.center, chart.radius(), &mut r)?;
        let y = random_in_ball(gv, &chart.center, chart.radius(), &mut r)?;
        let dv = gv.dist(&x, &y)?;
        if dv == 0.0 {
            continue;
        }
        let dw = gw.dist(&chart.apply(gv, gw, &x)?, &chart.apply(gv, gw, &y)?)?;
        let ratio = dw / dv;
        let ratio_defect = ratio.max(1.0 / ratio) - 1.0;
        let (_, dphi) = chart.differential(gv, gw, &x)?;
        let diff_defect = isometry_defect(&dphi.in_frames(gv, gw));
        rep.detail_max("ratio_defect", ratio_defect);
        rep.detail_max("differential_defect", diff_defect);
        rep.record(trial, ratio_defect.max(diff_defect) / delta, || {
            format!("x = {x}, y = {y}")
        });
    }
    Ok(rep)
}

/// C0 and C1 disagreement of two overlapping charts on their common domain.
pub fn check_pairwise_closeness(
    charts: &ChartSet,
    c1: &LocalChart,
    c2: &LocalChart,
    delta: f64,
    samples: usize,
    seed: u64,
) -> Result<MarginReport> {
    let (gv, gw) = (charts.v, charts.w);
    let mut rep = MarginReport::new("chart_closeness", BoundKind::Empirical);
    rep.detail_max("c0", 0.0);
    rep.detail_max("c1", 0.0);
    let sep = gv.dist(&c1.center, &c2.center)?;
    if sep >= c1.radius() {
        return Err(GeomError::OutsideDomain {
            distance: sep,
            radius: c1.radius(),
        });
    }
    let mut r = rng::stream(seed, "chart_closeness", (c1.index as u64) << 32 | c2.index as u64);
    let mut trial = 0;
    for _ in 0..20 * samples {
        if trial == samples {
            break;
        }
        let x = random_in_ball(gv, &c1.center, c1.radius(), &mut r)?;
        if gv.dist(&x, &c2.center)? > c2.radius() {
            continue;
        }
        let (y1, d1) = c1.differential(gv, gw, &x)?;
        let (y2, d2) = c2.differential(gv, gw, &x)?;
        let c0 = gw.dist(&y1, &y2)?;
        let mut moved = d1.matrix;
        for k in 0..2 {
            let col = gw.transport(&y1, &y2, &moved.column(k).into())?;
            moved.set_column(k, &col);
        }
        let moved = TangentMap {
            from: x,
            to: y2,
            matrix: moved,
        };
        let d2 = d2.rebased(gv, gw, &x, &y2)?;
        let c1_defect = frame_norm(&(moved.in_frames(gv, gw) - d2.in_frames(gv, gw)));
        rep.detail_max("c0", c0);
        rep.detail_max("c1", c1_defect);
        rep.record(trial, c0.max(c1_defect) / delta, || format!("x = {x}"));
        trial += 1;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Backend;
    use crate::manifold::{FlatTorus, Sphere};
    use crate::nets::{build_net, NetOptions};
    use std::sync::Arc;

    #[test]
    fn tangent_map_rebase_roundtrip() {
        let g = Geometry::new(Arc::new(Sphere::new(2.0).unwrap()), Backend::PreferExact);
        let x0 = Point::new(0, 0.9, 0.3);
        let (x1, _) = g.surface().transition(&x0, 1).unwrap();
        let m = TangentMap {
            from: x0,
            to: x0,
            matrix: Mat2::new(1.0, 2.0, -0.5, 3.0),
        };
        let r = m.rebased(&g, &g, &x1, &x1).unwrap().rebased(&g, &g, &x0, &x0).unwrap();
        assert!((r.matrix - m.matrix).norm() < 1e-12);
        // frame matrices agree up to the frame change, which is orthogonal
        let a = frame_norm(&m.in_frames(&g, &g));
        let b = frame_norm(&m.rebased(&g, &g, &x1, &x1).unwrap().in_frames(&g, &g));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn identity_chart_is_identity() {
        let g = Geometry::new(Arc::new(FlatTorus::new(6.0).unwrap()), Backend::PreferExact);
        let net = build_net(&g, 0.5, 4, &NetOptions::default()).unwrap();
        let charts = ChartSet::new(&g, &g, &net, &net.points);
        let c = charts.get(3).unwrap();
        assert!((c.l - Mat2::identity()).norm() < 1e-12);
        let x = g.exp(&c.center, &Vec2::new(0.7, -0.4)).unwrap();
        let y = c.apply(&g, &g, &x).unwrap();
        assert!(g.dist(&x, &y).unwrap() < 1e-12);
        let (_, d) = c.differential(&g, &g, &x).unwrap();
        assert!((d.matrix - Mat2::identity()).norm() < 1e-12);
        let far = g.exp(&c.center, &Vec2::new(2.5, 0.0)).unwrap();
        assert!(matches!(c.apply(&g, &g, &far), Err(GeomError::OutsideDomain { .. })));
    }
}
