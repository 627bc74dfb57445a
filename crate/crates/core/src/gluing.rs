//! The glued map `h`: weighted Karcher means of the local charts, its
//! differential from the implicit function theorem, and distortion audits.
//!
//! With `Phi(x, y) = 1/2 sum_i psi_i(x) dist(phi_i(x), y)^2`, `h(x)` is the
//! critical point `F(x, y) = sum_i psi_i(x) (-log_y phi_i(x)) = 0` near the
//! active chart images. Differentiating `F(x, h(x)) = 0` gives
//! `dh = -(d_y F)^{-1} d_x F`, where `d_y F` is the Hessian of `Phi(x, .)`
//! and `d_x F` the mixed second derivative. The leading minus sign is
//! confirmed against finite differences of `h` by [`audit_differential`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::charts::{frame_norm, isometry_defect, ChartSet, TangentMap};
use crate::error::{GeomError, Result};
use crate::geometry::Geometry;
use crate::manifold::{Mat2, Point, Vec2};
use crate::parallel::map_indexed;
use crate::partition::{PartitionOfUnity, Weight};
use crate::rng;
use crate::spatial::SpatialIndex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KarcherSettings {
    pub max_iterations: usize,
    pub tolerance_floor: f64,
    /// Stopping tolerance relative to delta.
    pub relative_tolerance: f64,
}

impl Default for KarcherSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance_floor: 1e-12,
            relative_tolerance: 1e-8,
        }
    }
}

pub struct GluedMap<'a> {
    pub charts: &'a ChartSet<'a>,
    pub partition: &'a PartitionOfUnity<'a>,
    pub delta: f64,
    pub settings: KarcherSettings,
}

/// An active chart at `x`: its weight and `phi_i(x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Active {
    pub weight: Weight,
    pub target: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KarcherResult {
    pub x: Point,
    pub y: Point,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub active: usize,
    /// Largest `dist(h(x), phi_i(x))` over active charts.
    pub max_target_distance: f64,
    /// The objective never increased by more than the descent slack.
    pub monotone: bool,
}

/// Second derivatives of `Phi` at `(x, y)` in orthonormal frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianPair {
    pub x: Point,
    pub y: Point,
    /// `d_y F`: Hessian operator of `Phi(x, .)` on `T_y W`.
    pub star: Mat2,
    /// `d_x F`: mixed derivative `T_x V -> T_y W`.
    pub mixed: Mat2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GluedDifferential {
    pub karcher: KarcherResult,
    pub hessians: HessianPair,
    /// `dh` in orthonormal frames at `x` and `h(x)`.
    pub frames: Mat2,
    pub coords: TangentMap,
}

const DESCENT_SLACK: f64 = 1e-14;

impl<'a> GluedMap<'a> {
    pub fn new(charts: &'a ChartSet<'a>, partition: &'a PartitionOfUnity<'a>, delta: f64) -> Self {
        Self {
            charts,
            partition,
            delta,
            settings: KarcherSettings::default(),
        }
    }

    pub fn v(&self) -> &Geometry {
        self.charts.v
    }

    pub fn w(&self) -> &Geometry {
        self.charts.w
    }

    pub fn tolerance(&self) -> f64 {
        self.settings
            .tolerance_floor
            .max(self.settings.relative_tolerance * self.delta)
    }

    pub fn active(&self, x: &Point) -> Result<Vec<Active>> {
        let (gv, gw) = (self.v(), self.w());
        self.partition
            .weights(gv, x)?
            .into_iter()
            .map(|weight| {
                let chart = self.charts.get(weight.index)?;
                Ok(Active {
                    weight,
                    target: chart.apply(gv, gw, x)?,
                })
            })
            .collect()
    }

    pub fn phi_objective(&self, x: &Point, y: &Point) -> Result<f64> {
        objective(self.w(), &self.active(x)?, y)
    }

    pub fn karcher_mean(&self, x: &Point) -> Result<KarcherResult> {
        let active = self.active(x)?;
        self.karcher_with(x, &active)
    }

    fn karcher_with(&self, x: &Point, active: &[Active]) -> Result<KarcherResult> {
        let gw = self.w();
        let tol = self.tolerance();
        let mut start = 0;
        for (k, a) in active.iter().enumerate() {
            if a.weight.value > active[start].weight.value {
                start = k;
            }
        }
        let mut y = active[start].target;
        let mut last = f64::INFINITY;
        let mut monotone = true;
        for iterations in 0..=self.settings.max_iterations {
            let mut u = Vec2::zeros();
            let mut phi = 0.0;
            for a in active {
                let l = gw.log(&y, &a.target)?;
                u += l * a.weight.value;
                phi += 0.5 * a.weight.value * gw.inner(&y, &l, &l);
            }
            if phi > last + DESCENT_SLACK * (1.0 + last) {
                monotone = false;
            }
            last = phi;
            let un = gw.norm(&y, &u);
            if un <= tol {
                let mut max_target_distance = 0.0f64;
                for a in active {
                    max_target_distance = max_target_distance.max(gw.dist(&y, &a.target)?);
                }
                return Ok(KarcherResult {
                    x: *x,
                    y,
                    iterations,
                    gradient_norm: un,
                    active: active.len(),
                    max_target_distance,
                    monotone,
                });
            }
            if iterations == self.settings.max_iterations {
                return Err(GeomError::KarcherDiverged { iterations, update: un });
            }
            y = gw.exp(&y, &u)?;
        }
        unreachable!()
    }

    pub fn h(&self, x: &Point) -> Result<Point> {
        Ok(self.karcher_mean(x)?.y)
    }

    pub fn hessians_at(&self, x: &Point, y: &Point) -> Result<HessianPair> {
        let active = self.active(x)?;
        self.hessians_with(x, y, &active)
    }

    fn hessians_with(&self, x: &Point, y: &Point, active: &[Active]) -> Result<HessianPair> {
        let (gv, gw) = (self.v(), self.w());
        let mut star = Mat2::zeros();
        let mut mixed = Mat2::zeros();
        for a in active {
            let psi = a.weight.value;
            let l = gw.log(y, &a.target)?;
            let jb = gw.jacobi_basis(y, &l)?;
            // A in the chart of the target
            let mut am = jb.a;
            let mut cm = jb.c;
            for k in 0..2 {
                am.set_column(k, &gw.rebase(&jb.end, &a.target, &am.column(k).into())?);
                cm.set_column(k, &gw.rebase(&jb.end, &a.target, &cm.column(k).into())?);
            }
            let a_inv = am.try_inverse().ok_or(GeomError::ConjugatePoints)?;
            star += a_inv * cm * psi;
            let chart = self.charts.get(a.weight.index)?;
            let (_, dphi) = chart.differential(gv, gw, x)?;
            let dphi = dphi.rebased(gv, gw, x, &a.target)?;
            mixed += (-l) * a.weight.differential.transpose() - a_inv * dphi.matrix * psi;
        }
        let rx_inv = gv
            .frame(x)
            .try_inverse()
            .ok_or(GeomError::MetricNotPositive { at: x.to_string() })?;
        let ry = gw.frame(y);
        let ry_inv = ry
            .try_inverse()
            .ok_or(GeomError::MetricNotPositive { at: y.to_string() })?;
        Ok(HessianPair {
            x: *x,
            y: *y,
            star: ry * star * ry_inv,
            mixed: ry * mixed * rx_inv,
        })
    }

    pub fn glued_differential(&self, x: &Point) -> Result<GluedDifferential> {
        let active = self.active(x)?;
        let karcher = self.karcher_with(x, &active)?;
        let hessians = self.hessians_with(x, &karcher.y, &active)?;
        let inv = hessians.star.try_inverse().ok_or(GeomError::ConjugatePoints)?;
        let frames = -(inv * hessians.mixed);
        let (gv, gw) = (self.v(), self.w());
        let ry_inv = gw.frame(&karcher.y).try_inverse().unwrap_or_else(Mat2::zeros);
        let coords = TangentMap {
            from: *x,
            to: karcher.y,
            matrix: ry_inv * frames * gv.frame(x),
        };
        Ok(GluedDifferential {
            karcher,
            hessians,
            frames,
            coords,
        })
    }

    /// Central differences of `h` along the frame directions at `x`,
    /// expressed in the frame at `h(x)`.
    pub fn fd_differential(&self, x: &Point, y: &Point, step: f64) -> Result<Mat2> {
        let (gv, gw) = (self.v(), self.w());
        let mut m = Mat2::zeros();
        for k in 0..2 {
            let e = gv.from_frame(x, &Vec2::from_fn(|r, _| if r == k { step } else { 0.0 }));
            let hp = self.h(&gv.exp(x, &e)?)?;
            let hm = self.h(&gv.exp(x, &(-e))?)?;
            let col = (gw.log(y, &hp)? - gw.log(y, &hm)?) / (2.0 * step);
            m.set_column(k, &gw.to_frame(y, &col));
        }
        Ok(m)
    }

    /// Second central differences of `Phi` for both Hessian blocks, in frames.
    pub fn fd_hessians(&self, x: &Point, y: &Point, step: f64) -> Result<(Mat2, Mat2)> {
        let (gv, gw) = (self.v(), self.w());
        let ey = |k: usize, s: f64| gw.from_frame(y, &Vec2::from_fn(|r, _| if r == k { s } else { 0.0 }));
        let ex = |k: usize, s: f64| gv.from_frame(x, &Vec2::from_fn(|r, _| if r == k { s } else { 0.0 }));
        let active = self.active(x)?;
        let f = |v: Vec2| -> Result<f64> { objective(gw, &active, &gw.exp(y, &v)?) };
        let mut star = Mat2::zeros();
        for k in 0..2 {
            for l in 0..2 {
                let (a, b) = (ey(k, step), ey(l, step));
                star[(k, l)] = (f(a + b)? - f(a - b)? - f(b - a)? + f(-a - b)?) / (4.0 * step * step);
            }
        }
        let mut mixed = Mat2::zeros();
        for k in 0..2 {
            let xp = gv.exp(x, &ex(k, step))?;
            let xm = gv.exp(x, &ex(k, -step))?;
            let ap = self.active(&xp)?;
            let am = self.active(&xm)?;
            for l in 0..2 {
                let yp = gw.exp(y, &ey(l, step))?;
                let ym = gw.exp(y, &ey(l, -step))?;
                let v = objective(gw, &ap, &yp)? - objective(gw, &ap, &ym)? - objective(gw, &am, &yp)?
                    + objective(gw, &am, &ym)?;
                mixed[(l, k)] = v / (4.0 * step * step);
            }
        }
        Ok((star, mixed))
    }
}

fn objective(gw: &Geometry, active: &[Active], y: &Point) -> Result<f64> {
    let mut phi = 0.0;
    for a in active {
        let d = gw.dist(&a.target, y)?;
        phi += 0.5 * a.weight.value * d * d;
    }
    Ok(phi)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub pairs: usize,
    pub max_ratio: f64,
    pub min_ratio: f64,
    /// `ln max(max_ratio, 1 / min_ratio)`.
    pub d_lip: f64,
    pub differential_points: usize,
    pub max_differential_defect: f64,
    pub mean_differential_defect: f64,
    pub max_target_distance: f64,
    pub max_iterations: usize,
    pub failures: Vec<String>,
}

/// Distance ratios of `h` on seeded pairs at distance at most `max_pair_distance`,
/// plus the isometry defect of `dh` at the first `differential_points` pair starts.
pub fn measure_lipschitz(
    gm: &GluedMap,
    pair_count: usize,
    max_pair_distance: f64,
    differential_points: usize,
    seed: u64,
) -> LipschitzReport {
    let (gv, gw) = (gm.v(), gm.w());
    struct Row {
        ratio: f64,
        defect: Option<f64>,
        target: f64,
        iterations: usize,
    }
    let rows = map_indexed(pair_count, |k| -> Result<Row> {
        let mut r = rng::stream(seed, "lipschitz_pair", k as u64);
        let x = gv.surface().sample(&mut r);
        let a = r.random_range(0.0..std::f64::consts::TAU);
        let len = max_pair_distance * r.random_range(1e-3..=1.0);
        let x2 = gv.exp(&x, &(gv.from_frame(&x, &Vec2::new(a.cos(), a.sin())) * len))?;
        let dv = gv.dist(&x, &x2)?;
        let (k1, defect) = if k < differential_points {
            let d = gm.glued_differential(&x)?;
            (d.karcher, Some(isometry_defect(&d.frames)))
        } else {
            (gm.karcher_mean(&x)?, None)
        };
        let k2 = gm.karcher_mean(&x2)?;
        let dw = gw.dist(&k1.y, &k2.y)?;
        Ok(Row {
            ratio: dw / dv,
            defect,
            target: k1.max_target_distance.max(k2.max_target_distance),
            iterations: k1.iterations.max(k2.iterations),
        })
    });
    let mut rep = LipschitzReport {
        max_ratio: 0.0,
        min_ratio: f64::INFINITY,
        ..Default::default()
    };
    let mut defect_sum = 0.0;
    for (k, row) in rows.into_iter().enumerate() {
        match row {
            Ok(row) => {
                rep.pairs += 1;
                rep.max_ratio = rep.max_ratio.max(row.ratio);
                rep.min_ratio = rep.min_ratio.min(row.ratio);
                rep.max_target_distance = rep.max_target_distance.max(row.target);
                rep.max_iterations = rep.max_iterations.max(row.iterations);
                if let Some(d) = row.defect {
                    rep.differential_points += 1;
                    rep.max_differential_defect = rep.max_differential_defect.max(d);
                    defect_sum += d;
                }
            }
            Err(e) => rep.failures.push(format!("pair {k}: {e}")),
        }
    }
    if rep.differential_points > 0 {
        rep.mean_differential_defect = defect_sum / rep.differential_points as f64;
    }
    rep.d_lip = if rep.pairs > 0 {
        rep.max_ratio.max(1.0 / rep.min_ratio).ln()
    } else {
        f64::INFINITY
    };
    rep
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub samples: usize,
    pub audit_radius: f64,
    pub lower_ratio: f64,
    pub pairs_checked: usize,
    pub collisions: usize,
    /// Smallest `dist_W(h x1, h x2) / dist_V(x1, x2)` among pairs whose
    /// image distance was computed (pairs ruled out by the index bound are skipped).
    pub min_pair_ratio: f64,
    pub targets: usize,
    pub uncovered_targets: usize,
    /// Largest distance from a target to the nearest sampled image.
    pub max_target_gap: f64,
    pub failures: Vec<String>,
}

impl InjectivityReport {
    pub fn passed(&self) -> bool {
        self.collisions == 0 && self.uncovered_targets == 0 && self.failures.is_empty()
    }
}

/// Sampled injectivity and surjectivity audit of `h`. Pairs whose images lie
/// within `audit_radius` in `W` are flagged when
/// `dist_W(h x1, h x2) < lower_ratio / 2 * dist_V(x1, x2)`; random targets in
/// `W` must have a sampled image within `3 eps`.
pub fn injectivity_audit(
    gm: &GluedMap,
    sample_count: usize,
    target_count: usize,
    audit_radius: f64,
    lower_ratio: f64,
    seed: u64,
) -> InjectivityReport {
    let (gv, gw) = (gm.v(), gm.w());
    let eps = gm.partition.epsilon;
    let evals = map_indexed(sample_count, |k| -> Result<(Point, Point)> {
        let mut r = rng::stream(seed, "injectivity_sample", k as u64);
        let x = gv.surface().sample(&mut r);
        Ok((x, gm.h(&x)?))
    });
    let mut rep = InjectivityReport {
        audit_radius,
        lower_ratio,
        min_pair_ratio: f64::INFINITY,
        max_target_gap: 0.0,
        ..Default::default()
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, e) in evals.into_iter().enumerate() {
        match e {
            Ok((x, y)) => {
                xs.push(x);
                ys.push(y);
            }
            Err(e) => rep.failures.push(format!("sample {k}: {e}")),
        }
    }
    rep.samples = xs.len();
    let lip = gw.surface().index_lipschitz();
    let index = SpatialIndex::build(gw.surface(), &ys, audit_radius * lip);
    let rows = map_indexed(ys.len(), |i| -> Result<(usize, usize, f64)> {
        let mut checked = 0;
        let mut collisions = 0;
        let mut min_ratio = f64::INFINITY;
        for j in index.candidates(gw.surface(), &ys[i], audit_radius) {
            if j <= i {
                continue;
            }
            let dv = gv
                .global_dist(&xs[i], &xs[j])
                .map_or_else(|| gv.dist(&xs[i], &xs[j]), Ok)?;
            if dv == 0.0 {
                continue;
            }
            let bound = 0.5 * lower_ratio * dv;
            checked += 1;
            let dw = match gw.global_dist(&ys[i], &ys[j]) {
                Some(d) => d,
                None => {
                    if gw.key_lower_bound(&ys[i], &ys[j]) >= bound {
                        continue;
                    }
                    gw.dist(&ys[i], &ys[j])?
                }
            };
            if dw > audit_radius {
                continue;
            }
            min_ratio = min_ratio.min(dw / dv);
            if dw < bound {
                collisions += 1;
            }
        }
        Ok((checked, collisions, min_ratio))
    });
    for (i, row) in rows.into_iter().enumerate() {
        match row {
            Ok((c, n, m)) => {
                rep.pairs_checked += c;
                rep.collisions += n;
                rep.min_pair_ratio = rep.min_pair_ratio.min(m);
            }
            Err(e) => rep.failures.push(format!("pairs of sample {i}: {e}")),
        }
    }
    let gaps = map_indexed(target_count, |k| -> Result<f64> {
        let mut r = rng::stream(seed, "surjectivity_target", k as u64);
        let t = gw.surface().sample(&mut r);
        Ok(crate::nets::nearest(gw, &index, &ys, &t, 3.0 * eps)?.map_or(f64::INFINITY, |(_, d)| d))
    });
    rep.targets = target_count;
    for (k, g) in gaps.into_iter().enumerate() {
        match g {
            Ok(g) => {
                rep.max_target_gap = rep.max_target_gap.max(g);
                if g > 3.0 * eps {
                    rep.uncovered_targets += 1;
                }
            }
            Err(e) => rep.failures.push(format!("target {k}: {e}")),
        }
    }
    rep
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DifferentialAudit {
    pub points: usize,
    /// Largest operator-norm gap between `dh` and its finite-difference estimate.
    pub max_fd_gap: f64,
    /// Largest relative gap of both Hessian blocks to second differences of `Phi`.
    pub max_hessian_gap: f64,
    pub max_star_asymmetry: f64,
    pub min_star_eigenvalue: f64,
    /// `(1 - min eigenvalue) / delta`, the empirical constant of the lower bound.
    pub star_constant: f64,
    pub max_isometry_defect: f64,
    pub non_monotone: usize,
    pub failures: Vec<String>,
}

impl DifferentialAudit {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.max_fd_gap <= 1e-2 && self.min_star_eigenvalue > 0.0 && self.points > 0
    }
}

/// Compares `dh` with central differences (step `1e-4 sqrt(delta)`) and the
/// Hessian blocks with second differences of `Phi` (step `1e-3 sqrt(delta)`)
/// at seeded points.
pub fn audit_differential(gm: &GluedMap, points: usize, seed: u64) -> DifferentialAudit {
    let gv = gm.v();
    let s = gm.delta.sqrt();
    let rows = map_indexed(points, |k| -> Result<(f64, f64, f64, f64, f64, bool)> {
        let mut r = rng::stream(seed, "differential_audit", k as u64);
        let x = gv.surface().sample(&mut r);
        let d = gm.glued_differential(&x)?;
        let y = d.karcher.y;
        let fd = gm.fd_differential(&x, &y, 1e-4 * s)?;
        let (star_fd, mixed_fd) = gm.fd_hessians(&x, &y, 1e-3 * s)?;
        let star = d.hessians.star;
        let hess_gap = (frame_norm(&(star - star_fd)) / frame_norm(&star).max(1e-300))
            .max(frame_norm(&(d.hessians.mixed - mixed_fd)) / frame_norm(&d.hessians.mixed).max(1e-300));
        let asym = frame_norm(&(star - star.transpose()));
        let eig = (0.5 * (star + star.transpose())).symmetric_eigenvalues().min();
        Ok((
            frame_norm(&(d.frames - fd)),
            hess_gap,
            asym,
            eig,
            isometry_defect(&d.frames),
            d.karcher.monotone,
        ))
    });
    let mut rep = DifferentialAudit {
        min_star_eigenvalue: f64::INFINITY,
        ..Default::default()
    };
    for (k, row) in rows.into_iter().enumerate() {
        match row {
            Ok((gap, hg, asym, eig, defect, monotone)) => {
                rep.points += 1;
                rep.max_fd_gap = rep.max_fd_gap.max(gap);
                rep.max_hessian_gap = rep.max_hessian_gap.max(hg);
                rep.max_star_asymmetry = rep.max_star_asymmetry.max(asym);
                rep.min_star_eigenvalue = rep.min_star_eigenvalue.min(eig);
                rep.max_isometry_defect = rep.max_isometry_defect.max(defect);
                rep.non_monotone += usize::from(!monotone);
            }
            Err(e) => rep.failures.push(format!("point {k}: {e}")),
        }
    }
    rep.star_constant = ((1.0 - rep.min_star_eigenvalue) / gm.delta).max(0.0);
    rep
}
