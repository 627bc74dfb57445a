//! Partition of unity from radial bumps around net points.
//!
//! The profile is `Psi(r) = f(2 - r) / (f(2 - r) + f(r - 1))` with
//! `f(t) = exp(-1/t)` for `t > 0` and 0 otherwise: equal to 1 on `[0, 1]`,
//! to 0 on `[2, inf)`, and symmetric about `r = 1.5` in the sense
//! `Psi(1.5 + s) = 1 - Psi(1.5 - s)`.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geometry::Geometry;
use crate::manifold::{Point, Vec2};
use crate::nets::Net;
use crate::parallel::map_indexed;
use crate::rng;
use crate::spatial::SpatialIndex;

fn f(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

fn df(t: f64) -> f64 {
    if t > 0.0 {
        f(t) / (t * t)
    } else {
        0.0
    }
}

pub fn bump(r: f64) -> f64 {
    if r <= 1.0 {
        return 1.0;
    }
    if r >= 2.0 {
        return 0.0;
    }
    let a = f(2.0 - r);
    a / (a + f(r - 1.0))
}

pub fn bump_derivative(r: f64) -> f64 {
    if r <= 1.0 || r >= 2.0 {
        return 0.0;
    }
    let (a, b) = (f(2.0 - r), f(r - 1.0));
    let (da, db) = (-df(2.0 - r), df(r - 1.0));
    (da * b - a * db) / ((a + b) * (a + b))
}

/// One nonzero weight at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    pub index: usize,
    pub value: f64,
    /// Unnormalised bump value.
    pub raw: f64,
    /// `d psi_i` at the point, as coordinate covector components.
    pub differential: Vec2,
}

#[derive(Clone, Debug)]
pub struct PartitionOfUnity<'a> {
    pub net: &'a Net,
    pub epsilon: f64,
    index: SpatialIndex,
}

impl<'a> PartitionOfUnity<'a> {
    pub fn new(g: &Geometry, net: &'a Net) -> Self {
        let index = SpatialIndex::build(
            g.surface(),
            &net.points,
            2.0 * net.epsilon * g.surface().index_lipschitz(),
        );
        Self {
            net,
            epsilon: net.epsilon,
            index,
        }
    }

    /// Nonzero weights at `x` by increasing index, with their differentials.
    pub fn weights(&self, g: &Geometry, x: &Point) -> Result<Vec<Weight>> {
        let eps = self.epsilon;
        let mut out = Vec::new();
        let mut raw_grad = Vec::new();
        for i in self.index.candidates(g.surface(), x, 2.0 * eps) {
            if g.key_lower_bound(x, &self.net.points[i]) >= 2.0 * eps {
                continue;
            }
            let v = g.log(x, &self.net.points[i])?;
            let d = g.norm(x, &v);
            let raw = bump(d / eps);
            if raw <= 0.0 {
                continue;
            }
            // d|x v_i| = -<log_x v_i, .> / |log_x v_i|
            let grad = if d > 0.0 {
                -(g.metric(x) * v) * (bump_derivative(d / eps) / (eps * d))
            } else {
                Vec2::zeros()
            };
            out.push(Weight {
                index: i,
                value: 0.0,
                raw,
                differential: Vec2::zeros(),
            });
            raw_grad.push(grad);
        }
        if out.is_empty() {
            return Err(GeomError::EmptySupport { at: x.to_string() });
        }
        let total: f64 = out.iter().map(|w| w.raw).sum();
        let total_grad: Vec2 = raw_grad.iter().sum();
        for (w, gr) in out.iter_mut().zip(&raw_grad) {
            w.value = w.raw / total;
            w.differential = (gr - total_grad * w.value) / total;
        }
        Ok(out)
    }

    pub fn weight_gradient(&self, g: &Geometry, x: &Point, i: usize) -> Result<Vec2> {
        Ok(self
            .weights(g, x)?
            .into_iter()
            .find(|w| w.index == i)
            .map_or_else(Vec2::zeros, |w| w.differential))
    }
}

fn value_of(ws: &[Weight], i: usize) -> f64 {
    ws.iter().find(|w| w.index == i).map_or(0.0, |w| w.value)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub probes: usize,
    pub max_sum_error: f64,
    pub max_overlap: usize,
    /// Largest `|analytic - central difference| * eps` over weights and directions.
    pub max_gradient_error: f64,
    pub max_gradient_sum: f64,
    /// Largest `|d psi_i| * eps`.
    pub max_scaled_gradient: f64,
    pub values_in_range: bool,
    pub plateau_at_every_probe: bool,
}

impl PartitionReport {
    pub fn passed(&self, overlap_bound: usize) -> bool {
        self.max_sum_error <= 1e-12
            && self.max_overlap <= overlap_bound
            && self.max_gradient_error <= 1e-4
            && self.max_gradient_sum <= 1e-10
            && self.values_in_range
            && self.plateau_at_every_probe
    }
}

/// Partition-of-unity invariants on seeded probes, with gradients checked
/// against central differences of step `1e-5 eps` along coordinate axes.
pub fn check_partition(g: &Geometry, pou: &PartitionOfUnity, probes: usize, seed: u64) -> Result<PartitionReport> {
    let eps = pou.epsilon;
    let h = 1e-5 * eps;
    let rows = map_indexed(probes, |k| -> Result<PartitionReport> {
        let mut r = rng::stream(seed, "partition_probe", k as u64);
        let x = g.surface().sample(&mut r);
        let ws = pou.weights(g, &x)?;
        let sum: f64 = ws.iter().map(|w| w.value).sum();
        let grad_sum: Vec2 = ws.iter().map(|w| w.differential).sum();
        let metric_inv = g.metric(&x).try_inverse().unwrap_or_default();
        let mut rep = PartitionReport {
            probes: 1,
            max_sum_error: (sum - 1.0).abs(),
            max_overlap: ws.len(),
            max_gradient_sum: grad_sum.norm(),
            values_in_range: ws.iter().all(|w| (0.0..=1.0).contains(&w.value)),
            plateau_at_every_probe: ws.iter().any(|w| w.raw == 1.0),
            ..Default::default()
        };
        let mut shifted = Vec::new();
        for axis in 0..2 {
            let mut e = Vec2::zeros();
            e[axis] = h;
            let plus = g.canonical(&Point {
                chart: x.chart,
                coords: x.coords + e,
            });
            let minus = g.canonical(&Point {
                chart: x.chart,
                coords: x.coords - e,
            });
            shifted.push((pou.weights(g, &plus)?, pou.weights(g, &minus)?));
        }
        for w in &ws {
            for (axis, (p, m)) in shifted.iter().enumerate() {
                let fd = (value_of(p, w.index) - value_of(m, w.index)) / (2.0 * h);
                rep.max_gradient_error = rep.max_gradient_error.max((w.differential[axis] - fd).abs() * eps);
            }
            let norm = w.differential.dot(&(metric_inv * w.differential)).max(0.0).sqrt();
            rep.max_scaled_gradient = rep.max_scaled_gradient.max(norm * eps);
        }
        Ok(rep)
    });
    let mut total = PartitionReport {
        values_in_range: true,
        plateau_at_every_probe: true,
        ..Default::default()
    };
    for row in rows {
        let row = row?;
        total.probes += 1;
        total.max_sum_error = total.max_sum_error.max(row.max_sum_error);
        total.max_overlap = total.max_overlap.max(row.max_overlap);
        total.max_gradient_error = total.max_gradient_error.max(row.max_gradient_error);
        total.max_gradient_sum = total.max_gradient_sum.max(row.max_gradient_sum);
        total.max_scaled_gradient = total.max_scaled_gradient.max(row.max_scaled_gradient);
        total.values_in_range &= row.values_in_range;
        total.plateau_at_every_probe &= row.plateau_at_every_probe;
    }
    Ok(total)
}
