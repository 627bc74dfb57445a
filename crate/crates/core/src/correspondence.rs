//! Maps from a net in `V` to points of `W`, and their measured distortion.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geometry::Geometry;
use crate::manifold::{Point, Vec2};
use crate::nets::{nearest, CachedPair, Net};
use crate::parallel::{map_indexed, map_slice};
use crate::rng;
use crate::spatial::SpatialIndex;

/// A known map `V -> W` evaluated on net points.
pub trait CorrespondenceMap: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    /// Image of net point number `index`, located at `p`.
    fn apply(&self, target: &Geometry, p: &Point, index: usize) -> Result<Point>;
}

fn in_atlas(target: &Geometry, p: &Point) -> Result<()> {
    if p.chart >= target.surface().chart_count() || !p.coords.iter().all(|c| c.is_finite()) {
        return Err(GeomError::OutsideDomain {
            distance: f64::NAN,
            radius: f64::NAN,
        });
    }
    Ok(())
}

/// Same chart and coordinates in the target.
#[derive(Clone, Debug, Default)]
pub struct CoordinateIdentity;

impl CorrespondenceMap for CoordinateIdentity {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn apply(&self, target: &Geometry, p: &Point, _index: usize) -> Result<Point> {
        in_atlas(target, p)?;
        Ok(target.canonical(p))
    }
}

/// Coordinate translation (an isometry between flat tori of equal side).
#[derive(Clone, Debug)]
pub struct CoordinateShift {
    pub shift: Vec2,
}

impl CorrespondenceMap for CoordinateShift {
    fn name(&self) -> &'static str {
        "shift"
    }
    fn apply(&self, target: &Geometry, p: &Point, _index: usize) -> Result<Point> {
        let q = Point {
            chart: p.chart,
            coords: p.coords + self.shift,
        };
        in_atlas(target, &q)?;
        Ok(target.canonical(&q))
    }
}

/// Moves every image of `inner` by a geodesic step of length `radius` in a
/// seeded direction.
#[derive(Debug)]
pub struct Jittered {
    pub inner: Box<dyn CorrespondenceMap>,
    pub radius: f64,
    pub seed: u64,
}

impl CorrespondenceMap for Jittered {
    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn apply(&self, target: &Geometry, p: &Point, index: usize) -> Result<Point> {
        let base = self.inner.apply(target, p, index)?;
        let mut r = rng::stream(self.seed, "jitter", index as u64);
        let a = r.random_range(0.0..std::f64::consts::TAU);
        let v = target.from_frame(&base, &Vec2::new(a.cos(), a.sin())) * self.radius;
        target.exp(&base, &v)
    }
}

pub type MapParams = BTreeMap<String, f64>;

pub type MapConstructor = fn(&MapParams) -> Result<Box<dyn CorrespondenceMap>>;

fn param(p: &MapParams, key: &str, default: f64) -> f64 {
    p.get(key).copied().unwrap_or(default)
}

fn identity(_: &MapParams) -> Result<Box<dyn CorrespondenceMap>> {
    Ok(Box::new(CoordinateIdentity))
}

fn shift(p: &MapParams) -> Result<Box<dyn CorrespondenceMap>> {
    Ok(Box::new(CoordinateShift {
        shift: Vec2::new(param(p, "dx", 0.0), param(p, "dy", 0.0)),
    }))
}

/// Name-to-constructor table for correspondence maps. Every map accepts
/// `jitter` (radius, default 0) and `jitter_seed`.
#[derive(Clone)]
pub struct MapRegistry {
    entries: BTreeMap<&'static str, MapConstructor>,
}

impl Default for MapRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register("identity", identity);
        r.register("shift", shift);
        r
    }
}

impl MapRegistry {
    pub fn register(&mut self, name: &'static str, ctor: MapConstructor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn build(&self, name: &str, params: &MapParams) -> Result<Box<dyn CorrespondenceMap>> {
        let ctor = self.entries.get(name).ok_or_else(|| GeomError::Unknown {
            kind: "correspondence map",
            name: name.to_string(),
        })?;
        let base = ctor(params)?;
        let jitter = param(params, "jitter", 0.0);
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(GeomError::InvalidParameter(format!("jitter {jitter}")));
        }
        if jitter == 0.0 {
            return Ok(base);
        }
        Ok(Box::new(Jittered {
            inner: base,
            radius: jitter,
            seed: param(params, "jitter_seed", 0.0) as u64,
        }))
    }
}

/// Builds a map from the default registry.
pub fn build_map(name: &str, params: &MapParams) -> Result<Box<dyn CorrespondenceMap>> {
    MapRegistry::default().build(name, params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub map: String,
    pub images: Vec<Point>,
    /// Largest `|dist_V(v_i, v_j) - dist_W(chi v_i, chi v_j)|` over the
    /// evaluated cached pairs.
    pub distortion: f64,
    pub pairs_evaluated: usize,
    /// Probe estimate of the covering radius of the image in `W`.
    pub covering_defect: f64,
    pub covering_probes: usize,
}

pub fn oracle_correspondence(
    map: &dyn CorrespondenceMap,
    _v: &Geometry,
    w: &Geometry,
    net: &Net,
    max_pairs: Option<usize>,
    probes: usize,
    seed: u64,
) -> Result<Correspondence> {
    let images: Vec<Point> = map_slice(&net.points, |i, p| map.apply(w, p, i))
        .into_iter()
        .collect::<Result<_>>()?;
    let pairs = subsample(&net.pairs, max_pairs);
    let defects = map_slice(&pairs, |_, pair| -> Result<f64> {
        let dw = w.dist(&images[pair.i as usize], &images[pair.j as usize])?;
        Ok((pair.dist - dw).abs())
    });
    let mut distortion = 0.0f64;
    for d in defects {
        distortion = distortion.max(d?);
    }
    let covering_defect = image_covering(w, &images, net.epsilon, probes, seed)?;
    Ok(Correspondence {
        map: map.name().to_string(),
        images,
        distortion,
        pairs_evaluated: pairs.len(),
        covering_defect,
        covering_probes: probes,
    })
}

/// Every `ceil(n / max)`-th pair, so at most `max` pairs spread over the net.
fn subsample(pairs: &[CachedPair], max: Option<usize>) -> Vec<CachedPair> {
    match max {
        Some(m) if m > 0 && pairs.len() > m => {
            let stride = pairs.len().div_ceil(m);
            pairs.iter().step_by(stride).copied().collect()
        }
        _ => pairs.to_vec(),
    }
}

fn image_covering(w: &Geometry, images: &[Point], scale: f64, probes: usize, seed: u64) -> Result<f64> {
    let index = SpatialIndex::build(w.surface(), images, 2.0 * scale * w.surface().index_lipschitz());
    let rows = map_indexed(probes, |k| -> Result<f64> {
        let mut r = rng::stream(seed, "image_probe", k as u64);
        let q = w.surface().sample(&mut r);
        Ok(nearest(w, &index, images, &q, scale)?.map_or(f64::INFINITY, |(_, d)| d))
    });
    let mut worst = 0.0f64;
    for d in rows {
        worst = worst.max(d?);
    }
    Ok(worst)
}

/// A bijection between two finite metric spaces and its distortion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `assignment[i]` is the partner in the second space of point `i`.
    pub assignment: Vec<usize>,
    pub distortion: f64,
}

pub const MAX_MATCH_SIZE: usize = 12;

pub fn assignment_distortion(dv: &DMatrix<f64>, dw: &DMatrix<f64>, assignment: &[usize]) -> f64 {
    let n = assignment.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((dv[(i, j)] - dw[(assignment[i], assignment[j])]).abs());
        }
    }
    worst
}

/// Exhaustive branch-and-bound over bijections minimising the distortion.
/// The first optimum in lexicographic order of assignments is returned.
pub fn brute_force_match(dv: &DMatrix<f64>, dw: &DMatrix<f64>) -> Result<Matching> {
    let n = dv.nrows();
    if dv.ncols() != n || dw.nrows() != n || dw.ncols() != n {
        return Err(GeomError::DimensionMismatch {
            expected: n,
            got: dw.nrows(),
        });
    }
    if n > MAX_MATCH_SIZE {
        return Err(GeomError::TooLarge(format!("{n} points (at most {MAX_MATCH_SIZE})")));
    }
    struct Search<'a> {
        dv: &'a DMatrix<f64>,
        dw: &'a DMatrix<f64>,
        used: Vec<bool>,
        current: Vec<usize>,
        best: Vec<usize>,
        best_cost: f64,
    }
    impl Search<'_> {
        fn go(&mut self, cost: f64) {
            let i = self.current.len();
            if i == self.used.len() {
                if cost < self.best_cost || self.best.is_empty() {
                    self.best_cost = cost;
                    self.best = self.current.clone();
                }
                return;
            }
            for cand in 0..self.used.len() {
                if self.used[cand] {
                    continue;
                }
                let mut c = cost;
                for (k, &m) in self.current.iter().enumerate() {
                    c = c.max((self.dv[(k, i)] - self.dw[(m, cand)]).abs());
                }
                if !self.best.is_empty() && c >= self.best_cost {
                    continue;
                }
                self.used[cand] = true;
                self.current.push(cand);
                self.go(c);
                self.current.pop();
                self.used[cand] = false;
            }
        }
    }
    let mut s = Search {
        dv,
        dw,
        used: vec![false; n],
        current: Vec::with_capacity(n),
        best: Vec::new(),
        best_cost: f64::INFINITY,
    };
    s.go(0.0);
    Ok(Matching {
        distortion: s.best_cost.max(0.0),
        assignment: s.best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_space(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::seeded(seed);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (r.random_range(0.0..1.0), r.random_range(0.0..1.0)))
            .collect();
        DMatrix::from_fn(n, n, |i, j| {
            ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt()
        })
    }

    #[test]
    fn identical_spaces_match_with_identity() {
        let d = random_space(5, 1);
        let m = brute_force_match(&d, &d).unwrap();
        assert_eq!(m.distortion, 0.0);
        assert_eq!(m.assignment, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn single_perturbed_distance() {
        // four points with all distances 1 except one
        let mut a = DMatrix::from_element(4, 4, 1.0);
        a.fill_diagonal(0.0);
        let mut b = a.clone();
        b[(0, 1)] = 1.3;
        b[(1, 0)] = 1.3;
        let m = brute_force_match(&a, &b).unwrap();
        assert!((m.distortion - 0.3).abs() < 1e-12);
    }

    #[test]
    fn optimum_beats_any_assignment() {
        let a = random_space(8, 2);
        let b = random_space(8, 3);
        let m = brute_force_match(&a, &b).unwrap();
        assert!((assignment_distortion(&a, &b, &m.assignment) - m.distortion).abs() < 1e-15);
        let mut r = rng::seeded(4);
        for _ in 0..50 {
            let mut perm: Vec<usize> = (0..8).collect();
            for i in (1..8).rev() {
                perm.swap(i, r.random_range(0..=i));
            }
            assert!(m.distortion <= assignment_distortion(&a, &b, &perm));
        }
    }

    #[test]
    fn rejects_large_instances() {
        let d = DMatrix::zeros(13, 13);
        assert!(matches!(brute_force_match(&d, &d), Err(GeomError::TooLarge(_))));
        assert!(build_map("mobius", &MapParams::new()).is_err());
    }
}
