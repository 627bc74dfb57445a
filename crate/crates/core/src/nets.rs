//! Epsilon-separated epsilon-nets by capped farthest-point selection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geometry::Geometry;
use crate::manifold::{Cell, Point};
use crate::parallel::map_indexed;
use crate::rng;
use crate::spatial::SpatialIndex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CachedPair {
    pub i: u32,
    pub j: u32,
    pub dist: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub model: String,
    pub epsilon: f64,
    pub points: Vec<Point>,
    /// Pairs `i < j` closer than this have their distance cached.
    pub cache_radius: f64,
    pub pairs: Vec<CachedPair>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetOptions {
    /// Candidate pool spacing as a fraction of epsilon.
    pub pool_spacing: f64,
    /// Jitter of pool points as a fraction of the cell half-width.
    pub jitter: f64,
    pub cache_radius: f64,
}

impl Default for NetOptions {
    fn default() -> Self {
        Self {
            pool_spacing: 0.25,
            jitter: 0.5,
            cache_radius: 2.0,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    d: f64,
    id: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // largest distance first, then lowest id
        self.d.total_cmp(&other.d).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Distance to the nearest point of `points` (through `index`), searching
/// balls of growing radius starting at `radius`. Ties go to the lowest index.
pub fn nearest(
    g: &Geometry,
    index: &SpatialIndex,
    points: &[Point],
    q: &Point,
    radius: f64,
) -> Result<Option<(usize, f64)>> {
    let mut r = radius;
    loop {
        let mut best: Option<(usize, f64)> = None;
        let cands = index.candidates(g.surface(), q, r);
        let exhausted = cands.len() == index.len();
        for id in cands {
            let d = g.dist(q, &points[id])?;
            if d <= r && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((id, d));
            }
        }
        if best.is_some() {
            return Ok(best);
        }
        if exhausted || r >= g.working_radius() {
            return Ok(None);
        }
        r = (2.0 * r).min(g.working_radius());
    }
}

/// Distance from `q` to the closest point among index candidates within `radius`,
/// or infinity when there is none.
fn nearest_within(g: &Geometry, index: &SpatialIndex, points: &[Point], q: &Point, radius: f64) -> Result<f64> {
    let mut best = f64::INFINITY;
    for id in index.candidates(g.surface(), q, radius) {
        if g.key_lower_bound(q, &points[id]) >= best {
            continue;
        }
        best = best.min(g.dist(q, &points[id])?);
    }
    Ok(best)
}

fn cell_radius(g: &Geometry, c: &Cell) -> f64 {
    let m = g.metric(&c.center);
    let scale = m.symmetric_eigenvalues().max().max(0.0).sqrt();
    1.1 * std::f64::consts::SQRT_2 * c.half_width * scale
}

fn split(c: &Cell) -> [Cell; 4] {
    let h = 0.5 * c.half_width;
    [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)].map(|(a, b)| {
        let mut center = c.center;
        center.coords.x += a * h;
        center.coords.y += b * h;
        Cell { center, half_width: h }
    })
}

const FINEST_CELL: f64 = 1e-4;

/// Builds an epsilon-separated epsilon-net: greedy farthest-point selection
/// over a jittered candidate grid, then hierarchical refinement of the
/// covering over the grid cells.
pub fn build_net(g: &Geometry, epsilon: f64, seed: u64, opts: &NetOptions) -> Result<Net> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(GeomError::InvalidParameter(format!(
            "net epsilon {epsilon} outside (0, 1]"
        )));
    }
    let s = g.surface();
    let cells = s.grid_cells(opts.pool_spacing * epsilon);
    let mut r = rng::stream(seed, "net_pool", 0);
    let pool: Vec<Point> = cells
        .iter()
        .map(|c| {
            let mut p = c.center;
            let j = opts.jitter * c.half_width;
            if j > 0.0 {
                p.coords.x += r.random_range(-j..j);
                p.coords.y += r.random_range(-j..j);
            }
            s.canonical(p)
        })
        .collect();
    let cap = 3.0 * epsilon;
    let lip = s.index_lipschitz();
    let pool_index = SpatialIndex::build(s, &pool, cap * lip);
    let mut d = vec![cap; pool.len()];
    let mut heap: BinaryHeap<Entry> = (0..pool.len()).map(|id| Entry { d: cap, id }).collect();
    let mut points: Vec<Point> = Vec::new();
    let mut net_index = SpatialIndex::new(s, 2.0 * epsilon * lip);
    while let Some(Entry { d: dv, id }) = heap.pop() {
        if dv != d[id] {
            continue;
        }
        if dv <= epsilon {
            break;
        }
        let p = pool[id];
        points.push(p);
        net_index.insert(s, &p);
        d[id] = 0.0;
        for j in pool_index.candidates(s, &p, cap) {
            if d[j] <= 0.0 || g.key_lower_bound(&p, &pool[j]) >= d[j] {
                continue;
            }
            let dist = g.dist(&p, &pool[j])?;
            if dist < d[j] {
                d[j] = dist;
                heap.push(Entry { d: dist, id: j });
            }
        }
    }

    // cells stay in their own chart; only their centres are canonicalised
    for c in &cells {
        let mut stack = vec![*c];
        while let Some(cell) = stack.pop() {
            let rc = cell_radius(g, &cell);
            let center = s.canonical(cell.center);
            let dmin = nearest_within(g, &net_index, &points, &center, epsilon + rc)?;
            if dmin + rc <= epsilon {
                continue;
            }
            if dmin > epsilon {
                points.push(center);
                net_index.insert(s, &center);
                continue;
            }
            if rc < FINEST_CELL * epsilon {
                continue;
            }
            stack.extend(split(&cell));
        }
    }

    let pairs = cache_pairs(g, &points, &net_index, opts.cache_radius)?;
    Ok(Net {
        model: s.name().to_string(),
        epsilon,
        points,
        cache_radius: opts.cache_radius,
        pairs,
    })
}

fn cache_pairs(g: &Geometry, points: &[Point], index: &SpatialIndex, radius: f64) -> Result<Vec<CachedPair>> {
    let rows = map_indexed(points.len(), |i| -> Result<Vec<CachedPair>> {
        let mut out = Vec::new();
        for j in index.candidates(g.surface(), &points[i], radius) {
            if j <= i {
                continue;
            }
            let dist = g.dist(&points[i], &points[j])?;
            if dist < radius {
                out.push(CachedPair {
                    i: i as u32,
                    j: j as u32,
                    dist,
                });
            }
        }
        Ok(out)
    });
    let mut pairs = Vec::new();
    for row in rows {
        pairs.extend(row?);
    }
    Ok(pairs)
}

impl Net {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index(&self, g: &Geometry) -> SpatialIndex {
        SpatialIndex::build(
            g.surface(),
            &self.points,
            2.0 * self.epsilon * g.surface().index_lipschitz(),
        )
    }

    /// Cached neighbours of every point, sorted by index.
    pub fn neighbours(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.points.len()];
        for p in &self.pairs {
            out[p.i as usize].push((p.j as usize, p.dist));
            out[p.j as usize].push((p.i as usize, p.dist));
        }
        for row in &mut out {
            row.sort_by_key(|a| a.0);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetValidation {
    pub points: usize,
    pub separation: f64,
    pub covering_radius: f64,
    pub probes: usize,
}

/// Minimum pairwise distance and probe estimate of the covering radius.
pub fn validate_net(g: &Geometry, net: &Net, probes: usize, seed: u64) -> Result<NetValidation> {
    let mut separation = net.pairs.iter().map(|p| p.dist).fold(f64::INFINITY, f64::min);
    if !separation.is_finite() {
        for i in 0..net.len() {
            for j in i + 1..net.len() {
                let d = g
                    .global_dist(&net.points[i], &net.points[j])
                    .unwrap_or_else(|| g.key_lower_bound(&net.points[i], &net.points[j]));
                separation = separation.min(d);
            }
        }
    }
    let index = net.index(g);
    let rows = map_indexed(probes, |k| -> Result<f64> {
        let mut r = rng::stream(seed, "net_probe", k as u64);
        let q = g.surface().sample(&mut r);
        Ok(nearest(g, &index, &net.points, &q, net.epsilon)?.map_or(f64::INFINITY, |(_, d)| d))
    });
    let mut covering = 0.0f64;
    for d in rows {
        covering = covering.max(d?);
    }
    Ok(NetValidation {
        points: net.len(),
        separation,
        covering_radius: covering,
        probes,
    })
}
