//! Uniform grid over the index keys of a surface, for ball queries.

use std::collections::HashMap;

use crate::manifold::{Point, Surface};

type CellKey = [i64; 4];

#[derive(Clone, Debug, Default)]
pub struct SpatialIndex {
    cell: f64,
    lipschitz: f64,
    keys: Vec<[f64; 4]>,
    grid: HashMap<CellKey, Vec<u32>>,
}

fn cell_of(key: &[f64; 4], cell: f64) -> CellKey {
    key.map(|x| (x / cell).floor() as i64)
}

fn key_dist2(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

impl SpatialIndex {
    /// Index with grid cells of side `cell` (in key units).
    pub fn new(surface: &dyn Surface, cell: f64) -> Self {
        Self {
            cell,
            lipschitz: surface.index_lipschitz(),
            keys: Vec::new(),
            grid: HashMap::new(),
        }
    }

    pub fn build(surface: &dyn Surface, points: &[Point], cell: f64) -> Self {
        let mut idx = Self::new(surface, cell);
        for p in points {
            idx.insert(surface, p);
        }
        idx
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Appends a point; its id is the previous length.
    pub fn insert(&mut self, surface: &dyn Surface, p: &Point) -> usize {
        let key = surface.index_key(p);
        let id = self.keys.len();
        self.grid.entry(cell_of(&key, self.cell)).or_default().push(id as u32);
        self.keys.push(key);
        id
    }

    /// Ids of all points that may lie within geodesic distance `radius` of `q`,
    /// in increasing order. Never misses a point of the ball.
    pub fn candidates(&self, surface: &dyn Surface, q: &Point, radius: f64) -> Vec<usize> {
        let key = surface.index_key(q);
        let reach = radius * self.lipschitz * (1.0 + 1e-12) + 1e-12;
        let lo = key.map(|x| x - reach);
        let hi = key.map(|x| x + reach);
        let clo = cell_of(&lo, self.cell);
        let chi = cell_of(&hi, self.cell);
        let mut out = Vec::new();
        let r2 = reach * reach;
        for a in clo[0]..=chi[0] {
            for b in clo[1]..=chi[1] {
                for c in clo[2]..=chi[2] {
                    for d in clo[3]..=chi[3] {
                        if let Some(ids) = self.grid.get(&[a, b, c, d]) {
                            for &id in ids {
                                if key_dist2(&self.keys[id as usize], &key) <= r2 {
                                    out.push(id as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{FlatTorus, Sphere};
    use crate::rng;

    #[test]
    fn candidates_contain_the_ball() {
        let t = FlatTorus::new(8.0).unwrap();
        let mut r = rng::seeded(31);
        let pts: Vec<Point> = (0..500).map(|_| t.sample(&mut r)).collect();
        let idx = SpatialIndex::build(&t, &pts, 0.7);
        for q in pts.iter().take(50) {
            let c = idx.candidates(&t, q, 1.0);
            for (i, p) in pts.iter().enumerate() {
                let d = t.offset(q, p).unwrap().norm();
                if d <= 1.0 {
                    assert!(c.binary_search(&i).is_ok());
                }
            }
        }
    }

    #[test]
    fn works_across_sphere_charts() {
        let s = Sphere::new(2.0).unwrap();
        let a = Point::new(0, 0.999, 0.0);
        let b = Point::new(1, 1.0 / 1.001, 0.0);
        let idx = SpatialIndex::build(&s, &[a, b], 0.5);
        assert_eq!(idx.candidates(&s, &a, 0.1), vec![0, 1]);
    }
}
