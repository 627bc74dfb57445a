//! Surface models constructed by name from numeric parameters.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{ConformalTorus, Ellipsoid, FlatTorus, QuadraticGraph, Sphere, Surface};
use crate::error::{GeomError, Result};

pub type Params = BTreeMap<String, f64>;

pub type Constructor = fn(&Params) -> Result<Arc<dyn Surface>>;

fn get(p: &Params, key: &str, default: f64) -> f64 {
    p.get(key).copied().unwrap_or(default)
}

fn require(p: &Params, key: &str) -> Result<f64> {
    p.get(key)
        .copied()
        .ok_or_else(|| GeomError::InvalidParameter(format!("missing parameter `{key}`")))
}

fn flat_torus(p: &Params) -> Result<Arc<dyn Surface>> {
    Ok(Arc::new(FlatTorus::new(get(p, "side", 8.0))?))
}

fn conformal_torus(p: &Params) -> Result<Arc<dyn Surface>> {
    Ok(Arc::new(ConformalTorus::seeded(
        get(p, "side", 8.0),
        get(p, "eta", 0.05),
        get(p, "modes", 2.0) as usize,
        get(p, "perturbation_seed", 1.0) as u64,
    )?))
}

fn sphere(p: &Params) -> Result<Arc<dyn Surface>> {
    Ok(Arc::new(Sphere::new(get(p, "radius", 4.0))?))
}

fn ellipsoid(p: &Params) -> Result<Arc<dyn Surface>> {
    let axes = if p.contains_key("a") {
        [require(p, "a")?, require(p, "b")?, require(p, "c")?]
    } else {
        let r = get(p, "radius", 4.0);
        let e = get(p, "eta", 0.05);
        [r * (1.0 + e), r, r * (1.0 - e)]
    };
    Ok(Arc::new(Ellipsoid::new(axes)?))
}

fn graph_quadratic(p: &Params) -> Result<Arc<dyn Surface>> {
    Ok(Arc::new(QuadraticGraph::new(
        get(p, "a", 0.1),
        get(p, "b", 0.1),
        get(p, "c", 0.0),
        get(p, "half_width", 2.0),
    )?))
}

/// Name-to-constructor table for surface models.
#[derive(Clone)]
pub struct SurfaceRegistry {
    entries: BTreeMap<&'static str, Constructor>,
}

impl Default for SurfaceRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register("flat_torus", flat_torus);
        r.register("conformal_torus", conformal_torus);
        r.register("sphere", sphere);
        r.register("ellipsoid", ellipsoid);
        r.register("graph_quadratic", graph_quadratic);
        r
    }
}

impl SurfaceRegistry {
    pub fn register(&mut self, name: &'static str, ctor: Constructor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, name: &str, params: &Params) -> Result<Arc<dyn Surface>> {
        let ctor = self.entries.get(name).ok_or_else(|| GeomError::Unknown {
            kind: "surface model",
            name: name.to_string(),
        })?;
        ctor(params)
    }
}

/// Builds a model from the default registry.
pub fn build(name: &str, params: &Params) -> Result<Arc<dyn Surface>> {
    SurfaceRegistry::default().build(name, params)
}
