use std::sync::Arc;

use rand::RngCore;

use super::{Cell, Christoffel, ExactGeodesics, Mat2, Point, Surface, Vec2};
use crate::error::{GeomError, Result};

/// `(M, lambda^2 g)` sharing the coordinates of the wrapped model.
#[derive(Debug, Clone)]
pub struct Rescaled {
    inner: Arc<dyn Surface>,
    lambda: f64,
}

impl Rescaled {
    pub fn inner(&self) -> &Arc<dyn Surface> {
        &self.inner
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

pub fn rescale(inner: Arc<dyn Surface>, lambda: f64) -> Result<Arc<dyn Surface>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(GeomError::InvalidParameter(format!("rescale factor {lambda}")));
    }
    Ok(Arc::new(Rescaled { inner, lambda }))
}

impl Surface for Rescaled {
    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn metric(&self, p: &Point) -> Mat2 {
        self.inner.metric(p) * (self.lambda * self.lambda)
    }
    fn christoffel(&self, p: &Point) -> Christoffel {
        self.inner.christoffel(p)
    }
    fn gaussian_curvature(&self, p: &Point) -> f64 {
        self.inner.gaussian_curvature(p) / (self.lambda * self.lambda)
    }
    fn canonical(&self, p: Point) -> Point {
        self.inner.canonical(p)
    }
    fn chart_count(&self) -> u8 {
        self.inner.chart_count()
    }
    fn transition(&self, p: &Point, chart: u8) -> Option<(Point, Mat2)> {
        self.inner.transition(p, chart)
    }
    fn rechart(&self, p: &Point) -> Option<u8> {
        self.inner.rechart(p)
    }
    fn offset(&self, from: &Point, to: &Point) -> Option<Vec2> {
        self.inner.offset(from, to)
    }
    fn injectivity_radius(&self) -> f64 {
        self.inner.injectivity_radius() * self.lambda
    }
    fn index_key(&self, p: &Point) -> [f64; 4] {
        self.inner.index_key(p).map(|x| x * self.lambda)
    }
    fn index_lipschitz(&self) -> f64 {
        self.inner.index_lipschitz()
    }
    fn sample(&self, rng: &mut dyn RngCore) -> Point {
        self.inner.sample(rng)
    }
    fn grid_cells(&self, spacing: f64) -> Vec<Cell> {
        self.inner.grid_cells(spacing / self.lambda)
    }
    fn max_metric_scale(&self) -> f64 {
        self.inner.max_metric_scale() * self.lambda
    }
    fn area(&self) -> f64 {
        self.inner.area() * self.lambda * self.lambda
    }
    fn exact(&self) -> Option<&dyn ExactGeodesics> {
        self.inner.exact()
    }
    fn scale_factor(&self) -> f64 {
        self.inner.scale_factor() * self.lambda
    }
}
