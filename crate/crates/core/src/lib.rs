//! Numerical construction of bi-Lipschitz maps between Riemannian surfaces
//! that are close in the Gromov-Hausdorff sense.
//!
//! The pipeline: build an epsilon-net, pair it with a near-isometric copy in
//! the target, form local charts `exp_w . L . log_v`, and glue them with
//! a partition of unity and weighted Karcher means. Each stage comes with
//! numerical checks of its quantitative bounds.

pub mod charts;
pub mod correspondence;
pub mod error;
pub mod estimates;
pub mod flow;
pub mod geometry;
pub mod gluing;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod margin;
pub mod nets;
pub mod parallel;
pub mod partition;
pub mod rng;
pub mod spatial;

pub use error::{GeomError, Result};
