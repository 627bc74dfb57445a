//! Fixed-step RK4 integration of the geodesic equation with transported
//! vector fields or Jacobi fields carried along.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::manifold::{Mat2, Point, Surface, Vec2};

/// Arc length per step is at most this, and every path has at least
/// [`MIN_STEPS`] steps.
pub const MAX_ARC_STEP: f64 = 1e-2;
pub const MIN_STEPS: usize = 100;
const MAX_STEPS: usize = 10_000_000;

pub fn speed(s: &dyn Surface, p: &Point, v: &Vec2) -> f64 {
    v.dot(&(s.metric(p) * v)).max(0.0).sqrt()
}

pub fn step_count(length: f64) -> Result<usize> {
    if !length.is_finite() || length < 0.0 {
        return Err(GeomError::StepUnderflow);
    }
    let n = ((length / MAX_ARC_STEP).ceil() as usize).max(MIN_STEPS);
    if n > MAX_STEPS {
        return Err(GeomError::StepUnderflow);
    }
    Ok(n)
}

/// Canonical representative of `p` and the Jacobian carrying vectors along.
pub fn canonicalize(s: &dyn Surface, p: &Point) -> Result<(Point, Mat2)> {
    let q = s.canonical(*p);
    if q.chart == p.chart {
        return Ok((q, Mat2::identity()));
    }
    let (_, jac) = s
        .transition(p, q.chart)
        .ok_or_else(|| GeomError::ChartTransition { at: p.to_string() })?;
    Ok((q, jac))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum FieldLaw {
    /// `w' = -Gamma(u, w)` for every field.
    Parallel,
    /// Fields come in pairs `(J, DJ)` solving the covariant Jacobi system.
    Jacobi,
}

#[derive(Clone, Copy)]
struct State<const F: usize> {
    x: Vec2,
    u: Vec2,
    f: [Vec2; F],
}

impl<const F: usize> State<F> {
    fn axpy(&self, h: f64, d: &State<F>) -> Self {
        let mut f = self.f;
        for (a, b) in f.iter_mut().zip(&d.f) {
            *a += b * h;
        }
        Self {
            x: self.x + d.x * h,
            u: self.u + d.u * h,
            f,
        }
    }
}

fn rhs<const F: usize>(s: &dyn Surface, chart: u8, st: &State<F>, law: FieldLaw) -> State<F> {
    let p = Point { chart, coords: st.x };
    let gam = s.christoffel(&p);
    let u = st.u;
    let mut f = [Vec2::zeros(); F];
    match law {
        FieldLaw::Parallel => {
            for (out, w) in f.iter_mut().zip(&st.f) {
                *out = -gam.contract(&u, w);
            }
        }
        FieldLaw::Jacobi => {
            let g = s.metric(&p);
            let k = s.gaussian_curvature(&p);
            let gu = g * u;
            let uu = u.dot(&gu);
            for pair in 0..F / 2 {
                let j = st.f[2 * pair];
                let dj = st.f[2 * pair + 1];
                // R(J, u) u = K (<u, u> J - <J, u> u)
                let curv = (j * uu - u * j.dot(&gu)) * k;
                f[2 * pair] = dj - gam.contract(&u, &j);
                f[2 * pair + 1] = -curv - gam.contract(&u, &dj);
            }
        }
    }
    State {
        x: u,
        u: -gam.contract(&u, &u),
        f,
    }
}

/// Node of a dense path: parameter, point (chart of the integrator at that
/// time), velocity and carried fields in that chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node<const F: usize> {
    pub t: f64,
    pub point: Point,
    pub velocity: Vec2,
    #[serde(with = "serde_fields")]
    pub fields: [Vec2; F],
}

mod serde_fields {
    use super::Vec2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const F: usize>(v: &[Vec2; F], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const F: usize>(d: D) -> Result<[Vec2; F], D::Error> {
        let v: Vec<Vec2> = Vec::deserialize(d)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("wrong number of carried fields"))
    }
}

struct Run<const F: usize> {
    end: Node<F>,
    nodes: Vec<Node<F>>,
}

fn integrate<const F: usize>(
    s: &dyn Surface,
    p: &Point,
    v: &Vec2,
    duration: f64,
    fields: [Vec2; F],
    law: FieldLaw,
    dense: bool,
) -> Result<Run<F>> {
    let length = speed(s, p, v) * duration.abs();
    let n = step_count(length)?;
    let h = duration / n as f64;
    let mut chart = p.chart;
    let mut st = State {
        x: p.coords,
        u: *v,
        f: fields,
    };
    let mut nodes = Vec::new();
    let node = |chart: u8, st: &State<F>, t: f64| Node {
        t,
        point: Point { chart, coords: st.x },
        velocity: st.u,
        fields: st.f,
    };
    if dense {
        nodes.reserve(n + 1);
        nodes.push(node(chart, &st, 0.0));
    }
    if length > 0.0 || F > 0 {
        for i in 0..n {
            let k1 = rhs(s, chart, &st, law);
            let k2 = rhs(s, chart, &st.axpy(0.5 * h, &k1), law);
            let k3 = rhs(s, chart, &st.axpy(0.5 * h, &k2), law);
            let k4 = rhs(s, chart, &st.axpy(h, &k3), law);
            let mut next = st;
            next.x += (k1.x + (k2.x + k3.x) * 2.0 + k4.x) * (h / 6.0);
            next.u += (k1.u + (k2.u + k3.u) * 2.0 + k4.u) * (h / 6.0);
            for m in 0..F {
                next.f[m] += (k1.f[m] + (k2.f[m] + k3.f[m]) * 2.0 + k4.f[m]) * (h / 6.0);
            }
            if !next.x.iter().chain(next.u.iter()).all(|c| c.is_finite()) {
                return Err(GeomError::StepUnderflow);
            }
            st = next;
            let here = Point { chart, coords: st.x };
            if let Some(c) = s.rechart(&here) {
                let (q, jac) = s
                    .transition(&here, c)
                    .ok_or_else(|| GeomError::ChartTransition { at: here.to_string() })?;
                chart = c;
                st.x = q.coords;
                st.u = jac * st.u;
                for w in st.f.iter_mut() {
                    *w = jac * *w;
                }
            }
            if dense {
                nodes.push(node(chart, &st, (i + 1) as f64 * h));
            }
        }
    }
    Ok(Run {
        end: node(chart, &st, duration),
        nodes,
    })
}

fn finish<const F: usize>(s: &dyn Surface, end: Node<F>) -> Result<Node<F>> {
    let (q, jac) = canonicalize(s, &end.point)?;
    Ok(Node {
        t: end.t,
        point: q,
        velocity: jac * end.velocity,
        fields: end.fields.map(|w| jac * w),
    })
}

/// A geodesic sampled at the RK4 nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geodesic {
    pub start: Point,
    pub initial_velocity: Vec2,
    pub duration: f64,
    pub nodes: Vec<Node<0>>,
}

impl Geodesic {
    /// Canonical endpoint.
    pub fn end(&self, s: &dyn Surface) -> Result<Point> {
        Ok(s.canonical(self.nodes.last().map(|n| n.point).unwrap_or(self.start)))
    }

    /// Largest relative deviation of the speed from its initial value.
    pub fn speed_drift(&self, s: &dyn Surface) -> f64 {
        let s0 = speed(s, &self.start, &self.initial_velocity);
        if s0 == 0.0 {
            return 0.0;
        }
        self.nodes
            .iter()
            .map(|n| (speed(s, &n.point, &n.velocity) - s0).abs() / s0)
            .fold(0.0, f64::max)
    }
}

pub fn geodesic_ivp(s: &dyn Surface, p: &Point, v: &Vec2, duration: f64) -> Result<Geodesic> {
    let run = integrate::<0>(s, p, v, duration, [], FieldLaw::Parallel, true)?;
    Ok(Geodesic {
        start: *p,
        initial_velocity: *v,
        duration,
        nodes: run.nodes,
    })
}

/// Endpoint of the geodesic with initial velocity `v` at unit time.
pub fn exp(s: &dyn Surface, p: &Point, v: &Vec2) -> Result<Point> {
    let run = integrate::<0>(s, p, v, 1.0, [], FieldLaw::Parallel, false)?;
    Ok(s.canonical(run.end.point))
}

/// Parallel transport of `w` along `t -> exp(p, t v)`, `t in [0, 1]`.
/// Returns the canonical endpoint, its velocity and the transported vectors.
pub fn transport<const F: usize>(
    s: &dyn Surface,
    p: &Point,
    v: &Vec2,
    w: [Vec2; F],
) -> Result<(Point, Vec2, [Vec2; F])> {
    let end = finish(s, integrate(s, p, v, 1.0, w, FieldLaw::Parallel, false)?.end)?;
    Ok((end.point, end.velocity, end.fields))
}

/// Parallel transport of `v0` along a previously integrated path, on the same grid.
pub fn parallel_transport(s: &dyn Surface, path: &Geodesic, v0: &Vec2) -> Result<Vec<Node<1>>> {
    let run = integrate(
        s,
        &path.start,
        &path.initial_velocity,
        path.duration,
        [*v0],
        FieldLaw::Parallel,
        true,
    )?;
    Ok(run.nodes)
}

/// Jacobi fields along `t -> exp(p, t v)`, `t in [0, 1]`, each given by
/// `(J(0), DJ(0))`. Returns the canonical endpoint and `(J(1), DJ(1))` there.
pub fn jacobi_end<const F: usize>(
    s: &dyn Surface,
    p: &Point,
    v: &Vec2,
    data: [Vec2; F],
) -> Result<(Point, Vec2, [Vec2; F])> {
    debug_assert!(F % 2 == 0);
    let end = finish(s, integrate(s, p, v, 1.0, data, FieldLaw::Jacobi, false)?.end)?;
    Ok((end.point, end.velocity, end.fields))
}

/// A Jacobi field with dense values; `nodes[k].fields = [J, DJ]` in the chart of the node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobiData {
    pub geodesic: Geodesic,
    pub j0: Vec2,
    pub j0dot: Vec2,
    pub nodes: Vec<Node<2>>,
}

impl JacobiData {
    pub fn norm_at(&self, s: &dyn Surface, k: usize) -> (f64, f64) {
        let n = &self.nodes[k];
        (speed(s, &n.point, &n.fields[0]), speed(s, &n.point, &n.fields[1]))
    }

    /// Largest residual of `D^2 J + R(J, u) u = 0` at interior nodes, with
    /// `D^2 J` from fourth-order central differences of the stored `DJ`
    /// (same-chart stencils only).
    pub fn residual(&self, s: &dyn Surface) -> f64 {
        let mut worst = 0.0f64;
        for w in self.nodes.windows(5) {
            if w.iter().any(|n| n.point.chart != w[2].point.chart) {
                continue;
            }
            let b = &w[2];
            let h = (w[4].t - w[0].t) / 4.0;
            let d = |n: &Node<2>| n.fields[1];
            let deriv = (d(&w[0]) - d(&w[1]) * 8.0 + d(&w[3]) * 8.0 - d(&w[4])) / (12.0 * h);
            let gam = s.christoffel(&b.point);
            let u = b.velocity;
            let (j, dj) = (b.fields[0], b.fields[1]);
            let ddj = deriv + gam.contract(&u, &dj);
            let g = s.metric(&b.point);
            let k = s.gaussian_curvature(&b.point);
            let gu = g * u;
            let curv = (j * u.dot(&gu) - u * j.dot(&gu)) * k;
            worst = worst.max(speed(s, &b.point, &(ddj + curv)));
        }
        worst
    }
}

pub fn jacobi_field(s: &dyn Surface, geodesic: &Geodesic, j0: &Vec2, j0dot: &Vec2) -> Result<JacobiData> {
    let run = integrate(
        s,
        &geodesic.start,
        &geodesic.initial_velocity,
        geodesic.duration,
        [*j0, *j0dot],
        FieldLaw::Jacobi,
        true,
    )?;
    Ok(JacobiData {
        geodesic: geodesic.clone(),
        j0: *j0,
        j0dot: *j0dot,
        nodes: run.nodes,
    })
}

/// Jacobi field on the unit-time geodesic `t -> exp(p, t v)` with prescribed
/// `J(0)` and `J(1)` (the latter in the canonical chart of the endpoint).
///
/// Solved by superposition of basis solutions; returns `DJ(0)`.
pub fn jacobi_boundary(s: &dyn Surface, p: &Point, v: &Vec2, j0: &Vec2, j1: &Vec2) -> Result<Vec2> {
    let e1 = Vec2::new(1.0, 0.0);
    let e2 = Vec2::new(0.0, 1.0);
    let (_, _, f) = jacobi_end(s, p, v, [Vec2::zeros(), e1, Vec2::zeros(), e2, *j0, Vec2::zeros()])?;
    let a = Mat2::from_columns(&[f[0], f[2]]);
    let inv = a.try_inverse().ok_or(GeomError::ConjugatePoints)?;
    Ok(inv * (j1 - f[4]))
}
