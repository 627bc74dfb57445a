//! Finite-dimensional Euclidean estimates.
//!
//! Bases are stored as the columns of a square matrix. All inner products are
//! the standard Euclidean ones; tangent vectors must be expressed in an
//! orthonormal frame before they reach this module.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::margin::{BoundKind, MarginReport};
use crate::rng;

pub const MAX_DIMENSION: usize = 4;

/// An ordered basis of `R^n`, one vector per column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    vectors: DMatrix<f64>,
}

impl Basis {
    pub fn from_columns(vectors: DMatrix<f64>) -> Result<Self> {
        let n = vectors.nrows();
        if vectors.ncols() != n {
            return Err(GeomError::DimensionMismatch {
                expected: n,
                got: vectors.ncols(),
            });
        }
        if !(2..=MAX_DIMENSION).contains(&n) {
            return Err(GeomError::InvalidParameter(format!(
                "basis dimension {n} outside 2..={MAX_DIMENSION}"
            )));
        }
        let b = Self { vectors };
        let det = gram_matrix(&b).determinant();
        if !(det > 0.0) {
            return Err(GeomError::SingularBasis { det });
        }
        Ok(b)
    }

    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let n = vectors.len();
        for v in vectors {
            if v.len() != n {
                return Err(GeomError::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        Self::from_columns(DMatrix::from_fn(n, n, |i, j| vectors[j][i]))
    }

    pub fn standard(n: usize) -> Self {
        Self {
            vectors: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.vectors
    }
}

/// A linear map between two `n`-dimensional Euclidean spaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    pub matrix: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(GeomError::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(GeomError::InvalidParameter("non-finite matrix entry".into()));
        }
        Ok(Self { matrix })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
        }
    }
}

/// Gram matrix of inner products; exactly symmetric.
pub fn gram_matrix(b: &Basis) -> DMatrix<f64> {
    let n = b.dim();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = b.vectors.column(i).dot(&b.vectors.column(j));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `max_{i,j} |<b_i, b_j> - delta_ij|`.
pub fn eps_orthonormality(b: &Basis) -> f64 {
    let g = gram_matrix(b);
    let n = b.dim();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let kron = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - kron).abs());
        }
    }
    worst
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone().singular_values().iter().copied().collect()
}

pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).into_iter().fold(0.0, f64::max)
}

/// Operator-norm distance to the nearest orthogonal map, `max_i |sigma_i - 1|`.
///
/// The polar factor of `L` attains the minimum, so no search over isometries
/// is needed. Rank-deficient maps are allowed (their zero singular values count).
pub fn distance_to_isometry(l: &LinearMap) -> f64 {
    singular_values(&l.matrix)
        .into_iter()
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

/// The unique `L` with `L e_k = f_k`, i.e. `F E^{-1}`.
pub fn linear_extension(e: &Basis, f: &Basis) -> Result<LinearMap> {
    if e.dim() != f.dim() {
        return Err(GeomError::DimensionMismatch {
            expected: e.dim(),
            got: f.dim(),
        });
    }
    let inv = e.vectors.clone().try_inverse().ok_or(GeomError::SingularBasis {
        det: e.vectors.determinant(),
    })?;
    LinearMap::new(&f.vectors * inv)
}

pub(crate) fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    loop {
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let (q, r) = (qr.q(), qr.r());
        if (0..n).any(|i| r[(i, i)].abs() < 1e-8) {
            continue;
        }
        // fix the sign ambiguity so the distribution is Haar
        let mut q = q;
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        return q;
    }
}

/// Result of the e-orthonormal lemma check; both ratios must stay below 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthonormalLemmaReport {
    /// `||L|| / (2 sqrt(n) delta)` for maps that shrink the basis below `delta`.
    pub norm_bound: MarginReport,
    /// `dist(L, O(n)) / (8 n sqrt(n) delta)` for maps that nearly preserve the Gram matrix.
    pub isometry_bound: MarginReport,
}

impl OrthonormalLemmaReport {
    pub fn passed(&self) -> bool {
        self.norm_bound.passed() && self.isometry_bound.passed()
    }
}

const MAX_ATTEMPTS: usize = 10_000;

fn check_lemma_preconditions(n: usize, eps: f64, delta: f64) -> Result<()> {
    if !(2..=MAX_DIMENSION).contains(&n) {
        return Err(GeomError::InvalidParameter(format!("dimension {n}")));
    }
    if !(eps > 0.0 && eps < 1.0 / (2.0 * n as f64)) {
        return Err(GeomError::InvalidParameter(format!(
            "eps = {eps} must lie in (0, 1/(2n))"
        )));
    }
    let nf = n as f64;
    if !(delta > 0.0 && 8.0 * nf * nf.sqrt() * delta < 1.0) {
        return Err(GeomError::InvalidParameter(format!(
            "delta = {delta} violates 8 n sqrt(n) delta < 1"
        )));
    }
    Ok(())
}

/// Random eps-orthonormal basis: an orthonormal basis with rejected uniform perturbations.
pub(crate) fn random_eps_orthonormal<R: Rng + ?Sized>(n: usize, eps: f64, rng: &mut R) -> Result<Basis> {
    for _ in 0..MAX_ATTEMPTS {
        let q = random_orthogonal(n, rng);
        let t = eps * rng.random::<f64>() / 2.0;
        let p = DMatrix::from_fn(n, n, |_, _| rng.random_range(-t..=t));
        let b = Basis { vectors: q + p };
        if eps_orthonormality(&b) < eps && gram_matrix(&b).determinant() > 0.0 {
            return Ok(b);
        }
    }
    Err(GeomError::GenerationFailed { attempts: MAX_ATTEMPTS })
}

fn gram_defect(l: &DMatrix<f64>, xi: &DMatrix<f64>) -> f64 {
    let img = l * xi;
    let gl = img.transpose() * &img;
    let gx = xi.transpose() * xi;
    (gl - gx).amax()
}

/// Map `Q (I + s P)` with `s` pushed (by bisection) to the edge of the Gram hypothesis.
fn near_isometry_instance<R: Rng + ?Sized>(xi: &DMatrix<f64>, delta: f64, rng: &mut R) -> DMatrix<f64> {
    let n = xi.nrows();
    let q = random_orthogonal(n, rng);
    let p = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let eye = DMatrix::<f64>::identity(n, n);
    let build = |s: f64| &q * (&eye + &p * s);
    let (mut lo, mut hi) = (0.0, 1.0);
    while gram_defect(&build(hi), xi) < delta {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if gram_defect(&build(mid), xi) < delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u: f64 = rng.random::<f64>().sqrt();
    build(lo * u.max(1e-3))
}

/// Map sending each `xi_i` to a random vector of norm below `delta`.
fn shrinking_instance<R: Rng + ?Sized>(xi: &DMatrix<f64>, delta: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let n = xi.nrows();
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let dir = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let len = delta * (1.0 - 1e-9) * rng.random::<f64>().sqrt();
        let v = dir.normalize() * len;
        a.set_column(j, &v.column(0));
    }
    let inv = xi
        .clone()
        .try_inverse()
        .ok_or(GeomError::SingularBasis { det: xi.determinant() })?;
    Ok(a * inv)
}

/// Randomized check of both halves of the e-orthonormal lemma.
pub fn check_lemma_e_orthonormal(
    trials: usize,
    n: usize,
    eps: f64,
    delta: f64,
    seed: u64,
) -> Result<OrthonormalLemmaReport> {
    check_lemma_preconditions(n, eps, delta)?;
    let nf = n as f64;
    let norm_bound = 2.0 * nf.sqrt() * delta;
    let iso_bound = 8.0 * nf * nf.sqrt() * delta;
    let mut first = MarginReport::new("lemma_e_orthonormal/norm", BoundKind::Explicit);
    let mut second = MarginReport::new("lemma_e_orthonormal/isometry", BoundKind::Explicit);
    for t in 0..trials {
        let mut r = rng::stream(seed, "lemma-e-orthonormal", t as u64);
        let xi = random_eps_orthonormal(n, eps, &mut r)?;
        let xm = xi.matrix();

        let l1 = shrinking_instance(xm, delta, &mut r)?;
        debug_assert!((0..n).all(|j| (&l1 * xm).column(j).norm() < delta));
        let ratio = operator_norm(&l1) / norm_bound;
        first.record(t, ratio, || format!("||L|| = {}", operator_norm(&l1)));

        let l2 = near_isometry_instance(xm, delta, &mut r);
        if gram_defect(&l2, xm) >= delta {
            return Err(GeomError::GenerationFailed { attempts: 60 });
        }
        let d = distance_to_isometry(&LinearMap { matrix: l2 });
        second.record(t, d / iso_bound, || format!("distance {d}"));
    }
    first.set_detail("bound", norm_bound);
    second.set_detail("bound", iso_bound);
    Ok(OrthonormalLemmaReport {
        norm_bound: first,
        isometry_bound: second,
    })
}

/// Hill-climbing search for the largest isometry defect among maps satisfying
/// the Gram hypothesis. Returns the best ratio to `8 n sqrt(n) delta` found.
pub fn adversarial_isometry_search(
    n: usize,
    eps: f64,
    delta: f64,
    restarts: usize,
    steps: usize,
    seed: u64,
) -> Result<MarginReport> {
    check_lemma_preconditions(n, eps, delta)?;
    let nf = n as f64;
    let bound = 8.0 * nf * nf.sqrt() * delta;
    let mut report = MarginReport::new("lemma_e_orthonormal/adversarial", BoundKind::Explicit);
    for k in 0..restarts {
        let mut r = rng::stream(seed, "lemma-e-adversarial", k as u64);
        let mut xi = random_eps_orthonormal(n, eps, &mut r)?.vectors;
        let mut l = near_isometry_instance(&xi, delta, &mut r);
        let mut best = distance_to_isometry(&LinearMap { matrix: l.clone() });
        let mut step = delta / 4.0;
        for _ in 0..steps {
            let dl = DMatrix::from_fn(n, n, |_, _| r.random_range(-step..=step));
            let dx = DMatrix::from_fn(n, n, |_, _| r.random_range(-step..=step));
            let cand_l = &l + dl;
            let cand_x = &xi + dx;
            let cand_basis = Basis {
                vectors: cand_x.clone(),
            };
            if eps_orthonormality(&cand_basis) >= eps || gram_defect(&cand_l, &cand_x) >= delta {
                step *= 0.98;
                continue;
            }
            let d = distance_to_isometry(&LinearMap { matrix: cand_l.clone() });
            if d > best {
                best = d;
                l = cand_l;
                xi = cand_x;
            }
        }
        report.record(k, best / bound, || format!("distance {best}"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn gram_of_standard_is_identity() {
        assert_eq!(gram_matrix(&Basis::standard(3)), DMatrix::identity(3, 3));
        assert_eq!(eps_orthonormality(&Basis::standard(2)), 0.0);
    }

    #[test]
    fn gram_of_sixty_degree_pair() {
        let t = PI / 3.0;
        let b = Basis::from_vectors(&[vec![1.0, 0.0], vec![t.cos(), t.sin()]]).unwrap();
        let g = gram_matrix(&b);
        assert!((g[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((g[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((g[(1, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(g[(0, 1)], g[(1, 0)]);
    }

    #[test]
    fn gram_matches_direct_dot_products() {
        let mut r = rng::seeded(1);
        for _ in 0..50 {
            let n = r.random_range(2..=4);
            let vs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| r.random_range(-2.0..2.0)).collect())
                .collect();
            let Ok(b) = Basis::from_vectors(&vs) else { continue };
            let g = gram_matrix(&b);
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += vs[i][k] * vs[j][k];
                    }
                    assert!((g[(i, j)] - s).abs() <= 1e-13 * (1.0 + s.abs()));
                }
            }
        }
    }

    #[test]
    fn eps_orthonormality_single_offdiagonal() {
        let b = Basis::from_vectors(&[vec![1.0, 0.0], vec![0.1, 1.0]]).unwrap();
        // <b1,b2> = 0.1, |b2|^2 - 1 = 0.01
        assert!((eps_orthonormality(&b) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn eps_orthonormality_entrywise_perturbation_bound() {
        let mut r = rng::seeded(2);
        for _ in 0..200 {
            let n = r.random_range(2..=4);
            let t = r.random_range(0.0..0.1);
            let vs: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|k| if i == k { 1.0 } else { 0.0 } + r.random_range(-t..=t))
                        .collect()
                })
                .collect();
            let b = Basis::from_vectors(&vs).unwrap();
            // exhaustive entry scan
            let mut worst = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..n).map(|k| vs[i][k] * vs[j][k]).sum();
                    let kron = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((dot - kron).abs());
                }
            }
            let e = eps_orthonormality(&b);
            assert!((e - worst).abs() < 1e-14);
            assert!(e <= (2.0 + t) * t * n as f64);
        }
    }

    #[test]
    fn rejects_mismatched_or_singular_bases() {
        assert!(matches!(
            Basis::from_vectors(&[vec![1.0, 0.0], vec![0.0]]),
            Err(GeomError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            Basis::from_vectors(&[vec![1.0, 2.0], vec![2.0, 4.0]]),
            Err(GeomError::SingularBasis { .. })
        ));
    }

    #[test]
    fn identity_is_an_isometry() {
        assert_eq!(distance_to_isometry(&LinearMap::identity(3)), 0.0);
    }

    #[test]
    fn rotated_stretch_distance() {
        let a = 0.05;
        let th = 0.7f64;
        let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let l = LinearMap::new(&rot * DMatrix::from_row_slice(2, 2, &[1.0 + a, 0.0, 0.0, 1.0])).unwrap();
        let d = distance_to_isometry(&l);
        assert!((d - a).abs() < 1e-12);
        // sampled orthogonal maps never beat the polar optimum
        let mut r = rng::seeded(3);
        let mut best = f64::INFINITY;
        for _ in 0..10_000 {
            let q = random_orthogonal(2, &mut r);
            best = best.min(operator_norm(&(&l.matrix - q)));
        }
        assert!(best >= d - 1e-12);
        assert!(best < d + 1e-2);
    }

    #[test]
    fn rank_deficient_map_uses_zero_singular_value() {
        let l = LinearMap::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((distance_to_isometry(&l) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shrinking_map_norm_bound() {
        let mut r = rng::seeded(4);
        for n in 2..=4 {
            let eps = 0.9 / (2.0 * n as f64);
            for _ in 0..200 {
                let xi = random_eps_orthonormal(n, eps, &mut r).unwrap();
                let delta = 0.01;
                let l = shrinking_instance(xi.matrix(), delta, &mut r).unwrap();
                assert!(operator_norm(&l) < 2.0 * (n as f64).sqrt() * delta);
            }
        }
    }

    #[test]
    fn lemma_check_orthogonal_map_has_zero_ratio() {
        let mut r = rng::seeded(5);
        let xi = random_eps_orthonormal(2, 0.1, &mut r).unwrap();
        let q = random_orthogonal(2, &mut r);
        assert!(gram_defect(&q, xi.matrix()) < 1e-14);
        assert!(distance_to_isometry(&LinearMap::new(q).unwrap()) < 1e-14);
    }

    #[test]
    fn lemma_check_two_dimensions() {
        let rep = check_lemma_e_orthonormal(1000, 2, 0.1, 0.01, 11).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.isometry_bound.trials, 1000);
        assert!(rep.isometry_bound.worst_ratio < 1.0);
    }

    #[test]
    fn adversarial_three_dimensions_stays_below_bound() {
        let rep = adversarial_isometry_search(3, 0.15, 0.02, 20, 300, 12).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.worst_ratio > 0.0);
    }

    #[test]
    fn lemma_preconditions_are_enforced() {
        assert!(check_lemma_e_orthonormal(1, 2, 0.3, 0.01, 0).is_err());
        assert!(check_lemma_e_orthonormal(1, 2, 0.1, 0.1, 0).is_err());
    }

    #[test]
    fn linear_extension_cases() {
        let e = Basis::standard(2);
        assert_eq!(linear_extension(&e, &e).unwrap(), LinearMap::identity(2));
        let f = Basis::from_columns(DMatrix::identity(2, 2) * 2.0).unwrap();
        assert_eq!(linear_extension(&e, &f).unwrap().matrix, DMatrix::identity(2, 2) * 2.0);
    }

    #[test]
    fn eps_orthonormality_of_standard_basis_is_zero() {
        for n in 2..=4 {
            assert_eq!(eps_orthonormality(&Basis::standard(n)), 0.0);
        }
    }

    proptest! {
        #[test]
        fn isometry_distance_is_orthogonally_invariant(seed in 0u64..10_000, n in 2usize..=4) {
            let mut r = rng::seeded(seed);
            let m = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.5f64..1.5));
            let q1 = random_orthogonal(n, &mut r);
            let q2 = random_orthogonal(n, &mut r);
            let d0 = distance_to_isometry(&LinearMap { matrix: m.clone() });
            let d1 = distance_to_isometry(&LinearMap { matrix: &q1 * &m * &q2 });
            prop_assert!((d0 - d1).abs() < 1e-10);
        }

        #[test]
        fn linear_extension_reproduces_targets(seed in 0u64..10_000, n in 2usize..=4) {
            let mut r = rng::seeded(seed);
            let e = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0f64..1.0));
            let f = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0f64..1.0));
            prop_assume!(e.determinant().abs() > 1e-3);
            let eb = Basis { vectors: e.clone() };
            let fb = Basis { vectors: f.clone() };
            let l = linear_extension(&eb, &fb).unwrap();
            let img = &l.matrix * &e;
            for k in 0..n {
                let rel = (img.column(k) - f.column(k)).norm() / f.column(k).norm().max(1e-300);
                // conditioning of E enters the residual
                let cond = {
                    let s = singular_values(&e);
                    s.iter().cloned().fold(0.0, f64::max) / s.iter().cloned().fold(f64::INFINITY, f64::min)
                };
                prop_assert!(rel <= 1e-12 * cond.max(1.0));
            }
        }
    }
}
