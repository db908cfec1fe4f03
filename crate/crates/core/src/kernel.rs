//! Kernel matrices: construction, products, spectral bounds and Nyström
//! low-rank factors.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, CgFailure};

/// How kernel entries are produced from vertex features.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    /// `K = X X^T` with one feature row per vertex.
    Linear,
    /// `K_ij = exp(-||x_i - x_j||^2 / (2 sigma^2))`.
    Rbf { sigma: f64 },
    /// A user-supplied symmetric positive semidefinite matrix.
    Precomputed(DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelRepr {
    /// Full matrix, diagonal shift already applied.
    Dense(DMatrix<f64>),
    /// `K = G G^T + gamma I`; the product is never formed.
    LowRank(DMatrix<f64>),
}

/// A symmetric kernel matrix with its diagonal shift `gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    repr: KernelRepr,
    gamma: f64,
}

/// Largest dimension handled by a full dense eigensolve.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

/// Tolerated absolute asymmetry of precomputed kernels (scaled by `max(1, max |K_ij|)`).
pub const SYMMETRY_TOL: f64 = 1e-8;

impl KernelMatrix {
    /// Wraps a dense symmetric matrix and adds `gamma I`.
    pub fn dense(mut k: DMatrix<f64>, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if !k.is_square() {
            return Err(Error::Dimension(format!(
                "kernel must be square, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("kernel has non-finite entries".into()));
        }
        let asym = max_asymmetry(&k);
        let scale = k.amax().max(1.0);
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Asymmetric(asym));
        }
        if asym > 0.0 {
            k = (&k + k.transpose()) * 0.5;
        }
        for i in 0..k.nrows() {
            k[(i, i)] += gamma;
        }
        Ok(KernelMatrix {
            repr: KernelRepr::Dense(k),
            gamma,
        })
    }

    /// `K = G G^T + gamma I` for a `|V| x l` factor.
    pub fn low_rank(g: DMatrix<f64>, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if g.ncols() > g.nrows() {
            return Err(Error::Dimension(format!(
                "low-rank factor has rank {} > dimension {}",
                g.ncols(),
                g.nrows()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("factor has non-finite entries".into()));
        }
        Ok(KernelMatrix {
            repr: KernelRepr::LowRank(g),
            gamma,
        })
    }

    pub fn identity(n: usize) -> Self {
        KernelMatrix {
            repr: KernelRepr::Dense(DMatrix::identity(n, n)),
            gamma: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            KernelRepr::Dense(k) => k.nrows(),
            KernelRepr::LowRank(g) => g.nrows(),
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn repr(&self) -> &KernelRepr {
        &self.repr
    }

    pub fn is_low_rank(&self) -> bool {
        matches!(self.repr, KernelRepr::LowRank(_))
    }

    /// `K v` for a matrix of column vectors.
    pub fn matvec(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if v.nrows() != self.dim() {
            return Err(Error::Dimension(format!(
                "kernel is {n}x{n} but operand has {} rows",
                v.nrows(),
                n = self.dim()
            )));
        }
        Ok(self.apply(v))
    }

    /// `K v` without the dimension check.
    pub(crate) fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.repr {
            KernelRepr::Dense(k) => k * v,
            KernelRepr::LowRank(g) => {
                let mut out = g * (g.transpose() * v);
                if self.gamma != 0.0 {
                    out += v * self.gamma;
                }
                out
            }
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match &self.repr {
            KernelRepr::Dense(k) => k.diagonal(),
            KernelRepr::LowRank(g) => {
                DVector::from_iterator(g.nrows(), g.row_iter().map(|r| r.norm_squared() + self.gamma))
            }
        }
    }

    /// Materializes the full matrix (tests and small problems only).
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            KernelRepr::Dense(k) => k.clone(),
            KernelRepr::LowRank(g) => {
                let mut k = g * g.transpose();
                for i in 0..k.nrows() {
                    k[(i, i)] += self.gamma;
                }
                k
            }
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("gamma must be >= 0, got {gamma}")))
    }
}

fn max_asymmetry(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((k[(i, j)] - k[(j, i)]).abs());
        }
    }
    worst
}

fn squared_distance(features: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..features.ncols())
        .map(|c| {
            let d = features[(i, c)] - features[(j, c)];
            d * d
        })
        .sum()
}

/// Entry `k(x_i, x_j)` for feature-based specs.
fn entry(features: &DMatrix<f64>, spec: &KernelSpec, i: usize, j: usize) -> f64 {
    match spec {
        KernelSpec::Linear => (0..features.ncols()).map(|c| features[(i, c)] * features[(j, c)]).sum(),
        KernelSpec::Rbf { sigma } => (-squared_distance(features, i, j) / (2.0 * sigma * sigma)).exp(),
        KernelSpec::Precomputed(k) => k[(i, j)],
    }
}

fn check_spec(features: &DMatrix<f64>, spec: &KernelSpec) -> Result<usize> {
    match spec {
        KernelSpec::Rbf { sigma } if !(sigma.is_finite() && *sigma > 0.0) => {
            Err(Error::InvalidInput(format!("rbf sigma must be > 0, got {sigma}")))
        }
        KernelSpec::Precomputed(k) => {
            if !k.is_square() {
                return Err(Error::Dimension("precomputed kernel must be square".into()));
            }
            Ok(k.nrows())
        }
        _ => {
            if features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("features have non-finite entries".into()));
            }
            Ok(features.nrows())
        }
    }
}

/// Builds a dense kernel from features and adds `gamma I`.
///
/// Rows are filled in parallel; every entry is computed by the same scalar
/// expression, so the result does not depend on the thread count.
pub fn build_kernel(features: &DMatrix<f64>, spec: &KernelSpec, gamma: f64) -> Result<KernelMatrix> {
    let n = check_spec(features, spec)?;
    if let KernelSpec::Precomputed(k) = spec {
        return KernelMatrix::dense(k.clone(), gamma);
    }
    if let KernelSpec::Linear = spec {
        return KernelMatrix::dense(features * features.transpose(), gamma);
    }
    let mut rows = vec![0.0; n * n];
    rows.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, out) in row.iter_mut().enumerate() {
            // evaluate each pair in canonical order so K is exactly symmetric
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            *out = entry(features, spec, a, b);
        }
    });
    KernelMatrix::dense(DMatrix::from_row_slice(n, n, &rows), gamma)
}

/// Constants of the convergence condition for `f(alpha) = nu <alpha, K alpha>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralBounds {
    /// `sigma_min(K^T K) = lambda_min(K)^2`.
    pub sigma_min_ktk: f64,
    /// Lipschitz modulus of the regularizer gradient, `2 nu lambda_max(K)`.
    pub lip_l: f64,
    /// Semiconvexity constant; zero since `f` is convex for PSD `K`.
    pub semiconvexity_m: f64,
    pub eigen_min: f64,
    pub eigen_max: f64,
}

/// Computes the convergence constants of the penalty condition.
pub fn spectral_bounds(kernel: &KernelMatrix, nu: f64) -> Result<SpectralBounds> {
    let (eigen_min, eigen_max) = extreme_eigenvalues(kernel)?;
    let n = kernel.dim() as f64;
    if eigen_min <= n * f64::EPSILON * eigen_max.max(f64::MIN_POSITIVE) || eigen_min <= 0.0 {
        return Err(Error::NotSurjective {
            min_eigenvalue: eigen_min,
        });
    }
    Ok(SpectralBounds {
        sigma_min_ktk: eigen_min * eigen_min,
        lip_l: 2.0 * nu * eigen_max,
        semiconvexity_m: 0.0,
        eigen_min,
        eigen_max,
    })
}

/// Smallest and largest eigenvalue of the (shifted) kernel.
pub fn extreme_eigenvalues(kernel: &KernelMatrix) -> Result<(f64, f64)> {
    let n = kernel.dim();
    if n == 0 {
        return Err(Error::InvalidInput("empty kernel".into()));
    }
    match kernel.repr() {
        KernelRepr::LowRank(g) => {
            let gram = g.transpose() * g;
            let eig = SymmetricEigen::new(gram).eigenvalues;
            let top = eig.max().max(0.0);
            let bottom = if g.ncols() < n { 0.0 } else { eig.min().max(0.0) };
            Ok((bottom + kernel.gamma(), top + kernel.gamma()))
        }
        KernelRepr::Dense(k) if n <= DENSE_EIGEN_LIMIT => {
            let eig = SymmetricEigen::new(k.clone()).eigenvalues;
            Ok((eig.min(), eig.max()))
        }
        KernelRepr::Dense(_) => iterative_extremes(kernel),
    }
}

/// Full eigendecomposition of a dense kernel, used to precondition the
/// shifted systems `(a I + b K) x = r`.
#[derive(Clone, Debug)]
pub struct KernelEigen {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl KernelEigen {
    /// `None` for low-rank kernels and dense kernels above [`DENSE_EIGEN_LIMIT`].
    pub fn new(kernel: &KernelMatrix) -> Option<Self> {
        match kernel.repr() {
            KernelRepr::Dense(k) if kernel.dim() <= DENSE_EIGEN_LIMIT => {
                let eig = SymmetricEigen::new(k.clone());
                Some(KernelEigen {
                    vectors: eig.eigenvectors,
                    values: eig.eigenvalues,
                })
            }
            _ => None,
        }
    }

    /// `(a I + b K)^{-1} r`, with eigenvalues clamped at zero.
    pub fn solve_shifted(&self, a: f64, b: f64, r: &DMatrix<f64>) -> DMatrix<f64> {
        let mut coeffs = self.vectors.tr_mul(r);
        for (i, mut row) in coeffs.row_iter_mut().enumerate() {
            row /= a + b * self.values[i].max(0.0);
        }
        &self.vectors * coeffs
    }
}

/// Power iteration for the top eigenvalue and inverse iteration (CG inner
/// solves) for the bottom one.
fn iterative_extremes(kernel: &KernelMatrix) -> Result<(f64, f64)> {
    let n = kernel.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start: DMatrix<f64> = DMatrix::from_fn(n, 1, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));

    let mut v = &start / start.norm();
    let mut top = 0.0;
    for _ in 0..2000 {
        let w = kernel.apply(&v);
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        v = w / norm;
        if (next - top).abs() <= 1e-10 * next.abs() {
            top = next;
            break;
        }
        top = next;
    }

    let mut v = &start / start.norm();
    let mut bottom = f64::INFINITY;
    for _ in 0..500 {
        let mut w = v.clone();
        match conjugate_gradient(|x| kernel.apply(x), &v, &mut w, 1e-12, 10 * n) {
            Ok(_) => {}
            Err(CgFailure::Breakdown { .. }) | Err(CgFailure::NotConverged(_)) => {
                return Err(Error::NotSurjective { min_eigenvalue: 0.0 })
            }
        }
        let norm = w.norm();
        let estimate = 1.0 / v.dot(&w);
        v = w / norm;
        if (estimate - bottom).abs() <= 1e-9 * estimate.abs() {
            bottom = estimate;
            break;
        }
        bottom = estimate;
    }
    Ok((bottom, top))
}

/// Relative floor under which landmark-block eigenvalues are discarded.
pub const NYSTROM_EIGEN_FLOOR: f64 = 1e-10;

/// Nyström factor `G = K[:, S] W^{-1/2}` from `landmarks` uniformly drawn
/// vertices, returned as a low-rank kernel with diagonal shift `gamma`.
pub fn nystrom_factor(
    features: &DMatrix<f64>,
    spec: &KernelSpec,
    landmarks: usize,
    gamma: f64,
    seed: u64,
) -> Result<KernelMatrix> {
    let n = check_spec(features, spec)?;
    if landmarks == 0 || landmarks > n {
        return Err(Error::InvalidInput(format!(
            "landmark count must be in 1..={n}, got {landmarks}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n, landmarks).into_vec();
    chosen.sort_unstable();

    let mut cols = vec![0.0; n * landmarks];
    cols.par_chunks_mut(landmarks).enumerate().for_each(|(i, row)| {
        for (c, &j) in chosen.iter().enumerate() {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            row[c] = entry(features, spec, a, b);
        }
    });
    let c = DMatrix::from_row_slice(n, landmarks, &cols);
    let w = DMatrix::from_fn(landmarks, landmarks, |a, b| c[(chosen[a], b)]);
    let eig = SymmetricEigen::new(w);
    let top = eig.eigenvalues.max();
    let floor = NYSTROM_EIGEN_FLOOR * top.max(f64::MIN_POSITIVE);
    let mut inv_sqrt = DVector::zeros(landmarks);
    let mut dropped = 0;
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > floor {
            inv_sqrt[k] = 1.0 / ev.sqrt();
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        warn!("nystrom: landmark block is rank deficient, {dropped} of {landmarks} eigenvalues floored");
    }
    let q = &eig.eigenvectors;
    let w_inv_sqrt = q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose();
    KernelMatrix::low_rank(c * w_inv_sqrt, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn rbf_diagonal_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 10, 3);
        for sigma in [0.1, 0.5477, 3.0] {
            let k = build_kernel(&x, &KernelSpec::Rbf { sigma }, 0.0).unwrap().to_dense();
            for i in 0..10 {
                assert_eq!(k[(i, i)], 1.0);
            }
        }
    }

    #[test]
    fn linear_identity_features() {
        let x = DMatrix::identity(3, 3);
        let k = build_kernel(&x, &KernelSpec::Linear, 0.0).unwrap();
        assert_eq!(k.to_dense(), DMatrix::identity(3, 3));
    }

    #[test]
    fn rbf_off_diagonal_matches_scalar_formula() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let sigma: f64 = 0.5477;
        let k = build_kernel(&x, &KernelSpec::Rbf { sigma }, 0.0).unwrap().to_dense();
        let expected = (-1.0 / (2.0 * sigma * sigma)).exp();
        assert!((k[(0, 1)] - expected).abs() < 1e-15);
        assert!((k[(0, 1)] - 0.18887).abs() < 1e-4);
    }

    #[test]
    fn gamma_shifts_diagonal() {
        let x = DMatrix::identity(3, 3);
        let k = build_kernel(&x, &KernelSpec::Linear, 0.25).unwrap();
        assert_eq!(k.diagonal(), DVector::from_element(3, 1.25));
    }

    #[test]
    fn asymmetric_precomputed_rejected() {
        let mut k = DMatrix::identity(3, 3);
        k[(0, 1)] = 1e-6;
        let err = build_kernel(&DMatrix::zeros(3, 0), &KernelSpec::Precomputed(k), 0.0);
        assert!(matches!(err, Err(Error::Asymmetric(_))));
    }

    #[test]
    fn matvec_identity_and_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_matrix(&mut rng, 4, 2);
        assert_eq!(KernelMatrix::identity(4).matvec(&v).unwrap(), v);

        let g = random_matrix(&mut rng, 5, 1);
        let k = KernelMatrix::low_rank(g.clone(), 0.0).unwrap();
        let out = k.matvec(&g).unwrap();
        let expected = &g * g.norm_squared();
        assert!((out - expected).norm() < 1e-14);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let v = DMatrix::zeros(3, 1);
        assert!(matches!(KernelMatrix::identity(4).matvec(&v), Err(Error::Dimension(_))));
    }

    #[test]
    fn low_rank_matches_densified() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..30 {
            let n = 6 + trial % 7;
            let l = 1 + trial % 4;
            let g = random_matrix(&mut rng, n, l);
            let gamma = if trial % 2 == 0 { 0.0 } else { 0.3 };
            let k = KernelMatrix::low_rank(g.clone(), gamma).unwrap();
            let dense = &g * g.transpose() + DMatrix::identity(n, n) * gamma;
            let v = random_matrix(&mut rng, n, 3);
            let a = k.matvec(&v).unwrap();
            let b = &dense * &v;
            assert!((&a - &b).norm() <= 1e-10 * b.norm().max(1e-300));
        }
    }

    #[test]
    fn matvec_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 8, 2);
        for k in [
            build_kernel(&x, &KernelSpec::Rbf { sigma: 0.7 }, 0.1).unwrap(),
            nystrom_factor(&x, &KernelSpec::Rbf { sigma: 0.7 }, 4, 0.1, 9).unwrap(),
        ] {
            let v = random_matrix(&mut rng, 8, 2);
            let w = random_matrix(&mut rng, 8, 2);
            let (a, b) = (1.7, -0.3);
            let lhs = k.matvec(&(&v * a + &w * b)).unwrap();
            let rhs = k.matvec(&v).unwrap() * a + k.matvec(&w).unwrap() * b;
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn spectral_bounds_examples() {
        let b = spectral_bounds(&KernelMatrix::identity(3), 1.0).unwrap();
        assert!((b.sigma_min_ktk - 1.0).abs() < 1e-12);
        assert!((b.lip_l - 2.0).abs() < 1e-12);
        assert_eq!(b.semiconvexity_m, 0.0);

        let k = KernelMatrix::dense(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])), 0.0).unwrap();
        let b = spectral_bounds(&k, 0.5).unwrap();
        assert!((b.sigma_min_ktk - 4.0).abs() < 1e-12);
        assert!((b.lip_l - 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_kernel_is_not_surjective() {
        let g = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let k = KernelMatrix::low_rank(g.clone(), 0.0).unwrap();
        assert!(matches!(spectral_bounds(&k, 1.0), Err(Error::NotSurjective { .. })));
        let dense = KernelMatrix::dense(&g * g.transpose(), 0.0).unwrap();
        assert!(matches!(spectral_bounds(&dense, 1.0), Err(Error::NotSurjective { .. })));
        let shifted = KernelMatrix::low_rank(g, 0.5).unwrap();
        let b = spectral_bounds(&shifted, 1.0).unwrap();
        assert!((b.eigen_min - 0.5).abs() < 1e-12);
        assert!((b.eigen_max - 14.5).abs() < 1e-10);
    }

    #[test]
    fn shift_raises_min_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 40, 3);
        let spec = KernelSpec::Rbf { sigma: 0.8 };
        let base = build_kernel(&x, &spec, 0.0).unwrap();
        let (min0, _) = extreme_eigenvalues(&base).unwrap();
        for gamma in [1e-3, 0.1, 1.0] {
            let (min1, _) = extreme_eigenvalues(&build_kernel(&x, &spec, gamma).unwrap()).unwrap();
            assert!(min1 >= min0 + gamma - 1e-10);
        }
    }

    #[test]
    fn iterative_extremes_agree_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_matrix(&mut rng, 20, 20);
        let k = KernelMatrix::dense(&a * a.transpose(), 0.5).unwrap();
        let (lo, hi) = extreme_eigenvalues(&k).unwrap();
        let (lo2, hi2) = iterative_extremes(&k).unwrap();
        assert!((lo - lo2).abs() <= 1e-6 * lo);
        assert!((hi - hi2).abs() <= 1e-6 * hi);
    }

    #[test]
    fn nystrom_full_landmarks_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 12, 2) * 3.0;
        let spec = KernelSpec::Rbf { sigma: 1.0 };
        let dense = build_kernel(&x, &spec, 0.0).unwrap().to_dense();
        let approx = nystrom_factor(&x, &spec, 12, 0.0, 1).unwrap().to_dense();
        assert!((&approx - &dense).norm() <= 1e-6 * dense.norm());
    }

    #[test]
    fn nystrom_single_landmark_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 10, 2);
        let k = nystrom_factor(&x, &KernelSpec::Rbf { sigma: 1.0 }, 1, 0.0, 3).unwrap();
        match k.repr() {
            KernelRepr::LowRank(g) => assert_eq!(g.ncols(), 1),
            _ => panic!("expected low-rank kernel"),
        }
        let eig = SymmetricEigen::new(k.to_dense()).eigenvalues;
        let nonzero = eig.iter().filter(|&&e| e.abs() > 1e-10).count();
        assert_eq!(nonzero, 1);
    }
}
