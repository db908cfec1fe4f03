//! Per-vertex proximal subproblems and the lookup table built from them.
//!
//! For a vertex `i`, candidate label `c` and penalty `rho` the subproblem is
//!
//! ```text
//! min_beta  l(c; beta) + rho/2 ||beta - target_i||^2,   target_i = K_i alpha + lambda_i / rho
//! ```

mod oracle;

pub use oracle::prox_oracle;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{eval_loss, LossKind, ProblemInstance, ScoreMatrix};

/// Center and penalty of one proximal subproblem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxTarget {
    pub target: Vec<f64>,
    pub rho: f64,
}

impl ProxTarget {
    pub fn new(target: Vec<f64>, rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidInput(format!("rho must be > 0, got {rho}")));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("prox target has non-finite entries".into()));
        }
        Ok(ProxTarget { target, rho })
    }
}

/// `l(label; beta) + rho/2 ||beta - target||^2`.
pub fn objective(loss: LossKind, label: usize, beta: &[f64], target: &[f64], rho: f64) -> f64 {
    let dist: f64 = beta.iter().zip(target).map(|(b, t)| (b - t) * (b - t)).sum();
    eval_loss(loss, label, beta) + 0.5 * rho * dist
}

/// Exact minimizer of the proximal subproblem and its value.
pub fn prox_step(loss: LossKind, label: usize, target: &ProxTarget) -> Result<(Vec<f64>, f64)> {
    let n = target.target.len();
    if label >= n {
        return Err(Error::Dimension(format!("label {label} out of range for {n} scores")));
    }
    let mut beta = vec![0.0; n];
    prox_into(loss, label, &target.target, target.rho, &mut beta)?;
    let value = objective(loss, label, &beta, &target.target, target.rho);
    Ok((beta, value))
}

/// Writes the minimizer into `out`; no validation.
pub(crate) fn prox_into(loss: LossKind, label: usize, z: &[f64], rho: f64, out: &mut [f64]) -> Result<()> {
    match loss {
        LossKind::OneVsAllHinge => {
            hinge_prox(label, z, rho, out);
            Ok(())
        }
        LossKind::CrammerSinger => {
            crammer_singer_prox(label, z, rho, out);
            Ok(())
        }
        LossKind::Softmax => softmax_prox(label, z, rho, out),
    }
}

fn hinge_prox(label: usize, z: &[f64], rho: f64, out: &mut [f64]) {
    let step = 1.0 / rho;
    for (j, (o, &zj)) in out.iter_mut().zip(z).enumerate() {
        let s = if j == label { 1.0 } else { -1.0 };
        let p = s * zj;
        let t = if p > 1.0 {
            p
        } else if p >= 1.0 - step {
            1.0
        } else {
            p + step
        };
        *o = s * t;
    }
}

/// Euclidean projection onto the probability simplex by variable fixing:
/// each round drops the coordinates that the current threshold pushes below
/// zero, so at most `n` rounds are needed.
pub(crate) fn project_simplex(v: &[f64], out: &mut [f64]) {
    let n = v.len();
    let mut free = vec![true; n];
    let mut n_free = n;
    let mut theta;
    loop {
        let sum: f64 = v.iter().zip(&free).filter(|(_, &f)| f).map(|(x, _)| x).sum();
        theta = (sum - 1.0) / n_free as f64;
        let mut dropped = false;
        for j in 0..n {
            if free[j] && v[j] - theta <= 0.0 && n_free > 1 {
                free[j] = false;
                n_free -= 1;
                dropped = true;
            }
        }
        if !dropped {
            break;
        }
    }
    for j in 0..n {
        out[j] = if free[j] { (v[j] - theta).max(0.0) } else { 0.0 };
    }
}

fn crammer_singer_prox(label: usize, z: &[f64], rho: f64, out: &mut [f64]) {
    // dual variable a lives on the simplex: a = P(e_y + rho (z + Delta)),
    // primal recovery beta = z - (a - e_y) / rho
    let v: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(j, &zj)| if j == label { 1.0 + rho * zj } else { rho * (zj + 1.0) })
        .collect();
    let mut a = vec![0.0; z.len()];
    project_simplex(&v, &mut a);
    for j in 0..z.len() {
        let e = if j == label { 1.0 } else { 0.0 };
        out[j] = z[j] - (a[j] - e) / rho;
    }
}

/// `exp(r)` where `r + exp(r) = a` (the Wright omega function).
fn wright_omega(a: f64) -> f64 {
    let mut r = if a <= 1.0 { a } else { a.ln() };
    for _ in 0..100 {
        let e = r.exp();
        let step = (r + e - a) / (1.0 + e);
        r -= step;
        if step.abs() <= 1e-15 * (1.0 + r.abs()) {
            break;
        }
    }
    r.exp()
}

pub(crate) const SOFTMAX_TOL: f64 = 1e-12;
const SOFTMAX_MAX_NEWTON: usize = 50;

fn softmax_prox(label: usize, z: &[f64], rho: f64, out: &mut [f64]) -> Result<()> {
    // stationarity: p = softmax(beta), beta = z + (e_y - p)/rho.
    // With w = z + e_y/rho and c = log-partition, p_j = rho * omega(w_j - c - ln rho);
    // the scalar c is fixed by sum_j p_j = 1.
    let n = z.len();
    let w: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(j, &zj)| if j == label { zj + 1.0 / rho } else { zj })
        .collect();
    let w_max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ln_rho = rho.ln();
    let probs = |c: f64, p: &mut [f64]| -> f64 {
        let mut sum = 0.0;
        for (pj, &wj) in p.iter_mut().zip(&w) {
            *pj = rho * wright_omega(wj - c - ln_rho);
            sum += *pj;
        }
        sum - 1.0
    };

    let mut lo = w_max - 1.0 / rho;
    let mut hi = w_max + (n as f64).ln() - 1.0 / (n as f64 * rho);
    let mut p = vec![0.0; n];
    let mut c = 0.5 * (lo + hi);
    let mut converged = false;
    for _ in 0..SOFTMAX_MAX_NEWTON {
        let g = probs(c, &mut p);
        if g.abs() <= SOFTMAX_TOL {
            converged = true;
            break;
        }
        // g is decreasing in c
        if g > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let slope: f64 = -p.iter().map(|&pj| pj * rho / (rho + pj)).sum::<f64>();
        let newton = c - g / slope;
        c = if slope < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * (1.0 + c.abs()) {
            let g = probs(c, &mut p);
            converged = g.abs() <= 1e3 * SOFTMAX_TOL;
            break;
        }
    }
    if !converged {
        let g = probs(c, &mut p);
        if g.abs() > SOFTMAX_TOL {
            return Err(Error::Numeric(format!(
                "softmax prox did not converge: label={label}, rho={rho}, target={z:?}, residual={g:e}"
            )));
        }
    }
    // normalize away the last rounding so the recovered beta is exactly stationary
    let sum: f64 = p.iter().sum();
    for j in 0..n {
        let e = if j == label { 1.0 } else { 0.0 };
        out[j] = z[j] + (e - p[j] / sum) / rho;
    }
    Ok(())
}

/// Prox values `u` and minimizers `B` for every vertex and candidate label.
#[derive(Clone, Debug, PartialEq)]
pub struct LookupTable {
    u: DMatrix<f64>,
    /// `beta[(i * L + c) * L + j]` is entry `j` of the minimizer for vertex `i`, label `c`.
    beta: Vec<f64>,
    targets: DMatrix<f64>,
    rho: f64,
}

impl LookupTable {
    pub fn n_vertices(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.u.ncols()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The `|V| x |L|` unary matrix.
    pub fn unaries(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn value(&self, vertex: usize, label: usize) -> f64 {
        self.u[(vertex, label)]
    }

    pub fn beta_row(&self, vertex: usize, label: usize) -> &[f64] {
        let l = self.n_labels();
        let start = (vertex * l + label) * l;
        &self.beta[start..start + l]
    }

    /// `K_i alpha + lambda_i / rho`.
    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    /// Assembles `beta` from the rows selected by `labels`.
    pub fn select(&self, labels: &[usize]) -> ScoreMatrix {
        let l = self.n_labels();
        DMatrix::from_fn(self.n_vertices(), l, |i, j| self.beta_row(i, labels[i])[j])
    }

    /// `sum_i u[i][labels_i]`.
    pub fn unary_sum(&self, labels: &[usize]) -> f64 {
        labels.iter().enumerate().map(|(i, &c)| self.u[(i, c)]).sum()
    }
}

/// Builds the table for the state `(alpha, lambda)` at penalty `rho`.
pub fn build_lookup_table(
    instance: &ProblemInstance,
    alpha: &ScoreMatrix,
    lambda: &ScoreMatrix,
    rho: f64,
) -> Result<LookupTable> {
    instance.check_scores(alpha, "alpha")?;
    instance.check_scores(lambda, "lambda")?;
    let k_alpha = instance.kernel().matvec(alpha)?;
    lookup_from_kalpha(instance.loss(), &k_alpha, lambda, rho)
}

/// Same as [`build_lookup_table`] with `K alpha` supplied.
pub(crate) fn lookup_from_kalpha(
    loss: LossKind,
    k_alpha: &ScoreMatrix,
    lambda: &ScoreMatrix,
    rho: f64,
) -> Result<LookupTable> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidInput(format!("rho must be > 0, got {rho}")));
    }
    let targets = k_alpha + lambda / rho;
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite prox target".into()));
    }
    let n = targets.nrows();
    let l = targets.ncols();
    let mut u_rows = vec![0.0; n * l];
    let mut beta = vec![0.0; n * l * l];
    u_rows
        .par_chunks_mut(l.max(1))
        .zip(beta.par_chunks_mut((l * l).max(1)))
        .enumerate()
        .try_for_each(|(i, (u_row, b_block))| -> Result<()> {
            let z: Vec<f64> = targets.row(i).iter().copied().collect();
            for c in 0..l {
                let out = &mut b_block[c * l..(c + 1) * l];
                prox_into(loss, c, &z, rho, out)?;
                u_row[c] = objective(loss, c, out, &z, rho);
            }
            Ok(())
        })?;
    Ok(LookupTable {
        u: DMatrix::from_row_slice(n, l, &u_rows),
        beta,
        targets,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step(loss: LossKind, label: usize, z: &[f64], rho: f64) -> (Vec<f64>, f64) {
        prox_step(loss, label, &ProxTarget::new(z.to_vec(), rho).unwrap()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn hinge_examples() {
        let (b, v) = step(LossKind::OneVsAllHinge, 0, &[2.0, -2.0], 1.0);
        assert_eq!(b, vec![2.0, -2.0]);
        assert_eq!(v, 0.0);
        let (b, v) = step(LossKind::OneVsAllHinge, 0, &[0.0, 0.0], 1.0);
        assert_eq!(b, vec![1.0, -1.0]);
        assert!((v - 1.0).abs() < 1e-15);
        let (b, v) = step(LossKind::OneVsAllHinge, 0, &[-3.0, 0.0], 1.0);
        assert_eq!(b, vec![-2.0, -1.0]);
        assert!((v - 4.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_example() {
        let (b, _) = step(LossKind::Softmax, 0, &[0.0, 0.0], 1.0);
        // root of sigma(2b) = 1 - b, by bisection on the scalar equation
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let g = 1.0 / (1.0 + (-2.0 * mid).exp()) - (1.0 - mid);
            if g > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((b[0] - lo).abs() < 1e-12);
        assert!((b[1] + lo).abs() < 1e-12);
        assert!((lo - 0.3367).abs() < 1e-3);
    }

    #[test]
    fn crammer_singer_slack_target_is_fixed_point() {
        let (b, v) = step(LossKind::CrammerSinger, 0, &[5.0, 0.0, 0.0], 1.0);
        assert!(close(&b, &[5.0, 0.0, 0.0], 1e-15));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn simplex_projection() {
        let mut out = vec![0.0; 3];
        project_simplex(&[0.2, 0.3, 0.5], &mut out);
        assert!(close(&out, &[0.2, 0.3, 0.5], 1e-15));
        project_simplex(&[5.0, 0.0, 0.0], &mut out);
        assert!(close(&out, &[1.0, 0.0, 0.0], 1e-15));
        project_simplex(&[1.0, 1.0, -4.0], &mut out);
        assert!(close(&out, &[0.5, 0.5, 0.0], 1e-15));
    }

    #[test]
    fn softmax_extreme_targets() {
        for &rho in &[1e-3, 0.01, 1.0, 100.0, 1e4] {
            for &scale in &[1.0, 1e2, 1e4] {
                let z = [scale, -scale, 0.5 * scale, 0.0];
                for label in 0..4 {
                    let (b, v) = step(LossKind::Softmax, label, &z, rho);
                    assert!(v.is_finite() && b.iter().all(|x| x.is_finite()));
                }
            }
        }
    }

    #[test]
    fn table_rows_match_direct_calls() {
        let inst = ProblemInstance::new(
            crate::kernel::KernelMatrix::identity(1),
            3,
            LossKind::Softmax,
            vec![],
            1.0,
        )
        .unwrap();
        let alpha = DMatrix::from_row_slice(1, 3, &[0.3, -1.0, 2.0]);
        let lambda = DMatrix::from_row_slice(1, 3, &[0.1, 0.2, -0.3]);
        let rho = 0.7;
        let table = build_lookup_table(&inst, &alpha, &lambda, rho).unwrap();
        let z: Vec<f64> = (&alpha + &lambda / rho).iter().copied().collect();
        for c in 0..3 {
            let (b, v) = step(LossKind::Softmax, c, &z, rho);
            assert_eq!(table.value(0, c), v);
            assert_eq!(table.beta_row(0, c), &b[..]);
        }
    }

    #[test]
    fn table_values_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for loss in LossKind::ALL {
            let k = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
            let kernel = crate::kernel::KernelMatrix::dense(&k * k.transpose(), 0.1).unwrap();
            let inst = ProblemInstance::new(kernel, 4, loss, vec![], 0.5).unwrap();
            let alpha = DMatrix::from_fn(6, 4, |_, _| rng.gen_range(-2.0..2.0));
            let lambda = DMatrix::from_fn(6, 4, |_, _| rng.gen_range(-2.0..2.0));
            let rho = rng.gen_range(0.05..20.0);
            let table = build_lookup_table(&inst, &alpha, &lambda, rho).unwrap();
            for i in 0..6 {
                let z: Vec<f64> = table.targets().row(i).iter().copied().collect();
                for c in 0..4 {
                    let v = objective(loss, c, table.beta_row(i, c), &z, rho);
                    assert!((v - table.value(i, c)).abs() <= 1e-10);
                    // never worse than staying at the target
                    assert!(table.value(i, c) <= objective(loss, c, &z, &z, rho) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_state_gives_identical_rows() {
        let inst = ProblemInstance::new(
            crate::kernel::KernelMatrix::identity(5),
            3,
            LossKind::OneVsAllHinge,
            vec![],
            1.0,
        )
        .unwrap();
        let zero = inst.zeros();
        let table = build_lookup_table(&inst, &zero, &zero, 2.0).unwrap();
        for c in 0..3 {
            let (b, v) = step(LossKind::OneVsAllHinge, c, &[0.0; 3], 2.0);
            for i in 0..5 {
                assert_eq!(table.value(i, c), v);
                assert_eq!(table.beta_row(i, c), &b[..]);
            }
        }
    }

    #[test]
    fn rejects_bad_rho() {
        assert!(ProxTarget::new(vec![0.0], 0.0).is_err());
        assert!(ProxTarget::new(vec![f64::NAN], 1.0).is_err());
    }
}
