//! Conjugate gradient shared by the kernel and consensus code.

use nalgebra::DMatrix;

/// Result of a conjugate-gradient solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// Largest per-column `||b - A x|| / ||b||` (absolute residual for zero columns).
    pub relative_residual: f64,
}

/// Failure modes of [`conjugate_gradient`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CgFailure {
    /// `p^T A p <= 0`: the operator is not positive definite along `p`.
    Breakdown { iteration: usize, curvature: f64 },
    /// Iteration budget exhausted before reaching the tolerance.
    NotConverged(CgStats),
}

/// Solves `A X = B` column by column for a symmetric positive definite
/// operator, starting from the contents of `x`.
///
/// Every column runs its own CG recurrence; the operator is applied to all
/// active search directions at once so dense kernels hit a matrix-matrix
/// product instead of one matrix-vector product per column.
pub fn conjugate_gradient<F>(
    apply: F,
    b: &DMatrix<f64>,
    x: &mut DMatrix<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgStats, CgFailure>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    preconditioned_conjugate_gradient(apply, |r: &DMatrix<f64>| r.clone(), b, x, rel_tol, max_iter)
}

/// [`conjugate_gradient`] with a symmetric positive definite preconditioner
/// `precond(r) ~ A^{-1} r`. Convergence is still judged on the unpreconditioned
/// residual `||b - A x||`.
pub fn preconditioned_conjugate_gradient<F, P>(
    apply: F,
    precond: P,
    b: &DMatrix<f64>,
    x: &mut DMatrix<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgStats, CgFailure>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
    P: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let cols = b.ncols();
    let scale: Vec<f64> = b
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut r = b - apply(x);
    let mut active: Vec<bool> = r
        .column_iter()
        .zip(&scale)
        .map(|(c, s)| c.norm() > rel_tol * s)
        .collect();
    let mut z = precond(&r);
    let mut rz: Vec<f64> = (0..cols).map(|j| r.column(j).dot(&z.column(j))).collect();
    let mut p = z.clone();
    for j in 0..cols {
        if !active[j] {
            p.column_mut(j).fill(0.0);
        }
    }
    let mut iterations = 0;
    while active.iter().any(|&a| a) {
        if iterations == max_iter {
            let relative_residual = worst_residual(&apply, b, x, &scale);
            return Err(CgFailure::NotConverged(CgStats {
                iterations,
                relative_residual,
            }));
        }
        iterations += 1;
        let ap = apply(&p);
        let mut restart = false;
        for j in 0..cols {
            if !active[j] {
                continue;
            }
            let curvature = p.column(j).dot(&ap.column(j));
            if !(curvature > 0.0) {
                return Err(CgFailure::Breakdown {
                    iteration: iterations,
                    curvature,
                });
            }
            let step = rz[j] / curvature;
            x.column_mut(j).axpy(step, &p.column(j), 1.0);
            r.column_mut(j).axpy(-step, &ap.column(j), 1.0);
            if r.column(j).norm() <= rel_tol * scale[j] {
                // recurrences drift; the true residual decides below
                restart = true;
                active[j] = false;
                p.column_mut(j).fill(0.0);
            }
        }
        z = precond(&r);
        for j in 0..cols {
            if !active[j] {
                continue;
            }
            let rz_next = r.column(j).dot(&z.column(j));
            let beta = rz_next / rz[j];
            let zj = z.column(j).clone_owned();
            let mut pj = p.column_mut(j);
            pj *= beta;
            pj += &zj;
            rz[j] = rz_next;
        }
        if restart {
            let true_r = b - apply(x);
            let mut reopened = false;
            for j in 0..cols {
                if !active[j] && true_r.column(j).norm() > rel_tol * scale[j] {
                    active[j] = true;
                    reopened = true;
                    r.set_column(j, &true_r.column(j));
                }
            }
            if reopened {
                z = precond(&r);
                for j in 0..cols {
                    if active[j] && p.column(j).iter().all(|&v| v == 0.0) {
                        p.set_column(j, &z.column(j));
                        rz[j] = r.column(j).dot(&z.column(j));
                    }
                }
            }
        }
    }
    Ok(CgStats {
        iterations,
        relative_residual: worst_residual(&apply, b, x, &scale),
    })
}

fn worst_residual<F>(apply: &F, b: &DMatrix<f64>, x: &DMatrix<f64>, scale: &[f64]) -> f64
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let r = b - apply(x);
    r.column_iter()
        .zip(scale)
        .map(|(c, s)| c.norm() / s)
        .fold(0.0, f64::max)
}
