//! Residuals of the discrete-continuous critical-point conditions.

use crate::model::{LossKind, ProblemInstance, ScoreMatrix, SolverState};
use crate::prox::project_simplex;

/// Margins closer than this to a hinge kink are treated as on the kink.
const KINK_TOL: f64 = 1e-9;

/// Scaled residuals of the three conditions at a state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalResiduals {
    /// Distance of `lambda_i` to the subdifferential of `l(y_i; .)` at `beta_i`,
    /// over `1 + ||lambda||`.
    pub subgradient: f64,
    /// `||grad f(alpha) + K lambda|| / (1 + ||grad f(alpha)|| + ||K lambda||)`.
    pub stationarity: f64,
    /// `||K alpha - beta|| / (1 + ||beta||)`.
    pub primal: f64,
}

impl CriticalResiduals {
    pub fn max(&self) -> f64 {
        self.subgradient.max(self.stationarity).max(self.primal)
    }
}

/// Squared distance from `lambda` to the subdifferential at `beta`.
fn subgradient_distance_sq(loss: LossKind, label: usize, beta: &[f64], lambda: &[f64]) -> f64 {
    let n = beta.len();
    match loss {
        LossKind::OneVsAllHinge => (0..n)
            .map(|j| {
                let s = if j == label { 1.0 } else { -1.0 };
                let margin = 1.0 - s * beta[j];
                // subdifferential of max(0, 1 - s b) is {-s}, {0} or the segment between
                let (lo, hi) = if margin > KINK_TOL {
                    (-s, -s)
                } else if margin < -KINK_TOL {
                    (0.0, 0.0)
                } else {
                    ((-s).min(0.0), (-s).max(0.0))
                };
                let d = lambda[j] - lambda[j].clamp(lo, hi);
                d * d
            })
            .sum(),
        LossKind::CrammerSinger => {
            // lambda + e_y must be a distribution supported on the active set
            let scores: Vec<f64> = (0..n)
                .map(|j| if j == label { beta[j] } else { 1.0 + beta[j] })
                .collect();
            let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let active: Vec<usize> = (0..n)
                .filter(|&j| scores[j] >= top - KINK_TOL * (1.0 + top.abs()))
                .collect();
            let q: Vec<f64> = (0..n).map(|j| lambda[j] + if j == label { 1.0 } else { 0.0 }).collect();
            let sub: Vec<f64> = active.iter().map(|&j| q[j]).collect();
            let mut proj = vec![0.0; sub.len()];
            project_simplex(&sub, &mut proj);
            let mut dist = 0.0;
            for j in 0..n {
                let target = active.iter().position(|&a| a == j).map_or(0.0, |k| proj[k]);
                dist += (q[j] - target) * (q[j] - target);
            }
            dist
        }
        LossKind::Softmax => {
            let max = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = beta.iter().map(|b| (b - max).exp()).sum();
            (0..n)
                .map(|j| {
                    let g = (beta[j] - max).exp() / total - if j == label { 1.0 } else { 0.0 };
                    (lambda[j] - g) * (lambda[j] - g)
                })
                .sum()
        }
    }
}

/// Evaluates the critical-point conditions at `state`; `k_alpha` is `K alpha`.
pub fn critical_point_residuals(
    instance: &ProblemInstance,
    state: &SolverState,
    k_alpha: &ScoreMatrix,
) -> CriticalResiduals {
    let l = instance.n_labels();
    let mut beta = vec![0.0; l];
    let mut lambda = vec![0.0; l];
    let mut dist = 0.0;
    for i in 0..instance.n_vertices() {
        for j in 0..l {
            beta[j] = state.beta[(i, j)];
            lambda[j] = state.lambda[(i, j)];
        }
        dist += subgradient_distance_sq(instance.loss(), state.y[i], &beta, &lambda);
    }
    let grad_f = k_alpha * (2.0 * instance.nu());
    let k_lambda = instance.kernel().apply(&state.lambda);
    CriticalResiduals {
        subgradient: dist.sqrt() / (1.0 + state.lambda.norm()),
        stationarity: (&grad_f + &k_lambda).norm() / (1.0 + grad_f.norm() + k_lambda.norm()),
        primal: (k_alpha - &state.beta).norm() / (1.0 + state.beta.norm()),
    }
}
