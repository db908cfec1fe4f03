//! The discrete-continuous ADMM driver.
//!
//! One iteration: build the prox lookup table at `(alpha, lambda, rho)`,
//! propose a labeling, gate it by sufficient descent, read `beta` off the
//! table, solve the consensus system for `alpha`, take a dual ascent step and
//! finally advance the penalty schedule.

mod diagnostics;

pub use diagnostics::{critical_point_residuals, CriticalResiduals};

use std::time::Instant;

use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::kernel::{spectral_bounds, KernelEigen, KernelMatrix, SpectralBounds};
use crate::linalg::{conjugate_gradient, preconditioned_conjugate_gradient, CgFailure, CgStats};
use crate::model::{
    eval_supervised_objective, lagrangian_with_kalpha, ExtReal, GateDecision, IterationTrace, Labeling,
    ProblemInstance, ScoreMatrix, SolverConfig, SolverState,
};
use crate::mrf::{descent_gate, repair_feasibility, solve_mrf, MrfInstance, MrfSolverKind, EXHAUSTIVE_LIMIT};
use crate::prox::lookup_from_kalpha;
use crate::supervised::{solve_supervised, SupervisedOptions};

/// Margin applied to the smallest admissible penalty.
pub const RHO_MARGIN: f64 = 1.01;
/// Consecutive label-stable iterations required before stopping.
pub const STABLE_LABEL_ITERS: usize = 5;
/// Relative slack for the post-freeze monotonicity check.
pub const MONOTONE_TOL: f64 = 1e-8;

/// Smallest `rho` for which the penalty condition
/// `L^2 / (rho s) + (m - rho s) / 2 < 0` holds, `s = sigma_min(K^T K)`.
///
/// The root of the quadratic is moved up by a few ulps when rounding leaves
/// the left side nonnegative there. Returns 0 when every `rho > 0` qualifies.
pub fn compute_rho_threshold(bounds: &SpectralBounds) -> Result<f64> {
    let s = bounds.sigma_min_ktk;
    if !(s > 0.0) {
        return Err(Error::NotSurjective {
            min_eigenvalue: s.max(0.0).sqrt(),
        });
    }
    let m = bounds.semiconvexity_m;
    let l = bounds.lip_l;
    let mut rho = (m + (m * m + 8.0 * l * l).sqrt()) / (2.0 * s);
    if rho == 0.0 {
        return Ok(0.0);
    }
    for _ in 0..64 {
        if penalty_condition_lhs(rho, bounds) < 0.0 {
            break;
        }
        rho = rho.next_up();
    }
    Ok(rho)
}

/// Left side of the penalty condition.
pub fn penalty_condition_lhs(rho: f64, bounds: &SpectralBounds) -> f64 {
    let s = bounds.sigma_min_ktk;
    bounds.lip_l * bounds.lip_l / (rho * s) + (bounds.semiconvexity_m - rho * s) / 2.0
}

/// Penalty the schedule grows towards.
pub fn rho_target(bounds: &SpectralBounds, config: &SolverConfig) -> Result<f64> {
    let threshold = compute_rho_threshold(bounds)? * RHO_MARGIN;
    Ok(threshold.max(config.rho_max_override.unwrap_or(0.0)).max(config.rho0))
}

/// `min(target, tau * rho)` while below the target; frozen afterwards.
pub fn penalty_schedule_step(rho: f64, tau: f64, target: f64) -> f64 {
    if rho < target {
        (tau * rho).min(target)
    } else {
        rho
    }
}

/// Minimizes the augmented Lagrangian over `alpha`.
///
/// The stationarity system `(2 nu K + rho K^2) alpha = K (rho beta - lambda)`
/// is solved in its left-reduced form `(2 nu I + rho K) alpha = rho beta - lambda`,
/// which has the same solution for nonsingular `K` and a much smaller condition number.
pub fn consensus_update(
    instance: &ProblemInstance,
    beta: &ScoreMatrix,
    lambda: &ScoreMatrix,
    rho: f64,
    alpha_warm: &ScoreMatrix,
    cg_tol: f64,
    cg_max_iter: usize,
) -> Result<(ScoreMatrix, CgStats)> {
    instance.check_scores(beta, "beta")?;
    instance.check_scores(lambda, "lambda")?;
    instance.check_scores(alpha_warm, "alpha")?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidInput(format!("rho must be > 0, got {rho}")));
    }
    consensus_solve(
        instance.kernel(),
        None,
        instance.nu(),
        beta,
        lambda,
        rho,
        alpha_warm,
        cg_tol,
        cg_max_iter,
    )
}

#[allow(clippy::too_many_arguments)]
fn consensus_solve(
    kernel: &KernelMatrix,
    eigen: Option<&KernelEigen>,
    nu: f64,
    beta: &ScoreMatrix,
    lambda: &ScoreMatrix,
    rho: f64,
    alpha_warm: &ScoreMatrix,
    cg_tol: f64,
    cg_max_iter: usize,
) -> Result<(ScoreMatrix, CgStats)> {
    let rhs = beta * rho - lambda;
    let mut alpha = alpha_warm.clone();
    let shift = 2.0 * nu;
    let apply = |x: &ScoreMatrix| {
        let mut out = kernel.apply(x) * rho;
        if shift != 0.0 {
            out += x * shift;
        }
        out
    };
    let solved = match eigen {
        Some(e) => preconditioned_conjugate_gradient(
            apply,
            |r: &ScoreMatrix| e.solve_shifted(shift, rho, r),
            &rhs,
            &mut alpha,
            cg_tol,
            cg_max_iter,
        ),
        None => conjugate_gradient(apply, &rhs, &mut alpha, cg_tol, cg_max_iter),
    };
    match solved {
        Ok(stats) => Ok((alpha, stats)),
        Err(CgFailure::Breakdown { iteration, curvature }) => Err(Error::Numeric(format!(
            "consensus CG breakdown at iteration {iteration} (curvature {curvature:e}); \
             the kernel is numerically singular, increase gamma"
        ))),
        Err(CgFailure::NotConverged(stats)) => Err(Error::Numeric(format!(
            "consensus CG stopped after {} iterations at relative residual {:e}; \
             increase gamma or cg_max_iter",
            stats.iterations, stats.relative_residual
        ))),
    }
}

/// `lambda + rho (K alpha - beta)`.
pub fn dual_update(
    lambda: &ScoreMatrix,
    kernel: &KernelMatrix,
    alpha: &ScoreMatrix,
    beta: &ScoreMatrix,
    rho: f64,
) -> Result<ScoreMatrix> {
    let k_alpha = kernel.matvec(alpha)?;
    if lambda.shape() != beta.shape() || k_alpha.shape() != beta.shape() {
        return Err(Error::Dimension("lambda, K alpha and beta must share a shape".into()));
    }
    Ok(lambda + (k_alpha - beta) * rho)
}

/// Source of labeling proposals for the discrete step.
pub trait MrfProposer {
    fn propose(&mut self, mrf: &MrfInstance<'_>, current: &Labeling, iteration: usize) -> Result<Labeling>;
}

/// Proposer backed by [`solve_mrf`].
///
/// Alpha-expansion cannot handle balance cliques; such instances are routed
/// to ICM with a warning instead of failing the run.
#[derive(Clone, Debug)]
pub struct BackendProposer {
    kind: MrfSolverKind,
    seed: u64,
    warned: bool,
}

impl BackendProposer {
    pub fn new(kind: MrfSolverKind, seed: u64) -> Self {
        BackendProposer {
            kind,
            seed,
            warned: false,
        }
    }
}

impl MrfProposer for BackendProposer {
    fn propose(&mut self, mrf: &MrfInstance<'_>, current: &Labeling, iteration: usize) -> Result<Labeling> {
        let seed = self
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(iteration as u64);
        match solve_mrf(mrf, current, self.kind, seed) {
            Ok(r) => Ok(r.labeling),
            Err(Error::UnsupportedTerm(msg)) if self.kind == MrfSolverKind::AlphaExpansion => {
                if !self.warned {
                    warn!("{msg}; falling back to icm");
                    self.warned = true;
                }
                Ok(solve_mrf(mrf, current, MrfSolverKind::Icm, seed)?.labeling)
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    PrimalConverged,
    MaxIter,
    NumericFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::PrimalConverged => "primal-converged",
            Termination::MaxIter => "max-iter",
            Termination::NumericFailure => "numeric-failure",
        }
    }
}

/// Norms of the last iteration's changes, each divided by `sqrt(|V||L|)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FinalSteps {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub primal_residual: f64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub final_state: SolverState,
    pub traces: Vec<IterationTrace>,
    pub termination: Termination,
    /// Set when `termination == NumericFailure`.
    pub failure: Option<String>,
    /// No augmented-Lagrangian increase beyond tolerance once `rho` was frozen.
    pub lagrangian_monotone_after_freeze: bool,
    /// Iterations whose Lagrangian rose after the freeze.
    pub monotonicity_violations: Vec<usize>,
    /// Supervised objective of the final `alpha` minus that of an independent
    /// solve at the final labels; `None` after a numeric failure.
    pub supervised_optimality_gap: Option<f64>,
    /// Supervised objective of the final `alpha` at the final labels.
    pub supervised_objective: Option<f64>,
    pub critical: Option<CriticalResiduals>,
    pub final_steps: FinalSteps,
    pub rho_target: f64,
    /// Iteration at which `rho` first reached its target, if it did.
    pub freeze_iteration: Option<usize>,
    pub bounds: Option<SpectralBounds>,
    pub gate_rejections: usize,
    pub cg_iterations: usize,
}

impl RunReport {
    /// Number of executed iterations.
    pub fn iterations(&self) -> usize {
        self.traces.len()
    }
}

/// Per-vertex argmin of the lookup table at `(alpha0, lambda0, rho0)`,
/// repaired to satisfy all hard terms.
pub fn initial_labeling(
    instance: &ProblemInstance,
    config: &SolverConfig,
    alpha0: Option<&ScoreMatrix>,
    lambda0: Option<&ScoreMatrix>,
) -> Result<Labeling> {
    let zeros = instance.zeros();
    let alpha = alpha0.unwrap_or(&zeros);
    let lambda = lambda0.unwrap_or(&zeros);
    instance.check_scores(alpha, "alpha")?;
    instance.check_scores(lambda, "lambda")?;
    let k_alpha = instance.kernel().apply(alpha);
    let table = lookup_from_kalpha(instance.loss(), &k_alpha, lambda, config.rho0)?;
    let u = table.unaries();
    let argmin: Vec<usize> = (0..u.nrows())
        .map(|i| {
            let mut best = 0;
            for c in 1..u.ncols() {
                if u[(i, c)] < u[(i, best)] {
                    best = c;
                }
            }
            best
        })
        .collect();
    let y = Labeling::new(argmin, instance.n_labels())?;
    let mrf = MrfInstance::new(u, instance.energies())?;
    repair_feasibility(&mrf, &y)
}

/// Runs the solver with the backend named in `config`.
pub fn run(
    instance: &ProblemInstance,
    config: &SolverConfig,
    y0: &Labeling,
    alpha0: Option<&ScoreMatrix>,
    lambda0: Option<&ScoreMatrix>,
) -> Result<RunReport> {
    let mut proposer = BackendProposer::new(config.mrf_solver, config.seed);
    run_with(instance, config, y0, alpha0, lambda0, &mut proposer, &mut |_| Ok(()))
}

/// Runs the solver with a custom proposer and a per-iteration trace sink.
pub fn run_with(
    instance: &ProblemInstance,
    config: &SolverConfig,
    y0: &Labeling,
    alpha0: Option<&ScoreMatrix>,
    lambda0: Option<&ScoreMatrix>,
    proposer: &mut dyn MrfProposer,
    sink: &mut dyn FnMut(&IterationTrace) -> Result<()>,
) -> Result<RunReport> {
    config.validate()?;
    let n = instance.n_vertices();
    let l = instance.n_labels();
    y0.check_against(n, l)?;
    if config.mrf_solver == MrfSolverKind::Exhaustive && (l as f64).powi(n as i32) > EXHAUSTIVE_LIMIT {
        return Err(Error::InvalidInput(format!(
            "exhaustive mrf solver cannot enumerate {l}^{n} labelings (limit {EXHAUSTIVE_LIMIT:e})"
        )));
    }
    if !crate::model::eval_total_energy(instance, y0).is_finite() {
        return Err(Error::Infeasible("initial labeling violates a hard energy term".into()));
    }
    let zeros = instance.zeros();
    let alpha0 = alpha0.unwrap_or(&zeros).clone();
    let lambda0 = lambda0.unwrap_or(&zeros).clone();
    instance.check_scores(&alpha0, "alpha")?;
    instance.check_scores(&lambda0, "lambda")?;

    let bounds = spectral_bounds(instance.kernel(), instance.nu())?;
    let target = rho_target(&bounds, config)?;
    info!(
        "eigenvalues [{:.4e}, {:.4e}], rho threshold {:.6e}, target {:.6e}",
        bounds.eigen_min,
        bounds.eigen_max,
        compute_rho_threshold(&bounds)?,
        target
    );

    let norm = ((n * l) as f64).sqrt();
    let kernel = instance.kernel();
    let eigen = KernelEigen::new(kernel);
    let mut k_alpha = kernel.apply(&alpha0);
    let mut state = SolverState {
        beta: k_alpha.clone(),
        alpha: alpha0,
        lambda: lambda0,
        y: y0.clone(),
        rho: config.rho0,
        iteration: 0,
    };
    let mut traces: Vec<IterationTrace> = Vec::new();
    let mut termination = Termination::MaxIter;
    let mut failure = None;
    let mut stable_labels = 0usize;
    let mut violations = Vec::new();
    let mut freeze_iteration = None;
    let mut gate_rejections = 0;
    let mut cg_iterations = 0;
    let mut steps = FinalSteps::default();

    while state.iteration < config.max_iter {
        let started = Instant::now();
        let rho = state.rho;
        let frozen = rho >= target;
        if frozen && freeze_iteration.is_none() {
            freeze_iteration = Some(state.iteration);
        }

        let table = match lookup_from_kalpha(instance.loss(), &k_alpha, &state.lambda, rho) {
            Ok(t) => t,
            Err(Error::Numeric(msg)) => {
                failure = Some(msg);
                termination = Termination::NumericFailure;
                break;
            }
            Err(e) => return Err(e),
        };
        let mrf = MrfInstance::new(table.unaries(), instance.energies())?;
        let proposal = proposer.propose(&mrf, &state.y, state.iteration)?;
        proposal.check_against(n, l)?;
        let gate = descent_gate(&table, instance.energies(), &state.y, &proposal, config.delta)?;
        let y_next = match gate {
            GateDecision::Accept => proposal,
            GateDecision::Reject => {
                gate_rejections += 1;
                state.y.clone()
            }
        };
        let labels_changed = y_next.hamming(&state.y);
        let beta = table.select(y_next.as_slice());
        let mrf_energy = mrf.energy(y_next.as_slice()).to_f64();

        let (alpha, stats) = match consensus_solve(
            kernel,
            eigen.as_ref(),
            instance.nu(),
            &beta,
            &state.lambda,
            rho,
            &state.alpha,
            config.cg_tol,
            config.cg_max_iter,
        ) {
            Ok(r) => r,
            Err(Error::Numeric(msg)) => {
                failure = Some(msg);
                termination = Termination::NumericFailure;
                break;
            }
            Err(e) => return Err(e),
        };
        cg_iterations += stats.iterations;
        let k_alpha_next = kernel.apply(&alpha);
        let residual = &k_alpha_next - &beta;
        let lambda = &state.lambda + &residual * rho;

        steps = FinalSteps {
            alpha: (&alpha - &state.alpha).norm() / norm,
            beta: (&beta - &state.beta).norm() / norm,
            lambda: (&lambda - &state.lambda).norm() / norm,
            primal_residual: residual.norm() / norm,
        };
        state.alpha = alpha;
        state.beta = beta;
        state.lambda = lambda;
        state.y = y_next;
        state.iteration += 1;
        k_alpha = k_alpha_next;

        let lagrangian = lagrangian_with_kalpha(instance, &state, &k_alpha);
        let lagrangian = match lagrangian {
            ExtReal::Finite(v) if v.is_finite() => v,
            _ => {
                return Err(Error::Numeric(format!(
                    "augmented Lagrangian is not finite after iteration {}",
                    state.iteration
                )))
            }
        };
        if frozen {
            if let Some(prev) = traces.last() {
                if prev.rho == rho && lagrangian > prev.lagrangian + MONOTONE_TOL * (1.0 + prev.lagrangian.abs()) {
                    warn!(
                        "augmented Lagrangian rose after the penalty froze at iteration {}: {} -> {}; \
                         prox or CG tolerance too loose",
                        state.iteration, prev.lagrangian, lagrangian
                    );
                    violations.push(state.iteration);
                }
            }
        }
        let trace = IterationTrace {
            iteration: state.iteration,
            rho,
            lagrangian,
            primal_residual: residual.norm(),
            alpha_step: steps.alpha * norm,
            labels_changed,
            gate,
            mrf_energy,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        sink(&trace)?;
        debug!(
            "iter {} rho {:.4e} L {:.10e} res {:.3e} step {:.3e} changed {} {}",
            trace.iteration,
            rho,
            lagrangian,
            trace.primal_residual,
            trace.alpha_step,
            labels_changed,
            gate.as_str()
        );
        traces.push(trace);

        stable_labels = if labels_changed == 0 { stable_labels + 1 } else { 0 };
        if frozen
            && steps.primal_residual <= config.primal_tol
            && steps.alpha <= config.step_tol
            && stable_labels >= STABLE_LABEL_ITERS
        {
            termination = Termination::PrimalConverged;
            break;
        }
        state.rho = penalty_schedule_step(rho, config.tau, target);
    }

    let (gap, objective, critical) = if termination == Termination::NumericFailure {
        (None, None, None)
    } else {
        let objective = eval_supervised_objective(instance, &state.y, &state.alpha)?;
        let reference = if instance.nu() > 0.0 {
            let sol = solve_supervised(
                kernel,
                instance.loss(),
                instance.nu(),
                &state.y,
                l,
                Some(&(&state.alpha * (-2.0 * instance.nu()))),
                &SupervisedOptions::default(),
            )?;
            sol.objective
        } else {
            // with nu = 0 and nonsingular K every loss reaches its infimum 0
            0.0
        };
        let critical = critical_point_residuals(instance, &state, &k_alpha);
        (Some(objective - reference), Some(objective), Some(critical))
    };

    info!(
        "{} after {} iterations ({} gate rejections, {} CG iterations)",
        termination.as_str(),
        state.iteration,
        gate_rejections,
        cg_iterations
    );
    Ok(RunReport {
        final_state: state,
        traces,
        termination,
        failure,
        lagrangian_monotone_after_freeze: violations.is_empty(),
        monotonicity_violations: violations,
        supervised_optimality_gap: gap,
        supervised_objective: objective,
        critical,
        final_steps: steps,
        rho_target: target,
        freeze_iteration,
        bounds: Some(bounds),
        gate_rejections,
        cg_iterations,
    })
}
