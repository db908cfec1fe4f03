//! The four-moons benchmark with balance cliques and no labeled points, and
//! the random small instances used by the property suites.

use std::str::FromStr;
use std::time::Instant;

use log::info;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::admm::{initial_labeling, run_with, BackendProposer, RunReport, Termination};
use crate::baselines::{coordinate_descent, kernel_kmeans, KKMEANS_MAX_ROUNDS};
use crate::dataio::{generate_balance_cliques, generate_moons, metrics, standardize, Dataset};
use crate::error::{Error, Result};
use crate::kernel::{build_kernel, KernelSpec};
use crate::model::{EnergyTerm, GateDecision, IterationTrace, Labeling, LossKind, ProblemInstance, SolverConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct MoonsBenchConfig {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub noise_sigma: f64,
    pub n_cliques: usize,
    pub clique_size: usize,
    pub slack: usize,
    pub nu: f64,
    pub sigma: f64,
    pub loss: LossKind,
    /// Standardize the features before building the kernel.
    pub standardize: bool,
    pub solver: SolverConfig,
}

impl Default for MoonsBenchConfig {
    fn default() -> Self {
        MoonsBenchConfig {
            n_per_class: 150,
            n_classes: 4,
            noise_sigma: 0.05,
            n_cliques: 25,
            clique_size: 25,
            slack: 3,
            nu: 0.0025,
            sigma: 0.5477,
            loss: LossKind::CrammerSinger,
            standardize: false,
            solver: SolverConfig {
                gamma: 0.1,
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Dcadmm,
    KernelKMeans,
    CoordinateDescent,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dcadmm, Method::KernelKMeans, Method::CoordinateDescent];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dcadmm => "dcadmm",
            Method::KernelKMeans => "kkmeans",
            Method::CoordinateDescent => "coordinate-descent",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "dcadmm" | "admm" => Ok(Method::Dcadmm),
            "kkmeans" | "kernel-kmeans" => Ok(Method::KernelKMeans),
            "coordinate-descent" | "cd" => Ok(Method::CoordinateDescent),
            other => Err(Error::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MethodResult {
    pub method: Method,
    pub error_rate: f64,
    pub runtime_s: f64,
    pub iterations: usize,
    /// `None` for kernel k-means, which has no ADMM-style termination.
    pub termination: Option<Termination>,
    pub labels: Labeling,
    pub traces: Vec<IterationTrace>,
    /// Full report for the ADMM-family methods.
    pub report: Option<RunReport>,
}

/// One benchmark instance: data, cliques and the assembled problem.
#[derive(Clone, Debug)]
pub struct MoonsInstance {
    pub dataset: Dataset,
    pub problem: ProblemInstance,
}

pub fn moons_instance(config: &MoonsBenchConfig, seed: u64) -> Result<MoonsInstance> {
    let dataset = generate_moons(config.n_per_class, config.n_classes, config.noise_sigma, seed)?;
    let truth = dataset.true_labels.clone().expect("generated data carries labels");
    let spec = generate_balance_cliques(
        &truth,
        config.n_classes,
        config.n_cliques,
        config.clique_size,
        config.slack,
        seed.wrapping_add(1),
    )?;
    let features = if config.standardize {
        standardize(&dataset.features)
    } else {
        dataset.features.clone()
    };
    let kernel = build_kernel(&features, &KernelSpec::Rbf { sigma: config.sigma }, config.solver.gamma)?;
    let problem = ProblemInstance::new(kernel, config.n_classes, config.loss, spec.to_energy_terms(), config.nu)?;
    Ok(MoonsInstance { dataset, problem })
}

/// Output of one method run, before any comparison with ground truth.
#[derive(Clone, Debug)]
pub struct MethodRun {
    pub labels: Labeling,
    pub iterations: usize,
    /// `None` for kernel k-means, which has no ADMM-style termination.
    pub termination: Option<Termination>,
    /// Kernel k-means: reached a fixed point. Otherwise: primal convergence.
    pub converged: bool,
    pub traces: Vec<IterationTrace>,
    pub report: Option<RunReport>,
}

/// Runs `method` from the repaired argmin labeling; every trace row is also
/// passed to `sink`.
pub fn solve_with_method(
    method: Method,
    problem: &ProblemInstance,
    solver: &SolverConfig,
    sink: &mut dyn FnMut(&IterationTrace) -> Result<()>,
) -> Result<MethodRun> {
    let y0 = initial_labeling(problem, solver, None, None)?;
    let admm_run = |r: RunReport| MethodRun {
        labels: r.final_state.y.clone(),
        iterations: r.iterations(),
        termination: Some(r.termination),
        converged: r.termination == Termination::PrimalConverged,
        traces: r.traces.clone(),
        report: Some(r),
    };
    match method {
        Method::Dcadmm => {
            let mut proposer = BackendProposer::new(solver.mrf_solver, solver.seed);
            Ok(admm_run(run_with(
                problem,
                solver,
                &y0,
                None,
                None,
                &mut proposer,
                sink,
            )?))
        }
        Method::CoordinateDescent => Ok(admm_run(coordinate_descent(problem, solver, &y0, sink)?)),
        Method::KernelKMeans => {
            let r = kernel_kmeans(
                problem.kernel(),
                problem.energies(),
                &y0,
                problem.n_labels(),
                solver.mrf_solver,
                solver.seed,
                KKMEANS_MAX_ROUNDS,
            )?;
            // one row per round; only the objective columns are meaningful
            let traces: Vec<IterationTrace> = r
                .objectives
                .iter()
                .enumerate()
                .map(|(k, &obj)| IterationTrace {
                    iteration: k + 1,
                    rho: 0.0,
                    lagrangian: obj,
                    primal_residual: 0.0,
                    alpha_step: 0.0,
                    labels_changed: 0,
                    gate: GateDecision::Accept,
                    mrf_energy: obj,
                    wall_time_ms: 0.0,
                })
                .collect();
            for t in &traces {
                sink(t)?;
            }
            Ok(MethodRun {
                labels: r.state.assignment,
                iterations: r.rounds,
                termination: None,
                converged: r.converged,
                traces,
                report: None,
            })
        }
    }
}

/// Runs one method on `instance` and scores it against the generated labels.
pub fn run_method(
    method: Method,
    instance: &MoonsInstance,
    solver: &SolverConfig,
    sink: &mut dyn FnMut(&IterationTrace) -> Result<()>,
) -> Result<MethodResult> {
    let truth = instance.dataset.true_labels.as_ref().expect("labeled data");
    let started = Instant::now();
    let run = solve_with_method(method, &instance.problem, solver, sink)?;
    let m = metrics(&run.labels, truth, &[])?;
    let runtime_s = started.elapsed().as_secs_f64();
    info!(
        "{}: error {:.2}% in {:.2}s, {} iterations",
        method.name(),
        100.0 * m.error_rate,
        runtime_s,
        run.iterations
    );
    Ok(MethodResult {
        method,
        error_rate: m.error_rate,
        runtime_s,
        iterations: run.iterations,
        termination: run.termination,
        labels: run.labels,
        traces: run.traces,
        report: run.report,
    })
}

/// Small random instance for the property suites: RBF kernel on uniform
/// points in the plane with a shift of 0.5, random Potts edges and, for odd
/// seeds, one balance clique that admits a hidden labeling.
pub fn random_instance(seed: u64) -> Result<ProblemInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(6..=14);
    let l = rng.gen_range(2..=4);
    let loss = LossKind::ALL[rng.gen_range(0..LossKind::ALL.len())];
    let x = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
    let kernel = build_kernel(&x, &KernelSpec::Rbf { sigma: 0.7 }, 0.5)?;
    let mut energies: Vec<EnergyTerm> = (0..n)
        .map(|_| {
            let i = rng.gen_range(0..n);
            let j = (i + rng.gen_range(1..n)) % n;
            EnergyTerm::PairwisePotts {
                i,
                j,
                weight: rng.gen_range(0.0..0.3),
            }
        })
        .collect();
    if seed % 2 == 1 {
        let hidden = Labeling::new((0..n).map(|_| rng.gen_range(0..l)).collect(), l)?;
        let size = n.min(8);
        let spec = generate_balance_cliques(&hidden, l, 1, size, 1, rng.gen())?;
        energies.extend(spec.to_energy_terms());
    }
    let nu = rng.gen_range(0.05..0.5);
    ProblemInstance::new(kernel, l, loss, energies, nu)
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
