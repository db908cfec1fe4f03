use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dcadmm::admm::Termination;
use dcadmm::dataio::{
    load_dataset, load_image_problem, load_labels, metrics, read_matrix, read_pgm, save_labels, standardize, write_pgm,
    write_trace_csv, ConstraintSpec, DataFormat, Dataset, GrayImage, Metrics,
};
use dcadmm::experiments::{median, moons_instance, run_method, solve_with_method, Method, MethodRun};
use dcadmm::kernel::{build_kernel, nystrom_factor, KernelMatrix, KernelSpec};
use dcadmm::model::{eval_total_energy, IterationTrace, Labeling, ProblemInstance};
use dcadmm::mrf::{MrfSolverKind, EXHAUSTIVE_LIMIT};
use log::info;
use nalgebra::DMatrix;

use crate::config::{Config, KernelKind, ProblemConfig};

/// Process exit status of a finished command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    Budget,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Converged => 0,
            Outcome::Budget => 2,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Outputs {
    pub trace: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

fn kernel_spec(problem: &ProblemConfig) -> Result<KernelSpec> {
    Ok(match problem.kernel {
        KernelKind::Rbf => KernelSpec::Rbf { sigma: problem.sigma },
        KernelKind::Linear => KernelSpec::Linear,
        KernelKind::Precomputed => {
            let path = problem
                .kernel_path
                .as_ref()
                .context("precomputed kernel needs problem.kernel_path")?;
            KernelSpec::Precomputed(read_matrix(path)?)
        }
    })
}

pub fn build_problem_kernel(
    problem: &ProblemConfig,
    features: &DMatrix<f64>,
    gamma: f64,
    seed: u64,
) -> Result<KernelMatrix> {
    let spec = kernel_spec(problem)?;
    let features = if problem.standardize && !matches!(spec, KernelSpec::Precomputed(_)) {
        standardize(features)
    } else {
        features.clone()
    };
    let kernel = if problem.landmarks > 0 && !matches!(spec, KernelSpec::Precomputed(_)) {
        nystrom_factor(&features, &spec, problem.landmarks, gamma, seed)?
    } else {
        build_kernel(&features, &spec, gamma)?
    };
    Ok(kernel)
}

/// Largest label index mentioned by the data or the constraints, plus one.
fn infer_n_labels(dataset: &Dataset, spec: &ConstraintSpec) -> usize {
    let mut l = 0;
    if let Some(t) = &dataset.true_labels {
        l = l.max(t.as_slice().iter().map(|&c| c + 1).max().unwrap_or(0));
    }
    l = l.max(dataset.fixed_labels.values().map(|&c| c + 1).max().unwrap_or(0));
    l = l.max(spec.clamps.iter().map(|c| c.label + 1).max().unwrap_or(0));
    l = l.max(spec.balance_cliques.iter().map(|c| c.lower.len()).max().unwrap_or(0));
    l
}

fn write_traces(path: &Path, traces: &[IterationTrace]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("trace file {}", path.display()))?;
    write_trace_csv(BufWriter::new(file), traces).with_context(|| format!("trace file {}", path.display()))
}

fn print_metrics(m: &Metrics) {
    println!("error_rate: {:.6}", m.error_rate);
    println!("mean_iou: {:.6}", m.mean_iou);
    for (c, iou) in m.per_class_iou.iter().enumerate() {
        if let Some(v) = iou {
            println!("iou[{c}]: {v:.6}");
        }
    }
}

/// Maps an ADMM-style run to an exit outcome; numeric failures are errors.
fn outcome_of(run: &MethodRun) -> Result<Outcome> {
    match run.termination {
        Some(Termination::NumericFailure) => {
            let why = run.report.as_ref().and_then(|r| r.failure.clone()).unwrap_or_default();
            bail!("numeric failure: {why}")
        }
        Some(Termination::PrimalConverged) => Ok(Outcome::Converged),
        Some(Termination::MaxIter) => Ok(Outcome::Budget),
        None if run.converged => Ok(Outcome::Converged),
        None => Ok(Outcome::Budget),
    }
}

fn print_run_summary(problem: &ProblemInstance, run: &MethodRun) {
    let termination = match run.termination {
        Some(t) => t.as_str(),
        None if run.converged => "fixed-point",
        None => "max-rounds",
    };
    println!("termination: {termination}");
    println!("iterations: {}", run.iterations);
    println!("mrf_energy: {}", eval_total_energy(problem, &run.labels));
    if let Some(r) = &run.report {
        if let Some(obj) = r.supervised_objective {
            println!("supervised_objective: {obj:?}");
        }
        println!("final_rho: {:?}", r.final_state.rho);
        println!("primal_residual: {:?}", r.final_steps.primal_residual);
        println!("gate_rejections: {}", r.gate_rejections);
    }
}

pub struct DataInputs {
    pub data: PathBuf,
    pub constraints: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

struct Loaded {
    problem: ProblemInstance,
    truth: Option<Labeling>,
}

fn load_problem(config: &Config, inputs: &DataInputs) -> Result<Loaded> {
    require_file(&inputs.data, "data file")?;
    if let Some(c) = &inputs.constraints {
        require_file(c, "constraint file")?;
    }
    if let Some(t) = &inputs.truth {
        require_file(t, "truth file")?;
    }
    if let Some(k) = config
        .problem
        .kernel_path
        .as_ref()
        .filter(|_| config.problem.kernel == KernelKind::Precomputed)
    {
        require_file(k, "kernel file")?;
    }
    let dataset = load_dataset(&inputs.data, DataFormat::from_path(&inputs.data))?;
    let spec = match &inputs.constraints {
        Some(p) => ConstraintSpec::load(p)?,
        None => ConstraintSpec::default(),
    }
    .with_fixed_labels(&dataset.fixed_labels);
    let mut l = config.problem.n_labels;
    if l == 0 {
        l = infer_n_labels(&dataset, &spec);
    }
    if l == 0 {
        bail!("cannot infer the number of labels; set problem.n_labels");
    }
    let truth = match &inputs.truth {
        Some(p) => Some(load_labels(p, Some(l))?),
        None => dataset.true_labels.clone(),
    };
    let n = dataset.n_vertices();
    if let Some(t) = &truth {
        t.check_against(n, l)?;
    }
    spec.validate(n, l)?;
    let kernel = build_problem_kernel(
        &config.problem,
        &dataset.features,
        config.solver.gamma,
        config.solver.seed,
    )?;
    let problem = ProblemInstance::new(
        kernel,
        l,
        config.problem.loss,
        spec.to_energy_terms(),
        config.problem.nu,
    )?;
    Ok(Loaded { problem, truth })
}

fn finish_run(problem: &ProblemInstance, truth: Option<&Labeling>, run: &MethodRun, out: &Outputs) -> Result<Outcome> {
    if let Some(p) = &out.labels {
        save_labels(p, &run.labels)?;
    }
    if let Some(p) = &out.trace {
        write_traces(p, &run.traces)?;
    }
    print_run_summary(problem, run);
    if let Some(t) = truth {
        print_metrics(&metrics(&run.labels, t, &[])?);
    }
    outcome_of(run)
}

pub fn cmd_solve(config: &Config, inputs: &DataInputs, out: &Outputs) -> Result<Outcome> {
    let loaded = load_problem(config, inputs)?;
    let run = solve_with_method(Method::Dcadmm, &loaded.problem, &config.solver, &mut |_| Ok(()))?;
    finish_run(&loaded.problem, loaded.truth.as_ref(), &run, out)
}

pub fn cmd_baseline(config: &Config, method: Method, inputs: &DataInputs, out: &Outputs) -> Result<Outcome> {
    let loaded = load_problem(config, inputs)?;
    let run = solve_with_method(method, &loaded.problem, &config.solver, &mut |_| Ok(()))?;
    finish_run(&loaded.problem, loaded.truth.as_ref(), &run, out)
}

pub fn cmd_moons_bench(config: &Config, seeds: usize, out: &Outputs) -> Result<Outcome> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    if config.problem.kernel != KernelKind::Rbf || config.problem.landmarks > 0 {
        bail!("moons-bench uses the full RBF kernel; problem.kernel must be rbf and problem.landmarks 0");
    }
    let bench = config.moons_bench();
    let n = bench.n_per_class * bench.n_classes;
    if config.solver.mrf_solver == MrfSolverKind::Exhaustive
        && (bench.n_classes as f64).powf(n as f64) > EXHAUSTIVE_LIMIT
    {
        bail!(
            "exhaustive mrf solver cannot enumerate {}^{n} labelings (limit {EXHAUSTIVE_LIMIT:e})",
            bench.n_classes
        );
    }
    for dir in [&out.trace, &out.labels].into_iter().flatten() {
        fs::create_dir_all(dir).with_context(|| format!("output directory {}", dir.display()))?;
    }
    let base = config.solver.seed;
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); Method::ALL.len()];
    let mut outcome = Outcome::Converged;
    for seed in base..base + seeds as u64 {
        let instance = moons_instance(&bench, seed)?;
        let mut solver = config.solver.clone();
        solver.seed = seed;
        println!("seed {seed}");
        println!(
            "{:<20} {:>8} {:>10} {:>10}  termination",
            "method", "error%", "runtime_s", "iterations"
        );
        for (k, &method) in Method::ALL.iter().enumerate() {
            let r = run_method(method, &instance, &solver, &mut |_| Ok(()))?;
            let termination = match r.termination {
                Some(Termination::NumericFailure) => {
                    let why = r.report.as_ref().and_then(|x| x.failure.clone()).unwrap_or_default();
                    bail!("{} on seed {seed}: numeric failure: {why}", method.name());
                }
                Some(t) => t.as_str(),
                None => "fixed-point",
            };
            if method == Method::Dcadmm && r.termination == Some(Termination::MaxIter) {
                outcome = Outcome::Budget;
            }
            println!(
                "{:<20} {:>8.2} {:>10.2} {:>10}  {termination}",
                method.name(),
                100.0 * r.error_rate,
                r.runtime_s,
                r.iterations
            );
            errors[k].push(r.error_rate);
            let stem = format!("{}-seed{seed}", method.name());
            if let Some(dir) = &out.trace {
                write_traces(&dir.join(format!("{stem}.csv")), &r.traces)?;
            }
            if let Some(dir) = &out.labels {
                save_labels(&dir.join(format!("{stem}.labels")), &r.labels)?;
            }
        }
        println!();
    }
    let row: Vec<String> = Method::ALL
        .iter()
        .zip(&errors)
        .map(|(m, e)| format!("{} {:.2}", m.name(), 100.0 * median(e)))
        .collect();
    println!("median error% over {seeds} seeds: {}", row.join("  "));
    info!("moons-bench finished");
    Ok(outcome)
}

pub struct SegmentInputs {
    pub image: PathBuf,
    pub scribbles: PathBuf,
    pub mask_out: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

pub fn cmd_segment(config: &Config, inputs: &SegmentInputs, out: &Outputs) -> Result<Outcome> {
    require_file(&inputs.image, "image")?;
    require_file(&inputs.scribbles, "scribble image")?;
    if let Some(g) = &inputs.ground_truth {
        require_file(g, "ground-truth mask")?;
    }
    let p = load_image_problem(
        &inputs.image,
        &inputs.scribbles,
        config.segment.potts,
        config.segment.coordinates,
    )?;
    let l = if config.problem.n_labels > 0 {
        config.problem.n_labels
    } else {
        p.n_labels
    };
    if l < 2 {
        bail!("scribbles must mark at least two labels (pixel values 1 and 2)");
    }
    p.constraints.validate(p.dataset.n_vertices(), l)?;
    let kernel = build_problem_kernel(
        &config.problem,
        &p.dataset.features,
        config.solver.gamma,
        config.solver.seed,
    )?;
    let problem = ProblemInstance::new(
        kernel,
        l,
        config.problem.loss,
        p.constraints.to_energy_terms(),
        config.problem.nu,
    )?;
    let run = solve_with_method(Method::Dcadmm, &problem, &config.solver, &mut |_| Ok(()))?;
    if let Some(path) = &inputs.mask_out {
        let mask = GrayImage {
            width: p.width,
            height: p.height,
            data: run.labels.as_slice().iter().map(|&c| (c + 1) as u8).collect(),
        };
        write_pgm(path, &mask)?;
    }
    let truth = match &inputs.ground_truth {
        Some(path) => {
            let gt = read_pgm(path)?;
            if (gt.width, gt.height) != (p.width, p.height) {
                bail!(
                    "ground-truth mask is {}x{} but the image is {}x{}",
                    gt.width,
                    gt.height,
                    p.width,
                    p.height
                );
            }
            Some(gt)
        }
        None => None,
    };
    let outcome = finish_run(&problem, None, &run, out)?;
    if let Some(gt) = truth {
        let labels: Vec<usize> = gt.data.iter().map(|&v| (v as usize).saturating_sub(1)).collect();
        if labels.iter().any(|&c| c >= l) {
            bail!("ground-truth mask uses labels beyond {l}");
        }
        let exclude: Vec<usize> = gt
            .data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 0)
            .map(|(i, _)| i)
            .collect();
        print_metrics(&metrics(&run.labels, &Labeling::new(labels, l)?, &exclude)?);
    }
    Ok(outcome)
}
