mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand};
use dcadmm::experiments::Method;
use dcadmm::model::LossKind;
use dcadmm::mrf::MrfSolverKind;
use toml::Value;

use commands::{DataInputs, Outputs, SegmentInputs};
use config::{one_line, Config};

/// Discrete-continuous ADMM for joint labeling and classifier training.
///
/// Exit status: 0 converged, 2 iteration budget exhausted, 1 error.
#[derive(Parser, Debug)]
#[command(name = "dcadmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config with dotted keys (solver.*, problem.*, moons.*, segment.*).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for kernel and lookup-table construction.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Trace CSV (a directory for moons-bench).
    #[arg(long, global = true, value_name = "PATH")]
    trace_out: Option<PathBuf>,
    /// Labels file (a directory for moons-bench).
    #[arg(long, global = true, value_name = "PATH")]
    labels_out: Option<PathBuf>,
    /// icm, alpha-expansion or exhaustive.
    #[arg(long, global = true)]
    mrf_solver: Option<String>,
    /// one-vs-all-hinge, crammer-singer or softmax.
    #[arg(long, global = true)]
    loss: Option<String>,
    /// rbf, rbf:SIGMA, linear or precomputed:PATH.
    #[arg(long, global = true)]
    kernel: Option<String>,
    #[arg(long, global = true)]
    delta: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Joint labeling and training on a feature file.
    Solve {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Four-moons benchmark against both baselines.
    MoonsBench {
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Scribble-driven image segmentation.
    Segment {
        /// Binary PPM image.
        #[arg(long)]
        image: PathBuf,
        /// Binary PGM; value k > 0 clamps the pixel to label k - 1.
        #[arg(long)]
        scribbles: PathBuf,
        /// Potts edge weight.
        #[arg(long)]
        potts: Option<f64>,
        /// Output PGM holding label + 1 per pixel.
        #[arg(long)]
        mask_out: Option<PathBuf>,
        /// PGM in the scribble convention; 0 marks unevaluated pixels.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Run kernel k-means or coordinate descent on a feature file.
    Baseline {
        /// kkmeans or coordinate-descent.
        #[arg(long)]
        method: String,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Features as CSV or binary matrix (.bin).
    #[arg(long)]
    data: PathBuf,
    /// Constraint spec (TOML).
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Ground-truth labels, one per line.
    #[arg(long)]
    truth: Option<PathBuf>,
}

impl DataArgs {
    fn inputs(&self) -> DataInputs {
        DataInputs {
            data: self.data.clone(),
            constraints: self.constraints.clone(),
            truth: self.truth.clone(),
        }
    }
}

fn flag_overrides(common: &Common, potts: Option<f64>) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    let mut push = |k: &str, v: Value| out.push((k.to_string(), v));
    if let Some(s) = common.seed {
        let s = i64::try_from(s).map_err(|_| anyhow!("--seed {s} is too large"))?;
        push("solver.seed", Value::Integer(s));
    }
    if let Some(m) = &common.mrf_solver {
        push(
            "solver.mrf_solver",
            Value::String(MrfSolverKind::from_str(m)?.name().into()),
        );
    }
    if let Some(l) = &common.loss {
        push("problem.loss", Value::String(LossKind::from_str(l)?.name().into()));
    }
    if let Some(d) = common.delta {
        push("solver.delta", Value::Float(d));
    }
    if let Some(k) = &common.kernel {
        let (kind, arg) = match k.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (k.as_str(), None),
        };
        match (kind.to_ascii_lowercase().as_str(), arg) {
            ("rbf", sigma) => {
                push("problem.kernel", Value::String("rbf".into()));
                if let Some(s) = sigma {
                    let s: f64 = s.parse().map_err(|_| anyhow!("bad RBF sigma '{s}'"))?;
                    push("problem.sigma", Value::Float(s));
                }
            }
            ("linear", None) => push("problem.kernel", Value::String("linear".into())),
            ("precomputed", Some(path)) => {
                push("problem.kernel", Value::String("precomputed".into()));
                push("problem.kernel_path", Value::String(path.into()));
            }
            _ => bail!("unknown kernel '{k}'; expected rbf, rbf:SIGMA, linear or precomputed:PATH"),
        }
    }
    if let Some(w) = potts {
        push("segment.potts", Value::Float(w));
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<commands::Outcome> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let potts = match &cli.command {
        Command::Segment { potts, .. } => *potts,
        _ => None,
    };
    let defaults = match &cli.command {
        Command::MoonsBench { .. } => Config::for_moons_bench(),
        Command::Segment { .. } => Config::for_segment(),
        _ => Config::default(),
    };
    if let Some(p) = &cli.common.config {
        commands::require_file(p, "config file")?;
    }
    let flags = flag_overrides(&cli.common, potts)?;
    let config = config::resolve(&defaults, cli.common.config.as_deref(), &cli.common.sets, &flags)?;
    let out = Outputs {
        trace: cli.common.trace_out.clone(),
        labels: cli.common.labels_out.clone(),
    };
    match &cli.command {
        Command::Solve { data } => commands::cmd_solve(&config, &data.inputs(), &out),
        Command::MoonsBench { seeds } => commands::cmd_moons_bench(&config, *seeds, &out),
        Command::Segment {
            image,
            scribbles,
            mask_out,
            ground_truth,
            ..
        } => commands::cmd_segment(
            &config,
            &SegmentInputs {
                image: image.clone(),
                scribbles: scribbles.clone(),
                mask_out: mask_out.clone(),
                ground_truth: ground_truth.clone(),
            },
            &out,
        ),
        Command::Baseline { method, data } => {
            let method = Method::from_str(method)?;
            if method == Method::Dcadmm {
                bail!("baseline takes kkmeans or coordinate-descent; use solve for dcadmm");
            }
            commands::cmd_baseline(&config, method, &data.inputs(), &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("DCADMM_LOG", "warn"))
        .format_timestamp(None)
        .init();
    // clap's own usage-error status would collide with the budget code
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!("dcadmm: error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(e) => {
            eprintln!("dcadmm: error: {}", one_line(&format!("{e:#}")));
            ExitCode::from(1)
        }
    }
}
