//! Layered configuration: command defaults, then the config file, then
//! `--set key=value` overrides, then dedicated flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dcadmm::experiments::MoonsBenchConfig;
use dcadmm::model::{LossKind, SolverConfig};
use dcadmm::mrf::MrfSolverKind;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Rbf,
    Linear,
    /// Dense matrix read from `problem.kernel_path` (binary matrix format).
    Precomputed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub loss: LossKind,
    pub nu: f64,
    pub kernel: KernelKind,
    pub sigma: f64,
    pub kernel_path: Option<PathBuf>,
    /// Nyström landmarks; 0 builds the full kernel.
    pub landmarks: usize,
    pub standardize: bool,
    /// 0 infers the label count from the inputs.
    pub n_labels: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            loss: LossKind::OneVsAllHinge,
            nu: 0.0025,
            kernel: KernelKind::Rbf,
            sigma: 0.5477,
            kernel_path: None,
            landmarks: 0,
            standardize: true,
            n_labels: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoonsConfig {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub noise_sigma: f64,
    pub n_cliques: usize,
    pub clique_size: usize,
    pub slack: usize,
}

impl Default for MoonsConfig {
    fn default() -> Self {
        let b = MoonsBenchConfig::default();
        MoonsConfig {
            n_per_class: b.n_per_class,
            n_classes: b.n_classes,
            noise_sigma: b.noise_sigma,
            n_cliques: b.n_cliques,
            clique_size: b.clique_size,
            slack: b.slack,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    /// Weight of every 4-neighbour Potts edge.
    pub potts: f64,
    /// Append normalized pixel coordinates to the color features.
    pub coordinates: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            potts: 1.0,
            coordinates: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub solver: SolverConfig,
    pub problem: ProblemConfig,
    pub moons: MoonsConfig,
    pub segment: SegmentConfig,
}

impl Config {
    pub fn for_moons_bench() -> Self {
        let b = MoonsBenchConfig::default();
        Config {
            solver: b.solver,
            problem: ProblemConfig {
                loss: b.loss,
                nu: b.nu,
                sigma: b.sigma,
                standardize: b.standardize,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn for_segment() -> Self {
        Config {
            solver: SolverConfig {
                mrf_solver: MrfSolverKind::AlphaExpansion,
                gamma: 0.1,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn moons_bench(&self) -> MoonsBenchConfig {
        MoonsBenchConfig {
            n_per_class: self.moons.n_per_class,
            n_classes: self.moons.n_classes,
            noise_sigma: self.moons.noise_sigma,
            n_cliques: self.moons.n_cliques,
            clique_size: self.moons.clique_size,
            slack: self.moons.slack,
            nu: self.problem.nu,
            sigma: self.problem.sigma,
            loss: self.problem.loss,
            standardize: self.problem.standardize,
            solver: self.solver.clone(),
        }
    }
}

/// Parses the value side of an override as a TOML value, falling back to a
/// bare string.
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn set_path(root: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key '{key}'");
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = match entry {
            Value::Table(t) => t,
            _ => bail!("'{part}' in key '{key}' is not a section"),
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{s}' is not of the form key=value"))?;
    Ok((k.trim().to_string(), parse_value(v)))
}

/// Applies the layers on top of `defaults` and type-checks the result.
pub fn resolve(defaults: &Config, file: Option<&Path>, sets: &[String], flags: &[(String, Value)]) -> Result<Config> {
    let mut table = Table::try_from(defaults).context("serializing defaults")?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("config file {}", path.display()))?;
        let parsed: Table = text
            .parse()
            .map_err(|e: toml::de::Error| anyhow!("config file {}: {}", path.display(), one_line(&e.to_string())))?;
        merge(&mut table, parsed);
    }
    for s in sets {
        let (k, v) = parse_assignment(s)?;
        set_path(&mut table, &k, v)?;
    }
    for (k, v) in flags {
        set_path(&mut table, k, v.clone())?;
    }
    let config: Config = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow!("config: {}", one_line(&e.to_string())))?;
    config.solver.validate()?;
    if !(config.problem.nu >= 0.0 && config.problem.nu.is_finite()) {
        bail!("problem.nu must be >= 0, got {}", config.problem.nu);
    }
    if config.problem.kernel == KernelKind::Rbf && !(config.problem.sigma > 0.0) {
        bail!("problem.sigma must be > 0, got {}", config.problem.sigma);
    }
    Ok(config)
}

/// Joins a multi-line message into one line.
pub fn one_line(s: &str) -> String {
    s.split('\n')
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.chars().all(|c| c == '|' || c == '^' || c.is_whitespace()))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(
            &path,
            "solver.rho0 = 0.01\nsolver.max_iter = 7\n[problem]\nloss = \"softmax\"\n",
        )
        .unwrap();
        let sets = vec!["solver.max_iter=9".to_string(), "problem.nu = 0.5".to_string()];
        let flags = vec![("solver.delta".to_string(), Value::Float(1e-3))];
        let c = resolve(&Config::default(), Some(&path), &sets, &flags).unwrap();
        assert_eq!(c.solver.rho0, 0.01);
        assert_eq!(c.solver.max_iter, 9);
        assert_eq!(c.solver.delta, 1e-3);
        assert_eq!(c.problem.loss, LossKind::Softmax);
        assert_eq!(c.problem.nu, 0.5);
    }

    #[test]
    fn type_and_key_errors() {
        let d = Config::default();
        assert!(resolve(&d, None, &["solver.max_iter=abc".into()], &[]).is_err());
        assert!(resolve(&d, None, &["solver.nope=1".into()], &[]).is_err());
        assert!(resolve(&d, None, &["solver.tau=0.5".into()], &[]).is_err());
        assert!(resolve(&d, None, &["noequals".into()], &[]).is_err());
        let c = resolve(&d, None, &["solver.mrf_solver=exhaustive".into()], &[]).unwrap();
        assert_eq!(c.solver.mrf_solver, MrfSolverKind::Exhaustive);
    }

    #[test]
    fn missing_file_names_path() {
        let err = resolve(&Config::default(), Some(Path::new("/no/such/cfg.toml")), &[], &[]).unwrap_err();
        assert!(format!("{err:#}").contains("/no/such/cfg.toml"));
    }
}
