//! Datasets, constraint specifications, file formats and metrics.

mod files;
mod image;
mod moons;
mod trace;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnergyTerm, Labeling};

pub use files::{
    load_dataset, load_labels, parse_features_csv, read_matrix, save_features_csv, save_labels, write_matrix,
    DataFormat, MATRIX_MAGIC,
};
pub use image::{load_image_problem, read_pgm, read_ppm, write_pgm, write_ppm, GrayImage, ImageProblem, RgbImage};
pub use moons::{distance_to_arc, generate_moons, MOON_OFFSET, MOON_RADIUS, PAIR_SPACING};
pub use trace::{parse_trace_csv, read_trace_csv, trace_csv_row, write_trace_csv, TRACE_HEADER};

/// Feature vectors with optional ground truth and seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// One row per vertex.
    pub features: DMatrix<f64>,
    pub true_labels: Option<Labeling>,
    /// Vertex -> label seeds (scribbles).
    pub fixed_labels: BTreeMap<usize, usize>,
}

impl Dataset {
    pub fn n_vertices(&self) -> usize {
        self.features.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            let row = pos % self.features.nrows().max(1);
            return Err(Error::InvalidInput(format!("non-finite feature in row {row}")));
        }
        if let Some(t) = &self.true_labels {
            if t.len() != self.n_vertices() {
                return Err(Error::Dimension(format!(
                    "{} true labels for {} vertices",
                    t.len(),
                    self.n_vertices()
                )));
            }
        }
        if let Some((&v, _)) = self.fixed_labels.iter().find(|(&v, _)| v >= self.n_vertices()) {
            return Err(Error::InvalidInput(format!("fixed label on vertex {v} out of range")));
        }
        Ok(())
    }
}

/// Shifts and scales every column to zero mean and unit variance.
/// Constant columns are only centered.
pub fn standardize(features: &DMatrix<f64>) -> DMatrix<f64> {
    let n = features.nrows();
    let mut out = features.clone();
    if n == 0 {
        return out;
    }
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n as f64).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliqueSpec {
    pub members: Vec<usize>,
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClampSpec {
    pub vertex: usize,
    pub label: usize,
}

/// Higher-order energies in file form.
///
/// ```toml
/// [[balance_cliques]]
/// members = [0, 4, 9]
/// lower = [1, 0]
/// upper = [3, 2]
///
/// [[potts_edges]]
/// i = 0
/// j = 1
/// weight = 0.5
///
/// [[clamps]]
/// vertex = 4
/// label = 1
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintSpec {
    pub balance_cliques: Vec<CliqueSpec>,
    pub potts_edges: Vec<EdgeSpec>,
    pub clamps: Vec<ClampSpec>,
}

impl ConstraintSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("constraint spec is always serializable")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Adds one clamp per seed of `dataset`.
    pub fn with_fixed_labels(mut self, fixed: &BTreeMap<usize, usize>) -> Self {
        self.clamps
            .extend(fixed.iter().map(|(&vertex, &label)| ClampSpec { vertex, label }));
        self
    }

    /// Energy terms in the order cliques, edges, clamps.
    pub fn to_energy_terms(&self) -> Vec<EnergyTerm> {
        let cliques = self.balance_cliques.iter().map(|c| EnergyTerm::BalanceClique {
            members: c.members.clone(),
            lower: c.lower.clone(),
            upper: c.upper.clone(),
        });
        let edges = self.potts_edges.iter().map(|e| EnergyTerm::PairwisePotts {
            i: e.i,
            j: e.j,
            weight: e.weight,
        });
        let clamps = self.clamps.iter().map(|c| EnergyTerm::UnaryClamp {
            vertex: c.vertex,
            label: c.label,
        });
        cliques.chain(edges).chain(clamps).collect()
    }

    /// Checks every term against the problem size.
    pub fn validate(&self, n_vertices: usize, n_labels: usize) -> Result<()> {
        for term in self.to_energy_terms() {
            term.validate(n_vertices, n_labels)?;
        }
        Ok(())
    }
}

/// Samples `n_cliques` member sets of `clique_size` distinct vertices and
/// bounds each label count within `slack` of its count under `true_labels`.
pub fn generate_balance_cliques(
    true_labels: &Labeling,
    n_labels: usize,
    n_cliques: usize,
    clique_size: usize,
    slack: usize,
    seed: u64,
) -> Result<ConstraintSpec> {
    let n = true_labels.len();
    if clique_size > n {
        return Err(Error::InvalidInput(format!(
            "clique size {clique_size} exceeds {n} vertices"
        )));
    }
    true_labels.check_against(n, n_labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let balance_cliques = (0..n_cliques)
        .map(|_| {
            let mut members = sample(&mut rng, n, clique_size).into_vec();
            members.sort_unstable();
            let mut counts = vec![0usize; n_labels];
            for &v in &members {
                counts[true_labels[v]] += 1;
            }
            CliqueSpec {
                lower: counts.iter().map(|&c| c.saturating_sub(slack)).collect(),
                upper: counts.iter().map(|&c| (c + slack).min(clique_size)).collect(),
                members,
            }
        })
        .collect();
    Ok(ConstraintSpec {
        balance_cliques,
        ..Default::default()
    })
}

/// Classification quality against a reference labeling.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    /// Fraction of evaluated vertices with the wrong label.
    pub error_rate: f64,
    /// `None` for labels absent from both prediction and truth.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean IoU over labels present in the truth.
    pub mean_iou: f64,
    pub evaluated: usize,
}

/// Compares `pred` with `truth`, skipping the vertices in `exclude`.
pub fn metrics(pred: &Labeling, truth: &Labeling, exclude: &[usize]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} labels, truth {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut skip = vec![false; pred.len()];
    for &v in exclude {
        if v < skip.len() {
            skip[v] = true;
        }
    }
    let n_labels = pred
        .as_slice()
        .iter()
        .chain(truth.as_slice())
        .max()
        .map_or(0, |&m| m + 1);
    let mut inter = vec![0usize; n_labels];
    let mut union = vec![0usize; n_labels];
    let mut in_truth = vec![false; n_labels];
    let mut wrong = 0;
    let mut evaluated = 0;
    for i in (0..pred.len()).filter(|&i| !skip[i]) {
        let (p, t) = (pred[i], truth[i]);
        evaluated += 1;
        in_truth[t] = true;
        if p == t {
            inter[p] += 1;
            union[p] += 1;
        } else {
            wrong += 1;
            union[p] += 1;
            union[t] += 1;
        }
    }
    let per_class_iou: Vec<Option<f64>> = (0..n_labels)
        .map(|c| (union[c] > 0).then(|| inter[c] as f64 / union[c] as f64))
        .collect();
    let present: Vec<f64> = (0..n_labels)
        .filter(|&c| in_truth[c])
        .map(|c| per_class_iou[c].unwrap_or(0.0))
        .collect();
    let mean_iou = if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(Metrics {
        error_rate: if evaluated == 0 {
            0.0
        } else {
            wrong as f64 / evaluated as f64
        },
        per_class_iou,
        mean_iou,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::energy_of_terms;

    fn lab(v: &[usize]) -> Labeling {
        Labeling::new(v.to_vec(), 10).unwrap()
    }

    #[test]
    fn metrics_examples() {
        let t = lab(&[0, 1, 1, 0]);
        let m = metrics(&t, &t, &[]).unwrap();
        assert_eq!(m.error_rate, 0.0);
        assert_eq!(m.mean_iou, 1.0);

        let c = lab(&[1, 0, 0, 1]);
        let m = metrics(&c, &t, &[]).unwrap();
        assert_eq!(m.error_rate, 1.0);
        assert_eq!(m.mean_iou, 0.0);

        let truth = lab(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let mut pred = truth.clone();
        pred.set(3, 4);
        assert!((metrics(&pred, &truth, &[]).unwrap().error_rate - 0.1).abs() < 1e-15);
        assert_eq!(metrics(&pred, &truth, &[3]).unwrap().error_rate, 0.0);
    }

    #[test]
    fn cliques_admit_truth() {
        let d = generate_moons(150, 4, 0.1, 3).unwrap();
        let truth = d.true_labels.unwrap();
        for slack in [0, 3, 25] {
            let spec = generate_balance_cliques(&truth, 4, 25, 25, slack, 5).unwrap();
            assert_eq!(spec.balance_cliques.len(), 25);
            let terms = spec.to_energy_terms();
            assert_eq!(energy_of_terms(&terms, truth.as_slice()).to_f64(), 0.0);
            if slack == 25 {
                for c in &spec.balance_cliques {
                    assert!(c.lower.iter().all(|&l| l == 0));
                    assert!(c.upper.iter().all(|&u| u == 25));
                }
            }
        }
    }

    #[test]
    fn constraint_spec_round_trip() {
        let spec = ConstraintSpec {
            balance_cliques: vec![CliqueSpec {
                members: vec![0, 2, 5],
                lower: vec![1, 0],
                upper: vec![2, 2],
            }],
            potts_edges: vec![EdgeSpec {
                i: 0,
                j: 1,
                weight: 0.1 + 0.2,
            }],
            clamps: vec![ClampSpec { vertex: 4, label: 1 }],
        };
        let text = spec.to_toml();
        assert_eq!(ConstraintSpec::from_toml(&text).unwrap(), spec);
        assert_eq!(ConstraintSpec::from_toml("").unwrap(), ConstraintSpec::default());
        assert!(ConstraintSpec::from_toml("[[clamps]]\nvertex = 1\nlable = 0\n").is_err());
    }

    #[test]
    fn standardize_moments() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 6.0, 5.0]);
        let z = standardize(&x);
        assert!(z.column(0).sum().abs() < 1e-12);
        assert!((z.column(0).norm_squared() / 4.0 - 1.0).abs() < 1e-12);
        assert_eq!(z.column(1).norm(), 0.0);
    }
}
