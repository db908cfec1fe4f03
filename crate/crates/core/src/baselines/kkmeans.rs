//! Constrained kernel k-means: the E-step is an MRF solve over
//! implicit-centroid kernel distances.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::model::{energy_of_terms, EnergyTerm, Labeling};
use crate::mrf::{solve_mrf, MrfInstance, MrfSolverKind};

pub const KKMEANS_MAX_ROUNDS: usize = 200;

/// Assignment with cached distances to the implicit cluster centroids.
#[derive(Clone, Debug, PartialEq)]
pub struct KKMeansState {
    pub assignment: Labeling,
    pub cluster_counts: Vec<usize>,
    /// `distances[(i, c)] = ||phi(x_i) - m_c||^2` in feature space.
    pub distances: DMatrix<f64>,
}

impl KKMeansState {
    /// Computes the distances for `assignment`; every cluster must be non-empty.
    pub fn new(kernel: &KernelMatrix, assignment: Labeling, n_labels: usize) -> Result<Self> {
        let n = kernel.dim();
        assignment.check_against(n, n_labels)?;
        let counts = assignment.counts(n_labels);
        if let Some(c) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidInput(format!("cluster {c} is empty")));
        }
        let z = DMatrix::from_fn(n, n_labels, |i, c| {
            if assignment[i] == c {
                1.0 / counts[c] as f64
            } else {
                0.0
            }
        });
        // K z holds the mean kernel value to each cluster, z^T K z the centroid norms
        let kz = kernel.apply(&z);
        let centroid_norms: Vec<f64> = (0..n_labels).map(|c| z.column(c).dot(&kz.column(c))).collect();
        let diag = kernel.diagonal();
        let distances = DMatrix::from_fn(n, n_labels, |i, c| {
            (diag[i] - 2.0 * kz[(i, c)] + centroid_norms[c]).max(0.0)
        });
        Ok(KKMeansState {
            assignment,
            cluster_counts: counts,
            distances,
        })
    }

    /// Within-cluster scatter plus the higher-order energy of the assignment.
    pub fn objective(&self, energies: &[EnergyTerm]) -> f64 {
        let scatter: f64 = (0..self.assignment.len())
            .map(|i| self.distances[(i, self.assignment[i])])
            .sum();
        (energy_of_terms(energies, self.assignment.as_slice()) + scatter).to_f64()
    }
}

/// One E-step (MRF solve over the current distances) followed by the
/// implicit M-step (distances recomputed from the new assignment).
///
/// A cluster left empty is re-seeded with the point farthest from its own
/// centroid among those whose move keeps the hard terms satisfied.
pub fn kkmeans_step(
    kernel: &KernelMatrix,
    state: &KKMeansState,
    energies: &[EnergyTerm],
    solver: MrfSolverKind,
    seed: u64,
) -> Result<KKMeansState> {
    let l = state.distances.ncols();
    let mrf = MrfInstance::new(&state.distances, energies)?;
    let result = solve_mrf(&mrf, &state.assignment, solver, seed)?;
    let mut y = result.labeling.into_vec();
    reseed_empty(&mut y, l, energies, |i, c| state.distances[(i, c)])?;
    KKMeansState::new(kernel, Labeling::new(y, l)?, l)
}

/// Fills empty clusters one at a time, each with the point of largest
/// `dist(i, y_i)` whose move keeps the hard terms satisfied.
fn reseed_empty(y: &mut [usize], l: usize, energies: &[EnergyTerm], dist: impl Fn(usize, usize) -> f64) -> Result<()> {
    loop {
        let mut counts = vec![0usize; l];
        for &c in y.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return Ok(());
        };
        let mut best: Option<(f64, usize)> = None;
        for i in 0..y.len() {
            if counts[y[i]] < 2 {
                continue;
            }
            let old = y[i];
            y[i] = empty;
            let ok = energy_of_terms(energies, y).is_finite();
            y[i] = old;
            let d = dist(i, old);
            if ok && best.map_or(true, |(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        match best {
            Some((_, i)) => y[i] = empty,
            None => {
                return Err(Error::Infeasible(format!(
                    "cluster {empty} is empty and no point can be moved into it"
                )))
            }
        }
    }
}

/// `||phi(x_i) - m_{y_i}||^2` for each point, using only non-empty clusters.
fn own_centroid_distances(kernel: &KernelMatrix, y: &[usize], l: usize) -> Vec<f64> {
    let n = y.len();
    let mut counts = vec![0usize; l];
    for &c in y {
        counts[c] += 1;
    }
    let z = DMatrix::from_fn(n, l, |i, c| if y[i] == c { 1.0 / counts[c] as f64 } else { 0.0 });
    let kz = kernel.apply(&z);
    let norms: Vec<f64> = (0..l).map(|c| z.column(c).dot(&kz.column(c))).collect();
    let diag = kernel.diagonal();
    (0..n)
        .map(|i| (diag[i] - 2.0 * kz[(i, y[i])] + norms[y[i]]).max(0.0))
        .collect()
}

#[derive(Clone, Debug)]
pub struct KKMeansResult {
    pub state: KKMeansState,
    pub rounds: usize,
    /// Objective after each round.
    pub objectives: Vec<f64>,
    pub converged: bool,
}

/// Iterates [`kkmeans_step`] until the assignment is a fixed point. Clusters
/// empty in `init` are re-seeded first.
pub fn kernel_kmeans(
    kernel: &KernelMatrix,
    energies: &[EnergyTerm],
    init: &Labeling,
    n_labels: usize,
    solver: MrfSolverKind,
    seed: u64,
    max_rounds: usize,
) -> Result<KKMeansResult> {
    init.check_against(kernel.dim(), n_labels)?;
    let mut y = init.as_slice().to_vec();
    let d0 = own_centroid_distances(kernel, &y, n_labels);
    reseed_empty(&mut y, n_labels, energies, |i, _| d0[i])?;
    let mut state = KKMeansState::new(kernel, Labeling::new(y, n_labels)?, n_labels)?;
    let mut objectives = Vec::new();
    let mut converged = false;
    let mut rounds = 0;
    while rounds < max_rounds {
        rounds += 1;
        let next = kkmeans_step(kernel, &state, energies, solver, seed.wrapping_add(rounds as u64))?;
        let same = next.assignment == state.assignment;
        state = next;
        objectives.push(state.objective(energies));
        if same {
            converged = true;
            break;
        }
    }
    Ok(KKMeansResult {
        state,
        rounds,
        objectives,
        converged,
    })
}
