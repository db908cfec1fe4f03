#![allow(dead_code)]

use dcadmm::kernel::{build_kernel, KernelMatrix, KernelSpec};
use dcadmm::model::{EnergyTerm, Labeling, LossKind, ProblemInstance};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// `A A^T / n + shift I`.
pub fn random_spd(rng: &mut impl Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n, 1.0);
    let mut k = &a * a.transpose() / n as f64;
    for i in 0..n {
        k[(i, i)] += shift;
    }
    // exact symmetry
    (&k + k.transpose()) * 0.5
}

pub fn rbf_kernel(rng: &mut impl Rng, n: usize, sigma: f64, gamma: f64) -> KernelMatrix {
    let x = random_matrix(rng, n, 2, 1.0);
    build_kernel(&x, &KernelSpec::Rbf { sigma }, gamma).unwrap()
}

pub fn random_loss(rng: &mut impl Rng) -> LossKind {
    *LossKind::ALL.choose(rng).unwrap()
}

pub fn random_potts(rng: &mut impl Rng, n: usize, n_edges: usize, max_w: f64) -> Vec<EnergyTerm> {
    (0..n_edges)
        .map(|_| {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            EnergyTerm::PairwisePotts {
                i,
                j,
                weight: rng.gen_range(0.0..max_w),
            }
        })
        .collect()
}

/// A balance clique over random members whose bounds admit `y` with `slack`.
pub fn clique_around(rng: &mut impl Rng, y: &[usize], n_labels: usize, size: usize, slack: usize) -> EnergyTerm {
    let mut members: Vec<usize> = rand::seq::index::sample(rng, y.len(), size).into_vec();
    members.sort_unstable();
    let mut counts = vec![0usize; n_labels];
    for &m in &members {
        counts[y[m]] += 1;
    }
    EnergyTerm::BalanceClique {
        lower: counts.iter().map(|&c| c.saturating_sub(slack)).collect(),
        upper: counts.iter().map(|&c| (c + slack).min(size)).collect(),
        members,
    }
}

pub fn random_labeling(rng: &mut impl Rng, n: usize, n_labels: usize) -> Labeling {
    Labeling::new((0..n).map(|_| rng.gen_range(0..n_labels)).collect(), n_labels).unwrap()
}

/// Small well-conditioned instance: RBF kernel with a generous shift,
/// optional Potts edges and one balance clique.
pub fn small_instance(
    seed: u64,
    n: usize,
    n_labels: usize,
    loss: LossKind,
    potts: bool,
    clique: bool,
) -> ProblemInstance {
    let mut r = rng(seed);
    let kernel = rbf_kernel(&mut r, n, 0.7, 0.5);
    let mut energies = Vec::new();
    if potts {
        energies.extend(random_potts(&mut r, n, n, 0.3));
    }
    if clique {
        let hidden = random_labeling(&mut r, n, n_labels);
        energies.push(clique_around(&mut r, hidden.as_slice(), n_labels, n.min(6), 1));
    }
    ProblemInstance::new(kernel, n_labels, loss, energies, r.gen_range(0.05..0.5)).unwrap()
}
