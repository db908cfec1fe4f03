//! Domain types shared by every solver component, and evaluation of the
//! model's energies, losses, regularizer and augmented Lagrangian.
//!
//! The joint model couples a labeling `y` of the vertices with kernel
//! coefficients `alpha` (one column per label). Classifier scores are
//! `K alpha`, the per-vertex loss is evaluated on a score row, the
//! regularizer is `nu <alpha, K alpha>` and higher-order terms act on the
//! labeling only.

use std::fmt;
use std::ops::{Add, AddAssign, Index};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::mrf::MrfSolverKind;

/// Dense `|V| x |L|` matrix holding alpha, beta or lambda.
pub type ScoreMatrix = DMatrix<f64>;

/// A label index per vertex.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Labeling(Vec<usize>);

impl Labeling {
    /// Validates every entry against `n_labels`.
    pub fn new(labels: Vec<usize>, n_labels: usize) -> Result<Self> {
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_labels) {
            return Err(Error::InvalidInput(format!(
                "label {l} at vertex {i} out of range (n_labels = {n_labels})"
            )));
        }
        Ok(Labeling(labels))
    }

    pub fn constant(n_vertices: usize, label: usize) -> Self {
        Labeling(vec![label; n_vertices])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn set(&mut self, vertex: usize, label: usize) {
        self.0[vertex] = label;
    }

    /// Number of vertices whose labels differ.
    pub fn hamming(&self, other: &Labeling) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    /// Per-label counts.
    pub fn counts(&self, n_labels: usize) -> Vec<usize> {
        let mut counts = vec![0; n_labels];
        for &l in &self.0 {
            counts[l] += 1;
        }
        counts
    }

    pub fn check_against(&self, n_vertices: usize, n_labels: usize) -> Result<()> {
        if self.len() != n_vertices {
            return Err(Error::Dimension(format!(
                "labeling has {} entries, expected {n_vertices}",
                self.len()
            )));
        }
        if let Some(&l) = self.0.iter().find(|&&l| l >= n_labels) {
            return Err(Error::InvalidInput(format!(
                "label {l} out of range (n_labels = {n_labels})"
            )));
        }
        Ok(())
    }
}

impl Index<usize> for Labeling {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

/// A real number or `+inf`, used for energies with hard constraints.
///
/// Infinity is a distinct variant so that comparisons between a violated
/// and a satisfied configuration never depend on a sentinel magnitude.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub enum ExtReal {
    Finite(f64),
    Infinity,
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinity => None,
        }
    }

    /// The value as an `f64`, mapping infinity to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::Finite(v) => v,
            ExtReal::Infinity => f64::INFINITY,
        }
    }
}

impl Add for ExtReal {
    type Output = ExtReal;

    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::Infinity,
        }
    }
}

impl Add<f64> for ExtReal {
    type Output = ExtReal;

    fn add(self, rhs: f64) -> ExtReal {
        self + ExtReal::Finite(rhs)
    }
}

impl AddAssign for ExtReal {
    fn add_assign(&mut self, rhs: ExtReal) {
        *self = *self + rhs;
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::Infinity => write!(f, "inf"),
        }
    }
}

/// Per-vertex classification loss `l(y_i; beta_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `sum_j max(0, 1 - s_j beta_j)`, `s_j = +1` for the true label, `-1` otherwise.
    OneVsAllHinge,
    /// `max_j([j != y] + beta_j) - beta_y`.
    CrammerSinger,
    /// `-beta_y + log sum_j exp(beta_j)`.
    Softmax,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::OneVsAllHinge, LossKind::CrammerSinger, LossKind::Softmax];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::OneVsAllHinge => "one-vs-all-hinge",
            LossKind::CrammerSinger => "crammer-singer",
            LossKind::Softmax => "softmax",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "one-vs-all-hinge" | "hinge" | "ova" => Ok(LossKind::OneVsAllHinge),
            "crammer-singer" | "cs" | "svm" => Ok(LossKind::CrammerSinger),
            "softmax" | "logistic" => Ok(LossKind::Softmax),
            other => Err(Error::InvalidInput(format!("unknown loss '{other}'"))),
        }
    }
}

/// Labeling energies beyond the classifier loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EnergyTerm {
    /// Infinite unless `y[vertex] == label`.
    UnaryClamp { vertex: usize, label: usize },
    /// `weight * [y_i != y_j]`.
    PairwisePotts { i: usize, j: usize, weight: f64 },
    /// Zero when every per-label count inside `members` lies in
    /// `[lower[j], upper[j]]`, infinite otherwise.
    BalanceClique {
        members: Vec<usize>,
        lower: Vec<usize>,
        upper: Vec<usize>,
    },
}

impl EnergyTerm {
    pub fn validate(&self, n_vertices: usize, n_labels: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        match self {
            EnergyTerm::UnaryClamp { vertex, label } => {
                if *vertex >= n_vertices || *label >= n_labels {
                    return bad(format!("clamp ({vertex}, {label}) out of range"));
                }
            }
            EnergyTerm::PairwisePotts { i, j, weight } => {
                if *i >= n_vertices || *j >= n_vertices {
                    return bad(format!("potts edge ({i}, {j}) out of range"));
                }
                if i == j {
                    return bad(format!("potts edge ({i}, {j}) is a self loop"));
                }
                if !(weight.is_finite() && *weight >= 0.0) {
                    return bad(format!("potts weight {weight} must be finite and >= 0"));
                }
            }
            EnergyTerm::BalanceClique { members, lower, upper } => {
                if lower.len() != n_labels || upper.len() != n_labels {
                    return bad(format!(
                        "balance clique bounds need {n_labels} entries, got {}/{}",
                        lower.len(),
                        upper.len()
                    ));
                }
                let mut seen = vec![false; n_vertices];
                for &m in members {
                    if m >= n_vertices {
                        return bad(format!("clique member {m} out of range"));
                    }
                    if seen[m] {
                        return bad(format!("clique member {m} repeated"));
                    }
                    seen[m] = true;
                }
                let size = members.len();
                for (j, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
                    if lo > hi || hi > size {
                        return bad(format!(
                            "clique bound for label {j} violates 0 <= {lo} <= {hi} <= {size}"
                        ));
                    }
                }
                let (sum_lo, sum_hi): (usize, usize) = (lower.iter().sum(), upper.iter().sum());
                if sum_lo > size || sum_hi < size {
                    return bad(format!(
                        "clique bounds cannot be met: sum lower {sum_lo}, sum upper {sum_hi}, size {size}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Value of the term at labeling `y`.
    pub fn eval(&self, y: &[usize]) -> ExtReal {
        match self {
            EnergyTerm::UnaryClamp { vertex, label } => {
                if y[*vertex] == *label {
                    ExtReal::ZERO
                } else {
                    ExtReal::Infinity
                }
            }
            EnergyTerm::PairwisePotts { i, j, weight } => {
                if y[*i] == y[*j] {
                    ExtReal::ZERO
                } else {
                    ExtReal::Finite(*weight)
                }
            }
            EnergyTerm::BalanceClique { members, lower, upper } => {
                let mut counts = vec![0usize; lower.len()];
                for &m in members {
                    counts[y[m]] += 1;
                }
                let ok = counts
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(&c, (&lo, &hi))| lo <= c && c <= hi);
                if ok {
                    ExtReal::ZERO
                } else {
                    ExtReal::Infinity
                }
            }
        }
    }
}

/// Sum of all terms at `y`.
pub fn energy_of_terms(terms: &[EnergyTerm], y: &[usize]) -> ExtReal {
    let mut total = ExtReal::ZERO;
    for t in terms {
        total += t.eval(y);
        if !total.is_finite() {
            break;
        }
    }
    total
}

/// The frozen input to the solver.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    kernel: KernelMatrix,
    n_labels: usize,
    loss: LossKind,
    energies: Vec<EnergyTerm>,
    nu: f64,
}

impl ProblemInstance {
    pub fn new(
        kernel: KernelMatrix,
        n_labels: usize,
        loss: LossKind,
        energies: Vec<EnergyTerm>,
        nu: f64,
    ) -> Result<Self> {
        if n_labels == 0 {
            return Err(Error::InvalidInput("need at least one label".into()));
        }
        // nu = 0 is admitted for degenerate test problems; the driver and the
        // supervised solver handle it explicitly.
        if !(nu.is_finite() && nu >= 0.0) {
            return Err(Error::InvalidInput(format!("nu must be >= 0, got {nu}")));
        }
        let n = kernel.dim();
        for term in &energies {
            term.validate(n, n_labels)?;
        }
        Ok(ProblemInstance {
            kernel,
            n_labels,
            loss,
            energies,
            nu,
        })
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.kernel
    }

    pub fn n_vertices(&self) -> usize {
        self.kernel.dim()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn energies(&self) -> &[EnergyTerm] {
        &self.energies
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn zeros(&self) -> ScoreMatrix {
        ScoreMatrix::zeros(self.n_vertices(), self.n_labels)
    }

    pub(crate) fn check_scores(&self, m: &ScoreMatrix, what: &str) -> Result<()> {
        if m.nrows() != self.n_vertices() || m.ncols() != self.n_labels {
            return Err(Error::Dimension(format!(
                "{what} is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                self.n_vertices(),
                self.n_labels
            )));
        }
        Ok(())
    }
}

/// Solver parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Initial penalty.
    pub rho0: f64,
    /// Growth factor of the penalty schedule.
    pub tau: f64,
    /// Optional lower bound on the penalty target.
    pub rho_max_override: Option<f64>,
    /// Sufficient-descent margin for accepting a new labeling.
    pub delta: f64,
    /// Diagonal shift added to the kernel.
    pub gamma: f64,
    pub max_iter: usize,
    /// Stop threshold on `||K alpha - beta||_F / sqrt(|V||L|)`.
    pub primal_tol: f64,
    /// Stop threshold on `||alpha_{t+1} - alpha_t||_F / sqrt(|V||L|)`.
    pub step_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub mrf_solver: MrfSolverKind,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho0: 1e-3,
            tau: 1.003,
            rho_max_override: None,
            delta: 1e-4,
            gamma: 0.0,
            max_iter: 10_000,
            primal_tol: 1e-9,
            step_tol: 1e-10,
            cg_tol: 1e-10,
            cg_max_iter: 2_000,
            mrf_solver: MrfSolverKind::Icm,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return bad(format!("rho0 must be > 0, got {}", self.rho0));
        }
        if !(self.tau > 1.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 1, got {}", self.tau));
        }
        if let Some(r) = self.rho_max_override {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("rho_max_override must be > 0, got {r}"));
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be >= 0, got {}", self.delta));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        for (name, v) in [
            ("primal_tol", self.primal_tol),
            ("step_tol", self.step_tol),
            ("cg_tol", self.cg_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.cg_max_iter == 0 {
            return bad("cg_max_iter must be positive".into());
        }
        Ok(())
    }
}

/// One iterate `(alpha, beta, lambda, y)` with its penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub alpha: ScoreMatrix,
    pub beta: ScoreMatrix,
    pub lambda: ScoreMatrix,
    pub y: Labeling,
    pub rho: f64,
    pub iteration: usize,
}

/// Outcome of the sufficient-descent test on a proposed labeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateDecision {
    Accept,
    /// The proposal was discarded and the previous labeling kept.
    Reject,
}

impl GateDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            GateDecision::Accept => "accepted",
            GateDecision::Reject => "rejected",
        }
    }
}

impl FromStr for GateDecision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accepted" => Ok(GateDecision::Accept),
            "rejected" => Ok(GateDecision::Reject),
            other => Err(Error::InvalidInput(format!("unknown gate outcome '{other}'"))),
        }
    }
}

/// Diagnostics recorded once per iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    pub rho: f64,
    pub lagrangian: f64,
    pub primal_residual: f64,
    pub alpha_step: f64,
    pub labels_changed: usize,
    pub gate: GateDecision,
    pub mrf_energy: f64,
    pub wall_time_ms: f64,
}

/// Sum of the higher-order energies at `y`.
pub fn eval_total_energy(instance: &ProblemInstance, y: &Labeling) -> ExtReal {
    energy_of_terms(&instance.energies, y.as_slice())
}

/// `l(y_i; beta_i)`.
pub fn eval_loss(loss: LossKind, label: usize, beta: &[f64]) -> f64 {
    match loss {
        LossKind::OneVsAllHinge => beta
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                let s = if j == label { 1.0 } else { -1.0 };
                (1.0 - s * b).max(0.0)
            })
            .sum(),
        LossKind::CrammerSinger => {
            let top = beta
                .iter()
                .enumerate()
                .map(|(j, &b)| if j == label { b } else { 1.0 + b })
                .fold(f64::NEG_INFINITY, f64::max);
            (top - beta[label]).max(0.0)
        }
        LossKind::Softmax => log_sum_exp(beta) - beta[label],
    }
}

/// Overflow-safe `log sum exp`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// `sum_i l(y_i; scores_i)`.
pub fn eval_total_loss(loss: LossKind, y: &Labeling, scores: &ScoreMatrix) -> f64 {
    let mut row = vec![0.0; scores.ncols()];
    let mut total = 0.0;
    for i in 0..scores.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = scores[(i, j)];
        }
        total += eval_loss(loss, y[i], &row);
    }
    total
}

/// `nu <alpha, K alpha>`.
pub fn eval_regularizer(instance: &ProblemInstance, alpha: &ScoreMatrix) -> Result<f64> {
    instance.check_scores(alpha, "alpha")?;
    let k_alpha = instance.kernel.matvec(alpha)?;
    Ok(instance.nu * alpha.dot(&k_alpha))
}

/// Supervised objective `sum_i l(y_i; K_i alpha) + f(alpha)` for fixed labels.
pub fn eval_supervised_objective(instance: &ProblemInstance, y: &Labeling, alpha: &ScoreMatrix) -> Result<f64> {
    instance.check_scores(alpha, "alpha")?;
    y.check_against(instance.n_vertices(), instance.n_labels)?;
    let k_alpha = instance.kernel.matvec(alpha)?;
    Ok(eval_total_loss(instance.loss, y, &k_alpha) + instance.nu * alpha.dot(&k_alpha))
}

/// The discrete-continuous augmented Lagrangian
/// `sum_i l(y_i; beta_i) + f(alpha) + E(y) + <lambda, K alpha - beta> + rho/2 ||K alpha - beta||^2`.
pub fn eval_augmented_lagrangian(instance: &ProblemInstance, state: &SolverState) -> Result<ExtReal> {
    instance.check_scores(&state.alpha, "alpha")?;
    instance.check_scores(&state.beta, "beta")?;
    instance.check_scores(&state.lambda, "lambda")?;
    state.y.check_against(instance.n_vertices(), instance.n_labels)?;
    let k_alpha = instance.kernel.matvec(&state.alpha)?;
    Ok(lagrangian_with_kalpha(instance, state, &k_alpha))
}

/// Same as [`eval_augmented_lagrangian`] with `K alpha` supplied by the caller.
pub(crate) fn lagrangian_with_kalpha(
    instance: &ProblemInstance,
    state: &SolverState,
    k_alpha: &ScoreMatrix,
) -> ExtReal {
    let energy = eval_total_energy(instance, &state.y);
    if !energy.is_finite() {
        return ExtReal::Infinity;
    }
    let residual = k_alpha - &state.beta;
    let value = eval_total_loss(instance.loss, &state.y, &state.beta)
        + instance.nu * state.alpha.dot(k_alpha)
        + state.lambda.dot(&residual)
        + 0.5 * state.rho * residual.norm_squared();
    energy + value
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_instance(n: usize, l: usize, loss: LossKind, nu: f64) -> ProblemInstance {
        ProblemInstance::new(KernelMatrix::identity(n), l, loss, vec![], nu).unwrap()
    }

    #[test]
    fn potts_energy() {
        let term = EnergyTerm::PairwisePotts {
            i: 0,
            j: 1,
            weight: 2.5,
        };
        assert_eq!(term.eval(&[1, 1]), ExtReal::ZERO);
        assert_eq!(term.eval(&[0, 1]), ExtReal::Finite(2.5));
    }

    #[test]
    fn balance_clique_violation_is_infinite() {
        let inst = ProblemInstance::new(
            KernelMatrix::identity(4),
            2,
            LossKind::OneVsAllHinge,
            vec![EnergyTerm::BalanceClique {
                members: vec![0, 1, 2, 3],
                lower: vec![1, 1],
                upper: vec![3, 3],
            }],
            1.0,
        )
        .unwrap();
        let y = Labeling::constant(4, 0);
        assert_eq!(eval_total_energy(&inst, &y), ExtReal::Infinity);
        let y = Labeling::new(vec![0, 1, 0, 0], 2).unwrap();
        assert_eq!(eval_total_energy(&inst, &y), ExtReal::ZERO);
    }

    #[test]
    fn clamp_energy() {
        let t = EnergyTerm::UnaryClamp { vertex: 1, label: 2 };
        assert_eq!(t.eval(&[0, 2]), ExtReal::ZERO);
        assert_eq!(t.eval(&[2, 0]), ExtReal::Infinity);
    }

    #[test]
    fn term_validation() {
        let bad = [
            EnergyTerm::PairwisePotts {
                i: 0,
                j: 0,
                weight: 1.0,
            },
            EnergyTerm::PairwisePotts {
                i: 0,
                j: 1,
                weight: -1.0,
            },
            EnergyTerm::UnaryClamp { vertex: 5, label: 0 },
            EnergyTerm::BalanceClique {
                members: vec![0, 1],
                lower: vec![2, 1],
                upper: vec![2, 2],
            },
            EnergyTerm::BalanceClique {
                members: vec![0, 0],
                lower: vec![0, 0],
                upper: vec![2, 2],
            },
        ];
        for t in bad {
            assert!(t.validate(3, 2).is_err(), "{t:?} should be rejected");
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(eval_loss(LossKind::OneVsAllHinge, 0, &[2.0, -2.0]), 0.0);
        assert_eq!(eval_loss(LossKind::CrammerSinger, 0, &[0.0, 0.0]), 1.0);
        let v = eval_loss(LossKind::Softmax, 0, &[0.0, 0.0]);
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for loss in LossKind::ALL {
            for _ in 0..1000 {
                let l = rng.gen_range(1..=6);
                let beta: Vec<f64> = (0..l).map(|_| rng.gen_range(-10.0..10.0)).collect();
                let y = rng.gen_range(0..l);
                assert!(eval_loss(loss, y, &beta) >= 0.0);
            }
        }
    }

    #[test]
    fn softmax_is_overflow_free() {
        let v = eval_loss(LossKind::Softmax, 1, &[1e4, -1e4, 0.0]);
        assert!(v.is_finite());
        assert!((v - 2e4).abs() < 1e-9);
        let v = eval_loss(LossKind::Softmax, 0, &[1e4, 1e4]);
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn regularizer_examples() {
        let inst = identity_instance(2, 2, LossKind::Softmax, 1.0);
        let alpha = ScoreMatrix::identity(2, 2);
        assert!((eval_regularizer(&inst, &alpha).unwrap() - 2.0).abs() < 1e-15);

        let inst = identity_instance(3, 2, LossKind::Softmax, 0.05);
        let alpha = ScoreMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, 0.0, 1.5]);
        let expected = 0.05 * alpha.norm_squared();
        assert!((eval_regularizer(&inst, &alpha).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn regularizer_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let k = &a * a.transpose() + DMatrix::identity(4, 4) * 0.1;
            let alpha = DMatrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
            let inst = ProblemInstance::new(
                KernelMatrix::dense(k.clone(), 0.0).unwrap(),
                3,
                LossKind::Softmax,
                vec![],
                0.7,
            )
            .unwrap();
            // trace(alpha^T K alpha), accumulated entry by entry
            let mut direct = 0.0;
            for c in 0..3 {
                for i in 0..4 {
                    for j in 0..4 {
                        direct += alpha[(i, c)] * k[(i, j)] * alpha[(j, c)];
                    }
                }
            }
            let got = eval_regularizer(&inst, &alpha).unwrap();
            assert!((got - 0.7 * direct).abs() < 1e-12);
        }
    }

    #[test]
    fn lagrangian_at_zero_state() {
        let inst = identity_instance(1, 2, LossKind::OneVsAllHinge, 1.0);
        let state = SolverState {
            alpha: inst.zeros(),
            beta: inst.zeros(),
            lambda: inst.zeros(),
            y: Labeling::constant(1, 0),
            rho: 1.0,
            iteration: 0,
        };
        assert_eq!(eval_augmented_lagrangian(&inst, &state).unwrap(), ExtReal::Finite(2.0));
    }

    #[test]
    fn lagrangian_independent_of_lambda_when_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inst = identity_instance(3, 2, LossKind::CrammerSinger, 0.3);
        let alpha = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let mut state = SolverState {
            beta: alpha.clone(),
            alpha,
            lambda: inst.zeros(),
            y: Labeling::new(vec![0, 1, 1], 2).unwrap(),
            rho: 2.0,
            iteration: 0,
        };
        let base = eval_augmented_lagrangian(&inst, &state).unwrap();
        let loss = eval_total_loss(inst.loss(), &state.y, &state.beta);
        let reg = eval_regularizer(&inst, &state.alpha).unwrap();
        assert_eq!(base, ExtReal::Finite(loss + reg));
        state.lambda = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-5.0..5.0));
        assert_eq!(eval_augmented_lagrangian(&inst, &state).unwrap(), base);
    }

    #[test]
    fn lagrangian_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for loss in LossKind::ALL {
            let (n, l) = (5, 3);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let k = &a * a.transpose();
            let energies = vec![
                EnergyTerm::PairwisePotts {
                    i: 0,
                    j: 3,
                    weight: 0.7,
                },
                EnergyTerm::PairwisePotts {
                    i: 1,
                    j: 2,
                    weight: 1.3,
                },
            ];
            let inst =
                ProblemInstance::new(KernelMatrix::dense(k.clone(), 0.0).unwrap(), l, loss, energies, 0.2).unwrap();
            let rnd = |rng: &mut ChaCha8Rng| DMatrix::from_fn(n, l, |_, _| rng.gen_range(-2.0..2.0));
            let state = SolverState {
                alpha: rnd(&mut rng),
                beta: rnd(&mut rng),
                lambda: rnd(&mut rng),
                y: Labeling::new(vec![0, 2, 1, 0, 2], l).unwrap(),
                rho: 1.7,
                iteration: 0,
            };
            // naive re-evaluation with explicit loops
            let mut total = 0.0;
            for i in 0..n {
                let mut row = vec![0.0; l];
                for c in 0..l {
                    row[c] = state.beta[(i, c)];
                }
                let y = state.y[i];
                total += match loss {
                    LossKind::OneVsAllHinge => (0..l)
                        .map(|c| {
                            let m = if c == y { row[c] } else { -row[c] };
                            if m < 1.0 {
                                1.0 - m
                            } else {
                                0.0
                            }
                        })
                        .sum::<f64>(),
                    LossKind::CrammerSinger => {
                        let mut best = row[y];
                        for c in 0..l {
                            if c != y && 1.0 + row[c] > best {
                                best = 1.0 + row[c];
                            }
                        }
                        best - row[y]
                    }
                    LossKind::Softmax => row.iter().map(|b| b.exp()).sum::<f64>().ln() - row[y],
                };
            }
            for c in 0..l {
                for i in 0..n {
                    let mut ka = 0.0;
                    for j in 0..n {
                        ka += k[(i, j)] * state.alpha[(j, c)];
                    }
                    total += 0.2 * state.alpha[(i, c)] * ka;
                    let r = ka - state.beta[(i, c)];
                    total += state.lambda[(i, c)] * r + 0.5 * 1.7 * r * r;
                }
            }
            total += 1.3; // only the (1, 2) edge is cut
            let got = eval_augmented_lagrangian(&inst, &state).unwrap().to_f64();
            assert!(
                (got - total).abs() <= 1e-10 * (1.0 + total.abs()),
                "{loss}: {got} vs {total}"
            );
        }
    }

    #[test]
    fn energy_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut terms: Vec<EnergyTerm> = (0..10)
            .map(|_| {
                let i = rng.gen_range(0..6);
                EnergyTerm::PairwisePotts {
                    i,
                    j: (i + rng.gen_range(1..6)) % 6,
                    weight: rng.gen_range(0.0..2.0),
                }
            })
            .collect();
        let y: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let base = energy_of_terms(&terms, &y).to_f64();
        for _ in 0..20 {
            use rand::seq::SliceRandom;
            terms.shuffle(&mut rng);
            assert!((energy_of_terms(&terms, &y).to_f64() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn ext_real_ordering() {
        assert!(ExtReal::Finite(1e300) < ExtReal::Infinity);
        assert!(ExtReal::Finite(-1.0) < ExtReal::Finite(0.0));
        assert_eq!(ExtReal::Finite(1.0) + ExtReal::Infinity, ExtReal::Infinity);
    }

    #[test]
    fn labeling_rejects_out_of_range() {
        assert!(Labeling::new(vec![0, 3], 3).is_err());
        assert!(Labeling::new(vec![0, 2], 3).is_ok());
    }
}
