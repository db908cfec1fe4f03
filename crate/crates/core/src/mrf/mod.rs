//! Discrete labeling subproblem: unaries from the lookup table plus the
//! instance's higher-order energies.

mod expansion;
mod icm;
mod maxflow;
mod relax;
mod terms;

pub use maxflow::{maxflow_mincut, FlowGraph};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{energy_of_terms, EnergyTerm, ExtReal, GateDecision, Labeling};
use crate::prox::LookupTable;
use terms::TermIndex;

/// Labeling backends.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MrfSolverKind {
    #[default]
    Icm,
    AlphaExpansion,
    Exhaustive,
}

impl MrfSolverKind {
    pub fn name(self) -> &'static str {
        match self {
            MrfSolverKind::Icm => "icm",
            MrfSolverKind::AlphaExpansion => "alpha-expansion",
            MrfSolverKind::Exhaustive => "exhaustive",
        }
    }
}

impl fmt::Display for MrfSolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MrfSolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "icm" => Ok(MrfSolverKind::Icm),
            "alpha-expansion" | "alphaexpansion" | "expansion" => Ok(MrfSolverKind::AlphaExpansion),
            "exhaustive" => Ok(MrfSolverKind::Exhaustive),
            other => Err(Error::InvalidInput(format!("unknown mrf solver '{other}'"))),
        }
    }
}

/// Largest search space the exhaustive backend will enumerate.
pub const EXHAUSTIVE_LIMIT: f64 = 2e6;

/// Unaries plus higher-order terms.
#[derive(Clone, Copy, Debug)]
pub struct MrfInstance<'a> {
    unaries: &'a DMatrix<f64>,
    energies: &'a [EnergyTerm],
}

impl<'a> MrfInstance<'a> {
    pub fn new(unaries: &'a DMatrix<f64>, energies: &'a [EnergyTerm]) -> Result<Self> {
        if unaries.ncols() == 0 {
            return Err(Error::InvalidInput("need at least one label".into()));
        }
        if unaries.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidInput("unaries must be finite".into()));
        }
        for term in energies {
            term.validate(unaries.nrows(), unaries.ncols())?;
        }
        Ok(MrfInstance { unaries, energies })
    }

    pub fn n_vertices(&self) -> usize {
        self.unaries.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.unaries.ncols()
    }

    pub fn unaries(&self) -> &DMatrix<f64> {
        self.unaries
    }

    pub fn energies(&self) -> &[EnergyTerm] {
        self.energies
    }

    /// Unary sum plus higher-order energy.
    pub fn energy(&self, y: &[usize]) -> ExtReal {
        let higher = energy_of_terms(self.energies, y);
        if !higher.is_finite() {
            return ExtReal::Infinity;
        }
        let unary: f64 = y.iter().enumerate().map(|(i, &c)| self.unaries[(i, c)]).sum();
        higher + unary
    }

    fn has_cliques(&self) -> bool {
        self.energies
            .iter()
            .any(|t| matches!(t, EnergyTerm::BalanceClique { .. }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimality {
    Global,
    LocalOrHeuristic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MrfResult {
    pub labeling: Labeling,
    pub energy: ExtReal,
    pub optimality: Optimality,
}

/// Minimizes the MRF energy starting from `warm_start`.
///
/// An infeasible warm start is first passed through [`repair_feasibility`].
/// Every backend only accepts strict improvements, so the result is never
/// worse than a feasible warm start.
pub fn solve_mrf(mrf: &MrfInstance<'_>, warm_start: &Labeling, solver: MrfSolverKind, seed: u64) -> Result<MrfResult> {
    let n = mrf.n_vertices();
    let l = mrf.n_labels();
    warm_start.check_against(n, l)?;
    if solver == MrfSolverKind::AlphaExpansion && mrf.has_cliques() {
        return Err(Error::UnsupportedTerm(
            "alpha-expansion handles Potts and clamp terms only; balance cliques need icm".into(),
        ));
    }
    if solver == MrfSolverKind::Exhaustive {
        return exhaustive(mrf, warm_start);
    }
    let start = if mrf.energy(warm_start.as_slice()).is_finite() {
        warm_start.clone()
    } else {
        repair_feasibility(mrf, warm_start)?
    };
    let start_energy = mrf.energy(start.as_slice());
    let mut y = start.as_slice().to_vec();
    let mut index = TermIndex::new(mrf.energies, n, l, &y)?;
    match solver {
        MrfSolverKind::Icm => icm::icm(mrf.unaries, &mut index, &mut y, seed),
        MrfSolverKind::AlphaExpansion => expansion::alpha_expansion(mrf.unaries, &index, &mut y)?,
        MrfSolverKind::Exhaustive => unreachable!(),
    }
    let mut energy = mrf.energy(&y);
    let mut labeling = Labeling::new(y, l)?;
    // float accumulation in the incremental deltas must never make us worse
    if !(energy <= start_energy) {
        labeling = start;
        energy = start_energy;
    }
    if solver == MrfSolverKind::Icm && mrf.has_cliques() {
        if let Some(ub) = energy.finite() {
            if let Some((y, e)) = relax::relaxation_restart(mrf, ub, seed)? {
                labeling = Labeling::new(y, l)?;
                energy = ExtReal::Finite(e);
            }
        }
    }
    let optimality = if solver == MrfSolverKind::AlphaExpansion
        && l == 2
        && mrf.energies.iter().all(|t| match t {
            EnergyTerm::PairwisePotts { .. } => true,
            _ => false,
        }) {
        // binary expansion from either label is one exact submodular cut
        Optimality::Global
    } else {
        Optimality::LocalOrHeuristic
    };
    Ok(MrfResult {
        labeling,
        energy,
        optimality,
    })
}

fn exhaustive(mrf: &MrfInstance<'_>, warm_start: &Labeling) -> Result<MrfResult> {
    let n = mrf.n_vertices();
    let l = mrf.n_labels();
    let space = (l as f64).powi(n as i32);
    if space > EXHAUSTIVE_LIMIT {
        return Err(Error::InvalidInput(format!(
            "exhaustive search over {l}^{n} labelings exceeds the limit of {EXHAUSTIVE_LIMIT:e}"
        )));
    }
    let mut best = warm_start.as_slice().to_vec();
    let mut best_energy = mrf.energy(&best);
    let mut y = vec![0usize; n];
    loop {
        let e = mrf.energy(&y);
        if e < best_energy {
            best_energy = e;
            best.copy_from_slice(&y);
        }
        // odometer increment
        let mut k = 0;
        while k < n {
            y[k] += 1;
            if y[k] < l {
                break;
            }
            y[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    if !best_energy.is_finite() {
        return Err(Error::Infeasible("no labeling satisfies the hard terms".into()));
    }
    Ok(MrfResult {
        labeling: Labeling::new(best, l)?,
        energy: best_energy,
        optimality: Optimality::Global,
    })
}

/// Greedy repair of hard-term violations.
///
/// Clamped vertices are set first; then single-vertex moves that reduce the
/// total clique count violation are applied (cheapest energy increase first),
/// falling back to label swaps when no single move helps.
pub fn repair_feasibility(mrf: &MrfInstance<'_>, y: &Labeling) -> Result<Labeling> {
    let n = mrf.n_vertices();
    let l = mrf.n_labels();
    y.check_against(n, l)?;
    let mut y = y.as_slice().to_vec();
    let mut index = TermIndex::new(mrf.energies, n, l, &y)?;
    for v in 0..n {
        if let Some(c) = index.clamp[v] {
            if y[v] != c {
                index.apply_move(&mut y, v, c);
            }
        }
    }
    let u = mrf.unaries;
    while index.violation() > 0 {
        let mut best: Option<(i64, f64, usize, usize)> = None;
        for v in 0..n {
            if index.clamp[v].is_some() || index.vertex_cliques[v].is_empty() {
                continue;
            }
            let from = y[v];
            for to in 0..l {
                if to == from {
                    continue;
                }
                let dv = index.violation_delta(v, from, to);
                if dv >= 0 {
                    continue;
                }
                let de = u[(v, to)] - u[(v, from)] + index.potts_delta(&y, v, to);
                if best.map_or(true, |(bv, be, _, _)| (dv, de) < (bv, be)) {
                    best = Some((dv, de, v, to));
                }
            }
        }
        if let Some((_, _, v, to)) = best {
            index.apply_move(&mut y, v, to);
            continue;
        }
        if !repair_by_swap(&mut index, &mut y) {
            return Err(Error::Infeasible(format!(
                "greedy repair stuck with clique violation {}",
                index.violation()
            )));
        }
    }
    Labeling::new(y, l)
}

fn repair_by_swap(index: &mut TermIndex, y: &mut [usize]) -> bool {
    let n = y.len();
    let before = index.violation() as i64;
    for v in 0..n {
        for w in (v + 1)..n {
            if y[v] == y[w] || index.clamp[v].is_some() || index.clamp[w].is_some() {
                continue;
            }
            let (a, b) = (y[v], y[w]);
            index.apply_swap(y, v, w);
            if (index.violation() as i64) < before {
                return true;
            }
            // undo: labels are exchanged, swapping again restores them
            index.apply_swap(y, v, w);
            debug_assert!(y[v] == a && y[w] == b);
        }
    }
    false
}

/// Sufficient-descent test for a proposed labeling.
///
/// Accepts iff `sum_i (u[i][prop_i] - u[i][prev_i]) + E(prop) - E(prev) <= -delta`.
pub fn descent_gate(
    table: &LookupTable,
    energies: &[EnergyTerm],
    y_prev: &Labeling,
    y_prop: &Labeling,
    delta: f64,
) -> Result<GateDecision> {
    let n = table.n_vertices();
    let l = table.n_labels();
    y_prev.check_against(n, l)?;
    y_prop.check_against(n, l)?;
    let e_prev = energy_of_terms(energies, y_prev.as_slice());
    let e_prev = match e_prev.finite() {
        Some(e) => e,
        None => {
            return Err(Error::InvalidInput(
                "previous labeling violates a hard energy term".into(),
            ))
        }
    };
    let e_prop = match energy_of_terms(energies, y_prop.as_slice()).finite() {
        Some(e) => e,
        None => return Ok(GateDecision::Reject),
    };
    let mut diff = e_prop - e_prev;
    for i in 0..n {
        let (a, b) = (y_prev[i], y_prop[i]);
        if a != b {
            diff += table.value(i, b) - table.value(i, a);
        }
    }
    Ok(if diff <= -delta {
        GateDecision::Accept
    } else {
        GateDecision::Reject
    })
}

/// Post-hoc check that no admissible single-vertex move improves `y`.
pub fn is_icm_stable(mrf: &MrfInstance<'_>, y: &Labeling) -> Result<bool> {
    let index = TermIndex::new(mrf.energies, mrf.n_vertices(), mrf.n_labels(), y.as_slice())?;
    Ok(icm::is_single_move_stable(mrf.unaries, &index, y.as_slice()))
}
