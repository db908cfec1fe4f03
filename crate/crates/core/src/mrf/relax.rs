//! Lagrangian relaxation of the balance-clique bounds.
//!
//! With the count bounds moved into the objective only unaries and Potts
//! edges remain; the relaxed problem is solved per vertex, then by
//! alpha-expansion when Potts edges are present. Multipliers follow projected subgradient steps with
//! the Polyak step length; every few steps the relaxed argmin is repaired to
//! feasibility and polished by ICM. Used as a restart next to warm-started
//! ICM, which cannot make the coordinated moves tight bounds require.

use std::collections::HashSet;

use nalgebra::DMatrix;

use super::expansion::alpha_expansion;
use super::icm::icm;
use super::terms::TermIndex;
use super::{repair_feasibility, MrfInstance};
use crate::error::{Error, Result};
use crate::model::{EnergyTerm, Labeling};

pub(crate) const RELAX_ITERS: usize = 100;
/// Iterations without dual progress before the step factor is halved.
const STALL_ITERS: usize = 5;

/// Best feasible labeling found, with its energy, if any beats `upper_bound`.
pub(crate) fn relaxation_restart(
    mrf: &MrfInstance<'_>,
    upper_bound: f64,
    seed: u64,
) -> Result<Option<(Vec<usize>, f64)>> {
    let u = mrf.unaries;
    let (n, l) = (u.nrows(), u.ncols());
    let mut clamp = vec![None; n];
    let mut cliques = Vec::new();
    let mut memberships: Vec<Vec<usize>> = vec![Vec::new(); n];
    for term in mrf.energies {
        match term {
            EnergyTerm::UnaryClamp { vertex, label } => clamp[*vertex] = Some(*label),
            EnergyTerm::BalanceClique { members, lower, upper } => {
                for &m in members {
                    memberships[m].push(cliques.len());
                }
                cliques.push((members, lower, upper));
            }
            EnergyTerm::PairwisePotts { .. } => {}
        }
    }
    if cliques.is_empty() {
        return Ok(None);
    }
    // multipliers of the upper (count <= U) and lower (count >= L) bounds
    let mut mu_up = DMatrix::<f64>::zeros(cliques.len(), l);
    let mut mu_lo = DMatrix::<f64>::zeros(cliques.len(), l);
    let mut g_up = DMatrix::<f64>::zeros(cliques.len(), l);
    let mut g_lo = DMatrix::<f64>::zeros(cliques.len(), l);
    let mut y = vec![0usize; n];
    let index = TermIndex::new(mrf.energies, n, l, &y)?;
    let has_potts = index.neighbors.iter().any(|nb| !nb.is_empty());
    let mut adjusted = DMatrix::<f64>::zeros(n, l);
    let mut counts = vec![0usize; l];
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut seen = HashSet::new();
    let (mut theta, mut best_dual, mut stalled) = (1.0, f64::NEG_INFINITY, 0);

    for _ in 0..RELAX_ITERS {
        for v in 0..n {
            for c in 0..l {
                adjusted[(v, c)] = u[(v, c)]
                    + memberships[v]
                        .iter()
                        .map(|&q| mu_up[(q, c)] - mu_lo[(q, c)])
                        .sum::<f64>();
            }
            y[v] = match clamp[v] {
                Some(c) => c,
                None => (0..l).fold(0, |a, c| if adjusted[(v, c)] < adjusted[(v, a)] { c } else { a }),
            };
        }
        if has_potts {
            alpha_expansion(&adjusted, &index, &mut y)?;
        }
        // relaxed value of y; exact dual value only without Potts edges
        let mut dual: f64 = (0..n).map(|v| adjusted[(v, y[v])]).sum();
        for (i, nbrs) in index.neighbors.iter().enumerate() {
            for &(j, w) in nbrs {
                if i < j && y[i] != y[j] {
                    dual += w;
                }
            }
        }
        let mut norm_sq = 0.0;
        for (q, (members, lower, upper)) in cliques.iter().enumerate() {
            counts.iter_mut().for_each(|c| *c = 0);
            for &m in members.iter() {
                counts[y[m]] += 1;
            }
            for c in 0..l {
                dual -= mu_up[(q, c)] * upper[c] as f64 - mu_lo[(q, c)] * lower[c] as f64;
                g_up[(q, c)] = counts[c] as f64 - upper[c] as f64;
                g_lo[(q, c)] = lower[c] as f64 - counts[c] as f64;
                // only components that can move the projected multipliers count
                if mu_up[(q, c)] > 0.0 || g_up[(q, c)] > 0.0 {
                    norm_sq += g_up[(q, c)] * g_up[(q, c)];
                }
                if mu_lo[(q, c)] > 0.0 || g_lo[(q, c)] > 0.0 {
                    norm_sq += g_lo[(q, c)] * g_lo[(q, c)];
                }
            }
        }
        let feasible = norm_sq == 0.0;
        if seen.insert(y.clone()) {
            if let Some((candidate, energy)) = round(mrf, &y, seed)? {
                if best.as_ref().map_or(true, |b| energy < b.1) {
                    best = Some((candidate, energy));
                }
            }
        }
        if feasible {
            break;
        }
        let target = best.as_ref().map_or(upper_bound, |b| b.1.min(upper_bound));
        if dual > best_dual + 1e-12 * (1.0 + dual.abs()) {
            best_dual = dual;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled == STALL_ITERS {
                theta *= 0.5;
                stalled = 0;
            }
        }
        let step = theta * (target - dual).max(1e-12 * (1.0 + target.abs())) / norm_sq;
        mu_up.zip_apply(&g_up, |m, g| *m = (*m + step * g).max(0.0));
        mu_lo.zip_apply(&g_lo, |m, g| *m = (*m + step * g).max(0.0));
    }
    Ok(best.filter(|b| b.1 < upper_bound))
}

/// Repairs and polishes a relaxed labeling; `None` if repair gets stuck.
fn round(mrf: &MrfInstance<'_>, y: &[usize], seed: u64) -> Result<Option<(Vec<usize>, f64)>> {
    let l = mrf.n_labels();
    let start = match repair_feasibility(mrf, &Labeling::new(y.to_vec(), l)?) {
        Ok(s) => s,
        Err(Error::Infeasible(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut y = start.into_vec();
    let mut index = TermIndex::new(mrf.energies, y.len(), l, &y)?;
    icm(mrf.unaries, &mut index, &mut y, seed);
    let energy = mrf.energy(&y);
    Ok(energy.finite().map(|e| (y, e)))
}
