//! Alpha-expansion for Potts energies; each move is one binary min-cut.

use nalgebra::DMatrix;

use super::maxflow::{maxflow_mincut, FlowGraph};
use super::terms::TermIndex;
use crate::error::Result;

const MAX_CYCLES: usize = 100;

/// Energy of `y` under unaries and Potts edges (clamps are checked separately).
fn energy(unaries: &DMatrix<f64>, index: &TermIndex, y: &[usize]) -> f64 {
    let mut e: f64 = y.iter().enumerate().map(|(i, &c)| unaries[(i, c)]).sum();
    for (i, nbrs) in index.neighbors.iter().enumerate() {
        for &(j, w) in nbrs {
            if i < j && y[i] != y[j] {
                e += w;
            }
        }
    }
    e
}

/// Best labeling reachable from `y` by letting any subset of vertices switch to `alpha`.
fn expansion_move(
    unaries: &DMatrix<f64>,
    index: &TermIndex,
    y: &[usize],
    alpha: usize,
    big_m: f64,
) -> Result<Vec<usize>> {
    let n = y.len();
    let (s, t) = (n, n + 1);
    // x_i = 1 (sink side) switches vertex i to alpha; cost paid for x_i = 1 on s->i,
    // for x_i = 0 on i->t
    let mut cost1 = vec![0.0; n];
    let mut cost0 = vec![0.0; n];
    for i in 0..n {
        let penalty = |c: usize| match index.clamp[i] {
            Some(k) if k != c => big_m,
            _ => 0.0,
        };
        cost0[i] = unaries[(i, y[i])] + penalty(y[i]);
        cost1[i] = unaries[(i, alpha)] + penalty(alpha);
    }
    let mut graph = FlowGraph::new(n + 2);
    for i in 0..n {
        for &(j, w) in &index.neighbors[i] {
            if i >= j {
                continue;
            }
            let pot = |a: usize, b: usize| if a != b { w } else { 0.0 };
            let e00 = pot(y[i], y[j]);
            let e01 = pot(y[i], alpha);
            let e10 = pot(alpha, y[j]);
            let e11 = 0.0;
            // E = e00 + (e10-e00) x_i + (e11-e10) x_j + (e01+e10-e00-e11)(1-x_i) x_j
            add_linear(&mut cost0, &mut cost1, i, e10 - e00);
            add_linear(&mut cost0, &mut cost1, j, e11 - e10);
            graph.add_edge(i, j, e01 + e10 - e00 - e11)?;
        }
    }
    for i in 0..n {
        let m = cost0[i].min(cost1[i]);
        graph.add_edge(s, i, cost1[i] - m)?;
        graph.add_edge(i, t, cost0[i] - m)?;
    }
    let (_, source_side) = maxflow_mincut(&graph, s, t)?;
    Ok((0..n).map(|i| if source_side[i] { y[i] } else { alpha }).collect())
}

fn add_linear(cost0: &mut [f64], cost1: &mut [f64], i: usize, coef: f64) {
    if coef >= 0.0 {
        cost1[i] += coef;
    } else {
        cost0[i] -= coef;
    }
}

/// Runs expansion cycles from the clamp-feasible labeling `y` in place.
pub(crate) fn alpha_expansion(unaries: &DMatrix<f64>, index: &TermIndex, y: &mut Vec<usize>) -> Result<()> {
    let l = index.n_labels;
    let total_weight: f64 = index.neighbors.iter().flat_map(|n| n.iter().map(|&(_, w)| w)).sum();
    let big_m = 1.0 + unaries.iter().map(|u| u.abs()).sum::<f64>() + total_weight;
    let mut current = energy(unaries, index, y);
    for _ in 0..MAX_CYCLES {
        let mut improved = false;
        for alpha in 0..l {
            let proposal = expansion_move(unaries, index, y, alpha, big_m)?;
            if !index.clamps_hold(&proposal) {
                continue;
            }
            let e = energy(unaries, index, &proposal);
            if e < current - 1e-12 * (1.0 + current.abs()) {
                *y = proposal;
                current = e;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(())
}
