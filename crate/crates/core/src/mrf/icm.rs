//! Iterated conditional modes with two-vertex repair passes.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::terms::TermIndex;

/// Moves must improve by more than this to be taken; prevents cycling on ties.
const IMPROVE_EPS: f64 = 1e-12;
const MAX_ROUNDS: usize = 1000;

/// Runs ICM from the feasible labeling `y` in place.
pub(crate) fn icm(unaries: &DMatrix<f64>, index: &mut TermIndex, y: &mut [usize], seed: u64) {
    let n = y.len();
    let l = index.n_labels;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let scale = |x: f64| IMPROVE_EPS * (1.0 + x.abs());
    let pairs = coupled_pairs(index, &order);

    for _ in 0..MAX_ROUNDS {
        let mut improved = true;
        while improved {
            improved = false;
            for &v in &order {
                let from = y[v];
                let mut best = from;
                let mut best_delta = 0.0;
                for to in 0..l {
                    if to == from || !index.move_admissible(v, from, to) {
                        continue;
                    }
                    let delta = unaries[(v, to)] - unaries[(v, from)] + index.potts_delta(y, v, to);
                    if delta < best_delta - scale(unaries[(v, from)]) {
                        best_delta = delta;
                        best = to;
                    }
                }
                if best != from {
                    index.apply_move(y, v, best);
                    improved = true;
                }
            }
        }
        if !pair_pass(unaries, index, y, &pairs) && !star_pass(unaries, index, y, &order) {
            break;
        }
    }
}

/// Vertex pairs that share a clique or a Potts edge, in `order`. Other
/// pairs gain nothing over two single moves.
fn coupled_pairs(index: &TermIndex, order: &[usize]) -> Vec<(usize, usize)> {
    let mut rank = vec![0; order.len()];
    for (k, &v) in order.iter().enumerate() {
        rank[v] = k;
    }
    let mut pairs = Vec::new();
    for &v in order {
        let mut partners: Vec<usize> = index.neighbors[v].iter().map(|&(w, _)| w).collect();
        for &c in &index.vertex_cliques[v] {
            partners.extend(index.clique_members[c].iter().copied());
        }
        partners.retain(|&w| rank[w] > rank[v]);
        partners.sort_unstable_by_key(|&w| rank[w]);
        partners.dedup();
        pairs.extend(partners.into_iter().map(|w| (v, w)));
    }
    pairs
}

/// One pass of joint relabelings of coupled pairs, each vertex taking a new
/// label; returns whether any move was applied.
fn pair_pass(unaries: &DMatrix<f64>, index: &mut TermIndex, y: &mut [usize], pairs: &[(usize, usize)]) -> bool {
    let l = index.n_labels;
    let mut any = false;
    for &(v, w) in pairs {
        let (lv, lw) = (y[v], y[w]);
        let base = unaries[(v, lv)] + unaries[(w, lw)];
        let tol = IMPROVE_EPS * (1.0 + unaries[(v, lv)].abs() + unaries[(w, lw)].abs());
        let mut best: Option<(f64, usize, usize)> = None;
        for a in (0..l).filter(|&a| a != lv) {
            if index.clamp[v].is_some_and(|c| c != a) {
                continue;
            }
            let dv = index.potts_delta(y, v, a);
            index.apply_move(y, v, a);
            for b in (0..l).filter(|&b| b != lw) {
                if index.clamp[w].is_some_and(|c| c != b) {
                    continue;
                }
                let delta = unaries[(v, a)] + unaries[(w, b)] - base + dv + index.potts_delta(y, w, b);
                if delta < best.map_or(-tol, |b| b.0) {
                    index.apply_move(y, w, b);
                    if index.cliques_hold(v) && index.cliques_hold(w) {
                        best = Some((delta, a, b));
                    }
                    index.apply_move(y, w, lw);
                }
            }
            index.apply_move(y, v, lv);
        }
        if let Some((_, a, b)) = best {
            index.apply_move(y, v, a);
            index.apply_move(y, w, b);
            any = true;
        }
    }
    any
}

/// Largest Potts neighbourhood relabeled jointly with its centre.
const STAR_NEIGHBORS: usize = 4;

/// One pass of joint relabelings of each vertex with its heaviest Potts
/// neighbours (at most [`STAR_NEIGHBORS`]), plus at most one vertex outside
/// the block when the clique counts need it; returns whether any move was applied.
fn star_pass(unaries: &DMatrix<f64>, index: &mut TermIndex, y: &mut [usize], order: &[usize]) -> bool {
    let l = index.n_labels;
    let mut any = false;
    for &v in order {
        let mut nbrs = index.neighbors[v].clone();
        if nbrs.len() < 2 {
            continue;
        }
        nbrs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut block = vec![v];
        for (w, _) in nbrs {
            if !block.contains(&w) && block.len() <= STAR_NEIGHBORS {
                block.push(w);
            }
        }
        if block.len() < 3 {
            continue;
        }
        let old: Vec<usize> = block.iter().map(|&b| y[b]).collect();
        let tol = IMPROVE_EPS * (1.0 + block.iter().map(|&b| unaries[(b, y[b])].abs()).sum::<f64>());
        let mut best: Option<(f64, Vec<usize>, Option<(usize, usize)>)> = None;
        let mut labels = vec![0usize; block.len()];
        loop {
            let allowed = block
                .iter()
                .zip(&labels)
                .all(|(&b, &c)| index.clamp[b].map_or(true, |k| k == c));
            if allowed && labels != old {
                let mut delta = 0.0;
                for (&b, &c) in block.iter().zip(&labels) {
                    delta += unaries[(b, c)] - unaries[(b, y[b])] + index.potts_delta(y, b, c);
                    index.apply_move(y, b, c);
                }
                if block.iter().all(|&b| index.cliques_hold(b)) {
                    if delta < best.as_ref().map_or(-tol, |b| b.0) {
                        best = Some((delta, labels.clone(), None));
                    }
                } else {
                    // one more vertex from an affected clique may restore the counts
                    for u in compensators(index, &block) {
                        let (from, fixed) = (y[u], index.clamp[u]);
                        for c in (0..l).filter(|&c| c != from && fixed.map_or(true, |k| k == c)) {
                            let d = delta + unaries[(u, c)] - unaries[(u, from)] + index.potts_delta(y, u, c);
                            if d < best.as_ref().map_or(-tol, |b| b.0) {
                                index.apply_move(y, u, c);
                                if block.iter().chain([&u]).all(|&b| index.cliques_hold(b)) {
                                    best = Some((d, labels.clone(), Some((u, c))));
                                }
                                index.apply_move(y, u, from);
                            }
                        }
                    }
                }
                for (&b, &c) in block.iter().zip(&old).rev() {
                    index.apply_move(y, b, c);
                }
            }
            // odometer over the block's labels
            let mut k = 0;
            while k < labels.len() {
                labels[k] += 1;
                if labels[k] < l {
                    break;
                }
                labels[k] = 0;
                k += 1;
            }
            if k == labels.len() {
                break;
            }
        }
        if let Some((_, labels, extra)) = best {
            for (&b, &c) in block.iter().zip(&labels) {
                index.apply_move(y, b, c);
            }
            if let Some((u, c)) = extra {
                index.apply_move(y, u, c);
            }
            any = true;
        }
    }
    any
}

/// Vertices outside `block` that share a clique with it.
fn compensators(index: &TermIndex, block: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = block
        .iter()
        .flat_map(|&b| index.vertex_cliques[b].iter())
        .flat_map(|&c| index.clique_members[c].iter().copied())
        .filter(|u| !block.contains(u))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Whether no admissible single-vertex move strictly improves the energy.
pub(crate) fn is_single_move_stable(unaries: &DMatrix<f64>, index: &TermIndex, y: &[usize]) -> bool {
    (0..y.len()).all(|v| {
        let from = y[v];
        (0..index.n_labels).all(|to| {
            to == from
                || !index.move_admissible(v, from, to)
                || unaries[(v, to)] - unaries[(v, from)] + index.potts_delta(y, v, to)
                    >= -IMPROVE_EPS * (1.0 + unaries[(v, from)].abs())
        })
    })
}
