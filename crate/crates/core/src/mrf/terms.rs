//! Per-vertex indexing of energy terms for incremental move evaluation.

use crate::error::{Error, Result};
use crate::model::EnergyTerm;

#[derive(Clone, Debug)]
pub(crate) struct Clique {
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
    pub counts: Vec<usize>,
}

impl Clique {
    fn violation(&self) -> usize {
        self.counts
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&c, (&lo, &hi))| lo.saturating_sub(c) + c.saturating_sub(hi))
            .sum()
    }
}

/// Energy terms reorganized around vertices, with live clique counts for
/// the labeling it was built from.
#[derive(Clone, Debug)]
pub(crate) struct TermIndex {
    pub clamp: Vec<Option<usize>>,
    pub neighbors: Vec<Vec<(usize, f64)>>,
    pub cliques: Vec<Clique>,
    pub vertex_cliques: Vec<Vec<usize>>,
    pub clique_members: Vec<Vec<usize>>,
    pub n_labels: usize,
}

impl TermIndex {
    pub fn new(energies: &[EnergyTerm], n_vertices: usize, n_labels: usize, y: &[usize]) -> Result<Self> {
        let mut clamp = vec![None; n_vertices];
        let mut neighbors = vec![Vec::new(); n_vertices];
        let mut cliques = Vec::new();
        let mut vertex_cliques = vec![Vec::new(); n_vertices];
        let mut clique_members = Vec::new();
        for term in energies {
            match term {
                EnergyTerm::UnaryClamp { vertex, label } => match clamp[*vertex] {
                    Some(existing) if existing != *label => {
                        return Err(Error::Infeasible(format!(
                            "vertex {vertex} clamped to both {existing} and {label}"
                        )))
                    }
                    _ => clamp[*vertex] = Some(*label),
                },
                EnergyTerm::PairwisePotts { i, j, weight } => {
                    if *weight > 0.0 {
                        neighbors[*i].push((*j, *weight));
                        neighbors[*j].push((*i, *weight));
                    }
                }
                EnergyTerm::BalanceClique { members, lower, upper } => {
                    let id = cliques.len();
                    let mut counts = vec![0; n_labels];
                    for &m in members {
                        counts[y[m]] += 1;
                        vertex_cliques[m].push(id);
                    }
                    clique_members.push(members.clone());
                    cliques.push(Clique {
                        lower: lower.clone(),
                        upper: upper.clone(),
                        counts,
                    });
                }
            }
        }
        Ok(TermIndex {
            clamp,
            neighbors,
            cliques,
            vertex_cliques,
            clique_members,
            n_labels,
        })
    }

    /// Total count violation over all cliques.
    pub fn violation(&self) -> usize {
        self.cliques.iter().map(Clique::violation).sum()
    }

    pub fn clamps_hold(&self, y: &[usize]) -> bool {
        self.clamp.iter().zip(y).all(|(c, &l)| c.map_or(true, |c| c == l))
    }

    /// Change in Potts energy when `v` alone moves from `y[v]` to `to`.
    pub fn potts_delta(&self, y: &[usize], v: usize, to: usize) -> f64 {
        let from = y[v];
        let mut delta = 0.0;
        for &(w, weight) in &self.neighbors[v] {
            let before = (from != y[w]) as u8 as f64;
            let after = (to != y[w]) as u8 as f64;
            delta += weight * (after - before);
        }
        delta
    }

    /// Whether every clique holding `v` is inside its bounds.
    pub fn cliques_hold(&self, v: usize) -> bool {
        self.vertex_cliques[v].iter().all(|&c| {
            let q = &self.cliques[c];
            q.counts
                .iter()
                .zip(q.lower.iter().zip(&q.upper))
                .all(|(&n, (&lo, &hi))| lo <= n && n <= hi)
        })
    }

    /// Whether moving `v` from `from` to `to` keeps every clique inside its bounds.
    pub fn move_admissible(&self, v: usize, from: usize, to: usize) -> bool {
        if self.clamp[v].map_or(false, |c| c != to) {
            return false;
        }
        self.vertex_cliques[v].iter().all(|&c| {
            let q = &self.cliques[c];
            q.counts[from] > q.lower[from] && q.counts[to] < q.upper[to]
        })
    }

    /// Change in violation when `v` moves from `from` to `to`.
    pub fn violation_delta(&self, v: usize, from: usize, to: usize) -> i64 {
        let mut delta = 0i64;
        for &c in &self.vertex_cliques[v] {
            let q = &self.cliques[c];
            let f = q.counts[from];
            let t = q.counts[to];
            let viol =
                |count: usize, lo: usize, hi: usize| (lo.saturating_sub(count) + count.saturating_sub(hi)) as i64;
            delta += viol(f - 1, q.lower[from], q.upper[from]) - viol(f, q.lower[from], q.upper[from]);
            delta += viol(t + 1, q.lower[to], q.upper[to]) - viol(t, q.lower[to], q.upper[to]);
        }
        delta
    }

    pub fn apply_move(&mut self, y: &mut [usize], v: usize, to: usize) {
        let from = y[v];
        for &c in &self.vertex_cliques[v] {
            self.cliques[c].counts[from] -= 1;
            self.cliques[c].counts[to] += 1;
        }
        y[v] = to;
    }

    pub fn apply_swap(&mut self, y: &mut [usize], v: usize, w: usize) {
        let (a, b) = (y[v], y[w]);
        self.apply_move(y, v, b);
        self.apply_move(y, w, a);
    }
}
