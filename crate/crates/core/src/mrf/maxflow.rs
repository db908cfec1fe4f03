//! Edmonds-Karp max-flow: augmenting paths found by breadth-first search.
//!
//! `O(V E^2)` in the worst case; the graphs built here have one node per MRF
//! vertex and a handful of edges per node.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Arc {
    to: usize,
    cap: f64,
    rev: usize,
}

/// Directed capacitated graph stored as residual adjacency lists.
#[derive(Clone, Debug)]
pub struct FlowGraph {
    adj: Vec<Vec<Arc>>,
}

impl FlowGraph {
    pub fn new(n_nodes: usize) -> Self {
        FlowGraph {
            adj: vec![Vec::new(); n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    /// Adds `from -> to` with capacity `cap`.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) -> Result<()> {
        let n = self.adj.len();
        if from >= n || to >= n {
            return Err(Error::Dimension(format!("edge {from}->{to} outside {n} nodes")));
        }
        if !(cap.is_finite() && cap >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "capacity must be finite and >= 0, got {cap}"
            )));
        }
        if from == to || cap == 0.0 {
            return Ok(());
        }
        let rf = self.adj[to].len();
        let rt = self.adj[from].len();
        self.adj[from].push(Arc { to, cap, rev: rf });
        self.adj[to].push(Arc {
            to: from,
            cap: 0.0,
            rev: rt,
        });
        Ok(())
    }
}

/// Maximum `source -> sink` flow and the minimum cut's source side (nodes
/// reachable from `source` in the final residual graph).
pub fn maxflow_mincut(graph: &FlowGraph, source: usize, sink: usize) -> Result<(f64, Vec<bool>)> {
    let n = graph.n_nodes();
    if source >= n || sink >= n || source == sink {
        return Err(Error::InvalidInput(format!(
            "bad terminals {source}, {sink} for {n} nodes"
        )));
    }
    let mut adj = graph.adj.clone();
    let mut flow = 0.0;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    loop {
        parent.iter_mut().for_each(|p| *p = None);
        let mut seen = vec![false; n];
        seen[source] = true;
        let mut queue = VecDeque::from([source]);
        'bfs: while let Some(u) = queue.pop_front() {
            for (k, arc) in adj[u].iter().enumerate() {
                if arc.cap > 0.0 && !seen[arc.to] {
                    seen[arc.to] = true;
                    parent[arc.to] = Some((u, k));
                    if arc.to == sink {
                        break 'bfs;
                    }
                    queue.push_back(arc.to);
                }
            }
        }
        if !seen[sink] {
            return Ok((flow, seen));
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = sink;
        while let Some((u, k)) = parent[v] {
            bottleneck = bottleneck.min(adj[u][k].cap);
            v = u;
        }
        let mut v = sink;
        while let Some((u, k)) = parent[v] {
            let rev = adj[u][k].rev;
            adj[u][k].cap -= bottleneck;
            adj[v][rev].cap += bottleneck;
            v = u;
        }
        flow += bottleneck;
    }
}
