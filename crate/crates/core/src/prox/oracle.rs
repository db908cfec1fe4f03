//! Brute-force reference for the proximal subproblems.
//!
//! Deliberately shares nothing with the closed-form and dual solvers apart
//! from the loss definition itself.

use crate::error::{Error, Result};
use crate::model::LossKind;

use super::{objective, ProxTarget};

const SUBGRADIENT_ITERS: usize = 100_000;
const MAX_SWEEPS: usize = 400;
const GOLDEN_ITERS: usize = 90;

/// Largest label count the oracle accepts.
pub const ORACLE_MAX_LABELS: usize = 8;

fn subgradient(loss: LossKind, label: usize, beta: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|g| *g = 0.0);
    match loss {
        LossKind::OneVsAllHinge => {
            for (j, g) in out.iter_mut().enumerate() {
                let s = if j == label { 1.0 } else { -1.0 };
                if 1.0 - s * beta[j] > 0.0 {
                    *g = -s;
                }
            }
        }
        LossKind::CrammerSinger => {
            let mut best = label;
            let mut top = beta[label];
            for (j, &b) in beta.iter().enumerate() {
                let v = if j == label { b } else { 1.0 + b };
                if v > top {
                    top = v;
                    best = j;
                }
            }
            if best != label {
                out[best] += 1.0;
                out[label] -= 1.0;
            }
        }
        LossKind::Softmax => {
            let max = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = beta.iter().map(|b| (b - max).exp()).sum();
            for (j, g) in out.iter_mut().enumerate() {
                *g = (beta[j] - max).exp() / total;
            }
            out[label] -= 1.0;
        }
    }
}

/// Minimizes `t -> f(x + t d)` over `[-h, h]` by golden-section search.
fn golden<F: Fn(f64) -> f64>(f: F, h: f64) -> (f64, f64) {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (-h, h);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Search directions for the polishing sweeps: coordinate axes, plus
/// indicator vectors of every label subset for the Crammer-Singer loss whose
/// kinks couple tied coordinates.
fn directions(loss: LossKind, n: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut d = vec![0.0; n];
            d[j] = 1.0;
            d
        })
        .collect();
    if loss == LossKind::CrammerSinger {
        for mask in 1u32..(1 << n) {
            if mask.count_ones() < 2 {
                continue;
            }
            dirs.push((0..n).map(|j| ((mask >> j) & 1) as f64).collect());
        }
    }
    dirs
}

/// Minimizes the proximal objective by subgradient descent with diminishing
/// steps followed by golden-section line-search sweeps.
pub fn prox_oracle(loss: LossKind, label: usize, target: &ProxTarget) -> Result<(Vec<f64>, f64)> {
    let z = &target.target;
    let rho = target.rho;
    let n = z.len();
    if n > ORACLE_MAX_LABELS || label >= n {
        return Err(Error::InvalidInput(format!(
            "oracle supports at most {ORACLE_MAX_LABELS} labels (got {n}, label {label})"
        )));
    }
    let f = |b: &[f64]| objective(loss, label, b, z, rho);

    let mut x = z.clone();
    let mut best = x.clone();
    let mut best_val = f(&x);
    let mut g = vec![0.0; n];
    for k in 0..SUBGRADIENT_ITERS {
        subgradient(loss, label, &x, &mut g);
        for j in 0..n {
            g[j] += rho * (x[j] - z[j]);
        }
        // strongly convex with modulus rho
        let step = 1.0 / (rho * (k as f64 + 1.0));
        for j in 0..n {
            x[j] -= step * g[j];
        }
        let v = f(&x);
        if v < best_val {
            best_val = v;
            best.copy_from_slice(&x);
        }
    }

    let dirs = directions(loss, n);
    let mut h = 1.0f64;
    let mut trial = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        let before = best_val;
        let mut largest_move = 0.0f64;
        for d in &dirs {
            let eval = |t: f64| {
                let mut y = best.clone();
                for j in 0..n {
                    y[j] += t * d[j];
                }
                f(&y)
            };
            let (t, v) = golden(eval, h);
            if v < best_val {
                for j in 0..n {
                    trial[j] = best[j] + t * d[j];
                }
                best.copy_from_slice(&trial);
                best_val = v;
                largest_move = largest_move.max(t.abs());
            }
        }
        if largest_move > 0.9 * h {
            h *= 2.0;
        } else {
            h = (4.0 * largest_move).max(1e-9).min(h);
        }
        if before - best_val <= 1e-15 * (1.0 + best_val.abs()) && largest_move < 0.9 * h {
            break;
        }
    }
    debug_assert!((best_val - f(&best)).abs() <= 1e-12 * (1.0 + best_val.abs()));
    Ok((best, best_val))
}
