//! Interleaved half-moon point clouds.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::Labeling;

/// Arc radius.
pub const MOON_RADIUS: f64 = 1.0;
/// Vertical offset between the two arcs of a pair.
pub const MOON_OFFSET: f64 = 0.5;
/// Vertical distance between stacked pairs.
pub const PAIR_SPACING: f64 = 2.0;

/// Center and orientation of the arc for `class`: `(cx, cy, upper)`.
fn arc(class: usize) -> (f64, f64, bool) {
    let pair = (class / 2) as f64;
    let base = pair * PAIR_SPACING;
    if class % 2 == 0 {
        (0.0, base, true)
    } else {
        (MOON_RADIUS, base + MOON_OFFSET, false)
    }
}

/// Point at angle `t` in `[0, pi]` on the arc of `class`.
fn arc_point(class: usize, t: f64) -> (f64, f64) {
    let (cx, cy, upper) = arc(class);
    if upper {
        (cx + MOON_RADIUS * t.cos(), cy + MOON_RADIUS * t.sin())
    } else {
        (cx - MOON_RADIUS * t.cos(), cy - MOON_RADIUS * t.sin())
    }
}

/// Euclidean distance from `(x, y)` to the arc of `class`.
pub fn distance_to_arc(class: usize, x: f64, y: f64) -> f64 {
    let (cx, cy, upper) = arc(class);
    let (dx, dy) = if upper { (x - cx, y - cy) } else { (cx - x, cy - y) };
    // upper half-plane in the arc's own frame
    let t = dy.atan2(dx).clamp(0.0, PI);
    let t = if dy < 0.0 {
        if dx >= 0.0 {
            0.0
        } else {
            PI
        }
    } else {
        t
    };
    let (px, py) = arc_point(class, t);
    ((x - px).powi(2) + (y - py).powi(2)).sqrt()
}

/// Samples `n_per_class` points per arc with isotropic Gaussian noise.
///
/// Classes 0 and 1 form the usual two-moons pair; classes 2 and 3 repeat it
/// shifted up by [`PAIR_SPACING`].
pub fn generate_moons(n_per_class: usize, n_classes: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n_classes != 2 && n_classes != 4 {
        return Err(Error::InvalidInput(format!(
            "moons support 2 or 4 classes, got {n_classes}"
        )));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = n_per_class * n_classes;
    // vertex order carries no class information
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    let mut features = DMatrix::zeros(n, 2);
    let mut labels = vec![0; n];
    for class in 0..n_classes {
        for k in 0..n_per_class {
            let t = rng.gen_range(0.0..=PI);
            let (x, y) = arc_point(class, t);
            let i = slots[class * n_per_class + k];
            features[(i, 0)] = x + noise_sigma * normal.sample(&mut rng);
            features[(i, 1)] = y + noise_sigma * normal.sample(&mut rng);
            labels[i] = class;
        }
    }
    Ok(Dataset {
        features,
        true_labels: Some(Labeling::new(labels, n_classes)?),
        fixed_labels: Default::default(),
    })
}
