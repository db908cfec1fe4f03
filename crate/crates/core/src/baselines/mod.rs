//! Comparison methods: constrained kernel k-means and discrete-continuous
//! coordinate descent.

mod coordinate;
mod kkmeans;

pub use coordinate::{coordinate_descent, MIN_INNER_NU};
pub use kkmeans::{kernel_kmeans, kkmeans_step, KKMeansResult, KKMeansState, KKMEANS_MAX_ROUNDS};
