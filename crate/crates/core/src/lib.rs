//! Streaming PCA and subspace tracking with missing data.
//!
//! - [`subspace`]: orthonormal bases, masked least squares, similarity
//!   metrics, a diagonal-plus-rank-one eigensolver and batch PCA.
//! - [`datagen`]: spiked-model streams with Bernoulli missingness and
//!   static, abruptly changing or rotating ground truth.
//! - [`trackers`]: ISVD, MD-ISVD, Brand, PIMC, Oja, Krasulina, GROUSE, PAST
//!   and PETRELS behind the [`trackers::Tracker`] trait.
//! - [`theory`]: limiting ODEs of rank-one trackers and Monte Carlo
//!   comparisons against them.
//! - [`bench`]: the benchmark harness and command-line interface.

pub mod bench;
pub mod datagen;
pub mod subspace;
pub mod theory;
pub mod trackers;

/// Worker pool for independent trials. `SUBSTREAM_THREADS` caps its size;
/// by default it uses every logical core.
pub fn worker_pool() -> rayon::ThreadPool {
    let threads = std::env::var("SUBSTREAM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction")
}
