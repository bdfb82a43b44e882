//! Scoped worker pools.

use crate::error::{Error, Result};

/// Runs `op` inside a dedicated rayon pool of `workers` threads (at least one).
pub fn install<T: Send>(workers: usize, op: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(op))
}
