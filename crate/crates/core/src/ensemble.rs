//! Parallel replication with results merged in replica-index order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{run_replica, ReplicaOutput, ReplicaPlan};

/// Runs replicas `0..replicas` of `plan` on a pool of `workers` threads.
/// The result vector is indexed by replica, so it does not depend on
/// `workers`.
pub fn run_ensemble(
    plan: &ReplicaPlan,
    seed: u64,
    replicas: u64,
    workers: usize,
) -> Result<Vec<Result<ReplicaOutput>>> {
    let indices: Vec<u64> = (0..replicas).collect();
    run_indices(plan, seed, &indices, workers)
}

/// Runs the listed replicas; output follows the order of `indices`.
pub fn run_indices(
    plan: &ReplicaPlan,
    seed: u64,
    indices: &[u64],
    workers: usize,
) -> Result<Vec<Result<ReplicaOutput>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| indices.par_iter().map(|&i| run_replica(plan, seed, i)).collect()))
}

/// Splits ensemble results into completed replicas and the count of
/// population overflows. Other errors are returned.
pub fn completed(results: Vec<Result<ReplicaOutput>>) -> Result<(Vec<ReplicaOutput>, usize)> {
    let mut done = Vec::with_capacity(results.len());
    let mut overflowed = 0;
    for r in results {
        match r {
            Ok(out) => done.push(out),
            Err(Error::PopulationOverflow { .. }) => overflowed += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((done, overflowed))
}
