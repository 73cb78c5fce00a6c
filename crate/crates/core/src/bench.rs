// SPDX-License-Identifier: Apache-2.0

//! Random range-query workloads over a built store.

use std::time::Duration;

use rand::{CryptoRng, Rng, RngCore};

use crate::crypto::{EntryCipher, MasterKey};
use crate::error::{Error, Result};
use crate::model::{EncodedColumnStore, SearchRange};
use crate::proxy::execute;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub queries: usize,
    pub range_size: usize,
    pub distinct_values: usize,
    pub mean_loads: f64,
    pub max_loads: u64,
    pub mean_scan: Duration,
    pub mean_cardinality: f64,
    pub max_peak_held: usize,
}

/// Sorted distinct plaintext values of a store.
pub fn distinct_values(store: &EncodedColumnStore, mk: &MasterKey) -> Result<Vec<Vec<u8>>> {
    let cipher = EntryCipher::for_column(store.kind, mk, &store.table_name, &store.column_name);
    let mut values = store.enc_dict.iter().map(|c| cipher.open(c)).collect::<Result<Vec<_>>>()?;
    values.sort_unstable();
    values.dedup();
    Ok(values)
}

/// Runs `queries` closed ranges, each spanning `range_size` consecutive
/// distinct values starting at a uniformly drawn position.
pub fn run_bench<R: RngCore + CryptoRng>(
    store: &EncodedColumnStore,
    mk: &MasterKey,
    queries: usize,
    range_size: usize,
    workers: usize,
    rng: &mut R,
) -> Result<BenchReport> {
    let values = distinct_values(store, mk)?;
    if range_size == 0 || range_size > values.len() {
        return Err(Error::InvalidParams(format!(
            "range size {range_size} must be between 1 and the {} distinct values",
            values.len()
        )));
    }
    let mut loads = 0u64;
    let mut max_loads = 0u64;
    let mut scan = Duration::ZERO;
    let mut rows = 0u64;
    let mut peak = 0usize;
    for _ in 0..queries {
        let start = rng.gen_range(0..=values.len() - range_size);
        let range = SearchRange::closed(values[start].clone(), values[start + range_size - 1].clone())?;
        let out = execute(store, &range, mk, rng, workers)?;
        loads += out.trace.loads;
        max_loads = max_loads.max(out.trace.loads);
        scan += out.scan_time;
        rows += out.rows.len() as u64;
        peak = peak.max(out.trace.peak_held);
    }
    let q = queries.max(1) as f64;
    Ok(BenchReport {
        queries,
        range_size,
        distinct_values: values.len(),
        mean_loads: loads as f64 / q,
        max_loads,
        mean_scan: scan.div_f64(q),
        mean_cardinality: rows as f64 / q,
        max_peak_held: peak,
    })
}
