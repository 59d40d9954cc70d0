use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DkdError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub iters: usize,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Times `iters` calls of `f` after `warmup` untimed calls.
pub fn benchmark_latency<F: FnMut()>(mut f: F, warmup: usize, iters: usize) -> Result<LatencySummary> {
    if iters == 0 {
        return Err(DkdError::Config("latency benchmark needs at least one iteration".into()));
    }
    for _ in 0..warmup {
        f();
    }
    let mut samples: Vec<f64> = (0..iters)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    Ok(LatencySummary {
        mean_ms: samples.iter().sum::<f64>() / iters as f64,
        p50_ms: percentile(&samples, 0.5),
        p95_ms: percentile(&samples, 0.95),
        iters,
    })
}
