//! Crawler-trace preprocessing: inter-arrival extraction, censoring of
//! crawl-outage gaps, batch detection, and the empirical statistics that feed
//! model construction. Fitting arrival matrices from these statistics is out
//! of scope; the pipeline emits the numbers a fitter (or a hand-entered
//! model file) consumes.

use crate::error::{Error, Result};

/// Empirical statistics of a batched arrival trace.
#[derive(Debug, Clone)]
pub struct TraceStats {
    pub n_batches: usize,
    pub mean_interarrival: f64,
    pub var_interarrival: f64,
    /// Lag-k autocorrelations for k = 1..=max_lag; empty when degenerate.
    pub lag_corr: Vec<f64>,
    /// `batch_pmf[k-1]` = fraction of batches of size k.
    pub batch_pmf: Vec<f64>,
    pub mean_batch: f64,
    pub warnings: Vec<String>,
}

/// First differences of a non-decreasing timestamp sequence.
pub fn interarrivals(timestamps: &[f64]) -> Result<Vec<f64>> {
    if timestamps.len() < 2 {
        return Err(Error::Trace(format!(
            "need at least 2 timestamps, got {}",
            timestamps.len()
        )));
    }
    let mut out = Vec::with_capacity(timestamps.len() - 1);
    for pair in timestamps.windows(2) {
        let d = pair[1] - pair[0];
        if d < 0.0 {
            return Err(Error::Trace(format!(
                "timestamps decrease: {} then {}",
                pair[0], pair[1]
            )));
        }
        out.push(d);
    }
    Ok(out)
}

/// Drop gaps above the cutoff (crawler-outage periods). Returns the kept
/// subsequence and the number removed.
pub fn censor(durations: &[f64], cutoff: f64) -> Result<(Vec<f64>, usize)> {
    if !(cutoff > 0.0) {
        return Err(Error::Trace(format!("cutoff must be positive, got {cutoff}")));
    }
    let kept: Vec<f64> = durations.iter().cloned().filter(|&d| d <= cutoff).collect();
    let removed = durations.len() - kept.len();
    Ok((kept, removed))
}

/// Collapse runs of sub-epsilon gaps into batch arrivals.
///
/// A maximal run of `r` gaps below `epsilon` yields one batch of `r + 1`
/// arrivals; gaps at or above `epsilon` become the inter-batch times. The
/// batch sizes sum to the original arrival count (`durations.len() + 1`).
pub fn batchify(durations: &[f64], epsilon: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    if !(epsilon > 0.0) {
        return Err(Error::Trace(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut gaps = Vec::new();
    let mut sizes = Vec::new();
    let mut current = 1usize;
    for &d in durations {
        if d < epsilon {
            current += 1;
        } else {
            sizes.push(current);
            gaps.push(d);
            current = 1;
        }
    }
    sizes.push(current);
    Ok((gaps, sizes))
}

/// Sample mean, unbiased variance, standard autocorrelations, and the batch
/// size distribution.
pub fn empirical_stats(
    batch_gaps: &[f64],
    batch_sizes: &[usize],
    max_lag: usize,
) -> Result<TraceStats> {
    if batch_gaps.len() < max_lag + 2 {
        return Err(Error::Trace(format!(
            "need at least {} gaps for lag-{max_lag} correlations, got {}",
            max_lag + 2,
            batch_gaps.len()
        )));
    }
    if batch_sizes.is_empty() {
        return Err(Error::Trace("no batch sizes".into()));
    }
    let mut warnings = Vec::new();
    let n = batch_gaps.len() as f64;
    let mean = batch_gaps.iter().sum::<f64>() / n;
    let var = batch_gaps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);

    let denom: f64 = batch_gaps.iter().map(|x| (x - mean).powi(2)).sum();
    let lag_corr = if denom == 0.0 {
        warnings.push("constant inter-batch times: autocorrelations undefined".to_string());
        Vec::new()
    } else {
        (1..=max_lag)
            .map(|k| {
                let num: f64 = batch_gaps
                    .windows(k + 1)
                    .map(|w| (w[0] - mean) * (w[k] - mean))
                    .sum();
                num / denom
            })
            .collect()
    };

    let kmax = *batch_sizes.iter().max().unwrap();
    let mut pmf = vec![0.0; kmax];
    for &s in batch_sizes {
        pmf[s - 1] += 1.0;
    }
    let total = batch_sizes.len() as f64;
    for p in pmf.iter_mut() {
        *p /= total;
    }
    let mean_batch = pmf.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();

    Ok(TraceStats {
        n_batches: batch_sizes.len(),
        mean_interarrival: mean,
        var_interarrival: var,
        lag_corr,
        batch_pmf: pmf,
        mean_batch,
        warnings,
    })
}
