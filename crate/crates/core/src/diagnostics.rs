//! Posterior summaries and convergence diagnostics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rhat above this value triggers a convergence warning.
pub const RHAT_THRESHOLD: f64 = 1.01;

/// Minimum retained draws per chain for a posterior summary.
pub const MIN_DRAWS_PER_CHAIN: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least {needed} chains, got {got}")]
    TooFewChains { needed: usize, got: usize },
    #[error("need at least {needed} draws per chain, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("draws contain a non-finite value")]
    NonFinite,
    #[error("no summary for key quantity {0:?}")]
    MissingQuantity(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub name: String,
    pub median: f64,
    pub sd: f64,
    pub mean: f64,
    /// Monte Carlo standard error of the mean, `sd / sqrt(ess)`.
    pub mcse: f64,
    pub cri_lower: f64,
    pub cri_upper: f64,
    pub rhat: f64,
    pub ess: f64,
}

/// Sum that does not depend on the order of `values`.
fn stable_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_variance(values: &[f64]) -> f64 {
    let m = mean_of(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// Type-7 quantile of sorted data (linear interpolation between order
/// statistics at `h = (n - 1) q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_lengths<C: AsRef<[f64]>>(chains: &[C], min_chains: usize, min_len: usize) -> Result<usize, DiagnosticsError> {
    if chains.len() < min_chains {
        return Err(DiagnosticsError::TooFewChains {
            needed: min_chains,
            got: chains.len(),
        });
    }
    let shortest = chains.iter().map(|c| c.as_ref().len()).min().unwrap_or(0);
    if shortest < min_len {
        return Err(DiagnosticsError::TooFewDraws {
            needed: min_len,
            got: shortest,
        });
    }
    if chains.iter().any(|c| c.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(DiagnosticsError::NonFinite);
    }
    Ok(shortest)
}

/// Split-Rhat: every chain is cut into two halves and the classic
/// potential scale reduction factor is computed over the halves.
/// Floored at 1.
pub fn split_rhat<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64, DiagnosticsError> {
    let len = check_lengths(chains, 1, 4)?;
    let half = len / 2;
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = &c.as_ref()[..len];
        halves.push(&c[..half]);
        halves.push(&c[len - half..]);
    }
    Ok(rhat_of(&halves))
}

fn rhat_of(segments: &[&[f64]]) -> f64 {
    let n = segments[0].len() as f64;
    let mut means: Vec<f64> = segments.iter().map(|s| mean_of(s)).collect();
    let mut vars: Vec<f64> = segments.iter().map(|s| sample_variance(s)).collect();
    let w = stable_sum(&mut vars) / vars.len() as f64;
    if w <= 0.0 {
        return 1.0;
    }
    let grand = stable_sum(&mut means) / means.len() as f64;
    let mut dev: Vec<f64> = means.iter().map(|m| (m - grand) * (m - grand)).collect();
    let b = n * stable_sum(&mut dev) / (segments.len() - 1) as f64;
    // Below 1 only when the segment means agree better than chance; the
    // statistic is reported as at least 1.
    (((n - 1.0) / n * w + b / n) / w).sqrt().max(1.0)
}

/// Effective sample size from the multi-chain autocorrelation estimate,
/// truncated by Geyer's initial monotone positive sequence.
pub fn effective_sample_size<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64, DiagnosticsError> {
    let n = check_lengths(chains, 1, 4)?;
    let m = chains.len();
    let total = (m * n) as f64;
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c.as_ref()[..n]).collect();

    let means: Vec<f64> = chains.iter().map(|c| mean_of(c)).collect();
    let autocov = |c: usize, lag: usize| -> f64 {
        let x = chains[c];
        let mu = means[c];
        x[..n - lag]
            .iter()
            .zip(&x[lag..])
            .map(|(a, b)| (a - mu) * (b - mu))
            .sum::<f64>()
            / n as f64
    };
    let mean_autocov = |lag: usize| -> f64 {
        let mut v: Vec<f64> = (0..m).map(|c| autocov(c, lag)).collect();
        stable_sum(&mut v) / m as f64
    };

    let nf = n as f64;
    let acov0 = mean_autocov(0);
    let w = acov0 * nf / (nf - 1.0);
    let between = if m > 1 {
        let mut ms = means.clone();
        let grand = stable_sum(&mut ms) / m as f64;
        let mut dev: Vec<f64> = means.iter().map(|v| (v - grand) * (v - grand)).collect();
        stable_sum(&mut dev) / (m - 1) as f64
    } else {
        0.0
    };
    let var_plus = w * (nf - 1.0) / nf + between;
    if !(var_plus > 0.0) {
        return Ok(1.0);
    }
    let rho = |lag: usize| 1.0 - (w - mean_autocov(lag)) / var_plus;

    // Pair sums P_k = rho(2k) + rho(2k + 1), kept while positive and forced
    // to be non-increasing.
    let mut sum_pairs = 0.0;
    let mut previous = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let lag_even = 2 * k;
        let pair = if lag_even == 0 { 1.0 } else { rho(lag_even) } + rho(lag_even + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(previous);
        sum_pairs += pair;
        previous = pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / total);
    Ok((total / tau).clamp(1.0, total))
}

/// Summarizes a scalar from its per-chain draws.
pub fn posterior_summary<C: AsRef<[f64]>>(
    chains: &[C],
    name: &str,
) -> Result<PosteriorSummary, DiagnosticsError> {
    check_lengths(chains, 2, MIN_DRAWS_PER_CHAIN)?;
    let mut pooled: Vec<f64> = chains.iter().flat_map(|c| c.as_ref().iter().copied()).collect();
    pooled.sort_by(f64::total_cmp);
    let count = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / count;
    let sd = (pooled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0)).sqrt();

    let constant = pooled.first() == pooled.last();
    let (rhat, ess) = if constant {
        (1.0, 1.0)
    } else {
        (split_rhat(chains)?, effective_sample_size(chains)?)
    };
    Ok(PosteriorSummary {
        name: name.to_string(),
        median: quantile_sorted(&pooled, 0.5),
        sd,
        mean,
        mcse: sd / ess.sqrt(),
        cri_lower: quantile_sorted(&pooled, 0.025),
        cri_upper: quantile_sorted(&pooled, 0.975),
        rhat,
        ess,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedQuantity {
    pub name: String,
    pub rhat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceWarning {
    pub quantities: Vec<FlaggedQuantity>,
    pub message: String,
}

/// Flags every key quantity whose Rhat exceeds [`RHAT_THRESHOLD`].
pub fn convergence_check(
    summaries: &[PosteriorSummary],
    key_quantities: &[&str],
) -> Result<Option<ConvergenceWarning>, DiagnosticsError> {
    let mut flagged = Vec::new();
    for &key in key_quantities {
        let s = summaries
            .iter()
            .find(|s| s.name == key)
            .ok_or_else(|| DiagnosticsError::MissingQuantity(key.to_string()))?;
        if s.rhat > RHAT_THRESHOLD {
            flagged.push(FlaggedQuantity {
                name: s.name.clone(),
                rhat: s.rhat,
            });
        }
    }
    if flagged.is_empty() {
        return Ok(None);
    }
    let list = flagged
        .iter()
        .map(|f| format!("{} (Rhat = {:.3})", f.name, f.rhat))
        .collect::<Vec<_>>()
        .join(", ");
    let message = format!(
        "Rhat exceeds {RHAT_THRESHOLD} for {list}. The chains may not have converged; \
         increase the number of iterations (and burn-in) and run the model again."
    );
    Ok(Some(ConvergenceWarning {
        quantities: flagged,
        message,
    }))
}
