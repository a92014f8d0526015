//! Log-density of the censored-count random-effects model.
//!
//! Study `i` has `Y_i ~ Binomial(N_i, theta_i)` with
//! `logit(theta_i) = mu + tau * eta_i`, `eta_i ~ N(0, 1)`. The overall
//! log-odds `mu` has a `N(0, v0^2)` prior and the between-study SD `tau` a
//! half-Cauchy `C+(0, A)` prior. `tau` is carried on the log scale, so every
//! joint density here includes the log-Jacobian `log tau`.
//!
//! A censored study contributes either its latent count (augmented target)
//! or the binomial CDF at its cutoff (marginalized target). Summing the
//! augmented density over all latent assignments recovers the marginalized
//! one exactly.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{classify_study, Dataset, StudyClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("logit is undefined at p = {0}; p must lie strictly between 0 and 1")]
    ProbabilityOutOfRange(f64),
    #[error("count {count} exceeds the number of trials {n}")]
    CountExceedsTrials { count: u32, n: u32 },
    #[error("no latent count supplied for censored study {study_id:?} (index {index})")]
    MissingLatent { index: usize, study_id: String },
    #[error("latent count {count} for study {study_id:?} lies outside 0..={cutoff}")]
    LatentOutOfRange {
        study_id: String,
        count: u32,
        cutoff: u32,
    },
    #[error("expected {expected} random effects, got {got}")]
    EffectsLength { expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
}

/// Link between incidence probability and the linear predictor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Logit,
}

/// Prior on the overall log-odds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuPrior {
    /// `N(0, mu_prior_variance)`.
    #[default]
    Normal,
    /// Standard logistic, i.e. uniform on `expit(mu)`.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Half-Cauchy scale `A` of the prior on `tau`.
    pub prior_scale_a: f64,
    /// Variance `v0^2` of the normal prior on `mu`.
    pub mu_prior_variance: f64,
    pub link: Link,
    pub mu_prior: MuPrior,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            prior_scale_a: 2.5,
            mu_prior_variance: 1e4,
            link: Link::Logit,
            mu_prior: MuPrior::Normal,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.prior_scale_a.is_finite() && self.prior_scale_a > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "prior_scale_a must be positive, got {}",
                self.prior_scale_a
            )));
        }
        if !(self.mu_prior_variance.is_finite() && self.mu_prior_variance > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "mu_prior_variance must be positive, got {}",
                self.mu_prior_variance
            )));
        }
        Ok(())
    }
}

/// One point in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub mu: f64,
    /// Standardized random effects; `alpha_i = tau * eta_i`.
    pub eta: Vec<f64>,
    pub log_tau: f64,
    /// Augmented counts keyed by study index, for censored studies only.
    pub latent_counts: BTreeMap<usize, u32>,
}

impl ParameterState {
    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    /// Linear predictor `mu + tau * eta_i` of study `i`.
    pub fn linear_predictor(&self, i: usize) -> f64 {
        self.mu + self.tau() * self.eta[i]
    }

    pub fn theta(&self, i: usize) -> f64 {
        expit(self.linear_predictor(i))
    }
}

pub fn logit(p: f64) -> Result<f64, ModelError> {
    if p > 0.0 && p < 1.0 {
        Ok((p / (1.0 - p)).ln())
    } else {
        Err(ModelError::ProbabilityOutOfRange(p))
    }
}

/// Inverse logit, kept strictly inside (0, 1).
pub fn expit(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log expit(x)`.
pub(crate) fn log_expit(x: f64) -> f64 {
    -softplus(-x)
}

/// `log(1 - expit(x))`.
pub(crate) fn log1m_expit(x: f64) -> f64 {
    -softplus(x)
}

pub fn log_binomial_coefficient(n: u32, k: u32) -> f64 {
    debug_assert!(k <= n);
    let lg = |v: u32| libm::lgamma(f64::from(v) + 1.0);
    lg(n) - lg(k) - lg(n - k)
}

pub fn binomial_log_pmf(y: u32, n: u32, theta: f64) -> Result<f64, ModelError> {
    if y > n {
        return Err(ModelError::CountExceedsTrials { count: y, n });
    }
    check_probability(theta)?;
    let (y_f, rest) = (f64::from(y), f64::from(n - y));
    let log_theta_term = if y == 0 { 0.0 } else { y_f * theta.ln() };
    let log_comp_term = if y == n { 0.0 } else { rest * (-theta).ln_1p() };
    Ok(log_binomial_coefficient(n, y) + log_theta_term + log_comp_term)
}

/// Binomial log-pmf with the probability given on the logit scale.
pub fn binomial_log_pmf_logit(y: u32, n: u32, x: f64) -> f64 {
    debug_assert!(y <= n);
    log_binomial_coefficient(n, y) + binomial_kernel(y, n, x)
}

/// `y log(theta) + (n - y) log(1 - theta)` on the logit scale.
#[inline]
pub(crate) fn binomial_kernel(y: u32, n: u32, x: f64) -> f64 {
    let mut v = 0.0;
    if y > 0 {
        v += f64::from(y) * log_expit(x);
    }
    if y < n {
        v += f64::from(n - y) * log1m_expit(x);
    }
    v
}

/// `log P(Y <= c)` for `Y ~ Binomial(n, theta)`.
pub fn censored_log_cdf(c: u32, n: u32, theta: f64) -> Result<f64, ModelError> {
    if c > n {
        return Err(ModelError::CountExceedsTrials { count: c, n });
    }
    check_probability(theta)?;
    if c == n || theta == 0.0 {
        return Ok(0.0);
    }
    if theta == 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let (log_p, log_q) = (theta.ln(), (-theta).ln_1p());
    Ok(log_cdf(c, n, log_p, log_q, log_p - log_q))
}

/// [`censored_log_cdf`] with the probability on the logit scale.
pub fn censored_log_cdf_logit(c: u32, n: u32, x: f64) -> f64 {
    debug_assert!(c <= n);
    if c == n {
        return 0.0;
    }
    log_cdf(c, n, log_expit(x), log1m_expit(x), x)
}

/// Sums whichever side of the mode is shorter and better conditioned:
/// the lower terms directly, or the upper tail through `ln_1p(-tail)` so a
/// CDF close to 1 keeps full relative precision in the log.
fn log_cdf(c: u32, n: u32, log_p: f64, log_q: f64, log_odds: f64) -> f64 {
    let nf = f64::from(n);
    let mode = ((nf + 1.0) * log_p.exp()).floor().min(nf) as u32;
    let log_pmf = |k: u32| {
        let kf = f64::from(k);
        let mut v = log_binomial_coefficient(n, k);
        if k > 0 {
            v += kf * log_p;
        }
        if k < n {
            v += (nf - kf) * log_q;
        }
        v
    };
    if c < mode {
        // Terms increase up to c; walk down from it.
        let down = (-log_odds).exp();
        let (mut ratio, mut acc) = (1.0, 1.0);
        for k in (1..=c).rev() {
            ratio *= f64::from(k) / f64::from(n - k + 1) * down;
            acc += ratio;
            if ratio < f64::EPSILON * 1e-2 * acc {
                break;
            }
        }
        log_pmf(c) + acc.ln()
    } else {
        // Terms decrease beyond c; walk up the tail.
        let up = log_odds.exp();
        let (mut ratio, mut acc) = (1.0, 1.0);
        for k in (c + 2)..=n {
            ratio *= f64::from(n - k + 1) / f64::from(k) * up;
            acc += ratio;
            if ratio < f64::EPSILON * 1e-2 * acc {
                break;
            }
        }
        let tail = (log_pmf(c + 1) + acc.ln()).exp();
        (-tail.min(1.0)).ln_1p()
    }
}

fn check_probability(theta: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(ModelError::ProbabilityOutOfRange(theta))
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_mu_prior(mu: f64, config: &ModelConfig) -> f64 {
    match config.mu_prior {
        MuPrior::Normal => {
            let v = config.mu_prior_variance;
            -0.5 * (2.0 * PI * v).ln() - mu * mu / (2.0 * v)
        }
        MuPrior::Logistic => log_expit(mu) + log1m_expit(mu),
    }
}

pub fn log_std_normal(z: f64) -> f64 {
    -0.5 * (2.0 * PI).ln() - 0.5 * z * z
}

/// Half-Cauchy log-density of `tau` plus the log-Jacobian of `tau = exp(log_tau)`.
pub fn log_tau_prior(log_tau: f64, config: &ModelConfig) -> f64 {
    let a = config.prior_scale_a;
    let tau = log_tau.exp();
    let r = tau / a;
    LN_2 - PI.ln() - a.ln() - r.mul_add(r, 1.0).ln() + log_tau
}

pub fn log_prior(state: &ParameterState, config: &ModelConfig) -> f64 {
    log_mu_prior(state.mu, config)
        + state.eta.iter().map(|&e| log_std_normal(e)).sum::<f64>()
        + log_tau_prior(state.log_tau, config)
}

fn check_effects(eta: &[f64], dataset: &Dataset) -> Result<(), ModelError> {
    if eta.len() != dataset.len() {
        return Err(ModelError::EffectsLength {
            expected: dataset.len(),
            got: eta.len(),
        });
    }
    Ok(())
}

/// Joint log-density with censored counts replaced by their latent values.
pub fn log_posterior_augmented(
    state: &ParameterState,
    dataset: &Dataset,
    config: &ModelConfig,
) -> Result<f64, ModelError> {
    check_effects(&state.eta, dataset)?;
    let mut total = log_prior(state, config);
    for (i, study) in dataset.studies().iter().enumerate() {
        let x = state.linear_predictor(i);
        let n = study.n_treated;
        let y = match classify_study(study) {
            StudyClass::Censored(c) => {
                let count = *state.latent_counts.get(&i).ok_or_else(|| {
                    ModelError::MissingLatent {
                        index: i,
                        study_id: study.study_id.clone(),
                    }
                })?;
                if count > c {
                    return Err(ModelError::LatentOutOfRange {
                        study_id: study.study_id.clone(),
                        count,
                        cutoff: c,
                    });
                }
                count
            }
            class => class.known_count().expect("non-censored class has a count"),
        };
        if y > n {
            return Err(ModelError::CountExceedsTrials { count: y, n });
        }
        total += binomial_log_pmf_logit(y, n, x);
    }
    Ok(total)
}

/// Joint log-density with each censored count summed out.
pub fn log_posterior_marginalized(
    mu: f64,
    eta: &[f64],
    log_tau: f64,
    dataset: &Dataset,
    config: &ModelConfig,
) -> Result<f64, ModelError> {
    check_effects(eta, dataset)?;
    let tau = log_tau.exp();
    let mut total = log_mu_prior(mu, config)
        + eta.iter().map(|&e| log_std_normal(e)).sum::<f64>()
        + log_tau_prior(log_tau, config);
    for (study, &e) in dataset.studies().iter().zip(eta) {
        let x = mu + tau * e;
        let n = study.n_treated;
        total += match classify_study(study) {
            StudyClass::Censored(c) => {
                if c > n {
                    return Err(ModelError::CountExceedsTrials { count: c, n });
                }
                censored_log_cdf_logit(c, n, x)
            }
            class => {
                let y = class.known_count().expect("non-censored class has a count");
                if y > n {
                    return Err(ModelError::CountExceedsTrials { count: y, n });
                }
                binomial_log_pmf_logit(y, n, x)
            }
        };
    }
    Ok(total)
}

/// How one study enters the likelihood, with cached coefficients.
#[derive(Debug, Clone)]
pub(crate) enum StudyTerm {
    Known { y: u32, n: u32 },
    Censored { c: u32, n: u32, log_coef: Vec<f64> },
}

impl StudyTerm {
    pub(crate) fn new(class: StudyClass, n: u32) -> Self {
        match class {
            StudyClass::Censored(c) => StudyTerm::Censored {
                c,
                n,
                log_coef: (0..=c).map(|k| log_binomial_coefficient(n, k)).collect(),
            },
            other => StudyTerm::Known {
                y: other.known_count().expect("non-censored class has a count"),
                n,
            },
        }
    }

    /// Marginal log-likelihood at linear predictor `x`, up to the binomial
    /// coefficient of known counts.
    pub(crate) fn marginal(&self, x: f64) -> f64 {
        match self {
            StudyTerm::Known { y, n } => binomial_kernel(*y, *n, x),
            StudyTerm::Censored { c, n, .. } if c == n => 0.0,
            StudyTerm::Censored { n, log_coef, .. } => {
                let (lp, lq) = (log_expit(x), log1m_expit(x));
                let nf = f64::from(*n);
                let mut acc = f64::NEG_INFINITY;
                for (k, lc) in log_coef.iter().enumerate() {
                    let kf = k as f64;
                    let t = lc + kf * lp + (nf - kf) * lq;
                    let (hi, lo) = if acc > t { (acc, t) } else { (t, acc) };
                    acc = hi + (lo - hi).exp().ln_1p();
                }
                acc
            }
        }
    }
}
