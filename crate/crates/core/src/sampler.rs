//! Metropolis-within-Gibbs sampler with data augmentation.
//!
//! One sweep redraws every censored count from its truncated binomial full
//! conditional, then applies Gaussian random-walk Metropolis updates to
//! `mu`, to each `eta_i` and to `log tau`, in that order. Random-walk scales
//! adapt in batches of [`ADAPT_BATCH`] iterations during burn-in and are
//! frozen afterwards.
//!
//! Each chain owns a ChaCha8 stream seeded by [`chain_seed`], so chains give
//! the same draws whether they run one after another or on separate threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{classify_study, Dataset, StudyClass};
use crate::model::{
    binomial_kernel, expit, log_binomial_coefficient, log_expit, log_mu_prior, log_std_normal,
    log_tau_prior, log1m_expit, logit, ModelConfig, ModelError, ParameterState, StudyTerm,
};

/// Iterations per adaptation batch.
pub const ADAPT_BATCH: u64 = 50;

/// Progress is reported at least this often, in iterations.
pub const PROGRESS_INTERVAL: u64 = 1_000;

const INITIAL_STEP: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid MCMC configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("log-density is not finite at the initial state ({location})")]
    NonFiniteStart { location: String },
    #[error("log-density is not finite at the current point {0}")]
    NonFiniteCurrent(f64),
    #[error("truncated binomial has no mass: n = {n}, theta = {theta}, cutoff = {cutoff}")]
    NoMass { n: u32, theta: f64, cutoff: u32 },
    #[error("a worker thread panicked while running chain {0}")]
    WorkerPanicked(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub n_chains: usize,
    /// Total iterations per chain, burn-in included.
    pub n_iter: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    pub target_acceptance: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_chains: 3,
            n_iter: 100_000,
            burn_in: 50_000,
            thin: 5,
            seed: 1,
            target_acceptance: 0.44,
        }
    }
}

impl McmcConfig {
    /// Minimum retained draws per chain.
    pub const MIN_RETAINED: u64 = 100;

    pub fn retained_per_chain(&self) -> u64 {
        self.n_iter.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |m: String| Err(SamplerError::InvalidConfig(m));
        if self.n_chains < 2 {
            return fail(format!("n_chains must be at least 2, got {}", self.n_chains));
        }
        if self.n_iter == 0 {
            return fail("n_iter must be positive".into());
        }
        if self.burn_in >= self.n_iter {
            return fail(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            ));
        }
        if self.thin == 0 {
            return fail("thin must be positive".into());
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return fail(format!(
                "target_acceptance must lie in (0, 1), got {}",
                self.target_acceptance
            ));
        }
        if self.retained_per_chain() < Self::MIN_RETAINED {
            return fail(format!(
                "(n_iter - burn_in) / thin = {} retained draws per chain; at least {} are required",
                self.retained_per_chain(),
                Self::MIN_RETAINED
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    BurnIn,
    Sampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunProgress {
    pub chain: usize,
    pub completed: u64,
    pub total: u64,
    pub phase: Phase,
}

impl RunProgress {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.completed as f64 / self.total as f64
        }
    }
}

/// Receives progress from chains, possibly from several threads at once.
pub trait ProgressSink: Sync {
    fn report(&self, progress: RunProgress);
}

impl<F: Fn(RunProgress) + Sync> ProgressSink for F {
    fn report(&self, progress: RunProgress) {
        self(progress)
    }
}

pub struct NoProgress;

impl ProgressSink for NoProgress {
    fn report(&self, _: RunProgress) {}
}

/// Density the chain targets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Censored counts sampled as latent variables.
    #[default]
    Augmented,
    /// Censored counts summed out analytically.
    Marginalized,
}

/// Which Gibbs blocks a sweep updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blocks {
    pub latent: bool,
    pub mu: bool,
    pub eta: bool,
    pub log_tau: bool,
}

impl Default for Blocks {
    fn default() -> Self {
        Blocks {
            latent: true,
            mu: true,
            eta: true,
            log_tau: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SamplerOptions {
    pub target: Target,
    pub blocks: Blocks,
    /// Separates the seed streams of different models fitted with the same
    /// master seed.
    pub stream: u32,
    /// Overrides [`initialize_chain`] for every chain.
    pub initial_state: Option<ParameterState>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Serial,
    #[default]
    Concurrent,
}

/// Random-walk scales of every Metropolis block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScales {
    pub mu: f64,
    pub eta: Vec<f64>,
    pub log_tau: f64,
}

/// Post-burn-in acceptance fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub mu: f64,
    pub eta: Vec<f64>,
    pub log_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrace {
    pub study_index: usize,
    pub cutoff: u32,
    pub draws: Vec<u32>,
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub chain_index: usize,
    pub seed: u64,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    /// `theta[i][d]`: study `i`, retained draw `d`.
    pub theta: Vec<Vec<f64>>,
    /// One trace per censored study (empty under [`Target::Marginalized`]).
    pub latent: Vec<LatentTrace>,
    pub acceptance: AcceptanceRates,
    pub scales_at_burn_in: StepScales,
    pub final_scales: StepScales,
}

impl ChainOutput {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `expit(mu)` for every retained draw.
    pub fn overall_incidence(&self) -> Vec<f64> {
        self.mu.iter().map(|&m| expit(m)).collect()
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of chain `chain` in stream `stream`:
/// `splitmix64(master ^ splitmix64((stream << 32) | chain))`.
pub fn chain_seed(master: u64, stream: u32, chain: usize) -> u64 {
    let salt = (u64::from(stream) << 32) | (chain as u64 & 0xffff_ffff);
    splitmix64(master ^ splitmix64(salt))
}

/// Exact draw from `Binomial(n, theta)` conditioned on `Y <= c`.
pub fn sample_truncated_binomial<R: Rng + ?Sized>(
    n: u32,
    theta: f64,
    c: u32,
    rng: &mut R,
) -> Result<u32, SamplerError> {
    if c > n {
        return Err(ModelError::CountExceedsTrials { count: c, n }.into());
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(ModelError::ProbabilityOutOfRange(theta).into());
    }
    if c == 0 || theta == 0.0 {
        return Ok(0);
    }
    if theta == 1.0 {
        return if c == n {
            Ok(n)
        } else {
            Err(SamplerError::NoMass { n, theta, cutoff: c })
        };
    }
    let (lp, lq) = (theta.ln(), (-theta).ln_1p());
    let log_coef: Vec<f64> = (0..=c).map(|k| log_binomial_coefficient(n, k)).collect();
    Ok(draw_truncated(&log_coef, n, lp, lq, rng))
}

/// Inverse-CDF draw over the renormalized pmf on `0..log_coef.len()`.
fn draw_truncated<R: Rng + ?Sized>(log_coef: &[f64], n: u32, lp: f64, lq: f64, rng: &mut R) -> u32 {
    let nf = f64::from(n);
    let log_w = |k: usize| {
        let kf = k as f64;
        log_coef[k] + kf * lp + (nf - kf) * lq
    };
    let max = (0..log_coef.len()).map(log_w).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = (0..log_coef.len()).map(|k| (log_w(k) - max).exp()).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for k in 0..log_coef.len() {
        acc += (log_w(k) - max).exp();
        if u < acc {
            return k as u32;
        }
    }
    (log_coef.len() - 1) as u32
}

/// Everything needed to audit one Metropolis decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhStep {
    pub current: f64,
    pub proposal: f64,
    pub log_density_current: f64,
    pub log_density_proposal: f64,
    /// Log of the uniform variate the decision was made with.
    pub log_u: f64,
    pub accepted: bool,
}

impl MhStep {
    pub fn value(&self) -> f64 {
        if self.accepted {
            self.proposal
        } else {
            self.current
        }
    }

    pub fn value_log_density(&self) -> f64 {
        if self.accepted {
            self.log_density_proposal
        } else {
            self.log_density_current
        }
    }

    /// Re-derives the decision from the logged quantities.
    pub fn decision(log_u: f64, log_density_current: f64, log_density_proposal: f64) -> bool {
        // NaN deltas compare false and reject.
        log_u < log_density_proposal - log_density_current
    }
}

/// Gaussian random-walk Metropolis step given the density at `current`.
pub fn mh_step<R: Rng + ?Sized>(
    current: f64,
    log_density_current: f64,
    mut log_density: impl FnMut(f64) -> f64,
    step_scale: f64,
    rng: &mut R,
) -> MhStep {
    let z: f64 = rng.sample(StandardNormal);
    let proposal = current + step_scale * z;
    let log_density_proposal = log_density(proposal);
    let log_u = rng.random::<f64>().ln();
    let accepted = MhStep::decision(log_u, log_density_current, log_density_proposal);
    MhStep {
        current,
        proposal,
        log_density_current,
        log_density_proposal,
        log_u,
        accepted,
    }
}

/// One random-walk Metropolis update of a scalar.
pub fn mh_update_scalar<R: Rng + ?Sized>(
    current: f64,
    mut log_density: impl FnMut(f64) -> f64,
    step_scale: f64,
    rng: &mut R,
) -> Result<(f64, bool), SamplerError> {
    let lp = log_density(current);
    if !lp.is_finite() {
        return Err(SamplerError::NonFiniteCurrent(current));
    }
    let step = mh_step(current, lp, log_density, step_scale, rng);
    Ok((step.value(), step.accepted))
}

/// Robbins-Monro update `log s += batch^-0.6 * (rate - target)`.
///
/// `batch` counts completed adaptation batches from 1.
pub fn adapt_scale(step_scale: f64, acceptance_rate: f64, target_acceptance: f64, batch: u64) -> f64 {
    let gain = (batch.max(1) as f64).powf(-0.6);
    (step_scale.ln() + gain * (acceptance_rate - target_acceptance)).exp()
}

fn start_offset(chain_index: usize) -> f64 {
    if chain_index < 3 {
        chain_index as f64 - 1.0
    } else {
        let j = ((chain_index - 3) / 2 + 2) as f64;
        if (chain_index - 3).is_multiple_of(2) {
            -j
        } else {
            j
        }
    }
}

/// Over-dispersed starting point for chain `chain_index`.
///
/// `mu` starts at the pooled log-odds of the studies with a known count
/// (exact zeros included), shifted by -1, 0, +1, -2, +2, ... per chain.
pub fn initialize_chain(dataset: &Dataset, chain_index: usize) -> ParameterState {
    let (mut events, mut exposed, mut total_n) = (0.0, 0.0, 0.0);
    let mut latent_counts = BTreeMap::new();
    for (i, study) in dataset.studies().iter().enumerate() {
        let n = f64::from(study.n_treated);
        total_n += n;
        match classify_study(study).known_count() {
            Some(y) => {
                events += f64::from(y);
                exposed += n;
            }
            None => {
                latent_counts.insert(i, 0);
            }
        }
    }
    let pooled = if exposed > 0.0 {
        (events + 0.5) / (exposed + 1.0)
    } else {
        0.5 / (total_n + 1.0)
    };
    let mu = logit(pooled).expect("pooled proportion lies in (0, 1)") + start_offset(chain_index);
    ParameterState {
        mu,
        eta: vec![0.0; dataset.len()],
        log_tau: 0.0,
        latent_counts,
    }
}

struct Chain<'a> {
    terms: Vec<StudyTerm>,
    counts: Vec<u32>,
    target: Target,
    config: &'a ModelConfig,
    mu: f64,
    eta: Vec<f64>,
    log_tau: f64,
    loglik: Vec<f64>,
    scratch: Vec<f64>,
}

impl Chain<'_> {
    fn study_loglik(&self, i: usize, x: f64) -> f64 {
        match (&self.terms[i], self.target) {
            (StudyTerm::Known { y, n }, _) => binomial_kernel(*y, *n, x),
            (StudyTerm::Censored { n, .. }, Target::Augmented) => binomial_kernel(self.counts[i], *n, x),
            (term, Target::Marginalized) => term.marginal(x),
        }
    }

    fn linear(&self, i: usize) -> f64 {
        self.mu + self.log_tau.exp() * self.eta[i]
    }

    fn refresh_loglik(&mut self) {
        for i in 0..self.terms.len() {
            self.loglik[i] = self.study_loglik(i, self.linear(i));
        }
    }

    fn update_latents<R: Rng>(&mut self, rng: &mut R) {
        for i in 0..self.terms.len() {
            if let StudyTerm::Censored { n, log_coef, .. } = &self.terms[i] {
                let x = self.linear(i);
                let k = draw_truncated(log_coef, *n, log_expit(x), log1m_expit(x), rng);
                self.counts[i] = k;
                self.loglik[i] = binomial_kernel(k, *n, x);
            }
        }
    }

    fn update_mu<R: Rng>(&mut self, scale: f64, rng: &mut R) -> bool {
        let current = log_mu_prior(self.mu, self.config) + self.loglik.iter().sum::<f64>();
        let tau = self.log_tau.exp();
        let mut scratch = std::mem::take(&mut self.scratch);
        let step = mh_step(
            self.mu,
            current,
            |m| {
                let mut total = log_mu_prior(m, self.config);
                for (i, slot) in scratch.iter_mut().enumerate() {
                    *slot = self.study_loglik(i, m + tau * self.eta[i]);
                    total += *slot;
                }
                total
            },
            scale,
            rng,
        );
        if step.accepted {
            self.mu = step.proposal;
            std::mem::swap(&mut self.loglik, &mut scratch);
        }
        self.scratch = scratch;
        step.accepted
    }

    fn update_eta<R: Rng>(&mut self, i: usize, scale: f64, rng: &mut R) -> bool {
        let tau = self.log_tau.exp();
        let current = log_std_normal(self.eta[i]) + self.loglik[i];
        let mut proposed_ll = 0.0;
        let step = mh_step(
            self.eta[i],
            current,
            |e| {
                proposed_ll = self.study_loglik(i, self.mu + tau * e);
                log_std_normal(e) + proposed_ll
            },
            scale,
            rng,
        );
        if step.accepted {
            self.eta[i] = step.proposal;
            self.loglik[i] = proposed_ll;
        }
        step.accepted
    }

    fn update_log_tau<R: Rng>(&mut self, scale: f64, rng: &mut R) -> bool {
        let current = log_tau_prior(self.log_tau, self.config) + self.loglik.iter().sum::<f64>();
        let mut scratch = std::mem::take(&mut self.scratch);
        let step = mh_step(
            self.log_tau,
            current,
            |lt| {
                let tau = lt.exp();
                let mut total = log_tau_prior(lt, self.config);
                for (i, slot) in scratch.iter_mut().enumerate() {
                    *slot = self.study_loglik(i, self.mu + tau * self.eta[i]);
                    total += *slot;
                }
                total
            },
            scale,
            rng,
        );
        if step.accepted {
            self.log_tau = step.proposal;
            std::mem::swap(&mut self.loglik, &mut scratch);
        }
        self.scratch = scratch;
        step.accepted
    }
}

#[derive(Default)]
struct BlockCounter {
    batch: u64,
    total: u64,
}

/// Runs one chain and returns its retained draws.
pub fn run_chain(
    dataset: &Dataset,
    model_config: &ModelConfig,
    mcmc_config: &McmcConfig,
    chain_index: usize,
    progress: &dyn ProgressSink,
    options: &SamplerOptions,
) -> Result<ChainOutput, SamplerError> {
    model_config.validate()?;
    let n_studies = dataset.len();
    let seed = chain_seed(mcmc_config.seed, options.stream, chain_index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let init = options
        .initial_state
        .clone()
        .unwrap_or_else(|| initialize_chain(dataset, chain_index));
    if init.eta.len() != n_studies {
        return Err(ModelError::EffectsLength {
            expected: n_studies,
            got: init.eta.len(),
        }
        .into());
    }

    let mut terms = Vec::with_capacity(n_studies);
    let mut counts = Vec::with_capacity(n_studies);
    for (i, study) in dataset.studies().iter().enumerate() {
        let class = classify_study(study);
        let n = study.n_treated;
        match class {
            StudyClass::Censored(c) if c > n => {
                return Err(ModelError::CountExceedsTrials { count: c, n }.into())
            }
            StudyClass::Censored(c) => {
                let start = init.latent_counts.get(&i).copied().unwrap_or(0);
                if start > c {
                    return Err(ModelError::LatentOutOfRange {
                        study_id: study.study_id.clone(),
                        count: start,
                        cutoff: c,
                    }
                    .into());
                }
                counts.push(start);
            }
            other => {
                let y = other.known_count().expect("known count");
                if y > n {
                    return Err(ModelError::CountExceedsTrials { count: y, n }.into());
                }
                counts.push(y);
            }
        }
        terms.push(StudyTerm::new(class, n));
    }
    let censored: Vec<(usize, u32)> = dataset
        .classes()
        .enumerate()
        .filter_map(|(i, c)| match c {
            StudyClass::Censored(c) => Some((i, c)),
            _ => None,
        })
        .collect();

    let mut chain = Chain {
        terms,
        counts,
        target: options.target,
        config: model_config,
        mu: init.mu,
        eta: init.eta,
        log_tau: init.log_tau,
        loglik: vec![0.0; n_studies],
        scratch: vec![0.0; n_studies],
    };
    chain.refresh_loglik();
    if !(chain.mu.is_finite() && log_mu_prior(chain.mu, model_config).is_finite()) {
        return Err(SamplerError::NonFiniteStart {
            location: format!("mu = {}", chain.mu),
        });
    }
    if !log_tau_prior(chain.log_tau, model_config).is_finite() {
        return Err(SamplerError::NonFiniteStart {
            location: format!("log_tau = {}", chain.log_tau),
        });
    }
    for (i, ll) in chain.loglik.iter().enumerate() {
        if !ll.is_finite() {
            return Err(SamplerError::NonFiniteStart {
                location: format!("study {:?}", dataset.studies()[i].study_id),
            });
        }
    }

    let blocks = options.blocks;
    let latent_active = blocks.latent && options.target == Target::Augmented;
    let mut scales = StepScales {
        mu: INITIAL_STEP,
        eta: vec![INITIAL_STEP; n_studies],
        log_tau: INITIAL_STEP,
    };
    let mut mu_acc = BlockCounter::default();
    let mut tau_acc = BlockCounter::default();
    let mut eta_acc: Vec<BlockCounter> = (0..n_studies).map(|_| BlockCounter::default()).collect();
    let mut adapt_batches = 0u64;
    let mut scales_at_burn_in = scales.clone();

    let retained = mcmc_config.retained_per_chain() as usize;
    let mut out_mu = Vec::with_capacity(retained);
    let mut out_tau = Vec::with_capacity(retained);
    let mut out_theta = vec![Vec::with_capacity(retained); n_studies];
    let mut out_latent: Vec<LatentTrace> = if options.target == Target::Augmented {
        censored
            .iter()
            .map(|&(study_index, cutoff)| LatentTrace {
                study_index,
                cutoff,
                draws: Vec::with_capacity(retained),
            })
            .collect()
    } else {
        Vec::new()
    };

    let burn_in = mcmc_config.burn_in;
    let target = mcmc_config.target_acceptance;
    for it in 0..mcmc_config.n_iter {
        let sampling = it >= burn_in;
        if it == burn_in {
            scales_at_burn_in = scales.clone();
            mu_acc.total = 0;
            tau_acc.total = 0;
            eta_acc.iter_mut().for_each(|c| c.total = 0);
        }

        if latent_active {
            chain.update_latents(&mut rng);
        }
        if blocks.mu && chain.update_mu(scales.mu, &mut rng) {
            mu_acc.batch += 1;
            mu_acc.total += 1;
        }
        if blocks.eta {
            for i in 0..n_studies {
                if chain.update_eta(i, scales.eta[i], &mut rng) {
                    eta_acc[i].batch += 1;
                    eta_acc[i].total += 1;
                }
            }
        }
        if blocks.log_tau && chain.update_log_tau(scales.log_tau, &mut rng) {
            tau_acc.batch += 1;
            tau_acc.total += 1;
        }

        if !sampling && (it + 1) % ADAPT_BATCH == 0 {
            adapt_batches += 1;
            let rate = |c: &mut BlockCounter| {
                let r = c.batch as f64 / ADAPT_BATCH as f64;
                c.batch = 0;
                r
            };
            if blocks.mu {
                scales.mu = adapt_scale(scales.mu, rate(&mut mu_acc), target, adapt_batches);
            }
            if blocks.eta {
                for (s, c) in scales.eta.iter_mut().zip(eta_acc.iter_mut()) {
                    *s = adapt_scale(*s, rate(c), target, adapt_batches);
                }
            }
            if blocks.log_tau {
                scales.log_tau = adapt_scale(scales.log_tau, rate(&mut tau_acc), target, adapt_batches);
            }
        }

        if sampling && (it - burn_in + 1).is_multiple_of(mcmc_config.thin) {
            let tau = chain.log_tau.exp();
            out_mu.push(chain.mu);
            out_tau.push(tau);
            for (i, column) in out_theta.iter_mut().enumerate() {
                column.push(expit(chain.mu + tau * chain.eta[i]));
            }
            for trace in &mut out_latent {
                trace.draws.push(chain.counts[trace.study_index]);
            }
        }

        if (it + 1) % PROGRESS_INTERVAL == 0 || it + 1 == mcmc_config.n_iter {
            progress.report(RunProgress {
                chain: chain_index,
                completed: it + 1,
                total: mcmc_config.n_iter,
                phase: if sampling { Phase::Sampling } else { Phase::BurnIn },
            });
        }
    }

    let sampled = (mcmc_config.n_iter - burn_in) as f64;
    let acceptance = AcceptanceRates {
        mu: mu_acc.total as f64 / sampled,
        eta: eta_acc.iter().map(|c| c.total as f64 / sampled).collect(),
        log_tau: tau_acc.total as f64 / sampled,
    };
    if burn_in == 0 {
        scales_at_burn_in = StepScales {
            mu: INITIAL_STEP,
            eta: vec![INITIAL_STEP; n_studies],
            log_tau: INITIAL_STEP,
        };
    }

    Ok(ChainOutput {
        chain_index,
        seed,
        mu: out_mu,
        tau: out_tau,
        theta: out_theta,
        latent: out_latent,
        acceptance,
        scales_at_burn_in,
        final_scales: scales,
    })
}

/// Runs `n_chains` chains and returns them ordered by chain index.
pub fn run_model(
    dataset: &Dataset,
    model_config: &ModelConfig,
    mcmc_config: &McmcConfig,
    progress: &dyn ProgressSink,
    options: &SamplerOptions,
    execution: Execution,
) -> Result<Vec<ChainOutput>, SamplerError> {
    mcmc_config.validate()?;
    model_config.validate()?;
    let run = |k| run_chain(dataset, model_config, mcmc_config, k, progress, options);
    match execution {
        Execution::Serial => (0..mcmc_config.n_chains).map(run).collect(),
        Execution::Concurrent => std::thread::scope(|scope| {
            let handles: Vec<_> = (0..mcmc_config.n_chains)
                .map(|k| scope.spawn(move || run(k)))
                .collect();
            handles
                .into_iter()
                .enumerate()
                .map(|(k, h)| h.join().map_err(|_| SamplerError::WorkerPanicked(k))?)
                .collect()
        }),
    }
}
