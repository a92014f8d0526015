use std::sync::Mutex;

use magec::dataset::{Dataset, StudyRecord};
use magec::diagnostics::{effective_sample_size, posterior_summary};
use magec::model::{binomial_log_pmf, expit, logit, ModelConfig, MuPrior, ParameterState};
use magec::sampler::{
    adapt_scale, chain_seed, initialize_chain, mh_step, mh_update_scalar, run_chain, run_model,
    sample_truncated_binomial, Blocks, Execution, McmcConfig, MhStep, NoProgress, RunProgress,
    SamplerOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn truncated_pmf(n: u32, theta: f64, c: u32) -> Vec<f64> {
    let w: Vec<f64> = (0..=c).map(|k| binomial_log_pmf(k, n, theta).unwrap().exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

fn total_variation(counts: &[u64], pmf: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    0.5 * counts
        .iter()
        .zip(pmf)
        .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
        .sum::<f64>()
}

#[test]
fn truncated_binomial_matches_exact_pmf() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = vec![0u64; 5];
    for _ in 0..100_000 {
        counts[sample_truncated_binomial(20, 0.3, 4, &mut rng).unwrap() as usize] += 1;
    }
    let tv = total_variation(&counts, &truncated_pmf(20, 0.3, 4));
    assert!(tv < 0.01, "tv = {tv}");
}

#[test]
fn truncated_binomial_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        assert_eq!(sample_truncated_binomial(50, 0.7, 0, &mut rng).unwrap(), 0);
    }
    let zeros = (0..10_000)
        .filter(|_| sample_truncated_binomial(459, 1e-9, 9, &mut rng).unwrap() == 0)
        .count();
    assert!(zeros >= 9_990);
    assert_eq!(sample_truncated_binomial(10, 1.0, 10, &mut rng).unwrap(), 10);
    assert!(sample_truncated_binomial(10, 1.0, 3, &mut rng).is_err());
    assert!(sample_truncated_binomial(10, 0.5, 11, &mut rng).is_err());
    assert!(sample_truncated_binomial(10, -0.1, 3, &mut rng).is_err());
}

fn log_std_normal(x: f64) -> f64 {
    -0.5 * x * x
}

/// Lag-correlated draws split into four pseudo-chains for the ESS estimate.
fn mcse_of_mean(draws: &[f64]) -> f64 {
    let chains: Vec<&[f64]> = draws.chunks(draws.len() / 4).take(4).collect();
    let ess = effective_sample_size(&chains).unwrap();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    (var / ess).sqrt()
}

#[test]
fn random_walk_on_standard_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut x = 0.0;
    let mut accepted = 0;
    let mut draws = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        let (next, acc) = mh_update_scalar(x, log_std_normal, 2.4, &mut rng).unwrap();
        x = next;
        accepted += usize::from(acc);
        draws.push(x);
    }
    let rate = accepted as f64 / 100_000.0;
    assert!((0.35..=0.55).contains(&rate), "acceptance {rate}");

    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!(mean.abs() < 3.0 * mcse_of_mean(&draws), "mean {mean}");
    let squares: Vec<f64> = draws.iter().map(|x| x * x).collect();
    let second = squares.iter().sum::<f64>() / squares.len() as f64;
    let variance = second - mean * mean;
    assert!((variance - 1.0).abs() < 3.0 * mcse_of_mean(&squares), "variance {variance}");
}

#[test]
fn zero_step_is_always_accepted() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let (x, acc) = mh_update_scalar(1.7, log_std_normal, 0.0, &mut rng).unwrap();
        assert!(acc);
        assert_eq!(x, 1.7);
    }
}

#[test]
fn non_finite_current_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert!(mh_update_scalar(0.0, |_| f64::NEG_INFINITY, 1.0, &mut rng).is_err());
}

#[test]
fn decisions_replay_from_logged_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = 0.3;
    let mut lp = log_std_normal(x);
    let mut log = Vec::new();
    for _ in 0..5000 {
        let step = mh_step(x, lp, log_std_normal, 1.9, &mut rng);
        x = step.value();
        lp = step.value_log_density();
        log.push(step);
    }
    for step in &log {
        let recomputed_current = log_std_normal(step.current);
        let recomputed_proposal = log_std_normal(step.proposal);
        assert_eq!(step.log_density_current, recomputed_current);
        assert_eq!(step.log_density_proposal, recomputed_proposal);
        assert_eq!(
            MhStep::decision(step.log_u, recomputed_current, recomputed_proposal),
            step.accepted
        );
        assert!(step.log_u <= 0.0);
    }
    assert!(log.iter().any(|s| s.accepted) && log.iter().any(|s| !s.accepted));
}

#[test]
fn adapt_scale_sign_rules() {
    assert_eq!(adapt_scale(0.8, 0.44, 0.44, 7), 0.8);
    let mut s = 0.5;
    for batch in 1..50 {
        let next = adapt_scale(s, 1.0, 0.44, batch);
        assert!(next > s);
        s = next;
    }
    assert!(adapt_scale(0.5, 0.0, 0.44, 3) < 0.5);
}

#[test]
fn adaptation_reaches_a_sensible_scale_from_far_below() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut x = 0.0;
    let mut scale = 1e-3;
    let mut accepted = 0u32;
    for it in 1..=5_000u64 {
        let (next, acc) = mh_update_scalar(x, log_std_normal, scale, &mut rng).unwrap();
        x = next;
        accepted += u32::from(acc);
        if it % 50 == 0 {
            scale = adapt_scale(scale, f64::from(accepted) / 50.0, 0.44, it / 50);
            accepted = 0;
        }
    }
    assert!((1.0..=4.0).contains(&scale), "scale after 5000 iterations: {scale}");
}

#[test]
fn chain_start_matches_pooled_log_odds() {
    let ds = Dataset::sample();
    let s0 = initialize_chain(&ds, 0);
    let expected = logit(19.5 / 2638.0).unwrap() - 1.0;
    assert!((s0.mu - expected).abs() < 1e-12, "{} vs {expected}", s0.mu);
    assert_eq!(s0.log_tau, 0.0);
    assert!(s0.eta.iter().all(|&e| e == 0.0));
    assert_eq!(s0.latent_counts.len(), 2);
    assert!(s0.latent_counts.values().all(|&v| v == 0));

    let starts: Vec<f64> = (0..7).map(|k| initialize_chain(&ds, k).mu).collect();
    for i in 0..starts.len() {
        for j in 0..i {
            assert_ne!(starts[i], starts[j]);
        }
    }
    assert!((starts[1] - logit(19.5 / 2638.0).unwrap()).abs() < 1e-12);
}

#[test]
fn all_censored_start_is_finite() {
    let ds = Dataset::new(
        "c",
        vec![StudyRecord::censored("a", 30, 2), StudyRecord::censored("b", 60, 3)],
    )
    .unwrap();
    let s = initialize_chain(&ds, 0);
    assert!((s.mu - (logit(0.5 / 91.0).unwrap() - 1.0)).abs() < 1e-12);
}

fn short_config(n_iter: u64, burn_in: u64, thin: u64, seed: u64) -> McmcConfig {
    McmcConfig {
        n_chains: 3,
        n_iter,
        burn_in,
        thin,
        seed,
        ..McmcConfig::default()
    }
}

#[test]
fn chain_output_invariants_on_the_sample() {
    let ds = Dataset::sample();
    let cfg = short_config(6_000, 2_000, 3, 9);
    let out = run_chain(&ds, &ModelConfig::default(), &cfg, 1, &NoProgress, &SamplerOptions::default()).unwrap();
    assert_eq!(out.len(), (6_000 - 2_000) / 3);
    assert_eq!(out.seed, chain_seed(9, 0, 1));
    assert!(out.tau.iter().all(|&t| t > 0.0 && t.is_finite()));
    assert_eq!(out.theta.len(), 15);
    assert!(out.theta.iter().flatten().all(|&t| t > 0.0 && t < 1.0));
    assert_eq!(out.latent.len(), 2);
    for trace in &out.latent {
        assert_eq!(trace.draws.len(), out.len());
        assert!(trace.draws.iter().all(|&y| y <= trace.cutoff));
    }
    assert_eq!(out.scales_at_burn_in, out.final_scales);
    assert!(out.acceptance.mu > 0.2 && out.acceptance.mu < 0.7);
}

#[test]
fn replay_is_bit_identical_and_seeds_matter() {
    let ds = Dataset::sample();
    let cfg = short_config(3_000, 1_000, 2, 4);
    let opts = SamplerOptions::default();
    let a = run_chain(&ds, &ModelConfig::default(), &cfg, 0, &NoProgress, &opts).unwrap();
    let b = run_chain(&ds, &ModelConfig::default(), &cfg, 0, &NoProgress, &opts).unwrap();
    assert_eq!(a, b);
    let other = short_config(3_000, 1_000, 2, 5);
    let c = run_chain(&ds, &ModelConfig::default(), &other, 0, &NoProgress, &opts).unwrap();
    assert_ne!(a.mu, c.mu);
}

#[test]
fn serial_and_concurrent_runs_agree() {
    let ds = Dataset::sample();
    let cfg = short_config(3_000, 1_000, 2, 12);
    let opts = SamplerOptions::default();
    let serial = run_model(&ds, &ModelConfig::default(), &cfg, &NoProgress, &opts, Execution::Serial).unwrap();
    let concurrent = run_model(&ds, &ModelConfig::default(), &cfg, &NoProgress, &opts, Execution::Concurrent).unwrap();
    assert_eq!(serial, concurrent);
    assert_eq!(serial.iter().map(|c| c.chain_index).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn progress_is_reported_at_least_every_thousand_iterations() {
    let ds = Dataset::sample();
    let cfg = short_config(4_500, 1_000, 1, 2);
    let seen = Mutex::new(Vec::new());
    let sink = |p: RunProgress| seen.lock().unwrap().push(p);
    run_chain(&ds, &ModelConfig::default(), &cfg, 0, &sink, &SamplerOptions::default()).unwrap();
    let seen = seen.into_inner().unwrap();
    let marks: Vec<u64> = seen.iter().map(|p| p.completed).collect();
    assert_eq!(marks, vec![1_000, 2_000, 3_000, 4_000, 4_500]);
    assert!(seen.iter().all(|p| p.total == 4_500));
    assert_eq!(seen.last().unwrap().fraction(), 1.0);
}

#[test]
fn information_free_study_recovers_the_prior() {
    let ds = Dataset::new("free", vec![StudyRecord::censored("full", 5, 5)]).unwrap();
    let model = ModelConfig::default();
    let cfg = short_config(60_000, 10_000, 5, 17);
    let chains = run_model(&ds, &model, &cfg, &NoProgress, &SamplerOptions::default(), Execution::Serial).unwrap();
    let mu: Vec<&[f64]> = chains.iter().map(|c| c.mu.as_slice()).collect();
    let s = posterior_summary(&mu, "mu").unwrap();
    let prior_sd = model.mu_prior_variance.sqrt();
    assert!(s.mean.abs() < 3.0 * s.mcse, "mean {} mcse {}", s.mean, s.mcse);
    let sd_mcse = s.sd / (2.0 * s.ess).sqrt();
    assert!((s.sd - prior_sd).abs() < 3.0 * sd_mcse, "sd {} vs {prior_sd} (mcse {sd_mcse})", s.sd);
}

fn fixed_state(ds: &Dataset, theta: f64) -> ParameterState {
    let mut s = initialize_chain(ds, 0);
    s.mu = logit(theta).unwrap();
    s
}

#[test]
fn latent_block_alone_samples_the_truncated_binomial() {
    let ds = Dataset::new(
        "l",
        vec![StudyRecord::observed("o", 40, 2), StudyRecord::censored("c", 20, 4)],
    )
    .unwrap();
    let theta = 0.3;
    let opts = SamplerOptions {
        blocks: Blocks {
            latent: true,
            mu: false,
            eta: false,
            log_tau: false,
        },
        initial_state: Some(fixed_state(&ds, theta)),
        ..SamplerOptions::default()
    };
    let cfg = short_config(120_000, 1_000, 1, 8);
    let out = run_chain(&ds, &ModelConfig::default(), &cfg, 0, &NoProgress, &opts).unwrap();
    assert!(out.mu.iter().all(|&m| (expit(m) - theta).abs() < 1e-12));
    let mut counts = vec![0u64; 5];
    for &y in &out.latent[0].draws {
        counts[y as usize] += 1;
    }
    let tv = total_variation(&counts, &truncated_pmf(20, theta, 4));
    assert!(tv < 0.01, "tv = {tv}");
}

#[test]
fn single_study_posterior_is_beta() {
    let (y, n) = (4u32, 20u32);
    let ds = Dataset::new("one", vec![StudyRecord::observed("s", n, y)]).unwrap();
    let model = ModelConfig {
        mu_prior: MuPrior::Logistic,
        ..ModelConfig::default()
    };
    let opts = SamplerOptions {
        blocks: Blocks {
            latent: true,
            mu: true,
            eta: false,
            log_tau: false,
        },
        initial_state: Some(fixed_state(&ds, 0.2)),
        ..SamplerOptions::default()
    };
    let cfg = short_config(40_000, 5_000, 1, 23);
    let chains = run_model(&ds, &model, &cfg, &NoProgress, &opts, Execution::Serial).unwrap();
    let theta: Vec<Vec<f64>> = chains.iter().map(|c| c.theta[0].clone()).collect();
    let s = posterior_summary(&theta, "theta").unwrap();

    let (a, b) = (f64::from(y + 1), f64::from(n - y + 1));
    let beta_mean = a / (a + b);
    let beta_var = a * b / ((a + b).powi(2) * (a + b + 1.0));
    assert!((s.mean - beta_mean).abs() < 3.0 * s.mcse, "mean {} vs {beta_mean}", s.mean);

    let centered: Vec<Vec<f64>> = theta
        .iter()
        .map(|c| c.iter().map(|t| (t - beta_mean).powi(2)).collect())
        .collect();
    let v = posterior_summary(&centered, "sq").unwrap();
    assert!((v.mean - beta_var).abs() < 3.0 * v.mcse, "var {} vs {beta_var}", v.mean);
}
