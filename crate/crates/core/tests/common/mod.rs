#![allow(dead_code)]

use std::collections::BTreeMap;

use magec::analysis::{summarize_fit, ModelFit, ModelKind};
use magec::dataset::{Dataset, StudyRecord};
use magec::model::{log_posterior_augmented, ModelConfig, ParameterState};
use magec::sampler::{initialize_chain, run_chain, McmcConfig, NoProgress, SamplerOptions};

/// Short run from deliberately scattered starting points: the overall
/// log-odds start 4 units apart and `log tau` from -3 to 2.
pub fn divergent_start_fit(dataset: &Dataset, seed: u64) -> ModelFit {
    let mcmc = McmcConfig {
        n_chains: 3,
        n_iter: 200,
        burn_in: 100,
        thin: 1,
        seed,
        ..McmcConfig::default()
    };
    let model = ModelConfig::default();
    let starts = [(-4.0, -3.0), (0.0, 0.0), (4.0, 2.0)];
    let chains = starts
        .iter()
        .enumerate()
        .map(|(k, &(shift, log_tau))| {
            let mut state = initialize_chain(dataset, 1);
            state.mu += shift;
            state.log_tau = log_tau;
            let opts = SamplerOptions {
                initial_state: Some(state),
                ..SamplerOptions::default()
            };
            run_chain(dataset, &model, &mcmc, k, &NoProgress, &opts).unwrap()
        })
        .collect();
    summarize_fit(dataset, ModelKind::Magec, chains).unwrap()
}

/// Two reported studies and a zero-cutoff one, plus a censored study per
/// `(n, cutoff)` pair.
pub fn toy(censored: &[(u32, u32)]) -> Dataset {
    let mut studies = vec![
        StudyRecord::observed("o1", 40, 3),
        StudyRecord::observed("o2", 25, 0),
        StudyRecord::censored("z", 12, 0),
    ];
    for (i, &(n, c)) in censored.iter().enumerate() {
        studies.push(StudyRecord::censored(format!("c{i}"), n, c));
    }
    Dataset::new("toy", studies).unwrap()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Sum of the augmented density over every latent assignment.
pub fn enumerated(ds: &Dataset, mu: f64, eta: &[f64], log_tau: f64, cfg: &ModelConfig) -> f64 {
    let censored: Vec<(usize, u32)> = ds
        .studies()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match (s.observed_count, s.cutoff) {
            (None, Some(c)) if c > 0 => Some((i, c)),
            _ => None,
        })
        .collect();
    let mut terms = Vec::new();
    let mut assignment = vec![0u32; censored.len()];
    loop {
        let mut s = ParameterState {
            mu,
            eta: eta.to_vec(),
            log_tau,
            latent_counts: BTreeMap::new(),
        };
        for (&(i, _), &k) in censored.iter().zip(&assignment) {
            s.latent_counts.insert(i, k);
        }
        terms.push(log_posterior_augmented(&s, ds, cfg).unwrap());
        let mut pos = 0;
        loop {
            if pos == censored.len() {
                return log_sum_exp(&terms);
            }
            if assignment[pos] < censored[pos].1 {
                assignment[pos] += 1;
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}

