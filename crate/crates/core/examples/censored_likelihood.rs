//! Evaluate the binomial and left-censored log-likelihood terms, and the
//! log posterior of the sample data with and without data augmentation.
//!
//! ```bash
//! cargo run --example censored_likelihood
//! ```

use std::collections::BTreeMap;

use magec::dataset::Dataset;
use magec::model::{
    binomial_log_pmf, censored_log_cdf, expit, log_posterior_augmented, log_posterior_marginalized,
    ModelConfig, ParameterState,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let theta = 0.0038;
    println!("P(Y = 0 | N = 459)  = {:.6}", binomial_log_pmf(0, 459, theta)?.exp());
    println!("P(Y <= 9 | N = 459) = {:.9}", censored_log_cdf(9, 459, theta)?.exp());
    println!("P(Y <= 1 | N = 6)   = {:.9}", censored_log_cdf(1, 6, theta)?.exp());

    let dataset = Dataset::sample();
    let config = ModelConfig::default();
    let mu = -5.57;
    let eta = vec![0.0; dataset.len()];
    let log_tau = -0.5;

    let marginal = log_posterior_marginalized(mu, &eta, log_tau, &dataset, &config)?;
    println!("log posterior, censored counts summed out: {marginal:.6}");

    // With augmentation, each censored count becomes an explicit value.
    let censored: Vec<usize> = dataset
        .studies()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.class().is_censored())
        .map(|(i, _)| i)
        .collect();
    for k in 0..=1 {
        let state = ParameterState {
            mu,
            eta: eta.clone(),
            log_tau,
            latent_counts: censored.iter().map(|&i| (i, k)).collect::<BTreeMap<_, _>>(),
        };
        println!(
            "log posterior, censored counts set to {k}: {:.6}",
            log_posterior_augmented(&state, &dataset, &config)?
        );
    }
    println!("incidence at mu = {mu}: {:.4}%", 100.0 * expit(mu));
    Ok(())
}
