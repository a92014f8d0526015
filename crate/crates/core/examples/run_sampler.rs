//! Run the Metropolis-within-Gibbs sampler directly and inspect the chains:
//! starting points, tuned step scales, acceptance rates and a few draws.
//!
//! ```bash
//! cargo run --release --example run_sampler
//! ```

use magec::dataset::Dataset;
use magec::model::{expit, ModelConfig};
use magec::sampler::{initialize_chain, run_model, Execution, McmcConfig, RunProgress, SamplerOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = Dataset::sample();
    let mcmc = McmcConfig {
        n_iter: 20_000,
        burn_in: 10_000,
        thin: 5,
        ..McmcConfig::default()
    };
    for k in 0..mcmc.n_chains {
        println!("chain {k} starts at mu = {:.4}", initialize_chain(&dataset, k).mu);
    }

    let progress = |p: RunProgress| {
        if p.chain == 0 && p.completed.is_multiple_of(5_000) {
            println!("chain 0: {}/{} ({:?})", p.completed, p.total, p.phase);
        }
    };
    let chains = run_model(
        &dataset,
        &ModelConfig::default(),
        &mcmc,
        &progress,
        &SamplerOptions::default(),
        Execution::Concurrent,
    )?;

    for c in &chains {
        let median_tau = {
            let mut t = c.tau.clone();
            t.sort_by(f64::total_cmp);
            t[t.len() / 2]
        };
        println!(
            "chain {}: seed {:#018x}, {} draws, mu step {:.3}, acceptance mu {:.2} / log tau {:.2}, median tau {:.3}",
            c.chain_index,
            c.seed,
            c.len(),
            c.final_scales.mu,
            c.acceptance.mu,
            c.acceptance.log_tau,
            median_tau
        );
    }
    let first: Vec<String> = chains[0].mu.iter().take(5).map(|&m| format!("{:.3}%", 100.0 * expit(m))).collect();
    println!("first incidence draws of chain 0: {}", first.join(", "));
    Ok(())
}
