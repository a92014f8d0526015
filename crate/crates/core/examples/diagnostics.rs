//! Convergence diagnostics: split-Rhat and effective sample size on
//! synthetic chains, then the warning raised by a deliberately short run.
//!
//! ```bash
//! cargo run --release --example diagnostics
//! ```

use magec::analysis::{run_magec, AnalysisRequest};
use magec::dataset::Dataset;
use magec::diagnostics::{effective_sample_size, posterior_summary, split_rhat};
use magec::sampler::{McmcConfig, NoProgress};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn ar1(phi: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = 0.0;
    (0..n)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            x = phi * x + (1.0 - phi * phi).sqrt() * e;
            x
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mixed: Vec<Vec<f64>> = (0..3).map(|_| ar1(0.9, 10_000, &mut rng)).collect();
    println!(
        "AR(1), phi = 0.9: Rhat {:.4}, ESS {:.0} of 30000 (theory about {:.0})",
        split_rhat(&mixed)?,
        effective_sample_size(&mixed)?,
        30_000.0 * 0.1 / 1.9
    );

    let mut stuck = mixed.clone();
    stuck[2].iter_mut().for_each(|x| *x += 3.0);
    let s = posterior_summary(&stuck, "shifted")?;
    println!("one chain shifted by 3: Rhat {:.3}", s.rhat);

    let request = AnalysisRequest {
        mcmc: McmcConfig {
            n_iter: 150,
            burn_in: 50,
            thin: 1,
            seed: 2,
            ..McmcConfig::default()
        },
        ..AnalysisRequest::new(Dataset::sample())
    };
    let fit = run_magec(&request, &NoProgress)?;
    match &fit.convergence_warning {
        Some(w) => println!("short run: {}", w.message),
        None => println!("short run converged (Rhat {:.4})", fit.overall.rhat),
    }
    Ok(())
}
