//! Draw from a binomial truncated to `0..=c` and compare the empirical
//! frequencies with the exact probabilities.
//!
//! ```bash
//! cargo run --release --example truncated_binomial
//! ```

use magec::model::binomial_log_pmf;
use magec::sampler::sample_truncated_binomial;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n, theta, c) = (20, 0.3, 4);
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = vec![0u32; c as usize + 1];
    for _ in 0..draws {
        counts[sample_truncated_binomial(n, theta, c, &mut rng)? as usize] += 1;
    }

    let weights: Vec<f64> = (0..=c)
        .map(|k| binomial_log_pmf(k, n, theta).map(f64::exp))
        .collect::<Result<_, _>>()?;
    let total: f64 = weights.iter().sum();
    let mut tv = 0.0;
    println!(" k  empirical  exact");
    for (k, (&count, w)) in counts.iter().zip(&weights).enumerate() {
        let (emp, exact) = (f64::from(count) / f64::from(draws), w / total);
        tv += 0.5 * (emp - exact).abs();
        println!("{k:>2}  {emp:.5}    {exact:.5}");
    }
    println!("total variation distance: {tv:.5}");
    Ok(())
}
