//! Fit both models to the sample data with the default settings and print
//! the summary table and narrative.
//!
//! ```bash
//! cargo run --release --example full_analysis
//! ```

use magec::analysis::{run_analysis, AnalysisRequest, ModelKind};
use magec::dataset::Dataset;
use magec::render::{render_fit_table, render_narrative};
use magec::sampler::RunProgress;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let request = AnalysisRequest::new(Dataset::sample());
    let progress = |model: ModelKind, p: RunProgress| {
        if p.chain == 0 && p.completed.is_multiple_of(25_000) {
            eprintln!("{}: {}/{}", model.tag(), p.completed, p.total);
        }
    };
    let result = run_analysis(&request, &progress)?;

    for model in [ModelKind::Magec, ModelKind::CompleteCase] {
        if let Some(fit) = result.fit(model) {
            println!("{}", model.title());
            print!("{}", render_fit_table(fit).to_csv());
            println!();
        }
    }
    if let Some(c) = &result.comparison {
        println!("relative bias of the complete-case median: {:+.1}%", c.relative_bias_percent);
    }
    println!("{}", render_narrative(&result));
    println!(
        "{:.1} s censoring-aware, {:.1} s complete-case",
        result.timing.magec_seconds,
        result.timing.complete_case_seconds.unwrap_or(0.0)
    );
    Ok(())
}
