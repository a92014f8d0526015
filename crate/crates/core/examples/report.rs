//! Write every artifact of an analysis (results JSON, forest plots, HTML
//! report, summary CSV) the same way `magec run` does.
//!
//! ```bash
//! cargo run --release --example report -- out_dir
//! ```

use std::path::PathBuf;

use magec::analysis::{run_analysis, AnalysisRequest};
use magec::cli::{write_outputs, OutputFormat};
use magec::dataset::Dataset;
use magec::sampler::{McmcConfig, NoProgress};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "report_out".into()));
    let dataset = Dataset::sample();
    let request = AnalysisRequest {
        mcmc: McmcConfig {
            n_iter: 40_000,
            burn_in: 20_000,
            ..McmcConfig::default()
        },
        ..AnalysisRequest::new(dataset.clone())
    };
    let result = run_analysis(&request, &NoProgress)?;
    let formats = [OutputFormat::Json, OutputFormat::Svg, OutputFormat::Html, OutputFormat::Csv];
    for path in write_outputs(&result, &dataset, &out, &formats)? {
        println!("{}", path.display());
    }
    Ok(())
}
