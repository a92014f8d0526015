//! Render forest plots as SVG, once in dataset order and once sorted by
//! estimate with three decimals.
//!
//! ```bash
//! cargo run --release --example forest_plot -- out_dir
//! ```

use std::path::PathBuf;

use magec::analysis::{run_magec, AnalysisRequest};
use magec::dataset::Dataset;
use magec::render::{render_forest_plot_svg, ForestPlotSpec, SortOrder};
use magec::sampler::{McmcConfig, NoProgress};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out)?;

    let request = AnalysisRequest {
        mcmc: McmcConfig {
            n_iter: 20_000,
            burn_in: 10_000,
            ..McmcConfig::default()
        },
        ..AnalysisRequest::new(Dataset::sample())
    };
    let fit = run_magec(&request, &NoProgress)?;

    for (name, decimals, order) in [
        ("forest_dataset_order.svg", 2, SortOrder::Dataset),
        ("forest_by_estimate.svg", 3, SortOrder::Estimate),
    ] {
        let spec = ForestPlotSpec::from_fit(&fit, decimals, order);
        let path = out.join(name);
        std::fs::write(&path, render_forest_plot_svg(&spec)?)?;
        println!("{} ({} rows, axis 0 to {}%)", path.display(), spec.rows.len(), spec.axis_max);
    }
    Ok(())
}
