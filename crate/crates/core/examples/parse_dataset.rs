//! Parse a study CSV, classify every row and list validation problems.
//!
//! ```bash
//! cargo run --example parse_dataset                 # bundled sample
//! cargo run --example parse_dataset -- my_data.csv
//! ```

use magec::dataset::{cutoff_from_percentage, parse_csv, validate_dataset, Dataset, StudyClass};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = match std::env::args().nth(1) {
        Some(path) => parse_csv(&std::fs::read(&path)?, &path)?,
        None => Dataset::sample(),
    };

    println!("{} ({} studies)", dataset.name(), dataset.len());
    for study in dataset.studies() {
        let class = match study.class() {
            StudyClass::Observed(y) => format!("observed, y = {y}"),
            StudyClass::ExactZero => "unreported, known zero".to_string(),
            StudyClass::Censored(c) => format!("censored, y <= {c}"),
        };
        println!("  {:<36} N = {:>4}  {class}", study.study_id, study.n_treated);
    }

    let counts = dataset.class_counts();
    println!(
        "observed {}, exact zero {}, censored {}",
        counts.observed, counts.exact_zero, counts.censored
    );
    for w in dataset.warnings() {
        println!("warning: {w}");
    }
    for v in validate_dataset(&dataset) {
        println!("{v}");
    }

    // A trial that reports only events above 2% of 459 patients hides up to 9.
    println!("cutoff for N = 459 at 2%: {}", cutoff_from_percentage(459, 2.0)?);
    Ok(())
}
