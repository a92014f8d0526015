//! Bayesian random-effects meta-analysis of adverse-event incidence when
//! some studies only report that their count fell below a cutoff.
//!
//! The pipeline is: [`dataset`] parses and classifies studies, [`model`]
//! defines the censored-binomial log-density, [`sampler`] draws from it with
//! a Metropolis-within-Gibbs kernel, [`diagnostics`] summarizes the draws,
//! [`analysis`] fits the censoring-aware and complete-case models side by
//! side, and [`render`] turns the result into tables, SVG forest plots and
//! an HTML report. [`cli`] and [`service`] expose the pipeline as a batch
//! command and an HTTP API.

pub mod analysis;
pub mod cli;
pub mod dataset;
pub mod diagnostics;
pub mod model;
pub mod render;
pub mod sampler;
pub mod service;

pub use analysis::{run_analysis, AnalysisRequest, AnalysisResult};
pub use dataset::{parse_csv, Dataset, StudyClass, StudyRecord};
pub use diagnostics::PosteriorSummary;
pub use model::ModelConfig;
pub use sampler::McmcConfig;
