//! Fits the censoring-aware model and the complete-case model, summarizes
//! both and measures how far the complete-case estimate drifts.
//!
//! The complete-case fit keeps only the studies with a reported count.
//! Overall incidence is `expit(mu)`, summarized draw by draw on the
//! probability scale.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{is_valid, validate_dataset, ClassCounts, Dataset, StudyClass, Violation};
use crate::diagnostics::{
    convergence_check, posterior_summary, ConvergenceWarning, DiagnosticsError, PosteriorSummary,
};
use crate::model::ModelConfig;
use crate::sampler::{
    run_model, ChainOutput, Execution, McmcConfig, ProgressSink, RunProgress, SamplerError,
    SamplerOptions,
};

pub const SCHEMA_VERSION: u32 = 1;

pub const OVERALL: &str = "overall_incidence";
pub const TAU: &str = "tau";
pub const MU: &str = "mu";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("dataset has {} invalid record(s): {}", .0.len(), first_violation(.0))]
    InvalidDataset(Vec<Violation>),
    #[error("at least 2 studies are needed to estimate between-study heterogeneity, got {0}")]
    TooFewStudies(usize),
    #[error(
        "complete-case analysis needs at least 2 studies with a reported count, got {0}; \
         run the censoring-aware model alone instead"
    )]
    TooFewReported(usize),
    #[error("relative bias is undefined because the censoring-aware median is {0}")]
    UndefinedBias(f64),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

fn first_violation(v: &[Violation]) -> String {
    v.first().map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Magec,
    CompleteCase,
}

impl ModelKind {
    /// Short tag used in file names and URLs.
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Magec => "magec",
            ModelKind::CompleteCase => "cc",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ModelKind::Magec => "Censoring-aware model",
            ModelKind::CompleteCase => "Complete-case model",
        }
    }
}

/// Per-model progress, possibly reported from several threads.
pub trait AnalysisProgress: Sync {
    fn report(&self, model: ModelKind, progress: RunProgress);
}

impl<F: Fn(ModelKind, RunProgress) + Sync> AnalysisProgress for F {
    fn report(&self, model: ModelKind, progress: RunProgress) {
        self(model, progress)
    }
}

impl AnalysisProgress for crate::sampler::NoProgress {
    fn report(&self, _: ModelKind, _: RunProgress) {}
}

struct Tagged<'a> {
    model: ModelKind,
    inner: &'a dyn AnalysisProgress,
}

impl ProgressSink for Tagged<'_> {
    fn report(&self, progress: RunProgress) {
        self.inner.report(self.model, progress)
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisRequest {
    pub dataset: Dataset,
    pub model: ModelConfig,
    pub mcmc: McmcConfig,
    pub run_complete_case: bool,
    /// How chains are scheduled; does not affect the draws.
    pub execution: Execution,
}

impl AnalysisRequest {
    pub fn new(dataset: Dataset) -> Self {
        AnalysisRequest {
            dataset,
            model: ModelConfig::default(),
            mcmc: McmcConfig::default(),
            run_complete_case: true,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyEstimate {
    pub study_id: String,
    pub class: StudyClass,
    pub n_treated: u32,
    pub observed_count: Option<u32>,
    pub cutoff: Option<u32>,
    pub theta: PosteriorSummary,
    /// Posterior of the unreported count, for censored studies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_count: Option<PosteriorSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub mu: f64,
    pub eta_mean: f64,
    pub log_tau: f64,
}

/// Summaries of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: ModelKind,
    pub n_studies: usize,
    pub n_censored: usize,
    pub overall: PosteriorSummary,
    pub tau: PosteriorSummary,
    pub mu: PosteriorSummary,
    pub studies: Vec<StudyEstimate>,
    pub acceptance: AcceptanceSummary,
    pub convergence_warning: Option<ConvergenceWarning>,
    #[serde(skip)]
    pub chains: Vec<ChainOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub magec_median: f64,
    pub cc_median: f64,
    /// `100 (cc - magec) / magec`; positive when the complete-case analysis
    /// over-estimates.
    pub relative_bias_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub n_studies: usize,
    pub n_observed: usize,
    pub n_exact_zero: usize,
    pub n_censored: usize,
}

impl DatasetSummary {
    pub fn of(dataset: &Dataset) -> Self {
        let ClassCounts {
            observed,
            exact_zero,
            censored,
        } = dataset.class_counts();
        DatasetSummary {
            name: dataset.name().to_string(),
            n_studies: dataset.len(),
            n_observed: observed,
            n_exact_zero: exact_zero,
            n_censored: censored,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: ModelConfig,
    pub mcmc: McmcConfig,
    pub run_complete_case: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timing {
    pub magec_seconds: f64,
    pub complete_case_seconds: Option<f64>,
}

/// Everything one analysis produces. Serializes to `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub schema_version: u32,
    pub dataset: DatasetSummary,
    pub config: ConfigEcho,
    pub magec: ModelFit,
    pub complete_case: Option<ModelFit>,
    pub comparison: Option<ComparisonResult>,
    pub warnings: Vec<String>,
    /// Wall-clock timing; left out of the JSON so equal seeds give equal bytes.
    #[serde(skip)]
    pub timing: Timing,
}

impl AnalysisResult {
    pub fn fit(&self, model: ModelKind) -> Option<&ModelFit> {
        match model {
            ModelKind::Magec => Some(&self.magec),
            ModelKind::CompleteCase => self.complete_case.as_ref(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }
}

fn check_inputs(request: &AnalysisRequest) -> Result<(), AnalysisError> {
    let violations = validate_dataset(&request.dataset);
    if !is_valid(&violations) {
        return Err(AnalysisError::InvalidDataset(violations));
    }
    request.mcmc.validate()?;
    request.model.validate().map_err(SamplerError::from)?;
    Ok(())
}

fn fit_model(
    dataset: &Dataset,
    request: &AnalysisRequest,
    kind: ModelKind,
    progress: &dyn AnalysisProgress,
) -> Result<ModelFit, AnalysisError> {
    // Both models share the seed stream, so on a dataset with every count
    // reported the two fits are draw-for-draw identical.
    let options = SamplerOptions::default();
    let sink = Tagged {
        model: kind,
        inner: progress,
    };
    let chains = run_model(
        dataset,
        &request.model,
        &request.mcmc,
        &sink,
        &options,
        request.execution,
    )?;
    summarize_fit(dataset, kind, chains)
}

/// Builds the summaries of a model from its chains.
pub fn summarize_fit(
    dataset: &Dataset,
    kind: ModelKind,
    chains: Vec<ChainOutput>,
) -> Result<ModelFit, AnalysisError> {
    let incidence: Vec<Vec<f64>> = chains.iter().map(ChainOutput::overall_incidence).collect();
    let overall = posterior_summary(&incidence, OVERALL)?;
    let taus: Vec<&[f64]> = chains.iter().map(|c| c.tau.as_slice()).collect();
    let tau = posterior_summary(&taus, TAU)?;
    let mus: Vec<&[f64]> = chains.iter().map(|c| c.mu.as_slice()).collect();
    let mu = posterior_summary(&mus, MU)?;

    let mut studies = Vec::with_capacity(dataset.len());
    for (i, record) in dataset.studies().iter().enumerate() {
        let draws: Vec<&[f64]> = chains.iter().map(|c| c.theta[i].as_slice()).collect();
        let theta = posterior_summary(&draws, &format!("theta[{}]", record.study_id))?;
        let latent_count = chains[0]
            .latent
            .iter()
            .position(|t| t.study_index == i)
            .map(|slot| {
                let draws: Vec<Vec<f64>> = chains
                    .iter()
                    .map(|c| c.latent[slot].draws.iter().map(|&k| f64::from(k)).collect())
                    .collect();
                posterior_summary(&draws, &format!("latent[{}]", record.study_id))
            })
            .transpose()?;
        studies.push(StudyEstimate {
            study_id: record.study_id.clone(),
            class: record.class(),
            n_treated: record.n_treated,
            observed_count: record.observed_count,
            cutoff: record.cutoff,
            theta,
            latent_count,
        });
    }

    let m = chains.len() as f64;
    let acceptance = AcceptanceSummary {
        mu: chains.iter().map(|c| c.acceptance.mu).sum::<f64>() / m,
        eta_mean: chains
            .iter()
            .map(|c| {
                let eta = &c.acceptance.eta;
                if eta.is_empty() {
                    0.0
                } else {
                    eta.iter().sum::<f64>() / eta.len() as f64
                }
            })
            .sum::<f64>()
            / m,
        log_tau: chains.iter().map(|c| c.acceptance.log_tau).sum::<f64>() / m,
    };

    let convergence_warning = convergence_check(&[overall.clone(), tau.clone()], &[OVERALL, TAU])?;
    Ok(ModelFit {
        model: kind,
        n_studies: dataset.len(),
        n_censored: dataset.class_counts().censored,
        overall,
        tau,
        mu,
        studies,
        acceptance,
        convergence_warning,
        chains,
    })
}

/// Fits the censoring-aware model to every study.
pub fn run_magec(
    request: &AnalysisRequest,
    progress: &dyn AnalysisProgress,
) -> Result<ModelFit, AnalysisError> {
    check_inputs(request)?;
    if request.dataset.len() < 2 {
        return Err(AnalysisError::TooFewStudies(request.dataset.len()));
    }
    fit_model(&request.dataset, request, ModelKind::Magec, progress)
}

/// Fits the same model to the studies with a reported count only.
pub fn run_complete_case(
    request: &AnalysisRequest,
    progress: &dyn AnalysisProgress,
) -> Result<ModelFit, AnalysisError> {
    check_inputs(request)?;
    let subset = request.dataset.reported_only();
    let reported = subset.as_ref().map_or(0, Dataset::len);
    match subset {
        Some(subset) if reported >= 2 => {
            fit_model(&subset, request, ModelKind::CompleteCase, progress)
        }
        _ => Err(AnalysisError::TooFewReported(reported)),
    }
}

pub fn compare_models(magec: &ModelFit, cc: &ModelFit) -> Result<ComparisonResult, AnalysisError> {
    let (m, c) = (magec.overall.median, cc.overall.median);
    if !(m > 0.0) {
        return Err(AnalysisError::UndefinedBias(m));
    }
    Ok(ComparisonResult {
        magec_median: m,
        cc_median: c,
        relative_bias_percent: 100.0 * (c - m) / m,
    })
}

/// Runs both fits and assembles the result.
pub fn run_analysis(
    request: &AnalysisRequest,
    progress: &dyn AnalysisProgress,
) -> Result<AnalysisResult, AnalysisError> {
    check_inputs(request)?;
    let mut warnings: Vec<String> = request.dataset.warnings().to_vec();
    warnings.extend(
        validate_dataset(&request.dataset)
            .iter()
            .map(|v| v.to_string()),
    );

    let started = Instant::now();
    let magec = run_magec(request, progress)?;
    let mut timing = Timing {
        magec_seconds: started.elapsed().as_secs_f64(),
        complete_case_seconds: None,
    };
    if let Some(w) = &magec.convergence_warning {
        warnings.push(format!("{}: {}", ModelKind::Magec.title(), w.message));
    }

    let complete_case = if request.run_complete_case {
        let started = Instant::now();
        match run_complete_case(request, progress) {
            Ok(fit) => {
                timing.complete_case_seconds = Some(started.elapsed().as_secs_f64());
                if let Some(w) = &fit.convergence_warning {
                    warnings.push(format!("{}: {}", ModelKind::CompleteCase.title(), w.message));
                }
                Some(fit)
            }
            Err(e @ AnalysisError::TooFewReported(_)) => {
                warnings.push(e.to_string());
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let comparison = match &complete_case {
        Some(cc) => match compare_models(&magec, cc) {
            Ok(c) => Some(c),
            Err(e) => {
                warnings.push(e.to_string());
                None
            }
        },
        None => None,
    };

    Ok(AnalysisResult {
        schema_version: SCHEMA_VERSION,
        dataset: DatasetSummary::of(&request.dataset),
        config: ConfigEcho {
            model: request.model,
            mcmc: request.mcmc,
            run_complete_case: request.run_complete_case,
        },
        magec,
        complete_case,
        comparison,
        warnings,
        timing,
    })
}
