//! Command-line front end: `validate`, `run` and `serve`.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::analysis::{run_analysis, AnalysisError, AnalysisRequest, AnalysisResult, ModelKind};
use crate::dataset::{is_valid, parse_csv, validate_dataset, Dataset, Severity};
use crate::model::ModelConfig;
use crate::render::render_artifacts;
use crate::sampler::{McmcConfig, Phase, RunProgress};
use crate::service::{self, ServiceConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID_DATA: i32 = 2;
pub const EXIT_UNREADABLE: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "magec", version, about = "Bayesian meta-analysis of adverse-event incidence with left-censored counts")]
pub struct Cli {
    /// Log line format on stderr. Defaults to text, or json for `serve`.
    #[arg(long, value_enum, global = true)]
    pub log_format: Option<LogFormat>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogFormat {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a CSV dataset and list every violation.
    Validate {
        input: PathBuf,
    },
    /// Fit the models and write results, plots and report.
    Run(RunArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Svg,
    Html,
    Csv,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
    #[arg(long, default_value_t = 100_000)]
    pub iterations: u64,
    #[arg(long, default_value_t = 50_000)]
    pub burn_in: u64,
    #[arg(long, default_value_t = 5)]
    pub thin: u64,
    /// Scale of the half-Cauchy prior on tau.
    #[arg(long, default_value_t = 2.5)]
    pub prior_scale: f64,
    #[arg(long, default_value_t = 1e4)]
    pub mu_prior_variance: f64,
    #[arg(long)]
    pub skip_complete_case: bool,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json,svg,html,csv")]
    pub formats: Vec<OutputFormat>,
    /// Exit with status 4 when any convergence warning is raised.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "MAGEC_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "MAGEC_BIND", default_value = "127.0.0.1")]
    pub bind: String,
    /// Maximum number of analyses running at once.
    #[arg(long, env = "MAGEC_WORKERS", default_value_t = 2)]
    pub workers: usize,
    #[arg(long, env = "MAGEC_RETENTION_HOURS", default_value_t = 24)]
    pub retention_hours: u64,
    /// Directory where finished results are also written.
    #[arg(long, env = "MAGEC_SPOOL_DIR")]
    pub spool_dir: Option<PathBuf>,
    /// Directory with static front-end files served at `/`.
    #[arg(long, env = "MAGEC_UI_DIR")]
    pub ui_dir: Option<PathBuf>,
}

/// Stderr logger with a text or JSON line format.
#[derive(Debug, Clone, Copy)]
pub struct Logger {
    pub format: LogFormat,
}

impl Logger {
    pub fn log(&self, level: &str, message: &str, fields: serde_json::Value) {
        let line = match self.format {
            LogFormat::Json => {
                let mut obj = json!({ "level": level, "message": message });
                if let (Some(o), serde_json::Value::Object(extra)) = (obj.as_object_mut(), fields) {
                    o.extend(extra);
                }
                obj.to_string()
            }
            LogFormat::Text => {
                let extra = match fields {
                    serde_json::Value::Object(m) if !m.is_empty() => {
                        let parts: Vec<String> = m.iter().map(|(k, v)| format!("{k}={v}")).collect();
                        format!(" {}", parts.join(" "))
                    }
                    _ => String::new(),
                };
                format!("{level}: {message}{extra}")
            }
        };
        let _ = writeln!(std::io::stderr(), "{line}");
    }

    pub fn info(&self, message: &str, fields: serde_json::Value) {
        self.log("info", message, fields);
    }

    pub fn warn(&self, message: &str, fields: serde_json::Value) {
        self.log("warn", message, fields);
    }

    pub fn error(&self, message: &str, fields: serde_json::Value) {
        self.log("error", message, fields);
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
        }
    };
    let text = Logger {
        format: cli.log_format.unwrap_or(LogFormat::Text),
    };
    match cli.command {
        Command::Validate { input } => validate_command(&input, text),
        Command::Run(args) => run_command(&args, text),
        Command::Serve(args) => serve_command(
            args,
            Logger {
                format: cli.log_format.unwrap_or(LogFormat::Json),
            },
        ),
    }
}

fn load(path: &Path, log: Logger) -> Result<Dataset, i32> {
    let bytes = fs::read(path).map_err(|e| {
        log.error("cannot read input", json!({ "path": path.display().to_string(), "error": e.to_string() }));
        EXIT_UNREADABLE
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let dataset = parse_csv(&bytes, &name).map_err(|e| {
        log.error("malformed dataset", json!({ "error": e.to_string() }));
        EXIT_INVALID_DATA
    })?;
    for w in dataset.warnings() {
        log.warn(w, json!({}));
    }
    let violations = validate_dataset(&dataset);
    for v in &violations {
        let msg = v.to_string();
        match v.severity {
            Severity::Error => log.error(&msg, json!({})),
            Severity::Warning => log.warn(&msg, json!({})),
        }
    }
    if is_valid(&violations) {
        Ok(dataset)
    } else {
        Err(EXIT_INVALID_DATA)
    }
}

fn validate_command(input: &Path, log: Logger) -> i32 {
    match load(input, log) {
        Ok(dataset) => {
            let counts = dataset.class_counts();
            println!(
                "{}: {} studies ({} reported, {} known zero, {} censored): valid",
                dataset.name(),
                dataset.len(),
                counts.observed,
                counts.exact_zero,
                counts.censored
            );
            EXIT_OK
        }
        Err(code) => code,
    }
}

fn progress_logger(log: Logger) -> impl Fn(ModelKind, RunProgress) + Sync {
    // Chains advance in lockstep, so the first one stands in for all.
    let last = Mutex::new(std::collections::HashMap::<ModelKind, u64>::new());
    move |model: ModelKind, p: RunProgress| {
        if p.chain != 0 {
            return;
        }
        let quarter = (p.fraction() * 4.0).floor() as u64;
        let mut last = last.lock().unwrap_or_else(|e| e.into_inner());
        let seen = last.entry(model).or_insert(0);
        if quarter > *seen {
            *seen = quarter;
            log.info(
                "progress",
                json!({
                    "model": model.tag(),
                    "iteration": p.completed,
                    "total": p.total,
                    "phase": match p.phase { Phase::BurnIn => "burn_in", Phase::Sampling => "sampling" },
                }),
            );
        }
    }
}

/// Writes the requested artefacts and returns the file paths.
pub fn write_outputs(
    result: &AnalysisResult,
    dataset: &Dataset,
    out: &Path,
    formats: &[OutputFormat],
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let art = render_artifacts(result, dataset);
    let mut files: Vec<(&str, &str)> = Vec::new();
    if formats.contains(&OutputFormat::Json) {
        files.push(("results.json", &art.results_json));
    }
    if formats.contains(&OutputFormat::Svg) {
        files.push(("forest_magec.svg", &art.forest_magec));
        if let Some(svg) = &art.forest_cc {
            files.push(("forest_cc.svg", svg));
        }
    }
    if formats.contains(&OutputFormat::Html) {
        files.push(("report.html", &art.report_html));
    }
    if formats.contains(&OutputFormat::Csv) {
        files.push(("summary.csv", &art.summary_csv));
    }
    let mut written = Vec::new();
    for (name, content) in files {
        let path = out.join(name);
        fs::write(&path, content)?;
        written.push(path);
    }
    Ok(written)
}

fn run_command(args: &RunArgs, log: Logger) -> i32 {
    let dataset = match load(&args.input, log) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let mut request = AnalysisRequest::new(dataset.clone());
    request.model = ModelConfig {
        prior_scale_a: args.prior_scale,
        mu_prior_variance: args.mu_prior_variance,
        ..ModelConfig::default()
    };
    request.mcmc = McmcConfig {
        n_chains: args.chains,
        n_iter: args.iterations,
        burn_in: args.burn_in,
        thin: args.thin,
        seed: args.seed,
        ..McmcConfig::default()
    };
    request.run_complete_case = !args.skip_complete_case;
    if let Err(e) = request.model.validate() {
        log.error("invalid configuration", json!({ "error": e.to_string() }));
        return EXIT_INVALID_DATA;
    }
    if let Err(e) = request.mcmc.validate() {
        log.error("invalid configuration", json!({ "error": e.to_string() }));
        return EXIT_INVALID_DATA;
    }

    let progress = progress_logger(log);
    let result = match run_analysis(&request, &progress) {
        Ok(r) => r,
        Err(e) => {
            log.error("analysis failed", json!({ "error": e.to_string() }));
            return match e {
                AnalysisError::InvalidDataset(_)
                | AnalysisError::TooFewStudies(_) => EXIT_INVALID_DATA,
                _ => EXIT_FAILURE,
            };
        }
    };
    // Dataset warnings were already logged while loading.
    let mut seen: Vec<String> = dataset.warnings().to_vec();
    seen.extend(validate_dataset(&dataset).iter().map(|v| v.to_string()));
    for w in result.warnings.iter().filter(|w| !seen.contains(w)) {
        log.warn(w, json!({}));
    }
    let converged = [Some(&result.magec), result.complete_case.as_ref()]
        .into_iter()
        .flatten()
        .all(|fit| fit.convergence_warning.is_none());
    match write_outputs(&result, &dataset, &args.out, &args.formats) {
        Ok(paths) => {
            for p in paths {
                log.info("wrote", json!({ "path": p.display().to_string() }));
            }
        }
        Err(e) => {
            log.error("cannot write outputs", json!({ "error": e.to_string() }));
            return EXIT_FAILURE;
        }
    }
    if args.strict && !converged {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    }
}

fn serve_command(args: ServeArgs, log: Logger) -> i32 {
    let config = ServiceConfig {
        bind: args.bind,
        port: args.port,
        workers: args.workers.max(1),
        retention: std::time::Duration::from_secs(args.retention_hours * 3600),
        spool_dir: args.spool_dir,
        ui_dir: args.ui_dir,
        json_logs: log.format == LogFormat::Json,
        ..ServiceConfig::default()
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            log.error("cannot start runtime", json!({ "error": e.to_string() }));
            return EXIT_FAILURE;
        }
    };
    match runtime.block_on(service::serve(config)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log.error("server failed", json!({ "error": e.to_string() }));
            EXIT_FAILURE
        }
    }
}
