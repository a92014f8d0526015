//! Human-facing output: summary tables, the narrative paragraph, SVG forest
//! plots and the single-file HTML report.
//!
//! Every number shown anywhere goes through [`fmt_fixed`] / [`fmt_percent`],
//! so the table, the paragraph and the plot always agree.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisResult, ModelFit, ModelKind};
use crate::dataset::{Dataset, StudyClass};
use crate::diagnostics::{PosteriorSummary, RHAT_THRESHOLD};

/// Decimal places for incidence percentages.
pub const PERCENT_DP: usize = 2;
pub const TAU_DP: usize = 3;
pub const RHAT_DP: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("forest plot has no study rows")]
    EmptyPlot,
}

/// Fixed-point formatting shared by every renderer. Negative zero prints
/// as zero.
pub fn fmt_fixed(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// A probability shown as a percentage, without the `%` sign.
pub fn fmt_percent(probability: f64, decimals: usize) -> String {
    fmt_fixed(100.0 * probability, decimals)
}

/// Integer with thousands separators, e.g. `100,000`.
pub fn fmt_thousands(value: u64) -> String {
    let digits = value.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn fmt_general(value: f64) -> String {
    if value.fract() == 0.0 && value.abs() < 1e15 {
        fmt_thousands(value.abs() as u64)
    } else {
        format!("{value}")
    }
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub quantity: String,
    pub cells: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub model: ModelKind,
    pub columns: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["model".to_string(), "quantity".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for row in &self.rows {
            let mut record = vec![self.model.tag().to_string(), row.quantity.clone()];
            record.extend(row.cells.iter().cloned());
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn to_html(&self) -> String {
        let mut s = String::from("<table class=\"summary\">\n<thead><tr><th>Quantity</th>");
        for c in &self.columns {
            let _ = write!(s, "<th>{}</th>", escape(c));
        }
        s.push_str("</tr></thead>\n<tbody>\n");
        for row in &self.rows {
            let _ = write!(s, "<tr><th scope=\"row\">{}</th>", escape(&row.quantity));
            for c in &row.cells {
                let _ = write!(s, "<td>{}</td>", escape(c));
            }
            s.push_str("</tr>\n");
        }
        s.push_str("</tbody>\n</table>\n");
        s
    }
}

const TABLE_COLUMNS: [&str; 9] = [
    "Median",
    "SD",
    "95% CrI lower",
    "95% CrI upper",
    "Mean",
    "MCSE",
    "Rhat",
    "ESS",
    "Scale",
];

fn summary_cells(s: &PosteriorSummary, scale: f64, dp: usize, unit: &str) -> Vec<String> {
    vec![
        fmt_fixed(scale * s.median, dp),
        fmt_fixed(scale * s.sd, dp),
        fmt_fixed(scale * s.cri_lower, dp),
        fmt_fixed(scale * s.cri_upper, dp),
        fmt_fixed(scale * s.mean, dp),
        fmt_fixed(scale * s.mcse, dp + 1),
        fmt_fixed(s.rhat, RHAT_DP),
        fmt_fixed(s.ess, 0),
        unit.to_string(),
    ]
}

/// Summary table of one fit: overall incidence (percent) and tau.
pub fn render_fit_table(fit: &ModelFit) -> SummaryTable {
    SummaryTable {
        model: fit.model,
        columns: TABLE_COLUMNS.iter().map(|c| c.to_string()).collect(),
        rows: vec![
            SummaryRow {
                quantity: "Overall incidence (%)".into(),
                cells: summary_cells(&fit.overall, 100.0, PERCENT_DP, "percent"),
            },
            SummaryRow {
                quantity: "Between-study SD tau (log-odds)".into(),
                cells: summary_cells(&fit.tau, 1.0, TAU_DP, "log-odds"),
            },
        ],
    }
}

/// Summary table of the censoring-aware fit.
pub fn render_summary_table(result: &AnalysisResult) -> SummaryTable {
    render_fit_table(&result.magec)
}

/// All tables of a result concatenated as one CSV document.
pub fn summary_csv(result: &AnalysisResult) -> String {
    let mut out = render_fit_table(&result.magec).to_csv();
    if let Some(cc) = &result.complete_case {
        let cc_csv = render_fit_table(cc).to_csv();
        out.extend(cc_csv.lines().skip(1).map(|l| format!("{l}\n")));
    }
    out
}

fn estimate_with_cri(s: &PosteriorSummary) -> String {
    format!(
        "{}% (95% CrI [{}%, {}%])",
        fmt_percent(s.median, PERCENT_DP),
        fmt_percent(s.cri_lower, PERCENT_DP),
        fmt_percent(s.cri_upper, PERCENT_DP)
    )
}

fn plural(n: usize, one: &str, many: &str) -> String {
    format!("{n} {}", if n == 1 { one } else { many })
}

/// Auto-generated paragraph summarizing the meta-analysis.
pub fn render_narrative(result: &AnalysisResult) -> String {
    let d = &result.dataset;
    let m = &result.magec;
    let mut text = format!(
        "A one-stage Bayesian random-effects meta-analysis that accounts for left-censored \
         adverse-event counts was fitted to {}, of which {} had a count below the \
         study-specific reporting cutoff",
        plural(d.n_studies, "study", "studies"),
        d.n_censored,
    );
    if d.n_exact_zero > 0 {
        let _ = write!(
            text,
            " and {} had an unreported count known to be zero",
            d.n_exact_zero
        );
    }
    let _ = write!(
        text,
        ". The estimated incidence was {}, with a between-study standard deviation of the \
         log-odds of {} (95% CrI [{}, {}]).",
        estimate_with_cri(&m.overall),
        fmt_fixed(m.tau.median, TAU_DP),
        fmt_fixed(m.tau.cri_lower, TAU_DP),
        fmt_fixed(m.tau.cri_upper, TAU_DP),
    );
    if let Some(cc) = &result.complete_case {
        let _ = write!(
            text,
            " A complete-case analysis restricted to the {} with a reported count gave {}.",
            plural(cc.n_studies, "study", "studies"),
            estimate_with_cri(&cc.overall),
        );
        if let Some(c) = &result.comparison {
            let direction = if c.relative_bias_percent >= 0.0 {
                "over-estimates"
            } else {
                "under-estimates"
            };
            let _ = write!(
                text,
                " Relative to the censoring-aware estimate, the complete-case analysis {direction} \
                 the incidence by {}%.",
                fmt_fixed(c.relative_bias_percent.abs(), 1),
            );
        }
    }
    let warnings: Vec<&str> = [Some(m), result.complete_case.as_ref()]
        .into_iter()
        .flatten()
        .filter_map(|f| f.convergence_warning.as_ref().map(|w| w.message.as_str()))
        .collect();
    if warnings.is_empty() {
        let _ = write!(
            text,
            " All key parameters had Rhat at or below {RHAT_THRESHOLD}, indicating adequate \
             convergence of the MCMC chains."
        );
    } else {
        for w in warnings {
            let _ = write!(text, " Warning: {w}");
        }
    }
    text
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    /// Dataset order.
    #[default]
    Dataset,
    /// Ascending posterior median.
    Estimate,
}

/// One study row of a forest plot. Values are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    pub label: String,
    pub n_treated: u32,
    pub count_text: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestOverall {
    pub label: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestPlotSpec {
    pub title: String,
    pub rows: Vec<ForestRow>,
    pub overall: ForestOverall,
    pub axis_min: f64,
    pub axis_max: f64,
    pub width: u32,
    pub decimals: usize,
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * magnitude)
        .find(|step| *step >= raw)
        .unwrap_or(10.0 * magnitude)
}

fn axis_bounds(max_value: f64) -> (f64, f64, f64) {
    let top = if max_value > 0.0 { max_value } else { 1.0 };
    let step = nice_step(top);
    let axis_max = (top / step).ceil() * step;
    (0.0, axis_max, step)
}

impl ForestPlotSpec {
    pub fn from_fit(fit: &ModelFit, decimals: usize, order: SortOrder) -> Self {
        let mut rows: Vec<ForestRow> = fit
            .studies
            .iter()
            .map(|s| {
                let (count_text, censored) = match s.class {
                    StudyClass::Observed(y) => (y.to_string(), false),
                    StudyClass::ExactZero => ("0 (unreported)".to_string(), false),
                    StudyClass::Censored(c) => (format!("\u{2264} {c}"), true),
                };
                ForestRow {
                    label: s.study_id.clone(),
                    n_treated: s.n_treated,
                    count_text,
                    estimate: 100.0 * s.theta.median,
                    lower: 100.0 * s.theta.cri_lower,
                    upper: 100.0 * s.theta.cri_upper,
                    censored,
                }
            })
            .collect();
        if order == SortOrder::Estimate {
            rows.sort_by(|a, b| a.estimate.total_cmp(&b.estimate));
        }
        let overall = ForestOverall {
            label: "Overall".into(),
            estimate: 100.0 * fit.overall.median,
            lower: 100.0 * fit.overall.cri_lower,
            upper: 100.0 * fit.overall.cri_upper,
        };
        let max_upper = rows
            .iter()
            .map(|r| r.upper)
            .chain(std::iter::once(overall.upper))
            .fold(0.0, f64::max);
        let (axis_min, axis_max, _) = axis_bounds(max_upper);
        ForestPlotSpec {
            title: format!("{}: incidence (%)", fit.model.title()),
            rows,
            overall,
            axis_min,
            axis_max,
            width: 960,
            decimals,
        }
    }
}

const ROW_HEIGHT: f64 = 22.0;
const TOP: f64 = 56.0;
const COL_N: f64 = 330.0;
const COL_Y: f64 = 400.0;
const PLOT_LEFT: f64 = 490.0;
const TEXT_GAP: f64 = 16.0;
const RIGHT_TEXT_WIDTH: f64 = 200.0;

/// Deterministic SVG forest plot.
pub fn render_forest_plot_svg(spec: &ForestPlotSpec) -> Result<String, RenderError> {
    if spec.rows.is_empty() {
        return Err(RenderError::EmptyPlot);
    }
    let width = f64::from(spec.width);
    let plot_right = width - RIGHT_TEXT_WIDTH - TEXT_GAP;
    let span = (spec.axis_max - spec.axis_min).max(f64::MIN_POSITIVE);
    let x_of = |v: f64| {
        let v = v.clamp(spec.axis_min, spec.axis_max);
        PLOT_LEFT + (v - spec.axis_min) / span * (plot_right - PLOT_LEFT)
    };
    let n_rows = spec.rows.len() as f64;
    let overall_y = TOP + (n_rows + 0.8) * ROW_HEIGHT;
    let axis_y = overall_y + ROW_HEIGHT;
    let any_censored = spec.rows.iter().any(|r| r.censored);
    let height = axis_y + 48.0 + if any_censored { 20.0 } else { 0.0 };
    let dp = spec.decimals;
    let c = |v: f64| format!("{v:.2}");

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\" font-family=\"Helvetica, Arial, sans-serif\" font-size=\"12\">",
        spec.width,
        c(height),
        spec.width,
        c(height)
    );
    let _ = writeln!(s, "<rect id=\"background\" x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>", spec.width, c(height));
    let _ = writeln!(
        s,
        "<text id=\"title\" x=\"10\" y=\"20\" font-size=\"14\" font-weight=\"bold\">{}</text>",
        escape(&spec.title)
    );

    let header_y = TOP - 10.0;
    let _ = writeln!(s, "<g id=\"header\" font-weight=\"bold\">");
    let _ = writeln!(s, "<text x=\"10\" y=\"{}\">Study</text>", c(header_y));
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">N</text>", c(COL_N), c(header_y));
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">Y</text>", c(COL_Y + 40.0), c(header_y));
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">Estimate [95% CrI] (%)</text>", c(plot_right + TEXT_GAP), c(header_y));
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, "<g id=\"grid\" stroke=\"#dddddd\" stroke-width=\"1\">");
    let (_, _, step) = axis_bounds(spec.axis_max);
    let n_ticks = ((spec.axis_max - spec.axis_min) / step).round() as usize;
    let ticks: Vec<f64> = (0..=n_ticks).map(|k| spec.axis_min + k as f64 * step).collect();
    for t in &ticks {
        let x = c(x_of(*t));
        let _ = writeln!(s, "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\"/>", c(TOP - 4.0), c(axis_y));
    }
    let _ = writeln!(s, "</g>");

    let max_side = 10.0;
    let widths: Vec<f64> = spec.rows.iter().map(|r| (r.upper - r.lower).max(0.0)).collect();
    let narrowest = widths.iter().copied().fold(f64::INFINITY, f64::min);
    let _ = writeln!(s, "<g id=\"studies\">");
    for (i, row) in spec.rows.iter().enumerate() {
        let y = TOP + (i as f64 + 0.5) * ROW_HEIGHT;
        let ty = c(y + 4.0);
        let dagger = if row.censored { "\u{2020}" } else { "" };
        let _ = writeln!(s, "<g id=\"row-{i}\">");
        let _ = writeln!(s, "<text x=\"10\" y=\"{ty}\">{}{dagger}</text>", escape(&row.label));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ty}\" text-anchor=\"end\">{}</text>", c(COL_N), row.n_treated);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ty}\" text-anchor=\"end\">{}</text>", c(COL_Y + 40.0), escape(&row.count_text));
        let _ = writeln!(
            s,
            "<line class=\"whisker\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1.5\"/>",
            c(x_of(row.lower)),
            c(y),
            c(x_of(row.upper)),
            c(y)
        );
        // Narrower intervals get larger squares.
        let side = if widths[i] > 0.0 && narrowest.is_finite() && narrowest > 0.0 {
            (max_side * (narrowest / widths[i]).sqrt()).clamp(4.0, max_side)
        } else {
            max_side
        };
        let _ = writeln!(
            s,
            "<rect class=\"point\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
            c(x_of(row.estimate) - side / 2.0),
            c(y - side / 2.0),
            c(side),
            c(side),
            if row.censored { "#b45309" } else { "#1f4e79" }
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{ty}\">{} [{}, {}]</text>",
            c(plot_right + TEXT_GAP),
            fmt_fixed(row.estimate, dp),
            fmt_fixed(row.lower, dp),
            fmt_fixed(row.upper, dp)
        );
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, "</g>");

    let o = &spec.overall;
    let sep_y = overall_y - 0.8 * ROW_HEIGHT + 4.0;
    let _ = writeln!(
        s,
        "<line id=\"separator\" x1=\"10\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999999\"/>",
        c(sep_y),
        spec.width - 10,
        c(sep_y)
    );
    let oty = c(overall_y + 4.0);
    let _ = writeln!(s, "<g id=\"overall\" font-weight=\"bold\">");
    let _ = writeln!(s, "<text x=\"10\" y=\"{oty}\">{}</text>", escape(&o.label));
    let _ = writeln!(
        s,
        "<polygon class=\"diamond\" points=\"{},{} {},{} {},{} {},{}\" fill=\"#7f1d1d\"/>",
        c(x_of(o.lower)),
        c(overall_y),
        c(x_of(o.estimate)),
        c(overall_y - 7.0),
        c(x_of(o.upper)),
        c(overall_y),
        c(x_of(o.estimate)),
        c(overall_y + 7.0)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{oty}\">{} [{}, {}]</text>",
        c(plot_right + TEXT_GAP),
        fmt_fixed(o.estimate, dp),
        fmt_fixed(o.lower, dp),
        fmt_fixed(o.upper, dp)
    );
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, "<g id=\"axis\">");
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>",
        c(PLOT_LEFT),
        c(axis_y),
        c(plot_right),
        c(axis_y)
    );
    let tick_dp = if step.fract() == 0.0 { 0 } else if (step * 10.0).fract() == 0.0 { 1 } else { 2 };
    for t in &ticks {
        let x = c(x_of(*t));
        let _ = writeln!(s, "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#333333\"/>", c(axis_y), c(axis_y + 5.0));
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            c(axis_y + 18.0),
            fmt_fixed(*t, tick_dp)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">Incidence (%)</text>",
        c((PLOT_LEFT + plot_right) / 2.0),
        c(axis_y + 36.0)
    );
    let _ = writeln!(s, "</g>");
    if any_censored {
        let _ = writeln!(
            s,
            "<text id=\"footnote\" x=\"10\" y=\"{}\" font-size=\"11\">\u{2020} count not reported; \
             only known to be at most the cutoff</text>",
            c(axis_y + 56.0)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Forest plot of a fit with the default layout.
pub fn forest_svg(fit: &ModelFit) -> String {
    render_forest_plot_svg(&ForestPlotSpec::from_fit(fit, PERCENT_DP, SortOrder::Dataset))
        .expect("fits always have at least two studies")
}

/// Every rendered output of one analysis, as served and written to disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub results_json: String,
    pub forest_magec: String,
    pub forest_cc: Option<String>,
    pub report_html: String,
    pub summary_csv: String,
}

pub fn render_artifacts(result: &AnalysisResult, dataset: &Dataset) -> Artifacts {
    let forest_magec = forest_svg(&result.magec);
    let forest_cc = result.complete_case.as_ref().map(forest_svg);
    let mut plots = vec![(ModelKind::Magec, forest_magec.clone())];
    if let Some(svg) = &forest_cc {
        plots.push((ModelKind::CompleteCase, svg.clone()));
    }
    Artifacts {
        results_json: result.to_json(),
        report_html: render_report_html(result, &plots, dataset),
        summary_csv: summary_csv(result),
        forest_magec,
        forest_cc,
    }
}

const REPORT_STYLE: &str = "body{font-family:Helvetica,Arial,sans-serif;max-width:1000px;margin:2em auto;\
padding:0 1em;color:#1a1a1a;line-height:1.45}\
h1{font-size:1.6em}h2{font-size:1.25em;border-bottom:1px solid #ccc;padding-bottom:.2em;margin-top:2em}\
table{border-collapse:collapse;margin:1em 0;font-size:.9em}\
th,td{border:1px solid #ccc;padding:.3em .6em;text-align:right}\
th[scope=row],td.left,th.left{text-align:left}\
.warning{background:#fff4d6;border:1px solid #e0b000;padding:.6em 1em;margin:1em 0}\
.figure{overflow-x:auto}";

fn methods_text(result: &AnalysisResult) -> String {
    let mc = &result.config.mcmc;
    let model = &result.config.model;
    let mu_prior = match model.mu_prior {
        crate::model::MuPrior::Normal => format!(
            "a normal prior with mean 0 and variance {}",
            fmt_general(model.mu_prior_variance)
        ),
        crate::model::MuPrior::Logistic => {
            "a standard logistic prior (uniform on the incidence scale)".to_string()
        }
    };
    let mut text = format!(
        "<p>Adverse-event counts were modelled with a one-stage Bayesian random-effects model. \
         The count in study <i>i</i> was assumed to follow a binomial distribution with the \
         number of treated patients as the number of trials and a study-specific incidence \
         probability, whose logit equals an overall log-odds plus a normally distributed \
         study-specific random effect with mean 0 and between-study standard deviation tau. \
         Counts that were not reported because they fell at or below a study-specific reporting \
         cutoff were treated as left-censored: such a study contributes the binomial probability \
         of observing at most its cutoff, and the unobserved counts were handled by data \
         augmentation within the sampler. Unreported counts with a cutoff of zero were treated as \
         observed zeros.</p>\n\
         <p>The overall log-odds was given {mu_prior}, and tau was given a half-Cauchy prior with \
         scale {}. Posterior inference used Metropolis-within-Gibbs sampling with {} chains of {} \
         iterations each; the first {} iterations of each chain were discarded as burn-in and every \
         {} draw was kept (thinning interval {}), leaving {} draws per chain (random seed {}). \
         Random-walk proposal scales were tuned during burn-in only. The overall incidence was \
         summarized as the posterior median of the inverse-logit of the overall log-odds with an \
         equal-tailed 95% credible interval. Convergence was assessed with the split potential scale \
         reduction factor (Rhat), with values above {} taken to indicate insufficient convergence.</p>\n",
        fmt_general(model.prior_scale_a),
        mc.n_chains,
        fmt_thousands(mc.n_iter),
        fmt_thousands(mc.burn_in),
        ordinal(mc.thin),
        mc.thin,
        fmt_thousands(mc.retained_per_chain()),
        mc.seed,
        RHAT_THRESHOLD,
    );
    if result.config.run_complete_case {
        text.push_str(
            "<p>For comparison, the same model was fitted to the subset of studies that reported \
             their counts (complete-case analysis).</p>\n",
        );
    }
    text
}

fn ordinal(n: u64) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    if n == 1 {
        "single".to_string()
    } else {
        format!("{n}{suffix}")
    }
}

const REFERENCES: [&str; 4] = [
    "Gelman A, Rubin DB (1992). Inference from iterative simulation using multiple sequences. \
     Statistical Science 7(4):457-472.",
    "Gelman A (2006). Prior distributions for variance parameters in hierarchical models. \
     Bayesian Analysis 1(3):515-534.",
    "Gelman A, Carlin JB, Stern HS, Dunson DB, Vehtari A, Rubin DB (2013). Bayesian Data \
     Analysis, 3rd edition. Chapman & Hall/CRC.",
    "Tanner MA, Wong WH (1987). The calculation of posterior distributions by data augmentation. \
     Journal of the American Statistical Association 82(398):528-540.",
];

fn fit_section(s: &mut String, fit: &ModelFit, plot: &str) {
    let _ = writeln!(s, "<section id=\"{}\">", fit.model.tag());
    let _ = writeln!(s, "<h2>{}</h2>", fit.model.title());
    let _ = writeln!(
        s,
        "<p>{} included.</p>",
        plural(fit.n_studies, "study", "studies")
    );
    s.push_str(&render_fit_table(fit).to_html());
    if let Some(w) = &fit.convergence_warning {
        let _ = writeln!(s, "<div class=\"warning\">{}</div>", escape(&w.message));
    }
    let _ = writeln!(s, "<div class=\"figure\">\n{plot}</div>");
    s.push_str("</section>\n");
}

/// Self-contained HTML report. `plots` maps each fitted model to its SVG;
/// missing entries are rendered with the default layout.
pub fn render_report_html(result: &AnalysisResult, plots: &[(ModelKind, String)], dataset: &Dataset) -> String {
    let plot_for = |fit: &ModelFit| {
        plots
            .iter()
            .find(|(k, _)| *k == fit.model)
            .map(|(_, svg)| svg.clone())
            .unwrap_or_else(|| forest_svg(fit))
    };

    let mut s = String::new();
    s.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(
        s,
        "<title>Adverse-event incidence meta-analysis: {}</title>",
        escape(dataset.name())
    );
    let _ = writeln!(s, "<style>{REPORT_STYLE}</style>\n</head>\n<body>");
    let _ = writeln!(
        s,
        "<h1>Adverse-event incidence meta-analysis: {}</h1>",
        escape(dataset.name())
    );

    s.push_str("<section id=\"summary\">\n<h2>Summary</h2>\n");
    let _ = writeln!(s, "<p>{}</p>", escape(&render_narrative(result)));
    // Convergence warnings are shown next to their model instead.
    let fit_warnings: Vec<&str> = [Some(&result.magec), result.complete_case.as_ref()]
        .into_iter()
        .flatten()
        .filter_map(|f| f.convergence_warning.as_ref().map(|w| w.message.as_str()))
        .collect();
    for w in result.warnings.iter().filter(|w| !fit_warnings.iter().any(|f| w.ends_with(f))) {
        let _ = writeln!(s, "<div class=\"warning\">{}</div>", escape(w));
    }
    s.push_str("</section>\n");

    s.push_str("<section id=\"data\">\n<h2>Data overview</h2>\n<table>\n<thead><tr>");
    s.push_str("<th class=\"left\">Study</th><th>N</th><th>Cutoff</th><th>Y</th><th class=\"left\">Status</th></tr></thead>\n<tbody>\n");
    for study in dataset.studies() {
        let status = match study.class() {
            StudyClass::Observed(_) => "reported",
            StudyClass::ExactZero => "unreported, cutoff 0 (count is 0)",
            StudyClass::Censored(_) => "unreported (left-censored)",
        };
        let _ = writeln!(
            s,
            "<tr><td class=\"left\">{}</td><td>{}</td><td>{}</td><td>{}</td><td class=\"left\">{}</td></tr>",
            escape(&study.study_id),
            study.n_treated,
            study.cutoff.map(|c| c.to_string()).unwrap_or_default(),
            study.observed_count.map(|y| y.to_string()).unwrap_or_else(|| "-".into()),
            status
        );
    }
    s.push_str("</tbody>\n</table>\n</section>\n");

    fit_section(&mut s, &result.magec, &plot_for(&result.magec));
    if let Some(cc) = &result.complete_case {
        fit_section(&mut s, cc, &plot_for(cc));
    }

    if let Some(c) = &result.comparison {
        let cc = result.complete_case.as_ref().expect("comparison implies a complete-case fit");
        s.push_str("<section id=\"comparison\">\n<h2>Comparison</h2>\n");
        let _ = writeln!(
            s,
            "<p>Censoring-aware estimate: {}. Complete-case estimate: {}. Relative difference of \
             the complete-case median: {}{}%.</p>",
            estimate_with_cri(&result.magec.overall),
            estimate_with_cri(&cc.overall),
            if c.relative_bias_percent >= 0.0 { "+" } else { "-" },
            fmt_fixed(c.relative_bias_percent.abs(), 1)
        );
        s.push_str("</section>\n");
    }

    s.push_str("<section id=\"methods\">\n<h2>Statistical analysis (template)</h2>\n");
    s.push_str(&methods_text(result));
    s.push_str("</section>\n");

    s.push_str("<section id=\"references\">\n<h2>References</h2>\n<ol>\n");
    for r in REFERENCES {
        let _ = writeln!(s, "<li>{}</li>", escape(r));
    }
    s.push_str("</ol>\n</section>\n</body>\n</html>\n");
    s
}
