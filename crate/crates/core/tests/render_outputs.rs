use std::sync::OnceLock;

use magec::analysis::{run_analysis, AnalysisRequest, AnalysisResult, ModelKind};
use magec::dataset::Dataset;
use magec::diagnostics::{ConvergenceWarning, FlaggedQuantity};
use magec::render::{
    render_artifacts, render_forest_plot_svg, render_narrative, render_report_html,
    render_summary_table, summary_csv, ForestPlotSpec, RenderError, SortOrder,
};
use magec::sampler::{McmcConfig, NoProgress};

fn request(run_cc: bool) -> AnalysisRequest {
    AnalysisRequest {
        mcmc: McmcConfig {
            n_iter: 8_000,
            burn_in: 3_000,
            thin: 5,
            seed: 77,
            ..McmcConfig::default()
        },
        run_complete_case: run_cc,
        ..AnalysisRequest::new(Dataset::sample())
    }
}

fn result() -> &'static AnalysisResult {
    static CELL: OnceLock<AnalysisResult> = OnceLock::new();
    CELL.get_or_init(|| run_analysis(&request(true), &NoProgress).unwrap())
}

fn pct(p: f64) -> String {
    format!("{:.2}", 100.0 * p)
}

#[test]
fn summary_table_cells_follow_the_rounding_rule() {
    let r = result();
    let t = render_summary_table(r);
    assert_eq!(t.model, ModelKind::Magec);
    assert_eq!(t.columns.len(), 9);
    assert_eq!(t.columns[0], "Median");
    let o = &r.magec.overall;
    let row = &t.rows[0].cells;
    assert_eq!(row[0], pct(o.median));
    assert_eq!(row[2], pct(o.cri_lower));
    assert_eq!(row[3], pct(o.cri_upper));
    assert_eq!(row[6], format!("{:.3}", o.rhat));
    assert_eq!(t.rows[1].cells[0], format!("{:.3}", r.magec.tau.median));
    assert!(t.to_html().contains(&format!("<td>{}</td>", pct(o.median))));
}

#[test]
fn summary_csv_holds_both_models() {
    let csv = summary_csv(result());
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header = reader.headers().unwrap().clone();
    assert_eq!(&header[0], "model");
    assert_eq!(&header[1], "quantity");
    let models: Vec<String> = reader.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(models, ["magec", "magec", "cc", "cc"]);
}

#[test]
fn narrative_reports_estimates_and_bias() {
    let r = result();
    let text = render_narrative(r);
    let o = &r.magec.overall;
    let expected = format!("{}% (95% CrI [{}%, {}%])", pct(o.median), pct(o.cri_lower), pct(o.cri_upper));
    assert!(text.contains(&expected), "{text}");
    assert!(text.contains("fitted to 15 studies, of which 2 had a count below"));
    assert!(text.contains("4 had an unreported count known to be zero"));
    assert!(text.contains("restricted to the 9 studies with a reported count"));
    let bias = r.comparison.as_ref().unwrap().relative_bias_percent;
    assert!(text.contains(&format!("over-estimates the incidence by {:.1}%", bias)));
    assert!(text.contains("All key parameters had Rhat at or below 1.01"));
    assert!(!text.contains('\u{2014}'));
}

#[test]
fn narrative_carries_convergence_warnings() {
    let mut r = result().clone();
    r.magec.convergence_warning = Some(ConvergenceWarning {
        quantities: vec![FlaggedQuantity { name: "tau".into(), rhat: 1.2 }],
        message: "Rhat exceeds 1.01 for tau.".into(),
    });
    let text = render_narrative(&r);
    assert!(text.contains("Warning: Rhat exceeds 1.01 for tau."));
    assert!(!text.contains("All key parameters"));
}

#[test]
fn forest_plot_is_deterministic_and_complete() {
    let r = result();
    let spec = ForestPlotSpec::from_fit(&r.magec, 2, SortOrder::Dataset);
    let a = render_forest_plot_svg(&spec).unwrap();
    let b = render_forest_plot_svg(&spec).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
    assert_eq!(a.matches("class=\"point\"").count(), 15);
    assert_eq!(a.matches("class=\"whisker\"").count(), 15);
    assert_eq!(a.matches("class=\"diamond\"").count(), 1);
    assert_eq!(a.matches("<g").count(), a.matches("</g>").count());
    for i in 0..15 {
        assert!(a.contains(&format!("id=\"row-{i}\"")));
    }
    assert!(!a.contains("id=\"row-15\""));
    assert_eq!(a.matches('\u{2020}').count(), 3, "two censored rows plus the footnote");
    assert!(a.contains("id=\"footnote\""));
    assert!(a.contains("\u{2264} 9"));
    assert!(a.contains("0 (unreported)"));
    assert!(a.contains(&pct(r.magec.overall.median)));

    let cc = render_forest_plot_svg(&ForestPlotSpec::from_fit(r.complete_case.as_ref().unwrap(), 2, SortOrder::Dataset)).unwrap();
    assert_eq!(cc.matches("class=\"point\"").count(), 9);
    assert!(!cc.contains("id=\"footnote\""));
}

#[test]
fn forest_plot_options() {
    let fit = &result().magec;
    let sorted = ForestPlotSpec::from_fit(fit, 3, SortOrder::Estimate);
    assert!(sorted.rows.windows(2).all(|w| w[0].estimate <= w[1].estimate));
    assert_eq!(sorted.decimals, 3);
    let svg = render_forest_plot_svg(&sorted).unwrap();
    assert!(svg.contains(&format!("{:.3}", 100.0 * fit.overall.median)));
    assert!(sorted.axis_max >= sorted.rows.iter().map(|r| r.upper).fold(0.0, f64::max));
    assert_eq!(sorted.axis_min, 0.0);

    let mut empty = ForestPlotSpec::from_fit(fit, 2, SortOrder::Dataset);
    empty.rows.clear();
    assert_eq!(render_forest_plot_svg(&empty), Err(RenderError::EmptyPlot));
}

#[test]
fn report_is_self_contained() {
    let r = result();
    let ds = Dataset::sample();
    let art = render_artifacts(r, &ds);
    let html = &art.report_html;
    for id in ["summary", "data", "magec", "cc", "comparison", "methods", "references"] {
        assert!(html.contains(&format!("<section id=\"{id}\">")), "missing {id}");
    }
    assert!(html.contains(&art.forest_magec));
    assert!(html.contains(art.forest_cc.as_ref().unwrap()));
    let without_xmlns = html.replace("http://www.w3.org/2000/svg", "");
    assert!(!without_xmlns.contains("http://") && !without_xmlns.contains("https://"));
    assert!(!html.contains("<script") && !html.contains("<link") && !html.contains("<img"));
    assert!(html.contains("3 chains of 8,000 iterations"));
    assert!(html.contains("first 3,000 iterations"));
    assert!(html.contains("every 5th draw"));
    assert!(html.contains("half-Cauchy prior with scale 2.5"));
    assert!(html.contains("variance 10,000"));
    assert!(html.contains("Gelman A, Rubin DB (1992)"));
    assert_eq!(art.results_json, r.to_json());
}

#[test]
fn report_without_complete_case() {
    let r = run_analysis(&request(false), &NoProgress).unwrap();
    let ds = Dataset::sample();
    let art = render_artifacts(&r, &ds);
    assert!(art.forest_cc.is_none());
    assert!(!art.report_html.contains("<section id=\"cc\">"));
    assert!(!art.report_html.contains("<section id=\"comparison\">"));
    assert!(!art.report_html.contains("complete-case analysis"));
    assert_eq!(art.summary_csv.lines().count(), 3);

    // Plots not handed in are drawn with the default layout.
    assert_eq!(render_report_html(&r, &[], &ds), art.report_html);
}
