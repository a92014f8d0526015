//! Study-level adverse-event data: CSV ingestion, validation and
//! classification into observed, exact-zero and left-censored studies.
//!
//! The accepted CSV has a header row with the columns `study`, `N`, `Y`
//! and `cutoff` (matched case-insensitively, in any order). `Y` is left
//! blank or written as `NA` when the count was not reported; `cutoff` is
//! then the largest count that the publication would have withheld.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bundled sample: grade 3-5 pneumonitis under atezolizumab, 15 studies.
pub const SAMPLE_CSV: &str = include_str!("../data/atezolizumab_pneumonitis.csv");

/// Name attached to [`SAMPLE_CSV`] when loaded through [`Dataset::sample`].
pub const SAMPLE_NAME: &str = "atezolizumab_pneumonitis";

const MANDATORY_COLUMNS: [&str; 4] = ["study", "N", "Y", "cutoff"];

/// Tokens accepted as a missing `Y`, compared case-insensitively.
const MISSING_TOKENS: [&str; 3] = ["", "na", "n/a"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("input is empty")]
    Empty,
    #[error("input is not valid UTF-8")]
    NotUtf8,
    #[error("missing mandatory column \"{column}\"")]
    MissingColumn { column: &'static str },
    #[error("row {row}, column \"{column}\": expected a non-negative integer, found {value:?}")]
    NotAnInteger {
        row: u64,
        column: &'static str,
        value: String,
    },
    #[error("row {row}, column \"study\": study identifier is empty")]
    EmptyStudyId { row: u64 },
    #[error("row {row}, column \"study\": duplicate study identifier {study_id:?}")]
    DuplicateStudy { row: u64, study_id: String },
    #[error("row {row}: malformed CSV: {message}")]
    Malformed { row: u64, message: String },
    #[error("no studies: the file has a header but no data rows")]
    NoStudies,
    #[error("threshold {0}% is outside the open interval (0, 100)")]
    ThresholdOutOfRange(f64),
}

/// One study's row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub n_treated: u32,
    pub observed_count: Option<u32>,
    pub cutoff: Option<u32>,
}

impl StudyRecord {
    pub fn observed(study_id: impl Into<String>, n_treated: u32, count: u32) -> Self {
        StudyRecord {
            study_id: study_id.into(),
            n_treated,
            observed_count: Some(count),
            cutoff: None,
        }
    }

    pub fn censored(study_id: impl Into<String>, n_treated: u32, cutoff: u32) -> Self {
        StudyRecord {
            study_id: study_id.into(),
            n_treated,
            observed_count: None,
            cutoff: Some(cutoff),
        }
    }

    pub fn with_cutoff(mut self, cutoff: u32) -> Self {
        self.cutoff = Some(cutoff);
        self
    }

    pub fn class(&self) -> StudyClass {
        classify_study(self)
    }
}

/// Likelihood role of a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StudyClass {
    /// Count reported.
    Observed(u32),
    /// Count unreported with cutoff 0, so the count is known to be 0.
    ExactZero,
    /// Count unreported and known only to lie in `0..=c`, `c >= 1`.
    Censored(u32),
}

impl StudyClass {
    /// Count entering the likelihood as a point mass, if any.
    pub fn known_count(self) -> Option<u32> {
        match self {
            StudyClass::Observed(y) => Some(y),
            StudyClass::ExactZero => Some(0),
            StudyClass::Censored(_) => None,
        }
    }

    pub fn is_censored(self) -> bool {
        matches!(self, StudyClass::Censored(_))
    }

    pub fn label(self) -> &'static str {
        match self {
            StudyClass::Observed(_) => "observed",
            StudyClass::ExactZero => "exact_zero",
            StudyClass::Censored(_) => "censored",
        }
    }
}

/// Classifies a study.
///
/// Records are expected to have passed [`validate_dataset`]. An unreported
/// count without a cutoff is read as censored at `n_treated`, which carries
/// no information; validation reports such rows as errors.
pub fn classify_study(record: &StudyRecord) -> StudyClass {
    match (record.observed_count, record.cutoff) {
        (Some(y), _) => StudyClass::Observed(y),
        (None, Some(0)) => StudyClass::ExactZero,
        (None, Some(c)) => StudyClass::Censored(c),
        (None, None) if record.n_treated == 0 => StudyClass::ExactZero,
        (None, None) => StudyClass::Censored(record.n_treated),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub observed: usize,
    pub exact_zero: usize,
    pub censored: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.observed + self.exact_zero + self.censored
    }

    /// Studies whose count is not reported (exact-zero or censored).
    pub fn unreported(&self) -> usize {
        self.exact_zero + self.censored
    }
}

/// An ordered, non-empty collection of studies with unique identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    name: String,
    studies: Vec<StudyRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, studies: Vec<StudyRecord>) -> Result<Self, DatasetError> {
        if studies.is_empty() {
            return Err(DatasetError::NoStudies);
        }
        let mut seen = HashSet::new();
        for (i, s) in studies.iter().enumerate() {
            let row = i as u64 + 2;
            if s.study_id.is_empty() {
                return Err(DatasetError::EmptyStudyId { row });
            }
            if !seen.insert(s.study_id.as_str()) {
                return Err(DatasetError::DuplicateStudy {
                    row,
                    study_id: s.study_id.clone(),
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            studies,
            warnings: Vec::new(),
        })
    }

    /// The bundled 15-study sample.
    pub fn sample() -> Self {
        parse_csv(SAMPLE_CSV.as_bytes(), SAMPLE_NAME).expect("bundled sample parses")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn studies(&self) -> &[StudyRecord] {
        &self.studies
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    /// Non-fatal notes recorded while parsing (e.g. ignored columns).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn classes(&self) -> impl Iterator<Item = StudyClass> + '_ {
        self.studies.iter().map(classify_study)
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for class in self.classes() {
            match class {
                StudyClass::Observed(_) => counts.observed += 1,
                StudyClass::ExactZero => counts.exact_zero += 1,
                StudyClass::Censored(_) => counts.censored += 1,
            }
        }
        counts
    }

    /// Keeps the studies matching `keep`, preserving order. `None` if nothing
    /// remains.
    pub fn filtered(
        &self,
        name: impl Into<String>,
        mut keep: impl FnMut(&StudyRecord) -> bool,
    ) -> Option<Dataset> {
        let studies: Vec<_> = self.studies.iter().filter(|s| keep(s)).cloned().collect();
        if studies.is_empty() {
            return None;
        }
        Some(Dataset {
            name: name.into(),
            studies,
            warnings: Vec::new(),
        })
    }

    /// Studies with a reported count only.
    pub fn reported_only(&self) -> Option<Dataset> {
        self.filtered(format!("{} (reported counts)", self.name), |s| {
            s.observed_count.is_some()
        })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["study", "N", "cutoff", "Y"])
            .expect("in-memory write");
        for s in &self.studies {
            w.write_record([
                s.study_id.clone(),
                s.n_treated.to_string(),
                s.cutoff.map(|c| c.to_string()).unwrap_or_default(),
                s.observed_count.map(|y| y.to_string()).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

/// Parses CSV content into a [`Dataset`].
///
/// Structural problems are errors. Record-level invariants (such as `Y > N`)
/// are left to [`validate_dataset`] so that all of them can be reported at
/// once.
pub fn parse_csv(bytes: &[u8], name: &str) -> Result<Dataset, DatasetError> {
    let text = std::str::from_utf8(bytes).map_err(|_| DatasetError::NotUtf8)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if text.trim().is_empty() {
        return Err(DatasetError::Empty);
    }

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Malformed {
            row: 1,
            message: e.to_string(),
        })?
        .clone();

    let mut index = [0usize; 4];
    for (slot, column) in index.iter_mut().zip(MANDATORY_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(column))
            .ok_or(DatasetError::MissingColumn { column })?;
    }
    let [study_col, n_col, y_col, cutoff_col] = index;

    let mut warnings = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if !index.contains(&i) {
            warnings.push(format!("ignored extra column \"{h}\""));
        }
    }

    let mut studies = Vec::new();
    let mut seen = HashSet::new();
    for result in reader.records() {
        let record = result.map_err(|e| DatasetError::Malformed {
            row: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");

        let study_id = field(study_col).to_string();
        if study_id.is_empty() {
            return Err(DatasetError::EmptyStudyId { row });
        }
        if !seen.insert(study_id.clone()) {
            return Err(DatasetError::DuplicateStudy { row, study_id });
        }
        let n_treated = parse_count(field(n_col), row, "N")?;
        let observed_count = parse_optional(field(y_col), row, "Y")?;
        let cutoff = match field(cutoff_col) {
            "" => None,
            raw => Some(parse_count(raw, row, "cutoff")?),
        };
        studies.push(StudyRecord {
            study_id,
            n_treated,
            observed_count,
            cutoff,
        });
    }

    if studies.is_empty() {
        return Err(DatasetError::NoStudies);
    }
    Ok(Dataset {
        name: name.to_string(),
        studies,
        warnings,
    })
}

fn parse_count(raw: &str, row: u64, column: &'static str) -> Result<u32, DatasetError> {
    raw.parse::<u32>().map_err(|_| DatasetError::NotAnInteger {
        row,
        column,
        value: raw.to_string(),
    })
}

fn parse_optional(raw: &str, row: u64, column: &'static str) -> Result<Option<u32>, DatasetError> {
    if MISSING_TOKENS.iter().any(|t| raw.eq_ignore_ascii_case(t)) {
        Ok(None)
    } else {
        parse_count(raw, row, column).map(Some)
    }
}

/// Largest count that stays unreported when a publication discloses counts
/// above `threshold` percent of `n_treated`.
pub fn cutoff_from_percentage(n_treated: u32, threshold: f64) -> Result<u32, DatasetError> {
    if !(threshold > 0.0 && threshold < 100.0) {
        return Err(DatasetError::ThresholdOutOfRange(threshold));
    }
    // The small slack absorbs representation error such as 0.29 * 100.
    let bound = f64::from(n_treated) * threshold / 100.0;
    Ok((bound + 1e-9).floor() as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// File row, counting the header as row 1.
    pub row: usize,
    pub study_id: String,
    pub field: String,
    pub message: String,
    pub severity: Severity,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "row {}: {} [{}] {}: {}",
            self.row, tag, self.study_id, self.field, self.message
        )
    }
}

/// Checks every record invariant and returns the problems found.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, s) in dataset.studies().iter().enumerate() {
        let mut push = |field: &str, severity: Severity, message: String| {
            out.push(Violation {
                row: i + 2,
                study_id: s.study_id.clone(),
                field: field.to_string(),
                message,
                severity,
            })
        };
        if s.n_treated == 0 {
            push("N", Severity::Error, "n_treated must be at least 1".into());
        }
        match (s.observed_count, s.cutoff) {
            (Some(y), _) if y > s.n_treated => push(
                "Y",
                Severity::Error,
                format!("observed_count exceeds n_treated ({y} > {})", s.n_treated),
            ),
            (Some(_), _) => {}
            (None, None) => push(
                "cutoff",
                Severity::Error,
                "censored study lacks cutoff".into(),
            ),
            (None, Some(c)) if c > s.n_treated => push(
                "cutoff",
                Severity::Error,
                format!("cutoff exceeds n_treated ({c} > {})", s.n_treated),
            ),
            (None, Some(c)) if c == s.n_treated && c > 0 => push(
                "cutoff",
                Severity::Warning,
                "cutoff equals n_treated; the study carries no information".into(),
            ),
            (None, Some(_)) => {}
        }
    }
    out
}

/// True when no violation is an error.
pub fn is_valid(violations: &[Violation]) -> bool {
    violations.iter().all(|v| v.severity == Severity::Warning)
}
