use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::{Category, Split};
use crate::error::{Error, Result};
use crate::linking::LinkingMode;
use crate::qa::PromptVariant;

pub const SCHEMA_VERSION: u32 = 1;

/// Where a report came from: build tag, effective configuration and input
/// content hashes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub build: String,
    pub config: BTreeMap<String, String>,
    pub input_hashes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub split: Split,
    pub variant: PromptVariant,
    pub linking_mode: LinkingMode,
    pub k: usize,
    pub backend: String,
    pub n_items: usize,
    pub n_images: usize,
    pub accuracy: f64,
    pub recall_at_1: f64,
    pub gold_in_candidates_at_k: f64,
    pub attribution_precision: f64,
    /// Items eligible for attribution precision.
    pub attribution_support: usize,
    pub per_category: BTreeMap<Category, f64>,
    pub category_counts: BTreeMap<Category, usize>,
    pub resolution_counts: BTreeMap<String, usize>,
    pub failures: usize,
    /// False when more than a tenth of the items failed.
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl EvalReport {
    /// Metric fields only, for comparing runs that differ in configuration.
    pub fn metrics(&self) -> (f64, f64, f64, f64, &BTreeMap<Category, f64>, usize) {
        (
            self.accuracy,
            self.recall_at_1,
            self.gold_in_candidates_at_k,
            self.attribution_precision,
            &self.per_category,
            self.failures,
        )
    }

    /// Count-weighted mean of the per-category accuracies.
    pub fn category_weighted_accuracy(&self) -> f64 {
        let total: usize = self.category_counts.values().sum();
        if total == 0 {
            return 0.0;
        }
        self.per_category
            .iter()
            .map(|(c, acc)| acc * self.category_counts.get(c).copied().unwrap_or(0) as f64)
            .sum::<f64>()
            / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    MarkdownTable,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "markdown_table" | "md" => Ok(ReportFormat::MarkdownTable),
            other => Err(Error::invalid(format!("unknown report format `{other}`"))),
        }
    }
}

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::MarkdownTable => markdown(std::slice::from_ref(report)),
    }
}

/// Several runs in one document: a JSON array or one markdown row per run.
pub fn emit_reports(reports: &[EvalReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
            s.push('\n');
            s
        }
        ReportFormat::MarkdownTable => markdown(reports),
    }
}

/// Parses either a single report or an array of reports.
pub fn parse_reports(text: &str) -> Result<Vec<EvalReport>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let reports: Vec<EvalReport> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    if let Some(r) = reports.iter().find(|r| r.schema_version != SCHEMA_VERSION) {
        return Err(Error::data(
            "report",
            format!("unsupported schema_version {}", r.schema_version),
        ));
    }
    Ok(reports)
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

fn markdown(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    out.push_str("| Split | Variant | Linking | k | Accuracy | Recall@1 | Gold@k | Attribution | Items | Failures |\n");
    out.push_str("|---|---|---|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in reports {
        let failures = if r.valid {
            r.failures.to_string()
        } else {
            format!("{} (invalid)", r.failures)
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.split,
            r.variant,
            r.linking_mode,
            r.k,
            pct(r.accuracy),
            pct(r.recall_at_1),
            pct(r.gold_in_candidates_at_k),
            pct(r.attribution_precision),
            r.n_items,
            failures
        );
    }
    let present: Vec<Category> = Category::ALL
        .into_iter()
        .filter(|c| reports.iter().any(|r| r.per_category.contains_key(c)))
        .collect();
    if present.is_empty() {
        return out;
    }
    out.push('\n');
    out.push_str("| Split | Variant | Linking |");
    for c in &present {
        let _ = write!(out, " {} |", c.abbreviation());
    }
    out.push('\n');
    out.push_str("|---|---|---|");
    for _ in &present {
        out.push_str("---:|");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "| {} | {} | {} |", r.split, r.variant, r.linking_mode);
        for c in &present {
            match r.per_category.get(c) {
                Some(acc) => {
                    let _ = write!(out, " {} |", pct(*acc));
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}
