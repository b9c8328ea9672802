//! Render run reports for people (markdown) or machines (JSON).

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{QvixError, Result};
use crate::model::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
}

impl FromStr for ReportFormat {
    type Err = QvixError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "markdown" | "md" => Ok(Self::Markdown),
            "json" => Ok(Self::Json),
            other => Err(QvixError::Config(format!(
                "unknown report format `{other}` (expected markdown or json)"
            ))),
        }
    }
}

/// Accuracies display with one decimal; trial spread with two.
fn pct(value: f64) -> String {
    format!("{value:.1}")
}

pub fn render_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut text =
                serde_json::to_string_pretty(report).expect("reports always serialize");
            text.push('\n');
            text
        }
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_markdown(report: &RunReport) -> String {
    let mut out = String::new();
    writeln!(out, "# Run {}", report.run_id).unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "- task: {} — condition: {}",
        report.task_id, report.condition
    )
    .unwrap();
    writeln!(
        out,
        "- manifest: {} instance(s); evaluated {} per trial across {} trial(s)",
        report.manifest_size, report.evaluated_per_trial, report.trials
    )
    .unwrap();
    writeln!(out, "- overall accuracy: {}", pct(report.overall_accuracy)).unwrap();
    writeln!(out, "- macro average: {}", pct(report.macro_average)).unwrap();
    writeln!(
        out,
        "- abstentions: {}; instance errors: {}",
        report.abstentions, report.instance_errors
    )
    .unwrap();
    if let Some(recall) = report.shortlist_recall {
        writeln!(out, "- shortlist recall: {}", pct(100.0 * recall)).unwrap();
    }
    if let Some(stats) = &report.trial_stats {
        let per_trial: Vec<String> = stats.trial_accuracies.iter().map(|a| pct(*a)).collect();
        writeln!(
            out,
            "- across trials: {:.1}±{:.2} (per trial: {})",
            stats.mean,
            stats.std_dev,
            per_trial.join(", ")
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "| slice | accuracy | correct/total |").unwrap();
    writeln!(out, "|---|---|---|").unwrap();
    let pooled = report.evaluated_per_trial * report.trials;
    let pooled_correct = report.verdicts.iter().filter(|v| v.correct).count();
    writeln!(
        out,
        "| overall | {} | {}/{} |",
        pct(report.overall_accuracy),
        pooled_correct,
        pooled
    )
    .unwrap();
    for cell in &report.breakdown {
        writeln!(
            out,
            "| {}={} | {} | {}/{} |",
            cell.key,
            cell.value,
            pct(cell.accuracy),
            cell.correct,
            cell.total
        )
        .unwrap();
    }
    out
}

/// Side-by-side summary of an ablation sweep: one row per run, labelled by
/// the value of the swept axis.
pub fn render_ablation_table(axis: &str, rows: &[(String, &RunReport)]) -> String {
    let mut out = String::new();
    writeln!(out, "| {axis} | overall | macro | abstentions | errors |").unwrap();
    writeln!(out, "|---|---|---|---|---|").unwrap();
    for (label, report) in rows {
        let line = match &report.trial_stats {
            Some(stats) => format!("{:.1}±{:.2}", stats.mean, stats.std_dev),
            None => pct(report.overall_accuracy),
        };
        writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            label,
            line,
            pct(report.macro_average),
            report.abstentions,
            report.instance_errors
        )
        .unwrap();
    }
    out
}
