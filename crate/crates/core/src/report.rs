//! Human- and machine-readable renderings of an evaluation report.

use std::fmt::Write;

use crate::eval::{EvalReport, EvalRow, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    /// One line per violated threshold, including thresholds naming rows the
    /// report does not contain.
    pub violations: Vec<String>,
}

fn label(controller: &str) -> &str {
    match controller {
        "expert" => "state-based",
        other => other,
    }
}

fn row_status(row: &EvalRow, thresholds: &[Threshold]) -> &'static str {
    let mine: Vec<&Threshold> = thresholds
        .iter()
        .filter(|t| t.track == row.track && t.controller == row.controller)
        .collect();
    if mine.is_empty() {
        return "-";
    }
    if mine.iter().all(|t| t.check_row(row)) {
        "pass"
    } else {
        "FAIL"
    }
}

pub fn render(
    report: &EvalReport,
    thresholds: &[Threshold],
    format: ReportFormat,
) -> RenderedReport {
    let mut violations = Vec::new();
    for t in thresholds {
        match t.check(report) {
            None => violations.push(format!("no row for {} / {}", t.track, t.controller)),
            Some(false) => violations.push(format!(
                "{} / {} violates min_sr {:?} max_mge {:?}",
                t.track, t.controller, t.min_sr, t.max_mge
            )),
            Some(true) => {}
        }
    }

    let mut text = String::new();
    match format {
        ReportFormat::Table => {
            let _ = writeln!(text, "{} laps, {} seed(s)", report.laps, report.seeds.len());
            let _ = writeln!(
                text,
                "{:<10} {:<12} {:>8} {:>9} {:>9}",
                "track", "controller", "SR (%)", "MGE (cm)", "threshold"
            );
            for r in &report.rows {
                let mge = r
                    .mge
                    .map_or("-".to_string(), |m| format!("{:.2}", 100.0 * m));
                let _ = writeln!(
                    text,
                    "{:<10} {:<12} {:>8.1} {:>9} {:>9}",
                    r.track,
                    label(&r.controller),
                    100.0 * r.sr,
                    mge,
                    row_status(r, thresholds)
                );
            }
        }
        ReportFormat::Csv => {
            text.push_str(
                "track,controller,episodes,gates_attempted,gates_passed,sr,mge,threshold\n",
            );
            for r in &report.rows {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{},{},{},{}",
                    r.track,
                    r.controller,
                    r.episodes,
                    r.gates_attempted,
                    r.gates_passed,
                    r.sr,
                    r.mge.map_or(String::new(), |m| m.to_string()),
                    row_status(r, thresholds)
                );
            }
        }
    }
    RenderedReport { text, violations }
}
