use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::accuracy::{AccuracyRow, EvalCounts};
use super::summary::{summarize, AccuracyMatrix, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class_id: u32,
    pub correct: u64,
    pub total: u64,
}

/// Everything recorded for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    /// 1-based.
    pub session: usize,
    pub classes_seen: usize,
    pub counts: EvalCounts,
    pub accuracy: AccuracyRow,
    pub per_class: Vec<ClassAccuracy>,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sessions: Vec<SessionReport>,
    pub summary: Summary,
}

impl RunReport {
    pub fn from_sessions(sessions: Vec<SessionReport>) -> Result<Self> {
        if sessions.is_empty() {
            return Err(Error::Setup("no sessions to report".into()));
        }
        let matrix = AccuracyMatrix {
            rows: sessions.iter().map(|s| s.accuracy).collect(),
        };
        let summary = summarize(&matrix, sessions.len())?;
        Ok(Self { sessions, summary })
    }

    pub fn final_accuracy(&self) -> f64 {
        self.sessions.last().map(|s| s.accuracy.all).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    PlotData,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::PlotData];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "report.csv",
            ReportFormat::PlotData => "report.plotdata",
        }
    }
}

/// Percent with one decimal.
pub fn pct(fraction: f64) -> f64 {
    (fraction * 1000.0).round() / 10.0
}

#[derive(Serialize)]
struct JsonClass {
    class_id: u32,
    correct: u64,
    total: u64,
    acc: f64,
}

#[derive(Serialize)]
struct JsonSession<'a> {
    session: usize,
    classes_seen: usize,
    acc_all: f64,
    acc_base: f64,
    acc_novel: Option<f64>,
    correct_all: u64,
    total_all: u64,
    per_class: Vec<JsonClass>,
    loss_trace: &'a [f64],
    config_digest: &'a str,
}

#[derive(Serialize)]
struct JsonSummary {
    avg: f64,
    pd: f64,
    nla: Option<f64>,
    bma: f64,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    sessions: Vec<JsonSession<'a>>,
    summary: JsonSummary,
}

pub fn render_json(report: &RunReport) -> String {
    let view = JsonReport {
        sessions: report
            .sessions
            .iter()
            .map(|s| JsonSession {
                session: s.session,
                classes_seen: s.classes_seen,
                acc_all: pct(s.accuracy.all),
                acc_base: pct(s.accuracy.base),
                acc_novel: s.accuracy.novel.map(pct),
                correct_all: s.counts.all.correct,
                total_all: s.counts.all.total,
                per_class: s
                    .per_class
                    .iter()
                    .map(|c| JsonClass {
                        class_id: c.class_id,
                        correct: c.correct,
                        total: c.total,
                        acc: pct(if c.total == 0 { 0.0 } else { c.correct as f64 / c.total as f64 }),
                    })
                    .collect(),
                loss_trace: &s.loss_trace,
                config_digest: &s.config_digest,
            })
            .collect(),
        summary: JsonSummary {
            avg: pct(report.summary.avg),
            pd: pct(report.summary.pd),
            nla: report.summary.nla.map(pct),
            bma: pct(report.summary.bma),
        },
    };
    let mut out = serde_json::to_string_pretty(&view).expect("report serializes");
    out.push('\n');
    out
}

pub fn render_csv(report: &RunReport) -> String {
    let mut out = String::from("session,classes_seen,acc_all,acc_base,acc_novel,correct_all,total_all,final_loss\n");
    for s in &report.sessions {
        let novel = s.accuracy.novel.map(|n| format!("{:.1}", pct(n))).unwrap_or_default();
        let loss = s.loss_trace.last().map(|l| format!("{l:.6}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{:.1},{:.1},{},{},{},{}",
            s.session,
            s.classes_seen,
            pct(s.accuracy.all),
            pct(s.accuracy.base),
            novel,
            s.counts.all.correct,
            s.counts.all.total,
            loss
        );
    }
    out
}

/// Two columns: session index and all-class accuracy in percent.
pub fn render_plotdata(report: &RunReport) -> String {
    let mut out = String::from("# session acc_all\n");
    for s in &report.sessions {
        let _ = writeln!(out, "{} {:.1}", s.session, pct(s.accuracy.all));
    }
    out
}

pub fn render(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => render_json(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::PlotData => render_plotdata(report),
    }
}

/// Write one format into `dir`, returning the file path.
pub fn emit_report(report: &RunReport, dir: &Path, format: ReportFormat) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format.file_name());
    fs::write(&path, render(report, format)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn emit_all(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    ReportFormat::ALL.iter().map(|&f| emit_report(report, dir, f)).collect()
}
