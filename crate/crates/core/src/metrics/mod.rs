//! Accuracy bookkeeping, the session summary metrics and report files.

pub mod accuracy;
pub mod report;
pub mod summary;

pub use accuracy::{accuracy_subset, AccuracyRow, Count, EvalCounts};
pub use report::{emit_all, emit_report, pct, render, ClassAccuracy, ReportFormat, RunReport, SessionReport};
pub use summary::{summarize, AccuracyMatrix, Summary};
