//! Accuracy metrics, run reports, linear probing and CKA.

mod cka;
mod metrics;
mod probe;
mod report;

pub use cka::cka;
pub use metrics::{accuracy, accuracy_of, class_scores, domain_eval, finalize_report, predict, seen_accuracy};
pub use probe::{linear_probe, ProbeConfig};
pub use report::RunReport;
