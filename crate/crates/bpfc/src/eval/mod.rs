//! Experiment harness: white-box/black-box suites, restart studies,
//! gradient-masking sanity checks, and accuracy/loss-vs-epsilon curves.

pub mod plot;
mod report;
mod studies;
mod suites;

pub use report::{AttackRecord, EvalReport};
pub use studies::{
    curve_sweep, restart_study, sanity_checks, CheckVerdict, CurvePoint, SanityOpts, SanityReport,
};
pub use suites::{attacked_accuracy, blackbox_suite, whitebox_suite, SuiteOpts};
