//! Training step accounting.
//!
//! `steps_per_epoch = ceil(examples / batch_size)` and
//! `total_steps = steps_per_epoch * epochs`. [`reconcile`] lines a computed
//! budget up against a published accounting row and reports the gap
//! instead of adjusting the arithmetic to match it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reference::PublishedRun;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub num_examples: u64,
    pub batch_size: u64,
    pub epochs: u64,
    pub steps_per_epoch: u64,
    pub total_steps: u64,
    /// Size of the dataset file, when one was written.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub approx_bytes: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

pub fn budget(num_examples: u64, batch_size: u64, epochs: u64) -> Result<BudgetReport> {
    if num_examples == 0 || batch_size == 0 || epochs == 0 {
        return Err(Error::Config(format!(
            "budget inputs must be positive (examples {num_examples}, batch {batch_size}, epochs {epochs})"
        )));
    }
    let steps_per_epoch = num_examples.div_ceil(batch_size);
    Ok(BudgetReport {
        num_examples,
        batch_size,
        epochs,
        steps_per_epoch,
        total_steps: steps_per_epoch * epochs,
        approx_bytes: None,
        notes: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub label: String,
    pub published_total_steps: u64,
    pub computed_total_steps: u64,
    /// `(computed - published) / published`.
    pub relative_gap: f64,
    /// Examples per epoch the published step count implies at this batch size.
    pub implied_examples: u64,
}

impl Reconciliation {
    pub fn within(&self, tolerance: f64) -> bool {
        self.relative_gap.abs() <= tolerance
    }

    pub fn describe(&self) -> String {
        format!(
            "{}: computed {} total steps vs published {} ({:+.1}%); published count implies ~{} examples per epoch",
            self.label,
            self.computed_total_steps,
            self.published_total_steps,
            self.relative_gap * 100.0,
            self.implied_examples
        )
    }
}

/// Compares `report` with a published row.
///
/// Returns `None` when the row carries no step count or its epoch count
/// differs from the report's.
pub fn reconcile(report: &BudgetReport, run: &PublishedRun) -> Option<Reconciliation> {
    let published = run.total_steps?;
    if run.total_epochs() != Some(report.epochs) {
        return None;
    }
    let per_epoch = published as f64 / report.epochs as f64;
    Some(Reconciliation {
        label: run.label(),
        published_total_steps: published,
        computed_total_steps: report.total_steps,
        relative_gap: (report.total_steps as f64 - published as f64) / published as f64,
        implied_examples: (per_epoch * report.batch_size as f64).round() as u64,
    })
}

/// Tolerance below which a reconciliation is considered a match.
pub const RECONCILE_TOLERANCE: f64 = 0.05;

/// Appends a note for every published row that disagrees with `report` by
/// more than [`RECONCILE_TOLERANCE`].
pub fn annotate(report: &mut BudgetReport, runs: &[&PublishedRun]) {
    for run in runs {
        if let Some(rec) = reconcile(report, run) {
            let verdict = if rec.within(RECONCILE_TOLERANCE) {
                "consistent"
            } else {
                "DISCREPANCY"
            };
            report.notes.push(format!("{verdict}: {}", rec.describe()));
        }
    }
}
