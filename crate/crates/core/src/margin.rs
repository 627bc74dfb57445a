//! Margin reports: observed quantity divided by the bound it is checked against.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// How a report's ratio is interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Ratio against an explicit constant; the check passes iff every ratio is at most 1.
    Explicit,
    /// Ratio against `delta` alone; the worst ratio is an empirical constant.
    Empirical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub trial: usize,
    pub ratio: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub check: String,
    pub kind: BoundKind,
    pub trials: usize,
    pub worst_ratio: f64,
    pub violations: Vec<Violation>,
    /// Named sub-measurements (worst values of individual components).
    pub details: BTreeMap<String, f64>,
}

const MAX_LISTED_VIOLATIONS: usize = 32;

impl MarginReport {
    pub fn new(check: impl Into<String>, kind: BoundKind) -> Self {
        Self {
            check: check.into(),
            kind,
            trials: 0,
            worst_ratio: 0.0,
            violations: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    /// Records one trial. Non-finite ratios always count as violations.
    pub fn record(&mut self, trial: usize, ratio: f64, note: impl FnOnce() -> String) {
        self.trials += 1;
        if !ratio.is_finite() || ratio > self.worst_ratio || self.worst_ratio.is_nan() {
            self.worst_ratio = if ratio.is_finite() { ratio } else { f64::INFINITY };
        }
        let violated = !ratio.is_finite() || (self.kind == BoundKind::Explicit && ratio > 1.0);
        if violated && self.violations.len() < MAX_LISTED_VIOLATIONS {
            self.violations.push(Violation {
                trial,
                ratio,
                note: note(),
            });
        }
    }

    /// Keeps the maximum of a named component.
    pub fn detail_max(&mut self, key: &str, value: f64) {
        let e = self.details.entry(key.to_string()).or_insert(f64::NEG_INFINITY);
        if value > *e || value.is_nan() {
            *e = value;
        }
    }

    pub fn set_detail(&mut self, key: &str, value: f64) {
        self.details.insert(key.to_string(), value);
    }

    pub fn passed(&self) -> bool {
        match self.kind {
            BoundKind::Explicit => self.worst_ratio <= 1.0 && self.violations.is_empty(),
            BoundKind::Empirical => self.worst_ratio.is_finite() && self.violations.is_empty(),
        }
    }

    /// Merges trial records of another report on the same check.
    pub fn absorb(&mut self, other: &MarginReport) {
        self.trials += other.trials;
        if other.worst_ratio > self.worst_ratio || !other.worst_ratio.is_finite() {
            self.worst_ratio = other.worst_ratio;
        }
        for v in &other.violations {
            if self.violations.len() < MAX_LISTED_VIOLATIONS {
                self.violations.push(v.clone());
            }
        }
        for (k, v) in &other.details {
            self.detail_max(k, *v);
        }
    }
}
