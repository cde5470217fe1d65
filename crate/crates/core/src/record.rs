//! Per-step gait descriptors, failure verdicts and step schedules shared by
//! the nonlinear simulator and the linearized predictor.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Descriptors of step `index`, the motion from impact `index` to impact
/// `index + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    /// Step period [s].
    pub period: f64,
    /// Stance angular velocity just before the impact that ends the step [rad/s].
    pub theta1_minus: f64,
    /// Horizontal travel of the stance foot [m].
    pub step_length: f64,
    /// `step_length / period` [m/s].
    pub speed: f64,
    /// Smallest swing-foot height above the landing surface once the detector
    /// armed, up to the settling time [m].
    pub min_clearance: f64,
    /// Smallest vertical ground reaction; only the full model reports it [N].
    pub min_fz: Option<f64>,
    /// Whether the settling time was reached before the impact.
    pub settled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// The swing foot reached the ground before the controller settled.
    ControlIncomplete,
    /// No landing within the time cap (fell backward or stalled).
    NoImpact,
    /// The vertical ground reaction became non-positive.
    ContactLoss,
    /// The state or a linear solve went non-finite or singular.
    Numeric,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailureKind::ControlIncomplete => "control_incomplete",
            FailureKind::NoImpact => "no_impact",
            FailureKind::ContactLoss => "contact_loss",
            FailureKind::Numeric => "numeric",
        };
        f.write_str(s)
    }
}

/// A step that could not be completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFailure {
    pub step: usize,
    pub kind: FailureKind,
    pub detail: String,
}

impl StepFailure {
    pub fn new(step: usize, kind: FailureKind, detail: impl Into<String>) -> Self {
        Self {
            step,
            kind,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for StepFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} failed ({}): {}", self.step, self.kind, self.detail)
    }
}

/// Landing-surface height changes. `offsets[k]` is the height of the surface
/// met at impact `k`, relative to the stance foot of the step that ends there.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainProfile {
    #[serde(default)]
    pub offsets: BTreeMap<usize, f64>,
}

impl TerrainProfile {
    pub fn flat() -> Self {
        Self::default()
    }

    /// A single height change of `height` at impact `impact`; negative descends.
    pub fn single_step(impact: usize, height: f64) -> Self {
        Self {
            offsets: BTreeMap::from([(impact, height)]),
        }
    }

    pub fn offset(&self, impact: usize) -> f64 {
        self.offsets.get(&impact).copied().unwrap_or(0.0)
    }

    /// Offset of the surface that ends step `step`.
    pub fn landing_offset(&self, step: usize) -> f64 {
        self.offset(step + 1)
    }

    pub fn validate(&self, leg_length: f64) -> Result<()> {
        for (&k, &h) in &self.offsets {
            if !h.is_finite() || h.abs() >= 0.25 * leg_length {
                return Err(invalid(
                    "terrain",
                    format!("offset {h} at impact {k} must be finite and small relative to the leg"),
                ));
            }
        }
        Ok(())
    }
}

/// Per-step settling-time overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettlingSchedule {
    #[serde(default)]
    pub overrides: BTreeMap<usize, f64>,
}

impl SettlingSchedule {
    pub fn uniform() -> Self {
        Self::default()
    }

    pub fn single(step: usize, t_set: f64) -> Self {
        Self {
            overrides: BTreeMap::from([(step, t_set)]),
        }
    }

    pub fn override_for(&self, step: usize) -> Option<f64> {
        self.overrides.get(&step).copied()
    }

    pub fn validate(&self) -> Result<()> {
        for (&k, &t) in &self.overrides {
            if !t.is_finite() || t <= 0.0 {
                return Err(invalid("t_set_schedule", format!("step {k}: settling time {t} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Mean descriptors over `window` (clamped to the records present).
///
/// Returns `None` when the window holds no records. `settled` is the
/// conjunction over the window and `min_fz` the minimum of reported values.
pub fn steady_descriptors(records: &[StepRecord], window: Range<usize>) -> Option<StepRecord> {
    let end = window.end.min(records.len());
    let start = window.start.min(end);
    let slice = &records[start..end];
    if slice.is_empty() {
        return None;
    }
    let n = slice.len() as f64;
    let mean = |f: fn(&StepRecord) -> f64| slice.iter().map(f).sum::<f64>() / n;
    let period = mean(|r| r.period);
    let step_length = mean(|r| r.step_length);
    Some(StepRecord {
        index: slice[slice.len() - 1].index,
        period,
        theta1_minus: mean(|r| r.theta1_minus),
        step_length,
        speed: mean(|r| r.speed),
        min_clearance: mean(|r| r.min_clearance),
        min_fz: slice
            .iter()
            .filter_map(|r| r.min_fz)
            .reduce(f64::min),
        settled: slice.iter().all(|r| r.settled),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, period: f64) -> StepRecord {
        StepRecord {
            index: i,
            period,
            theta1_minus: 1.0,
            step_length: 0.5,
            speed: 0.5 / period,
            min_clearance: 0.01,
            min_fz: Some(30.0 + i as f64),
            settled: true,
        }
    }

    #[test]
    fn averaging_constant_sequence_is_identity() {
        let recs: Vec<_> = (0..30).map(|i| rec(i, 0.8)).collect();
        let s = steady_descriptors(&recs, 20..30).unwrap();
        assert!((s.period - 0.8).abs() < 1e-15);
        assert!((s.theta1_minus - 1.0).abs() < 1e-15);
        assert!((s.step_length - 0.5).abs() < 1e-15);
        assert_eq!(s.min_fz, Some(50.0));
        assert_eq!(s.index, 29);
    }

    #[test]
    fn empty_window() {
        assert!(steady_descriptors(&[], 0..10).is_none());
        let recs: Vec<_> = (0..5).map(|i| rec(i, 0.8)).collect();
        assert!(steady_descriptors(&recs, 20..30).is_none());
        assert_eq!(steady_descriptors(&recs, 3..30).unwrap().index, 4);
    }

    #[test]
    fn terrain_indexing() {
        let t = TerrainProfile::single_step(10, -0.02);
        assert_eq!(t.landing_offset(9), -0.02);
        assert_eq!(t.landing_offset(10), 0.0);
        assert!(t.validate(1.0).is_ok());
        assert!(TerrainProfile::single_step(1, 0.5).validate(1.0).is_err());
        assert!(SettlingSchedule::single(3, 0.0).validate().is_err());
    }
}
