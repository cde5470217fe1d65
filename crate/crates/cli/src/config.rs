//! Scenario configuration: one JSON document with optional sections.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gaitlab_core::{
    build_state_space, GaitParams, LinearizationConfig, PhysicalParams, SettlingSchedule, SimConfig, TerrainProfile,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Which models a command evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelSelector {
    Nonlinear,
    Clred,
    #[default]
    Both,
}

impl ModelSelector {
    pub fn nonlinear(self) -> bool {
        matches!(self, Self::Nonlinear | Self::Both)
    }

    pub fn clred(self) -> bool {
        matches!(self, Self::Clred | Self::Both)
    }
}

/// Expansion point of the gravity linearization: either `kappa` (tracks
/// beta) or a fixed `theta2_star`, never both. Defaults to `kappa = -0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearizationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2_star: Option<f64>,
}

pub const DEFAULT_KAPPA: f64 = -0.5;

impl LinearizationSection {
    pub fn resolve(&self, beta: f64) -> Result<LinearizationConfig, CliError> {
        match (self.kappa, self.theta2_star) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "linearization: give either `kappa` or `theta2_star`, not both".into(),
            )),
            (Some(k), None) if k.is_finite() => Ok(LinearizationConfig::from_kappa(k, beta)),
            (None, Some(t)) if t.is_finite() => Ok(LinearizationConfig::at(t)),
            (None, None) => Ok(LinearizationConfig::from_kappa(DEFAULT_KAPPA, beta)),
            _ => Err(CliError::Config("linearization: value must be finite".into())),
        }
    }
}

/// Integrator settings of the nonlinear simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub arming_threshold: f64,
    pub bisection_tol: f64,
    pub max_step_duration: f64,
    /// Keep every n-th integration sample in the trace; 0 disables it.
    pub trace_stride: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            dt: d.dt,
            arming_threshold: d.arming_threshold,
            bisection_tol: d.bisection_tol,
            max_step_duration: d.max_step_duration,
            trace_stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub model: ModelSelector,
    /// Steps to evaluate; defaults to 30, or unbounded when `duration` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Pre-impact stance velocity of the impact that starts the run [rad/s].
    pub initial_theta1_dot: f64,
    /// Settling-time overrides keyed by step index [s].
    pub t_set_schedule: BTreeMap<usize, f64>,
    /// Stop before starting a step once this much time has elapsed [s].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            model: ModelSelector::Both,
            steps: None,
            initial_theta1_dot: 0.8,
            t_set_schedule: BTreeMap::new(),
            duration: None,
            output_dir: None,
        }
    }
}

pub const DEFAULT_STEPS: usize = 30;

impl RunSection {
    pub fn step_count(&self) -> usize {
        match (self.steps, self.duration) {
            (Some(n), _) => n,
            (None, Some(_)) => usize::MAX,
            (None, None) => DEFAULT_STEPS,
        }
    }

    pub fn schedule(&self) -> SettlingSchedule {
        SettlingSchedule {
            overrides: self.t_set_schedule.clone(),
        }
    }
}

/// Grid of a beta sweep for each kappa, plus the coarser nonlinear reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_step: f64,
    pub kappas: Vec<f64>,
    /// Steps iterated before averaging.
    pub settle_steps: usize,
    pub average_steps: usize,
    pub nonlinear_beta_step: f64,
    /// Total nonlinear steps; the last `nonlinear_average_steps` are averaged.
    pub nonlinear_steps: usize,
    pub nonlinear_average_steps: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            beta_min: 0.0,
            beta_max: 2.5,
            beta_step: 0.01,
            kappas: vec![0.0, -0.1, -0.2, -0.3, -0.4, -0.5, -0.6],
            settle_steps: 1000,
            average_steps: 20,
            nonlinear_beta_step: 0.1,
            nonlinear_steps: 30,
            nonlinear_average_steps: 10,
        }
    }
}

/// Uniform grid from `lo` to `hi` inclusive, indexed to avoid accumulating
/// spacing error.
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(format!("sweep: {msg}")));
        if !(self.beta_min.is_finite() && self.beta_max.is_finite() && self.beta_min >= 0.0) {
            return bad("beta range must be finite and non-negative");
        }
        if self.beta_max < self.beta_min || self.beta_max >= std::f64::consts::PI {
            return bad("beta_max must lie in [beta_min, pi)");
        }
        if !(self.beta_step > 0.0 && self.nonlinear_beta_step > 0.0) {
            return bad("grid spacings must be > 0");
        }
        if self.average_steps == 0 || self.nonlinear_average_steps == 0 {
            return bad("average counts must be > 0");
        }
        if self.nonlinear_average_steps > self.nonlinear_steps {
            return bad("nonlinear_average_steps exceeds nonlinear_steps");
        }
        if self.kappas.iter().any(|k| !k.is_finite()) {
            return bad("kappas must be finite");
        }
        Ok(())
    }

    pub fn betas(&self) -> Vec<f64> {
        grid(self.beta_min, self.beta_max, self.beta_step)
    }

    pub fn nonlinear_betas(&self) -> Vec<f64> {
        grid(self.beta_min, self.beta_max, self.nonlinear_beta_step)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub physical: PhysicalParams,
    pub gait: GaitParams,
    pub linearization: LinearizationSection,
    pub sim: SimSection,
    pub terrain: TerrainProfile,
    pub run: RunSection,
    pub sweep: SweepSpec,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.sim.dt,
            arming_threshold: self.sim.arming_threshold,
            bisection_tol: self.sim.bisection_tol,
            max_step_duration: self.sim.max_step_duration,
            terrain: self.terrain.clone(),
            settling: self.run.schedule(),
            trace_stride: self.sim.trace_stride,
        }
    }

    pub fn linearization(&self) -> Result<LinearizationConfig, CliError> {
        self.linearization.resolve(self.gait.beta)
    }

    /// Checks every section against the model invariants; the linearized
    /// system is built once so an invalid expansion point fails here.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: gaitlab_core::GaitError| CliError::Config(e.to_string());
        self.physical.validate().map_err(cfg)?;
        self.gait.validate().map_err(cfg)?;
        self.sim_config().validate().map_err(cfg)?;
        self.terrain.validate(self.physical.l1 + self.physical.l2).map_err(cfg)?;
        if !(self.run.initial_theta1_dot.is_finite()) {
            return Err(CliError::Config("run.initial_theta1_dot must be finite".into()));
        }
        if let Some(d) = self.run.duration {
            if !(d.is_finite() && d >= 0.0) {
                return Err(CliError::Config("run.duration must be >= 0".into()));
            }
        }
        build_state_space(&self.physical, &self.gait, &self.linearization()?).map_err(cfg)?;
        self.sweep.validate()
    }

    /// SHA-256 of the canonical JSON form, identifying the scenario in reports.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_reference_scenario() {
        let c = ScenarioConfig::from_json("{}").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.physical, PhysicalParams::reference());
        assert_eq!(c.gait, GaitParams::reference());
        c.validate().unwrap();
    }

    #[test]
    fn partial_sections_and_keyed_maps() {
        let c = ScenarioConfig::from_json(
            r#"{"gait": {"beta": 0.7}, "terrain": {"offsets": {"10": -0.02}},
                "run": {"model": "clred", "t_set_schedule": {"10": 0.5}}}"#,
        )
        .unwrap();
        assert_eq!(c.gait.beta, 0.7);
        assert_eq!(c.gait.t_set, 0.7);
        assert_eq!(c.terrain.offset(10), -0.02);
        assert_eq!(c.run.schedule().override_for(10), Some(0.5));
        assert_eq!(c.run.model, ModelSelector::Clred);
    }

    #[test]
    fn unknown_fields_and_conflicts_are_rejected() {
        assert!(ScenarioConfig::from_json(r#"{"gait": {"betta": 0.7}}"#).is_err());
        let both = ScenarioConfig::from_json(r#"{"linearization": {"kappa": -0.5, "theta2_star": 0.1}}"#).unwrap();
        assert!(matches!(both.validate(), Err(CliError::Config(_))));
        let bad = ScenarioConfig::from_json(r#"{"sweep": {"beta_step": 0.0}}"#).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn step_count_defaults() {
        let mut r = RunSection::default();
        assert_eq!(r.step_count(), DEFAULT_STEPS);
        r.duration = Some(5.0);
        assert_eq!(r.step_count(), usize::MAX);
        r.steps = Some(3);
        assert_eq!(r.step_count(), 3);
    }

    #[test]
    fn grid_includes_end_point() {
        let g = grid(0.0, 2.5, 0.1);
        assert_eq!(g.len(), 26);
        assert!((g[25] - 2.5).abs() < 1e-12);
        assert_eq!(grid(0.5, 0.5, 0.1), vec![0.5]);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.run.initial_theta1_dot = 0.7;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
