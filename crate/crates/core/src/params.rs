//! Physical and control parameters.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Standard gravity used when none is configured [m/s^2].
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Masses, lengths and inertias of the balanced kneed biped.
///
/// Each lower-leg frame has its center of mass at the knee and each thigh
/// frame carries its center of mass above the hip, so that the center of mass
/// of a whole leg coincides with the hip joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// Mass of one lower-leg frame [kg].
    pub m1: f64,
    /// Mass of one thigh frame [kg].
    pub m2: f64,
    /// Foot-to-knee length [m].
    pub l1: f64,
    /// Knee-to-hip length [m].
    pub l2: f64,
    /// Half-mass offset on the lower-leg frame [m].
    pub r1: f64,
    /// Half-mass offset on the thigh frame [m].
    pub r2: f64,
    /// Lower-leg inertia about its center of mass [kg m^2].
    pub i1: f64,
    /// Thigh inertia about its center of mass [kg m^2].
    pub i2: f64,
    /// Gravitational acceleration [m/s^2].
    #[serde(default = "default_gravity")]
    pub g: f64,
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

impl PhysicalParams {
    /// Builds parameters whose inertias follow from the half-mass offsets,
    /// `I1 = m1 r1^2` and `I2 = m2 r2^2`.
    pub fn from_offsets(m1: f64, m2: f64, l1: f64, l2: f64, r1: f64, r2: f64) -> Result<Self> {
        let p = Self {
            m1,
            m2,
            l1,
            l2,
            r1,
            r2,
            i1: m1 * r1 * r1,
            i2: m2 * r2 * r2,
            g: STANDARD_GRAVITY,
        };
        p.validate()?;
        Ok(p)
    }

    /// The reference robot: unit masses, half-meter links, quarter-meter offsets.
    pub fn reference() -> Self {
        Self::from_offsets(1.0, 1.0, 0.5, 0.5, 0.25, 0.25).expect("reference parameters are valid")
    }

    pub fn with_gravity(mut self, g: f64) -> Result<Self> {
        self.g = g;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("r1", self.r1),
            ("r2", self.r2),
            ("i1", self.i1),
            ("i2", self.i2),
            ("g", self.g),
        ];
        for (name, value) in positive {
            if !value.is_finite() || value <= 0.0 {
                return Err(invalid(name, format!("must be finite and > 0, got {value}")));
            }
        }
        Ok(())
    }

    /// Total mass `m = 2 (m1 + m2)`.
    #[inline]
    pub fn total_mass(&self) -> f64 {
        2.0 * (self.m1 + self.m2)
    }

    /// Knee-to-thigh-COM distance that puts the leg's center of mass at the hip.
    #[inline]
    pub fn thigh_com_length(&self) -> f64 {
        self.l2 * (1.0 + self.m1 / self.m2)
    }
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// Output-tracking targets of one gait.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitParams {
    /// Relative hip angle at impact [rad].
    pub alpha: f64,
    /// Knee lock angle [rad].
    pub beta: f64,
    /// Additional swing-knee flexion at mid-swing [rad].
    pub gamma: f64,
    /// Target settling time [s].
    pub t_set: f64,
    /// Settling time used instead of `t_set` for a single flagged step [s].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_override: Option<f64>,
}

impl GaitParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, t_set: f64) -> Result<Self> {
        let g = Self {
            alpha,
            beta,
            gamma,
            t_set,
            t_override: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// `alpha = pi/6`, `beta = 0.1`, `gamma = 0.3`, `T_set = 0.7 s`.
    pub fn reference() -> Self {
        Self::new(std::f64::consts::FRAC_PI_6, 0.1, 0.3, 0.7).expect("reference gait is valid")
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        self.beta = beta;
        self.validate()?;
        Ok(self)
    }

    /// Copy of these parameters with the settling time replaced for one step.
    pub fn with_override(mut self, t: Option<f64>) -> Result<Self> {
        self.t_override = t;
        self.validate()?;
        Ok(self)
    }

    /// Settling time in force: the override when present.
    #[inline]
    pub fn settling_time(&self) -> f64 {
        self.t_override.unwrap_or(self.t_set)
    }

    pub fn validate(&self) -> Result<()> {
        use std::f64::consts::{FRAC_PI_2, PI};
        if !(self.alpha.is_finite() && self.alpha > 0.0 && self.alpha < FRAC_PI_2) {
            return Err(invalid("alpha", format!("must lie in (0, pi/2), got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && (0.0..PI).contains(&self.beta)) {
            return Err(invalid("beta", format!("must lie in [0, pi), got {}", self.beta)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(invalid("gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        if !(self.t_set.is_finite() && self.t_set > 0.0) {
            return Err(invalid("t_set", format!("must be > 0, got {}", self.t_set)));
        }
        if let Some(t) = self.t_override {
            if !(t.is_finite() && t > 0.0) {
                return Err(invalid("t_override", format!("must be > 0, got {t}")));
            }
        }
        Ok(())
    }
}

impl Default for GaitParams {
    fn default() -> Self {
        Self::reference()
    }
}
