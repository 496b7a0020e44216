//! Closed-loop controllers: waypoint following for rolling robots, the
//! acoustic frequency search, heading correction for self-propelled robots
//! and the gamepad mapping.
//!
//! Every controller is a plain state-transition function called once per
//! tracked frame.

use std::f64::consts::PI;

use nalgebra::{Rotation2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field_synth::{FieldCommand, FieldMode, MAX_ROTATION_FREQ};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("trajectory has no nodes")]
    EmptyTrajectory,
    #[error("invalid parameter: {0}")]
    Param(String),
}

/// Degrees in [0, 360).
pub fn heading_deg(dx: f64, dy: f64) -> f64 {
    let d = dy.atan2(dx).to_degrees().rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// μm
    pub nodes: Vec<(f64, f64)>,
    /// μm
    pub threshold: f64,
    pub index: usize,
}

impl Trajectory {
    pub fn new(nodes: Vec<(f64, f64)>, threshold: f64) -> Result<Self, ControlError> {
        if nodes.is_empty() {
            return Err(ControlError::EmptyTrajectory);
        }
        if !(threshold > 0.0) {
            return Err(ControlError::Param(format!(
                "threshold must be positive, got {threshold}"
            )));
        }
        Ok(Self {
            nodes,
            threshold,
            index: 0,
        })
    }

    /// Closed loop of `n` nodes on a circle, starting one step after angle
    /// `start_deg` and ending back on it.
    pub fn circle(
        center: (f64, f64),
        radius: f64,
        n: usize,
        start_deg: f64,
        threshold: f64,
    ) -> Result<Self, ControlError> {
        let nodes = (1..=n)
            .map(|k| {
                let a = start_deg.to_radians() + 2.0 * PI * k as f64 / n as f64;
                (center.0 + radius * a.cos(), center.1 + radius * a.sin())
            })
            .collect();
        Self::new(nodes, threshold)
    }

    /// Default arrival threshold: twice the robot radius.
    pub fn default_threshold(robot_radius: f64) -> f64 {
        2.0 * robot_radius
    }

    pub fn is_done(&self) -> bool {
        self.index >= self.nodes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathFollowConfig {
    /// Hz
    pub freq: f64,
    /// deg
    pub gamma: f64,
}

impl Default for PathFollowConfig {
    fn default() -> Self {
        Self {
            freq: 10.0,
            gamma: 90.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathStep {
    Command(FieldCommand),
    /// Node reached; the previous command stays latched this step.
    Advance,
    Done,
}

pub fn path_follow_step(traj: &mut Trajectory, p: (f64, f64), cfg: &PathFollowConfig) -> PathStep {
    if traj.is_done() {
        return PathStep::Done;
    }
    let (x, y) = traj.nodes[traj.index];
    let error = (x - p.0).hypot(y - p.1);
    if error < traj.threshold {
        traj.index += 1;
        return PathStep::Advance;
    }
    PathStep::Command(FieldCommand::rolling(
        heading_deg(x - p.0, y - p.1),
        cfg.gamma,
        cfg.freq,
    ))
}

/// Distance from `p` to the nearest point of the polyline through `nodes`.
pub fn distance_to_polyline(p: (f64, f64), nodes: &[(f64, f64)]) -> f64 {
    match nodes {
        [] => f64::INFINITY,
        [a] => (p.0 - a.0).hypot(p.1 - a.1),
        _ => nodes
            .windows(2)
            .map(|w| distance_to_segment(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

pub fn distance_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Hz
pub const INITIAL_INCREMENT: f64 = 100e3;
/// Hz
pub const BACKOFF_STEP: f64 = 75e3;
/// Lower bound on the increment after a success (Hz).
pub const INCREMENT_FLOOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqSearchState {
    pub f_min: f64,
    pub f_max: f64,
    pub f_current: f64,
    pub increment: f64,
    pub f_optimal: Option<f64>,
    pub n: u64,
    /// μm/s
    pub v_min: f64,
    /// μm/s
    pub v_max: f64,
}

impl FreqSearchState {
    pub fn new(f_min: f64, f_max: f64, v_min: f64, v_max: f64) -> Result<Self, ControlError> {
        if !(f_min >= 0.0 && f_min < f_max) {
            return Err(ControlError::Param(format!(
                "need 0 <= f_min < f_max, got {f_min}, {f_max}"
            )));
        }
        if !(v_min >= 0.0 && v_min < v_max) {
            return Err(ControlError::Param(format!(
                "need 0 <= v_min < v_max, got {v_min}, {v_max}"
            )));
        }
        Ok(Self {
            f_min,
            f_max,
            f_current: f_min,
            increment: INITIAL_INCREMENT,
            f_optimal: None,
            n: 0,
            v_min,
            v_max,
        })
    }
}

/// One pass of the search loop for a measured speed. Returns the frequency
/// to drive. Speeds exactly at `v_min` or `v_max` change nothing but `n`.
pub fn freq_search_step(s: &mut FreqSearchState, v_mag: f64) -> f64 {
    if v_mag < s.v_min {
        if s.f_current < s.f_max {
            if s.n.is_multiple_of(10) {
                s.f_current = (s.f_current + s.increment).min(s.f_max);
            }
        } else {
            s.increment /= 2.0;
            s.f_current = s.f_min;
        }
    } else if s.v_min < v_mag && v_mag < s.v_max {
        s.f_optimal = Some(s.f_current);
        s.increment = (s.increment / 10.0).max(INCREMENT_FLOOR);
    } else if v_mag > s.v_max && s.n.is_multiple_of(20) && s.f_current > s.f_min {
        s.f_current = (s.f_current - BACKOFF_STEP).max(s.f_min);
    }
    s.n += 1;
    s.f_current
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrientationConfig {
    /// Below this tracked speed (μm/s) the motion direction is too noisy to
    /// update the rotation.
    pub dwell_speed: f64,
    /// Arrival radius around the target (μm).
    pub arrive_radius: f64,
    /// Constant z duty added to the in-plane field.
    pub z_bias: f64,
}

impl Default for OrientationConfig {
    fn default() -> Self {
        Self {
            dwell_speed: 1.0,
            arrive_radius: 5.0,
            z_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationState {
    /// Maps applied field direction to observed motion direction.
    pub r: Rotation2<f64>,
    /// μm
    pub target: (f64, f64),
    pub config: OrientationConfig,
    last_field: Option<Vector2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrientationStep {
    /// Unit field direction and the command carrying it.
    Steer {
        field_dir: Vector2<f64>,
        command: FieldCommand,
    },
    Arrived,
}

impl OrientationState {
    pub fn new(target: (f64, f64), config: OrientationConfig) -> Self {
        Self {
            r: Rotation2::identity(),
            target,
            config,
            last_field: None,
        }
    }

    /// Field direction emitted on the previous step.
    pub fn last_field(&self) -> Option<Vector2<f64>> {
        self.last_field
    }
}

/// Re-estimates the field-to-motion rotation from the observed motion and
/// points the field so that the rotated result heads for the target.
/// `motion` is the tracked velocity (μm/s); slower than the dwell speed it
/// leaves the rotation untouched.
pub fn orientation_step(o: &mut OrientationState, p: (f64, f64), motion: (f64, f64)) -> OrientationStep {
    let to_target = Vector2::new(o.target.0 - p.0, o.target.1 - p.1);
    if to_target.norm() <= o.config.arrive_radius {
        return OrientationStep::Arrived;
    }
    let m = Vector2::new(motion.0, motion.1);
    if let Some(applied) = o.last_field {
        if m.norm() >= o.config.dwell_speed {
            o.r = Rotation2::rotation_between(&applied, &m);
        }
    }
    let field_dir = o.r.inverse() * to_target.normalize();
    o.last_field = Some(field_dir);
    let command = FieldCommand::uniform(heading_deg(field_dir.x, field_dir.y), 90.0).with_z_bias(o.config.z_bias);
    OrientationStep::Steer { field_dir, command }
}

/// One gamepad sample. Sticks are (x, y) with +y mapping to α = 90°.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JoystickInput {
    pub right_stick: [f64; 2],
    pub left_stick: [f64; 2],
    pub l_trigger: f64,
    pub r_trigger: f64,
    pub square: bool,
    pub circle: bool,
}

pub const DEAD_ZONE: f64 = 0.1;

/// Stateful mapping from gamepad samples to field commands. Neutral sticks
/// keep the latched mode and heading.
#[derive(Debug, Clone, PartialEq)]
pub struct JoystickMapper {
    /// Rolling frequency for the right stick (Hz).
    pub freq: f64,
    pub dead_zone: f64,
    gamma: f64,
    last: FieldCommand,
}

impl JoystickMapper {
    pub fn new(freq: f64) -> Result<Self, ControlError> {
        if !(0.0..MAX_ROTATION_FREQ).contains(&freq) {
            return Err(ControlError::Param(format!(
                "rolling frequency {freq} outside [0, {MAX_ROTATION_FREQ})"
            )));
        }
        Ok(Self {
            freq,
            dead_zone: DEAD_ZONE,
            gamma: 90.0,
            last: FieldCommand::off(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn last(&self) -> &FieldCommand {
        &self.last
    }

    pub fn map(&mut self, input: &JoystickInput) -> FieldCommand {
        if input.square {
            self.gamma = 180.0;
        } else if input.circle {
            self.gamma = 90.0;
        }
        let stick = |s: [f64; 2]| {
            let (x, y) = (finite_or_zero(s[0]), finite_or_zero(s[1]));
            (x.hypot(y) > self.dead_zone).then(|| heading_deg(x, y))
        };
        let z_bias = unit(input.r_trigger) - unit(input.l_trigger);
        let mut cmd = if let Some(alpha) = stick(input.right_stick) {
            FieldCommand::rolling(alpha, self.gamma, self.freq)
        } else if let Some(alpha) = stick(input.left_stick) {
            FieldCommand::uniform(alpha, 90.0)
        } else {
            let mut c = self.last;
            if c.mode == FieldMode::RotatingRoll {
                c.gamma = self.gamma;
            }
            c
        };
        cmd.z_bias = z_bias;
        self.last = cmd;
        cmd
    }
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

fn unit(v: f64) -> f64 {
    finite_or_zero(v).clamp(0.0, 1.0)
}
