//! Scenario files.
//!
//! A scenario is a TOML document describing the bench (supply voltage,
//! objective, bodies on the slide) and which controller drives it. See the
//! files under `scenarios/` for complete examples.

use std::path::{Path, PathBuf};

use microtwin_core::control::{JoystickInput, OrientationConfig, PathFollowConfig};
use microtwin_core::dynamics::{AcousticResponse, GradientPull, RobotKind, RollingParams};
use microtwin_core::field_synth::FieldCommand;
use microtwin_core::vision::{Camera, MaskParams};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Directory searched for relative scenario names when set.
pub const CONFIG_DIR_ENV: &str = "MICROTWIN_CONFIG_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// s
    pub duration: f64,
    /// V
    #[serde(default = "default_voltage")]
    pub voltage: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_magnification")]
    pub magnification: f64,
    #[serde(default)]
    pub camera: Camera,
    /// Stop as soon as the controller reports completion.
    #[serde(default = "yes")]
    pub stop_on_completion: bool,
    /// Calibration table; relative paths resolve against the scenario file.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub physics: Physics,
    pub robots: Vec<RobotSpec>,
    pub controller: ControllerSpec,
}

fn default_voltage() -> f64 {
    12.0
}

fn default_magnification() -> f64 {
    10.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    #[serde(default = "RollingParams::sphere_12v")]
    pub rolling: RollingParams,
    #[serde(default)]
    pub acoustic: AcousticResponse,
    /// deg
    #[serde(default)]
    pub cup_heading_offset: f64,
    /// μm²/s
    #[serde(default)]
    pub brownian_diffusion: f64,
    /// rad/√s
    #[serde(default)]
    pub heading_noise: f64,
    #[serde(default)]
    pub gradient_pull: Option<GradientPull>,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            rolling: RollingParams::sphere_12v(),
            acoustic: AcousticResponse::default(),
            cup_heading_offset: 0.0,
            brownian_diffusion: 0.0,
            heading_noise: 0.0,
            gradient_pull: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub kind: RobotKind,
    /// μm
    pub x: f64,
    /// μm
    pub y: f64,
    /// μm
    pub radius: f64,
    /// Seed a vision track on this body.
    #[serde(default = "yes")]
    pub track: bool,
    /// Overrides the default band for the body type.
    #[serde(default)]
    pub mask: Option<MaskParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    PathFollow {
        #[serde(default = "default_roll_freq")]
        freq: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
        /// μm; defaults to twice the robot radius.
        #[serde(default)]
        threshold: Option<f64>,
        path: PathSpec,
    },
    FreqSearchOrientation {
        /// μm
        target: [f64; 2],
        /// s
        field_on_at: f64,
        /// s
        acoustic_on_at: f64,
        f_min: f64,
        f_max: f64,
        v_min: f64,
        v_max: f64,
        #[serde(default)]
        orientation: Option<OrientationConfig>,
    },
    Manual {
        /// Rolling frequency for the right stick (Hz).
        #[serde(default = "default_roll_freq")]
        freq: f64,
        /// Inputs replayed at fixed times, as if sent by a client.
        #[serde(default)]
        script: Vec<ScriptStep>,
    },
    OpenLoop {
        steps: Vec<ScriptStep>,
    },
}

fn default_roll_freq() -> f64 {
    PathFollowConfig::default().freq
}

fn default_gamma() -> f64 {
    PathFollowConfig::default().gamma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSpec {
    /// `nodes` points on the circle, the last one back at `start_deg`.
    Circle {
        center: [f64; 2],
        radius: f64,
        nodes: usize,
        #[serde(default)]
        start_deg: f64,
    },
    Nodes {
        nodes: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    /// s
    pub at: f64,
    #[serde(default)]
    pub joystick: Option<JoystickInput>,
    #[serde(default)]
    pub field: Option<FieldCommand>,
    /// Hz; 0 switches the transducer off.
    #[serde(default)]
    pub acoustic_hz: Option<f64>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(s)
    }

    /// Reads and validates a scenario. Relative calibration paths are made
    /// absolute against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut s = Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(c) = &s.calibration {
            if c.is_relative() {
                s.calibration = Some(path.parent().unwrap_or(Path::new(".")).join(c));
            }
        }
        s.validate()?;
        Ok(s)
    }

    /// Finds a scenario by path, falling back to the config directory for
    /// bare names (with or without `.toml`).
    pub fn resolve(name: &Path) -> PathBuf {
        if name.exists() {
            return name.to_path_buf();
        }
        if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
            let dir = PathBuf::from(dir);
            for candidate in [dir.join(name), dir.join(name).with_extension("toml")] {
                if candidate.exists() {
                    return candidate;
                }
            }
        }
        name.to_path_buf()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.magnification > 0.0) {
            return bad(format!("magnification must be positive, got {}", self.magnification));
        }
        if self.camera.width == 0 || self.camera.height == 0 || !(self.camera.fps > 0.0) {
            return bad(format!("invalid camera {:?}", self.camera));
        }
        if let Some(c) = &self.calibration {
            if !c.exists() {
                return bad(format!("calibration file {} not found", c.display()));
            }
        }
        if self.robots.is_empty() {
            return bad("scenario has no robots".into());
        }
        for r in &self.robots {
            if !(r.radius > 0.0) {
                return bad(format!("robot radius must be positive, got {}", r.radius));
            }
            if let Some(m) = &r.mask {
                m.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            }
        }
        let subject = self.subject();
        let needs = |kind: RobotKind, what: &str| match subject {
            Some(i) if self.robots[i].kind == kind => Ok(()),
            _ => bad(format!("{what} controller needs a tracked {kind:?} robot")),
        };
        match &self.controller {
            ControllerSpec::PathFollow {
                threshold, path, freq, ..
            } => {
                needs(RobotKind::Roller, "path_follow")?;
                if let Some(t) = threshold {
                    if !(*t > 0.0) {
                        return bad(format!("threshold must be positive, got {t}"));
                    }
                }
                if !(0.0..250.0).contains(freq) {
                    return bad(format!("rolling frequency {freq} outside [0, 250)"));
                }
                match path {
                    PathSpec::Circle { nodes: 0, .. } => return bad("circle path needs nodes".into()),
                    PathSpec::Nodes { nodes } if nodes.is_empty() => return bad("path has no nodes".into()),
                    _ => {}
                }
            }
            ControllerSpec::FreqSearchOrientation {
                field_on_at,
                acoustic_on_at,
                ..
            } => {
                needs(RobotKind::AcousticCup, "freq_search_orientation")?;
                if field_on_at > acoustic_on_at {
                    return bad("acoustic search must start after the field is on".into());
                }
            }
            ControllerSpec::Manual { freq, script } => {
                if !(0.0..250.0).contains(freq) {
                    return bad(format!("rolling frequency {freq} outside [0, 250)"));
                }
                check_script(script)?;
            }
            ControllerSpec::OpenLoop { steps } => check_script(steps)?,
        }
        Ok(())
    }

    /// Index of the robot the controller steers: the first tracked
    /// non-passive body.
    pub fn subject(&self) -> Option<usize> {
        self.robots.iter().position(|r| r.track && r.kind != RobotKind::Passive)
    }
}

fn check_script(steps: &[ScriptStep]) -> Result<(), HarnessError> {
    let mut last = f64::NEG_INFINITY;
    for s in steps {
        if !(s.at >= last) {
            return Err(HarnessError::Config("script steps must be in time order".into()));
        }
        last = s.at;
        if let Some(f) = &s.field {
            f.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if s.acoustic_hz.is_some_and(|f| !(f >= 0.0)) {
            return Err(HarnessError::Config("acoustic frequency must be >= 0".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
duration = 1.0

[[robots]]
kind = "roller"
x = 0.0
y = 0.0
radius = 10.0

[controller]
type = "open_loop"
steps = [{ at = 0.0, field = { mode = "rotating_roll", alpha = 0.0, gamma = 90.0, freq = 10.0 } }]
"#;

    #[test]
    fn minimal_scenario_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        s.validate().unwrap();
        assert_eq!(s.voltage, 12.0);
        assert_eq!(s.magnification, 10.0);
        assert_eq!(s.camera, Camera::default());
        assert_eq!(s.physics.rolling, RollingParams::sphere_12v());
        assert_eq!(s.subject(), Some(0));
    }

    #[test]
    fn zero_duration_rejected() {
        let s = Scenario::from_toml(&MINIMAL.replace("duration = 1.0", "duration = 0.0")).unwrap();
        assert!(matches!(s.validate(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn controller_target_mismatch() {
        let text = MINIMAL.replace(
            "type = \"open_loop\"\nsteps = [{ at = 0.0, field = { mode = \"rotating_roll\", alpha = 0.0, gamma = 90.0, freq = 10.0 } }]",
            "type = \"freq_search_orientation\"\ntarget = [10.0, 0.0]\nfield_on_at = 0.0\nacoustic_on_at = 1.0\nf_min = 1e4\nf_max = 1e6\nv_min = 2.0\nv_max = 20.0",
        );
        let s = Scenario::from_toml(&text).unwrap();
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("AcousticCup"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Scenario::from_toml(&format!("bogus = 1\n{MINIMAL}")).is_err());
    }

    #[test]
    fn missing_calibration_file() {
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.calibration = Some("/nonexistent/table.txt".into());
        assert!(s.validate().is_err());
    }
}
