//! Firmware field-synthesis loop.
//!
//! The microcontroller runs a fixed-rate loop that turns the latest
//! [`FieldCommand`] into one signed duty cycle per coil axis. The sign of a
//! duty selects the H-bridge polarity, its magnitude the PWM on-fraction.
//! Rotating fields are three sinusoids evaluated at the loop timestamp, so
//! the number of samples per rotation period is `loop_rate / f`.

use std::f64::consts::PI;
use std::sync::mpsc::{Receiver, TryRecvError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::serial;

/// Default firmware loop rate (Hz).
pub const DEFAULT_LOOP_RATE: f64 = 500.0;

/// PWM carrier frequency after the timer prescaler change (Hz). Reported only;
/// the emulator works at loop-tick resolution.
pub const PWM_CARRIER_HZ: f64 = 31_000.0;

/// Exclusive upper bound on the rotation frequency (Hz).
pub const MAX_ROTATION_FREQ: f64 = 250.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("rejected command: {field} = {value} outside {range}")]
    Rejected {
        field: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("mode {0:?} is not handled by this sampler")]
    WrongMode(FieldMode),
    #[error("frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    RotatingRoll,
    RotatingSwim,
    Uniform,
    Gradient,
    Off,
}

impl FieldMode {
    pub fn is_rotating(self) -> bool {
        matches!(self, FieldMode::RotatingRoll | FieldMode::RotatingSwim)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FieldMode::RotatingRoll => "roll",
            FieldMode::RotatingSwim => "swim",
            FieldMode::Uniform => "uniform",
            FieldMode::Gradient => "gradient",
            FieldMode::Off => "off",
        }
    }
}

/// Coil whose single-sided drive produces a gradient toward it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GradientAxis {
    #[serde(rename = "+X")]
    PosX,
    #[serde(rename = "-X")]
    NegX,
    #[serde(rename = "+Y")]
    PosY,
    #[serde(rename = "-Y")]
    NegY,
    #[serde(rename = "+Z")]
    PosZ,
    #[serde(rename = "-Z")]
    NegZ,
}

impl GradientAxis {
    pub const ALL: [GradientAxis; 6] = [
        GradientAxis::PosX,
        GradientAxis::NegX,
        GradientAxis::PosY,
        GradientAxis::NegY,
        GradientAxis::PosZ,
        GradientAxis::NegZ,
    ];

    /// Axis index (0 = x) and sign.
    pub fn index_and_sign(self) -> (usize, f64) {
        match self {
            GradientAxis::PosX => (0, 1.0),
            GradientAxis::NegX => (0, -1.0),
            GradientAxis::PosY => (1, 1.0),
            GradientAxis::NegY => (1, -1.0),
            GradientAxis::PosZ => (2, 1.0),
            GradientAxis::NegZ => (2, -1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GradientAxis::PosX => "+X",
            GradientAxis::NegX => "-X",
            GradientAxis::PosY => "+Y",
            GradientAxis::NegY => "-Y",
            GradientAxis::PosZ => "+Z",
            GradientAxis::NegZ => "-Z",
        }
    }
}

/// Actuation intent sent from the host to the firmware.
///
/// Angles are in degrees: `alpha` is azimuthal, `gamma` polar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldCommand {
    pub mode: FieldMode,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub freq: f64,
    #[serde(default = "full_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_gradient_axis")]
    pub gradient_axis: GradientAxis,
    #[serde(default)]
    pub z_bias: f64,
}

fn full_amplitude() -> f64 {
    1.0
}

fn default_gradient_axis() -> GradientAxis {
    GradientAxis::PosX
}

impl Default for FieldCommand {
    fn default() -> Self {
        Self::off()
    }
}

impl FieldCommand {
    pub fn off() -> Self {
        Self {
            mode: FieldMode::Off,
            alpha: 0.0,
            gamma: 0.0,
            freq: 0.0,
            amplitude: 0.0,
            gradient_axis: GradientAxis::PosX,
            z_bias: 0.0,
        }
    }

    pub fn rolling(alpha: f64, gamma: f64, freq: f64) -> Self {
        Self {
            mode: FieldMode::RotatingRoll,
            alpha,
            gamma,
            freq,
            amplitude: 1.0,
            ..Self::off()
        }
    }

    pub fn uniform(alpha: f64, gamma: f64) -> Self {
        Self {
            mode: FieldMode::Uniform,
            alpha,
            gamma,
            amplitude: 1.0,
            ..Self::off()
        }
    }

    pub fn gradient(axis: GradientAxis, amplitude: f64) -> Self {
        Self {
            mode: FieldMode::Gradient,
            amplitude,
            gradient_axis: axis,
            ..Self::off()
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn with_z_bias(mut self, z_bias: f64) -> Self {
        self.z_bias = z_bias;
        self
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        check("alpha", self.alpha, (0.0..360.0).contains(&self.alpha), "[0, 360)")?;
        check("gamma", self.gamma, (0.0..=180.0).contains(&self.gamma), "[0, 180]")?;
        check(
            "freq",
            self.freq,
            (0.0..MAX_ROTATION_FREQ).contains(&self.freq),
            "[0, 250)",
        )?;
        check(
            "amplitude",
            self.amplitude,
            (0.0..=1.0).contains(&self.amplitude),
            "[0, 1]",
        )?;
        check("z_bias", self.z_bias, (-1.0..=1.0).contains(&self.z_bias), "[-1, 1]")
    }
}

fn check(field: &'static str, value: f64, ok: bool, range: &'static str) -> Result<(), FieldError> {
    if ok {
        Ok(())
    } else {
        Err(FieldError::Rejected { field, value, range })
    }
}

/// Sign convention for the rotating-field sinusoids.
///
/// `Equation` is the published field equation; `AlgorithmListing` is the
/// variant printed in the path-following listing (flipped signs on the first
/// Bx term and on the second By term). Kept for side-by-side comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformConvention {
    #[default]
    Equation,
    AlgorithmListing,
}

/// Signed per-axis duty cycles produced by one firmware tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PwmFrame {
    pub duty_x: f64,
    pub duty_y: f64,
    pub duty_z: f64,
    /// Loop timestamp (s).
    pub t: f64,
    /// Only one coil of the active pair is driven (gradient mode).
    pub single_coil: bool,
}

impl PwmFrame {
    pub fn duties(&self) -> [f64; 3] {
        [self.duty_x, self.duty_y, self.duty_z]
    }
}

/// Static-mode sample and whether it drives a single coil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticSample {
    pub b: [f64; 3],
    pub single_coil: bool,
}

/// Firmware loop clock. Time is derived from the tick count so it never
/// accumulates rounding drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopClock {
    loop_rate: f64,
    steps: u64,
}

impl Default for LoopClock {
    fn default() -> Self {
        Self::new(DEFAULT_LOOP_RATE)
    }
}

impl LoopClock {
    pub fn new(loop_rate: f64) -> Self {
        assert!(loop_rate > 0.0, "loop rate must be positive");
        Self { loop_rate, steps: 0 }
    }

    pub fn loop_rate(&self) -> f64 {
        self.loop_rate
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn t(&self) -> f64 {
        self.steps as f64 / self.loop_rate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.loop_rate
    }

    pub fn advance(&mut self) -> f64 {
        self.steps += 1;
        self.t()
    }
}

/// Unit rotating-field waveform before amplitude scaling.
fn rotating_unit(cmd: &FieldCommand, t: f64, convention: WaveformConvention) -> [f64; 3] {
    let (sa, ca) = cmd.alpha.to_radians().sin_cos();
    let (sg, cg) = cmd.gamma.to_radians().sin_cos();
    let (s, c) = (2.0 * PI * cmd.freq * t).sin_cos();
    match convention {
        WaveformConvention::Equation => [-cg * ca * c + sa * s, -cg * sa * c - ca * s, sg * c],
        WaveformConvention::AlgorithmListing => [cg * ca * c + sa * s, -cg * sa * c + ca * s, sg * c],
    }
}

fn scale_and_clamp(unit: [f64; 3], amplitude: f64) -> [f64; 3] {
    unit.map(|v| (v * amplitude).clamp(-1.0, 1.0))
}

/// Samples the rotating field at time `t` using the published equations.
pub fn sample_rotating_field(cmd: &FieldCommand, t: f64) -> Result<[f64; 3], FieldError> {
    sample_rotating_field_with(cmd, t, WaveformConvention::Equation)
}

pub fn sample_rotating_field_with(
    cmd: &FieldCommand,
    t: f64,
    convention: WaveformConvention,
) -> Result<[f64; 3], FieldError> {
    if !cmd.mode.is_rotating() {
        return Err(FieldError::WrongMode(cmd.mode));
    }
    cmd.validate()?;
    Ok(scale_and_clamp(rotating_unit(cmd, t, convention), cmd.amplitude))
}

/// Unit vector for the spherical direction (alpha azimuth, gamma polar).
pub fn spherical_direction(alpha_deg: f64, gamma_deg: f64) -> [f64; 3] {
    let (sa, ca) = alpha_deg.to_radians().sin_cos();
    let (sg, cg) = gamma_deg.to_radians().sin_cos();
    [sg * ca, sg * sa, cg]
}

fn static_unchecked(cmd: &FieldCommand) -> StaticSample {
    match cmd.mode {
        FieldMode::Uniform => StaticSample {
            b: scale_and_clamp(spherical_direction(cmd.alpha, cmd.gamma), cmd.amplitude),
            single_coil: false,
        },
        FieldMode::Gradient => {
            let (axis, sign) = cmd.gradient_axis.index_and_sign();
            let mut b = [0.0; 3];
            b[axis] = sign * cmd.amplitude;
            StaticSample { b, single_coil: true }
        }
        _ => StaticSample {
            b: [0.0; 3],
            single_coil: false,
        },
    }
}

pub fn sample_static_field(cmd: &FieldCommand) -> Result<StaticSample, FieldError> {
    if cmd.mode.is_rotating() {
        return Err(FieldError::WrongMode(cmd.mode));
    }
    cmd.validate()?;
    Ok(static_unchecked(cmd))
}

/// One firmware loop iteration: advance the clock, then sample the active
/// mode at the new timestamp. `z_bias` is added to the z duty before
/// saturation.
pub fn firmware_step(clock: &mut LoopClock, cmd: &FieldCommand) -> PwmFrame {
    firmware_step_with(clock, cmd, WaveformConvention::Equation)
}

pub fn firmware_step_with(clock: &mut LoopClock, cmd: &FieldCommand, convention: WaveformConvention) -> PwmFrame {
    let t = clock.advance();
    let (b, single_coil) = if cmd.mode.is_rotating() {
        (scale_and_clamp(rotating_unit(cmd, t, convention), cmd.amplitude), false)
    } else {
        let s = static_unchecked(cmd);
        (s.b, s.single_coil)
    };
    let bias = if cmd.mode == FieldMode::Off { 0.0 } else { cmd.z_bias };
    PwmFrame {
        duty_x: b[0],
        duty_y: b[1],
        duty_z: (b[2] + bias).clamp(-1.0, 1.0),
        t,
        single_coil,
    }
}

/// Number of loop samples per rotation period.
pub fn samples_per_period(loop_rate: f64, f: f64) -> Result<f64, FieldError> {
    if !(f > 0.0) {
        return Err(FieldError::NonPositiveFrequency(f));
    }
    Ok(loop_rate / f)
}

/// Two or fewer samples per period cannot represent the rotation direction.
pub fn is_aliased(loop_rate: f64, f: f64) -> Result<bool, FieldError> {
    samples_per_period(loop_rate, f).map(|n| n <= 2.0)
}

/// Emulated microcontroller: owns the loop clock and the latched command, and
/// drains at most one serial line per tick.
#[derive(Debug)]
pub struct Firmware {
    clock: LoopClock,
    active: FieldCommand,
    convention: WaveformConvention,
    link: Option<Receiver<String>>,
    rejected: u64,
    last_frame: PwmFrame,
}

impl Firmware {
    pub fn new(loop_rate: f64) -> Self {
        Self {
            clock: LoopClock::new(loop_rate),
            active: FieldCommand::off(),
            convention: WaveformConvention::Equation,
            link: None,
            rejected: 0,
            last_frame: PwmFrame::default(),
        }
    }

    pub fn with_link(mut self, rx: Receiver<String>) -> Self {
        self.link = Some(rx);
        self
    }

    pub fn with_convention(mut self, convention: WaveformConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn clock(&self) -> &LoopClock {
        &self.clock
    }

    pub fn active(&self) -> &FieldCommand {
        &self.active
    }

    pub fn last_frame(&self) -> &PwmFrame {
        &self.last_frame
    }

    /// Lines that failed to decode or validate; the latched command was kept.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Replaces the latched command. Validation happens before any mutation.
    pub fn apply(&mut self, cmd: FieldCommand) -> Result<(), FieldError> {
        cmd.validate()?;
        self.active = cmd;
        Ok(())
    }

    pub fn tick(&mut self) -> PwmFrame {
        if let Some(rx) = &self.link {
            match rx.try_recv() {
                Ok(line) => match serial::decode(&line) {
                    Ok(cmd) => self.active = cmd,
                    Err(_) => self.rejected += 1,
                },
                Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => {}
            }
        }
        self.last_frame = firmware_step_with(&mut self.clock, &self.active, self.convention);
        self.last_frame
    }
}
