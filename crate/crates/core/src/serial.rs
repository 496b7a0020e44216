//! Line codec for the host-to-firmware serial link.
//!
//! Wire format, one command per line, fields separated by single spaces:
//!
//! ```text
//! CMD <mode> <alpha> <gamma> <freq> <amplitude> <gradient_axis> <z_bias>\n
//! ```
//!
//! `mode` is one of `ROLL`, `SWIM`, `UNIFORM`, `GRADIENT`, `OFF`;
//! `gradient_axis` one of `+X -X +Y -Y +Z -Z`. Every number is written with
//! exactly four decimal places.

use std::sync::mpsc::{channel, Receiver, SendError, Sender};

use thiserror::Error;

use crate::field_synth::{FieldCommand, FieldError, FieldMode, GradientAxis, MAX_ROTATION_FREQ};

/// Decimal places carried on the wire.
pub const WIRE_DECIMALS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SerialError {
    #[error("malformed command at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("decoded command is invalid: {0}")]
    Invalid(#[from] FieldError),
}

fn mode_token(mode: FieldMode) -> &'static str {
    match mode {
        FieldMode::RotatingRoll => "ROLL",
        FieldMode::RotatingSwim => "SWIM",
        FieldMode::Uniform => "UNIFORM",
        FieldMode::Gradient => "GRADIENT",
        FieldMode::Off => "OFF",
    }
}

fn parse_mode(tok: &str) -> Option<FieldMode> {
    Some(match tok {
        "ROLL" => FieldMode::RotatingRoll,
        "SWIM" => FieldMode::RotatingSwim,
        "UNIFORM" => FieldMode::Uniform,
        "GRADIENT" => FieldMode::Gradient,
        "OFF" => FieldMode::Off,
        _ => return None,
    })
}

fn parse_axis(tok: &str) -> Option<GradientAxis> {
    GradientAxis::ALL.into_iter().find(|a| a.as_str() == tok)
}

fn round_wire(x: f64) -> f64 {
    // +0.0 folds a negative zero into positive zero
    format!("{:.*}", WIRE_DECIMALS, x).parse::<f64>().unwrap() + 0.0
}

/// Rounds every numeric field to wire precision. Alpha wraps at 360 and the
/// frequency stays below the exclusive cap, so a valid command remains valid.
pub fn quantize(cmd: &FieldCommand) -> FieldCommand {
    let mut alpha = round_wire(cmd.alpha);
    if alpha >= 360.0 {
        alpha -= 360.0;
    }
    let mut freq = round_wire(cmd.freq);
    if freq >= MAX_ROTATION_FREQ {
        freq = MAX_ROTATION_FREQ - 1e-4;
    }
    FieldCommand {
        mode: cmd.mode,
        alpha,
        gamma: round_wire(cmd.gamma),
        freq: round_wire(freq),
        amplitude: round_wire(cmd.amplitude),
        gradient_axis: cmd.gradient_axis,
        z_bias: round_wire(cmd.z_bias),
    }
}

pub fn encode(cmd: &FieldCommand) -> String {
    let q = quantize(cmd);
    format!(
        "CMD {} {:.4} {:.4} {:.4} {:.4} {} {:.4}\n",
        mode_token(q.mode),
        q.alpha,
        q.gamma,
        q.freq,
        q.amplitude,
        q.gradient_axis.as_str(),
        q.z_bias
    )
}

pub fn decode(line: &str) -> Result<FieldCommand, SerialError> {
    let body = line.strip_suffix('\n').unwrap_or(line);
    let body = body.strip_suffix('\r').unwrap_or(body);

    let mut fields = Vec::with_capacity(8);
    let mut offset = 0;
    for tok in body.split(' ') {
        fields.push((offset, tok));
        offset += tok.len() + 1;
    }
    if fields.len() != 8 {
        return Err(SerialError::Malformed {
            offset: body.len().min(offset.saturating_sub(1)),
            reason: format!("expected 8 fields, found {}", fields.len()),
        });
    }
    let malformed = |offset: usize, reason: String| SerialError::Malformed { offset, reason };

    let (off, tag) = fields[0];
    if tag != "CMD" {
        return Err(malformed(off, format!("expected CMD, found {tag:?}")));
    }
    let (off, tok) = fields[1];
    let mode = parse_mode(tok).ok_or_else(|| malformed(off, format!("unknown mode {tok:?}")))?;
    let number = |(off, tok): (usize, &str)| -> Result<f64, SerialError> {
        let ok_shape = tok
            .split_once('.')
            .map(|(int, frac)| {
                let int = int.strip_prefix('-').unwrap_or(int);
                !int.is_empty()
                    && int.bytes().all(|b| b.is_ascii_digit())
                    && frac.len() == WIRE_DECIMALS
                    && frac.bytes().all(|b| b.is_ascii_digit())
            })
            .unwrap_or(false);
        if !ok_shape {
            return Err(malformed(off, format!("expected a 4-decimal number, found {tok:?}")));
        }
        tok.parse::<f64>()
            .map(|v| v + 0.0)
            .map_err(|e| malformed(off, e.to_string()))
    };
    let alpha = number(fields[2])?;
    let gamma = number(fields[3])?;
    let freq = number(fields[4])?;
    let amplitude = number(fields[5])?;
    let (off, tok) = fields[6];
    let gradient_axis = parse_axis(tok).ok_or_else(|| malformed(off, format!("unknown axis {tok:?}")))?;
    let z_bias = number(fields[7])?;

    let cmd = FieldCommand {
        mode,
        alpha,
        gamma,
        freq,
        amplitude,
        gradient_axis,
        z_bias,
    };
    cmd.validate()?;
    Ok(cmd)
}

/// Host side of the emulated serial link.
#[derive(Debug, Clone)]
pub struct HostPort {
    tx: Sender<String>,
}

impl HostPort {
    /// Validates, encodes and queues a command.
    pub fn send(&self, cmd: &FieldCommand) -> Result<(), SerialError> {
        cmd.validate()?;
        self.tx
            .send(encode(cmd))
            .map_err(|SendError(line)| SerialError::Malformed {
                offset: 0,
                reason: format!("link closed, dropped {:?}", line.trim_end()),
            })
    }

    pub fn send_raw(&self, line: String) -> bool {
        self.tx.send(line).is_ok()
    }
}

/// Ordered one-way link; the receiver goes to [`crate::field_synth::Firmware::with_link`].
pub fn link() -> (HostPort, Receiver<String>) {
    let (tx, rx) = channel();
    (HostPort { tx }, rx)
}
