//! JSON messages exchanged with UI clients over the WebSocket.
//!
//! Every message is an object carrying the schema version `v` and a `type`
//! discriminator; the remaining keys depend on the type:
//!
//! - `joystick` (client to server): gamepad sample, see [`JoystickInput`].
//! - `command` (client to server): optional `field` command and optional
//!   `acoustic_hz`.
//! - `telemetry` (server to client): one snapshot per vision frame.
//! - `error` (server to client): `code` and human-readable `message`.

use microtwin_core::control::JoystickInput;
use microtwin_core::dynamics::RobotKind;
use microtwin_core::field_synth::{FieldCommand, FieldMode};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper end of the function generator's sine range (Hz).
pub const MAX_ACOUSTIC_HZ: f64 = 40e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandMsg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acoustic_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSnapshot {
    pub id: usize,
    pub kind: RobotKind,
    pub x_px: f64,
    pub y_px: f64,
    pub x_um: f64,
    pub y_um: f64,
    /// μm/s
    pub velocity: Option<f64>,
    pub size_px: usize,
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub mode: FieldMode,
    pub alpha: f64,
    pub gamma: f64,
    pub freq: f64,
    pub z_bias: f64,
    pub duty: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub frame: u64,
    /// s
    pub time: f64,
    pub fps: f64,
    pub um_per_px: f64,
    pub width: usize,
    pub height: usize,
    pub tracks: Vec<TrackSnapshot>,
    pub field: FieldSnapshot,
    pub acoustic_hz: f64,
    /// Desired path in μm when a path-following controller is active.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desired_path: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Joystick(JoystickInput),
    Command(CommandMsg),
    Telemetry(Box<TelemetrySnapshot>),
    Error { code: ErrorCode, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not JSON or not a known message shape.
    Malformed,
    UnsupportedVersion,
    /// A server-to-client type sent by a client.
    UnexpectedType,
    /// Well-formed command the firmware would reject.
    InvalidCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(flatten)]
    pub msg: Message,
}

impl Envelope {
    pub fn new(msg: Message) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            msg,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages always serialise")
    }
}

pub fn error_message(code: ErrorCode, message: impl Into<String>) -> String {
    Envelope::new(Message::Error {
        code,
        message: message.into(),
    })
    .to_json()
}

/// Decodes a client frame; anything other than a supported joystick or
/// command message becomes the error frame to send back.
pub fn parse_client_message(text: &str) -> Result<Message, String> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| error_message(ErrorCode::Malformed, format!("invalid JSON: {e}")))?;
    match value.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => {
            return Err(error_message(
                ErrorCode::UnsupportedVersion,
                format!("protocol version {v} not supported, expected {PROTOCOL_VERSION}"),
            ))
        }
        None => return Err(error_message(ErrorCode::Malformed, "missing integer field `v`")),
    }
    let env: Envelope =
        serde_json::from_value(value).map_err(|e| error_message(ErrorCode::Malformed, e.to_string()))?;
    match env.msg {
        Message::Joystick(j) => {
            let sticks = j
                .right_stick
                .iter()
                .chain(&j.left_stick)
                .all(|v| (-1.0..=1.0).contains(v));
            let triggers = [j.l_trigger, j.r_trigger].iter().all(|v| (0.0..=1.0).contains(v));
            if sticks && triggers {
                Ok(Message::Joystick(j))
            } else {
                Err(error_message(
                    ErrorCode::InvalidCommand,
                    "stick axes must lie in [-1, 1] and triggers in [0, 1]",
                ))
            }
        }
        Message::Command(c) => {
            if let Some(f) = &c.field {
                f.validate()
                    .map_err(|e| error_message(ErrorCode::InvalidCommand, e.to_string()))?;
            }
            if c.acoustic_hz.is_some_and(|f| !(0.0..=MAX_ACOUSTIC_HZ).contains(&f)) {
                return Err(error_message(
                    ErrorCode::InvalidCommand,
                    "acoustic_hz must lie in [0, 40e6]",
                ));
            }
            Ok(Message::Command(c))
        }
        Message::Telemetry(_) | Message::Error { .. } => Err(error_message(
            ErrorCode::UnexpectedType,
            "clients may only send joystick and command messages",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code_of(err: &str) -> ErrorCode {
        match serde_json::from_str::<Envelope>(err).unwrap().msg {
            Message::Error { code, .. } => code,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn joystick_shape() {
        let m = parse_client_message(r#"{"v":1,"type":"joystick","right_stick":[0,1]}"#).unwrap();
        let Message::Joystick(j) = m else { panic!() };
        assert_eq!(j.right_stick, [0.0, 1.0]);
        assert!(!j.square);
    }

    #[test]
    fn errors() {
        assert_eq!(code_of(&parse_client_message("{").unwrap_err()), ErrorCode::Malformed);
        assert_eq!(
            code_of(&parse_client_message(r#"{"type":"joystick"}"#).unwrap_err()),
            ErrorCode::Malformed
        );
        assert_eq!(
            code_of(&parse_client_message(r#"{"v":2,"type":"joystick"}"#).unwrap_err()),
            ErrorCode::UnsupportedVersion
        );
        assert_eq!(
            code_of(&parse_client_message(r#"{"v":1,"type":"warp"}"#).unwrap_err()),
            ErrorCode::Malformed
        );
        assert_eq!(
            code_of(&parse_client_message(r#"{"v":1,"type":"error","code":"malformed","message":""}"#).unwrap_err()),
            ErrorCode::UnexpectedType
        );
        assert_eq!(
            code_of(
                &parse_client_message(r#"{"v":1,"type":"command","field":{"mode":"rotating_roll","freq":300}}"#)
                    .unwrap_err()
            ),
            ErrorCode::InvalidCommand
        );
    }

    #[test]
    fn envelope_is_flat() {
        let s = Envelope::new(Message::Command(CommandMsg {
            field: None,
            acoustic_hz: Some(810e3),
        }))
        .to_json();
        assert_eq!(s, r#"{"v":1,"type":"command","acoustic_hz":810000.0}"#);
    }
}
