//! Characterisation curves in long CSV form: `figure,series,x,y`.
//!
//! | figure | x | y | series |
//! |---|---|---|---|
//! | `field_vs_voltage` | supply V | mT at full duty | `x`, `y`, `z` |
//! | `field_vs_duty_12v` | duty | mT | `x`, `y`, `z` |
//! | `field_vs_duty_24v` | duty | mT | `x`, `y`, `z` |
//! | `rolling_speed` | Hz | μm/s | `12v`, `24v` |
//! | `acoustic_speed` | Hz | μm/s | `cup` |

use std::io::Write;

use microtwin_core::coil_model::{Axis, CoilCalibration, MAX_SUPPLY_VOLTAGE};
use microtwin_core::dynamics::{acoustic_speed, rolling_speed, AcousticResponse, RollingParams};
use microtwin_core::field_synth::PwmFrame;

use crate::telemetry::fmt_g;
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub figure: &'static str,
    pub series: &'static str,
    pub x: f64,
    pub y: f64,
}

const AXES: [(Axis, &str); 3] = [(Axis::X, "x"), (Axis::Y, "y"), (Axis::Z, "z")];

fn axis_flux(calib: &CoilCalibration, axis: Axis, voltage: f64, duty: f64) -> Result<f64, HarnessError> {
    let mut d = [0.0; 3];
    d[axis.index()] = duty;
    let frame = PwmFrame {
        duty_x: d[0],
        duty_y: d[1],
        duty_z: d[2],
        t: 0.0,
        single_coil: false,
    };
    Ok(calib.field_from_duty(voltage, &frame)?[axis.index()])
}

pub fn curves(calib: &CoilCalibration) -> Result<Vec<CurvePoint>, HarnessError> {
    let mut out = Vec::new();
    for (axis, name) in AXES {
        for v in 0..=MAX_SUPPLY_VOLTAGE as u32 {
            out.push(CurvePoint {
                figure: "field_vs_voltage",
                series: name,
                x: v as f64,
                y: axis_flux(calib, axis, v as f64, 1.0)?,
            });
        }
    }
    for (figure, volts) in [("field_vs_duty_12v", 12.0), ("field_vs_duty_24v", 24.0)] {
        for (axis, name) in AXES {
            for step in 0..=20 {
                let duty = step as f64 / 20.0;
                out.push(CurvePoint {
                    figure,
                    series: name,
                    x: duty,
                    y: axis_flux(calib, axis, volts, duty)?,
                });
            }
        }
    }
    for (series, params) in [
        ("12v", RollingParams::sphere_12v()),
        ("24v", RollingParams::sphere_24v()),
    ] {
        for f in 1..=100 {
            out.push(CurvePoint {
                figure: "rolling_speed",
                series,
                x: f as f64,
                y: rolling_speed(f as f64, &params),
            });
        }
    }
    let cup = AcousticResponse::default();
    for step in 0..=600 {
        let f = step as f64 * 5e3;
        out.push(CurvePoint {
            figure: "acoustic_speed",
            series: "cup",
            x: f,
            y: acoustic_speed(f, &cup),
        });
    }
    Ok(out)
}

pub fn write_curves<W: Write>(out: W, points: &[CurvePoint]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| HarnessError::Telemetry(e.to_string());
    w.write_record(["figure", "series", "x", "y"]).map_err(err)?;
    for p in points {
        w.write_record([p.figure, p.series, &fmt_g(p.x), &fmt_g(p.y)])
            .map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::Telemetry(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_hit_stated_points() {
        let pts = curves(&CoilCalibration::default()).unwrap();
        let at = |fig: &str, s: &str, x: f64| {
            pts.iter()
                .find(|p| p.figure == fig && p.series == s && p.x == x)
                .unwrap()
                .y
        };
        assert_eq!(at("field_vs_voltage", "x", 6.0), 6.9);
        assert_eq!(at("field_vs_voltage", "z", 4.0), 0.0);
        assert_eq!(at("field_vs_duty_12v", "y", 1.0), 12.5);
        assert_eq!(at("field_vs_duty_24v", "z", 1.0), 16.0);
        assert_eq!(at("rolling_speed", "12v", 40.0), 160.0);
        assert_eq!(at("rolling_speed", "24v", 70.0), 270.0);
        let mut buf = Vec::new();
        write_curves(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("figure,series,x,y\n"));
        assert_eq!(text.lines().count(), pts.len() + 1);
    }
}
