//! Per-frame telemetry CSV.
//!
//! Header (one block of `t<k>_*` columns per vision track, in track order):
//!
//! ```text
//! frame,time,t0_x,t0_y,t0_vel,t0_size,t0_lost,t0_crop,t0_blur,t0_dilation,t0_lower,t0_upper,...,
//! mode,alpha,gamma,freq,amplitude,z_bias,duty_x,duty_y,duty_z,acoustic_hz
//! ```
//!
//! Positions are frame pixels, `vel` is μm/s (empty until two positions are
//! known), `lost` is 0 or 1, `mode` is the field mode name. Floats are
//! written with 6 significant digits in `%g` style.

use std::io::{Read, Write};
use std::path::Path;

use microtwin_core::field_synth::{FieldCommand, FieldMode};
use microtwin_core::vision::MaskParams;

use crate::HarnessError;

const TRACK_COLUMNS: [&str; 10] = [
    "x", "y", "vel", "size", "lost", "crop", "blur", "dilation", "lower", "upper",
];
const TAIL_COLUMNS: [&str; 10] = [
    "mode",
    "alpha",
    "gamma",
    "freq",
    "amplitude",
    "z_bias",
    "duty_x",
    "duty_y",
    "duty_z",
    "acoustic_hz",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSample {
    /// px
    pub x: f64,
    /// px
    pub y: f64,
    /// μm/s
    pub vel: Option<f64>,
    pub size: usize,
    pub lost: bool,
    pub mask: MaskParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRow {
    pub frame: u64,
    /// s
    pub time: f64,
    pub tracks: Vec<TrackSample>,
    pub field: FieldCommand,
    pub duty: [f64; 3],
    /// Hz
    pub acoustic_hz: f64,
}

pub fn header(n_tracks: usize) -> Vec<String> {
    let mut h = vec!["frame".to_string(), "time".to_string()];
    for k in 0..n_tracks {
        h.extend(TRACK_COLUMNS.iter().map(|c| format!("t{k}_{c}")));
    }
    h.extend(TAIL_COLUMNS.iter().map(|c| c.to_string()));
    h
}

/// `%g` with 6 significant digits.
pub fn fmt_g(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_fraction(&format!("{v:.decimals$}")).to_string()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn mode_from_str(s: &str) -> Option<FieldMode> {
    [
        FieldMode::RotatingRoll,
        FieldMode::RotatingSwim,
        FieldMode::Uniform,
        FieldMode::Gradient,
        FieldMode::Off,
    ]
    .into_iter()
    .find(|m| m.as_str() == s)
}

pub struct TelemetryWriter<W: Write> {
    inner: csv::Writer<W>,
    n_tracks: usize,
}

impl<W: Write> TelemetryWriter<W> {
    pub fn new(out: W, n_tracks: usize) -> Result<Self, HarnessError> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(out);
        inner.write_record(header(n_tracks)).map_err(csv_err)?;
        Ok(Self { inner, n_tracks })
    }

    pub fn write(&mut self, row: &TelemetryRow) -> Result<(), HarnessError> {
        assert_eq!(row.tracks.len(), self.n_tracks, "row track count differs from header");
        let mut rec = vec![row.frame.to_string(), fmt_g(row.time)];
        for t in &row.tracks {
            rec.extend([
                fmt_g(t.x),
                fmt_g(t.y),
                t.vel.map(fmt_g).unwrap_or_default(),
                t.size.to_string(),
                u8::from(t.lost).to_string(),
                t.mask.crop_length.to_string(),
                t.mask.blur.to_string(),
                t.mask.dilation.to_string(),
                t.mask.lower_thresh.to_string(),
                t.mask.upper_thresh.to_string(),
            ]);
        }
        let f = &row.field;
        rec.push(f.mode.as_str().to_string());
        rec.extend([f.alpha, f.gamma, f.freq, f.amplitude, f.z_bias].map(fmt_g));
        rec.extend(row.duty.map(fmt_g));
        rec.push(fmt_g(row.acoustic_hz));
        self.inner.write_record(rec).map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<W, HarnessError> {
        self.inner.flush().map_err(|e| HarnessError::Telemetry(e.to_string()))?;
        self.inner
            .into_inner()
            .map_err(|e| HarnessError::Telemetry(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Telemetry(e.to_string())
}

pub fn write_telemetry_file(path: &Path, n_tracks: usize, rows: &[TelemetryRow]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = TelemetryWriter::new(std::io::BufWriter::new(file), n_tracks)?;
    for r in rows {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn to_csv_bytes(n_tracks: usize, rows: &[TelemetryRow]) -> Result<Vec<u8>, HarnessError> {
    let mut w = TelemetryWriter::new(Vec::new(), n_tracks)?;
    for r in rows {
        w.write(r)?;
    }
    w.finish()
}

/// Parses a telemetry file; returns the track count and the rows.
pub fn read_telemetry<R: Read>(input: R) -> Result<(usize, Vec<TelemetryRow>), HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let head: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let fixed = 2 + TAIL_COLUMNS.len();
    if head.len() < fixed || !(head.len() - fixed).is_multiple_of(TRACK_COLUMNS.len()) {
        return Err(HarnessError::Telemetry(format!(
            "unexpected header with {} columns",
            head.len()
        )));
    }
    let n_tracks = (head.len() - fixed) / TRACK_COLUMNS.len();
    if head != header(n_tracks) {
        return Err(HarnessError::Telemetry(
            "header does not match the telemetry schema".into(),
        ));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |col: usize| HarnessError::Telemetry(format!("row {}: bad value in column {}", line + 1, head[col]));
        let num = |col: usize| rec[col].parse::<f64>().map_err(|_| bad(col));
        let int = |col: usize| rec[col].parse::<u64>().map_err(|_| bad(col));
        let mut tracks = Vec::with_capacity(n_tracks);
        for k in 0..n_tracks {
            let b = 2 + k * TRACK_COLUMNS.len();
            tracks.push(TrackSample {
                x: num(b)?,
                y: num(b + 1)?,
                vel: if rec[b + 2].is_empty() { None } else { Some(num(b + 2)?) },
                size: int(b + 3)? as usize,
                lost: int(b + 4)? != 0,
                mask: MaskParams {
                    crop_length: int(b + 5)? as usize,
                    blur: int(b + 6)? as usize,
                    dilation: int(b + 7)? as usize,
                    lower_thresh: u8::try_from(int(b + 8)?).map_err(|_| bad(b + 8))?,
                    upper_thresh: u8::try_from(int(b + 9)?).map_err(|_| bad(b + 9))?,
                },
            });
        }
        let t = 2 + n_tracks * TRACK_COLUMNS.len();
        let mode = mode_from_str(&rec[t]).ok_or_else(|| bad(t))?;
        let field = FieldCommand {
            mode,
            alpha: num(t + 1)?,
            gamma: num(t + 2)?,
            freq: num(t + 3)?,
            amplitude: num(t + 4)?,
            z_bias: num(t + 5)?,
            ..FieldCommand::off()
        };
        rows.push(TelemetryRow {
            frame: int(0)?,
            time: num(1)?,
            tracks,
            field,
            duty: [num(t + 6)?, num(t + 7)?, num(t + 8)?],
            acoustic_hz: num(t + 9)?,
        });
    }
    Ok((n_tracks, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn g_format() {
        assert_eq!(fmt_g(0.0), "0");
        assert_eq!(fmt_g(63.2), "63.2");
        assert_eq!(fmt_g(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_g(810000.0), "810000");
        assert_eq!(fmt_g(1234567.0), "1.23457e+06");
        assert_eq!(fmt_g(999999.5), "1e+06");
        assert_eq!(fmt_g(0.0001), "0.0001");
        assert_eq!(fmt_g(0.00001234), "1.234e-05");
        assert_eq!(fmt_g(-2.5), "-2.5");
        assert_eq!(fmt_g(1224.0), "1224");
    }

    fn row(frame: u64, n: usize) -> TelemetryRow {
        TelemetryRow {
            frame,
            time: frame as f64 / 24.0,
            tracks: (0..n)
                .map(|k| TrackSample {
                    x: 1224.0 + k as f64 / 7.0,
                    y: 1024.5,
                    vel: (frame > 0).then_some(63.2 + k as f64),
                    size: 2821,
                    lost: k == 1,
                    mask: MaskParams::default(),
                })
                .collect(),
            field: FieldCommand::rolling(45.0, 90.0, 10.0),
            duty: [0.1, -std::f64::consts::FRAC_1_SQRT_2, 1.0 / 3.0],
            acoustic_hz: 810e3,
        }
    }

    #[test]
    fn header_only_when_empty() {
        let bytes = to_csv_bytes(2, &[]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("frame,time,t0_x,t0_y,t0_vel,t0_size,t0_lost,"));
        assert!(text.trim_end().ends_with("duty_x,duty_y,duty_z,acoustic_hz"));
        let (n, rows) = read_telemetry(text.as_bytes()).unwrap();
        assert_eq!((n, rows.len()), (2, 0));
    }

    #[test]
    fn round_trip_at_declared_precision() {
        let rows: Vec<_> = (0..5).map(|f| row(f, 2)).collect();
        let bytes = to_csv_bytes(2, &rows).unwrap();
        let (n, back) = read_telemetry(bytes.as_slice()).unwrap();
        assert_eq!(n, 2);
        let again = to_csv_bytes(n, &back).unwrap();
        assert_eq!(bytes, again);
        let r = &back[1];
        assert_eq!(r.tracks[0].x, fmt_g(rows[1].tracks[0].x).parse::<f64>().unwrap());
        assert_eq!(r.duty[2], 0.333333);
        assert_eq!(r.tracks[0].vel, Some(63.2));
        assert_eq!(back[0].tracks[0].vel, None);
        assert!(r.tracks[1].lost);
        assert_eq!(r.field.mode, FieldMode::RotatingRoll);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(read_telemetry("a,b,c\n1,2,3\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn g_format_keeps_six_digits(v in -1e9..1e9f64) {
            let s = fmt_g(v);
            let back: f64 = s.parse().unwrap();
            prop_assert!((back - v).abs() <= 5e-6 * v.abs().max(1e-300));
            prop_assert_eq!(fmt_g(back), s);
        }
    }
}
