//! Coil-array field model.
//!
//! Maps signed duty cycles and the supply voltage to flux density at the
//! workspace centre through per-axis anchor tables, and emulates the hall
//! sensor readback. Between anchors the model is piecewise linear in both
//! voltage and duty; below an axis's activation voltage the H-bridge draws
//! no current and the axis produces nothing.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field_synth::PwmFrame;

/// Highest supply voltage the bench supply can deliver (V).
pub const MAX_SUPPLY_VOLTAGE: f64 = 27.0;

/// Shipped calibration table.
pub const DEFAULT_CALIBRATION: &str = include_str!("../data/coil_calibration.txt");

#[derive(Debug, Error)]
pub enum CoilError {
    #[error("supply voltage {0} V outside calibrated range [0, 27]")]
    VoltageOutOfRange(f64),
    #[error("calibration line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("calibration: {0}")]
    Table(String),
    #[error("reading calibration {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    fn parse(tok: &str) -> Option<Axis> {
        match tok {
            "X" => Some(Axis::X),
            "Y" => Some(Axis::Y),
            "Z" => Some(Axis::Z),
            _ => None,
        }
    }
}

/// Duty anchors at one supply voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageRow {
    pub voltage: f64,
    pub duty: Vec<f64>,
    pub flux: Vec<f64>,
}

impl VoltageRow {
    fn flux_at(&self, duty: f64) -> f64 {
        interpolate(&self.duty, &self.flux, duty)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisTable {
    pub activation_voltage: f64,
    pub rows: Vec<VoltageRow>,
}

impl AxisTable {
    fn flux(&self, voltage: f64, duty: f64) -> f64 {
        if voltage < self.activation_voltage || duty == 0.0 {
            return 0.0;
        }
        let rows = &self.rows;
        let i = rows.partition_point(|r| r.voltage <= voltage);
        if i == 0 {
            return rows[0].flux_at(duty);
        }
        let lo = &rows[i - 1];
        if lo.voltage == voltage || i == rows.len() {
            return lo.flux_at(duty);
        }
        let hi = &rows[i];
        let w = (voltage - lo.voltage) / (hi.voltage - lo.voltage);
        (1.0 - w) * lo.flux_at(duty) + w * hi.flux_at(duty)
    }
}

/// Piecewise-linear lookup that returns table entries exactly at anchors.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&a| a <= x);
    if i == 0 {
        return ys[0];
    }
    if xs[i - 1] == x || i == xs.len() {
        return ys[i - 1];
    }
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    let v = y0 + (y1 - y0) * (x - x0) / (x1 - x0);
    v.clamp(y0.min(y1), y0.max(y1))
}

/// Per-axis anchor tables.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilCalibration {
    axes: [AxisTable; 3],
}

impl Default for CoilCalibration {
    fn default() -> Self {
        Self::parse(DEFAULT_CALIBRATION).expect("shipped calibration is valid")
    }
}

impl CoilCalibration {
    pub fn axis(&self, axis: Axis) -> &AxisTable {
        &self.axes[axis.index()]
    }

    pub fn load(path: &Path) -> Result<Self, CoilError> {
        let text = std::fs::read_to_string(path).map_err(|source| CoilError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CoilError> {
        let mut activation: [Option<f64>; 3] = [None; 3];
        // (voltage, duty, flux) per axis, in file order
        let mut anchors: [Vec<(f64, f64, f64)>; 3] = Default::default();

        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            let err = |reason: String| CoilError::Schema { line, reason };
            let num = |s: &str, what: &str| -> Result<f64, CoilError> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("{what} {s:?} is not a finite number")))
            };
            if toks[0] == "activation" {
                if toks.len() != 3 {
                    return Err(err("expected `activation <axis> <volts>`".into()));
                }
                let axis = Axis::parse(toks[1]).ok_or_else(|| err(format!("unknown axis {:?}", toks[1])))?;
                let v = num(toks[2], "voltage")?;
                if activation[axis.index()].replace(v).is_some() {
                    return Err(err(format!("duplicate activation for {axis:?}")));
                }
                continue;
            }
            if toks.len() != 4 {
                return Err(err("expected `<axis> <volts> <duty> <millitesla>`".into()));
            }
            let axis = Axis::parse(toks[0]).ok_or_else(|| err(format!("unknown axis {:?}", toks[0])))?;
            let v = num(toks[1], "voltage")?;
            let d = num(toks[2], "duty")?;
            let b = num(toks[3], "flux")?;
            if !(0.0..=MAX_SUPPLY_VOLTAGE).contains(&v) {
                return Err(err(format!("voltage {v} outside [0, 27]")));
            }
            if !(0.0..=1.0).contains(&d) {
                return Err(err(format!("duty {d} outside [0, 1]")));
            }
            if b < 0.0 {
                return Err(err(format!("negative flux {b}")));
            }
            anchors[axis.index()].push((v, d, b));
        }

        let mut tables = Vec::with_capacity(3);
        for axis in Axis::ALL {
            let act = activation[axis.index()]
                .ok_or_else(|| CoilError::Table(format!("missing activation voltage for {axis:?}")))?;
            tables.push(build_axis(axis, act, &anchors[axis.index()])?);
        }
        let axes: [AxisTable; 3] = tables.try_into().expect("three axes");
        Ok(Self { axes })
    }

    /// Flux vector (mT) for a PWM frame. Each axis is looked up with
    /// `|duty|` and carries the duty's sign.
    pub fn field_from_duty(&self, voltage: f64, frame: &PwmFrame) -> Result<[f64; 3], CoilError> {
        check_voltage(voltage)?;
        let d = frame.duties();
        Ok(std::array::from_fn(|i| {
            let mag = self.axes[i].flux(voltage, d[i].abs().min(1.0));
            if d[i] < 0.0 {
                -mag
            } else {
                mag
            }
        }))
    }

    pub fn max_field(&self, voltage: f64) -> Result<[f64; 3], CoilError> {
        let full = PwmFrame {
            duty_x: 1.0,
            duty_y: 1.0,
            duty_z: 1.0,
            ..PwmFrame::default()
        };
        self.field_from_duty(voltage, &full)
    }
}

fn check_voltage(voltage: f64) -> Result<(), CoilError> {
    if (0.0..=MAX_SUPPLY_VOLTAGE).contains(&voltage) {
        Ok(())
    } else {
        Err(CoilError::VoltageOutOfRange(voltage))
    }
}

fn build_axis(axis: Axis, activation: f64, anchors: &[(f64, f64, f64)]) -> Result<AxisTable, CoilError> {
    let bad = |reason: String| CoilError::Table(format!("{axis:?}: {reason}"));
    let mut rows: Vec<VoltageRow> = Vec::new();
    for &(v, d, b) in anchors {
        match rows.last_mut() {
            Some(row) if row.voltage == v => {
                if d <= *row.duty.last().unwrap() {
                    return Err(bad(format!("duty anchors at {v} V must increase")));
                }
                if b < *row.flux.last().unwrap() {
                    return Err(bad(format!("flux must not decrease with duty at {v} V")));
                }
                row.duty.push(d);
                row.flux.push(b);
            }
            Some(row) if row.voltage > v => {
                return Err(bad(format!("voltage rows must increase ({} then {v})", row.voltage)));
            }
            _ => rows.push(VoltageRow {
                voltage: v,
                duty: vec![d],
                flux: vec![b],
            }),
        }
    }
    if rows.is_empty() {
        return Err(bad("no anchors".into()));
    }
    for row in &rows {
        if row.duty[0] != 0.0 || row.flux[0] != 0.0 {
            return Err(bad(format!("row {} V must start at duty 0 with 0 mT", row.voltage)));
        }
        if *row.duty.last().unwrap() != 1.0 {
            return Err(bad(format!("row {} V must end at duty 1", row.voltage)));
        }
    }
    if rows[0].voltage != activation {
        return Err(bad(format!(
            "first row ({} V) must sit at the activation voltage ({activation} V)",
            rows[0].voltage
        )));
    }
    Ok(AxisTable {
        activation_voltage: activation,
        rows,
    })
}

/// Scalar gradient along the driven axis when a single coil is active.
/// `mt_per_mm_per_mt` converts the centre flux into a gradient magnitude;
/// no measured value exists, so the caller supplies it.
pub fn gradient_along_axis(
    calib: &CoilCalibration,
    voltage: f64,
    frame: &PwmFrame,
    mt_per_mm_per_mt: f64,
) -> Result<Option<(Axis, f64)>, CoilError> {
    if !frame.single_coil {
        return Ok(None);
    }
    let b = calib.field_from_duty(voltage, frame)?;
    Ok(Axis::ALL
        .into_iter()
        .find(|a| b[a.index()] != 0.0)
        .map(|a| (a, b[a.index()] * mt_per_mm_per_mt)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallReading {
    pub axis: Axis,
    /// mT
    pub flux: f64,
    pub noise_sigma: f64,
}

/// Seeded hall-sensor triple with additive Gaussian noise.
#[derive(Debug, Clone)]
pub struct HallSensors {
    noise: Option<Normal<f64>>,
    sigma: f64,
    rng: ChaCha8Rng,
}

impl HallSensors {
    pub fn new(noise_sigma: f64, seed: u64) -> Self {
        assert!(
            noise_sigma >= 0.0 && noise_sigma.is_finite(),
            "noise sigma must be >= 0"
        );
        Self {
            noise: (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).unwrap()),
            sigma: noise_sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn read(&mut self, true_field: [f64; 3]) -> [HallReading; 3] {
        Axis::ALL.map(|axis| {
            let jitter = match &self.noise {
                Some(n) => n.sample(&mut self.rng),
                None => 0.0,
            };
            HallReading {
                axis,
                flux: true_field[axis.index()] + jitter,
                noise_sigma: self.sigma,
            }
        })
    }
}

/// Single reading from a freshly seeded sensor triple.
pub fn hall_emulate(true_field: [f64; 3], noise_sigma: f64, seed: u64) -> [HallReading; 3] {
    HallSensors::new(noise_sigma, seed).read(true_field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(d: [f64; 3]) -> PwmFrame {
        PwmFrame {
            duty_x: d[0],
            duty_y: d[1],
            duty_z: d[2],
            ..PwmFrame::default()
        }
    }

    #[test]
    fn stated_full_duty_fields() {
        let c = CoilCalibration::default();
        assert_eq!(c.field_from_duty(12.0, &frame([1.0; 3])).unwrap(), [13.0, 12.5, 8.3]);
        assert_eq!(c.field_from_duty(24.0, &frame([1.0; 3])).unwrap(), [20.0, 19.4, 16.0]);
        assert_eq!(c.field_from_duty(12.0, &frame([0.0; 3])).unwrap(), [0.0; 3]);
        assert_eq!(c.max_field(27.0).unwrap(), [19.9, 19.7, 15.3]);
        assert_eq!(c.max_field(0.0).unwrap(), [0.0; 3]);
    }

    #[test]
    fn activation_thresholds() {
        let c = CoilCalibration::default();
        let at6 = c.max_field(6.0).unwrap();
        assert_eq!(&at6[..2], &[6.9, 7.0]);
        assert_eq!(c.max_field(5.0).unwrap(), [0.0, 0.0, 3.5]);
        assert_eq!(c.max_field(5.99).unwrap()[0], 0.0);
        // z lies between its 5 V and 12 V anchors at 6 V
        assert!(at6[2] > 3.5 && at6[2] < 8.3);
    }

    #[test]
    fn voltage_range_is_enforced() {
        let c = CoilCalibration::default();
        assert!(matches!(c.max_field(27.5), Err(CoilError::VoltageOutOfRange(_))));
        assert!(matches!(c.max_field(-0.1), Err(CoilError::VoltageOutOfRange(_))));
        assert!(c.max_field(f64::NAN).is_err());
    }

    #[test]
    fn dense_anchors_above_13_volts() {
        let c = CoilCalibration::default();
        for axis in [Axis::X, Axis::Y] {
            let vs: Vec<f64> = c.axis(axis).rows.iter().map(|r| r.voltage).collect();
            for w in vs.windows(2).filter(|w| w[1] > 13.0) {
                assert!(w[1] - w[0] <= 1.0, "{axis:?} gap {w:?}");
            }
        }
    }

    #[test]
    fn schema_errors() {
        let ok_tail = "activation Y 6\nactivation Z 5\nY 6 0 0\nY 6 1 7\nZ 5 0 0\nZ 5 1 3\n";
        let cases = [
            "activation X 6\nX 6 0 0\nX 6 0.5 3\nX 6 0.4 4\nX 6 1 5\n",
            "activation X 6\nX 6 0 0\nX 6 0.5 3\nX 6 1 2\n",
            "activation X 6\nX 6 0 1\nX 6 1 5\n",
            "activation X 6\nX 6 0 0\nX 6 0.5 3\n",
            "activation X 6\nX 7 0 0\nX 7 1 3\n",
            "activation X 6\nX 6 0 0\nX 6 1 3\nX 5 0 0\nX 5 1 2\n",
            "activation X 6\nX 30 0 0\n",
            "activation X 6\nW 6 0 0\n",
            "activation X 6\nX 6 0 abc\n",
            "activation X 6\nX 6 0\n",
        ];
        for head in cases {
            let text = format!("{head}{ok_tail}");
            assert!(CoilCalibration::parse(&text).is_err(), "{head}");
        }
        assert!(CoilCalibration::parse(ok_tail).is_err(), "missing X");
        let good = format!("activation X 6\nX 6 0 0 # trailing comment\nX 6 1 5\n{ok_tail}");
        assert!(CoilCalibration::parse(&good).is_ok());
    }

    #[test]
    fn hall_zero_sigma_is_exact() {
        let r = hall_emulate([1.5, -2.0, 0.25], 0.0, 7);
        assert_eq!(r.map(|h| h.flux), [1.5, -2.0, 0.25]);
    }

    #[test]
    fn hall_is_reproducible() {
        let run = |seed| {
            let mut s = HallSensors::new(0.1, seed);
            (0..100)
                .flat_map(|_| s.read([1.0, 2.0, 3.0]))
                .map(|h| h.flux.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn hall_mean_converges() {
        let n = 100_000;
        let sigma = 0.1;
        let truth = [3.0, -1.0, 0.5];
        let mut s = HallSensors::new(sigma, 11);
        let mut sum = [0.0; 3];
        for _ in 0..n {
            for (acc, h) in sum.iter_mut().zip(s.read(truth)) {
                *acc += h.flux;
            }
        }
        let bound = 3.0 * sigma / (n as f64).sqrt();
        for i in 0..3 {
            assert!((sum[i] / n as f64 - truth[i]).abs() < bound);
        }
    }

    #[test]
    fn gradient_only_for_single_coil() {
        let c = CoilCalibration::default();
        assert_eq!(
            gradient_along_axis(&c, 12.0, &frame([1.0, 0.0, 0.0]), 0.05).unwrap(),
            None
        );
        let mut f = frame([0.0, -1.0, 0.0]);
        f.single_coil = true;
        let (axis, g) = gradient_along_axis(&c, 12.0, &f, 0.05).unwrap().unwrap();
        assert_eq!(axis, Axis::Y);
        assert!((g + 12.5 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn anchors_reproduced_exactly() {
        let c = CoilCalibration::default();
        for axis in Axis::ALL {
            for row in &c.axis(axis).rows {
                for (&d, &b) in row.duty.iter().zip(&row.flux) {
                    let mut duties = [0.0; 3];
                    duties[axis.index()] = d;
                    let got = c.field_from_duty(row.voltage, &frame(duties)).unwrap();
                    assert_eq!(got[axis.index()], b);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn odd_and_monotone(v in 0.0..=27.0f64, a in 0.0..=1.0f64, b in 0.0..=1.0f64, axis in 0usize..3) {
            let c = CoilCalibration::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let mut dl = [0.0; 3];
            let mut dh = [0.0; 3];
            dl[axis] = lo;
            dh[axis] = hi;
            let fl = c.field_from_duty(v, &frame(dl)).unwrap();
            let fh = c.field_from_duty(v, &frame(dh)).unwrap();
            prop_assert!(fl[axis] <= fh[axis]);
            let neg = c.field_from_duty(v, &frame(dh.map(|x| -x))).unwrap();
            prop_assert_eq!(neg.map(|x| -x), fh);
        }
    }
}
