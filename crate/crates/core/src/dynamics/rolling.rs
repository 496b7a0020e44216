//! Speed of a field-driven rolling sphere versus rotation frequency.
//!
//! Below step-out the sphere stays locked to the field and its speed rises
//! with frequency; above step-out it slips and the speed decays as a power
//! law from the step-out value.

use serde::{Deserialize, Serialize};

use super::DynamicsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingParams {
    /// Sphere radius (μm).
    pub radius: f64,
    /// Synchronous slope (μm/s per Hz); with anchors, the step-out speed
    /// divided by the step-out frequency.
    pub k_roll: f64,
    /// Step-out frequency (Hz) at the supply voltage these params describe.
    pub f_stepout: f64,
    /// Power-law falloff above step-out.
    pub decay_exponent: f64,
    /// Measured (Hz, μm/s) points of the synchronous branch, increasing in
    /// frequency and ending at step-out. Empty means the linear law `k_roll * f`.
    #[serde(default)]
    pub anchors: Vec<(f64, f64)>,
}

impl RollingParams {
    pub fn linear(radius: f64, k_roll: f64, f_stepout: f64) -> Self {
        Self {
            radius,
            k_roll,
            f_stepout,
            decay_exponent: 1.0,
            anchors: Vec::new(),
        }
    }

    /// 20 μm nickel-coated sphere at a 12 V supply: 63.2 μm/s at 10 Hz,
    /// 160 μm/s peak at the 40 Hz step-out.
    pub fn sphere_12v() -> Self {
        Self {
            radius: 10.0,
            k_roll: 160.0 / 40.0,
            f_stepout: 40.0,
            decay_exponent: 1.0,
            anchors: vec![(10.0, 63.2), (40.0, 160.0)],
        }
    }

    /// Same sphere at 24 V: indistinguishable from 12 V up to 40 Hz, step-out
    /// near 70 Hz at 270 μm/s.
    pub fn sphere_24v() -> Self {
        Self {
            radius: 10.0,
            k_roll: 270.0 / 70.0,
            f_stepout: 70.0,
            decay_exponent: 1.0,
            anchors: vec![(10.0, 63.2), (40.0, 160.0), (70.0, 270.0)],
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: String| Err(DynamicsError::Domain(m));
        if !(self.radius > 0.0) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        if !(self.k_roll > 0.0) {
            return bad(format!("k_roll must be positive, got {}", self.k_roll));
        }
        if !(self.f_stepout > 0.0) {
            return bad(format!("f_stepout must be positive, got {}", self.f_stepout));
        }
        if !(self.decay_exponent >= 0.0) {
            return bad(format!("decay exponent must be >= 0, got {}", self.decay_exponent));
        }
        if let Some(&(f_last, v_last)) = self.anchors.last() {
            let mut prev = (0.0, 0.0);
            for &(f, v) in &self.anchors {
                if !(f > prev.0) || !(v >= prev.1) {
                    return bad(format!("anchors must increase, got {:?}", self.anchors));
                }
                prev = (f, v);
            }
            if f_last != self.f_stepout {
                return bad(format!(
                    "last anchor {f_last} Hz must sit at step-out {} Hz",
                    self.f_stepout
                ));
            }
            if (v_last / f_last - self.k_roll).abs() > 1e-9 * self.k_roll {
                return bad(format!(
                    "k_roll {} disagrees with step-out anchor {v_last}/{f_last}",
                    self.k_roll
                ));
            }
        }
        Ok(())
    }

    fn synchronous(&self, f: f64) -> f64 {
        if self.anchors.is_empty() {
            return self.k_roll * f;
        }
        let mut prev = (0.0, 0.0);
        for &(fa, va) in &self.anchors {
            if f == fa {
                return va;
            }
            if f < fa {
                return prev.1 + (va - prev.1) * (f - prev.0) / (fa - prev.0);
            }
            prev = (fa, va);
        }
        prev.1
    }
}

/// Translational speed (μm/s) at rotation frequency `f` (Hz).
pub fn rolling_speed(f: f64, p: &RollingParams) -> f64 {
    if !(f > 0.0) {
        return 0.0;
    }
    if f <= p.f_stepout {
        p.synchronous(f)
    } else {
        p.synchronous(p.f_stepout) * (p.f_stepout / f).powf(p.decay_exponent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn presets_are_valid() {
        RollingParams::sphere_12v().validate().unwrap();
        RollingParams::sphere_24v().validate().unwrap();
    }

    #[test]
    fn characterisation_anchors() {
        let p12 = RollingParams::sphere_12v();
        let p24 = RollingParams::sphere_24v();
        // peak speed over step-out frequency gives the slope
        assert_eq!(rolling_speed(40.0, &p12), p12.k_roll * 40.0);
        assert_eq!(rolling_speed(40.0, &p12), 160.0);
        assert_eq!(rolling_speed(70.0, &p24), 270.0);
        assert_eq!(rolling_speed(10.0, &p12), 63.2);
        assert_eq!(rolling_speed(0.0, &p12), 0.0);
        assert!(rolling_speed(50.0, &p12) < 160.0);
        assert!(rolling_speed(80.0, &p24) < 270.0);
        // same sphere below 40 Hz at either voltage
        for f in [1.0, 5.0, 10.0, 25.0, 40.0] {
            assert_eq!(rolling_speed(f, &p12), rolling_speed(f, &p24));
        }
    }

    #[test]
    fn linear_law() {
        let p = RollingParams::linear(10.0, 4.0, 40.0);
        assert_eq!(rolling_speed(10.0, &p), 40.0);
        assert_eq!(rolling_speed(80.0, &p), 80.0);
    }

    #[test]
    fn invalid_params() {
        let mut p = RollingParams::sphere_12v();
        p.anchors = vec![(10.0, 63.2), (30.0, 160.0)];
        assert!(p.validate().is_err());
        let mut p = RollingParams::sphere_12v();
        p.k_roll = 5.0;
        assert!(p.validate().is_err());
        assert!(RollingParams::linear(10.0, 0.0, 40.0).validate().is_err());
        assert!(RollingParams::linear(10.0, 1.0, -1.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn continuous_at_stepout(k in 0.1..20.0f64, fs in 1.0..200.0f64, e in 0.0..4.0f64) {
            let mut p = RollingParams::linear(10.0, k, fs);
            p.decay_exponent = e;
            let below = rolling_speed(fs, &p);
            let above = rolling_speed(fs * (1.0 + 1e-12), &p);
            prop_assert!((below - above).abs() <= 1e-9 * below.max(1.0));
        }

        #[test]
        fn decays_after_stepout(f1 in 40.0..250.0f64, f2 in 40.0..250.0f64) {
            let p = RollingParams::sphere_12v();
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            prop_assert!(rolling_speed(hi, &p) <= rolling_speed(lo, &p));
        }
    }
}
