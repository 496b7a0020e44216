//! Bubble resonance and the phenomenological acoustic speed response.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DynamicsError;

/// Trapped-bubble cavity geometry. SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleGeometry {
    /// Adiabatic index of the gas.
    pub kappa: f64,
    /// Liquid density (kg/m³).
    pub rho: f64,
    /// Static bubble pressure (Pa).
    pub p0: f64,
    /// Cavity length (m).
    pub cavity_length: f64,
    /// Bubble length (m).
    pub bubble_length: f64,
    /// Inner cavity radius (m).
    pub cavity_radius: f64,
    /// Surface tension of the liquid-gas interface (N/m).
    pub gamma_surf: f64,
}

impl BubbleGeometry {
    /// Water at atmospheric pressure with the given cavity dimensions.
    pub fn in_water(cavity_length: f64, bubble_length: f64, cavity_radius: f64) -> Self {
        Self {
            kappa: 1.4,
            rho: 1000.0,
            p0: 101_325.0,
            cavity_length,
            bubble_length,
            cavity_radius,
            gamma_surf: 0.07,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("kappa", self.kappa),
            ("rho", self.rho),
            ("p0", self.p0),
            ("cavity_length", self.cavity_length),
            ("bubble_length", self.bubble_length),
            ("cavity_radius", self.cavity_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DynamicsError::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma_surf >= 0.0) {
            return Err(DynamicsError::Domain(format!(
                "surface tension must be >= 0, got {}",
                self.gamma_surf
            )));
        }
        if self.bubble_length >= self.cavity_length {
            return Err(DynamicsError::Domain(format!(
                "bubble length {} must be shorter than cavity length {}",
                self.bubble_length, self.cavity_length
            )));
        }
        Ok(())
    }

    /// Surface-tension correction factor.
    pub fn surface_factor(&self) -> f64 {
        (1.0 + 4.0 * self.gamma_surf * self.bubble_length
            / (self.kappa * self.p0 * self.cavity_radius * self.cavity_radius))
            .sqrt()
    }
}

/// Resonant frequency (Hz) of the trapped bubble.
pub fn resonant_frequency(g: &BubbleGeometry) -> Result<f64, DynamicsError> {
    g.validate()?;
    let stiffness = g.kappa * g.p0 / (g.rho * (g.cavity_length - g.bubble_length) * g.bubble_length);
    Ok(stiffness.sqrt() / (2.0 * PI) * g.surface_factor())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonancePeak {
    /// Hz
    pub center: f64,
    /// Half width at half maximum near the centre (Hz).
    pub width: f64,
    /// μm/s
    pub peak_speed: f64,
}

/// Propulsion speed versus drive frequency as a sum of resonance peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticResponse {
    pub peaks: Vec<ResonancePeak>,
    /// μm/s
    pub baseline: f64,
}

impl Default for AcousticResponse {
    /// Three modes of the 3 μm cup robot swept over 0-3 MHz.
    fn default() -> Self {
        Self {
            peaks: vec![
                ResonancePeak {
                    center: 1.2e6,
                    width: 60e3,
                    peak_speed: 9.0,
                },
                ResonancePeak {
                    center: 1.8e6,
                    width: 40e3,
                    peak_speed: 6.0,
                },
                ResonancePeak {
                    center: 2.0e6,
                    width: 40e3,
                    peak_speed: 7.0,
                },
            ],
            baseline: 0.0,
        }
    }
}

impl AcousticResponse {
    pub fn single(center: f64, width: f64, peak_speed: f64) -> Self {
        Self {
            peaks: vec![ResonancePeak {
                center,
                width,
                peak_speed,
            }],
            baseline: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        for p in &self.peaks {
            if !(p.width > 0.0) || !(p.peak_speed >= 0.0) || !(p.center > 0.0) {
                return Err(DynamicsError::Domain(format!("invalid resonance peak {p:?}")));
            }
        }
        if !(self.baseline >= 0.0) {
            return Err(DynamicsError::Domain(format!("negative baseline {}", self.baseline)));
        }
        Ok(())
    }
}

/// Driven-oscillator Lorentzian: exactly `peak_speed` at the centre, close
/// to a plain Lorentzian of half width `width` around it, and zero at DC.
fn resonance_kernel(f: f64, p: &ResonancePeak) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    let detune = (f * f - p.center * p.center) / (2.0 * f * p.width);
    p.peak_speed / (1.0 + detune * detune)
}

/// Propulsion speed (μm/s) at drive frequency `f_applied` (Hz).
pub fn acoustic_speed(f_applied: f64, r: &AcousticResponse) -> f64 {
    r.baseline + r.peaks.iter().map(|p| resonance_kernel(f_applied, p)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_geometry() -> BubbleGeometry {
        BubbleGeometry::in_water(10e-6, 5e-6, 2.5e-6)
    }

    #[test]
    fn reference_geometry_value() {
        // frozen from an independent direct evaluation of the closed form
        let f = resonant_frequency(&reference_geometry()).unwrap();
        assert!((f / 608_842.029_113_196_8 - 1.0).abs() < 1e-9, "{f}");
        let bare = BubbleGeometry {
            gamma_surf: 0.0,
            ..reference_geometry()
        };
        assert_eq!(bare.surface_factor(), 1.0);
        let f = resonant_frequency(&bare).unwrap();
        assert!((f / 379_116.294_896_220_73 - 1.0).abs() < 1e-9, "{f}");
    }

    #[test]
    fn wider_cavity_weakens_surface_term() {
        let g = reference_geometry();
        let wide = BubbleGeometry {
            cavity_radius: 2.0 * g.cavity_radius,
            ..g
        };
        assert!(wide.surface_factor() < g.surface_factor());
        assert!(wide.surface_factor() > 1.0);
    }

    #[test]
    fn bubble_must_fit_cavity() {
        let mut g = reference_geometry();
        g.bubble_length = g.cavity_length;
        assert!(resonant_frequency(&g).is_err());
        g.bubble_length = 0.0;
        assert!(resonant_frequency(&g).is_err());
    }

    #[test]
    fn acoustic_examples() {
        let r = AcousticResponse::default();
        assert_eq!(acoustic_speed(0.0, &r), 0.0);
        for p in &r.peaks {
            let v = acoustic_speed(p.center, &r);
            assert!(v >= 0.99 * p.peak_speed);
            for d in [5e3, 10e3, 20e3] {
                assert!(acoustic_speed(p.center - d, &r) < v);
                assert!(acoustic_speed(p.center + d, &r) < v);
            }
        }
        // dips between the modes
        assert!(acoustic_speed(1.5e6, &r) < 1.0);
        assert!(acoustic_speed(1.9e6, &r) < acoustic_speed(1.8e6, &r));
    }

    proptest! {
        #[test]
        fn bare_formula_scales_with_sqrt_pressure(
            l in 2e-6..50e-6f64,
            frac in 0.05..0.95f64,
            a in 0.5e-6..10e-6f64,
            p0 in 1e4..1e6f64,
            k in 1.5..4.0f64,
        ) {
            let g = BubbleGeometry {
                p0,
                gamma_surf: 0.0,
                ..BubbleGeometry::in_water(l, frac * l, a)
            };
            let scaled = BubbleGeometry { p0: k * p0, ..g };
            let ratio = resonant_frequency(&scaled).unwrap() / resonant_frequency(&g).unwrap();
            prop_assert!((ratio / k.sqrt() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn speeds_are_non_negative(f in 0.0..4e6f64) {
            prop_assert!(acoustic_speed(f, &AcousticResponse::default()) >= 0.0);
        }
    }
}
