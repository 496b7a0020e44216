//! Torque and gradient force on a magnetic dipole.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Dipole moment (A·m²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagneticMoment(pub Vector3<f64>);

impl MagneticMoment {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Torque (N·m) on moment `m` in flux density `b` (T).
pub fn magnetic_torque(m: &MagneticMoment, b: &Vector3<f64>) -> Vector3<f64> {
    m.0.cross(b)
}

/// Force (N) on moment `m` given the field Jacobian `grad_b`, where
/// `grad_b[(i, j)]` is dB_i/dx_j in T/m.
pub fn magnetic_force(m: &MagneticMoment, grad_b: &Matrix3<f64>) -> Vector3<f64> {
    grad_b * m.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn torque_examples() {
        let m = MagneticMoment::new(2.0, 0.0, 0.0);
        assert_eq!(magnetic_torque(&m, &Vector3::new(5.0, 0.0, 0.0)), Vector3::zeros());
        let m = MagneticMoment::new(1.0, 0.0, 0.0);
        assert_eq!(
            magnetic_torque(&m, &Vector3::new(0.0, 1.0, 0.0)),
            Vector3::new(0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn force_examples() {
        let m = MagneticMoment::new(1.0, 0.0, 0.0);
        assert_eq!(magnetic_force(&m, &Matrix3::zeros()), Vector3::zeros());
        assert_eq!(magnetic_force(&m, &Matrix3::identity()), Vector3::new(1.0, 0.0, 0.0));
    }

    fn vec3() -> impl Strategy<Value = [f64; 3]> {
        [-1e-3..1e-3f64, -1e-3..1e-3f64, -1e-3..1e-3f64]
    }

    proptest! {
        #[test]
        fn torque_matches_component_formula(m in vec3(), b in vec3()) {
            let t = magnetic_torque(&MagneticMoment::new(m[0], m[1], m[2]), &Vector3::from(b));
            let oracle = [
                m[1] * b[2] - m[2] * b[1],
                m[2] * b[0] - m[0] * b[2],
                m[0] * b[1] - m[1] * b[0],
            ];
            for i in 0..3 {
                prop_assert!((t[i] - oracle[i]).abs() <= 1e-15);
            }
            let swapped = magnetic_torque(&MagneticMoment(Vector3::from(b)), &Vector3::from(m));
            prop_assert_eq!(swapped, -t);
        }

        #[test]
        fn force_matches_summation(m in vec3(), g in prop::array::uniform9(-10.0..10.0f64)) {
            let grad = Matrix3::from_row_slice(&g);
            let f = magnetic_force(&MagneticMoment::new(m[0], m[1], m[2]), &grad);
            for i in 0..3 {
                let mut sum = 0.0;
                for j in 0..3 {
                    sum += m[j] * g[i * 3 + j];
                }
                prop_assert!((f[i] - sum).abs() <= 1e-15);
            }
        }
    }
}
