//! Magnetic field of a three-wire atom chip plus a uniform bias.
//!
//! The centre wire sits under the atoms and the two side wires at `±pitch`
//! carry the return current. All wire fields are horizontal on the symmetry
//! axis, parallel to the bias, so `|B|` is a scalar function of the distance
//! `z` from the chip.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::units::{gauss_per_m, G_F, MU0_OVER_2PI, MU_B_OVER_HBAR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldModel {
    /// Uniform bias field in G.
    pub bias: f64,
    /// Bias gradient along z in G/m.
    pub bias_gradient: f64,
    /// Chip current during the gradient pulses in A.
    pub current: f64,
    /// Centre-to-side wire spacing in μm.
    pub wire_pitch: f64,
    /// Reference height of the bias gradient (the trap position) in μm.
    pub z_ref: f64,
}

impl Default for FieldModel {
    fn default() -> Self {
        Self {
            bias: 35.0,
            bias_gradient: 90.0,
            current: 1.122,
            wire_pitch: 100.0,
            z_ref: 89.5,
        }
    }
}

/// `|B|` and its first two derivatives at one point (G, G/μm, G/μm²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub b: f64,
    pub db: f64,
    pub d2b: f64,
}

/// Which sources are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Drive {
    /// Bias only.
    Bias,
    /// Bias plus chip current with the given polarity (+1 pushes away from
    /// the chip, -1 pulls towards it).
    Pulse(i8),
    /// Everything off.
    Off,
}

impl FieldModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.wire_pitch > 0.0) {
            return param(format!(
                "wire pitch must be positive, got {}",
                self.wire_pitch
            ));
        }
        if !self.bias.is_finite() || !self.bias_gradient.is_finite() || !self.current.is_finite() {
            return param("field parameters must be finite");
        }
        Ok(())
    }

    /// Signed wire field and derivatives at height `z > 0`.
    pub fn wire(&self, z: f64) -> FieldSample {
        let c = MU0_OVER_2PI * self.current;
        let p2 = self.wire_pitch * self.wire_pitch;
        let r2 = p2 + z * z;
        // C/z - 2Cz/(p²+z²)
        let b = c / z - 2.0 * c * z / r2;
        let db = -c / (z * z) - 2.0 * c * (p2 - z * z) / (r2 * r2);
        let d2b = 2.0 * c / (z * z * z) - 4.0 * c * z * (z * z - 3.0 * p2) / (r2 * r2 * r2);
        FieldSample { b, db, d2b }
    }

    /// `|B|` and derivatives under the given drive.
    pub fn sample(&self, z: f64, drive: Drive) -> FieldSample {
        let (mut b, mut db, mut d2b) = match drive {
            Drive::Off => {
                return FieldSample {
                    b: 0.0,
                    db: 0.0,
                    d2b: 0.0,
                }
            }
            _ => {
                let g = gauss_per_m(self.bias_gradient);
                (self.bias + g * (z - self.z_ref), g, 0.0)
            }
        };
        if let Drive::Pulse(pol) = drive {
            let w = self.wire(z);
            let s = f64::from(pol.signum());
            b += s * w.b;
            db += s * w.db;
            d2b += s * w.d2b;
        }
        if b < 0.0 {
            FieldSample {
                b: -b,
                db: -db,
                d2b: -d2b,
            }
        } else {
            FieldSample { b, db, d2b }
        }
    }

    /// Zeeman potential `m_F g_F μ_B |B| / ħ` and derivatives in rad/μs per
    /// μm power.
    pub fn zeeman(&self, m_f: u8, z: f64, drive: Drive) -> [f64; 3] {
        let s = self.sample(z, drive);
        let k = f64::from(m_f) * G_F * MU_B_OVER_HBAR;
        [k * s.b, k * s.db, k * s.d2b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let f = FieldModel::default();
        for &z in &[60.0, 89.5, 120.0, 300.0] {
            for drive in [Drive::Pulse(1), Drive::Pulse(-1), Drive::Bias] {
                let h = 1e-3;
                let s = f.sample(z, drive);
                let p = f.sample(z + h, drive);
                let m = f.sample(z - h, drive);
                assert!(
                    ((p.b - m.b) / (2.0 * h) - s.db).abs() < 1e-8,
                    "{z} {drive:?}"
                );
                assert!(
                    ((p.db - m.db) / (2.0 * h) - s.d2b).abs() < 1e-8,
                    "{z} {drive:?}"
                );
            }
        }
    }

    #[test]
    fn single_wire_limit() {
        // Far side wires leave the 1/z field of the centre wire.
        let f = FieldModel {
            wire_pitch: 1e9,
            ..Default::default()
        };
        let w = f.wire(100.0);
        assert!((w.b - 2000.0 * 1.122 / 100.0).abs() < 1e-9);
    }

    #[test]
    fn polarity_sets_force_direction() {
        let f = FieldModel::default();
        let push = f.zeeman(2, 89.5, Drive::Pulse(1));
        let pull = f.zeeman(2, 89.5, Drive::Pulse(-1));
        assert!(push[1] < 0.0, "force -U' must point away from the chip");
        assert!(pull[1] > 0.0);
        assert_eq!(f.zeeman(1, 89.5, Drive::Off), [0.0; 3]);
    }
}
