//! Physical constants in the crate's unit system.
//!
//! Lengths are in μm, wavenumbers in rad/μm, times in μs, magnetic fields in
//! gauss and potentials (divided by ħ) in rad/μs.

use std::f64::consts::PI;

/// ħ/m for ⁸⁷Rb in μm²/μs (CODATA 2018 ħ, AME2020 atomic mass).
pub const HBAR_OVER_M_RB87: f64 = 7.307_375_214e-4;

/// Standard gravity in μm/μs².
pub const GRAVITY: f64 = 9.806_65e-6;

/// Bohr magneton over ħ in rad/(μs·G).
pub const MU_B_OVER_HBAR: f64 = 8.794_100_047;

/// μ0/2π in G·μm/A.
pub const MU0_OVER_2PI: f64 = 2000.0;

/// Landé factor of the F=2 ground-state manifold of ⁸⁷Rb.
pub const G_F: f64 = 0.5;

/// Converts a gradient in G/m to G/μm.
pub fn gauss_per_m(g: f64) -> f64 {
    g * 1e-6
}

/// Converts a frequency in Hz to an angular frequency in rad/μs.
pub fn hz_to_rad_per_us(f: f64) -> f64 {
    2.0 * PI * f * 1e-6
}

/// Wraps an angle into (-π, π].
pub fn wrap_pi(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Reduces an angle into [0, period).
pub fn reduce(x: f64, period: f64) -> f64 {
    let y = x.rem_euclid(period);
    if y >= period {
        0.0
    } else {
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hbar_over_m_from_si() {
        let hbar = 1.054_571_817e-34;
        let m = 86.909_180_531 * 1.660_539_068_92e-27;
        let v = hbar / m * 1e12 / 1e6;
        assert!((v - HBAR_OVER_M_RB87).abs() / v < 1e-9);
    }

    #[test]
    fn wrap_is_in_range() {
        for i in -50..50 {
            let x = i as f64 * 0.77;
            let w = wrap_pi(x);
            assert!(w > -PI && w <= PI);
            assert!(
                ((x - w) / (2.0 * PI)).fract().abs() < 1e-9
                    || ((x - w) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9
            );
        }
    }
}
