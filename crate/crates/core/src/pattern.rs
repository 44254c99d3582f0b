//! The two-constituent moiré pattern, its positive-frequency part and its
//! local phase.
//!
//! A pattern is the sum of two Gaussian-enveloped fringe patterns
//!
//! ```text
//! V(z) = Σ_j exp(-(z - z_j)² / 2σ²) · sin²(κ_j (z - z_j)/2 + θ_j)
//! ```
//!
//! With equal wavenumbers the positive-frequency part is
//! `V⁺(z) = ½ e^{iκz} [e^{iφ̃₁} G₋(z) + e^{iφ̃₂} G₊(z)]` with
//! `φ̃_j = 2θ_j - κ z_j`, and `V = ½(G₋ + G₊) - Re V⁺`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::signal::{GridSpec, SampledSignal};

/// Relative tolerance under which two wavenumbers count as equal.
pub const EQUAL_KAPPA_RTOL: f64 = 1e-12;

/// Parameters of a two-constituent pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kappa1: f64,
    pub kappa2: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub z1: f64,
    pub z2: f64,
    pub sigma: f64,
}

impl ModelParams {
    /// Equal-wavenumber pattern centred on zero with `Δz = Δφ/κ`.
    pub fn symmetric(kappa: f64, sigma: f64, delta_phi: f64, theta: f64) -> Self {
        let dz = delta_phi / kappa;
        Self {
            kappa1: kappa,
            kappa2: kappa,
            theta1: theta,
            theta2: theta,
            z1: -dz / 2.0,
            z2: dz / 2.0,
            sigma,
        }
    }

    /// Like [`ModelParams::symmetric`] but with the width set by the number of
    /// fringe periods, `σ = π N_p / 2κ`.
    pub fn from_periods(kappa: f64, n_periods: f64, delta_phi: f64) -> Self {
        Self::symmetric(kappa, PI * n_periods / (2.0 * kappa), delta_phi, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.kappa1,
            self.kappa2,
            self.theta1,
            self.theta2,
            self.z1,
            self.z2,
            self.sigma,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return param("model parameters must be finite");
        }
        if !(self.sigma > 0.0) {
            return param(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.kappa1 > 0.0 && self.kappa2 > 0.0) {
            return param("wavenumbers must be positive");
        }
        Ok(())
    }

    pub fn delta_z(&self) -> f64 {
        self.z2 - self.z1
    }

    pub fn z_mid(&self) -> f64 {
        0.5 * (self.z1 + self.z2)
    }

    pub fn kappa_mean(&self) -> f64 {
        0.5 * (self.kappa1 + self.kappa2)
    }

    pub fn kappa_max(&self) -> f64 {
        self.kappa1.max(self.kappa2)
    }

    /// `Δφ = κ̄ Δz`.
    pub fn delta_phi(&self) -> f64 {
        self.kappa_mean() * self.delta_z()
    }

    /// Number of fringe periods `N_p = (2/π) κ̄ σ`.
    pub fn n_periods(&self) -> f64 {
        2.0 / PI * self.kappa_mean() * self.sigma
    }

    pub fn has_equal_kappa(&self) -> bool {
        (self.kappa1 - self.kappa2).abs() <= EQUAL_KAPPA_RTOL * self.kappa_max()
    }

    /// The common wavenumber, or an error when κ₁ ≠ κ₂.
    pub fn common_kappa(&self) -> Result<f64> {
        if self.has_equal_kappa() {
            Ok(self.kappa_mean())
        } else {
            Err(Error::UnsupportedForm(format!(
                "closed forms need kappa1 == kappa2 (got {} and {})",
                self.kappa1, self.kappa2
            )))
        }
    }

    /// Constituent phases `φ̃_j = 2θ_j - κ z_j` for a common κ.
    pub fn constituent_phases(&self) -> Result<(f64, f64)> {
        let k = self.common_kappa()?;
        Ok((
            2.0 * self.theta1 - k * self.z1,
            2.0 * self.theta2 - k * self.z2,
        ))
    }

    /// Default sampling grid: 4096 points over ±(|Δz|/2 + 6σ) around z̄.
    pub fn default_grid(&self) -> GridSpec {
        let half = 0.5 * self.delta_z().abs() + 6.0 * self.sigma;
        GridSpec::centered(self.z_mid(), half, 4096).expect("positive half width")
    }
}

fn gauss(x: f64, sigma: f64) -> f64 {
    (-x * x / (2.0 * sigma * sigma)).exp()
}

fn check_grid(params: &ModelParams, grid: &GridSpec) -> Result<()> {
    params.validate()?;
    let limit = PI / (4.0 * params.kappa_max());
    if grid.step > limit {
        return Err(Error::Sampling(format!(
            "dz = {} exceeds pi/(4 kappa) = {limit}",
            grid.step
        )));
    }
    let lo = params.z1.min(params.z2) - 4.0 * params.sigma;
    let hi = params.z1.max(params.z2) + 4.0 * params.sigma;
    let slack = 1e-9 * grid.step;
    if grid.start > lo + slack || grid.end() < hi - slack {
        return Err(Error::Sampling(format!(
            "grid [{}, {}] does not cover [{lo}, {hi}]",
            grid.start,
            grid.end()
        )));
    }
    Ok(())
}

/// Evaluates the pattern at a single point.
pub fn pattern_value(p: &ModelParams, z: f64) -> f64 {
    let s1 = (0.5 * p.kappa1 * (z - p.z1) + p.theta1).sin();
    let s2 = (0.5 * p.kappa2 * (z - p.z2) + p.theta2).sin();
    gauss(z - p.z1, p.sigma) * s1 * s1 + gauss(z - p.z2, p.sigma) * s2 * s2
}

/// Samples the pattern on `grid`.
///
/// The grid must resolve the fringes (`dz ≤ π/4κ`) and extend at least 4σ
/// beyond both centres.
pub fn generate_pattern(params: &ModelParams, grid: &GridSpec) -> Result<SampledSignal> {
    check_grid(params, grid)?;
    Ok(SampledSignal::from_fn(grid, |z| pattern_value(params, z)))
}

/// The smooth (DC) part `½(G₋ + G₊)` at `z`.
pub fn dc_envelope(p: &ModelParams, z: f64) -> f64 {
    0.5 * (gauss(z - p.z1, p.sigma) + gauss(z - p.z2, p.sigma))
}

/// Positive-frequency part `V⁺` on `grid`. Needs κ₁ = κ₂.
pub fn positive_frequency_part(params: &ModelParams, grid: &GridSpec) -> Result<Vec<Complex64>> {
    params.validate()?;
    let k = params.common_kappa()?;
    let (p1, p2) = params.constituent_phases()?;
    Ok(grid
        .points()
        .map(|z| {
            let c = Complex64::from_polar(gauss(z - params.z1, params.sigma), p1)
                + Complex64::from_polar(gauss(z - params.z2, params.sigma), p2);
            0.5 * Complex64::from_polar(1.0, k * z) * c
        })
        .collect())
}

/// Unwrapped local phase and its gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseProfile {
    pub z0: f64,
    pub dz: f64,
    pub phase: Vec<f64>,
    pub gradient: Vec<f64>,
    /// `false` where the fringe amplitude vanishes and the phase is undefined.
    pub valid: Vec<bool>,
    /// Set when `Δφ` sits on an odd multiple of π.
    pub singular: bool,
}

/// Removes ±2π jumps scanning left to right, skipping masked samples.
pub fn unwrap_phase(phase: &mut [f64], valid: &[bool]) {
    let mut prev: Option<f64> = None;
    let mut offset = 0.0;
    for (p, ok) in phase.iter_mut().zip(valid) {
        if !*ok {
            continue;
        }
        let mut v = *p + offset;
        if let Some(q) = prev {
            while v - q > PI {
                v -= 2.0 * PI;
                offset -= 2.0 * PI;
            }
            while v - q < -PI {
                v += 2.0 * PI;
                offset += 2.0 * PI;
            }
        }
        *p = v;
        prev = Some(v);
    }
}

/// Local phase `arg V⁺(z)` and the closed-form gradient
/// `κ - (Δz/2σ²) sin Δφ / (cosh((z - z̄)Δz/σ²) + cos Δφ)` with
/// `Δφ = φ̃₁ - φ̃₂`.
pub fn local_phase(params: &ModelParams, grid: &GridSpec) -> Result<PhaseProfile> {
    let vp = positive_frequency_part(params, grid)?;
    let k = params.kappa_mean();
    let (p1, p2) = params.constituent_phases()?;
    let dphi = p1 - p2;
    let dz = params.delta_z();
    let zbar = params.z_mid();
    let s2 = params.sigma * params.sigma;
    let peak = vp.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let odd = (dphi / PI - 1.0) / 2.0;
    let singular = (odd - odd.round()).abs() * 2.0 * PI < 1e-12 && dz != 0.0;

    let mut phase = Vec::with_capacity(grid.len);
    let mut gradient = Vec::with_capacity(grid.len);
    let mut valid = Vec::with_capacity(grid.len);
    for (i, z) in grid.points().enumerate() {
        let amp = vp[i].norm();
        let denom = ((z - zbar) * dz / s2).cosh() + dphi.cos();
        let ok = amp > 1e-13 * peak && denom.abs() > 1e-14;
        valid.push(ok);
        phase.push(if ok { vp[i].arg() } else { f64::NAN });
        gradient.push(if ok {
            k - dz / (2.0 * s2) * dphi.sin() / denom
        } else {
            f64::NAN
        });
    }
    unwrap_phase(&mut phase, &valid);
    Ok(PhaseProfile {
        z0: grid.start,
        dz: grid.step,
        phase,
        gradient,
        valid,
        singular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent evaluation through the product-to-sum form
    // sin²x = (1 - cos 2x)/2.
    fn oracle(p: &ModelParams, z: f64) -> f64 {
        let g1 = (-(z - p.z1).powi(2) / (2.0 * p.sigma.powi(2))).exp();
        let g2 = (-(z - p.z2).powi(2) / (2.0 * p.sigma.powi(2))).exp();
        0.5 * g1 * (1.0 - (p.kappa1 * (z - p.z1) + 2.0 * p.theta1).cos())
            + 0.5 * g2 * (1.0 - (p.kappa2 * (z - p.z2) + 2.0 * p.theta2).cos())
    }

    #[test]
    fn matches_product_to_sum_oracle() {
        let p = ModelParams {
            kappa1: 1.3,
            kappa2: 1.25,
            theta1: 0.3,
            theta2: -0.7,
            z1: -0.8,
            z2: 1.1,
            sigma: 6.0,
        };
        let s = generate_pattern(&p, &p.default_grid()).unwrap();
        for (i, v) in s.values.iter().enumerate() {
            assert!((v - oracle(&p, s.z(i))).abs() < 1e-13);
        }
    }

    #[test]
    fn errors_on_bad_input() {
        let mut p = ModelParams::symmetric(1.0, 5.0, 1.0, 0.0);
        let g = p.default_grid();
        p.sigma = 0.0;
        assert!(matches!(generate_pattern(&p, &g), Err(Error::Parameter(_))));
        let p = ModelParams::symmetric(1.0, 5.0, 1.0, 0.0);
        let coarse = GridSpec::centered(0.0, 40.0, 64).unwrap();
        assert!(matches!(
            generate_pattern(&p, &coarse),
            Err(Error::Sampling(_))
        ));
        let narrow = GridSpec::centered(0.0, 10.0, 4096).unwrap();
        assert!(matches!(
            generate_pattern(&p, &narrow),
            Err(Error::Sampling(_))
        ));
        let mut q = p;
        q.kappa2 = 1.1;
        assert!(matches!(
            positive_frequency_part(&q, &g),
            Err(Error::UnsupportedForm(_))
        ));
    }

    #[test]
    fn zero_separation_gives_twice_single_pattern() {
        let p = ModelParams::symmetric(2.0, 3.0, 0.0, 0.4);
        let g = p.default_grid();
        let s = generate_pattern(&p, &g).unwrap();
        for (i, v) in s.values.iter().enumerate() {
            let z = s.z(i);
            let single = gauss(z, 3.0) * (z + 0.4).sin().powi(2);
            assert!((v - 2.0 * single).abs() < 1e-14);
        }
    }

    #[test]
    fn dc_minus_real_part_reconstructs_pattern() {
        let p = ModelParams::symmetric(1.7, 4.2, 2.1, 0.25);
        let g = p.default_grid();
        let s = generate_pattern(&p, &g).unwrap();
        let vp = positive_frequency_part(&p, &g).unwrap();
        for (i, z) in g.points().enumerate() {
            let rec = dc_envelope(&p, z) - vp[i].re;
            assert!((rec - s.values[i]).abs() < 1e-12);
            assert!(vp[i].norm() <= dc_envelope(&p, z) + 1e-12);
        }
    }

    #[test]
    fn gradient_matches_centered_difference() {
        for &dphi in &[0.5, 2.0, 2.5, 4.4, 8.0, 12.0] {
            let p = ModelParams::from_periods(1.0, 5.61, dphi);
            let g = GridSpec::new(-4.0 * p.sigma, p.sigma / 200.0, 1601).unwrap();
            let prof = local_phase(&p, &g).unwrap();
            for i in 1..g.len - 1 {
                let fd = (prof.phase[i + 1] - prof.phase[i - 1]) / (2.0 * g.step);
                assert!(
                    (fd - prof.gradient[i]).abs() < 1e-6,
                    "dphi {dphi} i {i}: fd {fd} analytic {}",
                    prof.gradient[i]
                );
            }
        }
    }

    #[test]
    fn closed_form_phase_agrees_with_argument() {
        let p = ModelParams::from_periods(1.0, 5.61, 2.0);
        let g = p.default_grid();
        let prof = local_phase(&p, &g).unwrap();
        let (p1, _) = p.constituent_phases().unwrap();
        let dphi = p.delta_phi();
        let zbar = p.z_mid();
        let s2 = p.sigma * p.sigma;
        let mut offset = None;
        for (i, z) in g.points().enumerate() {
            let cf = z + p1 - (dphi.sin() / ((-(z - zbar) * dphi / s2).exp() + dphi.cos())).atan();
            // The single-valued atan differs from atan2 by whole multiples of π.
            let d = prof.phase[i] - cf;
            let o = *offset.get_or_insert(d);
            let r = (d - o) / PI;
            assert!((r - r.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_point_is_masked() {
        let p = ModelParams::from_periods(1.0, 5.61, 3.0 * PI);
        let g = GridSpec::new(-2048.0 * 0.05, 0.05, 4097).unwrap();
        let prof = local_phase(&p, &g).unwrap();
        assert!(prof.singular);
        assert!(!prof.valid[2048]);
        for (i, ok) in prof.valid.iter().enumerate() {
            let x = (i as f64 - 2048.0) * g.step;
            if x.abs() < 5.0 * p.sigma && i != 2048 {
                assert!(ok, "masked at z = {x}");
            }
        }
    }

    proptest! {
        #[test]
        fn values_stay_in_zero_two(
            k1 in 0.5f64..3.0, k2 in 0.5f64..3.0,
            t1 in -3.0f64..3.0, t2 in -3.0f64..3.0,
            z1 in -5.0f64..5.0, z2 in -5.0f64..5.0,
            sigma in 1.0f64..8.0,
        ) {
            let p = ModelParams { kappa1: k1, kappa2: k2, theta1: t1, theta2: t2, z1, z2, sigma };
            let s = generate_pattern(&p, &p.default_grid()).unwrap();
            for v in &s.values {
                prop_assert!(*v >= 0.0 && *v <= 2.0);
            }
        }

        #[test]
        fn phase_is_continuous(dphi in 0.0f64..12.0, np in 3.0f64..10.0) {
            let odd = (dphi / PI - 1.0) / 2.0;
            prop_assume!((odd - odd.round()).abs() > 1e-3);
            let p = ModelParams::from_periods(1.0, np, dphi);
            let g = p.default_grid();
            let prof = local_phase(&p, &g).unwrap();
            for i in 1..g.len {
                prop_assert!((prof.phase[i] - prof.phase[i - 1]).abs() < PI);
            }
        }
    }
}
