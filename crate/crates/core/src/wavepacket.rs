//! Gaussian wavepackets under piecewise-quadratic potentials.
//!
//! A packet is `w (2πσ²)^(-1/4) exp[-(z-q)²/4σ² + ½iα(z-q)² + ik(z-q) + iφ]`.
//! Writing `a = α/2 + i/4σ²`, a quadratic potential maps `a` through a
//! Möbius transform built from the classical `C`, `S` solutions of the
//! harmonic (or inverted) oscillator, which makes each step exact for the
//! given quadratic. Potentials are divided by ħ (rad/μs) and momenta are
//! wavenumbers.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::pattern::ModelParams;
use crate::units::{reduce, wrap_pi};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianWavepacket {
    /// Centre `q` in μm.
    pub center: f64,
    /// Mean wavenumber `k` in rad/μm.
    pub momentum: f64,
    /// Density standard deviation `σ` in μm.
    pub width: f64,
    /// Quadratic phase coefficient `α` in rad/μm².
    pub quad_phase: f64,
    /// Global phase `φ` in rad.
    pub global_phase: f64,
    /// Spin label, 1 or 2 (equal to `m_F`).
    pub spin: u8,
    /// Amplitude weight.
    pub weight: f64,
}

impl GaussianWavepacket {
    pub fn new(center: f64, momentum: f64, width: f64, spin: u8) -> Result<Self> {
        let wp = Self {
            center,
            momentum,
            width,
            quad_phase: 0.0,
            global_phase: 0.0,
            spin,
            weight: 1.0,
        };
        wp.validate()?;
        Ok(wp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !self.width.is_finite() {
            return param(format!(
                "wavepacket width must be positive, got {}",
                self.width
            ));
        }
        if self.spin != 1 && self.spin != 2 {
            return param(format!("spin label must be 1 or 2, got {}", self.spin));
        }
        if !(self.weight >= 0.0) {
            return param(format!("weight must be non-negative, got {}", self.weight));
        }
        if !(self.center.is_finite() && self.momentum.is_finite() && self.quad_phase.is_finite()) {
            return param("wavepacket parameters must be finite");
        }
        Ok(())
    }

    /// `a = α/2 + i/4σ²`.
    pub fn a(&self) -> Complex64 {
        Complex64::new(0.5 * self.quad_phase, 0.25 / (self.width * self.width))
    }

    fn with_a(mut self, a: Complex64) -> Self {
        self.quad_phase = 2.0 * a.re;
        self.width = 0.5 / a.im.sqrt();
        self
    }

    /// `ψ(z)` including the weight.
    pub fn amplitude(&self, z: f64) -> Complex64 {
        let x = z - self.center;
        let norm = self.weight * (2.0 * PI * self.width * self.width).powf(-0.25);
        let e = Complex64::new(
            -x * x / (4.0 * self.width * self.width),
            0.5 * self.quad_phase * x * x + self.momentum * x + self.global_phase,
        );
        norm * e.exp()
    }

    pub fn density(&self, z: f64) -> f64 {
        self.amplitude(z).norm_sqr()
    }

    /// Focusing data of free evolution through the current state: the
    /// minimal width `σ_m` and the time elapsed since the focus (negative
    /// before it).
    pub fn free_focus(&self, hbar_over_m: f64) -> (f64, f64) {
        // 1/a evolves as 1/a + 2λt in free space; the focus is where it is
        // purely imaginary.
        let b = self.a().inv();
        let elapsed = b.re / (2.0 * hbar_over_m);
        ((-0.25 * b.im).sqrt(), elapsed)
    }
}

/// `U(z) = v0 + v1 (z - z_ref) + ½ v2 (z - z_ref)²` in rad/μs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalQuadratic {
    pub z_ref: f64,
    pub v0: f64,
    pub v1: f64,
    pub v2: f64,
    /// Length over which the true potential departs from the quadratic; a
    /// single step may move the packet by at most a tenth of it.
    pub scale_length: f64,
}

impl LocalQuadratic {
    /// Uniform force field, exact for any displacement.
    pub fn linear(v1: f64) -> Self {
        Self {
            z_ref: 0.0,
            v0: 0.0,
            v1,
            v2: 0.0,
            scale_length: f64::INFINITY,
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        let x = z - self.z_ref;
        self.v0 + x * (self.v1 + 0.5 * self.v2 * x)
    }
}

/// `C`, `S`, `D = ∫S` of `ẍ = -ω²x` at time `t`, with `w = ω²t²` allowed to
/// be negative.
fn csd(w: f64, t: f64) -> (f64, f64, f64) {
    let (mut c, mut s, mut d) = (1.0, 1.0, 0.5);
    let (mut tc, mut ts, mut td) = (1.0, 1.0, 0.5);
    for n in 1..40 {
        let n = n as f64;
        tc *= -w / ((2.0 * n - 1.0) * (2.0 * n));
        ts *= -w / ((2.0 * n) * (2.0 * n + 1.0));
        td *= -w / ((2.0 * n + 1.0) * (2.0 * n + 2.0));
        c += tc;
        s += ts;
        d += td;
        if tc.abs() < 1e-18 && ts.abs() < 1e-18 && td.abs() < 1e-18 {
            break;
        }
    }
    (c, s * t, d * t * t)
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// One exact step with `|ω| h ≤ ½`.
fn quadratic_step(
    wp: &GaussianWavepacket,
    h: f64,
    pot: &LocalQuadratic,
    lambda: f64,
) -> GaussianWavepacket {
    let om2 = lambda * pot.v2;
    let x0 = wp.center - pot.z_ref;
    let p0 = wp.momentum;
    let traj = |t: f64| {
        let (c, s, d) = csd(om2 * t * t, t);
        let x = x0 * c + lambda * p0 * s - lambda * pot.v1 * d;
        let p = p0 * c - (pot.v1 + pot.v2 * x0) * s;
        (x, p, c, s)
    };
    let (x, p, c, s) = traj(h);
    let a = wp.a();
    let q = c + 2.0 * lambda * a * s;
    let a_new = (a * c - 0.5 * pot.v2 * s) / q;
    let action: f64 = GL8
        .iter()
        .map(|&(node, weight)| {
            let t = 0.5 * h * (node + 1.0);
            let (xt, pt, _, _) = traj(t);
            weight * (0.5 * lambda * pt * pt - pot.eval(xt + pot.z_ref))
        })
        .sum::<f64>()
        * 0.5
        * h;
    GaussianWavepacket {
        center: x + pot.z_ref,
        momentum: p,
        global_phase: wp.global_phase + action - 0.5 * q.arg(),
        ..*wp
    }
    .with_a(a_new)
}

/// Evolves a packet for `dt` μs in the quadratic potential `pot`.
pub fn evolve_quadratic(
    wp: &GaussianWavepacket,
    dt: f64,
    pot: &LocalQuadratic,
    hbar_over_m: f64,
) -> Result<GaussianWavepacket> {
    if !(dt >= 0.0) {
        return param(format!("time step must be non-negative, got {dt}"));
    }
    if dt == 0.0 {
        return Ok(*wp);
    }
    let omega = (hbar_over_m * pot.v2).abs().sqrt();
    let n = ((omega * dt / 0.5).ceil() as usize).max(1);
    let h = dt / n as f64;
    let mut out = *wp;
    for _ in 0..n {
        out = quadratic_step(&out, h, pot, hbar_over_m);
    }
    let moved = (out.center - wp.center).abs();
    if moved > 0.1 * pot.scale_length {
        return Err(Error::StepSize(format!(
            "packet moved {moved:.3e} um in {dt} us, above a tenth of the field scale {:.3e} um",
            pot.scale_length
        )));
    }
    Ok(out)
}

/// Free flight under a uniform acceleration `gravity` (μm/μs², 0 disables).
pub fn evolve_free(
    wp: &GaussianWavepacket,
    dt: f64,
    hbar_over_m: f64,
    gravity: f64,
) -> Result<GaussianWavepacket> {
    evolve_quadratic(
        wp,
        dt,
        &LocalQuadratic::linear(-gravity / hbar_over_m),
        hbar_over_m,
    )
}

fn same_mode(a: &GaussianWavepacket, b: &GaussianWavepacket) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()));
    a.spin == b.spin
        && close(a.center, b.center)
        && close(a.momentum, b.momentum)
        && close(a.width, b.width)
        && close(a.quad_phase, b.quad_phase)
}

/// Adds coherently the branches that occupy the same mode and drops empty
/// ones.
pub fn merge_branches(branches: Vec<GaussianWavepacket>) -> Vec<GaussianWavepacket> {
    let mut out: Vec<(GaussianWavepacket, Complex64, usize)> = Vec::new();
    for b in branches {
        let amp = Complex64::from_polar(b.weight, b.global_phase);
        match out.iter_mut().find(|(m, _, _)| same_mode(m, &b)) {
            Some((_, acc, count)) => {
                *acc += amp;
                *count += 1;
            }
            None => out.push((b, amp, 1)),
        }
    }
    out.into_iter()
        .filter(|(_, amp, _)| amp.norm() > 1e-14)
        .map(|(mut b, amp, count)| {
            if count > 1 {
                b.weight = amp.norm();
                b.global_phase += wrap_pi(amp.arg() - b.global_phase);
            }
            b
        })
        .collect()
}

/// Instantaneous two-level rotation:
/// `|1⟩ → c|1⟩ - s|2⟩`, `|2⟩ → s|1⟩ + c|2⟩` with `c = cos(angle/2)`.
pub fn apply_rf_pulse(
    branches: &[GaussianWavepacket],
    angle: f64,
) -> Result<Vec<GaussianWavepacket>> {
    if !(0.0..=PI).contains(&angle) {
        return param(format!("pulse angle must lie in [0, π], got {angle}"));
    }
    let (c, s) = ((0.5 * angle).cos(), (0.5 * angle).sin());
    let mut out = Vec::with_capacity(2 * branches.len());
    for b in branches {
        let (to1, to2) = if b.spin == 1 { (c, -s) } else { (s, c) };
        for (spin, f) in [(1u8, to1), (2u8, to2)] {
            if f == 0.0 {
                continue;
            }
            let mut nb = *b;
            nb.spin = spin;
            nb.weight = b.weight * f.abs();
            if f < 0.0 {
                nb.global_phase += PI;
            }
            out.push(nb);
        }
    }
    Ok(merge_branches(out))
}

pub fn total_weight(branches: &[GaussianWavepacket]) -> f64 {
    branches.iter().map(|b| b.weight * b.weight).sum()
}

/// `∫ψ_a* ψ_b dz` in closed form, weights included.
pub fn overlap(a: &GaussianWavepacket, b: &GaussianWavepacket) -> Complex64 {
    let i = Complex64::i();
    let (aa, ab) = (a.a().conj(), b.a());
    let (qa, qb) = (a.center, b.center);
    let big_a = i * (aa - ab);
    let big_b = 2.0 * i * aa * qa - 2.0 * i * ab * qb - i * a.momentum + i * b.momentum;
    let norm = (a.weight * b.weight).ln()
        - 0.25 * (2.0 * PI * a.width * a.width).ln()
        - 0.25 * (2.0 * PI * b.width * b.width).ln();
    let big_c = -i * aa * qa * qa + i * ab * qb * qb + i * a.momentum * qa
        - i * b.momentum * qb
        - i * a.global_phase
        + i * b.global_phase
        + norm;
    (PI / big_a).sqrt() * (big_b * big_b / (4.0 * big_a) + big_c).exp()
}

/// Conserved quantities of a same-spin pair at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationRecord {
    pub time: f64,
    pub spin: u8,
    /// `Γ` from `(δz/2σ)² + (κσ)²`.
    pub gamma: f64,
    /// `Γ` from the modulus of the overlap integral.
    pub gamma_overlap: f64,
    /// `χ = δφ - k̄δz`, wrapped to (-π, π].
    pub chi: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub kappa_sigma: f64,
    pub n_periods: f64,
    pub delta_z: f64,
    pub z_mid: f64,
    /// `(δz/2σ)² / (κσ)²`.
    pub separation_ratio: f64,
    /// Minimal width of free evolution through this state.
    pub sigma_m: f64,
    /// Time since that focus (negative before it).
    pub since_focus: f64,
    /// `ξ = 2σ_m²/(λ|T_f|)`.
    pub xi: f64,
    /// `d/2σ_m` with `d` the separation at the focus.
    pub d_over_2sigma_m: f64,
}

impl ConservationRecord {
    /// `θ` of the pattern `G sin²(|κ|(z - z̄)/2 + θ)` formed by this pair.
    pub fn theta(&self) -> f64 {
        let chi = if self.kappa >= 0.0 {
            self.chi
        } else {
            -self.chi
        };
        reduce(0.5 * (PI - chi), PI)
    }
}

/// Γ, χ and the derived pattern quantities of the same-spin pair `(a, b)`.
/// `κ` is signed; swapping the pair flips the signs of `κ`, `δz` and `χ`.
pub fn conservation_check(
    a: &GaussianWavepacket,
    b: &GaussianWavepacket,
    time: f64,
    hbar_over_m: f64,
) -> Result<ConservationRecord> {
    if a.spin != b.spin {
        return Err(Error::ModelAssumption(format!(
            "pair has different spins {} and {}",
            a.spin, b.spin
        )));
    }
    let rel = (a.width - b.width).abs() / a.width.max(b.width);
    if rel > 1e-6 {
        return Err(Error::ModelAssumption(format!(
            "pair widths differ by {rel:.3e} relative"
        )));
    }
    let kappa =
        0.5 * (a.quad_phase + b.quad_phase) * (b.center - a.center) - (b.momentum - a.momentum);
    let sigma = 0.5 * (a.width + b.width);
    let dz = b.center - a.center;
    let kbar = 0.5 * (a.momentum + b.momentum);
    let dk = b.momentum - a.momentum;
    let sep = dz / (2.0 * sigma);
    let ks = kappa.abs() * sigma;
    let gamma = (sep * sep + ks * ks).sqrt();
    let ov = overlap(a, b) / (a.weight * b.weight);
    let gamma_overlap = (-2.0 * ov.norm().ln()).max(0.0).sqrt();
    let chi = wrap_pi(b.global_phase - a.global_phase - kbar * dz);
    let (sigma_m, since_focus) = a.free_focus(hbar_over_m);
    let d = dz - hbar_over_m * dk * since_focus;
    Ok(ConservationRecord {
        time,
        spin: a.spin,
        gamma,
        gamma_overlap,
        chi,
        kappa,
        sigma,
        kappa_sigma: ks,
        n_periods: 2.0 * ks / PI,
        delta_z: dz,
        z_mid: 0.5 * (a.center + b.center),
        separation_ratio: sep * sep / (ks * ks),
        sigma_m,
        since_focus,
        xi: 2.0 * sigma_m * sigma_m / (hbar_over_m * since_focus.abs()),
        d_over_2sigma_m: d / (2.0 * sigma_m),
    })
}

/// Pattern parameters of two same-spin pairs, one per constituent.
pub fn pattern_params(r1: &ConservationRecord, r2: &ConservationRecord) -> ModelParams {
    ModelParams {
        kappa1: r1.kappa.abs(),
        kappa2: r2.kappa.abs(),
        theta1: r1.theta(),
        theta2: r2.theta(),
        z1: r1.z_mid,
        z2: r2.z_mid,
        sigma: 0.5 * (r1.sigma + r2.sigma),
    }
}

/// Probability density of the coherent sum of the given branches.
pub fn coherent_density(branches: &[GaussianWavepacket], z: f64) -> f64 {
    branches
        .iter()
        .map(|b| b.amplitude(z))
        .sum::<Complex64>()
        .norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::HBAR_OVER_M_RB87 as LAMBDA;
    use proptest::prelude::*;

    fn packet(q: f64, k: f64, s: f64, alpha: f64, phi: f64) -> GaussianWavepacket {
        GaussianWavepacket {
            center: q,
            momentum: k,
            width: s,
            quad_phase: alpha,
            global_phase: phi,
            spin: 1,
            weight: 1.0,
        }
    }

    fn numeric_overlap(a: &GaussianWavepacket, b: &GaussianWavepacket) -> Complex64 {
        let lo = a.center.min(b.center) - 12.0 * a.width.max(b.width);
        let hi = a.center.max(b.center) + 12.0 * a.width.max(b.width);
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| {
                let z = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * a.amplitude(z).conj() * b.amplitude(z)
            })
            .sum::<Complex64>()
            * h
    }

    #[test]
    fn zero_step_is_identity() {
        let wp = packet(3.0, 1.0, 1.2, 0.3, 0.4);
        let pot = LocalQuadratic {
            z_ref: 0.0,
            v0: 1.0,
            v1: 2.0,
            v2: 3.0,
            scale_length: 1e9,
        };
        assert_eq!(evolve_quadratic(&wp, 0.0, &pot, LAMBDA).unwrap(), wp);
    }

    #[test]
    fn free_width_law_and_focus() {
        // Start converging towards a focus 2000 μs ahead.
        let sm = 0.5;
        let tm = 2000.0;
        let width_at = |t: f64| {
            let r = LAMBDA / (2.0 * sm * sm) * (t - tm);
            sm * (1.0 + r * r).sqrt()
        };
        let alpha_at = |t: f64| {
            let r = LAMBDA / (2.0 * sm * sm);
            (LAMBDA * (t - tm) / (4.0 * sm.powi(4))) / (1.0 + r * r * (t - tm) * (t - tm))
        };
        let wp = packet(0.0, 0.0, width_at(0.0), alpha_at(0.0), 0.0);
        for &t in &[500.0, 2000.0, 5000.0, 40_000.0] {
            let out = evolve_free(&wp, t, LAMBDA, 0.0).unwrap();
            assert!(
                (out.width - width_at(t)).abs() < 1e-10 * width_at(t),
                "t {t}"
            );
            assert!(
                (out.quad_phase - alpha_at(t)).abs() < 1e-10 / (sm * sm),
                "t {t}: {} vs {}",
                out.quad_phase,
                alpha_at(t)
            );
        }
        let at_focus = evolve_free(&wp, tm, LAMBDA, 0.0).unwrap();
        assert!(at_focus.quad_phase.abs() < 1e-12);
        let (s, since) = wp.free_focus(LAMBDA);
        assert!((s - sm).abs() < 1e-12 && (since + tm).abs() < 1e-8);
        // Linear growth long after the focus: dσ/dt → λ/2σ_m.
        let late = evolve_free(&wp, 1e7, LAMBDA, 0.0).unwrap();
        let later = evolve_free(&wp, 1e7 + 1e5, LAMBDA, 0.0).unwrap();
        let slope = (later.width - late.width) / 1e5;
        assert!((slope - LAMBDA / (2.0 * sm)).abs() < 1e-6 * slope);
        // α → 1/(λ(t - t_m)) in rad/μm² once σ ≫ σ_m.
        assert!((late.quad_phase * LAMBDA * (1e7 - tm) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_force_kicks_momentum() {
        let wp = packet(1.0, 2.0, 1.0, 0.0, 0.0);
        let v1 = 0.7;
        let dt = 30.0;
        let out = evolve_quadratic(&wp, dt, &LocalQuadratic::linear(v1), LAMBDA).unwrap();
        let free = evolve_free(&wp, dt, LAMBDA, 0.0).unwrap();
        assert!((out.momentum - (2.0 - v1 * dt)).abs() < 1e-12);
        assert!((out.width - free.width).abs() < 1e-14);
        assert!((out.quad_phase - free.quad_phase).abs() < 1e-14);
        let expect = 1.0 + LAMBDA * 2.0 * dt - 0.5 * LAMBDA * v1 * dt * dt;
        assert!((out.center - expect).abs() < 1e-12);
    }

    #[test]
    fn gravity_accelerates_centre() {
        let wp = packet(0.0, 0.0, 1.0, 0.0, 0.0);
        let out = evolve_free(&wp, 1000.0, LAMBDA, 9.8e-6).unwrap();
        assert!((out.center - 0.5 * 9.8e-6 * 1e6).abs() < 1e-9);
    }

    #[test]
    fn harmonic_period_returns_packet() {
        // Full period of a harmonic well: the packet comes back with the
        // Gouy phase -π relative to the classical action.
        let omega = 0.01;
        let v2 = omega * omega / LAMBDA;
        let pot = LocalQuadratic {
            z_ref: 0.0,
            v0: 0.0,
            v1: 0.0,
            v2,
            scale_length: 1e9,
        };
        let wp = packet(2.0, 0.5, 0.8, 0.1, 0.0);
        let period = 2.0 * PI / omega;
        let out = evolve_quadratic(&wp, period, &pot, LAMBDA).unwrap();
        assert!((out.center - wp.center).abs() < 1e-9);
        assert!((out.momentum - wp.momentum).abs() < 1e-9);
        assert!((out.width - wp.width).abs() < 1e-9);
        assert!((out.quad_phase - wp.quad_phase).abs() < 1e-9);
        let half = evolve_quadratic(&wp, 0.5 * period, &pot, LAMBDA).unwrap();
        assert!((half.center + wp.center).abs() < 1e-9);
        assert!((half.momentum + wp.momentum).abs() < 1e-9);
    }

    #[test]
    fn step_size_error() {
        let pot = LocalQuadratic {
            z_ref: 0.0,
            v0: 0.0,
            v1: -1.0,
            v2: 0.0,
            scale_length: 1.0,
        };
        let wp = packet(0.0, 0.0, 1.0, 0.0, 0.0);
        assert!(matches!(
            evolve_quadratic(&wp, 100.0, &pot, LAMBDA),
            Err(Error::StepSize(_))
        ));
    }

    #[test]
    fn propagation_matches_schrodinger_split_step() {
        // Independent route: split-step Fourier integration on a grid.
        use rustfft::FftPlanner;
        let v2 = 4e-3;
        let v1 = -0.05;
        let pot = LocalQuadratic {
            z_ref: 1.0,
            v0: 0.2,
            v1,
            v2,
            scale_length: 1e9,
        };
        let wp = packet(-1.0, 1.5, 1.0, 0.2, 0.3);
        let t = 200.0;
        let exact = evolve_quadratic(&wp, t, &pot, LAMBDA).unwrap();
        let n = 4096;
        let l = 80.0;
        let dz = l / n as f64;
        let zs: Vec<f64> = (0..n).map(|i| -l / 2.0 + i as f64 * dz).collect();
        let mut psi: Vec<Complex64> = zs.iter().map(|&z| wp.amplitude(z)).collect();
        let ks: Vec<f64> = (0..n)
            .map(|i| {
                let j = if i < n / 2 {
                    i as f64
                } else {
                    i as f64 - n as f64
                };
                2.0 * PI * j / l
            })
            .collect();
        let steps = 4000;
        let h = t / steps as f64;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let half_v: Vec<Complex64> = zs
            .iter()
            .map(|&z| Complex64::from_polar(1.0, -0.5 * h * pot.eval(z)))
            .collect();
        let kin: Vec<Complex64> = ks
            .iter()
            .map(|&k| Complex64::from_polar(1.0 / n as f64, -0.5 * LAMBDA * k * k * h))
            .collect();
        for _ in 0..steps {
            psi.iter_mut().zip(&half_v).for_each(|(p, v)| *p *= v);
            fwd.process(&mut psi);
            psi.iter_mut().zip(&kin).for_each(|(p, k)| *p *= k);
            inv.process(&mut psi);
            psi.iter_mut().zip(&half_v).for_each(|(p, v)| *p *= v);
        }
        let err = zs
            .iter()
            .zip(&psi)
            .map(|(&z, p)| (exact.amplitude(z) - p).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max |Δψ| = {err:e}");
    }

    #[test]
    fn rf_pulse_rules() {
        let wp = GaussianWavepacket::new(0.0, 0.0, 1.0, 2).unwrap();
        let same = apply_rf_pulse(&[wp], 0.0).unwrap();
        assert_eq!(same, vec![wp]);
        let flipped = apply_rf_pulse(&[wp], PI).unwrap();
        assert_eq!(flipped.len(), 1);
        assert_eq!(flipped[0].spin, 1);
        assert!((flipped[0].weight - 1.0).abs() < 1e-15);
        let half = apply_rf_pulse(&[wp], PI / 2.0).unwrap();
        assert_eq!(half.len(), 2);
        assert!((total_weight(&half) - 1.0).abs() < 1e-12);
        let twice = apply_rf_pulse(&half, PI / 2.0).unwrap();
        assert_eq!(twice.len(), 1);
        assert_eq!(twice[0].spin, 1);
        assert!((twice[0].weight - 1.0).abs() < 1e-12);
        // From |1⟩ two π/2 pulses give -|2⟩.
        let one = GaussianWavepacket::new(0.0, 0.0, 1.0, 1).unwrap();
        let h1 = apply_rf_pulse(&[one], PI / 2.0).unwrap();
        let t1 = apply_rf_pulse(&h1, PI / 2.0).unwrap();
        assert_eq!(t1.len(), 1);
        assert_eq!(t1[0].spin, 2);
        assert!((wrap_pi(t1[0].global_phase) - PI).abs() < 1e-12);
        assert!(apply_rf_pulse(&[one], 4.0).is_err());
    }

    #[test]
    fn overlap_matches_quadrature() {
        let a = packet(-0.5, 1.0, 0.9, 0.3, 0.2);
        let b = GaussianWavepacket {
            weight: 0.7,
            ..packet(1.0, -2.0, 1.3, -0.4, 1.1)
        };
        let exact = overlap(&a, &b);
        let num = numeric_overlap(&a, &b);
        assert!((exact - num).norm() < 1e-10, "{exact} vs {num}");
        assert!((overlap(&a, &a).re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gamma_formula_matches_overlap() {
        let a = packet(0.0, 0.0, 1.1, 0.05, 0.0);
        let b = packet(2.0, -4.0, 1.1, 0.05, 0.7);
        let r = conservation_check(&a, &b, 0.0, LAMBDA).unwrap();
        assert!((r.gamma - r.gamma_overlap).abs() < 1e-12);
        let ov = overlap(&a, &b);
        assert!((wrap_pi(ov.arg() - r.chi)).abs() < 1e-12);
        assert!(r.kappa > 0.0);
        assert!((r.kappa - (0.05 * 2.0 + 4.0)).abs() < 1e-14);
    }

    #[test]
    fn splitting_is_momentum_dominated() {
        // Right after a kick the separation is zero and Γ = κσ.
        let a = packet(0.0, 0.0, 1.23, 0.0, 0.0);
        let b = packet(0.0, -5.0, 1.23, 0.0, 0.0);
        let r = conservation_check(&a, &b, 0.0, LAMBDA).unwrap();
        assert!(r.separation_ratio < 1e-20);
        assert!((r.gamma - 5.0 * 1.23).abs() < 1e-12);
    }

    #[test]
    fn model_assumption_errors() {
        let a = packet(0.0, 0.0, 1.0, 0.0, 0.0);
        let b = packet(1.0, 0.0, 1.1, 0.0, 0.0);
        assert!(matches!(
            conservation_check(&a, &b, 0.0, LAMBDA),
            Err(Error::ModelAssumption(_))
        ));
        let c = GaussianWavepacket { spin: 2, ..a };
        assert!(conservation_check(&a, &c, 0.0, LAMBDA).is_err());
    }

    #[test]
    fn interference_reproduces_pattern_form() {
        // |ψa + ψb|² = Ga + Gb + 2A' e^{-(z-z̄)²/2σ²} cos(κz - φ): check the
        // pattern parameters against the density.
        let a = packet(-0.4, 3.0, 2.0, 0.02, 0.1);
        let b = packet(0.4, 0.5, 2.0, 0.02, -0.6);
        for (a, b) in [(a, b), (b, a)] {
            let r = conservation_check(&a, &b, 0.0, LAMBDA).unwrap();
            let pa = |z: f64| a.density(z) + b.density(z);
            let s = r.sigma;
            let amp = (2.0 * PI * s * s).powf(-0.5) * (-r.delta_z.powi(2) / (8.0 * s * s)).exp();
            for i in 0..50 {
                let z = -6.0 + 0.24 * i as f64;
                let interf = coherent_density(&[a, b], z) - pa(z);
                let env = 2.0 * amp * (-(z - r.z_mid).powi(2) / (2.0 * s * s)).exp();
                let model = -env * (r.kappa.abs() * (z - r.z_mid) + 2.0 * r.theta()).cos();
                assert!((interf - model).abs() < 1e-12, "z {z}: {interf} vs {model}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn quadratic_evolution_preserves_overlap(
            dz in -3.0f64..3.0, dk in -6.0f64..6.0, s in 0.5f64..2.0,
            alpha in -0.3f64..0.3, v1 in -1.0f64..1.0, v2 in -0.05f64..0.05,
            t in 1.0f64..600.0,
        ) {
            let a = packet(0.0, 0.0, s, alpha, 0.0);
            let b = packet(dz, dk, s, alpha, 0.5);
            let pot = LocalQuadratic { z_ref: 0.3, v0: 0.1, v1, v2, scale_length: f64::INFINITY };
            let before = overlap(&a, &b);
            let ea = evolve_quadratic(&a, t, &pot, LAMBDA).unwrap();
            let eb = evolve_quadratic(&b, t, &pot, LAMBDA).unwrap();
            let after = overlap(&ea, &eb);
            prop_assert!((before - after).norm() < 1e-9 * (1.0 + before.norm()));
            let r0 = conservation_check(&a, &b, 0.0, LAMBDA).unwrap();
            let r1 = conservation_check(&ea, &eb, t, LAMBDA).unwrap();
            prop_assert!((r0.gamma - r1.gamma).abs() < 1e-9 * (1.0 + r0.gamma));
            prop_assert!(wrap_pi(r0.chi - r1.chi).abs() < 1e-9);
        }

        #[test]
        fn rf_pulses_are_unitary(angle1 in 0.0f64..PI, angle2 in 0.0f64..PI) {
            let a = GaussianWavepacket::new(0.0, 1.0, 1.0, 2).unwrap();
            let b = GaussianWavepacket { center: 3.0, ..a };
            let mut set = vec![GaussianWavepacket { weight: 0.6, ..a },
                               GaussianWavepacket { weight: 0.8, spin: 1, ..b }];
            set = apply_rf_pulse(&set, angle1).unwrap();
            prop_assert!(set.len() <= 4);
            prop_assert!((total_weight(&set) - 1.0).abs() < 1e-12);
            set = apply_rf_pulse(&set, angle2).unwrap();
            prop_assert!((total_weight(&set) - 1.0).abs() < 1e-12);
        }
    }
}
