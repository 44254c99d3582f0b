//! The Stern-Gerlach interferometer sequence with Gaussian wavepackets.
//!
//! Timeline (t = 0 at trap release): RF π/2, splitting pulse `T1`, free
//! flight `Td1`, RF π/2, deceleration pulse `T2`, removal of the spin-2
//! branches, RF pulse (angle `rf3_angle`), free flight until `Td2` after the
//! start of `T2`, reversed-polarity pulse `T3`, free flight with bias for
//! `bias_off_delay`, and finally free fall for `tf`.
//!
//! During each gradient pulse every spin group (packets of one spin) sees
//! the Taylor expansion of its Zeeman potential about the group centroid, so
//! the packets of a group share one width law and the overlap of any
//! same-spin pair is conserved exactly. Before the second RF pulse the two
//! arms carry different spins; they are given the spin-averaged curvature so
//! that the pair formed at the second pulse starts with equal widths.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::field::{Drive, FieldModel};
use crate::fitting::fit_envelope;
use crate::pattern::ModelParams;
use crate::roots::brent;
use crate::signal::{GridSpec, SampledSignal};
use crate::spectral::{numerical_spectrum, solve_km_model, AftModel, SpectrumOptions};
use crate::units::{hz_to_rad_per_us, GRAVITY, HBAR_OVER_M_RB87};
use crate::wavepacket::{
    apply_rf_pulse, coherent_density, conservation_check, evolve_quadratic, pattern_params,
    total_weight, ConservationRecord, GaussianWavepacket, LocalQuadratic,
};

pub const SEQUENCE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceConfig {
    pub schema_version: u32,
    /// Splitting pulse duration in μs.
    pub t1: f64,
    /// Delay between the end of `T1` and the start of `T2` in μs.
    pub td1: f64,
    /// Deceleration pulse duration in μs.
    pub t2: f64,
    /// Delay between the starts of `T2` and `T3` in μs.
    pub td2: f64,
    /// Translation pulse duration in μs.
    pub t3: f64,
    /// Bias switch-off delay after the end of `T3` in μs.
    pub bias_off_delay: f64,
    /// Free fall after the bias is switched off, in μs.
    pub tf: f64,
    pub hbar_over_m: f64,
    /// Axial trap frequency in rad/μs (reference for free expansion).
    pub trap_omega: f64,
    /// Initial distance from the chip in μm.
    pub z0: f64,
    /// Initial density width in μm.
    pub sigma0: f64,
    pub gravity: bool,
    /// Rotation angle of the third RF pulse; 0 or π keeps a single spin.
    pub rf3_angle: f64,
    /// Largest time step during gradient pulses in μs.
    pub max_step: f64,
    pub field: FieldModel,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            schema_version: SEQUENCE_SCHEMA,
            t1: 3.75,
            td1: 230.0,
            t2: 400.0,
            td2: 410.0,
            t3: 30.0,
            bias_off_delay: 660.0,
            tf: 14_000.0,
            hbar_over_m: HBAR_OVER_M_RB87,
            trap_omega: hz_to_rad_per_us(113.0),
            z0: 89.5,
            sigma0: 1.23,
            gravity: true,
            rf3_angle: 0.5 * PI,
            max_step: 1.0,
            field: FieldModel::default(),
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SEQUENCE_SCHEMA {
            return param(format!(
                "unsupported sequence schema {} (expected {SEQUENCE_SCHEMA})",
                self.schema_version
            ));
        }
        for (name, v) in [
            ("t1", self.t1),
            ("td1", self.td1),
            ("t2", self.t2),
            ("td2", self.td2),
            ("t3", self.t3),
            ("bias_off_delay", self.bias_off_delay),
            ("tf", self.tf),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return param(format!("{name} must be a non-negative duration, got {v}"));
            }
        }
        if !(self.hbar_over_m > 0.0) || !(self.z0 > 0.0) || !(self.sigma0 > 0.0) {
            return param("hbar_over_m, z0 and sigma0 must be positive");
        }
        if !(self.max_step > 0.0) {
            return param("max_step must be positive");
        }
        if !(0.0..=PI).contains(&self.rf3_angle) {
            return param("rf3_angle must lie in [0, π]");
        }
        self.field.validate()
    }

    fn gravity_accel(&self) -> f64 {
        if self.gravity {
            GRAVITY
        } else {
            0.0
        }
    }
}

/// Scalar results of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub t2: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub delta_phi: f64,
    pub delta_z: f64,
    pub sigma: f64,
    pub n_periods1: f64,
    pub n_periods2: f64,
    /// Largest relative change of Γ between checkpoints.
    pub gamma_drift: f64,
    /// Largest `(δz/2σ)²/(κσ)²` at observation.
    pub separation_ratio: f64,
    pub sigma_m: f64,
    pub xi: f64,
    /// Analytic peak of the mean-κ model.
    pub k_m_model: f64,
    /// Peak of the numerical spectrum of the simulated moiré pattern.
    pub k_m_spectrum: f64,
    /// Width of the initial cloud after the same time of pure trap-release
    /// expansion, `σ₀√(1 + ω²t²)`.
    pub free_expansion_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceRun {
    pub config: SequenceConfig,
    pub final_packets: Vec<GaussianWavepacket>,
    pub records: Vec<ConservationRecord>,
    /// Pattern parameters of spin 1 and spin 2 (when present).
    pub spin_records: [Option<ConservationRecord>; 2],
    pub params: Option<ModelParams>,
    pub spin1: SampledSignal,
    pub spin2: SampledSignal,
    pub moire: SampledSignal,
    pub summary: SequenceSummary,
}

struct Sim<'a> {
    cfg: &'a SequenceConfig,
    t: f64,
    packets: Vec<GaussianWavepacket>,
    shared_curvature: bool,
}

impl Sim<'_> {
    fn centroid(packets: &[&GaussianWavepacket]) -> f64 {
        packets.iter().map(|p| p.center).sum::<f64>() / packets.len() as f64
    }

    fn quadratic(&self, spin: u8, zc: f64, drive: Drive, v2: Option<f64>) -> LocalQuadratic {
        let lam = self.cfg.hbar_over_m;
        let [u0, u1, u2] = self.cfg.field.zeeman(spin, zc, drive);
        let g = self.cfg.gravity_accel() / lam;
        LocalQuadratic {
            z_ref: zc,
            v0: u0 - g * zc,
            v1: u1 - g,
            v2: v2.unwrap_or(u2),
            scale_length: zc,
        }
    }

    fn advance(&mut self, duration: f64, drive: Drive) -> Result<()> {
        if duration <= 0.0 {
            return Ok(());
        }
        let lam = self.cfg.hbar_over_m;
        let linear = !matches!(drive, Drive::Pulse(_));
        let steps = if linear {
            1
        } else {
            (duration / self.cfg.max_step).ceil().max(1.0) as usize
        };
        let h = duration / steps as f64;
        for _ in 0..steps {
            let mut next = self.packets.clone();
            if linear {
                // Bias-only fields are linear in z and gravity is uniform,
                // so one exact step covers the whole interval.
                for (p, n) in self.packets.iter().zip(next.iter_mut()) {
                    let mut q = self.quadratic(p.spin, p.center, drive, Some(0.0));
                    q.scale_length = f64::INFINITY;
                    *n = evolve_quadratic(p, h, &q, lam)?;
                }
            } else {
                let all: Vec<&GaussianWavepacket> = self.packets.iter().collect();
                let shared = if self.shared_curvature {
                    let zc = Self::centroid(&all);
                    let mut spins: Vec<u8> = all.iter().map(|p| p.spin).collect();
                    spins.sort_unstable();
                    spins.dedup();
                    let mean = spins
                        .iter()
                        .map(|&s| self.cfg.field.zeeman(s, zc, drive)[2])
                        .sum::<f64>()
                        / spins.len() as f64;
                    Some((zc, mean))
                } else {
                    None
                };
                for spin in [1u8, 2] {
                    let group: Vec<&GaussianWavepacket> =
                        all.iter().copied().filter(|p| p.spin == spin).collect();
                    if group.is_empty() {
                        continue;
                    }
                    let q = match shared {
                        Some((zc, v2)) => self.quadratic(spin, zc, drive, Some(v2)),
                        None => self.quadratic(spin, Self::centroid(&group), drive, None),
                    };
                    for (p, n) in self.packets.iter().zip(next.iter_mut()) {
                        if p.spin == spin {
                            *n = evolve_quadratic(p, h, &q, lam)?;
                        }
                    }
                }
            }
            self.packets = next;
            self.t += h;
        }
        Ok(())
    }

    fn pulse(&mut self, angle: f64) -> Result<()> {
        self.packets = apply_rf_pulse(&self.packets, angle)?;
        let w = total_weight(&self.packets);
        if (w - 1.0).abs() > 1e-12 {
            return Err(Error::Sequence(format!(
                "branch weights sum to {w} after RF pulse"
            )));
        }
        Ok(())
    }

    fn pairs(&self) -> Result<Vec<(GaussianWavepacket, GaussianWavepacket)>> {
        let mut out = Vec::new();
        for spin in [1u8, 2] {
            let g: Vec<_> = self.packets.iter().filter(|p| p.spin == spin).collect();
            match g.len() {
                0 => {}
                2 => out.push((*g[0], *g[1])),
                n => {
                    return Err(Error::Sequence(format!(
                        "spin {spin} carries {n} branches, expected 2"
                    )))
                }
            }
        }
        Ok(out)
    }

    fn checkpoint(&self, records: &mut Vec<ConservationRecord>) -> Result<()> {
        for (a, b) in self.pairs()? {
            records.push(conservation_check(&a, &b, self.t, self.cfg.hbar_over_m)?);
        }
        Ok(())
    }
}

/// Runs the whole sequence and builds the observed patterns.
pub fn run_sequence(cfg: &SequenceConfig) -> Result<SequenceRun> {
    cfg.validate()?;
    let initial = GaussianWavepacket::new(cfg.z0, 0.0, cfg.sigma0, 2)?;
    let mut sim = Sim {
        cfg,
        t: 0.0,
        packets: vec![initial],
        shared_curvature: true,
    };
    let mut records = Vec::new();
    sim.pulse(0.5 * PI)?;
    sim.advance(cfg.t1, Drive::Pulse(1))?;
    sim.advance(cfg.td1, Drive::Bias)?;
    sim.pulse(0.5 * PI)?;
    sim.shared_curvature = false;
    sim.checkpoint(&mut records)?;
    let t2_start = sim.t;
    sim.advance(cfg.t2, Drive::Pulse(1))?;
    sim.checkpoint(&mut records)?;
    // The spin-2 branches leave the region of interest.
    sim.packets.retain(|p| p.spin == 1);
    let w = total_weight(&sim.packets).sqrt();
    if w == 0.0 {
        return Err(Error::Sequence("no spin-1 branches left after T2".into()));
    }
    sim.packets.iter_mut().for_each(|p| p.weight /= w);
    sim.pulse(cfg.rf3_angle)?;
    sim.checkpoint(&mut records)?;
    let t3_start = (t2_start + cfg.td2).max(sim.t);
    sim.advance(t3_start - sim.t, Drive::Bias)?;
    sim.advance(cfg.t3, Drive::Pulse(-1))?;
    sim.checkpoint(&mut records)?;
    sim.advance(cfg.bias_off_delay, Drive::Bias)?;
    sim.checkpoint(&mut records)?;
    sim.advance(cfg.tf, Drive::Off)?;
    sim.checkpoint(&mut records)?;

    let expected = if cfg.rf3_angle == 0.0 || cfg.rf3_angle == PI {
        2
    } else {
        4
    };
    if sim.packets.len() != expected {
        return Err(Error::Sequence(format!(
            "{} final packets, expected {expected}",
            sim.packets.len()
        )));
    }
    let pairs = sim.pairs()?;
    let n_final = pairs.len();
    let finals = &records[records.len() - n_final..];
    let mut spin_records = [None, None];
    for r in finals {
        spin_records[(r.spin - 1) as usize] = Some(*r);
    }
    let g0 = records[0].gamma;
    let gamma_drift = records
        .iter()
        .map(|r| (r.gamma - g0).abs() / g0)
        .fold(0.0, f64::max);

    let params = match spin_records {
        [Some(r1), Some(r2)] => Some(pattern_params(&r1, &r2)),
        _ => None,
    };
    let first = finals[0];
    let sigma = finals.iter().map(|r| r.sigma).sum::<f64>() / n_final as f64;
    let zc = finals.iter().map(|r| r.z_mid).sum::<f64>() / n_final as f64;
    let spread = finals
        .iter()
        .map(|r| (r.z_mid - zc).abs() + 0.5 * r.delta_z.abs())
        .fold(0.0, f64::max);
    let grid = GridSpec::centered(zc, spread + 6.0 * sigma, 4096)?;
    let density = |spin: u8| {
        let branch: Vec<GaussianWavepacket> = sim
            .packets
            .iter()
            .copied()
            .filter(|p| p.spin == spin)
            .collect();
        SampledSignal::from_fn(&grid, |z| coherent_density(&branch, z))
    };
    let spin1 = density(1);
    let spin2 = density(2);
    let moire = SampledSignal::new(
        grid.start,
        grid.step,
        spin1
            .values
            .iter()
            .zip(&spin2.values)
            .map(|(a, b)| a + b)
            .collect(),
    )?;

    let r1 = spin_records[0].unwrap_or(first);
    let r2 = spin_records[1].unwrap_or(first);
    let (delta_phi, delta_z, k_m_model) = match &params {
        Some(p) => {
            let model = AftModel::new(p.kappa_mean(), p.sigma, p.delta_phi())?;
            (p.delta_phi(), p.delta_z(), solve_km_model(&model)?.k_m)
        }
        None => {
            let model = AftModel::new(first.kappa.abs(), first.sigma, 0.0)?;
            (0.0, 0.0, solve_km_model(&model)?.k_m)
        }
    };
    let env = fit_envelope(&moire)?;
    let k_m_spectrum = numerical_spectrum(&moire, &env.envelope, &SpectrumOptions::default())?
        .primary
        .k;
    let total_time = sim.t;
    let summary = SequenceSummary {
        t2: cfg.t2,
        kappa1: r1.kappa.abs(),
        kappa2: r2.kappa.abs(),
        theta1: r1.theta(),
        theta2: r2.theta(),
        delta_phi,
        delta_z,
        sigma,
        n_periods1: r1.n_periods,
        n_periods2: r2.n_periods,
        gamma_drift,
        separation_ratio: finals
            .iter()
            .map(|r| r.separation_ratio)
            .fold(0.0, f64::max),
        sigma_m: r1.sigma_m,
        xi: r1.xi,
        k_m_model,
        k_m_spectrum,
        free_expansion_sigma: cfg.sigma0 * (1.0 + (cfg.trap_omega * total_time).powi(2)).sqrt(),
    };
    Ok(SequenceRun {
        config: *cfg,
        final_packets: sim.packets,
        records,
        spin_records,
        params,
        spin1,
        spin2,
        moire,
        summary,
    })
}

/// Mean number of periods of the final spin patterns.
fn final_periods(cfg: &SequenceConfig) -> Result<f64> {
    let run = run_sequence(cfg)?;
    Ok(0.5 * (run.summary.n_periods1 + run.summary.n_periods2))
}

/// Adjusts the chip current so that the final patterns carry `target`
/// periods at the configured `T2`. Returns the calibrated configuration.
pub fn calibrate_current(cfg: &SequenceConfig, target: f64) -> Result<SequenceConfig> {
    if !(target > 0.0) {
        return param(format!(
            "target number of periods must be positive, got {target}"
        ));
    }
    let eval = |current: f64| {
        let mut c = *cfg;
        c.field.current = current;
        final_periods(&c).map(|n| n - target)
    };
    let (mut lo, mut hi) = (0.25 * cfg.field.current, 4.0 * cfg.field.current);
    let (flo, fhi) = (eval(lo)?, eval(hi)?);
    if flo * fhi > 0.0 {
        return Err(Error::Root(format!(
            "no current in [{lo}, {hi}] A gives {target} periods"
        )));
    }
    if flo > 0.0 {
        std::mem::swap(&mut lo, &mut hi);
    }
    let current = brent(
        |i| eval(i).unwrap_or(f64::NAN),
        lo.min(hi),
        lo.max(hi),
        1e-9,
    )?;
    let mut out = *cfg;
    out.field.current = current;
    Ok(out)
}
