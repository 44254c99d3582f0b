//! Phase-space rotation check for a Gaussian pair.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use moire::signal::fmt_f64;
use moire::units::{hz_to_rad_per_us, HBAR_OVER_M_RB87};
use moire::wavepacket::GaussianWavepacket;
use moire::wigner::{
    oscillator_length, verify_rotation_theorem, wigner_of_superposition, RotationOptions,
    RotationReport,
};

use crate::config::{check_schema, SCHEMA_VERSION};
use crate::error::CliError;
use crate::output::OutDir;

/// A packet in oscillator units: lengths in `ℓ`, wavenumbers in `1/ℓ`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaledPacket {
    pub x: f64,
    pub p: f64,
    pub width: f64,
    /// Quadratic phase times `ℓ²`.
    pub chirp: f64,
    pub phase: f64,
}

impl Default for ScaledPacket {
    fn default() -> Self {
        Self {
            x: 0.0,
            p: 0.0,
            width: std::f64::consts::FRAC_1_SQRT_2,
            chirp: 0.0,
            phase: 0.0,
        }
    }
}

impl ScaledPacket {
    fn physical(&self, ell: f64) -> Result<GaussianWavepacket, CliError> {
        let mut wp = GaussianWavepacket::new(self.x * ell, self.p / ell, self.width * ell, 1)?;
        wp.quad_phase = self.chirp / (ell * ell);
        wp.global_phase = self.phase;
        Ok(wp)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WignerConfig {
    pub schema_version: u32,
    /// Harmonic frequency in rad/μs.
    pub omega: f64,
    pub hbar_over_m: f64,
    pub packets: [ScaledPacket; 2],
    /// Rotation angles `ωτ` in rad.
    pub angles: Vec<f64>,
    pub rotation: RotationOptions,
    /// Write the initial Wigner function as binary plus sidecar.
    pub export_grid: bool,
    /// Also write it as long-format CSV.
    pub export_csv: bool,
}

impl Default for WignerConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            omega: hz_to_rad_per_us(113.0),
            hbar_over_m: HBAR_OVER_M_RB87,
            packets: [
                ScaledPacket {
                    x: -3.0,
                    ..Default::default()
                },
                ScaledPacket {
                    x: 3.0,
                    phase: 0.4,
                    ..Default::default()
                },
            ],
            angles: vec![0.25 * PI, 0.5 * PI, PI, 2.0 * PI],
            rotation: RotationOptions::default(),
            export_grid: false,
            export_csv: false,
        }
    }
}

#[derive(Serialize)]
struct WignerReport {
    oscillator_length_um: f64,
    packets: [GaussianWavepacket; 2],
    rotations: Vec<RotationReport>,
    max_l2_error: f64,
    max_fringe_count_drift: f64,
}

pub fn wigner(cfg: &WignerConfig, out: &mut OutDir) -> Result<(), CliError> {
    check_schema(cfg.schema_version)?;
    if !(cfg.omega > 0.0) || !(cfg.hbar_over_m > 0.0) {
        return Err(CliError::Config(
            "omega and hbar_over_m must be positive".into(),
        ));
    }
    if cfg.angles.iter().any(|a| !(*a >= 0.0)) {
        return Err(CliError::Config("angles must be non-negative".into()));
    }
    let ell = oscillator_length(cfg.omega, cfg.hbar_over_m);
    let a = cfg.packets[0].physical(ell)?;
    let b = cfg.packets[1].physical(ell)?;
    let reports: Vec<RotationReport> = cfg
        .angles
        .par_iter()
        .map(|&ang| {
            verify_rotation_theorem(
                &a,
                &b,
                cfg.omega,
                ang / cfg.omega,
                cfg.hbar_over_m,
                &cfg.rotation,
            )
        })
        .collect::<moire::Result<_>>()?;

    let mut wr = csv::Writer::from_writer(out.writer("rotation.csv")?);
    wr.write_record([
        "angle_rad",
        "tau_us",
        "l2_error",
        "linf_error",
        "norm_before",
        "norm_after",
        "fringe_count_before",
        "fringe_count_after",
        "fringe_count_drift",
        "fringe_phase_drift_rad",
    ])?;
    for r in &reports {
        wr.write_record(
            [
                r.angle,
                r.tau,
                r.l2_error,
                r.linf_error,
                r.norm_before,
                r.norm_after,
                r.fringes_before.count,
                r.fringes_after.count,
                r.fringe_count_drift(),
                r.fringe_phase_drift(),
            ]
            .map(fmt_f64),
        )?;
    }
    wr.flush()?;

    if cfg.export_grid || cfg.export_csv {
        let w = wigner_of_superposition(&a, &b)?;
        if cfg.export_grid {
            out.path("wigner_initial.json");
            w.write_binary(out.path("wigner_initial.bin"))?;
        }
        if cfg.export_csv {
            w.write_csv(out.writer("wigner_initial.csv")?)?;
        }
    }

    out.json(
        "report.json",
        &WignerReport {
            oscillator_length_um: ell,
            packets: [a, b],
            max_l2_error: reports.iter().map(|r| r.l2_error).fold(0.0, f64::max),
            max_fringe_count_drift: reports
                .iter()
                .map(|r| r.fringe_count_drift())
                .fold(0.0, f64::max),
            rotations: reports,
        },
    )
}
