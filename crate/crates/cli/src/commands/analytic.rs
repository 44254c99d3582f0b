//! Commands built on the closed-form pattern and spectrum.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use moire::fitting::fit_envelope;
use moire::pattern::{generate_pattern, ModelParams};
use moire::rigidity::{jump_vs_periods, km_surface, relative_spread, write_jump_curves_csv};
use moire::signal::{fmt_f64, GridSpec};
use moire::spectral::{
    numerical_spectrum, solve_km, solve_km_fixed_dz, PeakRecord, PeakSolve, SpectrumOptions,
};
use moire::Error;

use super::{linspace, opt};
use crate::config::{check_schema, SCHEMA_VERSION};
use crate::error::CliError;
use crate::output::OutDir;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub schema_version: u32,
    /// rad/μm.
    pub kappa1: f64,
    pub kappa2: f64,
    /// Sets `σ = π N_p / 2κ̄` unless `sigma` is given.
    pub n_periods: f64,
    /// μm.
    pub sigma: Option<f64>,
    /// `κ̄ Δz` in rad; the constituents sit at `∓Δz/2`.
    pub delta_phi: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub points: usize,
    pub spectrum: SpectrumOptions,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kappa1: 0.2,
            kappa2: 0.2,
            n_periods: 5.6,
            sigma: None,
            delta_phi: 5.0,
            theta1: 0.0,
            theta2: 0.0,
            points: 4096,
            spectrum: SpectrumOptions::default(),
        }
    }
}

impl GenerateConfig {
    pub fn params(&self) -> ModelParams {
        let kbar = 0.5 * (self.kappa1 + self.kappa2);
        let sigma = self.sigma.unwrap_or(PI * self.n_periods / (2.0 * kbar));
        let dz = self.delta_phi / kbar;
        ModelParams {
            kappa1: self.kappa1,
            kappa2: self.kappa2,
            theta1: self.theta1,
            theta2: self.theta2,
            z1: -0.5 * dz,
            z2: 0.5 * dz,
            sigma,
        }
    }
}

#[derive(Serialize)]
struct GenerateReport {
    params: ModelParams,
    n_periods: f64,
    delta_phi: f64,
    numerical: PeakRecord,
    /// Closed-form solution; absent when κ₁ ≠ κ₂.
    analytic: Option<PeakSolve>,
}

pub fn generate(cfg: &GenerateConfig, out: &mut OutDir) -> Result<(), CliError> {
    check_schema(cfg.schema_version)?;
    let p = cfg.params();
    p.validate()?;
    let half = 0.5 * p.delta_z().abs() + 6.0 * p.sigma;
    let grid = GridSpec::centered(p.z_mid(), half, cfg.points)?;
    let signal = generate_pattern(&p, &grid)?;
    signal.write_csv_named(out.writer("pattern.csv")?, "intensity_arb")?;

    let env = fit_envelope(&signal)?;
    let spec = numerical_spectrum(&signal, &env.envelope, &cfg.spectrum)?;
    spec.write_csv(out.writer("spectrum.csv")?)?;
    let analytic = match solve_km(&p) {
        Ok(s) => Some(s),
        Err(Error::UnsupportedForm(_)) => None,
        Err(e) => return Err(e.into()),
    };
    out.json(
        "peaks.json",
        &GenerateReport {
            params: p,
            n_periods: p.n_periods(),
            delta_phi: p.delta_phi(),
            numerical: spec.peak_record(),
            analytic,
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    pub schema_version: u32,
    pub n_periods: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub kappa_points: usize,
    pub dphi_min: f64,
    pub dphi_max: f64,
    pub dphi_points: usize,
    /// `κ₀` of the overlaid rigid trajectory `κ₀√(Δφ² + π²N_p²)`.
    pub trajectory_kappa0: Option<f64>,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            n_periods: 5.61,
            kappa_min: 0.5,
            kappa_max: 2.0,
            kappa_points: 61,
            dphi_min: 0.0,
            dphi_max: 6.0 * PI,
            dphi_points: 241,
            trajectory_kappa0: Some(0.05),
        }
    }
}

#[derive(Serialize)]
struct SurfaceSummary {
    cells: usize,
    masked_cells: usize,
    /// `(κ, Δφ)` of every cell where the solver failed.
    masked: Vec<(f64, f64)>,
}

pub fn surface(cfg: &SurfaceConfig, out: &mut OutDir) -> Result<(), CliError> {
    check_schema(cfg.schema_version)?;
    if !(cfg.kappa_min > 0.0) {
        return Err(CliError::Config("kappa_min must be positive".into()));
    }
    let ka = linspace(cfg.kappa_min, cfg.kappa_max, cfg.kappa_points)?;
    let da = linspace(cfg.dphi_min, cfg.dphi_max, cfg.dphi_points)?;
    let map = km_surface(&ka, &da, cfg.n_periods)?;
    map.write_csv(out.writer("surface.csv")?, cfg.trajectory_kappa0)?;
    let mut masked = Vec::new();
    for (i, &d) in da.iter().enumerate() {
        for (j, &k) in ka.iter().enumerate() {
            if map.get(i, j).is_nan() {
                masked.push((k, d));
            }
        }
    }
    out.json(
        "surface_summary.json",
        &SurfaceSummary {
            cells: map.km.len(),
            masked_cells: masked.len(),
            masked,
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniversalConfig {
    pub schema_version: u32,
    pub n_periods: f64,
    /// `θ₂ - θ₁` in rad.
    pub delta_theta: f64,
    pub dphi_min: f64,
    pub dphi_max: f64,
    pub points: usize,
}

impl Default for UniversalConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            n_periods: 5.61,
            delta_theta: 0.0,
            dphi_min: 0.05,
            dphi_max: 18.0 * PI,
            points: 9001,
        }
    }
}

#[derive(Serialize)]
struct UniversalJump {
    dphi_left: f64,
    dphi_right: f64,
    branch_left: i64,
    branch_right: i64,
    /// Nearest `π(2n+1)` to the midpoint.
    odd_pi: f64,
    offset: f64,
}

#[derive(Serialize)]
struct Plateau {
    branch: i64,
    /// Largest `|K_MΔz - 2πn|` more than 0.2 rad away from the jumps.
    max_deviation: f64,
}

#[derive(Serialize)]
struct UniversalSummary {
    failed_rows: usize,
    jumps: Vec<UniversalJump>,
    plateaus: Vec<Plateau>,
}

pub fn universal(cfg: &UniversalConfig, out: &mut OutDir) -> Result<(), CliError> {
    check_schema(cfg.schema_version)?;
    if !(cfg.n_periods > 0.0) {
        return Err(CliError::Config("n_periods must be positive".into()));
    }
    let axis = linspace(cfg.dphi_min, cfg.dphi_max, cfg.points)?;
    let rows: Vec<Result<PeakSolve, String>> = axis
        .par_iter()
        .map(|&d| solve_km_fixed_dz(cfg.n_periods, d, cfg.delta_theta).map_err(|e| e.to_string()))
        .collect();

    let mut wr = csv::Writer::from_writer(out.writer("universal.csv")?);
    wr.write_record([
        "delta_phi_rad",
        "k_m_dz_rad",
        "k_m_dz_alt_rad",
        "branch",
        "plateau_rad",
        "status",
    ])?;
    for (d, r) in axis.iter().zip(&rows) {
        match r {
            Ok(s) => wr.write_record([
                fmt_f64(*d),
                fmt_f64(s.k_m),
                opt(s.alternate),
                s.branch_n.to_string(),
                fmt_f64(2.0 * PI * s.branch_n as f64),
                "ok".into(),
            ])?,
            Err(e) => wr.write_record([
                fmt_f64(*d),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ])?,
        }
    }
    wr.flush()?;

    let ok: Vec<(f64, PeakSolve)> = axis
        .iter()
        .zip(&rows)
        .filter_map(|(d, r)| r.as_ref().ok().map(|s| (*d, *s)))
        .collect();
    let jumps: Vec<UniversalJump> = ok
        .windows(2)
        .filter(|w| w[0].1.branch_n != w[1].1.branch_n)
        .map(|w| {
            let mid = 0.5 * (w[0].0 + w[1].0);
            let odd = PI * (2.0 * ((mid / PI - 1.0) / 2.0).round() + 1.0);
            UniversalJump {
                dphi_left: w[0].0,
                dphi_right: w[1].0,
                branch_left: w[0].1.branch_n,
                branch_right: w[1].1.branch_n,
                odd_pi: odd,
                offset: mid - odd,
            }
        })
        .collect();
    let mut plateaus: Vec<Plateau> = Vec::new();
    for (d, s) in &ok {
        let n = s.branch_n;
        let centre = 2.0 * PI * n as f64;
        if (d - centre).abs() > PI - 0.2 {
            continue;
        }
        let dev = (s.k_m - centre).abs();
        match plateaus.iter_mut().find(|p| p.branch == n) {
            Some(p) => p.max_deviation = p.max_deviation.max(dev),
            None => plateaus.push(Plateau {
                branch: n,
                max_deviation: dev,
            }),
        }
    }
    out.json(
        "universal_summary.json",
        &UniversalSummary {
            failed_rows: rows.len() - ok.len(),
            jumps,
            plateaus,
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JumpHeightsConfig {
    pub schema_version: u32,
    /// Jump indices `n`, located at `Δφ = π(2n+1)`.
    pub n_list: Vec<u32>,
    pub np_min: f64,
    pub np_max: f64,
    pub np_points: usize,
    /// `N_p` at which the spread across `check_n` is reported.
    pub check_n_periods: f64,
    pub check_n: Vec<u32>,
}

impl Default for JumpHeightsConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            n_list: (1..=8).collect(),
            np_min: 1.0,
            np_max: 20.0,
            np_points: 96,
            check_n_periods: 5.61,
            check_n: (3..=8).collect(),
        }
    }
}

#[derive(Serialize)]
struct JumpCheck {
    n: u32,
    monotone_decreasing: bool,
}

#[derive(Serialize)]
struct JumpSummary {
    monotonicity: Vec<JumpCheck>,
    check_n_periods: f64,
    /// `ΔK_M/κ` at `check_n_periods` for each of `check_n`.
    heights: Vec<(u32, f64)>,
    relative_spread: f64,
}

pub fn jump_heights(cfg: &JumpHeightsConfig, out: &mut OutDir) -> Result<(), CliError> {
    check_schema(cfg.schema_version)?;
    if cfg.n_list.is_empty() || cfg.check_n.is_empty() {
        return Err(CliError::Config(
            "n_list and check_n must not be empty".into(),
        ));
    }
    let np = linspace(cfg.np_min, cfg.np_max, cfg.np_points)?;
    let curves = jump_vs_periods(&cfg.n_list, &np)?;
    write_jump_curves_csv(&curves, out.writer("jump_heights.csv")?)?;
    let monotonicity = curves
        .iter()
        .map(|c| JumpCheck {
            n: c.n,
            monotone_decreasing: c.dk_over_kappa.windows(2).all(|w| w[1] < w[0]),
        })
        .collect();
    let at = jump_vs_periods(&cfg.check_n, &[cfg.check_n_periods])?;
    let heights: Vec<(u32, f64)> = at.iter().map(|c| (c.n, c.dk_over_kappa[0])).collect();
    let spread = relative_spread(&heights.iter().map(|h| h.1).collect::<Vec<_>>())?;
    out.json(
        "jump_summary.json",
        &JumpSummary {
            monotonicity,
            check_n_periods: cfg.check_n_periods,
            heights,
            relative_spread: spread,
        },
    )
}
