//! Full pulse-sequence simulation at one or more `T₂`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use moire::sequence::{
    calibrate_current, run_sequence, SequenceConfig, SequenceRun, SequenceSummary,
};
use moire::signal::fmt_f64;

use crate::config::{check_schema, SCHEMA_VERSION};
use crate::error::CliError;
use crate::output::OutDir;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    pub sequence: SequenceConfig,
    /// Deceleration pulse durations to run, in μs.
    pub t2_values: Vec<f64>,
    /// Calibrate the chip current at `sequence.t2` to this `N_p` first.
    pub calibrate_n_periods: Option<f64>,
    pub write_patterns: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            sequence: SequenceConfig::default(),
            t2_values: vec![200.0, 400.0, 600.0],
            calibrate_n_periods: Some(5.61),
            write_patterns: true,
        }
    }
}

#[derive(Serialize)]
struct SimulateReport {
    current: f64,
    calibrated: bool,
    runs: Vec<SequenceSummary>,
    max_gamma_drift: f64,
    /// Largest `|θ₁ - θ₂|` in rad.
    max_theta_difference: f64,
    max_separation_ratio: f64,
    /// Largest `|N_p/target - 1|` over both spins and all runs.
    max_n_periods_deviation: Option<f64>,
}

fn tag(t2: f64) -> String {
    format!("{t2}").replace('.', "p")
}

pub fn simulate(cfg: &SimulateConfig, out: &mut OutDir) -> Result<(), CliError> {
    check_schema(cfg.schema_version)?;
    cfg.sequence.validate()?;
    if cfg.t2_values.is_empty() {
        return Err(CliError::Config("t2_values must not be empty".into()));
    }
    let base = match cfg.calibrate_n_periods {
        Some(target) => calibrate_current(&cfg.sequence, target)?,
        None => cfg.sequence,
    };
    let runs: Vec<SequenceRun> = cfg
        .t2_values
        .par_iter()
        .map(|&t2| run_sequence(&SequenceConfig { t2, ..base }))
        .collect::<moire::Result<_>>()?;

    let mut wr = csv::Writer::from_writer(out.writer("checkpoints.csv")?);
    wr.write_record([
        "t2_us",
        "time_us",
        "spin",
        "gamma",
        "gamma_overlap",
        "chi_rad",
        "kappa_rad_per_um",
        "sigma_um",
        "n_periods",
        "delta_z_um",
        "separation_ratio",
        "xi",
    ])?;
    for run in &runs {
        for r in &run.records {
            wr.write_record([
                fmt_f64(run.config.t2),
                fmt_f64(r.time),
                r.spin.to_string(),
                fmt_f64(r.gamma),
                fmt_f64(r.gamma_overlap),
                fmt_f64(r.chi),
                fmt_f64(r.kappa),
                fmt_f64(r.sigma),
                fmt_f64(r.n_periods),
                fmt_f64(r.delta_z),
                fmt_f64(r.separation_ratio),
                fmt_f64(r.xi),
            ])?;
        }
    }
    wr.flush()?;

    let mut wr = csv::Writer::from_writer(out.writer("summary.csv")?);
    wr.write_record([
        "t2_us",
        "kappa1_rad_per_um",
        "kappa2_rad_per_um",
        "theta1_rad",
        "theta2_rad",
        "delta_phi_rad",
        "delta_z_um",
        "sigma_um",
        "n_periods1",
        "n_periods2",
        "gamma_drift",
        "separation_ratio",
        "k_m_model_rad_per_um",
        "k_m_spectrum_rad_per_um",
    ])?;
    for run in &runs {
        let s = &run.summary;
        wr.write_record(
            [
                s.t2,
                s.kappa1,
                s.kappa2,
                s.theta1,
                s.theta2,
                s.delta_phi,
                s.delta_z,
                s.sigma,
                s.n_periods1,
                s.n_periods2,
                s.gamma_drift,
                s.separation_ratio,
                s.k_m_model,
                s.k_m_spectrum,
            ]
            .map(fmt_f64),
        )?;
    }
    wr.flush()?;

    if cfg.write_patterns {
        for run in &runs {
            let t = tag(run.config.t2);
            run.moire
                .write_csv_named(out.writer(&format!("moire_t2_{t}.csv"))?, "density_arb")?;
            run.spin1
                .write_csv_named(out.writer(&format!("spin1_t2_{t}.csv"))?, "density_arb")?;
            run.spin2
                .write_csv_named(out.writer(&format!("spin2_t2_{t}.csv"))?, "density_arb")?;
        }
    }

    let fold = |f: &dyn Fn(&SequenceSummary) -> f64| {
        runs.iter().map(|r| f(&r.summary)).fold(0.0, f64::max)
    };
    let np_dev = cfg.calibrate_n_periods.map(|target| {
        fold(&|s| {
            ((s.n_periods1 / target) - 1.0)
                .abs()
                .max(((s.n_periods2 / target) - 1.0).abs())
        })
    });
    out.json(
        "report.json",
        &SimulateReport {
            current: base.field.current,
            calibrated: cfg.calibrate_n_periods.is_some(),
            runs: runs.iter().map(|r| r.summary).collect(),
            max_gamma_drift: fold(&|s| s.gamma_drift),
            max_theta_difference: fold(&|s| moire::units::wrap_pi(s.theta1 - s.theta2).abs()),
            max_separation_ratio: fold(&|s| s.separation_ratio),
            max_n_periods_deviation: np_dev,
        },
    )
}
