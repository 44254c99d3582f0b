//! `K_M` along the experimental `T₂` trajectory.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use moire::rigidity::{find_jumps, visibility_model, Jump, MethodsModel, TrajectoryPoint};
use moire::signal::fmt_f64;
use moire::spectral::{solve_km_model, AftModel};

use super::{linspace, opt};
use crate::config::{check_schema, SCHEMA_VERSION};
use crate::error::CliError;
use crate::output::OutDir;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub schema_version: u32,
    pub model: MethodsModel,
    /// μs.
    pub t2_min: f64,
    pub t2_max: f64,
    pub t2_points: usize,
    /// Visibility model `v₀/2 cos Δφ + c`.
    pub v0: f64,
    pub c: f64,
    /// Minimum height ratio of a reported secondary AFT maximum.
    pub secondary_threshold: f64,
    pub heatmap: bool,
    /// Every `heatmap_stride`-th `T₂` row goes into the heat map.
    pub heatmap_stride: usize,
    /// rad/μm.
    pub heatmap_k_max: f64,
    pub heatmap_k_points: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: MethodsModel::default(),
            t2_min: 160.0,
            t2_max: 800.0,
            t2_points: 641,
            v0: 1.0,
            c: 0.5,
            secondary_threshold: 0.2,
            heatmap: true,
            heatmap_stride: 4,
            heatmap_k_max: 0.2,
            heatmap_k_points: 201,
        }
    }
}

/// Second-highest local maximum of the AFT on a grid around the peak.
fn secondary_peak(m: &AftModel, k_m: f64, threshold: f64) -> Option<(f64, f64)> {
    let n = 2000;
    let hi = 3.0 * m.kappa.max(k_m);
    let ks: Vec<f64> = (0..=n).map(|i| hi * i as f64 / n as f64).collect();
    let a: Vec<f64> = ks.iter().map(|&k| m.aft(k)).collect();
    let top = m.aft(k_m);
    let mut best: Option<(f64, f64)> = None;
    for i in 1..n {
        if a[i] > a[i - 1] && a[i] >= a[i + 1] && (ks[i] - k_m).abs() > 2.0 * hi / n as f64 {
            let r = a[i] / top;
            if r >= threshold && best.is_none_or(|b| r > b.1) {
                best = Some((ks[i], r));
            }
        }
    }
    best
}

struct Row {
    t2: f64,
    kappa: Option<f64>,
    delta_phi: f64,
    result: Result<(TrajectoryPoint, Option<(f64, f64)>), String>,
}

#[derive(Serialize)]
struct JumpCheck {
    jump: Jump,
    /// `π(2n+1)` between the branches.
    delta_phi_odd_pi: f64,
    /// `T₂` where `Δφ(T₂) = π(2n+1)`.
    t2_predicted: f64,
    within_grid_step: bool,
    /// Nearest local minimum of the visibility model.
    t2_visibility_min: Option<f64>,
}

#[derive(Serialize)]
struct PlateauCheck {
    branch: i64,
    t2_start: f64,
    t2_end: f64,
    /// `(max - min)/mean` of `K_M` on the plateau.
    flatness: f64,
}

#[derive(Serialize)]
struct ScanSummary {
    failed_rows: usize,
    grid_step: f64,
    jumps: Vec<JumpCheck>,
    plateaus: Vec<PlateauCheck>,
}

pub fn scan_t2(cfg: &ScanConfig, out: &mut OutDir) -> Result<(), CliError> {
    check_schema(cfg.schema_version)?;
    if cfg.heatmap_stride == 0 {
        return Err(CliError::Config("heatmap_stride must be at least 1".into()));
    }
    let grid = linspace(cfg.t2_min, cfg.t2_max, cfg.t2_points)?;
    let m = &cfg.model;
    let rows: Vec<Row> = grid
        .par_iter()
        .map(|&t2| {
            let dphi = m.delta_phi(t2);
            let kappa = m.kappa(t2).ok();
            let result = m
                .aft_model(t2)
                .and_then(|a| {
                    let s = solve_km_model(&a)?;
                    Ok((a, s))
                })
                .map(|(a, s)| {
                    let point = TrajectoryPoint {
                        t2,
                        kappa: a.kappa,
                        delta_phi: dphi,
                        solve: s,
                        visibility: visibility_model(dphi, cfg.v0, cfg.c),
                    };
                    (point, secondary_peak(&a, s.k_m, cfg.secondary_threshold))
                })
                .map_err(|e| e.to_string());
            Row {
                t2,
                kappa,
                delta_phi: dphi,
                result,
            }
        })
        .collect();

    let mut wr = csv::Writer::from_writer(out.writer("trajectory.csv")?);
    wr.write_record([
        "t2_us",
        "kappa_rad_per_um",
        "delta_phi_rad",
        "k_m_rad_per_um",
        "k_m_alt_rad_per_um",
        "secondary_k_rad_per_um",
        "secondary_relative_intensity",
        "branch",
        "visibility_model",
        "status",
    ])?;
    for r in &rows {
        let vis = fmt_f64(visibility_model(r.delta_phi, cfg.v0, cfg.c));
        match &r.result {
            Ok((p, sec)) => wr.write_record([
                fmt_f64(r.t2),
                fmt_f64(p.kappa),
                fmt_f64(r.delta_phi),
                fmt_f64(p.solve.k_m),
                opt(p.solve.alternate),
                opt(sec.map(|s| s.0)),
                opt(sec.map(|s| s.1)),
                p.solve.branch_n.to_string(),
                vis,
                "ok".into(),
            ])?,
            Err(e) => wr.write_record([
                fmt_f64(r.t2),
                opt(r.kappa),
                fmt_f64(r.delta_phi),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                vis,
                e.clone(),
            ])?,
        }
    }
    wr.flush()?;

    let points: Vec<TrajectoryPoint> = rows
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(|x| x.0))
        .collect();
    let step = grid[1] - grid[0];
    let vis_min = |t: f64| -> Option<f64> {
        let v: Vec<f64> = grid
            .iter()
            .map(|&x| visibility_model(m.delta_phi(x), cfg.v0, cfg.c))
            .collect();
        (1..grid.len() - 1)
            .filter(|&i| v[i] < v[i - 1] && v[i] <= v[i + 1])
            .map(|i| grid[i])
            .min_by(|a, b| (a - t).abs().total_cmp(&(b - t).abs()))
    };
    let jumps = find_jumps(&points)
        .into_iter()
        .map(|j| {
            let n = j.branch_left.min(j.branch_right);
            let odd = PI * (2 * n + 1) as f64;
            let t2_predicted = if odd > m.phi0 {
                (m.a / (odd - m.phi0)).sqrt()
            } else {
                f64::NAN
            };
            let within =
                t2_predicted >= j.t2_left - 1e-9 * step && t2_predicted <= j.t2_right + 1e-9 * step;
            JumpCheck {
                jump: j,
                delta_phi_odd_pi: odd,
                t2_predicted,
                within_grid_step: within,
                t2_visibility_min: vis_min(0.5 * (j.t2_left + j.t2_right)),
            }
        })
        .collect();

    let mut plateaus: Vec<PlateauCheck> = Vec::new();
    let mut start = 0;
    for i in 1..=points.len() {
        if i == points.len() || points[i].solve.branch_n != points[start].solve.branch_n {
            let km: Vec<f64> = points[start..i].iter().map(|p| p.solve.k_m).collect();
            let max = km.iter().copied().fold(f64::MIN, f64::max);
            let min = km.iter().copied().fold(f64::MAX, f64::min);
            let mean = km.iter().sum::<f64>() / km.len() as f64;
            plateaus.push(PlateauCheck {
                branch: points[start].solve.branch_n,
                t2_start: points[start].t2,
                t2_end: points[i - 1].t2,
                flatness: (max - min) / mean,
            });
            start = i;
        }
    }
    out.json(
        "jumps.json",
        &ScanSummary {
            failed_rows: rows.len() - points.len(),
            grid_step: step,
            jumps,
            plateaus,
        },
    )?;

    if cfg.heatmap {
        let ks = linspace(0.0, cfg.heatmap_k_max, cfg.heatmap_k_points)?;
        let mut wr = csv::Writer::from_writer(out.writer("aft_heatmap.csv")?);
        wr.write_record(["t2_us", "k_rad_per_um", "aft_um"])?;
        for &t2 in grid.iter().step_by(cfg.heatmap_stride) {
            let Ok(a) = m.aft_model(t2) else { continue };
            for &k in &ks {
                wr.write_record([fmt_f64(t2), fmt_f64(k), fmt_f64(a.aft(k))])?;
            }
        }
        wr.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secondary_peak_appears_near_odd_pi_only() {
        let near = AftModel::from_periods(1.0, 5.61, 3.0 * PI - 0.1).unwrap();
        let s = solve_km_model(&near).unwrap();
        let sec = secondary_peak(&near, s.k_m, 0.2).unwrap();
        assert!(sec.1 > 0.8 && sec.1 <= 1.0, "{sec:?}");
        let far = AftModel::from_periods(1.0, 5.61, 4.0 * PI).unwrap();
        let s = solve_km_model(&far).unwrap();
        assert!(secondary_peak(&far, s.k_m, 0.2).is_none());
    }
}
