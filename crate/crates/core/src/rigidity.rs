//! Rigidity and jumps of the moiré wavenumber along parameter trajectories.
//!
//! With `κσ` fixed, `K_M` depends only on `κ` and `Δφ`. Along
//! `κ(Δφ) = κ₀ √(Δφ² + π² N_p²)` the slope `dK_M/dΔφ` vanishes at every
//! `Δφ = 2πn`, which is the rigidity condition; across `Δφ = π(2n+1)` the
//! peak hops to the neighbouring tangent branch.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::pattern::{generate_pattern, ModelParams};
use crate::signal::fmt_f64;
use crate::spectral::{
    jump_height, numerical_spectrum, solve_km_model, AftModel, PeakSolve, SpectrumOptions,
};

/// Phenomenological `T₂` dependence of the moiré parameters.
///
/// `Δφ(T₂) = a/T₂² + φ₀` and `κ_i(T₂) = 2π a_i / √(T₂ + b_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodsModel {
    /// μs².
    pub a: f64,
    /// rad.
    pub phi0: f64,
    /// μm⁻¹ μs^½.
    pub a1: f64,
    /// μs.
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub n_periods: f64,
}

impl Default for MethodsModel {
    fn default() -> Self {
        Self {
            a: 163e3,
            phi0: 1.3,
            a1: 0.175,
            b1: -56.0,
            a2: 0.183,
            b2: -56.0,
            n_periods: 5.61,
        }
    }
}

impl MethodsModel {
    pub fn delta_phi(&self, t2: f64) -> f64 {
        self.a / (t2 * t2) + self.phi0
    }

    /// Single-state wavenumber of spin `i ∈ {1, 2}`.
    pub fn kappa_i(&self, i: u8, t2: f64) -> Result<f64> {
        let (a, b) = match i {
            1 => (self.a1, self.b1),
            2 => (self.a2, self.b2),
            _ => return param(format!("spin index must be 1 or 2, got {i}")),
        };
        if t2 + b <= 0.0 {
            return param(format!("T2 = {t2} us is not above -b{i} = {}", -b));
        }
        Ok(2.0 * PI * a / (t2 + b).sqrt())
    }

    pub fn kappa(&self, t2: f64) -> Result<f64> {
        Ok(0.5 * (self.kappa_i(1, t2)? + self.kappa_i(2, t2)?))
    }

    /// `σ = π N_p / 2κ`.
    pub fn sigma(&self, t2: f64) -> Result<f64> {
        Ok(PI * self.n_periods / (2.0 * self.kappa(t2)?))
    }

    pub fn aft_model(&self, t2: f64) -> Result<AftModel> {
        AftModel::new(self.kappa(t2)?, self.sigma(t2)?, self.delta_phi(t2))
    }
}

/// Visibility of the moiré pattern, `v₀/2 cos Δφ + c`.
pub fn visibility_model(delta_phi: f64, v0: f64, c: f64) -> f64 {
    0.5 * v0 * delta_phi.cos() + c
}

/// Parameters sampled along a `T₂` grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub t2: Vec<f64>,
    pub kappa1: Vec<f64>,
    pub kappa2: Vec<f64>,
    pub kappa: Vec<f64>,
    pub delta_phi: Vec<f64>,
    pub n_periods: f64,
}

/// One row of a trajectory with its solved moiré wavenumber.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t2: f64,
    pub kappa: f64,
    pub delta_phi: f64,
    pub solve: PeakSolve,
    pub visibility: f64,
}

/// A change of tangent branch between two neighbouring grid points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub t2_left: f64,
    pub t2_right: f64,
    pub branch_left: i64,
    pub branch_right: i64,
    pub km_left: f64,
    pub km_right: f64,
}

/// Evaluates a [`MethodsModel`] on `t2_grid`.
pub fn experimental_trajectory(model: &MethodsModel, t2_grid: &[f64]) -> Result<Trajectory> {
    if !(model.n_periods > 0.0) {
        return param("N_p must be positive");
    }
    let mut tr = Trajectory {
        t2: t2_grid.to_vec(),
        kappa1: Vec::with_capacity(t2_grid.len()),
        kappa2: Vec::with_capacity(t2_grid.len()),
        kappa: Vec::with_capacity(t2_grid.len()),
        delta_phi: Vec::with_capacity(t2_grid.len()),
        n_periods: model.n_periods,
    };
    for &t in t2_grid {
        let k1 = model.kappa_i(1, t)?;
        let k2 = model.kappa_i(2, t)?;
        tr.kappa1.push(k1);
        tr.kappa2.push(k2);
        tr.kappa.push(0.5 * (k1 + k2));
        tr.delta_phi.push(model.delta_phi(t));
    }
    Ok(tr)
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t2.is_empty()
    }

    pub fn sigma(&self, i: usize) -> f64 {
        PI * self.n_periods / (2.0 * self.kappa[i])
    }

    /// Solves `K_M` at every point; visibility uses `v₀ = 1`, `c = ½`.
    pub fn solve(&self) -> Result<Vec<TrajectoryPoint>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let m = AftModel::new(self.kappa[i], self.sigma(i), self.delta_phi[i])?;
                Ok(TrajectoryPoint {
                    t2: self.t2[i],
                    kappa: self.kappa[i],
                    delta_phi: self.delta_phi[i],
                    solve: solve_km_model(&m)?,
                    visibility: visibility_model(self.delta_phi[i], 1.0, 0.5),
                })
            })
            .collect()
    }

    /// `√((2σ)² + Δz²)` at every point.
    pub fn rigidity_length(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| rigidity_length(self.kappa[i], self.n_periods, self.delta_phi[i]))
            .collect()
    }
}

/// Branch changes between consecutive points.
pub fn find_jumps(points: &[TrajectoryPoint]) -> Vec<Jump> {
    points
        .windows(2)
        .filter(|w| w[0].solve.branch_n != w[1].solve.branch_n)
        .map(|w| Jump {
            t2_left: w[0].t2,
            t2_right: w[1].t2,
            branch_left: w[0].solve.branch_n,
            branch_right: w[1].solve.branch_n,
            km_left: w[0].solve.k_m,
            km_right: w[1].solve.k_m,
        })
        .collect()
}

/// Writes `t2_us, kappa, delta_phi, k_m, k_m_alt, branch, visibility_model`.
pub fn write_trajectory_csv<W: Write>(points: &[TrajectoryPoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "t2_us",
        "kappa_rad_per_um",
        "delta_phi_rad",
        "k_m_rad_per_um",
        "k_m_alt_rad_per_um",
        "branch",
        "visibility_model",
    ])?;
    for p in points {
        wr.write_record([
            fmt_f64(p.t2),
            fmt_f64(p.kappa),
            fmt_f64(p.delta_phi),
            fmt_f64(p.solve.k_m),
            p.solve.alternate.map(fmt_f64).unwrap_or_default(),
            p.solve.branch_n.to_string(),
            fmt_f64(p.visibility),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// `√((2σ)² + Δz²)` with `σ = πN_p/2κ` and `Δz = Δφ/κ`.
pub fn rigidity_length(kappa: f64, n_periods: f64, delta_phi: f64) -> f64 {
    (PI * PI * n_periods * n_periods + delta_phi * delta_phi).sqrt() / kappa
}

/// The rigid trajectory `κ₀ √(Δφ² + π² N_p²)`.
pub fn rigid_kappa(kappa0: f64, n_periods: f64, delta_phi: f64) -> f64 {
    kappa0 * (delta_phi * delta_phi + PI * PI * n_periods * n_periods).sqrt()
}

/// `K_M` on a (κ, Δφ) grid at fixed `N_p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceMap {
    pub kappa_axis: Vec<f64>,
    pub dphi_axis: Vec<f64>,
    pub n_periods: f64,
    /// Row-major over Δφ; `NaN` marks cells where the solver failed.
    pub km: Vec<f64>,
}

impl SurfaceMap {
    pub fn get(&self, i_dphi: usize, i_kappa: usize) -> f64 {
        self.km[i_dphi * self.kappa_axis.len() + i_kappa]
    }

    /// Long-format CSV. With `kappa0` set, each row also carries the rigid
    /// trajectory's κ at that Δφ.
    pub fn write_csv<W: Write>(&self, w: W, kappa0: Option<f64>) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["kappa_rad_per_um", "delta_phi_rad", "k_m_rad_per_um"];
        if kappa0.is_some() {
            header.push("trajectory_kappa_rad_per_um");
        }
        wr.write_record(&header)?;
        for (i, &d) in self.dphi_axis.iter().enumerate() {
            for (j, &k) in self.kappa_axis.iter().enumerate() {
                let v = self.get(i, j);
                let mut row = vec![
                    fmt_f64(k),
                    fmt_f64(d),
                    if v.is_nan() {
                        String::new()
                    } else {
                        fmt_f64(v)
                    },
                ];
                if let Some(k0) = kappa0 {
                    row.push(fmt_f64(rigid_kappa(k0, self.n_periods, d)));
                }
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Solves `K_M` on every cell of the grid in parallel.
pub fn km_surface(kappa_axis: &[f64], dphi_axis: &[f64], n_periods: f64) -> Result<SurfaceMap> {
    if !(n_periods > 0.0) || kappa_axis.is_empty() || dphi_axis.is_empty() {
        return param("km_surface needs N_p > 0 and non-empty axes");
    }
    let nk = kappa_axis.len();
    let km = (0..nk * dphi_axis.len())
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / nk, c % nk);
            AftModel::from_periods(kappa_axis[j], n_periods, dphi_axis[i])
                .and_then(|m| solve_km_model(&m))
                .map(|s| s.k_m)
                .unwrap_or(f64::NAN)
        })
        .collect();
    Ok(SurfaceMap {
        kappa_axis: kappa_axis.to_vec(),
        dphi_axis: dphi_axis.to_vec(),
        n_periods,
        km,
    })
}

/// `K_M` of a mixed-wavenumber pattern from its numerical spectrum.
///
/// The two constituents are centred at `∓Δz/2` with `Δz = Δφ/κ̄`.
pub fn km_mixed(kappa1: f64, kappa2: f64, sigma: f64, delta_phi: f64) -> Result<f64> {
    let kbar = 0.5 * (kappa1 + kappa2);
    let mut p = ModelParams::symmetric(kbar, sigma, delta_phi, 0.0);
    p.kappa1 = kappa1;
    p.kappa2 = kappa2;
    let half = 0.5 * p.delta_z().abs() + 8.0 * sigma;
    let n = ((2.0 * half * 8.0 * p.kappa_max() / PI).ceil() as usize).max(4096);
    let grid = crate::signal::GridSpec::centered(0.0, half, n)?;
    let s = generate_pattern(&p, &grid)?;
    let env = crate::fitting::fit_envelope(&s)?;
    Ok(
        numerical_spectrum(&s, &env.envelope, &SpectrumOptions::default())?
            .primary
            .k,
    )
}

/// Step of the centred difference in [`plateau_slope`].
pub const SLOPE_STEP: f64 = 1e-4;

/// `dK_M/dΔφ` at `Δφ = 2πn` for `κ = kappa_fn(Δφ)` at fixed `N_p`:
/// `∂κ/∂Δφ - 2πnκ/((2πn)² + π²N_p²)`. For `n = 0` only `∂κ/∂Δφ`.
pub fn plateau_slope(kappa_fn: impl Fn(f64) -> f64, n_periods: f64, n: u32) -> f64 {
    let d = 2.0 * PI * n as f64;
    let h = SLOPE_STEP;
    let dk = (kappa_fn(d + h) - kappa_fn(d - h)) / (2.0 * h);
    if n == 0 {
        return dk;
    }
    dk - d * kappa_fn(d) / (d * d + PI * PI * n_periods * n_periods)
}

/// Jump heights `ΔK_M/κ` against `N_p` for one jump index `n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpCurve {
    pub n: u32,
    /// `π(2n+1)`.
    pub delta_phi: f64,
    pub n_periods: Vec<f64>,
    pub dk_over_kappa: Vec<f64>,
}

/// One [`JumpCurve`] per entry of `n_list`.
pub fn jump_vs_periods(n_list: &[u32], np_values: &[f64]) -> Result<Vec<JumpCurve>> {
    if np_values.iter().any(|&v| !(v > 0.0)) {
        return param("N_p values must be positive");
    }
    n_list
        .iter()
        .map(|&n| {
            let dk: Result<Vec<f64>> = np_values
                .iter()
                .map(|&np| jump_height(n, 1.0, PI * np / 2.0))
                .collect();
            Ok(JumpCurve {
                n,
                delta_phi: PI * (2 * n + 1) as f64,
                n_periods: np_values.to_vec(),
                dk_over_kappa: dk?,
            })
        })
        .collect()
}

/// Writes `n, delta_phi_rad, n_periods, dk_over_kappa`.
pub fn write_jump_curves_csv<W: Write>(curves: &[JumpCurve], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["n", "delta_phi_rad", "n_periods", "dk_over_kappa"])?;
    for c in curves {
        for (np, dk) in c.n_periods.iter().zip(&c.dk_over_kappa) {
            wr.write_record([
                c.n.to_string(),
                fmt_f64(c.delta_phi),
                fmt_f64(*np),
                fmt_f64(*dk),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Relative spread `(max - min)/mean` of a set of values.
pub fn relative_spread(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Parameter("empty set".into()));
    }
    let max = v.iter().copied().fold(f64::MIN, f64::max);
    let min = v.iter().copied().fold(f64::MAX, f64::min);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Ok((max - min) / mean)
}
