//! Wigner functions of two-Gaussian superpositions and their rotation under
//! harmonic evolution.
//!
//! `W(x, p) = (1/2π) ∫ ψ*(x + y/2) ψ(x - y/2) e^{ipy} dy` with `p` a
//! wavenumber, normalised so that `∫∫ W dx dp = 1`. Rotations act in the
//! scaled coordinates `X = x/ℓ`, `P = pℓ` with `ℓ = √(ħ/mω)`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::pattern::unwrap_phase;
use crate::signal::{fmt_f64, GridSpec};
use crate::units::wrap_pi;
use crate::wavepacket::{evolve_quadratic, overlap, GaussianWavepacket, LocalQuadratic};

/// Phase-space samples, row-major with one row per `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    /// Positions in μm.
    pub x_grid: GridSpec,
    /// Wavenumbers in rad/μm.
    pub p_grid: GridSpec,
    pub values: Vec<f64>,
    /// `Σ W dx dp`.
    pub norm: f64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dtype: String,
    layout: String,
    x_grid: GridSpec,
    p_grid: GridSpec,
    norm: f64,
}

impl WignerGrid {
    fn from_values(x_grid: GridSpec, p_grid: GridSpec, values: Vec<f64>) -> Self {
        let norm = values.iter().sum::<f64>() * x_grid.step * p_grid.step;
        Self {
            x_grid,
            p_grid,
            values,
            norm,
        }
    }

    pub fn value(&self, ix: usize, ip: usize) -> f64 {
        self.values[ip * self.x_grid.len + ix]
    }

    /// `∫ W dp` on the x grid.
    pub fn x_marginal(&self) -> Vec<f64> {
        let nx = self.x_grid.len;
        let mut m = vec![0.0; nx];
        for row in self.values.chunks(nx) {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        m.iter().map(|v| v * self.p_grid.step).collect()
    }

    /// `∫ W dx` on the p grid.
    pub fn p_marginal(&self) -> Vec<f64> {
        self.values
            .chunks(self.x_grid.len)
            .map(|row| row.iter().sum::<f64>() * self.x_grid.step)
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes little-endian float64 values to `path` and the axes to
    /// `path` with a `.json` extension.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        let side = Sidecar {
            dtype: "float64-le".into(),
            layout: "row-major, one row per p".into(),
            x_grid: self.x_grid,
            p_grid: self.p_grid,
            norm: self.norm,
        };
        std::fs::write(
            path.with_extension("json"),
            serde_json::to_string_pretty(&side)?,
        )?;
        Ok(())
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
        let bytes = std::fs::read(path)?;
        let n = side.x_grid.len * side.p_grid.len;
        if bytes.len() != 8 * n {
            return Err(Error::Config(format!(
                "expected {} bytes of float64 data, found {}",
                8 * n,
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            x_grid: side.x_grid,
            p_grid: side.p_grid,
            values,
            norm: side.norm,
        })
    }

    /// Long-format CSV; refused above a million cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        if self.values.len() > 1_000_000 {
            return param(format!(
                "{} cells is too many for CSV; use the binary export",
                self.values.len()
            ));
        }
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x_um", "p_rad_per_um", "w_per_um_rad"])?;
        for ip in 0..self.p_grid.len {
            for ix in 0..self.x_grid.len {
                wr.write_record([
                    fmt_f64(self.x_grid.at(ix)),
                    fmt_f64(self.p_grid.at(ip)),
                    fmt_f64(self.value(ix, ip)),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Cross Wigner function `(1/2π) ∫ ψ_a*(x + y/2) ψ_b(x - y/2) e^{ipy} dy`.
pub fn cross_wigner(a: &GaussianWavepacket, b: &GaussianWavepacket, x: f64, p: f64) -> Complex64 {
    let i = Complex64::i();
    let (aa, ab) = (a.a().conj(), b.a());
    let (u, v) = (x - a.center, x - b.center);
    let alpha = 0.25 * i * (aa - ab);
    let beta = -i * aa * u - i * ab * v - 0.5 * i * (a.momentum + b.momentum) + i * p;
    let log_norm = (a.weight * b.weight).ln()
        - 0.25 * (2.0 * PI * a.width * a.width).ln()
        - 0.25 * (2.0 * PI * b.width * b.width).ln();
    let gamma = -i * aa * u * u - i * a.momentum * u
        + i * ab * v * v
        + i * b.momentum * v
        + i * (b.global_phase - a.global_phase)
        + log_norm;
    (PI / alpha).sqrt() / (2.0 * PI) * (beta * beta / (4.0 * alpha) + gamma).exp()
}

fn check_pair(a: &GaussianWavepacket, b: &GaussianWavepacket) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    if a.spin != b.spin {
        return Err(Error::ModelAssumption(format!(
            "superposed packets must share a spin state, got {} and {}",
            a.spin, b.spin
        )));
    }
    let norm = a.weight * a.weight + b.weight * b.weight + 2.0 * overlap(a, b).re;
    if !(norm > 0.0) {
        return param("the superposition has zero norm");
    }
    Ok(norm)
}

fn check_fringe_resolution(
    a: &GaussianWavepacket,
    b: &GaussianWavepacket,
    x: &GridSpec,
    p: &GridSpec,
) -> Result<()> {
    let dk = (b.momentum - a.momentum).abs();
    let dq = (b.center - a.center).abs();
    if dk > 0.0 && 2.0 * PI / dk < 4.0 * x.step {
        return Err(Error::Resolution(format!(
            "fringe wavelength {:.3e} um along x is below four steps of {:.3e} um",
            2.0 * PI / dk,
            x.step
        )));
    }
    if dq > 0.0 && 2.0 * PI / dq < 4.0 * p.step {
        return Err(Error::Resolution(format!(
            "fringe wavelength {:.3e} rad/um along p is below four steps of {:.3e} rad/um",
            2.0 * PI / dq,
            p.step
        )));
    }
    Ok(())
}

/// Axes covering both packets with six widths of margin in `x` and ten
/// momentum widths (five over `σ` when unchirped) in `p`.
pub fn pair_axes(
    a: &GaussianWavepacket,
    b: &GaussianWavepacket,
    n: usize,
) -> Result<(GridSpec, GridSpec)> {
    let sx = a.width.max(b.width);
    let sk = |w: &GaussianWavepacket| {
        (0.25 / (w.width * w.width) + w.quad_phase * w.quad_phase * w.width * w.width).sqrt()
    };
    let sp = sk(a).max(sk(b));
    let (x_lo, x_hi) = (
        a.center.min(b.center) - 6.0 * sx,
        a.center.max(b.center) + 6.0 * sx,
    );
    let (p_lo, p_hi) = (
        a.momentum.min(b.momentum) - 10.0 * sp,
        a.momentum.max(b.momentum) + 10.0 * sp,
    );
    Ok((
        GridSpec::centered(0.5 * (x_lo + x_hi), 0.5 * (x_hi - x_lo), n)?,
        GridSpec::centered(0.5 * (p_lo + p_hi), 0.5 * (p_hi - p_lo), n)?,
    ))
}

/// Wigner function of `ψ_a + ψ_b` on a 512² grid spanning both packets.
pub fn wigner_of_superposition(
    a: &GaussianWavepacket,
    b: &GaussianWavepacket,
) -> Result<WignerGrid> {
    let (x, p) = pair_axes(a, b, 512)?;
    wigner_on_axes(a, b, &x, &p)
}

/// Closed-form Wigner function of the normalised superposition `ψ_a + ψ_b`.
pub fn wigner_on_axes(
    a: &GaussianWavepacket,
    b: &GaussianWavepacket,
    x: &GridSpec,
    p: &GridSpec,
) -> Result<WignerGrid> {
    let norm = check_pair(a, b)?;
    check_fringe_resolution(a, b, x, p)?;
    let nx = x.len;
    let mut values = vec![0.0; nx * p.len];
    values.par_chunks_mut(nx).enumerate().for_each(|(ip, row)| {
        let pv = p.at(ip);
        for (ix, out) in row.iter_mut().enumerate() {
            let xv = x.at(ix);
            let w = cross_wigner(a, a, xv, pv).re
                + cross_wigner(b, b, xv, pv).re
                + 2.0 * cross_wigner(a, b, xv, pv).re;
            *out = w / norm;
        }
    });
    Ok(WignerGrid::from_values(*x, *p, values))
}

/// The same Wigner function by direct quadrature of the defining integral.
///
/// For each `x` the integrand is sampled at `y_n = (n - N/2) dy` with
/// `dy = 2π/(N dp)`, which turns the sum over `n` into one inverse FFT
/// producing every `p` of the grid.
pub fn wigner_numerical(
    a: &GaussianWavepacket,
    b: &GaussianWavepacket,
    x: &GridSpec,
    p: &GridSpec,
) -> Result<WignerGrid> {
    let norm = check_pair(a, b)?;
    check_fringe_resolution(a, b, x, p)?;
    let n = p.len;
    let dy = 2.0 * PI / (n as f64 * p.step);
    // The integrand vanishes once either argument leaves the packets.
    let support = (a.center - b.center).abs() + 14.0 * a.width.max(b.width);
    if 0.5 * n as f64 * dy < support {
        return Err(Error::Resolution(format!(
            "momentum step {:.3e} rad/um leaves a y window of ±{:.3e} um, below the support {:.3e} um",
            p.step,
            0.5 * n as f64 * dy,
            support
        )));
    }
    let ifft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_inverse(n);
    let psi = |z: f64| a.amplitude(z) + b.amplitude(z);
    let columns: Vec<Vec<f64>> = (0..x.len)
        .into_par_iter()
        .map(|ix| {
            let xv = x.at(ix);
            let mut buf: Vec<Complex64> = (0..n)
                .map(|k| {
                    let y = (k as f64 - 0.5 * n as f64) * dy;
                    psi(xv + 0.5 * y).conj()
                        * psi(xv - 0.5 * y)
                        * Complex64::from_polar(1.0, p.start * y)
                })
                .collect();
            ifft.process(&mut buf);
            buf.iter()
                .enumerate()
                .map(|(j, c)| {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign * c.re * dy / (2.0 * PI) / norm
                })
                .collect()
        })
        .collect();
    let nx = x.len;
    let mut values = vec![0.0; nx * n];
    for (ix, col) in columns.iter().enumerate() {
        for (ip, v) in col.iter().enumerate() {
            values[ip * nx + ix] = *v;
        }
    }
    Ok(WignerGrid::from_values(*x, *p, values))
}

/// `ℓ = √(ħ/mω)` in μm.
pub fn oscillator_length(omega: f64, hbar_over_m: f64) -> f64 {
    (hbar_over_m / omega).sqrt()
}

/// An `n × n` grid centred on the phase-space origin with half-width
/// `half_width` in scaled units, cell centres at `±(j + ½) d`.
pub fn scaled_square_axes(ell: f64, half_width: f64, n: usize) -> Result<(GridSpec, GridSpec)> {
    if !(ell > 0.0) || !(half_width > 0.0) || n < 8 {
        return param("scaled grid needs ell > 0, half_width > 0 and n >= 8");
    }
    let d = 2.0 * half_width / n as f64;
    let start = -half_width + 0.5 * d;
    Ok((
        GridSpec::new(start * ell, d * ell, n)?,
        GridSpec::new(start / ell, d / ell, n)?,
    ))
}

fn scaled_step(w: &WignerGrid, ell: f64) -> Result<f64> {
    let (x, p) = (&w.x_grid, &w.p_grid);
    let d = x.step / ell;
    let centred = |g: &GridSpec| (g.start + g.end()).abs() <= 1e-9 * (g.end() - g.start);
    if x.len != p.len || !centred(x) || !centred(p) || ((p.step * ell) - d).abs() > 1e-9 * d {
        return param(
            "rotation needs a square grid centred on the origin in scaled coordinates; \
             build the axes with scaled_square_axes",
        );
    }
    Ok(d)
}

/// Shifts every row `r` of an `n × n` array by `shift(r)` (in samples):
/// `out(j) = in(j + shift)`, evaluated spectrally.
fn shift_rows(values: &mut [f64], n: usize, shift: impl Fn(usize) -> f64 + Sync) {
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    values.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
        let s = shift(r);
        if s == 0.0 {
            return;
        }
        let mut buf: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fwd.process(&mut buf);
        for (m, c) in buf.iter_mut().enumerate() {
            let k = 2.0 * PI / n as f64;
            if 2 * m == n {
                *c *= (k * m as f64 * s).cos();
            } else {
                let ms = if 2 * m < n {
                    m as f64
                } else {
                    m as f64 - n as f64
                };
                *c *= Complex64::from_polar(1.0, k * ms * s);
            }
        }
        inv.process(&mut buf);
        for (o, c) in row.iter_mut().zip(&buf) {
            *o = c.re / n as f64;
        }
    });
}

fn transpose(values: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = values[i * n + j];
        }
    }
    out
}

/// `new(X, P) = old(-P, X)`.
fn quarter_turn(values: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for ip in 0..n {
        for ix in 0..n {
            out[ip * n + ix] = values[ix * n + (n - 1 - ip)];
        }
    }
    out
}

/// Largest scaled radius where `|W|` exceeds `1e-10` of its maximum.
fn support_radius(w: &WignerGrid, d: f64) -> f64 {
    let n = w.x_grid.len;
    let c = 0.5 * (n as f64 - 1.0);
    let thr = 1e-10 * w.max_abs();
    let mut r: f64 = 0.0;
    for ip in 0..n {
        for ix in 0..n {
            if w.values[ip * n + ix].abs() > thr {
                r = r.max(d * ((ix as f64 - c).powi(2) + (ip as f64 - c).powi(2)).sqrt());
            }
        }
    }
    r
}

/// Harmonic evolution for `tau` μs as a rigid phase-space rotation:
/// `W'(x, p) = W(x cos ωτ - (p/mω) sin ωτ, p cos ωτ + mωx sin ωτ)`.
///
/// Quarter turns are exact index permutations; the remainder, at most π/4,
/// is applied as three FFT shears. The grid must come from
/// [`scaled_square_axes`] and keep its support inside 0.6 of the half-width.
pub fn rotate_phase_space(
    w: &WignerGrid,
    omega: f64,
    tau: f64,
    hbar_over_m: f64,
) -> Result<WignerGrid> {
    if !(omega > 0.0) || !tau.is_finite() || !(hbar_over_m > 0.0) {
        return param("rotation needs omega > 0, finite tau and hbar/m > 0");
    }
    let ell = oscillator_length(omega, hbar_over_m);
    let d = scaled_step(w, ell)?;
    let n = w.x_grid.len;
    let half = 0.5 * n as f64 * d;
    let r = support_radius(w, d);
    if r > 0.6 * half {
        return Err(Error::Clipping(format!(
            "support reaches scaled radius {r:.3}, above 0.6 of the half-width {half:.3}"
        )));
    }
    let theta = omega * tau;
    let turns = (theta / (0.5 * PI)).round();
    let rest = theta - turns * 0.5 * PI;
    let mut v = w.values.clone();
    for _ in 0..(turns as i64).rem_euclid(4) {
        v = quarter_turn(&v, n);
    }
    if rest != 0.0 {
        let t = -(0.5 * rest).tan();
        let u = rest.sin();
        let c = 0.5 * (n as f64 - 1.0);
        // Rows run along X at fixed P; columns along P at fixed X. A shear
        // f(X + tP, P) shifts row ip by t P_ip / d samples.
        let along_x = |v: &mut Vec<f64>| shift_rows(v, n, |ip| t * (ip as f64 - c));
        along_x(&mut v);
        let mut tr = transpose(&v, n);
        shift_rows(&mut tr, n, |ix| u * (ix as f64 - c));
        v = transpose(&tr, n);
        along_x(&mut v);
    }
    Ok(WignerGrid::from_values(w.x_grid, w.p_grid, v))
}

/// Keys bicubic interpolation at fractional indices; zero outside the grid.
fn bicubic(w: &WignerGrid, fx: f64, fp: f64) -> f64 {
    fn kern(t: f64) -> f64 {
        let t = t.abs();
        if t < 1.0 {
            1.5 * t * t * t - 2.5 * t * t + 1.0
        } else if t < 2.0 {
            -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
        } else {
            0.0
        }
    }
    let (nx, np) = (w.x_grid.len as i64, w.p_grid.len as i64);
    let (ix0, ip0) = (fx.floor() as i64, fp.floor() as i64);
    let mut acc = 0.0;
    for jp in ip0 - 1..=ip0 + 2 {
        if jp < 0 || jp >= np {
            continue;
        }
        let kp = kern(fp - jp as f64);
        for jx in ix0 - 1..=ix0 + 2 {
            if jx < 0 || jx >= nx {
                continue;
            }
            acc += kp * kern(fx - jx as f64) * w.values[(jp * nx + jx) as usize];
        }
    }
    acc
}

/// Fringes of the cross term measured on a line through the midpoint of the
/// two packets, perpendicular to their separation (scaled units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeMeasure {
    /// `(2/π) K σ_f`.
    pub count: f64,
    /// Fringe phase at the midpoint in (-π, π].
    pub phase: f64,
    /// Fringe wavenumber `K` along the line.
    pub wavenumber: f64,
    /// Gaussian width `σ_f` of the fringe envelope along the line.
    pub envelope_width: f64,
}

/// Midpoint, unit direction and expected envelope width of the fringe line.
#[derive(Debug, Clone, Copy)]
struct Ridge {
    center: [f64; 2],
    dir: [f64; 2],
    width: f64,
}

/// Phase-space covariance of a packet's Wigner blob in scaled units.
fn blob_covariance(wp: &GaussianWavepacket, ell: f64) -> [f64; 3] {
    let s2 = wp.width * wp.width;
    let xx = s2 / (ell * ell);
    let xp = wp.quad_phase * s2;
    let pp = ell * ell * (0.25 / s2 + wp.quad_phase * wp.quad_phase * s2);
    [xx, xp, pp]
}

fn ridge(a: &GaussianWavepacket, b: &GaussianWavepacket, ell: f64) -> Result<Ridge> {
    let va = [a.center / ell, a.momentum * ell];
    let vb = [b.center / ell, b.momentum * ell];
    let delta = [vb[0] - va[0], vb[1] - va[1]];
    let len = delta[0].hypot(delta[1]);
    if !(len > 0.0) {
        return Err(Error::ModelAssumption(
            "identical packets carry no cross-term fringes".into(),
        ));
    }
    let dir = [-delta[1] / len, delta[0] / len];
    let [xx, xp, pp] = blob_covariance(a, ell);
    let det = xx * pp - xp * xp;
    // 1/σ_f² = uᵀ Σ⁻¹ u
    let quad = (pp * dir[0] * dir[0] - 2.0 * xp * dir[0] * dir[1] + xx * dir[1] * dir[1]) / det;
    Ok(Ridge {
        center: [0.5 * (va[0] + vb[0]), 0.5 * (va[1] + vb[1])],
        dir,
        width: 1.0 / quad.sqrt(),
    })
}

fn measure_on_ridge(w: &WignerGrid, ell: f64, rg: &Ridge) -> Result<FringeMeasure> {
    const M: usize = 2048;
    let span = 5.0 * rg.width;
    let ds = 2.0 * span / M as f64;
    let (x, p) = (&w.x_grid, &w.p_grid);
    let mut samples = Vec::with_capacity(M);
    for i in 0..M {
        let s = -span + i as f64 * ds;
        let xs = (rg.center[0] + s * rg.dir[0]) * ell;
        let ps = (rg.center[1] + s * rg.dir[1]) / ell;
        let fx = (xs - x.start) / x.step;
        let fp = (ps - p.start) / p.step;
        if fx < 1.0 || fp < 1.0 || fx > x.len as f64 - 3.0 || fp > p.len as f64 - 3.0 {
            return Err(Error::Resolution(
                "fringe line leaves the phase-space grid".into(),
            ));
        }
        samples.push(bicubic(w, fx, fp));
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(M).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for c in buf[M / 2..].iter_mut() {
        *c = Complex64::new(0.0, 0.0);
    }
    planner.plan_fft_inverse(M).process(&mut buf);

    let mut phase: Vec<f64> = buf.iter().map(|c| c.arg()).collect();
    let env: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
    let valid = vec![true; M];
    unwrap_phase(&mut phase, &valid);

    let window = 2.0 * rg.width;
    let mut lin = (Matrix3::zeros(), Vector3::zeros());
    let mut quad = (Matrix3::zeros(), Vector3::zeros());
    for i in 0..M {
        let s = -span + i as f64 * ds;
        if s.abs() > window || env[i] <= 0.0 {
            continue;
        }
        let basis = Vector3::new(1.0, s, s * s);
        let wt = env[i] * env[i];
        let lb = Vector3::new(1.0, s, 0.0);
        lin.0 += wt * lb * lb.transpose();
        lin.1 += wt * phase[i] * lb;
        quad.0 += basis * basis.transpose();
        quad.1 += env[i].ln() * basis;
    }
    lin.0[(2, 2)] = 1.0;
    let lfit = lin
        .0
        .lu()
        .solve(&lin.1)
        .ok_or_else(|| Error::Fit("fringe phase regression is singular".into()))?;
    let qfit = quad
        .0
        .lu()
        .solve(&quad.1)
        .ok_or_else(|| Error::Fit("fringe envelope regression is singular".into()))?;
    if !(qfit[2] < 0.0) {
        return Err(Error::Fit("fringe envelope is not peaked".into()));
    }
    let k = lfit[1].abs();
    let sigma = (-0.5 / qfit[2]).sqrt();
    Ok(FringeMeasure {
        count: 2.0 / PI * k * sigma,
        phase: wrap_pi(lfit[0]),
        wavenumber: k,
        envelope_width: sigma,
    })
}

/// Measures the cross-term fringes of `w`, which must be the Wigner function
/// of `a + b` (the packets fix only the line geometry).
pub fn measure_fringes(
    w: &WignerGrid,
    a: &GaussianWavepacket,
    b: &GaussianWavepacket,
    ell: f64,
) -> Result<FringeMeasure> {
    measure_on_ridge(w, ell, &ridge(a, b, ell)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationOptions {
    /// Grid points per axis.
    pub grid_points: usize,
    /// Support radius over half-width used to size the grid.
    pub fill: f64,
}

impl Default for RotationOptions {
    fn default() -> Self {
        Self {
            grid_points: 512,
            fill: 0.55,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationReport {
    pub omega: f64,
    pub tau: f64,
    /// `ωτ` in rad.
    pub angle: f64,
    /// `‖W_rot - W_exact‖₂ / ‖W_exact‖₂`.
    pub l2_error: f64,
    /// `max |W_rot - W_exact| / max |W_exact|`.
    pub linf_error: f64,
    pub norm_before: f64,
    pub norm_after: f64,
    pub fringes_before: FringeMeasure,
    pub fringes_after: FringeMeasure,
    /// `(2/π) Γ` from the packet overlap.
    pub n_periods: f64,
    /// Half-width of the grid in scaled units.
    pub half_width: f64,
    pub grid_points: usize,
}

impl RotationReport {
    pub fn fringe_count_drift(&self) -> f64 {
        (self.fringes_after.count - self.fringes_before.count).abs() / self.fringes_before.count
    }

    pub fn fringe_phase_drift(&self) -> f64 {
        wrap_pi(self.fringes_after.phase - self.fringes_before.phase).abs()
    }
}

/// Checks that harmonic evolution of `a + b` for `tau` μs equals rotating
/// the initial Wigner function by `ωτ`.
pub fn verify_rotation_theorem(
    a: &GaussianWavepacket,
    b: &GaussianWavepacket,
    omega: f64,
    tau: f64,
    hbar_over_m: f64,
    opts: &RotationOptions,
) -> Result<RotationReport> {
    check_pair(a, b)?;
    if !(opts.fill > 0.0 && opts.fill < 0.6) {
        return param("fill must lie in (0, 0.6)");
    }
    if !(omega > 0.0) || !(tau >= 0.0) {
        return param("verification needs omega > 0 and tau >= 0");
    }
    let ell = oscillator_length(omega, hbar_over_m);
    let radius = |wp: &GaussianWavepacket| {
        let [xx, xp, pp] = blob_covariance(wp, ell);
        let tr = 0.5 * (xx + pp);
        let big = tr + (tr * tr - (xx * pp - xp * xp)).max(0.0).sqrt();
        (wp.center / ell).hypot(wp.momentum * ell) + 7.0 * big.sqrt()
    };
    let half = radius(a).max(radius(b)) / opts.fill;
    let (xg, pg) = scaled_square_axes(ell, half, opts.grid_points)?;

    let w0 = wigner_on_axes(a, b, &xg, &pg)?;
    let harmonic = LocalQuadratic {
        z_ref: 0.0,
        v0: 0.0,
        v1: 0.0,
        v2: omega * omega / hbar_over_m,
        scale_length: f64::INFINITY,
    };
    let a1 = evolve_quadratic(a, tau, &harmonic, hbar_over_m)?;
    let b1 = evolve_quadratic(b, tau, &harmonic, hbar_over_m)?;
    let exact = wigner_on_axes(&a1, &b1, &xg, &pg)?;
    let rotated = rotate_phase_space(&w0, omega, tau, hbar_over_m)?;

    let (mut num, mut den, mut linf) = (0.0, 0.0, 0.0f64);
    for (r, e) in rotated.values.iter().zip(&exact.values) {
        num += (r - e) * (r - e);
        den += e * e;
        linf = linf.max((r - e).abs());
    }
    let gamma = (-2.0 * (overlap(a, b).norm() / (a.weight * b.weight)).ln()).sqrt();
    Ok(RotationReport {
        omega,
        tau,
        angle: omega * tau,
        l2_error: (num / den).sqrt(),
        linf_error: linf / exact.max_abs(),
        norm_before: w0.norm,
        norm_after: rotated.norm,
        fringes_before: measure_fringes(&w0, a, b, ell)?,
        fringes_after: measure_fringes(&rotated, &a1, &b1, ell)?,
        n_periods: 2.0 / PI * gamma,
        half_width: half,
        grid_points: opts.grid_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::HBAR_OVER_M_RB87 as LAMBDA;
    use proptest::prelude::*;

    const OMEGA: f64 = 0.05;

    fn ell() -> f64 {
        oscillator_length(OMEGA, LAMBDA)
    }

    /// Packet at scaled position (x, p) with scaled width `s` and chirp `c`.
    fn scaled(x: f64, p: f64, s: f64, c: f64, phase: f64) -> GaussianWavepacket {
        let l = ell();
        let mut wp = GaussianWavepacket::new(x * l, p / l, s * l, 1).unwrap();
        wp.quad_phase = c / (l * l);
        wp.global_phase = phase;
        wp
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn coherent_state_is_a_positive_blob() {
        let a = scaled(0.3, -0.2, std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0);
        let w = wigner_of_superposition(&a, &a).unwrap();
        assert!((w.norm - 1.0).abs() < 1e-6, "{}", w.norm);
        assert!(w.values.iter().all(|&v| v >= -1e-300));
        // Peak of a pure Gaussian state is 1/π.
        assert!((w.max_abs() - 1.0 / PI).abs() < 1e-3);
    }

    #[test]
    fn closed_form_matches_defining_integral() {
        let a = scaled(-1.5, 0.4, 0.8, 0.3, 0.0);
        let b = scaled(1.7, -0.3, 0.8, 0.3, 1.1);
        let (x, p) = pair_axes(&a, &b, 512).unwrap();
        let c = wigner_on_axes(&a, &b, &x, &p).unwrap();
        let n = wigner_numerical(&a, &b, &x, &p).unwrap();
        let err = max_diff(&c.values, &n.values);
        assert!(err < 1e-8, "L∞ {err:e}");
        assert!((c.norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn momentum_split_fringes_run_along_x() {
        let a = scaled(0.0, -2.5, std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0);
        let b = scaled(0.0, 2.5, std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0);
        let (x, p) = pair_axes(&a, &b, 256).unwrap();
        let w = wigner_on_axes(&a, &b, &x, &p).unwrap();
        // On the row at the mean momentum the cross term oscillates in x
        // with wavenumber δk.
        let ip = (0..p.len)
            .min_by(|&i, &j| p.at(i).abs().total_cmp(&p.at(j).abs()))
            .unwrap();
        let row: Vec<f64> = (0..x.len).map(|ix| w.value(ix, ip)).collect();
        let crossings = row.windows(2).filter(|s| s[0] * s[1] < 0.0).count();
        assert!(crossings >= 4, "{crossings}");
        let f = measure_fringes(&w, &a, &b, ell()).unwrap();
        let dk_scaled = 5.0;
        assert!((f.wavenumber - dk_scaled).abs() < 1e-3 * dk_scaled);
        // Unchirped momentum split: the count equals (2/π) κ σ.
        let np = 2.0 / PI * (b.momentum - a.momentum) * a.width;
        assert!((f.count - np).abs() < 1e-2 * np, "{} vs {np}", f.count);
    }

    #[test]
    fn under_resolved_fringes_are_rejected() {
        let a = scaled(0.0, -40.0, std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0);
        let b = scaled(0.0, 40.0, std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0);
        let x = GridSpec::centered(0.0, 5.0 * ell(), 64).unwrap();
        let p = GridSpec::centered(0.0, 50.0 / ell(), 64).unwrap();
        assert!(matches!(
            wigner_on_axes(&a, &b, &x, &p),
            Err(Error::Resolution(_))
        ));
        let c = GaussianWavepacket { spin: 2, ..a };
        assert!(matches!(
            wigner_on_axes(&a, &c, &x, &p),
            Err(Error::ModelAssumption(_))
        ));
    }

    #[test]
    fn marginals_match_densities() {
        let a = scaled(-2.0, 0.5, 0.9, 0.2, 0.0);
        let b = scaled(2.0, -0.5, 0.9, 0.2, 0.7);
        let (x, p) = pair_axes(&a, &b, 512).unwrap();
        let w = wigner_on_axes(&a, &b, &x, &p).unwrap();
        let norm = 1.0 + 1.0 + 2.0 * overlap(&a, &b).re;
        let rho: Vec<f64> = x
            .points()
            .map(|z| (a.amplitude(z) + b.amplitude(z)).norm_sqr() / norm)
            .collect();
        // Momentum amplitude (2π)^(-1/2) ∫ψ e^{-ipz} dz in closed form.
        let ft = |wp: &GaussianWavepacket, k: f64| {
            let i = Complex64::i();
            let big_a = -i * wp.a();
            let d = k - wp.momentum;
            let pref = wp.weight * (2.0 * PI * wp.width * wp.width).powf(-0.25);
            pref * (PI / big_a).sqrt() / (2.0 * PI).sqrt()
                * (-d * d / (4.0 * big_a) + i * (wp.global_phase - k * wp.center)).exp()
        };
        let rho_p: Vec<f64> = p
            .points()
            .map(|k| (ft(&a, k) + ft(&b, k)).norm_sqr() / norm)
            .collect();
        let l2 = |u: &[f64], v: &[f64]| {
            let n: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            let d: f64 = v.iter().map(|b| b * b).sum();
            (n / d).sqrt()
        };
        assert!(l2(&w.x_marginal(), &rho) < 1e-6);
        assert!(l2(&w.p_marginal(), &rho_p) < 1e-6);
    }

    fn square(a: &GaussianWavepacket, b: &GaussianWavepacket) -> WignerGrid {
        let (x, p) = scaled_square_axes(ell(), 14.0, 256).unwrap();
        wigner_on_axes(a, b, &x, &p).unwrap()
    }

    #[test]
    fn full_turn_is_identity_and_half_turn_is_parity() {
        let a = scaled(2.0, 0.5, 0.8, 0.1, 0.0);
        let b = scaled(-1.0, 2.0, 0.8, 0.1, 0.4);
        let w = square(&a, &b);
        let full = rotate_phase_space(&w, OMEGA, 2.0 * PI / OMEGA, LAMBDA).unwrap();
        assert!(max_diff(&full.values, &w.values) < 1e-6 * w.max_abs());
        let half = rotate_phase_space(&w, OMEGA, PI / OMEGA, LAMBDA).unwrap();
        let n = w.x_grid.len;
        for ip in 0..n {
            for ix in 0..n {
                let mirrored = w.value(n - 1 - ix, n - 1 - ip);
                assert!((half.value(ix, ip) - mirrored).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quarter_turn_swaps_position_and_momentum_split() {
        let a = scaled(-2.5, 0.0, std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0);
        let b = scaled(2.5, 0.0, std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0);
        let r =
            verify_rotation_theorem(&a, &b, OMEGA, 0.5 * PI / OMEGA, LAMBDA, &Default::default())
                .unwrap();
        assert!(r.l2_error < 1e-6, "{r:?}");
        assert!(r.fringe_count_drift() < 1e-3, "{r:?}");
        assert!(r.fringe_phase_drift() < 1e-3, "{r:?}");
        assert!((r.fringes_before.count - r.n_periods).abs() < 1e-2 * r.n_periods);
    }

    #[test]
    fn clipping_is_reported() {
        let a = scaled(9.0, 0.0, std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0);
        let w = square(&a, &a);
        assert!(matches!(
            rotate_phase_space(&w, OMEGA, 1.0, LAMBDA),
            Err(Error::Clipping(_))
        ));
        let (x, p) = pair_axes(&a, &a, 64).unwrap();
        let off = wigner_on_axes(&a, &a, &x, &p).unwrap();
        assert!(matches!(
            rotate_phase_space(&off, OMEGA, 1.0, LAMBDA),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn composition_of_rotations() {
        let a = scaled(1.5, -1.0, 0.75, -0.2, 0.0);
        let b = scaled(-1.0, 1.5, 0.75, -0.2, 2.0);
        let w = square(&a, &b);
        let (t1, t2) = (7.3, 11.9);
        let two = rotate_phase_space(
            &rotate_phase_space(&w, OMEGA, t1, LAMBDA).unwrap(),
            OMEGA,
            t2,
            LAMBDA,
        )
        .unwrap();
        let one = rotate_phase_space(&w, OMEGA, t1 + t2, LAMBDA).unwrap();
        assert!(max_diff(&two.values, &one.values) < 1e-9 * w.max_abs());
        assert!((two.norm - w.norm).abs() < 1e-6);
    }

    #[test]
    fn binary_and_csv_export() {
        let a = scaled(0.0, 1.0, 0.7, 0.0, 0.0);
        let b = scaled(0.0, -1.0, 0.7, 0.0, 0.0);
        let (x, p) = pair_axes(&a, &b, 32).unwrap();
        let w = wigner_on_axes(&a, &b, &x, &p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        w.write_binary(&path).unwrap();
        assert_eq!(WignerGrid::read_binary(&path).unwrap(), w);
        let mut out = Vec::new();
        w.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 32 * 32 + 1);
        assert!(text.starts_with("x_um,p_rad_per_um,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn rotation_theorem_holds(
            mx in -1.5f64..1.5, mp in -1.5f64..1.5,
            s in 0.6f64..1.0, c in -0.3f64..0.3,
            dir in 0.0f64..(2.0 * PI), gamma in 3.5f64..6.0,
            phase in -PI..PI, angle in 0.1f64..3.0,
        ) {
            let u = [-dir.sin(), dir.cos()];
            let [xx, xp, pp] = [s * s, c * s * s, 0.25 / (s * s) + c * c * s * s];
            let len = gamma / (u[0] * u[0] * xx + 2.0 * u[0] * u[1] * xp + u[1] * u[1] * pp).sqrt();
            let (dx, dp) = (0.5 * len * dir.cos(), 0.5 * len * dir.sin());
            let a = scaled(mx - dx, mp - dp, s, c, 0.0);
            let b = scaled(mx + dx, mp + dp, s, c, phase);
            let r = verify_rotation_theorem(&a, &b, OMEGA, angle / OMEGA, LAMBDA, &Default::default()).unwrap();
            prop_assert!(r.l2_error < 1e-6, "{:?}", r);
            prop_assert!((r.norm_after - r.norm_before).abs() < 1e-6);
            prop_assert!(r.fringe_count_drift() < 1e-3, "{:?}", r);
            prop_assert!(r.fringe_phase_drift() < 1e-3, "{:?}", r);
        }
    }
}
