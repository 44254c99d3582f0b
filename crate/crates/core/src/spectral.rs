//! Amplitude Fourier transforms of moiré patterns and the moiré wavenumber.
//!
//! For equal wavenumbers the amplitude of the positive-frequency transform is
//!
//! ```text
//! AFT(K) = exp(-½σ²(K - κ)²) · |cos(K Δφ / 2κ)|
//! ```
//!
//! and the moiré wavenumber `K_M` is its global maximum. Stationary points
//! satisfy `K = κ - (Δφ/2κσ²) tan(KΔφ/2κ)`, one per branch of the tangent.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::pattern::ModelParams;
use crate::roots::brent;
use crate::signal::{fmt_f64, SampledSignal};

/// Half-width in Δφ under which a solve is flagged degenerate.
pub const DEGENERACY_TOL: f64 = 1e-6;

/// Equal-wavenumber model reduced to the three quantities the AFT needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AftModel {
    pub kappa: f64,
    pub sigma: f64,
    pub delta_phi: f64,
}

impl AftModel {
    pub fn new(kappa: f64, sigma: f64, delta_phi: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(sigma > 0.0) || !delta_phi.is_finite() {
            return param(format!(
                "need kappa > 0, sigma > 0 and finite delta_phi (got {kappa}, {sigma}, {delta_phi})"
            ));
        }
        Ok(Self {
            kappa,
            sigma,
            delta_phi,
        })
    }

    /// `σ = π N_p / 2κ`.
    pub fn from_periods(kappa: f64, n_periods: f64, delta_phi: f64) -> Result<Self> {
        Self::new(kappa, PI * n_periods / (2.0 * kappa), delta_phi)
    }

    /// Requires κ₁ = κ₂ and θ₁ = θ₂.
    pub fn from_params(p: &ModelParams) -> Result<Self> {
        p.validate()?;
        let kappa = p.common_kappa()?;
        if (p.theta1 - p.theta2).abs() > 1e-12 {
            return Err(Error::UnsupportedForm(
                "analytic AFT needs theta1 == theta2".into(),
            ));
        }
        Self::new(kappa, p.sigma, kappa * p.delta_z())
    }

    pub fn n_periods(&self) -> f64 {
        2.0 / PI * self.kappa * self.sigma
    }

    pub fn aft(&self, k: f64) -> f64 {
        let d = k - self.kappa;
        (-0.5 * self.sigma * self.sigma * d * d).exp()
            * (k * self.delta_phi / (2.0 * self.kappa)).cos().abs()
    }

    fn gauss_cosine(&self) -> GaussCosine {
        GaussCosine {
            mu: self.kappa,
            w: self.sigma,
            s: self.delta_phi.abs() / (2.0 * self.kappa),
            delta: 0.0,
        }
    }
}

/// Analytic AFT of an equal-wavenumber, equal-θ pattern at wavenumber `k`.
pub fn analytic_aft(params: &ModelParams, k: f64) -> Result<f64> {
    Ok(AftModel::from_params(params)?.aft(k))
}

/// AFT as a function of the dimensionless product `KΔz` at fixed `N_p`.
pub fn aft_fixed_dz(n_periods: f64, delta_phi: f64, delta_theta: f64, k_dz: f64) -> Result<f64> {
    let gc = fixed_dz_gauss_cosine(n_periods, delta_phi, delta_theta)?;
    Ok(gc.value(k_dz))
}

fn fixed_dz_gauss_cosine(n_periods: f64, delta_phi: f64, delta_theta: f64) -> Result<GaussCosine> {
    if !(n_periods > 0.0) {
        return param("N_p must be positive");
    }
    if delta_phi == 0.0 || !delta_phi.is_finite() {
        return param("delta_phi must be non-zero: the K*dz scaling is undefined");
    }
    let dphi = delta_phi.abs();
    Ok(GaussCosine {
        mu: dphi,
        w: PI * n_periods / (2.0 * dphi),
        s: 0.5,
        delta: delta_theta,
    })
}

/// `exp(-½w²(x-μ)²) |cos(s x - δ)|` on `x > 0`.
#[derive(Debug, Clone, Copy)]
struct GaussCosine {
    mu: f64,
    w: f64,
    s: f64,
    delta: f64,
}

#[derive(Debug, Clone, Copy)]
struct BranchMax {
    x: f64,
    value: f64,
    branch: i64,
}

impl GaussCosine {
    fn value(&self, x: f64) -> f64 {
        let d = x - self.mu;
        (-0.5 * self.w * self.w * d * d).exp() * (self.s * x - self.delta).cos().abs()
    }

    /// `x - μ + (s/w²) tan(s x - δ)`, zero at every stationary point.
    fn residual(&self, x: f64) -> f64 {
        x - self.mu + self.s / (self.w * self.w) * (self.s * x - self.delta).tan()
    }

    fn branch_max(&self, m: i64) -> Result<Option<BranchMax>> {
        let (s, w2) = (self.s, self.w * self.w);
        let lo = ((m as f64 - 0.5) * PI + self.delta) / s;
        let hi = ((m as f64 + 0.5) * PI + self.delta) / s;
        if hi <= 0.0 {
            return Ok(None);
        }
        let lo = lo.max(0.0);
        let h = |x: f64| {
            let u = s * x - self.delta;
            w2 * (x - self.mu) * u.cos() + s * u.sin()
        };
        let (hl, hh) = (h(lo), h(hi));
        if hl.signum() == hh.signum() || hl == 0.0 && lo == 0.0 {
            return Ok(None);
        }
        let scale = self.mu.abs().max(hi.abs());
        let mut x = brent(h, lo, hi, 1e-15 * scale)?;
        for _ in 0..3 {
            let u = s * x - self.delta;
            let c = u.cos();
            let g = self.residual(x);
            let dg = 1.0 + s * s / (w2 * c * c);
            let nx = x - g / dg;
            if nx > lo && nx < hi {
                x = nx;
            }
        }
        Ok(Some(BranchMax {
            x,
            value: self.value(x),
            branch: m,
        }))
    }

    fn branch_maxima(&self) -> Result<Vec<BranchMax>> {
        if self.s == 0.0 {
            return Ok(vec![BranchMax {
                x: self.mu,
                value: self.value(self.mu),
                branch: 0,
            }]);
        }
        let reach = PI / self.s + 12.0 / self.w;
        let x_lo = (self.mu - reach).max(0.0);
        let x_hi = self.mu + reach;
        let m_lo = ((self.s * x_lo - self.delta) / PI + 0.5).floor() as i64;
        let m_hi = ((self.s * x_hi - self.delta) / PI + 0.5).ceil() as i64;
        let mut out = Vec::new();
        for m in m_lo..=m_hi {
            if let Some(b) = self.branch_max(m)? {
                out.push(b);
            }
        }
        Ok(out)
    }

    fn solve(&self) -> Result<PeakSolve> {
        let maxima = self.branch_maxima()?;
        let best = maxima
            .iter()
            .copied()
            .max_by(|a, b| a.value.total_cmp(&b.value))
            .ok_or_else(|| {
                Error::Root(format!(
                    "no stationary point on any branch (mu {}, w {}, s {})",
                    self.mu, self.w, self.s
                ))
            })?;
        // Symmetric point of the Gaussian against the nearest cosine zero.
        let c = self.mu * self.s - self.delta;
        let n_odd = (c / PI - 0.5).round();
        let degenerate = self.s != 0.0 && (c - (n_odd + 0.5) * PI).abs() < 0.5 * DEGENERACY_TOL;
        let mut primary = best;
        let mut alternate = None;
        if degenerate {
            let lower = maxima.iter().find(|b| b.branch == n_odd as i64);
            let upper = maxima.iter().find(|b| b.branch == n_odd as i64 + 1);
            if let (Some(l), Some(u)) = (lower, upper) {
                primary = *l;
                alternate = Some(u.x);
            }
        }
        Ok(PeakSolve {
            k_m: primary.x,
            branch_n: primary.branch,
            degenerate,
            alternate,
            height: primary.value,
            residual: self.residual(primary.x).abs(),
        })
    }
}

/// Result of solving the moiré peak equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakSolve {
    /// Peak location (rad/μm for [`solve_km`], dimensionless `K_MΔz` for
    /// [`solve_km_fixed_dz`]).
    pub k_m: f64,
    /// Tangent branch holding the peak; the nearest whole number of 2π in Δφ.
    pub branch_n: i64,
    /// Set when Δφ lies within [`DEGENERACY_TOL`] of an odd multiple of π.
    pub degenerate: bool,
    /// The higher of the two degenerate solutions.
    pub alternate: Option<f64>,
    /// AFT value at the peak.
    pub height: f64,
    /// Absolute residual of the stationarity equation.
    pub residual: f64,
}

/// Moiré wavenumber of an equal-wavenumber pattern.
///
/// ```
/// use moire::pattern::ModelParams;
/// use moire::spectral::solve_km;
///
/// let p = ModelParams::from_periods(0.2, 5.61, 4.0 * std::f64::consts::PI);
/// assert!((solve_km(&p).unwrap().k_m - 0.2).abs() < 1e-12);
/// ```
pub fn solve_km(params: &ModelParams) -> Result<PeakSolve> {
    solve_km_model(&AftModel::from_params(params)?)
}

/// [`solve_km`] on an [`AftModel`].
pub fn solve_km_model(model: &AftModel) -> Result<PeakSolve> {
    if model.kappa * model.sigma <= 1.0 {
        return param(format!(
            "need kappa*sigma > 1, got {}",
            model.kappa * model.sigma
        ));
    }
    model.gauss_cosine().solve()
}

/// Peak of [`aft_fixed_dz`] in the dimensionless variable `KΔz`.
pub fn solve_km_fixed_dz(n_periods: f64, delta_phi: f64, delta_theta: f64) -> Result<PeakSolve> {
    fixed_dz_gauss_cosine(n_periods, delta_phi, delta_theta)?.solve()
}

/// Peak splitting `ΔK_M` at the `n`-th jump, `Δφ = π(2n+1)`.
///
/// Solves `ΔK = (π(2n+1)/σ²κ) cot(ΔK π(2n+1)/4κ)` on `(0, 2κ/(2n+1))`.
pub fn jump_height(n: u32, kappa: f64, sigma: f64) -> Result<f64> {
    if !(kappa > 0.0 && sigma > 0.0) || kappa * sigma <= 1.0 {
        return param("jump_height needs kappa, sigma > 0 and kappa*sigma > 1");
    }
    let odd = PI * (2 * n + 1) as f64;
    let a = odd / (sigma * sigma * kappa);
    let b = odd / (4.0 * kappa);
    let hi = PI / (2.0 * b);
    brent(
        |x| x * (b * x).sin() - a * (b * x).cos(),
        0.0,
        hi,
        1e-15 * kappa,
    )
    .map_err(|e| {
        Error::Root(format!(
            "jump height n={n}, kappa={kappa}, sigma={sigma}: {e}"
        ))
    })
}

/// Splits `Δφ = 2πn + α` with `-π < α ≤ π` and returns `(n, alpha_rem)`.
pub fn alpha_rem(delta_phi: f64) -> (i64, f64) {
    let n = (delta_phi / (2.0 * PI)).round();
    let mut a = delta_phi - 2.0 * PI * n;
    let mut n = n as i64;
    if a <= -PI {
        a += 2.0 * PI;
        n -= 1;
    }
    (n, a)
}

/// Gaussian envelope `A exp(-(z - z̄)²/2σ²) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub offset: f64,
}

impl Envelope {
    pub fn eval(&self, z: f64) -> f64 {
        let d = (z - self.center) / self.sigma;
        self.amplitude * (-0.5 * d * d).exp() + self.offset
    }
}

/// Options for [`numerical_spectrum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumOptions {
    /// Read the low-frequency cutoff `1/(f σ₀)` as cycles per μm, giving a
    /// wavenumber cutoff `2π/(f σ₀)`. When false the cutoff is `1/(f σ₀)`.
    pub cutoff_in_cycles: bool,
    pub cutoff_factor: f64,
    /// Zero padding factor applied after rounding up to a power of two.
    pub zero_pad: usize,
    /// Minimum secondary/primary height ratio to report a secondary peak.
    pub secondary_threshold: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            cutoff_in_cycles: true,
            cutoff_factor: 0.9,
            zero_pad: 4,
            secondary_threshold: 0.2,
        }
    }
}

/// A located spectral peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub k: f64,
    pub height: f64,
    pub relative_intensity: f64,
}

/// Numerical AFT with its peaks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralResult {
    pub k_grid: Vec<f64>,
    pub aft: Vec<f64>,
    pub primary: Peak,
    pub secondary: Option<Peak>,
    pub bin_width: f64,
    pub cutoff: f64,
}

/// JSON peak summary of a [`SpectralResult`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakRecord {
    pub k_m: f64,
    pub height: f64,
    pub secondary_k: Option<f64>,
    pub relative_intensity: Option<f64>,
    pub bin_width: f64,
}

impl SpectralResult {
    pub fn peak_record(&self) -> PeakRecord {
        PeakRecord {
            k_m: self.primary.k,
            height: self.primary.height,
            secondary_k: self.secondary.map(|s| s.k),
            relative_intensity: self.secondary.map(|s| s.relative_intensity),
            bin_width: self.bin_width,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["k_rad_per_um", "aft"])?;
        for (k, a) in self.k_grid.iter().zip(&self.aft) {
            wr.write_record([fmt_f64(*k), fmt_f64(*a)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Parabolic interpolation of `ln a` around index `j`: `(offset, peak)`.
pub(crate) fn parabolic_log_peak(a: &[f64], j: usize) -> (f64, f64) {
    if j == 0 || j + 1 >= a.len() || a[j - 1] <= 0.0 || a[j + 1] <= 0.0 {
        return (0.0, a[j]);
    }
    let (ym, y0, yp) = (a[j - 1].ln(), a[j].ln(), a[j + 1].ln());
    let den = ym - 2.0 * y0 + yp;
    if den >= 0.0 {
        return (0.0, a[j]);
    }
    let d = 0.5 * (ym - yp) / den;
    (d, (y0 - 0.25 * (ym - yp) * d).exp())
}

/// Amplitude of the FFT of `values` for non-negative wavenumbers, scaled by
/// `dz`. Returns `(k_grid, amplitude, bin_width)`.
pub(crate) fn positive_spectrum(
    values: &[f64],
    dz: f64,
    zero_pad: usize,
) -> (Vec<f64>, Vec<f64>, f64) {
    let n = values.len().next_power_of_two() * zero_pad.max(1);
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    let fft: Arc<dyn rustfft::Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    fft.process(&mut buf);
    let bin = 2.0 * PI / (n as f64 * dz);
    let half = n / 2;
    let k = (0..=half).map(|j| j as f64 * bin).collect();
    let a = buf[..=half].iter().map(|c| c.norm() * dz).collect();
    (k, a, bin)
}

/// Numerical AFT of a sampled pattern after removing its Gaussian envelope.
///
/// Wavenumbers below the cutoff set by [`SpectrumOptions`] are zeroed, the
/// two largest local maxima are interpolated on the log-magnitude, and the
/// smaller one is reported when it reaches the secondary threshold.
pub fn numerical_spectrum(
    signal: &SampledSignal,
    envelope: &Envelope,
    opts: &SpectrumOptions,
) -> Result<SpectralResult> {
    if signal.len() < 64 {
        return param(format!(
            "signal needs at least 64 samples, got {}",
            signal.len()
        ));
    }
    if !(envelope.sigma > 0.0) {
        return param("envelope sigma must be positive");
    }
    let residual: Vec<f64> = signal
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| v - envelope.eval(signal.z(i)))
        .collect();
    let (k_grid, mut aft, bin) = positive_spectrum(&residual, signal.dz, opts.zero_pad);
    let cutoff = if opts.cutoff_in_cycles {
        2.0 * PI / (opts.cutoff_factor * envelope.sigma)
    } else {
        1.0 / (opts.cutoff_factor * envelope.sigma)
    };
    let nyquist = PI / signal.dz;
    if cutoff >= nyquist {
        return Err(Error::Config(format!(
            "cutoff {cutoff} rad/um is above the Nyquist wavenumber {nyquist}"
        )));
    }
    let j_cut = k_grid
        .iter()
        .position(|&k| k >= cutoff)
        .unwrap_or(k_grid.len());
    for a in aft.iter_mut().take(j_cut) {
        *a = 0.0;
    }
    let mut maxima: Vec<(usize, f64)> = (j_cut.max(1) + 1..aft.len() - 1)
        .filter(|&j| aft[j] > 0.0 && aft[j] > aft[j - 1] && aft[j] >= aft[j + 1])
        .map(|j| (j, aft[j]))
        .collect();
    maxima.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top = maxima
        .first()
        .ok_or_else(|| Error::NoPeak("no local maximum above the cutoff".into()))?;
    let refine = |j: usize| {
        let (d, h) = parabolic_log_peak(&aft, j);
        (k_grid[j] + d * bin, h)
    };
    let (k1, h1) = refine(top.0);
    if !(h1 > 0.0) {
        return Err(Error::NoPeak("spectrum is identically zero".into()));
    }
    let primary = Peak {
        k: k1,
        height: h1,
        relative_intensity: 1.0,
    };
    let secondary = maxima.get(1).and_then(|&(j, _)| {
        let (k, h) = refine(j);
        let rel = (h / h1).min(1.0);
        (rel >= opts.secondary_threshold).then_some(Peak {
            k,
            height: h,
            relative_intensity: rel,
        })
    });
    Ok(SpectralResult {
        k_grid,
        aft,
        primary,
        secondary,
        bin_width: bin,
        cutoff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::generate_pattern;
    use proptest::prelude::*;

    fn grid_argmax(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let mut best = (lo, f64::MIN);
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        // Second pass on a window of two coarse steps.
        let h = (hi - lo) / (n - 1) as f64;
        let (lo2, hi2) = (best.0 - 2.0 * h, best.0 + 2.0 * h);
        for i in 0..2001 {
            let x = lo2 + (hi2 - lo2) * i as f64 / 2000.0;
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        best.0
    }

    #[test]
    fn aft_trivial_values() {
        let m = AftModel::from_periods(1.0, 5.6, 4.0 * PI).unwrap();
        assert!((m.aft(1.0) - 1.0).abs() < 1e-15);
        let m = AftModel::from_periods(1.0, 5.6, PI).unwrap();
        assert!(m.aft(1.0) < 1e-15);
        assert!((aft_fixed_dz(5.61, 6.0 * PI, 0.0, 6.0 * PI).unwrap() - 1.0).abs() < 1e-15);
        assert!(aft_fixed_dz(5.61, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn analytic_aft_matches_si_form() {
        let p = ModelParams::from_periods(0.7, 5.6, 2.3);
        let dz = p.delta_z();
        for i in 0..200 {
            let k = 0.3 + i as f64 * 0.005;
            let si = (-0.5 * p.sigma.powi(2) * (k - 0.7f64).powi(2)).exp()
                * (0.5 * ((k - 0.7) * dz + 2.3)).cos().abs();
            assert!((analytic_aft(&p, k).unwrap() - si).abs() < 1e-14);
        }
    }

    #[test]
    fn aft_matches_direct_fourier_integral() {
        // Riemann sum of |∫ V⁺(z) e^{-iKz} dz| normalised at its own scale.
        let p = ModelParams::from_periods(1.0, 5.6, 2.5 * PI);
        let g = p.default_grid();
        let vp = crate::pattern::positive_frequency_part(&p, &g).unwrap();
        let norm = (2.0 * PI).sqrt() * p.sigma;
        for &k in &[0.6, 0.8, 0.9, 1.0, 1.1, 1.3] {
            let s: Complex64 = g
                .points()
                .zip(&vp)
                .map(|(z, v)| v * Complex64::from_polar(1.0, -k * z))
                .sum();
            let amp = s.norm() * g.step / norm;
            assert!(
                (amp - analytic_aft(&p, k).unwrap()).abs() < 1e-7,
                "k {k}: {amp} vs {}",
                analytic_aft(&p, k).unwrap()
            );
        }
    }

    #[test]
    fn fixed_dz_argmax_near_plateau() {
        let x = grid_argmax(
            |x| aft_fixed_dz(5.61, 8.0 * PI, 0.0, x).unwrap(),
            1e-6,
            16.0 * PI,
            100_001,
        );
        assert!((x - 8.0 * PI).abs() < 1e-3);
    }

    #[test]
    fn dense_grid_argmax_at_2_5_pi() {
        let m = AftModel::from_periods(1.0, 5.6, 2.5 * PI).unwrap();
        let x = grid_argmax(|k| m.aft(k), 0.0, 3.0, 100_000);
        let s = solve_km_model(&m).unwrap();
        assert!((s.k_m - x).abs() < 1e-6);
        assert!(s.residual < 1e-10);
    }

    #[test]
    fn trivial_peak_is_kappa() {
        for n in 1..=10 {
            for &np in &[2.0, 5.61, 20.0] {
                let m = AftModel::from_periods(0.3, np, 2.0 * PI * n as f64).unwrap();
                let s = solve_km_model(&m).unwrap();
                assert!(
                    (s.k_m - 0.3).abs() < 1e-10 * 0.3,
                    "n {n} np {np}: {}",
                    s.k_m
                );
                assert_eq!(s.branch_n, n);
            }
        }
    }

    #[test]
    fn degenerate_reports_both_roots() {
        let m = AftModel::from_periods(1.0, 5.61, 3.0 * PI).unwrap();
        let s = solve_km_model(&m).unwrap();
        assert!(s.degenerate);
        let alt = s.alternate.unwrap();
        assert!(s.k_m < 1.0 && alt > 1.0);
        let dk = jump_height(1, 1.0, m.sigma).unwrap();
        assert!((alt - s.k_m - dk).abs() < 1e-9);
        assert!((0.5 * (alt + s.k_m) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn jump_height_matches_two_peak_grid_search() {
        let m = AftModel::from_periods(1.0, 5.61, 3.0 * PI).unwrap();
        let lo = grid_argmax(|k| m.aft(k), 0.5, 1.0, 100_001);
        let hi = grid_argmax(|k| m.aft(k), 1.0, 1.5, 100_001);
        let dk = jump_height(1, 1.0, m.sigma).unwrap();
        assert!((hi - lo - dk).abs() < 1e-4);
    }

    #[test]
    fn jump_height_vanishes_for_many_periods() {
        let mut prev = f64::INFINITY;
        for np in [3.0, 5.0, 10.0, 20.0, 50.0, 200.0] {
            let dk = jump_height(2, 1.0, PI * np / 2.0).unwrap();
            assert!(dk < prev);
            prev = dk;
        }
        assert!(prev < 0.01);
    }

    #[test]
    fn fixed_dz_staircase_around_8pi() {
        // Linearising the tangent about 2πn gives the plateau slope
        // N_p² / (N_p² + 4n²).
        let np: f64 = 5.61;
        let slope = np * np / (np * np + 64.0);
        let at = |d: f64| solve_km_fixed_dz(np, d, 0.0).unwrap().k_m;
        assert!((at(8.0 * PI) - 8.0 * PI).abs() < 1e-12);
        let h = 1e-5;
        let fd = (at(8.0 * PI + h) - at(8.0 * PI - h)) / (2.0 * h);
        assert!((fd - slope).abs() < 1e-6, "{fd} vs {slope}");
        let mut prev = 0.0;
        for i in 1..100 {
            let dphi = 7.0 * PI + 2.0 * PI * i as f64 / 100.0;
            let x = at(dphi);
            assert!(x > prev);
            prev = x;
            assert!((x - 8.0 * PI).abs() <= (dphi - 8.0 * PI).abs() * slope.max(0.4));
        }
        // The branch changes exactly across 7π and 9π.
        assert_eq!(
            solve_km_fixed_dz(np, 7.0 * PI - 1e-4, 0.0)
                .unwrap()
                .branch_n,
            3
        );
        assert_eq!(
            solve_km_fixed_dz(np, 7.0 * PI + 1e-4, 0.0)
                .unwrap()
                .branch_n,
            4
        );
        assert_eq!(
            solve_km_fixed_dz(np, 9.0 * PI - 1e-4, 0.0)
                .unwrap()
                .branch_n,
            4
        );
        assert_eq!(
            solve_km_fixed_dz(np, 9.0 * PI + 1e-4, 0.0)
                .unwrap()
                .branch_n,
            5
        );
    }

    #[test]
    fn shifted_theta_matches_grid() {
        for &dphi in &[3.0, 7.5, 12.0, 20.0] {
            let s = solve_km_fixed_dz(5.61, dphi, PI / 4.0).unwrap();
            let x = grid_argmax(
                |x| aft_fixed_dz(5.61, dphi, PI / 4.0, x).unwrap(),
                1e-9,
                3.0 * dphi,
                200_001,
            );
            assert!(
                (s.k_m - x).abs() < 1e-4 * dphi,
                "dphi {dphi}: {} vs {x}",
                s.k_m
            );
        }
    }

    #[test]
    fn theta_shift_moves_zeros_by_half_pi() {
        let z0 = aft_fixed_dz(5.61, 10.0, 0.0, PI).unwrap();
        let z1 = aft_fixed_dz(5.61, 10.0, PI / 4.0, PI + PI / 2.0).unwrap();
        assert!(z0 < 1e-15 && z1 < 1e-15);
    }

    #[test]
    fn alpha_rem_range() {
        let (n, a) = alpha_rem(5.0 * PI);
        assert!(a > -PI && a <= PI);
        assert!((2.0 * PI * n as f64 + a - 5.0 * PI).abs() < 1e-12);
        assert_eq!(alpha_rem(2.0 * PI + 0.3).0, 1);
    }

    fn true_envelope(p: &ModelParams) -> Envelope {
        Envelope {
            amplitude: 1.0,
            center: p.z_mid(),
            sigma: (p.sigma.powi(2) + p.delta_z().powi(2) / 4.0).sqrt(),
            offset: 0.0,
        }
    }

    #[test]
    fn fft_peak_at_kappa_on_plateau_centre() {
        let p = ModelParams::from_periods(1.0, 5.6, 4.0 * PI);
        let s = generate_pattern(&p, &p.default_grid()).unwrap();
        let r = numerical_spectrum(&s, &true_envelope(&p), &SpectrumOptions::default()).unwrap();
        assert!((r.primary.k - 1.0).abs() < r.bin_width);
        assert!(r.secondary.is_none());
    }

    #[test]
    fn fft_peak_matches_analytic_at_3_2_pi() {
        let p = ModelParams::from_periods(1.0, 5.6, 3.2 * PI);
        let s = generate_pattern(&p, &p.default_grid()).unwrap();
        let r = numerical_spectrum(&s, &true_envelope(&p), &SpectrumOptions::default()).unwrap();
        let km = solve_km(&p).unwrap().k_m;
        assert!((r.primary.k - km).abs() < r.bin_width);
    }

    #[test]
    fn fft_near_odd_pi_has_two_peaks() {
        let p = ModelParams::from_periods(1.0, 5.6, 3.0 * PI + 0.01);
        let s = generate_pattern(&p, &p.default_grid()).unwrap();
        let r = numerical_spectrum(&s, &true_envelope(&p), &SpectrumOptions::default()).unwrap();
        let sec = r.secondary.expect("secondary peak");
        assert!(sec.relative_intensity >= 0.2);
        assert!(sec.height <= r.primary.height);
    }

    #[test]
    fn fft_errors() {
        let s = SampledSignal::new(0.0, 0.1, vec![0.0; 256]).unwrap();
        let env = Envelope {
            amplitude: 0.0,
            center: 12.8,
            sigma: 3.0,
            offset: 0.0,
        };
        assert!(matches!(
            numerical_spectrum(&s, &env, &SpectrumOptions::default()),
            Err(Error::NoPeak(_))
        ));
        let env = Envelope { sigma: 0.01, ..env };
        assert!(matches!(
            numerical_spectrum(&s, &env, &SpectrumOptions::default()),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn solve_km_matches_dense_grid(
            kappa in 0.05f64..0.5, np in 2.0f64..20.0, dphi in 0.0f64..(10.0 * PI)
        ) {
            let odd = (dphi / PI - 1.0) / 2.0;
            prop_assume!((odd - odd.round()).abs() * 2.0 * PI > 0.05);
            let m = AftModel::from_periods(kappa, np, dphi).unwrap();
            let s = solve_km_model(&m).unwrap();
            let x = grid_argmax(|k| m.aft(k), 0.0, 3.0 * kappa, 100_000);
            prop_assert!((s.k_m - x).abs() < 1e-4 * kappa);
            prop_assert!(s.residual < 1e-10 * kappa);
        }

        #[test]
        fn sign_rule_and_small_alpha_symmetry(np in 3.0f64..15.0, n in 1i64..6, alpha in 0.01f64..3.1) {
            let k = 0.5;
            let solve = |d: f64| solve_km_model(&AftModel::from_periods(k, np, d).unwrap()).unwrap().k_m - k;
            let centre = 2.0 * PI * n as f64;
            prop_assert!(solve(centre + alpha) < 0.0);
            prop_assert!(solve(centre - alpha) > 0.0);
            // Mirror symmetry about κ holds to first order in α.
            let (u, d) = (solve(centre + 1e-3), solve(centre - 1e-3));
            prop_assert!((u + d).abs() < 0.02 * (u - d).abs());
        }

        #[test]
        fn fixed_dz_bounded_by_plateau_centre(np in 2.0f64..12.0, dphi in 0.5f64..40.0) {
            // y + c tan(y/2) = Δφ - 2πn with c = Δφ²/2(κσ)² and tan(t) ≥ t
            // bound the distance to 2πn.
            let odd = (dphi / PI - 1.0) / 2.0;
            prop_assume!((odd - odd.round()).abs() * 2.0 * PI > 1e-3);
            let s = solve_km_fixed_dz(np, dphi, 0.0).unwrap();
            let target = 2.0 * PI * (dphi / (2.0 * PI)).round();
            let ks2 = (PI * np / 2.0).powi(2);
            let bound = (dphi - target).abs() / (1.0 + dphi * dphi / (4.0 * ks2));
            prop_assert!((s.k_m - target).abs() <= bound * (1.0 + 1e-9) + 1e-12);
            prop_assert!((s.k_m - target) * (dphi - target) >= 0.0);
        }
    }
}
