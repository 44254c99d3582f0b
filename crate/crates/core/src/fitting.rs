//! Least-squares estimators for envelopes, fringes, visibility curves and
//! single-state wavenumbers.
//!
//! All fits are unweighted and use [`crate::lsq::minimize`] with analytic
//! Jacobians.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::lsq::{minimize, LsqOptions, LsqSolution, Residuals};
use crate::signal::SampledSignal;
use crate::spectral::Envelope;
use crate::units::reduce;

/// Parameter values with 1σ uncertainties, for JSON output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub uncertainties: Vec<f64>,
    pub residual_norm: f64,
    pub converged: bool,
}

fn report(names: &[&str], values: Vec<f64>, sol: &LsqSolution) -> FitReport {
    FitReport {
        names: names.iter().map(|s| s.to_string()).collect(),
        values,
        uncertainties: sol.uncertainties(),
        residual_norm: sol.residual_norm,
        converged: sol.converged,
    }
}

const FREE: f64 = f64::INFINITY;

struct GaussModel<'a> {
    s: &'a SampledSignal,
}

impl Residuals for GaussModel<'_> {
    fn n_residuals(&self) -> usize {
        self.s.len()
    }
    fn n_params(&self) -> usize {
        4
    }
    fn eval(&self, p: &[f64], r: &mut [f64]) {
        for (i, ri) in r.iter_mut().enumerate() {
            let u = (self.s.z(i) - p[1]) / p[2];
            *ri = p[0] * (-0.5 * u * u).exp() + p[3] - self.s.values[i];
        }
    }
    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
        for i in 0..self.s.len() {
            let u = (self.s.z(i) - p[1]) / p[2];
            let g = (-0.5 * u * u).exp();
            j[(i, 0)] = g;
            j[(i, 1)] = p[0] * g * u / p[2];
            j[(i, 2)] = p[0] * g * u * u / p[2];
            j[(i, 3)] = 1.0;
        }
    }
}

/// Gaussian-plus-offset fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub envelope: Envelope,
    pub solution: LsqSolution,
}

impl EnvelopeFit {
    pub fn report(&self) -> FitReport {
        let e = &self.envelope;
        report(
            &["amplitude", "center_um", "sigma0_um", "offset"],
            vec![e.amplitude, e.center, e.sigma, e.offset],
            &self.solution,
        )
    }
}

fn moment_guess(s: &SampledSignal) -> [f64; 4] {
    let min = s.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = s.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = s.values.iter().map(|v| (v - min).max(0.0)).collect();
    let tot: f64 = w.iter().sum();
    let (mut c, mut v2) = (0.0, 0.0);
    if tot > 0.0 {
        c = w.iter().enumerate().map(|(i, w)| w * s.z(i)).sum::<f64>() / tot;
        v2 = w
            .iter()
            .enumerate()
            .map(|(i, w)| w * (s.z(i) - c).powi(2))
            .sum::<f64>()
            / tot;
    }
    let span = s.dz * (s.len() - 1) as f64;
    let sigma = if v2 > 0.0 { v2.sqrt() } else { span / 6.0 };
    [max - min, c, sigma.min(span), min]
}

/// Fits `A exp(-(z - z̄)²/2σ₀²) + c`.
pub fn fit_envelope(signal: &SampledSignal) -> Result<EnvelopeFit> {
    if signal.len() < 8 {
        return param("envelope fit needs at least 8 samples");
    }
    let p0 = moment_guess(signal);
    let span = signal.dz * (signal.len() - 1) as f64;
    let lower = [-FREE, signal.z0 - span, 1e-3 * signal.dz, -FREE];
    let upper = [FREE, signal.z0 + 2.0 * span, 10.0 * span, FREE];
    let sol = minimize(
        &GaussModel { s: signal },
        &p0,
        &lower,
        &upper,
        &LsqOptions::default(),
    )?;
    if !sol.converged {
        return Err(Error::Fit(format!(
            "envelope fit stopped after {} iterations at {:?} (residual {})",
            sol.iterations, sol.params, sol.residual_norm
        )));
    }
    let p = &sol.params;
    Ok(EnvelopeFit {
        envelope: Envelope {
            amplitude: p[0],
            center: p[1],
            sigma: p[2],
            offset: p[3],
        },
        solution: sol,
    })
}

/// Fringe model `A G(z) [1 + v sin(K (z - z_r) + φ)] + c`, optionally with
/// `K` as a seventh parameter.
struct FringeModel<'a> {
    s: &'a SampledSignal,
    k: f64,
    z_ref: f64,
    free_k: bool,
}

impl FringeModel<'_> {
    fn k(&self, p: &[f64]) -> f64 {
        if self.free_k {
            p[6]
        } else {
            self.k
        }
    }
}

impl Residuals for FringeModel<'_> {
    fn n_residuals(&self) -> usize {
        self.s.len()
    }
    fn n_params(&self) -> usize {
        if self.free_k {
            7
        } else {
            6
        }
    }
    fn eval(&self, p: &[f64], r: &mut [f64]) {
        let k = self.k(p);
        for (i, ri) in r.iter_mut().enumerate() {
            let z = self.s.z(i);
            let u = (z - p[1]) / p[2];
            let g = (-0.5 * u * u).exp();
            let sn = (k * (z - self.z_ref) + p[4]).sin();
            *ri = p[0] * g * (1.0 + p[3] * sn) + p[5] - self.s.values[i];
        }
    }
    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
        let k = self.k(p);
        for i in 0..self.s.len() {
            let z = self.s.z(i);
            let u = (z - p[1]) / p[2];
            let g = (-0.5 * u * u).exp();
            let th = k * (z - self.z_ref) + p[4];
            let (sn, cs) = th.sin_cos();
            let f = p[0] * g * (1.0 + p[3] * sn);
            j[(i, 0)] = g * (1.0 + p[3] * sn);
            j[(i, 1)] = f * u / p[2];
            j[(i, 2)] = f * u * u / p[2];
            j[(i, 3)] = p[0] * g * sn;
            j[(i, 4)] = p[0] * g * p[3] * cs;
            j[(i, 5)] = 1.0;
            if self.free_k {
                j[(i, 6)] = p[0] * g * p[3] * cs * (z - self.z_ref);
            }
        }
    }
}

/// Result of a fringe fit, canonicalised to `v ≥ 0` and `φ̄ ∈ [0, 2π)`.
///
/// The phase refers to absolute `z`: the model is
/// `A exp(-(z - z̄)²/2σ̄²) [1 + v sin(K_M z + φ̄)] + c`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FringeFit {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub visibility: f64,
    pub phase: f64,
    pub offset: f64,
    pub k_m: f64,
    /// Fewer than two fringe periods inside the envelope.
    pub low_confidence: bool,
    pub solution: LsqSolution,
}

impl FringeFit {
    pub fn report(&self) -> FitReport {
        let mut names = vec![
            "amplitude",
            "center_um",
            "sigma_um",
            "visibility",
            "phase_rad",
            "offset",
        ];
        let mut values = vec![
            self.amplitude,
            self.center,
            self.sigma,
            self.visibility,
            self.phase,
            self.offset,
        ];
        if self.solution.params.len() == 7 {
            names.push("k_m_rad_per_um");
            values.push(self.k_m);
        }
        report(&names, values, &self.solution)
    }
}

/// Number of multi-start phases.
pub const PHASE_STARTS: usize = 8;

fn fit_fringes_impl(
    signal: &SampledSignal,
    k_m: f64,
    init: Option<&EnvelopeFit>,
    free_k: bool,
) -> Result<FringeFit> {
    if !(k_m > 0.0) {
        return param("K_M must be positive");
    }
    if signal.len() < 16 {
        return param("fringe fit needs at least 16 samples");
    }
    let env = match init {
        Some(e) => e.envelope,
        None => fit_envelope(signal)?.envelope,
    };
    let z_ref = signal.z(signal.len() / 2);
    let model = FringeModel {
        s: signal,
        k: k_m,
        z_ref,
        free_k,
    };
    let span = signal.dz * (signal.len() - 1) as f64;
    let mut lower = vec![
        -FREE,
        signal.z0 - span,
        1e-3 * signal.dz,
        -2.0,
        -FREE,
        -FREE,
    ];
    let mut upper = vec![FREE, signal.z0 + 2.0 * span, 10.0 * span, 2.0, FREE, FREE];
    if free_k {
        lower.push(0.5 * k_m);
        upper.push(1.5 * k_m);
    }
    let mut best: Option<LsqSolution> = None;
    for s in 0..PHASE_STARTS {
        let mut p0 = vec![
            env.amplitude,
            env.center,
            env.sigma,
            0.5,
            2.0 * PI * s as f64 / PHASE_STARTS as f64,
            env.offset,
        ];
        if free_k {
            p0.push(k_m);
        }
        let sol = minimize(&model, &p0, &lower, &upper, &LsqOptions::default())?;
        if best
            .as_ref()
            .is_none_or(|b| sol.residual_norm < b.residual_norm)
        {
            best = Some(sol);
        }
    }
    let sol = best.expect("at least one start");
    if !sol.residual_norm.is_finite() {
        return Err(Error::Fit(
            "fringe fit produced a non-finite residual".into(),
        ));
    }
    let p = &sol.params;
    let k = if free_k { p[6] } else { k_m };
    let (mut v, mut phi) = (p[3], p[4] - k * z_ref);
    if v < 0.0 {
        v = -v;
        phi += PI;
    }
    let sigma = p[2].abs();
    Ok(FringeFit {
        amplitude: p[0],
        center: p[1],
        sigma,
        visibility: v,
        phase: reduce(phi, 2.0 * PI),
        offset: p[5],
        k_m: k,
        low_confidence: 2.0 / PI * k * sigma < 2.0,
        solution: sol,
    })
}

/// Fits the fringe model with `K_M` held fixed, from 8 phase starts.
pub fn fit_fringes(
    signal: &SampledSignal,
    k_m: f64,
    init: Option<&EnvelopeFit>,
) -> Result<FringeFit> {
    fit_fringes_impl(signal, k_m, init, false)
}

/// Like [`fit_fringes`] but with `K_M` free, started at `k_init`.
pub fn fit_fringes_free_k(
    signal: &SampledSignal,
    k_init: f64,
    init: Option<&EnvelopeFit>,
) -> Result<FringeFit> {
    fit_fringes_impl(signal, k_init, init, true)
}

struct VisModel<'a> {
    t2: &'a [f64],
    v: &'a [f64],
}

impl Residuals for VisModel<'_> {
    fn n_residuals(&self) -> usize {
        self.t2.len()
    }
    fn n_params(&self) -> usize {
        4
    }
    // p = [v0, a, phi0, c]
    fn eval(&self, p: &[f64], r: &mut [f64]) {
        for i in 0..self.t2.len() {
            let x = 1.0 / (self.t2[i] * self.t2[i]);
            r[i] = 0.5 * p[0] * (p[1] * x + p[2]).cos() + p[3] - self.v[i];
        }
    }
    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
        for i in 0..self.t2.len() {
            let x = 1.0 / (self.t2[i] * self.t2[i]);
            let (sn, cs) = (p[1] * x + p[2]).sin_cos();
            j[(i, 0)] = 0.5 * cs;
            j[(i, 1)] = -0.5 * p[0] * sn * x;
            j[(i, 2)] = -0.5 * p[0] * sn;
            j[(i, 3)] = 1.0;
        }
    }
}

/// `v(T₂) = v₀/2 cos(a/T₂² + φ₀) + c`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisibilityFit {
    pub v0: f64,
    pub a: f64,
    pub phi0: f64,
    pub c: f64,
    /// Index of the winning start and number of distinct minima found.
    pub basin: usize,
    pub n_basins: usize,
    pub solution: LsqSolution,
}

impl VisibilityFit {
    /// `Δφ(T₂) = a/T₂² + φ₀`.
    pub fn delta_phi(&self, t2: f64) -> f64 {
        self.a / (t2 * t2) + self.phi0
    }

    pub fn visibility(&self, t2: f64) -> f64 {
        0.5 * self.v0 * self.delta_phi(t2).cos() + self.c
    }

    pub fn report(&self) -> FitReport {
        report(
            &["v0", "a_us2", "phi0_rad", "c"],
            vec![self.v0, self.a, self.phi0, self.c],
            &self.solution,
        )
    }
}

/// Linear least squares of `y` on `[cos(a x), sin(a x), 1]`; returns the
/// residual sum of squares and `(v0, phi0, c)`.
fn linear_cosine(x: &[f64], y: &[f64], a: f64) -> (f64, [f64; 3]) {
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for (xi, yi) in x.iter().zip(y) {
        let row = nalgebra::Vector3::new((a * xi).cos(), (a * xi).sin(), 1.0);
        ata += row * row.transpose();
        aty += row * *yi;
    }
    let Some(sol) = ata.try_inverse().map(|inv| inv * aty) else {
        return (f64::INFINITY, [0.0; 3]);
    };
    let rss = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let f = sol[0] * (a * xi).cos() + sol[1] * (a * xi).sin() + sol[2];
            (f - yi).powi(2)
        })
        .sum();
    // p cos + q sin = R cos(a x + φ) with R cos φ = p, R sin φ = -q.
    let r = (sol[0] * sol[0] + sol[1] * sol[1]).sqrt();
    let phi = (-sol[1]).atan2(sol[0]);
    (rss, [2.0 * r, phi, sol[2]])
}

/// Fits the visibility curve from `(T₂, v)` points.
///
/// A dense scan over `a` with the other parameters solved linearly seeds
/// eight local refinements at the deepest scan minima.
pub fn fit_visibility_curve(points: &[(f64, f64)]) -> Result<VisibilityFit> {
    if points.len() < 8 {
        return param(format!(
            "visibility fit needs at least 8 points, got {}",
            points.len()
        ));
    }
    if points.iter().any(|p| !(p.0 > 0.0) || !p.1.is_finite()) {
        return param("visibility points need T2 > 0 and finite values");
    }
    let t2: Vec<f64> = points.iter().map(|p| p.0).collect();
    let v: Vec<f64> = points.iter().map(|p| p.1).collect();
    let x: Vec<f64> = t2.iter().map(|t| 1.0 / (t * t)).collect();
    let mut xs = x.clone();
    xs.sort_by(f64::total_cmp);
    let range = xs[xs.len() - 1] - xs[0];
    let min_gap = xs
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !(range > 0.0) {
        return param("visibility points need distinct T2 values");
    }
    let a_lo = 0.25 * PI / range;
    let a_hi = (PI / min_gap).max(4.0 * a_lo);
    let n_scan = 4000;
    let scan: Vec<(f64, f64, [f64; 3])> = (0..n_scan)
        .map(|i| {
            let a = a_lo * (a_hi / a_lo).powf(i as f64 / (n_scan - 1) as f64);
            let (rss, p) = linear_cosine(&x, &v, a);
            (a, rss, p)
        })
        .collect();
    let mut minima: Vec<usize> = (1..n_scan - 1)
        .filter(|&i| scan[i].1 <= scan[i - 1].1 && scan[i].1 <= scan[i + 1].1)
        .collect();
    minima.sort_by(|&i, &j| scan[i].1.total_cmp(&scan[j].1));
    minima.truncate(PHASE_STARTS);
    if minima.is_empty() {
        minima.push(0);
    }
    let model = VisModel { t2: &t2, v: &v };
    let lower = [-FREE, 0.0, -FREE, -FREE];
    let upper = [FREE; 4];
    let mut sols: Vec<LsqSolution> = Vec::new();
    for &i in &minima {
        let (a, _, p) = scan[i];
        let p0 = [p[0], a, p[1], p[2]];
        sols.push(minimize(
            &model,
            &p0,
            &lower,
            &upper,
            &LsqOptions::default(),
        )?);
    }
    let basin = (0..sols.len())
        .min_by(|&i, &j| sols[i].residual_norm.total_cmp(&sols[j].residual_norm))
        .expect("non-empty");
    let mut distinct: Vec<f64> = Vec::new();
    for s in &sols {
        if !distinct
            .iter()
            .any(|a| (a - s.params[1]).abs() <= 1e-6 * a.abs().max(1.0))
        {
            distinct.push(s.params[1]);
        }
    }
    let sol = sols.swap_remove(basin);
    let (mut v0, mut phi0) = (sol.params[0], sol.params[2]);
    if v0 < 0.0 {
        v0 = -v0;
        phi0 += PI;
    }
    Ok(VisibilityFit {
        v0,
        a: sol.params[1],
        phi0: reduce(phi0, 2.0 * PI),
        c: sol.params[3],
        basin,
        n_basins: distinct.len(),
        solution: sol,
    })
}

struct KappaModel<'a> {
    t2: &'a [f64],
    k: &'a [f64],
}

impl Residuals for KappaModel<'_> {
    fn n_residuals(&self) -> usize {
        self.t2.len()
    }
    fn n_params(&self) -> usize {
        2
    }
    fn eval(&self, p: &[f64], r: &mut [f64]) {
        for i in 0..self.t2.len() {
            r[i] = 2.0 * PI * p[0] / (self.t2[i] + p[1]).sqrt() - self.k[i];
        }
    }
    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
        for i in 0..self.t2.len() {
            let s = (self.t2[i] + p[1]).sqrt();
            j[(i, 0)] = 2.0 * PI / s;
            j[(i, 1)] = -PI * p[0] / (s * s * s);
        }
    }
}

/// `κ(T₂) = 2π a / √(T₂ + b)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaFit {
    pub a: f64,
    pub b: f64,
    pub solution: LsqSolution,
}

impl KappaFit {
    pub fn kappa(&self, t2: f64) -> f64 {
        2.0 * PI * self.a / (t2 + self.b).sqrt()
    }

    pub fn report(&self) -> FitReport {
        report(
            &["a_per_um_sqrt_us", "b_us"],
            vec![self.a, self.b],
            &self.solution,
        )
    }
}

/// Fits `κ(T₂)` from `(T₂, κ)` points, seeded by the linear regression of
/// `1/κ²` on `T₂`.
pub fn fit_kappa_curve(points: &[(f64, f64)]) -> Result<KappaFit> {
    if points.len() < 3 {
        return param("kappa fit needs at least 3 points");
    }
    if points.iter().any(|p| !(p.1 > 0.0) || !p.0.is_finite()) {
        return param("kappa values must be positive");
    }
    let t2: Vec<f64> = points.iter().map(|p| p.0).collect();
    let k: Vec<f64> = points.iter().map(|p| p.1).collect();
    let n = t2.len() as f64;
    let y: Vec<f64> = k.iter().map(|k| 1.0 / (k * k)).collect();
    let mt = t2.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = t2.iter().zip(&y).map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = t2.iter().map(|t| (t - mt).powi(2)).sum();
    let t_min = t2.iter().copied().fold(f64::INFINITY, f64::min);
    let b_floor = -t_min + 1e-6 * t_min.abs().max(1.0);
    let (a0, b0) = if sxx > 0.0 && sxy > 0.0 {
        let slope = sxy / sxx;
        let icpt = my - slope * mt;
        let a = 1.0 / (2.0 * PI * slope.sqrt());
        (a, (icpt / slope).max(b_floor))
    } else {
        (k[0] * t2[0].sqrt() / (2.0 * PI), 0.0)
    };
    let model = KappaModel { t2: &t2, k: &k };
    let sol = minimize(
        &model,
        &[a0, b0],
        &[0.0, b_floor],
        &[FREE, FREE],
        &LsqOptions::default(),
    )?;
    if !sol.converged {
        return Err(Error::Fit(format!(
            "kappa fit stopped after {} iterations at {:?}",
            sol.iterations, sol.params
        )));
    }
    Ok(KappaFit {
        a: sol.params[0],
        b: sol.params[1],
        solution: sol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{generate_pattern, ModelParams};
    use crate::rigidity::MethodsModel;
    use crate::spectral::solve_km;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_signal(a: f64, c: f64, s: f64, off: f64) -> SampledSignal {
        let g = crate::signal::GridSpec::centered(c + 1.0, 6.0 * s, 801).unwrap();
        SampledSignal::from_fn(&g, |z| a * (-(z - c).powi(2) / (2.0 * s * s)).exp() + off)
    }

    #[test]
    fn envelope_exact_on_gaussian() {
        let s = gaussian_signal(1.7, 3.2, 4.5, 0.1);
        let f = fit_envelope(&s).unwrap();
        let e = f.envelope;
        assert!((e.amplitude - 1.7).abs() < 1e-9);
        assert!((e.center - 3.2).abs() < 1e-9);
        assert!((e.sigma - 4.5).abs() < 1e-9);
        assert!((e.offset - 0.1).abs() < 1e-9);
    }

    #[test]
    fn envelope_on_pattern_close_to_sigma() {
        for &dphi in &[0.5, 2.0, 2.0 * PI, 5.0] {
            let p = ModelParams::from_periods(1.0, 5.6, dphi);
            let s = generate_pattern(&p, &p.default_grid()).unwrap();
            let f = fit_envelope(&s).unwrap();
            assert!(
                (f.envelope.sigma - p.sigma).abs() < 0.15 * p.sigma,
                "dphi {dphi}"
            );
        }
    }

    #[test]
    fn envelope_centre_under_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 1.0 / 20.0).unwrap();
        let mut ok = 0;
        for _ in 0..100 {
            let mut s = gaussian_signal(1.0, 0.0, 5.0, 0.0);
            for v in &mut s.values {
                *v += noise.sample(&mut rng);
            }
            let f = fit_envelope(&s).unwrap();
            if (f.envelope.center).abs() < 5.0 / 20.0 {
                ok += 1;
            }
        }
        assert!(ok >= 95, "{ok}");
    }

    #[test]
    fn fringes_on_plateau_centre() {
        let p = ModelParams::from_periods(1.0, 5.6, 4.0 * PI);
        let s = generate_pattern(&p, &p.default_grid()).unwrap();
        let f = fit_fringes(&s, 1.0, None).unwrap();
        // Equal patterns on top of each other: 2 G sin²(z/2) = G (1 - cos z)
        // = G (1 + sin(z - π/2)), so v = 1 and φ̄ = 3π/2 at full overlap.
        assert!(f.visibility > 0.8 && f.visibility <= 1.0 + 1e-9);
        assert!(!f.low_confidence);
        let full =
            generate_pattern(&ModelParams::from_periods(1.0, 5.6, 0.0), &p.default_grid()).unwrap();
        let f0 = fit_fringes(&full, 1.0, None).unwrap();
        assert!((f0.visibility - 1.0).abs() < 1e-6);
        assert!((f0.phase - 1.5 * PI).abs() < 1e-6);
    }

    #[test]
    fn visibility_dips_at_odd_pi() {
        let vis = |d: f64| {
            let p = ModelParams::from_periods(1.0, 5.6, d);
            let s = generate_pattern(&p, &p.default_grid()).unwrap();
            let km = solve_km(&p).unwrap().k_m;
            fit_fringes(&s, km, None).unwrap().visibility
        };
        let mid = vis(3.0 * PI);
        assert!(mid < vis(3.0 * PI - 0.4) && mid < vis(3.0 * PI + 0.4));
    }

    #[test]
    fn no_fringes_gives_small_visibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 1.0 / 50.0).unwrap();
        let mut s = gaussian_signal(1.0, 0.0, 9.0, 0.0);
        for v in &mut s.values {
            *v += noise.sample(&mut rng);
        }
        let f = fit_fringes(&s, 1.0, None).unwrap();
        assert!(f.visibility < 0.02, "{}", f.visibility);
    }

    #[test]
    fn fixed_k_is_near_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1.0 / 30.0).unwrap();
        for &dphi in &[2.5, 2.0 * PI, 3.0 * PI + 0.3] {
            let p = ModelParams::from_periods(1.0, 5.6, dphi);
            let mut s = generate_pattern(&p, &p.default_grid()).unwrap();
            for v in &mut s.values {
                *v += noise.sample(&mut rng);
            }
            let env = fit_envelope(&s).unwrap();
            let r = crate::spectral::numerical_spectrum(&s, &env.envelope, &Default::default())
                .unwrap();
            let fixed = fit_fringes(&s, r.primary.k, Some(&env)).unwrap();
            let free = fit_fringes_free_k(&s, r.primary.k, Some(&env)).unwrap();
            assert!(
                fixed.solution.residual_norm <= 1.05 * free.solution.residual_norm,
                "dphi {dphi}: {} vs {}",
                fixed.solution.residual_norm,
                free.solution.residual_norm
            );
        }
    }

    #[test]
    fn visibility_curve_recovers_methods_values() {
        let m = MethodsModel::default();
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let t = 160.0 + 640.0 * i as f64 / 39.0;
                (t, 0.5 * 0.8 * (m.delta_phi(t)).cos() + 0.45)
            })
            .collect();
        let f = fit_visibility_curve(&pts).unwrap();
        assert!((f.a - 163e3).abs() < 0.02 * 163e3);
        assert!((f.phi0 - 1.3).abs() < 0.02 * 1.3);
        assert!((f.v0 - 0.8).abs() < 0.02 * 0.8);
        assert!(f.phi0 >= 0.0 && f.phi0 < 2.0 * PI);
    }

    #[test]
    fn visibility_curve_with_multiplicative_noise() {
        let m = MethodsModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut errs = Vec::new();
        for _ in 0..100 {
            let pts: Vec<(f64, f64)> = (0..60)
                .map(|i| {
                    let t = 150.0 + 650.0 * i as f64 / 59.0;
                    let v = 0.5 * (m.delta_phi(t)).cos() + 0.5;
                    (t, v * (1.0 + noise.sample(&mut rng)))
                })
                .collect();
            let f = fit_visibility_curve(&pts).unwrap();
            errs.push((f.a - m.a).abs() / m.a);
        }
        errs.sort_by(f64::total_cmp);
        assert!(errs[50] < 0.05, "median {}", errs[50]);
    }

    #[test]
    fn kappa_curve_recovery() {
        let m = MethodsModel::default();
        for i in [1u8, 2] {
            let pts: Vec<(f64, f64)> = (0..30)
                .map(|j| {
                    let t = 150.0 + 650.0 * j as f64 / 29.0;
                    (t, m.kappa_i(i, t).unwrap())
                })
                .collect();
            let f = fit_kappa_curve(&pts).unwrap();
            let (a, b) = if i == 1 { (m.a1, m.b1) } else { (m.a2, m.b2) };
            assert!((f.a - a).abs() < 0.02 * a);
            assert!((f.b - b).abs() < 0.02 * b.abs());
            for w in pts.windows(2) {
                assert!(f.kappa(w[1].0) < f.kappa(w[0].0));
            }
        }
    }

    #[test]
    fn fit_errors() {
        assert!(fit_visibility_curve(&[(1.0, 1.0); 5]).is_err());
        assert!(fit_kappa_curve(&[(1.0, 1.0)]).is_err());
    }
}
