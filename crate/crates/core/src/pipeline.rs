//! End-to-end analysis of synthetic image series.
//!
//! For every `T₂` of a scan three images are rendered from the Methods
//! model: the moiré pattern and the two single-state patterns. Each image is
//! column-summed, envelope-fitted and Fourier analysed; single-state images
//! give `κ_i(T₂)` through a free-`K` fringe fit, the moiré image gives `K_M`,
//! the secondary-peak flag and the visibility. The visibility curve then
//! yields `Δφ(T₂)` and the `κ_i` series the single-state wavenumber curves.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::fitting::{
    fit_envelope, fit_fringes, fit_fringes_free_k, fit_kappa_curve, fit_visibility_curve, FitReport,
};
use crate::pattern::{generate_pattern, ModelParams};
use crate::rigidity::MethodsModel;
use crate::signal::{GridSpec, SampledSignal};
use crate::spectral::{numerical_spectrum, SpectralResult, SpectrumOptions};
use crate::synth::{synth_image, ImageOptions};

pub const PIPELINE_SCHEMA: u32 = 1;

/// Reference relative intensities inside this band around the threshold
/// are too close to call and are excluded from the secondary-peak check.
pub const SECONDARY_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub model: MethodsModel,
    /// Scan range in μs; points are uniform in `1/T₂²`, i.e. in `Δφ`. The
    /// default spans `Δφ ∈ [π/2, 9π/2]`, two full visibility periods
    /// between zero crossings, which keeps the cosine fit unbiased.
    pub t2_min: f64,
    pub t2_max: f64,
    pub t2_points: usize,
    /// Pixels along z.
    pub columns: usize,
    pub image: ImageOptions,
    pub spectrum: SpectrumOptions,
    /// Samples of the noiseless reference profile.
    pub reference_points: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: PIPELINE_SCHEMA,
            model: MethodsModel::default(),
            t2_min: 113.0,
            t2_max: 776.0,
            t2_points: 40,
            columns: 1024,
            image: ImageOptions::default(),
            spectrum: SpectrumOptions::default(),
            reference_points: 4096,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != PIPELINE_SCHEMA {
            return param(format!(
                "pipeline schema {} is not supported (expected {PIPELINE_SCHEMA})",
                self.schema_version
            ));
        }
        if !(self.t2_min > 0.0 && self.t2_max > self.t2_min) {
            return param("need 0 < t2_min < t2_max");
        }
        let b_max = self.model.b1.max(self.model.b2);
        if self.t2_min + self.model.b1.min(self.model.b2) <= 0.0 {
            return param(format!(
                "t2_min = {} us must exceed -b = {} us",
                self.t2_min, -b_max
            ));
        }
        if self.t2_points < 8 {
            return param("the visibility fit needs at least 8 T2 points");
        }
        if self.columns < 64 || self.reference_points < 64 {
            return param("profiles need at least 64 samples");
        }
        self.image.validate()
    }

    /// Scan points, ascending, uniform in `1/T₂²`.
    pub fn t2_grid(&self) -> Vec<f64> {
        let (u0, u1) = (self.t2_max.powi(-2), self.t2_min.powi(-2));
        let n = self.t2_points;
        let mut t: Vec<f64> = (0..n)
            .map(|i| (u0 + (u1 - u0) * i as f64 / (n - 1) as f64).powf(-0.5))
            .collect();
        t.reverse();
        t
    }
}

/// Generating parameters at one `T₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub kappa1: f64,
    pub kappa2: f64,
    pub sigma: f64,
    pub delta_phi: f64,
}

impl Truth {
    pub fn at(model: &MethodsModel, t2: f64) -> Result<Self> {
        Ok(Self {
            kappa1: model.kappa_i(1, t2)?,
            kappa2: model.kappa_i(2, t2)?,
            sigma: model.sigma(t2)?,
            delta_phi: model.delta_phi(t2),
        })
    }

    /// Moiré pattern parameters with `Δz = Δφ/κ̄` centred on zero.
    pub fn moire(&self) -> ModelParams {
        let dz = self.delta_phi / (0.5 * (self.kappa1 + self.kappa2));
        ModelParams {
            kappa1: self.kappa1,
            kappa2: self.kappa2,
            theta1: 0.0,
            theta2: 0.0,
            z1: -0.5 * dz,
            z2: 0.5 * dz,
            sigma: self.sigma,
        }
    }

    /// Single-state pattern of spin `i`.
    pub fn single(&self, i: u8) -> ModelParams {
        let k = if i == 1 { self.kappa1 } else { self.kappa2 };
        ModelParams::symmetric(k, self.sigma, 0.0, 0.0)
    }

    fn grid(&self, n: usize) -> Result<GridSpec> {
        let half = 0.5 * self.moire().delta_z().abs() + 6.0 * self.sigma;
        GridSpec::centered(0.0, half, n)
    }
}

/// Measurements at one `T₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelinePoint {
    pub t2: f64,
    pub truth: Truth,
    pub kappa1: f64,
    pub kappa2: f64,
    pub k_m: f64,
    pub secondary_k: Option<f64>,
    pub relative_intensity: Option<f64>,
    pub visibility: f64,
    /// Visibility of the noiseless dense profile.
    pub visibility_ref: f64,
    /// Relative intensity of the second peak of the noiseless dense profile.
    pub relative_intensity_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    /// Largest relative error of the fitted `κ_i(T₂)` curves.
    pub kappa_error: f64,
    /// Largest relative error of `Δφ(T₂)` from the visibility fit.
    pub delta_phi_error: f64,
    /// Largest `|v - v_ref|` over the largest `v_ref`.
    pub visibility_error: f64,
    /// Points whose reference relative intensity is outside the margin.
    pub secondary_checked: usize,
    pub secondary_agree: usize,
    /// Points where the rule fired on the image.
    pub secondary_fired: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub points: Vec<PipelinePoint>,
    pub kappa_fits: [FitReport; 2],
    pub visibility_fit: FitReport,
    /// Fitted `(a, φ₀)` of the differential phase.
    pub delta_phi_fit: (f64, f64),
    pub summary: PipelineSummary,
}

fn spectrum(
    signal: &SampledSignal,
    opts: &SpectrumOptions,
) -> Result<(crate::fitting::EnvelopeFit, SpectralResult)> {
    let env = fit_envelope(signal)?;
    let spec = numerical_spectrum(signal, &env.envelope, opts)?;
    Ok((env, spec))
}

fn measure_point(cfg: &PipelineConfig, index: usize, t2: f64) -> Result<PipelinePoint> {
    let truth = Truth::at(&cfg.model, t2)?;
    let grid = truth.grid(cfg.columns)?;
    let image = |params: &ModelParams, stream: u64| -> Result<SampledSignal> {
        let profile = generate_pattern(params, &grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(3 * index as u64 + stream);
        Ok(synth_image(&profile, &cfg.image, &mut rng)?.column_sum())
    };

    let mut kappa = [0.0; 2];
    for (i, k) in kappa.iter_mut().enumerate() {
        let s = image(&truth.single(i as u8 + 1), i as u64 + 1)?;
        let (env, spec) = spectrum(&s, &cfg.spectrum)?;
        *k = fit_fringes_free_k(&s, spec.primary.k, Some(&env))?.k_m;
    }

    let s = image(&truth.moire(), 0)?;
    let (env, spec) = spectrum(&s, &cfg.spectrum)?;
    let fringe = fit_fringes(&s, spec.primary.k, Some(&env))?;

    let dense = generate_pattern(&truth.moire(), &truth.grid(cfg.reference_points)?)?;
    let ref_opts = SpectrumOptions {
        secondary_threshold: 0.0,
        ..cfg.spectrum
    };
    let (renv, rspec) = spectrum(&dense, &ref_opts)?;
    let rfringe = fit_fringes(&dense, rspec.primary.k, Some(&renv))?;

    Ok(PipelinePoint {
        t2,
        truth,
        kappa1: kappa[0],
        kappa2: kappa[1],
        k_m: spec.primary.k,
        secondary_k: spec.secondary.map(|p| p.k),
        relative_intensity: spec.secondary.map(|p| p.relative_intensity),
        visibility: fringe.visibility,
        visibility_ref: rfringe.visibility,
        relative_intensity_ref: rspec.secondary.map_or(0.0, |p| p.relative_intensity),
    })
}

/// Renders, analyses and fits a full `T₂` scan.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let points: Vec<PipelinePoint> = cfg
        .t2_grid()
        .into_par_iter()
        .enumerate()
        .map(|(i, t2)| measure_point(cfg, i, t2))
        .collect::<Result<_>>()?;

    let k1 = fit_kappa_curve(&points.iter().map(|p| (p.t2, p.kappa1)).collect::<Vec<_>>())?;
    let k2 = fit_kappa_curve(&points.iter().map(|p| (p.t2, p.kappa2)).collect::<Vec<_>>())?;
    let vis = fit_visibility_curve(
        &points
            .iter()
            .map(|p| (p.t2, p.visibility))
            .collect::<Vec<_>>(),
    )?;

    let mut s = PipelineSummary {
        kappa_error: 0.0,
        delta_phi_error: 0.0,
        visibility_error: 0.0,
        secondary_checked: 0,
        secondary_agree: 0,
        secondary_fired: 0,
    };
    let v_scale = points.iter().fold(0.0f64, |m, p| m.max(p.visibility_ref));
    let threshold = cfg.spectrum.secondary_threshold;
    for p in &points {
        let t = &p.truth;
        s.kappa_error = s
            .kappa_error
            .max((k1.kappa(p.t2) / t.kappa1 - 1.0).abs())
            .max((k2.kappa(p.t2) / t.kappa2 - 1.0).abs());
        s.delta_phi_error = s
            .delta_phi_error
            .max((vis.delta_phi(p.t2) / t.delta_phi - 1.0).abs());
        s.visibility_error = s
            .visibility_error
            .max((p.visibility - p.visibility_ref).abs() / v_scale);
        let fired = p.secondary_k.is_some();
        s.secondary_fired += usize::from(fired);
        if (p.relative_intensity_ref - threshold).abs() > SECONDARY_MARGIN {
            s.secondary_checked += 1;
            s.secondary_agree += usize::from(fired == (p.relative_intensity_ref >= threshold));
        }
    }
    Ok(PipelineReport {
        points,
        kappa_fits: [k1.report(), k2.report()],
        visibility_fit: vis.report(),
        delta_phi_fit: (vis.a, vis.phi0),
        summary: s,
    })
}

impl PipelineReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        use crate::signal::fmt_f64;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "t2_us",
            "kappa1_true_rad_per_um",
            "kappa2_true_rad_per_um",
            "delta_phi_true_rad",
            "kappa1_rad_per_um",
            "kappa2_rad_per_um",
            "k_m_rad_per_um",
            "secondary_k_rad_per_um",
            "relative_intensity",
            "visibility",
            "visibility_ref",
            "relative_intensity_ref",
        ])?;
        for p in &self.points {
            wr.write_record([
                fmt_f64(p.t2),
                fmt_f64(p.truth.kappa1),
                fmt_f64(p.truth.kappa2),
                fmt_f64(p.truth.delta_phi),
                fmt_f64(p.kappa1),
                fmt_f64(p.kappa2),
                fmt_f64(p.k_m),
                opt(p.secondary_k),
                opt(p.relative_intensity),
                fmt_f64(p.visibility),
                fmt_f64(p.visibility_ref),
                fmt_f64(p.relative_intensity_ref),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
