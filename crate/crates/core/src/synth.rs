//! Synthetic absorption images.
//!
//! An image replicates a 1D profile along `rows`, adds white Gaussian noise
//! and optionally blurs along `z`. Summing the columns gives back a 1D
//! profile whose peak-to-noise ratio is the requested SNR.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::signal::{fmt_f64, GridSpec, SampledSignal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageOptions {
    pub rows: usize,
    /// Peak over noise standard deviation of the column sum; `None` is
    /// noiseless.
    pub snr: Option<f64>,
    /// Gaussian blur along z in μm (0 disables).
    pub blur: f64,
}

impl Default for ImageOptions {
    fn default() -> Self {
        Self {
            rows: 32,
            snr: None,
            blur: 0.0,
        }
    }
}

impl ImageOptions {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return param("image needs at least one row");
        }
        if let Some(s) = self.snr {
            if !(s > 0.0) {
                return param(format!("SNR must be positive, got {s}"));
            }
        }
        if !(self.blur >= 0.0) {
            return param(format!("blur must be non-negative, got {}", self.blur));
        }
        Ok(())
    }
}

/// Row-major image; columns follow `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdImage {
    pub z_grid: GridSpec,
    pub rows: usize,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ImageSidecar {
    dtype: String,
    layout: String,
    z_grid: GridSpec,
    rows: usize,
}

/// Convolves with a normalised Gaussian of width `blur` (in samples beyond
/// the ends the profile is taken as zero).
fn blur_profile(v: &[f64], dz: f64, blur: f64) -> Vec<f64> {
    let s = blur / dz;
    let half = (4.0 * s).ceil() as isize;
    let kern: Vec<f64> = (-half..=half)
        .map(|j| (-0.5 * (j as f64 / s).powi(2)).exp())
        .collect();
    let total: f64 = kern.iter().sum();
    let n = v.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, w) in kern.iter().enumerate() {
                let j = i + k as isize - half;
                if (0..n).contains(&j) {
                    acc += w * v[j as usize];
                }
            }
            acc / total
        })
        .collect()
}

/// Builds an image from `profile` using `rng` for the noise.
pub fn synth_image<R: Rng + ?Sized>(
    profile: &SampledSignal,
    opts: &ImageOptions,
    rng: &mut R,
) -> Result<CcdImage> {
    opts.validate()?;
    let base = if opts.blur > 0.0 {
        blur_profile(&profile.values, profile.dz, opts.blur)
    } else {
        profile.values.clone()
    };
    let peak = base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let noise = match opts.snr {
        Some(snr) => Some(
            Normal::new(0.0, peak * (opts.rows as f64).sqrt() / snr)
                .map_err(|e| Error::Parameter(format!("noise model: {e}")))?,
        ),
        None => None,
    };
    let mut values = Vec::with_capacity(opts.rows * base.len());
    for _ in 0..opts.rows {
        for &b in &base {
            let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
            values.push(b + n);
        }
    }
    Ok(CcdImage {
        z_grid: profile.grid(),
        rows: opts.rows,
        values,
    })
}

impl CcdImage {
    /// Sum over rows, divided by the row count.
    pub fn column_sum(&self) -> SampledSignal {
        let n = self.z_grid.len;
        let mut out = vec![0.0; n];
        for row in self.values.chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let r = self.rows as f64;
        SampledSignal {
            z0: self.z_grid.start,
            dz: self.z_grid.step,
            values: out.into_iter().map(|v| v / r).collect(),
        }
    }

    /// Little-endian float64 values plus a `.json` sidecar with the axes.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes)?;
        let side = ImageSidecar {
            dtype: "float64-le".into(),
            layout: "row-major, columns along z".into(),
            z_grid: self.z_grid,
            rows: self.rows,
        };
        std::fs::write(
            path.with_extension("json"),
            serde_json::to_string_pretty(&side)?,
        )?;
        Ok(())
    }

    /// Long-format CSV `row, z_um, value`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["row", "z_um", "optical_density"])?;
        for (r, row) in self.values.chunks(self.z_grid.len).enumerate() {
            for (i, v) in row.iter().enumerate() {
                wr.write_record([r.to_string(), fmt_f64(self.z_grid.at(i)), fmt_f64(*v)])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}
