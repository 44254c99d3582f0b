//! Uniformly sampled real signals and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// A uniform grid `z_i = start + i * step`, `i < len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl GridSpec {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() || !start.is_finite() {
            return param(format!("grid step must be positive and finite, got {step}"));
        }
        if len < 2 {
            return param("grid needs at least two points");
        }
        Ok(Self { start, step, len })
    }

    /// `len` points spanning `[center - half_width, center + half_width]`.
    pub fn centered(center: f64, half_width: f64, len: usize) -> Result<Self> {
        if len < 2 || !(half_width > 0.0) {
            return param("centered grid needs len >= 2 and half_width > 0");
        }
        let step = 2.0 * half_width / (len - 1) as f64;
        Self::new(center - half_width, step, len)
    }

    pub fn end(&self) -> f64 {
        self.start + self.step * (self.len - 1) as f64
    }

    pub fn at(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.at(i))
    }
}

/// Real samples on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    pub z0: f64,
    pub dz: f64,
    pub values: Vec<f64>,
}

impl SampledSignal {
    pub fn new(z0: f64, dz: f64, values: Vec<f64>) -> Result<Self> {
        GridSpec::new(z0, dz, values.len())?;
        Ok(Self { z0, dz, values })
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64) -> f64) -> Self {
        Self {
            z0: grid.start,
            dz: grid.step,
            values: grid.points().map(f).collect(),
        }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            start: self.z0,
            step: self.dz,
            len: self.values.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn z(&self, i: usize) -> f64 {
        self.z0 + self.dz * i as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.write_csv_named(w, "value")
    }

    /// Like [`SampledSignal::write_csv`] with a custom value column name.
    pub fn write_csv_named<W: Write>(&self, w: W, column: &str) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["z_um", column])?;
        for (i, v) in self.values.iter().enumerate() {
            wr.write_record([fmt_f64(self.z(i)), fmt_f64(*v)])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a two-column CSV with a header; the z column must be uniform.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut zs = Vec::new();
        let mut vs = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Parameter("signal CSV needs two columns".into()));
            }
            let z: f64 = parse_field(&rec[0])?;
            let v: f64 = parse_field(&rec[1])?;
            zs.push(z);
            vs.push(v);
        }
        if zs.len() < 2 {
            return param("signal CSV needs at least two rows");
        }
        let dz = (zs[zs.len() - 1] - zs[0]) / (zs.len() - 1) as f64;
        for (i, z) in zs.iter().enumerate() {
            if (z - (zs[0] + dz * i as f64)).abs() > 1e-6 * dz.abs().max(1e-300) {
                return Err(Error::Sampling(format!("non-uniform z at row {i}")));
            }
        }
        Self::new(zs[0], dz, vs)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub(crate) fn parse_field(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("not a number: {s:?}")))
}

/// Round-trippable decimal formatting used by all CSV writers.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}
