//! Finite-size moiré patterns: closed-form spectra, rigidity of the dominant
//! wavenumber, a Gaussian-wavepacket model of the Stern-Gerlach sequence that
//! produces them, Wigner-function checks and an image analysis pipeline.
//!
//! Units: μm, rad/μm, μs and G. Potentials are divided by ħ (rad/μs).
//!
//! ```
//! use moire::pattern::ModelParams;
//! use moire::spectral::solve_km;
//!
//! let p = ModelParams::from_periods(0.2, 5.61, 2.0 * std::f64::consts::PI);
//! assert!((solve_km(&p).unwrap().k_m - 0.2).abs() < 1e-12);
//! ```

// `!(x > 0.0)` is used throughout so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod field;
pub mod fitting;
pub mod lsq;
pub mod pattern;
pub mod pipeline;
pub mod rigidity;
pub mod roots;
pub mod sequence;
pub mod signal;
pub mod spectral;
pub mod synth;
pub mod units;
pub mod wavepacket;
pub mod wigner;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/patterns.md")]
    mod patterns {}
    #[doc = include_str!("../../../book/src/rigidity.md")]
    mod rigidity {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/wigner.md")]
    mod wigner {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
