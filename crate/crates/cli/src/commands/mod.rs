pub mod analytic;
pub mod pipeline;
pub mod scan;
pub mod simulate;
pub mod wigner;

use crate::error::CliError;

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, CliError> {
    if n < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(CliError::Config(format!(
            "axis needs finite bounds lo < hi and at least 2 points (got [{lo}, {hi}], {n})"
        )));
    }
    let d = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| lo + d * i as f64).collect())
}

/// Formats an optional value, leaving the cell empty for `None` or `NaN`.
pub fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => moire::signal::fmt_f64(x),
        _ => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_hits_both_ends() {
        let v = linspace(1.0, 2.0, 5).unwrap();
        assert_eq!(v, vec![1.0, 1.25, 1.5, 1.75, 2.0]);
        assert!(linspace(1.0, 1.0, 5).is_err());
        assert!(linspace(0.0, 1.0, 1).is_err());
    }
}
