//! Bracketed scalar root finding.

use crate::error::{Error, Result};

/// Brent's method on a bracket with a sign change.
///
/// Returns the root once the bracket is narrower than `xtol` or `f` hits zero.
pub fn brent(f: impl Fn(f64) -> f64, lo: f64, hi: f64, xtol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(Error::Root(format!(
            "no sign change on [{lo}, {hi}]: f = {fa}, {fb}"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Err(Error::Root(format!(
        "brent did not converge on [{lo}, {hi}]"
    )))
}

/// Newton iteration kept inside a bracket, falling back to bisection.
///
/// `fdf` returns `(f, f')`. The bracket must contain a sign change.
pub fn safeguarded_newton(
    fdf: impl Fn(f64) -> (f64, f64),
    lo: f64,
    hi: f64,
    xtol: f64,
) -> Result<f64> {
    let (flo, _) = fdf(lo);
    let (fhi, _) = fdf(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || !(flo.is_finite() && fhi.is_finite()) {
        return Err(Error::Root(format!("no sign change on [{lo}, {hi}]")));
    }
    let (mut xl, mut xh) = if flo < 0.0 { (lo, hi) } else { (hi, lo) };
    let mut x = 0.5 * (lo + hi);
    let mut dx_old = (hi - lo).abs();
    let mut dx = dx_old;
    let (mut f, mut df) = fdf(x);
    for _ in 0..300 {
        let newton_leaves = ((x - xh) * df - f) * ((x - xl) * df - f) > 0.0;
        let slow = (2.0 * f).abs() > (dx_old * df).abs();
        dx_old = dx;
        if newton_leaves || slow || df == 0.0 {
            dx = 0.5 * (xh - xl);
            x = xl + dx;
        } else {
            dx = f / df;
            x -= dx;
        }
        if dx.abs() < xtol {
            return Ok(x);
        }
        let r = fdf(x);
        f = r.0;
        df = r.1;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            xl = x;
        } else {
            xh = x;
        }
    }
    Err(Error::Root(format!(
        "newton did not converge on [{lo}, {hi}]"
    )))
}
