//! Special functions: log-gamma, digamma and the Beta distribution's density,
//! CDF (regularized incomplete beta) and inverse CDF.

use crate::error::{Result, UnmixError};

const CF_MAX_ITER: usize = 300;
const CF_TOL: f64 = 1e-14;
const FPMIN: f64 = 1e-300;

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn digamma(x: f64) -> f64 {
    statrs::function::gamma::digamma(x)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Log-density of Beta(a, b) at interior `x`.
pub fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_TOL {
            return Ok(h);
        }
    }
    Err(UnmixError::Numeric(format!(
        "incomplete beta continued fraction did not converge in {CF_MAX_ITER} iterations \
         (a = {a}, b = {b}, x = {x})"
    )))
}

/// Regularized incomplete beta `I_x(a, b)`, i.e. the Beta(a, b) CDF.
pub fn beta_cdf(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(UnmixError::Domain(format!(
            "Beta shapes must be positive (a = {a}, b = {b})"
        )));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x)? / b)
    }
}

/// Inverse of [`beta_cdf`] in `x`, by safeguarded Newton iteration.
pub fn beta_inv_cdf(u: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(UnmixError::Domain(format!("quantile level {u} outside [0, 1]")));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    if u == 1.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x = a / (a + b);
    for _ in 0..200 {
        let f = beta_cdf(x, a, b)? - u;
        if f.abs() < 1e-15 {
            return Ok(x);
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let pdf = beta_ln_pdf(x, a, b).exp();
        let newton = x - f / pdf;
        x = if pdf.is_finite() && pdf > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-16 * x.max(1e-300) {
            return Ok(x);
        }
    }
    Ok(x)
}

/// Beta(α, β) density, CDF and the derivative of the CDF with respect to α.
///
/// The α-derivative is a central difference with step `1e-4·max(1, α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaEval {
    pub pdf: f64,
    pub cdf: f64,
    pub dcdf_dalpha: f64,
}

pub fn beta_functions(x: f64, alpha: f64, beta: f64) -> Result<BetaEval> {
    if !(x > 0.0 && x < 1.0) {
        return Err(UnmixError::Domain(format!("Beta argument {x} not in (0, 1)")));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(UnmixError::Domain(format!(
            "Beta shapes must be positive (alpha = {alpha}, beta = {beta})"
        )));
    }
    let pdf = beta_ln_pdf(x, alpha, beta).exp();
    let cdf = beta_cdf(x, alpha, beta)?;
    Ok(BetaEval {
        pdf,
        cdf,
        dcdf_dalpha: dcdf_dalpha(x, alpha, beta)?,
    })
}

/// ∂I_x(α, β)/∂α by central difference.
pub fn dcdf_dalpha(x: f64, alpha: f64, beta: f64) -> Result<f64> {
    let h = 1e-4 * alpha.max(1.0);
    // keep the lower stencil point inside the domain for tiny α
    let h = h.min(0.5 * alpha);
    let up = beta_cdf(x, alpha + h, beta)?;
    let down = beta_cdf(x, alpha - h, beta)?;
    Ok((up - down) / (2.0 * h))
}
