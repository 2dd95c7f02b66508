//! Studentized range distribution by nested quadrature.
//!
//! For `k` independent standard normals with range `R`, and an independent
//! scale `S = sqrt(chi2_df / df)`,
//!
//! ```text
//! P(R <= w)     = k * int phi(z) [Phi(z) - Phi(z - w)]^(k-1) dz
//! P(R / S <= q) = int f_S(s) P(R <= q s) ds
//! ```
//!
//! Both integrals use composite Gauss-Legendre, doubling the panel count
//! until successive estimates agree.

use super::special::{composite_gl, ln_gamma_fn, normal_cdf, normal_pdf};
use super::StatsError;

const INNER_TOL: f64 = 1e-11;
const OUTER_TOL: f64 = 1e-8;
const MAX_PANELS: usize = 1 << 12;
/// Beyond this many degrees of freedom the scale is treated as exactly 1.
const DF_INFINITE: f64 = 1e6;
/// Normal density is below 1e-16 outside this half-width.
const Z_LIMIT: f64 = 8.5;
/// Outer window keeps the scale density within exp(-45) of its peak.
const LOG_DENSITY_DROP: f64 = 45.0;

/// `P(Q <= q)` for the studentized range with `k` means and `df` error
/// degrees of freedom.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> Result<f64, StatsError> {
    validate(q, k, df)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    if q.is_infinite() {
        return Ok(1.0);
    }
    let p = if df >= DF_INFINITE {
        range_cdf(q, k)?
    } else {
        scaled_range_cdf(q, k, df)?
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Upper tail `P(Q > q)`.
pub fn studentized_range_sf(q: f64, k: usize, df: f64) -> Result<f64, StatsError> {
    Ok((1.0 - studentized_range_cdf(q, k, df)?).clamp(0.0, 1.0))
}

fn validate(q: f64, k: usize, df: f64) -> Result<(), StatsError> {
    if q.is_nan() || q < 0.0 {
        return Err(StatsError::InvalidInput(format!("range statistic must be >= 0, got {q}")));
    }
    if k < 2 {
        return Err(StatsError::InvalidInput(format!("need k >= 2 means, got {k}")));
    }
    if df.is_nan() || df <= 0.0 {
        return Err(StatsError::InvalidInput(format!("df must be positive, got {df}")));
    }
    Ok(())
}

/// Range CDF of `k` standard normals (infinite df).
fn range_cdf(w: f64, k: usize) -> Result<f64, StatsError> {
    if w <= 0.0 {
        return Ok(0.0);
    }
    let power = (k - 1) as i32;
    let integrand = |z: f64| normal_pdf(z) * (normal_cdf(z) - normal_cdf(z - w)).powi(power);
    let (value, change) = refine(|panels| composite_gl(integrand, -Z_LIMIT, Z_LIMIT, panels), 8, INNER_TOL);
    if change > INNER_TOL {
        return Err(StatsError::Quadrature {
            x: w,
            k,
            df: f64::INFINITY,
            estimate: k as f64 * value,
            change,
        });
    }
    Ok(k as f64 * value)
}

/// Log density of `S = sqrt(chi2_df / df)`.
fn scale_log_density(s: f64, df: f64) -> f64 {
    if s <= 0.0 {
        return f64::NEG_INFINITY;
    }
    std::f64::consts::LN_2 + 0.5 * df * (0.5 * df).ln() - ln_gamma_fn(0.5 * df) + (df - 1.0) * s.ln()
        - 0.5 * df * s * s
}

fn scaled_range_cdf(q: f64, k: usize, df: f64) -> Result<f64, StatsError> {
    let mut inner_error = None;
    let mut inner = |s: f64| match range_cdf(q * s, k) {
        Ok(p) => p,
        Err(e) => {
            inner_error.get_or_insert(e);
            f64::NAN
        }
    };
    let (value, change) = if df < 2.0 {
        // substitute t = s^df so the s^(df-1) factor near zero disappears
        let (lo, hi) = scale_window(df);
        let (t_lo, t_hi) = (lo.powf(df), hi.powf(df));
        let log_c = std::f64::consts::LN_2 + 0.5 * df * (0.5 * df).ln() - ln_gamma_fn(0.5 * df) - df.ln();
        refine(
            |panels| {
                composite_gl(
                    |t| {
                        let s = t.max(0.0).powf(1.0 / df);
                        (log_c - 0.5 * df * s * s).exp() * inner(s)
                    },
                    t_lo,
                    t_hi,
                    panels,
                )
            },
            4,
            OUTER_TOL,
        )
    } else {
        let (lo, hi) = scale_window(df);
        refine(
            |panels| composite_gl(|s| scale_log_density(s, df).exp() * inner(s), lo, hi, panels),
            4,
            OUTER_TOL,
        )
    };
    if let Some(e) = inner_error {
        return Err(e);
    }
    if !(change <= OUTER_TOL) {
        return Err(StatsError::Quadrature {
            x: q,
            k,
            df,
            estimate: value,
            change,
        });
    }
    Ok(value)
}

/// Interval of `s` outside which the scale density is negligible.
fn scale_window(df: f64) -> (f64, f64) {
    let mode = if df > 1.0 { ((df - 1.0) / df).sqrt() } else { 0.0 };
    let peak = if mode > 0.0 { scale_log_density(mode, df) } else { scale_log_density(1e-3, df) };
    let step = (1.0 / (2.0 * df).sqrt()).min(0.5) / 4.0;
    let mut hi = mode.max(step);
    while scale_log_density(hi, df) > peak - LOG_DENSITY_DROP {
        hi += step;
    }
    let mut lo = mode;
    while lo > 0.0 && scale_log_density(lo, df) > peak - LOG_DENSITY_DROP {
        lo -= step;
    }
    (lo.max(0.0), hi)
}

/// Double the panel count until two estimates agree within `tol`.
/// Returns the last estimate and the last change.
fn refine<F: FnMut(usize) -> f64>(mut estimate: F, start: usize, tol: f64) -> (f64, f64) {
    let mut panels = start;
    let mut prev = estimate(panels);
    let mut change = f64::INFINITY;
    while panels < MAX_PANELS {
        panels *= 2;
        let next = estimate(panels);
        change = (next - prev).abs();
        prev = next;
        if change <= tol {
            break;
        }
    }
    (prev, change)
}
