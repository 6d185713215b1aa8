//! The Yule-Simon scroll-depth distribution and the special functions it
//! needs: log-gamma, digamma, PMF and survival function in log-space, the
//! analytic derivative of the log-survival in the shape parameter, and an
//! exact sampler.
//!
//! All probability evaluation happens in log-space and is exponentiated only
//! at the boundary; the Beta function underflows in direct form at large
//! ranks.

use rand::Rng;

use crate::error::{Error, Result};

/// Smallest admissible shape parameter. The distribution degenerates as the
/// shape approaches zero (the PMF vanishes everywhere).
pub const MIN_RHO: f64 = 1e-6;

/// Shape parameter of the Yule-Simon scroll-depth distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YuleSimonParams {
    rho: f64,
}

impl YuleSimonParams {
    pub fn new(rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho < MIN_RHO {
            return Err(Error::Domain(format!(
                "shape parameter must be finite and >= {MIN_RHO}, got {rho}"
            )));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

// Lanczos approximation with g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

const HALF_LN_TWO_PI: f64 = 0.91893853320467274178;

fn lgamma_raw(x: f64) -> f64 {
    // Upward recurrence keeps the Lanczos series in its accurate range.
    if x < 0.5 {
        return lgamma_raw(x + 1.0) - x.ln();
    }
    let z = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    HALF_LN_TWO_PI + (z + 0.5) * t.ln() - t + a.ln()
}

fn digamma_raw(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    acc + x.ln() - 0.5 * inv - tail
}

fn check_positive(x: f64, what: &str) -> Result<()> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Domain(format!(
            "{what} must be finite and positive, got {x}"
        )));
    }
    Ok(())
}

/// Natural logarithm of the Gamma function for positive arguments.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive(x, "log_gamma argument")?;
    Ok(lgamma_raw(x))
}

/// Digamma function (derivative of `log_gamma`) for positive arguments.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive(x, "digamma argument")?;
    Ok(digamma_raw(x))
}

/// ln B(a, b) = ln Γ(a) + ln Γ(b) − ln Γ(a + b).
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    check_positive(a, "log_beta argument")?;
    check_positive(b, "log_beta argument")?;
    Ok(lgamma_raw(a) + lgamma_raw(b) - lgamma_raw(a + b))
}

fn check_rank(r: u64, what: &str) -> Result<()> {
    if r < 1 {
        return Err(Error::Domain(format!("{what} must be >= 1, got {r}")));
    }
    Ok(())
}

/// Log-PMF of the scroll depth: ln ρ + ln B(d, ρ + 1).
pub fn yule_simon_log_pmf(params: &YuleSimonParams, d: u64) -> Result<f64> {
    check_rank(d, "depth")?;
    Ok(log_pmf_raw(params.rho, d))
}

pub(crate) fn log_pmf_raw(rho: f64, d: u64) -> f64 {
    let df = d as f64;
    rho.ln() + lgamma_raw(df) + lgamma_raw(rho + 1.0) - lgamma_raw(df + rho + 1.0)
}

/// Survival function P(D >= r): the probability an item at rank `r` is
/// viewed. Equals 1 at rank 1 and (r−1)·B(r−1, ρ+1) beyond.
pub fn survival(params: &YuleSimonParams, r: u64) -> Result<f64> {
    check_rank(r, "rank")?;
    Ok(survival_raw(params.rho, r))
}

pub(crate) fn survival_raw(rho: f64, r: u64) -> f64 {
    if r == 1 {
        return 1.0;
    }
    let a = (r - 1) as f64;
    let log_s = a.ln() + lgamma_raw(a) + lgamma_raw(rho + 1.0) - lgamma_raw(a + rho + 1.0);
    log_s.exp().min(1.0)
}

/// Derivative of ln survival(ρ, r) in ρ: 0 at rank 1, ψ(ρ+1) − ψ(r+ρ)
/// otherwise. Non-positive for r >= 2.
pub fn d_log_survival_d_rho(params: &YuleSimonParams, r: u64) -> Result<f64> {
    check_rank(r, "rank")?;
    Ok(d_log_survival_d_rho_raw(params.rho, r))
}

pub(crate) fn d_log_survival_d_rho_raw(rho: f64, r: u64) -> f64 {
    if r == 1 {
        return 0.0;
    }
    digamma_raw(rho + 1.0) - digamma_raw(r as f64 + rho)
}

/// Exact sampler via the Beta-geometric mixture: p = U^(1/ρ) ~ Beta(ρ, 1),
/// then D ~ Geometric(p) on {1, 2, ...}. Saturates at `u64::MAX` for the
/// astronomically deep draws possible at tiny ρ.
pub fn sample_depth<R: Rng + ?Sized>(params: &YuleSimonParams, rng: &mut R) -> u64 {
    let u: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let p = u.powf(1.0 / params.rho);
    let v: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    if p >= 1.0 {
        return 1;
    }
    let d = (v.ln() / (-p).ln_1p()).ceil();
    if !d.is_finite() || d >= u64::MAX as f64 {
        u64::MAX
    } else {
        (d as u64).max(1)
    }
}
