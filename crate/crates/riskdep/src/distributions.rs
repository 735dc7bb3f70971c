//! Random variate generation, densities, CDFs and quantile functions for
//! every distribution the model uses.
//!
//! Sampling of the gamma, Poisson, normal and lognormal families is
//! delegated to `rand_distr`; CDFs, quantiles and all log-density
//! arithmetic are implemented here on top of [`crate::special`] so that
//! likelihood evaluation stays in log-space throughout. The alpha-stable
//! sampler (needed for the Gumbel copula frailty) is a
//! Chambers-Mallows-Stuck construction in the S(alpha, beta, gamma,
//! delta; 1) parameterization.

use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::special::{ln_gamma, normal_quantile, reg_gamma_lower};

pub use crate::special::{normal_cdf, normal_pdf};

/// Shape/rate parameterization; mean = shape / rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma shape must be positive, got {shape}"
            )));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma rate must be positive, got {rate}"
            )));
        }
        Ok(Self { shape, rate })
    }

    /// The `Gamma(shape, shape/mean)` parameterization used for risk
    /// profiles conditioned on a risk characteristic.
    pub fn with_mean(shape: f64, mean: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma mean must be positive, got {mean}"
            )));
        }
        Self::new(shape, shape / mean)
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

/// Stable-law parameters `S(alpha, beta, gamma, delta)` in the
/// 1-parameterization (scale multiplies, location adds; for alpha < 1,
/// beta = 1, delta = 0 the support is the positive half-line).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl StableParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "stable alpha must be in (0,2], got {alpha}"
            )));
        }
        if !(-1.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!(
                "stable beta must be in [-1,1], got {beta}"
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "stable scale must be positive, got {gamma}"
            )));
        }
        if !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "stable location must be finite, got {delta}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            gamma,
            delta,
        })
    }

    /// Frailty law for the Gumbel copula with parameter `rho > 1`:
    /// `S(1/rho, 1, cos(pi/(2 rho))^rho, 0)`, whose Laplace transform is
    /// `exp(-s^(1/rho))`.
    pub fn gumbel_frailty(rho: f64) -> Result<Self> {
        if !(rho > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Gumbel frailty requires rho > 1, got {rho}"
            )));
        }
        let alpha = 1.0 / rho;
        let gamma = (0.5 * std::f64::consts::PI / rho).cos().powf(rho);
        Self::new(alpha, 1.0, gamma, 0.0)
    }
}

/// Gamma draw.
pub fn gamma_sample(p: &GammaParams, rng: &mut RngStream) -> f64 {
    let d = rand_distr::Gamma::new(p.shape, 1.0 / p.rate).expect("validated parameters");
    d.sample(rng)
}

/// Gamma CDF: the regularized lower incomplete gamma at the rate-scaled
/// argument. Zero for `x <= 0`.
pub fn gamma_cdf(x: f64, p: &GammaParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    reg_gamma_lower(p.shape, p.rate * x)
}

/// Gamma log-density; `-inf` for `x <= 0`.
pub fn ln_gamma_pdf(x: f64, p: &GammaParams) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    p.shape * p.rate.ln() - ln_gamma(p.shape) + (p.shape - 1.0) * x.ln() - p.rate * x
}

/// Gamma quantile by a bracketed Newton iteration on the CDF, seeded by
/// the Wilson-Hilferty approximation. Inverts to `|P(x) - q| <= 1e-12`.
pub fn gamma_quantile(q: f64, p: &GammaParams) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma quantile requires q in (0,1), got {q}"
        )));
    }
    let a = p.shape;
    // Work at unit rate, rescale at the end.
    let z = normal_quantile(q)?;
    let wh = a * (1.0 - 1.0 / (9.0 * a) + z / (3.0 * a.sqrt())).powi(3);
    let mut x = if wh.is_finite() && wh > 0.0 { wh } else { a * q };
    if x <= 0.0 {
        x = 1e-8;
    }

    // Establish a bracket around the root of P(a, x) - q.
    let mut lo = x;
    let mut hi = x;
    for _ in 0..200 {
        if reg_gamma_lower(a, lo) <= q {
            break;
        }
        lo *= 0.5;
    }
    for _ in 0..200 {
        if reg_gamma_lower(a, hi) >= q {
            break;
        }
        hi *= 2.0;
    }
    if !(reg_gamma_lower(a, lo) <= q && reg_gamma_lower(a, hi) >= q) {
        return Err(Error::Numerical(format!(
            "gamma quantile bracketing failed for q={q}, shape={a}"
        )));
    }

    x = x.clamp(lo, hi);
    for _ in 0..200 {
        let f = reg_gamma_lower(a, x) - q;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if f.abs() <= 1e-12 {
            break;
        }
        let ln_pdf = (a - 1.0) * x.ln() - x - ln_gamma(a);
        let step = f * (-ln_pdf).exp();
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs() {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x / p.rate)
}

/// Poisson draw. A mean of exactly zero returns zero events.
pub fn poisson_sample(mean: f64, rng: &mut RngStream) -> Result<u64> {
    if mean == 0.0 {
        return Ok(0);
    }
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "poisson mean must be positive, got {mean}"
        )));
    }
    let d = rand_distr::Poisson::new(mean)
        .map_err(|e| Error::InvalidParameter(format!("poisson mean {mean}: {e}")))?;
    let x: f64 = d.sample(rng);
    Ok(x.round() as u64)
}

/// Poisson log-pmf; `-inf` for `mean <= 0` unless `n == 0` and `mean == 0`.
pub fn ln_poisson_pmf(n: u64, mean: f64) -> f64 {
    if mean <= 0.0 {
        return if n == 0 && mean == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        };
    }
    let nf = n as f64;
    nf * mean.ln() - mean - ln_gamma(nf + 1.0)
}

/// Lognormal draw: `exp(Normal(mu, sigma))`.
pub fn lognormal_sample(mu: f64, sigma: f64, rng: &mut RngStream) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lognormal sigma must be positive, got {sigma}"
        )));
    }
    let z: f64 = rand_distr::StandardNormal.sample(rng);
    Ok((mu + sigma * z).exp())
}

/// Standard normal draw.
pub fn normal_sample(rng: &mut RngStream) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// Stable draw via the Chambers-Mallows-Stuck construction.
pub fn stable_sample(p: &StableParams, rng: &mut RngStream) -> f64 {
    let u = std::f64::consts::PI * (rng.uniform_open() - 0.5);
    let w = rng.exp1();
    let alpha = p.alpha;
    if alpha == 1.0 {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let b = half_pi + p.beta * u;
        let z = (b * u.tan() - p.beta * ((half_pi * w * u.cos()) / b).ln()) / half_pi;
        let shift = if p.beta == 0.0 {
            0.0
        } else {
            p.beta * p.gamma * p.gamma.ln() / half_pi
        };
        p.gamma * z + p.delta + shift
    } else {
        let theta0 = (p.beta * (std::f64::consts::FRAC_PI_2 * alpha).tan()).atan() / alpha;
        let s = (alpha * theta0).cos().powf(-1.0 / alpha);
        let z = s * (alpha * (theta0 + u)).sin() / u.cos().powf(1.0 / alpha)
            * ((u - alpha * (theta0 + u)).cos() / w).powf((1.0 - alpha) / alpha);
        p.gamma * z + p.delta
    }
}

/// Negative binomial pmf for the Poisson-gamma mixture: the count in one
/// year given risk characteristic `theta`, profile shape `alpha` and
/// volume. Computed in log-space.
pub fn neg_binomial_pmf(n: u64, theta: f64, volume: f64, alpha: f64) -> Result<f64> {
    Ok(ln_neg_binomial_pmf(n, theta, volume, alpha)?.exp())
}

/// Log of [`neg_binomial_pmf`].
pub fn ln_neg_binomial_pmf(n: u64, theta: f64, volume: f64, alpha: f64) -> Result<f64> {
    for (name, v) in [("theta", theta), ("volume", volume), ("alpha", alpha)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "negative binomial {name} must be positive, got {v}"
            )));
        }
    }
    let nf = n as f64;
    let tv = theta * volume;
    let denom = (alpha + tv).ln();
    Ok(ln_gamma(alpha + nf) - ln_gamma(nf + 1.0) - ln_gamma(alpha)
        + alpha * (alpha.ln() - denom)
        + nf * (tv.ln() - denom))
}
