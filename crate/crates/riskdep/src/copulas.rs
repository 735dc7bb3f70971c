//! Copula densities and exact sampling.
//!
//! Supported families: independence, Gaussian (scalar exchangeable or
//! full correlation matrix), Clayton and Gumbel. The Archimedean
//! families sample through their frailty construction: divide
//! exponential variates by a positive random factor whose Laplace
//! transform equals the inverse generator (gamma frailty for Clayton,
//! positive alpha-stable for Gumbel).
//!
//! Density arguments are clamped to `[1e-12, 1 - 1e-12]` before
//! evaluation so that probability-integral transforms landing on a
//! boundary during MCMC stay finite; [`CopulaSpec::log_density_strict`]
//! errors instead.

use crate::distributions::{normal_sample, stable_sample, GammaParams, StableParams};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, log_sum_exp2};
use crate::rng::RngStream;
use crate::special::{normal_cdf, normal_quantile};

const INTERIOR_CLAMP: f64 = 1e-12;

/// Copula family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CopulaFamily {
    Independence,
    Gaussian,
    Clayton,
    Gumbel,
}

impl CopulaFamily {
    /// Valid range of the scalar dependence parameter.
    pub fn parameter_range(&self) -> (f64, f64) {
        match self {
            CopulaFamily::Independence => (f64::NEG_INFINITY, f64::INFINITY),
            CopulaFamily::Gaussian => (-1.0, 1.0),
            CopulaFamily::Clayton => (0.0, f64::INFINITY),
            CopulaFamily::Gumbel => (1.0, f64::INFINITY),
        }
    }

    /// Whether `rho` parameterizes a valid member of the family.
    pub fn contains(&self, rho: f64) -> bool {
        match self {
            CopulaFamily::Independence => true,
            CopulaFamily::Gaussian => rho > -1.0 && rho < 1.0,
            CopulaFamily::Clayton => rho > 0.0 && rho.is_finite(),
            CopulaFamily::Gumbel => rho >= 1.0 && rho.is_finite(),
        }
    }

    /// The parameter at which the family degenerates to independence,
    /// where that point lies inside the valid range.
    pub fn independence_point(&self) -> Option<f64> {
        match self {
            CopulaFamily::Independence => None,
            CopulaFamily::Gaussian => Some(0.0),
            CopulaFamily::Clayton => None, // rho -> 0+ is a boundary limit
            CopulaFamily::Gumbel => Some(1.0),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CopulaFamily::Independence => "independence",
            CopulaFamily::Gaussian => "gaussian",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Gumbel => "gumbel",
        }
    }
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independence" | "independent" => Ok(CopulaFamily::Independence),
            "gaussian" | "normal" => Ok(CopulaFamily::Gaussian),
            "clayton" => Ok(CopulaFamily::Clayton),
            "gumbel" => Ok(CopulaFamily::Gumbel),
            other => Err(Error::InvalidParameter(format!(
                "unknown copula family '{other}'"
            ))),
        }
    }
}

/// A fully specified copula.
#[derive(Debug, Clone, PartialEq)]
pub enum CopulaSpec {
    Independence,
    /// Scalar form: exchangeable correlation `rho` on every off-diagonal.
    Gaussian { rho: f64 },
    /// Full correlation matrix (symmetric, positive definite, unit
    /// diagonal).
    GaussianMatrix { corr: Vec<Vec<f64>> },
    Clayton { rho: f64 },
    Gumbel { rho: f64 },
}

/// A point in the open unit hypercube.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(pub Vec<f64>);

impl UnitVector {
    pub fn new(u: Vec<f64>) -> Result<Self> {
        for (i, &x) in u.iter().enumerate() {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "coordinate {i} = {x} is not strictly inside (0,1)"
                )));
            }
        }
        Ok(Self(u))
    }
}

impl std::ops::Deref for UnitVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl CopulaSpec {
    pub fn from_family(family: CopulaFamily, rho: f64) -> Result<Self> {
        if !family.contains(rho) {
            return Err(Error::InvalidParameter(format!(
                "rho = {rho} outside the {} range",
                family.label()
            )));
        }
        Ok(match family {
            CopulaFamily::Independence => CopulaSpec::Independence,
            CopulaFamily::Gaussian => CopulaSpec::Gaussian { rho },
            CopulaFamily::Clayton => CopulaSpec::Clayton { rho },
            CopulaFamily::Gumbel => CopulaSpec::Gumbel { rho },
        })
    }

    pub fn family(&self) -> CopulaFamily {
        match self {
            CopulaSpec::Independence => CopulaFamily::Independence,
            CopulaSpec::Gaussian { .. } | CopulaSpec::GaussianMatrix { .. } => {
                CopulaFamily::Gaussian
            }
            CopulaSpec::Clayton { .. } => CopulaFamily::Clayton,
            CopulaSpec::Gumbel { .. } => CopulaFamily::Gumbel,
        }
    }

    /// Check the spec against a dimension.
    pub fn validate(&self, d: usize) -> Result<()> {
        if d < 1 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        match self {
            CopulaSpec::Independence => Ok(()),
            CopulaSpec::Gaussian { rho } => {
                if !(*rho > -1.0 && *rho < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "Gaussian rho must lie in (-1,1), got {rho}"
                    )));
                }
                // Exchangeable matrices need 1 + (d-1) rho > 0.
                if d > 2 && 1.0 + (d as f64 - 1.0) * rho <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "exchangeable rho = {rho} is not positive definite in dimension {d}"
                    )));
                }
                Ok(())
            }
            CopulaSpec::GaussianMatrix { corr } => {
                if corr.len() != d || corr.iter().any(|r| r.len() != d) {
                    return Err(Error::DimensionMismatch(format!(
                        "correlation matrix must be {d}x{d}"
                    )));
                }
                for i in 0..d {
                    if (corr[i][i] - 1.0).abs() > 1e-12 {
                        return Err(Error::InvalidParameter(
                            "correlation matrix needs a unit diagonal".into(),
                        ));
                    }
                    for jj in 0..d {
                        if (corr[i][jj] - corr[jj][i]).abs() > 1e-12 {
                            return Err(Error::InvalidParameter(
                                "correlation matrix must be symmetric".into(),
                            ));
                        }
                    }
                }
                cholesky(corr).map(|_| ())
            }
            CopulaSpec::Clayton { rho } => {
                if !(*rho > 0.0 && rho.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "Clayton rho must be positive, got {rho}"
                    )));
                }
                Ok(())
            }
            CopulaSpec::Gumbel { rho } => {
                if !(*rho >= 1.0 && rho.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "Gumbel rho must be >= 1, got {rho}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Log copula density at `u`, with boundary clamping.
    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        let clamped: Vec<f64> = u
            .iter()
            .map(|&x| x.clamp(INTERIOR_CLAMP, 1.0 - INTERIOR_CLAMP))
            .collect();
        self.log_density_interior(&clamped)
    }

    /// Log copula density that rejects boundary or exterior points
    /// instead of clamping.
    pub fn log_density_strict(&self, u: &[f64]) -> Result<f64> {
        if u.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::InvalidParameter(
                "copula density argument on or outside the unit-cube boundary".into(),
            ));
        }
        self.log_density_interior(u)
    }

    fn log_density_interior(&self, u: &[f64]) -> Result<f64> {
        let d = u.len();
        self.validate(d)?;
        match self {
            CopulaSpec::Independence => Ok(0.0),
            CopulaSpec::Gaussian { rho } => {
                if *rho == 0.0 {
                    return Ok(0.0);
                }
                let corr = exchangeable_matrix(d, *rho);
                gaussian_log_density(&corr, u)
            }
            CopulaSpec::GaussianMatrix { corr } => gaussian_log_density(corr, u),
            CopulaSpec::Clayton { rho } => Ok(clayton_log_density(u, *rho)),
            CopulaSpec::Gumbel { rho } => {
                if *rho == 1.0 {
                    Ok(0.0)
                } else if d == 2 {
                    Ok(gumbel_log_density_bivariate(u[0], u[1], *rho))
                } else {
                    gumbel_log_density_general(u, *rho)
                }
            }
        }
    }

    /// Draw a `d`-dimensional variate with uniform marginals and this
    /// copula.
    pub fn sample(&self, d: usize, rng: &mut RngStream) -> Result<UnitVector> {
        if d < 2 {
            return Err(Error::InvalidParameter(
                "copula sampling requires dimension >= 2".into(),
            ));
        }
        self.validate(d)?;
        let u = match self {
            CopulaSpec::Independence => (0..d).map(|_| rng.uniform_open()).collect(),
            CopulaSpec::Gaussian { rho } => {
                let corr = exchangeable_matrix(d, *rho);
                gaussian_copula_sample(&corr, rng)?
            }
            CopulaSpec::GaussianMatrix { corr } => gaussian_copula_sample(corr, rng)?,
            CopulaSpec::Clayton { rho } => {
                let frailty = GammaParams::new(1.0 / rho, 1.0)?;
                let y = crate::distributions::gamma_sample(&frailty, rng);
                (0..d)
                    .map(|_| clayton_generator_inverse(rng.exp1() / y, *rho))
                    .collect::<Result<Vec<f64>>>()?
            }
            CopulaSpec::Gumbel { rho } => {
                if *rho == 1.0 {
                    (0..d).map(|_| rng.uniform_open()).collect()
                } else {
                    let frailty = StableParams::gumbel_frailty(*rho)?;
                    let y = stable_sample(&frailty, rng);
                    (0..d)
                        .map(|_| gumbel_generator_inverse(rng.exp1() / y, *rho))
                        .collect::<Result<Vec<f64>>>()?
                }
            }
        };
        let u = u
            .into_iter()
            .map(|x: f64| x.clamp(INTERIOR_CLAMP, 1.0 - INTERIOR_CLAMP))
            .collect();
        Ok(UnitVector(u))
    }
}

/// Archimedean generator `phi(t)` for the Clayton or Gumbel family.
pub fn archimedean_generator(spec: &CopulaSpec, t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "generator argument must lie in (0,1], got {t}"
        )));
    }
    match spec {
        CopulaSpec::Clayton { rho } => Ok(t.powf(-rho) - 1.0),
        CopulaSpec::Gumbel { rho } => Ok((-t.ln()).powf(*rho)),
        other => Err(Error::InvalidParameter(format!(
            "{} copula has no Archimedean generator",
            other.family().label()
        ))),
    }
}

/// Inverse generator `phi^{-1}(s)`.
pub fn archimedean_generator_inverse(spec: &CopulaSpec, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inverse generator argument must be nonnegative, got {s}"
        )));
    }
    match spec {
        CopulaSpec::Clayton { rho } => clayton_generator_inverse(s, *rho),
        CopulaSpec::Gumbel { rho } => gumbel_generator_inverse(s, *rho),
        other => Err(Error::InvalidParameter(format!(
            "{} copula has no Archimedean generator",
            other.family().label()
        ))),
    }
}

fn clayton_generator_inverse(s: f64, rho: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inverse generator argument must be nonnegative, got {s}"
        )));
    }
    Ok((1.0 + s).powf(-1.0 / rho))
}

fn gumbel_generator_inverse(s: f64, rho: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inverse generator argument must be nonnegative, got {s}"
        )));
    }
    Ok((-s.powf(1.0 / rho)).exp())
}

/// One-common-factor Gaussian construction: `Y_i = l_i W + sqrt(1-l_i^2)
/// W_i` with a shared standard normal `W`, mapped through the standard
/// normal CDF and each coordinate's marginal quantile function.
pub fn one_factor_gaussian_profiles(
    loadings: &[f64],
    marginal_quantiles: &[&dyn Fn(f64) -> f64],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if loadings.len() != marginal_quantiles.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} loadings vs {} quantile functions",
            loadings.len(),
            marginal_quantiles.len()
        )));
    }
    for &l in loadings {
        if !(-1.0..=1.0).contains(&l) {
            return Err(Error::InvalidParameter(format!(
                "factor loading {l} outside [-1,1]"
            )));
        }
    }
    let omega = normal_sample(rng);
    let mut out = Vec::with_capacity(loadings.len());
    for (&l, q) in loadings.iter().zip(marginal_quantiles) {
        let w = normal_sample(rng);
        let y = l * omega + (1.0 - l * l).sqrt() * w;
        let u = normal_cdf(y).clamp(INTERIOR_CLAMP, 1.0 - INTERIOR_CLAMP);
        out.push(q(u));
    }
    Ok(out)
}

fn exchangeable_matrix(d: usize, rho: f64) -> Vec<Vec<f64>> {
    let mut m = vec![vec![rho; d]; d];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn cholesky(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "correlation matrix is not positive definite".into(),
                    ));
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

fn gaussian_log_density(corr: &[Vec<f64>], u: &[f64]) -> Result<f64> {
    let d = u.len();
    let l = cholesky(corr)?;
    let z: Vec<f64> = u
        .iter()
        .map(|&x| normal_quantile(x))
        .collect::<Result<Vec<f64>>>()?;
    // Forward-solve L y = z; then z' Sigma^{-1} z = |y|^2.
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = z[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let log_det_half: f64 = l.iter().enumerate().map(|(i, row)| row[i].ln()).sum();
    let quad: f64 = y.iter().map(|v| v * v).sum::<f64>() - z.iter().map(|v| v * v).sum::<f64>();
    Ok(-log_det_half - 0.5 * quad)
}

fn gaussian_copula_sample(corr: &[Vec<f64>], rng: &mut RngStream) -> Result<Vec<f64>> {
    let d = corr.len();
    let l = cholesky(corr)?;
    let x: Vec<f64> = (0..d).map(|_| normal_sample(rng)).collect();
    let mut u = Vec::with_capacity(d);
    for i in 0..d {
        let mut z = 0.0;
        for k in 0..=i {
            z += l[i][k] * x[k];
        }
        u.push(normal_cdf(z));
    }
    Ok(u)
}

fn clayton_log_density(u: &[f64], rho: f64) -> f64 {
    let d = u.len() as f64;
    // ln(1 - d + sum u_i^-rho) via log-sum-exp; the sum is >= 1.
    let a: Vec<f64> = u.iter().map(|&x| -rho * x.ln()).collect();
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inner: f64 =
        a.iter().map(|&v| (v - m).exp()).sum::<f64>() - (d - 1.0) * (-m).exp();
    let ln_s = m + inner.ln();
    let mut out = (-d - 1.0 / rho) * ln_s;
    for (i, &x) in u.iter().enumerate() {
        out += -(rho + 1.0) * x.ln() + (i as f64 * rho + 1.0).ln();
    }
    out
}

/// The explicit bivariate Gumbel density.
fn gumbel_log_density_bivariate(u1: f64, u2: f64, rho: f64) -> f64 {
    let e1 = -u1.ln();
    let e2 = -u2.ln();
    // ln S with S = e1^rho + e2^rho, stable for tiny e_i.
    let ln_s = log_sum_exp2(rho * e1.ln(), rho * e2.ln());
    let x = (ln_s / rho).exp(); // S^{1/rho}
    -x + e1 + e2 + 2.0 * (1.0 / rho - 1.0) * ln_s
        + (rho - 1.0) * (e1.ln() + e2.ln())
        + (1.0 + (rho - 1.0) * (-ln_s / rho).exp()).ln()
}

/// d-dimensional Gumbel density through the d-th derivative of the
/// inverse generator, whose polynomial coefficients combine Stirling
/// numbers of both kinds.
fn gumbel_log_density_general(u: &[f64], rho: f64) -> Result<f64> {
    let d = u.len();
    if d > 30 {
        return Err(Error::InvalidParameter(
            "Gumbel density supported up to dimension 30".into(),
        ));
    }
    let alpha = 1.0 / rho;
    let coeffs = gumbel_poly_coeffs(d, alpha);
    let ln_e: Vec<f64> = u.iter().map(|&x| (-x.ln()).ln()).collect();
    let ln_t = log_sum_exp(&ln_e.iter().map(|&le| rho * le).collect::<Vec<f64>>());
    let ln_x = alpha * ln_t;
    let x = ln_x.exp();
    // ln sum_k a_dk x^k
    let terms: Vec<f64> = coeffs
        .iter()
        .enumerate()
        .map(|(k, &a)| if a > 0.0 { a.ln() + (k + 1) as f64 * ln_x } else { f64::NEG_INFINITY })
        .collect();
    let ln_poly = log_sum_exp(&terms);
    let mut out = -x - d as f64 * ln_t + ln_poly;
    for (&ui, &le) in u.iter().zip(&ln_e) {
        out += rho.ln() + (rho - 1.0) * le - ui.ln();
    }
    Ok(out)
}

/// Coefficients `a_{d,k}(alpha)`, k = 1..d, of the polynomial appearing
/// in the d-th derivative of `exp(-s^alpha)`:
/// `a_{d,k} = (-1)^{d-k} sum_j alpha^j s(d,j) S(j,k)` with `s` and `S`
/// the signed first-kind and second-kind Stirling numbers.
fn gumbel_poly_coeffs(d: usize, alpha: f64) -> Vec<f64> {
    // Signed Stirling numbers of the first kind s(n, k).
    let mut s1 = vec![vec![0.0f64; d + 1]; d + 1];
    s1[0][0] = 1.0;
    for n in 1..=d {
        for k in 1..=n {
            s1[n][k] = s1[n - 1][k - 1] - (n as f64 - 1.0) * s1[n - 1][k];
        }
    }
    // Stirling numbers of the second kind S(n, k).
    let mut s2 = vec![vec![0.0f64; d + 1]; d + 1];
    s2[0][0] = 1.0;
    for n in 1..=d {
        for k in 1..=n {
            s2[n][k] = k as f64 * s2[n - 1][k] + s2[n - 1][k - 1];
        }
    }
    (1..=d)
        .map(|k| {
            let sign = if (d - k) % 2 == 0 { 1.0 } else { -1.0 };
            let sum: f64 = (k..=d).map(|j| alpha.powi(j as i32) * s1[d][j] * s2[j][k]).sum();
            sign * sum
        })
        .collect()
}
