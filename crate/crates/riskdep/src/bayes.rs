//! The hierarchical Bayesian frequency model.
//!
//! Per risk cell j, the risk characteristic `Theta^(j) ~ Gamma(a, b)` a
//! priori; given `Theta = theta`, each year's intensity vector has
//! `Gamma(alpha, alpha/theta)` marginals coupled by a copula in the
//! parameter `rho`; counts are `Poisson(V lambda)`; expert opinions are
//! `Gamma(xi, xi/theta)`. Everything here evaluates log-densities up to
//! state-independent constants, so samplers must only use differences.
//! Out-of-support arguments return `-inf` rather than erroring: the
//! slice sampler's shrinkage step probes outside the support by design.

use crate::copulas::{CopulaFamily, CopulaSpec};
use crate::distributions::{gamma_cdf, ln_gamma_pdf, ln_poisson_pmf, GammaParams};
use crate::error::{Error, Result};
use crate::numeric::adaptive_simpson;

/// Hyperparameters of one cell: `Theta ~ Gamma(prior_a, prior_b)`,
/// intensity shape `alpha`, expert precision `xi`, volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellConfig {
    pub prior_a: f64,
    pub prior_b: f64,
    pub alpha: f64,
    pub xi: f64,
    pub volume: f64,
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prior_a", self.prior_a),
            ("prior_b", self.prior_b),
            ("alpha", self.alpha),
            ("xi", self.xi),
            ("volume", self.volume),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "cell config {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Model configuration: per-cell hyperparameters, the copula family
/// coupling the intensities, a fixed/initial copula parameter, and the
/// uniform-prior support used when the copula parameter is estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesConfig {
    pub cells: Vec<CellConfig>,
    pub copula_family: CopulaFamily,
    pub rho: f64,
    pub copula_prior_range: (f64, f64),
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::EmptyInput("config needs at least one cell".into()));
        }
        for c in &self.cells {
            c.validate()?;
        }
        let (lo, hi) = self.copula_prior_range;
        if !(lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "copula prior range [{lo}, {hi}] is empty"
            )));
        }
        if self.copula_family != CopulaFamily::Independence {
            let (flo, fhi) = self.copula_family.parameter_range();
            if lo < flo || hi > fhi {
                return Err(Error::InvalidParameter(format!(
                    "copula prior range [{lo}, {hi}] outside the {} range",
                    self.copula_family.label()
                )));
            }
            if !self.copula_family.contains(self.rho) {
                return Err(Error::InvalidParameter(format!(
                    "rho = {} outside the {} range",
                    self.rho,
                    self.copula_family.label()
                )));
            }
        }
        Ok(())
    }

    pub fn j_cells(&self) -> usize {
        self.cells.len()
    }

    /// The copula at a given parameter value, if valid for the family.
    pub fn copula_at(&self, rho: f64) -> Result<CopulaSpec> {
        CopulaSpec::from_family(self.copula_family, rho)
    }

    /// Restriction to a single cell with an independence copula, the
    /// model used by marginal (cell-by-cell) estimation.
    pub fn single_cell(&self, j: usize) -> BayesConfig {
        BayesConfig {
            cells: vec![self.cells[j]],
            copula_family: CopulaFamily::Independence,
            rho: 0.0,
            copula_prior_range: (-1.0, 1.0),
        }
    }
}

/// Observed data: annual counts (T rows, J columns) and expert opinions
/// (K rows, J columns). `K = 0` drops the expert likelihood; `T = 0`
/// leaves only experts and prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub counts: Vec<Vec<u64>>,
    pub experts: Vec<Vec<f64>>,
    j: usize,
}

impl Dataset {
    /// Build from matrices, inferring the cell count from the first row.
    pub fn new(counts: Vec<Vec<u64>>, experts: Vec<Vec<f64>>) -> Result<Self> {
        let j = counts
            .first()
            .map(Vec::len)
            .or_else(|| experts.first().map(Vec::len))
            .ok_or_else(|| {
                Error::EmptyInput(
                    "cell count cannot be inferred from an empty dataset; use Dataset::empty"
                        .into(),
                )
            })?;
        Self::with_cells(j, counts, experts)
    }

    /// Build with an explicit cell count; allows T = 0 and K = 0.
    pub fn with_cells(j: usize, counts: Vec<Vec<u64>>, experts: Vec<Vec<f64>>) -> Result<Self> {
        if j == 0 {
            return Err(Error::EmptyInput(
                "dataset needs at least one cell column".into(),
            ));
        }
        if counts.iter().any(|row| row.len() != j) {
            return Err(Error::DimensionMismatch(format!(
                "count rows must have {j} columns"
            )));
        }
        if experts.iter().any(|row| row.len() != j) {
            return Err(Error::DimensionMismatch(format!(
                "expert rows must have {j} columns"
            )));
        }
        if experts.iter().flatten().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidParameter(
                "expert opinions must be positive".into(),
            ));
        }
        Ok(Self { counts, experts, j })
    }

    /// No counts, no experts: the posterior is the prior.
    pub fn empty(j: usize) -> Result<Self> {
        Self::with_cells(j, Vec::new(), Vec::new())
    }

    pub fn t_years(&self) -> usize {
        self.counts.len()
    }

    pub fn k_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn j_cells(&self) -> usize {
        self.j
    }

    /// The first `t` years of counts with the same experts.
    pub fn truncate_years(&self, t: usize) -> Result<Dataset> {
        if t > self.t_years() {
            return Err(Error::InvalidParameter(format!(
                "cannot take {t} years from a {}-year dataset",
                self.t_years()
            )));
        }
        Dataset::with_cells(self.j, self.counts[..t].to_vec(), self.experts.clone())
    }

    /// Single-cell column view.
    pub fn single_cell(&self, j: usize) -> Result<Dataset> {
        if j >= self.j {
            return Err(Error::InvalidParameter(format!("no cell {j}")));
        }
        Dataset::with_cells(
            1,
            self.counts.iter().map(|row| vec![row[j]]).collect(),
            self.experts.iter().map(|row| vec![row[j]]).collect(),
        )
    }
}

/// One MCMC state: risk characteristics, latent intensity matrix
/// (T rows, J columns) and the copula parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub rho: f64,
}

impl ChainState {
    pub fn dims(&self) -> (usize, usize) {
        (self.lambda.len(), self.theta.len())
    }
}

fn check_dims(state: &ChainState, data: &Dataset, cfg: &BayesConfig) -> Result<()> {
    let j = cfg.j_cells();
    if state.theta.len() != j
        || data.j_cells() != j
        || state.lambda.len() != data.t_years()
        || state.lambda.iter().any(|row| row.len() != j)
    {
        return Err(Error::DimensionMismatch(format!(
            "state ({}x{}), data ({}x{}), config ({} cells)",
            state.lambda.len(),
            state.theta.len(),
            data.t_years(),
            data.j_cells(),
            j
        )));
    }
    Ok(())
}

/// `Gamma(alpha, alpha/theta)` log-density of an intensity given the
/// risk characteristic; `-inf` off the support.
fn ln_intensity_pdf(lambda: f64, alpha: f64, theta: f64) -> f64 {
    if lambda <= 0.0 || theta <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let rate = alpha / theta;
    alpha * rate.ln() - crate::special::ln_gamma(alpha) + (alpha - 1.0) * lambda.ln()
        - rate * lambda
}

/// Probability-integral transform of one year's intensities.
fn year_pit(lambda_row: &[f64], theta: &[f64], cfg: &BayesConfig) -> Result<Vec<f64>> {
    lambda_row
        .iter()
        .zip(theta)
        .zip(&cfg.cells)
        .map(|((&lam, &th), cell)| {
            let marginal = GammaParams::with_mean(cell.alpha, th)?;
            Ok(gamma_cdf(lam, &marginal))
        })
        .collect()
}

fn ln_rho_prior(rho: f64, cfg: &BayesConfig) -> f64 {
    let (lo, hi) = cfg.copula_prior_range;
    if rho >= lo && rho <= hi {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Copula log-density of one year's intensity vector, `-inf` when `rho`
/// does not parameterize a valid family member. J = 1 contributes
/// nothing (a one-dimensional copula is trivial).
fn ln_copula_year(u: &[f64], cfg: &BayesConfig, rho: f64) -> f64 {
    if u.len() == 1 || cfg.copula_family == CopulaFamily::Independence {
        return 0.0;
    }
    match cfg.copula_at(rho) {
        Ok(copula) => copula.log_density(u).unwrap_or(f64::NEG_INFINITY),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Log of the joint posterior integrand over `(theta, rho, lambda_{1:T})`
/// up to one additive constant: Poisson likelihood, copula-coupled
/// intensity density, expert likelihood, priors.
pub fn log_joint_posterior(state: &ChainState, data: &Dataset, cfg: &BayesConfig) -> Result<f64> {
    cfg.validate()?;
    check_dims(state, data, cfg)?;
    if state.theta.iter().any(|&th| th <= 0.0)
        || state.lambda.iter().flatten().any(|&l| l <= 0.0)
    {
        return Ok(f64::NEG_INFINITY);
    }
    let prior_rho = ln_rho_prior(state.rho, cfg);
    if prior_rho == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }

    let mut s = prior_rho;
    for (j, cell) in cfg.cells.iter().enumerate() {
        let prior = GammaParams::new(cell.prior_a, cell.prior_b)?;
        s += ln_gamma_pdf(state.theta[j], &prior);
        for row in &data.experts {
            s += ln_intensity_pdf(row[j], cell.xi, state.theta[j]);
        }
    }
    for (t, lambda_row) in state.lambda.iter().enumerate() {
        let u = year_pit(lambda_row, &state.theta, cfg)?;
        s += ln_copula_year(&u, cfg, state.rho);
        for (j, cell) in cfg.cells.iter().enumerate() {
            s += ln_intensity_pdf(lambda_row[j], cell.alpha, state.theta[j]);
            s += ln_poisson_pmf(data.counts[t][j], cell.volume * lambda_row[j]);
        }
    }
    Ok(s)
}

/// Full conditional of `theta^(j)` as a log-density in the candidate
/// value, up to a constant. The copula term enters through the
/// probability-integral transform of cell j's intensities.
pub fn log_fc_theta<'a>(
    j: usize,
    state: &'a ChainState,
    data: &'a Dataset,
    cfg: &'a BayesConfig,
) -> Result<impl Fn(f64) -> f64 + 'a> {
    cfg.validate()?;
    check_dims(state, data, cfg)?;
    if j >= cfg.j_cells() {
        return Err(Error::InvalidParameter(format!("no cell {j}")));
    }
    let cell = cfg.cells[j];
    let prior = GammaParams::new(cell.prior_a, cell.prior_b)?;
    let needs_copula = cfg.j_cells() > 1 && cfg.copula_family != CopulaFamily::Independence;
    // The other cells' transforms do not involve theta^(j); fix them once.
    let base_u: Vec<Vec<f64>> = if needs_copula {
        state
            .lambda
            .iter()
            .map(|row| year_pit(row, &state.theta, cfg))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    Ok(move |theta_j: f64| {
        if theta_j <= 0.0 || !theta_j.is_finite() {
            return f64::NEG_INFINITY;
        }
        let mut s = ln_gamma_pdf(theta_j, &prior);
        for row in &data.experts {
            s += ln_intensity_pdf(row[j], cell.xi, theta_j);
        }
        let marginal = match GammaParams::with_mean(cell.alpha, theta_j) {
            Ok(m) => m,
            Err(_) => return f64::NEG_INFINITY,
        };
        for (t, lambda_row) in state.lambda.iter().enumerate() {
            s += ln_intensity_pdf(lambda_row[j], cell.alpha, theta_j);
            if needs_copula {
                let mut u = base_u[t].clone();
                u[j] = gamma_cdf(lambda_row[j], &marginal);
                s += ln_copula_year(&u, cfg, state.rho);
            }
            if s == f64::NEG_INFINITY {
                return s;
            }
        }
        s
    })
}

/// Full conditional of `lambda_t^(j)` as a log-density in the candidate
/// value, up to a constant.
pub fn log_fc_lambda<'a>(
    t: usize,
    j: usize,
    state: &'a ChainState,
    data: &'a Dataset,
    cfg: &'a BayesConfig,
) -> Result<impl Fn(f64) -> f64 + 'a> {
    cfg.validate()?;
    check_dims(state, data, cfg)?;
    if t >= data.t_years() || j >= cfg.j_cells() {
        return Err(Error::InvalidParameter(format!(
            "no intensity coordinate ({t}, {j})"
        )));
    }
    let cell = cfg.cells[j];
    let theta_j = state.theta[j];
    let n_tj = data.counts[t][j];
    let needs_copula = cfg.j_cells() > 1 && cfg.copula_family != CopulaFamily::Independence;
    let base_u: Vec<f64> = if needs_copula {
        year_pit(&state.lambda[t], &state.theta, cfg)?
    } else {
        Vec::new()
    };
    let marginal = GammaParams::with_mean(cell.alpha, theta_j)?;

    Ok(move |lam: f64| {
        if lam <= 0.0 || !lam.is_finite() {
            return f64::NEG_INFINITY;
        }
        let mut s = ln_poisson_pmf(n_tj, cell.volume * lam)
            + ln_intensity_pdf(lam, cell.alpha, theta_j);
        if needs_copula {
            let mut u = base_u.clone();
            u[j] = gamma_cdf(lam, &marginal);
            s += ln_copula_year(&u, cfg, state.rho);
        }
        s
    })
}

/// Full conditional of the copula parameter as a log-density in the
/// candidate value, up to a constant: the copula terms of every year
/// plus the flat prior. The gamma marginals do not involve `rho`.
pub fn log_fc_rho<'a>(
    state: &'a ChainState,
    data: &'a Dataset,
    cfg: &'a BayesConfig,
) -> Result<impl Fn(f64) -> f64 + 'a> {
    cfg.validate()?;
    check_dims(state, data, cfg)?;
    let pit: Vec<Vec<f64>> = state
        .lambda
        .iter()
        .map(|row| year_pit(row, &state.theta, cfg))
        .collect::<Result<_>>()?;

    Ok(move |rho: f64| {
        let prior = ln_rho_prior(rho, cfg);
        if prior == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let mut s = prior;
        for u in &pit {
            s += ln_copula_year(u, cfg, rho);
            if s == f64::NEG_INFINITY {
                return s;
            }
        }
        s
    })
}

/// Closed-form single-cell marginal posterior of `theta` (intensities
/// integrated out analytically), up to an additive constant:
/// `-(T alpha + sum n) ln(alpha + theta V) + (a - K xi + sum n - 1) ln
/// theta - theta b - (xi / theta) sum delta`.
pub fn single_cell_log_marginal_posterior(
    theta: f64,
    data: &Dataset,
    cfg: &BayesConfig,
) -> Result<f64> {
    cfg.validate()?;
    if cfg.j_cells() != 1 || data.j_cells() != 1 {
        return Err(Error::DimensionMismatch(
            "closed-form marginal posterior is single-cell only".into(),
        ));
    }
    if theta <= 0.0 || !theta.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let cell = cfg.cells[0];
    let t = data.t_years() as f64;
    let sum_n: f64 = data.counts.iter().map(|row| row[0] as f64).sum();
    let k = data.k_experts() as f64;
    let sum_delta: f64 = data.experts.iter().map(|row| row[0]).sum();
    Ok(
        -(t * cell.alpha + sum_n) * (cell.alpha + theta * cell.volume).ln()
            + (cell.prior_a - k * cell.xi + sum_n - 1.0) * theta.ln()
            - theta * cell.prior_b
            - cell.xi / theta * sum_delta,
    )
}

/// Mean and standard deviation of the single-cell marginal posterior by
/// adaptive quadrature of the closed form. Serves as the oracle against
/// which the MCMC path is checked.
pub fn single_cell_posterior_moments_quadrature(
    data: &Dataset,
    cfg: &BayesConfig,
) -> Result<(f64, f64)> {
    // Locate the mode on a log-spaced grid, then integrate where the
    // mass lives.
    let mut peak = f64::NEG_INFINITY;
    let mut mode = 1.0;
    for i in 0..4000 {
        let th = 10f64.powf(-6.0 + 12.0 * i as f64 / 3999.0);
        let v = single_cell_log_marginal_posterior(th, data, cfg)?;
        if v > peak {
            peak = v;
            mode = th;
        }
    }
    if !peak.is_finite() {
        return Err(Error::Numerical(
            "posterior mass not found on the search grid".into(),
        ));
    }
    // Expand until the integrand is negligible at both ends.
    let threshold = peak - 45.0;
    let mut lo = mode;
    while lo > 1e-12 && single_cell_log_marginal_posterior(lo, data, cfg)? > threshold {
        lo *= 0.5;
    }
    let mut hi = mode;
    while hi < 1e12 && single_cell_log_marginal_posterior(hi, data, cfg)? > threshold {
        hi *= 2.0;
    }
    let w = |th: f64| {
        (single_cell_log_marginal_posterior(th, data, cfg).unwrap_or(f64::NEG_INFINITY) - peak)
            .exp()
    };
    let z0 = adaptive_simpson(&w, lo, hi, 1e-12, 60);
    let z1 = adaptive_simpson(&|th| th * w(th), lo, hi, 1e-12, 60);
    let z2 = adaptive_simpson(&|th| th * th * w(th), lo, hi, 1e-12, 60);
    if z0 <= 0.0 || !z0.is_finite() {
        return Err(Error::Numerical("posterior normalization failed".into()));
    }
    let mean = z1 / z0;
    let var = z2 / z0 - mean * mean;
    Ok((mean, var.max(0.0).sqrt()))
}

/// Prior moments of the risk characteristic, the intensity and the
/// annual count implied by one cell's hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorMoments {
    pub theta_mean: f64,
    pub theta_var: f64,
    pub lambda_mean: f64,
    pub lambda_var: f64,
    pub count_mean: f64,
    pub count_var: f64,
}

pub fn prior_moments(cfg: &BayesConfig, j: usize) -> Result<PriorMoments> {
    cfg.validate()?;
    if j >= cfg.j_cells() {
        return Err(Error::InvalidParameter(format!("no cell {j}")));
    }
    let c = cfg.cells[j];
    let (a, b, alpha, v) = (c.prior_a, c.prior_b, c.alpha, c.volume);
    let theta_mean = a / b;
    let theta_var = a / (b * b);
    let lambda_var = (a * a) / (alpha * b * b) + (1.0 / alpha + 1.0) * a / (b * b);
    let count_var = v * theta_mean
        + v * v * (a * a) / (alpha * b * b)
        + v * v * (1.0 / alpha + 1.0) * a / (b * b);
    Ok(PriorMoments {
        theta_mean,
        theta_var,
        lambda_mean: theta_mean,
        lambda_var,
        count_mean: v * theta_mean,
        count_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::gamma_sample;
    use crate::rng::RngStream;

    fn example1_config(family: CopulaFamily, rho: f64) -> BayesConfig {
        let cell = CellConfig {
            prior_a: 2.0,
            prior_b: 2.5,
            alpha: 2.0,
            xi: 2.0,
            volume: 1.0,
        };
        let range = match family {
            CopulaFamily::Gaussian | CopulaFamily::Independence => (-1.0, 1.0),
            CopulaFamily::Clayton => (1e-6, 30.0),
            CopulaFamily::Gumbel => (1.0, 30.0),
        };
        BayesConfig {
            cells: vec![cell, cell],
            copula_family: family,
            rho,
            copula_prior_range: range,
        }
    }

    fn small_dataset() -> Dataset {
        Dataset::new(
            vec![vec![4, 7], vec![6, 3], vec![5, 9]],
            vec![vec![2.0, 8.0]],
        )
        .unwrap()
    }

    fn random_state(t: usize, j: usize, rng: &mut RngStream) -> ChainState {
        ChainState {
            theta: (0..j).map(|_| 1.0 + 8.0 * rng.uniform()).collect(),
            lambda: (0..t)
                .map(|_| (0..j).map(|_| 0.5 + 10.0 * rng.uniform()).collect())
                .collect(),
            rho: 0.0,
        }
    }

    #[test]
    fn joint_reduces_to_single_cell_integrand_for_j1() {
        // Independent re-derivation of the single-cell integrand.
        let cfg = BayesConfig {
            cells: vec![CellConfig {
                prior_a: 2.0,
                prior_b: 2.5,
                alpha: 2.0,
                xi: 2.0,
                volume: 1.0,
            }],
            copula_family: CopulaFamily::Independence,
            rho: 0.0,
            copula_prior_range: (-1.0, 1.0),
        };
        let data = Dataset::new(vec![vec![4], vec![6], vec![5]], vec![vec![2.0]]).unwrap();
        let integrand = |theta: f64, lambda: &[f64]| -> f64 {
            let c = cfg.cells[0];
            let mut s = (c.prior_a - 1.0) * theta.ln() - c.prior_b * theta;
            for row in &data.experts {
                s += c.xi * (c.xi / theta).ln() + (c.xi - 1.0) * row[0].ln()
                    - row[0] * c.xi / theta;
            }
            for (t, row) in data.counts.iter().enumerate() {
                let lam = lambda[t];
                s += row[0] as f64 * (c.volume * lam).ln() - c.volume * lam;
                s += c.alpha * (c.alpha / theta).ln() + (c.alpha - 1.0) * lam.ln()
                    - lam * c.alpha / theta;
            }
            s
        };
        let mut rng = RngStream::new(61, 0);
        for _ in 0..50 {
            let s1 = random_state(3, 1, &mut rng);
            let s2 = random_state(3, 1, &mut rng);
            let d_joint = log_joint_posterior(&s1, &data, &cfg).unwrap()
                - log_joint_posterior(&s2, &data, &cfg).unwrap();
            let l1: Vec<f64> = s1.lambda.iter().map(|r| r[0]).collect();
            let l2: Vec<f64> = s2.lambda.iter().map(|r| r[0]).collect();
            let d_ref = integrand(s1.theta[0], &l1) - integrand(s2.theta[0], &l2);
            assert!((d_joint - d_ref).abs() < 1e-10, "{d_joint} vs {d_ref}");
        }
    }

    #[test]
    fn rho_outside_prior_is_minus_infinity() {
        let cfg = example1_config(CopulaFamily::Gaussian, 0.9);
        let data = small_dataset();
        let mut rng = RngStream::new(62, 0);
        let mut state = random_state(3, 2, &mut rng);
        state.rho = 1.5;
        assert_eq!(
            log_joint_posterior(&state, &data, &cfg).unwrap(),
            f64::NEG_INFINITY
        );
        state.rho = 0.5;
        assert!(log_joint_posterior(&state, &data, &cfg).unwrap().is_finite());
        state.theta[0] = -1.0;
        assert_eq!(
            log_joint_posterior(&state, &data, &cfg).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn joint_matches_independent_term_by_term_rederivation() {
        // T=1, J=2, Clayton rho=2: sum the six blocks separately.
        let cfg = example1_config(CopulaFamily::Clayton, 2.0);
        let data = Dataset::new(vec![vec![4, 7]], vec![vec![2.0, 8.0]]).unwrap();
        let state = ChainState {
            theta: vec![3.0, 6.0],
            lambda: vec![vec![2.5, 7.5]],
            rho: 2.0,
        };
        let c = &cfg.cells;
        let mut expect = 0.0;
        for j in 0..2 {
            let prior = GammaParams::new(c[j].prior_a, c[j].prior_b).unwrap();
            expect += ln_gamma_pdf(state.theta[j], &prior);
            let expert = GammaParams::with_mean(c[j].xi, state.theta[j]).unwrap();
            expect += ln_gamma_pdf(data.experts[0][j], &expert);
            let marginal = GammaParams::with_mean(c[j].alpha, state.theta[j]).unwrap();
            expect += ln_gamma_pdf(state.lambda[0][j], &marginal);
            expect += ln_poisson_pmf(data.counts[0][j], c[j].volume * state.lambda[0][j]);
        }
        let u: Vec<f64> = (0..2)
            .map(|j| {
                gamma_cdf(
                    state.lambda[0][j],
                    &GammaParams::with_mean(c[j].alpha, state.theta[j]).unwrap(),
                )
            })
            .collect();
        expect += CopulaSpec::Clayton { rho: 2.0 }.log_density(&u).unwrap();
        let got = log_joint_posterior(&state, &data, &cfg).unwrap();
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
    }

    #[test]
    fn full_conditionals_are_proportional_to_the_joint() {
        let cfg = example1_config(CopulaFamily::Clayton, 2.0);
        let data = small_dataset();
        let mut rng = RngStream::new(63, 0);
        for trial in 0..100 {
            let mut state = random_state(3, 2, &mut rng);
            state.rho = 0.5 + 4.0 * rng.uniform();
            let j = trial % 2;
            let t = trial % 3;

            // theta
            let a = 0.5 + 9.0 * rng.uniform();
            let b = 0.5 + 9.0 * rng.uniform();
            let fc = log_fc_theta(j, &state, &data, &cfg).unwrap();
            let mut sa = state.clone();
            sa.theta[j] = a;
            let mut sb = state.clone();
            sb.theta[j] = b;
            let d_fc = fc(a) - fc(b);
            let d_joint = log_joint_posterior(&sa, &data, &cfg).unwrap()
                - log_joint_posterior(&sb, &data, &cfg).unwrap();
            assert!((d_fc - d_joint).abs() < 1e-10, "theta: {d_fc} vs {d_joint}");

            // lambda
            let fc = log_fc_lambda(t, j, &state, &data, &cfg).unwrap();
            let mut sa = state.clone();
            sa.lambda[t][j] = a;
            let mut sb = state.clone();
            sb.lambda[t][j] = b;
            let d_fc = fc(a) - fc(b);
            let d_joint = log_joint_posterior(&sa, &data, &cfg).unwrap()
                - log_joint_posterior(&sb, &data, &cfg).unwrap();
            assert!((d_fc - d_joint).abs() < 1e-10, "lambda: {d_fc} vs {d_joint}");

            // rho
            let ra = 0.5 + 4.0 * rng.uniform();
            let rb = 0.5 + 4.0 * rng.uniform();
            let fc = log_fc_rho(&state, &data, &cfg).unwrap();
            let mut sa = state.clone();
            sa.rho = ra;
            let mut sb = state.clone();
            sb.rho = rb;
            let d_fc = fc(ra) - fc(rb);
            let d_joint = log_joint_posterior(&sa, &data, &cfg).unwrap()
                - log_joint_posterior(&sb, &data, &cfg).unwrap();
            assert!((d_fc - d_joint).abs() < 1e-10, "rho: {d_fc} vs {d_joint}");
        }
    }

    #[test]
    fn independence_theta_conditional_ignores_other_cells() {
        let cfg = example1_config(CopulaFamily::Independence, 0.0);
        let data = small_dataset();
        let mut rng = RngStream::new(64, 0);
        let state = random_state(3, 2, &mut rng);
        let mut other = state.clone();
        for row in &mut other.lambda {
            row[1] *= 3.7;
        }
        other.theta[1] = 9.0;
        let f1 = log_fc_theta(0, &state, &data, &cfg).unwrap();
        let f2 = log_fc_theta(0, &other, &data, &cfg).unwrap();
        for &th in &[0.5, 2.0, 5.0, 8.0] {
            assert!((f1(th) - f2(th)).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_conditional_mode_matches_grid_search_of_analytic_form() {
        // K=0, independence, lambda fixed: the conditional is
        // proportional to theta^(a-1) exp(-b theta) theta^(-T alpha)
        // exp(-(alpha/theta) sum lambda).
        let mut cfg = example1_config(CopulaFamily::Independence, 0.0);
        cfg.cells.truncate(1);
        let data = Dataset::new(vec![vec![4], vec![6], vec![5]], Vec::new()).unwrap();
        let state = ChainState {
            theta: vec![4.0],
            lambda: vec![vec![3.0], vec![7.0], vec![5.5]],
            rho: 0.0,
        };
        let (a, b, alpha) = (2.0, 2.5, 2.0);
        let sum_lambda = 15.5;
        let t = 3.0;
        let analytic = |th: f64| {
            (a - 1.0 - t * alpha) * th.ln() - b * th - alpha * sum_lambda / th
        };
        let fc = log_fc_theta(0, &state, &data, &cfg).unwrap();
        let grid: Vec<f64> = (1..40_000).map(|i| i as f64 * 5e-4).collect();
        let fc_argmax = grid
            .iter()
            .copied()
            .max_by(|x, y| fc(*x).partial_cmp(&fc(*y)).unwrap())
            .unwrap();
        let an_argmax = grid
            .iter()
            .copied()
            .max_by(|x, y| analytic(*x).partial_cmp(&analytic(*y)).unwrap())
            .unwrap();
        assert!(
            (fc_argmax - an_argmax).abs() <= 5e-4 + 1e-12,
            "{fc_argmax} vs {an_argmax}"
        );
    }

    #[test]
    fn independence_lambda_conditional_is_conjugate_gamma() {
        // Gamma(alpha + n, alpha/theta + V), checked through normalized
        // grid evaluation.
        let mut cfg = example1_config(CopulaFamily::Independence, 0.0);
        cfg.cells.truncate(1);
        let data = Dataset::new(vec![vec![6]], vec![vec![2.0]]).unwrap();
        let state = ChainState {
            theta: vec![4.0],
            lambda: vec![vec![5.0]],
            rho: 0.0,
        };
        let fc = log_fc_lambda(0, 0, &state, &data, &cfg).unwrap();
        let post = GammaParams::new(2.0 + 6.0, 2.0 / 4.0 + 1.0).unwrap();
        // Normalize the conditional by quadrature over a wide range.
        let z = adaptive_simpson(&|l: f64| fc(l).exp(), 1e-9, 80.0, 1e-13, 60);
        let mut max_err: f64 = 0.0;
        for i in 1..400 {
            let lam = 0.05 * i as f64;
            let err = (fc(lam) - z.ln() - ln_gamma_pdf(lam, &post)).abs();
            max_err = max_err.max(err);
        }
        assert!(max_err < 1e-8, "max log-density error {max_err}");
    }

    #[test]
    fn zero_count_shape_one_conditional_is_exponential() {
        let mut cfg = example1_config(CopulaFamily::Independence, 0.0);
        cfg.cells.truncate(1);
        cfg.cells[0].alpha = 1.0;
        let data = Dataset::new(vec![vec![0]], Vec::new()).unwrap();
        let state = ChainState {
            theta: vec![4.0],
            lambda: vec![vec![1.0]],
            rho: 0.0,
        };
        let fc = log_fc_lambda(0, 0, &state, &data, &cfg).unwrap();
        // Exponential with rate 1/theta + V: log f(l) - log f(m) =
        // -(rate)(l - m).
        let rate = 1.0 / 4.0 + 1.0;
        for &(l, m) in &[(0.5, 1.5), (2.0, 0.1), (3.0, 1.0)] {
            let got = fc(l) - fc(m);
            let expect = -rate * (l - m);
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rho_conditional_recovers_generating_parameter() {
        // lambda generated at Gaussian rho = 0.9 over 50 years; the grid
        // argmax of the conditional should land near 0.9.
        let cfg = example1_config(CopulaFamily::Gaussian, 0.9);
        let truth = CopulaSpec::Gaussian { rho: 0.9 };
        let mut rng = RngStream::new(65, 0);
        let theta = [5.0, 5.0];
        let mut lambda = Vec::new();
        for _ in 0..50 {
            let u = truth.sample(2, &mut rng).unwrap();
            let row: Vec<f64> = (0..2)
                .map(|j| {
                    crate::distributions::gamma_quantile(
                        u[j],
                        &GammaParams::with_mean(2.0, theta[j]).unwrap(),
                    )
                    .unwrap()
                })
                .collect();
            lambda.push(row);
        }
        let counts = vec![vec![5, 5]; 50];
        let data = Dataset::new(counts, vec![vec![2.0, 8.0]]).unwrap();
        let state = ChainState {
            theta: theta.to_vec(),
            lambda,
            rho: 0.5,
        };
        let fc = log_fc_rho(&state, &data, &cfg).unwrap();
        let grid: Vec<f64> = (-99..100).map(|i| i as f64 / 100.0).collect();
        let argmax = grid
            .iter()
            .copied()
            .max_by(|x, y| fc(*x).partial_cmp(&fc(*y)).unwrap())
            .unwrap();
        assert!((argmax - 0.9).abs() <= 0.1, "argmax {argmax}");

        // T=0: flat on the prior support.
        let empty = Dataset::with_cells(2, Vec::new(), vec![vec![2.0, 8.0]]).unwrap();
        let state0 = ChainState {
            theta: theta.to_vec(),
            lambda: Vec::new(),
            rho: 0.5,
        };
        let fc0 = log_fc_rho(&state0, &empty, &cfg).unwrap();
        assert_eq!(fc0(-0.3), 0.0);
        assert_eq!(fc0(0.8), 0.0);
        assert_eq!(fc0(1.2), f64::NEG_INFINITY);
    }

    #[test]
    fn single_cell_marginal_reduces_to_prior_without_data() {
        let mut cfg = example1_config(CopulaFamily::Independence, 0.0);
        cfg.cells.truncate(1);
        let data = Dataset::empty(1).unwrap();
        let prior = GammaParams::new(2.0, 2.5).unwrap();
        let d1 = single_cell_log_marginal_posterior(3.0, &data, &cfg).unwrap()
            - single_cell_log_marginal_posterior(1.0, &data, &cfg).unwrap();
        let d2 = ln_gamma_pdf(3.0, &prior) - ln_gamma_pdf(1.0, &prior);
        assert!((d1 - d2).abs() < 1e-12);
        assert_eq!(
            single_cell_log_marginal_posterior(-1.0, &data, &cfg).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn quadrature_moments_match_frozen_oracle() {
        // mpmath quadrature of the closed form for T=3, n=(4,6,5), K=1,
        // delta=2, a=2, b=2.5, alpha=2, xi=2, V=1.
        let mut cfg = example1_config(CopulaFamily::Independence, 0.0);
        cfg.cells.truncate(1);
        let data = Dataset::new(vec![vec![4], vec![6], vec![5]], vec![vec![2.0]]).unwrap();
        let (mean, sd) = single_cell_posterior_moments_quadrature(&data, &cfg).unwrap();
        assert!(
            ((mean - 2.320_069_638_352_957) / mean).abs() < 1e-6,
            "mean {mean}"
        );
        assert!(((sd - 0.654_747_655_554_933_6) / sd).abs() < 1e-6, "sd {sd}");
    }

    #[test]
    fn closed_form_agrees_with_monte_carlo_integration_over_lambda() {
        // Estimate the lambda integral of the joint integrand by
        // sampling lambda from its prior given theta, and compare the
        // ratio at two theta values with the closed form.
        let mut cfg = example1_config(CopulaFamily::Independence, 0.0);
        cfg.cells.truncate(1);
        let data = Dataset::new(vec![vec![4], vec![6], vec![5]], vec![vec![2.0]]).unwrap();
        let mc_log_marginal = |theta: f64, rng: &mut RngStream| -> (f64, f64) {
            let m = 400_000;
            let marginal = GammaParams::with_mean(2.0, theta).unwrap();
            let mut vals = Vec::with_capacity(m);
            for _ in 0..m {
                let mut like = 0.0;
                for row in &data.counts {
                    let lam = gamma_sample(&marginal, rng);
                    like += ln_poisson_pmf(row[0], lam);
                }
                vals.push(like.exp());
            }
            let mean = vals.iter().sum::<f64>() / m as f64;
            let sd =
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
            (mean, sd / (m as f64).sqrt())
        };
        let mut rng = RngStream::new(66, 0);
        let (i1, se1) = mc_log_marginal(3.0, &mut rng);
        let (i2, se2) = mc_log_marginal(5.0, &mut rng);
        // Closed form with the prior and expert terms stripped off: the
        // likelihood part is the negative binomial product.
        let nb = |theta: f64| -> f64 {
            data.counts
                .iter()
                .map(|row| {
                    crate::distributions::ln_neg_binomial_pmf(row[0], theta, 1.0, 2.0).unwrap()
                })
                .sum::<f64>()
        };
        let ratio_mc = i1 / i2;
        let ratio_exact = (nb(3.0) - nb(5.0)).exp();
        let se_ratio = ratio_mc * ((se1 / i1).powi(2) + (se2 / i2).powi(2)).sqrt();
        assert!(
            (ratio_mc - ratio_exact).abs() < 3.0 * se_ratio,
            "MC {ratio_mc} vs exact {ratio_exact} (se {se_ratio})"
        );
    }

    #[test]
    fn negative_binomial_marginalization_consistency() {
        // Numerically integrating Poisson(n | V lambda) against the
        // Gamma(alpha, alpha/theta) intensity density reproduces the
        // negative binomial pmf.
        for &(theta, alpha, v) in &[(5.0, 2.0, 1.0), (10.0, 2.0, 1.0)] {
            let marginal = GammaParams::with_mean(alpha, theta).unwrap();
            for n in [0u64, 1, 5, 17, 50] {
                let f = |lam: f64| {
                    (ln_poisson_pmf(n, v * lam) + ln_gamma_pdf(lam, &marginal)).exp()
                };
                // The integrand concentrates like Gamma(alpha + n,
                // alpha/theta + V); split at its mode so the adaptive
                // rule cannot step over the peak.
                let shape = alpha + n as f64;
                let rate = alpha / theta + v;
                let mode = ((shape - 1.0).max(0.05)) / rate;
                let hi = (shape + 40.0 * shape.sqrt() + 10.0) / rate;
                let got = adaptive_simpson(&f, 1e-12, mode, 1e-14, 60)
                    + adaptive_simpson(&f, mode, hi, 1e-14, 60);
                let expect =
                    crate::distributions::neg_binomial_pmf(n, theta, v, alpha).unwrap();
                assert!(
                    (got - expect).abs() < 1e-8,
                    "theta={theta} n={n}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn expert_moment_identity() {
        // Delta | theta has mean theta and CV xi^{-1/2}.
        let (theta, xi) = (5.0, 2.0);
        let gp = GammaParams::with_mean(xi, theta).unwrap();
        let mut rng = RngStream::new(67, 0);
        let m = 1_000_000;
        let xs: Vec<f64> = (0..m).map(|_| gamma_sample(&gp, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / m as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
        assert!(((mean - theta) / theta).abs() < 0.01);
        let cv = sd / mean;
        let expect = 1.0 / xi.sqrt();
        assert!(((cv - expect) / expect).abs() < 0.02);
    }

    #[test]
    fn prior_moment_formulas() {
        let cfg = example1_config(CopulaFamily::Independence, 0.0);
        let m = prior_moments(&cfg, 0).unwrap();
        assert!((m.theta_mean - 0.8).abs() < 1e-14);
        assert!((m.theta_var - 0.32).abs() < 1e-14);
        assert!((m.count_mean - 0.8).abs() < 1e-14);

        // alpha -> infinity: Var(Lambda) -> a/b^2.
        let mut cfg2 = cfg.clone();
        cfg2.cells[0].alpha = 1e12;
        let m2 = prior_moments(&cfg2, 0).unwrap();
        assert!((m2.lambda_var - 0.32).abs() < 1e-9);

        // Monte Carlo of the three-level hierarchy.
        let mut rng = RngStream::new(68, 0);
        let n = 1_000_000;
        let prior = GammaParams::new(2.0, 2.5).unwrap();
        let counts: Vec<f64> = (0..n)
            .map(|_| {
                let theta = gamma_sample(&prior, &mut rng);
                let lam =
                    gamma_sample(&GammaParams::with_mean(2.0, theta).unwrap(), &mut rng);
                crate::distributions::poisson_sample(lam, &mut rng).unwrap() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(((var - m.count_var) / m.count_var).abs() < 0.02, "var {var}");
    }

    #[test]
    fn every_posterior_symbol_is_housed() {
        // a, b, alpha, xi, V in CellConfig; n, delta in Dataset; theta,
        // lambda, rho in ChainState; G and c through the copula family.
        let cfg = example1_config(CopulaFamily::Clayton, 2.0);
        let data = small_dataset();
        let state = ChainState {
            theta: vec![1.0, 2.0],
            lambda: vec![vec![1.0, 1.0]; 3],
            rho: 2.0,
        };
        let _ = (
            cfg.cells[0].prior_a,
            cfg.cells[0].prior_b,
            cfg.cells[0].alpha,
            cfg.cells[0].xi,
            cfg.cells[0].volume,
            &data.counts,
            &data.experts,
            &state.theta,
            &state.lambda,
            state.rho,
            cfg.copula_family,
        );
        assert!(log_joint_posterior(&state, &data, &cfg).unwrap().is_finite());
    }
}
