//! Slice-sampler MCMC over the posterior of the frequency model.
//!
//! The kernel is Neal's univariate slice sampler with stepping out and
//! shrinkage, run coordinate-wise over the risk characteristics, the
//! latent intensity matrix and (optionally) the copula parameter. The
//! height variable lives in log-space: `y = log f(x0) - Exp(1)`, the
//! exact log-space equivalent of drawing uniformly on `[0, f(x0)]`, so
//! the target density is never exponentiated.
//!
//! Two scan orders are provided. The random scan updates one randomly
//! chosen risk characteristic and one randomly chosen intensity
//! coordinate per iteration; the systematic scan sweeps every coordinate
//! each iteration and therefore needs fewer iterations to mix.
//! A simulated-tempering variant targets `pi^(gamma_l)` with
//! `gamma_l = min(sin(2 pi l / period) + 1, 1)` and retains only the
//! `gamma_l = 1` states.

use crate::bayes::{
    log_fc_lambda, log_fc_rho, log_fc_theta, log_joint_posterior, BayesConfig, ChainState,
    Dataset,
};
use crate::distributions::{gamma_sample, GammaParams};
use crate::error::{Error, Result};
use crate::loss_model::empirical_quantile;
use crate::rng::RngStream;

/// Tuning of one slice-sampled coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceConfig {
    /// Initial interval width.
    pub width: f64,
    /// Cap on the number of stepping-out expansions, split randomly
    /// between the two ends.
    pub max_stepout: u32,
    /// Finite truncation of the coordinate's support.
    pub lower: f64,
    pub upper: f64,
    /// Safety cap on shrinkage iterations.
    pub max_shrink: u32,
}

impl SliceConfig {
    pub fn new(width: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "slice width must be positive, got {width}"
            )));
        }
        if !(lower < upper) {
            return Err(Error::InvalidParameter(format!(
                "slice bounds [{lower}, {upper}] are empty"
            )));
        }
        Ok(Self {
            width,
            max_stepout: 50,
            lower,
            upper,
            max_shrink: 100,
        })
    }

    /// Default tuning for positive parameters on the prior-sd scale.
    pub fn positive_default() -> Self {
        Self {
            width: 1.0,
            max_stepout: 50,
            lower: 1e-8,
            upper: 1e8,
            max_shrink: 100,
        }
    }

    /// Default tuning for the copula parameter: a tenth of the prior
    /// range as width, bounded by the range itself.
    pub fn for_range(lower: f64, upper: f64) -> Result<Self> {
        Self::new(0.1 * (upper - lower), lower, upper)
    }
}

/// Result of one slice update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceOutcome {
    pub x: f64,
    /// Number of log-density evaluations consumed.
    pub evals: u32,
    /// Shrinkage budget ran out; `x` is the unchanged starting point.
    pub exhausted: bool,
}

/// One slice-sampling update of a univariate coordinate with log-density
/// `logf` (known up to a constant), starting from `x0` with
/// `logf(x0) > -inf`. Leaves the target invariant.
pub fn slice_step(
    logf: impl Fn(f64) -> f64,
    x0: f64,
    cfg: &SliceConfig,
    rng: &mut RngStream,
) -> SliceOutcome {
    let mut evals = 0u32;
    let mut f = |x: f64| {
        evals += 1;
        logf(x)
    };
    let fx0 = f(x0);
    debug_assert!(
        fx0.is_finite(),
        "slice_step needs a finite starting log-density"
    );
    // Log-space slice height.
    let y = fx0 - rng.exp1();

    // Random placement of the initial interval around x0.
    let mut left = (x0 - cfg.width * rng.uniform()).max(cfg.lower);
    let mut right = (left + cfg.width).min(cfg.upper);

    // Stepping out with a randomized budget split across the two ends.
    if cfg.max_stepout > 0 {
        let mut j = (rng.uniform() * cfg.max_stepout as f64).floor() as u32;
        let mut k = (cfg.max_stepout - 1).saturating_sub(j);
        while j > 0 && left > cfg.lower && f(left) > y {
            left = (left - cfg.width).max(cfg.lower);
            j -= 1;
        }
        while k > 0 && right < cfg.upper && f(right) > y {
            right = (right + cfg.width).min(cfg.upper);
            k -= 1;
        }
    }

    // Shrinkage toward x0 on rejections.
    for _ in 0..cfg.max_shrink {
        let x1 = left + rng.uniform() * (right - left);
        let fx1 = f(x1);
        if fx1 >= y {
            return SliceOutcome {
                x: x1,
                evals,
                exhausted: false,
            };
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
    SliceOutcome {
        x: x0,
        evals,
        exhausted: true,
    }
}

/// Coordinate-scan order of the Gibbs loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanOrder {
    /// Per iteration: one uniformly chosen risk characteristic and one
    /// uniformly chosen intensity coordinate.
    RandomScanPaperFaithful,
    /// Per iteration: every risk characteristic and every intensity
    /// coordinate.
    SystematicFullScan,
}

/// Simulated-tempering schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperingConfig {
    /// Period of the sine schedule; the argument is `2 pi l / period`.
    pub period: u64,
}

impl Default for TemperingConfig {
    fn default() -> Self {
        Self { period: 1000 }
    }
}

/// Floor applied to the tempering exponent; a power of exactly zero
/// would make the target improper on an unbounded space.
pub const TEMPERING_GAMMA_FLOOR: f64 = 1e-3;

/// The tempering exponent at iteration `l`.
pub fn tempering_gamma(l: u64, period: u64) -> f64 {
    let s = (2.0 * std::f64::consts::PI * l as f64 / period as f64).sin() + 1.0;
    s.min(1.0).max(TEMPERING_GAMMA_FLOOR)
}

/// Chain configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burnin: usize,
    pub scan: ScanOrder,
    pub tempering: Option<TemperingConfig>,
    /// Update the copula parameter through its full conditional; when
    /// false the configured value stays fixed.
    pub estimate_rho: bool,
    pub seed: u64,
    pub slice_theta: SliceConfig,
    pub slice_lambda: SliceConfig,
}

impl ChainConfig {
    pub fn new(iterations: usize, burnin: usize) -> Result<Self> {
        if burnin >= iterations {
            return Err(Error::InvalidParameter(format!(
                "burnin {burnin} must be below the iteration count {iterations}"
            )));
        }
        Ok(Self {
            iterations,
            burnin,
            scan: ScanOrder::SystematicFullScan,
            tempering: None,
            estimate_rho: false,
            seed: 0,
            slice_theta: SliceConfig::positive_default(),
            slice_lambda: SliceConfig::positive_default(),
        })
    }

    pub fn with_scan(mut self, scan: ScanOrder) -> Self {
        self.scan = scan;
        self
    }

    pub fn with_estimate_rho(mut self, on: bool) -> Self {
        self.estimate_rho = on;
        self
    }

    pub fn with_tempering(mut self, t: TemperingConfig) -> Self {
        self.tempering = Some(t);
        self
    }
}

/// Retained states plus slice bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub states: Vec<ChainState>,
    pub theta_evals: u64,
    pub lambda_evals: u64,
    pub rho_evals: u64,
    /// Updates whose shrinkage budget ran out (should be ~never).
    pub shrink_exhausted: u64,
    /// Total slice updates attempted.
    pub total_updates: u64,
}

impl PosteriorSamples {
    pub fn retained(&self) -> usize {
        self.states.len()
    }

    /// One risk characteristic's sample path.
    pub fn theta_series(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.theta[j]).collect()
    }

    pub fn rho_series(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.rho).collect()
    }

    /// Fraction of updates that exhausted the shrinkage budget.
    pub fn exhaustion_rate(&self) -> f64 {
        if self.total_updates == 0 {
            0.0
        } else {
            self.shrink_exhausted as f64 / self.total_updates as f64
        }
    }
}

/// Draw an initial state from the prior: `theta` from its gamma prior,
/// intensities from their conditional gamma marginals, `rho` at the
/// midpoint of the prior range (or the configured fixed value).
pub fn initial_state(
    data: &Dataset,
    cfg: &BayesConfig,
    estimate_rho: bool,
    rng: &mut RngStream,
) -> Result<ChainState> {
    let theta: Vec<f64> = cfg
        .cells
        .iter()
        .map(|c| {
            let prior = GammaParams::new(c.prior_a, c.prior_b)?;
            Ok(gamma_sample(&prior, rng))
        })
        .collect::<Result<_>>()?;
    let lambda: Vec<Vec<f64>> = (0..data.t_years())
        .map(|_| {
            cfg.cells
                .iter()
                .zip(&theta)
                .map(|(c, &th)| {
                    let marginal = GammaParams::with_mean(c.alpha, th)?;
                    Ok(gamma_sample(&marginal, rng))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let rho = if estimate_rho {
        let (lo, hi) = cfg.copula_prior_range;
        0.5 * (lo + hi)
    } else {
        cfg.rho
    };
    Ok(ChainState { theta, lambda, rho })
}

struct ChainDriver<'a> {
    data: &'a Dataset,
    cfg: &'a BayesConfig,
    ccfg: &'a ChainConfig,
    move_lambda: bool,
    samples: PosteriorSamples,
}

impl<'a> ChainDriver<'a> {
    fn new(
        data: &'a Dataset,
        cfg: &'a BayesConfig,
        ccfg: &'a ChainConfig,
        move_lambda: bool,
    ) -> Self {
        Self {
            data,
            cfg,
            ccfg,
            move_lambda,
            samples: PosteriorSamples {
                states: Vec::new(),
                theta_evals: 0,
                lambda_evals: 0,
                rho_evals: 0,
                shrink_exhausted: 0,
                total_updates: 0,
            },
        }
    }

    fn update_theta(
        &mut self,
        state: &mut ChainState,
        j: usize,
        gamma: f64,
        rng: &mut RngStream,
    ) -> Result<()> {
        let out = {
            let fc = log_fc_theta(j, state, self.data, self.cfg)?;
            slice_step(|x| gamma * fc(x), state.theta[j], &self.ccfg.slice_theta, rng)
        };
        state.theta[j] = out.x;
        self.record(out);
        Ok(())
    }

    fn update_lambda(
        &mut self,
        state: &mut ChainState,
        t: usize,
        j: usize,
        gamma: f64,
        rng: &mut RngStream,
    ) -> Result<()> {
        let out = {
            let fc = log_fc_lambda(t, j, state, self.data, self.cfg)?;
            slice_step(
                |x| gamma * fc(x),
                state.lambda[t][j],
                &self.ccfg.slice_lambda,
                rng,
            )
        };
        state.lambda[t][j] = out.x;
        self.samples.lambda_evals += u64::from(out.evals);
        self.samples.shrink_exhausted += u64::from(out.exhausted);
        self.samples.total_updates += 1;
        Ok(())
    }

    fn record(&mut self, out: SliceOutcome) {
        self.samples.theta_evals += u64::from(out.evals);
        self.samples.shrink_exhausted += u64::from(out.exhausted);
        self.samples.total_updates += 1;
    }

    fn update_rho(
        &mut self,
        state: &mut ChainState,
        gamma: f64,
        rng: &mut RngStream,
    ) -> Result<()> {
        let (lo, hi) = self.cfg.copula_prior_range;
        let slice_cfg = SliceConfig::for_range(lo, hi)?;
        let out = {
            let fc = log_fc_rho(state, self.data, self.cfg)?;
            slice_step(|x| gamma * fc(x), state.rho, &slice_cfg, rng)
        };
        state.rho = out.x;
        self.samples.rho_evals += u64::from(out.evals);
        self.samples.shrink_exhausted += u64::from(out.exhausted);
        self.samples.total_updates += 1;
        Ok(())
    }

    fn run(mut self, init: ChainState, rng: &mut RngStream) -> Result<PosteriorSamples> {
        let j_cells = self.cfg.j_cells();
        let t_years = self.data.t_years();
        let mut state = init;

        let start = log_joint_posterior(&state, self.data, self.cfg)?;
        if !start.is_finite() {
            return Err(Error::InvalidParameter(
                "initial state has zero posterior density".into(),
            ));
        }

        for l in 0..self.ccfg.iterations {
            let gamma = match &self.ccfg.tempering {
                Some(t) => tempering_gamma(l as u64, t.period),
                None => 1.0,
            };
            match self.ccfg.scan {
                ScanOrder::RandomScanPaperFaithful => {
                    let j = rng.index(j_cells);
                    self.update_theta(&mut state, j, gamma, rng)?;
                    if self.move_lambda && t_years > 0 {
                        let j = rng.index(j_cells);
                        let t = rng.index(t_years);
                        self.update_lambda(&mut state, t, j, gamma, rng)?;
                    }
                }
                ScanOrder::SystematicFullScan => {
                    for j in 0..j_cells {
                        self.update_theta(&mut state, j, gamma, rng)?;
                    }
                    if self.move_lambda {
                        for t in 0..t_years {
                            for j in 0..j_cells {
                                self.update_lambda(&mut state, t, j, gamma, rng)?;
                            }
                        }
                    }
                }
            }
            if self.ccfg.estimate_rho {
                self.update_rho(&mut state, gamma, rng)?;
            }

            if l >= self.ccfg.burnin && gamma == 1.0 {
                self.samples.states.push(state.clone());
            }
        }
        Ok(self.samples)
    }
}

/// Run the Gibbs-within-slice chain on the joint posterior over
/// `(theta, lambda_{1:T}, rho)`. `init = None` draws the start from the
/// prior.
pub fn run_chain(
    data: &Dataset,
    cfg: &BayesConfig,
    ccfg: &ChainConfig,
    init: Option<ChainState>,
    rng: &mut RngStream,
) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let init = match init {
        Some(s) => s,
        None => initial_state(data, cfg, ccfg.estimate_rho, rng)?,
    };
    ChainDriver::new(data, cfg, ccfg, true).run(init, rng)
}

/// Benchmark mode: condition on the realized intensities. Only the risk
/// characteristics (and the copula parameter, when requested) move.
pub fn run_benchmark_chain(
    data: &Dataset,
    cfg: &BayesConfig,
    ccfg: &ChainConfig,
    true_lambda: &[Vec<f64>],
    rng: &mut RngStream,
) -> Result<PosteriorSamples> {
    cfg.validate()?;
    if true_lambda.len() != data.t_years()
        || true_lambda.iter().any(|row| row.len() != cfg.j_cells())
    {
        return Err(Error::DimensionMismatch(
            "conditioning intensities must be T x J".into(),
        ));
    }
    if true_lambda.iter().flatten().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter(
            "conditioning intensities must be positive".into(),
        ));
    }
    let mut init = initial_state(data, cfg, ccfg.estimate_rho, rng)?;
    init.lambda = true_lambda.to_vec();
    ChainDriver::new(data, cfg, ccfg, false).run(init, rng)
}

/// Simulated-tempering run; requires a tempering schedule in the config.
pub fn run_tempered_chain(
    data: &Dataset,
    cfg: &BayesConfig,
    ccfg: &ChainConfig,
    rng: &mut RngStream,
) -> Result<PosteriorSamples> {
    if ccfg.tempering.is_none() {
        return Err(Error::InvalidParameter(
            "tempered run needs a tempering schedule".into(),
        ));
    }
    run_chain(data, cfg, ccfg, None, rng)
}

/// Number of `gamma_l = 1` iterations at or past burnin: the retained
/// length of a (possibly tempered) run.
pub fn tempered_retained_count(ccfg: &ChainConfig) -> usize {
    match &ccfg.tempering {
        None => ccfg.iterations - ccfg.burnin,
        Some(t) => (ccfg.burnin..ccfg.iterations)
            .filter(|&l| tempering_gamma(l as u64, t.period) == 1.0)
            .count(),
    }
}

/// Posterior summary of one scalar parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

fn summarize_series(name: &str, xs: &[f64]) -> Result<ParamSummary> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("no retained samples".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(ParamSummary {
        name: name.to_string(),
        mean,
        sd,
        q05: empirical_quantile(xs, 0.05)?,
        q50: empirical_quantile(xs, 0.50)?,
        q95: empirical_quantile(xs, 0.95)?,
    })
}

/// Summaries for every risk characteristic plus the copula parameter.
pub fn summarize(samples: &PosteriorSamples) -> Result<Vec<ParamSummary>> {
    if samples.states.is_empty() {
        return Err(Error::EmptyInput("no retained samples".into()));
    }
    let j = samples.states[0].theta.len();
    let mut out = Vec::with_capacity(j + 1);
    for jj in 0..j {
        out.push(summarize_series(
            &format!("theta_{}", jj + 1),
            &samples.theta_series(jj),
        )?);
    }
    out.push(summarize_series("rho", &samples.rho_series())?);
    Ok(out)
}

/// Monte Carlo standard error of a chain mean by batch means.
pub fn mcmc_standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return f64::INFINITY;
    }
    let b = (n as f64).sqrt().floor() as usize;
    let nb = n / b;
    let used = nb * b;
    let grand = xs[..used].iter().sum::<f64>() / used as f64;
    let mut var = 0.0;
    for i in 0..nb {
        let m = xs[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64;
        var += (m - grand).powi(2);
    }
    var /= (nb - 1) as f64;
    (var * b as f64 / used as f64).sqrt()
}

/// Marginal estimation of one cell: its column of the data under the
/// single-cell independence model.
pub fn single_cell_chain(
    data: &Dataset,
    cfg: &BayesConfig,
    ccfg: &ChainConfig,
    j: usize,
    rng: &mut RngStream,
) -> Result<PosteriorSamples> {
    let sub_cfg = cfg.single_cell(j);
    let sub_data = data.single_cell(j)?;
    let mut sub_ccfg = ccfg.clone();
    sub_ccfg.estimate_rho = false;
    run_chain(&sub_data, &sub_cfg, &sub_ccfg, None, rng)
}
