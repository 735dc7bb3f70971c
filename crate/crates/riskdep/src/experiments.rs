//! Experiment harness: generate datasets at known truth, estimate under
//! Joint / Marginal / Benchmark modes across year subsets, average over
//! replicate datasets, and sample the full predictive distribution.
//!
//! Replicates fan out over a rayon pool; every dataset and chain owns a
//! named stream derived from the plan seed, so reports are identical
//! regardless of thread count.

use rayon::prelude::*;

use crate::bayes::{BayesConfig, Dataset};
use crate::copulas::CopulaSpec;
use crate::distributions::{
    gamma_quantile, lognormal_sample, normal_sample, poisson_sample, GammaParams,
};
use crate::error::{Error, Result};
use crate::loss_model::SeverityParams;
use crate::rng::RngStream;
use crate::sampler::{
    run_benchmark_chain, run_chain, single_cell_chain, summarize, ChainConfig, ParamSummary,
    PosteriorSamples,
};

/// Estimation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimationMode {
    /// Dependence model with the configured (true) copula parameter.
    Joint,
    /// Cell-by-cell independent estimation.
    Marginal,
    /// Conditioning on the realized latent intensities.
    Benchmark,
}

impl EstimationMode {
    pub fn label(&self) -> &'static str {
        match self {
            EstimationMode::Joint => "joint",
            EstimationMode::Marginal => "marginal",
            EstimationMode::Benchmark => "benchmark",
        }
    }
}

impl std::str::FromStr for EstimationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "joint" => Ok(EstimationMode::Joint),
            "marginal" => Ok(EstimationMode::Marginal),
            "benchmark" => Ok(EstimationMode::Benchmark),
            other => Err(Error::InvalidParameter(format!(
                "unknown estimation mode '{other}'"
            ))),
        }
    }
}

/// Full experiment specification.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    /// Fitted model (priors, intensity shapes, volumes, copula family
    /// and the fixed copula parameter used by Joint estimation).
    pub bayes: BayesConfig,
    /// Copula generating the data; may differ from the fitted family.
    pub truth_copula: CopulaSpec,
    /// True risk characteristics per cell.
    pub theta_true: Vec<f64>,
    /// Fixed expert opinions (K rows, J columns), biased or not.
    pub experts: Vec<Vec<f64>>,
    /// Nondecreasing list of year subsets to refit on.
    pub year_subsets: Vec<usize>,
    /// Number of independent datasets.
    pub replicates: usize,
    pub modes: Vec<EstimationMode>,
    pub chain: ChainConfig,
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.bayes.validate()?;
        let j = self.bayes.j_cells();
        if self.theta_true.len() != j {
            return Err(Error::DimensionMismatch(format!(
                "{} true characteristics for {} cells",
                self.theta_true.len(),
                j
            )));
        }
        if self.theta_true.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidParameter(
                "true risk characteristics must be positive".into(),
            ));
        }
        if self.experts.iter().any(|row| row.len() != j) {
            return Err(Error::DimensionMismatch(format!(
                "expert rows must have {j} columns"
            )));
        }
        if self.year_subsets.is_empty() || self.replicates == 0 || self.modes.is_empty() {
            return Err(Error::EmptyInput(
                "plan needs year subsets, replicates and modes".into(),
            ));
        }
        if self.year_subsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter(
                "year subsets must be nondecreasing".into(),
            ));
        }
        if j >= 2 {
            self.truth_copula.validate(j)?;
        }
        Ok(())
    }

    /// Total years to generate per replicate.
    pub fn generated_years(&self) -> usize {
        *self.year_subsets.last().unwrap_or(&0)
    }
}

/// One dataset drawn at the plan's truth: intensities from gamma
/// marginals coupled by the truth copula, counts from Poisson(V lambda),
/// experts fixed at the configured values.
pub fn generate_dataset(
    plan: &ExperimentPlan,
    years: usize,
    rng: &mut RngStream,
) -> Result<(Dataset, Vec<Vec<f64>>)> {
    plan.validate()?;
    let j = plan.bayes.j_cells();
    let marginals: Vec<GammaParams> = plan
        .bayes
        .cells
        .iter()
        .zip(&plan.theta_true)
        .map(|(c, &th)| GammaParams::with_mean(c.alpha, th))
        .collect::<Result<_>>()?;

    let mut lambda = Vec::with_capacity(years);
    let mut counts = Vec::with_capacity(years);
    for _ in 0..years {
        let u: Vec<f64> = if j == 1 {
            vec![rng.uniform_open()]
        } else {
            plan.truth_copula.sample(j, rng)?.0
        };
        let mut lam_row = Vec::with_capacity(j);
        let mut n_row = Vec::with_capacity(j);
        for jj in 0..j {
            let lam = gamma_quantile(u[jj], &marginals[jj])?;
            let n = poisson_sample(plan.bayes.cells[jj].volume * lam, rng)?;
            lam_row.push(lam);
            n_row.push(n);
        }
        lambda.push(lam_row);
        counts.push(n_row);
    }
    let data = Dataset::with_cells(j, counts, plan.experts.clone())?;
    Ok((data, lambda))
}

/// Averaged posterior mean and averaged posterior sd of one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportCell {
    pub avg_mean: f64,
    pub avg_sd: f64,
}

/// Report rows keyed by (mode, subset).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub subsets: Vec<usize>,
    pub entries: Vec<ReportEntry>,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub mode: EstimationMode,
    /// `per_theta[s][j]`: subset index s, cell j.
    pub per_theta: Vec<Vec<ReportCell>>,
    /// Copula-parameter column when it was estimated.
    pub rho: Option<Vec<ReportCell>>,
}

impl ExperimentReport {
    pub fn entry(&self, mode: EstimationMode) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.mode == mode)
    }

    /// Cell for (mode, subset length, cell index).
    pub fn theta_cell(&self, mode: EstimationMode, subset: usize, j: usize) -> Option<ReportCell> {
        let s = self.subsets.iter().position(|&t| t == subset)?;
        Some(self.entry(mode)?.per_theta[s][j])
    }
}

/// Posterior mean/sd per theta (and rho) from one chain run.
#[derive(Debug, Clone)]
struct FitSummary {
    theta: Vec<(f64, f64)>,
    rho: Option<(f64, f64)>,
}

fn summarize_fit(summaries: &[ParamSummary], j: usize, with_rho: bool) -> FitSummary {
    let theta = (0..j)
        .map(|jj| (summaries[jj].mean, summaries[jj].sd))
        .collect();
    let rho = with_rho.then(|| {
        let r = &summaries[j];
        (r.mean, r.sd)
    });
    FitSummary { theta, rho }
}

fn fit_one(
    plan: &ExperimentPlan,
    mode: EstimationMode,
    data: &Dataset,
    true_lambda: &[Vec<f64>],
    replicate: usize,
    subset: usize,
) -> Result<FitSummary> {
    let j = plan.bayes.j_cells();
    let with_rho = plan.chain.estimate_rho;
    let stream = |suffix: &str| {
        RngStream::named(
            plan.seed,
            &format!("chain-{replicate}-{subset}-{}{suffix}", mode.label()),
        )
    };
    match mode {
        EstimationMode::Joint => {
            let mut rng = stream("");
            let samples = run_chain(data, &plan.bayes, &plan.chain, None, &mut rng)?;
            check_health(&samples)?;
            Ok(summarize_fit(&summarize(&samples)?, j, with_rho))
        }
        EstimationMode::Benchmark => {
            let mut rng = stream("");
            let samples =
                run_benchmark_chain(data, &plan.bayes, &plan.chain, true_lambda, &mut rng)?;
            check_health(&samples)?;
            Ok(summarize_fit(&summarize(&samples)?, j, with_rho))
        }
        EstimationMode::Marginal => {
            // One independent single-cell chain per cell.
            let mut theta = Vec::with_capacity(j);
            for jj in 0..j {
                let mut rng = stream(&format!("-{jj}"));
                let samples = single_cell_chain(data, &plan.bayes, &plan.chain, jj, &mut rng)?;
                check_health(&samples)?;
                let s = &summarize(&samples)?[0];
                theta.push((s.mean, s.sd));
            }
            Ok(FitSummary { theta, rho: None })
        }
    }
}

/// A chain whose shrinkage step keeps failing signals a numerical
/// problem worth surfacing rather than averaging away.
fn check_health(samples: &PosteriorSamples) -> Result<()> {
    if samples.exhaustion_rate() > 1e-3 {
        return Err(Error::Numerical(format!(
            "slice shrinkage exhausted in {:.3}% of updates",
            100.0 * samples.exhaustion_rate()
        )));
    }
    Ok(())
}

/// Run the full experiment: per replicate, generate one dataset of
/// `max(year_subsets)` years; refit every (subset, mode) pair; average
/// posterior means and sds over replicates.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let j = plan.bayes.j_cells();
    let t_max = plan.generated_years();

    // replicate -> subset -> mode -> FitSummary
    let per_replicate: Vec<Vec<Vec<FitSummary>>> = (0..plan.replicates)
        .into_par_iter()
        .map(|r| {
            let mut data_rng = RngStream::named(plan.seed, &format!("dataset-{r}"));
            let (data_full, lambda_full) = generate_dataset(plan, t_max, &mut data_rng)?;
            plan.year_subsets
                .iter()
                .map(|&t| {
                    let data = data_full.truncate_years(t)?;
                    let lambda = lambda_full[..t].to_vec();
                    plan.modes
                        .iter()
                        .map(|&mode| fit_one(plan, mode, &data, &lambda, r, t))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let n = plan.replicates as f64;
    let entries = plan
        .modes
        .iter()
        .enumerate()
        .map(|(mi, &mode)| {
            let per_theta: Vec<Vec<ReportCell>> = (0..plan.year_subsets.len())
                .map(|si| {
                    (0..j)
                        .map(|jj| {
                            let avg_mean = per_replicate
                                .iter()
                                .map(|rep| rep[si][mi].theta[jj].0)
                                .sum::<f64>()
                                / n;
                            let avg_sd = per_replicate
                                .iter()
                                .map(|rep| rep[si][mi].theta[jj].1)
                                .sum::<f64>()
                                / n;
                            ReportCell { avg_mean, avg_sd }
                        })
                        .collect()
                })
                .collect();
            let rho = per_replicate[0][0][mi].rho.is_some().then(|| {
                (0..plan.year_subsets.len())
                    .map(|si| {
                        let avg_mean = per_replicate
                            .iter()
                            .map(|rep| rep[si][mi].rho.unwrap().0)
                            .sum::<f64>()
                            / n;
                        let avg_sd = per_replicate
                            .iter()
                            .map(|rep| rep[si][mi].rho.unwrap().1)
                            .sum::<f64>()
                            / n;
                        ReportCell { avg_mean, avg_sd }
                    })
                    .collect()
            });
            ReportEntry {
                mode,
                per_theta,
                rho,
            }
        })
        .collect();

    Ok(ExperimentReport {
        subsets: plan.year_subsets.clone(),
        entries,
        replicates: plan.replicates,
    })
}

/// Joint estimation of the copula parameter alongside the risk
/// characteristics on a single generated dataset, fitting each year
/// subset. The chain config's `estimate_rho` is forced on and the mode
/// set collapses to Joint.
pub fn run_joint_rho_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    let mut plan = plan.clone();
    plan.replicates = 1;
    plan.modes = vec![EstimationMode::Joint];
    plan.chain.estimate_rho = true;
    run_experiment(&plan)
}

/// Draws from the full predictive distribution of the next year.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSample {
    /// Per draw, per cell.
    pub counts: Vec<Vec<u64>>,
    /// Per draw, per cell; present when severities were configured.
    pub losses: Option<Vec<Vec<f64>>>,
}

impl PredictiveSample {
    pub fn total_counts(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|row| row.iter().map(|&n| n as f64).sum())
            .collect()
    }

    pub fn total_losses(&self) -> Option<Vec<f64>> {
        self.losses
            .as_ref()
            .map(|l| l.iter().map(|row| row.iter().sum()).collect())
    }

    pub fn cell_counts(&self, j: usize) -> Vec<f64> {
        self.counts.iter().map(|row| row[j] as f64).collect()
    }
}

/// Sample the next year from the full predictive distribution: for each
/// draw, take one retained posterior state (theta, rho), couple new
/// intensities through the copula at that state, then draw counts and
/// (when severity parameters are given) lognormal losses.
///
/// Without `resample`, `draws` may not exceed the retained state count
/// and states are consumed in order; with it, states are drawn uniformly
/// with replacement.
pub fn sample_full_predictive(
    samples: &PosteriorSamples,
    cfg: &BayesConfig,
    severities: Option<&[SeverityParams]>,
    draws: usize,
    resample: bool,
    rng: &mut RngStream,
) -> Result<PredictiveSample> {
    cfg.validate()?;
    let retained = samples.retained();
    if retained == 0 {
        return Err(Error::EmptyInput("no retained posterior states".into()));
    }
    if !resample && draws > retained {
        return Err(Error::InvalidParameter(format!(
            "{draws} draws exceed {retained} retained states; pass resample to allow reuse"
        )));
    }
    let j = cfg.j_cells();
    if let Some(sev) = severities {
        if sev.len() != j {
            return Err(Error::DimensionMismatch(format!(
                "{} severity parameter sets for {} cells",
                sev.len(),
                j
            )));
        }
    }

    let mut counts = Vec::with_capacity(draws);
    let mut losses = severities.map(|_| Vec::with_capacity(draws));
    for l in 0..draws {
        let idx = if resample { rng.index(retained) } else { l };
        let state = &samples.states[idx];
        let u: Vec<f64> = if j == 1 {
            vec![rng.uniform_open()]
        } else {
            cfg.copula_at(state.rho)?.sample(j, rng)?.0
        };
        let mut n_row = Vec::with_capacity(j);
        let mut z_row = Vec::with_capacity(j);
        for jj in 0..j {
            let marginal = GammaParams::with_mean(cfg.cells[jj].alpha, state.theta[jj])?;
            let lam = gamma_quantile(u[jj], &marginal)?;
            let n = poisson_sample(cfg.cells[jj].volume * lam, rng)?;
            n_row.push(n);
            if let Some(sev) = severities {
                let psi = sev[jj].mu_psi + sev[jj].omega_psi * normal_sample(rng);
                let mut z = 0.0;
                for _ in 0..n {
                    z += lognormal_sample(psi, sev[jj].sigma, rng)?;
                }
                z_row.push(z);
            }
        }
        counts.push(n_row);
        if let Some(ls) = losses.as_mut() {
            ls.push(z_row);
        }
    }
    Ok(PredictiveSample { counts, losses })
}
