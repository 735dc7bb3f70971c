use rayon::prelude::*;
use riskdep::bayes::*;
use riskdep::copulas::{CopulaFamily, CopulaSpec};
use riskdep::experiments::*;
use riskdep::sampler::*;
use riskdep::RngStream;

fn main() {
    let cell = CellConfig { prior_a: 2.0, prior_b: 0.4, alpha: 2.0, xi: 2.0, volume: 1.0 };
    for (label, experts) in [("biased (2,8)", vec![vec![2.0, 8.0]]), ("unbiased (5,5)", vec![vec![5.0, 5.0]])] {
        let plan = ExperimentPlan {
            bayes: BayesConfig {
                cells: vec![cell, cell],
                copula_family: CopulaFamily::Clayton,
                rho: 10.0,
                copula_prior_range: (1e-6, 30.0),
            },
            truth_copula: CopulaSpec::Clayton { rho: 10.0 },
            theta_true: vec![5.0, 5.0],
            experts,
            year_subsets: vec![20],
            replicates: 1,
            modes: vec![EstimationMode::Joint],
            chain: ChainConfig::new(20_000, 4_000).unwrap(),
            seed: 0,
        };
        let gaps: Vec<f64> = (0..32u64).into_par_iter().map(|r| {
            let mut rng = RngStream::named(555, &format!("ds-{label}-{r}"));
            let (data, _) = generate_dataset(&plan, 20, &mut rng).unwrap();
            let sc = data.single_cell(0).unwrap();
            let c1 = plan.bayes.single_cell(0);
            let (_qm, qs) = single_cell_posterior_moments_quadrature(&sc, &c1).unwrap();
            let mut crng = RngStream::new(556, r);
            let samples = run_chain(&data, &plan.bayes, &plan.chain, None, &mut crng).unwrap();
            qs - summarize(&samples).unwrap()[0].sd
        }).collect();
        let n = gaps.len() as f64;
        let mg = gaps.iter().sum::<f64>() / n;
        let sd = (gaps.iter().map(|g| (g - mg).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        println!("{label}: gap {:.4} +- se {:.4}", mg, sd / n.sqrt());
    }
}
