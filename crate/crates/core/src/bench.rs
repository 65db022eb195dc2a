//! Simulation study: the four data-generating designs, error and coverage
//! metrics, and a frequentist check-loss baseline fitted by exact linear
//! programming. Replicates run in parallel, each on its own seeded stream.

use crate::error::{PqrError, Result};
use crate::model::{CenteringKind, Dataset, Hyperpriors, QuantileModel};
use crate::pyramid::{build_oblique_tree, QuantileGrid};
use crate::sampler::{run_chain, McmcConfig};
use crate::simplex;
use crate::special::norm_quantile;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// One simulation design instance.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    /// Design id, 1 through 4.
    pub design: u8,
    pub n: usize,
    pub replicates: usize,
    pub taus: Vec<f64>,
    pub seed: u64,
}

impl DesignSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.design) {
            return Err(PqrError::InvalidInput(format!(
                "design {} outside 1..4",
                self.design
            )));
        }
        if self.n == 0 || self.replicates == 0 {
            return Err(PqrError::InvalidInput(
                "sample size and replicate count must be >= 1".into(),
            ));
        }
        QuantileGrid::new(self.taus.clone())?;
        Ok(())
    }
}

/// Number of covariates of a design.
pub fn design_dim(design: u8) -> usize {
    match design {
        4 => 5,
        _ => 1,
    }
}

/// The true coefficient functions beta_p(tau) of each design; these are the
/// estimands because the generator is monotone in its uniform driver.
pub fn true_beta(design: u8, p: usize, tau: f64) -> f64 {
    match (design, p) {
        (1, 0) => (tau / (1.0 - tau)).ln(),
        (1, 1) => 2.0,
        (2, 0) => (0.5 - tau).signum() * (1.0 - 2.0 * (0.5 - tau).abs()).ln(),
        (2, 1) => 2.0 * tau,
        (3, 0) => norm_quantile(tau),
        (3, 1) => 2.0 * (tau - 0.5).min(0.0),
        (4, 0) => 2.0 * norm_quantile(tau),
        (4, 1) => 2.0 * (tau - 0.5).min(0.0),
        (4, 2) => 2.0 * tau,
        (4, 3) => 2.0,
        (4, 4) => 1.0,
        (4, 5) => 0.0,
        _ => panic!("no coefficient {p} in design {design}"),
    }
}

/// Independent random stream for one replicate of a master seed.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_add((replicate as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    )
}

/// Draw one replicate: y_i = beta_0(u_i) + sum_j x_ij beta_j(u_i) with
/// x_ij ~ U(-1,1) and u_i ~ U(0,1).
pub fn generate_design(spec: &DesignSpec, replicate: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = design_dim(spec.design);
    let mut rng = replicate_rng(spec.seed, replicate);
    let mut ys = Vec::with_capacity(spec.n);
    let mut xs = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let row: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // open interval: u = 0 would send the design-1/2 intercept to -inf
        let u: f64 = loop {
            let v = rng.gen_range(0.0..1.0);
            if v > 0.0 {
                break v;
            }
        };
        let mut y = true_beta(spec.design, 0, u);
        for (j, x) in row.iter().enumerate() {
            y += x * true_beta(spec.design, j + 1, u);
        }
        ys.push(y);
        xs.push(row);
    }
    (ys, xs)
}

/// Root mean squared error of replicate estimates around the truth.
pub fn rmse(estimates: &[f64], truth: f64) -> f64 {
    let s = estimates.len() as f64;
    (estimates.iter().map(|e| (e - truth) * (e - truth)).sum::<f64>() / s).sqrt()
}

/// Fraction of intervals containing the truth.
pub fn coverage(intervals: &[(f64, f64)], truth: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(PqrError::InvalidInput("no intervals".into()));
    }
    let hits = intervals
        .iter()
        .filter(|(lo, hi)| *lo <= truth && truth <= *hi)
        .count();
    Ok(hits as f64 / intervals.len() as f64)
}

/// Check-loss fit on raw covariates with an intercept column. Independent
/// per tau; crossing between levels is allowed, this is a baseline only.
pub fn checkloss_fit(x: &[Vec<f64>], y: &[f64], tau: f64) -> Result<Vec<f64>> {
    let n = y.len();
    let p = x.first().map(|r| r.len()).unwrap_or(0);
    if n <= p + 1 {
        return Err(PqrError::InvalidInput(format!(
            "check-loss fit needs more than {} observations, got {n}",
            p + 1
        )));
    }
    let rows: Vec<Vec<f64>> = x
        .iter()
        .map(|r| {
            let mut row = Vec::with_capacity(p + 1);
            row.push(1.0);
            row.extend_from_slice(r);
            row
        })
        .collect();
    simplex::checkloss_fit(&rows, y, tau)
}

/// One table cell of the simulation report.
#[derive(Debug, Clone)]
pub struct BenchCell {
    pub method: String,
    pub tau: f64,
    pub coefficient: usize,
    pub rmse_x100: f64,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub design: u8,
    pub n: usize,
    pub replicates: usize,
    pub taus: Vec<f64>,
    pub cells: Vec<BenchCell>,
    pub runtime_secs: f64,
}

struct ReplicateFit {
    /// [p][t] posterior means
    pqr_mean: Vec<Vec<f64>>,
    /// [p][t] 95% equal-tailed intervals
    pqr_interval: Vec<Vec<(f64, f64)>>,
    /// [p][t] check-loss point estimates
    checkloss: Vec<Vec<f64>>,
}

fn fit_replicate(spec: &DesignSpec, mcmc: &McmcConfig, replicate: usize) -> Result<ReplicateFit> {
    let (y, x) = generate_design(spec, replicate);
    let p = design_dim(spec.design);
    let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
    let data = Dataset::from_raw(y.clone(), x.clone(), names)?;
    let tree = build_oblique_tree(QuantileGrid::new(spec.taus.clone())?)?;
    let model = QuantileModel::linear(&data, tree, CenteringKind::Normal, Hyperpriors::default());
    let config = McmcConfig {
        seed: mcmc
            .seed
            .wrapping_add((replicate as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        ..mcmc.clone()
    };
    let samples = run_chain(&model, Some(&data.frame), &config)?;
    let beta = samples.beta.as_ref().expect("linear fit has coefficients");
    let t_len = spec.taus.len();
    let mut pqr_mean = vec![vec![0.0; t_len]; p + 1];
    let mut pqr_interval = vec![vec![(0.0, 0.0); t_len]; p + 1];
    for pi in 0..=p {
        for t in 0..t_len {
            let trace = &beta[pi][t];
            let mut sorted = trace.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pqr_mean[pi][t] = trace.iter().sum::<f64>() / trace.len() as f64;
            pqr_interval[pi][t] = (
                crate::sampler::sample_quantile(&sorted, 0.025),
                crate::sampler::sample_quantile(&sorted, 0.975),
            );
        }
    }
    let mut checkloss = vec![vec![0.0; t_len]; p + 1];
    for (t, &tau) in spec.taus.iter().enumerate() {
        let beta_hat = checkloss_fit(&x, &y, tau)?;
        for pi in 0..=p {
            checkloss[pi][t] = beta_hat[pi];
        }
    }
    Ok(ReplicateFit {
        pqr_mean,
        pqr_interval,
        checkloss,
    })
}

/// Run the full study: S replicates in parallel, RMSE x100 and 95% coverage
/// per (method, coefficient, tau).
pub fn run_bench(spec: &DesignSpec, mcmc: &McmcConfig, threads: usize) -> Result<BenchReport> {
    spec.validate()?;
    mcmc.validate()?;
    let start = std::time::Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PqrError::InvalidInput(format!("thread pool: {e}")))?;
    let fits: Vec<Result<ReplicateFit>> = pool.install(|| {
        (0..spec.replicates)
            .into_par_iter()
            .map(|r| fit_replicate(spec, mcmc, r))
            .collect()
    });
    let mut ok = Vec::with_capacity(spec.replicates);
    for f in fits {
        ok.push(f?);
    }
    let p = design_dim(spec.design);
    let mut cells = Vec::new();
    for (t, &tau) in spec.taus.iter().enumerate() {
        for pi in 0..=p {
            let truth = true_beta(spec.design, pi, tau);
            let means: Vec<f64> = ok.iter().map(|f| f.pqr_mean[pi][t]).collect();
            let intervals: Vec<(f64, f64)> = ok.iter().map(|f| f.pqr_interval[pi][t]).collect();
            cells.push(BenchCell {
                method: "PQR".into(),
                tau,
                coefficient: pi,
                rmse_x100: 100.0 * rmse(&means, truth),
                coverage: Some(coverage(&intervals, truth)?),
            });
            let cl: Vec<f64> = ok.iter().map(|f| f.checkloss[pi][t]).collect();
            cells.push(BenchCell {
                method: "checkloss".into(),
                tau,
                coefficient: pi,
                rmse_x100: 100.0 * rmse(&cl, truth),
                coverage: None,
            });
        }
    }
    Ok(BenchReport {
        design: spec.design,
        n: spec.n,
        replicates: spec.replicates,
        taus: spec.taus.clone(),
        cells,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
