//! `pqr`: fit simultaneous linear quantile regressions with pyramid priors,
//! run the simulation benchmark, and draw from the prior.
//!
//! Outputs are plain CSV with full-precision floats (17 significant digits)
//! so downstream tools can reproduce every number bit for bit.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pqr_core::bench::{run_bench, DesignSpec};
use pqr_core::centering::{transform_unit, CenteringDistribution};
use pqr_core::model::{
    equally_spaced_knots, CenteringKind, Dataset, Hyperpriors, QuantileModel, RegressionState,
};
use pqr_core::pyramid::{build_oblique_tree, sample_unit_pyramid, QuantileGrid};
use pqr_core::sampler::{
    run_chain_mode, summarize, McmcConfig, PosteriorSamples, SamplerMode, SummaryRow,
};

mod ingest;
mod output;

use ingest::ingest_csv;
use output::{fmt_f64, write_file};

#[derive(Parser)]
#[command(name = "pqr", version, about = "Pyramid quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CenterArg {
    Normal,
    Gpd,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Coordinate,
    Reparam,
}

#[derive(clap::Args, Debug, Clone)]
struct CommonFitArgs {
    /// Headered CSV with a `y` column; all other columns are covariates.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated quantile levels, e.g. 0.1,0.5,0.9.
    #[arg(long)]
    tau: Option<String>,
    #[arg(long, value_enum)]
    center: Option<CenterArg>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Quantile update scheme; default: reparam for one covariate,
    /// coordinate otherwise.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Credibility of the reported intervals (e.g. 0.95).
    #[arg(long)]
    level: Option<f64>,
    /// Optional key=value file supplying defaults for any flag above.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the linear model on a CSV dataset.
    Fit {
        #[command(flatten)]
        common: CommonFitArgs,
    },
    /// Piecewise-linear fit with one pyramid per spline knot (single covariate).
    SplineFit {
        #[command(flatten)]
        common: CommonFitArgs,
        /// Number of equally spaced knots.
        #[arg(long)]
        knots: Option<usize>,
    },
    /// GPD-centred fit on threshold exceedances.
    ExtremeFit {
        #[command(flatten)]
        common: CommonFitArgs,
        /// Exceedance threshold; only rows with y > threshold are used.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Reproduce the simulation study at a configurable scale.
    Bench {
        #[arg(long)]
        design: Option<u8>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tau: Option<String>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        burnin: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample quantile functions from the prior (no data).
    PriorDraw {
        #[arg(long)]
        tau: Option<String>,
        #[arg(long, value_enum)]
        center: Option<CenterArg>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Centering location (normal) .
        #[arg(long)]
        mu: Option<f64>,
        /// Centering scale.
        #[arg(long)]
        sigma: Option<f64>,
        /// GPD shape.
        #[arg(long)]
        xi: Option<f64>,
        /// GPD threshold (location).
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            // single-line, machine-parsable error
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { common } => run_fit(common, FitKind::Linear),
        Command::SplineFit { common, knots } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let knots = resolve(knots, file.get("knots")?, 7);
            run_fit(common, FitKind::Spline { knots })
        }
        Command::ExtremeFit { common, threshold } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let threshold = resolve_required(threshold, file.get("threshold")?, "threshold")?;
            run_fit(common, FitKind::Extreme { threshold })
        }
        Command::Bench {
            design,
            replicates,
            n,
            tau,
            iters,
            burnin,
            thin,
            seed,
            threads,
            config,
            out,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let design = resolve(design, file.get("design")?, 1);
            let replicates = resolve(replicates, file.get("replicates")?, 20);
            let n = resolve(n, file.get("n")?, 100);
            let taus = parse_taus(&resolve(
                tau,
                file.get("tau")?,
                "0.1,0.25,0.5,0.75,0.9".to_string(),
            ))?;
            let iters = resolve(iters, file.get("iters")?, 20_000);
            let burnin = resolve(burnin, file.get("burnin")?, iters / 3);
            let thin = resolve(thin, file.get("thin")?, 10);
            let seed = resolve(seed, file.get("seed")?, 2024);
            let threads = resolve(threads, file.get("threads")?, 0);
            let out = resolve(out, file.get("out")?, PathBuf::from("."));
            run_bench_cmd(design, replicates, n, taus, iters, burnin, thin, seed, threads, &out)
        }
        Command::PriorDraw {
            tau,
            center,
            draws,
            seed,
            mu,
            sigma,
            xi,
            threshold,
            config,
            out,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let taus = parse_taus(&resolve(
                tau,
                file.get("tau")?,
                "0.1,0.25,0.5,0.75,0.9".to_string(),
            ))?;
            let center = resolve(center, file.get_center()?, CenterArg::Normal);
            let draws = resolve(draws, file.get("draws")?, 100);
            let seed = resolve(seed, file.get("seed")?, 2024);
            let mu = resolve(mu, file.get("mu")?, 0.0);
            let sigma = resolve(sigma, file.get("sigma")?, 1.0);
            let xi = resolve(xi, file.get("xi")?, 0.1);
            let threshold = resolve(threshold, file.get("threshold")?, 0.0);
            let out = resolve(out, file.get("out")?, PathBuf::from("."));
            run_prior_draw(taus, center, draws, seed, mu, sigma, xi, threshold, &out)
        }
    }
}

// ---------------------------------------------------------------------------
// config file / flag resolution (flags win)
// ---------------------------------------------------------------------------

struct FileConfig(HashMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = HashMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config file {}", p.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    anyhow!("config line {} is not key=value: {line}", lineno + 1)
                })?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("config key {key}={raw}: {e}")),
        }
    }

    fn get_center(&self) -> Result<Option<CenterArg>> {
        match self.0.get("center").map(|s| s.as_str()) {
            None => Ok(None),
            Some("normal") => Ok(Some(CenterArg::Normal)),
            Some("gpd") => Ok(Some(CenterArg::Gpd)),
            Some("uniform") => Ok(Some(CenterArg::Uniform)),
            Some(other) => bail!("config key center={other} not one of normal|gpd|uniform"),
        }
    }

    fn get_mode(&self) -> Result<Option<ModeArg>> {
        match self.0.get("mode").map(|s| s.as_str()) {
            None => Ok(None),
            Some("coordinate") => Ok(Some(ModeArg::Coordinate)),
            Some("reparam") => Ok(Some(ModeArg::Reparam)),
            Some(other) => bail!("config key mode={other} not one of coordinate|reparam"),
        }
    }
}

fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn resolve_required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file)
        .ok_or_else(|| anyhow!("--{name} is required (flag or config file)"))
}

fn parse_taus(raw: &str) -> Result<Vec<f64>> {
    let taus: Vec<f64> = raw
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| anyhow!("quantile level {t:?}: {e}"))
        })
        .collect::<Result<_>>()?;
    QuantileGrid::new(taus.clone()).map_err(|e| anyhow!("{e}"))?;
    Ok(taus)
}

// ---------------------------------------------------------------------------
// fit family
// ---------------------------------------------------------------------------

enum FitKind {
    Linear,
    Spline { knots: usize },
    Extreme { threshold: f64 },
}

struct ResolvedFit {
    taus: Vec<f64>,
    center: CenterArg,
    mcmc: McmcConfig,
    mode: Option<SamplerMode>,
    level: f64,
    out: PathBuf,
}

fn resolve_fit(common: &CommonFitArgs, default_center: CenterArg) -> Result<ResolvedFit> {
    let file = FileConfig::load(common.config.as_deref())?;
    let taus = parse_taus(&resolve(
        common.tau.clone(),
        file.get("tau")?,
        "0.1,0.25,0.5,0.75,0.9".to_string(),
    ))?;
    let center = resolve(common.center, file.get_center()?, default_center);
    let iters = resolve(common.iters, file.get("iters")?, 110_000);
    let burnin = resolve(common.burnin, file.get("burnin")?, 10_000);
    let thin = resolve(common.thin, file.get("thin")?, 10);
    let seed = resolve(common.seed, file.get("seed")?, 2024);
    let level = resolve(common.level, file.get("level")?, 0.95);
    let mode = common.mode.or(file.get_mode()?).map(|m| match m {
        ModeArg::Coordinate => SamplerMode::CoordinateUniform,
        ModeArg::Reparam => SamplerMode::ReparamBlock,
    });
    let out = resolve(common.out.clone(), file.get("out")?, PathBuf::from("."));
    let mcmc = McmcConfig {
        iterations: iters,
        burn_in: burnin,
        thin,
        seed,
        ..Default::default()
    };
    Ok(ResolvedFit {
        taus,
        center,
        mcmc,
        mode,
        level,
        out,
    })
}

fn run_fit(common: CommonFitArgs, kind: FitKind) -> Result<()> {
    let start = std::time::Instant::now();
    let default_center = match kind {
        FitKind::Extreme { .. } => CenterArg::Gpd,
        _ => CenterArg::Normal,
    };
    let rf = resolve_fit(&common, default_center)?;
    std::fs::create_dir_all(&rf.out)
        .with_context(|| format!("creating output directory {}", rf.out.display()))?;

    let raw = ingest_csv(&common.input)?;
    let mut report = String::new();
    writeln!(report, "pqr run report")?;
    writeln!(report, "input: {}", common.input.display())?;
    writeln!(report, "rows: {}  covariates: {}", raw.y.len(), raw.names.len())?;

    let tree = build_oblique_tree(QuantileGrid::new(rf.taus.clone()).map_err(|e| anyhow!("{e}"))?)
        .map_err(|e| anyhow!("{e}"))?;
    let hyper = Hyperpriors::default();

    match kind {
        FitKind::Linear | FitKind::Extreme { .. } => {
            let (y, x, center_kind) = match kind {
                FitKind::Extreme { threshold } => {
                    let mut fy = Vec::new();
                    let mut fx = Vec::new();
                    for (yi, xi) in raw.y.iter().zip(&raw.x) {
                        if *yi > threshold {
                            fy.push(*yi);
                            fx.push(xi.clone());
                        }
                    }
                    if fy.is_empty() {
                        bail!("no observations exceed the threshold {threshold}");
                    }
                    writeln!(report, "threshold: {threshold}  exceedances: {}", fy.len())?;
                    if rf.center != CenterArg::Gpd {
                        bail!("extreme-fit requires --center gpd");
                    }
                    (fy, fx, CenteringKind::Gpd { threshold })
                }
                _ => {
                    let ck = match rf.center {
                        CenterArg::Normal => CenteringKind::Normal,
                        CenterArg::Uniform => CenteringKind::Uniform,
                        CenterArg::Gpd => bail!("gpd centering requires the extreme-fit command"),
                    };
                    (raw.y.clone(), raw.x.clone(), ck)
                }
            };
            if y.len() <= raw.names.len() {
                bail!(
                    "need more observations ({}) than covariates ({})",
                    y.len(),
                    raw.names.len()
                );
            }
            let data = Dataset::from_raw(y, x, raw.names.clone()).map_err(|e| anyhow!("{e}"))?;
            writeln!(
                report,
                "hull vertices: {} ({} pivotal){}",
                data.hull.vertices.len(),
                data.hull.pivotal.iter().filter(|&&p| p).count(),
                if data.bbox_fallback {
                    "  [bounding-box fallback]"
                } else {
                    ""
                }
            )?;
            if data.bbox_fallback {
                let ratio = hull_box_volume_ratio(&data);
                writeln!(
                    report,
                    "estimated hull/box volume ratio: {ratio:.3} (constraints enforced on the box)"
                )?;
            }
            let model = QuantileModel::linear(&data, tree, center_kind, hyper);
            let mode = rf.mode.unwrap_or(if model.site_count <= 2 {
                SamplerMode::ReparamBlock
            } else {
                SamplerMode::CoordinateUniform
            });
            let samples = run_chain_mode(&model, Some(&data.frame), &rf.mcmc, mode)
                .map_err(|e| anyhow!("{e}"))?;
            let rows = summarize(&samples, rf.level).map_err(|e| anyhow!("{e}"))?;
            write_samples_csv(&rf.out, &samples, center_kind)?;
            write_summary_csv(&rf.out, &rows)?;
            write_quantile_lines_linear(&rf.out, &data, &samples, rf.level)?;
            finish_report(&rf.out, report, &samples, mode, start)?;
        }
        FitKind::Spline { knots } => {
            if raw.names.len() != 1 {
                bail!(
                    "spline-fit needs exactly one covariate column, found {}",
                    raw.names.len()
                );
            }
            if rf.center != CenterArg::Normal {
                bail!("spline-fit supports normal centering only");
            }
            let xs: Vec<f64> = raw.x.iter().map(|r| r[0]).collect();
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let knot_grid = equally_spaced_knots(lo, hi, knots).map_err(|e| anyhow!("{e}"))?;
            writeln!(report, "knots: {knot_grid:?}")?;
            let model = QuantileModel::spline(
                &xs,
                raw.y.clone(),
                &knot_grid,
                tree,
                CenteringKind::Normal,
                hyper,
            )
            .map_err(|e| anyhow!("{e}"))?;
            let mode = rf.mode.unwrap_or(SamplerMode::CoordinateUniform);
            let samples =
                run_chain_mode(&model, None, &rf.mcmc, mode).map_err(|e| anyhow!("{e}"))?;
            let rows = summarize(&samples, rf.level).map_err(|e| anyhow!("{e}"))?;
            write_samples_csv(&rf.out, &samples, CenteringKind::Normal)?;
            write_summary_csv(&rf.out, &rows)?;
            write_quantile_lines_spline(&rf.out, &knot_grid, &samples, rf.level)?;
            finish_report(&rf.out, report, &samples, mode, start)?;
        }
    }
    Ok(())
}

fn finish_report(
    out: &Path,
    mut report: String,
    samples: &PosteriorSamples,
    mode: SamplerMode,
    start: std::time::Instant,
) -> Result<()> {
    writeln!(report, "sampler mode: {mode:?}")?;
    writeln!(report, "stored draws: {}", samples.len())?;
    writeln!(report, "acceptance rates:")?;
    for c in &samples.acceptance {
        writeln!(report, "  {}: {:.3}", c.label, c.rate)?;
    }
    writeln!(report, "runtime_secs: {:.3}", start.elapsed().as_secs_f64())?;
    write_file(&out.join("report.txt"), &report)
}

/// Monte Carlo estimate of how much of the bounding box the data hull
/// actually occupies (diagnostic for the P > 3 fallback).
fn hull_box_volume_ratio(data: &Dataset) -> f64 {
    use rand::Rng;
    use rand::SeedableRng;
    let p = data.dim();
    let mut lo = data.covariates[0].clone();
    let mut hi = data.covariates[0].clone();
    for row in &data.covariates {
        for j in 0..p {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    let refs: Vec<&[f64]> = data.covariates.iter().map(|r| r.as_slice()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let trials = 256;
    let mut inside = 0usize;
    for _ in 0..trials {
        let pt: Vec<f64> = (0..p).map(|j| rng.gen_range(lo[j]..hi[j])).collect();
        if pqr_core::simplex::in_convex_hull(&pt, &refs, 1e-9).unwrap_or(false) {
            inside += 1;
        }
    }
    inside as f64 / trials as f64
}

// ---------------------------------------------------------------------------
// output files
// ---------------------------------------------------------------------------

fn state_header(state: &RegressionState, levels: &[f64], kind: CenteringKind) -> String {
    let mut cols = vec!["draw".to_string(), "log_posterior".to_string()];
    for (s, _) in state.sites.iter().enumerate() {
        for &tau in levels {
            cols.push(format!("q{s}_{tau}"));
        }
    }
    for (s, _) in state.centering.iter().enumerate() {
        match kind {
            CenteringKind::Uniform => {}
            CenteringKind::Normal => {
                cols.push(format!("mu{s}"));
                cols.push(format!("sigma{s}"));
            }
            CenteringKind::Gpd { .. } => {
                cols.push(format!("sigma{s}"));
                cols.push(format!("xi{s}"));
            }
        }
    }
    cols.join(",")
}

fn write_samples_csv(out: &Path, samples: &PosteriorSamples, kind: CenteringKind) -> Result<()> {
    let mut text = String::new();
    let first = samples
        .states
        .first()
        .ok_or_else(|| anyhow!("empty chain"))?;
    writeln!(text, "{}", state_header(first, &samples.levels, kind))?;
    for (i, (state, lp)) in samples
        .states
        .iter()
        .zip(&samples.log_posterior)
        .enumerate()
    {
        let mut row = vec![i.to_string(), fmt_f64(*lp)];
        for site in &state.sites {
            for v in &site.values {
                row.push(fmt_f64(*v));
            }
        }
        for c in &state.centering {
            match kind {
                CenteringKind::Uniform => {}
                CenteringKind::Normal => {
                    row.push(fmt_f64(c.mu));
                    row.push(fmt_f64(c.sigma));
                }
                CenteringKind::Gpd { .. } => {
                    row.push(fmt_f64(c.sigma));
                    row.push(fmt_f64(c.xi));
                }
            }
        }
        writeln!(text, "{}", row.join(","))?;
    }
    write_file(&out.join("samples.csv"), &text)
}

fn write_summary_csv(out: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut text = String::from("coefficient,tau,mean,median,lower,upper\n");
    for r in rows {
        writeln!(
            text,
            "{},{},{},{},{},{}",
            r.coefficient,
            fmt_f64(r.tau),
            fmt_f64(r.mean),
            fmt_f64(r.median),
            fmt_f64(r.lower),
            fmt_f64(r.upper)
        )?;
    }
    write_file(&out.join("summary.csv"), &text)
}

/// Posterior mean and interval of the conditional quantile on a 100-point
/// grid along each covariate (others at their sample means).
fn write_quantile_lines_linear(
    out: &Path,
    data: &Dataset,
    samples: &PosteriorSamples,
    level: f64,
) -> Result<()> {
    let p = data.dim();
    let n = data.n();
    let mut text = String::from("covariate,x,tau,mean,lower,upper\n");
    let means: Vec<f64> = (0..p)
        .map(|j| data.covariates.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let tail = 0.5 * (1.0 - level);
    for j in 0..p.max(1) {
        let name = data
            .names
            .get(j)
            .cloned()
            .unwrap_or_else(|| format!("x{}", j + 1));
        let (lo, hi) = if p == 0 {
            (0.0, 0.0)
        } else {
            data.covariates
                .iter()
                .map(|r| r[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                    (a.min(v), b.max(v))
                })
        };
        let grid_len = if p == 0 { 1 } else { 100 };
        for g in 0..grid_len {
            let xj = if grid_len == 1 {
                lo
            } else {
                lo + (hi - lo) * g as f64 / (grid_len - 1) as f64
            };
            let mut raw = means.clone();
            if p > 0 {
                raw[j] = xj;
            }
            let pc = data.frame.to_pivot(&raw);
            for (t, &tau) in samples.levels.iter().enumerate() {
                let mut vals: Vec<f64> = samples
                    .states
                    .iter()
                    .map(|s| pqr_core::model::conditional_quantiles(s, &pc)[t])
                    .collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                writeln!(
                    text,
                    "{name},{},{},{},{},{}",
                    fmt_f64(xj),
                    fmt_f64(tau),
                    fmt_f64(mean),
                    fmt_f64(pqr_core::sampler::sample_quantile(&vals, tail)),
                    fmt_f64(pqr_core::sampler::sample_quantile(&vals, 1.0 - tail))
                )?;
            }
        }
    }
    write_file(&out.join("quantile_lines.csv"), &text)
}

fn write_quantile_lines_spline(
    out: &Path,
    knots: &[f64],
    samples: &PosteriorSamples,
    level: f64,
) -> Result<()> {
    let mut text = String::from("covariate,x,tau,mean,lower,upper\n");
    let (lo, hi) = (knots[0], knots[knots.len() - 1]);
    let tail = 0.5 * (1.0 - level);
    for g in 0..100 {
        let x = lo + (hi - lo) * g as f64 / 99.0;
        let w = pqr_core::model::spline_weights(knots, x).map_err(|e| anyhow!("{e}"))?;
        for (t, &tau) in samples.levels.iter().enumerate() {
            let mut vals: Vec<f64> = samples
                .states
                .iter()
                .map(|s| {
                    w.iter()
                        .zip(&s.sites)
                        .map(|(wk, site)| wk * site.values[t])
                        .sum::<f64>()
                })
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            writeln!(
                text,
                "x,{},{},{},{},{}",
                fmt_f64(x),
                fmt_f64(tau),
                fmt_f64(mean),
                fmt_f64(pqr_core::sampler::sample_quantile(&vals, tail)),
                fmt_f64(pqr_core::sampler::sample_quantile(&vals, 1.0 - tail))
            )?;
        }
    }
    write_file(&out.join("quantile_lines.csv"), &text)
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn run_bench_cmd(
    design: u8,
    replicates: usize,
    n: usize,
    taus: Vec<f64>,
    iters: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
    threads: usize,
    out: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let spec = DesignSpec {
        design,
        n,
        replicates,
        taus,
        seed,
    };
    let mcmc = McmcConfig {
        iterations: iters,
        burn_in: burnin,
        thin,
        seed,
        ..Default::default()
    };
    let report = run_bench(&spec, &mcmc, threads).map_err(|e| anyhow!("{e}"))?;
    let p = pqr_core::bench::design_dim(design);

    let method_rows = |want_cov: bool| -> String {
        let mut text = String::new();
        let header: Vec<String> = std::iter::once("tau,method".to_string())
            .chain((0..=p).map(|j| format!("beta{j}")))
            .collect();
        text.push_str(&header.join(","));
        text.push('\n');
        for &tau in &report.taus {
            for method in ["PQR", "checkloss"] {
                if want_cov && method != "PQR" {
                    continue;
                }
                let mut row = vec![fmt_f64(tau), method.to_string()];
                for j in 0..=p {
                    let cell = report
                        .cells
                        .iter()
                        .find(|c| c.method == method && c.tau == tau && c.coefficient == j)
                        .expect("cell");
                    row.push(if want_cov {
                        fmt_f64(cell.coverage.unwrap_or(f64::NAN))
                    } else {
                        fmt_f64(cell.rmse_x100)
                    });
                }
                text.push_str(&row.join(","));
                text.push('\n');
            }
        }
        text
    };
    write_file(&out.join("bench_rmse.csv"), &method_rows(false))?;
    write_file(&out.join("bench_coverage.csv"), &method_rows(true))?;

    let mut log = String::new();
    writeln!(log, "pqr bench report")?;
    writeln!(
        log,
        "design {design}  n {n}  replicates {replicates}  iters {iters}  burnin {burnin}"
    )?;
    writeln!(log, "runtime_secs: {:.3}", report.runtime_secs)?;
    writeln!(log, "rmse_x100 (rows: method; cols: beta0..beta{p}):")?;
    log.push_str(&method_rows(false));
    writeln!(log, "coverage (PQR, nominal 0.95):")?;
    log.push_str(&method_rows(true));
    write_file(&out.join("report.txt"), &log)?;
    println!("{log}");
    Ok(())
}

// ---------------------------------------------------------------------------
// prior draws
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn run_prior_draw(
    taus: Vec<f64>,
    center: CenterArg,
    draws: usize,
    seed: u64,
    mu: f64,
    sigma: f64,
    xi: f64,
    threshold: f64,
    out: &Path,
) -> Result<()> {
    use rand::SeedableRng;
    std::fs::create_dir_all(out)?;
    let dist = match center {
        CenterArg::Normal => CenteringDistribution::normal(mu, sigma).map_err(|e| anyhow!("{e}"))?,
        CenterArg::Uniform => CenteringDistribution::Uniform,
        CenterArg::Gpd => {
            CenteringDistribution::gpd(threshold, sigma, xi).map_err(|e| anyhow!("{e}"))?
        }
    };
    let tree = build_oblique_tree(QuantileGrid::new(taus.clone()).map_err(|e| anyhow!("{e}"))?)
        .map_err(|e| anyhow!("{e}"))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("draw,tau,value\n");
    for d in 0..draws {
        let unit = sample_unit_pyramid(&tree, &mut rng);
        let q = transform_unit(&dist, &unit);
        for (tau, v) in taus.iter().zip(&q.values) {
            writeln!(text, "{d},{},{}", fmt_f64(*tau), fmt_f64(*v))?;
        }
    }
    write_file(&out.join("prior_draws.csv"), &text)
}
