//! Metropolis-within-Gibbs over [`RegressionState`].
//!
//! Quantile coordinates move inside their exact non-crossing interval from
//! [`crate::geometry::combined_bounds_cached`]; when an interval side is
//! unbounded (extreme levels under Normal centering) the Uniform proposal is
//! windowed around the current value with an adapted width, and the
//! interval-length ratio enters the acceptance probability. Centering
//! parameters move by random walks (log scale for sigma). The optional
//! reparametrized mode updates a whole pivot's quantile vector at once as a
//! Gaussian random walk on log-differences, rejecting hull violations
//! through the posterior's -inf sentinel.

use crate::centering::PivotQuantileVector;
use crate::error::{PqrError, Result};
use crate::geometry::combined_bounds_cached;
use crate::model::{CenteringParams, PivotFrame, QuantileModel, RegressionState};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// How quantile coordinates are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    /// Systematic scan with Uniform proposals inside the non-crossing bounds.
    CoordinateUniform,
    /// Per-site Gaussian random walk on the log-difference reparametrization.
    ReparamBlock,
}

#[derive(Debug, Clone)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial random-walk scales.
    pub mu_scale: f64,
    pub sigma_scale: f64,
    pub xi_scale: f64,
    /// Iterations per adaptation step during burn-in; 0 disables adaptation.
    pub adaptation_window: usize,
    /// None picks the default: reparametrized for a single covariate,
    /// coordinate-uniform otherwise.
    pub mode: Option<SamplerMode>,
    /// Hold centering parameters at their initial values (prior studies).
    pub fix_centering: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 110_000,
            burn_in: 10_000,
            thin: 10,
            seed: 1234,
            mu_scale: 0.5,
            sigma_scale: 0.25,
            xi_scale: 0.1,
            adaptation_window: 50,
            mode: None,
            fix_centering: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(PqrError::InvalidInput(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(PqrError::InvalidInput("thin must be >= 1".into()));
        }
        if !(self.mu_scale > 0.0 && self.sigma_scale > 0.0 && self.xi_scale > 0.0) {
            return Err(PqrError::InvalidInput("proposal scales must be > 0".into()));
        }
        Ok(())
    }
}

/// Acceptance rate of one scanned coordinate, measured after burn-in.
#[derive(Debug, Clone)]
pub struct CoordinateRate {
    pub label: String,
    pub rate: f64,
}

/// Thinned posterior draws plus derived coefficient traces.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub levels: Vec<f64>,
    pub states: Vec<RegressionState>,
    pub log_posterior: Vec<f64>,
    pub acceptance: Vec<CoordinateRate>,
    /// beta[p][t][draw] in raw covariate units; present when the model has a
    /// pivot frame (linear models).
    pub beta: Option<Vec<Vec<Vec<f64>>>>,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Trace of the quantile value at one site and level.
    pub fn site_trace(&self, site: usize, level: usize) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| s.sites[site].values[level])
            .collect()
    }
}

// ---------------------------------------------------------------------------
// reparametrization
// ---------------------------------------------------------------------------

/// Map a monotone quantile vector to (log-differences, log(q_1 + q_T + c)).
pub fn reparam_forward(values: &[f64], c: f64) -> Result<Vec<f64>> {
    let t_len = values.len();
    let mut theta = Vec::with_capacity(t_len);
    for w in values.windows(2) {
        let d = w[1] - w[0];
        if !(d > 0.0) {
            return Err(PqrError::InvalidInput(
                "reparametrization needs strictly increasing quantiles".into(),
            ));
        }
        theta.push(d.ln());
    }
    let s = values[0] + values[t_len - 1] + c;
    if !(s > 0.0) {
        return Err(PqrError::InvalidInput(format!(
            "q_1 + q_T + c = {s} must be positive"
        )));
    }
    theta.push(s.ln());
    Ok(theta)
}

/// Inverse of [`reparam_forward`]; every theta maps to a strictly monotone
/// vector.
pub fn reparam_inverse(theta: &[f64], c: f64) -> Vec<f64> {
    let t_len = theta.len();
    let diffs: Vec<f64> = theta[..t_len - 1].iter().map(|t| t.exp()).collect();
    let total: f64 = diffs.iter().sum();
    let s = theta[t_len - 1].exp() - c;
    let q1 = 0.5 * (s - total);
    let mut out = Vec::with_capacity(t_len);
    out.push(q1);
    let mut cur = q1;
    for d in diffs {
        cur += d;
        out.push(cur);
    }
    out
}

// ---------------------------------------------------------------------------
// adaptation bookkeeping
// ---------------------------------------------------------------------------

struct AdaptedScale {
    scale: f64,
    window_accepts: usize,
    window_total: usize,
    steps: usize,
    floor: f64,
    cap: f64,
}

impl AdaptedScale {
    fn new(scale: f64) -> Self {
        Self {
            scale,
            window_accepts: 0,
            window_total: 0,
            steps: 0,
            floor: scale * 1e-8,
            cap: scale * 1e8,
        }
    }

    fn record(&mut self, accepted: bool, window: usize, adapting: bool) {
        if !adapting || window == 0 {
            return;
        }
        self.window_total += 1;
        if accepted {
            self.window_accepts += 1;
        }
        if self.window_total >= window {
            let rate = self.window_accepts as f64 / self.window_total as f64;
            self.steps += 1;
            // Robbins-Monro toward a 0.35 acceptance rate.
            let gain = (self.steps as f64).powf(-0.6);
            self.scale = (self.scale * ((rate - 0.35) * gain).exp()).clamp(self.floor, self.cap);
            self.window_accepts = 0;
            self.window_total = 0;
        }
    }
}

struct RateCounter {
    accepts: usize,
    total: usize,
}

impl RateCounter {
    fn new() -> Self {
        Self {
            accepts: 0,
            total: 0,
        }
    }

    fn record(&mut self, accepted: bool) {
        self.total += 1;
        if accepted {
            self.accepts += 1;
        }
    }

    fn rate(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.accepts as f64 / self.total as f64
        }
    }
}

// ---------------------------------------------------------------------------
// the chain
// ---------------------------------------------------------------------------

struct Chain<'a> {
    model: &'a QuantileModel,
    state: RegressionState,
    /// Cached vertex quantiles, one row per non-pivotal constraint point.
    vq: Vec<Vec<f64>>,
    /// Per-observation conditional quantiles, row-major N x T.
    qx: Vec<f64>,
    /// Segment index of each observation: responses[i] lies between
    /// conditional quantiles seg[i]-1 and seg[i].
    seg: Vec<usize>,
    /// Per-observation log density terms and their sum.
    ll: Vec<f64>,
    loglik: f64,
    prior: Vec<f64>,
    hyper: Vec<f64>,
    rng: ChaCha8Rng,
    stage: Vec<(usize, f64, usize)>,
    row_scratch: Vec<f64>,
}

impl<'a> Chain<'a> {
    fn new(model: &'a QuantileModel, state: RegressionState, seed: u64) -> Self {
        let n = model.n();
        let t_len = model.levels().len();
        let mut chain = Self {
            model,
            state,
            vq: vec![Vec::new(); model.vertex_weights.len()],
            qx: vec![0.0; n * t_len],
            seg: vec![0; n],
            ll: vec![0.0; n],
            loglik: 0.0,
            prior: vec![0.0; model.site_count],
            hyper: vec![0.0; model.site_count],
            rng: ChaCha8Rng::seed_from_u64(seed),
            stage: Vec::new(),
            row_scratch: vec![0.0; t_len],
        };
        chain.refresh_caches();
        for s in 0..model.site_count {
            chain.hyper[s] = model.site_hyper(&chain.state, s);
        }
        chain
    }

    /// Rebuild every cache from the state; also clears accumulated rounding
    /// drift on long runs.
    fn refresh_caches(&mut self) {
        for (row, e) in self.vq.iter_mut().zip(&self.model.vertex_weights) {
            *row = self.state.blend_quantiles(e);
        }
        let levels = self.model.levels();
        let t_len = levels.len();
        let mut total = 0.0;
        for i in 0..self.model.n() {
            let w = &self.model.data_weights[i];
            let y = self.model.responses[i];
            let base = i * t_len;
            for t in 0..t_len {
                let mut v = 0.0;
                for (wk, site) in w.iter().zip(&self.state.sites) {
                    v += wk * site.values[t];
                }
                self.qx[base + t] = v;
            }
            let row = &self.qx[base..base + t_len];
            let s = row.partition_point(|&q| q < y);
            self.seg[i] = s;
            let c = self.state.blend_centering(w);
            let li = crate::model::piecewise_log_density(levels, row, &self.model.kind.dist(&c), y);
            self.ll[i] = li;
            total += li;
        }
        self.loglik = total;
        for s in 0..self.model.site_count {
            self.prior[s] = self.model.site_prior(&self.state, s);
        }
    }

    fn log_posterior_cached(&self) -> f64 {
        self.loglik + self.prior.iter().sum::<f64>() + self.hyper.iter().sum::<f64>()
    }

    /// Density term of observation i with its (possibly patched) segment
    /// endpoints.
    fn obs_ll_segment(&self, i: usize, segment: usize, lo_q: f64, hi_q: f64) -> f64 {
        let levels = self.model.levels();
        let w = &self.model.data_weights[i];
        let c = self.state.blend_centering(w);
        if self.model.kind.has_sigma() && !(c.sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        crate::model::piecewise_log_density_segment(
            levels,
            levels.len(),
            segment,
            lo_q,
            hi_q,
            &self.model.kind.dist(&c),
            self.model.responses[i],
        )
    }

    /// sigma_e > 0, monotonicity and support containment at the cached
    /// vertex quantiles.
    fn vertices_feasible_cached(&self) -> bool {
        for (row, e) in self.vq.iter().zip(&self.model.vertex_weights) {
            for w in row.windows(2) {
                if !(w[0] < w[1]) {
                    return false;
                }
            }
            let c = self.state.blend_centering(e);
            if self.model.kind.has_sigma() && !(c.sigma > 0.0) {
                return false;
            }
            let (lo, hi) = self.model.kind.dist(&c).support();
            if !(row[0] > lo && row[row.len() - 1] < hi) {
                return false;
            }
        }
        true
    }

    /// One coordinate-uniform update; returns acceptance.
    ///
    /// A single-coordinate move keeps every conditional quantile vector
    /// monotone (the proposal lives inside the exact bounds), so only
    /// observations whose density segment touches `level` change: their
    /// segment can at most flip between `level` and `level + 1`.
    fn update_quantile_coordinate(
        &mut self,
        site: usize,
        level: usize,
        window: f64,
    ) -> Result<bool> {
        let t_len = self.model.levels().len();
        let bounds = combined_bounds_cached(
            &self.state,
            &self.model.kind,
            t_len,
            &self.model.vertex_weights,
            &self.vq,
            site,
            level,
        )?;
        let cur = self.state.sites[site].values[level];
        let effective = |center: f64| -> (f64, f64) {
            let a = bounds.lower.max(center - window);
            let b = bounds.upper.min(center + window);
            let margin = 1e-12 * (b - a);
            (a + margin, b - margin)
        };
        let (a, b) = effective(cur);
        if !(a < b) {
            return Ok(false);
        }
        let cand = self.rng.gen_range(a..b);
        let (a2, b2) = effective(cand);
        if !(a2 < b2) || cur < a2 || cur > b2 {
            return Ok(false);
        }
        let delta = cand - cur;

        // Incremental likelihood over the affected observations. The prior
        // term needs the updated state, so mutate it first.
        self.state.sites[site].values[level] = cand;
        let old_prior = self.prior[site];
        let new_prior = self.model.site_prior(&self.state, site);
        self.stage.clear();
        let mut dll = 0.0;
        let mut hit_neg_inf = new_prior == f64::NEG_INFINITY;
        if !hit_neg_inf {
            for i in 0..self.model.n() {
                let s_i = self.seg[i];
                if s_i != level && s_i != level + 1 {
                    continue;
                }
                let w = self.model.data_weights[i][site];
                if w == 0.0 {
                    continue;
                }
                let base = i * t_len;
                let q_new = self.qx[base + level] + w * delta;
                let y = self.model.responses[i];
                let new_seg = if q_new < y { level + 1 } else { level };
                let lo_q = if new_seg == 0 {
                    f64::NEG_INFINITY
                } else if new_seg - 1 == level {
                    q_new
                } else {
                    self.qx[base + new_seg - 1]
                };
                let hi_q = if new_seg == t_len {
                    f64::INFINITY
                } else if new_seg == level {
                    q_new
                } else {
                    self.qx[base + new_seg]
                };
                let ll_new = self.obs_ll_segment(i, new_seg, lo_q, hi_q);
                if ll_new == f64::NEG_INFINITY {
                    hit_neg_inf = true;
                    break;
                }
                dll += ll_new - self.ll[i];
                self.stage.push((i, ll_new, new_seg));
            }
        }
        if !hit_neg_inf {
            let log_ratio = dll + new_prior - old_prior + (b - a).ln() - (b2 - a2).ln();
            let u: f64 = self.rng.gen();
            if u.ln() < log_ratio {
                for i in 0..self.model.n() {
                    let w = self.model.data_weights[i][site];
                    if w != 0.0 {
                        self.qx[i * t_len + level] += w * delta;
                    }
                }
                for &(i, ll_new, s_new) in &self.stage {
                    self.ll[i] = ll_new;
                    self.seg[i] = s_new;
                }
                self.loglik += dll;
                self.prior[site] = new_prior;
                for (row, e) in self.vq.iter_mut().zip(&self.model.vertex_weights) {
                    row[level] += e[site] * delta;
                }
                debug_assert!(self.vertices_feasible_cached());
                return Ok(true);
            }
        }
        self.state.sites[site].values[level] = cur;
        Ok(false)
    }

    /// One reparametrized block update of a whole site.
    fn update_site_block(&mut self, site: usize, scale: f64, c_offset: f64) -> bool {
        let t_len = self.model.levels().len();
        let old_values = self.state.sites[site].values.clone();
        let theta = match reparam_forward(&old_values, c_offset) {
            Ok(t) => t,
            Err(_) => return false,
        };
        let theta_new: Vec<f64> = theta
            .iter()
            .map(|t| t + scale * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        let new_values = reparam_inverse(&theta_new, c_offset);

        let vq_backup: Vec<Vec<f64>> = self.vq.clone();
        self.state.sites[site].values.clone_from(&new_values);
        for (row, e) in self.vq.iter_mut().zip(&self.model.vertex_weights) {
            let w = e[site];
            for (t, r) in row.iter_mut().enumerate() {
                *r += w * (new_values[t] - old_values[t]);
            }
        }
        let revert = |chain: &mut Self, vq_backup: Vec<Vec<f64>>| {
            chain.state.sites[site].values.clone_from(&old_values);
            chain.vq = vq_backup;
        };
        if !self.vertices_feasible_cached() {
            revert(self, vq_backup);
            return false;
        }
        let old_prior = self.prior[site];
        let new_prior = self.model.site_prior(&self.state, site);
        if new_prior == f64::NEG_INFINITY {
            revert(self, vq_backup);
            return false;
        }

        // All levels of one site move at once: recompute the density term of
        // every observation this site touches.
        self.stage.clear();
        let mut dll = 0.0;
        let mut hit_neg_inf = false;
        for i in 0..self.model.n() {
            let w = self.model.data_weights[i][site];
            if w == 0.0 {
                continue;
            }
            let base = i * t_len;
            for t in 0..t_len {
                self.row_scratch[t] = self.qx[base + t] + w * (new_values[t] - old_values[t]);
            }
            let y = self.model.responses[i];
            let new_seg = self.row_scratch.partition_point(|&q| q < y);
            let lo_q = if new_seg == 0 {
                f64::NEG_INFINITY
            } else {
                self.row_scratch[new_seg - 1]
            };
            let hi_q = if new_seg == t_len {
                f64::INFINITY
            } else {
                self.row_scratch[new_seg]
            };
            let ll_new = self.obs_ll_segment(i, new_seg, lo_q, hi_q);
            if ll_new == f64::NEG_INFINITY {
                hit_neg_inf = true;
                break;
            }
            dll += ll_new - self.ll[i];
            self.stage.push((i, ll_new, new_seg));
        }
        if !hit_neg_inf {
            // Jacobian of theta -> Q is exp(sum theta) / 2.
            let jac: f64 = theta_new.iter().sum::<f64>() - theta.iter().sum::<f64>();
            let log_ratio = dll + new_prior - old_prior + jac;
            let u: f64 = self.rng.gen();
            if u.ln() < log_ratio {
                for i in 0..self.model.n() {
                    let w = self.model.data_weights[i][site];
                    if w == 0.0 {
                        continue;
                    }
                    let base = i * t_len;
                    for t in 0..t_len {
                        self.qx[base + t] += w * (new_values[t] - old_values[t]);
                    }
                }
                for &(i, ll_new, s_new) in &self.stage {
                    self.ll[i] = ll_new;
                    self.seg[i] = s_new;
                }
                self.loglik += dll;
                self.prior[site] = new_prior;
                return true;
            }
        }
        revert(self, vq_backup);
        false
    }

    /// Random-walk update of one centering parameter. `which`: 0 = mu,
    /// 1 = log sigma, 2 = xi.
    fn update_centering(&mut self, site: usize, which: u8, scale: f64) -> bool {
        let t_len = self.model.levels().len();
        let old = self.state.centering[site];
        let step: f64 = scale * self.rng.sample::<f64, _>(StandardNormal);
        let mut jacobian = 0.0;
        let new = match which {
            0 => CenteringParams {
                mu: old.mu + step,
                ..old
            },
            1 => {
                // log-scale walk keeps sigma positive; include the Jacobian
                jacobian = step;
                CenteringParams {
                    sigma: old.sigma * step.exp(),
                    ..old
                }
            }
            _ => CenteringParams {
                xi: old.xi + step,
                ..old
            },
        };
        self.state.centering[site] = new;
        // Quantiles are untouched, so vertex monotonicity holds; scale and
        // support feasibility can still break.
        if (which != 0 || self.model.kind.has_xi()) && !self.vertices_feasible_cached() {
            self.state.centering[site] = old;
            return false;
        }
        let old_prior = self.prior[site];
        let old_hyper = self.hyper[site];
        let new_prior = self.model.site_prior(&self.state, site);
        let new_hyper = self.model.site_hyper(&self.state, site);
        self.stage.clear();
        let mut dll = 0.0;
        let mut hit_neg_inf = new_prior == f64::NEG_INFINITY || new_hyper == f64::NEG_INFINITY;
        if !hit_neg_inf {
            // The centering plane moves wherever this site has weight; the
            // conditional quantiles (and so the segments) stay put.
            for i in 0..self.model.n() {
                if self.model.data_weights[i][site] == 0.0 {
                    continue;
                }
                let base = i * t_len;
                let s_i = self.seg[i];
                let lo_q = if s_i == 0 {
                    f64::NEG_INFINITY
                } else {
                    self.qx[base + s_i - 1]
                };
                let hi_q = if s_i == t_len {
                    f64::INFINITY
                } else {
                    self.qx[base + s_i]
                };
                let ll_new = self.obs_ll_segment(i, s_i, lo_q, hi_q);
                if ll_new == f64::NEG_INFINITY {
                    hit_neg_inf = true;
                    break;
                }
                dll += ll_new - self.ll[i];
                self.stage.push((i, ll_new, s_i));
            }
        }
        if !hit_neg_inf {
            let log_ratio = dll + new_prior - old_prior + new_hyper - old_hyper + jacobian;
            let u: f64 = self.rng.gen();
            if u.ln() < log_ratio {
                for &(i, ll_new, _) in &self.stage {
                    self.ll[i] = ll_new;
                }
                self.loglik += dll;
                self.prior[site] = new_prior;
                self.hyper[site] = new_hyper;
                return true;
            }
        }
        self.state.centering[site] = old;
        false
    }
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

/// Moment-based feasible starting state: local response moments around each
/// site, quantiles at the centering quantiles, then shrinkage of the
/// per-site parameters toward their global values until every hull
/// constraint holds.
pub fn initialize_state(model: &QuantileModel) -> Result<RegressionState> {
    let s_count = model.site_count;
    let n = model.n();
    let mut locals = Vec::with_capacity(s_count);
    for site in 0..s_count {
        locals.push(local_moments(model, site));
    }
    let global = global_moments(model);

    let lambdas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    for &lambda in &lambdas {
        let state = build_state(model, &locals, &global, lambda)?;
        if model.log_posterior(&state).is_finite() {
            return Ok(state);
        }
    }
    // GPD rescue: a negative shape can exclude observed points; retry with a
    // mildly heavy tail, then with inflated scales.
    if model.kind.has_xi() {
        let mut g = global;
        g.xi = 0.1;
        let locals_pos: Vec<CenteringParams> = locals
            .iter()
            .map(|c| CenteringParams { xi: 0.1, ..*c })
            .collect();
        for &lambda in &lambdas {
            let state = build_state(model, &locals_pos, &g, lambda)?;
            if model.log_posterior(&state).is_finite() {
                return Ok(state);
            }
        }
    }
    for factor in [2.0, 4.0, 16.0] {
        let mut g = global;
        g.sigma *= factor;
        g.xi = if model.kind.has_xi() { 0.1 } else { 0.0 };
        let state = build_state(model, &vec![g; s_count], &g, 1.0)?;
        if model.log_posterior(&state).is_finite() {
            return Ok(state);
        }
    }
    Err(PqrError::Initialization(format!(
        "no feasible starting state found for {n} observations over {s_count} sites"
    )))
}

fn local_moments(model: &QuantileModel, site: usize) -> CenteringParams {
    let n = model.n();
    if n == 0 {
        return CenteringParams {
            mu: 0.0,
            sigma: 1.0,
            xi: 0.1,
        };
    }
    // nearest 30% of observations by pivot-coordinate distance to the
    // site (the redundant barycentric component is skipped for the linear
    // model, leaving exactly the pivot coordinates)
    let skip = usize::from(model.redundant_first_weight);
    let mut order: Vec<usize> = (0..n).collect();
    let dist = |i: usize| -> f64 {
        model.data_weights[i]
            .iter()
            .enumerate()
            .skip(skip)
            .map(|(s, w)| {
                let target = if s == site { 1.0 } else { 0.0 };
                (w - target) * (w - target)
            })
            .sum::<f64>()
    };
    order.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap());
    let take = ((0.3 * n as f64).ceil() as usize).clamp(1, n).max(10.min(n));
    let ys: Vec<f64> = order[..take].iter().map(|&i| model.responses[i]).collect();
    moments_of(&ys, &model.kind)
}

fn global_moments(model: &QuantileModel) -> CenteringParams {
    if model.n() == 0 {
        return CenteringParams {
            mu: 0.0,
            sigma: 1.0,
            xi: 0.1,
        };
    }
    moments_of(&model.responses, &model.kind)
}

fn moments_of(ys: &[f64], kind: &crate::model::CenteringKind) -> CenteringParams {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = if ys.len() > 1 {
        ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n - 1.0)
    } else {
        1.0
    };
    let sd = var.sqrt().max(1e-6);
    match *kind {
        crate::model::CenteringKind::Gpd { threshold } => {
            // GPD method of moments on the exceedances
            let exc: Vec<f64> = ys.iter().map(|y| (y - threshold).max(1e-12)).collect();
            let m = exc.iter().sum::<f64>() / n;
            let v = if exc.len() > 1 {
                exc.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (n - 1.0)
            } else {
                m * m
            };
            let ratio = (m * m / v.max(1e-12)).min(50.0);
            let xi = (0.5 * (1.0 - ratio)).clamp(-0.4, 0.9);
            let sigma = (0.5 * m * (ratio + 1.0)).max(1e-6);
            CenteringParams {
                mu: threshold,
                sigma,
                xi,
            }
        }
        _ => CenteringParams {
            mu: mean,
            sigma: sd,
            xi: 0.0,
        },
    }
}

fn build_state(
    model: &QuantileModel,
    locals: &[CenteringParams],
    global: &CenteringParams,
    lambda: f64,
) -> Result<RegressionState> {
    let mut centering = Vec::with_capacity(model.site_count);
    for c in locals {
        centering.push(CenteringParams {
            mu: (1.0 - lambda) * c.mu + lambda * global.mu,
            sigma: ((1.0 - lambda) * c.sigma + lambda * global.sigma).max(1e-9),
            xi: (1.0 - lambda) * c.xi + lambda * global.xi,
        });
    }
    let levels = model.tree.grid.levels();
    let mut sites = Vec::with_capacity(model.site_count);
    for c in &centering {
        let dist = model.kind.dist(c);
        let values: Vec<f64> = levels
            .iter()
            .map(|&t| dist.quantile(t))
            .collect::<Result<_>>()?;
        sites.push(PivotQuantileVector { values });
    }
    Ok(RegressionState { sites, centering })
}

// ---------------------------------------------------------------------------
// the driver
// ---------------------------------------------------------------------------

/// Run one chain with the mode picked by the config (or by the covariate
/// dimension when unset).
pub fn run_chain(
    model: &QuantileModel,
    frame: Option<&PivotFrame>,
    config: &McmcConfig,
) -> Result<PosteriorSamples> {
    let mode = config.mode.unwrap_or(if model.site_count <= 2 {
        SamplerMode::ReparamBlock
    } else {
        SamplerMode::CoordinateUniform
    });
    run_chain_mode(model, frame, config, mode)
}

/// Reparametrized-block variant of [`run_chain`].
pub fn run_chain_reparam(
    model: &QuantileModel,
    frame: Option<&PivotFrame>,
    config: &McmcConfig,
) -> Result<PosteriorSamples> {
    run_chain_mode(model, frame, config, SamplerMode::ReparamBlock)
}

fn response_scale(model: &QuantileModel) -> f64 {
    let n = model.n();
    if n < 2 {
        return 1.0;
    }
    let mean = model.responses.iter().sum::<f64>() / n as f64;
    let var = model
        .responses
        .iter()
        .map(|y| (y - mean) * (y - mean))
        .sum::<f64>()
        / (n as f64 - 1.0);
    var.sqrt().max(1e-6)
}

pub fn run_chain_mode(
    model: &QuantileModel,
    frame: Option<&PivotFrame>,
    config: &McmcConfig,
    mode: SamplerMode,
) -> Result<PosteriorSamples> {
    config.validate()?;
    let t_len = model.levels().len();
    let s_count = model.site_count;
    let state = initialize_state(model)?;
    if !model.log_posterior(&state).is_finite() {
        return Err(PqrError::Initialization(
            "initial state has non-finite posterior".into(),
        ));
    }
    let mut chain = Chain::new(model, state, config.seed);

    // c = 2|min Y| keeps the log argument of the reparametrization positive
    // over the data range; with no data the constraint only needs to sit far
    // below any mass the prior puts on low quantiles.
    let c_offset = if model.responses.is_empty() {
        100.0
    } else {
        2.0 * model
            .responses
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
            .abs()
    };

    let y_scale = response_scale(model);
    let mut q_scales: Vec<AdaptedScale> = (0..s_count * t_len)
        .map(|_| AdaptedScale::new(2.0 * y_scale))
        .collect();
    let mut theta_scales: Vec<AdaptedScale> =
        (0..s_count).map(|_| AdaptedScale::new(0.2)).collect();
    let mut mu_scales: Vec<AdaptedScale> = (0..s_count)
        .map(|_| AdaptedScale::new(config.mu_scale * y_scale))
        .collect();
    let mut sigma_scales: Vec<AdaptedScale> = (0..s_count)
        .map(|_| AdaptedScale::new(config.sigma_scale))
        .collect();
    let mut xi_scales: Vec<AdaptedScale> = (0..s_count)
        .map(|_| AdaptedScale::new(config.xi_scale))
        .collect();

    let mut q_rates: Vec<RateCounter> = (0..s_count * t_len).map(|_| RateCounter::new()).collect();
    let mut theta_rates: Vec<RateCounter> = (0..s_count).map(|_| RateCounter::new()).collect();
    let mut mu_rates: Vec<RateCounter> = (0..s_count).map(|_| RateCounter::new()).collect();
    let mut sigma_rates: Vec<RateCounter> = (0..s_count).map(|_| RateCounter::new()).collect();
    let mut xi_rates: Vec<RateCounter> = (0..s_count).map(|_| RateCounter::new()).collect();

    let keep = (config.iterations - config.burn_in).div_ceil(config.thin);
    let mut states = Vec::with_capacity(keep);
    let mut log_posts = Vec::with_capacity(keep);

    for iter in 0..config.iterations {
        let adapting = iter < config.burn_in;
        match mode {
            SamplerMode::CoordinateUniform => {
                for site in 0..s_count {
                    for level in 0..t_len {
                        let k = site * t_len + level;
                        let acc = chain.update_quantile_coordinate(
                            site,
                            level,
                            q_scales[k].scale,
                        )?;
                        q_scales[k].record(acc, config.adaptation_window, adapting);
                        if !adapting {
                            q_rates[k].record(acc);
                        }
                    }
                }
            }
            SamplerMode::ReparamBlock => {
                for site in 0..s_count {
                    let acc = chain.update_site_block(site, theta_scales[site].scale, c_offset);
                    theta_scales[site].record(acc, config.adaptation_window, adapting);
                    if !adapting {
                        theta_rates[site].record(acc);
                    }
                }
            }
        }
        if !config.fix_centering {
            for site in 0..s_count {
                if model.kind.has_mu() {
                    let acc = chain.update_centering(site, 0, mu_scales[site].scale);
                    mu_scales[site].record(acc, config.adaptation_window, adapting);
                    if !adapting {
                        mu_rates[site].record(acc);
                    }
                }
                if model.kind.has_sigma() {
                    let acc = chain.update_centering(site, 1, sigma_scales[site].scale);
                    sigma_scales[site].record(acc, config.adaptation_window, adapting);
                    if !adapting {
                        sigma_rates[site].record(acc);
                    }
                }
                if model.kind.has_xi() {
                    let acc = chain.update_centering(site, 2, xi_scales[site].scale);
                    xi_scales[site].record(acc, config.adaptation_window, adapting);
                    if !adapting {
                        xi_rates[site].record(acc);
                    }
                }
            }
        }
        // Periodic cache refresh keeps the incremental vertex quantiles from
        // accumulating rounding drift over long runs.
        if iter % 1024 == 1023 {
            chain.refresh_caches();
        }
        if iter >= config.burn_in && (iter - config.burn_in).is_multiple_of(config.thin) {
            let lp = chain.log_posterior_cached();
            debug_assert!(lp.is_finite(), "stored state must be feasible");
            states.push(chain.state.clone());
            log_posts.push(lp);
        }
    }

    let mut acceptance = Vec::new();
    match mode {
        SamplerMode::CoordinateUniform => {
            for site in 0..s_count {
                for level in 0..t_len {
                    acceptance.push(CoordinateRate {
                        label: format!("q[site={site},level={level}]"),
                        rate: q_rates[site * t_len + level].rate(),
                    });
                }
            }
        }
        SamplerMode::ReparamBlock => {
            for (site, r) in theta_rates.iter().enumerate() {
                acceptance.push(CoordinateRate {
                    label: format!("theta[site={site}]"),
                    rate: r.rate(),
                });
            }
        }
    }
    if !config.fix_centering {
        for site in 0..s_count {
            if model.kind.has_mu() {
                acceptance.push(CoordinateRate {
                    label: format!("mu[{site}]"),
                    rate: mu_rates[site].rate(),
                });
            }
            if model.kind.has_sigma() {
                acceptance.push(CoordinateRate {
                    label: format!("sigma[{site}]"),
                    rate: sigma_rates[site].rate(),
                });
            }
            if model.kind.has_xi() {
                acceptance.push(CoordinateRate {
                    label: format!("xi[{site}]"),
                    rate: xi_rates[site].rate(),
                });
            }
        }
    }

    let beta = frame.map(|f| {
        let p_len = f.dim() + 1;
        let mut traces = vec![vec![Vec::with_capacity(states.len()); t_len]; p_len];
        for st in &states {
            for (t, _) in model.levels().iter().enumerate() {
                let (b0, b) = crate::model::coefficients(st, f, t);
                traces[0][t].push(b0);
                for (p, v) in b.iter().enumerate() {
                    traces[p + 1][t].push(*v);
                }
            }
        }
        traces
    });

    Ok(PosteriorSamples {
        levels: model.levels().to_vec(),
        states,
        log_posterior: log_posts,
        acceptance,
        beta,
    })
}

// ---------------------------------------------------------------------------
// summaries
// ---------------------------------------------------------------------------

/// One line of the posterior summary table.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub coefficient: String,
    pub tau: f64,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Linear-interpolation sample quantile of sorted data.
pub fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn summarize_trace(label: &str, tau: f64, trace: &[f64], credibility: f64) -> SummaryRow {
    let mut sorted = trace.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = trace.iter().sum::<f64>() / trace.len() as f64;
    let tail = 0.5 * (1.0 - credibility);
    SummaryRow {
        coefficient: label.to_string(),
        tau,
        mean,
        median: sample_quantile(&sorted, 0.5),
        lower: sample_quantile(&sorted, tail),
        upper: sample_quantile(&sorted, 1.0 - tail),
    }
}

/// Posterior means, medians and equal-tailed credible intervals per
/// (coefficient, tau); `credibility` 0.90 reports the 0.05/0.95 sample
/// quantiles. Falls back to per-site quantile summaries when no coefficient
/// traces exist (spline fits).
pub fn summarize(samples: &PosteriorSamples, credibility: f64) -> Result<Vec<SummaryRow>> {
    let n_draws = samples
        .beta
        .as_ref()
        .map(|b| b.first().map(|p| p[0].len()).unwrap_or(0))
        .unwrap_or(samples.states.len());
    if n_draws == 0 {
        return Err(PqrError::InvalidInput("empty chain".into()));
    }
    if !(credibility > 0.0 && credibility < 1.0) {
        return Err(PqrError::InvalidInput(format!(
            "credibility level {credibility} outside (0,1)"
        )));
    }
    let mut rows = Vec::new();
    match &samples.beta {
        Some(beta) => {
            for (p, per_level) in beta.iter().enumerate() {
                for (t, trace) in per_level.iter().enumerate() {
                    rows.push(summarize_trace(
                        &format!("beta{p}"),
                        samples.levels[t],
                        trace,
                        credibility,
                    ));
                }
            }
        }
        None => {
            let s_count = samples.states[0].sites.len();
            for site in 0..s_count {
                for (t, &tau) in samples.levels.iter().enumerate() {
                    let trace = samples.site_trace(site, t);
                    rows.push(summarize_trace(
                        &format!("site{site}"),
                        tau,
                        &trace,
                        credibility,
                    ));
                }
            }
        }
    }
    Ok(rows)
}

/// Split-chain potential scale reduction (Gelman-Rubin R-hat).
pub fn rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let mid = c.len() / 2;
        halves.push(&c[..mid]);
        halves.push(&c[mid..]);
    }
    let m = halves.len() as f64;
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0) as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = halves
        .iter()
        .map(|h| h.iter().sum::<f64>() / h.len() as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0)
        * means
            .iter()
            .map(|mu| (mu - grand) * (mu - grand))
            .sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| {
            h.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (h.len() as f64 - 1.0)
        })
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return 1.0;
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centering::CenteringDistribution;
    use crate::model::{CenteringKind, Dataset, Hyperpriors, QuantileModel};
    use crate::pyramid::{build_oblique_tree, QuantileGrid};
    use crate::test_support::{ks_critical, ks_statistic, ks_two_sample, ks_two_sample_critical};
    use rand::Rng;

    fn tree(levels: &[f64]) -> crate::pyramid::PyramidTree {
        build_oblique_tree(QuantileGrid::new(levels.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn reparam_roundtrip_examples() {
        // T=2, Q=(1,3), c=4 -> theta = (ln 2, ln 8)
        let theta = reparam_forward(&[1.0, 3.0], 4.0).unwrap();
        assert!((theta[0] - 2.0f64.ln()).abs() < 1e-14);
        assert!((theta[1] - 8.0f64.ln()).abs() < 1e-14);
        let back = reparam_inverse(&theta, 4.0);
        assert!((back[0] - 1.0).abs() < 1e-12);
        assert!((back[1] - 3.0).abs() < 1e-12);

        // T=1 degenerate case
        let theta = reparam_forward(&[0.7], 0.5).unwrap();
        assert!((theta[0] - (2.0 * 0.7 + 0.5f64).ln()).abs() < 1e-14);
        let back = reparam_inverse(&theta, 0.5);
        assert!((back[0] - 0.7).abs() < 1e-12);

        // non-monotone input is an error
        assert!(reparam_forward(&[1.0, 0.5], 4.0).is_err());
    }

    proptest::proptest! {
        /// forward then inverse is the identity to 1e-10 for any monotone
        /// vector and any admissible offset.
        #[test]
        fn prop_reparam_roundtrip(
            raw in proptest::collection::vec(-5.0f64..5.0, 1..9),
            extra in 0.01f64..10.0,
        ) {
            let mut v = raw;
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for i in 1..v.len() {
                if v[i] - v[i - 1] < 1e-6 {
                    v[i] = v[i - 1] + 1e-6;
                }
            }
            let c = 2.0 * v.iter().fold(f64::INFINITY, |a, &b| a.min(b)).abs() + extra;
            let theta = reparam_forward(&v, c).unwrap();
            let back = reparam_inverse(&theta, c);
            for (a, b) in v.iter().zip(&back) {
                proptest::prop_assert!((a - b).abs() < 1e-10, "{:?} -> {:?}", v, back);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = McmcConfig::default();
        assert!(c.validate().is_ok());
        c.burn_in = c.iterations;
        assert!(c.validate().is_err());
        let c = McmcConfig {
            thin: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = McmcConfig {
            mu_scale: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn initialize_state_matches_moments_p0() {
        // symmetric standard-normal-ish data, P=0
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..4000)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let data = Dataset::from_raw(y, vec![vec![]; 4000], vec![]).unwrap();
        let model = QuantileModel::linear(
            &data,
            tree(&[0.25, 0.5, 0.75]),
            CenteringKind::Normal,
            Hyperpriors::default(),
        );
        let st = initialize_state(&model).unwrap();
        assert!(st.centering[0].mu.abs() < 0.1);
        assert!((st.centering[0].sigma - 1.0).abs() < 0.1);
        // quantiles at the centering quantiles
        let want = CenteringDistribution::normal(st.centering[0].mu, st.centering[0].sigma)
            .unwrap()
            .quantile(0.25)
            .unwrap();
        assert!((st.sites[0].values[0] - want).abs() < 1e-12);
        assert!(model.log_posterior(&st).is_finite());
    }

    #[test]
    fn initialization_error_when_no_feasible_state_exists() {
        // Uniform centering needs responses in (0,1); data outside make
        // every candidate state infeasible.
        let y = vec![5.0, 6.0, 7.0, 8.0];
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let data = Dataset::from_raw(y, x, vec!["x".into()]).unwrap();
        let model = QuantileModel::linear(
            &data,
            tree(&[0.5]),
            CenteringKind::Uniform,
            Hyperpriors::default(),
        );
        match initialize_state(&model) {
            Err(crate::PqrError::Initialization(_)) => {}
            other => panic!("expected initialization error, got {other:?}"),
        }
    }

    #[test]
    fn initialize_state_survives_outliers() {
        let mut y = vec![0.0, 0.1, -0.2, 0.4, -0.3, 0.2, 0.05, -0.15];
        y.push(1e4); // one extreme outlier
        let x: Vec<Vec<f64>> = (0..y.len()).map(|i| vec![i as f64]).collect();
        let data = Dataset::from_raw(y, x, vec!["x".into()]).unwrap();
        let model = QuantileModel::linear(
            &data,
            tree(&[0.1, 0.5, 0.9]),
            CenteringKind::Normal,
            Hyperpriors::default(),
        );
        let st = initialize_state(&model).unwrap();
        assert!(model.log_posterior(&st).is_finite());
    }

    #[test]
    fn seed_determinism_bitwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| r[0] * 2.0 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let data = Dataset::from_raw(y, x, vec!["x".into()]).unwrap();
        let model = QuantileModel::linear(
            &data,
            tree(&[0.25, 0.5, 0.75]),
            CenteringKind::Normal,
            Hyperpriors::default(),
        );
        let config = McmcConfig {
            iterations: 600,
            burn_in: 100,
            thin: 5,
            seed: 99,
            ..Default::default()
        };
        let a = run_chain(&model, Some(&data.frame), &config).unwrap();
        let b = run_chain(&model, Some(&data.frame), &config).unwrap();
        assert_eq!(a.len(), b.len());
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa, sb);
        }
        assert_eq!(a.log_posterior, b.log_posterior);
    }

    #[test]
    fn prior_recovery_coordinate_uniform_t1() {
        // N=0, T=1, P=0, fixed centering: the chain must reproduce the
        // analytic transformed prior. KS at the 0.1% level on thinned draws.
        let t1 = tree(&[0.5]);
        let (a_par, b_par) = (t1.nodes[0].alpha, t1.nodes[0].beta);
        let model =
            QuantileModel::prior_only(1, t1, CenteringKind::Normal, Hyperpriors::default());
        let config = McmcConfig {
            iterations: 205_000,
            burn_in: 5_000,
            thin: 10,
            seed: 7,
            fix_centering: true,
            mode: Some(SamplerMode::CoordinateUniform),
            ..Default::default()
        };
        let samples = run_chain(&model, None, &config).unwrap();
        let mut draws: Vec<f64> = samples.states.iter().map(|s| s.sites[0].values[0]).collect();
        assert_eq!(draws.len(), 20_000);
        let cdf = |y: f64| crate::special::beta_cdf(crate::special::norm_cdf(y), a_par, b_par);
        let ks = ks_statistic(&mut draws, &cdf);
        let crit = ks_critical(draws.len(), 0.001);
        assert!(ks < crit, "KS {ks} >= {crit}");
    }

    #[test]
    fn prior_recovery_bounded_intervals_t2_uniform_centering() {
        // Uniform centering keeps every proposal interval finite, so the
        // interval-length correction is genuinely exercised; compare the
        // chain against direct pyramid draws.
        let t2 = tree(&[0.3, 0.7]);
        let model = QuantileModel::prior_only(
            1,
            t2.clone(),
            CenteringKind::Uniform,
            Hyperpriors::default(),
        );
        let config = McmcConfig {
            iterations: 105_000,
            burn_in: 5_000,
            thin: 10,
            seed: 21,
            fix_centering: true,
            mode: Some(SamplerMode::CoordinateUniform),
            ..Default::default()
        };
        let samples = run_chain(&model, None, &config).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for level in 0..2 {
            let mut chain_draws: Vec<f64> = samples
                .states
                .iter()
                .map(|s| s.sites[0].values[level])
                .collect();
            let mut direct: Vec<f64> = (0..20_000)
                .map(|_| crate::pyramid::sample_unit_pyramid(&t2, &mut rng).values[level])
                .collect();
            let ks = ks_two_sample(&mut chain_draws, &mut direct);
            let crit = ks_two_sample_critical(chain_draws.len(), direct.len(), 0.001);
            assert!(ks < crit, "level {level}: KS {ks} >= {crit}");
        }
    }

    #[test]
    fn prior_recovery_reparam_t1() {
        // Same analytic target through the reparametrized sampler.
        let t1 = tree(&[0.5]);
        let (a_par, b_par) = (t1.nodes[0].alpha, t1.nodes[0].beta);
        let model =
            QuantileModel::prior_only(1, t1, CenteringKind::Normal, Hyperpriors::default());
        let config = McmcConfig {
            iterations: 205_000,
            burn_in: 5_000,
            thin: 10,
            seed: 13,
            fix_centering: true,
            ..Default::default()
        };
        let samples = run_chain_reparam(&model, None, &config).unwrap();
        let mut draws: Vec<f64> = samples.states.iter().map(|s| s.sites[0].values[0]).collect();
        let cdf = |y: f64| crate::special::beta_cdf(crate::special::norm_cdf(y), a_par, b_par);
        let ks = ks_statistic(&mut draws, &cdf);
        let crit = ks_critical(draws.len(), 0.001);
        assert!(ks < crit, "KS {ks} >= {crit}");
    }

    #[test]
    fn zero_data_chain_medians_match_direct_prior_draws() {
        // With no data the posterior is the prior: chain medians of the
        // transformed quantiles equal direct-draw medians within MC error.
        let t = tree(&[0.25, 0.5, 0.75]);
        let model = QuantileModel::prior_only(
            1,
            t.clone(),
            CenteringKind::Normal,
            Hyperpriors::default(),
        );
        let config = McmcConfig {
            iterations: 55_000,
            burn_in: 5_000,
            thin: 5,
            seed: 3,
            fix_centering: true,
            mode: Some(SamplerMode::CoordinateUniform),
            ..Default::default()
        };
        let samples = run_chain(&model, None, &config).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let d = CenteringDistribution::normal(0.0, 1.0).unwrap();
        for level in 0..3 {
            let mut chain: Vec<f64> = samples
                .states
                .iter()
                .map(|s| s.sites[0].values[level])
                .collect();
            chain.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut direct: Vec<f64> = (0..20_000)
                .map(|_| {
                    crate::centering::transform_unit(
                        &d,
                        &crate::pyramid::sample_unit_pyramid(&t, &mut rng),
                    )
                    .values[level]
                })
                .collect();
            direct.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cm = sample_quantile(&chain, 0.5);
            let dm = sample_quantile(&direct, 0.5);
            assert!((cm - dm).abs() < 0.05, "level {level}: {cm} vs {dm}");
        }
    }

    #[test]
    fn summarize_examples() {
        // constant chain collapses the interval
        let constant = PosteriorSamples {
            levels: vec![0.5],
            states: vec![],
            log_posterior: vec![],
            acceptance: vec![],
            beta: Some(vec![vec![vec![2.5; 40]]]),
        };
        let rows = summarize(&constant, 0.90).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].lower, 2.5);
        assert_eq!(rows[0].upper, 2.5);
        assert_eq!(rows[0].median, 2.5);

        // 10^4 standard normal pseudo-samples: 90% interval ~ (-1.645, 1.645)
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let trace: Vec<f64> = (0..10_000)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let ps = PosteriorSamples {
            levels: vec![0.5],
            states: vec![],
            log_posterior: vec![],
            acceptance: vec![],
            beta: Some(vec![vec![trace]]),
        };
        let rows = summarize(&ps, 0.90).unwrap();
        assert!((rows[0].lower + 1.645).abs() < 0.05, "{:?}", rows[0]);
        assert!((rows[0].upper - 1.645).abs() < 0.05, "{:?}", rows[0]);

        // empty chain errors
        let empty = PosteriorSamples {
            levels: vec![0.5],
            states: vec![],
            log_posterior: vec![],
            acceptance: vec![],
            beta: None,
        };
        assert!(summarize(&empty, 0.90).is_err());
    }

    #[test]
    fn cached_posterior_matches_fresh_recomputation() {
        // The incremental likelihood must agree with a from-scratch
        // evaluation on every stored state, in both modes and all
        // centering families.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(55);
        let x: Vec<Vec<f64>> = (0..80)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| r[0] - 0.5 * r[1] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let data = Dataset::from_raw(y, x, vec!["a".into(), "b".into()]).unwrap();
        for mode in [SamplerMode::CoordinateUniform, SamplerMode::ReparamBlock] {
            let model = QuantileModel::linear(
                &data,
                tree(&[0.2, 0.5, 0.8]),
                CenteringKind::Normal,
                Hyperpriors::default(),
            );
            let config = McmcConfig {
                iterations: 400,
                burn_in: 100,
                thin: 7,
                seed: 3,
                mode: Some(mode),
                ..Default::default()
            };
            let samples = run_chain(&model, Some(&data.frame), &config).unwrap();
            for (st, &lp) in samples.states.iter().zip(&samples.log_posterior) {
                let fresh = model.log_posterior(st);
                assert!(
                    (fresh - lp).abs() < 1e-8 * lp.abs().max(1.0),
                    "{mode:?}: cached {lp} vs fresh {fresh}"
                );
            }
        }

        // GPD exceedance model exercises the support bookkeeping.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(56);
        let x: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| {
                let u: f64 = rng.gen_range(0.0..1.0f64);
                let sigma = 2.0 + 0.5 * r[0];
                // GPD(0, sigma, 0.2) sample above threshold 5
                5.0 + sigma * ((1.0 - u).powf(-0.2) - 1.0) / 0.2
            })
            .collect();
        let data = Dataset::from_raw(y, x, vec!["x".into()]).unwrap();
        let model = QuantileModel::linear(
            &data,
            tree(&[0.25, 0.5, 0.75]),
            CenteringKind::Gpd { threshold: 5.0 },
            Hyperpriors::default(),
        );
        let config = McmcConfig {
            iterations: 400,
            burn_in: 100,
            thin: 7,
            seed: 4,
            ..Default::default()
        };
        let samples = run_chain(&model, Some(&data.frame), &config).unwrap();
        assert!(!samples.is_empty());
        for (st, &lp) in samples.states.iter().zip(&samples.log_posterior) {
            let fresh = model.log_posterior(st);
            assert!(
                (fresh - lp).abs() < 1e-8 * lp.abs().max(1.0),
                "gpd: cached {lp} vs fresh {fresh}"
            );
        }
    }

    #[test]
    fn rhat_near_one_for_iid_and_large_for_shifted() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let r = rhat(&[a.clone(), b.clone()]);
        assert!((r - 1.0).abs() < 0.02, "rhat {r}");
        let shifted: Vec<f64> = b.iter().map(|x| x + 5.0).collect();
        assert!(rhat(&[a, shifted]) > 2.0);
    }

    use rand::SeedableRng;
    use rand_distr::StandardNormal;
}
