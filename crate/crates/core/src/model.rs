//! The simultaneous linear quantile regression model: pivotal locations,
//! hyperplane quantile evaluation, the piecewise likelihood and the full
//! unnormalized posterior, plus the linear-spline variant.
//!
//! Everything is expressed through per-observation site weights. For the
//! linear model a covariate in pivot coordinates x contributes weights
//! (1 - sum x, x_1, ..., x_P) over the P+1 pivots; for splines the weights
//! are the usual piecewise-linear hat functions over the knots. All
//! conditional quantities (quantiles, centering parameters) are the
//! weighted combinations of the per-site values.

use crate::centering::{transformed_prior_logdensity, CenteringDistribution, PivotQuantileVector};
use crate::error::{PqrError, Result};
use crate::geometry::{self, HullVertexSet};
use crate::pyramid::PyramidTree;
use crate::special::gamma_log_pdf;

// ---------------------------------------------------------------------------
// pivot frame
// ---------------------------------------------------------------------------

/// Affine change of covariate coordinates placing the P+1 pivotal locations
/// at the origin and the unit vectors. Owns the bookkeeping for mapping
/// coefficients back to raw covariate units.
#[derive(Debug, Clone)]
pub struct PivotFrame {
    origin: Vec<f64>,
    /// Column p of B is (pivot_{p+1} - pivot_0), row-major P x P.
    basis: Vec<f64>,
    /// B^{-1}, row-major P x P.
    inverse: Vec<f64>,
    dim: usize,
}

impl PivotFrame {
    /// Build the frame from P+1 raw pivot locations (origin first).
    pub fn from_pivots(pivots: &[Vec<f64>]) -> Result<Self> {
        if pivots.is_empty() {
            return Err(PqrError::InvalidInput("no pivot locations".into()));
        }
        let dim = pivots.len() - 1;
        let origin = pivots[0].clone();
        let mut basis = vec![0.0; dim * dim];
        for p in 0..dim {
            for i in 0..dim {
                basis[i * dim + p] = pivots[p + 1][i] - origin[i];
            }
        }
        let inverse = invert(&basis, dim).ok_or_else(|| {
            PqrError::DegenerateData("pivot locations are affinely dependent".into())
        })?;
        Ok(Self {
            origin,
            basis,
            inverse,
            dim,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut basis = vec![0.0; dim * dim];
        for i in 0..dim {
            basis[i * dim + i] = 1.0;
        }
        Self {
            origin: vec![0.0; dim],
            basis: basis.clone(),
            inverse: basis,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn to_pivot(&self, raw: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| self.inverse[i * d + j] * (raw[j] - self.origin[j]))
                    .sum()
            })
            .collect()
    }

    pub fn to_raw(&self, pc: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                self.origin[i]
                    + (0..d)
                        .map(|j| self.basis[i * d + j] * pc[j])
                        .sum::<f64>()
            })
            .collect()
    }

    /// Raw-unit regression coefficients of the plane with value `q0` at the
    /// origin pivot and increments `deltas` at the unit pivots:
    /// beta_raw = B^{-T} deltas, beta0 = q0 - beta_raw . origin.
    pub fn raw_coefficients(&self, q0: f64, deltas: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim;
        let beta: Vec<f64> = (0..d)
            .map(|j| (0..d).map(|p| self.inverse[p * d + j] * deltas[p]).sum())
            .collect();
        let beta0 = q0
            - beta
                .iter()
                .zip(&self.origin)
                .map(|(b, o)| b * o)
                .sum::<f64>();
        (beta0, beta)
    }
}

fn invert(matrix: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut a = matrix.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        let scale: f64 = (0..n).map(|j| a[piv * n + j].abs()).sum::<f64>().max(1e-300);
        if a[piv * n + col].abs() < 1e-12 * scale {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
                inv.swap(col * n + j, piv * n + j);
            }
        }
        let d = a[col * n + col];
        for j in 0..n {
            a[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[r * n + j] -= f * a[col * n + j];
                inv[r * n + j] -= f * inv[col * n + j];
            }
        }
    }
    Some(inv)
}

/// Site weights of a pivot-coordinate location for the linear model.
pub fn linear_weights(x_pc: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(x_pc.len() + 1);
    w.push(1.0 - x_pc.iter().sum::<f64>());
    w.extend_from_slice(x_pc);
    w
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

/// Observed responses and covariates together with the pivot frame and the
/// hull vertex set derived from them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub responses: Vec<f64>,
    /// Raw covariate rows, N x P.
    pub covariates: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub frame: PivotFrame,
    /// Covariate rows in pivot coordinates.
    pub pivot_rows: Vec<Vec<f64>>,
    pub hull: HullVertexSet,
    /// True when the hull was replaced by the covariate bounding box.
    pub bbox_fallback: bool,
}

impl Dataset {
    pub fn from_raw(
        responses: Vec<f64>,
        covariates: Vec<Vec<f64>>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = responses.len();
        if n == 0 {
            return Err(PqrError::InvalidInput("no observations".into()));
        }
        if covariates.len() != n {
            return Err(PqrError::InvalidInput(
                "responses and covariates have different lengths".into(),
            ));
        }
        let p = covariates[0].len();
        for (i, row) in covariates.iter().enumerate() {
            if row.len() != p {
                return Err(PqrError::InvalidInput(format!(
                    "covariate row {i} has {} entries, expected {p}",
                    row.len()
                )));
            }
        }
        if p == 0 {
            // Intercept-only model: a single pivotal site.
            return Ok(Self {
                responses,
                covariates,
                names,
                frame: PivotFrame::identity(0),
                pivot_rows: vec![vec![]; n],
                hull: HullVertexSet {
                    vertices: vec![vec![]],
                    pivotal: vec![true],
                },
                bbox_fallback: false,
            });
        }

        let (vertices_raw, bbox_fallback) = geometry::hull_vertices_raw(&covariates)?;
        let pivot_idx = geometry::select_pivots(&vertices_raw, p)?;
        let pivots: Vec<Vec<f64>> = pivot_idx.iter().map(|&i| vertices_raw[i].clone()).collect();
        let frame = PivotFrame::from_pivots(&pivots)?;
        let mut pivotal = vec![false; vertices_raw.len()];
        for &i in &pivot_idx {
            pivotal[i] = true;
        }
        let hull = HullVertexSet {
            vertices: vertices_raw.iter().map(|v| frame.to_pivot(v)).collect(),
            pivotal,
        };
        let pivot_rows = covariates.iter().map(|r| frame.to_pivot(r)).collect();
        Ok(Self {
            responses,
            covariates,
            names,
            frame,
            pivot_rows,
            hull,
            bbox_fallback,
        })
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn dim(&self) -> usize {
        self.frame.dim()
    }
}

// ---------------------------------------------------------------------------
// regression state
// ---------------------------------------------------------------------------

/// Centering parameters attached to one site. `xi` is only meaningful in
/// GPD mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteringParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

/// Which family the centering distributions come from; the GPD location is
/// pinned to the exceedance threshold at every covariate value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CenteringKind {
    Uniform,
    Normal,
    Gpd { threshold: f64 },
}

impl CenteringKind {
    pub fn dist(&self, p: &CenteringParams) -> CenteringDistribution {
        match *self {
            Self::Uniform => CenteringDistribution::Uniform,
            Self::Normal => CenteringDistribution::Normal {
                mu: p.mu,
                sigma: p.sigma,
            },
            Self::Gpd { threshold } => CenteringDistribution::Gpd {
                mu: threshold,
                sigma: p.sigma,
                xi: p.xi,
            },
        }
    }

    pub fn has_mu(&self) -> bool {
        matches!(self, Self::Normal)
    }

    pub fn has_sigma(&self) -> bool {
        !matches!(self, Self::Uniform)
    }

    pub fn has_xi(&self) -> bool {
        matches!(self, Self::Gpd { .. })
    }
}

/// The full parameter vector: one quantile vector and one set of centering
/// parameters per site (pivots for the linear model, knots for splines).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionState {
    pub sites: Vec<PivotQuantileVector>,
    pub centering: Vec<CenteringParams>,
}

impl RegressionState {
    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    /// Centering parameters blended with `weights` (linear in x by
    /// construction).
    pub fn blend_centering(&self, weights: &[f64]) -> CenteringParams {
        let mut mu = 0.0;
        let mut sigma = 0.0;
        let mut xi = 0.0;
        for (w, c) in weights.iter().zip(&self.centering) {
            mu += w * c.mu;
            sigma += w * c.sigma;
            xi += w * c.xi;
        }
        CenteringParams { mu, sigma, xi }
    }

    /// Conditional quantiles at the location described by `weights`.
    pub fn blend_quantiles(&self, weights: &[f64]) -> Vec<f64> {
        let t_len = self.sites[0].values.len();
        let mut out = vec![0.0; t_len];
        for (w, site) in weights.iter().zip(&self.sites) {
            if *w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&site.values) {
                *o += w * v;
            }
        }
        out
    }
}

/// Conditional quantiles of the linear model at pivot coordinates `x`.
pub fn conditional_quantiles(state: &RegressionState, x_pc: &[f64]) -> Vec<f64> {
    state.blend_quantiles(&linear_weights(x_pc))
}

/// Regression coefficients at one quantile level, reported in raw covariate
/// units through the frame's inverse affine map. Returns (beta_0, beta).
pub fn coefficients(
    state: &RegressionState,
    frame: &PivotFrame,
    level_index: usize,
) -> (f64, Vec<f64>) {
    let q0 = state.sites[0].values[level_index];
    let deltas: Vec<f64> = state.sites[1..]
        .iter()
        .map(|s| s.values[level_index] - q0)
        .collect();
    frame.raw_coefficients(q0, &deltas)
}

/// Centering parameters of the conditional distribution at pivot
/// coordinates `x` (linear interpolation across pivots).
pub fn centering_plane(state: &RegressionState, x_pc: &[f64]) -> CenteringParams {
    state.blend_centering(&linear_weights(x_pc))
}

// ---------------------------------------------------------------------------
// piecewise likelihood
// ---------------------------------------------------------------------------

/// Log density of the piecewise-rescaled centering distribution with the
/// given conditional quantiles at levels `levels`. Non-monotone quantiles
/// and out-of-support observations yield -inf, never panics.
pub fn piecewise_log_density(
    levels: &[f64],
    quantiles: &[f64],
    dist: &CenteringDistribution,
    y: f64,
) -> f64 {
    let t_len = levels.len();
    debug_assert_eq!(quantiles.len(), t_len);
    for w in quantiles.windows(2) {
        if !(w[0] < w[1]) {
            return f64::NEG_INFINITY;
        }
    }
    // segment s: quantiles[s-1] < y <= quantiles[s]
    let s = quantiles.partition_point(|&q| q < y);
    let lo_q = if s == 0 {
        f64::NEG_INFINITY
    } else {
        quantiles[s - 1]
    };
    let hi_q = if s == t_len {
        f64::INFINITY
    } else {
        quantiles[s]
    };
    piecewise_log_density_segment(levels, t_len, s, lo_q, hi_q, dist, y)
}

/// Same density with the segment already located; used by the sampler's
/// incremental likelihood where monotonicity is maintained by construction.
pub(crate) fn piecewise_log_density_segment(
    levels: &[f64],
    t_len: usize,
    segment: usize,
    lo_q: f64,
    hi_q: f64,
    dist: &CenteringDistribution,
    y: f64,
) -> f64 {
    let base = dist.log_density(y);
    if base == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let lo_level = if segment == 0 { 0.0 } else { levels[segment - 1] };
    let hi_level = if segment == t_len { 1.0 } else { levels[segment] };
    let denom = dist.log_interval_prob(lo_q, hi_q);
    if denom == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    (hi_level - lo_level).ln() + base - denom
}

/// Distribution function implied by [`piecewise_log_density`]; equals the
/// grid level exactly at each conditional quantile.
pub fn piecewise_cdf(
    levels: &[f64],
    quantiles: &[f64],
    dist: &CenteringDistribution,
    y: f64,
) -> f64 {
    let t_len = levels.len();
    let s = quantiles.partition_point(|&q| q < y);
    let lo_level = if s == 0 { 0.0 } else { levels[s - 1] };
    let hi_level = if s == t_len { 1.0 } else { levels[s] };
    let lo_f = if s == 0 { 0.0 } else { dist.cdf(quantiles[s - 1]) };
    let hi_f = if s == t_len { 1.0 } else { dist.cdf(quantiles[s]) };
    let fy = dist.cdf(y);
    if hi_f <= lo_f {
        return lo_level;
    }
    lo_level + (hi_level - lo_level) * ((fy - lo_f) / (hi_f - lo_f)).clamp(0.0, 1.0)
}

/// Log likelihood of a single observation under the linear model.
pub fn loglik_single(
    state: &RegressionState,
    kind: &CenteringKind,
    levels: &[f64],
    x_pc: &[f64],
    y: f64,
) -> f64 {
    let w = linear_weights(x_pc);
    let q = state.blend_quantiles(&w);
    let c = state.blend_centering(&w);
    if kind.has_sigma() && !(c.sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    piecewise_log_density(levels, &q, &kind.dist(&c), y)
}

// ---------------------------------------------------------------------------
// hyperpriors
// ---------------------------------------------------------------------------

/// Hyperpriors on the per-site centering parameters.
#[derive(Debug, Clone, Copy)]
pub struct Hyperpriors {
    /// Normal prior on mu: mean and variance.
    pub mu_mean: f64,
    pub mu_var: f64,
    /// Gamma prior on sigma: shape and rate.
    pub sigma_shape: f64,
    pub sigma_rate: f64,
    /// Truncated-normal prior on the GPD shape.
    pub xi_sd: f64,
    pub xi_lo: f64,
    pub xi_hi: f64,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Self {
            mu_mean: 0.0,
            mu_var: 20.0,
            sigma_shape: 0.001,
            sigma_rate: 0.001,
            xi_sd: 1.0,
            xi_lo: -0.5,
            xi_hi: 1.0,
        }
    }
}

impl Hyperpriors {
    pub fn log_mu(&self, mu: f64) -> f64 {
        let z = (mu - self.mu_mean) / self.mu_var.sqrt();
        -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI * self.mu_var).ln()
    }

    pub fn log_sigma(&self, sigma: f64) -> f64 {
        gamma_log_pdf(sigma, self.sigma_shape, self.sigma_rate)
    }

    pub fn log_xi(&self, xi: f64) -> f64 {
        if xi <= self.xi_lo || xi >= self.xi_hi {
            return f64::NEG_INFINITY;
        }
        let z = xi / self.xi_sd;
        // The truncation constant is state-independent.
        let mass = crate::special::norm_cdf(self.xi_hi / self.xi_sd)
            - crate::special::norm_cdf(self.xi_lo / self.xi_sd);
        -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - self.xi_sd.ln() - mass.ln()
    }
}

// ---------------------------------------------------------------------------
// the assembled model
// ---------------------------------------------------------------------------

/// Everything the posterior needs: the pyramid prior, the centering family,
/// the observations as site-weight rows, and the non-pivotal constraint
/// points where non-crossing must be verified.
#[derive(Debug, Clone)]
pub struct QuantileModel {
    pub tree: PyramidTree,
    pub kind: CenteringKind,
    pub hyper: Hyperpriors,
    pub responses: Vec<f64>,
    /// N x S site weights of the observations.
    pub data_weights: Vec<Vec<f64>>,
    /// Non-pivotal constraint points as S-weight rows.
    pub vertex_weights: Vec<Vec<f64>>,
    pub site_count: usize,
    /// For the linear model, weight index 0 is the redundant barycentric
    /// coordinate; initialization distances then use indices 1.. (the pivot
    /// coordinates). Spline weights have no redundant component.
    pub(crate) redundant_first_weight: bool,
}

impl QuantileModel {
    pub fn linear(
        data: &Dataset,
        tree: PyramidTree,
        kind: CenteringKind,
        hyper: Hyperpriors,
    ) -> Self {
        let data_weights = data.pivot_rows.iter().map(|x| linear_weights(x)).collect();
        let vertex_weights = data
            .hull
            .vertices
            .iter()
            .zip(&data.hull.pivotal)
            .filter(|(_, &piv)| !piv)
            .map(|(v, _)| linear_weights(v))
            .collect();
        Self {
            tree,
            kind,
            hyper,
            responses: data.responses.clone(),
            data_weights,
            vertex_weights,
            site_count: data.dim() + 1,
            redundant_first_weight: true,
        }
    }

    /// Spline model over scalar covariates: one site per knot, hat-function
    /// weights, and no extra constraint points (monotonicity at the knots
    /// is enough for a piecewise-linear family).
    pub fn spline(
        x: &[f64],
        responses: Vec<f64>,
        knots: &[f64],
        tree: PyramidTree,
        kind: CenteringKind,
        hyper: Hyperpriors,
    ) -> Result<Self> {
        let data_weights = x
            .iter()
            .map(|&xi| spline_weights(knots, xi))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tree,
            kind,
            hyper,
            responses,
            data_weights,
            vertex_weights: Vec::new(),
            site_count: knots.len(),
            redundant_first_weight: false,
        })
    }

    /// A model with no observations; the posterior is the prior.
    pub fn prior_only(
        site_count: usize,
        tree: PyramidTree,
        kind: CenteringKind,
        hyper: Hyperpriors,
    ) -> Self {
        Self {
            tree,
            kind,
            hyper,
            responses: Vec::new(),
            data_weights: Vec::new(),
            vertex_weights: Vec::new(),
            site_count,
            redundant_first_weight: false,
        }
    }

    pub fn levels(&self) -> &[f64] {
        self.tree.grid.levels()
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    /// Log likelihood of the full sample; -inf on any infeasibility.
    pub fn loglik(&self, state: &RegressionState) -> f64 {
        let levels = self.tree.grid.levels();
        let mut total = 0.0;
        for (w, &y) in self.data_weights.iter().zip(&self.responses) {
            let q = state.blend_quantiles(w);
            let c = state.blend_centering(w);
            if self.kind.has_sigma() && !(c.sigma > 0.0) {
                return f64::NEG_INFINITY;
            }
            let ll = piecewise_log_density(levels, &q, &self.kind.dist(&c), y);
            if ll == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            total += ll;
        }
        total
    }

    /// Transformed pyramid prior of one site's quantile vector.
    pub fn site_prior(&self, state: &RegressionState, site: usize) -> f64 {
        let c = &state.centering[site];
        if self.kind.has_sigma() && !(c.sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        transformed_prior_logdensity(
            &self.tree,
            &self.kind.dist(c),
            &state.sites[site].values,
        )
    }

    /// Hyperprior of one site's centering parameters.
    pub fn site_hyper(&self, state: &RegressionState, site: usize) -> f64 {
        let c = &state.centering[site];
        let mut total = 0.0;
        if self.kind.has_mu() {
            total += self.hyper.log_mu(c.mu);
        }
        if self.kind.has_sigma() {
            total += self.hyper.log_sigma(c.sigma);
        }
        if self.kind.has_xi() {
            total += self.hyper.log_xi(c.xi);
        }
        total
    }

    /// Non-crossing, positive scale and support containment at every
    /// non-pivotal constraint point.
    pub fn vertices_feasible(&self, state: &RegressionState) -> bool {
        for e in &self.vertex_weights {
            if !self.vertex_row_feasible(state, e) {
                return false;
            }
        }
        true
    }

    pub(crate) fn vertex_row_feasible(&self, state: &RegressionState, e: &[f64]) -> bool {
        let c = state.blend_centering(e);
        if self.kind.has_sigma() && !(c.sigma > 0.0) {
            return false;
        }
        let q = state.blend_quantiles(e);
        for w in q.windows(2) {
            if !(w[0] < w[1]) {
                return false;
            }
        }
        let (lo, hi) = self.kind.dist(&c).support();
        q[0] > lo && q[q.len() - 1] < hi
    }

    /// The full unnormalized log posterior. All constraint violations
    /// surface as -inf.
    pub fn log_posterior(&self, state: &RegressionState) -> f64 {
        if !self.vertices_feasible(state) {
            return f64::NEG_INFINITY;
        }
        let mut total = 0.0;
        for s in 0..self.site_count {
            let p = self.site_prior(state, s);
            if p == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            total += p + self.site_hyper(state, s);
        }
        let ll = self.loglik(state);
        if ll == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        total + ll
    }
}

/// Free-function form of the posterior, mirroring the model assembly.
pub fn log_posterior(model: &QuantileModel, state: &RegressionState) -> f64 {
    model.log_posterior(state)
}

// ---------------------------------------------------------------------------
// linear splines
// ---------------------------------------------------------------------------

/// A fitted piecewise-linear quantile model: one quantile vector per knot.
#[derive(Debug, Clone)]
pub struct SplineModel {
    pub knots: Vec<f64>,
    pub pivots: Vec<PivotQuantileVector>,
}

impl SplineModel {
    /// Quantile vector at `x` by linear interpolation between the two
    /// bracketing knots.
    pub fn quantiles_at(&self, x: f64) -> Result<Vec<f64>> {
        let w = spline_weights(&self.knots, x)?;
        let t_len = self.pivots[0].values.len();
        let mut out = vec![0.0; t_len];
        for (wk, p) in w.iter().zip(&self.pivots) {
            if *wk == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&p.values) {
                *o += wk * v;
            }
        }
        Ok(out)
    }
}

/// Hat-function weights of `x` over the knot grid; errors outside the span.
pub fn spline_weights(knots: &[f64], x: f64) -> Result<Vec<f64>> {
    let k = knots.len();
    if k < 2 {
        return Err(PqrError::InvalidInput("need at least two knots".into()));
    }
    if x < knots[0] || x > knots[k - 1] {
        return Err(PqrError::InvalidInput(format!(
            "x = {x} outside the knot span [{}, {}]",
            knots[0],
            knots[k - 1]
        )));
    }
    let mut w = vec![0.0; k];
    // j: largest index with knots[j] <= x, capped so j+1 exists.
    let j = match knots.partition_point(|&kx| kx <= x) {
        0 => 0,
        v => (v - 1).min(k - 2),
    };
    let span = knots[j + 1] - knots[j];
    let t = (x - knots[j]) / span;
    w[j] = 1.0 - t;
    w[j + 1] = t;
    Ok(w)
}

/// Equally spaced knots covering [lo, hi].
pub fn equally_spaced_knots(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 || !(hi > lo) {
        return Err(PqrError::InvalidInput(
            "need at least two knots over a non-empty range".into(),
        ));
    }
    let step = (hi - lo) / (count - 1) as f64;
    Ok((0..count)
        .map(|i| {
            if i == count - 1 {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::{build_oblique_tree, QuantileGrid};
    use crate::test_support::adaptive_simpson;

    fn tree(levels: &[f64]) -> PyramidTree {
        build_oblique_tree(QuantileGrid::new(levels.to_vec()).unwrap()).unwrap()
    }

    fn q(values: &[f64]) -> PivotQuantileVector {
        PivotQuantileVector {
            values: values.to_vec(),
        }
    }

    fn cp(mu: f64, sigma: f64) -> CenteringParams {
        CenteringParams { mu, sigma, xi: 0.0 }
    }

    #[test]
    fn frame_roundtrip_and_coefficients() {
        // P=1 scaling frame: x_raw = 2 x_pc - 1
        let frame = PivotFrame::from_pivots(&[vec![-1.0], vec![1.0]]).unwrap();
        assert!((frame.to_pivot(&[0.0])[0] - 0.5).abs() < 1e-14);
        assert!((frame.to_raw(&[0.25])[0] + 0.5).abs() < 1e-14);
        // chain rule: beta_raw = (Q1 - Q0) / 2
        let (b0, b) = frame.raw_coefficients(1.0, &[3.0]);
        assert!((b[0] - 1.5).abs() < 1e-14);
        assert!((b0 - (1.0 + 1.5)).abs() < 1e-14);

        // P=2 generic frame roundtrips
        let frame =
            PivotFrame::from_pivots(&[vec![0.3, -0.4], vec![1.7, 0.1], vec![-0.2, 1.9]]).unwrap();
        for raw in [[0.5, 0.5], [-0.1, 1.2], [0.3, -0.4]] {
            let back = frame.to_raw(&frame.to_pivot(&raw));
            assert!((back[0] - raw[0]).abs() < 1e-12);
            assert!((back[1] - raw[1]).abs() < 1e-12);
        }

        // Degenerate pivots rejected.
        assert!(PivotFrame::from_pivots(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).is_err());
    }

    #[test]
    fn conditional_quantile_examples() {
        let state = RegressionState {
            sites: vec![q(&[1.0]), q(&[3.0]), q(&[0.0])],
            centering: vec![cp(0.0, 1.0); 3],
        };
        // at the origin pivot
        assert_eq!(conditional_quantiles(&state, &[0.0, 0.0]), vec![1.0]);
        // P=2 plane: 1 + 2*0.5 + (-1)*0.5 = 1.5
        let got = conditional_quantiles(&state, &[0.5, 0.5]);
        assert!((got[0] - 1.5).abs() < 1e-14);

        // P=1 midpoint of a line
        let s1 = RegressionState {
            sites: vec![q(&[0.0]), q(&[2.0])],
            centering: vec![cp(0.0, 1.0); 2],
        };
        assert!((conditional_quantiles(&s1, &[0.5])[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn plane_property_affine_in_x() {
        let state = RegressionState {
            sites: vec![q(&[0.0, 1.0]), q(&[2.0, 5.0]), q(&[-1.0, 0.5])],
            centering: vec![cp(0.0, 1.0); 3],
        };
        let xa = [0.3, -0.2];
        let xb = [-0.6, 0.9];
        for lam in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let mid: Vec<f64> = xa
                .iter()
                .zip(&xb)
                .map(|(a, b)| lam * a + (1.0 - lam) * b)
                .collect();
            let qm = conditional_quantiles(&state, &mid);
            let qa = conditional_quantiles(&state, &xa);
            let qb = conditional_quantiles(&state, &xb);
            for t in 0..2 {
                let want = lam * qa[t] + (1.0 - lam) * qb[t];
                assert!((qm[t] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coefficient_examples() {
        // identity frame: beta0 = Q0, beta1 = Q1 - Q0
        let state = RegressionState {
            sites: vec![q(&[0.0]), q(&[2.0])],
            centering: vec![cp(0.0, 1.0); 2],
        };
        let (b0, b) = coefficients(&state, &PivotFrame::identity(1), 0);
        assert_eq!((b0, b[0]), (0.0, 2.0));

        // all pivots equal -> zero slopes
        let flat = RegressionState {
            sites: vec![q(&[1.3]), q(&[1.3]), q(&[1.3])],
            centering: vec![cp(0.0, 1.0); 3],
        };
        let (b0, b) = coefficients(&flat, &PivotFrame::identity(2), 0);
        assert!((b0 - 1.3).abs() < 1e-14);
        assert!(b.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn centering_plane_examples() {
        let state = RegressionState {
            sites: vec![q(&[0.0]), q(&[1.0])],
            centering: vec![cp(0.0, 1.0), cp(4.0, 1.0)],
        };
        let c = centering_plane(&state, &[0.25]);
        assert!((c.mu - 1.0).abs() < 1e-14);
        let c0 = centering_plane(&state, &[0.0]);
        assert_eq!((c0.mu, c0.sigma), (0.0, 1.0));

        let s2 = RegressionState {
            sites: vec![q(&[0.0]), q(&[1.0]), q(&[2.0])],
            centering: vec![cp(0.0, 1.0); 3],
        };
        for x in [[0.2, 0.3], [-1.0, 0.5], [0.9, -0.4]] {
            assert!((centering_plane(&s2, &x).sigma - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn loglik_single_examples() {
        let kind = CenteringKind::Normal;
        // T=1, quantile at the centering median: density is exactly normal.
        let state = RegressionState {
            sites: vec![q(&[0.0])],
            centering: vec![cp(0.0, 1.0)],
        };
        for y in [-2.0, -0.3, 0.0, 1.7] {
            let got = loglik_single(&state, &kind, &[0.5], &[], y);
            let want = crate::special::log_norm_pdf(y);
            assert!((got - want).abs() < 1e-11, "y={y}: {got} vs {want}");
        }

        // quantiles equal to the centering quantiles at every level
        let levels = [0.1, 0.35, 0.5, 0.82, 0.95];
        let dist = CenteringDistribution::normal(0.7, 1.9).unwrap();
        let qv: Vec<f64> = levels.iter().map(|&t| dist.quantile(t).unwrap()).collect();
        let state = RegressionState {
            sites: vec![q(&qv)],
            centering: vec![cp(0.7, 1.9)],
        };
        for y in [-3.0, 0.1, 0.7, 2.5, 9.0] {
            let got = loglik_single(&state, &kind, &levels, &[], y);
            let want = dist.log_density(y);
            assert!((got - want).abs() < 1e-9, "y={y}: {got} vs {want}");
        }

        // T=1, tau=0.5, Q=1, y=0: 0.5 phi(0) / Phi(1)
        let state = RegressionState {
            sites: vec![q(&[1.0])],
            centering: vec![cp(0.0, 1.0)],
        };
        let got = loglik_single(&state, &kind, &[0.5], &[], 0.0);
        let want = (0.5 * crate::special::norm_pdf(0.0) / crate::special::norm_cdf(1.0)).ln();
        assert!((got - want).abs() < 1e-12);
        assert!((got.exp() - 0.23707).abs() < 5e-5);
    }

    #[test]
    fn loglik_nonmonotone_is_neg_inf() {
        let got = piecewise_log_density(
            &[0.25, 0.5],
            &[1.0, 0.5],
            &CenteringDistribution::normal(0.0, 1.0).unwrap(),
            0.3,
        );
        assert_eq!(got, f64::NEG_INFINITY);
    }

    #[test]
    fn piecewise_density_normalizes_and_cdf_is_exact() {
        let levels = [0.2, 0.5, 0.9];
        let dist = CenteringDistribution::normal(0.5, 1.3).unwrap();
        let quantiles = [-1.0, 0.2, 2.4];
        // quadrature over a wide finite range + analytic tail bound
        let f = |y: f64| piecewise_log_density(&levels, &quantiles, &dist, y).exp();
        let total = adaptive_simpson(&f, -40.0 * 1.3 + 0.5, 40.0 * 1.3 + 0.5, 1e-10);
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");

        for (t, &qt) in quantiles.iter().enumerate() {
            let got = piecewise_cdf(&levels, &quantiles, &dist, qt);
            assert!(
                (got - levels[t]).abs() < 1e-10,
                "cdf at quantile {t}: {got}"
            );
        }
    }

    #[test]
    fn piecewise_density_normalizes_for_gpd_and_uniform() {
        use crate::test_support::adaptive_simpson;
        let levels = [0.3, 0.6, 0.9];

        let gpd = CenteringDistribution::gpd(5.0, 2.0, 0.2).unwrap();
        let quantiles = [5.8, 7.0, 10.5];
        let f = |y: f64| piecewise_log_density(&levels, &quantiles, &gpd, y).exp();
        // numerical upper cutoff where the survival mass is below 1e-12
        let hi = gpd.quantile(1.0 - 1e-13).unwrap();
        let mut cuts = vec![5.0 + 1e-12];
        cuts.extend_from_slice(&quantiles);
        cuts.push(hi);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            total += adaptive_simpson(&f, w[0], w[1], 1e-9);
        }
        assert!((total - 1.0).abs() < 1e-6, "gpd integral {total}");

        let uni = CenteringDistribution::Uniform;
        let quantiles = [0.2, 0.5, 0.8];
        let f = |y: f64| piecewise_log_density(&levels, &quantiles, &uni, y).exp();
        let mut total = 0.0;
        for w in [(1e-15, 0.2), (0.2, 0.5), (0.5, 0.8), (0.8, 1.0 - 1e-15)] {
            total += adaptive_simpson(&f, w.0, w.1, 1e-9);
        }
        assert!((total - 1.0).abs() < 1e-6, "uniform integral {total}");
        // the histogram density is mass/width on each cell
        let d = piecewise_log_density(&levels, &quantiles, &uni, 0.35).exp();
        assert!((d - 0.3 / 0.3).abs() < 1e-12);
        let d = piecewise_log_density(&levels, &quantiles, &uni, 0.1).exp();
        assert!((d - 0.3 / 0.2).abs() < 1e-12);
    }

    #[test]
    fn spline_model_likelihood_interpolates_quantiles_and_centering() {
        // At x midway between knots the likelihood must equal the piecewise
        // density with hat-blended quantiles and centering parameters.
        let knots = [0.0, 1.0, 2.0];
        let levels = [0.25, 0.5, 0.75];
        let model = QuantileModel::spline(
            &[0.5],
            vec![0.3],
            &knots,
            crate::pyramid::build_oblique_tree(
                crate::pyramid::QuantileGrid::new(levels.to_vec()).unwrap(),
            )
            .unwrap(),
            CenteringKind::Normal,
            Hyperpriors::default(),
        )
        .unwrap();
        let state = RegressionState {
            sites: vec![
                q(&[-1.0, 0.0, 1.0]),
                q(&[-0.5, 0.6, 1.7]),
                q(&[0.0, 1.0, 2.0]),
            ],
            centering: vec![cp(0.0, 1.0), cp(0.5, 2.0), cp(1.0, 1.5)],
        };
        let got = model.loglik(&state);
        let blended_q: Vec<f64> = (0..3)
            .map(|t| 0.5 * state.sites[0].values[t] + 0.5 * state.sites[1].values[t])
            .collect();
        let dist = CenteringDistribution::normal(0.25, 1.5).unwrap();
        let want = piecewise_log_density(&levels, &blended_q, &dist, 0.3);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn piecewise_density_survives_far_tail_quantiles() {
        // Segment probabilities that underflow linearly must still give a
        // finite log density via the log-scale fallback.
        let levels = [0.2, 0.8];
        let dist = CenteringDistribution::normal(0.0, 1.0).unwrap();
        let quantiles = [38.0, 40.0];
        let ll = piecewise_log_density(&levels, &quantiles, &dist, 39.0);
        assert!(ll.is_finite(), "got {ll}");
    }

    #[test]
    fn log_posterior_composition_and_sentinels() {
        let t1 = tree(&[0.5]);
        let kind = CenteringKind::Normal;
        let hyper = Hyperpriors::default();
        // N=1 single-site model at the origin.
        let model = QuantileModel {
            tree: t1.clone(),
            kind,
            hyper,
            responses: vec![0.0],
            data_weights: vec![vec![1.0]],
            vertex_weights: vec![],
            site_count: 1,
            redundant_first_weight: false,
        };
        let state = RegressionState {
            sites: vec![q(&[1.0])],
            centering: vec![cp(0.0, 1.0)],
        };
        let got = model.log_posterior(&state);
        let want = model.loglik(&state) + model.site_prior(&state, 0) + model.site_hyper(&state, 0);
        assert!((got - want).abs() < 1e-12);
        assert!(got.is_finite());

        // N=0: prior + hyperprior only
        let m0 = QuantileModel::prior_only(1, t1.clone(), kind, hyper);
        let got0 = m0.log_posterior(&state);
        assert!((got0 - (m0.site_prior(&state, 0) + m0.site_hyper(&state, 0))).abs() < 1e-12);

        // monotonicity violation -> -inf
        let bad = RegressionState {
            sites: vec![q(&[0.9, 0.1])],
            centering: vec![cp(0.0, 1.0)],
        };
        let m2 = QuantileModel::prior_only(1, tree(&[0.3, 0.7]), kind, hyper);
        assert_eq!(m2.log_posterior(&bad), f64::NEG_INFINITY);

        // sigma <= 0 -> -inf
        let bad_sigma = RegressionState {
            sites: vec![q(&[0.0])],
            centering: vec![CenteringParams {
                mu: 0.0,
                sigma: -1.0,
                xi: 0.0,
            }],
        };
        assert_eq!(m0.log_posterior(&bad_sigma), f64::NEG_INFINITY);
    }

    #[test]
    fn log_posterior_vanishes_as_sigma_shrinks() {
        let t = tree(&[0.25, 0.5, 0.75]);
        let model = QuantileModel::prior_only(1, t, CenteringKind::Normal, Hyperpriors::default());
        let state0 = RegressionState {
            sites: vec![q(&[-0.6744897501960817, 0.0, 0.6744897501960817])],
            centering: vec![cp(0.0, 1.0)],
        };
        let mut prev = model.log_posterior(&state0);
        assert!(prev.is_finite());
        for sigma in [0.3, 0.1, 0.03, 0.01, 0.003] {
            let state = RegressionState {
                centering: vec![cp(0.0, sigma)],
                ..state0.clone()
            };
            let lp = model.log_posterior(&state);
            // strictly decreasing until the transformed prior underflows to -inf
            assert!(
                lp < prev || (lp == f64::NEG_INFINITY && prev == f64::NEG_INFINITY),
                "sigma={sigma}: {lp} !< {prev}"
            );
            prev = lp;
        }
        assert!(prev < -1e3);
    }

    #[test]
    fn spline_examples() {
        let knots = equally_spaced_knots(0.0, 6.0, 7).unwrap();
        assert_eq!(knots, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(equally_spaced_knots(0.0, 0.0, 7).is_err());

        let model = SplineModel {
            knots: vec![0.0, 1.0],
            pivots: vec![q(&[0.0]), q(&[10.0])],
        };
        assert!((model.quantiles_at(0.5).unwrap()[0] - 5.0).abs() < 1e-14);
        assert_eq!(model.quantiles_at(0.0).unwrap()[0], 0.0);
        assert_eq!(model.quantiles_at(1.0).unwrap()[0], 10.0);
        assert!(model.quantiles_at(1.5).is_err());
        assert!(model.quantiles_at(-0.1).is_err());
    }

    #[test]
    fn spline_continuous_across_knots() {
        let knots = equally_spaced_knots(-2.0, 3.0, 6).unwrap();
        let pivots: Vec<PivotQuantileVector> = (0..6)
            .map(|j| q(&[j as f64 * 0.3 - 1.0, j as f64 * 0.3]))
            .collect();
        let model = SplineModel {
            knots: knots.clone(),
            pivots,
        };
        for &k in &knots[1..5] {
            let below = model.quantiles_at(k - 1e-9).unwrap();
            let above = model.quantiles_at(k + 1e-9).unwrap();
            for (a, b) in below.iter().zip(&above) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dataset_intercept_only_and_linear() {
        let d = Dataset::from_raw(vec![1.0, 2.0, 3.0], vec![vec![], vec![], vec![]], vec![])
            .unwrap();
        assert_eq!(d.dim(), 0);
        assert_eq!(d.hull.vertices.len(), 1);

        let x: Vec<Vec<f64>> = vec![vec![0.2], vec![0.9], vec![0.5], vec![0.0]];
        let d = Dataset::from_raw(vec![0.0; 4], x, vec!["x".into()]).unwrap();
        assert_eq!(d.dim(), 1);
        // endpoints become the pivots, so the hull has no extra vertices
        assert_eq!(d.hull.vertices.len(), 2);
        assert!(d.hull.pivotal.iter().all(|&p| p));
        // pivot coordinates of the endpoints are 0 and 1
        let coords: Vec<f64> = d.pivot_rows.iter().map(|r| r[0]).collect();
        assert!(coords.iter().all(|&c| (-1e-12..=1.0 + 1e-12).contains(&c)));
    }
}
