//! Quantile pyramid trees over an arbitrary grid of quantile levels.
//!
//! A pyramid draws the quantile at the middle grid level first, then
//! recursively fills the left and right sublists, each new quantile being a
//! Beta-weighted convex combination of its nearest previously-drawn
//! neighbours (with the interval endpoints acting as fixed boundaries).
//! On the regular dyadic grid this reduces to the classic construction; on
//! an irregular grid the Beta means are tilted so the process stays centred
//! on the Uniform distribution.

use crate::error::{PqrError, Result};
use crate::special::beta_log_pdf;
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// Ordered quantile levels, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(PqrError::InvalidInput("quantile grid is empty".into()));
        }
        for w in levels.windows(2) {
            if !(w[0] < w[1]) {
                return Err(PqrError::InvalidInput(format!(
                    "quantile levels must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for &t in &levels {
            if !(t > 0.0 && t < 1.0) || !t.is_finite() {
                return Err(PqrError::InvalidInput(format!(
                    "quantile level {t} outside the open unit interval"
                )));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// One random quantile of the pyramid: its grid slot, recursion depth and
/// the nearest ancestors that bracket it at generation time.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidNode {
    /// Index into the grid this node generates.
    pub grid_index: usize,
    /// Recursion depth m, root = 1.
    pub depth: usize,
    /// Level tau_mj.
    pub level: f64,
    /// Grid index of the left ancestor; `None` means the fixed boundary at 0.
    pub left_ancestor: Option<usize>,
    /// Grid index of the right ancestor; `None` means the fixed boundary at 1.
    pub right_ancestor: Option<usize>,
    /// Left/right ancestor levels (0 and 1 at the boundaries).
    pub left_level: f64,
    pub right_level: f64,
    /// Beta splitting parameters.
    pub alpha: f64,
    pub beta: f64,
}

/// Relative position of the node's level between its ancestors' levels;
/// this is the mean the Beta splitting variable must have for the pyramid
/// to stay centred on the Uniform distribution.
pub fn expected_split(node: &PyramidNode) -> f64 {
    (node.level - node.left_level) / (node.right_level - node.left_level)
}

/// Schedule for the dominant Beta parameter as a function of depth.
/// The default grows linearly (2m), shrinking the prior variance of deeper
/// splits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSchedule {
    pub per_depth: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self { per_depth: 2.0 }
    }
}

impl AlphaSchedule {
    fn base(&self, depth: usize) -> f64 {
        self.per_depth * depth as f64
    }
}

/// A fully-built pyramid: nodes stored in generation order (root first,
/// then each depth level left to right).
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidTree {
    pub grid: QuantileGrid,
    pub nodes: Vec<PyramidNode>,
    pub depth: usize,
}

/// Strictly increasing quantile values in (0, 1), aligned with a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitQuantileVector {
    pub values: Vec<f64>,
}

impl UnitQuantileVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(PqrError::InvalidInput("empty quantile vector".into()));
        }
        let mut prev = 0.0;
        for &v in &values {
            if !(v > prev && v < 1.0) {
                return Err(PqrError::InvalidInput(format!(
                    "unit quantile vector not strictly increasing inside (0,1) at {v}"
                )));
            }
            prev = v;
        }
        Ok(Self { values })
    }
}

/// Build the oblique pyramid for `grid`: the root takes the middle level
/// (the smaller of the two middles when a sublist has even length), then
/// recursion splits the left and right sublists. Beta parameters follow the
/// default depth schedule.
pub fn build_oblique_tree(grid: QuantileGrid) -> Result<PyramidTree> {
    build_oblique_tree_with(grid, AlphaSchedule::default())
}

pub fn build_oblique_tree_with(grid: QuantileGrid, schedule: AlphaSchedule) -> Result<PyramidTree> {
    let mut raw = Vec::with_capacity(grid.len());
    split_sublist(grid.levels(), 0, grid.len(), None, None, 1, &mut raw);
    // Generation order is breadth-first: all depth-m nodes before depth m+1,
    // left to right within a depth.
    raw.sort_by_key(|n: &PyramidNode| (n.depth, n.grid_index));
    let depth = raw.iter().map(|n| n.depth).max().unwrap_or(0);
    let tree = PyramidTree {
        grid,
        nodes: raw,
        depth,
    };
    Ok(assign_beta_params(tree, schedule))
}

fn split_sublist(
    levels: &[f64],
    lo: usize,
    hi: usize, // exclusive
    left_anc: Option<usize>,
    right_anc: Option<usize>,
    depth: usize,
    out: &mut Vec<PyramidNode>,
) {
    if lo >= hi {
        return;
    }
    let mid = lo + (hi - lo - 1) / 2; // smaller middle for even-length sublists
    out.push(PyramidNode {
        grid_index: mid,
        depth,
        level: levels[mid],
        left_ancestor: left_anc,
        right_ancestor: right_anc,
        left_level: left_anc.map_or(0.0, |i| levels[i]),
        right_level: right_anc.map_or(1.0, |i| levels[i]),
        alpha: f64::NAN,
        beta: f64::NAN,
    });
    split_sublist(levels, lo, mid, left_anc, Some(mid), depth + 1, out);
    split_sublist(levels, mid + 1, hi, Some(mid), right_anc, depth + 1, out);
}

/// (Re)assign Beta splitting parameters so each node's Beta mean equals its
/// expected split exactly: the depth schedule fixes the smaller parameter,
/// the other follows from the mean constraint.
pub fn assign_beta_params(mut tree: PyramidTree, schedule: AlphaSchedule) -> PyramidTree {
    for node in &mut tree.nodes {
        let e = expected_split(node);
        let base = schedule.base(node.depth);
        if e < 0.5 {
            node.alpha = base;
            node.beta = base * (1.0 - e) / e;
        } else {
            node.beta = base;
            node.alpha = base * e / (1.0 - e);
        }
    }
    tree
}

/// Draw one quantile vector from the pyramid prior.
pub fn sample_unit_pyramid<R: Rng + ?Sized>(tree: &PyramidTree, rng: &mut R) -> UnitQuantileVector {
    let mut values = vec![f64::NAN; tree.grid.len()];
    for node in &tree.nodes {
        let q_l = node.left_ancestor.map_or(0.0, |i| values[i]);
        let q_r = node.right_ancestor.map_or(1.0, |i| values[i]);
        let beta = Beta::new(node.alpha, node.beta).expect("valid beta parameters");
        // Boundary draws have probability zero but would break strict
        // monotonicity; resample on underflow.
        let mut q = f64::NAN;
        for _ in 0..64 {
            let v: f64 = beta.sample(rng);
            let cand = q_l * (1.0 - v) + q_r * v;
            if cand > q_l && cand < q_r {
                q = cand;
                break;
            }
        }
        assert!(q.is_finite(), "beta sampling kept hitting the boundary");
        values[node.grid_index] = q;
    }
    UnitQuantileVector { values }
}

/// Joint log density of the pyramid prior at `values` (aligned with the
/// grid). Returns -inf whenever any implied splitting variable leaves the
/// open unit interval, which is exactly a violation of strict monotonicity.
pub fn unit_prior_logdensity(tree: &PyramidTree, values: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), tree.grid.len());
    let mut total = 0.0;
    for node in &tree.nodes {
        let q_l = node.left_ancestor.map_or(0.0, |i| values[i]);
        let q_r = node.right_ancestor.map_or(1.0, |i| values[i]);
        let span = q_r - q_l;
        if !(span > 0.0) {
            return f64::NEG_INFINITY;
        }
        let v = (values[node.grid_index] - q_l) / span;
        if !(v > 0.0 && v < 1.0) {
            return f64::NEG_INFINITY;
        }
        total += beta_log_pdf(v, node.alpha, node.beta) - span.ln();
    }
    total
}
