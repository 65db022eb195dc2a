//! Convex-hull machinery and the non-crossing proposal bounds.
//!
//! The quantile planes are pinned at P+1 pivotal hull vertices; every other
//! hull vertex contributes one linear constraint per quantile coordinate.
//! Solving the plane equation for a single coordinate against its level
//! neighbours at a vertex gives a closed-form interval, and intersecting
//! those intervals over all vertices (plus the pivot's own monotonicity
//! window) yields the exact set of values that keep every hull-vertex
//! quantile vector strictly monotone.

use crate::error::{PqrError, Result};
use crate::model::{linear_weights, CenteringKind, RegressionState};
use crate::simplex::in_convex_hull;

/// Hull vertices in pivot coordinates, with the pivotal ones flagged.
#[derive(Debug, Clone)]
pub struct HullVertexSet {
    pub vertices: Vec<Vec<f64>>,
    pub pivotal: Vec<bool>,
}

impl HullVertexSet {
    /// Weight rows (over sites) of the non-pivotal vertices.
    pub fn nonpivotal_weights(&self) -> Vec<Vec<f64>> {
        self.vertices
            .iter()
            .zip(&self.pivotal)
            .filter(|(_, &p)| !p)
            .map(|(v, _)| linear_weights(v))
            .collect()
    }
}

/// One coordinate's proposal interval in response units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalBounds {
    pub lower: f64,
    pub upper: f64,
}

// ---------------------------------------------------------------------------
// hull vertex enumeration (raw covariate space)
// ---------------------------------------------------------------------------

/// Vertices of the covariate hull. P=1 uses the interval endpoints, P=2 a
/// monotone chain, P=3 exact vertex filtering via hull-membership LPs.
/// Above P=3 the hull is replaced by the covariate bounding box (2^P
/// corners); the flag in the result reports that fallback.
pub fn hull_vertices_raw(points: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, bool)> {
    let p = points[0].len();
    let mut unique: Vec<Vec<f64>> = Vec::new();
    for pt in points {
        if !unique.iter().any(|u| u == pt) {
            unique.push(pt.clone());
        }
    }
    if unique.len() < 2 {
        return Err(PqrError::DegenerateData(
            "all covariate rows are identical".into(),
        ));
    }
    match p {
        1 => {
            let mut lo = points[0][0];
            let mut hi = points[0][0];
            for pt in points {
                lo = lo.min(pt[0]);
                hi = hi.max(pt[0]);
            }
            Ok((vec![vec![lo], vec![hi]], false))
        }
        2 => Ok((monotone_chain(&unique), false)),
        3 => {
            // Vertex-ness is affine-invariant; run the membership LPs in
            // range-normalized coordinates so the tolerances are scale-free.
            let mut lo = unique[0].clone();
            let mut hi = unique[0].clone();
            for pt in &unique {
                for j in 0..3 {
                    lo[j] = lo[j].min(pt[j]);
                    hi[j] = hi[j].max(pt[j]);
                }
            }
            let norm: Vec<Vec<f64>> = unique
                .iter()
                .map(|pt| {
                    (0..3)
                        .map(|j| {
                            let r = hi[j] - lo[j];
                            if r > 0.0 {
                                (pt[j] - lo[j]) / r
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
            let mut vertices = Vec::new();
            for (i, pt) in norm.iter().enumerate() {
                let others: Vec<&[f64]> = norm
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, v)| v.as_slice())
                    .collect();
                if !in_convex_hull(pt, &others, 1e-9)? {
                    vertices.push(unique[i].clone());
                }
            }
            if vertices.len() < 4 {
                return Err(PqrError::DegenerateData(
                    "3-d covariates lie in a lower-dimensional subspace".into(),
                ));
            }
            Ok((vertices, false))
        }
        _ if p <= 10 => Ok((bounding_box_corners(points)?, true)),
        _ => Err(PqrError::InvalidInput(format!(
            "covariate dimension {p} exceeds the supported maximum of 10"
        ))),
    }
}

/// Andrew's monotone chain; strict turns only, so collinear boundary points
/// are not reported as vertices.
fn monotone_chain(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|v| (v[0], v[1])).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    // tolerance scaled by the coordinate spread, treating near-collinear
    // triples as collinear
    let scale: f64 = pts
        .iter()
        .map(|p| p.0.abs().max(p.1.abs()))
        .fold(0.0, f64::max)
        .max(1e-30);
    let eps = 1e-12 * scale * scale;
    let build = |iter: &mut dyn Iterator<Item = (f64, f64)>| -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for p in iter {
            while out.len() >= 2 && cross(out[out.len() - 2], out[out.len() - 1], p) <= eps {
                out.pop();
            }
            out.push(p);
        }
        out
    };
    let lower = build(&mut pts.iter().copied());
    let upper = build(&mut pts.iter().rev().copied());
    let mut hull: Vec<(f64, f64)> = lower[..lower.len() - 1]
        .iter()
        .chain(upper[..upper.len() - 1].iter())
        .copied()
        .collect();
    if hull.is_empty() {
        // fully collinear input; keep the two extremes
        hull = vec![pts[0], pts[pts.len() - 1]];
    }
    hull.into_iter().map(|(x, y)| vec![x, y]).collect()
}

fn bounding_box_corners(points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let p = points[0].len();
    let mut lo = points[0].clone();
    let mut hi = points[0].clone();
    for pt in points {
        for j in 0..p {
            lo[j] = lo[j].min(pt[j]);
            hi[j] = hi[j].max(pt[j]);
        }
    }
    for j in 0..p {
        if !(hi[j] > lo[j]) {
            return Err(PqrError::DegenerateData(format!(
                "covariate column {j} is constant"
            )));
        }
    }
    let mut corners = Vec::with_capacity(1 << p);
    for mask in 0..(1usize << p) {
        let corner: Vec<f64> = (0..p)
            .map(|j| if mask >> j & 1 == 1 { hi[j] } else { lo[j] })
            .collect();
        corners.push(corner);
    }
    Ok(corners)
}

// ---------------------------------------------------------------------------
// pivot selection
// ---------------------------------------------------------------------------

/// Choose P+1 well-separated, affinely independent hull vertices: greedy
/// farthest-point traversal in range-normalized coordinates, seeded at the
/// lexicographically smallest vertex.
pub fn select_pivots(vertices: &[Vec<f64>], dim: usize) -> Result<Vec<usize>> {
    let p = dim;
    if vertices.len() < p + 1 {
        return Err(PqrError::DegenerateData(format!(
            "{} hull vertices cannot support {} pivots",
            vertices.len(),
            p + 1
        )));
    }
    // normalize each coordinate by its range over the vertex set
    let mut lo = vertices[0].clone();
    let mut hi = vertices[0].clone();
    for v in vertices {
        for j in 0..p {
            lo[j] = lo[j].min(v[j]);
            hi[j] = hi[j].max(v[j]);
        }
    }
    let norm: Vec<Vec<f64>> = vertices
        .iter()
        .map(|v| {
            (0..p)
                .map(|j| {
                    let r = hi[j] - lo[j];
                    if r > 0.0 {
                        (v[j] - lo[j]) / r
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let lex_less = |a: &[f64], b: &[f64]| -> bool {
        for (x, y) in a.iter().zip(b) {
            if x < y {
                return true;
            }
            if x > y {
                return false;
            }
        }
        false
    };
    let seed = (0..vertices.len())
        .min_by(|&a, &b| {
            if lex_less(&vertices[a], &vertices[b]) {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Greater
            }
        })
        .unwrap();

    let mut chosen = vec![seed];
    // orthonormal basis of the span of (chosen - seed), in normalized coords
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while chosen.len() < p + 1 {
        let mut best: Option<(usize, f64)> = None;
        for cand in 0..vertices.len() {
            if chosen.contains(&cand) {
                continue;
            }
            // affine independence: residual after projecting onto the basis
            let mut resid: Vec<f64> = (0..p)
                .map(|j| norm[cand][j] - norm[seed][j])
                .collect();
            for b in &basis {
                let dot: f64 = resid.iter().zip(b).map(|(r, bb)| r * bb).sum();
                for (r, bb) in resid.iter_mut().zip(b) {
                    *r -= dot * bb;
                }
            }
            let rnorm = resid.iter().map(|r| r * r).sum::<f64>().sqrt();
            if rnorm < 1e-7 {
                continue;
            }
            let min_dist = chosen
                .iter()
                .map(|&c| {
                    norm[cand]
                        .iter()
                        .zip(&norm[c])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((bi, bd)) => {
                    min_dist > bd + 1e-12
                        || ((min_dist - bd).abs() <= 1e-12
                            && lex_less(&vertices[cand], &vertices[bi]))
                }
            };
            if better {
                best = Some((cand, min_dist));
            }
        }
        let Some((idx, _)) = best else {
            return Err(PqrError::DegenerateData(
                "hull vertices are affinely dependent; covariates lie in a lower-dimensional subspace"
                    .into(),
            ));
        };
        // extend the orthonormal basis with the accepted direction
        let mut v: Vec<f64> = (0..p).map(|j| norm[idx][j] - norm[seed][j]).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(r, bb)| r * bb).sum();
            for (r, bb) in v.iter_mut().zip(b) {
                *r -= dot * bb;
            }
        }
        let nv = v.iter().map(|r| r * r).sum::<f64>().sqrt();
        for r in v.iter_mut() {
            *r /= nv;
        }
        basis.push(v);
        chosen.push(idx);
    }
    Ok(chosen)
}

// ---------------------------------------------------------------------------
// non-crossing bounds
// ---------------------------------------------------------------------------

fn support_at(
    kind: &CenteringKind,
    state: &RegressionState,
    weights: &[f64],
) -> (f64, f64) {
    let c = state.blend_centering(weights);
    kind.dist(&c).support()
}

/// Interval for coordinate (site, level) implied by non-crossing at a single
/// constraint point given as site weights. Infinite bounds are legitimate.
pub fn vertex_bounds_weights(
    state: &RegressionState,
    kind: &CenteringKind,
    levels: usize,
    weights: &[f64],
    site: usize,
    level: usize,
) -> ProposalBounds {
    let e_s = weights[site];
    if e_s.abs() < 1e-14 {
        return ProposalBounds {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        };
    }
    let full: f64 = weights
        .iter()
        .zip(&state.sites)
        .map(|(w, s)| w * s.values[level])
        .sum();
    let rest = full - e_s * state.sites[site].values[level];
    let (supp_lo, supp_hi) = support_at(kind, state, weights);
    let lower_nb = if level == 0 {
        supp_lo
    } else {
        weights
            .iter()
            .zip(&state.sites)
            .map(|(w, s)| w * s.values[level - 1])
            .sum()
    };
    let upper_nb = if level + 1 == levels {
        supp_hi
    } else {
        weights
            .iter()
            .zip(&state.sites)
            .map(|(w, s)| w * s.values[level + 1])
            .sum()
    };
    let a = (lower_nb - rest) / e_s;
    let b = (upper_nb - rest) / e_s;
    if e_s > 0.0 {
        ProposalBounds { lower: a, upper: b }
    } else {
        ProposalBounds { lower: b, upper: a }
    }
}

/// Spec-level form: the constraint point given in pivot coordinates.
pub fn vertex_bounds(
    state: &RegressionState,
    kind: &CenteringKind,
    levels: usize,
    x_e: &[f64],
    site: usize,
    level: usize,
) -> ProposalBounds {
    vertex_bounds_weights(state, kind, levels, &linear_weights(x_e), site, level)
}

/// Intersection of the pivot's own monotonicity window with every
/// non-pivotal vertex constraint: the exact feasible interval for the
/// coordinate with everything else held fixed. An empty interval means the
/// current state itself is infeasible, which is a logic error.
pub fn combined_bounds(
    state: &RegressionState,
    kind: &CenteringKind,
    levels: usize,
    vertex_weight_rows: &[Vec<f64>],
    site: usize,
    level: usize,
) -> Result<ProposalBounds> {
    let own = &state.sites[site].values;
    let (supp_lo, supp_hi) = {
        let c = &state.centering[site];
        kind.dist(c).support()
    };
    let mut lower = if level == 0 { supp_lo } else { own[level - 1] };
    let mut upper = if level + 1 == levels {
        supp_hi
    } else {
        own[level + 1]
    };
    for row in vertex_weight_rows {
        let b = vertex_bounds_weights(state, kind, levels, row, site, level);
        lower = lower.max(b.lower);
        upper = upper.min(b.upper);
    }
    if !(lower < upper) {
        return Err(PqrError::Infeasible(format!(
            "empty proposal interval for site {site} level {level}: [{lower}, {upper}]"
        )));
    }
    Ok(ProposalBounds { lower, upper })
}

/// Matrix-form bounds: identical mathematics, but the vertex quantiles at
/// the three relevant levels are taken from a cached product
/// `vq[c][t] = sum_s e_cs Q^s_t` instead of being re-accumulated. Used by
/// the sampler, which maintains `vq` incrementally.
#[allow(clippy::too_many_arguments)]
pub fn combined_bounds_cached(
    state: &RegressionState,
    kind: &CenteringKind,
    levels: usize,
    vertex_weight_rows: &[Vec<f64>],
    vq: &[Vec<f64>],
    site: usize,
    level: usize,
) -> Result<ProposalBounds> {
    let own = &state.sites[site].values;
    let (supp_lo, supp_hi) = {
        let c = &state.centering[site];
        kind.dist(c).support()
    };
    let mut lower = if level == 0 { supp_lo } else { own[level - 1] };
    let mut upper = if level + 1 == levels {
        supp_hi
    } else {
        own[level + 1]
    };
    for (row, vq_row) in vertex_weight_rows.iter().zip(vq) {
        let e_s = row[site];
        if e_s.abs() < 1e-14 {
            continue;
        }
        let rest = vq_row[level] - e_s * own[level];
        let (v_lo, v_hi) = support_at(kind, state, row);
        let lower_nb = if level == 0 { v_lo } else { vq_row[level - 1] };
        let upper_nb = if level + 1 == levels {
            v_hi
        } else {
            vq_row[level + 1]
        };
        let a = (lower_nb - rest) / e_s;
        let b = (upper_nb - rest) / e_s;
        let (l, u) = if e_s > 0.0 { (a, b) } else { (b, a) };
        lower = lower.max(l);
        upper = upper.min(u);
    }
    if !(lower < upper) {
        return Err(PqrError::Infeasible(format!(
            "empty proposal interval for site {site} level {level}: [{lower}, {upper}]"
        )));
    }
    Ok(ProposalBounds { lower, upper })
}
