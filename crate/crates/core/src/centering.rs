//! Centering distributions and the change of variables that turns a
//! Uniform-centred pyramid into a prior over response-scale quantiles.
//!
//! Each distribution is used through its quantile/cdf/density triple. The
//! GPD branches use log1p/expm1 so the shape parameter can pass through
//! zero without cancellation; below |xi| = 1e-8 the exponential limit takes
//! over.

use crate::error::{PqrError, Result};
use crate::pyramid::{unit_prior_logdensity, PyramidTree, UnitQuantileVector};
use crate::special::{log_norm_pdf, norm_cdf, norm_quantile};

const XI_EPS: f64 = 1e-8;

/// Quantile function / cdf / density triple used to centre a pyramid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CenteringDistribution {
    /// Identity centering on (0, 1).
    Uniform,
    Normal {
        mu: f64,
        sigma: f64,
    },
    /// Generalized Pareto with fixed lower endpoint `mu` (the threshold).
    Gpd {
        mu: f64,
        sigma: f64,
        xi: f64,
    },
}

/// Strictly increasing quantile values on the response scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotQuantileVector {
    pub values: Vec<f64>,
}

impl CenteringDistribution {
    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(PqrError::InvalidInput(format!(
                "normal centering needs finite mu and sigma > 0, got ({mu}, {sigma})"
            )));
        }
        Ok(Self::Normal { mu, sigma })
    }

    pub fn gpd(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() || !xi.is_finite() {
            return Err(PqrError::InvalidInput(format!(
                "gpd centering needs finite parameters and sigma > 0, got ({mu}, {sigma}, {xi})"
            )));
        }
        Ok(Self::Gpd { mu, sigma, xi })
    }

    /// Support interval (lower, upper); infinities where unbounded.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Self::Uniform => (0.0, 1.0),
            Self::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Self::Gpd { mu, sigma, xi } => {
                if xi < -XI_EPS {
                    (mu, mu - sigma / xi)
                } else {
                    (mu, f64::INFINITY)
                }
            }
        }
    }

    /// Quantile function at tau in (0, 1).
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(PqrError::InvalidInput(format!(
                "quantile level {tau} outside (0, 1)"
            )));
        }
        Ok(self.quantile_unchecked(tau))
    }

    pub(crate) fn quantile_unchecked(&self, tau: f64) -> f64 {
        match *self {
            Self::Uniform => tau,
            Self::Normal { mu, sigma } => mu + sigma * norm_quantile(tau),
            Self::Gpd { mu, sigma, xi } => {
                // (1-tau)^{-xi} - 1 = expm1(-xi * ln(1-tau))
                let l = (-tau).ln_1p();
                if xi.abs() < XI_EPS {
                    mu - sigma * l
                } else {
                    mu + sigma * (-xi * l).exp_m1() / xi
                }
            }
        }
    }

    /// Distribution function; clamps to {0, 1} outside the support.
    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            Self::Uniform => y.clamp(0.0, 1.0),
            Self::Normal { mu, sigma } => norm_cdf((y - mu) / sigma),
            Self::Gpd { mu, sigma, xi } => {
                let z = (y - mu) / sigma;
                if z <= 0.0 {
                    return 0.0;
                }
                if xi.abs() < XI_EPS {
                    -(-z).exp_m1()
                } else {
                    let arg = xi * z;
                    if arg <= -1.0 {
                        return 1.0;
                    }
                    -(-arg.ln_1p() / xi).exp_m1()
                }
            }
        }
    }

    /// Density; zero outside the support.
    pub fn density(&self, y: f64) -> f64 {
        let ld = self.log_density(y);
        if ld == f64::NEG_INFINITY {
            0.0
        } else {
            ld.exp()
        }
    }

    /// ln P(Y > y), exact in the far tail for the GPD.
    fn log_sf(&self, y: f64) -> f64 {
        match *self {
            Self::Uniform => {
                let s = 1.0 - y.clamp(0.0, 1.0);
                if s > 0.0 {
                    s.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::Normal { mu, sigma } => crate::special::log_norm_sf((y - mu) / sigma),
            Self::Gpd { mu, sigma, xi } => {
                let z = (y - mu) / sigma;
                if z <= 0.0 {
                    return 0.0;
                }
                if xi.abs() < XI_EPS {
                    -z
                } else {
                    let arg = xi * z;
                    if arg <= -1.0 {
                        return f64::NEG_INFINITY;
                    }
                    -arg.ln_1p() / xi
                }
            }
        }
    }

    /// ln P(a < Y <= b); endpoints may be infinite. Stable when the whole
    /// interval sits in a far tail where the linear cdf difference
    /// underflows.
    pub fn log_interval_prob(&self, a: f64, b: f64) -> f64 {
        if !(a < b) {
            return f64::NEG_INFINITY;
        }
        match *self {
            Self::Normal { mu, sigma } => {
                let za = if a == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    (a - mu) / sigma
                };
                let zb = if b == f64::INFINITY {
                    f64::INFINITY
                } else {
                    (b - mu) / sigma
                };
                if za == f64::NEG_INFINITY && zb == f64::INFINITY {
                    0.0
                } else if za == f64::NEG_INFINITY {
                    crate::special::log_norm_cdf(zb)
                } else if zb == f64::INFINITY {
                    crate::special::log_norm_sf(za)
                } else {
                    crate::special::log_norm_interval_prob(za, zb)
                }
            }
            _ => {
                // sf is exactly representable for the Uniform and the GPD.
                let lsa = self.log_sf(a); // 0.0 when a is below the support
                let lsb = self.log_sf(b);
                if lsb == f64::NEG_INFINITY {
                    return lsa;
                }
                let d = lsb - lsa;
                if d >= 0.0 {
                    return f64::NEG_INFINITY;
                }
                lsa + (-d.exp()).ln_1p()
            }
        }
    }

    /// Log density; -inf outside the support.
    pub fn log_density(&self, y: f64) -> f64 {
        match *self {
            Self::Uniform => {
                if y > 0.0 && y < 1.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::Normal { mu, sigma } => log_norm_pdf((y - mu) / sigma) - sigma.ln(),
            Self::Gpd { mu, sigma, xi } => {
                let z = (y - mu) / sigma;
                if z < 0.0 {
                    return f64::NEG_INFINITY;
                }
                if xi.abs() < XI_EPS {
                    -z - sigma.ln()
                } else {
                    let arg = xi * z;
                    if arg <= -1.0 {
                        return f64::NEG_INFINITY;
                    }
                    -(1.0 / xi + 1.0) * arg.ln_1p() - sigma.ln()
                }
            }
        }
    }
}

/// Map a unit pyramid draw through the centering quantile function.
pub fn transform_unit(dist: &CenteringDistribution, q: &UnitQuantileVector) -> PivotQuantileVector {
    PivotQuantileVector {
        values: q
            .values
            .iter()
            .map(|&u| dist.quantile_unchecked(u))
            .collect(),
    }
}

/// Log density of the transformed pyramid prior at response-scale quantiles
/// `values`: the unit prior evaluated at the cdf-image plus the
/// change-of-variables Jacobian, one centering density factor per node.
/// Returns -inf for non-monotone input or values outside the open support.
pub fn transformed_prior_logdensity(
    tree: &PyramidTree,
    dist: &CenteringDistribution,
    values: &[f64],
) -> f64 {
    let (lo, hi) = dist.support();
    let mut unit = Vec::with_capacity(values.len());
    let mut jacobian = 0.0;
    for &v in values {
        if !(v > lo && v < hi) {
            return f64::NEG_INFINITY;
        }
        let u = dist.cdf(v);
        if !(u > 0.0 && u < 1.0) {
            return f64::NEG_INFINITY;
        }
        unit.push(u);
        jacobian += dist.log_density(v);
    }
    let base = unit_prior_logdensity(tree, &unit);
    if base == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    base + jacobian
}
