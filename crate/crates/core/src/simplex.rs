//! Dense primal simplex for the small equality-form linear programs used in
//! this crate: the check-loss regression LP and convex-hull membership
//! tests. Bland's rule throughout, so the iteration always terminates.

use crate::error::{PqrError, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

/// minimize c'x  subject to  A x = b, x >= 0, with `b >= 0` and `basis`
/// naming one column per row whose sub-matrix is the identity.
pub(crate) struct Tableau {
    pub m: usize,
    pub n: usize,
    /// Row-major m x n constraint matrix.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub basis: Vec<usize>,
}

impl Tableau {
    fn pivot(&mut self, r: usize, s: usize) {
        let piv = self.a[r * self.n + s];
        let inv = 1.0 / piv;
        for j in 0..self.n {
            self.a[r * self.n + j] *= inv;
        }
        self.b[r] *= inv;
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.a[i * self.n + s];
            if f == 0.0 {
                continue;
            }
            for j in 0..self.n {
                self.a[i * self.n + j] -= f * self.a[r * self.n + j];
            }
            self.b[i] -= f * self.b[r];
        }
        self.basis[r] = s;
    }

    /// Run the primal simplex to optimality. Returns the objective value.
    pub fn solve(&mut self, max_iter: usize) -> Result<f64> {
        for _ in 0..max_iter {
            // Reduced costs from the basis multipliers: y solves y_r = c_B
            // after elimination, but with an explicit identity basis kept in
            // the tableau we can price directly: rc_j = c_j - sum_i c_{B_i} a_ij.
            let mut entering = None;
            for j in 0..self.n {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut rc = self.c[j];
                for i in 0..self.m {
                    let a_ij = self.a[i * self.n + j];
                    if a_ij != 0.0 {
                        rc -= self.c[self.basis[i]] * a_ij;
                    }
                }
                if rc < -COST_TOL {
                    entering = Some(j); // Bland: first improving index
                    break;
                }
            }
            let Some(s) = entering else {
                let obj = (0..self.m).map(|i| self.c[self.basis[i]] * self.b[i]).sum();
                return Ok(obj);
            };
            // Ratio test with Bland tie-breaking on the basis index.
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a_is = self.a[i * self.n + s];
                if a_is > PIVOT_TOL {
                    let ratio = self.b[i] / a_is;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - PIVOT_TOL
                                || ((ratio - lr).abs() <= PIVOT_TOL
                                    && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(PqrError::LinearProgram("unbounded objective".into()));
            };
            self.pivot(r, s);
        }
        Err(PqrError::LinearProgram("iteration limit reached".into()))
    }

    pub fn primal_solution(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (i, &j) in self.basis.iter().enumerate() {
            x[j] = self.b[i];
        }
        x
    }
}

/// Exact check-loss minimizer: fits `beta` (intercept first) minimizing
/// sum_i rho_tau(y_i - x_i' beta) through the standard primal LP
///
///   min tau 1'u + (1-tau) 1'v   s.t.   X b+ - X b- + u - v = y.
///
/// The initial basis is feasible by construction (u_i or v_i per row), so a
/// single simplex phase suffices.
pub fn checkloss_fit(rows: &[Vec<f64>], y: &[f64], tau: f64) -> Result<Vec<f64>> {
    let n_obs = y.len();
    if n_obs == 0 || rows.len() != n_obs {
        return Err(PqrError::InvalidInput(
            "check-loss fit needs matching non-empty rows and responses".into(),
        ));
    }
    let k = rows[0].len();
    if !(tau > 0.0 && tau < 1.0) {
        return Err(PqrError::InvalidInput(format!("tau {tau} outside (0,1)")));
    }
    let n_vars = 2 * k + 2 * n_obs;
    let mut a = vec![0.0; n_obs * n_vars];
    let mut b = vec![0.0; n_obs];
    let mut c = vec![0.0; n_vars];
    let mut basis = vec![0usize; n_obs];
    for i in 0..n_obs {
        let flip = if y[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..k {
            a[i * n_vars + j] = flip * rows[i][j];
            a[i * n_vars + k + j] = -flip * rows[i][j];
        }
        a[i * n_vars + 2 * k + i] = flip; // u_i
        a[i * n_vars + 2 * k + n_obs + i] = -flip; // v_i
        b[i] = flip * y[i];
        basis[i] = if flip > 0.0 {
            2 * k + i
        } else {
            2 * k + n_obs + i
        };
    }
    for i in 0..n_obs {
        c[2 * k + i] = tau;
        c[2 * k + n_obs + i] = 1.0 - tau;
    }
    let mut t = Tableau {
        m: n_obs,
        n: n_vars,
        a,
        b,
        c,
        basis,
    };
    t.solve(50_000 + 100 * n_obs)?;
    let x = t.primal_solution();
    Ok((0..k).map(|j| x[j] - x[k + j]).collect())
}

/// The check-loss objective itself.
pub fn check_loss(rows: &[Vec<f64>], y: &[f64], beta: &[f64], tau: f64) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(row, &yi)| {
            let fit: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            let e = yi - fit;
            if e >= 0.0 {
                tau * e
            } else {
                (tau - 1.0) * e
            }
        })
        .sum()
}

/// Is `point` inside the convex hull of `others`? Phase-1 feasibility LP:
/// minimize the l1 norm of artificial slack in
/// `sum_j lambda_j x_j = point, sum_j lambda_j = 1, lambda >= 0`.
pub fn in_convex_hull(point: &[f64], others: &[&[f64]], tol: f64) -> Result<bool> {
    let dim = point.len();
    let m = dim + 1;
    let np = others.len();
    if np == 0 {
        return Ok(false);
    }
    let n_vars = np + m; // lambdas + one artificial per row
    let mut a = vec![0.0; m * n_vars];
    let mut b = vec![0.0; m];
    let mut c = vec![0.0; n_vars];
    let mut basis = vec![0usize; m];
    for i in 0..m {
        let rhs = if i < dim { point[i] } else { 1.0 };
        let flip = if rhs < 0.0 { -1.0 } else { 1.0 };
        for (j, other) in others.iter().enumerate() {
            let coef = if i < dim { other[i] } else { 1.0 };
            a[i * n_vars + j] = flip * coef;
        }
        a[i * n_vars + np + i] = 1.0; // artificial, +1 after flip
        b[i] = flip * rhs;
        c[np + i] = 1.0;
        basis[i] = np + i;
    }
    let mut t = Tableau {
        m,
        n: n_vars,
        a,
        b,
        c,
        basis,
    };
    let obj = t.solve(20_000 + 50 * np)?;
    Ok(obj <= tol)
}
