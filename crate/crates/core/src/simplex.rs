//! Dense two-phase simplex for small standard-form LPs
//!
//! ```text
//! minimize cᵀx  subject to  A x = b,  x ≥ 0
//! ```
//!
//! Bland's rule picks both the entering and leaving variables, so the method
//! terminates on degenerate problems. The returned point is always a basic
//! feasible solution, hence has at most `rows(A)` nonzero coordinates.

use crate::error::{check_dim, Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    /// Phase one ended with positive artificial mass.
    Infeasible { residual: f64 },
    Unbounded,
}

struct Tableau {
    // each row holds the coefficients followed by the right-hand side
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
    pivots: usize,
    max_pivots: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.ncols]
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = std::mem::take(&mut self.rows[r]);
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[col] = 0.0;
            }
        }
        self.rows[r] = pivot_row;
        self.basis[r] = col;
        self.pivots += 1;
    }

    /// Runs simplex iterations for `cost` over the columns with `allowed[j]`.
    /// Returns `false` when the objective is unbounded below.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<bool> {
        loop {
            if self.pivots >= self.max_pivots {
                return Err(Error::PivotLimit(self.max_pivots));
            }
            let entering = (0..self.ncols).find(|&j| {
                allowed[j] && !self.basis.contains(&j) && {
                    let rc = cost[j]
                        - self
                            .rows
                            .iter()
                            .zip(&self.basis)
                            .map(|(row, &b)| cost[b] * row[j])
                            .sum::<f64>();
                    rc < -COST_TOL
                }
            });
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][col];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                        if ratio < best && !tie || tie && self.basis[i] < self.basis[r] {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Ok(false);
            };
            self.pivot(r, col);
        }
    }
}

/// Solves `min cᵀx s.t. Ax = b, x ≥ 0`. `a` is row-major with `b.len()` rows.
pub fn minimize(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<LpOutcome> {
    check_dim(b.len(), a.len())?;
    let n = c.len();
    for row in a {
        check_dim(n, row.len())?;
    }
    if a.iter().flatten().chain(b).chain(c).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LP data"));
    }
    let m = b.len();
    let ncols = n + m;
    let mut rows = Vec::with_capacity(m);
    for (i, (row, &bi)) in a.iter().zip(b).enumerate() {
        let s = if bi < 0.0 { -1.0 } else { 1.0 };
        let mut r: Vec<f64> = row.iter().map(|v| s * v).collect();
        r.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
        r.push(s * bi);
        rows.push(r);
    }
    let mut tab = Tableau {
        rows,
        basis: (n..ncols).collect(),
        ncols,
        pivots: 0,
        max_pivots: 50 * (ncols + m + 10),
    };

    let phase1_cost: Vec<f64> = (0..ncols).map(|j| if j < n { 0.0 } else { 1.0 }).collect();
    tab.optimize(&phase1_cost, &vec![true; ncols])?;
    let residual: f64 = (0..m).filter(|&i| tab.basis[i] >= n).map(|i| tab.rhs(i)).sum();
    let scale = 1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if residual > 1e-9 * scale {
        return Ok(LpOutcome::Infeasible { residual });
    }

    // Drive remaining (zero-level) artificials out; rows with no original
    // column left are redundant and dropped.
    let mut i = 0;
    while i < tab.rows.len() {
        if tab.basis[i] < n {
            i += 1;
            continue;
        }
        match (0..n).find(|&j| tab.rows[i][j].abs() > 1e-9) {
            Some(j) => {
                tab.pivot(i, j);
                i += 1;
            }
            None => {
                tab.rows.remove(i);
                tab.basis.remove(i);
            }
        }
    }

    let mut cost = c.to_vec();
    cost.resize(ncols, 0.0);
    let allowed: Vec<bool> = (0..ncols).map(|j| j < n).collect();
    if !tab.optimize(&cost, &allowed)? {
        return Ok(LpOutcome::Unbounded);
    }
    let mut x = vec![0.0; n];
    for (i, &bv) in tab.basis.iter().enumerate() {
        if bv < n {
            x[bv] = tab.rhs(i).max(0.0);
        }
    }
    let objective = x.iter().zip(c).map(|(a, b)| a * b).sum();
    Ok(LpOutcome::Optimal(LpSolution {
        x,
        objective,
        pivots: tab.pivots,
    }))
}
