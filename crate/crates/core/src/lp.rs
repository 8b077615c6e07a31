//! Dense revised simplex for `max c^T z  s.t.  A z <= b`, `z` free.
//!
//! The problem is solved through its dual in standard form,
//! `min b^T l  s.t.  A^T l = c, l >= 0`, which has one equality row per
//! primal variable. Tall constraint systems (many rows, few variables) thus
//! give a small basis. The primal solution is read off the simplex
//! multipliers of the optimal dual basis.
//!
//! Pricing is Dantzig's rule; after a run of degenerate pivots the solver
//! switches to Bland's rule until progress resumes. The basis inverse is
//! refactored periodically and the final point is checked by substitution.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct SimplexOptions {
    /// Reduced-cost and primal feasibility tolerance.
    pub tol: f64,
    /// Smallest acceptable pivot magnitude.
    pub pivot_tol: f64,
    pub max_iterations: usize,
    /// Iterations between basis refactorizations.
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_limit: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            tol: 1e-9,
            pivot_tol: 1e-10,
            max_iterations: 200_000,
            refactor_every: 64,
            degenerate_limit: 25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpStatus {
    Optimal,
    /// The objective grows without bound over the feasible set.
    Unbounded,
    /// `A z <= b` has no solution.
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub z: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Constraint rows with a basic dual multiplier (active at the optimum).
    pub basis_rows: Vec<usize>,
}

struct Tableau {
    // Transposed constraint matrix: column j is constraint row j.
    at: DMatrix<f64>,
    sign: Vec<f64>,
    rhs: DVector<f64>,
    m: usize,
    nv: usize,
    // Basic variable per row; indices >= m are artificials.
    basis: Vec<usize>,
    b_inv: DMatrix<f64>,
    x_b: DVector<f64>,
    opts: SimplexOptions,
    iterations: usize,
}

enum Step {
    Optimal,
    Unbounded,
    Pivoted,
}

impl Tableau {
    /// Equality-row column of structural variable `j` (row `j` of `A`, sign-flipped).
    fn column(&self, j: usize) -> DVector<f64> {
        if j >= self.m {
            let mut e = DVector::zeros(self.nv);
            e[j - self.m] = 1.0;
            return e;
        }
        let col = self.at.column(j);
        DVector::from_iterator(self.nv, (0..self.nv).map(|i| self.sign[i] * col[i]))
    }

    fn refactor(&mut self) -> Result<()> {
        let mut basis_matrix = DMatrix::zeros(self.nv, self.nv);
        for (k, &j) in self.basis.iter().enumerate() {
            basis_matrix.set_column(k, &self.column(j));
        }
        self.b_inv = basis_matrix
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular simplex basis".into()))?;
        self.x_b = &self.b_inv * &self.rhs;
        Ok(())
    }

    fn multipliers(&self, cost: &dyn Fn(usize) -> f64) -> DVector<f64> {
        let c_b = DVector::from_iterator(self.nv, self.basis.iter().map(|&j| cost(j)));
        self.b_inv.tr_mul(&c_b)
    }

    fn step(
        &mut self,
        cost: &dyn Fn(usize) -> f64,
        allow_artificial: bool,
        bland: bool,
    ) -> Result<(Step, bool)> {
        let pi = self.multipliers(cost);
        let signed_pi = DVector::from_iterator(self.nv, (0..self.nv).map(|i| pi[i] * self.sign[i]));
        let priced = self.at.tr_mul(&signed_pi);
        let limit = if allow_artificial {
            self.m + self.nv
        } else {
            self.m
        };
        let mut entering = None;
        let mut best = -self.opts.tol;
        for j in 0..limit {
            if j >= self.m && self.basis.contains(&j) {
                continue;
            }
            let d = if j < self.m {
                cost(j) - priced[j]
            } else {
                cost(j) - pi[j - self.m]
            };
            if d < best {
                entering = Some(j);
                if bland {
                    break;
                }
                best = d;
            }
        }
        let Some(q) = entering else {
            return Ok((Step::Optimal, false));
        };
        let alpha = &self.b_inv * self.column(q);
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..self.nv {
            if alpha[i] <= self.opts.pivot_tol {
                continue;
            }
            let ratio = self.x_b[i].max(0.0) / alpha[i];
            let better = match leave {
                None => true,
                Some(l) => {
                    if ratio < best_ratio - 1e-12 {
                        true
                    } else if ratio <= best_ratio + 1e-12 {
                        if bland {
                            self.basis[i] < self.basis[l]
                        } else {
                            alpha[i] > alpha[l]
                        }
                    } else {
                        false
                    }
                }
            };
            if better {
                leave = Some(i);
                best_ratio = ratio.min(best_ratio);
            }
        }
        let Some(r) = leave else {
            return Ok((Step::Unbounded, false));
        };
        let theta = self.x_b[r].max(0.0) / alpha[r];
        let degenerate = theta <= self.opts.tol;
        // Update primal basic values and the basis inverse (eta update).
        for i in 0..self.nv {
            if i != r {
                self.x_b[i] -= theta * alpha[i];
            }
        }
        self.x_b[r] = theta;
        let pivot = alpha[r];
        let pivot_row = self.b_inv.row(r).clone_owned() / pivot;
        for i in 0..self.nv {
            if i == r || alpha[i] == 0.0 {
                continue;
            }
            let factor = alpha[i];
            let mut row = self.b_inv.row_mut(i);
            row -= &pivot_row * factor;
        }
        self.b_inv.set_row(r, &pivot_row);
        self.basis[r] = q;
        self.iterations += 1;
        if self.iterations.is_multiple_of(self.opts.refactor_every) {
            self.refactor()?;
        }
        Ok((Step::Pivoted, degenerate))
    }

    fn run(&mut self, cost: &dyn Fn(usize) -> f64, allow_artificial: bool) -> Result<Step> {
        let mut degenerate_run = 0usize;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Err(Error::Numerical(format!(
                    "simplex hit the iteration cap ({})",
                    self.opts.max_iterations
                )));
            }
            let bland = degenerate_run >= self.opts.degenerate_limit;
            match self.step(cost, allow_artificial, bland)? {
                (Step::Pivoted, true) => degenerate_run += 1,
                (Step::Pivoted, false) => degenerate_run = 0,
                (done, _) => return Ok(done),
            }
        }
    }
}

/// Solves `max c^T z  s.t.  A z <= b` with `z` free.
pub fn maximize(
    a: &DMatrix<f64>,
    b: &[f64],
    c: &[f64],
    opts: SimplexOptions,
) -> Result<LpSolution> {
    let (m, nv) = a.shape();
    if b.len() != m || c.len() != nv {
        return Err(Error::Dimension(format!(
            "LP with A {m}x{nv}, b {}, c {}",
            b.len(),
            c.len()
        )));
    }
    let sign: Vec<f64> = c
        .iter()
        .map(|&v| if v < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let rhs = DVector::from_iterator(nv, c.iter().map(|v| v.abs()));
    let mut tab = Tableau {
        at: a.transpose(),
        sign,
        rhs: rhs.clone(),
        m,
        nv,
        basis: (m..m + nv).collect(),
        b_inv: DMatrix::identity(nv, nv),
        x_b: rhs,
        opts,
        iterations: 0,
    };

    // Phase 1: minimize the artificial sum.
    let phase1 = |j: usize| if j >= m { 1.0 } else { 0.0 };
    tab.run(&phase1, false)?;
    tab.refactor()?;
    let infeasibility: f64 = tab
        .basis
        .iter()
        .zip(tab.x_b.iter())
        .filter(|(&j, _)| j >= m)
        .map(|(_, &v)| v)
        .sum();
    let scale = 1.0 + c.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if infeasibility > 1e-7 * scale {
        // Dual infeasible: the primal is unbounded or infeasible. Here the
        // primal has a feasible point whenever the caller's system does.
        debug!("LP dual infeasible after {} iterations", tab.iterations);
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            z: vec![f64::NAN; nv],
            objective: f64::INFINITY,
            iterations: tab.iterations,
            basis_rows: Vec::new(),
        });
    }
    // Drive zero-level artificials out of the basis where possible.
    for r in 0..nv {
        if tab.basis[r] < m {
            continue;
        }
        let row = tab.b_inv.row(r).clone_owned();
        let candidate = (0..m).find(|&j| {
            !tab.basis.contains(&j) && {
                let col = tab.column(j);
                (row.clone() * col)[0].abs() > 1e-7
            }
        });
        if let Some(j) = candidate {
            tab.basis[r] = j;
            tab.refactor()?;
        }
    }

    // Phase 2: min b^T l; artificials may not re-enter.
    let phase2 = |j: usize| if j < m { b[j] } else { 0.0 };
    let status = match tab.run(&phase2, false)? {
        Step::Optimal => LpStatus::Optimal,
        Step::Unbounded => LpStatus::Infeasible,
        Step::Pivoted => unreachable!(),
    };
    if status == LpStatus::Infeasible {
        return Ok(LpSolution {
            status,
            z: vec![f64::NAN; nv],
            objective: f64::NEG_INFINITY,
            iterations: tab.iterations,
            basis_rows: Vec::new(),
        });
    }
    tab.refactor()?;
    let pi = tab.multipliers(&phase2);
    let z: Vec<f64> = (0..nv).map(|i| tab.sign[i] * pi[i]).collect();
    let objective = z.iter().zip(c).map(|(zi, ci)| zi * ci).sum();
    let mut basis_rows: Vec<usize> = tab.basis.iter().copied().filter(|&j| j < m).collect();
    basis_rows.sort_unstable();
    debug!(
        "LP optimal after {} iterations, objective {objective}",
        tab.iterations
    );
    Ok(LpSolution {
        status,
        z,
        objective,
        iterations: tab.iterations,
        basis_rows,
    })
}
