//! Small dense linear programs: two-phase tableau simplex with Bland's rule.

use crate::error::{Error, Result};

const EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// `maximize objective·x` subject to the rows, with `x_j ≥ 0` unless `j` is free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<(Vec<f64>, Relation, f64)>,
    pub free: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            objective: vec![0.0; n_vars],
            rows: Vec::new(),
            free: vec![false; n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.n_vars());
        self.rows.push((coeffs, rel, rhs));
    }

    /// Adds a row from sparse `(column, coefficient)` pairs.
    pub fn add_sparse_row(&mut self, terms: &[(usize, f64)], rel: Relation, rhs: f64) {
        let mut coeffs = vec![0.0; self.n_vars()];
        for &(j, c) in terms {
            coeffs[j] += c;
        }
        self.add_row(coeffs, rel, rhs);
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self).solve(self)
    }
}

struct Tableau {
    // m constraint rows plus the objective row, each with `cols + 1` entries (rhs last).
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    // Column of the positive part and, for free variables, the negative part.
    var_cols: Vec<(usize, Option<usize>)>,
    artificial_start: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.n_vars();
        let mut var_cols = Vec::with_capacity(n);
        let mut next = 0;
        for j in 0..n {
            if lp.free[j] {
                var_cols.push((next, Some(next + 1)));
                next += 2;
            } else {
                var_cols.push((next, None));
                next += 1;
            }
        }
        let structural = next;
        let m = lp.rows.len();
        let slack_count = lp.rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let artificial_start = structural + slack_count;
        let cols = artificial_start + m;

        let mut t = vec![vec![0.0; cols + 1]; m + 1];
        let mut basis = vec![0; m];
        let mut slack = structural;
        for (i, (coeffs, rel, rhs)) in lp.rows.iter().enumerate() {
            let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
            for (j, &c) in coeffs.iter().enumerate() {
                let (p, neg) = var_cols[j];
                t[i][p] = sign * c;
                if let Some(q) = neg {
                    t[i][q] = -sign * c;
                }
            }
            match rel {
                Relation::Le => {
                    t[i][slack] = sign;
                    slack += 1;
                }
                Relation::Ge => {
                    t[i][slack] = -sign;
                    slack += 1;
                }
                Relation::Eq => {}
            }
            t[i][cols] = sign * rhs;
            t[i][artificial_start + i] = 1.0;
            basis[i] = artificial_start + i;
        }
        Self {
            t,
            basis,
            cols,
            var_cols,
            artificial_start,
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (i, r) in self.t.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f.abs() > 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Runs simplex iterations minimizing the objective row; columns at or past
    /// `limit` never enter.
    fn run(&mut self, limit: usize) -> Result<()> {
        let m = self.basis.len();
        let budget = 50_000;
        for _ in 0..budget {
            // Objective row holds reduced costs of a minimization.
            let obj = &self.t[m];
            let Some(col) = (0..limit).find(|&j| obj[j] < -EPS) else {
                return Ok(());
            };
            let mut best: Option<(f64, usize)> = None;
            for i in 0..m {
                let a = self.t[i][col];
                if a > EPS {
                    let ratio = self.t[i][self.cols] / a;
                    match best {
                        Some((r, _)) if ratio > r + EPS => {}
                        Some((r, bi)) if (ratio - r).abs() <= EPS && self.basis[i] > self.basis[bi] => {}
                        _ => best = Some((ratio, i)),
                    }
                }
            }
            let Some((_, row)) = best else {
                return Err(Error::InvalidParameter("linear program is unbounded".into()));
            };
            self.pivot(row, col);
        }
        Err(Error::NoConvergence {
            gap: f64::NAN,
            iterations: budget,
        })
    }

    fn solve(mut self, lp: &LinearProgram) -> Result<LpSolution> {
        let m = self.basis.len();
        // Phase one: minimize the sum of artificials.
        let mut obj = vec![0.0; self.cols + 1];
        for i in 0..m {
            for (o, v) in obj.iter_mut().zip(&self.t[i]) {
                *o -= v;
            }
        }
        for j in self.artificial_start..self.cols {
            obj[j] = 0.0;
        }
        self.t[m] = obj;
        self.run(self.artificial_start)?;
        let infeasibility = -self.t[m][self.cols];
        if infeasibility > 1e-8 {
            return Err(Error::InvalidParameter(format!(
                "linear program is infeasible (residual {infeasibility:e})"
            )));
        }
        // Drive remaining artificials out of the basis where possible.
        for i in 0..m {
            if self.basis[i] >= self.artificial_start {
                if let Some(col) = (0..self.artificial_start).find(|&j| self.t[i][j].abs() > EPS) {
                    self.pivot(i, col);
                }
            }
        }

        // Phase two: minimize -objective.
        let mut obj = vec![0.0; self.cols + 1];
        for (j, &c) in lp.objective.iter().enumerate() {
            let (p, neg) = self.var_cols[j];
            obj[p] = -c;
            if let Some(q) = neg {
                obj[q] = c;
            }
        }
        for i in 0..m {
            let b = self.basis[i];
            let f = obj[b];
            if f != 0.0 {
                for (o, v) in obj.iter_mut().zip(&self.t[i]) {
                    *o -= f * v;
                }
            }
        }
        self.t[m] = obj;
        self.run(self.artificial_start)?;

        let mut col_val = vec![0.0; self.cols];
        for i in 0..m {
            col_val[self.basis[i]] = self.t[i][self.cols];
        }
        let x: Vec<f64> = self
            .var_cols
            .iter()
            .map(|&(p, neg)| col_val[p] - neg.map_or(0.0, |q| col_val[q]))
            .collect();
        let value = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, value })
    }
}
