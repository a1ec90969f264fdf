//! Small dense linear programs: `min cᵀx` subject to equality and `≤` rows, `x ≥ 0`.
//!
//! Two-phase tableau simplex with Dantzig pricing, switching to Bland's rule
//! after a run of degenerate pivots. Meant for problems with at most a few
//! thousand columns.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LinearProgram {
    c: Vec<f64>,
    eq: Vec<(Vec<f64>, f64)>,
    le: Vec<(Vec<f64>, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

const TOL: f64 = 1e-11;

impl LinearProgram {
    pub fn new(c: Vec<f64>) -> Self {
        Self {
            c,
            eq: vec![],
            le: vec![],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        assert_eq!(row.len(), self.c.len(), "constraint width");
        self.eq.push((row, rhs));
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        assert_eq!(row.len(), self.c.len(), "constraint width");
        self.le.push((row, rhs));
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        Tableau::build(self).solve(&self.c)
    }
}

struct Tableau {
    /// Row-major `rows × (cols + 1)`; the last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_orig: usize,
    n_slack: usize,
    n_art: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n_orig = lp.c.len();
        let n_slack = lp.le.len();
        // ≤ rows with nonnegative rhs start with their slack basic; every other row gets an artificial
        let needs_art: Vec<bool> = lp
            .eq
            .iter()
            .map(|_| true)
            .chain(lp.le.iter().map(|(_, b)| *b < 0.0))
            .collect();
        let n_art = needs_art.iter().filter(|&&a| a).count();
        let width = n_orig + n_slack + n_art + 1;
        let mut t = vec![];
        let mut basis = vec![];
        let mut art = 0;
        for (r, (row, b)) in lp.eq.iter().chain(&lp.le).enumerate() {
            let mut line = vec![0.0; width];
            line[..n_orig].copy_from_slice(row);
            line[width - 1] = *b;
            if r >= lp.eq.len() {
                line[n_orig + r - lp.eq.len()] = 1.0;
            }
            if *b < 0.0 {
                line.iter_mut().for_each(|x| *x = -*x);
            }
            if needs_art[r] {
                let col = n_orig + n_slack + art;
                line[col] = 1.0;
                basis.push(col);
                art += 1;
            } else {
                basis.push(n_orig + r - lp.eq.len());
            }
            t.push(line);
        }
        Self {
            t,
            basis,
            n_orig,
            n_slack,
            n_art,
        }
    }

    fn width(&self) -> usize {
        self.n_orig + self.n_slack + self.n_art
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        self.t[r].iter_mut().for_each(|x| *x /= p);
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost · x` over the current basis, using columns `< allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<bool> {
        let rows = self.t.len();
        let rhs = self.width();
        let max_iter = 50 * (rows + allowed) + 1000;
        let mut degenerate = 0;
        for _ in 0..max_iter {
            // reduced costs d_j = c_j − c_Bᵀ B⁻¹ A_j
            let mut best: Option<(usize, f64)> = None;
            let bland = degenerate > 50;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut d = cost[j];
                for r in 0..rows {
                    d -= cost[self.basis[r]] * self.t[r][j];
                }
                if d < -TOL {
                    if bland {
                        best = Some((j, d));
                        break;
                    }
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((j, d));
                    }
                }
            }
            let Some((enter, _)) = best else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..rows {
                let a = self.t[r][enter];
                if a > TOL {
                    let ratio = self.t[r][rhs] / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - TOL
                                || (ratio <= lratio + TOL && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(false);
            };
            degenerate = if ratio.abs() <= TOL { degenerate + 1 } else { 0 };
            self.pivot(r, enter);
        }
        Err(Error::Solver(format!("simplex did not converge in {max_iter} pivots")))
    }

    fn solve(mut self, c: &[f64]) -> Result<LpOutcome> {
        let width = self.width();
        let rhs = width;
        if self.n_art > 0 {
            let mut phase1 = vec![0.0; width];
            phase1[self.n_orig + self.n_slack..].iter_mut().for_each(|x| *x = 1.0);
            self.optimize(&phase1, width)?;
            let infeas: f64 = (0..self.t.len())
                .filter(|&r| self.basis[r] >= self.n_orig + self.n_slack)
                .map(|r| self.t[r][rhs])
                .sum();
            let scale = self.t.iter().map(|row| row[rhs].abs()).fold(1.0, f64::max);
            if infeas > 1e-9 * scale {
                return Ok(LpOutcome::Infeasible);
            }
            // drive remaining artificials out, dropping redundant rows
            let mut r = 0;
            while r < self.t.len() {
                if self.basis[r] >= self.n_orig + self.n_slack {
                    match (0..self.n_orig + self.n_slack).find(|&j| self.t[r][j].abs() > 1e-9) {
                        Some(j) => self.pivot(r, j),
                        None => {
                            self.t.remove(r);
                            self.basis.remove(r);
                            continue;
                        }
                    }
                }
                r += 1;
            }
        }
        let mut cost = vec![0.0; width];
        cost[..self.n_orig].copy_from_slice(c);
        if !self.optimize(&cost, self.n_orig + self.n_slack)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut x = vec![0.0; self.n_orig];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.n_orig {
                x[b] = self.t[r][rhs].max(0.0);
            }
        }
        let value = c.iter().zip(&x).map(|(a, b)| a * b).sum();
        Ok(LpOutcome::Optimal { value, x })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(lp: &LinearProgram) -> (f64, Vec<f64>) {
        match lp.solve().unwrap() {
            LpOutcome::Optimal { value, x } => (value, x),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn textbook_problem() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → 36 at (2, 6)
        let mut lp = LinearProgram::new(vec![-3.0, -5.0]);
        lp.add_le(vec![1.0, 0.0], 4.0);
        lp.add_le(vec![0.0, 2.0], 12.0);
        lp.add_le(vec![3.0, 2.0], 18.0);
        let (v, x) = optimal(&lp);
        assert!((v + 36.0).abs() < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn equalities_and_negative_rhs() {
        // min x + y s.t. x − y = −1, x + y ≥ 3 → x = 1, y = 2
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add_eq(vec![1.0, -1.0], -1.0);
        lp.add_le(vec![-1.0, -1.0], -3.0);
        let (v, x) = optimal(&lp);
        assert!((v - 3.0).abs() < 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_eq(vec![1.0], 1.0);
        lp.add_le(vec![1.0], 0.5);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Infeasible);
        let mut lp = LinearProgram::new(vec![-1.0, 0.0]);
        lp.add_le(vec![-1.0, 1.0], 1.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(vec![1.0, 2.0, 0.0]);
        lp.add_eq(vec![1.0, 1.0, 1.0], 1.0);
        lp.add_eq(vec![2.0, 2.0, 2.0], 2.0);
        lp.add_eq(vec![0.0, 1.0, 0.0], 0.25);
        let (v, _) = optimal(&lp);
        assert!((v - 0.5).abs() < 1e-12);
    }
}
