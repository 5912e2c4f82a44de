//! Dense two-phase tableau simplex.
//!
//! Small, single-threaded and deterministic. Problems are posed as
//! `maximize c·x` over variables that are either nonnegative or free, with
//! `≤`, `≥` and `=` rows. Free variables are split internally.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    NonNeg,
    Free,
}

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    kinds: Vec<VarKind>,
    objective: Vec<f64>,
    rows: Vec<Row>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn is_feasible(&self) -> bool {
        !matches!(self, LpOutcome::Infeasible)
    }
}

const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, kind: VarKind) -> usize {
        self.kinds.push(kind);
        self.objective.push(0.0);
        self.kinds.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.kinds.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn set_objective(&mut self, coeffs: &[(usize, f64)]) {
        self.objective.iter_mut().for_each(|c| *c = 0.0);
        for &(v, c) in coeffs {
            self.objective[v] += c;
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) {
        self.rows.push(Row { coeffs, kind, rhs });
    }

    /// Evaluates `row · x` for a solution vector in the original variables.
    pub fn row_value(row: &Row, x: &[f64]) -> f64 {
        row.coeffs.iter().map(|&(v, c)| c * x[v]).sum()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    /// `(m + 1) × (cols + 1)`; the last row is the reduced-cost row and the
    /// last column holds the right-hand side.
    t: Vec<f64>,
    m: usize,
    cols: usize,
    basis: Vec<usize>,
    /// Column range of artificial variables.
    art_start: usize,
    /// Structural column map: original var -> (pos col, optional neg col).
    var_cols: Vec<(usize, Option<usize>)>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let mut var_cols = Vec::with_capacity(lp.kinds.len());
        let mut next = 0;
        for kind in &lp.kinds {
            match kind {
                VarKind::NonNeg => {
                    var_cols.push((next, None));
                    next += 1;
                }
                VarKind::Free => {
                    var_cols.push((next, Some(next + 1)));
                    next += 2;
                }
            }
        }
        let structural = next;
        let m = lp.rows.len();
        let slack_count = lp.rows.iter().filter(|r| r.kind != RowKind::Eq).count();
        let art_start = structural + slack_count;
        // Every row gets an artificial; unused ones are simply never basic.
        let cols = art_start + m;
        let width = cols + 1;
        let mut t = vec![0.0; (m + 1) * width];
        let mut basis = vec![0; m];
        let mut slack = structural;
        for (i, row) in lp.rows.iter().enumerate() {
            let sign = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            let r = &mut t[i * width..(i + 1) * width];
            for &(v, c) in &row.coeffs {
                let (p, neg) = var_cols[v];
                r[p] += sign * c;
                if let Some(nc) = neg {
                    r[nc] -= sign * c;
                }
            }
            r[cols] = sign * row.rhs;
            let slack_col = match row.kind {
                RowKind::Eq => None,
                RowKind::Le => {
                    r[slack] = sign;
                    slack += 1;
                    Some(slack - 1)
                }
                RowKind::Ge => {
                    r[slack] = -sign;
                    slack += 1;
                    Some(slack - 1)
                }
            };
            match slack_col {
                Some(sc) if r[sc] > 0.0 => basis[i] = sc,
                _ => {
                    r[art_start + i] = 1.0;
                    basis[i] = art_start + i;
                }
            }
        }
        Self {
            t,
            m,
            cols,
            basis,
            art_start,
            var_cols,
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.cols + 1) + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let width = self.cols + 1;
        let piv = self.t[pr * width + pc];
        {
            let row = &mut self.t[pr * width..(pr + 1) * width];
            for v in row.iter_mut() {
                *v /= piv;
            }
        }
        let pivot_row: Vec<f64> = self.t[pr * width..(pr + 1) * width].to_vec();
        for r in 0..=self.m {
            if r == pr {
                continue;
            }
            let factor = self.t[r * width + pc];
            if factor == 0.0 {
                continue;
            }
            let row = &mut self.t[r * width..(r + 1) * width];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= factor * p;
            }
            row[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Loads `maximize obj·x` into the cost row as reduced costs
    /// (`z_j - c_j`, so a negative entry means the column improves).
    fn load_cost(&mut self, obj: &[f64]) {
        let width = self.cols + 1;
        let base = self.m * width;
        for c in 0..width {
            self.t[base + c] = 0.0;
        }
        for (c, &v) in obj.iter().enumerate() {
            self.t[base + c] = -v;
        }
        for r in 0..self.m {
            let cb = obj.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for c in 0..width {
                    self.t[base + c] += cb * self.t[r * width + c];
                }
            }
        }
    }

    /// Runs simplex iterations on columns `< limit`. Returns false on
    /// unboundedness.
    fn iterate(&mut self, limit: usize) -> Result<bool> {
        let max_iter = 50 * (self.m + self.cols) + 1000;
        let mut degenerate_run = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate_run > 50;
            let mut enter = None;
            let mut best = -PIVOT_TOL;
            for c in 0..limit {
                let rc = self.at(self.m, c);
                if rc < best {
                    enter = Some(c);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(pc) = enter else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.at(r, self.cols) / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let better = ratio < lratio - 1e-12
                                || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr]);
                            if better {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((pr, ratio)) = leave else {
                return Ok(false);
            };
            if ratio.abs() < 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc);
        }
        Err(Error::Lp("iteration limit reached".into()))
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpOutcome> {
        // Phase 1: maximize -Σ artificials.
        let mut phase1 = vec![0.0; self.cols];
        phase1[self.art_start..].fill(-1.0);
        self.load_cost(&phase1);
        self.iterate(self.cols)?;
        let infeas: f64 = (0..self.m)
            .filter(|&r| self.basis[r] >= self.art_start)
            .map(|r| self.at(r, self.cols))
            .sum();
        if infeas > FEAS_TOL * (1.0 + self.max_rhs()) {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive remaining (zero-level) artificials out of the basis.
        for r in 0..self.m {
            if self.basis[r] >= self.art_start {
                let col = (0..self.art_start).find(|&c| self.at(r, c).abs() > 1e-9);
                if let Some(c) = col {
                    self.pivot(r, c);
                }
            }
        }
        // Phase 2 over structural + slack columns only.
        let mut obj = vec![0.0; self.cols];
        for (v, &c) in lp.objective.iter().enumerate() {
            let (p, neg) = self.var_cols[v];
            obj[p] += c;
            if let Some(nc) = neg {
                obj[nc] -= c;
            }
        }
        self.load_cost(&obj);
        if !self.iterate(self.art_start)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut cols_val = vec![0.0; self.cols];
        for r in 0..self.m {
            cols_val[self.basis[r]] = self.at(r, self.cols);
        }
        let x: Vec<f64> = self
            .var_cols
            .iter()
            .map(|&(p, neg)| cols_val[p] - neg.map_or(0.0, |nc| cols_val[nc]))
            .collect();
        let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpOutcome::Optimal { x, objective })
    }

    fn max_rhs(&self) -> f64 {
        (0..self.m)
            .map(|r| self.at(r, self.cols).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimum(out: LpOutcome) -> (Vec<f64>, f64) {
        match out {
            LpOutcome::Optimal { x, objective } => (x, objective),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 -> (2, 6), 36
        let mut lp = LinearProgram::new();
        let x = lp.add_var(VarKind::NonNeg);
        let y = lp.add_var(VarKind::NonNeg);
        lp.set_objective(&[(x, 3.0), (y, 5.0)]);
        lp.add_row(vec![(x, 1.0)], RowKind::Le, 4.0);
        lp.add_row(vec![(y, 2.0)], RowKind::Le, 12.0);
        lp.add_row(vec![(x, 3.0), (y, 2.0)], RowKind::Le, 18.0);
        let (sol, obj) = optimum(lp.solve().unwrap());
        assert!((obj - 36.0).abs() < 1e-9);
        assert!((sol[0] - 2.0).abs() < 1e-9 && (sol[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min |shift| style: max -x s.t. x - y = -3, y ≤ 1, x free -> x = -2? no:
        // x = y - 3 with y ∈ [0,1], maximize -x -> y = 0, x = -3, obj 3.
        let mut lp = LinearProgram::new();
        let x = lp.add_var(VarKind::Free);
        let y = lp.add_var(VarKind::NonNeg);
        lp.set_objective(&[(x, -1.0)]);
        lp.add_row(vec![(x, 1.0), (y, -1.0)], RowKind::Eq, -3.0);
        lp.add_row(vec![(y, 1.0)], RowKind::Le, 1.0);
        let (sol, obj) = optimum(lp.solve().unwrap());
        assert!((obj - 3.0).abs() < 1e-9);
        assert!((sol[0] + 3.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(VarKind::NonNeg);
        lp.add_row(vec![(x, 1.0)], RowKind::Ge, 2.0);
        lp.add_row(vec![(x, 1.0)], RowKind::Le, 1.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::new();
        let x = lp.add_var(VarKind::Free);
        lp.set_objective(&[(x, 1.0)]);
        lp.add_row(vec![(x, 1.0)], RowKind::Ge, 0.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's cycling example (maximization form).
        let mut lp = LinearProgram::new();
        let v: Vec<usize> = (0..4).map(|_| lp.add_var(VarKind::NonNeg)).collect();
        lp.set_objective(&[(v[0], 0.75), (v[1], -150.0), (v[2], 0.02), (v[3], -6.0)]);
        lp.add_row(
            vec![(v[0], 0.25), (v[1], -60.0), (v[2], -0.04), (v[3], 9.0)],
            RowKind::Le,
            0.0,
        );
        lp.add_row(
            vec![(v[0], 0.5), (v[1], -90.0), (v[2], -0.02), (v[3], 3.0)],
            RowKind::Le,
            0.0,
        );
        lp.add_row(vec![(v[2], 1.0)], RowKind::Le, 1.0);
        let (_, obj) = optimum(lp.solve().unwrap());
        assert!((obj - 0.05).abs() < 1e-9);
    }

    #[test]
    fn feasibility_only() {
        let mut lp = LinearProgram::new();
        let a = lp.add_var(VarKind::Free);
        let b = lp.add_var(VarKind::Free);
        lp.add_row(vec![(a, 1.0), (b, 1.0)], RowKind::Eq, 1.0);
        lp.add_row(vec![(a, 1.0), (b, -1.0)], RowKind::Ge, 3.0);
        let (sol, _) = optimum(lp.solve().unwrap());
        assert!((sol[0] + sol[1] - 1.0).abs() < 1e-9);
        assert!(sol[0] - sol[1] >= 3.0 - 1e-9);
    }
}
