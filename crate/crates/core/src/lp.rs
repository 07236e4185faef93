//! Linear programming kernel: `maximize c·x subject to A x ≤ b, x ≥ 0`.
//!
//! Revised simplex with an explicit dense basis inverse updated in product
//! form. Rows are stored sparsely since every LP built in this crate has only
//! a handful of nonzeros per column. Rows with a negative right-hand side get
//! an artificial variable and are handled by a phase-one pass.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const DROP_TOL: f64 = 1e-14;
const REFRESH_EVERY: usize = 50;

/// A linear program in inequality form with implicit `x ≥ 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    /// Constraint rows as `(variable, coefficient)` lists.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
    pub variable_names: Vec<String>,
    pub constraint_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// One nonnegative multiplier per constraint row.
    pub duals: Vec<f64>,
    pub objective_value: f64,
    /// Basic variables; indices `>= n_vars` denote the slack of row `index - n_vars`.
    pub basis: Vec<usize>,
    pub iterations: usize,
}

/// Residuals of an (x, y) pair against the optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateReport {
    /// Largest violation of `A x ≤ b` or `x ≥ 0`.
    pub primal_residual: f64,
    /// Largest violation of `yᵀA ≥ c` or `y ≥ 0`.
    pub dual_infeasibility: f64,
    /// `|cᵀx − bᵀy|`.
    pub duality_gap: f64,
}

impl CertificateReport {
    /// Whether the residuals meet the solver's published tolerances.
    pub fn within_tolerance(&self, lp: &LinearProgram, objective: f64) -> bool {
        let bmax = lp.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        self.primal_residual <= 1e-8 * (1.0 + bmax)
            && self.dual_infeasibility <= 1e-8
            && self.duality_gap <= 1e-7 * (1.0 + objective.abs())
    }
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        LinearProgram { objective: vec![0.0; n_vars], ..Default::default() }
    }

    /// Builds a program from a dense constraint matrix.
    pub fn from_dense(c: Vec<f64>, a: &[Vec<f64>], b: Vec<f64>) -> Self {
        let mut lp = LinearProgram::new(c.len());
        lp.objective = c;
        for (row, &rhs) in a.iter().zip(&b) {
            lp.add_dense_row(row, rhs);
        }
        lp
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Appends `Σ coeffs ≤ rhs` and returns the row index.
    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.rows.push(coeffs.into_iter().filter(|&(_, v)| v != 0.0).collect());
        self.rhs.push(rhs);
        self.rows.len() - 1
    }

    pub fn add_dense_row(&mut self, row: &[f64], rhs: f64) -> usize {
        self.add_row(row.iter().copied().enumerate().collect(), rhs)
    }

    /// Dense copy of the constraint matrix.
    pub fn dense_matrix(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![0.0; self.n_vars()];
                for &(j, v) in r {
                    d[j] += v;
                }
                d
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        let n = self.n_vars();
        if self.rhs.len() != self.rows.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} right-hand sides",
                self.rows.len(),
                self.rhs.len()
            )));
        }
        if !self.variable_names.is_empty() && self.variable_names.len() != n {
            return Err(Error::Shape("variable_names length differs from objective".into()));
        }
        if !self.constraint_names.is_empty() && self.constraint_names.len() != self.rows.len() {
            return Err(Error::Shape("constraint_names length differs from rows".into()));
        }
        for (r, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                if j >= n {
                    return Err(Error::Shape(format!("row {r} references variable {j} of {n}")));
                }
                if !v.is_finite() {
                    return Err(Error::Invalid(format!("non-finite coefficient in row {r}")));
                }
            }
        }
        if self.objective.iter().chain(&self.rhs).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite objective or right-hand side".into()));
        }
        Ok(())
    }
}

/// Solves the program. Infeasibility and unboundedness are reported through
/// [`LpSolution::status`]; malformed input is an error.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.check()?;
    Simplex::new(lp).solve(lp)
}

/// Measures how far `sol` is from satisfying primal feasibility, dual
/// feasibility and strong duality for `lp`.
pub fn dual_certificate_check(lp: &LinearProgram, sol: &LpSolution) -> CertificateReport {
    let n = lp.n_vars();
    let mut primal = 0.0f64;
    for &v in &sol.primal {
        primal = primal.max(-v);
    }
    let mut aty = vec![0.0; n];
    for (r, row) in lp.rows.iter().enumerate() {
        let ax: f64 = row.iter().map(|&(j, v)| v * sol.primal[j]).sum();
        primal = primal.max(ax - lp.rhs[r]);
        for &(j, v) in row {
            aty[j] += v * sol.duals[r];
        }
    }
    let mut dual = 0.0f64;
    for &y in &sol.duals {
        dual = dual.max(-y);
    }
    for j in 0..n {
        dual = dual.max(lp.objective[j] - aty[j]);
    }
    let cx: f64 = lp.objective.iter().zip(&sol.primal).map(|(c, x)| c * x).sum();
    let by: f64 = lp.rhs.iter().zip(&sol.duals).map(|(b, y)| b * y).sum();
    CertificateReport {
        primal_residual: primal.max(0.0),
        dual_infeasibility: dual.max(0.0),
        duality_gap: (cx - by).abs(),
    }
}

enum Outcome {
    Optimal,
    Unbounded,
}

/// Standard form: row `i` reads `σ_i (a_i x + s_i) + r_i = σ_i b_i ≥ 0`, where
/// the artificial `r_i` exists only for rows with `b_i < 0` (σ_i = −1).
struct Simplex {
    m: usize,
    n: usize,
    sigma: Vec<f64>,
    cols: Vec<Vec<(usize, f64)>>,
    beta: Vec<f64>,
    artificial: Vec<bool>,
    barred: Vec<bool>,
    binv: Vec<f64>,
    basis: Vec<usize>,
    pos: Vec<usize>,
    xb: Vec<f64>,
    y: Vec<f64>,
    iterations: usize,
}

impl Simplex {
    fn new(lp: &LinearProgram) -> Self {
        let m = lp.n_rows();
        let n = lp.n_vars();
        let sigma: Vec<f64> = lp.rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, v) in row {
                cols[j].push((i, sigma[i] * v));
            }
        }
        // Merge duplicate entries so each column lists a row once.
        for col in cols.iter_mut() {
            col.sort_by_key(|&(i, _)| i);
            col.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
        }
        for i in 0..m {
            cols.push(vec![(i, sigma[i])]);
        }
        let mut artificial = vec![false; n + m];
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            if sigma[i] < 0.0 {
                cols.push(vec![(i, 1.0)]);
                artificial.push(true);
                basis.push(cols.len() - 1);
            } else {
                basis.push(n + i);
            }
        }
        let total = cols.len();
        let mut pos = vec![usize::MAX; total];
        for (r, &v) in basis.iter().enumerate() {
            pos[v] = r;
        }
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        let beta: Vec<f64> = lp.rhs.iter().zip(&sigma).map(|(b, s)| b * s).collect();
        Simplex {
            m,
            n,
            sigma,
            cols,
            xb: beta.clone(),
            beta,
            barred: vec![false; total],
            artificial,
            binv,
            basis,
            pos,
            y: vec![0.0; m],
            iterations: 0,
        }
    }

    fn solve(mut self, lp: &LinearProgram) -> Result<LpSolution> {
        let total = self.cols.len();
        let cap = 50 * (self.m + total) + 10_000;
        if self.artificial.iter().any(|&a| a) {
            let cost: Vec<f64> = self.artificial.iter().map(|&a| if a { -1.0 } else { 0.0 }).collect();
            self.run(&cost, cap)?;
            let infeas: f64 = self
                .basis
                .iter()
                .zip(&self.xb)
                .filter(|(v, _)| self.artificial[**v])
                .map(|(_, x)| x.max(0.0))
                .sum();
            let bmax = self.beta.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if infeas > 1e-8 * (1.0 + bmax) {
                return Ok(self.finish(lp, LpStatus::Infeasible));
            }
            self.drive_out_artificials();
            for j in 0..total {
                if self.artificial[j] {
                    self.barred[j] = true;
                }
            }
        }
        let mut cost = lp.objective.clone();
        cost.resize(total, 0.0);
        let status = match self.run(&cost, cap)? {
            Outcome::Optimal => LpStatus::Optimal,
            Outcome::Unbounded => LpStatus::Unbounded,
        };
        Ok(self.finish(lp, status))
    }

    fn finish(mut self, lp: &LinearProgram, status: LpStatus) -> LpSolution {
        let mut primal = vec![0.0; self.n];
        for (r, &v) in self.basis.iter().enumerate() {
            if v < self.n {
                primal[v] = self.xb[r].max(0.0);
            }
        }
        let mut duals = vec![0.0; self.m];
        if status == LpStatus::Optimal {
            let mut cost = lp.objective.clone();
            cost.resize(self.cols.len(), 0.0);
            self.compute_duals(&cost);
            for i in 0..self.m {
                let y = self.sigma[i] * self.y[i];
                duals[i] = if y < 0.0 && y > -1e-9 { 0.0 } else { y };
            }
        }
        let objective_value = lp.objective.iter().zip(&primal).map(|(c, x)| c * x).sum();
        let mut basis: Vec<usize> =
            self.basis.iter().copied().filter(|&v| v < self.n + self.m).collect();
        basis.sort_unstable();
        LpSolution { status, primal, duals, objective_value, basis, iterations: self.iterations }
    }

    fn compute_duals(&mut self, cost: &[f64]) {
        let m = self.m;
        self.y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..m {
            let c = cost[self.basis[r]];
            if c != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for (yi, b) in self.y.iter_mut().zip(row) {
                    *yi += c * b;
                }
            }
        }
    }

    fn refresh_primal(&mut self) {
        let m = self.m;
        for r in 0..m {
            let row = &self.binv[r * m..(r + 1) * m];
            self.xb[r] = row.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        }
    }

    fn primal_residual(&self) -> f64 {
        let mut res = self.beta.clone();
        for (r, &v) in self.basis.iter().enumerate() {
            for &(i, a) in &self.cols[v] {
                res[i] -= a * self.xb[r];
            }
        }
        res.iter().fold(0.0f64, |a, b| a.max(b.abs()))
    }

    fn ftran(&self, j: usize, d: &mut [f64]) {
        let m = self.m;
        d.iter_mut().for_each(|v| *v = 0.0);
        for &(i, a) in &self.cols[j] {
            for (r, dr) in d.iter_mut().enumerate() {
                *dr += self.binv[r * m + i] * a;
            }
        }
        for v in d.iter_mut() {
            if v.abs() < DROP_TOL {
                *v = 0.0;
            }
        }
    }

    /// Replaces the basic variable of row `p` by `q` given `d = B⁻¹ a_q`.
    fn pivot(&mut self, p: usize, q: usize, d: &[f64]) {
        let m = self.m;
        let dp = d[p];
        let theta = self.xb[p].max(0.0) / dp;
        for r in 0..m {
            if d[r] != 0.0 {
                self.xb[r] -= theta * d[r];
            }
        }
        self.xb[p] = theta;
        self.update_inverse(p, dp, d);
        let leaving = self.basis[p];
        self.pos[leaving] = usize::MAX;
        self.basis[p] = q;
        self.pos[q] = p;
    }

    fn reduced_cost(&self, cost: &[f64], j: usize) -> f64 {
        cost[j] - self.cols[j].iter().map(|&(i, a)| self.y[i] * a).sum::<f64>()
    }

    fn run(&mut self, cost: &[f64], cap: usize) -> Result<Outcome> {
        let m = self.m;
        let total = self.cols.len();
        let cmax = cost.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        let opt_tol = 1e-11 * cmax;
        let bland_after = 3 * (m + total);
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut d = vec![0.0; m];
        let mut since_refresh = 0usize;
        self.compute_duals(cost);
        loop {
            if self.iterations >= cap {
                return Err(Error::Solver("simplex iteration limit reached".into()));
            }
            // Pricing.
            let mut enter = usize::MAX;
            let mut best = opt_tol;
            for j in 0..total {
                if self.pos[j] != usize::MAX || self.barred[j] {
                    continue;
                }
                let rc = self.reduced_cost(cost, j);
                if rc > best {
                    enter = j;
                    best = rc;
                    if bland {
                        break;
                    }
                }
            }
            if enter == usize::MAX {
                // Confirm with fresh duals and primal before declaring optimality.
                if since_refresh > 0 {
                    self.refresh(cost);
                    since_refresh = 0;
                    continue;
                }
                return Ok(Outcome::Optimal);
            }
            self.ftran(enter, &mut d);
            // Ratio test.
            let mut leave = usize::MAX;
            if bland {
                let mut min_ratio = f64::INFINITY;
                for r in 0..m {
                    if d[r] > PIVOT_TOL {
                        let ratio = self.xb[r].max(0.0) / d[r];
                        let better = ratio < min_ratio - 1e-12 * (1.0 + min_ratio)
                            || (ratio <= min_ratio + 1e-12 * (1.0 + min_ratio)
                                && leave != usize::MAX
                                && self.basis[r] < self.basis[leave]);
                        if leave == usize::MAX || better {
                            min_ratio = ratio.min(min_ratio);
                            leave = r;
                        }
                    }
                }
            } else {
                // Two-pass (Harris) test: bound the step with a small feasibility
                // allowance, then take the largest pivot among eligible rows.
                let mut bound = f64::INFINITY;
                for r in 0..m {
                    if d[r] > PIVOT_TOL {
                        bound = bound.min((self.xb[r].max(0.0) + FEAS_TOL) / d[r]);
                    }
                }
                let mut best_piv = 0.0;
                for r in 0..m {
                    if d[r] > PIVOT_TOL && self.xb[r].max(0.0) / d[r] <= bound && d[r] > best_piv {
                        best_piv = d[r];
                        leave = r;
                    }
                }
            }
            if leave == usize::MAX {
                return Ok(Outcome::Unbounded);
            }
            let theta = self.xb[leave].max(0.0) / d[leave];
            if theta <= 1e-12 {
                degenerate += 1;
                if degenerate > bland_after {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }
            let rc = best;
            self.pivot(leave, enter, &d);
            // Incremental dual update: y += rc · (new row `leave` of B⁻¹).
            let row = &self.binv[leave * m..(leave + 1) * m];
            for (yi, b) in self.y.iter_mut().zip(row) {
                *yi += rc * b;
            }
            for v in self.xb.iter_mut() {
                if *v < 0.0 && *v > -FEAS_TOL {
                    *v = 0.0;
                }
            }
            self.iterations += 1;
            since_refresh += 1;
            if since_refresh >= REFRESH_EVERY {
                self.refresh(cost);
                since_refresh = 0;
            }
        }
    }

    fn refresh(&mut self, cost: &[f64]) {
        self.refresh_primal();
        let bmax = self.beta.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        if self.primal_residual() > 1e-10 * bmax {
            self.reinvert();
            self.refresh_primal();
        }
        for v in self.xb.iter_mut() {
            if *v < 0.0 && *v > -FEAS_TOL * bmax {
                *v = 0.0;
            }
        }
        self.compute_duals(cost);
    }

    /// Rebuilds `B⁻¹` from scratch by pivoting the basic columns into an identity.
    fn reinvert(&mut self) {
        let m = self.m;
        self.binv.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            self.binv[i * m + i] = 1.0;
        }
        let old: Vec<usize> = self.basis.clone();
        for &v in &old {
            self.pos[v] = usize::MAX;
        }
        // Placeholder owner: row index means "identity column, unassigned".
        let mut owner: Vec<Option<usize>> = vec![None; m];
        let mut d = vec![0.0; m];
        let mut order: Vec<usize> = old.clone();
        order.sort_by_key(|&v| (self.cols[v].len() > 1, v));
        for v in order {
            self.ftran(v, &mut d);
            let mut p = usize::MAX;
            let mut best = 1e-9;
            for r in 0..m {
                if owner[r].is_none() && d[r].abs() > best {
                    best = d[r].abs();
                    p = r;
                }
            }
            if p == usize::MAX {
                continue;
            }
            self.basis[p] = v;
            self.pivot_inverse_only(p, &d);
            owner[p] = Some(v);
            self.pos[v] = p;
        }
        for r in 0..m {
            if owner[r].is_none() {
                // Singular basis: fall back to the row's own unit column.
                let v = if self.sigma[r] < 0.0 {
                    (self.n + m..self.cols.len()).find(|&j| self.cols[j][0].0 == r).unwrap()
                } else {
                    self.n + r
                };
                self.ftran(v, &mut d);
                self.basis[r] = v;
                self.pivot_inverse_only(r, &d);
                self.pos[v] = r;
            }
        }
    }

    fn pivot_inverse_only(&mut self, p: usize, d: &[f64]) {
        let dp = d[p];
        self.update_inverse(p, dp, d);
    }

    /// Row operations of a pivot on `p` given `d = B⁻¹ a_q`.
    fn update_inverse(&mut self, p: usize, dp: f64, d: &[f64]) {
        let m = self.m;
        let (head, rest) = self.binv.split_at_mut(p * m);
        let (prow, tail) = rest.split_at_mut(m);
        prow.iter_mut().for_each(|v| *v /= dp);
        for r in 0..m {
            if r == p || d[r] == 0.0 {
                continue;
            }
            let f = d[r];
            let row = if r < p {
                &mut head[r * m..(r + 1) * m]
            } else {
                let o = (r - p - 1) * m;
                &mut tail[o..o + m]
            };
            for (a, b) in row.iter_mut().zip(prow.iter()) {
                *a -= f * b;
            }
        }
    }

    fn drive_out_artificials(&mut self) {
        let m = self.m;
        let total = self.cols.len();
        let mut d = vec![0.0; m];
        for p in 0..m {
            if !self.artificial[self.basis[p]] {
                continue;
            }
            let row: Vec<f64> = self.binv[p * m..(p + 1) * m].to_vec();
            let mut best = 1e-9;
            let mut enter = usize::MAX;
            for j in 0..total {
                if self.pos[j] != usize::MAX || self.artificial[j] {
                    continue;
                }
                let a: f64 = self.cols[j].iter().map(|&(i, v)| row[i] * v).sum();
                if a.abs() > best {
                    best = a.abs();
                    enter = j;
                }
            }
            if enter != usize::MAX {
                self.xb[p] = 0.0;
                self.ftran(enter, &mut d);
                self.pivot(p, enter, &d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(c: Vec<f64>, a: &[Vec<f64>], b: Vec<f64>) -> LpSolution {
        solve_lp(&LinearProgram::from_dense(c, a, b)).unwrap()
    }

    #[test]
    fn single_variable() {
        let s = solve(vec![1.0], &[vec![1.0]], vec![5.0]);
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.primal, vec![5.0]);
        assert_eq!(s.duals, vec![1.0]);
        assert_eq!(s.objective_value, 5.0);
    }

    #[test]
    fn box_vertex() {
        let s = solve(vec![1.0, 1.0], &[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0]);
        assert_eq!(s.primal, vec![1.0, 1.0]);
        assert_eq!(s.objective_value, 2.0);
    }

    #[test]
    fn detects_unbounded_and_infeasible() {
        let s = solve(vec![1.0, 0.0], &[vec![-1.0, 1.0]], vec![1.0]);
        assert_eq!(s.status, LpStatus::Unbounded);
        // x ≤ 1 and x ≥ 2
        let s = solve(vec![1.0], &[vec![1.0], vec![-1.0]], vec![1.0, -2.0]);
        assert_eq!(s.status, LpStatus::Infeasible);
    }

    #[test]
    fn phase_one_lower_bounds() {
        // max -x - y s.t. x + y ≥ 3, x ≤ 2  →  objective -3
        let lp = LinearProgram::from_dense(
            vec![-1.0, -1.0],
            &[vec![-1.0, -1.0], vec![1.0, 0.0]],
            vec![-3.0, 2.0],
        );
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value + 3.0).abs() < 1e-12);
        let rep = dual_certificate_check(&lp, &s);
        assert!(rep.within_tolerance(&lp, s.objective_value), "{rep:?}");
    }

    #[test]
    fn certificate_flags_perturbations() {
        let lp = LinearProgram::from_dense(vec![1.0, 1.0], &[vec![1.0, 1.0]], vec![4.0]);
        let s = solve_lp(&lp).unwrap();
        let ok = dual_certificate_check(&lp, &s);
        assert!(ok.within_tolerance(&lp, s.objective_value));
        let mut bad = s.clone();
        bad.primal[0] += 0.1;
        assert!(dual_certificate_check(&lp, &bad).primal_residual > 0.05);
        let mut bad = s.clone();
        bad.duals[0] = 0.0;
        assert!(dual_certificate_check(&lp, &bad).dual_infeasibility > 0.5);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let mut lp = LinearProgram::new(1);
        lp.rows.push(vec![(3, 1.0)]);
        lp.rhs.push(1.0);
        assert!(solve_lp(&lp).is_err());
    }
}
