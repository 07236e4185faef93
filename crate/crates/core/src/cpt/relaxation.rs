//! The `K`-alternative relaxation, its solution, and the way back to
//! implementable lotteries.

use serde::{Deserialize, Serialize};

use super::weighting::{h_weights, Lottery, WeightingFunction};
use crate::error::{Error, Result};
use crate::instance::{completion_tier, derive_values, Matrix, ProblemInstance};
use crate::lp::{dual_certificate_check, solve_lp, CertificateReport, LinearProgram, LpStatus};
use crate::scheduler::{solve_sys_lp, KktResiduals};

/// Alternatives per user unless overridden.
pub const DEFAULT_K: usize = 20;
/// Largest granularity accepted.
pub const MAX_K: usize = 100;
/// Cap on the number of joint lottery profiles enumerated by
/// [`cpt_bruteforce_optimum`].
pub const BRUTE_FORCE_MAX_COMBINATIONS: u64 = 5_000_000;

/// Relative tolerance under which two alternatives count as equally valued.
const EQUAL_VALUE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptInstance {
    pub base: ProblemInstance,
    pub weights: Vec<WeightingFunction>,
    /// Number of equiprobable alternatives `K`.
    pub k: usize,
}

impl CptInstance {
    pub fn new(base: ProblemInstance, weights: Vec<WeightingFunction>, k: usize) -> Result<Self> {
        let ci = CptInstance { base, weights, k };
        let problems = ci.validate();
        if problems.is_empty() {
            Ok(ci)
        } else {
            Err(Error::Invalid(problems.join("; ")))
        }
    }

    /// Every user weighted by the same function.
    pub fn uniform(base: ProblemInstance, w: WeightingFunction, k: usize) -> Result<Self> {
        let n = base.n_users();
        CptInstance::new(base, vec![w; n], k)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = self.base.validate();
        if self.k == 0 || self.k > MAX_K {
            out.push(format!("K must be in 1..={MAX_K}, got {}", self.k));
        }
        if self.weights.len() != self.base.n_users() {
            out.push(format!("{} weighting functions for {} users", self.weights.len(), self.base.n_users()));
        }
        for (i, w) in self.weights.iter().enumerate() {
            for p in w.validate() {
                out.push(format!("weighting of user {i}: {p}"));
            }
        }
        out
    }

    /// `h[i][k]` for every user.
    pub fn decision_weights(&self) -> Matrix {
        self.weights.iter().map(|w| h_weights(w, self.k)).collect()
    }

    fn var(&self, k: usize, i: usize, t: usize) -> usize {
        (k * self.base.n_users() + i) * self.base.n_tiers() + t
    }
}

/// Per-alternative allocations `z[k][i][t]` together with the decision
/// weights `h[i][k]` they are valued with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotteryAllocation {
    pub z: Vec<Matrix>,
    pub h: Matrix,
}

impl LotteryAllocation {
    pub fn zeros(ci: &CptInstance) -> Self {
        let (n, t) = (ci.base.n_users(), ci.base.n_tiers());
        LotteryAllocation { z: vec![vec![vec![0.0; t]; n]; ci.k], h: ci.decision_weights() }
    }

    /// Average over alternatives, `p̂_{i,t}·J_i`.
    pub fn mean_allocation(&self) -> Matrix {
        let k = self.z.len().max(1) as f64;
        let mut out = self.z.first().map(|z| vec![vec![0.0; z[0].len()]; z.len()]).unwrap_or_default();
        for zk in &self.z {
            for (o, r) in out.iter_mut().zip(zk) {
                for (a, b) in o.iter_mut().zip(r) {
                    *a += b / k;
                }
            }
        }
        out
    }
}

/// Job duals `λ[i][k]`, capacity duals `μ[t]`, ordering duals `α[i][k]`
/// (`k = 0..K−1`, for the row comparing alternatives `k` and `k+1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptDuals {
    pub lambda: Matrix,
    pub mu: Vec<f64>,
    pub alpha: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CptLpResult {
    pub allocation: LotteryAllocation,
    /// Optimal value `V^R` of the relaxation.
    pub value: f64,
    pub duals: CptDuals,
    pub certificate: CertificateReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SysEuResult {
    /// Completion probability mass `p[i][t] = x[i][t]/J_i`.
    pub p: Matrix,
    pub value: f64,
}

/// Lotteries read off a relaxed solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub lotteries: Vec<Lottery>,
    /// Cumulative completion probabilities `q̃[i][t]`.
    pub q_tilde: Matrix,
    /// 1-sparse allocation implementing `q̃`.
    pub z_tilde: LotteryAllocation,
    /// Relaxed objective at `z̃`.
    pub v_tilde: f64,
    /// `Σ w(q̃)·u`; equal to `v_tilde`.
    pub v_cpt_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptGapReport {
    /// `1 − T·max J / min M`.
    pub factor: f64,
    pub v_relaxed: f64,
    pub v_extracted: f64,
    pub v_star: Option<f64>,
    /// `v_extracted ≥ factor·v_relaxed` (vacuous when the factor is not positive).
    pub bound_holds: bool,
    /// `v_extracted ≤ v_star ≤ v_relaxed`, when `v_star` is known.
    pub sandwich_holds: Option<bool>,
}

/// Variables `z[k][i][t]` at index `(k·N + i)·T + t`. Rows: `N·K` job rows
/// (user-major), `T` averaged capacity rows, then `N·(K−1)` ordering rows
/// `P̄_i(z_i(k+1)) − P̄_i(z_i(k)) ≤ 0`.
pub fn build_sys_cpt_k_r(ci: &CptInstance) -> LinearProgram {
    let (n, t_max, kk) = (ci.base.n_users(), ci.base.n_tiers(), ci.k);
    let f = ci.base.per_function();
    let h = ci.decision_weights();
    let mut lp = LinearProgram::new(kk * n * t_max);
    for k in 0..kk {
        for i in 0..n {
            for t in 0..t_max {
                lp.objective[ci.var(k, i, t)] = h[i][k] * f[i][t];
            }
        }
    }
    for i in 0..n {
        for k in 0..kk {
            lp.add_row((0..t_max).map(|t| (ci.var(k, i, t), 1.0)).collect(), ci.base.job_sizes[i]);
        }
    }
    let inv_k = 1.0 / kk as f64;
    for t in 0..t_max {
        let row = (0..kk).flat_map(|k| (0..n).map(move |i| (k, i))).map(|(k, i)| (ci.var(k, i, t), inv_k)).collect();
        lp.add_row(row, ci.base.capacities[t]);
    }
    for i in 0..n {
        for k in 0..kk.saturating_sub(1) {
            let mut row = Vec::with_capacity(2 * t_max);
            for t in 0..t_max {
                if f[i][t] != 0.0 {
                    row.push((ci.var(k + 1, i, t), f[i][t]));
                    row.push((ci.var(k, i, t), -f[i][t]));
                }
            }
            lp.add_row(row, 0.0);
        }
    }
    lp
}

pub fn solve_sys_cpt_k_r(ci: &CptInstance) -> Result<CptLpResult> {
    let (n, t_max, kk) = (ci.base.n_users(), ci.base.n_tiers(), ci.k);
    let lp = build_sys_cpt_k_r(ci);
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver(format!("lottery LP returned {:?}", sol.status)));
    }
    let z = (0..kk)
        .map(|k| (0..n).map(|i| (0..t_max).map(|t| sol.primal[ci.var(k, i, t)]).collect()).collect())
        .collect();
    let lambda = (0..n).map(|i| sol.duals[i * kk..(i + 1) * kk].to_vec()).collect();
    let mu = sol.duals[n * kk..n * kk + t_max].to_vec();
    let base = n * kk + t_max;
    let alpha = (0..n).map(|i| sol.duals[base + i * (kk - 1)..base + (i + 1) * (kk - 1)].to_vec()).collect();
    Ok(CptLpResult {
        allocation: LotteryAllocation { z, h: ci.decision_weights() },
        value: sol.objective_value,
        duals: CptDuals { lambda, mu, alpha },
        certificate: dual_certificate_check(&lp, &sol),
    })
}

/// `P̄_i(z_i(k)) = Σ_t F_{i,t} z_{i,t}(k)` for every user and alternative.
pub fn alternative_values(ci: &CptInstance, alloc: &LotteryAllocation) -> Matrix {
    let f = ci.base.per_function();
    (0..ci.base.n_users())
        .map(|i| alloc.z.iter().map(|zk| zk[i].iter().zip(&f[i]).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

/// `Σ_i Σ_k h_i(k)·P̄_i(z_i(k))` with each user's alternatives ranked by value
/// first, so the result is the relaxed value of any allocation, ordered or not.
pub fn cpt_relaxed_value(ci: &CptInstance, alloc: &LotteryAllocation) -> f64 {
    let h = ci.decision_weights();
    alternative_values(ci, alloc)
        .into_iter()
        .zip(&h)
        .map(|(mut vals, hi)| {
            vals.sort_by(|a, b| b.total_cmp(a));
            vals.iter().zip(hi).map(|(v, w)| v * w).sum::<f64>()
        })
        .sum()
}

/// Replaces every maximal run of consecutive equally valued alternatives of a
/// user by the run's average. Feasibility and objective are unchanged.
pub fn average_equal_value_runs(ci: &CptInstance, alloc: &LotteryAllocation) -> LotteryAllocation {
    let values = alternative_values(ci, alloc);
    let mut out = alloc.clone();
    let kk = alloc.z.len();
    for (i, vals) in values.iter().enumerate() {
        let scale = vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut start = 0;
        while start < kk {
            let mut end = start + 1;
            while end < kk && (vals[end] - vals[end - 1]).abs() <= EQUAL_VALUE_TOL * scale {
                end += 1;
            }
            if end - start > 1 {
                let len = (end - start) as f64;
                let t_max = alloc.z[start][i].len();
                let mean: Vec<f64> =
                    (0..t_max).map(|t| (start..end).map(|k| alloc.z[k][i][t]).sum::<f64>() / len).collect();
                for k in start..end {
                    out.z[k][i] = mean.clone();
                }
            }
            start = end;
        }
    }
    out
}

/// SYS-EU: the welfare LP read as completion probabilities `x/J`.
pub fn solve_sys_eu(inst: &ProblemInstance) -> Result<SysEuResult> {
    let sol = solve_sys_lp(inst)?;
    let p = sol
        .allocation
        .iter()
        .zip(&inst.job_sizes)
        .map(|(row, j)| row.iter().map(|x| x / j).collect())
        .collect();
    Ok(SysEuResult { p, value: sol.value })
}

/// Lotteries implied by `alloc`: each alternative completes at the first tier
/// where its prefix sum reaches `J_i`; `q̃` counts completed alternatives.
pub fn lottery_from_z(ci: &CptInstance, alloc: &LotteryAllocation) -> Result<Extraction> {
    let (n, t_max, kk) = (ci.base.n_users(), ci.base.n_tiers(), ci.k);
    if alloc.z.len() != kk || alloc.z.iter().any(|zk| zk.len() != n || zk.iter().any(|r| r.len() != t_max)) {
        return Err(Error::Shape(format!("lottery allocation must be {kk}x{n}x{t_max}")));
    }
    let mut counts = vec![vec![0usize; t_max]; n];
    for zk in &alloc.z {
        for i in 0..n {
            let end = completion_tier(&zk[i], ci.base.job_sizes[i]);
            for c in counts[i].iter_mut().skip(end) {
                *c += 1;
            }
        }
    }
    let q_tilde: Matrix = counts.iter().map(|r| r.iter().map(|&c| c as f64 / kk as f64).collect()).collect();
    let z_tilde = z_from_counts(ci, &counts);
    let v_tilde = cpt_relaxed_value(ci, &z_tilde);
    let v_cpt_k = cpt_objective_of_q(ci, &q_tilde)?;
    let lotteries = counts
        .iter()
        .map(|r| {
            let mut outcomes = Vec::new();
            let mut prev = 0;
            for (t, &c) in r.iter().enumerate() {
                if c > prev {
                    outcomes.push(((c - prev) as f64 / kk as f64, t));
                }
                prev = c;
            }
            if prev < kk {
                outcomes.push(((kk - prev) as f64 / kk as f64, t_max));
            }
            Lottery { outcomes }
        })
        .collect();
    Ok(Extraction { lotteries, q_tilde, z_tilde, v_tilde, v_cpt_k })
}

/// Alternative `k` (1-based) of user `i` receives `J_i` in tier `t` exactly
/// when `c[i][t−1] < k ≤ c[i][t]`.
fn z_from_counts(ci: &CptInstance, counts: &[Vec<usize>]) -> LotteryAllocation {
    let mut out = LotteryAllocation::zeros(ci);
    for (i, row) in counts.iter().enumerate() {
        let mut prev = 0;
        for (t, &c) in row.iter().enumerate() {
            for k in prev..c {
                out.z[k][i][t] = ci.base.job_sizes[i];
            }
            prev = prev.max(c);
        }
    }
    out
}

fn grid_counts(ci: &CptInstance, q: &Matrix) -> Result<Vec<Vec<usize>>> {
    let (n, t_max, kk) = (ci.base.n_users(), ci.base.n_tiers(), ci.k);
    if q.len() != n || q.iter().any(|r| r.len() != t_max) {
        return Err(Error::Shape(format!("q must be {n}x{t_max}")));
    }
    let mut out = Vec::with_capacity(n);
    for (i, row) in q.iter().enumerate() {
        let mut counts = Vec::with_capacity(t_max);
        let mut prev = 0;
        for &v in row {
            let scaled = v * kk as f64;
            let c = scaled.round();
            if (scaled - c).abs() > 1e-9 * kk as f64 || c < 0.0 || c > kk as f64 {
                return Err(Error::Invalid(format!("q[{i}] entry {v} is not on the 1/{kk} grid")));
            }
            let c = c as usize;
            if c < prev {
                return Err(Error::Invalid(format!("q[{i}] is not nondecreasing")));
            }
            counts.push(c);
            prev = c;
        }
        out.push(counts);
    }
    Ok(out)
}

/// 1-sparse lottery allocation implementing grid probabilities `q`.
pub fn z_from_q(ci: &CptInstance, q: &Matrix) -> Result<LotteryAllocation> {
    Ok(z_from_counts(ci, &grid_counts(ci, q)?))
}

/// `Σ_i Σ_t w_i(q_{i,t})·u_{i,t}`.
pub fn cpt_objective_of_q(ci: &CptInstance, q: &Matrix) -> Result<f64> {
    let (n, t_max) = (ci.base.n_users(), ci.base.n_tiers());
    if q.len() != n || q.iter().any(|r| r.len() != t_max) {
        return Err(Error::Shape(format!("q must be {n}x{t_max}")));
    }
    let u = derive_values(&ci.base).marginal;
    let mut total = 0.0;
    for i in 0..n {
        let mut prev = 0.0;
        for t in 0..t_max {
            let v = q[i][t];
            if !(v >= -1e-12 && v <= 1.0 + 1e-12) || v < prev - 1e-12 {
                return Err(Error::Invalid(format!("q[{i}] must be nondecreasing in [0, 1]")));
            }
            prev = v;
            total += ci.weights[i].eval(v)? * u[i][t];
        }
    }
    Ok(total)
}

/// Gap bound and, when `v_star` is given, the sandwich `Ṽ ≤ V* ≤ V^R`.
pub fn cpt_gap_bound(ci: &CptInstance, v_relaxed: f64, v_extracted: f64, v_star: Option<f64>) -> CptGapReport {
    let max_j = ci.base.job_sizes.iter().fold(0.0f64, |a, &b| a.max(b));
    let min_m = ci.base.capacities.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let factor = 1.0 - ci.base.n_tiers() as f64 * max_j / min_m;
    let tol = 1e-9 * v_relaxed.abs().max(1.0);
    let bound_holds = factor <= 0.0 || v_extracted >= factor * v_relaxed - tol;
    let sandwich_holds = v_star.map(|s| v_extracted <= s + tol && s <= v_relaxed + tol);
    CptGapReport { factor, v_relaxed, v_extracted, v_star, bound_holds, sandwich_holds }
}

/// Optimum of the discretized problem by enumerating every grid lottery per
/// user. A profile is implementable when earliest-deadline service fits:
/// `Σ_i q_{i,t}·J_i ≤ Σ_{s≤t} M_s` for all `t`.
pub fn cpt_bruteforce_optimum(ci: &CptInstance) -> Result<(f64, Matrix)> {
    let (n, t_max, kk) = (ci.base.n_users(), ci.base.n_tiers(), ci.k);
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut cur = vec![0usize; t_max];
    fn rec(t: usize, lo: usize, kk: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if t == cur.len() {
            out.push(cur.clone());
            return;
        }
        for c in lo..=kk {
            cur[t] = c;
            rec(t + 1, c, kk, cur, out);
        }
    }
    rec(0, 0, kk, &mut cur, &mut rows);
    let total = (rows.len() as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if total > BRUTE_FORCE_MAX_COMBINATIONS {
        return Err(Error::SizeGuard(format!("{total} lottery profiles exceed {BRUTE_FORCE_MAX_COMBINATIONS}")));
    }
    let u = derive_values(&ci.base).marginal;
    // Per user: (cumulative demand by tier, value) for every grid row.
    let options: Vec<Vec<(Vec<f64>, f64)>> = (0..n)
        .map(|i| {
            rows.iter()
                .map(|r| {
                    let demand = r.iter().map(|&c| c as f64 / kk as f64 * ci.base.job_sizes[i]).collect();
                    let value = (0..t_max).map(|t| ci.weights[i].eval_clamped(r[t] as f64 / kk as f64) * u[i][t]).sum();
                    (demand, value)
                })
                .collect()
        })
        .collect();
    let supply: Vec<f64> = ci
        .base
        .capacities
        .iter()
        .scan(0.0, |acc, m| {
            *acc += m;
            Some(*acc)
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, vec![0usize; n]);
    let mut choice = vec![0usize; n];
    let mut load = vec![vec![0.0; t_max]; n + 1];
    #[allow(clippy::too_many_arguments)]
    fn search(
        i: usize,
        value: f64,
        options: &[Vec<(Vec<f64>, f64)>],
        supply: &[f64],
        load: &mut Vec<Vec<f64>>,
        choice: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
    ) {
        if i == options.len() {
            if value > best.0 {
                *best = (value, choice.clone());
            }
            return;
        }
        for (o, (demand, v)) in options[i].iter().enumerate() {
            let next: Vec<f64> = load[i].iter().zip(demand).map(|(a, b)| a + b).collect();
            if next.iter().zip(supply).any(|(d, s)| *d > s + 1e-9 * s.max(1.0)) {
                continue;
            }
            load[i + 1] = next;
            choice[i] = o;
            search(i + 1, value + v, options, supply, load, choice, best);
        }
    }
    search(0, 0.0, &options, &supply, &mut load, &mut choice, &mut best);
    let q = best.1.iter().map(|&o| rows[o].iter().map(|&c| c as f64 / kk as f64).collect()).collect();
    Ok((best.0, q))
}

/// Optimality residuals of `(z, λ, μ, α)` for the relaxation. The capacity
/// row carries `1/K`, so the price enters each reduced cost as `μ_t/K`.
pub fn cpt_kkt_residuals(ci: &CptInstance, alloc: &LotteryAllocation, duals: &CptDuals) -> KktResiduals {
    let (n, t_max, kk) = (ci.base.n_users(), ci.base.n_tiers(), ci.k);
    let f = ci.base.per_function();
    let h = ci.decision_weights();
    let values = alternative_values(ci, alloc);
    let tol = 1e-9;
    let mut dual_feasibility = 0.0f64;
    let mut stationarity = 0.0f64;
    let mut complementarity = 0.0f64;
    for v in duals.lambda.iter().flatten().chain(&duals.mu).chain(duals.alpha.iter().flatten()) {
        dual_feasibility = dual_feasibility.max(-v);
    }
    let alpha = |i: usize, k: isize| -> f64 {
        if k < 0 || k as usize >= kk - 1 {
            0.0
        } else {
            duals.alpha[i][k as usize]
        }
    };
    for k in 0..kk {
        for i in 0..n {
            for t in 0..t_max {
                let reduced = h[i][k] * f[i][t] - duals.lambda[i][k] - duals.mu[t] / kk as f64
                    + f[i][t] * (alpha(i, k as isize) - alpha(i, k as isize - 1));
                dual_feasibility = dual_feasibility.max(reduced);
                if alloc.z[k][i][t] > tol {
                    stationarity = stationarity.max(reduced.abs());
                }
            }
        }
    }
    for i in 0..n {
        for k in 0..kk {
            let used: f64 = alloc.z[k][i].iter().sum();
            complementarity = complementarity.max((duals.lambda[i][k] * (ci.base.job_sizes[i] - used)).abs());
        }
        for k in 0..kk.saturating_sub(1) {
            complementarity = complementarity.max((duals.alpha[i][k] * (values[i][k] - values[i][k + 1])).abs());
        }
    }
    for t in 0..t_max {
        let used: f64 = alloc.z.iter().map(|zk| zk.iter().map(|r| r[t]).sum::<f64>()).sum::<f64>() / kk as f64;
        complementarity = complementarity.max((duals.mu[t] * (ci.base.capacities[t] - used)).abs());
    }
    KktResiduals { dual_feasibility, stationarity, complementarity }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ProblemInstance {
        ProblemInstance::new(
            vec![vec![3.0, 0.0, 0.0], vec![4.0, 2.5, 1.0], vec![2.0, 2.0, 2.0]],
            vec![10.0; 3],
            vec![10.0; 3],
        )
    }

    #[test]
    fn lp_shape() {
        let one = ProblemInstance::new(vec![vec![1.0]], vec![1.0], vec![1.0]);
        let ci = CptInstance::uniform(one, WeightingFunction::Identity, 2).unwrap();
        let lp = build_sys_cpt_k_r(&ci);
        assert_eq!(lp.n_vars(), 2);
        assert_eq!(lp.n_rows(), 4);
        let ci = CptInstance::uniform(toy(), WeightingFunction::Identity, 1).unwrap();
        assert_eq!(build_sys_cpt_k_r(&ci).n_rows(), 6);
    }

    #[test]
    fn toy_identity_reduces_to_eu() {
        let eu = solve_sys_eu(&toy()).unwrap();
        assert!((eu.value - 7.5).abs() < 1e-9);
        for i in 0..3 {
            for t in 0..3 {
                assert!((eu.p[i][t] - if i == t { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
        let ci = CptInstance::uniform(toy(), WeightingFunction::Identity, 2).unwrap();
        let r = solve_sys_cpt_k_r(&ci).unwrap();
        assert!((r.value - 7.5).abs() < 1e-9);
        let ex = lottery_from_z(&ci, &r.allocation).unwrap();
        assert!((ex.v_cpt_k - 7.5).abs() < 1e-9);
        assert!((ex.v_tilde - ex.v_cpt_k).abs() < 1e-9);
        for i in 0..3 {
            for t in 0..3 {
                assert_eq!(ex.q_tilde[i][t], if t >= i { 1.0 } else { 0.0 });
            }
        }
        assert!((cpt_objective_of_q(&ci, &ex.q_tilde).unwrap() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn grid_round_trip() {
        let base = ProblemInstance::new(vec![vec![3.0, 1.0]], vec![4.0], vec![4.0, 4.0]);
        let ci = CptInstance::uniform(base, WeightingFunction::Prelec { gamma: 0.6 }, 2).unwrap();
        let z = z_from_q(&ci, &vec![vec![0.5, 1.0]]).unwrap();
        assert_eq!(z.z[0][0], vec![4.0, 0.0]);
        assert_eq!(z.z[1][0], vec![0.0, 4.0]);
        let ex = lottery_from_z(&ci, &z).unwrap();
        assert_eq!(ex.q_tilde, vec![vec![0.5, 1.0]]);
        assert_eq!(ex.z_tilde, z);
        assert!(z_from_q(&ci, &vec![vec![0.3, 1.0]]).is_err());
        assert!(z_from_q(&ci, &vec![vec![1.0, 0.5]]).is_err());
        let last = z_from_q(&ci, &vec![vec![0.0, 1.0]]).unwrap();
        assert!(last.z.iter().all(|zk| zk[0] == vec![0.0, 4.0]));
    }

    #[test]
    fn objective_of_q_edges() {
        let ci = CptInstance::uniform(toy(), WeightingFunction::Prelec { gamma: 0.5 }, 4).unwrap();
        let first = vec![vec![1.0; 3]; 3];
        assert!((cpt_objective_of_q(&ci, &first).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(cpt_objective_of_q(&ci, &vec![vec![0.0; 3]; 3]).unwrap(), 0.0);
        assert!(cpt_objective_of_q(&ci, &vec![vec![1.0, 0.5, 1.0]; 3]).is_err());
    }

    #[test]
    fn never_completing_alternative() {
        let base = ProblemInstance::new(vec![vec![3.0, 1.0]], vec![4.0], vec![4.0, 4.0]);
        let ci = CptInstance::uniform(base, WeightingFunction::Identity, 2).unwrap();
        let alloc = LotteryAllocation { z: vec![vec![vec![4.0, 0.0]], vec![vec![1.0, 1.0]]], h: ci.decision_weights() };
        let ex = lottery_from_z(&ci, &alloc).unwrap();
        assert_eq!(ex.q_tilde, vec![vec![0.5, 0.5]]);
        assert_eq!(ex.lotteries[0].outcomes, vec![(0.5, 0), (0.5, 2)]);
    }

    #[test]
    fn single_user_dominant_tier() {
        let base = ProblemInstance::new(vec![vec![6.0, 2.0, 1.0]], vec![3.0], vec![10.0; 3]);
        let ci = CptInstance::uniform(base, WeightingFunction::TwoParam { delta: 0.7, gamma: 0.4 }, 5).unwrap();
        let r = solve_sys_cpt_k_r(&ci).unwrap();
        assert!((r.value - 6.0).abs() < 1e-9);
        for zk in &r.allocation.z {
            assert!((zk[0][0] - 3.0).abs() < 1e-9);
        }
    }
}
