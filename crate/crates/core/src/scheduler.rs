//! Welfare maximization: the LP relaxation with shadow prices, exact solvers
//! for small instances, rounding and the relaxation gap bounds.

use crate::error::{Error, Result};
use crate::instance::{derive_values, realized_welfare, Allocation, Matrix, ProblemInstance};
use crate::lp::{dual_certificate_check, solve_lp, CertificateReport, LinearProgram, LpStatus};

/// Largest instance accepted by the permutation enumerator.
pub const BRUTE_FORCE_MAX_USERS: usize = 9;
/// Largest number of binaries accepted by branch-and-bound.
pub const BNB_MAX_BINARIES: usize = 60;
/// `y^R ≥ 1 − ROUNDING_TOL` counts as completion.
pub const ROUNDING_TOL: f64 = 1e-6;
/// Entries within this (relative) distance of `0` or `J_i` are not partial.
const PARTIAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SysLpResult {
    pub allocation: Allocation,
    /// Duals of the job rows.
    pub user_duals: Vec<f64>,
    /// Duals of the capacity rows: the tier prices.
    pub tier_prices: Vec<f64>,
    pub value: f64,
    pub certificate: CertificateReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundedResult {
    pub y_relaxed: Matrix,
    pub y_integral: Vec<Vec<u8>>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub allocation: Allocation,
    pub value: f64,
    pub ordering: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapBound {
    pub standard: f64,
    pub tight: f64,
}

/// Residuals of the welfare-LP optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// Largest `F − λ − μ` over all entries.
    pub dual_feasibility: f64,
    /// Largest `|F − λ − μ|` over entries with positive allocation.
    pub stationarity: f64,
    /// Largest `μ_t · slack_t` and `λ_i · slack_i`.
    pub complementarity: f64,
}

/// Variables `x[i][t]` at index `i·T + t`; rows are the `N` job rows followed
/// by the `T` capacity rows.
pub fn build_sys_lp(inst: &ProblemInstance) -> LinearProgram {
    let n = inst.n_users();
    let t = inst.n_tiers();
    let f = inst.per_function();
    let mut lp = LinearProgram::new(n * t);
    for i in 0..n {
        for s in 0..t {
            lp.objective[i * t + s] = f[i][s];
        }
    }
    for i in 0..n {
        lp.add_row((0..t).map(|s| (i * t + s, 1.0)).collect(), inst.job_sizes[i]);
    }
    for s in 0..t {
        lp.add_row((0..n).map(|i| (i * t + s, 1.0)).collect(), inst.capacities[s]);
    }
    lp
}

pub fn solve_sys_lp(inst: &ProblemInstance) -> Result<SysLpResult> {
    let n = inst.n_users();
    let t = inst.n_tiers();
    let lp = build_sys_lp(inst);
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver(format!("welfare LP returned {:?}", sol.status)));
    }
    let allocation = (0..n).map(|i| sol.primal[i * t..(i + 1) * t].to_vec()).collect();
    Ok(SysLpResult {
        allocation,
        user_duals: sol.duals[..n].to_vec(),
        tier_prices: sol.duals[n..].to_vec(),
        value: sol.objective_value,
        certificate: dual_certificate_check(&lp, &sol),
    })
}

/// Checks the optimality conditions of the welfare LP for `(x, λ, μ)`.
pub fn sys_kkt_residuals(inst: &ProblemInstance, x: &Allocation, lambda: &[f64], mu: &[f64]) -> KktResiduals {
    let f = inst.per_function();
    let mut r = KktResiduals::default();
    for (i, row) in x.iter().enumerate() {
        for (t, &v) in row.iter().enumerate() {
            let gap = f[i][t] - lambda[i] - mu[t];
            r.dual_feasibility = r.dual_feasibility.max(gap);
            if v > 1e-9 {
                r.stationarity = r.stationarity.max(gap.abs());
            }
        }
        let slack = inst.job_sizes[i] - row.iter().sum::<f64>();
        r.complementarity = r.complementarity.max((lambda[i] * slack).abs());
    }
    for t in 0..inst.n_tiers() {
        let slack = inst.capacities[t] - x.iter().map(|row| row[t]).sum::<f64>();
        r.complementarity = r.complementarity.max((mu[t] * slack).abs());
    }
    r
}

/// Non-preemptive fill: users in `ordering` take the remaining capacity tier
/// by tier until their job is done.
pub fn greedy_allocation(inst: &ProblemInstance, ordering: &[usize]) -> Allocation {
    let t_max = inst.n_tiers();
    let mut x = vec![vec![0.0; t_max]; inst.n_users()];
    let mut remaining = inst.capacities.clone();
    let mut t = 0;
    for &i in ordering {
        let mut need = inst.job_sizes[i];
        while need > 0.0 && t < t_max {
            let take = need.min(remaining[t].max(0.0));
            x[i][t] += take;
            need -= take;
            remaining[t] -= take;
            if remaining[t] <= 0.0 {
                t += 1;
            }
        }
        if t >= t_max {
            break;
        }
    }
    x
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Exact optimum by enumerating every service order (lexicographic; the first
/// maximizer wins).
pub fn solve_sys_exact_bruteforce(inst: &ProblemInstance) -> Result<ExactResult> {
    let n = inst.n_users();
    if n > BRUTE_FORCE_MAX_USERS {
        return Err(Error::SizeGuard(format!(
            "{n} users exceeds the enumeration limit of {BRUTE_FORCE_MAX_USERS}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<ExactResult> = None;
    loop {
        let x = greedy_allocation(inst, &perm);
        let v = realized_welfare(inst, &x)?;
        if best.as_ref().map_or(true, |b| v > b.value) {
            best = Some(ExactResult { allocation: x, value: v, ordering: perm.clone() });
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best.expect("at least one ordering"))
}

/// `y^R = prefix(x)/J`, `ŷ = 1{y^R ≥ 1 − tol}` and `V̂ = Σ u·ŷ`.
pub fn round_lp_solution(inst: &ProblemInstance, x: &Allocation) -> RoundedResult {
    let u = derive_values(inst).marginal;
    let mut y_relaxed = Vec::with_capacity(x.len());
    let mut y_integral = Vec::with_capacity(x.len());
    let mut value = 0.0;
    for (i, row) in x.iter().enumerate() {
        let mut acc = 0.0;
        let mut yr = Vec::with_capacity(row.len());
        let mut yi = Vec::with_capacity(row.len());
        for (t, &v) in row.iter().enumerate() {
            acc += v;
            let y = acc / inst.job_sizes[i];
            let done = y >= 1.0 - ROUNDING_TOL;
            if done {
                value += u[i][t];
            }
            yr.push(y);
            yi.push(done as u8);
        }
        y_relaxed.push(yr);
        y_integral.push(yi);
    }
    RoundedResult { y_relaxed, y_integral, value }
}

/// Relaxation quality factors `1 − T·maxJ/minM` and `1 − maxJ/minM`.
pub fn gap_bound(inst: &ProblemInstance) -> GapBound {
    let max_j = inst.job_sizes.iter().fold(0.0f64, |a, &b| a.max(b));
    let min_m = inst.capacities.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let ratio = max_j / min_m;
    GapBound { standard: 1.0 - inst.n_tiers() as f64 * ratio, tight: 1.0 - ratio }
}

fn is_partial(v: f64, j: f64) -> bool {
    v > PARTIAL_TOL * j && v < j * (1.0 - PARTIAL_TOL)
}

/// Number of entries with `0 < x[i][t] < J_i`.
pub fn count_partial(x: &Allocation, job_sizes: &[f64]) -> usize {
    x.iter()
        .zip(job_sizes)
        .map(|(row, &j)| row.iter().filter(|&&v| is_partial(v, j)).count())
        .sum()
}

/// Whether every tier holds at most one partially served user, the condition
/// under which [`GapBound::tight`] applies.
pub fn at_most_one_partial_per_tier(x: &Allocation, job_sizes: &[f64]) -> bool {
    let t_max = x.first().map_or(0, |r| r.len());
    (0..t_max).all(|t| {
        x.iter().zip(job_sizes).filter(|(row, &j)| is_partial(row[t], j)).count() <= 1
    })
}

pub fn count_nonzero(x: &Allocation) -> usize {
    x.iter().flatten().filter(|&&v| v > 1e-12).count()
}

/// Exact optimum by branch-and-bound over the completion indicators of the
/// integer program. Nodes are explored depth-first, branching on the
/// fractional indicator with the largest marginal utility.
pub fn solve_sys_ilp_bnb(inst: &ProblemInstance) -> Result<ExactResult> {
    let n = inst.n_users();
    let t = inst.n_tiers();
    if n * t > BNB_MAX_BINARIES {
        return Err(Error::SizeGuard(format!(
            "{} binaries exceeds the branch-and-bound limit of {BNB_MAX_BINARIES}",
            n * t
        )));
    }
    let u = derive_values(inst).marginal;
    let mut incumbent = (-1.0f64, vec![vec![0.0; t]; n]);
    let consider = |x: &Allocation, inc: &mut (f64, Allocation)| -> Result<()> {
        let v = realized_welfare(inst, x)?;
        if v > inc.0 {
            *inc = (v, x.clone());
        }
        Ok(())
    };
    // Fixings: None = free, Some(b) = fixed to b.
    let mut stack: Vec<Vec<Option<bool>>> = vec![vec![None; n * t]];
    while let Some(fix) = stack.pop() {
        let Some((bound, x, y)) = bnb_relaxation(inst, &u, &fix)? else { continue };
        consider(&x, &mut incumbent)?;
        if bound <= incumbent.0 + 1e-9 {
            continue;
        }
        let mut branch = None;
        let mut best_u = -1.0;
        for k in 0..n * t {
            if fix[k].is_none() && y[k] > 1e-9 && y[k] < 1.0 - 1e-9 && u[k / t][k % t] > best_u {
                best_u = u[k / t][k % t];
                branch = Some(k);
            }
        }
        let Some(k) = branch else { continue };
        let mut zero = fix.clone();
        zero[k] = Some(false);
        let mut one = fix;
        one[k] = Some(true);
        stack.push(zero);
        stack.push(one);
    }
    let (value, allocation) = incumbent;
    let prof = crate::instance::completion_times(inst, &allocation)?;
    let mut ordering: Vec<usize> = (0..n).collect();
    ordering.sort_by_key(|&i| prof.completion_tier[i]);
    Ok(ExactResult { allocation, value: value.max(0.0), ordering })
}

/// LP relaxation of a node: variables `x` (N·T) then `y` (N·T).
fn bnb_relaxation(
    inst: &ProblemInstance,
    u: &Matrix,
    fix: &[Option<bool>],
) -> Result<Option<(f64, Allocation, Vec<f64>)>> {
    let n = inst.n_users();
    let t = inst.n_tiers();
    let nt = n * t;
    let mut lp = LinearProgram::new(2 * nt);
    for i in 0..n {
        for s in 0..t {
            lp.objective[nt + i * t + s] = u[i][s];
        }
    }
    for i in 0..n {
        lp.add_row((0..t).map(|s| (i * t + s, 1.0)).collect(), inst.job_sizes[i]);
    }
    for s in 0..t {
        lp.add_row((0..n).map(|i| (i * t + s, 1.0)).collect(), inst.capacities[s]);
    }
    for i in 0..n {
        for s in 0..t {
            let k = i * t + s;
            let mut row = vec![(nt + k, 1.0)];
            row.extend((0..=s).map(|r| (i * t + r, -1.0 / inst.job_sizes[i])));
            lp.add_row(row, 0.0);
            match fix[k] {
                None => {
                    lp.add_row(vec![(nt + k, 1.0)], 1.0);
                }
                Some(false) => {
                    lp.add_row(vec![(nt + k, 1.0)], 0.0);
                }
                Some(true) => {
                    lp.add_row(vec![(nt + k, 1.0)], 1.0);
                    lp.add_row(vec![(nt + k, -1.0)], -1.0);
                }
            }
        }
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Ok(None),
        LpStatus::Unbounded => return Err(Error::Solver("unbounded node relaxation".into())),
    }
    let x = (0..n).map(|i| sol.primal[i * t..(i + 1) * t].to_vec()).collect();
    Ok(Some((sol.objective_value, x, sol.primal[nt..].to_vec())))
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

    fn diag10() -> Allocation {
        (0..3).map(|i| (0..3).map(|t| if i == t { 10.0 } else { 0.0 }).collect()).collect()
    }

    #[test]
    fn lp_shape() {
        let lp = build_sys_lp(&toy());
        assert_eq!((lp.n_vars(), lp.n_rows()), (9, 6));
        let one = ProblemInstance::new(vec![vec![1.0]], vec![1.0], vec![1.0]);
        let lp = build_sys_lp(&one);
        assert_eq!((lp.n_vars(), lp.n_rows()), (1, 2));
    }

    #[test]
    fn toy_prices() {
        let r = solve_sys_lp(&toy()).unwrap();
        assert!((r.value - 7.5).abs() < 1e-9);
        for i in 0..3 {
            for t in 0..3 {
                assert!((r.allocation[i][t] - diag10()[i][t]).abs() < 1e-7);
            }
        }
        let mu = &r.tier_prices;
        assert!(mu[0] >= 0.15 - 1e-9 && mu[0] <= 0.3 + 1e-9);
        assert!(mu[1] >= -1e-9 && mu[1] <= 0.25 + 1e-9);
        assert!(mu[2] >= -1e-9 && mu[2] <= 0.2 + 1e-9);
        assert!(mu[0] - mu[1] >= 0.15 - 1e-9);
        assert!(mu[1] >= mu[2] - 1e-9);
        let k = sys_kkt_residuals(&toy(), &r.allocation, &r.user_duals, &r.tier_prices);
        assert!(k.dual_feasibility < 1e-7 && k.stationarity < 1e-7 && k.complementarity < 1e-7);
    }

    #[test]
    fn zero_and_slack_prices() {
        let z = ProblemInstance::new(vec![vec![0.0; 2]; 2], vec![3.0, 4.0], vec![5.0, 5.0]);
        let r = solve_sys_lp(&z).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.tier_prices.iter().all(|&m| m == 0.0));

        let one = ProblemInstance::new(vec![vec![6.0, 2.0]], vec![3.0], vec![5.0, 5.0]);
        let r = solve_sys_lp(&one).unwrap();
        assert_eq!(r.allocation, vec![vec![3.0, 0.0]]);
        assert!((r.user_duals[0] - 2.0).abs() < 1e-12);
        assert!(r.tier_prices.iter().all(|&m| m.abs() < 1e-12));
    }

    #[test]
    fn greedy_examples() {
        let inst = toy();
        assert_eq!(greedy_allocation(&inst, &[0, 1, 2]), diag10());
        let rev = greedy_allocation(&inst, &[2, 1, 0]);
        assert_eq!(realized_welfare(&inst, &rev).unwrap(), 4.5);
        let one = ProblemInstance::new(vec![vec![2.0, 1.0]], vec![15.0], vec![10.0, 10.0]);
        assert_eq!(greedy_allocation(&one, &[0]), vec![vec![10.0, 5.0]]);
    }

    #[test]
    fn exact_solvers_on_toy() {
        let b = solve_sys_exact_bruteforce(&toy()).unwrap();
        assert_eq!(b.value, 7.5);
        assert_eq!(b.ordering, vec![0, 1, 2]);
        assert_eq!(solve_sys_ilp_bnb(&toy()).unwrap().value, 7.5);
    }

    #[test]
    fn exact_picks_better_user_when_one_fits() {
        let inst = ProblemInstance::new(vec![vec![2.0], vec![5.0]], vec![4.0, 4.0], vec![4.0]);
        let b = solve_sys_exact_bruteforce(&inst).unwrap();
        assert_eq!(b.value, 5.0);
        assert_eq!(solve_sys_ilp_bnb(&inst).unwrap().value, 5.0);
    }

    #[test]
    fn guards() {
        let big = ProblemInstance::new(vec![vec![1.0]; 10], vec![1.0; 10], vec![5.0]);
        assert!(matches!(solve_sys_exact_bruteforce(&big), Err(Error::SizeGuard(_))));
        let wide = ProblemInstance::new(vec![vec![1.0; 7]; 9], vec![1.0; 9], vec![5.0; 7]);
        assert!(matches!(solve_sys_ilp_bnb(&wide), Err(Error::SizeGuard(_))));
    }

    #[test]
    fn rounding_examples() {
        let inst = toy();
        let r = round_lp_solution(&inst, &diag10());
        assert_eq!(r.value, 7.5);
        assert_eq!(r.y_integral, vec![vec![1, 1, 1], vec![0, 1, 1], vec![0, 0, 1]]);
        let one = ProblemInstance::new(vec![vec![4.0, 3.0]], vec![10.0], vec![10.0, 10.0]);
        let r = round_lp_solution(&one, &vec![vec![5.0, 5.0]]);
        assert_eq!(r.y_integral, vec![vec![0, 1]]);
        assert_eq!(r.value, 3.0);
        assert_eq!(round_lp_solution(&inst, &vec![vec![0.0; 3]; 3]).value, 0.0);
    }

    #[test]
    fn gap_bound_examples() {
        let inst = ProblemInstance::new(vec![vec![1.0; 5], vec![1.0; 5]], vec![90.0, 10.0], vec![5000.0; 5]);
        assert!((gap_bound(&inst).standard - 0.91).abs() < 1e-12);
        let eq = ProblemInstance::new(vec![vec![1.0]], vec![7.0], vec![7.0]);
        assert_eq!(gap_bound(&eq).standard, 0.0);
        assert_eq!(gap_bound(&toy()).standard, -2.0);
    }

    #[test]
    fn partial_counts() {
        assert_eq!(count_partial(&diag10(), &[10.0; 3]), 0);
        assert_eq!(count_partial(&vec![vec![5.0, 5.0]], &[10.0]), 2);
    }
}
