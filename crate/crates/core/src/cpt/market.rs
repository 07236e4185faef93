//! Budget/price protocol for lottery allocation. Every alternative carries
//! weight `δ_k = 1/K` in the capacity constraint, so with `K = 1` the whole
//! protocol coincides with the deterministic one.

use super::relaxation::{cpt_relaxed_value, CptInstance, LotteryAllocation};
use crate::error::{Error, Result};
use crate::instance::Matrix;
use crate::lp::{solve_lp, LinearProgram, LpStatus};
use crate::market::{
    adapt_steps, capped_water_fill, round_steps, clearing_residual, dual_gradient_step_at, han_weighted, RoundSummary, TrackingParams, TrajectoryRow,
    CLEARING_TOL, INITIAL_PRICE,
};

pub type CptTrajectoryRow = TrajectoryRow;

#[derive(Debug, Clone, PartialEq)]
pub struct CptProjection {
    pub z: Vec<Matrix>,
    pub iterations: usize,
    pub warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CptTrackingResult {
    pub prices: Vec<f64>,
    /// `m[k][i][t]`.
    pub budgets: Vec<Matrix>,
    pub allocation: LotteryAllocation,
    pub objective: f64,
    pub rounds: usize,
    pub stopped_on_tolerance: bool,
    pub converged: bool,
    pub trajectory: Vec<CptTrajectoryRow>,
    pub summaries: Vec<RoundSummary>,
    pub projection_warning: bool,
}

/// Quantities `z[k][t]` user `i` requests at prices `μ`: maximize
/// `Σ_k Σ_t (h_i(k)·F_{i,t} − μ_t/K)·z` under per-alternative job caps and
/// non-increasing alternative values.
pub fn cpt_user_demand(ci: &CptInstance, i: usize, mu: &[f64]) -> Result<Matrix> {
    let (t_max, kk) = (ci.base.n_tiers(), ci.k);
    if mu.len() != t_max || i >= ci.base.n_users() {
        return Err(Error::Shape(format!("price vector of length {} or user {i} out of range", mu.len())));
    }
    let j = ci.base.job_sizes[i];
    let f: Vec<f64> = ci.base.utilities[i].iter().map(|u| u / j).collect();
    let h = super::weighting::h_weights(&ci.weights[i], kk);
    let mut lp = LinearProgram::new(kk * t_max);
    for k in 0..kk {
        for t in 0..t_max {
            lp.objective[k * t_max + t] = h[k] * f[t] - mu[t] / kk as f64;
        }
        lp.add_row((0..t_max).map(|t| (k * t_max + t, 1.0)).collect(), j);
    }
    for k in 0..kk.saturating_sub(1) {
        let mut row = Vec::with_capacity(2 * t_max);
        for t in 0..t_max {
            if f[t] != 0.0 {
                row.push(((k + 1) * t_max + t, f[t]));
                row.push((k * t_max + t, -f[t]));
            }
        }
        lp.add_row(row, 0.0);
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver(format!("user LP returned {:?}", sol.status)));
    }
    Ok(sol.primal.chunks(t_max.max(1)).map(|c| c.to_vec()).collect())
}

/// Budget slab `m[k][t] = μ_t·z[k][t]`; zero on zero-priced tiers.
pub fn cpt_user_problem(ci: &CptInstance, i: usize, mu: &[f64]) -> Result<Matrix> {
    Ok(cpt_user_demand(ci, i, mu)?
        .into_iter()
        .map(|row| row.iter().zip(mu).map(|(z, p)| if *p > 0.0 { z * p } else { 0.0 }).collect())
        .collect())
}

/// Iteration cap of the dual ascent inside [`cpt_tracking_response`].
const RESPONSE_MAX_ITERS: usize = 20_000;

/// Budget slab user `i` sends in a tracking round. With `regularization > 0`
/// the user maximizes `Σ_k [(h_k F − μ/K)·z_k − (ρ_i/2K)‖z_k‖²]` under the same
/// constraints as [`cpt_user_demand`], `ρ_i` as in the deterministic market;
/// the ordering constraints are handled by projected accelerated ascent on
/// their multipliers, each step a water fill per alternative.
pub fn cpt_tracking_response(ci: &CptInstance, i: usize, mu: &[f64], regularization: f64) -> Result<Matrix> {
    if regularization <= 0.0 {
        return cpt_user_problem(ci, i, mu);
    }
    let (t_max, kk) = (ci.base.n_tiers(), ci.k);
    let j = ci.base.job_sizes[i];
    let f: Vec<f64> = ci.base.utilities[i].iter().map(|u| u / j).collect();
    let fmax = f.iter().fold(0.0f64, |a, &b| a.max(b));
    if fmax <= 0.0 {
        return Ok(vec![vec![0.0; t_max]; kk]);
    }
    let rho = regularization * fmax / j;
    let h = super::weighting::h_weights(&ci.weights[i], kk);
    // Objective scaled by K so that K = 1 is exactly the deterministic response.
    let base: Matrix = h.iter().map(|hk| f.iter().zip(mu).map(|(ft, m)| kk as f64 * hk * ft - m).collect()).collect();
    let solve = |alpha: &[f64]| -> Matrix {
        (0..kk)
            .map(|k| {
                let up = if k + 1 < kk { alpha[k] } else { 0.0 };
                let down = if k > 0 { alpha[k - 1] } else { 0.0 };
                let a: Vec<f64> = base[k].iter().zip(&f).map(|(b, ft)| b + ft * (up - down)).collect();
                capped_water_fill(&a, rho, j)
            })
            .collect()
    };
    let value = |z: &[f64]| -> f64 { z.iter().zip(&f).map(|(a, b)| a * b).sum() };
    let mut z = solve(&vec![0.0; kk - 1]);
    if kk > 1 {
        let ff: f64 = f.iter().map(|v| v * v).sum();
        let step = rho / (4.0 * ff);
        let tol = 1e-9 * j * fmax;
        let mut alpha = vec![0.0; kk - 1];
        let mut prev = alpha.clone();
        let mut y = alpha.clone();
        let mut theta = 1.0f64;
        for _ in 0..RESPONSE_MAX_ITERS {
            let vals: Vec<f64> = z.iter().map(|zk| value(zk)).collect();
            let violation = (0..kk - 1).map(|k| vals[k + 1] - vals[k]).fold(0.0f64, f64::max);
            let slack = (0..kk - 1).map(|k| alpha[k] * (vals[k] - vals[k + 1]) / step).fold(0.0f64, f64::max);
            if violation <= tol && slack <= tol {
                break;
            }
            let zy = solve(&y);
            let vy: Vec<f64> = zy.iter().map(|zk| value(zk)).collect();
            prev.clone_from(&alpha);
            for k in 0..kk - 1 {
                alpha[k] = (y[k] - step * (vy[k] - vy[k + 1])).max(0.0);
            }
            let next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            for k in 0..kk - 1 {
                y[k] = alpha[k] + (theta - 1.0) / next * (alpha[k] - prev[k]);
            }
            theta = next;
            z = solve(&alpha);
        }
    }
    Ok(z.into_iter().map(|row| row.iter().zip(mu).map(|(x, p)| if *p > 0.0 { x * p } else { 0.0 }).collect()).collect())
}

/// `μ_t = Σ_{i,k} δ_k m_{i,t}(k) / M_t` and `z = m/μ` on tiers with budget.
pub fn cpt_cloud_closed_form(m: &[Matrix], capacities: &[f64], delta: &[f64]) -> (Vec<Matrix>, Vec<f64>) {
    let t_max = capacities.len();
    let mut mu = vec![0.0; t_max];
    for t in 0..t_max {
        let s: f64 = m.iter().zip(delta).map(|(mk, d)| d * mk.iter().map(|r| r[t]).sum::<f64>()).sum();
        if s > 0.0 {
            mu[t] = s / capacities[t];
        }
    }
    let z = m
        .iter()
        .map(|mk| {
            mk.iter().map(|r| r.iter().zip(&mu).map(|(b, p)| if *p > 0.0 { b / p } else { 0.0 }).collect()).collect()
        })
        .collect();
    (z, mu)
}

/// Projection onto `{Σ_{i,k} δ_k z_{i,t}(k) ≤ M_t} ∩ {z ≥ 0}`.
pub fn cpt_han_projection(z: &[Matrix], capacities: &[f64], delta: &[f64]) -> CptProjection {
    let t_max = capacities.len();
    let n = z.first().map_or(0, |zk| zk.len());
    let flat: Vec<f64> = z.iter().flatten().flatten().copied().collect();
    let groups: Vec<usize> = (0..flat.len()).map(|j| j % t_max).collect();
    let weights: Vec<f64> = (0..flat.len()).map(|j| delta[j / (n * t_max).max(1)]).collect();
    let (out, iterations, warning) = han_weighted(&flat, &groups, &weights, capacities);
    let z = out
        .chunks((n * t_max).max(1))
        .map(|slab| slab.chunks(t_max.max(1)).map(|c| c.to_vec()).collect())
        .collect();
    CptProjection { z, iterations, warning }
}

/// Budget exchange for lottery allocation. The cloud sees only the
/// `δ`-weighted budget totals per tier.
pub fn cpt_price_tracking(ci: &CptInstance, params: &TrackingParams) -> Result<CptTrackingResult> {
    let (n, t_max, kk) = (ci.base.n_users(), ci.base.n_tiers(), ci.k);
    let delta = vec![1.0 / kk as f64; kk];
    let caps = &ci.base.capacities;
    let mut q = vec![INITIAL_PRICE; t_max];
    let mut m: Vec<Matrix> = vec![vec![vec![0.0; t_max]; n]; kk];
    let mut scale = vec![1.0; t_max];
    let mut last_sign = vec![0i8; t_max];
    let mut trajectory = Vec::new();
    let mut summaries = Vec::new();
    let mut stopped = false;
    let mut rounds = 0;
    let mut last = None;
    for round in 1..=params.max_rounds {
        rounds = round;
        let slabs: Vec<Matrix> =
            (0..n).map(|i| cpt_tracking_response(ci, i, &q, params.regularization)).collect::<Result<_>>()?;
        let m_prev = std::mem::replace(&mut m, (0..kk).map(|k| slabs.iter().map(|s| s[k].clone()).collect()).collect());
        let weighted = weighted_budgets(&m, &delta);
        let max_budget_excess = (0..n)
            .map(|i| {
                (0..kk)
                    .map(|k| (0..t_max).filter(|&t| q[t] > 0.0).map(|t| m[k][i][t] / q[t]).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
                    - ci.base.job_sizes[i]
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let q_prev = q.clone();
        if params.adaptive {
            adapt_steps(&mut scale, &mut last_sign, &weighted, &q_prev, caps, params.price_floor);
        }
        let steps = round_steps(params, &scale, &q_prev, caps);
        for _ in 0..params.gradient_steps {
            q = dual_gradient_step_at(&q, &q_prev, &weighted, caps, &steps, params.price_floor);
        }
        let step = settle(ci, &m, &q, &delta, params.price_floor);
        for t in 0..t_max {
            trajectory.push(TrajectoryRow {
                round,
                tier: t,
                price: q[t],
                budget_sum: weighted.iter().map(|r| r[t]).sum(),
                objective: step.1,
            });
        }
        let price_delta = rel_change(&q, &q_prev);
        let budget_delta = {
            let a: Vec<f64> = m.iter().flatten().flatten().copied().collect();
            let b: Vec<f64> = m_prev.iter().flatten().flatten().copied().collect();
            rel_change(&a, &b)
        };
        summaries.push(RoundSummary { round, price_delta, budget_delta, objective: step.1, max_budget_excess });
        last = Some(step);
        if price_delta < params.eps {
            stopped = true;
            break;
        }
    }
    let (allocation, objective, warning) =
        last.unwrap_or_else(|| (LotteryAllocation::zeros(ci), 0.0, false));
    let clearing = clearing_residual(&weighted_budgets(&m, &delta), &q, caps, params.price_floor);
    Ok(CptTrackingResult {
        prices: q,
        budgets: m,
        allocation,
        objective,
        rounds,
        stopped_on_tolerance: stopped,
        converged: stopped && clearing <= CLEARING_TOL,
        trajectory,
        summaries,
        projection_warning: warning,
    })
}

/// `Σ_k δ_k m[k]`, an `N × T` matrix.
fn weighted_budgets(m: &[Matrix], delta: &[f64]) -> Matrix {
    let mut out = vec![vec![0.0; m[0][0].len()]; m[0].len()];
    for (mk, d) in m.iter().zip(delta) {
        for (o, r) in out.iter_mut().zip(mk) {
            for (a, b) in o.iter_mut().zip(r) {
                *a += d * b;
            }
        }
    }
    out
}

fn settle(ci: &CptInstance, m: &[Matrix], q: &[f64], delta: &[f64], floor: f64) -> (LotteryAllocation, f64, bool) {
    let z: Vec<Matrix> = m
        .iter()
        .map(|mk| {
            mk.iter()
                .map(|r| r.iter().zip(q).map(|(b, p)| if *b > 0.0 { b / p.max(floor) } else { 0.0 }).collect())
                .collect()
        })
        .collect();
    let proj = cpt_han_projection(&z, &ci.base.capacities, delta);
    let z = proj.z.iter().map(|zk| crate::instance::truncate_to_jobs(zk, &ci.base.job_sizes)).collect();
    let alloc = LotteryAllocation { z, h: ci.decision_weights() };
    let value = cpt_relaxed_value(ci, &alloc);
    (alloc, value, proj.warning)
}

fn rel_change(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let s = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    d / s.max(f64::MIN_POSITIVE)
}
