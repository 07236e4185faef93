//! Decentralized pricing: users answer posted prices with budgets, the cloud
//! splits capacity in proportion to budgets and adjusts prices by dual
//! gradient steps.

use crate::error::Result;
use crate::instance::{relaxed_welfare, truncate_to_jobs, Allocation, Matrix, ProblemInstance};
use crate::lp::{solve_lp, LinearProgram, LpStatus};

/// Prices start here in every tracking run.
pub const INITIAL_PRICE: f64 = 1.0;
/// Cap on projection iterations.
pub const PROJECTION_MAX_ITERS: usize = 100_000;
/// Relative change at which the projection stops.
pub const PROJECTION_EPS: f64 = 1e-13;
/// Relative excess demand tolerated in a "converged" market.
pub const CLEARING_TOL: f64 = 0.05;
/// Step-scale factors of the adaptive rule.
const STEP_SHRINK: f64 = 0.8;
const STEP_GROW: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PriceBudgetState {
    pub prices: Vec<f64>,
    pub budgets: Matrix,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingParams {
    pub kappa: f64,
    pub gradient_steps: usize,
    pub eps: f64,
    pub price_floor: f64,
    pub max_rounds: usize,
    /// Per-tier step adaptation: a tier's step shrinks (×0.8) whenever its
    /// excess demand changes sign between rounds and grows back (×1.1, up to
    /// the base step) while the sign holds. With `false` every step is the
    /// base step.
    pub adaptive: bool,
    /// Price-relative step `θ`. When positive, tier `t`'s step in a round is
    /// `θ·q_t/(G·M_t)` (times the adaptive scale), so one round moves a price
    /// by the fraction `θ` of itself per unit of relative excess demand and
    /// `kappa` is unused. Zero selects the fixed step `kappa`.
    pub relative_step: f64,
    /// Relative weight `r` of the quadratic term users add to their problem,
    /// `max Σ x(F − q) − (ρ_i/2)‖x‖²` with `ρ_i = r · max_t F_{i,t} / J_i`.
    /// It makes each response unique and continuous in the prices; the
    /// welfare it gives up is at most `r/2` of the optimum. Zero selects the
    /// plain linear response.
    pub regularization: f64,
}

impl TrackingParams {
    /// Defaults with the fixed step scaled to the instance:
    /// `κ = 0.5 · mean(F) / (G · max M)`, so that under the fixed rule a tier
    /// with no demand at all loses about half a typical per-function value per
    /// round (mean(F) taken as 1 when every utility is zero).
    pub fn for_instance(inst: &ProblemInstance) -> Self {
        let base = TrackingParams::default();
        let f = inst.per_function();
        let cells = (inst.n_users() * inst.n_tiers()).max(1) as f64;
        let mean_f = f.iter().flatten().sum::<f64>() / cells;
        let max_m = inst.capacities.iter().fold(0.0f64, |a, &b| a.max(b));
        let scale = if mean_f > 0.0 { mean_f } else { 1.0 };
        let g = base.gradient_steps.max(1) as f64;
        let kappa = if max_m > 0.0 { 0.5 * scale / (g * max_m) } else { base.kappa };
        TrackingParams { kappa, ..base }
    }
}

impl Default for TrackingParams {
    fn default() -> Self {
        TrackingParams {
            kappa: 1e-6,
            gradient_steps: 40,
            eps: 1e-4,
            price_floor: 1e-12,
            max_rounds: 1000,
            adaptive: true,
            relative_step: 0.6,
            regularization: 0.01,
        }
    }
}

/// One row of the exported trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub round: usize,
    pub tier: usize,
    pub price: f64,
    pub budget_sum: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub price_delta: f64,
    pub budget_delta: f64,
    pub objective: f64,
    /// Largest `Σ_t m_{i,t}/q_t − J_i` over users; never positive.
    pub max_budget_excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    pub prices: Vec<f64>,
    pub budgets: Matrix,
    pub allocation: Allocation,
    pub objective: f64,
    pub rounds: usize,
    /// The relative price change fell below `eps`.
    pub stopped_on_tolerance: bool,
    /// Stopped on tolerance and every tier clears within [`CLEARING_TOL`].
    pub converged: bool,
    pub trajectory: Vec<TrajectoryRow>,
    pub summaries: Vec<RoundSummary>,
    pub projection_warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub z: Matrix,
    pub iterations: usize,
    /// Set when the iteration cap was hit before the stopping rule.
    pub warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub users_optimal: bool,
    pub cloud_optimal: bool,
    pub budgets_match: bool,
    pub slack_tiers_free: bool,
    /// Largest relative shortfall of a user's budget objective.
    pub user_residual: f64,
    /// Largest deviation from the proportional split.
    pub cloud_residual: f64,
    /// Largest `|m − x·q|`.
    pub budget_residual: f64,
    /// Largest price on a tier with spare capacity.
    pub slack_price_residual: f64,
}

impl EquilibriumReport {
    pub fn passed(&self) -> bool {
        self.users_optimal && self.cloud_optimal && self.budgets_match && self.slack_tiers_free
    }
}

/// Quantities `x_{i,t}` a user requests at prices `q`: the LP maximizing
/// `Σ x (F − q)` subject to `Σ x ≤ J_i`. Zero-priced tiers are free to use
/// but carry no budget.
pub fn user_demand(inst: &ProblemInstance, i: usize, q: &[f64]) -> Result<Vec<f64>> {
    let t_max = inst.n_tiers();
    let mut lp = LinearProgram::new(t_max);
    for t in 0..t_max {
        lp.objective[t] = inst.utilities[i][t] / inst.job_sizes[i] - q[t];
    }
    lp.add_row((0..t_max).map(|t| (t, 1.0)).collect(), inst.job_sizes[i]);
    let sol = solve_lp(&lp)?;
    debug_assert_eq!(sol.status, LpStatus::Optimal);
    Ok(sol.primal)
}

/// Budget row `m_i = q ∘ x_i` of user `i` at prices `q`; zero wherever `q_t = 0`.
pub fn solve_user_problem(inst: &ProblemInstance, i: usize, q: &[f64]) -> Result<Vec<f64>> {
    Ok(user_demand(inst, i, q)?.iter().zip(q).map(|(x, p)| if *p > 0.0 { x * p } else { 0.0 }).collect())
}

/// Response of user `i` in a tracking round: the regularized demand when
/// `regularization > 0`, otherwise the linear one; returned as budgets.
pub fn tracking_response(inst: &ProblemInstance, i: usize, q: &[f64], regularization: f64) -> Result<Vec<f64>> {
    if regularization <= 0.0 {
        return solve_user_problem(inst, i, q);
    }
    let j = inst.job_sizes[i];
    let f: Vec<f64> = inst.utilities[i].iter().map(|u| u / j).collect();
    let fmax = f.iter().fold(0.0f64, |a, &b| a.max(b));
    if fmax <= 0.0 {
        return Ok(vec![0.0; q.len()]);
    }
    let rho = regularization * fmax / j;
    let a: Vec<f64> = f.iter().zip(q).map(|(f, q)| f - q).collect();
    let x = capped_water_fill(&a, rho, j);
    Ok(x.iter().zip(q).map(|(x, p)| if *p > 0.0 { x * p } else { 0.0 }).collect())
}

/// `argmax Σ a_t x_t − (ρ/2) Σ x_t²` over `x ≥ 0, Σ x ≤ cap`:
/// `x_t = max(a_t − ν, 0)/ρ` with the smallest `ν ≥ 0` meeting the cap.
pub fn capped_water_fill(a: &[f64], rho: f64, cap: f64) -> Vec<f64> {
    let free: f64 = a.iter().map(|v| v.max(0.0)).sum::<f64>() / rho;
    let nu = if free <= cap {
        0.0
    } else {
        let mut sorted: Vec<f64> = a.iter().copied().filter(|v| *v > 0.0).collect();
        sorted.sort_by(|x, y| y.total_cmp(x));
        // With the k largest entries active, ν = (Σ_{top k} a − ρ·cap)/k.
        let mut nu = 0.0;
        let mut acc = 0.0;
        for (k, &v) in sorted.iter().enumerate() {
            acc += v;
            let cand = (acc - rho * cap) / (k + 1) as f64;
            let next = sorted.get(k + 1).copied().unwrap_or(f64::NEG_INFINITY);
            if cand >= next && cand < v {
                nu = cand;
                break;
            }
            nu = cand;
        }
        nu.max(0.0)
    };
    a.iter().map(|v| ((v - nu) / rho).max(0.0)).collect()
}

/// Surplus `Σ x (F − q)` of a user holding `m/q` on priced tiers and
/// `free[t]` on zero-priced tiers.
pub fn user_objective(inst: &ProblemInstance, i: usize, m: &[f64], q: &[f64], free: &[f64]) -> f64 {
    (0..q.len())
        .map(|t| {
            let x = if q[t] > 0.0 { m[t] / q[t] } else { free[t] };
            x * (inst.utilities[i][t] / inst.job_sizes[i] - q[t])
        })
        .sum()
}

/// Proportional split: `q_t = Σ_i m_{i,t} / M_t`, `x_{i,t} = m_{i,t} M_t / Σ_j m_{j,t}`.
pub fn solve_cloud_closed_form(m: &Matrix, capacities: &[f64]) -> (Allocation, Vec<f64>) {
    let t_max = capacities.len();
    let mut x = vec![vec![0.0; t_max]; m.len()];
    let mut q = vec![0.0; t_max];
    for t in 0..t_max {
        let s: f64 = m.iter().map(|r| r[t]).sum();
        if s > 0.0 {
            q[t] = s / capacities[t];
            for (xi, mi) in x.iter_mut().zip(m) {
                xi[t] = mi[t] * capacities[t] / s;
            }
        }
    }
    (x, q)
}

/// `q_t ← max(q_t + κ(Σ_i m_{i,t} / max(q_t, floor) − M_t), floor)`.
///
/// Prices are kept at or above the floor so that a tier with spare capacity
/// stays open to bids instead of dropping out of every user's problem.
pub fn dual_gradient_step(q: &[f64], m: &Matrix, capacities: &[f64], kappa: f64, floor: f64) -> Vec<f64> {
    dual_gradient_step_at(q, q, m, capacities, &vec![kappa; q.len()], floor)
}

/// Same update with the division taken at `reference` prices instead of `q`.
///
/// Inside a tracking round the budgets were formed against the posted prices,
/// so `Σ_i m_{i,t} / posted_t` is the quantity demanded. Dividing by the
/// moving price instead makes the update stiff near zero: one overshoot to the
/// floor turns a small budget into an enormous apparent demand.
pub fn dual_gradient_step_at(
    q: &[f64],
    reference: &[f64],
    m: &Matrix,
    capacities: &[f64],
    kappa: &[f64],
    floor: f64,
) -> Vec<f64> {
    (0..q.len())
        .map(|t| {
            let s: f64 = m.iter().map(|r| r[t]).sum();
            (q[t] + kappa[t] * (s / reference[t].max(floor) - capacities[t])).max(floor)
        })
        .collect()
}

/// Runs the budget/price exchange until prices settle, then projects the
/// implied allocation `m/q` onto the capacity constraints.
pub fn price_tracking(inst: &ProblemInstance, params: &TrackingParams) -> Result<TrackingResult> {
    price_tracking_from(inst, params, &vec![INITIAL_PRICE; inst.n_tiers()])
}

/// Cloud-side state carried between budget rounds (and, in a simulation,
/// between days): posted prices and the per-tier adaptive step scales.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingState {
    pub prices: Vec<f64>,
    /// Multipliers in `(0, 1]` applied to each tier's base step.
    pub step_scale: Vec<f64>,
    last_sign: Vec<i8>,
}

impl TrackingState {
    pub fn new(prices: &[f64]) -> Self {
        TrackingState { prices: prices.to_vec(), step_scale: vec![1.0; prices.len()], last_sign: vec![0; prices.len()] }
    }
}

/// Per-tier step for a round posted at `posted`, see
/// [`TrackingParams::relative_step`].
pub(crate) fn round_steps(params: &TrackingParams, scale: &[f64], posted: &[f64], capacities: &[f64]) -> Vec<f64> {
    (0..posted.len())
        .map(|t| {
            let base = if params.relative_step > 0.0 {
                params.relative_step * posted[t].max(params.price_floor)
                    / (params.gradient_steps.max(1) as f64 * capacities[t].max(f64::MIN_POSITIVE))
            } else {
                params.kappa
            };
            scale[t] * base
        })
        .collect()
}

/// What one budget round produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// Prices the budgets were formed against.
    pub posted: Vec<f64>,
    pub budgets: Matrix,
    /// Allocation settled at the updated prices.
    pub allocation: Allocation,
    pub objective: f64,
    pub price_delta: f64,
    pub max_budget_excess: f64,
    pub projection_warning: bool,
}

/// One budget exchange followed by `G` price steps; updates `state`.
pub fn tracking_round(inst: &ProblemInstance, params: &TrackingParams, state: &mut TrackingState) -> Result<RoundOutcome> {
    let n = inst.n_users();
    let posted = state.prices.clone();
    let m: Matrix = (0..n).map(|i| tracking_response(inst, i, &posted, params.regularization)).collect::<Result<_>>()?;
    let max_budget_excess = (0..n)
        .map(|i| {
            let spend: f64 = (0..posted.len()).filter(|&t| posted[t] > 0.0).map(|t| m[i][t] / posted[t]).sum();
            spend - inst.job_sizes[i]
        })
        .fold(f64::NEG_INFINITY, f64::max);
    if params.adaptive {
        adapt_steps(&mut state.step_scale, &mut state.last_sign, &m, &posted, &inst.capacities, params.price_floor);
    }
    let steps = round_steps(params, &state.step_scale, &posted, &inst.capacities);
    let mut q = posted.clone();
    for _ in 0..params.gradient_steps {
        q = dual_gradient_step_at(&q, &posted, &m, &inst.capacities, &steps, params.price_floor);
    }
    let (allocation, objective, projection_warning) = settle(inst, &m, &q, params.price_floor);
    let price_delta = norm_diff(&q, &posted) / norm(&posted).max(f64::MIN_POSITIVE);
    state.prices = q;
    Ok(RoundOutcome { posted, budgets: m, allocation, objective, price_delta, max_budget_excess, projection_warning })
}

pub fn price_tracking_from(
    inst: &ProblemInstance,
    params: &TrackingParams,
    initial: &[f64],
) -> Result<TrackingResult> {
    let n = inst.n_users();
    let mut state = TrackingState::new(initial);
    let mut m: Matrix = vec![vec![0.0; inst.n_tiers()]; n];
    let mut trajectory = Vec::new();
    let mut summaries = Vec::new();
    let mut stopped = false;
    let mut rounds = 0;
    let mut last = None;
    for round in 1..=params.max_rounds {
        rounds = round;
        let out = tracking_round(inst, params, &mut state)?;
        for t in 0..state.prices.len() {
            trajectory.push(TrajectoryRow {
                round,
                tier: t,
                price: state.prices[t],
                budget_sum: out.budgets.iter().map(|r| r[t]).sum(),
                objective: out.objective,
            });
        }
        let budget_delta = {
            let a: Vec<f64> = out.budgets.iter().flatten().copied().collect();
            let b: Vec<f64> = m.iter().flatten().copied().collect();
            norm_diff(&a, &b) / norm(&b).max(f64::MIN_POSITIVE)
        };
        summaries.push(RoundSummary {
            round,
            price_delta: out.price_delta,
            budget_delta,
            objective: out.objective,
            max_budget_excess: out.max_budget_excess,
        });
        m = out.budgets;
        let done = out.price_delta < params.eps;
        last = Some((out.allocation, out.objective, out.projection_warning));
        if done {
            stopped = true;
            break;
        }
    }
    let q = state.prices;
    let (allocation, objective, warning) = last.unwrap_or_else(|| (vec![vec![0.0; q.len()]; n], 0.0, false));
    let clearing = clearing_residual(&m, &q, &inst.capacities, params.price_floor);
    Ok(TrackingResult {
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

/// Shrinks a tier's step scale when its excess demand flips sign, otherwise
/// lets it grow back towards 1. Tiers at the floor with spare capacity keep
/// their sign history unchanged.
pub(crate) fn adapt_steps(
    scale: &mut [f64],
    last_sign: &mut [i8],
    m: &Matrix,
    posted: &[f64],
    capacities: &[f64],
    floor: f64,
) {
    for t in 0..scale.len() {
        let demand = m.iter().map(|r| r[t]).sum::<f64>() / posted[t].max(floor);
        let excess = demand - capacities[t];
        let sign = if excess > 1e-9 * capacities[t] {
            1
        } else if excess < -1e-9 * capacities[t] {
            if posted[t] <= floor {
                continue;
            }
            -1
        } else {
            0
        };
        if sign != 0 && last_sign[t] != 0 && sign != last_sign[t] {
            scale[t] *= STEP_SHRINK;
        } else if sign != 0 {
            scale[t] = (scale[t] * STEP_GROW).min(1.0);
        }
        if sign != 0 {
            last_sign[t] = sign;
        }
    }
}

/// Allocation implied by budgets at prices `q`: `m/q`, projected and capped
/// at job sizes. Returns the allocation, its relaxed welfare and the
/// projection warning flag.
pub fn settle(inst: &ProblemInstance, m: &Matrix, q: &[f64], floor: f64) -> (Allocation, f64, bool) {
    let z: Matrix = m
        .iter()
        .map(|r| r.iter().zip(q).map(|(mi, qt)| if *mi > 0.0 { mi / qt.max(floor) } else { 0.0 }).collect())
        .collect();
    let proj = han_projection(&z, &inst.capacities);
    let x = truncate_to_jobs(&proj.z, &inst.job_sizes);
    let obj = relaxed_welfare(inst, &x);
    (x, obj, proj.warning)
}

/// Largest relative excess demand (or, on priced tiers, excess supply).
pub fn clearing_residual(m: &Matrix, q: &[f64], capacities: &[f64], floor: f64) -> f64 {
    (0..q.len())
        .map(|t| {
            let demand: f64 = m.iter().map(|r| r[t]).sum::<f64>() / q[t].max(floor);
            let gap = (demand - capacities[t]) / capacities[t];
            if q[t] > 10.0 * floor {
                gap.abs()
            } else {
                gap.max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean projection onto `{Σ_i z_{i,t} ≤ M_t} ∩ {z ≥ 0}` by Han's
/// averaged alternating corrections.
pub fn han_projection(z: &Matrix, capacities: &[f64]) -> ProjectionResult {
    let t_max = capacities.len();
    let n = z.len();
    let flat: Vec<f64> = z.iter().flatten().copied().collect();
    let groups: Vec<usize> = (0..n * t_max).map(|k| k % t_max).collect();
    let weights = vec![1.0; n * t_max];
    let (out, iterations, warning) = han_weighted(&flat, &groups, &weights, capacities);
    let z = out.chunks(t_max.max(1)).map(|c| c.to_vec()).collect();
    ProjectionResult { z, iterations, warning }
}

/// Projection onto `{Σ_{k∈g} w_k z_k ≤ cap_g for every group g} ∩ {z ≥ 0}`.
///
/// Each sweep applies the half-space correction to the first auxiliary copy
/// and the clamp to the second, averages them, and carries each copy's
/// correction forward, so the fixed point is the Euclidean projection rather
/// than merely a feasible point.
pub(crate) fn han_weighted(z: &[f64], groups: &[usize], weights: &[f64], caps: &[f64]) -> (Vec<f64>, usize, bool) {
    let len = z.len();
    let mut norm2 = vec![0.0; caps.len()];
    for k in 0..len {
        norm2[groups[k]] += weights[k] * weights[k];
    }
    let mut cur = z.to_vec();
    let mut z1 = z.to_vec();
    let mut z2 = z.to_vec();
    let mut a = vec![0.0; len];
    let mut sums = vec![0.0; caps.len()];
    for iter in 1..=PROJECTION_MAX_ITERS {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for k in 0..len {
            sums[groups[k]] += weights[k] * z1[k];
        }
        for k in 0..len {
            let g = groups[k];
            let excess = if norm2[g] > 0.0 { ((sums[g] - caps[g]) / norm2[g]).max(0.0) } else { 0.0 };
            a[k] = z1[k] - weights[k] * excess;
        }
        let mut change = 0.0;
        let mut size = 0.0;
        for k in 0..len {
            let b = z2[k].max(0.0);
            let next = 0.5 * (a[k] + b);
            z1[k] += next - a[k];
            z2[k] += next - b;
            change += (next - cur[k]) * (next - cur[k]);
            size += cur[k] * cur[k];
            cur[k] = next;
        }
        if change == 0.0 || change.sqrt() < PROJECTION_EPS * size.sqrt() {
            return (cur, iter, false);
        }
    }
    (cur, PROJECTION_MAX_ITERS, true)
}

/// Checks the four equilibrium conditions for `(x, m, q)`.
pub fn equilibrium_check(inst: &ProblemInstance, x: &Allocation, m: &Matrix, q: &[f64]) -> Result<EquilibriumReport> {
    let n = inst.n_users();
    let t_max = inst.n_tiers();
    let mut user_residual = 0.0f64;
    for i in 0..n {
        let demand = user_demand(inst, i, q)?;
        let opt: f64 = (0..t_max)
            .map(|t| demand[t] * (inst.utilities[i][t] / inst.job_sizes[i] - q[t]))
            .sum();
        let mut bad = (0..t_max).any(|t| q[t] <= 0.0 && m[i][t].abs() > 1e-12);
        let spend: f64 = (0..t_max).map(|t| if q[t] > 0.0 { m[i][t] / q[t] } else { x[i][t] }).sum();
        bad |= spend > inst.job_sizes[i] * (1.0 + 1e-9) + 1e-9;
        bad |= m[i].iter().any(|&v| v < -1e-12);
        let got = user_objective(inst, i, &m[i], q, &x[i]);
        let rel = (opt - got) / opt.abs().max(1e-9);
        user_residual = user_residual.max(if bad { f64::INFINITY } else { rel.max(0.0) });
    }
    let mut cloud_residual = 0.0f64;
    for t in 0..t_max {
        let s: f64 = m.iter().map(|r| r[t]).sum();
        let used: f64 = x.iter().map(|r| r[t]).sum();
        cloud_residual = cloud_residual.max((used - inst.capacities[t]).max(0.0));
        if s > 0.0 {
            for i in 0..n {
                let want = m[i][t] * inst.capacities[t] / s;
                cloud_residual = cloud_residual.max((x[i][t] - want).abs());
            }
        }
    }
    let mut budget_residual = 0.0f64;
    for i in 0..n {
        for t in 0..t_max {
            budget_residual = budget_residual.max((m[i][t] - x[i][t] * q[t]).abs());
        }
    }
    let mut slack_price_residual = 0.0f64;
    for t in 0..t_max {
        let used: f64 = x.iter().map(|r| r[t]).sum();
        if used < inst.capacities[t] - 1e-6 {
            slack_price_residual = slack_price_residual.max(q[t]);
        }
    }
    let cap_scale = inst.capacities.iter().fold(1.0f64, |a, &b| a.max(b));
    Ok(EquilibriumReport {
        users_optimal: user_residual <= 1e-6,
        cloud_optimal: cloud_residual <= 1e-6 * cap_scale,
        budgets_match: budget_residual <= 1e-7,
        slack_tiers_free: slack_price_residual <= 1e-9,
        user_residual,
        cloud_residual,
        budget_residual,
        slack_price_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::solve_sys_lp;

    fn toy() -> ProblemInstance {
        ProblemInstance::new(
            vec![vec![3.0, 0.0, 0.0], vec![4.0, 2.5, 1.0], vec![2.0, 2.0, 2.0]],
            vec![10.0; 3],
            vec![10.0; 3],
        )
    }

    #[test]
    fn user_problem_examples() {
        let inst = toy();
        assert_eq!(solve_user_problem(&inst, 0, &[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
        let one = ProblemInstance::new(vec![vec![3.0]], vec![10.0], vec![10.0]);
        let m = solve_user_problem(&one, 0, &[0.1]).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-12);
        let m = solve_user_problem(&inst, 0, &[0.259, 0.083, 0.048]).unwrap();
        assert!((m[0] - 2.59).abs() < 1e-12 && m[1] == 0.0 && m[2] == 0.0);
        // Zero-priced tiers never receive budget.
        let m = solve_user_problem(&inst, 2, &[0.5, 0.0, 0.0]).unwrap();
        assert_eq!(m, vec![0.0; 3]);
    }

    #[test]
    fn cloud_examples() {
        let (x, q) = solve_cloud_closed_form(&vec![vec![1.0], vec![1.0]], &[10.0]);
        assert_eq!(x, vec![vec![5.0], vec![5.0]]);
        assert_eq!(q, vec![0.2]);
        let (x, q) = solve_cloud_closed_form(&vec![vec![0.0], vec![0.0]], &[10.0]);
        assert_eq!(x, vec![vec![0.0], vec![0.0]]);
        assert_eq!(q, vec![0.0]);
        let (x, q) = solve_cloud_closed_form(&vec![vec![3.0]], &[10.0]);
        assert_eq!((x[0][0], q[0]), (10.0, 0.3));
    }

    #[test]
    fn gradient_step_examples() {
        let q = dual_gradient_step(&[1.0], &vec![vec![0.0]], &[5.0], 0.1, 1e-12);
        assert_eq!(q, vec![0.5]);
        let q = dual_gradient_step(&[0.5], &vec![vec![2.5]], &[5.0], 0.1, 1e-12);
        assert_eq!(q, vec![0.5]);
        let q = dual_gradient_step(&[0.5], &vec![vec![5.0]], &[5.0], 0.1, 1e-12);
        assert!(q[0] > 0.5);
    }

    #[test]
    fn projection_examples() {
        let p = han_projection(&vec![vec![6.0], vec![6.0]], &[10.0]);
        assert!((p.z[0][0] - 5.0).abs() < 1e-9 && (p.z[1][0] - 5.0).abs() < 1e-9);
        let p = han_projection(&vec![vec![-1.0], vec![3.0]], &[10.0]);
        assert!(p.z[0][0].abs() < 1e-9 && (p.z[1][0] - 3.0).abs() < 1e-9);
        let feasible = vec![vec![1.0, 2.0], vec![3.0, 0.0]];
        let p = han_projection(&feasible, &[10.0, 10.0]);
        assert_eq!(p.z, feasible);
        assert!(!p.warning);
    }

    #[test]
    fn toy_equilibrium_round_trip() {
        let inst = toy();
        let r = solve_sys_lp(&inst).unwrap();
        let m: Matrix = r
            .allocation
            .iter()
            .map(|row| row.iter().zip(&r.tier_prices).map(|(x, q)| x * q).collect())
            .collect();
        let rep = equilibrium_check(&inst, &r.allocation, &m, &r.tier_prices).unwrap();
        assert!(rep.passed(), "{rep:?}");
        let mut bad = m.clone();
        bad[1][1] += 0.5;
        let rep = equilibrium_check(&inst, &r.allocation, &bad, &r.tier_prices).unwrap();
        assert!(!rep.users_optimal || !rep.budgets_match);
    }

    #[test]
    fn toy_tracking_reaches_optimum() {
        let inst = toy();
        for kappa in [1e-3, 1e-4] {
            let params = TrackingParams { kappa, relative_step: 0.0, ..Default::default() };
            let r = price_tracking(&inst, &params).unwrap();
            assert!(r.converged);
            assert!((r.objective - 7.5).abs() <= 0.01 * 7.5, "objective {}", r.objective);
        }
        let d = price_tracking(&inst, &TrackingParams::for_instance(&inst)).unwrap();
        assert!((d.objective - 7.5).abs() <= 0.01 * 7.5, "objective {}", d.objective);
    }

    #[test]
    fn frozen_and_single_round_runs() {
        let inst = toy();
        let frozen = price_tracking(&inst, &TrackingParams { kappa: 0.0, relative_step: 0.0, ..Default::default() }).unwrap();
        assert_eq!(frozen.prices, vec![1.0; 3]);
        assert!(frozen.stopped_on_tolerance && !frozen.converged);
        let one = price_tracking(&inst, &TrackingParams { eps: 1.0, ..TrackingParams::for_instance(&inst) }).unwrap();
        assert_eq!(one.rounds, 1);
    }

    #[test]
    fn water_fill_matches_kkt() {
        let x = capped_water_fill(&[0.5, 0.3, -0.1], 0.1, 10.0);
        assert!((x[0] - 5.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12 && x[2] == 0.0);
        // Cap binds: ν solves (0.5 − ν + 0.3 − ν)/0.1 = 4 → ν = 0.2.
        let x = capped_water_fill(&[0.5, 0.3, -0.1], 0.1, 4.0);
        assert!((x[0] - 3.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
        // Only the top entry stays active: (0.5 − ν)/0.1 = 1 → ν = 0.4.
        let x = capped_water_fill(&[0.5, 0.3, -0.1], 0.1, 1.0);
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1] == 0.0);
    }

    #[test]
    fn zero_utilities_drive_prices_to_floor() {
        let inst = ProblemInstance::new(vec![vec![0.0; 2]; 2], vec![3.0, 4.0], vec![5.0, 5.0]);
        let r = price_tracking(&inst, &TrackingParams::for_instance(&inst)).unwrap();
        assert!(r.prices.iter().all(|&q| q <= 1e-12));
        assert!(r.budgets.iter().flatten().all(|&m| m == 0.0));
        assert!(r.allocation.iter().flatten().all(|&x| x == 0.0));
    }
}
