//! Multi-day market simulation with drifting utilities, and the lottery
//! experiments comparing CPT-aware allocation with expected-utility allocation.
//!
//! Randomness comes from ChaCha8 seeded with the configuration seed; every
//! independent draw uses its own stream, `kind << 56 | day << 28 | user`, so
//! results do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpt::{
    cpt_objective_of_q, lottery_from_z, solve_sys_cpt_k_r, solve_sys_eu, CptInstance, WeightingFunction,
};
use crate::error::{Error, Result};
use crate::instance::{relaxed_welfare, utilities_from_marginals, Allocation, Matrix, ProblemInstance};
use crate::market::{tracking_round, TrackingParams, TrackingState, INITIAL_PRICE};
use crate::scheduler::solve_sys_lp;

/// Drifted marginal utilities never go below this.
pub const MARGINAL_FLOOR: f64 = 0.01;

const STREAM_JOBS: u64 = 1;
const STREAM_INITIAL: u64 = 2;
const STREAM_DRIFT: u64 = 3;
const STREAM_FCFS: u64 = 4;
const STREAM_CPT_JOBS: u64 = 5;
const STREAM_CPT_UTILITY: u64 = 6;
const STREAM_CPT_GAMMA: u64 = 7;
const STREAM_CPT_ORDER: u64 = 8;

fn rng(seed: u64, kind: u64, day: u64, user: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(kind << 56 | day << 28 | user);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Optimal,
    Tracking,
    Fcfs,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Optimal => "optimal",
            Scheme::Tracking => "tracking",
            Scheme::Fcfs => "fcfs",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "optimal" => Ok(Scheme::Optimal),
            "tracking" => Ok(Scheme::Tracking),
            "fcfs" => Ok(Scheme::Fcfs),
            other => Err(Error::Invalid(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Days `start..=end` (1-based) drift up with probability `up_probability`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub start: usize,
    pub end: usize,
    pub up_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingSettings {
    /// Fixed step size. When absent, steps follow the price-relative rule
    /// with factor `relative_step`.
    pub kappa: Option<f64>,
    /// See [`TrackingParams::relative_step`].
    pub relative_step: f64,
    pub gradient_steps: usize,
    pub regularization: f64,
    /// Per-tier step adaptation, see [`TrackingParams::adaptive`].
    pub adaptive: bool,
    /// Budget rounds per day.
    pub rounds_per_day: usize,
    /// Track day-1 utilities to convergence before the first day, as a
    /// provider that has been running the market for a while would have.
    pub warm_start: bool,
}

impl Default for TrackingSettings {
    fn default() -> Self {
        let p = TrackingParams::default();
        TrackingSettings {
            kappa: None,
            relative_step: p.relative_step,
            gradient_steps: p.gradient_steps,
            regularization: p.regularization,
            adaptive: p.adaptive,
            rounds_per_day: 1,
            warm_start: true,
        }
    }
}

/// Parameters of the lottery experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CptSettings {
    pub n_users: usize,
    pub n_tiers: usize,
    pub capacity: f64,
    pub job_size_range: (u32, u32),
    /// Completion utilities are drawn from this range and sorted so that
    /// later tiers are worth less.
    pub utility_range: (f64, f64),
    pub delta: f64,
    pub gamma_range: (f64, f64),
    pub k: usize,
    pub scales: Vec<f64>,
    pub fractions: Vec<f64>,
    /// Demand scale used by the fraction sweep.
    pub fraction_scale: f64,
}

impl Default for CptSettings {
    fn default() -> Self {
        CptSettings {
            n_users: 100,
            n_tiers: 5,
            capacity: 1000.0,
            job_size_range: (10, 99),
            utility_range: (50.0, 100.0),
            delta: 0.7,
            gamma_range: (0.3, 0.5),
            k: crate::cpt::DEFAULT_K,
            scales: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            fraction_scale: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub days: usize,
    pub n_users: usize,
    pub n_tiers: usize,
    pub capacity: f64,
    /// Inclusive integer bounds on job sizes.
    pub job_size_range: (u32, u32),
    pub initial_utility_range: (f64, f64),
    pub drift: f64,
    pub phases: Vec<Phase>,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub tracking: TrackingSettings,
    pub cpt: Option<CptSettings>,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            days: 60,
            n_users: 100,
            n_tiers: 5,
            capacity: 5000.0,
            job_size_range: (10, 100),
            initial_utility_range: (5.0, 10.0),
            drift: 0.5,
            phases: vec![
                Phase { start: 1, end: 30, up_probability: 0.55 },
                Phase { start: 31, end: 60, up_probability: 0.45 },
            ],
            seed: 0,
            schemes: vec![Scheme::Optimal, Scheme::Tracking, Scheme::Fcfs],
            tracking: TrackingSettings::default(),
            cpt: None,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.days == 0 || self.n_users == 0 || self.n_tiers == 0 {
            out.push("days, n_users and n_tiers must be positive".to_string());
        }
        if !(self.capacity > 0.0) || !self.capacity.is_finite() {
            out.push(format!("capacity must be positive, got {}", self.capacity));
        }
        let (jl, jh) = self.job_size_range;
        if jl == 0 || jl > jh {
            out.push(format!("job_size_range must satisfy 1 <= lo <= hi, got ({jl}, {jh})"));
        }
        let (ul, uh) = self.initial_utility_range;
        if !(ul >= 0.0 && ul <= uh && uh.is_finite()) {
            out.push(format!("initial_utility_range must satisfy 0 <= lo <= hi, got ({ul}, {uh})"));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            out.push(format!("drift must be non-negative, got {}", self.drift));
        }
        let mut next = 1;
        let mut phases = self.phases.clone();
        phases.sort_by_key(|p| p.start);
        for p in &phases {
            if p.start != next || p.end < p.start {
                out.push(format!("phases must partition days 1..={} without gaps or overlaps", self.days));
                break;
            }
            if !(0.0..=1.0).contains(&p.up_probability) {
                out.push(format!("up_probability {} outside [0, 1]", p.up_probability));
            }
            next = p.end + 1;
        }
        if next != self.days + 1 && !out.iter().any(|m| m.starts_with("phases")) {
            out.push(format!("phases must partition days 1..={} without gaps or overlaps", self.days));
        }
        if self.schemes.is_empty() {
            out.push("at least one scheme is required".to_string());
        }
        if self.tracking.rounds_per_day == 0 || self.tracking.gradient_steps == 0 {
            out.push("tracking needs at least one round per day and one gradient step".to_string());
        }
        if let Some(k) = self.tracking.kappa {
            if !(k >= 0.0 && k.is_finite()) {
                out.push(format!("kappa must be non-negative, got {k}"));
            }
        }
        if !(0.0..1.0).contains(&self.tracking.relative_step) {
            out.push(format!("relative_step must lie in [0, 1), got {}", self.tracking.relative_step));
        }
        if let Some(c) = &self.cpt {
            out.extend(c.validate());
        }
        out
    }

    fn up_probability(&self, day: usize) -> f64 {
        self.phases.iter().find(|p| p.start <= day && day <= p.end).map_or(0.5, |p| p.up_probability)
    }
}

impl CptSettings {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_users == 0 || self.n_tiers == 0 || self.k == 0 || self.k > crate::cpt::MAX_K {
            out.push("cpt: n_users, n_tiers must be positive and k in 1..=100".to_string());
        }
        if !(self.capacity > 0.0) {
            out.push("cpt: capacity must be positive".to_string());
        }
        if self.job_size_range.0 == 0 || self.job_size_range.0 > self.job_size_range.1 {
            out.push("cpt: job_size_range must satisfy 1 <= lo <= hi".to_string());
        }
        if !(self.utility_range.0 >= 0.0 && self.utility_range.0 <= self.utility_range.1) {
            out.push("cpt: utility_range must satisfy 0 <= lo <= hi".to_string());
        }
        if !(self.delta > 0.0 && self.gamma_range.0 > 0.0 && self.gamma_range.0 <= self.gamma_range.1) {
            out.push("cpt: delta and gamma_range must be positive".to_string());
        }
        if self.scales.iter().chain([&self.fraction_scale]).any(|s| !(*s > 0.0)) {
            out.push("cpt: demand scales must be positive".to_string());
        }
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            out.push("cpt: fractions must lie in [0, 1]".to_string());
        }
        out
    }
}

/// Day-indexed market: fixed job sizes and each day's marginal utilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketData {
    pub job_sizes: Vec<f64>,
    /// `marginals[d][i][t]` for day `d + 1`.
    pub marginals: Vec<Matrix>,
}

impl MarketData {
    /// Scheduling instance for day `day` (1-based).
    pub fn instance(&self, day: usize, capacity: f64) -> ProblemInstance {
        let u = &self.marginals[day - 1];
        let t_max = u.first().map_or(0, |r| r.len());
        ProblemInstance::new(utilities_from_marginals(u), self.job_sizes.clone(), vec![capacity; t_max])
    }
}

/// Draws job sizes once and lets every marginal utility drift by `±drift`
/// per day, up with the phase probability; marginals are floored at
/// [`MARGINAL_FLOOR`].
pub fn generate_market(config: &MarketConfig) -> Result<MarketData> {
    let problems = config.validate();
    if !problems.is_empty() {
        return Err(Error::Invalid(problems.join("; ")));
    }
    let (n, t_max, seed) = (config.n_users, config.n_tiers, config.seed);
    let (jl, jh) = config.job_size_range;
    let job_sizes = (0..n).map(|i| rng(seed, STREAM_JOBS, 0, i as u64).gen_range(jl..=jh) as f64).collect();
    let (ul, uh) = config.initial_utility_range;
    let first: Matrix = (0..n)
        .map(|i| {
            let mut r = rng(seed, STREAM_INITIAL, 1, i as u64);
            (0..t_max).map(|_| if uh > ul { r.gen_range(ul..uh) } else { ul }).collect()
        })
        .collect();
    let mut marginals = vec![first];
    for day in 2..=config.days {
        let p = config.up_probability(day);
        let prev = marginals.last().unwrap();
        let next = prev
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = rng(seed, STREAM_DRIFT, day as u64, i as u64);
                row.iter()
                    .map(|u| {
                        let step = if r.gen_bool(p) { config.drift } else { -config.drift };
                        (u + step).max(MARGINAL_FLOOR)
                    })
                    .collect()
            })
            .collect();
        marginals.push(next);
    }
    Ok(MarketData { job_sizes, marginals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingDayMeta {
    /// Relative price change over the day's rounds.
    pub price_delta: f64,
    pub projection_warning: bool,
}

/// One scheme's outcome on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeDay {
    pub scheme: Scheme,
    pub welfare: f64,
    pub tier_welfare: Vec<f64>,
    pub tier_price: Vec<f64>,
    pub user_utility: Vec<f64>,
    pub user_charge: Vec<f64>,
    pub tracking: Option<TrackingDayMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayResult {
    pub day: usize,
    pub schemes: Vec<SchemeDay>,
}

impl DayResult {
    pub fn scheme(&self, s: Scheme) -> Option<&SchemeDay> {
        self.schemes.iter().find(|d| d.scheme == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketRun {
    pub days: Vec<DayResult>,
}

impl MarketRun {
    pub fn mean_welfare(&self, s: Scheme) -> Option<f64> {
        let v: Vec<f64> = self.days.iter().filter_map(|d| d.scheme(s)).map(|d| d.welfare).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn scheme_day(inst: &ProblemInstance, scheme: Scheme, x: &Allocation, prices: &[f64]) -> SchemeDay {
    let f = inst.per_function();
    let t_max = inst.n_tiers();
    let tier_welfare = (0..t_max).map(|t| x.iter().zip(&f).map(|(xi, fi)| xi[t] * fi[t]).sum()).collect();
    let user_utility = x.iter().zip(&f).map(|(xi, fi)| xi.iter().zip(fi).map(|(a, b)| a * b).sum()).collect();
    let user_charge = x.iter().map(|xi| xi.iter().zip(prices).map(|(a, p)| a * p).sum()).collect();
    SchemeDay {
        scheme,
        welfare: relaxed_welfare(inst, x),
        tier_welfare,
        tier_price: prices.to_vec(),
        user_utility,
        user_charge,
        tracking: None,
    }
}

/// Welfare-optimal allocation with the LP's shadow prices.
pub fn run_scheme_optimal(inst: &ProblemInstance) -> Result<SchemeDay> {
    let sol = solve_sys_lp(inst)?;
    Ok(scheme_day(inst, Scheme::Optimal, &sol.allocation, &sol.tier_prices))
}

/// `rounds` budget exchanges at the carried-over prices in `state`. Users are
/// charged the prices they bid against.
pub fn run_scheme_tracking(
    inst: &ProblemInstance,
    params: &TrackingParams,
    state: &mut TrackingState,
    rounds: usize,
) -> Result<SchemeDay> {
    let start = state.prices.clone();
    let mut last = None;
    for _ in 0..rounds.max(1) {
        last = Some(tracking_round(inst, params, state)?);
    }
    let out = last.expect("at least one round");
    let mut day = scheme_day(inst, Scheme::Tracking, &out.allocation, &out.posted);
    let delta = start.iter().zip(&state.prices).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        / start.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    day.tracking = Some(TrackingDayMeta { price_delta: delta, projection_warning: out.projection_warning });
    Ok(day)
}

/// Users arrive in `order`; each takes the earliest tiers whose frozen price
/// does not exceed its per-function value, as much as capacity and its job
/// size allow.
pub fn run_scheme_fcfs(inst: &ProblemInstance, prices: &[f64], order: &[usize]) -> SchemeDay {
    let t_max = inst.n_tiers();
    let f = inst.per_function();
    let mut x = vec![vec![0.0; t_max]; inst.n_users()];
    let mut remaining = inst.capacities.clone();
    for &i in order {
        let mut need = inst.job_sizes[i];
        for t in 0..t_max {
            if need <= 0.0 {
                break;
            }
            if f[i][t] >= prices[t] && remaining[t] > 0.0 {
                let take = need.min(remaining[t]);
                x[i][t] = take;
                remaining[t] -= take;
                need -= take;
            }
        }
    }
    scheme_day(inst, Scheme::Fcfs, &x, prices)
}

/// Arrival order of day `day` for the FCFS scheme.
pub fn fcfs_order(seed: u64, day: usize, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed, STREAM_FCFS, day as u64, 0));
    order
}

/// Tracking parameters used by the simulation for `config` on `day1`.
pub fn tracking_params(config: &MarketConfig, day1: &ProblemInstance) -> TrackingParams {
    let mut p = TrackingParams::for_instance(day1);
    p.gradient_steps = config.tracking.gradient_steps;
    p.regularization = config.tracking.regularization;
    p.adaptive = config.tracking.adaptive;
    match config.tracking.kappa {
        Some(k) => {
            p.kappa = k;
            p.relative_step = 0.0;
        }
        None => p.relative_step = config.tracking.relative_step,
    }
    p
}

/// Runs every configured scheme on every day.
pub fn run_market(config: &MarketConfig) -> Result<MarketRun> {
    let data = generate_market(config)?;
    let day1 = data.instance(1, config.capacity);
    let params = tracking_params(config, &day1);
    let wants = |s| config.schemes.contains(&s);
    let mut state = TrackingState::new(&vec![INITIAL_PRICE; config.n_tiers]);
    if wants(Scheme::Tracking) && config.tracking.warm_start {
        for _ in 0..params.max_rounds {
            if tracking_round(&day1, &params, &mut state)?.price_delta < params.eps {
                break;
            }
        }
    }
    let frozen = if wants(Scheme::Fcfs) { Some(solve_sys_lp(&day1)?.tier_prices) } else { None };
    let mut days = Vec::with_capacity(config.days);
    for day in 1..=config.days {
        let inst = data.instance(day, config.capacity);
        let mut schemes = Vec::new();
        for &s in &config.schemes {
            let r = match s {
                Scheme::Optimal => run_scheme_optimal(&inst)?,
                Scheme::Tracking => run_scheme_tracking(&inst, &params, &mut state, config.tracking.rounds_per_day)?,
                Scheme::Fcfs => {
                    run_scheme_fcfs(&inst, frozen.as_ref().unwrap(), &fcfs_order(config.seed, day, config.n_users))
                }
            };
            schemes.push(r);
        }
        days.push(DayResult { day, schemes });
    }
    Ok(MarketRun { days })
}

/// Lottery-experiment instance: jobs scaled by `scale`, and the users in the
/// first `fraction` of a seeded permutation weighting probabilities with the
/// two-parameter family (the rest with the identity).
pub fn cpt_experiment_instance(settings: &CptSettings, seed: u64, scale: f64, fraction: f64) -> Result<CptInstance> {
    let (n, t_max) = (settings.n_users, settings.n_tiers);
    let (jl, jh) = settings.job_size_range;
    let (ul, uh) = settings.utility_range;
    let (gl, gh) = settings.gamma_range;
    let jobs = (0..n).map(|i| rng(seed, STREAM_CPT_JOBS, 0, i as u64).gen_range(jl..=jh) as f64 * scale).collect();
    let utilities = (0..n)
        .map(|i| {
            let mut r = rng(seed, STREAM_CPT_UTILITY, 0, i as u64);
            let mut row: Vec<f64> = (0..t_max).map(|_| if uh > ul { r.gen_range(ul..uh) } else { ul }).collect();
            row.sort_by(|a, b| b.total_cmp(a));
            row
        })
        .collect();
    let base = ProblemInstance::new(utilities, jobs, vec![settings.capacity; t_max]);
    let mut order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng(seed, STREAM_CPT_ORDER, 0, 0));
    }
    let n_cpt = (fraction * n as f64).round() as usize;
    let mut weights = vec![WeightingFunction::Identity; n];
    for &i in order.iter().take(n_cpt) {
        let gamma = if gh > gl { rng(seed, STREAM_CPT_GAMMA, 0, i as u64).gen_range(gl..gh) } else { gl };
        weights[i] = WeightingFunction::TwoParam { delta: settings.delta, gamma };
    }
    CptInstance::new(base, weights, settings.k)
}

/// CPT-aware versus expected-utility allocation on one instance, both
/// scored with the CPT objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptComparison {
    /// Optimal value of the lottery LP.
    pub cpt_relaxed: f64,
    /// CPT value of the lotteries extracted from the LP solution.
    pub cpt_extracted: f64,
    /// CPT value of the expected-utility optimum read as lotteries
    /// (`P(tier t) = x_{i,t}/J_i`).
    pub eu_cpt_value: f64,
    /// What a CPT-aware provider offers: the better of the two candidates.
    pub cpt_aware: f64,
}

impl CptComparison {
    /// Relative advantage of the CPT-aware provider.
    pub fn advantage(&self) -> f64 {
        if self.eu_cpt_value > 0.0 {
            self.cpt_aware / self.eu_cpt_value - 1.0
        } else {
            0.0
        }
    }

    /// Relative advantage of the extracted lotteries alone.
    pub fn extracted_advantage(&self) -> f64 {
        if self.eu_cpt_value > 0.0 {
            self.cpt_extracted / self.eu_cpt_value - 1.0
        } else {
            0.0
        }
    }
}

/// CPT objective of the expected-utility optimum.
pub fn eu_cpt_value(ci: &CptInstance) -> Result<f64> {
    let eu = solve_sys_eu(&ci.base)?;
    let q: Matrix = eu
        .p
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            row.iter()
                .map(|p| {
                    acc += p;
                    f64::min(acc, 1.0)
                })
                .collect()
        })
        .collect();
    cpt_objective_of_q(ci, &q)
}

pub fn compare_cpt_eu(ci: &CptInstance) -> Result<CptComparison> {
    let lp = solve_sys_cpt_k_r(ci)?;
    let ex = lottery_from_z(ci, &lp.allocation)?;
    let eu = eu_cpt_value(ci)?;
    Ok(CptComparison { cpt_relaxed: lp.value, cpt_extracted: ex.v_cpt_k, eu_cpt_value: eu, cpt_aware: ex.v_cpt_k.max(eu) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub scale: f64,
    pub comparison: CptComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionRow {
    pub fraction: f64,
    pub comparison: CptComparison,
}

/// CPT versus EU as all job sizes are multiplied by each of `settings.scales`
/// (every user weighting probabilities).
pub fn demand_scaling_experiment(settings: &CptSettings, seed: u64) -> Result<Vec<ScalingRow>> {
    settings
        .scales
        .iter()
        .map(|&scale| {
            let ci = cpt_experiment_instance(settings, seed, scale, 1.0)?;
            Ok(ScalingRow { scale, comparison: compare_cpt_eu(&ci)? })
        })
        .collect()
}

/// CPT versus EU as the share of probability-weighting users grows, at
/// demand scale `settings.fraction_scale`.
pub fn cpt_fraction_experiment(settings: &CptSettings, seed: u64) -> Result<Vec<FractionRow>> {
    settings
        .fractions
        .iter()
        .map(|&fraction| {
            let ci = cpt_experiment_instance(settings, seed, settings.fraction_scale, fraction)?;
            Ok(FractionRow { fraction, comparison: compare_cpt_eu(&ci)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MarketConfig {
        MarketConfig {
            days: 6,
            n_users: 8,
            n_tiers: 3,
            capacity: 150.0,
            phases: vec![Phase { start: 1, end: 3, up_probability: 1.0 }, Phase { start: 4, end: 6, up_probability: 0.0 }],
            ..MarketConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_drifts() {
        let c = small();
        let a = generate_market(&c).unwrap();
        assert_eq!(a, generate_market(&c).unwrap());
        for d in 1..3 {
            for (r0, r1) in a.marginals[d - 1].iter().zip(&a.marginals[d]) {
                for (x, y) in r0.iter().zip(r1) {
                    assert!((y - x - 0.5).abs() < 1e-12);
                }
            }
        }
        let b = generate_market(&MarketConfig { seed: 1, ..c }).unwrap();
        assert_ne!(a, b);
        assert!(a.job_sizes.iter().all(|j| (10.0..=100.0).contains(j) && j.fract() == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(MarketConfig::default().validate().is_empty());
        let mut c = MarketConfig::default();
        c.phases[1].start = 32;
        assert!(!c.validate().is_empty());
        let mut c = MarketConfig::default();
        c.phases[0].up_probability = 1.5;
        assert!(!c.validate().is_empty());
    }

    #[test]
    fn fcfs_edges() {
        let one = ProblemInstance::new(vec![vec![10.0, 5.0]], vec![5.0], vec![100.0, 100.0]);
        let d = run_scheme_fcfs(&one, &[1.0, 1.0], &[0]);
        assert_eq!(d.welfare, 10.0);
        let d = run_scheme_fcfs(&one, &[3.0, 3.0], &[0]);
        assert_eq!(d.welfare, 0.0);
    }

    #[test]
    fn schemes_are_ordered_and_charges_bounded() {
        let run = run_market(&small()).unwrap();
        for d in &run.days {
            let opt = d.scheme(Scheme::Optimal).unwrap().welfare;
            for s in &d.schemes {
                assert!(s.welfare <= opt + 1e-9 * opt.max(1.0));
                assert!(s.welfare >= 0.0);
                for (c, u) in s.user_charge.iter().zip(&s.user_utility) {
                    if s.scheme != Scheme::Fcfs {
                        assert!(*c <= u + 1e-9, "{:?} charge {c} above value {u}", s.scheme);
                    }
                }
            }
        }
    }
}
