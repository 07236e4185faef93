//! Command implementations behind the `tiermarket` binary. Each command reads
//! its inputs, writes its results into the output directory together with a
//! `manifest.json`, and returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use tiermarket::cpt::{
    cpt_bruteforce_optimum, cpt_gap_bound, cpt_price_tracking, cpt_value, fosd_check, lottery_from_z,
    solve_sys_cpt_k_r, typical_structure_check, CptInstance, Lottery, WeightingFunction, DEFAULT_K,
};
use tiermarket::market::{price_tracking, TrackingParams};
use tiermarket::scheduler::{gap_bound, round_lp_solution, solve_sys_exact_bruteforce, solve_sys_lp, sys_kkt_residuals};
use tiermarket::sim::{cpt_fraction_experiment, demand_scaling_experiment, run_market, MarketConfig, MarketRun, Scheme};
use tiermarket::ProblemInstance;

/// Exit code for unreadable or invalid input.
pub const EXIT_INPUT: i32 = 2;
/// Exit code for solver failures, including size guards.
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Solver(m) => write!(f, "solver error: {m}"),
        }
    }
}

impl From<tiermarket::Error> for CliError {
    fn from(e: tiermarket::Error) -> Self {
        match e {
            tiermarket::Error::Shape(_) | tiermarket::Error::Invalid(_) => CliError::Input(e.to_string()),
            tiermarket::Error::SizeGuard(_) | tiermarket::Error::Solver(_) => CliError::Solver(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tiermarket", version, about = "Tiered scheduling, pricing and lottery allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the welfare LP (and optionally the exact problem) for an instance.
    Solve(SolveArgs),
    /// Run the budget/price tracking protocol on an instance.
    Track(TrackArgs),
    /// Run the multi-day market simulation.
    Simulate(SimulateArgs),
    /// Solve the lottery LP and extract per-user lotteries.
    Cpt(CptArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Also compute the exact optimum by enumeration.
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Fixed price step size; prices move by a fraction of themselves when
    /// absent.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Price steps per budget round.
    #[arg(long = "g-steps")]
    pub g_steps: Option<usize>,
    /// Relative price change at which tracking stops.
    #[arg(long)]
    pub eps: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Market configuration JSON; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated subset of optimal,tracking,fcfs.
    #[arg(long)]
    pub schemes: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct CptArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Equiprobable alternatives per user.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Weighting for every user: identity, prelec:G, tk:G, two_param:D,G, or a
    /// JSON object. Per-user `weighting` fields in the instance are used
    /// otherwise; users without one are expected-utility users.
    #[arg(long)]
    pub weight: Option<String>,
    /// Also compute the grid optimum by enumeration.
    #[arg(long)]
    pub exact: bool,
    /// Also run the lottery price-tracking protocol.
    #[arg(long)]
    pub track: bool,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long = "g-steps")]
    pub g_steps: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Lottery file (as written to `lotteries.json`) holding promised
    /// lotteries to check the extracted ones against.
    #[arg(long)]
    pub fosd: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// On-disk instance format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    /// Tier end times.
    pub tiers: Vec<f64>,
    pub capacities: Vec<f64>,
    pub users: Vec<UserFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserFile {
    pub job_size: f64,
    pub utilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighting: Option<WeightingFunction>,
}

impl InstanceFile {
    pub fn from_instance(inst: &ProblemInstance) -> Self {
        InstanceFile {
            tiers: inst.tier_end_times.clone(),
            capacities: inst.capacities.clone(),
            users: inst
                .utilities
                .iter()
                .zip(&inst.job_sizes)
                .map(|(u, &j)| UserFile { job_size: j, utilities: u.clone(), weighting: None })
                .collect(),
        }
    }

    pub fn to_instance(&self) -> CliResult<ProblemInstance> {
        if self.tiers.len() != self.capacities.len() {
            return Err(CliError::Input(format!(
                "{} tier end times for {} capacities",
                self.tiers.len(),
                self.capacities.len()
            )));
        }
        let inst = ProblemInstance {
            tier_end_times: self.tiers.clone(),
            utilities: self.users.iter().map(|u| u.utilities.clone()).collect(),
            job_sizes: self.users.iter().map(|u| u.job_size).collect(),
            capacities: self.capacities.clone(),
        };
        let problems = inst.validate();
        if problems.is_empty() {
            Ok(inst)
        } else {
            Err(CliError::Input(problems.join("; ")))
        }
    }
}

/// Written next to every result set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub instance: Option<String>,
    pub seed: u64,
    pub out: String,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
}

/// Lottery report entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotteryReport {
    pub user: usize,
    pub outcomes: Vec<Outcome>,
    pub cpt_value: f64,
    pub eu_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// 0-based tier; the tier count stands for "not completed".
    pub tier: usize,
    pub prob: f64,
}

pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Track(a) => cmd_track(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Cpt(a) => cmd_cpt(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("malformed {}: {e}", path.display())))
}

pub fn read_instance(path: &Path) -> CliResult<(ProblemInstance, InstanceFile)> {
    let file: InstanceFile = read_json(path)?;
    Ok((file.to_instance()?, file))
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    written.push(path);
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize, written: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    write_file(dir, name, &text, written)
}

fn write_csv(
    dir: &Path,
    name: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
    written: &mut Vec<PathBuf>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    write_file(dir, name, &String::from_utf8_lossy(&bytes), written)
}

/// Shortest decimal that reads back as the same double (at most 17
/// significant digits).
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

struct Manifest<'a> {
    command: &'a str,
    config: Option<&'a Path>,
    instance: Option<&'a Path>,
    seed: u64,
    out: &'a Path,
    start: Instant,
}

impl Manifest<'_> {
    fn write(self, written: &mut Vec<PathBuf>) -> CliResult<()> {
        let files = written.iter().filter_map(|p| p.file_name()).map(|f| f.to_string_lossy().into_owned()).collect();
        let m = RunManifest {
            command: self.command.to_string(),
            config: self.config.map(|p| p.display().to_string()),
            instance: self.instance.map(|p| p.display().to_string()),
            seed: self.seed,
            out: self.out.display().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
            files,
        };
        write_json(self.out, "manifest.json", &m, written)
    }
}

pub fn cmd_solve(a: &SolveArgs) -> CliResult<Vec<PathBuf>> {
    let start = Instant::now();
    let (inst, _) = read_instance(&a.instance)?;
    let sol = solve_sys_lp(&inst)?;
    let rounded = round_lp_solution(&inst, &sol.allocation);
    let v_star = if a.exact { Some(solve_sys_exact_bruteforce(&inst)?.value) } else { None };
    let kkt = sys_kkt_residuals(&inst, &sol.allocation, &sol.user_duals, &sol.tier_prices);
    let bound = gap_bound(&inst);
    let solution = json!({
        "x": sol.allocation,
        "lambda": sol.user_duals,
        "mu": sol.tier_prices,
        "V_R": sol.value,
        "V_hat": rounded.value,
        "V_star": v_star,
        "gap_bound": { "standard": bound.standard, "tight": bound.tight },
        "kkt_residuals": {
            "dual_feasibility": kkt.dual_feasibility,
            "stationarity": kkt.stationarity,
            "complementarity": kkt.complementarity,
        },
        "certificate": {
            "primal_residual": sol.certificate.primal_residual,
            "dual_infeasibility": sol.certificate.dual_infeasibility,
            "duality_gap": sol.certificate.duality_gap,
        },
    });
    prepare_out(&a.common.out)?;
    let mut written = Vec::new();
    write_json(&a.common.out, "solution.json", &solution, &mut written)?;
    Manifest {
        command: "solve",
        config: None,
        instance: Some(&a.instance),
        seed: a.common.seed.unwrap_or(0),
        out: &a.common.out,
        start,
    }
    .write(&mut written)?;
    Ok(written)
}

fn tracking_params(inst: &ProblemInstance, kappa: Option<f64>, g: Option<usize>, eps: Option<f64>) -> CliResult<TrackingParams> {
    let mut p = TrackingParams::for_instance(inst);
    if let Some(g) = g {
        if g == 0 {
            return Err(CliError::Input("--g-steps must be positive".into()));
        }
        p.kappa *= p.gradient_steps as f64 / g as f64;
        p.gradient_steps = g;
    }
    if let Some(k) = kappa {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(CliError::Input(format!("--kappa must be non-negative, got {k}")));
        }
        p.kappa = k;
        p.relative_step = 0.0;
    }
    if let Some(e) = eps {
        if !(e > 0.0) {
            return Err(CliError::Input(format!("--eps must be positive, got {e}")));
        }
        p.eps = e;
    }
    Ok(p)
}

const TRAJECTORY_HEADER: [&str; 5] = ["round", "tier", "price", "budget_sum", "objective"];

fn trajectory_rows(rows: &[tiermarket::market::TrajectoryRow]) -> impl Iterator<Item = Vec<String>> + '_ {
    rows.iter().map(|r| vec![r.round.to_string(), r.tier.to_string(), num(r.price), num(r.budget_sum), num(r.objective)])
}

pub fn cmd_track(a: &TrackArgs) -> CliResult<Vec<PathBuf>> {
    let start = Instant::now();
    let (inst, _) = read_instance(&a.instance)?;
    let params = tracking_params(&inst, a.kappa, a.g_steps, a.eps)?;
    let r = price_tracking(&inst, &params)?;
    let state = json!({
        "prices": r.prices,
        "budgets": r.budgets,
        "allocation": r.allocation,
        "objective": r.objective,
        "rounds": r.rounds,
        "stopped_on_tolerance": r.stopped_on_tolerance,
        "converged": r.converged,
        "projection_warning": r.projection_warning,
        "params": {
            "kappa": params.kappa,
            "relative_step": params.relative_step,
            "gradient_steps": params.gradient_steps,
            "eps": params.eps,
            "regularization": params.regularization,
            "adaptive": params.adaptive,
        },
    });
    prepare_out(&a.common.out)?;
    let mut written = Vec::new();
    write_csv(&a.common.out, "trajectory.csv", &TRAJECTORY_HEADER, trajectory_rows(&r.trajectory), &mut written)?;
    write_json(&a.common.out, "tracking.json", &state, &mut written)?;
    Manifest {
        command: "track",
        config: None,
        instance: Some(&a.instance),
        seed: a.common.seed.unwrap_or(0),
        out: &a.common.out,
        start,
    }
    .write(&mut written)?;
    Ok(written)
}

pub fn parse_schemes(s: &str) -> CliResult<Vec<Scheme>> {
    let out: Vec<Scheme> =
        s.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.parse()).collect::<tiermarket::Result<_>>()?;
    if out.is_empty() {
        return Err(CliError::Input("--schemes lists no scheme".into()));
    }
    Ok(out)
}

/// Writes the three market CSVs for `run`.
pub fn write_market_csvs(dir: &Path, run: &MarketRun, written: &mut Vec<PathBuf>) -> CliResult<()> {
    let summary = run
        .days
        .iter()
        .flat_map(|d| d.schemes.iter().map(move |s| vec![d.day.to_string(), s.scheme.name().to_string(), num(s.welfare)]));
    write_csv(dir, "market_summary.csv", &["day", "scheme", "welfare"], summary, written)?;
    let tiers = run.days.iter().flat_map(|d| {
        d.schemes.iter().flat_map(move |s| {
            (0..s.tier_price.len()).map(move |t| {
                vec![d.day.to_string(), s.scheme.name().to_string(), t.to_string(), num(s.tier_welfare[t]), num(s.tier_price[t])]
            })
        })
    });
    write_csv(dir, "tier_series.csv", &["day", "scheme", "tier", "welfare", "price"], tiers, written)?;
    let users = run.days.iter().flat_map(|d| {
        d.schemes.iter().flat_map(move |s| {
            (0..s.user_utility.len()).map(move |i| {
                vec![d.day.to_string(), s.scheme.name().to_string(), i.to_string(), num(s.user_utility[i]), num(s.user_charge[i])]
            })
        })
    });
    write_csv(dir, "user_series.csv", &["day", "scheme", "user", "utility", "charge"], users, written)
}

pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<Vec<PathBuf>> {
    let start = Instant::now();
    let mut config: MarketConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => MarketConfig::default(),
    };
    if let Some(seed) = a.common.seed {
        config.seed = seed;
    }
    if let Some(s) = &a.schemes {
        config.schemes = parse_schemes(s)?;
    }
    let problems = config.validate();
    if !problems.is_empty() {
        return Err(CliError::Input(problems.join("; ")));
    }
    let run = run_market(&config)?;
    prepare_out(&a.common.out)?;
    let mut written = Vec::new();
    write_market_csvs(&a.common.out, &run, &mut written)?;
    if let Some(cpt) = &config.cpt {
        let scaling = demand_scaling_experiment(cpt, config.seed)?;
        let rows = scaling.iter().map(|r| {
            let c = &r.comparison;
            vec![num(r.scale), num(c.cpt_relaxed), num(c.cpt_extracted), num(c.eu_cpt_value), num(c.cpt_aware), num(c.advantage())]
        });
        let header = ["scale", "cpt_relaxed", "cpt_extracted", "eu_cpt_value", "cpt_aware", "advantage"];
        write_csv(&a.common.out, "cpt_scaling.csv", &header, rows, &mut written)?;
        let fractions = cpt_fraction_experiment(cpt, config.seed)?;
        let rows = fractions.iter().map(|r| {
            let c = &r.comparison;
            vec![num(r.fraction), num(c.cpt_relaxed), num(c.cpt_extracted), num(c.eu_cpt_value), num(c.cpt_aware), num(c.advantage())]
        });
        let header = ["fraction", "cpt_relaxed", "cpt_extracted", "eu_cpt_value", "cpt_aware", "advantage"];
        write_csv(&a.common.out, "cpt_fraction.csv", &header, rows, &mut written)?;
    }
    Manifest {
        command: "simulate",
        config: a.config.as_deref(),
        instance: None,
        seed: config.seed,
        out: &a.common.out,
        start,
    }
    .write(&mut written)?;
    Ok(written)
}

/// Parses `identity`, `prelec:G`, `tk:G`, `two_param:D,G` or a JSON object.
pub fn parse_weight(s: &str) -> CliResult<WeightingFunction> {
    let s = s.trim();
    if s.starts_with('{') {
        return serde_json::from_str(s).map_err(|e| CliError::Input(format!("bad --weight JSON: {e}")));
    }
    let (name, params) = s.split_once(':').unwrap_or((s, ""));
    let nums: Vec<f64> = params
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>().map_err(|e| CliError::Input(format!("bad --weight parameter {p:?}: {e}"))))
        .collect::<CliResult<_>>()?;
    let w = match (name, nums.as_slice()) {
        ("identity", []) => WeightingFunction::Identity,
        ("prelec", [g]) => WeightingFunction::Prelec { gamma: *g },
        ("tk", [g]) | ("tversky_kahneman", [g]) => WeightingFunction::TverskyKahneman { gamma: *g },
        ("two_param", [d, g]) => WeightingFunction::TwoParam { delta: *d, gamma: *g },
        _ => return Err(CliError::Input(format!("unrecognized --weight {s:?}"))),
    };
    let problems = w.validate();
    if problems.is_empty() {
        Ok(w)
    } else {
        Err(CliError::Input(problems.join("; ")))
    }
}

fn lottery_reports(ci: &CptInstance, lotteries: &[Lottery]) -> CliResult<Vec<LotteryReport>> {
    lotteries
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let u = &ci.base.utilities[i];
            let eu_value = l.outcomes.iter().map(|&(p, t)| p * u.get(t).copied().unwrap_or(0.0)).sum();
            Ok(LotteryReport {
                user: i,
                outcomes: l.outcomes.iter().map(|&(prob, tier)| Outcome { tier, prob }).collect(),
                cpt_value: cpt_value(l, u, &ci.weights[i])?,
                eu_value,
            })
        })
        .collect()
}

pub fn cmd_cpt(a: &CptArgs) -> CliResult<Vec<PathBuf>> {
    let start = Instant::now();
    let (inst, file) = read_instance(&a.instance)?;
    let weights = match &a.weight {
        Some(s) => vec![parse_weight(s)?; inst.n_users()],
        None => file.users.iter().map(|u| u.weighting.clone().unwrap_or(WeightingFunction::Identity)).collect(),
    };
    let ci = CptInstance::new(inst, weights, a.k)?;
    let lp = solve_sys_cpt_k_r(&ci)?;
    let ex = lottery_from_z(&ci, &lp.allocation)?;
    let v_star = if a.exact { Some(cpt_bruteforce_optimum(&ci)?.0) } else { None };
    let gap = cpt_gap_bound(&ci, lp.value, ex.v_cpt_k, v_star);
    let structure = typical_structure_check(&ci, &lp.allocation);
    let reports = lottery_reports(&ci, &ex.lotteries)?;
    let fosd = match &a.fosd {
        Some(p) => {
            let promised: Vec<LotteryReport> = read_json(p)?;
            if promised.len() != ci.base.n_users() {
                return Err(CliError::Input(format!("{} promised lotteries for {} users", promised.len(), ci.base.n_users())));
            }
            let q_prom: Vec<Vec<f64>> = promised
                .iter()
                .map(|r| {
                    Lottery { outcomes: r.outcomes.iter().map(|o| (o.prob, o.tier)).collect() }.cumulative(ci.base.n_tiers())
                })
                .collect();
            Some(fosd_check(&ex.q_tilde, &q_prom))
        }
        None => None,
    };
    let tracking = if a.track {
        let params = tracking_params(&ci.base, a.kappa, a.g_steps, a.eps)?;
        Some(cpt_price_tracking(&ci, &params)?)
    } else {
        None
    };
    let solution = json!({
        "k": ci.k,
        "V_R": lp.value,
        "V_tilde": ex.v_tilde,
        "V_cpt_k": ex.v_cpt_k,
        "V_star": v_star,
        "q_tilde": ex.q_tilde,
        "gap": gap,
        "structure": structure,
        "duals": lp.duals,
        "tracking": tracking.as_ref().map(|t| json!({
            "prices": t.prices,
            "objective": t.objective,
            "rounds": t.rounds,
            "stopped_on_tolerance": t.stopped_on_tolerance,
            "converged": t.converged,
            "projection_warning": t.projection_warning,
        })),
    });
    prepare_out(&a.common.out)?;
    let mut written = Vec::new();
    write_json(&a.common.out, "cpt_solution.json", &solution, &mut written)?;
    write_json(&a.common.out, "lotteries.json", &reports, &mut written)?;
    if let Some(f) = &fosd {
        write_json(&a.common.out, "fosd.json", f, &mut written)?;
    }
    if let Some(t) = &tracking {
        write_csv(&a.common.out, "trajectory.csv", &TRAJECTORY_HEADER, trajectory_rows(&t.trajectory), &mut written)?;
    }
    Manifest {
        command: "cpt",
        config: None,
        instance: Some(&a.instance),
        seed: a.common.seed.unwrap_or(0),
        out: &a.common.out,
        start,
    }
    .write(&mut written)?;
    Ok(written)
}
