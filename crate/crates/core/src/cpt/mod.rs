//! Lottery allocation for users who weight probabilities.
//!
//! Each user faces a lottery over completion tiers. With `K` equiprobable
//! alternatives per user the problem becomes an LP in `K·N·T` variables whose
//! optimum can be turned back into implementable lotteries. The module also
//! carries the corresponding budget/price protocol.

mod market;
mod relaxation;
mod structure;
mod weighting;

pub use market::{
    cpt_cloud_closed_form, cpt_han_projection, cpt_price_tracking, cpt_tracking_response, cpt_user_demand,
    cpt_user_problem,
    CptProjection, CptTrackingResult, CptTrajectoryRow,
};
pub use relaxation::{
    alternative_values, average_equal_value_runs, build_sys_cpt_k_r, cpt_bruteforce_optimum, cpt_gap_bound,
    cpt_kkt_residuals, cpt_objective_of_q, cpt_relaxed_value, lottery_from_z, solve_sys_cpt_k_r, solve_sys_eu,
    z_from_q, CptDuals, CptGapReport, CptInstance, CptLpResult, Extraction, LotteryAllocation, SysEuResult,
    BRUTE_FORCE_MAX_COMBINATIONS, DEFAULT_K, MAX_K,
};
pub use structure::{
    concave_envelope, fosd_check, typical_structure_check, Envelope, FosdReport, StructureReport, UserStructure,
};
pub use weighting::{cpt_value, h_weights, weight_eval, Lottery, WeightingFunction, VALIDATION_GRID};
