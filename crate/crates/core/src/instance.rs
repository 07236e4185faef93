//! Problem instances, derived values and welfare evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix stored as a vector of rows.
pub type Matrix = Vec<Vec<f64>>;

/// Function executions per user (rows) and tier (columns).
pub type Allocation = Matrix;

/// Relative tolerance used when deciding whether a job has completed.
pub const COMPLETION_TOL: f64 = 1e-9;

/// A scheduling instance: N users, T service tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    /// End time of each tier in seconds. Metadata only.
    pub tier_end_times: Vec<f64>,
    /// `utilities[i][t]`: utility of user `i` when its job completes in tier `t`.
    pub utilities: Matrix,
    /// Number of function executions needed by each user.
    pub job_sizes: Vec<f64>,
    /// Execution slots available in each tier.
    pub capacities: Vec<f64>,
}

/// Marginal utilities `u` and per-function values `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedValues {
    pub marginal: Matrix,
    pub per_function: Matrix,
}

/// Completion tier of every user (0-based; `n_tiers` means "never") and the
/// utility it realizes.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionProfile {
    pub completion_tier: Vec<usize>,
    pub realized_utility: Vec<f64>,
}

impl ProblemInstance {
    /// Builds an instance with tier end times `1, 2, ..., T`.
    pub fn new(utilities: Matrix, job_sizes: Vec<f64>, capacities: Vec<f64>) -> Self {
        let tier_end_times = (1..=capacities.len()).map(|t| t as f64).collect();
        ProblemInstance { tier_end_times, utilities, job_sizes, capacities }
    }

    pub fn n_users(&self) -> usize {
        self.utilities.len()
    }

    pub fn n_tiers(&self) -> usize {
        self.capacities.len()
    }

    /// Per-function value `F[i][t] = U[i][t] / J_i`.
    pub fn per_function(&self) -> Matrix {
        self.utilities
            .iter()
            .zip(&self.job_sizes)
            .map(|(row, &j)| row.iter().map(|&u| u / j).collect())
            .collect()
    }

    /// Checks every structural invariant and returns the list of violations.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.n_users();
        let t = self.n_tiers();
        if n == 0 {
            out.push("no users".to_string());
        }
        if t == 0 {
            out.push("no tiers".to_string());
        }
        if self.job_sizes.len() != n {
            out.push(format!("job_sizes has {} entries, expected {n}", self.job_sizes.len()));
        }
        if self.tier_end_times.len() != t {
            out.push(format!("tier_end_times has {} entries, expected {t}", self.tier_end_times.len()));
        }
        for (k, w) in self.tier_end_times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                out.push(format!("tier end times not increasing, tier {}", k + 1));
            }
        }
        if let Some(&first) = self.tier_end_times.first() {
            if !(first > 0.0) {
                out.push("nonpositive tier end time, tier 0".to_string());
            }
        }
        for (k, &m) in self.capacities.iter().enumerate() {
            if !(m > 0.0) || !m.is_finite() {
                out.push(format!("nonpositive capacity, tier {k}"));
            }
        }
        for (i, &j) in self.job_sizes.iter().enumerate() {
            if !(j >= 1.0) || j.fract() != 0.0 || !j.is_finite() {
                out.push(format!("job size not a positive integer, user {i}"));
            }
        }
        for (i, row) in self.utilities.iter().enumerate() {
            if row.len() != t {
                out.push(format!("utility row has {} entries, expected {t}, user {i}", row.len()));
                continue;
            }
            if row.iter().any(|u| !(*u >= 0.0) || !u.is_finite()) {
                out.push(format!("negative or non-finite utility, user {i}"));
            }
            if row.windows(2).any(|w| w[1] > w[0]) {
                out.push(format!("non-monotone utility, user {i}"));
            }
        }
        out
    }

    pub fn check_allocation_shape(&self, x: &Allocation) -> Result<()> {
        let t = self.n_tiers();
        if x.len() != self.n_users() || x.iter().any(|r| r.len() != t) {
            return Err(Error::Shape(format!(
                "allocation must be {}x{}",
                self.n_users(),
                t
            )));
        }
        Ok(())
    }
}

/// Computes `u[i][t] = U[i][t] - U[i][t+1]` (with `U[i][T] = 0`) and `F = U/J`.
pub fn derive_values(inst: &ProblemInstance) -> DerivedValues {
    let marginal = inst
        .utilities
        .iter()
        .map(|row| {
            (0..row.len())
                .map(|t| row[t] - row.get(t + 1).copied().unwrap_or(0.0))
                .collect()
        })
        .collect();
    DerivedValues { marginal, per_function: inst.per_function() }
}

/// Rebuilds `U` from marginals by suffix sums.
pub fn utilities_from_marginals(u: &Matrix) -> Matrix {
    u.iter()
        .map(|row| {
            let mut out = vec![0.0; row.len()];
            let mut acc = 0.0;
            for t in (0..row.len()).rev() {
                acc += row[t];
                out[t] = acc;
            }
            out
        })
        .collect()
}

/// First tier at which the prefix sum of `row` reaches `job` (with tolerance),
/// or `row.len()` if it never does.
pub fn completion_tier(row: &[f64], job: f64) -> usize {
    let mut acc = 0.0;
    for (t, &v) in row.iter().enumerate() {
        acc += v;
        if acc >= job * (1.0 - COMPLETION_TOL) {
            return t;
        }
    }
    row.len()
}

pub fn completion_times(inst: &ProblemInstance, x: &Allocation) -> Result<CompletionProfile> {
    inst.check_allocation_shape(x)?;
    let t_max = inst.n_tiers();
    let mut completion_tier_v = Vec::with_capacity(x.len());
    let mut realized = Vec::with_capacity(x.len());
    for (i, row) in x.iter().enumerate() {
        let t = completion_tier(row, inst.job_sizes[i]);
        completion_tier_v.push(t);
        realized.push(if t < t_max { inst.utilities[i][t] } else { 0.0 });
    }
    Ok(CompletionProfile { completion_tier: completion_tier_v, realized_utility: realized })
}

/// Sum of realized utilities; unfinished jobs contribute nothing.
pub fn realized_welfare(inst: &ProblemInstance, x: &Allocation) -> Result<f64> {
    Ok(completion_times(inst, x)?.realized_utility.iter().sum())
}

/// Relaxed welfare `Σ F[i][t]·x[i][t]`.
pub fn relaxed_welfare(inst: &ProblemInstance, x: &Allocation) -> f64 {
    let f = inst.per_function();
    f.iter()
        .zip(x)
        .map(|(fr, xr)| fr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Caps every user's allocation at its job size, consuming tiers in order.
/// Executions beyond `J_i` have no use to the user.
pub fn truncate_to_jobs(x: &Allocation, job_sizes: &[f64]) -> Allocation {
    x.iter()
        .zip(job_sizes)
        .map(|(row, &j)| {
            let mut left = j;
            row.iter()
                .map(|&v| {
                    let take = v.max(0.0).min(left);
                    left -= take;
                    take
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy() -> ProblemInstance {
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
    fn toy_is_valid() {
        assert!(toy().validate().is_empty());
    }

    #[test]
    fn validation_messages() {
        let inst = ProblemInstance::new(vec![vec![1.0, 2.0]], vec![1.0], vec![1.0, 1.0]);
        assert_eq!(inst.validate(), vec!["non-monotone utility, user 0".to_string()]);
        let inst = ProblemInstance::new(vec![vec![1.0]], vec![1.0], vec![0.0]);
        assert_eq!(inst.validate(), vec!["nonpositive capacity, tier 0".to_string()]);
    }

    #[test]
    fn derived_values() {
        let d = derive_values(&toy());
        assert_eq!(d.marginal[1], vec![1.5, 1.5, 1.0]);
        assert_eq!(d.per_function[1], vec![0.4, 0.25, 0.1]);
        assert_eq!(d.marginal[2], vec![0.0, 0.0, 2.0]);
        let z = derive_values(&ProblemInstance::new(vec![vec![0.0; 3]], vec![2.0], vec![1.0; 3]));
        assert_eq!(z.marginal[0], vec![0.0; 3]);
        assert_eq!(z.per_function[0], vec![0.0; 3]);
    }

    #[test]
    fn completion_and_welfare() {
        let inst = toy();
        let p = completion_times(&inst, &diag10()).unwrap();
        assert_eq!(p.completion_tier, vec![0, 1, 2]);
        assert_eq!(realized_welfare(&inst, &diag10()).unwrap(), 7.5);
        let zero = vec![vec![0.0; 3]; 3];
        let p = completion_times(&inst, &zero).unwrap();
        assert_eq!(p.completion_tier, vec![3, 3, 3]);
        assert_eq!(realized_welfare(&inst, &zero).unwrap(), 0.0);

        let one = ProblemInstance::new(vec![vec![5.0, 1.0]], vec![4.0], vec![9.0, 9.0]);
        let p = completion_times(&one, &vec![vec![2.0, 2.0]]).unwrap();
        assert_eq!(p.completion_tier, vec![1]);
        assert_eq!(realized_welfare(&one, &vec![vec![4.0, 0.0]]).unwrap(), 5.0);
        assert!(completion_times(&one, &vec![vec![1.0]]).is_err());
    }

    #[test]
    fn truncation_keeps_earliest() {
        let x = truncate_to_jobs(&vec![vec![3.0, 4.0, 5.0]], &[5.0]);
        assert_eq!(x, vec![vec![3.0, 2.0, 0.0]]);
    }
}
