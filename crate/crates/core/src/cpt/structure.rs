//! Concave envelopes of weighting functions, the shape of optimal lotteries,
//! and stochastic dominance between promised and delivered lotteries.

use serde::{Deserialize, Serialize};

use super::relaxation::{alternative_values, average_equal_value_runs, CptInstance, LotteryAllocation};
use super::weighting::WeightingFunction;
use crate::instance::Matrix;

/// Slopes within this (relative) distance of the minimum count as minimal
/// when locating where the envelope's final affine piece starts.
const SLOPE_TOL: f64 = 1e-9;
/// Relative tolerance for equal tail values.
const TAIL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub grid: Vec<f64>,
    pub w_star: Vec<f64>,
    /// Start of the final affine piece of `w*`; `1` when there is none wider
    /// than a grid cell.
    pub p_star: f64,
    /// Relative slope tolerance used to find `p_star`.
    pub tolerance: f64,
}

/// Upper concave envelope of `w` on a uniform grid of `grid_size` points.
pub fn concave_envelope(w: &WeightingFunction, grid_size: usize) -> Envelope {
    let n = grid_size.max(2);
    let grid: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&p| w.eval_clamped(p)).collect();

    // Upper hull, left to right.
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for j in 0..n {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (grid[b] - grid[a]) * (vals[j] - vals[a]) - (vals[b] - vals[a]) * (grid[j] - grid[a]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(j);
    }
    let mut w_star = vec![0.0; n];
    for seg in hull.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        for j in a..=b {
            let f = (grid[j] - grid[a]) / (grid[b] - grid[a]);
            w_star[j] = vals[a] + f * (vals[b] - vals[a]);
        }
    }

    // The last affine piece is the chord from (1, 1) with the smallest slope.
    let slopes: Vec<f64> = (0..n - 1).map(|j| (1.0 - vals[j]) / (1.0 - grid[j])).collect();
    let min = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let first = slopes.iter().position(|&s| s <= min + SLOPE_TOL * min.abs().max(1.0)).unwrap_or(n - 2);
    let p_star = if first >= n - 2 { 1.0 } else { grid[first] };
    Envelope { grid, w_star, p_star, tolerance: SLOPE_TOL }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStructure {
    pub user: usize,
    pub p_star: f64,
    /// First alternative (1-based) of the equal-value tail.
    pub k_star: usize,
    /// `false` only when the tail was checked and found unequal.
    pub passed: bool,
    /// `false` when `p* > (K−1)/K` leaves no tail to check.
    pub checked: bool,
    pub max_rel_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub users: Vec<UserStructure>,
    pub all_passed: bool,
}

/// Checks that alternatives `k*..K` of every user carry equal value, where
/// `k* = min{k : (k−1)/K ≥ p*}`, after averaging equal-value runs.
pub fn typical_structure_check(ci: &CptInstance, z: &LotteryAllocation) -> StructureReport {
    let kk = ci.k;
    let averaged = average_equal_value_runs(ci, z);
    let values = alternative_values(ci, &averaged);
    let mut users = Vec::with_capacity(values.len());
    let mut cache: Vec<(WeightingFunction, f64)> = Vec::new();
    for (i, vals) in values.iter().enumerate() {
        let w = &ci.weights[i];
        let p_star = match cache.iter().find(|(c, _)| c == w) {
            Some((_, p)) => *p,
            None => {
                let p = concave_envelope(w, super::weighting::VALIDATION_GRID).p_star;
                cache.push((w.clone(), p));
                p
            }
        };
        let k_star = (1..=kk).find(|&k| (k - 1) as f64 / kk as f64 >= p_star - 1e-12).unwrap_or(kk + 1);
        let checked = kk > 1 && p_star <= (kk - 1) as f64 / kk as f64 + 1e-12;
        let mut max_rel_gap = 0.0f64;
        if checked {
            let tail = &vals[k_star - 1..];
            let scale = tail.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if scale > 0.0 {
                let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
                max_rel_gap = (hi - lo) / scale;
            }
        }
        users.push(UserStructure { user: i, p_star, k_star, passed: max_rel_gap <= TAIL_TOL, checked, max_rel_gap });
    }
    let all_passed = users.iter().all(|u| u.passed);
    StructureReport { users, all_passed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FosdReport {
    pub passed: bool,
    /// `(user, tier)` cells where the implementation falls behind.
    pub witnesses: Vec<(usize, usize)>,
}

/// First-order dominance of the implemented over the promised lotteries,
/// cell by cell on cumulative completion probabilities.
pub fn fosd_check(q_implemented: &Matrix, q_promised: &Matrix) -> FosdReport {
    let mut witnesses = Vec::new();
    for (i, (a, b)) in q_implemented.iter().zip(q_promised).enumerate() {
        for (t, (x, y)) in a.iter().zip(b).enumerate() {
            if *x < y - 1e-9 {
                witnesses.push((i, t));
            }
        }
    }
    if q_implemented.len() != q_promised.len() {
        witnesses.push((q_implemented.len().min(q_promised.len()), 0));
    }
    FosdReport { passed: witnesses.is_empty(), witnesses }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_of_linear_and_concave() {
        let e = concave_envelope(&WeightingFunction::Identity, 1001);
        assert_eq!(e.p_star, 0.0);
        assert!(e.w_star.iter().zip(&e.grid).all(|(a, b)| (a - b).abs() < 1e-12));
        let values: Vec<f64> = (0..1001).map(|j| (j as f64 / 1000.0).sqrt()).collect();
        let sqrt = WeightingFunction::Tabulated { values: values.clone() };
        let e = concave_envelope(&sqrt, 1001);
        assert_eq!(e.p_star, 1.0);
        assert!(e.w_star.iter().zip(&values).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn fosd_witnesses() {
        let prom = vec![vec![0.5, 1.0], vec![0.0, 1.0]];
        assert!(fosd_check(&prom, &prom).passed);
        assert!(fosd_check(&vec![vec![1.0, 1.0], vec![0.5, 1.0]], &prom).passed);
        let r = fosd_check(&vec![vec![0.25, 1.0], vec![0.0, 1.0]], &prom);
        assert_eq!(r.witnesses, vec![(0, 0)]);
    }
}
