//! Probability weighting functions, decision weights and rank-dependent
//! valuation of lotteries over completion tiers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points used when checking that a weighting function is a valid CDF
/// transform and when building concave envelopes.
pub const VALIDATION_GRID: usize = 1001;

/// A strictly increasing map `w: [0,1] → [0,1]` with `w(0) = 0`, `w(1) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightingFunction {
    /// `w(p) = p`; CPT collapses to expected utility.
    Identity,
    /// `exp(−(−ln p)^γ)`.
    Prelec { gamma: f64 },
    /// `p^γ / (p^γ + (1−p)^γ)^{1/γ}`.
    TverskyKahneman { gamma: f64 },
    /// `δp^γ / (δp^γ + (1−p)^γ)`.
    TwoParam { delta: f64, gamma: f64 },
    /// Values on the uniform grid `0, 1/(n−1), …, 1`, linearly interpolated.
    Tabulated { values: Vec<f64> },
}

impl WeightingFunction {
    /// Evaluates `w(p)`. Endpoints are exact; `p` outside `[0, 1]` by more
    /// than `1e-12` is an error.
    pub fn eval(&self, p: f64) -> Result<f64> {
        if !(p >= -1e-12 && p <= 1.0 + 1e-12) {
            return Err(Error::Invalid(format!("probability {p} outside [0, 1]")));
        }
        Ok(self.eval_clamped(p.clamp(0.0, 1.0)))
    }

    /// `w(p)` for `p` already known to lie in `[0, 1]`.
    pub(crate) fn eval_clamped(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return 1.0;
        }
        match self {
            WeightingFunction::Identity => p,
            WeightingFunction::Prelec { gamma } => (-(-p.ln()).powf(*gamma)).exp(),
            WeightingFunction::TverskyKahneman { gamma } => {
                let a = p.powf(*gamma);
                let b = (1.0 - p).powf(*gamma);
                a / (a + b).powf(1.0 / gamma)
            }
            WeightingFunction::TwoParam { delta, gamma } => {
                let a = delta * p.powf(*gamma);
                a / (a + (1.0 - p).powf(*gamma))
            }
            WeightingFunction::Tabulated { values } => {
                let n = values.len();
                if n < 2 {
                    return p;
                }
                let x = p * (n - 1) as f64;
                let j = (x.floor() as usize).min(n - 2);
                let frac = x - j as f64;
                values[j] + frac * (values[j + 1] - values[j])
            }
        }
    }

    /// Violations of `w(0)=0`, `w(1)=1` and strict monotonicity on a
    /// 1001-point grid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            WeightingFunction::Prelec { gamma } | WeightingFunction::TverskyKahneman { gamma } => {
                if !(*gamma > 0.0) || !gamma.is_finite() {
                    out.push(format!("gamma must be positive, got {gamma}"));
                    return out;
                }
            }
            WeightingFunction::TwoParam { delta, gamma } => {
                if !(*gamma > 0.0) || !(*delta > 0.0) || !gamma.is_finite() || !delta.is_finite() {
                    out.push(format!("delta and gamma must be positive, got ({delta}, {gamma})"));
                    return out;
                }
            }
            WeightingFunction::Tabulated { values } => {
                if values.len() < 2 {
                    out.push("table needs at least two points".to_string());
                    return out;
                }
                if values[0] != 0.0 || *values.last().unwrap() != 1.0 {
                    out.push("table must start at 0 and end at 1".to_string());
                }
            }
            WeightingFunction::Identity => {}
        }
        let mut prev = self.eval_clamped(0.0);
        for j in 1..VALIDATION_GRID {
            let p = j as f64 / (VALIDATION_GRID - 1) as f64;
            let v = self.eval_clamped(p);
            if !(v > prev) {
                out.push(format!("not strictly increasing near p = {p}"));
                break;
            }
            prev = v;
        }
        out
    }
}

/// `w(p)`.
pub fn weight_eval(w: &WeightingFunction, p: f64) -> Result<f64> {
    w.eval(p)
}

/// Decision-weight increments `h_k = w(k/K) − w((k−1)/K)`, `k = 1..K`.
pub fn h_weights(w: &WeightingFunction, k: usize) -> Vec<f64> {
    let grid: Vec<f64> = (0..=k).map(|j| if j == k { 1.0 } else { w.eval_clamped(j as f64 / k as f64) }).collect();
    grid.windows(2).map(|g| g[1] - g[0]).collect()
}

/// A finite lottery over completion tiers. Tier index `T` (one past the last
/// tier) stands for "not completed" and carries zero utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lottery {
    pub outcomes: Vec<(f64, usize)>,
}

impl Lottery {
    pub fn degenerate(tier: usize) -> Self {
        Lottery { outcomes: vec![(1.0, tier)] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outcomes.iter().any(|(p, _)| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Invalid("lottery probability negative or non-finite".into()));
        }
        let total: f64 = self.outcomes.iter().map(|(p, _)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("lottery probabilities sum to {total}")));
        }
        Ok(())
    }

    /// Cumulative completion probabilities `q_t = P(tier ≤ t)` for `T` tiers.
    pub fn cumulative(&self, n_tiers: usize) -> Vec<f64> {
        let mut q = vec![0.0; n_tiers];
        for &(p, tier) in &self.outcomes {
            for v in q.iter_mut().skip(tier) {
                *v += p;
            }
        }
        q.iter_mut().for_each(|v| *v = v.min(1.0));
        q
    }
}

/// Rank-dependent value of `lottery` for a user with utilities `u_row`.
///
/// Outcomes are sorted by decreasing utility (stable, ties by tier index) and
/// weighted by `w(P(at least this good)) − w(P(strictly better))`.
pub fn cpt_value(lottery: &Lottery, u_row: &[f64], w: &WeightingFunction) -> Result<f64> {
    lottery.validate()?;
    let utility = |tier: usize| -> Result<f64> {
        if tier < u_row.len() {
            Ok(u_row[tier])
        } else if tier == u_row.len() {
            Ok(0.0)
        } else {
            Err(Error::Invalid(format!("lottery tier {tier} out of range")))
        }
    };
    let mut items: Vec<(f64, usize, f64)> =
        lottery.outcomes.iter().map(|&(p, t)| utility(t).map(|u| (u, t, p))).collect::<Result<_>>()?;
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut cum = 0.0;
    let mut prev_w = 0.0;
    let mut value = 0.0;
    for (u, _, p) in items {
        cum += p;
        let wc = w.eval_clamped(cum.min(1.0));
        value += (wc - prev_w) * u;
        prev_w = wc;
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_reductions() {
        let fams = [
            WeightingFunction::Identity,
            WeightingFunction::Prelec { gamma: 0.6 },
            WeightingFunction::TverskyKahneman { gamma: 0.61 },
            WeightingFunction::TwoParam { delta: 0.7, gamma: 0.4 },
        ];
        for w in &fams {
            assert_eq!(w.eval(0.0).unwrap(), 0.0);
            assert_eq!(w.eval(1.0).unwrap(), 1.0);
            assert!(w.validate().is_empty(), "{w:?}");
        }
        let p1 = WeightingFunction::Prelec { gamma: 1.0 };
        for p in [0.1, 0.37, 0.9] {
            assert!((p1.eval(p).unwrap() - p).abs() < 1e-15);
        }
        let tp = WeightingFunction::TwoParam { delta: 1.0, gamma: 1.0 };
        assert!((tp.eval(0.3).unwrap() - 0.3).abs() < 1e-15);
        assert!(p1.eval(1.5).is_err());
        assert!(p1.eval(-0.1).is_err());
    }

    #[test]
    fn invalid_families_are_reported() {
        assert!(!WeightingFunction::TverskyKahneman { gamma: 0.2 }.validate().is_empty());
        assert!(!WeightingFunction::Prelec { gamma: -1.0 }.validate().is_empty());
        assert!(!WeightingFunction::Tabulated { values: vec![0.0, 0.6, 0.5, 1.0] }.validate().is_empty());
        assert!(WeightingFunction::Tabulated { values: vec![0.0, 0.6, 0.8, 1.0] }.validate().is_empty());
    }

    #[test]
    fn decision_weights() {
        assert_eq!(h_weights(&WeightingFunction::Identity, 4), vec![0.25; 4]);
        assert_eq!(h_weights(&WeightingFunction::Prelec { gamma: 0.5 }, 1), vec![1.0]);
        let h = h_weights(&WeightingFunction::Prelec { gamma: 0.5 }, 10);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // Inverse-S: both tails are overweighted relative to the middle.
        assert!(h[0] > h[4] && h[9] > h[4]);
        assert!((h[0] - 0.2192).abs() < 1e-4 && (h[9] - 0.2772).abs() < 1e-4);
    }

    #[test]
    fn lottery_values() {
        let u = [5.0, 3.0, 1.0];
        let w = WeightingFunction::Prelec { gamma: 0.5 };
        assert_eq!(cpt_value(&Lottery::degenerate(2), &u, &w).unwrap(), 1.0);
        let l = Lottery { outcomes: vec![(0.2, 0), (0.5, 1), (0.3, 2)] };
        let eu = cpt_value(&l, &u, &WeightingFunction::Identity).unwrap();
        assert!((eu - (0.2 * 5.0 + 0.5 * 3.0 + 0.3 * 1.0)).abs() < 1e-12);
        let never = Lottery { outcomes: vec![(0.5, 0), (0.5, 3)] };
        let v = cpt_value(&never, &u, &WeightingFunction::Identity).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
        assert!(cpt_value(&Lottery { outcomes: vec![(0.5, 0)] }, &u, &w).is_err());
    }
}
