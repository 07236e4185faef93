use proptest::prelude::*;
use tiermarket::cpt::*;
use tiermarket::scheduler::*;
use tiermarket::sim::{generate_market, run_market, MarketConfig, Phase};
use tiermarket::ProblemInstance;

fn weighting() -> impl Strategy<Value = WeightingFunction> {
    prop_oneof![
        Just(WeightingFunction::Identity),
        (0.3f64..1.0).prop_map(|gamma| WeightingFunction::Prelec { gamma }),
        (0.3f64..1.0).prop_map(|gamma| WeightingFunction::TverskyKahneman { gamma }),
        (0.3f64..1.5, 0.3f64..1.0).prop_map(|(delta, gamma)| WeightingFunction::TwoParam { delta, gamma }),
    ]
}

/// Non-increasing utilities for `t` tiers and a lottery over `t + 1` outcomes.
fn utilities_and_lottery() -> impl Strategy<Value = (Vec<f64>, Lottery)> {
    (1usize..5).prop_flat_map(|t| {
        (prop::collection::vec(0.0f64..10.0, t), prop::collection::vec(0.01f64..1.0, t + 1)).prop_map(|(mut u, raw)| {
            u.sort_by(|a, b| b.total_cmp(a));
            let total: f64 = raw.iter().sum();
            (u, Lottery { outcomes: raw.iter().enumerate().map(|(s, p)| (p / total, s)).collect() })
        })
    })
}

fn instance() -> impl Strategy<Value = ProblemInstance> {
    (1usize..7, 1usize..5).prop_flat_map(|(n, t)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..10.0, t), n),
            prop::collection::vec(1u32..10, n),
            prop::collection::vec(1u32..20, t),
        )
            .prop_map(|(mut u, j, m)| {
                u.iter_mut().for_each(|r| r.sort_by(|a, b| b.total_cmp(a)));
                ProblemInstance::new(u, j.into_iter().map(f64::from).collect(), m.into_iter().map(f64::from).collect())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cpt_value_ignores_outcome_order_and_splits(
        (u, l) in utilities_and_lottery(), w in weighting(), cut in 0.05f64..0.95, rot in 0usize..6,
    ) {
        let base = cpt_value(&l, &u, &w).unwrap();
        let mut shuffled = l.outcomes.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        let (p, tier) = shuffled[0];
        shuffled[0] = (p * cut, tier);
        shuffled.push((p * (1.0 - cut), tier));
        let other = cpt_value(&Lottery { outcomes: shuffled }, &u, &w).unwrap();
        prop_assert!((base - other).abs() <= 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn moving_mass_earlier_dominates((u, l) in utilities_and_lottery(), w in weighting(), from in 1usize..5, frac in 0.0f64..1.0) {
        let t = u.len();
        let from = from.min(t);
        let mut better = l.outcomes.clone();
        let moved = better[from].0 * frac;
        better[from].0 -= moved;
        better[from - 1].0 += moved;
        let better = Lottery { outcomes: better };
        let report = fosd_check(&vec![better.cumulative(t)], &vec![l.cumulative(t)]);
        prop_assert!(report.passed);
        prop_assert!(cpt_value(&better, &u, &w).unwrap() >= cpt_value(&l, &u, &w).unwrap() - 1e-9);
        let back = fosd_check(&vec![l.cumulative(t)], &vec![better.cumulative(t)]);
        prop_assert!(moved <= 1e-9 || !back.passed || u[from - 1] == u[from]);
    }

    #[test]
    fn lp_vertices_are_sparse_and_satisfy_kkt(inst in instance()) {
        let sol = solve_sys_lp(&inst).unwrap();
        prop_assert!(count_nonzero(&sol.allocation) <= inst.n_users() + inst.n_tiers());
        let k = sys_kkt_residuals(&inst, &sol.allocation, &sol.user_duals, &sol.tier_prices);
        prop_assert!(k.dual_feasibility <= 1e-7 && k.stationarity <= 1e-7 && k.complementarity <= 1e-7, "{:?}", k);
    }

    #[test]
    fn lottery_lp_satisfies_kkt(inst in instance(), w in weighting(), k in 1usize..4) {
        let ci = CptInstance::uniform(inst, w, k).unwrap();
        let lp = solve_sys_cpt_k_r(&ci).unwrap();
        let r = cpt_kkt_residuals(&ci, &lp.allocation, &lp.duals);
        prop_assert!(r.dual_feasibility <= 1e-7 && r.stationarity <= 1e-7 && r.complementarity <= 1e-7, "{:?}", r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn market_is_deterministic_under_seed(seed in any::<u64>()) {
        let config = MarketConfig {
            days: 4,
            n_users: 12,
            n_tiers: 3,
            capacity: 300.0,
            phases: vec![Phase { start: 1, end: 4, up_probability: 0.5 }],
            seed,
            ..MarketConfig::default()
        };
        prop_assert_eq!(generate_market(&config).unwrap(), generate_market(&config).unwrap());
        prop_assert_eq!(run_market(&config).unwrap(), run_market(&config).unwrap());
    }
}
