use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tiermarket::instance::{realized_welfare, ProblemInstance};
use tiermarket::scheduler::*;

fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, max_t: usize, m_lo: u32, m_hi: u32) -> ProblemInstance {
    let n = rng.gen_range(1..=max_n);
    let t = rng.gen_range(1..=max_t);
    let utilities = (0..n)
        .map(|_| {
            let mut row: Vec<f64> = (0..t).map(|_| rng.gen_range(0..=20) as f64).collect();
            row.sort_by(|a, b| b.partial_cmp(a).unwrap());
            row
        })
        .collect();
    let jobs = (0..n).map(|_| rng.gen_range(1..=9) as f64).collect();
    let caps = (0..t).map(|_| rng.gen_range(m_lo..=m_hi) as f64).collect();
    ProblemInstance::new(utilities, jobs, caps)
}

/// Solves a square system by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Best basic feasible solution found by enumerating every basis of the
/// slack-augmented system.
fn vertex_enumeration(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> (f64, Vec<f64>) {
    let m = a.len();
    let n = c.len();
    let cols = n + m;
    let column = |j: usize| -> Vec<f64> {
        (0..m).map(|r| if j < n { a[r][j] } else if j - n == r { 1.0 } else { 0.0 }).collect()
    };
    let mut best = (f64::NEG_INFINITY, vec![]);
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        let bm: Vec<Vec<f64>> = (0..m).map(|r| idx.iter().map(|&j| column(j)[r]).collect()).collect();
        if let Some(xb) = solve_square(bm, b.to_vec()) {
            if xb.iter().all(|&v| v >= -1e-9) {
                let mut x = vec![0.0; n];
                for (k, &j) in idx.iter().enumerate() {
                    if j < n {
                        x[j] = xb[k];
                    }
                }
                let v: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
                if v > best.0 + 1e-12 {
                    best = (v, x);
                }
            }
        }
        // next combination
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < cols - m + i {
                idx[i] += 1;
                for k in i + 1..m {
                    idx[k] = idx[k - 1] + 1;
                }
                break;
            }
        }
    }
}

fn toy() -> ProblemInstance {
    ProblemInstance::new(
        vec![vec![3.0, 0.0, 0.0], vec![4.0, 2.5, 1.0], vec![2.0, 2.0, 2.0]],
        vec![10.0; 3],
        vec![10.0; 3],
    )
}

#[test]
fn toy_lp_matches_vertex_enumeration() {
    let lp = build_sys_lp(&toy());
    let (v, x) = vertex_enumeration(&lp.objective, &lp.dense_matrix(), &lp.rhs);
    assert!((v - 7.5).abs() < 1e-12);
    let expect = [10.0, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0, 10.0];
    for (a, b) in x.iter().zip(expect) {
        assert!((a - b).abs() < 1e-9);
    }
    let r = solve_sys_lp(&toy()).unwrap();
    assert!((r.value - v).abs() < 1e-12);
}

#[test]
fn lp_matches_vertex_enumeration_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let inst = random_instance(&mut rng, 3, 2, 2, 20);
        let lp = build_sys_lp(&inst);
        let (v, _) = vertex_enumeration(&lp.objective, &lp.dense_matrix(), &lp.rhs);
        let r = solve_sys_lp(&inst).unwrap();
        assert!((r.value - v).abs() <= 1e-9 * (1.0 + v.abs()), "{} vs {v}", r.value);
    }
}

#[test]
fn sandwich_and_exchange_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..150 {
        let inst = random_instance(&mut rng, 6, 4, 2, 20);
        let lp = solve_sys_lp(&inst).unwrap();
        let rounded = round_lp_solution(&inst, &lp.allocation);
        let exact = solve_sys_exact_bruteforce(&inst).unwrap();
        assert!(rounded.value <= exact.value + 1e-9);
        assert!(exact.value <= lp.value + 1e-9);
        let g = gap_bound(&inst);
        if g.standard > 0.0 {
            assert!(rounded.value >= g.standard * lp.value - 1e-9);
        }
        assert!(count_nonzero(&lp.allocation) <= inst.n_users() + inst.n_tiers());
        let k = sys_kkt_residuals(&inst, &lp.allocation, &lp.user_duals, &lp.tier_prices);
        assert!(k.dual_feasibility <= 1e-7 && k.stationarity <= 1e-7 && k.complementarity <= 1e-7);

        let f = inst.per_function();
        let x = &lp.allocation;
        let pos = |i: usize, t: usize| x[i][t] > 1e-9;
        for i in 0..inst.n_users() {
            for j in 0..inst.n_users() {
                for m in 0..inst.n_tiers() {
                    for n in 0..inst.n_tiers() {
                        if pos(i, m) && pos(i, n) && pos(j, m) {
                            assert!(f[j][m] - f[j][n] >= f[i][m] - f[i][n] - 1e-7);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn bnb_matches_bruteforce() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let inst = random_instance(&mut rng, 6, 3, 1, 15);
        let a = solve_sys_exact_bruteforce(&inst).unwrap();
        let b = solve_sys_ilp_bnb(&inst).unwrap();
        assert!((a.value - b.value).abs() <= 1e-9, "{} vs {}", a.value, b.value);
        assert!((realized_welfare(&inst, &b.allocation).unwrap() - b.value).abs() < 1e-9);
    }
}

#[test]
fn single_open_tier_is_a_knapsack() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..40 {
        let n = rng.gen_range(1..=5);
        let t = 3;
        let open = rng.gen_range(0..t);
        let mut inst = random_instance(&mut rng, 1, 1, 1, 1);
        inst.utilities = (0..n)
            .map(|_| {
                let mut row: Vec<f64> = (0..t).map(|_| rng.gen_range(0..=20) as f64).collect();
                row.sort_by(|a, b| b.partial_cmp(a).unwrap());
                row
            })
            .collect();
        inst.job_sizes = (0..n).map(|_| rng.gen_range(1..=9) as f64).collect();
        inst.capacities = (0..t).map(|s| if s == open { rng.gen_range(1..=15) as f64 } else { 0.0 }).collect();
        inst.tier_end_times = vec![1.0, 2.0, 3.0];
        let mut best = 0.0f64;
        for mask in 0u32..(1 << n) {
            let (mut used, mut val) = (0.0, 0.0);
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    used += inst.job_sizes[i];
                    val += inst.utilities[i][open];
                }
            }
            if used <= inst.capacities[open] {
                best = best.max(val);
            }
        }
        assert_eq!(solve_sys_ilp_bnb(&inst).unwrap().value, best);
        assert_eq!(solve_sys_exact_bruteforce(&inst).unwrap().value, best);
    }
}

#[test]
fn greedy_is_sparse_and_fills_in_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..100 {
        let inst = random_instance(&mut rng, 8, 4, 2, 20);
        let n = inst.n_users();
        let mut order: Vec<usize> = (0..n).collect();
        for k in (1..n).rev() {
            order.swap(k, rng.gen_range(0..=k));
        }
        let x = greedy_allocation(&inst, &order);
        assert!(count_nonzero(&x) <= n + inst.n_tiers());
        // A tier may have spare room only if every later user got nothing more.
        let used: Vec<f64> = (0..inst.n_tiers()).map(|t| x.iter().map(|r| r[t]).sum()).collect();
        let total_served: f64 = x.iter().flatten().sum();
        let total_jobs: f64 = inst.job_sizes.iter().sum();
        for t in 0..inst.n_tiers() {
            assert!(used[t] <= inst.capacities[t] + 1e-12);
            if used[t] < inst.capacities[t] - 1e-12 {
                assert!((total_served - total_jobs).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn solves_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let inst = random_instance(&mut rng, 7, 4, 2, 20);
    let a = solve_sys_lp(&inst).unwrap();
    let b = solve_sys_lp(&inst).unwrap();
    assert_eq!(a, b);
}
