use std::path::PathBuf;

use proptest::prelude::*;
use shapescale::problem::{initial_point, project_to_sphere, run_batch, stationarity};
use shapescale::{
    column_sigmas, deduplicate, load_csv, objective, pair_table, residual, run_trials, sc_value, solve_local,
    AlphaVector, CsvOptions, Dataset, LabelColumn, ObjectiveVariant, PairTable, TrialConfig, TrialSet,
};

fn names(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).collect()
}

fn table(rows: &[Vec<f64>]) -> (Dataset, Vec<f64>, PairTable) {
    let data = Dataset::from_rows(rows, names(rows[0].len())).unwrap();
    let sigmas = column_sigmas(&data).unwrap();
    let view = deduplicate(&data).unwrap();
    let t = pair_table(&view, &data, &sigmas).unwrap();
    (data, sigmas.as_slice().to_vec(), t)
}

fn iris() -> PairTable {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/iris.csv");
    let opts = CsvOptions {
        label_column: Some(LabelColumn::Last),
        ..CsvOptions::default()
    };
    let data = load_csv(path, &opts).unwrap();
    let s = column_sigmas(&data).unwrap();
    pair_table(&deduplicate(&data).unwrap(), &data, &s).unwrap()
}

/// Residual for dimensions (k, l) straight from distinct points.
fn residual_oracle(data: &Dataset, sigmas: &[f64], alpha: &[f64], k: usize, l: usize) -> f64 {
    let n = data.n_rows();
    let big_n = (n * (n - 1)) as f64;
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (x, y) = (data.row(i), data.row(j));
            let rho: Vec<f64> = (0..x.len()).map(|c| ((x[c] - y[c]) / sigmas[c]).powi(2)).collect();
            let r2: f64 = rho.iter().zip(alpha).map(|(p, a)| a * a * p).sum();
            sum += (rho[k] - rho[l]) / r2.powf(1.5);
        }
    }
    sum / big_n
}

fn random_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (4usize..=25, 2usize..=4)
        .prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-4.0f64..4.0, d), n))
}

fn viable(rows: &[Vec<f64>]) -> bool {
    let data = Dataset::from_rows(rows, names(rows[0].len())).unwrap();
    column_sigmas(&data).is_ok() && deduplicate(&data).map(|v| v.n() == rows.len()).unwrap_or(false)
}

#[test]
fn residual_matches_the_point_oracle() {
    let rows = vec![
        vec![0.0, 1.0, 2.0],
        vec![1.5, -0.5, 0.3],
        vec![2.0, 2.5, -1.0],
        vec![-1.0, 0.7, 0.9],
        vec![0.4, -2.0, 1.7],
    ];
    let (data, sigmas, t) = table(&rows);
    let a = [0.8, 1.1, 1.0];
    let alpha = AlphaVector::new(a.to_vec()).unwrap();
    for (k, l) in [(0, 1), (0, 2), (1, 2)] {
        let got = residual(&t, &alpha, k, l).unwrap();
        let want = residual_oracle(&data, &sigmas, &a, k, l);
        assert!((got - want).abs() <= 1e-13 * want.abs().max(1e-3), "({k},{l}) {got} vs {want}");
    }
    assert!(residual(&t, &alpha, 1, 1).is_err());
    assert!(residual(&t, &alpha, 0, 3).is_err());
}

#[test]
fn copied_dimensions_have_zero_residual_everywhere() {
    let rows: Vec<Vec<f64>> = [0.0, 1.0, 2.5, 4.0, 4.5, 7.0].iter().map(|&x| vec![x, x]).collect();
    let (_, _, t) = table(&rows);
    for a in [vec![1.0, 1.0], vec![0.3, 1.38], vec![1.4, 0.2]] {
        assert_eq!(residual(&t, &AlphaVector::new(a).unwrap(), 0, 1).unwrap(), 0.0);
    }
    let set = run_trials(&t, 20, &TrialConfig::default(), ObjectiveVariant::PairOneTwo).unwrap();
    assert_eq!(set.usable().count(), 20);
    for trial in set.usable() {
        assert_eq!(trial.objective, 0.0);
        assert_eq!(trial.iterations, 1);
    }
}

/// Four points in two dimensions: scan the quarter circle for sign changes
/// of the residual and bisect the single root.
#[test]
fn four_point_problem_matches_bisection() {
    let rows = vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![0.3, 2.0], vec![2.2, 1.1]];
    let (data, sigmas, t) = table(&rows);
    let f = |theta: f64| {
        let a = [2f64.sqrt() * theta.cos(), 2f64.sqrt() * theta.sin()];
        residual_oracle(&data, &sigmas, &a, 0, 1)
    };
    let (lo_t, hi_t) = ((1e-5f64 / 2f64.sqrt()).asin(), (1e-5f64 / 2f64.sqrt()).acos());
    let grid: Vec<f64> = (0..=20_000).map(|i| lo_t + (hi_t - lo_t) * i as f64 / 20_000.0).collect();
    let signs: Vec<usize> = (0..grid.len() - 1)
        .filter(|&i| f(grid[i]).signum() != f(grid[i + 1]).signum())
        .collect();
    assert_eq!(signs.len(), 1, "oracle expects a single root");
    let (mut lo, mut hi) = (grid[signs[0]], grid[signs[0] + 1]);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid).signum() == f(lo).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = [2f64.sqrt() * lo.cos(), 2f64.sqrt() * lo.sin()];
    // slope along the arc; the arc has speed sqrt(2) in alpha
    let slope = (f(lo + 1e-6) - f(lo - 1e-6)) / 2e-6 / 2f64.sqrt();
    // a stationary stop has 2 |R| |R'| <= 1e-6, so |R| and the distance to
    // the root are bounded through the slope (factor 2 for the difference
    // quotient)
    let r_max = 2.0 * 1e-6 / (2.0 * slope.abs());
    let dist_max = r_max / slope.abs();

    let cfg = TrialConfig::default();
    let set = run_trials(&t, 10, &cfg, ObjectiveVariant::PairOneTwo).unwrap();
    assert!(set.usable().count() > 0);
    for trial in set.usable() {
        assert!(trial.objective <= r_max * r_max, "objective {} > {}", trial.objective, r_max * r_max);
        let dist = ((trial.final_alpha[0] - root[0]).powi(2) + (trial.final_alpha[1] - root[1]).powi(2)).sqrt();
        assert!(dist <= dist_max, "{:?} vs {root:?}", trial.final_alpha);
    }
}

#[test]
fn all_pairs_reduces_to_pair_one_two_in_two_dimensions() {
    let rows = vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![0.3, 2.0], vec![2.2, 1.1], vec![-0.7, 0.4]];
    let (_, _, t) = table(&rows);
    let a = AlphaVector::new(vec![0.6, 1.3]).unwrap();
    assert_eq!(
        objective(&t, &a, ObjectiveVariant::AllPairs).unwrap(),
        objective(&t, &a, ObjectiveVariant::PairOneTwo).unwrap()
    );
    let cfg = TrialConfig::default();
    let one = run_batch(&t, 5, &cfg, ObjectiveVariant::PairOneTwo).unwrap();
    let all = run_batch(&t, 5, &cfg, ObjectiveVariant::AllPairs).unwrap();
    for (x, y) in one.results.iter().zip(&all.results) {
        assert_eq!(x.final_alpha, y.final_alpha);
    }
}

#[test]
fn single_trial_batch_equals_local_solve() {
    let t = iris();
    let cfg = TrialConfig::default();
    let set = run_batch(&t, 1, &cfg, ObjectiveVariant::PairOneTwo).unwrap();
    let local = solve_local(&t, &initial_point(4, &cfg, 0), &cfg, ObjectiveVariant::PairOneTwo);
    assert_eq!(set.results[0], local);
}

#[test]
fn jsonl_round_trip() {
    let t = iris();
    let cfg = TrialConfig::default();
    let set = run_batch(&t, 8, &cfg, ObjectiveVariant::PairOneTwo).unwrap();
    let text = set.to_jsonl();
    assert_eq!(text.lines().count(), 8);
    let back = TrialSet::from_jsonl(&text, set.variant, set.master_seed).unwrap();
    assert_eq!(back, set);
    assert!(TrialSet::from_jsonl("{\"index\": 0}\n", set.variant, 1).is_err());
}

#[test]
fn batches_are_deterministic_across_thread_counts() {
    let t = iris();
    let cfg = TrialConfig {
        seed: 99,
        ..TrialConfig::default()
    };
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let a = pool(4).install(|| run_batch(&t, 16, &cfg, ObjectiveVariant::PairOneTwo).unwrap());
    let b = pool(4).install(|| run_batch(&t, 16, &cfg, ObjectiveVariant::PairOneTwo).unwrap());
    let c = pool(1).install(|| run_batch(&t, 16, &cfg, ObjectiveVariant::PairOneTwo).unwrap());
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_eq!(a.to_jsonl(), c.to_jsonl());

    let other = run_batch(&t, 16, &TrialConfig { seed: 100, ..cfg }, ObjectiveVariant::PairOneTwo).unwrap();
    assert_ne!(a.results[0].initial_alpha, other.results[0].initial_alpha);
}

#[test]
fn converged_iris_trials_are_feasible_and_stationary() {
    let t = iris();
    let cfg = TrialConfig::default();
    let set = run_batch(&t, 40, &cfg, ObjectiveVariant::PairOneTwo).unwrap();
    assert!(set.usable().count() >= 30);
    for trial in set.usable() {
        let sq: f64 = trial.final_alpha.iter().map(|a| a * a).sum();
        assert!((sq - 4.0).abs() <= 1e-12 * 4.0);
        assert!(trial.final_alpha.iter().all(|&a| a >= cfg.alpha_floor));
        let st = stationarity(&t, &trial.final_alpha().unwrap(), set.variant, cfg.alpha_floor).unwrap();
        assert!(st.holds(cfg.stationarity_tolerance), "trial {}: {st:?}", trial.index);
    }
    for trial in set.results.iter().filter(|t| !t.converged) {
        assert!(trial.diagnostic.is_some());
    }
}

#[test]
fn iteration_cap_leaves_nothing_usable() {
    let t = iris();
    let cfg = TrialConfig {
        max_iterations: 1,
        ..TrialConfig::default()
    };
    let set = run_batch(&t, 4, &cfg, ObjectiveVariant::PairOneTwo).unwrap();
    assert_eq!(set.usable().count(), 0);
    assert_eq!(set.discarded, 4);
    assert!(run_trials(&t, 4, &cfg, ObjectiveVariant::PairOneTwo).is_err());
}

#[test]
fn invalid_requests() {
    let t = iris();
    let cfg = TrialConfig::default();
    assert!(run_batch(&t, 0, &cfg, ObjectiveVariant::PairOneTwo).is_err());
    let bad = TrialConfig {
        init_low: 2.0,
        init_high: 1.0,
        ..cfg.clone()
    };
    assert!(run_batch(&t, 1, &bad, ObjectiveVariant::PairOneTwo).is_err());
    let below = TrialConfig {
        alpha_floor: 1e-7,
        ..cfg.clone()
    };
    assert!(run_batch(&t, 1, &below, ObjectiveVariant::PairOneTwo).is_err());

    let one_d = PairTable::from_rho_sq(3, 1, 3, vec![1.0, 4.0, 1.0]).unwrap();
    assert!(run_batch(&one_d, 1, &cfg, ObjectiveVariant::PairOneTwo).is_err());
    assert!(run_batch(&one_d, 1, &TrialConfig::for_variant(ObjectiveVariant::MaximizeSc), ObjectiveVariant::MaximizeSc).is_ok());
}

#[test]
fn maximize_sc_never_lowers_sc() {
    let t = iris();
    let cfg = TrialConfig {
        max_iterations: 50,
        ..TrialConfig::for_variant(ObjectiveVariant::MaximizeSc)
    };
    let set = run_batch(&t, 4, &cfg, ObjectiveVariant::MaximizeSc).unwrap();
    for trial in &set.results {
        let start = sc_value(&t, &AlphaVector::new(trial.initial_alpha.clone()).unwrap()).unwrap().sc;
        assert!(trial.sc >= start, "{} < {start}", trial.sc);
        assert!(trial.final_alpha.iter().all(|&a| a >= cfg.alpha_floor));
    }
    assert_eq!(set.usable().count(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn residual_is_antisymmetric(rows in random_rows(), a in prop::collection::vec(0.05f64..3.0, 4)) {
        prop_assume!(viable(&rows));
        let (_, _, t) = table(&rows);
        let d = t.d();
        let alpha = AlphaVector::new(a[..d].to_vec()).unwrap();
        for k in 0..d {
            for l in 0..d {
                if k != l {
                    prop_assert_eq!(residual(&t, &alpha, k, l).unwrap(), -residual(&t, &alpha, l, k).unwrap());
                }
            }
        }
    }

    #[test]
    fn local_solve_descends(rows in random_rows(), seed in 0u64..1000) {
        prop_assume!(viable(&rows));
        let (_, _, t) = table(&rows);
        let d = t.d();
        let cfg = TrialConfig { seed, max_iterations: 200, ..TrialConfig::default() };
        for variant in [ObjectiveVariant::PairOneTwo, ObjectiveVariant::AllPairs] {
            let init = initial_point(d, &cfg, 0);
            let mut start = init.as_slice().to_vec();
            project_to_sphere(&mut start, cfg.alpha_floor, d as f64);
            let f0 = objective(&t, &AlphaVector::new(start).unwrap(), variant).unwrap();
            let r = solve_local(&t, &init, &cfg, variant);
            prop_assert!(r.objective <= f0, "{} > {}", r.objective, f0);
            let sq: f64 = r.final_alpha.iter().map(|a| a * a).sum();
            prop_assert!((sq - d as f64).abs() <= 1e-12 * d as f64);
        }
    }
}
