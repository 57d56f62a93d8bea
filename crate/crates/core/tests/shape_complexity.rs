use proptest::prelude::*;
use shapescale::data::UniqueView;
use shapescale::shape::{classify_dimensions, DimensionCase};
use shapescale::{
    column_sigmas, deduplicate, sc_gradient, sc_value, AlphaVector, Dataset, PairTable, SigmaVector, TableOptions,
};

fn names(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).collect()
}

struct Instance {
    data: Dataset,
    sigmas: SigmaVector,
    table: PairTable,
}

fn instance(rows: &[Vec<f64>], dedup: bool) -> Instance {
    let data = Dataset::from_rows(rows, names(rows[0].len())).unwrap();
    let sigmas = column_sigmas(&data).unwrap();
    let view = if dedup {
        deduplicate(&data).unwrap()
    } else {
        UniqueView::all(data.n_rows())
    };
    let table = PairTable::build(&view, &data, &sigmas, &TableOptions::default()).unwrap();
    Instance { data, sigmas, table }
}

/// SC straight from the points: scale, take every pair distance, sum.
fn sc_oracle(inst: &Instance, alpha: &[f64]) -> f64 {
    let view = deduplicate(&inst.data).unwrap();
    let idx = view.indices();
    let (mut s2, mut inv) = (0.0, 0.0);
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let (x, y) = (inst.data.row(idx[a]), inst.data.row(idx[b]));
            let r2: f64 = (0..x.len())
                .map(|k| (alpha[k] * (x[k] - y[k]) / inst.sigmas.as_slice()[k]).powi(2))
                .sum();
            s2 += r2;
            inv += 1.0 / r2.sqrt();
        }
    }
    s2.sqrt() * inv
}

fn random_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..=40, 1usize..=6).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n),
            prop::collection::vec(0.1f64..3.0, d),
        )
    })
}

fn viable(rows: &[Vec<f64>]) -> bool {
    let data = Dataset::from_rows(rows, names(rows[0].len())).unwrap();
    column_sigmas(&data).is_ok() && deduplicate(&data).is_ok()
}

#[test]
fn pair_table_examples() {
    let two = instance(&[vec![0.0, 0.0], vec![1.0, 1.0]], true);
    assert_eq!(two.table.n_pairs(), 1);

    let t = PairTable::from_rho_sq(2, 1, 2, vec![1.0]).unwrap();
    assert_eq!(t.pair_rho_sq(0), vec![1.0]);

    let collinear = PairTable::from_rho_sq(3, 1, 3, vec![1.0, 4.0, 1.0]).unwrap();
    assert_eq!(collinear.pair_indices(1), (0, 2));
    let ev = sc_value(&collinear, &AlphaVector::ones(1)).unwrap();
    assert!((ev.sc - 6f64.sqrt() * 2.5).abs() < 1e-14);
    assert!((ev.sc - 6.12372).abs() < 1e-5);
}

#[test]
fn collinear_points_build_the_expected_table() {
    // {0, 1, 2} has sigma 1, so rho^2 = squared differences
    let inst = instance(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 1.0]], true);
    let rho: Vec<f64> = (0..3).map(|p| inst.table.pair_rho_sq(p)[0]).collect();
    assert_eq!(rho, vec![1.0, 4.0, 1.0]);
}

#[test]
fn single_pair_has_unit_sc_and_equilibrium() {
    let inst = instance(&[vec![0.0, 3.0], vec![2.0, -1.0]], true);
    for a in [vec![1.0, 1.0], vec![0.2, 5.0]] {
        let a = AlphaVector::new(a).unwrap();
        let ev = sc_value(&inst.table, &a).unwrap();
        assert!((ev.sc - 1.0).abs() < 1e-15);
        let cases = classify_dimensions(&inst.table, &a, 1e-10).unwrap();
        assert!(cases.iter().all(|c| *c == DimensionCase::Equilibrium));
    }
}

#[test]
fn equilateral_configurations_attain_the_bound() {
    for d in 2..=7 {
        let rows: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|k| (i == k) as u8 as f64).collect()).collect();
        let inst = instance(&rows, true);
        let m = (d * (d - 1) / 2) as f64;
        let ev = sc_value(&inst.table, &AlphaVector::ones(d)).unwrap();
        assert!((ev.sc - m.powf(1.5)).abs() <= 1e-10 * ev.sc, "d={d}: {} vs {}", ev.sc, m.powf(1.5));
    }
    let inst = instance(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], true);
    let ev = sc_value(&inst.table, &AlphaVector::ones(3)).unwrap();
    assert!((ev.sc - 5.19615).abs() < 1e-5);
}

#[test]
fn identical_dimensions_have_equal_partials() {
    let rows: Vec<Vec<f64>> = [0.0, 1.0, 3.0, 7.0, 8.5].iter().map(|&x| vec![x, x]).collect();
    let inst = instance(&rows, true);
    let ev = sc_gradient(&inst.table, &AlphaVector::ones(2)).unwrap();
    let g = ev.gradient.unwrap();
    assert_eq!(g[0], g[1]);
}

#[test]
fn dominant_dimension_is_c1() {
    // two far groups along x1, small jitter along x2
    let mut rows = Vec::new();
    for (i, jitter) in [0.0, 0.3, -0.2, 0.1, 0.25, -0.15].iter().enumerate() {
        let base = if i < 3 { 0.0 } else { 10.0 };
        rows.push(vec![base + 0.05 * i as f64, *jitter]);
    }
    let inst = instance(&rows, true);
    let a = AlphaVector::ones(2);
    let ev = sc_gradient(&inst.table, &a).unwrap();
    let (gp, hp) = (ev.g_partials.unwrap(), ev.h_partials.unwrap());

    // direct ratio computation for dimension 1
    let n = inst.table.n_pairs();
    let (mut g2, mut h, mut num_g, mut num_h) = (0.0, 0.0, 0.0, 0.0);
    for p in 0..n {
        let rho = inst.table.pair_rho_sq(p);
        let r2: f64 = rho.iter().sum();
        g2 += r2;
        h += 1.0 / r2.sqrt();
        num_g += rho[0];
        num_h += rho[0] / r2.powf(1.5);
    }
    let spread = num_g / g2;
    let crowd = num_h / h;
    assert!(spread > crowd);
    assert!((gp[0] / ev.g - spread).abs() < 1e-12 * spread);
    assert!((-hp[0] / ev.h - crowd).abs() < 1e-12 * crowd);

    let cases = classify_dimensions(&inst.table, &a, 1e-10).unwrap();
    assert_eq!(cases[0], DimensionCase::C1);
    assert_eq!(cases[1], DimensionCase::C2);
}

#[test]
fn lengthening_one_pair_raises_g_and_lowers_h() {
    let rho = vec![1.0, 0.5, 4.0, 2.0, 1.0, 0.25];
    let base = PairTable::from_rho_sq(3, 2, 3, rho.clone()).unwrap();
    let mut bumped = rho;
    bumped[2] += 0.5;
    let bumped = PairTable::from_rho_sq(3, 2, 3, bumped).unwrap();
    let a = AlphaVector::new(vec![0.7, 1.3]).unwrap();
    let (e0, e1) = (sc_value(&base, &a).unwrap(), sc_value(&bumped, &a).unwrap());
    assert!(e1.g > e0.g);
    assert!(e1.h < e0.h);
}

#[test]
fn coincident_rows_are_rejected() {
    let rows = vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![2.0, 3.0]];
    let data = Dataset::from_rows(&rows, names(2)).unwrap();
    let s = column_sigmas(&data).unwrap();
    let all = UniqueView::all(3);
    assert!(PairTable::build(&all, &data, &s, &TableOptions::default()).is_err());
    assert!(PairTable::from_rho_sq(3, 1, 3, vec![0.0, 1.0, 1.0]).is_err());
}

#[test]
fn memory_budget_and_on_the_fly() {
    let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, ((i * 7) % 11) as f64, (i * i % 13) as f64]).collect();
    let data = Dataset::from_rows(&rows, names(3)).unwrap();
    let s = column_sigmas(&data).unwrap();
    let view = deduplicate(&data).unwrap();
    let tight = TableOptions {
        memory_budget_bytes: 1024,
        on_the_fly: false,
    };
    let err = PairTable::build(&view, &data, &s, &tight).unwrap_err().to_string();
    assert!(err.contains("on-the-fly"), "{err}");

    let dense = PairTable::build(&view, &data, &s, &TableOptions::default()).unwrap();
    let lazy = PairTable::build(
        &view,
        &data,
        &s,
        &TableOptions {
            memory_budget_bytes: 1024,
            on_the_fly: true,
        },
    )
    .unwrap();
    assert!(lazy.is_on_the_fly());
    let a = AlphaVector::new(vec![0.4, 1.1, 2.0]).unwrap();
    assert_eq!(sc_gradient(&dense, &a).unwrap(), sc_gradient(&lazy, &a).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matches_oracle_and_is_radially_invariant((rows, alpha) in random_case(), t in 1e-3f64..1e3) {
        prop_assume!(viable(&rows));
        let inst = instance(&rows, true);
        let a = AlphaVector::new(alpha.clone()).unwrap();
        let ev = sc_value(&inst.table, &a).unwrap();
        let oracle = sc_oracle(&inst, &alpha);
        prop_assert!((ev.sc - oracle).abs() <= 1e-12 * oracle, "{} vs {}", ev.sc, oracle);
        prop_assert_eq!(ev.sc, ev.g * ev.h);

        let m = inst.table.n_pairs() as f64;
        prop_assert!(ev.sc >= m.powf(1.5) * (1.0 - 1e-12));

        let scaled = sc_value(&inst.table, &a.scaled(t).unwrap()).unwrap();
        prop_assert!((scaled.sc - ev.sc).abs() <= 1e-10 * ev.sc);
    }

    #[test]
    fn gradient_matches_finite_differences((rows, alpha) in random_case()) {
        prop_assume!(viable(&rows));
        let inst = instance(&rows, true);
        let a = AlphaVector::new(alpha.clone()).unwrap();
        let ev = sc_gradient(&inst.table, &a).unwrap();
        let grad = ev.gradient.unwrap();
        let scale = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        let m = inst.table.n_pairs() as f64;

        let radial: f64 = grad.iter().zip(&alpha).map(|(g, a)| g * a).sum();
        prop_assert!(radial.abs() <= 1e-9 * ev.sc);

        for k in 0..alpha.len() {
            let h = 1e-6 * alpha[k].max(1.0);
            let mut up = alpha.clone();
            up[k] += h;
            let mut down = alpha.clone();
            down[k] -= h;
            let fd = (sc_oracle(&inst, &up) - sc_oracle(&inst, &down)) / (2.0 * h);
            // rounding in the naive oracle sum, amplified by 1/h
            let noise = 4.0 * m * f64::EPSILON * ev.sc / h;
            prop_assert!(
                (fd - grad[k]).abs() <= 1e-6 * scale + noise,
                "k={}: fd {} vs {}", k, fd, grad[k]
            );
        }
    }

    #[test]
    fn full_row_tables_satisfy_g_identity((rows, alpha) in random_case()) {
        prop_assume!(viable(&rows));
        let inst = instance(&rows, false);
        let n = rows.len() as f64;
        prop_assert!(inst.table.covers_all_rows());
        for (k, s) in inst.table.rho_sums().iter().enumerate() {
            prop_assert!((s - n * (n - 1.0)).abs() <= 1e-8 * n * (n - 1.0), "k={} sum={}", k, s);
        }
        let a = AlphaVector::new(alpha.clone()).unwrap();
        let ev = sc_value(&inst.table, &a).unwrap();
        let expect = n * (n - 1.0) * a.norm_sq();
        prop_assert!((ev.g * ev.g - expect).abs() <= 1e-8 * expect, "{} vs {}", ev.g * ev.g, expect);
    }
}
