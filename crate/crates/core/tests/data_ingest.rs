use std::io::Write;
use std::path::PathBuf;

use proptest::prelude::*;
use shapescale::data::{scale_columns, write_csv};
use shapescale::{
    apply_scaling, column_sigmas, deduplicate, impute_mean, load_csv, pca_reduce, AlphaVector, CsvOptions, Dataset,
    Error, LabelColumn, ScalingScheme,
};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn csv(contents: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

fn labelled() -> CsvOptions {
    CsvOptions {
        label_column: Some(LabelColumn::Last),
        ..CsvOptions::default()
    }
}

fn names(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).collect()
}

fn distances(ds: &Dataset) -> Vec<f64> {
    let n = ds.n_rows();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = ds.row(i).iter().zip(ds.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(d2.sqrt());
        }
    }
    out
}

#[test]
fn iris_shape_and_duplicates() {
    let ds = load_csv(data_dir().join("iris.csv"), &labelled()).unwrap();
    assert_eq!((ds.n_rows(), ds.n_cols()), (150, 4));
    assert_eq!(ds.labels().unwrap().len(), 150);
    assert_eq!(deduplicate(&ds).unwrap().n(), 149);
}

#[test]
fn iris_inverse_sigmas() {
    let ds = load_csv(data_dir().join("iris.csv"), &labelled()).unwrap();
    let inv = column_sigmas(&ds).unwrap().inverse();
    for (got, want) in inv.iter().zip([1.207, 2.294, 0.566, 1.311]) {
        assert!((got - want).abs() <= 0.002, "{got} vs {want}");
    }
}

#[test]
fn bcw_imputation_completes_the_matrix() {
    let ds = load_csv(data_dir().join("bcw.csv"), &labelled()).unwrap();
    assert_eq!((ds.n_rows(), ds.n_cols()), (699, 9));
    let missing_cols: std::collections::BTreeSet<usize> = ds.missing_cells().iter().map(|c| c % 9).collect();
    assert_eq!(missing_cols.len(), 1);
    let full = impute_mean(&ds).unwrap();
    assert!(full.is_complete());
    assert!(full.values().iter().all(|v| v.is_finite()));
    // mean imputation yields 463 distinct rows rather than the 465 a
    // model-based synthesis produced
    assert_eq!(deduplicate(&full).unwrap().n(), 463);
}

#[test]
fn minimal_and_malformed_files() {
    let f = csv("a,b\n1,2\n3,4\n");
    let ds = load_csv(f.path(), &CsvOptions::default()).unwrap();
    assert_eq!((ds.n_rows(), ds.n_cols()), (2, 2));

    let f = csv("a,b,c,d\n1,2,3,4\n5,6,7\n8,9,10,11\n");
    match load_csv(f.path(), &CsvOptions::default()) {
        Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }

    let f = csv("a,b\n1,x\n3,4\n");
    assert!(matches!(load_csv(f.path(), &CsvOptions::default()), Err(Error::Parse { row: 2, .. })));

    let f = csv("a,b\n1,2\n");
    assert!(load_csv(f.path(), &CsvOptions::default()).is_err());
}

#[test]
fn missing_cells_are_not_zero() {
    let f = csv("a,b\n1,10\n?,20\n3,\n");
    let ds = load_csv(f.path(), &CsvOptions::default()).unwrap();
    assert_eq!(ds.missing_cells(), &[2, 5]);
    assert!(ds.is_missing(1, 0) && ds.is_missing(2, 1));
    let full = impute_mean(&ds).unwrap();
    assert_eq!(full.column(0).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    assert_eq!(full.column(1).collect::<Vec<_>>(), vec![10.0, 20.0, 15.0]);

    let f = csv("a,b\n?,1\n?,2\n");
    let ds = load_csv(f.path(), &CsvOptions::default()).unwrap();
    assert!(matches!(impute_mean(&ds), Err(Error::EmptyColumn { column }) if column == "a"));
}

#[test]
fn label_column_by_name_and_index() {
    let f = csv("x,cls,y\n1,a,2\n3,b,4\n5,a,7\n");
    let by_name = load_csv(
        f.path(),
        &CsvOptions {
            label_column: Some(LabelColumn::parse("cls")),
            ..CsvOptions::default()
        },
    )
    .unwrap();
    let by_index = load_csv(
        f.path(),
        &CsvOptions {
            label_column: Some(LabelColumn::parse("1")),
            ..CsvOptions::default()
        },
    )
    .unwrap();
    assert_eq!(by_name, by_index);
    assert_eq!(by_name.column_names(), &["x", "y"]);
    assert_eq!(by_name.labels().unwrap(), &["a", "b", "a"]);
}

#[test]
fn csv_round_trip_is_lossless() {
    let rows = vec![vec![0.1, 1.0 / 3.0], vec![-2.5e-300, 7.0], vec![1e17 + 1.0, std::f64::consts::PI]];
    let ds = Dataset::from_rows(&rows, names(2)).unwrap();
    let f = tempfile::NamedTempFile::new().unwrap();
    write_csv(&ds, f.path()).unwrap();
    let back = load_csv(f.path(), &CsvOptions::default()).unwrap();
    assert_eq!(back.values(), ds.values());
}

#[test]
fn hand_sigma_and_constant_column() {
    let ds = Dataset::from_rows(&[vec![0.0, 5.0], vec![1.0, 5.0], vec![2.0, 5.0]], names(2)).unwrap();
    assert!(matches!(column_sigmas(&ds), Err(Error::ConstantColumn { column }) if column == "x2"));
    let ds = Dataset::from_rows(&[vec![0.0, 5.0], vec![1.0, 6.0], vec![2.0, 5.0]], names(2)).unwrap();
    assert_eq!(column_sigmas(&ds).unwrap().as_slice()[0], 1.0);
}

#[test]
fn all_rows_identical_is_rejected() {
    let ds = Dataset::from_rows(&vec![vec![1.0, 2.0]; 4], names(2)).unwrap();
    assert!(deduplicate(&ds).is_err());
}

#[test]
fn pca_full_and_rank_one() {
    let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
    let ds = Dataset::from_rows(&rows, names(3)).unwrap();
    let (_, kept) = pca_reduce(&ds, 1).unwrap();
    assert!((kept - 1.0).abs() < 1e-10);
    assert!(pca_reduce(&ds, 4).is_err());
}

#[test]
fn scaling_identities() {
    let ds = Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 7.0], vec![4.0, 1.0]], names(2)).unwrap();
    let s = column_sigmas(&ds).unwrap();
    assert_eq!(apply_scaling(&ds, &s, &ScalingScheme::None).unwrap(), ds);
    let inv = apply_scaling(&ds, &s, &ScalingScheme::InvSigma).unwrap();
    let ones = apply_scaling(&ds, &s, &ScalingScheme::AlphaOverSigma(AlphaVector::ones(2))).unwrap();
    assert_eq!(inv.values(), ones.values());
    let short = AlphaVector::ones(3);
    assert!(apply_scaling(&ds, &s, &ScalingScheme::AlphaOverSigma(short)).is_err());
}

fn matrix(max_n: usize, max_d: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (3..=max_n, 2..=max_d).prop_flat_map(|(n, d)| {
        // small integer grid so duplicates actually occur
        (Just(n), Just(d), prop::collection::vec((-3i32..=3).prop_map(f64::from), n * d))
    })
}

fn dataset(n: usize, d: usize, v: &[f64]) -> Dataset {
    let rows: Vec<Vec<f64>> = v.chunks(d).map(<[f64]>::to_vec).take(n).collect();
    Dataset::from_rows(&rows, names(d)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pairwise_identity(
        n in 3usize..40,
        d in 2usize..5,
        seed in prop::collection::vec(-100.0f64..100.0, 40 * 5),
    ) {
        let ds = dataset(n, d, &seed[..n * d]);
        let Ok(s) = column_sigmas(&ds) else { return Ok(()); };
        let big_n = (n * (n - 1)) as f64;
        for k in 0..d {
            let col: Vec<f64> = ds.column(k).collect();
            let mut sum = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    let r = (col[i] - col[j]) / s.as_slice()[k];
                    sum += r * r;
                }
            }
            prop_assert!((sum - big_n).abs() <= 1e-8 * big_n, "k={} sum={} N={}", k, sum, big_n);
        }
    }

    #[test]
    fn dedup_is_idempotent((n, d, v) in matrix(30, 4)) {
        let ds = dataset(n, d, &v);
        let Ok(view) = deduplicate(&ds) else { return Ok(()); };
        let rows: Vec<Vec<f64>> = view.indices().iter().map(|&i| ds.row(i).to_vec()).collect();
        let unique = Dataset::from_rows(&rows, names(d)).unwrap();
        let again = deduplicate(&unique).unwrap();
        prop_assert_eq!(again.n(), view.n());
        // every dropped row equals a kept one
        for i in 0..n {
            prop_assert!(rows.iter().any(|r| r.as_slice() == ds.row(i)));
        }
    }

    #[test]
    fn full_pca_preserves_distances(
        n in 3usize..25,
        d in 2usize..5,
        seed in prop::collection::vec(-10.0f64..10.0, 25 * 5),
    ) {
        let ds = dataset(n, d, &seed[..n * d]);
        let (pc, kept) = pca_reduce(&ds, d).unwrap();
        prop_assert!((kept - 1.0).abs() < 1e-10);
        for (a, b) in distances(&ds).iter().zip(distances(&pc)) {
            prop_assert!((a - b).abs() <= 1e-8 * a.max(1e-12), "{} vs {}", a, b);
        }
    }

    #[test]
    fn uniform_alpha_scales_distances(
        n in 3usize..20,
        seed in prop::collection::vec(-10.0f64..10.0, 20 * 3),
        t in 1e-3f64..1e3,
        e in -20i32..20,
    ) {
        let ds = dataset(n, 3, &seed[..n * 3]);
        let s = column_sigmas(&ds).unwrap();
        let base = distances(&apply_scaling(&ds, &s, &ScalingScheme::InvSigma).unwrap());

        let a = AlphaVector::new(vec![t; 3]).unwrap();
        let scaled = distances(&apply_scaling(&ds, &s, &ScalingScheme::AlphaOverSigma(a)).unwrap());
        for (b, r) in base.iter().zip(&scaled) {
            prop_assert!((r - t * b).abs() <= 1e-12 * t * b);
        }

        // a power of two scales every distance exactly
        let p = 2f64.powi(e);
        let exact = distances(&scale_columns(&ds, &[p; 3]).unwrap());
        for (b, r) in distances(&ds).iter().zip(&exact) {
            prop_assert_eq!(*r, p * b);
        }
    }
}
