//! Adjusted Rand Index for partitions with a fixed number of clusters.
//!
//! The expected Rand Index is taken over all partitions of `n` samples into
//! exactly `C` clusters, which brings in Stirling numbers of the second kind:
//!
//! ```text
//! U = S(n-1, C) / S(n, C)
//! V = (TS + FD) / binom(n, 2)
//! E[RI] = U V + (1 - U)(1 - V)
//! ARI_fnc = (RI - E[RI]) / (1 - E[RI])
//! ```
//!
//! `V` counts pairs co-clustered in the *reference* partition, so argument
//! order matters: reference first, obtained second.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kmeans::Partition;

/// Pair tallies between a reference and an obtained partition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PairCounts {
    /// Together in both.
    pub ts: u64,
    /// Apart in both.
    pub td: u64,
    /// Together in the reference, apart in the obtained partition.
    pub fd: u64,
    /// Apart in the reference, together in the obtained partition.
    pub fs: u64,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.ts + self.td + self.fd + self.fs
    }
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

fn check_lengths(reference: &Partition, obtained: &Partition) -> Result<()> {
    if reference.len() != obtained.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: obtained.len(),
        });
    }
    Ok(())
}

/// Pair counts from the contingency table, `O(n + cells)`.
pub fn pair_counts(reference: &Partition, obtained: &Partition) -> Result<PairCounts> {
    check_lengths(reference, obtained)?;
    let mut cells: HashMap<(usize, usize), u64> = HashMap::new();
    let mut ref_sizes = vec![0u64; reference.n_clusters()];
    let mut obt_sizes = vec![0u64; obtained.n_clusters()];
    for (&a, &b) in reference.labels().iter().zip(obtained.labels()) {
        *cells.entry((a, b)).or_default() += 1;
        ref_sizes[a] += 1;
        obt_sizes[b] += 1;
    }
    let ts: u64 = cells.values().map(|&c| choose2(c)).sum();
    let together_ref: u64 = ref_sizes.iter().map(|&c| choose2(c)).sum();
    let together_obt: u64 = obt_sizes.iter().map(|&c| choose2(c)).sum();
    let fd = together_ref - ts;
    let fs = together_obt - ts;
    let td = choose2(reference.len() as u64) - ts - fd - fs;
    Ok(PairCounts { ts, td, fd, fs })
}

/// Pair counts by visiting every pair, `O(n^2)`.
pub fn pair_counts_direct(reference: &Partition, obtained: &Partition) -> Result<PairCounts> {
    check_lengths(reference, obtained)?;
    let (a, b) = (reference.labels(), obtained.labels());
    let mut c = PairCounts::default();
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => c.ts += 1,
                (false, false) => c.td += 1,
                (true, false) => c.fd += 1,
                (false, true) => c.fs += 1,
            }
        }
    }
    Ok(c)
}

/// `(TS + TD) / binom(n, 2)`.
pub fn rand_index(counts: &PairCounts, n_orig: usize) -> Result<f64> {
    if n_orig < 2 {
        return Err(Error::Usage("Rand index needs at least 2 samples".into()));
    }
    let total = choose2(n_orig as u64);
    if counts.total() != total {
        return Err(Error::Data(format!(
            "pair counts sum to {} but {n_orig} samples have {total} pairs",
            counts.total()
        )));
    }
    Ok((counts.ts + counts.td) as f64 / total as f64)
}

fn check_stirling_args(n: usize, c: usize) -> Result<()> {
    if c < 1 || c > n {
        return Err(Error::Usage(format!(
            "Stirling ratio needs 1 <= C <= n, got n = {n}, C = {c}"
        )));
    }
    Ok(())
}

/// `S(n-1, C) / S(n, C)` by the recurrence `S(m, j) = j S(m-1, j) + S(m-1, j-1)`
/// in floating point, each row rescaled by its maximum so nothing overflows.
pub fn stirling_ratio(n: usize, c: usize) -> Result<f64> {
    check_stirling_args(n, c)?;
    let mut row = vec![0.0; c + 1];
    row[0] = 1.0;
    let mut ratio = 0.0;
    for m in 1..=n {
        let mut next = vec![0.0; c + 1];
        for j in 1..=c.min(m) {
            next[j] = j as f64 * row[j] + row[j - 1];
        }
        if m == n {
            ratio = row[c] / next[c];
        }
        let max = next.iter().cloned().fold(0.0, f64::max);
        row = next.into_iter().map(|v| v / max).collect();
    }
    debug_assert!(
        n > 200 || (ratio - stirling_ratio_exact(n, c).unwrap()).abs() <= 1e-12 * ratio.max(1e-300),
        "normalized Stirling ratio disagrees with exact value"
    );
    Ok(ratio)
}

/// Stirling number of the second kind `S(n, k)`.
pub fn stirling2(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let mut row = vec![BigUint::zero(); k + 1];
    row[0] = BigUint::from(1u32);
    for m in 1..=n {
        for j in (1..=k.min(m)).rev() {
            let prev = std::mem::take(&mut row[j]);
            row[j] = prev * BigUint::from(j) + &row[j - 1];
        }
        row[0] = BigUint::zero();
    }
    std::mem::take(&mut row[k])
}

/// `S(n-1, C) / S(n, C)` from exact integers.
pub fn stirling_ratio_exact(n: usize, c: usize) -> Result<f64> {
    check_stirling_args(n, c)?;
    let ratio = BigRational::new(stirling2(n - 1, c).into(), stirling2(n, c).into());
    Ok(ratio.to_f64().unwrap_or(f64::NAN))
}

/// Above this many samples ARI_fnc is evaluated in floating point only.
pub const EXACT_ARI_LIMIT: usize = 5000;

/// ARI_fnc as a single correctly rounded division of exact integers.
///
/// With `T = binom(n, 2)`, `A = TS + TD`, `B = TS + FD` and
/// `U = p / q`, the index is
/// `(qA - pB - (q-p)(T-B)) / (qT - pB - (q-p)(T-B))`.
fn ari_exact(counts: &PairCounts, n_orig: usize, n_clusters: usize) -> Option<f64> {
    let p = BigInt::from(stirling2(n_orig - 1, n_clusters));
    let q = BigInt::from(stirling2(n_orig, n_clusters));
    let t = BigInt::from(choose2(n_orig as u64));
    let a = BigInt::from(counts.ts + counts.td);
    let b = BigInt::from(counts.ts + counts.fd);
    let chance = &p * &b + (&q - &p) * (&t - &b);
    let den = &q * &t - &chance;
    if den.is_zero() {
        return None;
    }
    (BigRational::new(&q * &a - &chance, den)).to_f64()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AriReport {
    pub counts: PairCounts,
    pub ri: f64,
    pub expected_ri: f64,
    pub u: f64,
    pub v: f64,
    pub ari_fnc: f64,
}

/// Scores `obtained` against `reference` with a cluster count fixed at
/// `obtained.n_clusters()`.
pub fn ari_fnc(reference: &Partition, obtained: &Partition) -> Result<AriReport> {
    let counts = pair_counts(reference, obtained)?;
    ari_from_counts(counts, reference.len(), obtained.n_clusters())
}

pub fn ari_from_counts(counts: PairCounts, n_orig: usize, n_clusters: usize) -> Result<AriReport> {
    let ri = rand_index(&counts, n_orig)?;
    let u = stirling_ratio(n_orig, n_clusters)?;
    let v = (counts.ts + counts.fd) as f64 / choose2(n_orig as u64) as f64;
    let expected_ri = u * v + (1.0 - u) * (1.0 - v);
    let undefined = || Error::Numerical("expected Rand index is 1; adjusted index undefined".into());
    let ari = if n_orig <= EXACT_ARI_LIMIT {
        ari_exact(&counts, n_orig, n_clusters).ok_or_else(undefined)?
    } else if expected_ri < 1.0 {
        (ri - expected_ri) / (1.0 - expected_ri)
    } else {
        return Err(undefined());
    };
    Ok(AriReport {
        counts,
        ri,
        expected_ri,
        u,
        v,
        ari_fnc: ari,
    })
}
