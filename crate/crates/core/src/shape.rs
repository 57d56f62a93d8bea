//! Shape complexity of a dataset as a function of per-dimension scale factors.
//!
//! For scale factors `alpha` and normalized differences
//! `rho_ijk = (X_ik - X_jk) / sigma_k`, the distance between unique samples
//! `i < j` is `r_ij = sqrt(sum_k alpha_k^2 rho_ijk^2)` and
//!
//! ```text
//! SC = g * h,   g = (sum r_ij^2)^(1/2),   h = sum 1 / r_ij
//! ```
//!
//! The `rho^2` values do not depend on `alpha`, so a [`PairTable`] computes
//! them once and every evaluation is a single pass over the pairs.

use rayon::prelude::*;

use crate::data::{Dataset, SigmaVector, UniqueView};
use crate::error::{Error, Result};
use crate::sum::NeumaierSum;

/// Lower bound enforced on every scale factor.
pub const ALPHA_FLOOR: f64 = 1e-5;

/// Relative tolerance for labelling a dimension as balanced.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-10;

/// Pair counts above which row blocks are reduced on the rayon pool.
const PARALLEL_PAIRS: usize = 1 << 17;

/// Scale factors, one per dimension, each finite and `>= ALPHA_FLOOR`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaVector(Vec<f64>);

impl AlphaVector {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Usage("scale-factor vector is empty".into()));
        }
        for (k, &a) in alpha.iter().enumerate() {
            if !a.is_finite() || a < ALPHA_FLOOR {
                return Err(Error::Usage(format!(
                    "scale factor {} = {a} violates alpha >= {ALPHA_FLOOR:e}",
                    k + 1
                )));
            }
        }
        Ok(Self(alpha))
    }

    pub fn ones(d: usize) -> Self {
        Self(vec![1.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }

    /// Multiplies every factor by `t`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|a| a * t).collect())
    }
}

#[derive(Clone, Debug)]
enum Storage {
    /// `rho^2` for every pair, pair-major.
    Dense(Vec<f64>),
    /// Unique rows (row-major) and sigmas; `rho^2` recomputed per pass.
    OnTheFly { rows: Vec<f64>, sigma: Vec<f64> },
}

#[derive(Clone, Copy, Debug)]
pub struct TableOptions {
    /// Upper bound on the dense `rho^2` table in bytes.
    pub memory_budget_bytes: usize,
    /// Recompute `rho^2` on every pass instead of storing it.
    pub on_the_fly: bool,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            memory_budget_bytes: 2 << 30,
            on_the_fly: false,
        }
    }
}

/// Squared normalized differences for all unordered pairs `i < j` of unique
/// samples, in lexicographic `(i, j)` order.
#[derive(Clone, Debug)]
pub struct PairTable {
    n: usize,
    d: usize,
    n_orig: usize,
    storage: Storage,
    rho_sums: Vec<f64>,
}

/// Per-pair accumulation used by every pass over the table.
pub(crate) trait PairAccumulator: Send {
    fn pair(&mut self, r2: f64, rho_sq: &[f64]);
    fn merge(&mut self, other: &Self);
}

fn row_offset(n: usize, i: usize) -> usize {
    // number of pairs (a, b) with a < i
    i * (n - 1) - i * i.saturating_sub(1) / 2
}

impl PairTable {
    /// Builds the table over the rows selected by `view`.
    pub fn build(view: &UniqueView, data: &Dataset, sigmas: &SigmaVector, opts: &TableOptions) -> Result<Self> {
        let d = data.n_cols();
        if sigmas.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigmas.len(),
            });
        }
        let n = view.n();
        if n < 2 {
            return Err(Error::Data("need at least 2 unique samples".into()));
        }
        let mut rows = Vec::with_capacity(n * d);
        for &i in view.indices() {
            if i >= data.n_rows() {
                return Err(Error::Usage(format!("row index {i} outside dataset")));
            }
            rows.extend_from_slice(data.row(i));
        }
        let sigma = sigmas.as_slice().to_vec();
        let n_pairs = n * (n - 1) / 2;

        let storage = if opts.on_the_fly {
            Storage::OnTheFly { rows, sigma }
        } else {
            let bytes = n_pairs
                .checked_mul(d)
                .and_then(|c| c.checked_mul(std::mem::size_of::<f64>()))
                .unwrap_or(usize::MAX);
            if bytes > opts.memory_budget_bytes {
                return Err(Error::Data(format!(
                    "pair table needs {bytes} bytes (> budget {}); rerun with on-the-fly pair evaluation",
                    opts.memory_budget_bytes
                )));
            }
            let mut rho = Vec::with_capacity(n_pairs * d);
            for i in 0..n {
                for j in i + 1..n {
                    for k in 0..d {
                        let diff = (rows[i * d + k] - rows[j * d + k]) / sigma[k];
                        rho.push(diff * diff);
                    }
                }
            }
            Storage::Dense(rho)
        };
        Self::finish(n, d, data.n_rows(), storage)
    }

    /// Builds a table directly from pair-major `rho^2` values.
    pub fn from_rho_sq(n: usize, d: usize, n_orig: usize, rho_sq: Vec<f64>) -> Result<Self> {
        if n < 2 || d < 1 || n_orig < n {
            return Err(Error::Usage(format!(
                "invalid table shape n={n}, d={d}, n_orig={n_orig}"
            )));
        }
        if rho_sq.len() != n * (n - 1) / 2 * d {
            return Err(Error::DimensionMismatch {
                expected: n * (n - 1) / 2 * d,
                got: rho_sq.len(),
            });
        }
        if rho_sq.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Data("rho^2 entries must be finite and non-negative".into()));
        }
        Self::finish(n, d, n_orig, Storage::Dense(rho_sq))
    }

    fn finish(n: usize, d: usize, n_orig: usize, storage: Storage) -> Result<Self> {
        let mut table = Self {
            n,
            d,
            n_orig,
            storage,
            rho_sums: Vec::new(),
        };
        let sums = table.reduce(&vec![1.0; d], || RhoSums::new(d));
        if sums.zero_pair {
            return Err(Error::Data(
                "two samples coincide in every dimension; deduplicate first".into(),
            ));
        }
        table.rho_sums = sums.sums.iter().map(NeumaierSum::value).collect();
        Ok(table)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_orig(&self) -> usize {
        self.n_orig
    }

    pub fn n_pairs(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    /// `N = n_orig (n_orig - 1)`.
    pub fn pair_normalizer(&self) -> f64 {
        self.n_orig as f64 * (self.n_orig as f64 - 1.0)
    }

    /// True when the table spans every row of the source data.
    pub fn covers_all_rows(&self) -> bool {
        self.n == self.n_orig
    }

    pub fn is_on_the_fly(&self) -> bool {
        matches!(self.storage, Storage::OnTheFly { .. })
    }

    /// `sum_{i<j} rho_ijk^2` for each dimension.
    pub fn rho_sums(&self) -> &[f64] {
        &self.rho_sums
    }

    /// `(i, j)` positions (within the unique view) of pair number `p`.
    pub fn pair_indices(&self, p: usize) -> (usize, usize) {
        let mut i = 0;
        while row_offset(self.n, i + 1) <= p {
            i += 1;
        }
        (i, i + 1 + p - row_offset(self.n, i))
    }

    pub fn pair_rho_sq(&self, p: usize) -> Vec<f64> {
        let d = self.d;
        match &self.storage {
            Storage::Dense(rho) => rho[p * d..(p + 1) * d].to_vec(),
            Storage::OnTheFly { rows, sigma } => {
                let (i, j) = self.pair_indices(p);
                let mut out = vec![0.0; d];
                fill_rho(rows, sigma, d, i, j, &mut out);
                out
            }
        }
    }

    /// Pairwise distances `r_ij` in table order.
    pub fn distances(&self, alpha: &AlphaVector) -> Result<Vec<f64>> {
        self.check_alpha(alpha)?;
        let a2 = squares(alpha);
        let mut out = Vec::with_capacity(self.n_pairs());
        self.for_each_row_seq(&a2, |r2, _| out.push(r2.sqrt()));
        Ok(out)
    }

    pub(crate) fn check_alpha(&self, alpha: &AlphaVector) -> Result<()> {
        if alpha.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: alpha.len(),
            });
        }
        Ok(())
    }

    fn for_each_row_seq(&self, alpha_sq: &[f64], mut f: impl FnMut(f64, &[f64])) {
        let mut buf = vec![0.0; self.d];
        for i in 0..self.n {
            self.visit_row(i, alpha_sq, &mut buf, &mut f);
        }
    }

    #[inline]
    fn visit_row(&self, i: usize, alpha_sq: &[f64], buf: &mut [f64], f: &mut impl FnMut(f64, &[f64])) {
        let (n, d) = (self.n, self.d);
        match &self.storage {
            Storage::Dense(rho) => {
                let start = row_offset(n, i) * d;
                let end = start + (n - 1 - i) * d;
                for pair in rho[start..end].chunks_exact(d) {
                    f(weighted(alpha_sq, pair), pair);
                }
            }
            Storage::OnTheFly { rows, sigma } => {
                for j in i + 1..n {
                    fill_rho(rows, sigma, d, i, j, buf);
                    f(weighted(alpha_sq, buf), buf);
                }
            }
        }
    }

    /// Reduces over all pairs with one accumulator per row, merged in row
    /// order, so the result does not depend on how rows are scheduled.
    pub(crate) fn reduce<A, F>(&self, alpha_sq: &[f64], make: F) -> A
    where
        A: PairAccumulator,
        F: Fn() -> A + Sync,
    {
        let per_row = |i: usize| {
            let mut acc = make();
            let mut buf = vec![0.0; self.d];
            self.visit_row(i, alpha_sq, &mut buf, &mut |r2, rho| acc.pair(r2, rho));
            acc
        };
        let mut total = make();
        if self.n_pairs() >= PARALLEL_PAIRS {
            let partials: Vec<A> = (0..self.n - 1).into_par_iter().map(per_row).collect();
            for p in &partials {
                total.merge(p);
            }
        } else {
            for i in 0..self.n - 1 {
                total.merge(&per_row(i));
            }
        }
        total
    }
}

#[inline]
fn fill_rho(rows: &[f64], sigma: &[f64], d: usize, i: usize, j: usize, out: &mut [f64]) {
    for k in 0..d {
        let diff = (rows[i * d + k] - rows[j * d + k]) / sigma[k];
        out[k] = diff * diff;
    }
}

#[inline]
fn weighted(alpha_sq: &[f64], rho_sq: &[f64]) -> f64 {
    alpha_sq.iter().zip(rho_sq).map(|(a, r)| a * r).sum()
}

pub(crate) fn squares(alpha: &AlphaVector) -> Vec<f64> {
    alpha.as_slice().iter().map(|a| a * a).collect()
}

struct RhoSums {
    sums: Vec<NeumaierSum>,
    zero_pair: bool,
}

impl RhoSums {
    fn new(d: usize) -> Self {
        Self {
            sums: vec![NeumaierSum::new(); d],
            zero_pair: false,
        }
    }
}

impl PairAccumulator for RhoSums {
    fn pair(&mut self, r2: f64, rho_sq: &[f64]) {
        self.zero_pair |= r2 == 0.0;
        for (s, &v) in self.sums.iter_mut().zip(rho_sq) {
            s.add(v);
        }
    }

    fn merge(&mut self, other: &Self) {
        self.zero_pair |= other.zero_pair;
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            s.merge(o);
        }
    }
}

struct ScAccumulator {
    g2: NeumaierSum,
    h: NeumaierSum,
    /// `sum r^-3 rho_k^2` per dimension, when the gradient is wanted.
    cubic: Vec<NeumaierSum>,
    min_r2: f64,
    coincident: bool,
}

impl ScAccumulator {
    fn new(d: usize, gradient: bool) -> Self {
        Self {
            g2: NeumaierSum::new(),
            h: NeumaierSum::new(),
            cubic: if gradient { vec![NeumaierSum::new(); d] } else { Vec::new() },
            min_r2: f64::INFINITY,
            coincident: false,
        }
    }
}

impl PairAccumulator for ScAccumulator {
    #[inline]
    fn pair(&mut self, r2: f64, rho_sq: &[f64]) {
        if r2 == 0.0 {
            self.coincident = true;
            return;
        }
        let r = r2.sqrt();
        self.g2.add(r2);
        self.h.add(1.0 / r);
        self.min_r2 = self.min_r2.min(r2);
        if !self.cubic.is_empty() {
            let inv_r3 = 1.0 / (r2 * r);
            for (c, &v) in self.cubic.iter_mut().zip(rho_sq) {
                c.add(inv_r3 * v);
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        self.g2.merge(&other.g2);
        self.h.merge(&other.h);
        for (c, o) in self.cubic.iter_mut().zip(&other.cubic) {
            c.merge(o);
        }
        self.min_r2 = self.min_r2.min(other.min_r2);
        self.coincident |= other.coincident;
    }
}

/// Result of one shape-complexity evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScEvaluation {
    pub sc: f64,
    pub g: f64,
    pub h: f64,
    /// `dSC/dalpha_k`, present for [`sc_gradient`].
    pub gradient: Option<Vec<f64>>,
    /// `dg/dalpha_k` and `dh/dalpha_k`, present for [`sc_gradient`].
    pub g_partials: Option<Vec<f64>>,
    pub h_partials: Option<Vec<f64>>,
    /// Smallest pairwise distance; tiny values signal ill conditioning.
    pub min_distance: f64,
}

/// SC at any positive point, bypassing the floor check; `None` when undefined.
pub(crate) fn sc_unchecked(table: &PairTable, alpha: &[f64]) -> Option<f64> {
    let a2: Vec<f64> = alpha.iter().map(|a| a * a).collect();
    let acc = table.reduce(&a2, || ScAccumulator::new(table.d, false));
    let sc = acc.g2.value().sqrt() * acc.h.value();
    (!acc.coincident && sc.is_finite()).then_some(sc)
}

fn evaluate(table: &PairTable, alpha: &AlphaVector, gradient: bool) -> Result<ScEvaluation> {
    table.check_alpha(alpha)?;
    let a2 = squares(alpha);
    let acc = table.reduce(&a2, || ScAccumulator::new(table.d, gradient));
    if acc.coincident {
        return Err(Error::Numerical(
            "coincident samples (r_ij = 0); shape complexity is undefined".into(),
        ));
    }
    let g = acc.g2.value().sqrt();
    let h = acc.h.value();
    let sc = g * h;
    if !(sc.is_finite() && g > 0.0 && h > 0.0) {
        return Err(Error::Numerical(format!("non-finite shape complexity (g={g}, h={h})")));
    }
    let (grad, gp, hp) = if gradient {
        let alpha = alpha.as_slice();
        let gp: Vec<f64> = (0..table.d).map(|k| alpha[k] * table.rho_sums[k] / g).collect();
        let hp: Vec<f64> = (0..table.d).map(|k| -alpha[k] * acc.cubic[k].value()).collect();
        let grad = gp.iter().zip(&hp).map(|(dg, dh)| dg * h + g * dh).collect();
        (Some(grad), Some(gp), Some(hp))
    } else {
        (None, None, None)
    };
    Ok(ScEvaluation {
        sc,
        g,
        h,
        gradient: grad,
        g_partials: gp,
        h_partials: hp,
        min_distance: acc.min_r2.sqrt(),
    })
}

/// Shape complexity at `alpha` (no gradient).
pub fn sc_value(table: &PairTable, alpha: &AlphaVector) -> Result<ScEvaluation> {
    evaluate(table, alpha, false)
}

/// Shape complexity and its analytic gradient at `alpha`.
pub fn sc_gradient(table: &PairTable, alpha: &AlphaVector) -> Result<ScEvaluation> {
    evaluate(table, alpha, true)
}

/// How a dimension's scale factor trades the spread factor against the
/// crowding factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DimensionCase {
    /// `g'_k/g > -h'_k/h`: growing `alpha_k` stretches large distances more.
    C1,
    /// `g'_k/g < -h'_k/h`: growing `alpha_k` stretches small distances more.
    C2,
    Equilibrium,
}

/// Labels each dimension by comparing `g'_k/g` with `-h'_k/h`; equal within
/// `tolerance` (relative) counts as equilibrium.
pub fn classify_dimensions(table: &PairTable, alpha: &AlphaVector, tolerance: f64) -> Result<Vec<DimensionCase>> {
    let ev = sc_gradient(table, alpha)?;
    let gp = ev.g_partials.as_ref().expect("gradient requested");
    let hp = ev.h_partials.as_ref().expect("gradient requested");
    Ok(gp
        .iter()
        .zip(hp)
        .map(|(dg, dh)| {
            let spread = dg / ev.g;
            let crowd = -dh / ev.h;
            if (spread - crowd).abs() <= tolerance * spread.abs().max(crowd.abs()) {
                DimensionCase::Equilibrium
            } else if spread > crowd {
                DimensionCase::C1
            } else {
                DimensionCase::C2
            }
        })
        .collect())
}
