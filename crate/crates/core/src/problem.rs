//! Local search for scale factors that balance the spread and crowding
//! terms of shape complexity.
//!
//! The default objective is the squared orthogonality residual between
//! dimensions 1 and 2,
//!
//! ```text
//! minimize ( sum_{i<j} r_ij^-3 N^-1 (rho_ij1^2 - rho_ij2^2) )^2
//! subject to sum_k alpha_k^2 = d,  alpha_k >= 1e-5
//! ```
//!
//! solved from many random starting points by projected gradient descent
//! with finite-difference gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::{AlphaVector, PairAccumulator, PairTable, ALPHA_FLOOR};
use crate::sum::NeumaierSum;

/// Which objective a trial minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveVariant {
    /// Squared residual for dimensions (1, 2), on the sphere.
    PairOneTwo,
    /// Sum of squared residuals over every dimension pair, on the sphere.
    AllPairs,
    /// Maximize SC subject only to the floor bound (minimizes `-SC`).
    MaximizeSc,
}

impl ObjectiveVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "pair_one_two" | "p" | "default" => Ok(Self::PairOneTwo),
            "all_pairs" => Ok(Self::AllPairs),
            "maximize_sc" | "max_sc" => Ok(Self::MaximizeSc),
            other => Err(Error::Usage(format!("unknown objective `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PairOneTwo => "pair_one_two",
            Self::AllPairs => "all_pairs",
            Self::MaximizeSc => "maximize_sc",
        }
    }

    /// Whether iterates are kept on the sphere `sum alpha^2 = d`.
    pub fn on_sphere(self) -> bool {
        !matches!(self, Self::MaximizeSc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub seed: u64,
    pub init_low: f64,
    pub init_high: f64,
    pub max_iterations: usize,
    pub alpha_floor: f64,
    pub objective_tolerance: f64,
    pub step_tolerance: f64,
    /// A stop is only reported as converged when the projected gradient
    /// norm is at most this times `max(1, |gradient|)`.
    pub stationarity_tolerance: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            init_low: 0.5,
            init_high: 1.5,
            max_iterations: 5000,
            alpha_floor: ALPHA_FLOOR,
            objective_tolerance: 1e-12,
            step_tolerance: 1e-9,
            stationarity_tolerance: 1e-6,
        }
    }
}

impl TrialConfig {
    /// Defaults for `variant` (the SC-maximizing mode starts in `[1e-5, 1]`).
    pub fn for_variant(variant: ObjectiveVariant) -> Self {
        match variant {
            ObjectiveVariant::MaximizeSc => Self {
                init_low: ALPHA_FLOOR,
                init_high: 1.0,
                ..Self::default()
            },
            _ => Self::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.init_low > 0.0 && self.init_low < self.init_high && self.init_high.is_finite()) {
            return Err(Error::Usage(format!(
                "initial range must satisfy 0 < low < high, got [{}, {}]",
                self.init_low, self.init_high
            )));
        }
        if !(self.alpha_floor >= ALPHA_FLOOR) {
            return Err(Error::Usage(format!("alpha floor must be >= {ALPHA_FLOOR:e}")));
        }
        if self.init_low < self.alpha_floor {
            return Err(Error::Usage("initial range starts below the alpha floor".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::Usage("max_iterations must be >= 1".into()));
        }
        if !(self.objective_tolerance >= 0.0 && self.step_tolerance >= 0.0 && self.stationarity_tolerance >= 0.0) {
            return Err(Error::Usage("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outcome of one local solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub initial_alpha: Vec<f64>,
    pub final_alpha: Vec<f64>,
    #[serde(with = "nullable_f64")]
    pub objective: f64,
    #[serde(with = "nullable_f64")]
    pub sc: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl TrialResult {
    pub fn final_alpha(&self) -> Result<AlphaVector> {
        AlphaVector::new(self.final_alpha.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub variant: ObjectiveVariant,
    pub master_seed: u64,
    pub results: Vec<TrialResult>,
    pub discarded: usize,
}

impl TrialSet {
    /// Trials that count towards summaries.
    ///
    /// For the sphere-constrained variants these are the converged trials.
    /// The SC-maximizing mode usually has no finite maximizer and stops at
    /// the iteration cap, so every trial with a finite objective is kept.
    pub fn usable(&self) -> impl Iterator<Item = &TrialResult> {
        let keep_capped = !self.variant.on_sphere();
        self.results
            .iter()
            .filter(move |t| t.converged || (keep_capped && t.objective.is_finite()))
    }

    /// One JSON record per trial, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.results {
            out.push_str(&serde_json::to_string(t).expect("trial serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, variant: ObjectiveVariant, master_seed: u64) -> Result<Self> {
        let mut results = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t: TrialResult = serde_json::from_str(line).map_err(|e| Error::Parse {
                row: line_no + 1,
                message: e.to_string(),
            })?;
            results.push(t);
        }
        let discarded = results.iter().filter(|t| !t.converged).count();
        Ok(Self {
            variant,
            master_seed,
            results,
            discarded,
        })
    }
}

/// Non-finite reals are written as JSON `null` and read back as `NaN`.
mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

struct ResidualAccumulator {
    pairs: Vec<(usize, usize)>,
    sums: Vec<NeumaierSum>,
    coincident: bool,
}

impl ResidualAccumulator {
    fn new(pairs: Vec<(usize, usize)>) -> Self {
        let sums = vec![NeumaierSum::new(); pairs.len()];
        Self {
            pairs,
            sums,
            coincident: false,
        }
    }
}

impl PairAccumulator for ResidualAccumulator {
    #[inline]
    fn pair(&mut self, r2: f64, rho_sq: &[f64]) {
        if r2 == 0.0 {
            self.coincident = true;
            return;
        }
        let inv_r3 = 1.0 / (r2 * r2.sqrt());
        for (s, &(k, l)) in self.sums.iter_mut().zip(&self.pairs) {
            s.add(inv_r3 * (rho_sq[k] - rho_sq[l]));
        }
    }

    fn merge(&mut self, other: &Self) {
        self.coincident |= other.coincident;
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            s.merge(o);
        }
    }
}

fn residuals_raw(table: &PairTable, alpha: &[f64], pairs: Vec<(usize, usize)>) -> Option<Vec<f64>> {
    let a2: Vec<f64> = alpha.iter().map(|a| a * a).collect();
    let acc = table.reduce(&a2, || ResidualAccumulator::new(pairs.clone()));
    if acc.coincident {
        return None;
    }
    let n = table.pair_normalizer();
    Some(acc.sums.iter().map(|s| s.value() / n).collect())
}

/// `sum_{i<j} r_ij^-3 N^-1 (rho_ijk^2 - rho_ijl^2)` for zero-based dimensions `k != l`.
pub fn residual(table: &PairTable, alpha: &AlphaVector, k: usize, l: usize) -> Result<f64> {
    table.check_alpha(alpha)?;
    let d = table.d();
    if k >= d || l >= d {
        return Err(Error::Usage(format!("dimension index out of range (d = {d})")));
    }
    if k == l {
        return Err(Error::Usage("residual needs two distinct dimensions".into()));
    }
    residuals_raw(table, alpha.as_slice(), vec![(k, l)])
        .map(|v| v[0])
        .ok_or_else(|| Error::Numerical("coincident samples (r_ij = 0)".into()))
}

fn all_dimension_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|k| (k + 1..d).map(move |l| (k, l))).collect()
}

/// Objective value at an arbitrary positive point; `NaN` when undefined.
fn objective_raw(table: &PairTable, alpha: &[f64], variant: ObjectiveVariant) -> f64 {
    match variant {
        ObjectiveVariant::PairOneTwo => residuals_raw(table, alpha, vec![(0, 1)])
            .map_or(f64::NAN, |v| v[0] * v[0]),
        ObjectiveVariant::AllPairs => residuals_raw(table, alpha, all_dimension_pairs(table.d()))
            .map_or(f64::NAN, |v| v.iter().map(|x| x * x).collect::<NeumaierSum>().value()),
        ObjectiveVariant::MaximizeSc => sc_raw(table, alpha).map_or(f64::NAN, |sc| -sc),
    }
}

fn sc_raw(table: &PairTable, alpha: &[f64]) -> Option<f64> {
    crate::shape::sc_unchecked(table, alpha)
}

/// Objective of `variant` at `alpha` (`-SC` for the maximizing mode).
pub fn objective(table: &PairTable, alpha: &AlphaVector, variant: ObjectiveVariant) -> Result<f64> {
    table.check_alpha(alpha)?;
    if table.d() < 2 && variant.on_sphere() {
        return Err(Error::Usage("residual objectives need at least 2 dimensions".into()));
    }
    let f = objective_raw(table, alpha.as_slice(), variant);
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::Numerical(format!("objective undefined at {:?}", alpha.as_slice())))
    }
}

/// Moves `x` onto `{sum x^2 = radius_sq, x_k >= floor}`: entries below the
/// floor are pinned to it and the remaining ones rescaled, repeating until
/// no free entry drops below the floor.
pub fn project_to_sphere(x: &mut [f64], floor: f64, radius_sq: f64) {
    let d = x.len();
    let mut pinned = vec![false; d];
    for _ in 0..=d {
        for (v, p) in x.iter_mut().zip(pinned.iter_mut()) {
            if *v <= floor {
                *v = floor;
                *p = true;
            }
        }
        let fixed: f64 = x.iter().zip(&pinned).filter(|(_, p)| **p).map(|(v, _)| v * v).sum();
        let free: f64 = x.iter().zip(&pinned).filter(|(_, p)| !**p).map(|(v, _)| v * v).sum();
        if free == 0.0 {
            // every entry pinned; spread the radius evenly instead
            let v = (radius_sq / d as f64).sqrt();
            x.iter_mut().for_each(|e| *e = v);
            return;
        }
        let s = ((radius_sq - fixed).max(0.0) / free).sqrt();
        let mut dropped = false;
        for (v, p) in x.iter_mut().zip(&pinned) {
            if !*p {
                *v *= s;
                dropped |= *v < floor;
            }
        }
        if !dropped {
            return;
        }
    }
}

fn clamp_to_floor(x: &mut [f64], floor: f64) {
    x.iter_mut().for_each(|v| *v = v.max(floor));
}

/// Central-difference gradient with step `1e-6 * max(1, |x_k|)`, falling back
/// to a forward difference when the backward point would not be positive.
fn fd_gradient(table: &PairTable, x: &[f64], variant: ObjectiveVariant, f0: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = 1e-6 * x[k].abs().max(1.0);
            probe[k] = x[k] + h;
            let fp = objective_raw(table, &probe, variant);
            let g = if x[k] - h > 0.0 {
                probe[k] = x[k] - h;
                let fm = objective_raw(table, &probe, variant);
                (fp - fm) / (2.0 * h)
            } else {
                (fp - f0) / h
            };
            probe[k] = x[k];
            g
        })
        .collect()
}

/// Steepest feasible descent direction: `-grad`, with components that would
/// push floor-active entries lower removed and, on the sphere, the radial
/// part of the free components projected out.
fn descent_direction(x: &[f64], grad: &[f64], floor: f64, sphere: bool) -> Vec<f64> {
    let d = x.len();
    let mut fixed = vec![false; d];
    loop {
        let mut dir: Vec<f64> = (0..d).map(|k| if fixed[k] { 0.0 } else { -grad[k] }).collect();
        if sphere {
            let xx: f64 = (0..d).filter(|&k| !fixed[k]).map(|k| x[k] * x[k]).sum();
            if xx > 0.0 {
                let gx: f64 = (0..d).filter(|&k| !fixed[k]).map(|k| dir[k] * x[k]).sum();
                for k in (0..d).filter(|&k| !fixed[k]) {
                    dir[k] -= gx / xx * x[k];
                }
            }
        }
        let mut changed = false;
        for k in 0..d {
            if !fixed[k] && x[k] <= floor * (1.0 + 1e-12) && dir[k] < 0.0 {
                fixed[k] = true;
                changed = true;
            }
        }
        if !changed {
            return dir;
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// First-order optimality measure at a feasible point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stationarity {
    /// Norm of the finite-difference gradient after projecting onto the
    /// feasible tangent cone.
    pub projected_norm: f64,
    /// Norm of the raw finite-difference gradient.
    pub gradient_norm: f64,
}

impl Stationarity {
    /// `projected_norm <= tol * max(1, gradient_norm)`.
    pub fn holds(&self, tol: f64) -> bool {
        self.projected_norm <= tol * self.gradient_norm.max(1.0)
    }
}

pub fn stationarity(table: &PairTable, alpha: &AlphaVector, variant: ObjectiveVariant, floor: f64) -> Result<Stationarity> {
    let f0 = objective(table, alpha, variant)?;
    let grad = fd_gradient(table, alpha.as_slice(), variant, f0);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    let dir = descent_direction(alpha.as_slice(), &grad, floor, variant.on_sphere());
    Ok(Stationarity {
        projected_norm: norm(&dir),
        gradient_norm: norm(&grad),
    })
}

/// Projected gradient descent from `init`.
///
/// Each iteration takes a finite-difference gradient, moves along the
/// feasible descent direction and projects back onto the constraint set,
/// halving the step until the objective decreases. The step that succeeded
/// is doubled for the next iteration. Converges when the objective decrease
/// falls below `objective_tolerance` or the attempted move below
/// `step_tolerance`, provided the point is also first-order stationary to
/// `stationarity_tolerance`.
pub fn solve_local(table: &PairTable, init: &AlphaVector, config: &TrialConfig, variant: ObjectiveVariant) -> TrialResult {
    solve_indexed(table, init, config, variant, 0)
}

fn solve_indexed(
    table: &PairTable,
    init: &AlphaVector,
    config: &TrialConfig,
    variant: ObjectiveVariant,
    index: usize,
) -> TrialResult {
    let d = table.d();
    let sphere = variant.on_sphere();
    let radius_sq = d as f64;
    let floor = config.alpha_floor;

    let mut x = init.as_slice().to_vec();
    if sphere {
        project_to_sphere(&mut x, floor, radius_sq);
    } else {
        clamp_to_floor(&mut x, floor);
    }
    let mut result = TrialResult {
        index,
        initial_alpha: init.as_slice().to_vec(),
        final_alpha: x.clone(),
        objective: f64::NAN,
        sc: f64::NAN,
        converged: false,
        iterations: 0,
        diagnostic: None,
    };
    if init.len() != d {
        result.diagnostic = Some(format!("initial point has {} entries, expected {d}", init.len()));
        return result;
    }

    let mut f = objective_raw(table, &x, variant);
    if !f.is_finite() {
        result.diagnostic = Some("objective not finite at the initial point".into());
        return result;
    }

    let mut step: Option<f64> = None;
    let mut converged = false;
    let mut diagnostic = None;
    let mut iterations = 0;
    let mut small_change = false;
    let mut cand = vec![0.0; d];
    'outer: for it in 1..=config.max_iterations {
        iterations = it;
        let grad = fd_gradient(table, &x, variant, f);
        if grad.iter().any(|g| !g.is_finite()) {
            diagnostic = Some(format!("non-finite gradient at iteration {it}"));
            break;
        }
        let dir = descent_direction(&x, &grad, floor, sphere);
        let dnorm = norm(&dir);
        let stationary = dnorm <= config.stationarity_tolerance * norm(&grad).max(1.0);
        if dnorm == 0.0 || (small_change && stationary) {
            converged = true;
            break;
        }
        let mut t = step.unwrap_or(0.1 * norm(&x) / dnorm);
        loop {
            for k in 0..d {
                cand[k] = x[k] + t * dir[k];
            }
            if sphere {
                project_to_sphere(&mut cand, floor, radius_sq);
            } else {
                clamp_to_floor(&mut cand, floor);
            }
            let moved = norm(&cand.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
            if moved < config.step_tolerance {
                if stationary {
                    converged = true;
                } else {
                    diagnostic = Some(format!("line search stalled at iteration {it} away from a stationary point"));
                }
                break 'outer;
            }
            let fc = objective_raw(table, &cand, variant);
            if fc.is_finite() && fc < f {
                small_change = f - fc < config.objective_tolerance;
                std::mem::swap(&mut x, &mut cand);
                f = fc;
                step = Some(2.0 * t);
                break;
            }
            t *= 0.5;
        }
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(format!("iteration cap {} reached", config.max_iterations));
    }

    result.final_alpha = x.clone();
    result.objective = f;
    result.iterations = iterations;
    result.converged = converged;
    result.diagnostic = diagnostic;
    result.sc = if variant == ObjectiveVariant::MaximizeSc {
        -f
    } else {
        sc_raw(table, &x).unwrap_or(f64::NAN)
    };
    result
}

/// Random starting point for trial `index` of a batch seeded with `master_seed`.
pub fn initial_point(d: usize, config: &TrialConfig, index: usize) -> AlphaVector {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let alpha = (0..d)
        .map(|_| rng.random_range(config.init_low..config.init_high))
        .collect();
    AlphaVector::new(alpha).expect("initial range validated against the floor")
}

/// Runs `count` independent trials. Trial `t` draws its start from an RNG
/// stream keyed by `(config.seed, t)`; results are stored by index, so the
/// batch is identical however the trials are scheduled.
///
/// Unlike [`run_trials`], a batch in which every trial failed is returned
/// rather than reported as an error.
pub fn run_batch(table: &PairTable, count: usize, config: &TrialConfig, variant: ObjectiveVariant) -> Result<TrialSet> {
    config.validate()?;
    if count < 1 {
        return Err(Error::Usage("trial count must be >= 1".into()));
    }
    if variant.on_sphere() && table.d() < 2 {
        return Err(Error::Usage("residual objectives need at least 2 dimensions".into()));
    }
    let d = table.d();
    let results: Vec<TrialResult> = (0..count)
        .into_par_iter()
        .map(|t| solve_indexed(table, &initial_point(d, config, t), config, variant, t))
        .collect();
    let discarded = results.iter().filter(|t| !t.converged).count();
    Ok(TrialSet {
        variant,
        master_seed: config.seed,
        results,
        discarded,
    })
}

/// [`run_batch`], failing when no trial is usable.
pub fn run_trials(table: &PairTable, count: usize, config: &TrialConfig, variant: ObjectiveVariant) -> Result<TrialSet> {
    let set = run_batch(table, count, config, variant)?;
    if set.usable().next().is_none() {
        let mut reasons: Vec<String> = set.results.iter().filter_map(|t| t.diagnostic.clone()).collect();
        reasons.sort();
        reasons.dedup();
        return Err(Error::Numerical(format!(
            "all {count} trials failed: {}",
            reasons.join("; ")
        )));
    }
    Ok(set)
}
