//! End-to-end runs and the files they write.
//!
//! [`run_pipeline`] loads a labelled table, searches for scale factors,
//! clusters under each scaling scheme and scores every partition against the
//! reference labels. [`ReportBundle::write`] then produces:
//!
//! | file | contents |
//! |------|----------|
//! | `summary.csv`, `summary.txt` | ARI per scheme and the interval over usable trials |
//! | `trials.jsonl` | one record per trial |
//! | `best_trial.csv` | alpha, 1/sigma and alpha/sigma of the best-scoring trial |
//! | `labels.csv` | reference and obtained label vectors, one column each |
//! | `hist_<scheme>.csv` | pairwise distance histograms |
//! | `scatter.csv` | alpha_1, SC and ARI per usable trial |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::ari::{ari_fnc, AriReport};
use crate::config::Settings;
use crate::data::{
    apply_scaling, column_sigmas, deduplicate, fmt_real, impute_mean, load_csv, pca_reduce, scale_columns,
    write_table, CsvOptions, Dataset, LabelColumn, ScalingScheme, SigmaVector, UniqueView,
};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_dataset, Clustering, KMeansConfig, Partition};
use crate::problem::{run_batch, ObjectiveVariant, TrialConfig, TrialResult, TrialSet};
use crate::shape::{sc_value, AlphaVector, PairTable, TableOptions};
use crate::sum::NeumaierSum;

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub csv: CsvOptions,
    pub impute: bool,
    /// Reduce to this many principal components before anything else.
    pub pca: Option<usize>,
    pub trials: usize,
    pub trial: TrialConfig,
    pub variant: ObjectiveVariant,
    pub kmeans: KMeansConfig,
    /// Defaults to the number of reference clusters.
    pub clusters: Option<usize>,
    pub bins: usize,
    pub out_dir: Option<PathBuf>,
    pub table: TableOptions,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            csv: CsvOptions {
                label_column: Some(LabelColumn::Last),
                ..CsvOptions::default()
            },
            impute: true,
            pca: None,
            trials: 1000,
            trial: TrialConfig::default(),
            variant: ObjectiveVariant::PairOneTwo,
            kmeans: KMeansConfig::default(),
            clusters: None,
            bins: 50,
            out_dir: None,
            table: TableOptions::default(),
        }
    }

    /// Builds a config from settings; unset keys keep their defaults.
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let input: PathBuf = s
            .get("input")?
            .ok_or_else(|| Error::Usage("no input file given (--input or `input =`)".into()))?;
        let mut c = Self::new(input);
        if let Some(d) = s.raw("delimiter") {
            c.csv.delimiter = parse_delimiter(d)?;
        }
        if let Some(h) = s.flag("header")? {
            c.csv.has_header = h;
        }
        if let Some(l) = s.raw("label_column") {
            c.csv.label_column = match l {
                "" | "none" => None,
                l => Some(LabelColumn::parse(l)),
            };
        }
        if let Some(m) = s.raw("missing") {
            c.csv.missing_tokens = m.split(',').map(|t| t.trim().to_string()).collect();
        }
        c.impute = s.flag("impute")?.unwrap_or(c.impute);
        c.pca = s.get("pca")?;
        c.trials = s.get_or("trials", c.trials)?;
        if let Some(v) = s.raw("variant") {
            c.variant = ObjectiveVariant::parse(v)?;
        }
        let t = TrialConfig::for_variant(c.variant);
        c.trial = TrialConfig {
            seed: s.get_or("seed", t.seed)?,
            init_low: s.get_or("init_low", t.init_low)?,
            init_high: s.get_or("init_high", t.init_high)?,
            max_iterations: s.get_or("max_iterations", t.max_iterations)?,
            alpha_floor: s.get_or("alpha_floor", t.alpha_floor)?,
            objective_tolerance: s.get_or("objective_tolerance", t.objective_tolerance)?,
            step_tolerance: s.get_or("step_tolerance", t.step_tolerance)?,
            stationarity_tolerance: s.get_or("stationarity_tolerance", t.stationarity_tolerance)?,
        };
        let k = KMeansConfig::default();
        c.kmeans = KMeansConfig {
            restarts: s.get_or("kmeans_restarts", k.restarts)?,
            max_lloyd_iterations: s.get_or("kmeans_max_iterations", k.max_lloyd_iterations)?,
            seed: s.get_or("kmeans_seed", k.seed)?,
            tolerance: s.get_or("kmeans_tolerance", k.tolerance)?,
        };
        c.clusters = s.get("clusters")?;
        c.bins = s.get_or("bins", c.bins)?;
        c.out_dir = s.get("out")?;
        c.table.on_the_fly = s.flag("on_the_fly")?.unwrap_or(false);
        c.table.memory_budget_bytes = s.get_or("memory_budget", c.table.memory_budget_bytes)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.trial.validate()?;
        if self.trials < 1 {
            return Err(Error::Usage("trials must be >= 1".into()));
        }
        if self.bins < 1 {
            return Err(Error::Usage("bins must be >= 1".into()));
        }
        if self.kmeans.restarts < 1 {
            return Err(Error::Usage("kmeans_restarts must be >= 1".into()));
        }
        if self.pca == Some(0) {
            return Err(Error::Usage("pca must be >= 1".into()));
        }
        Ok(())
    }

    /// File stem of the input, used as the dataset name in reports.
    pub fn dataset_name(&self) -> String {
        self.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }
}

/// `,`, `;`, `tab`/`\t`, `space` or any single byte.
pub fn parse_delimiter(s: &str) -> Result<u8> {
    match s {
        "tab" | "\\t" | "\t" => Ok(b'\t'),
        "space" | " " => Ok(b' '),
        s if s.len() == 1 => Ok(s.as_bytes()[0]),
        _ => Err(Error::Usage(format!("delimiter must be a single character, got `{s}`"))),
    }
}

/// The preprocessed matrix and everything derived from it that does not
/// depend on the scale factors.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: Dataset,
    pub sigmas: SigmaVector,
    pub view: UniqueView,
    pub variance_retained: Option<f64>,
    pub imputed_cells: usize,
}

impl Prepared {
    pub fn reference(&self) -> Option<Partition> {
        self.data.labels().map(Partition::from_labels)
    }

    pub fn pair_table(&self, opts: &TableOptions) -> Result<PairTable> {
        PairTable::build(&self.view, &self.data, &self.sigmas, opts)
    }
}

/// Load, impute, reduce, then compute sigma and the unique-row view.
pub fn prepare(config: &PipelineConfig) -> Result<Prepared> {
    let raw = load_csv(&config.input, &config.csv)?;
    let imputed_cells = raw.missing_cells().len();
    let mut data = if config.impute {
        impute_mean(&raw)?
    } else if imputed_cells > 0 {
        return Err(Error::Data(format!(
            "{imputed_cells} absent cells and imputation is off"
        )));
    } else {
        raw
    };
    let mut variance_retained = None;
    if let Some(m) = config.pca {
        let (reduced, kept) = pca_reduce(&data, m)?;
        data = reduced;
        variance_retained = Some(kept);
    }
    let sigmas = column_sigmas(&data)?;
    let view = deduplicate(&data)?;
    Ok(Prepared {
        data,
        sigmas,
        view,
        variance_retained,
        imputed_cells: if config.impute { imputed_cells } else { 0 },
    })
}

/// Per-column factors for `scheme`, divided by a common power of two so the
/// largest lies in `[1, 2)`. k-means is exactly equivariant under such a
/// rescaling, and it keeps the huge factors of the SC-maximizing mode from
/// overflowing squared distances.
fn clustering_factors(sigmas: &SigmaVector, scheme: &ScalingScheme) -> Result<Vec<f64>> {
    let mut f = scheme.factors(sigmas)?.unwrap_or_else(|| vec![1.0; sigmas.len()]);
    let max = f.iter().cloned().fold(0.0, f64::max);
    let e = max.log2().floor() as i32;
    if e != 0 {
        let s = 2f64.powi(-e);
        f.iter_mut().for_each(|v| *v *= s);
    }
    Ok(f)
}

/// Clusters `data` scaled by `scheme` into `c` groups.
pub fn cluster_scheme(
    data: &Dataset,
    sigmas: &SigmaVector,
    scheme: &ScalingScheme,
    c: usize,
    config: &KMeansConfig,
) -> Result<Clustering> {
    let scaled = match scheme {
        ScalingScheme::None => data.clone(),
        _ => scale_columns(data, &clustering_factors(sigmas, scheme)?)?,
    };
    kmeans_dataset(&scaled, c, config)
}

/// Equal-width histogram of pairwise distances over `[0, max r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub scheme: String,
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub variance: f64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lower,upper,count\n");
        for (b, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{b},{},{},{c}", fmt_real(self.edges[b]), fmt_real(self.edges[b + 1]));
        }
        out
    }
}

fn pair_distance(a: &[f64], b: &[f64]) -> f64 {
    let s = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if s == 0.0 {
        return 0.0;
    }
    s * a.iter().zip(b).map(|(x, y)| ((x - y) / s).powi(2)).sum::<f64>().sqrt()
}

/// Histogram of all `n (n-1) / 2` row distances of `data`, duplicates
/// included.
pub fn histogram(data: &Dataset, bins: usize, scheme: &str) -> Result<Histogram> {
    if bins < 1 {
        return Err(Error::Usage("histogram needs at least 1 bin".into()));
    }
    let n = data.n_rows();
    let dists: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| (i + 1..n).map(move |j| pair_distance(data.row(i), data.row(j))))
        .collect();
    let max = dists.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::Numerical(format!("maximum pairwise distance is {max}")));
    }
    let mut counts = vec![0u64; bins];
    for &r in &dists {
        let b = ((r / max) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let edges = (0..=bins).map(|b| max * b as f64 / bins as f64).collect();
    let count = dists.len() as f64;
    let mean = dists.iter().copied().collect::<NeumaierSum>().value() / count;
    let variance = dists.iter().map(|r| (r - mean) * (r - mean)).collect::<NeumaierSum>().value() / count;
    Ok(Histogram {
        scheme: scheme.to_string(),
        edges,
        counts,
        mean,
        variance,
    })
}

#[derive(Clone, Debug)]
pub struct SchemeResult {
    pub scheme: String,
    pub clustering: Clustering,
    pub ari: AriReport,
}

/// A usable trial after clustering with its `alpha / sigma` factors.
#[derive(Clone, Debug)]
pub struct ScoredTrial {
    pub index: usize,
    pub clustering: Clustering,
    pub ari: AriReport,
}

#[derive(Clone, Debug)]
pub struct ReportBundle {
    pub dataset: String,
    pub n_orig: usize,
    pub n_unique: usize,
    pub d: usize,
    pub clusters: usize,
    pub variance_retained: Option<f64>,
    pub imputed_cells: usize,
    pub provenance: String,
    pub column_names: Vec<String>,
    pub sigmas: SigmaVector,
    /// Smallest distance between unique rows under 1/sigma scaling.
    pub min_distance: f64,
    pub reference: Partition,
    /// `none` and `inv_sigma`, in that order.
    pub baselines: Vec<SchemeResult>,
    pub trials: TrialSet,
    /// Usable trials in index order.
    pub scored: Vec<ScoredTrial>,
    pub histograms: Vec<Histogram>,
    pub kmeans: KMeansConfig,
}

impl ReportBundle {
    /// Lowest and highest ARI over usable trials.
    pub fn interval(&self) -> Option<(f64, f64)> {
        let mut it = self.scored.iter().map(|s| s.ari.ari_fnc);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), a| (lo.min(a), hi.max(a))))
    }

    /// Highest-ARI usable trial, lowest index on ties.
    pub fn best(&self) -> Option<(&TrialResult, &ScoredTrial)> {
        let best = self
            .scored
            .iter()
            .reduce(|a, b| if b.ari.ari_fnc > a.ari.ari_fnc { b } else { a })?;
        Some((&self.trials.results[best.index], best))
    }

    pub fn baseline(&self, scheme: &str) -> Option<&SchemeResult> {
        self.baselines.iter().find(|b| b.scheme == scheme)
    }

    pub fn compare_row(&self) -> CompareRow {
        CompareRow {
            dataset: self.dataset.clone(),
            none: self.baseline("none").map(|b| b.ari.ari_fnc).unwrap_or(f64::NAN),
            inv_sigma: self.baseline("inv_sigma").map(|b| b.ari.ari_fnc).unwrap_or(f64::NAN),
            interval: self.interval(),
            usable: self.scored.len(),
            trials: self.trials.results.len(),
        }
    }

    pub fn summary_csv(&self) -> String {
        let (lo, hi) = self.interval().map_or((String::new(), String::new()), |(a, b)| (fmt_real(a), fmt_real(b)));
        let mut out = String::from(
            "dataset,n_orig,n_unique,d,clusters,variance_retained,ari_none,ari_inv_sigma,ari_alpha_min,ari_alpha_max,variant,trials,usable,discarded,min_distance\n",
        );
        let row = self.compare_row();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{lo},{hi},{},{},{},{},{}",
            self.dataset,
            self.n_orig,
            self.n_unique,
            self.d,
            self.clusters,
            self.variance_retained.map(fmt_real).unwrap_or_default(),
            fmt_real(row.none),
            fmt_real(row.inv_sigma),
            self.trials.variant.name(),
            self.trials.results.len(),
            self.scored.len(),
            self.trials.discarded,
            fmt_real(self.min_distance),
        );
        out
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset      {}", self.dataset);
        let _ = writeln!(out, "source       {}", self.provenance);
        let _ = writeln!(
            out,
            "samples      {} ({} unique), {} dimensions, {} clusters",
            self.n_orig, self.n_unique, self.d, self.clusters
        );
        if self.imputed_cells > 0 {
            let _ = writeln!(out, "imputed      {} cells by column mean", self.imputed_cells);
        }
        if let Some(v) = self.variance_retained {
            let _ = writeln!(out, "variance     {:.4} retained by PCA", v);
        }
        let _ = writeln!(out, "min distance {:.6e} (1/sigma scaling, unique rows)", self.min_distance);
        let _ = writeln!(out);
        let _ = writeln!(out, "ARI_fnc");
        for b in &self.baselines {
            let _ = writeln!(out, "  {:<17}{:.3}", b.scheme, b.ari.ari_fnc);
        }
        match self.interval() {
            Some((lo, hi)) => {
                let _ = writeln!(out, "  {:<17}{lo:.3} - {hi:.3}", "alpha_over_sigma");
            }
            None => {
                let _ = writeln!(out, "  {:<17}unavailable (no usable trials)", "alpha_over_sigma");
            }
        }
        let _ = writeln!(
            out,
            "\ntrials       {} {} ({} usable, {} not converged)",
            self.trials.results.len(),
            self.trials.variant.name(),
            self.scored.len(),
            self.trials.discarded
        );
        if let Some((t, s)) = self.best() {
            let _ = writeln!(out, "best trial   #{} ARI_fnc {:.3} SC {:.6e}", t.index, s.ari.ari_fnc, t.sc);
            let _ = writeln!(out, "  {:<14}{:>14}{:>14}{:>14}", "column", "alpha", "1/sigma", "alpha/sigma");
            for (k, name) in self.column_names.iter().enumerate() {
                let inv = 1.0 / self.sigmas.as_slice()[k];
                let a = t.final_alpha[k];
                let _ = writeln!(out, "  {:<14}{:>14.6e}{:>14.6}{:>14.6e}", name, a, inv, a * inv);
            }
        }
        let _ = writeln!(
            out,
            "\nk-means: Lloyd iterations from k-means++ seeds, best of {} restarts, seed {}",
            self.kmeans.restarts, self.kmeans.seed
        );
        out
    }

    /// Writes every report file into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: &str| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path, e))
        };
        put("summary.csv", &self.summary_csv())?;
        put("summary.txt", &self.summary_text())?;
        put("trials.jsonl", &self.trials.to_jsonl())?;

        if let Some((t, _)) = self.best() {
            let rows = self.column_names.iter().enumerate().map(|(k, name)| {
                let inv = 1.0 / self.sigmas.as_slice()[k];
                vec![
                    name.clone(),
                    fmt_real(t.final_alpha[k]),
                    fmt_real(inv),
                    fmt_real(t.final_alpha[k] * inv),
                ]
            });
            write_table(&dir.join("best_trial.csv"), &["column", "alpha", "inv_sigma", "alpha_over_sigma"], rows)?;
        }

        let mut header = vec!["reference".to_string()];
        header.extend(self.baselines.iter().map(|b| b.scheme.clone()));
        header.extend(self.scored.iter().map(|s| format!("trial_{}", s.index)));
        let columns: Vec<&[usize]> = std::iter::once(self.reference.labels())
            .chain(self.baselines.iter().map(|b| b.clustering.partition.labels()))
            .chain(self.scored.iter().map(|s| s.clustering.partition.labels()))
            .collect();
        let rows = (0..self.n_orig).map(|i| columns.iter().map(|c| c[i].to_string()).collect());
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        write_table(&dir.join("labels.csv"), &header_refs, rows)?;

        for h in &self.histograms {
            put(&format!("hist_{}.csv", h.scheme), &h.to_csv())?;
        }

        let rows = self.scored.iter().map(|s| {
            let t = &self.trials.results[s.index];
            vec![
                s.index.to_string(),
                fmt_real(t.final_alpha[0]),
                fmt_real(t.sc),
                fmt_real(s.ari.ari_fnc),
            ]
        });
        write_table(&dir.join("scatter.csv"), &["trial", "alpha_1", "sc", "ari_fnc"], rows)
    }
}

/// Runs the whole pipeline described by `config`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<ReportBundle> {
    config.validate()?;
    let prepared = prepare(config)?;
    let reference = prepared.reference().ok_or_else(|| {
        Error::Usage("the pipeline needs reference labels; use `cluster` to partition without scoring".into())
    })?;
    let clusters = config.clusters.unwrap_or(reference.n_clusters());
    let data = &prepared.data;
    let sigmas = &prepared.sigmas;

    let table = prepared.pair_table(&config.table)?;
    let min_distance = sc_value(&table, &AlphaVector::ones(table.d()))?.min_distance;
    let trials = run_batch(&table, config.trials, &config.trial, config.variant)?;
    drop(table);

    let score = |scheme: &ScalingScheme| -> Result<(Clustering, AriReport)> {
        let clustering = cluster_scheme(data, sigmas, scheme, clusters, &config.kmeans)?;
        let ari = ari_fnc(&reference, &clustering.partition)?;
        Ok((clustering, ari))
    };

    let mut baselines = Vec::new();
    for scheme in [ScalingScheme::None, ScalingScheme::InvSigma] {
        let (clustering, ari) = score(&scheme)?;
        baselines.push(SchemeResult {
            scheme: scheme.name().to_string(),
            clustering,
            ari,
        });
    }

    let usable: Vec<&TrialResult> = trials.usable().collect();
    let scored = usable
        .par_iter()
        .map(|t| {
            let (clustering, ari) = score(&ScalingScheme::AlphaOverSigma(t.final_alpha()?))?;
            Ok(ScoredTrial {
                index: t.index,
                clustering,
                ari,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut histograms = vec![
        histogram(data, config.bins, "none")?,
        histogram(&apply_scaling(data, sigmas, &ScalingScheme::InvSigma)?, config.bins, "inv_sigma")?,
    ];
    let mut bundle = ReportBundle {
        dataset: config.dataset_name(),
        n_orig: data.n_rows(),
        n_unique: prepared.view.n(),
        d: data.n_cols(),
        clusters,
        variance_retained: prepared.variance_retained,
        imputed_cells: prepared.imputed_cells,
        provenance: data.provenance().to_string(),
        column_names: data.column_names().to_vec(),
        sigmas: sigmas.clone(),
        min_distance,
        reference,
        baselines,
        trials,
        scored,
        histograms: Vec::new(),
        kmeans: config.kmeans.clone(),
    };
    if let Some((t, _)) = bundle.best() {
        let scheme = ScalingScheme::AlphaOverSigma(t.final_alpha()?);
        histograms.push(histogram(&apply_scaling(data, sigmas, &scheme)?, config.bins, scheme.name())?);
    }
    bundle.histograms = histograms;

    if let Some(dir) = &config.out_dir {
        bundle.write(dir)?;
    }
    Ok(bundle)
}

/// One row of a cross-dataset comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub dataset: String,
    pub none: f64,
    pub inv_sigma: f64,
    /// `None` when every trial was discarded.
    pub interval: Option<(f64, f64)>,
    pub usable: usize,
    pub trials: usize,
}

/// Runs the pipeline once per config and collects one row each.
pub fn compare(configs: &[PipelineConfig]) -> Result<Vec<CompareRow>> {
    configs.iter().map(|c| run_pipeline(c).map(|b| b.compare_row())).collect()
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("dataset,none,inv_sigma,alpha_over_sigma_min,alpha_over_sigma_max,usable,trials\n");
    for r in rows {
        let (lo, hi) = r.interval.map_or((String::new(), String::new()), |(a, b)| (fmt_real(a), fmt_real(b)));
        let _ = writeln!(
            out,
            "{},{},{},{lo},{hi},{},{}",
            r.dataset,
            fmt_real(r.none),
            fmt_real(r.inv_sigma),
            r.usable,
            r.trials
        );
    }
    out
}

pub fn compare_text(rows: &[CompareRow]) -> String {
    let width = rows.iter().map(|r| r.dataset.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<width$}  {:>7}  {:>7}  {}\n", "dataset", "none", "1/sigma", "alpha/sigma");
    for r in rows {
        let interval = match r.interval {
            Some((lo, hi)) => format!("{lo:.3}-{hi:.3}"),
            None => "unavailable".to_string(),
        };
        let _ = writeln!(out, "{:<width$}  {:>7.3}  {:>7.3}  {interval}", r.dataset, r.none, r.inv_sigma);
    }
    out
}
