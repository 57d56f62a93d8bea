use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shapescale::ari::{ari_fnc, pair_counts};
use shapescale::config::Settings;
use shapescale::data::{fmt_real, write_csv};
use shapescale::report::{
    cluster_scheme, compare, compare_csv, compare_text, histogram, prepare, run_pipeline, PipelineConfig, Prepared,
};
use shapescale::{
    apply_scaling, run_trials, sc_value, AlphaVector, Error, Partition, Result, ScalingScheme, TrialSet,
};

/// Shape-complexity guided feature scaling for k-means clustering.
#[derive(Parser)]
#[command(name = "shapescale", version)]
struct Cli {
    /// Flat `key = value` settings file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, impute and optionally reduce a table; print its statistics.
    Ingest {
        #[command(flatten)]
        input: InputArgs,
        /// Write the cleaned table here.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run a batch of scale-factor searches and write the trial stream.
    Search {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// JSONL output (stdout if omitted).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Cluster the scaled table and write one label per row.
    Cluster {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[command(flatten)]
        kmeans: KMeansArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Score label columns of a CSV against a reference column.
    Evaluate {
        /// CSV with a header and one label vector per column.
        #[arg(long, value_name = "FILE")]
        labels: PathBuf,
        /// Reference column name (defaults to the first column).
        #[arg(long)]
        reference: Option<String>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Histogram of pairwise distances of the scaled table.
    Hist {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Compare scaling schemes across several datasets.
    Compare {
        /// Input tables; repeat for each dataset.
        #[arg(long = "dataset", value_name = "FILE", required = true)]
        datasets: Vec<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        kmeans: KMeansArgs,
        /// CSV output; the table is always printed.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Full run: search, cluster, score and write the report bundle.
    Pipeline {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        kmeans: KMeansArgs,
        #[arg(long)]
        bins: Option<usize>,
        /// Report directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InputArgs {
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Field delimiter (`,`, `;`, `tab`, ...).
    #[arg(long)]
    delimiter: Option<String>,
    /// The first line is data, not a header.
    #[arg(long)]
    no_header: bool,
    /// Label column: header name, zero-based index, `last` or `none`.
    #[arg(long)]
    label_column: Option<String>,
    /// Comma-separated tokens that mark an absent cell.
    #[arg(long)]
    missing: Option<String>,
    /// Fail on absent cells instead of filling column means.
    #[arg(long)]
    no_impute: bool,
    /// Project onto this many principal components first.
    #[arg(long, value_name = "M")]
    pca: Option<usize>,
}

impl InputArgs {
    fn overlay(&self, s: &mut Settings) {
        s.set_opt("input", self.input.as_ref().map(|p| p.display()));
        s.set_opt("delimiter", self.delimiter.as_ref());
        if self.no_header {
            s.set("header", false);
        }
        s.set_opt("label_column", self.label_column.as_ref());
        s.set_opt("missing", self.missing.as_ref());
        if self.no_impute {
            s.set("impute", false);
        }
        s.set_opt("pca", self.pca);
    }
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `pair_one_two`, `all_pairs` or `maximize_sc`.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    init_low: Option<f64>,
    #[arg(long)]
    init_high: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    alpha_floor: Option<f64>,
    #[arg(long)]
    objective_tolerance: Option<f64>,
    #[arg(long)]
    step_tolerance: Option<f64>,
    #[arg(long)]
    stationarity_tolerance: Option<f64>,
    /// Recompute pair differences on demand instead of storing them.
    #[arg(long)]
    on_the_fly: bool,
    /// Bytes allowed for the stored pair table.
    #[arg(long)]
    memory_budget: Option<usize>,
}

impl SearchArgs {
    fn overlay(&self, s: &mut Settings) {
        s.set_opt("trials", self.trials);
        s.set_opt("seed", self.seed);
        s.set_opt("variant", self.variant.as_ref());
        s.set_opt("init_low", self.init_low);
        s.set_opt("init_high", self.init_high);
        s.set_opt("max_iterations", self.max_iterations);
        s.set_opt("alpha_floor", self.alpha_floor);
        s.set_opt("objective_tolerance", self.objective_tolerance);
        s.set_opt("step_tolerance", self.step_tolerance);
        s.set_opt("stationarity_tolerance", self.stationarity_tolerance);
        if self.on_the_fly {
            s.set("on_the_fly", true);
        }
        s.set_opt("memory_budget", self.memory_budget);
    }
}

#[derive(Args)]
struct KMeansArgs {
    /// Number of clusters (defaults to the number of reference labels).
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    kmeans_restarts: Option<usize>,
    #[arg(long)]
    kmeans_seed: Option<u64>,
    #[arg(long)]
    kmeans_max_iterations: Option<usize>,
    #[arg(long)]
    kmeans_tolerance: Option<f64>,
}

impl KMeansArgs {
    fn overlay(&self, s: &mut Settings) {
        s.set_opt("clusters", self.clusters);
        s.set_opt("kmeans_restarts", self.kmeans_restarts);
        s.set_opt("kmeans_seed", self.kmeans_seed);
        s.set_opt("kmeans_max_iterations", self.kmeans_max_iterations);
        s.set_opt("kmeans_tolerance", self.kmeans_tolerance);
    }
}

#[derive(Args)]
struct SchemeArgs {
    /// `none`, `inv_sigma` or `alpha_over_sigma`.
    #[arg(long, default_value = "inv_sigma")]
    scheme: String,
    /// Comma-separated scale factors for `alpha_over_sigma`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha: Option<Vec<f64>>,
    /// Take the factors from a trial stream written by `search`.
    #[arg(long, value_name = "FILE", conflicts_with = "alpha")]
    trials_file: Option<PathBuf>,
    /// Trial index within `--trials-file`.
    #[arg(long, default_value_t = 0)]
    trial: usize,
}

impl SchemeArgs {
    fn scheme(&self, d: usize) -> Result<ScalingScheme> {
        match self.scheme.as_str() {
            "none" => Ok(ScalingScheme::None),
            "inv_sigma" => Ok(ScalingScheme::InvSigma),
            "alpha_over_sigma" => {
                let alpha = if let Some(a) = &self.alpha {
                    a.clone()
                } else if let Some(path) = &self.trials_file {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
                    let set = TrialSet::from_jsonl(&text, shapescale::ObjectiveVariant::PairOneTwo, 0)?;
                    let t = set
                        .results
                        .iter()
                        .find(|t| t.index == self.trial)
                        .ok_or_else(|| Error::Usage(format!("trial {} not in {}", self.trial, path.display())))?;
                    t.final_alpha.clone()
                } else {
                    return Err(Error::Usage("alpha_over_sigma needs --alpha or --trials-file".into()));
                };
                if alpha.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: alpha.len(),
                    });
                }
                Ok(ScalingScheme::AlphaOverSigma(AlphaVector::new(alpha)?))
            }
            other => Err(Error::Usage(format!("unknown scheme `{other}`"))),
        }
    }
}

fn settings(file: Option<&Path>) -> Result<Settings> {
    match file {
        Some(p) => Settings::load(p),
        None => Ok(Settings::new()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Data(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Data(format!("stdout: {e}"))),
    }
}

fn ingest_summary(cfg: &PipelineConfig, p: &Prepared) -> String {
    let mut out = String::new();
    out.push_str(&format!("rows        {}\n", p.data.n_rows()));
    out.push_str(&format!("unique rows {}\n", p.view.n()));
    out.push_str(&format!("columns     {}\n", p.data.n_cols()));
    if let Some(labels) = p.data.labels() {
        out.push_str(&format!("clusters    {}\n", Partition::from_labels(labels).n_clusters()));
    }
    out.push_str(&format!("imputed     {}\n", p.imputed_cells));
    if let Some(v) = p.variance_retained {
        out.push_str(&format!("variance    {} retained by {} components\n", fmt_real(v), cfg.pca.unwrap_or(0)));
    }
    out.push_str("column,sigma,inv_sigma\n");
    for (name, s) in p.data.column_names().iter().zip(p.sigmas.as_slice()) {
        out.push_str(&format!("{name},{},{}\n", fmt_real(*s), fmt_real(1.0 / s)));
    }
    out
}

fn evaluate(labels: &Path, reference: Option<&str>) -> Result<String> {
    let mut reader = csv::Reader::from_path(labels).map_err(|e| Error::Data(format!("{}: {e}", labels.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut columns: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: row + 2,
            message: e.to_string(),
        })?;
        for (c, v) in columns.iter_mut().zip(rec.iter()) {
            c.push(v.to_string());
        }
    }
    let r = match reference {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Usage(format!("no column `{name}` in {}", labels.display())))?,
        None => 0,
    };
    let reference = Partition::from_labels(&columns[r]);
    let mut out = String::from("column,ts,td,fd,fs,ri,expected_ri,u,v,ari_fnc\n");
    for (c, name) in header.iter().enumerate() {
        if c == r {
            continue;
        }
        let obtained = Partition::from_labels(&columns[c]);
        let rep = ari_fnc(&reference, &obtained)?;
        let k = pair_counts(&reference, &obtained)?;
        out.push_str(&format!(
            "{name},{},{},{},{},{},{},{},{},{}\n",
            k.ts,
            k.td,
            k.fd,
            k.fs,
            fmt_real(rep.ri),
            fmt_real(rep.expected_ri),
            fmt_real(rep.u),
            fmt_real(rep.v),
            fmt_real(rep.ari_fnc)
        ));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let mut s = settings(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { input, out } => {
            input.overlay(&mut s);
            let cfg = PipelineConfig::from_settings(&s)?;
            let p = prepare(&cfg)?;
            if let Some(path) = &out {
                write_csv(&p.data, path)?;
            }
            emit(None, &ingest_summary(&cfg, &p))
        }
        Command::Search { input, search, out } => {
            input.overlay(&mut s);
            search.overlay(&mut s);
            let cfg = PipelineConfig::from_settings(&s)?;
            let p = prepare(&cfg)?;
            let table = p.pair_table(&cfg.table)?;
            let eval = sc_value(&table, &AlphaVector::ones(table.d()))?;
            eprintln!("pairs {}, min distance {}", table.n_pairs(), fmt_real(eval.min_distance));
            let set = run_trials(&table, cfg.trials, &cfg.trial, cfg.variant)?;
            eprintln!(
                "{} trials, {} usable, {} not converged",
                set.results.len(),
                set.usable().count(),
                set.discarded
            );
            emit(out.as_deref(), &set.to_jsonl())
        }
        Command::Cluster {
            input,
            scheme,
            kmeans,
            out,
        } => {
            input.overlay(&mut s);
            kmeans.overlay(&mut s);
            let cfg = PipelineConfig::from_settings(&s)?;
            let p = prepare(&cfg)?;
            let c = match (cfg.clusters, p.reference()) {
                (Some(c), _) => c,
                (None, Some(r)) => r.n_clusters(),
                (None, None) => return Err(Error::Usage("no labels in the input; pass --clusters".into())),
            };
            let sch = scheme.scheme(p.data.n_cols())?;
            let res = cluster_scheme(&p.data, &p.sigmas, &sch, c, &cfg.kmeans)?;
            eprintln!("within-cluster SS {} (restart {})", fmt_real(res.within_ss), res.restart);
            let mut text = String::from("label\n");
            for l in res.partition.labels() {
                text.push_str(&format!("{l}\n"));
            }
            emit(out.as_deref(), &text)
        }
        Command::Evaluate { labels, reference, out } => emit(out.as_deref(), &evaluate(&labels, reference.as_deref())?),
        Command::Hist {
            input,
            scheme,
            bins,
            out,
        } => {
            input.overlay(&mut s);
            s.set_opt("bins", bins);
            let cfg = PipelineConfig::from_settings(&s)?;
            let p = prepare(&cfg)?;
            let sch = scheme.scheme(p.data.n_cols())?;
            let h = histogram(&apply_scaling(&p.data, &p.sigmas, &sch)?, cfg.bins, sch.name())?;
            eprintln!("mean {}, variance {}", fmt_real(h.mean), fmt_real(h.variance));
            emit(out.as_deref(), &h.to_csv())
        }
        Command::Compare {
            datasets,
            input,
            search,
            kmeans,
            out,
        } => {
            input.overlay(&mut s);
            search.overlay(&mut s);
            kmeans.overlay(&mut s);
            let configs = datasets
                .iter()
                .map(|d| {
                    let mut s = s.clone();
                    s.set("input", d.display());
                    let mut c = PipelineConfig::from_settings(&s)?;
                    c.out_dir = None;
                    Ok(c)
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = compare(&configs)?;
            if let Some(path) = &out {
                emit(Some(path), &compare_csv(&rows))?;
            }
            emit(None, &compare_text(&rows))
        }
        Command::Pipeline {
            input,
            search,
            kmeans,
            bins,
            out,
        } => {
            input.overlay(&mut s);
            search.overlay(&mut s);
            kmeans.overlay(&mut s);
            s.set_opt("bins", bins);
            s.set_opt("out", out.as_ref().map(|p| p.display()));
            let mut cfg = PipelineConfig::from_settings(&s)?;
            if cfg.out_dir.is_none() {
                cfg.out_dir = Some(PathBuf::from("report"));
            }
            let bundle = run_pipeline(&cfg)?;
            emit(None, &bundle.summary_text())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
