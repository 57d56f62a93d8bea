//! Shape-complexity guided feature scaling for distance-based clustering.
//!
//! The pipeline: load a numeric table ([`data`]), compute per-column standard
//! deviations and the unique-row view, build the pair table and evaluate
//! shape complexity ([`shape`]), search for scale factors from many random
//! starts ([`problem`]), cluster the rescaled data ([`kmeans`]) and score the
//! result against reference labels ([`ari`]). [`report`] ties these together
//! and writes the output bundle used by the command-line tool.

pub mod ari;
pub mod config;
pub mod data;
pub mod error;
pub mod kmeans;
pub mod problem;
pub mod report;
pub mod shape;
pub mod sum;

pub use ari::{ari_fnc, pair_counts, AriReport, PairCounts};
pub use data::{
    apply_scaling, column_sigmas, deduplicate, impute_mean, load_csv, pca_reduce, CsvOptions, Dataset,
    LabelColumn, ScalingScheme, SigmaVector, UniqueView,
};
pub use error::{Error, Result};
pub use kmeans::{kmeans, Clustering, KMeansConfig, Partition};
pub use problem::{objective, residual, run_trials, solve_local, ObjectiveVariant, TrialConfig, TrialResult, TrialSet};
pub use shape::{sc_gradient, sc_value, AlphaVector, PairTable, ScEvaluation, TableOptions, ALPHA_FLOOR};

/// Builds the pair table over `view` with default storage options.
pub fn pair_table(view: &UniqueView, data: &Dataset, sigmas: &SigmaVector) -> Result<PairTable> {
    PairTable::build(view, data, sigmas, &TableOptions::default())
}
