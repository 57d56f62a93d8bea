//! Tabular ingestion and preprocessing: CSV loading, mean imputation,
//! duplicate removal, per-column standard deviations, PCA and the scaling
//! schemes applied before clustering.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::shape::AlphaVector;
use crate::sum::NeumaierSum;

/// Formats a real with 17 significant digits, enough to round-trip any f64.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Row-major `n_orig x d` matrix plus column metadata and optional labels.
///
/// Absent cells are tracked in `missing` (flat row-major indices) and hold
/// `NaN` in `values` until imputed.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    missing: Vec<usize>,
    column_names: Vec<String>,
    label_name: Option<String>,
    labels: Option<Vec<String>>,
    provenance: String,
}

impl Dataset {
    /// Builds a complete dataset (no absent cells).
    pub fn from_rows(rows: &[Vec<f64>], column_names: Vec<String>) -> Result<Self> {
        let n_cols = column_names.len();
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("expected {n_cols} values, found {}", row.len()),
                });
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(rows.len(), n_cols, values, column_names)
    }

    /// Builds a complete dataset from a row-major buffer.
    pub fn from_flat(
        n_rows: usize,
        n_cols: usize,
        values: Vec<f64>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        if n_rows < 2 {
            return Err(Error::Data(format!("need at least 2 rows, got {n_rows}")));
        }
        if n_cols < 1 || column_names.len() != n_cols {
            return Err(Error::DimensionMismatch {
                expected: n_cols,
                got: column_names.len(),
            });
        }
        if values.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch {
                expected: n_rows * n_cols,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row: pos / n_cols + 1,
                message: format!("non-finite value in column `{}`", column_names[pos % n_cols]),
            });
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
            missing: Vec::new(),
            column_names,
            label_name: None,
            labels: None,
            provenance: String::new(),
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        if self.label_name.is_none() {
            self.label_name = Some("label".to_string());
        }
        Ok(self)
    }

    pub fn with_provenance(mut self, note: impl Into<String>) -> Self {
        self.provenance = note.into();
        self
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n_cols + k]
    }

    pub fn column(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(k).step_by(self.n_cols).copied()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label_name(&self) -> Option<&str> {
        self.label_name.as_deref()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Flat row-major indices of absent cells.
    pub fn missing_cells(&self) -> &[usize] {
        &self.missing
    }

    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn is_missing(&self, i: usize, k: usize) -> bool {
        self.missing.binary_search(&(i * self.n_cols + k)).is_ok()
    }

    fn require_complete(&self) -> Result<()> {
        match self.missing.first() {
            None => Ok(()),
            Some(&idx) => Err(Error::Data(format!(
                "dataset has {} absent cells (first at row {}, column `{}`); impute first",
                self.missing.len(),
                idx / self.n_cols + 1,
                self.column_names[idx % self.n_cols]
            ))),
        }
    }

    /// Same metadata, new values (and possibly new columns).
    fn derive(&self, n_cols: usize, values: Vec<f64>, column_names: Vec<String>) -> Self {
        Self {
            n_rows: self.n_rows,
            n_cols,
            values,
            missing: Vec::new(),
            column_names,
            label_name: self.label_name.clone(),
            labels: self.labels.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Which column (if any) holds the reference cluster labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    /// Zero-based column index.
    Index(usize),
    Last,
}

impl LabelColumn {
    /// `last`, a header name, or a zero-based index.
    pub fn parse(s: &str) -> Self {
        if s.eq_ignore_ascii_case("last") {
            return LabelColumn::Last;
        }
        match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    pub label_column: Option<LabelColumn>,
    pub missing_tokens: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: true,
            label_column: None,
            missing_tokens: vec![String::new(), "?".to_string()],
        }
    }
}

/// Reads a rectangular numeric table. Absent cells (any of
/// `missing_tokens`) are recorded, not zero-filled.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(file);

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(records.len() + 1, |p| p.line() as usize);
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{} is empty", path.display())));
    }

    let width = records[0].1.len();
    for (line, rec) in &records {
        if rec.len() != width {
            return Err(Error::Parse {
                row: *line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
    }

    let header: Vec<String> = if opts.has_header {
        records.remove(0).1.iter().map(|s| s.trim().to_string()).collect()
    } else {
        (1..=width).map(|k| format!("x{k}")).collect()
    };

    let label_idx = match &opts.label_column {
        None => None,
        Some(LabelColumn::Last) => Some(width - 1),
        Some(LabelColumn::Index(i)) if *i < width => Some(*i),
        Some(LabelColumn::Index(i)) => {
            return Err(Error::Usage(format!(
                "label column index {i} out of range (table has {width} columns)"
            )))
        }
        Some(LabelColumn::Name(name)) => match header.iter().position(|h| h == name) {
            Some(i) => Some(i),
            None => return Err(Error::Usage(format!("no column named `{name}`"))),
        },
    };

    let feature_cols: Vec<usize> = (0..width).filter(|&k| Some(k) != label_idx).collect();
    let n_cols = feature_cols.len();
    let n_rows = records.len();
    if n_rows < 2 || n_cols < 2 {
        return Err(Error::Data(format!(
            "need at least 2 rows and 2 feature columns, got {n_rows} x {n_cols}"
        )));
    }

    let mut values = Vec::with_capacity(n_rows * n_cols);
    let mut missing = Vec::new();
    let mut labels = label_idx.map(|_| Vec::with_capacity(n_rows));
    for (i, (line, rec)) in records.iter().enumerate() {
        for (k, &c) in feature_cols.iter().enumerate() {
            let cell = rec[c].trim();
            if opts.missing_tokens.iter().any(|t| t == cell) {
                missing.push(i * n_cols + k);
                values.push(f64::NAN);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: *line,
                message: format!("non-numeric value `{cell}` in column `{}`", header[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: *line,
                    message: format!("non-finite value `{cell}` in column `{}`", header[c]),
                });
            }
            values.push(v);
        }
        if let (Some(labels), Some(li)) = (labels.as_mut(), label_idx) {
            labels.push(rec[li].trim().to_string());
        }
    }

    Ok(Dataset {
        n_rows,
        n_cols,
        values,
        missing,
        column_names: feature_cols.iter().map(|&c| header[c].clone()).collect(),
        label_name: label_idx.map(|i| header[i].clone()),
        labels,
        provenance: path.display().to_string(),
    })
}

/// Writes the dataset as CSV with 17-significant-digit reals; absent cells
/// are written as empty fields and labels (if any) as the last column.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let map_err = |e: csv::Error| Error::Data(format!("writing {}: {e}", path.display()));

    let mut header: Vec<&str> = data.column_names.iter().map(String::as_str).collect();
    if data.labels.is_some() {
        header.push(data.label_name.as_deref().unwrap_or("label"));
    }
    w.write_record(&header).map_err(map_err)?;
    for i in 0..data.n_rows {
        let mut rec: Vec<String> = (0..data.n_cols)
            .map(|k| {
                if data.is_missing(i, k) {
                    String::new()
                } else {
                    fmt_real(data.value(i, k))
                }
            })
            .collect();
        if let Some(labels) = &data.labels {
            rec.push(labels[i].clone());
        }
        w.write_record(&rec).map_err(map_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Replaces every absent cell with the mean of its column's present values.
pub fn impute_mean(data: &Dataset) -> Result<Dataset> {
    if data.is_complete() {
        return Ok(data.clone());
    }
    let mut means = Vec::with_capacity(data.n_cols);
    for k in 0..data.n_cols {
        let mut acc = NeumaierSum::new();
        let mut count = 0usize;
        for i in 0..data.n_rows {
            if !data.is_missing(i, k) {
                acc += data.value(i, k);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyColumn {
                column: data.column_names[k].clone(),
            });
        }
        means.push(acc.value() / count as f64);
    }
    let mut values = data.values.clone();
    for &idx in &data.missing {
        values[idx] = means[idx % data.n_cols];
    }
    let mut out = data.derive(data.n_cols, values, data.column_names.clone());
    out.provenance = format!(
        "{}; {} absent cells replaced by column means",
        data.provenance,
        data.missing.len()
    );
    Ok(out)
}

/// Indices of the first occurrence of each distinct row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UniqueView {
    indices: Vec<usize>,
}

impl UniqueView {
    /// Every row of an `n_rows` dataset, assumed distinct.
    pub fn all(n_rows: usize) -> Self {
        Self {
            indices: (0..n_rows).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn n(&self) -> usize {
        self.indices.len()
    }
}

pub(crate) fn row_key(row: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 compare equal, so they must hash equal
    row.iter().map(|&v| if v == 0.0 { 0 } else { v.to_bits() }).collect()
}

/// Keeps the first occurrence of each distinct row (exact value equality).
pub fn deduplicate(data: &Dataset) -> Result<UniqueView> {
    data.require_complete()?;
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::with_capacity(data.n_rows);
    let mut indices = Vec::new();
    for i in 0..data.n_rows {
        if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(row_key(data.row(i))) {
            e.insert(i);
            indices.push(i);
        }
    }
    if indices.len() < 2 {
        return Err(Error::Data(format!(
            "only {} distinct row(s); shape complexity needs at least 2",
            indices.len()
        )));
    }
    Ok(UniqueView { indices })
}

/// Sample standard deviations (divisor `n_orig - 1`) over all rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaVector(Vec<f64>);

impl SigmaVector {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if let Some(k) = sigma.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::ConstantColumn {
                column: format!("#{}", k + 1),
            });
        }
        Ok(Self(sigma))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inverse(&self) -> Vec<f64> {
        self.0.iter().map(|s| 1.0 / s).collect()
    }
}

pub fn column_sigmas(data: &Dataset) -> Result<SigmaVector> {
    data.require_complete()?;
    let n = data.n_rows as f64;
    let mut sigma = Vec::with_capacity(data.n_cols);
    for k in 0..data.n_cols {
        let mean = data.column(k).collect::<NeumaierSum>().value() / n;
        let ss = data
            .column(k)
            .map(|x| (x - mean) * (x - mean))
            .collect::<NeumaierSum>()
            .value();
        let s = (ss / (n - 1.0)).sqrt();
        if !(s > 0.0) {
            return Err(Error::ConstantColumn {
                column: data.column_names[k].clone(),
            });
        }
        sigma.push(s);
    }
    Ok(SigmaVector(sigma))
}

/// Projects the column-centred data onto its top `m` principal components.
///
/// Returns the reduced dataset and the fraction of total variance retained.
/// Each component's sign is fixed so that its largest-magnitude loading is
/// positive.
pub fn pca_reduce(data: &Dataset, m: usize) -> Result<(Dataset, f64)> {
    data.require_complete()?;
    let (n, d) = (data.n_rows, data.n_cols);
    if m < 1 || m > d {
        return Err(Error::Usage(format!(
            "PCA target dimension must be in 1..={d}, got {m}"
        )));
    }
    let means: Vec<f64> = (0..d)
        .map(|k| data.column(k).collect::<NeumaierSum>().value() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, d, |i, k| data.value(i, k) - means[k]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("data has zero total variance".into()));
    }
    let kept: f64 = order[..m].iter().map(|&c| eig.eigenvalues[c].max(0.0)).sum();

    let mut basis = DMatrix::<f64>::zeros(d, m);
    for (j, &c) in order[..m].iter().enumerate() {
        let v = eig.eigenvectors.column(c);
        let mut pivot = 0;
        for k in 1..d {
            if v[k].abs() > v[pivot].abs() {
                pivot = k;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..d {
            basis[(k, j)] = sign * v[k];
        }
    }
    let scores = centered * basis;
    let mut values = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            values.push(scores[(i, j)]);
        }
    }
    let names = (1..=m).map(|j| format!("PC{j}")).collect();
    let mut out = data.derive(m, values, names);
    out.provenance = format!("{}; PCA to {m} components", data.provenance);
    Ok((out, (kept / total).min(1.0)))
}

/// How each column is rescaled before clustering.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalingScheme {
    None,
    InvSigma,
    AlphaOverSigma(AlphaVector),
}

impl ScalingScheme {
    pub fn name(&self) -> &'static str {
        match self {
            ScalingScheme::None => "none",
            ScalingScheme::InvSigma => "inv_sigma",
            ScalingScheme::AlphaOverSigma(_) => "alpha_over_sigma",
        }
    }

    /// Per-column multipliers, or `None` for the identity.
    pub fn factors(&self, sigmas: &SigmaVector) -> Result<Option<Vec<f64>>> {
        match self {
            ScalingScheme::None => Ok(None),
            ScalingScheme::InvSigma => Ok(Some(sigmas.inverse())),
            ScalingScheme::AlphaOverSigma(alpha) => {
                if alpha.len() != sigmas.len() {
                    return Err(Error::DimensionMismatch {
                        expected: sigmas.len(),
                        got: alpha.len(),
                    });
                }
                Ok(Some(
                    alpha
                        .as_slice()
                        .iter()
                        .zip(sigmas.as_slice())
                        .map(|(a, s)| a / s)
                        .collect(),
                ))
            }
        }
    }
}

pub fn apply_scaling(data: &Dataset, sigmas: &SigmaVector, scheme: &ScalingScheme) -> Result<Dataset> {
    data.require_complete()?;
    if sigmas.len() != data.n_cols {
        return Err(Error::DimensionMismatch {
            expected: data.n_cols,
            got: sigmas.len(),
        });
    }
    match scheme.factors(sigmas)? {
        None => Ok(data.clone()),
        Some(factors) => scale_columns(data, &factors),
    }
}

/// Multiplies column `k` by `factors[k]`.
pub fn scale_columns(data: &Dataset, factors: &[f64]) -> Result<Dataset> {
    data.require_complete()?;
    if factors.len() != data.n_cols {
        return Err(Error::DimensionMismatch {
            expected: data.n_cols,
            got: factors.len(),
        });
    }
    let values: Vec<f64> = data
        .values
        .chunks_exact(data.n_cols)
        .flat_map(|row| row.iter().zip(factors).map(|(x, f)| x * f))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "scaling overflows in row {}, column `{}`",
            i / data.n_cols + 1,
            data.column_names[i % data.n_cols]
        )));
    }
    Ok(data.derive(data.n_cols, values, data.column_names.clone()))
}

/// Appends rows as CSV lines; used for small ad-hoc tables.
pub(crate) fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = header.join(",");
    buf.push('\n');
    for row in rows {
        buf.push_str(&row.join(","));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}
