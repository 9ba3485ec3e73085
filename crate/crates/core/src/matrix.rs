//! Category-count tables, their row proportions, and multinomial moments.
//!
//! Rows are populations, columns are categories. Row order as read from the
//! input is the canonical population index used everywhere downstream,
//! including tie-breaking in clustering and child orientation in codes.

use std::collections::HashMap;
use std::io::Read;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Replicates per reduction chunk when accumulating squared deviations.
/// Fixed so that the summation order never depends on the thread count.
pub(crate) const REDUCTION_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("input is empty")]
    EmptyInput,
    #[error("first header cell must be \"population\", found {found:?}")]
    BadHeader { found: String },
    #[error("second header cell must be \"block\" in blocked layout, found {found:?}")]
    BadBlockedHeader { found: String },
    #[error("input uses the blocked layout (population,block,...); load it as blocked counts")]
    BlockedLayout,
    #[error("need at least 2 categories, found {found}")]
    TooFewCategories { found: usize },
    #[error("need at least 2 populations, found {found}")]
    TooFewPopulations { found: usize },
    #[error("duplicate category name {name:?}")]
    DuplicateCategory { name: String },
    #[error("line {line}: duplicate population label {label:?}")]
    DuplicatePopulation { line: u64, label: String },
    #[error("line {line}: population {population:?} has block {block:?} more than once")]
    DuplicateBlock { line: u64, population: String, block: String },
    #[error("line {line}: empty label")]
    EmptyLabel { line: u64 },
    #[error("line {line}: expected {expected} cells, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
    #[error("line {line}, column {column:?}: negative count {value}")]
    NegativeCount { line: u64, column: String, value: String },
    #[error("line {line}, column {column:?}: {value:?} is not a nonnegative integer count")]
    NonIntegerCount { line: u64, column: String, value: String },
    #[error("zero-total population {label:?}")]
    ZeroTotal { label: String },
    #[error("counts grid has {found} cells, expected {expected}")]
    GridSize { expected: usize, found: usize },
    #[error("variances must be finite and nonnegative, found {0}")]
    InvalidVariance(f64),
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, found {found_rows}x{found_cols}")]
    ShapeMismatch { expected_rows: usize, expected_cols: usize, found_rows: usize, found_cols: usize },
    #[error("covariance needs two distinct categories; use the variance for m == m'")]
    SameCategory,
    #[error("index out of range")]
    IndexOutOfRange,
    #[error("empirical variance needs at least 2 replicates, found {found}")]
    TooFewReplicates { found: usize },
}

/// Population and category labels shared by a table and everything derived
/// from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub populations: Vec<String>,
    pub categories: Vec<String>,
}

impl Labels {
    pub fn new(populations: Vec<String>, categories: Vec<String>) -> Result<Self, MatrixError> {
        if populations.len() < 2 {
            return Err(MatrixError::TooFewPopulations { found: populations.len() });
        }
        if categories.len() < 2 {
            return Err(MatrixError::TooFewCategories { found: categories.len() });
        }
        let mut seen = HashMap::new();
        for name in &categories {
            if name.is_empty() {
                return Err(MatrixError::EmptyLabel { line: 1 });
            }
            if seen.insert(name.as_str(), ()).is_some() {
                return Err(MatrixError::DuplicateCategory { name: name.clone() });
            }
        }
        let mut seen = HashMap::new();
        for (i, label) in populations.iter().enumerate() {
            let line = i as u64 + 2;
            if label.is_empty() {
                return Err(MatrixError::EmptyLabel { line });
            }
            if seen.insert(label.as_str(), ()).is_some() {
                return Err(MatrixError::DuplicatePopulation { line, label: label.clone() });
            }
        }
        Ok(Self { populations, categories })
    }

    pub fn population_index(&self, label: &str) -> Option<usize> {
        self.populations.iter().position(|p| p == label)
    }
}

/// K×M nonnegative integer counts with every row total at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    labels: Arc<Labels>,
    counts: Vec<u64>,
    row_sums: Vec<u64>,
}

impl CountMatrix {
    /// Builds a table from row-major counts.
    pub fn new(labels: Labels, counts: Vec<u64>) -> Result<Self, MatrixError> {
        Self::with_labels(Arc::new(labels), counts)
    }

    pub(crate) fn with_labels(labels: Arc<Labels>, counts: Vec<u64>) -> Result<Self, MatrixError> {
        let (k, m) = (labels.populations.len(), labels.categories.len());
        if counts.len() != k * m {
            return Err(MatrixError::GridSize { expected: k * m, found: counts.len() });
        }
        let row_sums: Vec<u64> = counts.chunks(m).map(|r| r.iter().sum()).collect();
        if let Some(k) = row_sums.iter().position(|&n| n == 0) {
            return Err(MatrixError::ZeroTotal { label: labels.populations[k].clone() });
        }
        Ok(Self { labels, counts, row_sums })
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub(crate) fn shared_labels(&self) -> &Arc<Labels> {
        &self.labels
    }

    pub fn population_ids(&self) -> &[String] {
        &self.labels.populations
    }

    pub fn category_names(&self) -> &[String] {
        &self.labels.categories
    }

    pub fn n_populations(&self) -> usize {
        self.row_sums.len()
    }

    pub fn n_categories(&self) -> usize {
        self.labels.categories.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row(&self, k: usize) -> &[u64] {
        let m = self.n_categories();
        &self.counts[k * m..(k + 1) * m]
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }
}

/// Row-normalized counts; row `k` is the histogram of population `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionMatrix {
    labels: Arc<Labels>,
    props: Vec<f64>,
    row_sums: Vec<u64>,
}

impl ProportionMatrix {
    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn n_populations(&self) -> usize {
        self.row_sums.len()
    }

    pub fn n_categories(&self) -> usize {
        self.labels.categories.len()
    }

    pub fn props(&self) -> &[f64] {
        &self.props
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let m = self.n_categories();
        &self.props[k * m..(k + 1) * m]
    }

    pub fn get(&self, k: usize, m: usize) -> f64 {
        self.props[k * self.n_categories() + m]
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }
}

/// Where a [`VarianceMatrix`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceSource {
    Theoretical,
    Empirical,
}

impl std::fmt::Display for VarianceSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VarianceSource::Theoretical => "theoretical",
            VarianceSource::Empirical => "empirical",
        })
    }
}

impl std::str::FromStr for VarianceSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "theoretical" => Ok(Self::Theoretical),
            "empirical" => Ok(Self::Empirical),
            other => Err(format!("unknown variance source {other:?}")),
        }
    }
}

/// Per-cell variance of a mimicked proportion.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMatrix {
    n_categories: usize,
    vars: Vec<f64>,
    source: VarianceSource,
}

impl VarianceMatrix {
    /// Wraps externally computed variances, row-major over `n_categories` columns.
    pub fn new(n_categories: usize, vars: Vec<f64>, source: VarianceSource) -> Result<Self, MatrixError> {
        if n_categories < 2 {
            return Err(MatrixError::TooFewCategories { found: n_categories });
        }
        if !vars.len().is_multiple_of(n_categories) {
            return Err(MatrixError::GridSize {
                expected: vars.len().next_multiple_of(n_categories),
                found: vars.len(),
            });
        }
        if let Some(v) = vars.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(MatrixError::InvalidVariance(*v));
        }
        Ok(Self { n_categories, vars, source })
    }

    pub fn source(&self) -> VarianceSource {
        self.source
    }

    pub fn vars(&self) -> &[f64] {
        &self.vars
    }

    pub fn n_populations(&self) -> usize {
        self.vars.len() / self.n_categories
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.vars[k * self.n_categories..(k + 1) * self.n_categories]
    }

    pub fn get(&self, k: usize, m: usize) -> f64 {
        self.vars[k * self.n_categories + m]
    }
}

/// Counts split into T blocks (e.g. observation periods) per population.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockedCountMatrix {
    labels: Arc<Labels>,
    block_ids: Vec<String>,
    counts: Vec<u64>,
}

impl BlockedCountMatrix {
    /// `counts` is laid out population-major, then block, then category.
    pub fn new(labels: Labels, block_ids: Vec<String>, counts: Vec<u64>) -> Result<Self, MatrixError> {
        let (k, m, t) = (labels.populations.len(), labels.categories.len(), block_ids.len());
        if counts.len() != k * t * m {
            return Err(MatrixError::GridSize { expected: k * t * m, found: counts.len() });
        }
        let blocked = Self { labels: Arc::new(labels), block_ids, counts };
        // The aggregate must itself be a valid table.
        blocked.aggregate()?;
        Ok(blocked)
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub(crate) fn shared_labels(&self) -> &Arc<Labels> {
        &self.labels
    }

    pub fn block_ids(&self) -> &[String] {
        &self.block_ids
    }

    pub fn n_populations(&self) -> usize {
        self.labels.populations.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.block_ids.len()
    }

    pub fn n_categories(&self) -> usize {
        self.labels.categories.len()
    }

    pub fn block(&self, k: usize, t: usize) -> &[u64] {
        let m = self.n_categories();
        let start = (k * self.n_blocks() + t) * m;
        &self.counts[start..start + m]
    }

    /// Sums the blocks of each population into one table.
    pub fn aggregate(&self) -> Result<CountMatrix, MatrixError> {
        let (k, t, m) = (self.n_populations(), self.n_blocks(), self.n_categories());
        let mut counts = vec![0u64; k * m];
        for (row, out) in counts.chunks_mut(m).enumerate() {
            for b in 0..t {
                for (o, c) in out.iter_mut().zip(self.block(row, b)) {
                    *o += c;
                }
            }
        }
        CountMatrix::with_labels(Arc::clone(&self.labels), counts)
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input)
}

fn parse_count(cell: &str, line: u64, column: &str) -> Result<u64, MatrixError> {
    if let Ok(v) = cell.parse::<u64>() {
        return Ok(v);
    }
    let value = cell.to_string();
    let column = column.to_string();
    match cell.parse::<i64>() {
        Ok(v) if v < 0 => Err(MatrixError::NegativeCount { line, column, value }),
        _ if cell.starts_with('-') && cell.parse::<f64>().is_ok_and(|v| v < 0.0) => {
            Err(MatrixError::NegativeCount { line, column, value })
        }
        _ => Err(MatrixError::NonIntegerCount { line, column, value }),
    }
}

fn record_line(record: &csv::StringRecord, fallback: u64) -> u64 {
    record.position().map_or(fallback, |p| p.line())
}

/// Parses the counts CSV: header `population,<categories...>`, then one
/// row per population with a label and M integer cells.
pub fn load_counts<R: Read>(input: R) -> Result<CountMatrix, MatrixError> {
    let mut reader = csv_reader(input);
    let mut records = reader.records();
    let header = records.next().ok_or(MatrixError::EmptyInput)??;
    let first = header.get(0).unwrap_or_default();
    if first != "population" {
        return Err(MatrixError::BadHeader { found: first.to_string() });
    }
    if header.get(1) == Some("block") {
        return Err(MatrixError::BlockedLayout);
    }
    let categories: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let m = categories.len();
    if m < 2 {
        return Err(MatrixError::TooFewCategories { found: m });
    }

    let mut populations = Vec::new();
    let mut counts = Vec::new();
    let mut row_sums = Vec::new();
    for (i, record) in records.enumerate() {
        let record = record?;
        let line = record_line(&record, i as u64 + 2);
        if record.len() != m + 1 {
            return Err(MatrixError::RaggedRow { line, expected: m + 1, found: record.len() });
        }
        let label = record[0].to_string();
        let mut total = 0u64;
        for (cell, column) in record.iter().skip(1).zip(&categories) {
            let v = parse_count(cell, line, column)?;
            total += v;
            counts.push(v);
        }
        if label.is_empty() {
            return Err(MatrixError::EmptyLabel { line });
        }
        if populations.contains(&label) {
            return Err(MatrixError::DuplicatePopulation { line, label });
        }
        if total == 0 {
            return Err(MatrixError::ZeroTotal { label });
        }
        populations.push(label);
        row_sums.push(total);
    }
    let labels = Labels::new(populations, categories)?;
    Ok(CountMatrix { labels: Arc::new(labels), counts, row_sums })
}

/// Parses the blocked counts CSV: header `population,block,<categories...>`,
/// one row per (population, block) pair. Populations and blocks are indexed
/// in order of first appearance; absent pairs count as all-zero blocks.
pub fn load_blocked_counts<R: Read>(input: R) -> Result<BlockedCountMatrix, MatrixError> {
    let mut reader = csv_reader(input);
    let mut records = reader.records();
    let header = records.next().ok_or(MatrixError::EmptyInput)??;
    let first = header.get(0).unwrap_or_default();
    if first != "population" {
        return Err(MatrixError::BadHeader { found: first.to_string() });
    }
    let second = header.get(1).unwrap_or_default();
    if second != "block" {
        return Err(MatrixError::BadBlockedHeader { found: second.to_string() });
    }
    let categories: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let m = categories.len();
    if m < 2 {
        return Err(MatrixError::TooFewCategories { found: m });
    }

    let mut populations: Vec<String> = Vec::new();
    let mut pop_index: HashMap<String, usize> = HashMap::new();
    let mut blocks: Vec<String> = Vec::new();
    let mut block_index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), Vec<u64>> = HashMap::new();
    for (i, record) in records.enumerate() {
        let record = record?;
        let line = record_line(&record, i as u64 + 2);
        if record.len() != m + 2 {
            return Err(MatrixError::RaggedRow { line, expected: m + 2, found: record.len() });
        }
        let (pop, block) = (&record[0], &record[1]);
        if pop.is_empty() || block.is_empty() {
            return Err(MatrixError::EmptyLabel { line });
        }
        let row = record
            .iter()
            .skip(2)
            .zip(&categories)
            .map(|(cell, column)| parse_count(cell, line, column))
            .collect::<Result<Vec<_>, _>>()?;
        let k = *pop_index.entry(pop.to_string()).or_insert_with(|| {
            populations.push(pop.to_string());
            populations.len() - 1
        });
        let t = *block_index.entry(block.to_string()).or_insert_with(|| {
            blocks.push(block.to_string());
            blocks.len() - 1
        });
        if cells.insert((k, t), row).is_some() {
            return Err(MatrixError::DuplicateBlock { line, population: pop.to_string(), block: block.to_string() });
        }
    }
    let (k_total, t_total) = (populations.len(), blocks.len());
    let labels = Labels::new(populations, categories)?;
    let mut counts = vec![0u64; k_total * t_total * m];
    for ((k, t), row) in cells {
        let start = (k * t_total + t) * m;
        counts[start..start + m].copy_from_slice(&row);
    }
    BlockedCountMatrix::new(labels, blocks, counts)
}

/// Canonical CSV rendering of a counts table, LF line endings.
pub fn render_counts(cm: &CountMatrix) -> String {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let header = std::iter::once("population").chain(cm.category_names().iter().map(String::as_str));
    writer.write_record(header).expect("in-memory write");
    for (k, label) in cm.population_ids().iter().enumerate() {
        let cells = std::iter::once(label.clone()).chain(cm.row(k).iter().map(u64::to_string));
        writer.write_record(cells).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Canonical CSV rendering of a blocked table, one line per (population, block).
pub fn render_blocked_counts(bcm: &BlockedCountMatrix) -> String {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let header = ["population", "block"].into_iter().chain(bcm.labels().categories.iter().map(String::as_str));
    writer.write_record(header).expect("in-memory write");
    for (k, label) in bcm.labels().populations.iter().enumerate() {
        for (t, block) in bcm.block_ids().iter().enumerate() {
            let cells = [label.clone(), block.clone()].into_iter().chain(bcm.block(k, t).iter().map(u64::to_string));
            writer.write_record(cells).expect("in-memory write");
        }
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn to_proportions(cm: &CountMatrix) -> ProportionMatrix {
    let m = cm.n_categories();
    let props = cm
        .counts
        .chunks(m)
        .zip(&cm.row_sums)
        .flat_map(|(row, &n)| row.iter().map(move |&c| c as f64 / n as f64))
        .collect();
    ProportionMatrix { labels: Arc::clone(&cm.labels), props, row_sums: cm.row_sums.clone() }
}

/// `p(1-p)/N_k` per cell.
pub fn theoretical_variance(pm: &ProportionMatrix) -> VarianceMatrix {
    let m = pm.n_categories();
    let vars = pm
        .props
        .chunks(m)
        .zip(&pm.row_sums)
        .flat_map(|(row, &n)| row.iter().map(move |&p| p * (1.0 - p) / n as f64))
        .collect();
    VarianceMatrix { n_categories: m, vars, source: VarianceSource::Theoretical }
}

/// `-p_m p_m' / N_k` for two distinct categories of row `k`.
pub fn theoretical_covariance(pm: &ProportionMatrix, k: usize, m: usize, m2: usize) -> Result<f64, MatrixError> {
    if m == m2 {
        return Err(MatrixError::SameCategory);
    }
    if k >= pm.n_populations() || m >= pm.n_categories() || m2 >= pm.n_categories() {
        return Err(MatrixError::IndexOutOfRange);
    }
    Ok(-(pm.get(k, m) * pm.get(k, m2)) / pm.row_sums[k] as f64)
}

fn check_shape(observed: &ProportionMatrix, other: &ProportionMatrix) -> Result<(), MatrixError> {
    if observed.n_populations() != other.n_populations() || observed.n_categories() != other.n_categories() {
        return Err(MatrixError::ShapeMismatch {
            expected_rows: observed.n_populations(),
            expected_cols: observed.n_categories(),
            found_rows: other.n_populations(),
            found_cols: other.n_categories(),
        });
    }
    Ok(())
}

/// `(1/B) Σ_b (p°_km − p^b_km)²` over the given replicates.
pub fn empirical_variance(
    observed: &ProportionMatrix,
    replicates: &[ProportionMatrix],
) -> Result<VarianceMatrix, MatrixError> {
    for r in replicates {
        check_shape(observed, r)?;
    }
    mean_squared_deviation(observed, replicates.len(), |b, acc| add_squared_deviation(observed, &replicates[b], acc))
}

pub(crate) fn add_squared_deviation(observed: &ProportionMatrix, replicate: &ProportionMatrix, acc: &mut [f64]) {
    for ((a, &o), &r) in acc.iter_mut().zip(&observed.props).zip(&replicate.props) {
        let d = o - r;
        *a += d * d;
    }
}

/// Accumulates `add(b, acc)` for `b in 0..replicates` in fixed-size chunks,
/// combining chunk sums in chunk order, then divides by the replicate count.
pub(crate) fn mean_squared_deviation<F>(
    observed: &ProportionMatrix,
    replicates: usize,
    add: F,
) -> Result<VarianceMatrix, MatrixError>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    if replicates < 2 {
        return Err(MatrixError::TooFewReplicates { found: replicates });
    }
    let cells = observed.props.len();
    let n_chunks = replicates.div_ceil(REDUCTION_CHUNK);
    let partial: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; cells];
            let end = ((c + 1) * REDUCTION_CHUNK).min(replicates);
            for b in c * REDUCTION_CHUNK..end {
                add(b, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; cells];
    for chunk in &partial {
        for (t, v) in total.iter_mut().zip(chunk) {
            *t += v;
        }
    }
    let scale = replicates as f64;
    for t in &mut total {
        *t /= scale;
    }
    Ok(VarianceMatrix { n_categories: observed.n_categories(), vars: total, source: VarianceSource::Empirical })
}
