//! Heatmap-ready row ordering and within-cluster uniformness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hclust::{Dendrogram, HclustError};
use crate::matrix::ProportionMatrix;

pub const HEATMAP_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error(transparent)]
    Cut(#[from] HclustError),
    #[error("{labels} cluster labels for {rows} rows")]
    LengthMismatch { labels: usize, rows: usize },
    #[error("dendrogram has {leaves} leaves, matrix has {rows} rows")]
    LeafMismatch { leaves: usize, rows: usize },
}

/// Row-ordered proportions with cluster blocks for one cut of the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapBundle {
    pub schema_version: u32,
    /// Original population index of each displayed row.
    pub order: Vec<usize>,
    pub row_labels: Vec<String>,
    pub categories: Vec<String>,
    /// Proportions in display order, one inner vector per row.
    pub grid: Vec<Vec<f64>>,
    pub cut: usize,
    /// Half-open `[start, end)` display-row ranges, one per cluster.
    pub blocks: Vec<(usize, usize)>,
    /// Per-column `(min, max)` for color scaling.
    pub column_bounds: Vec<(f64, f64)>,
    pub newick: String,
    pub merges: String,
}

pub fn heatmap_export(pm: &ProportionMatrix, d: &Dendrogram, g: usize) -> Result<HeatmapBundle, ReportError> {
    let k = pm.n_populations();
    if d.n_leaves() != k {
        return Err(ReportError::LeafMismatch { leaves: d.n_leaves(), rows: k });
    }
    let labels = d.cut(g)?;
    let order = d.leaf_order();
    let mut blocks = Vec::with_capacity(g);
    let mut start = 0;
    for row in 1..=k {
        if row == k || labels[order[row]] != labels[order[row - 1]] {
            blocks.push((start, row));
            start = row;
        }
    }
    let column_bounds = (0..pm.n_categories())
        .map(|m| {
            (0..k).map(|r| pm.get(r, m)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        })
        .collect();
    let populations = &pm.labels().populations;
    Ok(HeatmapBundle {
        schema_version: HEATMAP_SCHEMA_VERSION,
        row_labels: order.iter().map(|&r| populations[r].clone()).collect(),
        categories: pm.labels().categories.clone(),
        grid: order.iter().map(|&r| pm.row(r).to_vec()).collect(),
        cut: g,
        blocks,
        column_bounds,
        newick: d.to_newick(populations),
        merges: d.to_text(),
        order,
    })
}

impl HeatmapBundle {
    /// Ordered matrix as CSV: `population,<categories...>` in display order.
    pub fn ordered_csv(&self) -> String {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let header = std::iter::once("population").chain(self.categories.iter().map(String::as_str));
        writer.write_record(header).expect("in-memory write");
        for (label, row) in self.row_labels.iter().zip(&self.grid) {
            let cells = std::iter::once(label.clone()).chain(row.iter().map(f64::to_string));
            writer.write_record(cells).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 labels")
    }

    /// One `start end` line per block.
    pub fn boundaries_text(&self) -> String {
        self.blocks.iter().map(|(s, e)| format!("{s} {e}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uniformness {
    pub per_column: Vec<f64>,
    pub total: f64,
}

/// Within-cluster sum of squared deviations from the cluster mean, per
/// column and in total. Lower means more uniform blocks.
///
/// Clusters are visited in order of their first member's row index and
/// members in row order, so the result is bit-identical under relabeling.
pub fn uniformness(pm: &ProportionMatrix, labels: &[usize]) -> Result<Uniformness, ReportError> {
    let k = pm.n_populations();
    if labels.len() != k {
        return Err(ReportError::LengthMismatch { labels: labels.len(), rows: k });
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (row, &label) in labels.iter().enumerate() {
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, members)) => members.push(row),
            None => groups.push((label, vec![row])),
        }
    }
    let per_column: Vec<f64> = (0..pm.n_categories())
        .map(|m| {
            groups
                .iter()
                .map(|(_, members)| {
                    let mean = members.iter().map(|&r| pm.get(r, m)).sum::<f64>() / members.len() as f64;
                    members.iter().map(|&r| (pm.get(r, m) - mean).powi(2)).sum::<f64>()
                })
                .sum()
        })
        .collect();
    let total = per_column.iter().sum();
    Ok(Uniformness { per_column, total })
}
