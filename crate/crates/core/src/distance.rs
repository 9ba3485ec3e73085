//! Dissimilarities between population histograms.
//!
//! `d0` is the plain Euclidean distance. `dstar` divides each squared
//! component difference by the summed mimicking variances of the two cells
//! and is kept in that squared form (no outer square root).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{ProportionMatrix, VarianceMatrix};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DistanceError {
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("variance floor must be positive, got {0}")]
    NonPositiveFloor(f64),
    #[error("dstar needs a variance matrix")]
    MissingVariances,
    #[error("variance matrix is {found_rows}x{found_cols}, proportions are {rows}x{cols}")]
    VarianceShape { rows: usize, cols: usize, found_rows: usize, found_cols: usize },
    #[error("distance matrix must be square with {k} labels, got {found} values")]
    NotSquare { k: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    D0,
    Dstar,
}

impl Measure {
    /// Whether matrix entries are already on the squared scale.
    pub fn is_squared(self) -> bool {
        matches!(self, Measure::Dstar)
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::D0 => "d0",
            Measure::Dstar => "dstar",
        })
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "d0" => Ok(Measure::D0),
            "dstar" => Ok(Measure::Dstar),
            other => Err(format!("unknown measure {other:?} (expected d0 or dstar)")),
        }
    }
}

pub fn euclid(p: &[f64], q: &[f64]) -> Result<f64, DistanceError> {
    if p.len() != q.len() {
        return Err(DistanceError::LengthMismatch { left: p.len(), right: q.len() });
    }
    Ok(squared_diff(p, q).sqrt())
}

fn squared_diff(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `Σ_m (p_m − q_m)² / max(var_p[m] + var_q[m], floor)`.
pub fn weighted(p: &[f64], q: &[f64], var_p: &[f64], var_q: &[f64], floor: f64) -> Result<f64, DistanceError> {
    if floor.is_nan() || floor <= 0.0 {
        return Err(DistanceError::NonPositiveFloor(floor));
    }
    for other in [q, var_p, var_q] {
        if other.len() != p.len() {
            return Err(DistanceError::LengthMismatch { left: p.len(), right: other.len() });
        }
    }
    Ok(weighted_unchecked(p, q, var_p, var_q, floor))
}

#[inline]
fn weighted_unchecked(p: &[f64], q: &[f64], var_p: &[f64], var_q: &[f64], floor: f64) -> f64 {
    let mut total = 0.0;
    for m in 0..p.len() {
        let d = p[m] - q[m];
        if d != 0.0 {
            total += d * d / (var_p[m] + var_q[m]).max(floor);
        }
    }
    total
}

/// Symmetric K×K matrix of pairwise dissimilarities.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    values: Vec<f64>,
    measure: Measure,
    variance_floor: Option<f64>,
}

impl DistanceMatrix {
    /// Wraps raw row-major values. Only the shape is checked here;
    /// clustering validates symmetry and sign.
    pub fn from_values(
        labels: Vec<String>,
        values: Vec<f64>,
        measure: Measure,
        variance_floor: Option<f64>,
    ) -> Result<Self, DistanceError> {
        let k = labels.len();
        if values.len() != k * k {
            return Err(DistanceError::NotSquare { k, found: values.len() });
        }
        Ok(Self { labels, values, measure, variance_floor })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn variance_floor(&self) -> Option<f64> {
        self.variance_floor
    }

    /// Square CSV with labels as header row and first column.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let header = std::iter::once(String::new()).chain(self.labels.iter().cloned());
        writer.write_record(header).expect("in-memory write");
        for (i, label) in self.labels.iter().enumerate() {
            let row = (0..self.len()).map(|j| self.get(i, j).to_string());
            writer.write_record(std::iter::once(label.clone()).chain(row)).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 labels")
    }

    /// Sidecar metadata recorded next to the CSV export.
    pub fn metadata(&self) -> String {
        let floor = self.variance_floor.map_or_else(|| "none".to_string(), |f| f.to_string());
        format!(
            "measure = \"{}\"\nvariance_floor = \"{}\"\nsquared = {}\n",
            self.measure,
            floor,
            self.measure.is_squared()
        )
    }
}

/// Pairwise distances between the rows of `pm`.
///
/// `vars` is required for `dstar` and ignored for `d0`. The variances need
/// not come from `pm` itself: mimicked matrices are compared under the
/// observed matrix's variances.
pub fn distance_matrix(
    pm: &ProportionMatrix,
    measure: Measure,
    vars: Option<&VarianceMatrix>,
    floor: f64,
) -> Result<DistanceMatrix, DistanceError> {
    let k = pm.n_populations();
    let vars = match measure {
        Measure::D0 => None,
        Measure::Dstar => {
            if floor.is_nan() || floor <= 0.0 {
                return Err(DistanceError::NonPositiveFloor(floor));
            }
            let v = vars.ok_or(DistanceError::MissingVariances)?;
            if v.n_populations() != k || v.n_categories() != pm.n_categories() {
                return Err(DistanceError::VarianceShape {
                    rows: k,
                    cols: pm.n_categories(),
                    found_rows: v.n_populations(),
                    found_cols: v.n_categories(),
                });
            }
            Some(v)
        }
    };
    let upper: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|i| {
            (i + 1..k)
                .map(|j| match vars {
                    None => squared_diff(pm.row(i), pm.row(j)).sqrt(),
                    Some(v) => weighted_unchecked(pm.row(i), pm.row(j), v.row(i), v.row(j), floor),
                })
                .collect()
        })
        .collect();
    let mut values = vec![0.0; k * k];
    for (i, row) in upper.iter().enumerate() {
        for (offset, &d) in row.iter().enumerate() {
            let j = i + 1 + offset;
            values[i * k + j] = d;
            values[j * k + i] = d;
        }
    }
    Ok(DistanceMatrix { labels: pm.labels().populations.clone(), values, measure, variance_floor: vars.map(|_| floor) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{theoretical_variance, to_proportions, CountMatrix, Labels, VarianceSource};

    fn pm(k: usize, m: usize, counts: Vec<u64>) -> ProportionMatrix {
        let labels =
            Labels::new((0..k).map(|i| format!("p{i}")).collect(), (0..m).map(|i| format!("c{i}")).collect()).unwrap();
        to_proportions(&CountMatrix::new(labels, counts).unwrap())
    }

    #[test]
    fn euclid_examples() {
        assert!((euclid(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(euclid(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let d = euclid(&[0.5, 0.5, 0.0], &[0.25, 0.25, 0.5]).unwrap();
        assert!((d - 0.375f64.sqrt()).abs() < 1e-15);
        assert!((d - 0.61237).abs() < 1e-5);
        assert!(matches!(euclid(&[1.0], &[1.0, 0.0]), Err(DistanceError::LengthMismatch { .. })));
    }

    #[test]
    fn weighted_examples() {
        let v = [0.1, 0.2];
        assert_eq!(weighted(&[0.4, 0.6], &[0.4, 0.6], &v, &v, 1e-9).unwrap(), 0.0);
        let d = weighted(&[0.6, 0.4], &[0.5, 0.4], &[0.002, 0.01], &[0.003, 0.01], 1e-9).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        let d = weighted(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], 1e-9).unwrap();
        assert!((d - 2e9).abs() < 1e-3);
        assert_eq!(weighted(&[1.0], &[0.0], &[0.0], &[0.0], 0.0), Err(DistanceError::NonPositiveFloor(0.0)));
    }

    #[test]
    fn constant_weights_reduce_to_scaled_euclid() {
        let p = [0.1, 0.3, 0.6];
        let q = [0.2, 0.2, 0.6];
        let var_p = [0.01, 0.02, 0.005];
        let var_q = [0.02, 0.01, 0.025];
        let w = weighted(&p, &q, &var_p, &var_q, 1e-9).unwrap();
        let e = euclid(&p, &q).unwrap();
        assert!((w - e * e / 0.03).abs() < 1e-12 * w);
    }

    #[test]
    fn constant_weights_preserve_pair_order() {
        let pm = pm(5, 3, vec![50, 30, 20, 45, 35, 20, 10, 20, 70, 12, 18, 70, 33, 33, 34]);
        let vars = VarianceMatrix::new(3, vec![0.004; 15], VarianceSource::Theoretical).unwrap();
        let d0 = distance_matrix(&pm, Measure::D0, None, DEFAULT_VARIANCE_FLOOR).unwrap();
        let ds = distance_matrix(&pm, Measure::Dstar, Some(&vars), DEFAULT_VARIANCE_FLOOR).unwrap();
        let pairs: Vec<(usize, usize)> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).collect();
        let rank = |dm: &DistanceMatrix| {
            let mut p = pairs.clone();
            p.sort_by(|a, b| dm.get(a.0, a.1).total_cmp(&dm.get(b.0, b.1)));
            p
        };
        assert_eq!(rank(&d0), rank(&ds));
        for &(i, j) in &pairs {
            let scaled = d0.get(i, j).powi(2) / 0.008;
            assert!((ds.get(i, j) - scaled).abs() <= 1e-12 * scaled);
        }
    }

    #[test]
    fn matrix_matches_pairwise_calls() {
        let pm = pm(3, 3, vec![5, 3, 2, 1, 1, 8, 4, 4, 2]);
        let dm = distance_matrix(&pm, Measure::D0, None, DEFAULT_VARIANCE_FLOOR).unwrap();
        for i in 0..3 {
            assert_eq!(dm.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(dm.get(i, j), euclid(pm.row(i), pm.row(j)).unwrap());
                assert_eq!(dm.get(i, j), dm.get(j, i));
            }
        }
        let vars = theoretical_variance(&pm);
        let ds = distance_matrix(&pm, Measure::Dstar, Some(&vars), 1e-9).unwrap();
        let expected = weighted(pm.row(0), pm.row(2), vars.row(0), vars.row(2), 1e-9).unwrap();
        assert_eq!(ds.get(0, 2), expected);
        assert_eq!(ds.variance_floor(), Some(1e-9));
        assert_eq!(dm.variance_floor(), None);
    }

    #[test]
    fn identical_rows_give_zero_matrix() {
        let pm = pm(2, 2, vec![3, 1, 6, 2]);
        let vars = theoretical_variance(&pm);
        for (measure, v) in [(Measure::D0, None), (Measure::Dstar, Some(&vars))] {
            let dm = distance_matrix(&pm, measure, v, 1e-9).unwrap();
            assert!(dm.values().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn dstar_requires_variances() {
        let pm = pm(2, 2, vec![3, 1, 6, 2]);
        assert_eq!(distance_matrix(&pm, Measure::Dstar, None, 1e-9).unwrap_err(), DistanceError::MissingVariances);
    }

    #[test]
    fn csv_export_has_labels_both_ways() {
        let pm = pm(2, 2, vec![1, 1, 1, 0]);
        let dm = distance_matrix(&pm, Measure::D0, None, 1e-9).unwrap();
        let csv = dm.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(",p0,p1"));
        assert!(lines.next().unwrap().starts_with("p0,0,"));
        assert!(dm.metadata().contains("measure = \"d0\""));
    }
}
