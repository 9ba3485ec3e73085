//! Mimicry ensembles: row-wise multinomial resampling of the observed table.
//!
//! Replicate `b` draws from its own ChaCha8 stream (`master_seed`, stream
//! `b`), so an ensemble is a pure function of its inputs regardless of how
//! replicates are scheduled across threads.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::{encode, CodeTable};
use crate::distance::{distance_matrix, DistanceError, Measure, DEFAULT_VARIANCE_FLOOR};
use crate::hclust::{ward_d2, Dendrogram, HclustError};
use crate::matrix::{
    self, add_squared_deviation, mean_squared_deviation, theoretical_variance, to_proportions, BlockedCountMatrix,
    CountMatrix, Labels, MatrixError, ProportionMatrix, VarianceMatrix, VarianceSource,
};

#[derive(Debug, Error)]
pub enum MimicryError {
    #[error("probabilities must be nonnegative and sum to 1 (sum = {sum})")]
    InvalidProbabilities { sum: f64 },
    #[error("number of trials must be at least 1")]
    ZeroTrials,
    #[error("the blocked scheme needs blocked counts")]
    SchemeMismatch,
    #[error("ensemble size must be at least 1")]
    NoReplicates,
    #[error("replicate matrices were not retained")]
    NotRetained,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Hclust(#[from] HclustError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Homogeneous,
    Blocked,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Homogeneous => "homogeneous",
            Scheme::Blocked => "blocked",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "homogeneous" => Ok(Scheme::Homogeneous),
            "blocked" => Ok(Scheme::Blocked),
            other => Err(format!("unknown scheme {other:?}")),
        }
    }
}

/// Which dissimilarity builds the trees, and with which variance weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    pub measure: Measure,
    pub variance: VarianceSource,
    pub floor: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self { measure: Measure::Dstar, variance: VarianceSource::Theoretical, floor: DEFAULT_VARIANCE_FLOOR }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub scheme: Scheme,
    pub replicates: usize,
    pub master_seed: u64,
    pub measure: MeasureConfig,
    /// Keep every replicate's proportion matrix (memory grows with B·K·M).
    #[serde(skip)]
    pub retain_matrices: bool,
}

/// The observed data, with or without its block decomposition.
#[derive(Debug, Clone)]
pub enum SourceData {
    Plain(CountMatrix),
    Blocked(BlockedCountMatrix),
}

impl SourceData {
    pub fn observed(&self) -> Result<CountMatrix, MatrixError> {
        match self {
            SourceData::Plain(cm) => Ok(cm.clone()),
            SourceData::Blocked(bcm) => bcm.aggregate(),
        }
    }
}

/// The stream used for replicate `b`.
pub fn replicate_rng(master_seed: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(b);
    rng
}

/// Sequential conditional binomials over nonnegative weights: category `m`
/// receives `Binomial(remaining, w_m / Σ_{j≥m} w_j)`.
fn sample_weighted<R: Rng + ?Sized>(n: u64, weights: &[f64], rng: &mut R, out: &mut [u64]) {
    let mut suffix = vec![0.0; weights.len() + 1];
    for m in (0..weights.len()).rev() {
        suffix[m] = suffix[m + 1] + weights[m];
    }
    let mut remaining = n;
    for (m, slot) in out.iter_mut().enumerate() {
        let w = weights[m];
        let drawn = if remaining == 0 || w <= 0.0 {
            0
        } else {
            let p = w / suffix[m];
            if p >= 1.0 {
                remaining
            } else {
                Binomial::new(remaining, p).expect("p in (0, 1)").sample(rng)
            }
        };
        *slot = drawn;
        remaining -= drawn;
    }
}

/// One draw from `MN(n, probs)`.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Result<Vec<u64>, MimicryError> {
    if n == 0 {
        return Err(MimicryError::ZeroTrials);
    }
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| p.is_nan() || *p < 0.0) || (sum - 1.0).abs() > 1e-12 {
        return Err(MimicryError::InvalidProbabilities { sum });
    }
    let mut out = vec![0; probs.len()];
    sample_weighted(n, probs, rng, &mut out);
    Ok(out)
}

fn sample_counts_row<R: Rng + ?Sized>(row: &[u64], rng: &mut R, out: &mut [u64]) {
    let n: u64 = row.iter().sum();
    let weights: Vec<f64> = row.iter().map(|&c| c as f64).collect();
    sample_weighted(n, &weights, rng, out);
}

/// Replaces every row by an independent `MN(N_k, P°_k)` draw.
pub fn mimic_homogeneous<R: Rng + ?Sized>(cm: &CountMatrix, rng: &mut R) -> CountMatrix {
    let m = cm.n_categories();
    let mut counts = vec![0u64; cm.counts().len()];
    for (k, out) in counts.chunks_mut(m).enumerate() {
        sample_counts_row(cm.row(k), rng, out);
    }
    CountMatrix::with_labels(Arc::clone(cm.shared_labels()), counts).expect("row totals are preserved")
}

/// Draws each (population, block) cell group from its own multinomial and
/// sums the blocks.
pub fn mimic_blocked<R: Rng + ?Sized>(bcm: &BlockedCountMatrix, rng: &mut R) -> CountMatrix {
    let (k_total, t_total, m) = (bcm.n_populations(), bcm.n_blocks(), bcm.n_categories());
    let mut counts = vec![0u64; k_total * m];
    let mut block = vec![0u64; m];
    for (k, out) in counts.chunks_mut(m).enumerate() {
        for t in 0..t_total {
            let source = bcm.block(k, t);
            if source.iter().all(|&c| c == 0) {
                continue;
            }
            sample_counts_row(source, rng, &mut block);
            for (o, c) in out.iter_mut().zip(&block) {
                *o += c;
            }
        }
    }
    CountMatrix::with_labels(Arc::clone(bcm.shared_labels()), counts).expect("row totals are preserved")
}

impl EnsembleConfig {
    pub fn new(scheme: Scheme, replicates: usize, master_seed: u64, measure: MeasureConfig) -> Self {
        Self { scheme, replicates, master_seed, measure, retain_matrices: false }
    }

    fn check(&self, data: &SourceData) -> Result<(), MimicryError> {
        if self.replicates == 0 {
            return Err(MimicryError::NoReplicates);
        }
        if self.scheme == Scheme::Blocked && !matches!(data, SourceData::Blocked(_)) {
            return Err(MimicryError::SchemeMismatch);
        }
        Ok(())
    }

    /// Replicate `b` as a count table.
    pub fn mimic(&self, data: &SourceData, observed: &CountMatrix, b: usize) -> CountMatrix {
        let mut rng = replicate_rng(self.master_seed, b as u64);
        match (self.scheme, data) {
            (Scheme::Blocked, SourceData::Blocked(bcm)) => mimic_blocked(bcm, &mut rng),
            _ => mimic_homogeneous(observed, &mut rng),
        }
    }

    /// Variance weights for `dstar`, taken from the observed table: the
    /// multinomial formula, or the mean squared deviation over this
    /// ensemble's own replicates. `None` for `d0`.
    pub fn observed_variances(&self, data: &SourceData) -> Result<Option<VarianceMatrix>, MimicryError> {
        if self.measure.measure == Measure::D0 {
            return Ok(None);
        }
        self.check(data)?;
        let observed = data.observed()?;
        let pm = to_proportions(&observed);
        let vars = match self.measure.variance {
            VarianceSource::Theoretical => theoretical_variance(&pm),
            VarianceSource::Empirical => mean_squared_deviation(&pm, self.replicates, |b, acc| {
                let replicate = to_proportions(&self.mimic(data, &observed, b));
                add_squared_deviation(&pm, &replicate, acc);
            })?,
        };
        Ok(Some(vars))
    }
}

/// Distance matrix → Ward.D2 tree for one proportion matrix.
pub fn build_tree(
    pm: &ProportionMatrix,
    measure: &MeasureConfig,
    vars: Option<&VarianceMatrix>,
) -> Result<Dendrogram, MimicryError> {
    let dm = distance_matrix(pm, measure.measure, vars, measure.floor)?;
    Ok(ward_d2(&dm, measure.measure.is_squared())?)
}

/// B mimicked trees, kept as code tables.
#[derive(Debug, Clone)]
pub struct MimicryEnsemble {
    config: EnsembleConfig,
    labels: Arc<Labels>,
    trees: Vec<CodeTable>,
    matrices: Option<Vec<ProportionMatrix>>,
}

pub fn build_ensemble(data: &SourceData, config: &EnsembleConfig) -> Result<MimicryEnsemble, MimicryError> {
    config.check(data)?;
    let observed = data.observed()?;
    let vars = config.observed_variances(data)?;
    let built: Vec<(CodeTable, Option<ProportionMatrix>)> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let pm = to_proportions(&config.mimic(data, &observed, b));
            let tree = build_tree(&pm, &config.measure, vars.as_ref())?;
            Ok((encode(&tree), config.retain_matrices.then_some(pm)))
        })
        .collect::<Result<_, MimicryError>>()?;
    let (trees, matrices): (Vec<_>, Vec<_>) = built.into_iter().unzip();
    Ok(MimicryEnsemble {
        config: config.clone(),
        labels: Arc::clone(observed.shared_labels()),
        trees,
        matrices: matrices.into_iter().collect(),
    })
}

impl MimicryEnsemble {
    /// Reassembles an ensemble from stored code tables.
    pub fn from_trees(config: EnsembleConfig, labels: Labels, trees: Vec<CodeTable>) -> Result<Self, MimicryError> {
        if trees.is_empty() {
            return Err(MimicryError::NoReplicates);
        }
        Ok(Self { config, labels: Arc::new(labels), trees, matrices: None })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn trees(&self) -> &[CodeTable] {
        &self.trees
    }

    pub fn matrices(&self) -> Option<&[ProportionMatrix]> {
        self.matrices.as_deref()
    }

    pub fn empirical_variance(&self, observed: &ProportionMatrix) -> Result<VarianceMatrix, MimicryError> {
        let matrices = self.matrices.as_deref().ok_or(MimicryError::NotRetained)?;
        Ok(matrix::empirical_variance(observed, matrices)?)
    }
}
