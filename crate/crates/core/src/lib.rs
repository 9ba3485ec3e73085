//! Categorical exploratory data analysis for extreme-K sample problems.
//!
//! A K×M table of category counts (one row per population) is turned into
//! a binary clustering tree over the populations. Row-wise multinomial
//! resampling produces an ensemble of mimicked tables and trees, and any
//! pattern read off the observed tree (a group standing alone as a branch,
//! or two groups kept apart) is scored by how often it recurs across the
//! ensemble.
//!
//! The pipeline, bottom-up:
//!
//! * [`matrix`]: count ingestion, proportions, multinomial moments.
//! * [`distance`]: plain Euclidean `d0` and variance-weighted `dstar`.
//! * [`hclust`]: Ward.D2 agglomeration into a [`hclust::Dendrogram`].
//! * [`codes`]: root-to-leaf binary codes and branch queries.
//! * [`mimicry`]: seeded, parallel-invariant mimicry ensembles.
//! * [`reliability`]: recurrence rates of group and separation patterns.
//! * [`report`]: heatmap bundles and within-cluster uniformness.
//! * [`pipeline`]: the on-disk artifacts shared by the CLI and the server.
//! * [`synth`]: synthetic generators used by demos and tests.

pub mod codes;
pub mod distance;
pub mod hclust;
pub mod matrix;
pub mod mimicry;
pub mod pipeline;
pub mod reliability;
pub mod report;
pub mod synth;

pub use codes::{Branch, Code, CodeTable};
pub use distance::{DistanceMatrix, Measure};
pub use hclust::{Dendrogram, Merge};
pub use matrix::{BlockedCountMatrix, CountMatrix, ProportionMatrix, VarianceMatrix, VarianceSource};
pub use mimicry::{EnsembleConfig, MimicryEnsemble, Scheme};
pub use reliability::{PatternQuery, ReliabilityReport};
pub use report::HeatmapBundle;
