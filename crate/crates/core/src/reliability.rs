//! Recurrence of observed tree patterns across a mimicry ensemble.
//!
//! Patterns are leaf sets, never literal bit strings, so sibling orientation
//! differences between trees cannot affect the counts.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::{CodeTable, CodesError};
use crate::matrix::Labels;
use crate::mimicry::MimicryEnsemble;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ReliabilityError {
    #[error("unknown population label {0:?}")]
    UnknownLabel(String),
    #[error("leaf index {0} out of range")]
    UnknownLeaf(usize),
    #[error("a query group is empty")]
    EmptyGroup,
    #[error("separation groups share population {0:?}")]
    Overlap(String),
    #[error("separation groups share leaf {0}")]
    OverlappingLeaf(usize),
    #[error("observed tree has {observed} leaves, ensemble trees have {ensemble}")]
    LeafCountMismatch { observed: usize, ensemble: usize },
    #[error("line {line}: {reason}")]
    QuerySyntax { line: usize, reason: String },
    #[error(transparent)]
    Codes(#[from] CodesError),
}

/// A validated pattern over population indices (sorted, distinct).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternQuery {
    Group(Vec<usize>),
    Separation(Vec<usize>, Vec<usize>),
}

fn normalize(mut set: Vec<usize>, n_leaves: usize) -> Result<Vec<usize>, ReliabilityError> {
    if set.is_empty() {
        return Err(ReliabilityError::EmptyGroup);
    }
    set.sort_unstable();
    set.dedup();
    match set.last() {
        Some(&l) if l >= n_leaves => Err(ReliabilityError::UnknownLeaf(l)),
        _ => Ok(set),
    }
}

impl PatternQuery {
    pub fn group(members: Vec<usize>, n_leaves: usize) -> Result<Self, ReliabilityError> {
        Ok(Self::Group(normalize(members, n_leaves)?))
    }

    pub fn separation(first: Vec<usize>, second: Vec<usize>, n_leaves: usize) -> Result<Self, ReliabilityError> {
        let first = normalize(first, n_leaves)?;
        let second = normalize(second, n_leaves)?;
        if let Some(&shared) = first.iter().find(|l| second.binary_search(l).is_ok()) {
            return Err(ReliabilityError::OverlappingLeaf(shared));
        }
        Ok(Self::Separation(first, second))
    }

    /// Leaves whose containing branch is reported per replicate: the group,
    /// or the union of both separation groups.
    pub fn tracked_set(&self) -> Vec<usize> {
        match self {
            PatternQuery::Group(s) => s.clone(),
            PatternQuery::Separation(a, b) => {
                let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
                u.sort_unstable();
                u
            }
        }
    }

    pub fn holds_in(&self, tree: &CodeTable) -> Result<bool, CodesError> {
        match self {
            PatternQuery::Group(s) => tree.is_standalone(s),
            PatternQuery::Separation(a, b) => tree.is_separated(a, b),
        }
    }
}

/// Label-based query as written in query files and request bodies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QuerySpec {
    Group { members: Vec<String> },
    Separation { first: Vec<String>, second: Vec<String> },
}

impl QuerySpec {
    pub fn resolve(&self, labels: &Labels) -> Result<PatternQuery, ReliabilityError> {
        let k = labels.populations.len();
        let lookup = |names: &[String]| {
            names
                .iter()
                .map(|n| labels.population_index(n).ok_or_else(|| ReliabilityError::UnknownLabel(n.clone())))
                .collect::<Result<Vec<_>, _>>()
        };
        match self {
            QuerySpec::Group { members } => PatternQuery::group(lookup(members)?, k),
            QuerySpec::Separation { first, second } => PatternQuery::separation(lookup(first)?, lookup(second)?, k)
                .map_err(|e| match e {
                    ReliabilityError::OverlappingLeaf(i) => ReliabilityError::Overlap(labels.populations[i].clone()),
                    other => other,
                }),
        }
    }

    pub fn from_query(query: &PatternQuery, labels: &Labels) -> Self {
        let names = |s: &[usize]| s.iter().map(|&i| labels.populations[i].clone()).collect();
        match query {
            PatternQuery::Group(s) => QuerySpec::Group { members: names(s) },
            PatternQuery::Separation(a, b) => QuerySpec::Separation { first: names(a), second: names(b) },
        }
    }
}

/// Parses a query file. One query per line, tab-separated:
///
/// ```text
/// group<TAB>label<TAB>label...
/// separation<TAB>label...<TAB>|<TAB>label...
/// ```
///
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_queries(text: &str) -> Result<Vec<QuerySpec>, ReliabilityError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = trimmed.split('\t').map(|f| f.trim().to_string()).filter(|f| !f.is_empty()).collect();
        let err = |reason: &str| ReliabilityError::QuerySyntax { line: line_no, reason: reason.to_string() };
        match fields[0].as_str() {
            "group" => {
                if fields.len() < 2 {
                    return Err(err("group needs at least one label"));
                }
                out.push(QuerySpec::Group { members: fields[1..].to_vec() });
            }
            "separation" => {
                let bar =
                    fields.iter().position(|f| f == "|").ok_or_else(|| err("separation needs a `|` between groups"))?;
                let (first, second) = (fields[1..bar].to_vec(), fields[bar + 1..].to_vec());
                if first.is_empty() || second.is_empty() {
                    return Err(err("both separation groups need labels"));
                }
                out.push(QuerySpec::Separation { first, second });
            }
            other => return Err(err(&format!("unknown query kind {other:?}"))),
        }
    }
    Ok(out)
}

/// Code length and size of a minimal containing branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthSize {
    pub depth: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityReport {
    pub query: PatternQuery,
    pub replicates: usize,
    pub holding: usize,
    pub recurrence_rate: f64,
    pub observed_holds: bool,
    pub observed: DepthSize,
    pub pairs: Vec<DepthSize>,
}

fn evaluate(
    ensemble: &MimicryEnsemble,
    observed: &CodeTable,
    query: PatternQuery,
) -> Result<ReliabilityReport, ReliabilityError> {
    let k = observed.n_leaves();
    if let Some(t) = ensemble.trees().iter().find(|t| t.n_leaves() != k) {
        return Err(ReliabilityError::LeafCountMismatch { observed: k, ensemble: t.n_leaves() });
    }
    let tracked = query.tracked_set();
    let depth_size = |t: &CodeTable| -> Result<DepthSize, ReliabilityError> {
        let (depth, size) = t.containing_depth_size(&tracked)?;
        Ok(DepthSize { depth, size })
    };
    let per_tree: Vec<(bool, DepthSize)> = ensemble
        .trees()
        .par_iter()
        .map(|t| Ok((query.holds_in(t)?, depth_size(t)?)))
        .collect::<Result<_, ReliabilityError>>()?;
    let holding = per_tree.iter().filter(|(h, _)| *h).count();
    Ok(ReliabilityReport {
        observed_holds: query.holds_in(observed)?,
        observed: depth_size(observed)?,
        replicates: per_tree.len(),
        holding,
        recurrence_rate: holding as f64 / per_tree.len() as f64,
        pairs: per_tree.into_iter().map(|(_, p)| p).collect(),
        query,
    })
}

/// Fraction of ensemble trees in which `members` is exactly one branch.
pub fn evaluate_group(
    ensemble: &MimicryEnsemble,
    observed: &CodeTable,
    members: &[usize],
) -> Result<ReliabilityReport, ReliabilityError> {
    let query = PatternQuery::group(members.to_vec(), observed.n_leaves())?;
    evaluate(ensemble, observed, query)
}

/// Fraction of ensemble trees in which the minimal containing branches of
/// the two groups are disjoint.
pub fn evaluate_separation(
    ensemble: &MimicryEnsemble,
    observed: &CodeTable,
    first: &[usize],
    second: &[usize],
) -> Result<ReliabilityReport, ReliabilityError> {
    let query = PatternQuery::separation(first.to_vec(), second.to_vec(), observed.n_leaves())?;
    evaluate(ensemble, observed, query)
}

pub fn evaluate_query(
    ensemble: &MimicryEnsemble,
    observed: &CodeTable,
    query: &PatternQuery,
) -> Result<ReliabilityReport, ReliabilityError> {
    evaluate(ensemble, observed, query.clone())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthSizeSummary {
    /// `(depth, replicate count)`, ascending depth.
    pub depth_histogram: Vec<(usize, usize)>,
    /// Per-replicate containing-branch sizes, ascending.
    pub sizes: Vec<usize>,
    pub observed: DepthSize,
}

pub fn depth_size_summary(report: &ReliabilityReport) -> DepthSizeSummary {
    let mut hist = BTreeMap::new();
    for p in &report.pairs {
        *hist.entry(p.depth).or_insert(0) += 1;
    }
    let mut sizes: Vec<usize> = report.pairs.iter().map(|p| p.size).collect();
    sizes.sort_unstable();
    DepthSizeSummary { depth_histogram: hist.into_iter().collect(), sizes, observed: report.observed }
}

/// Wire and file form of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub query: QuerySpec,
    pub replicates: usize,
    pub holding: usize,
    pub recurrence_rate: f64,
    pub observed_holds: bool,
    pub observed: DepthSize,
    /// `[depth, size]` per replicate, in replicate order.
    pub pairs: Vec<(usize, usize)>,
    pub summary: DepthSizeSummary,
}

impl ReportDocument {
    pub fn new(report: &ReliabilityReport, labels: &Labels) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            query: QuerySpec::from_query(&report.query, labels),
            replicates: report.replicates,
            holding: report.holding,
            recurrence_rate: report.recurrence_rate,
            observed_holds: report.observed_holds,
            observed: report.observed,
            pairs: report.pairs.iter().map(|p| (p.depth, p.size)).collect(),
            summary: depth_size_summary(report),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Short human-readable rendering for terminals.
    pub fn pretty(&self) -> String {
        let describe = |names: &[String]| names.join(", ");
        let what = match &self.query {
            QuerySpec::Group { members } => format!("group {{{}}}", describe(members)),
            QuerySpec::Separation { first, second } => {
                format!("separation {{{}}} | {{{}}}", describe(first), describe(second))
            }
        };
        let depths: Vec<String> = self.summary.depth_histogram.iter().map(|(d, n)| format!("{d}:{n}")).collect();
        format!(
            "{what}\n  recurrence rate {:.4} ({} of {} replicates)\n  observed depth {} size {} (pattern {} in observed tree)\n  depth histogram {}\n  containing sizes min {} median {} max {}\n",
            self.recurrence_rate,
            self.holding,
            self.replicates,
            self.observed.depth,
            self.observed.size,
            if self.observed_holds { "holds" } else { "does not hold" },
            depths.join(" "),
            self.summary.sizes.first().copied().unwrap_or(0),
            self.summary.sizes.get(self.summary.sizes.len() / 2).copied().unwrap_or(0),
            self.summary.sizes.last().copied().unwrap_or(0),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::encode;
    use crate::hclust::{Dendrogram, Merge};
    use crate::mimicry::{EnsembleConfig, MeasureConfig, Scheme};

    fn m(left: usize, right: usize, height: f64, size: usize) -> Merge {
        Merge { left, right, height, size }
    }

    fn labels(k: usize) -> Labels {
        Labels::new((0..k).map(|i| format!("p{i}")).collect(), vec!["a".into(), "b".into()]).unwrap()
    }

    /// ((0,1),(2,3))
    fn balanced() -> CodeTable {
        encode(&Dendrogram::from_merges(4, vec![m(0, 1, 1.0, 2), m(2, 3, 1.0, 2), m(4, 5, 2.0, 4)]).unwrap())
    }

    /// (((0,2),1),3)
    fn mixed() -> CodeTable {
        encode(&Dendrogram::from_merges(4, vec![m(0, 2, 1.0, 2), m(4, 1, 2.0, 3), m(5, 3, 3.0, 4)]).unwrap())
    }

    fn ensemble(trees: Vec<CodeTable>) -> MimicryEnsemble {
        let cfg = EnsembleConfig::new(Scheme::Homogeneous, trees.len(), 0, MeasureConfig::default());
        MimicryEnsemble::from_trees(cfg, labels(4), trees).unwrap()
    }

    #[test]
    fn singleton_and_full_set_always_recur() {
        let ens = ensemble(vec![balanced(), mixed(), mixed()]);
        assert_eq!(evaluate_group(&ens, &balanced(), &[2]).unwrap().recurrence_rate, 1.0);
        assert_eq!(evaluate_group(&ens, &balanced(), &[0, 1, 2, 3]).unwrap().recurrence_rate, 1.0);
    }

    #[test]
    fn counts_holding_replicates() {
        let mut trees = vec![balanced(); 7];
        trees.extend(vec![mixed(); 93]);
        let ens = ensemble(trees);
        let report = evaluate_group(&ens, &balanced(), &[0, 1]).unwrap();
        assert_eq!(report.holding, 7);
        assert_eq!(report.recurrence_rate, 0.07);
        assert_eq!(report.observed, DepthSize { depth: 1, size: 2 });
        assert!(report.observed_holds);
        let summary = depth_size_summary(&report);
        assert_eq!(summary.sizes.iter().filter(|&&s| s == 2).count(), 7);
        assert_eq!(summary.sizes.iter().filter(|&&s| s > 2).count(), 93);
        assert!(report.pairs.iter().all(|p| p.size >= 2));
    }

    #[test]
    fn separation_rate() {
        let ens = ensemble(vec![balanced(), mixed()]);
        let r = evaluate_separation(&ens, &balanced(), &[0, 1], &[2, 3]).unwrap();
        assert_eq!(r.holding, 1);
        assert!(matches!(
            evaluate_separation(&ens, &balanced(), &[0, 1], &[1, 3]),
            Err(ReliabilityError::OverlappingLeaf(1))
        ));
    }

    #[test]
    fn summary_for_point_mass() {
        let ens = ensemble(vec![balanced(); 5]);
        let r = evaluate_group(&ens, &balanced(), &[3]).unwrap();
        let s = depth_size_summary(&r);
        assert_eq!(s.depth_histogram, vec![(2, 5)]);
        assert_eq!(s.sizes, vec![1; 5]);
    }

    #[test]
    fn summary_ignores_replicate_order() {
        let a = evaluate_group(&ensemble(vec![balanced(), mixed(), mixed()]), &balanced(), &[0, 2]).unwrap();
        let b = evaluate_group(&ensemble(vec![mixed(), balanced(), mixed()]), &balanced(), &[0, 2]).unwrap();
        assert_eq!(depth_size_summary(&a), depth_size_summary(&b));
    }

    #[test]
    fn query_file_parsing() {
        let text = "# demo\ngroup\tp0\tp1\n\nseparation\tp0\t|\tp2\tp3\n";
        let qs = parse_queries(text).unwrap();
        assert_eq!(qs.len(), 2);
        let l = labels(4);
        assert_eq!(qs[0].resolve(&l).unwrap(), PatternQuery::Group(vec![0, 1]));
        assert_eq!(qs[1].resolve(&l).unwrap(), PatternQuery::Separation(vec![0], vec![2, 3]));
        assert!(parse_queries("separation\tp0\tp1\n").is_err());
        assert!(parse_queries("cluster\tp0\n").is_err());
        assert_eq!(
            QuerySpec::Group { members: vec!["nope".into()] }.resolve(&l),
            Err(ReliabilityError::UnknownLabel("nope".into()))
        );
        let overlap = QuerySpec::Separation { first: vec!["p1".into()], second: vec!["p1".into()] };
        assert_eq!(overlap.resolve(&l), Err(ReliabilityError::Overlap("p1".into())));
    }

    #[test]
    fn document_round_trip() {
        let ens = ensemble(vec![balanced(), mixed()]);
        let r = evaluate_group(&ens, &balanced(), &[0, 1]).unwrap();
        let doc = ReportDocument::new(&r, &labels(4));
        let back: ReportDocument = serde_json::from_str(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        assert!(doc.pretty().contains("recurrence rate 0.5000"));
    }
}
