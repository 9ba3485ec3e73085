//! Ward.D2 agglomerative clustering.
//!
//! Merging follows the Lance-Williams recurrence on squared dissimilarities
//!
//! ```text
//! d(i∪j, k) = [(n_i + n_k) d(i,k) + (n_j + n_k) d(j,k) − n_k d(i,j)] / (n_i + n_j + n_k)
//! ```
//!
//! and always merges the globally closest pair. Each active cluster lives in
//! the slot of its smallest original leaf index, so scanning slots in order
//! breaks ties by the lexicographically smallest (min-leaf, min-leaf) pair.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::DistanceMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum HclustError {
    #[error("need at least 2 leaves, got {0}")]
    TooFewLeaves(usize),
    #[error("distance matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("distance matrix has a negative or non-finite entry at ({0}, {1})")]
    InvalidEntry(usize, usize),
    #[error("expected {expected} merges, got {found}")]
    MergeCount { expected: usize, found: usize },
    #[error("merge {index}: {reason}")]
    BadMerge { index: usize, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("cut size {g} outside 1..={k}")]
    CutOutOfRange { g: usize, k: usize },
}

/// One agglomeration step. Node ids: leaves are `0..K`, the node created by
/// merge `i` is `K + i`. `left` is the child holding the smaller original
/// leaf index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// Strictly binary merge tree over K leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    n_leaves: usize,
    merges: Vec<Merge>,
    min_leaf: Vec<usize>,
}

const NONE: usize = usize::MAX;

pub fn ward_d2(dm: &DistanceMatrix, assume_squared: bool) -> Result<Dendrogram, HclustError> {
    let k = dm.len();
    if k < 2 {
        return Err(HclustError::TooFewLeaves(k));
    }
    let values = dm.values();
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (values[i * k + j], values[j * k + i]);
            if !a.is_finite() || a < 0.0 {
                return Err(HclustError::InvalidEntry(i, j));
            }
            if a != b {
                return Err(HclustError::NotSymmetric(i, j));
            }
        }
    }

    // Upper triangle only: d[i * k + j] with i < j.
    let mut d: Vec<f64> = if assume_squared { values.to_vec() } else { values.iter().map(|x| x * x).collect() };
    let at = |i: usize, j: usize| if i < j { i * k + j } else { j * k + i };

    let mut active = vec![true; k];
    let mut size = vec![1usize; k];
    let mut node = (0..k).collect::<Vec<_>>();
    let mut nn = vec![NONE; k];
    let mut nn_dist = vec![f64::INFINITY; k];

    let nearest = |i: usize, d: &[f64], active: &[bool]| -> (usize, f64) {
        let mut best = (NONE, f64::INFINITY);
        for j in i + 1..k {
            if active[j] && (best.0 == NONE || d[i * k + j] < best.1) {
                best = (j, d[i * k + j]);
            }
        }
        best
    };
    for i in 0..k {
        (nn[i], nn_dist[i]) = nearest(i, &d, &active);
    }

    let mut merges = Vec::with_capacity(k - 1);
    for step in 0..k - 1 {
        let mut i = NONE;
        for s in 0..k {
            if active[s] && nn[s] != NONE && (i == NONE || nn_dist[s] < nn_dist[i]) {
                i = s;
            }
        }
        let j = nn[i];
        let dij = nn_dist[i];
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for s in 0..k {
            if !active[s] || s == i || s == j {
                continue;
            }
            let ns = size[s] as f64;
            let updated = ((ni + ns) * d[at(i, s)] + (nj + ns) * d[at(j, s)] - ns * dij) / (ni + nj + ns);
            // Exact arithmetic gives updated >= dij; keep rounding from producing inversions.
            d[at(i, s)] = updated.max(dij);
        }
        merges.push(Merge {
            left: node[i],
            right: node[j],
            height: if assume_squared { dij } else { dij.sqrt() },
            size: size[i] + size[j],
        });
        active[j] = false;
        size[i] += size[j];
        node[i] = k + step;
        nn[j] = NONE;

        for s in 0..j {
            if !active[s] || s == i {
                continue;
            }
            if nn[s] == i || nn[s] == j {
                (nn[s], nn_dist[s]) = nearest(s, &d, &active);
            } else if s < i {
                let dsi = d[s * k + i];
                if dsi < nn_dist[s] || (dsi == nn_dist[s] && i < nn[s]) {
                    nn[s] = i;
                    nn_dist[s] = dsi;
                }
            }
        }
        (nn[i], nn_dist[i]) = nearest(i, &d, &active);
    }
    Dendrogram::from_merges(k, merges)
}

impl Dendrogram {
    /// Validates a merge list. Children are reoriented so that `left` holds
    /// the smaller original leaf index.
    pub fn from_merges(n_leaves: usize, mut merges: Vec<Merge>) -> Result<Self, HclustError> {
        if n_leaves < 2 {
            return Err(HclustError::TooFewLeaves(n_leaves));
        }
        if merges.len() != n_leaves - 1 {
            return Err(HclustError::MergeCount { expected: n_leaves - 1, found: merges.len() });
        }
        let total = 2 * n_leaves - 1;
        let mut used = vec![false; total];
        let mut sizes = vec![1usize; total];
        let mut min_leaf: Vec<usize> = (0..total).collect();
        let mut previous = 0.0f64;
        for (index, merge) in merges.iter_mut().enumerate() {
            let bad = |reason: String| HclustError::BadMerge { index, reason };
            let id = n_leaves + index;
            for child in [merge.left, merge.right] {
                if child >= id {
                    return Err(bad(format!("child {child} does not exist yet")));
                }
                if used[child] {
                    return Err(bad(format!("node {child} already has a parent")));
                }
            }
            if merge.left == merge.right {
                return Err(bad("children must differ".into()));
            }
            if !merge.height.is_finite() || merge.height < 0.0 {
                return Err(bad(format!("invalid height {}", merge.height)));
            }
            if merge.height < previous {
                return Err(bad(format!("height {} below previous {previous}", merge.height)));
            }
            let expected = sizes[merge.left] + sizes[merge.right];
            if merge.size != expected {
                return Err(bad(format!("size {} but children hold {expected}", merge.size)));
            }
            if min_leaf[merge.right] < min_leaf[merge.left] {
                std::mem::swap(&mut merge.left, &mut merge.right);
            }
            used[merge.left] = true;
            used[merge.right] = true;
            sizes[id] = expected;
            min_leaf[id] = min_leaf[merge.left];
            previous = merge.height;
        }
        Ok(Self { n_leaves, merges, min_leaf })
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn root(&self) -> usize {
        2 * self.n_leaves - 2
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.n_leaves
    }

    /// `(left, right)` children of an internal node.
    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        let m = self.merges.get(node.checked_sub(self.n_leaves)?)?;
        Some((m.left, m.right))
    }

    pub fn height(&self, node: usize) -> f64 {
        if self.is_leaf(node) {
            0.0
        } else {
            self.merges[node - self.n_leaves].height
        }
    }

    pub fn size(&self, node: usize) -> usize {
        if self.is_leaf(node) {
            1
        } else {
            self.merges[node - self.n_leaves].size
        }
    }

    /// Smallest original leaf index below `node`.
    pub fn min_leaf(&self, node: usize) -> usize {
        self.min_leaf[node]
    }

    /// Leaves in left-to-right order, left (smaller min-leaf) child first.
    pub fn leaf_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.n_leaves);
        let mut stack = vec![self.root()];
        while let Some(node) = stack.pop() {
            match self.children(node) {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => order.push(node),
            }
        }
        order
    }

    /// Leaves below `node`, in leaf order.
    pub fn leaves_under(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.size(node));
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            match self.children(n) {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => out.push(n),
            }
        }
        out
    }

    /// Cluster labels `1..=g` per leaf after removing the `g − 1` last
    /// (highest) merges, numbered by first appearance in leaf order.
    pub fn cut(&self, g: usize) -> Result<Vec<usize>, HclustError> {
        let k = self.n_leaves;
        if g == 0 || g > k {
            return Err(HclustError::CutOutOfRange { g, k });
        }
        let mut parent = vec![NONE; 2 * k - 1];
        for (i, m) in self.merges.iter().take(k - g).enumerate() {
            parent[m.left] = k + i;
            parent[m.right] = k + i;
        }
        let top = |mut n: usize| {
            while parent[n] != NONE {
                n = parent[n];
            }
            n
        };
        let mut label_of_top = vec![0usize; 2 * k - 1];
        let mut labels = vec![0usize; k];
        let mut next = 1;
        for leaf in self.leaf_order() {
            let t = top(leaf);
            if label_of_top[t] == 0 {
                label_of_top[t] = next;
                next += 1;
            }
            labels[leaf] = label_of_top[t];
        }
        Ok(labels)
    }

    /// One merge per line: `left right height size`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.merges {
            writeln!(out, "{} {} {} {}", m.left, m.right, m.height, m.size).expect("write to string");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, HclustError> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse_err = |reason: &str| HclustError::Parse { line: line_no, reason: reason.to_string() };
            if fields.len() != 4 {
                return Err(parse_err("expected `left right height size`"));
            }
            merges.push(Merge {
                left: fields[0].parse().map_err(|_| parse_err("bad left node"))?,
                right: fields[1].parse().map_err(|_| parse_err("bad right node"))?,
                height: fields[2].parse().map_err(|_| parse_err("bad height"))?,
                size: fields[3].parse().map_err(|_| parse_err("bad size"))?,
            });
        }
        Self::from_merges(merges.len() + 1, merges)
    }

    /// Newick string with branch lengths taken from merge height differences.
    pub fn to_newick(&self, labels: &[String]) -> String {
        let mut out = String::new();
        self.write_newick(self.root(), labels, &mut out);
        out.push(';');
        out
    }

    fn write_newick(&self, node: usize, labels: &[String], out: &mut String) {
        match self.children(node) {
            None => out.push_str(&newick_label(&labels[node])),
            Some((l, r)) => {
                let h = self.height(node);
                out.push('(');
                self.write_newick(l, labels, out);
                write!(out, ":{}", h - self.height(l)).expect("write to string");
                out.push(',');
                self.write_newick(r, labels, out);
                write!(out, ":{}", h - self.height(r)).expect("write to string");
                out.push(')');
            }
        }
    }
}

fn newick_label(label: &str) -> String {
    if label.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}
