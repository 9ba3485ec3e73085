//! Binary code sequences for tree leaves.
//!
//! Descending from the root, the child whose smallest original leaf index is
//! lower gets bit `0`, the other gets `1`. A branch is identified by a code
//! prefix; its members are exactly the leaves whose codes extend it.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::hclust::Dendrogram;

#[derive(Debug, Error, PartialEq)]
pub enum CodesError {
    #[error("leaf set is empty")]
    EmptySet,
    #[error("leaf {0} is not in the table")]
    UnknownLeaf(usize),
    #[error("unknown population label {0:?}")]
    UnknownLabel(String),
    #[error("population label {0:?} listed twice")]
    DuplicateLabel(String),
    #[error("population label {0:?} has no code")]
    MissingLabel(String),
    #[error("invalid bit string {0:?}")]
    BadBits(String),
    #[error("line {0}: expected `label<TAB>bits`")]
    BadLine(usize),
    #[error("codes do not form a full binary tree: {0}")]
    NotATree(String),
}

/// A packed bit string, most significant bit of each word first.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Code {
    words: Vec<u64>,
    len: usize,
}

impl Code {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        if bit {
            self.words[self.len / 64] |= 1 << (63 - self.len % 64);
        }
        self.len += 1;
    }

    pub fn with(&self, bit: bool) -> Self {
        let mut c = self.clone();
        c.push(bit);
        c
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for code of length {}", self.len);
        self.words[i / 64] >> (63 - i % 64) & 1 == 1
    }

    /// Length of the longest common prefix.
    pub fn common_prefix_len(&self, other: &Code) -> usize {
        let limit = self.len.min(other.len);
        for (i, (a, b)) in self.words.iter().zip(&other.words).enumerate() {
            let x = a ^ b;
            if x != 0 {
                return (i * 64 + x.leading_zeros() as usize).min(limit);
            }
        }
        limit
    }

    pub fn starts_with(&self, prefix: &Code) -> bool {
        prefix.len <= self.len && self.common_prefix_len(prefix) == prefix.len
    }

    pub fn truncated(&self, len: usize) -> Code {
        let len = len.min(self.len);
        let mut words = self.words[..len.div_ceil(64)].to_vec();
        if !len.is_multiple_of(64) {
            let last = words.len() - 1;
            words[last] &= !(u64::MAX >> (len % 64));
        }
        Code { words, len }
    }
}

impl Ord for Code {
    /// Lexicographic with a prefix ordered before its extensions, which
    /// matches the left-to-right order of leaves in the tree.
    fn cmp(&self, other: &Self) -> Ordering {
        let lcp = self.common_prefix_len(other);
        if lcp == self.len || lcp == other.len {
            self.len.cmp(&other.len)
        } else {
            self.get(lcp).cmp(&other.get(lcp))
        }
    }
}

impl PartialOrd for Code {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{self}]")
    }
}

impl FromStr for Code {
    type Err = CodesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut code = Code::new();
        for ch in s.chars() {
            match ch {
                '0' => code.push(false),
                '1' => code.push(true),
                _ => return Err(CodesError::BadBits(s.to_string())),
            }
        }
        Ok(code)
    }
}

impl Serialize for Code {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Code {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A subtree: its code prefix and the leaves below it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Branch {
    pub prefix: Code,
    pub members: Vec<usize>,
}

impl Branch {
    pub fn depth(&self) -> usize {
        self.prefix.len()
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Per-leaf codes of one tree, indexed by original population index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeTable {
    codes: Vec<Code>,
}

pub fn encode(d: &Dendrogram) -> CodeTable {
    let mut codes = vec![Code::new(); d.n_leaves()];
    let mut stack = vec![(d.root(), Code::new())];
    while let Some((node, code)) = stack.pop() {
        match d.children(node) {
            None => codes[node] = code,
            Some((a, b)) => {
                let (zero, one) = if d.min_leaf(a) < d.min_leaf(b) { (a, b) } else { (b, a) };
                stack.push((one, code.with(true)));
                stack.push((zero, code));
                stack.last_mut().expect("just pushed").1.push(false);
            }
        }
    }
    CodeTable { codes }
}

impl CodeTable {
    /// Accepts codes only if they are exactly the leaf codes of a full
    /// binary tree with at least two leaves.
    pub fn from_codes(codes: Vec<Code>) -> Result<Self, CodesError> {
        if codes.len() < 2 {
            return Err(CodesError::NotATree(format!("{} leaves", codes.len())));
        }
        let mut sorted: Vec<&Code> = codes.iter().collect();
        sorted.sort();
        let mut stack = vec![(0usize, sorted.len(), 0usize)];
        while let Some((start, end, depth)) = stack.pop() {
            if end - start == 1 {
                if sorted[start].len() != depth {
                    return Err(CodesError::NotATree(format!(
                        "branch {} has a single child",
                        sorted[start].truncated(depth)
                    )));
                }
                continue;
            }
            if sorted[start].len() <= depth {
                return Err(CodesError::NotATree(format!("code {} is a prefix of another", sorted[start])));
            }
            let split = start + sorted[start..end].partition_point(|c| !c.get(depth));
            if split == start || split == end {
                return Err(CodesError::NotATree(format!(
                    "branch {} has a single child",
                    sorted[start].truncated(depth)
                )));
            }
            stack.push((start, split, depth + 1));
            stack.push((split, end, depth + 1));
        }
        Ok(Self { codes })
    }

    pub fn n_leaves(&self) -> usize {
        self.codes.len()
    }

    pub fn code(&self, leaf: usize) -> &Code {
        &self.codes[leaf]
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    /// Leaves sorted by code, i.e. left to right.
    pub fn leaf_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.codes.len()).collect();
        order.sort_by(|&a, &b| self.codes[a].cmp(&self.codes[b]));
        order
    }

    /// Leaves whose codes extend `prefix`, in index order.
    pub fn members(&self, prefix: &Code) -> Vec<usize> {
        (0..self.codes.len()).filter(|&l| self.codes[l].starts_with(prefix)).collect()
    }

    /// All branches (one per tree node), root first.
    pub fn branches(&self) -> Vec<Branch> {
        let mut prefixes: Vec<Code> =
            self.codes.iter().flat_map(|c| (0..=c.len()).map(move |l| c.truncated(l))).collect();
        prefixes.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        prefixes.dedup();
        prefixes
            .into_iter()
            .map(|prefix| {
                let members = self.members(&prefix);
                Branch { prefix, members }
            })
            .collect()
    }

    fn check(&self, set: &[usize]) -> Result<(), CodesError> {
        if set.is_empty() {
            return Err(CodesError::EmptySet);
        }
        match set.iter().find(|&&l| l >= self.codes.len()) {
            Some(&l) => Err(CodesError::UnknownLeaf(l)),
            None => Ok(()),
        }
    }

    fn common_prefix(&self, set: &[usize]) -> Result<Code, CodesError> {
        self.check(set)?;
        let first = &self.codes[set[0]];
        let len = set[1..].iter().map(|&l| first.common_prefix_len(&self.codes[l])).fold(first.len(), usize::min);
        Ok(first.truncated(len))
    }

    /// The smallest branch holding every leaf of `set`.
    pub fn minimal_containing_branch(&self, set: &[usize]) -> Result<Branch, CodesError> {
        let prefix = self.common_prefix(set)?;
        let members = self.members(&prefix);
        Ok(Branch { prefix, members })
    }

    /// `(depth, size)` of the minimal containing branch without collecting members.
    pub fn containing_depth_size(&self, set: &[usize]) -> Result<(usize, usize), CodesError> {
        let prefix = self.common_prefix(set)?;
        let size = self.codes.iter().filter(|c| c.starts_with(&prefix)).count();
        Ok((prefix.len(), size))
    }

    /// Whether `set` is exactly one branch of the tree.
    pub fn is_standalone(&self, set: &[usize]) -> Result<bool, CodesError> {
        let (_, size) = self.containing_depth_size(set)?;
        let mut distinct = set.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        Ok(size == distinct.len())
    }

    /// Whether the minimal containing branches of the two sets are disjoint.
    pub fn is_separated(&self, first: &[usize], second: &[usize]) -> Result<bool, CodesError> {
        let a = self.common_prefix(first)?;
        let b = self.common_prefix(second)?;
        // Branches of one tree are either nested or disjoint.
        Ok(!a.starts_with(&b) && !b.starts_with(&a))
    }

    /// `label<TAB>bits` per leaf, in leaf order.
    pub fn to_tsv(&self, labels: &[String]) -> String {
        let mut out = String::new();
        for leaf in self.leaf_order() {
            out.push_str(&labels[leaf]);
            out.push('\t');
            out.push_str(&self.codes[leaf].to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str, labels: &[String]) -> Result<Self, CodesError> {
        let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut codes: Vec<Option<Code>> = vec![None; labels.len()];
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (label, bits) = line.rsplit_once('\t').ok_or(CodesError::BadLine(i + 1))?;
            let &leaf = index.get(label).ok_or_else(|| CodesError::UnknownLabel(label.to_string()))?;
            if codes[leaf].replace(bits.parse()?).is_some() {
                return Err(CodesError::DuplicateLabel(label.to_string()));
            }
        }
        let codes = codes
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| CodesError::MissingLabel(labels[i].clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_codes(codes)
    }
}
