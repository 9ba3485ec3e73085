//! Reference implementations shared by the integration tests. None of these
//! call into the code under test beyond constructing inputs.

#![allow(dead_code)]

use ceda::hclust::Merge;
use ceda::Dendrogram;
use rand::Rng;

/// One agglomeration step as sets of original leaves.
#[derive(Debug, Clone)]
pub struct OracleMerge {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub height: f64,
}

/// Ward distance between two clusters computed from the member-level
/// dissimilarities `d` (already on the squared scale):
///
/// `2·nA·nB/(nA+nB) · (mean_AB d − mean_AA d / 2 − mean_BB d / 2)`,
///
/// with the within-cluster means taken over all ordered pairs, diagonal
/// included. For squared Euclidean `d` this is the increase in within-cluster
/// sum of squares times two; it is linear in `d`, so it holds for any
/// symmetric hollow matrix.
pub fn ward_between(d: &[f64], k: usize, a: &[usize], b: &[usize]) -> f64 {
    let mean = |x: &[usize], y: &[usize]| {
        let mut s = 0.0;
        for &i in x {
            for &j in y {
                s += d[i * k + j];
            }
        }
        s / (x.len() * y.len()) as f64
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    2.0 * na * nb / (na + nb) * (mean(a, b) - 0.5 * mean(a, a) - 0.5 * mean(b, b))
}

/// Naive O(K^3)-per-step Ward.D2. `values` holds the input dissimilarities;
/// when `squared` is false they are squared first and heights are reported
/// on the original scale. Ties go to the pair with the smallest
/// `(min leaf of A, min leaf of B)`.
pub fn naive_ward(values: &[f64], k: usize, squared: bool) -> Vec<OracleMerge> {
    let d: Vec<f64> = if squared { values.to_vec() } else { values.iter().map(|x| x * x).collect() };
    let mut clusters: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let dist = ward_between(&d, k, &clusters[a], &clusters[b]);
                if best.is_none_or(|(bd, _, _)| dist < bd) {
                    best = Some((dist, a, b));
                }
            }
        }
        let (dist, a, b) = best.unwrap();
        let right = clusters.remove(b);
        let left = std::mem::take(&mut clusters[a]);
        let mut merged = left.clone();
        merged.extend(&right);
        merged.sort_unstable();
        out.push(OracleMerge { left, right, height: if squared { dist } else { dist.max(0.0).sqrt() } });
        clusters[a] = merged;
        // Keep clusters ordered by their smallest leaf.
        clusters.sort_by_key(|c| c[0]);
    }
    out
}

/// Leaves under each child of merge `i`, sorted.
pub fn merge_members(d: &Dendrogram, i: usize) -> (Vec<usize>, Vec<usize>) {
    let m = &d.merges()[i];
    let sorted = |node| {
        let mut v = d.leaves_under(node);
        v.sort_unstable();
        v
    };
    (sorted(m.left), sorted(m.right))
}

/// Symmetric hollow matrix of iid uniform(0.1, 1) entries.
pub fn random_dissimilarity<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let mut v = vec![0.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            let x = rng.random_range(0.1..1.0);
            v[i * k + j] = x;
            v[j * k + i] = x;
        }
    }
    v
}

/// Euclidean distances between `k` random points in `dim` dimensions.
pub fn random_euclidean<R: Rng>(k: usize, dim: usize, rng: &mut R) -> Vec<f64> {
    let pts: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    let mut v = vec![0.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            let x = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v[i * k + j] = x;
            v[j * k + i] = x;
        }
    }
    v
}

/// A random full binary tree over `k` leaves, built by merging random
/// pairs of active nodes at increasing heights.
pub fn random_tree<R: Rng>(k: usize, rng: &mut R) -> Dendrogram {
    let mut active: Vec<(usize, usize)> = (0..k).map(|i| (i, 1)).collect();
    let mut merges = Vec::with_capacity(k - 1);
    for step in 0..k - 1 {
        let a = active.swap_remove(rng.random_range(0..active.len()));
        let b = active.swap_remove(rng.random_range(0..active.len()));
        merges.push(Merge { left: a.0, right: b.0, height: step as f64, size: a.1 + b.1 });
        active.push((k + step, a.1 + b.1));
    }
    Dendrogram::from_merges(k, merges).unwrap()
}

/// All branches of `d` as sorted leaf sets, one per node.
pub fn node_sets(d: &Dendrogram) -> Vec<Vec<usize>> {
    (0..2 * d.n_leaves() - 1)
        .map(|node| {
            let mut v = d.leaves_under(node);
            v.sort_unstable();
            v
        })
        .collect()
}

/// Relative closeness with an absolute floor for values near zero.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}
