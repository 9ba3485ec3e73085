//! Synthetic count tables with known structure, for demos and tests.
//!
//! Every generator is a pure function of its config (including the seed).

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::matrix::{BlockedCountMatrix, CountMatrix, Labels};
use crate::mimicry::sample_multinomial;

/// A generated table plus the planted cluster of each population.
#[derive(Debug, Clone)]
pub struct Planted {
    pub counts: CountMatrix,
    pub truth: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PlantedBlocked {
    pub counts: BlockedCountMatrix,
    pub truth: Vec<usize>,
}

impl Planted {
    /// Population indices of planted cluster `c`.
    pub fn members(&self, c: usize) -> Vec<usize> {
        members_of(&self.truth, c)
    }
}

impl PlantedBlocked {
    pub fn members(&self, c: usize) -> Vec<usize> {
        members_of(&self.truth, c)
    }
}

fn members_of(truth: &[usize], c: usize) -> Vec<usize> {
    truth.iter().enumerate().filter(|(_, &t)| t == c).map(|(i, _)| i).collect()
}

fn category_names(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("cat{i:02}")).collect()
}

fn population_names(k: usize) -> Vec<String> {
    let width = k.to_string().len().max(3);
    (0..k).map(|i| format!("pop{i:0width$}")).collect()
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
}

fn draw(n: u64, p: &[f64], rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut p = p.to_vec();
    normalize(&mut p);
    // Renormalized probabilities can miss 1 by an ulp; fold it into the largest cell.
    let err = 1.0 - p.iter().sum::<f64>();
    let top = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).expect("nonempty");
    p[top] += err;
    sample_multinomial(n, &p, rng).expect("normalized probabilities")
}

/// Cluster centroid `c` over `m` categories: a flat floor with one or two
/// emphasized categories, distinct for every `c < m * (m - 1)`.
pub fn centroid(c: usize, m: usize) -> Vec<f64> {
    let mut v = vec![1.0; m];
    let primary = c % m;
    v[primary] += 6.0;
    if c >= m {
        let secondary = (primary + 1 + (c / m - 1) % (m - 1)) % m;
        v[secondary] += 4.0;
    }
    normalize(&mut v);
    v
}

#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub cluster_sizes: Vec<usize>,
    pub categories: usize,
    /// Inclusive range of row totals.
    pub totals: (u64, u64),
    /// Relative multiplicative jitter applied to each member's true proportions.
    pub jitter: f64,
    pub seed: u64,
}

/// Populations scattered around well-separated centroids, shuffled so that
/// input order carries no cluster information.
pub fn planted(cfg: &PlantedConfig) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut truth: Vec<usize> =
        cfg.cluster_sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
    truth.shuffle(&mut rng);
    let m = cfg.categories;
    let mut counts = Vec::with_capacity(truth.len() * m);
    for &c in &truth {
        let p: Vec<f64> =
            centroid(c, m).iter().map(|x| x * (1.0 + rng.random_range(-cfg.jitter..=cfg.jitter))).collect();
        let n = rng.random_range(cfg.totals.0..=cfg.totals.1);
        counts.extend(draw(n, &p, &mut rng));
    }
    let labels = Labels::new(population_names(truth.len()), category_names(m)).expect("generated labels");
    Planted { counts: CountMatrix::new(labels, counts).expect("positive totals"), truth }
}

pub fn two_cluster(seed: u64) -> Planted {
    planted(&PlantedConfig { cluster_sizes: vec![20, 20], categories: 5, totals: (10_000, 10_000), jitter: 0.02, seed })
}

pub fn three_cluster(seed: u64) -> Planted {
    planted(&PlantedConfig {
        cluster_sizes: vec![20, 20, 20],
        categories: 5,
        totals: (10_000, 10_000),
        jitter: 0.02,
        seed,
    })
}

/// 747 populations over 15 categories, shaped like a pitch-type table.
pub fn pitcher(seed: u64) -> Planted {
    planted(&PlantedConfig {
        cluster_sizes: vec![140, 120, 110, 100, 90, 80, 60, 47],
        categories: 15,
        totals: (1_000, 4_000),
        jitter: 0.25,
        seed,
    })
}

#[derive(Debug, Clone)]
pub struct CowConfig {
    pub cows: usize,
    pub blocks: usize,
    pub profiles: usize,
    /// Inclusive range of per-cow totals, drawn log-uniformly.
    pub totals: (u64, u64),
    /// Log-scale spread of profiles around the herd-wide budget.
    pub profile_spread: f64,
    /// Log-scale spread of each cow around its profile.
    pub jitter: f64,
    /// Log-scale amplitude of the block-to-block schedule effect.
    pub schedule: f64,
    pub seed: u64,
}

impl CowConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            cows: 60,
            blocks: 6,
            profiles: 6,
            totals: (500, 60_000),
            profile_spread: 0.35,
            jitter: 0.12,
            schedule: 0.6,
            seed,
        }
    }
}

/// Herd-wide share of active, highly active, nonactive, ruminating, eating.
const HERD_BUDGET: [f64; 5] = [0.22, 0.06, 0.34, 0.24, 0.14];

fn log_normal_scale(v: &[f64], spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    v.iter().map(|x| x * (spread * rng.sample::<f64, _>(StandardNormal)).exp()).collect()
}

/// Time-budget style data over five behaviors: overlapping behavioral
/// profiles around a herd-wide budget, a schedule that shifts the budget
/// from block to block, and strongly heterogeneous totals.
pub fn cow_blocked(cfg: &CowConfig) -> PlantedBlocked {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = HERD_BUDGET.len();
    let profiles: Vec<Vec<f64>> =
        (0..cfg.profiles).map(|_| log_normal_scale(&HERD_BUDGET, cfg.profile_spread, &mut rng)).collect();
    let schedule: Vec<Vec<f64>> = (0..cfg.blocks)
        .map(|_| (0..m).map(|_| rng.random_range(-cfg.schedule..=cfg.schedule).exp()).collect())
        .collect();
    let mut truth: Vec<usize> = (0..cfg.cows).map(|i| i % cfg.profiles).collect();
    truth.shuffle(&mut rng);
    let (lo, hi) = ((cfg.totals.0 as f64).ln(), (cfg.totals.1 as f64).ln());
    let mut counts = Vec::with_capacity(cfg.cows * cfg.blocks * m);
    for &c in &truth {
        let base = log_normal_scale(&profiles[c], cfg.jitter, &mut rng);
        let total = rng.random_range(lo..=hi).exp().round().max(cfg.blocks as f64) as u64;
        let per_block = total / cfg.blocks as u64;
        let extra = total % cfg.blocks as u64;
        for (t, sched) in schedule.iter().enumerate() {
            let n = per_block + u64::from((t as u64) < extra);
            let p: Vec<f64> = base.iter().zip(sched).map(|(b, s)| b * s).collect();
            counts.extend(draw(n, &p, &mut rng));
        }
    }
    let behaviors = ["active", "highly_active", "nonactive", "ruminating", "eating"].map(String::from).to_vec();
    let labels = Labels::new(population_names(cfg.cows), behaviors).expect("generated labels");
    let blocks = (0..cfg.blocks).map(|t| format!("t{t}")).collect();
    PlantedBlocked { counts: BlockedCountMatrix::new(labels, blocks, counts).expect("positive totals"), truth }
}

/// Two blocks per population with proportions `(hi, 1 - hi)` and
/// `(1 - hi, hi)` and `block_total` counts each. Block counts are set to
/// their expected values so the per-block proportions are exact.
pub fn two_block_switch(populations: usize, block_total: u64, hi: f64) -> BlockedCountMatrix {
    let a = (hi * block_total as f64).round() as u64;
    let b = block_total - a;
    let counts = (0..populations).flat_map(|_| [a, b, b, a]).collect();
    let labels = Labels::new(population_names(populations), category_names(2)).expect("generated labels");
    BlockedCountMatrix::new(labels, vec!["t0".into(), "t1".into()], counts).expect("positive totals")
}

#[derive(Debug, Clone)]
pub struct UniversityConfig {
    pub populations: usize,
    pub categories: usize,
    pub profiles: usize,
    pub totals: (u64, u64),
    /// Dirichlet concentration of profile centroids; small values leave many near-zero cells.
    pub sparsity: f64,
    /// Dirichlet concentration of each population around its profile.
    pub concentration: f64,
    pub seed: u64,
}

impl UniversityConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            populations: 47,
            categories: 9,
            profiles: 5,
            totals: (30, 120),
            sparsity: 0.5,
            concentration: 20.0,
            seed,
        }
    }
}

fn dirichlet(alpha: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> =
            alpha.iter().map(|&a| Gamma::new(a.max(1e-3), 1.0).expect("positive shape").sample(rng)).collect();
        if g.iter().sum::<f64>() > 0.0 {
            normalize(&mut g);
            return g;
        }
    }
}

/// Small-count regime: short rows over sparse profiles.
pub fn university(cfg: &UniversityConfig) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.categories;
    let profiles: Vec<Vec<f64>> = (0..cfg.profiles).map(|_| dirichlet(&vec![cfg.sparsity; m], &mut rng)).collect();
    let truth: Vec<usize> = (0..cfg.populations).map(|_| rng.random_range(0..cfg.profiles)).collect();
    let mut counts = Vec::with_capacity(cfg.populations * m);
    for &c in &truth {
        let alpha: Vec<f64> = profiles[c].iter().map(|p| p * cfg.concentration).collect();
        let p = dirichlet(&alpha, &mut rng);
        let n = rng.random_range(cfg.totals.0..=cfg.totals.1);
        counts.extend(draw(n, &p, &mut rng));
    }
    let labels = Labels::new(population_names(cfg.populations), category_names(m)).expect("generated labels");
    Planted { counts: CountMatrix::new(labels, counts).expect("positive totals"), truth }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centroids_are_distinct() {
        for m in [5, 9, 15] {
            let cs: Vec<Vec<f64>> = (0..m * 2).map(|c| centroid(c, m)).collect();
            for i in 0..cs.len() {
                for j in i + 1..cs.len() {
                    assert_ne!(cs[i], cs[j], "m={m} {i} {j}");
                }
            }
        }
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(three_cluster(4).counts, three_cluster(4).counts);
        assert_ne!(three_cluster(4).counts, three_cluster(5).counts);
        let u = university(&UniversityConfig::new(1));
        assert_eq!(u.counts.n_populations(), 47);
        assert!(u.counts.row_sums().iter().all(|&n| (30..=120).contains(&n)));
    }

    #[test]
    fn pitcher_shape() {
        let p = pitcher(0);
        assert_eq!((p.counts.n_populations(), p.counts.n_categories()), (747, 15));
    }

    #[test]
    fn cow_blocks_sum_to_totals() {
        let c = cow_blocked(&CowConfig::new(3));
        let agg = c.counts.aggregate().unwrap();
        assert_eq!(agg.n_populations(), 60);
        assert_eq!(c.counts.n_blocks(), 6);
        assert!(agg.row_sums().iter().all(|&n| (500..=60_000).contains(&n)));
    }

    #[test]
    fn two_block_layout() {
        let b = two_block_switch(3, 100, 0.9);
        assert_eq!(b.block(2, 0), &[90, 10]);
        assert_eq!(b.block(2, 1), &[10, 90]);
    }
}
