//! Seeded synthetic graphs: stochastic block models with class-correlated
//! attributes, regular trees, circulant regular graphs, preferential
//! attachment, and the correlated-channel pruning fixture.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Labels, Split};
use crate::tensor::{DenseMatrix, Matrix};

/// Train/val/test fractions; the test split takes the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.5, val: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmParams {
    pub n: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub attr_dim: usize,
    /// Standard deviation of the per-class mean entries.
    pub signal: f64,
    /// Standard deviation of per-node attribute noise.
    pub noise: f64,
    pub split: SplitFractions,
    pub seed: u64,
}

impl Default for SbmParams {
    fn default() -> Self {
        Self {
            n: 5000,
            blocks: 4,
            p_in: 0.02,
            p_out: 0.002,
            attr_dim: 64,
            signal: 0.2,
            noise: 1.0,
            split: SplitFractions::default(),
            seed: 0,
        }
    }
}

fn check_split(s: &SplitFractions) -> Result<()> {
    if !(s.train > 0.0 && s.val >= 0.0 && s.train + s.val <= 1.0) {
        return Err(Error::Config(format!(
            "split fractions train={} val={} are invalid",
            s.train, s.val
        )));
    }
    Ok(())
}

fn random_split(n: usize, s: &SplitFractions, rng: &mut ChaCha8Rng) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = ((n as f64 * s.train).round() as usize).clamp(1.min(n), n);
    let n_val = ((n as f64 * s.val).round() as usize).min(n - n_train);
    let mut split = vec![Split::Test; n];
    for (rank, &v) in order.iter().enumerate() {
        if rank < n_train {
            split[v] = Split::Train;
        } else if rank < n_train + n_val {
            split[v] = Split::Val;
        }
    }
    split
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn undirected(edges: &[(u32, u32)]) -> Vec<(u32, u32)> {
    let mut arcs = Vec::with_capacity(edges.len() * 2);
    for &(a, b) in edges {
        arcs.push((a, b));
        arcs.push((b, a));
    }
    arcs.sort_unstable();
    arcs.dedup();
    arcs
}

/// Node `v` belongs to block `v % blocks`.
fn sbm_edges(n: usize, blocks: usize, p_in: f64, p_out: f64, rng: &mut ChaCha8Rng) -> Vec<(u32, u32)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if u % blocks == v % blocks { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((u as u32, v as u32));
            }
        }
    }
    edges
}

pub fn sbm(p: &SbmParams) -> Result<Graph> {
    if p.n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    if p.blocks == 0 || p.blocks > p.n {
        return Err(Error::Config("blocks must lie in 1..=n".into()));
    }
    if !(0.0..=1.0).contains(&p.p_in) || !(0.0..=1.0).contains(&p.p_out) {
        return Err(Error::Config("edge probabilities must lie in [0,1]".into()));
    }
    if p.attr_dim == 0 || p.noise < 0.0 || p.signal < 0.0 {
        return Err(Error::Config("attr_dim, noise and signal must be valid".into()));
    }
    check_split(&p.split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let edges = sbm_edges(p.n, p.blocks, p.p_in, p.p_out, &mut rng);
    let means: Vec<Vec<f64>> = (0..p.blocks)
        .map(|_| (0..p.attr_dim).map(|_| p.signal * normal(&mut rng)).collect())
        .collect();
    let mut attrs = Vec::with_capacity(p.n * p.attr_dim);
    for v in 0..p.n {
        for mu in &means[v % p.blocks] {
            attrs.push((mu + p.noise * normal(&mut rng)) as f32);
        }
    }
    let split = random_split(p.n, &p.split, &mut rng);
    Graph::from_arcs(
        p.n,
        &undirected(&edges),
        Matrix::from_vec(p.n, p.attr_dim, attrs)?,
        Labels::Single((0..p.n).map(|v| (v % p.blocks) as u32).collect()),
        p.blocks,
        split,
    )
}

/// Complete `d`-ary tree of the given depth; node 0 is the root and every
/// node is labelled by its depth parity.
pub fn regular_tree(d: usize, depth: usize, attr_dim: usize, seed: u64) -> Result<Graph> {
    if d == 0 {
        return Err(Error::Config("tree fan-out must be positive".into()));
    }
    let mut edges = Vec::new();
    let mut level = vec![0u32];
    let mut depth_of = vec![0usize];
    let mut next = 1u32;
    for l in 1..=depth {
        let mut children = Vec::with_capacity(level.len() * d);
        for &p in &level {
            for _ in 0..d {
                edges.push((p, next));
                children.push(next);
                depth_of.push(l);
                next += 1;
            }
        }
        level = children;
    }
    let n = next as usize;
    let labels = Labels::Single(depth_of.iter().map(|&l| (l % 2) as u32).collect());
    generic(n, &edges, labels, 2, attr_dim, seed)
}

/// `d`-regular circulant graph: node `v` links to `v±1, …, v±d/2` (mod n).
pub fn circulant(n: usize, d: usize, attr_dim: usize, seed: u64) -> Result<Graph> {
    if d % 2 != 0 || d >= n {
        return Err(Error::Config(format!(
            "circulant degree {d} must be even and below n={n}"
        )));
    }
    let mut edges = Vec::new();
    for v in 0..n {
        for s in 1..=d / 2 {
            edges.push((v as u32, ((v + s) % n) as u32));
        }
    }
    let labels = Labels::Single((0..n).map(|v| (v % 2) as u32).collect());
    generic(n, &edges, labels, 2, attr_dim, seed)
}

/// Preferential attachment: each new node links to `m` existing nodes
/// chosen proportionally to degree.
pub fn power_law(n: usize, m: usize, attr_dim: usize, seed: u64) -> Result<Graph> {
    if n == 0 || m == 0 || m >= n {
        return Err(Error::Config(format!("power-law needs 0 < m < n, got m={m} n={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut edges = Vec::new();
    let mut ends: Vec<u32> = Vec::new();
    for v in 0..=m {
        for u in 0..v {
            edges.push((u as u32, v as u32));
            ends.extend([u as u32, v as u32]);
        }
    }
    for v in m + 1..n {
        let mut chosen: Vec<u32> = Vec::with_capacity(m);
        while chosen.len() < m {
            let u = ends[rng.gen_range(0..ends.len())];
            if !chosen.contains(&u) {
                chosen.push(u);
            }
        }
        for u in chosen {
            edges.push((u, v as u32));
            ends.extend([u, v as u32]);
        }
    }
    let labels = Labels::Single((0..n).map(|v| (v % 2) as u32).collect());
    generic(n, &edges, labels, 2, attr_dim, seed)
}

fn generic(
    n: usize,
    edges: &[(u32, u32)],
    labels: Labels,
    classes: usize,
    attr_dim: usize,
    seed: u64,
) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attrs = (0..n * attr_dim).map(|_| normal(&mut rng) as f32).collect();
    let split = random_split(n, &SplitFractions::default(), &mut rng);
    Graph::from_arcs(
        n,
        &undirected(edges),
        Matrix::from_vec(n, attr_dim, attrs)?,
        labels,
        classes,
        split,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelatedParams {
    pub n: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Independent class-informative features; each becomes two channels.
    pub latent: usize,
    pub signal: f64,
    pub noise: f64,
    /// Noise separating the two copies of a latent feature.
    pub twin_noise: f64,
    pub split: SplitFractions,
    pub seed: u64,
}

impl Default for CorrelatedParams {
    fn default() -> Self {
        Self {
            n: 1200,
            blocks: 4,
            p_in: 0.02,
            p_out: 0.002,
            latent: 32,
            signal: 0.3,
            noise: 1.0,
            twin_noise: 0.05,
            split: SplitFractions::default(),
            seed: 0,
        }
    }
}

/// Block-model graph whose `2·latent` attribute channels come in nearly
/// identical pairs: channel `2j` and `2j+1` both carry latent feature `j`.
pub fn correlated_channels(p: &CorrelatedParams) -> Result<Graph> {
    if p.n == 0 || p.latent == 0 || p.blocks == 0 {
        return Err(Error::Config("n, latent and blocks must be positive".into()));
    }
    check_split(&p.split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let edges = sbm_edges(p.n, p.blocks, p.p_in, p.p_out, &mut rng);
    let means: Vec<Vec<f64>> = (0..p.blocks)
        .map(|_| (0..p.latent).map(|_| p.signal * normal(&mut rng)).collect())
        .collect();
    let c = 2 * p.latent;
    let mut attrs = DenseMatrix::zeros(p.n, c);
    for v in 0..p.n {
        let row = attrs.row_mut(v);
        for j in 0..p.latent {
            let z = means[v % p.blocks][j] + p.noise * normal(&mut rng);
            row[2 * j] = (z + p.twin_noise * normal(&mut rng)) as f32;
            row[2 * j + 1] = (z + p.twin_noise * normal(&mut rng)) as f32;
        }
    }
    let split = random_split(p.n, &p.split, &mut rng);
    Graph::from_arcs(
        p.n,
        &undirected(&edges),
        attrs,
        Labels::Single((0..p.n).map(|v| (v % p.blocks) as u32).collect()),
        p.blocks,
        split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{read_graph, write_graph};

    #[test]
    fn tree_sizes() {
        let g = regular_tree(2, 4, 3, 0).unwrap();
        assert_eq!(g.num_nodes(), 31);
        assert_eq!(g.degree(0), 2);
        assert_eq!(g.degree(1), 3);
        assert_eq!(regular_tree(3, 0, 1, 0).unwrap().num_nodes(), 1);
    }

    #[test]
    fn circulant_is_regular() {
        let g = circulant(50, 6, 2, 1).unwrap();
        assert!((0..50).all(|v| g.degree(v) == 6));
        assert!(circulant(5, 3, 1, 0).is_err());
    }

    #[test]
    fn sbm_round_trips_and_is_seeded() {
        let p = SbmParams { n: 400, ..Default::default() };
        let g = sbm(&p).unwrap();
        assert_eq!(read_graph(&write_graph(&g)).unwrap(), g);
        assert_eq!(sbm(&p).unwrap(), g);
        let stats = g.degree_stats().unwrap();
        assert!(stats.avg_degree > 2.0);
        assert!(sbm(&SbmParams { n: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn power_law_has_hubs() {
        let g = power_law(500, 2, 2, 3).unwrap();
        let stats = g.degree_stats().unwrap();
        assert!(stats.max_degree as f64 > 5.0 * stats.avg_degree);
        assert_eq!(stats.isolated_count, 0);
    }

    #[test]
    fn correlated_twins_are_close() {
        let g = correlated_channels(&CorrelatedParams { n: 100, ..Default::default() }).unwrap();
        assert_eq!(g.attr_dim(), 64);
        let a = g.attributes();
        let diff: f64 = (0..100).map(|v| (a.get(v, 0) - a.get(v, 1)).abs() as f64).sum::<f64>() / 100.0;
        assert!(diff < 0.2);
    }
}
