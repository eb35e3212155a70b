//! Analytic per-node cost of full and batched inference.
//!
//! A branch with power `k ≥ 1` costs `k·d·min(f_in, f_out)` for
//! aggregation plus `f_in·f_out` for the transform; a `k = 0` branch only
//! pays the transform. This matches the executor's aggregation order, so
//! on a `d`-regular graph the full-inference estimate times `|V|` equals
//! the kernel counter exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GnnModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchDims {
    pub power: usize,
    pub f_in: usize,
    pub f_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    /// Width of the layer's input.
    pub in_dim: usize,
    pub branches: Vec<BranchDims>,
}

impl LayerDims {
    pub fn hops(&self) -> usize {
        self.branches.iter().map(|b| b.power).max().unwrap_or(0)
    }

    pub fn out_width(&self, concat: bool) -> usize {
        if concat {
            self.branches.iter().map(|b| b.f_out).sum()
        } else {
            self.branches.iter().map(|b| b.f_out).max().unwrap_or(0)
        }
    }

    /// MACs per computed row at average degree `d`.
    pub fn macs_per_node(&self, d: f64) -> f64 {
        self.branches
            .iter()
            .map(|b| {
                let transform = (b.f_in * b.f_out) as f64;
                if b.power == 0 {
                    transform
                } else {
                    b.power as f64 * d * b.f_in.min(b.f_out) as f64 + transform
                }
            })
            .sum()
    }

    fn weight_entries(&self) -> f64 {
        self.branches.iter().map(|b| (b.f_in * b.f_out) as f64).sum()
    }

    fn out_entries(&self) -> f64 {
        self.branches.iter().map(|b| b.f_out).sum::<usize>() as f64
    }

    fn row_entries(&self) -> f64 {
        self.in_dim as f64 + self.out_entries()
    }
}

/// Per-branch dimensions of a (possibly folded) model.
pub fn model_dims(model: &GnnModel) -> Vec<LayerDims> {
    model
        .layers
        .iter()
        .map(|l| LayerDims {
            in_dim: l.spec.in_dim,
            branches: (0..l.spec.num_branches())
                .map(|b| BranchDims {
                    power: l.spec.power(b),
                    f_in: l.branch_in_dim(b),
                    f_out: l.spec.out_dims[b],
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    Full,
    Batched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    /// Rows computed per target (1 in full mode).
    pub supports: f64,
    pub macs_per_node: f64,
    pub memory_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub mode: CostMode,
    pub layers: Vec<LayerCost>,
    pub total_macs_per_node: f64,
    pub memory_bytes: f64,
}

impl CostReport {
    fn from_layers(mode: CostMode, layers: Vec<LayerCost>) -> Self {
        Self {
            mode,
            total_macs_per_node: layers.iter().map(|l| l.macs_per_node).sum(),
            memory_bytes: layers.iter().map(|l| l.memory_bytes).sum(),
            layers,
        }
    }

    pub fn supports_per_layer(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.supports).collect()
    }
}

fn check(dims: &[LayerDims], d: f64) -> Result<()> {
    if dims.is_empty() || dims.iter().any(|l| l.branches.is_empty()) {
        return Err(Error::Config("cost model needs at least one layer with branches".into()));
    }
    if !(d >= 0.0 && d.is_finite()) {
        return Err(Error::Config(format!("average degree {d} must be finite and non-negative")));
    }
    Ok(())
}

/// Full-inference cost at average degree `d` on `num_nodes` nodes. Memory
/// counts every layer's input and branch outputs for all nodes plus the
/// weights, 4 bytes per entry.
pub fn full_cost(dims: &[LayerDims], num_nodes: usize, d: f64) -> Result<CostReport> {
    check(dims, d)?;
    let layers = dims
        .iter()
        .enumerate()
        .map(|(i, l)| LayerCost {
            layer: i,
            supports: 1.0,
            macs_per_node: l.macs_per_node(d),
            memory_bytes: 4.0 * (num_nodes as f64 * l.row_entries() + l.weight_entries()),
        })
        .collect();
    Ok(CostReport::from_layers(CostMode::Full, layers))
}

/// Expected per-target cost of batched inference on a tree-like graph of
/// average degree `d`.
///
/// Walking down from the output, every hop of an aggregating layer widens
/// the ball of needed rows by `d_eff = min(d, cap)` where `caps[j]` applies
/// to the `j`-th aggregating layer from the top. Rows feeding an
/// aggregating layer are served from the cache with probability
/// `cache_fraction`, except for the targets themselves. Memory counts the
/// rows touched per target plus the weights.
pub fn batched_cost(
    dims: &[LayerDims],
    d: f64,
    caps: &[Option<usize>],
    cache_fraction: f64,
) -> Result<CostReport> {
    check(dims, d)?;
    if !(0.0..=1.0).contains(&cache_fraction) {
        return Err(Error::Config(format!("cache_fraction {cache_fraction} outside [0, 1]")));
    }
    let num_layers = dims.len();
    // Expected node count per distance from a target.
    let mut ball = vec![1.0f64];
    let mut depth = 0;
    let mut layers = Vec::with_capacity(num_layers);
    for i in (0..num_layers).rev() {
        let l = &dims[i];
        let computed: f64 = ball.iter().sum();
        let hops = l.hops();
        if hops > 0 {
            let eff = match caps.get(depth).copied().flatten() {
                Some(cap) => d.min(cap as f64),
                None => d,
            };
            depth += 1;
            for _ in 0..hops {
                let last = *ball.last().expect("ball starts non-empty");
                ball.push(last * eff);
            }
        }
        let touched: f64 = ball.iter().sum();
        layers.push(LayerCost {
            layer: i,
            supports: computed,
            macs_per_node: computed * l.macs_per_node(d),
            memory_bytes: 4.0 * (touched * l.in_dim as f64 + computed * l.out_entries() + l.weight_entries()),
        });
        if i > 0 && hops > 0 {
            for v in ball.iter_mut().skip(1) {
                *v *= 1.0 - cache_fraction;
            }
        }
    }
    layers.reverse();
    Ok(CostReport::from_layers(CostMode::Batched, layers))
}

/// Exact MAC count of one full forward pass on a graph with `nnz`
/// adjacency entries, as tallied by the kernels.
pub fn full_macs_exact(dims: &[LayerDims], num_nodes: u64, nnz: u64) -> u64 {
    dims.iter()
        .flat_map(|l| &l.branches)
        .map(|b| {
            let (fi, fo, k) = (b.f_in as u64, b.f_out as u64, b.power as u64);
            let transform = num_nodes * fi * fo;
            if k == 0 {
                transform
            } else {
                transform + k * nnz * fi.min(fo)
            }
        })
        .sum()
}

/// MACs recorded by an instrumented run.
pub fn measured_macs(counter: &crate::instrument::MacCounter) -> u64 {
    counter.measured_macs()
}
