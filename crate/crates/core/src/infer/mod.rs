//! Full and batched inference.
//!
//! A batched request computes logits for a set of target nodes only. The
//! plan walks the layers from the output down: the rows a layer computes
//! are expanded by its hop count into the rows its input must provide.
//! Input rows whose hidden vector is in the cache are served from it and
//! not expanded further. Neighbor caps apply per aggregating layer counted
//! from the output (`neighbor_caps[0]` for the top one); a capped node uses
//! a seeded uniform sample of its neighbors with weights rescaled by
//! `degree / sample size`, and the sample depends only on the request seed,
//! the layer depth and the node.

mod cache;

use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cache::{CacheStats, HiddenFeatureCache};

use crate::error::{Error, Result};
use crate::graph::{CsrMatrix, Graph, NormalizedAdjacency};
use crate::instrument::MacCounter;
use crate::model::{layer_forward_rows, model_forward_counted, GnnModel};
use crate::tensor::DenseMatrix;

/// Logits of every node.
pub fn full_inference(
    model: &GnnModel,
    g: &Graph,
    adj: &NormalizedAdjacency,
    counter: Option<&MacCounter>,
) -> Result<DenseMatrix> {
    if g.num_nodes() == 0 {
        return Err(Error::InvalidGraph("graph has no nodes".into()));
    }
    check_adjacency(g, adj)?;
    model_forward_counted(model, &adj.csr, g.attributes(), counter)
}

fn check_adjacency(g: &Graph, adj: &NormalizedAdjacency) -> Result<()> {
    if adj.source_version != g.version() || adj.csr.nrows != g.num_nodes() {
        return Err(Error::contract(
            "inference",
            "normalized adjacency was built from a different graph version",
        ));
    }
    Ok(())
}

/// Default caps: unlimited at the top aggregating layer, 32 below it.
pub fn default_caps() -> Vec<Option<usize>> {
    vec![None, Some(32)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRequest {
    pub targets: Vec<usize>,
    /// Per aggregating layer from the output; missing entries are unlimited.
    pub neighbor_caps: Vec<Option<usize>>,
    pub seed: u64,
    pub use_cache: bool,
    /// Store the targets' cacheable hidden vectors after the pass.
    pub store_roots: bool,
    /// Store every computed cacheable row after the pass.
    pub store_all: bool,
}

impl BatchRequest {
    /// Uncapped request without cache use.
    pub fn new(targets: Vec<usize>) -> Self {
        Self {
            targets,
            neighbor_caps: Vec::new(),
            seed: 0,
            use_cache: false,
            store_roots: false,
            store_all: false,
        }
    }

    fn cap(&self, depth: usize) -> Option<usize> {
        self.neighbor_caps.get(depth).copied().flatten()
    }
}

/// Where a row of a layer's input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSource {
    /// Row of the previous layer's computed output.
    Computed(usize),
    /// Row of the plan's cached matrix.
    Cached(usize),
    /// Row of the attribute matrix (input layer).
    Attribute(usize),
}

#[derive(Debug, Clone)]
pub struct LayerPlan {
    /// Input rows of the layer: the computed nodes first, then the nodes
    /// reached by expansion.
    pub support: Vec<u32>,
    /// Number of leading `support` nodes whose output is computed.
    pub computed: usize,
    /// Local aggregation operator over `support`.
    pub csr: CsrMatrix,
    pub sources: Vec<RowSource>,
    /// Supports served from the cache (visited).
    pub visited: Vec<u32>,
    pub cached_rows: DenseMatrix,
    pub cache_misses: usize,
}

#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub layers: Vec<LayerPlan>,
    /// Deduplicated targets in first-seen order; the top layer computes
    /// exactly these.
    pub unique_targets: Vec<u32>,
    /// Position in `unique_targets` of every requested target.
    pub output_rows: Vec<usize>,
}

impl BatchPlan {
    pub fn computed_nodes(&self, layer: usize) -> &[u32] {
        let lp = &self.layers[layer];
        &lp.support[..lp.computed]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub supports: usize,
    pub computed: usize,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

/// Per-batch instrumentation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub targets: usize,
    pub layers: Vec<LayerStats>,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub macs: u64,
    pub latency_us: u64,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// One row per requested target, in request order.
    pub logits: DenseMatrix,
    pub stats: BatchStats,
}

/// Whether the output of layer `i` feeds an aggregating branch and so is
/// worth caching.
pub fn cacheable(model: &GnnModel, i: usize) -> bool {
    i + 1 < model.num_layers() && model.layers[i + 1].spec.k_max > 0
}

/// Batched executor bound to one model, graph and normalization.
pub struct BatchEngine<'a> {
    model: &'a GnnModel,
    graph: &'a Graph,
    adj: &'a NormalizedAdjacency,
    model_id: u64,
}

impl<'a> BatchEngine<'a> {
    pub fn new(model: &'a GnnModel, graph: &'a Graph, adj: &'a NormalizedAdjacency) -> Result<Self> {
        check_adjacency(graph, adj)?;
        if model.in_dim() != graph.attr_dim() {
            return Err(Error::contract(
                "inference",
                format!("model reads {} attributes, graph has {}", model.in_dim(), graph.attr_dim()),
            ));
        }
        Ok(Self {
            model,
            graph,
            adj,
            model_id: model.fingerprint(),
        })
    }

    pub fn model_id(&self) -> u64 {
        self.model_id
    }

    pub fn plan(&self, req: &BatchRequest, cache: Option<&HiddenFeatureCache>) -> Result<BatchPlan> {
        let n = self.graph.num_nodes();
        if req.targets.is_empty() {
            return Err(Error::contract("batched_inference", "no targets"));
        }
        if let Some(&bad) = req.targets.iter().find(|&&t| t >= n) {
            return Err(Error::contract(
                "batched_inference",
                format!("target {bad} out of range for {n} nodes"),
            ));
        }
        let mut position = HashMap::new();
        let mut unique_targets = Vec::new();
        let output_rows = req
            .targets
            .iter()
            .map(|&t| {
                *position.entry(t as u32).or_insert_with(|| {
                    unique_targets.push(t as u32);
                    unique_targets.len() - 1
                })
            })
            .collect();

        let model = self.model;
        let num_layers = model.num_layers();
        let cache = cache.filter(|_| req.use_cache);
        let mut layers = Vec::with_capacity(num_layers);
        let mut computed = unique_targets.clone();
        let mut depth = 0;
        for i in (0..num_layers).rev() {
            let hops = model.layers[i].spec.k_max;
            let (support, csr) = if hops == 0 {
                let m = computed.len();
                (computed.clone(), CsrMatrix { nrows: m, ncols: m, indptr: vec![0; m + 1], indices: vec![], values: vec![] })
            } else {
                let cap = req.cap(depth);
                depth += 1;
                self.expand(&computed, hops, cap, req.seed, depth as u64)
            };
            let mut visited = Vec::new();
            let mut cached_data = Vec::new();
            let mut cache_misses = 0;
            let mut sources = Vec::with_capacity(support.len());
            let mut next_computed = Vec::new();
            if i == 0 {
                sources.extend(support.iter().map(|&v| RowSource::Attribute(v as usize)));
            } else {
                let width = model.layers[i - 1].spec.output_width();
                let use_cache = cacheable(model, i - 1);
                for &v in &support {
                    let hit = match cache {
                        Some(c) if use_cache => {
                            let found = c.lookup(i - 1, v as usize, self.graph.version(), self.model_id);
                            if found.is_none() {
                                cache_misses += 1;
                            }
                            found
                        }
                        _ => None,
                    };
                    match hit {
                        Some(vec) => {
                            if vec.len() != width {
                                return Err(Error::Cache(format!(
                                    "corrupt entry for node {v} at layer {}: width {} but layer outputs {width}",
                                    i - 1,
                                    vec.len()
                                )));
                            }
                            sources.push(RowSource::Cached(visited.len()));
                            visited.push(v);
                            cached_data.extend_from_slice(vec);
                        }
                        None => {
                            sources.push(RowSource::Computed(next_computed.len()));
                            next_computed.push(v);
                        }
                    }
                }
            }
            let cached_rows = DenseMatrix::from_vec(
                visited.len(),
                if i == 0 { 0 } else { model.layers[i - 1].spec.output_width() },
                cached_data,
            )?;
            layers.push(LayerPlan {
                computed: computed.len(),
                support,
                csr,
                sources,
                visited,
                cached_rows,
                cache_misses,
            });
            computed = next_computed;
        }
        layers.reverse();
        Ok(BatchPlan {
            layers,
            unique_targets,
            output_rows,
        })
    }

    /// Expands `computed` by `hops` hops. Rows of the local operator are
    /// filled for every node closer than `hops`, with neighbor entries in
    /// the global operator's order.
    fn expand(&self, computed: &[u32], hops: usize, cap: Option<usize>, seed: u64, depth: u64) -> (Vec<u32>, CsrMatrix) {
        let mut local: HashMap<u32, u32> = computed
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i as u32))
            .collect();
        let mut support = computed.to_vec();
        let mut rows: Vec<Vec<(u32, f32)>> = Vec::new();
        let mut frontier = 0..support.len();
        let mut sample = Vec::new();
        for _ in 0..hops {
            let end = support.len();
            for idx in frontier.clone() {
                let v = support[idx];
                self.sampled_row(v as usize, cap, seed, depth, &mut sample);
                let mut row = Vec::with_capacity(sample.len());
                for &(u, w) in &sample {
                    let id = *local.entry(u).or_insert_with(|| {
                        support.push(u);
                        (support.len() - 1) as u32
                    });
                    row.push((id, w));
                }
                rows.push(row);
            }
            frontier = end..support.len();
        }
        let m = support.len();
        let mut indptr = Vec::with_capacity(m + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in 0..m {
            if let Some(row) = rows.get(r) {
                for &(c, w) in row {
                    indices.push(c);
                    values.push(w);
                }
            }
            indptr.push(indices.len());
        }
        (support, CsrMatrix { nrows: m, ncols: m, indptr, indices, values })
    }

    fn sampled_row(&self, v: usize, cap: Option<usize>, seed: u64, depth: u64, out: &mut Vec<(u32, f32)>) {
        out.clear();
        let (idx, val) = self.adj.csr.row(v);
        let deg = idx.len();
        match cap {
            Some(cap) if cap < deg => {
                if cap == 0 {
                    return;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::mix(seed, depth, v as u64));
                let mut picks = rand::seq::index::sample(&mut rng, deg, cap).into_vec();
                picks.sort_unstable();
                let scale = deg as f32 / cap as f32;
                out.extend(picks.into_iter().map(|p| (idx[p], val[p] * scale)));
            }
            _ => out.extend(idx.iter().copied().zip(val.iter().copied())),
        }
    }

    /// Runs a plan and returns the logits of its unique targets together
    /// with every layer's computed output.
    pub fn execute(&self, plan: &BatchPlan, counter: Option<&MacCounter>) -> Result<Vec<DenseMatrix>> {
        let attrs = self.graph.attributes();
        let mut outputs: Vec<DenseMatrix> = Vec::with_capacity(plan.layers.len());
        for (i, lp) in plan.layers.iter().enumerate() {
            let layer = &self.model.layers[i];
            let width = layer.spec.in_dim;
            let mut h = DenseMatrix::zeros(lp.support.len(), width);
            for (r, src) in lp.sources.iter().enumerate() {
                let row = match *src {
                    RowSource::Attribute(v) => attrs.row(v),
                    RowSource::Cached(c) => lp.cached_rows.row(c),
                    RowSource::Computed(c) => outputs[i - 1].row(c),
                };
                h.row_mut(r).copy_from_slice(row);
            }
            outputs.push(layer_forward_rows(layer, &lp.csr, &h, lp.computed, false, None, counter)?);
        }
        Ok(outputs)
    }

    /// Plans, executes and (optionally) writes back to the cache.
    pub fn run(
        &self,
        req: &BatchRequest,
        mut cache: Option<&mut HiddenFeatureCache>,
        counter: Option<&MacCounter>,
    ) -> Result<BatchOutput> {
        let start = Instant::now();
        let local = MacCounter::new();
        let plan = self.plan(req, cache.as_deref())?;
        let outputs = self.execute(&plan, Some(&local))?;
        let top = outputs.last().expect("model has layers");
        let logits = top.gather_rows(&plan.output_rows);
        if let Some(c) = cache.as_deref_mut() {
            if req.store_roots || req.store_all {
                self.write_back(&plan, &outputs, req.store_all, c)?;
            }
        }
        let latency_us = start.elapsed().as_micros() as u64;
        if let Some(c) = counter {
            c.add_spmm(local.spmm_macs());
            c.add_matmul(local.matmul_macs());
        }
        let layers: Vec<LayerStats> = plan
            .layers
            .iter()
            .enumerate()
            .map(|(i, lp)| LayerStats {
                layer: i,
                supports: lp.support.len(),
                computed: lp.computed,
                cache_hits: lp.visited.len(),
                cache_misses: lp.cache_misses,
            })
            .collect();
        let stats = BatchStats {
            targets: req.targets.len(),
            cache_hits: layers.iter().map(|l| l.cache_hits).sum(),
            cache_misses: layers.iter().map(|l| l.cache_misses).sum(),
            layers,
            macs: local.measured_macs(),
            latency_us,
        };
        Ok(BatchOutput { logits, stats })
    }

    fn write_back(&self, plan: &BatchPlan, outputs: &[DenseMatrix], all: bool, cache: &mut HiddenFeatureCache) -> Result<()> {
        let version = self.graph.version();
        for (i, out) in outputs.iter().enumerate() {
            if !cacheable(self.model, i) {
                continue;
            }
            let nodes = plan.computed_nodes(i);
            if all {
                for (r, &v) in nodes.iter().enumerate() {
                    cache.store(i, v as usize, out.row(r), version, self.model_id)?;
                }
            } else {
                let pos: HashMap<u32, usize> = nodes.iter().enumerate().map(|(r, &v)| (v, r)).collect();
                for t in &plan.unique_targets {
                    if let Some(&r) = pos.get(t) {
                        cache.store(i, *t as usize, out.row(r), version, self.model_id)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds the plan of one request.
pub fn build_batch_plan(
    g: &Graph,
    adj: &NormalizedAdjacency,
    model: &GnnModel,
    req: &BatchRequest,
    cache: Option<&HiddenFeatureCache>,
) -> Result<BatchPlan> {
    BatchEngine::new(model, g, adj)?.plan(req, cache)
}

/// Logits of the requested targets, in request order.
pub fn batched_inference(
    model: &GnnModel,
    g: &Graph,
    adj: &NormalizedAdjacency,
    req: &BatchRequest,
    cache: Option<&mut HiddenFeatureCache>,
) -> Result<BatchOutput> {
    BatchEngine::new(model, g, adj)?.run(req, cache, None)
}

#[cfg(test)]
mod tests;
