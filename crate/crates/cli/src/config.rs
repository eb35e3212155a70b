//! Run configuration: one JSON document drives every subcommand.

use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gnnprune_core::graph::Graph;
use gnnprune_core::model::{GnnModel, LayerSpec};
use gnnprune_core::prune::{PenaltySchedule, PruneOptions, Scheme};
use gnnprune_core::seeds;
use gnnprune_core::synth::{self, CorrelatedParams, SbmParams};
use gnnprune_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream used by the pipeline.
    pub seed: u64,
    pub graph: GraphSource,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub prune: PruneConfig,
    pub infer: InferConfig,
    pub bench: BenchConfig,
}

/// Where the graph comes from. Exactly one key, e.g. `{"sbm": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    Sbm(SbmParams),
    Tree(TreeParams),
    Circulant(CirculantParams),
    PowerLaw(PowerLawParams),
    Correlated(CorrelatedParams),
    File(String),
}

impl Default for GraphSource {
    fn default() -> Self {
        GraphSource::Sbm(SbmParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub degree: usize,
    pub depth: usize,
    pub attr_dim: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { degree: 2, depth: 4, attr_dim: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CirculantParams {
    pub n: usize,
    pub degree: usize,
    pub attr_dim: usize,
}

impl Default for CirculantParams {
    fn default() -> Self {
        Self { n: 1000, degree: 8, attr_dim: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerLawParams {
    pub n: usize,
    /// Edges attached per new node.
    pub m: usize,
    pub attr_dim: usize,
}

impl Default for PowerLawParams {
    fn default() -> Self {
        Self { n: 2000, m: 4, attr_dim: 16 }
    }
}

impl GraphSource {
    /// Generated graphs take their seed from the `graph` substream unless
    /// the section sets a nonzero one.
    pub fn build(&self, root: u64) -> Result<Graph> {
        let seed = seeds::substream(root, "graph");
        let g = match self {
            GraphSource::Sbm(p) => {
                let mut p = p.clone();
                if p.seed == 0 {
                    p.seed = seed;
                }
                synth::sbm(&p)?
            }
            GraphSource::Tree(p) => synth::regular_tree(p.degree, p.depth, p.attr_dim, seed)?,
            GraphSource::Circulant(p) => synth::circulant(p.n, p.degree, p.attr_dim, seed)?,
            GraphSource::PowerLaw(p) => synth::power_law(p.n, p.m, p.attr_dim, seed)?,
            GraphSource::Correlated(p) => {
                let mut p = p.clone();
                if p.seed == 0 {
                    p.seed = seed;
                }
                synth::correlated_channels(&p)?
            }
            GraphSource::File(path) => gnnprune_core::graph::load_graph(path)
                .with_context(|| format!("loading graph {path}"))?,
        };
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden: usize,
    /// Number of aggregating layers before the dense head.
    pub hops: usize,
    /// Explicit layer list; overrides `hidden` and `hops` when present.
    pub layers: Option<Vec<LayerSpec>>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { hidden: 64, hops: 2, layers: None }
    }
}

impl ArchConfig {
    pub fn specs(&self, g: &Graph) -> Result<Vec<LayerSpec>> {
        if let Some(layers) = &self.layers {
            if layers.is_empty() {
                bail!(gnnprune_core::Error::Config("arch.layers is empty".into()));
            }
            return Ok(layers.clone());
        }
        if self.hidden == 0 {
            bail!(gnnprune_core::Error::Config("arch.hidden must be positive".into()));
        }
        Ok(GnnModel::sage_specs(g.attr_dim(), self.hidden, self.hops, g.num_classes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub scheme: Scheme,
    pub eta: f64,
    pub schedule: PenaltySchedule,
    pub options: PruneOptions,
    /// Fine-tuning after pruning; defaults to the `train` section.
    pub retrain: Option<TrainConfig>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Full,
            eta: 0.5,
            schedule: PenaltySchedule::default(),
            options: PruneOptions::default(),
            retrain: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InferMode {
    Full,
    Batched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub mode: InferMode,
    pub batch_size: usize,
    /// Neighbour cap per aggregating layer, counted from the output side;
    /// `null` means unlimited.
    pub caps: Vec<Option<usize>>,
    pub cache: CacheConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            mode: InferMode::Batched,
            batch_size: 512,
            caps: gnnprune_core::infer::default_caps(),
            cache: CacheConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub capacity: usize,
    /// Accepted distance in graph versions between entry and query.
    pub max_age: u64,
    /// Store every computed row instead of only the batch roots.
    pub store_all: bool,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { capacity: 1 << 20, max_age: 0, store_all: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub dataset: String,
    pub repeats: usize,
    pub warmup: usize,
    /// Pruned variants to compare against the unpruned baseline.
    pub variants: Vec<BenchVariant>,
    /// Extra batch sizes swept in batched mode.
    pub batch_sizes: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dataset: "sbm".into(),
            repeats: 5,
            warmup: 1,
            variants: vec![
                BenchVariant { scheme: Scheme::Full, eta: 0.5 },
                BenchVariant { scheme: Scheme::Batched, eta: 0.25 },
            ],
            batch_sizes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchVariant {
    pub scheme: Scheme,
    pub eta: f64,
}

impl RunConfig {
    /// Reads a config from a file, or from stdin when `path` is `-`.
    /// A missing path yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            None => return Ok(Self::default()),
            Some(p) if p == Path::new("-") => {
                let mut s = String::new();
                std::io::stdin().read_to_string(&mut s)?;
                s
            }
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
        };
        let cfg: RunConfig = serde_json::from_str(&text).map_err(gnnprune_core::Error::from)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(gnnprune_core::Error::Config(m.into()).into());
        if !(self.prune.eta > 0.0 && self.prune.eta <= 1.0) {
            return bad("prune.eta must lie in (0, 1]");
        }
        if self.infer.batch_size == 0 {
            return bad("infer.batch_size must be positive");
        }
        if self.bench.repeats == 0 {
            return bad("bench.repeats must be positive");
        }
        if self.bench.variants.iter().any(|v| !(v.eta > 0.0 && v.eta <= 1.0)) {
            return bad("bench variant eta must lie in (0, 1]");
        }
        self.train.validate()?;
        self.prune.schedule.validate()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: seeds::substream(self.seed, "train"), ..self.train.clone() }
    }

    pub fn retrain_config(&self) -> TrainConfig {
        let base = self.prune.retrain.clone().unwrap_or_else(|| self.train.clone());
        TrainConfig { seed: seeds::substream(self.seed, "retrain"), ..base }
    }

    pub fn prune_options(&self) -> PruneOptions {
        PruneOptions { seed: seeds::substream(self.seed, "prune"), ..self.prune.options.clone() }
    }

    pub fn plan_seed(&self) -> u64 {
        seeds::substream(self.seed, "plan")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 1, "bogus": 2}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"infer": {"batchsize": 2}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"graph": {"sbm": {"n": 10, "q": 1}}}"#).is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        assert_eq!(cfg.infer.batch_size, 512);
        assert_eq!(cfg.infer.caps, vec![None, Some(32)]);
    }

    #[test]
    fn substreams_differ() {
        let cfg = RunConfig { seed: 7, ..Default::default() };
        let s = [cfg.train_config().seed, cfg.retrain_config().seed, cfg.prune_options().seed, cfg.plan_seed()];
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
    }
}
