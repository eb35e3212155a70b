//! Subcommand bodies.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use gnnprune_core::cost::{batched_cost, full_cost, model_dims, CostReport};
use gnnprune_core::graph::{load_graph, normalize, save_graph, save_graph_json, training_graph, Graph, Split};
use gnnprune_core::infer::{full_inference, BatchEngine, BatchRequest, BatchStats, HiddenFeatureCache};
use gnnprune_core::instrument::MacCounter;
use gnnprune_core::model::{fold_mask, load_model, save_model, GnnModel};
use gnnprune_core::prune::{prune_model, PruneReport, Scheme};
use gnnprune_core::seeds;
use gnnprune_core::tensor::DenseMatrix;
use gnnprune_core::train::{evaluate, f1_micro, predict, retrain_logged, train_logged, TrainRun};
use gnnprune_core::Error;
use serde::Serialize;

use crate::config::{BenchVariant, InferMode, RunConfig};

pub struct Inputs {
    pub config: Option<PathBuf>,
    pub graph: Option<PathBuf>,
}

impl Inputs {
    fn load(&self) -> Result<(RunConfig, Graph)> {
        let cfg = RunConfig::load(self.config.as_deref())?;
        let g = match &self.graph {
            Some(p) => load_graph(p).with_context(|| format!("loading graph {}", p.display()))?,
            None => cfg.graph.build(cfg.seed)?,
        };
        Ok((cfg, g))
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn load(path: &Path) -> Result<GnnModel> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn test_f1(model: &GnnModel, g: &Graph, cfg: &RunConfig) -> Result<f64> {
    Ok(evaluate(model, g, &normalize(g, cfg.train.norm), Split::Test)?)
}

fn targets_f1(logits: &DenseMatrix, g: &Graph, targets: &[usize]) -> Result<f64> {
    Ok(f1_micro(&predict(logits, g.labels().is_multi()), &g.labels().gather(targets))?)
}

/// Nearest-rank percentile of unsorted samples.
fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[rank - 1]
}

#[derive(Serialize)]
struct GraphSummary {
    nodes: usize,
    edges: usize,
    attr_dim: usize,
    classes: usize,
    avg_degree: f64,
    max_degree: usize,
    isolated: usize,
}

pub fn synth(config: Option<&Path>, out: &Path, json: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let g = cfg.graph.build(cfg.seed)?;
    save_graph(&g, out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(j) = json {
        save_graph_json(&g, j).with_context(|| format!("writing {}", j.display()))?;
    }
    let d = g.degree_stats()?;
    print_json(&GraphSummary {
        nodes: g.num_nodes(),
        edges: g.num_edges(),
        attr_dim: g.attr_dim(),
        classes: g.num_classes(),
        avg_degree: d.avg_degree,
        max_degree: d.max_degree,
        isolated: d.isolated_count,
    })
}

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: usize,
    best_val_f1: f64,
    test_f1: f64,
    params: usize,
}

fn summarize(run: &TrainRun, g: &Graph, cfg: &RunConfig) -> Result<TrainSummary> {
    Ok(TrainSummary {
        best_epoch: run.best_epoch,
        best_val_f1: run.best_val_f1,
        test_f1: test_f1(&run.model, g, cfg)?,
        params: run.model.num_params(),
    })
}

pub fn train(inputs: &Inputs, out: &Path, log: Option<&Path>) -> Result<()> {
    let (cfg, g) = inputs.load()?;
    let specs = cfg.arch.specs(&g)?;
    let run = train_logged(&g, &specs, &cfg.train_config())?;
    save_model(&run.model, out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(l) = log {
        write(l, run.log_csv())?;
    }
    print_json(&summarize(&run, &g, &cfg)?)
}

pub struct PruneArgs {
    pub model: PathBuf,
    pub out: PathBuf,
    pub report: Option<PathBuf>,
    pub scheme: Option<Scheme>,
    pub eta: Option<f64>,
    pub retrain: bool,
    pub retrain_log: Option<PathBuf>,
}

#[derive(Serialize)]
struct PruneRun {
    #[serde(flatten)]
    report: PruneReport,
    params_before: usize,
    params_after: usize,
    test_f1_before: f64,
    test_f1_pruned: f64,
    retrain: Option<TrainSummary>,
}

/// Prunes, folds and optionally fine-tunes; shared by `prune` and `bench`.
fn prune_pipeline(
    cfg: &RunConfig,
    g: &Graph,
    model: &GnnModel,
    scheme: Scheme,
    eta: f64,
    retrain: bool,
) -> Result<(GnnModel, PruneRun, Option<TrainRun>)> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Config(format!("eta {eta} outside (0, 1]")).into());
    }
    let g_train = training_graph(g)?.graph;
    let (masked, report) = prune_model(model, &g_train, scheme, eta, &cfg.prune.schedule, &cfg.prune_options())?;
    let folded = fold_mask(&masked)?;
    let mut run = PruneRun {
        report,
        params_before: model.num_params(),
        params_after: folded.num_params(),
        test_f1_before: test_f1(model, g, cfg)?,
        test_f1_pruned: test_f1(&folded, g, cfg)?,
        retrain: None,
    };
    if !retrain {
        return Ok((folded, run, None));
    }
    let tr = retrain_logged(g, &folded, &cfg.retrain_config())?;
    run.retrain = Some(summarize(&tr, g, cfg)?);
    Ok((tr.model.clone(), run, Some(tr)))
}

pub fn prune(inputs: &Inputs, args: &PruneArgs) -> Result<()> {
    let (cfg, g) = inputs.load()?;
    let model = load(&args.model)?;
    let scheme = args.scheme.unwrap_or(cfg.prune.scheme);
    let eta = args.eta.unwrap_or(cfg.prune.eta);
    let (out_model, run, tr) = prune_pipeline(&cfg, &g, &model, scheme, eta, args.retrain)?;
    save_model(&out_model, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(r) = &args.report {
        write_json(r, &run)?;
    }
    if let (Some(l), Some(tr)) = (&args.retrain_log, &tr) {
        write(l, tr.log_csv())?;
    }
    print_json(&serde_json::json!({
        "params_before": run.params_before,
        "params_after": run.params_after,
        "test_f1_pruned": run.test_f1_pruned,
        "test_f1_retrained": run.retrain.as_ref().map(|r| r.test_f1),
    }))
}

pub struct InferArgs {
    pub model: PathBuf,
    pub mode: Option<InferMode>,
    pub split: String,
    pub out: PathBuf,
    pub stats: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub warm_cache_train_val: bool,
    pub cap_hop2: Option<usize>,
    pub batch_size: Option<usize>,
}

fn split_nodes(g: &Graph, split: &str) -> Result<Vec<usize>> {
    Ok(match split {
        "train" => g.nodes_in(Split::Train),
        "val" => g.nodes_in(Split::Val),
        "test" => g.nodes_in(Split::Test),
        "all" => (0..g.num_nodes()).collect(),
        other => return Err(Error::Config(format!("unknown split {other:?}")).into()),
    })
}

#[derive(Serialize)]
struct InferReport {
    mode: InferMode,
    targets: usize,
    batch_size: Option<usize>,
    caps: Option<Vec<Option<usize>>>,
    f1_micro: f64,
    macs: u64,
    macs_per_node: f64,
    latency_us_total: u64,
    latency_us_p50: f64,
    latency_us_p95: f64,
    /// Computed rows per layer summed over batches.
    computed_supports: Vec<usize>,
    cache_hits: usize,
    cache_misses: usize,
    warm_batches: usize,
    batches: Vec<BatchStats>,
}

/// Batched serving of `targets` in chunks; each chunk gets its own plan seed.
fn serve(
    engine: &BatchEngine,
    targets: &[usize],
    batch_size: usize,
    caps: &[Option<usize>],
    seed: u64,
    mut cache: Option<&mut HiddenFeatureCache>,
    store_all: bool,
) -> Result<(DenseMatrix, Vec<BatchStats>)> {
    let mut rows: Vec<f32> = Vec::new();
    let mut cols = 0;
    let mut stats = Vec::new();
    for (b, chunk) in targets.chunks(batch_size.max(1)).enumerate() {
        let req = BatchRequest {
            neighbor_caps: caps.to_vec(),
            seed: seeds::mix(seed, b as u64, 0),
            use_cache: cache.is_some(),
            store_roots: cache.is_some(),
            store_all: cache.is_some() && store_all,
            ..BatchRequest::new(chunk.to_vec())
        };
        let out = engine.run(&req, cache.as_deref_mut(), None)?;
        cols = out.logits.cols();
        rows.extend_from_slice(out.logits.as_slice());
        stats.push(out.stats);
    }
    Ok((DenseMatrix::from_vec(targets.len(), cols, rows)?, stats))
}

pub fn infer(inputs: &Inputs, args: &InferArgs) -> Result<()> {
    let (cfg, g) = inputs.load()?;
    let model = load(&args.model)?;
    let adj = normalize(&g, cfg.train.norm);
    let targets = split_nodes(&g, &args.split)?;
    let mode = args.mode.unwrap_or(cfg.infer.mode);
    let (logits, report) = match mode {
        InferMode::Full => {
            let counter = MacCounter::new();
            let start = Instant::now();
            let all = full_inference(&model, &g, &adj, Some(&counter))?;
            let us = start.elapsed().as_micros() as u64;
            let logits = all.gather_rows(&targets);
            let macs = counter.measured_macs();
            let report = InferReport {
                mode,
                targets: targets.len(),
                batch_size: None,
                caps: None,
                f1_micro: targets_f1(&logits, &g, &targets)?,
                macs,
                macs_per_node: macs as f64 / g.num_nodes() as f64,
                latency_us_total: us,
                latency_us_p50: us as f64,
                latency_us_p95: us as f64,
                computed_supports: vec![g.num_nodes(); model.num_layers()],
                cache_hits: 0,
                cache_misses: 0,
                warm_batches: 0,
                batches: Vec::new(),
            };
            (logits, report)
        }
        InferMode::Batched => {
            let batch_size = args.batch_size.unwrap_or(cfg.infer.batch_size);
            if batch_size == 0 {
                return Err(Error::Config("batch size must be positive".into()).into());
            }
            let mut caps = cfg.infer.caps.clone();
            if let Some(c) = args.cap_hop2 {
                if caps.len() < 2 {
                    caps.resize(2, None);
                }
                caps[1] = Some(c);
            }
            let mut cache = match &args.cache {
                Some(p) if p.exists() => Some(HiddenFeatureCache::load(p)?),
                Some(_) => Some(HiddenFeatureCache::new(cfg.infer.cache.capacity).with_max_age(cfg.infer.cache.max_age)),
                None if args.warm_cache_train_val => {
                    Some(HiddenFeatureCache::new(cfg.infer.cache.capacity).with_max_age(cfg.infer.cache.max_age))
                }
                None => None,
            };
            let engine = BatchEngine::new(&model, &g, &adj)?;
            let seed = cfg.plan_seed();
            let mut warm_batches = 0;
            if args.warm_cache_train_val {
                let mut warm = g.nodes_in(Split::Train);
                warm.extend(g.nodes_in(Split::Val));
                let (_, s) = serve(&engine, &warm, batch_size, &caps, seeds::mix(seed, u64::MAX, 1), cache.as_mut(), false)?;
                warm_batches = s.len();
            }
            let (logits, batches) =
                serve(&engine, &targets, batch_size, &caps, seed, cache.as_mut(), cfg.infer.cache.store_all)?;
            if let (Some(p), Some(c)) = (&args.cache, &cache) {
                c.save(p)?;
            }
            let macs: u64 = batches.iter().map(|b| b.macs).sum();
            let lat: Vec<f64> = batches.iter().map(|b| b.latency_us as f64).collect();
            let mut computed = vec![0; model.num_layers()];
            for b in &batches {
                for l in &b.layers {
                    computed[l.layer] += l.computed;
                }
            }
            let report = InferReport {
                mode,
                targets: targets.len(),
                batch_size: Some(batch_size),
                caps: Some(caps),
                f1_micro: targets_f1(&logits, &g, &targets)?,
                macs,
                macs_per_node: macs as f64 / targets.len().max(1) as f64,
                latency_us_total: batches.iter().map(|b| b.latency_us).sum(),
                latency_us_p50: percentile(&lat, 0.5),
                latency_us_p95: percentile(&lat, 0.95),
                computed_supports: computed,
                cache_hits: batches.iter().map(|b| b.cache_hits).sum(),
                cache_misses: batches.iter().map(|b| b.cache_misses).sum(),
                warm_batches,
                batches,
            };
            (logits, report)
        }
    };
    write(&args.out, predictions_csv(&logits, &targets, g.labels().is_multi()))?;
    if let Some(s) = &args.stats {
        write_json(s, &report)?;
    }
    print_json(&serde_json::json!({
        "mode": report.mode,
        "targets": report.targets,
        "f1_micro": report.f1_micro,
        "cache_hits": report.cache_hits,
    }))
}

fn predictions_csv(logits: &DenseMatrix, targets: &[usize], multi: bool) -> String {
    let mut s = String::from("node,prediction\n");
    match predict(logits, multi) {
        gnnprune_core::graph::Labels::Single(p) => {
            for (v, c) in targets.iter().zip(p) {
                let _ = writeln!(s, "{v},{c}");
            }
        }
        gnnprune_core::graph::Labels::Multi { num_classes, bits } => {
            for (v, row) in targets.iter().zip(bits.chunks(num_classes.max(1))) {
                let on: Vec<String> = row.iter().enumerate().filter(|(_, &b)| b != 0).map(|(j, _)| j.to_string()).collect();
                let _ = writeln!(s, "{v},{}", on.join(";"));
            }
        }
    }
    s
}

pub struct EstimateArgs {
    pub model: PathBuf,
    pub mode: Option<InferMode>,
    pub degree: Option<f64>,
    pub nodes: Option<usize>,
    pub cache_fraction: f64,
    pub out: Option<PathBuf>,
}

fn cost_for(model: &GnnModel, mode: InferMode, nodes: usize, degree: f64, caps: &[Option<usize>], cache_fraction: f64) -> Result<CostReport> {
    let dims = model_dims(model);
    Ok(match mode {
        InferMode::Full => full_cost(&dims, nodes, degree)?,
        InferMode::Batched => batched_cost(&dims, degree, caps, cache_fraction)?,
    })
}

pub fn estimate(inputs: &Inputs, args: &EstimateArgs) -> Result<()> {
    let cfg = RunConfig::load(inputs.config.as_deref())?;
    let model = load(&args.model)?;
    let mode = args.mode.unwrap_or(cfg.infer.mode);
    let (nodes, degree) = match (args.nodes, args.degree) {
        (Some(n), Some(d)) => (n, d),
        (n, d) => {
            let g = match &inputs.graph {
                Some(p) => load_graph(p).with_context(|| format!("loading graph {}", p.display()))?,
                None => cfg.graph.build(cfg.seed)?,
            };
            (n.unwrap_or(g.num_nodes()), d.unwrap_or(g.degree_stats()?.avg_degree))
        }
    };
    let report = cost_for(&model, mode, nodes, degree, &cfg.infer.caps, args.cache_fraction)?;
    if let Some(o) = &args.out {
        write_json(o, &report)?;
    }
    println!("{:>5}  {:>14}  {:>16}  {:>16}", "layer", "supports", "macs_per_node", "memory_bytes");
    for l in &report.layers {
        println!("{:>5}  {:>14.2}  {:>16.1}  {:>16.0}", l.layer, l.supports, l.macs_per_node, l.memory_bytes);
    }
    println!("{:>5}  {:>14}  {:>16.1}  {:>16.0}", "total", "", report.total_macs_per_node, report.memory_bytes);
    Ok(())
}

pub const BENCH_HEADER: &str = "dataset,scheme,eta,mode,macs_per_node,mem_bytes,latency_us_p50,latency_us_p95,f1_micro";

struct BenchRow {
    scheme: String,
    eta: f64,
    mode: String,
    macs_per_node: f64,
    mem_bytes: f64,
    p50: f64,
    p95: f64,
    f1: f64,
}

/// Per-node latency samples of full inference.
fn time_full(model: &GnnModel, g: &Graph, cfg: &RunConfig) -> Result<(Vec<f64>, u64, DenseMatrix)> {
    let adj = normalize(g, cfg.train.norm);
    let mut samples = Vec::new();
    let mut macs = 0;
    let mut logits = None;
    for r in 0..cfg.bench.warmup + cfg.bench.repeats {
        let counter = MacCounter::new();
        let start = Instant::now();
        let out = full_inference(model, g, &adj, Some(&counter))?;
        let us = start.elapsed().as_secs_f64() * 1e6;
        if r >= cfg.bench.warmup {
            samples.push(us / g.num_nodes() as f64);
        }
        macs = counter.measured_macs();
        logits = Some(out);
    }
    Ok((samples, macs, logits.expect("at least one repeat")))
}

/// Per-node latency samples of uncached batched inference over `targets`.
fn time_batched(
    model: &GnnModel,
    g: &Graph,
    cfg: &RunConfig,
    targets: &[usize],
    batch_size: usize,
) -> Result<(Vec<f64>, u64, DenseMatrix)> {
    let adj = normalize(g, cfg.train.norm);
    let engine = BatchEngine::new(model, g, &adj)?;
    let mut samples = Vec::new();
    let mut macs = 0;
    let mut logits = None;
    for r in 0..cfg.bench.warmup + cfg.bench.repeats {
        let (out, stats) = serve(&engine, targets, batch_size, &cfg.infer.caps, cfg.plan_seed(), None, false)?;
        if r >= cfg.bench.warmup {
            samples.extend(stats.iter().map(|s| s.latency_us as f64 / s.targets.max(1) as f64));
        }
        macs = stats.iter().map(|s| s.macs).sum();
        logits = Some(out);
    }
    Ok((samples, macs, logits.expect("at least one repeat")))
}

fn bench_rows(model: &GnnModel, g: &Graph, cfg: &RunConfig, scheme: &str, eta: f64, batch_sizes: &[usize]) -> Result<Vec<BenchRow>> {
    let test = g.nodes_in(Split::Test);
    let degree = g.degree_stats()?.avg_degree;
    let mut rows = Vec::new();

    let (samples, macs, logits) = time_full(model, g, cfg)?;
    rows.push(BenchRow {
        scheme: scheme.into(),
        eta,
        mode: "full".into(),
        macs_per_node: macs as f64 / g.num_nodes() as f64,
        mem_bytes: cost_for(model, InferMode::Full, g.num_nodes(), degree, &cfg.infer.caps, 0.0)?.memory_bytes,
        p50: percentile(&samples, 0.5),
        p95: percentile(&samples, 0.95),
        f1: targets_f1(&logits.gather_rows(&test), g, &test)?,
    });

    let mem = cost_for(model, InferMode::Batched, g.num_nodes(), degree, &cfg.infer.caps, 0.0)?.memory_bytes;
    let mut sizes = vec![cfg.infer.batch_size];
    sizes.extend(batch_sizes.iter().copied().filter(|&b| b != cfg.infer.batch_size));
    for (i, &bs) in sizes.iter().enumerate() {
        if bs == 0 {
            return Err(Error::Config("batch size must be positive".into()).into());
        }
        let (samples, macs, logits) = time_batched(model, g, cfg, &test, bs)?;
        rows.push(BenchRow {
            scheme: scheme.into(),
            eta,
            mode: if i == 0 { "batched".into() } else { format!("batched@{bs}") },
            macs_per_node: macs as f64 / test.len().max(1) as f64,
            mem_bytes: mem,
            p50: percentile(&samples, 0.5),
            p95: percentile(&samples, 0.95),
            f1: targets_f1(&logits, g, &test)?,
        });
    }
    Ok(rows)
}

pub fn bench(inputs: &Inputs, model: Option<&Path>, dataset: Option<String>, batch_sizes: Vec<usize>, out: &Path) -> Result<()> {
    let (cfg, g) = inputs.load()?;
    let dataset = dataset.unwrap_or_else(|| cfg.bench.dataset.clone());
    if dataset.contains([',', '"', '\n']) {
        return Err(Error::Config("dataset name must not contain commas, quotes or newlines".into()).into());
    }
    let mut sweep = cfg.bench.batch_sizes.clone();
    sweep.extend(batch_sizes);
    let base = match model {
        Some(p) => load(p)?,
        None => train_logged(&g, &cfg.arch.specs(&g)?, &cfg.train_config())?.model,
    };
    let mut rows = bench_rows(&base, &g, &cfg, "none", 1.0, &sweep)?;
    for BenchVariant { scheme, eta } in &cfg.bench.variants {
        let (pruned, _, _) = prune_pipeline(&cfg, &g, &base, *scheme, *eta, true)?;
        let name = serde_json::to_value(scheme)?.as_str().unwrap_or_default().to_owned();
        rows.extend(bench_rows(&pruned, &g, &cfg, &name, *eta, &sweep)?);
    }
    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for r in &rows {
        let _ = writeln!(
            csv,
            "{dataset},{},{},{},{:.1},{:.0},{:.3},{:.3},{:.6}",
            r.scheme, r.eta, r.mode, r.macs_per_node, r.mem_bytes, r.p50, r.p95, r.f1
        );
    }
    write(out, &csv)?;
    print!("{csv}");
    Ok(())
}
