use gnnprune_core::cost::{batched_cost, full_cost, model_dims};
use gnnprune_core::graph::{load_graph, normalize, save_graph, training_graph, NormScheme, Split};
use gnnprune_core::infer::{full_inference, BatchEngine, BatchRequest, HiddenFeatureCache};
use gnnprune_core::instrument::MacCounter;
use gnnprune_core::model::{fold_mask, load_model, save_model, GnnModel};
use gnnprune_core::prune::{prune_model, PenaltySchedule, PruneOptions, Scheme};
use gnnprune_core::synth::{sbm, SbmParams};
use gnnprune_core::train::{evaluate, retrain, train, TrainConfig};

fn fixture() -> gnnprune_core::graph::Graph {
    sbm(&SbmParams { n: 800, attr_dim: 24, p_in: 0.03, p_out: 0.003, signal: 0.4, seed: 5, ..Default::default() }).unwrap()
}

#[test]
fn train_prune_fold_serve() {
    let g = fixture();
    let adj = normalize(&g, NormScheme::RowMean);
    let cfg = TrainConfig { epochs: 80, seed: 1, ..Default::default() };
    let model = train(&g, &GnnModel::sage_specs(24, 32, 2, 4), &cfg).unwrap();
    let base = evaluate(&model, &g, &adj, Split::Test).unwrap();
    assert!(base > 0.8, "{base}");

    let tg = training_graph(&g).unwrap().graph;
    let (mm, report) =
        prune_model(&model, &tg, Scheme::Full, 0.5, &PenaltySchedule::default(), &PruneOptions::default()).unwrap();
    assert_eq!(report.layers.len(), 2);
    let pruned = retrain(&g, &fold_mask(&mm).unwrap(), &cfg).unwrap();
    assert!(pruned.num_params() < model.num_params());
    assert!(evaluate(&pruned, &g, &adj, Split::Test).unwrap() >= base - 0.05);

    let full_counter = MacCounter::new();
    let full = full_inference(&pruned, &g, &adj, Some(&full_counter)).unwrap();
    let est = full_cost(&model_dims(&pruned), g.num_nodes(), g.degree_stats().unwrap().avg_degree).unwrap();
    assert!((est.total_macs_per_node * g.num_nodes() as f64 - full_counter.measured_macs() as f64).abs() < 1.0);

    let engine = BatchEngine::new(&pruned, &g, &adj).unwrap();
    let test = g.nodes_in(Split::Test);
    let mut cache = HiddenFeatureCache::new(10_000);
    for pass in 0..2 {
        for chunk in test.chunks(100) {
            let req = BatchRequest { use_cache: true, store_roots: true, ..BatchRequest::new(chunk.to_vec()) };
            let out = engine.run(&req, Some(&mut cache), None).unwrap();
            assert!(out.logits.max_abs_diff(&full.gather_rows(chunk)) <= 1e-5);
            if pass == 1 {
                assert!(out.stats.cache_hits >= chunk.len());
            }
        }
    }
    let b = batched_cost(&model_dims(&pruned), 5.0, &[None, Some(32)], 0.0).unwrap();
    assert_eq!(b.layers.len(), 3);
}

#[test]
fn artifacts_round_trip() {
    let dir = tempfile::TempDir::new().unwrap();
    let g = fixture();
    save_graph(&g, dir.path().join("g.grf")).unwrap();
    assert_eq!(load_graph(dir.path().join("g.grf")).unwrap(), g);

    let model = GnnModel::init(&GnnModel::sage_specs(24, 8, 2, 4), 3).unwrap();
    save_model(&model, dir.path().join("m.gnm")).unwrap();
    let back = load_model(dir.path().join("m.gnm")).unwrap();
    assert_eq!(back.fingerprint(), model.fingerprint());

    let adj = normalize(&g, NormScheme::RowMean);
    let engine = BatchEngine::new(&model, &g, &adj).unwrap();
    let mut cache = HiddenFeatureCache::new(100);
    let req = BatchRequest { use_cache: true, store_roots: true, ..BatchRequest::new(vec![1, 2, 3]) };
    engine.run(&req, Some(&mut cache), None).unwrap();
    cache.save(&dir.path().join("c.hfc")).unwrap();
    let loaded = HiddenFeatureCache::load(&dir.path().join("c.hfc")).unwrap();
    assert_eq!(loaded.len(), cache.len());
    assert!(loaded.lookup(0, 2, g.version(), engine.model_id()).is_some());
}
