use super::*;
use crate::graph::fixtures::t4;
use crate::graph::{normalize, NormScheme};
use crate::model::tests::random_graph;
use crate::model::{fold_mask, Activation, Combiner, LayerSpec, MaskedModel};
use crate::prune::{MaskScope, PruneMask};
use crate::synth::regular_tree;
use proptest::prelude::*;
use std::collections::BTreeSet;

fn set(v: &[u32]) -> BTreeSet<u32> {
    v.iter().copied().collect()
}

fn two_sage(in_dim: usize, hidden: usize, seed: u64) -> GnnModel {
    GnnModel::init(&[LayerSpec::sage(in_dim, hidden), LayerSpec::sage(2 * hidden, hidden)], seed).unwrap()
}

#[test]
fn t4_plan_supports() {
    let g = t4();
    let adj = normalize(&g, NormScheme::RowMean);
    for model in [two_sage(2, 2, 1), GnnModel::init(&GnnModel::sage_specs(2, 2, 2, 2), 1).unwrap()] {
        let l = model.num_layers();
        let plan = build_batch_plan(&g, &adj, &model, &BatchRequest::new(vec![0]), None).unwrap();
        assert_eq!(set(&plan.layers[l - 1].support), set(&[0, 1, 2]).into_iter().filter(|&v| l == 2 || v == 0).collect());
        assert_eq!(set(&plan.layers[1].support), set(&[0, 1, 2]));
        assert_eq!(set(&plan.layers[0].support), set(&[0, 1, 2, 3]));
        assert_eq!(set(plan.computed_nodes(0)), set(&[0, 1, 2]));

        let mut cache = HiddenFeatureCache::new(16);
        let id = model.fingerprint();
        cache.store(0, 2, &[0.5; 4], g.version(), id).unwrap();
        let req = BatchRequest { use_cache: true, ..BatchRequest::new(vec![0]) };
        let plan = build_batch_plan(&g, &adj, &model, &req, Some(&cache)).unwrap();
        assert_eq!(plan.layers[1].visited, vec![2]);
        assert_eq!(set(&plan.layers[0].support), set(&[0, 1, 2]));
        assert_eq!(set(plan.computed_nodes(0)), set(&[0, 1]));

        let capped = BatchRequest { neighbor_caps: vec![None, Some(0)], ..BatchRequest::new(vec![0]) };
        let plan = build_batch_plan(&g, &adj, &model, &capped, None).unwrap();
        assert_eq!(set(&plan.layers[0].support), set(&[0, 1, 2]));
    }
}

#[test]
fn invalid_requests() {
    let g = t4();
    let adj = normalize(&g, NormScheme::RowMean);
    let model = two_sage(2, 2, 1);
    assert!(build_batch_plan(&g, &adj, &model, &BatchRequest::new(vec![]), None).is_err());
    assert!(build_batch_plan(&g, &adj, &model, &BatchRequest::new(vec![4]), None).is_err());
    let stale_adj = normalize(&g, NormScheme::RowMean);
    let g2 = g.with_attributes(g.attributes().clone()).unwrap();
    assert!(build_batch_plan(&g2, &stale_adj, &model, &BatchRequest::new(vec![0]), None).is_err());
    assert!(build_batch_plan(&g, &adj, &two_sage(3, 2, 1), &BatchRequest::new(vec![0]), None).is_err());
}

#[test]
fn full_inference_examples() {
    let g = t4();
    let adj = normalize(&g, NormScheme::RowMean);
    let identity = GnnModel::new(vec![crate::model::Layer::new(
        LayerSpec::sage(2, 2),
        vec![crate::tensor::Matrix::identity(2), crate::tensor::Matrix::identity(2)],
    )
    .unwrap()])
    .unwrap();
    let out = full_inference(&identity, &g, &adj, None).unwrap();
    let expect = crate::model::layer_forward(&identity.layers[0], &adj, g.attributes(), false).unwrap();
    assert_eq!(out, expect);
    assert_eq!(out.row(0), &[1.0, 0.0, 0.5, 1.0]);

    let empty = g.induced(&[]).unwrap().graph;
    assert!(full_inference(&identity, &empty, &normalize(&empty, NormScheme::RowMean), None).is_err());

    let model = GnnModel::init(&GnnModel::sage_specs(2, 4, 2, 2), 3).unwrap();
    let mut mm = MaskedModel::new(model);
    mm.set_mask(1, PruneMask::from_kept(8, &[0, 3, 5], MaskScope::Layer)).unwrap();
    let folded = fold_mask(&mm).unwrap();
    let a = full_inference(&folded, &g, &adj, None).unwrap();
    let b = mm.forward(&adj, g.attributes()).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-5);
}

fn mixed_model(in_dim: usize, seed: u64) -> GnnModel {
    let specs = vec![
        LayerSpec { k_min: 0, k_max: 2, combiner: Combiner::Mean, activation: Activation::Relu, in_dim, out_dims: vec![3, 3, 3] },
        LayerSpec::sage(3, 2),
        LayerSpec::dense(4, 3, Activation::None),
    ];
    GnnModel::init(&specs, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn batched_equals_full(n in 2usize..256, deg in 0usize..8, seed in 0u64..1000, mixed in any::<bool>(), sym in any::<bool>(),
                           picks in prop::collection::vec(0usize..10_000, 1..40)) {
        let g = random_graph(n, deg, seed);
        let adj = normalize(&g, if sym { NormScheme::Sym } else { NormScheme::RowMean });
        let model = if mixed { mixed_model(5, seed) } else { GnnModel::init(&GnnModel::sage_specs(5, 6, 2, 3), seed).unwrap() };
        let full = full_inference(&model, &g, &adj, None).unwrap();
        let targets: Vec<usize> = picks.iter().map(|p| p % n).collect();
        let out = batched_inference(&model, &g, &adj, &BatchRequest::new(targets.clone()), None).unwrap();
        prop_assert_eq!(out.logits.rows(), targets.len());
        prop_assert!(out.logits.max_abs_diff(&full.gather_rows(&targets)) <= 1e-5);
    }

    #[test]
    fn cache_entries_never_grow_the_frontier(n in 10usize..120, seed in 0u64..1000, frac in 0.0f64..1.0,
                                              extra in prop::collection::vec(0usize..10_000, 1..10)) {
        let g = random_graph(n, 6, seed);
        let adj = normalize(&g, NormScheme::RowMean);
        let model = GnnModel::init(&GnnModel::sage_specs(5, 4, 2, 3), seed).unwrap();
        let engine = BatchEngine::new(&model, &g, &adj).unwrap();
        let targets: Vec<usize> = (0..n).filter(|v| v % 7 == 0).collect();
        let mut cache = HiddenFeatureCache::new(usize::MAX);
        let warm: Vec<usize> = (0..n).filter(|v| (*v as f64 / n as f64) < frac).collect();
        if !warm.is_empty() {
            engine.run(&BatchRequest { store_all: true, use_cache: false, ..BatchRequest::new(warm) }, Some(&mut cache), None).unwrap();
        }
        let req = BatchRequest { use_cache: true, ..BatchRequest::new(targets) };
        let before = engine.plan(&req, Some(&cache)).unwrap();
        let more: Vec<usize> = extra.iter().map(|e| e % n).collect();
        engine.run(&BatchRequest { store_all: true, ..BatchRequest::new(more) }, Some(&mut cache), None).unwrap();
        let after = engine.plan(&req, Some(&cache)).unwrap();
        for (a, b) in after.layers.iter().zip(&before.layers) {
            prop_assert!(a.computed <= b.computed);
            prop_assert!(a.support.len() <= b.support.len());
        }
    }
}

#[test]
fn cache_is_exact_with_and_without_caps() {
    let g = random_graph(300, 12, 4);
    let adj = normalize(&g, NormScheme::RowMean);
    let model = GnnModel::init(&GnnModel::sage_specs(5, 8, 2, 3), 4).unwrap();
    let engine = BatchEngine::new(&model, &g, &adj).unwrap();
    for caps in [vec![], vec![None, Some(3)]] {
        let batches: Vec<Vec<usize>> = (0..300).collect::<Vec<_>>().chunks(64).map(<[usize]>::to_vec).collect();
        let base = |b: &Vec<usize>| BatchRequest { neighbor_caps: caps.clone(), seed: 9, ..BatchRequest::new(b.clone()) };
        let plain: Vec<BatchOutput> = batches.iter().map(|b| engine.run(&base(b), None, None).unwrap()).collect();
        let mut cache = HiddenFeatureCache::new(10_000);
        let cached = |cache: &mut HiddenFeatureCache| -> Vec<BatchOutput> {
            batches
                .iter()
                .map(|b| engine.run(&BatchRequest { use_cache: true, store_roots: true, ..base(b) }, Some(cache), None).unwrap())
                .collect()
        };
        let first = cached(&mut cache);
        let second = cached(&mut cache);
        for ((p, f), s) in plain.iter().zip(&first).zip(&second) {
            assert_eq!(p.logits, f.logits);
            assert_eq!(p.logits, s.logits);
            assert!(s.stats.layers[0].computed < p.stats.layers[0].computed);
            assert!(s.stats.cache_hits > 0);
        }
        assert!(first.iter().skip(1).any(|f| f.stats.layers[0].computed < plain[1].stats.layers[0].computed));
    }
}

#[test]
fn stale_cache_is_ignored() {
    let g = random_graph(60, 6, 2);
    let adj = normalize(&g, NormScheme::RowMean);
    let model = GnnModel::init(&GnnModel::sage_specs(5, 4, 2, 3), 2).unwrap();
    let mut cache = HiddenFeatureCache::new(1000);
    let all: Vec<usize> = (0..60).collect();
    let req = BatchRequest { use_cache: true, store_all: true, ..BatchRequest::new(all.clone()) };
    batched_inference(&model, &g, &adj, &req, Some(&mut cache)).unwrap();
    let mut attrs = g.attributes().clone();
    attrs.as_mut_slice().iter_mut().for_each(|v| *v *= 2.0);
    let g2 = g.with_attributes(attrs).unwrap();
    let adj2 = normalize(&g2, NormScheme::RowMean);
    let req = BatchRequest { use_cache: true, ..BatchRequest::new(all.clone()) };
    let with = batched_inference(&model, &g2, &adj2, &req, Some(&mut cache)).unwrap();
    let without = batched_inference(&model, &g2, &adj2, &BatchRequest::new(all), None).unwrap();
    assert_eq!(with.logits, without.logits);
    assert_eq!(with.stats.cache_hits, 0);
    let other = GnnModel::init(&GnnModel::sage_specs(5, 4, 2, 3), 3).unwrap();
    let plan = build_batch_plan(&g, &adj, &other, &BatchRequest { use_cache: true, ..BatchRequest::new(vec![0]) }, Some(&cache)).unwrap();
    assert!(plan.layers.iter().all(|l| l.visited.is_empty()));
}

#[test]
fn corrupt_cache_width() {
    let g = t4();
    let adj = normalize(&g, NormScheme::RowMean);
    let model = two_sage(2, 2, 1);
    let mut cache = HiddenFeatureCache::new(8);
    cache.store(0, 1, &[1.0; 3], 0, model.fingerprint()).unwrap();
    let req = BatchRequest { use_cache: true, ..BatchRequest::new(vec![0]) };
    assert!(matches!(batched_inference(&model, &g, &adj, &req, Some(&mut cache)), Err(Error::Cache(_))));
}

#[test]
fn tree_neighbor_explosion() {
    for d in 1..=4 {
        for layers in 1..=3usize {
            let g = regular_tree(d, layers + 1, 3, 0).unwrap();
            let adj = normalize(&g, NormScheme::RowMean);
            let mut specs: Vec<LayerSpec> = (0..layers).map(|i| LayerSpec::sage(if i == 0 { 3 } else { 4 }, 2)).collect();
            specs.push(LayerSpec::dense(4, 2, Activation::None));
            let model = GnnModel::init(&specs, 0).unwrap();
            let plan = build_batch_plan(&g, &adj, &model, &BatchRequest::new(vec![0]), None).unwrap();
            let expect: usize = (0..layers as u32).map(|l| d.pow(l)).sum();
            assert_eq!(plan.layers[0].computed, expect, "d={d} L={layers}");
            assert_eq!(plan.layers[0].support.len(), expect + d.pow(layers as u32));
        }
    }
}

#[test]
fn request_order_is_preserved() {
    let g = random_graph(80, 4, 6);
    let adj = normalize(&g, NormScheme::RowMean);
    let model = GnnModel::init(&GnnModel::sage_specs(5, 4, 2, 3), 6).unwrap();
    let targets = vec![17, 3, 55, 3, 0, 79];
    let out = batched_inference(&model, &g, &adj, &BatchRequest::new(targets.clone()), None).unwrap();
    for (i, &t) in targets.iter().enumerate() {
        let single = batched_inference(&model, &g, &adj, &BatchRequest::new(vec![t]), None).unwrap();
        assert_eq!(out.logits.row(i), single.logits.row(0));
    }
    let mut rev = targets.clone();
    rev.reverse();
    let back = batched_inference(&model, &g, &adj, &BatchRequest::new(rev), None).unwrap();
    for i in 0..targets.len() {
        assert_eq!(back.logits.row(i), out.logits.row(targets.len() - 1 - i));
    }
}

#[test]
fn capped_sampling_is_reproducible_and_bounded() {
    let g = random_graph(200, 30, 8);
    let adj = normalize(&g, NormScheme::RowMean);
    let model = GnnModel::init(&GnnModel::sage_specs(5, 4, 2, 3), 8).unwrap();
    let req = |seed| BatchRequest { neighbor_caps: vec![Some(5), Some(2)], seed, ..BatchRequest::new(vec![1, 2, 3]) };
    let a = build_batch_plan(&g, &adj, &model, &req(1), None).unwrap();
    let b = build_batch_plan(&g, &adj, &model, &req(1), None).unwrap();
    let c = build_batch_plan(&g, &adj, &model, &req(2), None).unwrap();
    assert_eq!(a.layers[0].support, b.layers[0].support);
    assert_ne!(a.layers[0].support, c.layers[0].support);
    for (lp, cap) in [(&a.layers[1], 5), (&a.layers[0], 2)] {
        for r in 0..lp.computed {
            let (idx, vals) = lp.csr.row(r);
            assert!(idx.len() <= cap);
            if idx.len() == cap {
                let sum: f32 = vals.iter().sum();
                assert!((sum - 1.0).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn batched_macs_follow_the_plan() {
    let g = random_graph(120, 6, 3);
    let adj = normalize(&g, NormScheme::RowMean);
    for model in [mixed_model(5, 1), GnnModel::init(&GnnModel::sage_specs(5, 16, 2, 3), 1).unwrap()] {
        let req = BatchRequest { neighbor_caps: vec![None, Some(3)], ..BatchRequest::new((0..120).step_by(9).collect()) };
        let engine = BatchEngine::new(&model, &g, &adj).unwrap();
        let plan = engine.plan(&req, None).unwrap();
        let mut expect = 0u64;
        for (lp, layer) in plan.layers.iter().zip(&model.layers) {
            let (m, c, nnz) = (lp.support.len() as u64, lp.computed as u64, lp.csr.nnz() as u64);
            for (b, w) in layer.weights.iter().enumerate() {
                let k = layer.spec.power(b) as u64;
                let (fi, fo) = (w.rows() as u64, w.cols() as u64);
                expect += if k == 0 {
                    c * fi * fo
                } else if fo < fi {
                    m * fi * fo + k * nnz * fo
                } else {
                    k * nnz * fi + c * fi * fo
                };
            }
        }
        let counter = MacCounter::new();
        let out = engine.run(&req, None, Some(&counter)).unwrap();
        assert_eq!(out.stats.macs, expect);
        assert_eq!(counter.measured_macs(), expect);
    }
}

#[test]
fn stats_serialize() {
    let g = t4();
    let adj = normalize(&g, NormScheme::RowMean);
    let model = two_sage(2, 2, 1);
    let out = batched_inference(&model, &g, &adj, &BatchRequest::new(vec![0, 3]), None).unwrap();
    let json = serde_json::to_value(&out.stats).unwrap();
    assert_eq!(json["targets"], 2);
    assert_eq!(json["layers"].as_array().unwrap().len(), 2);
    assert!(json.get("latency_us").is_some() && json.get("macs").is_some());
}
