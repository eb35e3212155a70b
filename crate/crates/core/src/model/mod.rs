//! The multi-branch GNN layer stack.
//!
//! Layer output: `σ( combine_{k=k_min..k_max} Ãᵏ · h · W_k )` where `combine`
//! is horizontal concatenation or the mean over branches. Layers are
//! bias-free. A dense classifier is a layer with `k_min = k_max = 0`.

mod io;
mod masked;

pub use io::{load_model, read_model, save_model, write_model};
pub use masked::{fold_mask, MaskedModel};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{spmm_counted, CsrMatrix, NormalizedAdjacency};
use crate::instrument::MacCounter;
use crate::tensor::{channel_scale, matmul_counted, relu_in_place, DenseMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    Concat,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub k_min: usize,
    pub k_max: usize,
    pub combiner: Combiner,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dims: Vec<usize>,
}

impl LayerSpec {
    pub fn num_branches(&self) -> usize {
        self.k_max - self.k_min + 1
    }

    /// Adjacency power used by branch index `b`.
    pub fn power(&self, b: usize) -> usize {
        self.k_min + b
    }

    pub fn output_width(&self) -> usize {
        match self.combiner {
            Combiner::Concat => self.out_dims.iter().sum(),
            Combiner::Mean => self.out_dims.first().copied().unwrap_or(0),
        }
    }

    /// Column range of branch `b` inside the layer output (concat only).
    pub fn output_span(&self, b: usize) -> std::ops::Range<usize> {
        match self.combiner {
            Combiner::Concat => {
                let start: usize = self.out_dims[..b].iter().sum();
                start..start + self.out_dims[b]
            }
            Combiner::Mean => 0..self.out_dims[b],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_min > self.k_max {
            return Err(Error::InvalidModel(format!(
                "k_min {} > k_max {}",
                self.k_min, self.k_max
            )));
        }
        if self.out_dims.len() != self.num_branches() {
            return Err(Error::InvalidModel(format!(
                "{} out_dims for {} branches",
                self.out_dims.len(),
                self.num_branches()
            )));
        }
        if self.combiner == Combiner::Mean && self.out_dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::InvalidModel(
                "mean combiner needs equal branch widths".into(),
            ));
        }
        Ok(())
    }

    /// GraphSAGE-style layer: self branch plus one-hop mean aggregation.
    pub fn sage(in_dim: usize, out_per_branch: usize) -> Self {
        Self {
            k_min: 0,
            k_max: 1,
            combiner: Combiner::Concat,
            activation: Activation::Relu,
            in_dim,
            out_dims: vec![out_per_branch; 2],
        }
    }

    /// Dense layer (no aggregation).
    pub fn dense(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            k_min: 0,
            k_max: 0,
            combiner: Combiner::Concat,
            activation,
            in_dim,
            out_dims: vec![out_dim],
        }
    }
}

/// A layer with its per-branch weights. A branch may read only a subset of
/// the layer's input channels (`selections[b]`), which happens after
/// branch-scoped pruning; its weight matrix then has one row per selected
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<DenseMatrix>,
    pub selections: Vec<Option<Vec<usize>>>,
}

impl Layer {
    pub fn new(spec: LayerSpec, weights: Vec<DenseMatrix>) -> Result<Self> {
        let nb = spec.num_branches();
        let layer = Self {
            spec,
            weights,
            selections: vec![None; nb],
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn branch_in_dim(&self, b: usize) -> usize {
        self.selections[b]
            .as_ref()
            .map_or(self.spec.in_dim, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let nb = self.spec.num_branches();
        if self.weights.len() != nb || self.selections.len() != nb {
            return Err(Error::InvalidModel(format!(
                "layer has {} weight blocks / {} selections for {nb} branches",
                self.weights.len(),
                self.selections.len()
            )));
        }
        for b in 0..nb {
            if let Some(sel) = &self.selections[b] {
                if sel.iter().any(|&c| c >= self.spec.in_dim)
                    || sel.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(Error::InvalidModel(format!(
                        "branch {b} selection must be strictly increasing and < in_dim"
                    )));
                }
            }
            let want = (self.branch_in_dim(b), self.spec.out_dims[b]);
            if self.weights[b].shape() != want {
                return Err(Error::InvalidModel(format!(
                    "branch {b} weight shape {:?}, expected {want:?}",
                    self.weights[b].shape()
                )));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub layers: Vec<Layer>,
}

impl GnnModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let m = Self { layers };
        m.validate()?;
        Ok(m)
    }

    /// Glorot-uniform initialization from a seed.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            let weights = spec
                .out_dims
                .iter()
                .map(|&out| {
                    let limit = (6.0 / (spec.in_dim + out).max(1) as f64).sqrt();
                    let data = (0..spec.in_dim * out)
                        .map(|_| rng.gen_range(-limit..=limit) as f32)
                        .collect();
                    Matrix::from_vec(spec.in_dim, out, data)
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(Layer::new(spec.clone(), weights)?);
        }
        Self::new(layers)
    }

    /// `hops` GraphSAGE layers followed by a dense classifier head.
    pub fn sage_specs(in_dim: usize, hidden: usize, hops: usize, classes: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(hops + 1);
        let mut width = in_dim;
        for _ in 0..hops {
            specs.push(LayerSpec::sage(width, hidden));
            width = 2 * hidden;
        }
        specs.push(LayerSpec::dense(width, classes, Activation::None));
        specs
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.output_width())
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()
                .map_err(|e| Error::InvalidModel(format!("layer {i}: {e}")))?;
            if i > 0 {
                let prev = self.layers[i - 1].spec.output_width();
                if l.spec.in_dim != prev {
                    return Err(Error::InvalidModel(format!(
                        "layer {i} in_dim {} != previous output width {prev}",
                        l.spec.in_dim
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stable identity of the weights, used to stamp cache entries.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(write_model(self));
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Per-branch input scaling applied before a branch reads its channels
/// (used to evaluate masked models without folding).
pub(crate) type BranchScales<'a> = Option<&'a [Option<Vec<f32>>]>;

fn repeat_spmm(
    adj: &CsrMatrix,
    mut x: DenseMatrix,
    k: usize,
    counter: Option<&MacCounter>,
) -> Result<DenseMatrix> {
    for _ in 0..k {
        x = spmm_counted(adj, &x, counter)?;
    }
    Ok(x)
}

/// Evaluates one layer for the first `out_rows` rows of `h`.
///
/// `adj` is a square operator over the rows of `h`; only rows whose
/// k-hop neighbourhood lies inside `h` need to be correct, which is how
/// batched inference runs on compacted supports. Each branch aggregates on
/// the narrower side of its weight matrix: transform first when
/// `f_out < f_in`, aggregate first otherwise.
pub(crate) fn layer_forward_rows(
    layer: &Layer,
    adj: &CsrMatrix,
    h: &DenseMatrix,
    out_rows: usize,
    pre_activation: bool,
    scales: BranchScales<'_>,
    counter: Option<&MacCounter>,
) -> Result<DenseMatrix> {
    let spec = &layer.spec;
    if h.cols() != spec.in_dim {
        return Err(Error::contract(
            "layer_forward",
            format!("input has {} columns, layer expects {}", h.cols(), spec.in_dim),
        ));
    }
    if out_rows > h.rows() {
        return Err(Error::contract("layer_forward", "out_rows exceeds input rows"));
    }
    if spec.k_max > 0 && (adj.nrows != h.rows() || adj.ncols != h.rows()) {
        return Err(Error::contract(
            "layer_forward",
            format!(
                "adjacency is {}x{}, input has {} rows",
                adj.nrows,
                adj.ncols,
                h.rows()
            ),
        ));
    }
    let mut outs = Vec::with_capacity(spec.num_branches());
    for b in 0..spec.num_branches() {
        let k = spec.power(b);
        let w = &layer.weights[b];
        let mut x = match scales.and_then(|s| s[b].as_deref()) {
            Some(beta) => channel_scale(h, beta)?,
            None => h.clone(),
        };
        if let Some(sel) = &layer.selections[b] {
            x = x.gather_cols(sel);
        }
        let z = if k == 0 {
            matmul_counted(&x.head_rows(out_rows), w, counter)?
        } else if w.cols() < w.rows() {
            let y = matmul_counted(&x, w, counter)?;
            repeat_spmm(adj, y, k, counter)?.head_rows(out_rows)
        } else {
            let agg = repeat_spmm(adj, x, k, counter)?.head_rows(out_rows);
            matmul_counted(&agg, w, counter)?
        };
        outs.push(z);
    }
    let mut out = match spec.combiner {
        Combiner::Concat => crate::tensor::hconcat(&outs)?,
        Combiner::Mean => {
            let nb = outs.len() as f32;
            let mut acc = outs[0].clone();
            for z in &outs[1..] {
                acc.add_assign(z)?;
            }
            for v in acc.as_mut_slice() {
                *v /= nb;
            }
            acc
        }
    };
    if !pre_activation && spec.activation == Activation::Relu {
        relu_in_place(&mut out);
    }
    Ok(out)
}

/// One layer over every node. With `pre_activation` the combined output is
/// returned before the non-linearity.
pub fn layer_forward(
    layer: &Layer,
    adj: &NormalizedAdjacency,
    h_in: &DenseMatrix,
    pre_activation: bool,
) -> Result<DenseMatrix> {
    layer_forward_rows(layer, &adj.csr, h_in, h_in.rows(), pre_activation, None, None)
}

/// Chained layer forward over all nodes; returns logits.
pub fn model_forward(
    model: &GnnModel,
    adj: &NormalizedAdjacency,
    attrs: &DenseMatrix,
) -> Result<DenseMatrix> {
    model_forward_counted(model, &adj.csr, attrs, None)
}

pub fn model_forward_counted(
    model: &GnnModel,
    adj: &CsrMatrix,
    attrs: &DenseMatrix,
    counter: Option<&MacCounter>,
) -> Result<DenseMatrix> {
    let mut h = attrs.clone();
    for layer in &model.layers {
        h = layer_forward_rows(layer, adj, &h, h.rows(), false, None, counter)?;
    }
    Ok(h)
}

/// Hidden features of every layer (post-activation), input excluded.
pub fn model_forward_all(
    model: &GnnModel,
    adj: &CsrMatrix,
    attrs: &DenseMatrix,
) -> Result<Vec<DenseMatrix>> {
    let mut out = Vec::with_capacity(model.layers.len());
    let mut h = attrs.clone();
    for layer in &model.layers {
        h = layer_forward_rows(layer, adj, &h, h.rows(), false, None, None)?;
        out.push(h.clone());
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::graph::fixtures::t4;
    use rand::Rng;
    use crate::graph::{normalize, Graph, Labels, NormScheme, Split};
    use crate::tensor::{hconcat, matmul, relu, Real};
    use proptest::prelude::*;

    pub fn random_graph(n: usize, avg_deg: usize, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arcs = Vec::new();
        for v in 0..n as u32 {
            for _ in 0..avg_deg / 2 {
                let u = rng.gen_range(0..n as u32);
                if u != v {
                    arcs.push((v, u));
                    arcs.push((u, v));
                }
            }
        }
        let attrs = Matrix::from_vec(n, 5, (0..n * 5).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        Graph::from_arcs(n, &arcs, attrs, Labels::Single(vec![0; n]), 3, vec![Split::Train; n]).unwrap()
    }

    fn identity_sage() -> GnnModel {
        GnnModel::new(vec![Layer::new(
            LayerSpec::sage(2, 2),
            vec![Matrix::identity(2), Matrix::identity(2)],
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn t4_identity_sage_layer() {
        let g = t4();
        let adj = normalize(&g, NormScheme::RowMean);
        let out = layer_forward(&identity_sage().layers[0], &adj, g.attributes(), false).unwrap();
        let expected = [
            [1.0, 0.0, 0.5, 1.0],
            [0.0, 1.0, 1.0, 0.5],
            [1.0, 1.0, 1.0, 1.0 / 3.0],
            [2.0, 0.0, 1.0, 1.0],
        ];
        for (r, row) in expected.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert!((out.get(r, c) as f64 - v).abs() < 1e-6);
            }
        }
        let full = model_forward(&identity_sage(), &adj, g.attributes()).unwrap();
        assert_eq!(full, out);
    }

    #[test]
    fn dense_layer_ignores_adjacency() {
        let g = t4();
        let empty = CsrMatrix { nrows: 0, ncols: 0, indptr: vec![0], indices: vec![], values: vec![] };
        let w = Matrix::from_rows(&[[1.0, -1.0], [2.0, 0.5]]);
        let layer = Layer::new(LayerSpec::dense(2, 2, Activation::Relu), vec![w.clone()]).unwrap();
        let out = layer_forward_rows(&layer, &empty, g.attributes(), 4, false, None, None).unwrap();
        assert_eq!(out, relu(&matmul(g.attributes(), &w).unwrap()));
    }

    #[test]
    fn zero_weights_give_zero_pre_activation() {
        let g = t4();
        let adj = normalize(&g, NormScheme::RowMean);
        let layer = Layer::new(LayerSpec::sage(2, 3), vec![Matrix::zeros(2, 3), Matrix::zeros(2, 3)]).unwrap();
        let out = layer_forward(&layer, &adj, g.attributes(), true).unwrap();
        assert_eq!(out, Matrix::zeros(4, 6));
    }

    #[test]
    fn second_identity_layer_is_relu_of_first() {
        let g = t4();
        let adj = normalize(&g, NormScheme::RowMean);
        let first = Layer::new(
            LayerSpec::dense(2, 2, Activation::None),
            vec![Matrix::from_rows(&[[1.0, -2.0], [-1.0, 0.5]])],
        )
        .unwrap();
        let second = Layer::new(LayerSpec::dense(2, 2, Activation::Relu), vec![Matrix::identity(2)]).unwrap();
        let m = GnnModel::new(vec![first.clone(), second]).unwrap();
        let h1 = layer_forward(&first, &adj, g.attributes(), false).unwrap();
        assert_eq!(model_forward(&m, &adj, g.attributes()).unwrap(), relu(&h1));
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let g = t4();
        let adj = normalize(&g, NormScheme::RowMean);
        let layer = Layer::new(LayerSpec::sage(3, 2), vec![Matrix::zeros(3, 2), Matrix::zeros(3, 2)]).unwrap();
        assert!(matches!(layer_forward(&layer, &adj, g.attributes(), false), Err(Error::Contract { .. })));
        assert!(Layer::new(LayerSpec::sage(3, 2), vec![Matrix::zeros(2, 2), Matrix::zeros(3, 2)]).is_err());
    }

    /// Dense-matrix oracle of the generalized layer in f64.
    pub fn dense_layer_oracle(layer: &Layer, a: &Matrix<f64>, h: &Matrix<f64>) -> Matrix<f64> {
        let spec = &layer.spec;
        let mut outs = Vec::new();
        for b in 0..spec.num_branches() {
            let mut x = h.clone();
            if let Some(sel) = &layer.selections[b] {
                x = x.gather_cols(sel);
            }
            for _ in 0..spec.power(b) {
                x = matmul(a, &x).unwrap();
            }
            outs.push(matmul(&x, &layer.weights[b].cast::<f64>()).unwrap());
        }
        let mut out = match spec.combiner {
            Combiner::Concat => hconcat(&outs).unwrap(),
            Combiner::Mean => {
                let mut acc = outs[0].clone();
                for o in &outs[1..] {
                    acc.add_assign(o).unwrap();
                }
                acc.scale(1.0 / outs.len() as f64);
                acc
            }
        };
        if spec.activation == Activation::Relu {
            out = relu(&out);
        }
        out
    }

    pub fn dense_model_oracle(model: &GnnModel, a: &Matrix<f64>, x: &DenseMatrix) -> Matrix<f64> {
        let mut h = x.cast::<f64>();
        for l in &model.layers {
            h = dense_layer_oracle(l, a, &h);
        }
        h
    }

    #[test]
    fn random_two_layer_model_matches_dense_oracle() {
        let g = t4();
        let adj = normalize(&g, NormScheme::RowMean);
        let m = GnnModel::init(&GnnModel::sage_specs(2, 3, 2, 2), 7).unwrap();
        let out = model_forward(&m, &adj, g.attributes()).unwrap();
        let oracle = dense_model_oracle(&m, &adj.csr.to_dense(), g.attributes());
        assert!(out.cast::<f64>().max_abs_diff(&oracle) < 1e-5);
    }

    /// GCN: `σ(Ã h W)`, written without the generalized layer machinery.
    fn gcn_oracle(a: &Matrix<f64>, h: &Matrix<f64>, w: &Matrix<f64>) -> Matrix<f64> {
        relu(&matmul(&matmul(a, h).unwrap(), w).unwrap())
    }

    /// MixHop: `σ(h W₀ ∥ Ãh W₁ ∥ Ã²h W₂)`.
    fn mixhop_oracle(a: &Matrix<f64>, h: &Matrix<f64>, ws: &[Matrix<f64>]) -> Matrix<f64> {
        let ah = matmul(a, h).unwrap();
        let aah = matmul(a, &ah).unwrap();
        relu(&hconcat(&[
            matmul(h, &ws[0]).unwrap(),
            matmul(&ah, &ws[1]).unwrap(),
            matmul(&aah, &ws[2]).unwrap(),
        ]).unwrap())
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]

        #[test]
        fn layer_instantiations_match_variant_oracles(seed in any::<u64>()) {
            let g = random_graph(16, 4, seed);
            let adj = normalize(&g, NormScheme::RowMean);
            let a = adj.csr.to_dense();
            let h = g.attributes().cast::<f64>();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);

            // GCN: K'=K=1
            let w = rand_mat(&mut rng, 5, 4);
            let gcn = Layer::new(LayerSpec { k_min: 1, k_max: 1, combiner: Combiner::Concat, activation: Activation::Relu, in_dim: 5, out_dims: vec![4] }, vec![w.clone()]).unwrap();
            let out = layer_forward(&gcn, &adj, g.attributes(), false).unwrap();
            prop_assert!(out.cast::<f64>().max_abs_diff(&gcn_oracle(&a, &h, &w.cast())) <= 1e-6);

            // GraphSAGE: K'=0, K=1
            let (w0, w1) = (rand_mat(&mut rng, 5, 3), rand_mat(&mut rng, 5, 3));
            let sage = Layer::new(LayerSpec::sage(5, 3), vec![w0.clone(), w1.clone()]).unwrap();
            let out = layer_forward(&sage, &adj, g.attributes(), false).unwrap();
            let oracle = relu(&hconcat(&[
                matmul(&h, &w0.cast()).unwrap(),
                matmul(&matmul(&a, &h).unwrap(), &w1.cast()).unwrap(),
            ]).unwrap());
            prop_assert!(out.cast::<f64>().max_abs_diff(&oracle) <= 1e-6);

            // MixHop: K'=0, K=2, mixed widths so both aggregation orders run
            let ws = vec![rand_mat(&mut rng, 5, 2), rand_mat(&mut rng, 5, 7), rand_mat(&mut rng, 5, 3)];
            let mix = Layer::new(LayerSpec { k_min: 0, k_max: 2, combiner: Combiner::Concat, activation: Activation::Relu, in_dim: 5, out_dims: vec![2, 7, 3] }, ws.clone()).unwrap();
            let out = layer_forward(&mix, &adj, g.attributes(), false).unwrap();
            let wsd: Vec<Matrix<f64>> = ws.iter().map(|w| w.cast()).collect();
            prop_assert!(out.cast::<f64>().max_abs_diff(&mixhop_oracle(&a, &h, &wsd)) <= 1e-6);
        }
    }

    #[test]
    fn mean_combiner_divides_by_branch_count() {
        let g = t4();
        let adj = normalize(&g, NormScheme::RowMean);
        let spec = LayerSpec { k_min: 0, k_max: 1, combiner: Combiner::Mean, activation: Activation::None, in_dim: 2, out_dims: vec![2, 2] };
        let layer = Layer::new(spec, vec![Matrix::identity(2), Matrix::identity(2)]).unwrap();
        let out = layer_forward(&layer, &adj, g.attributes(), false).unwrap();
        // row 0: (h0 + Ãh0)/2 = ([1,0] + [0.5,1]) / 2
        assert_eq!(out.row(0), &[0.75, 0.5]);
        let oracle = dense_layer_oracle(&layer, &adj.csr.to_dense(), &g.attributes().cast());
        assert!(out.cast::<f64>().max_abs_diff(&oracle) < 1e-6);
    }

    #[test]
    fn induced_subgraph_forward_matches_when_no_cross_edges() {
        // two components: {0,1,2} train, {3,4} test
        let arcs = [(0, 1), (1, 0), (1, 2), (2, 1), (3, 4), (4, 3)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let attrs = rand_mat(&mut rng, 5, 4);
        let g = Graph::from_arcs(5, &arcs, attrs, Labels::Single(vec![0; 5]), 2,
            vec![Split::Train, Split::Train, Split::Train, Split::Test, Split::Test]).unwrap();
        let m = GnnModel::init(&GnnModel::sage_specs(4, 3, 2, 2), 1).unwrap();
        let full = model_forward(&m, &normalize(&g, NormScheme::RowMean), g.attributes()).unwrap();
        let tg = crate::graph::training_graph(&g).unwrap();
        let sub = model_forward(&m, &normalize(&tg.graph, NormScheme::RowMean), tg.graph.attributes()).unwrap();
        assert_eq!(sub, full.head_rows(3));
    }

    #[test]
    fn fingerprint_tracks_weights() {
        let a = GnnModel::init(&GnnModel::sage_specs(4, 3, 2, 2), 1).unwrap();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.layers[0].weights[0].set(0, 0, 9.0);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn real_trait_round_trip() {
        assert_eq!(<f32 as Real>::from_f64(0.5).as_f64(), 0.5);
    }
}
