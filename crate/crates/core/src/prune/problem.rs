use rayon::prelude::*;

use super::{MaskScope, PruneMask};
use crate::error::{Error, Result};
use crate::graph::{normalize, spmm, Graph, NormScheme};
use crate::model::{Combiner, MaskedModel};
use crate::tensor::{matmul, matmul_nt, matmul_tn, DenseMatrix, Matrix};

/// Least-squares reconstruction problem of one layer on the training nodes.
///
/// `observations[b]` is `Ãᵏ·h` for branch `b` (rows are training nodes,
/// columns the layer's `c` input channels). Targets are the original layer
/// outputs on the surviving output columns: one block per branch for the
/// concat combiner, a single block for the mean combiner.
#[derive(Debug, Clone)]
pub struct PruneProblem {
    pub observations: Vec<DenseMatrix>,
    pub targets: Vec<Matrix<f64>>,
    pub weights: Vec<Matrix<f64>>,
    pub powers: Vec<usize>,
    pub combiner: Combiner,
    pub scope: MaskScope,
    /// Output columns of the layer that the next layer still reads.
    pub surviving: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
}

/// Quadratic form of a problem's data term; see [`PruneProblem::quadratic`].
#[derive(Debug, Clone)]
pub(crate) struct Quadratic {
    pub gram: Matrix<f64>,
    pub linear: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub constant: f64,
}

/// Rows per parallel work item; fixed so reductions do not depend on the
/// worker count.
const CHUNK: usize = 64;

impl PruneProblem {
    pub fn channels(&self) -> usize {
        self.observations[0].cols()
    }

    pub fn rows(&self) -> usize {
        self.observations[0].rows()
    }

    pub fn num_branches(&self) -> usize {
        self.observations.len()
    }

    pub fn masked(&self, b: usize) -> bool {
        match self.scope {
            MaskScope::Layer => true,
            MaskScope::Branch(k) => self.powers[b] == k,
        }
    }

    /// Scalar entries per target row.
    pub fn target_width(&self) -> usize {
        self.targets.iter().map(Matrix::cols).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let nb = self.observations.len();
        if nb == 0 || self.weights.len() != nb || self.powers.len() != nb {
            return Err(Error::contract("prune_problem", "branch counts disagree"));
        }
        let (n, c) = self.observations[0].shape();
        if self.observations.iter().any(|o| o.shape() != (n, c)) {
            return Err(Error::contract("prune_problem", "observation shapes differ"));
        }
        let expect_targets = match self.combiner {
            Combiner::Concat => nb,
            Combiner::Mean => 1,
        };
        if self.targets.len() != expect_targets || self.targets.iter().any(|t| t.rows() != n) {
            return Err(Error::contract("prune_problem", "target blocks do not match"));
        }
        for (b, w) in self.weights.iter().enumerate() {
            let t = match self.combiner {
                Combiner::Concat => &self.targets[b],
                Combiner::Mean => &self.targets[0],
            };
            if w.rows() != c || w.cols() != t.cols() {
                return Err(Error::contract(
                    "prune_problem",
                    format!("branch {b} weights {:?} vs c={c}, f_out={}", w.shape(), t.cols()),
                ));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Branch prediction of one row with `beta` scaling masked branches.
    pub(crate) fn predict_row(&self, r: usize, beta: &[f64], weights: &[Matrix<f64>], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let nb = self.num_branches();
        let mut offset = 0;
        for b in 0..nb {
            let x = self.observations[b].row(r);
            let w = &weights[b];
            let f = w.cols();
            let dst = match self.combiner {
                Combiner::Concat => &mut out[offset..offset + f],
                Combiner::Mean => &mut out[..f],
            };
            let scale = if self.combiner == Combiner::Mean { 1.0 / nb as f64 } else { 1.0 };
            let masked = self.masked(b);
            for (j, &xj) in x.iter().enumerate() {
                let s = xj as f64 * if masked { beta[j] } else { 1.0 } * scale;
                if s != 0.0 {
                    for (d, &wv) in dst.iter_mut().zip(w.row(j)) {
                        *d += s * wv;
                    }
                }
            }
            if self.combiner == Combiner::Concat {
                offset += f;
            }
        }
    }

    pub(crate) fn target_row(&self, r: usize, out: &mut [f64]) {
        let mut offset = 0;
        for t in &self.targets {
            for (d, &v) in out[offset..offset + t.cols()].iter_mut().zip(t.row(r)) {
                *d = v;
            }
            offset += t.cols();
        }
    }

    /// Sum of squared residuals and, optionally, its gradient w.r.t. `beta`
    /// over the given rows.
    pub(crate) fn residual_sums(
        &self,
        rows: &[usize],
        beta: &[f64],
        weights: &[Matrix<f64>],
        want_grad: bool,
    ) -> (f64, Vec<f64>) {
        let c = self.channels();
        let width = self.target_width();
        let nb = self.num_branches();
        let partials: Vec<(f64, Vec<f64>)> = rows
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut pred = vec![0.0; width];
                let mut tgt = vec![0.0; width];
                let mut sq = 0.0;
                let mut grad = if want_grad { vec![0.0; c] } else { Vec::new() };
                for &r in chunk {
                    self.predict_row(r, beta, weights, &mut pred);
                    self.target_row(r, &mut tgt);
                    for (p, t) in pred.iter_mut().zip(&tgt) {
                        *p = t - *p;
                        sq += *p * *p;
                    }
                    if !want_grad {
                        continue;
                    }
                    let mut offset = 0;
                    for b in 0..nb {
                        let w = &weights[b];
                        let f = w.cols();
                        if self.masked(b) {
                            let (res, scale) = match self.combiner {
                                Combiner::Concat => (&pred[offset..offset + f], 1.0),
                                Combiner::Mean => (&pred[..f], 1.0 / nb as f64),
                            };
                            let x = self.observations[b].row(r);
                            for j in 0..c {
                                if x[j] != 0.0 {
                                    let dot: f64 = res.iter().zip(w.row(j)).map(|(a, b)| a * b).sum();
                                    grad[j] -= 2.0 * scale * x[j] as f64 * dot;
                                }
                            }
                        }
                        if self.combiner == Combiner::Concat {
                            offset += f;
                        }
                    }
                }
                (sq, grad)
            })
            .collect();
        let mut sq = 0.0;
        let mut grad = vec![0.0; if want_grad { c } else { 0 }];
        for (s, g) in partials {
            sq += s;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        (sq, grad)
    }

    /// Mean squared reconstruction error per target entry.
    pub fn data_loss(&self, beta: &[f64], weights: &[Matrix<f64>]) -> f64 {
        let rows: Vec<usize> = (0..self.rows()).collect();
        let (sq, _) = self.residual_sums(&rows, beta, weights, false);
        sq / (self.rows() * self.target_width()).max(1) as f64
    }

    /// Data term as a quadratic in `beta`:
    /// `Σ residual² = βᵀ·gram·β − 2·linearᵀβ + constant`.
    pub(crate) fn quadratic(&self) -> Result<Quadratic> {
        let c = self.channels();
        let nb = self.num_branches();
        let mut gram = Matrix::<f64>::zeros(c, c);
        let mut linear = vec![0.0; c];
        let mut constant = 0.0;
        let blocks: Vec<(usize, Vec<usize>, f64)> = match self.combiner {
            Combiner::Concat => (0..nb).map(|b| (b, vec![b], 1.0)).collect(),
            Combiner::Mean => vec![(0, (0..nb).collect(), 1.0 / nb as f64)],
        };
        let xs: Vec<Matrix<f64>> = self.observations.iter().map(|o| o.cast()).collect();
        for (t, branches, s) in blocks {
            let mut rest = self.targets[t].clone();
            for &b in branches.iter().filter(|&&b| !self.masked(b)) {
                let mut part = matmul(&xs[b], &self.weights[b])?;
                part.scale(-s);
                rest.add_assign(&part)?;
            }
            constant += rest.as_slice().iter().map(|v| v * v).sum::<f64>();
            let masked: Vec<usize> = branches.into_iter().filter(|&b| self.masked(b)).collect();
            for &b in &masked {
                let proj = matmul_nt(&rest, &self.weights[b])?;
                for r in 0..self.rows() {
                    for (j, (x, p)) in xs[b].row(r).iter().zip(proj.row(r)).enumerate() {
                        linear[j] += s * x * p;
                    }
                }
                for &b2 in &masked {
                    let xx = matmul_tn(&xs[b], &xs[b2])?;
                    let ww = matmul_nt(&self.weights[b], &self.weights[b2])?;
                    for (g, (a, w)) in gram.as_mut_slice().iter_mut().zip(xx.as_slice().iter().zip(ww.as_slice())) {
                        *g += s * s * a * w;
                    }
                }
            }
        }
        Ok(Quadratic { gram, linear, constant })
    }

    /// Mean square of the targets: the data loss with every channel removed.
    pub fn target_energy(&self) -> f64 {
        let total: f64 = self
            .targets
            .iter()
            .flat_map(|t| t.as_slice())
            .map(|&v| v * v)
            .sum();
        total / (self.rows() * self.target_width()).max(1) as f64
    }
}

/// Reconstruction MSE of a clipped mask with the given per-branch weights.
pub fn reconstruction_mse(p: &PruneProblem, mask: &PruneMask, weights: &[Matrix<f64>]) -> f64 {
    let beta: Vec<f64> = mask.beta.iter().map(|&b| b as f64).collect();
    p.data_loss(&beta, weights)
}

/// Builds the reconstruction problem of layer `layer_idx` on the training
/// graph. Layers above `layer_idx` may already carry masks; their input
/// masks decide which output columns of this layer survive.
pub fn collect_problem(
    masked: &MaskedModel,
    layer_idx: usize,
    g_train: &Graph,
    norm: NormScheme,
) -> Result<PruneProblem> {
    let layers = &masked.base.layers;
    if layer_idx >= layers.len() {
        return Err(Error::contract(
            "collect_problem",
            format!("layer {layer_idx} out of range for {} layers", layers.len()),
        ));
    }
    if g_train.num_nodes() == 0 {
        return Err(Error::InvalidGraph("empty training graph".into()));
    }
    let layer = &layers[layer_idx];
    if layer.selections.iter().any(Option::is_some) {
        return Err(Error::contract("collect_problem", "layer is already folded"));
    }
    let adj = normalize(g_train, norm);
    let mut h = g_train.attributes().clone();
    for (i, l) in layers[..layer_idx].iter().enumerate() {
        let scales: Vec<Option<Vec<f32>>> = (0..l.spec.num_branches())
            .map(|b| {
                masked.masks[i]
                    .as_ref()
                    .filter(|m| m.applies_to(l.spec.power(b)))
                    .map(|m| m.beta.clone())
            })
            .collect();
        h = crate::model::layer_forward_rows(l, &adj.csr, &h, h.rows(), false, Some(&scales), None)?;
    }
    let spec = &layer.spec;
    let surviving: Vec<usize> = match masked.masks.get(layer_idx + 1).and_then(Option::as_ref) {
        Some(next) => {
            let next_spec = &layers[layer_idx + 1].spec;
            let all_masked = (0..next_spec.num_branches()).all(|b| next.applies_to(next_spec.power(b)));
            if all_masked {
                next.kept_channels()
            } else {
                (0..spec.output_width()).collect()
            }
        }
        None => (0..spec.output_width()).collect(),
    };
    let mut observations = Vec::with_capacity(spec.num_branches());
    let mut weights = Vec::with_capacity(spec.num_branches());
    let mut per_branch_targets = Vec::with_capacity(spec.num_branches());
    for b in 0..spec.num_branches() {
        let mut x = h.clone();
        for _ in 0..spec.power(b) {
            x = spmm(&adj.csr, &x)?;
        }
        let cols: Vec<usize> = match spec.combiner {
            Combiner::Concat => {
                let span = spec.output_span(b);
                surviving.iter().filter(|c| span.contains(c)).map(|c| c - span.start).collect()
            }
            Combiner::Mean => surviving.clone(),
        };
        let w = layer.weights[b].gather_cols(&cols).cast::<f64>();
        per_branch_targets.push(matmul(&x.cast::<f64>(), &w)?);
        weights.push(w);
        observations.push(x);
    }
    let targets = match spec.combiner {
        Combiner::Concat => per_branch_targets,
        Combiner::Mean => {
            let nb = per_branch_targets.len() as f64;
            let mut acc = per_branch_targets[0].clone();
            for t in &per_branch_targets[1..] {
                acc.add_assign(t)?;
            }
            acc.as_mut_slice().iter_mut().for_each(|v| *v /= nb);
            vec![acc]
        }
    };
    Ok(PruneProblem {
        observations,
        targets,
        weights,
        powers: (0..spec.num_branches()).map(|b| spec.power(b)).collect(),
        combiner: spec.combiner,
        scope: MaskScope::Layer,
        surviving,
        batch_size: 1024,
        seed: 0,
    })
}
