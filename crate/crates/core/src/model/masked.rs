use super::{layer_forward_rows, GnnModel, Layer};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::prune::PruneMask;
use crate::tensor::{DenseMatrix, Matrix};

/// A model with per-layer input-channel masks that have not been folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedModel {
    pub base: GnnModel,
    pub masks: Vec<Option<PruneMask>>,
}

impl MaskedModel {
    pub fn new(base: GnnModel) -> Self {
        let n = base.layers.len();
        Self {
            base,
            masks: vec![None; n],
        }
    }

    pub fn set_mask(&mut self, layer: usize, mask: PruneMask) -> Result<()> {
        let l = self
            .base
            .layers
            .get(layer)
            .ok_or_else(|| Error::InvalidMask(format!("no layer {layer}")))?;
        if mask.len() != l.spec.in_dim {
            return Err(Error::InvalidMask(format!(
                "layer {layer} mask has {} entries, layer has {} input channels",
                mask.len(),
                l.spec.in_dim
            )));
        }
        self.masks[layer] = Some(mask);
        Ok(())
    }

    fn branch_scales(&self, i: usize) -> Vec<Option<Vec<f32>>> {
        let layer = &self.base.layers[i];
        (0..layer.spec.num_branches())
            .map(|b| {
                self.masks[i]
                    .as_ref()
                    .filter(|m| m.applies_to(layer.spec.power(b)))
                    .map(|m| m.beta.clone())
            })
            .collect()
    }

    /// Evaluates the model with masked channels scaled explicitly.
    pub fn forward(&self, adj: &NormalizedAdjacency, attrs: &DenseMatrix) -> Result<DenseMatrix> {
        let mut h = attrs.clone();
        for (i, layer) in self.base.layers.iter().enumerate() {
            let scales = self.branch_scales(i);
            h = layer_forward_rows(layer, &adj.csr, &h, h.rows(), false, Some(&scales), None)?;
        }
        Ok(h)
    }
}

/// Folds every mask into the weights and deletes pruned channels.
///
/// Branch weights become `diag(β)·W` restricted to non-zero rows. A channel
/// that no branch of layer `i` reads is removed from the output of layer
/// `i-1`; when only some branches drop it, those branches keep a channel
/// selection instead. Input attributes are never removed.
pub fn fold_mask(masked: &MaskedModel) -> Result<GnnModel> {
    let mut layers = masked.base.layers.clone();
    for i in (0..layers.len()).rev() {
        let Some(mask) = &masked.masks[i] else {
            continue;
        };
        if !mask.clipped {
            return Err(Error::InvalidMask(format!("layer {i} mask is not clipped")));
        }
        if mask.len() != layers[i].spec.in_dim {
            return Err(Error::InvalidMask(format!(
                "layer {i} mask has {} entries, layer has {} input channels",
                mask.len(),
                layers[i].spec.in_dim
            )));
        }
        if mask.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidMask(format!("layer {i} mask is not finite")));
        }
        let layer = &mut layers[i];
        let in_dim = layer.spec.in_dim;
        let mut used = vec![false; in_dim];
        for b in 0..layer.spec.num_branches() {
            let sel: Vec<usize> = layer.selections[b]
                .clone()
                .unwrap_or_else(|| (0..in_dim).collect());
            if !mask.applies_to(layer.spec.power(b)) {
                sel.iter().for_each(|&c| used[c] = true);
                continue;
            }
            let keep: Vec<usize> = (0..sel.len())
                .filter(|&p| mask.beta[sel[p]] != 0.0)
                .collect();
            if keep.is_empty() {
                return Err(Error::InvalidMask(format!(
                    "layer {i} mask removes every input channel of branch {b}"
                )));
            }
            let w = &layer.weights[b];
            let mut nw = Matrix::zeros(keep.len(), w.cols());
            for (r, &p) in keep.iter().enumerate() {
                let beta = mask.beta[sel[p]];
                for (dst, &src) in nw.row_mut(r).iter_mut().zip(w.row(p)) {
                    *dst = beta * src;
                }
            }
            layer.weights[b] = nw;
            let new_sel: Vec<usize> = keep.iter().map(|&p| sel[p]).collect();
            new_sel.iter().for_each(|&c| used[c] = true);
            layer.selections[b] = Some(new_sel);
        }
        let kept: Vec<usize> = (0..in_dim).filter(|&c| used[c]).collect();
        if i > 0 && kept.len() < in_dim {
            let mut remap = vec![usize::MAX; in_dim];
            for (new, &old) in kept.iter().enumerate() {
                remap[old] = new;
            }
            for b in 0..layer.spec.num_branches() {
                if let Some(sel) = &mut layer.selections[b] {
                    sel.iter_mut().for_each(|c| *c = remap[*c]);
                }
            }
            layer.spec.in_dim = kept.len();
            delete_output_channels(&mut layers[i - 1], &kept)?;
        }
        normalize_selections(&mut layers[i]);
    }
    GnnModel::new(layers)
}

/// Drops selections that read every input channel in order.
fn normalize_selections(layer: &mut Layer) {
    let in_dim = layer.spec.in_dim;
    for sel in &mut layer.selections {
        if sel
            .as_ref()
            .is_some_and(|s| s.len() == in_dim && s.iter().enumerate().all(|(i, &c)| i == c))
        {
            *sel = None;
        }
    }
}

/// Keeps only output columns `kept` (sorted) of `layer`.
fn delete_output_channels(layer: &mut Layer, kept: &[usize]) -> Result<()> {
    use super::Combiner;
    match layer.spec.combiner {
        Combiner::Concat => {
            for b in 0..layer.spec.num_branches() {
                let span = layer.spec.output_span(b);
                let cols: Vec<usize> = kept
                    .iter()
                    .filter(|c| span.contains(c))
                    .map(|c| c - span.start)
                    .collect();
                layer.weights[b] = layer.weights[b].gather_cols(&cols);
            }
            for b in 0..layer.spec.num_branches() {
                layer.spec.out_dims[b] = layer.weights[b].cols();
            }
        }
        Combiner::Mean => {
            for w in &mut layer.weights {
                *w = w.gather_cols(kept);
            }
            layer.spec.out_dims.iter_mut().for_each(|d| *d = kept.len());
        }
    }
    layer.validate()
}
