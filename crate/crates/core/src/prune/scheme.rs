use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::refit::ridge_weights;
use super::{
    clip_mask, collect_problem, reconstruction_mse, refit_weights, run_beta_phase, MaskScope,
    PenaltySchedule, PruneBudget, PruneMask, PruneProblem, RefitMode, StopReason,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, NormScheme};
use crate::model::{Combiner, GnnModel, MaskedModel};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Every layer at η except the raw attributes.
    Full,
    /// Whole layer 2 and the neighbour branch of layer 1 at η.
    Batched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneOptions {
    pub norm: NormScheme,
    pub batch_size: usize,
    pub refit: RefitMode,
    pub seed: u64,
    /// Rounds of β-phase, clip and refit per layer.
    pub outer_iterations: usize,
    /// When positive, the β-phase sees ridge least-squares weights with
    /// this relative penalty instead of the trained ones.
    pub selection_ridge: f64,
}

impl Default for PruneOptions {
    fn default() -> Self {
        Self {
            norm: NormScheme::RowMean,
            batch_size: 1024,
            refit: RefitMode::ClosedForm,
            seed: 0,
            outer_iterations: 1,
            selection_ridge: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer_idx: usize,
    pub c: usize,
    pub retained: usize,
    pub eta: f64,
    pub scope: MaskScope,
    pub final_lambda: f64,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    /// Clipped mask with the weights before refit.
    pub reconstruction_mse_before: f64,
    pub reconstruction_mse_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub scheme: Scheme,
    pub eta: f64,
    pub layers: Vec<LayerReport>,
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (layer as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03)
}

fn install(masked: &mut MaskedModel, layer_idx: usize, p: &PruneProblem, weights: &[Matrix<f64>], mask: PruneMask) {
    let layer = &mut masked.base.layers[layer_idx];
    for b in 0..layer.spec.num_branches() {
        let cols: Vec<usize> = match layer.spec.combiner {
            Combiner::Concat => {
                let span = layer.spec.output_span(b);
                p.surviving.iter().filter(|c| span.contains(c)).map(|c| c - span.start).collect()
            }
            Combiner::Mean => p.surviving.clone(),
        };
        let w = &mut layer.weights[b];
        for r in 0..w.rows() {
            for (k, &c) in cols.iter().enumerate() {
                w.set(r, c, weights[b].get(r, k) as f32);
            }
        }
    }
    masked.masks[layer_idx] = Some(mask);
}

/// β-phase, clip and refit for one layer; installs the refit weights and
/// the mask into `masked`. Deeper layers must already be pruned.
pub fn prune_layer(
    masked: &mut MaskedModel,
    layer_idx: usize,
    budget: &PruneBudget,
    sched: &PenaltySchedule,
    g_train: &Graph,
    opts: &PruneOptions,
) -> Result<LayerReport> {
    if let MaskScope::Branch(k) = budget.scope {
        let spec = &masked.base.layers.get(layer_idx).map(|l| l.spec.clone());
        if !spec.as_ref().is_some_and(|s| (s.k_min..=s.k_max).contains(&k)) {
            return Err(Error::Config(format!("layer {layer_idx} has no branch with power {k}")));
        }
    }
    let mut p = collect_problem(masked, layer_idx, g_train, opts.norm)?;
    p.scope = budget.scope;
    p.batch_size = opts.batch_size;
    p.seed = layer_seed(opts.seed, layer_idx);
    let c = p.channels();
    let mut report = None;
    let mut mask = PruneMask::identity(c, budget.scope);
    for _ in 0..opts.outer_iterations.max(1) {
        let phase = if opts.selection_ridge > 0.0 {
            let selector = PruneProblem { weights: ridge_weights(&p, opts.selection_ridge)?, ..p.clone() };
            run_beta_phase(&selector, budget, sched)?
        } else {
            run_beta_phase(&p, budget, sched)?
        };
        mask = clip_mask(&phase.beta, budget);
        let before = reconstruction_mse(&p, &mask, &p.weights);
        let refit = refit_weights(&p, &mask, opts.refit)?;
        let after = reconstruction_mse(&p, &mask, &refit);
        report = Some(LayerReport {
            layer_idx,
            c,
            retained: mask.retained(),
            eta: budget.eta,
            scope: budget.scope,
            final_lambda: phase.final_lambda,
            epochs_run: phase.epochs_run,
            stop_reason: phase.stop_reason,
            reconstruction_mse_before: before,
            reconstruction_mse_after: after,
        });
        // Later rounds start from the refit weights with β folded in.
        for (b, w) in refit.iter().enumerate() {
            let mut folded = w.clone();
            if p.masked(b) {
                for j in 0..c {
                    let beta = mask.beta[j] as f64;
                    folded.row_mut(j).iter_mut().for_each(|v| *v *= beta);
                }
            }
            p.weights[b] = folded;
        }
    }
    let final_weights = p.weights.clone();
    // Installed weights pair with the mask, so undo the fold on kept rows.
    let mut paired = final_weights;
    for (b, w) in paired.iter_mut().enumerate() {
        if p.masked(b) {
            for j in 0..c {
                let beta = mask.beta[j] as f64;
                if beta != 0.0 {
                    w.row_mut(j).iter_mut().for_each(|v| *v /= beta);
                }
            }
        }
    }
    install(masked, layer_idx, &p, &paired, mask);
    Ok(report.expect("at least one round"))
}

/// Refits one layer for a mask chosen by other means, such as a baseline,
/// and installs the weights and the mask. Returns the reconstruction MSE
/// after refit.
pub fn install_mask(
    masked: &mut MaskedModel,
    layer_idx: usize,
    mask: PruneMask,
    g_train: &Graph,
    opts: &PruneOptions,
) -> Result<f64> {
    let mut p = collect_problem(masked, layer_idx, g_train, opts.norm)?;
    if mask.len() != p.channels() {
        return Err(Error::InvalidMask(format!("{} entries for {} channels", mask.len(), p.channels())));
    }
    p.scope = mask.scope;
    p.batch_size = opts.batch_size;
    p.seed = layer_seed(opts.seed, layer_idx);
    let refit = refit_weights(&p, &mask, opts.refit)?;
    let mse = reconstruction_mse(&p, &mask, &refit);
    install(masked, layer_idx, &p, &refit, mask);
    Ok(mse)
}

/// Per-layer budgets of a scheme, `None` for layers left intact.
pub fn scheme_budgets(model: &GnnModel, scheme: Scheme, eta: f64) -> Result<Vec<Option<PruneBudget>>> {
    let n = model.num_layers();
    let mut out = vec![None; n];
    match scheme {
        Scheme::Full => {
            for b in out.iter_mut().skip(1) {
                *b = Some(PruneBudget::whole(eta)?);
            }
        }
        Scheme::Batched => {
            if n < 2 {
                return Err(Error::Config("batched scheme needs at least two layers".into()));
            }
            let first = &model.layers[0].spec;
            if !(first.k_min..=first.k_max).contains(&1) {
                return Err(Error::Config("batched scheme needs a k=1 branch in layer 1".into()));
            }
            out[0] = Some(PruneBudget::new(eta, MaskScope::Branch(1))?);
            out[1] = Some(PruneBudget::whole(eta)?);
        }
    }
    Ok(out)
}

/// Prunes layers from the head towards the input under `scheme`.
pub fn prune_model(
    model: &GnnModel,
    g_train: &Graph,
    scheme: Scheme,
    eta: f64,
    sched: &PenaltySchedule,
    opts: &PruneOptions,
) -> Result<(MaskedModel, PruneReport)> {
    let budgets = scheme_budgets(model, scheme, eta)?;
    let mut masked = MaskedModel::new(model.clone());
    let mut layers = Vec::new();
    for i in (0..model.num_layers()).rev() {
        if let Some(budget) = &budgets[i] {
            layers.push(prune_layer(&mut masked, i, budget, sched, g_train, opts)?);
        }
    }
    Ok((masked, PruneReport { scheme, eta, layers }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Random,
    MaxResidual,
}

/// Channel selections that ignore the reconstruction objective: a seeded
/// uniform choice, or the channels whose weight rows have the largest L1
/// norm summed over the masked branches.
pub fn baseline_masks(p: &PruneProblem, budget: &PruneBudget, method: BaselineMethod, seed: u64) -> PruneMask {
    let c = p.channels();
    let keep = budget.keep(c);
    let kept: Vec<usize> = match method {
        BaselineMethod::Random => {
            let mut order: Vec<usize> = (0..c).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            order.truncate(keep);
            order
        }
        BaselineMethod::MaxResidual => {
            let norms: Vec<f64> = (0..c)
                .map(|j| {
                    (0..p.num_branches())
                        .filter(|&b| p.masked(b))
                        .map(|b| p.weights[b].row(j).iter().map(|v| v.abs()).sum::<f64>())
                        .sum()
                })
                .collect();
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
            order.truncate(keep);
            order
        }
    };
    PruneMask::from_kept(c, &kept, budget.scope)
}
