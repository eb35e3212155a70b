//! Full-batch training, re-training of pruned models, and F1-micro.

mod metrics;
mod objective;

pub use metrics::{f1_micro, predict};
pub use objective::{Objective, Weights};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize, training_graph, Graph, NormScheme, NormalizedAdjacency, Split};
use crate::model::{model_forward, GnnModel, LayerSpec};
use crate::optim::{sgd_step, Adam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCe,
    SigmoidBce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Defaults to the loss matching the graph's label mode.
    pub loss: Option<LossKind>,
    pub early_stop_patience: usize,
    pub norm: NormScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss: None,
            early_stop_patience: 20,
            norm: NormScheme::RowMean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("adam betas must lie in [0,1) and eps > 0".into()));
        }
        Ok(())
    }

    fn loss_for(&self, g: &Graph) -> LossKind {
        self.loss.unwrap_or(if g.labels().is_multi() {
            LossKind::SigmoidBce
        } else {
            LossKind::SoftmaxCe
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: GnnModel,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub log: Vec<EpochLog>,
}

impl TrainRun {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_f1,lr\n");
        for r in &self.log {
            let _ = writeln!(s, "{},{:.8},{:.6},{}", r.epoch, r.train_loss, r.val_f1, r.lr);
        }
        s
    }
}

/// F1-micro of `model` on the nodes of one split, using a full-graph pass.
pub fn evaluate(model: &GnnModel, g: &Graph, adj: &NormalizedAdjacency, split: Split) -> Result<f64> {
    let nodes = g.nodes_in(split);
    let logits = model_forward(model, adj, g.attributes())?;
    let pred = predict(&logits.gather_rows(&nodes), g.labels().is_multi());
    f1_micro(&pred, &g.labels().gather(&nodes))
}

/// Trains a freshly initialized model of the given architecture.
pub fn train(g: &Graph, arch: &[LayerSpec], cfg: &TrainConfig) -> Result<GnnModel> {
    Ok(train_logged(g, arch, cfg)?.model)
}

pub fn train_logged(g: &Graph, arch: &[LayerSpec], cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let out = arch.last().map_or(0, LayerSpec::output_width);
    if out != g.num_classes() {
        return Err(Error::Config(format!(
            "architecture outputs {out} columns for {} classes",
            g.num_classes()
        )));
    }
    let model = GnnModel::init(arch, cfg.seed)?;
    fit(g, model, cfg)
}

/// Fine-tunes every remaining weight of a (typically folded) model. A zero
/// learning rate is accepted and leaves the weights unchanged.
pub fn retrain(g: &Graph, model: &GnnModel, cfg: &TrainConfig) -> Result<GnnModel> {
    Ok(retrain_logged(g, model, cfg)?.model)
}

pub fn retrain_logged(g: &Graph, model: &GnnModel, cfg: &TrainConfig) -> Result<TrainRun> {
    let mut check = cfg.clone();
    if cfg.learning_rate == 0.0 {
        check.learning_rate = 1.0;
    }
    check.validate()?;
    if model.out_dim() != g.num_classes() {
        return Err(Error::Config(format!(
            "model outputs {} columns for {} classes",
            model.out_dim(),
            g.num_classes()
        )));
    }
    fit(g, model.clone(), cfg)
}

fn fit(g: &Graph, mut model: GnnModel, cfg: &TrainConfig) -> Result<TrainRun> {
    if model.in_dim() != g.attr_dim() {
        return Err(Error::Config(format!(
            "model reads {} attributes, graph has {}",
            model.in_dim(),
            g.attr_dim()
        )));
    }
    if g.nodes_in(Split::Val).is_empty() {
        return Err(Error::InvalidGraph("graph has no validation nodes".into()));
    }
    let train_g = training_graph(g)?.graph;
    let train_adj = normalize(&train_g, cfg.norm);
    let full_adj = normalize(g, cfg.norm);
    let structure = model.layers.clone();
    let objective = Objective::new(&structure, &train_adj.csr, train_g.labels(), cfg.loss_for(g))?;

    let mut weights: Weights<f32> = model.layers.iter().map(|l| l.weights.clone()).collect();
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut best = weights.clone();
    let mut best_val = evaluate(&model, g, &full_adj, Split::Val)?;
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let (loss, grads) = objective.loss_and_grad(&weights, train_g.attributes())?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { epoch });
        }
        {
            let mut params: Vec<&mut [f32]> = weights
                .iter_mut()
                .flatten()
                .map(|w| w.as_mut_slice())
                .collect();
            let gs: Vec<&[f32]> = grads.iter().flatten().map(|w| w.as_slice()).collect();
            match cfg.optimizer {
                OptimizerKind::Adam => adam.step(&mut params, &gs),
                OptimizerKind::Sgd => sgd_step(cfg.learning_rate, &mut params, &gs),
            }
        }
        install(&mut model, &weights);
        let val_f1 = evaluate(&model, g, &full_adj, Split::Val)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss,
            val_f1,
            lr: cfg.learning_rate,
        });
        if val_f1 >= best_val {
            best_val = val_f1;
            best_epoch = epoch;
            best = weights.clone();
        } else if epoch - best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    install(&mut model, &best);
    Ok(TrainRun {
        model,
        best_epoch,
        best_val_f1: best_val,
        log,
    })
}

fn install(model: &mut GnnModel, weights: &Weights<f32>) {
    for (layer, ws) in model.layers.iter_mut().zip(weights) {
        layer.weights.clone_from(ws);
    }
}
