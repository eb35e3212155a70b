use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::problem::Quadratic;
use super::{PruneBudget, PruneMask, PruneProblem};
use crate::error::{Error, Result};
use crate::optim::Adam;

/// How each penalty level of the β-phase is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSolver {
    /// Cyclic coordinate descent on the `c×c` quadratic form, swept until
    /// the largest coordinate change falls below `1e-7`.
    CoordinateDescent,
    /// Minibatch Adam epochs over the rows.
    Adam,
}

/// Penalty growth schedule of the β-phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySchedule {
    /// Absolute starting penalty; when absent it is
    /// `relative_lambda0 · target_energy / c`.
    pub lambda0: Option<f64>,
    pub relative_lambda0: f64,
    pub growth: f64,
    pub max_epochs: usize,
    pub over_penalty_window: usize,
    /// Adam step size for β.
    pub lr: f64,
    /// `|β_j| < retention_threshold · max|β|` counts as pruned.
    pub retention_threshold: f64,
    /// Each penalty level runs whole passes until at least this many Adam
    /// steps were taken.
    pub min_steps_per_epoch: usize,
    pub solver: BetaSolver,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            lambda0: None,
            relative_lambda0: 1e-4,
            growth: 1.2,
            max_epochs: 200,
            over_penalty_window: 3,
            lr: 0.01,
            retention_threshold: 1e-3,
            min_steps_per_epoch: 50,
            solver: BetaSolver::CoordinateDescent,
        }
    }
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if self.lambda0.is_some_and(|l| !(l >= 0.0 && l.is_finite())) || self.relative_lambda0 < 0.0 {
            return Err(Error::Config("lambda0 must be non-negative".into()));
        }
        if !(self.growth > 1.0) {
            return Err(Error::Config("growth must exceed 1".into()));
        }
        if self.max_epochs == 0 || self.over_penalty_window == 0 || self.min_steps_per_epoch == 0 {
            return Err(Error::Config(
                "max_epochs, over_penalty_window and min_steps_per_epoch must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    OverPenalized,
    MaxEpochs,
}

/// Adam state carried across β epochs.
#[derive(Debug, Clone)]
pub struct BetaOptimizer {
    adam: Adam,
    epoch: u64,
}

impl BetaOptimizer {
    pub fn new(lr: f64) -> Self {
        Self {
            adam: Adam::with_lr(lr),
            epoch: 0,
        }
    }
}

/// One minibatch epoch on `mse + λ‖β‖₁` with the weights held fixed.
///
/// An update that flips the sign of a coordinate lands it on zero instead
/// and clears that coordinate's momentum. A coordinate at zero takes the
/// minimum-norm subgradient, so it stays put while the data gradient is
/// within `λ`. Returns the updated β and the epoch-end objective over all
/// rows.
pub fn beta_epoch(p: &PruneProblem, beta: &[f64], lambda: f64, opt: &mut BetaOptimizer) -> Result<(Vec<f64>, f64)> {
    if beta.len() != p.channels() {
        return Err(Error::contract(
            "beta_epoch",
            format!("beta has {} entries for {} channels", beta.len(), p.channels()),
        ));
    }
    opt.epoch += 1;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ opt.epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut rows: Vec<usize> = (0..p.rows()).collect();
    rows.shuffle(&mut rng);
    let width = p.target_width();
    let mut beta = beta.to_vec();
    for batch in rows.chunks(p.batch_size) {
        let (_, mut grad) = p.residual_sums(batch, &beta, &p.weights, true);
        let norm = (batch.len() * width).max(1) as f64;
        for (g, &b) in grad.iter_mut().zip(&beta) {
            let data = *g / norm;
            *g = if b != 0.0 {
                data + lambda * sign(b)
            } else if data.abs() <= lambda {
                0.0
            } else {
                data - lambda * sign(data)
            };
        }
        let before = beta.clone();
        opt.adam.step(&mut [&mut beta[..]], &[&grad[..]]);
        for j in 0..beta.len() {
            if before[j] != 0.0 && beta[j] * before[j] < 0.0 {
                beta[j] = 0.0;
                opt.adam.reset_momentum(0, j);
            }
        }
    }
    let loss = p.data_loss(&beta, &p.weights) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>();
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            epoch: opt.epoch as usize,
        });
    }
    Ok((beta, loss))
}

const CD_TOL: f64 = 1e-7;
const CD_MAX_SWEEPS: usize = 1000;

/// Coordinate descent to convergence on `mse + λ‖β‖₁` at a fixed penalty,
/// starting from `beta`.
pub(crate) fn beta_coordinate_descent(q: &Quadratic, entries: f64, beta: &mut [f64], lambda: f64) {
    let c = beta.len();
    let g = &q.gram;
    let threshold = lambda * entries / 2.0;
    let mut fit: Vec<f64> = (0..c)
        .map(|j| g.row(j).iter().zip(beta.iter()).map(|(a, b)| a * b).sum())
        .collect();
    for _ in 0..CD_MAX_SWEEPS {
        let mut largest = 0.0f64;
        for j in 0..c {
            let gjj = g.get(j, j);
            let rho = q.linear[j] - (fit[j] - gjj * beta[j]);
            let next = if gjj > 0.0 {
                soft_threshold(rho, threshold) / gjj
            } else {
                0.0
            };
            let delta = next - beta[j];
            if delta != 0.0 {
                for (f, &gl) in fit.iter_mut().zip(g.row(j)) {
                    *f += gl * delta;
                }
                beta[j] = next;
                largest = largest.max(delta.abs());
            }
        }
        if largest < CD_TOL {
            break;
        }
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct BetaPhase {
    pub beta: Vec<f64>,
    pub final_lambda: f64,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
}

impl BetaPhase {
    pub fn unclipped_mask(&self, scope: super::MaskScope) -> PruneMask {
        PruneMask {
            beta: self.beta.iter().map(|&b| b as f32).collect(),
            clipped: false,
            scope,
        }
    }
}

fn prunable(beta: &[f64], threshold: f64) -> usize {
    let max = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    beta.iter().filter(|b| b.abs() < threshold * max || max == 0.0).count()
}

/// Runs β epochs with a growing penalty until enough channels are near
/// zero, the penalty dominates and shrinks every surviving coefficient for
/// `over_penalty_window` epochs in a row (or all of β is zero), or
/// `max_epochs` is reached.
pub fn run_beta_phase(p: &PruneProblem, budget: &PruneBudget, sched: &PenaltySchedule) -> Result<BetaPhase> {
    sched.validate()?;
    p.validate()?;
    let c = p.channels();
    let target_pruned = c - budget.keep(c);
    let energy = p.target_energy();
    let mut lambda = sched
        .lambda0
        .unwrap_or(sched.relative_lambda0 * energy / c.max(1) as f64);
    let mut opt = BetaOptimizer::new(sched.lr);
    let mut beta = vec![1.0; c];
    let mut streak = 0;
    let passes = sched.min_steps_per_epoch.div_ceil(p.rows().div_ceil(p.batch_size).max(1));
    let quadratic = match sched.solver {
        BetaSolver::CoordinateDescent => Some(p.quadratic()?),
        BetaSolver::Adam => None,
    };
    let entries = (p.rows() * p.target_width()).max(1) as f64;
    for epoch in 1..=sched.max_epochs {
        let mut next = beta.clone();
        match &quadratic {
            Some(q) => beta_coordinate_descent(q, entries, &mut next, lambda),
            None => {
                for _ in 0..passes {
                    next = beta_epoch(p, &next, lambda, &mut opt)?.0;
                }
            }
        }
        if next.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite { epoch });
        }
        let threshold = sched.retention_threshold * beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        let all_shrank = beta
            .iter()
            .zip(&next)
            .filter(|(old, _)| old.abs() >= threshold)
            .all(|(old, new)| new.abs() < old.abs());
        let dominated = lambda * c as f64 >= energy;
        streak = if all_shrank && dominated { streak + 1 } else { 0 };
        beta = next;
        let used = lambda;
        lambda *= sched.growth;
        if streak >= sched.over_penalty_window || beta.iter().all(|&b| b == 0.0) {
            return Ok(BetaPhase {
                beta,
                final_lambda: used,
                epochs_run: epoch,
                stop_reason: StopReason::OverPenalized,
            });
        }
        if prunable(&beta, sched.retention_threshold) >= target_pruned {
            return Ok(BetaPhase { beta, final_lambda: used, epochs_run: epoch, stop_reason: StopReason::Budget });
        }
    }
    Ok(BetaPhase {
        beta,
        final_lambda: lambda / sched.growth,
        epochs_run: sched.max_epochs,
        stop_reason: StopReason::MaxEpochs,
    })
}

/// Keeps the `⌈η·c⌉` largest-magnitude coefficients (lower index first on
/// ties) and zeroes the rest. A retained coefficient that is exactly zero
/// is set to one so the channel stays in the model.
pub fn clip_mask(beta: &[f64], budget: &PruneBudget) -> PruneMask {
    let c = beta.len();
    let keep = budget.keep(c);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| beta[b].abs().total_cmp(&beta[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0f32; c];
    for &j in &order[..keep] {
        out[j] = if beta[j] == 0.0 { 1.0 } else { beta[j] as f32 };
    }
    PruneMask {
        beta: out,
        clipped: true,
        scope: budget.scope,
    }
}
