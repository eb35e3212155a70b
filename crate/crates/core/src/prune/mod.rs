//! LASSO input-channel pruning.
//!
//! Each layer gets one coefficient per input channel, shared by the
//! branches it scales. A β-phase drives coefficients to zero under a
//! growing L1 penalty with the weights fixed, the mask is clipped to the
//! budget, and the weights are refit by least squares. Layers are handled
//! from the head towards the input.

mod lasso;
mod mask;
mod problem;
mod refit;
mod scheme;

pub use lasso::{beta_epoch, clip_mask, run_beta_phase, BetaOptimizer, BetaPhase, BetaSolver, PenaltySchedule, StopReason};
pub use mask::{MaskScope, PruneBudget, PruneMask};
pub use problem::{collect_problem, reconstruction_mse, PruneProblem};
pub use refit::{normal_residual, refit_weights, RefitMode};
pub use scheme::{
    baseline_masks, install_mask, prune_layer, prune_model, scheme_budgets, BaselineMethod, LayerReport, PruneOptions,
    PruneReport, Scheme,
};
