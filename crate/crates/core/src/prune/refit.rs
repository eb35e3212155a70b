use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use super::{PruneMask, PruneProblem};
use crate::error::{Error, Result};
use crate::model::Combiner;
use crate::optim::Adam;
use crate::tensor::{matmul, matmul_tn, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitMode {
    ClosedForm,
    Sgd,
}

const JITTER: f64 = 1e-8;

/// One least-squares block: columns of `x` are scaled, retained channels of
/// one or more branches; `prior` holds the weights that reproduce the
/// original layer on those channels.
struct Block {
    x: Matrix<f64>,
    y: Matrix<f64>,
    prior: Matrix<f64>,
    /// (branch, channel) for every column of `x`.
    cols: Vec<(usize, usize)>,
}

fn build_blocks(p: &PruneProblem, mask: &PruneMask) -> Vec<Block> {
    let nb = p.num_branches();
    let n = p.rows();
    let branch_cols = |b: usize| -> Vec<(usize, usize)> {
        if p.masked(b) {
            mask.kept_channels().into_iter().map(|j| (b, j)).collect()
        } else {
            (0..p.channels()).map(|j| (b, j)).collect()
        }
    };
    let groups: Vec<(Vec<usize>, usize)> = match p.combiner {
        Combiner::Concat => (0..nb).filter(|&b| p.masked(b)).map(|b| (vec![b], b)).collect(),
        Combiner::Mean => vec![((0..nb).collect(), 0)],
    };
    let scale = if p.combiner == Combiner::Mean { 1.0 / nb as f64 } else { 1.0 };
    groups
        .into_iter()
        .map(|(branches, target)| {
            let cols: Vec<(usize, usize)> = branches.iter().flat_map(|&b| branch_cols(b)).collect();
            let f = p.weights[branches[0]].cols();
            let mut x = Matrix::zeros(n, cols.len());
            let mut prior = Matrix::zeros(cols.len(), f);
            for (k, &(b, j)) in cols.iter().enumerate() {
                let beta = if p.masked(b) { mask.beta[j] as f64 } else { 1.0 };
                let obs = &p.observations[b];
                for r in 0..n {
                    x.set(r, k, obs.get(r, j) as f64 * beta * scale);
                }
                for (dst, &w) in prior.row_mut(k).iter_mut().zip(p.weights[b].row(j)) {
                    *dst = w / beta;
                }
            }
            Block {
                x,
                y: p.targets[target].clone(),
                prior,
                cols,
            }
        })
        .collect()
}

fn solve_spd(a: &Matrix<f64>, b: &Matrix<f64>) -> Result<Matrix<f64>> {
    let m = a.rows();
    let mut dm = DMatrix::from_row_slice(m, m, a.as_slice());
    let chol = match Cholesky::new(dm.clone()) {
        Some(ch) => ch,
        None => {
            let mean_diag = (0..m).map(|i| dm[(i, i)]).sum::<f64>() / m.max(1) as f64;
            let eps = JITTER * mean_diag.max(f64::MIN_POSITIVE);
            for i in 0..m {
                dm[(i, i)] += eps;
            }
            Cholesky::new(dm).ok_or_else(|| {
                Error::Singular("normal equations stay singular after ridge jitter; use refit mode sgd".into())
            })?
        }
    };
    let rhs = DMatrix::from_row_slice(b.rows(), b.cols(), b.as_slice());
    let sol = chol.solve(&rhs);
    let mut out = Matrix::zeros(b.rows(), b.cols());
    for r in 0..b.rows() {
        for c in 0..b.cols() {
            out.set(r, c, sol[(r, c)]);
        }
    }
    Ok(out)
}

/// Closed-form fit of `prior + Δ`: the normal equations are solved for the
/// correction, so directions the training rows do not constrain keep their
/// original weights.
fn closed_form(block: &Block) -> Result<Matrix<f64>> {
    let xtx = matmul_tn(&block.x, &block.x)?;
    let mut resid = block.y.clone();
    let fitted = matmul(&block.x, &block.prior)?;
    for (r, f) in resid.as_mut_slice().iter_mut().zip(fitted.as_slice()) {
        *r -= f;
    }
    let rhs = matmul_tn(&block.x, &resid)?;
    let delta = solve_spd(&xtx, &rhs)?;
    let mut w = block.prior.clone();
    w.add_assign(&delta)?;
    Ok(w)
}

fn mse(x: &Matrix<f64>, w: &Matrix<f64>, y: &Matrix<f64>) -> Result<(f64, Matrix<f64>)> {
    let mut r = matmul(x, w)?;
    let mut sq = 0.0;
    for (a, b) in r.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *a -= b;
        sq += *a * *a;
    }
    Ok((sq / y.as_slice().len().max(1) as f64, r))
}

/// Full-batch Adam from the prior until the relative loss change stays
/// below 1e-5.
fn sgd(block: &Block) -> Result<Matrix<f64>> {
    let mut w = block.prior.clone();
    let n_entries = block.y.as_slice().len().max(1) as f64;
    let mut adam = Adam::with_lr(1e-2);
    let (mut prev, _) = mse(&block.x, &w, &block.y)?;
    let mut calm = 0;
    for it in 0..100_000 {
        let (_, r) = mse(&block.x, &w, &block.y)?;
        let mut g = matmul_tn(&block.x, &r)?;
        g.scale(2.0 / n_entries);
        adam.lr = 1e-2 / (1.0 + it as f64 / 500.0);
        adam.step(&mut [w.as_mut_slice()], &[g.as_slice()]);
        let (loss, _) = mse(&block.x, &w, &block.y)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { epoch: it + 1 });
        }
        let rel = (prev - loss).abs() / prev.max(f64::MIN_POSITIVE);
        calm = if rel < 1e-5 { calm + 1 } else { 0 };
        prev = loss;
        if calm >= 20 || loss == 0.0 {
            break;
        }
    }
    Ok(w)
}

/// Least-squares weights for the clipped mask, one `c × f_out` block per
/// branch. Rows of pruned channels are zero in masked branches; branches
/// the mask does not touch keep their weights under the concat combiner
/// and are refit jointly under the mean combiner.
pub fn refit_weights(p: &PruneProblem, mask: &PruneMask, mode: RefitMode) -> Result<Vec<Matrix<f64>>> {
    if !mask.clipped {
        return Err(Error::InvalidMask("refit needs a clipped mask".into()));
    }
    if mask.len() != p.channels() {
        return Err(Error::InvalidMask(format!(
            "mask has {} entries for {} channels",
            mask.len(),
            p.channels()
        )));
    }
    if mask.retained() == 0 {
        return Err(Error::InvalidMask("mask retains no channel".into()));
    }
    let mut out = p.weights.clone();
    for block in build_blocks(p, mask) {
        let w = match mode {
            RefitMode::ClosedForm => closed_form(&block)?,
            RefitMode::Sgd => sgd(&block)?,
        };
        let mut touched: Vec<usize> = block.cols.iter().map(|&(b, _)| b).collect();
        touched.dedup();
        for &b in &touched {
            out[b] = Matrix::zeros(p.channels(), out[b].cols());
        }
        for (k, &(b, j)) in block.cols.iter().enumerate() {
            out[b].row_mut(j).copy_from_slice(w.row(k));
        }
    }
    Ok(out)
}

/// Ridge least-squares weights over every channel, with the penalty
/// `ridge · mean(diag XᵀX)`. Collinear channels end up sharing their
/// weight evenly.
pub(crate) fn ridge_weights(p: &PruneProblem, ridge: f64) -> Result<Vec<Matrix<f64>>> {
    let mut out = p.weights.clone();
    for block in build_blocks(p, &PruneMask::identity(p.channels(), p.scope)) {
        let mut xtx = matmul_tn(&block.x, &block.x)?;
        let m = xtx.rows();
        let mean_diag = (0..m).map(|i| xtx.get(i, i)).sum::<f64>() / m.max(1) as f64;
        for i in 0..m {
            xtx.set(i, i, xtx.get(i, i) + ridge * mean_diag);
        }
        let w = solve_spd(&xtx, &matmul_tn(&block.x, &block.y)?)?;
        for (k, &(b, j)) in block.cols.iter().enumerate() {
            out[b].row_mut(j).copy_from_slice(w.row(k));
        }
    }
    Ok(out)
}

/// Normal-equation residual `Xᵀ(Y − XŴ)` of a refit, relative to `‖XᵀY‖∞`,
/// worst over blocks.
pub fn normal_residual(p: &PruneProblem, mask: &PruneMask, weights: &[Matrix<f64>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for block in build_blocks(p, mask) {
        let mut w = Matrix::zeros(block.cols.len(), block.prior.cols());
        for (k, &(b, j)) in block.cols.iter().enumerate() {
            w.row_mut(k).copy_from_slice(weights[b].row(j));
        }
        let (_, r) = mse(&block.x, &w, &block.y)?;
        let g = matmul_tn(&block.x, &r)?;
        let xty = matmul_tn(&block.x, &block.y)?;
        worst = worst.max(g.max_abs() / xty.max_abs().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}
