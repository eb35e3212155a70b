use super::LossKind;
use crate::error::{Error, Result};
use crate::graph::{spmm, CsrMatrix, Labels};
use crate::model::{Activation, Combiner, Layer};
use crate::tensor::{hconcat, hsplit, matmul, matmul_nt, matmul_tn, Matrix, Real};

/// Per-branch weights of every layer, in model order.
pub type Weights<T> = Vec<Vec<Matrix<T>>>;

/// Full-batch supervised loss of a layer stack on one graph, with its
/// analytic gradient. Generic over the scalar so gradients can be checked
/// in f64.
pub struct Objective<'a> {
    layers: &'a [Layer],
    adj: &'a CsrMatrix,
    adj_t: CsrMatrix,
    labels: &'a Labels,
    loss: LossKind,
}

struct Tape<T> {
    aggregated: Vec<Matrix<T>>,
    pre: Matrix<T>,
}

impl<'a> Objective<'a> {
    pub fn new(layers: &'a [Layer], adj: &'a CsrMatrix, labels: &'a Labels, loss: LossKind) -> Result<Self> {
        if labels.len() != adj.nrows {
            return Err(Error::contract(
                "objective",
                format!("{} labels for {} nodes", labels.len(), adj.nrows),
            ));
        }
        match (loss, labels) {
            (LossKind::SoftmaxCe, Labels::Single(_)) | (LossKind::SigmoidBce, Labels::Multi { .. }) => {}
            _ => return Err(Error::Config(format!("{loss:?} does not match the label mode"))),
        }
        Ok(Self {
            layers,
            adj,
            adj_t: adj.transpose(),
            labels,
            loss,
        })
    }

    fn forward<T: Real>(&self, weights: &Weights<T>, attrs: &Matrix<T>) -> Result<(Vec<Tape<T>>, Matrix<T>)> {
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut h = attrs.clone();
        for (layer, ws) in self.layers.iter().zip(weights) {
            let spec = &layer.spec;
            let mut aggregated = Vec::with_capacity(ws.len());
            let mut zs = Vec::with_capacity(ws.len());
            for (b, w) in ws.iter().enumerate() {
                let mut x = match &layer.selections[b] {
                    Some(sel) => h.gather_cols(sel),
                    None => h.clone(),
                };
                for _ in 0..spec.power(b) {
                    x = spmm(self.adj, &x)?;
                }
                zs.push(matmul(&x, w)?);
                aggregated.push(x);
            }
            let pre = match spec.combiner {
                Combiner::Concat => hconcat(&zs)?,
                Combiner::Mean => {
                    let mut acc = zs[0].clone();
                    for z in &zs[1..] {
                        acc.add_assign(z)?;
                    }
                    acc.scale(T::one() / T::from_f64(zs.len() as f64));
                    acc
                }
            };
            h = pre.clone();
            if spec.activation == Activation::Relu {
                crate::tensor::relu_in_place(&mut h);
            }
            tapes.push(Tape { aggregated, pre });
        }
        Ok((tapes, h))
    }

    /// Mean loss over all rows and its gradient w.r.t. the logits.
    fn loss_grad<T: Real>(&self, logits: &Matrix<T>) -> Result<(f64, Matrix<T>)> {
        let (n, c) = logits.shape();
        let mut grad = Matrix::zeros(n, c);
        let mut total = 0.0f64;
        match (self.loss, self.labels) {
            (LossKind::SoftmaxCe, Labels::Single(y)) => {
                for r in 0..n {
                    let row = logits.row(r);
                    let y = y[r] as usize;
                    if y >= c {
                        return Err(Error::contract("loss", format!("label {y} >= {c} outputs")));
                    }
                    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
                    let lse = max + sum.ln();
                    total += lse - row[y].as_f64();
                    let g = grad.row_mut(r);
                    for j in 0..c {
                        let p = (row[j].as_f64() - lse).exp();
                        g[j] = T::from_f64((p - (j == y) as u8 as f64) / n as f64);
                    }
                }
                Ok((total / n as f64, grad))
            }
            (LossKind::SigmoidBce, Labels::Multi { bits, .. }) => {
                let denom = (n * c) as f64;
                for (i, (&z, g)) in logits.as_slice().iter().zip(grad.as_mut_slice()).enumerate() {
                    let z = z.as_f64();
                    let y = bits[i] as f64;
                    total += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
                    *g = T::from_f64((1.0 / (1.0 + (-z).exp()) - y) / denom);
                }
                Ok((total / denom, grad))
            }
            _ => unreachable!("checked in Objective::new"),
        }
    }

    pub fn loss<T: Real>(&self, weights: &Weights<T>, attrs: &Matrix<T>) -> Result<f64> {
        let (_, logits) = self.forward(weights, attrs)?;
        Ok(self.loss_grad(&logits)?.0)
    }

    pub fn loss_and_grad<T: Real>(&self, weights: &Weights<T>, attrs: &Matrix<T>) -> Result<(f64, Weights<T>)> {
        let (tapes, logits) = self.forward(weights, attrs)?;
        let (loss, mut dh) = self.loss_grad(&logits)?;
        let mut grads: Weights<T> = Vec::with_capacity(weights.len());
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let spec = &layer.spec;
            let tape = &tapes[i];
            if spec.activation == Activation::Relu {
                for (d, z) in dh.as_mut_slice().iter_mut().zip(tape.pre.as_slice()) {
                    if *z <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let parts = match spec.combiner {
                Combiner::Concat => hsplit(&dh, &spec.out_dims)?,
                Combiner::Mean => {
                    let mut s = dh.clone();
                    s.scale(T::one() / T::from_f64(spec.num_branches() as f64));
                    vec![s; spec.num_branches()]
                }
            };
            let mut layer_grads = Vec::with_capacity(parts.len());
            let mut d_in = (i > 0).then(|| Matrix::zeros(dh.rows(), spec.in_dim));
            for (b, dz) in parts.iter().enumerate() {
                layer_grads.push(matmul_tn(&tape.aggregated[b], dz)?);
                if let Some(d_in) = d_in.as_mut() {
                    let mut dx = matmul_nt(dz, &weights[i][b])?;
                    for _ in 0..spec.power(b) {
                        dx = spmm(&self.adj_t, &dx)?;
                    }
                    match &layer.selections[b] {
                        Some(sel) => {
                            for r in 0..dx.rows() {
                                let src = dx.row(r);
                                let dst = d_in.row_mut(r);
                                for (p, &c) in sel.iter().enumerate() {
                                    dst[c] += src[p];
                                }
                            }
                        }
                        None => d_in.add_assign(&dx)?,
                    }
                }
            }
            grads.push(layer_grads);
            if let Some(d) = d_in {
                dh = d;
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }
}
