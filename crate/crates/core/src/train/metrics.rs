use crate::error::{Error, Result};
use crate::graph::Labels;
use crate::tensor::DenseMatrix;

/// Hard predictions from logits: arg-max (lowest index on ties) for
/// single-label, positive logit (sigmoid above 0.5) for multi-label.
pub fn predict(logits: &DenseMatrix, multi: bool) -> Labels {
    if multi {
        Labels::Multi {
            num_classes: logits.cols(),
            bits: logits.as_slice().iter().map(|&z| (z > 0.0) as u8).collect(),
        }
    } else {
        Labels::Single(
            (0..logits.rows())
                .map(|r| {
                    let row = logits.row(r);
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    best as u32
                })
                .collect(),
        )
    }
}

/// Micro-averaged F1 over all decisions; accuracy for single-label.
pub fn f1_micro(pred: &Labels, truth: &Labels) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::contract(
            "f1_micro",
            format!("{} predictions for {} labels", pred.len(), truth.len()),
        ));
    }
    match (pred, truth) {
        (Labels::Single(p), Labels::Single(t)) => {
            if t.is_empty() {
                return Err(Error::contract("f1_micro", "no labels"));
            }
            let hits = p.iter().zip(t).filter(|(a, b)| a == b).count();
            Ok(hits as f64 / t.len() as f64)
        }
        (
            Labels::Multi { num_classes: cp, bits: p },
            Labels::Multi { num_classes: ct, bits: t },
        ) => {
            if cp != ct {
                return Err(Error::contract("f1_micro", "class counts differ"));
            }
            let (mut tp, mut fp, mut fne) = (0u64, 0u64, 0u64);
            for (&a, &b) in p.iter().zip(t) {
                match (a != 0, b != 0) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fne += 1,
                    _ => {}
                }
            }
            let denom = 2 * tp + fp + fne;
            Ok(if denom == 0 { 1.0 } else { (2 * tp) as f64 / denom as f64 })
        }
        _ => Err(Error::contract("f1_micro", "label modes differ")),
    }
}
