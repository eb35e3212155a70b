//! GNM1 model files.
//!
//! Layout (little-endian): magic `GNM1`, u32 num_layers, then per layer:
//! u32 k_min, u32 k_max, u8 combiner (0 concat, 1 mean), u8 activation
//! (0 none, 1 relu), u32 in_dim, u32 out_dims[k_max-k_min+1], then the f32
//! weight blocks row-major in branch order.
//!
//! A layer whose branches read channel subsets sets bit `0x80` of the
//! combiner byte; per-branch selections (u32 count then u32 channel ids)
//! follow `out_dims`, and each weight block has one row per selected
//! channel.

use std::fs;
use std::path::Path;

use super::{Activation, Combiner, GnnModel, Layer, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"GNM1";
const HAS_SELECTIONS: u8 = 0x80;

pub fn save_model(model: &GnnModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GnnModel> {
    read_model(&fs::read(path)?)
}

pub fn write_model(model: &GnnModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for layer in &model.layers {
        let s = &layer.spec;
        out.extend_from_slice(&(s.k_min as u32).to_le_bytes());
        out.extend_from_slice(&(s.k_max as u32).to_le_bytes());
        let mut comb = match s.combiner {
            Combiner::Concat => 0u8,
            Combiner::Mean => 1,
        };
        let has_sel = layer.selections.iter().any(Option::is_some);
        if has_sel {
            comb |= HAS_SELECTIONS;
        }
        out.push(comb);
        out.push(match s.activation {
            Activation::None => 0,
            Activation::Relu => 1,
        });
        out.extend_from_slice(&(s.in_dim as u32).to_le_bytes());
        for &d in &s.out_dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        if has_sel {
            for b in 0..s.num_branches() {
                let sel: Vec<usize> = layer.selections[b]
                    .clone()
                    .unwrap_or_else(|| (0..s.in_dim).collect());
                out.extend_from_slice(&(sel.len() as u32).to_le_bytes());
                for c in sel {
                    out.extend_from_slice(&(c as u32).to_le_bytes());
                }
            }
        }
        for w in &layer.weights {
            for v in w.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Parse {
                offset: self.pos,
                field,
                msg: format!("truncated: need {n} bytes, {} remain", self.bytes.len() - self.pos),
            }),
        }
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()) as usize)
    }

    fn fail(&self, field: &'static str, msg: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            field,
            msg: msg.into(),
        }
    }
}

pub fn read_model(bytes: &[u8]) -> Result<GnnModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            field: "magic",
            msg: "expected GNM1".into(),
        });
    }
    let num_layers = r.u32("num_layers")?;
    let mut layers = Vec::new();
    for _ in 0..num_layers {
        let k_min = r.u32("k_min")?;
        let k_max = r.u32("k_max")?;
        if k_min > k_max {
            return Err(r.fail("k_max", format!("k_min {k_min} > k_max {k_max}")));
        }
        let comb = r.u8("combiner")?;
        let combiner = match comb & !HAS_SELECTIONS {
            0 => Combiner::Concat,
            1 => Combiner::Mean,
            c => return Err(r.fail("combiner", format!("unknown combiner {c}"))),
        };
        let activation = match r.u8("activation")? {
            0 => Activation::None,
            1 => Activation::Relu,
            a => return Err(r.fail("activation", format!("unknown activation {a}"))),
        };
        let in_dim = r.u32("in_dim")?;
        let nb = k_max - k_min + 1;
        if nb > bytes.len() {
            return Err(r.fail("k_max", "branch count exceeds file size"));
        }
        let out_dims = (0..nb)
            .map(|_| r.u32("out_dims"))
            .collect::<Result<Vec<_>>>()?;
        let mut selections = vec![None; nb];
        if comb & HAS_SELECTIONS != 0 {
            for sel in selections.iter_mut() {
                let n = r.u32("selections")?;
                if n > in_dim {
                    return Err(r.fail("selections", "selection longer than in_dim"));
                }
                *sel = Some((0..n).map(|_| r.u32("selections")).collect::<Result<Vec<_>>>()?);
            }
        }
        let spec = LayerSpec {
            k_min,
            k_max,
            combiner,
            activation,
            in_dim,
            out_dims,
        };
        let mut weights = Vec::with_capacity(nb);
        for b in 0..nb {
            let rows = selections[b].as_ref().map_or(in_dim, Vec::len);
            let cols = spec.out_dims[b];
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| r.fail("weights", "weight block size overflows"))?;
            let raw = r.take(len, "weights")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            weights.push(Matrix::from_vec(rows, cols, data)?);
        }
        for sel in selections.iter_mut() {
            if sel
                .as_ref()
                .is_some_and(|s| s.len() == in_dim && s.iter().enumerate().all(|(i, &c)| i == c))
            {
                *sel = None;
            }
        }
        let layer = Layer {
            spec,
            weights,
            selections,
        };
        layer
            .validate()
            .map_err(|e| r.fail("layer", e.to_string()))?;
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailer", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    GnnModel::new(layers).map_err(|e| Error::Parse {
        offset: bytes.len(),
        field: "layers",
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GnnModel {
        let specs = vec![
            LayerSpec::sage(5, 3),
            LayerSpec {
                k_min: 0,
                k_max: 2,
                combiner: Combiner::Mean,
                activation: Activation::Relu,
                in_dim: 6,
                out_dims: vec![4; 3],
            },
            LayerSpec::dense(4, 2, Activation::None),
        ];
        GnnModel::init(&specs, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = sample();
        let bytes = write_model(&m);
        let back = read_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.layers[1].spec.combiner, Combiner::Mean);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.gnm");
        save_model(&m, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
    }

    #[test]
    fn plain_layout_has_no_extra_bytes() {
        let m = GnnModel::new(vec![Layer::new(
            LayerSpec::dense(2, 3, Activation::Relu),
            vec![Matrix::zeros(2, 3)],
        )
        .unwrap()])
        .unwrap();
        assert_eq!(write_model(&m).len(), 4 + 4 + 4 + 4 + 1 + 1 + 4 + 4 + 6 * 4);
    }

    #[test]
    fn selections_round_trip() {
        let mut m = sample();
        m.layers[0].selections[1] = Some(vec![0, 3]);
        m.layers[0].weights[1] = m.layers[0].weights[1].gather_rows(&[0, 3]);
        m.validate().unwrap();
        assert_eq!(read_model(&write_model(&m)).unwrap(), m);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let bytes = write_model(&sample());
        for cut in [3, 10, 30, bytes.len() - 1] {
            assert!(matches!(read_model(&bytes[..cut]), Err(Error::Parse { .. })));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(&bad), Err(Error::Parse { field: "magic", .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(read_model(&extra).is_err());
    }

    #[test]
    fn shape_mismatch_between_layers_rejected() {
        let mut m = sample();
        m.layers[2].spec.in_dim = 5;
        m.layers[2].weights[0] = Matrix::zeros(5, 2);
        let bytes = write_model(&GnnModel { layers: m.layers });
        assert!(matches!(read_model(&bytes), Err(Error::Parse { .. })));
    }
}
