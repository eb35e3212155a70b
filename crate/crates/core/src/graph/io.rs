//! GRF1 binary and JSON graph files.
//!
//! GRF1 layout (little-endian): magic `GRF1`, u64 num_nodes, u64 num_edges,
//! u32 attr_dim, u32 label_mode (0 single, 1 multi), u32 num_classes, then
//! indptr `u64[n+1]`, indices `u32[e]`, attributes `f32[n*attr_dim]`,
//! labels (`u32[n]`, or one LSB-first bitset of `ceil(num_classes/8)` bytes
//! per node), split `u8[n]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, Labels, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"GRF1";
const HEADER_LEN: usize = 32;

/// Reads a graph, detecting GRF1 by its magic and falling back to JSON.
pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let bytes = fs::read(path)?;
    read_graph(&bytes)
}

pub fn read_graph(bytes: &[u8]) -> Result<Graph> {
    if bytes.starts_with(MAGIC) {
        read_grf1(bytes)
    } else if bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{') {
        read_json(bytes)
    } else {
        Err(Error::Parse {
            offset: 0,
            field: "magic",
            msg: "expected GRF1 magic or a JSON object".into(),
        })
    }
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_graph(g))?;
    Ok(())
}

pub fn save_graph_json(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_vec(&JsonGraph::from_graph(g))?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Parse {
                offset: self.pos,
                field,
                msg: format!(
                    "truncated: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn checked_len(&self, count: u64, width: usize, field: &'static str) -> Result<usize> {
        usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(width))
            .ok_or(Error::Parse {
                offset: self.pos,
                field,
                msg: format!("count {count} overflows"),
            })
    }
}

fn read_grf1(bytes: &[u8]) -> Result<Graph> {
    let mut r = Reader { bytes, pos: 4 };
    let n = r.u64("num_nodes")?;
    let e = r.u64("num_edges")?;
    let attr_dim = r.u32("attr_dim")? as usize;
    let label_mode_at = r.pos;
    let label_mode = r.u32("label_mode")?;
    let num_classes = r.u32("num_classes")? as usize;
    if label_mode > 1 {
        return Err(Error::Parse {
            offset: label_mode_at,
            field: "label_mode",
            msg: format!("unknown label mode {label_mode}"),
        });
    }
    let nodes = r.checked_len(n, 1, "num_nodes")?;

    let indptr_at = r.pos;
    let raw = r.take(r.checked_len(n + 1, 8, "indptr")?, "indptr")?;
    let indptr: Vec<usize> = raw
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();

    let indices_at = r.pos;
    let raw = r.take(r.checked_len(e, 4, "indices")?, "indices")?;
    let indices: Vec<u32> = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let attr_len = nodes.checked_mul(attr_dim).ok_or(Error::Parse {
        offset: r.pos,
        field: "attributes",
        msg: "size overflows".into(),
    })?;
    let raw = r.take(attr_len * 4, "attributes")?;
    let attrs: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let labels_at = r.pos;
    let labels = if label_mode == 0 {
        let raw = r.take(nodes * 4, "labels")?;
        Labels::Single(
            raw.chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    } else {
        let row_bytes = num_classes.div_ceil(8);
        let raw = r.take(nodes * row_bytes, "labels")?;
        let mut bits = Vec::with_capacity(nodes * num_classes);
        for row in raw.chunks_exact(row_bytes.max(1)).take(nodes) {
            for c in 0..num_classes {
                bits.push((row[c / 8] >> (c % 8)) & 1);
            }
        }
        Labels::Multi { num_classes, bits }
    };

    let split_at = r.pos;
    let raw = r.take(nodes, "split")?;
    let mut split = Vec::with_capacity(nodes);
    for (i, &c) in raw.iter().enumerate() {
        split.push(Split::from_code(c).ok_or(Error::Parse {
            offset: split_at + i,
            field: "split",
            msg: format!("unknown split tag {c}"),
        })?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos,
            field: "trailer",
            msg: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }

    let g = Graph {
        num_nodes: nodes,
        indptr,
        indices,
        attributes: Matrix::from_vec(nodes, attr_dim, attrs)?,
        labels,
        num_classes,
        split,
        version: 0,
    };
    if let Some((field, idx, msg)) = g.check() {
        let offset = match field {
            "indptr" => indptr_at + idx * 8,
            "indices" => indices_at + idx * 4,
            "labels" => labels_at + idx * 4,
            _ => HEADER_LEN,
        };
        return Err(Error::Parse { offset, field, msg });
    }
    Ok(g)
}

pub fn write_graph(g: &Graph) -> Vec<u8> {
    let n = g.num_nodes();
    let mut out = Vec::with_capacity(HEADER_LEN + (n + 1) * 8 + g.num_edges() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(g.num_edges() as u64).to_le_bytes());
    out.extend_from_slice(&(g.attr_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(g.labels().is_multi() as u32).to_le_bytes());
    out.extend_from_slice(&(g.num_classes() as u32).to_le_bytes());
    for &p in g.indptr() {
        out.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &i in g.indices() {
        out.extend_from_slice(&i.to_le_bytes());
    }
    for &a in g.attributes().as_slice() {
        out.extend_from_slice(&a.to_le_bytes());
    }
    match g.labels() {
        Labels::Single(v) => {
            for &c in v {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        Labels::Multi { num_classes, bits } => {
            let row_bytes = num_classes.div_ceil(8);
            for v in 0..n {
                let mut row = vec![0u8; row_bytes];
                for c in 0..*num_classes {
                    if bits[v * num_classes + c] != 0 {
                        row[c / 8] |= 1 << (c % 8);
                    }
                }
                out.extend_from_slice(&row);
            }
        }
    }
    out.extend(g.split().iter().map(|s| s.code()));
    out
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JsonLabels {
    Single(Vec<u32>),
    Multi(Vec<Vec<u8>>),
}

/// JSON mirror of GRF1; attributes and multi-labels are nested rows.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonGraph {
    num_nodes: usize,
    num_edges: usize,
    attr_dim: usize,
    label_mode: u32,
    num_classes: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    attributes: Vec<Vec<f32>>,
    labels: JsonLabels,
    split: Vec<u8>,
}

impl JsonGraph {
    fn from_graph(g: &Graph) -> Self {
        let labels = match g.labels() {
            Labels::Single(v) => JsonLabels::Single(v.clone()),
            Labels::Multi { num_classes, bits } => {
                JsonLabels::Multi(bits.chunks(*num_classes.max(&1)).map(<[u8]>::to_vec).collect())
            }
        };
        JsonGraph {
            num_nodes: g.num_nodes(),
            num_edges: g.num_edges(),
            attr_dim: g.attr_dim(),
            label_mode: g.labels().is_multi() as u32,
            num_classes: g.num_classes(),
            indptr: g.indptr().to_vec(),
            indices: g.indices().to_vec(),
            attributes: (0..g.num_nodes())
                .map(|v| g.attributes().row(v).to_vec())
                .collect(),
            labels,
            split: g.split().iter().map(|s| s.code()).collect(),
        }
    }
}

fn json_err(field: &'static str, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset: 0,
        field,
        msg: msg.into(),
    }
}

fn read_json(bytes: &[u8]) -> Result<Graph> {
    let j: JsonGraph = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: 0,
        field: "json",
        msg: e.to_string(),
    })?;
    if j.indptr.len() != j.num_nodes + 1 {
        return Err(json_err("indptr", "indptr must have num_nodes+1 entries"));
    }
    if j.indices.len() != j.num_edges {
        return Err(json_err("indices", "indices length != num_edges"));
    }
    let mut attrs = Vec::with_capacity(j.num_nodes * j.attr_dim);
    if j.attributes.len() != j.num_nodes {
        return Err(json_err("attributes", "attribute row count != num_nodes"));
    }
    for row in &j.attributes {
        if row.len() != j.attr_dim {
            return Err(json_err("attributes", "attribute row width != attr_dim"));
        }
        attrs.extend_from_slice(row);
    }
    let labels = match (j.label_mode, j.labels) {
        (0, JsonLabels::Single(v)) => Labels::Single(v),
        (1, JsonLabels::Multi(rows)) => {
            let mut bits = Vec::with_capacity(rows.len() * j.num_classes);
            for row in rows {
                if row.len() != j.num_classes {
                    return Err(json_err("labels", "multi-label row width != num_classes"));
                }
                bits.extend(row.into_iter().map(|b| (b != 0) as u8));
            }
            Labels::Multi {
                num_classes: j.num_classes,
                bits,
            }
        }
        (1, JsonLabels::Single(v)) if v.is_empty() => Labels::Multi {
            num_classes: j.num_classes,
            bits: vec![],
        },
        (m, _) => return Err(json_err("label_mode", format!("labels do not match mode {m}"))),
    };
    let mut split = Vec::with_capacity(j.split.len());
    for c in j.split {
        split.push(Split::from_code(c).ok_or_else(|| json_err("split", format!("unknown split tag {c}")))?);
    }
    let g = Graph {
        num_nodes: j.num_nodes,
        indptr: j.indptr,
        indices: j.indices,
        attributes: Matrix::from_vec(j.num_nodes, j.attr_dim, attrs)?,
        labels,
        num_classes: j.num_classes,
        split,
        version: 0,
    };
    if let Some((field, _, msg)) = g.check() {
        return Err(json_err(field, msg));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::t4;
    use super::*;

    const T4_JSON: &str = r#"{
        "num_nodes": 4, "num_edges": 8, "attr_dim": 2, "label_mode": 0, "num_classes": 2,
        "indptr": [0, 2, 4, 7, 8],
        "indices": [1, 2, 0, 2, 0, 1, 3, 2],
        "attributes": [[1, 0], [0, 1], [1, 1], [2, 0]],
        "labels": [0, 1, 1, 0],
        "split": [0, 0, 0, 2]
    }"#;

    #[test]
    fn json_t4_matches_fixture() {
        let g = read_graph(T4_JSON.as_bytes()).unwrap();
        assert_eq!(g.num_edges(), 8);
        assert_eq!(g.attr_dim(), 2);
        assert_eq!(g, t4());
    }

    #[test]
    fn binary_round_trip() {
        let g = t4();
        let bytes = write_graph(&g);
        assert_eq!(&bytes[..4], b"GRF1");
        assert_eq!(read_graph(&bytes).unwrap(), g);
    }

    #[test]
    fn multi_label_round_trip() {
        let g = Graph::new(
            vec![0, 0, 0, 0],
            vec![],
            Matrix::zeros(3, 1),
            Labels::Multi {
                num_classes: 10,
                bits: (0..30).map(|i| (i % 3 == 0) as u8).collect(),
            },
            10,
            vec![Split::Train, Split::Val, Split::Test],
        )
        .unwrap();
        let bytes = write_graph(&g);
        // header + indptr + (no indices) + attrs + 2 bytes/node labels + split
        assert_eq!(bytes.len(), 32 + 4 * 8 + 3 * 4 + 3 * 2 + 3);
        assert_eq!(read_graph(&bytes).unwrap(), g);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        save_graph_json(&g, &p).unwrap();
        assert_eq!(load_graph(&p).unwrap(), g);
    }

    #[test]
    fn empty_graph() {
        let g = read_graph(
            br#"{"num_nodes":0,"num_edges":0,"attr_dim":3,"label_mode":0,"num_classes":1,
                 "indptr":[0],"indices":[],"attributes":[],"labels":[],"split":[]}"#,
        )
        .unwrap();
        assert_eq!(g.indptr(), &[0]);
        assert_eq!(read_graph(&write_graph(&g)).unwrap(), g);
    }

    #[test]
    fn index_out_of_range_reports_offset() {
        let mut g = t4();
        g.indices[5] = 7;
        let err = read_graph(&write_graph(&g)).unwrap_err();
        match err {
            Error::Parse { offset, field, msg } => {
                assert_eq!(field, "indices");
                assert_eq!(offset, 32 + 5 * 8 + 5 * 4);
                assert!(msg.contains("index out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad_json = T4_JSON.replace("[1, 2, 0, 2, 0, 1, 3, 2]", "[1, 2, 0, 2, 0, 1, 7, 2]");
        let msg = read_graph(bad_json.as_bytes()).unwrap_err().to_string();
        assert!(msg.contains("index out of range"), "{msg}");
    }

    #[test]
    fn truncated_and_bad_magic() {
        let bytes = write_graph(&t4());
        let err = read_graph(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Parse { field: "split", .. }), "{err:?}");
        let err = read_graph(&bytes[..22]).unwrap_err();
        assert!(matches!(err, Error::Parse { field: "attr_dim", offset: 20, .. }), "{err:?}");
        assert!(matches!(
            read_graph(b"XXXX1234").unwrap_err(),
            Error::Parse { field: "magic", .. }
        ));
    }
}
