//! Graph storage and transforms.
//!
//! A [`Graph`] keeps its adjacency in CSR form where row `v` lists the
//! in-neighbourhood aggregated into `v`. Undirected graphs store both arcs.

mod adjacency;
mod io;

pub use adjacency::{normalize, spmm, spmm_counted, CsrMatrix, NormalizedAdjacency, NormScheme};
pub use io::{load_graph, read_graph, save_graph, save_graph_json, write_graph};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Node labels: one class id per node, or a dense 0/1 row per node.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Single(Vec<u32>),
    Multi { num_classes: usize, bits: Vec<u8> },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single(v) => v.len(),
            Labels::Multi { num_classes, bits } => {
                if *num_classes == 0 {
                    0
                } else {
                    bits.len() / num_classes
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_multi(&self) -> bool {
        matches!(self, Labels::Multi { .. })
    }

    /// Labels of the listed nodes, in list order.
    pub fn gather(&self, nodes: &[usize]) -> Labels {
        match self {
            Labels::Single(v) => Labels::Single(nodes.iter().map(|&i| v[i]).collect()),
            Labels::Multi { num_classes, bits } => {
                let c = *num_classes;
                let mut out = Vec::with_capacity(nodes.len() * c);
                for &i in nodes {
                    out.extend_from_slice(&bits[i * c..(i + 1) * c]);
                }
                Labels::Multi {
                    num_classes: c,
                    bits: out,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    attributes: DenseMatrix,
    labels: Labels,
    num_classes: usize,
    split: Vec<Split>,
    version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegreeStats {
    pub avg_degree: f64,
    pub max_degree: usize,
    pub isolated_count: usize,
}

/// Induced subgraph plus the map from its local ids back to the parent graph.
#[derive(Debug, Clone)]
pub struct InducedGraph {
    pub graph: Graph,
    pub node_ids: Vec<u32>,
}

impl Graph {
    /// Assembles and validates a graph. `version` starts at 0.
    pub fn new(
        indptr: Vec<usize>,
        indices: Vec<u32>,
        attributes: DenseMatrix,
        labels: Labels,
        num_classes: usize,
        split: Vec<Split>,
    ) -> Result<Self> {
        let num_nodes = indptr.len().saturating_sub(1);
        let g = Self {
            num_nodes,
            indptr,
            indices,
            attributes,
            labels,
            num_classes,
            split,
            version: 0,
        };
        if let Some((field, _, msg)) = g.check() {
            return Err(Error::InvalidGraph(format!("{field}: {msg}")));
        }
        Ok(g)
    }

    /// Builds a graph from an arc list `(dst, src)`: `src` is aggregated into
    /// `dst`. Arcs within a row keep their input order.
    pub fn from_arcs(
        num_nodes: usize,
        arcs: &[(u32, u32)],
        attributes: DenseMatrix,
        labels: Labels,
        num_classes: usize,
        split: Vec<Split>,
    ) -> Result<Self> {
        let (indptr, indices) = arcs_to_csr(num_nodes, arcs)?;
        Self::new(indptr, indices, attributes, labels, num_classes, split)
    }

    /// Returns `(field, element index, message)` for the first violated
    /// invariant.
    pub(crate) fn check(&self) -> Option<(&'static str, usize, String)> {
        if self.indptr.is_empty() {
            return Some(("indptr", 0, "indptr must have num_nodes+1 entries".into()));
        }
        if self.indptr[0] != 0 {
            return Some(("indptr", 0, "indptr[0] must be 0".into()));
        }
        for i in 1..self.indptr.len() {
            if self.indptr[i] < self.indptr[i - 1] {
                return Some(("indptr", i, "indptr must be non-decreasing".into()));
            }
        }
        if self.indptr[self.num_nodes] != self.indices.len() {
            return Some((
                "indptr",
                self.num_nodes,
                format!(
                    "indptr[num_nodes]={} but num_edges={}",
                    self.indptr[self.num_nodes],
                    self.indices.len()
                ),
            ));
        }
        if let Some((i, &v)) = self
            .indices
            .iter()
            .enumerate()
            .find(|(_, &v)| v as usize >= self.num_nodes)
        {
            return Some((
                "indices",
                i,
                format!("index out of range: {v} >= {}", self.num_nodes),
            ));
        }
        if self.attributes.rows() != self.num_nodes {
            return Some((
                "attributes",
                0,
                format!(
                    "{} attribute rows for {} nodes",
                    self.attributes.rows(),
                    self.num_nodes
                ),
            ));
        }
        if self.labels.len() != self.num_nodes {
            return Some((
                "labels",
                0,
                format!("{} label rows for {} nodes", self.labels.len(), self.num_nodes),
            ));
        }
        match &self.labels {
            Labels::Single(v) => {
                if let Some((i, &c)) = v
                    .iter()
                    .enumerate()
                    .find(|(_, &c)| c as usize >= self.num_classes)
                {
                    return Some((
                        "labels",
                        i,
                        format!("class {c} >= num_classes {}", self.num_classes),
                    ));
                }
            }
            Labels::Multi { num_classes, .. } => {
                if *num_classes != self.num_classes {
                    return Some(("labels", 0, "multi-label width != num_classes".into()));
                }
            }
        }
        if self.split.len() != self.num_nodes {
            return Some((
                "split",
                0,
                format!("{} split tags for {} nodes", self.split.len(), self.num_nodes),
            ));
        }
        None
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.indices[self.indptr[v]..self.indptr[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.indptr[v + 1] - self.indptr[v]
    }

    pub fn attributes(&self) -> &DenseMatrix {
        &self.attributes
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Node ids carrying the given split tag, ascending.
    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.num_nodes)
            .filter(|&v| self.split[v] == split)
            .collect()
    }

    pub fn degree_stats(&self) -> Result<DegreeStats> {
        degree_stats(self)
    }

    /// Copy with additional arcs `(dst, src)` appended to their rows and the
    /// version bumped.
    pub fn with_added_arcs(&self, arcs: &[(u32, u32)]) -> Result<Graph> {
        let mut all: Vec<(u32, u32)> = Vec::with_capacity(self.num_edges() + arcs.len());
        for v in 0..self.num_nodes {
            all.extend(self.neighbors(v).iter().map(|&u| (v as u32, u)));
        }
        all.extend_from_slice(arcs);
        let (indptr, indices) = arcs_to_csr(self.num_nodes, &all)?;
        let mut g = Graph::new(
            indptr,
            indices,
            self.attributes.clone(),
            self.labels.clone(),
            self.num_classes,
            self.split.clone(),
        )?;
        g.version = self.version + 1;
        Ok(g)
    }

    /// Copy with replaced attributes and the version bumped.
    pub fn with_attributes(&self, attributes: DenseMatrix) -> Result<Graph> {
        let mut g = Graph::new(
            self.indptr.clone(),
            self.indices.clone(),
            attributes,
            self.labels.clone(),
            self.num_classes,
            self.split.clone(),
        )?;
        g.version = self.version + 1;
        Ok(g)
    }

    /// Copy with the split tags replaced (does not touch structure or version).
    pub fn with_split(&self, split: Vec<Split>) -> Result<Graph> {
        let mut g = self.clone();
        g.split = split;
        if let Some((field, _, msg)) = g.check() {
            return Err(Error::InvalidGraph(format!("{field}: {msg}")));
        }
        Ok(g)
    }

    /// Adds every missing reverse arc and drops duplicate arcs.
    pub fn symmetrized(&self) -> Result<Graph> {
        let mut arcs: Vec<(u32, u32)> = Vec::with_capacity(self.num_edges() * 2);
        for v in 0..self.num_nodes {
            for &u in self.neighbors(v) {
                arcs.push((v as u32, u));
                arcs.push((u, v as u32));
            }
        }
        arcs.sort_unstable();
        arcs.dedup();
        let (indptr, indices) = arcs_to_csr(self.num_nodes, &arcs)?;
        let mut g = Graph::new(
            indptr,
            indices,
            self.attributes.clone(),
            self.labels.clone(),
            self.num_classes,
            self.split.clone(),
        )?;
        g.version = self.version;
        Ok(g)
    }

    /// Induced subgraph on the listed nodes (kept in list order). Only arcs
    /// with both endpoints inside survive.
    pub fn induced(&self, nodes: &[usize]) -> Result<InducedGraph> {
        let mut local = vec![u32::MAX; self.num_nodes];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i as u32;
        }
        let mut indptr = Vec::with_capacity(nodes.len() + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for &v in nodes {
            indices.extend(
                self.neighbors(v)
                    .iter()
                    .map(|&u| local[u as usize])
                    .filter(|&l| l != u32::MAX),
            );
            indptr.push(indices.len());
        }
        let graph = Graph::new(
            indptr,
            indices,
            self.attributes.gather_rows(nodes),
            self.labels.gather(nodes),
            self.num_classes,
            nodes.iter().map(|&v| self.split[v]).collect(),
        )?;
        Ok(InducedGraph {
            graph,
            node_ids: nodes.iter().map(|&v| v as u32).collect(),
        })
    }
}

fn arcs_to_csr(num_nodes: usize, arcs: &[(u32, u32)]) -> Result<(Vec<usize>, Vec<u32>)> {
    let mut counts = vec![0usize; num_nodes + 1];
    for &(d, s) in arcs {
        if d as usize >= num_nodes || s as usize >= num_nodes {
            return Err(Error::InvalidGraph(format!(
                "arc ({d},{s}) out of range for {num_nodes} nodes"
            )));
        }
        counts[d as usize + 1] += 1;
    }
    for i in 0..num_nodes {
        counts[i + 1] += counts[i];
    }
    let mut fill = counts.clone();
    let mut indices = vec![0u32; arcs.len()];
    for &(d, s) in arcs {
        indices[fill[d as usize]] = s;
        fill[d as usize] += 1;
    }
    Ok((counts, indices))
}

/// Induced subgraph on the training split, used as the optimization graph so
/// no validation or test node leaks into training or pruning.
pub fn training_graph(g: &Graph) -> Result<InducedGraph> {
    let train = g.nodes_in(Split::Train);
    if train.is_empty() {
        return Err(Error::InvalidGraph("empty train split".into()));
    }
    g.induced(&train)
}

pub fn degree_stats(g: &Graph) -> Result<DegreeStats> {
    if g.num_nodes == 0 {
        return Err(Error::InvalidGraph("degree stats of an empty graph".into()));
    }
    let mut max_degree = 0;
    let mut isolated_count = 0;
    for v in 0..g.num_nodes {
        let d = g.degree(v);
        max_degree = max_degree.max(d);
        if d == 0 {
            isolated_count += 1;
        }
    }
    Ok(DegreeStats {
        avg_degree: g.num_edges() as f64 / g.num_nodes as f64,
        max_degree,
        isolated_count,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::tensor::Matrix;

    /// Four nodes, undirected edges 0-1, 0-2, 1-2, 2-3.
    pub fn t4() -> Graph {
        let arcs = [
            (0, 1),
            (0, 2),
            (1, 0),
            (1, 2),
            (2, 0),
            (2, 1),
            (2, 3),
            (3, 2),
        ];
        Graph::from_arcs(
            4,
            &arcs,
            Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.0]]),
            Labels::Single(vec![0, 1, 1, 0]),
            2,
            vec![Split::Train, Split::Train, Split::Train, Split::Test],
        )
        .unwrap()
    }
}
