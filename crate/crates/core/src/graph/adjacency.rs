//! Normalized adjacency operators and the sparse-dense product.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::instrument::{tally_spmm, MacCounter};
use crate::tensor::{Matrix, Real};

/// Weighted CSR matrix. Row `v` holds the weights aggregated into `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f32]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// Dense copy, used by oracles.
    pub fn to_dense(&self) -> Matrix<f64> {
        let mut d = Matrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                let cur = d.get(r, c as usize);
                d.set(r, c as usize, cur + v as f64);
            }
        }
        d
    }

    /// Transpose by counting sort; within each output row, entries appear in
    /// increasing source-row order.
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![0f32; self.nnz()];
        for r in 0..self.nrows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                let slot = fill[c as usize];
                indices[slot] = r as u32;
                values[slot] = v;
                fill[c as usize] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScheme {
    /// `D⁻¹A`: each nonempty row averages its neighbours.
    RowMean,
    /// `D^{-1/2} A D^{-1/2}`.
    Sym,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub csr: CsrMatrix,
    pub scheme: NormScheme,
    pub source_version: u64,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.csr.nrows
    }

    pub fn transpose(&self) -> CsrMatrix {
        self.csr.transpose()
    }
}

/// Builds the normalized operator. No self-loops are added; isolated nodes get
/// empty rows.
pub fn normalize(g: &Graph, scheme: NormScheme) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let mut values = Vec::with_capacity(g.num_edges());
    for v in 0..n {
        let dv = g.degree(v);
        for &u in g.neighbors(v) {
            let w = match scheme {
                NormScheme::RowMean => 1.0 / dv as f64,
                NormScheme::Sym => {
                    let du = g.degree(u as usize).max(1);
                    1.0 / ((dv * du) as f64).sqrt()
                }
            };
            values.push(w as f32);
        }
    }
    NormalizedAdjacency {
        csr: CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: g.indptr().to_vec(),
            indices: g.indices().to_vec(),
            values,
        },
        scheme,
        source_version: g.version(),
    }
}

/// `adj · h`, summing each row's contributions in CSR index order.
pub fn spmm<T: Real>(adj: &CsrMatrix, h: &Matrix<T>) -> Result<Matrix<T>> {
    spmm_counted(adj, h, None)
}

pub fn spmm_counted<T: Real>(
    adj: &CsrMatrix,
    h: &Matrix<T>,
    counter: Option<&MacCounter>,
) -> Result<Matrix<T>> {
    if h.rows() != adj.ncols {
        return Err(Error::contract(
            "spmm",
            format!("operator has {} columns, h has {} rows", adj.ncols, h.rows()),
        ));
    }
    let cols = h.cols();
    let mut out = Matrix::zeros(adj.nrows, cols);
    if cols > 0 {
        let src = h.as_slice();
        let body = |(r, orow): (usize, &mut [T])| {
            let (idx, val) = adj.row(r);
            for (&u, &w) in idx.iter().zip(val) {
                let w = T::from_f32(w);
                let hrow = &src[u as usize * cols..(u as usize + 1) * cols];
                for (o, &x) in orow.iter_mut().zip(hrow) {
                    *o += w * x;
                }
            }
        };
        let data = out.as_mut_slice();
        if adj.nnz() * cols < (1 << 14) {
            data.chunks_mut(cols).enumerate().for_each(body);
        } else {
            data.par_chunks_mut(cols).enumerate().for_each(body);
        }
    }
    tally_spmm(counter, (adj.nnz() * cols) as u64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::t4;
    use super::super::{Labels, Split};
    use super::*;
    use crate::tensor::{matmul, DenseMatrix};
    use proptest::prelude::*;

    fn dense_oracle(adj: &CsrMatrix, h: &DenseMatrix) -> Matrix<f64> {
        matmul(&adj.to_dense(), &h.cast::<f64>()).unwrap()
    }

    #[test]
    fn row_mean_values_on_t4() {
        let a = normalize(&t4(), NormScheme::RowMean);
        assert_eq!(a.csr.row(0).1, &[0.5, 0.5]);
        let third = (1.0f64 / 3.0) as f32;
        assert_eq!(a.csr.row(2).1, &[third, third, third]);
        assert_eq!(a.csr.row(3).1, &[1.0]);
    }

    #[test]
    fn sym_values_on_t4() {
        let a = normalize(&t4(), NormScheme::Sym);
        // edge 2->3: deg(2)=3, deg(3)=1
        let (idx, val) = a.csr.row(2);
        let pos = idx.iter().position(|&u| u == 3).unwrap();
        assert!((val[pos] as f64 - 1.0 / 3f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn isolated_node_gives_zero_operator() {
        let g = Graph::new(
            vec![0, 0],
            vec![],
            Matrix::from_rows(&[[3.0f32]]),
            Labels::Single(vec![0]),
            1,
            vec![Split::Train],
        )
        .unwrap();
        let a = normalize(&g, NormScheme::RowMean);
        assert_eq!(a.csr.nnz(), 0);
        let out = spmm(&a.csr, g.attributes()).unwrap();
        assert_eq!(out.as_slice(), &[0.0]);
    }

    #[test]
    fn spmm_on_t4_attributes() {
        let g = t4();
        let a = normalize(&g, NormScheme::RowMean);
        let out = spmm(&a.csr, g.attributes()).unwrap();
        let expected = [[0.5, 1.0], [1.0, 0.5], [1.0, 1.0 / 3.0], [1.0, 1.0]];
        for (r, row) in expected.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert!((out.get(r, c) as f64 - v).abs() < 1e-6);
            }
        }
        let oracle = dense_oracle(&a.csr, g.attributes());
        assert!(out.cast::<f64>().max_abs_diff(&oracle) < 1e-6);
    }

    #[test]
    fn spmm_zero_input_and_dimension_check() {
        let g = t4();
        let a = normalize(&g, NormScheme::RowMean);
        assert_eq!(spmm(&a.csr, &DenseMatrix::zeros(4, 3)).unwrap(), DenseMatrix::zeros(4, 3));
        assert!(spmm(&a.csr, &DenseMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn transpose_round_trips() {
        let a = normalize(&t4(), NormScheme::RowMean);
        let t = a.transpose();
        assert_eq!(t.to_dense(), a.csr.to_dense().transpose());
        assert_eq!(t.transpose(), a.csr);
    }

    #[test]
    fn spmm_counts_macs() {
        let g = t4();
        let a = normalize(&g, NormScheme::RowMean);
        let c = MacCounter::new();
        spmm_counted(&a.csr, g.attributes(), Some(&c)).unwrap();
        assert_eq!(c.spmm_macs(), 16);
    }

    fn random_graph(n: usize, arcs: Vec<(u32, u32)>) -> Graph {
        let mut arcs: Vec<(u32, u32)> = arcs
            .into_iter()
            .map(|(a, b)| (a % n as u32, b % n as u32))
            .filter(|(a, b)| a != b)
            .collect();
        arcs.sort_unstable();
        arcs.dedup();
        Graph::from_arcs(
            n,
            &arcs,
            Matrix::zeros(n, 1),
            Labels::Single(vec![0; n]),
            1,
            vec![Split::Train; n],
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn row_mean_rows_are_stochastic(n in 1usize..40, arcs in prop::collection::vec((0u32..40, 0u32..40), 0..200)) {
            let g = random_graph(n, arcs);
            let a = normalize(&g, NormScheme::RowMean);
            for r in 0..n {
                let (_, vals) = a.csr.row(r);
                if !vals.is_empty() {
                    let s: f64 = vals.iter().map(|&v| v as f64).sum();
                    prop_assert!((s - 1.0).abs() <= 1e-6);
                }
            }
            prop_assert_eq!(a.csr.values.len(), a.csr.indices.len());
        }

        #[test]
        fn spmm_matches_dense_oracle(
            n in 1usize..64,
            arcs in prop::collection::vec((0u32..64, 0u32..64), 0..400),
            cols in 1usize..6,
            seed in any::<u64>(),
        ) {
            let g = random_graph(n, arcs);
            let a = normalize(&g, NormScheme::RowMean);
            let mut s = seed;
            let h = DenseMatrix::from_vec(n, cols, (0..n * cols).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
            }).collect()).unwrap();
            let out = spmm(&a.csr, &h).unwrap();
            prop_assert!(out.cast::<f64>().max_abs_diff(&dense_oracle(&a.csr, &h)) <= 1e-6);
        }
    }

    #[test]
    fn spmm_bitwise_stable_across_worker_counts() {
        let n = 2000;
        let arcs: Vec<(u32, u32)> = (0..n as u32)
            .flat_map(|v| (1..=9).map(move |k| (v, (v * 7 + k * 13) % n as u32)))
            .collect();
        let g = random_graph(n, arcs);
        let a = normalize(&g, NormScheme::RowMean);
        let h = DenseMatrix::from_vec(n, 16, (0..n * 16).map(|i| ((i * 31 % 97) as f32).sin()).collect()).unwrap();
        let base = spmm(&a.csr, &h).unwrap();
        for threads in [1, 3, 4] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let out = pool.install(|| spmm(&a.csr, &h).unwrap());
            assert_eq!(base.as_slice(), out.as_slice());
        }
    }
}
