use ndarray::{Array2, ArrayView2, Axis};

use crate::fcg::Fcg;

/// Symmetrically normalized adjacency with self-connections,
/// `D^-1/2 (A_sym + I) D^-1/2`, stored by rows as `(column, value)` lists.
///
/// The call direction is discarded: an edge in either direction connects
/// the two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    /// Builds from node-index edge pairs. Self pairs and repeats are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (a, b) in edges {
            assert!(a < n && b < n, "edge ({a}, {b}) out of range for {n} nodes");
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let degree: Vec<f64> = neighbors.iter().map(|l| l.len() as f64).collect();
        let rows = neighbors
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.iter()
                    .map(|&j| (j, 1.0 / (degree[i] * degree[j]).sqrt()))
                    .collect()
            })
            .collect();
        NormalizedAdjacency { n, rows }
    }

    /// Rows follow `g.nodes` order, matching [`crate::featurize::embed_graph`].
    pub fn from_fcg(g: &Fcg) -> Self {
        let index = g.node_index();
        let edges: Vec<(usize, usize)> = g
            .edges
            .iter()
            .map(|(a, b)| (index[a.as_str()], index[b.as_str()]))
            .collect();
        Self::from_edges(g.nodes.len(), edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|&&(c, _)| c == j)
            .map_or(0.0, |&(_, v)| v)
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// `self * m`. Since the matrix is symmetric this is also `self^T * m`.
    pub fn apply(&self, m: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(m.nrows(), self.n, "adjacency/feature row mismatch");
        let mut out = Array2::zeros((self.n, m.ncols()));
        for (i, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for &(j, v) in &self.rows[i] {
                out_row.scaled_add(v, &m.row(j));
            }
        }
        out
    }

    /// Reorders nodes: new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; self.n];
        for (k, &old) in perm.iter().enumerate() {
            inverse[old] = k;
        }
        let rows = perm
            .iter()
            .map(|&old| {
                let mut row: Vec<(usize, f64)> = self.rows[old]
                    .iter()
                    .map(|&(j, v)| (inverse[j], v))
                    .collect();
                row.sort_unstable_by_key(|&(j, _)| j);
                row
            })
            .collect();
        NormalizedAdjacency { n: self.n, rows }
    }
}
