//! Spatial k-nearest-neighbour graph over the patch grid and its Laplacian.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::numcore::SparseSym;

/// Neighbour count used by the default patch graph.
pub const DEFAULT_K: usize = 8;
/// Gaussian kernel bandwidth (in patch units) used by the default patch graph.
pub const DEFAULT_SIGMA: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("a grid with {0} patch(es) has no edges")]
    Empty(usize),
    #[error("invalid graph parameter: {0}")]
    Param(String),
}

/// Patch layout: `h_p` rows by `w_p` columns, enumerated row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchGrid {
    pub h_p: usize,
    pub w_p: usize,
}

impl PatchGrid {
    pub fn new(h_p: usize, w_p: usize) -> Self {
        PatchGrid { h_p, w_p }
    }

    pub fn n(&self) -> usize {
        self.h_p * self.w_p
    }

    /// `(y, x)` coordinate of patch `i`.
    pub fn coord(&self, i: usize) -> (usize, usize) {
        (i / self.w_p, i % self.w_p)
    }

    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).map(|i| self.coord(i))
    }

    fn dist2(&self, i: usize, j: usize) -> f64 {
        let (yi, xi) = self.coord(i);
        let (yj, xj) = self.coord(j);
        let dy = yi as f64 - yj as f64;
        let dx = xi as f64 - xj as f64;
        dy * dy + dx * dx
    }
}

/// Undirected weighted graph; each unordered pair `(i, j)` with `i < j` appears once.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl SpatialGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b, _)| a == i || b == i).count()
    }

    /// Edge list as `i,j,w` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,w\n");
        for &(i, j, w) in &self.edges {
            s.push_str(&format!("{i},{j},{w}\n"));
        }
        s
    }
}

/// Connects every patch to its `k` nearest patches by grid distance and
/// symmetrises by union. Ties at equal distance go to the smaller index and
/// `k` is clamped to `n − 1`.
pub fn build_knn_graph(grid: PatchGrid, k: usize, sigma: f64) -> Result<SpatialGraph, GraphError> {
    let n = grid.n();
    if k == 0 {
        return Err(GraphError::Param("k must be at least 1".into()));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(GraphError::Param(format!("sigma must be positive, got {sigma}")));
    }
    if n < 2 {
        return Err(GraphError::Empty(n));
    }
    let k = k.min(n - 1);
    let two_sigma2 = 2.0 * sigma * sigma;

    let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        candidates.clear();
        candidates.extend((0..n).filter(|&j| j != i).map(|j| (grid.dist2(i, j), j)));
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d2, j) in &candidates[..k] {
            let key = (i.min(j), i.max(j));
            pairs.entry(key).or_insert_with(|| (-d2 / two_sigma2).exp());
        }
    }
    let edges = pairs.into_iter().map(|((i, j), w)| (i, j, w)).collect();
    Ok(SpatialGraph { n, edges })
}

/// `L = D − W` for the weighted adjacency `W` and its degree diagonal `D`.
pub fn laplacian(g: &SpatialGraph) -> SparseSym {
    let mut diag = vec![0.0; g.n];
    let mut upper = Vec::with_capacity(g.edges.len());
    for &(i, j, w) in &g.edges {
        diag[i] += w;
        diag[j] += w;
        upper.push((i, j, -w));
    }
    SparseSym::new(g.n, diag, upper).expect("graph edges are valid by construction")
}

/// Laplacian of the default patch graph for `grid`.
pub fn default_laplacian(grid: PatchGrid) -> Result<SparseSym, GraphError> {
    Ok(laplacian(&build_knn_graph(grid, DEFAULT_K, DEFAULT_SIGMA)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{spmul, Mat};

    #[test]
    fn two_patch_edge_weight() {
        let g = build_knn_graph(PatchGrid::new(1, 2), 1, 8.0).unwrap();
        assert_eq!(g.edges().len(), 1);
        let (i, j, w) = g.edges()[0];
        assert_eq!((i, j), (0, 1));
        assert!((w - (-1.0f64 / 128.0).exp()).abs() < 1e-15);
        assert!((w - 0.992218).abs() < 1e-6);
    }

    #[test]
    fn center_of_three_by_three_has_eight_edges() {
        let g = build_knn_graph(PatchGrid::new(3, 3), 8, 8.0).unwrap();
        assert_eq!(g.degree(4), 8);
    }

    #[test]
    fn interior_of_large_grid_is_eight_neighbourhood() {
        let grid = PatchGrid::new(8, 8);
        let g = build_knn_graph(grid, 8, 8.0).unwrap();
        let center = 3 * 8 + 3;
        let mut nbrs: Vec<usize> = g
            .edges()
            .iter()
            .filter_map(|&(a, b, _)| match (a == center, b == center) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect();
        nbrs.sort();
        assert_eq!(nbrs, vec![18, 19, 20, 26, 28, 34, 35, 36]);
    }

    #[test]
    fn weights_bounded_by_adjacent_kernel() {
        let sigma = 8.0;
        let g = build_knn_graph(PatchGrid::new(5, 4), 8, sigma).unwrap();
        let max_w = g.edges().iter().map(|e| e.2).fold(0.0, f64::max);
        assert_eq!(max_w, (-1.0 / (2.0 * sigma * sigma)).exp());
        assert!(g.edges().iter().all(|e| e.2 < 1.0 && e.2 > 0.0 && e.0 < e.1));
    }

    #[test]
    fn single_patch_is_empty_graph_error() {
        assert_eq!(
            build_knn_graph(PatchGrid::new(1, 1), 8, 8.0),
            Err(GraphError::Empty(1))
        );
        assert!(build_knn_graph(PatchGrid::new(2, 2), 0, 8.0).is_err());
        assert!(build_knn_graph(PatchGrid::new(2, 2), 1, 0.0).is_err());
    }

    #[test]
    fn k_is_clamped_for_tiny_grids() {
        let g = build_knn_graph(PatchGrid::new(1, 3), 8, 8.0).unwrap();
        assert_eq!(g.edges().len(), 3);
    }

    #[test]
    fn unit_edge_laplacian_is_path_laplacian() {
        let g = SpatialGraph {
            n: 2,
            edges: vec![(0, 1, 1.0)],
        };
        let l = laplacian(&g);
        let dense = l.to_dense();
        assert_eq!(dense.data(), &[1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn empty_edge_set_gives_zero_matrix() {
        let g = SpatialGraph {
            n: 3,
            edges: vec![],
        };
        assert_eq!(laplacian(&g).to_dense(), Mat::zeros(3, 3));
    }

    #[test]
    fn rows_sum_to_zero() {
        let l = default_laplacian(PatchGrid::new(6, 5)).unwrap();
        let ones = Mat::filled(30, 1, 1.0);
        assert!(spmul(&l, &ones).unwrap().max_abs() < 1e-12);
    }
}
