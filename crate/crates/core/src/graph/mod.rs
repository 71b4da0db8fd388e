//! Road graph preprocessing: adjacency, normalized Laplacian, its
//! eigendecomposition and the spectral node basis.

mod eigen;
mod matrix;
mod spatial;

use std::str::FromStr;

use log::warn;

pub use eigen::{symmetric_eigh, Eigen, MAX_SWEEPS, OFF_DIAGONAL_TOL};
pub use matrix::Matrix;
pub use spatial::{spatial_embedding, SpatialEmbeddingParams};

use crate::data::Edge;
use crate::error::{Error, Result};

/// Eigenvalues below this are treated as the zero (trivial) eigenspace.
pub const TRIVIAL_EIGENVALUE: f64 = 1e-8;
const GAUSSIAN_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdjacencyMode {
    #[default]
    Binary,
    GaussianKernel,
}

impl FromStr for AdjacencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(AdjacencyMode::Binary),
            "gaussian" | "gaussian_kernel" => Ok(AdjacencyMode::GaussianKernel),
            other => Err(Error::Param(format!("unknown adjacency mode `{other}` (binary, gaussian_kernel)"))),
        }
    }
}

/// Symmetric weighted adjacency with a zero diagonal. Duplicate edges keep
/// the larger weight and the directed matrix is symmetrized by elementwise max.
pub fn build_adjacency(edges: &[Edge], n: usize, mode: AdjacencyMode) -> Result<Matrix> {
    for e in edges {
        for id in [e.from, e.to] {
            if id >= n {
                return Err(Error::Index { what: "node", index: id, len: n });
            }
        }
    }
    let sigma = if edges.is_empty() {
        0.0
    } else {
        let mean = edges.iter().map(|e| e.cost).sum::<f64>() / edges.len() as f64;
        (edges.iter().map(|e| (e.cost - mean).powi(2)).sum::<f64>() / edges.len() as f64).sqrt()
    };
    let mut a = Matrix::zeros(n, n);
    for e in edges {
        if e.from == e.to {
            continue;
        }
        let w = match mode {
            AdjacencyMode::Binary => 1.0,
            // Equal costs give sigma = 0; every edge then gets full weight.
            AdjacencyMode::GaussianKernel if sigma == 0.0 => 1.0,
            AdjacencyMode::GaussianKernel => {
                let w = (-(e.cost * e.cost) / (sigma * sigma)).exp();
                if w < GAUSSIAN_THRESHOLD {
                    0.0
                } else {
                    w
                }
            }
        };
        let slot = &mut a[(e.from, e.to)];
        *slot = slot.max(w);
    }
    for i in 0..n {
        for j in i + 1..n {
            let w = a[(i, j)].max(a[(j, i)]);
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    Ok(a)
}

/// `I − D^{−1/2} A D^{−1/2}`; isolated nodes keep an identity row.
pub fn normalized_laplacian(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::Contract(format!("adjacency must be square, got {}x{}", a.rows(), a.cols())));
    }
    if let Some(w) = a.data().iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::Contract(format!("adjacency weight {w} is negative or not a number")));
    }
    let n = a.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] -= inv_sqrt[i] * a[(i, j)] * inv_sqrt[j];
        }
    }
    Ok(l)
}

/// Number of connected components of the undirected graph with nonzero weights.
pub fn connected_components(a: &Matrix) -> usize {
    let n = a.rows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut count = n;
    for i in 0..n {
        for j in i + 1..n {
            if a[(i, j)] != 0.0 || a[(j, i)] != 0.0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                    count -= 1;
                }
            }
        }
    }
    count
}

#[derive(Debug, Clone)]
pub struct GraphSpec {
    pub nodes: usize,
    pub edges: Vec<Edge>,
    pub adjacency: Matrix,
    pub laplacian: Matrix,
    pub eigen: Eigen,
}

impl GraphSpec {
    pub fn new(nodes: usize, edges: Vec<Edge>, mode: AdjacencyMode) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::Size("graph needs at least one node".into()));
        }
        let adjacency = build_adjacency(&edges, nodes, mode)?;
        let laplacian = normalized_laplacian(&adjacency)?;
        let eigen = symmetric_eigh(&laplacian)?;
        Ok(GraphSpec { nodes, edges, adjacency, laplacian, eigen })
    }

    pub fn components(&self) -> usize {
        connected_components(&self.adjacency)
    }

    pub fn spectral_basis(&self, k: usize) -> SpectralBasis {
        spectral_basis(&self.eigen, k)
    }
}

/// `N × k` node features taken from the Laplacian eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub matrix: Matrix,
    /// Eigenvectors dropped as trivial.
    pub trivial: usize,
    /// Columns holding real eigenvectors; the rest are zero padding.
    pub real_columns: usize,
    pub warning: Option<String>,
}

/// Skips every eigenvector with eigenvalue below `1e-8` and keeps the next
/// `k` in ascending order, zero-padding when the graph is too small.
pub fn spectral_basis(eigen: &Eigen, k: usize) -> SpectralBasis {
    let n = eigen.vectors.rows();
    let trivial = eigen.values.iter().take_while(|v| **v < TRIVIAL_EIGENVALUE).count();
    let real_columns = (n - trivial).min(k);
    let mut matrix = Matrix::zeros(n, k);
    for j in 0..real_columns {
        for i in 0..n {
            matrix[(i, j)] = eigen.vectors[(i, trivial + j)];
        }
    }
    let warning = (real_columns < k).then(|| {
        let msg = format!(
            "only {real_columns} nontrivial eigenvectors for k_r = {k}; padding {} zero columns",
            k - real_columns
        );
        warn!("{msg}");
        msg
    });
    SpectralBasis { matrix, trivial, real_columns, warning }
}
