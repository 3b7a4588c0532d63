//! Spatial proximity matrices.

mod delaunay;
mod io;

pub use delaunay::delaunay_edges;
pub use io::{load_coords, load_edge_list, parse_edge_list};

use nalgebra::DVector;
use sha2::{Digest, Sha256};

use crate::eigen;
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Symmetric, zero-diagonal, nonnegative proximity matrix.
///
/// `lambda_max` and `lambda_min` always describe the matrix as stored, so
/// after scaling `lambda_max` is 1.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    pub n: usize,
    pub matrix: CsrMatrix,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub scaled: bool,
}

impl SpatialWeights {
    /// Validate a sparse matrix and compute its extreme eigenvalues.
    pub fn from_matrix(matrix: CsrMatrix) -> Result<Self> {
        let n = matrix.n();
        for (i, j, v) in matrix.iter() {
            if i == j {
                return Err(Error::SelfLoop { line: 0, unit: i });
            }
            if v < 0.0 || !v.is_finite() {
                return Err(Error::NegativeWeight { i, j, weight: v });
            }
            if matrix.get(j, i) != v {
                return Err(Error::InvalidParameter(format!(
                    "weights are not symmetric at ({i}, {j})"
                )));
            }
        }
        let (lambda_max, lambda_min) = if matrix.nnz() == 0 {
            (0.0, 0.0)
        } else {
            eigen::extreme_eigenvalues(&matrix)?
        };
        Ok(SpatialWeights {
            n,
            matrix,
            lambda_max,
            lambda_min,
            scaled: false,
        })
    }

    /// Binary adjacency from undirected edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut trip = Vec::with_capacity(2 * edges.len());
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange { index: i.max(j), n });
            }
            if i == j {
                return Err(Error::SelfLoop { line: 0, unit: i });
            }
            trip.push((i, j, 1.0));
            trip.push((j, i, 1.0));
        }
        trip.sort_by_key(|t| (t.0, t.1));
        trip.dedup_by_key(|t| (t.0, t.1));
        Self::from_matrix(CsrMatrix::from_triplets(n, &trip))
    }

    /// Divide every entry by the largest eigenvalue.
    pub fn scale_by_max_eigenvalue(&self) -> Result<Self> {
        if self.scaled {
            return Err(Error::AlreadyScaled);
        }
        if self.lambda_max <= 1e-12 {
            return Err(Error::DegenerateMatrix(self.lambda_max));
        }
        let c = 1.0 / self.lambda_max;
        Ok(SpatialWeights {
            n: self.n,
            matrix: self.matrix.scaled(c),
            lambda_max: 1.0,
            lambda_min: self.lambda_min * c,
            scaled: true,
        })
    }

    /// Feasible open interval for a dependence parameter, shrunk by 1e-6.
    pub fn dependence_bounds(&self) -> (f64, f64) {
        let lmin = if self.scaled {
            self.lambda_min
        } else {
            self.lambda_min / self.lambda_max
        };
        (lmin + 1e-6, 1.0 - 1e-6)
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        self.matrix.matvec(x)
    }

    pub fn num_edges(&self) -> usize {
        self.matrix.nnz() / 2
    }

    /// Hex digest identifying the stored matrix.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update([self.scaled as u8]);
        for (i, j, v) in self.matrix.iter() {
            h.update((i as u64).to_le_bytes());
            h.update((j as u64).to_le_bytes());
            h.update(v.to_bits().to_le_bytes());
        }
        crate::instrument::hex(&h.finalize())
    }
}

/// Binary Delaunay adjacency of planar points.
pub fn build_delaunay_adjacency(coords: &[[f64; 2]]) -> Result<SpatialWeights> {
    let edges = delaunay_edges(coords)?;
    SpatialWeights::from_edges(coords.len(), &edges)
}

/// Spectral radius by plain power iteration on the matrix. Kept separate
/// from the Lanczos code so each can check the other.
pub fn power_iteration(w: &CsrMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    let n = w.n();
    if n == 0 {
        return Ok(0.0);
    }
    // a slightly uneven start avoids orthogonality to the Perron vector
    let mut x = DVector::from_iterator(n, (0..n).map(|i| 1.0 + 1e-3 * ((i * 7919) % 101) as f64));
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let y = w.matvec(&x);
        let next = y.norm();
        if next == 0.0 {
            return Ok(0.0);
        }
        if (next - lambda).abs() <= tol * next {
            return Ok(next);
        }
        lambda = next;
        x = y / next;
    }
    Err(Error::ConvergenceFailure {
        iterations: max_iter,
    })
}
