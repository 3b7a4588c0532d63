//! Leading eigenpairs of the scaled proximity matrix.

mod cache;
mod lanczos;

pub use cache::{load_basis, save_basis, top_l_eigenpairs_cached};
pub use lanczos::{lanczos_top, LanczosOptions};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, CsrMatrix};
use crate::weights::SpatialWeights;

/// Largest size handled by the dense route under `EigenMethod::Auto`.
pub const DENSE_LIMIT: usize = 500;
/// Largest size accepted by anything that needs the whole spectrum.
pub const FULL_SPECTRUM_LIMIT: usize = 5000;
/// Eigenvalues closer than this are treated as one cluster.
pub const CLUSTER_TOL: f64 = 1e-10;

/// L eigenpairs with eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub vectors: DMatrix<f64>,
    pub lambdas: DVector<f64>,
}

impl EigenBasis {
    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn l(&self) -> usize {
        self.lambdas.len()
    }

    /// The leading `l` pairs.
    pub fn truncate(&self, l: usize) -> Result<EigenBasis> {
        if l == 0 || l > self.l() {
            return Err(Error::BadRank { l, n: self.l() });
        }
        Ok(EigenBasis {
            vectors: self.vectors.columns(0, l).into_owned(),
            lambdas: self.lambdas.rows(0, l).into_owned(),
        })
    }

    /// The `l` leading pairs under `ranking`, kept in descending order.
    pub fn select(&self, l: usize, ranking: EigenRanking) -> Result<EigenBasis> {
        if ranking == EigenRanking::Algebraic {
            return self.truncate(l);
        }
        if l == 0 || l > self.l() {
            return Err(Error::BadRank { l, n: self.l() });
        }
        let (lambdas, vectors) = pick(&self.lambdas, &self.vectors, l, ranking);
        Ok(EigenBasis { vectors, lambdas })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EigenMethod {
    #[default]
    Auto,
    Dense,
    Lanczos,
}

/// Which end of the spectrum counts as leading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EigenRanking {
    /// Largest algebraic eigenvalues.
    #[default]
    Algebraic,
    /// Largest absolute eigenvalues, then ordered descending.
    Magnitude,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EigenOptions {
    pub method: EigenMethod,
    pub ranking: EigenRanking,
}

/// Rule used by [`select_l_by_threshold`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ThresholdRule {
    /// Count eigenvalues strictly above t.
    #[default]
    Positive,
    /// Count eigenvalues with |λ| strictly above t.
    Absolute,
}

/// Largest and smallest eigenvalue of a symmetric sparse matrix.
pub fn extreme_eigenvalues(w: &CsrMatrix) -> Result<(f64, f64)> {
    let n = w.n();
    if n <= DENSE_LIMIT {
        let (vals, _) = sym_eigen_desc(&w.to_dense());
        return Ok((vals[0], vals[n - 1]));
    }
    let opts = LanczosOptions {
        tol: 1e-11,
        subspace: 40,
        ..Default::default()
    };
    let (top, _) = lanczos_top(n, 1, |x, y| w.matvec_into(x, y), &opts)?;
    let (bottom, _) = lanczos_top(
        n,
        1,
        |x, y| {
            w.matvec_into(x, y);
            y.iter_mut().for_each(|v| *v = -*v);
        },
        &opts,
    )?;
    Ok((top[0], -bottom[0]))
}

/// The `l` leading eigenpairs of the scaled matrix.
pub fn top_l_eigenpairs(w: &SpatialWeights, l: usize, opts: &EigenOptions) -> Result<EigenBasis> {
    if !w.scaled {
        return Err(Error::NotScaled);
    }
    let n = w.n;
    if l == 0 || l > n {
        return Err(Error::BadRank { l, n });
    }
    let dense = match opts.method {
        EigenMethod::Dense => true,
        EigenMethod::Lanczos => false,
        EigenMethod::Auto => n <= DENSE_LIMIT,
    };
    let (vals, vecs) = if dense {
        let (vals, vecs) = sym_eigen_desc(&w.matrix.to_dense());
        pick(&vals, &vecs, l, opts.ranking)
    } else {
        let lanczos = LanczosOptions::default();
        let apply = |x: &[f64], y: &mut [f64]| w.matrix.matvec_into(x, y);
        match opts.ranking {
            EigenRanking::Algebraic => lanczos_top(n, l, apply, &lanczos)?,
            EigenRanking::Magnitude => {
                let (tv, te) = lanczos_top(n, l, apply, &lanczos)?;
                let neg = |x: &[f64], y: &mut [f64]| {
                    w.matrix.matvec_into(x, y);
                    y.iter_mut().for_each(|v| *v = -*v);
                };
                let (bv, be) = lanczos_top(n, l, neg, &lanczos)?;
                let vals = DVector::from_iterator(2 * l, tv.iter().copied().chain(bv.iter().map(|v| -v)));
                let mut vecs = DMatrix::zeros(n, 2 * l);
                vecs.columns_mut(0, l).copy_from(&te);
                vecs.columns_mut(l, l).copy_from(&be);
                pick(&vals, &vecs, l, EigenRanking::Magnitude)
            }
        }
    };
    Ok(canonicalize(vals, vecs))
}

/// Every eigenpair of the scaled matrix from a dense solve.
pub fn full_eigenbasis(w: &SpatialWeights) -> Result<EigenBasis> {
    if !w.scaled {
        return Err(Error::NotScaled);
    }
    if w.n > FULL_SPECTRUM_LIMIT {
        return Err(Error::SizeGuard {
            n: w.n,
            limit: FULL_SPECTRUM_LIMIT,
        });
    }
    let (vals, vecs) = sym_eigen_desc(&w.matrix.to_dense());
    Ok(canonicalize(vals, vecs))
}

/// Number of eigenvalues passing the threshold.
pub fn select_l_by_threshold(lambdas_all: &[f64], t: f64, rule: ThresholdRule) -> usize {
    lambdas_all
        .iter()
        .filter(|&&v| match rule {
            ThresholdRule::Positive => v > t,
            ThresholdRule::Absolute => v.abs() > t,
        })
        .count()
}

fn pick(
    vals: &DVector<f64>,
    vecs: &DMatrix<f64>,
    l: usize,
    ranking: EigenRanking,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    if ranking == EigenRanking::Magnitude {
        idx.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()).then(a.cmp(&b)));
    } else {
        idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    }
    idx.truncate(l);
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let out_vals = DVector::from_iterator(l, idx.iter().map(|&i| vals[i]));
    let mut out_vecs = DMatrix::zeros(vecs.nrows(), l);
    for (c, &i) in idx.iter().enumerate() {
        out_vecs.set_column(c, &vecs.column(i));
    }
    (out_vals, out_vecs)
}

/// Fix a reproducible basis: clusters of numerically equal eigenvalues are
/// rotated by a pivoted QR of their transposed block, then every vector's
/// largest-magnitude entry is made positive (lowest index on ties).
pub fn canonicalize(vals: DVector<f64>, mut vecs: DMatrix<f64>) -> EigenBasis {
    let l = vals.len();
    let mut s = 0;
    while s < l {
        let mut e = s + 1;
        while e < l && (vals[e - 1] - vals[e]).abs() <= CLUSTER_TOL {
            e += 1;
        }
        if e - s > 1 {
            let block = vecs.columns(s, e - s).into_owned();
            let rotated = &block * pivoted_rotation(&block);
            vecs.columns_mut(s, e - s).copy_from(&rotated);
        }
        s = e;
    }
    for c in 0..l {
        let col = vecs.column(c);
        let top = col.amax();
        // near-equal magnitudes count as a tie, resolved to the lowest index
        let best = (0..col.len())
            .find(|&r| col[r].abs() >= top * (1.0 - 1e-9))
            .unwrap_or(0);
        if col[best] < 0.0 {
            vecs.column_mut(c).neg_mut();
        }
    }
    EigenBasis {
        vectors: vecs,
        lambdas: vals,
    }
}

// Column-pivoted Gram–Schmidt on the transposed block. Pivot scores are
// invariant under rotations of the block, and near-ties go to the lowest
// row, so any orthonormal basis of the same cluster gives the same result.
fn pivoted_rotation(block: &DMatrix<f64>) -> DMatrix<f64> {
    let c = block.ncols();
    let mut proj = DMatrix::<f64>::identity(c, c);
    let mut q = DMatrix::<f64>::zeros(c, c);
    for step in 0..c {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..block.nrows() {
            let b = block.row(r).transpose();
            let score = (&proj * &b).dot(&b);
            match best {
                Some((_, s)) if score <= s * (1.0 + 1e-8) + 1e-14 => {}
                _ => best = Some((r, score)),
            }
        }
        let (r, _) = best.expect("block has rows");
        let v = &proj * block.row(r).transpose();
        let v = &v / v.norm();
        proj -= &v * v.transpose();
        q.set_column(step, &v);
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> SpatialWeights {
        SpatialWeights::from_edges(3, &[(0, 1), (1, 2)])
            .unwrap()
            .scale_by_max_eigenvalue()
            .unwrap()
    }

    #[test]
    fn pair_basis() {
        let w = SpatialWeights::from_edges(2, &[(0, 1)])
            .unwrap()
            .scale_by_max_eigenvalue()
            .unwrap();
        let b = top_l_eigenpairs(&w, 2, &EigenOptions::default()).unwrap();
        assert!((b.lambdas[0] - 1.0).abs() < 1e-12 && (b.lambdas[1] + 1.0).abs() < 1e-12);
        assert!((b.vectors.tr_mul(&b.vectors) - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn path_top_two() {
        let b = top_l_eigenpairs(&path3(), 2, &EigenOptions::default()).unwrap();
        assert!((b.lambdas[0] - 1.0).abs() < 1e-12);
        assert!(b.lambdas[1].abs() < 1e-12);
    }

    #[test]
    fn bad_rank_and_unscaled() {
        let w = path3();
        assert!(matches!(
            top_l_eigenpairs(&w, 0, &EigenOptions::default()),
            Err(Error::BadRank { .. })
        ));
        assert!(matches!(
            top_l_eigenpairs(&w, 4, &EigenOptions::default()),
            Err(Error::BadRank { .. })
        ));
        let raw = SpatialWeights::from_edges(3, &[(0, 1)]).unwrap();
        assert!(matches!(
            top_l_eigenpairs(&raw, 1, &EigenOptions::default()),
            Err(Error::NotScaled)
        ));
    }

    #[test]
    fn threshold_counts() {
        let l = [1.0, 0.0, -1.0];
        assert_eq!(select_l_by_threshold(&l, 0.25, ThresholdRule::Positive), 1);
        assert_eq!(select_l_by_threshold(&l, 0.25, ThresholdRule::Absolute), 2);
        assert_eq!(select_l_by_threshold(&l, 0.0, ThresholdRule::Positive), 1);
        assert_eq!(select_l_by_threshold(&l, 1.0, ThresholdRule::Positive), 0);
    }

    #[test]
    fn magnitude_ranking_takes_both_ends() {
        let b = top_l_eigenpairs(
            &path3(),
            2,
            &EigenOptions {
                ranking: EigenRanking::Magnitude,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((b.lambdas[0] - 1.0).abs() < 1e-12 && (b.lambdas[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cluster_is_canonical() {
        // the 4-cycle has a doubly repeated eigenvalue 0
        let w = SpatialWeights::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)])
            .unwrap()
            .scale_by_max_eigenvalue()
            .unwrap();
        let a = top_l_eigenpairs(&w, 4, &EigenOptions::default()).unwrap();
        // rotate the cluster by an arbitrary angle and canonicalise again
        let mut v = a.vectors.clone();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let (x, y) = (v.column(1).into_owned(), v.column(2).into_owned());
        v.set_column(1, &(&x * c + &y * s));
        v.set_column(2, &(&y * c - &x * s));
        let b = canonicalize(a.lambdas.clone(), v);
        assert!((a.vectors - b.vectors).amax() < 1e-10);
    }
}
