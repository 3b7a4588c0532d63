//! Thick-restart Lanczos with full reorthogonalisation.
//!
//! The projected matrix is assembled from the Gram–Schmidt coefficients of
//! each new Krylov vector, so the restart coupling terms come for free.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;

/// Largest algebraic eigenpairs of a symmetric operator.
pub struct LanczosOptions {
    pub tol: f64,
    pub max_restarts: usize,
    /// Krylov subspace size; 0 picks a default from k.
    pub subspace: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            tol: 1e-10,
            max_restarts: 2000,
            subspace: 0,
        }
    }
}

/// Returns the k largest eigenvalues (descending) and their vectors.
pub fn lanczos_top<F>(
    n: usize,
    k: usize,
    apply: F,
    opts: &LanczosOptions,
) -> Result<(DVector<f64>, DMatrix<f64>)>
where
    F: Fn(&[f64], &mut [f64]),
{
    assert!(k >= 1 && k <= n);
    let m = if opts.subspace > 0 {
        opts.subspace
    } else {
        (2 * k + 20).max(k + 32)
    }
    .min(n)
    .max(k);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a2c);
    let mut basis = DMatrix::<f64>::zeros(n, m + 1);
    let mut t = DMatrix::<f64>::zeros(m, m);
    let mut w = vec![0.0; n];

    let start: DVector<f64> = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(0.5..1.5)));
    basis.set_column(0, &(&start / start.norm()));

    let mut j0 = 0usize;
    let mut iterations = 0usize;
    for restart in 0..=opts.max_restarts {
        // extend the basis from column j0 to m
        let mut last_beta = 0.0;
        let mut built = m;
        let mut j = j0;
        while j < m {
            iterations += 1;
            apply(basis.column(j).as_slice(), &mut w);
            let mut wv = DVector::from_column_slice(&w);
            let vj = basis.columns(0, j + 1);
            let mut h = vj.tr_mul(&wv);
            wv -= &vj * &h;
            let h2 = vj.tr_mul(&wv);
            wv -= &vj * &h2;
            h += h2;
            for i in 0..=j {
                t[(i, j)] = h[i];
                t[(j, i)] = h[i];
            }
            let beta = wv.norm();
            let scale = h.amax().max(1e-300);
            if beta <= 1e-12 * scale {
                // invariant subspace; continue from a fresh orthogonal direction
                match fresh_direction(&basis, j + 1, &mut rng) {
                    Some(v) => {
                        if j + 1 < m {
                            basis.set_column(j + 1, &v);
                        } else {
                            basis.set_column(m, &v);
                        }
                        last_beta = 0.0;
                    }
                    None => {
                        built = j + 1;
                        last_beta = 0.0;
                        break;
                    }
                }
            } else {
                basis.set_column(j + 1, &(wv / beta));
                last_beta = beta;
            }
            j += 1;
        }

        let tm = t.view((0, 0), (built, built)).into_owned();
        let (theta, y) = sym_eigen_desc(&tm);
        let kk = k.min(built);
        let residual = |i: usize| (last_beta * y[(built - 1, i)]).abs();
        let converged = (0..kk).all(|i| residual(i) <= opts.tol);
        if converged || built < m {
            if kk < k {
                return Err(Error::ConvergenceFailure { iterations });
            }
            let vecs = basis.columns(0, built) * y.columns(0, k);
            let vals = DVector::from_iterator(k, (0..k).map(|i| theta[i]));
            return Ok((vals, vecs));
        }
        if restart == opts.max_restarts {
            break;
        }

        // keep p Ritz vectors plus the residual direction
        let p = (k + (m - k) / 2).min(m - 1).max(k);
        let ritz = basis.columns(0, m) * y.columns(0, p);
        let next = basis.column(m).into_owned();
        basis.fill(0.0);
        basis.columns_mut(0, p).copy_from(&ritz);
        basis.set_column(p, &next);
        t.fill(0.0);
        for i in 0..p {
            t[(i, i)] = theta[i];
            let s = last_beta * y[(m - 1, i)];
            t[(i, p)] = s;
            t[(p, i)] = s;
        }
        j0 = p;
    }
    Err(Error::ConvergenceFailure { iterations })
}

fn fresh_direction(basis: &DMatrix<f64>, cols: usize, rng: &mut ChaCha8Rng) -> Option<DVector<f64>> {
    let n = basis.nrows();
    if cols >= n {
        return None;
    }
    for _ in 0..8 {
        let mut v = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
        let b = basis.columns(0, cols);
        for _ in 0..2 {
            let h = b.tr_mul(&v);
            v -= &b * h;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            return Some(v / norm);
        }
    }
    None
}
