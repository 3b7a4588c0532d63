//! The mixed-model system
//!
//! ```text
//! A = | X_θ'X_θ    X_θ'EΣ  |      c = | X_θ'y  |
//!     | ΣE'X_θ    Σ² + I   |          | ΣE'y   |
//! ```
//!
//! solved two ways. The moment path eliminates the diagonal block first:
//! with Dg = Σ² + I and B = ΣE'X_θ the Schur complement is
//! S = X_θ'X_θ − B'Dg⁻¹B = Xd'(I − EE')Xd + M_EX(θ)'(I + Σ²)⁻¹M_EX(θ),
//! so log|A| = Σ log Dg + log|S| and nothing n-sized is touched. The naive
//! path builds A from the n-row matrices and factors it as a whole.

use nalgebra::{DMatrix, DVector};

use crate::eigen::EigenBasis;
use crate::error::{Error, Result};
use crate::instrument;
use crate::model::{base_design, build_sigma, transform_columns, DesignData, InterceptForm, ModelKind, ThetaPoint};
use crate::moments::MomentCache;
use crate::weights::SpatialWeights;

/// Relative pivot size below which the system counts as singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Cholesky factor (lower) with the singularity rule used throughout.
pub fn cholesky_checked(a: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if !(s > PIVOT_TOL * scale) {
            return Err(Error::SingularSystem { pivot: s, scale });
        }
        let d = s.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut t = a[(i, j)];
            for k in 0..j {
                t -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = t / d;
        }
    }
    Ok(l)
}

fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let y = l.solve_lower_triangular(b).expect("nonzero diagonal");
    l.tr_solve_lower_triangular(&y).expect("nonzero diagonal")
}

fn chol_logdet(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Factorisation of A in the diagonal-first ordering.
#[derive(Debug, Clone)]
pub struct StructuredFactor {
    pub dg: DVector<f64>,
    /// ΣE'X_θ, L × K
    pub b: DMatrix<f64>,
    /// Cholesky factor of the Schur complement S
    pub s_chol: DMatrix<f64>,
}

impl StructuredFactor {
    pub fn logdet(&self) -> f64 {
        self.dg.iter().map(|v| v.ln()).sum::<f64>() + chol_logdet(&self.s_chol)
    }

    pub fn solve(&self, c1: &DVector<f64>, c2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let c2_dg = c2.component_div(&self.dg);
        let beta = chol_solve(&self.s_chol, &(c1 - self.b.tr_mul(&c2_dg)));
        let v = (c2 - &self.b * &beta).component_div(&self.dg);
        (beta, v)
    }

    /// A⁻¹ in the original [β; v] ordering.
    pub fn inverse(&self) -> DMatrix<f64> {
        let k = self.s_chol.nrows();
        let l = self.dg.len();
        let s_inv = {
            let id = DMatrix::<f64>::identity(k, k);
            let y = self.s_chol.solve_lower_triangular(&id).expect("nonzero diagonal");
            self.s_chol.tr_solve_lower_triangular(&y).expect("nonzero diagonal")
        };
        // F = Dg⁻¹B, L × K
        let mut f = self.b.clone();
        for r in 0..l {
            f.row_mut(r).scale_mut(1.0 / self.dg[r]);
        }
        let upper_right = -(&s_inv * f.transpose());
        let mut lower = &f * &s_inv * f.transpose();
        for r in 0..l {
            lower[(r, r)] += 1.0 / self.dg[r];
        }
        let mut out = DMatrix::zeros(k + l, k + l);
        out.view_mut((0, 0), (k, k)).copy_from(&s_inv);
        out.view_mut((0, k), (k, l)).copy_from(&upper_right);
        out.view_mut((k, 0), (l, k)).copy_from(&upper_right.transpose());
        out.view_mut((k, k), (l, l)).copy_from(&lower);
        symmetrize(&mut out);
        out
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..i {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// Everything one likelihood evaluation produces.
#[derive(Debug, Clone)]
pub struct MixedSolution {
    pub beta: DVector<f64>,
    pub v: DVector<f64>,
    pub sigma: DVector<f64>,
    /// Penalised residual sum of squares d(θ).
    pub d: f64,
    /// ‖y − X_θβ − EΣv‖²
    pub rss: f64,
    pub logdet: f64,
    pub loglik: f64,
    pub factor: StructuredFactor,
}

/// Restricted log-likelihood from log|A| and d(θ).
pub fn restricted_loglik_value(logdet: f64, d: f64, n: usize, k: usize) -> f64 {
    let dof = (n - k) as f64;
    -0.5 * logdet - 0.5 * dof * (1.0 + (2.0 * std::f64::consts::PI * d / dof).ln())
}

/// Solve the system at θ from the moment cache alone.
pub fn solve_moments(cache: &MomentCache, theta: &ThetaPoint) -> Result<MixedSolution> {
    let kind = cache.kind;
    let rho = if kind == ModelKind::Lsem { 0.0 } else { theta.rho_or_zero() };
    let asm = cache.assemble(rho)?;
    let sigma = build_sigma(kind, theta, &cache.lambdas)?;
    let l = cache.l();
    let dg = sigma.map(|s| s * s + 1.0);

    let mut b = asm.m_ex.clone();
    let mut scaled = asm.m_ex.clone();
    for r in 0..l {
        b.row_mut(r).scale_mut(sigma[r]);
        scaled.row_mut(r).scale_mut(1.0 / dg[r]);
    }
    let mut s = &cache.m_xx_perp + asm.m_ex.tr_mul(&scaled);
    symmetrize(&mut s);
    // The Dg pivots are at least 1; S is judged against its own diagonal.
    let scale = s.diagonal().amax();
    let s_chol = cholesky_checked(&s, scale)?;
    let factor = StructuredFactor { dg, b, s_chol };

    let c1 = asm.m_xy;
    let c2 = sigma.component_mul(&cache.m_ey);
    let (beta, v) = factor.solve(&c1, &c2);
    let bc = beta.dot(&c1) + v.dot(&c2);
    let d = (cache.m_yy - bc).max(cache.m_yy * 1e-15).max(f64::MIN_POSITIVE);
    let vv = v.dot(&v);
    let rss = (d - vv).max(0.0);
    let logdet = factor.logdet();
    let loglik = restricted_loglik_value(logdet, d, cache.n, cache.k_fixed());
    Ok(MixedSolution {
        beta,
        v,
        sigma,
        d,
        rss,
        logdet,
        loglik,
        factor,
    })
}

/// Restricted log-likelihood at θ from the moment cache.
pub fn restricted_loglik(cache: &MomentCache, theta: &ThetaPoint) -> Result<f64> {
    solve_moments(cache, theta).map(|s| s.loglik)
}

/// d(θ) written with moments only:
/// m_yy − 2b'c + β'M_XX(θ)β + 2β'M_EX(θ)'Σv + v'Σ²v + v'v.
pub fn penalized_rss_moments(cache: &MomentCache, theta: &ThetaPoint, beta: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let rho = if cache.kind == ModelKind::Lsem { 0.0 } else { theta.rho_or_zero() };
    let asm = cache.assemble(rho)?;
    let sigma = build_sigma(cache.kind, theta, &cache.lambdas)?;
    let sv = sigma.component_mul(v);
    let c = beta.dot(&asm.m_xy) + sv.dot(&cache.m_ey);
    Ok(cache.m_yy - 2.0 * c
        + beta.dot(&(&asm.m_xx * beta))
        + 2.0 * beta.dot(&asm.m_ex.tr_mul(&sv))
        + sv.dot(&sv)
        + v.dot(v))
}

/// Dense factor of the full (K + L) system, used by the naive path.
#[derive(Debug, Clone)]
pub struct DenseFactor {
    pub chol: DMatrix<f64>,
}

impl DenseFactor {
    pub fn logdet(&self) -> f64 {
        chol_logdet(&self.chol)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.chol.nrows();
        let id = DMatrix::<f64>::identity(n, n);
        let y = self.chol.solve_lower_triangular(&id).expect("nonzero diagonal");
        let mut inv = self.chol.tr_solve_lower_triangular(&y).expect("nonzero diagonal");
        symmetrize(&mut inv);
        inv
    }
}

/// The system matrix and right-hand side built from n-row inputs.
pub fn system_matrix(xt: &DMatrix<f64>, e: &DMatrix<f64>, sigma: &DVector<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    instrument::n_sized_alloc();
    let k = xt.ncols();
    let l = e.ncols();
    let mut es = e.clone();
    for c in 0..l {
        es.column_mut(c).scale_mut(sigma[c]);
    }
    let mut a = DMatrix::zeros(k + l, k + l);
    a.view_mut((0, 0), (k, k)).copy_from(&xt.tr_mul(xt));
    let xes = xt.tr_mul(&es);
    a.view_mut((0, k), (k, l)).copy_from(&xes);
    a.view_mut((k, 0), (l, k)).copy_from(&xes.transpose());
    let mut lower = es.tr_mul(&es);
    for i in 0..l {
        lower[(i, i)] += 1.0;
    }
    a.view_mut((k, k), (l, l)).copy_from(&lower);
    symmetrize(&mut a);
    let mut c = DVector::zeros(k + l);
    c.rows_mut(0, k).copy_from(&xt.tr_mul(y));
    c.rows_mut(k, l).copy_from(&es.tr_mul(y));
    (a, c)
}

/// Solve the normal equations exactly as written, by a Cholesky
/// factorisation of the whole system.
pub fn gls_solve(
    xt: &DMatrix<f64>,
    e: &DMatrix<f64>,
    sigma: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DenseFactor)> {
    let (a, c) = system_matrix(xt, e, sigma, y);
    let scale = a.diagonal().amax();
    let chol = cholesky_checked(&a, scale)?;
    let b = chol_solve(&chol, &c);
    let k = xt.ncols();
    let beta = b.rows(0, k).into_owned();
    let v = b.rows(k, b.len() - k).into_owned();
    Ok((beta, v, DenseFactor { chol }))
}

/// ‖y − X_θβ − EΣv‖² + v'v from the n-row inputs.
pub fn penalized_rss(
    y: &DVector<f64>,
    xt: &DMatrix<f64>,
    e: &DMatrix<f64>,
    sigma: &DVector<f64>,
    beta: &DVector<f64>,
    v: &DVector<f64>,
) -> f64 {
    let r = residual_vector(y, xt, e, sigma, beta, v);
    r.dot(&r) + v.dot(v)
}

pub fn residual_vector(
    y: &DVector<f64>,
    xt: &DMatrix<f64>,
    e: &DMatrix<f64>,
    sigma: &DVector<f64>,
    beta: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    instrument::n_sized_alloc();
    y - xt * beta - e * sigma.component_mul(v)
}

/// Result of the naive evaluation.
#[derive(Debug, Clone)]
pub struct NaiveSolution {
    pub beta: DVector<f64>,
    pub v: DVector<f64>,
    pub d: f64,
    pub rss: f64,
    pub loglik: f64,
    pub factor: DenseFactor,
}

/// Restricted log-likelihood evaluated with n-sized matrices throughout.
pub fn solve_naive(
    kind: ModelKind,
    data: &DesignData,
    basis: &EigenBasis,
    w: &SpatialWeights,
    theta: &ThetaPoint,
    intercept: InterceptForm,
) -> Result<NaiveSolution> {
    let (xd, mask) = base_design(kind, data, w, intercept);
    let rho = if kind == ModelKind::Lsem { 0.0 } else { theta.rho_or_zero() };
    let xt = transform_columns(&xd, &mask, basis, rho)?;
    let sigma = build_sigma(kind, theta, &basis.lambdas)?;
    let (beta, v, factor) = gls_solve(&xt, &basis.vectors, &sigma, &data.y)?;
    let r = residual_vector(&data.y, &xt, &basis.vectors, &sigma, &beta, &v);
    let rss = r.dot(&r);
    let d = rss + v.dot(&v);
    let loglik = restricted_loglik_value(factor.logdet(), d, data.n(), xt.ncols());
    Ok(NaiveSolution {
        beta,
        v,
        d,
        rss,
        loglik,
        factor,
    })
}

/// τ² = RSS/(n − K).
pub fn estimate_tau2(rss: f64, n: usize, k: usize) -> f64 {
    rss.max(0.0) / (n - k) as f64
}

/// Smallest τ² used for standard errors; a perfect fit is raised to it.
pub const TAU2_FLOOR: f64 = 1e-12;

/// τ²·A⁻¹
pub fn coef_varcov(inverse: &DMatrix<f64>, tau2: f64) -> DMatrix<f64> {
    inverse * tau2
}
