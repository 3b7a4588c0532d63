//! Full-rank maximum likelihood for SEM and SLM, and residual Moran's I.
//!
//! Everything here is dense and O(n³) through one full eigendecomposition
//! of W. After that each profile evaluation is O(K²) because the
//! residual sums of squares are quadratic in the dependence parameter.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::eigen::{full_eigenbasis, EigenBasis, FULL_SPECTRUM_LIMIT};
use crate::error::{Error, Result};
use crate::model::{DesignData, ModelKind};
use crate::reml::brent_min;
use crate::weights::SpatialWeights;

#[derive(Debug, Clone, Serialize)]
pub struct FullRankFit {
    pub kind: ModelKind,
    #[serde(skip)]
    pub beta: DVector<f64>,
    /// ρ for SLM, φ for SEM.
    pub theta: f64,
    pub sigma2: f64,
    pub loglik: f64,
    #[serde(skip)]
    pub se_beta: DVector<f64>,
    /// Z(y − Xβ) for SEM, Zy − Xβ for SLM.
    #[serde(skip)]
    pub residuals: DVector<f64>,
}

/// Quadratic pieces of the profile in the dependence parameter t:
/// the GLS/OLS normal equations and sums of squares as polynomials in t.
struct Profile {
    kind: ModelKind,
    n: usize,
    lambdas: DVector<f64>,
    x: DMatrix<f64>,
    wx: DMatrix<f64>,
    y: DVector<f64>,
    wy: DVector<f64>,
}

impl Profile {
    fn new(kind: ModelKind, data: &DesignData, w: &SpatialWeights, lambdas: DVector<f64>) -> Self {
        Profile {
            kind,
            n: data.n(),
            lambdas,
            wx: w.matrix.mul_dense(&data.x),
            wy: w.matrix.matvec(&data.y),
            x: data.x.clone(),
            y: data.y.clone(),
        }
    }

    fn log_det(&self, t: f64) -> f64 {
        self.lambdas.iter().map(|l| (1.0 - t * l).ln()).sum()
    }

    /// (β, SSE, residual vector) at t.
    fn solve(&self, t: f64) -> Result<(DVector<f64>, f64, DVector<f64>)> {
        let (xt, yt) = match self.kind {
            // Z = I − φW filters both sides
            ModelKind::Sem => (&self.x - &self.wx * t, &self.y - &self.wy * t),
            // only the response is filtered
            _ => (self.x.clone(), &self.y - &self.wy * t),
        };
        let xtx = xt.tr_mul(&xt);
        let chol = xtx.cholesky().ok_or(Error::SingularSystem {
            pivot: 0.0,
            scale: 1.0,
        })?;
        let beta = chol.solve(&xt.tr_mul(&yt));
        let r = yt - xt * &beta;
        let sse = r.dot(&r);
        Ok((beta, sse, r))
    }

    fn loglik(&self, t: f64) -> f64 {
        match self.solve(t) {
            Ok((_, sse, _)) => {
                let n = self.n as f64;
                -0.5 * n * (2.0 * std::f64::consts::PI * sse / n).ln() - 0.5 * n + self.log_det(t)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

/// Concentrated log-likelihood at a fixed dependence value.
pub fn profile_loglik(kind: ModelKind, data: &DesignData, w: &SpatialWeights, full: &EigenBasis, theta: f64) -> f64 {
    Profile::new(kind, data, w, full.lambdas.clone()).loglik(theta)
}

pub fn fit_fullrank(kind: ModelKind, data: &DesignData, w: &SpatialWeights) -> Result<FullRankFit> {
    let full = full_eigenbasis(w)?;
    fit_fullrank_with(kind, data, w, &full)
}

/// Fit with a precomputed full eigenbasis of W.
pub fn fit_fullrank_with(kind: ModelKind, data: &DesignData, w: &SpatialWeights, full: &EigenBasis) -> Result<FullRankFit> {
    if !matches!(kind, ModelKind::Sem | ModelKind::Slm) {
        return Err(Error::Unsupported(format!("full-rank oracle for {kind}")));
    }
    if w.n > FULL_SPECTRUM_LIMIT {
        return Err(Error::SizeGuard {
            n: w.n,
            limit: FULL_SPECTRUM_LIMIT,
        });
    }
    if !w.scaled {
        return Err(Error::NotScaled);
    }
    if full.l() != w.n {
        return Err(Error::Dimension(format!("need all {} eigenvalues, got {}", w.n, full.l())));
    }
    let prof = Profile::new(kind, data, w, full.lambdas.clone());
    let (lo, hi) = w.dependence_bounds();
    let opt = brent_min(|t| -prof.loglik(t), lo, hi, 1e-8, 500);
    if !opt.converged || !opt.f.is_finite() {
        return Err(Error::ConvergenceFailure {
            iterations: opt.iterations,
        });
    }
    let t = opt.x;
    let (beta, sse, residuals) = prof.solve(t)?;
    let n = data.n() as f64;
    let sigma2 = sse / n;
    let se_beta = match kind {
        ModelKind::Sem => {
            let xt = &prof.x - &prof.wx * t;
            let inv = (xt.tr_mul(&xt) * (1.0 / sigma2))
                .try_inverse()
                .ok_or(Error::SingularSystem { pivot: 0.0, scale: 1.0 })?;
            inv.diagonal().map(|v| v.sqrt())
        }
        _ => slm_se(&prof, full, &beta, t, sigma2)?,
    };
    Ok(FullRankFit {
        kind,
        beta,
        theta: t,
        sigma2,
        loglik: -opt.f,
        se_beta,
        residuals,
    })
}

/// Coefficient standard errors of SLM from the full (β, ρ, σ²) information
/// matrix, using W·A = E·diag(λ/(1 − ρλ))·E' with A = (I − ρW)^{-1}.
fn slm_se(p: &Profile, full: &EigenBasis, beta: &DVector<f64>, rho: f64, s2: f64) -> Result<DVector<f64>> {
    let k = beta.len();
    let g = p.lambdas.map(|l| l / (1.0 - rho * l));
    let xb = &p.x * beta;
    let wa_xb = &full.vectors * (full.vectors.tr_mul(&xb).component_mul(&g));
    let tr1 = g.sum();
    let tr2 = g.dot(&g);
    let mut info = DMatrix::<f64>::zeros(k + 2, k + 2);
    info.view_mut((0, 0), (k, k)).copy_from(&(p.x.tr_mul(&p.x) / s2));
    let xwaxb = p.x.tr_mul(&wa_xb) / s2;
    for i in 0..k {
        info[(i, k)] = xwaxb[i];
        info[(k, i)] = xwaxb[i];
    }
    info[(k, k)] = 2.0 * tr2 + wa_xb.dot(&wa_xb) / s2;
    info[(k, k + 1)] = tr1 / s2;
    info[(k + 1, k)] = tr1 / s2;
    info[(k + 1, k + 1)] = p.n as f64 / (2.0 * s2 * s2);
    let inv = info.try_inverse().ok_or(Error::SingularSystem { pivot: 0.0, scale: 1.0 })?;
    Ok(DVector::from_iterator(k, (0..k).map(|i| inv[(i, i)].max(0.0).sqrt())))
}

/// z-score of Moran's I for residuals under the normality assumption.
pub fn moran_z(residuals: &DVector<f64>, w0: &SpatialWeights) -> Result<f64> {
    let n = residuals.len();
    if n != w0.n {
        return Err(Error::Dimension(format!("{n} residuals for {} units", w0.n)));
    }
    let mean = residuals.mean();
    let r = residuals.map(|v| v - mean);
    let rr = r.dot(&r);
    if !(rr > 1e-300) || rr <= 1e-24 * residuals.dot(residuals) {
        return Err(Error::ConstantResiduals);
    }
    let m = &w0.matrix;
    let s0 = m.sum();
    let rwr = r.dot(&m.matvec(&r));
    let nf = n as f64;
    let mc = nf / s0 * rwr / rr;
    let mut s1 = 0.0;
    for (i, j, v) in m.iter() {
        let s = v + m.get(j, i);
        s1 += s * s;
    }
    s1 *= 0.5;
    let rows = m.row_sums();
    let mut cols = DVector::<f64>::zeros(n);
    for (_, j, v) in m.iter() {
        cols[j] += v;
    }
    let s2: f64 = (0..n).map(|i| (rows[i] + cols[i]).powi(2)).sum();
    let e = -1.0 / (nf - 1.0);
    let var = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0) - e * e;
    Ok((mc - e) / var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{lag_instance, normal_vector, random_instance};
    use crate::linalg::solve_shifted;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn slm_recovers_rho_and_is_a_local_max() {
        let inst = lag_instance(200, 10, 0.5, 0.0, 11);
        let full = full_eigenbasis(&inst.w).unwrap();
        let f = fit_fullrank_with(ModelKind::Slm, &inst.data, &inst.w, &full).unwrap();
        assert!((f.theta - 0.5).abs() < 0.15, "{}", f.theta);
        assert!((f.beta[1] - 2.0).abs() < 0.2);
        let h = 1e-3;
        let l = |t| profile_loglik(ModelKind::Slm, &inst.data, &inst.w, &full, t);
        assert!(l(f.theta + h) - 2.0 * l(f.theta) + l(f.theta - h) <= 0.0);
        assert!(f.se_beta.iter().all(|s| *s > 0.0 && s.is_finite()));
    }

    #[test]
    fn sem_loglik_matches_dense_definition() {
        let inst = random_instance(40, 5, 3, 6);
        let full = full_eigenbasis(&inst.w).unwrap();
        let f = fit_fullrank_with(ModelKind::Sem, &inst.data, &inst.w, &full).unwrap();
        // dense: Z = I − φW, GLS β, log|Z| by determinant
        let n = 40;
        let z = DMatrix::<f64>::identity(n, n) - inst.w.matrix.to_dense() * f.theta;
        let x = &inst.data.x;
        let zx = &z * x;
        let zy = &z * &inst.data.y;
        let beta = (zx.tr_mul(&zx)).try_inverse().unwrap() * zx.tr_mul(&zy);
        assert!((beta - &f.beta).amax() < 1e-8);
        let r = zy - zx * &f.beta;
        let nf = n as f64;
        let ll = -0.5 * nf * (2.0 * std::f64::consts::PI * r.dot(&r) / nf).ln() - 0.5 * nf + z.determinant().ln();
        assert!((ll - f.loglik).abs() < 1e-8);
    }

    #[test]
    fn other_kinds_rejected() {
        let inst = random_instance(20, 5, 2, 1);
        assert!(matches!(fit_fullrank(ModelKind::Sdm, &inst.data, &inst.w), Err(Error::Unsupported(_))));
    }

    #[test]
    fn moran_signs() {
        // 6-cycle is bipartite: alternating signs give maximal negative autocorrelation
        let w0 = SpatialWeights::from_edges(6, &(0..6).map(|i| (i, (i + 1) % 6)).collect::<Vec<_>>()).unwrap();
        let alt = DVector::from_fn(6, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        assert!(moran_z(&alt, &w0).unwrap() < -1.5);
        assert!(matches!(moran_z(&DVector::from_element(6, 2.0), &w0), Err(Error::ConstantResiduals)));
        // smooth residuals on a random geometry give large positive z
        let inst = random_instance(200, 5, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = normal_vector(200, &mut rng);
        let smooth = solve_shifted(&inst.w.matrix, 0.9, &e, 1e-12).unwrap();
        assert!(moran_z(&smooth, &inst.w0).unwrap() > 5.0);
    }
}
