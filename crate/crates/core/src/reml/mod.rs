//! Restricted-likelihood estimation of the low-rank models.

pub mod optimize;
pub mod system;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::eigen::EigenBasis;
use crate::error::{Error, Result};
use crate::model::{
    base_design, coefficient_names, transform_columns, DesignData, InterceptForm, ModelKind, ThetaPoint,
};
use crate::moments::{precompute_with, MomentCache};
use crate::par::{map_indexed, Execution};
use crate::weights::SpatialWeights;

pub use optimize::{brent_min, nelder_mead, BrentResult, NmOptions, NmResult};
pub use system::{
    coef_varcov, estimate_tau2, gls_solve, penalized_rss, penalized_rss_moments, restricted_loglik,
    restricted_loglik_value, solve_moments, solve_naive, MixedSolution, TAU2_FLOOR,
};

/// Clip applied to log(σ/τ).
pub const LOG_RATIO_CLIP: f64 = 12.0;

/// Maps between the unconstrained optimiser space and θ. Coordinates are
/// [logit ρ, logit φ, log ratio], keeping only those the kind uses.
#[derive(Debug, Clone, Copy)]
pub struct Reparam {
    pub kind: ModelKind,
    pub lo: f64,
    pub hi: f64,
}

impl Reparam {
    pub fn new(kind: ModelKind, bounds: (f64, f64)) -> Self {
        Reparam {
            kind,
            lo: bounds.0,
            hi: bounds.1,
        }
    }

    pub fn dim(&self) -> usize {
        self.kind.theta_dim()
    }

    fn dep(&self, u: f64) -> f64 {
        self.lo + (self.hi - self.lo) / (1.0 + (-u).exp())
    }

    fn undep(&self, d: f64) -> f64 {
        let d = d.clamp(self.lo + 1e-12, self.hi - 1e-12);
        ((d - self.lo) / (self.hi - d)).ln()
    }

    pub fn to_theta(&self, z: &[f64]) -> ThetaPoint {
        let mut i = 0;
        let rho = self.kind.has_rho().then(|| {
            i += 1;
            self.dep(z[i - 1])
        });
        let phi = self.kind.has_phi().then(|| {
            i += 1;
            self.dep(z[i - 1])
        });
        ThetaPoint {
            rho,
            phi,
            ratio: z[i].clamp(-LOG_RATIO_CLIP, LOG_RATIO_CLIP).exp(),
        }
    }

    pub fn from_theta(&self, t: &ThetaPoint) -> Vec<f64> {
        let mut z = Vec::with_capacity(3);
        if let Some(r) = t.rho {
            z.push(self.undep(r));
        }
        if let Some(p) = t.phi {
            z.push(self.undep(p));
        }
        z.push(t.ratio.ln().clamp(-LOG_RATIO_CLIP, LOG_RATIO_CLIP));
        z
    }

    /// Whether θ sits on the edge of the feasible box.
    pub fn on_boundary(&self, t: &ThetaPoint) -> bool {
        let eps = 1e-5 * (self.hi - self.lo);
        let dep_edge = [t.rho, t.phi]
            .into_iter()
            .flatten()
            .any(|d| d - self.lo < eps || self.hi - d < eps);
        dep_edge || t.ratio.ln().abs() >= LOG_RATIO_CLIP - 1e-6
    }
}

/// How the optimiser is started.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Start {
    /// Low, middle and high dependence starts, best kept.
    Multi,
    /// A single start, falling back to `Multi` if it fails.
    Warm(ThetaPoint),
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub intercept: InterceptForm,
    pub execution: Execution,
    pub start: Start,
    pub spread_tol: f64,
    pub evals_per_dim: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            intercept: InterceptForm::Outside,
            execution: Execution::Parallel,
            start: Start::Multi,
            spread_tol: 1e-8,
            evals_per_dim: 500,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub evaluations: usize,
    pub converged: bool,
    pub on_boundary: bool,
    pub starts: usize,
    pub warnings: Vec<String>,
}

/// Optimiser output on a moment cache.
#[derive(Debug, Clone)]
pub struct Optimum {
    pub theta: ThetaPoint,
    pub solution: MixedSolution,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub intercept: InterceptForm,
    pub names: Vec<String>,
    pub n: usize,
    /// Covariates in the data including the intercept.
    pub k: usize,
    /// Fixed coefficients; for LSDM the lag-covariate terms q follow β.
    pub beta: DVector<f64>,
    pub v: DVector<f64>,
    pub gamma: DVector<f64>,
    pub sigma_diag: DVector<f64>,
    pub theta: Option<ThetaPoint>,
    pub tau2: f64,
    pub sigma2: f64,
    pub loglik_r: f64,
    pub se_beta: DVector<f64>,
    pub varcov: DMatrix<f64>,
    pub diagnostics: Diagnostics,
}

impl FittedModel {
    pub fn l(&self) -> usize {
        self.v.len()
    }

    /// Lag-covariate coefficients of LSDM (empty otherwise).
    pub fn q(&self) -> DVector<f64> {
        if self.beta.len() > self.k {
            self.beta.rows(self.k, self.beta.len() - self.k).into_owned()
        } else {
            DVector::zeros(0)
        }
    }

    pub fn rho(&self) -> f64 {
        self.theta.map(|t| t.rho_or_zero()).unwrap_or(0.0)
    }

    pub fn report(&self) -> FitReport {
        FitReport {
            kind: self.kind,
            n: self.n,
            rank: self.l(),
            coefficients: (0..self.beta.len())
                .map(|i| Coefficient {
                    name: self.names[i].clone(),
                    estimate: self.beta[i],
                    se: self.se_beta[i],
                    z: self.beta[i] / self.se_beta[i],
                })
                .collect(),
            theta: self.theta,
            tau2: self.tau2,
            sigma2: self.sigma2,
            loglik_r: self.loglik_r,
            diagnostics: self.diagnostics.clone(),
            moran_z: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
}

/// Serialisable summary of a fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub kind: ModelKind,
    pub n: usize,
    pub rank: usize,
    pub coefficients: Vec<Coefficient>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaPoint>,
    pub tau2: f64,
    pub sigma2: f64,
    pub loglik_r: f64,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moran_z: Option<f64>,
}

fn objective(cache: &MomentCache, rp: &Reparam, z: &[f64]) -> f64 {
    match system::solve_moments(cache, &rp.to_theta(z)) {
        Ok(s) if s.loglik.is_finite() => -s.loglik,
        _ => f64::INFINITY,
    }
}

fn run_from(cache: &MomentCache, rp: &Reparam, z0: Vec<f64>, opts: &FitOptions) -> NmResult {
    let dim = rp.dim();
    let mut step = vec![0.6; dim];
    step[dim - 1] = 1.0;
    let nm = NmOptions {
        spread_tol: opts.spread_tol,
        max_evals: opts.evals_per_dim * dim,
        step: step.clone(),
    };
    let mut best = nelder_mead(|z| objective(cache, rp, z), &z0, &nm);
    // restart around the best point with a smaller simplex until it stalls
    let mut scale = 0.25;
    for _ in 0..4 {
        let nm = NmOptions {
            step: step.iter().map(|s| s * scale).collect(),
            ..nm.clone()
        };
        let again = nelder_mead(|z| objective(cache, rp, z), &best.x, &nm);
        let gain = best.f - again.f;
        let evals = best.evals + again.evals;
        if again.f < best.f {
            best = NmResult { evals, ..again };
        } else {
            best.evals = evals;
            best.converged &= again.converged;
        }
        if !(gain > 1e-10) {
            break;
        }
        scale *= 0.25;
    }
    best
}

/// Dependence values used as starting points.
pub fn start_points(kind: ModelKind, bounds: (f64, f64)) -> Vec<ThetaPoint> {
    let mid = 0.5 * (bounds.0 + bounds.1);
    [0.5 * mid, 0.5, 0.9]
        .into_iter()
        .map(|d| ThetaPoint::for_kind(kind, d, 1.0))
        .collect()
}

/// Maximise the restricted log-likelihood over θ on a prepared cache.
pub fn maximize(cache: &MomentCache, bounds: (f64, f64), opts: &FitOptions) -> Result<Optimum> {
    let kind = cache.kind;
    let rp = Reparam::new(kind, bounds);
    let mut runs: Vec<NmResult> = Vec::new();
    let mut starts = 0;

    if let Start::Warm(t) = opts.start {
        starts += 1;
        let r = run_from(cache, &rp, rp.from_theta(&t), opts);
        if r.f.is_finite() && r.converged {
            runs.push(r);
        }
    }
    if runs.is_empty() {
        let pts = start_points(kind, bounds);
        starts += pts.len();
        runs = map_indexed(opts.execution, pts.len(), |i| run_from(cache, &rp, rp.from_theta(&pts[i]), opts));
        // the nested LM point: no dependence and a vanishing random effect
        let nested = ThetaPoint::for_kind(kind, 0.0, (-LOG_RATIO_CLIP).exp());
        let zn = rp.from_theta(&nested);
        let fnested = objective(cache, &rp, &zn);
        let fbest = runs.iter().map(|r| r.f).fold(f64::INFINITY, f64::min);
        if fnested < fbest {
            starts += 1;
            runs.push(run_from(cache, &rp, zn, opts));
        }
    }
    let evaluations = runs.iter().map(|r| r.evals).sum();
    let best = runs
        .into_iter()
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .filter(|r| r.f.is_finite())
        .ok_or_else(|| Error::OptimFailure("no start reached a finite likelihood".into()))?;
    let theta = rp.to_theta(&best.x);
    let solution = system::solve_moments(cache, &theta)?;
    Ok(Optimum {
        theta,
        diagnostics: Diagnostics {
            evaluations,
            converged: best.converged,
            on_boundary: rp.on_boundary(&theta),
            starts,
            warnings: Vec::new(),
        },
        solution,
    })
}

/// Central finite-difference gradient of the restricted log-likelihood in
/// the optimiser's coordinates.
pub fn fd_gradient(cache: &MomentCache, bounds: (f64, f64), theta: &ThetaPoint, h: f64) -> Result<Vec<f64>> {
    let rp = Reparam::new(cache.kind, bounds);
    let z = rp.from_theta(theta);
    let mut g = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[i] += h;
        zm[i] -= h;
        let fp = system::restricted_loglik(cache, &rp.to_theta(&zp))?;
        let fm = system::restricted_loglik(cache, &rp.to_theta(&zm))?;
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

/// Build the fitted model from an optimum.
pub fn finish(cache: &MomentCache, names: Vec<String>, opt: Optimum) -> FittedModel {
    let Optimum {
        theta,
        solution,
        mut diagnostics,
    } = opt;
    let kd = cache.k_fixed();
    let mut tau2 = estimate_tau2(solution.rss, cache.n, kd);
    if tau2 < TAU2_FLOOR {
        tau2 = TAU2_FLOOR;
        diagnostics.warnings.push("perfect fit: tau2 floored at 1e-12".into());
    }
    if diagnostics.on_boundary {
        diagnostics.warnings.push("optimum on the boundary of the parameter box".into());
    }
    if !diagnostics.converged {
        diagnostics.warnings.push("optimiser stopped at the evaluation limit".into());
    }
    let varcov = coef_varcov(&solution.factor.inverse(), tau2);
    let se_beta = DVector::from_iterator(kd, (0..kd).map(|i| varcov[(i, i)].max(0.0).sqrt()));
    FittedModel {
        kind: cache.kind,
        intercept: cache.intercept,
        names,
        n: cache.n,
        k: cache.k,
        gamma: solution.sigma.component_mul(&solution.v),
        beta: solution.beta,
        v: solution.v,
        sigma_diag: solution.sigma,
        theta: Some(theta),
        tau2,
        sigma2: tau2 * theta.ratio * theta.ratio,
        loglik_r: solution.loglik,
        se_beta,
        varcov,
        diagnostics,
    }
}

/// Fit a model. LM is ordinary least squares; the low-rank kinds maximise
/// the restricted likelihood.
pub fn fit(
    kind: ModelKind,
    data: &DesignData,
    basis: &EigenBasis,
    w: &SpatialWeights,
    opts: &FitOptions,
) -> Result<FittedModel> {
    if kind == ModelKind::Lm {
        return fit_ols(data);
    }
    if !kind.is_low_rank() {
        return Err(Error::Unsupported(format!("{kind} in the low-rank fitter; use the oracle")));
    }
    if !w.scaled {
        return Err(Error::NotScaled);
    }
    let cache = precompute_with(data, basis, w, kind, opts.intercept)?;
    let opt = maximize(&cache, w.dependence_bounds(), opts)?;
    Ok(finish(&cache, coefficient_names(kind, data), opt))
}

/// Closed-form least squares with classical standard errors.
pub fn fit_ols(data: &DesignData) -> Result<FittedModel> {
    let (n, k) = (data.n(), data.k());
    let xtx = data.x.tr_mul(&data.x);
    let scale = xtx.diagonal().amax();
    let l = system::cholesky_checked(&xtx, scale)?;
    let chol = nalgebra::Cholesky::new(xtx.clone()).ok_or(Error::SingularSystem { pivot: 0.0, scale })?;
    let beta = chol.solve(&data.x.tr_mul(&data.y));
    let r = &data.y - &data.x * &beta;
    let rss = r.dot(&r);
    let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut diagnostics = Diagnostics {
        converged: true,
        ..Default::default()
    };
    let mut tau2 = estimate_tau2(rss, n, k);
    if tau2 < TAU2_FLOOR {
        tau2 = TAU2_FLOOR;
        diagnostics.warnings.push("perfect fit: tau2 floored at 1e-12".into());
    }
    let varcov = chol.inverse() * tau2;
    let se_beta = DVector::from_iterator(k, (0..k).map(|i| varcov[(i, i)].sqrt()));
    Ok(FittedModel {
        kind: ModelKind::Lm,
        intercept: InterceptForm::Outside,
        names: data.names.clone(),
        n,
        k,
        beta,
        v: DVector::zeros(0),
        gamma: DVector::zeros(0),
        sigma_diag: DVector::zeros(0),
        theta: None,
        tau2,
        sigma2: 0.0,
        loglik_r: restricted_loglik_value(logdet, rss.max(f64::MIN_POSITIVE), n, k),
        se_beta,
        varcov,
        diagnostics,
    })
}

/// y − X_θβ − EΣv, the residual left after the fixed and random parts.
pub fn residuals(fitted: &FittedModel, data: &DesignData, basis: &EigenBasis, w: &SpatialWeights) -> Result<DVector<f64>> {
    if fitted.kind == ModelKind::Lm {
        return Ok(&data.y - &data.x * &fitted.beta);
    }
    let (xd, mask) = base_design(fitted.kind, data, w, fitted.intercept);
    let xt = transform_columns(&xd, &mask, basis, fitted.rho())?;
    let e = if basis.l() == fitted.l() {
        basis.clone()
    } else {
        basis.truncate(fitted.l())?
    };
    Ok(system::residual_vector(
        &data.y,
        &xt,
        &e.vectors,
        &fitted.sigma_diag,
        &fitted.beta,
        &fitted.v,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_instance, Instance};

    fn lslm_data(seed: u64, rho: f64) -> Instance {
        crate::fixtures::lag_instance(120, 40, rho, 0.3, seed)
    }

    #[test]
    fn reparam_roundtrip() {
        let rp = Reparam::new(ModelKind::Lsac, (-0.7, 0.999999));
        let t = ThetaPoint {
            rho: Some(0.42),
            phi: Some(-0.3),
            ratio: 2.5,
        };
        let back = rp.to_theta(&rp.from_theta(&t));
        assert!((back.rho.unwrap() - 0.42).abs() < 1e-12);
        assert!((back.phi.unwrap() + 0.3).abs() < 1e-12);
        assert!((back.ratio - 2.5).abs() < 1e-12);
    }

    #[test]
    fn fit_is_stationary_and_better_than_starts() {
        let inst = lslm_data(4, 0.5);
        let opts = FitOptions::default();
        let cache = precompute_with(&inst.data, &inst.basis, &inst.w, ModelKind::Lslm, opts.intercept).unwrap();
        let bounds = inst.w.dependence_bounds();
        let opt = maximize(&cache, bounds, &opts).unwrap();
        for s in start_points(ModelKind::Lslm, bounds) {
            assert!(opt.solution.loglik >= restricted_loglik(&cache, &s).unwrap());
        }
        if !opt.diagnostics.on_boundary {
            let g = fd_gradient(&cache, bounds, &opt.theta, 1e-5).unwrap();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < 1e-3, "{g:?}");
        }
    }

    #[test]
    fn varcov_is_symmetric_psd() {
        let inst = random_instance(60, 15, 3, 8);
        let fit = fit(ModelKind::Lsem, &inst.data, &inst.basis, &inst.w, &FitOptions::default()).unwrap();
        let v = &fit.varcov;
        assert!((v - v.transpose()).amax() < 1e-12);
        let eig = nalgebra::SymmetricEigen::new(v.clone());
        assert!(eig.eigenvalues.min() > -1e-8);
        for l in 0..fit.l() {
            assert_eq!(fit.gamma[l], fit.sigma_diag[l] * fit.v[l]);
        }
    }

    #[test]
    fn ols_matches_normal_equations() {
        let inst = random_instance(50, 5, 3, 1);
        let f = fit_ols(&inst.data).unwrap();
        let x = &inst.data.x;
        let direct = (x.transpose() * x).try_inverse().unwrap() * x.transpose() * &inst.data.y;
        assert!((f.beta.clone() - direct).amax() < 1e-10);
        assert!(f.theta.is_none());
    }
}
