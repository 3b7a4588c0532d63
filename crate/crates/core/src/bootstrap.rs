//! Parametric bootstrap for θ, β and the effects.
//!
//! Each replicate simulates y* = X_θ̂β̂ + EΣ_θ̂v + u with v ~ N(0, τ̂²I_L),
//! u ~ N(0, τ̂²I_n) and refits. The fast path replaces only the response
//! moments of the cache; the naive path rebuilds the cache from scratch.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::effects::{effects_from_cache, EffectsEstimate};
use crate::eigen::EigenBasis;
use crate::error::{Error, Result};
use crate::model::{base_design, transform_columns, DesignData, ModelKind, ThetaPoint};
use crate::moments::{precompute_from_design, response_moments, MomentCache};
use crate::output::csv_string;
use crate::par::{map_indexed, Execution};
use crate::reml::{maximize, FitOptions, FittedModel, Start};
use crate::weights::SpatialWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BootPath {
    #[default]
    Fast,
    Naive,
}

#[derive(Debug, Clone)]
pub struct BootstrapOptions {
    pub m: usize,
    pub seed: u64,
    pub level: f64,
    pub execution: Execution,
    pub path: BootPath,
    /// Largest tolerated share of failed replicates.
    pub max_fail_share: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            m: 200,
            seed: 1,
            level: 0.95,
            execution: Execution::Parallel,
            path: BootPath::Fast,
            max_fail_share: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Successful replicates; every sample array has this many rows.
    pub m: usize,
    pub requested: usize,
    pub failures: usize,
    /// Replicate index of each row.
    pub index: Vec<usize>,
    pub theta_samples: Vec<ThetaPoint>,
    pub beta_samples: Vec<Vec<f64>>,
    pub de_samples: Vec<Vec<f64>>,
    pub ie_samples: Vec<Vec<f64>>,
    pub level: f64,
    pub seed: u64,
}

/// Random stream of replicate `r`; independent of execution order.
pub fn replicate_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

/// Empirical quantiles at (1 − level)/2 and (1 + level)/2, linearly
/// interpolated between order statistics at position (m − 1)p.
pub fn percentile_ci(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level {level} outside (0, 1)")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (s.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(s.len() - 1);
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    };
    let a = (1.0 - level) / 2.0;
    Ok((q(a), q(1.0 - a)))
}

struct Replicate {
    theta: ThetaPoint,
    beta: Vec<f64>,
    de: Vec<f64>,
    ie: Vec<f64>,
}

pub fn bootstrap(
    fitted: &FittedModel,
    data: &DesignData,
    basis: &EigenBasis,
    w: &SpatialWeights,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult> {
    if !fitted.kind.is_low_rank() {
        return Err(Error::Unsupported(format!("bootstrap of {}", fitted.kind)));
    }
    if opts.m == 0 {
        return Err(Error::InvalidParameter("bootstrap needs m >= 1".into()));
    }
    let theta = fitted
        .theta
        .ok_or_else(|| Error::InvalidParameter("fitted model has no θ".into()))?;
    let basis = if basis.l() == fitted.l() {
        basis.clone()
    } else {
        basis.truncate(fitted.l())?
    };
    let kind = fitted.kind;
    let (xd, mask) = base_design(kind, data, w, fitted.intercept);
    let rho = if kind == ModelKind::Lsem { 0.0 } else { fitted.rho() };
    let mean = transform_columns(&xd, &mask, &basis, rho)? * &fitted.beta;
    let cache = precompute_from_design(data, &xd, mask.clone(), &basis, w, kind, fitted.intercept)?;
    let bounds = w.dependence_bounds();
    let tau = fitted.tau2.sqrt();
    let fit_opts = FitOptions {
        intercept: fitted.intercept,
        // replicates already run in parallel
        execution: Execution::Sequential,
        start: Start::Warm(theta),
        ..FitOptions::default()
    };
    let (n, l) = (data.n(), basis.l());

    let run = |r: usize| -> Result<Replicate> {
        let mut rng = replicate_rng(opts.seed, r);
        let v = DVector::from_fn(l, |_, _| tau * rng.sample::<f64, _>(StandardNormal));
        let u = DVector::from_fn(n, |_, _| tau * rng.sample::<f64, _>(StandardNormal));
        let y = &mean + &basis.vectors * fitted.sigma_diag.component_mul(&v) + u;
        let c: MomentCache = match opts.path {
            BootPath::Fast => cache.with_response(response_moments(&y, &xd, &basis)),
            BootPath::Naive => {
                let d = data.with_response(y);
                let (xd2, mask2) = base_design(kind, &d, w, fitted.intercept);
                precompute_from_design(&d, &xd2, mask2, &basis, w, kind, fitted.intercept)?
            }
        };
        let opt = maximize(&c, bounds, &fit_opts)?;
        let (de, ie) = effects_from_cache(&c, &opt.solution.beta, opt.theta.rho_or_zero())?;
        Ok(Replicate {
            theta: opt.theta,
            beta: opt.solution.beta.as_slice().to_vec(),
            de,
            ie,
        })
    };
    let reps = map_indexed(opts.execution, opts.m, run);

    let mut out = BootstrapResult {
        m: 0,
        requested: opts.m,
        failures: 0,
        index: Vec::new(),
        theta_samples: Vec::new(),
        beta_samples: Vec::new(),
        de_samples: Vec::new(),
        ie_samples: Vec::new(),
        level: opts.level,
        seed: opts.seed,
    };
    for (r, rep) in reps.into_iter().enumerate() {
        match rep {
            Ok(rep) => {
                out.index.push(r);
                out.theta_samples.push(rep.theta);
                out.beta_samples.push(rep.beta);
                out.de_samples.push(rep.de);
                out.ie_samples.push(rep.ie);
            }
            Err(_) => out.failures += 1,
        }
    }
    out.m = out.index.len();
    if out.failures as f64 > opts.max_fail_share * opts.m as f64 {
        return Err(Error::OptimFailure(format!(
            "{} of {} bootstrap replicates failed",
            out.failures, opts.m
        )));
    }
    Ok(out)
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

impl BootstrapResult {
    fn intervals(&self, rows: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
        let width = rows.first().map_or(0, |r| r.len());
        (0..width).map(|j| percentile_ci(&column(rows, j), self.level)).collect()
    }

    pub fn ci_de(&self) -> Result<Vec<(f64, f64)>> {
        self.intervals(&self.de_samples)
    }

    pub fn ci_ie(&self) -> Result<Vec<(f64, f64)>> {
        self.intervals(&self.ie_samples)
    }

    pub fn ci_beta(&self) -> Result<Vec<(f64, f64)>> {
        self.intervals(&self.beta_samples)
    }

    /// Intervals for ρ, φ and σ/τ, in that order, for the terms present.
    pub fn ci_theta(&self) -> Result<Vec<(&'static str, (f64, f64))>> {
        let pick = |f: fn(&ThetaPoint) -> Option<f64>| -> Option<Vec<f64>> {
            self.theta_samples.iter().map(f).collect()
        };
        let mut out = Vec::new();
        for (name, s) in [
            ("rho", pick(|t| t.rho)),
            ("phi", pick(|t| t.phi)),
            ("ratio", pick(|t| Some(t.ratio))),
        ] {
            if let Some(s) = s.filter(|s| !s.is_empty()) {
                out.push((name, percentile_ci(&s, self.level)?));
            }
        }
        Ok(out)
    }

    /// Copy effect intervals into an estimate.
    pub fn attach(&self, est: &mut EffectsEstimate) -> Result<()> {
        est.ci_de = Some(self.ci_de()?);
        est.ci_ie = Some(self.ci_ie()?);
        est.level = Some(self.level);
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub replicates: usize,
    pub failures: usize,
}

/// One row per coefficient, θ component and effect.
pub fn summary_rows(fitted: &FittedModel, est: &EffectsEstimate, res: &BootstrapResult) -> Result<Vec<SummaryRow>> {
    let row = |name: String, estimate: f64, (lower, upper): (f64, f64)| SummaryRow {
        name,
        estimate,
        lower,
        upper,
        replicates: res.m,
        failures: res.failures,
    };
    let mut rows = Vec::new();
    for (i, ci) in res.ci_beta()?.into_iter().enumerate() {
        rows.push(row(fitted.names[i].clone(), fitted.beta[i], ci));
    }
    let theta = fitted.theta.expect("bootstrap needs θ");
    for (name, ci) in res.ci_theta()? {
        let point = match name {
            "rho" => theta.rho.unwrap_or(f64::NAN),
            "phi" => theta.phi.unwrap_or(f64::NAN),
            _ => theta.ratio,
        };
        rows.push(row(name.to_string(), point, ci));
    }
    for (k, ci) in res.ci_de()?.into_iter().enumerate() {
        rows.push(row(format!("DE.{}", est.names[k]), est.de[k], ci));
    }
    for (k, ci) in res.ci_ie()?.into_iter().enumerate() {
        rows.push(row(format!("IE.{}", est.names[k]), est.ie[k], ci));
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    csv_string(rows)
}
