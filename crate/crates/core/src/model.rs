//! Model kinds, parameters and the mixed-model components of each kind.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eigen::EigenBasis;
use crate::error::{Error, Result};
use crate::instrument;
use crate::weights::SpatialWeights;

/// Distance from a pole below which a dependence value is rejected.
pub const POLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "LM")]
    Lm,
    #[serde(rename = "LSEM")]
    Lsem,
    #[serde(rename = "LSLM")]
    Lslm,
    #[serde(rename = "LSDM")]
    Lsdm,
    #[serde(rename = "LSAC")]
    Lsac,
    #[serde(rename = "SEM")]
    Sem,
    #[serde(rename = "SLM")]
    Slm,
    #[serde(rename = "SDM")]
    Sdm,
    #[serde(rename = "SAC")]
    Sac,
}

impl ModelKind {
    pub const LOW_RANK: [ModelKind; 4] = [ModelKind::Lsem, ModelKind::Lslm, ModelKind::Lsdm, ModelKind::Lsac];

    pub fn is_low_rank(self) -> bool {
        Self::LOW_RANK.contains(&self)
    }

    /// Whether the lag parameter ρ enters the model.
    pub fn has_rho(self) -> bool {
        matches!(
            self,
            ModelKind::Lslm | ModelKind::Lsdm | ModelKind::Lsac | ModelKind::Slm | ModelKind::Sdm | ModelKind::Sac
        )
    }

    /// Whether the error parameter φ enters the model.
    pub fn has_phi(self) -> bool {
        matches!(self, ModelKind::Lsem | ModelKind::Lsac | ModelKind::Sem | ModelKind::Sac)
    }

    /// Number of REML parameters (dependence terms plus the variance ratio).
    pub fn theta_dim(self) -> usize {
        self.has_rho() as usize + self.has_phi() as usize + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lm => "LM",
            ModelKind::Lsem => "LSEM",
            ModelKind::Lslm => "LSLM",
            ModelKind::Lsdm => "LSDM",
            ModelKind::Lsac => "LSAC",
            ModelKind::Sem => "SEM",
            ModelKind::Slm => "SLM",
            ModelKind::Sdm => "SDM",
            ModelKind::Sac => "SAC",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = [
            ModelKind::Lm,
            ModelKind::Lsem,
            ModelKind::Lslm,
            ModelKind::Lsdm,
            ModelKind::Lsac,
            ModelKind::Sem,
            ModelKind::Slm,
            ModelKind::Sdm,
            ModelKind::Sac,
        ];
        all.into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown model kind `{s}`")))
    }
}

/// Response, covariates (first column all ones) and covariate labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignData {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

impl DesignData {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let (n, k) = x.shape();
        if y.len() != n {
            return Err(Error::Dimension(format!("y has {} rows, X has {n}", y.len())));
        }
        if names.len() != k {
            return Err(Error::Dimension(format!("{} names for {k} columns", names.len())));
        }
        if k == 0 || x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidParameter("first column of X must be the intercept".into()));
        }
        if n <= k {
            return Err(Error::Dimension(format!("need n > K, got n = {n}, K = {k}")));
        }
        for c in 1..k {
            let col = x.column(c);
            if col.iter().all(|&v| v == col[0]) {
                return Err(Error::InvalidParameter(format!("covariate `{}` is constant", names[c])));
            }
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("data contain non-finite values".into()));
        }
        Ok(DesignData { y, x, names })
    }

    /// Prepend an intercept to covariate columns.
    pub fn with_intercept(y: DVector<f64>, covariates: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let x = covariates.insert_column(0, 1.0);
        let mut all = vec!["(Intercept)".to_string()];
        all.extend(names);
        Self::new(y, x, all)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Copy with a different response.
    pub fn with_response(&self, y: DVector<f64>) -> Self {
        DesignData {
            y,
            x: self.x.clone(),
            names: self.names.clone(),
        }
    }

    /// Centre and scale every non-intercept column to unit sample variance.
    pub fn standardized(&self) -> Self {
        let mut x = self.x.clone();
        let n = x.nrows() as f64;
        for c in 1..x.ncols() {
            let mean = x.column(c).sum() / n;
            let var = x.column(c).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            for v in x.column_mut(c).iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
        DesignData {
            y: self.y.clone(),
            x,
            names: self.names.clone(),
        }
    }
}

/// REML parameter point. Dependence fields are present only for kinds that
/// use them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// σ/τ
    pub ratio: f64,
}

impl ThetaPoint {
    /// A point for `kind` with every dependence term set to `dep`.
    pub fn for_kind(kind: ModelKind, dep: f64, ratio: f64) -> Self {
        ThetaPoint {
            rho: kind.has_rho().then_some(dep),
            phi: kind.has_phi().then_some(dep),
            ratio,
        }
    }

    pub fn rho_or_zero(&self) -> f64 {
        self.rho.unwrap_or(0.0)
    }

    /// The dependence parameter reported for the kind (ρ when present).
    pub fn dependence(&self) -> Option<f64> {
        self.rho.or(self.phi)
    }

    pub fn validate(&self, kind: ModelKind, bounds: (f64, f64)) -> Result<()> {
        if kind.has_rho() != self.rho.is_some() || kind.has_phi() != self.phi.is_some() {
            return Err(Error::InvalidParameter(format!("theta fields do not match {kind}")));
        }
        for v in [self.rho, self.phi].into_iter().flatten() {
            if !(v > bounds.0 - 1e-6 && v < bounds.1 + 1e-6) {
                return Err(Error::InvalidParameter(format!(
                    "dependence {v} outside ({}, {})",
                    bounds.0, bounds.1
                )));
            }
        }
        if !(self.ratio > 0.0 && self.ratio.is_finite()) {
            return Err(Error::InvalidParameter(format!("ratio {} must be positive", self.ratio)));
        }
        Ok(())
    }
}

/// Where the intercept sits relative to the spillover transform.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterceptForm {
    /// Intercept outside the transform; only X₋₁ is spilled over.
    #[default]
    Outside,
    /// Intercept transformed together with the covariates.
    Transformed,
}

fn pole_check(theta: f64, lambda: f64) -> Result<f64> {
    let g = 1.0 - theta * lambda;
    if g.abs() < POLE_TOL {
        return Err(Error::PoleProximity { theta, lambda });
    }
    Ok(g)
}

/// Diagonal of D = ρΛ(I − ρΛ)^{-1}.
pub fn spillover_diag(rho: f64, lambdas: &DVector<f64>) -> Result<DVector<f64>> {
    let mut d = DVector::zeros(lambdas.len());
    for (l, &lam) in lambdas.iter().enumerate() {
        d[l] = rho * lam / pole_check(rho, lam)?;
    }
    Ok(d)
}

/// Diagonal of Σ_θ.
pub fn build_sigma(kind: ModelKind, theta: &ThetaPoint, lambdas: &DVector<f64>) -> Result<DVector<f64>> {
    let r = theta.ratio;
    let mut s = DVector::zeros(lambdas.len());
    for (l, &lam) in lambdas.iter().enumerate() {
        s[l] = match kind {
            ModelKind::Lsem => r / pole_check(theta.phi.unwrap_or(0.0), lam)?,
            ModelKind::Lslm | ModelKind::Lsdm => r / pole_check(theta.rho_or_zero(), lam)?,
            ModelKind::Lsac => {
                r / (pole_check(theta.phi.unwrap_or(0.0), lam)? * pole_check(theta.rho_or_zero(), lam)?)
            }
            other => return Err(Error::Unsupported(format!("Sigma for {other}"))),
        };
    }
    Ok(s)
}

/// Fixed-effect design before the spillover transform, with a mask of the
/// columns the transform acts on. LSDM appends WX₋₁.
pub fn base_design(
    kind: ModelKind,
    data: &DesignData,
    w: &SpatialWeights,
    intercept: InterceptForm,
) -> (DMatrix<f64>, Vec<bool>) {
    let k = data.k();
    let xd = if kind == ModelKind::Lsdm || kind == ModelKind::Sdm {
        instrument::n_sized_alloc();
        let x1 = data.x.columns(1, k - 1).into_owned();
        let wx1 = w.matrix.mul_dense(&x1);
        let mut xd = DMatrix::zeros(data.n(), 2 * k - 1);
        xd.columns_mut(0, k).copy_from(&data.x);
        xd.columns_mut(k, k - 1).copy_from(&wx1);
        xd
    } else {
        data.x.clone()
    };
    let transformed = matches!(kind, ModelKind::Lslm | ModelKind::Lsdm | ModelKind::Lsac);
    let mask = (0..xd.ncols())
        .map(|c| transformed && (c > 0 || intercept == InterceptForm::Transformed))
        .collect();
    (xd, mask)
}

/// Names of the fixed coefficients for a kind.
pub fn coefficient_names(kind: ModelKind, data: &DesignData) -> Vec<String> {
    let mut names = data.names.clone();
    if kind == ModelKind::Lsdm || kind == ModelKind::Sdm {
        names.extend(data.names[1..].iter().map(|s| format!("W.{s}")));
    }
    names
}

/// Apply the rank-L spillover transform to the masked columns of `xd`:
/// X + E·D·(E'X), never forming an n×n matrix.
pub fn transform_columns(
    xd: &DMatrix<f64>,
    mask: &[bool],
    basis: &EigenBasis,
    rho: f64,
) -> Result<DMatrix<f64>> {
    instrument::n_sized_alloc();
    let d = spillover_diag(rho, &basis.lambdas)?;
    let mut out = xd.clone();
    for (c, &m) in mask.iter().enumerate() {
        if !m || rho == 0.0 {
            continue;
        }
        let mut coef = basis.vectors.tr_mul(&xd.column(c));
        coef.component_mul_assign(&d);
        let add = &basis.vectors * coef;
        let mut col = out.column_mut(c);
        col += add;
    }
    Ok(out)
}

/// X_θ for a kind at lag parameter `rho` (ignored for LSEM).
pub fn build_design(
    kind: ModelKind,
    data: &DesignData,
    basis: &EigenBasis,
    w: &SpatialWeights,
    rho: f64,
) -> Result<DMatrix<f64>> {
    build_design_with(kind, data, basis, w, rho, InterceptForm::Outside)
}

pub fn build_design_with(
    kind: ModelKind,
    data: &DesignData,
    basis: &EigenBasis,
    w: &SpatialWeights,
    rho: f64,
    intercept: InterceptForm,
) -> Result<DMatrix<f64>> {
    if !kind.is_low_rank() {
        return Err(Error::Unsupported(format!("low-rank design for {kind}")));
    }
    let (xd, mask) = base_design(kind, data, w, intercept);
    transform_columns(&xd, &mask, basis, if kind == ModelKind::Lsem { 0.0 } else { rho })
}
