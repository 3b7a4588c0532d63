//! Inner products that remove n from likelihood evaluation.
//!
//! With Xd the fixed design before the spillover transform, P the diagonal
//! mask of transformed columns and D = ρΛ(I − ρΛ)^{-1}, the transformed
//! design is X_θ = Xd + E·D·E'Xd·P. Because E'E = I every moment of X_θ
//! follows from the moments of Xd:
//!
//! ```text
//! E'X_θ   = M_EX + D·M_EX·P
//! X_θ'X_θ = M_XX + P·M_EX'·D·M_EX + M_EX'·D·M_EX·P + P·M_EX'·D²·M_EX·P
//! X_θ'y   = m_Xy + P·M_EX'·D·m_Ey
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eigen::EigenBasis;
use crate::error::{Error, Result};
use crate::instrument;
use crate::model::{base_design, spillover_diag, DesignData, InterceptForm, ModelKind};
use crate::weights::SpatialWeights;

/// Precomputed moments. Every field has a size depending on K and L only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCache {
    pub kind: ModelKind,
    pub intercept: InterceptForm,
    pub n: usize,
    /// Covariates in the data including the intercept.
    pub k: usize,
    /// Columns of the fixed design the spillover transform acts on.
    pub mask: Vec<bool>,
    #[serde(with = "dvec")]
    pub lambdas: DVector<f64>,
    pub m_yy: f64,
    #[serde(with = "dvec")]
    pub m_ey: DVector<f64>,
    #[serde(with = "dvec")]
    pub m_xy: DVector<f64>,
    #[serde(with = "dmat")]
    pub m_xx: DMatrix<f64>,
    #[serde(with = "dmat")]
    pub m_ex: DMatrix<f64>,
    /// Xd'(I − EE')Xd, the part of M_XX outside the span of E. It does not
    /// change with ρ because the transform only adds directions inside it.
    #[serde(with = "dmat")]
    pub m_xx_perp: DMatrix<f64>,
    /// 1'W1
    pub m_w: f64,
    /// E'(W1)
    #[serde(with = "dvec")]
    pub m_ew1: DVector<f64>,
    /// diag(E'WE)
    #[serde(with = "dvec")]
    pub ewe_diag: DVector<f64>,
}

/// The response-dependent moments: y'y, E'y and Xd'y.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMoments {
    pub m_yy: f64,
    pub m_ey: DVector<f64>,
    pub m_xy: DVector<f64>,
}

/// Moments of X_θ at one lag value.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub m_xx: DMatrix<f64>,
    pub m_ex: DMatrix<f64>,
    pub m_xy: DVector<f64>,
}

/// One (K+L+1)·n sweep over the response.
pub fn response_moments(y: &DVector<f64>, xd: &DMatrix<f64>, basis: &EigenBasis) -> ResponseMoments {
    instrument::y_moment_pass();
    ResponseMoments {
        m_yy: y.dot(y),
        m_ey: basis.vectors.tr_mul(y),
        m_xy: xd.tr_mul(y),
    }
}

impl MomentCache {
    pub fn l(&self) -> usize {
        self.lambdas.len()
    }

    /// Number of fixed coefficients (2K − 1 for LSDM).
    pub fn k_fixed(&self) -> usize {
        self.m_xx.nrows()
    }

    pub fn m_11(&self) -> f64 {
        self.m_xx[(0, 0)]
    }

    pub fn m_1y(&self) -> f64 {
        self.m_xy[0]
    }

    /// 1'E as a column.
    pub fn m_1e(&self) -> DVector<f64> {
        self.m_ex.column(0).into_owned()
    }

    /// 1'X₋₁ (augmented with WX₋₁ for LSDM).
    pub fn m_1x1(&self) -> DVector<f64> {
        self.m_xx.row(0).columns(1, self.k_fixed() - 1).transpose()
    }

    pub fn m_x1x1(&self) -> DMatrix<f64> {
        let k = self.k_fixed() - 1;
        self.m_xx.view((1, 1), (k, k)).into_owned()
    }

    pub fn m_ex1(&self) -> DMatrix<f64> {
        self.m_ex.columns(1, self.k_fixed() - 1).into_owned()
    }

    pub fn m_x1y(&self) -> DVector<f64> {
        self.m_xy.rows(1, self.k_fixed() - 1).into_owned()
    }

    /// Replace the response moments, keeping everything else.
    pub fn with_response(&self, r: ResponseMoments) -> Self {
        let mut c = self.clone();
        c.m_yy = r.m_yy;
        c.m_ey = r.m_ey;
        c.m_xy = r.m_xy;
        c
    }

    pub fn set_response(&mut self, r: ResponseMoments) {
        self.m_yy = r.m_yy;
        self.m_ey = r.m_ey;
        self.m_xy = r.m_xy;
    }

    /// Moments of X_θ at lag `rho`. The identity for LSEM.
    pub fn assemble(&self, rho: f64) -> Result<Assembled> {
        if !self.mask.iter().any(|&m| m) || rho == 0.0 {
            return Ok(Assembled {
                m_xx: self.m_xx.clone(),
                m_ex: self.m_ex.clone(),
                m_xy: self.m_xy.clone(),
            });
        }
        let d = spillover_diag(rho, &self.lambdas)?;
        let kd = self.k_fixed();
        // G = D·M_EX·P
        let mut g = self.m_ex.clone();
        for c in 0..kd {
            if self.mask[c] {
                g.column_mut(c).component_mul_assign(&d);
            } else {
                g.column_mut(c).fill(0.0);
            }
        }
        let m_ex = &self.m_ex + &g;
        // M_EX'·G = M_EX'·D·M_EX·P and G'G = P·M_EX'·D²·M_EX·P
        let cross = self.m_ex.tr_mul(&g);
        let m_xx = &self.m_xx + &cross + cross.transpose() + g.tr_mul(&g);
        let m_xy = &self.m_xy + g.tr_mul(&self.m_ey);
        Ok(Assembled { m_xx, m_ex, m_xy })
    }

    /// E'X₋₁ at lag ρ in the form M_EX1 + ρ(I − ρΛ)^{-1}M_EX1, which drops
    /// the Λ factor. Kept only to show that it disagrees with the dense
    /// product; estimation never uses it.
    pub fn m_ex1_missing_lambda(&self, rho: f64) -> DMatrix<f64> {
        let mut out = self.m_ex1();
        for l in 0..self.l() {
            let f = 1.0 + rho / (1.0 - rho * self.lambdas[l]);
            out.row_mut(l).scale_mut(f);
        }
        out
    }

    /// Hash over the inputs that determine a cache.
    pub fn key(data: &DesignData, basis: &EigenBasis, w: &SpatialWeights, kind: ModelKind, intercept: InterceptForm) -> String {
        let mut h = Sha256::new();
        for v in data.y.iter().chain(data.x.iter()).chain(basis.vectors.iter()).chain(basis.lambdas.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update((data.n() as u64).to_le_bytes());
        h.update((basis.l() as u64).to_le_bytes());
        h.update(w.content_hash().as_bytes());
        h.update(format!("{kind}{intercept:?}").as_bytes());
        crate::instrument::hex(&h.finalize())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// All inner products for a kind, in O((K + L)·n) plus one sparse product.
pub fn precompute(data: &DesignData, basis: &EigenBasis, w: &SpatialWeights, kind: ModelKind) -> Result<MomentCache> {
    precompute_with(data, basis, w, kind, InterceptForm::Outside)
}

pub fn precompute_with(
    data: &DesignData,
    basis: &EigenBasis,
    w: &SpatialWeights,
    kind: ModelKind,
    intercept: InterceptForm,
) -> Result<MomentCache> {
    let (xd, mask) = base_design(kind, data, w, intercept);
    precompute_from_design(data, &xd, mask, basis, w, kind, intercept)
}

/// As [`precompute_with`] when the fixed design is already built.
pub fn precompute_from_design(
    data: &DesignData,
    xd: &DMatrix<f64>,
    mask: Vec<bool>,
    basis: &EigenBasis,
    w: &SpatialWeights,
    kind: ModelKind,
    intercept: InterceptForm,
) -> Result<MomentCache> {
    if !kind.is_low_rank() {
        return Err(Error::Unsupported(format!("moment cache for {kind}")));
    }
    let n = data.n();
    if basis.n() != n || w.n != n {
        return Err(Error::Dimension(format!(
            "data n = {n}, basis n = {}, weights n = {}",
            basis.n(),
            w.n
        )));
    }
    instrument::n_sized_alloc();
    let r = response_moments(&data.y, xd, basis);
    let e = &basis.vectors;
    let w1 = w.matrix.row_sums();
    // one sweep over the columns of E, each column used while it is in cache
    let (l, kd) = (basis.l(), xd.ncols());
    let mut m_ex = DMatrix::zeros(l, kd);
    let mut m_ew1 = DVector::zeros(l);
    let mut ewe_diag = DVector::zeros(l);
    let mut perp = xd.clone();
    for c in 0..l {
        let col = e.column(c);
        for k in 0..kd {
            m_ex[(c, k)] = col.dot(&xd.column(k));
        }
        m_ew1[c] = col.dot(&w1);
        ewe_diag[c] = w.matrix.quad_form(col.as_slice());
        for k in 0..kd {
            perp.column_mut(k).axpy(-m_ex[(c, k)], &col, 1.0);
        }
    }
    let mut m_xx = xd.tr_mul(xd);
    let mut m_xx_perp = perp.tr_mul(&perp);
    // exact symmetry
    for i in 0..m_xx.nrows() {
        for j in 0..i {
            m_xx[(i, j)] = m_xx[(j, i)];
            m_xx_perp[(i, j)] = m_xx_perp[(j, i)];
        }
    }
    Ok(MomentCache {
        kind,
        intercept,
        n,
        k: data.k(),
        mask,
        lambdas: basis.lambdas.clone(),
        m_yy: r.m_yy,
        m_ey: r.m_ey,
        m_xy: r.m_xy,
        m_xx,
        m_ex,
        m_xx_perp,
        m_w: w1.sum(),
        m_ew1,
        ewe_diag,
    })
}

mod dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

mod dmat {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Raw {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        Raw {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Raw::deserialize(d)?;
        if r.data.len() != r.rows * r.cols {
            return Err(D::Error::custom("matrix data length does not match its shape"));
        }
        Ok(DMatrix::from_vec(r.rows, r.cols, r.data))
    }
}
