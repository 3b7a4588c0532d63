//! Average direct and indirect effects.
//!
//! In the low-rank models the spatial multiplier (I − ρW)^{-1} is replaced by
//! I + E·D·E' with D = ρΛ(I − ρΛ)^{-1}. Effects are averages of the diagonal
//! and of the off-diagonal row sums of the multiplier applied to β_k (and
//! q_k·W for LSDM).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::eigen::EigenBasis;
use crate::error::{Error, Result};
use crate::instrument;
use crate::model::{spillover_diag, ModelKind};
use crate::moments::MomentCache;
use crate::output::csv_string;
use crate::reml::FittedModel;
use crate::weights::SpatialWeights;

/// Largest n for which dense multipliers are formed.
pub const DENSE_EFFECTS_LIMIT: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectsEstimate {
    /// Non-intercept covariate names.
    pub names: Vec<String>,
    pub de: Vec<f64>,
    pub ie: Vec<f64>,
    pub ci_de: Option<Vec<(f64, f64)>>,
    pub ci_ie: Option<Vec<(f64, f64)>>,
    pub level: Option<f64>,
}

impl EffectsEstimate {
    pub fn total(&self) -> Vec<f64> {
        self.de.iter().zip(&self.ie).map(|(a, b)| a + b).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            covariate: &'a str,
            de: f64,
            ie: f64,
            de_lower: Option<f64>,
            de_upper: Option<f64>,
            ie_lower: Option<f64>,
            ie_upper: Option<f64>,
        }
        let rows: Vec<Row> = (0..self.de.len())
            .map(|k| Row {
                covariate: &self.names[k],
                de: self.de[k],
                ie: self.ie[k],
                de_lower: self.ci_de.as_ref().map(|c| c[k].0),
                de_upper: self.ci_de.as_ref().map(|c| c[k].1),
                ie_lower: self.ci_ie.as_ref().map(|c| c[k].0),
                ie_upper: self.ci_ie.as_ref().map(|c| c[k].1),
            })
            .collect();
        csv_string(&rows)
    }
}

/// Index of q_k for covariate k (1-based, intercept excluded) in an LSDM β.
fn q_index(cache_k: usize, k: usize) -> usize {
    cache_k + k - 1
}

fn check_k(k: usize, kk: usize) -> Result<()> {
    if k == 0 || k >= kk {
        return Err(Error::InvalidParameter(format!("covariate index {k} outside 1..{}", kk - 1)));
    }
    Ok(())
}

/// DE_k from cached quantities. `beta` is the full fixed-coefficient vector.
pub fn de_from_cache(cache: &MomentCache, beta: &DVector<f64>, rho: f64, k: usize) -> Result<f64> {
    check_k(k, cache.k)?;
    match cache.kind {
        ModelKind::Lsem => Ok(beta[k]),
        ModelKind::Lslm | ModelKind::Lsac => {
            let d = spillover_diag(rho, &cache.lambdas)?;
            Ok(beta[k] * (1.0 + d.sum() / cache.n as f64))
        }
        ModelKind::Lsdm => {
            let d = spillover_diag(rho, &cache.lambdas)?;
            let q = beta[q_index(cache.k, k)];
            let n = cache.n as f64;
            Ok(beta[k] * (1.0 + d.sum() / n) + q / n * d.dot(&cache.ewe_diag))
        }
        other => Err(Error::Unsupported(format!("low-rank effects for {other}"))),
    }
}

/// IE_k from cached quantities; nothing here depends on n.
pub fn ie_from_cache(cache: &MomentCache, beta: &DVector<f64>, rho: f64, k: usize) -> Result<f64> {
    check_k(k, cache.k)?;
    let n = cache.n as f64;
    let m1e = cache.m_1e();
    let total = match cache.kind {
        ModelKind::Lsem => return Ok(0.0),
        ModelKind::Lslm | ModelKind::Lsac => {
            let d = spillover_diag(rho, &cache.lambdas)?;
            beta[k] + beta[k] / n * m1e.component_mul(&d).dot(&m1e)
        }
        ModelKind::Lsdm => {
            let d = spillover_diag(rho, &cache.lambdas)?;
            let q = beta[q_index(cache.k, k)];
            let dm = m1e.component_mul(&d);
            beta[k] + beta[k] / n * dm.dot(&m1e) + q / n * cache.m_w + q / n * dm.dot(&cache.m_ew1)
        }
        other => return Err(Error::Unsupported(format!("low-rank effects for {other}"))),
    };
    Ok(total - de_from_cache(cache, beta, rho, k)?)
}

/// All effects at (β, ρ) from the cache.
pub fn effects_from_cache(cache: &MomentCache, beta: &DVector<f64>, rho: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut de = Vec::with_capacity(cache.k - 1);
    let mut ie = Vec::with_capacity(cache.k - 1);
    for k in 1..cache.k {
        de.push(de_from_cache(cache, beta, rho, k)?);
        ie.push(ie_from_cache(cache, beta, rho, k)?);
    }
    Ok((de, ie))
}

/// DE_k of a fitted low-rank model.
pub fn de_lowrank(fitted: &FittedModel, cache: &MomentCache, k: usize) -> Result<f64> {
    de_from_cache(cache, &fitted.beta, fitted.rho(), k)
}

pub fn ie_lowrank(fitted: &FittedModel, cache: &MomentCache, k: usize) -> Result<f64> {
    ie_from_cache(cache, &fitted.beta, fitted.rho(), k)
}

/// Effects of any fitted model. LM shares the LSEM form (DE = β, IE = 0)
/// and needs no cache.
pub fn effects(fitted: &FittedModel, cache: Option<&MomentCache>) -> Result<EffectsEstimate> {
    let names = fitted.names[1..fitted.k].to_vec();
    let (de, ie) = match (fitted.kind, cache) {
        (ModelKind::Lm | ModelKind::Lsem, _) => (fitted.beta.as_slice()[1..fitted.k].to_vec(), vec![0.0; fitted.k - 1]),
        (_, Some(c)) => effects_from_cache(c, &fitted.beta, fitted.rho())?,
        (kind, None) => return Err(Error::InvalidParameter(format!("{kind} effects need the moment cache"))),
    };
    Ok(EffectsEstimate {
        names,
        de,
        ie,
        ci_de: None,
        ci_ie: None,
        level: None,
    })
}

/// Effects computed row by row from E and WE. Used to check the cached path.
pub fn effects_direct(
    kind: ModelKind,
    beta: &DVector<f64>,
    rho: f64,
    k_data: usize,
    basis: &EigenBasis,
    w: &SpatialWeights,
) -> Result<(Vec<f64>, Vec<f64>)> {
    instrument::n_sized_alloc();
    let n = basis.n();
    let nf = n as f64;
    if kind == ModelKind::Lsem || kind == ModelKind::Lm {
        return Ok((beta.as_slice()[1..k_data].to_vec(), vec![0.0; k_data - 1]));
    }
    let d = spillover_diag(rho, &basis.lambdas)?;
    let e = &basis.vectors;
    let ed = e * DMatrix::from_diagonal(&d);
    let we = w.matrix.mul_dense(e);
    let ones = DVector::from_element(n, 1.0);
    let w1 = w.matrix.row_sums();
    // (I + EDE')1 and (I + EDE')W1
    let mult_1 = &ones + &ed * e.tr_mul(&ones);
    let mult_w1 = &w1 + &ed * e.tr_mul(&w1);
    let mut de = Vec::new();
    let mut ie = Vec::new();
    for k in 1..k_data {
        let b = beta[k];
        let q = if kind == ModelKind::Lsdm { beta[q_index(k_data, k)] } else { 0.0 };
        let mut diag_sum = 0.0;
        for i in 0..n {
            let own = ed.row(i).dot(&e.row(i));
            let cross = ed.row(i).dot(&we.row(i));
            diag_sum += b * (1.0 + own) + q * cross;
        }
        let total = (b * mult_1.sum() + q * mult_w1.sum()) / nf;
        de.push(diag_sum / nf);
        ie.push(total - diag_sum / nf);
    }
    Ok((de, ie))
}

/// Effects through the dense multiplier (I − ρW)^{-1}(β_k I + q_k W).
pub fn effects_dense(rho: f64, beta_k: f64, q_k: f64, w: &SpatialWeights) -> Result<(f64, f64)> {
    let n = w.n;
    if n > DENSE_EFFECTS_LIMIT {
        return Err(Error::SizeGuard {
            n,
            limit: DENSE_EFFECTS_LIMIT,
        });
    }
    instrument::n_sized_alloc();
    let wd = w.matrix.to_dense();
    let a = DMatrix::<f64>::identity(n, n) - &wd * rho;
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::PoleProximity { theta: rho, lambda: 1.0 / rho })?;
    let s = (&inv * beta_k) + (&inv * &wd) * q_k;
    let de = s.trace() / n as f64;
    let total = s.sum() / n as f64;
    Ok((de, total - de))
}

/// Effects of a full-rank model (SEM, SLM, SDM, LM) by the dense multiplier.
/// `beta` follows the low-rank layout: β then q for SDM.
pub fn effects_fullrank(
    kind: ModelKind,
    beta: &DVector<f64>,
    rho: f64,
    k_data: usize,
    w: &SpatialWeights,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if w.n > DENSE_EFFECTS_LIMIT {
        return Err(Error::SizeGuard {
            n: w.n,
            limit: DENSE_EFFECTS_LIMIT,
        });
    }
    let mut de = Vec::new();
    let mut ie = Vec::new();
    for k in 1..k_data {
        let (d, i) = match kind {
            ModelKind::Sem | ModelKind::Lm | ModelKind::Lsem => (beta[k], 0.0),
            ModelKind::Slm | ModelKind::Sac => effects_dense(rho, beta[k], 0.0, w)?,
            ModelKind::Sdm => effects_dense(rho, beta[k], beta[q_index(k_data, k)], w)?,
            other => return Err(Error::Unsupported(format!("full-rank effects for {other}"))),
        };
        de.push(d);
        ie.push(i);
    }
    Ok((de, ie))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::full_eigenbasis;
    use crate::fixtures::random_instance;
    use crate::moments::precompute;

    #[test]
    fn full_rank_agrees_with_dense_multiplier() {
        let inst = random_instance(30, 30, 3, 2);
        let full = full_eigenbasis(&inst.w).unwrap();
        let beta = DVector::from_vec(vec![1.0, 2.0, -0.5, 0.7, 0.3]);
        for kind in [ModelKind::Lslm, ModelKind::Lsdm, ModelKind::Lsac] {
            let cache = precompute(&inst.data, &full, &inst.w, kind).unwrap();
            for rho in [-0.5, 0.0, 0.3, 0.6, 0.9] {
                let (de, ie) = effects_from_cache(&cache, &beta, rho).unwrap();
                for k in 1..3 {
                    let q = if kind == ModelKind::Lsdm { beta[2 + k] } else { 0.0 };
                    let (dd, id) = effects_dense(rho, beta[k], q, &inst.w).unwrap();
                    assert!((de[k - 1] - dd).abs() < 1e-8, "{kind} {rho} {} {dd}", de[k - 1]);
                    assert!((ie[k - 1] - id).abs() < 1e-8, "{kind} {rho} {} {id}", ie[k - 1]);
                }
            }
        }
    }

    #[test]
    fn cached_path_matches_direct_at_low_rank() {
        let inst = random_instance(50, 12, 3, 3);
        let beta = DVector::from_vec(vec![1.0, 2.0, -0.5, 0.7, 0.3]);
        for kind in [ModelKind::Lslm, ModelKind::Lsdm, ModelKind::Lsac] {
            let cache = precompute(&inst.data, &inst.basis, &inst.w, kind).unwrap();
            let (de, ie) = effects_from_cache(&cache, &beta, 0.55).unwrap();
            let (dd, id) = effects_direct(kind, &beta, 0.55, 3, &inst.basis, &inst.w).unwrap();
            for k in 0..2 {
                assert!((de[k] - dd[k]).abs() < 1e-10);
                assert!((ie[k] - id[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rho_zero_collapses() {
        let inst = random_instance(40, 10, 3, 4);
        let beta = DVector::from_vec(vec![1.0, 2.0, -0.5, 0.7, 0.3]);
        let c = precompute(&inst.data, &inst.basis, &inst.w, ModelKind::Lslm).unwrap();
        let (de, ie) = effects_from_cache(&c, &beta, 0.0).unwrap();
        assert_eq!(de, vec![2.0, -0.5]);
        assert_eq!(ie, vec![0.0, 0.0]);
        let c = precompute(&inst.data, &inst.basis, &inst.w, ModelKind::Lsdm).unwrap();
        let (de, ie) = effects_from_cache(&c, &beta, 0.0).unwrap();
        assert_eq!(de, vec![2.0, -0.5]);
        let m_w = inst.w.matrix.sum() / 40.0;
        assert!((ie[0] - 0.7 * m_w).abs() < 1e-12 && (ie[1] - 0.3 * m_w).abs() < 1e-12);
        let c = precompute(&inst.data, &inst.basis, &inst.w, ModelKind::Lsem).unwrap();
        let (de, ie) = effects_from_cache(&c, &beta, 0.6).unwrap();
        assert_eq!((de, ie), (vec![2.0, -0.5], vec![0.0, 0.0]));
    }

    #[test]
    fn fullrank_sem_and_null_slm() {
        let inst = random_instance(20, 5, 2, 1);
        let beta = DVector::from_vec(vec![0.3, 1.7]);
        assert_eq!(effects_fullrank(ModelKind::Sem, &beta, 0.5, 2, &inst.w).unwrap(), (vec![1.7], vec![0.0]));
        let (de, ie) = effects_fullrank(ModelKind::Slm, &beta, 0.0, 2, &inst.w).unwrap();
        assert!((de[0] - 1.7).abs() < 1e-12 && ie[0].abs() < 1e-12);
    }

    #[test]
    fn csv_has_one_row_per_covariate() {
        let e = EffectsEstimate {
            names: vec!["x1".into(), "x2".into()],
            de: vec![1.0, 2.0],
            ie: vec![0.5, 0.0],
            ci_de: Some(vec![(0.9, 1.1), (1.8, 2.2)]),
            ci_ie: None,
            level: Some(0.95),
        };
        let s = e.to_csv().unwrap();
        assert_eq!(s.lines().count(), 3);
        assert!(s.starts_with("covariate,de,ie,de_lower"));
    }
}
