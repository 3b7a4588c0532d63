//! Data-generating processes for the Monte Carlo experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bootstrap::replicate_rng;
use crate::error::{Error, Result};
use crate::linalg::solve_shifted;
use crate::model::DesignData;
use crate::sim::config::Dgp;
use crate::weights::{build_delaunay_adjacency, SpatialWeights};

/// Random draws of one replicate that do not depend on the grid cell:
/// the geometry, the covariates and the standardised noise.
#[derive(Debug, Clone)]
pub struct Draws {
    pub coords: Vec<[f64; 2]>,
    pub w0: SpatialWeights,
    pub w: SpatialWeights,
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
    pub eps: DVector<f64>,
    pub unit_u: DVector<f64>,
}

/// Draws for replicate `r`, deterministic in (seed, r).
pub fn draw_replicate(n: usize, seed: u64, r: usize) -> Result<Draws> {
    let mut rng = replicate_rng(seed, r);
    let mut normal = |len: usize| DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal));
    let c = normal(2 * n);
    let coords: Vec<[f64; 2]> = (0..n).map(|i| [c[2 * i], c[2 * i + 1]]).collect();
    let x1 = normal(n);
    let x2 = normal(n);
    let eps = normal(n);
    let unit_u = normal(n);
    let w0 = build_delaunay_adjacency(&coords)?;
    let w = w0.scale_by_max_eigenvalue()?;
    Ok(Draws {
        coords,
        w0,
        w,
        x1,
        x2,
        eps,
        unit_u,
    })
}

/// Response for one grid cell from shared draws.
pub fn response(d: &Draws, dgp: Dgp, beta: [f64; 3], dependence: f64, tau2: f64) -> Result<DesignData> {
    let (lo, hi) = d.w.dependence_bounds();
    if dependence <= lo || dependence >= hi {
        return Err(Error::InvalidParameter(format!(
            "dependence {dependence} outside ({lo}, {hi}) for this geometry"
        )));
    }
    let n = d.x1.len();
    let signal = &d.x1 * beta[1] + &d.x2 * beta[2];
    let z = match dgp {
        Dgp::Slm => solve_shifted(&d.w.matrix, dependence, &(signal + &d.eps), 1e-13)?,
        Dgp::Sem => signal + solve_shifted(&d.w.matrix, dependence, &d.eps, 1e-13)?,
    };
    let y = z + DVector::from_element(n, beta[0]) + &d.unit_u * tau2.sqrt();
    let mut x = DMatrix::zeros(n, 2);
    x.set_column(0, &d.x1);
    x.set_column(1, &d.x2);
    DesignData::with_intercept(y, x, vec!["x1".into(), "x2".into()])
}

/// A generated dataset.
#[derive(Debug, Clone)]
pub struct Generated {
    pub coords: Vec<[f64; 2]>,
    pub w0: SpatialWeights,
    pub w: SpatialWeights,
    pub data: DesignData,
}

/// One dataset of a single-cell scenario.
pub fn generate_dgp(dgp: Dgp, n: usize, beta: [f64; 3], dependence: f64, tau2: f64, seed: u64, r: usize) -> Result<Generated> {
    let d = draw_replicate(n, seed, r)?;
    let data = response(&d, dgp, beta, dependence, tau2)?;
    Ok(Generated {
        coords: d.coords,
        w0: d.w0,
        w: d.w,
        data,
    })
}
