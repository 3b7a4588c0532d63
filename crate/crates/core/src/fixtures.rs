//! Small reproducible problem instances for tests, examples and benches.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::eigen::{top_l_eigenpairs, EigenBasis, EigenOptions};
use crate::linalg::solve_shifted;
use crate::model::DesignData;
use crate::weights::{build_delaunay_adjacency, SpatialWeights};

#[derive(Debug, Clone)]
pub struct Instance {
    pub coords: Vec<[f64; 2]>,
    pub w0: SpatialWeights,
    pub w: SpatialWeights,
    pub basis: EigenBasis,
    pub data: DesignData,
}

pub fn uniform_coords(n: usize, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
}

pub fn normal_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn geometry(n: usize, l: usize, rng: &mut impl Rng) -> (Vec<[f64; 2]>, SpatialWeights, SpatialWeights, EigenBasis) {
    let coords = uniform_coords(n, rng);
    let w0 = build_delaunay_adjacency(&coords).expect("random points triangulate");
    let w = w0.scale_by_max_eigenvalue().expect("nonzero spectrum");
    let basis = top_l_eigenpairs(&w, l, &EigenOptions::default()).expect("rank within n");
    (coords, w0, w, basis)
}

/// Random Delaunay geometry on the unit square, K−1 standard normal
/// covariates plus an intercept, and an unstructured normal response.
pub fn random_instance(n: usize, l: usize, k: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (coords, w0, w, basis) = geometry(n, l, &mut rng);
    let x = normal_matrix(n, k - 1, &mut rng);
    let y = normal_vector(n, &mut rng) + x.column(0) * 0.5;
    let names = (1..k).map(|i| format!("x{i}")).collect();
    let data = DesignData::with_intercept(y, x, names).expect("valid design");
    Instance {
        coords,
        w0,
        w,
        basis,
        data,
    }
}

/// Response from y = (I − ρW)⁻¹(1 + 2x₁ + u + ε) with a smooth spatial
/// term u of standard deviation `u_sd`.
pub fn lag_instance(n: usize, l: usize, rho: f64, u_sd: f64, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (coords, w0, w, basis) = geometry(n, l, &mut rng);
    let x = normal_matrix(n, 1, &mut rng);
    let g = normal_vector(l, &mut rng);
    let u = &basis.vectors * g * (u_sd * (n as f64 / l as f64).sqrt());
    let eps = normal_vector(n, &mut rng);
    let mu = DVector::from_element(n, 1.0) + x.column(0) * 2.0 + u + eps;
    let y = solve_shifted(&w.matrix, rho, &mu, 1e-12).expect("shift within bounds");
    let data = DesignData::with_intercept(y, x, vec!["x1".into()]).expect("valid design");
    Instance {
        coords,
        w0,
        w,
        basis,
        data,
    }
}
