//! Wall-clock timings of the estimation phases at growing n.

use std::time::Instant;

use serde::Serialize;

use crate::bootstrap::{bootstrap, BootstrapOptions};
use crate::eigen::{top_l_eigenpairs, EigenOptions};
use crate::error::Result;
use crate::model::{coefficient_names, ModelKind};
use crate::moments::precompute_with;
use crate::output::csv_string;
use crate::par::Execution;
use crate::reml::{finish, maximize, FitOptions};
use crate::sim::config::Dgp;
use crate::sim::dgp::{draw_replicate, response};

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub kinds: Vec<ModelKind>,
    /// Repetitions of the precompute and estimation phases; the median is kept.
    pub repeats: usize,
    /// Bootstrap replicates timed once per cell (0 skips the phase).
    pub bootstrap: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            kinds: vec![ModelKind::Lslm, ModelKind::Lsem],
            repeats: 5,
            bootstrap: 200,
            seed: 1,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    #[serde(rename = "L")]
    pub rank: usize,
    pub model: String,
    pub eigen_s: Option<f64>,
    pub precompute_s: Option<f64>,
    pub estimation_s: Option<f64>,
    pub bootstrap_s: Option<f64>,
    pub error: Option<String>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn time<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let s = Instant::now();
    let out = f();
    (out, s.elapsed().as_secs_f64())
}

fn cell(n: usize, l: usize, kind: ModelKind, opts: &BenchOptions) -> Result<BenchRow> {
    // lag data for lag kinds, error data for LSEM
    let dgp = if kind == ModelKind::Lsem { Dgp::Sem } else { Dgp::Slm };
    let d = draw_replicate(n, opts.seed, 0)?;
    let data = response(&d, dgp, [1.0, 2.0, 0.5], 0.6, 1.0)?;
    let (basis, eigen_s) = time(|| top_l_eigenpairs(&d.w, l, &EigenOptions::default()));
    let basis = basis?;
    let fo = FitOptions {
        execution: opts.execution,
        ..FitOptions::default()
    };
    let reps = opts.repeats.max(1);
    let mut pre = Vec::new();
    let mut est = Vec::new();
    let mut last = None;
    for _ in 0..reps {
        let (cache, t) = time(|| precompute_with(&data, &basis, &d.w, kind, fo.intercept));
        let cache = cache?;
        pre.push(t);
        let (opt, t) = time(|| maximize(&cache, d.w.dependence_bounds(), &fo));
        est.push(t);
        last = Some((cache, opt?));
    }
    let (cache, opt) = last.expect("at least one repetition");
    let bootstrap_s = if opts.bootstrap > 0 {
        let fitted = finish(&cache, coefficient_names(kind, &data), opt);
        let bo = BootstrapOptions {
            m: opts.bootstrap,
            seed: opts.seed,
            execution: opts.execution,
            ..Default::default()
        };
        let (r, t) = time(|| bootstrap(&fitted, &data, &basis, &d.w, &bo));
        r?;
        Some(t)
    } else {
        None
    };
    Ok(BenchRow {
        n,
        rank: l,
        model: kind.to_string(),
        eigen_s: Some(eigen_s),
        precompute_s: Some(median(pre)),
        estimation_s: Some(median(est)),
        bootstrap_s,
        error: None,
    })
}

/// One row per (n, L, kind). A failing cell is reported and the run goes on.
pub fn run_benchmark(sizes: &[usize], ls: &[usize], opts: &BenchOptions) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for &n in sizes {
        for &l in ls {
            for &kind in &opts.kinds {
                rows.push(cell(n, l, kind, opts).unwrap_or_else(|e| BenchRow {
                    n,
                    rank: l,
                    model: kind.to_string(),
                    eigen_s: None,
                    precompute_s: None,
                    estimation_s: None,
                    bootstrap_s: None,
                    error: Some(e.to_string()),
                }));
            }
        }
    }
    rows
}

pub fn bench_csv(rows: &[BenchRow]) -> Result<String> {
    csv_string(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_and_failed_cell() {
        let opts = BenchOptions {
            kinds: vec![ModelKind::Lslm],
            repeats: 1,
            bootstrap: 3,
            ..Default::default()
        };
        let rows = run_benchmark(&[60], &[10, 100], &opts);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].error.is_none() && rows[0].bootstrap_s.is_some());
        assert!(rows[1].error.is_some());
        assert!(bench_csv(&rows).unwrap().starts_with("n,L,model,"));
    }
}
