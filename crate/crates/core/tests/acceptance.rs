//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=3,7` runs a subset. Failures exit nonzero only with
//! `ACCEPTANCE_STRICT=1`, so the rest of the test suite still runs.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lowrank_spatial::bootstrap::{bootstrap, BootPath, BootstrapOptions};
use lowrank_spatial::effects::{effects_dense, effects_from_cache};
use lowrank_spatial::eigen::full_eigenbasis;
use lowrank_spatial::fixtures::random_instance;
use lowrank_spatial::instrument;
use lowrank_spatial::model::{base_design, transform_columns, InterceptForm, ModelKind, ThetaPoint};
use lowrank_spatial::moments::precompute;
use lowrank_spatial::par::Execution;
use lowrank_spatial::reml::{fit, fit_ols, restricted_loglik, solve_moments, solve_naive, FitOptions, LOG_RATIO_CLIP};
use lowrank_spatial::sim::{generate_dgp, parse_scenarios, run_benchmark, run_monte_carlo, BenchOptions, Dgp, SimulationReport};

struct Outcome {
    pass: bool,
    detail: String,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn random_theta(kind: ModelKind, lo: f64, rng: &mut ChaCha8Rng) -> ThetaPoint {
    let mut dep = || lo + rng.random::<f64>() * (0.9 - lo);
    let rho = kind.has_rho().then(&mut dep);
    let phi = kind.has_phi().then(&mut dep);
    ThetaPoint {
        rho,
        phi,
        ratio: (rng.random::<f64>() * 4.0 - 2.0).exp(),
    }
}

fn criterion_1() -> Outcome {
    let mut worst = [0.0f64; 3];
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for n in [10usize, 30, 60] {
        for rep in 0..50u64 {
            let inst = random_instance(n, n, 3, 1000 * n as u64 + rep);
            let full = full_eigenbasis(&inst.w).unwrap();
            let wd = inst.w.matrix.to_dense();
            let lo = inst.w.dependence_bounds().0.max(-0.9);
            for kind in ModelKind::LOW_RANK {
                let theta = random_theta(kind, lo, &mut rng);
                let rho = theta.rho_or_zero();
                // (a) design transform against the dense inverse
                let (xd, mask) = base_design(kind, &inst.data, &inst.w, InterceptForm::Outside);
                let xt = transform_columns(&xd, &mask, &full, rho).unwrap();
                let ainv = (DMatrix::identity(n, n) - &wd * rho).try_inverse().unwrap();
                for (c, &m) in mask.iter().enumerate() {
                    let dense = if m { &ainv * xd.column(c) } else { xd.column(c).into_owned() };
                    let scale = dense.amax().max(1.0);
                    worst[0] = worst[0].max((xt.column(c) - dense).amax() / scale);
                }
                // (b) effects against the dense multiplier
                let cache = precompute(&inst.data, &full, &inst.w, kind).unwrap();
                let beta = DVector::from_fn(cache.k_fixed(), |_, _| rng.random::<f64>() * 4.0 - 2.0);
                let (de, ie) = effects_from_cache(&cache, &beta, rho).unwrap();
                for k in 1..3 {
                    let (dd, id) = match kind {
                        ModelKind::Lsem => (beta[k], 0.0),
                        ModelKind::Lsdm => effects_dense(rho, beta[k], beta[2 + k], &inst.w).unwrap(),
                        _ => effects_dense(rho, beta[k], 0.0, &inst.w).unwrap(),
                    };
                    worst[1] = worst[1].max(rel(de[k - 1], dd)).max(rel(ie[k - 1], id));
                }
                // (c) moment likelihood against the naive evaluation
                let fast = restricted_loglik(&cache, &theta).unwrap();
                let naive = solve_naive(kind, &inst.data, &full, &inst.w, &theta, InterceptForm::Outside)
                    .unwrap()
                    .loglik;
                worst[2] = worst[2].max((fast - naive).abs() / naive.abs());
            }
        }
    }
    Outcome {
        pass: worst[0] < 1e-8 && worst[1] < 1e-8 && worst[2] < 1e-10,
        detail: format!(
            "600 fits: transform {:.1e} (<1e-8), effects {:.1e} (<1e-8), loglik {:.1e} relative (<1e-10)",
            worst[0], worst[1], worst[2]
        ),
    }
}

fn criterion_2() -> Outcome {
    let mut worst_beta = 0.0f64;
    let mut worst_gap = f64::INFINITY;
    for seed in 0..10u64 {
        let inst = random_instance(80, 25, 3, 500 + seed);
        for kind in ModelKind::LOW_RANK {
            let cache = precompute(&inst.data, &inst.basis, &inst.w, kind).unwrap();
            let nested = ThetaPoint::for_kind(kind, 0.0, (-LOG_RATIO_CLIP).exp());
            let sol = solve_moments(&cache, &nested).unwrap();
            let (xd, _) = base_design(kind, &inst.data, &inst.w, InterceptForm::Outside);
            let ols = xd.tr_mul(&xd).cholesky().unwrap().solve(&xd.tr_mul(&inst.data.y));
            worst_beta = worst_beta.max((&sol.beta - &ols).amax());
            let free = fit(kind, &inst.data, &inst.basis, &inst.w, &FitOptions::default()).unwrap();
            let mut reference = sol.loglik;
            if kind != ModelKind::Lsdm {
                reference = reference.max(fit_ols(&inst.data).unwrap().loglik_r);
            }
            worst_gap = worst_gap.min(free.loglik_r - reference);
        }
    }
    Outcome {
        pass: worst_beta < 1e-6 && worst_gap >= -1e-9,
        detail: format!(
            "40 fits: max |beta - OLS| {:.1e} (<1e-6); min loglik_R(free) - loglik_R(OLS) {:.2e} (>= -1e-9, the log-ratio clip keeps the nested limit just out of reach)",
            worst_beta, worst_gap
        ),
    }
}

fn lag_grid() -> SimulationReport {
    let s = parse_scenarios(
        r#"
[[scenario]]
id = "lag-grid"
dgp = "slm"
n = 500
dependence = [0.2, 0.4, 0.6, 0.8]
tau2 = [0.0, 2.0, 4.0]
replications = 200
seed = 20240101
estimators = ["LM", "LSLM_200", "SLM"]
eigen_ranking = "magnitude"
"#,
    )
    .unwrap()
    .remove(0);
    run_monte_carlo(&s, Execution::Parallel)
}

fn criterion_3(r: &SimulationReport, secs: f64) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut worst_lslm = 0.0f64;
    for rho in [0.2, 0.4, 0.6, 0.8] {
        for tau2 in [0.0, 2.0, 4.0] {
            let b = r.bias(rho, tau2, "LSLM_200", "dependence").unwrap_or(f64::NAN);
            if !(b.abs() <= 0.08) {
                ok = false;
                parts.push(format!("LSLM_200 rho={rho} tau2={tau2} bias {b:+.3}"));
            }
            worst_lslm = if b.abs() > worst_lslm.abs() { b } else { worst_lslm };
        }
    }
    let mut slm = Vec::new();
    for rho in [0.4, 0.6, 0.8] {
        let b = r.bias(rho, 4.0, "SLM", "dependence").unwrap_or(f64::NAN);
        if !(b <= -0.25) {
            ok = false;
        }
        slm.push(format!("{b:+.3}"));
    }
    Outcome {
        pass: ok,
        detail: format!(
            "LSLM_200 worst rho bias {worst_lslm:+.3} (|.|<=0.08); SLM bias at tau2=4 rho=0.4/0.6/0.8: {} (<=-0.25); {}{:.0}s",
            slm.join(", "),
            if parts.is_empty() { String::new() } else { format!("off: {}; ", parts.join("; ")) },
            secs
        ),
    }
}

fn criterion_4(r: &SimulationReport) -> Outcome {
    let lm = r.bias(0.8, 0.0, "LM", "beta1").unwrap_or(f64::NAN);
    let ls = r.bias(0.8, 0.0, "LSLM_200", "beta1").unwrap_or(f64::NAN);
    let slm0 = r.bias(0.8, 0.0, "SLM", "beta1").unwrap_or(f64::NAN);
    let slm4 = r.bias(0.8, 4.0, "SLM", "beta1").unwrap_or(f64::NAN);
    Outcome {
        pass: (lm - 0.46).abs() <= 0.05 && ls.abs() <= 0.08 && slm0.abs() <= 0.05 && slm4 >= 0.15,
        detail: format!(
            "rho=0.8 beta1 bias: LM {lm:+.3} (0.46+-0.05), LSLM_200 {ls:+.3} (|.|<=0.08), SLM tau2=0 {slm0:+.3} (|.|<=0.05), SLM tau2=4 {slm4:+.3} (>=0.15)"
        ),
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let s = parse_scenarios(
        r#"
[[scenario]]
id = "effects"
dgp = "slm"
n = 500
dependence = 0.6
tau2 = 0.0
replications = 200
seed = 777
estimators = ["LSLM_200"]
eigen_ranking = "magnitude"
bootstrap = 200
"#,
    )
    .unwrap()
    .remove(0);
    let r = run_monte_carlo(&s, Execution::Parallel);
    let rmse = r.rmse(0.6, 0.0, "LSLM_200", "DE1").unwrap_or(f64::NAN);
    let bias = r.bias(0.6, 0.0, "LSLM_200", "DE1").unwrap_or(f64::NAN);
    let lo = r.mean(0.6, 0.0, "LSLM_200", "DE1_lower").unwrap_or(f64::NAN);
    let hi = r.mean(0.6, 0.0, "LSLM_200", "DE1_upper").unwrap_or(f64::NAN);
    let cover = r.coverage(0.6, 0.0, "LSLM_200", "DE1").unwrap_or(f64::NAN);
    Outcome {
        pass: (rmse - 0.05).abs() <= 0.03 && bias.abs() <= 0.02 && (lo - 2.21).abs() <= 0.06 && (hi - 2.44).abs() <= 0.06,
        detail: format!(
            "DE1 RMSE {rmse:.3} (0.05+-0.03), bias {bias:+.3} (|.|<=0.02), mean 95% CI [{lo:.3}, {hi:.3}] (each within 0.06 of [2.21, 2.44]), coverage {cover:.3}; {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    }
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let s = parse_scenarios(
        r#"
[[scenario]]
id = "moran"
dgp = "sem"
n = 500
dependence = 0.8
tau2 = 0.0
replications = 200
seed = 4242
estimators = ["LM", "LSEM_200"]
eigen_ranking = "magnitude"
"#,
    )
    .unwrap()
    .remove(0);
    let r = run_monte_carlo(&s, Execution::Parallel);
    let lm = r.mean(0.8, 0.0, "LM", "moran_z").unwrap_or(f64::NAN);
    let ls = r.mean(0.8, 0.0, "LSEM_200", "moran_z").unwrap_or(f64::NAN);
    Outcome {
        pass: (15.0..=27.0).contains(&lm) && ls.abs() <= 1.5,
        detail: format!(
            "mean residual Moran z: LM {lm:.2} (in [15, 27]), LSEM_200 {ls:+.2} (|.|<=1.5); {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    }
}

fn criterion_7() -> Outcome {
    let opts = BenchOptions {
        kinds: vec![ModelKind::Lslm],
        repeats: 9,
        bootstrap: 0,
        seed: 3,
        execution: Execution::Parallel,
    };
    let rows = run_benchmark(&[5000, 40000], &[100], &opts);
    if let Some(e) = rows.iter().find_map(|r| r.error.clone()) {
        return Outcome {
            pass: false,
            detail: format!("benchmark cell failed: {e}"),
        };
    }
    let est = rows[1].estimation_s.unwrap() / rows[0].estimation_s.unwrap();
    let pre = rows[1].precompute_s.unwrap() / rows[0].precompute_s.unwrap();
    Outcome {
        pass: est < 4.0 && pre <= 16.0,
        detail: format!(
            "L=100, n 5000 -> 40000: estimation {:.4}s -> {:.4}s (ratio {est:.2} < 4), precompute {:.4}s -> {:.4}s (ratio {pre:.2} <= 16), eigen {:.1}s -> {:.1}s",
            rows[0].estimation_s.unwrap(),
            rows[1].estimation_s.unwrap(),
            rows[0].precompute_s.unwrap(),
            rows[1].precompute_s.unwrap(),
            rows[0].eigen_s.unwrap(),
            rows[1].eigen_s.unwrap(),
        ),
    }
}

fn criterion_8() -> Outcome {
    let g = generate_dgp(Dgp::Slm, 100, [1.0, 2.0, 0.5], 0.5, 1.0, 88, 0).unwrap();
    let basis = lowrank_spatial::eigen::top_l_eigenpairs(&g.w, 40, &Default::default()).unwrap();
    let f = fit(ModelKind::Lslm, &g.data, &basis, &g.w, &FitOptions::default()).unwrap();
    let mut o = BootstrapOptions {
        m: 20,
        seed: 9,
        execution: Execution::Sequential,
        ..Default::default()
    };
    instrument::reset();
    let fast = bootstrap(&f, &g.data, &basis, &g.w, &o).unwrap();
    let fast_counts = instrument::snapshot();
    o.path = BootPath::Naive;
    instrument::reset();
    let naive = bootstrap(&f, &g.data, &basis, &g.w, &o).unwrap();
    let naive_counts = instrument::snapshot();
    let mut worst = 0.0f64;
    let mut matched = fast.index == naive.index;
    for (a, b) in fast.theta_samples.iter().zip(&naive.theta_samples) {
        worst = worst
            .max((a.rho_or_zero() - b.rho_or_zero()).abs())
            .max((a.ratio.ln() - b.ratio.ln()).abs());
    }
    matched &= fast.m == 20;
    Outcome {
        pass: matched && worst <= 1e-10,
        detail: format!(
            "n=100 m=20: max |theta fast - naive| {worst:.1e} (<=1e-10); y-moment passes {} fast vs {} naive; n-sized sweeps {} fast vs {} naive",
            fast_counts.y_passes, naive_counts.y_passes, fast_counts.n_sized, naive_counts.n_sized
        ),
    }
}

fn criterion_9() -> Outcome {
    let inst = random_instance(40, 10, 3, 2024);
    let rho = 0.6;
    let cache = precompute(&inst.data, &inst.basis, &inst.w, ModelKind::Lslm).unwrap();
    let derived = cache.assemble(rho).unwrap().m_ex.columns(1, 2).into_owned();
    let printed = cache.m_ex1_missing_lambda(rho);
    // dense rank-L transform: E'(X₋₁ + E·ρΛ(I − ρΛ)^{-1}·E'X₋₁) with the n×n product formed
    let e = &inst.basis.vectors;
    let d = inst.basis.lambdas.map(|l| rho * l / (1.0 - rho * l));
    let mult = DMatrix::<f64>::identity(40, 40) + e * DMatrix::from_diagonal(&d) * e.transpose();
    let x1 = inst.data.x.columns(1, 2).into_owned();
    let dense = e.transpose() * (mult * x1);
    let scale = dense.amax();
    let err_derived = (&derived - &dense).amax() / scale;
    let err_printed = (&printed - &dense).amax() / scale;
    Outcome {
        pass: err_derived <= 1e-9 && err_printed > 1e-3,
        detail: format!("n=40 rho=0.6: derived form error {err_derived:.1e} (<=1e-9), printed form error {err_printed:.1e} (>1e-3)"),
    }
}

fn main() {
    // ACCEPTANCE_ONLY=3,4 restricts the run to some criteria
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let want = |i: u32| only.as_ref().is_none_or(|o| o.contains(&i));
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |i: u32, o: Outcome| {
        println!("criterion {i} [PRIMARY] {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((i, o));
    };
    if want(1) {
        report(1, criterion_1());
    }
    if want(2) {
        report(2, criterion_2());
    }
    if want(3) || want(4) {
        let t = Instant::now();
        let grid = lag_grid();
        let secs = t.elapsed().as_secs_f64();
        if want(3) {
            report(3, criterion_3(&grid, secs));
        }
        if want(4) {
            report(4, criterion_4(&grid));
        }
    }
    let rest: [(u32, fn() -> Outcome); 5] = [(5, criterion_5), (6, criterion_6), (7, criterion_7), (8, criterion_8), (9, criterion_9)];
    for (i, f) in rest {
        if want(i) {
            report(i, f());
        }
    }
    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.pass).map(|(i, _)| *i).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria run passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
