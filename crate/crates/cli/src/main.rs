use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lowrank_spatial::bootstrap::{bootstrap, summary_csv, summary_rows, BootstrapOptions};
use lowrank_spatial::effects::{effects, effects_fullrank, EffectsEstimate};
use lowrank_spatial::eigen::{
    full_eigenbasis, select_l_by_threshold, top_l_eigenpairs, top_l_eigenpairs_cached, EigenBasis, EigenOptions,
    EigenRanking, ThresholdRule,
};
use lowrank_spatial::model::{DesignData, InterceptForm, ModelKind};
use lowrank_spatial::moments::precompute_with;
use lowrank_spatial::oracle::{fit_fullrank_with, moran_z};
use lowrank_spatial::output::write_atomic;
use lowrank_spatial::par::configure_threads;
use lowrank_spatial::reml::{fit, fit_ols, residuals, FitOptions};
use lowrank_spatial::sim::{self, bench_csv, load_scenarios, reports_csv, run_benchmark, run_monte_carlo, BenchOptions, Dgp};
use lowrank_spatial::table::{load_data_csv, write_coords_csv, write_data_csv};
use lowrank_spatial::weights::{build_delaunay_adjacency, load_coords, load_edge_list, SpatialWeights};

#[derive(Parser)]
#[command(name = "lrspatial", version, about = "Low-rank spatial econometric models")]
struct Cli {
    /// Output directory
    #[arg(long, global = true, env = "LRSPATIAL_OUT", default_value = "lrspatial-out")]
    out: PathBuf,
    /// Worker threads
    #[arg(long, global = true, env = "LRSPATIAL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write the fit report, effects and bootstrap summary
    Fit(FitArgs),
    /// Run Monte Carlo scenarios from a TOML file
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Time eigendecomposition, estimation and bootstrap at several sizes
    Bench(BenchArgs),
    /// Write a simulated dataset (data.csv, coords.csv, weights.txt)
    Generate(GenerateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Data CSV with named columns
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column
    #[arg(long, default_value = "y")]
    response: String,
    /// Edge list `i j weight`
    #[arg(long, conflicts_with = "coords", required_unless_present = "coords")]
    weights: Option<PathBuf>,
    /// Coordinates CSV with x and y columns; Delaunay neighbours are used
    #[arg(long)]
    coords: Option<PathBuf>,
    #[arg(long, default_value = "LSLM")]
    model: String,
    /// Number of eigenpairs (default min(200, n/2))
    #[arg(long, conflicts_with = "threshold")]
    rank: Option<usize>,
    /// Keep eigenpairs with scaled eigenvalue above this value
    #[arg(long)]
    threshold: Option<f64>,
    /// Bootstrap replicates (0 skips)
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Rank eigenpairs and apply the threshold by |λ|
    #[arg(long)]
    abs_eigen: bool,
    /// Edge-list indices start at 1
    #[arg(long)]
    one_based: bool,
    /// Apply the spillover transform to the intercept column too
    #[arg(long)]
    alt_intercept: bool,
    /// Directory for cached eigenbases
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Centre and scale covariates to unit variance before fitting
    #[arg(long)]
    standardize: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [5000usize, 10000, 20000, 40000])]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [50usize, 100, 200])]
    ranks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [String::from("LSLM"), String::from("LSEM")])]
    model: Vec<String>,
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    /// slm or sem
    #[arg(long, default_value = "sem")]
    dgp: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.6)]
    dependence: f64,
    #[arg(long, default_value_t = 0.0)]
    tau2: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn fmt_err(e: lowrank_spatial::Error) -> anyhow::Error {
    anyhow::Error::new(e)
}

fn load_weights(a: &FitArgs, n: usize) -> Result<SpatialWeights> {
    let w0 = if let Some(p) = &a.weights {
        load_edge_list(p, Some(n), a.one_based)
            .map_err(fmt_err)
            .with_context(|| format!("reading weights {}", p.display()))?
    } else {
        let p = a.coords.as_ref().expect("clap enforces one weights source");
        let c = load_coords(p)
            .map_err(fmt_err)
            .with_context(|| format!("reading coordinates {}", p.display()))?;
        if c.len() != n {
            bail!("coordinates {}: {} rows for {} data rows", p.display(), c.len(), n);
        }
        build_delaunay_adjacency(&c).map_err(fmt_err).context("building Delaunay weights")?
    };
    Ok(w0)
}

fn choose_basis(a: &FitArgs, w: &SpatialWeights, n: usize) -> Result<EigenBasis> {
    let opts = EigenOptions {
        ranking: if a.abs_eigen { EigenRanking::Magnitude } else { EigenRanking::Algebraic },
        ..Default::default()
    };
    let l = match (a.rank, a.threshold) {
        (Some(l), _) => l,
        (None, Some(t)) => {
            let full = full_eigenbasis(w).map_err(fmt_err)?;
            let rule = if a.abs_eigen { ThresholdRule::Absolute } else { ThresholdRule::Positive };
            let l = select_l_by_threshold(full.lambdas.as_slice(), t, rule);
            if l == 0 {
                bail!("no eigenvalue passes threshold {t}");
            }
            l
        }
        (None, None) => sim::config::default_rank(n),
    };
    let basis = match &a.cache_dir {
        Some(dir) => top_l_eigenpairs_cached(w, l, &opts, dir),
        None => top_l_eigenpairs(w, l, &opts),
    };
    basis.map_err(fmt_err)
}

fn write(out: &Path, name: &str, text: &str) -> Result<()> {
    let p = out.join(name);
    write_atomic(&p, text.as_bytes()).map_err(fmt_err).with_context(|| format!("writing {}", p.display()))
}

fn cmd_fit(a: &FitArgs, out: &Path) -> Result<()> {
    let mut data = load_data_csv(&a.data, &a.response)
        .map_err(fmt_err)
        .with_context(|| format!("reading data {}", a.data.display()))?;
    if a.standardize {
        data = data.standardized();
    }
    let n = data.n();
    let kind: ModelKind = a.model.parse().map_err(fmt_err).context("parsing --model")?;
    let w0 = load_weights(a, n)?;
    let w = w0.scale_by_max_eigenvalue().map_err(fmt_err).context("scaling weights")?;

    let json = |v: &serde_json::Value| serde_json::to_string_pretty(v).expect("json value");
    match kind {
        ModelKind::Sem | ModelKind::Slm => {
            let full = full_eigenbasis(&w).map_err(fmt_err).context("eigendecomposition")?;
            let f = fit_fullrank_with(kind, &data, &w, &full).map_err(fmt_err).context("estimation")?;
            let moran = moran_z(&f.residuals, &w0).ok();
            let coefs: Vec<_> = (0..data.k())
                .map(|i| serde_json::json!({"name": data.names[i], "estimate": f.beta[i], "se": f.se_beta[i]}))
                .collect();
            let report = serde_json::json!({
                "kind": kind, "n": n, "coefficients": coefs, "dependence": f.theta,
                "sigma2": f.sigma2, "loglik": f.loglik, "moran_z": moran,
            });
            write(out, "fit.json", &json(&report))?;
            let (de, ie) = effects_fullrank(kind, &f.beta, f.theta, data.k(), &w).map_err(fmt_err).context("effects")?;
            let est = EffectsEstimate {
                names: data.names[1..].to_vec(),
                de,
                ie,
                ci_de: None,
                ci_ie: None,
                level: None,
            };
            write(out, "effects.csv", &est.to_csv().map_err(fmt_err)?)?;
        }
        ModelKind::Lm => {
            let f = fit_ols(&data).map_err(fmt_err).context("estimation")?;
            let r = &data.y - &data.x * &f.beta;
            let mut report = f.report();
            report.moran_z = moran_z(&r, &w0).ok();
            write(out, "fit.json", &serde_json::to_string_pretty(&report)?)?;
            let est = effects(&f, None).map_err(fmt_err)?;
            write(out, "effects.csv", &est.to_csv().map_err(fmt_err)?)?;
        }
        _ if kind.is_low_rank() => fit_low_rank(a, kind, &data, &w0, &w, out)?,
        other => bail!("model {other} has no estimator"),
    }
    Ok(())
}

fn fit_low_rank(a: &FitArgs, kind: ModelKind, data: &DesignData, w0: &SpatialWeights, w: &SpatialWeights, out: &Path) -> Result<()> {
    let basis = choose_basis(a, w, data.n()).context("eigendecomposition")?;
    let opts = FitOptions {
        intercept: if a.alt_intercept { InterceptForm::Transformed } else { InterceptForm::Outside },
        ..FitOptions::default()
    };
    let f = fit(kind, data, &basis, w, &opts).map_err(fmt_err).context("estimation")?;
    let cache = precompute_with(data, &basis, w, kind, opts.intercept).map_err(fmt_err)?;
    let mut est = effects(&f, Some(&cache)).map_err(fmt_err).context("effects")?;
    let res = residuals(&f, data, &basis, w).map_err(fmt_err)?;
    let mut report = f.report();
    report.moran_z = moran_z(&res, w0).ok();
    write(out, "fit.json", &serde_json::to_string_pretty(&report)?)?;
    if a.bootstrap > 0 {
        let bo = BootstrapOptions {
            m: a.bootstrap,
            seed: a.seed,
            level: a.level,
            ..Default::default()
        };
        let b = bootstrap(&f, data, &basis, w, &bo).map_err(fmt_err).context("bootstrap")?;
        b.attach(&mut est).map_err(fmt_err).context("bootstrap")?;
        let rows = summary_rows(&f, &est, &b).map_err(fmt_err)?;
        write(out, "bootstrap.csv", &summary_csv(&rows).map_err(fmt_err)?)?;
    }
    write(out, "effects.csv", &est.to_csv().map_err(fmt_err)?)?;
    Ok(())
}

fn cmd_simulate(config: &Path, out: &Path) -> Result<()> {
    let scenarios = load_scenarios(config)
        .map_err(fmt_err)
        .with_context(|| format!("reading scenarios {}", config.display()))?;
    let mut reports = Vec::new();
    let mut timing = String::from("scenario,dgp_s,eigen_s,estimation_s,bootstrap_s\n");
    let mut dead = Vec::new();
    for s in &scenarios {
        let r = run_monte_carlo(s, Default::default());
        let fits_ok = r.cells.iter().flat_map(|c| &c.estimators).any(|e| e.failures < s.replications);
        if !fits_ok {
            dead.push(s.id.clone());
        }
        let t = &r.timings;
        timing.push_str(&format!("{},{:.6},{:.6},{:.6},{:.6}\n", s.id, t.dgp, t.eigen, t.estimation, t.bootstrap));
        reports.push(r);
    }
    write(out, "simulation.csv", &reports_csv(&reports).map_err(fmt_err)?)?;
    write(out, "timings.csv", &timing)?;
    if !dead.is_empty() {
        bail!("every fit failed in scenario(s): {}", dead.join(", "));
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs, out: &Path) -> Result<()> {
    let kinds = a
        .model
        .iter()
        .map(|m| m.parse::<ModelKind>().map_err(fmt_err))
        .collect::<Result<Vec<_>>>()
        .context("parsing --model")?;
    if let Some(k) = kinds.iter().find(|k| !k.is_low_rank()) {
        bail!("bench times low-rank models only, got {k}");
    }
    let opts = BenchOptions {
        kinds,
        repeats: a.repeats,
        bootstrap: a.bootstrap,
        seed: a.seed,
        ..Default::default()
    };
    let rows = run_benchmark(&a.sizes, &a.ranks, &opts);
    write(out, "bench.csv", &bench_csv(&rows).map_err(fmt_err)?)
}

fn cmd_generate(a: &GenerateArgs, out: &Path) -> Result<()> {
    let dgp = match a.dgp.to_ascii_lowercase().as_str() {
        "slm" => Dgp::Slm,
        "sem" => Dgp::Sem,
        other => bail!("unknown --dgp `{other}` (slm or sem)"),
    };
    let g = sim::generate_dgp(dgp, a.n, [1.0, 2.0, 0.5], a.dependence, a.tau2, a.seed, 0)
        .map_err(fmt_err)
        .context("generating data")?;
    write_data_csv(&out.join("data.csv"), &g.data).map_err(fmt_err)?;
    write_coords_csv(&out.join("coords.csv"), &g.coords).map_err(fmt_err)?;
    let mut edges = String::from("# i j weight (0-based)\n");
    for (i, j, v) in g.w0.matrix.iter() {
        if i < j {
            edges.push_str(&format!("{i} {j} {v}\n"));
        }
    }
    write(out, "weights.txt", &edges)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        configure_threads(t);
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, &cli.out),
        Command::Simulate { config } => cmd_simulate(config, &cli.out),
        Command::Bench(a) => cmd_bench(a, &cli.out),
        Command::Generate(a) => cmd_generate(a, &cli.out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
