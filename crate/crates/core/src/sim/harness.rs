//! Replicated Monte Carlo runs and their RMSE/bias summaries.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::bootstrap::{bootstrap, BootstrapOptions};
use crate::effects::effects;
use crate::eigen::{full_eigenbasis, top_l_eigenpairs, EigenBasis, EigenOptions, FULL_SPECTRUM_LIMIT};
use crate::error::Result;
use crate::linalg::solve_shifted;
use crate::model::{DesignData, ModelKind};
use crate::moments::precompute_with;
use crate::oracle::{fit_fullrank_with, moran_z};
use crate::output::csv_string;
use crate::par::{map_indexed, Execution};
use crate::reml::{finish, maximize, residuals, FitOptions};
use crate::sim::config::{Dgp, Estimator, Scenario};
use crate::sim::dgp::{draw_replicate, response, Draws};
use crate::weights::SpatialWeights;

/// Quantities recorded per fit.
pub const TARGETS: [&str; 10] = [
    "beta1", "se_beta1", "dependence", "DE1", "IE1", "moran_z", "DE1_lower", "DE1_upper", "IE1_lower", "IE1_upper",
];

/// Estimates of one estimator in one cell, indexed by replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRun {
    pub estimator: Estimator,
    /// target → per-replicate value (None on failure or when undefined)
    pub values: BTreeMap<&'static str, Vec<Option<f64>>>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub dependence: f64,
    pub tau2: f64,
    pub truth_de1: Vec<Option<f64>>,
    pub truth_ie1: Vec<Option<f64>>,
    pub estimators: Vec<EstimatorRun>,
}

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct Timings {
    pub dgp: f64,
    pub eigen: f64,
    pub estimation: f64,
    pub bootstrap: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub dgp: String,
    pub n: usize,
    pub dependence: f64,
    pub tau2: f64,
    pub estimator: String,
    #[serde(rename = "L")]
    pub rank: Option<usize>,
    pub target: String,
    pub rmse: Option<f64>,
    pub bias: Option<f64>,
    pub mean: Option<f64>,
    pub n_fail: usize,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub scenario: Scenario,
    pub cells: Vec<CellRun>,
    /// Summed per-replicate wall time of each phase in seconds.
    pub timings: Timings,
    /// Replicates whose data generation failed.
    pub dgp_failures: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Record {
    beta1: f64,
    se1: f64,
    dep: Option<f64>,
    de1: Option<f64>,
    ie1: Option<f64>,
    moran: Option<f64>,
    ci: Option<[f64; 4]>,
}

struct ReplicateOut {
    // [cell][estimator]
    records: Vec<Vec<Option<Record>>>,
    truths: Vec<(Option<f64>, Option<f64>)>,
    timings: Timings,
}

/// True DE₁/IE₁ of the lag process; zero spillover for the error process.
fn true_effects(dgp: Dgp, beta1: f64, rho: f64, w: &SpatialWeights, full: Option<&EigenBasis>) -> (Option<f64>, Option<f64>) {
    match dgp {
        Dgp::Sem => (Some(beta1), Some(0.0)),
        Dgp::Slm => {
            let n = w.n as f64;
            let de = full.map(|f| beta1 * f.lambdas.iter().map(|l| 1.0 / (1.0 - rho * l)).sum::<f64>() / n);
            let total = solve_shifted(&w.matrix, rho, &DVector::from_element(w.n, 1.0), 1e-13)
                .ok()
                .map(|s| beta1 * s.sum() / n);
            match (de, total) {
                (Some(d), Some(t)) => (Some(d), Some(t - d)),
                _ => (de, None),
            }
        }
    }
}

fn fit_one(
    est: &Estimator,
    scn: &Scenario,
    data: &DesignData,
    d: &Draws,
    full: Option<&EigenBasis>,
    basis: &EigenBasis,
    r: usize,
    t: &mut Timings,
) -> Result<Record> {
    let kind = est.kind;
    let start = Instant::now();
    let rec = match kind {
        ModelKind::Slm | ModelKind::Sem => {
            let full = full.expect("full spectrum computed for oracles");
            let f = fit_fullrank_with(kind, data, &d.w, full)?;
            let (de1, ie1) = if kind == ModelKind::Slm {
                let te = true_effects(Dgp::Slm, f.beta[1], f.theta, &d.w, Some(full));
                (te.0, te.1)
            } else {
                (Some(f.beta[1]), Some(0.0))
            };
            Record {
                beta1: f.beta[1],
                se1: f.se_beta[1],
                dep: Some(f.theta),
                de1,
                ie1,
                moran: moran_z(&f.residuals, &d.w0).ok(),
                ci: None,
            }
        }
        ModelKind::Lm => {
            let f = crate::reml::fit_ols(data)?;
            let res = residuals(&f, data, basis, &d.w)?;
            Record {
                beta1: f.beta[1],
                se1: f.se_beta[1],
                dep: None,
                de1: Some(f.beta[1]),
                ie1: Some(0.0),
                moran: moran_z(&res, &d.w0).ok(),
                ci: None,
            }
        }
        _ => {
            let l = est.rank.expect("low-rank estimator has a rank");
            let b = if l == basis.l() { basis.clone() } else { basis.select(l, scn.eigen_ranking)? };
            let opts = FitOptions {
                execution: Execution::Sequential,
                ..FitOptions::default()
            };
            let cache = precompute_with(data, &b, &d.w, kind, opts.intercept)?;
            let opt = maximize(&cache, d.w.dependence_bounds(), &opts)?;
            let f = finish(&cache, crate::model::coefficient_names(kind, data), opt);
            let eff = effects(&f, Some(&cache))?;
            let res = residuals(&f, data, &b, &d.w)?;
            let mut rec = Record {
                beta1: f.beta[1],
                se1: f.se_beta[1],
                dep: f.theta.and_then(|t| t.dependence()),
                de1: Some(eff.de[0]),
                ie1: Some(eff.ie[0]),
                moran: moran_z(&res, &d.w0).ok(),
                ci: None,
            };
            t.estimation += start.elapsed().as_secs_f64();
            if scn.bootstrap >= 2 {
                let bs = Instant::now();
                let bo = BootstrapOptions {
                    m: scn.bootstrap,
                    seed: scn.seed ^ 0x9e37_79b9_7f4a_7c15 ^ (r as u64).wrapping_mul(0x2545_f491_4f6c_dd1d),
                    level: scn.level,
                    execution: Execution::Sequential,
                    ..Default::default()
                };
                if let Ok(res) = bootstrap(&f, data, &b, &d.w, &bo) {
                    if let (Ok(cd), Ok(ci)) = (res.ci_de(), res.ci_ie()) {
                        rec.ci = Some([cd[0].0, cd[0].1, ci[0].0, ci[0].1]);
                    }
                }
                t.bootstrap += bs.elapsed().as_secs_f64();
            }
            return Ok(rec);
        }
    };
    t.estimation += start.elapsed().as_secs_f64();
    Ok(rec)
}

fn run_replicate(scn: &Scenario, r: usize) -> Option<ReplicateOut> {
    let mut t = Timings::default();
    let s = Instant::now();
    let d = draw_replicate(scn.n, scn.seed, r).ok()?;
    t.dgp += s.elapsed().as_secs_f64();

    let s = Instant::now();
    let want_full = (scn.needs_full_spectrum() || scn.dgp == Dgp::Slm) && scn.n <= FULL_SPECTRUM_LIMIT;
    let full = if want_full { full_eigenbasis(&d.w).ok() } else { None };
    let max_l = scn.max_rank().max(1);
    let basis = match &full {
        Some(f) => f.select(max_l, scn.eigen_ranking).ok()?,
        None => {
            let eo = EigenOptions {
                ranking: scn.eigen_ranking,
                ..EigenOptions::default()
            };
            top_l_eigenpairs(&d.w, max_l, &eo).ok()?
        }
    };
    t.eigen += s.elapsed().as_secs_f64();

    let mut records = Vec::new();
    let mut truths = Vec::new();
    for &dep in &scn.dependence {
        for &tau2 in &scn.tau2 {
            let s = Instant::now();
            let Ok(data) = response(&d, scn.dgp, scn.beta, dep, tau2) else {
                records.push(vec![None; scn.estimators.len()]);
                truths.push((None, None));
                continue;
            };
            t.dgp += s.elapsed().as_secs_f64();
            truths.push(true_effects(scn.dgp, scn.beta[1], dep, &d.w, full.as_ref()));
            let cell: Vec<Option<Record>> = scn
                .estimators
                .iter()
                .map(|e| fit_one(e, scn, &data, &d, full.as_ref(), &basis, r, &mut t).ok())
                .collect();
            records.push(cell);
        }
    }
    Some(ReplicateOut {
        records,
        truths,
        timings: t,
    })
}

/// Whether an estimator's dependence parameter is the one the process uses.
fn dependence_matches(dgp: Dgp, kind: ModelKind) -> bool {
    match dgp {
        Dgp::Slm => kind.has_rho(),
        Dgp::Sem => kind.has_phi() && !kind.has_rho(),
    }
}

pub fn run_monte_carlo(scn: &Scenario, exec: Execution) -> SimulationReport {
    let reps = map_indexed(exec, scn.replications, |r| run_replicate(scn, r));
    let ncells = scn.dependence.len() * scn.tau2.len();
    let mut timings = Timings::default();
    let mut dgp_failures = 0;
    let mut cells: Vec<CellRun> = (0..ncells)
        .map(|c| CellRun {
            dependence: scn.dependence[c / scn.tau2.len()],
            tau2: scn.tau2[c % scn.tau2.len()],
            truth_de1: Vec::new(),
            truth_ie1: Vec::new(),
            estimators: scn
                .estimators
                .iter()
                .map(|e| EstimatorRun {
                    estimator: *e,
                    values: TARGETS.iter().map(|t| (*t, Vec::new())).collect(),
                    failures: 0,
                })
                .collect(),
        })
        .collect();
    for rep in reps {
        let Some(rep) = rep else {
            dgp_failures += 1;
            for c in cells.iter_mut() {
                c.truth_de1.push(None);
                c.truth_ie1.push(None);
                for e in c.estimators.iter_mut() {
                    e.failures += 1;
                    e.values.values_mut().for_each(|v| v.push(None));
                }
            }
            continue;
        };
        timings.dgp += rep.timings.dgp;
        timings.eigen += rep.timings.eigen;
        timings.estimation += rep.timings.estimation;
        timings.bootstrap += rep.timings.bootstrap;
        for (c, cell) in cells.iter_mut().enumerate() {
            cell.truth_de1.push(rep.truths[c].0);
            cell.truth_ie1.push(rep.truths[c].1);
            for (j, e) in cell.estimators.iter_mut().enumerate() {
                let rec = rep.records[c][j];
                if rec.is_none() {
                    e.failures += 1;
                }
                let dep_ok = dependence_matches(scn.dgp, e.estimator.kind);
                let get = |f: fn(&Record) -> Option<f64>| rec.as_ref().and_then(f);
                let push = |e: &mut EstimatorRun, t: &'static str, v: Option<f64>| {
                    e.values.get_mut(t).expect("known target").push(v.filter(|x| x.is_finite()))
                };
                push(e, "beta1", get(|r| Some(r.beta1)));
                push(e, "se_beta1", get(|r| Some(r.se1)));
                push(e, "dependence", if dep_ok { get(|r| r.dep) } else { None });
                push(e, "DE1", get(|r| r.de1));
                push(e, "IE1", get(|r| r.ie1));
                push(e, "moran_z", get(|r| r.moran));
                push(e, "DE1_lower", get(|r| r.ci.map(|c| c[0])));
                push(e, "DE1_upper", get(|r| r.ci.map(|c| c[1])));
                push(e, "IE1_lower", get(|r| r.ci.map(|c| c[2])));
                push(e, "IE1_upper", get(|r| r.ci.map(|c| c[3])));
            }
        }
    }
    SimulationReport {
        scenario: scn.clone(),
        cells,
        timings,
        dgp_failures,
    }
}

/// RMSE and mean bias against per-replicate truths, over replicates where
/// both exist.
pub fn rmse_bias(est: &[Option<f64>], truth: &[Option<f64>]) -> Option<(f64, f64)> {
    let errs: Vec<f64> = est
        .iter()
        .zip(truth)
        .filter_map(|(e, t)| Some((*e)? - (*t)?))
        .collect();
    if errs.is_empty() {
        return None;
    }
    let m = errs.len() as f64;
    let bias = errs.iter().sum::<f64>() / m;
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / m).sqrt();
    Some((rmse, bias))
}

fn interval_coverage(e: &EstimatorRun, effect: &str, truth: &[Option<f64>]) -> Option<f64> {
    let lo = e.values.get(format!("{effect}_lower").as_str())?;
    let hi = e.values.get(format!("{effect}_upper").as_str())?;
    let hits: Vec<bool> = lo
        .iter()
        .zip(hi)
        .zip(truth)
        .filter_map(|((l, h), t)| Some((*l)? <= (*t)? && (*t)? <= (*h)?))
        .collect();
    (!hits.is_empty()).then(|| hits.iter().filter(|&&b| b).count() as f64 / hits.len() as f64)
}

pub fn mean_of(v: &[Option<f64>]) -> Option<f64> {
    let xs: Vec<f64> = v.iter().flatten().copied().collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn sd_of(v: &[Option<f64>]) -> Option<f64> {
    let xs: Vec<f64> = v.iter().flatten().copied().collect();
    if xs.len() < 2 {
        return None;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

impl CellRun {
    pub fn estimator(&self, label: &str) -> Option<&EstimatorRun> {
        self.estimators.iter().find(|e| e.estimator.label() == label)
    }
}

impl SimulationReport {
    pub fn cell(&self, dependence: f64, tau2: f64) -> Option<&CellRun> {
        self.cells.iter().find(|c| c.dependence == dependence && c.tau2 == tau2)
    }

    /// Truth of a target for each replicate, or None where undefined.
    fn truth(&self, cell: &CellRun, e: &EstimatorRun, target: &str) -> Option<Vec<Option<f64>>> {
        let reps = cell.truth_de1.len();
        let konst = |v: f64| Some(vec![Some(v); reps]);
        match target {
            "beta1" => konst(self.scenario.beta[1]),
            "se_beta1" => sd_of(&e.values["beta1"]).and_then(konst),
            "dependence" if dependence_matches(self.scenario.dgp, e.estimator.kind) => konst(cell.dependence),
            "DE1" => Some(cell.truth_de1.clone()),
            "IE1" => Some(cell.truth_ie1.clone()),
            "moran_z" => konst(0.0),
            _ => None,
        }
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let s = &self.scenario;
        let mut out = Vec::new();
        for cell in &self.cells {
            for e in &cell.estimators {
                for t in TARGETS {
                    let vals = &e.values[t];
                    if vals.iter().all(|v| v.is_none()) {
                        continue;
                    }
                    let rb = self.truth(cell, e, t).and_then(|tr| rmse_bias(vals, &tr));
                    out.push(ReportRow {
                        scenario: s.id.clone(),
                        dgp: format!("{:?}", s.dgp).to_uppercase(),
                        n: s.n,
                        dependence: cell.dependence,
                        tau2: cell.tau2,
                        estimator: e.estimator.label(),
                        rank: e.estimator.rank,
                        target: t.to_string(),
                        rmse: rb.map(|x| x.0),
                        bias: rb.map(|x| x.1),
                        mean: mean_of(vals),
                        n_fail: e.failures,
                    });
                }
                for (effect, truth) in [("DE1", &cell.truth_de1), ("IE1", &cell.truth_ie1)] {
                    let Some(cov) = interval_coverage(e, effect, truth) else { continue };
                    out.push(ReportRow {
                        scenario: s.id.clone(),
                        dgp: format!("{:?}", s.dgp).to_uppercase(),
                        n: s.n,
                        dependence: cell.dependence,
                        tau2: cell.tau2,
                        estimator: e.estimator.label(),
                        rank: e.estimator.rank,
                        target: format!("{effect}_coverage"),
                        rmse: None,
                        bias: None,
                        mean: Some(cov),
                        n_fail: e.failures,
                    });
                }
            }
        }
        out
    }

    /// Bias of a target for an estimator in a cell.
    pub fn bias(&self, dependence: f64, tau2: f64, label: &str, target: &str) -> Option<f64> {
        self.stat(dependence, tau2, label, target).map(|r| r.1)
    }

    pub fn rmse(&self, dependence: f64, tau2: f64, label: &str, target: &str) -> Option<f64> {
        self.stat(dependence, tau2, label, target).map(|r| r.0)
    }

    pub fn mean(&self, dependence: f64, tau2: f64, label: &str, target: &str) -> Option<f64> {
        let c = self.cell(dependence, tau2)?;
        mean_of(&c.estimator(label)?.values[target])
    }

    /// Share of replicates whose bootstrap interval for `effect` ("DE1" or
    /// "IE1") contains the truth.
    pub fn coverage(&self, dependence: f64, tau2: f64, label: &str, effect: &str) -> Option<f64> {
        let c = self.cell(dependence, tau2)?;
        let truth = match effect {
            "DE1" => &c.truth_de1,
            "IE1" => &c.truth_ie1,
            _ => return None,
        };
        interval_coverage(c.estimator(label)?, effect, truth)
    }

    fn stat(&self, dependence: f64, tau2: f64, label: &str, target: &str) -> Option<(f64, f64)> {
        let c = self.cell(dependence, tau2)?;
        let e = c.estimator(label)?;
        rmse_bias(&e.values[target], &self.truth(c, e, target)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        csv_string(&self.rows())
    }
}

/// Reports of several scenarios as one CSV.
pub fn reports_csv(reports: &[SimulationReport]) -> Result<String> {
    let rows: Vec<ReportRow> = reports.iter().flat_map(|r| r.rows()).collect();
    csv_string(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::parse_scenarios;

    fn small(estimators: &str, dep: &str, tau2: &str) -> Scenario {
        parse_scenarios(&format!(
            "[[scenario]]\nid = \"t\"\ndgp = \"slm\"\nn = 80\ndependence = {dep}\ntau2 = {tau2}\nreplications = 6\nseed = 5\nestimators = {estimators}\n"
        ))
        .unwrap()
        .remove(0)
    }

    #[test]
    fn deterministic_across_execution_modes() {
        let s = small(r#"["LM", "LSLM_30", "SLM"]"#, "[0.0, 0.5]", "1.0");
        let a = run_monte_carlo(&s, Execution::Parallel);
        let b = run_monte_carlo(&s, Execution::Sequential);
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    }

    #[test]
    fn rmse_dominates_bias() {
        let s = small(r#"["LM", "LSLM_30", "SLM"]"#, "0.4", "[0.0, 2.0]");
        let r = run_monte_carlo(&s, Execution::Parallel);
        let rows = r.rows();
        assert!(!rows.is_empty());
        for row in rows {
            if let (Some(rmse), Some(bias)) = (row.rmse, row.bias) {
                assert!(rmse + 1e-12 >= bias.abs(), "{row:?}");
            }
        }
    }

    #[test]
    fn null_scenario_is_unbiased() {
        let mut s = small(r#"["LM", "LSLM_30", "SLM"]"#, "0.0", "0.0");
        s.replications = 20;
        let r = run_monte_carlo(&s, Execution::Parallel);
        for label in ["LM", "LSLM_30", "SLM"] {
            // sd of the mean of 20 draws is about 0.025 at n = 80
            let b = r.bias(0.0, 0.0, label, "beta1").unwrap();
            assert!(b.abs() < 0.08, "{label} {b}");
        }
    }

    #[test]
    fn rmse_bias_basics() {
        let (rmse, bias) = rmse_bias(&[Some(1.0), Some(3.0), None], &[Some(2.0); 3]).unwrap();
        assert_eq!((rmse, bias), (1.0, 0.0));
        assert!(rmse_bias(&[None], &[Some(1.0)]).is_none());
    }
}
