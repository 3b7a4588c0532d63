//! Scenario files.
//!
//! A scenario file is TOML with one `[[scenario]]` table per scenario:
//!
//! ```toml
//! [[scenario]]
//! id = "lag-desk"
//! dgp = "slm"                     # or "sem"
//! n = 500
//! beta = [1.0, 2.0, 0.5]          # optional, this is the default
//! dependence = [0.2, 0.4, 0.6, 0.8]
//! tau2 = [0.0, 2.0, 4.0]
//! replications = 200
//! seed = 7
//! estimators = ["LM", "LSLM_200", "SLM"]
//! bootstrap = 0                   # optional bootstrap replicates per fit
//! level = 0.95                    # optional interval level
//! eigen_ranking = "algebraic"     # optional, or "magnitude"
//! ```
//!
//! `dependence` and `tau2` take a number or an array; the scenario is run
//! on their cross product. An estimator is a kind name, optionally with
//! `_L` for the rank of low-rank kinds (default min(200, n/2)).

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eigen::EigenRanking;
use crate::model::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dgp {
    /// y = β₀1 + (I − ρW)^{-1}(β₁x₁ + β₂x₂ + ε) + u
    Slm,
    /// y = β₀1 + β₁x₁ + β₂x₂ + (I − φW)^{-1}ε + u
    Sem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Estimator {
    pub kind: ModelKind,
    /// Rank for low-rank kinds.
    pub rank: Option<usize>,
}

impl Estimator {
    pub fn label(&self) -> String {
        match self.rank {
            Some(l) => format!("{}_{l}", self.kind),
            None => self.kind.to_string(),
        }
    }

    pub fn parse(s: &str, n: usize) -> std::result::Result<Self, String> {
        let (name, rank) = match s.split_once('_') {
            Some((a, b)) => (a, Some(b.parse::<usize>().map_err(|_| format!("bad rank in {s:?}"))?)),
            None => (s, None),
        };
        let kind: ModelKind = name.parse().map_err(|_| format!("unknown estimator {s:?}"))?;
        match kind {
            ModelKind::Lm | ModelKind::Slm | ModelKind::Sem => {
                if rank.is_some() {
                    return Err(format!("{kind} takes no rank"));
                }
                Ok(Estimator { kind, rank: None })
            }
            k if k.is_low_rank() => {
                let l = rank.unwrap_or_else(|| default_rank(n));
                if l == 0 || l > n {
                    return Err(format!("rank {l} outside 1..={n}"));
                }
                Ok(Estimator { kind, rank: Some(l) })
            }
            k => Err(format!("{k} is not available in simulations")),
        }
    }
}

/// min(200, n/2)
pub fn default_rank(n: usize) -> usize {
    200.min(n / 2).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub dgp: Dgp,
    pub n: usize,
    pub beta: [f64; 3],
    pub dependence: Vec<f64>,
    pub tau2: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub bootstrap: usize,
    pub level: f64,
    pub eigen_ranking: EigenRanking,
}

impl Scenario {
    pub fn max_rank(&self) -> usize {
        self.estimators.iter().filter_map(|e| e.rank).max().unwrap_or(0)
    }

    pub fn needs_full_spectrum(&self) -> bool {
        self.estimators.iter().any(|e| matches!(e.kind, ModelKind::Slm | ModelKind::Sem))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    id: String,
    dgp: Dgp,
    n: usize,
    beta: Option<[f64; 3]>,
    dependence: OneOrMany,
    tau2: OneOrMany,
    replications: usize,
    seed: u64,
    estimators: Vec<String>,
    bootstrap: Option<usize>,
    level: Option<f64>,
    eigen_ranking: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    scenario: Vec<RawScenario>,
}

fn bad(id: &str, field: &str, message: impl Into<String>) -> Error {
    Error::Scenario {
        scenario: id.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn validate(raw: RawScenario) -> Result<Scenario> {
    let id = raw.id.clone();
    if raw.n < 4 {
        return Err(bad(&id, "n", "need at least 4 units"));
    }
    if raw.n > 20_000 {
        return Err(bad(&id, "n", "data generation is limited to n <= 20000"));
    }
    if raw.replications == 0 {
        return Err(bad(&id, "replications", "must be at least 1"));
    }
    let dependence = raw.dependence.into_vec();
    if dependence.is_empty() || dependence.iter().any(|d| !(d.abs() < 1.0)) {
        return Err(bad(&id, "dependence", "values must lie in (-1, 1)"));
    }
    let tau2 = raw.tau2.into_vec();
    if tau2.is_empty() || tau2.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(bad(&id, "tau2", "values must be finite and >= 0"));
    }
    if raw.estimators.is_empty() {
        return Err(bad(&id, "estimators", "list is empty"));
    }
    let estimators = raw
        .estimators
        .iter()
        .map(|s| Estimator::parse(s, raw.n))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|m| bad(&id, "estimators", m))?;
    let level = raw.level.unwrap_or(0.95);
    if !(level > 0.0 && level < 1.0) {
        return Err(bad(&id, "level", "must lie in (0, 1)"));
    }
    if raw.bootstrap == Some(1) {
        return Err(bad(&id, "bootstrap", "use 0 or at least 2 replicates"));
    }
    let eigen_ranking = match raw.eigen_ranking.as_deref() {
        None | Some("algebraic") => EigenRanking::Algebraic,
        Some("magnitude") => EigenRanking::Magnitude,
        Some(o) => return Err(bad(&id, "eigen_ranking", format!("unknown ranking `{o}`"))),
    };
    Ok(Scenario {
        id,
        dgp: raw.dgp,
        n: raw.n,
        beta: raw.beta.unwrap_or([1.0, 2.0, 0.5]),
        dependence,
        tau2,
        replications: raw.replications,
        seed: raw.seed,
        estimators,
        bootstrap: raw.bootstrap.unwrap_or(0),
        level,
        eigen_ranking,
    })
}

pub fn parse_scenarios(text: &str) -> Result<Vec<Scenario>> {
    let raw: RawFile = toml::from_str(text).map_err(|e| bad("<file>", "", e.to_string()))?;
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for r in raw.scenario {
        if !seen.insert(r.id.clone()) {
            return Err(bad(&r.id, "id", "duplicate scenario id"));
        }
        out.push(validate(r)?);
    }
    Ok(out)
}

pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenarios(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
[[scenario]]
id = "a"
dgp = "slm"
n = 100
dependence = [0.2, 0.6]
tau2 = 0
replications = 3
seed = 1
estimators = ["LM", "LSLM_40", "LSLM", "SLM"]
"#;

    #[test]
    fn parses_grid_and_defaults() {
        let s = &parse_scenarios(GOOD).unwrap()[0];
        assert_eq!(s.dependence, vec![0.2, 0.6]);
        assert_eq!(s.tau2, vec![0.0]);
        assert_eq!(s.beta, [1.0, 2.0, 0.5]);
        assert_eq!(s.estimators[1].rank, Some(40));
        assert_eq!(s.estimators[2].rank, Some(50));
        assert_eq!(s.estimators[2].label(), "LSLM_50");
        assert_eq!(s.max_rank(), 50);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let e = parse_scenarios(&GOOD.replace("replications = 3", "replications = 0")).unwrap_err();
        assert!(matches!(e, Error::Scenario { ref field, .. } if field == "replications"), "{e}");
        let e = parse_scenarios(&GOOD.replace("\"SLM\"]", "\"SDM\"]")).unwrap_err();
        assert!(matches!(e, Error::Scenario { ref field, .. } if field == "estimators"));
        let e = parse_scenarios(&GOOD.replace("tau2 = 0", "tau2 = -1")).unwrap_err();
        assert!(matches!(e, Error::Scenario { ref field, .. } if field == "tau2"));
        let e = parse_scenarios(&GOOD.replace("seed = 1", "seed = 1\ncolour = 2")).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
    }
}
