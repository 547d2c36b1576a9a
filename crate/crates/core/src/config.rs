//! Run configuration: a JSON document naming the process, the discount and the tolerances.
//!
//! ```json
//! {
//!   "process": {
//!     "kind": "brownian",
//!     "grid": { "min": -3, "max": 3, "step": "1/10" },
//!     "truncation_radius": 4,
//!     "observable": "clamp-linear [0,1]"
//!   },
//!   "discount": 0.9,
//!   "time_step": "1/4",
//!   "functional": "F"
//! }
//! ```
//!
//! Rationals (`dt`, `time_step`, grid bounds) may be JSON numbers or strings
//! such as `"1/10"`. Observables are a list of values in `[0,1]` or one of
//! `"clamp-linear [lo,hi]"` (default `[0,1]`) and `"indicator-interval [a,b]"`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::discretize::{build_time_grid, check_discount, TimeGrid};
use crate::error::{Error, Result};
use crate::logic::{Budget, Logic};
use crate::metrics::{Functional, PathMode};
use crate::process::{Observable, ProcessKind, ProcessModel, StateSpace};
use crate::rational::{display, serde_rational, Rational};

/// Uniform one-dimensional grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(with = "serde_rational")]
    pub min: Rational,
    #[serde(with = "serde_rational")]
    pub max: Rational,
    #[serde(with = "serde_rational")]
    pub step: Rational,
}

/// Observable values, given explicitly or by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservableSpec {
    Values(Vec<f64>),
    Named(String),
}

impl ObservableSpec {
    pub fn build(&self, space: &StateSpace) -> Result<Observable> {
        match self {
            ObservableSpec::Values(v) => Observable::new(v.clone()),
            ObservableSpec::Named(text) => {
                let text = text.trim();
                let (name, args) = match text.find('[') {
                    Some(k) => (text[..k].trim(), Some(bracket_pair(&text[k..])?)),
                    None => (text, None),
                };
                match name {
                    "clamp-linear" => {
                        let (lo, hi) = args.unwrap_or((0.0, 1.0));
                        Observable::clamp_linear(space, lo, hi)
                    }
                    "indicator-interval" => {
                        let (a, b) = args.ok_or_else(|| {
                            Error::InvalidConfig("indicator-interval needs bounds, as in \"indicator-interval [a,b]\"".into())
                        })?;
                        Observable::indicator_interval(space, a, b)
                    }
                    other => Err(Error::InvalidConfig(format!(
                        "unknown observable {other:?} (expected clamp-linear or indicator-interval)"
                    ))),
                }
            }
        }
    }
}

fn bracket_pair(text: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidConfig(format!("expected \"[a,b]\", found {text:?}"));
    let inner = text.trim().strip_prefix('[').and_then(|s| s.strip_suffix(']')).ok_or_else(bad)?;
    let (a, b) = inner.split_once(',').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(bad());
    }
    Ok((a, b))
}

/// Process definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProcessSpec {
    FiniteChain {
        matrix: Vec<Vec<f64>>,
        #[serde(with = "serde_rational", default = "one")]
        dt: Rational,
        observable: ObservableSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<String>>,
    },
    Brownian {
        grid: GridSpec,
        truncation_radius: f64,
        observable: ObservableSpec,
    },
    OrnsteinUhlenbeck {
        grid: GridSpec,
        theta: f64,
        sigma: f64,
        truncation_radius: f64,
        observable: ObservableSpec,
    },
}

fn one() -> Rational {
    Rational::from_integer(1)
}

impl ProcessSpec {
    pub fn build(&self) -> Result<ProcessModel> {
        match self {
            ProcessSpec::FiniteChain { matrix, dt, observable, labels } => {
                let n = matrix.len();
                let mut space = StateSpace::finite(n)?;
                if let Some(labels) = labels {
                    space = StateSpace::new(space.points().to_vec(), labels.clone(), crate::process::BaseMetric::Discrete)?;
                }
                let obs = observable.build(&space)?;
                ProcessModel::new(space, obs, ProcessKind::FiniteChain { matrix: matrix.clone(), dt: *dt })
            }
            ProcessSpec::Brownian { grid, truncation_radius, observable } => {
                let space = StateSpace::uniform_grid(grid.min, grid.max, grid.step)?;
                let obs = observable.build(&space)?;
                ProcessModel::new(space, obs, ProcessKind::Brownian { truncation_radius: *truncation_radius })
            }
            ProcessSpec::OrnsteinUhlenbeck { grid, theta, sigma, truncation_radius, observable } => {
                let space = StateSpace::uniform_grid(grid.min, grid.max, grid.step)?;
                let obs = observable.build(&space)?;
                let kind = ProcessKind::OrnsteinUhlenbeck { theta: *theta, sigma: *sigma, truncation_radius: *truncation_radius };
                ProcessModel::new(space, obs, kind)
            }
        }
    }

    fn chain_step(&self) -> Option<Rational> {
        match self {
            ProcessSpec::FiniteChain { dt, .. } => Some(*dt),
            _ => None,
        }
    }
}

/// Which fixpoints a run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FunctionalSelection {
    #[default]
    F,
    G,
    #[serde(alias = "BOTH", alias = "Both")]
    #[serde(rename = "both")]
    Both,
}

impl FunctionalSelection {
    pub fn functionals(self) -> Vec<Functional> {
        match self {
            FunctionalSelection::F => vec![Functional::F],
            FunctionalSelection::G => vec![Functional::G],
            FunctionalSelection::Both => vec![Functional::F, Functional::G],
        }
    }
}

impl FromStr for FunctionalSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" | "f" => Ok(Self::F),
            "G" | "g" => Ok(Self::G),
            "both" | "BOTH" | "Both" => Ok(Self::Both),
            _ => Err(Error::InvalidConfig(format!("unknown functional {s:?} (expected F, G or both)"))),
        }
    }
}

/// Parses `exact` or `mc:<samples>`; sampling needs a seed.
pub fn parse_path_mode(text: &str, seed: Option<u64>) -> Result<PathMode> {
    match text.trim() {
        "exact" => Ok(PathMode::Exact),
        other => {
            let n = other
                .strip_prefix("mc:")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|n| *n >= 1)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown path mode {text:?} (expected exact or mc:<n>)")))?;
            let seed = seed.ok_or_else(|| Error::InvalidConfig("Monte Carlo path mode requires a seed".into()))?;
            Ok(PathMode::MonteCarlo { samples: n, seed })
        }
    }
}

/// Formula search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogicConfig {
    pub logics: Vec<Logic>,
    pub max_depth: usize,
    pub max_formulas: usize,
    pub rational_denominator_cap: i64,
    pub mutations: usize,
}

impl Default for LogicConfig {
    fn default() -> Self {
        let b = Budget::default();
        Self {
            logics: vec![Logic::Lambda],
            max_depth: b.max_depth,
            max_formulas: b.max_formulas,
            rational_denominator_cap: b.rational_denominator_cap,
            mutations: b.mutations,
        }
    }
}

impl LogicConfig {
    pub fn budget(&self, seed: u64) -> Budget {
        Budget {
            max_depth: self.max_depth,
            max_formulas: self.max_formulas,
            rational_denominator_cap: self.rational_denominator_cap,
            mutations: self.mutations,
            seed,
        }
    }
}

fn default_epsilon_time() -> f64 {
    1e-3
}

fn default_epsilon_grid() -> f64 {
    1e-2
}

fn default_epsilon_fixpoint() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    100
}

fn default_path_mode() -> String {
    "exact".into()
}

mod opt_rational {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::rational::Rational;

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "crate::rational::serde_rational")] Rational);

    pub fn serialize<S: Serializer>(r: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
        r.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Rational>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

/// The whole configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub process: ProcessSpec,
    pub discount: f64,
    #[serde(default = "default_epsilon_time")]
    pub epsilon_time: f64,
    /// Time-grid step; defaults to the chain step for finite chains.
    #[serde(default, with = "opt_rational", skip_serializing_if = "Option::is_none")]
    pub time_step: Option<Rational>,
    /// Threshold on the reported step-halving sensitivity.
    #[serde(default = "default_epsilon_grid")]
    pub epsilon_grid: f64,
    #[serde(default = "default_epsilon_fixpoint")]
    pub epsilon_fixpoint: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub functional: FunctionalSelection,
    #[serde(default = "default_path_mode")]
    pub path_mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub logic: LogicConfig,
    /// Discounts for the sweep command.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<f64>,
    /// Also solve on the halved time step and report the change.
    #[serde(default)]
    pub step_sensitivity: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// A configuration with every field checked and the model built.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub model: ProcessModel,
    pub grid: TimeGrid,
    pub mode: PathMode,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn time_step(&self) -> Result<Rational> {
        self.time_step.or_else(|| self.process.chain_step()).ok_or_else(|| {
            Error::InvalidConfig("time_step is required for diffusion processes".into())
        })
    }

    /// Validates every field and builds the model and time grid.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        check_discount(self.discount)?;
        for (name, v) in [
            ("epsilon_time", self.epsilon_time),
            ("epsilon_grid", self.epsilon_grid),
            ("epsilon_fixpoint", self.epsilon_fixpoint),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidTolerance(format!("{name} = {v} must be positive")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        for &c in &self.sweep {
            check_discount(c)?;
        }
        let model = self.process.build()?;
        let step = self.time_step()?;
        if let Some(dt) = self.process.chain_step() {
            if !(step / dt).is_integer() {
                return Err(Error::InvalidConfig(format!(
                    "time_step {} is not a multiple of the chain step {}",
                    display(&step),
                    display(&dt)
                )));
            }
        }
        let grid = build_time_grid(self.discount, self.epsilon_time, step)?;
        let mode = parse_path_mode(&self.path_mode, self.seed)?;
        self.logic.budget(0).validate()?;
        if self.logic.logics.is_empty() {
            return Err(Error::InvalidConfig("logic.logics must name at least one logic".into()));
        }
        Ok(ResolvedRun { config: self.clone(), model, grid, mode, seed: self.seed.unwrap_or(0) })
    }
}

impl ResolvedRun {
    /// Time grid for another discount with the same step and horizon tolerance.
    pub fn grid_for(&self, c: f64) -> Result<TimeGrid> {
        build_time_grid(c, self.config.epsilon_time, self.config.time_step()?)
    }

    pub fn budget(&self) -> Budget {
        self.config.logic.budget(self.seed)
    }

    pub fn labels(&self) -> &[String] {
        self.model.space().labels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"{
        "process": { "kind": "finite-chain", "matrix": [[1,0],[0,1]], "dt": 1, "observable": [0,1] },
        "discount": 0.5
    }"#;

    #[test]
    fn parses_minimal_chain() {
        let cfg = RunConfig::from_json(CHAIN).unwrap();
        let run = cfg.resolve().unwrap();
        assert_eq!(run.model.num_states(), 2);
        assert_eq!(run.mode, PathMode::Exact);
        assert_eq!(cfg.epsilon_fixpoint, 1e-6);
        assert_eq!(cfg.max_iter, 100);
        assert_eq!(cfg.functional, FunctionalSelection::F);
    }

    #[test]
    fn rejects_undiscounted() {
        let cfg = RunConfig::from_json(&CHAIN.replace("0.5", "1")).unwrap();
        assert!(matches!(cfg.resolve(), Err(Error::InvalidDiscount(_))));
    }

    #[test]
    fn rejects_dishonest_chain() {
        let cfg = RunConfig::from_json(&CHAIN.replace("[[1,0],[0,1]]", "[[0.9,0],[0,1]]")).unwrap();
        assert!(matches!(cfg.resolve(), Err(Error::Honesty(_))));
    }

    #[test]
    fn monte_carlo_needs_seed() {
        let text = CHAIN.replace("\"discount\"", "\"path_mode\": \"mc:100\", \"discount\"");
        let cfg = RunConfig::from_json(&text).unwrap();
        assert!(matches!(cfg.resolve(), Err(Error::InvalidConfig(_))));
        let mut cfg = cfg;
        cfg.seed = Some(3);
        assert_eq!(cfg.resolve().unwrap().mode, PathMode::MonteCarlo { samples: 100, seed: 3 });
    }

    #[test]
    fn unknown_fields_are_errors() {
        let text = CHAIN.replace("\"discount\"", "\"discout\": 1, \"discount\"");
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn named_observables() {
        let text = r#"{
            "process": { "kind": "brownian", "grid": {"min": -1, "max": 1, "step": "1/2"},
                         "truncation_radius": 4, "observable": "clamp-linear" },
            "discount": 0.9, "time_step": "1/2"
        }"#;
        let run = RunConfig::from_json(text).unwrap().resolve().unwrap();
        assert_eq!(run.model.observable().values(), &[0.0, 0.0, 0.0, 0.5, 1.0]);
        let ind = ObservableSpec::Named("indicator-interval [-0.5, 0.5]".into()).build(run.model.space()).unwrap();
        assert_eq!(ind.values(), &[0.0, 1.0, 1.0, 1.0, 0.0]);
        assert!(ObservableSpec::Named("indicator-interval".into()).build(run.model.space()).is_err());
        assert!(ObservableSpec::Named("sine".into()).build(run.model.space()).is_err());
    }

    #[test]
    fn diffusion_needs_time_step() {
        let text = r#"{
            "process": { "kind": "ornstein-uhlenbeck", "grid": {"min": -1, "max": 1, "step": "1/2"},
                         "theta": 1, "sigma": 1, "truncation_radius": 4, "observable": [0,0,0,1,1] },
            "discount": 0.9
        }"#;
        assert!(matches!(RunConfig::from_json(text).unwrap().resolve(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn chain_step_must_divide_time_step() {
        let text = CHAIN.replace("\"discount\"", "\"time_step\": \"1/2\", \"discount\"");
        assert!(RunConfig::from_json(&text).unwrap().resolve().is_err());
    }

    #[test]
    fn path_mode_syntax() {
        assert_eq!(parse_path_mode("exact", None).unwrap(), PathMode::Exact);
        assert!(parse_path_mode("mc:0", Some(1)).is_err());
        assert!(parse_path_mode("mc", Some(1)).is_err());
    }
}
