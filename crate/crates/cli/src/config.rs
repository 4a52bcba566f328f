//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 0
//! record_every = 10
//! start = [1.0, 0.5, -0.25]   # optional; default seeded normal / network init
//!
//! [game]
//! kind = "named"              # named | forms | field | risk-divergence | dal
//! name = "example2"
//!
//! [[arms]]
//! method = "euler"
//! eta = 5e-4
//! max_iters = 200000
//! stop_grad_norm = 1e-8
//!
//! [sweep]
//! methods = [{ method = "euler" }, { method = "rk2" }]
//! eta_min = 1e-4
//! eta_max = 1e-2
//! points = 21
//! ```

use std::path::Path;

use gameflow::dal::DalSpec;
use gameflow::integrators::{IntegratorConfig, DIVERGENCE_THRESHOLD};
use gameflow::quad::QuadraticSpec;
use gameflow::Method;
use serde::Deserialize;

use crate::{CliError, CliResult};

/// Which game an experiment plays.
#[derive(Debug, Clone, PartialEq)]
pub enum GameSpec {
    Quadratic(QuadraticSpec),
    Dal(DalSpec),
}

impl GameSpec {
    fn from_table(mut t: toml::Table) -> CliResult<Self> {
        let kind = t
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| CliError::Config("[game] needs a string `kind`".into()))?
            .to_string();
        if kind == "dal" {
            t.remove("kind");
            let spec: DalSpec = toml::Value::Table(t)
                .try_into()
                .map_err(|e| CliError::Config(format!("[game] dal: {e}")))?;
            Ok(GameSpec::Dal(spec))
        } else {
            let spec: QuadraticSpec = toml::Value::Table(t)
                .try_into()
                .map_err(|e| CliError::Config(format!("[game]: {e}")))?;
            Ok(GameSpec::Quadratic(spec))
        }
    }

    pub fn label(&self) -> String {
        match self {
            GameSpec::Quadratic(QuadraticSpec::Named { name }) => name.clone(),
            GameSpec::Quadratic(QuadraticSpec::Forms { .. }) => "quadratic (forms)".into(),
            GameSpec::Quadratic(QuadraticSpec::Field { .. }) => "quadratic (field)".into(),
            GameSpec::Quadratic(QuadraticSpec::RiskDivergence { .. }) => "quadratic (risk-divergence)".into(),
            GameSpec::Dal(_) => "dal-toy".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    #[serde(default)]
    pub etas: Option<Vec<f64>>,
    #[serde(default)]
    pub eta_min: Option<f64>,
    #[serde(default)]
    pub eta_max: Option<f64>,
    #[serde(default)]
    pub points: Option<usize>,
    /// Replaces `rk_alpha` of every RK2 entry, one row set per value.
    #[serde(default)]
    pub rk_alphas: Option<Vec<f64>>,
    /// Replaces `gamma` of every consensus entry.
    #[serde(default)]
    pub gammas: Option<Vec<f64>>,
    /// GRL coefficient grid (DAL and risk-divergence games only).
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default = "default_sweep_iters")]
    pub max_iters: usize,
    #[serde(default = "default_stop")]
    pub stop_grad_norm: f64,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
}

fn default_sweep_iters() -> usize {
    10_000
}
fn default_stop() -> f64 {
    1e-8
}
fn default_divergence() -> f64 {
    DIVERGENCE_THRESHOLD
}
fn default_record_every() -> usize {
    1
}

impl SweepConfig {
    /// Explicit `etas`, or `points` log-spaced values in `[eta_min, eta_max]`.
    pub fn eta_grid(&self) -> CliResult<Vec<f64>> {
        let grid = match (&self.etas, self.eta_min, self.eta_max, self.points) {
            (Some(e), None, None, None) => e.clone(),
            (None, Some(lo), Some(hi), Some(n)) => {
                if !(lo > 0.0 && hi >= lo) || n == 0 {
                    return Err(CliError::Config(format!(
                        "sweep needs 0 < eta_min <= eta_max and points >= 1, got {lo}, {hi}, {n}"
                    )));
                }
                if n == 1 {
                    vec![lo]
                } else {
                    let (a, b) = (lo.ln(), hi.ln());
                    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
                }
            }
            _ => {
                return Err(CliError::Config(
                    "sweep needs either `etas` or all of `eta_min`, `eta_max`, `points`".into(),
                ))
            }
        };
        if grid.is_empty() {
            return Err(CliError::Config("sweep eta grid is empty".into()));
        }
        if let Some(bad) = grid.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(CliError::Config(format!("sweep eta {bad} must be > 0")));
        }
        Ok(grid)
    }

    /// Method list with the optional `rk_alpha` and `gamma` grids applied.
    pub fn method_grid(&self) -> CliResult<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(CliError::Config("sweep needs at least one method".into()));
        }
        let mut out = Vec::new();
        for &m in &self.methods {
            match (m, &self.rk_alphas, &self.gammas) {
                (Method::Rk2 { .. }, Some(alphas), _) => {
                    out.extend(alphas.iter().map(|&rk_alpha| Method::Rk2 { rk_alpha }))
                }
                (Method::Consensus { .. }, _, Some(gammas)) => {
                    out.extend(gammas.iter().map(|&gamma| Method::Consensus { gamma }))
                }
                _ => out.push(m),
            }
        }
        for m in &out {
            m.validate()?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Point to certify; origin (quadratics) or the trained point (DAL) if absent.
    #[serde(default)]
    pub point: Option<Vec<f64>>,
    /// Step size for the advisory extra-gradient condition.
    #[serde(default)]
    pub eg_eta: Option<f64>,
    /// DAL only: how to train from the initialization to the analysed point.
    #[serde(default)]
    pub train: Option<IntegratorConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DalRunConfig {
    /// Mini-batch size per domain; full batch when absent.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_record_every")]
    record_every: usize,
    #[serde(default)]
    game: Option<toml::Table>,
    #[serde(default)]
    start: Option<Vec<f64>>,
    #[serde(default)]
    arms: Vec<IntegratorConfig>,
    #[serde(default)]
    sweep: Option<SweepConfig>,
    #[serde(default)]
    analyze: AnalyzeConfig,
    #[serde(default)]
    dal: DalRunConfig,
}

/// A parsed experiment. Every arm shares `seed` and the starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub record_every: usize,
    pub game: GameSpec,
    pub start: Option<Vec<f64>>,
    pub arms: Vec<IntegratorConfig>,
    pub sweep: Option<SweepConfig>,
    pub analyze: AnalyzeConfig,
    pub dal: DalRunConfig,
}

impl ExperimentConfig {
    /// Parse config text; `game_override` replaces (or supplies) `[game]`
    /// with a named example.
    pub fn parse(text: &str, game_override: Option<&str>) -> CliResult<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let game = match (game_override, raw.game) {
            (Some(name), _) => GameSpec::Quadratic(QuadraticSpec::Named { name: name.to_string() }),
            (None, Some(t)) => GameSpec::from_table(t)?,
            (None, None) => return Err(CliError::Config("no [game] section and no --game".into())),
        };
        if raw.record_every == 0 {
            return Err(CliError::Config("record_every must be >= 1".into()));
        }
        let mut arms = raw.arms;
        for arm in &mut arms {
            arm.seed = raw.seed;
            arm.record_every = raw.record_every;
            arm.validate()?;
        }
        Ok(Self {
            seed: raw.seed,
            record_every: raw.record_every,
            game,
            start: raw.start,
            arms,
            sweep: raw.sweep,
            analyze: raw.analyze,
            dal: raw.dal,
        })
    }

    pub fn load(path: Option<&Path>, game_override: Option<&str>) -> CliResult<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None if game_override.is_some() => String::new(),
            None => return Err(CliError::Config("need --config PATH or --game NAME".into())),
        };
        Self::parse(&text, game_override)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        for arm in &mut self.arms {
            arm.seed = seed;
        }
        self
    }
}
