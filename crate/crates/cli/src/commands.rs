//! The four subcommands. Each is a pure function of its config: it returns
//! file contents and a stdout summary, and `main` does the writing.

use std::fmt::Write as _;

use gameflow::dal::{self, AccuracyObserver, DalGame, DalSpec};
use gameflow::equilibria::{check_strict_local_ne, TOL_ANALYTIC, TOL_FINITE_DIFFERENCE};
use gameflow::integrators::{run_trajectory, run_trajectory_observed, IntegratorConfig};
use gameflow::quad::{seeded_start, QuadraticGame, QuadraticSpec};
use gameflow::stability::{discrete_stability_map, euler_exact_threshold, exact_threshold, hurwitz_check};
use gameflow::{classify_game, DMatrix, GameDefinition, JointParams, Method, TerminalStatus, Trajectory};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, GameSpec};
use crate::csvio::{self, num, opt_num, strings, Table};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Run,
    Sweep,
    Dal,
}

/// What a command produced: `(file name, contents)` pairs and a summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub files: Vec<(String, String)>,
    pub stdout: String,
}

enum Built {
    Quad(QuadraticGame),
    Dal(DalGame, DalSpec),
}

impl Built {
    fn new(spec: &GameSpec, seed: u64) -> CliResult<Self> {
        Ok(match spec {
            GameSpec::Quadratic(q) => Built::Quad(q.build()?),
            GameSpec::Dal(d) => {
                // the experiment seed drives the shared initialization
                let d = DalSpec { init_seed: seed, ..*d };
                Built::Dal(d.build()?, d)
            }
        })
    }

    fn definition(&self) -> GameDefinition {
        match self {
            Built::Quad(q) => q.definition(),
            Built::Dal(g, _) => g.definition(),
        }
    }

    fn field_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            Built::Quad(q) => Some(q.field_matrix()),
            Built::Dal(..) => None,
        }
    }

    fn start(&self, cfg: &ExperimentConfig) -> CliResult<JointParams> {
        let def = self.definition();
        let values = match (&cfg.start, self) {
            (Some(v), _) => v.clone(),
            (None, Built::Quad(q)) => seeded_start(q.definition().dim(), cfg.seed).as_slice().to_vec(),
            (None, Built::Dal(_, spec)) => spec.init().as_slice().to_vec(),
        };
        Ok(def.params(&values)?)
    }

    fn run(&self, w0: &JointParams, cfg: &IntegratorConfig, batch: Option<usize>) -> CliResult<Trajectory> {
        Ok(match self {
            Built::Quad(q) => run_trajectory(&q.definition(), w0, cfg)?,
            Built::Dal(g, _) => {
                let obs = AccuracyObserver::new(g.clone());
                match batch {
                    Some(b) => dal::run_minibatch(g, &w0.values, cfg, b, &obs)?,
                    None => run_trajectory_observed(&g.definition(), w0, cfg, &obs)?,
                }
            }
        })
    }

    /// The same game with GRL coefficient `lambda`.
    fn with_lambda(&self, lambda: f64) -> CliResult<Self> {
        Ok(match self {
            Built::Dal(_, spec) => {
                let spec = DalSpec { lambda, ..*spec };
                Built::Dal(spec.build()?, spec)
            }
            Built::Quad(q) => match q.to_spec() {
                QuadraticSpec::RiskDivergence {
                    players,
                    risk,
                    divergence,
                    alpha,
                    ..
                } if q.split().is_some() => Built::Quad(
                    QuadraticSpec::RiskDivergence {
                        players,
                        risk,
                        divergence,
                        lambda,
                        alpha,
                    }
                    .build()?,
                ),
                _ => {
                    return Err(CliError::Config(
                        "a lambda grid needs a dal or risk-divergence game".into(),
                    ))
                }
            },
        })
    }
}

fn arm_file(prefix: &str, k: usize, m: &Method) -> String {
    format!("{prefix}_{k:02}_{}.csv", m.name())
}

/// Output file names, after validating everything the command needs.
pub fn planned_files(cmd: Command, cfg: &ExperimentConfig) -> CliResult<Vec<String>> {
    let built = Built::new(&cfg.game, cfg.seed)?;
    built.start(cfg)?;
    Ok(match cmd {
        Command::Analyze => {
            if let Some(p) = &cfg.analyze.point {
                built.definition().params(p)?;
            }
            vec!["analyze.txt".into()]
        }
        Command::Run | Command::Dal => {
            let prefix = if cmd == Command::Run { "run" } else { "dal" };
            if cmd == Command::Dal && !matches!(built, Built::Dal(..)) {
                return Err(CliError::Config("the dal command needs [game] kind = \"dal\"".into()));
            }
            if cfg.arms.is_empty() {
                return Err(CliError::Config(format!("the {prefix} command needs at least one [[arms]] entry")));
            }
            let mut files: Vec<String> =
                cfg.arms.iter().enumerate().map(|(k, a)| arm_file(prefix, k, &a.method)).collect();
            files.push(format!("{prefix}_summary.csv"));
            files
        }
        Command::Sweep => {
            let s = cfg
                .sweep
                .as_ref()
                .ok_or_else(|| CliError::Config("the sweep command needs a [sweep] section".into()))?;
            s.eta_grid()?;
            s.method_grid()?;
            if let Some(ls) = &s.lambdas {
                for &l in ls {
                    built.with_lambda(l)?;
                }
            }
            vec!["sweep.csv".into()]
        }
    })
}

pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> CliResult<Output> {
    match cmd {
        Command::Analyze => analyze(cfg),
        Command::Run => run_arms(cfg, "run"),
        Command::Dal => run_arms(cfg, "dal"),
        Command::Sweep => sweep(cfg),
    }
}

fn analyze(cfg: &ExperimentConfig) -> CliResult<Output> {
    let built = Built::new(&cfg.game, cfg.seed)?;
    let def = built.definition();
    let (point, label) = match (&cfg.analyze.point, &built) {
        (Some(p), _) => (def.params(p)?, "the given point"),
        (None, Built::Quad(_)) => (JointParams::zeros(def.partition().clone()), "origin"),
        (None, Built::Dal(..)) => {
            let train = cfg
                .analyze
                .train
                .unwrap_or_else(|| IntegratorConfig::new(Method::heun(), 0.5).max_iters(300));
            let w0 = built.start(cfg)?;
            let t = built.run(&w0, &IntegratorConfig { record_every: train.max_iters.max(1), ..train }, None)?;
            if t.status == TerminalStatus::Diverged {
                return Err(CliError::Numerical("training to the analysed point diverged".into()));
            }
            (def.params(t.final_params.as_slice())?, "the trained point")
        }
    };
    let tol = match built {
        Built::Quad(_) => TOL_ANALYTIC,
        Built::Dal(..) => TOL_FINITE_DIFFERENCE,
    };
    let h = def.game_hessian(&point)?.matrix;
    let cert = check_strict_local_ne(&def, &point, tol)?;
    let spectrum = hurwitz_check(&(-&h))?;
    let spectrum = match cfg.analyze.eg_eta {
        Some(eta) => spectrum.with_eg_conditions(eta),
        None => spectrum,
    };

    let mut r = String::new();
    let _ = writeln!(r, "game: {}", cfg.game.label());
    let _ = writeln!(r, "players: {}", def.n_players());
    let sizes: Vec<String> = def.partition().sizes().iter().map(|s| s.to_string()).collect();
    let _ = writeln!(r, "block_sizes: {}", sizes.join(" "));
    let _ = writeln!(r, "class: {}", classify_game(&h, tol));
    let _ = writeln!(r, "analysed_point: {label}");
    let _ = writeln!(r, "\n[equilibrium]");
    r.push_str(&cert.to_report());
    let _ = writeln!(r, "summary: {}", cert.verdict().replace("at this point", &format!("at {label}")));
    let _ = writeln!(r, "\n[gradient-play stability: dynamics jacobian -H]");
    r.push_str(&spectrum.to_report());
    if let Some(m) = built.field_matrix() {
        let _ = writeln!(r, "\n[discrete thresholds on the linear field]");
        let exact = euler_exact_threshold(&spectrum.eigenvalues);
        let _ = writeln!(r, "euler_threshold_closed_form: {}", fmt_opt(exact));
        for method in [Method::Euler, Method::heun(), Method::Rk4, Method::ExtraGradient] {
            let t = exact_threshold(m, method)?;
            let _ = writeln!(r, "threshold_{}: {}", method.name(), fmt_opt(t));
        }
    }
    let stdout = format!(
        "{}: {}; hurwitz_stable={}; gd_eta_bound={}\n",
        cfg.game.label(),
        cert.verdict().replace("at this point", &format!("at {label}")),
        spectrum.hurwitz_stable,
        fmt_opt(spectrum.gd_eta_bound)
    );
    Ok(Output {
        files: vec![("analyze.txt".into(), r)],
        stdout,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".to_string(), |v| format!("{v:e}"))
}

fn trajectory_table(t: &Trajectory, n_players: usize) -> Table {
    let mut table = Table::new(csvio::TRAJECTORY_SCHEMA, csvio::trajectory_columns(n_players, &t.metric_names));
    for rec in &t.records {
        let mut row = vec![rec.iter.to_string(), num(rec.grad_norm)];
        row.extend(rec.costs.iter().map(|&c| num(c)));
        row.extend(rec.metrics.iter().map(|&m| num(m)));
        table.push(row);
    }
    table
}

fn run_arms(cfg: &ExperimentConfig, prefix: &str) -> CliResult<Output> {
    let built = Built::new(&cfg.game, cfg.seed)?;
    let w0 = built.start(cfg)?;
    let n = built.definition().n_players();
    let batch = cfg.dal.batch_size;
    let trajectories: Vec<Trajectory> = cfg
        .arms
        .par_iter()
        .map(|arm| built.run(&w0, arm, batch))
        .collect::<CliResult<_>>()?;

    let mut files = Vec::new();
    let mut stdout = String::new();
    let summary_cols = if prefix == "dal" {
        csvio::DAL_SUMMARY_COLUMNS
    } else {
        csvio::RUN_SUMMARY_COLUMNS
    };
    let schema = if prefix == "dal" {
        csvio::DAL_SUMMARY_SCHEMA
    } else {
        csvio::RUN_SUMMARY_SCHEMA
    };
    let mut summary = Table::new(schema, strings(&summary_cols));
    for (k, (arm, t)) in cfg.arms.iter().zip(&trajectories).enumerate() {
        files.push((arm_file(prefix, k, &arm.method), trajectory_table(t, n).render()));
        let head = vec![
            k.to_string(),
            arm.method.name().to_string(),
            arm.method.to_string(),
            num(arm.eta),
            t.status.to_string(),
            t.iterations.to_string(),
        ];
        if prefix == "dal" {
            let s = dal::target_summary(t, 0.0);
            let mut row = head;
            row.push(opt_num(s.map(|s| s.best)));
            row.push(s.map(|s| s.best_iter.to_string()).unwrap_or_default());
            let _ = writeln!(
                stdout,
                "arm {k} {} eta={}: {} after {} iters, best target_acc {} at iter {}",
                arm.method,
                arm.eta,
                t.status,
                t.iterations,
                opt_num(s.map(|s| s.best)),
                s.map(|s| s.best_iter.to_string()).unwrap_or_else(|| "-".into())
            );
            summary.push(row);
        } else {
            let mut row = head;
            row.push(t.field_evals.to_string());
            row.push(num(t.final_grad_norm()));
            let _ = writeln!(
                stdout,
                "arm {k} {} eta={}: {} after {} iters, final grad norm {}",
                arm.method,
                arm.eta,
                t.status,
                t.iterations,
                num(t.final_grad_norm())
            );
            summary.push(row);
        }
    }
    files.push((format!("{prefix}_summary.csv"), summary.render()));
    Ok(Output { files, stdout })
}

fn sweep(cfg: &ExperimentConfig) -> CliResult<Output> {
    let s = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("the sweep command needs a [sweep] section".into()))?;
    let etas = s.eta_grid()?;
    let methods = s.method_grid()?;
    let base = Built::new(&cfg.game, cfg.seed)?;
    let w0 = base.start(cfg)?;
    let games: Vec<(Option<f64>, Built)> = match &s.lambdas {
        Some(ls) => ls.iter().map(|&l| Ok((Some(l), base.with_lambda(l)?))).collect::<CliResult<_>>()?,
        None => vec![(None, base)],
    };
    let mut jobs = Vec::new();
    for (gi, _) in games.iter().enumerate() {
        for &m in &methods {
            for &eta in &etas {
                jobs.push((gi, m, eta));
            }
        }
    }
    let rows: Vec<Vec<String>> = jobs
        .par_iter()
        .map(|&(gi, method, eta)| -> CliResult<Vec<String>> {
            let (lambda, game) = &games[gi];
            let arm = IntegratorConfig {
                method,
                eta,
                max_iters: s.max_iters,
                stop_grad_norm: s.stop_grad_norm,
                divergence_threshold: s.divergence_threshold,
                seed: cfg.seed,
                record_every: s.max_iters.max(1),
            };
            let t = game.run(&w0, &arm, cfg.dal.batch_size)?;
            let radius = match (game.field_matrix(), method) {
                (Some(_), Method::Adam { .. }) | (None, _) => None,
                (Some(m), _) => Some(discrete_stability_map(m, method, eta)?.spectral_radius),
            };
            Ok(vec![
                method.name().to_string(),
                method.to_string(),
                opt_num(*lambda),
                num(eta),
                t.status.to_string(),
                if t.status == TerminalStatus::Converged {
                    t.iterations.to_string()
                } else {
                    String::new()
                },
                num(t.final_grad_norm()),
                opt_num(radius),
            ])
        })
        .collect::<CliResult<_>>()?;
    let mut table = Table::new(csvio::SWEEP_SCHEMA, strings(&csvio::SWEEP_COLUMNS));
    let mut converged = 0;
    for row in rows {
        converged += usize::from(row[4] == TerminalStatus::Converged.to_string());
        table.push(row);
    }
    let stdout = format!("sweep: {} runs, {} converged\n", table.rows.len(), converged);
    Ok(Output {
        files: vec![("sweep.csv".into(), table.render())],
        stdout,
    })
}
