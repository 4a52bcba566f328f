//! Discrete stepping rules for gradient-play dynamics `w' = -v(w)` and the
//! trajectory runner.
//!
//! Every rule is written against [`VectorField`], so the same code steps a
//! quadratic game, a neural domain-adversarial game or a bare linear field.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{half_sq_norm_gradient, GameDefinition, JointParams};

/// Default divergence threshold on `||w||_inf`.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, w: &DVector<f64>) -> Result<DVector<f64>>;

    /// `grad v(w)^T v(w)`. Defaults to central differences of `1/2 ||v||^2`.
    fn jacobian_transpose_field(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        half_sq_norm_gradient(|x| self.eval(x), w)
    }
}

impl VectorField for GameDefinition {
    fn dim(&self) -> usize {
        GameDefinition::dim(self)
    }
    fn eval(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.field(w)
    }
    fn jacobian_transpose_field(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        GameDefinition::jacobian_transpose_field(self, w)
    }
}

/// `v(w) = M w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub matrix: DMatrix<f64>,
}

impl LinearField {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    /// The scalar field `v(w) = c w`.
    pub fn scalar(c: f64) -> Self {
        Self::new(DMatrix::from_element(1, 1, c))
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn eval(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.matrix * w)
    }
    fn jacobian_transpose_field(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.matrix.transpose() * (&self.matrix * w))
    }
}

/// Counts field evaluations made through it.
pub struct CountingField<'a, F: VectorField + ?Sized> {
    inner: &'a F,
    evals: AtomicUsize,
}

impl<'a, F: VectorField + ?Sized> CountingField<'a, F> {
    pub fn new(inner: &'a F) -> Self {
        Self {
            inner,
            evals: AtomicUsize::new(0),
        }
    }
    pub fn evals(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }
}

impl<F: VectorField + ?Sized> VectorField for CountingField<'_, F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.inner.eval(w)
    }
    fn jacobian_transpose_field(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.inner.jacobian_transpose_field(w)
    }
}

fn finite(w: DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    if w.iter().all(|x| x.is_finite()) {
        Ok(w)
    } else {
        Err(GameError::NonFinite(what))
    }
}

/// `w+ = w - eta v(w)`.
pub fn step_euler<F: VectorField + ?Sized>(field: &F, w: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    let v = field.eval(w)?;
    euler_from(w, &v, eta)
}

fn euler_from(w: &DVector<f64>, v: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    finite(w - eta * v, "euler step")
}

/// Two-stage Runge-Kutta family; `rk_alpha = 1/2` is Heun's method,
/// `1` the midpoint method, `2/3` Ralston's method.
pub fn step_rk2<F: VectorField + ?Sized>(
    field: &F,
    w: &DVector<f64>,
    eta: f64,
    rk_alpha: f64,
) -> Result<DVector<f64>> {
    let v = field.eval(w)?;
    rk2_from(field, w, &v, eta, rk_alpha)
}

fn rk2_from<F: VectorField + ?Sized>(
    field: &F,
    w: &DVector<f64>,
    v: &DVector<f64>,
    eta: f64,
    rk_alpha: f64,
) -> Result<DVector<f64>> {
    let mid = w - (eta / (2.0 * rk_alpha)) * v;
    let v_mid = field.eval(&mid)?;
    finite(w - eta * ((1.0 - rk_alpha) * v + rk_alpha * v_mid), "rk2 step")
}

/// Classic fourth-order Runge-Kutta on `w' = -v(w)`.
pub fn step_rk4<F: VectorField + ?Sized>(field: &F, w: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    let v = field.eval(w)?;
    rk4_from(field, w, &v, eta)
}

fn rk4_from<F: VectorField + ?Sized>(
    field: &F,
    w: &DVector<f64>,
    v1: &DVector<f64>,
    eta: f64,
) -> Result<DVector<f64>> {
    let v2 = field.eval(&(w - (0.5 * eta) * v1))?;
    let v3 = field.eval(&(w - (0.5 * eta) * &v2))?;
    let v4 = field.eval(&(w - eta * &v3))?;
    finite(w - (eta / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4), "rk4 step")
}

/// Extra-gradient: extrapolate, then step with the look-ahead field.
pub fn step_extragradient<F: VectorField + ?Sized>(
    field: &F,
    w: &DVector<f64>,
    eta: f64,
) -> Result<DVector<f64>> {
    let v = field.eval(w)?;
    extragradient_from(field, w, &v, eta)
}

fn extragradient_from<F: VectorField + ?Sized>(
    field: &F,
    w: &DVector<f64>,
    v: &DVector<f64>,
    eta: f64,
) -> Result<DVector<f64>> {
    let half = w - eta * v;
    let v_half = field.eval(&half)?;
    finite(w - eta * v_half, "extragradient step")
}

/// Consensus optimization: `w+ = w - eta v - gamma grad v^T v`.
pub fn step_consensus<F: VectorField + ?Sized>(
    field: &F,
    w: &DVector<f64>,
    eta: f64,
    gamma: f64,
) -> Result<DVector<f64>> {
    let v = field.eval(w)?;
    consensus_from(field, w, &v, eta, gamma)
}

fn consensus_from<F: VectorField + ?Sized>(
    field: &F,
    w: &DVector<f64>,
    v: &DVector<f64>,
    eta: f64,
    gamma: f64,
) -> Result<DVector<f64>> {
    if gamma == 0.0 {
        return euler_from(w, v, eta);
    }
    let jtv = field.jacobian_transpose_field(w)?;
    finite(w - eta * v - gamma * jtv, "consensus step")
}

/// Nesterov momentum in look-ahead velocity form.
#[derive(Debug, Clone, PartialEq)]
pub struct NesterovState {
    pub w: DVector<f64>,
    pub buffer: DVector<f64>,
}

impl NesterovState {
    pub fn new(w: DVector<f64>) -> Self {
        let buffer = DVector::zeros(w.len());
        Self { w, buffer }
    }
}

/// `b+ = mu b - eta v(w + mu b)`, `w+ = w + b+`.
pub fn step_nesterov<F: VectorField + ?Sized>(
    field: &F,
    state: &mut NesterovState,
    eta: f64,
    mu: f64,
) -> Result<()> {
    let look = &state.w + mu * &state.buffer;
    let v = field.eval(&look)?;
    let buffer = finite(mu * &state.buffer - eta * v, "nesterov buffer")?;
    state.w = finite(&state.w + &buffer, "nesterov step")?;
    state.buffer = buffer;
    Ok(())
}

/// Bias-corrected Adam moments, applied to the pseudo-gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub w: DVector<f64>,
    pub m: DVector<f64>,
    pub s: DVector<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(w: DVector<f64>) -> Self {
        let n = w.len();
        Self {
            w,
            m: DVector::zeros(n),
            s: DVector::zeros(n),
            t: 0,
        }
    }
}

pub fn step_adam<F: VectorField + ?Sized>(
    field: &F,
    state: &mut AdamState,
    eta: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    let v = field.eval(&state.w)?;
    adam_from(state, &v, eta, beta1, beta2, eps)
}

fn adam_from(state: &mut AdamState, v: &DVector<f64>, eta: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
    state.t += 1;
    state.m = beta1 * &state.m + (1.0 - beta1) * v;
    state.s = beta2 * &state.s + (1.0 - beta2) * v.component_mul(v);
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    let update = state
        .m
        .zip_map(&state.s, |m, s| (m / c1) / ((s / c2).sqrt() + eps));
    state.w = finite(&state.w - eta * update, "adam step")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Euler,
    Nesterov {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        epsilon: f64,
    },
    Rk2 {
        #[serde(default = "default_rk_alpha")]
        rk_alpha: f64,
    },
    Rk4,
    #[serde(alias = "eg")]
    ExtraGradient,
    #[serde(alias = "co")]
    Consensus { gamma: f64 },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_rk_alpha() -> f64 {
    0.5
}

impl Method {
    pub fn heun() -> Self {
        Method::Rk2 { rk_alpha: 0.5 }
    }

    pub fn adam_default() -> Self {
        Method::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_adam_eps(),
        }
    }

    /// Short lowercase name used in CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Nesterov { .. } => "nesterov",
            Method::Adam { .. } => "adam",
            Method::Rk2 { .. } => "rk2",
            Method::Rk4 => "rk4",
            Method::ExtraGradient => "eg",
            Method::Consensus { .. } => "co",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GameError::InvalidConfig(msg));
        match *self {
            Method::Rk2 { rk_alpha } if !(rk_alpha > 0.0 && rk_alpha <= 1.0) => {
                bad(format!("rk_alpha must lie in (0, 1], got {rk_alpha}"))
            }
            Method::Nesterov { momentum } if !(0.0..1.0).contains(&momentum) => {
                bad(format!("momentum must lie in [0, 1), got {momentum}"))
            }
            Method::Consensus { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => {
                bad(format!("gamma must be >= 0, got {gamma}"))
            }
            Method::Adam { beta1, beta2, epsilon }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) =>
            {
                bad("adam needs beta1, beta2 in [0, 1) and epsilon > 0".into())
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Nesterov { momentum } => write!(f, "nesterov(mu={momentum})"),
            Method::Adam { beta1, beta2, epsilon } => write!(f, "adam(beta1={beta1};beta2={beta2};eps={epsilon:e})"),
            Method::Rk2 { rk_alpha } => write!(f, "rk2(alpha={rk_alpha})"),
            Method::Consensus { gamma } => write!(f, "co(gamma={gamma})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Stepper carrying whatever state a method needs between iterations.
#[derive(Debug, Clone)]
pub struct Integrator {
    method: Method,
    eta: f64,
    buffer: Option<DVector<f64>>,
    adam: Option<(DVector<f64>, DVector<f64>, u64)>,
}

impl Integrator {
    pub fn new(method: Method, eta: f64, dim: usize) -> Result<Self> {
        method.validate()?;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(GameError::InvalidConfig(format!("eta must be > 0, got {eta}")));
        }
        let buffer = matches!(method, Method::Nesterov { .. }).then(|| DVector::zeros(dim));
        let adam = matches!(method, Method::Adam { .. }).then(|| (DVector::zeros(dim), DVector::zeros(dim), 0));
        Ok(Self {
            method,
            eta,
            buffer,
            adam,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Advance one step from `w`, where `v = v(w)` has already been evaluated.
    pub fn step<F: VectorField + ?Sized>(
        &mut self,
        field: &F,
        w: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let eta = self.eta;
        match self.method {
            Method::Euler => euler_from(w, v, eta),
            Method::Rk2 { rk_alpha } => rk2_from(field, w, v, eta, rk_alpha),
            Method::Rk4 => rk4_from(field, w, v, eta),
            Method::ExtraGradient => extragradient_from(field, w, v, eta),
            Method::Consensus { gamma } => consensus_from(field, w, v, eta, gamma),
            Method::Nesterov { momentum } => {
                let buffer = self.buffer.take().unwrap_or_else(|| DVector::zeros(w.len()));
                let mut state = NesterovState { w: w.clone(), buffer };
                if state.buffer.iter().all(|&b| b == 0.0) {
                    // look-ahead point equals w; reuse v
                    let b = finite(-eta * v, "nesterov buffer")?;
                    state.w = finite(w + &b, "nesterov step")?;
                    state.buffer = b;
                } else {
                    step_nesterov(field, &mut state, eta, momentum)?;
                }
                self.buffer = Some(state.buffer);
                Ok(state.w)
            }
            Method::Adam { beta1, beta2, epsilon } => {
                let (m, s, t) = self
                    .adam
                    .take()
                    .unwrap_or_else(|| (DVector::zeros(w.len()), DVector::zeros(w.len()), 0));
                let mut state = AdamState { w: w.clone(), m, s, t };
                adam_from(&mut state, v, eta, beta1, beta2, epsilon)?;
                self.adam = Some((state.m, state.s, state.t));
                Ok(state.w)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    #[serde(flatten)]
    pub method: Method,
    pub eta: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub stop_grad_norm: f64,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_max_iters() -> usize {
    10_000
}
fn default_divergence() -> f64 {
    DIVERGENCE_THRESHOLD
}
fn default_record_every() -> usize {
    1
}

impl IntegratorConfig {
    pub fn new(method: Method, eta: f64) -> Self {
        Self {
            method,
            eta,
            max_iters: default_max_iters(),
            stop_grad_norm: 0.0,
            divergence_threshold: DIVERGENCE_THRESHOLD,
            seed: 0,
            record_every: 1,
        }
    }

    pub fn max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn stop_grad_norm(mut self, tol: f64) -> Self {
        self.stop_grad_norm = tol;
        self
    }

    pub fn record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(GameError::InvalidConfig(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.stop_grad_norm < 0.0 {
            return Err(GameError::InvalidConfig("stop_grad_norm must be >= 0".into()));
        }
        if self.record_every == 0 {
            return Err(GameError::InvalidConfig("record_every must be >= 1".into()));
        }
        if self.divergence_threshold.is_nan() || self.divergence_threshold <= 0.0 {
            return Err(GameError::InvalidConfig("divergence_threshold must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalStatus {
    Converged,
    MaxIters,
    Diverged,
}

impl fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminalStatus::Converged => "converged",
            TerminalStatus::MaxIters => "max-iters",
            TerminalStatus::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub iter: usize,
    pub grad_norm: f64,
    pub costs: Vec<f64>,
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub method: Method,
    pub eta: f64,
    pub records: Vec<Record>,
    pub status: TerminalStatus,
    /// Steps taken.
    pub iterations: usize,
    pub field_evals: usize,
    pub final_params: DVector<f64>,
    pub metric_names: Vec<String>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.grad_norm)
    }
}

/// Extra per-record observables (e.g. accuracies) computed from the iterate.
pub trait Observer: Sync {
    fn names(&self) -> Vec<String>;
    fn observe(&self, w: &DVector<f64>) -> Vec<f64>;
}

impl Observer for () {
    fn names(&self) -> Vec<String> {
        Vec::new()
    }
    fn observe(&self, _w: &DVector<f64>) -> Vec<f64> {
        Vec::new()
    }
}

fn diverged(w: &DVector<f64>, threshold: f64) -> bool {
    w.iter().any(|x| !x.is_finite() || x.abs() > threshold)
}

/// Iterate the configured method from `w0` until the pseudo-gradient norm
/// drops to `stop_grad_norm`, `max_iters` steps are taken, or the iterate
/// diverges. Divergence is a status, not an error.
pub fn run_trajectory(game: &GameDefinition, w0: &JointParams, config: &IntegratorConfig) -> Result<Trajectory> {
    run_trajectory_observed(game, w0, config, &())
}

pub fn run_trajectory_observed<O: Observer + ?Sized>(
    game: &GameDefinition,
    w0: &JointParams,
    config: &IntegratorConfig,
    observer: &O,
) -> Result<Trajectory> {
    if w0.partition() != game.partition() {
        return Err(GameError::InvalidPartition("initial point partition does not match the game".into()));
    }
    config.validate()?;
    let field = CountingField::new(game);
    let mut integ = Integrator::new(config.method, config.eta, w0.dim())?;
    let mut w = w0.values.clone();
    let mut records = Vec::new();
    let mut status = TerminalStatus::MaxIters;
    let mut iter = 0;

    let record = |iter: usize, w: &DVector<f64>, grad_norm: f64| Record {
        iter,
        grad_norm,
        costs: game.costs_raw(w).unwrap_or_else(|_| vec![f64::NAN; game.n_players()]),
        metrics: observer.observe(w),
    };

    loop {
        if diverged(&w, config.divergence_threshold) {
            status = TerminalStatus::Diverged;
            records.push(Record {
                iter,
                grad_norm: f64::NAN,
                costs: vec![f64::NAN; game.n_players()],
                metrics: vec![f64::NAN; observer.names().len()],
            });
            break;
        }
        let v = match field.eval(&w) {
            Ok(v) => v,
            Err(GameError::NonFiniteValue { .. } | GameError::NonFinite(_)) => {
                status = TerminalStatus::Diverged;
                records.push(Record {
                    iter,
                    grad_norm: f64::NAN,
                    costs: vec![f64::NAN; game.n_players()],
                    metrics: vec![f64::NAN; observer.names().len()],
                });
                break;
            }
            Err(e) => return Err(e),
        };
        let grad_norm = v.norm();
        let converged = grad_norm <= config.stop_grad_norm;
        let last = converged || iter >= config.max_iters;
        if iter % config.record_every == 0 || last {
            records.push(record(iter, &w, grad_norm));
        }
        if converged {
            status = TerminalStatus::Converged;
            break;
        }
        if last {
            break;
        }
        match integ.step(&field, &w, &v) {
            Ok(next) => w = next,
            Err(GameError::NonFiniteValue { .. } | GameError::NonFinite(_)) => {
                iter += 1;
                status = TerminalStatus::Diverged;
                records.push(Record {
                    iter,
                    grad_norm: f64::NAN,
                    costs: vec![f64::NAN; game.n_players()],
                    metrics: vec![f64::NAN; observer.names().len()],
                });
                break;
            }
            Err(e) => return Err(e),
        }
        iter += 1;
    }

    Ok(Trajectory {
        method: config.method,
        eta: config.eta,
        records,
        status,
        iterations: iter,
        field_evals: field.evals(),
        final_params: w,
        metric_names: observer.names(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::example2;

    fn scalar_w(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn euler_scalar() {
        let f = LinearField::scalar(1.0);
        assert!((step_euler(&f, &scalar_w(1.0), 0.1).unwrap()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn heun_scalar() {
        let f = LinearField::scalar(1.0);
        let w = step_rk2(&f, &scalar_w(1.0), 0.2, 0.5).unwrap();
        assert!((w[0] - 0.82).abs() < 1e-15);
    }

    #[test]
    fn rk4_scalar() {
        let f = LinearField::scalar(1.0);
        assert!((step_rk4(&f, &scalar_w(1.0), 1.0).unwrap()[0] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn extragradient_scalar() {
        let f = LinearField::scalar(1.0);
        assert!((step_extragradient(&f, &scalar_w(1.0), 0.1).unwrap()[0] - 0.91).abs() < 1e-15);
    }

    #[test]
    fn consensus_scalar() {
        let f = LinearField::scalar(1.0);
        assert!((step_consensus(&f, &scalar_w(1.0), 0.1, 0.01).unwrap()[0] - 0.89).abs() < 1e-15);
        let w = DVector::from_column_slice(&[0.3]);
        assert_eq!(step_consensus(&f, &w, 0.1, 0.0).unwrap(), step_euler(&f, &w, 0.1).unwrap());
    }

    #[test]
    fn nesterov_two_steps() {
        let f = LinearField::scalar(1.0);
        let mut s = NesterovState::new(scalar_w(1.0));
        step_nesterov(&f, &mut s, 0.1, 0.9).unwrap();
        assert!((s.buffer[0] + 0.1).abs() < 1e-15 && (s.w[0] - 0.9).abs() < 1e-15);
        step_nesterov(&f, &mut s, 0.1, 0.9).unwrap();
        assert!((s.buffer[0] + 0.171).abs() < 1e-15);
        assert!((s.w[0] - 0.729).abs() < 1e-15);
    }

    #[test]
    fn nesterov_zero_momentum_is_euler() {
        let f = LinearField::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]));
        let w = DVector::from_column_slice(&[0.4, -1.2]);
        let mut s = NesterovState::new(w.clone());
        step_nesterov(&f, &mut s, 0.05, 0.0).unwrap();
        step_nesterov(&f, &mut s, 0.05, 0.0).unwrap();
        let e = step_euler(&f, &step_euler(&f, &w, 0.05).unwrap(), 0.05).unwrap();
        assert!((s.w - e).amax() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_sign_step() {
        let f = LinearField::new(DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -2.0, 1e3])));
        let mut s = AdamState::new(DVector::from_column_slice(&[0.5, 0.5, 0.5]));
        step_adam(&f, &mut s, 0.01, 0.9, 0.999, 1e-8).unwrap();
        // v = (0.5, -1, 500): first bias-corrected update is v / (|v| + eps)
        let expect = [0.5 - 0.01, 0.5 + 0.01, 0.5 - 0.01];
        for (x, e) in s.w.iter().zip(expect) {
            assert!((x - e).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_constant_field_drifts_at_eta() {
        struct Constant;
        impl VectorField for Constant {
            fn dim(&self) -> usize {
                2
            }
            fn eval(&self, _w: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(DVector::from_column_slice(&[3.0, -0.2]))
            }
        }
        let mut s = AdamState::new(DVector::zeros(2));
        for _ in 0..200 {
            let before = s.w.clone();
            step_adam(&Constant, &mut s, 0.1, 0.9, 0.999, 1e-8).unwrap();
            let d = &s.w - before;
            assert!((d[0] + 0.1).abs() < 1e-6 && (d[1] - 0.1).abs() < 1e-6);
        }
    }

    #[test]
    fn every_method_fixes_stationary_points() {
        let f = LinearField::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]));
        let w = DVector::zeros(2);
        let v = DVector::zeros(2);
        for m in [
            Method::Euler,
            Method::Nesterov { momentum: 0.9 },
            Method::adam_default(),
            Method::Rk2 { rk_alpha: 2.0 / 3.0 },
            Method::Rk4,
            Method::ExtraGradient,
            Method::Consensus { gamma: 0.3 },
        ] {
            let mut integ = Integrator::new(m, 0.1, 2).unwrap();
            for _ in 0..3 {
                assert_eq!(integ.step(&f, &w, &v).unwrap(), w, "{m}");
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(Integrator::new(Method::Rk2 { rk_alpha: 0.0 }, 0.1, 1).is_err());
        assert!(Integrator::new(Method::Rk2 { rk_alpha: 1.5 }, 0.1, 1).is_err());
        assert!(Integrator::new(Method::Nesterov { momentum: 1.0 }, 0.1, 1).is_err());
        assert!(Integrator::new(Method::Consensus { gamma: -1.0 }, 0.1, 1).is_err());
        assert!(Integrator::new(Method::Euler, 0.0, 1).is_err());
        assert!(IntegratorConfig::new(Method::Euler, 0.1).record_every(0).validate().is_err());
    }

    #[test]
    fn example2_runs() {
        let g = example2().definition();
        let w0 = g.params(&[1.0, 1.0, 1.0]).unwrap();
        let cfg = IntegratorConfig::new(Method::Euler, 5e-4).max_iters(200_000).stop_grad_norm(1e-8).record_every(1000);
        let t = run_trajectory(&g, &w0, &cfg).unwrap();
        assert_eq!(t.status, TerminalStatus::Converged);
        assert!(t.final_grad_norm() <= 1e-8);

        let cfg = IntegratorConfig::new(Method::Euler, 5e-3).max_iters(200_000).stop_grad_norm(1e-8);
        assert_eq!(run_trajectory(&g, &w0, &cfg).unwrap().status, TerminalStatus::Diverged);

        let cfg = IntegratorConfig::new(Method::heun(), 5e-3).max_iters(200_000).stop_grad_norm(1e-8).record_every(100);
        let t = run_trajectory(&g, &w0, &cfg).unwrap();
        assert_eq!(t.status, TerminalStatus::Converged);
        assert_eq!(t.field_evals, 2 * t.iterations + 1);
    }

    #[test]
    fn euler_example2_step_matches_matrix() {
        let g = example2().definition();
        let w = DVector::from_column_slice(&[1.0, 1.0, 1.0]);
        let a = DMatrix::from_row_slice(3, 3, &[-2.0, -2.0, 0.0, -2.0, -4.0, -99.0, 0.0, 99.0, -2.0]);
        let expect: DVector<f64> = (DMatrix::identity(3, 3) + 1e-3 * a) * &w;
        let got = step_euler(&g, &w, 1e-3).unwrap();
        assert!((got - expect).amax() < 1e-15);
    }

    #[test]
    fn runner_is_deterministic() {
        let g = example2().definition();
        let w0 = g.params(&[1.0, -0.5, 0.25]).unwrap();
        let cfg = IntegratorConfig::new(Method::adam_default(), 1e-3).max_iters(500).record_every(7);
        assert_eq!(run_trajectory(&g, &w0, &cfg).unwrap(), run_trajectory(&g, &w0, &cfg).unwrap());
    }
}
