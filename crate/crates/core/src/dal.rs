//! A desk-scale domain-adversarial network (feature extractor, label
//! classifier, domain classifier) with hand-written backpropagation,
//! exposed as a three-player [`Game`].
//!
//! Player order in the joint vector: `w1` = label classifier, `w2` =
//! feature extractor, `w3` = domain classifier. Costs:
//!
//! ```text
//! J1 = l + alpha d      J2 = l + alpha lambda d      J3 = -alpha d
//! d  = mean_s log sigmoid(z) + mean_t log(1 - sigmoid(z))
//! ```
//!
//! where `l` is source cross-entropy and `z` the domain logit. `d` is the
//! Jensen-Shannon estimate without its constant `log 4` offset.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{Game, GameDefinition, GradientMode, Partition, RiskDivergence};
use crate::integrators::{Integrator, IntegratorConfig, Observer, Record, TerminalStatus, Trajectory};

/// Layer widths. Hidden layers use `tanh`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub domain_hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden: 16,
            feature_dim: 8,
            classes: 2,
            domain_hidden: 8,
        }
    }
}

impl Architecture {
    pub fn classifier_len(&self) -> usize {
        self.classes * self.feature_dim + self.classes
    }

    pub fn extractor_len(&self) -> usize {
        self.hidden * self.input_dim + self.hidden + self.feature_dim * self.hidden + self.feature_dim
    }

    pub fn domain_len(&self) -> usize {
        self.domain_hidden * self.feature_dim + 2 * self.domain_hidden + 1
    }

    pub fn dim(&self) -> usize {
        self.classifier_len() + self.extractor_len() + self.domain_len()
    }

    pub fn partition(&self) -> Partition {
        Partition::from_sizes(&[self.classifier_len(), self.extractor_len(), self.domain_len()])
            .expect("architecture widths are positive")
    }

    fn validate(&self) -> Result<()> {
        let a = self;
        if [a.input_dim, a.hidden, a.feature_dim, a.domain_hidden].contains(&0) || a.classes < 2 {
            return Err(GameError::InvalidConfig(format!("degenerate architecture {a:?}")));
        }
        Ok(())
    }

    /// Seeded uniform init, `U(-gain/sqrt(fan_in), gain/sqrt(fan_in))` per layer.
    pub fn init_params(&self, seed: u64, gain: f64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.dim());
        let mut layer = |out: &mut Vec<f64>, fan_in: usize, count: usize| {
            let r = gain / (fan_in as f64).sqrt();
            out.extend((0..count).map(|_| rng.random_range(-r..=r)));
        };
        // classifier
        layer(&mut out, self.feature_dim, self.classifier_len());
        // extractor
        layer(&mut out, self.input_dim, self.hidden * self.input_dim + self.hidden);
        layer(&mut out, self.hidden, self.feature_dim * self.hidden + self.feature_dim);
        // domain head
        layer(&mut out, self.feature_dim, self.domain_hidden * self.feature_dim + self.domain_hidden);
        layer(&mut out, self.domain_hidden, self.domain_hidden + 1);
        DVector::from_vec(out)
    }
}

/// Unpacked weights. Matrices are `out x in`; parameters are packed
/// row-major, weights before biases, in player order.
#[derive(Debug, Clone, PartialEq)]
struct Weights {
    wh: DMatrix<f64>,
    bh: DVector<f64>,
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
    u1: DMatrix<f64>,
    c1: DVector<f64>,
    u2: DVector<f64>,
    c2: f64,
}

struct Cursor<'a> {
    data: &'a [f64],
    at: usize,
}

impl Cursor<'_> {
    fn mat(&mut self, r: usize, c: usize) -> DMatrix<f64> {
        let m = DMatrix::from_row_slice(r, c, &self.data[self.at..self.at + r * c]);
        self.at += r * c;
        m
    }
    fn vec(&mut self, n: usize) -> DVector<f64> {
        let v = DVector::from_column_slice(&self.data[self.at..self.at + n]);
        self.at += n;
        v
    }
}

impl Weights {
    fn unpack(arch: &Architecture, w: &[f64]) -> Self {
        let a = arch;
        let mut c = Cursor { data: w, at: 0 };
        Self {
            wh: c.mat(a.classes, a.feature_dim),
            bh: c.vec(a.classes),
            w1: c.mat(a.hidden, a.input_dim),
            b1: c.vec(a.hidden),
            w2: c.mat(a.feature_dim, a.hidden),
            b2: c.vec(a.feature_dim),
            u1: c.mat(a.domain_hidden, a.feature_dim),
            c1: c.vec(a.domain_hidden),
            u2: c.vec(a.domain_hidden),
            c2: c.vec(1)[0],
        }
    }

    fn zeros(a: &Architecture) -> Self {
        Self::unpack(a, &vec![0.0; a.dim()])
    }

    fn pack(&self) -> DVector<f64> {
        fn push(out: &mut Vec<f64>, m: &DMatrix<f64>, b: &DVector<f64>) {
            for r in m.row_iter() {
                out.extend(r.iter().copied());
            }
            out.extend(b.iter().copied());
        }
        let mut out = Vec::new();
        push(&mut out, &self.wh, &self.bh);
        push(&mut out, &self.w1, &self.b1);
        push(&mut out, &self.w2, &self.b2);
        push(&mut out, &self.u1, &self.c1);
        out.extend(self.u2.iter().copied());
        out.push(self.c2);
        DVector::from_vec(out)
    }
}

/// Activations of one batch (rows are samples).
struct Cache {
    x: DMatrix<f64>,
    z1: DMatrix<f64>,
    features: DMatrix<f64>,
    logits: DMatrix<f64>,
    q1: DMatrix<f64>,
    domain: DVector<f64>,
}

fn affine(x: &DMatrix<f64>, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x * w.transpose();
    for mut row in out.row_iter_mut() {
        row += b.transpose();
    }
    out
}

fn forward_cache(wt: &Weights, x: &DMatrix<f64>) -> Cache {
    let z1 = affine(x, &wt.w1, &wt.b1).map(f64::tanh);
    let features = affine(&z1, &wt.w2, &wt.b2).map(f64::tanh);
    let logits = affine(&features, &wt.wh, &wt.bh);
    let q1 = affine(&features, &wt.u1, &wt.c1).map(f64::tanh);
    let domain = (&q1 * &wt.u2).add_scalar(wt.c2);
    Cache {
        x: x.clone(),
        z1,
        features,
        logits,
        q1,
        domain,
    }
}

/// `log sigmoid(x)` without forming `sigmoid(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    row.iter().map(|z| z - lse).collect()
}

fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn cross_entropy(logits: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -log_softmax_row(&row_vec(logits, i))[y])
        .sum::<f64>()
        / n
}

/// `d(mean CE)/d logits`.
fn cross_entropy_grad(logits: &DMatrix<f64>, labels: &[usize]) -> DMatrix<f64> {
    let n = labels.len() as f64;
    let mut g = DMatrix::zeros(logits.nrows(), logits.ncols());
    for (i, &y) in labels.iter().enumerate() {
        let ls = log_softmax_row(&row_vec(logits, i));
        for (k, l) in ls.iter().enumerate() {
            g[(i, k)] = (l.exp() - if k == y { 1.0 } else { 0.0 }) / n;
        }
    }
    g
}

/// Gradients of the classifier head; returns the gradient wrt features too.
fn backward_classifier(wt: &Weights, c: &Cache, dlogits: &DMatrix<f64>, g: &mut Weights) -> DMatrix<f64> {
    g.wh += dlogits.transpose() * &c.features;
    for row in dlogits.row_iter() {
        g.bh += row.transpose();
    }
    dlogits * &wt.wh
}

/// Gradients of the domain head from `dL/d(domain logit)`.
fn backward_domain(wt: &Weights, c: &Cache, dz: &DVector<f64>, g: &mut Weights) -> DMatrix<f64> {
    g.u2 += c.q1.transpose() * dz;
    g.c2 += dz.sum();
    // d pre-activation of the hidden domain layer
    let mut dpre = dz * wt.u2.transpose();
    dpre.zip_apply(&c.q1, |d, q| *d *= 1.0 - q * q);
    g.u1 += dpre.transpose() * &c.features;
    for row in dpre.row_iter() {
        g.c1 += row.transpose();
    }
    dpre * &wt.u1
}

fn backward_extractor(wt: &Weights, c: &Cache, dfeat: &DMatrix<f64>, g: &mut Weights) {
    let mut da2 = dfeat.clone();
    da2.zip_apply(&c.features, |d, f| *d *= 1.0 - f * f);
    g.w2 += da2.transpose() * &c.z1;
    for row in da2.row_iter() {
        g.b2 += row.transpose();
    }
    let mut da1 = &da2 * &wt.w2;
    da1.zip_apply(&c.z1, |d, z| *d *= 1.0 - z * z);
    g.w1 += da1.transpose() * &c.x;
    for row in da1.row_iter() {
        g.b1 += row.transpose();
    }
}

/// Network outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub class_logits: DMatrix<f64>,
    pub domain_logit: DVector<f64>,
    pub features: DMatrix<f64>,
}

/// The three networks plus the GRL coefficient and divergence weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DalModel {
    pub arch: Architecture,
    pub params: DVector<f64>,
    pub lambda: f64,
    pub alpha: f64,
}

impl DalModel {
    pub fn new(arch: Architecture, params: DVector<f64>, lambda: f64, alpha: f64) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.dim() {
            return Err(GameError::DimensionMismatch {
                expected: arch.dim(),
                got: params.len(),
            });
        }
        Ok(Self {
            arch,
            params,
            lambda,
            alpha,
        })
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<Forward> {
        forward(&self.arch, &self.params, x)
    }

    pub fn classifier_params(&self) -> &[f64] {
        &self.params.as_slice()[self.arch.partition().range(0)]
    }
    pub fn extractor_params(&self) -> &[f64] {
        &self.params.as_slice()[self.arch.partition().range(1)]
    }
    pub fn domain_params(&self) -> &[f64] {
        &self.params.as_slice()[self.arch.partition().range(2)]
    }
}

pub fn forward(arch: &Architecture, params: &DVector<f64>, x: &DMatrix<f64>) -> Result<Forward> {
    if x.ncols() != arch.input_dim {
        return Err(GameError::DimensionMismatch {
            expected: arch.input_dim,
            got: x.ncols(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GameError::NonFinite("network input"));
    }
    let c = forward_cache(&Weights::unpack(arch, params.as_slice()), x);
    let out = Forward {
        class_logits: c.logits,
        domain_logit: c.domain,
        features: c.features,
    };
    if out.class_logits.iter().chain(out.domain_logit.iter()).any(|v| !v.is_finite()) {
        return Err(GameError::NonFinite("network output"));
    }
    Ok(out)
}

/// Two Gaussian clusters; the target domain is the same clusters rotated
/// about the origin and then shifted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    pub n_per_domain: usize,
    pub means: [[f64; 2]; 2],
    pub std: f64,
    pub shift: [f64; 2],
    /// Radians.
    pub rotation: f64,
    pub seed: u64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            n_per_domain: 200,
            means: [[-1.0, 0.0], [1.0, 0.0]],
            std: 0.5,
            shift: [1.0, 0.0],
            rotation: PI / 6.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferTask {
    pub params: TaskParams,
    pub source_x: DMatrix<f64>,
    pub source_y: Vec<usize>,
    pub target_x: DMatrix<f64>,
    /// Held out: used for evaluation only, never for training.
    pub target_y: Vec<usize>,
}

fn sample_domain(p: &TaskParams, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<usize>) {
    let n = p.n_per_domain;
    let mut x = DMatrix::zeros(n, 2);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let m = p.means[label];
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        x[(i, 0)] = m[0] + p.std * e0;
        x[(i, 1)] = m[1] + p.std * e1;
        y.push(label);
    }
    (x, y)
}

pub fn make_task(p: TaskParams) -> Result<TransferTask> {
    if p.n_per_domain < 10 {
        return Err(GameError::InvalidConfig(format!(
            "need at least 10 samples per domain, got {}",
            p.n_per_domain
        )));
    }
    if p.std.is_nan() || p.std <= 0.0 {
        return Err(GameError::InvalidConfig("cluster std must be > 0".into()));
    }
    let mut src_rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(p.seed);
    tgt_rng.set_stream(1);
    let (source_x, source_y) = sample_domain(&p, &mut src_rng);
    let (raw, target_y) = sample_domain(&p, &mut tgt_rng);
    let (s, c) = p.rotation.sin_cos();
    let mut target_x = raw.clone();
    for i in 0..raw.nrows() {
        let (a, b) = (raw[(i, 0)], raw[(i, 1)]);
        target_x[(i, 0)] = c * a - s * b + p.shift[0];
        target_x[(i, 1)] = s * a + c * b + p.shift[1];
    }
    Ok(TransferTask {
        params: p,
        source_x,
        source_y,
        target_x,
        target_y,
    })
}

fn accuracy(logits: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| {
            let row = logits.row(*i);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == y
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// Accuracy of `argmax h(g(x))` on the held-out target labels.
pub fn transfer_accuracy(model: &DalModel, task: &TransferTask) -> Result<f64> {
    Ok(accuracy(&model.forward(&task.target_x)?.class_logits, &task.target_y))
}

pub fn source_accuracy(model: &DalModel, task: &TransferTask) -> Result<f64> {
    Ok(accuracy(&model.forward(&task.source_x)?.class_logits, &task.source_y))
}

fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

/// The domain-adversarial game on a (full or mini) batch.
#[derive(Debug, Clone)]
pub struct DalGame {
    arch: Architecture,
    partition: Partition,
    task: Arc<TransferTask>,
    lambda: f64,
    alpha: f64,
    source_x: DMatrix<f64>,
    source_y: Vec<usize>,
    target_x: DMatrix<f64>,
}

impl DalGame {
    /// Full-batch game.
    pub fn new(arch: Architecture, task: Arc<TransferTask>, lambda: f64, alpha: f64) -> Result<Self> {
        arch.validate()?;
        if task.source_x.ncols() != arch.input_dim {
            return Err(GameError::DimensionMismatch {
                expected: arch.input_dim,
                got: task.source_x.ncols(),
            });
        }
        Ok(Self {
            partition: arch.partition(),
            arch,
            source_x: task.source_x.clone(),
            source_y: task.source_y.clone(),
            target_x: task.target_x.clone(),
            task,
            lambda,
            alpha,
        })
    }

    /// The same game restricted to a mini-batch of source and target rows.
    pub fn with_batch(&self, source_idx: &[usize], target_idx: &[usize]) -> Self {
        Self {
            source_x: select_rows(&self.task.source_x, source_idx),
            source_y: source_idx.iter().map(|&i| self.task.source_y[i]).collect(),
            target_x: select_rows(&self.task.target_x, target_idx),
            ..self.clone()
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn task(&self) -> &Arc<TransferTask> {
        &self.task
    }

    pub fn definition(&self) -> GameDefinition {
        GameDefinition::new(self.clone(), GradientMode::Analytic)
    }

    pub fn model(&self, params: DVector<f64>) -> Result<DalModel> {
        DalModel::new(self.arch, params, self.lambda, self.alpha)
    }

    fn caches(&self, w: &DVector<f64>) -> (Weights, Cache, Cache) {
        let wt = Weights::unpack(&self.arch, w.as_slice());
        let s = forward_cache(&wt, &self.source_x);
        let t = forward_cache(&wt, &self.target_x);
        (wt, s, t)
    }

    /// Source cross-entropy `l`.
    pub fn risk(&self, w: &DVector<f64>) -> f64 {
        let wt = Weights::unpack(&self.arch, w.as_slice());
        cross_entropy(&forward_cache(&wt, &self.source_x).logits, &self.source_y)
    }

    /// Domain divergence estimate `d`.
    pub fn divergence(&self, w: &DVector<f64>) -> f64 {
        let (_, s, t) = self.caches(w);
        divergence_from(&s, &t)
    }

    fn risk_grad_weights(&self, wt: &Weights, s: &Cache) -> Weights {
        let mut g = Weights::zeros(&self.arch);
        let dlogits = cross_entropy_grad(&s.logits, &self.source_y);
        let dfeat = backward_classifier(wt, s, &dlogits, &mut g);
        backward_extractor(wt, s, &dfeat, &mut g);
        g
    }

    fn divergence_grad_weights(&self, wt: &Weights, s: &Cache, t: &Cache) -> Weights {
        let mut g = Weights::zeros(&self.arch);
        let (dz_s, dz_t) = divergence_logit_grads(s, t);
        let df_s = backward_domain(wt, s, &dz_s, &mut g);
        backward_extractor(wt, s, &df_s, &mut g);
        let df_t = backward_domain(wt, t, &dz_t, &mut g);
        backward_extractor(wt, t, &df_t, &mut g);
        g
    }

    /// Gradient of the single DAL objective `l - alpha d(h', R(g))` where
    /// the gradient reversal layer `R` is the identity forward and scales
    /// the backward signal by `-lambda`. One backward pass per domain.
    pub fn grl_objective_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let (wt, s, t) = self.caches(w);
        let mut g = Weights::zeros(&self.arch);
        let (dd_s, dd_t) = divergence_logit_grads(&s, &t);
        // dL/dz for L = l - alpha d
        let dz_s = -self.alpha * dd_s;
        let dz_t = -self.alpha * dd_t;

        let dlogits = cross_entropy_grad(&s.logits, &self.source_y);
        let df_cls = backward_classifier(&wt, &s, &dlogits, &mut g);
        let df_dom_s = backward_domain(&wt, &s, &dz_s, &mut g);
        let df_dom_t = backward_domain(&wt, &t, &dz_t, &mut g);
        // through the GRL
        let df_s = df_cls + (-self.lambda) * df_dom_s;
        let df_t = (-self.lambda) * df_dom_t;
        backward_extractor(&wt, &s, &df_s, &mut g);
        backward_extractor(&wt, &t, &df_t, &mut g);
        g.pack()
    }
}

fn divergence_from(s: &Cache, t: &Cache) -> f64 {
    let ns = s.domain.len() as f64;
    let nt = t.domain.len() as f64;
    s.domain.iter().map(|&z| log_sigmoid(z)).sum::<f64>() / ns
        + t.domain.iter().map(|&z| log_sigmoid(-z)).sum::<f64>() / nt
}

/// `dd/dz` on source and target domain logits.
fn divergence_logit_grads(s: &Cache, t: &Cache) -> (DVector<f64>, DVector<f64>) {
    let ns = s.domain.len() as f64;
    let nt = t.domain.len() as f64;
    (
        s.domain.map(|z| sigmoid(-z) / ns),
        t.domain.map(|z| -sigmoid(z) / nt),
    )
}

impl Game for DalGame {
    fn partition(&self) -> &Partition {
        &self.partition
    }

    fn costs(&self, w: &DVector<f64>) -> Vec<f64> {
        let (_, s, t) = self.caches(w);
        let l = cross_entropy(&s.logits, &self.source_y);
        let d = divergence_from(&s, &t);
        vec![
            l + self.alpha * d,
            l + self.alpha * self.lambda * d,
            -self.alpha * d,
        ]
    }

    fn analytic_pseudo_gradient(&self, w: &DVector<f64>) -> Option<DVector<f64>> {
        let (wt, s, t) = self.caches(w);
        let gl = self.risk_grad_weights(&wt, &s).pack();
        let gd = self.divergence_grad_weights(&wt, &s, &t).pack();
        let mut v = DVector::zeros(w.len());
        for (player, coef) in [(0, self.alpha), (1, self.alpha * self.lambda), (2, -self.alpha)] {
            for j in self.partition.range(player) {
                let risk = if player < 2 { gl[j] } else { 0.0 };
                v[j] = risk + coef * gd[j];
            }
        }
        Some(v)
    }

    fn risk_divergence(&self) -> Option<&dyn RiskDivergence> {
        Some(self)
    }
}

impl RiskDivergence for DalGame {
    fn risk_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let (wt, s, _) = self.caches(w);
        self.risk_grad_weights(&wt, &s).pack()
    }
    fn divergence_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let (wt, s, t) = self.caches(w);
        self.divergence_grad_weights(&wt, &s, &t).pack()
    }
    fn lambda(&self) -> f64 {
        self.lambda
    }
    fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Seeded epoch shuffler yielding paired source/target index batches.
/// Every epoch visits each sample exactly once per domain.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    batch: usize,
    src: Vec<usize>,
    tgt: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n_source: usize, n_target: usize, batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 || batch > n_source.min(n_target) {
            return Err(GameError::InvalidConfig(format!("batch size {batch} out of range")));
        }
        let mut s = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch,
            src: (0..n_source).collect(),
            tgt: (0..n_target).collect(),
            pos: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.src.shuffle(&mut self.rng);
        self.tgt.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> (Vec<usize>, Vec<usize>) {
        let n = self.src.len().min(self.tgt.len());
        if self.pos + self.batch > n {
            self.reshuffle();
        }
        let r = self.pos..self.pos + self.batch;
        self.pos += self.batch;
        (self.src[r.clone()].to_vec(), self.tgt[r].to_vec())
    }
}

/// Reports `source_acc` and `target_acc` along a trajectory.
pub struct AccuracyObserver {
    game: DalGame,
}

impl AccuracyObserver {
    pub fn new(game: DalGame) -> Self {
        Self { game }
    }
}

impl Observer for AccuracyObserver {
    fn names(&self) -> Vec<String> {
        vec!["source_acc".into(), "target_acc".into()]
    }

    fn observe(&self, w: &DVector<f64>) -> Vec<f64> {
        match self.game.model(w.clone()) {
            Ok(m) => vec![
                source_accuracy(&m, &self.game.task).unwrap_or(f64::NAN),
                transfer_accuracy(&m, &self.game.task).unwrap_or(f64::NAN),
            ],
            Err(_) => vec![f64::NAN, f64::NAN],
        }
    }
}

/// Train on seeded mini-batches of `batch` source and `batch` target rows.
///
/// Each step evaluates the batch game only. Recorded rows carry the
/// full-batch gradient norm and costs so runs stay comparable with
/// full-batch training. `config.seed` drives the shuffling and the run
/// stops on `max_iters` or divergence, never on the gradient norm.
pub fn run_minibatch<O: Observer + ?Sized>(
    game: &DalGame,
    w0: &DVector<f64>,
    config: &IntegratorConfig,
    batch: usize,
    observer: &O,
) -> Result<Trajectory> {
    config.validate()?;
    let full = game.definition();
    if w0.len() != full.dim() {
        return Err(GameError::DimensionMismatch {
            expected: full.dim(),
            got: w0.len(),
        });
    }
    let mut sampler = BatchSampler::new(game.task.source_x.nrows(), game.task.target_x.nrows(), batch, config.seed)?;
    let mut integ = Integrator::new(config.method, config.eta, w0.len())?;
    let mut w = w0.clone();
    let mut records = Vec::new();
    let mut status = TerminalStatus::MaxIters;
    let mut evals = 0;
    let mut iter = 0;
    let blow_up = |w: &DVector<f64>| w.iter().any(|x| !x.is_finite() || x.abs() > config.divergence_threshold);
    let nan_record = |iter| Record {
        iter,
        grad_norm: f64::NAN,
        costs: vec![f64::NAN; 3],
        metrics: vec![f64::NAN; observer.names().len()],
    };
    loop {
        if blow_up(&w) {
            status = TerminalStatus::Diverged;
            records.push(nan_record(iter));
            break;
        }
        let last = iter >= config.max_iters;
        if iter % config.record_every == 0 || last {
            match full.field(&w) {
                Ok(v) => records.push(Record {
                    iter,
                    grad_norm: v.norm(),
                    costs: game.costs(&w),
                    metrics: observer.observe(&w),
                }),
                Err(GameError::NonFinite(_) | GameError::NonFiniteValue { .. }) => {
                    status = TerminalStatus::Diverged;
                    records.push(nan_record(iter));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if last {
            break;
        }
        let (src, tgt) = sampler.next_batch();
        let bgame = game.with_batch(&src, &tgt).definition();
        let step = bgame.field(&w).and_then(|v| {
            evals += 1;
            let counted = crate::integrators::CountingField::new(&bgame);
            let next = integ.step(&counted, &w, &v);
            evals += counted.evals();
            next
        });
        match step {
            Ok(next) => w = next,
            Err(GameError::NonFinite(_) | GameError::NonFiniteValue { .. }) => {
                iter += 1;
                status = TerminalStatus::Diverged;
                records.push(nan_record(iter));
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
        field_evals: evals,
        final_params: w,
        metric_names: observer.names(),
    })
}

/// Target-accuracy milestones of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracySummary {
    pub best: f64,
    /// First recorded iteration attaining `best`.
    pub best_iter: usize,
    /// First recorded iteration within `eps` of `best`.
    pub reach_iter: usize,
}

/// Summarize the `target_acc` column. `None` if it was not recorded or
/// never finite.
pub fn target_summary(traj: &Trajectory, eps: f64) -> Option<AccuracySummary> {
    let col = traj.metric_names.iter().position(|n| n == "target_acc")?;
    let series: Vec<(usize, f64)> = traj
        .records
        .iter()
        .map(|r| (r.iter, r.metrics[col]))
        .filter(|(_, a)| a.is_finite())
        .collect();
    let best = series.iter().map(|&(_, a)| a).fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    let first = |thr: f64| series.iter().find(|&&(_, a)| a >= thr).map(|&(i, _)| i);
    Some(AccuracySummary {
        best,
        best_iter: first(best)?,
        reach_iter: first(best - eps)?,
    })
}

/// Serializable description of a domain-adversarial game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DalSpec {
    pub arch: Architecture,
    pub task: TaskParams,
    pub lambda: f64,
    pub alpha: f64,
    pub init_seed: u64,
    pub init_gain: f64,
}

impl Default for DalSpec {
    fn default() -> Self {
        Self {
            arch: Architecture::default(),
            task: TaskParams::default(),
            lambda: 1.0,
            alpha: 1.0,
            init_seed: 0,
            init_gain: 1.0,
        }
    }
}

impl DalSpec {
    pub fn build(&self) -> Result<DalGame> {
        DalGame::new(self.arch, Arc::new(make_task(self.task)?), self.lambda, self.alpha)
    }

    pub fn init(&self) -> DVector<f64> {
        self.arch.init_params(self.init_seed, self.init_gain)
    }
}
