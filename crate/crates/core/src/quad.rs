//! Quadratic games `J_i(w) = 1/2 w^T Q_i w`, whose pseudo-gradient is
//! linear, `v(w) = M w`, with the stationary point at the origin.
//!
//! Also hosts the worked example games and the exact linear flow
//! `exp(-t M) w0` used as the reference solution for integrator tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{Game, GameDefinition, GradientMode, Partition, RiskDivergence};
use crate::linalg;

/// Risk / divergence split of a quadratic domain-adversarial game:
/// `l = 1/2 w^T R w`, `d = 1/2 w^T D w`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSplit {
    pub risk: DMatrix<f64>,
    pub divergence: DMatrix<f64>,
    pub lambda: f64,
    pub alpha: f64,
}

impl RiskDivergence for QuadraticSplit {
    fn risk_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.risk * w
    }
    fn divergence_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.divergence * w
    }
    fn lambda(&self) -> f64 {
        self.lambda
    }
    fn alpha(&self) -> f64 {
        self.alpha
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticGame {
    partition: Partition,
    forms: Vec<DMatrix<f64>>,
    field: DMatrix<f64>,
    split: Option<QuadraticSplit>,
}

fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (a + a.transpose())
}

impl QuadraticGame {
    /// One symmetric form per player. Non-symmetric input is symmetrized
    /// (the quadratic form only sees the symmetric part).
    pub fn from_forms(partition: Partition, forms: Vec<DMatrix<f64>>) -> Result<Self> {
        let d = partition.dim();
        if forms.len() != partition.n_players() {
            return Err(GameError::InvalidConfig(format!(
                "{} forms for {} players",
                forms.len(),
                partition.n_players()
            )));
        }
        if let Some(bad) = forms.iter().find(|q| q.nrows() != d || q.ncols() != d) {
            return Err(GameError::DimensionMismatch {
                expected: d,
                got: bad.nrows().max(bad.ncols()),
            });
        }
        let forms: Vec<_> = forms.iter().map(symmetric_part).collect();
        let mut field = DMatrix::zeros(d, d);
        for (i, q) in forms.iter().enumerate() {
            for r in partition.range(i) {
                field.set_row(r, &q.row(r));
            }
        }
        Ok(Self {
            partition,
            forms,
            field,
            split: None,
        })
    }

    /// The game whose pseudo-gradient is `v(w) = M w`. Each player's
    /// diagonal block of `M` is its own cost Hessian and must be symmetric.
    pub fn from_field_matrix(partition: Partition, m: DMatrix<f64>) -> Result<Self> {
        let d = partition.dim();
        if m.nrows() != d || m.ncols() != d {
            return Err(GameError::DimensionMismatch {
                expected: d,
                got: m.nrows(),
            });
        }
        let mut forms = Vec::with_capacity(partition.n_players());
        for i in 0..partition.n_players() {
            let r = partition.range(i);
            let mut q = DMatrix::zeros(d, d);
            for a in r.clone() {
                for b in 0..d {
                    if r.contains(&b) {
                        let asym = (m[(a, b)] - m[(b, a)]).abs();
                        if asym > 1e-12 * (1.0 + m[(a, b)].abs()) {
                            return Err(GameError::InvalidConfig(format!(
                                "diagonal block of player {i} is not symmetric"
                            )));
                        }
                        q[(a, b)] = m[(a, b)];
                    } else {
                        q[(a, b)] = m[(a, b)];
                        q[(b, a)] = m[(a, b)];
                    }
                }
            }
            forms.push(q);
        }
        let mut game = Self::from_forms(partition, forms)?;
        game.field = m;
        Ok(game)
    }

    /// Three-player game `J_1 = l + a d`, `J_2 = l + a lam d`, `J_3 = -a d`.
    pub fn from_risk_divergence(
        partition: Partition,
        risk: DMatrix<f64>,
        divergence: DMatrix<f64>,
        lambda: f64,
        alpha: f64,
    ) -> Result<Self> {
        if partition.n_players() != 3 {
            return Err(GameError::InvalidPartition(
                "risk/divergence games have exactly three players".into(),
            ));
        }
        let risk = symmetric_part(&risk);
        let divergence = symmetric_part(&divergence);
        let forms = vec![
            &risk + alpha * &divergence,
            &risk + alpha * lambda * &divergence,
            -alpha * &divergence,
        ];
        let mut game = Self::from_forms(partition, forms)?;
        game.split = Some(QuadraticSplit {
            risk,
            divergence,
            lambda,
            alpha,
        });
        Ok(game)
    }

    /// The linear dynamics matrix `M` with `v(w) = M w`.
    pub fn field_matrix(&self) -> &DMatrix<f64> {
        &self.field
    }

    pub fn forms(&self) -> &[DMatrix<f64>] {
        &self.forms
    }

    pub fn split(&self) -> Option<&QuadraticSplit> {
        self.split.as_ref()
    }

    pub fn definition(&self) -> GameDefinition {
        GameDefinition::new(self.clone(), GradientMode::Analytic)
    }

    /// Unique best response of every player to the others' current
    /// parameters. Fails if a player's block Hessian is not positive definite.
    pub fn best_response(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let mut br = w.clone();
        for (i, q) in self.forms.iter().enumerate() {
            let r = self.partition.range(i);
            let n = r.len();
            let block = q.view((r.start, r.start), (n, n)).into_owned();
            let chol = block.clone().cholesky().ok_or(GameError::SingularBlock(i))?;
            if linalg::min_symmetric_eigenvalue(&block) <= 0.0 {
                return Err(GameError::SingularBlock(i));
            }
            // grad_i J_i = Q_ii w_i + Q_i,-i w_-i = 0
            let mut rhs = DVector::zeros(n);
            for (a, row) in r.clone().enumerate() {
                let mut s = 0.0;
                for c in 0..w.len() {
                    if !r.contains(&c) {
                        s += q[(row, c)] * w[c];
                    }
                }
                rhs[a] = -s;
            }
            let sol = chol.solve(&rhs);
            br.rows_mut(r.start, n).copy_from(&sol);
        }
        Ok(br)
    }

    pub fn to_spec(&self) -> QuadraticSpec {
        let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        let players = self.partition.sizes();
        match &self.split {
            Some(s) => QuadraticSpec::RiskDivergence {
                players,
                risk: to_rows(&s.risk),
                divergence: to_rows(&s.divergence),
                lambda: s.lambda,
                alpha: s.alpha,
            },
            None => QuadraticSpec::Forms {
                players,
                forms: self.forms.iter().map(to_rows).collect(),
            },
        }
    }
}

impl Game for QuadraticGame {
    fn partition(&self) -> &Partition {
        &self.partition
    }

    fn costs(&self, w: &DVector<f64>) -> Vec<f64> {
        self.forms.iter().map(|q| 0.5 * w.dot(&(q * w))).collect()
    }

    fn cost(&self, player: usize, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.forms[player] * w))
    }

    fn analytic_pseudo_gradient(&self, w: &DVector<f64>) -> Option<DVector<f64>> {
        let mut v = DVector::zeros(w.len());
        for (i, q) in self.forms.iter().enumerate() {
            for r in self.partition.range(i) {
                v[r] = q.row(r).dot(&w.transpose());
            }
        }
        Some(v)
    }

    fn analytic_hessian(&self, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.field.clone())
    }

    fn risk_divergence(&self) -> Option<&dyn RiskDivergence> {
        self.split.as_ref().map(|s| s as &dyn RiskDivergence)
    }
}

/// Serializable description of a quadratic game (matrix literals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuadraticSpec {
    Named {
        name: String,
    },
    Forms {
        players: Vec<usize>,
        forms: Vec<Vec<Vec<f64>>>,
    },
    Field {
        players: Vec<usize>,
        field: Vec<Vec<f64>>,
    },
    RiskDivergence {
        players: Vec<usize>,
        risk: Vec<Vec<f64>>,
        divergence: Vec<Vec<f64>>,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one")]
        alpha: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(GameError::DimensionMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl QuadraticSpec {
    pub fn build(&self) -> Result<QuadraticGame> {
        match self {
            QuadraticSpec::Named { name } => named_example(name),
            QuadraticSpec::Forms { players, forms } => QuadraticGame::from_forms(
                Partition::from_sizes(players)?,
                forms.iter().map(|f| matrix_from_rows(f)).collect::<Result<_>>()?,
            ),
            QuadraticSpec::Field { players, field } => {
                QuadraticGame::from_field_matrix(Partition::from_sizes(players)?, matrix_from_rows(field)?)
            }
            QuadraticSpec::RiskDivergence {
                players,
                risk,
                divergence,
                lambda,
                alpha,
            } => QuadraticGame::from_risk_divergence(
                Partition::from_sizes(players)?,
                matrix_from_rows(risk)?,
                matrix_from_rows(divergence)?,
                *lambda,
                *alpha,
            ),
        }
    }
}

/// Names accepted by [`named_example`].
pub const EXAMPLE_NAMES: [&str; 3] = ["example1-3p", "example1-2p", "example2"];

pub fn named_example(name: &str) -> Result<QuadraticGame> {
    match name {
        "example1-3p" => Ok(example1_three_player()),
        "example1-2p" => Ok(example1_two_player()),
        "example2" => Ok(example2()),
        other => Err(GameError::InvalidConfig(format!(
            "unknown example game {other:?}; expected one of {EXAMPLE_NAMES:?}"
        ))),
    }
}

/// Hessian of `J(w) = 1/2 (w1^2 + 4 w1 w2 + w2^2 - w3^2)`.
fn example1_form() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, -1.0])
}

/// Three players with `J_1 = J_2 = J` and `J_3 = -J`.
pub fn example1_three_player() -> QuadraticGame {
    let j = example1_form();
    QuadraticGame::from_forms(Partition::from_sizes(&[1, 1, 1]).unwrap(), vec![j.clone(), j.clone(), -j])
        .expect("static example")
}

/// Same costs, but `(w1, w2)` is a single team player: `J_12 = J`, `J_3 = -J`.
pub fn example1_two_player() -> QuadraticGame {
    let j = example1_form();
    QuadraticGame::from_forms(Partition::from_sizes(&[2, 1]).unwrap(), vec![j.clone(), -j])
        .expect("static example")
}

/// `l = w1^2 + 2 w1 w2 + w2^2`, `d = w2^2 + 99 w2 w3 - w3^2`, `lambda = alpha = 1`.
pub fn example2() -> QuadraticGame {
    let risk = DMatrix::from_row_slice(3, 3, &[2.0, 2.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    let divergence = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 2.0, 99.0, 0.0, 99.0, -2.0]);
    QuadraticGame::from_risk_divergence(Partition::from_sizes(&[1, 1, 1]).unwrap(), risk, divergence, 1.0, 1.0)
        .expect("static example")
}

/// Largest `||t M||_1` handed to a single matrix exponential.
const FLOW_CHUNK_NORM: f64 = 10.0;
const MAX_FLOW_CHUNKS: f64 = 1e6;

fn norm_one(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Seeded standard-normal starting point.
pub fn seeded_start(dim: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// `exp(-t M) w0`, the exact solution of `w' = -M w` at time `t`.
///
/// Long horizons are split into pieces with `||t M||_1 <= 10`, each handled
/// by a scaling-and-squaring Pade exponential.
pub fn exact_flow(m: &DMatrix<f64>, w0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if m.nrows() != m.ncols() || m.nrows() != w0.len() {
        return Err(GameError::DimensionMismatch {
            expected: w0.len(),
            got: m.nrows(),
        });
    }
    if !t.is_finite() || m.iter().any(|x| !x.is_finite()) || w0.iter().any(|x| !x.is_finite()) {
        return Err(GameError::NonFinite("flow input"));
    }
    if t == 0.0 {
        return Ok(w0.clone());
    }
    let chunks = (norm_one(m) * t.abs() / FLOW_CHUNK_NORM).ceil().max(1.0);
    if chunks > MAX_FLOW_CHUNKS {
        return Err(GameError::AccuracyContract(format!(
            "||tM|| = {:e} needs {chunks} exponential pieces",
            norm_one(m) * t.abs()
        )));
    }
    let step = (-(t / chunks) * m).exp();
    let mut w = w0.clone();
    for _ in 0..chunks as usize {
        w = &step * w;
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(GameError::AccuracyContract("flow overflowed".into()));
    }
    Ok(w)
}

/// Spectral shape of a random game's field matrix `M` (the game Hessian).
/// The gradient-play dynamics matrix is `-M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case")]
pub enum SpectralProfile {
    /// Symmetric `M` with eigenvalues drawn from `[min, max]`: a potential game.
    Symmetric { min: f64, max: f64 },
    /// Skew-symmetric `M` scaled to spectral radius `radius`: purely adversarial.
    Skew { radius: f64 },
    /// Conjugate pairs `a +- i imag` with `a` drawn from `[real_min, real_max]`.
    Mixed { real_min: f64, real_max: f64, imag: f64 },
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q
}

/// Random quadratic game with a controlled spectrum, built as
/// `M = Q (D + S) Q^T` with `Q` orthogonal, `D` diagonal and `S` skew.
///
/// With `d_per_player > 1` each player's diagonal block is replaced by its
/// symmetric part (a cost Hessian must be symmetric), so `Mixed` spectra
/// are then only approximate. `Symmetric` spectra are always exact; `Skew`
/// games use zero diagonal blocks and are always exactly skew.
pub fn random_quadratic(
    seed: u64,
    n_players: usize,
    d_per_player: usize,
    profile: SpectralProfile,
) -> Result<QuadraticGame> {
    if d_per_player == 0 {
        return Err(GameError::InvalidConfig("d_per_player must be >= 1".into()));
    }
    let partition = Partition::from_sizes(&vec![d_per_player; n_players])?;
    let d = partition.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = match profile {
        SpectralProfile::Symmetric { min, max } => {
            let q = random_orthogonal(&mut rng, d);
            let diag = DVector::from_fn(d, |_, _| rng.random_range(min..=max));
            &q * DMatrix::from_diagonal(&diag) * q.transpose()
        }
        SpectralProfile::Skew { radius } => {
            let mut s = DMatrix::zeros(d, d);
            for a in 0..d {
                for b in a + 1..d {
                    if partition.owner(a) != partition.owner(b) {
                        let x: f64 = rng.sample(StandardNormal);
                        s[(a, b)] = x;
                        s[(b, a)] = -x;
                    }
                }
            }
            let rho = linalg::spectral_radius(&s)?;
            if rho > 0.0 {
                s *= radius / rho;
            }
            s
        }
        SpectralProfile::Mixed {
            real_min,
            real_max,
            imag,
        } => {
            let q = random_orthogonal(&mut rng, d);
            let mut core = DMatrix::zeros(d, d);
            let mut k = 0;
            while k + 1 < d {
                let a = rng.random_range(real_min..=real_max);
                core[(k, k)] = a;
                core[(k + 1, k + 1)] = a;
                core[(k, k + 1)] = imag;
                core[(k + 1, k)] = -imag;
                k += 2;
            }
            if k < d {
                core[(k, k)] = rng.random_range(real_min..=real_max);
            }
            &q * core * q.transpose()
        }
    };
    for i in 0..n_players {
        let r = partition.range(i);
        let n = r.len();
        let block = m.view((r.start, r.start), (n, n)).into_owned();
        m.view_mut((r.start, r.start), (n, n)).copy_from(&symmetric_part(&block));
    }
    QuadraticGame::from_field_matrix(partition, m)
}
