//! Smooth n-player games: joint parameters, player costs, the
//! pseudo-gradient `v(w)` and its Jacobian (the game Hessian).
//!
//! Player `i` owns a contiguous block of the joint parameter vector and
//! minimizes its own cost `J_i` over that block only. The pseudo-gradient
//! stacks `grad_{w_i} J_i` for every player; it is a gradient field only
//! for potential games.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::linalg;

/// One player's slice of the joint parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Ordered, contiguous, non-overlapping player blocks covering `0..dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Block>", into = "Vec<Block>")]
pub struct Partition {
    blocks: Vec<Block>,
}

impl Partition {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(GameError::InvalidPartition(format!(
                "need at least 2 players, got {}",
                blocks.len()
            )));
        }
        let mut next = 0;
        for (i, b) in blocks.iter().enumerate() {
            if b.len == 0 {
                return Err(GameError::InvalidPartition(format!("player {i} has an empty block")));
            }
            if b.offset != next {
                return Err(GameError::InvalidPartition(format!(
                    "player {i} starts at {} but previous block ends at {next}",
                    b.offset
                )));
            }
            next += b.len;
        }
        Ok(Self { blocks })
    }

    /// Contiguous blocks with the given sizes, in order.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut offset = 0;
        let blocks = sizes
            .iter()
            .map(|&len| {
                let b = Block { offset, len };
                offset += len;
                b
            })
            .collect();
        Self::new(blocks)
    }

    pub fn n_players(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn range(&self, player: usize) -> Range<usize> {
        self.blocks[player].range()
    }

    /// Player owning coordinate `j`.
    pub fn owner(&self, j: usize) -> usize {
        self.blocks
            .iter()
            .position(|b| b.range().contains(&j))
            .unwrap_or(self.blocks.len() - 1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len).collect()
    }
}

impl TryFrom<Vec<Block>> for Partition {
    type Error = GameError;
    fn try_from(blocks: Vec<Block>) -> Result<Self> {
        Self::new(blocks)
    }
}

impl From<Partition> for Vec<Block> {
    fn from(p: Partition) -> Self {
        p.blocks
    }
}

/// The game state: joint parameters with their player partition.
#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    pub values: DVector<f64>,
    partition: Partition,
}

impl JointParams {
    pub fn new(values: DVector<f64>, partition: Partition) -> Result<Self> {
        if values.len() != partition.dim() {
            return Err(GameError::DimensionMismatch {
                expected: partition.dim(),
                got: values.len(),
            });
        }
        Ok(Self { values, partition })
    }

    pub fn from_slice(values: &[f64], partition: Partition) -> Result<Self> {
        Self::new(DVector::from_column_slice(values), partition)
    }

    pub fn zeros(partition: Partition) -> Self {
        Self {
            values: DVector::zeros(partition.dim()),
            partition,
        }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn player(&self, i: usize) -> &[f64] {
        &self.values.as_slice()[self.partition.range(i)]
    }
}

/// A smooth game. Implementors supply the player costs and, optionally,
/// analytic derivatives; anything missing is filled in by central finite
/// differences in [`GameDefinition`].
pub trait Game: Send + Sync {
    fn partition(&self) -> &Partition;

    /// `(J_1(w), ..., J_n(w))`.
    fn costs(&self, w: &DVector<f64>) -> Vec<f64>;

    /// `J_i(w)`; override when a single cost is cheaper than all of them.
    fn cost(&self, player: usize, w: &DVector<f64>) -> f64 {
        self.costs(w)[player]
    }

    /// Stacked analytic pseudo-gradient, when available.
    fn analytic_pseudo_gradient(&self, _w: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    /// Analytic game Hessian, when available.
    fn analytic_hessian(&self, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// Access to the risk / divergence split of a three-player
    /// domain-adversarial game.
    fn risk_divergence(&self) -> Option<&dyn RiskDivergence> {
        None
    }
}

/// A three-player game of the form
/// `J_1 = l + a d`, `J_2 = l + a lam d`, `J_3 = -a d`,
/// with `l` depending on players 1 and 2 only.
pub trait RiskDivergence: Send + Sync {
    /// Full-length gradient of the source risk `l`.
    fn risk_gradient(&self, w: &DVector<f64>) -> DVector<f64>;
    /// Full-length gradient of the divergence estimate `d`.
    fn divergence_gradient(&self, w: &DVector<f64>) -> DVector<f64>;
    /// GRL coefficient.
    fn lambda(&self) -> f64;
    /// Risk/divergence tradeoff.
    fn alpha(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Pseudo-gradient value at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldEval {
    pub value: DVector<f64>,
    pub base_point: JointParams,
}

/// Jacobian of the pseudo-gradient at a point. Not symmetric in general.
#[derive(Debug, Clone, PartialEq)]
pub struct GameJacobian {
    pub matrix: DMatrix<f64>,
    pub base_point: JointParams,
}

impl GameJacobian {
    /// `grad^2_{w_i w_i} J_i`, the diagonal block of player `i`.
    pub fn player_block(&self, player: usize) -> DMatrix<f64> {
        let r = self.base_point.partition().range(player);
        self.matrix.view((r.start, r.start), (r.len(), r.len())).into_owned()
    }

    pub fn symmetrized(&self) -> DMatrix<f64> {
        &self.matrix + self.matrix.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameClass {
    Potential,
    PurelyAdversarial,
    General,
}

impl fmt::Display for GameClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GameClass::Potential => "potential",
            GameClass::PurelyAdversarial => "purely-adversarial",
            GameClass::General => "general",
        };
        f.write_str(s)
    }
}

/// Central-difference step for coordinate value `x`.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// A game together with the differentiation mode used to evaluate it.
/// Cheap to clone and safe to share across threads.
#[derive(Clone)]
pub struct GameDefinition {
    game: Arc<dyn Game>,
    mode: GradientMode,
}

impl fmt::Debug for GameDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameDefinition")
            .field("partition", self.game.partition())
            .field("mode", &self.mode)
            .finish()
    }
}

impl GameDefinition {
    pub fn new<G: Game + 'static>(game: G, mode: GradientMode) -> Self {
        Self {
            game: Arc::new(game),
            mode,
        }
    }

    pub fn from_arc(game: Arc<dyn Game>, mode: GradientMode) -> Self {
        Self { game, mode }
    }

    pub fn with_mode(&self, mode: GradientMode) -> Self {
        Self {
            game: Arc::clone(&self.game),
            mode,
        }
    }

    pub fn game(&self) -> &dyn Game {
        self.game.as_ref()
    }

    pub fn mode(&self) -> GradientMode {
        self.mode
    }

    pub fn partition(&self) -> &Partition {
        self.game.partition()
    }

    pub fn n_players(&self) -> usize {
        self.partition().n_players()
    }

    pub fn dim(&self) -> usize {
        self.partition().dim()
    }

    /// Joint parameters over this game's partition.
    pub fn params(&self, values: &[f64]) -> Result<JointParams> {
        JointParams::from_slice(values, self.partition().clone())
    }

    fn check_point(&self, w: &JointParams) -> Result<()> {
        if w.partition() != self.partition() {
            return Err(GameError::InvalidPartition(
                "point partition does not match the game".into(),
            ));
        }
        Ok(())
    }

    pub fn eval_costs(&self, w: &JointParams) -> Result<Vec<f64>> {
        self.check_point(w)?;
        self.costs_raw(&w.values)
    }

    pub(crate) fn costs_raw(&self, w: &DVector<f64>) -> Result<Vec<f64>> {
        let costs = self.game.costs(w);
        if let Some(player) = costs.iter().position(|c| !c.is_finite()) {
            return Err(GameError::NonFiniteValue {
                what: "cost",
                player,
            });
        }
        Ok(costs)
    }

    pub fn pseudo_gradient(&self, w: &JointParams) -> Result<VectorFieldEval> {
        self.check_point(w)?;
        Ok(VectorFieldEval {
            value: self.field(&w.values)?,
            base_point: w.clone(),
        })
    }

    /// Pseudo-gradient on a raw vector (no partition check).
    pub fn field(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        if w.len() != self.dim() {
            return Err(GameError::DimensionMismatch {
                expected: self.dim(),
                got: w.len(),
            });
        }
        let v = match self.mode {
            GradientMode::Analytic => self.game.analytic_pseudo_gradient(w).ok_or_else(|| {
                GameError::InvalidConfig("analytic gradients requested but not provided".into())
            })?,
            GradientMode::FiniteDifference => self.fd_pseudo_gradient(w),
        };
        if let Some(j) = v.iter().position(|x| !x.is_finite()) {
            return Err(GameError::NonFiniteValue {
                what: "pseudo-gradient",
                player: self.partition().owner(j),
            });
        }
        Ok(v)
    }

    fn fd_pseudo_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(w.len());
        let mut probe = w.clone();
        for (player, block) in self.partition().blocks().iter().enumerate() {
            for j in block.range() {
                let h = fd_step(w[j]);
                probe[j] = w[j] + h;
                let plus = self.game.cost(player, &probe);
                probe[j] = w[j] - h;
                let minus = self.game.cost(player, &probe);
                probe[j] = w[j];
                v[j] = (plus - minus) / (2.0 * h);
            }
        }
        v
    }

    pub fn game_hessian(&self, w: &JointParams) -> Result<GameJacobian> {
        self.check_point(w)?;
        Ok(GameJacobian {
            matrix: self.hessian_raw(&w.values)?,
            base_point: w.clone(),
        })
    }

    pub(crate) fn hessian_raw(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        if self.mode == GradientMode::Analytic {
            if let Some(h) = self.game.analytic_hessian(w) {
                return Ok(h);
            }
        }
        // column j = d v / d w_j
        let d = w.len();
        let mut h = DMatrix::zeros(d, d);
        let mut probe = w.clone();
        for j in 0..d {
            let step = fd_step(w[j]);
            probe[j] = w[j] + step;
            let plus = self.field(&probe)?;
            probe[j] = w[j] - step;
            let minus = self.field(&probe)?;
            probe[j] = w[j];
            h.set_column(j, &((plus - minus) / (2.0 * step)));
        }
        Ok(h)
    }

    /// `grad v(w) u`: analytic when available, else one central
    /// directional difference of the field.
    pub fn hessian_vector(&self, w: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if self.mode == GradientMode::Analytic {
            if let Some(h) = self.game.analytic_hessian(w) {
                return Ok(h * u);
            }
        }
        let scale = u.amax();
        if scale == 0.0 {
            return Ok(DVector::zeros(w.len()));
        }
        let step = fd_step(w.amax()) / scale;
        let plus = self.field(&(w + step * u))?;
        let minus = self.field(&(w - step * u))?;
        Ok((plus - minus) / (2.0 * step))
    }

    /// `grad v(w)^T v(w)`, i.e. the gradient of `1/2 ||v(w)||^2`.
    pub fn jacobian_transpose_field(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        if self.mode == GradientMode::Analytic {
            if let Some(h) = self.game.analytic_hessian(w) {
                let v = self.field(w)?;
                return Ok(h.transpose() * v);
            }
        }
        half_sq_norm_gradient(|x| self.field(x), w)
    }

    /// Split `v(w)` into the gradient of the shared risk and the
    /// adversarial remainder.
    pub fn decompose_cooperation_competition(
        &self,
        w: &JointParams,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_point(w)?;
        let split = self.game.risk_divergence().ok_or(GameError::UnsupportedGame)?;
        if self.n_players() != 3 {
            return Err(GameError::UnsupportedGame);
        }
        let (lam, alpha) = (split.lambda(), split.alpha());
        let grad_l = split.risk_gradient(&w.values);
        let grad_d = split.divergence_gradient(&w.values);
        let p = self.partition();
        let mut potential = DVector::zeros(w.dim());
        let mut adversarial = DVector::zeros(w.dim());
        for (player, dcoef) in [(0, alpha), (1, alpha * lam), (2, -alpha)] {
            for j in p.range(player) {
                if player < 2 {
                    potential[j] = grad_l[j];
                }
                adversarial[j] = dcoef * grad_d[j];
            }
        }
        for (j, x) in potential.iter().chain(adversarial.iter()).enumerate() {
            if !x.is_finite() {
                return Err(GameError::NonFiniteValue {
                    what: "decomposition",
                    player: p.owner(j % w.dim()),
                });
            }
        }
        Ok((potential, adversarial))
    }
}

/// Central differences of `1/2 ||f(x)||^2`.
pub(crate) fn half_sq_norm_gradient<F>(f: F, w: &DVector<f64>) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut g = DVector::zeros(w.len());
    let mut probe = w.clone();
    for j in 0..w.len() {
        let h = fd_step(w[j]);
        probe[j] = w[j] + h;
        let plus = 0.5 * f(&probe)?.norm_squared();
        probe[j] = w[j] - h;
        let minus = 0.5 * f(&probe)?.norm_squared();
        probe[j] = w[j];
        g[j] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

/// Potential if `H` is symmetric, purely adversarial if skew-symmetric
/// (or its spectrum is purely imaginary), general otherwise.
pub fn classify_game(h: &DMatrix<f64>, tol: f64) -> GameClass {
    let ht = h.transpose();
    if linalg::norm_inf(&(h - &ht)) <= tol {
        return GameClass::Potential;
    }
    if linalg::norm_inf(&(h + &ht)) <= tol {
        return GameClass::PurelyAdversarial;
    }
    if let Ok(eig) = linalg::eigenvalues(h) {
        if !eig.is_empty() && eig.iter().all(|z| z.re.abs() <= tol) {
            return GameClass::PurelyAdversarial;
        }
    }
    GameClass::General
}

/// A game given directly by closures. Handy for tests and one-off games.
pub struct FnGame<C>
where
    C: Fn(&DVector<f64>) -> Vec<f64> + Send + Sync,
{
    partition: Partition,
    costs: C,
}

impl<C> FnGame<C>
where
    C: Fn(&DVector<f64>) -> Vec<f64> + Send + Sync,
{
    pub fn new(partition: Partition, costs: C) -> Self {
        Self { partition, costs }
    }
}

impl<C> Game for FnGame<C>
where
    C: Fn(&DVector<f64>) -> Vec<f64> + Send + Sync,
{
    fn partition(&self) -> &Partition {
        &self.partition
    }

    fn costs(&self, w: &DVector<f64>) -> Vec<f64> {
        (self.costs)(w)
    }
}
