//! Game-theoretic tools for domain-adversarial learning.
//!
//! - [`game`]: n-player smooth games, the pseudo-gradient and game Hessian.
//! - [`equilibria`]: local Nash equilibrium certificates.
//! - [`stability`]: Hurwitz analysis, high-resolution ODEs and exact
//!   amplification matrices of integrators on linear games.
//! - [`integrators`]: GD, Nesterov, Adam, the RK2 family, RK4,
//!   extra-gradient and consensus optimization, plus a trajectory runner.
//! - [`quad`]: closed-form quadratic games and the exact linear flow.
//! - [`dal`]: a small domain-adversarial network exposed as a three-player game.

pub mod dal;
pub mod equilibria;
pub mod error;
pub mod game;
pub mod integrators;
pub mod linalg;
pub mod quad;
pub mod stability;

pub use error::{GameError, Result};
pub use game::{
    classify_game, Game, GameClass, GameDefinition, GameJacobian, GradientMode, JointParams, Partition,
    VectorFieldEval,
};
pub use integrators::{IntegratorConfig, Method, TerminalStatus, Trajectory, VectorField};
pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;
pub use quad::QuadraticGame;
