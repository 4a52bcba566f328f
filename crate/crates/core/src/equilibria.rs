//! Local Nash equilibrium certificates.
//!
//! Three conditions, from weakest to strongest:
//! - necessary: `v(w) = 0` and every own-block Hessian `grad^2_{w_i w_i} J_i` is PSD;
//! - sufficient: `v(w) = 0` and every own-block Hessian is PD;
//! - strict: `v(w) = 0` and `H + H^T` is PD.
//!
//! Sufficient and strict are distinct: a game can pass the first and fail
//! the second (the three-player example-1 game at the origin does).

use std::fmt::{self, Write as _};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{GameDefinition, GameJacobian, JointParams};
use crate::linalg;
use crate::quad::QuadraticGame;

/// Default tolerance for analytic derivatives.
pub const TOL_ANALYTIC: f64 = 1e-8;
/// Default tolerance under finite differences.
pub const TOL_FINITE_DIFFERENCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct NeCertificate {
    pub point: JointParams,
    pub stationary: bool,
    /// `||v(w)||_inf`
    pub residual: f64,
    pub necessary_holds: bool,
    pub sufficient_holds: bool,
    pub strict_holds: bool,
    pub min_block_eigenvalues: Vec<f64>,
    pub min_symmetrized_eigenvalue: f64,
    pub tol: f64,
}

/// Outcome of one per-player condition (necessary or sufficient).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub holds: bool,
    pub stationary: bool,
    pub residual: f64,
    pub min_block_eigenvalues: Vec<f64>,
}

struct Ingredients {
    residual: f64,
    hessian: GameJacobian,
    block_min: Vec<f64>,
}

fn ingredients(game: &GameDefinition, w: &JointParams) -> Result<Ingredients> {
    let v = game.pseudo_gradient(w)?;
    let hessian = game.game_hessian(w)?;
    let block_min = (0..game.n_players())
        .map(|i| {
            let b = hessian.player_block(i);
            linalg::min_symmetric_eigenvalue(&(0.5 * (&b + b.transpose())))
        })
        .collect();
    Ok(Ingredients {
        residual: linalg::vec_norm_inf(&v.value),
        hessian,
        block_min,
    })
}

pub fn check_necessary(game: &GameDefinition, w: &JointParams, tol: f64) -> Result<ConditionCheck> {
    let ing = ingredients(game, w)?;
    let stationary = ing.residual <= tol;
    Ok(ConditionCheck {
        holds: stationary && ing.block_min.iter().all(|&l| l >= -tol),
        stationary,
        residual: ing.residual,
        min_block_eigenvalues: ing.block_min,
    })
}

pub fn check_sufficient(game: &GameDefinition, w: &JointParams, tol: f64) -> Result<ConditionCheck> {
    let ing = ingredients(game, w)?;
    let stationary = ing.residual <= tol;
    Ok(ConditionCheck {
        holds: stationary && ing.block_min.iter().all(|&l| l > tol),
        stationary,
        residual: ing.residual,
        min_block_eigenvalues: ing.block_min,
    })
}

/// Full certificate, including the strict condition on `H + H^T`.
pub fn check_strict_local_ne(game: &GameDefinition, w: &JointParams, tol: f64) -> Result<NeCertificate> {
    let ing = ingredients(game, w)?;
    let stationary = ing.residual <= tol;
    let min_sym = linalg::min_symmetric_eigenvalue(&ing.hessian.symmetrized());
    Ok(NeCertificate {
        point: w.clone(),
        stationary,
        residual: ing.residual,
        necessary_holds: stationary && ing.block_min.iter().all(|&l| l >= -tol),
        sufficient_holds: stationary && ing.block_min.iter().all(|&l| l > tol),
        strict_holds: stationary && min_sym > tol,
        min_block_eigenvalues: ing.block_min,
        min_symmetrized_eigenvalue: min_sym,
        tol,
    })
}

impl NeCertificate {
    /// `key: value` report lines.
    pub fn to_report(&self) -> String {
        let mut s = String::new();
        let fmt_list = |xs: &[f64]| xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "point: [{}]", fmt_list(self.point.values.as_slice()));
        let _ = writeln!(s, "tolerance: {:e}", self.tol);
        let _ = writeln!(s, "stationary: {}", self.stationary);
        let _ = writeln!(s, "residual_inf: {:e}", self.residual);
        let _ = writeln!(s, "min_block_eigenvalues: [{}]", fmt_list(&self.min_block_eigenvalues));
        let _ = writeln!(s, "min_symmetrized_eigenvalue: {:e}", self.min_symmetrized_eigenvalue);
        let _ = writeln!(s, "necessary_holds: {}", self.necessary_holds);
        let _ = writeln!(s, "sufficient_holds: {}", self.sufficient_holds);
        let _ = writeln!(s, "strict_holds: {}", self.strict_holds);
        let _ = writeln!(s, "verdict: {}", self.verdict());
        s
    }

    /// One-line human summary.
    pub fn verdict(&self) -> &'static str {
        if !self.stationary {
            "not stationary (no NE here)"
        } else if !self.necessary_holds {
            "no NE at this point (necessary condition fails)"
        } else if self.strict_holds && self.sufficient_holds {
            "strict local NE"
        } else if self.sufficient_holds {
            "local NE (sufficient condition holds, strict condition fails)"
        } else {
            "inconclusive (necessary holds, sufficient fails)"
        }
    }
}

/// Whether `w` is a fixed point of the exact best-response map.
pub fn br_fixed_point_check(game: &QuadraticGame, w: &DVector<f64>, tol: f64) -> Result<bool> {
    let br = game.best_response(w)?;
    Ok(linalg::vec_norm_inf(&(br - w)) <= tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StationaryKind {
    StrictLocalMin,
    StrictSaddle,
    Degenerate,
}

impl fmt::Display for StationaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StationaryKind::StrictLocalMin => "strict-local-min",
            StationaryKind::StrictSaddle => "strict-saddle",
            StationaryKind::Degenerate => "degenerate",
        })
    }
}

/// Classify a stationary point of a potential game from its (symmetric) Hessian.
pub fn classify_stationary_point(h: &nalgebra::DMatrix<f64>, tol: f64) -> Result<StationaryKind> {
    let asym = linalg::max_abs(&(h - h.transpose()));
    if asym > tol {
        return Err(GameError::AsymmetricInput(asym));
    }
    let eig = linalg::symmetric_eigenvalues(h);
    let Some(&min) = eig.first() else {
        return Ok(StationaryKind::Degenerate);
    };
    if min > tol {
        Ok(StationaryKind::StrictLocalMin)
    } else if min < -tol && eig[1..].iter().all(|&l| l > tol) {
        Ok(StationaryKind::StrictSaddle)
    } else {
        Ok(StationaryKind::Degenerate)
    }
}
