//! Local stability of gradient-play dynamics and of its discretizations.
//!
//! Two kinds of answers live here. The continuous ones come from the
//! high-resolution ODE of each integrator and are first-order accurate in
//! the step size: the Hurwitz test, the GD step-size bound and the RK2 and
//! EG conditions. The exact ones come from the one-step amplification
//! matrix of an integrator on a linear field `v(w) = M w`; its spectral
//! radius decides discrete stability and is the ground truth.
//!
//! Note on the worked example with field `A`: the GD bound
//! `-2a / (b^2 - a^2)` evaluates to `6/9787 ~ 6.13e-4`, while the exact
//! Euler threshold `-2a / (a^2 + b^2)` is `6/9805 ~ 6.12e-4`. A value of
//! `6.2e-3` is an order of magnitude too large; Euler at `eta = 1e-3`
//! already diverges on that game.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::GameDefinition;
use crate::integrators::Method;
use crate::linalg;

/// EG continuous-time condition for one eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgCondition {
    pub eigenvalue: Complex64,
    /// `a + (eta/2)(a^2 - b^2)`
    pub value: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Spectrum of the dynamics Jacobian, real part descending.
    pub eigenvalues: Vec<Complex64>,
    pub hurwitz_stable: bool,
    pub gd_eta_bound: Option<f64>,
    pub rk2_stable_flag: bool,
    /// Advisory; filled by [`SpectrumReport::with_eg_conditions`].
    pub eg_conditions: Vec<EgCondition>,
}

/// Spectrum and Hurwitz verdict of a dynamics Jacobian (e.g. `-grad v(w*)`).
pub fn hurwitz_check(dynamics_jacobian: &DMatrix<f64>) -> Result<SpectrumReport> {
    let eigenvalues = linalg::eigenvalues(dynamics_jacobian)?;
    let hurwitz_stable = eigenvalues.iter().all(|z| z.re < 0.0);
    let gd_eta_bound = if hurwitz_stable {
        gd_eta_bound(&eigenvalues)?
    } else {
        None
    };
    Ok(SpectrumReport {
        rk2_stable_flag: rk2_stability_flag(&eigenvalues),
        eigenvalues,
        hurwitz_stable,
        gd_eta_bound,
        eg_conditions: Vec::new(),
    })
}

/// Largest GD step size allowed by the high-resolution ODE: the minimum of
/// `-2a / (b^2 - a^2)` over eigenvalues `a + ib` with `|a| < |b|`. `None`
/// when no eigenvalue has a dominant imaginary part.
pub fn gd_eta_bound(spectrum: &[Complex64]) -> Result<Option<f64>> {
    if let Some(z) = spectrum.iter().find(|z| z.re >= 0.0) {
        return Err(GameError::NotHurwitz(z.re));
    }
    Ok(spectrum
        .iter()
        .filter(|z| z.re.abs() < z.im.abs())
        .map(|z| -2.0 * z.re / (z.im * z.im - z.re * z.re))
        .reduce(f64::min))
}

/// RK2's high-resolution ODE is the gradient-play flow up to `O(eta^2)`:
/// stable iff every real part is negative, with no step-size bound.
pub fn rk2_stability_flag(spectrum: &[Complex64]) -> bool {
    !spectrum.is_empty() && spectrum.iter().all(|z| z.re < 0.0)
}

/// `a + (eta/2)(a^2 - b^2) < 0` per eigenvalue. Advisory only; the EG
/// amplification matrix is the authoritative check.
pub fn eg_continuous_condition(spectrum: &[Complex64], eta: f64) -> Vec<EgCondition> {
    spectrum
        .iter()
        .map(|&z| {
            let value = z.re + 0.5 * eta * (z.re * z.re - z.im * z.im);
            EgCondition {
                eigenvalue: z,
                value,
                satisfied: value < 0.0,
            }
        })
        .collect()
}

/// Exact Euler threshold `min -2a / (a^2 + b^2)` over the dynamics spectrum.
pub fn euler_exact_threshold(spectrum: &[Complex64]) -> Option<f64> {
    if spectrum.iter().any(|z| z.re >= 0.0) {
        return None;
    }
    spectrum
        .iter()
        .map(|z| -2.0 * z.re / z.norm_sqr())
        .reduce(f64::min)
}

impl SpectrumReport {
    pub fn with_eg_conditions(mut self, eta: f64) -> Self {
        self.eg_conditions = eg_continuous_condition(&self.eigenvalues, eta);
        self
    }

    pub fn to_report(&self) -> String {
        let mut s = String::new();
        for (k, z) in self.eigenvalues.iter().enumerate() {
            let _ = writeln!(s, "eigenvalue_{k}: {}", fmt_complex(*z));
        }
        let _ = writeln!(s, "hurwitz_stable: {}", self.hurwitz_stable);
        match self.gd_eta_bound {
            Some(b) => {
                let _ = writeln!(s, "gd_eta_bound: {b:e}");
            }
            None => {
                let _ = writeln!(s, "gd_eta_bound: none");
            }
        }
        let _ = writeln!(s, "rk2_stable_flag: {}", self.rk2_stable_flag);
        for (k, c) in self.eg_conditions.iter().enumerate() {
            let _ = writeln!(s, "eg_condition_{k}: {:e} ({})", c.value, if c.satisfied { "satisfied" } else { "violated" });
        }
        s
    }
}

pub fn fmt_complex(z: Complex64) -> String {
    if z.im >= 0.0 {
        format!("{:e}+{:e}i", z.re, z.im)
    } else {
        format!("{:e}-{:e}i", z.re, -z.im)
    }
}

/// One-step map of an integrator on `v(w) = M w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Amplification {
    pub matrix: DMatrix<f64>,
    pub spectral_radius: f64,
    pub stable: bool,
}

/// Exact amplification matrix of `method` at step `eta` on `v(w) = M w`.
///
/// Nesterov momentum acts on the lifted state `(w, buffer)` and yields a
/// `2d x 2d` matrix. Adam is nonlinear in its state and is rejected.
pub fn amplification_matrix(m: &DMatrix<f64>, method: Method, eta: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(GameError::DimensionMismatch { expected: n, got: m.ncols() });
    }
    method.validate()?;
    let z = -eta * m;
    let id = DMatrix::<f64>::identity(n, n);
    Ok(match method {
        Method::Euler => &id + &z,
        // every member of the RK2 family has the same linear map
        Method::Rk2 { .. } => linalg::matrix_polynomial(&z, &[1.0, 1.0, 0.5]),
        Method::Rk4 => linalg::matrix_polynomial(&z, &[1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0]),
        Method::ExtraGradient => linalg::matrix_polynomial(&z, &[1.0, 1.0, 1.0]),
        Method::Consensus { gamma } => &id + &z - gamma * m.transpose() * m,
        Method::Nesterov { momentum } => {
            let base = &id + &z;
            let mut lifted = DMatrix::zeros(2 * n, 2 * n);
            lifted.view_mut((0, 0), (n, n)).copy_from(&base);
            lifted.view_mut((0, n), (n, n)).copy_from(&(momentum * &base));
            lifted.view_mut((n, 0), (n, n)).copy_from(&z);
            lifted.view_mut((n, n), (n, n)).copy_from(&(momentum * &base));
            lifted
        }
        Method::Adam { .. } => return Err(GameError::UnsupportedMethod("adam")),
    })
}

pub fn discrete_stability_map(m: &DMatrix<f64>, method: Method, eta: f64) -> Result<Amplification> {
    let matrix = amplification_matrix(m, method, eta)?;
    let spectral_radius = linalg::spectral_radius(&matrix)?;
    Ok(Amplification {
        matrix,
        spectral_radius,
        stable: spectral_radius < 1.0,
    })
}

/// Smallest step size at which `method` stops being stable on `v = M w`,
/// found by geometric scanning then bisection on the amplification spectral
/// radius. `None` when unstable already at `eta = 1e-10` or still stable at
/// `eta = 1e6`.
pub fn exact_threshold(m: &DMatrix<f64>, method: Method) -> Result<Option<f64>> {
    let stable = |eta: f64| -> Result<bool> { Ok(discrete_stability_map(m, method, eta)?.stable) };
    let mut lo = 1e-10;
    if !stable(lo)? {
        return Ok(None);
    }
    let mut hi = lo;
    loop {
        hi *= 2.0;
        if hi > 1e6 {
            return Ok(None);
        }
        if !stable(hi)? {
            break;
        }
        lo = hi;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Which integrator's modified equation to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HighResKind {
    Gd,
    Rk2,
    Rk4,
}

/// The continuous dynamics a discrete integrator tracks to higher order.
#[derive(Debug, Clone)]
pub struct HighResOde {
    pub game: GameDefinition,
    pub kind: HighResKind,
    pub eta: f64,
}

impl HighResOde {
    pub fn new(game: GameDefinition, kind: HighResKind, eta: f64) -> Self {
        Self { game, kind, eta }
    }

    /// Coefficient multiplying `grad v(w) v(w)` in the field.
    pub fn correction_coefficient(&self) -> f64 {
        match self.kind {
            HighResKind::Gd => -0.5 * self.eta,
            HighResKind::Rk2 | HighResKind::Rk4 => 0.0,
        }
    }

    /// Power of `eta` in the neglected remainder.
    pub fn order_of_validity(&self) -> u32 {
        match self.kind {
            HighResKind::Gd => 2,
            HighResKind::Rk2 => 2,
            HighResKind::Rk4 => 4,
        }
    }

    /// Right-hand side `w' = f(w)`.
    pub fn eval(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        high_res_field(self.kind, &self.game, w, self.eta)
    }
}

/// GD: `-v - (eta/2) grad v v`; RK2 and RK4: `-v`.
pub fn high_res_field(kind: HighResKind, game: &GameDefinition, w: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    let v = game.field(w)?;
    match kind {
        HighResKind::Gd => {
            let hv = game.hessian_vector(w, &v)?;
            Ok(-&v - 0.5 * eta * hv)
        }
        HighResKind::Rk2 | HighResKind::Rk4 => Ok(-v),
    }
}
