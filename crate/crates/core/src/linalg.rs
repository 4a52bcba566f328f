//! Dense eigenvalue routines and small matrix helpers.
//!
//! The nonsymmetric solver follows the classic EISPACK pipeline: diagonal
//! balancing, Householder reduction to upper Hessenberg form, then the
//! Francis double-shift QR iteration on the Hessenberg matrix. Only
//! eigenvalues are computed; no Schur vectors are accumulated.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{GameError, Result};

/// Iteration budget per eigenvalue before [`GameError::ConvergenceFailure`].
const MAX_SWEEPS_PER_EIGENVALUE: usize = 60;

/// Radix used by the balancing step (powers of two keep it exact).
const RADIX: f64 = 2.0;

/// Eigenvalues of a real square matrix, sorted by real part descending
/// (ties broken by imaginary part descending).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(GameError::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(GameError::NonFinite("eigenvalue input"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h = a.clone();
    balance(&mut h);
    reduce_to_hessenberg(&mut h);
    let mut eig = hessenberg_qr(&mut h)?;
    sort_spectrum(&mut eig);
    Ok(eig)
}

pub(crate) fn sort_spectrum(eig: &mut [Complex64]) {
    eig.sort_by(|x, y| {
        y.re.partial_cmp(&x.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y.im.partial_cmp(&x.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Spectral radius from the full spectrum.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Ascending eigenvalues of a symmetric matrix (tridiagonalization + implicit QL).
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    vals
}

/// Smallest eigenvalue of a symmetric matrix; `+inf` for an empty matrix.
pub fn min_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(a)
        .first()
        .copied()
        .unwrap_or(f64::INFINITY)
}

/// Maximum absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Maximum absolute row sum (the induced infinity norm).
pub fn norm_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `sum_k coeffs[k] * A^k`, evaluated by Horner's rule.
pub fn matrix_polynomial(a: &DMatrix<f64>, coeffs: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for &c in coeffs.iter().rev() {
        acc = &acc * a;
        for i in 0..n {
            acc[(i, i)] += c;
        }
    }
    acc
}

/// Scale rows and columns by powers of two so that row and column norms
/// are comparable. Similarity-preserving; improves eigenvalue accuracy on
/// badly scaled matrices.
fn balance(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
    }
}

/// Householder similarity reduction to upper Hessenberg form, in place.
fn reduce_to_hessenberg(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    if n < 3 {
        return;
    }
    let mut u = vec![0.0; n];
    for k in 0..n - 2 {
        let scale: f64 = (k + 1..n).map(|i| a[(i, k)].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut h = 0.0;
        for i in k + 1..n {
            u[i] = a[(i, k)] / scale;
            h += u[i] * u[i];
        }
        let mut g = h.sqrt();
        if u[k + 1] > 0.0 {
            g = -g;
        }
        h -= u[k + 1] * g;
        u[k + 1] -= g;

        // left: A <- (I - u u^T / h) A
        for j in k..n {
            let f: f64 = (k + 1..n).map(|i| u[i] * a[(i, j)]).sum::<f64>() / h;
            for i in k + 1..n {
                a[(i, j)] -= f * u[i];
            }
        }
        // right: A <- A (I - u u^T / h)
        for i in 0..n {
            let f: f64 = (k + 1..n).map(|j| u[j] * a[(i, j)]).sum::<f64>() / h;
            for j in k + 1..n {
                a[(i, j)] -= f * u[j];
            }
        }
        a[(k + 1, k)] = scale * g;
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

#[inline]
fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (destroys `a`).
fn hessenberg_qr(a: &mut DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    let eps = f64::EPSILON;
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }

    let mut nn = n as isize - 1;
    let mut shift = 0.0;
    while nn >= 0 {
        let mut its = 0usize;
        loop {
            let top = nn as usize;
            // look for a negligible subdiagonal element
            let mut l = top;
            while l >= 1 {
                let mut s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[(l, l - 1)].abs() <= eps * s {
                    a[(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[(top, top)];
            if l == top {
                wr[top] = x + shift;
                wi[top] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = a[(top - 1, top - 1)];
            let mut w = a[(top, top - 1)] * a[(top - 1, top)];
            if l == top - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += shift;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[top - 1] = x + z;
                    wr[top] = x + z;
                    if z != 0.0 {
                        wr[top] = x - w / z;
                    }
                    wi[top - 1] = 0.0;
                    wi[top] = 0.0;
                } else {
                    wr[top - 1] = x + p;
                    wr[top] = x + p;
                    wi[top - 1] = z;
                    wi[top] = -z;
                }
                nn -= 2;
                break;
            }

            if its >= MAX_SWEEPS_PER_EIGENVALUE {
                return Err(GameError::ConvergenceFailure(its));
            }
            if its == 10 || its == 20 {
                // exceptional shift
                shift += x;
                for i in 0..=top {
                    a[(i, i)] -= x;
                }
                let s = a[(top, top - 1)].abs() + a[(top - 1, top - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;

            // look for two consecutive small subdiagonal elements
            let mut m = top - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[(m + 1, m)] + a[(m, m + 1)];
                q = a[(m + 1, m + 1)] - z - rr - ss;
                r = a[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=top {
                a[(i, i - 2)] = 0.0;
                if i != m + 2 {
                    a[(i, i - 3)] = 0.0;
                }
            }

            // double QR sweep on rows l..=top, columns m..=top
            for k in m..top {
                let notlast = k != top - 1;
                if k != m {
                    p = a[(k, k - 1)];
                    q = a[(k + 1, k - 1)];
                    r = if notlast { a[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l != m {
                        a[(k, k - 1)] = -a[(k, k - 1)];
                    }
                } else {
                    a[(k, k - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=top {
                    let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                    if notlast {
                        pp += r * a[(k + 2, j)];
                        a[(k + 2, j)] -= pp * z;
                    }
                    a[(k + 1, j)] -= pp * y;
                    a[(k, j)] -= pp * x;
                }
                let mmin = top.min(k + 3);
                for i in l..=mmin {
                    let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                    if notlast {
                        pp += z * a[(i, k + 2)];
                        a[(i, k + 2)] -= pp * r;
                    }
                    a[(i, k + 1)] -= pp * q;
                    a[(i, k)] -= pp;
                }
            }
        }
    }

    Ok(wr
        .into_iter()
        .zip(wi)
        .map(|(re, im)| Complex64::new(re, im))
        .collect())
}
