#![allow(dead_code)]

use gameflow::{DMatrix, DVector};

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

/// Classical RK4 with `steps` equal steps over `[0, t]`; a reference solver
/// written independently of the library integrators.
pub fn rk4_reference<F>(f: F, w0: &DVector<f64>, t: f64, steps: usize) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let h = t / steps as f64;
    let mut w = w0.clone();
    for _ in 0..steps {
        let k1 = f(&w);
        let k2 = f(&(&w + 0.5 * h * &k1));
        let k3 = f(&(&w + 0.5 * h * &k2));
        let k4 = f(&(&w + h * &k3));
        w += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    w
}

/// `exp(-t M) w0` by Taylor series with scaling and squaring, independent
/// of the library's flow routine.
pub fn expm_apply(m: &DMatrix<f64>, w0: &DVector<f64>, t: f64) -> DVector<f64> {
    let a = -t * m;
    let norm = a.iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
    let s = (norm.log2().ceil().max(0.0) as i32) + 1;
    let scaled = &a / 2f64.powi(s);
    let n = m.nrows();
    let mut e = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        e += &term;
    }
    for _ in 0..s {
        e = &e * &e;
    }
    e * w0
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
