//! Shared numerical helpers: finite differences, eigenvalue wrappers, grids.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Central-difference step scaled relative to the local coordinate magnitude.
fn scaled_step(base: f64, x: f64) -> f64 {
    base * (1.0 + x.abs())
}

/// Central finite-difference gradient of a scalar function.
pub fn central_gradient<F>(f: F, x: &DVector<f64>, base_step: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut xp = x.clone();
    for i in 0..n {
        let h = scaled_step(base_step, x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central finite-difference Jacobian of a vector function, one column per coordinate.
pub fn central_jacobian<F>(f: F, x: &DVector<f64>, base_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut xp = x.clone();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let h = scaled_step(base_step, x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        cols.push((fp - fm) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Central difference of a time-parameterized vector function.
pub fn central_time_derivative<F>(f: F, t: f64, step: f64) -> DVector<f64>
where
    F: Fn(f64) -> DVector<f64>,
{
    (f(t + step) - f(t - step)) / (2.0 * step)
}

/// Eigenvalues of a symmetric matrix (ascending). The input is symmetrized first.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let mut ev = sym.symmetric_eigenvalues();
    ev.as_mut_slice()
        .sort_by(|x, y| x.partial_cmp(y).expect("NaN eigenvalue"));
    ev
}

/// Full complex spectrum of a real square matrix, sorted by (Re, Im).
pub fn complex_spectrum(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            context: "complex_spectrum",
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite matrix entry"));
    }
    let ev = a.clone().complex_eigenvalues();
    let mut out: Vec<Complex64> = ev.iter().map(|c| Complex64::new(c.re, c.im)).collect();
    sort_complex(&mut out);
    Ok(out)
}

/// Sort complex values by real part, then imaginary part.
pub fn sort_complex(values: &mut [Complex64]) {
    values.sort_by(|a, b| {
        (a.re, a.im)
            .partial_cmp(&(b.re, b.im))
            .expect("NaN eigenvalue")
    });
}

/// `n` evenly spaced samples covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "linspace needs at least two points");
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// `n` logarithmically spaced samples covering `[lo, hi]`, both positive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo, "logspace needs 0 < lo < hi");
    linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect()
}

/// Least-squares line fit `y = slope * x + intercept`; returns (slope, intercept, rms residual).
pub fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let ss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    (slope, intercept, (ss / n).sqrt())
}
