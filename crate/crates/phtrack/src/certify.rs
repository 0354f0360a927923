//! Contraction certification of a (system, gains, domain) triple.
//!
//! The pipeline checks, in order: positivity of the potential Hessian on the
//! domain, uniform bounds on the shaped Hamiltonian Hessian, Hurwitz-ness of
//! the closed-loop structure matrix `P`, and an imaginary-axis-free spectrum
//! of the test matrix `N` for some epsilon from a sweep grid. Failures are
//! recorded in the report; nothing escalates past it.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::controller::ControllerGains;
use crate::error::{Error, Result};
use crate::model::EMSystem;
use crate::numeric;
use crate::state::StateVector;

/// Relative margin applied to the sampled Hessian extrema.
pub const DEFAULT_MARGIN: f64 = 0.05;
/// Distance from the imaginary axis below which eigenvalues count as on-axis.
pub const DEFAULT_RE_TOL: f64 = 1e-9;
/// Matching tolerance of the spectral factorization cross-check.
pub const SPECTRAL_FACTORIZATION_TOL: f64 = 1e-8;

/// Axis-aligned box in the full state space, sampled on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub grid_points: usize,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, grid_points: usize) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "DomainBox::new",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
            return Err(Error::InvalidArgument(
                "domain box needs lower < upper on every axis".into(),
            ));
        }
        if grid_points < 2 {
            return Err(Error::InvalidArgument(
                "domain box needs at least 2 grid points per axis".into(),
            ));
        }
        Ok(Self {
            lower,
            upper,
            grid_points,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, flat: &DVector<f64>) -> bool {
        flat.len() == self.dim()
            && flat
                .iter()
                .enumerate()
                .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    /// Replace the bounds of one axis.
    pub fn with_axis(mut self, axis: usize, lower: f64, upper: f64) -> Result<Self> {
        if axis >= self.dim() || lower >= upper {
            return Err(Error::InvalidArgument(format!(
                "invalid axis override {axis}: [{lower}, {upper}]"
            )));
        }
        self.lower[axis] = lower;
        self.upper[axis] = upper;
        Ok(self)
    }

    fn axis_samples(&self, axis: usize) -> Vec<f64> {
        numeric::linspace(self.lower[axis], self.upper[axis], self.grid_points)
    }

    /// All grid samples over the axes `[first, first + count)`.
    fn grid_over(&self, first: usize, count: usize) -> Vec<DVector<f64>> {
        let axes: Vec<Vec<f64>> = (first..first + count).map(|i| self.axis_samples(i)).collect();
        let total: usize = axes.iter().map(Vec::len).product();
        let mut out = Vec::with_capacity(total);
        for flat_idx in 0..total {
            let mut rem = flat_idx;
            let mut v = DVector::zeros(count);
            for (i, axis) in axes.iter().enumerate() {
                v[i] = axis[rem % axis.len()];
                rem /= axis.len();
            }
            out.push(v);
        }
        out
    }

    /// Grid over the full state box.
    pub fn state_grid(&self) -> Vec<DVector<f64>> {
        self.grid_over(0, self.dim())
    }

    /// Grid over the q-projection (the first `n_m` axes).
    pub fn q_grid(&self, n_m: usize) -> Vec<DVector<f64>> {
        self.grid_over(0, n_m)
    }
}

/// Complex value serialized as an `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexPair(pub f64, pub f64);

impl From<Complex64> for ComplexPair {
    fn from(c: Complex64) -> Self {
        Self(c.re, c.im)
    }
}

fn to_pairs(spectrum: &[Complex64]) -> Vec<ComplexPair> {
    spectrum.iter().map(|&c| c.into()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Assumption1Result {
    pub ok: bool,
    /// Smallest eigenvalue of the potential Hessian over the q-grid.
    pub worst_eigenvalue: f64,
    /// Grid point attaining it.
    pub witness_q: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonEntry {
    pub epsilon: f64,
    pub spectrum: Vec<ComplexPair>,
    pub min_abs_re: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertifySettings {
    pub margin: f64,
    pub re_tol: f64,
    pub grid_points: usize,
}

/// Evidence collected by [`certify`].
#[derive(Debug, Clone, Serialize)]
pub struct CertificationReport {
    pub system: String,
    pub assumption1: Assumption1Result,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub p_spectrum: Vec<ComplexPair>,
    pub p_hurwitz_ok: bool,
    pub epsilon_tried: Vec<f64>,
    pub n_spectrum_per_epsilon: Vec<EpsilonEntry>,
    pub overall_ok: bool,
    pub settings: CertifySettings,
    pub errors: Vec<String>,
}

impl CertificationReport {
    pub fn passing_epsilons(&self) -> Vec<f64> {
        self.n_spectrum_per_epsilon
            .iter()
            .filter(|e| e.passed)
            .map(|e| e.epsilon)
            .collect()
    }
}

/// Samples the q-projection of the domain grid; passes iff the potential
/// Hessian is positive definite at every sample.
pub fn check_assumption1(sys: &EMSystem, domain: &DomainBox) -> Assumption1Result {
    let mut worst = f64::MAX;
    let mut witness = DVector::zeros(sys.n_m());
    for q in domain.q_grid(sys.n_m()) {
        let min_eig = numeric::symmetric_eigenvalues(&sys.potential_hessian(&q))[0];
        if min_eig < worst {
            worst = min_eig;
            witness = q;
        }
    }
    Assumption1Result {
        ok: worst > 0.0,
        worst_eigenvalue: worst,
        witness_q: witness.as_slice().to_vec(),
    }
}

/// Uniform bounds on the shaped Hessian `hess H(eta) + diag(0, 0, K_c)` over
/// the domain grid. Returns `(beta1, beta2) = ((1 - margin) min, (1 + margin) max)`;
/// errors if the sampled minimum is not positive.
pub fn estimate_hessian_bounds(
    sys: &EMSystem,
    gains: &ControllerGains,
    domain: &DomainBox,
    margin: f64,
) -> Result<(f64, f64)> {
    if domain.dim() != sys.dim() {
        return Err(Error::DimensionMismatch {
            context: "estimate_hessian_bounds",
            expected: sys.dim(),
            got: domain.dim(),
        });
    }
    let n_m = sys.n_m();
    let n_e = sys.n_e();
    let mut min_eig = f64::MAX;
    let mut max_eig = f64::MIN;
    for flat in domain.state_grid() {
        let eta = StateVector::from_flat(n_m, n_e, flat)?;
        let mut hess = sys.hessian_hamiltonian(&eta)?;
        hess.view_mut((2 * n_m, 2 * n_m), (n_e, n_e))
            .zip_apply(gains.k_c(), |h, k| *h += k);
        let ev = numeric::symmetric_eigenvalues(&hess);
        min_eig = min_eig.min(ev[0]);
        max_eig = max_eig.max(ev[ev.len() - 1]);
    }
    if min_eig <= 0.0 {
        return Err(Error::ShapedHessianNotPositive { min_eig });
    }
    Ok(((1.0 - margin) * min_eig, (1.0 + margin) * max_eig))
}

/// Closed-loop structure matrix
/// `P = [0 I 0; -I -R_m 0; 0 0 J_e - Rbar_e]` in flattening order.
pub fn build_p(sys: &EMSystem, gains: &ControllerGains) -> DMatrix<f64> {
    let n_m = sys.n_m();
    let n_e = sys.n_e();
    let dim = sys.dim();
    let mut p = DMatrix::zeros(dim, dim);
    for i in 0..n_m {
        p[(i, n_m + i)] = 1.0;
        p[(n_m + i, i)] = -1.0;
    }
    p.view_mut((n_m, n_m), (n_m, n_m))
        .zip_apply(sys.mech_damping(), |dst, r| *dst = -r);
    let je_minus_rbar = sys.elec_interconnection() - gains.rbar_e();
    p.view_mut((2 * n_m, 2 * n_m), (n_e, n_e))
        .copy_from(&je_minus_rbar);
    p
}

/// Mechanical block `F_1 = [0 I; -I -R_m]` of the block-diagonal form of `P`.
pub fn build_f1(r_m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r_m.nrows();
    let mut f1 = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        f1[(i, n + i)] = 1.0;
        f1[(n + i, i)] = -1.0;
    }
    f1.view_mut((n, n), (n, n)).zip_apply(r_m, |dst, r| *dst = -r);
    f1
}

/// Full spectrum plus the Hurwitz verdict `max Re(lambda) < -re_tol`.
pub fn is_hurwitz(a: &DMatrix<f64>, re_tol: f64) -> Result<(bool, Vec<Complex64>)> {
    let spectrum = numeric::complex_spectrum(a)?;
    let max_re = spectrum.iter().map(|l| l.re).fold(f64::MIN, f64::max);
    Ok((max_re < -re_tol, spectrum))
}

/// Imaginary-axis test matrix
/// `N = [P, (1 - b1/b2) P P'; -(1 - b1/b2 + eps) I, -P']`.
pub fn build_n(p: &DMatrix<f64>, beta1: f64, beta2: f64, epsilon: f64) -> Result<DMatrix<f64>> {
    if !(0.0 < beta1 && beta1 < beta2) {
        return Err(Error::InvalidArgument(format!(
            "build_n needs 0 < beta1 < beta2, got ({beta1}, {beta2})"
        )));
    }
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "build_n needs epsilon > 0, got {epsilon}"
        )));
    }
    let n = p.nrows();
    let c = 1.0 - beta1 / beta2;
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(p);
    out.view_mut((0, n), (n, n)).copy_from(&(p * p.transpose() * c));
    out.view_mut((n, 0), (n, n))
        .copy_from(&(DMatrix::identity(n, n) * -(c + epsilon)));
    out.view_mut((n, n), (n, n)).copy_from(&(-p.transpose()));
    Ok(out)
}

/// Default epsilon sweep: 13 points, logarithmic over `[1e-4, 1]`.
pub fn default_epsilon_grid() -> Vec<f64> {
    numeric::logspace(1e-4, 1.0, 13)
}

/// Run the full certification pipeline. Sub-operation failures land in
/// `report.errors`; the function itself never fails.
pub fn certify(
    sys: &EMSystem,
    gains: &ControllerGains,
    domain: &DomainBox,
    epsilon_grid: &[f64],
    margin: f64,
    re_tol: f64,
) -> CertificationReport {
    let mut errors = Vec::new();
    let assumption1 = check_assumption1(sys, domain);

    let bounds = match estimate_hessian_bounds(sys, gains, domain, margin) {
        Ok(b) => Some(b),
        Err(e) => {
            errors.push(e.to_string());
            None
        }
    };

    let p = build_p(sys, gains);
    let (p_hurwitz_ok, p_spectrum) = match is_hurwitz(&p, re_tol) {
        Ok(r) => r,
        Err(e) => {
            errors.push(e.to_string());
            (false, Vec::new())
        }
    };

    let mut entries = Vec::new();
    if epsilon_grid.is_empty() {
        errors.push("epsilon grid is empty".to_string());
    }
    if let Some((beta1, beta2)) = bounds {
        for &eps in epsilon_grid {
            match build_n(&p, beta1, beta2, eps)
                .and_then(|n| numeric::complex_spectrum(&n))
            {
                Ok(spectrum) => {
                    let min_abs_re =
                        spectrum.iter().map(|l| l.re.abs()).fold(f64::MAX, f64::min);
                    entries.push(EpsilonEntry {
                        epsilon: eps,
                        spectrum: to_pairs(&spectrum),
                        min_abs_re,
                        passed: min_abs_re > re_tol,
                    });
                }
                Err(e) => errors.push(format!("epsilon {eps}: {e}")),
            }
        }
    }

    let betas_ok = matches!(bounds, Some((b1, b2)) if 0.0 < b1 && b1 < b2);
    let any_epsilon = entries.iter().any(|e| e.passed);
    let overall_ok = assumption1.ok && betas_ok && p_hurwitz_ok && any_epsilon;

    CertificationReport {
        system: sys.name().to_string(),
        assumption1,
        beta1: bounds.map(|b| b.0),
        beta2: bounds.map(|b| b.1),
        p_spectrum: to_pairs(&p_spectrum),
        p_hurwitz_ok,
        epsilon_tried: epsilon_grid.to_vec(),
        n_spectrum_per_epsilon: entries,
        overall_ok,
        settings: CertifySettings {
            margin,
            re_tol,
            grid_points: domain.grid_points,
        },
        errors,
    }
}

/// Worst mismatch between the spectrum of `F_1` and the union over the
/// eigenvalues `sigma_i` of `R_m` of the roots of
/// `lambda^2 + sigma_i lambda + 1`, after sorting both by (Re, Im).
pub fn spectral_factorization_residual(r_m: &DMatrix<f64>) -> Result<f64> {
    let sigmas = numeric::symmetric_eigenvalues(r_m);
    if sigmas[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "spectral factorization cross-check needs R_m > 0".into(),
        ));
    }
    let mut expected: Vec<Complex64> = Vec::with_capacity(2 * sigmas.len());
    for &sigma in sigmas.iter() {
        let disc = Complex64::new(sigma * sigma - 4.0, 0.0).sqrt();
        expected.push((Complex64::new(-sigma, 0.0) - disc) / 2.0);
        expected.push((Complex64::new(-sigma, 0.0) + disc) / 2.0);
    }
    numeric::sort_complex(&mut expected);
    let actual = numeric::complex_spectrum(&build_f1(r_m))?;
    Ok(expected
        .iter()
        .zip(&actual)
        .map(|(e, a)| (e - a).norm())
        .fold(0.0, f64::max))
}

/// Cross-check of the Hurwitz argument at [`SPECTRAL_FACTORIZATION_TOL`].
///
/// `R_m` with an eigenvalue exactly at 2 makes the corresponding root of
/// `lambda^2 + sigma lambda + 1` defective, where any eigensolver only
/// resolves it to ~sqrt(machine epsilon); compare against
/// [`spectral_factorization_residual`] directly in that case.
pub fn spectral_factorization_property(r_m: &DMatrix<f64>) -> Result<bool> {
    Ok(spectral_factorization_residual(r_m)? <= SPECTRAL_FACTORIZATION_TOL)
}
