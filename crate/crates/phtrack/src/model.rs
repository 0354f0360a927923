//! Port-Hamiltonian electromechanical plant model.
//!
//! The plant couples a mechanical subsystem (positions `q`, momenta `p`) with
//! an electrical one (state `x_e`) through the energy
//!
//! ```text
//! H(eta) = 1/2 p' M^-1 p + V(q) + 1/2 (x_e - mu(q))' Psi(q) (x_e - mu(q))
//! ```
//!
//! and evolves as
//!
//! ```text
//! dq/dt   = dH/dp
//! dp/dt   = -dH/dq - R_m dH/dp
//! dx_e/dt = (J_e - R_e) dH/dx_e + G_e u
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric;
use crate::state::StateVector;

pub type ScalarOfQ = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorOfQ = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixOfQ = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Per-coordinate derivative `dPsi/dq_i`, indexed by `i`.
pub type MatrixOfQIdx = Box<dyn Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync>;
/// Optional analytic Hessian of the full Hamiltonian in flattening order.
pub type HessianOfState = Box<dyn Fn(&StateVector) -> DMatrix<f64> + Send + Sync>;

/// Admissible box for the generalized positions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "QDomain::new",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
            return Err(Error::InvalidArgument(
                "q_domain lower bound must be below upper bound".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, q: &DVector<f64>) -> bool {
        q.len() == self.lower.len()
            && q.iter()
                .enumerate()
                .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }
}

/// The port-Hamiltonian electromechanical plant.
///
/// Immutable after construction; all evaluation methods are pure functions of
/// their arguments, so a shared reference can be used concurrently.
pub struct EMSystem {
    name: String,
    n_m: usize,
    n_e: usize,
    mass: DMatrix<f64>,
    mass_inv: DMatrix<f64>,
    r_m: DMatrix<f64>,
    j_e: DMatrix<f64>,
    r_e: DMatrix<f64>,
    g_e: DMatrix<f64>,
    potential: ScalarOfQ,
    grad_potential: VectorOfQ,
    hess_potential: MatrixOfQ,
    mu: VectorOfQ,
    mu_jacobian: MatrixOfQ,
    psi: MatrixOfQ,
    dpsi_dq: MatrixOfQIdx,
    q_domain: QDomain,
    analytic_hessian: Option<HessianOfState>,
}

/// Step sizes for the finite-difference consistency checks and the default
/// Hessian path. Central differences, scaled by `1 + |coordinate|`.
pub const FD_GRADIENT_STEP: f64 = 1e-6;
pub const FD_HESSIAN_STEP: f64 = 1e-5;

pub struct EMSystemBuilder {
    name: String,
    n_m: usize,
    n_e: usize,
    mass: Option<DMatrix<f64>>,
    r_m: Option<DMatrix<f64>>,
    j_e: Option<DMatrix<f64>>,
    r_e: Option<DMatrix<f64>>,
    g_e: Option<DMatrix<f64>>,
    potential: Option<(ScalarOfQ, VectorOfQ, MatrixOfQ)>,
    mu: Option<(VectorOfQ, MatrixOfQ)>,
    psi: Option<(MatrixOfQ, MatrixOfQIdx)>,
    q_domain: Option<QDomain>,
    analytic_hessian: Option<HessianOfState>,
}

impl EMSystemBuilder {
    pub fn mass(mut self, m: DMatrix<f64>) -> Self {
        self.mass = Some(m);
        self
    }

    pub fn mech_damping(mut self, r_m: DMatrix<f64>) -> Self {
        self.r_m = Some(r_m);
        self
    }

    pub fn elec_interconnection(mut self, j_e: DMatrix<f64>) -> Self {
        self.j_e = Some(j_e);
        self
    }

    pub fn elec_damping(mut self, r_e: DMatrix<f64>) -> Self {
        self.r_e = Some(r_e);
        self
    }

    pub fn input_matrix(mut self, g_e: DMatrix<f64>) -> Self {
        self.g_e = Some(g_e);
        self
    }

    /// Mechanical potential `V(q)` with gradient and Hessian callbacks.
    pub fn potential<F, G, H>(mut self, v: F, grad: G, hess: H) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.potential = Some((Box::new(v), Box::new(grad), Box::new(hess)));
        self
    }

    /// Coupling offset `mu(q)` with its Jacobian (`n_e x n_m`).
    pub fn coupling_mu<F, J>(mut self, mu: F, jac: J) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.mu = Some((Box::new(mu), Box::new(jac)));
        self
    }

    /// Coupling matrix `Psi(q)` with per-coordinate derivatives `dPsi/dq_i`.
    pub fn coupling_psi<F, D>(mut self, psi: F, dpsi: D) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        D: Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.psi = Some((Box::new(psi), Box::new(dpsi)));
        self
    }

    pub fn q_domain(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.q_domain = Some(QDomain::new(lower, upper).expect("invalid q_domain"));
        self
    }

    /// Analytic Hamiltonian Hessian override (otherwise finite differences).
    pub fn analytic_hessian<F>(mut self, hess: F) -> Self
    where
        F: Fn(&StateVector) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.analytic_hessian = Some(Box::new(hess));
        self
    }

    pub fn build(self) -> Result<EMSystem> {
        let n_m = self.n_m;
        let n_e = self.n_e;
        let need = |cond: bool, what: &str| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "EMSystem `{}`: missing {what}",
                    self.name
                )))
            }
        };
        need(self.mass.is_some(), "mass matrix")?;
        need(self.r_m.is_some(), "mechanical damping")?;
        need(self.j_e.is_some(), "electrical interconnection")?;
        need(self.r_e.is_some(), "electrical damping")?;
        need(self.g_e.is_some(), "input matrix")?;
        need(self.potential.is_some(), "potential callbacks")?;
        need(self.mu.is_some(), "coupling mu callbacks")?;
        need(self.psi.is_some(), "coupling Psi callbacks")?;
        need(self.q_domain.is_some(), "q_domain")?;

        let mass = self.mass.unwrap();
        let check_square = |m: &DMatrix<f64>, n: usize, context: &'static str| -> Result<()> {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    got: m.nrows().max(m.ncols()),
                });
            }
            Ok(())
        };
        let r_m = self.r_m.unwrap();
        let j_e = self.j_e.unwrap();
        let r_e = self.r_e.unwrap();
        let g_e = self.g_e.unwrap();
        check_square(&mass, n_m, "mass matrix")?;
        check_square(&r_m, n_m, "mechanical damping")?;
        check_square(&j_e, n_e, "electrical interconnection")?;
        check_square(&r_e, n_e, "electrical damping")?;
        check_square(&g_e, n_e, "input matrix")?;
        let q_domain = self.q_domain.unwrap();
        if q_domain.lower.len() != n_m {
            return Err(Error::DimensionMismatch {
                context: "q_domain",
                expected: n_m,
                got: q_domain.lower.len(),
            });
        }
        let mass_inv = mass
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix("mass matrix"))?;
        let (potential, grad_potential, hess_potential) = self.potential.unwrap();
        let (mu, mu_jacobian) = self.mu.unwrap();
        let (psi, dpsi_dq) = self.psi.unwrap();
        Ok(EMSystem {
            name: self.name,
            n_m,
            n_e,
            mass,
            mass_inv,
            r_m,
            j_e,
            r_e,
            g_e,
            potential,
            grad_potential,
            hess_potential,
            mu,
            mu_jacobian,
            psi,
            dpsi_dq,
            q_domain,
            analytic_hessian: self.analytic_hessian,
        })
    }
}

/// One entry of the structural diagnostics report.
#[derive(Debug, Clone, Serialize)]
pub struct StructureCheck {
    pub name: String,
    pub passed: bool,
    /// Human-readable witness for the measured quantity (worst eigenvalue,
    /// residual norm, offending grid point, ...).
    pub witness: String,
}

/// Structural diagnostics for an [`EMSystem`]; failures are entries, not errors.
#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub system: String,
    pub checks: Vec<StructureCheck>,
}

impl StructureReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<&StructureCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Tolerance for antisymmetry residuals and definiteness margins in
/// [`EMSystem::check_structure`].
pub const STRUCTURE_TOL: f64 = 1e-12;

impl EMSystem {
    pub fn builder(name: &str, n_m: usize, n_e: usize) -> EMSystemBuilder {
        assert!(n_m > 0 && n_e > 0, "dimensions must be positive");
        EMSystemBuilder {
            name: name.to_string(),
            n_m,
            n_e,
            mass: None,
            r_m: None,
            j_e: None,
            r_e: None,
            g_e: None,
            potential: None,
            mu: None,
            psi: None,
            q_domain: None,
            analytic_hessian: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_m(&self) -> usize {
        self.n_m
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    /// Total state dimension `2 n_m + n_e`.
    pub fn dim(&self) -> usize {
        2 * self.n_m + self.n_e
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn mass_inv(&self) -> &DMatrix<f64> {
        &self.mass_inv
    }

    pub fn mech_damping(&self) -> &DMatrix<f64> {
        &self.r_m
    }

    pub fn elec_interconnection(&self) -> &DMatrix<f64> {
        &self.j_e
    }

    pub fn elec_damping(&self) -> &DMatrix<f64> {
        &self.r_e
    }

    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.g_e
    }

    pub fn q_domain(&self) -> &QDomain {
        &self.q_domain
    }

    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        (self.potential)(q)
    }

    pub fn potential_gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.grad_potential)(q)
    }

    pub fn potential_hessian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.hess_potential)(q)
    }

    pub fn coupling_mu(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.mu)(q)
    }

    pub fn coupling_mu_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.mu_jacobian)(q)
    }

    pub fn coupling_psi(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.psi)(q)
    }

    pub fn coupling_dpsi_dq(&self, q: &DVector<f64>, i: usize) -> DMatrix<f64> {
        (self.dpsi_dq)(q, i)
    }

    /// Moore-Penrose pseudo-inverse of the input matrix via the
    /// normal-equations formula `(G' G)^-1 G'`.
    pub fn input_pseudo_inverse(&self) -> Result<DMatrix<f64>> {
        let gtg = self.g_e.transpose() * &self.g_e;
        let inv = gtg
            .try_inverse()
            .ok_or(Error::SingularMatrix("input matrix normal equations"))?;
        Ok(inv * self.g_e.transpose())
    }

    fn check_eta(&self, eta: &StateVector, context: &'static str) -> Result<()> {
        if eta.n_m() != self.n_m || eta.n_e() != self.n_e {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim(),
                got: eta.dim(),
            });
        }
        let q = eta.q();
        for i in 0..self.n_m {
            if q[i] < self.q_domain.lower[i] || q[i] > self.q_domain.upper[i] {
                return Err(Error::OutOfDomain {
                    context,
                    index: i,
                    value: q[i],
                });
            }
        }
        Ok(())
    }

    /// Total energy at `eta`.
    pub fn hamiltonian(&self, eta: &StateVector) -> Result<f64> {
        self.check_eta(eta, "hamiltonian")?;
        let q = eta.q().into_owned();
        let p = eta.p().into_owned();
        let d = eta.x_e() - self.coupling_mu(&q);
        let kinetic = 0.5 * (p.transpose() * &self.mass_inv * &p)[(0, 0)];
        let coupling = 0.5 * (d.transpose() * self.coupling_psi(&q) * &d)[(0, 0)];
        Ok(kinetic + self.potential_energy(&q) + coupling)
    }

    /// Gradient `[dH/dq; dH/dp; dH/dx_e]` in flattening order.
    ///
    /// The q-gradient of the coupling energy expands by the chain rule to
    /// `1/2 d' (dPsi/dq_i) d - (dmu/dq e_i)' Psi d` per coordinate, with
    /// `d = x_e - mu(q)`.
    pub fn grad_hamiltonian(&self, eta: &StateVector) -> Result<DVector<f64>> {
        self.check_eta(eta, "grad_hamiltonian")?;
        let q = eta.q().into_owned();
        let p = eta.p().into_owned();
        let d = eta.x_e() - self.coupling_mu(&q);
        let psi = self.coupling_psi(&q);
        let psi_d = &psi * &d;
        let mu_jac = self.coupling_mu_jacobian(&q);

        let mut grad_q = self.potential_gradient(&q);
        for i in 0..self.n_m {
            grad_q[i] += 0.5 * (d.transpose() * self.coupling_dpsi_dq(&q, i) * &d)[(0, 0)];
        }
        grad_q -= mu_jac.transpose() * &psi_d;

        let grad_p = &self.mass_inv * p;

        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, self.n_m).copy_from(&grad_q);
        out.rows_mut(self.n_m, self.n_m).copy_from(&grad_p);
        out.rows_mut(2 * self.n_m, self.n_e).copy_from(&psi_d);
        Ok(out)
    }

    /// Symmetric Hessian of the Hamiltonian in flattening order.
    ///
    /// Uses the analytic override when the system provides one, otherwise
    /// central finite differences of the gradient (step [`FD_HESSIAN_STEP`],
    /// scaled by state magnitude). The output is symmetrized.
    pub fn hessian_hamiltonian(&self, eta: &StateVector) -> Result<DMatrix<f64>> {
        self.check_eta(eta, "hessian_hamiltonian")?;
        if let Some(h) = &self.analytic_hessian {
            let a = h(eta);
            return Ok((&a + a.transpose()) * 0.5);
        }
        self.fd_hessian_hamiltonian(eta)
    }

    /// Finite-difference Hessian, available regardless of any analytic override.
    pub fn fd_hessian_hamiltonian(&self, eta: &StateVector) -> Result<DMatrix<f64>> {
        let n_m = self.n_m;
        let n_e = self.n_e;
        let grad = |flat: &DVector<f64>| -> Result<DVector<f64>> {
            let s = StateVector::from_flat(n_m, n_e, flat.clone())?;
            self.grad_hamiltonian(&s)
        };
        let jac = numeric::central_jacobian(grad, eta.as_flat(), FD_HESSIAN_STEP)?;
        Ok((&jac + jac.transpose()) * 0.5)
    }

    /// Open-loop vector field, flattening order `[dq; dp; dx_e]`.
    pub fn open_loop_rhs(&self, eta: &StateVector, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.n_e {
            return Err(Error::DimensionMismatch {
                context: "open_loop_rhs input",
                expected: self.n_e,
                got: u.len(),
            });
        }
        let grad = self.grad_hamiltonian(eta)?;
        let g_q = grad.rows(0, self.n_m);
        let g_p = grad.rows(self.n_m, self.n_m);
        let g_x = grad.rows(2 * self.n_m, self.n_e);

        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, self.n_m).copy_from(&g_p);
        out.rows_mut(self.n_m, self.n_m)
            .copy_from(&(-g_q - &self.r_m * g_p));
        out.rows_mut(2 * self.n_m, self.n_e)
            .copy_from(&((&self.j_e - &self.r_e) * g_x + &self.g_e * u));
        Ok(out)
    }

    /// Instantaneous dissipation `dH/dt` along open-loop solutions with u = 0:
    /// `-(dH/dp)' R_m (dH/dp) - (dH/dx_e)' R_e (dH/dx_e)`.
    pub fn dissipation_rate(&self, eta: &StateVector) -> Result<f64> {
        let grad = self.grad_hamiltonian(eta)?;
        let g_p = grad.rows(self.n_m, self.n_m).into_owned();
        let g_x = grad.rows(2 * self.n_m, self.n_e).into_owned();
        Ok(-(g_p.transpose() * &self.r_m * &g_p)[(0, 0)]
            - (g_x.transpose() * &self.r_e * &g_x)[(0, 0)])
    }

    /// Evaluate every structural invariant and report per-check pass/fail
    /// with witnesses. Psi positivity is sampled on a q-grid over `q_domain`.
    pub fn check_structure(&self) -> StructureReport {
        let mut checks = Vec::new();

        let sym_min_eig = |m: &DMatrix<f64>| -> f64 {
            let ev = numeric::symmetric_eigenvalues(m);
            ev[0]
        };
        let sym_residual = |m: &DMatrix<f64>| -> f64 { (m - m.transpose()).norm() };

        let m_min = sym_min_eig(&self.mass);
        checks.push(StructureCheck {
            name: "mass_positive_definite".into(),
            passed: sym_residual(&self.mass) <= STRUCTURE_TOL && m_min > STRUCTURE_TOL,
            witness: format!("min eigenvalue {m_min:.6e}"),
        });

        let rm_min = sym_min_eig(&self.r_m);
        checks.push(StructureCheck {
            name: "mech_damping_positive_definite".into(),
            passed: sym_residual(&self.r_m) <= STRUCTURE_TOL && rm_min > STRUCTURE_TOL,
            witness: format!("min eigenvalue {rm_min:.6e}"),
        });

        let re_min = sym_min_eig(&self.r_e);
        checks.push(StructureCheck {
            name: "elec_damping_positive_semidefinite".into(),
            passed: sym_residual(&self.r_e) <= STRUCTURE_TOL && re_min >= -STRUCTURE_TOL,
            witness: format!("min eigenvalue {re_min:.6e}"),
        });

        let anti = (&self.j_e + self.j_e.transpose()).norm();
        checks.push(StructureCheck {
            name: "elec_interconnection_antisymmetric".into(),
            passed: anti <= STRUCTURE_TOL,
            witness: format!("antisymmetry residual {anti:.6e}"),
        });

        let svd = self.g_e.clone().svd(false, false);
        let smin = svd.singular_values.iter().cloned().fold(f64::MAX, f64::min);
        checks.push(StructureCheck {
            name: "input_matrix_full_rank".into(),
            passed: smin > STRUCTURE_TOL,
            witness: format!("smallest singular value {smin:.6e}"),
        });

        // Psi(q) > 0 on a 9-point grid per q axis.
        let axes: Vec<Vec<f64>> = (0..self.n_m)
            .map(|i| numeric::linspace(self.q_domain.lower[i], self.q_domain.upper[i], 9))
            .collect();
        let mut worst = f64::MAX;
        let mut worst_q = DVector::zeros(self.n_m);
        let total: usize = axes.iter().map(Vec::len).product();
        for flat_idx in 0..total {
            let mut rem = flat_idx;
            let mut q = DVector::zeros(self.n_m);
            for (i, axis) in axes.iter().enumerate() {
                q[i] = axis[rem % axis.len()];
                rem /= axis.len();
            }
            let min_eig = sym_min_eig(&self.coupling_psi(&q));
            if min_eig < worst {
                worst = min_eig;
                worst_q = q;
            }
        }
        checks.push(StructureCheck {
            name: "psi_positive_definite_on_q_grid".into(),
            passed: worst > STRUCTURE_TOL,
            witness: format!("min eigenvalue {worst:.6e} at q = {:?}", worst_q.as_slice()),
        });

        StructureReport {
            system: self.name.clone(),
            checks,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use nalgebra::{dmatrix, dvector};

    fn mic() -> std::sync::Arc<EMSystem> {
        catalog::microphone().system
    }

    fn eta3(q: f64, p: f64, xe: f64) -> StateVector {
        StateVector::new(dvector![q], dvector![p], dvector![xe]).unwrap()
    }

    #[test]
    fn hamiltonian_vanishes_where_all_terms_do() {
        // q = gamma_1 = 1, p = 0, x_e = 0: V, kinetic, and coupling all zero.
        let sys = mic();
        let h = sys.hamiltonian(&eta3(1.0, 0.0, 0.0)).unwrap();
        assert!(h.abs() < 1e-15, "H = {h}");
    }

    #[test]
    fn hamiltonian_term_by_term() {
        // 1/2 p^2 + 1/2 (q-1)^2 + 1/2 q x_e^2 at (0.5, 1, 2) = 0.5 + 0.125 + 1.0
        let sys = mic();
        let h = sys.hamiltonian(&eta3(0.5, 1.0, 2.0)).unwrap();
        assert!((h - 1.625).abs() < 1e-14, "H = {h}");
    }

    #[test]
    fn hamiltonian_reduces_to_potential_at_rest() {
        let sys = mic();
        // p = 0, x_e = mu(q) = 0 leaves only V(q).
        let h = sys.hamiltonian(&eta3(0.25, 0.0, 0.0)).unwrap();
        assert!((h - 0.5 * 0.75 * 0.75).abs() < 1e-14);
    }

    #[test]
    fn gradient_hand_values() {
        let sys = mic();
        let g = sys.grad_hamiltonian(&eta3(0.5, 1.0, 2.0)).unwrap();
        assert!((g[0] - 1.5).abs() < 1e-14);
        assert!((g[1] - 1.0).abs() < 1e-14);
        assert!((g[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_vanishes_at_critical_rest_point() {
        let sys = mic();
        // q at the V minimum, p = 0, x_e = mu(q) = 0.
        let g = sys.grad_hamiltonian(&eta3(1.0, 0.0, 0.0)).unwrap();
        assert!(g.norm() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sys = mic();
        let states = [
            eta3(0.5, 1.0, 2.0),
            eta3(0.1, -0.4, 0.7),
            eta3(0.9, 0.2, -1.3),
        ];
        for eta in &states {
            let g = sys.grad_hamiltonian(eta).unwrap();
            let fd = numeric::central_gradient(
                |flat| {
                    let s = StateVector::from_flat(1, 1, flat.clone()).unwrap();
                    sys.hamiltonian(&s)
                },
                eta.as_flat(),
                FD_GRADIENT_STEP,
            )
            .unwrap();
            let rel = (&g - &fd).norm() / (1.0 + g.norm());
            assert!(rel < 1e-8, "relative gradient error {rel}");
        }
    }

    #[test]
    fn hessian_hand_values() {
        // At x_e = 0 the q/x_e cross-term vanishes and the x_e block is Psi(q) = q.
        let sys = mic();
        let h = sys.hessian_hamiltonian(&eta3(0.5, 0.3, 0.0)).unwrap();
        let expected = dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0; 0.0, 0.0, 0.5];
        assert!((h - expected).norm() < 1e-12);
    }

    #[test]
    fn hessian_p_block_is_mass_inverse() {
        let sys = catalog::stepper_motor().system;
        let eta = StateVector::new(dvector![0.1], dvector![1e-4], dvector![0.5, -0.2]).unwrap();
        let h = sys.hessian_hamiltonian(&eta).unwrap();
        let m_inv = sys.mass_inv()[(0, 0)];
        assert!((h[(1, 1)] - m_inv).abs() / m_inv < 1e-9);
    }

    #[test]
    fn hessian_is_symmetric() {
        let sys = mic();
        let h = sys.fd_hessian_hamiltonian(&eta3(0.37, -0.8, 1.1)).unwrap();
        assert!((&h - h.transpose()).norm() < 1e-8);
    }

    #[test]
    fn open_loop_rhs_hand_values() {
        let sys = mic();
        let rhs = sys
            .open_loop_rhs(&eta3(0.5, 1.0, 2.0), &dvector![0.0])
            .unwrap();
        assert!((rhs[0] - 1.0).abs() < 1e-14);
        assert!((rhs[1] + 2.5).abs() < 1e-14);
        assert!((rhs[2] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn open_loop_rhs_zero_at_equilibrium() {
        let sys = mic();
        let rhs = sys
            .open_loop_rhs(&eta3(1.0, 0.0, 0.0), &dvector![0.0])
            .unwrap();
        assert!(rhs.norm() < 1e-14);
    }

    #[test]
    fn rejects_out_of_domain_q() {
        let sys = mic();
        let err = sys.hamiltonian(&eta3(-0.5, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::OutOfDomain { .. }));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let sys = mic();
        let eta = StateVector::new(dvector![0.5], dvector![0.0], dvector![0.0, 0.0]).unwrap();
        let err = sys.hamiltonian(&eta).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn structure_checks_pass_for_microphone() {
        let report = mic().check_structure();
        assert!(report.all_passed(), "failing: {:?}", report.failing());
    }

    #[test]
    fn structure_flags_negative_mech_damping() {
        let sys = EMSystem::builder("bad-rm", 1, 1)
            .mass(dmatrix![1.0])
            .mech_damping(dmatrix![-1.0])
            .elec_interconnection(dmatrix![0.0])
            .elec_damping(dmatrix![1.0])
            .input_matrix(dmatrix![1.0])
            .potential(|q| 0.5 * q[0] * q[0], |q| q.clone(), |_| dmatrix![1.0])
            .coupling_mu(|_| dvector![0.0], |_| dmatrix![0.0])
            .coupling_psi(|_| dmatrix![1.0], |_, _| dmatrix![0.0])
            .q_domain(vec![-1.0], vec![1.0])
            .build()
            .unwrap();
        let report = sys.check_structure();
        assert!(!report.all_passed());
        assert!(report
            .failing()
            .iter()
            .any(|c| c.name == "mech_damping_positive_definite"));
    }

    #[test]
    fn structure_flags_non_antisymmetric_je() {
        let sys = EMSystem::builder("bad-je", 1, 2)
            .mass(dmatrix![1.0])
            .mech_damping(dmatrix![1.0])
            .elec_interconnection(dmatrix![0.0, 1.0; 1.0, 0.0])
            .elec_damping(DMatrix::identity(2, 2))
            .input_matrix(DMatrix::identity(2, 2))
            .potential(|q| 0.5 * q[0] * q[0], |q| q.clone(), |_| dmatrix![1.0])
            .coupling_mu(|_| dvector![0.0, 0.0], |_| DMatrix::zeros(2, 1))
            .coupling_psi(|_| DMatrix::identity(2, 2), |_, _| DMatrix::zeros(2, 2))
            .q_domain(vec![-1.0], vec![1.0])
            .build()
            .unwrap();
        let report = sys.check_structure();
        assert!(report
            .failing()
            .iter()
            .any(|c| c.name == "elec_interconnection_antisymmetric"));
    }

    #[test]
    fn flattening_order_agrees_across_operations() {
        // Distinct per-slot values: q affects only dH/dq via V' at x_e = 0,
        // p only dH/dp, x_e only dH/dx_e.  The rhs must read the same slots.
        let sys = mic();
        let eta = eta3(0.6, 0.25, 0.0);
        let g = sys.grad_hamiltonian(&eta).unwrap();
        assert!((g[0] - (0.6 - 1.0)).abs() < 1e-14); // V'(q)
        assert!((g[1] - 0.25).abs() < 1e-14); // p / M
        assert!((g[2] - 0.0).abs() < 1e-14); // Psi(q) x_e
        let rhs = sys.open_loop_rhs(&eta, &dvector![0.0]).unwrap();
        assert!((rhs[0] - g[1]).abs() < 1e-14);
        assert!((rhs[1] - (-g[0] - g[1])).abs() < 1e-14);
        let h = sys.hessian_hamiltonian(&eta).unwrap();
        assert!((h[(1, 1)] - 1.0).abs() < 1e-12); // p-block = M^-1 at slot (1,1)
    }
}
