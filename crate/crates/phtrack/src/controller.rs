//! Static tracking controller and the contractive target dynamics.
//!
//! The controller shapes the closed-loop energy to
//! `H_d(eta, t) = H(eta) + Theta(x_e, t)` with
//! `Theta = 1/2 (x_e - alpha(t))' K_c (x_e - alpha(t))` and replaces the
//! electrical damping by `Rbar_e`, leaving the mechanical rows untouched.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::EMSystem;
use crate::numeric;
use crate::state::StateVector;
use crate::trajectory::ReferenceTrajectory;

/// Designer degrees of freedom: desired electrical damping and shaping gain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerGains {
    rbar_e: DMatrix<f64>,
    k_c: DMatrix<f64>,
}

impl ControllerGains {
    /// Validates that both matrices are symmetric positive definite and that
    /// `J_e - Rbar_e` stays invertible for the system at hand.
    pub fn new(rbar_e: DMatrix<f64>, k_c: DMatrix<f64>, sys: &EMSystem) -> Result<Self> {
        let n_e = sys.n_e();
        for (m, label) in [(&rbar_e, "Rbar_e"), (&k_c, "K_c")] {
            if m.nrows() != n_e || m.ncols() != n_e {
                return Err(Error::DimensionMismatch {
                    context: "ControllerGains",
                    expected: n_e,
                    got: m.nrows().max(m.ncols()),
                });
            }
            if (m - m.transpose()).norm() > 1e-12 {
                return Err(Error::InvalidGains(format!("{label} is not symmetric")));
            }
            let min_eig = numeric::symmetric_eigenvalues(m)[0];
            if min_eig <= 0.0 {
                return Err(Error::InvalidGains(format!(
                    "{label} is not positive definite (min eigenvalue {min_eig:.6e})"
                )));
            }
        }
        // Follows from Rbar_e > 0, but tested explicitly.
        let je_minus_rbar = sys.elec_interconnection() - &rbar_e;
        if je_minus_rbar.clone().try_inverse().is_none() {
            return Err(Error::InvalidGains(
                "J_e - Rbar_e is singular".to_string(),
            ));
        }
        Ok(Self { rbar_e, k_c })
    }

    /// Scalar gains interpreted as `scalar * I` of the electrical dimension.
    pub fn scalar(rbar_e: f64, k_c: f64, sys: &EMSystem) -> Result<Self> {
        let n_e = sys.n_e();
        Self::new(
            DMatrix::identity(n_e, n_e) * rbar_e,
            DMatrix::identity(n_e, n_e) * k_c,
            sys,
        )
    }

    pub fn rbar_e(&self) -> &DMatrix<f64> {
        &self.rbar_e
    }

    pub fn k_c(&self) -> &DMatrix<f64> {
        &self.k_c
    }
}

/// Feedforward center of the shaping energy:
/// `alpha(t) = K_c^-1 Psi(q*) (x_e* - mu(q*)) + x_e* - K_c^-1 (J_e - Rbar_e)^-1 dx_e*/dt`.
///
/// Depends on the reference only, never on the current state.
pub fn alpha(
    sys: &EMSystem,
    gains: &ControllerGains,
    reference: &ReferenceTrajectory,
    t: f64,
) -> Result<DVector<f64>> {
    let q_star = reference.q_star(t);
    let xe_star = reference.xe_star(t);
    let xe_star_dot = reference.xe_star_dot(t);

    let kc_inv = gains
        .k_c
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMatrix("K_c"))?;
    let je_minus_rbar = sys.elec_interconnection() - &gains.rbar_e;
    let je_minus_rbar_inv = je_minus_rbar
        .try_inverse()
        .ok_or(Error::SingularMatrix("J_e - Rbar_e"))?;

    let coupling = sys.coupling_psi(&q_star) * (&xe_star - sys.coupling_mu(&q_star));
    Ok(&kc_inv * coupling + xe_star - kc_inv * je_minus_rbar_inv * xe_star_dot)
}

/// Shaping energy `Theta = 1/2 (x_e - alpha)' K_c (x_e - alpha)`.
///
/// Its state Hessian is the constant block `diag(0, 0, K_c)`; the time
/// argument never enters second derivatives in `eta`.
pub fn theta(gains: &ControllerGains, x_e: &DVector<f64>, alpha_t: &DVector<f64>) -> f64 {
    let d = x_e - alpha_t;
    0.5 * (d.transpose() * &gains.k_c * &d)[(0, 0)]
}

/// The static feedback law
/// `u = G_e^+ [ (R_e - Rbar_e) Psi(q)(x_e - mu(q)) + (J_e - Rbar_e) K_c (x_e - alpha(t)) ]`.
pub fn control_input(
    sys: &EMSystem,
    gains: &ControllerGains,
    reference: &ReferenceTrajectory,
    eta: &StateVector,
    t: f64,
) -> Result<DVector<f64>> {
    if eta.n_m() != sys.n_m() || eta.n_e() != sys.n_e() {
        return Err(Error::DimensionMismatch {
            context: "control_input",
            expected: sys.dim(),
            got: eta.dim(),
        });
    }
    let alpha_t = alpha(sys, gains, reference, t)?;
    let q = eta.q().into_owned();
    let d = eta.x_e() - sys.coupling_mu(&q);
    let damping_term = (sys.elec_damping() - &gains.rbar_e) * (sys.coupling_psi(&q) * d);
    let shaping_term =
        (sys.elec_interconnection() - &gains.rbar_e) * (&gains.k_c * (eta.x_e() - alpha_t));
    Ok(sys.input_pseudo_inverse()? * (damping_term + shaping_term))
}

/// Target closed-loop vector field: the plant under [`control_input`],
/// equivalently the pH dynamics of `H_d` with electrical damping `Rbar_e`.
pub fn closed_loop_rhs(
    sys: &EMSystem,
    gains: &ControllerGains,
    reference: &ReferenceTrajectory,
    eta: &StateVector,
    t: f64,
) -> Result<DVector<f64>> {
    let n_m = sys.n_m();
    let n_e = sys.n_e();
    let grad = sys.grad_hamiltonian(eta)?;
    let g_q = grad.rows(0, n_m);
    let g_p = grad.rows(n_m, n_m);
    let alpha_t = alpha(sys, gains, reference, t)?;
    // grad of H_d: only the x_e rows gain the K_c (x_e - alpha) shaping term.
    let g_x_shaped = grad.rows(2 * n_m, n_e) + &gains.k_c * (eta.x_e() - alpha_t);

    let mut out = DVector::zeros(sys.dim());
    out.rows_mut(0, n_m).copy_from(&g_p);
    out.rows_mut(n_m, n_m)
        .copy_from(&(-g_q - sys.mech_damping() * g_p));
    out.rows_mut(2 * n_m, n_e)
        .copy_from(&((sys.elec_interconnection() - &gains.rbar_e) * g_x_shaped));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn gains_reject_indefinite_matrices() {
        let bundle = catalog::microphone();
        let sys = &bundle.system;
        assert!(ControllerGains::scalar(0.0, 55.0, sys).is_err());
        assert!(ControllerGains::scalar(-1.0, 55.0, sys).is_err());
        assert!(ControllerGains::scalar(30.0, 0.0, sys).is_err());
        assert!(ControllerGains::new(dmatrix![1.0, 0.5; 0.4, 1.0], dmatrix![1.0, 0.0; 0.0, 1.0], &catalog::stepper_motor().system).is_err());
    }

    #[test]
    fn alpha_hand_value_microphone() {
        // q* = 0.3, x_e* = 1, dx_e*/dt = 0 at t = 0: alpha = 1 + 0.3/55.
        let bundle = catalog::microphone();
        let a = alpha(&bundle.system, &bundle.gains, &bundle.reference, 0.0).unwrap();
        assert!((a[0] - (1.0 + 0.3 / 55.0)).abs() < 1e-12, "alpha = {}", a[0]);
    }

    #[test]
    fn alpha_reduces_to_setpoint_for_regulation() {
        // Constant reference with x_e* = mu(q*): both correction terms vanish.
        let bundle = catalog::stepper_motor();
        let sys = &bundle.system;
        let q0 = dvector![0.2];
        let xe0 = sys.coupling_mu(&q0);
        let reference = ReferenceTrajectory::constant(q0, xe0.clone(), sys).unwrap();
        let a = alpha(sys, &bundle.gains, &reference, 1.7).unwrap();
        assert!((a - xe0).norm() < 1e-13);
    }

    #[test]
    fn theta_hand_values() {
        let bundle = catalog::microphone();
        let x = dvector![1.1];
        assert_eq!(theta(&bundle.gains, &x, &x), 0.0);
        let a = dvector![1.0];
        let th = theta(&bundle.gains, &x, &a);
        assert!((th - 0.275).abs() < 1e-12);
        assert!(th >= 0.0);
    }

    #[test]
    fn control_input_hand_value_microphone() {
        let bundle = catalog::microphone();
        let eta = StateVector::from_slice(1, 1, &[0.3, 0.2, 1.0]).unwrap();
        let u = control_input(&bundle.system, &bundle.gains, &bundle.reference, &eta, 0.0).unwrap();
        assert!((u[0] - 0.3).abs() < 1e-10, "u = {}", u[0]);
        // Consistency: the resulting electrical rate matches dx_e*/dt(0) = 0.
        let rhs = bundle.system.open_loop_rhs(&eta, &u).unwrap();
        assert!(rhs[2].abs() < 1e-10, "dx_e = {}", rhs[2]);
    }

    #[test]
    fn control_input_is_independent_of_momentum() {
        let bundle = catalog::microphone();
        let eta_a = StateVector::from_slice(1, 1, &[0.3, 0.2, 0.7]).unwrap();
        let eta_b = StateVector::from_slice(1, 1, &[0.3, -1.9, 0.7]).unwrap();
        let u_a = control_input(&bundle.system, &bundle.gains, &bundle.reference, &eta_a, 0.4)
            .unwrap();
        let u_b = control_input(&bundle.system, &bundle.gains, &bundle.reference, &eta_b, 0.4)
            .unwrap();
        assert_eq!(u_a, u_b);
    }

    #[test]
    fn control_vanishes_when_damping_matches_and_on_alpha() {
        let bundle = catalog::microphone();
        let sys = &bundle.system;
        // Rbar_e = R_e makes the first summand vanish; x_e = alpha the second.
        let gains = ControllerGains::new(sys.elec_damping().clone(), dmatrix![55.0], sys).unwrap();
        let a = alpha(sys, &gains, &bundle.reference, 0.9).unwrap();
        let eta = StateVector::new(dvector![0.25], dvector![0.1], a).unwrap();
        let u = control_input(sys, &gains, &bundle.reference, &eta, 0.9).unwrap();
        assert!(u.norm() < 1e-12);
    }

    #[test]
    fn pseudo_inverse_is_plain_inverse_for_square_input() {
        let sys = catalog::stepper_motor().system;
        let pinv = sys.input_pseudo_inverse().unwrap();
        let gi = sys.input_matrix().clone().try_inverse().unwrap();
        assert!((pinv - gi).norm() < 1e-13);
    }

    #[test]
    fn matching_identity_at_sample_states() {
        for bundle in [
            catalog::microphone(),
            catalog::loudspeaker(),
            catalog::stepper_motor(),
        ] {
            let sys = &bundle.system;
            let eta = bundle.eta0.clone();
            for t in [0.0, 0.31, 2.7] {
                let u = control_input(sys, &bundle.gains, &bundle.reference, &eta, t).unwrap();
                let open = sys.open_loop_rhs(&eta, &u).unwrap();
                let closed = closed_loop_rhs(sys, &bundle.gains, &bundle.reference, &eta, t)
                    .unwrap();
                let rel = (&open - &closed).norm() / (1.0 + closed.norm());
                assert!(rel < 1e-12, "{}: matching residual {rel}", sys.name());
            }
        }
    }

    #[test]
    fn closed_loop_vanishes_at_constant_feasible_setpoint() {
        // Feasible constant setpoint for the microphone: x_e* = sqrt(2k(gamma_1 - q*)).
        let bundle = catalog::microphone();
        let sys = &bundle.system;
        let q0 = 0.3;
        let xe0 = (2.0_f64 * (1.0 - q0)).sqrt();
        let reference =
            ReferenceTrajectory::constant(dvector![q0], dvector![xe0], sys).unwrap();
        let eta = StateVector::from_slice(1, 1, &[q0, 0.0, xe0]).unwrap();
        for t in [0.0, 1.0, 13.7] {
            let rhs = closed_loop_rhs(sys, &bundle.gains, &reference, &eta, t).unwrap();
            assert!(rhs.norm() < 1e-12, "closed-loop rhs norm {}", rhs.norm());
        }
    }
}
