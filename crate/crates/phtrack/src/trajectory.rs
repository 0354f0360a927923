//! Feasible reference trajectories and feasibility verification.
//!
//! A reference `eta*(t) = (q*, p*, x_e*)` is feasible when some input `u*(t)`
//! makes the pair an exact solution of the plant. For the square case
//! (`n_e = n_m`) the electrical coordinate is pinned by the mechanical
//! momentum balance, which [`solve_feasible_xe`] solves by Newton iteration;
//! the stepper motor (`n_e = 2, n_m = 1`) instead uses its sin/cos closed form.

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::EMSystem;
use crate::numeric;
use crate::state::StateVector;

/// Step for central time-differencing of reference evaluators.
pub const TIME_FD_STEP: f64 = 1e-5;

/// Newton tolerance and iteration cap for [`solve_feasible_xe`].
pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

type TimeFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Where a reference came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefSource {
    ClosedForm,
    Solved,
    User,
}

/// A smooth time signal with three derivatives, one component per mechanical
/// coordinate.
#[derive(Clone)]
pub struct SmoothSignal {
    f: TimeFn,
    d1: TimeFn,
    d2: TimeFn,
    d3: TimeFn,
}

impl SmoothSignal {
    pub fn new<F, G, H, K>(f: F, d1: G, d2: H, d3: K) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        K: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            d1: Arc::new(d1),
            d2: Arc::new(d2),
            d3: Arc::new(d3),
        }
    }

    /// Scalar signal `offset + amplitude * sin(omega t)`.
    pub fn sinusoid(offset: f64, amplitude: f64, omega: f64) -> Self {
        let s = move |t: f64| DVector::from_element(1, offset + amplitude * (omega * t).sin());
        let s1 = move |t: f64| DVector::from_element(1, amplitude * omega * (omega * t).cos());
        let s2 = move |t: f64| {
            DVector::from_element(1, -amplitude * omega * omega * (omega * t).sin())
        };
        let s3 = move |t: f64| {
            DVector::from_element(1, -amplitude * omega * omega * omega * (omega * t).cos())
        };
        Self::new(s, s1, s2, s3)
    }

    /// Constant scalar signal.
    pub fn constant(value: DVector<f64>) -> Self {
        let n = value.len();
        let zero = move |_t: f64| DVector::zeros(n);
        let v = value.clone();
        Self::new(
            move |_t| v.clone(),
            zero.clone(),
            zero.clone(),
            zero,
        )
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        (self.f)(t)
    }

    pub fn d1(&self, t: f64) -> DVector<f64> {
        (self.d1)(t)
    }

    pub fn d2(&self, t: f64) -> DVector<f64> {
        (self.d2)(t)
    }

    pub fn d3(&self, t: f64) -> DVector<f64> {
        (self.d3)(t)
    }
}

/// Time-parameterized reference `eta*(t)` with its electrical rate.
#[derive(Clone)]
pub struct ReferenceTrajectory {
    n_m: usize,
    n_e: usize,
    source: RefSource,
    q_star: TimeFn,
    p_star: TimeFn,
    xe_star: TimeFn,
    xe_star_dot: TimeFn,
    u_star: Option<TimeFn>,
    notes: Vec<String>,
}

impl ReferenceTrajectory {
    pub fn from_closures<Q, P, X, XD>(
        n_m: usize,
        n_e: usize,
        source: RefSource,
        q_star: Q,
        p_star: P,
        xe_star: X,
        xe_star_dot: XD,
    ) -> Self
    where
        Q: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        P: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        X: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        XD: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            n_m,
            n_e,
            source,
            q_star: Arc::new(q_star),
            p_star: Arc::new(p_star),
            xe_star: Arc::new(xe_star),
            xe_star_dot: Arc::new(xe_star_dot),
            u_star: None,
            notes: Vec::new(),
        }
    }

    /// Constant setpoint `(q0, 0, xe0)` for regulation.
    pub fn constant(q0: DVector<f64>, xe0: DVector<f64>, sys: &EMSystem) -> Result<Self> {
        if q0.len() != sys.n_m() || xe0.len() != sys.n_e() {
            return Err(Error::DimensionMismatch {
                context: "ReferenceTrajectory::constant",
                expected: sys.n_m(),
                got: q0.len(),
            });
        }
        let n_m = sys.n_m();
        let n_e = sys.n_e();
        let p0 = DVector::zeros(n_m);
        let xed = DVector::zeros(n_e);
        Ok(Self::from_closures(
            n_m,
            n_e,
            RefSource::User,
            move |_| q0.clone(),
            move |_| p0.clone(),
            move |_| xe0.clone(),
            move |_| xed.clone(),
        ))
    }

    /// Reference built by solving the mechanical feasibility equation for
    /// `x_e*(t)` at every requested time (square case `n_e = n_m`).
    ///
    /// Roots are continued from the previously solved time to stay on one
    /// branch; the electrical rate comes from central differencing of the
    /// solved root (step [`TIME_FD_STEP`]).
    pub fn solved(sys: Arc<EMSystem>, signal: SmoothSignal, guess: DVector<f64>) -> Result<Self> {
        if sys.n_e() != sys.n_m() {
            return Err(Error::InvalidArgument(
                "solver-derived references need n_e = n_m; use a closed form instead".into(),
            ));
        }
        let n_m = sys.n_m();
        let n_e = sys.n_e();
        let mass = sys.mass().clone();
        let sig_q = signal.clone();
        let sig_p = signal.clone();

        let cache: Arc<Mutex<(f64, DVector<f64>)>> =
            Arc::new(Mutex::new((f64::NEG_INFINITY, guess)));
        let solve_at = {
            let sys = Arc::clone(&sys);
            let signal = signal.clone();
            move |t: f64| -> DVector<f64> {
                let mut last = cache.lock().expect("poisoned root cache");
                let start = if last.0.is_finite() { last.1.clone() } else { last.1.clone() };
                let root = solve_feasible_xe(&sys, &signal, t, &start)
                    .unwrap_or_else(|e| panic!("feasibility solve failed at t = {t}: {e}"));
                *last = (t, root.clone());
                root
            }
        };
        let solve_for_dot = solve_at.clone();
        Ok(Self {
            n_m,
            n_e,
            source: RefSource::Solved,
            q_star: Arc::new(move |t| sig_q.value(t)),
            p_star: Arc::new(move |t| &mass * sig_p.d1(t)),
            xe_star: Arc::new(solve_at),
            xe_star_dot: Arc::new(move |t| {
                (solve_for_dot(t + TIME_FD_STEP) - solve_for_dot(t - TIME_FD_STEP))
                    / (2.0 * TIME_FD_STEP)
            }),
            u_star: None,
            notes: Vec::new(),
        })
    }

    pub fn with_u_star<U>(mut self, u_star: U) -> Self
    where
        U: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        self.u_star = Some(Arc::new(u_star));
        self
    }

    pub fn with_note(mut self, note: &str) -> Self {
        self.notes.push(note.to_string());
        self
    }

    pub fn n_m(&self) -> usize {
        self.n_m
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    pub fn source(&self) -> RefSource {
        self.source
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn q_star(&self, t: f64) -> DVector<f64> {
        (self.q_star)(t)
    }

    pub fn p_star(&self, t: f64) -> DVector<f64> {
        (self.p_star)(t)
    }

    pub fn xe_star(&self, t: f64) -> DVector<f64> {
        (self.xe_star)(t)
    }

    pub fn xe_star_dot(&self, t: f64) -> DVector<f64> {
        (self.xe_star_dot)(t)
    }

    pub fn u_star(&self, t: f64) -> Option<DVector<f64>> {
        self.u_star.as_ref().map(|u| u(t))
    }

    /// Assembled state `eta*(t)`.
    pub fn eval(&self, t: f64) -> StateVector {
        StateVector::new(self.q_star(t), self.p_star(t), self.xe_star(t))
            .expect("reference evaluators returned inconsistent dimensions")
    }
}

/// Mechanical feasibility residual
/// `r(x) = M f'' + grad V(f) + grad_q[coupling](f, x) + R_m f'`
/// evaluated at `q = f(t)`, together with its Jacobian in `x`.
fn mechanical_residual(
    sys: &EMSystem,
    signal: &SmoothSignal,
    t: f64,
    x: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let q = signal.value(t);
    let d = x - sys.coupling_mu(&q);
    let psi = sys.coupling_psi(&q);
    let mu_jac = sys.coupling_mu_jacobian(&q);
    let jmt_psi = mu_jac.transpose() * &psi;

    let mut r = sys.mass() * signal.d2(t)
        + sys.potential_gradient(&q)
        + sys.mech_damping() * signal.d1(t);
    let n_m = sys.n_m();
    let mut jac = DMatrix::zeros(n_m, sys.n_e());
    for i in 0..n_m {
        let a_i = sys.coupling_dpsi_dq(&q, i);
        r[i] += 0.5 * (d.transpose() * &a_i * &d)[(0, 0)];
        jac.row_mut(i).copy_from(&(&a_i * &d).transpose());
    }
    r -= &jmt_psi * &d;
    jac -= jmt_psi;
    (r, jac)
}

/// Newton solve of the mechanical feasibility equation for `x_e*` at one time.
///
/// Requires the square case `n_e = n_m`; the stepper's underdetermined case
/// uses [`stepper_reference`] instead.
pub fn solve_feasible_xe(
    sys: &EMSystem,
    signal: &SmoothSignal,
    t: f64,
    guess: &DVector<f64>,
) -> Result<DVector<f64>> {
    if sys.n_e() != sys.n_m() {
        return Err(Error::InvalidArgument(format!(
            "solve_feasible_xe needs n_e = n_m, got n_e = {}, n_m = {}",
            sys.n_e(),
            sys.n_m()
        )));
    }
    let mut x = guess.clone();
    let mut residual = f64::MAX;
    for _ in 0..NEWTON_MAX_ITER {
        let (r, jac) = mechanical_residual(sys, signal, t, &x);
        residual = r.norm();
        if residual <= NEWTON_TOL {
            // Polish to the rounding floor so the root no longer depends on
            // the warm start; evaluators must be idempotent in t.
            for _ in 0..2 {
                let (r, jac) = mechanical_residual(sys, signal, t, &x);
                match jac.lu().solve(&r) {
                    Some(step) => x -= step,
                    None => break,
                }
            }
            return Ok(x);
        }
        let step = jac
            .lu()
            .solve(&r)
            .ok_or(Error::SingularMatrix("feasibility Newton Jacobian"))?;
        x -= step;
    }
    // One more residual check: the last step may have landed on the root.
    let (r, _) = mechanical_residual(sys, signal, t, &x);
    if r.norm() <= NEWTON_TOL {
        return Ok(x);
    }
    Err(Error::SolverDidNotConverge {
        iterations: NEWTON_MAX_ITER,
        residual,
    })
}

/// Parameters of the stepper-motor closed-form reference.
#[derive(Debug, Clone, Serialize)]
pub struct StepperRefParams {
    pub mass: f64,
    pub r_m: f64,
    pub k_d: f64,
    pub tau_l: f64,
    pub n_r: f64,
    pub k_m: f64,
    pub l_s: f64,
}

/// Closed-form stepper reference:
/// `q* = f`, `p* = M f'`,
/// `x_e* = (L_s C / k_m) [-sin(N_r f), cos(N_r f)]` with
/// `C = M f'' + k_D sin(4 N_r f) + R_m f' + tau_L`,
/// and `dx_e*/dt` by analytic differentiation.
pub fn stepper_reference(
    params: &StepperRefParams,
    signal: &SmoothSignal,
    t: f64,
) -> Result<(StateVector, DVector<f64>)> {
    let f = signal.value(t)[0];
    if !(-std::f64::consts::PI..=std::f64::consts::PI).contains(&f) {
        return Err(Error::OutOfDomain {
            context: "stepper_reference (q* must stay in [-pi, pi])",
            index: 0,
            value: f,
        });
    }
    let fd = signal.d1(t)[0];
    let fdd = signal.d2(t)[0];
    let fddd = signal.d3(t)[0];
    let StepperRefParams {
        mass,
        r_m,
        k_d,
        tau_l,
        n_r,
        k_m,
        l_s,
    } = *params;

    let c = mass * fdd + k_d * (4.0 * n_r * f).sin() + r_m * fd + tau_l;
    let c_dot = mass * fddd + 4.0 * n_r * k_d * (4.0 * n_r * f).cos() * fd + r_m * fdd;
    let theta = n_r * f;
    let theta_dot = n_r * fd;
    let scale = l_s / k_m;

    let xe = DVector::from_column_slice(&[
        -scale * c * theta.sin(),
        scale * c * theta.cos(),
    ]);
    let xe_dot = DVector::from_column_slice(&[
        -scale * (c_dot * theta.sin() + c * theta_dot * theta.cos()),
        scale * (c_dot * theta.cos() - c * theta_dot * theta.sin()),
    ]);
    let eta = StateVector::new(
        DVector::from_element(1, f),
        DVector::from_element(1, mass * fd),
        xe,
    )?;
    Ok((eta, xe_dot))
}

/// Build a [`ReferenceTrajectory`] from the stepper closed form.
pub fn stepper_reference_trajectory(
    params: StepperRefParams,
    signal: SmoothSignal,
) -> ReferenceTrajectory {
    let pq = params.clone();
    let sq = signal.clone();
    let pp = params.clone();
    let sp = signal.clone();
    let px = params.clone();
    let sx = signal.clone();
    let eval = move |params: &StepperRefParams, signal: &SmoothSignal, t: f64| {
        stepper_reference(params, signal, t)
            .unwrap_or_else(|e| panic!("stepper reference out of range at t = {t}: {e}"))
    };
    ReferenceTrajectory::from_closures(
        1,
        2,
        RefSource::ClosedForm,
        move |t| eval(&pq, &sq, t).0.q().into_owned(),
        move |t| eval(&pp, &sp, t).0.p().into_owned(),
        move |t| eval(&px, &sx, t).0.x_e().into_owned(),
        move |t| eval(&params, &signal, t).1,
    )
}

/// Per-sample entry of a feasibility report.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilitySample {
    pub t: f64,
    pub r_q_norm: f64,
    pub r_p_norm: f64,
    pub u_star: Vec<f64>,
}

/// Residual report for Definition-1 feasibility of a reference.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub source: RefSource,
    pub tol: f64,
    pub max_r_q: f64,
    pub max_r_p: f64,
    pub passed: bool,
    pub notes: Vec<String>,
    pub samples: Vec<FeasibilitySample>,
}

/// Check the mechanical rows of the plant along the reference and reconstruct
/// the feasible input from the electrical row:
///
/// `r_q = dq*/dt - dH/dp(eta*)`,
/// `r_p = dp*/dt + dH/dq(eta*) + R_m dH/dp(eta*)`,
/// `u* = G_e^+ (dx_e*/dt - (J_e - R_e) dH/dx_e(eta*))`.
///
/// Time derivatives of `q*`, `p*` are taken by central differences.
pub fn check_feasibility(
    sys: &EMSystem,
    reference: &ReferenceTrajectory,
    t_samples: &[f64],
    tol: f64,
) -> Result<FeasibilityReport> {
    if reference.n_m() != sys.n_m() || reference.n_e() != sys.n_e() {
        return Err(Error::DimensionMismatch {
            context: "check_feasibility",
            expected: sys.dim(),
            got: 2 * reference.n_m() + reference.n_e(),
        });
    }
    let g_pinv = sys.input_pseudo_inverse()?;
    let n_m = sys.n_m();
    let n_e = sys.n_e();
    let mut samples = Vec::with_capacity(t_samples.len());
    let mut max_r_q: f64 = 0.0;
    let mut max_r_p: f64 = 0.0;
    for &t in t_samples {
        let eta = reference.eval(t);
        let grad = sys.grad_hamiltonian(&eta)?;
        let g_q = grad.rows(0, n_m).into_owned();
        let g_p = grad.rows(n_m, n_m).into_owned();
        let g_x = grad.rows(2 * n_m, n_e).into_owned();

        let q_dot = numeric::central_time_derivative(|s| reference.q_star(s), t, TIME_FD_STEP);
        let p_dot = numeric::central_time_derivative(|s| reference.p_star(s), t, TIME_FD_STEP);

        let r_q = (&q_dot - &g_p).norm();
        let r_p = (&p_dot + &g_q + sys.mech_damping() * &g_p).norm();
        let u_star =
            &g_pinv * (reference.xe_star_dot(t) - (sys.elec_interconnection() - sys.elec_damping()) * g_x);

        max_r_q = max_r_q.max(r_q);
        max_r_p = max_r_p.max(r_p);
        samples.push(FeasibilitySample {
            t,
            r_q_norm: r_q,
            r_p_norm: r_p,
            u_star: u_star.as_slice().to_vec(),
        });
    }
    let passed = max_r_q <= tol && max_r_p <= tol;
    Ok(FeasibilityReport {
        source: reference.source(),
        tol,
        max_r_q,
        max_r_p,
        passed,
        notes: reference.notes().to_vec(),
        samples,
    })
}
