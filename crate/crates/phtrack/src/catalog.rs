//! Ready-made presets: a 2-phase stepper motor, a capacitive microphone, and
//! a loudspeaker, each bundling the plant, gains, initial condition,
//! reference trajectory, certification domain, and provenance notes.
//!
//! Known source inconsistencies ship as configurable knobs with the
//! self-consistent value as default; every such choice is recorded in the
//! bundle's provenance notes.

use std::sync::Arc;

use nalgebra::{dvector, DMatrix};

use crate::certify::DomainBox;
use crate::controller::ControllerGains;
use crate::model::EMSystem;
use crate::state::StateVector;
use crate::trajectory::{
    stepper_reference_trajectory, ReferenceTrajectory, RefSource, SmoothSignal, StepperRefParams,
};

/// Which reference family to use when a preset ships more than one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// The literal closed form.
    Paper,
    /// Derived by the mechanical-feasibility Newton solve.
    Solver,
}

/// A complete, ready-to-run experiment description.
pub struct PresetBundle {
    pub name: &'static str,
    pub system: Arc<EMSystem>,
    pub gains: ControllerGains,
    pub eta0: StateVector,
    /// Reference used by default in simulations.
    pub reference: ReferenceTrajectory,
    /// Literal closed form, when it differs from the default reference.
    pub paper_reference: Option<ReferenceTrajectory>,
    /// Solver-derived reference, when the square case applies.
    pub solver_reference: Option<ReferenceTrajectory>,
    /// Default certification domain: bounding box of the simulated
    /// closed-loop trajectory inflated by 50%, clamped to `q_domain`.
    pub domain: DomainBox,
    /// Integrator step that keeps the stiffest closed-loop mode inside the
    /// RK4 stability region.
    pub default_step: f64,
    pub t_span: (f64, f64),
    pub provenance: Vec<String>,
}

impl PresetBundle {
    pub fn reference_for(&self, kind: ReferenceKind) -> Option<&ReferenceTrajectory> {
        match kind {
            ReferenceKind::Paper => Some(self.paper_reference.as_ref().unwrap_or(&self.reference)),
            ReferenceKind::Solver => self.solver_reference.as_ref(),
        }
    }
}

/// Look a preset up by its CLI name.
pub fn by_name(name: &str) -> Option<PresetBundle> {
    match name {
        "stepper" | "stepper-motor" => Some(stepper_motor()),
        "microphone" => Some(microphone()),
        "loudspeaker" => Some(loudspeaker()),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 3] = ["stepper", "microphone", "loudspeaker"];

// ---------------------------------------------------------------------------
// Stepper motor
// ---------------------------------------------------------------------------

mod stepper_params {
    pub const MASS: f64 = 1.872e-4;
    pub const R_M: f64 = 2.0;
    pub const R_S: f64 = 0.9;
    pub const K_M: f64 = 2.25;
    pub const K_D: f64 = 0.0176;
    pub const TAU_L: f64 = 1.720129;
    pub const N_R: f64 = 6.0;
}

/// Closed-form reference parameters for the stepper, with the stator
/// inductance as the one free knob.
pub fn stepper_ref_params(l_s: f64) -> StepperRefParams {
    StepperRefParams {
        mass: stepper_params::MASS,
        r_m: stepper_params::R_M,
        k_d: stepper_params::K_D,
        tau_l: stepper_params::TAU_L,
        n_r: stepper_params::N_R,
        k_m: stepper_params::K_M,
        l_s,
    }
}

/// 2-phase stepper motor preset with the default stator inductance 1.
pub fn stepper_motor() -> PresetBundle {
    stepper_motor_with_ls(1.0)
}

/// Stepper motor preset with an explicit stator inductance.
pub fn stepper_motor_with_ls(l_s: f64) -> PresetBundle {
    use stepper_params::*;
    let system = Arc::new(
        EMSystem::builder("stepper", 1, 2)
            .mass(DMatrix::from_element(1, 1, MASS))
            .mech_damping(DMatrix::from_element(1, 1, R_M))
            .elec_interconnection(DMatrix::zeros(2, 2))
            .elec_damping(DMatrix::identity(2, 2) * R_S)
            .input_matrix(DMatrix::identity(2, 2) * 2.0)
            .potential(
                |q| -(K_D / (4.0 * N_R)) * (4.0 * N_R * q[0]).cos() + TAU_L * q[0],
                |q| dvector![K_D * (4.0 * N_R * q[0]).sin() + TAU_L],
                |q| DMatrix::from_element(1, 1, 4.0 * N_R * K_D * (4.0 * N_R * q[0]).cos()),
            )
            .coupling_mu(
                |q| {
                    dvector![
                        (K_M / N_R) * (N_R * q[0]).cos(),
                        (K_M / N_R) * (N_R * q[0]).sin()
                    ]
                },
                |q| {
                    DMatrix::from_column_slice(
                        2,
                        1,
                        &[-K_M * (N_R * q[0]).sin(), K_M * (N_R * q[0]).cos()],
                    )
                },
            )
            .coupling_psi(
                move |_q| DMatrix::identity(2, 2) * l_s,
                |_q, _i| DMatrix::zeros(2, 2),
            )
            .q_domain(
                vec![-std::f64::consts::PI],
                vec![std::f64::consts::PI],
            )
            .analytic_hessian(move |eta| {
                let q = eta.q()[0];
                let theta = N_R * q;
                let mu = dvector![(K_M / N_R) * theta.cos(), (K_M / N_R) * theta.sin()];
                let mu_d1 = dvector![-K_M * theta.sin(), K_M * theta.cos()];
                let mu_d2 = dvector![-K_M * N_R * theta.cos(), -K_M * N_R * theta.sin()];
                let d = eta.x_e() - mu;
                let mut h = DMatrix::zeros(4, 4);
                h[(0, 0)] = 4.0 * N_R * K_D * (4.0 * N_R * q).cos() - l_s * mu_d2.dot(&d)
                    + l_s * mu_d1.norm_squared();
                h[(1, 1)] = 1.0 / MASS;
                h[(0, 2)] = -l_s * mu_d1[0];
                h[(0, 3)] = -l_s * mu_d1[1];
                h[(2, 0)] = h[(0, 2)];
                h[(3, 0)] = h[(0, 3)];
                h[(2, 2)] = l_s;
                h[(3, 3)] = l_s;
                h
            })
            .build()
            .expect("stepper preset construction"),
    );
    let gains = ControllerGains::new(
        DMatrix::from_diagonal(&dvector![23.0, 25.0]),
        DMatrix::identity(2, 2) * 35.0,
        &system,
    )
    .expect("stepper gains");
    let signal = SmoothSignal::sinusoid(0.0, 0.5, 1.0);
    let reference = stepper_reference_trajectory(stepper_ref_params(l_s), signal);
    // Bounding box of the simulated closed loop from eta0, inflated by 50%.
    let domain = DomainBox::new(
        vec![-0.75, -0.0251, -1.84, -1.41],
        vec![0.79, 0.0052, 2.29, 1.75],
        9,
    )
    .expect("stepper default domain");
    let mut provenance = vec![
        "source parameters: M=1.872e-4, R_m=2, R_s=0.9, k_m=2.25, k_D=0.0176, tau_L=1.720129, N_r=6, Rbar_e=diag(23,25), K_c=35, f(t)=0.5 sin t".into(),
        "scalar gain K_c=35 with n_e=2 is interpreted as 35*I".into(),
        format!("L_s is absent from the source parameter list; using L_s={l_s} (the closed-form reference is feasible only for L_s=1)"),
        "the reference formulas use m; identified with the inertia M".into(),
        "Psi = L_s*I is taken exactly as written (a flux-linkage state would classically carry L_s^-1)".into(),
        "default integrator step 1e-4: the mechanical damping mode R_m/M ~ 1.07e4 1/s exceeds the RK4 stability region at step 1e-3".into(),
        "default domain: closed-loop trajectory bounding box +50%, an artifact choice (the source states no certification domain)".into(),
    ];
    if l_s != 1.0 {
        provenance.push("L_s != 1 makes the closed-form reference infeasible; expect feasibility residual C(t)(1 - L_s^2)".into());
    }
    PresetBundle {
        name: "stepper",
        system,
        gains,
        eta0: StateVector::from_slice(1, 2, &[0.2, -0.02, 1.6, -0.3]).expect("stepper eta0"),
        reference,
        paper_reference: None,
        solver_reference: None,
        domain,
        default_step: 1e-4,
        t_span: (0.0, 15.0),
        provenance,
    }
}

// ---------------------------------------------------------------------------
// Microphone
// ---------------------------------------------------------------------------

mod mic_params {
    pub const MASS: f64 = 1.0;
    pub const R_M: f64 = 1.0;
    pub const R_E: f64 = 1.0;
    pub const K: f64 = 1.0;
    pub const GAMMA1: f64 = 1.0;
}

/// Capacitive microphone preset (electrical state: capacitor charge).
pub fn microphone() -> PresetBundle {
    use mic_params::*;
    let system = Arc::new(
        EMSystem::builder("microphone", 1, 1)
            .mass(DMatrix::from_element(1, 1, MASS))
            .mech_damping(DMatrix::from_element(1, 1, R_M))
            .elec_interconnection(DMatrix::zeros(1, 1))
            .elec_damping(DMatrix::from_element(1, 1, R_E))
            .input_matrix(DMatrix::identity(1, 1))
            .potential(
                |q| 0.5 * K * (q[0] - GAMMA1) * (q[0] - GAMMA1),
                |q| dvector![K * (q[0] - GAMMA1)],
                |_q| DMatrix::from_element(1, 1, K),
            )
            .coupling_mu(|_q| dvector![0.0], |_q| DMatrix::zeros(1, 1))
            // Psi(q) = 1/C(q) = q.
            .coupling_psi(
                |q| DMatrix::from_element(1, 1, q[0]),
                |_q, _i| DMatrix::from_element(1, 1, 1.0),
            )
            .q_domain(vec![1e-3], vec![1.5])
            .analytic_hessian(|eta| {
                let mut h = DMatrix::zeros(3, 3);
                h[(0, 0)] = K;
                h[(1, 1)] = 1.0 / MASS;
                h[(0, 2)] = eta.x_e()[0];
                h[(2, 0)] = eta.x_e()[0];
                h[(2, 2)] = eta.q()[0];
                h
            })
            .build()
            .expect("microphone preset construction"),
    );
    let gains = ControllerGains::scalar(30.0, 55.0, &system).expect("microphone gains");
    let signal = SmoothSignal::sinusoid(0.3, 0.2, 1.0);
    let reference = microphone_closed_form_reference(&signal);
    let solver_reference = ReferenceTrajectory::solved(
        Arc::clone(&system),
        signal,
        dvector![1.0],
    )
    .expect("microphone solver reference")
    .with_note("cross-validation twin of the closed form");
    let domain = DomainBox::new(
        vec![1e-3, -0.31, 0.039],
        vec![0.61, 0.34, 1.61],
        9,
    )
    .expect("microphone default domain");
    PresetBundle {
        name: "microphone",
        system,
        gains,
        eta0: StateVector::from_slice(1, 1, &[0.02, -0.02, 0.3]).expect("microphone eta0"),
        reference,
        paper_reference: None,
        solver_reference: Some(solver_reference),
        domain,
        default_step: 1e-3,
        t_span: (0.0, 10.0),
        provenance: vec![
            "source parameters: M=1, R_m=1, R_e=1, k=1, gamma_1=1, Rbar_e=30, K_c=55, f(t)=0.3+0.2 sin t".into(),
            "q_domain [1e-3, 1.5]: the stated range is the open interval (0, inf); a closed sub-box is required for grid certification".into(),
            "default domain: closed-loop trajectory bounding box +50%, clamped to q_domain; artifact choice".into(),
            "reference takes the positive square-root branch".into(),
        ],
    }
}

/// Closed-form microphone reference:
/// `x_e* = sqrt(2k(gamma_1 - f) - 2 R_m f' - 2 M f'')`, positive branch.
fn microphone_closed_form_reference(signal: &SmoothSignal) -> ReferenceTrajectory {
    use mic_params::*;
    let g = |signal: &SmoothSignal, t: f64| {
        2.0 * K * (GAMMA1 - signal.value(t)[0]) - 2.0 * R_M * signal.d1(t)[0]
            - 2.0 * MASS * signal.d2(t)[0]
    };
    let g_dot = |signal: &SmoothSignal, t: f64| {
        -2.0 * K * signal.d1(t)[0] - 2.0 * R_M * signal.d2(t)[0] - 2.0 * MASS * signal.d3(t)[0]
    };
    let sq = signal.clone();
    let sp = signal.clone();
    let sx = signal.clone();
    let sd = signal.clone();
    ReferenceTrajectory::from_closures(
        1,
        1,
        RefSource::ClosedForm,
        move |t| sq.value(t),
        move |t| &sp.d1(t) * MASS,
        move |t| dvector![g(&sx, t).max(0.0).sqrt()],
        move |t| dvector![g_dot(&sd, t) / (2.0 * g(&sd, t).max(f64::MIN_POSITIVE).sqrt())],
    )
}

// ---------------------------------------------------------------------------
// Loudspeaker
// ---------------------------------------------------------------------------

mod speaker_params {
    pub const MASS: f64 = 1.0;
    pub const R_M: f64 = 1.0;
    pub const K: f64 = 1.0;
    pub const ALPHA: f64 = 4.0;
    /// The model text states 0; the numeric block states 1. Default 1.
    pub const R_E_DEFAULT: f64 = 1.0;
}

/// Loudspeaker preset with the default electrical damping (numeric-block
/// value 1).
pub fn loudspeaker() -> PresetBundle {
    loudspeaker_with_re(speaker_params::R_E_DEFAULT)
}

/// Loudspeaker preset with an explicit electrical damping (0 = model-text
/// variant).
pub fn loudspeaker_with_re(r_e: f64) -> PresetBundle {
    use speaker_params::*;
    let system = Arc::new(
        EMSystem::builder("loudspeaker", 1, 1)
            .mass(DMatrix::from_element(1, 1, MASS))
            .mech_damping(DMatrix::from_element(1, 1, R_M))
            .elec_interconnection(DMatrix::zeros(1, 1))
            .elec_damping(DMatrix::from_element(1, 1, r_e))
            .input_matrix(DMatrix::identity(1, 1))
            .potential(
                |q| 0.5 * K * q[0] * q[0],
                |q| dvector![K * q[0]],
                |_q| DMatrix::from_element(1, 1, K),
            )
            .coupling_mu(|_q| dvector![0.0], |_q| DMatrix::zeros(1, 1))
            // Psi(q) = 1/(alpha L(q)) = q/alpha; negative over the shipped
            // q_domain, which check_structure reports (see provenance).
            .coupling_psi(
                |q| DMatrix::from_element(1, 1, q[0] / ALPHA),
                |_q, _i| DMatrix::from_element(1, 1, 1.0 / ALPHA),
            )
            .q_domain(vec![-2.0], vec![1.0])
            .analytic_hessian(|eta| {
                let mut h = DMatrix::zeros(3, 3);
                h[(0, 0)] = K;
                h[(1, 1)] = 1.0 / MASS;
                h[(0, 2)] = eta.x_e()[0] / ALPHA;
                h[(2, 0)] = eta.x_e()[0] / ALPHA;
                h[(2, 2)] = eta.q()[0] / ALPHA;
                h
            })
            .build()
            .expect("loudspeaker preset construction"),
    );
    let gains = ControllerGains::scalar(100.0, 3.5, &system).expect("loudspeaker gains");
    let signal = SmoothSignal::sinusoid(-1.0, 0.3, 1.0);
    let solver_reference = ReferenceTrajectory::solved(
        Arc::clone(&system),
        signal.clone(),
        dvector![2.4],
    )
    .expect("loudspeaker solver reference")
    .with_note("solver-derived: x_e*^2 = 2 alpha (-k f - R_m f' - M f''); carries the alpha factor missing from the literal closed form");
    let paper_reference = loudspeaker_literal_reference(&signal).with_note(
        "literal closed form (gamma_1 = 0 variant of the microphone formula); infeasible by the alpha factor",
    );
    let domain = DomainBox::new(
        vec![-1.77, -0.67, 1.92],
        vec![0.38, 0.55, 3.53],
        9,
    )
    .expect("loudspeaker default domain");
    PresetBundle {
        name: "loudspeaker",
        system,
        gains,
        eta0: StateVector::from_slice(1, 1, &[0.02, -0.02, 2.3]).expect("loudspeaker eta0"),
        reference: solver_reference.clone(),
        paper_reference: Some(paper_reference),
        solver_reference: Some(solver_reference),
        domain,
        default_step: 1e-3,
        t_span: (0.0, 10.0),
        provenance: vec![
            "source parameters: M=1, R_m=1, k=1, alpha=4, Rbar_e=100, K_c=3.5, f(t)=0.3 sin t - 1".into(),
            format!("R_e stated as 0 in the model text and 1 in the numeric block; using R_e={r_e}"),
            "the stated q range (0, inf) conflicts with the negative-valued reference; shipped q_domain [-2, 1] covers the trajectory and Psi(q)=q/alpha is negative there, which check_structure reports".into(),
            "default reference is solver-derived; the literal closed form misses the alpha factor and fails feasibility with mechanical residual (1 - 1/alpha)(k f + R_m f' + M f'')".into(),
            "default domain: closed-loop trajectory bounding box +50%; artifact choice".into(),
            "reference takes the positive square-root branch".into(),
        ],
    }
}

/// Literal loudspeaker closed form: the microphone formula with `gamma_1 = 0`.
fn loudspeaker_literal_reference(signal: &SmoothSignal) -> ReferenceTrajectory {
    use speaker_params::*;
    let g = |signal: &SmoothSignal, t: f64| {
        -2.0 * K * signal.value(t)[0] - 2.0 * R_M * signal.d1(t)[0] - 2.0 * MASS * signal.d2(t)[0]
    };
    let g_dot = |signal: &SmoothSignal, t: f64| {
        -2.0 * K * signal.d1(t)[0] - 2.0 * R_M * signal.d2(t)[0] - 2.0 * MASS * signal.d3(t)[0]
    };
    let sq = signal.clone();
    let sp = signal.clone();
    let sx = signal.clone();
    let sd = signal.clone();
    ReferenceTrajectory::from_closures(
        1,
        1,
        RefSource::ClosedForm,
        move |t| sq.value(t),
        move |t| &sp.d1(t) * MASS,
        move |t| dvector![g(&sx, t).max(0.0).sqrt()],
        move |t| dvector![g_dot(&sd, t) / (2.0 * g(&sd, t).max(f64::MIN_POSITIVE).sqrt())],
    )
}
