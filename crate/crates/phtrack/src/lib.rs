//! Contraction-based trajectory tracking for port-Hamiltonian
//! electromechanical systems: plant modeling, controller synthesis,
//! contraction certification, feasible-reference construction, and
//! closed-loop simulation.

pub mod catalog;
pub mod certify;
pub mod controller;
pub mod error;
pub mod model;
pub mod numeric;
pub mod sim;
pub mod state;
pub mod trajectory;

pub use catalog::{PresetBundle, ReferenceKind};
pub use certify::{certify, CertificationReport, DomainBox};
pub use controller::{alpha, closed_loop_rhs, control_input, theta, ControllerGains};
pub use error::{Error, Result};
pub use model::{EMSystem, QDomain, StructureReport};
pub use sim::{
    contraction_probe, estimate_convergence_rate, integrate, run_tracking,
    run_tracking_experiment, SimulationResult, StepOptions, TrackingOutcome,
};
pub use state::StateVector;
pub use trajectory::{
    check_feasibility, solve_feasible_xe, stepper_reference, FeasibilityReport,
    ReferenceTrajectory, SmoothSignal,
};
