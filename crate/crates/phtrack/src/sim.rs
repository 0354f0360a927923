//! Fixed-step integration of open- and closed-loop dynamics, tracking-error
//! measurement, and empirical convergence-rate fits.

use nalgebra::DVector;
use serde::Serialize;

use crate::controller::{self, ControllerGains};
use crate::error::{Error, Result};
use crate::model::EMSystem;
use crate::numeric;
use crate::state::StateVector;
use crate::trajectory::ReferenceTrajectory;

/// Default integrator step in seconds.
pub const DEFAULT_STEP: f64 = 1e-3;
/// Error norms below this are considered at the numerical noise floor.
pub const NOISE_FLOOR: f64 = 1e-14;

/// Fixed-step options for the classical Runge-Kutta integrator.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepOptions {
    pub step: f64,
    /// Keep every `record_every`-th sample (the final state is always kept).
    pub record_every: usize,
    /// Rate-fit window as fractions of the time span.
    pub fit_window: (f64, f64),
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            record_every: 1,
            fit_window: (0.2, 0.8),
        }
    }
}

impl StepOptions {
    pub fn with_step(step: f64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }
}

/// Time-indexed trajectory produced by [`integrate`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

/// Like [`integrate`], but on divergence returns the finite prefix of the
/// trajectory together with the last finite time.
pub fn integrate_partial<F>(
    rhs: F,
    eta0: &DVector<f64>,
    t0: f64,
    t1: f64,
    opts: &StepOptions,
) -> Result<(Trajectory, Option<f64>)>
where
    F: Fn(&DVector<f64>, f64) -> Result<DVector<f64>>,
{
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!(
            "integrate needs t1 > t0, got [{t0}, {t1}]"
        )));
    }
    if !(opts.step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "integrate needs a positive step, got {}",
            opts.step
        )));
    }
    let every = opts.record_every.max(1);
    let n_steps = ((t1 - t0) / opts.step).round().max(1.0) as usize;
    let h = (t1 - t0) / n_steps as f64;

    let mut t = t0;
    let mut y = eta0.clone();
    let mut out = Trajectory {
        t: Vec::with_capacity(n_steps / every + 2),
        states: Vec::with_capacity(n_steps / every + 2),
    };
    out.t.push(t);
    out.states.push(y.clone());
    for step_idx in 1..=n_steps {
        let k1 = rhs(&y, t)?;
        let k2 = rhs(&(&y + &k1 * (h / 2.0)), t + h / 2.0)?;
        let k3 = rhs(&(&y + &k2 * (h / 2.0)), t + h / 2.0)?;
        let k4 = rhs(&(&y + &k3 * h), t + h)?;
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t = t0 + h * step_idx as f64;
        if y.iter().any(|v| !v.is_finite()) {
            return Ok((out, Some(t0 + h * (step_idx - 1) as f64)));
        }
        if step_idx % every == 0 || step_idx == n_steps {
            out.t.push(t);
            out.states.push(y.clone());
        }
    }
    Ok((out, None))
}

/// Classical 4th-order Runge-Kutta with fixed step.
///
/// Stops with [`Error::Divergence`] carrying the last finite time if any
/// state entry stops being finite.
pub fn integrate<F>(
    rhs: F,
    eta0: &DVector<f64>,
    t0: f64,
    t1: f64,
    opts: &StepOptions,
) -> Result<Trajectory>
where
    F: Fn(&DVector<f64>, f64) -> Result<DVector<f64>>,
{
    match integrate_partial(rhs, eta0, t0, t1, opts)? {
        (_, Some(t_last)) => Err(Error::Divergence { t_last }),
        (traj, None) => Ok(traj),
    }
}

/// Exponential-rate fit of an error-norm series.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    /// Decay rate (positive means the series shrinks).
    pub rate: f64,
    /// RMS residual of the straight-line fit in log space.
    pub log_rms_residual: f64,
    /// Absolute fit window actually used.
    pub window: (f64, f64),
}

/// Least-squares slope of `log(error)` over the window given as fractions of
/// the span; the fitted decay rate is the negated slope.
pub fn estimate_convergence_rate(
    t: &[f64],
    error_norms: &[f64],
    window: (f64, f64),
) -> Result<RateFit> {
    if t.len() != error_norms.len() || t.len() < 3 {
        return Err(Error::InvalidArgument(
            "rate fit needs matching t / error series with at least 3 samples".into(),
        ));
    }
    if !(0.0..1.0).contains(&window.0) || !(window.0 < window.1 && window.1 <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid fit window ({}, {})",
            window.0, window.1
        )));
    }
    let t_lo = t[0] + (t[t.len() - 1] - t[0]) * window.0;
    let t_hi = t[0] + (t[t.len() - 1] - t[0]) * window.1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (ti, ei) in t.iter().zip(error_norms) {
        if *ti >= t_lo && *ti <= t_hi && *ei > NOISE_FLOOR {
            xs.push(*ti);
            ys.push(ei.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::NoiseFloor);
    }
    let (slope, _, rms) = numeric::line_fit(&xs, &ys);
    Ok(RateFit {
        rate: -slope,
        log_rms_residual: rms,
        window: (t_lo, t_hi),
    })
}

/// Everything measured during one closed-loop tracking run.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub t_grid: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub reference: Vec<DVector<f64>>,
    /// Componentwise `eta - eta*` per sample, flattening order.
    pub errors: Vec<DVector<f64>>,
    pub error_norms: Vec<f64>,
    pub control: Vec<DVector<f64>>,
    pub fitted_rate: Option<RateFit>,
    pub final_error: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Diagnostics {
    pub step: f64,
    pub n_steps: usize,
    /// Fixed-step integrator: always zero, kept for schema stability.
    pub rejected_steps: usize,
}

impl SimulationResult {
    /// Mechanical-position rows of the error, per sample.
    pub fn error_component(&self, first: usize, count: usize) -> Vec<f64> {
        self.errors
            .iter()
            .map(|e| e.rows(first, count).norm())
            .collect()
    }
}

/// A tracking run that may have stopped early on divergence; the recorded
/// samples cover the finite prefix.
#[derive(Debug, Clone)]
pub struct TrackingOutcome {
    pub result: SimulationResult,
    pub diverged_at: Option<f64>,
}

/// Integrate the closed loop against a reference, logging the applied input
/// and the tracking error, and fit the empirical decay rate. Divergence is
/// reported in the outcome rather than as an error, keeping the finite
/// prefix available.
pub fn run_tracking(
    sys: &EMSystem,
    gains: &ControllerGains,
    reference: &ReferenceTrajectory,
    eta0: &StateVector,
    t_span: (f64, f64),
    opts: &StepOptions,
) -> Result<TrackingOutcome> {
    let n_m = sys.n_m();
    let n_e = sys.n_e();
    let rhs = |flat: &DVector<f64>, t: f64| -> Result<DVector<f64>> {
        let eta = StateVector::from_flat(n_m, n_e, flat.clone())?;
        controller::closed_loop_rhs(sys, gains, reference, &eta, t)
    };
    let (traj, diverged_at) = integrate_partial(rhs, eta0.as_flat(), t_span.0, t_span.1, opts)?;

    let mut reference_states = Vec::with_capacity(traj.t.len());
    let mut errors = Vec::with_capacity(traj.t.len());
    let mut error_norms = Vec::with_capacity(traj.t.len());
    let mut control = Vec::with_capacity(traj.t.len());
    for (t, flat) in traj.t.iter().zip(&traj.states) {
        let eta = StateVector::from_flat(n_m, n_e, flat.clone())?;
        let eta_star = reference.eval(*t).into_flat();
        let err = flat - &eta_star;
        error_norms.push(err.norm());
        control.push(controller::control_input(sys, gains, reference, &eta, *t)?);
        reference_states.push(eta_star);
        errors.push(err);
    }
    let fitted_rate = estimate_convergence_rate(&traj.t, &error_norms, opts.fit_window).ok();
    let final_error = *error_norms.last().expect("at least one sample");
    let n_steps = ((t_span.1 - t_span.0) / opts.step).round() as usize;
    Ok(TrackingOutcome {
        result: SimulationResult {
            t_grid: traj.t,
            states: traj.states,
            reference: reference_states,
            errors,
            error_norms,
            control,
            fitted_rate,
            final_error,
            diagnostics: Diagnostics {
                step: opts.step,
                n_steps,
                rejected_steps: 0,
            },
        },
        diverged_at,
    })
}

/// [`run_tracking`] with divergence escalated to [`Error::Divergence`].
pub fn run_tracking_experiment(
    sys: &EMSystem,
    gains: &ControllerGains,
    reference: &ReferenceTrajectory,
    eta0: &StateVector,
    t_span: (f64, f64),
    opts: &StepOptions,
) -> Result<SimulationResult> {
    let outcome = run_tracking(sys, gains, reference, eta0, t_span, opts)?;
    match outcome.diverged_at {
        Some(t_last) => Err(Error::Divergence { t_last }),
        None => Ok(outcome.result),
    }
}

/// Paired closed-loop runs from two initial conditions plus the decay fit of
/// their mutual distance.
#[derive(Debug, Clone)]
pub struct ContractionProbe {
    pub t_grid: Vec<f64>,
    pub distances: Vec<f64>,
    pub initial_distance: f64,
    pub final_distance: f64,
    pub fit: Option<RateFit>,
}

/// Integrate two copies of the closed loop and fit the decay rate of their
/// state distance.
pub fn contraction_probe(
    sys: &EMSystem,
    gains: &ControllerGains,
    reference: &ReferenceTrajectory,
    eta0_a: &StateVector,
    eta0_b: &StateVector,
    t_span: (f64, f64),
    opts: &StepOptions,
) -> Result<ContractionProbe> {
    let n_m = sys.n_m();
    let n_e = sys.n_e();
    let rhs = |flat: &DVector<f64>, t: f64| -> Result<DVector<f64>> {
        let eta = StateVector::from_flat(n_m, n_e, flat.clone())?;
        controller::closed_loop_rhs(sys, gains, reference, &eta, t)
    };
    let traj_a = integrate(&rhs, eta0_a.as_flat(), t_span.0, t_span.1, opts)?;
    let traj_b = integrate(&rhs, eta0_b.as_flat(), t_span.0, t_span.1, opts)?;
    let distances: Vec<f64> = traj_a
        .states
        .iter()
        .zip(&traj_b.states)
        .map(|(a, b)| (a - b).norm())
        .collect();
    let fit = estimate_convergence_rate(&traj_a.t, &distances, opts.fit_window).ok();
    Ok(ContractionProbe {
        initial_distance: distances[0],
        final_distance: *distances.last().expect("at least one sample"),
        t_grid: traj_a.t,
        distances,
        fit,
    })
}

/// Running maximum over trailing chunks of `chunk` seconds, starting at
/// `t_start`. Non-increasing chunk maxima certify a monotone decay envelope.
pub fn envelope_chunk_maxima(t: &[f64], norms: &[f64], t_start: f64, chunk: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let t_end = match t.last() {
        Some(v) => *v,
        None => return out,
    };
    let mut lo = t_start;
    while lo < t_end {
        let hi = lo + chunk;
        let m = t
            .iter()
            .zip(norms)
            .filter(|(ti, _)| **ti >= lo && **ti < hi)
            .map(|(_, n)| *n)
            .fold(f64::MIN, f64::max);
        if m > f64::MIN {
            out.push(m);
        }
        lo = hi;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn integrates_scalar_exponential() {
        let opts = StepOptions::with_step(1e-3);
        let traj = integrate(|y, _| Ok(-y), &dvector![1.0], 0.0, 1.0, &opts).unwrap();
        let expected = (-1.0f64).exp();
        assert!((traj.states.last().unwrap()[0] - expected).abs() < 1e-6);
    }

    #[test]
    fn constant_field_stays_put() {
        let opts = StepOptions::with_step(1e-2);
        let traj = integrate(
            |y, _| Ok(DVector::zeros(y.len())),
            &dvector![2.0, -3.0],
            0.0,
            5.0,
            &opts,
        )
        .unwrap();
        for s in &traj.states {
            assert_eq!(s.as_slice(), &[2.0, -3.0]);
        }
    }

    #[test]
    fn fourth_order_convergence_on_exponential() {
        let err = |h: f64| {
            let traj =
                integrate(|y, _| Ok(-y), &dvector![1.0], 0.0, 1.0, &StepOptions::with_step(h))
                    .unwrap();
            (traj.states.last().unwrap()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.01) / err(0.005);
        assert!(ratio > 15.0, "observed order ratio {ratio}");
    }

    #[test]
    fn divergence_reports_last_finite_time() {
        // dy/dt = y^2 from y(0) = 1 blows up at t = 1.
        let opts = StepOptions::with_step(1e-3);
        let err = integrate(
            |y, _| Ok(dvector![y[0] * y[0]]),
            &dvector![1.0],
            0.0,
            2.0,
            &opts,
        )
        .unwrap_err();
        match err {
            Error::Divergence { t_last } => assert!((0.9..=1.1).contains(&t_last)),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn record_every_decimates_but_keeps_last() {
        let mut opts = StepOptions::with_step(0.1);
        opts.record_every = 4;
        let traj = integrate(|_, _| Ok(dvector![1.0]), &dvector![0.0], 0.0, 1.0, &opts).unwrap();
        assert_eq!(traj.t.len(), 4); // t = 0.0, 0.4, 0.8 and the final 1.0
        assert!((traj.t.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_recovers_synthetic_exponential() {
        let t: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.01).collect();
        let e: Vec<f64> = t.iter().map(|ti| (-2.0 * ti).exp()).collect();
        let fit = estimate_convergence_rate(&t, &e, (0.2, 0.8)).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-6);
        assert!(fit.log_rms_residual < 1e-9);
    }

    #[test]
    fn rate_fit_flags_non_exponential_series() {
        // 1/(1+t) bends hard near t = 0; over the full window the log-space
        // fit residual is orders of magnitude above an exponential's.
        let t: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.01).collect();
        let e: Vec<f64> = t.iter().map(|ti| 1.0 / (1.0 + ti)).collect();
        let fit = estimate_convergence_rate(&t, &e, (0.0, 1.0)).unwrap();
        assert!(fit.log_rms_residual > 0.05, "residual {}", fit.log_rms_residual);
    }

    #[test]
    fn rate_fit_errors_at_noise_floor() {
        let t: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let e = vec![1e-16; 100];
        assert!(matches!(
            estimate_convergence_rate(&t, &e, (0.2, 0.8)),
            Err(Error::NoiseFloor)
        ));
    }

    #[test]
    fn envelope_chunks_of_decaying_series_are_monotone() {
        let t: Vec<f64> = (0..=5000).map(|i| i as f64 * 1e-3).collect();
        let e: Vec<f64> = t.iter().map(|ti| (-0.5 * ti).exp() * (3.0 * ti).cos().abs()).collect();
        let chunks = envelope_chunk_maxima(&t, &e, 1.0, 1.0);
        for w in chunks.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }
}
