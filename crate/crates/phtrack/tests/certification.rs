//! Certification-pipeline regressions: Hurwitz properties over random
//! damping draws, the spectral-factorization cross-check, frozen spectra,
//! and the evidence the pipeline produces for the catalog presets.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phtrack::catalog;
use phtrack::certify::{
    build_f1, build_n, build_p, certify, default_epsilon_grid, estimate_hessian_bounds,
    is_hurwitz, spectral_factorization_residual, DomainBox, DEFAULT_MARGIN, DEFAULT_RE_TOL,
};
use phtrack::numeric::{complex_spectrum, symmetric_eigenvalues};
use phtrack::state::StateVector;

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * (0.1 * n as f64)
}

fn random_skew(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    (&b - b.transpose()) * 0.5
}

/// Independent assembly of `P = [0 I 0; -I -R_m 0; 0 0 J_e - Rbar_e]`.
fn assemble_p(r_m: &DMatrix<f64>, je_minus_rbar: &DMatrix<f64>) -> DMatrix<f64> {
    let n_m = r_m.nrows();
    let n_e = je_minus_rbar.nrows();
    let dim = 2 * n_m + n_e;
    let mut p = DMatrix::zeros(dim, dim);
    p.view_mut((0, n_m), (n_m, n_m))
        .copy_from(&DMatrix::identity(n_m, n_m));
    p.view_mut((n_m, 0), (n_m, n_m))
        .copy_from(&(DMatrix::identity(n_m, n_m) * -1.0));
    p.view_mut((n_m, n_m), (n_m, n_m)).copy_from(&(-r_m));
    p.view_mut((2 * n_m, 2 * n_m), (n_e, n_e))
        .copy_from(je_minus_rbar);
    p
}

#[test]
fn p_is_hurwitz_for_random_positive_definite_damping() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0bad_cafe);
    for draw in 0..20 {
        let n_m = rng.gen_range(1..=4);
        let n_e = rng.gen_range(1..=4);
        let r_m = random_pd(&mut rng, n_m);
        let rbar = random_pd(&mut rng, n_e);
        let j_e = random_skew(&mut rng, n_e);
        let p = assemble_p(&r_m, &(j_e - rbar));
        let (ok, spectrum) = is_hurwitz(&p, DEFAULT_RE_TOL).unwrap();
        assert!(
            ok,
            "draw {draw}: P not Hurwitz, spectrum {:?}",
            spectrum
        );
    }
}

#[test]
fn spectral_factorization_holds_for_random_damping() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    for draw in 0..20 {
        let n_m = rng.gen_range(1..=4);
        let r_m = random_pd(&mut rng, n_m);
        let residual = spectral_factorization_residual(&r_m).unwrap();
        assert!(residual <= 1e-8, "draw {draw}: residual {residual}");
        let spectrum = complex_spectrum(&build_f1(&r_m)).unwrap();
        assert!(
            spectrum.iter().all(|l| l.re < 0.0),
            "draw {draw}: non-negative real part"
        );
    }
}

#[test]
fn build_p_agrees_with_block_assembly_for_presets() {
    for bundle in [
        catalog::stepper_motor(),
        catalog::microphone(),
        catalog::loudspeaker(),
    ] {
        let expected = assemble_p(
            bundle.system.mech_damping(),
            &(bundle.system.elec_interconnection() - bundle.gains.rbar_e()),
        );
        assert_eq!(build_p(&bundle.system, &bundle.gains), expected);
    }
}

#[test]
fn microphone_p_spectrum_hand_values() {
    let bundle = catalog::microphone();
    let p = build_p(&bundle.system, &bundle.gains);
    let spectrum = complex_spectrum(&p).unwrap();
    // Sorted by (Re, Im): -30, then -1/2 -+ i sqrt(3)/2.
    assert!((spectrum[0] - Complex64::new(-30.0, 0.0)).norm() < 1e-12);
    assert!((spectrum[1] - Complex64::new(-0.5, -(0.75f64.sqrt()))).norm() < 1e-12);
    assert!((spectrum[2] - Complex64::new(-0.5, 0.75f64.sqrt())).norm() < 1e-12);
}

/// Frozen spectrum of the test matrix `N` for the microphone structure
/// matrix with bounds (0.92, 58.4) and epsilon 0.01: a real pair at
/// +-4.390283801 and two imaginary-axis pairs. Cross-validated against an
/// independent eigensolver; the exact-arithmetic trace is zero.
#[test]
fn n_matrix_regression_fixture() {
    let bundle = catalog::microphone();
    let p = build_p(&bundle.system, &bundle.gains);
    let n = build_n(&p, 0.92, 58.4, 0.01).unwrap();
    let spectrum = complex_spectrum(&n).unwrap();
    let expected = [
        Complex64::new(-4.390283801291621, 0.0),
        Complex64::new(0.0, -0.010795314119685),
        Complex64::new(0.0, 0.010795314119685),
        Complex64::new(0.0, -1.983843446866071),
        Complex64::new(0.0, 1.983843446866071),
        Complex64::new(4.390283801291621, 0.0),
    ];
    for (a, e) in spectrum.iter().zip(&expected) {
        assert!((a - e).norm() < 1e-9, "got {a}, expected {e}");
    }
    // Oracle identities: eigenvalue sum = trace(N), product = det(N).
    let sum: Complex64 = spectrum.iter().sum();
    assert!(sum.norm() < 1e-10, "trace residual {sum}");
    assert!((sum.re - n.trace()).abs() < 1e-10);
    let prod: Complex64 = spectrum.iter().product();
    let det = n.lu().determinant();
    assert!(
        (prod - Complex64::new(det, 0.0)).norm() <= 1e-8 * (1.0 + det.abs()),
        "det residual: {prod} vs {det}"
    );
    // Hamiltonian-type block structure: the spectrum is symmetric under
    // lambda -> -conj(lambda).
    for l in &spectrum {
        let mirrored = Complex64::new(-l.re, l.im);
        assert!(
            spectrum.iter().any(|m| (m - mirrored).norm() < 1e-9),
            "{l} has no mirror partner"
        );
    }
}

#[test]
fn microphone_certification_evidence_on_default_domain() {
    let bundle = catalog::microphone();
    let report = certify(
        &bundle.system,
        &bundle.gains,
        &bundle.domain,
        &default_epsilon_grid(),
        DEFAULT_MARGIN,
        DEFAULT_RE_TOL,
    );
    assert!(report.assumption1.ok);
    assert!((report.assumption1.worst_eigenvalue - 1.0).abs() < 1e-12);
    // Frozen grid extrema on the shipped default domain.
    let b1 = report.beta1.unwrap();
    let b2 = report.beta2.unwrap();
    assert!((b1 - 0.904439547509960).abs() < 1e-9, "beta1 = {b1}");
    assert!((b2 - 58.440295705264845).abs() < 1e-9, "beta2 = {b2}");
    assert!(report.p_hurwitz_ok);
    assert!(report.errors.is_empty());
    assert_eq!(report.epsilon_tried.len(), 13);
    assert_eq!(report.n_spectrum_per_epsilon.len(), 13);
    // Every epsilon leaves eigenvalues on the imaginary axis: the sandwich
    // ratio beta1/beta2 ~ 0.015 puts the mechanical block of N past its
    // small-gain margin, so min |Re| sits at rounding level for the whole
    // sweep. Recorded as a regression of the honest pipeline outcome.
    for entry in &report.n_spectrum_per_epsilon {
        assert!(
            entry.min_abs_re < 1e-12,
            "eps {}: unexpectedly off-axis ({})",
            entry.epsilon,
            entry.min_abs_re
        );
        assert!(!entry.passed);
    }
    assert!(!report.overall_ok);
}

#[test]
fn stepper_certification_depends_on_q_box() {
    let bundle = catalog::stepper_motor();
    let grid = default_epsilon_grid();
    // The default box sweeps positions where the potential loses convexity.
    let wide = certify(
        &bundle.system,
        &bundle.gains,
        &bundle.domain,
        &grid,
        DEFAULT_MARGIN,
        DEFAULT_RE_TOL,
    );
    assert!(!wide.assumption1.ok);
    assert!(!wide.overall_ok);
    // cos(24 q) > 0 on [-0.06, 0.06]: the convexity section passes there.
    let restricted_box = bundle.domain.clone().with_axis(0, -0.06, 0.06).unwrap();
    let restricted = certify(
        &bundle.system,
        &bundle.gains,
        &restricted_box,
        &grid,
        DEFAULT_MARGIN,
        DEFAULT_RE_TOL,
    );
    assert!(restricted.assumption1.ok);
    let expected_worst = 4.0 * 6.0 * 0.0176 * (24.0f64 * 0.06).cos();
    assert!((restricted.assumption1.worst_eigenvalue - expected_worst).abs() < 1e-12);
    assert!(restricted.p_hurwitz_ok);
}

#[test]
fn certified_bounds_bracket_every_grid_sample() {
    // Re-scan: with the margins applied, every sampled shaped-Hessian
    // eigenvalue lies strictly inside (beta1, beta2).
    for bundle in [catalog::microphone(), catalog::loudspeaker()] {
        let (b1, b2) = estimate_hessian_bounds(
            &bundle.system,
            &bundle.gains,
            &bundle.domain,
            DEFAULT_MARGIN,
        )
        .unwrap();
        let n_m = bundle.system.n_m();
        let n_e = bundle.system.n_e();
        let axes: Vec<Vec<f64>> = (0..bundle.domain.dim())
            .map(|i| {
                phtrack::numeric::linspace(
                    bundle.domain.lower[i],
                    bundle.domain.upper[i],
                    bundle.domain.grid_points,
                )
            })
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        for idx in 0..total {
            let mut rem = idx;
            let mut flat = DVector::zeros(bundle.domain.dim());
            for (i, axis) in axes.iter().enumerate() {
                flat[i] = axis[rem % axis.len()];
                rem /= axis.len();
            }
            let eta = StateVector::from_flat(n_m, n_e, flat).unwrap();
            let mut hess = bundle.system.hessian_hamiltonian(&eta).unwrap();
            hess.view_mut((2 * n_m, 2 * n_m), (n_e, n_e))
                .zip_apply(bundle.gains.k_c(), |h, k| *h += k);
            let ev = symmetric_eigenvalues(&hess);
            assert!(
                ev[0] > b1 && ev[ev.len() - 1] < b2,
                "{}: sample outside ({b1}, {b2}): [{}, {}]",
                bundle.name,
                ev[0],
                ev[ev.len() - 1]
            );
        }
    }
}

#[test]
fn domain_box_validation() {
    assert!(DomainBox::new(vec![0.0, 0.0], vec![1.0], 9).is_err());
    assert!(DomainBox::new(vec![0.0, 2.0], vec![1.0, 1.0], 9).is_err());
    assert!(DomainBox::new(vec![0.0], vec![1.0], 1).is_err());
    let b = DomainBox::new(vec![0.0], vec![1.0], 2).unwrap();
    assert!(b.contains(&DVector::from_element(1, 0.5)));
    assert!(!b.contains(&DVector::from_element(1, 1.5)));
}
