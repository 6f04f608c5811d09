//! Randomized property suites. The eigenvalue oracle here is nalgebra's
//! symmetric eigensolver, an implementation independent of the production
//! Jacobi routine.

use nalgebra::Matrix4;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snv_core::fit::{self, DatasetKind, FitStage, Plane, SpectroscopyDataset};
use snv_core::hamiltonian::{
    build_full_hamiltonian, manifold_energies, Basis, FieldSnV, ManifoldParams, PhysicalConstants,
    SnVModel,
};
use snv_core::synthetic;
use snv_core::transitions::{self, RotationPlane};

/// Brute-force oracle: eigenvalues via nalgebra, sorted ascending.
fn oracle_eigenvalues(m: &Matrix4<Complex64>) -> [f64; 4] {
    let eig = nalgebra::linalg::SymmetricEigen::new(*m);
    let mut values = [
        eig.eigenvalues[0],
        eig.eigenvalues[1],
        eig.eigenvalues[2],
        eig.eigenvalues[3],
    ];
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values
}

fn random_manifold(rng: &mut ChaCha8Rng) -> ManifoldParams {
    ManifoldParams {
        lambda: rng.gen_range(100.0..4000.0),
        f_12: rng.gen_range(0.0..1.0),
        f_32: rng.gen_range(0.0..1.0),
        upsilon: rng.gen_range(0.0..1500.0),
    }
}

fn random_field(rng: &mut ChaCha8Rng) -> FieldSnV {
    FieldSnV::from_polar(rng.gen_range(0.0..1.5), rng.gen_range(0.0..180.0), 0.0)
}

#[test]
fn production_eigensolver_matches_independent_oracle() {
    let constants = PhysicalConstants::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let params = random_manifold(&mut rng);
        let field = random_field(&mut rng);
        let h = build_full_hamiltonian(&params, &field, Basis::Xy, &constants);
        let production = h.eigenvalues().0;
        let oracle = oracle_eigenvalues(h.as_matrix());
        for (a, b) in production.iter().zip(oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "max eigenvalue deviation {worst:.3e} GHz");
}

#[test]
fn spin_orbit_basis_shares_oracle_spectrum() {
    let constants = PhysicalConstants::default();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..500 {
        let params = random_manifold(&mut rng);
        let field = random_field(&mut rng);
        let exy = oracle_eigenvalues(
            build_full_hamiltonian(&params, &field, Basis::Xy, &constants).as_matrix(),
        );
        let eso = oracle_eigenvalues(
            build_full_hamiltonian(&params, &field, Basis::So, &constants).as_matrix(),
        );
        for (a, b) in exy.iter().zip(eso) {
            assert!((a - b).abs() < 1e-10, "spectra diverge: {a} vs {b}");
        }
    }
}

/// The full {xy} Hamiltonian written out entry by entry, independently of
/// the production component-sum path.
fn entrywise_full_matrix(
    params: &ManifoldParams,
    b_par: f64,
    b_perp: f64,
    constants: &PhysicalConstants,
) -> Matrix4<Complex64> {
    let re = |x: f64| Complex64::new(x, 0.0);
    let im = |x: f64| Complex64::new(0.0, x);
    let gl = constants.gamma_l;
    let gs = constants.gamma_s;
    let (f12, f32, lambda, alpha) = (params.f_12, params.f_32, params.lambda, params.upsilon);
    let diag_plus = (gl * (f32 - f12) + gs) * b_par;
    let diag_minus = (gl * (f12 - f32) - gs) * b_par;
    let orb = gl * (f12 + f32) * b_par;
    let mut m = Matrix4::zeros();
    m[(0, 0)] = re(0.5 * (diag_plus + 2.0 * alpha));
    m[(1, 1)] = re(0.5 * (diag_minus + 2.0 * alpha));
    m[(2, 2)] = re(0.5 * (diag_plus - 2.0 * alpha));
    m[(3, 3)] = re(0.5 * (diag_minus - 2.0 * alpha));
    m[(0, 1)] = re(0.5 * gs * b_perp);
    m[(1, 0)] = re(0.5 * gs * b_perp);
    m[(2, 3)] = re(0.5 * gs * b_perp);
    m[(3, 2)] = re(0.5 * gs * b_perp);
    m[(0, 2)] = im(0.5 * (orb - lambda));
    m[(2, 0)] = im(-0.5 * (orb - lambda));
    m[(1, 3)] = im(0.5 * (orb + lambda));
    m[(3, 1)] = im(-0.5 * (orb + lambda));
    m
}

#[test]
fn production_energies_match_entrywise_matrix_at_reference_point() {
    let constants = PhysicalConstants::default();
    let params = ManifoldParams {
        lambda: 822.0,
        f_12: 0.486,
        f_32: 0.268,
        upsilon: 35.0,
    };
    let field = FieldSnV::parallel(0.19344);
    let production = manifold_energies(&params, &field, &constants);
    let explicit = entrywise_full_matrix(&params, field.b_par, field.b_perp, &constants);
    let oracle = oracle_eigenvalues(&explicit);
    for (a, b) in production.0.iter().zip(oracle) {
        assert!(
            (a - b).abs() < 1e-10,
            "production {a} vs entrywise-matrix {b}"
        );
    }
    // and across random draws including transverse fields
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..300 {
        let params = random_manifold(&mut rng);
        let field = random_field(&mut rng);
        let production = manifold_energies(&params, &field, &constants);
        let explicit = entrywise_full_matrix(&params, field.b_par, field.b_perp, &constants);
        let oracle = oracle_eigenvalues(&explicit);
        for (a, b) in production.0.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn qubit_symmetric_about_equator_without_misalignment() {
    let constants = PhysicalConstants::default();
    let mut model = synthetic::reference_models()["SnV-B"];
    model.delta_theta = 0.0;
    // mirrored polar angles flip b_par, which relabels levels but cannot
    // change sorted differences
    for theta in [0.0, 13.0, 37.5, 61.0, 89.0] {
        let up =
            transitions::observables(&model, &FieldSnV::from_polar(0.19, theta, 0.0), &constants);
        let down = transitions::observables(
            &model,
            &FieldSnV::from_polar(0.19, 180.0 - theta, 0.0),
            &constants,
        );
        assert!(
            (up.qubit - down.qubit).abs() < 1e-9,
            "theta {theta}: {} vs {}",
            up.qubit,
            down.qubit
        );
    }
}

#[test]
fn forbidden_split_dominates_allowed_split() {
    let constants = PhysicalConstants::default();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..500 {
        let model = SnVModel {
            ground: random_manifold(&mut rng),
            excited: random_manifold(&mut rng),
            b_parallel_cal: 0.19,
            b_perp_cal: 0.19,
            delta_theta: 0.0,
        };
        let field = random_field(&mut rng);
        let obs = transitions::observables(&model, &field, &constants);
        assert!(obs.forbidden_split >= obs.allowed_split.abs() - 1e-12);
        assert!(obs.qubit >= 0.0);
    }
}

#[test]
fn rotation_map_preserves_grid_order_and_length() {
    let constants = PhysicalConstants::default();
    let model = synthetic::reference_models()["SnV-A"];
    let grid: Vec<f64> = (0..73).map(|k| 5.0 * k as f64).collect();
    let map =
        transitions::rotation_map(&model, 0.19, RotationPlane::Yz, &grid, &constants).unwrap();
    assert_eq!(map.len(), grid.len());
    for (point, theta) in map.iter().zip(&grid) {
        assert_eq!(point.theta, *theta);
    }
}

#[test]
fn noiseless_stage_round_trips_over_random_models() {
    let constants = PhysicalConstants::default();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let options = fit::FitOptions::default();
    for trial in 0..50 {
        let truth = SnVModel {
            ground: ManifoldParams {
                lambda: rng.gen_range(600.0..1200.0),
                f_12: rng.gen_range(0.2..0.8),
                f_32: rng.gen_range(0.2..0.8),
                upsilon: rng.gen_range(20.0..900.0),
            },
            excited: ManifoldParams {
                lambda: 3000.0,
                f_12: rng.gen_range(0.2..0.8),
                f_32: rng.gen_range(0.2..0.8),
                upsilon: rng.gen_range(20.0..1100.0),
            },
            b_parallel_cal: rng.gen_range(0.15..0.25),
            b_perp_cal: rng.gen_range(0.15..0.25),
            delta_theta: rng.gen_range(-1.0..1.0),
        };
        let points: Vec<(f64, f64)> = (0..120)
            .map(|k| {
                let theta = 3.0 * k as f64;
                (
                    theta,
                    fit::predict(&truth, DatasetKind::OdmrQubit, Plane::Yz, theta, &constants),
                )
            })
            .collect();
        let data = SpectroscopyDataset {
            emitter: format!("E{trial}"),
            kind: DatasetKind::OdmrQubit,
            points,
            field_magnitude: 0.19,
            plane: Plane::Yz,
            b_parallel_cal: Some(truth.b_parallel_cal),
            b_perp_cal: Some(truth.b_perp_cal),
        };

        // strain stage round trip
        let mut start = truth;
        start.ground.upsilon = 0.0;
        let fitted = fit::fit_stage(
            &FitStage::for_param(fit::FitParam::UpsilonG),
            &data,
            &start,
            &constants,
            &options,
        )
        .unwrap();
        let rel =
            ((fitted.params.ground.upsilon - truth.ground.upsilon) / truth.ground.upsilon).abs();
        assert!(rel < 1e-6, "trial {trial}: upsilon_g rel err {rel:.2e}");

        // quenching stage round trip (with misalignment co-fit)
        let mut start = truth;
        start.ground.f_32 = 0.5;
        start.delta_theta = 0.0;
        let fitted = fit::fit_stage(
            &FitStage::for_param(fit::FitParam::F32G),
            &data,
            &start,
            &constants,
            &options,
        )
        .unwrap();
        let rel = ((fitted.params.ground.f_32 - truth.ground.f_32) / truth.ground.f_32).abs();
        assert!(rel < 1e-6, "trial {trial}: f_32_g rel err {rel:.2e}");
        assert!(
            (fitted.params.delta_theta - truth.delta_theta).abs() < 1e-5,
            "trial {trial}: delta_theta {} vs {}",
            fitted.params.delta_theta,
            truth.delta_theta
        );
    }
}

#[test]
fn echo_fft_seed_agrees_with_fitted_frequency() {
    let constants = PhysicalConstants::default();
    for seed in 0..10 {
        let f_true = 0.4 + 0.03 * seed as f64;
        let trace = synthetic::synthetic_parallel_echo(f_true, 0.1, 256, 0.0, seed);
        let spectrum = snv_core::fieldcal::fft_spectrum(&trace).unwrap();
        let peaks = snv_core::fieldcal::dominant_peaks(&spectrum, 1.0);
        let bin = spectrum[1].0 - spectrum[0].0;
        let seed_freq = peaks[0].0 / 2.0;
        let fit = snv_core::fieldcal::fit_echo_modulation(&trace, &constants).unwrap();
        let fitted = fit.bath_frequency_mhz();
        assert!(
            (seed_freq - fitted).abs() <= 2.0 * bin,
            "seed {seed_freq} vs fit {fitted} (bin {bin})"
        );
    }
}

#[test]
fn sorted_eigenvalues_are_continuous_along_polar_sweeps() {
    let constants = PhysicalConstants::default();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for _ in 0..10 {
        let params = random_manifold(&mut rng);
        let magnitude = rng.gen_range(0.1..1.5);
        let energies: Vec<[f64; 4]> = (0..=180)
            .map(|deg| {
                manifold_energies(
                    &params,
                    &FieldSnV::from_polar(magnitude, deg as f64, 0.0),
                    &constants,
                )
                .0
            })
            .collect();
        let floor = 1e-6
            * energies
                .iter()
                .flat_map(|e| e.iter())
                .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        for level in 0..4 {
            let steps: Vec<f64> = energies
                .windows(2)
                .map(|w| (w[1][level] - w[0][level]).abs())
                .collect();
            // a sort-order swap would make one step jump by the local gap,
            // far beyond both neighboring steps
            for i in 1..steps.len() - 1 {
                let neighbor = steps[i - 1].max(steps[i + 1]).max(floor);
                assert!(
                    steps[i] <= 2.0 * neighbor,
                    "level {level} jumps by {} vs neighbor {neighbor}",
                    steps[i]
                );
            }
        }
    }
}
