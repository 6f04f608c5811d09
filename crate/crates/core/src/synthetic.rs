//! Synthetic fixture generation.
//!
//! Builds dataset suites from reference emitter models so the full pipeline
//! can run without lab data. All randomness is seed-pinned; noiseless
//! variants are exact model evaluations.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::coherence::{decay_model, DecayTrace};
use crate::fieldcal::{parallel_echo_model, perpendicular_echo_model, EchoOrientation, EchoTrace};
use crate::fit::{
    predict, DatasetKind, PipelineInput, Plane, SpectroscopyDataset, EXCITED_LAMBDA_GHZ,
};
use crate::hamiltonian::{ManifoldParams, PhysicalConstants, SnVModel};
use crate::strain::{StrainGridPoint, StrainTensor};
use crate::transitions::ground_splitting;

/// Reference emitter models: one unstrained, one low-strain, two
/// high-strain. Quenching factors are shared across emitters.
pub fn reference_models() -> BTreeMap<String, SnVModel> {
    let ground = |upsilon| ManifoldParams {
        lambda: 822.0,
        f_12: 0.486,
        f_32: 0.268,
        upsilon,
    };
    let excited = |upsilon| ManifoldParams {
        lambda: EXCITED_LAMBDA_GHZ,
        f_12: 0.5,
        f_32: 0.251,
        upsilon,
    };
    let mut models = BTreeMap::new();
    models.insert(
        "SnV-A".to_string(),
        SnVModel {
            ground: ground(35.0),
            excited: excited(60.0),
            b_parallel_cal: 0.19344,
            b_perp_cal: 0.19348,
            delta_theta: -0.08,
        },
    );
    models.insert(
        "SnV-B".to_string(),
        SnVModel {
            ground: ground(577.3),
            excited: excited(961.9),
            b_parallel_cal: 0.19346,
            b_perp_cal: 0.18903,
            delta_theta: -0.54,
        },
    );
    models.insert(
        "SnV-C".to_string(),
        SnVModel {
            ground: ground(530.0),
            excited: excited(921.4),
            b_parallel_cal: 0.19347,
            b_perp_cal: 0.19345,
            delta_theta: -0.46,
        },
    );
    models.insert(
        "SnV-D".to_string(),
        SnVModel {
            ground: ground(0.0),
            excited: excited(0.0),
            b_parallel_cal: 0.19,
            b_perp_cal: 0.19,
            delta_theta: 0.0,
        },
    );
    models
}

/// Default sweep grid of the synthetic rotation maps: 0..360 in 2 degrees.
fn sweep_grid() -> Vec<f64> {
    (0..180).map(|k| 2.0 * k as f64).collect()
}

/// One synthetic yz rotation-map dataset evaluated from a model.
pub fn synthetic_map(
    model: &SnVModel,
    emitter: &str,
    kind: DatasetKind,
    constants: &PhysicalConstants,
) -> SpectroscopyDataset {
    let points = sweep_grid()
        .into_iter()
        .map(|theta| (theta, predict(model, kind, Plane::Yz, theta, constants)))
        .collect();
    SpectroscopyDataset {
        emitter: emitter.to_string(),
        kind,
        points,
        field_magnitude: 0.19,
        plane: Plane::Yz,
        b_parallel_cal: Some(model.b_parallel_cal),
        b_perp_cal: Some(model.b_perp_cal),
    }
}

/// Synthetic PL-splitting dataset of an emitter.
pub fn synthetic_pl(model: &SnVModel, emitter: &str) -> SpectroscopyDataset {
    SpectroscopyDataset {
        emitter: emitter.to_string(),
        kind: DatasetKind::PlSplitting,
        points: vec![(
            0.0,
            ground_splitting(model.ground.lambda, model.ground.upsilon),
        )],
        field_magnitude: 0.0,
        plane: Plane::Yz,
        b_parallel_cal: None,
        b_perp_cal: None,
    }
}

/// Full noiseless pipeline input: PL of the unstrained emitter plus qubit
/// and allowed maps of every strained emitter.
pub fn pipeline_fixture(constants: &PhysicalConstants, include_holdout: bool) -> PipelineInput {
    let models = reference_models();
    let mut input = PipelineInput::default();
    input.push(synthetic_pl(&models["SnV-D"], "SnV-D"));
    let mut emitters = vec!["SnV-A", "SnV-B"];
    if include_holdout {
        emitters.push("SnV-C");
    }
    for emitter in emitters {
        let model = &models[emitter];
        input.push(synthetic_map(
            model,
            emitter,
            DatasetKind::OdmrQubit,
            constants,
        ));
        input.push(synthetic_map(
            model,
            emitter,
            DatasetKind::AllowedSplit,
            constants,
        ));
    }
    input
}

/// Additive Gaussian noise on the values of a dataset, seed-pinned.
pub fn add_noise(dataset: &mut SpectroscopyDataset, sigma_ghz: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_ghz).expect("sigma must be finite");
    for point in &mut dataset.points {
        point.1 += normal.sample(&mut rng);
    }
}

/// Synthetic parallel-orientation echo trace; noise relative to amplitude.
pub fn synthetic_parallel_echo(
    freq_mhz: f64,
    b_nominal: f64,
    n_points: usize,
    noise_rel: f64,
    seed: u64,
) -> EchoTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_rel).expect("noise must be finite");
    let points = (0..n_points)
        .map(|k| {
            let tau = 0.05 + 0.1 * k as f64;
            let clean = parallel_echo_model(tau, 1.0, -1.2, freq_mhz, 0.4, 60.0, -0.001, 0.3);
            let noise = if noise_rel > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            };
            (tau, clean + noise)
        })
        .collect();
    EchoTrace::new(points, EchoOrientation::Parallel, b_nominal).expect("valid synthetic trace")
}

/// Synthetic perpendicular-orientation echo trace.
pub fn synthetic_perpendicular_echo(
    f1_mhz: f64,
    f2_mhz: f64,
    b_nominal: f64,
    n_points: usize,
    noise_rel: f64,
    seed: u64,
) -> EchoTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_rel).expect("noise must be finite");
    let points = (0..n_points)
        .map(|k| {
            let tau = 0.05 + 0.08 * k as f64;
            let clean = perpendicular_echo_model(tau, 0.8, f1_mhz, f2_mhz, 0.1);
            let noise = if noise_rel > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            };
            (tau, clean + noise)
        })
        .collect();
    EchoTrace::new(points, EchoOrientation::Perpendicular, b_nominal)
        .expect("valid synthetic trace")
}

/// CPMG suite with T2 following t2_base * N^beta; raw-count scale so the
/// normalization step is exercised. Noise is relative to the amplitude.
pub fn synthetic_cpmg_suite(
    t2_base_ms: f64,
    beta: f64,
    pulse_numbers: &[u32],
    points_per_trace: usize,
    noise_rel: f64,
    seed: u64,
) -> Vec<DecayTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pulse_numbers
        .iter()
        .map(|&n| {
            let t2 = t2_base_ms * (n as f64).powf(beta);
            let t_max = 2.5 * t2;
            let counts_scale = 1000.0;
            let points = (0..points_per_trace)
                .map(|k| {
                    let t = t_max * (k as f64 + 0.5) / points_per_trace as f64;
                    let clean = decay_model(t, 0.5, t2, 4.0);
                    let noise = if noise_rel > 0.0 {
                        rng.gen_range(-noise_rel..noise_rel) * 0.5
                    } else {
                        0.0
                    };
                    (t, counts_scale * (clean + noise))
                })
                .collect();
            DecayTrace::new(n, points).expect("valid synthetic trace")
        })
        .collect()
}

/// Strain cut from the membrane edge (x = -half_width) to the center
/// (x = 0): in-plane strain grows quadratically toward the center with a
/// Poisson-like out-of-plane response and no shear, so the ZPL channel is
/// identical for all four orientations.
pub fn strain_cut_fixture(n_points: usize) -> Vec<StrainGridPoint> {
    let half_width = 1000.0; // micrometers
    let s_center = 8.42e-4;
    (0..n_points)
        .map(|k| {
            let x = -half_width + half_width * k as f64 / (n_points - 1).max(1) as f64;
            let s = s_center * (1.0 - (x / half_width).powi(2));
            StrainGridPoint {
                x_um: x,
                y_um: 0.0,
                tensor: StrainTensor {
                    xx: s,
                    yy: s,
                    zz: -0.2 * s,
                    xy: 0.0,
                    yz: 0.0,
                    zx: 0.0,
                },
            }
        })
        .collect()
}
