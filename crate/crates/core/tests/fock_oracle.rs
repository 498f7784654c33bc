//! The Gaussian conditional-Wigner formula against a truncated Fock-space
//! simulation of the same gates.

mod common;

use nalgebra::{DMatrix, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use opoherald::fock::{run_adaptive, FockDensity, FockGate};
use opoherald::gaussian::JointModePair;

use common::{gaussian_state, real_field_gates};

fn general_gates(rng: &mut ChaCha8Rng) -> Vec<FockGate> {
    let t: f64 = rng.random_range(0.0..1.0);
    vec![
        FockGate::Squeeze {
            mode: 0,
            z: rng.random_range(-0.4..0.4),
        },
        FockGate::Phase {
            mode: 0,
            theta: rng.random_range(-3.0..3.0),
        },
        FockGate::TwoModeSqueeze {
            modes: (0, 1),
            r: rng.random_range(-0.3..0.3),
        },
        FockGate::Beamsplitter {
            modes: (0, 1),
            t,
            r: (1.0 - t * t).sqrt(),
        },
        FockGate::Squeeze {
            mode: 1,
            z: rng.random_range(-0.4..0.4),
        },
        FockGate::Loss {
            mode: 1,
            eta: rng.random_range(0.2..1.0),
        },
        FockGate::Phase {
            mode: 1,
            theta: rng.random_range(-3.0..3.0),
        },
    ]
}

#[test]
fn conditional_wigner_matches_fock_subtraction() {
    let errors: Vec<(u64, f64, f64)> = (0..60u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gates = real_field_gates(&mut rng);
            let v = gaussian_state(2, &gates);
            let m = v.matrix();
            for (i, j) in [(0, 1), (0, 3), (2, 1), (2, 3)] {
                assert!(m[(i, j)].abs() < 1e-12, "seed {seed}: x-p correlation {}", m[(i, j)]);
            }
            let pair = JointModePair::new(Matrix4::from_iterator(m.iter().copied())).unwrap();
            let gaussian = pair.wigner_origin_conditional().unwrap();

            let rho = run_adaptive(2, &gates).unwrap();
            let heralded = rho.subtract_photon(0).unwrap().partial_trace(&[1]).unwrap();
            (seed, gaussian, heralded.wigner_origin(0).unwrap() / heralded.trace())
        })
        .collect();
    for (seed, gaussian, fock) in errors {
        assert!(
            (gaussian - fock).abs() < 1e-5,
            "seed {seed}: Gaussian {gaussian} vs Fock {fock}"
        );
    }
}

#[test]
fn second_moments_match_gaussian_maps() {
    for seed in 100..130 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gates = general_gates(&mut rng);
        let v = gaussian_state(2, &gates);
        let rho = run_adaptive(2, &gates).unwrap();
        assert!(rho.mean_quadratures().iter().all(|q| q.abs() < 1e-9));
        let diff = (rho.covariance().unwrap().matrix() - v.matrix()).amax();
        assert!(diff < 1e-6, "seed {seed}: covariance difference {diff:e}");
    }
}

#[test]
fn fock_states_stay_physical() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let rho = run_adaptive(2, &general_gates(&mut rng)).unwrap();
        assert!(rho.is_valid(1e-8, 1e-10));
        let sub = rho.subtract_photon(1).unwrap();
        assert!(sub.is_valid(1e-6, 1e-10));
    }
}

/// `Σ_i a_i ρ a_i†` over the trigger modes is unchanged by an orthogonal
/// change of trigger basis.
#[test]
fn averaged_subtraction_is_basis_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let mut rho = FockDensity::vacuum(3, 7).unwrap();
        for g in [
            FockGate::Squeeze {
                mode: 0,
                z: rng.random_range(-0.2..0.2),
            },
            FockGate::TwoModeSqueeze {
                modes: (1, 2),
                r: rng.random_range(-0.2..0.2),
            },
            FockGate::Beamsplitter {
                modes: (0, 1),
                t: 0.6,
                r: 0.8,
            },
            FockGate::TwoModeSqueeze {
                modes: (0, 2),
                r: rng.random_range(-0.15..0.15),
            },
        ] {
            rho = rho.apply_gaussian(g).unwrap();
        }
        let direct = rho.annihilate(&[(0, 1.0)]).unwrap().matrix() + rho.annihilate(&[(1, 1.0)]).unwrap().matrix();
        let theta: f64 = rng.random_range(0.0..6.0);
        let u = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let rotated = rho.annihilate(&[(0, u[(0, 0)]), (1, u[(0, 1)])]).unwrap().matrix()
            + rho.annihilate(&[(0, u[(1, 0)]), (1, u[(1, 1)])]).unwrap().matrix();
        let diff = (direct - rotated).iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "difference {diff:e}");
    }
}

#[test]
fn truncation_is_detected() {
    let strong = FockDensity::vacuum(1, 6)
        .unwrap()
        .apply_gaussian(FockGate::Squeeze { mode: 0, z: 1.2 });
    assert!(matches!(strong, Err(opoherald::Error::TruncationLoss(_))));
    let adaptive = run_adaptive(1, &[FockGate::Squeeze { mode: 0, z: 1.2 }]).unwrap();
    assert!(adaptive.trace_loss() < 1e-8);
    let var = adaptive.covariance().unwrap().matrix()[(0, 0)];
    assert!((var / (2.4f64).exp() - 1.0).abs() < 1e-5, "{var}");
}
