//! Heralding objective: the kernel evaluation against the covariance path,
//! trigger-basis invariance, filter operators and optimizer sanity.

mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opoherald::filter::FilterConfig;
use opoherald::grid::SimulationWindow;
use opoherald::herald::*;
use opoherald::opo::{kernel_pulsed, propagate, OpoConfig, DEFAULT_EPS_TRUNC, REFERENCE_TAU};

use common::{desk_scenario, random_mode, random_orthogonal, rel};

#[test]
fn trigger_rebasing_leaves_w_and_p_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..20 {
        let sc = desk_scenario(&mut rng, 4);
        let model = sc.prepare().unwrap();
        let h = sc.candidate_cah().unwrap();
        let base = model.evaluate(&h).unwrap();
        let n = model.trigger_count();
        let u = random_orthogonal(&mut rng, n);
        let (w, p) = model.basis_invariance_check(&h, &u).unwrap();
        assert!((w - base.wigner).abs() < 1e-8, "case {case}: {w} vs {}", base.wigner);
        assert!(
            rel(p, base.probability) < 1e-8,
            "case {case}: {p} vs {}",
            base.probability
        );
        let (w_id, p_id) = model.basis_invariance_check(&h, &DMatrix::identity(n, n)).unwrap();
        assert!(
            (w_id - base.wigner).abs() < 1e-11 && rel(p_id, base.probability) < 1e-12,
            "{:e} {:e}",
            w_id - base.wigner,
            rel(p_id, base.probability)
        );
    }
}

#[test]
fn rebasing_rejects_non_orthogonal_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sc = desk_scenario(&mut rng, 4);
    let model = sc.prepare().unwrap();
    let h = sc.candidate_cah().unwrap();
    let n = model.trigger_count();
    let u = DMatrix::identity(n, n) * 1.01;
    assert!(matches!(
        model.basis_invariance_check(&h, &u),
        Err(opoherald::Error::NotOrthogonal(_))
    ));
    let continuous = sc.with_resolution(TriggerResolution::Continuous).prepare().unwrap();
    assert!(continuous.basis_invariance_check(&h, &DMatrix::identity(n, n)).is_err());
}

#[test]
fn kernel_evaluation_matches_covariance_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..10 {
        let sc = desk_scenario(&mut rng, [4, 5][case % 2]);
        let state = propagate(&sc.opo, &sc.pump, &sc.sim).unwrap();
        let model = sc.prepare().unwrap();
        let centre = rng.random_range(1.0..4.0) * sc.opo.photon_lifetime();
        let width = rng.random_range(1.0..3.0) * REFERENCE_TAU;
        for h in [
            sc.candidate_cah().unwrap(),
            random_mode(&mut rng, &sc.sim, centre, width),
        ] {
            let direct = model.evaluate(&h).unwrap();
            let (w, p) = evaluate_covariance(&sc, &state, model.window_start_index(), &h).unwrap();
            assert!(rel(w, direct.wigner) < 1e-6, "case {case}: W {w} vs {}", direct.wigner);
            assert!(
                rel(p, direct.probability) < 1e-6,
                "case {case}: P {p} vs {}",
                direct.probability
            );
        }
    }
}

#[test]
fn result_aggregates_per_trigger_outcomes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let sc = desk_scenario(&mut rng, 4).with_resolution(TriggerResolution::Continuous);
        let model = sc.prepare().unwrap();
        let r = model.evaluate(&sc.candidate_th().unwrap()).unwrap();
        assert_eq!(r.per_trigger.len(), model.trigger_count());
        let p: f64 = r.per_trigger.iter().map(|o| o.probability).sum();
        let pw: f64 = r
            .per_trigger
            .iter()
            .map(|o| o.probability * o.wigner.unwrap_or(0.0))
            .sum();
        assert!(rel(p, r.probability) < 1e-12);
        assert!(rel(pw / p, r.wigner) < 1e-10);
        let bound = 1.0 / std::f64::consts::PI;
        assert!(r.wigner >= -bound && r.wigner <= bound);
        assert!(r.probability > 0.0 && r.probability < 1.0);
    }
}

#[test]
fn cah_candidate_follows_root_intensity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..4 {
        let sc = desk_scenario(&mut rng, 4);
        let h = sc.candidate_cah().unwrap();
        let kernels = kernel_pulsed(&sc.opo, &sc.pump, &sc.sim, DEFAULT_EPS_TRUNC).unwrap();
        let root: Vec<f64> = (0..sc.sim.len()).map(|i| kernels.bdb(0, i).max(0.0).sqrt()).collect();
        let norm = root.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = h
            .coefficients()
            .iter()
            .zip(&root)
            .map(|(a, b)| (a - b / norm).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff:e}");
    }
}

#[test]
fn single_pass_cah_candidate_is_the_instantaneous_gain() {
    let opo = OpoConfig::from_powers(1.0, 0.0, REFERENCE_TAU, 4).unwrap();
    let tp = 2.0 * REFERENCE_TAU;
    let s = 0.1;
    let trigger = TriggerWindow::new(4.0 * REFERENCE_TAU, WindowOffset::MaximizeProbability).unwrap();
    let sc = HeraldScenario::pulsed(opo, s, tp, DetectionChain::reference(), trigger).unwrap();
    let h = sc.candidate_cah().unwrap();
    // Gain from before the window start is not part of the simulation.
    let m = sc.sim.per_round_trip();
    let expected: Vec<f64> = sc
        .sim
        .times()
        .enumerate()
        .map(|(i, t)| {
            if i < m {
                0.0
            } else {
                sc.pump.z(t - REFERENCE_TAU, REFERENCE_TAU).sinh()
            }
        })
        .collect();
    let norm = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = h
        .coefficients()
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b / norm).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-9, "{diff:e}");
}

#[test]
fn optimizer_is_deterministic_and_beats_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let sc = desk_scenario(&mut rng, 4).with_resolution(TriggerResolution::Continuous);
        let model = sc.prepare().unwrap();
        let options = OptimizeOptions {
            seed: 3,
            ..OptimizeOptions::default()
        };
        let a = model.optimize(&options).unwrap();
        let b = model.optimize(&options).unwrap();
        assert_eq!(a.wigner.to_bits(), b.wigner.to_bits());
        assert_eq!(a.mode.coefficients(), b.mode.coefficients());
        let norm: f64 = a.mode.coefficients().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        for (name, h) in model.candidates().unwrap() {
            let w = model.evaluate(&h).unwrap().wigner;
            assert!(a.wigner <= w + 1e-6, "{name}: {} > {w}", a.wigner);
        }
        let again = model.evaluate(&a.mode).unwrap();
        assert!((again.wigner - a.wigner).abs() < 1e-12);
    }
}

#[test]
fn pulsed_probability_grows_with_the_window() {
    let opo = OpoConfig::reference(4).unwrap();
    let mut last = 0.0;
    for t in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
        let trigger = TriggerWindow::new(t * REFERENCE_TAU, WindowOffset::MaximizeProbability).unwrap();
        let sc = HeraldScenario::pulsed(opo, 0.05, 3.0 * REFERENCE_TAU, DetectionChain::reference(), trigger).unwrap();
        let p = sc.prepare().unwrap().probability();
        assert!(p >= last, "T = {t} τ: {p} < {last}");
        last = p;
    }
}

#[test]
fn filter_mean_delay_and_decay() {
    let filter = FilterConfig::reference();
    assert!(rel(filter.mean_delay(), 0.66 * REFERENCE_TAU) < 0.02);
    let window = SimulationWindow::new(0.0, 20.0 * REFERENCE_TAU, REFERENCE_TAU, 40).unwrap();
    let mut x = vec![0.0; window.len()];
    x[0] = 1.0;
    let y = filter.forward(&window, &x).unwrap();
    // Amplitude impulse response decays at (κ1+κ2)/2 once the first sample has passed.
    let rate = filter.decay_rate();
    for i in 2..60 {
        let measured = (y[i] / y[i + 1]).ln() / window.dt();
        assert!(rel(measured, rate) < 1e-9, "{measured} vs {rate}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn filter_backpropagation_is_the_adjoint_contraction(
        k1 in 5e7..8e8f64,
        k2 in 5e7..8e8f64,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filter = FilterConfig::lorentzian(k1, k2).unwrap();
        let window = SimulationWindow::new(0.0, 12.0 * REFERENCE_TAU, REFERENCE_TAU, 8).unwrap();
        let x: Vec<f64> = (0..window.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..window.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fx = filter.forward(&window, &x).unwrap();
        let by = filter.backpropagate(&window, &y).unwrap();
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&by).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(rhs.abs()).max(1.0));
        let n_y: f64 = y.iter().map(|v| v * v).sum();
        let n_by: f64 = by.iter().map(|v| v * v).sum();
        prop_assert!(n_by <= n_y * (1.0 + 1e-12));
        let n_x: f64 = x.iter().map(|v| v * v).sum();
        let n_fx: f64 = fx.iter().map(|v| v * v).sum();
        prop_assert!(n_fx <= n_x * (1.0 + 1e-12));
    }
}
