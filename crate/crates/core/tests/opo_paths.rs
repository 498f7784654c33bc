//! The propagated covariance, the pulsed kernels and the CW closed forms
//! checked against each other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opoherald::field::{FieldCorrelations, ModeFunction};
use opoherald::gaussian::ModeLabel;
use opoherald::grid::SimulationWindow;
use opoherald::opo::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn gaussian_mode(rng: &mut ChaCha8Rng, window: &SimulationWindow, centre: f64, width: f64) -> ModeFunction {
    let c = window
        .times()
        .map(|t| {
            let x = (t - centre) / width;
            (-0.5 * x * x).exp() * (1.0 + 0.5 * rng.random_range(-1.0..1.0))
        })
        .collect();
    ModeFunction::from_coefficients(*window, c).unwrap()
}

#[test]
fn propagation_and_kernels_agree_on_random_scenarios() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..10 {
        let m = [4, 5, 6][case % 3];
        let tau = REFERENCE_TAU;
        let opo = OpoConfig::from_powers(rng.random_range(0.15..0.5), rng.random_range(0.0..0.05), tau, m).unwrap();
        let tp = rng.random_range(0.5..1.5) * tau;
        let pump = PumpProfile::gaussian(rng.random_range(0.02..0.15), tp).unwrap();
        let window =
            SimulationWindow::new(-4.0 * tp - 2.0 * tau, 4.0 * tp + 15.0 * opo.photon_lifetime(), tau, m).unwrap();
        let state = propagate(&opo, &pump, &window).unwrap();
        let from_state = FieldCorrelations::from_covariance(window, &state).unwrap();
        let kernels = kernel_pulsed(&opo, &pump, &window, DEFAULT_EPS_TRUNC).unwrap();
        let total_kernel: f64 = (0..window.len()).map(|i| kernels.bdb(0, i)).sum();
        assert!(
            rel(from_state.total_photons(), total_kernel) < 1e-6,
            "case {case}: photon number"
        );
        for _ in 0..3 {
            let centre = rng.random_range(0.0..3.0) * opo.photon_lifetime();
            let width = rng.random_range(0.5..4.0) * tau;
            let h = gaussian_mode(&mut rng, &window, centre, width);
            let a = from_state.mode_moments(&h).unwrap();
            let b = kernels.mode_moments(&h).unwrap();
            assert!(
                rel(a.number, b.number) < 1e-6,
                "case {case}: {} vs {}",
                a.number,
                b.number
            );
            assert!(
                rel(a.anomalous, b.anomalous) < 1e-6,
                "case {case}: {} vs {}",
                a.anomalous,
                b.anomalous
            );
        }
    }
}

#[test]
fn off_comb_correlations_vanish() {
    let opo = OpoConfig::from_powers(0.3, 0.01, REFERENCE_TAU, 4).unwrap();
    let pump = PumpProfile::gaussian(0.1, REFERENCE_TAU).unwrap();
    let window = SimulationWindow::new(-6.0 * REFERENCE_TAU, 30.0 * REFERENCE_TAU, REFERENCE_TAU, 4).unwrap();
    let state = propagate(&opo, &pump, &window).unwrap();
    let v = state.matrix();
    let mut worst: f64 = 0.0;
    for i in 0..window.len() {
        for j in 0..window.len() {
            if (i as i64 - j as i64).rem_euclid(4) != 0 {
                for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    worst = worst.max(v[(2 * i + a, 2 * j + b)].abs());
                }
            }
        }
    }
    assert!(worst < 1e-10, "{worst:e}");
    assert!(state.is_physical(1e-9));
}

#[test]
fn propagated_cw_state_matches_stationary_kernels() {
    let tau = REFERENCE_TAU;
    let opo = OpoConfig::reference(8).unwrap();
    let z = 0.010;
    // Start-up transients of the second moments decay as (ρe^z)^{2n} per round
    // trip; burn in until that is below 1e-12.
    let decay = -2.0 * (opo.round_trip_amplitude().ln() + z);
    let burn = (27.7 / decay).ceil() * tau;
    let full = SimulationWindow::new(-burn, 40.0 * tau, tau, 8).unwrap();
    let state = propagate(&opo, &PumpProfile::constant(z).unwrap(), &full).unwrap();
    let start = full.index_of(0.0).unwrap();
    let len = full.len() - start;
    let keep: Vec<ModeLabel> = (0..full.len() as i64)
        .filter(|i| (*i as usize) < start)
        .map(ModeLabel::output)
        .collect();
    let tail = state.discard(&keep).unwrap();
    let window = SimulationWindow::new(0.0, 40.0 * tau - 0.5 * full.dt(), tau, 8).unwrap();
    assert_eq!(window.len(), len);
    let relabeled = opoherald::gaussian::CovarianceState::from_parts(
        tail.matrix().clone(),
        (0..len as i64).map(ModeLabel::output).collect(),
    )
    .unwrap();
    let propagated = FieldCorrelations::from_covariance(window, &relabeled).unwrap();
    let stationary = CwKernels::new(&opo, z).unwrap().field(&window, 1e-16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let (centre, width) = (rng.random_range(5.0..35.0) * tau, rng.random_range(1.0..8.0) * tau);
        let h = gaussian_mode(&mut rng, &window, centre, width);
        let a = propagated.mode_moments(&h).unwrap();
        let b = stationary.mode_moments(&h).unwrap();
        assert!(rel(a.number, b.number) < 1e-8, "{} vs {}", a.number, b.number);
        assert!(rel(a.anomalous, b.anomalous) < 1e-8);
    }
}

#[test]
fn pulsed_kernels_converge_to_closed_form_under_constant_pump() {
    let opo = OpoConfig::reference(4).unwrap();
    let z = 0.014;
    let cw = CwKernels::new(&opo, z).unwrap();
    let burn = 40.0 * opo.photon_lifetime();
    let window = SimulationWindow::new(0.0, burn + 40.0 * REFERENCE_TAU, REFERENCE_TAU, 4).unwrap();
    let kernels = kernel_pulsed(&opo, &PumpProfile::constant(z).unwrap(), &window, DEFAULT_EPS_TRUNC).unwrap();
    let i0 = window.index_of(burn).unwrap();
    for q in 0..30 {
        for i in [i0, i0 + 1, i0 + 17] {
            assert!(rel(kernels.bdb(q, i), cw.bdb(q)) < 1e-10, "q = {q}");
            assert!(rel(kernels.bb(q, i), cw.bb(q)) < 1e-10, "q = {q}");
        }
    }
}

#[test]
fn total_photon_number_of_reference_pulse() {
    let opo = OpoConfig::reference(4).unwrap();
    let tp = 3.0 * REFERENCE_TAU;
    let pump = PumpProfile::gaussian(0.05, tp).unwrap();
    let window = SimulationWindow::new(
        -4.0 * tp - 2.0 * REFERENCE_TAU,
        4.0 * tp + 15.0 * opo.photon_lifetime(),
        REFERENCE_TAU,
        4,
    )
    .unwrap();
    let state = propagate(&opo, &pump, &window).unwrap();
    let kernels = kernel_pulsed(&opo, &pump, &window, DEFAULT_EPS_TRUNC).unwrap();
    let total: f64 = (0..window.len()).map(|i| kernels.bdb(0, i)).sum();
    let from_state = FieldCorrelations::from_covariance(window, &state)
        .unwrap()
        .total_photons();
    assert!(rel(from_state, total) < 1e-6);
}

#[test]
fn spectrum_is_the_fourier_transform_of_the_kernel() {
    let opo = OpoConfig::reference(4).unwrap();
    let z = 0.02;
    let cw = CwKernels::new(&opo, z).unwrap();
    let lags = cw.lag_cutoff(1e-16) as i64;
    for w in [0.0, 3e7, 1.1e8, 0.5 * std::f64::consts::PI / REFERENCE_TAU] {
        let s = spectrum_cw(&opo, z, &[w]).unwrap()[0];
        let dtft: f64 = (-lags..=lags)
            .map(|q| cw.bdb(q) * (w * q as f64 * REFERENCE_TAU).cos())
            .sum();
        assert!(
            rel(s * 2.0 * std::f64::consts::PI / REFERENCE_TAU, dtft) < 1e-9 || rel(s, dtft) < 1e-9,
            "ω = {w}: {s} vs {dtft}"
        );
    }
}

#[test]
fn bogoliubov_coefficients_are_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let opo = OpoConfig::from_powers(
            rng.random_range(0.05..0.6),
            rng.random_range(0.0..0.1),
            REFERENCE_TAU,
            4,
        )
        .unwrap();
        let z = rng.random_range(0.0..0.95) * opo.threshold_z();
        let w = rng.random_range(-3e9..3e9);
        let r = frequency_response(&opo, z, w).unwrap();
        assert!((r.bogoliubov_norm() - 1.0).abs() < 1e-10);
        let s = spectrum_cw(&opo, z, &[w]).unwrap()[0];
        let from_response = r.g1.norm_sqr() + r.g2.norm_sqr();
        assert!(rel(from_response, s) < 1e-9 || (from_response - s).abs() < 1e-15);
    }
}

#[test]
fn ring_cavity_approaches_single_mode_limit() {
    let (g1, g2) = (REFERENCE_T1_SQ / REFERENCE_TAU, REFERENCE_R2_SQ / REFERENCE_TAU);
    let eps = 0.4 * 0.5 * (g1 + g2);
    let omegas = [0.0, 2e7, 6e7, 1.5e8];
    let reference = spectrum_single_mode(g1, g2, eps, &omegas).unwrap();
    let level = |k: i32| {
        let tau = REFERENCE_TAU * 0.5f64.powi(k);
        let opo = OpoConfig::from_powers(g1 * tau, g2 * tau, tau, 4).unwrap();
        spectrum_cw(&opo, eps * tau, &omegas).unwrap()
    };
    let levels: Vec<Vec<f64>> = (0..7).map(level).collect();
    let raw: Vec<f64> = levels
        .iter()
        .map(|s| (0..omegas.len()).map(|j| rel(s[j], reference[j])).fold(0.0, f64::max))
        .collect();
    // The raw error is first order in τ.
    for k in 2..raw.len() {
        assert!(
            (raw[k - 1] / raw[k] - 2.0).abs() < 0.15,
            "raw ratio {}",
            raw[k - 1] / raw[k]
        );
    }
    // One Richardson step removes it and leaves second order.
    let extrapolated: Vec<f64> = (0..levels.len() - 1)
        .map(|k| {
            (0..omegas.len())
                .map(|j| rel(2.0 * levels[k + 1][j] - levels[k][j], reference[j]))
                .fold(0.0, f64::max)
        })
        .collect();
    for k in 2..extrapolated.len() {
        let ratio = extrapolated[k - 1] / extrapolated[k];
        assert!(ratio > 3.4 && ratio < 4.6, "extrapolated ratio {ratio}");
    }
    assert!(*extrapolated.last().unwrap() < 1e-4);
}

#[test]
fn cavity_lifetime_fit() {
    let opo = OpoConfig::reference(8).unwrap();
    let fitted = fit_photon_lifetime(&opo, 200).unwrap();
    assert!(rel(fitted, opo.photon_lifetime()) < 0.02);
    assert!((fitted / REFERENCE_TAU - 7.6).abs() < 0.1);
}

#[test]
fn cw_flux_calibration() {
    let opo = OpoConfig::reference(8).unwrap();
    let z = calibrate_cw_flux(&opo, 2e6).unwrap();
    let flux = CwKernels::new(&opo, z).unwrap().degenerate_flux();
    assert!(rel(flux, 2e6) < 1e-10);
    assert!(z > 0.0 && z < opo.threshold_z());
    assert!(matches!(
        calibrate_cw_flux(&opo, 1e30),
        Err(opoherald::Error::AboveThreshold(_))
    ));
}

#[test]
fn above_threshold_is_rejected() {
    let opo = OpoConfig::reference(4).unwrap();
    assert!(matches!(
        CwKernels::new(&opo, 1.01 * opo.threshold_z()),
        Err(opoherald::Error::AboveThreshold(_))
    ));
    assert!(spectrum_cw(&opo, opo.threshold_z(), &[0.0]).is_err());
}

#[test]
fn squeezing_eigenmode_is_below_vacuum_and_above_spectral_bound() {
    let opo = OpoConfig::reference(4).unwrap();
    let z = 0.5 * opo.threshold_z();
    let window = SimulationWindow::new(0.0, 60.0 * REFERENCE_TAU, REFERENCE_TAU, 4).unwrap();
    let field = CwKernels::new(&opo, z).unwrap().field(&window, 1e-14).unwrap();
    let p = squeezing_eigenmode(&field, Quadrature::P).unwrap();
    let moments = field.mode_moments(&p.mode).unwrap();
    assert!(rel(moments.p_variance(), p.variance) < 1e-9);
    assert!(p.variance < 1.0);
    // The amplified quadrature has no mode below vacuum. No squeezed mode
    // beats the zero-frequency symbol of its residue-class Toeplitz kernel.
    let x = squeezing_eigenmode(&field, Quadrature::X).unwrap();
    assert!(x.variance > 1.0);
    let cw = CwKernels::new(&opo, z).unwrap();
    let lags = cw.lag_cutoff(1e-16) as i64;
    let symbol = 1.0 + 2.0 * (-lags..=lags).map(|q| cw.bdb(q) - cw.bb(q)).sum::<f64>();
    assert!(p.variance > symbol - 1e-12, "{} vs {symbol}", p.variance);
    assert!(p.variance < symbol + 0.2);
}
