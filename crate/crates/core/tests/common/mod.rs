//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use opoherald::field::ModeFunction;
use opoherald::filter::FilterConfig;
use opoherald::fock::FockGate;
use opoherald::gaussian::{CovarianceState, ModeLabel, SymplecticMap};
use opoherald::grid::SimulationWindow;
use opoherald::herald::{DetectionChain, HeraldScenario, TriggerResolution, TriggerWindow, WindowOffset};
use opoherald::opo::{OpoConfig, REFERENCE_TAU};

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Small lossy cavity and a short pulse: a few hundred grid modes, with
/// grid-resolution trigger modes.
pub fn desk_scenario(rng: &mut ChaCha8Rng, m: usize) -> HeraldScenario {
    let opo = OpoConfig::from_powers(
        rng.random_range(0.2..0.4),
        rng.random_range(0.0..0.05),
        REFERENCE_TAU,
        m,
    )
    .unwrap();
    let tp = rng.random_range(0.8..1.5) * REFERENCE_TAU;
    let s = rng.random_range(0.03..0.12);
    let filter = if rng.random_bool(0.5) {
        FilterConfig::reference()
    } else {
        FilterConfig::lorentzian(rng.random_range(1e8..4e8), rng.random_range(1e8..4e8)).unwrap()
    };
    let chain = DetectionChain::new(
        rng.random_range(0.02..0.1),
        rng.random_range(0.05..0.5),
        rng.random_range(0.5..1.0),
        filter,
    )
    .unwrap();
    let duration = rng.random_range(1.0..5.0) * REFERENCE_TAU;
    let trigger = TriggerWindow::new(duration, WindowOffset::MaximizeProbability).unwrap();
    HeraldScenario::pulsed(opo, s, tp, chain, trigger)
        .unwrap()
        .with_resolution(TriggerResolution::Binned)
}

/// Gaussian envelope with seeded multiplicative noise on every sample.
pub fn random_mode(rng: &mut ChaCha8Rng, window: &SimulationWindow, centre: f64, width: f64) -> ModeFunction {
    let coeffs = window
        .times()
        .map(|t| {
            let x = (t - centre) / width;
            (-0.5 * x * x).exp() * (1.0 + 0.3 * rng.random_range(-1.0..1.0))
        })
        .collect();
    ModeFunction::from_coefficients(*window, coeffs).unwrap()
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q()
}

pub fn apply_gaussian(state: &CovarianceState, gate: &FockGate) -> CovarianceState {
    let l = |m: usize| ModeLabel::output(m as i64);
    match *gate {
        FockGate::Squeeze { mode, z } => state.apply(&SymplecticMap::squeeze(z).unwrap(), &[l(mode)]),
        FockGate::Phase { mode, theta } => state.apply(&SymplecticMap::phase(theta).unwrap(), &[l(mode)]),
        FockGate::Beamsplitter { modes: (a, b), t, r } => {
            state.apply(&SymplecticMap::beamsplitter(t, r).unwrap(), &[l(a), l(b)])
        }
        FockGate::TwoModeSqueeze { modes: (a, b), r } => {
            state.apply(&SymplecticMap::two_mode_squeeze(r).unwrap(), &[l(a), l(b)])
        }
        FockGate::Loss { mode, eta } => state.attenuate(&l(mode), eta),
    }
    .unwrap()
}

pub fn gaussian_state(modes: usize, gates: &[FockGate]) -> CovarianceState {
    let labels = (0..modes as i64).map(ModeLabel::output).collect();
    gates
        .iter()
        .fold(CovarianceState::vacuum(labels).unwrap(), |s, g| apply_gaussian(&s, g))
}

/// Beam splitter with real coefficients, built from the `i`-convention one
/// with quarter-turn phases on the second port.
pub fn real_beamsplitter(modes: (usize, usize), t: f64) -> [FockGate; 3] {
    let r = (1.0 - t * t).sqrt();
    let quarter = FockGate::Phase {
        mode: modes.1,
        theta: -FRAC_PI_2,
    };
    [quarter, FockGate::Beamsplitter { modes, t, r }, quarter]
}

/// Two-mode gates without x–p correlations, the class the conditional
/// formula covers.
pub fn real_field_gates(rng: &mut ChaCha8Rng) -> Vec<FockGate> {
    let mut gates = vec![
        FockGate::Squeeze {
            mode: 0,
            z: rng.random_range(-0.45..0.45),
        },
        FockGate::Squeeze {
            mode: 1,
            z: rng.random_range(-0.45..0.45),
        },
        FockGate::TwoModeSqueeze {
            modes: (0, 1),
            r: rng.random_range(-0.35..0.35),
        },
    ];
    gates.extend(real_beamsplitter((0, 1), rng.random_range(0.2..1.0)));
    gates.push(FockGate::Loss {
        mode: 0,
        eta: rng.random_range(0.3..1.0),
    });
    gates.push(FockGate::Loss {
        mode: 1,
        eta: rng.random_range(0.3..1.0),
    });
    gates
}
