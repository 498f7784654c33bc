//! Python bindings: cavity configuration, heralding scenarios and the
//! Gaussian state toolkit.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use opoherald::field::ModeFunction;
use opoherald::filter::FilterConfig;
use opoherald::gaussian::{CovarianceState, ModeLabel, SymplecticMap};
use opoherald::herald::{
    DetectionChain, HeraldModel, HeraldResult, HeraldScenario, OptimizeOptions, TriggerWindow, WindowOffset,
};
use opoherald::opo;

create_exception!(pyopoherald, OpoHeraldError, PyException);

fn err(e: opoherald::Error) -> PyErr {
    OpoHeraldError::new_err(e.to_string())
}

/// Ring cavity with output coupler power transmission `t1_sq`, intracavity
/// loss `r2_sq`, round-trip time `tau` in seconds and `m` samples per round trip.
#[pyclass(name = "OpoConfig", frozen, from_py_object)]
#[derive(Clone)]
struct PyOpoConfig(opo::OpoConfig);

#[pymethods]
impl PyOpoConfig {
    #[new]
    #[pyo3(signature = (t1_sq, r2_sq, tau, m = 8))]
    fn new(t1_sq: f64, r2_sq: f64, tau: f64, m: usize) -> PyResult<Self> {
        opo::OpoConfig::from_powers(t1_sq, r2_sq, tau, m).map(Self).map_err(err)
    }

    /// Reference cavity values.
    #[staticmethod]
    #[pyo3(signature = (m = 8))]
    fn reference(m: usize) -> PyResult<Self> {
        opo::OpoConfig::reference(m).map(Self).map_err(err)
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt()
    }

    #[getter]
    fn photon_lifetime(&self) -> f64 {
        self.0.photon_lifetime()
    }

    #[getter]
    fn threshold_z(&self) -> f64 {
        self.0.threshold_z()
    }

    /// Constant-pump squeezing parameter giving degenerate flux `flux` in s⁻¹.
    fn calibrate_cw_flux(&self, flux: f64) -> PyResult<f64> {
        opo::calibrate_cw_flux(&self.0, flux).map_err(err)
    }

    /// Output photon spectrum under a constant pump at angular detunings `omegas`.
    fn spectrum_cw(&self, z: f64, omegas: Vec<f64>) -> PyResult<Vec<f64>> {
        opo::spectrum_cw(&self.0, z, &omegas).map_err(err)
    }

    /// Photon lifetime from a fit to the CW output autocorrelation.
    #[pyo3(signature = (lags = 200))]
    fn fit_photon_lifetime(&self, lags: usize) -> PyResult<f64> {
        opo::fit_photon_lifetime(&self.0, lags).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "OpoConfig(t1_sq={}, r2_sq={}, tau={:e}, m={})",
            self.0.t1().powi(2),
            self.0.r2().powi(2),
            self.0.tau(),
            self.0.per_round_trip()
        )
    }
}

/// Tap reflectivity, trigger and signal efficiencies and a symmetric
/// Lorentzian filter of full bandwidth `bandwidth` in s⁻¹.
#[pyclass(name = "DetectionChain", frozen, from_py_object)]
#[derive(Clone)]
struct PyDetectionChain(DetectionChain);

#[pymethods]
impl PyDetectionChain {
    #[new]
    #[pyo3(signature = (tap, eta_t, eta_s, bandwidth = None))]
    fn new(tap: f64, eta_t: f64, eta_s: f64, bandwidth: Option<f64>) -> PyResult<Self> {
        let filter = match bandwidth {
            Some(b) => FilterConfig::symmetric(b).map_err(err)?,
            None => FilterConfig::reference(),
        };
        DetectionChain::new(tap, eta_t, eta_s, filter).map(Self).map_err(err)
    }

    #[staticmethod]
    fn reference() -> Self {
        Self(DetectionChain::reference())
    }

    #[getter]
    fn tap(&self) -> f64 {
        self.0.tap()
    }

    #[getter]
    fn eta_t(&self) -> f64 {
        self.0.eta_t()
    }

    #[getter]
    fn eta_s(&self) -> f64 {
        self.0.eta_s()
    }

    #[getter]
    fn filter_mean_delay(&self) -> f64 {
        self.0.filter().mean_delay()
    }
}

/// Outcome of an evaluation or optimization.
#[pyclass(name = "HeraldResult", frozen, get_all)]
struct PyHeraldResult {
    wigner: f64,
    probability: f64,
    window_start: f64,
    iterations: usize,
    high_flux: bool,
    /// Grid times of the signal mode, in seconds.
    times: Vec<f64>,
    /// Unit-norm grid coefficients of the signal mode.
    mode: Vec<f64>,
    trigger_times: Vec<f64>,
    trigger_probabilities: Vec<f64>,
    /// `nan` where a trigger mode holds no photons.
    trigger_wigner: Vec<f64>,
}

impl From<HeraldResult> for PyHeraldResult {
    fn from(r: HeraldResult) -> Self {
        Self {
            wigner: r.wigner,
            probability: r.probability,
            window_start: r.window_start,
            iterations: r.iterations,
            high_flux: r.high_flux(),
            times: r.mode.window().times().collect(),
            mode: r.mode.coefficients().to_vec(),
            trigger_times: r.per_trigger.iter().map(|o| o.time).collect(),
            trigger_probabilities: r.per_trigger.iter().map(|o| o.probability).collect(),
            trigger_wigner: r.per_trigger.iter().map(|o| o.wigner.unwrap_or(f64::NAN)).collect(),
        }
    }
}

#[pymethods]
impl PyHeraldResult {
    fn __repr__(&self) -> String {
        format!(
            "HeraldResult(wigner={:.6}, probability={:.4e})",
            self.wigner, self.probability
        )
    }
}

/// A heralding scenario with its output correlations computed.
#[pyclass(name = "Herald", frozen)]
struct PyHerald(HeraldModel);

fn prepared(scenario: PyResult<HeraldScenario>) -> PyResult<PyHerald> {
    scenario?.prepare().map(PyHerald).map_err(err)
}

#[pymethods]
impl PyHerald {
    /// Gaussian pump pulse of strength `s` and width `tp` (seconds); acceptance
    /// window of `duration` seconds placed for maximum success probability.
    #[staticmethod]
    #[pyo3(signature = (opo, s, tp, duration, chain = None))]
    fn pulsed(opo: PyOpoConfig, s: f64, tp: f64, duration: f64, chain: Option<PyDetectionChain>) -> PyResult<Self> {
        let chain = chain.map_or_else(DetectionChain::reference, |c| c.0);
        let trigger = TriggerWindow::new(duration, WindowOffset::MaximizeProbability).map_err(err)?;
        prepared(HeraldScenario::pulsed(opo.0, s, tp, chain, trigger).map_err(err))
    }

    /// Constant pump `z` with an acceptance window of `duration` seconds.
    #[staticmethod]
    #[pyo3(signature = (opo, z, duration, chain = None))]
    fn cw(opo: PyOpoConfig, z: f64, duration: f64, chain: Option<PyDetectionChain>) -> PyResult<Self> {
        let chain = chain.map_or_else(DetectionChain::reference, |c| c.0);
        prepared(HeraldScenario::cw(opo.0, z, chain, duration).map_err(err))
    }

    #[getter]
    fn probability(&self) -> f64 {
        self.0.probability()
    }

    #[getter]
    fn trigger_count(&self) -> usize {
        self.0.trigger_count()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.scenario().sim.times().collect()
    }

    /// Names of the built-in signal modes.
    fn candidates(&self) -> PyResult<Vec<String>> {
        Ok(self
            .0
            .candidates()
            .map_err(err)?
            .into_iter()
            .map(|(n, _)| n.to_string())
            .collect())
    }

    /// Evaluates a built-in mode by name or a list of grid coefficients,
    /// normalized before use.
    fn evaluate(&self, py: Python<'_>, mode: &Bound<'_, PyAny>) -> PyResult<PyHeraldResult> {
        let h = if let Ok(name) = mode.extract::<String>() {
            self.0
                .candidates()
                .map_err(err)?
                .into_iter()
                .find(|(n, _)| *n == name)
                .map(|(_, h)| h)
                .ok_or_else(|| OpoHeraldError::new_err(format!("unknown mode {name:?}")))?
        } else {
            let coeffs: Vec<f64> = mode.extract()?;
            ModeFunction::normalized(self.0.scenario().sim, coeffs).map_err(err)?
        };
        py.detach(|| self.0.evaluate(&h)).map(Into::into).map_err(err)
    }

    /// Optimizes the signal mode from the built-in starting points.
    #[pyo3(signature = (seed = 0))]
    fn optimize(&self, py: Python<'_>, seed: u64) -> PyResult<PyHeraldResult> {
        let options = OptimizeOptions {
            seed,
            ..OptimizeOptions::default()
        };
        py.detach(|| self.0.optimize(&options)).map(Into::into).map_err(err)
    }
}

/// Covariance matrix of zero-mean modes `0..n`, vacuum equal to the identity.
#[pyclass(name = "GaussianState", frozen)]
struct PyGaussianState(CovarianceState);

fn label(mode: i64) -> ModeLabel {
    ModeLabel::output(mode)
}

#[pymethods]
impl PyGaussianState {
    #[staticmethod]
    fn vacuum(n: usize) -> PyResult<Self> {
        CovarianceState::vacuum((0..n as i64).map(label).collect())
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.0.n_modes()
    }

    /// Row-major covariance matrix, quadratures ordered (x0, p0, x1, p1, …).
    fn matrix(&self) -> Vec<Vec<f64>> {
        let m = self.0.matrix();
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    fn squeeze(&self, mode: i64, z: f64) -> PyResult<Self> {
        let map = SymplecticMap::squeeze(z).map_err(err)?;
        self.0.apply(&map, &[label(mode)]).map(Self).map_err(err)
    }

    fn phase(&self, mode: i64, theta: f64) -> PyResult<Self> {
        let map = SymplecticMap::phase(theta).map_err(err)?;
        self.0.apply(&map, &[label(mode)]).map(Self).map_err(err)
    }

    fn beamsplitter(&self, a: i64, b: i64, t: f64) -> PyResult<Self> {
        let map = SymplecticMap::beamsplitter(t, (1.0 - t * t).max(0.0).sqrt()).map_err(err)?;
        self.0.apply(&map, &[label(a), label(b)]).map(Self).map_err(err)
    }

    fn two_mode_squeeze(&self, a: i64, b: i64, r: f64) -> PyResult<Self> {
        let map = SymplecticMap::two_mode_squeeze(r).map_err(err)?;
        self.0.apply(&map, &[label(a), label(b)]).map(Self).map_err(err)
    }

    /// Power transmission `eta` on one mode.
    fn attenuate(&self, mode: i64, eta: f64) -> PyResult<Self> {
        self.0.attenuate(&label(mode), eta).map(Self).map_err(err)
    }

    fn discard(&self, modes: Vec<i64>) -> PyResult<Self> {
        let labels: Vec<ModeLabel> = modes.into_iter().map(label).collect();
        self.0.discard(&labels).map(Self).map_err(err)
    }

    #[pyo3(signature = (tol = 1e-9))]
    fn is_physical(&self, tol: f64) -> bool {
        self.0.is_physical(tol)
    }

    fn symplectic_eigenvalues(&self) -> Option<Vec<f64>> {
        self.0.symplectic_eigenvalues()
    }
}

/// Photon spectrum of the single-mode degenerate OPO with decay rates
/// `gamma1`, `gamma2` and squeezing rate `eps`.
#[pyfunction]
fn spectrum_single_mode(gamma1: f64, gamma2: f64, eps: f64, omegas: Vec<f64>) -> PyResult<Vec<f64>> {
    opo::spectrum_single_mode(gamma1, gamma2, eps, &omegas).map_err(err)
}

#[pymodule]
fn pyopoherald(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OpoHeraldError", m.py().get_type::<OpoHeraldError>())?;
    m.add("REFERENCE_TAU", opo::REFERENCE_TAU)?;
    m.add_class::<PyOpoConfig>()?;
    m.add_class::<PyDetectionChain>()?;
    m.add_class::<PyHerald>()?;
    m.add_class::<PyHeraldResult>()?;
    m.add_class::<PyGaussianState>()?;
    m.add_function(wrap_pyfunction!(spectrum_single_mode, m)?)?;
    Ok(())
}
