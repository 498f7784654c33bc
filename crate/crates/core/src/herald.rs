//! Heralded photon subtraction: trigger and signal modes through the
//! detection chain, the trigger-averaged Wigner value at the origin, the
//! success probability, and optimization of the signal mode.

use nalgebra::{DMatrix, DVector, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_range, Error, Result};
use crate::field::{CombMatrix, FieldCorrelations, ModeFunction};
use crate::filter::FilterConfig;
use crate::gaussian::{mean_photon, CovarianceState, JointModePair, ModeLabel};
use crate::grid::SimulationWindow;
use crate::opo::{
    kernel_pulsed, squeezing_eigenmode, CwKernels, OpoConfig, PumpProfile, Quadrature, DEFAULT_EPS_TRUNC,
};

/// Success probability above which double detections stop being negligible.
pub const LOW_FLUX_LIMIT: f64 = 0.01;

/// Tap beam splitter, detector efficiencies and trigger-arm filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionChain {
    tap: f64,
    eta_t: f64,
    eta_s: f64,
    filter: FilterConfig,
}

impl DetectionChain {
    /// `tap` is the power reflectance `R` sending light to the trigger arm.
    pub fn new(tap: f64, eta_t: f64, eta_s: f64, filter: FilterConfig) -> Result<Self> {
        check_range("R", tap, 0.0, 1.0)?;
        check_range("eta_t", eta_t, 0.0, 1.0)?;
        check_range("eta_s", eta_s, 0.0, 1.0)?;
        Ok(Self {
            tap,
            eta_t,
            eta_s,
            filter,
        })
    }

    /// Reference chain: `R = 0.05`, `η_t = 0.07`, `η_s = 0.70`, `2κ = 5.63·10⁸ s⁻¹`.
    pub fn reference() -> Self {
        Self::new(0.05, 0.07, 0.70, FilterConfig::reference()).expect("valid reference values")
    }

    pub fn tap(&self) -> f64 {
        self.tap
    }

    pub fn eta_t(&self) -> f64 {
        self.eta_t
    }

    pub fn eta_s(&self) -> f64 {
        self.eta_s
    }

    pub fn filter(&self) -> &FilterConfig {
        &self.filter
    }

    /// Amplitude factor `√(R·η_t)` of the trigger arm.
    pub fn trigger_amplitude(&self) -> f64 {
        (self.tap * self.eta_t).sqrt()
    }

    /// Amplitude factor `√((1−R)·η_s)` of the signal arm.
    pub fn signal_amplitude(&self) -> f64 {
        ((1.0 - self.tap) * self.eta_s).sqrt()
    }
}

/// Where the acceptance interval sits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowOffset {
    /// Start time of the interval in seconds (relative to the pump peak for
    /// pulses), snapped to the nearest grid sample.
    Start(f64),
    /// Slide the interval over the grid to maximize the success probability.
    MaximizeProbability,
}

/// Acceptance interval of duration `T`, split into trigger modes one grid
/// sample wide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerWindow {
    duration: f64,
    offset: WindowOffset,
}

impl TriggerWindow {
    pub fn new(duration: f64, offset: WindowOffset) -> Result<Self> {
        check_range("T", duration, 0.0, f64::MAX)?;
        if duration <= 0.0 {
            return Err(Error::Config("trigger window duration must be positive".into()));
        }
        Ok(Self { duration, offset })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn offset(&self) -> WindowOffset {
        self.offset
    }

    /// Number of trigger modes, `T/Δt` rounded to the nearest whole number.
    pub fn modes(&self, dt: f64) -> Result<usize> {
        let n = (self.duration / dt).round();
        if n < 1.0 {
            return Err(Error::Grid(format!(
                "T = {:e} s is shorter than one sample of {dt:e} s",
                self.duration
            )));
        }
        Ok(n as usize)
    }

    /// Duration actually covered by the trigger modes on a grid of step `dt`.
    pub fn effective_duration(&self, dt: f64) -> Result<f64> {
        Ok(self.modes(dt)? as f64 * dt)
    }
}

/// How trigger-mode photon numbers are integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TriggerResolution {
    /// Trigger photon numbers integrated over continuous detection time
    /// within each grid sample, with the OPO correlations held constant over
    /// the sample. Trigger–signal cross terms use the grid projection.
    #[default]
    Continuous,
    /// One trigger mode per grid sample, the rectangle seen through the
    /// filter and averaged over each sample. This is what a covariance over
    /// the grid modes alone can represent.
    Binned,
}

/// A complete heralding setup.
#[derive(Debug, Clone, PartialEq)]
pub struct HeraldScenario {
    pub opo: OpoConfig,
    pub pump: PumpProfile,
    pub chain: DetectionChain,
    pub trigger: TriggerWindow,
    pub sim: SimulationWindow,
    pub resolution: TriggerResolution,
}

impl HeraldScenario {
    pub fn new(
        opo: OpoConfig,
        pump: PumpProfile,
        chain: DetectionChain,
        trigger: TriggerWindow,
        sim: SimulationWindow,
    ) -> Result<Self> {
        if sim.per_round_trip() != opo.per_round_trip() || (sim.tau() - opo.tau()).abs() > 1e-9 * opo.tau() {
            return Err(Error::Grid(
                "simulation window does not match the cavity sampling".into(),
            ));
        }
        let n = trigger.modes(sim.dt())?;
        if n > sim.len() {
            return Err(Error::WindowTooShort(
                "trigger window longer than the simulation".into(),
            ));
        }
        if let PumpProfile::ConstantCw { z } = pump {
            opo.check_below_threshold(z)?;
        }
        Ok(Self {
            opo,
            pump,
            chain,
            trigger,
            sim,
            resolution: TriggerResolution::default(),
        })
    }

    pub fn with_resolution(mut self, resolution: TriggerResolution) -> Self {
        self.resolution = resolution;
        self
    }

    /// Gaussian pump pulse peaking at `t = 0`, with the simulation window
    /// `[−4T_p − 2τ, 4T_p + 15τ/(t1²+r2²) + 5/(κ1+κ2)]` on a grid through `t = 0`.
    pub fn pulsed(opo: OpoConfig, s: f64, tp: f64, chain: DetectionChain, trigger: TriggerWindow) -> Result<Self> {
        let pump = PumpProfile::gaussian(s, tp)?;
        let sim = pulsed_window(&opo, tp, &chain.filter)?;
        Self::new(opo, pump, chain, trigger, sim)
    }

    /// Constant pump. The interval is placed after a margin of ten cavity
    /// lifetimes plus ten filter delays, with the same margin after it.
    pub fn cw(opo: OpoConfig, z: f64, chain: DetectionChain, duration: f64) -> Result<Self> {
        let pump = PumpProfile::constant(z)?;
        let dt = opo.dt();
        let margin = cw_margin(&opo, &chain.filter);
        let margin_steps = (margin / dt).ceil() as usize;
        let trigger = TriggerWindow::new(duration, WindowOffset::Start(0.0))?;
        let n = trigger.modes(dt)?;
        let sim = SimulationWindow::with_origin(margin_steps, 2 * margin_steps + n, opo.tau(), opo.per_round_trip())?;
        Self::new(opo, pump, chain, trigger, sim)
    }

    /// Same scenario on a grid with `factor` times more samples per round trip.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let opo = self.opo.with_per_round_trip(self.opo.per_round_trip() * factor)?;
        let sim = self.sim.refined(factor)?;
        Ok(Self::new(opo, self.pump.clone(), self.chain, self.trigger, sim)?.with_resolution(self.resolution))
    }

    /// Output correlations on the simulation grid.
    pub fn field(&self) -> Result<FieldCorrelations> {
        match &self.pump {
            PumpProfile::ConstantCw { z } => CwKernels::new(&self.opo, *z)?.field(&self.sim, DEFAULT_EPS_TRUNC),
            pump => Ok(kernel_pulsed(&self.opo, pump, &self.sim, DEFAULT_EPS_TRUNC)?.to_field()),
        }
    }

    /// Computes the field and the trigger modes.
    pub fn prepare(&self) -> Result<HeraldModel> {
        HeraldModel::new(self.clone(), self.field()?)
    }

    /// Trigger mode of the grid sample `index` as seen on the OPO output:
    /// the one-sample rectangle propagated back through the filter and scaled
    /// by `√(R·η_t)`.
    pub fn trigger_mode_effective(&self, index: usize) -> Result<Vec<f64>> {
        if index >= self.sim.len() {
            return Err(Error::Grid(format!("trigger sample {index} outside the window")));
        }
        let mut e = vec![0.0; self.sim.len()];
        e[index] = 1.0;
        let mut a = self.chain.filter.backpropagate(&self.sim, &e)?;
        let g = self.chain.trigger_amplitude();
        a.iter_mut().for_each(|v| *v *= g);
        Ok(a)
    }

    /// Signal mode `h` scaled by `√((1−R)·η_s)`.
    pub fn signal_mode_effective(&self, h: &ModeFunction) -> Result<Vec<f64>> {
        self.check_mode(h)?;
        let g = self.chain.signal_amplitude();
        Ok(h.coefficients().iter().map(|c| c * g).collect())
    }

    /// Trigger photon numbers `(αᵀAα, αᵀBα)` of every grid sample at the
    /// configured resolution, given `A` and `B`.
    fn trigger_moments(
        &self,
        a: &CombMatrix,
        b: &CombMatrix,
        range: std::ops::Range<usize>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.resolution == TriggerResolution::Continuous {
            let filter = &self.chain.filter;
            if let (Some(x), Some(p)) = (
                filter.continuous_intensity(&self.sim, a),
                filter.continuous_intensity(&self.sim, b),
            ) {
                let g2 = self.chain.trigger_amplitude().powi(2);
                return Ok((
                    x[range.clone()].iter().map(|v| g2 * v).collect(),
                    p[range].iter().map(|v| g2 * v).collect(),
                ));
            }
        }
        let pairs: Vec<(f64, f64)> = range
            .into_par_iter()
            .map(|i| {
                let alpha = self.trigger_mode_effective(i)?;
                Ok((a.quadratic_form(&alpha), b.quadratic_form(&alpha)))
            })
            .collect::<Result<_>>()?;
        Ok(pairs.into_iter().unzip())
    }

    fn check_mode(&self, h: &ModeFunction) -> Result<()> {
        if h.window() != &self.sim {
            return Err(Error::Grid("mode function lives on another grid".into()));
        }
        Ok(())
    }

    /// Crude guess `h(t) ∝ ∫_{−∞}^t z(t') exp(−(t1²+r2²)(t−t')/2τ) dt'`.
    pub fn candidate_th(&self) -> Result<ModeFunction> {
        let z = self.pump.samples(&self.sim);
        if z.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroPump);
        }
        let rate = 0.5 / self.opo.photon_lifetime();
        let dt = self.sim.dt();
        let decay = (-rate * dt).exp();
        let mut acc = 0.0;
        let mut prev = 0.0;
        let amps: Vec<f64> = z
            .iter()
            .map(|&zi| {
                acc = decay * acc + 0.5 * dt * (zi + decay * prev);
                prev = zi;
                acc
            })
            .collect();
        ModeFunction::from_amplitudes(self.sim, &amps)
    }

    /// `h(t) ∝ √(Σ_n (r1t2)^{2n} sinh²(Σ_{k=1}^{n+1} z(t−kτ)))`, the square
    /// root of the output intensity.
    pub fn candidate_cah(&self) -> Result<ModeFunction> {
        let z = self.pump.samples(&self.sim);
        if z.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroPump);
        }
        let intensity = intensity_profile(&self.opo, &z);
        let amps: Vec<f64> = intensity.iter().map(|v| v.sqrt()).collect();
        ModeFunction::from_amplitudes(self.sim, &amps)
    }

    /// One-tooth comb: the cah amplitude restricted to the residue class of
    /// grid samples carrying the most weight.
    pub fn candidate_spike_comb(&self) -> Result<ModeFunction> {
        let cah = self.candidate_cah()?;
        let m = self.sim.per_round_trip();
        let c = cah.coefficients();
        let best = (0..m)
            .map(|r| (r, c[r..].iter().step_by(m).map(|v| v * v).sum::<f64>()))
            .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a })
            .0;
        let coeffs = c
            .iter()
            .enumerate()
            .map(|(i, v)| if i % m == best { *v } else { 0.0 })
            .collect();
        ModeFunction::from_coefficients(self.sim, coeffs)
    }
}

/// `Σ_n ρ^{2n} sinh²(Z_{n+1}(i))` with the pump zero before the window.
fn intensity_profile(opo: &OpoConfig, z: &[f64]) -> Vec<f64> {
    let m = opo.per_round_trip();
    let rho2 = opo.round_trip_amplitude().powi(2);
    (0..z.len())
        .map(|i| {
            let mut acc = 0.0;
            let mut zsum = 0.0;
            let mut w = 1.0;
            let mut k = 1;
            while k * m <= i {
                zsum += z[i - k * m];
                acc += w * zsum.sinh().powi(2);
                w *= rho2;
                k += 1;
            }
            // Beyond the window start the partial sum no longer changes.
            if rho2 < 1.0 {
                acc += w / (1.0 - rho2) * zsum.sinh().powi(2);
            }
            acc
        })
        .collect()
}

pub fn pulsed_window(opo: &OpoConfig, tp: f64, filter: &FilterConfig) -> Result<SimulationWindow> {
    let dt = opo.dt();
    let before = 4.0 * tp + 2.0 * opo.tau();
    let after = 4.0 * tp + 15.0 * opo.photon_lifetime() + 5.0 * filter.mean_delay();
    let origin = (before / dt).ceil() as usize;
    let len = origin + (after / dt).ceil() as usize + 1;
    SimulationWindow::with_origin(origin, len, opo.tau(), opo.per_round_trip())
}

fn cw_margin(opo: &OpoConfig, filter: &FilterConfig) -> f64 {
    10.0 * opo.photon_lifetime() + 10.0 * filter.mean_delay()
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Outcome for one trigger mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerOutcome {
    /// Centre of the trigger sample, seconds.
    pub time: f64,
    pub probability: f64,
    /// `None` when the trigger mode holds no photons.
    pub wigner: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeraldResult {
    /// Trigger-averaged `W(0,0)`.
    pub wigner: f64,
    /// Total success probability.
    pub probability: f64,
    pub per_trigger: Vec<TriggerOutcome>,
    pub mode: ModeFunction,
    /// Start time of the acceptance interval.
    pub window_start: f64,
    /// Optimizer iterations; zero for a plain evaluation.
    pub iterations: usize,
}

impl HeraldResult {
    /// True when double detections can no longer be neglected.
    pub fn high_flux(&self) -> bool {
        self.probability > LOW_FLUX_LIMIT
    }
}

/// A scenario with its output correlations and trigger modes in place.
///
/// With `A = N + M` and `B = N − M` the normally ordered quadrature kernels,
/// `α_i` the trigger modes and `s² = (1−R)η_s`, the trigger-averaged Wigner
/// value of the signal mode `h` is
///
/// ```text
/// W = [1 − (s²/P)(Σ_i (hᵀAα_i)²/V33 + Σ_i (hᵀBα_i)²/V44)] / (π√(V33 V44))
/// ```
///
/// with `V33 = 1 + 2s² hᵀAh`, `V44 = 1 + 2s² hᵀBh` and `P = Σ_i α_iᵀNα_i`.
#[derive(Debug, Clone)]
pub struct HeraldModel {
    scenario: HeraldScenario,
    field: FieldCorrelations,
    a: CombMatrix,
    b: CombMatrix,
    start: usize,
    /// Columns `Aα_i` and `Bα_i`.
    fx: DMatrix<f64>,
    fp: DMatrix<f64>,
    trigger_x: Vec<f64>,
    trigger_p: Vec<f64>,
    probability: f64,
}

impl HeraldModel {
    pub fn new(scenario: HeraldScenario, field: FieldCorrelations) -> Result<Self> {
        if field.window() != &scenario.sim {
            return Err(Error::Grid("field and scenario use different grids".into()));
        }
        let a = field.x_kernel();
        let b = field.p_kernel();
        let n = scenario.trigger.modes(scenario.sim.dt())?;
        let start = match scenario.trigger.offset() {
            WindowOffset::Start(t) => {
                let i = scenario.sim.index_of(t).ok_or_else(|| {
                    Error::WindowTooShort(format!("trigger interval start {t:e} s is outside the simulation"))
                })?;
                if i + n > scenario.sim.len() {
                    return Err(Error::WindowTooShort(
                        "trigger interval runs past the simulation window".into(),
                    ));
                }
                i
            }
            WindowOffset::MaximizeProbability => best_offset(&scenario, &field, n)?,
        };
        let k = scenario.sim.len();
        let columns: Vec<(Vec<f64>, Vec<f64>)> = (start..start + n)
            .into_par_iter()
            .map(|i| {
                let alpha = scenario.trigger_mode_effective(i)?;
                Ok((a.matvec(&alpha), b.matvec(&alpha)))
            })
            .collect::<Result<_>>()?;
        let mut fx = DMatrix::zeros(k, n);
        let mut fp = DMatrix::zeros(k, n);
        for (j, (ax, bp)) in columns.into_iter().enumerate() {
            fx.column_mut(j).copy_from_slice(&ax);
            fp.column_mut(j).copy_from_slice(&bp);
        }
        let (trigger_x, trigger_p) = scenario.trigger_moments(&a, &b, start..start + n)?;
        let probability = compensated_sum(trigger_x.iter().zip(&trigger_p).map(|(x, p)| 0.5 * (x + p)));
        Ok(Self {
            scenario,
            field,
            a,
            b,
            start,
            fx,
            fp,
            trigger_x,
            trigger_p,
            probability,
        })
    }

    pub fn scenario(&self) -> &HeraldScenario {
        &self.scenario
    }

    pub fn field(&self) -> &FieldCorrelations {
        &self.field
    }

    /// Grid index of the first trigger mode.
    pub fn window_start_index(&self) -> usize {
        self.start
    }

    pub fn window_start(&self) -> f64 {
        self.scenario.sim.time(self.start)
    }

    pub fn trigger_count(&self) -> usize {
        self.trigger_x.len()
    }

    /// `P = Σ_i P_i`, independent of the signal mode.
    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn trigger_probabilities(&self) -> Vec<f64> {
        self.trigger_x
            .iter()
            .zip(&self.trigger_p)
            .map(|(x, p)| 0.5 * (x + p))
            .collect()
    }

    fn signal_scale(&self) -> f64 {
        self.scenario.chain.signal_amplitude().powi(2)
    }

    /// Joint covariance of trigger mode `j` (counted from the window start)
    /// and the signal mode.
    pub fn joint(&self, j: usize, h: &ModeFunction) -> Result<JointModePair> {
        self.scenario.check_mode(h)?;
        let s = self.scenario.chain.signal_amplitude();
        let c = h.coefficients();
        let ah = self.a.quadratic_form(c);
        let bh = self.b.quadratic_form(c);
        let x13 = dot_col(&self.fx, j, c);
        let p24 = dot_col(&self.fp, j, c);
        joint_matrix(self.trigger_x[j], self.trigger_p[j], s, ah, bh, x13, p24)
    }

    /// Per-trigger evaluation through the conditional Wigner formula.
    pub fn evaluate(&self, h: &ModeFunction) -> Result<HeraldResult> {
        self.scenario.check_mode(h)?;
        if self.probability <= 0.0 {
            return Err(Error::ZeroTriggerProbability);
        }
        let s = self.scenario.chain.signal_amplitude();
        let c = h.coefficients();
        let ah = self.a.quadratic_form(c);
        let bh = self.b.quadratic_form(c);
        let x13 = self.fx.tr_mul(&DVector::from_column_slice(c));
        let p24 = self.fp.tr_mul(&DVector::from_column_slice(c));
        let per: Vec<(TriggerOutcome, f64)> = (0..self.trigger_count())
            .into_par_iter()
            .map(|j| {
                let v = joint_matrix(self.trigger_x[j], self.trigger_p[j], s, ah, bh, x13[j], p24[j])?;
                let p = 0.5 * (self.trigger_x[j] + self.trigger_p[j]);
                let m = v.matrix();
                let (w, pw) = match v.wigner_origin_conditional() {
                    Ok(w) => (Some(w), p * w),
                    Err(Error::ZeroTriggerProbability) => {
                        // Only the product survives as P_i → 0.
                        let (v33, v44) = (m[(2, 2)], m[(3, 3)]);
                        let pw = (p - m[(1, 3)].powi(2) / (4.0 * v44) - m[(0, 2)].powi(2) / (4.0 * v33))
                            / (std::f64::consts::PI * (v33 * v44).sqrt());
                        (None, pw)
                    }
                    Err(e) => return Err(e),
                };
                Ok((
                    TriggerOutcome {
                        time: self.scenario.sim.time(self.start + j),
                        probability: p,
                        wigner: w,
                    },
                    pw,
                ))
            })
            .collect::<Result<_>>()?;
        let numerator = compensated_sum(per.iter().map(|(_, pw)| *pw));
        Ok(HeraldResult {
            wigner: numerator / self.probability,
            probability: self.probability,
            per_trigger: per.into_iter().map(|(o, _)| o).collect(),
            mode: h.clone(),
            window_start: self.window_start(),
            iterations: 0,
        })
    }

    /// `W(h)` from the closed form; `h` need not be normalized.
    pub fn objective(&self, h: &[f64]) -> f64 {
        self.objective_parts(h).0
    }

    /// `W` and its Euclidean gradient at a unit vector `h`.
    pub fn objective_gradient(&self, h: &[f64]) -> (f64, Vec<f64>) {
        let (w, grad) = self.objective_parts(h);
        (w, grad)
    }

    fn objective_parts(&self, h: &[f64]) -> (f64, Vec<f64>) {
        let norm2 = dot(h, h);
        let s2 = self.signal_scale();
        let ah = self.a.matvec(h);
        let bh = self.b.matvec(h);
        let hv = DVector::from_column_slice(h);
        let gx_vec = self.fx.tr_mul(&hv);
        let gp_vec = self.fp.tr_mul(&hv);
        // Scale-invariant form: quadratic forms divided by |h|².
        let a = dot(h, &ah) / norm2;
        let b = dot(h, &bh) / norm2;
        let gx = gx_vec.norm_squared() / norm2;
        let gp = gp_vec.norm_squared() / norm2;
        let u = 1.0 + 2.0 * s2 * a;
        let v = 1.0 + 2.0 * s2 * b;
        let k = s2 / self.probability;
        let q = 1.0 - k * (gx / u + gp / v);
        let root = 1.0 / (u * v).sqrt();
        let w = root * q / std::f64::consts::PI;

        let dw_du = (-0.5 * q / u + k * gx / (u * u)) * root / std::f64::consts::PI;
        let dw_dv = (-0.5 * q / v + k * gp / (v * v)) * root / std::f64::consts::PI;
        let dw_dgx = -root * k / u / std::f64::consts::PI;
        let dw_dgp = -root * k / v / std::f64::consts::PI;
        let fxg = &self.fx * gx_vec;
        let fpg = &self.fp * gp_vec;
        // d(qf/|h|²)/dh = 2(Qh − qf·h)/|h|²
        let grad = (0..h.len())
            .map(|i| {
                let da = 2.0 * (ah[i] - a * h[i]) / norm2;
                let db = 2.0 * (bh[i] - b * h[i]) / norm2;
                let dgx = 2.0 * (fxg[i] - gx * h[i]) / norm2;
                let dgp = 2.0 * (fpg[i] - gp * h[i]) / norm2;
                dw_du * 2.0 * s2 * da + dw_dv * 2.0 * s2 * db + dw_dgx * dgx + dw_dgp * dgp
            })
            .collect();
        (w, grad)
    }

    /// Recomputes `(W, P)` with trigger modes `Σ_j U_ij α_j` for an
    /// orthogonal `U`. Needs [`TriggerResolution::Binned`], where the trigger
    /// modes are single grid modes.
    pub fn basis_invariance_check(&self, h: &ModeFunction, u: &DMatrix<f64>) -> Result<(f64, f64)> {
        self.scenario.check_mode(h)?;
        if self.scenario.resolution != TriggerResolution::Binned {
            return Err(Error::Config(
                "basis rotation needs grid-resolution trigger modes".into(),
            ));
        }
        let n = self.trigger_count();
        if u.nrows() != n || u.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: u.nrows(),
            });
        }
        let residual = (u * u.transpose() - DMatrix::identity(n, n)).amax();
        if residual > 1e-10 {
            return Err(Error::NotOrthogonal(residual));
        }
        let alphas: Vec<Vec<f64>> = (self.start..self.start + n)
            .map(|i| self.scenario.trigger_mode_effective(i))
            .collect::<Result<_>>()?;
        let s = self.scenario.chain.signal_amplitude();
        let c = h.coefficients();
        let ah = self.a.quadratic_form(c);
        let bh = self.b.quadratic_form(c);
        let hx = self.a.matvec(c);
        let hp = self.b.matvec(c);
        let terms: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mixed: Vec<f64> = (0..c.len())
                    .map(|t| (0..n).map(|j| u[(i, j)] * alphas[j][t]).sum())
                    .collect();
                let vx = self.a.quadratic_form(&mixed);
                let vp = self.b.quadratic_form(&mixed);
                let x13 = dot(&mixed, &hx);
                let p24 = dot(&mixed, &hp);
                let v = joint_matrix(vx, vp, s, ah, bh, x13, p24)?;
                let p = 0.5 * (vx + vp);
                let m = v.matrix();
                let pw = (p - m[(1, 3)].powi(2) / (4.0 * m[(3, 3)]) - m[(0, 2)].powi(2) / (4.0 * m[(2, 2)]))
                    / (std::f64::consts::PI * (m[(2, 2)] * m[(3, 3)]).sqrt());
                Ok((p, pw))
            })
            .collect::<Result<_>>()?;
        let p = compensated_sum(terms.iter().map(|t| t.0));
        if p <= 0.0 {
            return Err(Error::ZeroTriggerProbability);
        }
        let num = compensated_sum(terms.iter().map(|t| t.1));
        Ok((num / p, p))
    }

    /// Built-in starting modes: th, cah, the p-squeezing eigenmode and the
    /// single-tooth comb. Pulsed candidates are skipped for a constant pump.
    pub fn candidates(&self) -> Result<Vec<(&'static str, ModeFunction)>> {
        let sc = &self.scenario;
        let mut out = Vec::new();
        if !sc.pump.is_cw() {
            out.push(("th", sc.candidate_th()?));
            out.push(("cah", sc.candidate_cah()?));
            out.push(("comb", sc.candidate_spike_comb()?));
        } else {
            out.push(("window", self.window_mode()?));
        }
        let sq = squeezing_eigenmode(&self.field, Quadrature::P)?;
        if !sq.degenerate {
            out.push(("eigenmode", sq.mode));
        }
        Ok(out)
    }

    /// Flat mode over the acceptance interval, widened by one cavity lifetime
    /// on both sides.
    fn window_mode(&self) -> Result<ModeFunction> {
        let sim = &self.scenario.sim;
        let pad = (self.scenario.opo.photon_lifetime() / sim.dt()).round() as usize;
        let lo = self.start.saturating_sub(pad);
        let hi = (self.start + self.trigger_count() + pad).min(sim.len());
        let coeffs = (0..sim.len())
            .map(|i| if (lo..hi).contains(&i) { 1.0 } else { 0.0 })
            .collect();
        ModeFunction::from_coefficients(*sim, coeffs)
    }

    /// Minimizes `W` over unit-norm signal modes.
    pub fn optimize(&self, options: &OptimizeOptions) -> Result<HeraldResult> {
        if self.probability <= 0.0 {
            return Err(Error::ZeroTriggerProbability);
        }
        let mut starts: Vec<Vec<f64>> = self
            .candidates()?
            .into_iter()
            .map(|(_, m)| m.into_coefficients())
            .collect();
        let base = starts
            .iter()
            .min_by(|a, b| self.objective(a).total_cmp(&self.objective(b)))
            .cloned()
            .expect("at least one candidate");
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let k = base.len();
        for _ in 0..options.random_restarts {
            let spread = 0.5 / (k as f64).sqrt();
            let h: Vec<f64> = base.iter().map(|v| v + spread * rng.random_range(-1.0..1.0)).collect();
            starts.push(h);
        }
        let runs: Vec<Result<LocalRun>> = starts.par_iter().map(|h0| self.descend(h0, options)).collect();
        let mut best: Option<LocalRun> = None;
        let mut failure = None;
        for run in runs {
            match run {
                Ok(r) => {
                    if best.as_ref().is_none_or(|b| r.w < b.w) {
                        best = Some(r);
                    }
                }
                Err(e) => failure = Some(e),
            }
        }
        let best = match (best, failure) {
            (Some(b), _) => b,
            (None, Some(e)) => return Err(e),
            (None, None) => unreachable!("at least one start"),
        };
        if !best.converged {
            return Err(Error::NoConvergence {
                iterations: best.iterations,
                last_change: best.last_change,
            });
        }
        let mode = ModeFunction::from_coefficients(self.scenario.sim, best.h)?;
        let mut result = self.evaluate(&mode)?;
        result.iterations = best.iterations;
        Ok(result)
    }

    /// Riemannian gradient descent on the unit sphere with Barzilai–Borwein
    /// steps and a nonmonotone Armijo safeguard.
    fn descend(&self, h0: &[f64], options: &OptimizeOptions) -> Result<LocalRun> {
        let mut h = normalized(h0)?;
        let (mut w, g) = self.objective_gradient(&h);
        let mut rg = tangent(&g, &h);
        let mut step = 1.0 / norm(&rg).max(1e-300) * 1e-2;
        let mut best = (w, h.clone());
        let mut history = vec![w];
        let sweep = options.sweep;
        for it in 1..=options.max_iterations {
            let gnorm2 = dot(&rg, &rg);
            if gnorm2.sqrt() < 1e-14 {
                return Ok(LocalRun::done(best, it, 0.0));
            }
            let reference = history.iter().rev().take(10).copied().fold(f64::MIN, f64::max);
            let mut trial_step = step;
            let (mut h_new, mut w_new, mut g_new);
            let mut tries = 0;
            loop {
                let cand: Vec<f64> = h.iter().zip(&rg).map(|(a, b)| a - trial_step * b).collect();
                h_new = normalized(&cand)?;
                let (wn, gn) = self.objective_gradient(&h_new);
                w_new = wn;
                g_new = gn;
                if w_new <= reference - 1e-4 * trial_step * gnorm2 || tries > 60 {
                    break;
                }
                trial_step *= 0.5;
                tries += 1;
            }
            let rg_new = tangent(&g_new, &h_new);
            let s: Vec<f64> = h_new.iter().zip(&h).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = rg_new.iter().zip(&rg).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            step = if sy.abs() > 1e-300 {
                (dot(&s, &s) / sy).abs()
            } else {
                trial_step * 2.0
            };
            step = step.clamp(1e-12, 1e6);
            h = h_new;
            w = w_new;
            rg = rg_new;
            history.push(w);
            if w < best.0 {
                best = (w, h.clone());
            }
            if it >= sweep && it % sweep == 0 {
                let then = history[history.len() - 1 - sweep];
                let change = (then - w).abs();
                if change < options.tolerance {
                    return Ok(LocalRun::done(best, it, change));
                }
            }
        }
        let n = history.len();
        let change = (history[n.saturating_sub(sweep + 1)] - history[n - 1]).abs();
        Ok(LocalRun {
            w: best.0,
            h: best.1,
            iterations: options.max_iterations,
            converged: false,
            last_change: change,
        })
    }
}

struct LocalRun {
    w: f64,
    h: Vec<f64>,
    iterations: usize,
    converged: bool,
    last_change: f64,
}

impl LocalRun {
    fn done(best: (f64, Vec<f64>), iterations: usize, change: f64) -> Self {
        Self {
            w: best.0,
            h: best.1,
            iterations,
            converged: true,
            last_change: change,
        }
    }
}

/// Settings of the mode optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub seed: u64,
    pub random_restarts: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the change of `W` across one sweep.
    pub tolerance: f64,
    /// Iterations per sweep.
    pub sweep: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            random_restarts: 2,
            max_iterations: 100_000,
            tolerance: 1e-9,
            sweep: 20,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn dot_col(m: &DMatrix<f64>, j: usize, v: &[f64]) -> f64 {
    m.column(j).iter().zip(v).map(|(a, b)| a * b).sum()
}

fn normalized(h: &[f64]) -> Result<Vec<f64>> {
    let n = norm(h);
    if !n.is_finite() || n <= 0.0 {
        return Err(Error::NotNormalized(n * n));
    }
    Ok(h.iter().map(|v| v / n).collect())
}

fn tangent(g: &[f64], h: &[f64]) -> Vec<f64> {
    let p = dot(g, h);
    g.iter().zip(h).map(|(a, b)| a - p * b).collect()
}

/// 4×4 covariance from normally ordered moments: trigger `αᵀAα`, `αᵀBα`,
/// signal `hᵀAh`, `hᵀBh` (for unit `h`), cross `αᵀAh`, `αᵀBh`, and the
/// signal amplitude factor `s`.
fn joint_matrix(tx: f64, tp: f64, s: f64, ah: f64, bh: f64, x13: f64, p24: f64) -> Result<JointModePair> {
    let s2 = s * s;
    let mut m = Matrix4::identity();
    m[(0, 0)] += 2.0 * tx;
    m[(1, 1)] += 2.0 * tp;
    m[(2, 2)] += 2.0 * s2 * ah;
    m[(3, 3)] += 2.0 * s2 * bh;
    m[(0, 2)] = 2.0 * s * x13;
    m[(2, 0)] = m[(0, 2)];
    m[(1, 3)] = 2.0 * s * p24;
    m[(3, 1)] = m[(1, 3)];
    JointModePair::new(m)
}

/// Start index maximizing the summed trigger probability over `n` consecutive samples.
fn best_offset(scenario: &HeraldScenario, field: &FieldCorrelations, n: usize) -> Result<usize> {
    let k = scenario.sim.len();
    let (probs, _) = scenario.trigger_moments(field.number(), field.number(), 0..k)?;
    let mut sum: f64 = probs[..n].iter().sum();
    let mut best = (sum, 0);
    for start in 1..=(k - n) {
        sum += probs[start + n - 1] - probs[start - 1];
        if sum > best.0 * (1.0 + 1e-12) {
            best = (sum, start);
        }
    }
    Ok(best.1)
}

/// Evaluates the heralding objective directly on a propagated covariance
/// state over `Output(0..len)` modes, using `extract_joint` per trigger mode.
/// Trigger modes are taken at grid resolution, matching
/// [`TriggerResolution::Binned`].
pub fn evaluate_covariance(
    scenario: &HeraldScenario,
    state: &CovarianceState,
    window_start: usize,
    h: &ModeFunction,
) -> Result<(f64, f64)> {
    scenario.check_mode(h)?;
    let n = scenario.trigger.modes(scenario.sim.dt())?;
    let labels: Vec<ModeLabel> = (0..scenario.sim.len()).map(|i| ModeLabel::output(i as i64)).collect();
    let signal: Vec<(ModeLabel, f64)> = labels.iter().copied().zip(h.coefficients().iter().copied()).collect();
    let eta = scenario.chain.signal_amplitude().powi(2);
    let mut p_terms = Vec::with_capacity(n);
    let mut pw_terms = Vec::with_capacity(n);
    for i in window_start..window_start + n {
        let alpha = scenario.trigger_mode_effective(i)?;
        let trigger: Vec<(ModeLabel, f64)> = labels.iter().copied().zip(alpha).collect();
        let joint = state.extract_joint(&trigger, &signal)?;
        let lossy = joint.as_state().attenuate(&ModeLabel::output(0), eta)?;
        let pair = JointModePair::new(Matrix4::from_iterator(lossy.matrix().iter().copied()))?;
        let p = mean_photon(&pair.trigger_block());
        let w = pair.wigner_origin_conditional()?;
        p_terms.push(p);
        pw_terms.push(p * w);
    }
    let p = compensated_sum(p_terms);
    if p <= 0.0 {
        return Err(Error::ZeroTriggerProbability);
    }
    Ok((compensated_sum(pw_terms) / p, p))
}
