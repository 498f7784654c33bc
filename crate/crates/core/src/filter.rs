//! Trigger-arm filter cavity.
//!
//! Mode functions live on the simulation grid as bin coefficients
//! `c_i = ∫_{bin i} h(t) dt / √Δt`. The filter maps a trigger-side mode onto
//! the OPO output through the adjoint of its impulse response.

use num_complex::Complex64;

use crate::error::{check_finite, check_range, Error, Result};
use crate::field::CombMatrix;
use crate::grid::SimulationWindow;

/// Reference filter bandwidth `2κ` in s⁻¹.
pub const REFERENCE_BANDWIDTH: f64 = 5.63e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterMode {
    /// Infinitely short cavity at fixed coupling rates.
    Lorentzian,
    /// Two-mirror cavity with round-trip time `tau_f`; the rates follow as `t_i²/τ_F`.
    Exact { t1: f64, t2: f64, tau_f: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    kappa1: f64,
    kappa2: f64,
    mode: FilterMode,
}

impl FilterConfig {
    /// Lorentzian filter with coupling rates in s⁻¹.
    pub fn lorentzian(kappa1: f64, kappa2: f64) -> Result<Self> {
        for (what, k) in [("kappa1", kappa1), ("kappa2", kappa2)] {
            check_finite(what, k)?;
            if k <= 0.0 {
                return Err(Error::OutOfRange {
                    what,
                    value: k,
                    min: 0.0,
                    max: f64::INFINITY,
                });
            }
        }
        Ok(Self {
            kappa1,
            kappa2,
            mode: FilterMode::Lorentzian,
        })
    }

    /// Symmetric Lorentzian filter from its full bandwidth `2κ`.
    pub fn symmetric(bandwidth: f64) -> Result<Self> {
        Self::lorentzian(bandwidth / 2.0, bandwidth / 2.0)
    }

    pub fn reference() -> Self {
        Self::symmetric(REFERENCE_BANDWIDTH).expect("positive bandwidth")
    }

    /// Cavity with mirror field transmissions `t1`, `t2` and round trip `tau_f`.
    pub fn exact(t1: f64, t2: f64, tau_f: f64) -> Result<Self> {
        check_range("filter t1", t1, 0.0, 1.0)?;
        check_range("filter t2", t2, 0.0, 1.0)?;
        check_finite("tau_F", tau_f)?;
        if t1 == 0.0 || t2 == 0.0 || tau_f <= 0.0 {
            return Err(Error::Config(format!(
                "exact filter needs t1, t2, τ_F > 0 (got {t1}, {t2}, {tau_f:e})"
            )));
        }
        Ok(Self {
            kappa1: t1 * t1 / tau_f,
            kappa2: t2 * t2 / tau_f,
            mode: FilterMode::Exact { t1, t2, tau_f },
        })
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn mode(&self) -> FilterMode {
        self.mode
    }

    /// Amplitude decay rate `(κ1 + κ2)/2`.
    pub fn decay_rate(&self) -> f64 {
        0.5 * (self.kappa1 + self.kappa2)
    }

    /// Mean photon delay through the filter, `1/(κ1 + κ2)`: the first moment of
    /// the intensity response `κ1κ2 e^{−(κ1+κ2)t}`.
    pub fn mean_delay(&self) -> f64 {
        1.0 / (self.kappa1 + self.kappa2)
    }

    /// `|T(ω)|²` of the Lorentzian limit, `4κ1κ2/((κ1+κ2)² + 4ω²)`.
    pub fn transmission_lorentzian(&self, omega: f64) -> f64 {
        let s = self.kappa1 + self.kappa2;
        4.0 * self.kappa1 * self.kappa2 / (s * s + 4.0 * omega * omega)
    }

    /// Amplitude transfer of the Lorentzian limit, `√(κ1κ2)/((κ1+κ2)/2 − iω)`.
    pub fn transfer_lorentzian(&self, omega: f64) -> Complex64 {
        Complex64::from((self.kappa1 * self.kappa2).sqrt()) / Complex64::new(self.decay_rate(), -omega)
    }

    /// Amplitude transfer of the exact cavity,
    /// `t1t2 e^{iωτ_F/4}/(1 − r1r2 e^{iωτ_F})`.
    pub fn transfer_exact(&self, omega: f64) -> Result<Complex64> {
        let (t1, t2, tau_f) = self.exact_parts()?;
        let rr = (1.0 - t1 * t1).sqrt() * (1.0 - t2 * t2).sqrt();
        let e = Complex64::from_polar(1.0, omega * tau_f);
        Ok(t1 * t2 * Complex64::from_polar(1.0, omega * tau_f / 4.0) / (1.0 - rr * e))
    }

    /// `t1²t2²/(1 + r1²r2² − 2r1r2 cos ωτ_F)`.
    pub fn transmission_exact(&self, omega: f64) -> Result<f64> {
        let (t1, t2, tau_f) = self.exact_parts()?;
        let rr = (1.0 - t1 * t1).sqrt() * (1.0 - t2 * t2).sqrt();
        Ok(t1 * t1 * t2 * t2 / (1.0 + rr * rr - 2.0 * rr * (omega * tau_f).cos()))
    }

    fn exact_parts(&self) -> Result<(f64, f64, f64)> {
        match self.mode {
            FilterMode::Exact { t1, t2, tau_f } => Ok((t1, t2, tau_f)),
            FilterMode::Lorentzian => Err(Error::Config("filter is in the Lorentzian limit".into())),
        }
    }

    /// `∫⟨:Q:⟩ du` of the filtered field over each grid sample, in continuous
    /// time, for a comb kernel `Q` on the output grid held constant within
    /// each sample. `None` for the exact cavity, whose response keeps the
    /// grid piecewise constant so that bin averages are already exact.
    ///
    /// With `k(s) = √(κ1κ2)e^{−as}` the local intensity is
    /// `κ1κ2 [E_0(u) + 2Σ_{q≥1} e^{−aqτ} E_q(u − qτ)]`, where `E_q` is the
    /// lag-`q` comb entry low-passed at rate `2a`.
    pub fn continuous_intensity(&self, window: &SimulationWindow, kernel: &CombMatrix) -> Option<Vec<f64>> {
        if let FilterMode::Exact { .. } = self.mode {
            return None;
        }
        let len = window.len();
        let m = window.per_round_trip();
        let dt = window.dt();
        let a = self.decay_rate();
        let x2 = 2.0 * a * dt;
        let relax = (-x2).exp();
        let gain = (1.0 - relax) / (2.0 * a);
        let lag_decay = (-a * window.tau()).exp();
        let blocks = kernel.blocks();
        let q_max = blocks.iter().map(|b| b.ncols()).max().unwrap_or(0);
        let mut out = vec![0.0; len];
        let mut weight = 1.0;
        for q in 0..q_max {
            if q > 0 {
                weight *= lag_decay;
            }
            let factor = if q == 0 { 1.0 } else { 2.0 * weight };
            if factor < 1e-300 {
                break;
            }
            let mut edge = 0.0;
            for j in 0..len.saturating_sub(q * m) {
                let block = &blocks[j % m];
                let c = block[(j / m, j / m + q)];
                let level = c / (2.0 * a);
                let integral = level * dt + (edge - level) * gain;
                edge = level + (edge - level) * relax;
                out[j + q * m] += factor * integral;
            }
        }
        let scale = self.kappa1 * self.kappa2;
        out.iter_mut().for_each(|v| *v *= scale);
        Some(out)
    }

    /// Output-side mode equivalent to the post-filter mode `h`, as grid
    /// coefficients. The result is not normalized; its norm squared is the
    /// transmitted fraction.
    pub fn backpropagate(&self, window: &SimulationWindow, h: &[f64]) -> Result<Vec<f64>> {
        check_len(window, h)?;
        match self.mode {
            FilterMode::Lorentzian => Ok(self.lorentzian_adjoint(window.dt(), h)),
            FilterMode::Exact { .. } => {
                let (factor, delays) = self.comb(window)?;
                let n = h.len();
                Ok((0..n)
                    .map(|i| {
                        delays
                            .iter()
                            .zip(&factor)
                            .take_while(|(d, _)| i + **d < n)
                            .map(|(d, f)| f * h[i + d])
                            .sum()
                    })
                    .collect())
            }
        }
    }

    /// Filtered field amplitudes for input amplitudes `x` (the signal part of
    /// the filter output; the vacuum port is left out).
    pub fn forward(&self, window: &SimulationWindow, x: &[f64]) -> Result<Vec<f64>> {
        check_len(window, x)?;
        match self.mode {
            FilterMode::Lorentzian => Ok(self.lorentzian_forward(window.dt(), x)),
            FilterMode::Exact { .. } => exact_time_response(self, window, x),
        }
    }

    // Bin-averaged weights of the kernel √(κ1κ2) e^{−a(t'−t)}, t' ≥ t: the
    // same-bin weight and the weight one bin apart, which then decays by
    // e^{−aΔt} per bin.
    fn bin_weights(&self, dt: f64) -> (f64, f64, f64) {
        let a = self.decay_rate();
        let c = (self.kappa1 * self.kappa2).sqrt();
        let x = a * dt;
        let em1 = -(-x).exp_m1();
        let same = c / a * (1.0 - em1 / x);
        let next = c / (a * x) * em1 * em1;
        (same, next, (-x).exp())
    }

    fn lorentzian_adjoint(&self, dt: f64, h: &[f64]) -> Vec<f64> {
        let (same, next, decay) = self.bin_weights(dt);
        let n = h.len();
        let mut out = vec![0.0; n];
        let mut tail = 0.0;
        for i in (0..n).rev() {
            out[i] = same * h[i] + next * tail;
            tail = h[i] + decay * tail;
        }
        out
    }

    fn lorentzian_forward(&self, dt: f64, x: &[f64]) -> Vec<f64> {
        let (same, next, decay) = self.bin_weights(dt);
        let mut out = vec![0.0; x.len()];
        let mut past = 0.0;
        for i in 0..x.len() {
            out[i] = same * x[i] + next * past;
            past = x[i] + decay * past;
        }
        out
    }

    // Echo amplitudes t1t2(r1r2)^n and their delays (n + 1/4)τ_F in grid steps.
    fn comb(&self, window: &SimulationWindow) -> Result<(Vec<f64>, Vec<usize>)> {
        let (t1, t2, tau_f) = self.exact_parts()?;
        let steps = tau_f / window.dt();
        let quarter = steps / 4.0;
        if (quarter - quarter.round()).abs() > 1e-9 * quarter.max(1.0) || quarter.round() < 1.0 {
            return Err(Error::Grid(format!(
                "τ_F/4 = {:e} s is not a multiple of Δt = {:e} s",
                tau_f / 4.0,
                window.dt()
            )));
        }
        let (step, first) = (steps.round() as usize, quarter.round() as usize);
        let rr = (1.0 - t1 * t1).sqrt() * (1.0 - t2 * t2).sqrt();
        let mut amps = Vec::new();
        let mut delays = Vec::new();
        let mut amp = t1 * t2;
        let mut d = first;
        while d < window.len() && amp.abs() > 0.0 {
            amps.push(amp);
            delays.push(d);
            amp *= rr;
            d += step;
            if amp.abs() < 1e-300 {
                break;
            }
        }
        Ok((amps, delays))
    }
}

fn check_len(window: &SimulationWindow, h: &[f64]) -> Result<()> {
    if h.len() != window.len() {
        return Err(Error::DimensionMismatch {
            expected: window.len(),
            found: h.len(),
        });
    }
    Ok(())
}

/// Signal part of the exact filter output, `t1t2 Σ_n (r1r2)^n x(t − (n+1/4)τ_F)`,
/// on the grid. `τ_F/4` must be a whole number of grid steps.
pub fn exact_time_response(filter: &FilterConfig, window: &SimulationWindow, x: &[f64]) -> Result<Vec<f64>> {
    check_len(window, x)?;
    let (amps, delays) = filter.comb(window)?;
    Ok((0..x.len())
        .map(|i| {
            amps.iter()
                .zip(&delays)
                .take_while(|(_, d)| **d <= i)
                .map(|(a, d)| a * x[i - d])
                .sum()
        })
        .collect())
}
