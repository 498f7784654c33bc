//! Second moments of the OPO output field and temporal mode functions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{CovarianceState, ModeKind, ModeLabel, PROPAGATION_TOL};
use crate::grid::SimulationWindow;

/// Symmetric matrix on the grid whose entries vanish unless the two indices
/// differ by a whole number of round trips. It is stored as one dense block
/// per residue class `i mod M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombMatrix {
    period: usize,
    len: usize,
    blocks: Vec<DMatrix<f64>>,
}

impl CombMatrix {
    pub fn zeros(len: usize, period: usize) -> Self {
        let blocks = (0..period)
            .map(|r| {
                let n = class_len(len, period, r);
                DMatrix::zeros(n, n)
            })
            .collect();
        Self { period, len, blocks }
    }

    pub fn from_fn(len: usize, period: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(len, period);
        for (r, block) in m.blocks.iter_mut().enumerate() {
            let n = block.nrows();
            for a in 0..n {
                for b in 0..n {
                    block[(a, b)] = f(r + a * period, r + b * period);
                }
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let p = self.period;
        if i % p != j % p {
            0.0
        } else {
            self.blocks[i % p][(i / p, j / p)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let p = self.period;
        assert_eq!(i % p, j % p, "entry off the comb");
        self.blocks[i % p][(i / p, j / p)] = value;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let p = self.period;
        let mut out = vec![0.0; self.len];
        for (r, block) in self.blocks.iter().enumerate() {
            let xr = DVector::from_iterator(block.nrows(), x[r..].iter().step_by(p).copied());
            let yr = block * xr;
            for (a, v) in yr.iter().enumerate() {
                out[r + a * p] = *v;
            }
        }
        out
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `alpha·self + beta·other`.
    pub fn combine(&self, alpha: f64, other: &CombMatrix, beta: f64) -> CombMatrix {
        assert_eq!(self.period, other.period);
        assert_eq!(self.len, other.len);
        CombMatrix {
            period: self.period,
            len: self.len,
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a * alpha + b * beta)
                .collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len, self.len, |i, j| self.get(i, j))
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(|b| b.amax()).fold(0.0, f64::max)
    }
}

fn class_len(len: usize, period: usize, r: usize) -> usize {
    if r >= len {
        0
    } else {
        (len - r).div_ceil(period)
    }
}

/// Normally ordered moments `N_ij = <b_i† b_j>` and `M_ij = <b_i b_j>` of the
/// discretized output modes `b_i = b(t_i)√Δt`, in the real-field convention.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldCorrelations {
    window: SimulationWindow,
    number: CombMatrix,
    anomalous: CombMatrix,
}

impl FieldCorrelations {
    pub fn new(window: SimulationWindow, number: CombMatrix, anomalous: CombMatrix) -> Result<Self> {
        for m in [&number, &anomalous] {
            if m.len() != window.len() || m.period() != window.per_round_trip() {
                return Err(Error::DimensionMismatch {
                    expected: window.len(),
                    found: m.len(),
                });
            }
        }
        Ok(Self {
            window,
            number,
            anomalous,
        })
    }

    /// Reads the moments off a covariance over `Output(0..len)` modes.
    /// Only entries on the round-trip comb are kept.
    pub fn from_covariance(window: SimulationWindow, state: &CovarianceState) -> Result<Self> {
        let pos: Vec<usize> = (0..window.len())
            .map(|i| state.position(&ModeLabel::new(ModeKind::Output, i as i64)))
            .collect::<Result<_>>()?;
        let v = state.matrix();
        let p = window.per_round_trip();
        let number = CombMatrix::from_fn(window.len(), p, |i, j| {
            let (a, b) = (pos[i], pos[j]);
            let vac = if i == j { 2.0 } else { 0.0 };
            (v[(2 * a, 2 * b)] + v[(2 * a + 1, 2 * b + 1)] - vac) / 4.0
        });
        let anomalous = CombMatrix::from_fn(window.len(), p, |i, j| {
            let (a, b) = (pos[i], pos[j]);
            (v[(2 * a, 2 * b)] - v[(2 * a + 1, 2 * b + 1)]) / 4.0
        });
        Self::new(window, number, anomalous)
    }

    pub fn window(&self) -> &SimulationWindow {
        &self.window
    }

    pub fn number(&self) -> &CombMatrix {
        &self.number
    }

    pub fn anomalous(&self) -> &CombMatrix {
        &self.anomalous
    }

    /// `N + M`, the normally ordered x-quadrature correlations (halved).
    pub fn x_kernel(&self) -> CombMatrix {
        self.number.combine(1.0, &self.anomalous, 1.0)
    }

    /// `N − M`.
    pub fn p_kernel(&self) -> CombMatrix {
        self.number.combine(1.0, &self.anomalous, -1.0)
    }

    /// Total photon number in the window, `Σ_i N_ii`.
    pub fn total_photons(&self) -> f64 {
        (0..self.window.len()).map(|i| self.number.get(i, i)).sum()
    }

    /// Mean photon number `<b_h† b_h>` and `<b_h²>` of the mode `b_h = Σ h_i b_i`.
    pub fn mode_moments(&self, h: &ModeFunction) -> Result<ModeMoments> {
        if h.window() != &self.window {
            return Err(Error::Grid("mode function lives on another grid".into()));
        }
        Ok(ModeMoments {
            number: self.number.quadratic_form(h.coefficients()),
            anomalous: self.anomalous.quadratic_form(h.coefficients()),
        })
    }
}

/// `n = <b†b>` and `m = <b²>` of one mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeMoments {
    pub number: f64,
    pub anomalous: f64,
}

impl ModeMoments {
    /// x-quadrature variance in vacuum units, `1 + 2n + 2m`.
    pub fn x_variance(&self) -> f64 {
        1.0 + 2.0 * self.number + 2.0 * self.anomalous
    }

    pub fn p_variance(&self) -> f64 {
        1.0 + 2.0 * self.number - 2.0 * self.anomalous
    }
}

/// Real, unit-norm temporal mode on a simulation grid.
///
/// Stored as the coefficients `c_i = h(t_i)√Δt` of the discrete modes, so
/// `Σ c_i² = ∫ h² dt = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFunction {
    window: SimulationWindow,
    coeffs: Vec<f64>,
}

impl ModeFunction {
    /// Normalizes arbitrary non-zero coefficients.
    pub fn from_coefficients(window: SimulationWindow, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != window.len() {
            return Err(Error::DimensionMismatch {
                expected: window.len(),
                found: coeffs.len(),
            });
        }
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::NotNormalized(norm * norm));
        }
        Ok(Self {
            window,
            coeffs: coeffs.into_iter().map(|c| c / norm).collect(),
        })
    }

    /// From samples of `h(t)` in s^-1/2; normalized on the grid.
    pub fn from_amplitudes(window: SimulationWindow, amplitudes: &[f64]) -> Result<Self> {
        let s = window.dt().sqrt();
        Self::from_coefficients(window, amplitudes.iter().map(|a| a * s).collect())
    }

    /// Accepts coefficients that are already normalized to 1e-9.
    pub fn normalized(window: SimulationWindow, coeffs: Vec<f64>) -> Result<Self> {
        let norm: f64 = coeffs.iter().map(|c| c * c).sum();
        if (norm - 1.0).abs() > PROPAGATION_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Self::from_coefficients(window, coeffs)
    }

    pub fn window(&self) -> &SimulationWindow {
        &self.window
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// `h(t_i)` in s^-1/2.
    pub fn amplitudes(&self) -> Vec<f64> {
        let s = self.window.dt().sqrt();
        self.coeffs.iter().map(|c| c / s).collect()
    }

    pub fn overlap(&self, other: &ModeFunction) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    /// Amplitude-weighted mean time `Σ c_i² t_i`.
    pub fn mean_time(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * c * self.window.time(i))
            .sum()
    }

    pub fn peak_time(&self) -> f64 {
        let (i, _) =
            self.coeffs.iter().enumerate().fold(
                (0, f64::MIN),
                |acc, (i, c)| if c.abs() > acc.1 { (i, c.abs()) } else { acc },
            );
        self.window.time(i)
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coeffs
    }
}
