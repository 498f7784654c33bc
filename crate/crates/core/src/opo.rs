//! Ring-cavity OPO: time-domain propagation of the discretized field, the
//! two-time output kernels, and their continuous-wave closed forms.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{check_finite, check_range, Error, Result};
use crate::field::{CombMatrix, FieldCorrelations, ModeFunction, ModeMoments};
use crate::gaussian::{CovarianceState, ModeKind, ModeLabel, SymplecticMap, ALGEBRAIC_TOL};
use crate::grid::SimulationWindow;

/// Reference round-trip time 2.7 ns.
pub const REFERENCE_TAU: f64 = 2.7e-9;
/// Reference output-mirror power transmission.
pub const REFERENCE_T1_SQ: f64 = 0.127;
/// Reference intracavity loss.
pub const REFERENCE_R2_SQ: f64 = 0.004;

/// Default kernel truncation, relative to the running sum.
pub const DEFAULT_EPS_TRUNC: f64 = 1e-12;

/// Mirror and loss coefficients of the ring cavity together with its sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpoConfig {
    t1: f64,
    r1: f64,
    t2: f64,
    r2: f64,
    tau: f64,
    per_round_trip: usize,
}

impl OpoConfig {
    /// Field coefficients of BS₁ and BS₂, round-trip time in seconds and
    /// samples per round trip.
    pub fn new(t1: f64, r1: f64, t2: f64, r2: f64, tau: f64, per_round_trip: usize) -> Result<Self> {
        for (what, v) in [("t1", t1), ("r1", r1), ("t2", t2), ("r2", r2)] {
            check_range(what, v, 0.0, 1.0)?;
        }
        for (t, r) in [(t1, r1), (t2, r2)] {
            let s = t * t + r * r;
            if (s - 1.0).abs() > ALGEBRAIC_TOL {
                return Err(Error::NotUnitary(s));
            }
        }
        check_finite("tau", tau)?;
        if tau <= 0.0 {
            return Err(Error::OutOfRange {
                what: "tau",
                value: tau,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        if per_round_trip < 4 {
            return Err(Error::Grid(format!(
                "{per_round_trip} samples per round trip, need at least 4"
            )));
        }
        Ok(Self {
            t1,
            r1,
            t2,
            r2,
            tau,
            per_round_trip,
        })
    }

    /// From the output-mirror transmission `t1²` and the intracavity loss `r2²`.
    pub fn from_powers(t1_sq: f64, r2_sq: f64, tau: f64, per_round_trip: usize) -> Result<Self> {
        check_range("t1^2", t1_sq, 0.0, 1.0)?;
        check_range("r2^2", r2_sq, 0.0, 1.0)?;
        Self::new(
            t1_sq.sqrt(),
            (1.0 - t1_sq).sqrt(),
            (1.0 - r2_sq).sqrt(),
            r2_sq.sqrt(),
            tau,
            per_round_trip,
        )
    }

    pub fn reference(per_round_trip: usize) -> Result<Self> {
        Self::from_powers(REFERENCE_T1_SQ, REFERENCE_R2_SQ, REFERENCE_TAU, per_round_trip)
    }

    pub fn with_per_round_trip(&self, per_round_trip: usize) -> Result<Self> {
        Self::new(self.t1, self.r1, self.t2, self.r2, self.tau, per_round_trip)
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    pub fn t2(&self) -> f64 {
        self.t2
    }

    pub fn r2(&self) -> f64 {
        self.r2
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn per_round_trip(&self) -> usize {
        self.per_round_trip
    }

    pub fn dt(&self) -> f64 {
        self.tau / self.per_round_trip as f64
    }

    /// Field amplitude kept per round trip, `r1·t2`.
    pub fn round_trip_amplitude(&self) -> f64 {
        self.r1 * self.t2
    }

    /// `τ/(t1² + r2²)`.
    pub fn photon_lifetime(&self) -> f64 {
        self.tau / (self.t1 * self.t1 + self.r2 * self.r2)
    }

    /// Constant squeezing at which `r1·t2·e^z = 1`.
    pub fn threshold_z(&self) -> f64 {
        -self.round_trip_amplitude().ln()
    }

    pub fn check_below_threshold(&self, z: f64) -> Result<()> {
        let gain = self.round_trip_amplitude() * z.exp();
        if gain >= 1.0 {
            Err(Error::AboveThreshold(gain))
        } else {
            Ok(())
        }
    }
}

/// Squeezing per pass `z(t)` delivered by the pump.
#[derive(Debug, Clone, PartialEq)]
pub enum PumpProfile {
    /// `z(t) = 2s√τ/(π^{1/4}√T_p)·exp(−t²/2T_p²)`; `tp` in seconds.
    GaussianPulse {
        s: f64,
        tp: f64,
    },
    ConstantCw {
        z: f64,
    },
    /// Samples at `t_start + k·dt`, zero outside.
    Tabulated {
        t_start: f64,
        dt: f64,
        values: Vec<f64>,
    },
}

impl PumpProfile {
    pub fn gaussian(s: f64, tp: f64) -> Result<Self> {
        check_range("s", s, 0.0, f64::MAX)?;
        check_finite("T_p", tp)?;
        if tp <= 0.0 {
            return Err(Error::OutOfRange {
                what: "T_p",
                value: tp,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        Ok(Self::GaussianPulse { s, tp })
    }

    pub fn constant(z: f64) -> Result<Self> {
        check_range("z", z, 0.0, f64::MAX)?;
        Ok(Self::ConstantCw { z })
    }

    pub fn tabulated(t_start: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        check_finite("pump table start", t_start)?;
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::Grid(format!("pump table step {dt}")));
        }
        for &v in &values {
            check_range("tabulated z", v, 0.0, f64::MAX)?;
        }
        Ok(Self::Tabulated { t_start, dt, values })
    }

    pub fn z(&self, t: f64, tau: f64) -> f64 {
        match self {
            Self::GaussianPulse { s, tp } => {
                2.0 * s * tau.sqrt() / (PI.powf(0.25) * tp.sqrt()) * (-t * t / (2.0 * tp * tp)).exp()
            }
            Self::ConstantCw { z } => *z,
            Self::Tabulated { t_start, dt, values } => {
                let x = ((t - t_start) / dt).round();
                if x >= 0.0 && (x as usize) < values.len() {
                    values[x as usize]
                } else {
                    0.0
                }
            }
        }
    }

    /// `z` at the grid points (segment centres).
    pub fn samples(&self, window: &SimulationWindow) -> Vec<f64> {
        window.times().map(|t| self.z(t, window.tau())).collect()
    }

    pub fn peak(&self, tau: f64) -> f64 {
        match self {
            Self::GaussianPulse { .. } => self.z(0.0, tau),
            Self::ConstantCw { z } => *z,
            Self::Tabulated { values, .. } => values.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn is_cw(&self) -> bool {
        matches!(self, Self::ConstantCw { .. })
    }

    /// Errors unless the pump has fallen below `1e-3` of its peak at both
    /// ends of the window. Constant pumps always pass.
    pub fn check_support(&self, window: &SimulationWindow) -> Result<()> {
        let tau = window.tau();
        let peak = self.peak(tau);
        if peak == 0.0 {
            return Err(Error::ZeroPump);
        }
        match self {
            Self::ConstantCw { .. } => Ok(()),
            Self::GaussianPulse { .. } => {
                let edge = self
                    .z(window.t_start(), tau)
                    .max(self.z(window.t_end() - window.dt(), tau));
                if edge > 1e-3 * peak {
                    Err(Error::WindowTooShort(format!(
                        "pump is {:.1e} of its peak at the window edge",
                        edge / peak
                    )))
                } else {
                    Ok(())
                }
            }
            Self::Tabulated { t_start, dt, values } => {
                let first = values.iter().position(|&v| v > 0.0).unwrap_or(0);
                let last = values.iter().rposition(|&v| v > 0.0).unwrap_or(0);
                let (a, b) = (t_start + first as f64 * dt, t_start + last as f64 * dt);
                if a < window.t_start() - 0.5 * window.dt() || b > window.t_end() {
                    Err(Error::WindowTooShort(format!(
                        "pump support [{a:e}, {b:e}] exceeds the window"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Time-domain propagation of the discretized cavity.
///
/// The cavity holds one mode per grid segment of the round trip, initially in
/// vacuum. Each step mixes the returning cavity segment with a fresh input
/// segment at BS₁, emits one output segment, applies the mirror phase and the
/// crystal squeezing to the segment that re-enters the cavity, and routes it
/// through BS₂ against a fresh vacuum mode that is discarded right away.
/// Returns the covariance of the output segments `Output(0..len)`.
pub fn propagate(config: &OpoConfig, pump: &PumpProfile, window: &SimulationWindow) -> Result<CovarianceState> {
    check_grid(config, window)?;
    if let PumpProfile::ConstantCw { z } = pump {
        config.check_below_threshold(*z)?;
    } else {
        pump.check_support(window)?;
    }
    let m = config.per_round_trip();
    let k = window.len();
    let z = pump.samples(window);

    let mut labels: Vec<ModeLabel> = (0..m).map(|j| ModeLabel::new(ModeKind::Cavity, j as i64)).collect();
    labels.extend((0..k).map(|i| ModeLabel::new(ModeKind::Input, i as i64)));
    labels.push(ModeLabel::new(ModeKind::Vacuum, -1));
    let mut state = CovarianceState::vacuum(labels)?;
    let scratch = m + k;

    let bs1 = SymplecticMap::beamsplitter(config.t1(), config.r1())?;
    let bs2 = SymplecticMap::beamsplitter(config.t2(), config.r2())?;
    let mirror = SymplecticMap::phase(-PI / 2.0)?;

    for (i, &zi) in z.iter().enumerate() {
        let cavity = ModeLabel::new(ModeKind::Cavity, i as i64);
        let input = ModeLabel::new(ModeKind::Input, i as i64);
        let returning = ModeLabel::new(ModeKind::Cavity, (i + m) as i64);
        let out_pos = state.position(&cavity)?;
        let in_pos = state.position(&input)?;

        state.apply_in_place(&bs1, &[cavity, input])?;
        state.relabel(out_pos, ModeLabel::output(i as i64))?;
        state.relabel(in_pos, returning)?;

        let crystal = SymplecticMap::squeeze(zi)?.compose(&mirror)?;
        state.apply_in_place(&crystal, &[returning])?;
        let vacuum = state.labels()[scratch];
        state.apply_in_place(&bs2, &[returning, vacuum])?;
        state.reset_to_vacuum(scratch);
    }

    let keep: Vec<usize> = (0..k)
        .map(|i| state.position(&ModeLabel::output(i as i64)))
        .collect::<Result<_>>()?;
    Ok(state.select_modes(&keep))
}

fn check_grid(config: &OpoConfig, window: &SimulationWindow) -> Result<()> {
    if window.per_round_trip() != config.per_round_trip() || (window.tau() - config.tau()).abs() > 1e-9 * config.tau() {
        return Err(Error::Grid(format!(
            "window samples τ = {:e} s with M = {}, configuration has τ = {:e} s with M = {}",
            window.tau(),
            window.per_round_trip(),
            config.tau(),
            config.per_round_trip()
        )));
    }
    Ok(())
}

/// How the kernel sums were cut.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelDiagnostics {
    /// Largest lag kept, in round trips.
    pub q_max: usize,
    /// `max_i |c_bdb[q_max][i]| / max_i c_bdb[0][i]`, the size of the last lag kept.
    pub last_lag_ratio: f64,
    /// `r1·t2·exp(max z)`; at or above one the pump is transiently above threshold.
    pub peak_round_trip_gain: f64,
}

/// Delta-comb weights of the output correlations,
/// `<b†(t)b(t')> = Σ_q c_bdb[q](t) δ(t − t' + qτ)`, and likewise for `<bb>`.
///
/// The weights are dimensionless; on the grid they are the discrete moments
/// `c_bdb[q][i] = <b_i† b_{i+qM}>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationKernels {
    window: SimulationWindow,
    bdb: Vec<Vec<f64>>,
    bb: Vec<Vec<f64>>,
    diagnostics: KernelDiagnostics,
}

impl CorrelationKernels {
    pub fn window(&self) -> &SimulationWindow {
        &self.window
    }

    pub fn q_max(&self) -> usize {
        self.bdb.len() - 1
    }

    pub fn diagnostics(&self) -> &KernelDiagnostics {
        &self.diagnostics
    }

    /// `c_bdb[q][i]` for any integer lag; zero beyond truncation or off the window.
    pub fn bdb(&self, q: i64, i: usize) -> f64 {
        self.lookup(&self.bdb, q, i)
    }

    pub fn bb(&self, q: i64, i: usize) -> f64 {
        self.lookup(&self.bb, q, i)
    }

    fn lookup(&self, table: &[Vec<f64>], q: i64, i: usize) -> f64 {
        let m = self.window.per_round_trip() as i64;
        let (lag, start) = if q >= 0 { (q, i as i64) } else { (-q, i as i64 + q * m) };
        if lag as usize >= table.len() || start < 0 {
            return 0.0;
        }
        table[lag as usize].get(start as usize).copied().unwrap_or(0.0)
    }

    pub fn to_field(&self) -> FieldCorrelations {
        let m = self.window.per_round_trip();
        let k = self.window.len();
        let fill = |table: &[Vec<f64>]| {
            CombMatrix::from_fn(k, m, |i, j| {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                let q = (b - a) / m;
                table.get(q).map_or(0.0, |row| row[a])
            })
        };
        FieldCorrelations::new(self.window, fill(&self.bdb), fill(&self.bb)).expect("kernel tables match their window")
    }

    /// `(<b_h†b_h>, <b_h²>)` summed directly over the kernel tables.
    pub fn mode_moments(&self, h: &ModeFunction) -> Result<ModeMoments> {
        if h.window() != &self.window {
            return Err(Error::Grid("mode function lives on another grid".into()));
        }
        let c = h.coefficients();
        let m = self.window.per_round_trip();
        let (mut n, mut a) = (0.0, 0.0);
        for (q, (rn, ra)) in self.bdb.iter().zip(&self.bb).enumerate() {
            let w = if q == 0 { 1.0 } else { 2.0 };
            for i in 0..rn.len() {
                let j = i + q * m;
                if j >= c.len() {
                    break;
                }
                n += w * c[i] * c[j] * rn[i];
                a += w * c[i] * c[j] * ra[i];
            }
        }
        Ok(ModeMoments {
            number: n,
            anomalous: a,
        })
    }
}

/// Output kernels for an arbitrary pump, with the pump taken as zero before
/// the window starts.
///
/// For the later time `t_j = t_i + qτ`, with `Z_k(j) = Σ_{k'=1..k} z(t_j − k'τ)`
/// and `ρ = r1·t2`,
///
/// ```text
/// <b_i† b_j> = t1²t2²(1−ρ²) Σ_m ρ^{q+2m} sinh Z_{q+m+1}(j) · sinh Z_{m+1}(i)
/// <b_i  b_j> = t1²t2²(1−ρ²) Σ_m ρ^{q+2m} cosh Z_{q+m+1}(j) · sinh Z_{m+1}(i)
/// ```
///
/// Once the partial sums reach the window start they stop changing, so the
/// remaining geometric series in `m` is summed exactly. Lags are kept up to
/// `ln(eps_trunc)/ln ρ` round trips.
pub fn kernel_pulsed(
    config: &OpoConfig,
    pump: &PumpProfile,
    window: &SimulationWindow,
    eps_trunc: f64,
) -> Result<CorrelationKernels> {
    check_grid(config, window)?;
    if !(eps_trunc > 0.0 && eps_trunc < 1.0) {
        return Err(Error::OutOfRange {
            what: "eps_trunc",
            value: eps_trunc,
            min: 0.0,
            max: 1.0,
        });
    }
    let z = pump.samples(window);
    kernel_from_samples(config, window, &z, eps_trunc)
}

pub(crate) fn kernel_from_samples(
    config: &OpoConfig,
    window: &SimulationWindow,
    z: &[f64],
    eps_trunc: f64,
) -> Result<CorrelationKernels> {
    let m = config.per_round_trip();
    let k = window.len();
    let rho = config.round_trip_amplitude();
    let pref = config.t1().powi(2) * config.t2().powi(2) * (1.0 - rho * rho);
    let z_max = z.iter().copied().fold(0.0, f64::max);
    for (i, &zi) in z.iter().enumerate() {
        if !zi.is_finite() {
            return Err(Error::NonFinite {
                what: "pump sample",
                value: z[i],
            });
        }
    }

    let window_lags = if k == 0 { 0 } else { (k - 1) / m };
    let q_cap = if rho == 0.0 {
        0
    } else {
        (eps_trunc.ln() / rho.ln()).ceil() as usize
    };
    let q_max = window_lags.min(q_cap);

    // Partial sums Z_k(i) for k = 0..=L_i, where L_i = floor(i/M) reaches the window start.
    let rounds = |i: usize| i / m;
    let mut sh: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut ch: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let l = rounds(i);
        let mut acc = 0.0;
        let mut s = Vec::with_capacity(l + 1);
        let mut c = Vec::with_capacity(l + 1);
        s.push(0.0);
        c.push(1.0);
        for kk in 1..=l {
            acc += z[i - kk * m];
            if !acc.is_finite() {
                return Err(Error::NonFinite {
                    what: "partial squeezing sum",
                    value: acc,
                });
            }
            s.push(acc.sinh());
            c.push(acc.cosh());
        }
        sh.push(s);
        ch.push(c);
    }
    let at = |table: &Vec<f64>, kk: usize| table[kk.min(table.len() - 1)];
    let rho2 = rho * rho;
    let tail = if rho2 < 1.0 { 1.0 / (1.0 - rho2) } else { f64::INFINITY };

    let mut bdb = Vec::with_capacity(q_max + 1);
    let mut bb = Vec::with_capacity(q_max + 1);
    for q in 0..=q_max {
        let len = k - q * m;
        let mut row_n = vec![0.0; len];
        let mut row_a = vec![0.0; len];
        let rq = rho.powi(q as i32);
        for i in 0..len {
            let j = i + q * m;
            let (shj, chj, shi) = (&sh[j], &ch[j], &sh[i]);
            // Both partial sums saturate once m + 1 ≥ L_i.
            let sat = (shi.len() - 1).saturating_sub(1);
            let (mut n, mut a) = (0.0, 0.0);
            let mut w = rq;
            for mm in 0..sat {
                n += w * at(shj, q + mm + 1) * shi[mm + 1];
                a += w * at(chj, q + mm + 1) * shi[mm + 1];
                w *= rho2;
            }
            if w > 0.0 {
                let s_late = at(shj, q + sat + 1);
                let c_late = at(chj, q + sat + 1);
                let s_early = at(shi, sat + 1);
                n += w * tail * s_late * s_early;
                a += w * tail * c_late * s_early;
            }
            row_n[i] = pref * n;
            row_a[i] = pref * a;
        }
        bdb.push(row_n);
        bb.push(row_a);
    }

    let peak0 = bdb[0].iter().copied().fold(0.0, f64::max);
    let last = bdb[q_max].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let diagnostics = KernelDiagnostics {
        q_max,
        last_lag_ratio: if peak0 > 0.0 { last / peak0 } else { 0.0 },
        peak_round_trip_gain: rho * z_max.exp(),
    };
    Ok(CorrelationKernels {
        window: *window,
        bdb,
        bb,
        diagnostics,
    })
}

/// Stationary kernels of a constant pump in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwKernels {
    config: OpoConfig,
    z: f64,
}

impl CwKernels {
    pub fn new(config: &OpoConfig, z: f64) -> Result<Self> {
        check_range("z", z, 0.0, f64::MAX)?;
        config.check_below_threshold(z)?;
        Ok(Self { config: *config, z })
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn config(&self) -> &OpoConfig {
        &self.config
    }

    fn parts(&self, q: i64) -> (f64, f64, f64, f64, f64) {
        let c = &self.config;
        let rho = c.round_trip_amplitude();
        let rho2 = rho * rho;
        let z = self.z;
        let aq = q.unsigned_abs() as f64;
        let pre = c.t1().powi(2) * c.t2().powi(2) / 4.0 * rho.powf(aq);
        let up = (1.0 - rho2) / (1.0 - rho2 * (2.0 * z).exp()) * ((2.0 + aq) * z).exp();
        let down = (1.0 - rho2) / (1.0 - rho2 * (-2.0 * z).exp()) * (-(2.0 + aq) * z).exp();
        (pre, up, down, (aq * z).exp(), (-aq * z).exp())
    }

    /// Weight of `δ(t − t' − qτ)` in `<b†(t)b(t')>`.
    pub fn bdb(&self, q: i64) -> f64 {
        let (pre, up, down, ep, em) = self.parts(q);
        if self.z == 0.0 {
            return 0.0;
        }
        pre * (up + down - ep - em)
    }

    /// Weight of `δ(t − t' − qτ)` in `<b(t)b(t')>`.
    pub fn bb(&self, q: i64) -> f64 {
        let (pre, up, down, ep, em) = self.parts(q);
        if self.z == 0.0 {
            return 0.0;
        }
        pre * (up - down - ep + em)
    }

    /// Photon flux in the degenerate resonance, `c_bdb(0)/τ` in s⁻¹.
    pub fn degenerate_flux(&self) -> f64 {
        self.bdb(0) / self.config.tau()
    }

    /// Number of lags needed before `|c(q)|` falls below `eps` of `c(0)`.
    pub fn lag_cutoff(&self, eps: f64) -> usize {
        let g = self.config.round_trip_amplitude() * self.z.exp();
        if g <= 0.0 {
            return 0;
        }
        ((eps.ln() / g.ln()).ceil().max(0.0) as usize).max(1)
    }

    /// Tiles the stationary kernels on a window.
    pub fn field(&self, window: &SimulationWindow, eps: f64) -> Result<FieldCorrelations> {
        check_grid(&self.config, window)?;
        let m = window.per_round_trip();
        let cut = self.lag_cutoff(eps) as i64;
        let n: Vec<f64> = (0..=cut).map(|q| self.bdb(q)).collect();
        let a: Vec<f64> = (0..=cut).map(|q| self.bb(q)).collect();
        let fill = |table: &[f64]| {
            CombMatrix::from_fn(window.len(), m, |i, j| {
                let q = i.abs_diff(j) / m;
                table.get(q).copied().unwrap_or(0.0)
            })
        };
        FieldCorrelations::new(*window, fill(&n), fill(&a))
    }
}

/// Cavity lifetime from the decay of the CW output autocorrelation
/// `c(q) = <b†(t)b(t + qτ)>` at half the threshold squeezing.
///
/// `c(q)` is a sum of two exponentials, one per squeezed quadrature, so it
/// obeys `c(q+2) = a·c(q+1) + b·c(q)`. The recurrence is fitted by least
/// squares over lags `0..=lags` (Prony's method); `−b` is the product of the
/// two per-round-trip decays, which is the field loss `d²` per round trip,
/// and the lifetime is `τ/(1 − d²)`.
pub fn fit_photon_lifetime(config: &OpoConfig, lags: usize) -> Result<f64> {
    if lags < 3 {
        return Err(Error::OutOfRange {
            what: "lifetime fit lags",
            value: lags as f64,
            min: 3.0,
            max: f64::INFINITY,
        });
    }
    let kernels = CwKernels::new(config, 0.5 * config.threshold_z())?;
    let c0 = kernels.bdb(0);
    let c: Vec<f64> = (0..=lags as i64)
        .map(|q| kernels.bdb(q) / c0)
        .take_while(|v| v.abs() > 1e-12)
        .collect();
    if c.len() < 4 {
        return Err(Error::WindowTooShort(
            "autocorrelation vanishes before the fit range".into(),
        ));
    }
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for w in c.windows(3) {
        s11 += w[1] * w[1];
        s12 += w[1] * w[0];
        s22 += w[0] * w[0];
        r1 += w[2] * w[1];
        r2 += w[2] * w[0];
    }
    let det = s11 * s22 - s12 * s12;
    let b = (s11 * r2 - s12 * r1) / det;
    Ok(config.tau() / (1.0 + b))
}

/// `ρ = r1 t2` sets the closed-form kernels; `z` is bisected so that the
/// degenerate-mode flux equals `target` photons per second.
pub fn calibrate_cw_flux(config: &OpoConfig, target: f64) -> Result<f64> {
    check_finite("target flux", target)?;
    if target <= 0.0 {
        return Err(Error::OutOfRange {
            what: "target flux",
            value: target,
            min: 0.0,
            max: f64::INFINITY,
        });
    }
    let mut lo = 0.0;
    let mut hi = config.threshold_z() * (1.0 - 1e-12);
    let flux = |z: f64| CwKernels::new(config, z).map(|k| k.degenerate_flux());
    if flux(hi)? < target {
        return Err(Error::AboveThreshold(config.round_trip_amplitude() * hi.exp()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if flux(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Output power spectrum `<b†(ω)b(ω')> = S(ω) δ(ω − ω')` of a constant pump,
/// with `ω` measured from the degenerate frequency.
pub fn spectrum_cw(config: &OpoConfig, z: f64, omegas: &[f64]) -> Result<Vec<f64>> {
    config.check_below_threshold(z)?;
    let rho = config.round_trip_amplitude();
    // Factored as |1 − ρe^{z+iωτ}|²|1 − ρe^{−z+iωτ}|² with 1 − ρe^{±z} from
    // expm1, which keeps the short round-trip limit accurate.
    let ln_rho = 0.5 * ((-config.t1().powi(2)).ln_1p() + (-config.r2().powi(2)).ln_1p());
    let gap_up = -(ln_rho + z).exp_m1();
    let gap_down = -(ln_rho - z).exp_m1();
    let num = config.t1().powi(2) * config.t2().powi(2) * -(2.0 * ln_rho).exp_m1() * z.sinh().powi(2);
    Ok(omegas
        .iter()
        .map(|&w| {
            let s2 = (0.5 * w * config.tau()).sin().powi(2);
            let up = gap_up * gap_up + 4.0 * rho * z.exp() * s2;
            let down = gap_down * gap_down + 4.0 * rho * (-z).exp() * s2;
            num / (up * down)
        })
        .collect())
}

/// Output photon-number spectrum of the single-mode degenerate OPO with
/// power decay rates `gamma1` (output coupler) and `gamma2` (loss) and
/// squeezing rate `eps`, all in s⁻¹:
/// `S(ω) = (γ1ε/2)[1/((γ/2 − ε)² + ω²) − 1/((γ/2 + ε)² + ω²)]`, `γ = γ1 + γ2`.
pub fn spectrum_single_mode(gamma1: f64, gamma2: f64, eps: f64, omegas: &[f64]) -> Result<Vec<f64>> {
    let half = 0.5 * (gamma1 + gamma2);
    if eps >= half {
        return Err(Error::AboveThreshold(eps / half));
    }
    Ok(omegas
        .iter()
        .map(|&w| 0.5 * gamma1 * eps * (1.0 / ((half - eps).powi(2) + w * w) - 1.0 / ((half + eps).powi(2) + w * w)))
        .collect())
}

/// Bogoliubov coefficients of the output at detuning `omega` from the degenerate
/// frequency: `b(ω) = G1 a(ω) + g1 a†(−ω) + G2 v(ω) + g2 v†(−ω)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyResponse {
    pub big_g1: Complex64,
    pub g1: Complex64,
    pub big_g2: Complex64,
    pub g2: Complex64,
}

impl FrequencyResponse {
    /// `|G1|² + |G2|² − |g1|² − |g2|²`, equal to one for a valid transformation.
    pub fn bogoliubov_norm(&self) -> f64 {
        self.big_g1.norm_sqr() + self.big_g2.norm_sqr() - self.g1.norm_sqr() - self.g2.norm_sqr()
    }
}

pub fn frequency_response(config: &OpoConfig, z: f64, omega: f64) -> Result<FrequencyResponse> {
    config.check_below_threshold(z)?;
    let rho = config.round_trip_amplitude();
    let (t1, r1, t2, r2) = (config.t1(), config.r1(), config.t2(), config.r2());
    let g = |w: f64, sign: f64| {
        let up = Complex64::new(z, w * config.tau()).exp();
        let down = Complex64::new(-z, w * config.tau()).exp();
        up / (1.0 - rho * up) + sign * down / (1.0 - rho * down)
    };
    let i = Complex64::i();
    let gp = g(omega, 1.0);
    let gm = g(omega, -1.0);
    Ok(FrequencyResponse {
        big_g1: i * r1 - i * (t1 * t1 * t2 / 2.0) * gp,
        g1: -(t1 * t1 * t2 / 2.0) * gm,
        big_g2: i * t1 * r2 + i * (t1 * r1 * t2 * r2 / 2.0) * gp,
        g2: (t1 * r1 * t2 * r2 / 2.0) * gm,
    })
}

/// Smallest eigenpair of the discretized variance kernel `I + 2(N ± M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezedMode {
    /// Quadrature variance in vacuum units.
    pub variance: f64,
    pub mode: ModeFunction,
    /// Set when the second-smallest eigenvalue is within `1e-10` of the smallest.
    pub degenerate: bool,
}

/// Sign selecting `<b†b> + <bb>` (x quadrature) or `<b†b> − <bb>` (p quadrature).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    X,
    P,
}

/// Most squeezed mode of the output. The kernel couples only samples a whole
/// number of round trips apart, so each residue class is diagonalized
/// separately and the result is a spike comb.
pub fn squeezing_eigenmode(field: &FieldCorrelations, quadrature: Quadrature) -> Result<SqueezedMode> {
    let window = *field.window();
    let m = window.per_round_trip();
    if window.len() < m {
        return Err(Error::WindowTooShort(
            "the window must span at least one round trip".into(),
        ));
    }
    let sign = match quadrature {
        Quadrature::X => 1.0,
        Quadrature::P => -1.0,
    };
    let kernel = field.number().combine(1.0, field.anomalous(), sign);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut all = Vec::new();
    for (r, block) in kernel.blocks().iter().enumerate() {
        let n = block.nrows();
        let v = DMatrix::identity(n, n) + block * 2.0;
        let v = 0.5 * (&v + v.transpose());
        let eig = v.symmetric_eigen();
        let (idx, lam) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc });
        all.extend(eig.eigenvalues.iter().copied());
        if best.as_ref().is_none_or(|b| lam < b.0) {
            best = Some((lam, r, eig.eigenvectors.column(idx).iter().copied().collect()));
        }
    }
    let (lam, r, vec) = best.expect("at least one residue class");
    all.sort_by(|a, b| a.total_cmp(b));
    let degenerate = all.len() > 1 && (all[1] - all[0]).abs() < 1e-10;
    let mut coeffs = vec![0.0; window.len()];
    for (a, v) in vec.iter().enumerate() {
        coeffs[r + a * m] = *v;
    }
    // Fix the overall sign so the largest spike is positive.
    let big = coeffs
        .iter()
        .copied()
        .fold(0.0, |acc: f64, c| if c.abs() > acc.abs() { c } else { acc });
    if big < 0.0 {
        coeffs.iter_mut().for_each(|c| *c = -*c);
    }
    Ok(SqueezedMode {
        variance: lam,
        mode: ModeFunction::from_coefficients(window, coeffs)?,
        degenerate,
    })
}
