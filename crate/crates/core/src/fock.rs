//! Truncated Fock-space density matrices for a few modes, used as a
//! brute-force reference for the Gaussian machinery.
//!
//! Quadratures follow the Gaussian convention `x = (d + d†)/√2`,
//! `p = (d − d†)/(i√2)`, so the vacuum covariance is the identity.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{check_finite, check_range, Error, Result};
use crate::gaussian::{CovarianceState, ModeLabel, ALGEBRAIC_TOL};

pub const DEFAULT_CUTOFF: usize = 12;
/// Trace that a single operation may push past the cutoff.
pub const GATE_LOSS_BUDGET: f64 = 1e-6;
/// Target trace loss of an adaptive run.
pub const ADAPTIVE_LOSS_TARGET: f64 = 1e-8;
/// Largest Hilbert-space dimension the oracle accepts.
pub const MAX_DIMENSION: usize = 4096;

type C = Complex64;

/// Gaussian operations with the same conventions as the symplectic maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FockGate {
    /// `d → cosh(z) d + sinh(z) d†`.
    Squeeze { mode: usize, z: f64 },
    /// `d → e^{iθ} d`.
    Phase { mode: usize, theta: f64 },
    /// `a → t a + i r b`, `b → i r a + t b`.
    Beamsplitter { modes: (usize, usize), t: f64, r: f64 },
    /// `a → cosh(r) a + sinh(r) b†`, and symmetrically for `b`.
    TwoModeSqueeze { modes: (usize, usize), r: f64 },
    /// Power transmittance `eta` against vacuum.
    Loss { mode: usize, eta: f64 },
}

/// Density matrix over the product basis `|n_0, …, n_{k−1}⟩`, `n_j ≤ cutoff`,
/// with mode 0 the most significant digit.
#[derive(Debug, Clone, PartialEq)]
pub struct FockDensity {
    modes: usize,
    cutoff: usize,
    rho: DMatrix<C>,
}

impl FockDensity {
    pub fn vacuum(modes: usize, cutoff: usize) -> Result<Self> {
        Self::number_state(&vec![0; modes], cutoff)
    }

    pub fn number_state(photons: &[usize], cutoff: usize) -> Result<Self> {
        let modes = photons.len();
        let dim = checked_dim(modes, cutoff)?;
        if let Some(&n) = photons.iter().find(|&&n| n > cutoff) {
            return Err(Error::OutOfRange {
                what: "photon number",
                value: n as f64,
                min: 0.0,
                max: cutoff as f64,
            });
        }
        let idx = photons.iter().fold(0, |acc, &n| acc * (cutoff + 1) + n);
        let mut rho = DMatrix::zeros(dim, dim);
        rho[(idx, idx)] = C::new(1.0, 0.0);
        Ok(Self { modes, cutoff, rho })
    }

    /// Single-mode thermal state with mean photon number `mean`.
    pub fn thermal(mean: f64, cutoff: usize) -> Result<Self> {
        check_range("thermal mean photon number", mean, 0.0, f64::MAX)?;
        let dim = checked_dim(1, cutoff)?;
        let ratio = mean / (1.0 + mean);
        let rho = DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                C::new(ratio.powi(i as i32) / (1.0 + mean), 0.0)
            } else {
                C::new(0.0, 0.0)
            }
        });
        Ok(Self { modes: 1, cutoff, rho })
    }

    /// Pure state from amplitudes over the product basis (normalized here).
    pub fn from_ket(modes: usize, cutoff: usize, ket: &[C]) -> Result<Self> {
        let dim = checked_dim(modes, cutoff)?;
        if ket.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: ket.len(),
            });
        }
        let v = DVector::from_column_slice(ket);
        let norm = v.norm();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::NotNormalized(norm * norm));
        }
        let v = v / C::new(norm, 0.0);
        Ok(Self {
            modes,
            cutoff,
            rho: &v * v.adjoint(),
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn matrix(&self) -> &DMatrix<C> {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    /// Weight pushed beyond the cutoff so far.
    pub fn trace_loss(&self) -> f64 {
        1.0 - self.trace()
    }

    /// Hermitian, positive semidefinite within `tol` and trace in `[1 − ε, 1 + tol]`.
    pub fn is_valid(&self, eps: f64, tol: f64) -> bool {
        let herm = (&self.rho - self.rho.adjoint())
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        if herm > tol {
            return false;
        }
        let tr = self.trace();
        if tr < 1.0 - eps || tr > 1.0 + tol {
            return false;
        }
        let h = (&self.rho + self.rho.adjoint()) * C::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().all(|&e| e >= -tol)
    }

    /// Same state on a larger cutoff.
    pub fn with_cutoff(&self, cutoff: usize) -> Result<Self> {
        if cutoff < self.cutoff {
            return Err(Error::Config("cutoff can only grow".into()));
        }
        let dim = checked_dim(self.modes, cutoff)?;
        let map: Vec<usize> = (0..self.rho.nrows())
            .map(|i| {
                let digits = self.digits(i);
                digits.iter().fold(0, |acc, &n| acc * (cutoff + 1) + n)
            })
            .collect();
        let mut rho = DMatrix::zeros(dim, dim);
        for (a, &ia) in map.iter().enumerate() {
            for (b, &ib) in map.iter().enumerate() {
                rho[(ia, ib)] = self.rho[(a, b)];
            }
        }
        Ok(Self {
            modes: self.modes,
            cutoff,
            rho,
        })
    }

    fn digits(&self, mut idx: usize) -> Vec<usize> {
        let d = self.cutoff + 1;
        let mut out = vec![0; self.modes];
        for slot in out.iter_mut().rev() {
            *slot = idx % d;
            idx /= d;
        }
        out
    }

    /// Applies one Gaussian operation. Fails if more than
    /// [`GATE_LOSS_BUDGET`] of the trace leaves the truncated space.
    pub fn apply_gaussian(&self, gate: FockGate) -> Result<Self> {
        let before = self.trace();
        let rho = match gate {
            FockGate::Loss { mode, eta } => {
                check_mode(self.modes, mode)?;
                check_range("eta", eta, 0.0, 1.0)?;
                self.apply_loss(mode, eta)
            }
            FockGate::Phase { mode, theta } => {
                check_mode(self.modes, mode)?;
                check_finite("phase", theta)?;
                let n: Vec<f64> = (0..self.rho.nrows()).map(|i| self.digits(i)[mode] as f64).collect();
                DMatrix::from_fn(self.rho.nrows(), self.rho.ncols(), |i, j| {
                    self.rho[(i, j)] * C::from_polar(1.0, theta * (n[i] - n[j]))
                })
            }
            _ => {
                let (targets, local) = gate_operator(self.modes, self.cutoff, gate)?;
                let left = apply_local(&self.rho, &local, &targets, self.modes, self.cutoff);
                apply_local(&left.adjoint(), &local, &targets, self.modes, self.cutoff)
            }
        };
        let out = Self {
            modes: self.modes,
            cutoff: self.cutoff,
            rho: hermitian_part(rho),
        };
        let lost = before - out.trace();
        if lost > GATE_LOSS_BUDGET {
            return Err(Error::TruncationLoss(lost));
        }
        Ok(out)
    }

    /// `Σ_k K_k ρ K_k†` with `K_k|n⟩ = √(C(n,k) η^{n−k} (1−η)^k) |n−k⟩`,
    /// evaluated entry by entry.
    fn apply_loss(&self, mode: usize, eta: f64) -> DMatrix<C> {
        let d = self.cutoff + 1;
        let dim = self.rho.nrows();
        let stride = d.pow((self.modes - 1 - mode) as u32);
        let n: Vec<usize> = (0..dim).map(|i| self.digits(i)[mode]).collect();
        let amp = |m: usize, k: usize| (binomial(m + k, k) * eta.powi(m as i32) * (1.0 - eta).powi(k as i32)).sqrt();
        DMatrix::from_fn(dim, dim, |i, j| {
            let top = d - 1 - n[i].max(n[j]);
            (0..=top)
                .map(|k| self.rho[(i + k * stride, j + k * stride)] * (amp(n[i], k) * amp(n[j], k)))
                .sum()
        })
    }

    /// `f ρ f†` for `f = Σ c_j d_j`, not renormalized.
    pub fn annihilate(&self, coeffs: &[(usize, f64)]) -> Result<Self> {
        let d = self.cutoff + 1;
        let dim = self.rho.nrows();
        let mut f = DMatrix::<C>::zeros(dim, dim);
        for &(mode, c) in coeffs {
            check_mode(self.modes, mode)?;
            check_finite("annihilation coefficient", c)?;
            let stride = d.pow((self.modes - 1 - mode) as u32);
            for col in 0..dim {
                let n = (col / stride) % d;
                if n > 0 {
                    f[(col - stride, col)] += C::new(c * (n as f64).sqrt(), 0.0);
                }
            }
        }
        let rho = &f * &self.rho * f.adjoint();
        Ok(Self {
            modes: self.modes,
            cutoff: self.cutoff,
            rho: hermitian_part(rho),
        })
    }

    /// `d ρ d† / Tr(d ρ d†)` on one mode.
    pub fn subtract_photon(&self, mode: usize) -> Result<Self> {
        check_mode(self.modes, mode)?;
        if self.mean_photon(mode)? <= 1e-12 {
            return Err(Error::VacuumMode(mode));
        }
        let mut out = self.annihilate(&[(mode, 1.0)])?;
        let tr = out.trace();
        out.rho /= C::new(tr, 0.0);
        Ok(out)
    }

    /// Reduced state of the listed modes, in the listed order.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        for &m in keep {
            check_mode(self.modes, m)?;
        }
        let mut seen = keep.to_vec();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != keep.len() || keep.is_empty() {
            return Err(Error::Config("partial trace needs distinct modes to keep".into()));
        }
        let d = self.cutoff + 1;
        let kept_dim = d.pow(keep.len() as u32);
        let dim = self.rho.nrows();
        let reduce = |idx: usize| -> (usize, Vec<usize>) {
            let digits = self.digits(idx);
            let k = keep.iter().fold(0, |acc, &m| acc * d + digits[m]);
            let rest = (0..self.modes)
                .filter(|m| !keep.contains(m))
                .map(|m| digits[m])
                .collect();
            (k, rest)
        };
        let parts: Vec<(usize, Vec<usize>)> = (0..dim).map(reduce).collect();
        let mut rho = DMatrix::zeros(kept_dim, kept_dim);
        for a in 0..dim {
            for b in 0..dim {
                if parts[a].1 == parts[b].1 {
                    rho[(parts[a].0, parts[b].0)] += self.rho[(a, b)];
                }
            }
        }
        Ok(Self {
            modes: keep.len(),
            cutoff: self.cutoff,
            rho,
        })
    }

    /// Photon-number distribution of one mode (unnormalized if the trace is short).
    pub fn photon_distribution(&self, mode: usize) -> Result<Vec<f64>> {
        let reduced = self.partial_trace(&[mode])?;
        Ok((0..=self.cutoff).map(|n| reduced.rho[(n, n)].re).collect())
    }

    pub fn mean_photon(&self, mode: usize) -> Result<f64> {
        Ok(self
            .photon_distribution(mode)?
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum())
    }

    /// `W(0,0) = (1/π) Σ (−1)^n ρ_nn` of one mode after tracing out the
    /// others, relative to the current trace.
    pub fn wigner_origin(&self, mode: usize) -> Result<f64> {
        let p = self.photon_distribution(mode)?;
        let parity: f64 = p
            .iter()
            .enumerate()
            .map(|(n, v)| if n % 2 == 0 { *v } else { -v })
            .sum();
        Ok(parity / (PI * self.trace()))
    }

    /// Expectation of a product of ladder operators, applied right to left.
    fn expect(&self, ops: &[Ladder]) -> C {
        let d = self.cutoff + 1;
        let dim = self.rho.nrows();
        let mut total = C::new(0.0, 0.0);
        'basis: for n in 0..dim {
            let mut idx = n;
            let mut amp = 1.0;
            for op in ops.iter().rev() {
                let stride = d.pow((self.modes - 1 - op.mode) as u32);
                let k = (idx / stride) % d;
                if op.raise {
                    if k == self.cutoff {
                        continue 'basis;
                    }
                    amp *= ((k + 1) as f64).sqrt();
                    idx += stride;
                } else {
                    if k == 0 {
                        continue 'basis;
                    }
                    amp *= (k as f64).sqrt();
                    idx -= stride;
                }
            }
            // Tr(ρ O) = Σ_n ρ_{n, O n} · amp
            total += self.rho[(n, idx)] * amp;
        }
        total / C::new(self.trace(), 0.0)
    }

    /// `(⟨x_j⟩, ⟨p_j⟩)` for every mode.
    pub fn mean_quadratures(&self) -> Vec<f64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        (0..self.modes)
            .flat_map(|m| {
                let a = self.expect(&[Ladder::lower(m)]);
                [2.0 * s * a.re, 2.0 * s * a.im]
            })
            .collect()
    }

    /// Symmetrized second moments `V = ⟨yyᵀ⟩ + ⟨yyᵀ⟩ᵀ` over modes labeled
    /// `Output(0..modes)`.
    pub fn covariance(&self) -> Result<CovarianceState> {
        let n = 2 * self.modes;
        let mut v = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = C::new(0.0, 0.0);
                for (ci, oi) in quadrature_terms(i) {
                    for (cj, oj) in quadrature_terms(j) {
                        let w = ci * cj;
                        acc += w * (self.expect(&[oi, oj]) + self.expect(&[oj, oi]));
                    }
                }
                v[(i, j)] = acc.re;
                v[(j, i)] = acc.re;
            }
        }
        CovarianceState::from_parts(v, (0..self.modes as i64).map(ModeLabel::output).collect())
    }
}

fn check_mode(modes: usize, mode: usize) -> Result<()> {
    if mode >= modes {
        return Err(Error::DimensionMismatch {
            expected: modes,
            found: mode + 1,
        });
    }
    Ok(())
}

fn check_pair(modes: usize, a: usize, b: usize) -> Result<()> {
    check_mode(modes, a)?;
    check_mode(modes, b)?;
    if a == b {
        return Err(Error::Config("two-mode gate needs distinct modes".into()));
    }
    Ok(())
}

fn gate_operator(modes: usize, cutoff: usize, gate: FockGate) -> Result<(Vec<usize>, DMatrix<C>)> {
    let d = cutoff + 1;
    // Generators are exponentiated on a larger space and then cut back,
    // so only the genuinely escaping weight is lost.
    let big = 2 * cutoff + 16;
    match gate {
        FockGate::Squeeze { mode, z } => {
            check_mode(modes, mode)?;
            check_finite("squeezing z", z)?;
            let n = big + 1;
            let mut g = Vec::new();
            for k in 0..n - 2 {
                // (z/2)(d†² − d²)
                let amp = 0.5 * z * (((k + 1) * (k + 2)) as f64).sqrt();
                g.push((k + 2, k, C::new(amp, 0.0)));
                g.push((k, k + 2, C::new(-amp, 0.0)));
            }
            let u = exp_by_blocks(n, &g, |i| i % 2, |i| (i < d).then_some(i), d);
            Ok((vec![mode], u))
        }
        FockGate::Phase { mode, theta } => {
            check_mode(modes, mode)?;
            check_finite("phase", theta)?;
            let u = DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    C::from_polar(1.0, theta * i as f64)
                } else {
                    C::new(0.0, 0.0)
                }
            });
            Ok((vec![mode], u))
        }
        FockGate::Beamsplitter { modes: (a, b), t, r } => {
            check_pair(modes, a, b)?;
            check_range("beam splitter t", t, 0.0, 1.0)?;
            check_range("beam splitter r", r, 0.0, 1.0)?;
            if (t * t + r * r - 1.0).abs() > ALGEBRAIC_TOL {
                return Err(Error::NotUnitary(t * t + r * r));
            }
            let theta = r.atan2(t);
            // iθ(a†b + ab†); total photon number is conserved.
            let g = two_mode_generator(big, |n1, n2| {
                let mut out = Vec::new();
                if n2 > 0 {
                    let amp = ((n1 + 1) as f64 * n2 as f64).sqrt();
                    out.push(((n1 + 1, n2 - 1), C::new(0.0, theta * amp)));
                }
                if n1 > 0 {
                    let amp = (n1 as f64 * (n2 + 1) as f64).sqrt();
                    out.push(((n1 - 1, n2 + 1), C::new(0.0, theta * amp)));
                }
                out
            });
            let n = big + 1;
            let u = exp_by_blocks(n * n, &g, |i| i / n + i % n, two_mode_keep(big, cutoff), d * d);
            Ok((vec![a, b], u))
        }
        FockGate::TwoModeSqueeze { modes: (a, b), r } => {
            check_pair(modes, a, b)?;
            check_finite("two-mode squeezing", r)?;
            // r(a†b† − ab); the photon-number difference is conserved.
            let g = two_mode_generator(big, |n1, n2| {
                let mut out = Vec::new();
                let up = ((n1 + 1) as f64 * (n2 + 1) as f64).sqrt();
                out.push(((n1 + 1, n2 + 1), C::new(r * up, 0.0)));
                if n1 > 0 && n2 > 0 {
                    let down = (n1 as f64 * n2 as f64).sqrt();
                    out.push(((n1 - 1, n2 - 1), C::new(-r * down, 0.0)));
                }
                out
            });
            let n = big + 1;
            let u = exp_by_blocks(n * n, &g, |i| (i / n + n) - i % n, two_mode_keep(big, cutoff), d * d);
            Ok((vec![a, b], u))
        }
        FockGate::Loss { .. } => unreachable!("loss is not unitary"),
    }
}

/// Runs a gate sequence from vacuum, starting at [`DEFAULT_CUTOFF`] and
/// growing the cutoff by half until the trace loss is below
/// [`ADAPTIVE_LOSS_TARGET`].
pub fn run_adaptive(modes: usize, gates: &[FockGate]) -> Result<FockDensity> {
    let mut cutoff = DEFAULT_CUTOFF;
    loop {
        let loss = match run_at_cutoff(modes, cutoff, gates) {
            Ok(state) if state.trace_loss() < ADAPTIVE_LOSS_TARGET => return Ok(state),
            Ok(state) => state.trace_loss(),
            Err(Error::TruncationLoss(loss)) => loss,
            Err(e) => return Err(e),
        };
        let next = cutoff + cutoff.div_ceil(2);
        if checked_dim(modes, next).is_err() {
            return Err(Error::TruncationLoss(loss));
        }
        cutoff = next;
    }
}

/// The unitary prefix of the sequence runs on a state vector, the rest on
/// the density matrix.
fn run_at_cutoff(modes: usize, cutoff: usize, gates: &[FockGate]) -> Result<FockDensity> {
    let dim = checked_dim(modes, cutoff)?;
    let mut ket = DMatrix::zeros(dim, 1);
    ket[(0, 0)] = C::new(1.0, 0.0);
    let unitary = gates.iter().take_while(|g| !matches!(g, FockGate::Loss { .. })).count();
    for &gate in &gates[..unitary] {
        let before = ket.norm_squared();
        let (targets, local) = gate_operator(modes, cutoff, gate)?;
        ket = apply_local(&ket, &local, &targets, modes, cutoff);
        let lost = before - ket.norm_squared();
        if lost > GATE_LOSS_BUDGET {
            return Err(Error::TruncationLoss(lost));
        }
    }
    let mut state = FockDensity {
        modes,
        cutoff,
        rho: &ket * ket.adjoint(),
    };
    for &gate in &gates[unitary..] {
        state = state.apply_gaussian(gate)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy)]
struct Ladder {
    mode: usize,
    raise: bool,
}

impl Ladder {
    fn lower(mode: usize) -> Self {
        Self { mode, raise: false }
    }
    fn raise(mode: usize) -> Self {
        Self { mode, raise: true }
    }
}

/// Quadrature `i` (even x, odd p of mode `i/2`) as ladder operators.
fn quadrature_terms(i: usize) -> [(C, Ladder); 2] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let m = i / 2;
    if i.is_multiple_of(2) {
        [(C::new(s, 0.0), Ladder::lower(m)), (C::new(s, 0.0), Ladder::raise(m))]
    } else {
        // (d − d†)/(i√2) = −i d/√2 + i d†/√2
        [(C::new(0.0, -s), Ladder::lower(m)), (C::new(0.0, s), Ladder::raise(m))]
    }
}

fn checked_dim(modes: usize, cutoff: usize) -> Result<usize> {
    if modes == 0 {
        return Err(Error::EmptyState);
    }
    let dim = (cutoff + 1).checked_pow(modes as u32).filter(|&d| d <= MAX_DIMENSION);
    dim.ok_or_else(|| Error::Config(format!("Fock space of {modes} modes at cutoff {cutoff} is too large")))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn hermitian_part(m: DMatrix<C>) -> DMatrix<C> {
    (&m + m.adjoint()) * C::new(0.5, 0.0)
}

/// Sparse generator entries `(row, col, value)` on two modes with cutoff
/// `big`, from the image of each basis state.
fn two_mode_generator(big: usize, image: impl Fn(usize, usize) -> Vec<((usize, usize), C)>) -> Vec<(usize, usize, C)> {
    let n = big + 1;
    let mut g = Vec::new();
    for n1 in 0..n {
        for n2 in 0..n {
            for ((m1, m2), amp) in image(n1, n2) {
                if m1 < n && m2 < n {
                    g.push((m1 * n + m2, n1 * n + n2, amp));
                }
            }
        }
    }
    g
}

/// `exp(G)` restricted to the basis states for which `keep` gives an index,
/// for a sparse generator that only couples states with equal `key`.
fn exp_by_blocks(
    dim: usize,
    entries: &[(usize, usize, C)],
    key: impl Fn(usize) -> usize,
    keep: impl Fn(usize) -> Option<usize>,
    kept: usize,
) -> DMatrix<C> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..dim {
        groups.entry(key(i)).or_default().push(i);
    }
    let mut position = vec![0; dim];
    for idx in groups.values() {
        for (a, &i) in idx.iter().enumerate() {
            position[i] = a;
        }
    }
    let mut blocks: BTreeMap<usize, DMatrix<C>> = groups
        .iter()
        .map(|(k, idx)| (*k, DMatrix::zeros(idx.len(), idx.len())))
        .collect();
    for &(r, c, v) in entries {
        let k = key(r);
        debug_assert_eq!(k, key(c), "generator couples different blocks");
        blocks.get_mut(&k).expect("block exists")[(position[r], position[c])] += v;
    }
    let mut out = DMatrix::zeros(kept, kept);
    for (k, idx) in &groups {
        if idx.iter().all(|&i| keep(i).is_none()) {
            continue;
        }
        let e = blocks[k].exp();
        for (a, &ia) in idx.iter().enumerate() {
            let Some(ra) = keep(ia) else { continue };
            for (b, &ib) in idx.iter().enumerate() {
                if let Some(rb) = keep(ib) {
                    out[(ra, rb)] = e[(a, b)];
                }
            }
        }
    }
    out
}

/// Index in the small two-mode space of a state of the large one, if kept.
fn two_mode_keep(big: usize, cutoff: usize) -> impl Fn(usize) -> Option<usize> {
    let (n, d) = (big + 1, cutoff + 1);
    move |i| {
        let (n1, n2) = (i / n, i % n);
        (n1 < d && n2 < d).then_some(n1 * d + n2)
    }
}

/// `L ρ` with `L` acting on `targets` (one or two modes) of a product space.
fn apply_local(rho: &DMatrix<C>, local: &DMatrix<C>, targets: &[usize], modes: usize, cutoff: usize) -> DMatrix<C> {
    let d = cutoff + 1;
    let dim = rho.nrows();
    let strides: Vec<usize> = targets.iter().map(|&m| d.pow((modes - 1 - m) as u32)).collect();
    let local_dim = local.nrows();
    // Base indices with all target digits zero.
    let bases: Vec<usize> = (0..dim)
        .filter(|&i| strides.iter().all(|&s| (i / s) % d == 0))
        .collect();
    let offsets: Vec<usize> = (0..local_dim)
        .map(|k| {
            let mut rem = k;
            let mut off = 0;
            for &s in strides.iter().rev() {
                off += (rem % d) * s;
                rem /= d;
            }
            off
        })
        .collect();
    let mut out = DMatrix::zeros(dim, rho.ncols());
    let mut block = DMatrix::zeros(local_dim, rho.ncols());
    for &base in &bases {
        for (k, &off) in offsets.iter().enumerate() {
            block.row_mut(k).copy_from(&rho.row(base + off));
        }
        let y = local * &block;
        for (k, &off) in offsets.iter().enumerate() {
            out.row_mut(base + off).copy_from(&y.row(k));
        }
    }
    out
}
