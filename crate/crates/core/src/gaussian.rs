//! Zero-mean Gaussian states over labeled modes.
//!
//! Quadratures are ordered `(x_1, p_1, x_2, p_2, ...)` with
//! `x = (d + d†)/√2` and `p = -i(d - d†)/√2`. The covariance matrix is
//! `V = <y yᵀ> + <y yᵀ>ᵀ`, so the vacuum is the identity.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, Matrix2, Matrix4};

use crate::error::{check_finite, check_range, Error, Result};

/// Tolerance for exact algebraic identities.
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Tolerance for quantities accumulated over many propagation steps.
pub const PROPAGATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModeKind {
    Input,
    Cavity,
    Vacuum,
    Output,
    Filter,
    Lost,
}

/// Names one light-beam segment: what it is and which grid slot it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeLabel {
    pub kind: ModeKind,
    pub time_index: i64,
}

impl ModeLabel {
    pub fn new(kind: ModeKind, time_index: i64) -> Self {
        Self { kind, time_index }
    }

    pub fn output(time_index: i64) -> Self {
        Self::new(ModeKind::Output, time_index)
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}[{}]", self.kind, self.time_index)
    }
}

/// The standard symplectic form on `n` modes.
pub fn symplectic_form(n: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        omega[(2 * i, 2 * i + 1)] = 1.0;
        omega[(2 * i + 1, 2 * i)] = -1.0;
    }
    omega
}

/// A linear symplectic transformation `y -> S y` on the quadratures of a few modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMap {
    matrix: DMatrix<f64>,
}

impl SymplecticMap {
    /// Wraps a matrix, checking `S Ω Sᵀ = Ω` to [`ALGEBRAIC_TOL`].
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let dim = matrix.nrows();
        if dim == 0 || !dim.is_multiple_of(2) || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: 2 * (dim / 2).max(1),
                found: matrix.ncols(),
            });
        }
        let map = Self { matrix };
        let residual = map.symplectic_residual();
        if residual > ALGEBRAIC_TOL * 10.0 {
            return Err(Error::Config(format!(
                "matrix is not symplectic (residual {residual:e})"
            )));
        }
        Ok(map)
    }

    /// Single-mode squeezer `d -> cosh(z) d + sinh(z) d†`: x is stretched by
    /// `e^z` and p compressed by `e^-z`.
    pub fn squeeze(z: f64) -> Result<Self> {
        check_finite("squeezing z", z)?;
        Ok(Self {
            matrix: DMatrix::from_row_slice(2, 2, &[z.exp(), 0.0, 0.0, (-z).exp()]),
        })
    }

    /// Phase shift `d -> e^{iθ} d`, a rotation in phase space.
    pub fn phase(theta: f64) -> Result<Self> {
        check_finite("phase", theta)?;
        let (s, c) = theta.sin_cos();
        Ok(Self {
            matrix: DMatrix::from_row_slice(2, 2, &[c, -s, s, c]),
        })
    }

    /// Lossless beam splitter on modes `(m1, m2)`:
    /// `m1' = t m1 + i r m2`, `m2' = i r m1 + t m2`.
    ///
    /// The factor `i` on the reflected amplitude is a quarter-turn rotation
    /// of that mode's quadratures.
    pub fn beamsplitter(t: f64, r: f64) -> Result<Self> {
        check_range("beam splitter t", t, 0.0, 1.0)?;
        check_range("beam splitter r", r, 0.0, 1.0)?;
        let norm = t * t + r * r;
        if (norm - 1.0).abs() > ALGEBRAIC_TOL {
            return Err(Error::NotUnitary(norm));
        }
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 4, &[
            t,   0.0, 0.0, -r,
            0.0, t,   r,   0.0,
            0.0, -r,  t,   0.0,
            r,   0.0, 0.0, t,
        ]);
        Ok(Self { matrix: m })
    }

    /// Two-mode squeezer `a -> cosh(r) a + sinh(r) b†`, `b -> cosh(r) b + sinh(r) a†`.
    pub fn two_mode_squeeze(r: f64) -> Result<Self> {
        check_finite("two-mode squeezing", r)?;
        let (c, s) = (r.cosh(), r.sinh());
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 4, &[
            c,   0.0, s,   0.0,
            0.0, c,   0.0, -s,
            s,   0.0, c,   0.0,
            0.0, -s,  0.0, c,
        ]);
        Ok(Self { matrix: m })
    }

    /// Embeds independent single- or multi-mode maps side by side.
    pub fn direct_sum(maps: &[&SymplecticMap]) -> Self {
        let dim: usize = maps.iter().map(|m| m.dim()).sum();
        let mut matrix = DMatrix::zeros(dim, dim);
        let mut offset = 0;
        for m in maps {
            let d = m.dim();
            matrix.view_mut((offset, offset), (d, d)).copy_from(&m.matrix);
            offset += d;
        }
        Self { matrix }
    }

    pub fn compose(&self, first: &SymplecticMap) -> Result<Self> {
        if self.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: first.dim(),
            });
        }
        Ok(Self {
            matrix: &self.matrix * &first.matrix,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn modes(&self) -> usize {
        self.dim() / 2
    }

    /// `‖S Ω Sᵀ − Ω‖∞`.
    pub fn symplectic_residual(&self) -> f64 {
        let omega = symplectic_form(self.modes());
        (&self.matrix * &omega * self.matrix.transpose() - omega).amax()
    }
}

/// Covariance matrix of a zero-mean Gaussian state with labeled modes.
#[derive(Debug, Clone)]
pub struct CovarianceState {
    matrix: DMatrix<f64>,
    labels: Vec<ModeLabel>,
    index: HashMap<ModeLabel, usize>,
}

fn build_index(labels: &[ModeLabel]) -> Result<HashMap<ModeLabel, usize>> {
    let mut index = HashMap::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        if index.insert(*l, i).is_some() {
            return Err(Error::DuplicateLabel(*l));
        }
    }
    Ok(index)
}

impl CovarianceState {
    /// All modes in vacuum, `V = I`.
    pub fn vacuum(labels: Vec<ModeLabel>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyState);
        }
        let index = build_index(&labels)?;
        let n = labels.len();
        Ok(Self {
            matrix: DMatrix::identity(2 * n, 2 * n),
            labels,
            index,
        })
    }

    /// Wraps an existing covariance matrix. Symmetry is checked, physicality is not.
    pub fn from_parts(matrix: DMatrix<f64>, labels: Vec<ModeLabel>) -> Result<Self> {
        if matrix.nrows() != 2 * labels.len() || matrix.ncols() != 2 * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: 2 * labels.len(),
                found: matrix.nrows(),
            });
        }
        let index = build_index(&labels)?;
        let state = Self { matrix, labels, index };
        if !state.is_symmetric(ALGEBRAIC_TOL) {
            return Err(Error::Config("covariance matrix is not symmetric".into()));
        }
        Ok(state)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn labels(&self) -> &[ModeLabel] {
        &self.labels
    }

    pub fn n_modes(&self) -> usize {
        self.labels.len()
    }

    pub fn position(&self, label: &ModeLabel) -> Result<usize> {
        self.index.get(label).copied().ok_or(Error::UnknownLabel(*label))
    }

    /// The 2×2 covariance block of one mode.
    pub fn block(&self, label: &ModeLabel) -> Result<Matrix2<f64>> {
        let i = self.position(label)?;
        Ok(self.matrix.fixed_view::<2, 2>(2 * i, 2 * i).into_owned())
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.matrix.amax().max(1.0);
        (&self.matrix - self.matrix.transpose()).amax() <= rel_tol * scale
    }

    /// Symplectic eigenvalues in ascending order, or `None` when `V` is not
    /// positive definite.
    pub fn symplectic_eigenvalues(&self) -> Option<Vec<f64>> {
        if self.matrix.nrows() == 0 {
            return Some(Vec::new());
        }
        let sym = 0.5 * (&self.matrix + self.matrix.transpose());
        let eig = sym.clone().symmetric_eigen();
        if eig.eigenvalues.min() <= 0.0 {
            return None;
        }
        let sqrt_diag = eig.eigenvalues.map(f64::sqrt);
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_diag) * eig.eigenvectors.transpose();
        let omega = symplectic_form(self.n_modes());
        let product = &root * omega.transpose() * &sym * &omega * &root;
        let product = 0.5 * (&product + product.transpose());
        let mut nu2: Vec<f64> = product.symmetric_eigen().eigenvalues.iter().copied().collect();
        nu2.sort_by(|a, b| a.total_cmp(b));
        Some(nu2.iter().step_by(2).map(|v| v.max(0.0).sqrt()).collect())
    }

    /// `V + iΩ ⪰ 0`, checked through the symplectic spectrum.
    pub fn is_physical(&self, tol: f64) -> bool {
        self.is_symmetric(ALGEBRAIC_TOL)
            && self
                .symplectic_eigenvalues()
                .is_some_and(|nu| nu.iter().all(|&v| v >= 1.0 - tol))
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }

    fn quadrature_indices(&self, targets: &[ModeLabel]) -> Result<Vec<usize>> {
        let mut seen = Vec::with_capacity(targets.len());
        for t in targets {
            let i = self.position(t)?;
            if seen.contains(&i) {
                return Err(Error::DuplicateLabel(*t));
            }
            seen.push(i);
        }
        Ok(seen.iter().flat_map(|&i| [2 * i, 2 * i + 1]).collect())
    }

    /// `V -> S V Sᵀ` with `S` acting on `targets` (in order) and the identity elsewhere.
    pub fn apply(&self, map: &SymplecticMap, targets: &[ModeLabel]) -> Result<Self> {
        let mut out = self.clone();
        out.apply_in_place(map, targets)?;
        Ok(out)
    }

    pub(crate) fn apply_in_place(&mut self, map: &SymplecticMap, targets: &[ModeLabel]) -> Result<()> {
        if map.modes() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: map.modes(),
                found: targets.len(),
            });
        }
        let q = self.quadrature_indices(targets)?;
        apply_local(&mut self.matrix, map.matrix(), &q);
        Ok(())
    }

    /// Pure loss with power transmittance `eta`: `B -> ηB + (1-η)I`, cross terms scaled by `√η`.
    pub fn attenuate(&self, label: &ModeLabel, eta: f64) -> Result<Self> {
        let mut out = self.clone();
        out.attenuate_in_place(label, eta)?;
        Ok(out)
    }

    pub(crate) fn attenuate_in_place(&mut self, label: &ModeLabel, eta: f64) -> Result<()> {
        check_range("transmittance", eta, 0.0, 1.0)?;
        let i = self.position(label)?;
        let g = eta.sqrt();
        for q in [2 * i, 2 * i + 1] {
            self.matrix.row_mut(q).scale_mut(g);
            self.matrix.column_mut(q).scale_mut(g);
            self.matrix[(q, q)] += 1.0 - eta;
        }
        Ok(())
    }

    /// Traces out the listed modes.
    pub fn discard(&self, labels: &[ModeLabel]) -> Result<Self> {
        let mut drop = vec![false; self.n_modes()];
        for l in labels {
            drop[self.position(l)?] = true;
        }
        let keep: Vec<usize> = (0..self.n_modes()).filter(|&i| !drop[i]).collect();
        Ok(self.select_modes(&keep))
    }

    /// Keeps only the listed mode positions, in the given order.
    pub(crate) fn select_modes(&self, keep: &[usize]) -> Self {
        let q: Vec<usize> = keep.iter().flat_map(|&i| [2 * i, 2 * i + 1]).collect();
        let matrix = DMatrix::from_fn(q.len(), q.len(), |a, b| self.matrix[(q[a], q[b])]);
        let labels: Vec<ModeLabel> = keep.iter().map(|&i| self.labels[i]).collect();
        let index = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        Self { matrix, labels, index }
    }

    pub(crate) fn reset_to_vacuum(&mut self, pos: usize) {
        for q in [2 * pos, 2 * pos + 1] {
            self.matrix.row_mut(q).fill(0.0);
            self.matrix.column_mut(q).fill(0.0);
            self.matrix[(q, q)] = 1.0;
        }
    }

    pub(crate) fn relabel(&mut self, pos: usize, label: ModeLabel) -> Result<()> {
        let old = self.labels[pos];
        if old == label {
            return Ok(());
        }
        if self.index.contains_key(&label) {
            return Err(Error::DuplicateLabel(label));
        }
        self.index.remove(&old);
        self.index.insert(label, pos);
        self.labels[pos] = label;
        Ok(())
    }

    fn weights(&self, coeffs: &[(ModeLabel, f64)], require_output: bool) -> Result<Vec<(usize, f64)>> {
        coeffs
            .iter()
            .map(|(l, c)| {
                check_finite("mode coefficient", *c)?;
                if require_output && l.kind != ModeKind::Output {
                    return Err(Error::NotOutputMode(*l));
                }
                Ok((self.position(l)?, *c))
            })
            .collect()
    }

    /// 2×2 covariance of the collective mode `Σ c_j d_j`. A norm below one is
    /// completed with vacuum.
    pub fn collective_block(&self, coeffs: &[(ModeLabel, f64)]) -> Result<Matrix2<f64>> {
        let w = self.weights(coeffs, false)?;
        let norm: f64 = w.iter().map(|(_, c)| c * c).sum();
        if norm > 1.0 + PROPAGATION_TOL {
            return Err(Error::NotNormalized(norm));
        }
        let quads = [quadrature_weights(&w, 0), quadrature_weights(&w, 1)];
        Ok(Matrix2::from_fn(|a, b| {
            normally_ordered(&self.matrix, &quads[a], &quads[b]) + if a == b { 1.0 } else { 0.0 }
        }))
    }

    /// Joint covariance of a trigger mode and a signal mode, both supported on
    /// output modes. The trigger coefficients may have norm below one and the
    /// signal coefficients must be normalized.
    ///
    /// The two collective modes are taken to commute (they live in different
    /// arms after the tap), so cross terms carry only normally ordered moments.
    pub fn extract_joint(&self, trigger: &[(ModeLabel, f64)], signal: &[(ModeLabel, f64)]) -> Result<JointModePair> {
        let wt = self.weights(trigger, true)?;
        let ws = self.weights(signal, true)?;
        let nt: f64 = wt.iter().map(|(_, c)| c * c).sum();
        let ns: f64 = ws.iter().map(|(_, c)| c * c).sum();
        if nt > 1.0 + PROPAGATION_TOL {
            return Err(Error::NotNormalized(nt));
        }
        if (ns - 1.0).abs() > PROPAGATION_TOL {
            return Err(Error::NotNormalized(ns));
        }
        let quads = [
            quadrature_weights(&wt, 0),
            quadrature_weights(&wt, 1),
            quadrature_weights(&ws, 0),
            quadrature_weights(&ws, 1),
        ];
        let m = Matrix4::from_fn(|a, b| {
            normally_ordered(&self.matrix, &quads[a], &quads[b]) + if a == b { 1.0 } else { 0.0 }
        });
        JointModePair::new(m)
    }
}

fn quadrature_weights(w: &[(usize, f64)], offset: usize) -> Vec<(usize, f64)> {
    w.iter().map(|&(i, c)| (2 * i + offset, c)).collect()
}

// aᵀ (V − I) b for sparse weight vectors.
fn normally_ordered(v: &DMatrix<f64>, a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut acc = 0.0;
    for &(i, ca) in a {
        for &(j, cb) in b {
            let vac = if i == j { 1.0 } else { 0.0 };
            acc += ca * cb * (v[(i, j)] - vac);
        }
    }
    acc
}

/// In-place `V -> S V Sᵀ` where `S` acts on the quadrature rows/columns `q`.
pub(crate) fn apply_local(v: &mut DMatrix<f64>, s: &DMatrix<f64>, q: &[usize]) {
    let k = q.len();
    let n = v.ncols();
    let rows = DMatrix::from_fn(k, n, |a, c| v[(q[a], c)]);
    let rows = s * rows;
    for a in 0..k {
        for c in 0..n {
            v[(q[a], c)] = rows[(a, c)];
        }
    }
    let cols = DMatrix::from_fn(n, k, |r, a| v[(r, q[a])]);
    let cols = cols * s.transpose();
    for (a, &col) in q.iter().enumerate() {
        v.column_mut(col).copy_from(&cols.column(a));
    }
}

/// Covariance of a (trigger, signal) pair of modes; quadratures 0,1 belong to
/// the trigger mode and 2,3 to the signal mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointModePair {
    matrix: Matrix4<f64>,
}

impl JointModePair {
    pub fn new(matrix: Matrix4<f64>) -> Result<Self> {
        let scale = matrix.amax().max(1.0);
        if (matrix - matrix.transpose()).amax() > ALGEBRAIC_TOL * scale {
            return Err(Error::Config("joint covariance is not symmetric".into()));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn trigger_block(&self) -> Matrix2<f64> {
        self.matrix.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn signal_block(&self) -> Matrix2<f64> {
        self.matrix.fixed_view::<2, 2>(2, 2).into_owned()
    }

    pub fn as_state(&self) -> CovarianceState {
        let labels = vec![ModeLabel::new(ModeKind::Filter, 0), ModeLabel::output(0)];
        let matrix = DMatrix::from_iterator(4, 4, self.matrix.iter().copied());
        CovarianceState::from_parts(matrix, labels).expect("validated on construction")
    }

    /// Wigner function of the signal mode at the phase-space origin after a
    /// photon has been annihilated in the trigger mode.
    ///
    /// Assumes the real-field convention: no x–p correlations.
    pub fn wigner_origin_conditional(&self) -> Result<f64> {
        let v = &self.matrix;
        let trig = v[(0, 0)] + v[(1, 1)] - 2.0;
        if trig <= ALGEBRAIC_TOL {
            return Err(Error::ZeroTriggerProbability);
        }
        let (v33, v44) = (v[(2, 2)], v[(3, 3)]);
        let (v13, v24) = (v[(0, 2)], v[(1, 3)]);
        let num = v33 * v44 * trig - v33 * v24 * v24 - v44 * v13 * v13;
        Ok(num / (PI * (v33 * v44).powf(1.5) * trig))
    }
}

/// Mean photon number of a single-mode block, `(V11 + V22 − 2)/4`.
pub fn mean_photon(block: &Matrix2<f64>) -> f64 {
    (block[(0, 0)] + block[(1, 1)] - 2.0) / 4.0
}

/// Unconditional Wigner value at the origin of a single-mode zero-mean state.
pub fn wigner_origin(block: &Matrix2<f64>) -> f64 {
    1.0 / (PI * block.determinant().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn labels(n: usize) -> Vec<ModeLabel> {
        (0..n as i64).map(ModeLabel::output).collect()
    }

    #[test]
    fn vacuum_is_identity() {
        let s = CovarianceState::vacuum(labels(1)).unwrap();
        assert_eq!(s.matrix(), &DMatrix::identity(2, 2));
        let s = CovarianceState::vacuum(labels(3)).unwrap();
        assert_eq!(s.matrix(), &DMatrix::identity(6, 6));
        assert!(s.is_physical(PROPAGATION_TOL));
        assert_eq!(CovarianceState::vacuum(vec![]).unwrap_err(), Error::EmptyState);
        let dup = vec![ModeLabel::output(1), ModeLabel::output(1)];
        assert!(matches!(CovarianceState::vacuum(dup), Err(Error::DuplicateLabel(_))));
    }

    #[test]
    fn squeeze_map_properties() {
        assert_eq!(SymplecticMap::squeeze(0.0).unwrap().matrix(), &DMatrix::identity(2, 2));
        for z in [-0.7, 0.05, 1.3] {
            let s = SymplecticMap::squeeze(z).unwrap();
            assert_relative_eq!(s.matrix().determinant(), 1.0, epsilon = 1e-14);
            assert!(s.symplectic_residual() < ALGEBRAIC_TOL);
        }
        assert!(SymplecticMap::squeeze(f64::NAN).is_err());
        let v = CovarianceState::vacuum(labels(1)).unwrap();
        let sq = v.apply(&SymplecticMap::squeeze(0.05).unwrap(), &labels(1)).unwrap();
        assert_relative_eq!(sq.matrix()[(0, 0)], 0.1f64.exp(), epsilon = 1e-14);
        assert_relative_eq!(sq.matrix()[(1, 1)], (-0.1f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn successive_squeezes_add() {
        let l = labels(1);
        let v = CovarianceState::vacuum(l.clone()).unwrap();
        let a = v
            .apply(&SymplecticMap::squeeze(0.2).unwrap(), &l)
            .unwrap()
            .apply(&SymplecticMap::squeeze(0.35).unwrap(), &l)
            .unwrap();
        let b = v.apply(&SymplecticMap::squeeze(0.55).unwrap(), &l).unwrap();
        assert!((a.matrix() - b.matrix()).amax() < 1e-13);
    }

    #[test]
    fn beamsplitter_checks() {
        let bs = SymplecticMap::beamsplitter(1.0, 0.0).unwrap();
        assert_eq!(bs.matrix(), &DMatrix::identity(4, 4));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bs = SymplecticMap::beamsplitter(h, h).unwrap();
        assert!(bs.symplectic_residual() < ALGEBRAIC_TOL);
        assert!(matches!(
            SymplecticMap::beamsplitter(0.8, 0.8),
            Err(Error::NotUnitary(_))
        ));
        // conjugate phases undo the splitter: (t, -ir) is the inverse of (t, ir)
        let l = labels(2);
        let sq = CovarianceState::vacuum(l.clone())
            .unwrap()
            .apply(&SymplecticMap::squeeze(0.4).unwrap(), &l[1..])
            .unwrap();
        let there = sq.apply(&bs, &l).unwrap();
        let inverse = SymplecticMap::new(bs.matrix().transpose()).unwrap();
        let back = there.apply(&inverse, &l).unwrap();
        assert!((back.matrix() - sq.matrix()).amax() < 1e-13);
    }

    #[test]
    fn loss_limits() {
        let l = labels(2);
        let tms = CovarianceState::vacuum(l.clone())
            .unwrap()
            .apply(&SymplecticMap::two_mode_squeeze(0.3).unwrap(), &l)
            .unwrap();
        let same = tms.attenuate(&l[0], 1.0).unwrap();
        assert!((same.matrix() - tms.matrix()).amax() < 1e-15);
        let dead = tms.attenuate(&l[0], 0.0).unwrap();
        assert_eq!(dead.block(&l[0]).unwrap(), Matrix2::identity());
        for j in 0..4 {
            if j > 1 {
                assert_eq!(dead.matrix()[(0, j)], 0.0);
                assert_eq!(dead.matrix()[(1, j)], 0.0);
            }
        }
        assert!(tms.attenuate(&l[0], 1.2).is_err());
    }

    #[test]
    fn loss_equals_splitter_and_discard() {
        let l = labels(1);
        let sq = CovarianceState::vacuum(l.clone())
            .unwrap()
            .apply(&SymplecticMap::squeeze(0.6).unwrap(), &l)
            .unwrap();
        let lossy = sq.attenuate(&l[0], 0.7).unwrap();
        let anc = ModeLabel::new(ModeKind::Vacuum, 0);
        let mut m = DMatrix::identity(4, 4);
        m.view_mut((0, 0), (2, 2)).copy_from(sq.matrix());
        let joint = CovarianceState::from_parts(m, vec![l[0], anc]).unwrap();
        let bs = SymplecticMap::beamsplitter(0.7f64.sqrt(), 0.3f64.sqrt()).unwrap();
        let split = joint.apply(&bs, &[l[0], anc]).unwrap().discard(&[anc]).unwrap();
        assert!((split.matrix() - lossy.matrix()).amax() < 1e-12);
    }

    #[test]
    fn discard_cases() {
        let l = labels(2);
        let state = CovarianceState::vacuum(l.clone())
            .unwrap()
            .apply(&SymplecticMap::squeeze(0.3).unwrap(), &l[1..])
            .unwrap();
        let reduced = state.discard(&l[..1]).unwrap();
        assert_eq!(reduced.block(&l[1]).unwrap(), state.block(&l[1]).unwrap());
        let tms = CovarianceState::vacuum(l.clone())
            .unwrap()
            .apply(&SymplecticMap::two_mode_squeeze(0.4).unwrap(), &l)
            .unwrap();
        let arm = tms.discard(&l[..1]).unwrap();
        let c = (0.8f64).cosh();
        assert_relative_eq!(arm.matrix()[(0, 0)], c, epsilon = 1e-14);
        assert_relative_eq!(arm.matrix()[(1, 1)], c, epsilon = 1e-14);
        let none = tms.discard(&l).unwrap();
        assert_eq!(none.n_modes(), 0);
        assert!(matches!(
            tms.discard(&[ModeLabel::output(9)]),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn joint_extraction_two_mode_squeezed() {
        let l = labels(2);
        let r = 0.35;
        let tms = CovarianceState::vacuum(l.clone())
            .unwrap()
            .apply(&SymplecticMap::two_mode_squeeze(r).unwrap(), &l)
            .unwrap();
        let j = tms.extract_joint(&[(l[0], 1.0)], &[(l[1], 1.0)]).unwrap();
        let (c, s) = ((2.0 * r).cosh(), (2.0 * r).sinh());
        #[rustfmt::skip]
        let expect = Matrix4::new(
            c, 0.0, s, 0.0,
            0.0, c, 0.0, -s,
            s, 0.0, c, 0.0,
            0.0, -s, 0.0, c,
        );
        assert!((j.matrix() - expect).amax() < 1e-13);
        let w = j.wigner_origin_conditional().unwrap();
        assert_relative_eq!(w, -1.0 / (PI * c * c), epsilon = 1e-14);
    }

    #[test]
    fn joint_extraction_errors_and_vacuum() {
        let l = labels(2);
        let vac = CovarianceState::vacuum(l.clone()).unwrap();
        let j = vac.extract_joint(&[(l[0], 0.5)], &[(l[1], 1.0)]).unwrap();
        assert_eq!(j.matrix(), &Matrix4::identity());
        assert_eq!(
            j.wigner_origin_conditional().unwrap_err(),
            Error::ZeroTriggerProbability
        );
        assert!(matches!(
            vac.extract_joint(&[(l[0], 0.5)], &[(l[1], 0.9)]),
            Err(Error::NotNormalized(_))
        ));
        let mixed = CovarianceState::vacuum(vec![ModeLabel::output(0), ModeLabel::new(ModeKind::Cavity, 0)]).unwrap();
        assert!(matches!(
            mixed.extract_joint(
                &[(ModeLabel::new(ModeKind::Cavity, 0), 0.5)],
                &[(ModeLabel::output(0), 1.0)]
            ),
            Err(Error::NotOutputMode(_))
        ));
    }

    #[test]
    fn conditional_wigner_thermal_trigger() {
        let j = JointModePair::new(Matrix4::from_diagonal(&nalgebra::Vector4::new(3.0, 3.0, 1.0, 1.0))).unwrap();
        assert_relative_eq!(j.wigner_origin_conditional().unwrap(), 1.0 / PI, epsilon = 1e-15);
    }

    #[test]
    fn mean_photon_values() {
        assert_eq!(mean_photon(&Matrix2::identity()), 0.0);
        assert_eq!(mean_photon(&Matrix2::new(3.0, 0.0, 0.0, 3.0)), 1.0);
        let z: f64 = 0.3;
        let b = Matrix2::new((2.0 * z).exp(), 0.0, 0.0, (-2.0 * z).exp());
        assert_relative_eq!(mean_photon(&b), z.sinh().powi(2), epsilon = 1e-15);
    }

    #[test]
    fn symplectic_spectrum_of_thermal_state() {
        let l = labels(2);
        let tms = CovarianceState::vacuum(l.clone())
            .unwrap()
            .apply(&SymplecticMap::two_mode_squeeze(0.5).unwrap(), &l)
            .unwrap();
        let nu = tms.symplectic_eigenvalues().unwrap();
        assert!(nu.iter().all(|v| (v - 1.0).abs() < 1e-10));
        let arm = tms.discard(&l[..1]).unwrap();
        assert_relative_eq!(arm.symplectic_eigenvalues().unwrap()[0], 1.0f64.cosh(), epsilon = 1e-12);
        let bad = CovarianceState::from_parts(DMatrix::from_diagonal_element(2, 2, 0.5), labels(1)).unwrap();
        assert!(!bad.is_physical(PROPAGATION_TOL));
    }
}
