use nalgebra::DMatrix;
use proptest::prelude::*;

use opoherald::gaussian::{symplectic_form, CovarianceState, ModeKind, ModeLabel, SymplecticMap};

fn labels(n: usize) -> Vec<ModeLabel> {
    (0..n as i64).map(ModeLabel::output).collect()
}

#[derive(Debug, Clone)]
enum Op {
    Squeeze(usize, f64),
    Phase(usize, f64),
    Split(usize, usize, f64),
    Tms(usize, usize, f64),
    Loss(usize, f64),
}

fn op(n: usize) -> impl Strategy<Value = Op> {
    let pair = (0..n, 1..n).prop_map(move |(a, d)| (a, (a + d) % n));
    prop_oneof![
        (0..n, -1.0..1.0f64).prop_map(|(m, z)| Op::Squeeze(m, z)),
        (0..n, -3.2..3.2f64).prop_map(|(m, t)| Op::Phase(m, t)),
        (pair.clone(), 0.0..1.0f64).prop_map(|((a, b), t)| Op::Split(a, b, t)),
        (pair, -0.8..0.8f64).prop_map(|((a, b), r)| Op::Tms(a, b, r)),
        (0..n, 0.0..1.0f64).prop_map(|(m, e)| Op::Loss(m, e)),
    ]
}

fn apply(state: &CovarianceState, op: &Op) -> CovarianceState {
    let l = |m: usize| ModeLabel::output(m as i64);
    match *op {
        Op::Squeeze(m, z) => state.apply(&SymplecticMap::squeeze(z).unwrap(), &[l(m)]),
        Op::Phase(m, t) => state.apply(&SymplecticMap::phase(t).unwrap(), &[l(m)]),
        Op::Split(a, b, t) => state.apply(
            &SymplecticMap::beamsplitter(t, (1.0 - t * t).sqrt()).unwrap(),
            &[l(a), l(b)],
        ),
        Op::Tms(a, b, r) => state.apply(&SymplecticMap::two_mode_squeeze(r).unwrap(), &[l(a), l(b)]),
        Op::Loss(m, e) => state.attenuate(&l(m), e),
    }
    .unwrap()
}

proptest! {
    #[test]
    fn elementary_maps_are_symplectic(z in -2.0..2.0f64, theta in -7.0..7.0f64, t in 0.0..1.0f64) {
        let r = (1.0 - t * t).sqrt();
        for map in [
            SymplecticMap::squeeze(z).unwrap(),
            SymplecticMap::phase(theta).unwrap(),
            SymplecticMap::beamsplitter(t, r).unwrap(),
            SymplecticMap::two_mode_squeeze(z).unwrap(),
        ] {
            prop_assert!(map.symplectic_residual() < 1e-12);
            prop_assert!((map.matrix().determinant() - 1.0).abs() < 1e-9 * map.matrix().amax().powi(map.dim() as i32));
        }
    }

    #[test]
    fn gate_sequences_stay_physical(ops in prop::collection::vec(op(4), 1..25)) {
        let mut state = CovarianceState::vacuum(labels(4)).unwrap();
        for o in &ops {
            state = apply(&state, o);
            prop_assert!(state.is_physical(1e-9));
        }
        let reduced = state.discard(&[ModeLabel::output(1), ModeLabel::output(3)]).unwrap();
        prop_assert_eq!(reduced.n_modes(), 2);
        prop_assert!(reduced.is_physical(1e-9));
    }

    #[test]
    fn discarding_keeps_the_remaining_blocks(ops in prop::collection::vec(op(3), 1..10)) {
        let mut state = CovarianceState::vacuum(labels(3)).unwrap();
        for o in &ops {
            state = apply(&state, o);
        }
        let reduced = state.discard(&[ModeLabel::output(1)]).unwrap();
        let m = state.matrix();
        let keep = [0, 1, 4, 5];
        let expected = DMatrix::from_fn(4, 4, |i, j| m[(keep[i], keep[j])]);
        prop_assert!((reduced.matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn collective_mode_of_vacuum_is_vacuum(c in prop::collection::vec(-1.0..1.0f64, 3)) {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let state = CovarianceState::vacuum(labels(3)).unwrap();
        let coeffs: Vec<(ModeLabel, f64)> = c.iter().enumerate().map(|(i, v)| (ModeLabel::output(i as i64), v / norm)).collect();
        let block = state.collective_block(&coeffs).unwrap();
        prop_assert!((block - nalgebra::Matrix2::identity()).amax() < 1e-14);
    }
}

#[test]
fn vacuum_of_three_modes_is_identity_and_physical() {
    let state = CovarianceState::vacuum(labels(3)).unwrap();
    assert_eq!(state.matrix(), &DMatrix::identity(6, 6));
    assert!(state.is_physical(1e-9));
}

#[test]
fn duplicate_labels_are_rejected() {
    let l = ModeLabel::new(ModeKind::Cavity, 0);
    assert!(CovarianceState::vacuum(vec![l, l]).is_err());
}

#[test]
fn unphysical_matrix_is_flagged() {
    let v = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.5]));
    let state = CovarianceState::from_parts(v, labels(1)).unwrap();
    assert!(!state.is_physical(1e-9));
}

#[test]
fn beamsplitter_relations() {
    // m1' = t m1 + i r m2 moves the x quadrature of mode 2 into the p
    // quadrature of mode 1.
    let (t, r) = (0.6, 0.8);
    let s = SymplecticMap::beamsplitter(t, r).unwrap();
    let m = s.matrix();
    assert_eq!(m[(0, 0)], t);
    assert_eq!(m[(1, 2)], r);
    assert_eq!(m[(0, 3)], -r);
    let omega = symplectic_form(2);
    assert!((m * &omega * m.transpose() - omega).amax() < 1e-15);
}
