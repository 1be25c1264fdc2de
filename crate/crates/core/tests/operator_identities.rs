//! Numeric checks of the operator identities behind the Dyson-series
//! reorganization: slot swaps, swap/collision commutation, the
//! transported two-collision exchange identity, move invariance of the
//! simplex integrals, and the two-estimator cross-check for iterated
//! Duhamel terms.

use hierlab_core::boardgame::{
    acceptable_move, check_invariance, check_sc_commutation, check_three_ts, count_maps,
    enumerate_echelon, evaluate_duhamel, evaluate_duhamel_nested, swap_operator, time_domain,
    CollisionMap, GameState,
};
use hierlab_core::collision::{collision_term, CollisionSign, QuadSpec};
use hierlab_core::error::Error;
use hierlab_core::kinematics::CrossSectionModel;
use hierlab_core::rng;
use hierlab_core::spaces::{DensityEvaluator, PhaseState};
use hierlab_core::vec::VecD;
use num_bigint::BigUint;

/// Product of per-slot Gaussians with the given (x, v) scale pairs.
fn slot_gaussian(scales: Vec<(f64, f64)>) -> DensityEvaluator {
    let k = scales.len();
    DensityEvaluator::from_fn(k, 3, move |_, s: &PhaseState| {
        let mut acc = 0.0;
        for (i, (sx, sv)) in scales.iter().enumerate() {
            acc += s.x[i].norm_sq() / (sx * sx) + s.v[i].norm_sq() / (sv * sv);
        }
        (-acc).exp()
    })
}

fn symmetric_gaussian(k: usize) -> DensityEvaluator {
    DensityEvaluator::from_fn(k, 3, |_, s: &PhaseState| {
        let acc: f64 = s
            .x
            .iter()
            .zip(s.v.iter())
            .map(|(x, v)| x.norm_sq() + 0.8 * v.norm_sq())
            .sum();
        (-acc).exp()
    })
    .mark_symmetric()
}

fn probes(k: usize, seed: u64, count: usize) -> Vec<PhaseState> {
    let mut r = rng::substream(seed, &[k as u64]);
    (0..count)
        .map(|_| {
            PhaseState::new(
                (0..k).map(|_| VecD::gaussian(&mut r, 3, 0.6)).collect(),
                (0..k).map(|_| VecD::gaussian(&mut r, 3, 0.8)).collect(),
            )
        })
        .collect()
}

#[test]
fn swap_examples() {
    let f = slot_gaussian(vec![(1.0, 1.0), (0.5, 2.0), (2.0, 0.7)]);
    let swapped = swap_operator(&f, 1);
    let twice = swap_operator(&swapped, 1);
    let sym = symmetric_gaussian(3);
    let sym_swapped = swap_operator(&sym, 2);
    let mut r = rng::substream(5, &[7]);
    for _ in 0..1000 {
        let s = PhaseState::new(
            (0..3).map(|_| VecD::gaussian(&mut r, 3, 1.0)).collect(),
            (0..3).map(|_| VecD::gaussian(&mut r, 3, 1.0)).collect(),
        );
        // involution
        assert_eq!(twice.eval(0.0, &s), f.eval(0.0, &s));
        // symmetric functions are fixed points up to summation order
        let sv = sym.eval(0.0, &s);
        assert!((sym_swapped.eval(0.0, &s) - sv).abs() <= 1e-13 * (1.0 + sv.abs()));
        // swap commutes with transport
        let a = swap_operator(&f.transported(0.4), 1).eval(0.0, &s);
        let b = swap_operator(&f, 1).transported(0.4).eval(0.0, &s);
        assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
    }
}

#[test]
fn duhamel_zero_function() {
    let mu = CollisionMap::new(1, 2, vec![1, 1]).unwrap();
    let f = DensityEvaluator::zero(3, 3);
    let model = CrossSectionModel::hard_sphere(3);
    let quad = QuadSpec::mc(500, 3);
    let out = evaluate_duhamel(&mu, &[0.8, 0.3], &f, &model, &quad, &probes(1, 1, 3)).unwrap();
    for v in out {
        assert_eq!(v.value, 0.0);
    }
}

#[test]
fn duhamel_single_layer_unfolds_to_collision_term() {
    let mu = CollisionMap::new(1, 1, vec![1]).unwrap();
    let f = slot_gaussian(vec![(1.0, 1.0), (0.9, 1.2)]);
    let model = CrossSectionModel::hard_sphere(3);
    let quad = QuadSpec::mc(4000, 11);
    let t1 = 0.6;
    let pts = probes(1, 2, 4);
    let via_j = evaluate_duhamel(&mu, &[t1], &f, &model, &quad, &pts).unwrap();
    let frozen = f.at_time(t1);
    for (p, jv) in pts.iter().zip(via_j.iter()) {
        let direct = collision_term(
            &frozen,
            1,
            1,
            CollisionSign::Net,
            &p.drift(-t1),
            t1,
            &model,
            &quad,
        )
        .unwrap();
        assert_eq!(jv.value, direct.value);
    }
}

#[test]
fn duhamel_two_estimator_oracle() {
    let mu = CollisionMap::new(1, 2, vec![1, 2]).unwrap();
    let f = slot_gaussian(vec![(1.0, 1.0), (1.1, 0.9), (0.8, 1.2)]);
    let model = CrossSectionModel::hard_sphere(3);
    let times = [0.7, 0.25];
    let pts = probes(1, 3, 3);
    let flat = evaluate_duhamel(&mu, &times, &f, &model, &QuadSpec::mc(60_000, 17), &pts).unwrap();
    let nested =
        evaluate_duhamel_nested(&mu, &times, &f, &model, &QuadSpec::mc(3000, 19), 24, &pts)
            .unwrap();
    for (a, b) in flat.iter().zip(nested.iter()) {
        assert!(
            a.agrees_with(b, 3.0, 1e-10),
            "flattened {} +- {} vs nested {} +- {}",
            a.value,
            a.stderr,
            b.value,
            b.stderr
        );
    }
}

#[test]
fn duhamel_nesting_budget() {
    let mu = CollisionMap::new(1, 4, vec![1, 1, 1, 1]).unwrap();
    let f = DensityEvaluator::zero(5, 3);
    let model = CrossSectionModel::hard_sphere(3);
    let err = evaluate_duhamel(
        &mu,
        &[0.4, 0.3, 0.2, 0.1],
        &f,
        &model,
        &QuadSpec::mc(10, 1),
        &probes(1, 4, 1),
    );
    assert!(matches!(err, Err(Error::BudgetExceeded(_))));
}

#[test]
fn sc_commutation_both_cases() {
    let model = CrossSectionModel::hard_sphere(3);
    let quad = QuadSpec::mc(30_000, 23);
    // l = 4, j = 1: swap slots 1,2 of 3-particle probe points
    let f = slot_gaussian(vec![(1.0, 1.0), (0.6, 1.4), (1.3, 0.8), (0.9, 1.1)]);
    let pts = probes(3, 4, 4);

    // case 1: target outside {j, j+1}
    let rep1 = check_sc_commutation(4, 1, 3, &f, &pts, &model, &quad).unwrap();
    assert!(rep1.pass, "case 1: {:?}", (rep1.max_abs_deviation, rep1.worst_z));

    // case 2: target = j
    let rep2 = check_sc_commutation(4, 1, 1, &f, &pts, &model, &quad).unwrap();
    assert!(rep2.pass, "case 2: {:?}", (rep2.max_abs_deviation, rep2.worst_z));

    // symmetric f: swap acts as the identity, so both sides match the
    // plain collision term as well
    let sym = symmetric_gaussian(4);
    let rep3 = check_sc_commutation(4, 1, 3, &sym, &pts, &model, &quad).unwrap();
    assert!(rep3.pass);
}

#[test]
fn three_ts_identity() {
    let model = CrossSectionModel::hard_sphere(3);
    let quad = QuadSpec::mc(40_000, 29);
    let f = slot_gaussian(vec![(1.0, 1.0), (0.7, 1.2), (1.4, 0.9), (1.1, 1.3)]);
    let pts = probes(2, 6, 3);

    // x-independent data: transports act trivially between the collisions
    let flat = DensityEvaluator::from_fn(4, 3, |_, s: &PhaseState| {
        (-s.v.iter().map(VecD::norm_sq).sum::<f64>()).exp()
    });
    let rep = check_three_ts(3, (0.9, 0.6, 0.3, 0.1), 2, 1, &flat, &pts, &model, &quad).unwrap();
    assert!(rep.pass, "x-independent: z = {}", rep.worst_z);

    // b = c: the middle transport drops out
    let rep2 = check_three_ts(3, (0.8, 0.4, 0.4, 0.2), 2, 1, &f, &pts, &model, &quad).unwrap();
    assert!(rep2.pass, "b = c: z = {}", rep2.worst_z);

    // generic times
    let rep3 = check_three_ts(3, (1.0, 0.7, 0.4, 0.15), 2, 1, &f, &pts, &model, &quad).unwrap();
    assert!(rep3.pass, "generic: z = {}", rep3.worst_z);
}

#[test]
fn three_ts_preconditions() {
    let model = CrossSectionModel::hard_sphere(3);
    let quad = QuadSpec::mc(10, 1);
    let f = symmetric_gaussian(4);
    let pts = probes(2, 8, 1);
    assert!(check_three_ts(3, (0.1, 0.1, 0.1, 0.1), 1, 2, &f, &pts, &model, &quad).is_err());
}

#[test]
fn invariance_under_one_move() {
    let model = CrossSectionModel::hard_sphere(3);
    // k = 2, n = 2: mu = (2, 1) admits the move at j = 3
    let map = CollisionMap::new(2, 2, vec![2, 1]).unwrap();
    let state = GameState::with_identity_order(map);
    let moved = acceptable_move(&state, 3).unwrap();
    let f = symmetric_gaussian(4);
    let pts = probes(2, 9, 3);
    let quad = QuadSpec::mc(30_000, 31);
    let rep = check_invariance(&state, &moved, &f, 0.9, &model, &quad, &pts).unwrap();
    assert!(rep.pass, "invariance z = {}", rep.worst_z);
}

#[test]
fn invariance_zero_moves_is_exact() {
    let model = CrossSectionModel::hard_sphere(3);
    let map = CollisionMap::new(1, 2, vec![1, 1]).unwrap();
    let state = GameState::with_identity_order(map);
    let f = symmetric_gaussian(3);
    let pts = probes(1, 10, 3);
    let quad = QuadSpec::mc(2000, 37);
    let rep = check_invariance(&state, &state.clone(), &f, 0.5, &model, &quad, &pts).unwrap();
    assert_eq!(rep.max_abs_deviation, 0.0);
}

#[test]
fn invariance_requires_symmetry() {
    let model = CrossSectionModel::hard_sphere(3);
    let map = CollisionMap::new(2, 2, vec![2, 1]).unwrap();
    let state = GameState::with_identity_order(map);
    let moved = acceptable_move(&state, 3).unwrap();
    let f = slot_gaussian(vec![(1.0, 1.0), (0.5, 1.5), (1.2, 0.8), (0.9, 1.1)]);
    let pts = probes(2, 11, 2);
    let quad = QuadSpec::mc(100, 1);
    assert!(matches!(
        check_invariance(&state, &moved, &f, 0.5, &model, &quad, &pts),
        Err(Error::SymmetryRequired)
    ));
}

#[test]
fn time_domain_single_member() {
    let map = CollisionMap::new(1, 2, vec![1, 1]).unwrap();
    let state = GameState::with_identity_order(map.clone());
    let report = time_domain(&map, &[state], 1.0, 40_000, 3).unwrap();
    assert_eq!(report.domain.cells.len(), 1);
    assert!((report.volume_expected - 0.5).abs() < 1e-12);
    assert!(report.ok, "mc {} vs {}", report.volume_mc, report.volume_expected);
}

#[test]
fn time_domain_total_volume_accounts_for_all_maps() {
    // k = 1, n = 2: class volumes summed over all classes equal
    // count_maps * t^n / n!
    let e = enumerate_echelon(1, 2).unwrap();
    let mut covered = 0.0;
    for class in &e.classes {
        let members: Vec<GameState> = class
            .members
            .iter()
            .map(|m| GameState::with_identity_order(m.clone()))
            .collect();
        let report = time_domain(&class.echelon, &members, 1.0, 30_000, 5).unwrap();
        assert!(report.ok);
        covered += report.volume_expected;
    }
    assert_eq!(count_maps(1, 2), BigUint::from(2u32));
    assert!((covered - 2.0 * 0.5).abs() < 1e-12);
}

#[test]
fn time_domain_boundary_membership() {
    let map = CollisionMap::new(1, 2, vec![1, 1]).unwrap();
    let state = GameState::with_identity_order(map.clone());
    let report = time_domain(&map, &[state], 1.0, 100, 7).unwrap();
    // equal coordinates sit on the closed boundary
    assert!(report.domain.contains(&[0.3, 0.3]));
    assert!(report.domain.contains(&[1.0, 0.0]));
    assert!(!report.domain.contains(&[0.2, 0.4]));
}

#[test]
fn larger_class_volume_check() {
    // k = 2, n = 2 has a two-member class: mu = (1,1) <- also (... find it
    let e = enumerate_echelon(2, 2).unwrap();
    let mut found_multi = false;
    for class in &e.classes {
        if class.members.len() > 1 {
            found_multi = true;
            let members: Vec<GameState> = class
                .members
                .iter()
                .map(|m| GameState::with_identity_order(m.clone()))
                .collect();
            let report = time_domain(&class.echelon, &members, 1.0, 60_000, 9).unwrap();
            assert!(
                report.ok,
                "cells {} mc {} expect {}",
                report.domain.cells.len(),
                report.volume_mc,
                report.volume_expected
            );
            assert_eq!(report.domain.cells.len(), class.members.len());
        }
    }
    assert!(found_multi, "expected a nontrivial class at k = 2, n = 2");
}
