//! Board-game reorganization of the Dyson expansion: collision maps and
//! time orders, acceptable moves, echelon reduction, class enumeration,
//! the slot-swap operator, numeric verification of the operator
//! identities, iterated Duhamel evaluation, and time-domain bookkeeping.

use crate::collision::{collision_term, CollisionSign, McValue, QuadKind, QuadSpec};
use crate::error::{Error, Result};
use crate::kinematics::{cross_section, CrossSectionModel, ScatterDirection};
use crate::quad::McAccumulator;
use crate::rng;
use crate::spaces::{DensityEvaluator, PhaseState};
use crate::vec::VecD;
use num_bigint::BigUint;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Collision history: mu maps column j in {k+1, ..., k+n} to the struck
/// particle mu(j) < j. Stored as mu[l] = mu(k+1+l), 1-based targets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CollisionMap {
    pub k: usize,
    pub n: usize,
    mu: Vec<usize>,
}

impl CollisionMap {
    pub fn new(k: usize, n: usize, mu: Vec<usize>) -> Result<Self> {
        if k < 1 || n < 1 {
            return Err(Error::Precondition("k, n must be at least 1".into()));
        }
        if mu.len() != n {
            return Err(Error::Precondition(format!(
                "mu has {} entries, expected {n}",
                mu.len()
            )));
        }
        for (l, &target) in mu.iter().enumerate() {
            let col = k + 1 + l;
            if target < 1 || target >= col {
                return Err(Error::Precondition(format!(
                    "mu({col}) = {target} violates mu(j) < j"
                )));
            }
        }
        Ok(CollisionMap { k, n, mu })
    }

    /// mu(j) for an absolute column index j in {k+1, ..., k+n}.
    pub fn target(&self, j: usize) -> usize {
        self.mu[j - self.k - 1]
    }

    pub fn targets(&self) -> &[usize] {
        &self.mu
    }
}

/// Permutation sigma of the column labels {k+1, ..., k+n}, stored as
/// sigma[i] = sigma(k+1+i).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeOrder {
    pub k: usize,
    pub n: usize,
    sigma: Vec<usize>,
}

impl TimeOrder {
    pub fn identity(k: usize, n: usize) -> Self {
        TimeOrder {
            k,
            n,
            sigma: (k + 1..=k + n).collect(),
        }
    }

    pub fn new(k: usize, n: usize, sigma: Vec<usize>) -> Result<Self> {
        if sigma.len() != n {
            return Err(Error::Precondition("sigma length mismatch".into()));
        }
        let mut seen = vec![false; n];
        for &s in &sigma {
            if s < k + 1 || s > k + n || seen[s - k - 1] {
                return Err(Error::Precondition("sigma is not a bijection".into()));
            }
            seen[s - k - 1] = true;
        }
        Ok(TimeOrder { k, n, sigma })
    }

    pub fn apply(&self, j: usize) -> usize {
        self.sigma[j - self.k - 1]
    }

    pub fn inverse_apply(&self, j: usize) -> usize {
        let pos = self
            .sigma
            .iter()
            .position(|&s| s == j)
            .expect("value in range");
        self.k + 1 + pos
    }

    /// (j, j+1) composed after sigma.
    fn swap_values(&self, j: usize) -> TimeOrder {
        let mut out = self.clone();
        for s in &mut out.sigma {
            if *s == j {
                *s = j + 1;
            } else if *s == j + 1 {
                *s = j;
            }
        }
        out
    }
}

/// One board configuration: which element is circled in each column and
/// the order of the times in the top row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    pub map: CollisionMap,
    pub order: TimeOrder,
}

impl GameState {
    pub fn new(map: CollisionMap, order: TimeOrder) -> Result<Self> {
        if map.k != order.k || map.n != order.n {
            return Err(Error::Precondition("map/order shape mismatch".into()));
        }
        Ok(GameState { map, order })
    }

    pub fn with_identity_order(map: CollisionMap) -> Self {
        let order = TimeOrder::identity(map.k, map.n);
        GameState { map, order }
    }

    /// Text rendering of the board: times on top, one circled entry per
    /// column, zeros below the diagonal.
    pub fn render_matrix(&self) -> String {
        let (k, n) = (self.map.k, self.map.n);
        let mut out = String::new();
        out.push_str("      ");
        for j in k + 1..=k + n {
            out.push_str(&format!(
                "{:>10}",
                format!("t{}", self.order.inverse_apply(j))
            ));
        }
        out.push('\n');
        for row in 1..=k + n - 1 {
            out.push_str(&format!("r{row:<4} "));
            for col in k + 1..=k + n {
                if row >= col {
                    out.push_str(&format!("{:>10}", "0"));
                } else if self.map.target(col) == row {
                    out.push_str(&format!("{:>10}", format!("(C{row},{col})")));
                } else {
                    out.push_str(&format!("{:>10}", format!("C{row},{col}")));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Number of collision histories: prod_{l=1..n} (k+l-1).
pub fn count_maps(k: usize, n: usize) -> BigUint {
    let mut count = BigUint::from(1u32);
    for l in 1..=n {
        count *= BigUint::from(k + l - 1);
    }
    count
}

/// All of M_n in odometer order.
pub fn enumerate_maps(k: usize, n: usize) -> impl Iterator<Item = CollisionMap> {
    let mut digits = vec![1usize; n];
    let mut done = n == 0;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let out = CollisionMap {
            k,
            n,
            mu: digits.clone(),
        };
        // advance: digit l ranges over 1..=k+l
        let mut l = 0;
        loop {
            if l == n {
                done = true;
                break;
            }
            if digits[l] < k + l {
                digits[l] += 1;
                break;
            }
            digits[l] = 1;
            l += 1;
        }
        Some(out)
    })
}

/// mu(j+1) < mu(j) makes column j eligible for a move.
pub fn eligible_moves(map: &CollisionMap) -> Vec<usize> {
    let (k, n) = (map.k, map.n);
    (k + 1..k + n)
        .filter(|&j| map.target(j + 1) < map.target(j))
        .collect()
}

/// Apply the move at column j: mu' = (j, j+1) o mu o (j, j+1) and
/// sigma' = (j, j+1) o sigma.
pub fn acceptable_move(state: &GameState, j: usize) -> Result<GameState> {
    let (k, n) = (state.map.k, state.map.n);
    if j < k + 1 || j > k + n - 1 {
        return Err(Error::MoveNotAcceptable {
            j,
            reason: format!("column out of range {}..={}", k + 1, k + n - 1),
        });
    }
    if state.map.target(j + 1) >= state.map.target(j) {
        return Err(Error::MoveNotAcceptable {
            j,
            reason: format!(
                "mu({}) = {} is not below mu({}) = {}",
                j + 1,
                state.map.target(j + 1),
                j,
                state.map.target(j)
            ),
        });
    }
    let swap_val = |v: usize| {
        if v == j {
            j + 1
        } else if v == j + 1 {
            j
        } else {
            v
        }
    };
    let mut mu = Vec::with_capacity(n);
    for col in k + 1..=k + n {
        let pre = swap_val(col); // (j, j+1) on the argument
        mu.push(swap_val(state.map.target(pre)));
    }
    let map = CollisionMap::new(k, n, mu)?;
    let order = state.order.swap_values(j);
    Ok(GameState { map, order })
}

/// mu nondecreasing on its domain.
pub fn is_echelon(map: &CollisionMap) -> bool {
    map.mu.windows(2).all(|w| w[0] <= w[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReductionPolicy {
    /// Always play the leftmost eligible column (the canonical policy).
    Leftmost,
    Rightmost,
    /// Pick uniformly among eligible columns; used to probe whether the
    /// echelon target depends on the order of play.
    Random(u64),
}

/// Replayable record of the moves of one reduction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoveTrace {
    pub initial: GameState,
    pub moves: Vec<usize>,
    pub fin: GameState,
}

impl MoveTrace {
    /// Replays the recorded moves and checks they reproduce the final state.
    pub fn replay(&self) -> Result<bool> {
        let mut state = self.initial.clone();
        for &j in &self.moves {
            state = acceptable_move(&state, j)?;
        }
        Ok(state == self.fin)
    }
}

#[derive(Debug, Clone)]
pub struct Reduction {
    pub echelon: GameState,
    pub trace: MoveTrace,
}

/// Play acceptable moves until the map is in upper echelon form. Aborts
/// with NonTermination after (k+n)^2 moves; never observed.
pub fn reduce_to_echelon(state: &GameState, policy: ReductionPolicy) -> Result<Reduction> {
    let (k, n) = (state.map.k, state.map.n);
    let guard = (k + n) * (k + n);
    let mut current = state.clone();
    let mut moves = Vec::new();
    let mut rand_state = match policy {
        ReductionPolicy::Random(seed) => rng::chain(seed, &[k as u64, n as u64]),
        _ => 0,
    };
    while !is_echelon(&current.map) {
        if moves.len() >= guard {
            return Err(Error::NonTermination { guard });
        }
        let eligible = eligible_moves(&current.map);
        debug_assert!(!eligible.is_empty(), "non-echelon map must admit a move");
        let j = match policy {
            ReductionPolicy::Leftmost => eligible[0],
            ReductionPolicy::Rightmost => *eligible.last().unwrap(),
            ReductionPolicy::Random(_) => {
                rand_state = rng::mix(rand_state);
                eligible[(rand_state % eligible.len() as u64) as usize]
            }
        };
        current = acceptable_move(&current, j)?;
        moves.push(j);
    }
    Ok(Reduction {
        trace: MoveTrace {
            initial: state.clone(),
            moves,
            fin: current.clone(),
        },
        echelon: current,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EchelonClass {
    pub echelon: CollisionMap,
    pub members: Vec<CollisionMap>,
    pub trace_lengths: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EchelonEnumeration {
    pub k: usize,
    pub n: usize,
    pub maps_total: BigUint,
    pub echelon: Vec<CollisionMap>,
    /// Partition of M_n keyed by the leftmost-policy reduction target.
    pub classes: Vec<EchelonClass>,
}

const ENUMERATION_BUDGET: usize = 24;
const PARTITION_BUDGET: u64 = 10_000_000;

/// Enumerate echelon maps and partition all of M_n by reduction target.
pub fn enumerate_echelon(k: usize, n: usize) -> Result<EchelonEnumeration> {
    if k + n > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded(format!(
            "k + n = {} exceeds {ENUMERATION_BUDGET}",
            k + n
        )));
    }
    let total = count_maps(k, n);
    if total > BigUint::from(PARTITION_BUDGET) {
        return Err(Error::BudgetExceeded(format!(
            "{total} maps exceed the partition budget {PARTITION_BUDGET}"
        )));
    }

    let mut echelon = Vec::new();
    let mut classes: Vec<EchelonClass> = Vec::new();
    let mut index: std::collections::HashMap<CollisionMap, usize> = Default::default();
    let mut seen = BigUint::from(0u32);
    for map in enumerate_maps(k, n) {
        seen += 1u32;
        if is_echelon(&map) {
            echelon.push(map.clone());
        }
        let reduction = reduce_to_echelon(
            &GameState::with_identity_order(map.clone()),
            ReductionPolicy::Leftmost,
        )?;
        if !is_echelon(&reduction.echelon.map) {
            return Err(Error::Precondition(
                "reduction did not reach echelon form".into(),
            ));
        }
        let target = reduction.echelon.map.clone();
        let slot = *index.entry(target.clone()).or_insert_with(|| {
            classes.push(EchelonClass {
                echelon: target,
                members: Vec::new(),
                trace_lengths: Vec::new(),
            });
            classes.len() - 1
        });
        classes[slot].members.push(map);
        classes[slot].trace_lengths.push(reduction.trace.moves.len());
    }
    if seen != total {
        return Err(Error::Precondition("enumeration count mismatch".into()));
    }

    // every class representative is echelon and every echelon map is its
    // own representative, so the class count equals the echelon count
    let bound = BigUint::from(1u32) << (k + n);
    if BigUint::from(echelon.len()) > bound {
        return Err(Error::Precondition(format!(
            "echelon count {} exceeds 2^(k+n)",
            echelon.len()
        )));
    }
    if classes.len() != echelon.len() {
        return Err(Error::Precondition(
            "classes do not biject with echelon maps".into(),
        ));
    }
    let member_total: u64 = classes.iter().map(|c| c.members.len() as u64).sum();
    if BigUint::from(member_total) != total {
        return Err(Error::Precondition("classes do not cover M_n".into()));
    }
    Ok(EchelonEnumeration {
        k,
        n,
        maps_total: total,
        echelon,
        classes,
    })
}

/// S_{j,j+1}: exchange x and v slots j and j+1 of an l-particle evaluator.
pub fn swap_operator(f: &DensityEvaluator, j: usize) -> DensityEvaluator {
    f.swap_slots(j)
}

/// One operator in a transported-collision chain, outermost first.
#[derive(Debug, Clone, Copy)]
pub enum ChainOp {
    /// T^tau acting at the current particle count.
    Drift(f64),
    /// Net collision C_{target, l+1} consuming the integrated particle,
    /// which enters as the last slot of the next-deeper state.
    Collide { target: usize },
    /// S_{j, j+1}
    Swap(usize),
}

/// Monte Carlo evaluation plan for a chain: samples per collision layer.
/// The last entry repeats for deeper layers; `[N, 1]` is the flattened
/// joint-space estimator.
#[derive(Debug, Clone)]
pub struct ChainPlan {
    pub layer_samples: Vec<usize>,
    pub seed: u64,
    pub proposal_sigma: f64,
}

impl ChainPlan {
    fn samples_at(&self, layer: usize) -> usize {
        *self
            .layer_samples
            .get(layer)
            .or(self.layer_samples.last())
            .unwrap_or(&1)
    }
}

fn chain_value(
    ops: &[ChainOp],
    f: &DensityEvaluator,
    t_final: f64,
    state: &PhaseState,
    model: &CrossSectionModel,
    plan: &ChainPlan,
    layer: usize,
    path: &mut Vec<u64>,
) -> f64 {
    match ops.first() {
        None => f.eval(t_final, state),
        Some(ChainOp::Drift(tau)) => {
            if *tau == 0.0 {
                chain_value(&ops[1..], f, t_final, state, model, plan, layer, path)
            } else {
                chain_value(
                    &ops[1..],
                    f,
                    t_final,
                    &state.drift(*tau),
                    model,
                    plan,
                    layer,
                    path,
                )
            }
        }
        Some(ChainOp::Swap(j)) => chain_value(
            &ops[1..],
            f,
            t_final,
            &state.swapped(j - 1, *j),
            model,
            plan,
            layer,
            path,
        ),
        Some(ChainOp::Collide { target }) => {
            let n = plan.samples_at(layer);
            let mut acc = 0.0;
            for i in 0..n {
                path.push(((layer as u64) << 32) | i as u64);
                acc +=
                    collide_sample(&ops[1..], f, t_final, state, model, plan, layer, path, *target);
                path.pop();
            }
            acc / n as f64
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn collide_sample(
    rest: &[ChainOp],
    f: &DensityEvaluator,
    t_final: f64,
    state: &PhaseState,
    model: &CrossSectionModel,
    plan: &ChainPlan,
    layer: usize,
    path: &mut Vec<u64>,
    target: usize,
) -> f64 {
    let d = state.dim();
    let mut r = rng::substream(plan.seed, path);
    let vj = state.v[target - 1];
    let u = VecD::gaussian(&mut r, d, plan.proposal_sigma);
    let density = (2.0 * std::f64::consts::PI * plan.proposal_sigma * plan.proposal_sigma)
        .powf(-(d as f64) / 2.0)
        * (-u.norm_sq() / (2.0 * plan.proposal_sigma * plan.proposal_sigma)).exp();
    let v_new = vj.add(&u);
    let sigma = ScatterDirection::new(VecD::random_unit(&mut r, d)).expect("unit");
    let w = crate::estimates::sphere_area(d) / density;
    let b = match cross_section(model, &sigma, &u) {
        Ok(b) => b,
        Err(_) => return 0.0,
    };
    if b == 0.0 {
        return 0.0;
    }
    let out = crate::kinematics::post_collision(&vj, &v_new, &sigma);
    let mut gain_state = state.push(state.x[target - 1], out.v1_star);
    gain_state.v[target - 1] = out.v_star;
    let loss_state = state.push(state.x[target - 1], v_new);
    path.push(u64::MAX); // shared branch marker: gain and loss reuse draws
    let gain = chain_value(rest, f, t_final, &gain_state, model, plan, layer + 1, path);
    let loss = chain_value(rest, f, t_final, &loss_state, model, plan, layer + 1, path);
    path.pop();
    b * w * (gain - loss)
}

/// Per-outer-sample estimates of a chain applied to `f` at `state`; the
/// chain must reach a collision after its deterministic prefix.
fn chain_outer_samples(
    ops: &[ChainOp],
    f: &DensityEvaluator,
    t_final: f64,
    state: &PhaseState,
    model: &CrossSectionModel,
    plan: &ChainPlan,
) -> Vec<f64> {
    // peel deterministic prefix
    let mut cur = state.clone();
    let mut idx = 0;
    loop {
        match ops.get(idx) {
            Some(ChainOp::Drift(tau)) => {
                cur = cur.drift(*tau);
                idx += 1;
            }
            Some(ChainOp::Swap(j)) => {
                cur = cur.swapped(j - 1, *j);
                idx += 1;
            }
            _ => break,
        }
    }
    match ops.get(idx) {
        Some(ChainOp::Collide { target }) => {
            let n = plan.samples_at(0);
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut path = vec![i as u64];
                    collide_sample(
                        &ops[idx + 1..],
                        f,
                        t_final,
                        &cur,
                        model,
                        plan,
                        1,
                        &mut path,
                        *target,
                    )
                })
                .collect()
        }
        _ => vec![f.eval(t_final, &cur); 1],
    }
}

/// J_{n,k}(times; mu) f evaluated at the given k-particle states.
///
/// For n = 1 the definition unfolds to a transported single collision
/// term, and that code path is used directly.
pub fn evaluate_duhamel(
    mu: &CollisionMap,
    times: &[f64],
    f: &DensityEvaluator,
    model: &CrossSectionModel,
    quad: &QuadSpec,
    states: &[PhaseState],
) -> Result<Vec<McValue>> {
    let (k, n) = (mu.k, mu.n);
    if n > 3 {
        return Err(Error::BudgetExceeded(format!(
            "Duhamel nesting n = {n} exceeds 3"
        )));
    }
    if times.len() != n {
        return Err(Error::Precondition("one time per collision layer".into()));
    }
    if f.k() != k + n {
        return Err(Error::Precondition(format!(
            "evaluator has {} slots, expected {}",
            f.k(),
            k + n
        )));
    }
    if n == 1 {
        let frozen = f.at_time(times[0]);
        return states
            .iter()
            .map(|s| {
                collision_term(
                    &frozen,
                    mu.target(k + 1),
                    k,
                    CollisionSign::Net,
                    &s.drift(-times[0]),
                    times[0],
                    model,
                    quad,
                )
            })
            .collect();
    }

    let (samples, seed) = match quad.kind {
        QuadKind::Mc { samples, seed } => (samples, seed),
        _ => {
            return Err(Error::Precondition(
                "iterated Duhamel terms use MC quadrature".into(),
            ))
        }
    };
    let plan = ChainPlan {
        layer_samples: vec![samples, 1],
        seed,
        proposal_sigma: quad.proposal_sigma,
    };
    let ops = duhamel_chain(mu, times);
    Ok(states
        .iter()
        .map(|s| {
            let vals = chain_outer_samples(&ops, f, times[n - 1], s, model, &plan);
            let mut acc = McAccumulator::default();
            for v in vals {
                acc.push(v);
            }
            McValue {
                value: acc.mean(),
                stderr: acc.stderr(),
                samples: acc.count() as usize,
                dropped: 0,
            }
        })
        .collect())
}

/// Chain for J_{n,k}: T^{-t_1} C_{mu(k+1)} T^{t_1 - t_2} ... C_{mu(k+n)}.
fn duhamel_chain(mu: &CollisionMap, times: &[f64]) -> Vec<ChainOp> {
    let (k, n) = (mu.k, mu.n);
    let mut ops = Vec::with_capacity(2 * n);
    ops.push(ChainOp::Drift(-times[0]));
    for l in 0..n {
        ops.push(ChainOp::Collide {
            target: mu.target(k + 1 + l),
        });
        if l + 1 < n {
            ops.push(ChainOp::Drift(times[l] - times[l + 1]));
        }
    }
    ops
}

/// Nested-recursion estimator for a two-layer Duhamel term: the inner
/// collision integral gets its own sample loop per outer draw.
pub fn evaluate_duhamel_nested(
    mu: &CollisionMap,
    times: &[f64],
    f: &DensityEvaluator,
    model: &CrossSectionModel,
    quad: &QuadSpec,
    inner_samples: usize,
    states: &[PhaseState],
) -> Result<Vec<McValue>> {
    let (k, n) = (mu.k, mu.n);
    if n != 2 {
        return Err(Error::Precondition("nested estimator is for n = 2".into()));
    }
    if f.k() != k + n {
        return Err(Error::Precondition("evaluator slot mismatch".into()));
    }
    let (samples, seed) = match quad.kind {
        QuadKind::Mc { samples, seed } => (samples, seed),
        _ => return Err(Error::Precondition("nested estimator uses MC".into())),
    };
    let plan = ChainPlan {
        layer_samples: vec![samples, inner_samples],
        seed: rng::chain(seed, &[0x4e45_5354]),
        proposal_sigma: quad.proposal_sigma,
    };
    let ops = duhamel_chain(mu, times);
    Ok(states
        .iter()
        .map(|s| {
            let vals = chain_outer_samples(&ops, f, times[n - 1], s, model, &plan);
            let mut acc = McAccumulator::default();
            for v in vals {
                acc.push(v);
            }
            McValue {
                value: acc.mean(),
                stderr: acc.stderr(),
                samples: acc.count() as usize,
                dropped: 0,
            }
        })
        .collect())
}

/// Outcome of one operator-identity check across probe points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    /// (mean difference, stderr of the difference) per probe point.
    pub per_point: Vec<(f64, f64)>,
    pub max_abs_deviation: f64,
    /// Largest |mean| / stderr ratio across points.
    pub worst_z: f64,
    pub pass: bool,
}

fn difference_report(pairs: Vec<(Vec<f64>, Vec<f64>)>, n_sigma: f64) -> IdentityReport {
    let mut per_point = Vec::with_capacity(pairs.len());
    let mut max_abs: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    let mut pass = true;
    for (lhs, rhs) in pairs {
        let mut acc = McAccumulator::default();
        let mut scale_acc = McAccumulator::default();
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            acc.push(a - b);
            scale_acc.push(a.abs() + b.abs());
        }
        let dev = acc.mean();
        let se = acc.stderr();
        // absolute floor guards the exactly-cancelling cases where only
        // rounding noise survives
        let floor = 1e-12 * (1.0 + scale_acc.mean());
        let z = if se > 0.0 { dev.abs() / se } else { 0.0 };
        max_abs = max_abs.max(dev.abs());
        if dev.abs() > floor {
            worst_z = worst_z.max(z);
            if dev.abs() > n_sigma * se {
                pass = false;
            }
        }
        per_point.push((dev, se));
    }
    IdentityReport {
        per_point,
        max_abs_deviation: max_abs,
        worst_z,
        pass,
    }
}

/// S_{j,j+1} C_{(j,j+1) o target, l} = C_{target, l} S_{j,j+1}, evaluated
/// at sampled (l-1)-particle points with common random numbers.
pub fn check_sc_commutation(
    l: usize,
    j: usize,
    target: usize,
    f: &DensityEvaluator,
    points: &[PhaseState],
    model: &CrossSectionModel,
    quad: &QuadSpec,
) -> Result<IdentityReport> {
    if l <= j + 1 {
        return Err(Error::Precondition("need l > j + 1".into()));
    }
    if target >= l || target < 1 {
        return Err(Error::Precondition("target must lie below l".into()));
    }
    if f.k() != l {
        return Err(Error::Precondition("evaluator must have l slots".into()));
    }
    let (samples, seed) = match quad.kind {
        QuadKind::Mc { samples, seed } => (samples, seed),
        _ => return Err(Error::Precondition("identity checks use MC".into())),
    };
    let plan = ChainPlan {
        layer_samples: vec![samples],
        seed,
        proposal_sigma: quad.proposal_sigma,
    };
    let swapped_target = if target == j {
        j + 1
    } else if target == j + 1 {
        j
    } else {
        target
    };
    let lhs_ops = [
        ChainOp::Swap(j),
        ChainOp::Collide {
            target: swapped_target,
        },
    ];
    let rhs_ops = [ChainOp::Collide { target }, ChainOp::Swap(j)];
    let pairs = points
        .iter()
        .map(|s| {
            let lhs = chain_outer_samples(&lhs_ops, f, 0.0, s, model, &plan);
            let rhs = chain_outer_samples(&rhs_ops, f, 0.0, s, model, &plan);
            (lhs, rhs)
        })
        .collect();
    Ok(difference_report(pairs, 3.0))
}

/// T^{a-b} C_{alpha,j} T^{b-c} C_{beta,j+1} T^{c-d}
///   = T^{a-c} C_{beta,j} T^{c-b} C_{alpha,j+1} T^{b-d} S_{j,j+1},
/// on (j-1)-particle probe points, common random numbers on both sides.
#[allow(clippy::too_many_arguments)]
pub fn check_three_ts(
    j: usize,
    times: (f64, f64, f64, f64),
    alpha_idx: usize,
    beta_idx: usize,
    f: &DensityEvaluator,
    points: &[PhaseState],
    model: &CrossSectionModel,
    quad: &QuadSpec,
) -> Result<IdentityReport> {
    if !(beta_idx < alpha_idx && alpha_idx < j) {
        return Err(Error::Precondition("need beta < alpha < j".into()));
    }
    if j <= 2 {
        return Err(Error::Precondition("need j > 2".into()));
    }
    if f.k() != j + 1 {
        return Err(Error::Precondition("evaluator must have j+1 slots".into()));
    }
    let (a, b, c, d_time) = times;
    let (samples, seed) = match quad.kind {
        QuadKind::Mc { samples, seed } => (samples, seed),
        _ => return Err(Error::Precondition("identity checks use MC".into())),
    };
    let plan = ChainPlan {
        layer_samples: vec![samples, 1],
        seed,
        proposal_sigma: quad.proposal_sigma,
    };
    let lhs_ops = [
        ChainOp::Drift(a - b),
        ChainOp::Collide { target: alpha_idx },
        ChainOp::Drift(b - c),
        ChainOp::Collide { target: beta_idx },
        ChainOp::Drift(c - d_time),
    ];
    let rhs_ops = [
        ChainOp::Drift(a - c),
        ChainOp::Collide { target: beta_idx },
        ChainOp::Drift(c - b),
        ChainOp::Collide { target: alpha_idx },
        ChainOp::Drift(b - d_time),
        ChainOp::Swap(j),
    ];
    let pairs = points
        .iter()
        .map(|s| {
            let lhs = chain_outer_samples(&lhs_ops, f, 0.0, s, model, &plan);
            let rhs = chain_outer_samples(&rhs_ops, f, 0.0, s, model, &plan);
            (lhs, rhs)
        })
        .collect();
    Ok(difference_report(pairs, 3.0))
}

/// I_{n,k}(mu, sigma): simplex time integral of the sigma-permuted Duhamel
/// term. Jointly samples ordered times and collision variables.
fn i_integral_samples(
    state_game: &GameState,
    f: &DensityEvaluator,
    t: f64,
    model: &CrossSectionModel,
    plan: &ChainPlan,
    simplex_samples: usize,
    probe: &PhaseState,
) -> Vec<f64> {
    let (k, n) = (state_game.map.k, state_game.map.n);
    let volume = t.powi(n as i32) / (1..=n).map(|i| i as f64).product::<f64>();
    (0..simplex_samples)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::substream(plan.seed, &[0x531, s as u64]);
            let mut draws: Vec<f64> = (0..n).map(|_| r.gen::<f64>() * t).collect();
            draws.sort_by(|x, y| y.partial_cmp(x).unwrap());
            // t_{k+i} is the i-th largest draw; J's l-th argument is
            // t_{sigma^{-1}(k+l)}
            let times: Vec<f64> = (1..=n)
                .map(|l| draws[state_game.order.inverse_apply(k + l) - k - 1])
                .collect();
            let ops = duhamel_chain(&state_game.map, &times);
            let sub_plan = ChainPlan {
                layer_samples: vec![1, 1],
                seed: rng::chain(plan.seed, &[0x1d, s as u64]),
                proposal_sigma: plan.proposal_sigma,
            };
            let mut path = vec![];
            volume
                * chain_value(&ops, f, times[n - 1], probe, model, &sub_plan, 0, &mut path)
        })
        .collect()
}

/// Invariance of I_{n,k} under one acceptable move, checked at probe
/// points with common random numbers.
pub fn check_invariance(
    state: &GameState,
    state2: &GameState,
    f: &DensityEvaluator,
    t: f64,
    model: &CrossSectionModel,
    quad: &QuadSpec,
    points: &[PhaseState],
) -> Result<IdentityReport> {
    let (k, n) = (state.map.k, state.map.n);
    if n > 2 {
        return Err(Error::BudgetExceeded("invariance checks cap n at 2".into()));
    }
    if !f.symmetric {
        return Err(Error::SymmetryRequired);
    }
    if f.k() != k + n {
        return Err(Error::Precondition("evaluator slot mismatch".into()));
    }
    // state2 must be reachable by zero moves or one acceptable move
    let reachable = state2 == state
        || eligible_moves(&state.map).into_iter().any(|j| {
            acceptable_move(state, j)
                .map(|s| &s == state2)
                .unwrap_or(false)
        });
    if !reachable {
        return Err(Error::Precondition(
            "second state is not one acceptable move away".into(),
        ));
    }
    let (samples, seed) = match quad.kind {
        QuadKind::Mc { samples, seed } => (samples, seed),
        _ => return Err(Error::Precondition("invariance checks use MC".into())),
    };
    let plan = ChainPlan {
        layer_samples: vec![1],
        seed,
        proposal_sigma: quad.proposal_sigma,
    };
    let pairs = points
        .iter()
        .map(|probe| {
            let lhs = i_integral_samples(state, f, t, model, &plan, samples, probe);
            let rhs = i_integral_samples(state2, f, t, model, &plan, samples, probe);
            (lhs, rhs)
        })
        .collect();
    Ok(difference_report(pairs, 3.0))
}

/// Union of permuted simplices reconstructed from reduction traces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeDomain {
    pub cells: Vec<TimeOrder>,
    pub horizon: f64,
}

impl TimeDomain {
    /// Closed-simplex membership: times[i] corresponds to t_{k+1+i}.
    pub fn contains(&self, times: &[f64]) -> bool {
        self.cells.iter().any(|cell| {
            let k = cell.k;
            let n = cell.n;
            let mut prev = self.horizon;
            for l in 1..=n {
                let idx = cell.apply(k + l) - k - 1;
                if times[idx] > prev {
                    return false;
                }
                prev = times[idx];
            }
            prev >= 0.0
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeDomainReport {
    pub domain: TimeDomain,
    pub volume_mc: f64,
    pub volume_expected: f64,
    pub mc_stderr: f64,
    pub ok: bool,
}

/// Accumulate the final time orders of each class member's reduction and
/// cross-check the union volume against (#cells) t^n / n!.
pub fn time_domain(
    echelon: &CollisionMap,
    class_members: &[GameState],
    t: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<TimeDomainReport> {
    if !is_echelon(echelon) {
        return Err(Error::Precondition("target map is not echelon".into()));
    }
    let mut cells = Vec::new();
    for member in class_members {
        let reduction = reduce_to_echelon(member, ReductionPolicy::Leftmost)?;
        if reduction.echelon.map != *echelon {
            return Err(Error::Precondition(
                "class member does not reduce to the given echelon map".into(),
            ));
        }
        if !reduction.trace.replay()? {
            return Err(Error::Precondition("trace replay mismatch".into()));
        }
        let order = reduction.echelon.order.clone();
        if cells.contains(&order) {
            return Err(Error::Precondition("duplicate time cell".into()));
        }
        cells.push(order);
    }
    let n = echelon.n;
    let domain = TimeDomain { cells, horizon: t };
    let volume_expected =
        domain.cells.len() as f64 * t.powi(n as i32) / (1..=n).map(|i| i as f64).product::<f64>();

    let hits: usize = (0..mc_samples)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::substream(seed, &[0x7d0, s as u64]);
            let times: Vec<f64> = (0..n).map(|_| r.gen::<f64>() * t).collect();
            usize::from(domain.contains(&times))
        })
        .sum();
    let p_hat = hits as f64 / mc_samples as f64;
    let volume_mc = p_hat * t.powi(n as i32);
    let se = (p_hat * (1.0 - p_hat) / mc_samples as f64).sqrt() * t.powi(n as i32);
    let ok = (volume_mc - volume_expected).abs() <= 3.0 * se + 1e-12;
    Ok(TimeDomainReport {
        domain,
        volume_mc,
        volume_expected,
        mc_stderr: se,
        ok,
    })
}
