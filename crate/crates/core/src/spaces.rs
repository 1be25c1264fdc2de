//! Weighted L-infinity machinery: brackets, polynomial weights, free
//! transport, tensor powers, sampled sup-norm estimation, and the
//! exponentially weighted hierarchy norm.

use crate::error::{Error, Result};
use crate::rng::{self, hash_f64};
use crate::vec::VecD;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

/// Weight and regime parameters (d, p, q, alpha, beta, mu, T).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightParams {
    pub d: usize,
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub t_horizon: f64,
}

impl WeightParams {
    pub fn new(d: usize, p: f64, q: f64, alpha: f64, beta: f64, mu: f64, t_horizon: f64) -> Result<Self> {
        if d < 3 {
            return Err(Error::Precondition(format!("d = {d} < 3")));
        }
        if p <= 1.0 {
            return Err(Error::Precondition(format!("p = {p} must exceed 1")));
        }
        if alpha <= 0.0 || beta <= 0.0 {
            return Err(Error::Precondition("alpha, beta must be positive".into()));
        }
        if t_horizon <= 0.0 {
            return Err(Error::Precondition("time horizon must be positive".into()));
        }
        Ok(WeightParams { d, p, q, alpha, beta, mu, t_horizon })
    }

    /// q must dominate both d-1+gamma and d-1 for the velocity estimates.
    pub fn check_kernel(&self, gamma: f64) -> Result<()> {
        let need = (self.d as f64 - 1.0 + gamma).max(self.d as f64 - 1.0);
        if self.q <= need {
            return Err(Error::Precondition(format!(
                "q = {} must exceed max(d-1+gamma, d-1) = {need}",
                self.q
            )));
        }
        Ok(())
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        let mut p = *self;
        p.mu = mu;
        p
    }
}

/// sqrt(1 + |y|^2)
pub fn bracket(y: &VecD) -> f64 {
    (1.0 + y.norm_sq()).sqrt()
}

/// Phase point of k particles: positions then velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub x: Vec<VecD>,
    pub v: Vec<VecD>,
}

impl PhaseState {
    pub fn new(x: Vec<VecD>, v: Vec<VecD>) -> Self {
        assert_eq!(x.len(), v.len());
        assert!(!x.is_empty());
        PhaseState { x, v }
    }

    pub fn single(x: VecD, v: VecD) -> Self {
        PhaseState { x: vec![x], v: vec![v] }
    }

    pub fn k(&self) -> usize {
        self.x.len()
    }

    pub fn dim(&self) -> usize {
        self.x[0].dim()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(VecD::is_finite) && self.v.iter().all(VecD::is_finite)
    }

    /// Free streaming: (X - sV, V).
    pub fn drift(&self, s: f64) -> PhaseState {
        PhaseState {
            x: self
                .x
                .iter()
                .zip(self.v.iter())
                .map(|(x, v)| x.add_scaled(-s, v))
                .collect(),
            v: self.v.clone(),
        }
    }

    /// Swap particles i and j (0-based).
    pub fn swapped(&self, i: usize, j: usize) -> PhaseState {
        let mut out = self.clone();
        out.x.swap(i, j);
        out.v.swap(i, j);
        out
    }

    pub fn push(&self, x: VecD, v: VecD) -> PhaseState {
        let mut out = self.clone();
        out.x.push(x);
        out.v.push(v);
        out
    }

    /// First k particles.
    pub fn truncate(&self, k: usize) -> PhaseState {
        PhaseState {
            x: self.x[..k].to_vec(),
            v: self.v[..k].to_vec(),
        }
    }

    pub fn concat(&self, other: &PhaseState) -> PhaseState {
        let mut out = self.clone();
        out.x.extend_from_slice(&other.x);
        out.v.extend_from_slice(&other.v);
        out
    }
}

/// prod_i <alpha x_i>^p * prod_i <beta v_i>^q
pub fn weight_eval(state: &PhaseState, params: &WeightParams) -> f64 {
    let mut w = 1.0;
    for x in &state.x {
        w *= bracket(&x.scale(params.alpha)).powf(params.p);
    }
    for v in &state.v {
        w *= bracket(&v.scale(params.beta)).powf(params.q);
    }
    w
}

/// Claimed pointwise bound |f| <= amp * prod <alpha x>^-p <beta v>^-q.
#[derive(Debug, Clone, Copy)]
pub struct Envelope {
    pub amp: f64,
    pub params: WeightParams,
}

type EvalFn = Arc<dyn Fn(f64, &PhaseState) -> f64 + Send + Sync>;

/// Immutable pure map from a k-particle phase point (and time) to a real.
///
/// Free transport is tracked as an additive drift applied at evaluation
/// time, so composed transports cancel exactly.
#[derive(Clone)]
pub struct DensityEvaluator {
    k: usize,
    d: usize,
    f: EvalFn,
    drift: f64,
    pub envelope: Option<Envelope>,
    pub symmetric: bool,
}

impl std::fmt::Debug for DensityEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityEvaluator")
            .field("k", &self.k)
            .field("d", &self.d)
            .field("drift", &self.drift)
            .field("symmetric", &self.symmetric)
            .field("envelope", &self.envelope.map(|e| e.amp))
            .finish()
    }
}

impl DensityEvaluator {
    pub fn from_fn<F>(k: usize, d: usize, f: F) -> Self
    where
        F: Fn(f64, &PhaseState) -> f64 + Send + Sync + 'static,
    {
        DensityEvaluator {
            k,
            d,
            f: Arc::new(f),
            drift: 0.0,
            envelope: None,
            symmetric: false,
        }
    }

    pub fn zero(k: usize, d: usize) -> Self {
        DensityEvaluator::from_fn(k, d, |_, _| 0.0)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn eval(&self, t: f64, state: &PhaseState) -> f64 {
        debug_assert_eq!(state.k(), self.k);
        if self.drift == 0.0 {
            (self.f)(t, state)
        } else {
            (self.f)(t, &state.drift(self.drift))
        }
    }

    pub fn mark_symmetric(mut self) -> Self {
        self.symmetric = true;
        self
    }

    /// Attach an envelope claim; spot-checked on a sampled cloud.
    pub fn with_envelope(mut self, env: Envelope, check_seed: u64, check_points: usize) -> Result<Self> {
        let cloud = SampleCloud::generate(&CloudSpec {
            kind: CloudKind::PseudoRandom,
            seed: check_seed,
            count: check_points,
            radius: RadiusPolicy::Fixed { rx: 6.0 / env.params.alpha, rv: 6.0 / env.params.beta },
        }, self.k, self.d);
        for pt in &cloud.points {
            let val = self.eval(0.0, pt).abs();
            let bound = env.amp * weight_eval(pt, &env.params).recip();
            if val > bound * (1.0 + 1e-9) + 1e-300 {
                return Err(Error::Precondition(format!(
                    "envelope violated: |f| = {val:.6e} exceeds {bound:.6e}"
                )));
            }
        }
        self.envelope = Some(env);
        Ok(self)
    }

    pub fn with_envelope_unchecked(mut self, env: Envelope) -> Self {
        self.envelope = Some(env);
        self
    }

    /// Free transport by s: the returned evaluator computes f(t, X - sV, V).
    /// Transports compose additively, so a transport and its inverse cancel
    /// to the identity evaluation path.
    pub fn transported(&self, s: f64) -> DensityEvaluator {
        let mut out = self.clone();
        out.drift += s;
        out.envelope = None;
        out
    }

    /// Freeze the time argument.
    pub fn at_time(&self, t_frozen: f64) -> DensityEvaluator {
        let inner = self.f.clone();
        DensityEvaluator {
            k: self.k,
            d: self.d,
            f: Arc::new(move |_, state: &PhaseState| inner(t_frozen, state)),
            drift: self.drift,
            envelope: self.envelope,
            symmetric: self.symmetric,
        }
    }

    /// Product over k slots of a single-particle function.
    pub fn tensor_power(&self, k: usize) -> DensityEvaluator {
        assert_eq!(self.k, 1, "tensor power takes a single-particle evaluator");
        assert!(k >= 1);
        if k == 1 {
            let mut out = self.clone();
            out.symmetric = true;
            return out;
        }
        let inner = self.clone();
        let env = self.envelope.map(|e| Envelope { amp: e.amp.powi(k as i32), params: e.params });
        DensityEvaluator {
            k,
            d: self.d,
            f: Arc::new(move |t, state: &PhaseState| {
                let mut prod = 1.0;
                for i in 0..state.k() {
                    prod *= inner.eval(t, &PhaseState::single(state.x[i], state.v[i]));
                    if prod == 0.0 {
                        return 0.0;
                    }
                }
                prod
            }),
            drift: 0.0,
            envelope: env,
            symmetric: true,
        }
    }

    /// Exchange particle slots j and j+1 (1-based slot index).
    pub fn swap_slots(&self, j: usize) -> DensityEvaluator {
        assert!(j >= 1 && j < self.k, "swap slot {j} out of range for k = {}", self.k);
        let inner = self.clone();
        DensityEvaluator {
            k: self.k,
            d: self.d,
            f: Arc::new(move |t, state: &PhaseState| inner.eval(t, &state.swapped(j - 1, j))),
            drift: 0.0,
            envelope: self.envelope,
            symmetric: self.symmetric,
        }
    }

    /// a*f + b*g, pointwise.
    pub fn linear_combination(a: f64, f: &DensityEvaluator, b: f64, g: &DensityEvaluator) -> DensityEvaluator {
        assert_eq!(f.k, g.k);
        assert_eq!(f.d, g.d);
        let (ff, gg) = (f.clone(), g.clone());
        DensityEvaluator {
            k: f.k,
            d: f.d,
            f: Arc::new(move |t, s: &PhaseState| a * ff.eval(t, s) + b * gg.eval(t, s)),
            drift: 0.0,
            envelope: None,
            symmetric: f.symmetric && g.symmetric,
        }
    }

    /// Wrap with a bounded concurrent value cache keyed on the quantized
    /// phase point. Values are deterministic, so insert races are benign.
    pub fn memoized(&self, capacity: usize) -> DensityEvaluator {
        let inner = self.clone();
        let cache = Arc::new(MemoCache::new(capacity));
        DensityEvaluator {
            k: self.k,
            d: self.d,
            f: Arc::new(move |t, state: &PhaseState| {
                let key = MemoCache::key(t, state);
                if let Some(v) = cache.get(&key) {
                    return v;
                }
                let v = inner.eval(t, state);
                cache.insert(key, v);
                v
            }),
            drift: 0.0,
            envelope: self.envelope,
            symmetric: self.symmetric,
        }
    }
}

/// Bounded last-write-wins value cache.
pub struct MemoCache {
    map: RwLock<HashMap<(u64, Box<[i64]>), f64>>,
    capacity: usize,
}

impl MemoCache {
    pub fn new(capacity: usize) -> Self {
        MemoCache { map: RwLock::new(HashMap::new()), capacity }
    }

    fn key(t: f64, state: &PhaseState) -> (u64, Box<[i64]>) {
        let mut coords = Vec::with_capacity(2 * state.k() * state.dim());
        for x in &state.x {
            for &c in x.as_slice() {
                coords.push(hash_f64(c) as i64);
            }
        }
        for v in &state.v {
            for &c in v.as_slice() {
                coords.push(hash_f64(c) as i64);
            }
        }
        (hash_f64(t), coords.into_boxed_slice())
    }

    fn get(&self, key: &(u64, Box<[i64]>)) -> Option<f64> {
        self.map.read().unwrap().get(key).copied()
    }

    fn insert(&self, key: (u64, Box<[i64]>), value: f64) {
        let mut map = self.map.write().unwrap();
        if map.len() < self.capacity {
            map.insert(key, value);
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub enum CloudKind {
    LowDiscrepancy,
    PseudoRandom,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum RadiusPolicy {
    Fixed { rx: f64, rv: f64 },
    /// Radii sized so the envelope weight outside the box is below eps.
    FromEnvelope { eps: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CloudSpec {
    pub kind: CloudKind,
    pub seed: u64,
    pub count: usize,
    pub radius: RadiusPolicy,
}

impl Default for CloudSpec {
    fn default() -> Self {
        CloudSpec {
            kind: CloudKind::LowDiscrepancy,
            seed: 0,
            count: 1 << 15,
            radius: RadiusPolicy::Fixed { rx: 8.0, rv: 8.0 },
        }
    }
}

/// Reproducible cloud of phase points.
#[derive(Debug, Clone)]
pub struct SampleCloud {
    pub points: Vec<PhaseState>,
    pub spec: CloudSpec,
}

const HALTON_PRIMES: [u64; 48] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223,
];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut inv = 0.0;
    let mut frac = 1.0 / base as f64;
    while index > 0 {
        inv += (index % base) as f64 * frac;
        index /= base;
        frac /= base as f64;
    }
    inv
}

impl SampleCloud {
    pub fn resolve_radii(radius: &RadiusPolicy, params: Option<&WeightParams>) -> (f64, f64) {
        match radius {
            RadiusPolicy::Fixed { rx, rv } => (*rx, *rv),
            RadiusPolicy::FromEnvelope { eps } => {
                let p = params.expect("envelope radius policy needs weight params");
                let rx = (eps.powf(-1.0 / p.p).powi(2) - 1.0).max(0.0).sqrt() / p.alpha;
                let rv = (eps.powf(-1.0 / p.q).powi(2) - 1.0).max(0.0).sqrt() / p.beta;
                (rx.clamp(1.0, 200.0), rv.clamp(1.0, 200.0))
            }
        }
    }

    pub fn generate(spec: &CloudSpec, k: usize, d: usize) -> SampleCloud {
        Self::generate_with_params(spec, k, d, None)
    }

    pub fn generate_with_params(
        spec: &CloudSpec,
        k: usize,
        d: usize,
        params: Option<&WeightParams>,
    ) -> SampleCloud {
        assert!(spec.count > 0, "cloud must be nonempty");
        let (rx, rv) = Self::resolve_radii(&spec.radius, params);
        let dims = 2 * k * d;
        assert!(dims <= HALTON_PRIMES.len(), "phase dimension too large for cloud generator");
        let mut points = Vec::with_capacity(spec.count);
        match spec.kind {
            CloudKind::LowDiscrepancy => {
                // seed shifts the sequence (Cranley-Patterson rotation)
                let mut rot = Vec::with_capacity(dims);
                let mut r = rng::substream(spec.seed, &[0xC0FFEE]);
                for _ in 0..dims {
                    rot.push(rand::Rng::gen::<f64>(&mut r));
                }
                for i in 0..spec.count {
                    let mut coords = Vec::with_capacity(dims);
                    for (dim_idx, &prime) in HALTON_PRIMES[..dims].iter().enumerate() {
                        let u = (radical_inverse(i as u64 + 1, prime) + rot[dim_idx]).fract();
                        coords.push(u);
                    }
                    points.push(coords_to_state(&coords, k, d, rx, rv));
                }
            }
            CloudKind::PseudoRandom => {
                let mut r = rng::substream(spec.seed, &[0xD1CE]);
                for _ in 0..spec.count {
                    let coords: Vec<f64> = (0..dims).map(|_| rand::Rng::gen::<f64>(&mut r)).collect();
                    points.push(coords_to_state(&coords, k, d, rx, rv));
                }
            }
        }
        // the origin is the argmax for every pure weight profile; include it
        if let Some(first) = points.first_mut() {
            *first = PhaseState::new(vec![VecD::zeros(d); k], vec![VecD::zeros(d); k]);
        }
        SampleCloud { points, spec: *spec }
    }

    /// k-particle cloud whose points replicate this 1-particle cloud on the
    /// diagonal, so tensor-power norms factor exactly.
    pub fn tensor_diagonal(&self, k: usize) -> SampleCloud {
        let points = self
            .points
            .iter()
            .map(|p| {
                assert_eq!(p.k(), 1);
                PhaseState::new(vec![p.x[0]; k], vec![p.v[0]; k])
            })
            .collect();
        SampleCloud { points, spec: self.spec }
    }
}

fn coords_to_state(coords: &[f64], k: usize, d: usize, rx: f64, rv: f64) -> PhaseState {
    let mut x = Vec::with_capacity(k);
    let mut v = Vec::with_capacity(k);
    for i in 0..k {
        let mut xi = VecD::zeros(d);
        let mut vi = VecD::zeros(d);
        for j in 0..d {
            xi.set(j, rx * (2.0 * coords[i * d + j] - 1.0));
            vi.set(j, rv * (2.0 * coords[(k + i) * d + j] - 1.0));
        }
        x.push(xi);
        v.push(vi);
    }
    PhaseState::new(x, v)
}

#[derive(Debug, Clone)]
pub struct SupEstimate {
    pub value: f64,
    pub arg: PhaseState,
    /// No envelope metadata: the estimate is only a certified lower bound.
    pub lower_bound_only: bool,
}

/// Weighted sup-norm estimate: cloud maximum of weight * |f| plus `refine`
/// rounds of per-coordinate pattern search around the best point.
///
/// The evaluator is queried at t = 0; freeze other times with `at_time`.
pub fn sup_norm_estimate(
    f: &DensityEvaluator,
    params: &WeightParams,
    cloud: &SampleCloud,
    refine: usize,
) -> Result<SupEstimate> {
    let objective = |state: &PhaseState| -> Result<f64> {
        let val = f.eval(0.0, state);
        if val.is_nan() {
            return Err(Error::Evaluation { time: 0.0, point: state.x.iter().chain(state.v.iter()).copied().collect() });
        }
        Ok(weight_eval(state, params) * val.abs())
    };

    let values: Vec<Result<f64>> = cloud.points.par_iter().map(objective).collect();
    let mut best_idx = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, val) in values.into_iter().enumerate() {
        let v = val?;
        if v > best_val {
            best_val = v;
            best_idx = i;
        }
    }
    let mut arg = cloud.points[best_idx].clone();
    let mut val = best_val;

    // per-coordinate pattern search; acceptance for one coordinate depends
    // only on that coordinate's factor, so tensor diagonals stay aligned
    let k = arg.k();
    let d = arg.dim();
    let mut step = 0.5;
    for _ in 0..refine {
        for part in 0..k {
            for (is_v, dim) in (0..2 * d).map(|c| (c >= d, c % d)) {
                let read = |s: &PhaseState| if is_v { s.v[part].get(dim) } else { s.x[part].get(dim) };
                let base = read(&arg);
                let scale = 1.0 + base.abs();
                for dir in [1.0, -1.0] {
                    let mut cand = arg.clone();
                    let coord = base + dir * step * scale;
                    if is_v {
                        cand.v[part].set(dim, coord);
                    } else {
                        cand.x[part].set(dim, coord);
                    }
                    let cv = objective(&cand)?;
                    if cv > val {
                        val = cv;
                        arg = cand;
                    }
                }
            }
        }
        step *= 0.5;
    }

    Ok(SupEstimate {
        value: val,
        arg,
        lower_bound_only: f.envelope.is_none(),
    })
}

#[derive(Debug, Clone)]
pub struct HierarchyNormEstimate {
    pub value: f64,
    pub arg_k: usize,
    pub per_k: Vec<f64>,
}

/// sup over k <= K of e^(mu k) ||f^(k)||, estimated on matched clouds.
pub fn hierarchy_norm(
    marginals: &[DensityEvaluator],
    params: &WeightParams,
    base_cloud: &SampleCloud,
    refine: usize,
) -> Result<HierarchyNormEstimate> {
    assert!(!marginals.is_empty());
    let mut best = f64::NEG_INFINITY;
    let mut arg_k = 1;
    let mut per_k = Vec::with_capacity(marginals.len());
    for (i, f) in marginals.iter().enumerate() {
        let k = i + 1;
        assert_eq!(f.k(), k, "marginal {k} has wrong particle count");
        let cloud = base_cloud.tensor_diagonal(k);
        // refinement runs on the first level only; diagonal replication of
        // the refined argmax keeps the tensor relation exact
        let est = sup_norm_estimate(f, params, &cloud, if k == 1 { refine } else { 0 })?;
        let weighted = (params.mu * k as f64).exp() * est.value;
        per_k.push(weighted);
        if weighted > best {
            best = weighted;
            arg_k = k;
        }
    }
    Ok(HierarchyNormEstimate { value: best, arg_k, per_k })
}
