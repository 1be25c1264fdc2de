//! Mild-solution machinery: Picard iteration for the Boltzmann equation,
//! residual and conservation checks, admissibility checks, finite mixtures
//! of tensorized states, hierarchy assembly, the ball-mass growth
//! diagnostic, and the uniqueness decay bound.
//!
//! The nested collision integrals are estimated by a randomized recursion:
//! the outermost time integral uses the full composite Gauss rule, inner
//! levels draw one Gauss node (proportionally to its weight) and one
//! collision sample per evaluation. Substreams are keyed on the quantized
//! evaluation point, so estimates are pure functions of the point and
//! successive Picard depths share their draws.

use crate::error::{Error, Result};
use crate::estimates::{constant_c, i_ell, sphere_area};
use crate::kinematics::{cross_section, post_collision, CrossSectionModel, ScatterDirection};
use crate::quad::{gauss_nodes, McAccumulator};
use crate::rng::{self, hash_f64};
use crate::spaces::{
    bracket, hierarchy_norm, sup_norm_estimate, weight_eval, CloudKind, CloudSpec,
    DensityEvaluator, Envelope, PhaseState, RadiusPolicy, SampleCloud, WeightParams,
};
use crate::vec::VecD;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverSpec {
    /// Picard depth.
    pub depth: usize,
    /// Smallness bound M; the regime needs M < (8C)^-1.
    pub m_bound: f64,
    /// Nodes of the composite Gauss rule on [0, t]; 8 supported.
    pub time_nodes: usize,
    /// Monte Carlo paths per time node in full-quality evaluations.
    pub outer_paths: usize,
    /// Paths per (node, term) in residual integrals.
    pub integral_paths: usize,
    pub proposal_sigma: f64,
    pub seed: u64,
    pub memo_capacity: usize,
}

impl SolverSpec {
    pub fn new(depth: usize, m_bound: f64, seed: u64) -> Result<Self> {
        if depth < 1 {
            return Err(Error::Precondition("depth must be at least 1".into()));
        }
        Ok(SolverSpec {
            depth,
            m_bound,
            time_nodes: 8,
            outer_paths: 64,
            integral_paths: 48,
            proposal_sigma: 1.5,
            seed,
            memo_capacity: 1 << 20,
        })
    }
}

/// Immutable data of one Boltzmann-equation solve.
#[derive(Clone)]
struct IterateCore {
    f0: DensityEvaluator,
    model: CrossSectionModel,
    seed: u64,
    time_nodes: usize,
    proposal_sigma: f64,
}

impl IterateCore {
    fn f0_at(&self, x: &VecD, v: &VecD) -> f64 {
        self.f0.eval(0.0, &PhaseState::single(*x, *v))
    }
}

fn point_ids(t: f64, state: &PhaseState) -> Vec<u64> {
    let mut ids = Vec::with_capacity(2 + 2 * state.k() * state.dim());
    ids.push(hash_f64(t));
    for x in &state.x {
        for &c in x.as_slice() {
            ids.push(hash_f64(c));
        }
    }
    for v in &state.v {
        for &c in v.as_slice() {
            ids.push(hash_f64(c));
        }
    }
    ids
}

type HatFn = Arc<dyn Fn(f64, &VecD, &VecD) -> f64 + Send + Sync>;

/// One-sample estimate of the net collision term hitting particle jp of a
/// transported k-particle marginal family, at the drifted point Y = X + sV.
fn collision_sample(
    family: &[(f64, HatFn)],
    core: &IterateCore,
    s: f64,
    state: &PhaseState,
    jp: usize,
    ids: &[u64],
) -> f64 {
    let d = state.dim();
    let mut r = rng::substream(core.seed, ids);
    let vj = state.v[jp - 1];
    let u = VecD::gaussian(&mut r, d, core.proposal_sigma);
    let density = (2.0 * PI * core.proposal_sigma * core.proposal_sigma).powf(-(d as f64) / 2.0)
        * (-u.norm_sq() / (2.0 * core.proposal_sigma * core.proposal_sigma)).exp();
    let v_new = vj.add(&u);
    let sigma = ScatterDirection::new(VecD::random_unit(&mut r, d)).expect("unit");
    let w = sphere_area(d) / density;
    let b = match cross_section(&core.model, &sigma, &u) {
        Ok(b) => b,
        Err(_) => return 0.0,
    };
    if b == 0.0 {
        return 0.0;
    }
    let shifted = state.drift(-s); // Y = X + sV
    let out = post_collision(&vj, &v_new, &sigma);
    let mut gain = shifted.push(shifted.x[jp - 1], out.v1_star);
    gain.v[jp - 1] = out.v_star;
    let loss = shifted.push(shifted.x[jp - 1], v_new);

    let eval_family = |st: &PhaseState| -> f64 {
        let mut total = 0.0;
        for (weight, hat) in family {
            let mut prod = *weight;
            for a in 0..st.k() {
                // transported coordinates of the solution marginal
                let xa = st.x[a].add_scaled(-s, &st.v[a]);
                prod *= hat(s, &xa, &st.v[a]);
                if prod == 0.0 {
                    break;
                }
            }
            total += prod;
        }
        total
    };
    b * w * (eval_family(&gain) - eval_family(&loss))
}

/// Transported Picard iterate at depth m, evaluated with a single randomly
/// drawn time node and a single collision sample per level.
fn cheap_hat(core: &IterateCore, m: usize, t: f64, x: &VecD, v: &VecD) -> f64 {
    let base = core.f0_at(x, v);
    if m == 0 || t <= 0.0 {
        return base;
    }
    let state = PhaseState::single(*x, *v);
    let mut ids = point_ids(t, &state);
    ids.push(0x9e1);
    let mut r = rng::substream(core.seed, &ids);
    // draw one Gauss node with probability proportional to its weight
    let nodes = gauss_nodes(core.time_nodes, 0.0, t);
    let mut pick = r.gen::<f64>() * t;
    let mut node = nodes[nodes.len() - 1].0;
    for &(s, w) in &nodes {
        if pick < w {
            node = s;
            break;
        }
        pick -= w;
    }
    let fam = family_of_level(core, m - 1);
    ids.push(0x0c1);
    base + t * collision_sample(&fam, core, node, &state, 1, &ids)
}

fn family_of_level(core: &IterateCore, level: usize) -> Vec<(f64, HatFn)> {
    let core = core.clone();
    vec![(
        1.0,
        Arc::new(move |s: f64, x: &VecD, v: &VecD| cheap_hat(&core, level, s, x, v)) as HatFn,
    )]
}

/// Full-quality transported iterate: composite Gauss rule with
/// `paths` collision samples per node.
fn full_hat(core: &IterateCore, m: usize, paths: usize, t: f64, x: &VecD, v: &VecD) -> f64 {
    let base = core.f0_at(x, v);
    if m == 0 || t <= 0.0 {
        return base;
    }
    let state = PhaseState::single(*x, *v);
    let (int, _) =
        mild_collision_integral_raw(core, &family_of_level(core, m - 1), 1, t, &state, paths);
    base + int
}

/// int_0^t [T^{-s} C^{k+1} F^{(k+1)}(s)](point) ds for a transported
/// marginal family, composite Gauss in time, `paths` samples per
/// (node, struck-particle) pair. Returns (value, stderr).
fn mild_collision_integral_raw(
    core: &IterateCore,
    family: &[(f64, HatFn)],
    k: usize,
    t: f64,
    state: &PhaseState,
    paths: usize,
) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    let nodes = gauss_nodes(core.time_nodes, 0.0, t);
    let base_ids = point_ids(t, state);
    let mut value = 0.0;
    let mut var = 0.0;
    for (j_node, &(s, w)) in nodes.iter().enumerate() {
        for jp in 1..=k {
            let samples: Vec<f64> = (0..paths)
                .into_par_iter()
                .map(|i| {
                    let mut ids = base_ids.clone();
                    ids.push(j_node as u64);
                    ids.push(jp as u64);
                    ids.push(i as u64);
                    collision_sample(family, core, s, state, jp, &ids)
                })
                .collect();
            let mut acc = McAccumulator::default();
            for v in samples {
                acc.push(v);
            }
            value += w * acc.mean();
            let se = acc.stderr();
            if se.is_finite() {
                var += w * w * se * se;
            }
        }
    }
    (value, var.sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PicardReport {
    /// delta_m = sampled sup |g^m - g^{m-1}| for m = 1..depth.
    pub deltas: Vec<f64>,
    /// delta_{m+1} / delta_m.
    pub ratios: Vec<f64>,
    pub norm_f0: f64,
    pub m_bound: f64,
    /// ||f0|| <= M/2 held on the sampled cloud.
    pub smallness_ok: bool,
}

/// Depth-limited mild solution of the Boltzmann equation.
#[derive(Clone)]
pub struct PicardSolution {
    core: IterateCore,
    pub depth: usize,
    pub params: WeightParams,
    pub spec: SolverSpec,
}

impl PicardSolution {
    /// Transported iterate T^{-t} f(t) at the stored depth, memoized.
    pub fn transported_evaluator(&self) -> DensityEvaluator {
        self.transported_at(self.depth, self.spec.outer_paths)
    }

    /// Transported iterate at a chosen depth and path budget.
    pub fn transported_at(&self, m: usize, paths: usize) -> DensityEvaluator {
        let core = self.core.clone();
        let amp = 2.0 * self.spec.m_bound;
        let params = self.params;
        DensityEvaluator::from_fn(1, params.d, move |t, s: &PhaseState| {
            full_hat(&core, m, paths, t, &s.x[0], &s.v[0])
        })
        .with_envelope_unchecked(Envelope { amp, params })
        .memoized(self.spec.memo_capacity)
    }

    /// The solution itself: f(t, X, V) = g_hat(t, X - tV, V).
    pub fn solution_evaluator(&self) -> DensityEvaluator {
        let hat = self.transported_evaluator();
        DensityEvaluator::from_fn(1, self.params.d, move |t, s: &PhaseState| {
            hat.eval(t, &s.drift(t))
        })
    }

    /// Single-draw variant used inside residual integrands.
    fn cheap_fn(&self, m: usize) -> HatFn {
        let core = self.core.clone();
        Arc::new(move |s: f64, x: &VecD, v: &VecD| cheap_hat(&core, m, s, x, v))
    }

    pub fn initial_data(&self) -> &DensityEvaluator {
        &self.core.f0
    }
}

pub fn default_probe_points(d: usize, seed: u64, count: usize) -> Vec<PhaseState> {
    let spec = CloudSpec {
        kind: CloudKind::LowDiscrepancy,
        seed,
        count,
        radius: RadiusPolicy::Fixed { rx: 2.0, rv: 2.0 },
    };
    SampleCloud::generate(&spec, 1, d).points
}

/// Picard iteration g^{m+1}(t) = f0 + int_0^t T^{-s} Q(g^m, g^m)(s) ds in
/// transported form. Returns the depth-limited solution and the observed
/// successive-difference decay.
pub fn picard_solve_be(
    f0: &DensityEvaluator,
    params: &WeightParams,
    model: &CrossSectionModel,
    spec: &SolverSpec,
) -> Result<(PicardSolution, PicardReport)> {
    if f0.k() != 1 {
        return Err(Error::Precondition(
            "initial data must be single-particle".into(),
        ));
    }
    if spec.time_nodes != 8 {
        return Err(Error::Precondition(
            "composite time rule supports 8 nodes".into(),
        ));
    }
    let cloud = SampleCloud::generate_with_params(
        &CloudSpec {
            kind: CloudKind::LowDiscrepancy,
            seed: rng::chain(spec.seed, &[0xf0]),
            count: 2048,
            radius: RadiusPolicy::FromEnvelope { eps: 1e-6 },
        },
        1,
        params.d,
        Some(params),
    );
    let norm_f0 = sup_norm_estimate(f0, params, &cloud, 10)?.value;
    let smallness_ok = norm_f0 <= spec.m_bound / 2.0;

    let core = IterateCore {
        f0: f0.clone(),
        model: model.clone(),
        seed: spec.seed,
        time_nodes: spec.time_nodes,
        proposal_sigma: spec.proposal_sigma,
    };
    let sol = PicardSolution {
        core: core.clone(),
        depth: spec.depth,
        params: *params,
        spec: *spec,
    };

    // successive differences at probe points and two time slices
    let probes = default_probe_points(params.d, rng::chain(spec.seed, &[0xde]), 12);
    let times = [0.5 * params.t_horizon, params.t_horizon];
    let mut deltas = Vec::with_capacity(spec.depth);
    for m in 1..=spec.depth {
        let mut delta = 0.0_f64;
        for &t in &times {
            for p in &probes {
                let a = full_hat(&core, m, spec.outer_paths, t, &p.x[0], &p.v[0]);
                let b = full_hat(&core, m - 1, spec.outer_paths, t, &p.x[0], &p.v[0]);
                delta = delta.max((a - b).abs());
            }
        }
        deltas.push(delta);
    }
    let ratios: Vec<f64> = deltas
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    for i in 1..ratios.len() {
        if ratios[i - 1] > 1.0 && ratios[i] > 1.0 {
            return Err(Error::DivergenceDetected { m1: i, m2: i + 1 });
        }
    }
    Ok((
        sol,
        PicardReport {
            deltas,
            ratios,
            norm_f0,
            m_bound: spec.m_bound,
            smallness_ok,
        },
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualEstimate {
    /// max over points of weight * |mild-form defect|
    pub weighted_sup: f64,
    /// stderr of the integral estimate at the maximizing point, weighted
    pub stderr_at_max: f64,
}

/// Weighted sup over probe points of
/// |T^{-t} f(t) - f0 - int_0^t T^{-s} Q(f, f)(s) ds|
/// for the depth-m iterate; the integral uses the same estimator that
/// builds depth m+1, so this is the sampled |g^m - g^{m+1}|.
pub fn be_residual(
    sol: &PicardSolution,
    m: usize,
    t: f64,
    points: &[PhaseState],
) -> Result<ResidualEstimate> {
    let family = vec![(1.0, sol.cheap_fn(m))];
    let mut sup = 0.0_f64;
    let mut se_at = 0.0;
    for p in points {
        let hat = full_hat(&sol.core, m, sol.spec.outer_paths, t, &p.x[0], &p.v[0]);
        let f0v = sol.core.f0_at(&p.x[0], &p.v[0]);
        let (int, se) =
            mild_collision_integral_raw(&sol.core, &family, 1, t, p, sol.spec.outer_paths);
        let w = weight_eval(p, &sol.params);
        let r = w * (hat - f0v - int).abs();
        if r > sup {
            sup = r;
            se_at = w * se;
        }
    }
    Ok(ResidualEstimate {
        weighted_sup: sup,
        stderr_at_max: se_at,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub now: f64,
    pub init: f64,
    pub defect: f64,
    /// 3 sigma of the paired Monte Carlo plus the depth-truncation slack.
    pub combined_err: f64,
    pub ok: bool,
}

use crate::collision::MomentKind;

/// Velocity moment of the solution at fixed x against the initial datum.
pub fn conservation_moments(
    sol: &PicardSolution,
    t: f64,
    x: &VecD,
    which: MomentKind,
    mc_samples: usize,
    residual_hint: f64,
) -> Result<MomentReport> {
    let params = &sol.params;
    let gamma = sol.core.model.gamma;
    if gamma < 0.0 {
        return Err(Error::Precondition(
            "conservation laws need gamma >= 0".into(),
        ));
    }
    if params.p <= params.d as f64 {
        return Err(Error::Precondition("conservation laws need p > d".into()));
    }
    if params.q <= which.q_threshold(params.d, gamma) {
        return Err(Error::Precondition(format!(
            "q = {} below the moment threshold {}",
            params.q,
            which.q_threshold(params.d, gamma)
        )));
    }
    let d = params.d;
    let hat = sol.transported_evaluator();
    let sigma_prop = 1.2 * sol.spec.proposal_sigma;
    let chunk = 512usize;
    let tasks = mc_samples.div_ceil(chunk);
    let accs: Vec<(McAccumulator, McAccumulator)> = (0..tasks)
        .into_par_iter()
        .map(|task| {
            let mut r = rng::substream(sol.spec.seed, &[0x4040, task as u64]);
            let mut now = McAccumulator::default();
            let mut init = McAccumulator::default();
            let lo = task * chunk;
            let hi = ((task + 1) * chunk).min(mc_samples);
            for _ in lo..hi {
                let v = VecD::gaussian(&mut r, d, sigma_prop);
                let pdf = (2.0 * PI * sigma_prop * sigma_prop).powf(-(d as f64) / 2.0)
                    * (-v.norm_sq() / (2.0 * sigma_prop * sigma_prop)).exp();
                let phi = which.eval(&v);
                // f(t, x, v) = g_hat(t, x - tv, v)
                let st = PhaseState::single(x.add_scaled(-t, &v), v);
                now.push(hat.eval(t, &st) * phi / pdf);
                init.push(sol.core.f0_at(x, &v) * phi / pdf);
            }
            (now, init)
        })
        .collect();
    let mut now = McAccumulator::default();
    let mut init = McAccumulator::default();
    for (a, b) in &accs {
        now.merge(a);
        init.merge(b);
    }
    // depth-truncation slack: pointwise |f - f_exact| <= Delta <.>^-q with
    // Delta about twice the observed mild residual
    let q = params.q;
    let tail_factor = match which {
        MomentKind::Mass => i_ell(d, q)?,
        MomentKind::Momentum(_) => i_ell(d, q - 1.0)?,
        MomentKind::Energy => i_ell(d, q - 2.0)? - i_ell(d, q)?,
    } * params.beta.powf(-(d as f64));
    let slack = 2.0 * residual_hint * tail_factor;
    let mc_err = 3.0 * (now.stderr().powi(2) + init.stderr().powi(2)).sqrt();
    let defect = (now.mean() - init.mean()).abs();
    let combined = mc_err + slack;
    Ok(MomentReport {
        now: now.mean(),
        init: init.mean(),
        defect,
        combined_err: combined,
        ok: defect <= combined.max(1e-12),
    })
}

/// Radial sampler approximating the profile r^{d-1} <r>^{-e} on a
/// log-spaced grid. Sampling is piecewise uniform in radius per cell and
/// `density` reports exactly that sampling density, so importance weights
/// are unbiased whatever the grid resolution.
pub struct BracketSampler {
    radii: Vec<f64>,
    cdf: Vec<f64>,
    pub normalizer: f64,
    d: usize,
}

impl BracketSampler {
    pub fn new(d: usize, e: f64) -> Result<Self> {
        if e <= d as f64 {
            return Err(Error::Precondition(format!(
                "bracket sampler needs exponent > d, got {e} <= {d}"
            )));
        }
        let profile = |r: f64| r.powf(d as f64 - 1.0) * (1.0 + r * r).powf(-e / 2.0);
        // radius window sized so the untabulated tail is negligible
        let mut r_max: f64 = 4.0;
        loop {
            let tail = r_max.powf(d as f64 - e) / (e - d as f64);
            let mass = crate::quad::adaptive(profile, 0.0, r_max, 1e-12, 1e-9).value;
            if tail < 1e-7 * mass || r_max >= 1e7 {
                break;
            }
            r_max *= 4.0;
        }
        let r_lo = 1e-3;
        let n = 2048usize;
        let mut radii = Vec::with_capacity(n + 2);
        radii.push(0.0);
        radii.push(r_lo);
        let ratio = (r_max / r_lo).ln() / n as f64;
        for i in 1..=n {
            radii.push(r_lo * (ratio * i as f64).exp());
        }
        let mut cdf = Vec::with_capacity(radii.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for w in radii.windows(2) {
            acc += crate::quad::adaptive(profile, w[0], w[1], 1e-14, 1e-9).value;
            cdf.push(acc);
        }
        let normalizer = acc;
        for c in &mut cdf {
            *c /= normalizer;
        }
        Ok(BracketSampler {
            radii,
            cdf,
            normalizer,
            d,
        })
    }

    fn cell_of_radius(&self, r: f64) -> Option<usize> {
        if r < 0.0 || r > *self.radii.last().unwrap() {
            return None;
        }
        let idx = self.radii.partition_point(|&edge| edge < r);
        Some(idx.clamp(1, self.radii.len() - 1))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> VecD {
        let u: f64 = rng.gen();
        let idx = self
            .cdf
            .partition_point(|&c| c < u)
            .clamp(1, self.radii.len() - 1);
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        let r = self.radii[idx - 1] + frac * (self.radii[idx] - self.radii[idx - 1]);
        VecD::random_unit(rng, self.d).scale(r)
    }

    /// Sampling density at a point of R^d; zero outside the radius window.
    pub fn density(&self, y: &VecD) -> f64 {
        let r = y.norm();
        match self.cell_of_radius(r) {
            None => 0.0,
            Some(idx) => {
                let p_radial =
                    (self.cdf[idx] - self.cdf[idx - 1]) / (self.radii[idx] - self.radii[idx - 1]);
                p_radial / (sphere_area(self.d) * r.powf(self.d as f64 - 1.0).max(1e-300))
            }
        }
    }
}

/// Phase-space proposal matched to the bracket weights: positions from the
/// p-profile scaled by 1/alpha, velocities from the q-profile by 1/beta.
pub struct PhaseProposal {
    xs: BracketSampler,
    vs: BracketSampler,
    alpha: f64,
    beta: f64,
}

impl PhaseProposal {
    pub fn new(params: &WeightParams) -> Result<Self> {
        Ok(PhaseProposal {
            xs: BracketSampler::new(params.d, params.p)?,
            vs: BracketSampler::new(params.d, params.q)?,
            alpha: params.alpha,
            beta: params.beta,
        })
    }

    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (VecD, VecD, f64) {
        let x = self.xs.sample(rng).scale(1.0 / self.alpha);
        let v = self.vs.sample(rng).scale(1.0 / self.beta);
        let dens = self.xs.density(&x.scale(self.alpha)) * self.alpha.powi(x.dim() as i32)
            * self.vs.density(&v.scale(self.beta))
            * self.beta.powi(v.dim() as i32);
        (x, v, dens)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub min_sampled: f64,
    pub nonneg_ok: bool,
    /// (integral estimate, stderr, pass) per level k.
    pub normalization: Vec<(f64, f64, bool)>,
    /// (max |g^k - marginal of g^{k+1}|, 3 sigma band, pass) per level.
    pub marginal_consistency: Vec<(f64, f64, bool)>,
    pub symmetry_ok: bool,
    pub all_ok: bool,
}

/// Nonnegativity, normalization, marginal consistency and symmetry of a
/// finite marginal sequence G = (g^(1), ..., g^(K)).
pub fn admissibility_check(
    marginals: &[DensityEvaluator],
    params: &WeightParams,
    mc_samples: usize,
    seed: u64,
) -> Result<AdmissibilityReport> {
    if marginals.len() < 2 {
        return Err(Error::Precondition("need at least K = 2 levels".into()));
    }
    let proposal = PhaseProposal::new(params)?;

    let mut min_sampled = f64::INFINITY;
    let mut symmetry_ok = true;
    let mut normalization = Vec::new();
    let mut marginal_consistency = Vec::new();

    for (i, g) in marginals.iter().enumerate() {
        let k = i + 1;
        if g.k() != k {
            return Err(Error::Precondition(format!(
                "marginal {k} has wrong slot count"
            )));
        }
        let mut acc = McAccumulator::default();
        let mut r = rng::substream(seed, &[0xad, k as u64]);
        for _ in 0..mc_samples {
            let mut xs = Vec::with_capacity(k);
            let mut vs = Vec::with_capacity(k);
            let mut dens = 1.0;
            for _ in 0..k {
                let (x, v, q) = proposal.sample_pair(&mut r);
                xs.push(x);
                vs.push(v);
                dens *= q;
            }
            let st = PhaseState::new(xs, vs);
            let val = g.eval(0.0, &st);
            min_sampled = min_sampled.min(val);
            if k >= 2 {
                let sw = g.eval(0.0, &st.swapped(0, 1));
                if (val - sw).abs() > 1e-12 * (1.0 + val.abs()) {
                    symmetry_ok = false;
                }
            }
            acc.push(val / dens);
        }
        let ok = (acc.mean() - 1.0).abs() <= 3.0 * acc.stderr();
        normalization.push((acc.mean(), acc.stderr(), ok));
    }

    // marginal consistency: g^(k)(z) vs int g^(k+1)(z, zeta) dzeta
    let inner_n = (mc_samples / 2).max(256);
    for i in 0..marginals.len() - 1 {
        let k = i + 1;
        let g = &marginals[i];
        let g_up = &marginals[i + 1];
        let mut worst = 0.0_f64;
        let mut band = 0.0_f64;
        let mut all_ok = true;
        let mut r = rng::substream(seed, &[0xabc, k as u64]);
        for _ in 0..8 {
            let mut xs = Vec::with_capacity(k);
            let mut vs = Vec::with_capacity(k);
            for _ in 0..k {
                let (x, v, _) = proposal.sample_pair(&mut r);
                xs.push(x);
                vs.push(v);
            }
            let z = PhaseState::new(xs, vs);
            let mut acc = McAccumulator::default();
            for _ in 0..inner_n {
                let (x, v, dens) = proposal.sample_pair(&mut r);
                acc.push(g_up.eval(0.0, &z.push(x, v)) / dens);
            }
            let direct = g.eval(0.0, &z);
            let dev = (acc.mean() - direct).abs();
            let this_band = 3.0 * acc.stderr() + 1e-12 * (1.0 + direct.abs());
            if dev > this_band {
                all_ok = false;
            }
            if dev > worst {
                worst = dev;
                band = this_band;
            }
        }
        marginal_consistency.push((worst, band, all_ok));
    }

    let nonneg_ok = min_sampled >= -1e-12;
    let all_ok = nonneg_ok
        && symmetry_ok
        && normalization.iter().all(|&(_, _, ok)| ok)
        && marginal_consistency.iter().all(|&(_, _, ok)| ok);
    Ok(AdmissibilityReport {
        min_sampled,
        nonneg_ok,
        normalization,
        marginal_consistency,
        symmetry_ok,
        all_ok,
    })
}

/// One atom of a finite mixing measure: a weight and a probability density
/// with envelope metadata.
#[derive(Clone)]
pub struct MixAtom {
    pub weight: f64,
    pub h0: DensityEvaluator,
}

/// Finite atomic mixing measure over single-particle densities.
#[derive(Clone)]
pub struct MixingMeasure {
    pub atoms: Vec<MixAtom>,
}

impl MixingMeasure {
    /// Validates weights, sampled nonnegativity and normalization of every
    /// atom. Atoms must carry envelope metadata.
    pub fn new(atoms: Vec<MixAtom>, mc_samples: usize, seed: u64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Precondition(
                "mixture needs at least one atom".into(),
            ));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "weights sum to {total}, not 1"
            )));
        }
        for (i, atom) in atoms.iter().enumerate() {
            if atom.weight <= 0.0 {
                return Err(Error::Precondition("weights must be positive".into()));
            }
            let env = atom
                .h0
                .envelope
                .ok_or_else(|| Error::Precondition(format!("atom {i} lacks an envelope")))?;
            let proposal = PhaseProposal::new(&env.params)?;
            let mut r = rng::substream(seed, &[0x80, i as u64]);
            let mut acc = McAccumulator::default();
            for _ in 0..mc_samples {
                let (x, v, dens) = proposal.sample_pair(&mut r);
                let val = atom.h0.eval(0.0, &PhaseState::single(x, v));
                if val < -1e-12 {
                    return Err(Error::Precondition(format!(
                        "atom {i} negative at a sampled point: {val}"
                    )));
                }
                acc.push(val / dens);
            }
            if (acc.mean() - 1.0).abs() > (3.0 * acc.stderr()).max(1e-3) {
                return Err(Error::Precondition(format!(
                    "atom {i} integrates to {} +- {}, not 1",
                    acc.mean(),
                    acc.stderr()
                )));
            }
        }
        Ok(MixingMeasure { atoms })
    }
}

/// g^(k) = sum_i w_i h_i^{tensor k}.
pub fn mixture_marginal(pi: &MixingMeasure, k: usize) -> DensityEvaluator {
    assert!(k >= 1);
    let d = pi.atoms[0].h0.dim();
    let parts: Vec<(f64, DensityEvaluator)> = pi
        .atoms
        .iter()
        .map(|a| (a.weight, a.h0.tensor_power(k)))
        .collect();
    let env = pi.atoms[0].h0.envelope.map(|e| Envelope {
        amp: pi
            .atoms
            .iter()
            .map(|a| a.weight * a.h0.envelope.map(|ae| ae.amp).unwrap_or(e.amp).powi(k as i32))
            .sum(),
        params: e.params,
    });
    let mut out = DensityEvaluator::from_fn(k, d, move |t, s: &PhaseState| {
        parts.iter().map(|(w, te)| w * te.eval(t, s)).sum()
    })
    .mark_symmetric();
    if let Some(env) = env {
        out = out.with_envelope_unchecked(env);
    }
    out
}

/// Depth-limited hierarchy solution assembled from per-atom solves.
pub struct HierarchySolution {
    pub atoms: Vec<(f64, PicardSolution)>,
    /// Memoized transported single-particle evaluator per atom.
    hats: Vec<DensityEvaluator>,
    pub k_max: usize,
}

impl HierarchySolution {
    /// T^{-t} f^(k)(t) as an evaluator.
    pub fn transported_marginal(&self, k: usize) -> DensityEvaluator {
        assert!(k >= 1 && k <= self.k_max + 1);
        let weights: Vec<f64> = self.atoms.iter().map(|(w, _)| *w).collect();
        let hats = self.hats.clone();
        let d = self.hats[0].dim();
        DensityEvaluator::from_fn(k, d, move |t, s: &PhaseState| {
            let mut total = 0.0;
            for (w, hat) in weights.iter().zip(hats.iter()) {
                let mut prod = *w;
                for a in 0..s.k() {
                    prod *= hat.eval(t, &PhaseState::single(s.x[a], s.v[a]));
                    if prod == 0.0 {
                        break;
                    }
                }
                total += prod;
            }
            total
        })
        .mark_symmetric()
    }

    /// f^(k)(t) itself.
    pub fn solution_marginal(&self, k: usize) -> DensityEvaluator {
        let hat = self.transported_marginal(k);
        let d = self.hats[0].dim();
        DensityEvaluator::from_fn(k, d, move |t, s: &PhaseState| hat.eval(t, &s.drift(t)))
            .mark_symmetric()
    }

    pub fn initial_marginal(&self, k: usize) -> DensityEvaluator {
        let pi = MixingMeasure {
            atoms: self
                .atoms
                .iter()
                .map(|(w, sol)| MixAtom {
                    weight: *w,
                    h0: sol.initial_data().clone(),
                })
                .collect(),
        };
        mixture_marginal(&pi, k)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyReport {
    pub c_master: f64,
    pub e_mu: f64,
    pub mu_prime: f64,
    pub atom_norms: Vec<f64>,
    /// max over sampled time slices of the transported hierarchy norm.
    pub transported_norm: f64,
    pub norm_ok: bool,
    /// For tensorized (single-atom) data, the initial-norm bound.
    pub tensor_bound: Option<f64>,
    pub tensor_bound_ok: Option<bool>,
}

/// Solve the hierarchy for a finite mixture: one Boltzmann solve per atom
/// with M = e^-mu, under e^mu > 8 C and atom norms below e^-mu' with
/// mu' = mu + ln 2.
pub fn solve_hierarchy(
    pi: &MixingMeasure,
    params: &WeightParams,
    model: &CrossSectionModel,
    spec: &SolverSpec,
    uq_estimate: f64,
) -> Result<(HierarchySolution, HierarchyReport)> {
    params.check_kernel(model.gamma)?;
    let c_master = constant_c(params, model, uq_estimate)?;
    let e_mu = params.mu.exp();
    if e_mu <= 8.0 * c_master {
        return Err(Error::ParameterRegime(format!(
            "e^mu = {e_mu:.6e} must exceed 8C = {:.6e}",
            8.0 * c_master
        )));
    }
    let mu_prime = params.mu + 2.0_f64.ln();
    let m_bound = (-params.mu).exp();

    let cloud = SampleCloud::generate_with_params(
        &CloudSpec {
            kind: CloudKind::LowDiscrepancy,
            seed: rng::chain(spec.seed, &[0xa11]),
            count: 2048,
            radius: RadiusPolicy::FromEnvelope { eps: 1e-6 },
        },
        1,
        params.d,
        Some(params),
    );

    let mut atoms = Vec::new();
    let mut hats = Vec::new();
    let mut atom_norms = Vec::new();
    for (i, atom) in pi.atoms.iter().enumerate() {
        let norm = sup_norm_estimate(&atom.h0, params, &cloud, 10)?.value;
        if norm > (-mu_prime).exp() * (1.0 + 1e-6) {
            return Err(Error::ParameterRegime(format!(
                "atom {i} norm {norm:.6e} exceeds e^-mu' = {:.6e}",
                (-mu_prime).exp()
            )));
        }
        atom_norms.push(norm);
        let mut sub = *spec;
        sub.m_bound = m_bound;
        sub.seed = rng::chain(spec.seed, &[i as u64]);
        let (sol, _report) = picard_solve_be(&atom.h0, params, model, &sub)?;
        hats.push(sol.transported_evaluator());
        atoms.push((atom.weight, sol));
    }
    let hs = HierarchySolution {
        atoms,
        hats,
        k_max: 4,
    };

    // transported hierarchy norm over sampled time slices
    let norm_cloud = SampleCloud::generate_with_params(
        &CloudSpec {
            kind: CloudKind::LowDiscrepancy,
            seed: rng::chain(spec.seed, &[0xa12]),
            count: 192,
            radius: RadiusPolicy::FromEnvelope { eps: 1e-4 },
        },
        1,
        params.d,
        Some(params),
    );
    let mut transported_norm = 0.0_f64;
    for slice in 0..=2 {
        let t = params.t_horizon * slice as f64 / 2.0;
        let marginals: Vec<DensityEvaluator> = (1..=hs.k_max)
            .map(|k| hs.transported_marginal(k).at_time(t))
            .collect();
        let est = hierarchy_norm(&marginals, params, &norm_cloud, 6)?;
        transported_norm = transported_norm.max(est.value);
    }
    let norm_ok = transported_norm <= 1.0 + 0.02;

    let (tensor_bound, tensor_bound_ok) = if pi.atoms.len() == 1 {
        // || F_0 ||_{mu'} = sup_k (e^{mu'} ||f_0||)^k over the tracked range
        let nf0 = atom_norms[0];
        let factor = mu_prime.exp() * nf0;
        let bound = (1..=hs.k_max)
            .map(|k| factor.powi(k as i32))
            .fold(f64::MIN, f64::max);
        (Some(bound), Some(transported_norm <= bound + 0.02))
    } else {
        (None, None)
    };

    Ok((
        hs,
        HierarchyReport {
            c_master,
            e_mu,
            mu_prime,
            atom_norms,
            transported_norm,
            norm_ok,
            tensor_bound,
            tensor_bound_ok,
        },
    ))
}

/// Weighted sup over probe points of the k-th hierarchy mild defect
/// |T^{-t} f^(k)(t) - f0^(k) - int_0^t T^{-s} C^{k+1} f^{(k+1)}(s) ds|.
pub fn hierarchy_residual(
    hs: &HierarchySolution,
    k: usize,
    t: f64,
    points: &[PhaseState],
) -> Result<ResidualEstimate> {
    if k > hs.k_max {
        return Err(Error::Precondition("k+1 marginal not tracked".into()));
    }
    let depth = hs.atoms[0].1.depth;
    let family: Vec<(f64, HatFn)> = hs
        .atoms
        .iter()
        .map(|(w, sol)| (*w, sol.cheap_fn(depth)))
        .collect();
    let core = &hs.atoms[0].1.core;
    let params = hs.atoms[0].1.params;
    let paths = hs.atoms[0].1.spec.outer_paths;
    let transported = hs.transported_marginal(k);
    let initial = hs.initial_marginal(k);
    let mut sup = 0.0_f64;
    let mut se_at = 0.0;
    for p in points {
        if p.k() != k {
            return Err(Error::Precondition(
                "probe point has wrong particle count".into(),
            ));
        }
        let hat = transported.eval(t, p);
        let f0v = initial.eval(0.0, p);
        let (int, se) = mild_collision_integral_raw(core, &family, k, t, p, paths);
        let w = weight_eval(p, &params);
        let r = w * (hat - f0v - int).abs();
        if r > sup {
            sup = r;
            se_at = w * se;
        }
    }
    Ok(ResidualEstimate {
        weighted_sup: sup,
        stderr_at_max: se_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChebyshevVerdict {
    Conforming,
    Violating,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChebyshevReport {
    /// r_k = int_{B^k} g^(k) / (int_B M)^k for k = 1..k_max.
    pub ratios: Vec<f64>,
    pub ratio_stderr: Vec<f64>,
    /// Geometric growth rate fitted to the r_k sequence.
    pub fitted_ratio: f64,
    pub fitted_ratio_stderr: f64,
    pub ball_mass_m: f64,
    pub verdict: ChebyshevVerdict,
}

/// Coordinate ball in phase space.
#[derive(Debug, Clone, Copy)]
pub struct PhaseBall {
    pub center_x: VecD,
    pub center_v: VecD,
    pub radius: f64,
}

impl PhaseBall {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (VecD, VecD) {
        let d = self.center_x.dim();
        let dim2 = 2 * d;
        // uniform in the 2d-ball: direction times radius * u^(1/2d)
        loop {
            let g: Vec<f64> = (0..dim2)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let norm: f64 = g.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let u: f64 = rng.gen::<f64>();
            let r = self.radius * u.powf(1.0 / dim2 as f64);
            let x = VecD::from_slice(&g[..d].iter().map(|c| c / norm * r).collect::<Vec<_>>());
            let v = VecD::from_slice(&g[d..].iter().map(|c| c / norm * r).collect::<Vec<_>>());
            return (self.center_x.add(&x), self.center_v.add(&v));
        }
    }

    fn volume(&self, d: usize) -> f64 {
        let dim2 = 2 * d;
        // even dimension: V_n = pi^{n/2} r^n / (n/2)!
        let half = dim2 / 2;
        let mut fact = 1.0;
        for i in 1..=half {
            fact *= i as f64;
        }
        PI.powi(half as i32) / fact * self.radius.powi(dim2 as i32)
    }
}

/// Ball-mass growth diagnostic: the sequence r_k stays bounded when every
/// atom sits inside the e^-mu' weighted ball, and grows geometrically as
/// soon as some atom carries ball mass above the reference profile.
pub fn chebyshev_support_diagnostic(
    marginals: &[DensityEvaluator],
    ball: &PhaseBall,
    params: &WeightParams,
    mu_prime: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<ChebyshevReport> {
    let d = params.d;
    let k_max = marginals.len();
    if k_max < 2 {
        return Err(Error::Precondition(
            "need at least two levels to fit growth".into(),
        ));
    }
    let vol = ball.volume(d);

    // reference mass: int_B M with M = e^-mu' <alpha x>^-p <beta v>^-q
    let mut r = rng::substream(seed, &[0xb0]);
    let mut m_acc = McAccumulator::default();
    for _ in 0..mc_samples {
        let (x, v) = ball.sample(&mut r);
        let m = (-mu_prime).exp()
            * bracket(&x.scale(params.alpha)).powf(-params.p)
            * bracket(&v.scale(params.beta)).powf(-params.q);
        m_acc.push(m);
    }
    let ball_mass_m = vol * m_acc.mean();

    let mut ratios = Vec::with_capacity(k_max);
    let mut ratio_stderr = Vec::with_capacity(k_max);
    for (i, g) in marginals.iter().enumerate() {
        let k = i + 1;
        if g.k() != k {
            return Err(Error::Precondition("marginal slot mismatch".into()));
        }
        let mut r = rng::substream(seed, &[0xb1, k as u64]);
        let mut acc = McAccumulator::default();
        for _ in 0..mc_samples {
            let mut xs = Vec::with_capacity(k);
            let mut vs = Vec::with_capacity(k);
            for _ in 0..k {
                let (x, v) = ball.sample(&mut r);
                xs.push(x);
                vs.push(v);
            }
            acc.push(g.eval(0.0, &PhaseState::new(xs, vs)));
        }
        let mass = vol.powi(k as i32) * acc.mean();
        let mass_se = vol.powi(k as i32) * acc.stderr();
        let denom = ball_mass_m.powi(k as i32);
        ratios.push(mass / denom);
        ratio_stderr.push(mass_se / denom);
    }

    // least-squares slope of ln r_k against k
    let mean_k = (k_max + 1) as f64 / 2.0;
    let mut sxx = 0.0;
    for i in 0..k_max {
        let k = (i + 1) as f64;
        sxx += (k - mean_k) * (k - mean_k);
    }
    let mut sxy = 0.0;
    let mut var_b = 0.0;
    for (i, &rk) in ratios.iter().enumerate() {
        let k = (i + 1) as f64;
        let y = rk.max(1e-300).ln();
        sxy += (k - mean_k) * y;
        let rel = if rk > 0.0 { ratio_stderr[i] / rk } else { 0.0 };
        var_b += ((k - mean_k) / sxx).powi(2) * rel * rel;
    }
    let b = sxy / sxx;
    let fitted_ratio = b.exp();
    let fitted_ratio_stderr = fitted_ratio * var_b.sqrt();
    let verdict = if fitted_ratio > 1.0 + 3.0 * fitted_ratio_stderr {
        ChebyshevVerdict::Violating
    } else {
        ChebyshevVerdict::Conforming
    };
    Ok(ChebyshevReport {
        ratios,
        ratio_stderr,
        fitted_ratio,
        fitted_ratio_stderr,
        ball_mass_m,
        verdict,
    })
}

/// 2 (2 e^-mu)^k (4 C e^-mu)^n * ||F||.
pub fn uniqueness_decay_bound(k: usize, n: usize, mu: f64, c: f64, norm_f: f64) -> f64 {
    let em = (-mu).exp();
    2.0 * (2.0 * em).powi(k as i32) * (4.0 * c * em).powi(n as i32) * norm_f
}

/// Monotone bracketing iterates used for the nonnegativity check: the
/// lower iterate feeds gains by itself and absorbs along the reference
/// solution; the upper iterate drops the loss term entirely. Every sample
/// of the lower iterate is nonnegative when f0 >= 0.
pub struct BracketIterates {
    core: IterateCore,
    pub depth: usize,
}

impl BracketIterates {
    pub fn new(sol: &PicardSolution, depth: usize) -> Self {
        BracketIterates {
            core: sol.core.clone(),
            depth,
        }
    }

    /// Absorption exponent: int_0^t of the transported loss frequency of
    /// the reference solution iterate, single-sample per node.
    fn absorption(&self, t: f64, x: &VecD, v: &VecD) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let d = x.dim();
        let nodes = gauss_nodes(self.core.time_nodes, 0.0, t);
        let state = PhaseState::single(*x, *v);
        let mut ids = point_ids(t, &state);
        ids.push(0xab5);
        let mut total = 0.0;
        for (jn, &(s, w)) in nodes.iter().enumerate() {
            let mut idn = ids.clone();
            idn.push(jn as u64);
            let mut r = rng::substream(self.core.seed, &idn);
            let u = VecD::gaussian(&mut r, d, self.core.proposal_sigma);
            let density = (2.0 * PI * self.core.proposal_sigma * self.core.proposal_sigma)
                .powf(-(d as f64) / 2.0)
                * (-u.norm_sq() / (2.0 * self.core.proposal_sigma * self.core.proposal_sigma))
                    .exp();
            let v1 = v.add(&u);
            let sigma = ScatterDirection::new(VecD::random_unit(&mut r, d)).expect("unit");
            let b = cross_section(&self.core.model, &sigma, &u).unwrap_or(0.0);
            // loss frequency against the depth-limited solution
            let y = x.add_scaled(s, v);
            let g1 = cheap_hat(&self.core, self.depth, s, &y.add_scaled(-s, &v1), &v1).max(0.0);
            total += w * b * sphere_area(d) / density * g1;
        }
        total.max(0.0)
    }

    /// Transported lower iterate l^m; nonnegative by construction.
    pub fn lower(&self, m: usize, t: f64, x: &VecD, v: &VecD) -> f64 {
        self.gain_iterate(m, t, x, v, true)
    }

    /// Pure-gain upper iterate; dominates the lower one sample-for-sample.
    pub fn upper(&self, m: usize, t: f64, x: &VecD, v: &VecD) -> f64 {
        self.gain_iterate(m, t, x, v, false)
    }

    fn gain_iterate(&self, m: usize, t: f64, x: &VecD, v: &VecD, absorbed: bool) -> f64 {
        let f0 = self.core.f0_at(x, v).max(0.0);
        if m == 0 {
            return if absorbed { 0.0 } else { f0 };
        }
        let absorb = if absorbed { self.absorption(t, x, v) } else { 0.0 };
        let head = f0 * (-absorb).exp();
        if t <= 0.0 {
            return head;
        }
        let state = PhaseState::single(*x, *v);
        let nodes = gauss_nodes(self.core.time_nodes, 0.0, t);
        let mut ids = point_ids(t, &state);
        ids.push(0x10e); // shared draws: the upper iterate dominates samplewise
        let mut gain_total = 0.0;
        let d = x.dim();
        for (jn, &(s, w)) in nodes.iter().enumerate() {
            let mut idn = ids.clone();
            idn.push(jn as u64);
            idn.push(m as u64);
            let mut r = rng::substream(self.core.seed, &idn);
            let u = VecD::gaussian(&mut r, d, self.core.proposal_sigma);
            let density = (2.0 * PI * self.core.proposal_sigma * self.core.proposal_sigma)
                .powf(-(d as f64) / 2.0)
                * (-u.norm_sq() / (2.0 * self.core.proposal_sigma * self.core.proposal_sigma))
                    .exp();
            let vj = *v;
            let v1 = vj.add(&u);
            let sigma = ScatterDirection::new(VecD::random_unit(&mut r, d)).expect("unit");
            let b = cross_section(&self.core.model, &sigma, &u).unwrap_or(0.0);
            if b == 0.0 {
                continue;
            }
            let out = post_collision(&vj, &v1, &sigma);
            let y = x.add_scaled(s, v);
            let ga = self.gain_iterate(m - 1, s, &y.add_scaled(-s, &out.v_star), &out.v_star, absorbed);
            let gb = self.gain_iterate(
                m - 1,
                s,
                &y.add_scaled(-s, &out.v1_star),
                &out.v1_star,
                absorbed,
            );
            // partial absorption over [s, t], linearly attributed
            let damp = if absorbed && t > 0.0 {
                (-(absorb * (t - s) / t)).exp()
            } else {
                1.0
            };
            gain_total += w * damp * b * sphere_area(d) / density * ga * gb;
        }
        head + gain_total.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const PI_POW3: f64 = PI * PI * PI;

    fn small_params(mu: f64) -> WeightParams {
        WeightParams::new(3, 2.0, 4.0, 1.0, 1.0, mu, 1.0).unwrap()
    }

    fn profile_f0(amp: f64, params: WeightParams) -> DensityEvaluator {
        DensityEvaluator::from_fn(1, params.d, move |_, s: &PhaseState| {
            amp * bracket(&s.x[0].scale(params.alpha)).powf(-params.p) * (-s.v[0].norm_sq()).exp()
        })
        .with_envelope_unchecked(Envelope { amp, params })
    }

    #[test]
    fn zero_data_stays_zero() {
        let params = small_params(0.0);
        let model = CrossSectionModel::hard_sphere(3);
        let spec = SolverSpec::new(3, 0.1, 5).unwrap();
        let f0 = DensityEvaluator::zero(1, 3).with_envelope_unchecked(Envelope {
            amp: 0.0,
            params,
        });
        let (sol, report) = picard_solve_be(&f0, &params, &model, &spec).unwrap();
        assert!(report.deltas.iter().all(|&d| d == 0.0));
        let hat = sol.transported_evaluator();
        let p = PhaseState::single(
            VecD::from_slice(&[0.2, 0.0, 0.1]),
            VecD::from_slice(&[1.0, -0.5, 0.0]),
        );
        assert_eq!(hat.eval(0.7, &p), 0.0);
    }

    #[test]
    fn zero_kernel_is_free_transport() {
        let params = small_params(0.0);
        let model = CrossSectionModel::free_transport(3);
        let spec = SolverSpec::new(3, 0.1, 6).unwrap();
        let f0 = profile_f0(0.02, params);
        let (sol, report) = picard_solve_be(&f0, &params, &model, &spec).unwrap();
        assert!(report.deltas.iter().all(|&d| d == 0.0));
        let probes = default_probe_points(3, 77, 8);
        let resid = be_residual(&sol, spec.depth, params.t_horizon, &probes).unwrap();
        assert!(resid.weighted_sup <= 1e-12, "{}", resid.weighted_sup);
    }

    #[test]
    fn small_data_contracts() {
        let params = small_params(0.0);
        let model = CrossSectionModel::hard_sphere(3);
        // the master constant is large here; stay deep inside the regime
        let spec = SolverSpec::new(4, 2e-3, 7).unwrap();
        let f0 = profile_f0(5e-4, params);
        let (sol, report) = picard_solve_be(&f0, &params, &model, &spec).unwrap();
        assert!(report.smallness_ok);
        for r in &report.ratios {
            assert!(*r <= 0.7, "ratios = {:?}", report.ratios);
        }
        let probes = default_probe_points(3, 78, 8);
        let r2 = be_residual(&sol, 2, params.t_horizon, &probes).unwrap();
        let r3 = be_residual(&sol, 3, params.t_horizon, &probes).unwrap();
        assert!(r3.weighted_sup < r2.weighted_sup);
    }

    #[test]
    fn residual_is_successive_difference() {
        let params = small_params(0.0);
        let model = CrossSectionModel::hard_sphere(3);
        let spec = SolverSpec::new(3, 2e-3, 9).unwrap();
        let f0 = profile_f0(5e-4, params);
        let (sol, _) = picard_solve_be(&f0, &params, &model, &spec).unwrap();
        let probes = default_probe_points(3, 79, 6);
        let t = params.t_horizon;
        let m = 2;
        let resid = be_residual(&sol, m, t, &probes).unwrap();
        let mut direct = 0.0_f64;
        for p in &probes {
            let a = full_hat(&sol.core, m, spec.outer_paths, t, &p.x[0], &p.v[0]);
            let b = full_hat(&sol.core, m + 1, spec.outer_paths, t, &p.x[0], &p.v[0]);
            direct = direct.max(weight_eval(p, &params) * (a - b).abs());
        }
        assert!(
            (resid.weighted_sup - direct).abs() <= 1e-12 * (1.0 + direct),
            "residual {} vs direct {}",
            resid.weighted_sup,
            direct
        );
    }

    #[test]
    fn gaussian_probability_atom() -> Result<()> {
        // probability atoms need p, q > d for the phase-space proposal
        let params = WeightParams::new(3, 4.0, 5.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let norm = (PI_POW3 * PI_POW3).sqrt();
        let h0 = DensityEvaluator::from_fn(1, 3, move |_, s: &PhaseState| {
            (-(s.x[0].norm_sq() + s.v[0].norm_sq())).exp() / norm
        })
        .with_envelope(Envelope { amp: 1.0, params }, 11, 200)?;
        let pi = MixingMeasure::new(vec![MixAtom { weight: 1.0, h0 }], 4000, 13)?;
        assert_eq!(pi.atoms.len(), 1);
        Ok(())
    }

    #[test]
    fn unnormalized_atom_rejected() {
        let params = WeightParams::new(3, 4.0, 5.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let h0 = DensityEvaluator::from_fn(1, 3, |_, s: &PhaseState| {
            2.0 * (-(s.x[0].norm_sq() + s.v[0].norm_sq())).exp() / (PI_POW3 * PI_POW3).sqrt()
        })
        .with_envelope_unchecked(Envelope {
            amp: 2.0,
            params,
        });
        assert!(MixingMeasure::new(vec![MixAtom { weight: 1.0, h0 }], 4000, 13).is_err());
    }

    #[test]
    fn mixture_marginal_values() {
        let params = small_params(0.0);
        let mk = |c: f64| {
            DensityEvaluator::from_fn(1, 3, move |_, s: &PhaseState| {
                c * (-(s.x[0].norm_sq() + s.v[0].norm_sq())).exp()
            })
            .with_envelope_unchecked(Envelope { amp: c, params })
        };
        let pi = MixingMeasure {
            atoms: vec![
                MixAtom {
                    weight: 0.5,
                    h0: mk(1.0),
                },
                MixAtom {
                    weight: 0.5,
                    h0: mk(3.0),
                },
            ],
        };
        let g1 = mixture_marginal(&pi, 1);
        let p = PhaseState::single(VecD::zeros(3), VecD::zeros(3));
        assert!((g1.eval(0.0, &p) - 2.0).abs() < 1e-14);
        let g2 = mixture_marginal(&pi, 2);
        let p2 = PhaseState::new(vec![VecD::zeros(3); 2], vec![VecD::zeros(3); 2]);
        assert!((g2.eval(0.0, &p2) - 5.0).abs() < 1e-14);
        assert!(g2.symmetric);
    }

    #[test]
    fn decay_bound_arithmetic() {
        // e^mu = 8C halves per level
        let c: f64 = 10.0;
        let mu = (8.0 * c).ln();
        let b0 = uniqueness_decay_bound(1, 0, mu, c, 1.0);
        let b1 = uniqueness_decay_bound(1, 1, mu, c, 1.0);
        assert!((b1 / b0 - 0.5).abs() < 1e-12);

        // e^mu = 4C exactly: constant in n
        let mu_c = 0.0;
        let c_q = 0.25; // 4 C e^-mu = 1 exactly
        let v0 = uniqueness_decay_bound(2, 0, mu_c, c_q, 1.0);
        for n in 1..=60 {
            assert_eq!(uniqueness_decay_bound(2, n, mu_c, c_q, 1.0), v0);
        }

        // strictly decreasing when e^mu > 4C
        let mu_g = (4.5 * c).ln();
        let mut prev = uniqueness_decay_bound(1, 0, mu_g, c, 1.0);
        for n in 1..=60 {
            let cur = uniqueness_decay_bound(1, n, mu_g, c, 1.0);
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn bracket_sampler_integrates() {
        let s = BracketSampler::new(3, 4.0).unwrap();
        // normalizer equals int_0^inf r^2 <r>^-2 ... = pi/4 for e = 4, d = 3
        assert!((s.normalizer - PI / 4.0).abs() < 1e-6, "{}", s.normalizer);
        let mut r = rng::substream(3, &[1]);
        let mut acc = McAccumulator::default();
        for _ in 0..20_000 {
            let y = s.sample(&mut r);
            acc.push((1.0 + y.norm_sq()).powf(-2.0) / s.density(&y));
        }
        let exact = i_ell(3, 4.0).unwrap();
        assert!(
            (acc.mean() - exact).abs() < 4.0 * acc.stderr().max(1e-3),
            "{} vs {exact}",
            acc.mean()
        );
    }

    #[test]
    fn ks_lower_nonnegative() {
        let params = small_params(0.0);
        let model = CrossSectionModel::hard_sphere(3);
        let spec = SolverSpec::new(2, 2e-3, 15).unwrap();
        let f0 = profile_f0(5e-4, params);
        let (sol, _) = picard_solve_be(&f0, &params, &model, &spec).unwrap();
        let br = BracketIterates::new(&sol, 2);
        let probes = default_probe_points(3, 91, 10);
        for p in &probes {
            for m in 1..=2 {
                let l = br.lower(m, params.t_horizon, &p.x[0], &p.v[0]);
                let u = br.upper(m, params.t_horizon, &p.x[0], &p.v[0]);
                assert!(l >= -1e-12, "lower iterate negative: {l}");
                assert!(u >= l - 1e-12, "upper below lower: {u} < {l}");
            }
        }
    }

    #[test]
    fn regime_check_rejected() {
        let params = small_params(0.1); // e^mu barely above 1
        let model = CrossSectionModel::hard_sphere(3);
        let spec = SolverSpec::new(2, 1e-3, 1).unwrap();
        let h0 = profile_f0(1e-4, params);
        let pi = MixingMeasure {
            atoms: vec![MixAtom { weight: 1.0, h0 }],
        };
        let err = solve_hierarchy(&pi, &params, &model, &spec, 10.0);
        assert!(matches!(err, Err(Error::ParameterRegime(_))));
    }

    #[test]
    fn admissibility_positive_and_negative_control() {
        let params = WeightParams::new(3, 4.0, 5.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let norm = (PI_POW3 * PI_POW3).sqrt();
        let h = DensityEvaluator::from_fn(1, 3, move |_, s: &PhaseState| {
            (-(s.x[0].norm_sq() + s.v[0].norm_sq())).exp() / norm
        });
        let good: Vec<DensityEvaluator> = (1..=3).map(|k| h.tensor_power(k)).collect();
        let report = admissibility_check(&good, &params, 6000, 21).unwrap();
        assert!(report.all_ok, "{report:?}");

        // deliberately unnormalized second level: flagged, not an error
        let mut bad = good.clone();
        bad[1] = DensityEvaluator::linear_combination(1.3, &good[1], 0.0, &good[1]);
        let report2 = admissibility_check(&bad, &params, 6000, 22).unwrap();
        assert!(!report2.all_ok);
        assert!(!report2.normalization[1].2);
    }
}
