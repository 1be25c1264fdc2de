//! Quadrature evaluation of the hierarchy gain/loss operators, the summed
//! collision operator, the bilinear Boltzmann operator, and weak-form
//! moment checks.

use crate::error::{Error, Result};
use crate::kinematics::{cross_section, post_collision, CrossSectionModel, ScatterDirection};
use crate::quad::{gauss_nodes, McAccumulator};
use crate::rng;
use crate::spaces::{DensityEvaluator, PhaseState};
use crate::vec::VecD;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum QuadKind {
    Mc {
        samples: usize,
        seed: u64,
    },
    /// Deterministic product rule; d = 3 only.
    Product {
        radial_nodes: usize,
        radial_cutoff: f64,
        sphere_polar: usize,
        sphere_azimuth: usize,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadSpec {
    pub kind: QuadKind,
    /// Width of the Gaussian partner proposal in MC mode.
    pub proposal_sigma: f64,
    pub u_floor: f64,
}

impl QuadSpec {
    pub fn mc(samples: usize, seed: u64) -> Self {
        QuadSpec {
            kind: QuadKind::Mc { samples, seed },
            proposal_sigma: 2.0,
            u_floor: 1e-14,
        }
    }

    pub fn product(radial_nodes: usize, radial_cutoff: f64, polar: usize, azimuth: usize) -> Self {
        QuadSpec {
            kind: QuadKind::Product {
                radial_nodes,
                radial_cutoff,
                sphere_polar: polar,
                sphere_azimuth: azimuth,
            },
            proposal_sigma: 2.0,
            u_floor: 1e-14,
        }
    }

    pub fn reseeded(mut self, seed: u64) -> Self {
        if let QuadKind::Mc { samples, .. } = self.kind {
            self.kind = QuadKind::Mc { samples, seed };
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollisionSign {
    Gain,
    Loss,
    Net,
}

/// Monte Carlo value with its standard error; product-rule results carry
/// stderr = 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McValue {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
    pub dropped: usize,
}

impl McValue {
    pub fn agrees_with(&self, other: &McValue, n_sigma: f64, fallback: f64) -> bool {
        let tol = n_sigma * (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        (self.value - other.value).abs() <= tol.max(fallback)
    }
}

/// Partner velocity proposal. Gaussian for cutoff-regular kernels; for
/// soft potentials a radial mixture puts half the mass on a power law
/// near u = 0 to tame the |u|^gamma singularity.
fn sample_partner<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    gamma: f64,
    sigma_prop: f64,
    v_anchor: &VecD,
) -> (VecD, f64) {
    if gamma >= 0.0 {
        let u = VecD::gaussian(rng, d, sigma_prop);
        let density = (2.0 * PI * sigma_prop * sigma_prop).powf(-(d as f64) / 2.0)
            * (-u.norm_sq() / (2.0 * sigma_prop * sigma_prop)).exp();
        (v_anchor.add(&u), 1.0 / density)
    } else {
        let a = d as f64 + gamma; // r^{d-1+gamma} integrable at zero
        let omega = VecD::random_unit(rng, d);
        let quantile: f64 = rng.gen::<f64>().max(1e-300);
        let r = if rng.gen::<bool>() {
            quantile.powf(1.0 / a)
        } else {
            // half-Gaussian radial tail
            loop {
                let g = VecD::gaussian(rng, d, sigma_prop);
                let n = g.norm();
                if n > 0.0 {
                    break n;
                }
            }
        };
        let gauss_radial = crate::estimates::sphere_area(d)
            * r.powf(d as f64 - 1.0)
            * (2.0 * PI * sigma_prop * sigma_prop).powf(-(d as f64) / 2.0)
            * (-r * r / (2.0 * sigma_prop * sigma_prop)).exp();
        let power_radial = if r <= 1.0 { a * r.powf(a - 1.0) } else { 0.0 };
        let p_r = 0.5 * power_radial + 0.5 * gauss_radial;
        let density = p_r / (crate::estimates::sphere_area(d) * r.powf(d as f64 - 1.0));
        (v_anchor.add(&omega.scale(r)), 1.0 / density)
    }
}

/// Gain/loss phase points for target particle j (1-based) hit by a fresh
/// particle with velocity v_new; the fresh particle sits at x_j.
fn collision_states(
    state: &PhaseState,
    j: usize,
    v_new: &VecD,
    sigma: &ScatterDirection,
) -> (PhaseState, PhaseState) {
    let xj = state.x[j - 1];
    let vj = state.v[j - 1];
    let out = post_collision(&vj, v_new, sigma);
    let mut gain = state.push(xj, out.v1_star);
    gain.v[j - 1] = out.v_star;
    let loss = state.push(xj, *v_new);
    (gain, loss)
}

fn signed(sign: CollisionSign, gain: f64, loss: f64) -> f64 {
    match sign {
        CollisionSign::Gain => gain,
        CollisionSign::Loss => loss,
        CollisionSign::Net => gain - loss,
    }
}

/// One gain/loss operator term: particle j of the k-particle state collides
/// with an integrated-out fresh particle, `f` being the (k+1)-particle
/// marginal evaluated at time t.
pub fn collision_term(
    f: &DensityEvaluator,
    j: usize,
    k: usize,
    sign: CollisionSign,
    state: &PhaseState,
    t: f64,
    model: &CrossSectionModel,
    quad: &QuadSpec,
) -> Result<McValue> {
    if j < 1 || j > k {
        return Err(Error::Precondition(format!("j = {j} out of 1..={k}")));
    }
    if f.k() != k + 1 {
        return Err(Error::Precondition(format!(
            "evaluator has {} slots, expected {}",
            f.k(),
            k + 1
        )));
    }
    if state.k() != k {
        return Err(Error::Precondition("state size mismatch".into()));
    }
    collision_term_inner(f, j, sign, state, t, model, quad, 0)
}

fn collision_term_inner(
    f: &DensityEvaluator,
    j: usize,
    sign: CollisionSign,
    state: &PhaseState,
    t: f64,
    model: &CrossSectionModel,
    quad: &QuadSpec,
    stream_tag: u64,
) -> Result<McValue> {
    let d = state.dim();
    let vj = state.v[j - 1];
    match quad.kind {
        QuadKind::Mc { samples, seed } => {
            let chunk = 2048usize;
            let tasks = samples.div_ceil(chunk);
            let parts: Vec<(McAccumulator, usize)> = (0..tasks)
                .into_par_iter()
                .map(|task| {
                    let mut r = rng::substream(seed, &[stream_tag, j as u64, task as u64]);
                    let mut acc = McAccumulator::default();
                    let mut dropped = 0usize;
                    let lo = task * chunk;
                    let hi = ((task + 1) * chunk).min(samples);
                    for _ in lo..hi {
                        let (v_new, w_u) =
                            sample_partner(&mut r, d, model.gamma, quad.proposal_sigma, &vj);
                        let sigma = ScatterDirection::new(VecD::random_unit(&mut r, d))
                            .expect("unit direction");
                        let w_sigma = crate::estimates::sphere_area(d);
                        let u = v_new.sub(&vj);
                        let b = match cross_section(model, &sigma, &u) {
                            Ok(b) => b,
                            Err(Error::SingularPoint { .. }) => {
                                dropped += 1;
                                acc.push(0.0);
                                continue;
                            }
                            Err(e) => return Err(e),
                        };
                        if b == 0.0 {
                            acc.push(0.0);
                            continue;
                        }
                        let (gain_state, loss_state) = collision_states(state, j, &v_new, &sigma);
                        let gain = match sign {
                            CollisionSign::Loss => 0.0,
                            _ => f.eval(t, &gain_state),
                        };
                        let loss = match sign {
                            CollisionSign::Gain => 0.0,
                            _ => f.eval(t, &loss_state),
                        };
                        acc.push(b * w_u * w_sigma * signed(sign, gain, loss));
                    }
                    Ok((acc, dropped))
                })
                .collect::<Result<_>>()?;
            let mut acc = McAccumulator::default();
            let mut dropped = 0usize;
            for (a, dr) in &parts {
                acc.merge(a);
                dropped += dr;
            }
            if dropped as f64 >= 1e-3 * samples as f64 {
                return Err(Error::DegenerateQuadrature { dropped, total: samples });
            }
            Ok(McValue {
                value: acc.mean(),
                stderr: acc.stderr(),
                samples,
                dropped,
            })
        }
        QuadKind::Product {
            radial_nodes,
            radial_cutoff,
            sphere_polar,
            sphere_azimuth,
        } => {
            if d != 3 {
                return Err(Error::Precondition(
                    "product quadrature implemented for d = 3 only".into(),
                ));
            }
            let radial = gauss_nodes(radial_nodes, 0.0, radial_cutoff);
            let sphere = sphere_product_nodes(sphere_polar, sphere_azimuth);
            let mut total = 0.0;
            let mut dropped = 0usize;
            let mut count = 0usize;
            for &(rad, w_r) in &radial {
                for &(omega, w_om) in &sphere {
                    let v_new = vj.add(&omega.scale(rad));
                    let u = v_new.sub(&vj);
                    let jac = rad * rad * w_r * w_om;
                    for &(sig, w_s) in &sphere {
                        count += 1;
                        let sigma = ScatterDirection::new(sig).expect("unit sigma");
                        let b = match cross_section(model, &sigma, &u) {
                            Ok(b) => b,
                            Err(Error::SingularPoint { .. }) => {
                                dropped += 1;
                                continue;
                            }
                            Err(e) => return Err(e),
                        };
                        if b == 0.0 {
                            continue;
                        }
                        let (gain_state, loss_state) = collision_states(state, j, &v_new, &sigma);
                        let gain = match sign {
                            CollisionSign::Loss => 0.0,
                            _ => f.eval(t, &gain_state),
                        };
                        let loss = match sign {
                            CollisionSign::Gain => 0.0,
                            _ => f.eval(t, &loss_state),
                        };
                        total += jac * w_s * b * signed(sign, gain, loss);
                    }
                }
            }
            if dropped as f64 >= 1e-3 * count as f64 {
                return Err(Error::DegenerateQuadrature { dropped, total: count });
            }
            Ok(McValue { value: total, stderr: 0.0, samples: count, dropped })
        }
    }
}

/// Product nodes on S^2: Gauss-Legendre in cos(theta) x uniform azimuth.
fn sphere_product_nodes(polar: usize, azimuth: usize) -> Vec<(VecD, f64)> {
    let cos_nodes = gauss_nodes(polar, -1.0, 1.0);
    let mut out = Vec::with_capacity(polar * azimuth);
    for &(c, wc) in &cos_nodes {
        let s = (1.0 - c * c).max(0.0).sqrt();
        for m in 0..azimuth {
            let phi = 2.0 * PI * (m as f64 + 0.5) / azimuth as f64;
            let dir = VecD::from_slice(&[s * phi.cos(), s * phi.sin(), c]);
            out.push((dir, wc * 2.0 * PI / azimuth as f64));
        }
    }
    out
}

/// Sum over j of the net gain/loss terms, with common draws across j.
pub fn full_collision(
    f: &DensityEvaluator,
    k: usize,
    state: &PhaseState,
    t: f64,
    model: &CrossSectionModel,
    quad: &QuadSpec,
) -> Result<McValue> {
    let mut value = 0.0;
    let mut var = 0.0;
    let mut samples = 0;
    let mut dropped = 0;
    for j in 1..=k {
        // stream_tag 0 for every j: identical primitive draws across terms
        let term = collision_term_inner(f, j, CollisionSign::Net, state, t, model, quad, 0)?;
        value += term.value;
        var += term.stderr * term.stderr;
        samples = term.samples;
        dropped += term.dropped;
    }
    Ok(McValue { value, stderr: var.sqrt(), samples, dropped })
}

/// Two-slot product evaluator g(x1, v1) h(x2, v2).
pub fn pair_product(g: &DensityEvaluator, h: &DensityEvaluator) -> DensityEvaluator {
    assert_eq!(g.k(), 1);
    assert_eq!(h.k(), 1);
    let (gg, hh) = (g.clone(), h.clone());
    DensityEvaluator::from_fn(2, g.dim(), move |t, s: &PhaseState| {
        gg.eval(t, &PhaseState::single(s.x[0], s.v[0])) * hh.eval(t, &PhaseState::single(s.x[1], s.v[1]))
    })
}

/// Bilinear Boltzmann operator Q(g, h)(t, x, v); reduces to the k = 1
/// net collision term applied to the two-slot product.
pub fn q_bilinear(
    g: &DensityEvaluator,
    h: &DensityEvaluator,
    x: &VecD,
    v: &VecD,
    t: f64,
    model: &CrossSectionModel,
    quad: &QuadSpec,
) -> Result<McValue> {
    let f2 = pair_product(g, h);
    collision_term(
        &f2,
        1,
        1,
        CollisionSign::Net,
        &PhaseState::single(*x, *v),
        t,
        model,
        quad,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MomentKind {
    Mass,
    /// One velocity component (0-based).
    Momentum(usize),
    Energy,
}

impl MomentKind {
    pub fn eval(&self, v: &VecD) -> f64 {
        match self {
            MomentKind::Mass => 1.0,
            MomentKind::Momentum(i) => v.get(*i),
            MomentKind::Energy => v.norm_sq(),
        }
    }

    /// Velocity-decay threshold on q needed for this moment.
    pub fn q_threshold(&self, d: usize, gamma: f64) -> f64 {
        let base = d as f64 + gamma;
        match self {
            MomentKind::Mass => base,
            MomentKind::Momentum(_) => base + 1.0,
            MomentKind::Energy => base + 2.0,
        }
    }
}

/// int Q(f, f)(t, x, v) phi(v) dv, which vanishes for the collision
/// invariants phi in {1, v_i, |v|^2}. Joint Monte Carlo over (v, v1, sigma).
pub fn weak_form_moment(
    f: &DensityEvaluator,
    phi: MomentKind,
    x: &VecD,
    t: f64,
    model: &CrossSectionModel,
    quad: &QuadSpec,
    q_of_f: f64,
) -> Result<McValue> {
    if model.gamma < 0.0 {
        return Err(Error::Precondition("weak-form moments need gamma >= 0".into()));
    }
    let d = f.dim();
    if q_of_f <= phi.q_threshold(d, model.gamma) {
        return Err(Error::Precondition(format!(
            "q = {q_of_f} below the moment threshold {}",
            phi.q_threshold(d, model.gamma)
        )));
    }
    let (samples, seed) = match quad.kind {
        QuadKind::Mc { samples, seed } => (samples, seed),
        _ => {
            return Err(Error::Precondition(
                "weak-form moments use MC quadrature".into(),
            ))
        }
    };
    let sigma_prop = quad.proposal_sigma;
    let chunk = 2048usize;
    let tasks = samples.div_ceil(chunk);
    let parts: Vec<(McAccumulator, usize)> = (0..tasks)
        .into_par_iter()
        .map(|task| {
            let mut r = rng::substream(seed, &[0x30337, task as u64]);
            let mut acc = McAccumulator::default();
            let mut dropped = 0usize;
            let lo = task * chunk;
            let hi = ((task + 1) * chunk).min(samples);
            for _ in lo..hi {
                let v = VecD::gaussian(&mut r, d, sigma_prop);
                let p_v = (2.0 * PI * sigma_prop * sigma_prop).powf(-(d as f64) / 2.0)
                    * (-v.norm_sq() / (2.0 * sigma_prop * sigma_prop)).exp();
                let (v1, w_u) = sample_partner(&mut r, d, model.gamma, sigma_prop, &v);
                let sigma = ScatterDirection::new(VecD::random_unit(&mut r, d)).expect("unit");
                let w_sigma = crate::estimates::sphere_area(d);
                let u = v1.sub(&v);
                let b = match cross_section(model, &sigma, &u) {
                    Ok(b) => b,
                    Err(Error::SingularPoint { .. }) => {
                        dropped += 1;
                        acc.push(0.0);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let out = post_collision(&v, &v1, &sigma);
                let fg = f.eval(t, &PhaseState::single(*x, out.v_star))
                    * f.eval(t, &PhaseState::single(*x, out.v1_star));
                let fl = f.eval(t, &PhaseState::single(*x, v))
                    * f.eval(t, &PhaseState::single(*x, v1));
                let value = b * (fg - fl) * phi.eval(&v) * w_u * w_sigma / p_v;
                acc.push(value);
            }
            Ok((acc, dropped))
        })
        .collect::<Result<_>>()?;
    let mut acc = McAccumulator::default();
    let mut dropped = 0usize;
    for (a, dr) in &parts {
        acc.merge(a);
        dropped += dr;
    }
    if dropped as f64 >= 1e-3 * samples as f64 {
        return Err(Error::DegenerateQuadrature { dropped, total: samples });
    }
    Ok(McValue { value: acc.mean(), stderr: acc.stderr(), samples, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::DensityEvaluator;

    fn gaussian_marginal(k: usize) -> DensityEvaluator {
        DensityEvaluator::from_fn(k, 3, |_, s: &PhaseState| {
            let vsq: f64 = s.v.iter().map(VecD::norm_sq).sum();
            let xsq: f64 = s.x.iter().map(VecD::norm_sq).sum();
            (-vsq).exp() * (1.0 + xsq).recip()
        })
        .mark_symmetric()
    }

    fn probe_state(k: usize) -> PhaseState {
        let mut r = rng::substream(99, &[k as u64]);
        PhaseState::new(
            (0..k).map(|_| VecD::gaussian(&mut r, 3, 0.5)).collect(),
            (0..k).map(|_| VecD::gaussian(&mut r, 3, 0.8)).collect(),
        )
    }

    #[test]
    fn zero_marginal_gives_zero() {
        let f = DensityEvaluator::zero(2, 3);
        let model = CrossSectionModel::hard_sphere(3);
        let quad = QuadSpec::mc(2000, 1);
        let out = collision_term(&f, 1, 1, CollisionSign::Net, &probe_state(1), 0.0, &model, &quad)
            .unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn gaussian_velocity_marginal_nets_to_zero() {
        // exp(-sum |v|^2) is a collision invariant, so gain == loss pointwise
        let f = gaussian_marginal(2);
        let model = CrossSectionModel::hard_sphere(3);
        let quad = QuadSpec::mc(40_000, 7);
        let out = collision_term(&f, 1, 1, CollisionSign::Net, &probe_state(1), 0.0, &model, &quad)
            .unwrap();
        // gain and loss integrands agree pointwise, so only rounding noise
        // survives; allow an absolute floor beside the 3-sigma band
        assert!(
            out.value.abs() <= (3.0 * out.stderr).max(1e-12),
            "{} vs {}",
            out.value,
            out.stderr
        );
    }

    #[test]
    fn net_equals_gain_minus_loss_same_stream() {
        let f = gaussian_marginal(2);
        let model = CrossSectionModel::hard_sphere(3);
        let quad = QuadSpec::mc(4000, 11);
        let s = probe_state(1);
        let net =
            collision_term(&f, 1, 1, CollisionSign::Net, &s, 0.0, &model, &quad).unwrap();
        let gain =
            collision_term(&f, 1, 1, CollisionSign::Gain, &s, 0.0, &model, &quad).unwrap();
        let loss =
            collision_term(&f, 1, 1, CollisionSign::Loss, &s, 0.0, &model, &quad).unwrap();
        assert!((net.value - (gain.value - loss.value)).abs() < 1e-12 * (1.0 + gain.value.abs()));
    }

    #[test]
    fn linear_in_the_marginal() {
        let f1 = gaussian_marginal(2);
        let f2 = DensityEvaluator::from_fn(2, 3, |_, s: &PhaseState| {
            (-0.5 * s.v.iter().map(VecD::norm_sq).sum::<f64>()).exp()
        });
        let combo = DensityEvaluator::linear_combination(0.7, &f1, -0.2, &f2);
        let model = CrossSectionModel::hard_sphere(3);
        let quad = QuadSpec::mc(3000, 13);
        let s = probe_state(1);
        let vc = collision_term(&combo, 1, 1, CollisionSign::Net, &s, 0.0, &model, &quad)
            .unwrap()
            .value;
        let v1 = collision_term(&f1, 1, 1, CollisionSign::Net, &s, 0.0, &model, &quad)
            .unwrap()
            .value;
        let v2 = collision_term(&f2, 1, 1, CollisionSign::Net, &s, 0.0, &model, &quad)
            .unwrap()
            .value;
        assert!((vc - (0.7 * v1 - 0.2 * v2)).abs() < 1e-12 * (1.0 + vc.abs()));
    }

    #[test]
    fn fresh_particle_sits_at_xj() {
        // marginal depending only on the fresh particle's position
        let f = DensityEvaluator::from_fn(2, 3, |_, s: &PhaseState| {
            (1.0 + s.x[1].norm_sq()).recip() * (-s.v[1].norm_sq()).exp()
        });
        let model = CrossSectionModel::maxwell(3, 1.0);
        let quad = QuadSpec::mc(20_000, 17);
        let mut s1 = probe_state(1);
        s1.x[0] = VecD::zeros(3);
        let mut s2 = s1.clone();
        s2.x[0] = VecD::from_slice(&[3.0, 0.0, 0.0]);
        let l1 = collision_term(&f, 1, 1, CollisionSign::Loss, &s1, 0.0, &model, &quad)
            .unwrap();
        let l2 = collision_term(&f, 1, 1, CollisionSign::Loss, &s2, 0.0, &model, &quad)
            .unwrap();
        // position factor: 1 at the origin vs 1/10 at |x| = 3
        let ratio = l2.value / l1.value;
        assert!((ratio - 0.1).abs() < 0.02, "ratio = {ratio}");
    }

    #[test]
    fn homogeneous_factorized_loss_cross_validates() {
        // x-independent product data, hard sphere: MC vs product rule
        let g = DensityEvaluator::from_fn(1, 3, |_, s: &PhaseState| (-s.v[0].norm_sq()).exp());
        let f = {
            let g = g.clone();
            DensityEvaluator::from_fn(2, 3, move |t, s: &PhaseState| {
                g.eval(t, &PhaseState::single(s.x[0], s.v[0]))
                    * g.eval(t, &PhaseState::single(s.x[1], s.v[1]))
            })
        };
        let model = CrossSectionModel::hard_sphere(3);
        let s = probe_state(1);
        let mc = collision_term(
            &f,
            1,
            1,
            CollisionSign::Loss,
            &s,
            0.0,
            &model,
            &QuadSpec::mc(60_000, 23),
        )
        .unwrap();
        let pr = collision_term(
            &f,
            1,
            1,
            CollisionSign::Loss,
            &s,
            0.0,
            &model,
            &QuadSpec::product(16, 8.0, 8, 16),
        )
        .unwrap();
        assert!(
            mc.agrees_with(&pr, 3.0, 1e-9),
            "mc = {} +- {}, product = {}",
            mc.value,
            mc.stderr,
            pr.value
        );
    }

    #[test]
    fn full_collision_single_term_reduces() {
        let f = gaussian_marginal(2);
        let model = CrossSectionModel::hard_sphere(3);
        let quad = QuadSpec::mc(2000, 29);
        let s = probe_state(1);
        let total = full_collision(&f, 1, &s, 0.0, &model, &quad).unwrap();
        let single =
            collision_term(&f, 1, 1, CollisionSign::Net, &s, 0.0, &model, &quad).unwrap();
        assert_eq!(total.value, single.value);
    }

    #[test]
    fn full_collision_symmetric_under_relabeling() {
        let f = gaussian_marginal(3);
        let model = CrossSectionModel::hard_sphere(3);
        let quad = QuadSpec::mc(30_000, 31);
        let s = probe_state(2);
        let swapped = s.swapped(0, 1);
        let a = full_collision(&f, 2, &s, 0.0, &model, &quad).unwrap();
        let b = full_collision(&f, 2, &swapped, 0.0, &model, &quad).unwrap();
        assert!(a.agrees_with(&b, 3.0, 1e-9), "{} vs {}", a.value, b.value);
    }

    #[test]
    fn q_maxwellian_annihilates() {
        let m = DensityEvaluator::from_fn(1, 3, |_, s: &PhaseState| (-s.v[0].norm_sq()).exp());
        let model = CrossSectionModel::hard_sphere(3);
        let quad = QuadSpec::mc(40_000, 37);
        let out = q_bilinear(
            &m,
            &m,
            &VecD::zeros(3),
            &VecD::from_slice(&[0.4, -0.2, 0.1]),
            0.0,
            &model,
            &quad,
        )
        .unwrap();
        assert!(out.value.abs() <= (3.0 * out.stderr).max(1e-12));
    }

    #[test]
    fn q_zero_argument() {
        let z = DensityEvaluator::zero(1, 3);
        let model = CrossSectionModel::hard_sphere(3);
        let out = q_bilinear(
            &z,
            &z,
            &VecD::zeros(3),
            &VecD::zeros(3),
            0.0,
            &model,
            &QuadSpec::mc(500, 1),
        )
        .unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn q_disjoint_support_gain_only() {
        // bump supported on 1 < |v| < 2; probe at v far outside
        let bump = DensityEvaluator::from_fn(1, 3, |_, s: &PhaseState| {
            let n = s.v[0].norm();
            if n > 1.0 && n < 2.0 {
                (n - 1.0) * (2.0 - n)
            } else {
                0.0
            }
        });
        let model = CrossSectionModel::hard_sphere(3);
        let x = VecD::zeros(3);
        let v = VecD::from_slice(&[4.0, 0.0, 0.0]);
        let probe = PhaseState::single(x, v);
        let f2 = pair_product(&bump, &bump);
        let loss = collision_term(
            &f2,
            1,
            1,
            CollisionSign::Loss,
            &probe,
            0.0,
            &model,
            &QuadSpec::mc(20_000, 41),
        )
        .unwrap();
        assert_eq!(loss.value, 0.0);
        let mc = collision_term(
            &f2,
            1,
            1,
            CollisionSign::Net,
            &probe,
            0.0,
            &model,
            &QuadSpec::mc(200_000, 43),
        )
        .unwrap();
        let pr = collision_term(
            &f2,
            1,
            1,
            CollisionSign::Net,
            &probe,
            0.0,
            &model,
            &QuadSpec::product(16, 6.5, 16, 24),
        )
        .unwrap();
        assert!(
            mc.agrees_with(&pr, 3.0, 1e-9),
            "mc = {} +- {}, product = {}",
            mc.value,
            mc.stderr,
            pr.value
        );
    }

    #[test]
    fn weak_form_moments_vanish() {
        let f = DensityEvaluator::from_fn(1, 3, |_, s: &PhaseState| {
            (-s.v[0].norm_sq()).exp() * (1.0 + 0.3 * s.v[0].get(0).tanh())
        });
        let model = CrossSectionModel::hard_sphere(3);
        let quad = QuadSpec::mc(150_000, 47);
        for phi in [MomentKind::Mass, MomentKind::Momentum(0), MomentKind::Energy] {
            let out = weak_form_moment(&f, phi, &VecD::zeros(3), 0.0, &model, &quad, 10.0).unwrap();
            assert!(
                out.value.abs() <= 3.0 * out.stderr,
                "{:?}: {} vs {}",
                phi,
                out.value,
                out.stderr
            );
        }
    }

    #[test]
    fn weak_form_odd_symmetry() {
        // odd in v_0: the first momentum component integrates to ~0
        let f = DensityEvaluator::from_fn(1, 3, |_, s: &PhaseState| {
            (-s.v[0].norm_sq()).exp() * s.v[0].get(0)
        });
        let model = CrossSectionModel::maxwell(3, 1.0);
        let quad = QuadSpec::mc(100_000, 53);
        let out =
            weak_form_moment(&f, MomentKind::Momentum(0), &VecD::zeros(3), 0.0, &model, &quad, 10.0)
                .unwrap();
        assert!(out.value.abs() <= 3.0 * out.stderr);
    }

    #[test]
    fn weak_form_threshold_enforced() {
        let f = gaussian_marginal(1);
        let model = CrossSectionModel::hard_sphere(3);
        let quad = QuadSpec::mc(100, 1);
        assert!(matches!(
            weak_form_moment(&f, MomentKind::Energy, &VecD::zeros(3), 0.0, &model, &quad, 5.0),
            Err(Error::Precondition(_))
        ));
    }
}
