//! Numerical verification of the inequality lemmas behind the a-priori
//! estimate: the traveling position-weight integral, the velocity-weight
//! integral U_q, the convolution bounds, the sphere singular integral, and
//! the master constant assembled from them.

use crate::error::{Error, Result};
use crate::kinematics::{post_collision, CrossSectionModel, ScatterDirection};
use crate::quad::{self, McAccumulator};
use crate::rng;
use crate::spaces::{bracket, WeightParams};
use crate::vec::VecD;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Gamma function at integer or half-integer argument (2z integral).
fn gamma_half(two_z: usize) -> f64 {
    // Gamma(1/2) = sqrt(pi), Gamma(1) = 1; recurrence Gamma(z+1) = z Gamma(z)
    let mut val = if two_z % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut cur = if two_z % 2 == 0 { 2 } else { 1 };
    while cur < two_z {
        val *= cur as f64 / 2.0;
        cur += 2;
    }
    val
}

/// Surface area of the unit sphere S^{d-1} in R^d: 2 pi^{d/2} / Gamma(d/2).
pub fn sphere_area(d: usize) -> f64 {
    assert!(d >= 1);
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d)
}

/// I_ell = int_{R^d} <x>^-ell dx, finite for ell > d; computed radially.
pub fn i_ell(d: usize, ell: f64) -> Result<f64> {
    if ell <= d as f64 {
        return Err(Error::Precondition(format!("I_ell needs ell > d, got {ell} <= {d}")));
    }
    let dd = d as f64;
    let radial = quad::integrate_semi_infinite(
        move |r| r.powf(dd - 1.0) * (1.0 + r * r).powf(-ell / 2.0),
        1.0,
        1e-12,
        1e-10,
    );
    Ok(sphere_area(d) * radial.value)
}

/// C_{p,q,alpha,beta} = (8p / (alpha (p-1))) * U_q * max(beta^q, beta^-2q) * sup|b|.
pub fn constant_c(params: &WeightParams, model: &CrossSectionModel, uq: f64) -> Result<f64> {
    if uq <= 0.0 {
        return Err(Error::Precondition("U_q must be positive".into()));
    }
    let beta_factor = params.beta.powf(params.q).max(params.beta.powf(-2.0 * params.q));
    Ok(8.0 * params.p / (params.alpha * (params.p - 1.0)) * uq * beta_factor * model.b_sup())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McSpec {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McSpec {
    fn default() -> Self {
        McSpec { samples: 20_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UqEstimate {
    pub uq_est: f64,
    pub worst_v: Vec<f64>,
    pub stderr: f64,
    /// Successive estimates under sample doubling, coarsest first.
    pub doubling_values: Vec<f64>,
}

/// Angular density sin^{d-3} on [0, pi]; uniform for d = 3, rejection
/// sampled otherwise. Returns theta.
fn sample_polar<R: Rng + ?Sized>(rng: &mut R, d: usize) -> f64 {
    if d == 3 {
        return rng.gen::<f64>() * PI;
    }
    loop {
        let theta = rng.gen::<f64>() * PI;
        let accept = theta.sin().powi(d as i32 - 3);
        if rng.gen::<f64>() < accept {
            return theta;
        }
    }
}

/// Normalizer of sin^{d-3} over [0, pi].
fn polar_normalizer(d: usize) -> f64 {
    if d == 3 {
        PI
    } else {
        quad::adaptive(|t| t.sin().powi(d as i32 - 3), 0.0, PI, 1e-12, 1e-10).value
    }
}

/// Unit vector orthogonal to `axis`, uniform on the orthogonal sphere.
fn orthogonal_unit<R: Rng + ?Sized>(rng: &mut R, axis: &VecD) -> VecD {
    loop {
        let g = VecD::gaussian(rng, axis.dim(), 1.0);
        let proj = g.sub(&axis.scale(g.dot(axis)));
        if let Some(u) = proj.normalized() {
            return u;
        }
    }
}

/// Radial proposal for |u|: half the mass on (0,1] with density a r^{a-1}
/// (a = d+gamma-1), half Pareto on [1, inf) with index s = q+1-d-gamma.
struct RadialProposal {
    a: f64,
    s: f64,
}

impl RadialProposal {
    fn new(d: usize, gamma: f64, q: f64) -> Self {
        RadialProposal { a: d as f64 + gamma - 1.0, s: q + 1.0 - d as f64 - gamma }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen::<f64>().max(1e-300);
        if rng.gen::<bool>() {
            u.powf(1.0 / self.a)
        } else {
            u.powf(-1.0 / self.s)
        }
    }

    fn density(&self, r: f64) -> f64 {
        let mut p = 0.0;
        if r <= 1.0 {
            p += 0.5 * self.a * r.powf(self.a - 1.0);
        }
        if r >= 1.0 {
            p += 0.5 * self.s * r.powf(-self.s - 1.0);
        }
        p
    }
}

fn uq_integrand_estimate(
    v: &VecD,
    model: &CrossSectionModel,
    params: &WeightParams,
    samples: usize,
    seed: u64,
) -> McAccumulator {
    let d = params.d;
    let q = params.q;
    let proposal = RadialProposal::new(d, model.gamma, q);
    let c_polar = polar_normalizer(d);
    let omega_dm2 = sphere_area(d - 1);
    let omega_dm1 = sphere_area(d);
    let bracket_v_q = bracket(v).powf(q);

    let chunk = 4096;
    let tasks = samples.div_ceil(chunk);
    let accs: Vec<McAccumulator> = (0..tasks)
        .into_par_iter()
        .map(|task| {
            let mut r = rng::substream(seed, &[task as u64]);
            let mut acc = McAccumulator::default();
            let lo = task * chunk;
            let hi = ((task + 1) * chunk).min(samples);
            for _ in lo..hi {
                let omega = VecD::random_unit(&mut r, d);
                let rad = proposal.sample(&mut r);
                let u = omega.scale(rad);
                let v1 = v.add(&u);
                let w_u = omega_dm1 * rad.powf(d as f64 - 1.0) / proposal.density(rad);

                let theta = sample_polar(&mut r, d);
                let perp = orthogonal_unit(&mut r, &omega);
                let sigma_vec = omega.scale(theta.cos()).add(&perp.scale(theta.sin()));
                let sigma = ScatterDirection::new(sigma_vec).expect("unit sigma");
                // sin(theta) of the angular weight cancels the singular
                // 1/sqrt(1-(u_hat.sigma)^2) factor analytically
                let w_sigma = c_polar * omega_dm2;

                let out = post_collision(v, &v1, &sigma);
                let ratio = bracket_v_q
                    / (bracket(&out.v_star).powf(q) * bracket(&out.v1_star).powf(q));
                let value = rad.powf(model.gamma - 1.0) * ratio * w_u * w_sigma;
                acc.push(value);
            }
            acc
        })
        .collect();
    let mut total = McAccumulator::default();
    for a in &accs {
        total.merge(a);
    }
    total
}

/// Monte Carlo estimate of the velocity-weight integral
/// sup_v int |u|^(gamma-1) (1-(u_hat.sigma)^2)^(-1/2) <v>^q / (<v*>^q <v1*>^q)
/// over a grid of base velocities, with a sample-doubling stability check.
pub fn estimate_uq(
    model: &CrossSectionModel,
    params: &WeightParams,
    v_grid: &[VecD],
    mc: &McSpec,
) -> Result<UqEstimate> {
    params.check_kernel(model.gamma)?;
    if v_grid.is_empty() {
        return Err(Error::Precondition("empty velocity grid".into()));
    }

    let mut worst = (0usize, f64::NEG_INFINITY, f64::INFINITY);
    let mut doubling_values = Vec::new();
    for (vi, v) in v_grid.iter().enumerate() {
        let mut estimates = Vec::new();
        let mut acc = McAccumulator::default();
        for stage in 0..4usize {
            let n = mc.samples << stage;
            let batch = uq_integrand_estimate(v, model, params, n, rng::chain(mc.seed, &[vi as u64, stage as u64]));
            acc.merge(&batch);
            estimates.push(acc.mean());
        }
        // divergence shows as consistent growth at every doubling; a single
        // noisy jump from a heavy-tailed batch does not qualify
        let ratios: Vec<f64> = estimates
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::INFINITY })
            .collect();
        if ratios.iter().all(|&r| r > 1.5) {
            let worst = ratios.iter().cloned().fold(0.0, f64::max);
            return Err(Error::NonIntegrable { ratio: worst, doublings: ratios.len() });
        }
        let est = acc.mean();
        if est > worst.1 {
            worst = (vi, est, acc.stderr());
            doubling_values = estimates;
        }
    }

    Ok(UqEstimate {
        uq_est: worst.1,
        worst_v: v_grid[worst.0].as_slice().to_vec(),
        stderr: worst.2,
        doubling_values,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub bound: f64,
    pub ok: bool,
}

/// int_0^t <x+s xi>^-p <x+s eta>^-p ds  vs  (4p/(p-1)) <x>^-p / min(|xi|,|eta|),
/// for orthogonal nonzero xi, eta.
pub fn verify_position_lemma(
    x: &VecD,
    xi: &VecD,
    eta: &VecD,
    p: f64,
    t: f64,
) -> Result<InequalityCheck> {
    let nxi = xi.norm();
    let neta = eta.norm();
    if nxi == 0.0 || neta == 0.0 {
        return Err(Error::Precondition("xi and eta must be nonzero".into()));
    }
    if xi.dot(eta).abs() > 1e-10 * nxi * neta {
        return Err(Error::Precondition(format!(
            "xi . eta = {} not orthogonal",
            xi.dot(eta)
        )));
    }
    if p <= 1.0 {
        return Err(Error::Precondition("p must exceed 1".into()));
    }
    if t < 0.0 {
        return Err(Error::Precondition("t must be nonnegative".into()));
    }

    let integrand = |s: f64| {
        bracket(&x.add_scaled(s, xi)).powf(-p) * bracket(&x.add_scaled(s, eta)).powf(-p)
    };
    // geometric panels keep the nested rule from overlooking a localized
    // bump inside a long window
    let mut lhs = 0.0;
    let mut lo = 0.0;
    let mut hi = t.min(1.0);
    loop {
        lhs += quad::adaptive(integrand, lo, hi, 1e-11, 0.0).value;
        if hi >= t {
            break;
        }
        lo = hi;
        hi = (hi * 2.0).min(t);
    }

    let rhs = 4.0 * p / (p - 1.0) * bracket(x).powf(-p) / nxi.min(neta);
    Ok(InequalityCheck { lhs, bound: rhs, ok: lhs <= rhs * (1.0 + 1e-9) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvolutionMode {
    /// int |y-v|^(gamma-1) <y>^-q dy against the uniform-in-v constant L_q.
    Lq,
    /// int |y-v|^(1-d) <y>^-q dy against the v-dependent tilde bounds.
    Ltilde,
}

/// Convolution of a radial power with the bracket weight, evaluated in
/// spherical coordinates around v: exponent `e` on |y - v|.
fn convolution_integral(d: usize, e: f64, q: f64, v_norm: f64) -> f64 {
    let dd = d as f64;
    let a = e + dd - 1.0; // radial power after the Jacobian
    if v_norm < 1e-12 {
        let head = quad::integrate_power_endpoint(
            a,
            |r| (1.0 + r * r).powf(-q / 2.0),
            1.0,
            1e-12,
            1e-9,
        );
        let tail = quad::adaptive(
            |u| {
                if u <= 0.0 {
                    0.0
                } else {
                    let r = 1.0 / u;
                    r.powf(a) * (1.0 + r * r).powf(-q / 2.0) / (u * u)
                }
            },
            0.0,
            1.0,
            1e-12,
            1e-9,
        );
        return sphere_area(d) * (head.value + tail.value);
    }

    let inner = move |theta: f64| {
        let cos_t = theta.cos();
        let weight = move |r: f64| {
            (1.0 + v_norm * v_norm + 2.0 * r * v_norm * cos_t + r * r).powf(-q / 2.0)
        };
        let head = quad::integrate_power_endpoint(a, weight, 1.0, 1e-13, 1e-8);
        let tail = quad::adaptive(
            move |u| {
                if u <= 0.0 {
                    0.0
                } else {
                    let r = 1.0 / u;
                    r.powf(a) * weight(r) / (u * u)
                }
            },
            0.0,
            1.0,
            1e-13,
            1e-8,
        );
        head.value + tail.value
    };
    let outer = quad::adaptive(
        |theta| theta.sin().powi(d as i32 - 2) * inner(theta),
        0.0,
        PI,
        1e-12,
        1e-7,
    );
    sphere_area(d - 1) * outer.value
}

/// Explicit constant of the L_q convolution bound.
pub fn lq_constant(d: usize, gamma: f64, q: f64) -> f64 {
    let dd = d as f64;
    let omega = sphere_area(d);
    omega * (1.0 / dd + 1.0 / (q - dd - gamma + 1.0))
        + omega * (1.0 / (dd + gamma - 1.0) + 1.0 / (q + 1.0 - dd - gamma))
}

/// Factors of the tilde convolution bound for q > d.
pub fn ltilde_factors(d: usize, q: f64) -> (f64, f64) {
    let dd = d as f64;
    let omega = sphere_area(d);
    let first = 2.0_f64.powf(dd - 1.0) * omega * q / (dd * (q - dd));
    let second = (2.0 / 3.0_f64).powf(q - 1.0) * omega;
    (first, second)
}

/// Tilde-prime constant for d-1 < q <= d, assembled from the two
/// one-dimensional integrals in its derivation.
pub fn ltilde_prime_constant(d: usize, q: f64) -> f64 {
    let q_star = (q - d as f64 + 1.0) / 2.0;
    let angular = quad::adaptive(
        |t| t.sin().powf(d as f64 - 1.0 - q_star),
        0.0,
        PI,
        1e-12,
        1e-9,
    )
    .value;
    let line = quad::integrate_semi_infinite(
        |rho| (1.0 + rho * rho).powf((q_star - q - 1.0) / 2.0),
        1.0,
        1e-12,
        1e-9,
    )
    .value
        * 2.0;
    sphere_area(d - 1) * angular * line
}

/// Check one convolution lemma instance at base point v.
pub fn verify_convolution_bounds(
    model: &CrossSectionModel,
    params: &WeightParams,
    v: &VecD,
    mode: ConvolutionMode,
) -> Result<InequalityCheck> {
    let d = params.d;
    let dd = d as f64;
    let q = params.q;
    let v_norm = v.norm();
    match mode {
        ConvolutionMode::Lq => {
            if q <= dd + model.gamma - 1.0 {
                return Err(Error::Precondition(format!(
                    "Lq mode needs q > d+gamma-1 = {}",
                    dd + model.gamma - 1.0
                )));
            }
            let lhs = convolution_integral(d, model.gamma - 1.0, q, v_norm);
            let bound = lq_constant(d, model.gamma, q);
            Ok(InequalityCheck { lhs, bound, ok: lhs <= bound * (1.0 + 1e-6) })
        }
        ConvolutionMode::Ltilde => {
            if q <= dd - 1.0 {
                return Err(Error::Precondition(format!("Ltilde mode needs q > d-1 = {}", dd - 1.0)));
            }
            let lhs = convolution_integral(d, 1.0 - dd, q, v_norm);
            let bound = if q > dd {
                let (f1, f2) = ltilde_factors(d, q);
                let ltilde = f1.max(f2);
                if v_norm == 0.0 {
                    f64::INFINITY
                } else {
                    ltilde * (v_norm.powf(1.0 - dd) + v_norm * bracket(v).powf(-q))
                }
            } else {
                let q_star = (q - dd + 1.0) / 2.0;
                if v_norm == 0.0 {
                    f64::INFINITY
                } else {
                    ltilde_prime_constant(d, q) * v_norm.powf(1.0 - q_star)
                }
            };
            Ok(InequalityCheck { lhs, bound, ok: lhs <= bound * (1.0 + 1e-6) })
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SphereIntegral {
    pub value: f64,
    pub bound: f64,
    pub ok: bool,
}

/// int_{S^{d-1}} (1 - (n_hat . sigma)^2)^(-1/2) dsigma, reduced to the polar
/// angle around n_hat; the sin^{d-2} area factor absorbs the endpoint
/// singularity for d >= 3. Bounded by omega_{d-2} pi.
pub fn sphere_singular_integral(n_hat: &VecD, d: usize) -> Result<SphereIntegral> {
    if d < 3 {
        return Err(Error::Precondition("sphere integral needs d >= 3".into()));
    }
    let axis = n_hat
        .normalized()
        .ok_or_else(|| Error::Precondition("zero axis".into()))?;
    // fixed orthogonal companion, built from the least-aligned basis vector
    let mut pick = 0;
    let mut best = f64::INFINITY;
    for i in 0..d {
        let a = axis.get(i).abs();
        if a < best {
            best = a;
            pick = i;
        }
    }
    let raw = VecD::basis(d, pick);
    let perp = raw
        .sub(&axis.scale(raw.dot(&axis)))
        .normalized()
        .expect("independent basis vector");

    let integrand = |theta: f64| {
        let sigma = axis.scale(theta.cos()).add(&perp.scale(theta.sin()));
        let cos = axis.dot(&sigma).clamp(-1.0, 1.0);
        let sin_sq = (1.0 - cos * cos).max(1e-300);
        theta.sin().powi(d as i32 - 2) / sin_sq.sqrt()
    };
    let value = sphere_area(d - 1) * quad::adaptive(integrand, 0.0, PI, 1e-10, 1e-9).value;
    let bound = sphere_area(d - 1) * PI;
    Ok(SphereIntegral { value, bound, ok: value <= bound * (1.0 + 1e-8) })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub omega_dm1: f64,
    pub i_p: f64,
    pub i_q: f64,
    pub uq_est: f64,
    pub lq_bound: f64,
    pub ltilde_bound: f64,
    pub c_master: f64,
    pub provenance: Vec<(String, String)>,
}

/// Assemble every explicit constant for a parameter set, recording whether
/// each came from a closed form or a numeric estimate.
pub fn assemble_constants(
    params: &WeightParams,
    model: &CrossSectionModel,
    uq: &UqEstimate,
) -> Result<ConstantsReport> {
    let d = params.d;
    let c_master = constant_c(params, model, uq.uq_est)?;
    let (lt1, lt2) = ltilde_factors(d, params.q);
    let ltilde_bound = if params.q > d as f64 {
        lt1.max(lt2)
    } else {
        ltilde_prime_constant(d, params.q)
    };
    Ok(ConstantsReport {
        omega_dm1: sphere_area(d),
        i_p: i_ell(d, params.p).unwrap_or(f64::INFINITY),
        i_q: i_ell(d, params.q).unwrap_or(f64::INFINITY),
        uq_est: uq.uq_est,
        lq_bound: lq_constant(d, model.gamma, params.q),
        ltilde_bound,
        c_master,
        provenance: vec![
            ("omega_dm1".into(), "analytic: 2 pi^{d/2} / Gamma(d/2)".into()),
            ("i_p".into(), "numeric radial quadrature".into()),
            ("i_q".into(), "numeric radial quadrature".into()),
            ("uq_est".into(), "Monte Carlo grid estimate (lower estimate of the sup)".into()),
            ("lq_bound".into(), "analytic assembly".into()),
            ("ltilde_bound".into(), "analytic assembly with quadrature factors".into()),
            ("c_master".into(), "analytic in U_q estimate".into()),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::AngularModel;

    fn wp(d: usize, q: f64) -> WeightParams {
        WeightParams::new(d, 2.0, q, 1.0, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(1) - 2.0).abs() < 1e-12); // S^0: two points
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-12);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn i_ell_closed_form() {
        // d = 3, ell = 4: int <x>^-4 dx = pi^2
        let v = i_ell(3, 4.0).unwrap();
        assert!((v - PI * PI).abs() < 1e-7, "{v}");
        assert!(i_ell(3, 2.5).is_err());
    }

    #[test]
    fn constant_c_worked_example() {
        let params = wp(3, 5.0);
        let model = CrossSectionModel::hard_sphere(3);
        let c = constant_c(&params, &model, 10.0).unwrap();
        assert!((c - 80.0).abs() < 1e-12);
    }

    #[test]
    fn constant_c_monotonicity() {
        let model1 = CrossSectionModel::new(3, 1.0, AngularModel::Constant(0.5)).unwrap();
        let model2 = CrossSectionModel::new(3, 1.0, AngularModel::Constant(1.0)).unwrap();
        let params = wp(3, 5.0);
        let base = constant_c(&params, &model1, 10.0).unwrap();
        assert!((constant_c(&params, &model2, 10.0).unwrap() - 2.0 * base).abs() < 1e-12);
        assert!(constant_c(&params, &model1, 20.0).unwrap() > base);
        let mut wider = params;
        wider.alpha = 2.0;
        assert!(constant_c(&wider, &model1, 10.0).unwrap() < base);
        // beta = 1 makes the max factor exactly one
        let c = constant_c(&params, &model1, 1.0).unwrap();
        assert!((c - 8.0 * 2.0 / 1.0 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn position_lemma_canonical() {
        let x = VecD::zeros(3);
        let xi = VecD::basis(3, 0);
        let eta = VecD::basis(3, 1);
        let check = verify_position_lemma(&x, &xi, &eta, 2.0, 1000.0).unwrap();
        assert!((check.lhs - PI / 4.0).abs() < 1e-6, "lhs = {}", check.lhs);
        assert!((check.bound - 8.0).abs() < 1e-12);
        assert!(check.ok);
    }

    #[test]
    fn position_lemma_zero_time() {
        let check = verify_position_lemma(
            &VecD::from_slice(&[1.0, 2.0, 3.0]),
            &VecD::basis(3, 0),
            &VecD::basis(3, 1),
            1.5,
            0.0,
        )
        .unwrap();
        assert_eq!(check.lhs, 0.0);
        assert!(check.ok);
    }

    #[test]
    fn position_lemma_rejects_non_orthogonal() {
        let e1 = VecD::basis(3, 0);
        assert!(matches!(
            verify_position_lemma(&VecD::zeros(3), &e1, &e1, 2.0, 1.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn position_lemma_randomized() {
        let mut r = rng::substream(42, &[1]);
        for _ in 0..200 {
            let x = VecD::gaussian(&mut r, 3, 2.0);
            let xi = VecD::gaussian(&mut r, 3, 1.5);
            let mut eta = VecD::gaussian(&mut r, 3, 1.5);
            // project out the xi component
            eta = eta.sub(&xi.scale(eta.dot(&xi) / xi.norm_sq()));
            if eta.norm() < 1e-6 || xi.norm() < 1e-6 {
                continue;
            }
            let p = 1.2 + 2.0 * rand::Rng::gen::<f64>(&mut r);
            let t = 50.0 * rand::Rng::gen::<f64>(&mut r);
            let check = verify_position_lemma(&x, &xi, &eta, p, t).unwrap();
            assert!(check.ok, "lhs = {} rhs = {}", check.lhs, check.bound);
        }
    }

    #[test]
    fn convolution_lq_at_origin() {
        let model = CrossSectionModel::hard_sphere(3);
        let params = wp(3, 5.0);
        let check =
            verify_convolution_bounds(&model, &params, &VecD::zeros(3), ConvolutionMode::Lq)
                .unwrap();
        let expect = 4.0 * PI / 3.0;
        assert!((check.lhs - expect).abs() < 1e-5 * expect, "lhs = {}", check.lhs);
        let expect_bound = 4.0 * PI * (1.0 / 3.0 + 1.0 / 2.0) * 2.0;
        assert!((check.bound - expect_bound).abs() < 1e-10);
        assert!(check.ok);
    }

    #[test]
    fn convolution_rotation_invariant() {
        let model = CrossSectionModel::hard_sphere(3);
        let params = wp(3, 5.0);
        let a = verify_convolution_bounds(
            &model,
            &params,
            &VecD::from_slice(&[3.0, 0.0, 0.0]),
            ConvolutionMode::Lq,
        )
        .unwrap();
        let b = verify_convolution_bounds(
            &model,
            &params,
            &VecD::from_slice(&[0.0, 3.0 / 2.0_f64.sqrt(), 3.0 / 2.0_f64.sqrt()]),
            ConvolutionMode::Lq,
        )
        .unwrap();
        assert!((a.lhs - b.lhs).abs() < 1e-5 * a.lhs);
    }

    #[test]
    fn convolution_ltilde_both_regimes() {
        let model = CrossSectionModel::hard_sphere(3);
        let over = wp(3, 4.0); // q > d
        let v = VecD::from_slice(&[1.0, 0.0, 0.0]);
        let check = verify_convolution_bounds(&model, &over, &v, ConvolutionMode::Ltilde).unwrap();
        assert!(check.ok, "lhs = {} bound = {}", check.lhs, check.bound);

        let under = wp(3, 2.5); // d-1 < q <= d
        let check2 =
            verify_convolution_bounds(&model, &under, &v, ConvolutionMode::Ltilde).unwrap();
        assert!(check2.ok, "lhs = {} bound = {}", check2.lhs, check2.bound);
    }

    #[test]
    fn convolution_precondition_errors() {
        let model = CrossSectionModel::hard_sphere(3); // gamma = 1
        let params = wp(3, 2.8); // q < d + gamma - 1 = 3
        assert!(matches!(
            verify_convolution_bounds(&model, &params, &VecD::zeros(3), ConvolutionMode::Lq),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn sphere_integral_d3_exact() {
        let n = VecD::from_slice(&[0.0, 0.0, 1.0]);
        let s = sphere_singular_integral(&n, 3).unwrap();
        // omega_1 * int_0^pi dtheta = 2 pi^2, equal to the bound
        assert!((s.value - 2.0 * PI * PI).abs() < 1e-7, "{}", s.value);
        assert!(s.ok);
    }

    #[test]
    fn sphere_integral_axis_independent() {
        let mut r = rng::substream(8, &[3]);
        let a = sphere_singular_integral(&VecD::random_unit(&mut r, 3), 3).unwrap();
        let b = sphere_singular_integral(&VecD::random_unit(&mut r, 3), 3).unwrap();
        assert!((a.value - b.value).abs() < 1e-8);
    }

    #[test]
    fn sphere_integral_d4() {
        let n = VecD::basis(4, 0);
        let s = sphere_singular_integral(&n, 4).unwrap();
        // omega_2 * int_0^pi sin = 8 pi, below the bound 4 pi^2
        assert!((s.value - 8.0 * PI).abs() < 1e-7, "{}", s.value);
        assert!(s.ok);
        assert!((s.bound - 4.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn uq_estimate_finite_and_stable() {
        let model = CrossSectionModel::maxwell(3, 1.0);
        let params = wp(3, 3.0);
        let grid = vec![
            VecD::zeros(3),
            VecD::from_slice(&[2.0, 0.0, 0.0]),
            VecD::from_slice(&[10.0, 0.0, 0.0]),
        ];
        let mc = McSpec { samples: 8000, seed: 21 };
        let est = estimate_uq(&model, &params, &grid, &mc).unwrap();
        assert!(est.uq_est.is_finite() && est.uq_est > 0.0);
        for w in est.doubling_values.windows(2) {
            assert!(w[1] / w[0] < 1.5);
        }
    }

    #[test]
    fn uq_rotation_consistent() {
        let model = CrossSectionModel::maxwell(3, 1.0);
        let params = wp(3, 3.0);
        let mc = McSpec { samples: 20_000, seed: 4 };
        let a = estimate_uq(&model, &params, &[VecD::from_slice(&[2.0, 0.0, 0.0])], &mc).unwrap();
        let b = estimate_uq(&model, &params, &[VecD::from_slice(&[0.0, 2.0, 0.0])], &mc).unwrap();
        let tol = 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.uq_est - b.uq_est).abs() <= tol.max(0.05 * a.uq_est));
    }

    #[test]
    fn uq_requires_admissible_q() {
        let model = CrossSectionModel::hard_sphere(3);
        let params = wp(3, 2.0); // q <= d-1+gamma = 3
        assert!(estimate_uq(&model, &params, &[VecD::zeros(3)], &McSpec::default()).is_err());
    }
}
