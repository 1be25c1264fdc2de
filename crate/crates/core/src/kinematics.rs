//! Elastic two-particle collision transforms, the collision kernel
//! B(sigma, u) = |u|^gamma b(u_hat . sigma), and the geometric identities
//! the weighted estimates rest on.

use crate::error::{Error, Result};
use crate::vec::VecD;
use serde::{Deserialize, Serialize};

/// Unit scattering direction, renormalized on construction.
#[derive(Debug, Clone, Copy)]
pub struct ScatterDirection {
    sigma: VecD,
}

impl ScatterDirection {
    pub fn new(v: VecD) -> Result<Self> {
        let sigma = v
            .normalized()
            .ok_or_else(|| Error::Precondition("zero scattering direction".into()))?;
        Ok(ScatterDirection { sigma })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        ScatterDirection::new(VecD::from_slice(values))
    }

    pub fn vector(&self) -> &VecD {
        &self.sigma
    }
}

/// Angular part of the cross-section: even, bounded, non-negative on [-1,1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AngularModel {
    Constant(f64),
    /// Coefficients of a polynomial in z; odd powers are symmetrized away.
    Polynomial(Vec<f64>),
    /// Values on a uniform grid over [-1,1], linearly interpolated.
    Sampled(Vec<f64>),
}

/// Collision kernel B(sigma, u) = |u|^gamma * b(u_hat . sigma).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossSectionModel {
    pub gamma: f64,
    angular: AngularModel,
    b_sup: f64,
    /// Set when the constructor had to symmetrize an uneven b.
    pub symmetrized: bool,
    /// Relative-speed floor below which soft kernels report a singular point.
    pub u_floor: f64,
}

impl CrossSectionModel {
    pub fn new(d: usize, gamma: f64, angular: AngularModel) -> Result<Self> {
        if !(gamma > 1.0 - d as f64 && gamma <= 1.0) {
            return Err(Error::Precondition(format!(
                "gamma = {gamma} outside (1-d, 1] for d = {d}"
            )));
        }
        let (angular, symmetrized) = symmetrize(angular)?;
        let b_sup = sup_abs(&angular);
        if !b_sup.is_finite() {
            return Err(Error::Precondition("angular factor unbounded".into()));
        }
        Ok(CrossSectionModel {
            gamma,
            angular,
            b_sup,
            symmetrized,
            u_floor: 1e-14,
        })
    }

    /// Hard spheres: gamma = 1, b = 1/2.
    pub fn hard_sphere(d: usize) -> Self {
        CrossSectionModel::new(d, 1.0, AngularModel::Constant(0.5)).unwrap()
    }

    /// Maxwell molecules: gamma = 0.
    pub fn maxwell(d: usize, b: f64) -> Self {
        CrossSectionModel::new(d, 0.0, AngularModel::Constant(b)).unwrap()
    }

    /// Kernel identically zero; collisions switch off.
    pub fn free_transport(d: usize) -> Self {
        CrossSectionModel::new(d, 1.0, AngularModel::Constant(0.0)).unwrap()
    }

    pub fn b_sup(&self) -> f64 {
        self.b_sup
    }

    /// Angular factor b(z), z = cos of the scattering angle.
    pub fn angular_eval(&self, z: f64) -> f64 {
        let z = z.clamp(-1.0, 1.0);
        match &self.angular {
            AngularModel::Constant(c) => *c,
            AngularModel::Polynomial(coeffs) => {
                let mut acc = 0.0;
                for &c in coeffs.iter().rev() {
                    acc = acc * z + c;
                }
                acc
            }
            AngularModel::Sampled(values) => {
                let n = values.len();
                if n == 1 {
                    return values[0];
                }
                let pos = (z + 1.0) / 2.0 * (n - 1) as f64;
                let i = (pos.floor() as usize).min(n - 2);
                let frac = pos - i as f64;
                values[i] * (1.0 - frac) + values[i + 1] * frac
            }
        }
    }
}

fn symmetrize(angular: AngularModel) -> Result<(AngularModel, bool)> {
    match angular {
        AngularModel::Constant(c) => {
            if c < 0.0 {
                return Err(Error::Precondition("angular factor negative".into()));
            }
            Ok((AngularModel::Constant(c), false))
        }
        AngularModel::Polynomial(coeffs) => {
            let uneven = coeffs
                .iter()
                .skip(1)
                .step_by(2)
                .any(|&c| c.abs() > 1e-12);
            let even: Vec<f64> = coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| if i % 2 == 1 { 0.0 } else { c })
                .collect();
            check_nonneg(&AngularModel::Polynomial(even.clone()))?;
            Ok((AngularModel::Polynomial(even), uneven))
        }
        AngularModel::Sampled(values) => {
            if values.is_empty() {
                return Err(Error::Precondition("empty angular table".into()));
            }
            let n = values.len();
            let mut sym = values.clone();
            let mut uneven = false;
            for i in 0..n {
                let j = n - 1 - i;
                let avg = 0.5 * (values[i] + values[j]);
                if (values[i] - values[j]).abs() > 1e-12 {
                    uneven = true;
                }
                sym[i] = avg;
            }
            check_nonneg(&AngularModel::Sampled(sym.clone()))?;
            Ok((AngularModel::Sampled(sym), uneven))
        }
    }
}

fn check_nonneg(angular: &AngularModel) -> Result<()> {
    let probe = CrossSectionModel {
        gamma: 0.0,
        angular: angular.clone(),
        b_sup: 0.0,
        symmetrized: false,
        u_floor: 0.0,
    };
    for i in 0..=200 {
        let z = -1.0 + 2.0 * i as f64 / 200.0;
        if probe.angular_eval(z) < 0.0 {
            return Err(Error::Precondition(format!(
                "angular factor negative at z = {z}"
            )));
        }
    }
    Ok(())
}

fn sup_abs(angular: &AngularModel) -> f64 {
    let probe = CrossSectionModel {
        gamma: 0.0,
        angular: angular.clone(),
        b_sup: 0.0,
        symmetrized: false,
        u_floor: 0.0,
    };
    let mut sup: f64 = 0.0;
    for i in 0..=400 {
        let z = -1.0 + 2.0 * i as f64 / 400.0;
        sup = sup.max(probe.angular_eval(z).abs());
    }
    sup
}

/// Post-collision velocity pair.
#[derive(Debug, Clone, Copy)]
pub struct CollisionOutcome {
    pub v_star: VecD,
    pub v1_star: VecD,
}

/// v*  = (v+v1)/2 + (|v1-v|/2) sigma,
/// v1* = (v+v1)/2 - (|v1-v|/2) sigma.
pub fn post_collision(v: &VecD, v1: &VecD, sigma: &ScatterDirection) -> CollisionOutcome {
    let center = v.add(v1).scale(0.5);
    let half_speed = 0.5 * v1.sub(v).norm();
    let offset = sigma.vector().scale(half_speed);
    CollisionOutcome {
        v_star: center.add(&offset),
        v1_star: center.sub(&offset),
    }
}

/// B(sigma, u) = |u|^gamma b(u_hat . sigma).
///
/// At u = 0: hard potentials give 0; Maxwell molecules use b(0) by
/// convention; soft potentials surface a `SingularPoint` error so the
/// quadrature layer can drop the sample.
pub fn cross_section(
    model: &CrossSectionModel,
    sigma: &ScatterDirection,
    u: &VecD,
) -> Result<f64> {
    let speed = u.norm();
    if speed <= model.u_floor {
        if model.gamma > 0.0 {
            return Ok(0.0);
        }
        if model.gamma == 0.0 {
            return Ok(model.angular_eval(0.0));
        }
        return Err(Error::SingularPoint {
            rel_speed: speed,
            floor: model.u_floor,
            gamma: model.gamma,
        });
    }
    let cos = u.dot(sigma.vector()) / speed;
    Ok(speed.powf(model.gamma) * model.angular_eval(cos))
}

/// Distances and identities entering the a-priori estimate.
#[derive(Debug, Clone, Copy)]
pub struct CollisionGeometry {
    /// |v - v*|
    pub d_star: f64,
    /// |v - v1*|
    pub d1_star: f64,
    /// (v - v*) . (v - v1*); zero by momentum/energy conservation.
    pub ortho_defect: f64,
    /// |v - v*| |v - v1*|
    pub carleman_lhs: f64,
    /// (|u|^2 / 2) sqrt(1 - (u_hat . sigma)^2)
    pub carleman_rhs: f64,
}

pub fn collision_geometry(
    v: &VecD,
    v1: &VecD,
    sigma: &ScatterDirection,
) -> CollisionGeometry {
    let u = v1.sub(v);
    let speed = u.norm();
    if speed == 0.0 {
        return CollisionGeometry {
            d_star: 0.0,
            d1_star: 0.0,
            ortho_defect: 0.0,
            carleman_lhs: 0.0,
            carleman_rhs: 0.0,
        };
    }
    let out = post_collision(v, v1, sigma);
    let to_star = v.sub(&out.v_star);
    let to_1star = v.sub(&out.v1_star);
    let d_star = to_star.norm();
    let d1_star = to_1star.norm();
    let cos = u.dot(sigma.vector()) / speed;
    let sin_sq = (1.0 - cos * cos).max(0.0);
    CollisionGeometry {
        d_star,
        d1_star,
        ortho_defect: to_star.dot(&to_1star),
        carleman_lhs: d_star * d1_star,
        carleman_rhs: 0.5 * speed * speed * sin_sq.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn aligned_sigma_swaps_velocities() {
        let v = VecD::zeros(3);
        let v1 = VecD::from_slice(&[2.0, 0.0, 0.0]);
        let sigma = ScatterDirection::from_slice(&[1.0, 0.0, 0.0]).unwrap();
        let out = post_collision(&v, &v1, &sigma);
        assert_eq!(out.v_star.as_slice(), &[2.0, 0.0, 0.0]);
        assert_eq!(out.v1_star.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn orthogonal_sigma_example() {
        let v = VecD::zeros(3);
        let v1 = VecD::from_slice(&[2.0, 0.0, 0.0]);
        let sigma = ScatterDirection::from_slice(&[0.0, 1.0, 0.0]).unwrap();
        let out = post_collision(&v, &v1, &sigma);
        assert_eq!(out.v_star.as_slice(), &[1.0, 1.0, 0.0]);
        assert_eq!(out.v1_star.as_slice(), &[1.0, -1.0, 0.0]);
        let energy = out.v_star.norm_sq() + out.v1_star.norm_sq();
        assert!((energy - 4.0).abs() < 1e-14);
    }

    #[test]
    fn equal_velocities_are_fixed() {
        let v = VecD::from_slice(&[1.0, -2.0, 0.5]);
        let sigma = ScatterDirection::from_slice(&[0.0, 0.0, 1.0]).unwrap();
        let out = post_collision(&v, &v, &sigma);
        assert_eq!(out.v_star, v);
        assert_eq!(out.v1_star, v);
    }

    #[test]
    fn conservation_randomized() {
        for d in [3usize, 4] {
            let mut r = rng::substream(101, &[d as u64]);
            for _ in 0..100_000 {
                let v = VecD::gaussian(&mut r, d, 2.0);
                let v1 = VecD::gaussian(&mut r, d, 2.0);
                let sigma = ScatterDirection::new(VecD::random_unit(&mut r, d)).unwrap();
                let out = post_collision(&v, &v1, &sigma);
                let dp = out.v_star.add(&out.v1_star).sub(&v.add(&v1)).norm();
                let de = (out.v_star.norm_sq() + out.v1_star.norm_sq()
                    - v.norm_sq()
                    - v1.norm_sq())
                .abs();
                let dr = (out.v1_star.sub(&out.v_star).norm() - v1.sub(&v).norm()).abs();
                let scale = 1.0 + v.norm_sq() + v1.norm_sq();
                assert!(dp < 1e-12 * scale);
                assert!(de < 1e-12 * scale);
                assert!(dr < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn microreversibility() {
        let mut r = rng::substream(77, &[0]);
        for _ in 0..1000 {
            let v = VecD::gaussian(&mut r, 3, 1.0);
            let v1 = VecD::gaussian(&mut r, 3, 1.0);
            let sigma = ScatterDirection::new(VecD::random_unit(&mut r, 3)).unwrap();
            let out = post_collision(&v, &v1, &sigma);
            let scale = 1.0 + v.norm() + v1.norm();
            // sigma is the relative direction of the starred pair, so the
            // starred pair is a fixed point of the transform
            let again = post_collision(&out.v_star, &out.v1_star, &sigma);
            assert!(
                again.v_star.sub(&out.v_star).norm() + again.v1_star.sub(&out.v1_star).norm()
                    < 1e-12 * scale
            );
            // scattering the starred pair along the original relative
            // direction recovers (v, v1) up to ordering
            if let Some(u_hat) = v1.sub(&v).normalized() {
                let back = post_collision(
                    &out.v_star,
                    &out.v1_star,
                    &ScatterDirection::new(u_hat).unwrap(),
                );
                let same = back.v_star.sub(&v).norm() + back.v1_star.sub(&v1).norm();
                let swapped = back.v_star.sub(&v1).norm() + back.v1_star.sub(&v).norm();
                assert!(same.min(swapped) < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn hard_sphere_example() {
        let model = CrossSectionModel::hard_sphere(3);
        let u = VecD::from_slice(&[2.0, 0.0, 0.0]);
        let sigma = ScatterDirection::from_slice(&[0.0, 1.0, 0.0]).unwrap();
        assert!((cross_section(&model, &sigma, &u).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn maxwell_independent_of_speed() {
        let model = CrossSectionModel::maxwell(3, 1.0);
        let sigma = ScatterDirection::from_slice(&[0.0, 0.0, 1.0]).unwrap();
        for speed in [0.1, 1.0, 25.0] {
            let u = VecD::from_slice(&[speed, 0.0, 0.0]);
            assert!((cross_section(&model, &sigma, &u).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hard_potential_vanishes_at_zero_u() {
        let model = CrossSectionModel::hard_sphere(3);
        let sigma = ScatterDirection::from_slice(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            cross_section(&model, &sigma, &VecD::zeros(3)).unwrap(),
            0.0
        );
    }

    #[test]
    fn soft_potential_flags_singularity() {
        let model = CrossSectionModel::new(3, -1.0, AngularModel::Constant(1.0)).unwrap();
        let sigma = ScatterDirection::from_slice(&[1.0, 0.0, 0.0]).unwrap();
        let err = cross_section(&model, &sigma, &VecD::zeros(3));
        assert!(matches!(err, Err(Error::SingularPoint { .. })));
    }

    #[test]
    fn evenness_of_kernel() {
        let model = CrossSectionModel::new(
            3,
            1.0,
            AngularModel::Polynomial(vec![0.5, 0.0, 0.25]),
        )
        .unwrap();
        let mut r = rng::substream(5, &[0]);
        for _ in 0..1000 {
            let u = VecD::gaussian(&mut r, 3, 1.0);
            let s = VecD::random_unit(&mut r, 3);
            let sp = ScatterDirection::new(s).unwrap();
            let sm = ScatterDirection::new(s.scale(-1.0)).unwrap();
            let a = cross_section(&model, &sp, &u).unwrap();
            let b = cross_section(&model, &sm, &u).unwrap();
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn uneven_table_is_symmetrized() {
        let model =
            CrossSectionModel::new(3, 0.0, AngularModel::Sampled(vec![0.0, 1.0, 2.0])).unwrap();
        assert!(model.symmetrized);
        assert!((model.angular_eval(-1.0) - model.angular_eval(1.0)).abs() < 1e-15);
    }

    #[test]
    fn geometry_worked_example() {
        let v = VecD::zeros(3);
        let v1 = VecD::from_slice(&[2.0, 0.0, 0.0]);
        let sigma = ScatterDirection::from_slice(&[0.0, 1.0, 0.0]).unwrap();
        let g = collision_geometry(&v, &v1, &sigma);
        assert!((g.d_star - 2.0_f64.sqrt()).abs() < 1e-14);
        assert!((g.d1_star - 2.0_f64.sqrt()).abs() < 1e-14);
        assert!(g.ortho_defect.abs() < 1e-14);
        assert!((g.carleman_lhs - 2.0).abs() < 1e-14);
        assert!((g.carleman_rhs - 2.0).abs() < 1e-14);
    }

    #[test]
    fn geometry_degenerate() {
        let v = VecD::from_slice(&[1.0, 1.0, 1.0]);
        let sigma = ScatterDirection::from_slice(&[1.0, 0.0, 0.0]).unwrap();
        let g = collision_geometry(&v, &v, &sigma);
        assert_eq!(g.carleman_lhs, 0.0);
        assert_eq!(g.carleman_rhs, 0.0);
        assert_eq!(g.ortho_defect, 0.0);
    }

    #[test]
    fn geometry_identities_randomized() {
        let mut r = rng::substream(303, &[9]);
        for _ in 0..100_000 {
            let v = VecD::gaussian(&mut r, 3, 3.0);
            let v1 = VecD::gaussian(&mut r, 3, 3.0);
            let sigma = ScatterDirection::new(VecD::random_unit(&mut r, 3)).unwrap();
            let u2 = v1.sub(&v).norm_sq();
            let g = collision_geometry(&v, &v1, &sigma);
            assert!(g.ortho_defect.abs() < 1e-12 * u2.max(1e-300));
            assert!((g.carleman_lhs - g.carleman_rhs).abs() < 1e-10 * u2.max(1e-300));
        }
    }

    #[test]
    fn linearity_in_angular_sup() {
        let m1 = CrossSectionModel::new(3, 1.0, AngularModel::Constant(0.5)).unwrap();
        let m2 = CrossSectionModel::new(3, 1.0, AngularModel::Constant(1.0)).unwrap();
        assert!((m2.b_sup() - 2.0 * m1.b_sup()).abs() < 1e-15);
    }

    #[test]
    fn random_polys_nonnegative_checker() {
        let mut r = rng::substream(11, &[4]);
        for _ in 0..20 {
            let c0: f64 = r.gen_range(0.5..2.0);
            let c2: f64 = r.gen_range(0.0..c0);
            let model =
                CrossSectionModel::new(3, 0.5, AngularModel::Polynomial(vec![c0, 0.0, -c2]));
            assert!(model.is_ok());
        }
    }
}
