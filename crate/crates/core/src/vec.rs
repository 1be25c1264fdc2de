//! Fixed-capacity d-dimensional vectors for positions and velocities.
//!
//! Dimension is a runtime value (d >= 2, at most [`MAX_DIM`]); storage is an
//! inline array so the hot collision loops never allocate.

use rand::Rng;
use rand_distr::StandardNormal;

/// Largest spatial dimension supported by the inline storage.
pub const MAX_DIM: usize = 8;

/// A point or velocity in R^d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VecD {
    dim: usize,
    comp: [f64; MAX_DIM],
}

impl VecD {
    pub fn zeros(dim: usize) -> Self {
        assert!((2..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        VecD {
            dim,
            comp: [0.0; MAX_DIM],
        }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut v = VecD::zeros(values.len());
        v.comp[..values.len()].copy_from_slice(values);
        v
    }

    /// Unit basis vector e_i.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = VecD::zeros(dim);
        v.comp[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.comp[..self.dim]
    }

    pub fn get(&self, i: usize) -> f64 {
        debug_assert!(i < self.dim);
        self.comp[i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        debug_assert!(i < self.dim);
        self.comp[i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|c| c.is_finite())
    }

    pub fn dot(&self, other: &VecD) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut acc = 0.0;
        for i in 0..self.dim {
            acc += self.comp[i] * other.comp[i];
        }
        acc
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn add(&self, other: &VecD) -> VecD {
        debug_assert_eq!(self.dim, other.dim);
        let mut out = *self;
        for i in 0..self.dim {
            out.comp[i] += other.comp[i];
        }
        out
    }

    pub fn sub(&self, other: &VecD) -> VecD {
        debug_assert_eq!(self.dim, other.dim);
        let mut out = *self;
        for i in 0..self.dim {
            out.comp[i] -= other.comp[i];
        }
        out
    }

    pub fn scale(&self, factor: f64) -> VecD {
        let mut out = *self;
        for i in 0..self.dim {
            out.comp[i] *= factor;
        }
        out
    }

    /// x + s*y, the free-streaming update.
    pub fn add_scaled(&self, s: f64, y: &VecD) -> VecD {
        debug_assert_eq!(self.dim, y.dim);
        let mut out = *self;
        for i in 0..self.dim {
            out.comp[i] += s * y.comp[i];
        }
        out
    }

    pub fn normalized(&self) -> Option<VecD> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            None
        } else {
            Some(self.scale(1.0 / n))
        }
    }

    /// Standard-normal components scaled by `sigma`.
    pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize, sigma: f64) -> VecD {
        let mut v = VecD::zeros(dim);
        for i in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            v.comp[i] = sigma * z;
        }
        v
    }

    /// Uniform direction on the unit sphere S^{d-1}.
    pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> VecD {
        loop {
            let g = VecD::gaussian(rng, dim, 1.0);
            if let Some(u) = g.normalized() {
                return u;
            }
        }
    }
}
