//! Numerical companion to the global well-posedness theory of the
//! Boltzmann hierarchy: collision kinematics and kernels, weighted
//! sup-norm spaces, the inequality lemmas behind the a-priori estimate,
//! gain/loss operator quadrature, the board-game reorganization of the
//! Dyson expansion, and the constructive mild-solution machinery.

pub mod boardgame;
pub mod collision;
pub mod error;
pub mod estimates;
pub mod kinematics;
pub mod quad;
pub mod rng;
pub mod solver;
pub mod spaces;
pub mod vec;

pub use error::{Error, Result};
pub use vec::VecD;
