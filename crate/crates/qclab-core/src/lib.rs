//! qclab-core: numerical workbench for planar quasiconformal maps.
//!
//! The crate solves Beltrami equations ∂̄f = μ ∂f for principal maps with a
//! spectral Neumann iteration, and builds on that solver a set of desk-scale
//! experiments: dyadic packing and smoothness statistics, weighted operator
//! norms, distortion inequalities for families of disks, covering sums and
//! box dimension along quasilines, and derivative tail statistics for
//! conformal maps with quasiconformal extensions.

pub mod distortion;
pub mod dyadic;
pub mod error;
pub mod field;
pub mod hausdorff;
pub mod riemann;
pub mod rng;
pub mod solver;
pub mod weighted;

pub use error::{Error, Result};

use num_complex::Complex64;

/// A planar map that can be evaluated pointwise; implemented by solved
/// principal maps, refined quasilines and closed-form references so the
/// geometry experiments can run against any of them.
pub trait PlanarMap {
    fn eval(&self, z: Complex64) -> Result<Complex64>;

    /// Finest reliable spatial scale of the representation; closed form maps
    /// return 0. Measurement loops refuse to subdivide below a few multiples
    /// of this scale.
    fn resolution_scale(&self) -> f64;
}

/// Closed-form map wrapper for oracles and identity baselines.
pub struct AnalyticMap<F: Fn(Complex64) -> Complex64> {
    f: F,
}

impl<F: Fn(Complex64) -> Complex64> AnalyticMap<F> {
    pub fn new(f: F) -> Self {
        AnalyticMap { f }
    }
}

impl<F: Fn(Complex64) -> Complex64> PlanarMap for AnalyticMap<F> {
    fn eval(&self, z: Complex64) -> Result<Complex64> {
        Ok((self.f)(z))
    }

    fn resolution_scale(&self) -> f64 {
        0.0
    }
}

/// The identity map.
pub fn identity_map() -> AnalyticMap<impl Fn(Complex64) -> Complex64> {
    AnalyticMap::new(|z| z)
}
