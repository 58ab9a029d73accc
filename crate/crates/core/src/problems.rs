//! Parametric diffusion problems with disk inclusions, and seeded sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_rhs, compute_upsilon, DiffusionField, RhsField};
use crate::error::{Error, Result};
use crate::field::{interpolate, Image};
use crate::mesh::GridHierarchy;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: (f64, f64),
    pub radius: f64,
}

impl Disk {
    /// Closed-disk membership.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// `kappa(x, y) = base + sum_i y_i chi_{D_i}(x)` with a constant load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionProblem {
    pub base: f64,
    pub disks: Vec<Disk>,
    pub load: f64,
}

impl InclusionProblem {
    /// Two inclusions of radius 0.15 on the right half, background 0.1, `f = 1`.
    pub fn cookie() -> Self {
        Self {
            base: 0.1,
            disks: vec![Disk { center: (0.75, 0.25), radius: 0.15 }, Disk { center: (0.75, 0.75), radius: 0.15 }],
            load: 1.0,
        }
    }

    pub fn parameter_dim(&self) -> usize {
        self.disks.len()
    }

    /// Bounds `c <= kappa <= C` valid for every parameter in `[0, 1]^d`.
    pub fn ellipticity_bounds(&self) -> (f64, f64) {
        (self.base, self.base + self.disks.len() as f64)
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.disks.len() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.disks.len(), params.len())));
        }
        if let Some(p) = params.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::OutOfRange(format!("parameter {p} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn kappa_at(&self, x: f64, y: f64, params: &[f64]) -> Result<f64> {
        self.check_params(params)?;
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::OutOfRange(format!("point ({x}, {y}) lies outside the unit square")));
        }
        Ok(self.kappa_unchecked(x, y, params))
    }

    fn kappa_unchecked(&self, x: f64, y: f64, params: &[f64]) -> f64 {
        self.base + self.disks.iter().zip(params).filter(|(d, _)| d.contains(x, y)).map(|(_, p)| p).sum::<f64>()
    }

    /// Nodal interpolant of `kappa` on the finest level.
    pub fn discretize_kappa(&self, g: &GridHierarchy, params: &[f64]) -> Result<Image> {
        self.check_params(params)?;
        Ok(interpolate(g, g.finest(), |x, y| self.kappa_unchecked(x, y, params)))
    }

    pub fn load_image(&self, g: &GridHierarchy) -> Image {
        interpolate(g, g.finest(), |_, _| self.load)
    }

    pub fn diffusion(&self, g: &GridHierarchy, params: &[f64]) -> Result<DiffusionField> {
        compute_upsilon(g, &self.discretize_kappa(g, params)?)
    }

    pub fn rhs(&self, g: &GridHierarchy) -> Result<RhsField> {
        assemble_rhs(g, &self.load_image(g))
    }
}

/// Seeded ChaCha20 stream; [`SampleRng::fork`] jumps to an independent stream.
#[derive(Clone, Debug)]
pub struct SampleRng {
    inner: ChaCha20Rng,
}

impl SampleRng {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = self.inner.clone();
        inner.set_stream(stream);
        inner.set_word_pos(0);
        Self { inner }
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }
}

/// `count` parameter vectors drawn uniformly from `[0, 1]^dim`.
pub fn sample_parameters(rng: &mut SampleRng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..dim).map(|_| rng.uniform()).collect()).collect()
}
