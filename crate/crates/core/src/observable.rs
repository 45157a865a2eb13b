//! Uniform cell grids on the circle and sampled observables.

use crate::error::{Error, Result};

/// `M` uniform cells of `[0, 1)` with nodes at the cell midpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    m: usize,
}

impl Grid {
    pub const MIN_CELLS: usize = 16;

    pub fn new(m: usize) -> Result<Self> {
        if m < Self::MIN_CELLS {
            return Err(Error::InvalidGrid(format!(
                "need at least {} cells, got {m}",
                Self::MIN_CELLS
            )));
        }
        Ok(Self { m })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.m as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.node(i)).collect()
    }

    /// Cell `[i/M, (i+1)/M)` containing `x` (after reduction mod 1).
    pub fn cell_of(&self, x: f64) -> usize {
        let x = crate::map::wrap(x);
        ((x * self.m as f64) as usize).min(self.m - 1)
    }

    /// Left interpolation node and weight of the right neighbour, so that the
    /// interpolated value is `(1 - t) s[i] + t s[i + 1 mod M]`.
    pub fn stencil(&self, x: f64) -> (usize, f64) {
        let u = crate::map::wrap(x) * self.m as f64 - 0.5;
        let fl = u.floor();
        let t = u - fl;
        let i = (fl as i64).rem_euclid(self.m as i64) as usize;
        (i, t)
    }
}

/// Real samples at the nodes of a [`Grid`], linearly interpolated on the circle.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    samples: Vec<f64>,
}

impl Observable {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() < Grid::MIN_CELLS {
            return Err(Error::InvalidGrid(format!(
                "need at least {} samples, got {}",
                Grid::MIN_CELLS,
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("sample {i} is not finite")));
        }
        Ok(Self { samples })
    }

    pub(crate) fn from_vec_unchecked(samples: Vec<f64>) -> Self {
        Self { samples }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            samples: (0..grid.len()).map(|i| f(grid.node(i))).collect(),
        }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self {
            samples: vec![c; grid.len()],
        }
    }

    pub fn grid(&self) -> Grid {
        Grid {
            m: self.samples.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn interpolate(&self, x: f64) -> f64 {
        let (i, t) = self.grid().stencil(x);
        let j = if i + 1 == self.samples.len() {
            0
        } else {
            i + 1
        };
        (1.0 - t) * self.samples[i] + t * self.samples[j]
    }

    pub fn sup_norm(&self) -> f64 {
        self.samples.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            samples: self.samples.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn shift(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        assert_eq!(
            self.len(),
            other.len(),
            "observables live on different grids"
        );
        Self {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    /// `Σ_i self_i w_i` for cell weights `w`.
    pub fn integrate(&self, weights: &[f64]) -> f64 {
        self.samples.iter().zip(weights).map(|(v, w)| v * w).sum()
    }
}

/// A complex observable stored as its real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexObservable {
    pub re: Observable,
    pub im: Observable,
}

impl ComplexObservable {
    /// `e^{2πi k x}` sampled on the grid.
    pub fn fourier_mode(grid: &Grid, k: i64) -> Self {
        let w = 2.0 * std::f64::consts::PI * k as f64;
        Self {
            re: Observable::from_fn(grid, |x| (w * x).cos()),
            im: Observable::from_fn(grid, |x| (w * x).sin()),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.re
            .samples()
            .iter()
            .zip(self.im.samples())
            .fold(0.0, |a, (r, i)| a.max(r.hypot(*i)))
    }
}
