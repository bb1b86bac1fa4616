//! Discrete gradient and divergence on image grids, and the directional
//! weighting field P = I - xi (x) xi applied to vector fields.
//!
//! The gradient uses forward differences with replicate (Neumann) boundary:
//! the last row/column difference is zero. `divergence` is the exact negative
//! adjoint of `gradient`, which the dual prox solver relies on.

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::scalar::Real;

/// A two-component vector field on an image grid: channel 1 holds the
/// row-direction derivative, channel 2 the column-direction derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<S> {
    rows: usize,
    cols: usize,
    comp1: Vec<S>,
    comp2: Vec<S>,
}

impl<S: Real> VectorField<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Self { rows, cols, comp1: vec![S::zero(); n], comp2: vec![S::zero(); n] }
    }

    pub fn new(rows: usize, cols: usize, comp1: Vec<S>, comp2: Vec<S>) -> Result<Self> {
        if comp1.len() != rows * cols || comp2.len() != rows * cols {
            return Err(Error::Config("vector field component length mismatch".into()));
        }
        Ok(Self { rows, cols, comp1, comp2 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.comp1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comp1.is_empty()
    }

    pub fn comp1(&self) -> &[S] {
        &self.comp1
    }

    pub fn comp2(&self) -> &[S] {
        &self.comp2
    }

    pub fn comp1_mut(&mut self) -> &mut [S] {
        &mut self.comp1
    }

    pub fn comp2_mut(&mut self) -> &mut [S] {
        &mut self.comp2
    }

    #[inline]
    pub fn at(&self, idx: usize) -> (S, S) {
        (self.comp1[idx], self.comp2[idx])
    }

    #[inline]
    pub fn set(&mut self, idx: usize, v: (S, S)) {
        self.comp1[idx] = v.0;
        self.comp2[idx] = v.1;
    }

    /// Pixelwise Euclidean norm of the field entry.
    #[inline]
    pub fn norm_at(&self, idx: usize) -> S {
        let (a, b) = self.at(idx);
        (a * a + b * b).sqrt()
    }

    pub fn max_norm(&self) -> S {
        (0..self.len()).fold(S::zero(), |m, i| m.max(self.norm_at(i)))
    }

    pub fn dot(&self, other: &Self) -> S {
        let d1: S = self.comp1.iter().zip(&other.comp1).map(|(&a, &b)| a * b).sum();
        let d2: S = self.comp2.iter().zip(&other.comp2).map(|(&a, &b)| a * b).sum();
        d1 + d2
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// Forward-difference gradient with Neumann boundary, scaled by 1/pixel_size.
pub fn gradient<S: Real>(u: &ImageGrid<S>) -> VectorField<S> {
    let (rows, cols) = (u.rows(), u.cols());
    let inv_h = S::one() / u.pixel_size();
    let mut g = VectorField::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let idx = i * cols + j;
            if i + 1 < rows {
                g.comp1[idx] = (u.at(i + 1, j) - u.at(i, j)) * inv_h;
            }
            if j + 1 < cols {
                g.comp2[idx] = (u.at(i, j + 1) - u.at(i, j)) * inv_h;
            }
        }
    }
    g
}

/// Negative adjoint of `gradient`: `<grad u, p> = -<u, div p>` exactly.
/// `pixel_size` must match the grid the field was built on.
pub fn divergence<S: Real>(p: &VectorField<S>, pixel_size: S) -> ImageGrid<S> {
    let (rows, cols) = (p.rows(), p.cols());
    let inv_h = S::one() / pixel_size;
    let mut out = ImageGrid::zeros(rows, cols, pixel_size);
    for i in 0..rows {
        for j in 0..cols {
            let idx = i * cols + j;
            let mut v = S::zero();
            // row component: backward difference with the boundary terms of
            // the transposed forward-difference stencil
            if i + 1 < rows {
                v += p.comp1[idx];
            }
            if i > 0 {
                v -= p.comp1[idx - cols];
            }
            if j + 1 < cols {
                v += p.comp2[idx];
            }
            if j > 0 {
                v -= p.comp2[idx - 1];
            }
            out.values_mut()[idx] = v * inv_h;
        }
    }
    out
}

/// The field xi together with its contrast cap and singularity parameter.
/// The projector P_j = I - xi_j (x) xi_j is stored implicitly through xi.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalWeight<S> {
    xi: VectorField<S>,
    eta_cap: S,
    epsilon: S,
}

impl<S: Real> DirectionalWeight<S> {
    pub fn new(xi: VectorField<S>, eta_cap: S, epsilon: S) -> Result<Self> {
        if eta_cap < S::zero() || eta_cap >= S::one() {
            return Err(Error::Config("eta cap must lie in [0, 1)".into()));
        }
        if epsilon <= S::zero() {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        let slack = S::from_f64_(1e-12);
        for idx in 0..xi.len() {
            let n = xi.norm_at(idx);
            if !n.is_finite() || n > eta_cap + slack {
                return Err(Error::Config(format!(
                    "||xi|| = {n} at pixel {idx} exceeds the cap {eta_cap}"
                )));
            }
        }
        Ok(Self { xi, eta_cap, epsilon })
    }

    pub fn xi(&self) -> &VectorField<S> {
        &self.xi
    }

    pub fn eta_cap(&self) -> S {
        self.eta_cap
    }

    pub fn epsilon(&self) -> S {
        self.epsilon
    }

    /// Pixelwise p_j - <xi_j, p_j> xi_j.
    pub fn apply(&self, p: &VectorField<S>) -> Result<VectorField<S>> {
        if !self.xi.same_shape(p) {
            return Err(Error::Config("vector field shape mismatch in apply_weight".into()));
        }
        let mut out = p.clone();
        for idx in 0..p.len() {
            let (x1, x2) = self.xi.at(idx);
            let (p1, p2) = p.at(idx);
            let inner = x1 * p1 + x2 * p2;
            out.comp1[idx] = p1 - inner * x1;
            out.comp2[idx] = p2 - inner * x2;
        }
        Ok(out)
    }
}

/// Apply the weighting field to a vector field (free-function form).
pub fn apply_weight<S: Real>(w: &DirectionalWeight<S>, p: &VectorField<S>) -> Result<VectorField<S>> {
    w.apply(p)
}
