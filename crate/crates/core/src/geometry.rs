//! Acquisition geometry and sinogram containers.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamKind {
    Parallel,
    FanBeam,
}

/// 2D scan geometry: a set of projection angles and a linear detector array.
///
/// For fan-beam scans the source sits at distance `source_radius` from the
/// origin and the physical detector at `detector_radius` on the far side; rays
/// are parameterized on a flat virtual detector line through the origin, so
/// the effective detector spacing is scaled by
/// `source_radius / (source_radius + detector_radius)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry<S> {
    kind: BeamKind,
    angles: Vec<S>,
    num_detectors: usize,
    detector_spacing: S,
    source_radius: S,
    detector_radius: S,
}

impl<S: Real> ScanGeometry<S> {
    pub fn parallel(angles: Vec<S>, num_detectors: usize, detector_spacing: S) -> Result<Self> {
        Self::build(BeamKind::Parallel, angles, num_detectors, detector_spacing, S::zero(), S::zero())
    }

    pub fn fan_beam(
        angles: Vec<S>,
        num_detectors: usize,
        detector_spacing: S,
        source_radius: S,
        detector_radius: S,
    ) -> Result<Self> {
        if source_radius <= S::zero() || detector_radius <= S::zero() {
            return Err(Error::Config("fan-beam radii must be strictly positive".into()));
        }
        Self::build(BeamKind::FanBeam, angles, num_detectors, detector_spacing, source_radius, detector_radius)
    }

    fn build(
        kind: BeamKind,
        angles: Vec<S>,
        num_detectors: usize,
        detector_spacing: S,
        source_radius: S,
        detector_radius: S,
    ) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::Config("at least one projection angle required".into()));
        }
        if num_detectors == 0 {
            return Err(Error::Config("at least one detector required".into()));
        }
        if detector_spacing <= S::zero() {
            return Err(Error::Config("detector spacing must be positive".into()));
        }
        let two_pi = S::from_f64_(std::f64::consts::TAU);
        for w in angles.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("angles must be strictly increasing".into()));
            }
        }
        if angles[0] < S::zero() || *angles.last().unwrap() >= two_pi {
            return Err(Error::Config("angles must lie in [0, 2*pi)".into()));
        }
        Ok(Self { kind, angles, num_detectors, detector_spacing, source_radius, detector_radius })
    }

    /// Uniform angles in [0, 2*pi).
    pub fn uniform_angles(num_angles: usize) -> Vec<S> {
        let two_pi = S::from_f64_(std::f64::consts::TAU);
        (0..num_angles)
            .map(|i| two_pi * S::from_f64_(i as f64) / S::from_f64_(num_angles as f64))
            .collect()
    }

    pub fn kind(&self) -> BeamKind {
        self.kind
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn num_detectors(&self) -> usize {
        self.num_detectors
    }

    pub fn angles(&self) -> &[S] {
        &self.angles
    }

    pub fn detector_spacing(&self) -> S {
        self.detector_spacing
    }

    pub fn source_radius(&self) -> S {
        self.source_radius
    }

    pub fn detector_radius(&self) -> S {
        self.detector_radius
    }

    /// Total number of rays M = num_angles * num_detectors.
    pub fn num_rays(&self) -> usize {
        self.angles.len() * self.num_detectors
    }

    /// Signed detector offset of detector index d, centered on the array.
    fn detector_offset(&self, detector: usize) -> S {
        let half = S::from_f64_(0.5);
        let centered = S::from_f64_(detector as f64) - (S::from_f64_(self.num_detectors as f64) - S::one()) * half;
        let spacing = match self.kind {
            BeamKind::Parallel => self.detector_spacing,
            // project the physical detector element onto the virtual line
            // through the origin
            BeamKind::FanBeam => {
                self.detector_spacing * self.source_radius / (self.source_radius + self.detector_radius)
            }
        };
        centered * spacing
    }

    /// The ray for (angle index, detector index) as (origin, unit direction).
    pub fn ray(&self, angle_idx: usize, detector: usize) -> ((S, S), (S, S)) {
        let theta = self.angles[angle_idx];
        let (sin_t, cos_t) = (theta.sin(), theta.cos());
        let offset = self.detector_offset(detector);
        match self.kind {
            BeamKind::Parallel => {
                // line { x : <x, (cos t, sin t)> = offset }
                let origin = (offset * cos_t, offset * sin_t);
                let dir = (-sin_t, cos_t);
                (origin, dir)
            }
            BeamKind::FanBeam => {
                let src = (self.source_radius * cos_t, self.source_radius * sin_t);
                let det = (-offset * sin_t, offset * cos_t);
                let (dx, dy) = (det.0 - src.0, det.1 - src.1);
                let len = (dx * dx + dy * dy).sqrt();
                (src, (dx / len, dy / len))
            }
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.angles.len() == other.angles.len()
            && self.num_detectors == other.num_detectors
    }
}

/// Per-energy log-transformed measurement vector with its geometry,
/// angle-major (row i = angle index * num_detectors + detector index).
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram<S> {
    geometry: ScanGeometry<S>,
    values: Vec<S>,
    energy_label: Option<String>,
}

impl<S: Real> Sinogram<S> {
    pub fn new(geometry: ScanGeometry<S>, values: Vec<S>, energy_label: Option<String>) -> Result<Self> {
        if values.len() != geometry.num_rays() {
            return Err(Error::Config(format!(
                "sinogram length {} does not match geometry ({} rays)",
                values.len(),
                geometry.num_rays()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("sinogram contains non-finite values".into()));
        }
        Ok(Self { geometry, values, energy_label })
    }

    pub fn zeros(geometry: ScanGeometry<S>) -> Self {
        let n = geometry.num_rays();
        Self { geometry, values: vec![S::zero(); n], energy_label: None }
    }

    pub fn geometry(&self) -> &ScanGeometry<S> {
        &self.geometry
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn energy_label(&self) -> Option<&str> {
        self.energy_label.as_deref()
    }

    pub fn set_energy_label(&mut self, label: Option<String>) {
        self.energy_label = label;
    }

    #[inline]
    pub fn at(&self, angle_idx: usize, detector: usize) -> S {
        self.values[angle_idx * self.geometry.num_detectors() + detector]
    }

    pub fn dot(&self, other: &Self) -> S {
        self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm(&self) -> S {
        self.dot(self).sqrt()
    }
}
