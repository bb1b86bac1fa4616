//! Synthetic multi-energy data generation: phantom rasterization,
//! Beer-Lambert photon transport, Poisson sampling, and log-sinogram
//! formation.
//!
//! The model is monoenergetic per channel: each energy has a single
//! attenuation value per material and an expected per-ray photon count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ScanGeometry, Sinogram};
use crate::grid::ImageGrid;
use crate::projector::forward_project;

/// A geometric region primitive in physical coordinates (the same centered
/// frame the projector uses).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rectangle { x0: f64, y0: f64, x1: f64, y1: f64 },
    Polygon { points: Vec<(f64, f64)> },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Disk { cx, cy, r } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
            Shape::Rectangle { x0, y0, x1, y1 } => {
                x >= x0.min(*x1) && x <= x0.max(*x1) && y >= y0.min(*y1) && y <= y0.max(*y1)
            }
            Shape::Polygon { points } => {
                // even-odd rule
                let mut inside = false;
                let n = points.len();
                for i in 0..n {
                    let (x1, y1) = points[i];
                    let (x2, y2) = points[(i + 1) % n];
                    if (y1 > y) != (y2 > y) {
                        let t = (y - y1) / (y2 - y1);
                        if x < x1 + t * (x2 - x1) {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        match self {
            Shape::Disk { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            Shape::Rectangle { x0, y0, x1, y1 } => {
                (x0.min(*x1), y0.min(*y1), x0.max(*x1), y0.max(*y1))
            }
            Shape::Polygon { points } => points.iter().fold(
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
                |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
            ),
        }
    }
}

/// A material with its per-channel attenuation values (1/length).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    /// One attenuation value per energy channel, indexed like the channel
    /// list of the experiment.
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    #[serde(flatten)]
    pub shape: Shape,
    pub material: usize,
}

/// Material-region layout on a canvas; later regions overwrite earlier ones
/// (painter's order), background attenuation is 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub rows: usize,
    pub cols: usize,
    pub pixel_size: f64,
    pub materials: Vec<Material>,
    pub regions: Vec<Region>,
}

impl PhantomSpec {
    pub fn validate(&self, num_channels: usize) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.pixel_size <= 0.0 {
            return Err(Error::Config("phantom canvas must be nonempty".into()));
        }
        let half_w = self.cols as f64 * self.pixel_size / 2.0;
        let half_h = self.rows as f64 * self.pixel_size / 2.0;
        for (i, region) in self.regions.iter().enumerate() {
            let m = self.materials.get(region.material).ok_or_else(|| {
                Error::Config(format!("region {i} references unknown material {}", region.material))
            })?;
            if m.mu.len() < num_channels {
                return Err(Error::Config(format!(
                    "material '{}' has {} attenuation values but {} channels are configured",
                    m.name,
                    m.mu.len(),
                    num_channels
                )));
            }
            if m.mu.iter().any(|&v| v < 0.0) {
                return Err(Error::Config(format!("material '{}' has negative attenuation", m.name)));
            }
            let (x0, y0, x1, y1) = region.shape.bbox();
            if x0 < -half_w || y0 < -half_h || x1 > half_w || y1 > half_h {
                return Err(Error::Config(format!("region {i} extends outside the canvas")));
            }
        }
        Ok(())
    }

    /// Per-pixel attenuation map for one energy channel: the topmost region
    /// covering the pixel center wins.
    pub fn rasterize(&self, channel: usize) -> Result<ImageGrid<f64>> {
        self.validate(channel + 1)?;
        let mut img = ImageGrid::zeros(self.rows, self.cols, self.pixel_size);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let (x, y) = img.pixel_center(i, j);
                for region in self.regions.iter().rev() {
                    if region.shape.contains(x, y) {
                        let mu = self.materials[region.material].mu[channel];
                        img.set(i, j, mu);
                        break;
                    }
                }
            }
        }
        Ok(img)
    }
}

/// One energy channel: a label, nominal energy, and expected photons per ray.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyChannel {
    pub label: String,
    pub energy_kev: f64,
    pub photon_count: f64,
}

impl EnergyChannel {
    pub fn validate(&self) -> Result<()> {
        if self.photon_count <= 0.0 {
            return Err(Error::Config(format!(
                "channel {}: photon count must be positive",
                self.label
            )));
        }
        Ok(())
    }
}

/// Expected photon counts `I0 * exp(-(A u)_i)` per ray (the Poisson means).
pub fn expected_counts(
    u: &ImageGrid<f64>,
    g: &ScanGeometry<f64>,
    ch: &EnergyChannel,
) -> Result<Vec<f64>> {
    ch.validate()?;
    if u.values().iter().any(|&v| v < 0.0) {
        return Err(Error::Config("attenuation image must be nonnegative".into()));
    }
    let au = forward_project(u, g)?;
    Ok(au.values().iter().map(|&a| ch.photon_count * (-a).exp()).collect())
}

/// Sample photon counts `Z_i ~ Poisson(I0 * exp(-(A u)_i))`. Each ray draws
/// from its own counter-based RNG stream, so results are reproducible under a
/// fixed seed independent of evaluation order.
pub fn simulate_counts(
    u: &ImageGrid<f64>,
    g: &ScanGeometry<f64>,
    ch: &EnergyChannel,
    seed: u64,
) -> Result<Vec<u64>> {
    let means = expected_counts(u, g, ch)?;
    let mut out = Vec::with_capacity(means.len());
    for (i, &mean) in means.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let z = if mean <= 0.0 || mean < 1e-300 {
            0
        } else {
            let dist = Poisson::new(mean)
                .map_err(|e| Error::Numerical(format!("invalid Poisson mean {mean}: {e}")))?;
            dist.sample(&mut rng) as u64
        };
        out.push(z);
    }
    Ok(out)
}

/// Log transform `b_i = -ln(max(Z_i, clamp) / I0)`. The clamp (default one
/// photon) keeps zero-count rays finite.
pub fn counts_to_sinogram(
    counts: &[u64],
    ch: &EnergyChannel,
    g: &ScanGeometry<f64>,
) -> Result<Sinogram<f64>> {
    let means: Vec<f64> = counts.iter().map(|&z| z as f64).collect();
    log_sinogram_from_means(&means, ch, g, 1.0)
}

/// Log transform of real-valued expected counts, used for noiseless data.
/// With `clamp <= 0` no clamping is applied.
pub fn log_sinogram_from_means(
    means: &[f64],
    ch: &EnergyChannel,
    g: &ScanGeometry<f64>,
    clamp: f64,
) -> Result<Sinogram<f64>> {
    ch.validate()?;
    if means.len() != g.num_rays() {
        return Err(Error::Config("count array length does not match geometry".into()));
    }
    if means.iter().any(|&z| z < 0.0) {
        return Err(Error::Config("counts must be nonnegative".into()));
    }
    let values = means
        .iter()
        .map(|&z| {
            let z = if clamp > 0.0 { z.max(clamp) } else { z };
            -(z / ch.photon_count).ln()
        })
        .collect();
    let mut s = Sinogram::new(g.clone(), values, None)?;
    s.set_energy_label(Some(ch.label.clone()));
    Ok(s)
}

/// Simulate the full noisy log-sinogram for one channel.
pub fn simulate_sinogram(
    u: &ImageGrid<f64>,
    g: &ScanGeometry<f64>,
    ch: &EnergyChannel,
    seed: u64,
) -> Result<Sinogram<f64>> {
    let counts = simulate_counts(u, g, ch, seed)?;
    counts_to_sinogram(&counts, ch, g)
}

/// Noiseless log-sinogram: equals `A u` exactly up to float rounding when the
/// expected counts stay above one photon.
pub fn noiseless_sinogram(
    u: &ImageGrid<f64>,
    g: &ScanGeometry<f64>,
    ch: &EnergyChannel,
) -> Result<Sinogram<f64>> {
    let means = expected_counts(u, g, ch)?;
    log_sinogram_from_means(&means, ch, g, 0.0)
}
