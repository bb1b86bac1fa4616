//! Shared helpers for the integration and acceptance suites: independent
//! oracles for the projector and the prox operator, plus phantom builders.

#![allow(dead_code)]

use msct::diffops::{DirectionalWeight, VectorField};
use msct::geometry::ScanGeometry;
use msct::grid::ImageGrid;
use msct::sim::{Material, PhantomSpec, Region, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(seed: u64, rows: usize, cols: usize, pixel_size: f64) -> ImageGrid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * cols).map(|_| rng.gen_range(0.0..1.0)).collect();
    ImageGrid::new(rows, cols, pixel_size, values).unwrap()
}

/// Clip an infinite line `origin + t * dir` (unit dir) against an axis-aligned
/// box; returns the intersection length. Independent of the projector's
/// traversal: straight Liang-Barsky interval arithmetic per pixel.
fn line_box_length(
    origin: (f64, f64),
    dir: (f64, f64),
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
) -> f64 {
    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    for (o, d, lo, hi) in [(origin.0, dir.0, x0, x1), (origin.1, dir.1, y0, y1)] {
        if d.abs() < 1e-300 {
            if o < lo || o > hi {
                return 0.0;
            }
        } else {
            let (mut a, mut b) = ((lo - o) / d, (hi - o) / d);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t_min = t_min.max(a);
            t_max = t_max.min(b);
        }
    }
    (t_max - t_min).max(0.0)
}

/// Dense system matrix (rays x pixels) of the X-ray transform, built by
/// clipping every ray against every pixel box individually.
pub fn dense_matrix(
    g: &ScanGeometry<f64>,
    rows: usize,
    cols: usize,
    pixel_size: f64,
) -> Vec<Vec<f64>> {
    let half_w = cols as f64 * pixel_size / 2.0;
    let half_h = rows as f64 * pixel_size / 2.0;
    let mut m = Vec::with_capacity(g.num_rays());
    for a in 0..g.num_angles() {
        for d in 0..g.num_detectors() {
            let (origin, dir) = g.ray(a, d);
            let mut row = vec![0.0; rows * cols];
            for i in 0..rows {
                // row 0 is the top of the image
                let y1 = half_h - i as f64 * pixel_size;
                let y0 = y1 - pixel_size;
                for j in 0..cols {
                    let x0 = -half_w + j as f64 * pixel_size;
                    let x1 = x0 + pixel_size;
                    row[i * cols + j] = line_box_length(origin, dir, x0, x1, y0, y1);
                }
            }
            m.push(row);
        }
    }
    m
}

pub fn dense_forward(m: &[Vec<f64>], u: &ImageGrid<f64>) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(u.values()).map(|(a, b)| a * b).sum())
        .collect()
}

// ---- independent finite-difference machinery for the prox oracle ----

fn fd_gradient(u: &ImageGrid<f64>) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols, h) = (u.rows(), u.cols(), u.pixel_size());
    let mut g1 = vec![0.0; rows * cols];
    let mut g2 = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let idx = i * cols + j;
            if i + 1 < rows {
                g1[idx] = (u.at(i + 1, j) - u.at(i, j)) / h;
            }
            if j + 1 < cols {
                g2[idx] = (u.at(i, j + 1) - u.at(i, j)) / h;
            }
        }
    }
    (g1, g2)
}

/// Transpose of `fd_gradient` (i.e. the negative divergence), assembled
/// directly from the difference stencil.
fn fd_grad_transpose(p1: &[f64], p2: &[f64], rows: usize, cols: usize, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let idx = i * cols + j;
            if i + 1 < rows {
                out[idx] -= p1[idx] / h;
                out[idx + cols] += p1[idx] / h;
            }
            if j + 1 < cols {
                out[idx] -= p2[idx] / h;
                out[idx + 1] += p2[idx] / h;
            }
        }
    }
    out
}

fn apply_p(
    weight: Option<&DirectionalWeight<f64>>,
    v1: &mut [f64],
    v2: &mut [f64],
) {
    if let Some(w) = weight {
        let xi = w.xi();
        for idx in 0..v1.len() {
            let (x1, x2) = xi.at(idx);
            let dot = x1 * v1[idx] + x2 * v2[idx];
            v1[idx] -= dot * x1;
            v2[idx] -= dot * x2;
        }
    }
}

fn oracle_objective(
    y: &ImageGrid<f64>,
    z: &ImageGrid<f64>,
    sigma_alpha: f64,
    weight: Option<&DirectionalWeight<f64>>,
) -> f64 {
    let (mut g1, mut g2) = fd_gradient(y);
    apply_p(weight, &mut g1, &mut g2);
    let reg: f64 = g1
        .iter()
        .zip(&g2)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .sum();
    let fit: f64 = y
        .values()
        .iter()
        .zip(z.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / 2.0;
    fit + sigma_alpha * reg
}

/// Projected-subgradient solver for
/// `min_{y >= 0} 1/2 ||y - z||^2 + sigma_alpha * R(y)`; returns the best
/// objective value seen over `iters` iterations. Slow but entirely
/// independent of the dual fast-gradient implementation under test.
pub fn prox_oracle_best_objective(
    z: &ImageGrid<f64>,
    sigma_alpha: f64,
    weight: Option<&DirectionalWeight<f64>>,
    iters: usize,
) -> f64 {
    let (rows, cols, h) = (z.rows(), z.cols(), z.pixel_size());
    let mut y: Vec<f64> = z.values().iter().map(|&v| v.max(0.0)).collect();
    let mut best = f64::INFINITY;
    for k in 0..iters {
        let img = ImageGrid::new(rows, cols, h, y.clone()).unwrap();
        best = best.min(oracle_objective(&img, z, sigma_alpha, weight));

        let (mut g1, mut g2) = fd_gradient(&img);
        apply_p(weight, &mut g1, &mut g2);
        // unit-norm subgradient direction per pixel (0 where the gradient
        // vanishes), mapped back through P and the divergence transpose
        for idx in 0..g1.len() {
            let n = (g1[idx] * g1[idx] + g2[idx] * g2[idx]).sqrt();
            if n > 1e-14 {
                g1[idx] /= n;
                g2[idx] /= n;
            } else {
                g1[idx] = 0.0;
                g2[idx] = 0.0;
            }
        }
        apply_p(weight, &mut g1, &mut g2);
        let gt = fd_grad_transpose(&g1, &g2, rows, cols, h);
        // strongly convex objective (modulus 1): step 2 / (k + 2)
        let step = 2.0 / (k as f64 + 2.0);
        for idx in 0..y.len() {
            let sub = (y[idx] - z.values()[idx]) + sigma_alpha * gt[idx];
            y[idx] = (y[idx] - step * sub).max(0.0);
        }
    }
    best
}

/// Random unit-capped xi field with pixelwise norm exactly `eta`.
pub fn random_xi(seed: u64, rows: usize, cols: usize, eta: f64) -> DirectionalWeight<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xi = VectorField::zeros(rows, cols);
    for idx in 0..xi.len() {
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        xi.set(idx, (eta * theta.cos(), eta * theta.sin()));
    }
    DirectionalWeight::new(xi, eta, 1e-6).unwrap()
}

/// Three-material phantom on a 64x64 canvas with shared outlines across
/// channels but channel-dependent contrasts.
pub fn test_phantom_64() -> PhantomSpec {
    PhantomSpec {
        rows: 64,
        cols: 64,
        pixel_size: 1.0,
        materials: vec![
            Material { name: "matrix".into(), mu: vec![0.010, 0.008, 0.007] },
            Material { name: "inclusion_a".into(), mu: vec![0.030, 0.012, 0.010] },
            Material { name: "inclusion_b".into(), mu: vec![0.015, 0.035, 0.020] },
        ],
        regions: vec![
            Region { shape: Shape::Disk { cx: 0.0, cy: 0.0, r: 26.0 }, material: 0 },
            Region { shape: Shape::Disk { cx: -9.0, cy: 7.0, r: 8.0 }, material: 1 },
            Region {
                shape: Shape::Rectangle { x0: 4.0, y0: -14.0, x1: 18.0, y1: -2.0 },
                material: 2,
            },
            Region { shape: Shape::Disk { cx: 10.0, cy: 12.0, r: 5.0 }, material: 1 },
        ],
    }
}
