//! Sinogram fusion, side-information reconstruction, and image quality
//! metrics (SSIM, PSNR).

use crate::error::{Error, Result};
use crate::geometry::Sinogram;
use crate::grid::ImageGrid;
use crate::optimizers::{fbs_solve, Regularization, SolverOptions};
use crate::projector::estimate_operator_norm;
use crate::scalar::Real;

/// Elementwise sum of per-energy sinograms sharing one geometry.
pub fn fuse_sinograms<S: Real>(sinograms: &[Sinogram<S>]) -> Result<Sinogram<S>> {
    let first = sinograms
        .first()
        .ok_or_else(|| Error::Config("fuse requires at least one sinogram".into()))?;
    let mut values = first.values().to_vec();
    for s in &sinograms[1..] {
        if s.geometry() != first.geometry() {
            return Err(Error::Config("fused sinograms must share one geometry".into()));
        }
        for (acc, &v) in values.iter_mut().zip(s.values()) {
            *acc += v;
        }
    }
    Sinogram::new(first.geometry().clone(), values, None)
}

/// Settings for the TV reconstruction of the fused data.
#[derive(Debug, Clone, Copy)]
pub struct SideInfoSettings<S> {
    pub alpha: S,
    pub tol: S,
    pub max_iters: usize,
    pub prox_max_iters: usize,
    pub prox_tol: S,
}

impl<S: Real> SideInfoSettings<S> {
    pub fn new(alpha: S) -> Self {
        Self {
            alpha,
            tol: S::from_f64_(1e-6),
            max_iters: 500,
            prox_max_iters: 100,
            prox_tol: S::from_f64_(1e-5),
        }
    }
}

/// Reconstruct the polyenergetic side-information image v from the fused
/// sinogram by TV-regularized nonnegative least squares (FBS, u^0 = 1,
/// sigma^0 = 1/||A||^2).
pub fn build_side_information<S: Real>(
    b_tilde: &Sinogram<S>,
    rows: usize,
    cols: usize,
    pixel_size: S,
    settings: &SideInfoSettings<S>,
) -> Result<ImageGrid<S>> {
    if settings.alpha <= S::zero() {
        return Err(Error::Config("side-information alpha must be positive".into()));
    }
    let norm = estimate_operator_norm(b_tilde.geometry(), rows, cols, pixel_size, 100, S::from_f64_(1e-6))?;
    if norm <= S::zero() {
        return Err(Error::Numerical("operator norm estimate is zero".into()));
    }
    let mut opts = SolverOptions::new(S::one() / (norm * norm))?;
    opts.prox_max_iters = settings.prox_max_iters;
    opts.prox_tol = settings.prox_tol;
    let fit = crate::optimizers::SmoothDataFit::new(b_tilde.clone(), rows, cols, pixel_size)?;
    let reg = Regularization::tv(settings.alpha);
    let u0 = ImageGrid::constant(rows, cols, pixel_size, S::one());
    let out = fbs_solve(&fit, &reg, &opts, settings.tol, settings.max_iters, &u0)
        .map_err(|f| f.error)?;
    Ok(out.image)
}

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_kernel<S: Real>(size: usize, sigma: f64) -> Vec<S> {
    let half = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k.into_iter().map(S::from_f64_).collect()
}

/// Separable valid-mode filtering along rows then columns.
fn filter_valid<S: Real>(
    data: &[S],
    rows: usize,
    cols: usize,
    kernel: &[S],
) -> (Vec<S>, usize, usize) {
    let k = kernel.len();
    let out_cols = cols - k + 1;
    let mut tmp = vec![S::zero(); rows * out_cols];
    for i in 0..rows {
        for j in 0..out_cols {
            let mut acc = S::zero();
            for (t, &w) in kernel.iter().enumerate() {
                acc += w * data[i * cols + j + t];
            }
            tmp[i * out_cols + j] = acc;
        }
    }
    let out_rows = rows - k + 1;
    let mut out = vec![S::zero(); out_rows * out_cols];
    for i in 0..out_rows {
        for j in 0..out_cols {
            let mut acc = S::zero();
            for (t, &w) in kernel.iter().enumerate() {
                acc += w * tmp[(i + t) * out_cols + j];
            }
            out[i * out_cols + j] = acc;
        }
    }
    (out, out_rows, out_cols)
}

fn dynamic_range<S: Real>(reference: &ImageGrid<S>) -> Result<S> {
    let range = reference.max_value() - reference.min_value();
    if range <= S::zero() {
        return Err(Error::Numerical(
            "reference image is constant: dynamic range undefined".into(),
        ));
    }
    Ok(range)
}

/// Mean local SSIM with a Gaussian window (11x11, sigma 1.5, shrunk for tiny
/// images), K1 = 0.01, K2 = 0.03, dynamic range taken from the reference.
pub fn ssim<S: Real>(x: &ImageGrid<S>, reference: &ImageGrid<S>) -> Result<S> {
    ssim_with_range(x, reference, dynamic_range(reference)?)
}

/// SSIM with an explicit dynamic range override (shared-range evaluations).
pub fn ssim_with_range<S: Real>(x: &ImageGrid<S>, reference: &ImageGrid<S>, range: S) -> Result<S> {
    if !x.same_shape(reference) {
        return Err(Error::Config("SSIM requires images of identical shape".into()));
    }
    if range <= S::zero() {
        return Err(Error::Numerical("SSIM dynamic range must be positive".into()));
    }
    let min_dim = x.rows().min(x.cols());
    let mut win = SSIM_WINDOW.min(min_dim);
    if win % 2 == 0 {
        win -= 1;
    }
    if win < 3 {
        return Err(Error::Config("image too small for SSIM".into()));
    }
    let kernel = gaussian_kernel::<S>(win, SSIM_SIGMA);
    let (rows, cols) = (x.rows(), x.cols());
    let xv = x.values();
    let yv = reference.values();
    let sq = |a: &[S]| -> Vec<S> { a.iter().map(|&v| v * v).collect() };
    let prod: Vec<S> = xv.iter().zip(yv).map(|(&a, &b)| a * b).collect();

    let (mu_x, orows, ocols) = filter_valid(xv, rows, cols, &kernel);
    let (mu_y, _, _) = filter_valid(yv, rows, cols, &kernel);
    let (m_xx, _, _) = filter_valid(&sq(xv), rows, cols, &kernel);
    let (m_yy, _, _) = filter_valid(&sq(yv), rows, cols, &kernel);
    let (m_xy, _, _) = filter_valid(&prod, rows, cols, &kernel);

    let c1 = S::from_f64_(SSIM_K1) * range;
    let c1 = c1 * c1;
    let c2 = S::from_f64_(SSIM_K2) * range;
    let c2 = c2 * c2;
    let two = S::from_f64_(2.0);

    let mut total = S::zero();
    let n = orows * ocols;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = m_xx[i] - mx * mx;
        let var_y = m_yy[i] - my * my;
        let cov = m_xy[i] - mx * my;
        let num = (two * mx * my + c1) * (two * cov + c2);
        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        total += num / den;
    }
    Ok(total / S::from_f64_(n as f64))
}

/// `10 log10(range^2 / MSE)` in dB with the dynamic range of the reference;
/// identical images give positive infinity.
pub fn psnr<S: Real>(x: &ImageGrid<S>, reference: &ImageGrid<S>) -> Result<S> {
    if !x.same_shape(reference) {
        return Err(Error::Config("PSNR requires images of identical shape".into()));
    }
    let range = dynamic_range(reference)?;
    let n = S::from_f64_(x.len() as f64);
    let mse: S = x
        .values()
        .iter()
        .zip(reference.values())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<S>()
        / n;
    if mse == S::zero() {
        return Ok(S::infinity());
    }
    Ok(S::from_f64_(10.0) * (range * range / mse).log10())
}
