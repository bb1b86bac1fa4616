//! Outer reconstruction loops: forward-backward splitting and linearized
//! Bregman iterations, with a shared backtracking line search on the descent
//! inequality and per-iteration trace recording.

use std::time::Instant;

use crate::diffops::{DirectionalWeight, VectorField};
use crate::error::{Error, Result};
use crate::geometry::Sinogram;
use crate::grid::ImageGrid;
use crate::metrics::{psnr, ssim};
use crate::projector::{back_project, forward_project};
use crate::prox::{prox_g, ProxConfig};
use crate::regularizers::{dtv_value, tv_value};
use crate::scalar::Real;

/// The smooth data-fit term `F(u) = 1/2 ||A u - b||^2` with its operator pair
/// bound to a fixed reconstruction grid.
#[derive(Debug, Clone)]
pub struct SmoothDataFit<S> {
    data: Sinogram<S>,
    rows: usize,
    cols: usize,
    pixel_size: S,
}

impl<S: Real> SmoothDataFit<S> {
    pub fn new(data: Sinogram<S>, rows: usize, cols: usize, pixel_size: S) -> Result<Self> {
        if rows == 0 || cols == 0 || pixel_size <= S::zero() {
            return Err(Error::Config("invalid reconstruction grid".into()));
        }
        Ok(Self { data, rows, cols, pixel_size })
    }

    pub fn data(&self) -> &Sinogram<S> {
        &self.data
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixel_size(&self) -> S {
        self.pixel_size
    }

    pub fn zero_image(&self) -> ImageGrid<S> {
        ImageGrid::zeros(self.rows, self.cols, self.pixel_size)
    }

    /// F(u) = 1/2 ||A u - b||^2.
    pub fn value(&self, u: &ImageGrid<S>) -> Result<S> {
        let au = forward_project(u, self.data.geometry())?;
        let r: S = au
            .values()
            .iter()
            .zip(self.data.values())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        Ok(r * S::from_f64_(0.5))
    }

    /// grad F(u) = A^T (A u - b).
    pub fn grad(&self, u: &ImageGrid<S>) -> Result<ImageGrid<S>> {
        let mut au = forward_project(u, self.data.geometry())?;
        for (a, &b) in au.values_mut().iter_mut().zip(self.data.values()) {
            *a -= b;
        }
        back_project(&au, self.rows, self.cols, self.pixel_size)
    }
}

/// Free-function form of the data-fit gradient.
pub fn grad_f<S: Real>(fit: &SmoothDataFit<S>, u: &ImageGrid<S>) -> Result<ImageGrid<S>> {
    fit.grad(u)
}

/// The regularizer part of G: `alpha * R` with R either TV (`weight = None`)
/// or dTV. The nonnegativity indicator is always composed into the prox.
#[derive(Debug, Clone)]
pub struct Regularization<S> {
    pub alpha: S,
    pub weight: Option<DirectionalWeight<S>>,
}

impl<S: Real> Regularization<S> {
    pub fn tv(alpha: S) -> Self {
        Self { alpha, weight: None }
    }

    pub fn dtv(alpha: S, weight: DirectionalWeight<S>) -> Self {
        Self { alpha, weight: Some(weight) }
    }

    /// `alpha * R(u)`; the indicator contributes 0 on feasible iterates.
    pub fn value(&self, u: &ImageGrid<S>) -> Result<S> {
        if self.alpha == S::zero() {
            return Ok(S::zero());
        }
        let r = match &self.weight {
            Some(w) => dtv_value(u, w)?,
            None => tv_value(u),
        };
        Ok(self.alpha * r)
    }

    /// Full G including the nonnegativity indicator.
    pub fn value_with_indicator(&self, u: &ImageGrid<S>) -> Result<S> {
        if u.values().iter().any(|&v| v < S::zero()) {
            return Ok(S::infinity());
        }
        self.value(u)
    }
}

/// Backtracking parameters: shrink on rejection, cautiously regrow after
/// acceptance.
#[derive(Debug, Clone, Copy)]
pub struct BacktrackConfig<S> {
    pub sigma0: S,
    pub rho_down: S,
    pub rho_up: S,
    pub max_backtracks: usize,
}

impl<S: Real> BacktrackConfig<S> {
    pub fn new(sigma0: S) -> Result<Self> {
        if sigma0 <= S::zero() {
            return Err(Error::Config("sigma0 must be positive".into()));
        }
        Ok(Self {
            sigma0,
            rho_down: S::from_f64_(0.5),
            rho_up: S::from_f64_(1.1),
            max_backtracks: 50,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma0 <= S::zero()
            || self.rho_down <= S::zero()
            || self.rho_down >= S::one()
            || self.rho_up <= S::one()
        {
            return Err(Error::Config("require 0 < rho_down < 1 < rho_up and sigma0 > 0".into()));
        }
        Ok(())
    }
}

/// One accepted outer iteration.
#[derive(Debug, Clone)]
pub struct TraceRecord<S> {
    pub iter: usize,
    pub sigma: S,
    pub backtracks: usize,
    pub f: S,
    pub g: S,
    pub h: S,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SolverTrace<S> {
    pub records: Vec<TraceRecord<S>>,
}

impl<S: Real> SolverTrace<S> {
    pub fn new() -> Self {
        Self { records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Iteration index with the highest recorded SSIM, if any SSIM was traced.
    pub fn best_ssim(&self) -> Option<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.ssim.map(|s| (r.iter, s)))
            .fold(None, |best, (it, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((it, s)),
            })
    }
}

/// A solver failure that still carries the trace accumulated so far.
#[derive(Debug)]
pub struct SolveFailure<S> {
    pub error: Error,
    pub trace: SolverTrace<S>,
}

impl<S> SolveFailure<S> {
    fn from_error(error: Error) -> Self {
        Self { error, trace: SolverTrace { records: Vec::new() } }
    }
}

impl<S> From<SolveFailure<S>> for Error {
    fn from(f: SolveFailure<S>) -> Self {
        f.error
    }
}

pub type SolveResult<T, S> = std::result::Result<T, SolveFailure<S>>;

/// Shared solver knobs beyond the backtracking constants.
#[derive(Debug, Clone)]
pub struct SolverOptions<S> {
    pub backtrack: BacktrackConfig<S>,
    pub prox_max_iters: usize,
    pub prox_tol: S,
    /// Optional reference image; when present, SSIM/PSNR are recorded per
    /// accepted iteration.
    pub reference: Option<ImageGrid<S>>,
}

impl<S: Real> SolverOptions<S> {
    pub fn new(sigma0: S) -> Result<Self> {
        Ok(Self {
            backtrack: BacktrackConfig::new(sigma0)?,
            prox_max_iters: 100,
            prox_tol: S::from_f64_(1e-5),
            reference: None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FbsOutput<S> {
    pub image: ImageGrid<S>,
    pub trace: SolverTrace<S>,
    /// True when the H-based stopping rule fired before the iteration cap.
    pub converged: bool,
}

/// Descent inequality of the backtracking test:
/// `F(u_new) <= F(u) + <grad, u_new - u> + ||u_new - u||^2 / (2 sigma)`.
fn descent_holds<S: Real>(
    f_new: S,
    f_old: S,
    grad: &ImageGrid<S>,
    u_new: &ImageGrid<S>,
    u_old: &ImageGrid<S>,
    sigma: S,
) -> Result<bool> {
    let d = u_new.sub(u_old)?;
    let rhs = f_old + grad.dot(&d) + d.dot(&d) / (S::from_f64_(2.0) * sigma);
    // tiny relative slack against floating point rounding in the two routes
    let slack = S::from_f64_(1e-12) * (f_old.abs() + rhs.abs() + S::one());
    Ok(f_new <= rhs + slack)
}

struct ProxStep<S> {
    warm_dual: Option<VectorField<S>>,
}

impl<S: Real> ProxStep<S> {
    fn new() -> Self {
        Self { warm_dual: None }
    }

    fn apply(
        &mut self,
        z: &ImageGrid<S>,
        sigma: S,
        reg: &Regularization<S>,
        opts: &SolverOptions<S>,
    ) -> Result<ImageGrid<S>> {
        if reg.alpha == S::zero() {
            return Ok(z.clip_nonnegative());
        }
        let cfg = ProxConfig {
            max_inner_iters: opts.prox_max_iters,
            inner_tol: opts.prox_tol,
            warm_start_dual: self.warm_dual.clone(),
        };
        let out = prox_g(z, sigma * reg.alpha, reg.weight.as_ref(), true, &cfg)?;
        self.warm_dual = Some(out.dual);
        Ok(out.primal)
    }
}

fn metrics_vs_reference<S: Real>(
    u: &ImageGrid<S>,
    reference: Option<&ImageGrid<S>>,
) -> (Option<f64>, Option<f64>) {
    match reference {
        Some(r) => (ssim(u, r).ok().map(|v| v.to_f64_()), psnr(u, r).ok().map(|v| v.to_f64_())),
        None => (None, None),
    }
}

/// Forward-backward splitting (variational regularization). Stops when the
/// H decrease falls below `tol * H` or after `max_iters` accepted iterations.
pub fn fbs_solve<S: Real>(
    fit: &SmoothDataFit<S>,
    reg: &Regularization<S>,
    opts: &SolverOptions<S>,
    tol: S,
    max_iters: usize,
    u0: &ImageGrid<S>,
) -> SolveResult<FbsOutput<S>, S> {
    opts.backtrack.validate().map_err(SolveFailure::from_error)?;
    if tol < S::zero() {
        return Err(SolveFailure::from_error(Error::Config("tol must be nonnegative".into())));
    }
    let start = Instant::now();
    let mut trace = SolverTrace::new();
    let mut prox_step = ProxStep::new();
    let mut u = u0.clone();
    let mut sigma = opts.backtrack.sigma0;
    let mut h_prev = {
        let run = || -> Result<S> { Ok(fit.value(&u)? + reg.value(&u)?) };
        run().map_err(SolveFailure::from_error)?
    };
    let mut converged = false;

    for t in 1..=max_iters {
        let mut step = |trace: &SolverTrace<S>| -> Result<(ImageGrid<S>, S, S, usize)> {
            let _ = trace;
            let grad = fit.grad(&u)?;
            let f_old = fit.value(&u)?;
            let mut backtracks = 0;
            loop {
                let z = u.sub(&grad.scale(sigma))?;
                let candidate = prox_step.apply(&z, sigma, reg, opts)?;
                let f_new = fit.value(&candidate)?;
                if descent_holds(f_new, f_old, &grad, &candidate, &u, sigma)? {
                    return Ok((candidate, f_new, sigma, backtracks));
                }
                backtracks += 1;
                if backtracks > opts.backtrack.max_backtracks {
                    return Err(Error::Numerical(format!(
                        "step-size failure: descent inequality unsatisfied after {} backtracks at iteration {t}",
                        opts.backtrack.max_backtracks
                    )));
                }
                sigma = sigma * opts.backtrack.rho_down;
            }
        };
        let (u_new, f_new, sigma_used, backtracks) = match step(&trace) {
            Ok(v) => v,
            Err(error) => return Err(SolveFailure { error, trace }),
        };
        u = u_new;
        let g_val = match reg.value(&u) {
            Ok(v) => v,
            Err(error) => return Err(SolveFailure { error, trace }),
        };
        let h = f_new + g_val;
        let (ssim_v, psnr_v) = metrics_vs_reference(&u, opts.reference.as_ref());
        trace.records.push(TraceRecord {
            iter: t,
            sigma: sigma_used,
            backtracks,
            f: f_new,
            g: g_val,
            h,
            ssim: ssim_v,
            psnr: psnr_v,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        sigma = sigma * opts.backtrack.rho_up;
        let decrease = h_prev - h;
        // the explicit infinite-tol case avoids inf * 0 = NaN when H hits 0
        if tol == S::infinity() || decrease <= tol * h {
            converged = true;
            break;
        }
        h_prev = h;
    }

    Ok(FbsOutput { image: u, trace, converged })
}

#[derive(Debug, Clone)]
pub struct BregmanCheckpoint<S> {
    pub iter: usize,
    pub image: ImageGrid<S>,
    pub subgradient: ImageGrid<S>,
}

#[derive(Debug, Clone)]
pub struct BregmanOutput<S> {
    pub image: ImageGrid<S>,
    /// q from the final iteration; an element of the subdifferential of G at
    /// the final iterate.
    pub subgradient: ImageGrid<S>,
    pub checkpoints: Vec<BregmanCheckpoint<S>>,
    pub trace: SolverTrace<S>,
}

/// Linearized Bregman iterations. Runs a fixed budget of `max_iters`
/// iterations (the iteration count is the regularizer); checkpoints the
/// iterate every `checkpoint_every` iterations plus the final one. Starts at
/// `u = q = 0` so that `q` is a valid subgradient of G at `u` throughout.
pub fn bregman_solve<S: Real>(
    fit: &SmoothDataFit<S>,
    reg: &Regularization<S>,
    opts: &SolverOptions<S>,
    max_iters: usize,
    checkpoint_every: usize,
) -> SolveResult<BregmanOutput<S>, S> {
    opts.backtrack.validate().map_err(SolveFailure::from_error)?;
    if max_iters == 0 {
        return Err(SolveFailure::from_error(Error::Config("max_iters must be >= 1".into())));
    }
    let start = Instant::now();
    let mut trace = SolverTrace::new();
    let mut prox_step = ProxStep::new();
    let mut u = fit.zero_image();
    let mut q = fit.zero_image();
    let mut sigma = opts.backtrack.sigma0;
    let mut checkpoints = Vec::new();

    for t in 1..=max_iters {
        let mut step = || -> Result<(ImageGrid<S>, ImageGrid<S>, S, S, usize)> {
            let grad = fit.grad(&u)?;
            let f_old = fit.value(&u)?;
            let mut backtracks = 0;
            loop {
                let drift = q.sub(&grad)?;
                let z = u.add(&drift.scale(sigma))?;
                let candidate = prox_step.apply(&z, sigma, reg, opts)?;
                let f_new = fit.value(&candidate)?;
                if descent_holds(f_new, f_old, &grad, &candidate, &u, sigma)? {
                    // q update with the actually accepted iterate keeps the
                    // algebraic identity of the iteration regardless of inner
                    // prox accuracy
                    let inc = candidate.sub(&u)?.scale(S::one() / sigma).add(&grad)?;
                    let q_new = q.sub(&inc)?;
                    return Ok((candidate, q_new, f_new, sigma, backtracks));
                }
                backtracks += 1;
                if backtracks > opts.backtrack.max_backtracks {
                    return Err(Error::Numerical(format!(
                        "step-size failure: descent inequality unsatisfied after {} backtracks at iteration {t}",
                        opts.backtrack.max_backtracks
                    )));
                }
                sigma = sigma * opts.backtrack.rho_down;
            }
        };
        let (u_new, q_new, f_new, sigma_used, backtracks) = match step() {
            Ok(v) => v,
            Err(error) => return Err(SolveFailure { error, trace }),
        };
        u = u_new;
        q = q_new;
        let g_val = match reg.value(&u) {
            Ok(v) => v,
            Err(error) => return Err(SolveFailure { error, trace }),
        };
        let (ssim_v, psnr_v) = metrics_vs_reference(&u, opts.reference.as_ref());
        trace.records.push(TraceRecord {
            iter: t,
            sigma: sigma_used,
            backtracks,
            f: f_new,
            g: g_val,
            h: f_new + g_val,
            ssim: ssim_v,
            psnr: psnr_v,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if checkpoint_every > 0 && (t % checkpoint_every == 0 || t == max_iters) {
            checkpoints.push(BregmanCheckpoint {
                iter: t,
                image: u.clone(),
                subgradient: q.clone(),
            });
        }
        sigma = sigma * opts.backtrack.rho_up;
    }

    Ok(BregmanOutput { image: u, subgradient: q, checkpoints, trace })
}

/// Bregman distance `D(u, ut) = G(u) - G(ut) - <qt, u - ut>` for
/// `G = alpha R + indicator`, assuming `qt` is a subgradient of G at `ut`.
pub fn bregman_distance<S: Real>(
    reg: &Regularization<S>,
    u: &ImageGrid<S>,
    ut: &ImageGrid<S>,
    qt: &ImageGrid<S>,
) -> Result<S> {
    let g_u = reg.value_with_indicator(u)?;
    let g_ut = reg.value_with_indicator(ut)?;
    if g_ut.is_infinite() {
        return Err(Error::Config("ut must be feasible (nonnegative)".into()));
    }
    let d = u.sub(ut)?;
    Ok(g_u - g_ut - qt.dot(&d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScanGeometry;

    fn identity_like_fit(b: Vec<f64>) -> SmoothDataFit<f64> {
        // one unit-length ray through a 1x1 image per angle entry is not
        // possible; use a single pixel with a single horizontal ray instead
        let g = ScanGeometry::parallel(vec![0.0], 1, 1.0).unwrap();
        let s = Sinogram::new(g, b, None).unwrap();
        SmoothDataFit::new(s, 1, 1, 1.0).unwrap()
    }

    #[test]
    fn grad_vanishes_at_exact_solution() {
        let fit = identity_like_fit(vec![2.0]);
        let u = ImageGrid::new(1, 1, 1.0, vec![2.0]).unwrap();
        let g = fit.grad(&u).unwrap();
        assert!(g.values()[0].abs() < 1e-12);
    }

    #[test]
    fn grad_gram_positivity_with_zero_data() {
        let geom: ScanGeometry<f64> = ScanGeometry::parallel(ScanGeometry::uniform_angles(4), 11, 1.0).unwrap();
        let s = Sinogram::zeros(geom);
        let fit = SmoothDataFit::new(s, 8, 8, 1.0).unwrap();
        let u = ImageGrid::constant(8, 8, 1.0, 0.5);
        let g = fit.grad(&u).unwrap();
        let au = forward_project(&u, fit.data().geometry()).unwrap();
        let inner = g.dot(&u);
        assert!((inner - au.norm().powi(2)).abs() < 1e-10 * inner.max(1.0));
        assert!(inner >= 0.0);
    }

    #[test]
    fn fbs_solves_scalar_least_squares() {
        let fit = identity_like_fit(vec![3.0]);
        let reg = Regularization::tv(0.0);
        let opts = SolverOptions::new(1.0).unwrap();
        let u0 = ImageGrid::constant(1, 1, 1.0, 1.0);
        let out = fbs_solve(&fit, &reg, &opts, 1e-12, 200, &u0).unwrap();
        assert!((out.image.values()[0] - 3.0).abs() < 1e-5);
        // H nonincreasing
        for w in out.trace.records.windows(2) {
            assert!(w[1].h <= w[0].h + 1e-10);
        }
    }

    #[test]
    fn fbs_infinite_tol_stops_after_one_iteration() {
        let fit = identity_like_fit(vec![3.0]);
        let reg = Regularization::tv(0.0);
        let opts = SolverOptions::new(1.0).unwrap();
        let u0 = ImageGrid::constant(1, 1, 1.0, 1.0);
        let out = fbs_solve(&fit, &reg, &opts, f64::INFINITY, 50, &u0).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!(out.converged);
    }

    #[test]
    fn bregman_zero_data_stays_at_zero() {
        let geom = ScanGeometry::parallel(ScanGeometry::uniform_angles(3), 7, 1.0).unwrap();
        let s = Sinogram::zeros(geom);
        let fit = SmoothDataFit::new(s, 4, 4, 1.0).unwrap();
        let reg = Regularization::tv(0.1);
        let opts = SolverOptions::new(0.5).unwrap();
        let out = bregman_solve(&fit, &reg, &opts, 5, 1).unwrap();
        assert!(out.image.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn solvers_agree_with_alpha_zero_on_small_full_rank_problem() {
        // 2x2 image, enough rays for full rank
        let geom = ScanGeometry::parallel(ScanGeometry::uniform_angles(6), 5, 1.0).unwrap();
        let mut truth: ImageGrid<f64> = ImageGrid::zeros(2, 2, 1.0);
        truth.set(0, 0, 1.0);
        truth.set(0, 1, 0.5);
        truth.set(1, 0, 0.25);
        truth.set(1, 1, 0.75);
        let b = forward_project(&truth, &geom).unwrap();
        let fit = SmoothDataFit::new(b, 2, 2, 1.0).unwrap();
        let reg = Regularization::tv(0.0);
        let norm = crate::projector::estimate_operator_norm(
            fit.data().geometry(),
            2,
            2,
            1.0,
            100,
            1e-10,
        )
        .unwrap();
        let opts = SolverOptions::new(1.0 / (norm * norm)).unwrap();
        let u0 = ImageGrid::constant(2, 2, 1.0, 1.0);
        let fbs = fbs_solve(&fit, &reg, &opts, 0.0, 3000, &u0).unwrap();
        let breg = bregman_solve(&fit, &reg, &opts, 3000, 0).unwrap();
        for i in 0..4 {
            assert!((fbs.image.values()[i] - truth.values()[i]).abs() < 1e-6);
            assert!((breg.image.values()[i] - truth.values()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn bregman_distance_basics() {
        let reg = Regularization::tv(1.0);
        let u: ImageGrid<f64> = ImageGrid::new(2, 2, 1.0, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let zero = ImageGrid::zeros(2, 2, 1.0);
        // u = ut gives 0
        let d = bregman_distance(&reg, &u, &u, &zero).unwrap();
        assert!(d.abs() < 1e-12);
        // ut = 0, qt = 0: D = TV(u) >= 0
        let d = bregman_distance(&reg, &u, &zero, &zero).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn step_size_failure_carries_trace() {
        let fit = identity_like_fit(vec![3.0]);
        let reg = Regularization::tv(0.0);
        let mut opts = SolverOptions::new(1e6).unwrap();
        opts.backtrack.max_backtracks = 0;
        let u0 = ImageGrid::constant(1, 1, 1.0, 1.0);
        let err = fbs_solve(&fit, &reg, &opts, 1e-8, 10, &u0).unwrap_err();
        assert!(matches!(err.error, Error::Numerical(_)));
    }
}
