//! Proximal operators of `sigma*alpha*TV + indicator` and
//! `sigma*alpha*dTV + indicator` via an accelerated dual projected-gradient
//! (fast gradient projection) scheme with warm starts.
//!
//! The dual variable is a vector field p with pixelwise `||p_j|| <= sigma*alpha`;
//! the primal estimate is recovered as `clip(z + div(P p))`. The dual step size
//! is `1/L` with `L = 8 / pixel_size^2`, the standard bound for the
//! forward-difference gradient operator; P is a contraction so the same bound
//! covers dTV.

use crate::diffops::{divergence, gradient, DirectionalWeight, VectorField};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::regularizers::{dtv_value, tv_value};
use crate::scalar::Real;

/// Inner-loop controls for a single prox evaluation.
#[derive(Debug, Clone)]
pub struct ProxConfig<S> {
    pub max_inner_iters: usize,
    pub inner_tol: S,
    pub warm_start_dual: Option<VectorField<S>>,
}

impl<S: Real> Default for ProxConfig<S> {
    fn default() -> Self {
        Self {
            max_inner_iters: 100,
            inner_tol: S::from_f64_(1e-5),
            warm_start_dual: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProxResult<S> {
    pub primal: ImageGrid<S>,
    /// Final dual field, suitable for warm starting the next prox call.
    pub dual: VectorField<S>,
    pub inner_iters: usize,
}

/// Projection onto the nonnegative orthant: pixelwise max(z, 0).
pub fn prox_indicator_nonneg<S: Real>(z: &ImageGrid<S>) -> ImageGrid<S> {
    z.clip_nonnegative()
}

/// The objective of the prox minimization:
/// `1/2 ||y - z||^2 + sigma_alpha * R(y)` with R = TV or dTV.
pub fn prox_objective<S: Real>(
    z: &ImageGrid<S>,
    y: &ImageGrid<S>,
    sigma_alpha: S,
    weight: Option<&DirectionalWeight<S>>,
) -> Result<S> {
    let diff = y.sub(z)?;
    let half = S::from_f64_(0.5);
    let reg = match weight {
        Some(w) => dtv_value(y, w)?,
        None => tv_value(y),
    };
    Ok(half * diff.dot(&diff) + sigma_alpha * reg)
}

fn project_ball<S: Real>(p: &mut VectorField<S>, radius: S) {
    for idx in 0..p.len() {
        let n = p.norm_at(idx);
        if n > radius {
            let scale = radius / n;
            let (a, b) = p.at(idx);
            p.set(idx, (a * scale, b * scale));
        }
    }
}

fn apply_weight_opt<S: Real>(
    weight: Option<&DirectionalWeight<S>>,
    p: &VectorField<S>,
) -> Result<VectorField<S>> {
    match weight {
        Some(w) => w.apply(p),
        None => Ok(p.clone()),
    }
}

/// Evaluate `prox_{sigma_alpha R + indicator}` at z. `weight = None` selects
/// plain TV; `nonneg` adds the nonnegativity indicator via clipping inside
/// each dual iteration.
pub fn prox_g<S: Real>(
    z: &ImageGrid<S>,
    sigma_alpha: S,
    weight: Option<&DirectionalWeight<S>>,
    nonneg: bool,
    cfg: &ProxConfig<S>,
) -> Result<ProxResult<S>> {
    if sigma_alpha <= S::zero() {
        return Err(Error::Config("sigma_alpha must be positive".into()));
    }
    if z.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("prox input is not finite".into()));
    }
    let (rows, cols) = (z.rows(), z.cols());
    let h = z.pixel_size();
    let step = h * h / S::from_f64_(8.0);

    let clip = |img: ImageGrid<S>| if nonneg { img.clip_nonnegative() } else { img };
    let primal_of = |p: &VectorField<S>| -> Result<ImageGrid<S>> {
        let wp = apply_weight_opt(weight, p)?;
        Ok(clip(z.add(&divergence(&wp, h))?))
    };

    let mut p_prev = match &cfg.warm_start_dual {
        Some(warm) if warm.rows() == rows && warm.cols() == cols => {
            let mut w = warm.clone();
            project_ball(&mut w, sigma_alpha);
            w
        }
        _ => VectorField::zeros(rows, cols),
    };
    let mut r = p_prev.clone();
    let mut t = S::one();
    let mut y_prev = primal_of(&p_prev)?;
    let mut iters = 0;

    for _ in 0..cfg.max_inner_iters {
        iters += 1;
        let y = primal_of(&r)?;
        let gy = apply_weight_opt(weight, &gradient(&y))?;
        let mut p = r.clone();
        for idx in 0..p.len() {
            let (a, b) = p.at(idx);
            let (g1, g2) = gy.at(idx);
            p.set(idx, (a + step * g1, b + step * g2));
        }
        project_ball(&mut p, sigma_alpha);

        let t_next = (S::one() + (S::one() + S::from_f64_(4.0) * t * t).sqrt()) * S::from_f64_(0.5);
        let momentum = (t - S::one()) / t_next;
        for idx in 0..r.len() {
            let (a, b) = p.at(idx);
            let (pa, pb) = p_prev.at(idx);
            r.set(idx, (a + momentum * (a - pa), b + momentum * (b - pb)));
        }
        t = t_next;
        p_prev = p;

        let y_new = primal_of(&p_prev)?;
        let change = y_new.sub(&y_prev)?.norm();
        let scale = y_new.norm().max(S::from_f64_(1e-30));
        y_prev = y_new;
        if change / scale < cfg.inner_tol {
            break;
        }
    }

    Ok(ProxResult { primal: y_prev, dual: p_prev, inner_iters: iters })
}
