//! TV and dTV functional evaluation and construction of the edge field xi
//! from a side-information image.

use crate::diffops::{gradient, DirectionalWeight, VectorField};
use crate::error::Result;
use crate::grid::ImageGrid;
use crate::scalar::Real;

/// How the singularity parameter epsilon of the xi normalization is read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaRule<S> {
    /// epsilon is used as given.
    Absolute,
    /// epsilon is `scale * max_j ||grad v_j||`; gradients well above that
    /// scale receive ||xi|| close to the cap, gradients below close to 0.
    RelativeToMaxGradient { scale: S },
}

/// Parameters for building the edge field xi from a side-information image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFieldParams<S> {
    /// Contrast cap: every ||xi_j|| stays strictly below this value, which
    /// itself must be < 1.
    pub eta_cap: S,
    /// Absolute epsilon, or the relative scale under `RelativeToMaxGradient`.
    pub epsilon: S,
    pub rule: EtaRule<S>,
}

impl<S: Real> EdgeFieldParams<S> {
    /// The convention used throughout the experiments: epsilon at 1% of the
    /// maximum side-information gradient magnitude, cap just below 1.
    pub fn experiment_default() -> Self {
        Self {
            eta_cap: S::from_f64_(0.9999),
            epsilon: S::from_f64_(0.01),
            rule: EtaRule::RelativeToMaxGradient { scale: S::from_f64_(0.01) },
        }
    }
}

/// Total variation: sum over pixels of the Euclidean gradient norm.
pub fn tv_value<S: Real>(u: &ImageGrid<S>) -> S {
    let g = gradient(u);
    (0..g.len()).map(|i| g.norm_at(i)).sum()
}

/// Directional total variation: sum over pixels of ||P_j grad u_j||.
/// Equals `tv_value` when xi vanishes.
pub fn dtv_value<S: Real>(u: &ImageGrid<S>, weight: &DirectionalWeight<S>) -> Result<S> {
    let g = gradient(u);
    let wg = weight.apply(&g)?;
    Ok((0..wg.len()).map(|i| wg.norm_at(i)).sum())
}

/// Build xi from the side information v:
/// `xi_j = eta_cap * grad v_j / sqrt(||grad v_j||^2 + eps^2)`.
///
/// If v is exactly constant the epsilon floor forces eps = 1, so xi = 0 and
/// dTV degrades gracefully to TV.
pub fn build_xi<S: Real>(v: &ImageGrid<S>, params: &EdgeFieldParams<S>) -> Result<DirectionalWeight<S>> {
    let g = gradient(v);
    let eps = match params.rule {
        EtaRule::Absolute => params.epsilon,
        EtaRule::RelativeToMaxGradient { scale } => {
            let max_grad = g.max_norm();
            if max_grad > S::zero() {
                scale * max_grad
            } else {
                S::one()
            }
        }
    };
    let eps = if eps > S::zero() { eps } else { S::one() };
    let mut xi = VectorField::zeros(v.rows(), v.cols());
    for idx in 0..g.len() {
        let (g1, g2) = g.at(idx);
        let denom = (g1 * g1 + g2 * g2 + eps * eps).sqrt();
        xi.set(idx, (params.eta_cap * g1 / denom, params.eta_cap * g2 / denom));
    }
    DirectionalWeight::new(xi, params.eta_cap, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, rows: usize, cols: usize) -> ImageGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ImageGrid::new(rows, cols, 1.0, values).unwrap()
    }

    #[test]
    fn tv_of_constant_is_zero() {
        assert_eq!(tv_value(&ImageGrid::constant(5, 5, 1.0, 2.0)), 0.0);
    }

    #[test]
    fn tv_of_two_by_two_step() {
        // [[0,1],[0,1]]: column difference contributes 1 per row, the rest
        // of the forward-difference stencil is zero
        let u: ImageGrid<f64> = ImageGrid::new(2, 2, 1.0, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((tv_value(&u) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn tv_is_one_homogeneous() {
        let u = random_image(21, 6, 6);
        for alpha in [-2.5, 0.3, 4.0] {
            let lhs = tv_value(&u.scale(alpha));
            let rhs = alpha.abs() * tv_value(&u);
            assert!((lhs - rhs).abs() < 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn xi_of_constant_image_is_zero_and_dtv_equals_tv() {
        let v = ImageGrid::constant(6, 6, 1.0, 1.5);
        let w = build_xi(&v, &EdgeFieldParams::experiment_default()).unwrap();
        assert_eq!(w.xi().max_norm(), 0.0);
        let u = random_image(22, 6, 6);
        let dtv = dtv_value(&u, &w).unwrap();
        let tv = tv_value(&u);
        assert!((dtv - tv).abs() < 1e-12 * tv.max(1.0));
    }

    #[test]
    fn xi_on_a_sharp_edge_saturates_and_points_across_it() {
        // two-level step image: left half 0, right half 10
        let mut v: ImageGrid<f64> = ImageGrid::zeros(8, 8, 1.0);
        for i in 0..8 {
            for j in 4..8 {
                v.set(i, j, 10.0);
            }
        }
        let params = EdgeFieldParams {
            eta_cap: 0.95,
            epsilon: 1e-6,
            rule: EtaRule::Absolute,
        };
        let w = build_xi(&v, &params).unwrap();
        // on the edge column (j = 3) the gradient is (0, 10): xi saturates
        for i in 0..8 {
            let idx = i * 8 + 3;
            let (x1, x2) = w.xi().at(idx);
            assert!(x1.abs() < 1e-9);
            assert!((x2 - 0.95).abs() < 1e-8, "norm {x2}");
        }
    }

    #[test]
    fn xi_norm_stays_below_one_on_random_images() {
        let v = random_image(23, 10, 10);
        let w = build_xi(&v, &EdgeFieldParams::experiment_default()).unwrap();
        assert!(w.xi().max_norm() < 1.0);
    }

    #[test]
    fn dtv_bounded_by_tv_and_contraction_floor() {
        let v = random_image(24, 8, 8);
        let params = EdgeFieldParams {
            eta_cap: 0.8,
            epsilon: 0.05,
            rule: EtaRule::Absolute,
        };
        let w = build_xi(&v, &params).unwrap();
        let u = random_image(25, 8, 8);
        let dtv = dtv_value(&u, &w).unwrap();
        let tv = tv_value(&u);
        assert!(dtv >= 0.0);
        assert!(dtv <= tv + 1e-12);
        assert!(dtv >= (1.0 - 0.8f64 * 0.8) * tv - 1e-12);
    }

    #[test]
    fn dtv_is_one_homogeneous() {
        let v = random_image(26, 6, 6);
        let w = build_xi(&v, &EdgeFieldParams::experiment_default()).unwrap();
        let u = random_image(27, 6, 6);
        let base = dtv_value(&u, &w).unwrap();
        for alpha in [-1.5, 0.2] {
            let lhs = dtv_value(&u.scale(alpha), &w).unwrap();
            assert!((lhs - alpha.abs() * base).abs() < 1e-12 * base.max(1.0));
        }
    }

    #[test]
    fn shared_edge_is_attenuated_by_one_minus_eta_squared() {
        // u = v with a sharp edge; along that edge the pointwise dTV norm is
        // (1 - eta^2) ||grad u||
        let mut v: ImageGrid<f64> = ImageGrid::zeros(6, 6, 1.0);
        for i in 0..6 {
            for j in 3..6 {
                v.set(i, j, 5.0);
            }
        }
        let eta = 0.99;
        let params = EdgeFieldParams { eta_cap: eta, epsilon: 1e-8, rule: EtaRule::Absolute };
        let w = build_xi(&v, &params).unwrap();
        let g = gradient(&v);
        let wg = w.apply(&g).unwrap();
        for i in 0..6 {
            let idx = i * 6 + 2;
            let expect = (1.0 - eta * eta) * g.norm_at(idx);
            assert!((wg.norm_at(idx) - expect).abs() < 1e-6 * g.norm_at(idx));
            assert!(wg.norm_at(idx) < g.norm_at(idx));
        }
    }

    #[test]
    fn both_functionals_are_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let v = random_image(31, 6, 6);
        let weight = build_xi(&v, &EdgeFieldParams::experiment_default()).unwrap();
        for _ in 0..20 {
            let u = random_image(rng.gen(), 6, 6);
            let w = random_image(rng.gen(), 6, 6);
            let lam: f64 = rng.gen_range(0.0..1.0);
            let mix = u.scale(lam).add(&w.scale(1.0 - lam)).unwrap();
            let tv_mix = tv_value(&mix);
            let tv_bound = lam * tv_value(&u) + (1.0 - lam) * tv_value(&w);
            assert!(tv_mix <= tv_bound + 1e-12 * tv_bound.max(1.0));
            let dtv_mix = dtv_value(&mix, &weight).unwrap();
            let dtv_bound =
                lam * dtv_value(&u, &weight).unwrap() + (1.0 - lam) * dtv_value(&w, &weight).unwrap();
            assert!(dtv_mix <= dtv_bound + 1e-12 * dtv_bound.max(1.0));
        }
    }
}
