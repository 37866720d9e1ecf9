//! Training losses and their gradients.

use crate::error::{check_len, invalid, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub photo: f64,
    pub pt_rgb: f64,
    pub bg: f64,
}

impl LossWeights {
    pub const COARSE: LossWeights = LossWeights {
        photo: 1.0,
        pt_rgb: 1e-1,
        bg: 1e-2,
    };
    pub const FINE: LossWeights = LossWeights {
        photo: 1.0,
        pt_rgb: 1e-2,
        bg: 1e-3,
    };

    pub fn new(photo: f64, pt_rgb: f64, bg: f64) -> Result<Self> {
        if [photo, pt_rgb, bg]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        Ok(Self { photo, pt_rgb, bg })
    }

    pub fn total(&self, photo: f64, pt_rgb: f64, bg: f64) -> f64 {
        self.photo * photo + self.pt_rgb * pt_rgb + self.bg * bg
    }
}

/// Normalizer floor of the per-point colour loss.
pub const PT_RGB_EPS: f64 = 1e-9;

/// Clamp applied to the background share before taking its entropy.
pub const ENTROPY_CLAMP: f64 = 1e-6;

#[inline]
pub fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = math::sub(a, b);
    math::dot(d, d)
}

/// Mean over rays of the squared RGB error.
pub fn photometric_loss(pred: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64> {
    check_len(pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(invalid("photometric loss needs at least one ray"));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| sq_dist(*p, *t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Weight-normalized squared error of each point's colour against the ray's
/// target: `sum_i w_i |c_i - C|^2 / max(sum_i w_i, eps)`.
pub fn per_point_rgb_loss(weights: &[f64], colors: &[[f64; 3]], target: [f64; 3]) -> Result<f64> {
    check_len(weights.len(), colors.len())?;
    let (num, den) = weights
        .iter()
        .zip(colors)
        .fold((0.0, 0.0), |(n, d), (w, c)| {
            (n + w * sq_dist(*c, target), d + w)
        });
    Ok(num / den.max(PT_RGB_EPS))
}

/// Gradients of [`per_point_rgb_loss`]; fills `d_weights` and `d_colors`.
pub fn per_point_rgb_grad(
    weights: &[f64],
    colors: &[[f64; 3]],
    target: [f64; 3],
    d_weights: &mut [f64],
    d_colors: &mut [[f64; 3]],
) {
    let (num, den) = weights
        .iter()
        .zip(colors)
        .fold((0.0, 0.0), |(n, d), (w, c)| {
            (n + w * sq_dist(*c, target), d + w)
        });
    let norm = den.max(PT_RGB_EPS);
    let clamped = den < PT_RGB_EPS;
    for i in 0..weights.len() {
        let e = sq_dist(colors[i], target);
        d_weights[i] = if clamped {
            e / norm
        } else {
            e / norm - num / (norm * norm)
        };
        let k = 2.0 * weights[i] / norm;
        d_colors[i] = [0, 1, 2].map(|c| k * (colors[i][c] - target[c]));
    }
}

/// Binary entropy of the background share, clamped away from 0 and 1.
pub fn background_entropy_loss(bg_t: f64) -> f64 {
    math::binary_entropy(bg_t.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP))
}

/// Derivative of [`background_entropy_loss`]; zero inside the clamped tails.
pub fn background_entropy_grad(bg_t: f64) -> f64 {
    if bg_t <= ENTROPY_CLAMP || bg_t >= 1.0 - ENTROPY_CLAMP {
        0.0
    } else {
        libm::log((1.0 - bg_t) / bg_t)
    }
}
