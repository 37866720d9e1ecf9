//! Fitting a binary image with a 2D grid under each activation ordering.
//!
//! Grid points sit every `stride` pixels starting at pixel 0, so a grid of
//! `ceil((W - 1) / stride) + 1` columns covers the image. A pixel's value is
//! the bilinearly interpolated opacity under the chosen ordering, with unit
//! segment length and zero bias.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, invalid, Result};
use crate::math;
use crate::metrics::psnr_from_mse;
use crate::optim::AdamState;
use crate::render::ActivationMode;

/// Adam step size used by [`toy_image_fit`].
pub const TOY_LR: f64 = 2.0;

/// Generated binary targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToyTarget {
    Zeros,
    /// Pixels on the positive side of a line through the image center whose
    /// normal makes `angle` radians with the x axis.
    HalfPlane {
        angle: f64,
    },
    /// Centered disk with radius as a fraction of the shorter side.
    Disk {
        radius: f64,
    },
    /// Squares of `cell` pixels.
    Checker {
        cell: usize,
    },
}

impl ToyTarget {
    pub fn render(&self, width: usize, height: usize) -> Vec<f64> {
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let mut out = vec![0.0; width * height];
        for y in 0..height {
            for x in 0..width {
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let on = match *self {
                    ToyTarget::Zeros => false,
                    ToyTarget::HalfPlane { angle } => {
                        px * libm::cos(angle) + py * libm::sin(angle) > 0.0
                    }
                    ToyTarget::Disk { radius } => {
                        let r = radius * width.min(height) as f64;
                        px * px + py * py < r * r
                    }
                    ToyTarget::Checker { cell } => ((x / cell.max(1)) + (y / cell.max(1))) % 2 == 1,
                };
                out[y * width + x] = if on { 1.0 } else { 0.0 };
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyFit {
    pub width: usize,
    pub height: usize,
    /// Fitted opacities, row-major.
    pub image: Vec<f64>,
    pub grid_dims: [usize; 2],
    pub grid: Vec<f64>,
    pub mse: f64,
    pub psnr: f64,
}

/// Number of grid points covering `pixels` pixels at the given stride.
pub fn toy_grid_len(pixels: usize, stride: f64) -> usize {
    (libm::ceil((pixels as f64 - 1.0) / stride) as usize + 1).max(2)
}

struct Stencil2 {
    index: [usize; 4],
    weight: [f64; 4],
}

fn stencil(x: usize, y: usize, stride: f64, gw: usize, gh: usize) -> Stencil2 {
    let gx = (x as f64 / stride).min((gw - 1) as f64);
    let gy = (y as f64 / stride).min((gh - 1) as f64);
    let i0 = (libm::floor(gx) as usize).min(gw - 2);
    let j0 = (libm::floor(gy) as usize).min(gh - 2);
    let (fx, fy) = (gx - i0 as f64, gy - j0 as f64);
    Stencil2 {
        index: [
            j0 * gw + i0,
            j0 * gw + i0 + 1,
            (j0 + 1) * gw + i0,
            (j0 + 1) * gw + i0 + 1,
        ],
        weight: [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    }
}

/// Opacity of one pixel and its gradient on the four corner values.
fn pixel_alpha(grid: &[f64], st: &Stencil2, mode: ActivationMode) -> (f64, [f64; 4]) {
    let v = st.index.map(|i| grid[i]);
    let mut d = [0.0; 4];
    match mode {
        ActivationMode::Post => {
            let raw: f64 = (0..4).map(|c| st.weight[c] * v[c]).sum();
            let sigma = math::softplus(raw);
            let keep = libm::exp(-sigma);
            let g = keep * math::sigmoid(raw);
            for c in 0..4 {
                d[c] = st.weight[c] * g;
            }
            (-libm::expm1(-sigma), d)
        }
        ActivationMode::In => {
            let sigma: f64 = (0..4).map(|c| st.weight[c] * math::softplus(v[c])).sum();
            let keep = libm::exp(-sigma);
            for c in 0..4 {
                d[c] = keep * st.weight[c] * math::sigmoid(v[c]);
            }
            (-libm::expm1(-sigma), d)
        }
        ActivationMode::Pre => {
            let mut a = 0.0;
            for c in 0..4 {
                let sp = math::softplus(v[c]);
                a += st.weight[c] * -libm::expm1(-sp);
                d[c] = st.weight[c] * libm::exp(-sp) * math::sigmoid(v[c]);
            }
            (a, d)
        }
    }
}

/// Full-batch Adam fit of `target` (values in `{0, 1}`, row-major) for `iters` steps.
pub fn toy_image_fit(
    target: &[f64],
    width: usize,
    height: usize,
    stride: f64,
    mode: ActivationMode,
    iters: usize,
    seed: u64,
) -> Result<ToyFit> {
    check_len(width * height, target.len())?;
    if width < 2 || height < 2 {
        return Err(invalid("toy image must be at least 2x2"));
    }
    if target.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(invalid("toy target must be binary"));
    }
    if !(stride >= 1.0) || stride > width.max(height) as f64 {
        return Err(invalid("stride must lie in [1, image size]"));
    }
    let gw = toy_grid_len(width, stride);
    let gh = toy_grid_len(height, stride);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let stencils: Vec<Stencil2> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| stencil(x, y, stride, gw, gh))
        .collect();
    let n = (width * height) as f64;
    let mut adam = AdamState::new(grid.len(), TOY_LR);
    let mut grad = vec![0.0; grid.len()];
    for _ in 0..iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (st, &t) in stencils.iter().zip(target) {
            let (a, d) = pixel_alpha(&grid, st, mode);
            let up = 2.0 * (a - t) / n;
            for c in 0..4 {
                grad[st.index[c]] += up * d[c];
            }
        }
        adam.step(&mut grid, &grad, 1.0, None)?;
    }
    let image: Vec<f64> = stencils
        .iter()
        .map(|st| pixel_alpha(&grid, st, mode).0)
        .collect();
    let mse = image
        .iter()
        .zip(target)
        .map(|(a, t)| (a - t) * (a - t))
        .sum::<f64>()
        / n;
    Ok(ToyFit {
        width,
        height,
        image,
        grid_dims: [gw, gh],
        grid,
        mse,
        psnr: psnr_from_mse(mse),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_len() {
        assert_eq!(toy_grid_len(64, 1.0), 64);
        assert_eq!(toy_grid_len(64, 8.0), 9);
        assert_eq!(toy_grid_len(64, 63.0), 2);
        assert_eq!(toy_grid_len(64, 2.5), 27);
    }

    #[test]
    fn targets_are_binary() {
        let t = ToyTarget::HalfPlane { angle: 0.0 }.render(8, 4);
        assert_eq!(&t[..8], &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let d = ToyTarget::Disk { radius: 0.25 }.render(8, 8);
        assert_eq!(d.iter().sum::<f64>(), 12.0);
    }

    #[test]
    fn pixel_gradients_match_differences() {
        let grid = [0.3, -1.2, 2.0, 0.7];
        let st = Stencil2 {
            index: [0, 1, 2, 3],
            weight: [0.12, 0.28, 0.18, 0.42],
        };
        for mode in ActivationMode::ALL {
            let (_, d) = pixel_alpha(&grid, &st, mode);
            for c in 0..4 {
                let h = 1e-6;
                let mut p = grid;
                p[c] += h;
                let mut m = grid;
                m[c] -= h;
                let fd = (pixel_alpha(&p, &st, mode).0 - pixel_alpha(&m, &st, mode).0) / (2.0 * h);
                assert!((fd - d[c]).abs() < 1e-8 * (1.0 + fd.abs()), "{mode:?} {c}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = vec![0.0; 16];
        assert!(toy_image_fit(&t, 4, 4, 5.0, ActivationMode::Post, 1, 0).is_err());
        assert!(toy_image_fit(&t, 4, 4, 0.5, ActivationMode::Post, 1, 0).is_err());
        assert!(toy_image_fit(&[0.5; 16], 4, 4, 2.0, ActivationMode::Post, 1, 0).is_err());
    }
}
