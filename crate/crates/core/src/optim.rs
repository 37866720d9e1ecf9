//! Adam with per-parameter learning-rate scales, the exponential decay
//! schedule, and per-voxel scales from training-view visibility.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, invalid, Result};
use crate::grid::DenseGrid;
use crate::render::Camera;

/// `0.1^(step / decay_steps)`: the learning-rate multiplier after `step` updates.
pub fn lr_factor(step: u64, decay_steps: u64) -> f64 {
    libm::pow(0.1, step as f64 / decay_steps.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
}

impl AdamState {
    pub fn new(len: usize, base_lr: f64) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Drops the moments and the step count, e.g. after the parameters were resampled.
    pub fn reset(&mut self, len: usize) {
        self.step = 0;
        self.m = vec![0.0; len];
        self.v = vec![0.0; len];
    }

    /// One bias-corrected Adam update with `lr = base_lr * lr_factor * scale[j]`.
    ///
    /// `per_param_scale`, when given, either matches `params` or has one entry
    /// per grid point of a channel-major grid (`params.len()` a multiple of it),
    /// in which case every channel shares the point's scale.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr_factor: f64,
        per_param_scale: Option<&[f64]>,
    ) -> Result<()> {
        check_len(self.m.len(), params.len())?;
        check_len(params.len(), grads.len())?;
        if let Some(s) = per_param_scale {
            if s.is_empty() || params.len() % s.len() != 0 {
                return Err(invalid(
                    "per-parameter scale length must divide the parameter count",
                ));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        let lr = self.base_lr * lr_factor;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= lr * mh / (libm::sqrt(vh) + eps);
        };
        match per_param_scale {
            None => {
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    update(p, g, m, v, lr);
                }
            }
            Some(scale) => {
                let n = scale.len();
                for (j, (((p, &g), m), v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                    .enumerate()
                {
                    let s = scale[j % n];
                    if s == 0.0 {
                        // Frozen entries keep their moments too.
                        continue;
                    }
                    update(p, g, m, v, lr * s);
                }
            }
        }
        Ok(())
    }
}

/// Number of cameras whose frustum contains each grid point: the point must
/// project inside the image, in front of the camera, at a distance within
/// `[near, far]`. Occlusion is ignored.
pub fn view_counts(grid: &DenseGrid, cameras: &[Camera]) -> Vec<u32> {
    let [nx, ny, nz] = grid.dims();
    let mut counts = vec![0u32; grid.num_points()];
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let p = grid.point_position(i, j, k);
                let n = cameras.iter().filter(|c| sees(c, p)).count();
                counts[grid.point_index(i, j, k)] = n as u32;
            }
        }
    }
    counts
}

fn sees(cam: &Camera, p: [f64; 3]) -> bool {
    match cam.project(p) {
        Some((u, v, dist)) => {
            u >= 0.0
                && u <= cam.width as f64
                && v >= 0.0
                && v <= cam.height as f64
                && dist >= cam.near
                && dist <= cam.far
        }
        None => false,
    }
}

/// Per-point learning-rate scales `n_j / n_max`. When no camera sees any
/// point the scales are all 1 and the flag is `false`.
pub fn view_count_scale(grid: &DenseGrid, cameras: &[Camera]) -> Result<(Vec<f64>, bool)> {
    if cameras.is_empty() {
        return Err(invalid("view-count scaling needs at least one camera"));
    }
    let counts = view_counts(grid, cameras);
    let n_max = counts.iter().copied().max().unwrap_or(0);
    if n_max == 0 {
        return Ok((vec![1.0; counts.len()], false));
    }
    Ok((
        counts.iter().map(|&n| n as f64 / n_max as f64).collect(),
        true,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_schedule() {
        assert_eq!(lr_factor(0, 20_000), 1.0);
        assert!((lr_factor(20_000, 20_000) - 0.1).abs() < 1e-15);
        assert!(lr_factor(10_000, 20_000) > lr_factor(10_001, 20_000));
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(3, 0.1);
        let mut p = [1.0, -2.0, 3.0];
        s.step(&mut p, &[0.0; 3], 1.0, None).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert!(s.m.iter().chain(&s.v).all(|&v| v == 0.0));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::new(1, 0.1);
        let mut p = [0.5];
        s.step(&mut p, &[1.0], 1.0, None).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn zero_scale_freezes_and_shapes_checked() {
        let mut s = AdamState::new(4, 0.1);
        let mut p = [1.0, 2.0, 3.0, 4.0];
        s.step(&mut p, &[1.0; 4], 1.0, Some(&[0.0, 1.0])).unwrap();
        assert_eq!(p[0], 1.0);
        assert_eq!(p[2], 3.0);
        assert!(p[1] < 2.0 && p[3] < 4.0);
        assert!(s.step(&mut p, &[1.0; 3], 1.0, None).is_err());
        assert!(s.step(&mut p, &[1.0; 4], 1.0, Some(&[1.0; 3])).is_err());
    }
}
