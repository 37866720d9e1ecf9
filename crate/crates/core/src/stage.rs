//! Geometry shared by the two training stages: the coarse box around the
//! camera frustums, the known-free-space test, the tighter fine box and the
//! progressive voxel-count schedule.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::{dims_for_voxel_size, voxel_size, Bbox3, DenseGrid, VoxelBudget};
use crate::math::Vec3;
use crate::render::{alpha_from_sigma, softplus_shifted, ActivationBias, Camera};
use crate::scene::CoarseScene;

/// Axis-aligned box around the near and far image corners of every camera.
pub fn coarse_bbox(cameras: &[Camera]) -> Result<Bbox3> {
    if cameras.is_empty() {
        return Err(invalid("need at least one camera"));
    }
    Bbox3::from_points(cameras.iter().flat_map(|c| c.frustum_corners()))
}

/// Frozen coarse density used to decide which points are known to be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeSpaceMask {
    pub density: DenseGrid,
    pub bias: ActivationBias,
    pub step: f64,
    pub tau: f64,
}

impl FreeSpaceMask {
    pub fn new(density: DenseGrid, bias: ActivationBias, step: f64, tau: f64) -> Result<Self> {
        if density.channels() != 1 {
            return Err(invalid("free-space mask needs a density grid"));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(invalid("free-space threshold must lie in (0, 1)"));
        }
        if !(step > 0.0) {
            return Err(invalid("step must be positive"));
        }
        Ok(Self {
            density,
            bias,
            step,
            tau,
        })
    }

    pub fn from_coarse(scene: &CoarseScene, tau: f64) -> Result<Self> {
        Self::new(scene.density.clone(), scene.bias, scene.step, tau)
    }

    /// Post-activated coarse alpha at `x`.
    #[inline]
    pub fn alpha(&self, x: Vec3) -> f64 {
        alpha_from_sigma(
            softplus_shifted(self.density.sample_scalar(x), self.bias),
            self.step,
        )
    }

    #[inline]
    pub fn is_free(&self, x: Vec3) -> bool {
        self.alpha(x) < self.tau
    }
}

/// Box around every probe the mask does not mark free, padded by one coarse
/// voxel and kept inside the coarse box. Probes form a lattice with twice the
/// coarse resolution. Returns the coarse box and `false` when nothing is occupied.
pub fn fine_bbox(mask: &FreeSpaceMask) -> (Bbox3, bool) {
    let coarse = *mask.density.bbox();
    let dims = mask.density.dims();
    let probes = dims.map(|n| 2 * (n - 1) + 1);
    let len = coarse.lengths();
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for i in 0..probes[0] {
        for j in 0..probes[1] {
            for k in 0..probes[2] {
                let idx = [i, j, k];
                let p: Vec3 = [0, 1, 2]
                    .map(|a| coarse.min[a] + idx[a] as f64 / (probes[a] - 1) as f64 * len[a]);
                if mask.is_free(p) {
                    continue;
                }
                any = true;
                for a in 0..3 {
                    min[a] = min[a].min(p[a]);
                    max[a] = max[a].max(p[a]);
                }
            }
        }
    }
    if !any {
        return (coarse, false);
    }
    let pad = mask.density.spacing();
    for a in 0..3 {
        min[a] = (min[a] - pad[a]).max(coarse.min[a]);
        max[a] = (max[a] + pad[a]).min(coarse.max[a]);
    }
    match Bbox3::new(min, max) {
        Ok(b) => (b, true),
        Err(_) => (coarse, false),
    }
}

/// Voxel budgets before the first checkpoint and after each one:
/// `floor(M / 2^k) * 2^j` for `j = 0..=k`.
pub fn progressive_budgets(m_fine: u64, checkpoints: usize) -> Result<Vec<VoxelBudget>> {
    let base = m_fine >> checkpoints.min(63);
    (0..=checkpoints)
        .map(|j| VoxelBudget::new(base << j))
        .collect()
}

/// Grid dims and voxel size for each budget of [`progressive_budgets`] over `bbox`.
pub fn progressive_dims(
    bbox: &Bbox3,
    m_fine: u64,
    checkpoints: usize,
) -> Result<Vec<([usize; 3], f64)>> {
    Ok(progressive_budgets(m_fine, checkpoints)?
        .into_iter()
        .map(|b| {
            let s = voxel_size(bbox, b);
            (dims_for_voxel_size(bbox, s), s)
        })
        .collect())
}
