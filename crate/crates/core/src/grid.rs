//! Dense voxel grids aligned to an axis-aligned world box.
//!
//! Grid points sit on cell corners and span the box inclusively: point
//! `(i, j, k)` lives at `min + (i / (Nx - 1)) * Lx` (and likewise per axis).
//! Values are stored channel-major, then x, y, z, so channel `c` of point
//! `(i, j, k)` is at `((c * Nx + i) * Ny + j) * Nz + k`. Queries outside the box
//! are clamped to its surface.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, invalid, Result};
use crate::math::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bbox3 {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bbox3 {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !math::is_finite3(min) || !math::is_finite3(max) {
            return Err(invalid("bounding box coordinates must be finite"));
        }
        if (0..3).any(|k| max[k] <= min[k]) {
            return Err(invalid(
                "degenerate bounding box: every side length must be positive",
            ));
        }
        Ok(Self { min, max })
    }

    /// Smallest box containing every point. Fails on an empty or flat set.
    pub fn from_points<I: IntoIterator<Item = Vec3>>(points: I) -> Result<Self> {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Self::new(min, max)
    }

    pub fn lengths(&self) -> Vec3 {
        math::sub(self.max, self.min)
    }

    pub fn volume(&self) -> f64 {
        let l = self.lengths();
        l[0] * l[1] * l[2]
    }

    pub fn center(&self) -> Vec3 {
        math::scale(math::add(self.min, self.max), 0.5)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn contains_box(&self, other: &Bbox3) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }

    /// Nearest point of the (closed) box.
    pub fn clamp(&self, p: Vec3) -> Vec3 {
        [
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
            p[2].clamp(self.min[2], self.max[2]),
        ]
    }

    /// Grows the box by `pad` on every side.
    pub fn padded(&self, pad: f64) -> Bbox3 {
        Bbox3 {
            min: math::add(self.min, [-pad; 3]),
            max: math::add(self.max, [pad; 3]),
        }
    }

    /// Intersection with another box, `None` when they are disjoint or touch in a face.
    pub fn intersection(&self, other: &Bbox3) -> Option<Bbox3> {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for k in 0..3 {
            min[k] = self.min[k].max(other.min[k]);
            max[k] = self.max[k].min(other.max[k]);
        }
        Bbox3::new(min, max).ok()
    }

    /// Slab test. Returns the parametric entry and exit distances `(t0, t1)` of
    /// the infinite line `origin + t * dir`, with `t0 <= t1`. Grazing rays count
    /// as intersecting.
    pub fn intersect_ray(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if dir[k] == 0.0 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let mut a = (self.min[k] - origin[k]) * inv;
            let mut b = (self.max[k] - origin[k]) * inv;
            if a > b {
                core::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        if t0 <= t1 {
            Some((t0, t1))
        } else {
            None
        }
    }
}

/// Expected total number of grid points for a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VoxelBudget(u64);

impl VoxelBudget {
    pub fn new(count: u64) -> Result<Self> {
        if count < 8 {
            return Err(invalid("voxel budget must be at least 8"));
        }
        Ok(Self(count))
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

/// Edge length of a cubic voxel such that the box holds `budget` of them.
pub fn voxel_size(bbox: &Bbox3, budget: VoxelBudget) -> f64 {
    libm::cbrt(bbox.volume() / budget.0 as f64)
}

/// Per-axis point counts for a voxel size, `floor(L / s)` clamped up to 2.
pub fn dims_for_voxel_size(bbox: &Bbox3, size: f64) -> [usize; 3] {
    let l = bbox.lengths();
    // The tiny slack keeps exact multiples such as 1 / cbrt(1e-6) from
    // flooring one below.
    l.map(|len| (libm::floor(len / size + 1e-9) as usize).max(2))
}

/// The 8 corners and trilinear weights around a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    /// Spatial point index `(i * Ny + j) * Nz + k` of each corner.
    pub index: [usize; 8],
    pub weight: [f64; 8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    channels: usize,
    dims: [usize; 3],
    bbox: Bbox3,
    values: Vec<f64>,
    lr_scale: Option<Vec<f64>>,
}

impl DenseGrid {
    pub fn zeros(channels: usize, dims: [usize; 3], bbox: Bbox3) -> Result<Self> {
        Self::validate_shape(channels, dims)?;
        let n = channels * dims[0] * dims[1] * dims[2];
        Ok(Self {
            channels,
            dims,
            bbox,
            values: vec![0.0; n],
            lr_scale: None,
        })
    }

    pub fn from_values(
        channels: usize,
        dims: [usize; 3],
        bbox: Bbox3,
        values: Vec<f64>,
    ) -> Result<Self> {
        Self::validate_shape(channels, dims)?;
        check_len(channels * dims[0] * dims[1] * dims[2], values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid values must be finite"));
        }
        Ok(Self {
            channels,
            dims,
            bbox,
            values,
            lr_scale: None,
        })
    }

    fn validate_shape(channels: usize, dims: [usize; 3]) -> Result<()> {
        if channels == 0 {
            return Err(invalid("grid needs at least one channel"));
        }
        if dims.iter().any(|&n| n < 2) {
            return Err(invalid("every grid axis needs at least two points"));
        }
        Ok(())
    }

    /// Allocates a zeroed grid whose voxel size is `cbrt(Lx * Ly * Lz / M)`.
    pub fn allocate(bbox: Bbox3, budget: VoxelBudget, channels: usize) -> Result<Self> {
        // Re-validate: the fields are public, so a hand-built box may be degenerate.
        let bbox = Bbox3::new(bbox.min, bbox.max)?;
        let size = voxel_size(&bbox, budget);
        Self::zeros(channels, dims_for_voxel_size(&bbox, size), bbox)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bbox(&self) -> &Bbox3 {
        &self.bbox
    }

    pub fn num_points(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn lr_scale(&self) -> Option<&[f64]> {
        self.lr_scale.as_deref()
    }

    pub fn set_lr_scale(&mut self, scale: Option<Vec<f64>>) -> Result<()> {
        if let Some(s) = &scale {
            check_len(self.num_points(), s.len())?;
            if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(invalid("learning-rate scales must lie in [0, 1]"));
            }
        }
        self.lr_scale = scale;
        Ok(())
    }

    /// Distance between neighbouring grid points along each axis.
    pub fn spacing(&self) -> Vec3 {
        let l = self.bbox.lengths();
        [0, 1, 2].map(|k| l[k] / (self.dims[k] - 1) as f64)
    }

    #[inline]
    pub fn point_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn value(&self, channel: usize, i: usize, j: usize, k: usize) -> f64 {
        self.values[channel * self.num_points() + self.point_index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, i: usize, j: usize, k: usize, v: f64) {
        let idx = channel * self.num_points() + self.point_index(i, j, k);
        self.values[idx] = v;
    }

    /// World position of grid point `(i, j, k)`.
    pub fn point_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let l = self.bbox.lengths();
        let idx = [i, j, k];
        [0, 1, 2].map(|a| self.bbox.min[a] + (idx[a] as f64 / (self.dims[a] - 1) as f64) * l[a])
    }

    /// Continuous grid coordinates of a world point, clamped into the grid.
    #[inline]
    pub fn grid_coords(&self, p: Vec3) -> Vec3 {
        let mut g = [0.0; 3];
        for k in 0..3 {
            let n1 = (self.dims[k] - 1) as f64;
            let t = (p[k] - self.bbox.min[k]) / (self.bbox.max[k] - self.bbox.min[k]) * n1;
            // NaN maps to 0 through `max`.
            g[k] = t.max(0.0).min(n1);
        }
        g
    }

    #[inline]
    pub fn stencil(&self, p: Vec3) -> Stencil {
        let g = self.grid_coords(p);
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for k in 0..3 {
            let i0 = (libm::floor(g[k]) as usize).min(self.dims[k] - 2);
            base[k] = i0;
            frac[k] = g[k] - i0 as f64;
        }
        let [fx, fy, fz] = frac;
        let (ny, nz) = (self.dims[1], self.dims[2]);
        let b = (base[0] * ny + base[1]) * nz + base[2];
        let dx = ny * nz;
        let dy = nz;
        Stencil {
            index: [
                b,
                b + 1,
                b + dy,
                b + dy + 1,
                b + dx,
                b + dx + 1,
                b + dx + dy,
                b + dx + dy + 1,
            ],
            weight: [
                (1.0 - fx) * (1.0 - fy) * (1.0 - fz),
                (1.0 - fx) * (1.0 - fy) * fz,
                (1.0 - fx) * fy * (1.0 - fz),
                (1.0 - fx) * fy * fz,
                fx * (1.0 - fy) * (1.0 - fz),
                fx * (1.0 - fy) * fz,
                fx * fy * (1.0 - fz),
                fx * fy * fz,
            ],
        }
    }

    /// Blends one channel with a precomputed stencil.
    #[inline]
    pub fn blend(&self, stencil: &Stencil, channel: usize) -> f64 {
        let plane = &self.values[channel * self.num_points()..(channel + 1) * self.num_points()];
        let mut acc = 0.0;
        for c in 0..8 {
            acc += stencil.weight[c] * plane[stencil.index[c]];
        }
        acc
    }

    /// Blends every channel into `out` (length `channels`).
    #[inline]
    pub fn blend_into(&self, stencil: &Stencil, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = self.blend(stencil, c);
        }
    }

    pub fn trilinear_sample(&self, p: Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.blend_into(&self.stencil(p), &mut out);
        out
    }

    /// Channel 0 at `p`; the common case for density grids.
    #[inline]
    pub fn sample_scalar(&self, p: Vec3) -> f64 {
        self.blend(&self.stencil(p), 0)
    }

    /// Adds the adjoint of [`trilinear_sample`](Self::trilinear_sample) into `grad`:
    /// each of the 8 corners of every channel receives `upstream[c] * weight`.
    pub fn trilinear_backward(&self, p: Vec3, upstream: &[f64], grad: &mut [f64]) -> Result<()> {
        check_len(self.channels, upstream.len())?;
        check_len(self.values.len(), grad.len())?;
        self.scatter(&self.stencil(p), upstream, grad);
        Ok(())
    }

    /// Unchecked form of [`trilinear_backward`](Self::trilinear_backward) for a
    /// precomputed stencil. `upstream` may be shorter than `channels`.
    #[inline]
    pub fn scatter(&self, stencil: &Stencil, upstream: &[f64], grad: &mut [f64]) {
        let n = self.num_points();
        for (c, &u) in upstream.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            let plane = &mut grad[c * n..(c + 1) * n];
            for k in 0..8 {
                plane[stencil.index[k]] += u * stencil.weight[k];
            }
        }
    }

    /// Value of the nearest grid point, rounding half toward +inf per axis.
    pub fn nearest_sample(&self, p: Vec3) -> Vec<f64> {
        let g = self.grid_coords(p);
        let idx = [0, 1, 2].map(|k| (libm::floor(g[k] + 0.5) as usize).min(self.dims[k] - 1));
        let pi = self.point_index(idx[0], idx[1], idx[2]);
        let n = self.num_points();
        (0..self.channels)
            .map(|c| self.values[c * n + pi])
            .collect()
    }

    /// Resamples onto a finer lattice over the same box by trilinear interpolation.
    pub fn upsample(&self, new_dims: [usize; 3]) -> Result<DenseGrid> {
        if (0..3).any(|k| new_dims[k] < self.dims[k]) {
            return Err(invalid("upsample cannot shrink a grid"));
        }
        if new_dims == self.dims {
            let mut g = self.clone();
            g.lr_scale = None;
            return Ok(g);
        }
        let mut out = DenseGrid::zeros(self.channels, new_dims, self.bbox)?;
        let n_new = out.num_points();
        let mut buf = vec![0.0; self.channels];
        for i in 0..new_dims[0] {
            for j in 0..new_dims[1] {
                for k in 0..new_dims[2] {
                    let p = out.point_position(i, j, k);
                    self.blend_into(&self.stencil(p), &mut buf);
                    let pi = out.point_index(i, j, k);
                    for (c, v) in buf.iter().enumerate() {
                        out.values[c * n_new + pi] = *v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// FNV-1a hash of the value bits, for cheap "was this grid mutated" checks.
    pub fn checksum(&self) -> u64 {
        self.values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Bbox3 {
        Bbox3::new([0.0; 3], [1.0; 3]).unwrap()
    }

    fn ramp_grid(dims: [usize; 3]) -> DenseGrid {
        let mut g = DenseGrid::zeros(
            1,
            dims,
            Bbox3::new([-1.0, 0.0, 2.0], [1.0, 3.0, 2.5]).unwrap(),
        )
        .unwrap();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let p = g.point_position(i, j, k);
                    g.set(0, i, j, k, 2.0 * p[0] - 0.5 * p[1] + 3.0 * p[2] + 0.25);
                }
            }
        }
        g
    }

    #[test]
    fn allocate_unit_cube_smallest_budget() {
        let g = DenseGrid::allocate(unit(), VoxelBudget::new(8).unwrap(), 1).unwrap();
        assert_eq!(voxel_size(&unit(), VoxelBudget::new(8).unwrap()), 0.5);
        assert_eq!(g.dims(), [2, 2, 2]);
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn allocate_anisotropic_box() {
        let b = Bbox3::new([0.0; 3], [1.0, 2.0, 4.0]).unwrap();
        let budget = VoxelBudget::new(64).unwrap();
        assert!((voxel_size(&b, budget) - 0.5).abs() < 1e-15);
        assert_eq!(DenseGrid::allocate(b, budget, 3).unwrap().dims(), [2, 4, 8]);
    }

    #[test]
    fn allocate_default_coarse_budget() {
        let g = DenseGrid::allocate(unit(), VoxelBudget::new(100 * 100 * 100).unwrap(), 1).unwrap();
        assert_eq!(g.dims(), [100, 100, 100]);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(Bbox3::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(VoxelBudget::new(7).is_err());
        let flat = Bbox3 {
            min: [0.0; 3],
            max: [1.0, 1.0, 0.0],
        };
        assert!(DenseGrid::allocate(flat, VoxelBudget::new(8).unwrap(), 1).is_err());
    }

    #[test]
    fn corner_center_and_edge_queries() {
        let vals: Vec<f64> = (0..8).map(|v| v as f64 * 1.5 - 2.0).collect();
        let g = DenseGrid::from_values(1, [2, 2, 2], unit(), vals.clone()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let p = [i as f64, j as f64, k as f64];
                    assert_eq!(g.sample_scalar(p), g.value(0, i, j, k));
                }
            }
        }
        let mean = vals.iter().sum::<f64>() / 8.0;
        assert!((g.sample_scalar([0.5; 3]) - mean).abs() < 1e-14);
        // Edge from (0,0,0) to (1,0,0).
        let edge = 0.5 * (g.value(0, 0, 0, 0) + g.value(0, 1, 0, 0));
        assert!((g.sample_scalar([0.5, 0.0, 0.0]) - edge).abs() < 1e-14);
    }

    #[test]
    fn backward_at_corner_and_center() {
        let g = DenseGrid::zeros(1, [3, 3, 3], unit()).unwrap();
        let mut grad = vec![0.0; 27];
        g.trilinear_backward([0.5, 0.5, 0.5], &[1.0], &mut grad)
            .unwrap();
        assert_eq!(grad[g.point_index(1, 1, 1)], 1.0);
        assert_eq!(grad.iter().sum::<f64>(), 1.0);

        let g = DenseGrid::zeros(1, [2, 2, 2], unit()).unwrap();
        let mut grad = vec![0.0; 8];
        g.trilinear_backward([0.5; 3], &[1.0], &mut grad).unwrap();
        assert!(grad.iter().all(|&v| v == 0.125));
    }

    #[test]
    fn backward_shape_mismatch() {
        let g = DenseGrid::zeros(2, [2, 2, 2], unit()).unwrap();
        let mut grad = vec![0.0; 15];
        assert!(g
            .trilinear_backward([0.1; 3], &[1.0, 1.0], &mut grad)
            .is_err());
        let mut grad = vec![0.0; 16];
        assert!(g.trilinear_backward([0.1; 3], &[1.0], &mut grad).is_err());
    }

    #[test]
    fn nearest_rounding_and_tie_break() {
        let vals = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let g = DenseGrid::from_values(1, [2, 2, 2], unit(), vals).unwrap();
        assert_eq!(g.nearest_sample([0.4, 0.0, 0.0])[0], g.value(0, 0, 0, 0));
        assert_eq!(g.nearest_sample([0.6, 0.0, 0.0])[0], g.value(0, 1, 0, 0));
        // Equidistant between the two x planes: higher index wins.
        assert_eq!(g.nearest_sample([0.5, 0.0, 0.0])[0], g.value(0, 1, 0, 0));
        assert_eq!(g.nearest_sample([1.0, 1.0, 1.0])[0], 8.0);
    }

    #[test]
    fn upsample_identity_constant_and_ramp() {
        let g = ramp_grid([3, 4, 2]);
        assert_eq!(g.upsample([3, 4, 2]).unwrap().values(), g.values());
        assert!(g.upsample([2, 4, 2]).is_err());

        let c = DenseGrid::from_values(2, [2, 3, 2], unit(), vec![0.7; 24]).unwrap();
        let up = c.upsample([5, 7, 4]).unwrap();
        assert!(up.values().iter().all(|&v| (v - 0.7).abs() < 1e-15));

        let up = g.upsample([7, 9, 5]).unwrap();
        for i in 0..7 {
            for j in 0..9 {
                for k in 0..5 {
                    let p = up.point_position(i, j, k);
                    let want = 2.0 * p[0] - 0.5 * p[1] + 3.0 * p[2] + 0.25;
                    assert!((up.value(0, i, j, k) - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn ray_box_slabs() {
        let b = unit();
        assert_eq!(
            b.intersect_ray([-1.0, 0.5, 0.5], [1.0, 0.0, 0.0]),
            Some((1.0, 2.0))
        );
        assert_eq!(b.intersect_ray([-1.0, 2.0, 0.5], [1.0, 0.0, 0.0]), None);
        // Tangent to the top face.
        assert!(b.intersect_ray([-1.0, 1.0, 0.5], [1.0, 0.0, 0.0]).is_some());
    }

    #[test]
    fn lr_scale_validation() {
        let mut g = DenseGrid::zeros(1, [2, 2, 2], unit()).unwrap();
        assert!(g.set_lr_scale(Some(vec![0.5; 8])).is_ok());
        assert!(g.set_lr_scale(Some(vec![1.5; 8])).is_err());
        assert!(g.set_lr_scale(Some(vec![0.5; 7])).is_err());
    }
}
