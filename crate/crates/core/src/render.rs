//! Cameras, rays, point sampling, density activation and the volume-rendering
//! quadrature, each with its reverse-mode gradient.
//!
//! Cameras follow the NeRF-synthetic convention: in camera space the camera
//! looks down -z, +x points right and +y points up, while pixel rows grow
//! downward. Ray directions are unit length and every distance (near, far,
//! step) is measured in world units along the ray.

use alloc::vec::Vec;

use crate::error::{check_len, invalid, Result};
use crate::grid::DenseGrid;
use crate::math::{self, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    c2w: [[f64; 4]; 4],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub const ORTHONORMAL_TOL: f64 = 1e-6;

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c2w: [[f64; 4]; 4],
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        if c2w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("camera pose must be finite"));
        }
        if c2w[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(invalid("camera pose last row must be 0 0 0 1"));
        }
        for a in 0..3 {
            for b in 0..3 {
                let d: f64 = (0..3).map(|r| c2w[r][a] * c2w[r][b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (d - want).abs() > Self::ORTHONORMAL_TOL {
                    return Err(invalid("camera rotation is not orthonormal"));
                }
            }
        }
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(invalid("focal lengths must be positive"));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(invalid("principal point must be finite"));
        }
        if width == 0 || height == 0 {
            return Err(invalid("image size must be positive"));
        }
        if !(near > 0.0 && far > near && far.is_finite()) {
            return Err(invalid("camera bounds must satisfy 0 < near < far"));
        }
        Ok(Self {
            c2w,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
            far,
        })
    }

    pub fn c2w(&self) -> &[[f64; 4]; 4] {
        &self.c2w
    }

    pub fn origin(&self) -> Vec3 {
        [self.c2w[0][3], self.c2w[1][3], self.c2w[2][3]]
    }

    fn rotate(&self, v: Vec3) -> Vec3 {
        [0, 1, 2].map(|r| self.c2w[r][0] * v[0] + self.c2w[r][1] * v[1] + self.c2w[r][2] * v[2])
    }

    /// Unit world direction through continuous pixel coordinates `(u, v)`;
    /// pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
    pub fn direction_at(&self, u: f64, v: f64) -> Vec3 {
        let cam = [(u - self.cx) / self.fx, -(v - self.cy) / self.fy, -1.0];
        math::normalize(self.rotate(cam)).unwrap_or([0.0, 0.0, -1.0])
    }

    /// Ray through the center of pixel `(u, v)` without bounds checks.
    pub fn pixel_ray(&self, u: u32, v: u32) -> Ray {
        Ray {
            origin: self.origin(),
            dir: self.direction_at(u as f64 + 0.5, v as f64 + 0.5),
        }
    }

    /// Projects a world point. Returns continuous pixel coordinates and the
    /// distance from the camera center, or `None` behind the camera.
    pub fn project(&self, x: Vec3) -> Option<(f64, f64, f64)> {
        let rel = math::sub(x, self.origin());
        // Inverse rotation is the transpose.
        let p = [0, 1, 2]
            .map(|c| self.c2w[0][c] * rel[0] + self.c2w[1][c] * rel[1] + self.c2w[2][c] * rel[2]);
        if p[2] >= 0.0 {
            return None;
        }
        let depth = -p[2];
        let u = self.cx + self.fx * p[0] / depth;
        let v = self.cy - self.fy * p[1] / depth;
        Some((u, v, math::norm(rel)))
    }

    /// The 8 frustum corners: the four image corners at distances near and far.
    pub fn frustum_corners(&self) -> [Vec3; 8] {
        let o = self.origin();
        let (w, h) = (self.width as f64, self.height as f64);
        let mut out = [[0.0; 3]; 8];
        let mut n = 0;
        for &t in &[self.near, self.far] {
            for &(u, v) in &[(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
                out[n] = math::axpy(o, t, self.direction_at(u, v));
                n += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    /// Normalizes `dir`; rejects zero or non-finite directions.
    pub fn new(origin: Vec3, dir: Vec3) -> Result<Self> {
        let dir = math::normalize(dir).ok_or_else(|| invalid("ray direction must be non-zero"))?;
        if !math::is_finite3(origin) {
            return Err(invalid("ray origin must be finite"));
        }
        Ok(Self { origin, dir })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        math::axpy(self.origin, t, self.dir)
    }
}

pub fn make_rays(camera: &Camera, pixels: &[(u32, u32)]) -> Result<Vec<Ray>> {
    pixels
        .iter()
        .map(|&(u, v)| {
            if u >= camera.width || v >= camera.height {
                Err(invalid("pixel outside the image"))
            } else {
                Ok(camera.pixel_ray(u, v))
            }
        })
        .collect()
}

/// Ordered query points along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<Vec3>,
    /// Distance of each point from the ray origin.
    pub t: Vec<f64>,
    pub deltas: Vec<f64>,
    pub alive_mask: Vec<bool>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Number of stepped points after `x_0`: `ceil((far - near) / step)`.
#[inline]
pub fn step_count(near: f64, far: f64, step: f64) -> usize {
    libm::ceil((far - near) / step).max(0.0) as usize
}

/// `x_0 = o + near d`, `x_i = x_0 + i step d` for `i = 1..=ceil((far - near) / step)`.
pub fn sample_along_ray(ray: &Ray, near: f64, far: f64, step: f64) -> Result<SampleBatch> {
    if !(near >= 0.0 && far > near && far.is_finite()) {
        return Err(invalid("sampling bounds must satisfy 0 <= near < far"));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid("sampling step must be positive"));
    }
    let n = step_count(near, far, step) + 1;
    let t: Vec<f64> = (0..n).map(|i| near + i as f64 * step).collect();
    Ok(SampleBatch {
        points: t.iter().map(|&ti| ray.at(ti)).collect(),
        t,
        deltas: alloc::vec![step; n],
        alive_mask: alloc::vec![true; n],
    })
}

/// Rigidly shifts every point by `u * step` along the (unit) ray direction.
pub fn jitter_samples(batch: &SampleBatch, ray: &Ray, step: f64, u: f64) -> Result<SampleBatch> {
    if !(0.0..=1.0).contains(&u) {
        return Err(invalid("jitter fraction must lie in [0, 1]"));
    }
    let shift = u * step;
    let mut out = batch.clone();
    for (p, t) in out.points.iter_mut().zip(out.t.iter_mut()) {
        *p = math::axpy(*p, shift, ray.dir);
        *t += shift;
    }
    Ok(out)
}

/// The shift `b` inside the density activation `log(1 + exp(raw + b))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationBias(pub f64);

impl ActivationBias {
    pub fn new(b: f64) -> Result<Self> {
        if b.is_finite() {
            Ok(Self(b))
        } else {
            Err(invalid("activation bias must be finite"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `log(1 + exp(raw + b))`; linear above 30, exponential below -30.
#[inline]
pub fn softplus_shifted(raw: f64, bias: ActivationBias) -> f64 {
    math::softplus(raw + bias.0)
}

/// d softplus / d raw, which is `sigmoid(raw + b)`.
#[inline]
pub fn softplus_shifted_grad(raw: f64, bias: ActivationBias) -> f64 {
    math::sigmoid(raw + bias.0)
}

/// `1 - exp(-sigma * delta)`.
#[inline]
pub fn alpha_from_sigma(sigma: f64, delta: f64) -> f64 {
    -libm::expm1(-sigma * delta)
}

/// d alpha / d sigma, which is `delta * (1 - alpha)`.
#[inline]
pub fn alpha_from_sigma_grad(sigma: f64, delta: f64) -> f64 {
    delta * libm::exp(-sigma * delta)
}

/// Bias that makes a zero-valued grid decay transmittance by exactly
/// `1 - alpha_init` over one voxel of size `voxel_size`:
/// `b = log((1 - alpha_init)^(-1/s) - 1)`.
pub fn low_density_bias(alpha_init: f64, voxel_size: f64) -> Result<ActivationBias> {
    if !(alpha_init > 0.0 && alpha_init < 1.0) {
        return Err(invalid("alpha_init must lie in (0, 1)"));
    }
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(invalid("voxel size must be positive"));
    }
    // (1 - a)^(-1/s) - 1 = expm1(-log1p(-a) / s), without cancellation for tiny a.
    let inner = libm::expm1(-libm::log1p(-alpha_init) / voxel_size);
    ActivationBias::new(libm::log(inner))
}

/// Where the non-linearities sit relative to interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationMode {
    /// `interp(alpha(softplus(V)))`
    Pre,
    /// `alpha(interp(softplus(V)))`
    In,
    /// `alpha(softplus(interp(V)))`
    Post,
}

impl ActivationMode {
    pub const ALL: [ActivationMode; 3] = [
        ActivationMode::Pre,
        ActivationMode::In,
        ActivationMode::Post,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationMode::Pre => "pre",
            ActivationMode::In => "in",
            ActivationMode::Post => "post",
        }
    }
}

/// Alpha of a density grid at `point` under one activation ordering.
pub fn activated_alpha(
    grid: &DenseGrid,
    point: Vec3,
    delta: f64,
    bias: ActivationBias,
    mode: ActivationMode,
) -> f64 {
    let st = grid.stencil(point);
    let plane = &grid.values()[..grid.num_points()];
    match mode {
        ActivationMode::Post => alpha_from_sigma(softplus_shifted(grid.blend(&st, 0), bias), delta),
        ActivationMode::In => {
            let sigma: f64 = (0..8)
                .map(|c| st.weight[c] * softplus_shifted(plane[st.index[c]], bias))
                .sum();
            alpha_from_sigma(sigma, delta)
        }
        ActivationMode::Pre => (0..8)
            .map(|c| {
                st.weight[c] * alpha_from_sigma(softplus_shifted(plane[st.index[c]], bias), delta)
            })
            .sum(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    pub color: [f64; 3],
    /// `T_i * alpha_i` per point.
    pub weights: Vec<f64>,
    /// `T_{K+1}`, the share of the background.
    pub bg_transmittance: f64,
}

/// Volume-rendering quadrature: `C = sum_i T_i a_i c_i + T_{K+1} bg`.
pub fn composite(alphas: &[f64], colors: &[[f64; 3]], bg: [f64; 3]) -> Result<RenderResult> {
    check_len(alphas.len(), colors.len())?;
    let mut weights = Vec::with_capacity(alphas.len());
    let mut color = [0.0; 3];
    let mut trans = 1.0;
    for (a, c) in alphas.iter().zip(colors) {
        let w = trans * a;
        weights.push(w);
        for k in 0..3 {
            color[k] += w * c[k];
        }
        trans *= 1.0 - a;
    }
    for k in 0..3 {
        color[k] += trans * bg[k];
    }
    Ok(RenderResult {
        color,
        weights,
        bg_transmittance: trans,
    })
}

/// Upstream gradients flowing into [`composite`]'s outputs.
#[derive(Debug, Clone, Copy)]
pub struct CompositeUpstream<'a> {
    pub color: [f64; 3],
    /// Per-point gradient on the weights `T_i a_i`, if any loss reads them.
    pub weights: Option<&'a [f64]>,
    pub bg_transmittance: f64,
}

/// Exact adjoint of [`composite`]. Returns `(d alphas, d colors)`.
///
/// Uses the suffix recursion `R_i = a_i u_i + (1 - a_i) R_{i+1}`, `R_{K+1} = u_bg`,
/// where `u_i` is the per-point scalar the weight multiplies; then
/// `dL/da_i = T_i (u_i - R_{i+1})`. No division by `1 - a_i` is needed.
pub fn composite_backward(
    alphas: &[f64],
    colors: &[[f64; 3]],
    bg: [f64; 3],
    upstream: &CompositeUpstream<'_>,
) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
    let n = alphas.len();
    check_len(n, colors.len())?;
    if let Some(w) = upstream.weights {
        check_len(n, w.len())?;
    }
    let mut trans = Vec::with_capacity(n);
    let mut t = 1.0;
    for a in alphas {
        trans.push(t);
        t *= 1.0 - a;
    }
    let g = upstream.color;
    let mut d_alpha = alloc::vec![0.0; n];
    let mut d_color = alloc::vec![[0.0; 3]; n];
    let mut suffix = math::dot(g, bg) + upstream.bg_transmittance;
    for i in (0..n).rev() {
        let u = math::dot(g, colors[i]) + upstream.weights.map_or(0.0, |w| w[i]);
        d_alpha[i] = trans[i] * (u - suffix);
        let w = trans[i] * alphas[i];
        d_color[i] = math::scale(g, w);
        suffix = alphas[i] * u + (1.0 - alphas[i]) * suffix;
    }
    Ok((d_alpha, d_color))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Bbox3;

    fn identity_pose() -> [[f64; 4]; 4] {
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    fn cam(pose: [[f64; 4]; 4]) -> Camera {
        Camera::new(pose, 10.0, 10.0, 10.5, 8.5, 21, 17, 1.0, 5.0).unwrap()
    }

    #[test]
    fn principal_pixel_looks_forward() {
        let r = make_rays(&cam(identity_pose()), &[(10, 8)]).unwrap();
        assert_eq!(r[0].dir, [0.0, 0.0, -1.0]);
        assert_eq!(r[0].origin, [0.0; 3]);
    }

    #[test]
    fn pixel_one_focal_right() {
        // u + 0.5 - cx = fx  =>  u = 20
        let r = make_rays(&cam(identity_pose()), &[(20, 8)]).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((r[0].dir[0] - s).abs() < 1e-15);
        assert!(r[0].dir[1].abs() < 1e-15);
        assert!((r[0].dir[2] + s).abs() < 1e-15);
    }

    #[test]
    fn translated_pose_origin_and_bounds() {
        let mut p = identity_pose();
        p[0][3] = 1.0;
        p[1][3] = -2.0;
        p[2][3] = 3.5;
        let c = cam(p);
        assert_eq!(
            make_rays(&c, &[(0, 0)]).unwrap()[0].origin,
            [1.0, -2.0, 3.5]
        );
        assert!(make_rays(&c, &[(21, 0)]).is_err());
        assert!(make_rays(&c, &[(0, 17)]).is_err());
    }

    #[test]
    fn camera_invariants() {
        let mut p = identity_pose();
        p[0][0] = 1.1;
        assert!(Camera::new(p, 1.0, 1.0, 0.0, 0.0, 2, 2, 1.0, 2.0).is_err());
        assert!(Camera::new(identity_pose(), 1.0, 1.0, 0.0, 0.0, 2, 2, 2.0, 2.0).is_err());
        assert!(Camera::new(identity_pose(), 1.0, 1.0, 0.0, 0.0, 2, 2, 0.0, 2.0).is_err());
    }

    #[test]
    fn projection_inverts_pixel_rays() {
        let mut p = identity_pose();
        p[2][3] = 4.0;
        let c = cam(p);
        let r = c.pixel_ray(3, 12);
        let (u, v, d) = c.project(r.at(2.5)).unwrap();
        assert!((u - 3.5).abs() < 1e-12 && (v - 12.5).abs() < 1e-12 && (d - 2.5).abs() < 1e-12);
        assert!(c.project([0.0, 0.0, 5.0]).is_none());
    }

    #[test]
    fn sampling_points_and_counts() {
        let ray = Ray::new([0.0; 3], [0.0, 0.0, 2.0]).unwrap();
        let b = sample_along_ray(&ray, 0.0, 1.0, 0.5).unwrap();
        assert_eq!(b.t, [0.0, 0.5, 1.0]);
        assert_eq!(b.points[2], [0.0, 0.0, 1.0]);
        let b = sample_along_ray(&ray, 0.2, 0.5, 1.0).unwrap();
        assert_eq!(b.len(), 2);
        let b = sample_along_ray(
            &Ray::new([1.0, 2.0, 3.0], [1.0, 1.0, 1.0]).unwrap(),
            0.3,
            2.0,
            0.1,
        )
        .unwrap();
        for w in b.points.windows(2) {
            assert!((math::norm(math::sub(w[1], w[0])) - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn jitter_is_rigid() {
        let ray = Ray::new([0.0, 1.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        let b = sample_along_ray(&ray, 1.0, 2.0, 0.25).unwrap();
        assert_eq!(jitter_samples(&b, &ray, 0.25, 0.0).unwrap(), b);
        let j = jitter_samples(&b, &ray, 0.25, 1.0).unwrap();
        for (p, q) in b.points.iter().zip(&j.points) {
            assert!((q[0] - p[0] - 0.25).abs() < 1e-15);
        }
        let j = jitter_samples(&b, &ray, 0.25, 0.37).unwrap();
        for (a, b2) in j.points.windows(2).zip(b.points.windows(2)) {
            assert!(
                (math::norm(math::sub(a[1], a[0])) - math::norm(math::sub(b2[1], b2[0]))).abs()
                    < 1e-12
            );
        }
        assert!(jitter_samples(&b, &ray, 0.25, 1.5).is_err());
    }

    #[test]
    fn softplus_regimes() {
        let b = ActivationBias(0.0);
        assert!((softplus_shifted(0.0, b) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(
            (softplus_shifted(-3.0, ActivationBias(3.0)) - core::f64::consts::LN_2).abs() < 1e-15
        );
        assert!(softplus_shifted(-1e3, b) < 1e-300);
        assert!((softplus_shifted(100.0, b) - 100.0).abs() < 1e-9);
        assert!(softplus_shifted_grad(1e4, b).is_finite());
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha_from_sigma(0.0, 0.3), 0.0);
        assert!((alpha_from_sigma(core::f64::consts::LN_2, 1.0) - 0.5).abs() < 1e-15);
        assert!((alpha_from_sigma(2.0 * core::f64::consts::LN_2, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(alpha_from_sigma(1e6, 1.0), 1.0);
    }

    #[test]
    fn bias_examples() {
        assert!(low_density_bias(0.5, 1.0).unwrap().0.abs() < 1e-15);
        let b = low_density_bias(1e-6, 1.0).unwrap().0;
        // log((1 - 1e-6)^-1 - 1) = log(1e-6 / (1 - 1e-6))
        let want = libm::log(1e-6 / (1.0 - 1e-6));
        assert!((b - want).abs() < 1e-12);
        assert!((b + 13.8155).abs() < 1e-4);
        assert!(low_density_bias(0.0, 1.0).is_err());
        assert!(low_density_bias(1.0, 1.0).is_err());
        assert!(low_density_bias(0.5, 0.0).is_err());
    }

    #[test]
    fn modes_agree_on_constants_and_corners() {
        let bbox = Bbox3::new([0.0; 3], [1.0; 3]).unwrap();
        let g = DenseGrid::from_values(1, [2, 2, 2], bbox, alloc::vec![0.4; 8]).unwrap();
        let b = ActivationBias(-0.7);
        let post = activated_alpha(&g, [0.3, 0.6, 0.1], 0.5, b, ActivationMode::Post);
        for m in ActivationMode::ALL {
            assert!((activated_alpha(&g, [0.3, 0.6, 0.1], 0.5, b, m) - post).abs() < 1e-12);
        }
        let vals: Vec<f64> = (0..8).map(|i| i as f64 - 3.0).collect();
        let g = DenseGrid::from_values(1, [2, 2, 2], bbox, vals).unwrap();
        let post = activated_alpha(&g, [1.0, 0.0, 1.0], 0.5, b, ActivationMode::Post);
        for m in ActivationMode::ALL {
            assert!((activated_alpha(&g, [1.0, 0.0, 1.0], 0.5, b, m) - post).abs() < 1e-15);
        }
    }

    #[test]
    fn post_activation_sharp_cell() {
        // 1D cell embedded along x; values constant in y and z.
        let bbox = Bbox3::new([0.0; 3], [1.0; 3]).unwrap();
        let (a, b) = (-865.0, 867.2);
        let g = DenseGrid::from_values(1, [2, 2, 2], bbox, alloc::vec![a, a, a, a, b, b, b, b])
            .unwrap();
        let zero = ActivationBias(0.0);
        assert!(activated_alpha(&g, [0.49, 0.5, 0.5], 0.5, zero, ActivationMode::Post) <= 1e-4);
        assert!(
            activated_alpha(&g, [0.51, 0.5, 0.5], 0.5, zero, ActivationMode::Post) >= 1.0 - 1e-4
        );
    }

    #[test]
    fn composite_examples() {
        let bg = [0.2, 0.4, 0.6];
        let r = composite(&[0.0, 0.0], &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], bg).unwrap();
        assert_eq!(r.color, bg);
        assert_eq!(r.bg_transmittance, 1.0);

        let r = composite(&[1.0, 0.3], &[[0.1, 0.2, 0.3], [0.9, 0.9, 0.9]], bg).unwrap();
        assert_eq!(r.color, [0.1, 0.2, 0.3]);
        assert_eq!(r.weights[1], 0.0);

        let r = composite(&[0.5, 0.5], &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [0.0; 3]).unwrap();
        assert_eq!(r.color, [0.5, 0.25, 0.0]);
        assert_eq!(r.bg_transmittance, 0.25);
    }

    #[test]
    fn composite_backward_simple_cases() {
        let up = CompositeUpstream {
            color: [1.0, 0.0, 0.0],
            weights: None,
            bg_transmittance: 0.0,
        };
        let (_, dc) = composite_backward(&[0.3], &[[0.5; 3]], [0.0; 3], &up).unwrap();
        assert!((dc[0][0] - 0.3).abs() < 1e-15);

        let zero = CompositeUpstream {
            color: [0.0; 3],
            weights: Some(&[0.0, 0.0]),
            bg_transmittance: 0.0,
        };
        let (da, dc) =
            composite_backward(&[0.3, 0.9], &[[0.5; 3], [0.1; 3]], [1.0; 3], &zero).unwrap();
        assert!(da.iter().all(|&v| v == 0.0));
        assert!(dc.iter().flatten().all(|&v| v == 0.0));
    }
}
