//! Per-ray forward and backward passes for both stages.
//!
//! Training functions evaluate one ray's losses and append its gradients to a
//! [`GradRecords`] buffer instead of writing into dense gradients, so callers
//! can batch rays across threads and still merge in a fixed order.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::{DenseGrid, Stencil};
use crate::loss::{self, LossWeights};
use crate::math::{self, Vec3};
use crate::mlp::MlpBatch;
use crate::render::{
    alpha_from_sigma, alpha_from_sigma_grad, composite, composite_backward, softplus_shifted,
    softplus_shifted_grad, step_count, CompositeUpstream, Ray,
};
use crate::scene::{encode_into, posenc_len, CoarseScene, ColorHead, FineScene};
use crate::stage::FreeSpaceMask;

/// One training ray with its segment, target colour and jitter fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRay {
    pub ray: Ray,
    pub near: f64,
    pub far: f64,
    pub target: [f64; 3],
    /// Shift of every sample by `jitter * step`, in `[0, 1]`.
    pub jitter: f64,
}

/// Loss weights and shared constants for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchParams {
    pub weights: LossWeights,
    pub bg: [f64; 3],
    /// `1 / batch size`; every loss is a mean over rays.
    pub inv_batch: f64,
}

/// Thresholds for skipping work along fine rays. Zero disables a test.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SkipThresholds {
    /// Points whose fine alpha is below this are dropped.
    pub tau_fine: f64,
    /// Points whose weight is below this keep their opacity but get no colour query.
    pub tau_weight: f64,
}

/// Unweighted per-ray loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub photo: f64,
    pub pt_rgb: f64,
    pub bg_entropy: f64,
}

impl LossTerms {
    pub fn add(&mut self, o: &LossTerms) {
        self.photo += o.photo;
        self.pt_rgb += o.pt_rgb;
        self.bg_entropy += o.bg_entropy;
    }

    pub fn scaled(&self, s: f64) -> LossTerms {
        LossTerms {
            photo: self.photo * s,
            pt_rgb: self.pt_rgb * s,
            bg_entropy: self.bg_entropy * s,
        }
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        w.total(self.photo, self.pt_rgb, self.bg_entropy)
    }
}

/// Sparse gradients of a set of rays: one stencil per sample point with its
/// density and colour-grid upstreams, plus a dense MLP gradient.
#[derive(Debug, Clone, Default)]
pub struct GradRecords {
    pub color_channels: usize,
    pub stencils: Vec<Stencil>,
    pub d_density: Vec<f64>,
    pub d_color: Vec<f64>,
    pub d_mlp: Vec<f64>,
}

impl GradRecords {
    pub fn new(color_channels: usize, mlp_params: usize) -> Self {
        Self {
            color_channels,
            d_mlp: alloc::vec![0.0; mlp_params],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.stencils.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stencils.is_empty()
    }

    pub fn clear(&mut self) {
        self.stencils.clear();
        self.d_density.clear();
        self.d_color.clear();
        self.d_mlp.iter_mut().for_each(|g| *g = 0.0);
    }

    fn push(&mut self, st: Stencil, d_density: f64, d_color: &[f64]) {
        self.stencils.push(st);
        self.d_density.push(d_density);
        self.d_color.extend_from_slice(d_color);
    }

    /// Scatters the records into dense gradients shaped like `density` and
    /// `color`, in record order.
    pub fn apply(
        &self,
        density: &DenseGrid,
        color: &DenseGrid,
        g_density: &mut [f64],
        g_color: &mut [f64],
    ) -> Result<()> {
        if g_density.len() != density.values().len() || g_color.len() != color.values().len() {
            return Err(invalid("gradient buffers must match their grids"));
        }
        if color.channels() < self.color_channels || density.dims() != color.dims() {
            return Err(invalid("records do not fit these grids"));
        }
        let nc = self.color_channels;
        for (i, st) in self.stencils.iter().enumerate() {
            density.scatter(st, &self.d_density[i..i + 1], g_density);
            color.scatter(st, &self.d_color[i * nc..(i + 1) * nc], g_color);
        }
        Ok(())
    }

    /// Appends another buffer's records and adds its MLP gradient.
    pub fn extend(&mut self, other: &GradRecords) {
        self.stencils.extend_from_slice(&other.stencils);
        self.d_density.extend_from_slice(&other.d_density);
        self.d_color.extend_from_slice(&other.d_color);
        for (a, b) in self.d_mlp.iter_mut().zip(&other.d_mlp) {
            *a += b;
        }
    }
}

/// Reusable per-thread buffers for one ray.
#[derive(Debug, Clone, Default)]
pub struct RayScratch {
    stencils: Vec<Stencil>,
    raw: Vec<f64>,
    sigma: Vec<f64>,
    alphas: Vec<f64>,
    colors: Vec<[f64; 3]>,
    colored: Vec<bool>,
    feat: Vec<f64>,
    input: Vec<f64>,
    pts: Vec<Vec3>,
    batch: MlpBatch,
    d_out: Vec<f64>,
    pt_w: Vec<f64>,
    pt_c: Vec<[f64; 3]>,
    pt_dw: Vec<f64>,
    pt_dc: Vec<[f64; 3]>,
    d_weights: Vec<f64>,
    d_feat: Vec<f64>,
}

impl RayScratch {
    fn clear(&mut self) {
        self.stencils.clear();
        self.raw.clear();
        self.sigma.clear();
        self.alphas.clear();
        self.colors.clear();
        self.colored.clear();
    }
}

/// Sample distances `near + (i + jitter) * step` for `i = 0..=ceil((far - near) / step)`.
#[inline]
fn sample_t(near: f64, far: f64, step: f64, jitter: f64) -> impl Iterator<Item = f64> {
    (0..=step_count(near, far, step)).map(move |i| near + (i as f64 + jitter) * step)
}

fn check_ray(near: f64, far: f64, step: f64) -> Result<()> {
    if !(near >= 0.0 && far > near && far.is_finite() && step > 0.0) {
        return Err(invalid(
            "ray segment must satisfy 0 <= near < far with a positive step",
        ));
    }
    Ok(())
}

fn coarse_forward(
    scene: &CoarseScene,
    ray: &Ray,
    near: f64,
    far: f64,
    jitter: f64,
    sc: &mut RayScratch,
) {
    sc.clear();
    for t in sample_t(near, far, scene.step, jitter) {
        let x = ray.at(t);
        let st = scene.density.stencil(x);
        let raw = scene.density.blend(&st, 0);
        let sigma = softplus_shifted(raw, scene.bias);
        sc.alphas.push(alpha_from_sigma(sigma, scene.step));
        sc.colors
            .push([0, 1, 2].map(|c| math::sigmoid(scene.rgb.blend(&st, c))));
        sc.colored.push(true);
        sc.stencils.push(st);
        sc.raw.push(raw);
        sc.sigma.push(sigma);
    }
}

/// Colour of one coarse ray over `[near, far]`.
pub fn render_coarse_ray(
    scene: &CoarseScene,
    ray: &Ray,
    near: f64,
    far: f64,
    bg: [f64; 3],
    sc: &mut RayScratch,
) -> Result<[f64; 3]> {
    check_ray(near, far, scene.step)?;
    coarse_forward(scene, ray, near, far, 0.0, sc);
    Ok(composite(&sc.alphas, &sc.colors, bg)?.color)
}

/// Coarse-stage loss of one ray; gradients are appended to `out`
/// (colour records carry the 3 logit-grid channels).
pub fn coarse_train_ray(
    scene: &CoarseScene,
    r: &TrainRay,
    p: &BatchParams,
    sc: &mut RayScratch,
    out: &mut GradRecords,
) -> Result<LossTerms> {
    check_ray(r.near, r.far, scene.step)?;
    coarse_forward(scene, &r.ray, r.near, r.far, r.jitter, sc);
    let terms = backward_common(r, p, sc)?;
    let step = scene.step;
    for i in 0..sc.alphas.len() {
        let d_raw = sc.d_weights[i]
            * alpha_from_sigma_grad(sc.sigma[i], step)
            * softplus_shifted_grad(sc.raw[i], scene.bias);
        let c = sc.colors[i];
        let dc = sc.pt_dc[i];
        out.push(
            sc.stencils[i],
            d_raw,
            &[0, 1, 2].map(|k| dc[k] * c[k] * (1.0 - c[k])),
        );
    }
    Ok(terms)
}

/// Shared tail of both stages. On return `sc.d_weights` holds dL/d alpha and
/// `sc.pt_dc` holds dL/d colour for every point.
fn backward_common(r: &TrainRay, p: &BatchParams, sc: &mut RayScratch) -> Result<LossTerms> {
    let res = composite(&sc.alphas, &sc.colors, p.bg)?;
    let w = &p.weights;
    let s = p.inv_batch;
    let err = math::sub(res.color, r.target);
    let photo = math::dot(err, err);

    // Per-point loss over the points that received a colour.
    sc.pt_w.clear();
    sc.pt_c.clear();
    for i in 0..res.weights.len() {
        if sc.colored[i] {
            sc.pt_w.push(res.weights[i]);
            sc.pt_c.push(sc.colors[i]);
        }
    }
    let pt = loss::per_point_rgb_loss(&sc.pt_w, &sc.pt_c, r.target)?;
    sc.pt_dw.resize(sc.pt_w.len(), 0.0);
    sc.pt_dc.resize(sc.pt_w.len(), [0.0; 3]);
    loss::per_point_rgb_grad(&sc.pt_w, &sc.pt_c, r.target, &mut sc.pt_dw, &mut sc.pt_dc);
    let bg_entropy = loss::background_entropy_loss(res.bg_transmittance);

    let n = sc.alphas.len();
    sc.d_weights.clear();
    sc.d_weights.resize(n, 0.0);
    let mut pt_dc_full = alloc::vec![[0.0; 3]; n];
    let mut j = 0;
    for i in 0..n {
        if sc.colored[i] {
            sc.d_weights[i] = w.pt_rgb * s * sc.pt_dw[j];
            pt_dc_full[i] = math::scale(sc.pt_dc[j], w.pt_rgb * s);
            j += 1;
        }
    }
    let upstream = CompositeUpstream {
        color: math::scale(err, 2.0 * w.photo * s),
        weights: Some(&sc.d_weights),
        bg_transmittance: w.bg * s * loss::background_entropy_grad(res.bg_transmittance),
    };
    let (d_alpha, d_color) = composite_backward(&sc.alphas, &sc.colors, p.bg, &upstream)?;
    sc.d_weights.copy_from_slice(&d_alpha);
    sc.pt_dc.clear();
    sc.pt_dc.extend(
        d_color
            .iter()
            .zip(&pt_dc_full)
            .map(|(a, b)| math::add(*a, *b)),
    );
    Ok(LossTerms {
        photo,
        pt_rgb: pt,
        bg_entropy,
    })
}

/// Samples a fine ray, applying both skip tests. MLP activations of the
/// coloured points stay in `sc` for a backward pass.
#[allow(clippy::too_many_arguments)]
fn fine_forward(
    scene: &FineScene,
    mask: Option<&FreeSpaceMask>,
    skip: &SkipThresholds,
    ray: &Ray,
    near: f64,
    far: f64,
    jitter: f64,
    sc: &mut RayScratch,
) {
    sc.clear();
    let step = scene.step;
    sc.pts.clear();
    for t in sample_t(near, far, step, jitter) {
        let x = ray.at(t);
        if let Some(m) = mask {
            if m.is_free(x) {
                continue;
            }
        }
        let st = scene.density.stencil(x);
        let raw = scene.density.blend(&st, 0);
        let sigma = softplus_shifted(raw, scene.bias);
        let alpha = alpha_from_sigma(sigma, step);
        if alpha < skip.tau_fine {
            continue;
        }
        sc.stencils.push(st);
        sc.raw.push(raw);
        sc.sigma.push(sigma);
        sc.alphas.push(alpha);
        sc.pts.push(x);
    }

    let mut trans = 1.0;
    for &a in &sc.alphas {
        sc.colored.push(trans * a >= skip.tau_weight);
        trans *= 1.0 - a;
    }
    sc.colors.resize(sc.alphas.len(), [0.0; 3]);
    let nf = scene.feat.channels();
    match &scene.head {
        ColorHead::Direct => {
            sc.feat.resize(nf, 0.0);
            for i in 0..sc.alphas.len() {
                if sc.colored[i] {
                    scene.feat.blend_into(&sc.stencils[i], &mut sc.feat);
                    sc.colors[i] = [0, 1, 2].map(|c| math::sigmoid(sc.feat[c]));
                }
            }
        }
        ColorHead::Mlp(mlp) => {
            let kx = posenc_len(scene.posenc_x);
            let dim = mlp.input_dim();
            sc.input.resize(dim - nf - kx, 0.0);
            encode_into(ray.dir, scene.posenc_d, &mut sc.input);
            let rows = sc.colored.iter().filter(|&&c| c).count();
            let input = mlp.batch_input(rows, &mut sc.batch);
            let mut r = 0;
            for i in 0..sc.alphas.len() {
                if sc.colored[i] {
                    let row = &mut input[r * dim..(r + 1) * dim];
                    scene.feat.blend_into(&sc.stencils[i], &mut row[..nf]);
                    encode_into(sc.pts[i], scene.posenc_x, &mut row[nf..nf + kx]);
                    row[nf + kx..].copy_from_slice(&sc.input);
                    r += 1;
                }
            }
            mlp.forward_batch(&mut sc.batch);
            let out = sc.batch.output();
            let mut r = 0;
            for i in 0..sc.alphas.len() {
                if sc.colored[i] {
                    sc.colors[i] = [out[3 * r], out[3 * r + 1], out[3 * r + 2]];
                    r += 1;
                }
            }
        }
    }
}

/// Fine ray segment clipped to the scene box, or `None` when it misses.
pub fn clip_to_bbox(scene: &FineScene, ray: &Ray, near: f64, far: f64) -> Option<(f64, f64)> {
    let (t0, t1) = scene.density.bbox().intersect_ray(ray.origin, ray.dir)?;
    let (n, f) = (near.max(t0), far.min(t1));
    (n < f).then_some((n, f))
}

/// Colour of one fine ray; the segment is clipped to the scene box first.
#[allow(clippy::too_many_arguments)]
pub fn render_fine_ray(
    scene: &FineScene,
    mask: Option<&FreeSpaceMask>,
    skip: &SkipThresholds,
    ray: &Ray,
    near: f64,
    far: f64,
    bg: [f64; 3],
    sc: &mut RayScratch,
) -> Result<[f64; 3]> {
    check_ray(near, far, scene.step)?;
    let Some((n, f)) = clip_to_bbox(scene, ray, near, far) else {
        return Ok(bg);
    };
    fine_forward(scene, mask, skip, ray, n, f, 0.0, sc);
    Ok(composite(&sc.alphas, &sc.colors, bg)?.color)
}

/// Fine-stage loss of one ray over `[r.near, r.far]` as given (callers clip
/// to the scene box beforehand). Colour records carry the feature channels;
/// MLP gradients are added into `out.d_mlp`.
pub fn fine_train_ray(
    scene: &FineScene,
    mask: Option<&FreeSpaceMask>,
    skip: &SkipThresholds,
    r: &TrainRay,
    p: &BatchParams,
    sc: &mut RayScratch,
    out: &mut GradRecords,
) -> Result<LossTerms> {
    check_ray(r.near, r.far, scene.step)?;
    fine_forward(scene, mask, skip, &r.ray, r.near, r.far, r.jitter, sc);
    let terms = backward_common(r, p, sc)?;
    let nf = scene.feat.channels();
    if let ColorHead::Mlp(mlp) = &scene.head {
        sc.d_out.clear();
        for i in 0..sc.alphas.len() {
            if sc.colored[i] {
                sc.d_out.extend_from_slice(&sc.pt_dc[i]);
            }
        }
        sc.d_feat.resize(sc.batch.rows() * nf, 0.0);
        mlp.backward_batch(&mut sc.batch, &sc.d_out, &mut out.d_mlp, nf, &mut sc.d_feat)?;
    }
    sc.feat.resize(nf, 0.0);
    let mut r = 0;
    for i in 0..sc.alphas.len() {
        let d_raw = sc.d_weights[i]
            * alpha_from_sigma_grad(sc.sigma[i], scene.step)
            * softplus_shifted_grad(sc.raw[i], scene.bias);
        sc.feat.iter_mut().for_each(|g| *g = 0.0);
        if sc.colored[i] {
            match &scene.head {
                ColorHead::Direct => {
                    let (c, dc) = (sc.colors[i], sc.pt_dc[i]);
                    for k in 0..3 {
                        sc.feat[k] = dc[k] * c[k] * (1.0 - c[k]);
                    }
                }
                ColorHead::Mlp(_) => sc.feat.copy_from_slice(&sc.d_feat[r * nf..(r + 1) * nf]),
            }
            r += 1;
        }
        out.push(sc.stencils[i], d_raw, &sc.feat);
    }
    Ok(terms)
}
