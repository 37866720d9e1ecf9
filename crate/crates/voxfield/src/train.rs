//! Two-stage optimization and view rendering.
//!
//! Each iteration draws a batch of training pixels and per-ray jitters on the
//! calling thread, splits the batch into fixed chunks of [`CHUNK_RAYS`] rays
//! that are evaluated in parallel, then merges the chunks' gradient records
//! in chunk order. Results therefore do not depend on the thread count.

use std::path::Path;
use std::time::Instant;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;
use voxfield_core::grid::{voxel_size, DenseGrid, VoxelBudget};
use voxfield_core::image::RgbImage;
use voxfield_core::metrics::{psnr, ssim};
use voxfield_core::mlp::Mlp;
use voxfield_core::optim::{lr_factor, view_count_scale, AdamState};
use voxfield_core::raymarch::{
    clip_to_bbox, coarse_train_ray, fine_train_ray, render_coarse_ray, render_fine_ray,
    BatchParams, GradRecords, LossTerms, RayScratch, SkipThresholds, TrainRay,
};
use voxfield_core::render::{low_density_bias, ActivationBias, Camera};
use voxfield_core::scene::{CoarseScene, ColorHead, FineScene};
use voxfield_core::stage::{coarse_bbox, fine_bbox, progressive_dims, FreeSpaceMask};

use crate::config::{ColorModel, TrainConfig};
use crate::dataset::{Dataset, PosedImage};
use crate::error::{io_err, Error, Result};
use crate::formats::{save_checkpoint, write_loss_csv, MetricRow, SceneCheckpoint, TraceRow};

/// Rays per parallel work item.
pub const CHUNK_RAYS: usize = 32;

pub fn build_pool(threads: Option<usize>) -> Result<ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n.max(1));
    }
    b.build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// A training pixel: its ray, segment and colour.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PixelRay {
    ray: voxfield_core::render::Ray,
    near: f64,
    far: f64,
    target: [f64; 3],
}

fn pixel_rays(views: &[PosedImage]) -> Vec<PixelRay> {
    let mut out = Vec::new();
    for v in views {
        let cam = &v.camera;
        for y in 0..cam.height {
            for x in 0..cam.width {
                out.push(PixelRay {
                    ray: cam.pixel_ray(x, y),
                    near: cam.near,
                    far: cam.far,
                    target: v.image.get(x as usize, y as usize),
                });
            }
        }
    }
    out
}

/// Draws `n` pixel indices and jitters.
fn draw_batch(rng: &mut ChaCha8Rng, pool_len: usize, n: usize) -> (Vec<usize>, Vec<f64>) {
    let idx = (0..n).map(|_| rng.gen_range(0..pool_len)).collect();
    let jit = (0..n).map(|_| rng.gen::<f64>()).collect();
    (idx, jit)
}

fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn bias_for(cfg: &TrainConfig, alpha_init: f64, voxel: f64) -> Result<ActivationBias> {
    if cfg.low_density_init {
        Ok(low_density_bias(alpha_init, voxel)?)
    } else {
        Ok(ActivationBias(0.0))
    }
}

/// Evaluates one batch in fixed chunks; returns summed loss terms and leaves
/// each chunk's gradients in `bufs`.
fn run_batch<F>(
    pool: &ThreadPool,
    n_rays: usize,
    bufs: &mut Vec<GradRecords>,
    proto: &GradRecords,
    f: F,
) -> Result<LossTerms>
where
    F: Fn(usize, &mut RayScratch, &mut GradRecords) -> Result<LossTerms> + Sync,
{
    let n_chunks = n_rays.div_ceil(CHUNK_RAYS);
    bufs.resize_with(n_chunks, || proto.clone());
    let parts: Vec<Result<LossTerms>> = pool.install(|| {
        bufs.par_iter_mut()
            .enumerate()
            .map_init(RayScratch::default, |sc, (c, rec)| {
                rec.clear();
                let mut terms = LossTerms::default();
                for i in c * CHUNK_RAYS..((c + 1) * CHUNK_RAYS).min(n_rays) {
                    terms.add(&f(i, sc, rec)?);
                }
                Ok(terms)
            })
            .collect()
    });
    let mut total = LossTerms::default();
    for p in parts {
        total.add(&p?);
    }
    Ok(total)
}

fn trace_row(
    iter: usize,
    terms: &LossTerms,
    inv_batch: f64,
    cfg_w: &voxfield_core::loss::LossWeights,
    lr: f64,
    t0: Instant,
) -> TraceRow {
    let m = terms.scaled(inv_batch);
    TraceRow {
        iter,
        total: m.total(cfg_w),
        photo: m.photo,
        pt_rgb: m.pt_rgb,
        bg_entropy: m.bg_entropy,
        lr_factor: lr,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// Coarse scene before any optimization step.
pub fn init_coarse(ds: &Dataset, cfg: &TrainConfig) -> Result<CoarseScene> {
    let cams = ds.train_cameras();
    let bbox = coarse_bbox(&cams)?;
    let budget = VoxelBudget::new(cfg.m_coarse)?;
    let s = voxel_size(&bbox, budget);
    let density = DenseGrid::allocate(bbox, budget, 1)?;
    let rgb = DenseGrid::allocate(bbox, budget, 3)?;
    let bias = bias_for(cfg, cfg.alpha_init_coarse, s)?;
    Ok(CoarseScene::new(density, rgb, bias, cfg.step_ratio * s)?)
}

/// Optimizes the coarse density and colour grids; returns the scene and the
/// loss trace (iterations numbered from 1).
pub fn train_coarse(
    ds: &Dataset,
    cfg: &TrainConfig,
    pool: &ThreadPool,
) -> Result<(CoarseScene, Vec<TraceRow>)> {
    cfg.validate()?;
    ds.validate()?;
    let t0 = Instant::now();
    let mut scene = init_coarse(ds, cfg)?;
    info!(
        "coarse grid {:?}, bbox {:?} .. {:?}, step {:.4}, density shift {:.3}",
        scene.density.dims(),
        scene.density.bbox().min,
        scene.density.bbox().max,
        scene.step,
        scene.bias.value()
    );
    let scale = if cfg.view_count_lr {
        let (scale, any) = view_count_scale(&scene.density, &ds.train_cameras())?;
        if !any {
            warn!("no coarse grid point is visible from any training view; using uniform learning rates");
        }
        Some(scale)
    } else {
        None
    };

    let rays = pixel_rays(&ds.train);
    let weights = cfg.coarse_weights.to_loss_weights()?;
    let params = BatchParams {
        weights,
        bg: ds.background(),
        inv_batch: 1.0 / cfg.batch_rays as f64,
    };
    let mut rng = stage_rng(cfg.seed, 0);
    let mut adam_d = AdamState::new(scene.density.values().len(), cfg.lr_grid);
    let mut adam_c = AdamState::new(scene.rgb.values().len(), cfg.lr_grid);
    let mut g_d = vec![0.0; adam_d.len()];
    let mut g_c = vec![0.0; adam_c.len()];
    let proto = GradRecords::new(3, 0);
    let mut bufs = Vec::new();
    let mut trace = Vec::new();

    for it in 0..cfg.coarse_iters {
        let (idx, jit) = draw_batch(&mut rng, rays.len(), cfg.batch_rays);
        let terms = {
            let scene = &scene;
            run_batch(pool, idx.len(), &mut bufs, &proto, |i, sc, rec| {
                let p = rays[idx[i]];
                let r = TrainRay {
                    ray: p.ray,
                    near: p.near,
                    far: p.far,
                    target: p.target,
                    jitter: jit[i],
                };
                Ok(coarse_train_ray(scene, &r, &params, sc, rec)?)
            })?
        };
        g_d.iter_mut().for_each(|g| *g = 0.0);
        g_c.iter_mut().for_each(|g| *g = 0.0);
        for rec in &bufs {
            rec.apply(&scene.density, &scene.rgb, &mut g_d, &mut g_c)?;
        }
        let lr = lr_factor(it as u64, cfg.lr_decay_steps);
        adam_d.step(scene.density.values_mut(), &g_d, lr, scale.as_deref())?;
        adam_c.step(scene.rgb.values_mut(), &g_c, lr, scale.as_deref())?;

        if (it + 1) % cfg.log_every == 0 || it + 1 == cfg.coarse_iters {
            let row = trace_row(it + 1, &terms, params.inv_batch, &weights, lr, t0);
            debug!(
                "coarse {} loss {:.6} photo {:.6}",
                row.iter, row.total, row.photo
            );
            trace.push(row);
        }
    }
    info!("coarse stage done in {:.1}s", t0.elapsed().as_secs_f64());
    Ok((scene, trace))
}

/// Fine scene before any optimization step, the mask built from `coarse`,
/// and the grid dims and voxel sizes of the progressive schedule.
pub fn init_fine(
    coarse: &CoarseScene,
    cfg: &TrainConfig,
) -> Result<(FineScene, FreeSpaceMask, Vec<([usize; 3], f64)>)> {
    let mask = FreeSpaceMask::from_coarse(coarse, cfg.tau_coarse)?;
    let (bbox, found) = fine_bbox(&mask);
    if !found {
        warn!("the coarse density marks everything free; the fine stage uses the coarse box");
    }
    let schedule = progressive_dims(&bbox, cfg.m_fine, cfg.pg_ckpt.len())?;
    let s_final = schedule.last().map(|s| s.1).unwrap_or(1.0);
    let bias = bias_for(cfg, cfg.alpha_init_fine, s_final)?;
    let (dims0, s0) = schedule[0];
    let (channels, head) = match cfg.color_model {
        ColorModel::Diffuse => (3, ColorHead::Direct),
        ColorModel::Mlp => {
            let mut dims = vec![FineScene::mlp_input_dim(
                cfg.features,
                cfg.posenc_x,
                cfg.posenc_d,
            )];
            dims.extend(std::iter::repeat(cfg.mlp_width).take(cfg.mlp_hidden));
            dims.push(3);
            (
                cfg.features,
                ColorHead::Mlp(Mlp::glorot(&dims, cfg.seed ^ 0x5_eed0_fc01)?),
            )
        }
    };
    let density = DenseGrid::zeros(1, dims0, bbox)?;
    let feat = DenseGrid::zeros(channels, dims0, bbox)?;
    let scene = FineScene::new(
        density,
        feat,
        head,
        bias,
        cfg.step_ratio * s0,
        cfg.posenc_x,
        cfg.posenc_d,
    )?;
    Ok((scene, mask, schedule))
}

/// Skip thresholds the fine stage uses in training and rendering.
pub fn skip_thresholds(cfg: &TrainConfig) -> SkipThresholds {
    SkipThresholds {
        tau_fine: cfg.tau_fine,
        tau_weight: cfg.tau_weight,
    }
}

/// Training rays clipped to the fine box; rays that miss it are dropped.
fn fine_rays(rays: &[PixelRay], scene: &FineScene) -> Vec<PixelRay> {
    rays.iter()
        .filter_map(|p| {
            clip_to_bbox(scene, &p.ray, p.near, p.far).map(|(near, far)| PixelRay {
                near,
                far,
                ..*p
            })
        })
        .collect()
}

/// Optimizes the fine grids and colour head with the coarse scene frozen.
/// Trace iterations continue after `cfg.coarse_iters`.
pub fn train_fine(
    ds: &Dataset,
    coarse: &CoarseScene,
    cfg: &TrainConfig,
    pool: &ThreadPool,
) -> Result<(FineScene, FreeSpaceMask, Vec<TraceRow>)> {
    cfg.validate()?;
    ds.validate()?;
    let t0 = Instant::now();
    let (mut scene, mask, schedule) = init_fine(coarse, cfg)?;
    info!(
        "fine bbox {:?} .. {:?}, grid {:?}, final grid {:?}, density shift {:.3}",
        scene.density.bbox().min,
        scene.density.bbox().max,
        schedule[0].0,
        schedule.last().map(|s| s.0),
        scene.bias.value()
    );
    let all = pixel_rays(&ds.train);
    let rays = fine_rays(&all, &scene);
    info!(
        "{} of {} training rays cross the fine box",
        rays.len(),
        all.len()
    );
    if rays.is_empty() {
        return Err(Error::Config(
            "no training ray crosses the fine bounding box".into(),
        ));
    }
    let weights = cfg.fine_weights.to_loss_weights()?;
    let params = BatchParams {
        weights,
        bg: ds.background(),
        inv_batch: 1.0 / cfg.batch_rays as f64,
    };
    let skip = skip_thresholds(cfg);
    let mut rng = stage_rng(cfg.seed, 1);
    let n_mlp = scene.mlp().map_or(0, |m| m.params().len());
    let mut adam_d = AdamState::new(scene.density.values().len(), cfg.lr_grid);
    let mut adam_f = AdamState::new(scene.feat.values().len(), cfg.lr_grid);
    let mut adam_m = AdamState::new(n_mlp, cfg.lr_mlp);
    let mut g_d = vec![0.0; adam_d.len()];
    let mut g_f = vec![0.0; adam_f.len()];
    let proto = GradRecords::new(scene.feat.channels(), n_mlp);
    let mut bufs = Vec::new();
    let mut trace = Vec::new();
    let mut next_ckpt = 0;

    for it in 0..cfg.fine_iters {
        if next_ckpt < cfg.pg_ckpt.len() && it == cfg.pg_ckpt[next_ckpt] {
            next_ckpt += 1;
            let (dims, s) = schedule[next_ckpt];
            scene.density = scene.density.upsample(dims)?;
            scene.feat = scene.feat.upsample(dims)?;
            scene.step = cfg.step_ratio * s;
            adam_d.reset(scene.density.values().len());
            adam_f.reset(scene.feat.values().len());
            adam_m.reset(n_mlp);
            g_d = vec![0.0; adam_d.len()];
            g_f = vec![0.0; adam_f.len()];
            info!("iteration {it}: fine grid scaled to {dims:?}");
        }
        let (idx, jit) = draw_batch(&mut rng, rays.len(), cfg.batch_rays);
        let terms = {
            let (scene, mask) = (&scene, &mask);
            run_batch(pool, idx.len(), &mut bufs, &proto, |i, sc, rec| {
                let p = rays[idx[i]];
                let r = TrainRay {
                    ray: p.ray,
                    near: p.near,
                    far: p.far,
                    target: p.target,
                    jitter: jit[i],
                };
                Ok(fine_train_ray(
                    scene,
                    Some(mask),
                    &skip,
                    &r,
                    &params,
                    sc,
                    rec,
                )?)
            })?
        };
        g_d.iter_mut().for_each(|g| *g = 0.0);
        g_f.iter_mut().for_each(|g| *g = 0.0);
        let mut g_m = vec![0.0; n_mlp];
        for rec in &bufs {
            rec.apply(&scene.density, &scene.feat, &mut g_d, &mut g_f)?;
            for (a, b) in g_m.iter_mut().zip(&rec.d_mlp) {
                *a += b;
            }
        }
        let lr = lr_factor(it as u64, cfg.lr_decay_steps);
        adam_d.step(scene.density.values_mut(), &g_d, lr, None)?;
        adam_f.step(scene.feat.values_mut(), &g_f, lr, None)?;
        if let Some(m) = scene.mlp_mut() {
            adam_m.step(m.params_mut(), &g_m, lr, None)?;
        }

        if (it + 1) % cfg.log_every == 0 || it + 1 == cfg.fine_iters {
            let row = trace_row(
                cfg.coarse_iters + it + 1,
                &terms,
                params.inv_batch,
                &weights,
                lr,
                t0,
            );
            debug!(
                "fine {} loss {:.6} photo {:.6}",
                row.iter, row.total, row.photo
            );
            trace.push(row);
        }
    }
    info!("fine stage done in {:.1}s", t0.elapsed().as_secs_f64());
    Ok((scene, mask, trace))
}

/// Both trained stages plus the combined loss trace.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub coarse: CoarseScene,
    pub fine: FineScene,
    pub mask: FreeSpaceMask,
    pub trace: Vec<TraceRow>,
}

pub fn train(ds: &Dataset, cfg: &TrainConfig, pool: &ThreadPool) -> Result<TrainedModel> {
    let (coarse, mut trace) = train_coarse(ds, cfg, pool)?;
    let offset = trace.last().map_or(0.0, |r| r.seconds);
    let (fine, mask, fine_trace) = train_fine(ds, &coarse, cfg, pool)?;
    trace.extend(fine_trace.into_iter().map(|r| TraceRow {
        seconds: r.seconds + offset,
        ..r
    }));
    Ok(TrainedModel {
        coarse,
        fine,
        mask,
        trace,
    })
}

pub const CONFIG_FILE: &str = "config.toml";
pub const COARSE_FILE: &str = "coarse.ckpt";
pub const FINE_FILE: &str = "fine.ckpt";
pub const LOSS_FILE: &str = "loss.csv";

/// Writes the config snapshot, both checkpoints and the loss trace into `dir`.
pub fn save_model(dir: &Path, cfg: &TrainConfig, model: &TrainedModel) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cfg_path = dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(io_err(&cfg_path))?;
    save_checkpoint(
        &dir.join(COARSE_FILE),
        &SceneCheckpoint::Coarse(model.coarse.clone()),
    )?;
    save_checkpoint(
        &dir.join(FINE_FILE),
        &SceneCheckpoint::Fine(model.fine.clone()),
    )?;
    write_loss_csv(&dir.join(LOSS_FILE), &model.trace)
}

/// Which scene to render.
#[derive(Debug, Clone, Copy)]
pub enum SceneRef<'a> {
    Coarse(&'a CoarseScene),
    Fine {
        scene: &'a FineScene,
        mask: Option<&'a FreeSpaceMask>,
        skip: SkipThresholds,
    },
}

/// Renders every pixel of `camera` without jitter, rows in parallel.
pub fn render_view(
    scene: SceneRef<'_>,
    camera: &Camera,
    bg: [f64; 3],
    pool: &ThreadPool,
) -> Result<RgbImage> {
    let (w, h) = (camera.width, camera.height);
    let rows: Vec<Result<Vec<[f64; 3]>>> = pool.install(|| {
        (0..h)
            .into_par_iter()
            .map_init(RayScratch::default, |sc, y| {
                (0..w)
                    .map(|x| {
                        let ray = camera.pixel_ray(x, y);
                        let c = match scene {
                            SceneRef::Coarse(s) => {
                                render_coarse_ray(s, &ray, camera.near, camera.far, bg, sc)?
                            }
                            SceneRef::Fine { scene, mask, skip } => render_fine_ray(
                                scene,
                                mask,
                                &skip,
                                &ray,
                                camera.near,
                                camera.far,
                                bg,
                                sc,
                            )?,
                        };
                        Ok(c.map(|v| v.clamp(0.0, 1.0)))
                    })
                    .collect()
            })
            .collect()
    });
    let mut pixels = Vec::with_capacity((w * h) as usize);
    for r in rows {
        pixels.extend(r?);
    }
    Ok(RgbImage::new(w as usize, h as usize, pixels)?)
}

/// Renders each view and scores it against its stored image.
pub fn evaluate(
    scene: SceneRef<'_>,
    views: &[PosedImage],
    bg: [f64; 3],
    pool: &ThreadPool,
) -> Result<(Vec<MetricRow>, Vec<RgbImage>)> {
    let mut rows = Vec::with_capacity(views.len());
    let mut images = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let img = render_view(scene, &v.camera, bg, pool)?;
        rows.push(MetricRow {
            view_index: i,
            psnr: psnr(&img, &v.image)?,
            ssim: ssim(&img, &v.image)?,
        });
        images.push(img);
    }
    Ok((rows, images))
}

pub fn mean_metrics(rows: &[MetricRow]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (
        rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    )
}
