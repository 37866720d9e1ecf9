//! Small procedurally rendered scenes with exact ray-primitive intersection,
//! used as stand-ins for captured datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use voxfield_core::image::RgbImage;
use voxfield_core::math::{self, Vec3};
use voxfield_core::render::{Camera, Ray};

use crate::dataset::{focal_from_angle, Dataset, PosedImage, Split};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Sphere,
    Boxes,
    /// A sphere with two differently coloured halves and a specular highlight.
    TwoToneSphere,
}

/// Camera placement and image settings for [`generate_analytic_scene`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rig {
    pub radius: f64,
    pub camera_angle_x: f64,
    /// Elevation range above the ground plane, radians.
    pub elevation: (f64, f64),
    pub near: f64,
    pub far: f64,
    pub white_bg: bool,
}

impl Default for Rig {
    fn default() -> Self {
        Self {
            radius: 4.0,
            camera_angle_x: 0.6911112070083618,
            elevation: (0.15, 1.3),
            near: 2.0,
            far: 6.0,
            white_bg: true,
        }
    }
}

const LIGHT: Vec3 = [0.4, -0.3, 0.866];
const AMBIENT: f64 = 0.3;
const SPECULAR: f64 = 0.6;
const SHININESS: i32 = 24;

/// Camera-to-world pose at `eye` looking at `target`, with world `+z` up.
pub fn look_at(eye: Vec3, target: Vec3) -> [[f64; 4]; 4] {
    let back = math::normalize(math::sub(eye, target)).unwrap_or([0.0, 0.0, 1.0]);
    let up = if back[2].abs() > 0.999 {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let right = math::normalize(math::cross(up, back)).unwrap_or([1.0, 0.0, 0.0]);
    let cam_up = math::cross(back, right);
    [
        [right[0], cam_up[0], back[0], eye[0]],
        [right[1], cam_up[1], back[1], eye[1]],
        [right[2], cam_up[2], back[2], eye[2]],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

struct Hit {
    t: f64,
    normal: Vec3,
    albedo: [f64; 3],
    glossy: bool,
}

fn hit_sphere(ray: &Ray, radius: f64) -> Option<(f64, Vec3)> {
    let b = math::dot(ray.origin, ray.dir);
    let c = math::dot(ray.origin, ray.origin) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then(|| (t, math::scale(ray.at(t), 1.0 / radius)))
}

fn hit_box(ray: &Ray, min: Vec3, max: Vec3) -> Option<(f64, Vec3)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut normal = [0.0; 3];
    for k in 0..3 {
        if ray.dir[k] == 0.0 {
            if ray.origin[k] < min[k] || ray.origin[k] > max[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / ray.dir[k];
        let (mut a, mut b) = (
            (min[k] - ray.origin[k]) * inv,
            (max[k] - ray.origin[k]) * inv,
        );
        let mut sign = -1.0;
        if a > b {
            std::mem::swap(&mut a, &mut b);
            sign = 1.0;
        }
        if a > t0 {
            t0 = a;
            normal = [0.0; 3];
            normal[k] = sign;
        }
        t1 = t1.min(b);
    }
    (t0 <= t1 && t0 > 0.0).then_some((t0, normal))
}

fn intersect(kind: SceneKind, ray: &Ray) -> Option<Hit> {
    match kind {
        SceneKind::Sphere => hit_sphere(ray, 1.0).map(|(t, normal)| Hit {
            t,
            normal,
            albedo: [0.85, 0.55, 0.3],
            glossy: false,
        }),
        SceneKind::TwoToneSphere => hit_sphere(ray, 1.0).map(|(t, normal)| Hit {
            t,
            normal,
            albedo: if normal[0] < 0.0 {
                [0.85, 0.25, 0.2]
            } else {
                [0.2, 0.4, 0.85]
            },
            glossy: true,
        }),
        SceneKind::Boxes => {
            let boxes = [
                ([-0.9, -0.9, -0.9], [0.1, 0.1, 0.2], [0.8, 0.3, 0.3]),
                ([0.0, -0.2, -0.9], [0.8, 0.8, 0.7], [0.3, 0.7, 0.4]),
            ];
            boxes
                .iter()
                .filter_map(|&(lo, hi, albedo)| {
                    hit_box(ray, lo, hi).map(|(t, normal)| Hit {
                        t,
                        normal,
                        albedo,
                        glossy: false,
                    })
                })
                .min_by(|a, b| a.t.total_cmp(&b.t))
        }
    }
}

fn shade(hit: &Hit, ray: &Ray) -> [f64; 3] {
    let light = math::normalize(LIGHT).unwrap();
    let diffuse = AMBIENT + (1.0 - AMBIENT) * math::dot(hit.normal, light).max(0.0);
    let spec = if hit.glossy {
        let half = math::normalize(math::sub(light, ray.dir)).unwrap_or(light);
        SPECULAR * math::dot(hit.normal, half).max(0.0).powi(SHININESS)
    } else {
        0.0
    };
    hit.albedo.map(|a| (a * diffuse + spec).clamp(0.0, 1.0))
}

/// Sub-pixel rays per axis; every pixel averages a regular grid of them.
pub const SUBPIXELS: u32 = 4;

/// Renders one view; returns composited colour and fractional coverage.
/// Silhouettes are antialiased by averaging `SUBPIXELS`² rays per pixel.
pub fn render_analytic(kind: SceneKind, camera: &Camera, bg: [f64; 3]) -> (RgbImage, Vec<f64>) {
    let (w, h) = (camera.width, camera.height);
    let origin = camera.origin();
    let n = SUBPIXELS as f64;
    let inv = 1.0 / (n * n);
    let mut pixels = Vec::with_capacity((w * h) as usize);
    let mut alpha = Vec::with_capacity((w * h) as usize);
    for v in 0..h {
        for u in 0..w {
            let mut sum = [0.0; 3];
            let mut hits = 0u32;
            for sv in 0..SUBPIXELS {
                for su in 0..SUBPIXELS {
                    let ray = Ray {
                        origin,
                        dir: camera.direction_at(
                            u as f64 + (su as f64 + 0.5) / n,
                            v as f64 + (sv as f64 + 0.5) / n,
                        ),
                    };
                    let c = match intersect(kind, &ray) {
                        Some(hit) => {
                            hits += 1;
                            shade(&hit, &ray)
                        }
                        None => bg,
                    };
                    sum = math::add(sum, c);
                }
            }
            pixels.push(sum.map(|c| c * inv));
            alpha.push(hits as f64 * inv);
        }
    }
    (
        RgbImage {
            width: w as usize,
            height: h as usize,
            pixels,
        },
        alpha,
    )
}

fn random_camera(rng: &mut ChaCha8Rng, rig: &Rig, size: u32) -> Result<Camera> {
    let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
    let elevation = rng.gen_range(rig.elevation.0..rig.elevation.1);
    let eye = [
        rig.radius * elevation.cos() * azimuth.cos(),
        rig.radius * elevation.cos() * azimuth.sin(),
        rig.radius * elevation.sin(),
    ];
    let f = focal_from_angle(size, rig.camera_angle_x);
    let c = size as f64 / 2.0;
    Ok(Camera::new(
        look_at(eye, [0.0; 3]),
        f,
        f,
        c,
        c,
        size,
        size,
        rig.near,
        rig.far,
    )?)
}

/// Renders `n_train + n_test` square views from random inward-facing cameras
/// on the upper hemisphere.
pub fn generate_analytic_scene(
    kind: SceneKind,
    n_train: usize,
    n_test: usize,
    image_size: u32,
    seed: u64,
) -> Result<Dataset> {
    generate_with_rig(kind, n_train, n_test, image_size, seed, &Rig::default())
}

pub fn generate_with_rig(
    kind: SceneKind,
    n_train: usize,
    n_test: usize,
    image_size: u32,
    seed: u64,
    rig: &Rig,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = if rig.white_bg { [1.0; 3] } else { [0.0; 3] };
    let mut view = |split| -> Result<PosedImage> {
        let camera = random_camera(&mut rng, rig, image_size)?;
        let (image, alpha) = render_analytic(kind, &camera, bg);
        Ok(PosedImage {
            camera,
            image,
            alpha: Some(alpha),
            split,
        })
    };
    let train = (0..n_train)
        .map(|_| view(Split::Train))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..n_test)
        .map(|_| view(Split::Test))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        train,
        test,
        near: rig.near,
        far: rig.far,
        white_bg: rig.white_bg,
    };
    ds.validate()?;
    Ok(ds)
}
