//! Central-difference checks for every differentiable path, shared by the
//! core gradient tests and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxfield_core::grid::{Bbox3, DenseGrid};
use voxfield_core::loss::LossWeights;
use voxfield_core::mlp::{Mlp, MlpWorkspace};
use voxfield_core::raymarch::{
    coarse_train_ray, fine_train_ray, BatchParams, GradRecords, RayScratch, SkipThresholds,
    TrainRay,
};
use voxfield_core::render::{
    alpha_from_sigma, alpha_from_sigma_grad, composite, composite_backward, softplus_shifted,
    softplus_shifted_grad, ActivationBias, CompositeUpstream, Ray,
};
use voxfield_core::scene::{CoarseScene, ColorHead, FineScene};

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps exact zeros comparable.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn central<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

fn random_grid(rng: &mut ChaCha8Rng, channels: usize, dims: [usize; 3], bbox: Bbox3) -> DenseGrid {
    let n = channels * dims.iter().product::<usize>();
    DenseGrid::from_values(
        channels,
        dims,
        bbox,
        (0..n).map(|_| uniform(rng, -3.0, 3.0)).collect(),
    )
    .unwrap()
}

pub fn trilinear(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let c = rng.gen_range(1..4);
        let dims = [
            rng.gen_range(2..5),
            rng.gen_range(2..5),
            rng.gen_range(2..5),
        ];
        let bbox = Bbox3::new([-1.0, -0.5, 0.0], [1.0, 0.5, 2.0]).unwrap();
        let mut grid = random_grid(&mut rng, c, dims, bbox);
        let p = [
            uniform(&mut rng, -1.2, 1.2),
            uniform(&mut rng, -0.6, 0.6),
            uniform(&mut rng, -0.1, 2.1),
        ];
        let up: Vec<f64> = (0..c).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let mut g = vec![0.0; grid.values().len()];
        grid.trilinear_backward(p, &up, &mut g).unwrap();
        for j in 0..g.len() {
            let orig = grid.values()[j];
            let fd = central(orig, |v| {
                grid.values_mut()[j] = v;
                grid.trilinear_sample(p)
                    .iter()
                    .zip(&up)
                    .map(|(s, u)| s * u)
                    .sum()
            });
            grid.values_mut()[j] = orig;
            worst = worst.max(rel_err(g[j], fd));
        }
    }
    GradReport {
        name: "trilinear sample",
        instances,
        max_rel_err: worst,
        tol: 1e-4,
    }
}

pub fn softplus(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let raw = uniform(&mut rng, -3.0, 3.0);
        let b = ActivationBias(uniform(&mut rng, -3.0, 3.0));
        let fd = central(raw, |r| softplus_shifted(r, b));
        worst = worst.max(rel_err(softplus_shifted_grad(raw, b), fd));
    }
    GradReport {
        name: "shifted softplus",
        instances,
        max_rel_err: worst,
        tol: 1e-4,
    }
}

pub fn alpha(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let sigma = uniform(&mut rng, 0.01, 3.0);
        let delta = uniform(&mut rng, 0.01, 2.0);
        let fd = central(sigma, |s| alpha_from_sigma(s, delta));
        worst = worst.max(rel_err(alpha_from_sigma_grad(sigma, delta), fd));
    }
    GradReport {
        name: "alpha from density",
        instances,
        max_rel_err: worst,
        tol: 1e-4,
    }
}

pub fn composite_path(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let k = rng.gen_range(1..9);
        let mut alphas: Vec<f64> = (0..k).map(|_| uniform(&mut rng, 0.01, 0.99)).collect();
        let mut colors: Vec<[f64; 3]> = (0..k)
            .map(|_| [0; 3].map(|_| uniform(&mut rng, 0.0, 1.0)))
            .collect();
        let bg = [0; 3].map(|_| uniform(&mut rng, 0.0, 1.0));
        let g = [0; 3].map(|_| uniform(&mut rng, -3.0, 3.0));
        let gw: Vec<f64> = (0..k).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let gt = uniform(&mut rng, -3.0, 3.0);
        let loss = |a: &[f64], c: &[[f64; 3]]| {
            let r = composite(a, c, bg).unwrap();
            (0..3).map(|i| g[i] * r.color[i]).sum::<f64>()
                + r.weights.iter().zip(&gw).map(|(w, u)| w * u).sum::<f64>()
                + gt * r.bg_transmittance
        };
        let up = CompositeUpstream {
            color: g,
            weights: Some(&gw),
            bg_transmittance: gt,
        };
        let (da, dc) = composite_backward(&alphas, &colors, bg, &up).unwrap();
        for i in 0..k {
            let orig = alphas[i];
            let fd = central(orig, |v| {
                alphas[i] = v;
                loss(&alphas, &colors)
            });
            alphas[i] = orig;
            worst = worst.max(rel_err(da[i], fd));
            for ch in 0..3 {
                let orig = colors[i][ch];
                let fd = central(orig, |v| {
                    colors[i][ch] = v;
                    loss(&alphas, &colors)
                });
                colors[i][ch] = orig;
                worst = worst.max(rel_err(dc[i][ch], fd));
            }
        }
    }
    GradReport {
        name: "compositing",
        instances,
        max_rel_err: worst,
        tol: 1e-4,
    }
}

pub fn mlp(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dims = [
            rng.gen_range(3..8),
            rng.gen_range(4..10),
            rng.gen_range(4..10),
            3,
        ];
        let n = Mlp::param_count(&dims);
        let mut net = Mlp::from_params(
            &dims,
            (0..n).map(|_| uniform(&mut rng, -1.0, 1.0)).collect(),
        )
        .unwrap();
        let mut x: Vec<f64> = (0..dims[0]).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let g = [0; 3].map(|_| uniform(&mut rng, -3.0, 3.0));
        let mut ws = MlpWorkspace::default();
        let mut eval = |net: &Mlp, x: &[f64]| -> f64 {
            let y = net.forward(x, &mut ws).unwrap();
            (0..3).map(|i| g[i] * y[i]).sum()
        };
        let mut ws_b = MlpWorkspace::default();
        net.forward(&x, &mut ws_b).unwrap();
        let mut gp = vec![0.0; n];
        let mut gx = vec![0.0; dims[0]];
        net.backward(&mut ws_b, &g, &mut gp, &mut gx).unwrap();
        for j in 0..n {
            let orig = net.params()[j];
            net.params_mut()[j] = orig + STEP;
            let up = eval(&net, &x);
            net.params_mut()[j] = orig - STEP;
            let dn = eval(&net, &x);
            net.params_mut()[j] = orig;
            worst = worst.max(rel_err(gp[j], (up - dn) / (2.0 * STEP)));
        }
        for j in 0..dims[0] {
            let orig = x[j];
            x[j] = orig + STEP;
            let up = eval(&net, &x);
            x[j] = orig - STEP;
            let dn = eval(&net, &x);
            x[j] = orig;
            worst = worst.max(rel_err(gx[j], (up - dn) / (2.0 * STEP)));
        }
    }
    GradReport {
        name: "MLP",
        instances,
        max_rel_err: worst,
        tol: 1e-4,
    }
}

fn random_ray(rng: &mut ChaCha8Rng) -> TrainRay {
    let theta = uniform(rng, 0.0, std::f64::consts::TAU);
    let z = uniform(rng, -0.8, 0.8);
    let r = (1.0 - z * z).sqrt();
    let origin = [3.0 * r * theta.cos(), 3.0 * r * theta.sin(), 3.0 * z];
    let aim = [0; 3].map(|_| uniform(rng, -0.5, 0.5));
    let dir = [aim[0] - origin[0], aim[1] - origin[1], aim[2] - origin[2]];
    TrainRay {
        ray: Ray::new(origin, dir).unwrap(),
        near: 1.5,
        far: 4.5,
        target: [0; 3].map(|_| uniform(rng, 0.0, 1.0)),
        jitter: uniform(rng, 0.0, 1.0),
    }
}

fn params(rng: &mut ChaCha8Rng) -> BatchParams {
    BatchParams {
        weights: LossWeights::new(1.0, uniform(rng, 0.0, 0.5), uniform(rng, 0.0, 0.1)).unwrap(),
        bg: [0; 3].map(|_| uniform(rng, 0.0, 1.0)),
        inv_batch: 0.25,
    }
}

/// Checks every grid value in `values` against the gradient `analytic`.
fn check_values<F: FnMut(&[f64]) -> f64>(
    values: &mut Vec<f64>,
    analytic: &[f64],
    mut loss: F,
) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..values.len() {
        let orig = values[j];
        values[j] = orig + STEP;
        let up = loss(values);
        values[j] = orig - STEP;
        let dn = loss(values);
        values[j] = orig;
        worst = worst.max(rel_err(analytic[j], (up - dn) / (2.0 * STEP)));
    }
    worst
}

pub fn coarse_ray(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bbox = Bbox3::new([-1.0; 3], [1.0; 3]).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dims = [3, 4, 3];
        let scene = CoarseScene::new(
            random_grid(&mut rng, 1, dims, bbox),
            random_grid(&mut rng, 3, dims, bbox),
            ActivationBias(uniform(&mut rng, -4.0, -1.0)),
            0.35,
        )
        .unwrap();
        let r = random_ray(&mut rng);
        let p = params(&mut rng);
        let mut sc = RayScratch::default();
        let mut rec = GradRecords::new(3, 0);
        coarse_train_ray(&scene, &r, &p, &mut sc, &mut rec).unwrap();
        let mut gd = vec![0.0; scene.density.values().len()];
        let mut gc = vec![0.0; scene.rgb.values().len()];
        rec.apply(&scene.density, &scene.rgb, &mut gd, &mut gc)
            .unwrap();

        let loss = |s: &CoarseScene| {
            let mut sc = RayScratch::default();
            let mut rec = GradRecords::new(3, 0);
            coarse_train_ray(s, &r, &p, &mut sc, &mut rec)
                .unwrap()
                .total(&p.weights)
                * p.inv_batch
        };
        let mut dv = scene.density.values().to_vec();
        worst = worst.max(check_values(&mut dv, &gd, |v| {
            let mut s = scene.clone();
            s.density.values_mut().copy_from_slice(v);
            loss(&s)
        }));
        let mut cv = scene.rgb.values().to_vec();
        worst = worst.max(check_values(&mut cv, &gc, |v| {
            let mut s = scene.clone();
            s.rgb.values_mut().copy_from_slice(v);
            loss(&s)
        }));
    }
    GradReport {
        name: "coarse ray loss",
        instances,
        max_rel_err: worst,
        tol: 1e-3,
    }
}

pub fn fine_ray(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bbox = Bbox3::new([-1.0; 3], [1.0; 3]).unwrap();
    let (nf, kx, kd) = (3, 1, 1);
    let dims = [3, 3, 4];
    let mlp_dims = [FineScene::mlp_input_dim(nf, kx, kd), 8, 8, 3];
    let skip = SkipThresholds::default();
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = Mlp::param_count(&mlp_dims);
        let mlp = Mlp::from_params(
            &mlp_dims,
            (0..n).map(|_| uniform(&mut rng, -1.0, 1.0)).collect(),
        )
        .unwrap();
        let scene = FineScene::new(
            random_grid(&mut rng, 1, dims, bbox),
            random_grid(&mut rng, nf, dims, bbox),
            ColorHead::Mlp(mlp),
            ActivationBias(uniform(&mut rng, -4.0, -1.0)),
            0.3,
            kx,
            kd,
        )
        .unwrap();
        let r = random_ray(&mut rng);
        let p = params(&mut rng);
        let mut sc = RayScratch::default();
        let mut rec = GradRecords::new(nf, n);
        fine_train_ray(&scene, None, &skip, &r, &p, &mut sc, &mut rec).unwrap();
        let mut gd = vec![0.0; scene.density.values().len()];
        let mut gf = vec![0.0; scene.feat.values().len()];
        rec.apply(&scene.density, &scene.feat, &mut gd, &mut gf)
            .unwrap();

        let loss = |s: &FineScene| {
            let mut sc = RayScratch::default();
            let mut rec = GradRecords::new(nf, n);
            fine_train_ray(s, None, &skip, &r, &p, &mut sc, &mut rec)
                .unwrap()
                .total(&p.weights)
                * p.inv_batch
        };
        let mut dv = scene.density.values().to_vec();
        worst = worst.max(check_values(&mut dv, &gd, |v| {
            let mut s = scene.clone();
            s.density.values_mut().copy_from_slice(v);
            loss(&s)
        }));
        let mut fv = scene.feat.values().to_vec();
        worst = worst.max(check_values(&mut fv, &gf, |v| {
            let mut s = scene.clone();
            s.feat.values_mut().copy_from_slice(v);
            loss(&s)
        }));
        let mut mv = scene.mlp().unwrap().params().to_vec();
        worst = worst.max(check_values(&mut mv, &rec.d_mlp, |v| {
            let mut s = scene.clone();
            s.mlp_mut().unwrap().params_mut().copy_from_slice(v);
            loss(&s)
        }));
    }
    GradReport {
        name: "fine ray loss",
        instances,
        max_rel_err: worst,
        tol: 1e-3,
    }
}

pub fn run_all(instances: usize, seed: u64) -> Vec<GradReport> {
    vec![
        trilinear(instances, seed),
        softplus(instances, seed + 1),
        alpha(instances, seed + 2),
        composite_path(instances, seed + 3),
        mlp(instances, seed + 4),
        coarse_ray(instances, seed + 5),
        fine_ray(instances, seed + 6),
    ]
}
