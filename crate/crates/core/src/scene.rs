//! Coarse and fine scene representations and their point queries.
//!
//! The coarse scene pairs a density grid with a view-invariant colour grid
//! holding logits (colours are `sigmoid(interp)`). The fine scene pairs a
//! density grid with a feature grid decoded by a shallow MLP that also sees
//! the encoded position and view direction.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::DenseGrid;
use crate::math::{self, Vec3};
use crate::mlp::{Mlp, MlpWorkspace};
use crate::render::ActivationBias;

/// Length of the encoding of a 3-vector with `k` frequencies.
pub const fn posenc_len(k: usize) -> usize {
    3 + 6 * k
}

/// `[v, sin(v), cos(v), sin(2v), cos(2v), ..., sin(2^(k-1) v), cos(2^(k-1) v)]`.
pub fn positional_encoding(v: Vec3, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; posenc_len(k)];
    encode_into(v, k, &mut out);
    out
}

pub fn encode_into(v: Vec3, k: usize, out: &mut [f64]) {
    out[..3].copy_from_slice(&v);
    let mut freq = 1.0;
    for j in 0..k {
        let base = 3 + 6 * j;
        for a in 0..3 {
            let (s, c) = libm::sincos(freq * v[a]);
            out[base + a] = s;
            out[base + 3 + a] = c;
        }
        freq *= 2.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseScene {
    pub density: DenseGrid,
    pub rgb: DenseGrid,
    pub bias: ActivationBias,
    /// Sampling step along rays, in world units.
    pub step: f64,
}

impl CoarseScene {
    pub fn new(
        density: DenseGrid,
        rgb: DenseGrid,
        bias: ActivationBias,
        step: f64,
    ) -> Result<Self> {
        if density.channels() != 1 || rgb.channels() != 3 {
            return Err(invalid(
                "coarse scene needs a 1-channel density grid and a 3-channel colour grid",
            ));
        }
        if density.dims() != rgb.dims() || density.bbox() != rgb.bbox() {
            return Err(invalid(
                "coarse density and colour grids must share dims and bbox",
            ));
        }
        if !(step > 0.0) {
            return Err(invalid("step must be positive"));
        }
        Ok(Self {
            density,
            rgb,
            bias,
            step,
        })
    }

    /// `(raw density, colour)` at `x`.
    pub fn query(&self, x: Vec3) -> (f64, [f64; 3]) {
        let st = self.density.stencil(x);
        let raw = self.density.blend(&st, 0);
        let rgb = [0, 1, 2].map(|c| math::sigmoid(self.rgb.blend(&st, c)));
        (raw, rgb)
    }
}

/// How the fine stage turns interpolated features into colour.
#[derive(Debug, Clone, PartialEq)]
pub enum ColorHead {
    /// `sigmoid(MLP(feat, posenc(x), posenc(d)))`.
    Mlp(Mlp),
    /// View-independent: the feature grid holds 3 colour logits.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineScene {
    pub density: DenseGrid,
    pub feat: DenseGrid,
    pub head: ColorHead,
    pub bias: ActivationBias,
    pub step: f64,
    pub posenc_x: usize,
    pub posenc_d: usize,
}

impl FineScene {
    pub const DEFAULT_FEATURES: usize = 12;
    pub const DEFAULT_POSENC_X: usize = 5;
    pub const DEFAULT_POSENC_D: usize = 4;

    /// Input width of the colour MLP for `features` feature channels.
    pub fn mlp_input_dim(features: usize, posenc_x: usize, posenc_d: usize) -> usize {
        features + posenc_len(posenc_x) + posenc_len(posenc_d)
    }

    pub fn new(
        density: DenseGrid,
        feat: DenseGrid,
        head: ColorHead,
        bias: ActivationBias,
        step: f64,
        posenc_x: usize,
        posenc_d: usize,
    ) -> Result<Self> {
        if density.channels() != 1 {
            return Err(invalid("fine density grid must have one channel"));
        }
        if density.dims() != feat.dims() || density.bbox() != feat.bbox() {
            return Err(invalid(
                "fine density and feature grids must share dims and bbox",
            ));
        }
        match &head {
            ColorHead::Mlp(mlp) => {
                let want = Self::mlp_input_dim(feat.channels(), posenc_x, posenc_d);
                if mlp.input_dim() != want || mlp.output_dim() != 3 {
                    return Err(invalid(
                        "colour MLP shape does not chain from the feature grid to RGB",
                    ));
                }
            }
            ColorHead::Direct => {
                if feat.channels() != 3 {
                    return Err(invalid(
                        "a direct colour head needs a 3-channel feature grid",
                    ));
                }
            }
        }
        if !(step > 0.0) {
            return Err(invalid("step must be positive"));
        }
        Ok(Self {
            density,
            feat,
            head,
            bias,
            step,
            posenc_x,
            posenc_d,
        })
    }

    pub fn mlp(&self) -> Option<&Mlp> {
        match &self.head {
            ColorHead::Mlp(m) => Some(m),
            ColorHead::Direct => None,
        }
    }

    pub fn mlp_mut(&mut self) -> Option<&mut Mlp> {
        match &mut self.head {
            ColorHead::Mlp(m) => Some(m),
            ColorHead::Direct => None,
        }
    }

    /// Raw (pre-activation) density at `x`.
    pub fn raw_density(&self, x: Vec3) -> f64 {
        self.density.sample_scalar(x)
    }

    /// `(raw density, colour)` for a point seen along unit direction `d`.
    pub fn query(&self, x: Vec3, d: Vec3) -> (f64, [f64; 3]) {
        let mut q = FineQuery::new(self);
        q.set_direction(self, d);
        let raw = self.raw_density(x);
        (raw, q.color(self, x))
    }
}

/// Scratch state for evaluating fine colours along one ray; the direction
/// encoding is computed once per ray.
#[derive(Debug, Clone)]
pub struct FineQuery {
    pub(crate) input: Vec<f64>,
    pub(crate) ws: MlpWorkspace,
}

impl FineQuery {
    pub fn new(scene: &FineScene) -> Self {
        let n = FineScene::mlp_input_dim(scene.feat.channels(), scene.posenc_x, scene.posenc_d);
        Self {
            input: vec![0.0; n],
            ws: MlpWorkspace::default(),
        }
    }

    pub fn set_direction(&mut self, scene: &FineScene, d: Vec3) {
        let off = scene.feat.channels() + posenc_len(scene.posenc_x);
        encode_into(d, scene.posenc_d, &mut self.input[off..]);
    }

    /// Colour at `x`; leaves the MLP activations cached for a backward pass.
    pub fn color(&mut self, scene: &FineScene, x: Vec3) -> [f64; 3] {
        let st = scene.feat.stencil(x);
        let nf = scene.feat.channels();
        scene.feat.blend_into(&st, &mut self.input[..nf]);
        match &scene.head {
            ColorHead::Direct => [0, 1, 2].map(|c| math::sigmoid(self.input[c])),
            ColorHead::Mlp(mlp) => {
                encode_into(
                    x,
                    scene.posenc_x,
                    &mut self.input[nf..nf + posenc_len(scene.posenc_x)],
                );
                mlp.forward_unchecked(&self.input, &mut self.ws);
                let y = self.ws.output();
                [y[0], y[1], y[2]]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Bbox3;

    fn bbox() -> Bbox3 {
        Bbox3::new([-1.0; 3], [1.0; 3]).unwrap()
    }

    #[test]
    fn encoding_layout() {
        assert_eq!(positional_encoding([0.1, 0.2, 0.3], 0), [0.1, 0.2, 0.3]);
        let e = positional_encoding([0.0; 3], 3);
        assert_eq!(e.len(), 21);
        for j in 0..3 {
            assert!(e[3 + 6 * j..6 + 6 * j].iter().all(|&v| v == 0.0));
            assert!(e[6 + 6 * j..9 + 6 * j].iter().all(|&v| v == 1.0));
        }
        let e = positional_encoding([1.0, 0.0, 0.0], 2);
        assert_eq!(e.len(), 15);
        assert_eq!(e[3], libm::sin(1.0));
        assert_eq!(e[6], libm::cos(1.0));
        assert_eq!(e[9], libm::sin(2.0));
        assert_eq!(e[12], libm::cos(2.0));
    }

    #[test]
    fn zero_coarse_scene() {
        let s = CoarseScene::new(
            DenseGrid::zeros(1, [3, 3, 3], bbox()).unwrap(),
            DenseGrid::zeros(3, [3, 3, 3], bbox()).unwrap(),
            ActivationBias(0.0),
            0.1,
        )
        .unwrap();
        assert_eq!(s.query([0.3, -0.2, 0.9]), (0.0, [0.5; 3]));
    }

    #[test]
    fn coarse_scene_shape_checks() {
        let d = DenseGrid::zeros(1, [3, 3, 3], bbox()).unwrap();
        assert!(CoarseScene::new(
            d.clone(),
            DenseGrid::zeros(3, [3, 3, 4], bbox()).unwrap(),
            ActivationBias(0.0),
            0.1
        )
        .is_err());
        assert!(CoarseScene::new(
            d.clone(),
            DenseGrid::zeros(2, [3, 3, 3], bbox()).unwrap(),
            ActivationBias(0.0),
            0.1
        )
        .is_err());
    }

    #[test]
    fn zero_fine_scene_is_grey() {
        let mlp = Mlp::zeros(&[FineScene::mlp_input_dim(4, 2, 1), 8, 8, 3]).unwrap();
        let s = FineScene::new(
            DenseGrid::zeros(1, [2, 2, 2], bbox()).unwrap(),
            DenseGrid::zeros(4, [2, 2, 2], bbox()).unwrap(),
            ColorHead::Mlp(mlp),
            ActivationBias(0.0),
            0.1,
            2,
            1,
        )
        .unwrap();
        assert_eq!(s.query([0.1, 0.2, 0.3], [0.0, 0.0, 1.0]).1, [0.5; 3]);
        assert_eq!(s.query([-0.7, 0.2, 0.3], [1.0, 0.0, 0.0]).1, [0.5; 3]);
    }

    #[test]
    fn fine_scene_shape_checks() {
        let d = DenseGrid::zeros(1, [2, 2, 2], bbox()).unwrap();
        let f = DenseGrid::zeros(4, [2, 2, 2], bbox()).unwrap();
        let bad = Mlp::zeros(&[10, 8, 3]).unwrap();
        assert!(FineScene::new(
            d.clone(),
            f.clone(),
            ColorHead::Mlp(bad),
            ActivationBias(0.0),
            0.1,
            2,
            1
        )
        .is_err());
        assert!(FineScene::new(d, f, ColorHead::Direct, ActivationBias(0.0), 0.1, 2, 1).is_err());
    }

    #[test]
    fn view_direction_changes_colour() {
        let (nf, kx, kd) = (2, 1, 1);
        let n_in = FineScene::mlp_input_dim(nf, kx, kd);
        let mut mlp = Mlp::zeros(&[n_in, 4, 4, 3]).unwrap();
        // First raw direction component -> hidden 0 -> hidden 0 -> red.
        let d_slot = nf + posenc_len(kx);
        mlp.set_weight(0, d_slot, 0, 3.0);
        mlp.set_bias(0, 0, 1.0);
        mlp.set_weight(1, 0, 0, 1.0);
        mlp.set_weight(2, 0, 0, 1.0);
        let s = FineScene::new(
            DenseGrid::zeros(1, [2, 2, 2], bbox()).unwrap(),
            DenseGrid::zeros(nf, [2, 2, 2], bbox()).unwrap(),
            ColorHead::Mlp(mlp),
            ActivationBias(0.0),
            0.1,
            kx,
            kd,
        )
        .unwrap();
        let x = [0.2, 0.1, -0.3];
        let a = s.query(x, [1.0, 0.0, 0.0]).1;
        let b = s.query(x, [-1.0, 0.0, 0.0]).1;
        assert!((a[0] - math::sigmoid(4.0)).abs() < 1e-12);
        assert!((b[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn direct_head_reads_logits() {
        let mut f = DenseGrid::zeros(3, [2, 2, 2], bbox()).unwrap();
        f.values_mut()[8..16].iter_mut().for_each(|v| *v = 2.0);
        let s = FineScene::new(
            DenseGrid::zeros(1, [2, 2, 2], bbox()).unwrap(),
            f,
            ColorHead::Direct,
            ActivationBias(0.0),
            0.1,
            5,
            4,
        )
        .unwrap();
        assert_eq!(
            s.query([0.0; 3], [0.0, 0.0, 1.0]).1,
            [0.5, math::sigmoid(2.0), 0.5]
        );
    }
}
