//! A small fully connected network: ReLU hidden layers and a sigmoid output.
//!
//! All parameters live in one flat buffer so the optimizer can treat the
//! network as a single parameter group. Layer `l` maps `dims[l]` inputs to
//! `dims[l + 1]` outputs; its weight block is stored input-major
//! (`w[i * out + o]`), followed by `out` biases.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, invalid, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Cached activations of one forward pass, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct MlpWorkspace {
    acts: Vec<Vec<f64>>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl MlpWorkspace {
    /// Output of the last forward pass (empty before the first one).
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], |v| v.as_slice())
    }
}

/// Row-major activations of a batch of inputs (`rows x width` per layer).
#[derive(Debug, Clone, Default)]
pub struct MlpBatch {
    rows: usize,
    acts: Vec<Vec<f64>>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl MlpBatch {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Outputs of the last forward pass, `rows x output_dim`.
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], |v| v.as_slice())
    }
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(invalid(
                "an MLP needs at least an input and an output layer, all non-empty",
            ));
        }
        let n = Self::param_count(dims);
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Uniform `+-sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn glorot(dims: &[usize], seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..mlp.num_layers() {
            let (fan_in, fan_out) = (mlp.dims[l], mlp.dims[l + 1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let (w, _) = mlp.layer_offsets(l);
            for p in &mut mlp.params[w..w + fan_in * fan_out] {
                *p = rng.gen_range(-limit..limit);
            }
        }
        Ok(mlp)
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(dims)?;
        check_len(mlp.params.len(), params.len())?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(invalid("MLP parameters must be finite"));
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(weight offset, bias offset)` of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let w = Self::param_count(&self.dims[..=l]);
        (w, w + self.dims[l] * self.dims[l + 1])
    }

    pub fn weight(&self, layer: usize, input: usize, output: usize) -> f64 {
        let (w, _) = self.layer_offsets(layer);
        self.params[w + input * self.dims[layer + 1] + output]
    }

    pub fn set_weight(&mut self, layer: usize, input: usize, output: usize, v: f64) {
        let (w, _) = self.layer_offsets(layer);
        let out = self.dims[layer + 1];
        self.params[w + input * out + output] = v;
    }

    pub fn set_bias(&mut self, layer: usize, output: usize, v: f64) {
        let (_, b) = self.layer_offsets(layer);
        self.params[b + output] = v;
    }

    /// Forward pass; the returned slice is the sigmoid output and stays valid
    /// until the workspace is reused.
    pub fn forward<'w>(&self, input: &[f64], ws: &'w mut MlpWorkspace) -> Result<&'w [f64]> {
        check_len(self.input_dim(), input.len())?;
        self.forward_unchecked(input, ws);
        Ok(ws.acts.last().unwrap())
    }

    /// Sizes `batch` for `rows` inputs and returns the input matrix
    /// (`rows x input_dim`, row-major) to fill before [`Mlp::forward_batch`].
    pub fn batch_input<'w>(&self, rows: usize, batch: &'w mut MlpBatch) -> &'w mut [f64] {
        batch.rows = rows;
        batch.acts.resize_with(self.dims.len(), Vec::new);
        for (a, &d) in batch.acts.iter_mut().zip(&self.dims) {
            a.resize(rows * d, 0.0);
        }
        &mut batch.acts[0]
    }

    /// Forward pass over every row of the batch input. Each row gives the
    /// same result as [`Mlp::forward`] on that row.
    pub fn forward_batch(&self, batch: &mut MlpBatch) {
        let rows = batch.rows;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (wo, bo) = self.layer_offsets(l);
            let w = &self.params[wo..wo + n_in * n_out];
            let bias = &self.params[bo..bo + n_out];
            let (prev, next) = batch.acts.split_at_mut(l + 1);
            let (x, h) = (&prev[l], &mut next[0]);
            let mut r = 0;
            while r + 4 <= rows {
                let block = &mut h[r * n_out..(r + 4) * n_out];
                let (h0, rest) = block.split_at_mut(n_out);
                let (h1, rest) = rest.split_at_mut(n_out);
                let (h2, h3) = rest.split_at_mut(n_out);
                for hr in [&mut *h0, &mut *h1, &mut *h2, &mut *h3] {
                    hr.copy_from_slice(bias);
                }
                for i in 0..n_in {
                    let a = [0, 1, 2, 3].map(|k| x[(r + k) * n_in + i]);
                    let wr = &w[i * n_out..(i + 1) * n_out];
                    for ((((o0, o1), o2), o3), &wv) in h0
                        .iter_mut()
                        .zip(h1.iter_mut())
                        .zip(h2.iter_mut())
                        .zip(h3.iter_mut())
                        .zip(wr)
                    {
                        *o0 += a[0] * wv;
                        *o1 += a[1] * wv;
                        *o2 += a[2] * wv;
                        *o3 += a[3] * wv;
                    }
                }
                r += 4;
            }
            for r in r..rows {
                let hr = &mut h[r * n_out..(r + 1) * n_out];
                hr.copy_from_slice(bias);
                for (i, &xi) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
                    for (hv, wv) in hr.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                        *hv += xi * wv;
                    }
                }
            }
            if l + 1 < self.num_layers() {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                h.iter_mut().for_each(|v| *v = math::sigmoid(*v));
            }
        }
    }

    /// Reverse pass for the batch cached by [`Mlp::forward_batch`].
    ///
    /// `d_out` holds one output gradient row per input row. Parameter
    /// gradients of all rows are added into `grad_params`; the gradient on the
    /// first `k` inputs of every row is written into `d_input` (`rows x k`).
    pub fn backward_batch(
        &self,
        batch: &mut MlpBatch,
        d_out: &[f64],
        grad_params: &mut [f64],
        k: usize,
        d_input: &mut [f64],
    ) -> Result<()> {
        let rows = batch.rows;
        check_len(rows * self.output_dim(), d_out.len())?;
        check_len(self.params.len(), grad_params.len())?;
        check_len(rows * k, d_input.len())?;
        if k > self.input_dim() || batch.acts.len() != self.dims.len() {
            return Err(invalid("batch does not match this network"));
        }
        let layers = self.num_layers();
        let MlpBatch {
            acts,
            grad_a,
            grad_b,
            ..
        } = batch;
        grad_a.clear();
        grad_a.extend(
            d_out
                .iter()
                .zip(&acts[layers])
                .map(|(g, y)| g * y * (1.0 - y)),
        );
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (wo, bo) = self.layer_offsets(l);
            let x = &acts[l];
            let g = &grad_a[..rows * n_out];
            for gr in g.chunks_exact(n_out) {
                for (gb, gv) in grad_params[bo..bo + n_out].iter_mut().zip(gr) {
                    *gb += gv;
                }
            }
            let gw = &mut grad_params[wo..wo + n_in * n_out];
            for i in 0..n_in {
                let gwr = &mut gw[i * n_out..(i + 1) * n_out];
                let mut r = 0;
                while r + 4 <= rows {
                    let a = [0, 1, 2, 3].map(|k| x[(r + k) * n_in + i]);
                    if a != [0.0; 4] {
                        let gs = [0, 1, 2, 3].map(|k| &g[(r + k) * n_out..(r + k + 1) * n_out]);
                        for ((((gwv, g0), g1), g2), g3) in
                            gwr.iter_mut().zip(gs[0]).zip(gs[1]).zip(gs[2]).zip(gs[3])
                        {
                            *gwv += a[0] * g0 + a[1] * g1 + a[2] * g2 + a[3] * g3;
                        }
                    }
                    r += 4;
                }
                for r in r..rows {
                    let xi = x[r * n_in + i];
                    if xi != 0.0 {
                        for (gwv, gv) in gwr.iter_mut().zip(&g[r * n_out..(r + 1) * n_out]) {
                            *gwv += xi * gv;
                        }
                    }
                }
            }
            let w = &self.params[wo..wo + n_in * n_out];
            let need = if l == 0 { k } else { n_in };
            grad_b.clear();
            grad_b.resize(rows * need, 0.0);
            for r in 0..rows {
                let gr = &g[r * n_out..(r + 1) * n_out];
                for i in 0..need {
                    grad_b[r * need + i] = dot(&w[i * n_out..(i + 1) * n_out], gr);
                }
            }
            if l == 0 {
                d_input.copy_from_slice(grad_b);
            } else {
                for (gv, &xv) in grad_b.iter_mut().zip(x.iter()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                core::mem::swap(grad_a, grad_b);
            }
        }
        Ok(())
    }

    pub(crate) fn forward_unchecked(&self, input: &[f64], ws: &mut MlpWorkspace) {
        let layers = self.num_layers();
        if ws.acts.len() != layers + 1 {
            ws.acts = self.dims.iter().map(|&d| vec![0.0; d]).collect();
        }
        ws.acts[0].copy_from_slice(input);
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (wo, bo) = self.layer_offsets(l);
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let h = &mut next[0];
            h.copy_from_slice(&self.params[bo..bo + n_out]);
            let w = &self.params[wo..wo + n_in * n_out];
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let col = &w[i * n_out..(i + 1) * n_out];
                for (hv, wv) in h.iter_mut().zip(col) {
                    *hv += xi * wv;
                }
            }
            if l + 1 < layers {
                for v in h.iter_mut() {
                    *v = v.max(0.0);
                }
            } else {
                for v in h.iter_mut() {
                    *v = math::sigmoid(*v);
                }
            }
        }
    }

    /// Reverse pass for the activations cached in `ws`.
    ///
    /// `d_out` is the gradient on the sigmoid output. Parameter gradients are
    /// added into `grad_params`; the gradient on the first `d_input.len()`
    /// inputs is written into `d_input`.
    pub fn backward(
        &self,
        ws: &mut MlpWorkspace,
        d_out: &[f64],
        grad_params: &mut [f64],
        d_input: &mut [f64],
    ) -> Result<()> {
        check_len(self.output_dim(), d_out.len())?;
        check_len(self.params.len(), grad_params.len())?;
        if d_input.len() > self.input_dim() || ws.acts.len() != self.dims.len() {
            return Err(invalid(
                "workspace or input gradient does not match this network",
            ));
        }
        self.backward_unchecked(ws, d_out, grad_params, d_input);
        Ok(())
    }

    pub(crate) fn backward_unchecked(
        &self,
        ws: &mut MlpWorkspace,
        d_out: &[f64],
        grad_params: &mut [f64],
        d_input: &mut [f64],
    ) {
        let layers = self.num_layers();
        let MlpWorkspace {
            acts,
            grad_a,
            grad_b,
        } = ws;
        // Gradient on the pre-activation of the current layer.
        grad_a.clear();
        grad_a.extend(
            d_out
                .iter()
                .zip(&acts[layers])
                .map(|(g, y)| g * y * (1.0 - y)),
        );
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (wo, bo) = self.layer_offsets(l);
            let x = &acts[l];
            let g = &grad_a[..n_out];
            for (gb, gv) in grad_params[bo..bo + n_out].iter_mut().zip(g) {
                *gb += gv;
            }
            let gw = &mut grad_params[wo..wo + n_in * n_out];
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (gwv, gv) in gw[i * n_out..(i + 1) * n_out].iter_mut().zip(g) {
                    *gwv += xi * gv;
                }
            }
            let w = &self.params[wo..wo + n_in * n_out];
            let need = if l == 0 { d_input.len() } else { n_in };
            grad_b.clear();
            grad_b.extend((0..need).map(|i| dot(&w[i * n_out..(i + 1) * n_out], g)));
            if l == 0 {
                d_input.copy_from_slice(&grad_b[..need]);
            } else {
                // ReLU mask from the cached post-activation.
                for (gv, &xv) in grad_b.iter_mut().zip(x.iter()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                core::mem::swap(grad_a, grad_b);
            }
        }
    }
}

/// Dot product with independent accumulators so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[c * 4 + k] * b[c * 4 + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}
