//! Fully-connected encoder/decoder with hand-written reverse-mode gradients
//! and Adam.
//!
//! Batches are `width × batch` matrices (samples as columns). Gradients can
//! enter at the latent code and at the reconstruction simultaneously; the
//! decoder's input gradient is added to the latent gradient before the
//! encoder pass.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::io::{format_err, read_framed, write_framed, PayloadReader};
use crate::linalg::{gemm_into, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Affine map `out × in` followed by an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(mismatch(format!(
                "bias of length {} for a {}x{} weight",
                bias.len(),
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(Self { weight, bias, activation })
    }

    pub fn in_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_width(&self) -> usize {
        self.weight.rows()
    }

    fn apply(&self, input: &Matrix) -> Matrix {
        let n = input.cols();
        let mut out = Matrix::zeros(self.out_width(), n);
        for (r, &b) in self.bias.iter().enumerate() {
            out.row_mut(r).fill(b);
        }
        gemm_into(1.0, &self.weight, false, input, false, 1.0, &mut out);
        if self.activation == Activation::Relu {
            out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        out
    }
}

/// Gradient of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// A chain of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    version: u64,
}

/// Activations recorded by [`Mlp::forward_cached`]: the input followed by the
/// output of every layer.
#[derive(Debug, Clone)]
pub struct StackCache {
    version: u64,
    acts: Vec<Matrix>,
}

impl StackCache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("non-empty cache")
    }

    pub fn input(&self) -> &Matrix {
        &self.acts[0]
    }
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("an MLP needs at least one layer"));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_width() != w[1].in_width() {
                return Err(mismatch(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].out_width(),
                    i + 1,
                    w[1].in_width()
                )));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// He-initialized stack: `sd = sqrt(2 / fan_in)`, zero biases, ReLU on
    /// hidden layers and identity on the last.
    pub fn he_init(widths: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(invalid(format!("bad layer widths {widths:?}")));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let sd = (2.0 / w[0] as f64).sqrt();
                Layer {
                    weight: Matrix::random_normal(w[1], w[0], rng).scale(sd),
                    bias: vec![0.0; w[1]],
                    activation: if i == last { Activation::Identity } else { Activation::Relu },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().expect("non-empty").out_width()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.in_width()).chain(self.layers.iter().map(Layer::out_width)).collect()
    }

    /// Bumped by every parameter update; caches remember it.
    pub fn version(&self) -> u64 {
        self.version
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() != self.in_width() {
            return Err(mismatch(format!("input has {} rows, network expects {}", x.rows(), self.in_width())));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = self.layers[0].apply(x);
        for layer in &self.layers[1..] {
            h = layer.apply(&h);
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<StackCache> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = layer.apply(acts.last().expect("input pushed"));
            acts.push(next);
        }
        Ok(StackCache { version: self.version, acts })
    }

    /// Parameter gradients and the gradient at the input, given the upstream
    /// gradient at the output.
    pub fn backward(&self, cache: &StackCache, upstream: &Matrix) -> Result<(Vec<LayerGrad>, Matrix)> {
        if cache.version != self.version || cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::StaleCache { cached: cache.version, current: self.version });
        }
        if upstream.shape() != cache.output().shape() {
            return Err(mismatch(format!(
                "upstream gradient {:?} vs output {:?}",
                upstream.shape(),
                cache.output().shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                let out = &cache.acts[l + 1];
                g.as_mut_slice()
                    .iter_mut()
                    .zip(out.as_slice())
                    .for_each(|(gv, &o)| {
                        if o <= 0.0 {
                            *gv = 0.0;
                        }
                    });
            }
            let input = &cache.acts[l];
            let mut dw = Matrix::zeros(layer.out_width(), layer.in_width());
            gemm_into(1.0, &g, false, input, true, 0.0, &mut dw);
            let db: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
            let mut g_in = Matrix::zeros(layer.in_width(), g.cols());
            gemm_into(1.0, &layer.weight, true, &g, false, 0.0, &mut g_in);
            grads.push(LayerGrad { weight: dw, bias: db });
            g = g_in;
        }
        grads.reverse();
        Ok((grads, g))
    }

    pub fn zero_grads(&self) -> Vec<LayerGrad> {
        self.layers
            .iter()
            .map(|l| LayerGrad { weight: Matrix::zeros(l.out_width(), l.in_width()), bias: vec![0.0; l.out_width()] })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.rows() * l.weight.cols() + l.bias.len()).sum()
    }

    /// Parameter slices in declaration order (weight, bias per layer).
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }

    /// Mutable parameter slices; invalidates existing caches.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

pub(crate) fn grad_slices(grads: &[LayerGrad]) -> impl Iterator<Item = &[f64]> {
    grads.iter().flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()])
}

/// Encoder and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub seed: u64,
}

/// Gradients for every parameter of an [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<LayerGrad>,
    pub decoder: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self { encoder: model.encoder.zero_grads(), decoder: model.decoder.zero_grads() }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        grad_slices(&self.encoder).chain(grad_slices(&self.decoder)).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    /// `self += other`, for gradients of the same model.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.encoder.iter_mut().chain(&mut self.decoder).zip(other.encoder.iter().chain(&other.decoder)) {
            a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }
}

/// Forward activations of both halves.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub encoder: StackCache,
    pub decoder: StackCache,
}

impl ForwardCache {
    pub fn z(&self) -> &Matrix {
        self.encoder.output()
    }

    pub fn xhat(&self) -> &Matrix {
        self.decoder.output()
    }
}

/// He-initialized autoencoder. `enc_widths` runs from the input width to the
/// latent width, `dec_widths` from the latent width back to the input width.
pub fn init_model(enc_widths: &[usize], dec_widths: &[usize], seed: u64) -> Result<MlpModel> {
    check_chain(enc_widths, dec_widths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Mlp::he_init(enc_widths, &mut rng)?;
    let decoder = Mlp::he_init(dec_widths, &mut rng)?;
    Ok(MlpModel { encoder, decoder, seed })
}

fn check_chain(enc: &[usize], dec: &[usize]) -> Result<()> {
    if enc.len() < 2 || dec.len() < 2 {
        return Err(invalid("encoder and decoder need at least input and output widths"));
    }
    if enc.last() != dec.first() {
        return Err(mismatch(format!("encoder ends at {:?}, decoder starts at {:?}", enc.last(), dec.first())));
    }
    if enc.first() != dec.last() {
        return Err(mismatch(format!("encoder input {:?} vs decoder output {:?}", enc.first(), dec.last())));
    }
    Ok(())
}

impl MlpModel {
    /// Assembles a model from explicit stacks; the final layer of each must
    /// be linear.
    pub fn from_parts(encoder: Mlp, decoder: Mlp, seed: u64) -> Result<Self> {
        check_chain(&encoder.widths(), &decoder.widths())?;
        for half in [&encoder, &decoder] {
            if half.layers.last().map(|l| l.activation) != Some(Activation::Identity) {
                return Err(invalid("final encoder and decoder layers must be linear"));
            }
        }
        Ok(Self { encoder, decoder, seed })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_width()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_width()
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.encoder.forward(x)
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.forward(z)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let z = self.encode(x)?;
        let xhat = self.decode(&z)?;
        Ok((z, xhat))
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        let encoder = self.encoder.forward_cached(x)?;
        let decoder = self.decoder.forward_cached(encoder.output())?;
        Ok(ForwardCache { encoder, decoder })
    }

    /// Reverse pass with optional upstream gradients at `Z` and `X̂`. The
    /// decoder's input gradient is summed with `grad_z` before the encoder.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_z: Option<&Matrix>,
        grad_xhat: Option<&Matrix>,
    ) -> Result<Gradients> {
        let (decoder, through_decoder) = match grad_xhat {
            Some(g) => {
                let (grads, g_in) = self.decoder.backward(&cache.decoder, g)?;
                (grads, Some(g_in))
            }
            None => {
                if cache.decoder.version != self.decoder.version() {
                    return Err(Error::StaleCache { cached: cache.decoder.version, current: self.decoder.version() });
                }
                (self.decoder.zero_grads(), None)
            }
        };
        let gz = match (through_decoder, grad_z) {
            (Some(a), Some(b)) => a.add(b)?,
            (Some(a), None) => a,
            (None, Some(b)) => b.clone(),
            (None, None) => Matrix::zeros(self.latent_dim(), cache.z().cols()),
        };
        if gz.shape() != cache.z().shape() {
            return Err(mismatch("latent gradient shape"));
        }
        let (encoder, _) = self.encoder.backward(&cache.encoder, &gz)?;
        Ok(Gradients { encoder, decoder })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params().concat()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(mismatch(format!("{} values for {} parameters", values.len(), self.param_count())));
        }
        let mut offset = 0;
        for slot in self.params_mut() {
            slot.copy_from_slice(&values[offset..offset + slot.len()]);
            offset += slot.len();
        }
        Ok(())
    }
}

/// Adam moments and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments congruent to `params`, with β₁ = 0.9, β₂ = 0.999,
    /// ε = 1e-8.
    pub fn new(params: &[&[f64]], lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn for_model(model: &MlpModel, lr: f64) -> Self {
        Self::new(&model.params(), lr)
    }

    /// One bias-corrected Adam update of `params` from `grads`.
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(mismatch("parameter/gradient/moment tensor counts differ"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(mismatch("parameter/gradient/moment tensor sizes differ"));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Adam step on every parameter of the model.
pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let g = grads.slices();
    state.update(model.params_mut(), &g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub encoder_activations: Vec<Activation>,
    pub decoder_activations: Vec<Activation>,
    pub seed: u64,
    pub epoch: usize,
    pub param_count: usize,
}

const CKPT_FORMAT: &str = "pcae-checkpoint";

impl MlpModel {
    /// Writes a `.ckpt`: JSON manifest line, then all parameters as
    /// little-endian `f64` in declaration order.
    pub fn save(&self, path: &Path, epoch: usize) -> Result<()> {
        let meta = CheckpointMeta {
            format: CKPT_FORMAT.into(),
            version: 1,
            encoder_widths: self.encoder.widths(),
            decoder_widths: self.decoder.widths(),
            encoder_activations: self.encoder.layers.iter().map(|l| l.activation).collect(),
            decoder_activations: self.decoder.layers.iter().map(|l| l.activation).collect(),
            seed: self.seed,
            epoch,
            param_count: self.param_count(),
        };
        let payload: Vec<u8> = self.params().iter().flat_map(|s| s.iter()).flat_map(|v| v.to_le_bytes()).collect();
        write_framed(path, &meta, &payload)
    }

    pub fn load(path: &Path) -> Result<(MlpModel, CheckpointMeta)> {
        let (meta, payload): (CheckpointMeta, _) = read_framed(path)?;
        if meta.format != CKPT_FORMAT || meta.version != 1 {
            return Err(format_err(path, "not a version-1 checkpoint"));
        }
        let stack = |widths: &[usize], acts: &[Activation]| -> Result<Mlp> {
            if widths.len() != acts.len() + 1 {
                return Err(format_err(path, "widths and activations disagree"));
            }
            let layers = widths
                .windows(2)
                .zip(acts)
                .map(|(w, &a)| Layer { weight: Matrix::zeros(w[1], w[0]), bias: vec![0.0; w[1]], activation: a })
                .collect();
            Mlp::new(layers)
        };
        let encoder = stack(&meta.encoder_widths, &meta.encoder_activations)?;
        let decoder = stack(&meta.decoder_widths, &meta.decoder_activations)?;
        let mut model = MlpModel::from_parts(encoder, decoder, meta.seed)?;
        if model.param_count() != meta.param_count {
            return Err(format_err(path, "parameter count does not match layer shapes"));
        }
        let mut rd = PayloadReader::new(&payload);
        let mut values = Vec::with_capacity(meta.param_count);
        for _ in 0..meta.param_count {
            let v = rd.f64().ok_or_else(|| format_err(path, "truncated parameter blob"))?;
            if !v.is_finite() {
                return Err(format_err(path, "non-finite parameter"));
            }
            values.push(v);
        }
        if !rd.is_empty() {
            return Err(format_err(path, "trailing bytes"));
        }
        model.set_flat(&values)?;
        Ok((model, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear_layer(w: Matrix) -> Layer {
        let rows = w.rows();
        Layer::new(w, vec![0.0; rows], Activation::Identity).unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let m = init_model(&[3, 8, 2], &[2, 8, 3], 5).unwrap();
        assert_eq!(m.latent_dim(), 2);
        assert_eq!(m.encoder.layers[0].activation, Activation::Relu);
        assert_eq!(m.encoder.layers[1].activation, Activation::Identity);
        assert_eq!(m.decoder.layers[1].activation, Activation::Identity);
        assert_eq!(m, init_model(&[3, 8, 2], &[2, 8, 3], 5).unwrap());
        assert_ne!(m.flatten(), init_model(&[3, 8, 2], &[2, 8, 3], 6).unwrap().flatten());
        assert!(init_model(&[3, 8, 2], &[3, 8, 3], 5).is_err());
        assert!(init_model(&[3, 8, 2], &[2, 8, 4], 5).is_err());
    }

    #[test]
    fn he_init_spread() {
        let m = init_model(&[256, 256, 4], &[4, 3, 256], 1).unwrap();
        let w = m.encoder.layers[0].weight.as_slice();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64).sqrt();
        let want = (2.0 / 256.0_f64).sqrt();
        assert!((sd - want).abs() / want < 0.2);
        assert!(m.encoder.layers[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_and_identity_models() {
        let zero = MlpModel::from_parts(
            Mlp::new(vec![linear_layer(Matrix::zeros(2, 3))]).unwrap(),
            Mlp::new(vec![linear_layer(Matrix::zeros(3, 2))]).unwrap(),
            0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::random_normal(3, 7, &mut rng);
        let (z, xhat) = zero.forward(&x).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        assert_eq!(xhat.max_abs(), 0.0);

        let id = MlpModel::from_parts(
            Mlp::new(vec![linear_layer(Matrix::identity(3))]).unwrap(),
            Mlp::new(vec![linear_layer(Matrix::identity(3))]).unwrap(),
            0,
        )
        .unwrap();
        assert_eq!(id.encode(&x).unwrap(), x);
        assert!(id.encode(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn random_model_outputs_are_finite_and_pure() {
        let m = init_model(&[5, 16, 16, 3], &[3, 16, 5], 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::random_normal(5, 40, &mut rng).scale(10.0);
        let (z, xhat) = m.forward(&x).unwrap();
        assert!(z.is_finite() && xhat.is_finite());
        let (z2, xhat2) = m.forward(&x).unwrap();
        assert_eq!(z.as_slice(), z2.as_slice());
        assert_eq!(xhat.as_slice(), xhat2.as_slice());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let m = init_model(&[4, 6, 2], &[2, 6, 4], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::random_normal(4, 9, &mut rng);
        let cache = m.forward_cached(&x).unwrap();
        let g = m.backward(&cache, None, None).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        let gz = Matrix::zeros(2, 9);
        let gx = Matrix::zeros(4, 9);
        let g = m.backward(&cache, Some(&gz), Some(&gx)).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_matches_closed_form() {
        // L = (1/n)‖WX − Y‖², dL/dW = 2(WX − Y)Xᵀ/n
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, q, n) = (3, 2, 11);
        let w = Matrix::random_normal(q, p, &mut rng);
        let x = Matrix::random_normal(p, n, &mut rng);
        let y = Matrix::random_normal(q, n, &mut rng);
        let enc = Mlp::new(vec![linear_layer(w.clone())]).unwrap();
        let cache = enc.forward_cached(&x).unwrap();
        let resid = cache.output().sub(&y).unwrap();
        let upstream = resid.scale(2.0 / n as f64);
        let (grads, _) = enc.backward(&cache, &upstream).unwrap();
        let closed = resid.matmul_t(&x).unwrap().scale(2.0 / n as f64);
        assert!(grads[0].weight.sub(&closed).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = init_model(&[3, 4, 2], &[2, 4, 3], 1).unwrap();
        let x = Matrix::random_normal(3, 5, &mut ChaCha8Rng::seed_from_u64(1));
        let cache = m.forward_cached(&x).unwrap();
        let grads = m.backward(&cache, Some(&Matrix::zeros(2, 5)), None).unwrap();
        let mut adam = AdamState::for_model(&m, 1e-3);
        adam_step(&mut m, &grads, &mut adam).unwrap();
        assert!(matches!(
            m.backward(&cache, Some(&Matrix::zeros(2, 5)), None),
            Err(Error::StaleCache { .. })
        ));
    }

    #[test]
    fn adam_zero_grads_leave_parameters() {
        let mut m = init_model(&[3, 4, 2], &[2, 4, 3], 1).unwrap();
        let before = m.flatten();
        let mut adam = AdamState::for_model(&m, 1e-2);
        let zeros = Gradients::zeros_like(&m);
        adam_step(&mut m, &zeros, &mut adam).unwrap();
        assert_eq!(before, m.flatten());
    }

    #[test]
    fn adam_constant_gradient_steps_approach_lr() {
        let mut p = vec![0.0, 0.0];
        let g = [3.0, -0.01];
        let mut adam = AdamState::new(&[&p], 1e-3);
        let mut prev = p.clone();
        for _ in 0..200 {
            prev.copy_from_slice(&p);
            adam.update(vec![&mut p], &[&g]).unwrap();
        }
        for i in 0..2 {
            let step = p[i] - prev[i];
            assert!((step + 1e-3 * g[i].signum()).abs() < 1e-6, "step {step}");
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic_bowl() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let target: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let scales = [1.0, 2.0, 0.5, 4.0, 1.5];
        let mut x = vec![0.0; 5];
        let mut adam = AdamState::new(&[&x], 0.05);
        let loss = |x: &[f64]| -> f64 { (0..5).map(|i| scales[i] * (x[i] - target[i]).powi(2)).sum() };
        for _ in 0..2000 {
            let g: Vec<f64> = (0..5).map(|i| 2.0 * scales[i] * (x[i] - target[i])).collect();
            adam.update(vec![&mut x], &[&g]).unwrap();
        }
        assert!(loss(&x) < 1e-6, "loss {}", loss(&x));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = init_model(&[3, 5, 2], &[2, 5, 3], 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path, 12).unwrap();
        let (back, meta) = MlpModel::load(&path).unwrap();
        assert_eq!(meta.epoch, 12);
        assert_eq!(back.flatten(), m.flatten());
        assert_eq!(back.encoder.widths(), vec![3, 5, 2]);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(MlpModel::load(&path).is_err());
    }
}
