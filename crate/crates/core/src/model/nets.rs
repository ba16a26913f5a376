use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{to_batch, ImageTensor};
use crate::numerics::{Checkpoint, Element, Graph, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const ENCODER_CHANNELS: [usize; 4] = [32, 64, 128, 256];
pub const PERCEPTUAL_CHANNELS: [usize; 3] = [16, 32, 64];
pub const PIXEL_WEIGHT: f64 = 0.1;
/// Encoding batches are chunked to bound memory.
const ENCODE_CHUNK: usize = 256;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T: Element = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> Params<T> {
    fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    fn push(&mut self, name: String, t: Tensor<T>) {
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Records every tensor on `g`, trainable or frozen.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect()
    }

    pub fn cast<U: Element>(&self) -> Params<U> {
        Params { names: self.names.clone(), tensors: self.tensors.iter().map(|t| t.cast()).collect() }
    }

    fn entries(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.names.iter().zip(&self.tensors).map(|(n, t)| (format!("{prefix}.{n}"), t.cast())).collect()
    }

    fn restore(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let key = format!("{prefix}.{name}");
            let stored = ckpt.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if stored.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {key} has shape {:?}, expected {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            *t = stored.cast();
        }
        Ok(())
    }
}

fn he_normal<T: Element>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
}

fn conv_layer<T: Element>(p: &mut Params<T>, name: &str, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) {
    p.push(format!("{name}.w"), he_normal(&[c_out, c_in, 3, 3], c_in * 9, rng));
    p.push(format!("{name}.b"), Tensor::zeros(&[c_out]));
}

fn linear_layer<T: Element>(p: &mut Params<T>, name: &str, n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) {
    p.push(format!("{name}.w"), he_normal(&[n_in, n_out], n_in, rng));
    p.push(format!("{name}.b"), Tensor::zeros(&[n_out]));
}

fn check_size(image_size: usize) -> Result<()> {
    if image_size == 0 || image_size % 16 != 0 {
        return Err(Error::InvalidArgument(format!("image size {image_size} must be a positive multiple of 16")));
    }
    Ok(())
}

/// Maps `[0,1]` pixels to `[-1,1]` network inputs.
pub fn network_input<T: Element>(images: &[&ImageTensor]) -> Result<Tensor<T>> {
    Ok(to_batch(images)?.map(|v| v * 2.0 - 1.0).cast())
}

/// Four stride-2 conv blocks, a linear head and l2-normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T: Element = f32> {
    image_size: usize,
    code_dim: usize,
    params: Params<T>,
}

impl<T: Element> Encoder<T> {
    pub fn new(image_size: usize, code_dim: usize, seed: u64) -> Result<Self> {
        check_size(image_size)?;
        if code_dim == 0 {
            return Err(Error::InvalidArgument("code dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let mut c_in = 3;
        for (i, &c) in ENCODER_CHANNELS.iter().enumerate() {
            conv_layer(&mut params, &format!("conv{}", i + 1), c_in, c, &mut rng);
            c_in = c;
        }
        let side = image_size / 16;
        linear_layer(&mut params, "head", c_in * side * side, code_dim, &mut rng);
        Ok(Self { image_size, code_dim, params })
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn cast<U: Element>(&self) -> Encoder<U> {
        Encoder { image_size: self.image_size, code_dim: self.code_dim, params: self.params.cast() }
    }

    /// `x` is `[B,3,S,S]` in network-input range; returns unit rows `[B,d]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] != self.image_size || s[3] != self.image_size {
            return Err(Error::Shape(format!(
                "encoder expects [B,3,{0},{0}] input, got {s:?}",
                self.image_size
            )));
        }
        let mut h = x;
        for layer in 0..ENCODER_CHANNELS.len() {
            h = g.conv2d(h, p[2 * layer], 2, 1)?;
            h = g.add_bias(h, p[2 * layer + 1])?;
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
        let flat: usize = g.shape(h)[1..].iter().product();
        h = g.reshape(h, &[s[0], flat])?;
        let k = 2 * ENCODER_CHANNELS.len();
        h = g.matmul(h, p[k])?;
        h = g.add_bias(h, p[k + 1])?;
        g.l2_normalize(h, 1)
    }

    /// Eval-mode codes `[B,d]` for a batch of images.
    pub fn encode(&self, images: &[&ImageTensor]) -> Result<Tensor<T>> {
        if images.is_empty() {
            return Err(Error::Empty("encode: no images".into()));
        }
        let mut data = Vec::with_capacity(images.len() * self.code_dim);
        for chunk in images.chunks(ENCODE_CHUNK) {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let x = g.constant(network_input(chunk)?);
            let z = self.forward(&mut g, &p, x)?;
            data.extend_from_slice(g.value(z).data());
        }
        Tensor::new(&[images.len(), self.code_dim], data)
    }

    pub fn checkpoint_entries(&self) -> Vec<(String, Tensor<f32>)> {
        self.params.entries("encoder")
    }

    /// Rebuilds an encoder from checkpoint tensors; geometry is read from shapes.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let head = ckpt.get("encoder.head.w").ok_or_else(|| Error::Checkpoint("missing tensor encoder.head.w".into()))?;
        let (flat, code_dim) = (head.shape()[0], head.shape()[1]);
        let last = ENCODER_CHANNELS[ENCODER_CHANNELS.len() - 1];
        let side = ((flat / last) as f64).sqrt().round() as usize;
        if side * side * last != flat {
            return Err(Error::Checkpoint(format!("encoder head input {flat} is not {last} x side^2")));
        }
        let mut enc = Self::new(side * 16, code_dim, 0)?;
        enc.params.restore(ckpt, "encoder")?;
        Ok(enc)
    }
}

/// Conditional decoder: `concat(code, one-hot nuisance)` -> linear ->
/// `[width, S/16, S/16]` -> four upsample+conv blocks halving the width,
/// the last producing 3 sigmoid channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T: Element = f32> {
    image_size: usize,
    code_dim: usize,
    domains: usize,
    width: usize,
    params: Params<T>,
}

impl<T: Element> Generator<T> {
    pub fn new(image_size: usize, code_dim: usize, domains: usize, width: usize, seed: u64) -> Result<Self> {
        check_size(image_size)?;
        if domains == 0 || width < 8 || width % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "generator needs at least one domain and a width divisible by 8 (got {domains}, {width})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let side = image_size / 16;
        linear_layer(&mut params, "fc", code_dim + domains, width * side * side, &mut rng);
        let mut c_in = width;
        for (i, c) in Self::block_channels(width).into_iter().enumerate() {
            conv_layer(&mut params, &format!("up{}", i + 1), c_in, c, &mut rng);
            c_in = c;
        }
        Ok(Self { image_size, code_dim, domains, width, params })
    }

    fn block_channels(width: usize) -> [usize; 4] {
        [width / 2, width / 4, width / 8, 3]
    }

    pub fn domains(&self) -> usize {
        self.domains
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn cast<U: Element>(&self) -> Generator<U> {
        Generator {
            image_size: self.image_size,
            code_dim: self.code_dim,
            domains: self.domains,
            width: self.width,
            params: self.params.cast(),
        }
    }

    pub fn one_hot(&self, nuisance: &[usize]) -> Result<Tensor<T>> {
        if let Some(&bad) = nuisance.iter().find(|&&n| n >= self.domains) {
            return Err(Error::InvalidArgument(format!(
                "nuisance label {bad} out of range for {} domains",
                self.domains
            )));
        }
        let d = self.domains;
        Ok(Tensor::from_fn(&[nuisance.len(), d], |i| if nuisance[i / d] == i % d { T::one() } else { T::zero() }))
    }

    /// Reconstructs `[B,3,S,S]` images in `[0,1]` from codes `[B,d]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], codes: Var, nuisance: &[usize]) -> Result<Var> {
        let b = g.shape(codes)[0];
        if b != nuisance.len() || g.shape(codes)[1] != self.code_dim {
            return Err(Error::Shape(format!(
                "generator: codes {:?} with {} nuisance labels, code dim {}",
                g.shape(codes),
                nuisance.len(),
                self.code_dim
            )));
        }
        let hot = g.constant(self.one_hot(nuisance)?);
        let mut h = g.concat(&[codes, hot], 1)?;
        h = g.matmul(h, p[0])?;
        h = g.add_bias(h, p[1])?;
        let side = self.image_size / 16;
        h = g.reshape(h, &[b, self.width, side, side])?;
        h = g.leaky_relu(h, LEAKY_SLOPE);
        for block in 0..4 {
            h = g.upsample2x(h)?;
            h = g.conv2d(h, p[2 + 2 * block], 1, 1)?;
            h = g.add_bias(h, p[3 + 2 * block])?;
            h = if block == 3 { g.sigmoid(h) } else { g.leaky_relu(h, LEAKY_SLOPE) };
        }
        Ok(h)
    }

    pub fn checkpoint_entries(&self) -> Vec<(String, Tensor<f32>)> {
        self.params.entries("generator")
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let fc = ckpt.get("generator.fc.w").ok_or_else(|| Error::Checkpoint("missing tensor generator.fc.w".into()))?;
        let up = ckpt.get("generator.up1.w").ok_or_else(|| Error::Checkpoint("missing tensor generator.up1.w".into()))?;
        let enc = ckpt.get("encoder.head.w").ok_or_else(|| Error::Checkpoint("missing tensor encoder.head.w".into()))?;
        let width = up.shape()[1];
        let code_dim = enc.shape()[1];
        let domains = fc.shape()[0].checked_sub(code_dim).filter(|&d| d > 0).ok_or_else(|| {
            Error::Checkpoint("generator input is narrower than the code".into())
        })?;
        let side = ((fc.shape()[1] / width) as f64).sqrt().round() as usize;
        let mut gen = Self::new(side * 16, code_dim, domains, width, 0)?;
        gen.params.restore(ckpt, "generator")?;
        Ok(gen)
    }
}

/// Frozen random conv feature extractor; three stride-2 relu blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualNet<T: Element = f32> {
    params: Params<T>,
}

impl<T: Element> PerceptualNet<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let mut c_in = 3;
        for (i, &c) in PERCEPTUAL_CHANNELS.iter().enumerate() {
            conv_layer(&mut params, &format!("conv{}", i + 1), c_in, c, &mut rng);
            c_in = c;
        }
        Self { params }
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    /// Activations after every block.
    pub fn features(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(PERCEPTUAL_CHANNELS.len());
        let mut h = x;
        for layer in 0..PERCEPTUAL_CHANNELS.len() {
            h = g.conv2d(h, p[2 * layer], 2, 1)?;
            h = g.add_bias(h, p[2 * layer + 1])?;
            h = g.relu(h);
            out.push(h);
        }
        Ok(out)
    }
}
