//! The six generative frameworks: VAE/CVAE, GAN/CGAN, WGAN, WGAN-GP.
//!
//! Decoder/generator: latent (+ one-hot condition) -> FC -> two
//! transposed-conv blocks -> 28x28, with a mirrored critic/encoder. An MLP
//! backbone with the same wiring is available for low-compute profiles.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use super::losses;
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::nn::{self, leaky_relu, Conv2d, ConvTranspose2d, Linear, ParamStore, TensorRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenFamily {
    Vae,
    Cvae,
    Gan,
    Cgan,
    Wgan,
    WganGp,
}

impl GenFamily {
    pub fn is_conditional(&self) -> bool {
        matches!(self, GenFamily::Cvae | GenFamily::Cgan)
    }

    pub fn is_adversarial(&self) -> bool {
        !matches!(self, GenFamily::Vae | GenFamily::Cvae)
    }

    /// Pixel range of generated images: sigmoid heads for the VAE family,
    /// tanh heads for the GAN family.
    pub fn normalization(&self) -> Normalization {
        if self.is_adversarial() {
            Normalization::SignedUnit
        } else {
            Normalization::UnitInterval
        }
    }

    pub fn default_latent_dim(&self) -> usize {
        if self.is_adversarial() {
            100
        } else {
            20
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            GenFamily::Vae => "vae",
            GenFamily::Cvae => "cvae",
            GenFamily::Gan => "gan",
            GenFamily::Cgan => "cgan",
            GenFamily::Wgan => "wgan",
            GenFamily::WganGp => "wgan-gp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vae" => Ok(GenFamily::Vae),
            "cvae" => Ok(GenFamily::Cvae),
            "gan" => Ok(GenFamily::Gan),
            "cgan" => Ok(GenFamily::Cgan),
            "wgan" => Ok(GenFamily::Wgan),
            "wgan-gp" | "wgan_gp" | "wgangp" => Ok(GenFamily::WganGp),
            other => Err(Error::UnsupportedFamily(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenBackbone {
    Conv,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenArch {
    pub family: GenFamily,
    pub backbone: GenBackbone,
    pub latent_dim: usize,
    /// Conv: channels entering the first transposed-conv block.
    /// Mlp: width of the first decoder hidden layer.
    pub width: usize,
    /// Conditioning classes (0 for unconditional families).
    pub n_cond: usize,
}

impl GenArch {
    pub fn new(family: GenFamily, backbone: GenBackbone, width: usize, n_classes: usize) -> Self {
        Self {
            family,
            backbone,
            latent_dim: family.default_latent_dim(),
            width,
            n_cond: if family.is_conditional() { n_classes } else { 0 },
        }
    }
}

enum OutAct {
    Sigmoid,
    Tanh,
}

impl OutAct {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            OutAct::Sigmoid => candle_nn::ops::sigmoid(x)?,
            OutAct::Tanh => x.tanh()?,
        })
    }
}

enum DecoderNet {
    Conv {
        fc: Linear,
        d1: ConvTranspose2d,
        d2: ConvTranspose2d,
        ch: usize,
    },
    Mlp {
        fc1: Linear,
        fc2: Linear,
        fc3: Linear,
    },
}

impl DecoderNet {
    fn build(store: &mut ParamStore, arch: &GenArch, rng: &mut TensorRng, dev: &Device, dtype: DType) -> Result<Self> {
        let zin = arch.latent_dim + arch.n_cond;
        Ok(match arch.backbone {
            GenBackbone::Conv => {
                let ch = arch.width;
                DecoderNet::Conv {
                    fc: Linear::new(store, "dec.fc", zin, ch * 49, rng, dev, dtype)?,
                    d1: ConvTranspose2d::new(store, "dec.deconv1", ch, ch / 2, 4, 2, 1, rng, dev, dtype)?,
                    d2: ConvTranspose2d::new(store, "dec.deconv2", ch / 2, 1, 4, 2, 1, rng, dev, dtype)?,
                    ch,
                }
            }
            GenBackbone::Mlp => DecoderNet::Mlp {
                fc1: Linear::new(store, "dec.fc1", zin, arch.width, rng, dev, dtype)?,
                fc2: Linear::new(store, "dec.fc2", arch.width, arch.width * 2, rng, dev, dtype)?,
                fc3: Linear::new(store, "dec.fc3", arch.width * 2, 784, rng, dev, dtype)?,
            },
        })
    }

    fn forward(&self, z: &Tensor, act: &OutAct) -> Result<Tensor> {
        let b = z.dims()[0];
        match self {
            DecoderNet::Conv { fc, d1, d2, ch } => {
                let h = fc.forward(z)?.relu()?.reshape((b, *ch, 7, 7))?;
                let h = d1.forward(&h)?.relu()?;
                act.apply(&d2.forward(&h)?)
            }
            DecoderNet::Mlp { fc1, fc2, fc3 } => {
                let h = fc1.forward(z)?.relu()?;
                let h = fc2.forward(&h)?.relu()?;
                Ok(act.apply(&fc3.forward(&h)?)?.reshape((b, 1, 28, 28))?)
            }
        }
    }

    fn mul_adds(&self, arch: &GenArch) -> u64 {
        let zin = (arch.latent_dim + arch.n_cond) as u64;
        match self {
            DecoderNet::Conv { ch, .. } => {
                let ch = *ch as u64;
                // transposed conv counted over its zero-interleaved GEMM
                zin * ch * 49 + 14 * 14 * (ch / 2) * ch * 16 + 28 * 28 * (ch / 2) * 16
            }
            DecoderNet::Mlp { .. } => {
                let w = arch.width as u64;
                zin * w + w * 2 * w + 2 * w * 784
            }
        }
    }
}

/// Mirrored critic trunk; the head maps flattened features (+ one-hot) to
/// `out_dim` (1 for discriminators/critics, 2 * latent for encoders).
enum CriticNet {
    Conv {
        c1: Conv2d,
        c2: Conv2d,
        head: Linear,
        ch: usize,
    },
    Mlp {
        fc1: Linear,
        fc2: Linear,
        head: Linear,
    },
}

const LRELU_SLOPE: f64 = 0.2;

impl CriticNet {
    fn build(
        store: &mut ParamStore,
        prefix: &str,
        arch: &GenArch,
        out_dim: usize,
        rng: &mut TensorRng,
        dev: &Device,
        dtype: DType,
    ) -> Result<Self> {
        Ok(match arch.backbone {
            GenBackbone::Conv => {
                let ch = arch.width;
                CriticNet::Conv {
                    c1: Conv2d::new(store, &format!("{prefix}.conv1"), 1, ch / 2, 4, 2, 1, rng, dev, dtype)?,
                    c2: Conv2d::new(store, &format!("{prefix}.conv2"), ch / 2, ch, 4, 2, 1, rng, dev, dtype)?,
                    head: Linear::new(store, &format!("{prefix}.head"), ch * 49 + arch.n_cond, out_dim, rng, dev, dtype)?,
                    ch,
                }
            }
            GenBackbone::Mlp => {
                let (h1, h2) = (arch.width * 2, arch.width);
                CriticNet::Mlp {
                    fc1: Linear::new(store, &format!("{prefix}.fc1"), 784, h1, rng, dev, dtype)?,
                    fc2: Linear::new(store, &format!("{prefix}.fc2"), h1, h2, rng, dev, dtype)?,
                    head: Linear::new(store, &format!("{prefix}.head"), h2 + arch.n_cond, out_dim, rng, dev, dtype)?,
                }
            }
        })
    }

    fn forward(&self, x: &Tensor, one_hot: Option<&Tensor>) -> Result<Tensor> {
        let feats = match self {
            CriticNet::Conv { c1, c2, .. } => {
                let h = leaky_relu(&c1.forward(x)?, LRELU_SLOPE)?;
                let h = leaky_relu(&c2.forward(&h)?, LRELU_SLOPE)?;
                h.flatten_from(1)?
            }
            CriticNet::Mlp { fc1, fc2, .. } => {
                let h = leaky_relu(&fc1.forward(&x.flatten_from(1)?)?, LRELU_SLOPE)?;
                leaky_relu(&fc2.forward(&h)?, LRELU_SLOPE)?
            }
        };
        let feats = match one_hot {
            Some(oh) => Tensor::cat(&[&feats, oh], 1)?,
            None => feats,
        };
        let head = match self {
            CriticNet::Conv { head, .. } => head,
            CriticNet::Mlp { head, .. } => head,
        };
        head.forward(&feats)
    }

    /// Per-sample gradient of the scalar head output with respect to the
    /// input image, written as explicit ops so it can itself be
    /// differentiated with respect to the critic parameters (piecewise-linear
    /// activation masks are detached, their a.e. derivative is exact).
    fn input_gradient(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.dims()[0];
        let mask = |pre: &Tensor| -> Result<Tensor> {
            let gt = pre.gt(0.0)?.to_dtype(pre.dtype())?.detach();
            Ok((gt.affine(1.0 - LRELU_SLOPE, 0.0)? + LRELU_SLOPE)?)
        };
        match self {
            CriticNet::Conv { c1, c2, head, ch } => {
                let pre1 = c1.forward(x)?;
                let a1 = leaky_relu(&pre1, LRELU_SLOPE)?;
                let pre2 = c2.forward(&a1)?;
                // d out / d feats: first 49*ch columns of the head weight
                let w = head.weight.as_tensor().narrow(1, 0, ch * 49)?; // [1, F]
                let dfeat = w.expand((b, ch * 49))?.reshape((b, *ch, 7, 7))?;
                let dpre2 = (dfeat * mask(&pre2)?)?;
                let da1 = nn::ops::conv_transpose2d(&dpre2, c2.weight.as_tensor(), None, c2.stride, c2.pad)?;
                let dpre1 = (da1 * mask(&pre1)?)?;
                nn::ops::conv_transpose2d(&dpre1, c1.weight.as_tensor(), None, c1.stride, c1.pad)
            }
            CriticNet::Mlp { fc1, fc2, head } => {
                let flat = x.flatten_from(1)?;
                let pre1 = fc1.forward(&flat)?;
                let a1 = leaky_relu(&pre1, LRELU_SLOPE)?;
                let pre2 = fc2.forward(&a1)?;
                let h2 = pre2.dims()[1];
                let w = head.weight.as_tensor().narrow(1, 0, h2)?; // [1, H2]
                let d2 = (w.expand((b, h2))? * mask(&pre2)?)?;
                let d1 = (d2.matmul(&fc2.weight.as_tensor().contiguous()?)? * mask(&pre1)?)?;
                Ok(d1.matmul(&fc1.weight.as_tensor().contiguous()?)?.reshape((b, 1, 28, 28))?)
            }
        }
    }

    fn mul_adds(&self, arch: &GenArch) -> u64 {
        match self {
            CriticNet::Conv { ch, .. } => {
                let ch = *ch as u64;
                14 * 14 * (ch / 2) * 16 + 7 * 7 * ch * (ch / 2) * 16 + (ch * 49 + arch.n_cond as u64)
            }
            CriticNet::Mlp { .. } => {
                let w = arch.width as u64;
                784 * 2 * w + 2 * w * w + w + arch.n_cond as u64
            }
        }
    }
}

fn one_hot(labels: &[u16], n: usize, dev: &Device, dtype: DType) -> Result<Tensor> {
    let mut data = vec![0f32; labels.len() * n];
    for (i, &l) in labels.iter().enumerate() {
        if (l as usize) < n {
            data[i * n + l as usize] = 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (labels.len(), n), dev)?.to_dtype(dtype)?)
}

/// A generator with its paired critic (adversarial families) or encoder
/// (variational families).
pub struct GeneratorModel {
    pub arch: GenArch,
    out_act: OutAct,
    pub dec_store: ParamStore,
    dec: DecoderNet,
    /// Discriminator/critic for adversarial families.
    pub critic_store: ParamStore,
    critic: Option<CriticNet>,
    /// Encoder for variational families.
    pub enc_store: ParamStore,
    enc: Option<CriticNet>,
    dev: Device,
    dtype: DType,
}

impl GeneratorModel {
    pub fn new(arch: GenArch, rng: &mut TensorRng, dev: &Device) -> Result<Self> {
        Self::with_dtype(arch, rng, dev, DType::F32)
    }

    pub fn with_dtype(arch: GenArch, rng: &mut TensorRng, dev: &Device, dtype: DType) -> Result<Self> {
        if arch.family.is_conditional() && arch.n_cond == 0 {
            return Err(Error::InvalidParameter("conditional family needs n_cond > 0".into()));
        }
        let mut dec_store = ParamStore::new();
        let dec = DecoderNet::build(&mut dec_store, &arch, rng, dev, dtype)?;
        let mut critic_store = ParamStore::new();
        let mut enc_store = ParamStore::new();
        let (critic, enc) = if arch.family.is_adversarial() {
            (Some(CriticNet::build(&mut critic_store, "disc", &arch, 1, rng, dev, dtype)?), None)
        } else {
            (None, Some(CriticNet::build(&mut enc_store, "enc", &arch, 2 * arch.latent_dim, rng, dev, dtype)?))
        };
        let out_act = if arch.family.is_adversarial() { OutAct::Tanh } else { OutAct::Sigmoid };
        Ok(Self {
            arch,
            out_act,
            dec_store,
            dec,
            critic_store,
            critic,
            enc_store,
            enc,
            dev: dev.clone(),
            dtype,
        })
    }

    pub fn family(&self) -> GenFamily {
        self.arch.family
    }

    pub fn device(&self) -> &Device {
        &self.dev
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Parameters covered by regularization penalties: generator weights only
    /// for the GAN family, encoder + decoder for the VAE family.
    pub fn penalized_vars(&self) -> Vec<candle_core::Var> {
        let mut vars = self.dec_store.vars();
        if !self.arch.family.is_adversarial() {
            vars.extend(self.enc_store.vars());
        }
        vars
    }

    fn cond_tensor(&self, labels: &[u16]) -> Result<Tensor> {
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= self.arch.n_cond) {
            return Err(Error::InvalidTarget(bad as usize, self.arch.n_cond));
        }
        one_hot(labels, self.arch.n_cond, &self.dev, self.dtype)
    }

    /// Decoder forward from explicit latents (and labels when conditional).
    pub fn generate(&self, z: &Tensor, labels: Option<&[u16]>) -> Result<Tensor> {
        let zin = match (self.arch.family.is_conditional(), labels) {
            (true, Some(l)) => {
                let oh = self.cond_tensor(l)?;
                Tensor::cat(&[z, &oh], 1)?
            }
            (true, None) => {
                return Err(Error::InvalidParameter("conditional generator needs labels".into()))
            }
            (false, _) => z.clone(),
        };
        self.dec.forward(&zin, &self.out_act)
    }

    /// Discriminator probability in (0, 1) for GAN/CGAN (clamped away from
    /// the endpoints for log stability), or raw critic score for WGAN-family.
    pub fn discriminate(&self, x: &Tensor, labels: Option<&[u16]>) -> Result<Tensor> {
        let critic = self
            .critic
            .as_ref()
            .ok_or_else(|| Error::UnsupportedFamily("no critic on a VAE-family model".into()))?;
        let oh = match (self.arch.family.is_conditional(), labels) {
            (true, Some(l)) => Some(self.cond_tensor(l)?),
            (true, None) => return Err(Error::InvalidParameter("conditional critic needs labels".into())),
            (false, _) => None,
        };
        let score = critic.forward(x, oh.as_ref())?.squeeze(D::Minus1)?;
        match self.arch.family {
            GenFamily::Gan | GenFamily::Cgan => {
                Ok(candle_nn::ops::sigmoid(&score)?.clamp(1e-6, 1.0 - 1e-6)?)
            }
            _ => Ok(score),
        }
    }

    /// Encoder forward: returns `(mu, sigma)`, sigma strictly positive.
    pub fn encode(&self, x: &Tensor, labels: Option<&[u16]>) -> Result<(Tensor, Tensor)> {
        let enc = self
            .enc
            .as_ref()
            .ok_or_else(|| Error::UnsupportedFamily("no encoder on a GAN-family model".into()))?;
        let oh = match (self.arch.family.is_conditional(), labels) {
            (true, Some(l)) => Some(self.cond_tensor(l)?),
            (true, None) => return Err(Error::InvalidParameter("conditional encoder needs labels".into())),
            (false, _) => None,
        };
        let out = enc.forward(x, oh.as_ref())?;
        let mu = out.narrow(1, 0, self.arch.latent_dim)?;
        let log_var = out.narrow(1, self.arch.latent_dim, self.arch.latent_dim)?;
        let sigma = log_var.affine(0.5, 0.0)?.exp()?;
        Ok((mu, sigma))
    }

    /// VAE training forward: encode, reparameterize, decode.
    pub fn vae_forward(&self, x: &Tensor, labels: Option<&[u16]>, rng: &mut TensorRng) -> Result<(Tensor, Tensor, Tensor)> {
        let (mu, sigma) = self.encode(x, labels)?;
        let eps = rng.randn(mu.dims(), &self.dev, self.dtype)?;
        let z = (&mu + (&sigma * &eps)?)?;
        let x_hat = self.generate(&z, labels)?;
        Ok((x_hat, mu, sigma))
    }

    /// Per-sample input gradients of the critic, as a differentiable graph.
    pub fn critic_input_gradient(&self, x: &Tensor) -> Result<Tensor> {
        let critic = self
            .critic
            .as_ref()
            .ok_or_else(|| Error::UnsupportedFamily("no critic".into()))?;
        if self.arch.family.is_conditional() {
            return Err(Error::UnsupportedFamily("gradient penalty is wired for unconditional critics".into()));
        }
        critic.input_gradient(x)
    }

    /// WGAN-GP penalty on uniform interpolates between real and fake batches.
    pub fn gradient_penalty(&self, real: &Tensor, fake: &Tensor, lambda: f64, rng: &mut TensorRng) -> Result<Tensor> {
        if real.dims() != fake.dims() {
            return Err(Error::InvalidParameter(format!(
                "gradient penalty needs same-shape batches, got {:?} vs {:?}",
                real.dims(),
                fake.dims()
            )));
        }
        let b = real.dims()[0];
        let eps = rng.uniform(0.0, 1.0, &[b, 1, 1, 1], &self.dev, self.dtype)?;
        let x_hat = (real.broadcast_mul(&eps)? + fake.broadcast_mul(&(eps.neg()? + 1.0)?)?)?.detach();
        let grads = self.critic_input_gradient(&x_hat)?;
        losses::gradient_penalty_from_grads(&grads, lambda)
    }

    /// Draws `n` images deterministically from `seed`. Output lies in the
    /// family's pixel range.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample needs n > 0".into()));
        }
        let mut rng = TensorRng::new(seed);
        if self.arch.family.is_conditional() {
            // balanced draw across the conditioning head
            let classes: Vec<u16> = (0..self.arch.n_cond as u16).collect();
            let (images, _) = self.sample_balanced(&classes, n, seed)?;
            return Ok(images);
        }
        let z = rng.randn(&[n, self.arch.latent_dim], &self.dev, self.dtype)?;
        self.generate(&z, None)
    }

    /// Draws `n` images of a single class from a conditional family.
    pub fn sample_class(&self, class_id: u16, n: usize, seed: u64) -> Result<(Tensor, Vec<u16>)> {
        if !self.arch.family.is_conditional() {
            return Err(Error::UnsupportedFamily(format!(
                "{} cannot sample a chosen class",
                self.arch.family.tag()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("sample needs n > 0".into()));
        }
        if class_id as usize >= self.arch.n_cond {
            return Err(Error::InvalidTarget(class_id as usize, self.arch.n_cond));
        }
        let mut rng = TensorRng::new(seed ^ 0xC0DE ^ class_id as u64);
        let z = rng.randn(&[n, self.arch.latent_dim], &self.dev, self.dtype)?;
        let labels = vec![class_id; n];
        let images = self.generate(&z, Some(&labels))?;
        Ok((images, labels))
    }

    /// Splits `total` across `classes` as evenly as possible (floor, with the
    /// remainder going to the lowest class ids) and samples per class.
    pub fn sample_balanced(&self, classes: &[u16], total: usize, seed: u64) -> Result<(Tensor, Vec<u16>)> {
        if classes.is_empty() {
            return Err(Error::InvalidParameter("sample_balanced needs classes".into()));
        }
        let counts = split_budget(total, classes.len());
        let mut chunks = Vec::new();
        let mut labels = Vec::with_capacity(total);
        let mut sorted: Vec<u16> = classes.to_vec();
        sorted.sort_unstable();
        for (class, count) in sorted.iter().zip(counts) {
            if count == 0 {
                continue;
            }
            let (images, l) = self.sample_class(*class, count, seed)?;
            chunks.push(images);
            labels.extend(l);
        }
        let refs: Vec<&Tensor> = chunks.iter().collect();
        Ok((Tensor::cat(&refs, 0)?, labels))
    }

    pub fn mul_adds_per_sample(&self) -> u64 {
        let dec = self.dec.mul_adds(&self.arch);
        let aux = self
            .critic
            .as_ref()
            .or(self.enc.as_ref())
            .map(|c| c.mul_adds(&self.arch))
            .unwrap_or(0);
        dec + aux
    }

    pub fn param_count(&self) -> usize {
        self.dec_store.param_count() + self.critic_store.param_count() + self.enc_store.param_count()
    }

    /// All stores, for checkpointing: (name prefix, store).
    pub fn stores(&self) -> Vec<(&'static str, &ParamStore)> {
        let mut v = vec![("dec", &self.dec_store)];
        if self.critic.is_some() {
            v.push(("disc", &self.critic_store));
        }
        if self.enc.is_some() {
            v.push(("enc", &self.enc_store));
        }
        v
    }

    /// Deep copy with identical parameters; the basis of frozen snapshots.
    pub fn clone_model(&self) -> Result<GeneratorModel> {
        let mut rng = TensorRng::new(0);
        let out = GeneratorModel::with_dtype(self.arch, &mut rng, &self.dev, self.dtype)?;
        out.dec_store.load(&self.dec_store.snapshot()?)?;
        if self.critic.is_some() {
            out.critic_store.load(&self.critic_store.snapshot()?)?;
        }
        if self.enc.is_some() {
            out.enc_store.load(&self.enc_store.snapshot()?)?;
        }
        Ok(out)
    }

    pub fn digest(&self) -> Result<u64> {
        let mut h = self.dec_store.digest()?;
        if self.critic.is_some() {
            h ^= self.critic_store.digest()?.rotate_left(17);
        }
        if self.enc.is_some() {
            h ^= self.enc_store.digest()?.rotate_left(31);
        }
        Ok(h)
    }
}

/// Floor split of `total` over `k` buckets, remainder to the first buckets.
pub fn split_budget(total: usize, k: usize) -> Vec<usize> {
    let base = total / k;
    let rem = total % k;
    (0..k).map(|i| base + usize::from(i < rem)).collect()
}
