use super::{ReprConfig, Variant};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{split_columns, Conv2d, ConvTranspose2d, Layer, Linear, Real, Sequential, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const REPR_FORMAT_VERSION: u32 = 1;

/// Encoder outputs for a batch, each `[N, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded<T> {
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
    pub specific: Tensor<T>,
}

/// Encoder and decoder weights for one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprParams<T = f32> {
    pub variant: Variant,
    pub dim_general: usize,
    pub dim_specific: usize,
    pub image_size: usize,
    pub channels: Vec<usize>,
    pub encoder: Sequential<T>,
    pub decoder: Sequential<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReprCheckpointMeta {
    pub variant: Variant,
    pub dim_general: usize,
    pub dim_specific: usize,
    pub beta: f64,
    pub seed: u64,
    pub epoch: usize,
    pub format_version: u32,
    pub image_size: usize,
    pub channels: Vec<usize>,
}

fn final_spatial(image_size: usize, layers: usize) -> Result<usize> {
    let s = image_size >> layers;
    if s == 0 || s << layers != image_size {
        return Err(Error::Config(format!(
            "image size {image_size} is not divisible by 2^{layers} (one halving per conv layer)"
        )));
    }
    Ok(s)
}

impl<T: Real> ReprParams<T> {
    /// Freshly initialised parameters seeded from `config.seed`.
    pub fn new(config: &ReprConfig, image_size: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::build(
            config.variant,
            config.dim_general,
            config.effective_dim_specific(),
            image_size,
            &config.channels,
            &mut rng,
        )
    }

    pub fn build<R: Rng + ?Sized>(
        variant: Variant,
        dim_general: usize,
        dim_specific: usize,
        image_size: usize,
        channels: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if !variant.has_specific() && dim_specific != 0 {
            return Err(Error::Config(format!(
                "variant {variant} uses a single embedding; dim_specific must be 0"
            )));
        }
        let s = final_spatial(image_size, channels.len())?;
        let last = *channels.last().unwrap();

        let mut enc = Vec::new();
        let mut c_in = 3;
        for &c in channels {
            enc.push(Layer::Conv2d(Conv2d::new(rng, c_in, c, 4, 2, 1)));
            enc.push(Layer::Relu);
            c_in = c;
        }
        enc.push(Layer::Flatten);
        enc.push(Layer::Linear(Linear::new(
            rng,
            last * s * s,
            2 * dim_general + dim_specific,
            0.5,
        )));

        let mut dec = vec![
            Layer::Linear(Linear::new(rng, dim_general + dim_specific, last * s * s, 1.0)),
            Layer::Relu,
            Layer::Unflatten { c: last, h: s, w: s },
        ];
        let outs: Vec<usize> = channels.iter().rev().skip(1).copied().chain([3]).collect();
        let mut c_in = last;
        for (i, &c) in outs.iter().enumerate() {
            dec.push(Layer::ConvTranspose2d(ConvTranspose2d::new(rng, c_in, c, 4, 2, 1)));
            dec.push(if i + 1 == outs.len() { Layer::Sigmoid } else { Layer::Relu });
            c_in = c;
        }

        Ok(Self {
            variant,
            dim_general,
            dim_specific,
            image_size,
            channels: channels.to_vec(),
            encoder: Sequential::new(enc),
            decoder: Sequential::new(dec),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.dim_general + self.dim_specific
    }

    pub fn encoder_width(&self) -> usize {
        2 * self.dim_general + self.dim_specific
    }

    /// Stack images into a `[3, N, H, W]` tensor scaled to `[0, 1]`.
    pub fn images_to_tensor(&self, images: &[Image]) -> Result<Tensor<T>> {
        let s = self.image_size;
        let hw = s * s;
        let n = images.len();
        let mut data = vec![T::zero(); 3 * n * hw];
        for (i, img) in images.iter().enumerate() {
            if img.width() != s || img.height() != s {
                return Err(Error::Shape(format!(
                    "encoder expects {s}x{s} observations, got {}x{}",
                    img.width(),
                    img.height()
                )));
            }
            let planar = img.to_planar();
            for c in 0..3 {
                let dst = (c * n + i) * hw;
                for (d, &v) in data[dst..dst + hw].iter_mut().zip(&planar[c * hw..(c + 1) * hw]) {
                    *d = T::from_f32(v).unwrap();
                }
            }
        }
        Ok(Tensor::new(vec![3, n, s, s], data))
    }

    /// Split a raw `[N, 2*Dg + Ds]` encoder output.
    pub fn split_encoding(&self, out: &Tensor<T>) -> Encoded<T> {
        let mut parts = split_columns(out, &[self.dim_general, self.dim_general, self.dim_specific]).into_iter();
        Encoded {
            mu: parts.next().unwrap(),
            logvar: parts.next().unwrap(),
            specific: parts.next().unwrap(),
        }
    }

    pub fn encode_tensor(&self, x: &Tensor<T>) -> Result<Encoded<T>> {
        let d = x.dims();
        if d.len() != 4 || d[0] != 3 || d[2] != self.image_size || d[3] != self.image_size {
            return Err(Error::Shape(format!(
                "encoder expects [3, N, {s}, {s}], got {d:?}",
                s = self.image_size
            )));
        }
        Ok(self.split_encoding(&self.encoder.forward(x)))
    }

    /// Deterministic encoding: no sampling happens here.
    pub fn encode(&self, images: &[Image]) -> Result<Encoded<T>> {
        self.encode_tensor(&self.images_to_tensor(images)?)
    }

    /// Decode to a `[3, N, H, W]` tensor with values in `[0, 1]`.
    pub fn decode(&self, general: &Tensor<T>, specific: &Tensor<T>) -> Result<Tensor<T>> {
        let n = general.dims()[0];
        if general.dims() != [n, self.dim_general] || specific.dims() != [n, self.dim_specific] {
            return Err(Error::Shape(format!(
                "decoder expects [N, {}] and [N, {}], got {:?} and {:?}",
                self.dim_general,
                self.dim_specific,
                general.dims(),
                specific.dims()
            )));
        }
        let z = crate::nn::concat_columns(&[general, specific]);
        Ok(self.decoder.forward(&z))
    }

    pub fn tensor_to_images(&self, x: &Tensor<T>) -> Vec<Image> {
        let d = x.dims();
        let (n, s) = (d[1], d[2]);
        let hw = s * s;
        (0..n)
            .map(|i| {
                let mut planar = vec![0f32; 3 * hw];
                for c in 0..3 {
                    let src = (c * n + i) * hw;
                    for (p, v) in planar[c * hw..(c + 1) * hw].iter_mut().zip(&x.data()[src..src + hw]) {
                        *p = v.to_f32().unwrap();
                    }
                }
                Image::from_planar(s, s, &planar)
            })
            .collect()
    }

    /// Domain-general embedding used as the policy input: the encoder mean.
    pub fn lusr(&self, obs: &Image) -> Result<Vec<T>> {
        Ok(self.encode(std::slice::from_ref(obs))?.mu.into_data())
    }

    /// [`ReprParams::lusr`] for a batch, `[N, Dg]`.
    pub fn lusr_batch(&self, images: &[Image]) -> Result<Tensor<T>> {
        Ok(self.encode(images)?.mu)
    }

    pub fn param_groups(&self) -> Vec<&[T]> {
        self.encoder
            .params()
            .chain(self.decoder.params())
            .map(|p| p.as_slice())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ReprParams<U> {
        ReprParams {
            variant: self.variant,
            dim_general: self.dim_general,
            dim_specific: self.dim_specific,
            image_size: self.image_size,
            channels: self.channels.clone(),
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
        }
    }
}

impl ReprParams<f32> {
    pub fn hash(&self) -> String {
        checkpoint::hash_params(&self.param_groups())
    }

    pub fn save(&self, dir: &Path, stem: &str, beta: f64, seed: u64, epoch: usize) -> Result<()> {
        let meta = ReprCheckpointMeta {
            variant: self.variant,
            dim_general: self.dim_general,
            dim_specific: self.dim_specific,
            beta,
            seed,
            epoch,
            format_version: REPR_FORMAT_VERSION,
            image_size: self.image_size,
            channels: self.channels.clone(),
        };
        checkpoint::save(dir, stem, &self.param_groups(), &meta)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<(Self, ReprCheckpointMeta)> {
        let (groups, meta): (_, ReprCheckpointMeta) = checkpoint::load(dir, stem)?;
        let json = dir.join(format!("{stem}.json"));
        if meta.format_version != REPR_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                path: json,
                found: meta.format_version,
                supported: REPR_FORMAT_VERSION,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = Self::build(
            meta.variant,
            meta.dim_general,
            meta.dim_specific,
            meta.image_size,
            &meta.channels,
            &mut rng,
        )?;
        let slots: Vec<&mut Vec<f32>> = params
            .encoder
            .params_mut()
            .chain(params.decoder.params_mut())
            .collect();
        if slots.len() != groups.len() || slots.iter().zip(&groups).any(|(s, g)| s.len() != g.len()) {
            return Err(Error::Manifest {
                path: json,
                reason: "parameter blob does not match the recorded architecture".into(),
            });
        }
        for (s, g) in slots.into_iter().zip(groups) {
            *s = g;
        }
        Ok((params, meta))
    }
}

/// Reparameterised draw `mu + exp(logvar / 2) * noise`.
pub fn sample_general<T: Real>(mu: &[T], logvar: &[T], noise: &[T]) -> Result<Vec<T>> {
    if mu.len() != logvar.len() || mu.len() != noise.len() {
        return Err(Error::Shape(format!(
            "sample_general: lengths {}, {}, {} differ",
            mu.len(),
            logvar.len(),
            noise.len()
        )));
    }
    let half = T::lit(0.5);
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect())
}
