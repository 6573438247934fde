//! Perturbation saliency: blur a Gaussian neighbourhood of the observation
//! and measure how far the policy's mean action moves.

use crate::error::{Error, Result};
use crate::image::{save_gray_png, Image};
use crate::nn::{concat_columns, Tensor};
use crate::repr::ReprParams;
use crate::rl::PolicyParams;
use std::path::Path;

/// Mask width used when blending in the blurred image.
pub const MASK_SIGMA: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaliencyConfig {
    /// Standard deviation of the blur applied inside the mask, in pixels.
    pub sigma: f64,
    /// Lattice spacing of perturbation centres, in pixels.
    pub stride: usize,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self { sigma: 3.0, stride: 4 }
    }
}

/// Nonnegative per-pixel scores, row-major `height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Share of the total saliency inside `mask` (row-major booleans).
    pub fn mass_fraction(&self, mask: &[bool]) -> f64 {
        let total = self.total();
        if total <= 0.0 {
            return 0.0;
        }
        self.values.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() / total
    }

    /// Grayscale PNG scaled so the maximum maps to white.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        let data: Vec<u8> = self
            .values
            .iter()
            .map(|&v| if max > 0.0 { (255.0 * v / max).round() as u8 } else { 0 })
            .collect();
        save_gray_png(path, self.width, self.height, &data)
    }

    /// Observation with saliency painted into the red channel.
    pub fn overlay(&self, obs: &Image) -> Image {
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        let mut out = obs.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                let s = if max > 0.0 { self.get(r, c) / max } else { 0.0 };
                let [red, g, b] = obs.get(r, c);
                let mix = |v: u8, t: f64| ((v as f64) * (1.0 - s) + t * s).round() as u8;
                out.put(r, c, [mix(red, 255.0), mix(g, 0.0), mix(b, 0.0)]);
            }
        }
        out
    }
}

fn kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of a planar `[3, H, W]` image with clamped edges.
pub fn gaussian_blur(planar: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let k = kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0f32; planar.len()];
    let mut out = vec![0f32; planar.len()];
    for c in 0..3 {
        let base = c * h * w;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = (x as i64 + i as i64 - r).clamp(0, w as i64 - 1) as usize;
                    acc += kv * planar[base + y * w + xx] as f64;
                }
                tmp[base + y * w + x] = acc as f32;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = (y as i64 + i as i64 - r).clamp(0, h as i64 - 1) as usize;
                    acc += kv * tmp[base + yy * w + x] as f64;
                }
                out[base + y * w + x] = acc as f32;
            }
        }
    }
    out
}

fn action_means(
    policy: &PolicyParams<f32>,
    encoder: &ReprParams<f32>,
    images: Tensor<f32>,
    speed: f32,
) -> Result<Vec<[f64; 2]>> {
    let n = images.dims()[1];
    let mu = encoder.encode_tensor(&images)?.mu;
    let s = Tensor::new(vec![n, 1], vec![speed; n]);
    policy.action_mean(&concat_columns(&[&mu, &s]))
}

/// Saliency of the policy's mean action for one observation.
///
/// For each lattice point `p` the observation is blended towards its blurred
/// copy under a Gaussian mask centred at `p`; the score is
/// `0.5 * |a(obs) - a(perturbed)|^2`. Lattice scores are bilinearly upsampled
/// to the image size.
pub fn saliency_map(
    policy: &PolicyParams<f32>,
    encoder: &ReprParams<f32>,
    obs: &Image,
    speed_input: f64,
    config: SaliencyConfig,
) -> Result<SaliencyMap> {
    if config.stride == 0 || !(config.sigma > 0.0) {
        return Err(Error::Config("saliency needs a positive stride and sigma".into()));
    }
    let (h, w) = (obs.height(), obs.width());
    let planar = obs.to_planar();
    let blurred = gaussian_blur(&planar, h, w, config.sigma);
    let rows: Vec<usize> = (0..h).step_by(config.stride).collect();
    let cols: Vec<usize> = (0..w).step_by(config.stride).collect();
    let centres: Vec<(usize, usize)> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    let speed = speed_input as f32;

    let base = action_means(policy, encoder, Tensor::new(vec![3, 1, h, w], planar.clone()), speed)?[0];
    let mut lattice = Vec::with_capacity(centres.len());
    let hw = h * w;
    for chunk in centres.chunks(64) {
        let n = chunk.len();
        let mut data = vec![0f32; 3 * n * hw];
        for (i, &(pr, pc)) in chunk.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - pr as f64).powi(2) + (x as f64 - pc as f64).powi(2);
                    let m = (-d2 / (2.0 * MASK_SIGMA * MASK_SIGMA)).exp() as f32;
                    for c in 0..3 {
                        let p = c * hw + y * w + x;
                        data[(c * n + i) * hw + y * w + x] = planar[p] * (1.0 - m) + blurred[p] * m;
                    }
                }
            }
        }
        for a in action_means(policy, encoder, Tensor::new(vec![3, n, h, w], data), speed)? {
            lattice.push(0.5 * ((a[0] - base[0]).powi(2) + (a[1] - base[1]).powi(2)));
        }
    }

    let (nr, nc) = (rows.len(), cols.len());
    let at = |r: usize, c: usize| lattice[r * nc + c];
    let mut values = Vec::with_capacity(hw);
    let s = config.stride as f64;
    for y in 0..h {
        let gy = (y as f64 / s).min((nr - 1) as f64);
        let (y0, fy) = (gy.floor() as usize, gy.fract());
        let y1 = (y0 + 1).min(nr - 1);
        for x in 0..w {
            let gx = (x as f64 / s).min((nc - 1) as f64);
            let (x0, fx) = (gx.floor() as usize, gx.fract());
            let x1 = (x0 + 1).min(nc - 1);
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            values.push((top * (1.0 - fy) + bottom * fy).max(0.0));
        }
    }
    Ok(SaliencyMap {
        width: w,
        height: h,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_domain_set, render, reset, EnvConfig};
    use crate::repr::{ReprConfig, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (PolicyParams<f32>, ReprParams<f32>, Image) {
        let env = EnvConfig {
            image_size: 32,
            ..EnvConfig::default()
        };
        let enc = ReprParams::<f32>::new(
            &ReprConfig {
                variant: Variant::Vae,
                dim_general: 4,
                dim_specific: 0,
                channels: vec![4, 4, 4],
                ..ReprConfig::default()
            },
            32,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = PolicyParams::<f32>::new(&mut rng, 5, 8, 0.0);
        let obs = render(&reset(3, &env), &make_domain_set("toyroad-mirror").unwrap()[0], &env);
        (policy, enc, obs)
    }

    #[test]
    fn constant_policy_has_zero_saliency() {
        let (mut policy, enc, obs) = setup();
        for p in policy.actor.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        let map = saliency_map(&policy, &enc, &obs, 0.0, SaliencyConfig::default()).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
        assert_eq!((map.width, map.height), (32, 32));
    }

    #[test]
    fn nonnegative_and_responsive() {
        let (mut policy, enc, obs) = setup();
        for v in policy.actor.params_mut().last().unwrap().iter_mut() {
            *v *= 100.0;
        }
        let map = saliency_map(&policy, &enc, &obs, 0.5, SaliencyConfig::default()).unwrap();
        assert!(map.values.iter().all(|&v| v >= 0.0));
        assert!(map.total() > 0.0);
        let f = map.mass_fraction(&vec![true; 32 * 32]);
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blur_preserves_constant_images() {
        let planar = vec![0.25f32; 3 * 10 * 12];
        let b = gaussian_blur(&planar, 10, 12, 3.0);
        assert!(b.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }
}
