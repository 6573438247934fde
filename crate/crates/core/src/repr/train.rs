use super::loss::{cycle_step, derangement_within_groups, CycleBatch, ReverseDraw};
use super::model::ReprParams;
use super::{LossBreakdown, ReprConfig};
use crate::data::DomainDataset;
use crate::error::{Error, IoContext, Result};
use crate::image::{compose_grid, Image};
use crate::nn::{Adam, AdamConfig, Real, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ReprParams<f32>,
    /// Mean loss components per epoch.
    pub history: Vec<LossBreakdown>,
    pub steps: usize,
}

/// Stack images into a `[3, N, H, W]` tensor scaled to `[0, 1]`.
pub fn batch_tensor<T: Real>(images: &[&Image], size: usize) -> Result<Tensor<T>> {
    let hw = size * size;
    let n = images.len();
    let mut data = vec![T::zero(); 3 * n * hw];
    let scale = T::lit(1.0 / 255.0);
    for (i, img) in images.iter().enumerate() {
        if img.width() != size || img.height() != size {
            return Err(Error::Shape(format!(
                "expected {size}x{size} observations, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        for (p, px) in img.raw().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[(c * n + i) * hw + p] = T::from_u8(px[c]).unwrap() * scale;
            }
        }
    }
    Ok(Tensor::new(vec![3, n, size, size], data))
}

fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<f32> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

/// Fit encoder and decoder on the given domains.
///
/// Each batch holds an equal share of images from every domain. For the
/// cycle-consistent variant the specific code is swapped within each domain
/// group, and the reverse cycle pairs specific codes of shuffled batch images
/// regardless of domain. Everything random derives from `config.seed`.
pub fn train_repr(datasets: &[DomainDataset], config: &ReprConfig) -> Result<TrainOutcome> {
    train_repr_with(datasets, config, |_, _| {})
}

/// [`train_repr`] with a callback after every epoch.
pub fn train_repr_with(
    datasets: &[DomainDataset],
    config: &ReprConfig,
    mut on_epoch: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainOutcome> {
    config.validate()?;
    if datasets.is_empty() || datasets.iter().any(|d| d.is_empty()) {
        return Err(Error::Precondition("representation training needs non-empty datasets".into()));
    }
    let cycles = config.variant.has_specific();
    if cycles && datasets.len() < 2 {
        return Err(Error::Precondition(
            "the cycle-consistent variant needs at least two domains".into(),
        ));
    }
    let size = datasets[0].manifest.image_size;
    if datasets.iter().any(|d| d.manifest.image_size != size) {
        return Err(Error::Shape("datasets disagree on image size".into()));
    }
    let group = (config.batch_size / datasets.len()).max(2);
    let steps_per_epoch = datasets.iter().map(|d| d.len() / group).min().unwrap();
    if steps_per_epoch == 0 {
        return Err(Error::Precondition(format!(
            "every domain needs at least {group} images to fill a batch"
        )));
    }

    let mut params = ReprParams::<f32>::new(config, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed0fba7c4);
    let shapes: Vec<usize> = params.param_groups().iter().map(|g| g.len()).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &shapes);
    let beta = config.beta as f32;
    let rw = config.reverse_weight as f32;
    let groups: Vec<usize> = (0..datasets.len()).flat_map(|d| std::iter::repeat_n(d, group)).collect();
    let n = groups.len();

    let mut history = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        let orders: Vec<Vec<usize>> = datasets
            .iter()
            .map(|d| {
                let mut o: Vec<usize> = (0..d.len()).collect();
                o.shuffle(&mut rng);
                o
            })
            .collect();
        let mut sum = LossBreakdown::default();
        for step in 0..steps_per_epoch {
            let imgs: Vec<&Image> = datasets
                .iter()
                .zip(&orders)
                .flat_map(|(d, o)| o[step * group..(step + 1) * group].iter().map(move |&i| &d.images[i]))
                .collect();
            let images = batch_tensor(&imgs, size)?;
            let noise = normal_tensor(&mut rng, n, params.dim_general);
            let (swap, reverse) = if cycles {
                let swap = derangement_within_groups(&groups, &mut rng)?;
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                let second = (0..n).map(|k| perm[(k + 1) % n]).collect();
                let prior = normal_tensor(&mut rng, n, params.dim_general);
                (
                    swap,
                    Some(ReverseDraw {
                        prior,
                        first: perm,
                        second,
                    }),
                )
            } else {
                ((0..n).collect(), None)
            };
            let batch = CycleBatch {
                images,
                noise,
                swap,
                reverse,
            };
            let (parts, grads) = cycle_step(&params, &batch, beta, rw, config.reverse_gradient)?;
            let g = grads.groups();
            adam.step(params.encoder.params_mut().chain(params.decoder.params_mut()).collect(), &g);
            sum.recon += parts.recon;
            sum.kl += parts.kl;
            sum.reverse += parts.reverse;
            steps += 1;
        }
        let k = steps_per_epoch as f64;
        let mean = LossBreakdown::new(sum.recon / k, sum.kl / k, sum.reverse / k, config.beta, config.reverse_weight);
        log::info!(
            "repr epoch {epoch}: recon {:.3} kl {:.3} reverse {:.4} total {:.3}",
            mean.recon,
            mean.kl,
            mean.reverse,
            mean.total
        );
        on_epoch(epoch, &mean);
        history.push(mean);
    }
    Ok(TrainOutcome { params, history, steps })
}

/// CSV with columns `epoch,recon,kl,reverse,total`.
pub fn write_loss_history(path: &Path, history: &[LossBreakdown]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    w.write_record(["epoch", "recon", "kl", "reverse", "total"])?;
    for (i, h) in history.iter().enumerate() {
        w.write_record([
            i.to_string(),
            h.recon.to_string(),
            h.kl.to_string(),
            h.reverse.to_string(),
            h.total.to_string(),
        ])?;
    }
    w.flush().at(path)?;
    Ok(())
}

/// Swap demonstration: rows `row_a`, `row_b`, and the decodes of
/// `(mu_g(row_b[i]), specific(row_a[i]))`.
#[derive(Clone, Debug)]
pub struct SwapGrid {
    pub swapped: Vec<Image>,
    pub grid: Image,
}

pub fn swap_reconstruct(params: &ReprParams<f32>, row_a: &[Image], row_b: &[Image]) -> Result<SwapGrid> {
    if row_a.len() != row_b.len() {
        return Err(Error::Shape(format!(
            "swap rows differ in length: {} vs {}",
            row_a.len(),
            row_b.len()
        )));
    }
    if row_a.is_empty() {
        return Err(Error::Shape("swap rows are empty".into()));
    }
    let a = params.encode(row_a)?;
    let b = params.encode(row_b)?;
    let x = params.decode(&b.mu, &a.specific)?;
    let swapped = params.tensor_to_images(&x);
    let grid = compose_grid(&[row_a.to_vec(), row_b.to_vec(), swapped.clone()])?;
    Ok(SwapGrid { swapped, grid })
}
