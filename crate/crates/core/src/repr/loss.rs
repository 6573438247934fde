//! Forward-cycle (swap reconstruction + KL) and reverse-cycle (decode,
//! re-encode, L1 on general means) objectives with hand-derived gradients.

use super::model::{Encoded, ReprParams};
use super::{LossBreakdown, ReverseGradient};
use crate::error::{Error, Result};
use crate::nn::{concat_columns, Real, Tensor, Trace};
use rand::seq::SliceRandom;
use rand::Rng;

/// Parameter gradients, aligned with `ReprParams::param_groups`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprGrads<T> {
    pub encoder: Vec<Vec<T>>,
    pub decoder: Vec<Vec<T>>,
}

impl<T: Real> ReprGrads<T> {
    pub fn zeros(params: &ReprParams<T>) -> Self {
        Self {
            encoder: params.encoder.zero_grads(),
            decoder: params.decoder.zero_grads(),
        }
    }

    pub fn groups(&self) -> Vec<&[T]> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .map(|g| g.as_slice())
            .collect()
    }
}

/// Prior draws and batch-index pairs for the reverse cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct ReverseDraw<T> {
    /// `[M, Dg]` standard-normal samples of the general code.
    pub prior: Tensor<T>,
    /// Batch indices supplying the first specific code of each pair.
    pub first: Vec<usize>,
    /// Batch indices supplying the second specific code of each pair.
    pub second: Vec<usize>,
}

/// One optimisation batch with all of its random draws fixed up front.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleBatch<T> {
    /// `[3, N, H, W]` in `[0, 1]`.
    pub images: Tensor<T>,
    /// Reparameterisation noise, `[N, Dg]`.
    pub noise: Tensor<T>,
    /// `swap[i]` is the image whose specific code reconstructs image `i`.
    pub swap: Vec<usize>,
    pub reverse: Option<ReverseDraw<T>>,
}

/// Uniform random derangement inside every group: each image is paired with a
/// different image carrying the same group label. Groups of one are rejected.
pub fn derangement_within_groups<R: Rng + ?Sized>(groups: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    let mut members: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    let mut swap: Vec<usize> = (0..groups.len()).collect();
    for (g, idx) in members {
        if idx.len() < 2 {
            return Err(Error::Precondition(format!(
                "domain group {g} has a single image; the specific-code swap needs at least two"
            )));
        }
        let mut perm: Vec<usize> = (0..idx.len()).collect();
        loop {
            perm.shuffle(rng);
            if perm.iter().enumerate().all(|(i, &p)| i != p) {
                break;
            }
        }
        for (i, &p) in perm.iter().enumerate() {
            swap[idx[i]] = idx[p];
        }
    }
    Ok(swap)
}

fn gather_rows<T: Real>(x: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let w = x.dims()[1];
    let mut data = Vec::with_capacity(rows.len() * w);
    for &r in rows {
        data.extend_from_slice(&x.data()[r * w..(r + 1) * w]);
    }
    Tensor::new(vec![rows.len(), w], data)
}

fn scatter_add_rows<T: Real>(dst: &mut Tensor<T>, rows: &[usize], src: &Tensor<T>) {
    let w = dst.dims()[1];
    for (k, &r) in rows.iter().enumerate() {
        let s = &src.data()[k * w..(k + 1) * w];
        for (d, &v) in dst.data_mut()[r * w..(r + 1) * w].iter_mut().zip(s) {
            *d += v;
        }
    }
}

/// Mean over rows of `sum_i 0.5 (mu_i^2 + exp(logvar_i) - 1 - logvar_i)`,
/// the KL of a diagonal Gaussian from the unit Gaussian.
pub fn kl_divergence<T: Real>(mu: &Tensor<T>, logvar: &Tensor<T>) -> T {
    let n = mu.dims()[0].max(1);
    let half = T::lit(0.5);
    let s: T = mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .sum();
    s / T::from_usize(n).unwrap()
}

struct ForwardPass<T> {
    enc_trace: Trace<T>,
    dec_trace: Trace<T>,
    enc: Encoded<T>,
    recon_x: Tensor<T>,
    recon: T,
    kl: T,
}

fn check_forward_inputs<T: Real>(params: &ReprParams<T>, images: &Tensor<T>, noise: &Tensor<T>, swap: &[usize]) -> Result<usize> {
    let d = images.dims();
    if d.len() != 4 || d[0] != 3 || d[2] != params.image_size || d[3] != params.image_size {
        return Err(Error::Shape(format!("batch must be [3, N, {s}, {s}], got {d:?}", s = params.image_size)));
    }
    let n = d[1];
    if noise.dims() != [n, params.dim_general] {
        return Err(Error::Shape(format!(
            "noise must be [{n}, {}], got {:?}",
            params.dim_general,
            noise.dims()
        )));
    }
    if swap.len() != n || swap.iter().any(|&s| s >= n) {
        return Err(Error::Shape("swap must index the batch once per image".into()));
    }
    Ok(n)
}

fn forward_pass<T: Real>(params: &ReprParams<T>, images: &Tensor<T>, noise: &Tensor<T>, swap: &[usize]) -> Result<ForwardPass<T>> {
    let n = check_forward_inputs(params, images, noise, swap)?;
    let (out, enc_trace) = params.encoder.forward_train(images);
    let enc = params.split_encoding(&out);
    let half = T::lit(0.5);
    let z: Vec<T> = enc
        .mu
        .data()
        .iter()
        .zip(enc.logvar.data())
        .zip(noise.data())
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect();
    let z = Tensor::new(vec![n, params.dim_general], z);
    let swapped = gather_rows(&enc.specific, swap);
    let (recon_x, dec_trace) = params.decoder.forward_train(&concat_columns(&[&z, &swapped]));
    let nf = T::from_usize(n.max(1)).unwrap();
    let recon = recon_x
        .data()
        .iter()
        .zip(images.data())
        .map(|(&r, &x)| (r - x) * (r - x))
        .sum::<T>()
        / nf;
    let kl = kl_divergence(&enc.mu, &enc.logvar);
    Ok(ForwardPass {
        enc_trace,
        dec_trace,
        enc,
        recon_x,
        recon,
        kl,
    })
}

fn forward_backward<T: Real>(
    params: &ReprParams<T>,
    pass: ForwardPass<T>,
    images: &Tensor<T>,
    noise: &Tensor<T>,
    swap: &[usize],
    beta: T,
    extra_specific: Option<&Tensor<T>>,
    grads: &mut ReprGrads<T>,
) {
    let n = images.dims()[1];
    let (dg, ds) = (params.dim_general, params.dim_specific);
    let nf = T::from_usize(n.max(1)).unwrap();
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let d_recon: Vec<T> = pass
        .recon_x
        .data()
        .iter()
        .zip(images.data())
        .map(|(&r, &x)| two * (r - x) / nf)
        .collect();
    let d_lat = params
        .decoder
        .backward(pass.dec_trace, Tensor::new(pass.recon_x.dims().to_vec(), d_recon), &mut grads.decoder, true)
        .expect("decoder input gradient");
    let mut parts = crate::nn::split_columns(&d_lat, &[dg, ds]).into_iter();
    let dz = parts.next().unwrap();
    let d_swapped = parts.next().unwrap();
    let mut d_spec = Tensor::zeros(vec![n, ds]);
    scatter_add_rows(&mut d_spec, swap, &d_swapped);
    if let Some(extra) = extra_specific {
        for (d, &e) in d_spec.data_mut().iter_mut().zip(extra.data()) {
            *d += e;
        }
    }
    let mu = pass.enc.mu.data();
    let lv = pass.enc.logvar.data();
    let mut d_mu = Vec::with_capacity(n * dg);
    let mut d_lv = Vec::with_capacity(n * dg);
    for i in 0..n * dg {
        let sd = (half * lv[i]).exp();
        d_mu.push(dz.data()[i] + beta * mu[i] / nf);
        d_lv.push(dz.data()[i] * noise.data()[i] * half * sd + beta * half * (lv[i].exp() - T::one()) / nf);
    }
    let d_out = concat_columns(&[
        &Tensor::new(vec![n, dg], d_mu),
        &Tensor::new(vec![n, dg], d_lv),
        &d_spec,
    ]);
    params.encoder.backward(pass.enc_trace, d_out, &mut grads.encoder, false);
}

/// Forward-cycle objective `recon + beta * kl` for a fixed noise draw and swap.
///
/// Image `i` is reconstructed from its own sampled general code and the
/// specific code of image `swap[i]`; `recon` is the per-image sum of squared
/// pixel errors averaged over the batch.
pub fn forward_loss<T: Real>(
    params: &ReprParams<T>,
    images: &Tensor<T>,
    noise: &Tensor<T>,
    swap: &[usize],
    beta: T,
) -> Result<(T, LossBreakdown)> {
    let pass = forward_pass(params, images, noise, swap)?;
    let parts = LossBreakdown::new(
        pass.recon.to_f64().unwrap(),
        pass.kl.to_f64().unwrap(),
        0.0,
        beta.to_f64().unwrap(),
        0.0,
    );
    Ok((pass.recon + beta * pass.kl, parts))
}

pub fn forward_loss_grad<T: Real>(
    params: &ReprParams<T>,
    images: &Tensor<T>,
    noise: &Tensor<T>,
    swap: &[usize],
    beta: T,
) -> Result<(LossBreakdown, ReprGrads<T>)> {
    let pass = forward_pass(params, images, noise, swap)?;
    let parts = LossBreakdown::new(
        pass.recon.to_f64().unwrap(),
        pass.kl.to_f64().unwrap(),
        0.0,
        beta.to_f64().unwrap(),
        0.0,
    );
    let mut grads = ReprGrads::zeros(params);
    forward_backward(params, pass, images, noise, swap, beta, None, &mut grads);
    Ok((parts, grads))
}

struct ReverseBranch<T> {
    dec_trace: Trace<T>,
    enc_trace: Trace<T>,
    mu: Tensor<T>,
}

struct ReversePass<T> {
    branches: [ReverseBranch<T>; 2],
    loss: T,
}

fn check_reverse_inputs<T: Real>(params: &ReprParams<T>, prior: &Tensor<T>, s1: &Tensor<T>, s2: &Tensor<T>) -> Result<()> {
    let m = prior.dims()[0];
    let ok = prior.dims() == [m, params.dim_general]
        && s1.dims() == [m, params.dim_specific]
        && s2.dims() == [m, params.dim_specific];
    if !ok {
        return Err(Error::Shape(format!(
            "reverse cycle expects [M, {}] prior and [M, {}] specific codes, got {:?}, {:?}, {:?}",
            params.dim_general,
            params.dim_specific,
            prior.dims(),
            s1.dims(),
            s2.dims()
        )));
    }
    Ok(())
}

fn reverse_branch<T: Real>(params: &ReprParams<T>, prior: &Tensor<T>, specific: &Tensor<T>) -> ReverseBranch<T> {
    let (x, dec_trace) = params.decoder.forward_train(&concat_columns(&[prior, specific]));
    let (out, enc_trace) = params.encoder.forward_train(&x);
    ReverseBranch {
        dec_trace,
        enc_trace,
        mu: params.split_encoding(&out).mu,
    }
}

fn l1_mean<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    let m = a.dims()[0].max(1);
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum::<T>() / T::from_usize(m).unwrap()
}

fn reverse_pass<T: Real>(params: &ReprParams<T>, prior: &Tensor<T>, s1: &Tensor<T>, s2: &Tensor<T>) -> Result<ReversePass<T>> {
    check_reverse_inputs(params, prior, s1, s2)?;
    let b1 = reverse_branch(params, prior, s1);
    let b2 = reverse_branch(params, prior, s2);
    let loss = l1_mean(&b1.mu, &b2.mu);
    Ok(ReversePass { branches: [b1, b2], loss })
}

/// Backpropagate `weight * loss`; returns gradients for the two specific codes
/// (zero under [`ReverseGradient::Encoder`]).
fn reverse_backward<T: Real>(
    params: &ReprParams<T>,
    pass: ReversePass<T>,
    weight: T,
    mode: ReverseGradient,
    grads: &mut ReprGrads<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [b1, b2] = pass.branches;
    let m = b1.mu.dims()[0];
    let (dg, ds) = (params.dim_general, params.dim_specific);
    let scale = weight / T::from_usize(m.max(1)).unwrap();
    let sign: Vec<T> = b1
        .mu
        .data()
        .iter()
        .zip(b2.mu.data())
        .map(|(&a, &b)| {
            if a > b {
                scale
            } else if a < b {
                -scale
            } else {
                T::zero()
            }
        })
        .collect();
    let zeros_lv = Tensor::zeros(vec![m, dg]);
    let zeros_s = Tensor::zeros(vec![m, ds]);
    let mut out = Vec::with_capacity(2);
    for (branch, flip) in [(b1, T::one()), (b2, -T::one())] {
        let d_mu = Tensor::new(vec![m, dg], sign.iter().map(|&s| s * flip).collect());
        let d_out = concat_columns(&[&d_mu, &zeros_lv, &zeros_s]);
        if mode == ReverseGradient::Encoder {
            params.encoder.backward(branch.enc_trace, d_out, &mut grads.encoder, false);
            out.push(Tensor::zeros(vec![m, ds]));
            continue;
        }
        let dx = params
            .encoder
            .backward(branch.enc_trace, d_out, &mut grads.encoder, true)
            .expect("encoder input gradient");
        let d_lat = params
            .decoder
            .backward(branch.dec_trace, dx, &mut grads.decoder, true)
            .expect("decoder input gradient");
        out.push(crate::nn::split_columns(&d_lat, &[dg, ds]).pop().unwrap());
    }
    let d2 = out.pop().unwrap();
    let d1 = out.pop().unwrap();
    (d1, d2)
}

/// Reverse-cycle objective: decode the prior draw with each specific code,
/// re-encode both images, and return the batch mean of the L1 distance between
/// the two recovered general means.
pub fn reverse_loss<T: Real>(params: &ReprParams<T>, prior: &Tensor<T>, s1: &Tensor<T>, s2: &Tensor<T>) -> Result<T> {
    check_reverse_inputs(params, prior, s1, s2)?;
    let mean = |s: &Tensor<T>| -> Tensor<T> {
        let x = params.decoder.forward(&concat_columns(&[prior, s]));
        params.split_encoding(&params.encoder.forward(&x)).mu
    };
    Ok(l1_mean(&mean(s1), &mean(s2)))
}

/// Reverse-cycle loss, parameter gradients, and gradients for both specific
/// code batches.
pub fn reverse_loss_grad<T: Real>(
    params: &ReprParams<T>,
    prior: &Tensor<T>,
    s1: &Tensor<T>,
    s2: &Tensor<T>,
) -> Result<(T, ReprGrads<T>, Tensor<T>, Tensor<T>)> {
    let pass = reverse_pass(params, prior, s1, s2)?;
    let loss = pass.loss;
    let mut grads = ReprGrads::zeros(params);
    let (d1, d2) = reverse_backward(params, pass, T::one(), ReverseGradient::Full, &mut grads);
    Ok((loss, grads, d1, d2))
}

/// Full training objective for one batch and its gradients.
///
/// `total = recon + beta * kl + reverse_weight * reverse`; the reverse term is
/// skipped when the batch carries no reverse draw. Under
/// [`ReverseGradient::Full`] the reverse term also reaches the encoder through
/// the specific codes of the real images.
pub fn cycle_step<T: Real>(
    params: &ReprParams<T>,
    batch: &CycleBatch<T>,
    beta: T,
    reverse_weight: T,
    mode: ReverseGradient,
) -> Result<(LossBreakdown, ReprGrads<T>)> {
    let pass = forward_pass(params, &batch.images, &batch.noise, &batch.swap)?;
    let mut grads = ReprGrads::zeros(params);
    let n = batch.images.dims()[1];
    let mut reverse_value = 0.0;
    let mut extra = None;
    if let Some(draw) = &batch.reverse {
        if draw.first.len() != draw.second.len() || draw.first.iter().chain(&draw.second).any(|&i| i >= n) {
            return Err(Error::Shape("reverse pairs must index the batch".into()));
        }
        let s1 = gather_rows(&pass.enc.specific, &draw.first);
        let s2 = gather_rows(&pass.enc.specific, &draw.second);
        if reverse_weight > T::zero() {
            let rp = reverse_pass(params, &draw.prior, &s1, &s2)?;
            reverse_value = rp.loss.to_f64().unwrap();
            let (d1, d2) = reverse_backward(params, rp, reverse_weight, mode, &mut grads);
            let mut d_spec = Tensor::zeros(vec![n, params.dim_specific]);
            scatter_add_rows(&mut d_spec, &draw.first, &d1);
            scatter_add_rows(&mut d_spec, &draw.second, &d2);
            if mode == ReverseGradient::Full {
                extra = Some(d_spec);
            }
        } else {
            reverse_value = reverse_loss(params, &draw.prior, &s1, &s2)?.to_f64().unwrap();
        }
    }
    let parts = LossBreakdown::new(
        pass.recon.to_f64().unwrap(),
        pass.kl.to_f64().unwrap(),
        reverse_value,
        beta.to_f64().unwrap(),
        reverse_weight.to_f64().unwrap(),
    );
    forward_backward(params, pass, &batch.images, &batch.noise, &batch.swap, beta, extra.as_ref(), &mut grads);
    Ok((parts, grads))
}
