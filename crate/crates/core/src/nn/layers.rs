use super::{Real, Tensor};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Window {
    k: usize,
    stride: usize,
    pad: usize,
}

impl Window {
    fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Output columns `ox` for which `ox * stride + kx - pad` lands in `[0, len)`.
    fn valid_range(&self, kx: usize, len: usize, out_len: usize) -> (usize, usize) {
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        let hi_num = len + self.pad;
        let hi = if hi_num > kx {
            ((hi_num - kx - 1) / self.stride + 1).min(out_len)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Lower a `[C, N, H, W]` image batch to a `[C*k*k, N*Ho*Wo]` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    c: usize,
    n: usize,
    h: usize,
    w: usize,
    win: Window,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let k = win.k;
    let np = n * ho * wo;
    let mut cols = vec![T::zero(); c * k * k * np];
    for ci in 0..c {
        for ky in 0..k {
            let (oy_lo, oy_hi) = win.valid_range(ky, h, ho);
            for kx in 0..k {
                let (ox_lo, ox_hi) = win.valid_range(kx, w, wo);
                let row = ((ci * k + ky) * k + kx) * np;
                for ni in 0..n {
                    let src_base = (ci * n + ni) * h * w;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * win.stride + ky - win.pad;
                        let dst = row + (ni * ho + oy) * wo;
                        let src = src_base + iy * w;
                        for ox in ox_lo..ox_hi {
                            cols[dst + ox] = x[src + ox * win.stride + kx - win.pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back onto the image grid.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    n: usize,
    h: usize,
    w: usize,
    win: Window,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let k = win.k;
    let np = n * ho * wo;
    let mut x = vec![T::zero(); c * n * h * w];
    for ci in 0..c {
        for ky in 0..k {
            let (oy_lo, oy_hi) = win.valid_range(ky, h, ho);
            for kx in 0..k {
                let (ox_lo, ox_hi) = win.valid_range(kx, w, wo);
                let row = ((ci * k + ky) * k + kx) * np;
                for ni in 0..n {
                    let dst_base = (ci * n + ni) * h * w;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * win.stride + ky - win.pad;
                        let src = row + (ni * ho + oy) * wo;
                        let dst = dst_base + iy * w;
                        for ox in ox_lo..ox_hi {
                            x[dst + ox * win.stride + kx - win.pad] += cols[src + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn uniform_init<T: Real, R: Rng + ?Sized>(rng: &mut R, len: usize, bound: f64) -> Vec<T> {
    (0..len)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect()
}

/// 2-D convolution, weight `[out, in*k*k]` followed by bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    win: Window,
    pub params: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let mut params = uniform_init(rng, out_ch * fan_in, (6.0 / fan_in as f64).sqrt());
        params.extend(std::iter::repeat_n(T::zero(), out_ch));
        Self {
            in_ch,
            out_ch,
            win: Window {
                k: kernel,
                stride,
                pad,
            },
            params,
        }
    }

    fn kk(&self) -> usize {
        self.in_ch * self.win.k * self.win.k
    }

    fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let [c, n, h, w] = dims4(x);
        assert_eq!(c, self.in_ch, "conv input channels");
        let (ho, wo) = (self.win.out_len(h), self.win.out_len(w));
        let cols = im2col(x.data(), c, n, h, w, self.win, ho, wo);
        let np = n * ho * wo;
        let kk = self.kk();
        let (weight, bias) = self.params.split_at(self.out_ch * kk);
        let mut out = vec![T::zero(); self.out_ch * np];
        for (row, &b) in out.chunks_exact_mut(np).zip(bias) {
            row.fill(b);
        }
        T::gemm(self.out_ch, kk, np, weight, false, &cols, false, &mut out, T::one());
        (Tensor::new(vec![self.out_ch, n, ho, wo], out), cols)
    }

    fn backward(
        &self,
        cols: &[T],
        in_dims: &[usize],
        dy: &Tensor<T>,
        grad: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let [_, n, ho, wo] = dims4(dy);
        let np = n * ho * wo;
        let kk = self.kk();
        let (gw, gb) = grad.split_at_mut(self.out_ch * kk);
        T::gemm(self.out_ch, np, kk, dy.data(), false, cols, true, gw, T::one());
        for (g, row) in gb.iter_mut().zip(dy.data().chunks_exact(np)) {
            *g += row.iter().copied().sum::<T>();
        }
        if !need_dx {
            return None;
        }
        let weight = &self.params[..self.out_ch * kk];
        let mut dcols = vec![T::zero(); kk * np];
        T::gemm(kk, self.out_ch, np, weight, true, dy.data(), false, &mut dcols, T::zero());
        let (h, w) = (in_dims[2], in_dims[3]);
        let dx = col2im(&dcols, self.in_ch, n, h, w, self.win, ho, wo);
        Some(Tensor::new(in_dims.to_vec(), dx))
    }
}

/// Transposed convolution (fractionally strided), weight `[in, out*k*k]`
/// followed by bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    win: Window,
    pub params: Vec<T>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        // each output pixel receives roughly in*k*k/stride^2 contributions
        let fan_in = (in_ch * kernel * kernel / (stride * stride)).max(1);
        let mut params = uniform_init(
            rng,
            in_ch * out_ch * kernel * kernel,
            (6.0 / fan_in as f64).sqrt(),
        );
        params.extend(std::iter::repeat_n(T::zero(), out_ch));
        Self {
            in_ch,
            out_ch,
            win: Window {
                k: kernel,
                stride,
                pad,
            },
            params,
        }
    }

    fn out_len(&self, len: usize) -> usize {
        (len - 1) * self.win.stride + self.win.k - 2 * self.win.pad
    }

    fn okk(&self) -> usize {
        self.out_ch * self.win.k * self.win.k
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [c, n, h, w] = dims4(x);
        assert_eq!(c, self.in_ch, "deconv input channels");
        let (ho, wo) = (self.out_len(h), self.out_len(w));
        let okk = self.okk();
        let nhw = n * h * w;
        let (weight, bias) = self.params.split_at(self.in_ch * okk);
        let mut cols = vec![T::zero(); okk * nhw];
        T::gemm(okk, self.in_ch, nhw, weight, true, x.data(), false, &mut cols, T::zero());
        let mut out = col2im(&cols, self.out_ch, n, ho, wo, self.win, h, w);
        let plane = n * ho * wo;
        for (chunk, &b) in out.chunks_exact_mut(plane).zip(bias) {
            for v in chunk {
                *v += b;
            }
        }
        Tensor::new(vec![self.out_ch, n, ho, wo], out)
    }

    fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grad: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let [_, n, h, w] = dims4(x);
        let [_, _, ho, wo] = dims4(dy);
        let okk = self.okk();
        let nhw = n * h * w;
        let dcols = im2col(dy.data(), self.out_ch, n, ho, wo, self.win, h, w);
        let (gw, gb) = grad.split_at_mut(self.in_ch * okk);
        T::gemm(self.in_ch, nhw, okk, x.data(), false, &dcols, true, gw, T::one());
        let plane = n * ho * wo;
        for (g, chunk) in gb.iter_mut().zip(dy.data().chunks_exact(plane)) {
            *g += chunk.iter().copied().sum::<T>();
        }
        if !need_dx {
            return None;
        }
        let weight = &self.params[..self.in_ch * okk];
        let mut dx = vec![T::zero(); self.in_ch * nhw];
        T::gemm(self.in_ch, okk, nhw, weight, false, &dcols, false, &mut dx, T::zero());
        Some(Tensor::new(x.dims().to_vec(), dx))
    }
}

/// Fully connected layer on `[N, in]` rows, weight `[out, in]` then bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub params: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, out_dim: usize, gain: f64) -> Self {
        let bound = gain * (3.0 / in_dim as f64).sqrt();
        let mut params = uniform_init(rng, in_dim * out_dim, bound);
        params.extend(std::iter::repeat_n(T::zero(), out_dim));
        Self {
            in_dim,
            out_dim,
            params,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.dims()[0];
        assert_eq!(x.dims()[1], self.in_dim, "linear input width");
        let (weight, bias) = self.params.split_at(self.in_dim * self.out_dim);
        let mut out = Vec::with_capacity(n * self.out_dim);
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        T::gemm(n, self.in_dim, self.out_dim, x.data(), false, weight, true, &mut out, T::one());
        Tensor::new(vec![n, self.out_dim], out)
    }

    fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grad: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let n = x.dims()[0];
        let (gw, gb) = grad.split_at_mut(self.in_dim * self.out_dim);
        T::gemm(self.out_dim, n, self.in_dim, dy.data(), true, x.data(), false, gw, T::one());
        for row in dy.data().chunks_exact(self.out_dim) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        if !need_dx {
            return None;
        }
        let weight = &self.params[..self.in_dim * self.out_dim];
        let mut dx = vec![T::zero(); n * self.in_dim];
        T::gemm(n, self.out_dim, self.in_dim, dy.data(), false, weight, false, &mut dx, T::zero());
        Some(Tensor::new(vec![n, self.in_dim], dx))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    ConvTranspose2d(ConvTranspose2d<T>),
    Linear(Linear<T>),
    Relu,
    Sigmoid,
    Tanh,
    /// `[C, N, H, W]` to `[N, C*H*W]`.
    Flatten,
    /// `[N, C*H*W]` to `[C, N, H, W]`.
    Unflatten { c: usize, h: usize, w: usize },
}

impl<T: Real> Layer<T> {
    pub fn params(&self) -> Option<&Vec<T>> {
        match self {
            Layer::Conv2d(l) => Some(&l.params),
            Layer::ConvTranspose2d(l) => Some(&l.params),
            Layer::Linear(l) => Some(&l.params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut Vec<T>> {
        match self {
            Layer::Conv2d(l) => Some(&mut l.params),
            Layer::ConvTranspose2d(l) => Some(&mut l.params),
            Layer::Linear(l) => Some(&mut l.params),
            _ => None,
        }
    }
}

enum Cache<T> {
    Cols { cols: Vec<T>, in_dims: Vec<usize> },
    Input(Tensor<T>),
    Output(Tensor<T>),
    Dims(Vec<usize>),
}

/// Per-layer intermediates recorded by [`Sequential::forward_train`].
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
}

/// Ordered stack of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

fn dims4<T: Real>(x: &Tensor<T>) -> [usize; 4] {
    let d = x.dims();
    assert_eq!(d.len(), 4, "expected a [C, N, H, W] tensor, got {d:?}");
    [d[0], d[1], d[2], d[3]]
}

fn flatten<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [c, n, h, w] = dims4(x);
    let hw = h * w;
    let mut out = vec![T::zero(); x.len()];
    for ci in 0..c {
        for ni in 0..n {
            let src = (ci * n + ni) * hw;
            let dst = ni * c * hw + ci * hw;
            out[dst..dst + hw].copy_from_slice(&x.data()[src..src + hw]);
        }
    }
    Tensor::new(vec![n, c * hw], out)
}

fn unflatten<T: Real>(x: &Tensor<T>, c: usize, h: usize, w: usize) -> Tensor<T> {
    let n = x.dims()[0];
    assert_eq!(x.dims()[1], c * h * w, "unflatten width");
    let hw = h * w;
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let src = ni * c * hw + ci * hw;
            let dst = (ci * n + ni) * hw;
            out[dst..dst + hw].copy_from_slice(&x.data()[src..src + hw]);
        }
    }
    Tensor::new(vec![c, n, h, w], out)
}

fn map<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.dims().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::new(
        a.dims().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    /// Inference pass; nothing is retained for backpropagation.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv2d(l) => l.forward(&cur).0,
                Layer::ConvTranspose2d(l) => l.forward(&cur),
                Layer::Linear(l) => l.forward(&cur),
                Layer::Relu => map(&cur, |v| v.max(T::zero())),
                Layer::Sigmoid => map(&cur, sigmoid),
                Layer::Tanh => map(&cur, |v| v.tanh()),
                Layer::Flatten => flatten(&cur),
                Layer::Unflatten { c, h, w } => unflatten(&cur, *c, *h, *w),
            };
        }
        cur
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, Trace<T>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Conv2d(l) => {
                    let in_dims = cur.dims().to_vec();
                    let (y, cols) = l.forward(&cur);
                    (y, Cache::Cols { cols, in_dims })
                }
                Layer::ConvTranspose2d(l) => {
                    let y = l.forward(&cur);
                    (y, Cache::Input(cur))
                }
                Layer::Linear(l) => {
                    let y = l.forward(&cur);
                    (y, Cache::Input(cur))
                }
                Layer::Relu => {
                    let y = map(&cur, |v| v.max(T::zero()));
                    (y.clone(), Cache::Output(y))
                }
                Layer::Sigmoid => {
                    let y = map(&cur, sigmoid);
                    (y.clone(), Cache::Output(y))
                }
                Layer::Tanh => {
                    let y = map(&cur, |v| v.tanh());
                    (y.clone(), Cache::Output(y))
                }
                Layer::Flatten => {
                    let d = cur.dims().to_vec();
                    (flatten(&cur), Cache::Dims(d))
                }
                Layer::Unflatten { c, h, w } => {
                    let d = cur.dims().to_vec();
                    (unflatten(&cur, *c, *h, *w), Cache::Dims(d))
                }
            };
            caches.push(cache);
            cur = next;
        }
        (cur, Trace { caches })
    }

    /// Backpropagate `dy` through the recorded trace, accumulating parameter
    /// gradients into `grads` (one buffer per parametric layer, see
    /// [`Sequential::zero_grads`]). Returns the input gradient when requested.
    pub fn backward(
        &self,
        trace: Trace<T>,
        dy: Tensor<T>,
        grads: &mut [Vec<T>],
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        assert_eq!(trace.caches.len(), self.layers.len(), "trace/layer mismatch");
        let mut slot = self.layers.iter().filter(|l| l.params().is_some()).count();
        let mut cur = dy;
        for (idx, (layer, cache)) in self
            .layers
            .iter()
            .zip(trace.caches)
            .enumerate()
            .rev()
        {
            let need = need_input_grad || idx > 0;
            let next = match (layer, cache) {
                (Layer::Conv2d(l), Cache::Cols { cols, in_dims }) => {
                    slot -= 1;
                    l.backward(&cols, &in_dims, &cur, &mut grads[slot], need)
                }
                (Layer::ConvTranspose2d(l), Cache::Input(x)) => {
                    slot -= 1;
                    l.backward(&x, &cur, &mut grads[slot], need)
                }
                (Layer::Linear(l), Cache::Input(x)) => {
                    slot -= 1;
                    l.backward(&x, &cur, &mut grads[slot], need)
                }
                (Layer::Relu, Cache::Output(y)) => Some(zip_map(&cur, &y, |g, v| {
                    if v > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                })),
                (Layer::Sigmoid, Cache::Output(y)) => {
                    Some(zip_map(&cur, &y, |g, v| g * v * (T::one() - v)))
                }
                (Layer::Tanh, Cache::Output(y)) => {
                    Some(zip_map(&cur, &y, |g, v| g * (T::one() - v * v)))
                }
                (Layer::Flatten, Cache::Dims(d)) => {
                    Some(unflatten(&cur, d[0], d[2], d[3]))
                }
                (Layer::Unflatten { .. }, Cache::Dims(_)) => Some(flatten(&cur)),
                _ => unreachable!("trace entry does not match its layer"),
            };
            match next {
                Some(t) => cur = t,
                None => return None,
            }
        }
        Some(cur)
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params().map(|p| vec![T::zero(); p.len()]).collect()
    }

    pub fn params(&self) -> impl Iterator<Item = &Vec<T>> {
        self.layers.iter().filter_map(|l| l.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().filter_map(|l| l.params_mut())
    }

    pub fn num_params(&self) -> usize {
        self.params().map(Vec::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Sequential<U> {
        let conv = |p: &Vec<T>| -> Vec<U> {
            p.iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect()
        };
        Sequential {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                        in_ch: c.in_ch,
                        out_ch: c.out_ch,
                        win: c.win,
                        params: conv(&c.params),
                    }),
                    Layer::ConvTranspose2d(c) => Layer::ConvTranspose2d(ConvTranspose2d {
                        in_ch: c.in_ch,
                        out_ch: c.out_ch,
                        win: c.win,
                        params: conv(&c.params),
                    }),
                    Layer::Linear(c) => Layer::Linear(Linear {
                        in_dim: c.in_dim,
                        out_dim: c.out_dim,
                        params: conv(&c.params),
                    }),
                    Layer::Relu => Layer::Relu,
                    Layer::Sigmoid => Layer::Sigmoid,
                    Layer::Tanh => Layer::Tanh,
                    Layer::Flatten => Layer::Flatten,
                    Layer::Unflatten { c, h, w } => Layer::Unflatten {
                        c: *c,
                        h: *h,
                        w: *w,
                    },
                })
                .collect(),
        }
    }
}
