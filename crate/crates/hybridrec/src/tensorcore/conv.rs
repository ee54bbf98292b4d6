//! 2-D convolution, batch normalization and max pooling over
//! `[batch, channels, height, width]` tensors.

use rand::Rng;

use super::tensor::{assert_same_shape, Mode, Param, ParamVisitor, Tensor};

/// Cross-correlation with same-padding and stride 1.
///
/// Kernel layout `[out_ch, in_ch, kh, kw]` with odd kh/kw.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: Param,
    pub bias: Param, // [out_ch]
    cache_input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kh: usize, kw: usize, rng: &mut impl Rng) -> Self {
        assert!(kh % 2 == 1 && kw % 2 == 1, "conv2d kernel dims must be odd");
        let fan_in = in_ch * kh * kw;
        let fan_out = out_ch * kh * kw;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..out_ch * in_ch * kh * kw)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Conv2d {
            kernel: Param::new(Tensor::from_vec(&[out_ch, in_ch, kh, kw], data)),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            cache_input: None,
        }
    }

    pub fn in_ch(&self) -> usize {
        self.kernel.value.shape[1]
    }

    pub fn out_ch(&self) -> usize {
        self.kernel.value.shape[0]
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.rank(), 4, "conv2d expects [batch, ch, h, w]");
        assert_same_shape("conv2d input channels", &[self.in_ch()], &[x.dim(1)]);
        let (batch, cin, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (cout, kh, kw) = (
            self.out_ch(),
            self.kernel.value.shape[2],
            self.kernel.value.shape[3],
        );
        let (ph, pw) = (kh / 2, kw / 2);
        let mut out = Tensor::zeros(&[batch, cout, h, w]);
        let k = &self.kernel.value.data;
        for b in 0..batch {
            for co in 0..cout {
                let out_base = ((b * cout) + co) * h * w;
                let bias = self.bias.value.data[co];
                for v in &mut out.data[out_base..out_base + h * w] {
                    *v = bias;
                }
                for ci in 0..cin {
                    let in_base = ((b * cin) + ci) * h * w;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let kv = k[(((co * cin) + ci) * kh + ky) * kw + kx];
                            if kv == 0.0 {
                                continue;
                            }
                            let dy = ky as isize - ph as isize;
                            let dx = kx as isize - pw as isize;
                            let x0 = (-dx).max(0) as usize;
                            let x1 = ((w as isize - dx).min(w as isize)) as usize;
                            if x0 >= x1 {
                                continue;
                            }
                            for y in 0..h {
                                let iy = y as isize + dy;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let orow = out_base + y * w;
                                let istart =
                                    in_base + iy as usize * w + (x0 as isize + dx) as usize;
                                let (os, is) = (
                                    &mut out.data[orow + x0..orow + x1],
                                    &x.data[istart..istart + (x1 - x0)],
                                );
                                for (o, &i) in os.iter_mut().zip(is) {
                                    *o += kv * i;
                                }
                            }
                        }
                    }
                }
            }
        }
        self.cache_input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .cache_input
            .take()
            .expect("conv2d backward called without forward");
        let (batch, cin, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (cout, kh, kw) = (
            self.out_ch(),
            self.kernel.value.shape[2],
            self.kernel.value.shape[3],
        );
        assert_same_shape("conv2d grad", &[batch, cout, h, w], &grad_out.shape);
        let (ph, pw) = (kh / 2, kw / 2);
        let mut grad_in = Tensor::zeros(&x.shape);
        let k = &self.kernel.value.data;
        let gk = &mut self.kernel.grad.data;
        for b in 0..batch {
            for co in 0..cout {
                let out_base = ((b * cout) + co) * h * w;
                let gsum: f64 = grad_out.data[out_base..out_base + h * w].iter().sum();
                self.bias.grad.data[co] += gsum;
                for ci in 0..cin {
                    let in_base = ((b * cin) + ci) * h * w;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let kidx = (((co * cin) + ci) * kh + ky) * kw + kx;
                            let kv = k[kidx];
                            let dy = ky as isize - ph as isize;
                            let dx = kx as isize - pw as isize;
                            let x0 = (-dx).max(0) as usize;
                            let x1 = ((w as isize - dx).min(w as isize)) as usize;
                            if x0 >= x1 {
                                continue;
                            }
                            let mut kacc = 0.0;
                            for y in 0..h {
                                let iy = y as isize + dy;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let orow = out_base + y * w;
                                let istart =
                                    in_base + iy as usize * w + (x0 as isize + dx) as usize;
                                let gs = &grad_out.data[orow + x0..orow + x1];
                                let is = &x.data[istart..istart + (x1 - x0)];
                                for (&g, &i) in gs.iter().zip(is) {
                                    kacc += g * i;
                                }
                                let gis = &mut grad_in.data[istart..istart + (x1 - x0)];
                                for (gi, &g) in gis.iter_mut().zip(gs) {
                                    *gi += kv * g;
                                }
                            }
                            gk[kidx] += kacc;
                        }
                    }
                }
            }
        }
        grad_in
    }
}

impl ParamVisitor for Conv2d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.kernel);
        f(&mut self.bias);
    }
}

pub const BATCHNORM_EPS: f64 = 1e-5;
const BATCHNORM_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization with learned scale/shift and running
/// statistics for inference.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param, // [ch]
    pub beta: Param,  // [ch]
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
    train: bool,
}

impl BatchNorm2d {
    pub fn new(ch: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::from_vec(&[ch], vec![1.0; ch])),
            beta: Param::new(Tensor::zeros(&[ch])),
            running_mean: Tensor::zeros(&[ch]),
            running_var: Tensor::from_vec(&[ch], vec![1.0; ch]),
            cache: None,
        }
    }

    pub fn ch(&self) -> usize {
        self.gamma.value.len()
    }

    fn channel_indices(x: &Tensor, c: usize) -> impl Iterator<Item = usize> + '_ {
        let (batch, ch, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let plane = h * w;
        (0..batch).flat_map(move |b| {
            let base = ((b * ch) + c) * plane;
            base..base + plane
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert_eq!(x.rank(), 4, "batchnorm expects [batch, ch, h, w]");
        assert_same_shape("batchnorm channels", &[self.ch()], &[x.dim(1)]);
        let ch = self.ch();
        let n = (x.dim(0) * x.dim(2) * x.dim(3)) as f64;
        let mut out = Tensor::zeros(&x.shape);
        let mut normalized = Tensor::zeros(&x.shape);
        let mut inv_stds = vec![0.0; ch];
        for c in 0..ch {
            let (mean, var) = if mode == Mode::Train {
                let mut sum = 0.0;
                for i in Self::channel_indices(x, c) {
                    sum += x.data[i];
                }
                let mean = sum / n;
                let mut sq = 0.0;
                for i in Self::channel_indices(x, c) {
                    let d = x.data[i] - mean;
                    sq += d * d;
                }
                let var = sq / n;
                self.running_mean.data[c] =
                    (1.0 - BATCHNORM_MOMENTUM) * self.running_mean.data[c] + BATCHNORM_MOMENTUM * mean;
                self.running_var.data[c] =
                    (1.0 - BATCHNORM_MOMENTUM) * self.running_var.data[c] + BATCHNORM_MOMENTUM * var;
                (mean, var)
            } else {
                (self.running_mean.data[c], self.running_var.data[c])
            };
            let inv_std = 1.0 / (var + BATCHNORM_EPS).sqrt();
            inv_stds[c] = inv_std;
            let g = self.gamma.value.data[c];
            let beta = self.beta.value.data[c];
            for i in Self::channel_indices(x, c) {
                let xn = (x.data[i] - mean) * inv_std;
                normalized.data[i] = xn;
                out.data[i] = g * xn + beta;
            }
        }
        self.cache = Some(BnCache {
            normalized,
            inv_std: inv_stds,
            train: mode == Mode::Train,
        });
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let cache = self
            .cache
            .take()
            .expect("batchnorm backward called without forward");
        let xn = &cache.normalized;
        assert_same_shape("batchnorm grad", &xn.shape, &grad_out.shape);
        let ch = self.ch();
        let n = (xn.dim(0) * xn.dim(2) * xn.dim(3)) as f64;
        let mut grad_in = Tensor::zeros(&xn.shape);
        for c in 0..ch {
            let g = self.gamma.value.data[c];
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for i in Self::channel_indices(xn, c) {
                sum_g += grad_out.data[i];
                sum_gx += grad_out.data[i] * xn.data[i];
            }
            self.gamma.grad.data[c] += sum_gx;
            self.beta.grad.data[c] += sum_g;
            let inv_std = cache.inv_std[c];
            if cache.train {
                for i in Self::channel_indices(xn, c) {
                    grad_in.data[i] = g * inv_std / n
                        * (n * grad_out.data[i] - sum_g - xn.data[i] * sum_gx);
                }
            } else {
                // Inference stats are constants, so the map is affine.
                for i in Self::channel_indices(xn, c) {
                    grad_in.data[i] = g * inv_std * grad_out.data[i];
                }
            }
        }
        grad_in
    }
}

impl ParamVisitor for BatchNorm2d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// 2x2 window, stride-2 max pooling. Output dims are floor(h/2), floor(w/2);
/// ties route the gradient to the first maximum in row-major order.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2d {
    cache: Option<(Vec<usize>, Vec<usize>)>, // (input shape, argmax flat index)
}

impl MaxPool2d {
    pub fn new() -> Self {
        MaxPool2d { cache: None }
    }

    /// Output height/width for a given input dim; pooling needs dim >= 2.
    pub fn out_dim(d: usize) -> usize {
        d / 2
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.rank(), 4, "maxpool2d expects [batch, ch, h, w]");
        let (batch, ch, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        assert!(h >= 2 && w >= 2, "maxpool2d needs h,w >= 2, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[batch, ch, oh, ow]);
        let mut argmax = vec![0usize; out.len()];
        for b in 0..batch {
            for c in 0..ch {
                let in_base = ((b * ch) + c) * h * w;
                let out_base = ((b * ch) + c) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for ky in 0..2 {
                            for kx in 0..2 {
                                let idx = in_base + (oy * 2 + ky) * w + ox * 2 + kx;
                                if x.data[idx] > best {
                                    best = x.data[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out.data[out_base + oy * ow + ox] = best;
                        argmax[out_base + oy * ow + ox] = best_idx;
                    }
                }
            }
        }
        self.cache = Some((x.shape.clone(), argmax));
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let (shape, argmax) = self
            .cache
            .take()
            .expect("maxpool2d backward called without forward");
        let mut grad_in = Tensor::zeros(&shape);
        for (o, &src) in argmax.iter().enumerate() {
            grad_in.data[src] += grad_out.data[o];
        }
        grad_in
    }
}
