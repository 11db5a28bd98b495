use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{col2im, gemm, im2col, ConvGeom, MatRef};
use super::{Mode, NnError, Tensor};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// One block of a sequential network.
///
/// Shapes exclude the batch dimension. Convolutions are NCHW with zero padding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Transposed convolution; output side is `(in - 1) * stride - 2 * padding + kernel`.
    Deconv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Normalizes features (`[F]` inputs) or channels (`[C, H, W]` inputs).
    BatchNorm {
        channels: usize,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    /// Softmax over every spatial cell of each channel independently.
    ChannelSoftmax,
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    /// Output shape for a given per-sample input shape, validating compatibility.
    pub fn output_shape(&self, layer: usize, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let mismatch = |expected: Vec<usize>| NnError::ShapeMismatch {
            layer,
            expected,
            got: input.to_vec(),
        };
        let invalid = |reason: String| NnError::InvalidLayer { layer, reason };
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [*inputs] {
                    return Err(mismatch(vec![*inputs]));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != *in_channels {
                    return Err(mismatch(vec![*in_channels, 0, 0]));
                }
                if *kernel == 0 || *stride == 0 {
                    return Err(invalid("kernel and stride must be positive".into()));
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < *kernel || w < *kernel {
                    return Err(invalid(format!("kernel {kernel} larger than padded input")));
                }
                Ok(vec![
                    *out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            LayerSpec::Deconv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != *in_channels {
                    return Err(mismatch(vec![*in_channels, 0, 0]));
                }
                if *kernel == 0 || *stride == 0 {
                    return Err(invalid("kernel and stride must be positive".into()));
                }
                let side = |n: usize| -> Result<usize, NnError> {
                    let full = (n - 1) * stride + kernel;
                    full.checked_sub(2 * padding)
                        .filter(|v| *v > 0)
                        .ok_or_else(|| invalid("padding consumes the whole output".into()))
                };
                Ok(vec![*out_channels, side(input[1])?, side(input[2])?])
            }
            LayerSpec::BatchNorm { channels } => {
                if input.is_empty()
                    || input[0] != *channels
                    || !(input.len() == 1 || input.len() == 3)
                {
                    return Err(mismatch(vec![*channels]));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::ChannelSoftmax => {
                if matches!(self, LayerSpec::ChannelSoftmax) && input.len() != 3 {
                    return Err(invalid("channel softmax needs [C, H, W] input".into()));
                }
                Ok(input.to_vec())
            }
            LayerSpec::LeakyRelu { slope } => {
                if !(*slope > 0.0 && *slope < 1.0) {
                    return Err(invalid(format!("leaky slope {slope} outside (0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Reshape { shape } => {
                let n: usize = shape.iter().product();
                if n != input.iter().product::<usize>() {
                    return Err(mismatch(shape.clone()));
                }
                Ok(shape.clone())
            }
        }
    }

    /// True for elementwise layers with a kink at zero.
    pub fn is_piecewise_linear(&self) -> bool {
        matches!(self, LayerSpec::Relu | LayerSpec::LeakyRelu { .. })
    }
}

/// Running statistics kept by batch normalization for inference mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-call values needed to backpropagate through a layer.
#[derive(Clone, Debug)]
pub(crate) enum LayerCache {
    None,
    BatchNorm {
        mode: Mode,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

/// A layer instance: spec, resolved shapes, parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// Weights then bias (dense/conv), or scale then shift (batch norm).
    pub params: Vec<Tensor>,
    pub running: Option<RunningStats>,
}

impl Layer {
    pub(crate) fn build<R: Rng>(
        index: usize,
        spec: LayerSpec,
        input_shape: Vec<usize>,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let output_shape = spec.output_shape(index, &input_shape)?;
        let he_uniform = |rng: &mut R, shape: Vec<usize>, fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(shape, data).expect("sized")
        };
        let bias = |rng: &mut R, n: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(vec![n], data).expect("sized")
        };
        let (params, running) = match &spec {
            LayerSpec::Dense { inputs, outputs } => (
                vec![
                    he_uniform(rng, vec![*outputs, *inputs], *inputs),
                    bias(rng, *outputs, *inputs),
                ],
                None,
            ),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                (
                    vec![
                        he_uniform(
                            rng,
                            vec![*out_channels, *in_channels, *kernel, *kernel],
                            fan_in,
                        ),
                        bias(rng, *out_channels, fan_in),
                    ],
                    None,
                )
            }
            LayerSpec::Deconv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                // Each output cell sees about in_channels * (kernel / stride)^2 inputs.
                let per_axis = kernel.div_ceil(*stride).max(1);
                let fan_in = in_channels * per_axis * per_axis;
                (
                    vec![
                        he_uniform(
                            rng,
                            vec![*in_channels, *out_channels, *kernel, *kernel],
                            fan_in,
                        ),
                        bias(rng, *out_channels, fan_in),
                    ],
                    None,
                )
            }
            LayerSpec::BatchNorm { channels } => (
                vec![
                    Tensor::filled(vec![*channels], 1.0),
                    Tensor::zeros(vec![*channels]),
                ],
                Some(RunningStats {
                    mean: vec![0.0; *channels],
                    var: vec![1.0; *channels],
                }),
            ),
            _ => (Vec::new(), None),
        };
        Ok(Self {
            spec,
            input_shape,
            output_shape,
            params,
            running,
        })
    }

    fn conv_geom(&self) -> ConvGeom {
        match self.spec {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                stride,
                padding,
                ..
            } => ConvGeom {
                channels: in_channels,
                height: self.input_shape[1],
                width: self.input_shape[2],
                kernel,
                stride,
                padding,
                out_height: self.output_shape[1],
                out_width: self.output_shape[2],
            },
            // A transposed convolution is the adjoint of a convolution running
            // from the output grid back to the input grid.
            LayerSpec::Deconv2d {
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => ConvGeom {
                channels: out_channels,
                height: self.output_shape[1],
                width: self.output_shape[2],
                kernel,
                stride,
                padding,
                out_height: self.input_shape[1],
                out_width: self.input_shape[2],
            },
            _ => unreachable!("not a convolution"),
        }
    }

    /// Forward pass on a batch. `Training` mode returns the statistics that
    /// should be folded into the running averages.
    pub(crate) fn forward(
        &self,
        input: &Tensor,
        mode: Mode,
    ) -> (Tensor, LayerCache, Option<RunningStats>) {
        let n = input.batch();
        let mut out_shape = vec![n];
        out_shape.extend_from_slice(&self.output_shape);
        match &self.spec {
            LayerSpec::Dense { inputs, outputs } => {
                let w = &self.params[0];
                let b = self.params[1].data();
                let mut out = Vec::with_capacity(n * outputs);
                for _ in 0..n {
                    out.extend_from_slice(b);
                }
                gemm(
                    1.0,
                    MatRef::new(input.data(), n, *inputs),
                    MatRef::new(w.data(), *outputs, *inputs).t(),
                    1.0,
                    &mut out,
                );
                (
                    Tensor::new(out_shape, out).expect("sized"),
                    LayerCache::None,
                    None,
                )
            }
            LayerSpec::Conv2d { out_channels, .. } => {
                let g = self.conv_geom();
                let (rows, ohw) = (g.cols_rows(), g.cols_cols());
                let w = MatRef::new(self.params[0].data(), *out_channels, rows);
                let b = self.params[1].data();
                let per_in = input.sample_len();
                let per_out = out_channels * ohw;
                let mut out = vec![0.0; n * per_out];
                let mut cols = vec![0.0; rows * ohw];
                for s in 0..n {
                    im2col(&g, &input.data()[s * per_in..(s + 1) * per_in], &mut cols);
                    let dst = &mut out[s * per_out..(s + 1) * per_out];
                    for (c, chunk) in dst.chunks_mut(ohw).enumerate() {
                        chunk.fill(b[c]);
                    }
                    gemm(1.0, w, MatRef::new(&cols, rows, ohw), 1.0, dst);
                }
                (
                    Tensor::new(out_shape, out).expect("sized"),
                    LayerCache::None,
                    None,
                )
            }
            LayerSpec::Deconv2d {
                in_channels,
                out_channels,
                ..
            } => {
                let g = self.conv_geom();
                let (rows, hw) = (g.cols_rows(), g.cols_cols());
                let w = MatRef::new(self.params[0].data(), *in_channels, rows);
                let b = self.params[1].data();
                let per_in = input.sample_len();
                let per_out: usize = self.output_shape.iter().product();
                let plane = per_out / out_channels;
                let mut out = vec![0.0; n * per_out];
                let mut cols = vec![0.0; rows * hw];
                for s in 0..n {
                    let x = MatRef::new(
                        &input.data()[s * per_in..(s + 1) * per_in],
                        *in_channels,
                        hw,
                    );
                    gemm(1.0, w.t(), x, 0.0, &mut cols);
                    let dst = &mut out[s * per_out..(s + 1) * per_out];
                    col2im(&g, &cols, dst);
                    for (c, chunk) in dst.chunks_mut(plane).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += b[c]);
                    }
                }
                (
                    Tensor::new(out_shape, out).expect("sized"),
                    LayerCache::None,
                    None,
                )
            }
            LayerSpec::BatchNorm { channels } => {
                self.batchnorm_forward(input, *channels, mode, out_shape)
            }
            LayerSpec::Relu => {
                let data = input
                    .data()
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { 0.0 })
                    .collect();
                (
                    Tensor::new(out_shape, data).expect("sized"),
                    LayerCache::None,
                    None,
                )
            }
            LayerSpec::LeakyRelu { slope } => {
                let data = input
                    .data()
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { slope * v })
                    .collect();
                (
                    Tensor::new(out_shape, data).expect("sized"),
                    LayerCache::None,
                    None,
                )
            }
            LayerSpec::ChannelSoftmax => {
                let plane = self.output_shape[1] * self.output_shape[2];
                let mut data = input.data().to_vec();
                for chunk in data.chunks_mut(plane) {
                    let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in chunk.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    chunk.iter_mut().for_each(|v| *v /= sum);
                }
                (
                    Tensor::new(out_shape, data).expect("sized"),
                    LayerCache::None,
                    None,
                )
            }
            LayerSpec::Reshape { .. } => (
                Tensor::new(out_shape, input.data().to_vec()).expect("sized"),
                LayerCache::None,
                None,
            ),
        }
    }

    fn batchnorm_forward(
        &self,
        input: &Tensor,
        channels: usize,
        mode: Mode,
        out_shape: Vec<usize>,
    ) -> (Tensor, LayerCache, Option<RunningStats>) {
        let n = input.batch();
        let plane = input.sample_len() / channels;
        let count = (n * plane) as f64;
        let gamma = self.params[0].data();
        let beta = self.params[1].data();
        let running = self.running.as_ref().expect("batch norm has running stats");
        let x = input.data();
        let idx = |s: usize, c: usize| (s * channels + c) * plane;

        let (mean, var, batch_stats) = match mode {
            Mode::Training => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for c in 0..channels {
                    let mut sum = 0.0;
                    for s in 0..n {
                        sum += x[idx(s, c)..idx(s, c) + plane].iter().sum::<f64>();
                    }
                    mean[c] = sum / count;
                    let mut sq = 0.0;
                    for s in 0..n {
                        sq += x[idx(s, c)..idx(s, c) + plane]
                            .iter()
                            .map(|v| (v - mean[c]).powi(2))
                            .sum::<f64>();
                    }
                    var[c] = sq / count;
                }
                let unbiased = if count > 1.0 {
                    var.iter().map(|v| v * count / (count - 1.0)).collect()
                } else {
                    var.clone()
                };
                let stats = RunningStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            Mode::Inference => (running.mean.clone(), running.var.clone(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut normalized = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for s in 0..n {
            for c in 0..channels {
                let range = idx(s, c)..idx(s, c) + plane;
                for i in range {
                    let h = (x[i] - mean[c]) * inv_std[c];
                    normalized[i] = h;
                    out[i] = gamma[c] * h + beta[c];
                }
            }
        }
        (
            Tensor::new(out_shape, out).expect("sized"),
            LayerCache::BatchNorm {
                mode,
                normalized,
                inv_std,
            },
            batch_stats,
        )
    }

    /// Backward pass: returns parameter gradients (same order as `params`)
    /// and the gradient with respect to the layer input.
    pub(crate) fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        cache: &LayerCache,
        grad_out: &Tensor,
    ) -> (Vec<Tensor>, Tensor) {
        let n = input.batch();
        let in_shape = input.shape().to_vec();
        match &self.spec {
            LayerSpec::Dense { inputs, outputs } => {
                let w = &self.params[0];
                let g = MatRef::new(grad_out.data(), n, *outputs);
                let mut dw = vec![0.0; outputs * inputs];
                gemm(
                    1.0,
                    g.t(),
                    MatRef::new(input.data(), n, *inputs),
                    0.0,
                    &mut dw,
                );
                let mut db = vec![0.0; *outputs];
                for row in grad_out.data().chunks(*outputs) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                let mut dx = vec![0.0; n * inputs];
                gemm(
                    1.0,
                    g,
                    MatRef::new(w.data(), *outputs, *inputs),
                    0.0,
                    &mut dx,
                );
                (
                    vec![
                        Tensor::new(w.shape().to_vec(), dw).expect("sized"),
                        Tensor::new(vec![*outputs], db).expect("sized"),
                    ],
                    Tensor::new(in_shape, dx).expect("sized"),
                )
            }
            LayerSpec::Conv2d { out_channels, .. } => {
                let g = self.conv_geom();
                let (rows, ohw) = (g.cols_rows(), g.cols_cols());
                let w = MatRef::new(self.params[0].data(), *out_channels, rows);
                let per_in = input.sample_len();
                let per_out = out_channels * ohw;
                let mut dw = vec![0.0; out_channels * rows];
                let mut db = vec![0.0; *out_channels];
                let mut dx = vec![0.0; n * per_in];
                let mut cols = vec![0.0; rows * ohw];
                let mut dcols = vec![0.0; rows * ohw];
                for s in 0..n {
                    im2col(&g, &input.data()[s * per_in..(s + 1) * per_in], &mut cols);
                    let gs = &grad_out.data()[s * per_out..(s + 1) * per_out];
                    let gm = MatRef::new(gs, *out_channels, ohw);
                    gemm(1.0, gm, MatRef::new(&cols, rows, ohw).t(), 1.0, &mut dw);
                    for (c, chunk) in gs.chunks(ohw).enumerate() {
                        db[c] += chunk.iter().sum::<f64>();
                    }
                    gemm(1.0, w.t(), gm, 0.0, &mut dcols);
                    col2im(&g, &dcols, &mut dx[s * per_in..(s + 1) * per_in]);
                }
                (
                    vec![
                        Tensor::new(self.params[0].shape().to_vec(), dw).expect("sized"),
                        Tensor::new(vec![*out_channels], db).expect("sized"),
                    ],
                    Tensor::new(in_shape, dx).expect("sized"),
                )
            }
            LayerSpec::Deconv2d {
                in_channels,
                out_channels,
                ..
            } => {
                let g = self.conv_geom();
                let (rows, hw) = (g.cols_rows(), g.cols_cols());
                let w = MatRef::new(self.params[0].data(), *in_channels, rows);
                let per_in = input.sample_len();
                let per_out = grad_out.sample_len();
                let plane = per_out / out_channels;
                let mut dw = vec![0.0; in_channels * rows];
                let mut db = vec![0.0; *out_channels];
                let mut dx = vec![0.0; n * per_in];
                let mut dcols = vec![0.0; rows * hw];
                for s in 0..n {
                    let gs = &grad_out.data()[s * per_out..(s + 1) * per_out];
                    for (c, chunk) in gs.chunks(plane).enumerate() {
                        db[c] += chunk.iter().sum::<f64>();
                    }
                    im2col(&g, gs, &mut dcols);
                    let dc = MatRef::new(&dcols, rows, hw);
                    let xs = MatRef::new(
                        &input.data()[s * per_in..(s + 1) * per_in],
                        *in_channels,
                        hw,
                    );
                    gemm(1.0, xs, dc.t(), 1.0, &mut dw);
                    gemm(1.0, w, dc, 0.0, &mut dx[s * per_in..(s + 1) * per_in]);
                }
                (
                    vec![
                        Tensor::new(self.params[0].shape().to_vec(), dw).expect("sized"),
                        Tensor::new(vec![*out_channels], db).expect("sized"),
                    ],
                    Tensor::new(in_shape, dx).expect("sized"),
                )
            }
            LayerSpec::BatchNorm { channels } => {
                let LayerCache::BatchNorm {
                    mode,
                    normalized,
                    inv_std,
                } = cache
                else {
                    unreachable!("batch norm cache")
                };
                let plane = input.sample_len() / channels;
                let count = (n * plane) as f64;
                let gamma = self.params[0].data();
                let dy = grad_out.data();
                let idx = |s: usize, c: usize| (s * channels + c) * plane;
                let mut dgamma = vec![0.0; *channels];
                let mut dbeta = vec![0.0; *channels];
                for s in 0..n {
                    for c in 0..*channels {
                        for i in idx(s, c)..idx(s, c) + plane {
                            dgamma[c] += dy[i] * normalized[i];
                            dbeta[c] += dy[i];
                        }
                    }
                }
                let mut dx = vec![0.0; dy.len()];
                for s in 0..n {
                    for c in 0..*channels {
                        let k = gamma[c] * inv_std[c];
                        for i in idx(s, c)..idx(s, c) + plane {
                            dx[i] = match mode {
                                Mode::Inference => k * dy[i],
                                Mode::Training => {
                                    k / count
                                        * (count * dy[i] - dbeta[c] - normalized[i] * dgamma[c])
                                }
                            };
                        }
                    }
                }
                (
                    vec![
                        Tensor::new(vec![*channels], dgamma).expect("sized"),
                        Tensor::new(vec![*channels], dbeta).expect("sized"),
                    ],
                    Tensor::new(in_shape, dx).expect("sized"),
                )
            }
            LayerSpec::Relu => {
                let dx = input
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                (Vec::new(), Tensor::new(in_shape, dx).expect("sized"))
            }
            LayerSpec::LeakyRelu { slope } => {
                let dx = input
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { slope * g })
                    .collect();
                (Vec::new(), Tensor::new(in_shape, dx).expect("sized"))
            }
            LayerSpec::ChannelSoftmax => {
                let plane = self.output_shape[1] * self.output_shape[2];
                let mut dx = vec![0.0; output.len()];
                for ((y, g), d) in output
                    .data()
                    .chunks(plane)
                    .zip(grad_out.data().chunks(plane))
                    .zip(dx.chunks_mut(plane))
                {
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    for i in 0..plane {
                        d[i] = y[i] * (g[i] - dot);
                    }
                }
                (Vec::new(), Tensor::new(in_shape, dx).expect("sized"))
            }
            LayerSpec::Reshape { .. } => (
                Vec::new(),
                Tensor::new(in_shape, grad_out.data().to_vec()).expect("sized"),
            ),
        }
    }
}
