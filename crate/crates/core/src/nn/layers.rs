//! Layer kinds with their forward and backward rules.
//!
//! Activations are stored channels-last: images are `N × H × W × C`, dense
//! activations `N × F`. Batch normalization normalizes over every axis but the
//! last.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{OsrError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    /// `bias = false` for layers feeding a batchnorm, whose shift makes a
    /// bias redundant.
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    /// Valid-padding square convolution.
    Conv2d {
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        bias: bool,
    },
    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    MaxPool2,
    Relu,
    /// Inverted dropout: kept units are scaled by `1 / keep` during training.
    Dropout {
        keep: f64,
    },
    BatchNorm {
        momentum: f64,
        epsilon: f64,
    },
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl LayerSpec {
    pub fn batchnorm() -> Self {
        LayerSpec::BatchNorm {
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2 => "maxpool2",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Dense {
                inputs, outputs, ..
            } if inputs == 0 || outputs == 0 => Err(
                OsrError::Config("dense layer widths must be positive".into()),
            ),
            LayerSpec::Conv2d {
                kernel,
                in_channels,
                out_channels,
                stride,
                ..
            } if kernel == 0 || in_channels == 0 || out_channels == 0 || stride == 0 => Err(
                OsrError::Config("conv2d kernel, channels and stride must be positive".into()),
            ),
            LayerSpec::Dropout { keep } if !(keep > 0.0 && keep <= 1.0) => Err(OsrError::Config(
                format!("dropout keep probability {keep} outside (0, 1]"),
            )),
            LayerSpec::BatchNorm { momentum, epsilon }
                if !(0.0..1.0).contains(&momentum) || epsilon <= 0.0 =>
            {
                Err(OsrError::Config(
                    "batchnorm needs momentum in [0, 1) and positive epsilon".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: String| {
            Err(OsrError::Config(format!(
                "{} layer cannot take input shape {:?}: {}",
                self.kind(),
                input,
                what
            )))
        };
        match *self {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => {
                let width: usize = input.iter().product();
                if width != inputs {
                    return mismatch(format!("expects {inputs} features, got {width}"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                kernel,
                in_channels,
                out_channels,
                stride,
                ..
            } => {
                if input.len() != 3 || input[2] != in_channels {
                    return mismatch(format!("expects H × W × {in_channels}"));
                }
                if input[0] < kernel || input[1] < kernel {
                    return mismatch(format!("spatial size smaller than kernel {kernel}"));
                }
                Ok(vec![
                    (input[0] - kernel) / stride + 1,
                    (input[1] - kernel) / stride + 1,
                    out_channels,
                ])
            }
            LayerSpec::MaxPool2 => {
                if input.len() != 3 || input[0] < 2 || input[1] < 2 {
                    return mismatch("expects H × W × C with H, W >= 2".into());
                }
                Ok(vec![input[0] / 2, input[1] / 2, input[2]])
            }
            LayerSpec::BatchNorm { .. } if input.is_empty() => mismatch("empty shape".into()),
            _ => Ok(input.to_vec()),
        }
    }

    /// Freshly initialized parameters: weights uniform in ±1/sqrt(fan_in),
    /// zero biases, unit batchnorm scale.
    pub fn init_params(&self, input: &[usize], rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        let uniform = |shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::from_vec(shape, data).expect("shape product matches")
        };
        match *self {
            LayerSpec::Dense {
                inputs,
                outputs,
                bias,
            } => {
                let mut p = vec![uniform(&[inputs, outputs], inputs, rng)];
                if bias {
                    p.push(Tensor::zeros(&[outputs]));
                }
                p
            }
            LayerSpec::Conv2d {
                kernel,
                in_channels,
                out_channels,
                bias,
                ..
            } => {
                let mut p = vec![uniform(
                    &[kernel, kernel, in_channels, out_channels],
                    kernel * kernel * in_channels,
                    rng,
                )];
                if bias {
                    p.push(Tensor::zeros(&[out_channels]));
                }
                p
            }
            LayerSpec::BatchNorm { .. } => {
                let c = *input.last().expect("validated non-empty");
                vec![Tensor::filled(&[c], 1.0), Tensor::zeros(&[c])]
            }
            _ => Vec::new(),
        }
    }
}

/// Running statistics kept by a batchnorm layer for evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-layer values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerAux {
    None,
    /// Flat input index selected by each pooled output.
    PoolArgmax(Vec<usize>),
    /// Multiplier applied to each element (0 or 1/keep).
    DropoutMask(Vec<f64>),
    BatchNorm {
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
        /// Batch mean and variance, present in training mode only.
        batch_stats: Option<RunningStats>,
    },
    SoftmaxOut(Vec<f64>),
}

/// Applies one layer. `layer_seed` drives the dropout mask.
pub fn layer_forward(
    spec: &LayerSpec,
    params: &[Tensor],
    running: Option<&RunningStats>,
    input: &Tensor,
    mode: Mode,
    layer_seed: u64,
) -> Result<(Tensor, LayerAux)> {
    let batch = input.rows();
    let out_shape = {
        let mut s = vec![batch];
        s.extend(spec.output_shape(&input.shape()[1..])?);
        s
    };
    match *spec {
        LayerSpec::Dense {
            inputs, outputs, ..
        } => {
            let w = params[0].data();
            let b = params.get(1).map(Tensor::data);
            let mut out = Tensor::zeros(&out_shape);
            for n in 0..batch {
                let x = input.row(n);
                let y = out.row_mut(n);
                if let Some(b) = b {
                    y.copy_from_slice(b);
                }
                for i in 0..inputs {
                    let xi = x[i];
                    if xi == 0.0 {
                        continue;
                    }
                    let wr = &w[i * outputs..(i + 1) * outputs];
                    for (yo, wo) in y.iter_mut().zip(wr) {
                        *yo += xi * wo;
                    }
                }
            }
            Ok((out, LayerAux::None))
        }
        LayerSpec::Conv2d {
            kernel,
            in_channels: cin,
            out_channels: cout,
            stride,
            ..
        } => {
            let (h, w_in) = (input.shape()[1], input.shape()[2]);
            let (ho, wo) = (out_shape[1], out_shape[2]);
            let w = params[0].data();
            let zero_bias = vec![0.0; cout];
            let b = params.get(1).map_or(&zero_bias[..], Tensor::data);
            let mut out = Tensor::zeros(&out_shape);
            let x = input.data();
            let o = out.data_mut();
            for n in 0..batch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let ob = ((n * ho + oy) * wo + ox) * cout;
                        let y = &mut o[ob..ob + cout];
                        y.copy_from_slice(b);
                        for ky in 0..kernel {
                            let iy = oy * stride + ky;
                            for kx in 0..kernel {
                                let ix = ox * stride + kx;
                                let xb = ((n * h + iy) * w_in + ix) * cin;
                                let wb = (ky * kernel + kx) * cin * cout;
                                for ci in 0..cin {
                                    let xv = x[xb + ci];
                                    if xv == 0.0 {
                                        continue;
                                    }
                                    let wr = &w[wb + ci * cout..wb + (ci + 1) * cout];
                                    for (yo, wv) in y.iter_mut().zip(wr) {
                                        *yo += xv * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Ok((out, LayerAux::None))
        }
        LayerSpec::MaxPool2 => {
            let (h, w_in, c) = (input.shape()[1], input.shape()[2], input.shape()[3]);
            let (ho, wo) = (out_shape[1], out_shape[2]);
            let mut out = Tensor::zeros(&out_shape);
            let mut arg = vec![0usize; out.len()];
            let x = input.data();
            let o = out.data_mut();
            for n in 0..batch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        for ch in 0..c {
                            let mut best = ((n * h + 2 * oy) * w_in + 2 * ox) * c + ch;
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                let idx = ((n * h + 2 * oy + dy) * w_in + 2 * ox + dx) * c + ch;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                            let oi = ((n * ho + oy) * wo + ox) * c + ch;
                            o[oi] = x[best];
                            arg[oi] = best;
                        }
                    }
                }
            }
            Ok((out, LayerAux::PoolArgmax(arg)))
        }
        LayerSpec::Relu => {
            let data = input.data().iter().map(|v| v.max(0.0)).collect();
            Ok((Tensor::from_vec(&out_shape, data)?, LayerAux::None))
        }
        LayerSpec::Dropout { keep } => {
            if mode == Mode::Eval || keep >= 1.0 {
                return Ok((input.clone(), LayerAux::None));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(layer_seed);
            let scale = 1.0 / keep;
            let mask: Vec<f64> = (0..input.len())
                .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                .collect();
            let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            Ok((Tensor::from_vec(&out_shape, data)?, LayerAux::DropoutMask(mask)))
        }
        LayerSpec::BatchNorm { epsilon, .. } => {
            let c = *out_shape.last().expect("non-empty");
            let m = input.len() / c;
            let x = input.data();
            let (gamma, beta) = (params[0].data(), params[1].data());
            let (mean, var, batch_stats) = match mode {
                Mode::Train => {
                    if m < 2 {
                        return Err(OsrError::Input(
                            "batchnorm in training mode needs at least 2 values per channel"
                                .into(),
                        ));
                    }
                    let mut mean = vec![0.0; c];
                    for r in 0..m {
                        for (mu, v) in mean.iter_mut().zip(&x[r * c..(r + 1) * c]) {
                            *mu += v;
                        }
                    }
                    mean.iter_mut().for_each(|v| *v /= m as f64);
                    let mut var = vec![0.0; c];
                    for r in 0..m {
                        for ((s, v), mu) in var.iter_mut().zip(&x[r * c..(r + 1) * c]).zip(&mean)
                        {
                            *s += (v - mu) * (v - mu);
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= m as f64);
                    let stats = RunningStats {
                        mean: mean.clone(),
                        var: var.clone(),
                    };
                    (mean, var, Some(stats))
                }
                Mode::Eval => {
                    let rs = running.ok_or_else(|| {
                        OsrError::Internal("batchnorm layer without running statistics".into())
                    })?;
                    (rs.mean.clone(), rs.var.clone(), None)
                }
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
            let mut x_hat = vec![0.0; x.len()];
            let mut out = Tensor::zeros(&out_shape);
            let o = out.data_mut();
            for r in 0..m {
                for ch in 0..c {
                    let i = r * c + ch;
                    x_hat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    o[i] = gamma[ch] * x_hat[i] + beta[ch];
                }
            }
            Ok((
                out,
                LayerAux::BatchNorm {
                    x_hat,
                    inv_std,
                    batch_stats,
                },
            ))
        }
        LayerSpec::Softmax => {
            let width = *out_shape.last().unwrap_or(&1);
            let mut data = Vec::with_capacity(input.len());
            for chunk in input.data().chunks(width) {
                data.extend(crate::tensor::softmax(chunk));
            }
            let out = Tensor::from_vec(&out_shape, data.clone())?;
            Ok((out, LayerAux::SoftmaxOut(data)))
        }
    }
}

fn with_bias(gw: Tensor, gb: Tensor, bias: bool) -> Vec<Tensor> {
    if bias {
        vec![gw, gb]
    } else {
        vec![gw]
    }
}

/// Back-propagates `grad_out` through one layer.
///
/// Returns the gradient with respect to the layer input and one gradient per
/// parameter tensor.
pub fn layer_backward(
    spec: &LayerSpec,
    params: &[Tensor],
    input: &Tensor,
    aux: &LayerAux,
    grad_out: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Vec<Tensor>)> {
    let batch = input.rows();
    let mut grad_in = Tensor::zeros(input.shape());
    match (*spec, aux) {
        (
            LayerSpec::Dense {
                inputs,
                outputs,
                bias,
            },
            _,
        ) => {
            let w = params[0].data();
            let mut gw = Tensor::zeros(params[0].shape());
            let mut gb = Tensor::zeros(&[outputs]);
            for n in 0..batch {
                let x = input.row(n);
                let dy = grad_out.row(n);
                for (g, d) in gb.data_mut().iter_mut().zip(dy) {
                    *g += d;
                }
                let gwd = gw.data_mut();
                for i in 0..inputs {
                    let xi = x[i];
                    if xi != 0.0 {
                        for (g, d) in gwd[i * outputs..(i + 1) * outputs].iter_mut().zip(dy) {
                            *g += xi * d;
                        }
                    }
                }
                let dx = grad_in.row_mut(n);
                for i in 0..inputs {
                    dx[i] = crate::tensor::dot(&w[i * outputs..(i + 1) * outputs], dy);
                }
            }
            Ok((grad_in, with_bias(gw, gb, bias)))
        }
        (
            LayerSpec::Conv2d {
                kernel,
                in_channels: cin,
                out_channels: cout,
                stride,
                bias,
            },
            _,
        ) => {
            let (h, w_in) = (input.shape()[1], input.shape()[2]);
            let (ho, wo) = (grad_out.shape()[1], grad_out.shape()[2]);
            let w = params[0].data();
            let mut gw = Tensor::zeros(params[0].shape());
            let mut gb = Tensor::zeros(&[cout]);
            let x = input.data();
            let dyd = grad_out.data();
            let gwd = gw.data_mut();
            let gbd = gb.data_mut();
            let dx = grad_in.data_mut();
            for n in 0..batch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let ob = ((n * ho + oy) * wo + ox) * cout;
                        let dy = &dyd[ob..ob + cout];
                        for (g, d) in gbd.iter_mut().zip(dy) {
                            *g += d;
                        }
                        for ky in 0..kernel {
                            let iy = oy * stride + ky;
                            for kx in 0..kernel {
                                let ix = ox * stride + kx;
                                let xb = ((n * h + iy) * w_in + ix) * cin;
                                let wb = (ky * kernel + kx) * cin * cout;
                                for ci in 0..cin {
                                    let off = wb + ci * cout;
                                    let xv = x[xb + ci];
                                    let mut acc = 0.0;
                                    for co in 0..cout {
                                        gwd[off + co] += xv * dy[co];
                                        acc += w[off + co] * dy[co];
                                    }
                                    dx[xb + ci] += acc;
                                }
                            }
                        }
                    }
                }
            }
            Ok((grad_in, with_bias(gw, gb, bias)))
        }
        (LayerSpec::MaxPool2, LayerAux::PoolArgmax(arg)) => {
            let dx = grad_in.data_mut();
            for (g, &src) in grad_out.data().iter().zip(arg) {
                dx[src] += g;
            }
            Ok((grad_in, Vec::new()))
        }
        (LayerSpec::Relu, _) => {
            for ((dx, x), g) in grad_in
                .data_mut()
                .iter_mut()
                .zip(input.data())
                .zip(grad_out.data())
            {
                *dx = if *x > 0.0 { *g } else { 0.0 };
            }
            Ok((grad_in, Vec::new()))
        }
        (LayerSpec::Dropout { .. }, LayerAux::DropoutMask(mask)) => {
            for ((dx, m), g) in grad_in.data_mut().iter_mut().zip(mask).zip(grad_out.data()) {
                *dx = g * m;
            }
            Ok((grad_in, Vec::new()))
        }
        (LayerSpec::Dropout { .. }, LayerAux::None) => Ok((grad_out.clone(), Vec::new())),
        (
            LayerSpec::BatchNorm { .. },
            LayerAux::BatchNorm {
                x_hat, inv_std, ..
            },
        ) => {
            let c = inv_std.len();
            let m = input.len() / c;
            let gamma = params[0].data();
            let dy = grad_out.data();
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            for r in 0..m {
                for ch in 0..c {
                    let i = r * c + ch;
                    ggamma[ch] += dy[i] * x_hat[i];
                    gbeta[ch] += dy[i];
                }
            }
            let dx = grad_in.data_mut();
            match mode {
                Mode::Train => {
                    // dx = inv_std / m * (m·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), with dx̂ = dy·γ
                    let mf = m as f64;
                    for r in 0..m {
                        for ch in 0..c {
                            let i = r * c + ch;
                            let dxh = dy[i] * gamma[ch];
                            dx[i] = inv_std[ch] / mf
                                * (mf * dxh
                                    - gbeta[ch] * gamma[ch]
                                    - x_hat[i] * ggamma[ch] * gamma[ch]);
                        }
                    }
                }
                Mode::Eval => {
                    for r in 0..m {
                        for ch in 0..c {
                            let i = r * c + ch;
                            dx[i] = dy[i] * gamma[ch] * inv_std[ch];
                        }
                    }
                }
            }
            Ok((
                grad_in,
                vec![Tensor::from_vec(&[c], ggamma)?, Tensor::from_vec(&[c], gbeta)?],
            ))
        }
        (LayerSpec::Softmax, LayerAux::SoftmaxOut(s)) => {
            let width = *input.shape().last().unwrap_or(&1);
            let dy = grad_out.data();
            let dx = grad_in.data_mut();
            for start in (0..s.len()).step_by(width) {
                let row = start..start + width;
                let inner: f64 = s[row.clone()]
                    .iter()
                    .zip(&dy[row.clone()])
                    .map(|(a, b)| a * b)
                    .sum();
                for i in row {
                    dx[i] = s[i] * (dy[i] - inner);
                }
            }
            Ok((grad_in, Vec::new()))
        }
        (spec, _) => Err(OsrError::Internal(format!(
            "cache entry does not match {} layer",
            spec.kind()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fwd(spec: LayerSpec, params: &[Tensor], input: &Tensor) -> Tensor {
        layer_forward(&spec, params, None, input, Mode::Train, 0)
            .unwrap()
            .0
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let spec = LayerSpec::Dense {
            inputs: 3,
            outputs: 3,
            bias: true,
        };
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_vec(&[1, 3], vec![0.5, -2.0, 7.0]).unwrap();
        let y = fwd(spec, &[w, Tensor::zeros(&[3])], &x);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn unit_one_by_one_kernel_is_identity() {
        let spec = LayerSpec::Conv2d {
            kernel: 1,
            in_channels: 1,
            out_channels: 1,
            stride: 1,
            bias: true,
        };
        let x = Tensor::from_vec(&[1, 3, 3, 1], (0..9).map(|v| v as f64 * 0.5).collect()).unwrap();
        let y = fwd(
            spec,
            &[Tensor::filled(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1])],
            &x,
        );
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_output_shape_respects_stride() {
        let spec = LayerSpec::Conv2d {
            kernel: 5,
            in_channels: 1,
            out_channels: 8,
            stride: 2,
            bias: false,
        };
        assert_eq!(spec.output_shape(&[28, 28, 1]).unwrap(), vec![12, 12, 8]);
        assert!(spec.output_shape(&[28, 28, 3]).is_err());
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        let (y, aux) = layer_forward(&LayerSpec::MaxPool2, &[], None, &x, Mode::Eval, 0).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let (dx, _) = layer_backward(&LayerSpec::MaxPool2, &[], &x, &aux, &g, Mode::Eval).unwrap();
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_is_identity_in_eval_and_unbiased_in_train() {
        let spec = LayerSpec::Dropout { keep: 0.5 };
        let x = Tensor::filled(&[1, 20_000], 1.0);
        let (y, _) = layer_forward(&spec, &[], None, &x, Mode::Eval, 3).unwrap();
        assert_eq!(y, x);
        let (y, _) = layer_forward(&spec, &[], None, &x, Mode::Train, 3).unwrap();
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn invalid_layer_specs_are_rejected() {
        assert!(LayerSpec::Dropout { keep: 0.0 }.validate().is_err());
        assert!(LayerSpec::Dropout { keep: 1.0 }.validate().is_ok());
        assert!(LayerSpec::Conv2d {
            kernel: 0,
            in_channels: 1,
            out_channels: 1,
            stride: 1,
            bias: true
        }
        .validate()
        .is_err());
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let spec = LayerSpec::batchnorm();
        let x = Tensor::from_vec(&[4, 1], vec![1.0, 2.0, 3.0, 10.0]).unwrap();
        let y = fwd(spec, &[Tensor::filled(&[1], 1.0), Tensor::zeros(&[1])], &x);
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
