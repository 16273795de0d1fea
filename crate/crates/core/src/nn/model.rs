use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{layer_backward, layer_forward, LayerAux, LayerSpec, Mode, RunningStats};
use crate::error::{OsrError, Result};
use crate::tensor::Tensor;

/// A layer stack plus the input shape it is applied to.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// Per-sample input shape, e.g. `[28, 28, 1]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Index of the dense layer whose (post-activation) output is the
    /// activation vector.
    pub penultimate_index: usize,
}

impl Architecture {
    /// Convolutional family: `[conv → bn → relu → pool]*` then
    /// `[dense → bn → relu → dropout]*` then a dense head over `classes`.
    /// The last hidden dense layer is the penultimate layer.
    pub fn convnet(
        input_shape: &[usize],
        conv: &[ConvBlock],
        dense_widths: &[usize],
        classes: usize,
        keep: f64,
        batchnorm: bool,
    ) -> Result<Self> {
        if dense_widths.is_empty() {
            return Err(OsrError::Config(
                "at least one hidden dense layer is required".into(),
            ));
        }
        let mut stack = StackBuilder {
            layers: Vec::new(),
            shape: input_shape.to_vec(),
        };
        for block in conv {
            let in_channels = *stack.shape.last().unwrap_or(&1);
            stack.push(LayerSpec::Conv2d {
                kernel: block.kernel,
                in_channels,
                out_channels: block.channels,
                stride: block.stride,
                bias: !batchnorm,
            })?;
            if batchnorm {
                stack.push(LayerSpec::batchnorm())?;
            }
            stack.push(LayerSpec::Relu)?;
            if block.pool {
                stack.push(LayerSpec::MaxPool2)?;
            }
        }
        let mut penultimate_index = 0;
        for &width in dense_widths {
            penultimate_index = stack.layers.len();
            stack.push(LayerSpec::Dense {
                inputs: stack.shape.iter().product(),
                outputs: width,
                bias: !batchnorm,
            })?;
            if batchnorm {
                stack.push(LayerSpec::batchnorm())?;
            }
            stack.push(LayerSpec::Relu)?;
            if keep < 1.0 {
                stack.push(LayerSpec::Dropout { keep })?;
            }
        }
        stack.push(LayerSpec::Dense {
            inputs: stack.shape.iter().product(),
            outputs: classes,
            bias: true,
        })?;
        stack.push(LayerSpec::Softmax)?;
        let layers = stack.layers;
        let arch = Architecture {
            input_shape: input_shape.to_vec(),
            layers,
            penultimate_index,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Fully connected network over flattened inputs.
    pub fn mlp(
        input_shape: &[usize],
        dense_widths: &[usize],
        classes: usize,
        keep: f64,
        batchnorm: bool,
    ) -> Result<Self> {
        Architecture::convnet(input_shape, &[], dense_widths, classes, keep, batchnorm)
    }

    /// Checks layer composition and the penultimate-layer contract; returns
    /// the per-sample shape after every layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(OsrError::Config("empty layer stack".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            layer.validate()?;
            shape = layer.output_shape(&shape)?;
            shapes.push(shape.clone());
        }
        match self.layers.get(self.penultimate_index) {
            Some(LayerSpec::Dense { .. }) => {}
            _ => {
                return Err(OsrError::Config(format!(
                    "penultimate_index {} does not address a dense layer",
                    self.penultimate_index
                )))
            }
        }
        if self.penultimate_index + 1 >= self.head_end() {
            return Err(OsrError::Config(
                "penultimate layer must be followed by an output layer".into(),
            ));
        }
        Ok(shapes)
    }

    /// Number of layers producing logits; a trailing softmax is excluded.
    pub fn head_end(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Softmax) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    /// Index of the layer whose output is taken as the activation vector: the
    /// penultimate dense layer followed by its batchnorm/relu chain.
    pub fn av_tap(&self) -> usize {
        let mut tap = self.penultimate_index;
        while let Some(next) = self.layers.get(tap + 1) {
            if tap + 1 >= self.head_end() {
                break;
            }
            match next {
                LayerSpec::BatchNorm { .. } | LayerSpec::Relu => tap += 1,
                _ => break,
            }
        }
        tap
    }
}

struct StackBuilder {
    layers: Vec<LayerSpec>,
    shape: Vec<usize>,
}

impl StackBuilder {
    fn push(&mut self, layer: LayerSpec) -> Result<()> {
        layer.validate()?;
        self.shape = layer.output_shape(&self.shape)?;
        self.layers.push(layer);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: bool,
}

/// Network parameters, batchnorm running statistics and the train/eval flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    arch: Architecture,
    shapes: Vec<Vec<usize>>,
    pub params: Vec<Vec<Tensor>>,
    running: Vec<Option<RunningStats>>,
    pub mode: Mode,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Tensor>,
    aux: Vec<LayerAux>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Tensor,
    pub activation_vectors: Tensor,
    pub cache: ForwardCache,
}

impl ModelState {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let shapes = arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.layers.len());
        let mut running = Vec::with_capacity(arch.layers.len());
        let mut shape = arch.input_shape.clone();
        for (layer, out) in arch.layers.iter().zip(&shapes) {
            params.push(layer.init_params(&shape, &mut rng));
            running.push(match layer {
                LayerSpec::BatchNorm { .. } => {
                    let c = *out.last().expect("non-empty");
                    Some(RunningStats {
                        mean: vec![0.0; c],
                        var: vec![1.0; c],
                    })
                }
                _ => None,
            });
            shape = out.clone();
        }
        Ok(ModelState {
            arch,
            shapes,
            params,
            running,
            mode: Mode::Train,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.arch.layers
    }

    /// Number of logits (known classes).
    pub fn classes(&self) -> usize {
        self.shapes[self.arch.head_end() - 1].iter().product()
    }

    /// Width of the activation vector.
    pub fn av_width(&self) -> usize {
        self.shapes[self.arch.av_tap()].iter().product()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    /// Runs the stack in the model's current mode. In eval mode dropout is
    /// the identity and batchnorm uses running statistics.
    pub fn forward(&self, batch: &Tensor, rng_seed: u64) -> Result<ForwardPass> {
        self.forward_in_mode(batch, self.mode, rng_seed)
    }

    fn forward_in_mode(&self, batch: &Tensor, mode: Mode, rng_seed: u64) -> Result<ForwardPass> {
        if batch.shape().len() < 2 || batch.shape()[1..] != self.arch.input_shape[..] {
            return Err(OsrError::Config(format!(
                "batch shape {:?} does not match model input {:?}",
                batch.shape(),
                self.arch.input_shape
            )));
        }
        let head_end = self.arch.head_end();
        let tap = self.arch.av_tap();
        let mut inputs = Vec::with_capacity(head_end);
        let mut aux = Vec::with_capacity(head_end);
        let mut current = batch.clone();
        let mut avs = None;
        for l in 0..head_end {
            let layer = &self.arch.layers[l];
            let seed = rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(l as u64);
            let (out, a) = layer_forward(
                layer,
                &self.params[l],
                self.running[l].as_ref(),
                &current,
                mode,
                seed,
            )?;
            if !out.is_finite() {
                return Err(OsrError::NonFinite {
                    layer: l,
                    kind: layer.kind(),
                });
            }
            inputs.push(std::mem::replace(&mut current, out));
            aux.push(a);
            if l == tap {
                let rows = current.rows();
                avs = Some(current.clone().reshape(&[rows, self.av_width()])?);
            }
        }
        let rows = current.rows();
        let logits = current.reshape(&[rows, self.classes()])?;
        Ok(ForwardPass {
            logits,
            activation_vectors: avs.expect("tap precedes head end"),
            cache: ForwardCache {
                inputs,
                aux,
                mode,
            },
        })
    }

    /// Parameter gradients given upstream gradients on the logits and on the
    /// activation vectors; the latter are added where the activation vector
    /// is tapped.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: &Tensor,
        grad_avs: &Tensor,
    ) -> Result<Vec<Vec<Tensor>>> {
        let head_end = self.arch.head_end();
        if cache.inputs.len() != head_end || cache.aux.len() != head_end {
            return Err(OsrError::Internal(
                "forward cache does not belong to this model".into(),
            ));
        }
        let batch = cache.inputs[0].rows();
        if grad_logits.shape() != [batch, self.classes()]
            || grad_avs.shape() != [batch, self.av_width()]
        {
            return Err(OsrError::Internal(format!(
                "upstream gradient shapes {:?} / {:?} do not match batch {batch}",
                grad_logits.shape(),
                grad_avs.shape()
            )));
        }
        let tap = self.arch.av_tap();
        let mut grads: Vec<Vec<Tensor>> = self
            .params
            .iter()
            .map(|ps| ps.iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect();
        let mut out_shape = vec![batch];
        out_shape.extend(&self.shapes[head_end - 1]);
        let mut grad = grad_logits.clone().reshape(&out_shape)?;
        for l in (0..head_end).rev() {
            if l == tap {
                for (g, a) in grad.data_mut().iter_mut().zip(grad_avs.data()) {
                    *g += a;
                }
            }
            let (grad_in, pgrads) = layer_backward(
                &self.arch.layers[l],
                &self.params[l],
                &cache.inputs[l],
                &cache.aux[l],
                &grad,
                cache.mode,
            )?;
            if !grad_in.is_finite() || pgrads.iter().any(|g| !g.is_finite()) {
                return Err(OsrError::NonFinite {
                    layer: l,
                    kind: self.arch.layers[l].kind(),
                });
            }
            if !pgrads.is_empty() {
                grads[l] = pgrads;
            }
            grad = grad_in;
        }
        Ok(grads)
    }

    /// Folds the batch statistics of a training-mode pass into the
    /// batchnorm running averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for (l, aux) in cache.aux.iter().enumerate() {
            if let (
                LayerSpec::BatchNorm { momentum, .. },
                LayerAux::BatchNorm {
                    batch_stats: Some(batch),
                    ..
                },
                Some(running),
            ) = (&self.arch.layers[l], aux, self.running[l].as_mut())
            {
                for (r, b) in running.mean.iter_mut().zip(&batch.mean) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
                for (r, b) in running.var.iter_mut().zip(&batch.var) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
            }
        }
    }

    /// Evaluation-mode logits and activation vectors for a whole dataset,
    /// processed in chunks.
    pub fn predict_all(&self, inputs: &Tensor, chunk: usize) -> Result<(Tensor, Tensor)> {
        let n = inputs.rows();
        let mut logits = Vec::with_capacity(n * self.classes());
        let mut avs = Vec::with_capacity(n * self.av_width());
        let idx: Vec<usize> = (0..n).collect();
        for part in idx.chunks(chunk.max(1)) {
            let pass = self.forward_in_mode(&inputs.select_rows(part), Mode::Eval, 0)?;
            logits.extend_from_slice(pass.logits.data());
            avs.extend_from_slice(pass.activation_vectors.data());
        }
        Ok((
            Tensor::from_vec(&[n, self.classes()], logits)?,
            Tensor::from_vec(&[n, self.av_width()], avs)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_mlp() -> ModelState {
        let arch = Architecture {
            input_shape: vec![3],
            layers: vec![
                LayerSpec::Dense {
                    inputs: 3,
                    outputs: 2,
                    bias: true,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 2,
                    outputs: 2,
                    bias: true,
                },
            ],
            penultimate_index: 0,
        };
        let mut m = ModelState::new(arch, 0).unwrap();
        m.params[0][0] = Tensor::from_vec(&[3, 2], vec![1.0, -1.0, 0.5, 2.0, -0.25, 1.0]).unwrap();
        m.params[0][1] = Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap();
        m.params[2][0] = Tensor::from_vec(&[2, 2], vec![2.0, 0.0, -1.0, 3.0]).unwrap();
        m.params[2][1] = Tensor::from_vec(&[2], vec![0.5, 0.0]).unwrap();
        m
    }

    #[test]
    fn two_layer_mlp_matches_hand_arithmetic() {
        let m = hand_mlp();
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 4.0]).unwrap();
        let pass = m.forward(&x, 0).unwrap();
        // hidden pre-activation: (1 + 1 - 1 + 0.1, -1 + 4 + 4 - 0.2) = (1.1, 6.8)
        assert_eq!(pass.activation_vectors.data(), &[1.1, 6.8]);
        // logits: (2·1.1 - 6.8 + 0.5, 3·6.8) = (-4.1, 20.4)
        let l = pass.logits.data();
        assert!((l[0] + 4.1).abs() < 1e-12 && (l[1] - 20.4).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gradients_give_zero_parameter_gradients() {
        let m = hand_mlp();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 4.0, -1.0, 0.5, 0.0]).unwrap();
        let pass = m.forward(&x, 0).unwrap();
        let grads = m
            .backward(&pass.cache, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 2]))
            .unwrap();
        assert!(grads.iter().flatten().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn sum_of_outputs_gives_outer_product_weight_gradient() {
        let arch = Architecture {
            input_shape: vec![3],
            layers: vec![
                LayerSpec::Dense {
                    inputs: 3,
                    outputs: 4,
                    bias: true,
                },
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: 2,
                    bias: true,
                },
            ],
            penultimate_index: 0,
        };
        let m = ModelState::new(arch, 1).unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        let pass = m.forward(&x, 0).unwrap();
        // loss = sum of activation-vector outputs of the first dense layer
        let grads = m
            .backward(&pass.cache, &Tensor::zeros(&[1, 2]), &Tensor::filled(&[1, 4], 1.0))
            .unwrap();
        let gw = grads[0][0].data();
        for i in 0..3 {
            for o in 0..4 {
                assert_eq!(gw[i * 4 + o], x.data()[i]);
            }
        }
        assert_eq!(grads[0][1].data(), &[1.0; 4]);
    }

    #[test]
    fn convnet_stack_gives_k_logits_on_mnist_shape() {
        for classes in [2, 6, 10] {
            let arch = Architecture::convnet(
                &[28, 28, 1],
                &[
                    ConvBlock {
                        channels: 4,
                        kernel: 5,
                        stride: 1,
                        pool: true,
                    },
                    ConvBlock {
                        channels: 8,
                        kernel: 5,
                        stride: 1,
                        pool: true,
                    },
                ],
                &[32, 16],
                classes,
                0.5,
                true,
            )
            .unwrap();
            let m = ModelState::new(arch, 0).unwrap();
            let x = Tensor::filled(&[2, 28, 28, 1], 0.5);
            let pass = m.forward(&x, 0).unwrap();
            assert_eq!(pass.logits.shape(), &[2, classes]);
            assert_eq!(pass.activation_vectors.shape(), &[2, 16]);
        }
    }

    #[test]
    fn penultimate_must_be_dense() {
        let arch = Architecture {
            input_shape: vec![3],
            layers: vec![
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 3,
                    outputs: 2,
                    bias: true,
                },
            ],
            penultimate_index: 0,
        };
        assert!(matches!(ModelState::new(arch, 0), Err(OsrError::Config(_))));
    }

    #[test]
    fn eval_forward_is_pure_and_batch_independent() {
        let arch = Architecture::mlp(&[5], &[8, 4], 3, 0.5, true).unwrap();
        let mut m = ModelState::new(arch, 2).unwrap();
        let x = Tensor::from_vec(&[4, 5], (0..20).map(|v| (v as f64).sin()).collect()).unwrap();
        let pass = m.forward(&x, 9).unwrap();
        m.update_running_stats(&pass.cache);
        m.mode = Mode::Eval;
        let before = m.clone();
        let a = m.forward(&x, 1).unwrap();
        let b = m.forward(&x.select_rows(&[2]), 5).unwrap();
        assert_eq!(m, before);
        assert_eq!(a.logits.row(2), b.logits.row(0));
    }
}
