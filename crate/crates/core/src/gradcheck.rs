//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{OsrError, Result};
use crate::nn::layers::{layer_backward, layer_forward, LayerSpec, Mode};
use crate::nn::{cross_entropy_loss, Architecture, ConvBlock, ModelState};
use crate::superlative::{
    superlative_loss, superlative_loss_fixed_radius, superlative_loss_with_basis, BoundaryForm,
    LossConfig, LossReport, RadiusMode, SeparationForm,
};
use crate::tensor::Tensor;

/// Worst elementwise relative error between `analytic` and central
/// differences `(f(x+ε) − f(x−ε)) / 2ε`, with denominator
/// `max(|a|, |b|, 1e-12)`.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(OsrError::Input(format!(
            "finite-difference step {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    if params.len() != analytic.len() {
        return Err(OsrError::Input(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let up = loss_fn(&x)?;
        x[i] = orig - epsilon;
        let down = loss_fn(&x)?;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(OsrError::Numeric(format!(
                "loss not finite while perturbing parameter {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Options for [`gradcheck_suite`].
#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Seeded random instances per component.
    pub instances: usize,
    /// Step for layer and network checks.
    pub epsilon: f64,
    /// Step for the superlative-loss pipeline, whose values are large enough
    /// that roundoff dominates at small steps.
    pub loss_epsilon: f64,
    pub seed: u64,
    /// Perturbs every analytic gradient before comparison (negative control).
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            instances: 5,
            epsilon: 1e-6,
            loss_epsilon: 1e-4,
            seed: 0,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub component: String,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl CheckOutcome {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

fn normal_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

fn corrupt(values: &mut [f64], on: bool) {
    if on {
        for v in values.iter_mut() {
            *v += 1e-2 * (1.0 + v.abs());
        }
    }
}

/// One layer in isolation: scalar loss `Σ c ⊙ layer(x)` with random
/// weights `c`, checked against input and parameter gradients.
fn check_layer(spec: LayerSpec, input_shape: &[usize], options: &GradcheckOptions, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_tensor(input_shape, &mut rng);
    let mut params = spec.init_params(&input_shape[1..], &mut rng);
    // move batchnorm scale/shift off their trivial initial values
    for p in params.iter_mut() {
        for v in p.data_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut out_shape = vec![input_shape[0]];
    out_shape.extend(spec.output_shape(&input_shape[1..])?);
    let weights = normal_tensor(&out_shape, &mut rng);
    let layer_seed = rng.random::<u64>();
    let mode = Mode::Train;

    let eval = |x: &Tensor, params: &[Tensor]| -> Result<f64> {
        let (y, _) = layer_forward(&spec, params, None, x, mode, layer_seed)?;
        Ok(crate::tensor::dot(y.data(), weights.data()))
    };
    let (_, aux) = layer_forward(&spec, &params, None, &x, mode, layer_seed)?;
    let (gx, gparams) = layer_backward(&spec, &params, &x, &aux, &weights, mode)?;

    let mut analytic = gx.data().to_vec();
    corrupt(&mut analytic, options.corrupt);
    let mut worst = finite_diff_check(
        |flat| eval(&Tensor::from_vec(x.shape(), flat.to_vec())?, &params),
        x.data(),
        &analytic,
        options.epsilon,
    )?;
    for (k, g) in gparams.iter().enumerate() {
        let mut analytic = g.data().to_vec();
        corrupt(&mut analytic, options.corrupt);
        let err = finite_diff_check(
            |flat| {
                let mut p = params.clone();
                p[k] = Tensor::from_vec(params[k].shape(), flat.to_vec())?;
                eval(&x, &p)
            },
            params[k].data(),
            &analytic,
            options.epsilon,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Layer kinds covered by the suite, with the input shapes they are probed on.
fn layer_cases() -> Vec<(LayerSpec, Vec<usize>)> {
    vec![
        (
            LayerSpec::Dense {
                inputs: 5,
                outputs: 4,
                bias: true,
            },
            vec![3, 5],
        ),
        (
            LayerSpec::Conv2d {
                kernel: 3,
                in_channels: 2,
                out_channels: 3,
                stride: 2,
                bias: true,
            },
            vec![2, 7, 6, 2],
        ),
        (LayerSpec::MaxPool2, vec![2, 4, 5, 2]),
        (LayerSpec::Relu, vec![4, 6]),
        (LayerSpec::Dropout { keep: 0.6 }, vec![4, 6]),
        (LayerSpec::batchnorm(), vec![5, 3, 3, 2]),
        (LayerSpec::Softmax, vec![3, 5]),
    ]
}

/// The loss whose exact gradient `at` reports: the basis is always held at
/// `at`'s, the radius too when it is not differentiated.
fn frozen_loss(
    avs: &Tensor,
    labels: &[usize],
    classes: usize,
    config: &LossConfig,
    at: &LossReport,
) -> Result<f64> {
    let report = match config.radius {
        RadiusMode::Tracked => superlative_loss_with_basis(avs, labels, classes, config, &at.basis)?,
        RadiusMode::Frozen => {
            superlative_loss_fixed_radius(avs, labels, classes, config, &at.basis, at.radius)?
        }
    };
    Ok(report.total)
}

/// A small network touching every layer kind, trained on cross-entropy plus
/// the superlative loss; the analytic gradient of the sum is checked against
/// every parameter with the PCA basis frozen.
fn check_network(options: &GradcheckOptions, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = 3;
    let arch = Architecture::convnet(
        &[8, 8, 1],
        &[ConvBlock {
            channels: 2,
            kernel: 3,
            stride: 1,
            pool: true,
        }],
        &[6, 5],
        classes,
        0.7,
        true,
    )?;
    let model = ModelState::new(arch, seed)?;
    let batch = 6;
    let x = normal_tensor(&[batch, 8, 8, 1], &mut rng);
    let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
    let dropout_seed = rng.random::<u64>();
    let config = LossConfig::default();

    let pass = model.forward(&x, dropout_seed)?;
    let (_, grad_logits) = cross_entropy_loss(&pass.logits, &labels)?;
    let report = superlative_loss(&pass.activation_vectors, &labels, classes, &config)?;
    let grads = model.backward(&pass.cache, &grad_logits, &report.grad_avs)?;

    let loss_at = |m: &ModelState| -> Result<f64> {
        let pass = m.forward(&x, dropout_seed)?;
        let (ce, _) = cross_entropy_loss(&pass.logits, &labels)?;
        let ls = frozen_loss(&pass.activation_vectors, &labels, classes, &config, &report)?;
        Ok(ce + ls)
    };

    let mut worst = 0.0f64;
    for l in 0..model.params.len() {
        for k in 0..model.params[l].len() {
            let mut analytic = grads[l][k].data().to_vec();
            corrupt(&mut analytic, options.corrupt);
            let shape = model.params[l][k].shape().to_vec();
            let err = finite_diff_check(
                |flat| {
                    let mut m = model.clone();
                    m.params[l][k] = Tensor::from_vec(&shape, flat.to_vec())?;
                    loss_at(&m)
                },
                model.params[l][k].data(),
                &analytic,
                options.epsilon,
            )?;
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// The superlative loss alone on a random batch of activation vectors,
/// checked with the PCA basis frozen at the unperturbed batch.
pub fn check_superlative(
    classes: usize,
    width: usize,
    per_class: usize,
    config: &LossConfig,
    options: &GradcheckOptions,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = classes * per_class;
    let mut avs = normal_tensor(&[batch, width], &mut rng);
    // class-dependent offsets so the class means are spread out
    for n in 0..batch {
        let c = n % classes;
        for (j, v) in avs.row_mut(n).iter_mut().enumerate() {
            *v += ((c * 7 + j * 3) % 5) as f64;
        }
    }
    let labels: Vec<usize> = (0..batch).map(|n| n % classes).collect();
    let report = superlative_loss(&avs, &labels, classes, config)?;
    let mut analytic = report.grad_avs.data().to_vec();
    corrupt(&mut analytic, options.corrupt);
    finite_diff_check(
        |flat| {
            let t = Tensor::from_vec(&[batch, width], flat.to_vec())?;
            frozen_loss(&t, &labels, classes, config, &report)
        },
        avs.data(),
        &analytic,
        options.loss_epsilon,
    )
}

/// Runs every layer-kind check, the end-to-end network check and the
/// superlative-loss pipeline check; one outcome per component.
pub fn gradcheck_suite(options: &GradcheckOptions) -> Result<Vec<CheckOutcome>> {
    let mut outcomes = Vec::new();
    for (spec, shape) in layer_cases() {
        let mut worst = 0.0f64;
        for i in 0..options.instances {
            let seed = options.seed.wrapping_add(1000 * i as u64 + 17);
            worst = worst.max(check_layer(spec, &shape, options, seed)?);
        }
        outcomes.push(CheckOutcome {
            component: spec.kind().to_string(),
            instances: options.instances,
            max_rel_error: worst,
        });
    }

    let mut worst = 0.0f64;
    for i in 0..options.instances {
        worst = worst.max(check_network(options, options.seed.wrapping_add(i as u64))?);
    }
    outcomes.push(CheckOutcome {
        component: "network+ce+superlative".into(),
        instances: options.instances,
        max_rel_error: worst,
    });

    let variants = [
        ("superlative", BoundaryForm::ShellSquared, SeparationForm::MinPairwise, RadiusMode::Frozen),
        ("superlative-tracked-radius", BoundaryForm::ShellSquared, SeparationForm::MinPairwise, RadiusMode::Tracked),
        ("superlative-literal", BoundaryForm::Literal, SeparationForm::LiteralMax, RadiusMode::Tracked),
    ];
    for (name, bd_form, is_form, radius) in variants {
        let config = LossConfig {
            bd_form,
            is_form,
            radius,
            ..LossConfig::default()
        };
        let mut worst = 0.0f64;
        for i in 0..options.instances {
            let classes = 2 + i % 5;
            let width = [3, 8, 16, 32][i % 4];
            let seed = options.seed.wrapping_add(500 + i as u64);
            worst = worst.max(check_superlative(classes, width, 3, &config, options, seed)?);
        }
        outcomes.push(CheckOutcome {
            component: name.into(),
            instances: options.instances,
            max_rel_error: worst,
        });
    }
    Ok(outcomes)
}
