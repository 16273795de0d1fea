//! Mini-batch training with the staged superlative/companion schedule.

use crate::datasets::StratifiedBatches;
use crate::error::Result;
use crate::nn::{cross_entropy_loss, AdamState, ModelState};
use crate::superlative::{loss_schedule, superlative_loss, ActiveLoss, LossConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceLoss {
    Superlative,
    CrossEntropy,
}

impl TraceLoss {
    pub fn name(self) -> &'static str {
        match self {
            TraceLoss::Superlative => "ls",
            TraceLoss::CrossEntropy => "ce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loss: TraceLoss,
    pub value: f64,
}

/// Trains `model` in place and returns the per-iteration loss trace.
pub fn train_model(
    model: &mut ModelState,
    images: &Tensor,
    labels: &[usize],
    classes: usize,
    settings: &TrainSettings,
    seed: u64,
) -> Result<Vec<TraceEntry>> {
    settings.loss.validate()?;
    let mut batches = StratifiedBatches::new(labels, classes, settings.batch_size, seed)?;
    let mut adam = AdamState::new(&model.params, settings.learning_rate);
    let mut trace = Vec::with_capacity(settings.iterations);
    let mut phase = None;
    for iteration in 0..settings.iterations {
        let active = loss_schedule(iteration, &settings.loss);
        if phase.is_some_and(|p| p != active) {
            // moment estimates from the previous objective would throttle the new one
            adam = AdamState::new(&model.params, settings.learning_rate);
        }
        phase = Some(active);
        let idx = batches.next().expect("batch stream is endless");
        let x = images.select_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let dropout_seed = seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(iteration as u64);
        let pass = model.forward(&x, dropout_seed)?;
        let (loss, value, grads) = match active {
            ActiveLoss::Superlative => {
                let report = superlative_loss(&pass.activation_vectors, &y, classes, &settings.loss)?;
                let zero = Tensor::zeros(pass.logits.shape());
                let grads = model.backward(&pass.cache, &zero, &report.grad_avs)?;
                (TraceLoss::Superlative, report.total, grads)
            }
            ActiveLoss::Companion(_) => {
                let (value, grad) = cross_entropy_loss(&pass.logits, &y)?;
                let zero = Tensor::zeros(pass.activation_vectors.shape());
                let grads = model.backward(&pass.cache, &grad, &zero)?;
                (TraceLoss::CrossEntropy, value, grads)
            }
        };
        model.update_running_stats(&pass.cache);
        adam.step(&mut model.params, &grads)?;
        trace.push(TraceEntry {
            iteration,
            loss,
            value,
        });
    }
    Ok(trace)
}
