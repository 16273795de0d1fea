//! Browser bindings: a superlative-loss explorer over synthetic activation
//! vectors, OpenMax recalibration of a single sample, and the openness
//! measure.

use osr_core::datasets::make_blobs;
use osr_core::evaluation::{openness, OpennessSpec};
use osr_core::openmax::{recalibrate_distances, WeibullModel};
use osr_core::superlative::{superlative_loss, LossConfig, LossReport};
use osr_core::{OsrError, Tensor};
use wasm_bindgen::prelude::*;

const WIDTH: usize = 8;

fn js(e: OsrError) -> JsError {
    JsError::new(&e.to_string())
}

/// Synthetic activation vectors moved by gradient descent on the superlative
/// loss.
#[wasm_bindgen]
pub struct Explorer {
    avs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    config: LossConfig,
    report: LossReport,
}

impl Explorer {
    pub fn build(
        classes: usize,
        per_class: usize,
        spread: f64,
        gamma: f64,
        seed: u64,
    ) -> Result<Self, OsrError> {
        let blobs = make_blobs(classes, per_class, WIDTH, spread, 1.0, seed)?;
        let config = LossConfig {
            gamma,
            ..LossConfig::default()
        };
        config.validate()?;
        let report = superlative_loss(&blobs.images, &blobs.labels, classes, &config)?;
        Ok(Explorer {
            avs: blobs.images,
            labels: blobs.labels,
            classes,
            config,
            report,
        })
    }

    /// Moves every vector against its gradient, scaled so the largest
    /// coordinate change is `rate`.
    pub fn descend(&mut self, steps: usize, rate: f64) -> Result<(), OsrError> {
        for _ in 0..steps {
            let g = self.report.grad_avs.data();
            let peak = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak == 0.0 {
                break;
            }
            for (a, d) in self.avs.data_mut().iter_mut().zip(g) {
                *a -= rate * d / peak;
            }
            self.report = superlative_loss(&self.avs, &self.labels, self.classes, &self.config)?;
        }
        Ok(())
    }

    pub fn report(&self) -> &LossReport {
        &self.report
    }
}

#[wasm_bindgen]
impl Explorer {
    #[wasm_bindgen(constructor)]
    pub fn new(classes: usize, per_class: usize, spread: f64, gamma: f64, seed: u32) -> Result<Explorer, JsError> {
        Explorer::build(classes, per_class, spread, gamma, seed as u64).map_err(js)
    }

    pub fn step(&mut self, steps: usize, rate: f64) -> Result<(), JsError> {
        self.descend(steps, rate).map_err(js)
    }

    /// `[BD, IS, IC, L_s, R]`.
    pub fn terms(&self) -> Vec<f64> {
        let r = &self.report;
        vec![r.boundary_distance, r.inter_separation, r.intra_compactness, r.total, r.radius]
    }

    /// Projected class means, three coordinates each.
    pub fn means(&self) -> Vec<f64> {
        self.report.class_points.iter().flat_map(|p| p.coords).collect()
    }

    /// Projected samples in the basis of the current means.
    pub fn samples(&self) -> Vec<f64> {
        self.report
            .basis
            .project(&self.avs)
            .map(|ps| ps.iter().flat_map(|p| p.coords).collect())
            .unwrap_or_default()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.labels.iter().map(|&y| y as u32).collect()
    }
}

/// OpenMax probabilities over the known classes plus unknown, with one
/// unshifted Weibull per class.
pub fn openmax_probabilities(
    logits: &[f64],
    distances: &[f64],
    shape: f64,
    scale: f64,
    alpha: usize,
) -> Result<Vec<f64>, OsrError> {
    let models: Vec<WeibullModel> = (0..logits.len())
        .map(|c| WeibullModel {
            class_id: c,
            shape,
            scale,
            shift: 0.0,
            tail_size: 0,
        })
        .collect();
    recalibrate_distances(logits, distances, &models, alpha)
}

#[wasm_bindgen(js_name = openmax)]
pub fn openmax_js(
    logits: Vec<f64>,
    distances: Vec<f64>,
    shape: f64,
    scale: f64,
    alpha: usize,
) -> Result<Vec<f64>, JsError> {
    openmax_probabilities(&logits, &distances, shape, scale, alpha).map_err(js)
}

/// Openness for `c_train` known classes among `c_test` test classes.
#[wasm_bindgen(js_name = openness)]
pub fn openness_js(c_train: usize, c_test: usize) -> Result<f64, JsError> {
    openness(&OpennessSpec::protocol(c_train, c_test)).map_err(js)
}
