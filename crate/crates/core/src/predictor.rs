//! Per-class distance thresholds and the open-set prediction rule.

use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};
use crate::openmax::DistanceKind;
use crate::representation::{MeanActivationVector, PcaBasis};
use crate::tensor::{argmax, softmax, Tensor};

/// Space in which sample-to-mean distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DistanceSpace {
    #[default]
    Full,
    /// The top-3 principal projection of the class means.
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub thresholds: Vec<f64>,
    pub percentile: f64,
    pub distance_kind: DistanceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `K` means unknown.
    pub label: usize,
    pub distance_to_nearest: f64,
    pub probabilities: Option<Vec<f64>>,
}

/// Nearest-rank percentile of `values`: the sorted value at 1-based index
/// `ceil(p/100 · n)`.
pub fn nearest_rank(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(OsrError::Input("percentile of an empty list".into()));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(OsrError::Config(format!(
            "percentile must lie in (0, 100], got {percentile}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    // a product like 99.9·n/100 can land a hair above the integer it denotes
    let scaled = percentile * n as f64 / 100.0;
    let rank = (scaled - 1e-9 * scaled.max(1.0)).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

pub fn estimate_thresholds(
    train_avs: &Tensor,
    labels: &[usize],
    mavs: &[MeanActivationVector],
    percentile: f64,
    distance_kind: DistanceKind,
) -> Result<ThresholdTable> {
    if train_avs.rows() != labels.len() {
        return Err(OsrError::Input(format!(
            "{} activation vectors for {} labels",
            train_avs.rows(),
            labels.len()
        )));
    }
    let classes = mavs.len();
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(OsrError::Input(format!("label {y} outside [0, {classes})")));
        }
        per_class[y].push(distance_kind.distance(train_avs.row(i), &mavs[y].vector));
    }
    let mut thresholds = Vec::with_capacity(classes);
    for (c, d) in per_class.iter().enumerate() {
        if d.is_empty() {
            return Err(OsrError::Input(format!("class {c} has no training samples")));
        }
        thresholds.push(nearest_rank(d, percentile)?);
    }
    Ok(ThresholdTable {
        thresholds,
        percentile,
        distance_kind,
    })
}

/// Open-set prediction for one activation vector.
///
/// The nearest mean (lowest index on ties) is rejected as unknown when its
/// distance exceeds its threshold. Otherwise the label is the most probable
/// class among those whose own threshold test passes, using
/// `softmax_probs` when given and a softmax of negative distances
/// otherwise.
pub fn predict(
    av: &[f64],
    mavs: &[MeanActivationVector],
    thresholds: &ThresholdTable,
    softmax_probs: Option<&[f64]>,
) -> Result<Prediction> {
    let k = mavs.len();
    if thresholds.thresholds.len() != k {
        return Err(OsrError::Input(format!(
            "{} thresholds for {k} classes",
            thresholds.thresholds.len()
        )));
    }
    if let Some(p) = softmax_probs {
        if p.len() != k {
            return Err(OsrError::Input(format!("{} probabilities for {k} classes", p.len())));
        }
    }
    let distances: Vec<f64> = mavs
        .iter()
        .map(|m| {
            if m.vector.len() != av.len() {
                return Err(OsrError::Input(format!(
                    "activation width {} vs class mean width {}",
                    av.len(),
                    m.vector.len()
                )));
            }
            Ok(thresholds.distance_kind.distance(av, &m.vector))
        })
        .collect::<Result<_>>()?;
    let mut nearest = 0;
    for c in 1..k {
        if distances[c] < distances[nearest] {
            nearest = c;
        }
    }
    let distance_to_nearest = distances[nearest];

    let probabilities = match softmax_probs {
        Some(p) => p.to_vec(),
        None => softmax(&distances.iter().map(|d| -d).collect::<Vec<_>>()),
    };
    if distance_to_nearest > thresholds.thresholds[nearest] {
        return Ok(Prediction {
            label: k,
            distance_to_nearest,
            probabilities: Some(probabilities),
        });
    }
    let label = match softmax_probs {
        None => nearest,
        Some(p) => {
            let mut best: Option<usize> = None;
            for c in 0..k {
                if distances[c] <= thresholds.thresholds[c] && best.is_none_or(|b| p[c] > p[b]) {
                    best = Some(c);
                }
            }
            best.unwrap_or(nearest)
        }
    };
    Ok(Prediction {
        label,
        distance_to_nearest,
        probabilities: Some(probabilities),
    })
}

/// Projects activation vectors and class means into the 3-D principal
/// space so thresholds and predictions can run there.
pub fn project_space(
    basis: &PcaBasis,
    avs: &Tensor,
    mavs: &[MeanActivationVector],
) -> Result<(Tensor, Vec<MeanActivationVector>)> {
    let points = basis.project(avs)?;
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.coords.to_vec()).collect();
    let projected = if rows.is_empty() {
        Tensor::zeros(&[0, 3])
    } else {
        Tensor::from_rows(&rows)?
    };
    let means = mavs
        .iter()
        .map(|m| {
            Ok(MeanActivationVector {
                class_id: m.class_id,
                vector: basis.project_one(&m.vector)?.to_vec(),
                count: m.count,
            })
        })
        .collect::<Result<_>>()?;
    Ok((projected, means))
}

/// Labels for a whole batch; `probs` rows are softmax outputs when given.
pub fn predict_all(
    avs: &Tensor,
    mavs: &[MeanActivationVector],
    thresholds: &ThresholdTable,
    probs: Option<&Tensor>,
) -> Result<Vec<usize>> {
    (0..avs.rows())
        .map(|i| {
            predict(avs.row(i), mavs, thresholds, probs.map(|p| p.row(i))).map(|p| p.label)
        })
        .collect()
}

/// Closed-set label: arg-max of the network's logits.
pub fn closed_set_label(logits: &[f64]) -> usize {
    argmax(logits)
}
