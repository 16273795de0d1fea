//! OpenMax baseline: per-class Weibull tails over distances to class means,
//! and recalibration of logits into `K + 1` probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};
use crate::representation::MeanActivationVector;
use crate::tensor::{softmax, squared_distance, Tensor};

const SHAPE_TOLERANCE: f64 = 1e-10;
const MAX_SHAPE: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DistanceKind {
    #[default]
    Euclidean,
    SquaredEuclidean,
}

impl DistanceKind {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let sq = squared_distance(a, b);
        match self {
            DistanceKind::Euclidean => sq.sqrt(),
            DistanceKind::SquaredEuclidean => sq,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::SquaredEuclidean => "squared-euclidean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceKind::Euclidean),
            "squared-euclidean" | "squared_euclidean" => Ok(DistanceKind::SquaredEuclidean),
            other => Err(OsrError::Config(format!("unknown distance kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullModel {
    pub class_id: usize,
    pub shape: f64,
    pub scale: f64,
    /// Subtracted from a distance before the CDF is evaluated.
    pub shift: f64,
    pub tail_size: usize,
}

impl WeibullModel {
    pub fn cdf(&self, x: f64) -> f64 {
        let z = x - self.shift;
        if z <= 0.0 {
            return 0.0;
        }
        -(-(z / self.scale).powf(self.shape)).exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenMaxConfig {
    pub tail_size: usize,
    pub alpha: usize,
    pub distance: DistanceKind,
}

impl Default for OpenMaxConfig {
    fn default() -> Self {
        OpenMaxConfig {
            tail_size: 20,
            alpha: 3,
            distance: DistanceKind::Euclidean,
        }
    }
}

impl OpenMaxConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.tail_size < 2 {
            return Err(OsrError::Config(format!(
                "openmax tail_size must be at least 2, got {}",
                self.tail_size
            )));
        }
        if self.alpha == 0 || self.alpha > classes {
            return Err(OsrError::Config(format!(
                "openmax alpha must lie in [1, {classes}], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Where the fitted tail starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailShift {
    /// The smallest distance in the tail.
    TailMinimum,
    Fixed(f64),
}

/// Two-parameter Weibull maximum-likelihood fit. Returns `(shape, scale)`.
///
/// Samples must be strictly positive. The shape solves
/// `Σ xᵏ ln x / Σ xᵏ − 1/k − mean(ln x) = 0` by bisection; the data are
/// rescaled by their maximum first so `xᵏ` cannot overflow.
pub fn fit_weibull_mle(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(OsrError::DegenerateTail(format!(
            "{} positive sample(s); need at least 2",
            samples.len()
        )));
    }
    if samples.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(OsrError::Input("Weibull samples must be finite and positive".into()));
    }
    let max = samples.iter().cloned().fold(f64::MIN, f64::max);
    let min = samples.iter().cloned().fold(f64::MAX, f64::min);
    if min == max {
        return Err(OsrError::DegenerateTail("all tail values are equal".into()));
    }
    let logs: Vec<f64> = samples.iter().map(|&x| (x / max).ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / logs.len() as f64;

    let stationarity = |k: f64| {
        let mut num = 0.0;
        let mut den = 0.0;
        for &l in &logs {
            let p = (k * l).exp();
            num += p * l;
            den += p;
        }
        num / den - 1.0 / k - mean_log
    };

    let mut lo = 1.0;
    while stationarity(lo) > 0.0 {
        lo /= 2.0;
        if lo < 1e-12 {
            return Err(OsrError::Numeric("Weibull shape bracket underflow".into()));
        }
    }
    let mut hi = 2.0 * lo;
    while stationarity(hi) < 0.0 {
        hi *= 2.0;
        if hi > MAX_SHAPE {
            return Err(OsrError::DegenerateTail("tail too concentrated to fit a shape".into()));
        }
    }
    while hi - lo > SHAPE_TOLERANCE * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if stationarity(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shape = 0.5 * (lo + hi);
    let mean_pow = logs.iter().map(|&l| (shape * l).exp()).sum::<f64>() / logs.len() as f64;
    let scale = max * mean_pow.powf(1.0 / shape);
    if !(shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0) {
        return Err(OsrError::Numeric(format!(
            "Weibull fit produced shape {shape}, scale {scale}"
        )));
    }
    Ok((shape, scale))
}

/// Fits a Weibull to the `tail_size` largest distances, shifted so the tail
/// starts at zero.
pub fn fit_weibull_tail(distances: &[f64], tail_size: usize) -> Result<WeibullModel> {
    fit_weibull_tail_with(distances, tail_size, TailShift::TailMinimum)
}

/// Like [`fit_weibull_tail`] with an explicit shift. Excesses that are not
/// strictly positive (the tail minimum itself, under the default shift)
/// carry no likelihood information and are left out of the fit.
pub fn fit_weibull_tail_with(
    distances: &[f64],
    tail_size: usize,
    shift: TailShift,
) -> Result<WeibullModel> {
    if tail_size < 2 {
        return Err(OsrError::Config(format!("tail_size must be at least 2, got {tail_size}")));
    }
    if distances.len() < tail_size {
        return Err(OsrError::Input(format!(
            "{} distances for a tail of {tail_size}",
            distances.len()
        )));
    }
    if distances.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(OsrError::Input("distances must be finite and non-negative".into()));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let tail = &sorted[sorted.len() - tail_size..];
    if tail[0] == tail[tail_size - 1] {
        return Err(OsrError::DegenerateTail(format!(
            "all {tail_size} tail distances equal {}",
            tail[0]
        )));
    }
    let shift = match shift {
        TailShift::TailMinimum => tail[0],
        TailShift::Fixed(s) => s,
    };
    let excess: Vec<f64> = tail.iter().map(|d| d - shift).filter(|&z| z > 0.0).collect();
    let (shape, scale) = fit_weibull_mle(&excess)?;
    Ok(WeibullModel {
        class_id: 0,
        shape,
        scale,
        shift,
        tail_size,
    })
}

/// Fits one Weibull per class on the distances of correctly classified
/// training samples to their class mean.
///
/// The tail is `config.tail_size` clamped to half the class's correct
/// samples. A class with fewer than four correct samples falls back to all
/// of its samples. A tail with fewer than two distinct values is doubled
/// until it has them or covers the whole pool.
pub fn fit_openmax(
    avs: &Tensor,
    logits: &Tensor,
    labels: &[usize],
    mavs: &[MeanActivationVector],
    config: &OpenMaxConfig,
) -> Result<Vec<WeibullModel>> {
    let classes = mavs.len();
    config.validate(classes)?;
    if avs.rows() != labels.len() || logits.rows() != labels.len() {
        return Err(OsrError::Input("avs, logits and labels disagree in length".into()));
    }
    let mut correct: Vec<Vec<f64>> = vec![Vec::new(); classes];
    let mut all: Vec<Vec<f64>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(OsrError::Input(format!("label {y} outside [0, {classes})")));
        }
        let d = config.distance.distance(avs.row(i), &mavs[y].vector);
        all[y].push(d);
        if crate::tensor::argmax(logits.row(i)) == y {
            correct[y].push(d);
        }
    }
    let mut models = Vec::with_capacity(classes);
    for c in 0..classes {
        let pool = if correct[c].len() >= 4 { &correct[c] } else { &all[c] };
        let tail = config.tail_size.min(pool.len() / 2);
        if tail < 2 {
            return Err(OsrError::Input(format!(
                "class {c} has {} sample(s); OpenMax needs at least 4",
                pool.len()
            )));
        }
        let mut model = fit_widening(pool, tail)?;
        model.class_id = mavs[c].class_id;
        models.push(model);
    }
    Ok(models)
}

fn fit_widening(pool: &[f64], tail: usize) -> Result<WeibullModel> {
    let mut tail = tail;
    loop {
        match fit_weibull_tail(pool, tail) {
            Err(OsrError::DegenerateTail(_)) if tail < pool.len() => {
                tail = (2 * tail).min(pool.len());
            }
            other => return other,
        }
    }
}

/// Recalibrates `logits` given the distance from the sample to every class
/// mean. Returns `K + 1` probabilities, the last being the unknown class.
pub fn recalibrate_distances(
    logits: &[f64],
    distances: &[f64],
    weibulls: &[WeibullModel],
    alpha: usize,
) -> Result<Vec<f64>> {
    let k = logits.len();
    if distances.len() != k {
        return Err(OsrError::Input(format!(
            "{} distances for {k} logits",
            distances.len()
        )));
    }
    if alpha == 0 || alpha > k {
        return Err(OsrError::Config(format!("alpha must lie in [1, {k}], got {alpha}")));
    }
    let mut ranked: Vec<usize> = (0..k).collect();
    ranked.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));

    let mut revised = logits.to_vec();
    let mut unknown = 0.0;
    for (rank, &c) in ranked.iter().take(alpha).enumerate() {
        let model = weibulls
            .iter()
            .find(|m| m.class_id == c)
            .ok_or_else(|| OsrError::Config(format!("no Weibull model for class {c}")))?;
        let weight = (alpha - rank) as f64 / alpha as f64;
        let w = 1.0 - weight * model.cdf(distances[c]);
        revised[c] = logits[c] * w;
        unknown += logits[c] * (1.0 - w);
    }
    revised.push(unknown);
    Ok(softmax(&revised))
}

pub fn openmax_recalibrate(
    av: &[f64],
    logits: &[f64],
    mavs: &[MeanActivationVector],
    weibulls: &[WeibullModel],
    config: &OpenMaxConfig,
) -> Result<Vec<f64>> {
    if mavs.len() != logits.len() {
        return Err(OsrError::Input(format!(
            "{} class means for {} logits",
            mavs.len(),
            logits.len()
        )));
    }
    let distances: Vec<f64> = mavs
        .iter()
        .map(|m| config.distance.distance(av, &m.vector))
        .collect();
    recalibrate_distances(logits, &distances, weibulls, config.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(class_id: usize, shape: f64, scale: f64) -> WeibullModel {
        WeibullModel {
            class_id,
            shape,
            scale,
            shift: 0.0,
            tail_size: 10,
        }
    }

    #[test]
    fn cdf_limits() {
        let m = WeibullModel { shift: 2.0, ..model(0, 0.5, 3.0) };
        assert_eq!(m.cdf(2.0), 0.0);
        assert_eq!(m.cdf(-1.0), 0.0);
        // at shape 0.5 the tail is heavy: 50 scales out the CDF is 1 − e^−√50
        assert!((m.cdf(2.0 + 50.0 * 3.0) - (1.0 - (-50f64.sqrt()).exp())).abs() < 1e-15);
        for shape in [0.7, 1.0, 2.0] {
            let m = WeibullModel { shape, ..m.clone() };
            assert!(m.cdf(2.0 + 50.0 * 3.0) >= 0.999999);
        }
        let mut prev = 0.0;
        for i in 0..200 {
            let c = m.cdf(2.0 + i as f64 * 0.1);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn constant_tail_is_degenerate() {
        let err = fit_weibull_tail(&[3.0; 30], 10).unwrap_err();
        assert!(matches!(err, OsrError::DegenerateTail(_)));
    }

    #[test]
    fn too_few_distances() {
        let err = fit_weibull_tail(&[1.0, 2.0, 3.0], 5).unwrap_err();
        assert!(matches!(err, OsrError::Input(_)));
    }

    #[test]
    fn tail_uses_largest_values() {
        let d: Vec<f64> = (0..100).map(|i| i as f64 * 0.37 % 11.0).collect();
        let m = fit_weibull_tail(&d, 20).unwrap();
        let mut s = d.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(m.shift, s[80]);
        assert_eq!(m.tail_size, 20);
        assert!(m.shape > 0.0 && m.scale > 0.0);
    }

    #[test]
    fn mle_stationarity_holds_at_solution() {
        let x = [0.3, 1.2, 0.7, 2.5, 1.9, 0.05, 1.1];
        let (k, lambda) = fit_weibull_mle(&x).unwrap();
        let n = x.len() as f64;
        let sk: f64 = x.iter().map(|v: &f64| v.powf(k)).sum();
        let skl: f64 = x.iter().map(|v: &f64| v.powf(k) * v.ln()).sum();
        let ml: f64 = x.iter().map(|v: &f64| v.ln()).sum::<f64>() / n;
        assert!((skl / sk - 1.0 / k - ml).abs() < 1e-8);
        assert!((lambda - (sk / n).powf(1.0 / k)).abs() < 1e-10);
    }

    #[test]
    fn output_is_a_distribution() {
        let w = vec![model(0, 2.0, 1.0), model(1, 1.0, 2.0), model(2, 3.0, 0.5)];
        let p = recalibrate_distances(&[3.0, -1.0, 0.5], &[0.4, 5.0, 1.0], &w, 2).unwrap();
        assert_eq!(p.len(), 4);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn at_the_mean_unknown_is_least_likely() {
        let w = vec![model(0, 2.0, 1.0), model(1, 2.0, 1.0)];
        let p = recalibrate_distances(&[4.0, 2.0], &[0.0, 3.0], &w, 1).unwrap();
        assert!(p[2] < p[0] && p[2] < p[1]);
    }

    #[test]
    fn far_away_unknown_wins() {
        let w = vec![model(0, 2.0, 1.0), model(1, 2.0, 1.0), model(2, 2.0, 1.0)];
        let p = recalibrate_distances(&[4.0, 3.0, 1.0], &[100.0; 3], &w, 3).unwrap();
        assert_eq!(crate::tensor::argmax(&p), 3);
    }

    #[test]
    fn missing_model_is_a_config_error() {
        let w = vec![model(1, 2.0, 1.0)];
        let err = recalibrate_distances(&[4.0, 3.0], &[1.0, 1.0], &w, 1).unwrap_err();
        assert!(matches!(err, OsrError::Config(_)));
    }

    #[test]
    fn alpha_bounds() {
        assert!(OpenMaxConfig { alpha: 0, ..Default::default() }.validate(3).is_err());
        assert!(OpenMaxConfig { alpha: 4, ..Default::default() }.validate(3).is_err());
        assert!(OpenMaxConfig { tail_size: 1, ..Default::default() }.validate(3).is_err());
        assert!(OpenMaxConfig::default().validate(3).is_ok());
    }
}
