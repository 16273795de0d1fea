//! The superlative loss: boundary distance, inter-separation and
//! intra-compactness of class means in a three-component PCA space.
//!
//! Every evaluation computes the class means of the batch, fits a PCA basis
//! on them, and projects both the means and the individual samples. The basis
//! is treated as a constant during differentiation, so the returned gradient
//! is exact for the loss with that basis held fixed.

use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};
use crate::representation::{compute_mavs, fit_pca_basis, PcaBasis, ProjectedPoint};
use crate::tensor::Tensor;

/// How the distance of a class point to the boundary shell is penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryForm {
    /// `Σ (R − ‖M‖)²`: zero exactly on the shell, bounded below.
    ShellSquared,
    /// `Σ (R − ‖M‖²)`, the formula as typeset.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeparationForm {
    /// Squared distance of the closest pair of class points.
    MinPairwise,
    /// Squared distance of the farthest pair, the formula as typeset.
    LiteralMax,
}

/// Whether the boundary radius is differentiated along with the class
/// points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadiusMode {
    /// `R` is a per-step target, held fixed like the PCA basis. Class points
    /// are pushed toward the shell but the shell is not pulled in.
    Frozen,
    /// Gradient also flows through `R` into the two extreme PC1 samples.
    /// Since every term then scales with the square of the activation
    /// scale, training tends to shrink all activations to zero.
    Tracked,
}

/// Loss that takes over after the superlative phase of staged training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompanionLoss {
    None,
    CrossEntropy,
    /// Cross-entropy training of a network later recalibrated by OpenMax.
    OpenMaxBackbone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Shell radius multiplier, must exceed 1.
    pub gamma: f64,
    pub bd_form: BoundaryForm,
    pub is_form: SeparationForm,
    pub radius: RadiusMode,
    /// First iteration at which the companion loss is active.
    pub switch_iteration: usize,
    pub companion: CompanionLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 1.5,
            bd_form: BoundaryForm::ShellSquared,
            is_form: SeparationForm::MinPairwise,
            radius: RadiusMode::Frozen,
            switch_iteration: 1500,
            companion: CompanionLoss::None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) || !self.gamma.is_finite() {
            return Err(OsrError::Config(format!(
                "gamma must be a finite real > 1, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Loss terms and the gradient with respect to each activation vector.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub boundary_distance: f64,
    pub inter_separation: f64,
    pub intra_compactness: f64,
    /// `boundary_distance − inter_separation + intra_compactness`.
    pub total: f64,
    pub radius: f64,
    pub grad_avs: Tensor,
    pub basis: PcaBasis,
    pub class_points: Vec<ProjectedPoint>,
}

/// `Γ · (max − min)` of the first projected coordinate over the samples.
pub fn boundary_radius(samples: &[ProjectedPoint], gamma: f64) -> Result<f64> {
    let (lo, hi) = pc1_extremes(samples)?;
    Ok(gamma * (samples[hi].coords[0] - samples[lo].coords[0]))
}

/// Indices of the min and max first coordinate; lowest index on ties.
fn pc1_extremes(samples: &[ProjectedPoint]) -> Result<(usize, usize)> {
    if samples.is_empty() {
        return Err(OsrError::Input("boundary radius needs at least one sample".into()));
    }
    let (mut lo, mut hi) = (0, 0);
    for (i, s) in samples.iter().enumerate() {
        if s.coords[0] < samples[lo].coords[0] {
            lo = i;
        }
        if s.coords[0] > samples[hi].coords[0] {
            hi = i;
        }
    }
    Ok((lo, hi))
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sq_dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum()
}

pub fn boundary_distance(class_points: &[ProjectedPoint], radius: f64, form: BoundaryForm) -> f64 {
    class_points
        .iter()
        .map(|m| match form {
            BoundaryForm::ShellSquared => (radius - norm3(&m.coords)).powi(2),
            BoundaryForm::Literal => radius - norm3(&m.coords).powi(2),
        })
        .sum()
}

/// The class-point pair selected by the separation form, lexicographically
/// lowest `(i, j)` on ties.
fn separation_pair(class_points: &[ProjectedPoint], form: SeparationForm) -> Result<(usize, usize)> {
    if class_points.len() < 2 {
        return Err(OsrError::Input(
            "inter-separation needs at least two class points".into(),
        ));
    }
    let mut best = (0, 1);
    let mut best_value = sq_dist3(&class_points[0].coords, &class_points[1].coords);
    for i in 0..class_points.len() {
        for j in i + 1..class_points.len() {
            let d = sq_dist3(&class_points[i].coords, &class_points[j].coords);
            let better = match form {
                SeparationForm::MinPairwise => d < best_value,
                SeparationForm::LiteralMax => d > best_value,
            };
            if better {
                best = (i, j);
                best_value = d;
            }
        }
    }
    Ok(best)
}

pub fn inter_separation(class_points: &[ProjectedPoint], form: SeparationForm) -> Result<f64> {
    let (i, j) = separation_pair(class_points, form)?;
    Ok(sq_dist3(&class_points[i].coords, &class_points[j].coords))
}

/// Sum of squared distances of every sample to its own class point.
/// `class_points` are looked up by their `id`.
pub fn intra_compactness(
    class_points: &[ProjectedPoint],
    samples: &[ProjectedPoint],
    labels: &[usize],
) -> Result<f64> {
    if samples.len() != labels.len() {
        return Err(OsrError::Input("one label per sample required".into()));
    }
    let mut total = 0.0;
    for (s, &label) in samples.iter().zip(labels) {
        let m = class_points
            .iter()
            .find(|m| m.id == label)
            .ok_or_else(|| OsrError::Input(format!("sample of unknown class {label}")))?;
        total += sq_dist3(&m.coords, &s.coords);
    }
    Ok(total)
}

/// Superlative loss of a labelled batch of activation vectors. Every class in
/// `0..classes` must be present.
pub fn superlative_loss(
    avs: &Tensor,
    labels: &[usize],
    classes: usize,
    config: &LossConfig,
) -> Result<LossReport> {
    check_batch(avs, labels, classes)?;
    let mavs = compute_mavs(avs, labels, classes)?;
    let points: Vec<Vec<f64>> = mavs.into_iter().map(|m| m.vector).collect();
    let basis = fit_pca_basis(&points)?;
    superlative_loss_with_basis(avs, labels, classes, config, &basis)
}

fn check_batch(avs: &Tensor, labels: &[usize], classes: usize) -> Result<()> {
    if avs.shape().len() != 2 || avs.rows() != labels.len() {
        return Err(OsrError::Input(format!(
            "activation vectors {:?} do not match {} labels",
            avs.shape(),
            labels.len()
        )));
    }
    if avs.row_len() < 3 {
        return Err(OsrError::Input(
            "activation vectors need width >= 3".into(),
        ));
    }
    let mut seen = vec![false; classes];
    for &l in labels {
        if l >= classes {
            return Err(OsrError::Input(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        seen[l] = true;
    }
    if let Some(class) = seen.iter().position(|s| !s) {
        return Err(OsrError::Stratification { class });
    }
    Ok(())
}

/// Same as [`superlative_loss`] with a fixed PCA basis; this is the function
/// whose exact gradient is returned under [`RadiusMode::Tracked`].
pub fn superlative_loss_with_basis(
    avs: &Tensor,
    labels: &[usize],
    classes: usize,
    config: &LossConfig,
    basis: &PcaBasis,
) -> Result<LossReport> {
    evaluate(avs, labels, classes, config, basis, None)
}

/// The loss with both the basis and the radius held fixed; its exact
/// gradient is the one returned under [`RadiusMode::Frozen`].
pub fn superlative_loss_fixed_radius(
    avs: &Tensor,
    labels: &[usize],
    classes: usize,
    config: &LossConfig,
    basis: &PcaBasis,
    radius: f64,
) -> Result<LossReport> {
    evaluate(avs, labels, classes, config, basis, Some(radius))
}

fn evaluate(
    avs: &Tensor,
    labels: &[usize],
    classes: usize,
    config: &LossConfig,
    basis: &PcaBasis,
    fixed_radius: Option<f64>,
) -> Result<LossReport> {
    config.validate()?;
    check_batch(avs, labels, classes)?;
    let mavs = compute_mavs(avs, labels, classes)?;
    let class_points = basis.project_mavs(&mavs)?;
    let samples = basis.project(avs)?;

    let (lo, hi) = pc1_extremes(&samples)?;
    let radius = match fixed_radius {
        Some(r) => r,
        None => config.gamma * (samples[hi].coords[0] - samples[lo].coords[0]),
    };
    let bd = boundary_distance(&class_points, radius, config.bd_form);
    let (pa, pb) = separation_pair(&class_points, config.is_form)?;
    let is = sq_dist3(&class_points[pa].coords, &class_points[pb].coords);
    let ic = intra_compactness(&class_points, &samples, labels)?;
    let total = bd - is + ic;

    // Gradients with respect to class points and projected samples.
    let mut g_class = vec![[0.0; 3]; classes];
    let mut g_sample = vec![[0.0; 3]; samples.len()];
    let mut g_radius = 0.0;
    for (i, m) in class_points.iter().enumerate() {
        let r = norm3(&m.coords);
        match config.bd_form {
            BoundaryForm::ShellSquared => {
                g_radius += 2.0 * (radius - r);
                // zero-norm class point: direction undefined, zero subgradient
                if r > 0.0 {
                    let f = -2.0 * (radius - r) / r;
                    for k in 0..3 {
                        g_class[i][k] += f * m.coords[k];
                    }
                }
            }
            BoundaryForm::Literal => {
                g_radius += 1.0;
                for k in 0..3 {
                    g_class[i][k] -= 2.0 * m.coords[k];
                }
            }
        }
    }
    if fixed_radius.is_none() && config.radius == RadiusMode::Tracked {
        g_sample[hi][0] += g_radius * config.gamma;
        g_sample[lo][0] -= g_radius * config.gamma;
    }
    for k in 0..3 {
        let diff = class_points[pa].coords[k] - class_points[pb].coords[k];
        g_class[pa][k] -= 2.0 * diff;
        g_class[pb][k] += 2.0 * diff;
    }
    for (n, (s, &label)) in samples.iter().zip(labels).enumerate() {
        for k in 0..3 {
            let diff = class_points[label].coords[k] - s.coords[k];
            g_class[label][k] += 2.0 * diff;
            g_sample[n][k] -= 2.0 * diff;
        }
    }

    // Class points are means of projected samples, projections are linear.
    let mut grad_avs = Tensor::zeros(avs.shape());
    for (n, &label) in labels.iter().enumerate() {
        let count = mavs[label].count as f64;
        let mut g = g_sample[n];
        for k in 0..3 {
            g[k] += g_class[label][k] / count;
        }
        basis.lift(&g, grad_avs.row_mut(n));
    }
    if !grad_avs.is_finite() || !total.is_finite() {
        return Err(OsrError::Numeric("superlative loss is not finite".into()));
    }

    Ok(LossReport {
        boundary_distance: bd,
        inter_separation: is,
        intra_compactness: ic,
        total,
        radius,
        grad_avs,
        basis: basis.clone(),
        class_points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveLoss {
    Superlative,
    Companion(CompanionLoss),
}

/// Which loss drives iteration `iteration`: the superlative loss on
/// `[0, switch_iteration)`, the companion loss from `switch_iteration` on.
/// Without a companion the superlative loss is always active.
pub fn loss_schedule(iteration: usize, config: &LossConfig) -> ActiveLoss {
    match config.companion {
        CompanionLoss::None => ActiveLoss::Superlative,
        companion if iteration >= config.switch_iteration => ActiveLoss::Companion(companion),
        _ => ActiveLoss::Superlative,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(coords: &[[f64; 3]]) -> Vec<ProjectedPoint> {
        coords
            .iter()
            .enumerate()
            .map(|(id, c)| ProjectedPoint { coords: *c, id })
            .collect()
    }

    #[test]
    fn radius_fixtures() {
        let s = pts(&[[-2.0, 5.0, 0.0], [0.0, 0.0, 1.0], [3.0, -1.0, 0.0]]);
        assert_eq!(boundary_radius(&s, 2.0).unwrap(), 10.0);
        assert_eq!(boundary_radius(&s, 4.0).unwrap(), 20.0);
        let same = pts(&[[1.5, 0.0, 0.0], [1.5, 2.0, 0.0]]);
        assert_eq!(boundary_radius(&same, 3.0).unwrap(), 0.0);
        assert!(boundary_radius(&[], 2.0).is_err());
    }

    #[test]
    fn boundary_distance_fixtures() {
        let on_axis = pts(&[[10.0, 0.0, 0.0]]);
        assert_eq!(boundary_distance(&on_axis, 10.0, BoundaryForm::ShellSquared), 0.0);
        let rotated = pts(&[[6.0, 8.0, 0.0]]);
        assert_eq!(boundary_distance(&rotated, 10.0, BoundaryForm::ShellSquared), 0.0);
        let literal = pts(&[[1.0, 2.0, 2.0]]);
        assert_eq!(boundary_distance(&literal, 5.0, BoundaryForm::Literal), -4.0);
    }

    #[test]
    fn separation_fixtures() {
        let m = pts(&[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 4.0, 0.0]]);
        assert_eq!(inter_separation(&m, SeparationForm::MinPairwise).unwrap(), 9.0);
        assert_eq!(inter_separation(&m, SeparationForm::LiteralMax).unwrap(), 25.0);
        let twins = pts(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        for form in [SeparationForm::MinPairwise, SeparationForm::LiteralMax] {
            assert_eq!(inter_separation(&twins, form).unwrap(), 0.0);
        }
        assert!(inter_separation(&m[..1], SeparationForm::MinPairwise).is_err());
    }

    #[test]
    fn compactness_fixtures() {
        let m = pts(&[[1.0, 0.0, 0.0]]);
        let s = pts(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(intra_compactness(&m, &s, &[0, 0]).unwrap(), 2.0);
        assert_eq!(intra_compactness(&m, &m, &[0]).unwrap(), 0.0);
        assert!(intra_compactness(&m, &s, &[0, 1]).is_err());
    }

    #[test]
    fn schedule_switches_at_boundary() {
        let mut c = LossConfig {
            companion: CompanionLoss::CrossEntropy,
            ..LossConfig::default()
        };
        assert_eq!(loss_schedule(0, &c), ActiveLoss::Superlative);
        assert_eq!(loss_schedule(1499, &c), ActiveLoss::Superlative);
        assert_eq!(
            loss_schedule(1500, &c),
            ActiveLoss::Companion(CompanionLoss::CrossEntropy)
        );
        c.companion = CompanionLoss::None;
        assert_eq!(loss_schedule(2999, &c), ActiveLoss::Superlative);
    }

    #[test]
    fn missing_class_is_a_stratification_error() {
        let avs = Tensor::from_rows(&[vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 0.0]]).unwrap();
        let err = superlative_loss(&avs, &[0, 0], 2, &LossConfig::default()).unwrap_err();
        assert!(matches!(err, OsrError::Stratification { class: 1 }));
    }

    #[test]
    fn gamma_must_exceed_one() {
        let avs = Tensor::from_rows(&[vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 0.0]]).unwrap();
        let cfg = LossConfig {
            gamma: 1.0,
            ..LossConfig::default()
        };
        assert!(matches!(
            superlative_loss(&avs, &[0, 1], 2, &cfg),
            Err(OsrError::Config(_))
        ));
    }
}
