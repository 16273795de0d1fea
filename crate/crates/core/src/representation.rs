//! Class mean activation vectors and the three-component PCA feature space.

use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};
use crate::linalg::symmetric_eigen;
use crate::tensor::{dot, Tensor};

/// Per-class mean of penultimate-layer activation vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanActivationVector {
    pub class_id: usize,
    pub vector: Vec<f64>,
    /// Number of samples averaged.
    pub count: usize,
}

/// Means of the rows of `avs` grouped by label, one per class in `0..classes`.
pub fn compute_mavs(
    avs: &Tensor,
    labels: &[usize],
    classes: usize,
) -> Result<Vec<MeanActivationVector>> {
    if avs.rows() != labels.len() {
        return Err(OsrError::Input(format!(
            "{} activation vectors but {} labels",
            avs.rows(),
            labels.len()
        )));
    }
    let width = avs.row_len();
    let mut sums = vec![vec![0.0; width]; classes];
    let mut counts = vec![0usize; classes];
    for (n, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(OsrError::Input(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        for (s, v) in sums[label].iter_mut().zip(avs.row(n)) {
            *s += v;
        }
        counts[label] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(class_id, (sum, count))| {
            if count == 0 {
                return Err(OsrError::Input(format!(
                    "class {class_id} has no samples; its mean is undefined"
                )));
            }
            Ok(MeanActivationVector {
                class_id,
                vector: sum.into_iter().map(|s| s / count as f64).collect(),
                count,
            })
        })
        .collect()
}

/// Center and top three principal directions of a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub center: Vec<f64>,
    pub components: [Vec<f64>; 3],
    /// Population variances along each component, descending.
    pub eigenvalues: [f64; 3],
    /// How many trailing components were filled in by orthogonal completion
    /// because the covariance has rank below three.
    pub completed: usize,
}

/// A point in the three-component feature space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub coords: [f64; 3],
    /// Class id for projected means, sample index for projected samples.
    pub id: usize,
}

/// Eigenvalues at or below this fraction of the total variance count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Fits the top-three PCA basis with population covariance (divisor = point
/// count).
///
/// Each component is sign-normalized so its largest-magnitude entry is
/// positive. Directions with (numerically) zero variance are replaced by a
/// deterministic orthogonal completion against the standard basis and get
/// eigenvalue exactly 0.
pub fn fit_pca_basis(points: &[Vec<f64>]) -> Result<PcaBasis> {
    if points.len() < 2 {
        return Err(OsrError::Input(format!(
            "PCA needs at least 2 points, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if d < 3 {
        return Err(OsrError::Input(format!(
            "PCA to three components needs width >= 3, got {d}"
        )));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(OsrError::Input("PCA points have unequal widths".into()));
    }
    let n = points.len();
    let mut center = vec![0.0; d];
    for p in points {
        for (c, v) in center.iter_mut().zip(p) {
            *c += v;
        }
    }
    center.iter_mut().for_each(|c| *c /= n as f64);
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&center).map(|(v, c)| v - c).collect())
        .collect();
    let total_variance: f64 = centered.iter().map(|p| dot(p, p)).sum::<f64>() / n as f64;

    // Few points in a wide space: decompose the n × n Gram matrix instead of
    // the d × d covariance; both share their nonzero spectrum.
    let (values, vectors) = if n < d {
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let g = dot(&centered[i], &centered[j]) / n as f64;
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let (vals, us) = symmetric_eigen(&gram, n);
        let vecs = vals
            .iter()
            .zip(&us)
            .map(|(&lambda, u)| {
                let mut v = vec![0.0; d];
                for (ui, p) in u.iter().zip(&centered) {
                    for (vk, pk) in v.iter_mut().zip(p) {
                        *vk += ui * pk;
                    }
                }
                let norm = (lambda.max(0.0) * n as f64).sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                v
            })
            .collect::<Vec<_>>();
        (vals, vecs)
    } else {
        let mut cov = vec![0.0; d * d];
        for p in &centered {
            for i in 0..d {
                for j in 0..=i {
                    cov[i * d + j] += p[i] * p[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let c = cov[i * d + j] / n as f64;
                cov[i * d + j] = c;
                cov[j * d + i] = c;
            }
        }
        symmetric_eigen(&cov, d)
    };

    let zero_below = RANK_TOLERANCE * total_variance.max(f64::MIN_POSITIVE);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(3);
    let mut eigenvalues = [0.0; 3];
    for (k, (lambda, v)) in values.iter().zip(vectors).take(3).enumerate() {
        if *lambda <= zero_below {
            break;
        }
        eigenvalues[k] = *lambda;
        components.push(v);
    }
    let found = components.len();
    while components.len() < 3 {
        let next = orthogonal_completion(&components, d);
        components.push(next);
    }
    for c in components.iter_mut() {
        normalize_sign(c);
    }
    let mut it = components.into_iter();
    Ok(PcaBasis {
        center,
        components: [
            it.next().expect("three components"),
            it.next().expect("three components"),
            it.next().expect("three components"),
        ],
        eigenvalues,
        completed: 3 - found,
    })
}

/// Unit vector orthogonal to `basis`: the standard basis vector with the
/// largest residual after Gram-Schmidt (lowest index on ties).
fn orthogonal_completion(basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for j in 0..d {
        let mut r = vec![0.0; d];
        r[j] = 1.0;
        // two passes of Gram-Schmidt for numerical orthogonality
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&r, b);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= proj * bi;
                }
            }
        }
        let norm = dot(&r, &r).sqrt();
        if best.as_ref().is_none_or(|(n, _)| norm > *n + 1e-12) {
            best = Some((norm, r));
        }
    }
    let (norm, mut r) = best.expect("d >= 3");
    r.iter_mut().for_each(|x| *x /= norm);
    r
}

fn normalize_sign(v: &mut [f64]) {
    let mut idx = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[idx].abs() {
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

impl PcaBasis {
    pub fn width(&self) -> usize {
        self.center.len()
    }

    /// Coordinates of `vector − center` along the three components.
    pub fn project_one(&self, vector: &[f64]) -> Result<[f64; 3]> {
        if vector.len() != self.width() {
            return Err(OsrError::Input(format!(
                "vector width {} does not match basis width {}",
                vector.len(),
                self.width()
            )));
        }
        let mut coords = [0.0; 3];
        for (c, comp) in coords.iter_mut().zip(&self.components) {
            *c = vector
                .iter()
                .zip(&self.center)
                .zip(comp)
                .map(|((v, m), e)| (v - m) * e)
                .sum();
        }
        Ok(coords)
    }

    /// Projects each row of `vectors`; ids are row indices.
    pub fn project(&self, vectors: &Tensor) -> Result<Vec<ProjectedPoint>> {
        (0..vectors.rows())
            .map(|i| {
                Ok(ProjectedPoint {
                    coords: self.project_one(vectors.row(i))?,
                    id: i,
                })
            })
            .collect()
    }

    /// Projects class means; ids are class ids.
    pub fn project_mavs(&self, mavs: &[MeanActivationVector]) -> Result<Vec<ProjectedPoint>> {
        mavs.iter()
            .map(|m| {
                Ok(ProjectedPoint {
                    coords: self.project_one(&m.vector)?,
                    id: m.class_id,
                })
            })
            .collect()
    }

    /// Maps a gradient over projected coordinates back to the input space
    /// (the transpose of the projection).
    pub fn lift(&self, grad: &[f64; 3], out: &mut [f64]) {
        for (g, comp) in grad.iter().zip(&self.components) {
            if *g != 0.0 {
                for (o, e) in out.iter_mut().zip(comp) {
                    *o += g * e;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn two_point_class_mean() {
        let avs = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![9.0, 9.0]]).unwrap();
        let mavs = compute_mavs(&avs, &[0, 0, 1], 2).unwrap();
        assert_eq!(mavs[0].vector, vec![2.0, 3.0]);
        assert_eq!(mavs[0].count, 2);
        assert_eq!(mavs[1].vector, vec![9.0, 9.0]);
    }

    #[test]
    fn empty_class_is_named_in_error() {
        let avs = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let err = compute_mavs(&avs, &[0, 2], 3).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    #[test]
    fn rank_one_line_gets_completed_components() {
        let pts: Vec<Vec<f64>> = [-2.0, -1.0, 1.0, 2.0]
            .iter()
            .map(|t| vec![t * 1.0, t * 2.0, t * 2.0])
            .collect();
        let b = fit_pca_basis(&pts).unwrap();
        // variance along (1,2,2)/3 is mean(t²)·9 = 2.5·9
        assert!(close(b.eigenvalues[0], 22.5, 1e-10));
        assert_eq!(&b.eigenvalues[1..], &[0.0, 0.0]);
        assert_eq!(b.completed, 2);
        let expected = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        for (a, e) in b.components[0].iter().zip(expected) {
            assert!(close(*a, e, 1e-12));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(&b.components[i], &b.components[j]);
                assert!(close(d, if i == j { 1.0 } else { 0.0 }, 1e-12));
            }
        }
    }

    #[test]
    fn axis_aligned_fixture() {
        let pts = vec![
            vec![1.0, 0.0, 0.0],
            vec![-1.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.0],
            vec![0.0, -0.5, 0.0],
        ];
        let b = fit_pca_basis(&pts).unwrap();
        assert!(close(b.eigenvalues[0], 0.5, 1e-14));
        assert!(close(b.eigenvalues[1], 0.125, 1e-14));
        assert_eq!(b.eigenvalues[2], 0.0);
        assert!(close(b.components[0][0], 1.0, 1e-14));
        assert!(close(b.components[1][1], 1.0, 1e-14));
    }

    #[test]
    fn too_few_points_or_narrow_width_fail() {
        assert!(fit_pca_basis(&[vec![1.0, 2.0, 3.0]]).is_err());
        assert!(fit_pca_basis(&[vec![1.0, 2.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn projection_fixtures() {
        let pts = vec![
            vec![1.0, 0.0, 0.0, 2.0],
            vec![-1.0, 0.5, 0.0, 1.0],
            vec![0.0, 0.5, 3.0, 0.0],
            vec![0.2, -1.0, 1.0, 0.0],
            vec![0.7, 0.1, -2.0, 1.0],
        ];
        let b = fit_pca_basis(&pts).unwrap();
        assert_eq!(b.project_one(&b.center).unwrap(), [0.0; 3]);
        let v: Vec<f64> = b
            .center
            .iter()
            .zip(&b.components[0])
            .map(|(c, e)| c + 2.0 * e)
            .collect();
        let p = b.project_one(&v).unwrap();
        assert!(close(p[0], 2.0, 1e-12) && p[1].abs() < 1e-12 && p[2].abs() < 1e-12);
        assert!(b.project_one(&[1.0, 2.0]).is_err());
    }
}
