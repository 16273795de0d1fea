//! Confusion matrices, grouped macro metrics, openness, multi-run
//! aggregation and Welch's t-test.

use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};

/// `(K + 1) × (K + 1)` counts; rows are truth, columns prediction, and
/// index `K` is the unknown class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub size: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.size + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, r: usize) -> u64 {
        (0..self.size).map(|c| self.get(r, c)).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.size).map(|r| self.get(r, c)).sum()
    }
}

/// Builds the confusion matrix of `K` known classes plus the unknown label
/// `K`.
pub fn confusion(preds: &[usize], truths: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(OsrError::Input(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let size = classes + 1;
    let mut counts = vec![0u64; size * size];
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= size || t >= size {
            return Err(OsrError::Input(format!(
                "label pair (truth {t}, prediction {p}) outside [0, {classes}]"
            )));
        }
        counts[t * size + p] += 1;
    }
    Ok(ConfusionMatrix { size, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct GroupMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl GroupMetrics {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
            Metric::Accuracy => self.accuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    /// Unweighted mean over all `K + 1` classes.
    Overall,
    /// Unweighted mean over the `K` known classes.
    Known,
    /// The unknown class on its own.
    UnknownClass,
    /// Support-weighted mean over all `K + 1` classes.
    InclUnknown,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Overall, Group::Known, Group::UnknownClass, Group::InclUnknown];

    pub fn name(self) -> &'static str {
        match self {
            Group::Overall => "overall",
            Group::Known => "known",
            Group::UnknownClass => "unknown_class",
            Group::InclUnknown => "incl_unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Precision,
    Recall,
    F1,
    Accuracy,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Precision, Metric::Recall, Metric::F1, Metric::Accuracy];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Accuracy => "accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub per_class: Vec<ClassMetrics>,
    pub overall: GroupMetrics,
    pub known: GroupMetrics,
    pub unknown_class: GroupMetrics,
    pub incl_unknown: GroupMetrics,
}

impl RunMetrics {
    pub fn group(&self, g: Group) -> &GroupMetrics {
        match g {
            Group::Overall => &self.overall,
            Group::Known => &self.known,
            Group::UnknownClass => &self.unknown_class,
            Group::InclUnknown => &self.incl_unknown,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-class and grouped precision, recall, F1 and accuracy. Any ratio
/// with a zero denominator is 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<RunMetrics> {
    if cm.size < 2 || cm.total() == 0 {
        return Err(OsrError::Input("metrics of an empty confusion matrix".into()));
    }
    let k = cm.size - 1;
    let per_class: Vec<ClassMetrics> = (0..cm.size)
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            ClassMetrics {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: cm.row_sum(c),
            }
        })
        .collect();
    let macro_over = |range: std::ops::Range<usize>| GroupMetrics {
        precision: mean(per_class[range.clone()].iter().map(|m| m.precision)),
        recall: mean(per_class[range.clone()].iter().map(|m| m.recall)),
        f1: mean(per_class[range.clone()].iter().map(|m| m.f1)),
        accuracy: 0.0,
    };
    let trace: u64 = (0..cm.size).map(|c| cm.get(c, c)).sum();
    let total = cm.total();

    let mut overall = macro_over(0..cm.size);
    overall.accuracy = ratio(trace, total);

    let mut known = macro_over(0..k);
    let known_rows: u64 = (0..k).map(|c| cm.row_sum(c)).sum();
    let known_correct: u64 = (0..k).map(|c| cm.get(c, c)).sum();
    known.accuracy = ratio(known_correct, known_rows);

    let u = per_class[k];
    let unknown_class = GroupMetrics {
        precision: u.precision,
        recall: u.recall,
        f1: u.f1,
        accuracy: u.recall,
    };

    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    let incl_unknown = GroupMetrics {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
        accuracy: ratio(trace, total),
    };

    Ok(RunMetrics {
        per_class,
        overall,
        known,
        unknown_class,
        incl_unknown,
    })
}

/// Fraction of known-class samples whose closed-set prediction is right.
/// Samples whose truth is `unknown_label` are skipped.
pub fn closed_set_accuracy(preds: &[usize], truths: &[usize], unknown_label: usize) -> f64 {
    let mut n = 0u64;
    let mut hit = 0u64;
    for (&p, &t) in preds.iter().zip(truths) {
        if t != unknown_label {
            n += 1;
            hit += u64::from(p == t);
        }
    }
    ratio(hit, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpennessSpec {
    pub c_train: usize,
    pub c_test: usize,
    pub c_target: usize,
}

impl OpennessSpec {
    /// The usual protocol: every class at test time, target = train + 1.
    pub fn protocol(c_train: usize, c_test: usize) -> Self {
        OpennessSpec {
            c_train,
            c_test,
            c_target: c_train + 1,
        }
    }
}

/// `1 − sqrt(2·C_train / (C_test + C_target))`.
pub fn openness(spec: &OpennessSpec) -> Result<f64> {
    let OpennessSpec {
        c_train,
        c_test,
        c_target,
    } = *spec;
    if c_train == 0 || c_test == 0 || c_target == 0 {
        return Err(OsrError::Config("openness class counts must be positive".into()));
    }
    if c_test + c_target < 2 * c_train {
        return Err(OsrError::Config(format!(
            "C_test + C_target = {} is below 2·C_train = {}",
            c_test + c_target,
            2 * c_train
        )));
    }
    Ok(1.0 - (2.0 * c_train as f64 / (c_test + c_target) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// Sample (n − 1) standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(OsrError::Input("summary of no values".into()));
    }
    let n = values.len();
    let m = values.iter().sum::<f64>() / n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Summary { mean: m, median, std })
}

/// Running mean of `values`: element `i` is the mean of the first `i + 1`.
pub fn cumulative_mean(values: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            sum += v;
            sum / (i + 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEntry {
    pub group: Group,
    pub metric: Metric,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub entries: Vec<AggregateEntry>,
    /// Cumulative mean of overall F1 by run count.
    pub cumulative_f1: Vec<f64>,
}

impl Aggregate {
    pub fn get(&self, group: Group, metric: Metric) -> Summary {
        self.entries
            .iter()
            .find(|e| e.group == group && e.metric == metric)
            .map(|e| e.summary)
            .expect("every group/metric pair is aggregated")
    }
}

pub fn aggregate(runs: &[RunMetrics]) -> Result<Aggregate> {
    if runs.is_empty() {
        return Err(OsrError::Input("aggregate of no runs".into()));
    }
    let mut entries = Vec::new();
    for group in Group::ALL {
        for metric in Metric::ALL {
            let values: Vec<f64> = runs.iter().map(|r| r.group(group).get(metric)).collect();
            entries.push(AggregateEntry {
                group,
                metric,
                summary: summarize(&values)?,
            });
        }
    }
    let f1: Vec<f64> = runs.iter().map(|r| r.overall.f1).collect();
    Ok(Aggregate {
        runs: runs.len(),
        entries,
        cumulative_f1: cumulative_mean(&f1),
    })
}

/// Two-sided Welch t-test p-value.
///
/// When both samples have zero variance the p-value is 1 for equal means
/// and 0 otherwise.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(OsrError::Input("Welch's t-test needs at least 2 values per sample".into()));
    }
    let sa = summarize(a)?;
    let sb = summarize(b)?;
    let va = sa.std * sa.std / a.len() as f64;
    let vb = sb.std * sb.std / b.len() as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if sa.mean == sb.mean { 1.0 } else { 0.0 });
    }
    let t = (sa.mean - sb.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    Ok(student_t_two_sided(t, df).clamp(0.0, 1.0))
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, 0.5 * df, 0.5)
}

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_fraction(1.0 - x, b, a) / b
    }
}

fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + even * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + even / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let odd = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + odd * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + odd / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_tally() {
        let cm = confusion(&[0, 1, 1], &[0, 0, 1], 1).unwrap();
        assert_eq!(cm.get(0, 0), 1);
        assert_eq!(cm.get(0, 1), 1);
        assert_eq!(cm.get(1, 1), 1);
        assert_eq!(cm.total(), 3);
        assert!(confusion(&[3], &[0], 2).is_err());
    }

    #[test]
    fn all_unknown_predictions_fill_one_column() {
        let cm = confusion(&[2; 5], &[0, 1, 2, 1, 0], 2).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(cm.get(r, c), 0);
            }
        }
        assert_eq!((0..3).map(|r| cm.get(r, 2)).sum::<u64>(), 5);
    }

    #[test]
    fn perfect_classifier() {
        let y = [0, 1, 2, 2, 1, 0, 0];
        let m = metrics(&confusion(&y, &y, 2).unwrap()).unwrap();
        for g in Group::ALL {
            for k in Metric::ALL {
                assert_eq!(m.group(g).get(k), 1.0);
            }
        }
    }

    #[test]
    fn two_by_two_fixture() {
        let cm = ConfusionMatrix {
            size: 2,
            counts: vec![3, 1, 2, 4],
        };
        let m = metrics(&cm).unwrap();
        assert!((m.per_class[0].precision - 0.6).abs() < 1e-15);
        assert!((m.per_class[0].recall - 0.75).abs() < 1e-15);
        assert!((m.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.overall.accuracy, 0.7);
    }

    #[test]
    fn never_predicted_class_has_zero_precision() {
        let m = metrics(&confusion(&[0, 0], &[0, 1], 1).unwrap()).unwrap();
        assert_eq!(m.per_class[1].precision, 0.0);
        assert_eq!(m.per_class[1].f1, 0.0);
        assert_eq!(m.unknown_class.recall, 0.0);
    }

    #[test]
    fn openness_values() {
        let o = |a, b, c| {
            openness(&OpennessSpec {
                c_train: a,
                c_test: b,
                c_target: c,
            })
            .unwrap()
        };
        assert!((o(6, 10, 7) - 0.159_832).abs() < 1e-6);
        assert!((o(8, 10, 9) - 0.082_337).abs() < 1e-6);
        assert_eq!(o(5, 5, 5), 0.0);
        assert!(openness(&OpennessSpec { c_train: 8, c_test: 5, c_target: 9 }).is_err());
    }

    #[test]
    fn summary_fixtures() {
        let s = summarize(&[0.8, 0.9]).unwrap();
        assert!((s.mean - 0.85).abs() < 1e-15);
        assert!((s.std - 0.070_710_678_118_654_75).abs() < 1e-12);
        let s = summarize(&[0.4]).unwrap();
        assert_eq!((s.mean, s.median, s.std), (0.4, 0.4, 0.0));
        assert_eq!(cumulative_mean(&[0.5; 4]), vec![0.5; 4]);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x, I_x(a, 1) = x^a
        assert!((regularized_incomplete_beta(0.3, 1.0, 1.0) - 0.3).abs() < 1e-14);
        assert!((regularized_incomplete_beta(0.7, 3.0, 1.0) - 0.343).abs() < 1e-14);
    }

    #[test]
    fn welch_conventions() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((welch_t_test(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(welch_t_test(&[2.0; 3], &[2.0; 5]).unwrap(), 1.0);
        assert_eq!(welch_t_test(&[2.0; 3], &[3.0; 5]).unwrap(), 0.0);
        assert!(welch_t_test(&[1.0], &a).is_err());
    }
}
