//! Multi-run experiments and openness sweeps.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use super::config::{DatasetKind, ExperimentConfig, Method};
use super::train::{train_model, TraceEntry, TrainSettings};
use crate::datasets::{
    build_open_split, load_cifar10, load_idx, make_blobs, split_per_class, Dataset, KnownSet,
    OpenSplit,
};
use crate::error::{OsrError, Result};
use crate::evaluation::{confusion, metrics, openness, ConfusionMatrix, OpennessSpec, RunMetrics};
use crate::nn::{Mode, ModelState};
use crate::openmax::{fit_openmax, openmax_recalibrate, WeibullModel};
use crate::predictor::{estimate_thresholds, predict, project_space, DistanceSpace, ThresholdTable};
use crate::representation::{compute_mavs, fit_pca_basis, MeanActivationVector};
use crate::tensor::{argmax, softmax, Tensor};

/// Everything one training run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub config_text: String,
    pub dataset: String,
    pub method: Method,
    pub set_name: String,
    pub run: usize,
    pub seed: u64,
    /// Original label ids of the known classes.
    pub known_classes: Vec<usize>,
    /// Classes present at test time.
    pub total_classes: usize,
    pub batch_size: usize,
    pub thresholds: ThresholdTable,
    /// Full-training-set class means after training.
    pub mavs: Vec<MeanActivationVector>,
    pub weibulls: Vec<WeibullModel>,
    /// Per class, the fraction of its training samples within its threshold.
    pub coverage: Vec<f64>,
    pub confusion: ConfusionMatrix,
    pub metrics: RunMetrics,
    pub closed_set_correct: u64,
    pub closed_set_total: u64,
    pub loss_trace: Vec<TraceEntry>,
    /// Not part of the serialized artifact.
    pub wall_clock: Duration,
}

impl RunArtifact {
    pub fn classes(&self) -> usize {
        self.known_classes.len()
    }

    pub fn closed_set_accuracy(&self) -> f64 {
        if self.closed_set_total == 0 {
            0.0
        } else {
            self.closed_set_correct as f64 / self.closed_set_total as f64
        }
    }

    pub fn openness_spec(&self) -> OpennessSpec {
        OpennessSpec::protocol(self.classes(), self.total_classes)
    }

    /// Stable file name for this artifact.
    pub fn file_name(&self) -> String {
        let clean = |s: &str| {
            s.chars()
                .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
                .collect::<String>()
        };
        format!(
            "{}_{}_{}_run{:03}.txt",
            clean(&self.dataset),
            clean(self.method.name()),
            clean(&self.set_name),
            self.run
        )
    }
}

/// Loads the configured train and test sets.
pub fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &config.data;
    let (train, test) = match d.kind {
        DatasetKind::Mnist | DatasetKind::FashionMnist => {
            let f = |name: &str| d.dir.join(name);
            let train = load_idx(&f("train-images-idx3-ubyte"), &f("train-labels-idx1-ubyte"))?;
            let test = load_idx(&f("t10k-images-idx3-ubyte"), &f("t10k-labels-idx1-ubyte"))?;
            (train, test)
        }
        DatasetKind::Cifar10 => {
            let batches: Vec<PathBuf> = (1..=5)
                .map(|i| d.dir.join(format!("data_batch_{i}.bin")))
                .collect();
            let train = load_cifar10(&batches, d.grayscale)?;
            let test = load_cifar10(&[d.dir.join("test_batch.bin")], d.grayscale)?;
            (train, test)
        }
        DatasetKind::Blobs => {
            let b = &d.blobs;
            let all = make_blobs(
                b.classes,
                b.train_per_class + b.test_per_class,
                b.dim,
                b.center_scale,
                b.noise_sigma,
                b.seed,
            )?;
            split_per_class(&all, b.train_per_class)
        }
    };
    let train = match d.train_per_class {
        Some(n) => train.take_per_class(n),
        None => train,
    };
    let test = match d.test_per_class {
        Some(n) => test.take_per_class(n),
        None => test,
    };
    Ok((train, test))
}

fn split_for(
    config: &ExperimentConfig,
    set: &KnownSet,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
) -> Result<OpenSplit> {
    let known = set
        .resolve(train.num_classes, seed)
        .map_err(|e| match e {
            OsrError::Input(m) => OsrError::Config(m),
            other => other,
        })?;
    build_open_split(train, test, &known).map_err(|e| match e {
        OsrError::Input(m) => OsrError::Config(format!("known set {}: {m}", set.name())),
        other => other,
    })
    .and_then(|s| {
        if config.batch_size < s.classes() {
            Err(OsrError::Config(format!(
                "batch size {} cannot hold one sample of each of {} classes",
                config.batch_size,
                s.classes()
            )))
        } else {
            Ok(s)
        }
    })
}

/// Trains and evaluates one method on one split.
pub fn run_once(
    config: &ExperimentConfig,
    method: Method,
    set: &KnownSet,
    run: usize,
    train: &Dataset,
    test: &Dataset,
) -> Result<RunArtifact> {
    let started = Instant::now();
    let seed = config.base_seed + run as u64;
    let split = split_for(config, set, seed, train, test)?;
    let k = split.classes();
    let arch = config.arch.build(split.train.sample_shape(), k)?;
    let mut model = ModelState::new(arch, seed)?;
    let settings = TrainSettings {
        iterations: config.iterations,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        loss: method.loss_config(&config.loss),
    };
    let loss_trace = train_model(
        &mut model,
        &split.train.images,
        &split.train.labels,
        k,
        &settings,
        seed,
    )?;
    model.mode = Mode::Eval;

    let (train_logits, train_avs) = model.predict_all(&split.train.images, config.eval_chunk)?;
    let mavs = compute_mavs(&train_avs, &split.train.labels, k)?;
    let (test_logits, test_avs) = model.predict_all(&split.test.images, config.eval_chunk)?;

    let (space_train, space_test, space_mavs) = match config.threshold_space {
        DistanceSpace::Full => (train_avs.clone(), test_avs.clone(), mavs.clone()),
        DistanceSpace::Projected => {
            let points: Vec<Vec<f64>> = mavs.iter().map(|m| m.vector.clone()).collect();
            let basis = fit_pca_basis(&points)?;
            let (tr, means) = project_space(&basis, &train_avs, &mavs)?;
            let (te, _) = project_space(&basis, &test_avs, &mavs)?;
            (tr, te, means)
        }
    };
    let thresholds = estimate_thresholds(
        &space_train,
        &split.train.labels,
        &space_mavs,
        config.threshold_percentile,
        config.threshold_distance,
    )?;
    let coverage = threshold_coverage(&space_train, &split.train.labels, &space_mavs, &thresholds);

    let weibulls = if method.uses_openmax() {
        fit_openmax(
            &train_avs,
            &train_logits,
            &split.train.labels,
            &mavs,
            &config.openmax,
        )?
    } else {
        Vec::new()
    };

    let mut preds = Vec::with_capacity(split.test.len());
    let mut closed_correct = 0;
    let mut closed_total = 0;
    for i in 0..split.test.len() {
        let logits = test_logits.row(i);
        let label = if method.uses_openmax() {
            let p = openmax_recalibrate(test_avs.row(i), logits, &mavs, &weibulls, &config.openmax)?;
            argmax(&p)
        } else {
            let probs = method.trains_head().then(|| softmax(logits));
            predict(space_test.row(i), &space_mavs, &thresholds, probs.as_deref())?.label
        };
        preds.push(label);
        let truth = split.test.labels[i];
        if truth < k {
            let closed = if method.trains_head() {
                argmax(logits)
            } else {
                nearest_mean(test_avs.row(i), &mavs)
            };
            closed_total += 1;
            closed_correct += u64::from(closed == truth);
        }
    }
    let cm = confusion(&preds, &split.test.labels, k)?;
    let run_metrics = metrics(&cm)?;
    Ok(RunArtifact {
        config_text: config.to_text(),
        dataset: config.data.kind.name().to_string(),
        method,
        set_name: set.name(),
        run,
        seed,
        known_classes: split.known_classes.clone(),
        total_classes: test.num_classes,
        batch_size: config.batch_size,
        thresholds,
        mavs,
        weibulls,
        coverage,
        confusion: cm,
        metrics: run_metrics,
        closed_set_correct: closed_correct,
        closed_set_total: closed_total,
        loss_trace,
        wall_clock: started.elapsed(),
    })
}

fn nearest_mean(av: &[f64], mavs: &[MeanActivationVector]) -> usize {
    let d: Vec<f64> = mavs
        .iter()
        .map(|m| -crate::tensor::squared_distance(av, &m.vector))
        .collect();
    argmax(&d)
}

/// Per class, the fraction of training samples no farther from their class
/// mean than the class threshold.
pub fn threshold_coverage(
    avs: &Tensor,
    labels: &[usize],
    mavs: &[MeanActivationVector],
    table: &ThresholdTable,
) -> Vec<f64> {
    let mut inside = vec![0usize; mavs.len()];
    let mut total = vec![0usize; mavs.len()];
    for (i, &y) in labels.iter().enumerate() {
        total[y] += 1;
        if table.distance_kind.distance(avs.row(i), &mavs[y].vector) <= table.thresholds[y] {
            inside[y] += 1;
        }
    }
    inside
        .iter()
        .zip(&total)
        .map(|(&a, &n)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
        .collect()
}

/// Every (known set, method, run) combination of the config, sets outermost.
/// `progress` is called after each run.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    mut progress: impl FnMut(&RunArtifact),
) -> Result<Vec<RunArtifact>> {
    config.validate()?;
    let (train, test) = load_data(config)?;
    // resolve every split before spending time on training
    for set in &config.known_sets {
        for r in 0..config.runs {
            split_for(config, set, config.base_seed + r as u64, &train, &test)?;
        }
    }
    let mut out = Vec::new();
    for set in &config.known_sets {
        for &method in &config.methods {
            for r in 0..config.runs {
                let a = run_once(config, method, set, r, &train, &test)?;
                progress(&a);
                out.push(a);
            }
        }
    }
    Ok(out)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunArtifact>> {
    run_experiment_with(config, |_| {})
}

/// Overall F1 per openness level, one row per (method, C_train).
#[derive(Debug, Clone, PartialEq)]
pub struct OpennessRow {
    pub method: Method,
    pub spec: OpennessSpec,
    pub openness: f64,
    pub f1: Vec<f64>,
}

/// Runs the experiment once per training-class count, with that many known
/// classes drawn at random per run.
pub fn sweep_openness_with(
    config: &ExperimentConfig,
    train_counts: &[usize],
    mut progress: impl FnMut(&RunArtifact),
) -> Result<(Vec<OpennessRow>, Vec<RunArtifact>)> {
    if train_counts.is_empty() {
        return Err(OsrError::Config("no training-class counts to sweep".into()));
    }
    let total = config.dataset_classes();
    for &c in train_counts {
        if c < 2 || c >= total {
            return Err(OsrError::Config(format!(
                "training-class count {c} must lie in [2, {total})"
            )));
        }
        openness(&OpennessSpec::protocol(c, total))?;
    }
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &c in train_counts {
        let mut cfg = config.clone();
        cfg.known_sets = vec![KnownSet::Random { count: c, seed: None }];
        let arts = run_experiment_with(&cfg, &mut progress)?;
        for &method in &config.methods {
            let spec = OpennessSpec::protocol(c, total);
            rows.push(OpennessRow {
                method,
                spec,
                openness: openness(&spec)?,
                f1: arts
                    .iter()
                    .filter(|a| a.method == method)
                    .map(|a| a.metrics.overall.f1)
                    .collect(),
            });
        }
        all.extend(arts);
    }
    Ok((rows, all))
}

pub fn sweep_openness(
    config: &ExperimentConfig,
    train_counts: &[usize],
) -> Result<(Vec<OpennessRow>, Vec<RunArtifact>)> {
    sweep_openness_with(config, train_counts, |_| {})
}
