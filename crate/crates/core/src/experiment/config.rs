//! `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::datasets::KnownSet;
use crate::error::{OsrError, Result};
use crate::nn::{Architecture, ConvBlock};
use crate::openmax::{DistanceKind, OpenMaxConfig};
use crate::predictor::DistanceSpace;
use crate::superlative::{BoundaryForm, CompanionLoss, LossConfig, RadiusMode, SeparationForm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Ce,
    Ls,
    LsCe,
    Om,
    LsOm,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ce, Method::Ls, Method::LsCe, Method::Om, Method::LsOm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::Ls => "ls",
            Method::LsCe => "ls+ce",
            Method::Om => "om",
            Method::LsOm => "ls+om",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| OsrError::Config(format!("unknown method `{s}`")))
    }

    /// Superlative phase length and companion loss for this method.
    pub fn loss_config(self, base: &LossConfig) -> LossConfig {
        let (switch_iteration, companion) = match self {
            Method::Ce => (0, CompanionLoss::CrossEntropy),
            Method::Ls => (base.switch_iteration, CompanionLoss::None),
            Method::LsCe => (base.switch_iteration, CompanionLoss::CrossEntropy),
            Method::Om => (0, CompanionLoss::OpenMaxBackbone),
            Method::LsOm => (base.switch_iteration, CompanionLoss::OpenMaxBackbone),
        };
        LossConfig {
            switch_iteration,
            companion,
            ..*base
        }
    }

    pub fn uses_openmax(self) -> bool {
        matches!(self, Method::Om | Method::LsOm)
    }

    /// Whether the classification head is trained, so its softmax can pick
    /// among known classes.
    pub fn trains_head(self) -> bool {
        !matches!(self, Method::Ls)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Cifar10,
    Blobs,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion-mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Blobs => "blobs",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashion-mnist" | "fashion_mnist" => Ok(DatasetKind::FashionMnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            "blobs" => Ok(DatasetKind::Blobs),
            other => Err(OsrError::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobsConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub dir: PathBuf,
    /// Keep only the first `n` training samples of each class.
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub grayscale: bool,
    pub blobs: BlobsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Conv,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub kind: ArchKind,
    pub conv_channels: Vec<usize>,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub conv_pool: bool,
    pub dense: Vec<usize>,
    pub keep: f64,
    pub batchnorm: bool,
}

impl ArchConfig {
    pub fn build(&self, input_shape: &[usize], classes: usize) -> Result<Architecture> {
        match self.kind {
            ArchKind::Mlp => {
                Architecture::mlp(input_shape, &self.dense, classes, self.keep, self.batchnorm)
            }
            ArchKind::Conv => {
                if input_shape.len() != 3 {
                    return Err(OsrError::Config(format!(
                        "a convolutional network needs H × W × C inputs, got {input_shape:?}"
                    )));
                }
                let blocks: Vec<ConvBlock> = self
                    .conv_channels
                    .iter()
                    .map(|&channels| ConvBlock {
                        channels,
                        kernel: self.conv_kernel,
                        stride: self.conv_stride,
                        pool: self.conv_pool,
                    })
                    .collect();
                Architecture::convnet(
                    input_shape,
                    &blocks,
                    &self.dense,
                    classes,
                    self.keep,
                    self.batchnorm,
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub known_sets: Vec<KnownSet>,
    pub methods: Vec<Method>,
    pub arch: ArchConfig,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The companion field is ignored; each method sets its own.
    pub loss: LossConfig,
    pub threshold_percentile: f64,
    pub threshold_distance: DistanceKind,
    pub threshold_space: DistanceSpace,
    pub openmax: OpenMaxConfig,
    pub runs: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub sweep_counts: Vec<usize>,
    pub eval_chunk: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig {
                kind: DatasetKind::Mnist,
                dir: PathBuf::from("data/mnist"),
                train_per_class: None,
                test_per_class: None,
                grayscale: true,
                blobs: BlobsConfig {
                    classes: 10,
                    train_per_class: 200,
                    test_per_class: 200,
                    dim: 16,
                    center_scale: 1.0,
                    noise_sigma: 1.0,
                    seed: 0,
                },
            },
            known_sets: vec![KnownSet::Set1],
            methods: vec![Method::Ce],
            arch: ArchConfig {
                kind: ArchKind::Conv,
                conv_channels: vec![8],
                conv_kernel: 5,
                conv_stride: 2,
                conv_pool: true,
                dense: vec![64, 32],
                keep: 0.8,
                batchnorm: true,
            },
            iterations: 3000,
            batch_size: 64,
            learning_rate: 0.001,
            loss: LossConfig::default(),
            threshold_percentile: 99.0,
            threshold_distance: DistanceKind::Euclidean,
            threshold_space: DistanceSpace::Full,
            openmax: OpenMaxConfig::default(),
            runs: 12,
            base_seed: 0,
            output_dir: PathBuf::from("out"),
            sweep_counts: vec![8, 6, 4],
            eval_chunk: 500,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| OsrError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(OsrError::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| parse_num(key, v.trim()))
        .collect()
}

fn parse_optional(key: &str, value: &str) -> Result<Option<usize>> {
    match value {
        "all" | "none" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

fn join(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| OsrError::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// unknown keys and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| OsrError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(OsrError::Config(format!("line {}: `{key}` set twice", n + 1)));
            }
        }
        let mut c = ExperimentConfig::default();
        for (key, value) in &entries {
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset" => self.data.kind = DatasetKind::parse(v)?,
            "data.dir" => self.data.dir = PathBuf::from(v),
            "data.train_per_class" => self.data.train_per_class = parse_optional(key, v)?,
            "data.test_per_class" => self.data.test_per_class = parse_optional(key, v)?,
            "data.grayscale" => self.data.grayscale = parse_bool(key, v)?,
            "blobs.classes" => self.data.blobs.classes = parse_num(key, v)?,
            "blobs.train_per_class" => self.data.blobs.train_per_class = parse_num(key, v)?,
            "blobs.test_per_class" => self.data.blobs.test_per_class = parse_num(key, v)?,
            "blobs.dim" => self.data.blobs.dim = parse_num(key, v)?,
            "blobs.center_scale" => self.data.blobs.center_scale = parse_num(key, v)?,
            "blobs.noise_sigma" => self.data.blobs.noise_sigma = parse_num(key, v)?,
            "blobs.seed" => self.data.blobs.seed = parse_num(key, v)?,
            "known_set" | "known_sets" | "sets" => {
                self.known_sets = v
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(KnownSet::parse)
                    .collect::<Result<_>>()?;
            }
            "method" | "methods" => {
                self.methods = v.split(',').map(Method::parse).collect::<Result<_>>()?;
            }
            "arch.kind" => {
                self.arch.kind = match v {
                    "conv" => ArchKind::Conv,
                    "mlp" => ArchKind::Mlp,
                    _ => return Err(OsrError::Config(format!("unknown arch.kind `{v}`"))),
                }
            }
            "arch.conv_channels" => self.arch.conv_channels = parse_list(key, v)?,
            "arch.conv_kernel" => self.arch.conv_kernel = parse_num(key, v)?,
            "arch.conv_stride" => self.arch.conv_stride = parse_num(key, v)?,
            "arch.conv_pool" => self.arch.conv_pool = parse_bool(key, v)?,
            "arch.dense" => self.arch.dense = parse_list(key, v)?,
            "arch.keep" => self.arch.keep = parse_num(key, v)?,
            "arch.batchnorm" => self.arch.batchnorm = parse_bool(key, v)?,
            "train.iterations" | "iterations" => self.iterations = parse_num(key, v)?,
            "train.batch_size" | "batch_size" => self.batch_size = parse_num(key, v)?,
            "train.learning_rate" | "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "loss.gamma" | "gamma" => self.loss.gamma = parse_num(key, v)?,
            "loss.switch_iteration" | "switch_iteration" => {
                self.loss.switch_iteration = parse_num(key, v)?
            }
            "loss.bd_form" | "bd_form" => {
                self.loss.bd_form = match v {
                    "shell-squared" => BoundaryForm::ShellSquared,
                    "literal" => BoundaryForm::Literal,
                    _ => return Err(OsrError::Config(format!("unknown bd_form `{v}`"))),
                }
            }
            "loss.is_form" | "is_form" => {
                self.loss.is_form = match v {
                    "min-pairwise" => SeparationForm::MinPairwise,
                    "literal-max" => SeparationForm::LiteralMax,
                    _ => return Err(OsrError::Config(format!("unknown is_form `{v}`"))),
                }
            }
            "loss.radius" => {
                self.loss.radius = match v {
                    "frozen" => RadiusMode::Frozen,
                    "tracked" => RadiusMode::Tracked,
                    _ => return Err(OsrError::Config(format!("unknown radius mode `{v}`"))),
                }
            }
            "threshold.percentile" | "threshold_percentile" => {
                self.threshold_percentile = parse_num(key, v)?
            }
            "threshold.distance" => self.threshold_distance = DistanceKind::parse(v)?,
            "threshold.space" => {
                self.threshold_space = match v {
                    "full" => DistanceSpace::Full,
                    "projected" => DistanceSpace::Projected,
                    _ => return Err(OsrError::Config(format!("unknown threshold.space `{v}`"))),
                }
            }
            "openmax.tail_size" => self.openmax.tail_size = parse_num(key, v)?,
            "openmax.alpha" => self.openmax.alpha = parse_num(key, v)?,
            "openmax.distance" => self.openmax.distance = DistanceKind::parse(v)?,
            "runs" => self.runs = parse_num(key, v)?,
            "base_seed" | "seed" => self.base_seed = parse_num(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "sweep.train_counts" => self.sweep_counts = parse_list(key, v)?,
            "eval.chunk" => self.eval_chunk = parse_num(key, v)?,
            other => return Err(OsrError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(OsrError::Config(m));
        if self.runs == 0 {
            return fail("runs must be at least 1".into());
        }
        if self.methods.is_empty() {
            return fail("no method given".into());
        }
        if self.known_sets.is_empty() {
            return fail("no known set given".into());
        }
        if self.iterations == 0 || self.batch_size == 0 || self.eval_chunk == 0 {
            return fail("iterations, batch_size and eval.chunk must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.threshold_percentile > 0.0 && self.threshold_percentile <= 100.0) {
            return fail(format!(
                "threshold.percentile must lie in (0, 100], got {}",
                self.threshold_percentile
            ));
        }
        if !(self.arch.keep > 0.0 && self.arch.keep <= 1.0) {
            return fail(format!("arch.keep must lie in (0, 1], got {}", self.arch.keep));
        }
        if self.arch.dense.is_empty() {
            return fail("arch.dense needs at least one hidden layer".into());
        }
        if self.data.kind == DatasetKind::Blobs && self.arch.kind == ArchKind::Conv {
            return fail("blobs are feature vectors; use arch.kind = mlp".into());
        }
        let b = &self.data.blobs;
        if self.data.kind == DatasetKind::Blobs
            && (b.classes < 2 || b.train_per_class == 0 || b.test_per_class == 0 || b.dim == 0)
        {
            return fail("blob counts must be positive with at least 2 classes".into());
        }
        if self.openmax.tail_size < 2 || self.openmax.alpha == 0 {
            return fail("openmax.tail_size must be ≥ 2 and openmax.alpha ≥ 1".into());
        }
        let ls = self.methods.iter().any(|m| *m != Method::Ce && *m != Method::Om);
        if ls {
            self.loss.validate()?;
            if self.loss.switch_iteration > self.iterations {
                return fail(format!(
                    "loss.switch_iteration {} exceeds train.iterations {}",
                    self.loss.switch_iteration, self.iterations
                ));
            }
        }
        Ok(())
    }

    /// Total class count of the configured dataset.
    pub fn dataset_classes(&self) -> usize {
        match self.data.kind {
            DatasetKind::Blobs => self.data.blobs.classes,
            _ => 10,
        }
    }

    /// Canonical `key = value` rendering; parsing it yields `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let opt = |o: Option<usize>| o.map_or("all".to_string(), |v| v.to_string());
        let b = &self.data.blobs;
        kv("dataset", self.data.kind.name().into());
        kv("data.dir", self.data.dir.display().to_string());
        kv("data.train_per_class", opt(self.data.train_per_class));
        kv("data.test_per_class", opt(self.data.test_per_class));
        kv("data.grayscale", self.data.grayscale.to_string());
        kv("blobs.classes", b.classes.to_string());
        kv("blobs.train_per_class", b.train_per_class.to_string());
        kv("blobs.test_per_class", b.test_per_class.to_string());
        kv("blobs.dim", b.dim.to_string());
        kv("blobs.center_scale", format!("{:?}", b.center_scale));
        kv("blobs.noise_sigma", format!("{:?}", b.noise_sigma));
        kv("blobs.seed", b.seed.to_string());
        kv(
            "known_sets",
            self.known_sets.iter().map(KnownSet::name).collect::<Vec<_>>().join("; "),
        );
        kv(
            "methods",
            self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
        );
        kv(
            "arch.kind",
            match self.arch.kind {
                ArchKind::Conv => "conv",
                ArchKind::Mlp => "mlp",
            }
            .into(),
        );
        kv("arch.conv_channels", join(&self.arch.conv_channels));
        kv("arch.conv_kernel", self.arch.conv_kernel.to_string());
        kv("arch.conv_stride", self.arch.conv_stride.to_string());
        kv("arch.conv_pool", self.arch.conv_pool.to_string());
        kv("arch.dense", join(&self.arch.dense));
        kv("arch.keep", format!("{:?}", self.arch.keep));
        kv("arch.batchnorm", self.arch.batchnorm.to_string());
        kv("train.iterations", self.iterations.to_string());
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.learning_rate", format!("{:?}", self.learning_rate));
        kv("loss.gamma", format!("{:?}", self.loss.gamma));
        kv("loss.switch_iteration", self.loss.switch_iteration.to_string());
        kv(
            "loss.bd_form",
            match self.loss.bd_form {
                BoundaryForm::ShellSquared => "shell-squared",
                BoundaryForm::Literal => "literal",
            }
            .into(),
        );
        kv(
            "loss.is_form",
            match self.loss.is_form {
                SeparationForm::MinPairwise => "min-pairwise",
                SeparationForm::LiteralMax => "literal-max",
            }
            .into(),
        );
        kv(
            "loss.radius",
            match self.loss.radius {
                RadiusMode::Frozen => "frozen",
                RadiusMode::Tracked => "tracked",
            }
            .into(),
        );
        kv("threshold.percentile", format!("{:?}", self.threshold_percentile));
        kv("threshold.distance", self.threshold_distance.name().into());
        kv(
            "threshold.space",
            match self.threshold_space {
                DistanceSpace::Full => "full",
                DistanceSpace::Projected => "projected",
            }
            .into(),
        );
        kv("openmax.tail_size", self.openmax.tail_size.to_string());
        kv("openmax.alpha", self.openmax.alpha.to_string());
        kv("openmax.distance", self.openmax.distance.name().into());
        kv("runs", self.runs.to_string());
        kv("base_seed", self.base_seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("sweep.train_counts", join(&self.sweep_counts));
        kv("eval.chunk", self.eval_chunk.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!(c.iterations, 3000);
        assert_eq!(c.loss.switch_iteration, 1500);
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.loss.gamma, 1.5);
        assert_eq!(c.threshold_percentile, 99.0);
        assert_eq!(c.runs, 12);
        assert_eq!(c.batch_size, 64);
    }

    #[test]
    fn parses_comments_and_dotted_keys() {
        let c = ExperimentConfig::parse(
            "# blobs\n dataset = blobs\narch.kind = mlp # inline\nmethod = ce, ls+ce\nloss.gamma=2\nknown_sets = set1; [0,1,2]\n",
        )
        .unwrap();
        assert_eq!(c.data.kind, DatasetKind::Blobs);
        assert_eq!(c.methods, vec![Method::Ce, Method::LsCe]);
        assert_eq!(c.loss.gamma, 2.0);
        assert_eq!(c.known_sets.len(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse("nonsense = 1").is_err());
        assert!(ExperimentConfig::parse("runs = 0").is_err());
        assert!(ExperimentConfig::parse("runs = 2\nruns = 3").is_err());
        assert!(ExperimentConfig::parse("method = svm").is_err());
        assert!(ExperimentConfig::parse("method = ls\nloss.gamma = 1").is_err());
        assert!(ExperimentConfig::parse("dataset = blobs").is_err());
        assert!(ExperimentConfig::parse("just words").is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = ExperimentConfig::parse(
            "dataset = blobs\narch.kind = mlp\nmethod = om,ls\nknown_sets = random:6; set2\nblobs.noise_sigma = 0.3\nloss.radius = tracked",
        )
        .unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn method_schedules() {
        let base = LossConfig::default();
        assert_eq!(Method::Ce.loss_config(&base).switch_iteration, 0);
        assert_eq!(Method::LsOm.loss_config(&base).switch_iteration, 1500);
        assert_eq!(Method::Ls.loss_config(&base).companion, CompanionLoss::None);
        assert!(Method::LsOm.uses_openmax() && !Method::LsCe.uses_openmax());
    }
}
