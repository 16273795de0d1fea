//! IDX and CIFAR-10 loaders, synthetic blobs, open-set splits and
//! stratified batching.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{OsrError, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 1024;

pub const SET1: [usize; 6] = [0, 2, 3, 4, 6, 9];
pub const SET2: [usize; 6] = [0, 1, 2, 5, 7, 8];
pub const SET3: [usize; 6] = [0, 1, 3, 4, 7, 8];

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Images as `N × H × W × C` (or `N × dim` for feature-vector data) with
/// values in `[0, 1]` for image sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub class_names: Option<Vec<String>>,
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// The first `per_class` samples of each class, in file order.
    pub fn take_per_class(&self, per_class: usize) -> Dataset {
        let mut seen = vec![0usize; self.num_classes];
        let mut keep = Vec::new();
        for (i, &y) in self.labels.iter().enumerate() {
            if seen[y] < per_class {
                seen[y] += 1;
                keep.push(i);
            }
        }
        let mut out = self.select(&keep);
        out.provenance = format!("{} [first {per_class}/class]", self.provenance);
        out
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| OsrError::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Parses an IDX file, checking the magic and the promised payload size.
/// Returns the dimension sizes and the payload.
fn parse_idx<'a>(bytes: &'a [u8], magic: u32, path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(OsrError::Truncated {
            path: path.into(),
            expected: 4,
            found: bytes.len(),
        });
    }
    let observed = be_u32(bytes, 0);
    if observed != magic {
        return Err(OsrError::Format {
            path: path.into(),
            reason: format!("magic 0x{observed:08x}, expected 0x{magic:08x}"),
        });
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(OsrError::Truncated {
            path: path.into(),
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndim).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let payload: usize = dims.iter().product();
    let expected = header + payload;
    if bytes.len() < expected {
        return Err(OsrError::Truncated {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(OsrError::Format {
            path: path.into(),
            reason: format!("{} trailing bytes after payload", bytes.len() - expected),
        });
    }
    Ok((dims, &bytes[header..]))
}

/// Builds a dataset from in-memory IDX image and label bytes. The paths are
/// only used in error messages.
pub fn parse_idx_pair(
    image_bytes: &[u8],
    label_bytes: &[u8],
    images_path: &Path,
    labels_path: &Path,
) -> Result<Dataset> {
    let (idims, pixels) = parse_idx(image_bytes, IDX_IMAGES_MAGIC, images_path)?;
    let (ldims, labels) = parse_idx(label_bytes, IDX_LABELS_MAGIC, labels_path)?;
    if idims[0] != ldims[0] {
        return Err(OsrError::Format {
            path: labels_path.into(),
            reason: format!("{} labels for {} images", ldims[0], idims[0]),
        });
    }
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let images = Tensor::from_vec(&[idims[0], idims[1], idims[2], 1], data)?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Ok(Dataset {
        images,
        labels,
        num_classes,
        class_names: None,
        provenance: format!("idx:{}", images_path.display()),
    })
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    parse_idx_pair(&images, &labels, images_path, labels_path)
}

/// Writes `dataset` as an IDX image/label pair. Pixels are stored as
/// `round(255 · x)`, so data loaded from IDX round-trips exactly.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let shape = dataset.images.shape();
    if shape.len() != 4 || shape[3] != 1 {
        return Err(OsrError::Input(format!(
            "IDX images must be N × H × W × 1, got {shape:?}"
        )));
    }
    let mut img = Vec::with_capacity(16 + dataset.images.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for &d in &shape[..3] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &x in dataset.images.data() {
        if !(0.0..=1.0).contains(&x) {
            return Err(OsrError::Input(format!("pixel {x} outside [0, 1]")));
        }
        img.push((x * 255.0).round() as u8);
    }
    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    for &y in &dataset.labels {
        let y = u8::try_from(y).map_err(|_| OsrError::Input(format!("label {y} exceeds 255")))?;
        lab.push(y);
    }
    std::fs::write(images_path, img).map_err(|e| OsrError::io(images_path, e))?;
    std::fs::write(labels_path, lab).map_err(|e| OsrError::io(labels_path, e))?;
    Ok(())
}

/// Parses CIFAR-10 binary records: one label byte, then 1024 red, 1024
/// green and 1024 blue bytes in row-major 32×32 order.
pub fn parse_cifar10(bytes: &[u8], to_grayscale: bool, path: &Path) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(OsrError::Format {
            path: path.into(),
            reason: format!(
                "length {} is not a multiple of the {CIFAR_RECORD}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let channels = if to_grayscale { 1 } else { 3 };
    let mut data = Vec::with_capacity(n * 1024 * channels);
    let mut labels = Vec::with_capacity(n);
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        let label = record[0] as usize;
        if label >= 10 {
            return Err(OsrError::Format {
                path: path.into(),
                reason: format!("label byte {label} outside [0, 10)"),
            });
        }
        labels.push(label);
        let (r, rest) = record[1..].split_at(1024);
        let (g, b) = rest.split_at(1024);
        for p in 0..1024 {
            let (r, g, b) = (r[p] as f64, g[p] as f64, b[p] as f64);
            if to_grayscale {
                data.push((0.299 * r + 0.587 * g + 0.114 * b) / 255.0);
            } else {
                data.extend_from_slice(&[r / 255.0, g / 255.0, b / 255.0]);
            }
        }
    }
    Ok(Dataset {
        images: Tensor::from_vec(&[n, 32, 32, channels], data)?,
        labels,
        num_classes: 10,
        class_names: Some(CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect()),
        provenance: format!("cifar10:{}", path.display()),
    })
}

pub fn load_cifar10(batch_paths: &[PathBuf], to_grayscale: bool) -> Result<Dataset> {
    let mut parts = Vec::with_capacity(batch_paths.len());
    for path in batch_paths {
        parts.push(parse_cifar10(&read_file(path)?, to_grayscale, path)?);
    }
    concat(parts)
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let mut iter = parts.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| OsrError::Input("no dataset files given".into()))?;
    let mut shape = first.images.shape().to_vec();
    let mut data = first.images.into_data();
    let mut labels = first.labels;
    let mut provenance = first.provenance;
    for part in iter {
        shape[0] += part.images.shape()[0];
        data.extend_from_slice(part.images.data());
        labels.extend_from_slice(&part.labels);
        provenance.push('+');
        provenance.push_str(&part.provenance);
    }
    Ok(Dataset {
        images: Tensor::from_vec(&shape, data)?,
        labels,
        num_classes: first.num_classes,
        class_names: first.class_names,
        provenance,
    })
}

/// Gaussian blobs around centers drawn uniformly from
/// `[−center_scale, center_scale]^dim`. Samples are grouped by class; the
/// result has shape `N × dim`.
pub fn make_blobs(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    center_scale: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes == 0 || per_class == 0 || dim == 0 {
        return Err(OsrError::Config("blob counts must be positive".into()));
    }
    if !(center_scale >= 0.0) || !(noise_sigma >= 0.0) {
        return Err(OsrError::Config("blob scales must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            (0..dim)
                .map(|_| rng.random_range(-center_scale..=center_scale))
                .collect()
        })
        .collect();
    let normal = Normal::new(0.0, noise_sigma).map_err(|e| OsrError::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(n_classes * per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(center.iter().map(|&m| m + normal.sample(&mut rng)));
            labels.push(c);
        }
    }
    Ok(Dataset {
        images: Tensor::from_vec(&[n_classes * per_class, dim], data)?,
        labels,
        num_classes: n_classes,
        class_names: None,
        provenance: format!(
            "blobs:k={n_classes},n={per_class},d={dim},scale={center_scale},sigma={noise_sigma},seed={seed}"
        ),
    })
}

/// Splits each class of a class-grouped dataset: its first `train_per_class`
/// samples go to the first result, the rest to the second.
pub fn split_per_class(dataset: &Dataset, train_per_class: usize) -> (Dataset, Dataset) {
    let mut seen = vec![0usize; dataset.num_classes];
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, &y) in dataset.labels.iter().enumerate() {
        if seen[y] < train_per_class {
            a.push(i);
        } else {
            b.push(i);
        }
        seen[y] += 1;
    }
    (dataset.select(&a), dataset.select(&b))
}

/// How the known classes of an open split are chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KnownSet {
    Set1,
    Set2,
    Set3,
    Explicit(Vec<usize>),
    /// `count` classes drawn without replacement with a seeded RNG; without
    /// a fixed seed the run seed is used.
    Random { count: usize, seed: Option<u64> },
}

impl KnownSet {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "set1" => return Ok(KnownSet::Set1),
            "set2" => return Ok(KnownSet::Set2),
            "set3" => return Ok(KnownSet::Set3),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let mut it = rest.split(':');
            let count = it
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| OsrError::Config(format!("bad random known set `{s}`")))?;
            let seed = match it.next() {
                Some(v) => Some(
                    v.trim()
                        .parse()
                        .map_err(|_| OsrError::Config(format!("bad random known set `{s}`")))?,
                ),
                None => None,
            };
            return Ok(KnownSet::Random { count, seed });
        }
        let classes = s
            .trim_matches(|c| c == '[' || c == ']')
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| OsrError::Config(format!("bad known set `{s}`")))?;
        Ok(KnownSet::Explicit(classes))
    }

    /// Canonical text form, accepted by [`KnownSet::parse`].
    pub fn name(&self) -> String {
        match self {
            KnownSet::Set1 => "set1".into(),
            KnownSet::Set2 => "set2".into(),
            KnownSet::Set3 => "set3".into(),
            KnownSet::Explicit(c) => {
                let parts: Vec<String> = c.iter().map(|x| x.to_string()).collect();
                format!("[{}]", parts.join(","))
            }
            KnownSet::Random { count, seed: Some(seed) } => format!("random:{count}:{seed}"),
            KnownSet::Random { count, seed: None } => format!("random:{count}"),
        }
    }

    pub fn resolve(&self, num_classes: usize, run_seed: u64) -> Result<Vec<usize>> {
        let preset = |s: &[usize]| {
            if num_classes < 10 {
                Err(OsrError::Config(format!(
                    "preset known sets need 10 classes, dataset has {num_classes}"
                )))
            } else {
                Ok(s.to_vec())
            }
        };
        match self {
            KnownSet::Set1 => preset(&SET1),
            KnownSet::Set2 => preset(&SET2),
            KnownSet::Set3 => preset(&SET3),
            KnownSet::Explicit(c) => Ok(c.clone()),
            KnownSet::Random { count, seed } => {
                if *count == 0 || *count > num_classes {
                    return Err(OsrError::Config(format!(
                        "cannot pick {count} known classes out of {num_classes}"
                    )));
                }
                let mut all: Vec<usize> = (0..num_classes).collect();
                all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.unwrap_or(run_seed)));
                let mut pick = all[..*count].to_vec();
                pick.sort_unstable();
                Ok(pick)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenSplit {
    /// Original label ids; position is the remapped label.
    pub known_classes: Vec<usize>,
    pub train: Dataset,
    /// Known samples remapped to `[0, K)`, all others labelled `K`.
    pub test: Dataset,
}

impl OpenSplit {
    pub fn classes(&self) -> usize {
        self.known_classes.len()
    }
}

pub fn build_open_split(train: &Dataset, test: &Dataset, known_classes: &[usize]) -> Result<OpenSplit> {
    let total = train.num_classes.max(test.num_classes);
    if known_classes.is_empty() {
        return Err(OsrError::Input("known class list is empty".into()));
    }
    let mut remap = vec![None; total];
    for (i, &c) in known_classes.iter().enumerate() {
        if c >= total {
            return Err(OsrError::Input(format!("known class {c} outside [0, {total})")));
        }
        if remap[c].is_some() {
            return Err(OsrError::Input(format!("known class {c} listed twice")));
        }
        remap[c] = Some(i);
    }
    let k = known_classes.len();
    let keep: Vec<usize> = (0..train.len())
        .filter(|&i| remap[train.labels[i]].is_some())
        .collect();
    let mut new_train = train.select(&keep);
    for y in &mut new_train.labels {
        *y = remap[*y].unwrap();
    }
    new_train.num_classes = k;
    let mut new_test = test.clone();
    for y in &mut new_test.labels {
        *y = remap[*y].unwrap_or(k);
    }
    new_test.num_classes = k + 1;
    Ok(OpenSplit {
        known_classes: known_classes.to_vec(),
        train: new_train,
        test: new_test,
    })
}

/// Endless stream of mini-batches (row indices) in which every class
/// appears at least once.
///
/// Each epoch has `B = ceil(N / batch_size)` batches. Every batch first
/// receives one reserved sample per class, drawn from that class's shuffled
/// indices; the remaining samples are shuffled and dealt in order until each
/// batch is full. A class with fewer than `B` samples has its reserved draws
/// wrap around, and `B` grows until the repeats still leave room for every
/// other sample, so an epoch always covers the training set.
#[derive(Debug, Clone)]
pub struct StratifiedBatches {
    by_class: Vec<Vec<usize>>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    pending: std::vec::IntoIter<Vec<usize>>,
}

impl StratifiedBatches {
    pub fn new(labels: &[usize], classes: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < classes {
            return Err(OsrError::Config(format!(
                "batch size {batch_size} is smaller than the {classes} known classes"
            )));
        }
        let mut by_class = vec![Vec::new(); classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(OsrError::Input(format!("label {y} outside [0, {classes})")));
            }
            by_class[y].push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(OsrError::Stratification { class: c });
        }
        Ok(StratifiedBatches {
            by_class,
            batch_size,
            seed,
            epoch: 0,
            pending: Vec::new().into_iter(),
        })
    }

    /// The batches of epoch `e`, independent of iteration state.
    pub fn epoch(&self, e: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(e);
        let n: usize = self.by_class.iter().map(Vec::len).sum();
        // wrapped reserved draws of small classes take room from the pool
        let needed = |b: usize| n + self.by_class.iter().map(|m| b.saturating_sub(m.len())).sum::<usize>();
        let mut count = n.div_ceil(self.batch_size);
        while count * self.batch_size < needed(count) {
            count += 1;
        }
        let mut batches: Vec<Vec<usize>> = vec![Vec::with_capacity(self.batch_size); count];
        let mut pool = Vec::with_capacity(n);
        for members in &self.by_class {
            let mut m = members.clone();
            m.shuffle(&mut rng);
            for (b, batch) in batches.iter_mut().enumerate() {
                batch.push(m[b % m.len()]);
            }
            if m.len() > count {
                pool.extend_from_slice(&m[count..]);
            }
        }
        pool.shuffle(&mut rng);
        let mut pool = pool.into_iter();
        for batch in &mut batches {
            while batch.len() < self.batch_size {
                match pool.next() {
                    Some(i) => batch.push(i),
                    None => break,
                }
            }
        }
        batches
    }
}

impl Iterator for StratifiedBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        loop {
            if let Some(b) = self.pending.next() {
                return Some(b);
            }
            self.pending = self.epoch(self.epoch).into_iter();
            self.epoch += 1;
        }
    }
}

pub fn stratified_batches(
    split: &OpenSplit,
    batch_size: usize,
    seed: u64,
) -> Result<StratifiedBatches> {
    StratifiedBatches::new(&split.train.labels, split.classes(), batch_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes() -> (Vec<u8>, Vec<u8>) {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        img.extend_from_slice(&[0, 255, 51, 102, 1, 2, 3, 254]);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (img, lab)
    }

    #[test]
    fn crafted_idx_pixels() {
        let (img, lab) = idx_bytes();
        let p = Path::new("x");
        let d = parse_idx_pair(&img, &lab, p, p).unwrap();
        assert_eq!(d.images.shape(), &[2, 2, 2, 1]);
        assert_eq!(d.images.data()[1], 1.0);
        assert_eq!(d.images.data()[2], 0.2);
        assert_eq!(d.images.data()[7], 254.0 / 255.0);
        assert_eq!(d.labels, vec![7, 3]);
    }

    #[test]
    fn idx_wrong_magic_reports_it() {
        let (mut img, lab) = idx_bytes();
        img[3] = 1;
        let p = Path::new("x");
        match parse_idx_pair(&img, &lab, p, p) {
            Err(OsrError::Format { reason, .. }) => assert!(reason.contains("0x00000801")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn idx_truncated() {
        let (img, lab) = idx_bytes();
        let p = Path::new("x");
        let err = parse_idx_pair(&img[..img.len() - 1], &lab, p, p).unwrap_err();
        assert!(matches!(err, OsrError::Truncated { expected: 24, found: 23, .. }));
    }

    #[test]
    fn cifar_red_pixel_is_luma() {
        let mut rec = vec![0u8; CIFAR_RECORD];
        rec[0] = 4;
        rec[1] = 255;
        let d = parse_cifar10(&rec, true, Path::new("x")).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.labels, vec![4]);
        assert_eq!(d.images.shape(), &[1, 32, 32, 1]);
        assert!((d.images.data()[0] - 0.299).abs() < 1e-15);
        let d = parse_cifar10(&rec, false, Path::new("x")).unwrap();
        assert_eq!(&d.images.data()[..3], &[1.0, 0.0, 0.0]);
        assert!(parse_cifar10(&rec[1..], true, Path::new("x")).is_err());
    }

    #[test]
    fn blobs_deterministic_and_noise_free() {
        let a = make_blobs(3, 5, 4, 2.0, 0.5, 9).unwrap();
        assert_eq!(a, make_blobs(3, 5, 4, 2.0, 0.5, 9).unwrap());
        let z = make_blobs(3, 5, 4, 2.0, 0.0, 9).unwrap();
        for i in 0..15 {
            let c = i / 5 * 5;
            assert_eq!(z.images.row(i), z.images.row(c));
        }
    }

    #[test]
    fn open_split_label_algebra() {
        let train = make_blobs(10, 3, 2, 1.0, 0.1, 1).unwrap();
        let test = make_blobs(10, 2, 2, 1.0, 0.1, 2).unwrap();
        let s = build_open_split(&train, &test, &SET1).unwrap();
        assert_eq!(s.train.len(), 18);
        assert!(s.train.labels.iter().all(|&y| y < 6));
        assert_eq!(s.test.len(), 20);
        // digit 1 → unknown, digit 9 → 5
        assert_eq!(s.test.labels[2], 6);
        assert_eq!(s.test.labels[18], 5);
        let all: Vec<usize> = (0..10).collect();
        let s = build_open_split(&train, &test, &all).unwrap();
        assert!(s.test.labels.iter().all(|&y| y < 10));
        assert!(build_open_split(&train, &test, &[1, 1]).is_err());
        assert!(build_open_split(&train, &test, &[10]).is_err());
    }

    #[test]
    fn known_set_parsing() {
        assert_eq!(KnownSet::parse("Set2").unwrap().resolve(10, 0).unwrap(), SET2.to_vec());
        assert_eq!(
            KnownSet::parse("[4, 1,7]").unwrap(),
            KnownSet::Explicit(vec![4, 1, 7])
        );
        let r = KnownSet::parse("random:6:3").unwrap();
        let picked = r.resolve(10, 0).unwrap();
        assert_eq!(picked.len(), 6);
        assert_eq!(picked, r.resolve(10, 99).unwrap());
        assert_eq!(KnownSet::parse(&r.name()).unwrap(), r);
        let free = KnownSet::parse("random:4").unwrap();
        assert_eq!(KnownSet::parse(&free.name()).unwrap(), free);
        assert_eq!(free.resolve(10, 5).unwrap(), free.resolve(10, 5).unwrap());
        assert!(KnownSet::Set1.resolve(6, 0).is_err());
    }

    #[test]
    fn batches_stratified_and_partition() {
        let labels: Vec<usize> = (0..200).map(|i| i % 6).collect();
        let b = StratifiedBatches::new(&labels, 6, 32, 5).unwrap();
        let epoch = b.epoch(0);
        assert_eq!(epoch.len(), 7);
        let mut seen: Vec<usize> = epoch.iter().flatten().copied().collect();
        for batch in &epoch {
            assert!(batch.len() <= 32);
            for c in 0..6 {
                assert!(batch.iter().any(|&i| labels[i] == c));
            }
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..200).collect::<Vec<_>>());
        assert_ne!(b.epoch(0), b.epoch(1));
        let again: Vec<Vec<usize>> = StratifiedBatches::new(&labels, 6, 32, 5).unwrap().take(10).collect();
        let first: Vec<Vec<usize>> = b.take(10).collect();
        assert_eq!(again, first);
        assert!(StratifiedBatches::new(&labels, 6, 5, 0).is_err());
    }
}
