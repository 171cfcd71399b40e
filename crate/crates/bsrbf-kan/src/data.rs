//! IDX image/label loading (plain or gzip), pixel normalization, and the
//! in-memory [`Dataset`] with deterministic batching.
//!
//! The expected directory layout is one folder per dataset holding the four
//! standard files, compressed or not:
//!
//! ```text
//! data/mnist/train-images-idx3-ubyte.gz
//! data/mnist/train-labels-idx1-ubyte.gz
//! data/mnist/t10k-images-idx3-ubyte.gz
//! data/mnist/t10k-labels-idx1-ubyte.gz
//! ```

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::{real, Real};
use crate::rng::SeededRng;

/// IDX magic for unsigned-byte rank-3 tensors (images).
const MAGIC_IMAGES: u32 = 2051;
/// IDX magic for unsigned-byte rank-1 tensors (labels).
const MAGIC_LABELS: u32 = 2049;

/// The ten Fashion-MNIST category names, by label index.
pub const FASHION_CLASSES: [&str; 10] = [
    "T-shirt/top",
    "Trouser",
    "Pullover",
    "Dress",
    "Coat",
    "Sandal",
    "Shirt",
    "Sneaker",
    "Bag",
    "Ankle boot",
];

/// Digit names for MNIST, by label index.
pub const MNIST_CLASSES: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];

/// Which benchmark corpus a directory holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    Fashion,
}

impl DatasetName {
    pub fn name(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Fashion => "fashion",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion" | "fashion_mnist" | "fashionmnist" => Ok(DatasetName::Fashion),
            other => Err(Error::Config(format!("unknown dataset: {other}"))),
        }
    }

    pub fn class_names(self) -> &'static [&'static str; 10] {
        match self {
            DatasetName::Mnist => &MNIST_CLASSES,
            DatasetName::Fashion => &FASHION_CLASSES,
        }
    }
}

/// Train or test split of a dataset directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn image_stem(self) -> &'static str {
        match self {
            Split::Train => "train-images-idx3-ubyte",
            Split::Test => "t10k-images-idx3-ubyte",
        }
    }

    fn label_stem(self) -> &'static str {
        match self {
            Split::Train => "train-labels-idx1-ubyte",
            Split::Test => "t10k-labels-idx1-ubyte",
        }
    }
}

/// Affine pixel normalization applied after scaling bytes to `[0, 1]`:
/// `(v / 255 - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: 0.5,
            std: 0.5,
        }
    }
}

impl Normalization {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidParameter {
                what: "Normalization mean",
                details: format!("must be finite, got {mean}"),
            });
        }
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::InvalidParameter {
                what: "Normalization std",
                details: format!("must be finite and positive, got {std}"),
            });
        }
        Ok(Normalization { mean, std })
    }

    #[inline]
    fn apply(&self, byte: u8) -> f64 {
        (byte as f64 / 255.0 - self.mean) / self.std
    }
}

/// Read a file that may or may not be gzip-compressed (sniffed from the
/// `1f 8b` magic, not the extension).
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut head = [0u8; 2];
    let n = file
        .read(&mut head)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut raw = head[..n].to_vec();
    file.read_to_end(&mut raw)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.display().to_string(),
                reason: format!("gzip decode failed: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            reason: format!("truncated header at byte {offset}"),
        })
}

/// Decode an IDX image file into an `n x (rows*cols)` matrix of normalized
/// pixels; also returns the image height and width.
pub fn read_idx_images<F: Real>(
    path: impl AsRef<Path>,
    norm: Normalization,
) -> Result<(Matrix<F>, (usize, usize))> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != MAGIC_IMAGES {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("expected image magic {MAGIC_IMAGES}, found {magic}"),
        });
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let pixels = &bytes[16.min(bytes.len())..];
    let expect = n
        .checked_mul(rows)
        .and_then(|x| x.checked_mul(cols))
        .ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            reason: format!("implausible dimensions {n} x {rows} x {cols}"),
        })?;
    if pixels.len() != expect {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!(
                "payload holds {} bytes but header promises {n} images of {rows}x{cols} = {expect}",
                pixels.len()
            ),
        });
    }
    let data: Vec<F> = pixels.iter().map(|&b| real::<F>(norm.apply(b))).collect();
    let images = Matrix::from_vec(n, rows * cols, data)?;
    Ok((images, (rows, cols)))
}

/// Decode an IDX label file.
pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != MAGIC_LABELS {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("expected label magic {MAGIC_LABELS}, found {magic}"),
        });
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let labels = &bytes[8.min(bytes.len())..];
    if labels.len() != n {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!(
                "payload holds {} labels but header promises {n}",
                labels.len()
            ),
        });
    }
    Ok(labels.to_vec())
}

/// Resolve `dir/stem` or `dir/stem.gz`, whichever exists.
fn resolve(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::Data(format!(
        "missing {stem}[.gz] under {}",
        dir.display()
    )))
}

/// An in-memory split: one normalized image per matrix row, plus labels.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    images: Matrix<F>,
    labels: Vec<u8>,
    num_classes: usize,
}

impl<F: Real> Dataset<F> {
    pub fn new(images: Matrix<F>, labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::Data(format!(
                "num_classes must be in 1..=256, got {num_classes}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    /// Load one split from a dataset directory, assuming the standard
    /// ten-class layout.
    pub fn load(dir: impl AsRef<Path>, split: Split, norm: Normalization) -> Result<Self> {
        let dir = dir.as_ref();
        let (images, _hw) = read_idx_images(resolve(dir, split.image_stem())?, norm)?;
        let labels = read_idx_labels(resolve(dir, split.label_stem())?)?;
        Dataset::new(images, labels, 10)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.images.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &Matrix<F> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The first `n` examples (or the whole set if `n` exceeds it), in
    /// original order.
    pub fn subset(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let mut images = Matrix::zeros(n, self.feature_dim());
        for i in 0..n {
            images.row_mut(i).copy_from_slice(self.images.row(i));
        }
        Dataset {
            images,
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    /// Gather the given examples into one batch.
    pub fn gather(&self, indices: &[usize]) -> (Matrix<F>, Vec<u8>) {
        let mut images = Matrix::zeros(indices.len(), self.feature_dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            images.row_mut(r).copy_from_slice(self.images.row(i));
            labels.push(self.labels[i]);
        }
        (images, labels)
    }

    /// Sequential batches in dataset order; the last one may be short.
    pub fn iter_batches(&self, batch_size: usize) -> BatchIter<'_, F> {
        BatchIter {
            dataset: self,
            order: (0..self.len()).collect(),
            batch_size: batch_size.max(1),
            pos: 0,
        }
    }

    /// Batches over a freshly shuffled order drawn from `rng`; one epoch's
    /// shuffle consumes `len - 1` RNG draws, so successive epochs sharing an
    /// RNG see different permutations deterministically.
    pub fn iter_shuffled_batches(&self, batch_size: usize, rng: &mut SeededRng) -> BatchIter<'_, F> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut order);
        BatchIter {
            dataset: self,
            order,
            batch_size: batch_size.max(1),
            pos: 0,
        }
    }
}

/// Iterator over `(images, labels)` batches of a [`Dataset`].
pub struct BatchIter<'a, F> {
    dataset: &'a Dataset<F>,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<F: Real> Iterator for BatchIter<'_, F> {
    type Item = (Matrix<F>, Vec<u8>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

impl<F: Real> ExactSizeIterator for BatchIter<'_, F> {
    fn len(&self) -> usize {
        let remaining = self.order.len() - self.pos;
        remaining.div_ceil(self.batch_size)
    }
}
