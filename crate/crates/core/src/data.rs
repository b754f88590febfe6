//! MNIST IDX ingestion, derived test sets, synthetic spot fixtures and
//! deterministic batching.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{OocsError, Result};
use crate::imageops::{invert, ImageTensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_SIDE: usize = 28;

/// Environment variable naming the directory that holds the four IDX files.
pub const DATA_DIR_ENV: &str = "OOCS_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<u8>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<ImageTensor>, labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(OocsError::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= num_classes) {
            return Err(OocsError::InvalidLabel {
                index,
                label,
                num_classes,
            });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: name.into(),
        }
    }

    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx, self.name.clone())
    }

    pub fn mean_intensity(&self) -> f64 {
        let total: f64 = self.images.iter().map(|im| im.data().iter().sum::<f64>()).sum();
        let count: usize = self.images.iter().map(|im| im.data().len()).sum();
        total / count as f64
    }

    /// Shuffles with `seed` and holds out the last `holdout` samples.
    pub fn split_validation(&self, holdout: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if holdout >= self.len() {
            return Err(OocsError::Domain(format!(
                "cannot hold out {holdout} of {} samples",
                self.len()
            )));
        }
        let order = permutation(self.len(), seed);
        let cut = self.len() - holdout;
        Ok((
            self.select(&order[..cut], format!("{}-train", self.name)),
            self.select(&order[cut..], format!("{}-val", self.name)),
        ))
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| OocsError::Truncated {
            path: path.to_path_buf(),
            expected: (offset + 4) as u64,
            found: bytes.len() as u64,
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| OocsError::io(path, e))
}

/// Loads an IDX image/label file pair and scales bytes to `[0, 1]`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_file(images_path)?;
    let magic = read_u32_be(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(OocsError::BadMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&img, 4, images_path)? as usize;
    let rows = read_u32_be(&img, 8, images_path)? as usize;
    let cols = read_u32_be(&img, 12, images_path)? as usize;
    if rows != MNIST_SIDE || cols != MNIST_SIDE {
        return Err(OocsError::Format(format!(
            "{}: expected {MNIST_SIDE}x{MNIST_SIDE} images, found {rows}x{cols}",
            images_path.display()
        )));
    }
    let pixels = rows * cols;
    let expected = 16 + (count * pixels) as u64;
    if (img.len() as u64) < expected {
        return Err(OocsError::Truncated {
            path: images_path.to_path_buf(),
            expected,
            found: img.len() as u64,
        });
    }

    let lab = read_file(labels_path)?;
    let magic = read_u32_be(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(OocsError::BadMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = read_u32_be(&lab, 4, labels_path)? as usize;
    if (lab.len() as u64) < 8 + label_count as u64 {
        return Err(OocsError::Truncated {
            path: labels_path.to_path_buf(),
            expected: 8 + label_count as u64,
            found: lab.len() as u64,
        });
    }
    if label_count != count {
        return Err(OocsError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let images = img[16..16 + count * pixels]
        .chunks_exact(pixels)
        .map(|raw| {
            let data = raw.iter().map(|&b| b as f64 / 255.0).collect();
            ImageTensor::new(rows, cols, 1, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = lab[8..8 + count].to_vec();
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().split('-').next().unwrap_or("mnist").to_string())
        .unwrap_or_else(|| "mnist".into());
    Dataset::new(format!("mnist-{name}"), images, labels, 10)
}

/// Resolves the directory holding the IDX files: explicit flag first, then
/// `OOCS_DATA_DIR`.
pub fn resolve_data_dir(flag: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| OocsError::Domain(format!("no data directory given (use --data-dir or {DATA_DIR_ENV})")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads the standard file names (`train-*` / `t10k-*`) from `dir`.
pub fn load_mnist_split(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

pub fn make_inverted(ds: &Dataset) -> Dataset {
    Dataset {
        images: ds.images.iter().map(invert).collect(),
        labels: ds.labels.clone(),
        num_classes: ds.num_classes,
        name: format!("{}-inverted", ds.name),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpotShape {
    Block3x3,
    Disk(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpotPolarity {
    BrightOnDark,
    DarkOnBright,
}

/// Free pixels required between a spot and the image border.
pub const SPOT_MARGIN: usize = 3;

/// A square test image holding a single spot centered at `(row, col)`.
pub fn synth_spot(
    size: usize,
    shape: SpotShape,
    polarity: SpotPolarity,
    position: (usize, usize),
) -> Result<ImageTensor> {
    let extent = match shape {
        SpotShape::Block3x3 => 1,
        SpotShape::Disk(r) if r >= 0.0 && r.is_finite() => r.floor() as usize,
        SpotShape::Disk(r) => return Err(OocsError::Domain(format!("bad disk radius {r}"))),
    };
    let (row, col) = position;
    let reach = extent + SPOT_MARGIN;
    if row < reach || col < reach || row + reach >= size || col + reach >= size {
        return Err(OocsError::OutOfBounds(format!(
            "spot at ({row}, {col}) with extent {extent} needs a {SPOT_MARGIN}-pixel margin in a {size}x{size} image"
        )));
    }
    let (background, spot) = match polarity {
        SpotPolarity::BrightOnDark => (0.0, 1.0),
        SpotPolarity::DarkOnBright => (1.0, 0.0),
    };
    let mut img = ImageTensor::filled(size, size, 1, background);
    let e = extent as isize;
    for dy in -e..=e {
        for dx in -e..=e {
            let inside = match shape {
                SpotShape::Block3x3 => true,
                SpotShape::Disk(r) => ((dy * dy + dx * dx) as f64) <= r * r,
            };
            if inside {
                img.set((row as isize + dy) as usize, (col as isize + dx) as usize, 0, spot);
            }
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn new(batch_size: usize, shuffle_seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(OocsError::Domain("batch size must be at least 1".into()));
        }
        Ok(Self {
            batch_size,
            shuffle_seed,
            drop_last: false,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub indices: Vec<usize>,
    pub images: Vec<&'a ImageTensor>,
    pub labels: Vec<u8>,
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Shuffled, contiguous mini-batches. The last batch may be short unless
/// `drop_last` is set.
pub fn batches<'a>(ds: &'a Dataset, plan: &BatchPlan) -> impl Iterator<Item = Batch<'a>> + 'a {
    let order = permutation(ds.len(), plan.shuffle_seed);
    let size = plan.batch_size.max(1);
    let drop_last = plan.drop_last;
    let chunks: Vec<Vec<usize>> = order
        .chunks(size)
        .filter(|c| !(drop_last && c.len() < size))
        .map(|c| c.to_vec())
        .collect();
    chunks.into_iter().map(move |indices| Batch {
        images: indices.iter().map(|&i| &ds.images[i]).collect(),
        labels: indices.iter().map(|&i| ds.labels[i]).collect(),
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx(dir: &Path, images: &[[u8; 784]], labels: &[u8]) -> (PathBuf, PathBuf) {
        let ip = dir.join("img");
        let lp = dir.join("lab");
        let mut f = fs::File::create(&ip).unwrap();
        f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        for im in images {
            f.write_all(im).unwrap();
        }
        let mut f = fs::File::create(&lp).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        (ip, lp)
    }

    fn toy(n: usize) -> Dataset {
        let images = (0..n)
            .map(|i| ImageTensor::filled(2, 2, 1, (i % 7) as f64 / 7.0))
            .collect();
        let labels = (0..n).map(|i| (i % 10) as u8).collect();
        Dataset::new("toy", images, labels, 10).unwrap()
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = [0u8; 784];
        a[0] = 255;
        a[1] = 128;
        let (ip, lp) = write_idx(dir.path(), &[a, [7u8; 784]], &[3, 9]);
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(ds.images[0].get(0, 0, 0), 1.0);
        assert_eq!(ds.images[0].get(0, 2, 0), 0.0);
        assert_eq!(ds.images[0].get(0, 1, 0), 128.0 / 255.0);
        assert!(ds.images.iter().all(|im| im.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), &[[0u8; 784]], &[1]);
        // swapped files trip the magic check
        assert!(matches!(load_mnist_idx(&lp, &ip), Err(OocsError::BadMagic { .. })));

        let (ip, lp) = write_idx(dir.path(), &[[0u8; 784]], &[10]);
        assert!(matches!(
            load_mnist_idx(&ip, &lp),
            Err(OocsError::InvalidLabel { label: 10, .. })
        ));

        let (ip, lp) = write_idx(dir.path(), &[[0u8; 784], [0u8; 784]], &[1]);
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(OocsError::CountMismatch { .. })));

        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(OocsError::Truncated { .. })));

        assert!(matches!(
            load_mnist_idx(&dir.path().join("missing"), &lp),
            Err(OocsError::Io { .. })
        ));
    }

    #[test]
    fn inversion_dataset() {
        let ds = toy(20);
        let inv = make_inverted(&ds);
        assert_eq!(inv.labels, ds.labels);
        assert_eq!(inv.name, "toy-inverted");
        assert!((inv.mean_intensity() - (1.0 - ds.mean_intensity())).abs() < 1e-12);
        let back = make_inverted(&inv);
        for (a, b) in back.images.iter().zip(&ds.images) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= f64::EPSILON);
            }
        }
    }

    #[test]
    fn spots() {
        let img = synth_spot(28, SpotShape::Block3x3, SpotPolarity::BrightOnDark, (14, 14)).unwrap();
        assert_eq!(img.data().iter().filter(|&&v| v == 1.0).count(), 9);
        assert_eq!(img.get(13, 15, 0), 1.0);
        let dark = synth_spot(28, SpotShape::Block3x3, SpotPolarity::DarkOnBright, (14, 14)).unwrap();
        assert_eq!(dark, invert(&img));
        let disk = synth_spot(28, SpotShape::Disk(2.0), SpotPolarity::BrightOnDark, (10, 12)).unwrap();
        assert_eq!(disk.data().iter().filter(|&&v| v == 1.0).count(), 13);
        assert!(matches!(
            synth_spot(28, SpotShape::Block3x3, SpotPolarity::BrightOnDark, (1, 1)),
            Err(OocsError::OutOfBounds(_))
        ));
        assert!(synth_spot(28, SpotShape::Block3x3, SpotPolarity::BrightOnDark, (24, 14)).is_err());
    }

    #[test]
    fn batching() {
        let ds = toy(100);
        let plan = BatchPlan::new(64, 5).unwrap();
        let sizes: Vec<usize> = batches(&ds, &plan).map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![64, 36]);
        let mut seen: Vec<usize> = batches(&ds, &plan).flat_map(|b| b.indices).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        let again: Vec<usize> = batches(&ds, &plan).flat_map(|b| b.indices).collect();
        let first: Vec<usize> = batches(&ds, &plan).flat_map(|b| b.indices).collect();
        assert_eq!(first, again);
        let other: Vec<usize> = batches(&ds, &BatchPlan::new(64, 6).unwrap()).flat_map(|b| b.indices).collect();
        assert_ne!(first, other);
        let drop = BatchPlan {
            drop_last: true,
            ..plan
        };
        assert_eq!(batches(&ds, &drop).count(), 1);
        for b in batches(&ds, &plan) {
            for (im, (&i, &l)) in b.images.iter().zip(b.indices.iter().zip(&b.labels)) {
                assert_eq!(**im, ds.images[i]);
                assert_eq!(l, ds.labels[i]);
            }
        }
        assert!(BatchPlan::new(0, 1).is_err());
    }

    #[test]
    fn validation_split() {
        let ds = toy(50);
        let (train, val) = ds.split_validation(10, 0).unwrap();
        assert_eq!((train.len(), val.len()), (40, 10));
        let order = permutation(50, 0);
        assert_eq!(val.labels, order[40..].iter().map(|&i| ds.labels[i]).collect::<Vec<_>>());
        assert!(ds.split_validation(50, 0).is_err());
    }
}
