//! MNIST ingestion from IDX files (raw or gzip-wrapped) and deterministic
//! batch iteration.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    /// 784 intensities in `[0, 1]`, row-major.
    pub pixels: Vec<f32>,
    pub label: u8,
}

impl ImageSample {
    pub fn new(pixels: Vec<f32>, label: u8) -> Result<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::invalid(format!(
                "image must have {IMAGE_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("pixel intensity outside [0, 1]"));
        }
        if label as usize >= NUM_CLASSES {
            return Err(Error::invalid(format!("label {label} outside 0..=9")));
        }
        Ok(Self { pixels, label })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub samples: Vec<ImageSample>,
    pub tag: SplitTag,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n` samples (or all of them if fewer).
    pub fn head(&self, n: usize) -> DatasetSplit {
        DatasetSplit {
            samples: self.samples.iter().take(n).cloned().collect(),
            tag: self.tag,
        }
    }

    pub fn select(&self, indices: &[usize]) -> DatasetSplit {
        DatasetSplit {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            tag: self.tag,
        }
    }

    /// A seeded random subset of `n` samples, kept in original file order.
    pub fn seeded_subset(&self, n: usize, seed: u64) -> (DatasetSplit, Vec<usize>) {
        if n >= self.len() {
            return (self.clone(), (0..self.len()).collect());
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        idx.sort_unstable();
        (self.select(&idx), idx)
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset: 0,
                msg: format!("corrupt gzip stream: {e}"),
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
            path: path.to_path_buf(),
            offset: offset as u64,
            msg: "truncated header".into(),
        })
}

fn check_magic(bytes: &[u8], want: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("bad magic 0x{magic:08x}, expected 0x{want:08x}"),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], want: usize, path: &Path) -> Result<()> {
    if bytes.len() < want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            msg: format!("truncated payload: {} bytes, expected {want}", bytes.len()),
        });
    }
    Ok(())
}

/// Loads an image/label IDX file pair. Pixels are divided by 255.
///
/// The split tag is `Test` when the image file name starts with `t10k`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let img = read_maybe_gz(images_path)?;
    let lbl = read_maybe_gz(labels_path)?;

    check_magic(&img, IMAGES_MAGIC, images_path)?;
    check_magic(&lbl, LABELS_MAGIC, labels_path)?;
    let n_img = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let n_lbl = be_u32(&lbl, 4, labels_path)? as usize;
    if rows * cols != IMAGE_PIXELS {
        return Err(Error::Format {
            path: images_path.to_path_buf(),
            offset: 8,
            msg: format!("expected 28x28 images, got {rows}x{cols}"),
        });
    }
    if n_img != n_lbl {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            msg: format!("label count {n_lbl} does not match image count {n_img}"),
        });
    }
    check_len(&img, 16 + n_img * IMAGE_PIXELS, images_path)?;
    check_len(&lbl, 8 + n_lbl, labels_path)?;

    let mut samples = Vec::with_capacity(n_img);
    for i in 0..n_img {
        let label = lbl[8 + i];
        if label as usize >= NUM_CLASSES {
            return Err(Error::Format {
                path: labels_path.to_path_buf(),
                offset: (8 + i) as u64,
                msg: format!("label {label} outside 0..=9"),
            });
        }
        let start = 16 + i * IMAGE_PIXELS;
        let pixels = img[start..start + IMAGE_PIXELS]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        samples.push(ImageSample { pixels, label });
    }

    let tag = match images_path.file_name().and_then(|n| n.to_str()) {
        Some(name) if name.starts_with("t10k") => SplitTag::Test,
        _ => SplitTag::Train,
    };
    Ok(DatasetSplit { samples, tag })
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(candidate);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
    ))
}

/// Loads `(train, test)` from a directory holding the four standard files,
/// each optionally with a `.gz` suffix.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(DatasetSplit, DatasetSplit)> {
    let dir = dir.as_ref();
    let train = load_idx(
        find_file(dir, "train-images-idx3-ubyte")?,
        find_file(dir, "train-labels-idx1-ubyte")?,
    )?;
    let test = load_idx(
        find_file(dir, "t10k-images-idx3-ubyte")?,
        find_file(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}

/// Loads only the test split from an MNIST directory.
pub fn load_mnist_test(dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    load_idx(
        find_file(dir, "t10k-images-idx3-ubyte")?,
        find_file(dir, "t10k-labels-idx1-ubyte")?,
    )
}

/// Seeded permutation of sample indices cut into batches of `batch_size`;
/// the last batch may be short.
pub fn shuffled_batches(split: &DatasetSplit, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..split.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_pair(dir: &Path, n: usize, fill: u8, labels: &[u8]) -> (PathBuf, PathBuf) {
        let ip = dir.join("train-images-idx3-ubyte");
        let lp = dir.join("train-labels-idx1-ubyte");
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&(n as u32).to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        img.extend(std::iter::repeat(fill).take(n * IMAGE_PIXELS));
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lbl.extend_from_slice(labels);
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lbl).unwrap();
        (ip, lp)
    }

    #[test]
    fn crafted_single_image() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), 1, 0, &[7]);
        let split = load_idx(&ip, &lp).unwrap();
        assert_eq!(split.len(), 1);
        assert_eq!(split.tag, SplitTag::Train);
        assert_eq!(split.samples[0].label, 7);
        assert!(split.samples[0].pixels.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn gzip_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), 2, 255, &[1, 2]);
        let gz = dir.path().join("imgs.gz");
        let mut enc = flate2::write::GzEncoder::new(fs::File::create(&gz).unwrap(), flate2::Compression::fast());
        enc.write_all(&fs::read(&ip).unwrap()).unwrap();
        enc.finish().unwrap();
        let split = load_idx(&gz, &lp).unwrap();
        assert_eq!(split.len(), 2);
        assert!(split.samples[1].pixels.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn format_errors_carry_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), 2, 0, &[1]);
        match load_idx(&ip, &lp) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected count mismatch, got {other:?}"),
        }
        // swapped files: magic mismatch
        match load_idx(&lp, &ip) {
            Err(Error::Format { offset, msg, .. }) => {
                assert_eq!(offset, 0);
                assert!(msg.contains("magic"));
            }
            other => panic!("expected bad magic, got {other:?}"),
        }
        let (ip, lp) = write_idx_pair(dir.path(), 2, 0, &[1, 1]);
        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 10]).unwrap();
        match load_idx(&ip, &lp) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 10),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn batches_cover_everything() {
        let samples = (0..60_000)
            .map(|_| ImageSample {
                pixels: Vec::new(),
                label: 0,
            })
            .collect();
        let split = DatasetSplit {
            samples,
            tag: SplitTag::Train,
        };
        let batches = shuffled_batches(&split, 64, 1).unwrap();
        assert_eq!(batches.len(), 938);
        assert_eq!(batches.last().unwrap().len(), 32);
        let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
        assert_eq!(batches, shuffled_batches(&split, 64, 1).unwrap());
        let other: Vec<usize> = shuffled_batches(&split, 64, 2).unwrap().into_iter().flatten().collect();
        assert_ne!(all, other);
        all.sort_unstable();
        assert_eq!(all, (0..60_000).collect::<Vec<_>>());
        assert!(shuffled_batches(&split, 0, 1).is_err());
    }

    #[test]
    fn empty_split_gives_no_batches() {
        let split = DatasetSplit {
            samples: Vec::new(),
            tag: SplitTag::Test,
        };
        assert!(shuffled_batches(&split, 64, 0).unwrap().is_empty());
    }
}
