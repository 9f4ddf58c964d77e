//! Loaders for CIFAR10 (binary batches), Fashion-MNIST (IDX) and CelebA
//! (aligned JPEG directory).
//!
//! Expected layout under the data root:
//!
//! ```text
//! cifar10/data_batch_1.bin .. data_batch_5.bin, cifar10/test_batch.bin
//! fmnist/train-images-idx3-ubyte, fmnist/t10k-images-idx3-ubyte
//! celeba/img_align_celeba/*.jpg
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rayon::prelude::*;

use super::{DatasetSplit, Samples};
use crate::error::{Error, Result};

/// Side of the centered square cropped from each 178×218 CelebA image before
/// resizing to 64×64.
pub const CELEBA_CROP_DEFAULT: u32 = 140;
const CELEBA_SIZE: u32 = 64;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpectedSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl ExpectedSizes {
    pub fn for_dataset(name: &str) -> Result<Self> {
        let (train, validation, test) = match name {
            "cifar10" => (45_000, 5_000, 10_000),
            "fmnist" => (54_000, 6_000, 10_000),
            "celeba" => (180_540, 20_060, 1_999),
            other => {
                return Err(Error::config(
                    "dataset.name",
                    format!("unknown dataset {other:?}; expected cifar10, fmnist or celeba"),
                ))
            }
        };
        Ok(Self { train, validation, test })
    }
}

/// Loads a named dataset with its canonical split sizes.
pub fn load_dataset(name: &str, root: &Path) -> Result<DatasetSplit> {
    load_dataset_with(name, root, ExpectedSizes::for_dataset(name)?, CELEBA_CROP_DEFAULT)
}

/// Loads a named dataset, checking against the given split sizes.
pub fn load_dataset_with(name: &str, root: &Path, expected: ExpectedSizes, celeba_crop: u32) -> Result<DatasetSplit> {
    let dir = root.join(name);
    let (shape, fit, test) = match name {
        "cifar10" => load_cifar(&dir)?,
        "fmnist" => load_fmnist(&dir)?,
        "celeba" => load_celeba(&dir, celeba_crop)?,
        other => return Err(Error::config("dataset.name", format!("unknown dataset {other:?}"))),
    };
    let dim = shape.0 * shape.1 * shape.2;
    let mismatch = |split: &str, expected: usize, found: usize| Error::SizeMismatch {
        dataset: name.into(),
        split: split.into(),
        expected,
        found,
    };
    let n_fit = fit.len() / dim;
    let n_test = test.len() / dim;
    if name == "celeba" {
        let total = expected.train + expected.validation + expected.test;
        if n_fit != total {
            return Err(mismatch("all", total, n_fit));
        }
        let (a, rest) = fit.split_at(expected.train * dim);
        let (b, c) = rest.split_at(expected.validation * dim);
        return split(name, shape, a, b, c);
    }
    if n_fit != expected.train + expected.validation {
        return Err(mismatch("train+validation", expected.train + expected.validation, n_fit));
    }
    if n_test != expected.test {
        return Err(mismatch("test", expected.test, n_test));
    }
    let (a, b) = fit.split_at(expected.train * dim);
    split(name, shape, a, b, &test)
}

fn split(name: &str, shape: (usize, usize, usize), train: &[u8], val: &[u8], test: &[u8]) -> Result<DatasetSplit> {
    Ok(DatasetSplit {
        name: name.into(),
        train: Samples::from_u8(shape, 255, train)?,
        validation: Samples::from_u8(shape, 255, val)?,
        test: Samples::from_u8(shape, 255, test)?,
        image_shape: shape,
        pixel_max: Some(255),
        train_groups: None,
        linear_gaussian: None,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    Ok(fs::read(path)?)
}

type Loaded = ((usize, usize, usize), Vec<u8>, Vec<u8>);

fn cifar_pixels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read(path)?;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(
            "cifar10 batch",
            format!("{} has {} bytes, not a multiple of {CIFAR_RECORD}", path.display(), bytes.len()),
        ));
    }
    // drop the leading label byte of every record; pixels are already CHW
    Ok(bytes.chunks_exact(CIFAR_RECORD).flat_map(|r| r[1..].iter().copied()).collect())
}

fn load_cifar(dir: &Path) -> Result<Loaded> {
    let mut fit = Vec::new();
    for i in 1..=5 {
        fit.extend(cifar_pixels(&dir.join(format!("data_batch_{i}.bin")))?);
    }
    let test = cifar_pixels(&dir.join("test_batch.bin"))?;
    Ok(((3, 32, 32), fit, test))
}

fn idx_images(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read(path)?;
    let be = |k: usize| -> Result<usize> {
        bytes
            .get(4 * k..4 * k + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or_else(|| Error::format("idx file", format!("{} has a truncated header", path.display())))
    };
    if be(0)? != 0x0803 {
        return Err(Error::format("idx file", format!("{} is not an idx3 ubyte file", path.display())));
    }
    let (n, rows, cols) = (be(1)?, be(2)?, be(3)?);
    let payload = &bytes[16..];
    if payload.len() != n * rows * cols {
        return Err(Error::format(
            "idx file",
            format!("{} declares {n} images but holds {} bytes", path.display(), payload.len()),
        ));
    }
    Ok((rows, cols, payload.to_vec()))
}

fn load_fmnist(dir: &Path) -> Result<Loaded> {
    let (r, c, fit) = idx_images(&dir.join("train-images-idx3-ubyte"))?;
    let (r2, c2, test) = idx_images(&dir.join("t10k-images-idx3-ubyte"))?;
    if (r, c) != (r2, c2) {
        return Err(Error::format("fmnist", "train and test image sizes differ"));
    }
    Ok(((1, r, c), fit, test))
}

fn celeba_image(path: &Path, crop: u32) -> Result<Vec<u8>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let side = crop.min(w).min(h);
    let x0 = (w - side) / 2;
    let y0 = (h - side) / 2;
    let cropped = image::imageops::crop_imm(&img, x0, y0, side, side).to_image();
    let small = image::imageops::resize(&cropped, CELEBA_SIZE, CELEBA_SIZE, FilterType::Triangle);
    let n = (CELEBA_SIZE * CELEBA_SIZE) as usize;
    let mut chw = vec![0u8; 3 * n];
    for (i, p) in small.pixels().enumerate() {
        for ch in 0..3 {
            chw[ch * n + i] = p[ch];
        }
    }
    Ok(chw)
}

fn load_celeba(dir: &Path, crop: u32) -> Result<Loaded> {
    let images = dir.join("img_align_celeba");
    if !images.is_dir() {
        return Err(Error::MissingFile { path: images });
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&images)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("jpg")))
        .collect();
    files.sort();
    let decoded: Result<Vec<Vec<u8>>> = files.par_iter().map(|p| celeba_image(p, crop)).collect();
    let s = CELEBA_SIZE as usize;
    Ok(((3, s, s), decoded?.concat(), Vec::new()))
}
