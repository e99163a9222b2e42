//! Datasets: MNIST from IDX files, a synthetic two-class stand-in, and
//! seeded mini-batch order.

mod idx;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use idx::{encode_idx, load_idx, parse_idx, read_maybe_gzip, write_idx, IdxArray};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Grey-scale images in [0, 1] with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        let &[n, _, _] = images.shape() else {
            return Err(Error::shape("dataset images must be [N, H, W]"));
        };
        if n != labels.len() {
            return Err(Error::shape(format!("{n} images but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Argument(format!("label {bad} outside {classes} classes")));
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Argument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> (usize, usize) {
        (self.images.shape()[1], self.images.shape()[2])
    }

    /// Sample `i` as a one-map `[1, H, W]` tensor.
    pub fn image(&self, i: usize) -> Tensor<f32> {
        let (h, w) = self.side();
        Tensor::new(vec![1, h, w], self.images.slab(i).to_vec()).expect("slab matches shape")
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let (h, w) = self.side();
        Dataset {
            images: Tensor::new(vec![n, h, w], self.images.data()[..n * h * w].to_vec())
                .expect("prefix"),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            split: self.split,
        }
    }

    pub fn from_idx(images: &IdxArray, labels: &IdxArray, classes: usize, split: Split) -> Result<Self> {
        if images.dims.len() != 3 || labels.dims.len() != 1 {
            return Err(Error::shape(format!(
                "image file has rank {}, label file rank {}; expected 3 and 1",
                images.dims.len(),
                labels.dims.len()
            )));
        }
        let data = images.data.iter().map(|&b| b as f32 / 255.0).collect();
        let t = Tensor::new(images.dims.clone(), data)?;
        Dataset::new(t, labels.data.iter().map(|&l| l as usize).collect(), classes, split)
    }
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io {
        path: dir.join(stem),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file (or .gz) not found"),
    })
}

/// Loads `train-*` and `t10k-*` IDX files (plain or gzip) from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let part = |prefix: &str, split| -> Result<Dataset> {
        let img = load_idx(&find(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
        let lab = load_idx(&find(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
        Dataset::from_idx(&img, &lab, 10, split)
    };
    Ok((part("train", Split::Train)?, part("t10k", Split::Test)?))
}

/// Two-class `size`x`size` set: oriented bars (class 0) against Gaussian
/// blobs (class 1), with pixel noise. Three quarters go to the train split.
pub fn synth_twoclass(n: usize, size: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n < 4 || size < 4 {
        return Err(Error::Argument("synthetic set needs n >= 4 and size >= 4".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = size as f64 / 2.0;
    let mut images = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let label = k % 2;
        let (cx, cy) = (
            half + rng.gen_range(-half / 3.0..half / 3.0),
            half + rng.gen_range(-half / 3.0..half / 3.0),
        );
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        let width = size as f64 / 10.0 + 0.5;
        let radius = size as f64 / 6.0 + 0.5;
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let v = if label == 0 {
                    let across = -dx * s + dy * c;
                    (-(across * across) / (2.0 * width * width)).exp()
                } else {
                    (-(dx * dx + dy * dy) / (2.0 * radius * radius)).exp()
                };
                let noisy = v + rng.gen_range(-0.1..0.1);
                images.push(noisy.clamp(0.0, 1.0) as f32);
            }
        }
        labels.push(label);
    }
    let n_train = n * 3 / 4;
    let plane = size * size;
    let train = Dataset::new(
        Tensor::new(vec![n_train, size, size], images[..n_train * plane].to_vec())?,
        labels[..n_train].to_vec(),
        2,
        Split::Train,
    )?;
    let test = Dataset::new(
        Tensor::new(vec![n - n_train, size, size], images[n_train * plane..].to_vec())?,
        labels[n_train..].to_vec(),
        2,
        Split::Test,
    )?;
    Ok((train, test))
}

/// Mini-batches of indices for one epoch: a permutation of `0..len` drawn
/// from `seed` and `epoch`, cut into chunks of `batch` (last may be short).
pub fn batches(len: usize, batch: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    Ok(order.chunks(batch).map(<[usize]>::to_vec).collect())
}
