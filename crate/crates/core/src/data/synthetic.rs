use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;

/// Synthetic features are min-max scaled into this range so ε-balls around
/// them are rarely clipped by the `[0, 1]` box.
pub const SYNTHETIC_RANGE: (f64, f64) = (0.05, 0.95);

fn per_class(n: usize, classes: usize) -> Vec<usize> {
    (0..classes).map(|k| n / classes + usize::from(k < n % classes)).collect()
}

fn scale(points: &mut [[f64; 2]]) {
    let (lo, hi) = SYNTHETIC_RANGE;
    for axis in 0..2 {
        let min = points.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let max = points.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        for p in points.iter_mut() {
            p[axis] = if span > 0.0 { lo + (hi - lo) * (p[axis] - min) / span } else { 0.5 };
        }
    }
}

fn noise(std: f64) -> Result<Normal<f64>> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::InvalidInput(format!("noise level must be finite and >= 0, got {std}")));
    }
    Normal::new(0.0, std).map_err(|e| Error::InvalidInput(format!("noise level {std}: {e}")))
}

fn moons_raw(n: usize, noise_std: f64, seed: u64) -> Result<(Vec<[f64; 2]>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("two-moons needs n >= 2, got {n}")));
    }
    let mut rng = seeds::rng(seed, &[seeds::stream::DATA]);
    let gauss = noise(noise_std)?;
    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, count) in per_class(n, 2).into_iter().enumerate() {
        for _ in 0..count {
            let t: f64 = rng.random_range(0.0..PI);
            let (x, y) = if class == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
            pts.push([x + gauss.sample(&mut rng), y + gauss.sample(&mut rng)]);
            labels.push(class);
        }
    }
    Ok((pts, labels))
}

fn blobs_raw(n: usize, classes: usize, spread: f64, seed: u64) -> Result<(Vec<[f64; 2]>, Vec<usize>)> {
    if classes < 2 || n < classes {
        return Err(Error::InvalidInput(format!("blobs need classes >= 2 and n >= classes, got n={n}, C={classes}")));
    }
    let mut rng = seeds::rng(seed, &[seeds::stream::DATA]);
    let gauss = noise(spread)?;
    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, count) in per_class(n, classes).into_iter().enumerate() {
        let angle = 2.0 * PI * class as f64 / classes as f64;
        let (cx, cy) = (angle.cos(), angle.sin());
        for _ in 0..count {
            pts.push([cx + gauss.sample(&mut rng), cy + gauss.sample(&mut rng)]);
            labels.push(class);
        }
    }
    Ok((pts, labels))
}

fn assemble(mut pts: Vec<[f64; 2]>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Dataset> {
    scale(&mut pts);
    let features = Tensor::new(vec![pts.len(), 2], pts.into_iter().flatten().collect())?;
    Dataset::new(features, labels, classes, split)
}

/// Shuffle jointly generated points, then cut into train and test parts
/// that share one scaling.
fn split_pair(
    mut pts: Vec<[f64; 2]>,
    labels: Vec<usize>,
    classes: usize,
    n_train: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    scale(&mut pts);
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.shuffle(&mut seeds::rng(seed, &[seeds::stream::SHUFFLE]));
    let (train_idx, test_idx) = order.split_at(n_train);
    let build = |idx: &[usize], split: Split| {
        let features = Tensor::new(vec![idx.len(), 2], idx.iter().flat_map(|&i| pts[i]).collect())?;
        Dataset::new(features, idx.iter().map(|&i| labels[i]).collect(), classes, split)
    };
    Ok((build(train_idx, Split::Train)?, build(test_idx, Split::Test)?))
}

/// Two interleaving half circles with Gaussian noise, balanced classes.
pub fn gen_two_moons(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    let (pts, labels) = moons_raw(n, noise_std, seed)?;
    assemble(pts, labels, 2, Split::Train)
}

/// `C` Gaussian blobs centred on the unit circle.
pub fn gen_blobs(n: usize, classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    let (pts, labels) = blobs_raw(n, classes, spread, seed)?;
    assemble(pts, labels, classes, Split::Train)
}

/// Train and test two-moons sets drawn and scaled together.
pub fn two_moons_split(n_train: usize, n_test: usize, noise_std: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidInput("train and test sizes must be positive".into()));
    }
    let (pts, labels) = moons_raw(n_train + n_test, noise_std, seed)?;
    split_pair(pts, labels, 2, n_train, seed)
}

/// Train and test blob sets drawn and scaled together.
pub fn blobs_split(
    n_train: usize,
    n_test: usize,
    classes: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidInput("train and test sizes must be positive".into()));
    }
    let (pts, labels) = blobs_raw(n_train + n_test, classes, spread, seed)?;
    split_pair(pts, labels, classes, n_train, seed)
}
