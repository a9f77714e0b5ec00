//! Labelled image collections and the synthetic-shapes generator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::surrogate::shuffle;

pub const SHAPE_NAMES: [&str; 4] = ["disk", "square", "triangle", "cross"];

/// Supersampling factor per axis for anti-aliased edges.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    pub provenance: String,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, classes: usize, split: Split, provenance: String) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Mismatch(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|im| !im.same_dims(first)) {
                return Err(Error::Mismatch("images have differing dimensions".into()));
            }
        }
        Ok(Self { images, labels, classes, split, provenance })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = alloc::vec![0; self.classes];
        self.labels.iter().for_each(|&l| c[l] += 1);
        c
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split,
            provenance: self.provenance.clone(),
        }
    }

    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.split)
    }

    /// Disjoint train/val/test partition; the permutation depends only on `seed`.
    pub fn split(&self, train_frac: f64, val_frac: f64, seed: u64) -> Result<(Self, Self, Self)> {
        if !(0.0..=1.0).contains(&train_frac) || !(0.0..=1.0).contains(&val_frac) || train_frac + val_frac > 1.0 {
            return Err(Error::invalid(format!("bad split fractions {train_frac}, {val_frac}")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        shuffle(&mut idx, &mut rng::stream(seed, 0x5917));
        let n_train = (train_frac * self.len() as f64).round() as usize;
        let n_val = ((val_frac * self.len() as f64).round() as usize).min(self.len() - n_train);
        Ok((
            self.subset(&idx[..n_train], Split::Train),
            self.subset(&idx[n_train..n_train + n_val], Split::Val),
            self.subset(&idx[n_train + n_val..], Split::Test),
        ))
    }
}

/// Renders `count` grayscale shapes, `count / classes` per class (the first
/// `count % classes` classes get one extra), shuffled. Background and shape
/// intensities stay inside `[0.2, 0.8]` so moderate brightness changes never
/// saturate.
pub fn generate_synthetic_shapes(count: usize, size: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if ![16, 28, 32].contains(&size) {
        return Err(Error::invalid(format!("image size must be 16, 28 or 32, got {size}")));
    }
    if classes == 0 || classes > SHAPE_NAMES.len() {
        return Err(Error::invalid(format!("classes must be in 1..={}, got {classes}", SHAPE_NAMES.len())));
    }
    let mut r = rng::stream(seed, 0x5AFE);
    let mut labels: Vec<usize> = (0..count).map(|i| i % classes).collect();
    shuffle(&mut labels, &mut r);
    let images = labels.iter().map(|&l| render(l, size, &mut r)).collect();
    Dataset::new(images, labels, classes, Split::All, format!("synthetic-shapes size={size} classes={classes} seed={seed}"))
}

fn render<R: Rng + ?Sized>(class: usize, size: usize, r: &mut R) -> Image {
    let s = size as f64;
    let radius = r.random_range(0.22..0.34) * s;
    let margin = radius + 1.0;
    let cx = r.random_range(margin..s - margin);
    let cy = r.random_range(margin..s - margin);
    let bg = r.random_range(0.2..0.3);
    let fg = r.random_range(0.7..0.8);
    let inside = |x: f64, y: f64| -> bool {
        let (dx, dy) = (x - cx, y - cy);
        match class {
            0 => dx * dx + dy * dy <= radius * radius,
            1 => dx.abs() <= 0.8 * radius && dy.abs() <= 0.8 * radius,
            2 => {
                // upward triangle inscribed in the circle
                let top = -radius;
                let base = 0.5 * radius;
                let half = (dy - top) / (base - top) * radius * 0.866;
                dy >= top && dy <= base && dx.abs() <= half
            }
            _ => {
                let arm = 0.3 * radius;
                (dx.abs() <= arm && dy.abs() <= radius) || (dy.abs() <= arm && dx.abs() <= radius)
            }
        }
    };
    let mut img = Image::zeros(1, size, size);
    let n = SUPERSAMPLE as f64;
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / n;
                    let py = y as f64 + (sy as f64 + 0.5) / n;
                    hits += inside(px, py) as usize;
                }
            }
            let cover = hits as f64 / (n * n);
            img.data[y * size + x] = (bg + (fg - bg) * cover) as f32;
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let a = generate_synthetic_shapes(400, 16, 4, 3).unwrap();
        assert_eq!(a.class_counts(), [100; 4]);
        assert_eq!(a, generate_synthetic_shapes(400, 16, 4, 3).unwrap());
        assert_ne!(a.images, generate_synthetic_shapes(400, 16, 4, 4).unwrap().images);
    }

    #[test]
    fn intensities_stay_interior() {
        let d = generate_synthetic_shapes(40, 28, 4, 0).unwrap();
        for im in &d.images {
            let (lo, hi) = im.data.iter().fold((1.0f32, 0.0f32), |(a, b), &v| (a.min(v), b.max(v)));
            assert!(lo >= 0.2 && hi <= 0.8 && hi - lo > 0.3);
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let d = generate_synthetic_shapes(50, 16, 4, 1).unwrap();
        let (tr, va, te) = d.split(0.6, 0.2, 9).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (30, 10, 10));
        let mut all: Vec<&Image> = tr.images.iter().chain(&va.images).chain(&te.images).collect();
        all.dedup();
        assert_eq!(all.len(), 50);
        assert_eq!(tr, d.split(0.6, 0.2, 9).unwrap().0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate_synthetic_shapes(10, 20, 4, 0).is_err());
        assert!(generate_synthetic_shapes(10, 16, 5, 0).is_err());
        assert!(Dataset::new(alloc::vec![Image::zeros(1, 2, 2)], alloc::vec![3], 2, Split::All, String::new()).is_err());
    }
}
