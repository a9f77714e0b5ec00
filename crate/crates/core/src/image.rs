use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Channel-major (`[C, H, W]`) image with `f32` pixels nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::Empty("image"));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "image",
                format!("{} values for {channels}x{height}x{width}", data.len()),
            ));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn clamp01(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn dist(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a as f64 - b as f64).abs()).fold(0.0, f64::max)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>()
            / self.data.len() as f64
    }

    /// Batch-of-one tensor `[1, C, H, W]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor { dims: vec![1, self.channels, self.height, self.width], data: self.data.clone(), requires_grad: false, grad: None }
    }

    /// Stacks images of identical shape into `[N, C, H, W]`.
    pub fn batch(images: &[&Image]) -> Result<Tensor> {
        let first = images.first().ok_or(Error::Empty("image batch"))?;
        let mut data = Vec::with_capacity(images.len() * first.len());
        for im in images {
            if !im.same_dims(first) {
                return Err(Error::shape("image batch", format!("mixed image sizes")));
            }
            data.extend_from_slice(&im.data);
        }
        Tensor::new(vec![images.len(), first.channels, first.height, first.width], data)
    }

    /// Splits `[N, C, H, W]` data back into images.
    pub fn unbatch(dims: &[usize], data: &[f32]) -> Result<Vec<Image>> {
        if dims.len() != 4 {
            return Err(Error::shape("image batch", format!("expected rank 4, got {dims:?}")));
        }
        let per = dims[1] * dims[2] * dims[3];
        data.chunks(per).map(|c| Image::new(dims[1], dims[2], dims[3], c.to_vec())).collect()
    }
}
