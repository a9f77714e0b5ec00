use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major `f32` array.
///
/// `grad` is only populated for tensors that take part in training, either as
/// a parameter in a [`ParamStore`](super::ParamStore) or as a node on a
/// [`Tape`](super::Tape).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) && !data.is_empty() {
            return Err(Error::shape("tensor", alloc::format!("zero-sized dims {dims:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                alloc::format!("dims {dims:?} hold {numel} values, data has {}", data.len()),
            ));
        }
        Ok(Self { dims, data, requires_grad: false, grad: None })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![0.0; n], requires_grad: false, grad: None }
    }

    pub fn full(dims: &[usize], value: f32) -> Self {
        let mut t = Self::zeros(dims);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f32) -> Self {
        Self { dims: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self { dims: vec![data.len()], data, requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                alloc::format!("cannot view {:?} as {dims:?}", self.dims),
            ));
        }
        self.dims = dims.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), n);
        }
        Ok(self)
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.fill(0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    /// Sum of squares accumulated in `f64`.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }
}
