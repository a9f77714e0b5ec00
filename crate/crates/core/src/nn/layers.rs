//! Parameterized layers. Each layer only stores [`ParamId`]s; values live in
//! a [`ParamStore`] and are bound onto a [`Tape`] at forward time.

use alloc::format;
use alloc::string::String;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Binds parameters from one store onto one tape.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    pub trainable: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, trainable: bool) -> Self {
        Self { tape, store, trainable }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id, self.trainable)
    }
}

fn join(prefix: &str, leaf: &str) -> String {
    format!("{prefix}.{leaf}")
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (d_in as f32).sqrt();
        let w = store.add_uniform(&join(name, "weight"), &[d_out, d_in], bound, rng)?;
        let b = store.add_uniform(&join(name, "bias"), &[d_out], bound, rng)?;
        Ok(Self { w, b, d_in, d_out })
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (cx.param(self.w), cx.param(self.b));
        cx.tape.dense(x, w, Some(b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = (c_in * k * k) as f32;
        let bound = (6.0 / fan_in).sqrt() / 2.0f32.sqrt();
        let w = store.add_uniform(&join(name, "weight"), &[c_out, c_in, k, k], bound, rng)?;
        let b = store.add(&join(name, "bias"), Tensor::zeros(&[c_out]))?;
        Ok(Self { w, b, stride, pad })
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (cx.param(self.w), cx.param(self.b));
        cx.tape.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Result<Self> {
        let gamma = store.add(&join(name, "gamma"), Tensor::full(&[channels], 1.0))?;
        let beta = store.add(&join(name, "beta"), Tensor::zeros(&[channels]))?;
        Ok(Self { gamma, beta, groups })
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let (g, b) = (cx.param(self.gamma), cx.param(self.beta));
        cx.tape.group_norm(x, g, b, self.groups)
    }
}
