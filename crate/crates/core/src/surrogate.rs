//! Surrogate transformation `τ̂(θ, x) = H(F1(θ) + θ′ + F2(x))`.
//!
//! `F1` is a single affine layer `θ ↦ A1 θ + b1`. In the U-Net codec `F2` is
//! one linear 3×3 convolution into an image-shaped latent and `H` is a U-Net
//! over that latent, so every skip connection lives inside `H` and the
//! parameter path, the augmented noise and the image meet only in the
//! additive latent sum.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{halving_lr, Adam, Conv2d, Ctx, Dense, GroupNorm, ParamStore, Tape, Tensor, Var};
use crate::rng;
use crate::transforms::{TransformKind, TransformSpec};

/// Name of the metadata tensor describing the architecture in checkpoints.
pub const META_TENSOR: &str = "meta.arch";

/// GroupNorm group count used throughout the U-Net.
const GN_GROUPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn of(image: &Image) -> Self {
        Self { channels: image.channels, height: image.height, width: image.width }
    }

    pub fn pixels(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn matches(&self, image: &Image) -> bool {
        *self == Self::of(image)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// `F2` is a 3×3 convolution to `latent_channels`; `H` is a U-Net with
    /// two stride-2 blocks of the given widths and a mirrored decoder.
    UNet { latent_channels: usize, widths: [usize; 3] },
    /// Fully connected codec on flattened pixels; `nonlinear` adds tanh
    /// after `F2` and a hidden tanh layer inside `H`.
    Mlp { latent: usize, hidden: usize, nonlinear: bool },
}

impl Arch {
    pub const DEFAULT_UNET: Arch = Arch::UNet { latent_channels: 1, widths: [4, 8, 8] };
}

#[derive(Debug, Clone)]
enum Layers {
    UNet {
        f2: Conv2d,
        stem: Conv2d,
        gn0: GroupNorm,
        down1: Conv2d,
        gn1: GroupNorm,
        down2: Conv2d,
        gn2: GroupNorm,
        up1: Conv2d,
        gnu1: GroupNorm,
        up0: Conv2d,
        gnu0: GroupNorm,
        head: Conv2d,
    },
    Mlp {
        enc: Dense,
        dec_hidden: Option<Dense>,
        dec_out: Dense,
        nonlinear: bool,
    },
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    pub transform: TransformKind,
    pub geometry: Geometry,
    pub arch: Arch,
    pub param_dim: usize,
    pub store: ParamStore,
    f1: Dense,
    layers: Layers,
    latent_dim: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub halve_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 16, lr: 1e-3, halve_every: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_l1: f64,
    pub val_l1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub train_l1: f64,
    pub val_l1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonReport {
    /// 99th percentile of per-pair L2 error; the `ε` used for correction.
    pub epsilon: f64,
    pub max: f64,
    pub mean: f64,
    pub pairs: usize,
}

impl Surrogate {
    pub fn new(transform: TransformKind, geometry: Geometry, arch: Arch, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, 0xA11C);
        let m = transform.param_dim();
        let n = geometry.pixels();
        let (layers, latent_dim) = match arch {
            Arch::UNet { latent_channels: cl, widths: [c0, c1, c2] } => {
                let (h, w, c) = (geometry.height, geometry.width, geometry.channels);
                if h % 4 != 0 || w % 4 != 0 {
                    return Err(Error::invalid(format!("U-Net needs sides divisible by 4, got {h}x{w}")));
                }
                if cl == 0 || [c0, c1, c2].iter().any(|&k| k == 0 || k % GN_GROUPS != 0) {
                    return Err(Error::invalid(format!(
                        "U-Net needs a positive latent width and widths that are positive multiples of {GN_GROUPS}"
                    )));
                }
                let layers = Layers::UNet {
                    f2: Conv2d::new(&mut store, "f2", c, cl, 3, 1, 1, &mut r)?,
                    stem: Conv2d::new(&mut store, "h.stem", cl, c0, 3, 1, 1, &mut r)?,
                    gn0: GroupNorm::new(&mut store, "h.gn0", c0, GN_GROUPS)?,
                    down1: Conv2d::new(&mut store, "h.down1", c0, c1, 3, 2, 1, &mut r)?,
                    gn1: GroupNorm::new(&mut store, "h.gn1", c1, GN_GROUPS)?,
                    down2: Conv2d::new(&mut store, "h.down2", c1, c2, 3, 2, 1, &mut r)?,
                    gn2: GroupNorm::new(&mut store, "h.gn2", c2, GN_GROUPS)?,
                    up1: Conv2d::new(&mut store, "h.up1", c2 + c1, c1, 3, 1, 1, &mut r)?,
                    gnu1: GroupNorm::new(&mut store, "h.gnu1", c1, GN_GROUPS)?,
                    up0: Conv2d::new(&mut store, "h.up0", c1 + c0, c0, 3, 1, 1, &mut r)?,
                    gnu0: GroupNorm::new(&mut store, "h.gnu0", c0, GN_GROUPS)?,
                    head: Conv2d::new(&mut store, "h.head", c0 + cl, c, 1, 1, 0, &mut r)?,
                };
                if let Layers::UNet { f2, head, .. } = &layers {
                    // start near the identity map: F2 copies channels into the
                    // latent and the head reads them straight back
                    let k = store.get_mut(f2.w);
                    k.data.iter_mut().for_each(|v| *v *= 0.01);
                    for o in 0..cl {
                        k.data[(o * c + o % c) * 9 + 4] = if o < c { 1.0 } else { 0.0 };
                    }
                    let wt = store.get_mut(head.w);
                    for o in 0..c {
                        for i in 0..c0 + cl {
                            let v = &mut wt.data[o * (c0 + cl) + i];
                            *v = if i == c0 + o && o < cl { 1.0 } else { 0.1 * *v };
                        }
                    }
                }
                (layers, cl * h * w)
            }
            Arch::Mlp { latent, hidden, nonlinear } => {
                if latent == 0 || (nonlinear && hidden == 0) {
                    return Err(Error::invalid("MLP codec needs positive latent and hidden sizes"));
                }
                let enc = Dense::new(&mut store, "enc.fc", n, latent, &mut r)?;
                let dec_hidden =
                    if nonlinear { Some(Dense::new(&mut store, "dec.hidden", latent, hidden, &mut r)?) } else { None };
                let dec_in = if nonlinear { hidden } else { latent };
                let dec_out = Dense::new(&mut store, "dec.out", dec_in, n, &mut r)?;
                (Layers::Mlp { enc, dec_hidden, dec_out, nonlinear }, latent)
            }
        };
        let f1 = Dense::new(&mut store, "f1", m, latent_dim, &mut r)?;
        // a near-zero parameter path keeps the untrained model close to `H(F2(x))`
        store.get_mut(f1.w).data.iter_mut().for_each(|v| *v *= 0.01);
        store.get_mut(f1.b).data.iter_mut().for_each(|v| *v = 0.0);
        Ok(Self { transform, geometry, arch, param_dim: m, store, f1, layers, latent_dim })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// `A1` as a row-major `ℓ×m` matrix.
    pub fn a1(&self) -> &[f32] {
        &self.store.get(self.f1.w).data
    }

    pub fn b1(&self) -> &[f32] {
        &self.store.get(self.f1.b).data
    }

    /// Architecture descriptor stored alongside the weights.
    pub fn meta(&self) -> Tensor {
        let g = self.geometry;
        let kind_code = TransformKind::ALL.iter().position(|&k| k == self.transform).unwrap_or(0);
        let mut v = vec![kind_code as f32, g.channels as f32, g.height as f32, g.width as f32];
        match self.arch {
            Arch::UNet { latent_channels, widths } => {
                v.extend([0.0, latent_channels as f32]);
                v.extend(widths.iter().map(|&w| w as f32));
            }
            Arch::Mlp { latent, hidden, nonlinear } => {
                v.push(1.0);
                v.extend([latent as f32, hidden as f32, if nonlinear { 1.0 } else { 0.0 }]);
            }
        }
        Tensor::from_vec(v)
    }

    /// Rebuilds a surrogate from named tensors (as produced by [`Self::named_tensors`]).
    pub fn from_named_tensors<'a, I>(tensors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a Tensor)>,
    {
        let tensors: Vec<(&str, &Tensor)> = tensors.into_iter().collect();
        let meta = tensors
            .iter()
            .find(|(n, _)| *n == META_TENSOR)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Mismatch(format!("checkpoint has no `{META_TENSOR}` tensor")))?;
        let v: Vec<usize> = meta.data.iter().map(|&x| x as usize).collect();
        if v.len() < 5 || v.len() != if v[4] == 0 { 9 } else { 8 } {
            return Err(Error::Mismatch(format!("`{META_TENSOR}` has a malformed layout ({} entries)", v.len())));
        }
        let transform = *TransformKind::ALL.get(v[0]).ok_or_else(|| Error::Mismatch("unknown transform code".into()))?;
        let geometry = Geometry { channels: v[1], height: v[2], width: v[3] };
        let arch = match v[4] {
            0 => Arch::UNet { latent_channels: v[5], widths: [v[6], v[7], v[8]] },
            1 => Arch::Mlp { latent: v[5], hidden: v[6], nonlinear: v[7] == 1 },
            k => return Err(Error::Mismatch(format!("unknown architecture code {k}"))),
        };
        let mut s = Self::new(transform, geometry, arch, 0)?;
        let mut seen = 0;
        for (name, t) in &tensors {
            if *name == META_TENSOR {
                continue;
            }
            s.store.load(name, &t.dims, &t.data)?;
            seen += 1;
        }
        if seen != s.store.len() {
            return Err(Error::Mismatch(format!("checkpoint has {seen} parameters, model expects {}", s.store.len())));
        }
        Ok(s)
    }

    /// Metadata followed by every parameter, in a stable order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![(String::from(META_TENSOR), self.meta())];
        out.extend(self.store.iter().map(|(n, t)| (String::from(n), Tensor::new(t.dims.clone(), t.data.clone()).unwrap())));
        out
    }

    // ------------------------------------------------------------ tape graph

    /// `F1(θ)` for `θ[B, m]`.
    pub fn f1_var(&self, cx: &mut Ctx, theta: Var) -> Result<Var> {
        self.f1.forward(cx, theta)
    }

    /// `F2(x)` for `x[B, C, H, W]`, returning `[B, ℓ]`.
    pub fn encode_var(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let b = cx.tape.dims(x)[0];
        match &self.layers {
            Layers::UNet { f2, .. } => {
                let z = f2.forward(cx, x)?;
                cx.tape.reshape(z, &[b, self.latent_dim])
            }
            Layers::Mlp { enc, nonlinear, .. } => {
                let flat = cx.tape.reshape(x, &[b, self.geometry.pixels()])?;
                let z = enc.forward(cx, flat)?;
                Ok(if *nonlinear { cx.tape.tanh(z) } else { z })
            }
        }
    }

    /// `H(z)` for `z[B, ℓ]`, returning `[B, C, H, W]`.
    pub fn decode_var(&self, cx: &mut Ctx, z: Var) -> Result<Var> {
        let b = cx.tape.dims(z)[0];
        let Geometry { channels: c, height: h, width: w } = self.geometry;
        match (&self.layers, self.arch) {
            (
                Layers::UNet { stem, gn0, down1, gn1, down2, gn2, up1, gnu1, up0, gnu0, head, .. },
                Arch::UNet { latent_channels: cl, .. },
            ) => {
                let zi = cx.tape.reshape(z, &[b, cl, h, w])?;
                let block = |cx: &mut Ctx, conv: &Conv2d, gn: &GroupNorm, v: Var| -> Result<Var> {
                    let v = conv.forward(cx, v)?;
                    let v = gn.forward(cx, v)?;
                    Ok(cx.tape.relu(v))
                };
                let s0 = block(cx, stem, gn0, zi)?;
                let s1 = block(cx, down1, gn1, s0)?;
                let s2 = block(cx, down2, gn2, s1)?;
                let u1 = cx.tape.upsample2x(s2)?;
                let d1 = cx.tape.concat(u1, s1)?;
                let d1 = block(cx, up1, gnu1, d1)?;
                let u0 = cx.tape.upsample2x(d1)?;
                let d0 = cx.tape.concat(u0, s0)?;
                let d0 = block(cx, up0, gnu0, d0)?;
                let cat = cx.tape.concat(d0, zi)?;
                head.forward(cx, cat)
            }
            (Layers::Mlp { dec_hidden, dec_out, .. }, _) => {
                let mut hdn = z;
                if let Some(l) = dec_hidden {
                    hdn = l.forward(cx, hdn)?;
                    hdn = cx.tape.tanh(hdn);
                }
                let y = dec_out.forward(cx, hdn)?;
                cx.tape.reshape(y, &[b, c, h, w])
            }
            _ => unreachable!("layers always match the architecture"),
        }
    }

    /// `H(F1(θ) + θ′ + F2(x))` on a tape.
    pub fn forward_var(&self, cx: &mut Ctx, theta: Var, x: Var, noise: Option<Var>) -> Result<Var> {
        let p = self.f1_var(cx, theta)?;
        let e = self.encode_var(cx, x)?;
        let mut z = cx.tape.add(p, e)?;
        if let Some(n) = noise {
            z = cx.tape.add(z, n)?;
        }
        self.decode_var(cx, z)
    }

    // ------------------------------------------------------- plain evaluation

    fn check_image(&self, image: &Image) -> Result<()> {
        if !self.geometry.matches(image) {
            return Err(Error::shape(
                "surrogate",
                format!(
                    "image {}x{}x{} vs model {:?}",
                    image.channels, image.height, image.width, self.geometry
                ),
            ));
        }
        Ok(())
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim {
            return Err(Error::shape("surrogate", format!("θ has {} entries, model expects {}", theta.len(), self.param_dim)));
        }
        Ok(())
    }

    /// `F2(x)` as a flat latent vector.
    pub fn encode(&self, image: &Image) -> Result<Vec<f32>> {
        self.check_image(image)?;
        let mut tape = Tape::new();
        let x = tape.constant(image.to_tensor());
        let mut cx = Ctx::new(&mut tape, &self.store, false);
        let z = self.encode_var(&mut cx, x)?;
        Ok(tape.data(z).to_vec())
    }

    /// `F1(θ) = A1 θ + b1`.
    pub fn embed(&self, theta: &[f64]) -> Result<Vec<f32>> {
        self.check_theta(theta)?;
        let (a, b) = (self.a1(), self.b1());
        let m = self.param_dim;
        Ok((0..self.latent_dim)
            .map(|r| {
                let s: f64 = (0..m).map(|j| a[r * m + j] as f64 * theta[j]).sum();
                (s + b[r] as f64) as f32
            })
            .collect())
    }

    /// Decodes `count` latents stored back to back into a `[count, C, H, W]` tensor.
    pub fn decode_tensor(&self, latents: &[f32], count: usize) -> Result<Tensor> {
        if latents.len() != count * self.latent_dim {
            return Err(Error::shape("surrogate", format!("{} latent values for {count} x {}", latents.len(), self.latent_dim)));
        }
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::new(vec![count, self.latent_dim], latents.to_vec())?);
        let mut cx = Ctx::new(&mut tape, &self.store, false);
        let y = self.decode_var(&mut cx, z)?;
        Ok(tape.value(y).clone())
    }

    /// Decodes `count` latents stored back to back.
    pub fn decode_batch(&self, latents: &[f32], count: usize) -> Result<Vec<Image>> {
        let t = self.decode_tensor(latents, count)?;
        Image::unbatch(&t.dims, &t.data)
    }

    /// `τ̂(θ, x)` with optional latent noise `θ′`.
    pub fn evaluate(&self, theta: &[f64], image: &Image, noise: Option<&[f32]>) -> Result<Image> {
        let mut z = self.encode(image)?;
        let p = self.embed(theta)?;
        z.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        if let Some(n) = noise {
            if n.len() != self.latent_dim {
                return Err(Error::shape("surrogate", format!("noise has {} entries, latent has {}", n.len(), self.latent_dim)));
            }
            z.iter_mut().zip(n).for_each(|(a, b)| *a += b);
        }
        Ok(self.decode_batch(&z, 1)?.pop().expect("one image"))
    }

    // --------------------------------------------------------------- training

    /// Fits `τ̂(θ, x) ≈ τ(θ, x)` under mean L1 loss with `θ` uniform on `P`.
    pub fn train(
        &mut self,
        spec: &TransformSpec,
        train: &[Image],
        val: &[Image],
        cfg: &TrainConfig,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<TrainReport> {
        if spec.kind != self.transform {
            return Err(Error::Mismatch(format!("surrogate is for {}, spec is {}", self.transform, spec.kind)));
        }
        if train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        for im in train.iter().chain(val) {
            self.check_image(im)?;
        }
        let val_set = self.fixed_pairs(spec, val, cfg.seed)?;
        let mut r = rng::stream(cfg.seed, 0x7EA1);
        let mut opt = Adam::new(cfg.lr);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            opt.lr = halving_lr(cfg.lr, epoch, cfg.halve_every);
            shuffle(&mut order, &mut r);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let thetas: Vec<Vec<f64>> = chunk.iter().map(|_| uniform_in(&spec.space, &mut r)).collect();
                let mut targets = Vec::with_capacity(chunk.len() * self.geometry.pixels());
                for (&i, th) in chunk.iter().zip(&thetas) {
                    targets.extend_from_slice(&spec.apply(th, &train[i])?.data);
                }
                let images: Vec<&Image> = chunk.iter().map(|&i| &train[i]).collect();
                let loss = self.step(&images, &thetas, &targets, &mut opt)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                total += loss * chunk.len() as f64;
            }
            let train_l1 = total / train.len() as f64;
            let val_l1 = if val_set.0.is_empty() { f64::NAN } else { self.mean_l1(&val_set)? };
            let log = EpochLog { epoch, train_l1, val_l1 };
            on_epoch(&log);
            history.push(log);
        }
        let last = *history.last().expect("at least one epoch");
        Ok(TrainReport { history, train_l1: last.train_l1, val_l1: last.val_l1 })
    }

    fn step(&mut self, images: &[&Image], thetas: &[Vec<f64>], targets: &[f32], opt: &mut Adam) -> Result<f64> {
        self.store.zero_grad();
        let mut tape = Tape::new();
        let x = tape.constant(Image::batch(images)?);
        let th = tape.constant(Tensor::new(
            vec![thetas.len(), self.param_dim],
            thetas.iter().flatten().map(|&v| v as f32).collect(),
        )?);
        let mut cx = Ctx::new(&mut tape, &self.store, true);
        let y = self.forward_var(&mut cx, th, x, None)?;
        let loss = tape.l1_loss(y, targets)?;
        let value = tape.data(loss)[0] as f64;
        if !value.is_finite() {
            return Ok(value);
        }
        tape.backward(loss)?;
        self.store.accumulate_grads(&tape);
        opt.step(&mut self.store)?;
        Ok(value)
    }

    /// Validation pairs with `θ` fixed by the seed so epochs are comparable.
    fn fixed_pairs<'a>(&self, spec: &TransformSpec, val: &'a [Image], seed: u64) -> Result<(Vec<&'a Image>, Vec<Vec<f64>>, Vec<Image>)> {
        let mut r = rng::stream(seed, 0x7A1);
        let mut thetas = Vec::with_capacity(val.len());
        let mut targets = Vec::with_capacity(val.len());
        for im in val {
            let th = uniform_in(&spec.space, &mut r);
            targets.push(spec.apply(&th, im)?);
            thetas.push(th);
        }
        Ok((val.iter().collect(), thetas, targets))
    }

    fn mean_l1(&self, pairs: &(Vec<&Image>, Vec<Vec<f64>>, Vec<Image>)) -> Result<f64> {
        let mut total = 0.0;
        for ((im, th), target) in pairs.0.iter().zip(&pairs.1).zip(&pairs.2) {
            total += self.evaluate(th, im, None)?.mean_abs_diff(target);
        }
        Ok(total / pairs.0.len() as f64)
    }

    /// Mean L1 between surrogate and true kernel on `images` with `θ` drawn
    /// uniformly from `P` (fixed by `seed`).
    pub fn validation_l1(&self, spec: &TransformSpec, images: &[Image], seed: u64) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::Empty("validation set"));
        }
        let pairs = self.fixed_pairs(spec, images, seed)?;
        self.mean_l1(&pairs)
    }

    /// `ε` of the error-correction step: the 99th percentile (nearest rank) of
    /// `‖τ̂(ξ, x) − τ(ξ, x)‖₂` over every `(x, ξ)` pair.
    pub fn measure_epsilon(&self, spec: &TransformSpec, heldout: &[Image], xi_grid: &[Vec<f64>]) -> Result<EpsilonReport> {
        measure_epsilon_with(heldout, xi_grid, |xi, x| Ok((self.evaluate(xi, x, None)?, spec.apply(xi, x)?)))
    }
}

/// Percentile summary of errors produced by `pair(ξ, x) -> (approx, exact)`.
pub fn measure_epsilon_with<F>(heldout: &[Image], xi_grid: &[Vec<f64>], mut pair: F) -> Result<EpsilonReport>
where
    F: FnMut(&[f64], &Image) -> Result<(Image, Image)>,
{
    if heldout.is_empty() {
        return Err(Error::Empty("held-out set"));
    }
    if xi_grid.is_empty() {
        return Err(Error::Empty("parameter grid"));
    }
    let mut errs = Vec::with_capacity(heldout.len() * xi_grid.len());
    for x in heldout {
        for xi in xi_grid {
            let (a, b) = pair(xi, x)?;
            errs.push(a.dist(&b));
        }
    }
    errs.sort_by(|a, b| a.total_cmp(b));
    let n = errs.len();
    let rank = ((0.99 * n as f64).ceil() as usize).clamp(1, n);
    Ok(EpsilonReport {
        epsilon: errs[rank - 1],
        max: errs[n - 1],
        mean: errs.iter().sum::<f64>() / n as f64,
        pairs: n,
    })
}

/// Uniform lattice over a box with `points` values per coordinate.
pub fn grid(space: &[(f64, f64)], points: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = space
        .iter()
        .map(|&(lo, hi)| {
            if points <= 1 || lo == hi {
                vec![0.5 * (lo + hi)]
            } else {
                (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
            }
        })
        .collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out.into_iter().flat_map(|p| axis.iter().map(move |&v| { let mut q = p.clone(); q.push(v); q })).collect();
    }
    out
}

pub fn uniform_in<R: Rng + ?Sized>(space: &[(f64, f64)], r: &mut R) -> Vec<f64> {
    space.iter().map(|&(lo, hi)| if lo == hi { lo } else { r.random_range(lo..=hi) }).collect()
}

pub fn shuffle<T, R: Rng + ?Sized>(v: &mut [T], r: &mut R) {
    for i in (1..v.len()).rev() {
        let j = r.random_range(0..=i);
        v.swap(i, j);
    }
}

/// `θ′ ~ N(0, σ² I_ℓ)` written into `out`.
pub fn latent_noise<R: Rng + ?Sized>(sigma: f64, r: &mut R, out: &mut [f32]) {
    out.iter_mut().for_each(|v| *v = (sigma * r.sample::<f64, _>(StandardNormal)) as f32);
}

