//! Base classifiers `f` and their training with smoothing-noise augmentation.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{halving_lr, Adam, Conv2d, Ctx, Dense, ParamStore, Tape, Tensor, Var};
use crate::rng;
use crate::smoothing::SmoothingDistribution;
use crate::surrogate::{latent_noise, shuffle, Geometry, Surrogate};
use crate::transforms::TransformSpec;

/// Images per tape when classifying large batches.
pub const PREDICT_CHUNK: usize = 256;

/// A classifier whose logits can be recorded on a tape (so attacks can
/// differentiate through it).
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;

    /// Logits `[B, K]` for images `[B, C, H, W]`.
    fn logits(&self, tape: &mut Tape, x: Var) -> Result<Var>;

    /// Arg-max classes; ties go to the lowest index.
    fn predict(&self, images: &[Image]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(PREDICT_CHUNK) {
            let refs: Vec<&Image> = chunk.iter().collect();
            out.extend(self.predict_tensor(Image::batch(&refs)?)?);
        }
        Ok(out)
    }

    /// Arg-max classes for an already batched tensor `[B, C, H, W]`.
    fn predict_tensor(&self, batch: Tensor) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch);
        let l = self.logits(&mut tape, x)?;
        Ok(argmax_rows(tape.data(l), self.num_classes()))
    }
}

pub fn argmax_rows(logits: &[f32], k: usize) -> Vec<usize> {
    logits
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Always predicts one class.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier {
    pub class: usize,
    pub classes: usize,
}

impl Classifier for ConstantClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let b = tape.dims(x)[0];
        let mut data = vec![0.0; b * self.classes];
        data.chunks_mut(self.classes).for_each(|row| row[self.class] = 1.0);
        Ok(tape.constant(Tensor::new(vec![b, self.classes], data)?))
    }
}

/// `logits = W vec(x) + b` with fixed weights.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    /// Row-major `K × n`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Classifier for LinearClassifier {
    fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn logits(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let k = self.bias.len();
        let b = tape.dims(x)[0];
        let n = tape.value(x).numel() / b.max(1);
        if self.weight.len() != k * n {
            return Err(Error::shape("linear classifier", format!("weights {} vs {k}x{n}", self.weight.len())));
        }
        let flat = tape.reshape(x, &[b, n])?;
        let w = tape.constant(Tensor::new(vec![k, n], self.weight.clone())?);
        let bias = tape.constant(Tensor::new(vec![k], self.bias.clone())?);
        tape.dense(flat, w, Some(bias))
    }
}

/// Two stride-2 conv layers with ReLU and a dense head.
#[derive(Debug, Clone)]
pub struct CnnClassifier {
    pub geometry: Geometry,
    pub classes: usize,
    pub widths: [usize; 2],
    pub store: ParamStore,
    conv1: Conv2d,
    conv2: Conv2d,
    head: Dense,
}

impl CnnClassifier {
    pub const DEFAULT_WIDTHS: [usize; 2] = [8, 16];

    pub fn new(geometry: Geometry, classes: usize, widths: [usize; 2], seed: u64) -> Result<Self> {
        if classes < 2 || widths.contains(&0) {
            return Err(Error::invalid("classifier needs at least 2 classes and positive widths"));
        }
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, 0xC1A5);
        let conv1 = Conv2d::new(&mut store, "conv1", geometry.channels, widths[0], 3, 2, 1, &mut r)?;
        let conv2 = Conv2d::new(&mut store, "conv2", widths[0], widths[1], 3, 2, 1, &mut r)?;
        let (h, w) = (out_side(out_side(geometry.height)), out_side(out_side(geometry.width)));
        let head = Dense::new(&mut store, "head", widths[1] * h * w, classes, &mut r)?;
        Ok(Self { geometry, classes, widths, store, conv1, conv2, head })
    }

    /// Architecture descriptor `[C, H, W, K, w1, w2]`.
    pub fn meta(&self) -> Tensor {
        let g = self.geometry;
        Tensor::from_vec(
            [g.channels, g.height, g.width, self.classes, self.widths[0], self.widths[1]].iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn named_tensors(&self) -> Vec<(alloc::string::String, Tensor)> {
        let mut out = vec![(alloc::string::String::from(crate::surrogate::META_TENSOR), self.meta())];
        out.extend(
            self.store
                .iter()
                .map(|(n, t)| (alloc::string::String::from(n), Tensor::new(t.dims.clone(), t.data.clone()).unwrap())),
        );
        out
    }

    pub fn from_named_tensors<'a, I>(tensors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a Tensor)>,
    {
        let tensors: Vec<(&str, &Tensor)> = tensors.into_iter().collect();
        let meta = tensors
            .iter()
            .find(|(n, _)| *n == crate::surrogate::META_TENSOR)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Mismatch("checkpoint has no architecture tensor".into()))?;
        if meta.data.len() != 6 {
            return Err(Error::Mismatch(format!("classifier descriptor has {} entries, expected 6", meta.data.len())));
        }
        let v: Vec<usize> = meta.data.iter().map(|&x| x as usize).collect();
        let geometry = Geometry { channels: v[0], height: v[1], width: v[2] };
        let mut c = Self::new(geometry, v[3], [v[4], v[5]], 0)?;
        let mut seen = 0;
        for (name, t) in &tensors {
            if *name != crate::surrogate::META_TENSOR {
                c.store.load(name, &t.dims, &t.data)?;
                seen += 1;
            }
        }
        if seen != c.store.len() {
            return Err(Error::Mismatch(format!("checkpoint has {seen} parameters, model expects {}", c.store.len())));
        }
        Ok(c)
    }

    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let b = cx.tape.dims(x)[0];
        let h = self.conv1.forward(cx, x)?;
        let h = cx.tape.relu(h);
        let h = self.conv2.forward(cx, h)?;
        let h = cx.tape.relu(h);
        let n = cx.tape.value(h).numel() / b;
        let h = cx.tape.reshape(h, &[b, n])?;
        self.head.forward(cx, h)
    }

    /// Cross-entropy training. Each batch is augmented per `augment`.
    pub fn train(
        &mut self,
        images: &[Image],
        labels: &[usize],
        cfg: &ClassifierTrainConfig,
        augment: &Augment,
        mut on_epoch: impl FnMut(usize, f64, f64),
    ) -> Result<()> {
        if images.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if images.len() != labels.len() {
            return Err(Error::Mismatch(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        let mut r = rng::stream(cfg.seed, 0xC7A1);
        let mut opt = Adam::new(cfg.lr);
        let mut order: Vec<usize> = (0..images.len()).collect();
        for epoch in 0..cfg.epochs {
            opt.lr = halving_lr(cfg.lr, epoch, cfg.halve_every);
            shuffle(&mut order, &mut r);
            let (mut total, mut correct) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<Image> =
                    chunk.iter().map(|&i| augment.apply(&images[i], &mut r)).collect::<Result<_>>()?;
                let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                self.store.zero_grad();
                let mut tape = Tape::new();
                let refs: Vec<&Image> = batch.iter().collect();
                let x = tape.constant(Image::batch(&refs)?);
                let mut cx = Ctx::new(&mut tape, &self.store, true);
                let logits = self.forward(&mut cx, x)?;
                let pred = argmax_rows(tape.data(logits), self.classes);
                correct += pred.iter().zip(&ys).filter(|(a, b)| a == b).count();
                let loss = tape.cross_entropy(logits, &ys)?;
                let value = tape.data(loss)[0] as f64;
                if !value.is_finite() {
                    return Err(Error::Diverged { epoch, loss: value });
                }
                total += value * chunk.len() as f64;
                tape.backward(loss)?;
                self.store.accumulate_grads(&tape);
                opt.step(&mut self.store)?;
            }
            on_epoch(epoch, total / images.len() as f64, correct as f64 / images.len() as f64);
        }
        Ok(())
    }
}

fn out_side(n: usize) -> usize {
    (n + 2 - 3) / 2 + 1
}

impl Classifier for CnnClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut cx = Ctx::new(tape, &self.store, false);
        self.forward(&mut cx, x)
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn logits(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        (**self).logits(tape, x)
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub halve_every: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 32, lr: 1e-3, halve_every: 50, seed: 0 }
    }
}

/// Training-time augmentation matching the smoothing used at certification.
pub enum Augment<'a> {
    None,
    /// `τ(θ, x)` with `θ ~ g(σ1)` through the true kernel.
    Kernel { spec: &'a TransformSpec, noise: SmoothingDistribution },
    /// `H(F1(θ) + θ′ + F2(x))` with `θ ~ g(σ1)`, `θ′ ~ N(0, σ2² I)`.
    Surrogate { model: &'a Surrogate, noise: SmoothingDistribution, sigma2: f64 },
}

impl Augment<'_> {
    pub fn apply<R: rand::Rng + ?Sized>(&self, image: &Image, r: &mut R) -> Result<Image> {
        match self {
            Augment::None => Ok(image.clone()),
            Augment::Kernel { spec, noise } => spec.apply(&noise.sample(r), image),
            Augment::Surrogate { model, noise, sigma2 } => {
                let mut t = vec![0.0f32; model.latent_dim()];
                latent_noise(*sigma2, r, &mut t);
                model.evaluate(&noise.sample(r), image, Some(&t))
            }
        }
    }
}

/// Fraction of `images` whose prediction equals the label.
pub fn accuracy<C: Classifier + ?Sized>(classifier: &C, images: &[Image], labels: &[usize]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let pred = classifier.predict(images)?;
    Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / images.len() as f64)
}
