//! EoT-PGD over the transformation parameter `ξ`.
//!
//! The gradient flows through the surrogate: the loss is the mean
//! cross-entropy of `f(H(F1(θ_i) + θ′_i + F2(y_ξ)))` over `k` noise draws,
//! with `y_ξ = H(F1(ξ) + F2(x))`. On the resolvable path `θ′ = 0`, so the
//! inner map approximates `τ(θ, τ(ξ, x))`. Success is judged on the smoothed
//! pipeline used for certification, at the true `τ(ξ, x)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use crate::certify::{argmax_count, sample_seed, CertificationRecord, Path, Smoother};
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Ctx, Tape, Tensor};
use crate::rng;
use crate::surrogate::{latent_noise, Surrogate};

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// ℓ2 bound on `ξ`.
    pub budget: f64,
    pub steps: usize,
    /// Defaults to `budget / 10` when `None`.
    pub step_size: Option<f64>,
    pub eot_samples: usize,
    /// Draws of the smoothed classifier used to judge success.
    pub eval_samples: u64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { budget: 1.0, steps: 40, step_size: None, eot_samples: 32, eval_samples: 10_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub sample_id: usize,
    pub budget: f64,
    pub xi_adv: Vec<f64>,
    pub success: bool,
    pub loss_final: f64,
    pub smoothed_prediction: usize,
}

/// Projects onto `‖ξ‖₂ ≤ budget`, then clips to the box. The box contains
/// the origin, so clipping never leaves the ball.
pub fn project(xi: &mut [f64], budget: f64, space: &[(f64, f64)]) {
    let n = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > budget {
        let s = if n > 0.0 { budget / n } else { 0.0 };
        xi.iter_mut().for_each(|v| *v *= s);
    }
    for (v, &(lo, hi)) in xi.iter_mut().zip(space) {
        *v = v.clamp(lo.min(0.0), hi.max(0.0));
    }
}

/// EoT loss and its gradient with respect to `ξ`.
pub fn eot_loss_grad<C: Classifier + ?Sized>(
    classifier: &C,
    model: &Surrogate,
    image: &Image,
    label: usize,
    xi: &[f64],
    thetas: &[Vec<f64>],
    noise: Option<&[f32]>,
) -> Result<(f64, Vec<f64>)> {
    let k = thetas.len();
    let (m, l) = (model.param_dim, model.latent_dim());
    if k == 0 {
        return Err(Error::invalid("EoT needs at least one noise draw"));
    }
    let mut tape = Tape::new();
    let xi_v = tape.input(Tensor::new(vec![1, m], xi.iter().map(|&v| v as f32).collect())?.with_grad());
    let x = tape.constant(image.to_tensor());
    let th = tape.constant(Tensor::new(vec![k, m], thetas.iter().flatten().map(|&v| v as f32).collect())?);
    let ones = tape.constant(Tensor::new(vec![k, 1], vec![1.0; k])?);
    let mut cx = Ctx::new(&mut tape, &model.store, false);
    let y = model.forward_var(&mut cx, xi_v, x, None)?;
    let e = model.encode_var(&mut cx, y)?;
    let col = cx.tape.reshape(e, &[l, 1])?;
    let tiled = cx.tape.dense(ones, col, None)?;
    let p = model.f1_var(&mut cx, th)?;
    let mut z = cx.tape.add(p, tiled)?;
    if let Some(n) = noise {
        let nv = cx.tape.constant(Tensor::new(vec![k, l], n.to_vec())?);
        z = cx.tape.add(z, nv)?;
    }
    let out = model.decode_var(&mut cx, z)?;
    let logits = classifier.logits(&mut tape, out)?;
    let loss = tape.cross_entropy(logits, &vec![label; k])?;
    let value = tape.data(loss)[0] as f64;
    tape.backward(loss)?;
    let grad: Vec<f64> = tape.grad(xi_v).map(|g| g.iter().map(|&v| v as f64).collect()).unwrap_or_else(|| vec![0.0; m]);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("EoT loss {value} or its gradient at ξ={xi:?}")));
    }
    Ok((value, grad))
}

/// Projected ascent on the EoT loss within the budget, then a fresh
/// smoothed evaluation at `τ(ξ_adv, x)`.
pub fn eot_pgd<C: Classifier + ?Sized>(
    smoother: &Smoother<C>,
    model: &Surrogate,
    sample_id: usize,
    image: &Image,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    if !(cfg.budget >= 0.0 && cfg.budget.is_finite()) || cfg.steps == 0 {
        return Err(Error::invalid(format!("attack needs budget ≥ 0 and steps ≥ 1, got {} and {}", cfg.budget, cfg.steps)));
    }
    if model.transform != smoother.spec.kind {
        return Err(Error::Mismatch(format!("surrogate approximates {}, spec is {}", model.transform, smoother.spec.kind)));
    }
    let cert = smoother.config;
    let m = smoother.spec.param_dim();
    let l = model.latent_dim();
    let step = cfg.step_size.unwrap_or(cfg.budget / 10.0);
    let dist = cert.theta_noise(m)?;
    let seed = rng::derive_seed(sample_seed(cfg.seed, sample_id), cfg.budget.to_bits());
    let mut xi = vec![0.0; m];
    let mut loss_final = f64::NAN;
    if cfg.budget > 0.0 {
        for s in 0..cfg.steps {
            let mut r = rng::stream(seed, s as u64);
            let thetas: Vec<Vec<f64>> = (0..cfg.eot_samples).map(|_| dist.sample(&mut r)).collect();
            let noise = (cert.path == Path::Surrogate).then(|| {
                let mut n = vec![0.0f32; cfg.eot_samples * l];
                latent_noise(cert.sigma2, &mut r, &mut n);
                n
            });
            let (loss, grad) = eot_loss_grad(smoother.classifier, model, image, label, &xi, &thetas, noise.as_deref())?;
            loss_final = loss;
            let gn = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gn == 0.0 {
                break;
            }
            xi.iter_mut().zip(&grad).for_each(|(v, g)| *v += step * g / gn);
            project(&mut xi, cfg.budget, &smoother.spec.space);
        }
    }
    let moved = smoother.spec.apply(&xi, image)?;
    let hist = smoother.counts(&moved, cfg.eval_samples, seed, 0xA77)?;
    let pred = argmax_count(&hist);
    Ok(AttackResult { sample_id, budget: cfg.budget, xi_adv: xi, success: pred != label, loss_final, smoothed_prediction: pred })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalReport {
    /// Fraction of samples whose smoothed prediction survived the attack.
    pub empirical: f64,
    /// Fraction certified correct with a positive corrected radius.
    pub certified: f64,
}

impl EmpiricalReport {
    pub fn consistent(&self) -> bool {
        self.empirical >= self.certified
    }
}

/// Matches attack results to records by sample id.
pub fn empirical_robust_accuracy(records: &[CertificationRecord], results: &[AttackResult]) -> Result<EmpiricalReport> {
    if records.is_empty() {
        return Err(Error::Empty("certification records"));
    }
    if records.len() != results.len() {
        return Err(Error::Mismatch(format!("{} records but {} attack results", records.len(), results.len())));
    }
    let mut survived = 0usize;
    for rec in records {
        let res = results
            .iter()
            .find(|a| a.sample_id == rec.sample_id)
            .ok_or_else(|| Error::Mismatch(format!("no attack result for sample {}", rec.sample_id)))?;
        survived += (!res.success) as usize;
    }
    let n = records.len() as f64;
    let certified = records.iter().filter(|r| r.certified_correct(0.0) && r.radius_corrected > 0.0).count() as f64;
    Ok(EmpiricalReport { empirical: survived as f64 / n, certified: certified / n })
}
