//! Monte-Carlo certification of the smoothed classifier.
//!
//! Two paths. The resolvable path smooths through the true kernel
//! `τ(θ, x)` and divides the `∫1/Φ` radius by the closed-form `M*` of the
//! family. The surrogate path smooths `H(F1(θ) + θ′ + F2(x))` with Gaussian
//! `θ` and `θ′` and divides `Ψ(pA) − Ψ(pB)` by twice the Jacobian-residual
//! `M*`. Both shrink the radius by `1 − Â·ε` for surrogate error.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::Rng;

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::jacobian::{estimate_m_star, surrogate_norms, MStarConfig, PowerConfig};
use crate::nn::Tensor;
use crate::rng;
use crate::smoothing::{clopper_pearson_lower, NoiseKind, Phi, SmoothingDistribution};
use crate::special::normal_quantile;
use crate::surrogate::{grid, latent_noise, Surrogate};
use crate::transforms::TransformSpec;

/// Monte-Carlo draws per classifier batch. Each chunk owns an RNG stream,
/// so counts do not depend on how chunks are scheduled.
pub const SAMPLE_CHUNK: usize = 250;

/// Grid density for the closed-form `M*` of resolvable families.
pub const RESOLVABLE_GRID: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    Resolvable,
    Surrogate,
}

impl Path {
    pub fn name(self) -> &'static str {
        match self {
            Path::Resolvable => "resolvable",
            Path::Surrogate => "surrogate",
        }
    }
}

impl core::str::FromStr for Path {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resolvable" => Ok(Path::Resolvable),
            "surrogate" => Ok(Path::Surrogate),
            _ => Err(Error::invalid(format!("unknown certification path `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyConfig {
    pub path: Path,
    /// Transformation noise `σ1`.
    pub sigma1: f64,
    /// Augmented latent noise `σ2` (surrogate path only).
    pub sigma2: f64,
    /// Smoothing family for `θ` on the resolvable path. The surrogate path
    /// always uses Gaussian noise.
    pub noise: NoiseKind,
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    /// Measured surrogate error `ε`.
    pub epsilon: f64,
    /// Error-ratio bound `Â`.
    pub a_hat: f64,
    pub grid_points: usize,
    pub safety_factor: f64,
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            path: Path::Resolvable,
            sigma1: 0.5,
            sigma2: 0.25,
            noise: NoiseKind::Gaussian,
            n0: 100,
            n: 10_000,
            alpha: 0.001,
            epsilon: 0.0,
            a_hat: 0.0,
            grid_points: 20,
            safety_factor: 1.05,
            seed: 0,
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma1.is_finite()) {
            return Err(Error::invalid(format!("sigma1 must be positive, got {}", self.sigma1)));
        }
        if self.path == Path::Surrogate && !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::invalid(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if self.n0 == 0 || self.n0 >= self.n {
            return Err(Error::invalid(format!("need 0 < n0 < n, got n0={}, n={}", self.n0, self.n)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.epsilon >= 0.0 && self.a_hat >= 0.0) {
            return Err(Error::invalid("epsilon and A_hat must be nonnegative"));
        }
        Ok(())
    }

    /// Distribution of `θ` for this path.
    pub fn theta_noise(&self, dim: usize) -> Result<SmoothingDistribution> {
        let kind = match self.path {
            Path::Resolvable => self.noise,
            Path::Surrogate => NoiseKind::Gaussian,
        };
        SmoothingDistribution::new(kind, self.sigma1, dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificationRecord {
    pub sample_id: usize,
    pub label: usize,
    pub prediction: usize,
    pub p_a_lower: f64,
    pub m_star: f64,
    pub radius: f64,
    pub radius_corrected: f64,
    pub abstained: bool,
    pub seconds: f64,
}

impl CertificationRecord {
    pub fn certified_correct(&self, r: f64) -> bool {
        !self.abstained && self.prediction == self.label && self.radius_corrected >= r
    }
}

/// `R_r = max(0, R (1 − Â ε))`.
pub fn corrected_radius(radius: f64, a_hat: f64, epsilon: f64) -> f64 {
    (radius * (1.0 - a_hat * epsilon)).max(0.0)
}

/// Surrogate-path radius `(Ψ(pA) − Ψ(pB)) / (2 M*)`.
pub fn surrogate_radius(p_a: f64, p_b: f64, m_star: f64) -> Result<f64> {
    Ok((normal_quantile(p_a)? - normal_quantile(p_b)?) / (2.0 * m_star))
}

/// Resolvable-path radius `∫_{pB}^{pA} 1/Φ / (2 M*)`.
pub fn resolvable_radius(phi: &Phi, p_a: f64, p_b: f64, m_star: f64) -> Result<f64> {
    Ok(phi.radius_integral(p_a, p_b)? / (2.0 * m_star))
}

/// Everything needed to sample the smoothed classifier `G` at one image.
pub struct Smoother<'a, C: Classifier + ?Sized> {
    pub classifier: &'a C,
    pub spec: &'a TransformSpec,
    pub surrogate: Option<&'a Surrogate>,
    pub config: &'a CertifyConfig,
}

impl<'a, C: Classifier + ?Sized> Smoother<'a, C> {
    pub fn new(
        classifier: &'a C,
        spec: &'a TransformSpec,
        surrogate: Option<&'a Surrogate>,
        config: &'a CertifyConfig,
    ) -> Result<Self> {
        config.validate()?;
        match (config.path, surrogate) {
            (Path::Resolvable, _) if !spec.resolvable() => {
                return Err(Error::NotResolvable(spec.kind.name()));
            }
            (Path::Surrogate, None) => return Err(Error::invalid("surrogate path needs a surrogate model")),
            (Path::Surrogate, Some(s)) if s.transform != spec.kind => {
                return Err(Error::Mismatch(format!("surrogate approximates {}, spec is {}", s.transform, spec.kind)));
            }
            _ => {}
        }
        Ok(Self { classifier, spec, surrogate, config })
    }

    /// One chunk of smoothed predictions from stream `(seed, stream)`.
    fn chunk_predictions(&self, image: &Image, encoded: Option<&[f32]>, count: usize, seed: u64, stream: u64) -> Result<Vec<usize>> {
        let mut r = rng::stream(seed, stream);
        let dist = self.config.theta_noise(self.spec.param_dim())?;
        let mut theta = vec![0.0; self.spec.param_dim()];
        match (self.config.path, self.surrogate) {
            (Path::Surrogate, Some(model)) => {
                let l = model.latent_dim();
                let base = encoded.ok_or_else(|| Error::invalid("missing encoded image"))?;
                let mut latents = vec![0.0f32; count * l];
                let mut noise = vec![0.0f32; l];
                for z in latents.chunks_mut(l) {
                    dist.sample_into(&mut r, &mut theta);
                    latent_noise(self.config.sigma2, &mut r, &mut noise);
                    let p = model.embed(&theta)?;
                    for i in 0..l {
                        z[i] = base[i] + p[i] + noise[i];
                    }
                }
                let decoded = model.decode_tensor(&latents, count)?;
                self.classifier.predict_tensor(decoded)
            }
            _ => {
                let mut data = Vec::with_capacity(count * image.len());
                for _ in 0..count {
                    dist.sample_into(&mut r, &mut theta);
                    data.extend_from_slice(&self.spec.apply(&theta, image)?.data);
                }
                let t = Tensor::new(vec![count, image.channels, image.height, image.width], data)?;
                self.classifier.predict_tensor(t)
            }
        }
    }

    fn encoded(&self, image: &Image) -> Result<Option<Vec<f32>>> {
        match (self.config.path, self.surrogate) {
            (Path::Surrogate, Some(m)) => Ok(Some(m.encode(image)?)),
            _ => Ok(None),
        }
    }

    /// Class histogram of `count` draws of the smoothed pipeline at `image`.
    /// `phase` separates independent uses (selection, estimation, search).
    pub fn counts(&self, image: &Image, count: u64, seed: u64, phase: u64) -> Result<Vec<u64>> {
        let mut hist = vec![0u64; self.classifier.num_classes()];
        self.counts_until(image, count, seed, phase, |_, _| false, &mut hist)?;
        Ok(hist)
    }

    /// Like [`counts`](Self::counts) but stops after any chunk for which
    /// `stop(hist, drawn)` holds. Returns the number of draws taken.
    pub fn counts_until<F>(&self, image: &Image, count: u64, seed: u64, phase: u64, mut stop: F, hist: &mut [u64]) -> Result<u64>
    where
        F: FnMut(&[u64], u64) -> bool,
    {
        if count == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let encoded = self.encoded(image)?;
        let mut drawn = 0u64;
        let mut chunk = 0u64;
        while drawn < count {
            let size = (count - drawn).min(SAMPLE_CHUNK as u64) as usize;
            let preds = self.chunk_predictions(image, encoded.as_deref(), size, seed, (phase << 32) | chunk)?;
            preds.iter().for_each(|&p| hist[p] += 1);
            drawn += size as u64;
            chunk += 1;
            if stop(hist, drawn) {
                break;
            }
        }
        Ok(drawn)
    }
}

pub fn argmax_count(hist: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in hist.iter().enumerate() {
        if c > hist[best] {
            best = i;
        }
    }
    best
}

const PHASE_SELECT: u64 = 1;
const PHASE_ESTIMATE: u64 = 2;
const PHASE_SEARCH: u64 = 3;

/// Smoothed prediction histogram; `count` draws with a seed-derived stream.
pub fn smooth_predict<C: Classifier + ?Sized>(
    classifier: &C,
    spec: &TransformSpec,
    surrogate: Option<&Surrogate>,
    image: &Image,
    config: &CertifyConfig,
    count: u64,
) -> Result<Vec<u64>> {
    Smoother::new(classifier, spec, surrogate, config)?.counts(image, count, config.seed, PHASE_ESTIMATE)
}

/// `M*` for the configured path: the closed form of a resolvable family or the
/// per-image Jacobian-residual estimate of the surrogate.
pub fn m_star_for(spec: &TransformSpec, surrogate: Option<&Surrogate>, image: &Image, config: &CertifyConfig) -> Result<f64> {
    match config.path {
        Path::Resolvable => spec.resolvable_m_star(RESOLVABLE_GRID),
        Path::Surrogate => {
            let model = surrogate.ok_or_else(|| Error::invalid("surrogate path needs a surrogate model"))?;
            let cfg = MStarConfig {
                safety_factor: config.safety_factor,
                power: PowerConfig { seed: config.seed, ..PowerConfig::default() },
            };
            let g = grid(&spec.space, config.grid_points);
            Ok(estimate_m_star(model, image, config.sigma1, config.sigma2, &g, &cfg)?.value)
        }
    }
}

/// Per-sample seed so every record is reproducible on its own.
pub fn sample_seed(seed: u64, sample_id: usize) -> u64 {
    rng::derive_seed(seed, sample_id as u64)
}

/// Selection with `n0` draws, estimation with `n` fresh draws, Clopper-Pearson
/// lower bound, abstention at `pA ≤ 1/2`, radius and error correction.
/// `seconds` is left at zero for the caller to fill in.
pub fn certify_sample<C: Classifier + ?Sized>(
    smoother: &Smoother<C>,
    sample_id: usize,
    image: &Image,
    label: usize,
    m_star: f64,
) -> Result<CertificationRecord> {
    let cfg = smoother.config;
    if !(m_star > 0.0 && m_star.is_finite()) {
        return Err(Error::invalid(format!("M* must be positive, got {m_star}")));
    }
    let seed = sample_seed(cfg.seed, sample_id);
    let select = smoother.counts(image, cfg.n0, seed, PHASE_SELECT)?;
    let prediction = argmax_count(&select);
    let est = smoother.counts(image, cfg.n, seed, PHASE_ESTIMATE)?;
    let p_a_lower = clopper_pearson_lower(est[prediction], cfg.n, cfg.alpha)?;
    let abstained = p_a_lower <= 0.5;
    let radius = if abstained {
        0.0
    } else {
        let p_b = 1.0 - p_a_lower;
        match cfg.path {
            Path::Resolvable => {
                let phi = Phi::new(cfg.theta_noise(smoother.spec.param_dim())?, cfg.seed);
                resolvable_radius(&phi, p_a_lower, p_b, m_star)?
            }
            Path::Surrogate => surrogate_radius(p_a_lower, p_b, m_star)?,
        }
    };
    let epsilon_applies = cfg.path == Path::Surrogate;
    let radius_corrected = if epsilon_applies { corrected_radius(radius, cfg.a_hat, cfg.epsilon) } else { radius };
    Ok(CertificationRecord {
        sample_id,
        label,
        prediction,
        p_a_lower,
        m_star,
        radius,
        radius_corrected,
        abstained,
        seconds: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRatio {
    pub a_hat: f64,
    pub multiplier: f64,
    pub max_f1: f64,
    pub max_f2: f64,
    pub max_h: f64,
}

/// `Â = multiplier × max(‖F1′‖, ‖F2′(y_ξ)‖, ‖H′(z_ξ)‖)` over a calibration set
/// and parameter grid.
pub fn estimate_error_ratio_a(
    model: &Surrogate,
    calibration: &[Image],
    xi_grid: &[Vec<f64>],
    multiplier: f64,
    power: &PowerConfig,
) -> Result<ErrorRatio> {
    if calibration.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    if xi_grid.is_empty() {
        return Err(Error::Empty("parameter grid"));
    }
    let (mut f1, mut f2, mut h) = (0.0f64, 0.0f64, 0.0f64);
    for im in calibration {
        for xi in xi_grid {
            let n = surrogate_norms(model, xi, im, power)?;
            f1 = f1.max(n.f1);
            f2 = f2.max(n.f2);
            h = h.max(n.h);
        }
    }
    Ok(ErrorRatio { a_hat: multiplier * f1.max(f2).max(h), multiplier, max_f1: f1, max_f2: f2, max_h: h })
}

/// Certified accuracy at each radius threshold: the fraction of records that
/// are correct, not abstained and have `R_r ≥ r`.
pub fn certified_accuracy_report(records: &[CertificationRecord], radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    if records.is_empty() {
        return Err(Error::Empty("certification records"));
    }
    Ok(radii
        .iter()
        .map(|&r| (r, records.iter().filter(|c| c.certified_correct(r)).count() as f64 / records.len() as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoundnessReport {
    pub points: usize,
    /// Parameters where the smoothed top class differed from the certified one.
    pub flips: Vec<Vec<f64>>,
}

/// Candidate parameters inside `‖ξ‖₂ ≤ radius`, clipped to the box `P`: a
/// deterministic lattice (segment in 1-D, rings in higher dimensions) plus
/// uniform draws from the ball, `points` in total.
pub fn search_points(spec: &TransformSpec, radius: f64, points: usize, seed: u64) -> Vec<Vec<f64>> {
    let m = spec.param_dim();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(points);
    let lattice = points / 2;
    if m == 1 {
        for i in 0..lattice {
            let t = if lattice > 1 { -1.0 + 2.0 * i as f64 / (lattice - 1) as f64 } else { 0.0 };
            out.push(vec![t * radius]);
        }
    } else {
        let rings = 4usize;
        let per = (lattice / rings).max(1);
        for k in 1..=rings {
            let rr = radius * k as f64 / rings as f64;
            for j in 0..per {
                let a = 2.0 * core::f64::consts::PI * j as f64 / per as f64;
                let mut v = vec![0.0; m];
                v[0] = rr * a.cos();
                v[1] = rr * a.sin();
                out.push(v);
            }
        }
    }
    let mut r = rng::stream(seed, 0x5EA);
    while out.len() < points {
        let mut v: Vec<f64> = (0..m).map(|_| r.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let rad = radius * r.random::<f64>().powf(1.0 / m as f64);
        v.iter_mut().for_each(|x| *x *= rad / n);
        out.push(v);
    }
    for v in &mut out {
        for (x, &(lo, hi)) in v.iter_mut().zip(&spec.space) {
            *x = x.clamp(lo, hi);
        }
    }
    out
}

/// Evaluates the smoothed classifier with `4n` draws at `τ(ξ, x)` for each
/// candidate `ξ` and reports every top-class change relative to the record.
/// Sampling at a point stops as soon as the outcome is decided: the certified
/// class already holds a strict majority of all `4n` draws, or another class
/// can no longer be overtaken.
pub fn soundness_search<C: Classifier + ?Sized>(
    smoother: &Smoother<C>,
    record: &CertificationRecord,
    image: &Image,
    points: usize,
) -> Result<SoundnessReport> {
    let cfg = smoother.config;
    if record.abstained || record.radius_corrected <= 0.0 {
        return Ok(SoundnessReport { points: 0, flips: Vec::new() });
    }
    let total = 4 * cfg.n;
    let seed = sample_seed(cfg.seed, record.sample_id);
    let ya = record.prediction;
    let candidates = search_points(smoother.spec, record.radius_corrected, points, seed);
    let mut flips = Vec::new();
    for (i, xi) in candidates.iter().enumerate() {
        let moved = smoother.spec.apply(xi, image)?;
        let mut hist = vec![0u64; smoother.classifier.num_classes()];
        let stop = |h: &[u64], drawn: u64| {
            let a = h[ya];
            let other = h.iter().enumerate().filter(|(k, _)| *k != ya).map(|(_, &c)| c).max().unwrap_or(0);
            2 * a > total || other > a + (total - drawn)
        };
        smoother.counts_until(&moved, total, seed, (PHASE_SEARCH << 16) | i as u64, stop, &mut hist)?;
        let a = hist[ya];
        if hist.iter().enumerate().any(|(k, &c)| k != ya && c >= a) {
            flips.push(xi.clone());
        }
    }
    Ok(SoundnessReport { points: candidates.len(), flips })
}
