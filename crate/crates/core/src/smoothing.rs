//! Smoothing distributions `g ∝ exp(−ψ(θ))`, the `Φ` function, certified
//! radius integrals and binomial confidence bounds.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;
use crate::rng;
use crate::special::{beta_quantile, normal_pdf, normal_quantile};

/// Default sample count behind a Monte-Carlo `Φ` table.
pub const PHI_MC_SAMPLES: usize = 200_000;

/// Relative tolerance of the radius quadrature.
pub const RADIUS_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    /// `ψ(θ) = ‖θ‖²/(2σ²)`.
    Gaussian,
    /// The Gaussian restricted to the nonnegative orthant: `|N(0, σ²)|` per coordinate.
    FoldedGaussian,
    /// `ψ(θ) = ‖θ‖/σ`.
    Exponential,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::FoldedGaussian => "folded-gaussian",
            NoiseKind::Exponential => "exponential",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "folded-gaussian" => Ok(NoiseKind::FoldedGaussian),
            "exponential" => Ok(NoiseKind::Exponential),
            "uniform" => Err(Error::invalid("uniform smoothing has Φ ≡ 0 and is not supported")),
            _ => Err(Error::invalid(format!("unknown smoothing distribution `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingDistribution {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub dim: usize,
}

impl SmoothingDistribution {
    pub fn new(kind: NoiseKind, sigma: f64, dim: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        if dim == 0 {
            return Err(Error::invalid("smoothing dimension must be at least 1"));
        }
        Ok(Self { kind, sigma, dim })
    }

    pub fn gaussian(sigma: f64, dim: usize) -> Result<Self> {
        Self::new(NoiseKind::Gaussian, sigma, dim)
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.kind {
            NoiseKind::Gaussian => out.iter_mut().for_each(|v| *v = self.sigma * rng.sample::<f64, _>(StandardNormal)),
            NoiseKind::FoldedGaussian => {
                out.iter_mut().for_each(|v| *v = (self.sigma * rng.sample::<f64, _>(StandardNormal)).abs())
            }
            NoiseKind::Exponential => {
                // density ∝ exp(−r/σ) r^{m−1} in the radius, uniform direction
                let r = Gamma::new(self.dim as f64, self.sigma).expect("validated parameters").sample(rng);
                let mut n2 = 0.0;
                for v in out.iter_mut() {
                    *v = rng.sample(StandardNormal);
                    n2 += *v * *v;
                }
                let n = n2.sqrt();
                out.iter_mut().for_each(|v| *v *= r / n);
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut v = alloc::vec![0.0; self.dim];
        self.sample_into(rng, &mut v);
        v
    }

    /// `count` i.i.d. draws from stream 0 of `seed`.
    pub fn sample_n(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, 0);
        (0..count).map(|_| self.sample(&mut r)).collect()
    }

    /// Analytic per-coordinate mean and variance.
    pub fn coordinate_moments(&self) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        match self.kind {
            NoiseKind::Gaussian => (0.0, s2),
            NoiseKind::FoldedGaussian => {
                let m = self.sigma * (2.0 / core::f64::consts::PI).sqrt();
                (m, s2 - m * m)
            }
            // E‖θ‖² = σ² m (m + 1), split evenly over coordinates
            NoiseKind::Exponential => (0.0, s2 * (self.dim as f64 + 1.0)),
        }
    }

    /// `γ_u = ⟨u, ∇ψ(δ)⟩` with `u = e₁`.
    fn gamma_e1<R: Rng + ?Sized>(&self, rng: &mut R, buf: &mut [f64]) -> f64 {
        self.sample_into(rng, buf);
        match self.kind {
            NoiseKind::Gaussian | NoiseKind::FoldedGaussian => buf[0] / (self.sigma * self.sigma),
            NoiseKind::Exponential => {
                let n = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
                buf[0] / (self.sigma * n)
            }
        }
    }
}

#[derive(Debug, Clone)]
enum PhiMode {
    Analytic,
    /// γ samples sorted descending with prefix sums of `γ/N`.
    MonteCarlo { prefix: Arc<Vec<f64>> },
}

/// `Φ(p) = max_u E[γ_u 1{γ_u > φ_u⁻¹(p)}]` for one distribution.
///
/// The Monte-Carlo mode integrates the upper quantile function of `γ_u`,
/// `Φ(p) = ∫₀ᵖ q(1 − s) ds`, which agrees with the indicator form whenever
/// `γ_u` has no atoms and stays positive when it does (the one-dimensional
/// exponential kind, where `γ_u = ±1/σ`).
#[derive(Debug, Clone)]
pub struct Phi {
    pub dist: SmoothingDistribution,
    mode: PhiMode,
}

impl Phi {
    /// Closed form where one exists (Gaussian, folded Gaussian), otherwise
    /// a Monte-Carlo table with [`PHI_MC_SAMPLES`] draws.
    pub fn new(dist: SmoothingDistribution, seed: u64) -> Self {
        match dist.kind {
            NoiseKind::Gaussian | NoiseKind::FoldedGaussian => Self { dist, mode: PhiMode::Analytic },
            NoiseKind::Exponential => Self::monte_carlo(dist, PHI_MC_SAMPLES, seed),
        }
    }

    pub fn monte_carlo(dist: SmoothingDistribution, samples: usize, seed: u64) -> Self {
        let samples = samples.max(2);
        let mut r = rng::stream(seed, 0x5F1);
        let mut buf = alloc::vec![0.0; dist.dim];
        let mut g: Vec<f64> = (0..samples).map(|_| dist.gamma_e1(&mut r, &mut buf)).collect();
        if dist.kind != NoiseKind::FoldedGaussian {
            // E[γ_u] = 0 when the density vanishes at the edge of its support;
            // centering removes the sampling error of the total.
            let mean = g.iter().sum::<f64>() / samples as f64;
            g.iter_mut().for_each(|v| *v -= mean);
        }
        g.sort_by(|a, b| b.total_cmp(a));
        let mut prefix = Vec::with_capacity(samples + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for v in &g {
            acc += v / samples as f64;
            prefix.push(acc);
        }
        Self { dist, mode: PhiMode::MonteCarlo { prefix: Arc::new(prefix) } }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.mode, PhiMode::Analytic)
    }

    pub fn eval(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("Φ is defined on (0, 1), got {p}")));
        }
        let s = self.dist.sigma;
        Ok(match (&self.mode, self.dist.kind) {
            (PhiMode::Analytic, NoiseKind::FoldedGaussian) => 2.0 * normal_pdf(normal_quantile(1.0 - p / 2.0)?) / s,
            (PhiMode::Analytic, _) => normal_pdf(normal_quantile(p)?) / s,
            (PhiMode::MonteCarlo { prefix }, _) => {
                let n = prefix.len() - 1;
                let pos = p * n as f64;
                let i = (pos.floor() as usize).min(n - 1);
                let f = pos - i as f64;
                prefix[i] + f * (prefix[i + 1] - prefix[i])
            }
        })
    }

    /// `∫_{pB}^{pA} 1/Φ(p) dp`. Gaussian uses `σ(Ψ(pA) − Ψ(pB))`; every other
    /// case integrates numerically.
    pub fn radius_integral(&self, p_a: f64, p_b: f64) -> Result<f64> {
        check_interval(p_a, p_b)?;
        if p_a == p_b {
            return Ok(0.0);
        }
        if self.is_analytic() && self.dist.kind == NoiseKind::Gaussian {
            return Ok(self.dist.sigma * (normal_quantile(p_a)? - normal_quantile(p_b)?));
        }
        self.radius_integral_quadrature(p_a, p_b)
    }

    /// Adaptive-Simpson evaluation of the radius integral regardless of mode.
    pub fn radius_integral_quadrature(&self, p_a: f64, p_b: f64) -> Result<f64> {
        check_interval(p_a, p_b)?;
        adaptive_simpson(|p| 1.0 / self.eval(p).unwrap_or(f64::NAN), p_b, p_a, RADIUS_REL_TOL)
    }
}

fn check_interval(p_a: f64, p_b: f64) -> Result<()> {
    if !(p_b > 0.0 && p_a < 1.0) {
        return Err(Error::invalid(format!("probabilities must lie in (0, 1): pA={p_a}, pB={p_b}")));
    }
    if p_a < p_b {
        return Err(Error::invalid(format!("pA={p_a} is below pB={p_b}")));
    }
    Ok(())
}

/// One-sided `1 − α` Clopper-Pearson lower bound on a binomial proportion.
pub fn clopper_pearson_lower(k: u64, n: u64, alpha: f64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::invalid(format!("invalid binomial counts k={k}, n={n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(if k == 0 {
        0.0
    } else if k == n {
        alpha.powf(1.0 / n as f64)
    } else {
        beta_quantile(alpha, k as f64, (n - k + 1) as f64)
    })
}
