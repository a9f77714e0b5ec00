//! The coefficient `M* = max_ξ √(1/σ1² + ‖∂F2(y_ξ)/∂ξ − A1‖²/σ2²)`.
//!
//! The residual operator `K(ξ) = ∂F2(y_ξ)/∂ξ − A1` (an `ℓ×m` matrix with
//! `y_ξ = H(F1(ξ) + F2(x))`) is never materialized by the fast path: its
//! spectral norm comes from power iteration on `KᵀK` using one jvp and one
//! vjp of `r(ξ) = F2(y_ξ) − F1(ξ)` per step. The brute-force oracle builds
//! `K` column by column with finite differences and takes an exact SVD.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::{largest_singular_value, norm};
use crate::nn::{Ctx, Tape, Tensor, Var};
use crate::rng;
use crate::surrogate::Surrogate;

/// Size guard for the brute-force oracle: `m·ℓ` entries.
pub const BRUTE_FORCE_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerConfig {
    pub iterations: usize,
    /// Stop once the relative change of the estimate falls below this.
    pub tolerance: f64,
    /// Starts: one deterministic (uniform direction) plus `restarts − 1` random.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self { iterations: 30, tolerance: 1e-6, restarts: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStarConfig {
    pub safety_factor: f64,
    pub power: PowerConfig,
}

impl Default for MStarConfig {
    fn default() -> Self {
        Self { safety_factor: 1.05, power: PowerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub xi: Vec<f64>,
    pub residual_norm: f64,
    /// `√(1/σ1² + r²/σ2²)` before the safety factor.
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStarEstimate {
    /// Includes the safety factor.
    pub value: f64,
    pub argmax_xi: Vec<f64>,
    pub points: Vec<GridPoint>,
    pub iterations: usize,
    pub safety_factor: f64,
    pub oracle_value: Option<f64>,
}

/// `√(1/σ1² + r²/σ2²)`.
pub fn m_star_term(residual_norm: f64, sigma1: f64, sigma2: f64) -> f64 {
    (1.0 / (sigma1 * sigma1) + residual_norm * residual_norm / (sigma2 * sigma2)).sqrt()
}

fn check_sigmas(sigma1: f64, sigma2: f64) -> Result<()> {
    if !(sigma1 > 0.0 && sigma2 > 0.0 && sigma1.is_finite() && sigma2.is_finite()) {
        return Err(Error::invalid(format!("noise scales must be positive, got σ1={sigma1}, σ2={sigma2}")));
    }
    Ok(())
}

/// Largest singular value of a linear map given by `apply` (`v ↦ Kv`) and
/// `apply_t` (`u ↦ Kᵀu`), by power iteration on `KᵀK` from several starts.
pub fn power_spectral_norm<F, G>(cols: usize, cfg: &PowerConfig, mut apply: F, mut apply_t: G) -> Result<f64>
where
    F: FnMut(&[f32]) -> Result<Vec<f32>>,
    G: FnMut(&[f32]) -> Result<Vec<f32>>,
{
    if cols == 0 {
        return Ok(0.0);
    }
    let mut r = rng::stream(cfg.seed, 0x90E7);
    let mut best: f64 = 0.0;
    for start in 0..cfg.restarts.max(1) {
        let mut v: Vec<f32> = if start == 0 {
            vec![1.0; cols]
        } else {
            (0..cols).map(|_| r.sample::<f32, _>(StandardNormal)).collect()
        };
        scale_to_unit(&mut v);
        let mut sigma = 0.0;
        for _ in 0..cfg.iterations.max(1) {
            let kv = apply(&v)?;
            let s = norm(&kv);
            if !s.is_finite() {
                return Err(Error::NonFinite("power iteration produced a non-finite Jacobian product".into()));
            }
            let converged = (s - sigma).abs() <= cfg.tolerance * s.max(f64::MIN_POSITIVE);
            sigma = s;
            if s == 0.0 || converged {
                break;
            }
            v = apply_t(&kv)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("power iteration produced a non-finite gradient".into()));
            }
            if scale_to_unit(&mut v) == 0.0 {
                break;
            }
        }
        best = best.max(sigma);
    }
    Ok(best)
}

fn scale_to_unit(v: &mut [f32]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    }
    n
}

/// Spectral norm of the Jacobian of `output` with respect to `input` on a
/// recorded tape.
pub fn tape_operator_norm(tape: &Tape, input: Var, output: Var, cfg: &PowerConfig) -> Result<f64> {
    let cols = tape.value(input).numel();
    power_spectral_norm(
        cols,
        cfg,
        |v| tape.jvp(&[(input, v)], output),
        |u| Ok(tape.vjp(output, u, &[input])?.pop().unwrap_or_default()),
    )
}

/// Tape recording `r(ξ) = F2(H(F1(ξ) + F2(x))) − F1(ξ)` with `ξ` as a leaf.
pub struct ResidualTape {
    pub tape: Tape,
    pub xi: Var,
    pub residual: Var,
}

impl ResidualTape {
    pub fn new(model: &Surrogate, xi: &[f64], image: &Image) -> Result<Self> {
        if xi.len() != model.param_dim {
            return Err(Error::shape("jacobian", format!("ξ has {} entries, model expects {}", xi.len(), model.param_dim)));
        }
        if !model.geometry.matches(image) {
            return Err(Error::shape("jacobian", "image does not match the surrogate geometry".into()));
        }
        let mut tape = Tape::new();
        let xi_var = tape.input(Tensor::new(vec![1, xi.len()], xi.iter().map(|&v| v as f32).collect())?.with_grad());
        let x = tape.constant(image.to_tensor());
        let mut cx = Ctx::new(&mut tape, &model.store, false);
        let p = model.f1_var(&mut cx, xi_var)?;
        let e = model.encode_var(&mut cx, x)?;
        let z = cx.tape.add(p, e)?;
        let y = model.decode_var(&mut cx, z)?;
        let back = model.encode_var(&mut cx, y)?;
        let residual = tape.sub(back, p)?;
        Ok(Self { tape, xi: xi_var, residual })
    }

    /// `K v`.
    pub fn apply(&self, v: &[f32]) -> Result<Vec<f32>> {
        self.tape.jvp(&[(self.xi, v)], self.residual)
    }

    /// `Kᵀ u`.
    pub fn apply_t(&self, u: &[f32]) -> Result<Vec<f32>> {
        Ok(self.tape.vjp(self.residual, u, &[self.xi])?.pop().unwrap_or_default())
    }

    pub fn value(&self) -> &[f32] {
        self.tape.data(self.residual)
    }
}

/// `‖∂F2(y_ξ)/∂ξ − A1‖₂` by power iteration.
pub fn jacobian_residual_norm(model: &Surrogate, xi: &[f64], image: &Image, cfg: &PowerConfig) -> Result<f64> {
    let rt = ResidualTape::new(model, xi, image)?;
    power_spectral_norm(model.param_dim, cfg, |v| rt.apply(v), |u| rt.apply_t(u))
}

/// Residual norms at every grid point; independent of `σ1`, `σ2`, so sweeps
/// can reuse them.
pub fn residual_norms(model: &Surrogate, image: &Image, grid: &[Vec<f64>], cfg: &PowerConfig) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Empty("parameter grid"));
    }
    grid.iter().map(|xi| jacobian_residual_norm(model, xi, image, cfg)).collect()
}

/// Combines per-point residual norms into `M*` (grid max times safety factor).
pub fn m_star_from_norms(grid: &[Vec<f64>], norms: &[f64], sigma1: f64, sigma2: f64, cfg: &MStarConfig) -> Result<MStarEstimate> {
    check_sigmas(sigma1, sigma2)?;
    if grid.is_empty() {
        return Err(Error::Empty("parameter grid"));
    }
    if grid.len() != norms.len() {
        return Err(Error::Mismatch(format!("{} grid points but {} norms", grid.len(), norms.len())));
    }
    if !(cfg.safety_factor >= 1.0) {
        return Err(Error::invalid(format!("safety factor must be at least 1, got {}", cfg.safety_factor)));
    }
    let points: Vec<GridPoint> = grid
        .iter()
        .zip(norms)
        .map(|(xi, &r)| GridPoint { xi: xi.clone(), residual_norm: r, term: m_star_term(r, sigma1, sigma2) })
        .collect();
    let best = points.iter().max_by(|a, b| a.term.total_cmp(&b.term)).expect("nonempty grid");
    Ok(MStarEstimate {
        value: best.term * cfg.safety_factor,
        argmax_xi: best.xi.clone(),
        iterations: cfg.power.iterations,
        safety_factor: cfg.safety_factor,
        oracle_value: None,
        points,
    })
}

/// Per-image `M*` over `grid`.
pub fn estimate_m_star(
    model: &Surrogate,
    image: &Image,
    sigma1: f64,
    sigma2: f64,
    grid: &[Vec<f64>],
    cfg: &MStarConfig,
) -> Result<MStarEstimate> {
    check_sigmas(sigma1, sigma2)?;
    let norms = residual_norms(model, image, grid, &cfg.power)?;
    m_star_from_norms(grid, &norms, sigma1, sigma2, cfg)
}

/// Dataset-level `M*`: the largest per-image estimate over a calibration set.
/// Conservative for images outside the set only to the extent the set covers them.
pub fn dataset_m_star(
    model: &Surrogate,
    images: &[Image],
    sigma1: f64,
    sigma2: f64,
    grid: &[Vec<f64>],
    cfg: &MStarConfig,
) -> Result<MStarEstimate> {
    let mut best: Option<MStarEstimate> = None;
    for im in images {
        let e = estimate_m_star(model, im, sigma1, sigma2, grid, cfg)?;
        if best.as_ref().is_none_or(|b| e.value > b.value) {
            best = Some(e);
        }
    }
    best.ok_or(Error::Empty("calibration set"))
}

/// Spectral norms of the three surrogate Jacobians that control the
/// approximation-error correction, at one `(ξ, x)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateNorms {
    /// `‖F1′‖ = ‖A1‖`.
    pub f1: f64,
    /// `‖F2′(y_ξ)‖`, encoder at the decoded image.
    pub f2: f64,
    /// `‖H′(z_ξ)‖`, decoder at the latent.
    pub h: f64,
}

impl SurrogateNorms {
    pub fn max(&self) -> f64 {
        self.f1.max(self.f2).max(self.h)
    }
}

pub fn surrogate_norms(model: &Surrogate, xi: &[f64], image: &Image, cfg: &PowerConfig) -> Result<SurrogateNorms> {
    let (m, l) = (model.param_dim, model.latent_dim());
    let a1: Vec<f64> = model.a1().iter().map(|&v| v as f64).collect();
    let f1 = largest_singular_value(l, m, &a1);

    let mut z = model.encode(image)?;
    z.iter_mut().zip(model.embed(xi)?).for_each(|(a, b)| *a += b);

    let mut tape = Tape::new();
    let zv = tape.input(Tensor::new(vec![1, l], z)?.with_grad());
    let mut cx = Ctx::new(&mut tape, &model.store, false);
    let y = model.decode_var(&mut cx, zv)?;
    let h = tape_operator_norm(&tape, zv, y, cfg)?;

    let y_value = tape.value(y).clone();
    let mut tape = Tape::new();
    let yv = tape.input(y_value.with_grad());
    let mut cx = Ctx::new(&mut tape, &model.store, false);
    let back = model.encode_var(&mut cx, yv)?;
    let f2 = tape_operator_norm(&tape, yv, back, cfg)?;
    Ok(SurrogateNorms { f1, f2, h })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    /// `M*` without safety factor.
    pub value: f64,
    pub argmax_xi: Vec<f64>,
    pub residual_norms: Vec<f64>,
    /// Largest relative gap between the difference-quotient Jacobian and the
    /// vjp Jacobian, over all grid points.
    pub vjp_gap: f64,
}

/// Step of the central differences used by the oracle.
pub const FD_STEP: f64 = 1e-3;

/// Full residual Jacobian `K` (row-major `ℓ×m`) by central differences.
pub fn residual_jacobian_fd(model: &Surrogate, xi: &[f64], image: &Image, h: f64) -> Result<Vec<f64>> {
    let m = model.param_dim;
    let l = model.latent_dim();
    let mut k = vec![0.0; l * m];
    for j in 0..m {
        let mut up = xi.to_vec();
        let mut down = xi.to_vec();
        up[j] += h;
        down[j] -= h;
        let ru = ResidualTape::new(model, &up, image)?;
        let rd = ResidualTape::new(model, &down, image)?;
        // the f32 rounding of ξ is part of the actual step
        let step = (up[j] as f32 as f64) - (down[j] as f32 as f64);
        for (i, (a, b)) in ru.value().iter().zip(rd.value()).enumerate() {
            k[i * m + j] = (*a as f64 - *b as f64) / step;
        }
    }
    Ok(k)
}

/// Full residual Jacobian by `ℓ` vjp passes.
pub fn residual_jacobian_vjp(model: &Surrogate, xi: &[f64], image: &Image) -> Result<Vec<f64>> {
    let m = model.param_dim;
    let l = model.latent_dim();
    let rt = ResidualTape::new(model, xi, image)?;
    let mut k = vec![0.0; l * m];
    let mut e = vec![0.0f32; l];
    for i in 0..l {
        e[i] = 1.0;
        let row = rt.apply_t(&e)?;
        e[i] = 0.0;
        for j in 0..m {
            k[i * m + j] = row[j] as f64;
        }
    }
    Ok(k)
}

/// Oracle `M*`: exact SVD of the difference-quotient Jacobian at each grid
/// point, cross-checked against the vjp Jacobian. No safety factor.
pub fn brute_force_m_star(model: &Surrogate, image: &Image, sigma1: f64, sigma2: f64, grid: &[Vec<f64>]) -> Result<BruteForce> {
    check_sigmas(sigma1, sigma2)?;
    let (m, l) = (model.param_dim, model.latent_dim());
    if m * l > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!("brute-force Jacobian has {} entries, limit {BRUTE_FORCE_LIMIT}", m * l)));
    }
    if grid.is_empty() {
        return Err(Error::Empty("parameter grid"));
    }
    let mut norms = Vec::with_capacity(grid.len());
    let mut vjp_gap: f64 = 0.0;
    for xi in grid {
        let fd = residual_jacobian_fd(model, xi, image, FD_STEP)?;
        let ad = residual_jacobian_vjp(model, xi, image)?;
        vjp_gap = vjp_gap.max(crate::nn::check::relative_error(&fd, &ad));
        norms.push(largest_singular_value(l, m, &fd));
    }
    let (best, r) = norms
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, &r)| (i, r))
        .expect("nonempty grid");
    Ok(BruteForce { value: m_star_term(r, sigma1, sigma2), argmax_xi: grid[best].clone(), residual_norms: norms, vjp_gap })
}
