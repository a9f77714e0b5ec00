//! Ground-truth semantic transformation kernels.
//!
//! Every family maps `(θ, x)` to an image of the same shape, clamps to
//! `[0, 1]`, and treats `θ = 0` as the neutral parameter. Each family has two
//! parameter sets: the perturbation box `P` that certification and surrogate
//! training range over, and a wider definitional domain that [`TransformSpec::apply`]
//! accepts, since smoothing noise routinely lands outside `P`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::spectral_norm_2x2;

/// Number of sub-transforms averaged by rotational and zoom blur.
pub const BLUR_TAPS: usize = 11;

/// Gaussian kernel support in standard deviations.
const GAUSS_TRUNCATION: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Identity,
    Translation,
    GaussianBlur,
    BrightnessContrast,
    Brightness,
    Rotation,
    Scaling,
    RotationalBlur,
    DefocusBlur,
    ZoomBlur,
    Pixelate,
}

impl TransformKind {
    pub const ALL: [TransformKind; 11] = [
        TransformKind::Identity,
        TransformKind::Translation,
        TransformKind::GaussianBlur,
        TransformKind::BrightnessContrast,
        TransformKind::Brightness,
        TransformKind::Rotation,
        TransformKind::Scaling,
        TransformKind::RotationalBlur,
        TransformKind::DefocusBlur,
        TransformKind::ZoomBlur,
        TransformKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Translation => "translation",
            TransformKind::GaussianBlur => "gaussian-blur",
            TransformKind::BrightnessContrast => "brightness-contrast",
            TransformKind::Brightness => "brightness",
            TransformKind::Rotation => "rotation",
            TransformKind::Scaling => "scaling",
            TransformKind::RotationalBlur => "rotational-blur",
            TransformKind::DefocusBlur => "defocus-blur",
            TransformKind::ZoomBlur => "zoom-blur",
            TransformKind::Pixelate => "pixelate",
        }
    }

    pub fn param_dim(self) -> usize {
        match self {
            TransformKind::Translation | TransformKind::BrightnessContrast => 2,
            _ => 1,
        }
    }

    /// Default perturbation box `P`, one `(lo, hi)` pair per coordinate.
    pub fn default_space(self) -> Vec<(f64, f64)> {
        match self {
            TransformKind::Identity => vec![(-1.0, 1.0)],
            TransformKind::Translation => vec![(-8.0, 8.0); 2],
            TransformKind::GaussianBlur => vec![(0.0, 4.0)],
            TransformKind::BrightnessContrast => vec![(-0.4, 0.4); 2],
            TransformKind::Brightness => vec![(-0.2, 0.2)],
            TransformKind::Rotation => vec![(-30.0, 30.0)],
            TransformKind::Scaling => vec![(-0.3, 0.3)],
            TransformKind::RotationalBlur => vec![(-10.0, 10.0)],
            TransformKind::DefocusBlur => vec![(-5.0, 5.0)],
            TransformKind::ZoomBlur => vec![(-0.5, 0.5)],
            TransformKind::Pixelate => vec![(-0.5, 0.5)],
        }
    }

    /// Whether `θ` lies in the set where the kernel is defined.
    pub fn in_domain(self, theta: &[f64]) -> bool {
        if theta.len() != self.param_dim() || theta.iter().any(|t| !t.is_finite()) {
            return false;
        }
        let t = theta[0];
        match self {
            TransformKind::GaussianBlur => (0.0..=1e4).contains(&t),
            TransformKind::Scaling | TransformKind::ZoomBlur => t > -0.9 && t < 1e3,
            TransformKind::DefocusBlur => t.abs() <= 1e3,
            TransformKind::Pixelate => t.abs() < 1.0,
            _ => true,
        }
    }

    pub fn resolvable(self) -> bool {
        matches!(
            self,
            TransformKind::Identity
                | TransformKind::Translation
                | TransformKind::GaussianBlur
                | TransformKind::BrightnessContrast
                | TransformKind::Brightness
        )
    }

    /// Parameters are nonnegative by construction (blur variance).
    pub fn nonnegative(self) -> bool {
        matches!(self, TransformKind::GaussianBlur)
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown transform `{s}`")))
    }
}

/// A transformation family together with its perturbation box `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub space: Vec<(f64, f64)>,
}

impl From<TransformKind> for TransformSpec {
    fn from(kind: TransformKind) -> Self {
        Self::new(kind)
    }
}

impl TransformSpec {
    pub fn new(kind: TransformKind) -> Self {
        Self { kind, space: kind.default_space() }
    }

    pub fn with_space(kind: TransformKind, space: Vec<(f64, f64)>) -> Result<Self> {
        if space.len() != kind.param_dim() {
            return Err(Error::invalid(format!("{kind} has {} parameters, box has {}", kind.param_dim(), space.len())));
        }
        for &(lo, hi) in &space {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!("invalid parameter box [{lo}, {hi}]")));
            }
            if !kind.in_domain(&vec![lo; kind.param_dim()]) || !kind.in_domain(&vec![hi; kind.param_dim()]) {
                return Err(Error::invalid(format!("box [{lo}, {hi}] leaves the domain of {kind}")));
            }
        }
        Ok(Self { kind, space })
    }

    pub fn param_dim(&self) -> usize {
        self.kind.param_dim()
    }

    pub fn resolvable(&self) -> bool {
        self.kind.resolvable()
    }

    pub fn in_space(&self, theta: &[f64]) -> bool {
        theta.len() == self.space.len() && theta.iter().zip(&self.space).all(|(t, (lo, hi))| lo <= t && t <= hi)
    }

    /// Like [`apply`](Self::apply) but rejects `θ ∉ P`.
    pub fn apply_in_space(&self, theta: &[f64], image: &Image) -> Result<Image> {
        if !self.in_space(theta) {
            return Err(Error::OutOfDomain { transform: self.kind.name(), theta: theta.to_vec() });
        }
        self.apply(theta, image)
    }

    /// `τ(θ, x)`, clamped to `[0, 1]` except for translation, whose
    /// band-limited interpolation may ring slightly outside the range; a clamp
    /// there would break the composition law.
    pub fn apply(&self, theta: &[f64], image: &Image) -> Result<Image> {
        let out = self.apply_raw(theta, image)?;
        Ok(if self.kind == TransformKind::Translation { out } else { out.clamp01() })
    }

    /// `τ(θ, x)` without the final clamp. The brightness families and
    /// fractional translations can leave `[0, 1]`; every other kernel is a
    /// convex combination of input pixels.
    pub fn apply_raw(&self, theta: &[f64], image: &Image) -> Result<Image> {
        if !self.kind.in_domain(theta) {
            return Err(Error::OutOfDomain { transform: self.kind.name(), theta: theta.to_vec() });
        }
        let t = theta[0];
        Ok(match self.kind {
            TransformKind::Identity => image.clone(),
            TransformKind::Translation => translate(image, theta[0], theta[1]),
            TransformKind::GaussianBlur => gaussian_blur(image, t),
            TransformKind::BrightnessContrast => {
                let (gain, bias) = (theta[0].exp() as f32, theta[1] as f32);
                let mut out = image.clone();
                out.data.iter_mut().for_each(|v| *v = gain * *v + bias);
                out
            }
            TransformKind::Brightness => {
                let mut out = image.clone();
                out.data.iter_mut().for_each(|v| *v += t as f32);
                out
            }
            TransformKind::Rotation => rotate(image, t),
            TransformKind::Scaling => scale(image, 1.0 + t),
            TransformKind::RotationalBlur => {
                average_of(image, BLUR_TAPS, |k| rotate(image, t * k as f64 / (BLUR_TAPS - 1) as f64))
            }
            TransformKind::ZoomBlur => {
                average_of(image, BLUR_TAPS, |k| scale(image, 1.0 + t * k as f64 / (BLUR_TAPS - 1) as f64))
            }
            TransformKind::DefocusBlur => defocus(image, t.abs()),
            TransformKind::Pixelate => pixelate(image, 1.0 - t.abs()),
        })
    }

    /// Composition law `γ(θ, ξ)` with `τ(γ(θ, ξ), x) = τ(θ, τ(ξ, x))`.
    pub fn compose(&self, theta: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let m = self.param_dim();
        if theta.len() != m || xi.len() != m {
            return Err(Error::invalid(format!("{} expects {m} parameters", self.kind)));
        }
        match self.kind {
            TransformKind::Identity | TransformKind::Brightness | TransformKind::Translation | TransformKind::GaussianBlur => {
                Ok(theta.iter().zip(xi).map(|(a, b)| a + b).collect())
            }
            TransformKind::BrightnessContrast => {
                let (c2, b2, c1, b1) = (theta[0], theta[1], xi[0], xi[1]);
                Ok(vec![c1 + c2, c2.exp() * b1 + b2])
            }
            _ => Err(Error::NotResolvable(self.kind.name())),
        }
    }

    /// The matrix `M(θ, ξ)` solving `∂γ/∂ξ = (∂γ/∂θ) M`, row-major `m×m`.
    pub fn resolving_matrix(&self, theta: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            TransformKind::Identity | TransformKind::Brightness => Ok(vec![1.0]),
            TransformKind::Translation => Ok(vec![1.0, 0.0, 0.0, 1.0]),
            TransformKind::GaussianBlur => Ok(vec![1.0]),
            TransformKind::BrightnessContrast => {
                // ∂γ/∂θ = [[1, 0], [e^{c2} b1, 1]], ∂γ/∂ξ = [[1, 0], [0, e^{c2}]]
                let e = theta[0].exp();
                let b1 = xi[1];
                Ok(vec![1.0, 0.0, -e * b1, e])
            }
            _ => Err(Error::NotResolvable(self.kind.name())),
        }
    }

    /// `M* = max ‖M(θ, ξ)‖₂` over `P × P`, evaluated on a `grid`-point lattice
    /// per varying coordinate. Additive families return exactly 1.
    pub fn resolvable_m_star(&self, grid: usize) -> Result<f64> {
        match self.kind {
            TransformKind::Identity | TransformKind::Brightness | TransformKind::Translation | TransformKind::GaussianBlur => Ok(1.0),
            TransformKind::BrightnessContrast => {
                // M depends only on the contrast of θ and the brightness of ξ.
                let (c_lo, c_hi) = self.space[0];
                let (b_lo, b_hi) = self.space[1];
                let g = grid.max(2);
                let mut best: f64 = 0.0;
                for i in 0..g {
                    let c2 = c_lo + (c_hi - c_lo) * i as f64 / (g - 1) as f64;
                    for j in 0..g {
                        let b1 = b_lo + (b_hi - b_lo) * j as f64 / (g - 1) as f64;
                        let m = self.resolving_matrix(&[c2, 0.0], &[0.0, b1])?;
                        best = best.max(spectral_norm_2x2([m[0], m[1], m[2], m[3]]));
                    }
                }
                Ok(best)
            }
            _ => Err(Error::NotResolvable(self.kind.name())),
        }
    }

    /// Smallest max-pixel gap between `τ(θ, τ(ξ, x))` and any single
    /// `τ(γ, x)` with `γ` drawn from `candidates`. A large value witnesses
    /// that no composition parameter exists.
    pub fn composition_gap(&self, theta: &[f64], xi: &[f64], x: &Image, candidates: &[Vec<f64>]) -> Result<f64> {
        let target = self.apply(theta, &self.apply(xi, x)?)?;
        let mut best = f64::INFINITY;
        for g in candidates {
            best = best.min(self.apply(g, x)?.max_abs_diff(&target));
        }
        Ok(best)
    }
}

fn average_of(image: &Image, taps: usize, f: impl Fn(usize) -> Image) -> Image {
    let mut acc = vec![0.0f64; image.len()];
    for k in 0..taps {
        let im = f(k);
        acc.iter_mut().zip(&im.data).for_each(|(a, &v)| *a += v as f64);
    }
    let mut out = image.same_shape();
    out.data.iter_mut().zip(&acc).for_each(|(o, &a)| *o = (a / taps as f64) as f32);
    out
}

/// Bilinear sample of one plane at fractional `(y, x)` in pixel-center
/// coordinates; outside the image reads as zero.
fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let fetch = |yy: isize, xx: isize| -> f32 {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let top = if fx == 0.0 { fetch(y0, x0) } else { (1.0 - fx) * fetch(y0, x0) + fx * fetch(y0, x0 + 1) };
    if fy == 0.0 {
        return top;
    }
    let bot = if fx == 0.0 { fetch(y0 + 1, x0) } else { (1.0 - fx) * fetch(y0 + 1, x0) + fx * fetch(y0 + 1, x0 + 1) };
    (1.0 - fy) * top + fy * bot
}

/// Inverse-mapped resampling: `out(p) = in(src(p))`.
fn warp(image: &Image, src: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let (h, w) = (image.height, image.width);
    let mut out = image.same_shape();
    for c in 0..image.channels {
        let plane = image.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = src(y as f64, x as f64);
                dst[y * w + x] = bilinear(plane, h, w, sy, sx);
            }
        }
    }
    out
}

/// Circular sub-pixel shift by `(dx, dy)` pixels (content moves right/down).
/// Integral offsets are exact rolls. Fractional offsets use band-limited
/// (periodic sinc) interpolation with the Nyquist bin dropped, so shifts
/// compose exactly: `T(a) T(b) = T(a + b)` whenever `a + b` is not itself an
/// integer reached from two fractional offsets.
fn translate(image: &Image, dx: f64, dy: f64) -> Image {
    let (h, w) = (image.height, image.width);
    let (kx, ky) = (LineShift::new(w, dx), LineShift::new(h, dy));
    let mut out = image.same_shape();
    let (mut line, mut shifted) = (vec![0.0f64; h.max(w)], vec![0.0f64; h.max(w)]);
    let mut rows = vec![0.0f64; h * w];
    for c in 0..image.channels {
        let src = image.plane(c);
        for y in 0..h {
            line[..w].iter_mut().zip(&src[y * w..(y + 1) * w]).for_each(|(d, &v)| *d = v as f64);
            kx.apply(&line[..w], &mut rows[y * w..(y + 1) * w]);
        }
        let dst = out.plane_mut(c);
        for x in 0..w {
            (0..h).for_each(|y| line[y] = rows[y * w + x]);
            ky.apply(&line[..h], &mut shifted[..h]);
            (0..h).for_each(|y| dst[y * w + x] = shifted[y] as f32);
        }
    }
    out
}

/// `out[i] = in(i − d)` on a circle of `n` samples.
enum LineShift {
    Roll(usize),
    Kernel(Vec<f64>),
}

impl LineShift {
    fn new(n: usize, d: f64) -> Self {
        if d == d.round() {
            LineShift::Roll((d as i64).rem_euclid(n as i64) as usize)
        } else {
            LineShift::Kernel(shift_kernel(n, d))
        }
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        let n = input.len();
        match self {
            LineShift::Roll(k) => (0..n).for_each(|i| out[i] = input[(i + n - k) % n]),
            LineShift::Kernel(kernel) => {
                for (i, o) in out.iter_mut().enumerate() {
                    // out[i] = Σ_j kernel[j] · input[i − j], split at the wrap
                    let head: f64 = kernel[..=i].iter().zip(input[..=i].iter().rev()).map(|(a, b)| a * b).sum();
                    let tail: f64 = kernel[i + 1..].iter().zip(input[i + 1..].iter().rev()).map(|(a, b)| a * b).sum();
                    *o = head + tail;
                }
            }
        }
    }
}

/// Periodic Dirichlet kernel `D(j − d)` over the frequencies `|k| < n/2`.
fn shift_kernel(n: usize, d: f64) -> Vec<f64> {
    let m = (n - 1) / 2;
    let d = d.rem_euclid(n as f64);
    (0..n)
        .map(|j| {
            let half = core::f64::consts::PI * (j as f64 - d) / n as f64;
            let den = libm::sin(half);
            if den.abs() < 1e-12 {
                (2 * m + 1) as f64 / n as f64
            } else {
                libm::sin((2 * m + 1) as f64 * half) / (n as f64 * den)
            }
        })
        .collect()
}

/// Rotation by `deg` degrees about the image center (counter-clockwise as
/// displayed), zero padding.
fn rotate(image: &Image, deg: f64) -> Image {
    if deg == 0.0 {
        return image.clone();
    }
    let rad = deg.to_radians();
    let snap = |v: f64| if (v - v.round()).abs() < 1e-12 { v.round() } else { v };
    let (s, c) = (snap(rad.sin()), snap(rad.cos()));
    let cy = (image.height as f64 - 1.0) / 2.0;
    let cx = (image.width as f64 - 1.0) / 2.0;
    warp(image, |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (cy + s * dx + c * dy, cx + c * dx - s * dy)
    })
}

/// Isotropic rescaling by `factor` about the center, zero padding.
fn scale(image: &Image, factor: f64) -> Image {
    if factor == 1.0 {
        return image.clone();
    }
    let cy = (image.height as f64 - 1.0) / 2.0;
    let cx = (image.width as f64 - 1.0) / 2.0;
    warp(image, |y, x| (cy + (y - cy) / factor, cx + (x - cx) / factor))
}

/// Discrete Gaussian kernel `e^{-t} I_n(t)` for `|n| ≤ radius`, renormalized.
/// Its variance is exactly `t` and `K(s) * K(t) = K(s + t)` before truncation.
pub fn discrete_gaussian_kernel(t: f64) -> Vec<f64> {
    if t <= 0.0 {
        return vec![1.0];
    }
    let radius = (GAUSS_TRUNCATION * t.sqrt()).ceil().max(3.0) as usize;
    let half = t / 2.0;
    let ln_half = half.ln();
    let mut k: Vec<f64> = (0..=radius)
        .map(|n| {
            // e^{-t} Σ_j (t/2)^{2j+n} / (j! (j+n)!)
            let mut sum = 0.0;
            let mut j = 0usize;
            loop {
                let ln_term = (2 * j + n) as f64 * ln_half
                    - libm::lgamma(j as f64 + 1.0)
                    - libm::lgamma((j + n) as f64 + 1.0)
                    - t;
                let term = ln_term.exp();
                sum += term;
                if (j as f64 > half && term < 1e-18 * sum) || j > 10_000 {
                    break;
                }
                j += 1;
            }
            sum
        })
        .collect();
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    k.iter_mut().for_each(|v| *v /= total);
    let mut full = vec![0.0; 2 * radius + 1];
    for (n, &v) in k.iter().enumerate() {
        full[radius + n] = v;
        full[radius - n] = v;
    }
    full
}

/// Separable circular convolution with the discrete Gaussian of variance `t`.
fn gaussian_blur(image: &Image, t: f64) -> Image {
    if t == 0.0 {
        return image.clone();
    }
    let kernel = discrete_gaussian_kernel(t);
    let radius = kernel.len() / 2;
    let fold = |n: usize| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (i, &v) in kernel.iter().enumerate() {
            let off = (i as i64 - radius as i64).rem_euclid(n as i64) as usize;
            out[off] += v;
        }
        out
    };
    let (h, w) = (image.height, image.width);
    let (kx, ky) = (fold(w), fold(h));
    let mut out = image.same_shape();
    let mut tmp = vec![0.0f32; h * w];
    for c in 0..image.channels {
        let src = image.plane(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (o, &kv) in kx.iter().enumerate() {
                    if kv != 0.0 {
                        acc += kv * src[y * w + (x + w - o) % w] as f64;
                    }
                }
                tmp[y * w + x] = acc as f32;
            }
        }
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (o, &kv) in ky.iter().enumerate() {
                    if kv != 0.0 {
                        acc += kv * tmp[((y + h - o) % h) * w + x] as f64;
                    }
                }
                dst[y * w + x] = acc as f32;
            }
        }
    }
    out
}

/// Normalized disk of radius `r` with edge weights `clamp(r + 0.5 − d, 0, 1)`,
/// replicate boundary.
fn defocus(image: &Image, r: f64) -> Image {
    if r == 0.0 {
        return image.clone();
    }
    let reach = (r + 0.5).ceil() as isize;
    let mut taps = Vec::new();
    let mut total = 0.0f64;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d = ((dy * dy + dx * dx) as f64).sqrt();
            let wgt = (r + 0.5 - d).clamp(0.0, 1.0);
            if wgt > 0.0 {
                taps.push((dy, dx, wgt));
                total += wgt;
            }
        }
    }
    let (h, w) = (image.height as isize, image.width as isize);
    let mut out = image.same_shape();
    for c in 0..image.channels {
        let src = image.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for &(dy, dx, wgt) in &taps {
                    let yy = (y + dy).clamp(0, h - 1);
                    let xx = (x + dx).clamp(0, w - 1);
                    acc += wgt * src[(yy * w + xx) as usize] as f64;
                }
                dst[(y * w + x) as usize] = (acc / total) as f32;
            }
        }
    }
    out
}

/// 1-D resampling matrix (row-major `n×n`) that area-averages down to `k`
/// cells and bilinearly upsamples back to `n`.
fn pixelate_matrix(n: usize, k: usize) -> Vec<f64> {
    let k = k.clamp(1, n);
    let cell = n as f64 / k as f64;
    // down[j][i]: share of source pixel i in cell j
    let mut down = vec![0.0; k * n];
    for j in 0..k {
        let (a, b) = (j as f64 * cell, (j + 1) as f64 * cell);
        for i in 0..n {
            let overlap = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
            down[j * n + i] = overlap / cell;
        }
    }
    let mut out = vec![0.0; n * n];
    for x in 0..n {
        let u = ((x as f64 + 0.5) / cell - 0.5).clamp(0.0, (k - 1) as f64);
        let j0 = u.floor() as usize;
        let f = u - j0 as f64;
        let j1 = (j0 + 1).min(k - 1);
        for i in 0..n {
            out[x * n + i] = (1.0 - f) * down[j0 * n + i] + f * down[j1 * n + i];
        }
    }
    out
}

/// Operator for a continuous target resolution `r`, interpolating the
/// matrices of the two neighbouring integer resolutions.
fn pixelate_axis(n: usize, r: f64) -> Vec<f64> {
    let r = r.clamp(1.0, n as f64);
    let lo = r.floor();
    let f = r - lo;
    let a = pixelate_matrix(n, lo as usize);
    if f == 0.0 {
        return a;
    }
    let b = pixelate_matrix(n, lo as usize + 1);
    a.iter().zip(&b).map(|(x, y)| (1.0 - f) * x + f * y).collect()
}

fn pixelate(image: &Image, keep: f64) -> Image {
    if keep == 1.0 {
        return image.clone();
    }
    let (h, w) = (image.height, image.width);
    let mx = pixelate_axis(w, w as f64 * keep);
    let my = pixelate_axis(h, h as f64 * keep);
    let mut out = image.same_shape();
    let mut tmp = vec![0.0f64; h * w];
    for c in 0..image.channels {
        let src = image.plane(c);
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = (0..w).map(|i| mx[x * w + i] * src[y * w + i] as f64).sum();
            }
        }
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = (0..h).map(|i| my[y * h + i] * tmp[i * w + x]).sum::<f64>() as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        let data = (0..h * w).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        Image::new(1, h, w, data).unwrap()
    }

    #[test]
    fn neutral_parameter_is_identity() {
        let x = ramp(9, 8);
        for kind in TransformKind::ALL {
            let spec = TransformSpec::new(kind);
            let zero = vec![0.0; kind.param_dim()];
            assert_eq!(spec.apply(&zero, &x).unwrap(), x, "{kind}");
        }
    }

    #[test]
    fn quarter_turn_permutes_2x2() {
        let x = Image::new(1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let y = TransformSpec::new(TransformKind::Rotation).apply(&[90.0], &x).unwrap();
        let mut got = y.data.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, x.data);
        assert_ne!(y.data, x.data);
        // the top-left pixel moves one corner along the cycle
        assert_eq!(y.at(0, 0, 0), 0.2);
        assert_eq!(y.at(0, 0, 1), 0.4);
        assert_eq!(y.at(0, 1, 1), 0.3);
        assert_eq!(y.at(0, 1, 0), 0.1);
    }

    #[test]
    fn integer_translation_is_a_cyclic_shift() {
        let x = ramp(4, 5);
        let y = TransformSpec::new(TransformKind::Translation).apply(&[1.0, 0.0], &x).unwrap();
        for r in 0..4 {
            for c in 0..5 {
                assert_eq!(y.at(0, r, c), x.at(0, r, (c + 4) % 5));
            }
        }
    }

    #[test]
    fn fractional_shift_of_a_band_limited_signal_is_exact() {
        let n = 16;
        let f = |t: f64| 0.5 + 0.3 * (2.0 * core::f64::consts::PI * 3.0 * t / n as f64).cos();
        let input: Vec<f64> = (0..n).map(|i| f(i as f64)).collect();
        let mut out = vec![0.0; n];
        LineShift::new(n, 0.37).apply(&input, &mut out);
        for (i, v) in out.iter().enumerate() {
            assert!((v - f(i as f64 - 0.37)).abs() < 1e-12, "{i}");
        }
    }

    #[test]
    fn fractional_shifts_compose_exactly() {
        let x = ramp(6, 7);
        let spec = TransformSpec::new(TransformKind::Translation);
        for (a, b) in [([0.3, -1.2], [0.45, 2.6]), ([-2.7, 0.1], [5.15, -0.35])] {
            let lhs = spec.apply(&a, &spec.apply(&b, &x).unwrap()).unwrap();
            let rhs = spec.apply(&spec.compose(&a, &b).unwrap(), &x).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-6, "{a:?} {b:?}");
        }
    }

    #[test]
    fn discrete_gaussian_has_variance_t() {
        for t in [0.3, 1.0, 2.5] {
            let k = discrete_gaussian_kernel(t);
            let r = (k.len() / 2) as f64;
            let var: f64 = k.iter().enumerate().map(|(i, v)| v * (i as f64 - r).powi(2)).sum();
            assert!((var - t).abs() < 1e-2 * t, "t={t} var={var}");
        }
    }

    #[test]
    fn brightness_contrast_matrix_at_corner() {
        let spec = TransformSpec::new(TransformKind::BrightnessContrast);
        let e = 0.4f64.exp();
        let want = spectral_norm_2x2([1.0, 0.0, -e * 0.4, e]);
        assert!((spec.resolvable_m_star(100).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn non_resolvable_kinds_refuse_composition() {
        for kind in [TransformKind::Rotation, TransformKind::ZoomBlur, TransformKind::Pixelate] {
            let spec = TransformSpec::new(kind);
            assert!(matches!(spec.compose(&[0.1], &[0.1]), Err(Error::NotResolvable(_))));
        }
    }

    #[test]
    fn pixelate_keeps_mean_of_constant_image() {
        let x = Image::new(1, 8, 8, vec![0.6; 64]).unwrap();
        let y = TransformSpec::new(TransformKind::Pixelate).apply(&[0.37], &x).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-6);
    }
}
