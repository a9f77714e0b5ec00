//! Gauss-Hermite rules and adaptive Simpson integration.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use crate::error::{Error, Result};

/// Nodes and weights for `∫ e^{−x²} f(x) dx ≈ Σ wᵢ f(xᵢ)` (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], PI.sqrt() * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize to remove eigen-solver noise
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// Rule for `E[f(Z)]`, `Z ~ N(0, 1)`: nodes `√2·xᵢ`, weights `wᵢ/√π`.
pub fn normal_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_hermite(n);
    (
        x.iter().map(|v| v * core::f64::consts::SQRT_2).collect(),
        w.iter().map(|v| v / PI.sqrt()).collect(),
    )
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to relative tolerance
/// `rel_tol` (Richardson-corrected).
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // a coarse estimate of the magnitude turns the relative tolerance into
    // an absolute one shared by all subintervals
    let scale = {
        let n = 64;
        let h = (b - a) / n as f64;
        (0..=n).map(|i| f(a + i as f64 * h).abs()).sum::<f64>() * h.abs()
    };
    let tol = (rel_tol * scale).max(f64::MIN_POSITIVE);
    let v = simpson_rec(&f, a, b, fa, fm, fb, whole, tol, 60);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(alloc::format!("integral over [{a}, {b}]")))
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}
