//! Small dense linear-algebra helpers used by the oracles.

use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use nalgebra::DMatrix;

/// Largest singular value of a row-major 2×2 matrix, closed form.
pub fn spectral_norm_2x2(m: [f64; 4]) -> f64 {
    let [a, b, c, d] = m;
    let fro = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    let disc = (fro * fro - 4.0 * det * det).max(0.0).sqrt();
    ((fro + disc) / 2.0).sqrt()
}

/// Largest singular value of a row-major `rows×cols` matrix via a full SVD.
pub fn largest_singular_value(rows: usize, cols: usize, data: &[f64]) -> f64 {
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(rows, cols, data);
    m.singular_values().iter().fold(0.0f64, |a, &b| a.max(b))
}

/// Euclidean norm accumulated in `f64`.
pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub fn norm64(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Rescales `v` to unit length; returns the original norm. Zero vectors are
/// left untouched.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm64(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// `rows×cols` matrix `U diag(s) Vᵀ` with orthonormal factors obtained by QR
/// of the given square seeds (row-major). Used to build matrices with known
/// singular values.
pub fn with_singular_values(rows: usize, cols: usize, s: &[f64], seed_u: &[f64], seed_v: &[f64]) -> Vec<f64> {
    let k = s.len().min(rows).min(cols);
    let u = DMatrix::from_row_slice(rows, rows, seed_u).qr().q();
    let v = DMatrix::from_row_slice(cols, cols, seed_v).qr().q();
    let mut sig = DMatrix::<f64>::zeros(rows, cols);
    for i in 0..k {
        sig[(i, i)] = s[i];
    }
    let m = u * sig * v.transpose();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(m[(r, c)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_2x2_matches_svd() {
        let m = [1.0, 0.0, -0.6, 1.49];
        assert!((spectral_norm_2x2(m) - largest_singular_value(2, 2, &m)).abs() < 1e-12);
    }

    #[test]
    fn constructed_singular_values_are_recovered() {
        let su: Vec<f64> = (0..9).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let sv: Vec<f64> = (0..4).map(|i| ((i * 5 + 1) % 7) as f64 - 3.0 + 0.1).collect();
        let m = with_singular_values(3, 2, &[2.5, 0.7], &su, &sv);
        assert!((largest_singular_value(3, 2, &m) - 2.5).abs() < 1e-10);
    }
}
