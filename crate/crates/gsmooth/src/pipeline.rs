//! Parallel drivers over samples. Every sample derives its own random
//! streams from the run seed, so results do not depend on the worker count.

use std::time::Instant;

use gsmooth_core::attack::{eot_pgd, AttackConfig, AttackResult};
use gsmooth_core::certify::{certify_sample, m_star_for, CertificationRecord, CertifyConfig, Path, Smoother};
use gsmooth_core::classifier::Classifier;
use gsmooth_core::jacobian::{m_star_from_norms, residual_norms, MStarConfig, PowerConfig};
use gsmooth_core::surrogate::{grid, Surrogate};
use gsmooth_core::transforms::TransformSpec;
use gsmooth_core::Image;
use rayon::prelude::*;

use crate::error::Result;

/// Per-image `M*` for the configured path.
pub fn m_stars(spec: &TransformSpec, surrogate: Option<&Surrogate>, images: &[Image], cfg: &CertifyConfig) -> Result<Vec<f64>> {
    if cfg.path == Path::Resolvable {
        let m = m_star_for(spec, None, images.first().map_or(&Image::zeros(1, 1, 1), |i| i), cfg)?;
        return Ok(vec![m; images.len()]);
    }
    Ok(images.par_iter().map(|im| m_star_for(spec, surrogate, im, cfg)).collect::<Result<_, _>>()?)
}

/// Residual norms on the `M*` grid, cached per image. `M*` depends on the
/// noise levels only through the final combination, so a sweep reuses them.
pub struct ResidualCache {
    pub grid: Vec<Vec<f64>>,
    pub norms: Vec<Vec<f64>>,
}

impl ResidualCache {
    pub fn new(model: &Surrogate, spec: &TransformSpec, images: &[Image], grid_points: usize, seed: u64) -> Result<Self> {
        let g = grid(&spec.space, grid_points);
        let power = PowerConfig { seed, ..PowerConfig::default() };
        let norms = images.par_iter().map(|im| residual_norms(model, im, &g, &power)).collect::<Result<_, _>>()?;
        Ok(Self { grid: g, norms })
    }

    pub fn m_stars(&self, sigma1: f64, sigma2: f64, safety_factor: f64, seed: u64) -> Result<Vec<f64>> {
        let cfg = MStarConfig { safety_factor, power: PowerConfig { seed, ..PowerConfig::default() } };
        self.norms.iter().map(|n| Ok(m_star_from_norms(&self.grid, n, sigma1, sigma2, &cfg)?.value)).collect()
    }
}

/// Certifies every image; `seconds` holds the wall time of each sample.
pub fn certify_all<C: Classifier + ?Sized>(
    smoother: &Smoother<C>,
    images: &[Image],
    labels: &[usize],
    m_stars: &[f64],
) -> Result<Vec<CertificationRecord>> {
    Ok((0..images.len())
        .into_par_iter()
        .map(|i| {
            let t = Instant::now();
            let mut r = certify_sample(smoother, i, &images[i], labels[i], m_stars[i])?;
            r.seconds = t.elapsed().as_secs_f64();
            Ok(r)
        })
        .collect::<Result<_, gsmooth_core::Error>>()?)
}

/// EoT-PGD at `multiplier × R_r` on every correctly certified record with a
/// positive corrected radius.
pub fn attack_all<C: Classifier + ?Sized>(
    smoother: &Smoother<C>,
    model: &Surrogate,
    records: &[CertificationRecord],
    images: &[Image],
    multiplier: f64,
    base: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    let targets: Vec<&CertificationRecord> =
        records.iter().filter(|r| r.certified_correct(0.0) && r.radius_corrected > 0.0).collect();
    Ok(targets
        .par_iter()
        .map(|r| {
            let cfg = AttackConfig { budget: multiplier * r.radius_corrected, ..base.clone() };
            eot_pgd(smoother, model, r.sample_id, &images[r.sample_id], r.label, &cfg)
        })
        .collect::<Result<_, gsmooth_core::Error>>()?)
}

/// Whether the maximum of a row-major grid is attained strictly inside: the
/// best interior cell beats every boundary cell.
pub fn interior_maximum(values: &[f64], rows: usize, cols: usize) -> bool {
    if rows < 3 || cols < 3 || values.len() != rows * cols {
        return false;
    }
    let (mut inner, mut edge) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            if r == 0 || c == 0 || r == rows - 1 || c == cols - 1 {
                edge = edge.max(v);
            } else {
                inner = inner.max(v);
            }
        }
    }
    inner > edge
}
