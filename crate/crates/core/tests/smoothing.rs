use gsmooth_core::quadrature::{adaptive_simpson, normal_rule};
use gsmooth_core::rng;
use gsmooth_core::smoothing::{clopper_pearson_lower, NoiseKind, Phi, SmoothingDistribution};
use gsmooth_core::special::{normal_pdf, normal_quantile};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

fn gaussian(sigma: f64) -> Phi {
    Phi::new(SmoothingDistribution::gaussian(sigma, 1).unwrap(), 0)
}

#[test]
fn phi_examples() {
    assert!((gaussian(1.0).eval(0.5).unwrap() - 0.398_942).abs() < 1e-5);
    assert!((gaussian(2.0).eval(0.5).unwrap() - 0.199_471).abs() < 1e-5);
    assert!(gaussian(1.0).eval(1e-12).unwrap() < 1e-10);
    assert!(gaussian(1.0).eval(1.0 - 1e-12).unwrap() < 1e-10);
    assert!(gaussian(1.0).eval(0.0).is_err());
    assert!(gaussian(1.0).eval(1.0).is_err());
}

#[test]
fn phi_rises_to_one_half_then_falls() {
    let phi = gaussian(0.7);
    let ps: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
    let v: Vec<f64> = ps.iter().map(|&p| phi.eval(p).unwrap()).collect();
    for i in 1..v.len() {
        if ps[i] <= 0.5 {
            assert!(v[i] > v[i - 1]);
        } else {
            assert!(v[i] < v[i - 1]);
        }
    }
}

#[test]
fn monte_carlo_phi_agrees_with_closed_form() {
    let dist = SmoothingDistribution::gaussian(1.3, 1).unwrap();
    let mc = Phi::monte_carlo(dist, 200_000, 5);
    let exact = Phi::new(dist, 0);
    for i in 0..=18 {
        let p = 0.05 + 0.05 * i as f64;
        let (a, b) = (mc.eval(p).unwrap(), exact.eval(p).unwrap());
        assert!((a - b).abs() / b < 0.02, "p={p}: {a} vs {b}");
    }
}

#[test]
fn folded_and_exponential_phi_are_positive() {
    for kind in [NoiseKind::FoldedGaussian, NoiseKind::Exponential] {
        let phi = Phi::new(SmoothingDistribution::new(kind, 0.8, 2).unwrap(), 1);
        for i in 1..20 {
            assert!(phi.eval(i as f64 / 20.0).unwrap() > 0.0, "{kind}");
        }
    }
}

#[test]
fn radius_integral_examples() {
    let phi = gaussian(1.0);
    assert_eq!(phi.radius_integral(0.7, 0.7).unwrap(), 0.0);
    assert!((phi.radius_integral(0.9, 0.1).unwrap() - 2.563_10).abs() < 1e-5);
    assert!((phi.radius_integral_quadrature(0.9, 0.1).unwrap() - 2.563_10).abs() < 1e-4);
    assert!(phi.radius_integral(0.1, 0.9).is_err());
}

#[test]
fn closed_form_radius_matches_quadrature_on_a_grid() {
    for sigma in [0.5, 1.0, 2.0] {
        let phi = gaussian(sigma);
        for i in 0..9 {
            for j in 0..9 {
                let (pa, pb) = (0.05 + 0.1125 * i as f64, 0.05 + 0.1125 * j as f64);
                if pa < pb {
                    continue;
                }
                let closed = sigma * (normal_quantile(pa).unwrap() - normal_quantile(pb).unwrap());
                let quad = phi.radius_integral_quadrature(pa, pb).unwrap();
                let scale = closed.abs().max(1e-12);
                assert!((quad - closed).abs() / scale <= 1e-4 || (quad - closed).abs() < 1e-12, "{pa} {pb}");
            }
        }
    }
}

#[test]
fn clopper_pearson_examples() {
    assert_eq!(clopper_pearson_lower(0, 50, 0.001).unwrap(), 0.0);
    let all = clopper_pearson_lower(100, 100, 0.001).unwrap();
    assert!((all - 0.001f64.powf(0.01)).abs() < 1e-12);
    assert!((all - 0.933_25).abs() < 1e-5);
    assert!(clopper_pearson_lower(90, 100, 0.001).unwrap() <= 0.9);
    assert!(clopper_pearson_lower(5, 4, 0.001).is_err());
    assert!(clopper_pearson_lower(1, 4, 1.0).is_err());
}

/// Exact coverage `Σ_k P(K = k) 1{lb(k) ≤ p}` at several true proportions.
fn exact_coverage(n: u64, p: f64, alpha: f64) -> f64 {
    let ln_pmf = |k: u64| {
        gsmooth_core::special::ln_gamma(n as f64 + 1.0)
            - gsmooth_core::special::ln_gamma(k as f64 + 1.0)
            - gsmooth_core::special::ln_gamma((n - k) as f64 + 1.0)
            + k as f64 * p.ln()
            + (n - k) as f64 * (1.0 - p).ln()
    };
    (0..=n).filter(|&k| clopper_pearson_lower(k, n, alpha).unwrap() <= p).map(|k| ln_pmf(k).exp()).sum()
}

#[test]
fn clopper_pearson_covers_the_true_proportion() {
    let (n, alpha, trials) = (100u64, 0.001, 10_000u32);
    for (s, p) in [0.5, 0.7, 0.9, 0.95, 0.99].into_iter().enumerate() {
        let exact = exact_coverage(n, p, alpha);
        assert!(exact >= 1.0 - alpha, "p={p}: exact coverage {exact}");
        let mut r = rng::stream(17, s as u64);
        let b = Binomial::new(n, p).unwrap();
        let misses = (0..trials).filter(|_| clopper_pearson_lower(b.sample(&mut r), n, alpha).unwrap() > p).count() as f64;
        let expected = (1.0 - exact) * trials as f64;
        assert!(misses <= expected + 3.0 * expected.max(1.0).sqrt(), "p={p}: {misses} misses, {expected:.1} expected");
    }
}

/// Sample moments of 10⁵ draws against the analytic ones, within three
/// standard errors estimated from the same sample.
#[test]
fn sample_moments_match_analytic_moments() {
    let n = 100_000;
    for kind in [NoiseKind::Gaussian, NoiseKind::FoldedGaussian, NoiseKind::Exponential] {
        let dist = SmoothingDistribution::new(kind, 0.6, 2).unwrap();
        let xs: Vec<f64> = dist.sample_n(n, 3).iter().map(|v| v[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let c2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let c4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
        let (m, v) = dist.coordinate_moments();
        assert!((mean - m).abs() <= 3.0 * (c2 / n as f64).sqrt(), "{kind} mean {mean} vs {m}");
        assert!((c2 - v).abs() <= 3.0 * ((c4 - c2 * c2) / n as f64).sqrt(), "{kind} var {c2} vs {v}");
    }
}

#[test]
fn gaussian_draw_example_and_determinism() {
    let d = SmoothingDistribution::gaussian(1.0, 1).unwrap();
    let xs: Vec<f64> = d.sample_n(100_000, 9).iter().map(|v| v[0]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.03);
    assert_eq!(d.sample_n(10, 4), d.sample_n(10, 4));
    let f = SmoothingDistribution::new(NoiseKind::FoldedGaussian, 1.0, 3).unwrap();
    assert!(f.sample_n(1000, 2).iter().flatten().all(|&x| x >= 0.0));
    assert!(SmoothingDistribution::gaussian(0.0, 1).is_err());
    assert!("uniform".parse::<NoiseKind>().is_err());
}

/// One-dimensional step classifier `f(z) = 1{z > 0}` smoothed with
/// `N(0, σ²)`. `G` comes from Simpson integration of the density over the
/// accepting half-line; the derivative from central differences.
#[test]
fn step_classifier_gradient_is_bounded_by_phi() {
    let sigma = 0.8;
    let phi = gaussian(sigma);
    let g = |x: f64| adaptive_simpson(|t| normal_pdf(t / sigma) / sigma, -x, -x + 12.0 * sigma, 1e-12).unwrap();
    let h = 1e-4;
    for i in 0..50 {
        let x = -2.0 + 4.0 * i as f64 / 49.0;
        let gx = g(x);
        let d = (g(x + h) - g(x - h)) / (2.0 * h);
        assert!(d.abs() <= phi.eval(gx.clamp(1e-12, 1.0 - 1e-12)).unwrap() + 1e-3, "x={x}");
    }
}

/// Gauss-Hermite check of the same bound for a soft classifier.
#[test]
fn soft_classifier_gradient_is_bounded_by_phi() {
    let sigma = 0.5;
    let phi = gaussian(sigma);
    let (nodes, weights) = normal_rule(64);
    let f = |z: f64| 1.0 / (1.0 + (-4.0 * (z - 0.3)).exp());
    let g = |x: f64| nodes.iter().zip(&weights).map(|(t, w)| w * f(x + sigma * t)).sum::<f64>();
    let h = 1e-4;
    let mut r = rng::stream(2, 0);
    for _ in 0..25 {
        let x: f64 = r.random_range(-1.5..1.5);
        let d = (g(x + h) - g(x - h)) / (2.0 * h);
        assert!(d.abs() <= phi.eval(g(x)).unwrap() + 1e-3);
    }
}

proptest! {
    #[test]
    fn radius_increases_in_pa_and_decreases_in_pb(pb in 0.01f64..0.4, d1 in 0.01f64..0.2, d2 in 0.01f64..0.2) {
        for phi in [gaussian(1.0), Phi::new(SmoothingDistribution::new(NoiseKind::FoldedGaussian, 1.0, 1).unwrap(), 0)] {
            let pa = pb + d1;
            let r = phi.radius_integral(pa, pb).unwrap();
            prop_assert!(phi.radius_integral((pa + d2).min(0.999), pb).unwrap() > r);
            prop_assert!(phi.radius_integral(pa, pb - pb * 0.5).unwrap() > r);
        }
    }

    #[test]
    fn lower_bound_never_exceeds_the_point_estimate(n in 1u64..500, frac in 0.0f64..1.0, alpha in 0.0001f64..0.2) {
        let k = ((n as f64) * frac) as u64;
        let lb = clopper_pearson_lower(k, n, alpha).unwrap();
        prop_assert!((0.0..=k as f64 / n as f64).contains(&lb));
    }
}
