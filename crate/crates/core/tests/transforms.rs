use gsmooth_core::data::generate_synthetic_shapes;
use gsmooth_core::linalg::largest_singular_value;
use gsmooth_core::transforms::{TransformKind, TransformSpec};
use gsmooth_core::Image;
use proptest::prelude::*;

fn shapes(n: usize) -> Vec<Image> {
    generate_synthetic_shapes(n, 16, 4, 11).unwrap().images
}

fn neutral(kind: TransformKind) -> Vec<f64> {
    vec![0.0; kind.param_dim()]
}

#[test]
fn neutral_parameter_returns_the_input_for_every_kind() {
    let x = &shapes(4)[1];
    for kind in TransformKind::ALL {
        let y = TransformSpec::new(kind).apply(&neutral(kind), x).unwrap();
        assert_eq!(y.data, x.data, "{kind}");
    }
}

#[test]
fn quarter_turn_permutes_a_2x2_image() {
    let x = Image::new(1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let y = TransformSpec::new(TransformKind::Rotation).apply(&[90.0], &x).unwrap();
    let mut got = y.data.clone();
    let mut want = x.data.clone();
    got.sort_by(f32::total_cmp);
    want.sort_by(f32::total_cmp);
    assert_eq!(got, want);
    assert_ne!(y.data, x.data);
    // four quarter turns close the orbit
    let spec = TransformSpec::new(TransformKind::Rotation);
    let mut z = x.clone();
    for _ in 0..4 {
        z = spec.apply(&[90.0], &z).unwrap();
    }
    assert_eq!(z.data, x.data);
}

#[test]
fn composition_examples() {
    let t = TransformSpec::new(TransformKind::Translation);
    assert_eq!(t.compose(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), vec![3.0, 0.0]);
    let b = TransformSpec::new(TransformKind::GaussianBlur);
    assert_eq!(b.compose(&[0.7], &[1.1]).unwrap(), vec![0.7 + 1.1]);
    let bc = TransformSpec::new(TransformKind::BrightnessContrast);
    let g = bc.compose(&[0.2, 0.05], &[-0.1, 0.3]).unwrap();
    assert!((g[0] - 0.1).abs() < 1e-15);
    assert!((g[1] - (0.2f64.exp() * 0.3 + 0.05)).abs() < 1e-15);
}

#[test]
fn translation_composition_is_exact_for_integral_and_fractional_shifts() {
    let spec = TransformSpec::new(TransformKind::Translation);
    let pairs = [
        ([2.0, -3.0], [1.5, 0.25]),
        ([-1.0, 4.0], [-2.0, 1.0]),
        ([0.75, -0.5], [3.0, -2.0]),
        ([0.3, -1.7], [1.45, 0.6]),
        ([-2.35, 0.9], [4.1, -3.3]),
    ];
    for x in shapes(6) {
        for (a, b) in pairs {
            let lhs = spec.apply(&a, &spec.apply(&b, &x).unwrap()).unwrap();
            let rhs = spec.apply(&spec.compose(&a, &b).unwrap(), &x).unwrap();
            assert!(lhs.max_abs_diff(&rhs) <= 1e-6, "{a:?} {b:?}: {}", lhs.max_abs_diff(&rhs));
        }
    }
}

#[test]
fn blur_composition_holds_within_truncation_error() {
    let spec = TransformSpec::new(TransformKind::GaussianBlur);
    for x in shapes(6) {
        for (a, b) in [(0.5, 0.5), (1.0, 2.0), (0.3, 1.7), (2.0, 2.0)] {
            let lhs = spec.apply(&[a], &spec.apply(&[b], &x).unwrap()).unwrap();
            let rhs = spec.apply(&spec.compose(&[a], &[b]).unwrap(), &x).unwrap();
            assert!(lhs.max_abs_diff(&rhs) <= 1e-3, "{a} {b}: {}", lhs.max_abs_diff(&rhs));
        }
    }
}

#[test]
fn brightness_contrast_composition_is_exact_before_clamping() {
    let spec = TransformSpec::new(TransformKind::BrightnessContrast);
    for x in shapes(4) {
        for (a, b) in [([0.3, -0.2], [-0.1, 0.4]), ([-0.4, 0.4], [0.4, -0.4]), ([0.1, 0.0], [0.0, 0.1])] {
            let lhs = spec.apply_raw(&a, &spec.apply_raw(&b, &x).unwrap()).unwrap();
            let rhs = spec.apply_raw(&spec.compose(&a, &b).unwrap(), &x).unwrap();
            assert!(lhs.max_abs_diff(&rhs) <= 1e-6);
        }
    }
}

/// Independent route to `M*` for brightness-contrast: finite-difference
/// Jacobians of the composition law, `M = (∂γ/∂θ)⁻¹ ∂γ/∂ξ`, and a full SVD
/// at every point of a dense grid over `P × P`.
#[test]
fn brightness_contrast_m_star_matches_finite_difference_oracle() {
    let spec = TransformSpec::new(TransformKind::BrightnessContrast);
    let h = 1e-6;
    let (lo, hi) = spec.space[0];
    let g = 100;
    let at = |i: usize| lo + (hi - lo) * i as f64 / (g - 1) as f64;
    let mut oracle: f64 = 0.0;
    for i in 0..g {
        for j in 0..g {
            let theta = [at(i), 0.0];
            let xi = [0.0, at(j)];
            let jac = |wrt_theta: bool| {
                let mut m = [0.0; 4];
                for k in 0..2 {
                    let (mut tp, mut tm, mut xp, mut xm) = (theta, theta, xi, xi);
                    if wrt_theta {
                        tp[k] += h;
                        tm[k] -= h;
                    } else {
                        xp[k] += h;
                        xm[k] -= h;
                    }
                    let p = spec.compose(&tp, &xp).unwrap();
                    let q = spec.compose(&tm, &xm).unwrap();
                    for r in 0..2 {
                        m[r * 2 + k] = (p[r] - q[r]) / (2.0 * h);
                    }
                }
                nalgebra::Matrix2::new(m[0], m[1], m[2], m[3])
            };
            let m = jac(true).try_inverse().unwrap() * jac(false);
            let flat = [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]];
            oracle = oracle.max(largest_singular_value(2, 2, &flat));
        }
    }
    let got = spec.resolvable_m_star(100).unwrap();
    assert!((got - oracle).abs() / oracle < 1e-6, "{got} vs {oracle}");
    assert_eq!(TransformSpec::new(TransformKind::Translation).resolvable_m_star(100).unwrap(), 1.0);
    assert_eq!(TransformSpec::new(TransformKind::GaussianBlur).resolvable_m_star(100).unwrap(), 1.0);
}

#[test]
fn non_resolvable_witnesses_exceed_ten_times_tolerance() {
    let x = &shapes(3)[0];
    for (kind, theta, xi) in [(TransformKind::Rotation, 20.0, 25.0), (TransformKind::ZoomBlur, 0.3, 0.4)] {
        let spec = TransformSpec::new(kind);
        let (lo, hi) = (spec.space[0].0 * 1.5, spec.space[0].1 * 1.5);
        let candidates: Vec<Vec<f64>> = (0..=2000).map(|i| vec![lo + (hi - lo) * i as f64 / 2000.0]).collect();
        let gap = spec.composition_gap(&[theta], &[xi], x, &candidates).unwrap();
        assert!(gap > 1e-2, "{kind}: gap {gap}");
        assert!(spec.compose(&[theta], &[xi]).is_err());
    }
}

#[test]
fn out_of_domain_parameters_are_rejected() {
    let spec = TransformSpec::new(TransformKind::GaussianBlur);
    let x = &shapes(1)[0];
    assert!(spec.apply(&[-1.0], x).is_err());
    assert!(spec.apply_in_space(&[5.0], x).is_err());
    assert!(spec.apply(&[f64::NAN], x).is_err());
    assert!(TransformSpec::with_space(TransformKind::Translation, vec![(-1.0, 1.0)]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outputs_stay_in_unit_range(k in 0usize..11, u in prop::collection::vec(0.0f64..1.0, 2), idx in 0usize..8) {
        let kind = TransformKind::ALL[k];
        let spec = TransformSpec::new(kind);
        let theta: Vec<f64> = spec.space.iter().zip(&u).map(|(&(lo, hi), t)| lo + (hi - lo) * t).collect();
        let x = &shapes(8)[idx];
        let y = spec.apply(&theta, x).unwrap();
        prop_assert!(y.same_dims(x));
        if kind == TransformKind::Translation {
            // band-limited shifts may ring past the range but never add energy
            let energy = |im: &Image| im.data.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
            prop_assert!(energy(&y) <= energy(x) * (1.0 + 1e-5));
        } else {
            prop_assert!(y.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn fractional_translations_add(u in prop::collection::vec(-6.0f64..6.0, 4)) {
        let spec = TransformSpec::new(TransformKind::Translation);
        let x = &shapes(2)[0];
        let (p, q) = ([u[0], u[1]], [u[2], u[3]]);
        let lhs = spec.apply(&p, &spec.apply(&q, x).unwrap()).unwrap();
        let rhs = spec.apply(&spec.compose(&p, &q).unwrap(), x).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-6);
    }

    #[test]
    fn integral_translations_add(a in -8i32..8, b in -8i32..8, c in -8i32..8, d in -8i32..8) {
        let spec = TransformSpec::new(TransformKind::Translation);
        let x = &shapes(2)[1];
        let (p, q) = ([a as f64, b as f64], [c as f64, d as f64]);
        let lhs = spec.apply(&p, &spec.apply(&q, x).unwrap()).unwrap();
        let rhs = spec.apply(&spec.compose(&p, &q).unwrap(), x).unwrap();
        prop_assert_eq!(lhs.data, rhs.data);
    }

    #[test]
    fn brightness_contrast_law_holds_inside_the_box(u in prop::collection::vec(-0.4f64..0.4, 4)) {
        let spec = TransformSpec::new(TransformKind::BrightnessContrast);
        let x = &shapes(2)[0];
        let (a, b) = ([u[0], u[1]], [u[2], u[3]]);
        let lhs = spec.apply_raw(&a, &spec.apply_raw(&b, x).unwrap()).unwrap();
        let rhs = spec.apply_raw(&spec.compose(&a, &b).unwrap(), x).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-6);
    }
}
