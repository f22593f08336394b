use proptest::prelude::*;
use sflab::geodesic::*;
use sflab::structure::{fixtures::*, NormFamily};

/// Heisenberg ℓ² distance from 0 to (x, y, z): solve (φ − sin φ)/(8 sin²(φ/2)) = |z|/r² for φ ∈ [0, 2π),
/// then d = r φ / (2 sin(φ/2)); on the vertical axis d = √(4π|z|).
fn heisenberg_oracle(p: &[f64]) -> f64 {
    let r2 = p[0] * p[0] + p[1] * p[1];
    let z = p[2].abs();
    if r2 == 0.0 {
        return (4.0 * std::f64::consts::PI * z).sqrt();
    }
    let mu = |phi: f64| if phi < 1e-6 { phi / 12.0 } else { (phi - phi.sin()) / (8.0 * (phi / 2.0).sin().powi(2)) };
    let target = z / r2;
    let (mut a, mut b) = (0.0, 2.0 * std::f64::consts::PI - 1e-12);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if mu(m) < target {
            a = m;
        } else {
            b = m;
        }
    }
    let phi = 0.5 * (a + b);
    if phi < 1e-9 {
        r2.sqrt()
    } else {
        r2.sqrt() * phi / (2.0 * (phi / 2.0).sin())
    }
}

fn opts() -> DistanceOptions {
    DistanceOptions::fast()
}

#[test]
fn heisenberg_matches_closed_form() {
    let h = heisenberg(NormFamily::euclidean(2));
    for p in [[0.3, -0.2, 0.1], [0.0, 0.0, 0.5], [-0.5, 0.4, -0.3], [0.6, 0.0, 0.05]] {
        let d = distance(&h, &[0.0; 3], &p, &opts()).unwrap();
        let o = heisenberg_oracle(&p);
        assert!((d.value - o).abs() <= 0.01 * o, "{p:?}: {} vs {o}", d.value);
        assert!(d.endpoint_error <= 1e-6);
    }
}

#[test]
fn certificate_paths_reproduce_their_endpoints() {
    let h = heisenberg(NormFamily::lp(2, 1.5));
    let b = [0.4, 0.1, -0.2];
    let c = distance(&h, &[0.0; 3], &b, &opts()).unwrap();
    let end = integrate(&h, &[0.0; 3], &c.path, 64).unwrap();
    let err: f64 = end.end().iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-5, "endpoint error {err}");
    assert!((path_length(&h, &[0.0; 3], &c.path).unwrap() - c.value).abs() <= 1e-9);
    let mid = point_at(&h, &[0.0; 3], &c.path, 0.5).unwrap();
    let d1 = distance(&h, &[0.0; 3], &mid, &opts()).unwrap().value;
    let d2 = distance(&h, &mid, &b, &opts()).unwrap().value;
    assert!((d1 - c.value / 2.0).abs() <= 0.02 * c.value && (d2 - c.value / 2.0).abs() <= 0.02 * c.value);
}

#[test]
fn linf_ratio_stays_in_the_norm_equivalence_interval() {
    let h2 = heisenberg(NormFamily::euclidean(2));
    let hi = heisenberg(NormFamily::lp(2, f64::INFINITY));
    let gap = opts().gap;
    for p in [[0.5, 0.2, 0.1], [0.0, 0.3, 0.3], [-0.4, -0.4, 0.0]] {
        let a = distance(&hi, &[0.0; 3], &p, &opts()).unwrap().value;
        let b = distance(&h2, &[0.0; 3], &p, &opts()).unwrap().value;
        let ratio = a / b;
        assert!(ratio >= 1.0 / 2f64.sqrt() - 2.0 * gap && ratio <= 1.0 + 2.0 * gap, "ratio {ratio}");
    }
}

#[test]
fn lower_hint_is_sound() {
    let e = euclidean(3);
    let c = distance(&e, &[0.0; 3], &[1.0, 2.0, 2.0], &opts()).unwrap();
    assert!((c.lower_hint - 3.0).abs() < 1e-9);
    assert!(c.value >= c.lower_hint - 1e-9);
}

#[test]
fn out_of_chart_is_reported() {
    let e = euclidean(2);
    let path = ControlPath::constant(vec![100.0, 0.0], 4);
    assert!(matches!(integrate(&e, &[0.0, 0.0], &path, 8), Err(sflab::SflabError::OutOfChart { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn triangle_inequality(p in prop::collection::vec(-0.4f64..0.4, 9)) {
        let h = heisenberg(NormFamily::lp(2, 1.5));
        let o = opts();
        let (a, b, c) = (&p[0..3], &p[3..6], &p[6..9]);
        let ab = distance(&h, a, b, &o).unwrap().value;
        let bc = distance(&h, b, c, &o).unwrap().value;
        let ac = distance(&h, a, c, &o).unwrap().value;
        prop_assert!(ac <= ab + bc + 3.0 * o.gap);
    }

    #[test]
    fn distance_is_symmetric_within_gap(p in prop::collection::vec(-0.4f64..0.4, 6)) {
        let h = heisenberg(NormFamily::euclidean(2));
        let o = opts();
        let ab = distance(&h, &p[0..3], &p[3..6], &o).unwrap().value;
        let ba = distance(&h, &p[3..6], &p[0..3], &o).unwrap().value;
        prop_assert!((ab - ba).abs() <= o.gap * ab.max(ba) + 1e-9);
    }
}
