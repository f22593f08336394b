use proptest::prelude::*;
use sflab::coords::{build_privileged, round_trip_defect};
use sflab::nilpotent::{approximate_at, verify_homogeneity, verify_nilpotency};
use sflab::structure::{fixtures::*, NormFamily, DEFAULT_DEPTH_CAP};
use sflab::symvf::rat;

#[test]
fn grushin_is_singular_on_the_axis() {
    let g = grushin();
    let sing = g.flag_at(&[0.0, 0.3], DEFAULT_DEPTH_CAP).unwrap();
    assert_eq!(sing.growth, vec![1, 2]);
    assert_eq!(sing.homogeneous_dimension, 3);
    let reg = g.flag_at(&[0.5, 0.3], DEFAULT_DEPTH_CAP).unwrap();
    assert_eq!(reg.growth, vec![2]);
    assert_eq!(reg.homogeneous_dimension, 2);
}

#[test]
fn euclidean_tangent_is_itself() {
    let (_, nil) = approximate_at(&euclidean(3), &[0.1, 0.2, 0.3], false).unwrap();
    let rep = verify_nilpotency(&nil, 3).unwrap();
    assert_eq!(rep.step_found, 1);
    assert_eq!(rep.center_dimension, 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // privileged charts at random base points: exact inverse, certified weights, homogeneous tangent
    #[test]
    fn charts_at_random_points(x in -4i64..=4, y in -4i64..=4, z in -4i64..=4) {
        let s = contact_perturbed(NormFamily::lp(2, 1.5));
        let q = [x as f64 / 8.0, y as f64 / 8.0, z as f64 / 8.0];
        let chart = build_privileged(&s, &q, None).unwrap();
        prop_assert!(chart.certify(&s).is_ok());
        prop_assert!(round_trip_defect(&chart).unwrap().iter().all(|p| p.is_zero()));
        let (_, nil) = approximate_at(&s, &q, false).unwrap();
        prop_assert!(verify_homogeneity(&nil, &[rat(1, 2), rat(3, 5)]).unwrap());
        let rep = verify_nilpotency(&nil, 4).unwrap();
        prop_assert_eq!(rep.step_found, 2);
        prop_assert_eq!(rep.algebra_dimension, 3);
    }
}
