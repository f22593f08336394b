use proptest::prelude::*;
use sflab::cdlab::*;
use sflab::geodesic::DistanceOptions;
use sflab::structure::fixtures::*;

fn measure(n: usize) -> impl Strategy<Value = DiscreteMeasure> {
    (prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n), prop::collection::vec(0.01f64..1.0, n), prop::collection::vec(0.01f64..2.0, n)).prop_map(
        |(pts, w, v)| {
            let total: f64 = w.iter().sum();
            DiscreteMeasure::new(pts.into_iter().map(|(x, y)| vec![x, y]).collect(), w.iter().map(|m| m / total).collect(), v).unwrap()
        },
    )
}

fn cheap() -> CdOptions {
    CdOptions { distance: DistanceOptions { segments: vec![8], starts: 0, ..Default::default() }, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropy_ignores_support_order(mu in measure(6), n in 1.1f64..20.0, rot in 0usize..6) {
        let mut idx: Vec<usize> = (0..6).collect();
        idx.rotate_left(rot);
        let perm = DiscreteMeasure::new(
            idx.iter().map(|&i| mu.support[i].clone()).collect(),
            idx.iter().map(|&i| mu.masses[i]).collect(),
            idx.iter().map(|&i| mu.cell_volumes[i]).collect(),
        ).unwrap();
        prop_assert!((renyi_entropy(&mu, n).unwrap() - renyi_entropy(&perm, n).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn splitting_a_cell_keeps_the_entropy(mu in measure(5), n in 1.1f64..20.0, k in 0usize..5) {
        let mut support = mu.support.clone();
        let mut masses = mu.masses.clone();
        let mut vols = mu.cell_volumes.clone();
        masses[k] /= 2.0;
        vols[k] /= 2.0;
        support.push(support[k].clone());
        masses.push(masses[k]);
        vols.push(vols[k]);
        let split = DiscreteMeasure::new(support, masses, vols).unwrap();
        prop_assert!((renyi_entropy(&mu, n).unwrap() - renyi_entropy(&split, n).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn lp_matches_brute_force(n in 1usize..=6, c in prop::collection::vec(0.0f64..10.0, 36)) {
        let cost: Vec<Vec<f64>> = (0..n).map(|i| c[i * 6..i * 6 + n].to_vec()).collect();
        let a = vec![1.0 / n as f64; n];
        let plan = optimal_plan(&cost, &a, &a).unwrap();
        let (_, best) = brute_force_assignment(&cost).unwrap();
        prop_assert!((plan.cost - best).abs() <= 1e-9 * (1.0 + best));
    }
}

#[test]
fn interpolation_endpoints_are_exact() {
    let e = euclidean(2);
    let a = DiscreteMeasure::uniform_box(&[0.0, 0.0], &[0.5, 0.5], 2).unwrap();
    let b = DiscreteMeasure::uniform_box(&[1.0, 0.0], &[0.25, 0.5], 2).unwrap();
    assert_eq!(w2_interpolate(&e, &a, &b, 0.0, &cheap()).unwrap(), a);
    assert_eq!(w2_interpolate(&e, &a, &b, 1.0, &cheap()).unwrap(), b);
    assert!(w2_interpolate(&e, &a, &b, 1.5, &cheap()).is_err());
}

#[test]
fn heisenberg_point_masses_meet_on_the_certificate_path() {
    let h = heisenberg(sflab::structure::NormFamily::euclidean(2));
    let a = DiscreteMeasure::dirac(vec![0.0; 3], 1.0).unwrap();
    let b = DiscreteMeasure::dirac(vec![1.0, 1.0, 0.0], 1.0).unwrap();
    let o = CdOptions::default();
    let m = w2_interpolate(&h, &a, &b, 0.5, &o).unwrap();
    // oracle: integrate the certificate's control over the first half of its length
    let c = sflab::geodesic::distance(&h, &a.support[0], &b.support[0], &o.distance).unwrap();
    assert!(c.endpoint_error <= 1e-6);
    let half = sflab::geodesic::ControlPath::new(c.path.controls[..c.path.segments / 2].iter().map(|u| u.iter().map(|v| v * 0.5).collect()).collect()).unwrap();
    let oracle = sflab::geodesic::integrate(&h, &a.support[0], &half, 64).unwrap();
    let err: f64 = m.support[0].iter().zip(oracle.end()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-3, "midpoint {:?} vs oracle {:?}", m.support[0], oracle.end());
}

#[test]
fn euclidean_pairs_satisfy_the_midpoint_inequality() {
    let e = euclidean(2);
    let fam = random_box_pairs(2, 5, 3, 1.0, (0.2, 0.8), 7).unwrap();
    let rep = violation_search(&e, &fam, &[2.0, 5.0, 10.0], 0.0, 100, &cheap()).unwrap();
    assert_eq!(rep.evaluated, 15);
    assert!(rep.violations.is_empty(), "{:?}", rep.violations);
    let keys: Vec<f64> = rep.ranked.iter().map(|c| c.report.deficit - c.report.eps_disc).collect();
    assert!(keys.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn budget_limits_evaluations() {
    let e = euclidean(2);
    let fam = random_box_pairs(2, 4, 2, 1.0, (0.2, 0.8), 1).unwrap();
    let rep = violation_search(&e, &fam, &[2.0, 3.0], 0.0, 3, &cheap()).unwrap();
    assert_eq!(rep.evaluated, 3);
    assert!(violation_search(&e, &fam, &[2.0], 0.0, 0, &cheap()).is_err());
}
