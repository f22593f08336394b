use proptest::prelude::*;
use sflab::geodesic::{distance, eps_structure, DistanceOptions};
use sflab::measure::{DensityModel, TestFunction};
use sflab::nilpotent::approximate_at;
use sflab::pmgh::*;
use sflab::structure::{fixtures::*, NormFamily};
use sflab::symvf::rat;

fn small() -> TangentCheckOptions {
    TangentCheckOptions { grid_size: 3, ..Default::default() }
}

#[test]
fn heisenberg_sample_matches_the_eps_distance() {
    let h = heisenberg(NormFamily::euclidean(2));
    let s = blowup_sample(&h, &DensityModel::constant(1.0), &[0.0; 3], 0.25, &small()).unwrap();
    assert_eq!(s.points[s.basepoint], vec![0.0; 3]);
    let (chart, nil) = approximate_at(&h, &[0.0; 3], false).unwrap();
    let se = eps_structure(&chart.structure_in_chart(&h).unwrap(), &nil.dilations(), &rat(1, 4)).unwrap();
    let o = DistanceOptions::fast();
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            let d = distance(&se, &s.points[i], &s.points[j], &o).unwrap().value;
            assert!((s.metric[i][j] - d).abs() <= 0.05 * d, "{i},{j}: {} vs {d}", s.metric[i][j]);
        }
    }
}

#[test]
fn euclidean_blowups_carry_uniform_weights() {
    let e = euclidean(2);
    let s = blowup_sample(&e, &DensityModel::constant(2.0), &[0.5, -0.5], 0.125, &TangentCheckOptions { grid_size: 5, ..Default::default() }).unwrap();
    let w: Vec<f64> = s.weights.iter().copied().filter(|w| *w > 0.0).collect();
    assert!(w.iter().all(|x| (x - w[0]).abs() < 1e-12));
    assert_eq!(s.weights[s.basepoint], 0.0);
}

#[test]
fn discrepancy_of_the_zero_function_vanishes() {
    let s = PointedSample::new(vec![vec![0.1], vec![0.4]], 0, vec![vec![0.0, 0.3], vec![0.3, 0.0]], vec![0.5, 0.5]).unwrap();
    let d = measure_discrepancy(&s, &[0.1, 0.4], &[TestFunction::Zero], &[0.0]).unwrap();
    assert_eq!(d, 0.0);
}

#[test]
fn half_ball_sample_has_positive_coverage_defect() {
    // tangent points on [-1, 1]; the sample only covers [0, 1]
    let tangent: Vec<f64> = (-10..=10).map(|i| i as f64 / 10.0).collect();
    let pts: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let metric: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| (a - b).abs()).collect()).collect();
    let s = PointedSample::new(pts.iter().map(|p| vec![*p]).collect(), 0, metric, vec![0.1; pts.len()]).unwrap();
    let defect = coverage_defect(&s, tangent.len(), |t, i| (tangent[t] - pts[i]).abs(), 0.0);
    assert!((defect - 1.0).abs() < 1e-12);
    let full: Vec<f64> = tangent.iter().copied().filter(|t| *t >= 0.0).collect();
    assert_eq!(coverage_defect(&s, full.len(), |t, i| (full[t] - pts[i]).abs(), 0.0), 0.0);
}

fn metric(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
        .prop_map(|p| p.iter().map(|a| p.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn identity_distortion_bounds_the_exhaustive_optimum(a in metric(5), b in metric(5)) {
        let s = PointedSample::new((0..5).map(|i| vec![i as f64]).collect(), 0, a.clone(), vec![0.2; 5]).unwrap();
        let direct = distortion(&s, |i, j| b[i][j]);
        let best = exhaustive_distortion(&a, &b).unwrap();
        prop_assert!(best <= direct + 1e-15);
        prop_assert_eq!(exhaustive_distortion(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn closure_restores_the_triangle_inequality(mut m in metric(6), bumps in prop::collection::vec(0.0f64..0.5, 15)) {
        let mut k = 0;
        for i in 0..6 {
            for j in i + 1..6 {
                m[i][j] += bumps[k];
                m[j][i] = m[i][j];
                k += 1;
            }
        }
        let before = m.clone();
        metric_closure(&mut m);
        prop_assert!(PointedSample::new((0..6).map(|i| vec![i as f64]).collect(), 0, m.clone(), vec![0.0; 6]).is_ok());
        for i in 0..6 {
            for j in 0..6 {
                prop_assert!(m[i][j] <= before[i][j]);
            }
        }
    }
}
