//! Acceptance suite: one line per criterion with PASS/FAIL, pinned tolerances below.
//!
//! Runs as a plain binary (`harness = false`) so the per-criterion lines always reach the
//! terminal.  Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 9 10`.  `SFLAB_ACCEPTANCE_FULL=1` runs the blow-up check at
//! the full ~100-point sample size instead of the reduced default.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sflab::cdlab::*;
use sflab::coords::{build_privileged, nonholonomic_order, PrivilegedChart};
use sflab::experiments::{convergence_experiment, convergence_grid, default_pairs, run, scaling_experiment, ExperimentConfig, EXPERIMENTS};
use sflab::geodesic::{ball_box_check, distance, DistanceOptions};
use sflab::measure::*;
use sflab::nilpotent::{approximate_at, verify_homogeneity, verify_nilpotency};
use sflab::pmgh::{tangent_check, TangentCheckOptions};
use sflab::structure::{fixtures::*, NormFamily, DEFAULT_DEPTH_CAP};
use sflab::symvf::{apply_derivation, lie_bracket, rat, PolyScalar, PolyVectorField};

const SEED: u64 = 20240917;
const BRACKET_FIELDS: usize = 100;
const BRACKET_SECONDS: f64 = 10.0;
const EUCLID_DIST_TOL: f64 = 1e-6;
const HEIS_DIST_REL: f64 = 0.01;
const DIST_SECONDS: f64 = 60.0;
const SCALING_REL: f64 = 0.02;
const SCALING_SECONDS: f64 = 600.0;
const CONVERGENCE_FINAL: f64 = 0.05;
const CONVERGENCE_SECONDS: f64 = 1800.0;
const BALLBOX_RADII: [f64; 3] = [0.1, 0.2, 0.4];
const AHLFORS_HEIS_REL: f64 = 0.05;
const AHLFORS_EUCLID_REL: f64 = 0.03;
const MQ_REL: f64 = 0.03;
const PMGH_FINAL_DISTORTION: f64 = 0.05;
const PMGH_SECONDS: f64 = 3600.0;
const CD_PAIRS: usize = 20;
const CD_N: [f64; 3] = [2.0, 5.0, 10.0];

type Check = fn() -> (bool, String);

fn main() {
    let criteria: [(u32, &str, Check); 13] = [
        (1, "symbolic exactness of brackets", c1_brackets),
        (2, "Heisenberg flag", c2_flag),
        (3, "privileged certification", c3_privileged),
        (4, "nilpotent approximation of the contact fixture", c4_nilpotent),
        (5, "distance solver sanity", c5_distances),
        (6, "scaling identity", c6_scaling),
        (7, "convergence to the tangent distance", c7_convergence),
        (8, "Ball-Box constant", c8_ballbox),
        (9, "Ahlfors exponents", c9_ahlfors),
        (10, "tangent normalization", c10_mq),
        (11, "pmGH tangent", c11_pmgh),
        (12, "CD sanity", c12_cd),
        (13, "determinism", c13_determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => (false, format!("panicked: {}", e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())),
        };
        let status = if ok { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} [{status}] {name}: {detail} ({:.1}s)", t.elapsed().as_secs_f64());
        if !ok {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

fn random_poly(rng: &mut ChaCha8Rng, n: usize) -> PolyScalar {
    let terms = (0..rng.gen_range(1..=4)).map(|_| {
        let mut e = vec![0u32; n];
        for _ in 0..rng.gen_range(0..=3) {
            e[rng.gen_range(0..n)] += 1;
        }
        (e, rat(rng.gen_range(-9..=9), rng.gen_range(1..=5)))
    });
    PolyScalar::from_terms(n, terms).unwrap()
}

fn c1_brackets() -> (bool, String) {
    let t = Instant::now();
    let n = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let fields: Vec<PolyVectorField> = (0..BRACKET_FIELDS).map(|_| PolyVectorField::new((0..n).map(|_| random_poly(&mut rng, n)).collect()).unwrap()).collect();
    let mut bad = 0;
    for i in 0..BRACKET_FIELDS {
        let (x, y, z) = (&fields[i], &fields[(i + 1) % BRACKET_FIELDS], &fields[(i + 2) % BRACKET_FIELDS]);
        let xy = lie_bracket(x, y).unwrap();
        if !xy.add(&lie_bracket(y, x).unwrap()).unwrap().is_zero() {
            bad += 1;
        }
        let jac = lie_bracket(x, &lie_bracket(y, z).unwrap())
            .unwrap()
            .add(&lie_bracket(y, &lie_bracket(z, x).unwrap()).unwrap())
            .unwrap()
            .add(&lie_bracket(z, &xy).unwrap())
            .unwrap();
        if !jac.is_zero() {
            bad += 1;
        }
        let (f, g) = (random_poly(&mut rng, n), random_poly(&mut rng, n));
        let lhs = apply_derivation(x, &(&f * &g)).unwrap();
        let rhs = &(&apply_derivation(x, &f).unwrap() * &g) + &(&f * &apply_derivation(x, &g).unwrap());
        if lhs != rhs {
            bad += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    (bad == 0 && secs < BRACKET_SECONDS, format!("{bad} identity failures on {BRACKET_FIELDS} fields in {secs:.2}s (limit {BRACKET_SECONDS}s)"))
}

fn c2_flag() -> (bool, String) {
    let f = heisenberg(NormFamily::euclidean(2)).flag_at(&[0.0; 3], DEFAULT_DEPTH_CAP).unwrap();
    let ok = f.growth == vec![2, 3] && f.weights.as_slice() == [1, 1, 2] && f.step == 2 && f.homogeneous_dimension == 4;
    (ok, format!("growth {:?}, weights {:?}, step {}, Q {}", f.growth, f.weights.as_slice(), f.step, f.homogeneous_dimension))
}

fn c3_privileged() -> (bool, String) {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, s) in [("heisenberg", heisenberg(NormFamily::euclidean(2))), ("grushin", grushin()), ("contact", contact_perturbed(NormFamily::lp(2, 1.5)))] {
        let q = vec![0.0; s.dim()];
        let chart = build_privileged(&s, &q, None).unwrap();
        let orders: Vec<Option<usize>> = chart.forward.iter().map(|z| nonholonomic_order(&s, &q, z, 8).unwrap()).collect();
        let expected: Vec<Option<usize>> = chart.weights.as_slice().iter().map(|w| Some(*w as usize)).collect();
        let good = chart.certify(&s).is_ok() && orders == expected;
        ok &= good;
        detail.push(format!("{name} orders {orders:?}"));
    }
    (ok, detail.join("; "))
}

fn c4_nilpotent() -> (bool, String) {
    let s = contact_perturbed(NormFamily::lp(2, 1.5));
    let (_, nil) = approximate_at(&s, &[0.0; 3], false).unwrap();
    let homogeneous = verify_homogeneity(&nil, &[rat(1, 2), rat(1, 3), rat(3, 7), rat(5, 2)]).unwrap();
    let rep = verify_nilpotency(&nil, 4).unwrap();
    let ok = homogeneous && rep.step_found == 2 && rep.algebra_dimension == 3 && rep.center_dimension == 1 && rep.hoermander_at_0;
    (ok, format!("homogeneous {homogeneous}, step {}, algebra dim {}, centre dim {}", rep.step_found, rep.algebra_dimension, rep.center_dimension))
}

fn c5_distances() -> (bool, String) {
    let t = Instant::now();
    let o = DistanceOptions::default();
    let e = distance(&euclidean(2), &[0.0, 0.0], &[3.0, 4.0], &o).unwrap().value;
    let h2 = distance(&heisenberg(NormFamily::euclidean(2)), &[0.0; 3], &[1.0, 0.0, 0.0], &o).unwrap().value;
    let hi = distance(&heisenberg(NormFamily::lp(2, f64::INFINITY)), &[0.0; 3], &[1.0, 1.0, 0.0], &o).unwrap().value;
    let secs = t.elapsed().as_secs_f64();
    let ok = (e - 5.0).abs() <= EUCLID_DIST_TOL && (h2 - 1.0).abs() <= HEIS_DIST_REL && (hi - 1.0).abs() <= HEIS_DIST_REL && secs < DIST_SECONDS;
    (ok, format!("euclidean {e:.9}, heisenberg l2 {h2:.6}, heisenberg linf {hi:.6} in {secs:.1}s"))
}

fn c6_scaling() -> (bool, String) {
    let t = Instant::now();
    let s = contact_perturbed(NormFamily::lp(2, 1.5));
    let r = scaling_experiment(&s, &[0.0; 3], &default_pairs(3), &[0.5, 0.25, 0.125], &DistanceOptions::default()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    (r.max_rel_error <= SCALING_REL && secs < SCALING_SECONDS, format!("max relative error {:.2e} over {} rows (tolerance {SCALING_REL})", r.max_rel_error, r.rows.len()))
}

fn c7_convergence() -> (bool, String) {
    let t = Instant::now();
    let s = contact_perturbed(NormFamily::lp(2, 1.5));
    let (a, b) = convergence_grid(3);
    let r = convergence_experiment(&s, &[0.0; 3], &a, &b, 5, &DistanceOptions::default()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let errs: Vec<String> = r.rows.iter().map(|x| format!("{:.2e}", x.sup_error)).collect();
    let ok = r.strictly_decreasing && r.final_ratio < CONVERGENCE_FINAL && secs < CONVERGENCE_SECONDS;
    (ok, format!("sup errors m=0..5 [{}], final/diameter {:.3e}", errs.join(", "), r.final_ratio))
}

fn c8_ballbox() -> (bool, String) {
    let s = heisenberg(NormFamily::euclidean(2));
    let chart = PrivilegedChart::identity(&s, &[0.0; 3], None).unwrap();
    let constants: Vec<f64> = (0..12).map(|i| 1.0 + 0.25 * i as f64).collect();
    let r = ball_box_check(&s, &chart, &BALLBOX_RADII, &constants, 2, &DistanceOptions::fast()).unwrap();
    (r.c_q.is_some() && r.violations.is_empty(), format!("C_q = {:?}, {} violations, {} distance calls", r.c_q, r.violations.len(), r.distance_calls))
}

fn c9_ahlfors() -> (bool, String) {
    let radii = [0.05, 0.0707, 0.1, 0.1414, 0.2];
    let opts = QuadratureOptions::default();
    let h = heisenberg(NormFamily::euclidean(2));
    let profile = BallProfile::build(&h, &[0.0; 3], radii[0], radii[4], &opts).unwrap();
    let densities = [
        ("constant", DensityModel::constant(1.0)),
        ("sinusoid", DensityModel::new(DensityKind::Sinusoid { coordinate: 0, offset: 1.5, amplitude: 0.5, frequency: 1.0 }, (1.0, 2.0), &[(-2.0, 2.0); 3]).unwrap()),
        ("piecewise", DensityModel::seeded_piecewise(3, 0.5, 4, (0.5, 2.0), SEED).unwrap()),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, d) in &densities {
        let fit = ahlfors_fit(&curve_from_profile(&profile, d, &radii)).unwrap();
        ok &= ((fit.q_est - 4.0) / 4.0).abs() <= AHLFORS_HEIS_REL;
        detail.push(format!("heisenberg/{name} {:.4}", fit.q_est));
    }
    for n in [2usize, 3] {
        let e = euclidean(n);
        let fit = ahlfors_fit(&ball_measure_curve(&e, &DensityModel::constant(1.0), &vec![0.0; n], &radii, &opts).unwrap()).unwrap();
        ok &= ((fit.q_est - n as f64) / n as f64).abs() <= AHLFORS_EUCLID_REL;
        detail.push(format!("R{n} {:.4}", fit.q_est));
    }
    (ok, detail.join(", "))
}

/// Heisenberg ℓ² oracle: the unit sphere is swept by φ ↦ (r, z) = (2 sin(φ/2)/φ, (φ − sin φ)/(2φ²)),
/// φ ∈ (0, 2π), so |B| = 4π ∫ r z |r′| dφ, and ∫_B (1 − d) = |B|/(Q + 1) with Q = 4.
/// Shears (z ↦ z ± xy/2) preserve Lebesgue measure, so any chart of this form gives the same value.
fn heisenberg_mq_oracle() -> f64 {
    let r = |p: f64| 2.0 * (p / 2.0).sin() / p;
    let z = |p: f64| (p - p.sin()) / (2.0 * p * p);
    let dr = |p: f64| ((p / 2.0).cos() * p - 2.0 * (p / 2.0).sin()) / (p * p);
    let f = |p: f64| r(p) * z(p) * dr(p).abs();
    let (a, b, n) = (1e-6, 2.0 * std::f64::consts::PI, 20000);
    let h = (b - a) / n as f64;
    let simpson: f64 = (0..=n).map(|i| f(a + i as f64 * h) * if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 }).sum::<f64>() * h / 3.0;
    5.0 / (4.0 * std::f64::consts::PI * simpson)
}

fn c10_mq() -> (bool, String) {
    let m1 = tangent_normalization(&approximate_at(&euclidean(1), &[0.0], true).unwrap().1, &QuadratureOptions::default()).unwrap();
    let m2 = tangent_normalization(&approximate_at(&euclidean(2), &[0.0, 0.0], true).unwrap().1, &QuadratureOptions::default()).unwrap();
    let (_, nil) = approximate_at(&heisenberg(NormFamily::euclidean(2)), &[0.0; 3], false).unwrap();
    let coarse = tangent_normalization(&nil, &QuadratureOptions { face_nodes: 6, ..Default::default() }).unwrap();
    let fine = tangent_normalization(&nil, &QuadratureOptions { face_nodes: 8, ..Default::default() }).unwrap();
    let target2 = 3.0 / std::f64::consts::PI;
    let oracle = heisenberg_mq_oracle();
    let ok = (m1 - 1.0).abs() <= MQ_REL
        && ((m2 - target2) / target2).abs() <= MQ_REL
        && ((fine - coarse) / fine).abs() <= MQ_REL
        && ((fine - oracle) / oracle).abs() <= MQ_REL;
    (ok, format!("R1 {m1:.5} (1), R2 {m2:.5} ({target2:.5}), heisenberg {coarse:.4} → {fine:.4} (closed form {oracle:.4})"))
}

fn c11_pmgh() -> (bool, String) {
    let t = Instant::now();
    let full = std::env::var("SFLAB_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let radii: Vec<f64> = (1..=5).map(|m| 0.5f64.powi(m)).collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for p in [1.5, 2.0, 4.0] {
        let s = contact_perturbed(NormFamily::lp(2, p));
        let opts = if full {
            TangentCheckOptions { grid_size: 6, margin: 1.15, cold: DistanceOptions { segments: vec![8, 32], starts: 2, ..DistanceOptions::fast() }, ..Default::default() }
        } else {
            TangentCheckOptions { grid_size: 4, cold: DistanceOptions { segments: vec![8, 32], starts: 2, ..DistanceOptions::fast() }, ..Default::default() }
        };
        let r = tangent_check(&s, &DensityModel::constant(1.0), &[0.0; 3], &radii, &opts).unwrap();
        let last = r.rows.last().unwrap();
        ok &= r.monotone && last.distortion < PMGH_FINAL_DISTORTION * opts.radius;
        let first = &r.rows[0];
        detail.push(format!(
            "l{p}: n={} distortion {:.2e}→{:.2e}, coverage {:.2e}→{:.2e}, discrepancy {:.2e}→{:.2e}, monotone {}",
            last.sample_size, first.distortion, last.distortion, first.coverage_defect, last.coverage_defect, first.discrepancy, last.discrepancy, r.monotone
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < PMGH_SECONDS;
    let scale = if full { "full ~100-point samples" } else { "reduced grid 4 (SFLAB_ACCEPTANCE_FULL=1 for ~100 points)" };
    (ok, format!("{scale}; {}", detail.join("; ")))
}

fn c12_cd() -> (bool, String) {
    let cheap = CdOptions { distance: DistanceOptions { segments: vec![8], starts: 0, ..Default::default() }, ..Default::default() };
    let e = euclidean(2);
    let fam = random_box_pairs(2, CD_PAIRS, 3, 1.0, (0.2, 0.8), SEED).unwrap();
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for (a, b) in &fam {
        let mid = Midpoint::new(&e, a, b, &cheap).unwrap();
        for n in CD_N {
            let r = mid.report(n, 0.0).unwrap();
            worst = worst.max(r.deficit - r.eps_disc);
            ok &= r.deficit <= r.eps_disc;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut lp_ok = true;
    for n in 1..=6 {
        for _ in 0..5 {
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..5.0)).collect()).collect();
            let plan = optimal_plan(&cost, &vec![1.0 / n as f64; n], &vec![1.0 / n as f64; n]).unwrap();
            let (_, best) = brute_force_assignment(&cost).unwrap();
            lp_ok &= (plan.cost - best).abs() <= 1e-9;
        }
    }
    let h = heisenberg(NormFamily::euclidean(2));
    let hfam = random_box_pairs(3, 4, 2, 0.3, (0.1, 0.3), SEED).unwrap();
    let budget = 8;
    let rep = violation_search(&h, &hfam, &[3.0, 5.0], 0.0, budget, &CdOptions::default()).unwrap();
    let search_ok = rep.evaluated <= budget && !rep.ranked.is_empty();
    let top = rep.ranked.first().map(|c| format!("{:+.2e} ± {:.1e}", c.report.deficit, c.report.eps_disc)).unwrap_or_default();
    (
        ok && lp_ok && search_ok,
        format!(
            "euclidean max(deficit − ε_disc) {worst:.2e} over {} checks; LP = brute force: {lp_ok}; heisenberg search {} evaluations, top deficit {top}, {} above ε_disc (report only)",
            CD_PAIRS * CD_N.len(),
            rep.evaluated,
            rep.violations.len()
        ),
    )
}

fn cheap_config(name: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(name, "heisenberg.json");
    c.seed = 11;
    c.fast = Some(true);
    match name {
        "dist" => c.b = Some(vec![0.3, 0.2, 0.1]),
        "scaling" | "converge" => {
            c.structure = "contact_perturbed.json".into();
            c.levels = Some(2);
            c.eps = Some(vec![0.5]);
        }
        "ballbox" => {
            c.radii = Some(vec![0.2]);
            c.divisions = Some(1);
            c.identity_chart = Some(true);
        }
        "ballmass" | "ahlfors" => {
            c.structure = "euclidean2.json".into();
            c.radii = Some(vec![0.1, 0.14, 0.2, 0.28]);
        }
        "mq" => c.face_nodes = Some(4),
        "tangent-check" => {
            c.structure = "contact_perturbed.json".into();
            c.grid_size = Some(3);
            c.radii = Some(vec![0.5, 0.25]);
        }
        "cd-scan" => {
            c.structure = "euclidean2.json".into();
            c.pairs = Some(2);
            c.per_axis = Some(2);
            c.budget = Some(4);
        }
        _ => {}
    }
    c
}

fn c13_determinism() -> (bool, String) {
    let mut ok = true;
    let mut differing = Vec::new();
    for name in EXPERIMENTS {
        let cfg = cheap_config(name);
        let a = run(&cfg).map(|r| r.to_json());
        let b = run(&cfg).map(|r| r.to_json());
        let same = matches!((&a, &b), (Ok(x), Ok(y)) if x == y);
        if !same {
            ok = false;
            differing.push(format!("{name}: {:?}", a.err().map(|e| e.to_string())));
        }
    }
    (ok, if ok { format!("{} experiments byte-identical on rerun", EXPERIMENTS.len()) } else { format!("differing: {}", differing.join("; ")) })
}
