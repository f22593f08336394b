//! Sub-Finsler distances by direct optimal-control transcription, and the scaling,
//! convergence and Ball-Box experiments built on them.

mod dynamics;
mod solver;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coords::PrivilegedChart;
use crate::error::{Result, SflabError};
use crate::nilpotent::{dilate_field, DilationFamily, NilpotentStructure};
use crate::sampling::derived_rng;
use crate::structure::{minimal_control, NormFamily, NormKind, SubFinslerStructure};
use crate::symvf::{rat_to_f64, PolyScalar, Rational};

pub use dynamics::{ControlPath, ControlSystem, Trajectory};
use solver::{exact_length, integrate_path, solve_stage, Problem, StageParams, StageResult};

/// Options of the distance solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceOptions {
    /// Segment counts of the refinement ladder; each stage warm-starts the next.
    pub segments: Vec<usize>,
    /// Minimum number of RK4 steps over `[0,1]`; split evenly across segments.
    pub min_rk4_steps: usize,
    /// Random starts in addition to the least-squares constant control.
    pub starts: usize,
    /// Candidates carried from the first stage into the refinement ladder.
    pub keep: usize,
    pub seed: u64,
    pub endpoint_tol: f64,
    /// Documented relative optimality gap of the reported value.
    pub gap: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    #[serde(skip)]
    pub warm_start: Option<WarmStart>,
}

/// Previous solution used to seed a solve: path plus endpoint multiplier and penalty.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WarmStart {
    pub path: ControlPath,
    /// Empty means zero.
    pub multiplier: Vec<f64>,
    /// Non-positive means the default penalty.
    pub penalty: f64,
}

impl From<ControlPath> for WarmStart {
    fn from(path: ControlPath) -> Self {
        Self { path, multiplier: Vec::new(), penalty: 0.0 }
    }
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self {
            segments: vec![8, 16, 32, 64],
            min_rk4_steps: 64,
            starts: 16,
            keep: 2,
            seed: 0,
            endpoint_tol: 1e-6,
            gap: 0.01,
            max_outer: 12,
            max_inner: 300,
            warm_start: None,
        }
    }
}

impl DistanceOptions {
    /// Cheaper settings for bulk experiments that supply warm starts.
    pub fn fast() -> Self {
        Self { segments: vec![8, 16, 32], starts: 6, keep: 2, ..Self::default() }
    }

    pub fn with_warm_start(&self, warm: Option<WarmStart>) -> Self {
        Self { warm_start: warm, ..self.clone() }
    }

    fn steps_for(&self, segments: usize) -> usize {
        self.min_rk4_steps.div_ceil(segments).max(1)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub starts_tried: usize,
    pub feasible_starts: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub segments: usize,
}

/// Best admissible path found between two points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceCertificate {
    /// Length of `path`; an upper bound on the distance.
    pub value: f64,
    pub path: ControlPath,
    pub endpoint_error: f64,
    /// Projection lower bound (0 when unavailable).
    pub lower_hint: f64,
    /// Endpoint multiplier and penalty of the final stage.
    pub multiplier: Vec<f64>,
    pub penalty: f64,
    pub stats: SolverStats,
}

impl DistanceCertificate {
    pub fn warm(&self) -> WarmStart {
        WarmStart { path: self.path.clone(), multiplier: self.multiplier.clone(), penalty: self.penalty }
    }
}

impl DistanceCertificate {
    fn trivial(k: usize) -> Self {
        Self {
            value: 0.0,
            path: ControlPath::constant(vec![0.0; k], 1),
            endpoint_error: 0.0,
            lower_hint: 0.0,
            multiplier: Vec::new(),
            penalty: 0.0,
            stats: SolverStats::default(),
        }
    }
}

fn out_of_chart(sys: &ControlSystem, a: &[f64], path: &ControlPath, steps: usize) -> SflabError {
    // locate the exit time for the error message
    let total = path.segments * steps;
    let mut t = 1.0;
    for m in 1..=total {
        let seg = (m - 1) / steps;
        let sub = ControlPath { segments: path.segments, controls: path.controls[..=seg].to_vec() };
        let partial = ControlPath::new(sub.controls.clone()).ok();
        if let Some(p) = partial {
            let padded = ControlPath {
                segments: path.segments,
                controls: p.controls.iter().cloned().chain(std::iter::repeat(vec![0.0; sys.k])).take(path.segments).collect(),
            };
            if integrate_path(sys, a, &padded, steps).is_none() {
                t = (seg + 1) as f64 / path.segments as f64;
                break;
            }
        }
    }
    SflabError::OutOfChart { t }
}

/// RK4 integration of the control system along `path`.
pub fn integrate(s: &SubFinslerStructure, start: &[f64], path: &ControlPath, steps_per_segment: usize) -> Result<Trajectory> {
    check_point(s, start)?;
    if path.fiber_dim() != s.fiber_dim() {
        return Err(SflabError::DimensionMismatch { expected: s.fiber_dim(), found: path.fiber_dim() });
    }
    let sys = ControlSystem::new(s);
    let steps = steps_per_segment.max(1);
    integrate_path(&sys, start, path, steps).ok_or_else(|| out_of_chart(&sys, start, path, steps))
}

/// `Σ_s ‖G(x_s) u_s‖ Δt` with minimal-control reduction at segment midpoints.
pub fn path_length(s: &SubFinslerStructure, start: &[f64], path: &ControlPath) -> Result<f64> {
    check_point(s, start)?;
    let sys = ControlSystem::new(s);
    let steps = DistanceOptions::default().steps_for(path.segments);
    exact_length(&sys, s.norm(), start, path, steps)
        .map(|(v, _)| v)
        .ok_or_else(|| out_of_chart(&sys, start, path, steps))
}

/// Point at constant-speed parameter `t ∈ [0, 1]` along `path` from `start`: the point where
/// the travelled length is `t` times the total.
pub fn point_at(s: &SubFinslerStructure, start: &[f64], path: &ControlPath, t: f64) -> Result<Vec<f64>> {
    check_point(s, start)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(SflabError::InvalidArgument(format!("path parameter {t} outside [0, 1]")));
    }
    let sys = ControlSystem::new(s);
    let steps = DistanceOptions::default().steps_for(path.segments);
    let (speeds, traj) = solver::segment_speeds(&sys, s.norm(), start, path, steps).ok_or_else(|| out_of_chart(&sys, start, path, steps))?;
    let total: f64 = speeds.iter().sum();
    if total <= 0.0 {
        return Ok(start.to_vec());
    }
    let target = t * total;
    let mut acc = 0.0;
    for (k, v) in speeds.iter().enumerate() {
        if acc + v >= target && *v > 0.0 {
            let frac = ((target - acc) / v).clamp(0.0, 1.0);
            let piece = ControlPath::constant(path.controls[k].iter().map(|u| u * frac / path.segments as f64).collect(), 1);
            let sub = integrate_path(&sys, traj.segment_start(k), &piece, steps).ok_or_else(|| out_of_chart(&sys, start, path, steps))?;
            return Ok(sub.end().to_vec());
        }
        acc += v;
    }
    Ok(traj.end().to_vec())
}

fn check_point(s: &SubFinslerStructure, p: &[f64]) -> Result<()> {
    if p.len() != s.dim() {
        return Err(SflabError::DimensionMismatch { expected: s.dim(), found: p.len() });
    }
    if !s.in_chart(p) {
        return Err(SflabError::InvalidArgument(format!("point {p:?} outside the chart box")));
    }
    Ok(())
}

/// Lower bound from coordinates whose field components are constant (constant norms only).
pub fn projection_lower_bound(s: &SubFinslerStructure, a: &[f64], b: &[f64]) -> f64 {
    if !s.norm().is_constant() {
        return 0.0;
    }
    let k = s.fiber_dim();
    let rows: Vec<usize> = (0..s.dim())
        .filter(|&j| s.fields().iter().all(|f| f.component(j).total_degree().unwrap_or(0) == 0))
        .collect();
    if rows.is_empty() {
        return 0.0;
    }
    let a_mat = nalgebra::DMatrix::from_fn(rows.len(), k, |r, c| rat_to_f64(&s.fields()[c].component(rows[r]).constant_term()));
    let delta: Vec<f64> = rows.iter().map(|&j| b[j] - a[j]).collect();
    minimal_control(&s.norm().at(a), &a_mat, &delta).map(|m| m.value).unwrap_or(0.0)
}

fn random_start(rng: &mut impl Rng, k: usize, segments: usize, sigma: f64) -> Vec<f64> {
    // smooth random controls: a few Fourier modes per component
    let coeffs: Vec<[f64; 7]> = (0..k).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
    let mut u = Vec::with_capacity(segments * k);
    for s in 0..segments {
        let t = (s as f64 + 0.5) / segments as f64;
        for c in &coeffs {
            let mut v = c[0];
            for m in 1..=3 {
                let w = 2.0 * std::f64::consts::PI * m as f64 * t;
                v += (c[2 * m - 1] * w.cos() + c[2 * m] * w.sin()) / m as f64;
            }
            u.push(sigma * v);
        }
    }
    u
}

/// Sub-Finsler distance between `a` and `b`: an upper bound with certificate.
pub fn distance(s: &SubFinslerStructure, a: &[f64], b: &[f64], opts: &DistanceOptions) -> Result<DistanceCertificate> {
    check_point(s, a)?;
    check_point(s, b)?;
    let sys = ControlSystem::new(s);
    let lower = projection_lower_bound(s, a, b);
    distance_with(&sys, s.norm(), a, b, opts, lower)
}

pub(crate) fn distance_with(
    sys: &ControlSystem,
    norm: &NormFamily,
    a: &[f64],
    b: &[f64],
    opts: &DistanceOptions,
    lower_hint: f64,
) -> Result<DistanceCertificate> {
    let (n, k) = (sys.n, sys.k);
    let delta: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let dnorm = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
    if dnorm == 0.0 {
        return Ok(DistanceCertificate::trivial(k));
    }
    if opts.segments.is_empty() {
        return Err(SflabError::InvalidArgument("empty segment ladder".into()));
    }
    let problem = Problem { sys, norm, a, b };
    let mut sc = sys.scratch();
    sys.frame(a, &mut sc.ev);
    let g = nalgebra::DMatrix::from_row_slice(n, k, &sc.ev.g);
    let ls: Vec<f64> = g
        .clone()
        .svd(true, true)
        .solve(&nalgebra::DVector::from_column_slice(&delta), 1e-12)
        .map(|v| v.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; k]);
    let ls_norm = ls.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sigma = ls_norm.max(dnorm.sqrt()).max(lower_hint).max(1e-9);
    let mu0 = 10.0 * sigma * sigma / (dnorm * dnorm);

    let params_for = |segments: usize, stage: usize| StageParams {
        steps_per_segment: opts.steps_for(segments),
        level: stage,
        max_outer: opts.max_outer,
        max_inner: opts.max_inner,
        feas_tol: 0.1 * opts.endpoint_tol,
    };

    let mut stats = SolverStats::default();
    let mut rng = derived_rng(opts.seed, &[a, b].concat());
    let first = opts.segments[0];
    let mut candidates: Vec<(usize, StageResult)> = Vec::new();

    let run = |stage: usize, u0: Vec<f64>, lambda: Vec<f64>, mu: f64, stats: &mut SolverStats| -> Option<StageResult> {
        let segments = u0.len() / k;
        stats.starts_tried += usize::from(stage == 0);
        let r = solve_stage(&problem, &u0, &lambda, mu, &params_for(segments, stage))?;
        stats.iterations += r.iterations;
        stats.evaluations += r.evaluations;
        Some(r)
    };

    if let Some(w) = &opts.warm_start {
        // enter the ladder at the warm start's resolution
        let stage = opts.segments.iter().position(|&m| m >= w.path.segments).unwrap_or(opts.segments.len() - 1);
        let u0 = w.path.resample(opts.segments[stage]).flat();
        let lambda = if w.multiplier.len() == n { w.multiplier.clone() } else { vec![0.0; n] };
        let mu = if w.penalty > 0.0 { w.penalty } else { mu0 };
        if let Some(r) = run(stage, u0, lambda, mu, &mut stats) {
            candidates.push((stage, r));
        }
    }
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if ls_norm > 1e-3 * sigma && (opts.warm_start.is_none() || opts.starts > 0) {
        starts.push(ControlPath::constant(ls.clone(), first).flat());
    }
    for _ in 0..opts.starts {
        let mut u = random_start(&mut rng, k, first, sigma);
        if ls_norm > 1e-3 * sigma {
            for (i, v) in u.iter_mut().enumerate() {
                *v = 0.5 * *v + ls[i % k];
            }
        }
        starts.push(u);
    }
    for mut u0 in starts {
        // shrink starts that leave the chart
        let mut ok = false;
        for _ in 0..30 {
            if integrate_path(sys, a, &ControlPath::from_flat(&u0, k), opts.steps_for(first)).is_some() {
                ok = true;
                break;
            }
            u0.iter_mut().for_each(|v| *v *= 0.5);
        }
        if !ok {
            continue;
        }
        if let Some(r) = run(0, u0, vec![0.0; n], mu0, &mut stats) {
            candidates.push((0, r));
        }
    }
    let feasible = |r: &StageResult| r.endpoint_error <= opts.endpoint_tol;
    stats.feasible_starts = candidates.iter().filter(|(_, r)| feasible(r)).count();
    if stats.feasible_starts == 0 {
        let best = candidates.iter().map(|(_, r)| r.endpoint_error).fold(f64::INFINITY, f64::min);
        return Err(SflabError::NoConvergence { endpoint_error: best });
    }
    candidates.retain(|(_, r)| feasible(r));
    candidates.sort_by(|x, y| x.1.energy.partial_cmp(&y.1.energy).unwrap());
    candidates.truncate(opts.keep.max(1));

    let mut best: Option<(f64, ControlPath, f64, Vec<f64>, f64)> = None;
    for (stage0, mut r) in candidates {
        for stage in stage0 + 1..opts.segments.len() {
            let u = ControlPath::from_flat(&r.controls, k).resample(opts.segments[stage]).flat();
            match run(stage, u, r.lambda.clone(), r.mu, &mut stats) {
                Some(next) if feasible(&next) => r = next,
                _ => break,
            }
        }
        let path = ControlPath::from_flat(&r.controls, k);
        let steps = opts.steps_for(path.segments);
        let Some((value, _)) = exact_length(sys, norm, a, &path, steps) else { continue };
        if best.as_ref().map_or(true, |b| value < b.0) {
            best = Some((value, path, r.endpoint_error, r.lambda, r.mu));
        }
    }
    let (value, path, endpoint_error, multiplier, penalty) = best.ok_or(SflabError::NoConvergence { endpoint_error: f64::INFINITY })?;
    stats.segments = path.segments;
    Ok(DistanceCertificate { value, path, endpoint_error, lower_hint, multiplier, penalty, stats })
}

/// Distances for many pairs in parallel; each query's randomness depends only on its points.
pub fn distance_batch(
    s: &SubFinslerStructure,
    pairs: &[(Vec<f64>, Vec<f64>)],
    opts: &DistanceOptions,
) -> Vec<Result<DistanceCertificate>> {
    pairs.par_iter().map(|(a, b)| distance(s, a, b, opts)).collect()
}

/// The ε-structure `(Y_i^ε, |·|_{δ_ε z})` on the box `δ_{1/ε}(chart box)`.
pub fn eps_structure(s: &SubFinslerStructure, d: &DilationFamily, eps: &Rational) -> Result<SubFinslerStructure> {
    let n = s.dim();
    let fields = s.fields().iter().map(|f| dilate_field(f, d, eps)).collect::<Result<Vec<_>>>()?;
    let w = d.weights.as_slice();
    let norm = match s.norm().kind() {
        NormKind::Quadratic { matrix } => {
            let subs: Vec<PolyScalar> =
                (0..n).map(|i| PolyScalar::var(n, i).scale(&num_traits::pow(eps.clone(), w[i] as usize))).collect();
            let m = matrix.iter().map(|r| r.iter().map(|p| p.compose(&subs, None)).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?;
            NormFamily::new(s.fiber_dim(), NormKind::Quadratic { matrix: m })?
        }
        _ => s.norm().clone(),
    };
    let e = rat_to_f64(eps);
    let chart_box = s.chart_box().iter().zip(w).map(|((lo, hi), &wi)| (lo / e.powi(wi as i32), hi / e.powi(wi as i32))).collect();
    SubFinslerStructure::unchecked(fields, norm, chart_box)
}

/// Distance of the ε-structure; `s` must be written in privileged coordinates.
pub fn eps_distance(
    s: &SubFinslerStructure,
    d: &DilationFamily,
    eps: &Rational,
    a: &[f64],
    b: &[f64],
    opts: &DistanceOptions,
) -> Result<DistanceCertificate> {
    distance(&eps_structure(s, d, eps)?, a, b, opts)
}

/// Box on which the homogeneous structure is solved (it is defined on all of `R^n`).
pub fn hat_chart_box(nil: &NilpotentStructure) -> Vec<(f64, f64)> {
    vec![(-1e6, 1e6); nil.dim()]
}

pub fn hat_structure(nil: &NilpotentStructure) -> Result<SubFinslerStructure> {
    nil.to_structure(hat_chart_box(nil))
}

pub fn hat_distance(nil: &NilpotentStructure, a: &[f64], b: &[f64], opts: &DistanceOptions) -> Result<DistanceCertificate> {
    distance(&hat_structure(nil)?, a, b, opts)
}

/// Result of the Ball-Box search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallBoxReport {
    /// Least grid constant satisfying both inclusions at every sampled radius.
    pub c_q: Option<f64>,
    /// Largest radius checked.
    pub r_q: f64,
    /// Per-radius least constant.
    pub per_radius: Vec<(f64, Option<f64>)>,
    pub violations: Vec<BallBoxViolation>,
    pub distance_calls: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallBoxViolation {
    pub radius: f64,
    pub constant: f64,
    /// `"inner"`: a point of `Box(r/C)` at distance > r; `"outer"`: a point of `∂Box(Cr)` at distance ≤ r.
    pub kind: String,
    pub point: Vec<f64>,
    pub distance: f64,
}

/// Points of `∂Box(1)` on the lattice `{-1, …, 1}^n` with `divisions` steps per side.
pub fn unit_box_boundary(n: usize, divisions: usize) -> Vec<Vec<f64>> {
    let m = divisions.max(2);
    let vals: Vec<f64> = (0..=m).map(|i| -1.0 + 2.0 * i as f64 / m as f64).collect();
    let mut out = Vec::new();
    let total = (m + 1).pow(n as u32);
    for idx in 0..total {
        let mut r = idx;
        let p: Vec<f64> = (0..n)
            .map(|_| {
                let v = vals[r % (m + 1)];
                r /= m + 1;
                v
            })
            .collect();
        if p.iter().any(|v| v.abs() == 1.0) {
            out.push(p);
        }
    }
    out
}

/// Searches the least `C` on `constants` with `Box(r/C) ⊂ ψ(B(q,r)) ⊂ Box(Cr)` on samples.
///
/// Both inclusions are monotone in `C`, so the grid is bisected per radius.  The outer
/// inclusion is tested on `∂Box(Cr)`: balls are connected, so they stay inside the box iff
/// they do not reach its boundary.
pub fn ball_box_check(
    s: &SubFinslerStructure,
    chart: &PrivilegedChart,
    radii: &[f64],
    constants: &[f64],
    divisions: usize,
    opts: &DistanceOptions,
) -> Result<BallBoxReport> {
    if radii.iter().any(|r| !(*r > 0.0)) {
        return Err(SflabError::InvalidArgument("Ball-Box radii must be positive".into()));
    }
    if constants.is_empty() || constants.iter().any(|c| !(*c >= 1.0)) {
        return Err(SflabError::InvalidArgument("Ball-Box constants must be ≥ 1".into()));
    }
    let mut grid = constants.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = chart.base_f64();
    let d = DilationFamily::new(chart.weights.clone());
    let samples = unit_box_boundary(s.dim(), divisions);
    let sys = ControlSystem::new(s);
    let calls = std::sync::atomic::AtomicUsize::new(0);

    let dist_to = |z: &[f64]| -> Result<f64> {
        let x = chart.from_privileged(z);
        calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        if !s.in_chart(&x) {
            return Ok(f64::INFINITY);
        }
        let lower = projection_lower_bound(s, &q, &x);
        Ok(distance_with(&sys, s.norm(), &q, &x, opts, lower)?.value)
    };
    // violations at (r, C); empty means both inclusions hold on the samples
    let check = |r: f64, c: f64| -> Result<Vec<BallBoxViolation>> {
        let inner: Vec<Result<Option<BallBoxViolation>>> = samples
            .par_iter()
            .map(|z| {
                let p = d.apply(r / c, z);
                let v = dist_to(&p)?;
                Ok((v > r).then(|| BallBoxViolation { radius: r, constant: c, kind: "inner".into(), point: p, distance: v }))
            })
            .collect();
        let outer: Vec<Result<Option<BallBoxViolation>>> = samples
            .par_iter()
            .map(|z| {
                let p = d.apply(r * c, z);
                let v = dist_to(&p)?;
                Ok((v <= r).then(|| BallBoxViolation { radius: r, constant: c, kind: "outer".into(), point: p, distance: v }))
            })
            .collect();
        inner.into_iter().chain(outer).filter_map(|x| x.transpose()).collect()
    };

    let mut per_radius = Vec::new();
    let mut violations = Vec::new();
    for &r in radii {
        let last = *grid.last().unwrap();
        let top = check(r, last)?;
        if !top.is_empty() {
            violations.extend(top);
            per_radius.push((r, None));
            continue;
        }
        let (mut lo, mut hi) = (0usize, grid.len() - 1); // grid[hi] works
        if check(r, grid[0])?.is_empty() {
            hi = 0;
        } else {
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if check(r, grid[mid])?.is_empty() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        per_radius.push((r, Some(grid[hi])));
    }
    let c_q = if per_radius.iter().all(|(_, c)| c.is_some()) {
        per_radius.iter().filter_map(|(_, c)| *c).fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))))
    } else {
        None
    };
    Ok(BallBoxReport {
        c_q,
        r_q: radii.iter().copied().fold(0.0, f64::max),
        per_radius,
        violations,
        distance_calls: calls.into_inner(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::fixtures::*;

    #[test]
    fn integrate_examples() {
        let e = euclidean(2);
        let t = integrate(&e, &[0.0, 0.0], &ControlPath::constant(vec![1.0, 0.0], 4), 4).unwrap();
        assert!((t.end()[0] - 1.0).abs() < 1e-14 && t.end()[1].abs() < 1e-14);

        let h = heisenberg(NormFamily::euclidean(2));
        let t = integrate(&h, &[0.0; 3], &ControlPath::constant(vec![1.0, 1.0], 4), 4).unwrap();
        for (v, w) in t.end().iter().zip([1.0, 1.0, 0.0]) {
            assert!((v - w).abs() < 1e-13);
        }
        let p = ControlPath::new(vec![vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let t = integrate(&h, &[0.0; 3], &p, 4).unwrap();
        for (v, w) in t.end().iter().zip([1.0, 1.0, 0.5]) {
            assert!((v - w).abs() < 1e-13, "{:?}", t.end());
        }
    }

    #[test]
    fn out_of_chart_is_reported() {
        let e = euclidean(2);
        let err = integrate(&e, &[0.0, 0.0], &ControlPath::constant(vec![100.0, 0.0], 10), 2).unwrap_err();
        match err {
            SflabError::OutOfChart { t } => assert!((t - 0.1).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn path_length_examples() {
        let e = euclidean(2);
        assert!((path_length(&e, &[0.0, 0.0], &ControlPath::constant(vec![3.0, 4.0], 1)).unwrap() - 5.0).abs() < 1e-12);
        let h = heisenberg(NormFamily::lp(2, f64::INFINITY));
        assert!((path_length(&h, &[0.0; 3], &ControlPath::constant(vec![1.0, 1.0], 3)).unwrap() - 1.0).abs() < 1e-12);
        // redundant frame X1 = X2 = ∂x
        let dx = crate::symvf::PolyVectorField::coordinate(1, 0);
        let r = SubFinslerStructure::unchecked(vec![dx.clone(), dx], NormFamily::euclidean(2), vec![(-5.0, 5.0)]).unwrap();
        let l = path_length(&r, &[0.0], &ControlPath::constant(vec![1.0, 0.0], 1)).unwrap();
        assert!((l - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn euclidean_distance() {
        let e = euclidean(2);
        let c = distance(&e, &[0.0, 0.0], &[3.0, 4.0], &DistanceOptions::default()).unwrap();
        assert!((c.value - 5.0).abs() < 1e-6, "{}", c.value);
        assert!(c.endpoint_error <= 1e-6);
        assert!((c.lower_hint - 5.0).abs() < 1e-9);
    }

    #[test]
    fn heisenberg_horizontal_distance() {
        let h = heisenberg(NormFamily::euclidean(2));
        let c = distance(&h, &[0.0; 3], &[1.0, 0.0, 0.0], &DistanceOptions::default()).unwrap();
        assert!((c.value - 1.0).abs() < 1e-2, "{}", c.value);
        assert!(c.value >= c.lower_hint - 1e-9);
    }

    #[test]
    fn heisenberg_vertical_distance() {
        // d(0, (0,0,z)) = sqrt(4π|z|) for the ℓ² Heisenberg group in these coordinates
        let h = heisenberg(NormFamily::euclidean(2));
        let c = distance(&h, &[0.0; 3], &[0.0, 0.0, 1.0], &DistanceOptions::default()).unwrap();
        let exact = (4.0 * std::f64::consts::PI).sqrt();
        assert!(c.value >= exact * (1.0 - 1e-9));
        assert!((c.value - exact) / exact < 1e-2, "{} vs {exact}", c.value);
    }

    #[test]
    fn unit_box_boundary_counts() {
        assert_eq!(unit_box_boundary(2, 2).len(), 8);
        assert_eq!(unit_box_boundary(3, 2).len(), 26);
    }
}
