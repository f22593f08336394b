//! Pointed measured Gromov–Hausdorff checks of blow-ups against the nilpotent tangent.
//!
//! The almost-isometries are the explicit maps `δ_r^{−1}` in privileged coordinates, so a
//! blow-up sample and its image live in the same tangent coordinates; no correspondence search
//! is needed.  Distances of the rescaled space are computed in the ε-structure with `ε = r`,
//! which equals `d/r` on the images by the scaling identity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coords::PrivilegedChart;
use crate::error::{Result, SflabError};
use crate::geodesic::{distance, eps_structure, hat_structure, DistanceCertificate, DistanceOptions, WarmStart};
use crate::measure::{DensityModel, TestFunction};
use crate::nilpotent::{approximate_at, DilationFamily};
use crate::structure::SubFinslerStructure;
use crate::symvf::rat_from_f64;

/// Finite pointed metric measure space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointedSample {
    pub points: Vec<Vec<f64>>,
    pub basepoint: usize,
    pub metric: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

pub const TRIANGLE_TOL: f64 = 1e-6;

impl PointedSample {
    pub fn new(points: Vec<Vec<f64>>, basepoint: usize, metric: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let m = points.len();
        if basepoint >= m || metric.len() != m || weights.len() != m || metric.iter().any(|r| r.len() != m) {
            return Err(SflabError::InvalidArgument("inconsistent sample sizes".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(SflabError::InvalidMeasure("sample weights must be non-negative".into()));
        }
        for i in 0..m {
            if metric[i][i] != 0.0 {
                return Err(SflabError::InvalidArgument(format!("metric diagonal entry {i} is not zero")));
            }
            for j in 0..m {
                if metric[i][j] != metric[j][i] || !(metric[i][j] >= 0.0) {
                    return Err(SflabError::InvalidArgument(format!("metric is not symmetric at ({i}, {j})")));
                }
                for k in 0..m {
                    if metric[i][k] > metric[i][j] + metric[j][k] + TRIANGLE_TOL {
                        return Err(SflabError::InvalidArgument(format!("triangle inequality fails at ({i}, {j}, {k})")));
                    }
                }
            }
        }
        Ok(Self { points, basepoint, metric, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Shortest-path closure; keeps every entry an upper bound when the inputs are.
pub fn metric_closure(m: &mut [Vec<f64>]) {
    let n = m.len();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = m[i][k] + m[k][j];
                if via < m[i][j] {
                    m[i][j] = via;
                }
            }
        }
    }
}

/// `max_{i,j} |d(x_i, x_j) − d̂(x_i, x_j)|`, with `tangent_metric` indexed by sample points.
pub fn distortion(sample: &PointedSample, tangent_metric: impl Fn(usize, usize) -> f64) -> f64 {
    let m = sample.len();
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in i + 1..m {
            worst = worst.max((sample.metric[i][j] - tangent_metric(i, j)).abs());
        }
    }
    worst
}

/// `max_t min_i d̂(t, x_i) − eps`, floored at 0, over tangent points `t` covering `B̂(0, R − eps)`.
///
/// `tangent_metric(t, i)` is the tangent distance from tangent point `t` to sample point `i`.
pub fn coverage_defect(sample: &PointedSample, tangent_points: usize, tangent_metric: impl Fn(usize, usize) -> f64, eps: f64) -> f64 {
    let mut worst = 0.0f64;
    for t in 0..tangent_points {
        let near = (0..sample.len()).map(|i| tangent_metric(t, i)).fold(f64::INFINITY, f64::min);
        worst = worst.max(near - eps);
    }
    worst.max(0.0)
}

/// `max_φ |Σ_i w_i φ(x_i) − m(q) ∫ φ dL^n|`, given `hat_norms[i] = d̂(0, x_i)` and the tangent
/// integrals `m(q) ∫ φ` in the same order as `testfns`.
pub fn measure_discrepancy(sample: &PointedSample, hat_norms: &[f64], testfns: &[TestFunction], tangent_integrals: &[f64]) -> Result<f64> {
    if hat_norms.len() != sample.len() || tangent_integrals.len() != testfns.len() {
        return Err(SflabError::InvalidArgument("inconsistent discrepancy inputs".into()));
    }
    Ok(testfns
        .iter()
        .zip(tangent_integrals)
        .map(|(phi, target)| {
            let s: f64 = sample.points.iter().zip(&sample.weights).zip(hat_norms).map(|((p, w), h)| w * phi.eval(p, *h)).sum();
            (s - target).abs()
        })
        .fold(0.0, f64::max))
}

/// `min_σ max_{i,j} |a_ij − b_{σ(i)σ(j)}|` over bijections, by exhaustion (at most 8 points).
pub fn exhaustive_distortion(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let n = a.len();
    if b.len() != n {
        return Err(SflabError::InvalidArgument("exhaustive distortion needs equal sizes".into()));
    }
    if n > 8 {
        return Err(SflabError::InvalidArgument("exhaustive distortion is limited to 8 points".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((a[i][j] - b[p[i]][p[j]]).abs());
            }
        }
        best = best.min(worst);
    });
    Ok(best)
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TangentCheckOptions {
    /// Radius `R` of the compared balls.
    pub radius: f64,
    /// Grid points per axis of the tangent-coordinate grid.
    pub grid_size: usize,
    /// The grid box is `Π [−a_i, a_i]` with `a_i = (margin R / d̂(0, e_i))^{w_i}`.
    pub margin: f64,
    /// Slack `ε` of the coverage item; `None` uses the row's distortion, so one `ε` serves the
    /// distortion and coverage items together.
    pub coverage_eps: Option<f64>,
    pub identity_chart: bool,
    /// Options for cold solves (hat structure).
    pub cold: DistanceOptions,
    /// Options for warm-started solves along the scale chain.
    pub warm: DistanceOptions,
    /// Defaults to [`TestFunction::family`] at radius `R`.
    pub testfns: Option<Vec<TestFunction>>,
}

impl Default for TangentCheckOptions {
    fn default() -> Self {
        Self {
            radius: 1.0,
            grid_size: 6,
            margin: 1.25,
            coverage_eps: None,
            identity_chart: false,
            cold: DistanceOptions::fast(),
            warm: DistanceOptions { segments: vec![32], starts: 0, ..DistanceOptions::default() },
            testfns: None,
        }
    }
}

/// Tangent-coordinate grid, cell-centred, with the base point appended last.
struct TangentGrid {
    points: Vec<Vec<f64>>,
    cell_volume: f64,
}

impl TangentGrid {
    fn base(&self) -> usize {
        self.points.len() - 1
    }
}

/// Everything shared by the samples of one base point: chart, tangent distances, grid.
struct TangentSetup {
    chart: PrivilegedChart,
    s_priv: SubFinslerStructure,
    d: DilationFamily,
    hat: SubFinslerStructure,
    grid: TangentGrid,
    /// `d̂(0, z)` on the grid.
    hat0: Vec<DistanceCertificate>,
    calls: usize,
}

fn setup(s: &SubFinslerStructure, q: &[f64], opts: &TangentCheckOptions) -> Result<TangentSetup> {
    if !(opts.radius > 0.0) || opts.grid_size < 2 {
        return Err(SflabError::InvalidArgument("tangent check needs R > 0 and at least two grid points per axis".into()));
    }
    let (chart, nil) = approximate_at(s, q, opts.identity_chart)?;
    let s_priv = chart.structure_in_chart(s)?;
    let hat = hat_structure(&nil)?;
    let d = nil.dilations();
    let n = nil.dim();
    let zero = vec![0.0; n];
    let mut calls = 0;
    let extents = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            calls += 1;
            let dh = distance(&hat, &zero, &e, &opts.cold)?.value;
            Ok((opts.margin * opts.radius / dh).powi(nil.weights.as_slice()[i] as i32))
        })
        .collect::<Result<Vec<f64>>>()?;
    let g = opts.grid_size;
    let mut points = Vec::with_capacity(g.pow(n as u32) + 1);
    for idx in 0..g.pow(n as u32) {
        let mut r = idx;
        let p = extents
            .iter()
            .map(|a| {
                let k = r % g;
                r /= g;
                -a + (k as f64 + 0.5) * 2.0 * a / g as f64
            })
            .collect();
        points.push(p);
    }
    points.push(zero.clone());
    let cell_volume = extents.iter().map(|a| 2.0 * a / g as f64).product();
    let grid = TangentGrid { points, cell_volume };
    let hat0 = grid.points.par_iter().map(|z| distance(&hat, &zero, z, &opts.cold)).collect::<Result<Vec<_>>>()?;
    calls += hat0.len();
    Ok(TangentSetup { chart, s_priv, d, hat, grid, hat0, calls })
}

/// Solves `pairs` in `s`, warm-starting from `warm` (cold multistart where absent or failing).
fn solve_pairs(
    s: &SubFinslerStructure,
    points: &[Vec<f64>],
    pairs: &[(usize, usize)],
    warm: &[Option<WarmStart>],
    opts: &TangentCheckOptions,
) -> Result<Vec<DistanceCertificate>> {
    pairs
        .par_iter()
        .zip(warm)
        .map(|(&(i, j), w)| {
            if let Some(w) = w {
                if let Ok(c) = distance(s, &points[i], &points[j], &opts.warm.with_warm_start(Some(w.clone()))) {
                    return Ok(c);
                }
            }
            distance(s, &points[i], &points[j], &opts.cold)
        })
        .collect()
}

fn density_factor(setup: &TangentSetup, dens: &DensityModel, r: f64, z: &[f64]) -> f64 {
    let zr = setup.d.apply(r, z);
    dens.eval(&setup.chart.from_privileged(&zr)) * setup.chart.backward_jacobian(&zr)
}

/// Grid weights of `(δ_{1/r})_# m_r^q`: cell masses over the normalization
/// `∫_{B^{d_r}(0,1)} (1 − d_r(0,·)) dρ_r`, both by the same grid rule.
fn blowup_weights(setup: &TangentSetup, dens: &DensityModel, r: f64, dr0: &[f64]) -> Result<Vec<f64>> {
    let h = setup.grid.cell_volume;
    let base = setup.grid.base();
    let rho: Vec<f64> = setup.grid.points.iter().map(|z| density_factor(setup, dens, r, z)).collect();
    let norm: f64 = (0..base).map(|i| (1.0 - dr0[i]).max(0.0) * rho[i] * h).sum();
    if !(norm > 0.0) {
        return Err(SflabError::InvalidMeasure("blow-up normalization vanished on the grid".into()));
    }
    Ok((0..=base).map(|i| if i == base { 0.0 } else { rho[i] * h / norm }).collect())
}

/// Grid sample of `B^{d_r}(q, R)` mapped by `δ_{1/r}`, with `d_r` metric and `m_r^q` weights.
pub fn blowup_sample(
    s: &SubFinslerStructure,
    dens: &DensityModel,
    q: &[f64],
    r: f64,
    opts: &TangentCheckOptions,
) -> Result<PointedSample> {
    let setup = setup(s, q, opts)?;
    let se = eps_structure(&setup.s_priv, &setup.d, &rat_from_f64(r)?)?;
    let warm0: Vec<Option<WarmStart>> = setup.hat0.iter().map(|c| Some(c.warm())).collect();
    let base = setup.grid.base();
    let row_pairs: Vec<(usize, usize)> = (0..setup.grid.points.len()).map(|i| (base, i)).collect();
    let row = solve_pairs(&se, &setup.grid.points, &row_pairs, &warm0, opts)?;
    let dr0: Vec<f64> = row.iter().map(|c| c.value).collect();
    let weights = blowup_weights(&setup, dens, r, &dr0)?;
    let members: Vec<usize> = (0..setup.grid.points.len()).filter(|&i| i == base || dr0[i] <= opts.radius).collect();
    let mut pairs = Vec::new();
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            pairs.push((i, j));
        }
    }
    let certs = solve_pairs(&se, &setup.grid.points, &pairs, &vec![None; pairs.len()], opts)?;
    let pos = |i: usize| members.iter().position(|&m| m == i).unwrap();
    let m = members.len();
    let mut metric = vec![vec![0.0; m]; m];
    for (&(i, j), c) in pairs.iter().zip(&certs) {
        metric[pos(i)][pos(j)] = c.value;
        metric[pos(j)][pos(i)] = c.value;
    }
    metric_closure(&mut metric);
    PointedSample::new(
        members.iter().map(|&i| setup.grid.points[i].clone()).collect(),
        pos(base),
        metric,
        members.iter().map(|&i| weights[i]).collect(),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TangentRow {
    pub r: f64,
    pub distortion: f64,
    pub coverage_defect: f64,
    /// The `ε` the coverage defect was measured at.
    pub coverage_eps: f64,
    pub discrepancy: f64,
    pub sample_size: usize,
    pub total_weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TangentCheckReport {
    pub radius: f64,
    pub rows: Vec<TangentRow>,
    /// `m(q)` by the grid rule used for the tangent side of the discrepancy.
    pub m_q_grid: f64,
    pub tangent_sample_size: usize,
    pub grid_points: usize,
    pub distance_calls: usize,
    /// Componentwise non-increasing with an overall decrease in every component that is not
    /// identically zero.
    pub monotone: bool,
}

/// Distortion, coverage defect and measure discrepancy of the blow-ups at each `r`.
///
/// Distances are chained from the tangent (smallest `r` first) by warm starts.
pub fn tangent_check(
    s: &SubFinslerStructure,
    dens: &DensityModel,
    q: &[f64],
    radii: &[f64],
    opts: &TangentCheckOptions,
) -> Result<TangentCheckReport> {
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(SflabError::InvalidArgument("blow-up radii must be positive".into()));
    }
    let setup = setup(s, q, opts)?;
    let mut calls = setup.calls;
    let pts = &setup.grid.points;
    let np = pts.len();
    let base = setup.grid.base();
    let big_r = opts.radius;
    let hat0: Vec<f64> = setup.hat0.iter().map(|c| c.value).collect();

    let mut order: Vec<f64> = radii.to_vec();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // base-point rows for every r, chained from the tangent
    let mut rows0: Vec<Vec<f64>> = Vec::with_capacity(order.len());
    let mut warm: Vec<Option<WarmStart>> = setup.hat0.iter().map(|c| Some(c.warm())).collect();
    let eps_structs = order
        .iter()
        .map(|&r| eps_structure(&setup.s_priv, &setup.d, &rat_from_f64(r)?))
        .collect::<Result<Vec<_>>>()?;
    let row_pairs: Vec<(usize, usize)> = (0..np).map(|i| (base, i)).collect();
    for se in &eps_structs {
        let certs = solve_pairs(se, pts, &row_pairs, &warm, opts)?;
        calls += certs.len();
        rows0.push(certs.iter().map(|c| c.value).collect());
        warm = certs.iter().map(|c| Some(c.warm())).collect();
    }
    let inside = |i: usize, row: &[f64]| i == base || row[i] <= big_r;
    let union: Vec<usize> = (0..np).filter(|&i| hat0[i] <= big_r || rows0.iter().any(|row| inside(i, row))).collect();
    let upos: std::collections::HashMap<usize, usize> = union.iter().enumerate().map(|(a, &i)| (i, a)).collect();
    let mut pairs = Vec::new();
    for (a, &i) in union.iter().enumerate() {
        for &j in &union[a + 1..] {
            pairs.push((i, j));
        }
    }
    let hat_certs = solve_pairs(&setup.hat, pts, &pairs, &vec![None; pairs.len()], opts)?;
    calls += hat_certs.len();
    let u = union.len();
    let mut hat_m = vec![vec![0.0; u]; u];
    for (&(i, j), c) in pairs.iter().zip(&hat_certs) {
        hat_m[upos[&i]][upos[&j]] = c.value;
        hat_m[upos[&j]][upos[&i]] = c.value;
    }
    metric_closure(&mut hat_m);

    // tangent side of the discrepancy by the same grid rule
    let h = setup.grid.cell_volume;
    let testfns = opts.testfns.clone().unwrap_or_else(|| TestFunction::family(pts[0].len(), big_r));
    let unit: f64 = (0..base).map(|i| (1.0 - hat0[i]).max(0.0) * h).sum();
    let m_q_grid = 1.0 / unit;
    let tangent_integrals: Vec<f64> =
        testfns.iter().map(|phi| m_q_grid * (0..base).map(|i| phi.eval(&pts[i], hat0[i]) * h).sum::<f64>()).collect();

    let mut warm_pairs: Vec<Option<WarmStart>> = hat_certs.iter().map(|c| Some(c.warm())).collect();
    let mut rows = Vec::with_capacity(order.len());
    for ((&r, se), row0) in order.iter().zip(&eps_structs).zip(&rows0) {
        let members: Vec<usize> = union.iter().copied().filter(|&i| inside(i, row0)).collect();
        let sel: Vec<usize> = (0..pairs.len()).filter(|&p| inside(pairs[p].0, row0) && inside(pairs[p].1, row0)).collect();
        let sub_pairs: Vec<(usize, usize)> = sel.iter().map(|&p| pairs[p]).collect();
        let sub_warm: Vec<Option<WarmStart>> = sel.iter().map(|&p| warm_pairs[p].clone()).collect();
        let certs = solve_pairs(se, pts, &sub_pairs, &sub_warm, opts)?;
        calls += certs.len();
        let m = members.len();
        let mpos: std::collections::HashMap<usize, usize> = members.iter().enumerate().map(|(a, &i)| (i, a)).collect();
        let mut metric = vec![vec![0.0; m]; m];
        for (&(i, j), c) in sub_pairs.iter().zip(&certs) {
            metric[mpos[&i]][mpos[&j]] = c.value;
            metric[mpos[&j]][mpos[&i]] = c.value;
        }
        for (&p, c) in sel.iter().zip(&certs) {
            warm_pairs[p] = Some(c.warm());
        }
        metric_closure(&mut metric);
        let weights_all = blowup_weights(&setup, dens, r, row0)?;
        let sample = PointedSample::new(
            members.iter().map(|&i| pts[i].clone()).collect(),
            mpos[&base],
            metric,
            members.iter().map(|&i| weights_all[i]).collect(),
        )?;
        let dist = distortion(&sample, |a, b| hat_m[upos[&members[a]]][upos[&members[b]]]);
        let eps = opts.coverage_eps.unwrap_or(dist);
        let tangent_pts: Vec<usize> = (0..np).filter(|&i| i != base && hat0[i] <= big_r - eps).collect();
        let cov = coverage_defect(&sample, tangent_pts.len(), |t, i| hat_m[upos[&tangent_pts[t]]][upos[&members[i]]], eps);
        let norms: Vec<f64> = members.iter().map(|&i| hat0[i]).collect();
        let disc = measure_discrepancy(&sample, &norms, &testfns, &tangent_integrals)?;
        rows.push(TangentRow {
            r,
            distortion: dist,
            coverage_defect: cov,
            coverage_eps: eps,
            discrepancy: disc,
            sample_size: m,
            total_weight: sample.total_weight(),
        });
    }
    // report in decreasing r, the order of the blow-up sequence
    rows.reverse();
    let monotone = componentwise_decreasing(&rows);
    Ok(TangentCheckReport {
        radius: big_r,
        rows,
        m_q_grid,
        tangent_sample_size: (0..np).filter(|&i| i != base && hat0[i] <= big_r).count(),
        grid_points: np - 1,
        distance_calls: calls,
        monotone,
    })
}

/// Rows ordered by decreasing `r`: each component non-increasing, and strictly smaller at the
/// end unless it vanishes identically.
pub fn componentwise_decreasing(rows: &[TangentRow]) -> bool {
    let comps: [fn(&TangentRow) -> f64; 3] = [|r| r.distortion, |r| r.coverage_defect, |r| r.discrepancy];
    comps.iter().all(|f| {
        let v: Vec<f64> = rows.iter().map(f).collect();
        let non_increasing = v.windows(2).all(|w| w[1] <= w[0]);
        let all_zero = v.iter().all(|x| *x == 0.0);
        non_increasing && (all_zero || v.last() < v.first())
    })
}
