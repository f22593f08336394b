//! Bounded measures `ρ L^n`, ball masses, Ahlfors fits, Lebesgue points, blow-up measures
//! `m_r^q` and the tangent normalization `m(q)`.
//!
//! Balls are integrated in privileged coordinates along dilation rays `s ↦ δ_s θ`, `θ` on the
//! boundary of the unit weighted box.  Along each ray the distance to the base point is
//! tabulated once on a geometric ladder of scales; every radius, density and weight function is
//! then a cheap one-dimensional quadrature against that profile.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coords::{build_privileged, PrivilegedChart};
use crate::error::{Result, SflabError};
use crate::geodesic::{distance, hat_structure, ControlPath, DistanceOptions, WarmStart};
use crate::nilpotent::{approximate_at, DilationFamily, NilpotentStructure};
use crate::sampling::{derived_rng, gauss_legendre, Halton};
use crate::structure::{poly_from_terms, SubFinslerStructure, TermSpec};
use crate::symvf::{PolyScalar, WeightVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityKind {
    Constant { value: f64 },
    /// `offset + amplitude · sin(frequency · x_j)`.
    Sinusoid { coordinate: usize, offset: f64, amplitude: f64, frequency: f64 },
    /// Piecewise constant on the grid with corner `origin` and spacing `cell`, periodic with
    /// `period` cells per axis; `values` is row-major over the period block.
    Tabulated { origin: Vec<f64>, cell: Vec<f64>, period: Vec<usize>, values: Vec<f64> },
    /// `below` where `x_j < threshold`, `above` elsewhere.
    Step { coordinate: usize, threshold: f64, below: f64, above: f64 },
    /// `offset + scale · |x_j|^exponent`.
    PowerAbs { coordinate: usize, exponent: f64, scale: f64, offset: f64 },
    Polynomial { dimension: usize, terms: Vec<TermSpec> },
}

/// Density of a measure with respect to chart Lebesgue measure, with pinching constants.
#[derive(Clone, Debug, Serialize)]
pub struct DensityModel {
    pub kind: DensityKind,
    pub bounds: (f64, f64),
    #[serde(skip)]
    poly: Option<PolyScalar>,
}

impl DensityModel {
    /// Validates `c ≤ ρ ≤ C` with `0 < c ≤ C` on Halton samples of `check_box`.
    pub fn new(kind: DensityKind, bounds: (f64, f64), check_box: &[(f64, f64)]) -> Result<Self> {
        let (c, cc) = bounds;
        if !(c > 0.0 && c <= cc && cc.is_finite()) {
            return Err(SflabError::InvalidMeasure(format!("density bounds ({c}, {cc}) must satisfy 0 < c ≤ C")));
        }
        let m = Self::build(kind, bounds)?;
        let n = check_box.len();
        for p in Halton::new(n.max(1)).take(512) {
            let x: Vec<f64> = p.iter().zip(check_box).map(|(t, (a, b))| a + t * (b - a)).collect();
            let v = m.eval(&x);
            if !(v >= c - 1e-12 && v <= cc + 1e-12) {
                return Err(SflabError::InvalidMeasure(format!("density {v} at {x:?} outside [{c}, {cc}]")));
            }
        }
        Ok(m)
    }

    /// A density without a positive lower bound, for negative controls.
    pub fn degenerate(kind: DensityKind, upper: f64) -> Result<Self> {
        Self::build(kind, (0.0, upper))
    }

    fn build(kind: DensityKind, bounds: (f64, f64)) -> Result<Self> {
        let poly = match &kind {
            DensityKind::Polynomial { dimension, terms } => Some(poly_from_terms(*dimension, terms)?),
            DensityKind::Tabulated { origin, cell, period, values } => {
                let cells: usize = period.iter().product();
                if origin.len() != cell.len() || cell.len() != period.len() || values.len() != cells || cells == 0 {
                    return Err(SflabError::InvalidMeasure("inconsistent tabulated density".into()));
                }
                if cell.iter().any(|h| !(*h > 0.0)) {
                    return Err(SflabError::InvalidMeasure("tabulated cells must have positive size".into()));
                }
                None
            }
            _ => None,
        };
        Ok(Self { kind, bounds, poly })
    }

    pub fn constant(value: f64) -> Self {
        Self { kind: DensityKind::Constant { value }, bounds: (value, value), poly: None }
    }

    /// Piecewise-constant density with seeded cell values uniform in `range`.
    pub fn seeded_piecewise(dim: usize, cell: f64, period: usize, range: (f64, f64), seed: u64) -> Result<Self> {
        let mut rng = derived_rng(seed, &[dim as f64, cell, period as f64]);
        let values = (0..period.pow(dim as u32)).map(|_| rng.gen_range(range.0..=range.1)).collect();
        let kind = DensityKind::Tabulated { origin: vec![0.0; dim], cell: vec![cell; dim], period: vec![period; dim], values };
        Self::new(kind, range, &vec![(-1.0, 1.0); dim])
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DensityKind::Constant { value } => *value,
            DensityKind::Sinusoid { coordinate, offset, amplitude, frequency } => {
                offset + amplitude * (frequency * x[*coordinate]).sin()
            }
            DensityKind::Tabulated { origin, cell, period, values } => {
                let mut idx = 0;
                for j in 0..origin.len() {
                    let c = ((x[j] - origin[j]) / cell[j]).floor() as i64;
                    idx = idx * period[j] + c.rem_euclid(period[j] as i64) as usize;
                }
                values[idx]
            }
            DensityKind::Step { coordinate, threshold, below, above } => {
                if x[*coordinate] < *threshold {
                    *below
                } else {
                    *above
                }
            }
            DensityKind::PowerAbs { coordinate, exponent, scale, offset } => offset + scale * x[*coordinate].abs().powf(*exponent),
            DensityKind::Polynomial { .. } => self.poly.as_ref().expect("built").eval(x),
        }
    }
}

/// Options of the radial ball quadrature.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadratureOptions {
    /// Gauss–Legendre nodes per dimension on each face of the unit box.
    pub face_nodes: usize,
    /// Equal panels per face axis, each carrying `face_nodes` nodes. The unit ball is typically
    /// not smooth where the coordinate axes cross the faces, so a panel edge sits there when even.
    pub face_panels: usize,
    /// Gauss–Legendre nodes along each ray.
    pub radial_nodes: usize,
    /// Ratio between consecutive scales of the distance profile.
    pub profile_ratio: f64,
    /// Use the given coordinates (certified privileged) instead of building a chart.
    pub identity_chart: bool,
    pub distance: DistanceOptions,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            face_nodes: 6,
            face_panels: 2,
            radial_nodes: 8,
            profile_ratio: std::f64::consts::SQRT_2,
            identity_chart: false,
            distance: DistanceOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
struct Direction {
    theta: Vec<f64>,
    /// Volume factor of the face times the face quadrature weight.
    weight: f64,
}

/// Directions on the boundary of the box `Π [−a_i, a_i]`; on the face `θ_i = ±a_i` the volume
/// element is `dz = w_i (Π_j a_j) s^{Q−1} ds dt` with `θ_j = a_j t_j`.
///
/// The aspect `a` is chosen so the unit ball roughly touches every face, which keeps the
/// radial function smooth on the faces.
fn face_directions(w: &WeightVector, opts: &QuadratureOptions, aspect: &[f64]) -> Vec<Direction> {
    let n = w.len();
    let (x, wt) = composite_rule(opts.face_nodes.max(1), opts.face_panels.max(1));
    let nodes = x.len();
    let mut out = Vec::new();
    for face in 0..n {
        for sign in [-1.0, 1.0] {
            let count = nodes.pow(n as u32 - 1);
            for idx in 0..count {
                let mut r = idx;
                let mut theta = vec![0.0; n];
                let mut weight = w.as_slice()[face] as f64 * aspect.iter().product::<f64>();
                for (j, t) in theta.iter_mut().enumerate() {
                    if j == face {
                        *t = sign * aspect[j];
                    } else {
                        *t = aspect[j] * x[r % nodes];
                        weight *= wt[r % nodes];
                        r /= nodes;
                    }
                }
                out.push(Direction { theta, weight });
            }
        }
    }
    out
}

/// Gauss–Legendre on `panels` equal pieces of [−1, 1].
fn composite_rule(nodes: usize, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(nodes);
    let h = 2.0 / panels as f64;
    let mut xs = Vec::with_capacity(nodes * panels);
    let mut ws = Vec::with_capacity(nodes * panels);
    for k in 0..panels {
        let lo = -1.0 + k as f64 * h;
        for (t, wt) in x.iter().zip(&w) {
            xs.push(lo + 0.5 * (t + 1.0) * h);
            ws.push(0.5 * wt * h);
        }
    }
    (xs, ws)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Ray {
    scales: Vec<f64>,
    /// Running maximum of the computed distances.
    dists: Vec<f64>,
}

impl Ray {
    /// Largest `s` with interpolated distance ≤ `r` (log-log interpolation).
    fn radius(&self, r: f64) -> f64 {
        let (s, d) = (&self.scales, &self.dists);
        if r <= 0.0 {
            return 0.0;
        }
        let Some(j) = d.iter().position(|&v| v >= r) else { return *s.last().unwrap() };
        if j == 0 {
            let slope = self.first_slope();
            return s[0] * (r / d[0]).powf(1.0 / slope);
        }
        if d[j] <= d[j - 1] {
            return s[j - 1];
        }
        let t = (r / d[j - 1]).ln() / (d[j] / d[j - 1]).ln();
        s[j - 1] * (s[j] / s[j - 1]).powf(t)
    }

    fn distance(&self, x: f64) -> f64 {
        let (s, d) = (&self.scales, &self.dists);
        if x <= s[0] {
            return d[0] * (x / s[0]).powf(self.first_slope());
        }
        let j = s.iter().position(|&v| v >= x).unwrap_or(s.len() - 1);
        if !d[j].is_finite() {
            return f64::INFINITY;
        }
        let t = (x / s[j - 1]).ln() / (s[j] / s[j - 1]).ln();
        d[j - 1] * (d[j] / d[j - 1]).powf(t)
    }

    fn first_slope(&self) -> f64 {
        let (s, d) = (&self.scales, &self.dists);
        if s.len() < 2 || !d[1].is_finite() || d[1] <= d[0] {
            return 1.0;
        }
        ((d[1] / d[0]).ln() / (s[1] / s[0]).ln()).max(1e-3)
    }
}

/// Distance profiles from a base point along dilation rays, ready for ball quadrature.
#[derive(Clone, Debug)]
pub struct BallProfile {
    pub chart: PrivilegedChart,
    pub homogeneous_dimension: u32,
    directions: Vec<Direction>,
    rays: Vec<Ray>,
    jacobian: Option<Vec<Vec<PolyScalar>>>,
    radial: (Vec<f64>, Vec<f64>),
    pub distance_calls: usize,
    /// Some ray left the chart before reaching the largest requested radius.
    pub truncated: bool,
}

impl BallProfile {
    pub fn build(s: &SubFinslerStructure, q: &[f64], r_lo: f64, r_hi: f64, opts: &QuadratureOptions) -> Result<Self> {
        let chart = if opts.identity_chart { PrivilegedChart::identity(s, q, None)? } else { build_privileged(s, q, None)? };
        Self::from_chart(s, chart, r_lo, r_hi, opts)
    }

    /// Profiles covering distances `[r_lo, r_hi]` around the chart's base point.
    pub fn from_chart(s: &SubFinslerStructure, chart: PrivilegedChart, r_lo: f64, r_hi: f64, opts: &QuadratureOptions) -> Result<Self> {
        if !(r_lo > 0.0 && r_hi >= r_lo) {
            return Err(SflabError::InvalidArgument(format!("radius range [{r_lo}, {r_hi}] must be positive")));
        }
        if !(opts.profile_ratio > 1.0) {
            return Err(SflabError::InvalidArgument("profile ratio must exceed 1".into()));
        }
        let q = chart.base_f64();
        let d = DilationFamily::new(chart.weights.clone());
        let mut calls = 0;
        let aspect = (0..chart.dim())
            .map(|i| {
                let mut e = vec![0.0; chart.dim()];
                e[i] = 1.0;
                let x = chart.from_privileged(&d.apply(r_lo, &e));
                calls += 1;
                let v = if s.in_chart(&x) { distance(s, &q, &x, &opts.distance)?.value / r_lo } else { 1.0 };
                Ok(v.max(1e-12).powi(-(chart.weights.as_slice()[i] as i32)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let directions = face_directions(&chart.weights, opts, &aspect);
        let rays: Vec<Result<(Ray, usize, bool)>> = {
            use rayon::prelude::*;
            directions.par_iter().map(|dir| build_ray(s, &chart, &d, &q, &dir.theta, r_lo, r_hi, opts)).collect()
        };
        let mut out = Vec::with_capacity(rays.len());
        let mut truncated = false;
        for r in rays {
            let (ray, c, t) = r?;
            calls += c;
            truncated |= t;
            out.push(ray);
        }
        let identity = chart.backward.iter().enumerate().all(|(i, p)| {
            let x = PolyScalar::var(chart.dim(), i);
            (p - &x).total_degree().unwrap_or(0) == 0
        });
        let jacobian = (!identity).then(|| {
            chart.backward.iter().map(|p| (0..chart.dim()).map(|j| p.derivative(j)).collect()).collect()
        });
        let (x, w) = gauss_legendre(opts.radial_nodes.max(1));
        let radial = (x.iter().map(|t| 0.5 * (t + 1.0)).collect(), w.iter().map(|v| 0.5 * v).collect());
        Ok(Self {
            homogeneous_dimension: chart.weights.homogeneous_dimension(),
            chart,
            directions,
            rays: out,
            jacobian,
            radial,
            distance_calls: calls,
            truncated,
        })
    }

    fn q(&self) -> i32 {
        self.homogeneous_dimension as i32
    }

    fn jac(&self, z: &[f64]) -> f64 {
        match &self.jacobian {
            None => 1.0,
            Some(j) => {
                let n = z.len();
                DMatrix::from_fn(n, n, |a, b| j[a][b].eval(z)).determinant().abs()
            }
        }
    }

    /// `Σ_θ W_θ ∫_0^{s_max(θ)} f(x, s, θ-index) ρ-free s^{Q−1} ds` where `x = Φ(δ_s θ)` and the
    /// Jacobian of the chart is included.
    fn integrate(&self, s_max: impl Fn(usize) -> f64, f: impl Fn(&[f64], f64, usize) -> f64) -> f64 {
        self.integrate_over(&self.directions, s_max, f)
    }

    fn integrate_over(&self, directions: &[Direction], s_max: impl Fn(usize) -> f64, f: impl Fn(&[f64], f64, usize) -> f64) -> f64 {
        let d = DilationFamily::new(self.chart.weights.clone());
        let mut total = 0.0;
        for (i, dir) in directions.iter().enumerate() {
            let smax = s_max(i);
            if smax <= 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for (t, w) in self.radial.0.iter().zip(&self.radial.1) {
                let s = t * smax;
                let z = d.apply(s, &dir.theta);
                let x = self.chart.from_privileged(&z);
                acc += w * f(&x, s, i) * self.jac(&z) * s.powi(self.q() - 1);
            }
            total += dir.weight * acc * smax;
        }
        total
    }

    /// `m(B(q, r))` for `m = ρ L^n`.
    pub fn mass(&self, dens: &DensityModel, r: f64) -> f64 {
        self.integrate(|i| self.rays[i].radius(r), |x, _, _| dens.eval(x))
    }

    /// `r^{−Q} ∫_{B(q,r)} |ρ − ρ(q)| dL^n`.
    pub fn deficit(&self, dens: &DensityModel, r: f64) -> f64 {
        let rho_q = dens.eval(&self.chart.base_f64());
        self.integrate(|i| self.rays[i].radius(r), |x, _, _| (dens.eval(x) - rho_q).abs()) / r.powi(self.q())
    }

    /// `∫_{B(q,r)} (1 − d(q,·)/r) dm`.
    pub fn normalization(&self, dens: &DensityModel, r: f64) -> f64 {
        self.integrate(|i| self.rays[i].radius(r), |x, s, i| (1.0 - self.rays[i].distance(s) / r).max(0.0) * dens.eval(x))
    }

    /// Pairings `∫ φ d((δ_{1/r})_# m_r^q)` against test functions supported in hat balls.
    pub fn pushforward_pairings(&self, hat: &HatGauge, dens: &DensityModel, r: f64, testfns: &[TestFunction]) -> Result<Vec<f64>> {
        if hat.weights != self.chart.weights {
            return Err(SflabError::InvalidArgument("hat gauge and ball profile have different weights".into()));
        }
        let norm = self.normalization(dens, r);
        if !(norm > 0.0) {
            return Err(SflabError::InvalidMeasure("blow-up normalization vanished".into()));
        }
        let d = DilationFamily::new(self.chart.weights.clone());
        Ok(testfns
            .iter()
            .map(|phi| {
                let reach = phi.support_radius();
                // the numerator only needs the density, so it runs on the hat directions
                let num = self.integrate_over(
                    &hat.directions,
                    |i| r * reach / hat.dhat[i],
                    |x, s, i| {
                        let t = s / r;
                        phi.eval(&d.apply(t, &hat.directions[i].theta), t * hat.dhat[i]) * dens.eval(x)
                    },
                );
                num / norm
            })
            .collect())
    }
}

#[allow(clippy::too_many_arguments)]
fn build_ray(
    s: &SubFinslerStructure,
    chart: &PrivilegedChart,
    d: &DilationFamily,
    q: &[f64],
    theta: &[f64],
    r_lo: f64,
    r_hi: f64,
    opts: &QuadratureOptions,
) -> Result<(Ray, usize, bool)> {
    let ratio = opts.profile_ratio;
    let mut calls = 0;
    let mut solve = |scale: f64, warm: Option<(&ControlPath, f64)>| -> Result<Option<(f64, ControlPath)>> {
        let x = chart.from_privileged(&d.apply(scale, theta));
        if !s.in_chart(&x) {
            return Ok(None);
        }
        calls += 1;
        if let Some((path, from)) = warm {
            let o = DistanceOptions { starts: 0, ..opts.distance.clone() }
                .with_warm_start(Some(WarmStart::from(path.scaled(scale / from))));
            if let Ok(c) = distance(s, q, &x, &o) {
                return Ok(Some((c.value, c.path)));
            }
            calls += 1;
        }
        let c = distance(s, q, &x, &opts.distance)?;
        Ok(Some((c.value, c.path)))
    };
    // pilot solve fixes the ladder through the local scale of the ray
    let mut s0 = r_lo;
    let mut pilot = None;
    for _ in 0..40 {
        if let Some(v) = solve(s0, None)? {
            pilot = Some(v);
            break;
        }
        s0 *= 0.5;
    }
    let (d0, p0) = pilot.ok_or_else(|| SflabError::InvalidArgument("ray leaves the chart immediately".into()))?;
    let k = d0 / s0;
    let mut pts: Vec<(f64, f64, ControlPath)> = vec![(s0, d0, p0)];
    // downwards until below r_lo / ratio
    loop {
        let (sl, dl, pl) = pts.first().unwrap().clone();
        if dl <= r_lo / ratio || pts.len() > 60 {
            break;
        }
        let next = (sl / ratio).min(r_lo / (ratio * k.max(1e-12)));
        match solve(next, Some((&pl, sl)))? {
            Some((v, p)) => pts.insert(0, (next, v, p)),
            None => break,
        }
    }
    // upwards until above r_hi · ratio or out of the chart
    let mut truncated = false;
    loop {
        let (sl, dl, pl) = pts.last().unwrap().clone();
        if dl >= r_hi * ratio {
            break;
        }
        if pts.len() > 80 {
            truncated = true;
            break;
        }
        let next = sl * ratio;
        match solve(next, Some((&pl, sl)))? {
            Some((v, p)) => pts.push((next, v, p)),
            None => {
                truncated = dl < r_hi;
                pts.push((next, f64::INFINITY, pl));
                break;
            }
        }
    }
    let scales = pts.iter().map(|p| p.0).collect();
    let mut run = 0.0f64;
    let dists = pts
        .iter()
        .map(|p| {
            run = run.max(p.1);
            run
        })
        .collect();
    Ok((Ray { scales, dists }, calls, truncated))
}

/// Ball masses of one density at several radii.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallMeasureCurve {
    pub radii: Vec<f64>,
    pub masses: Vec<f64>,
    /// Quadrature scheme; always `"radial"` here.
    pub method: String,
    /// Distance evaluations behind the curve.
    pub sample_count: usize,
}

pub fn ball_measure(s: &SubFinslerStructure, dens: &DensityModel, q: &[f64], r: f64, opts: &QuadratureOptions) -> Result<f64> {
    Ok(BallProfile::build(s, q, r, r, opts)?.mass(dens, r))
}

pub fn ball_measure_curve(
    s: &SubFinslerStructure,
    dens: &DensityModel,
    q: &[f64],
    radii: &[f64],
    opts: &QuadratureOptions,
) -> Result<BallMeasureCurve> {
    let (lo, hi) = radius_range(radii)?;
    let profile = BallProfile::build(s, q, lo, hi, opts)?;
    Ok(curve_from_profile(&profile, dens, radii))
}

pub fn curve_from_profile(profile: &BallProfile, dens: &DensityModel, radii: &[f64]) -> BallMeasureCurve {
    BallMeasureCurve {
        radii: radii.to_vec(),
        masses: radii.iter().map(|&r| profile.mass(dens, r)).collect(),
        method: "radial".into(),
        sample_count: profile.distance_calls,
    }
}

fn radius_range(radii: &[f64]) -> Result<(f64, f64)> {
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(SflabError::InvalidArgument("radii must be positive".into()));
    }
    Ok((radii.iter().copied().fold(f64::INFINITY, f64::min), radii.iter().copied().fold(0.0, f64::max)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AhlforsFit {
    pub q_est: f64,
    pub c_est: f64,
    /// Maximum deviation of `log m` from the fitted line.
    pub residual: f64,
}

/// Least-squares fit of `log m = Q log r + log κ`.
pub fn ahlfors_fit(curve: &BallMeasureCurve) -> Result<AhlforsFit> {
    let n = curve.radii.len();
    if n < 4 || curve.masses.len() != n {
        return Err(SflabError::InvalidCurve("an Ahlfors fit needs at least four radii".into()));
    }
    let mut pts: Vec<(f64, f64)> = curve.radii.iter().copied().zip(curve.masses.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if pts.last().unwrap().0 < 2.0 * pts[0].0 {
        return Err(SflabError::InvalidCurve("radii must span at least a factor of two".into()));
    }
    if pts.iter().any(|p| !(p.1 > 0.0)) || pts.windows(2).any(|w| w[1].1 < w[0].1) {
        return Err(SflabError::InvalidCurve("masses must be positive and non-decreasing in r".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let q_est = sxy / sxx;
    let intercept = my - q_est * mx;
    let residual = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - q_est * x).abs()).fold(0.0, f64::max);
    Ok(AhlforsFit { q_est, c_est: intercept.exp(), residual })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LebesgueReport {
    pub radii: Vec<f64>,
    pub deficits: Vec<f64>,
    pub threshold: f64,
    pub is_lebesgue_numeric: bool,
}

/// Deficits `r^{−Q} ∫_{B(q,r)} |ρ − ρ(q)|` for decreasing radii.
///
/// The default threshold is `0.1 · ρ(q) · L(B(q,r_min)) / r_min^Q`.
pub fn lebesgue_point_check(
    s: &SubFinslerStructure,
    dens: &DensityModel,
    q: &[f64],
    radii: &[f64],
    threshold: Option<f64>,
    opts: &QuadratureOptions,
) -> Result<LebesgueReport> {
    let (lo, hi) = radius_range(radii)?;
    let profile = BallProfile::build(s, q, lo, hi, opts)?;
    Ok(lebesgue_from_profile(&profile, dens, radii, threshold))
}

pub fn lebesgue_from_profile(profile: &BallProfile, dens: &DensityModel, radii: &[f64], threshold: Option<f64>) -> LebesgueReport {
    let mut radii = radii.to_vec();
    radii.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let deficits: Vec<f64> = radii.iter().map(|&r| profile.deficit(dens, r)).collect();
    let r_min = *radii.last().unwrap();
    let threshold = threshold.unwrap_or_else(|| {
        let vol = profile.mass(&DensityModel::constant(1.0), r_min) / r_min.powi(profile.q());
        0.1 * dens.eval(&profile.chart.base_f64()) * vol
    });
    let decreasing = deficits.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
    let is_lebesgue_numeric = decreasing && *deficits.last().unwrap() < threshold;
    LebesgueReport { radii, deficits, threshold, is_lebesgue_numeric }
}

/// Test functions for weak convergence, evaluated at tangent coordinates `z` with `|z| = d̂(0,z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Zero,
    /// `(1 − |z|/radius)_+^power`.
    HatBump { radius: f64, power: u32 },
    /// 1 on `B̂(0, radius − width)`, linear down to 0 at `radius`.
    SmoothIndicator { radius: f64, width: f64 },
    /// `(1 + z^α) (1 − |z|/radius)_+`.
    MonomialBump { exponents: Vec<u32>, radius: f64 },
}

impl TestFunction {
    pub fn eval(&self, z: &[f64], hat_norm: f64) -> f64 {
        match self {
            TestFunction::Zero => 0.0,
            TestFunction::HatBump { radius, power } => (1.0 - hat_norm / radius).max(0.0).powi(*power as i32),
            TestFunction::SmoothIndicator { radius, width } => ((radius - hat_norm) / width).clamp(0.0, 1.0),
            TestFunction::MonomialBump { exponents, radius } => {
                let mono: f64 = z.iter().zip(exponents).map(|(x, &e)| x.powi(e as i32)).product();
                (1.0 + mono) * (1.0 - hat_norm / radius).max(0.0)
            }
        }
    }

    pub fn support_radius(&self) -> f64 {
        match self {
            TestFunction::Zero => 0.0,
            TestFunction::HatBump { radius, .. }
            | TestFunction::SmoothIndicator { radius, .. }
            | TestFunction::MonomialBump { radius, .. } => *radius,
        }
    }

    /// A small default family supported in `B̂(0, radius)`.
    pub fn family(n: usize, radius: f64) -> Vec<TestFunction> {
        let mut out = vec![
            TestFunction::HatBump { radius, power: 1 },
            TestFunction::HatBump { radius, power: 2 },
            TestFunction::SmoothIndicator { radius, width: 0.25 * radius },
        ];
        for j in 0..n.min(2) {
            let mut e = vec![0; n];
            e[j] = 1;
            out.push(TestFunction::MonomialBump { exponents: e, radius });
        }
        out
    }
}

/// The homogeneous norm `d̂(0, ·)` on the face directions: `d̂(0, δ_s θ) = s D̂(θ)`.
#[derive(Clone, Debug)]
pub struct HatGauge {
    pub weights: WeightVector,
    directions: Vec<Direction>,
    pub dhat: Vec<f64>,
    pub distance_calls: usize,
}

impl HatGauge {
    pub fn build(nil: &NilpotentStructure, opts: &QuadratureOptions) -> Result<Self> {
        use rayon::prelude::*;
        let hat = hat_structure(nil)?;
        let zero = vec![0.0; nil.dim()];
        let aspect = (0..nil.dim())
            .map(|i| {
                let mut e = vec![0.0; nil.dim()];
                e[i] = 1.0;
                let v = distance(&hat, &zero, &e, &opts.distance)?.value;
                Ok(v.powi(-(nil.weights.as_slice()[i] as i32)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let directions = face_directions(&nil.weights, opts, &aspect);
        let dhat = directions
            .par_iter()
            .map(|dir| distance(&hat, &zero, &dir.theta, &opts.distance).map(|c| c.value))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { weights: nil.weights.clone(), distance_calls: directions.len() + nil.dim(), directions, dhat })
    }

    fn q(&self) -> i32 {
        self.weights.homogeneous_dimension() as i32
    }

    /// `∫_{B̂(0,1)} (1 − d̂(0,·)) dL^n = Σ W_θ D̂(θ)^{−Q} / (Q(Q+1))`.
    pub fn unit_ball_integral(&self) -> f64 {
        let q = self.q() as f64;
        self.directions.iter().zip(&self.dhat).map(|(d, &v)| d.weight * v.powf(-q)).sum::<f64>() / (q * (q + 1.0))
    }

    /// `L^n(B̂(0,1)) = Σ W_θ D̂(θ)^{−Q} / Q`.
    pub fn unit_ball_volume(&self) -> f64 {
        let q = self.q() as f64;
        self.directions.iter().zip(&self.dhat).map(|(d, &v)| d.weight * v.powf(-q)).sum::<f64>() / q
    }

    /// `∫ φ dL^n` for a test function supported in a hat ball.
    pub fn integrate(&self, phi: &TestFunction, radial_nodes: usize) -> f64 {
        let (x, w) = gauss_legendre(radial_nodes.max(1));
        let d = DilationFamily::new(self.weights.clone());
        let reach = phi.support_radius();
        let mut total = 0.0;
        for (dir, &dh) in self.directions.iter().zip(&self.dhat) {
            let tmax = reach / dh;
            let mut acc = 0.0;
            for (t, wt) in x.iter().zip(&w) {
                let s = 0.5 * (t + 1.0) * tmax;
                acc += 0.5 * wt * phi.eval(&d.apply(s, &dir.theta), s * dh) * s.powi(self.q() - 1);
            }
            total += dir.weight * acc * tmax;
        }
        total
    }
}

/// `m(q) = (∫_{B̂(0,1)} (1 − d̂(0,·)) dL^n)^{−1}`.
pub fn tangent_normalization(nil: &NilpotentStructure, opts: &QuadratureOptions) -> Result<f64> {
    Ok(1.0 / HatGauge::build(nil, opts)?.unit_ball_integral())
}

/// `∫ φ d((δ_{1/r})_# m_r^q)` for each test function, in privileged coordinates at `q`.
pub fn blowup_pushforward(
    s: &SubFinslerStructure,
    dens: &DensityModel,
    q: &[f64],
    r: f64,
    testfns: &[TestFunction],
    opts: &QuadratureOptions,
) -> Result<Vec<f64>> {
    let (chart, nil) = approximate_at(s, q, opts.identity_chart)?;
    let hat = HatGauge::build(&nil, opts)?;
    let profile = BallProfile::from_chart(s, chart, r, r, opts)?;
    profile.pushforward_pairings(&hat, dens, r, testfns)
}

/// Blow-up measure data at one scale.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlowupMeasure {
    pub base: Vec<f64>,
    pub radius: f64,
    pub normalization: f64,
}

pub fn blowup_measure(profile: &BallProfile, dens: &DensityModel, r: f64) -> Result<BlowupMeasure> {
    let normalization = profile.normalization(dens, r);
    if !(normalization > 0.0) {
        return Err(SflabError::InvalidMeasure("blow-up normalization vanished".into()));
    }
    Ok(BlowupMeasure { base: profile.chart.base_f64(), radius: r, normalization })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::fixtures::*;
    use crate::structure::NormFamily;

    fn quick() -> QuadratureOptions {
        QuadratureOptions { identity_chart: true, distance: DistanceOptions::fast(), ..Default::default() }
    }

    #[test]
    fn density_models() {
        let d = DensityModel::new(
            DensityKind::Sinusoid { coordinate: 0, offset: 1.5, amplitude: 0.5, frequency: 1.0 },
            (1.0, 2.0),
            &[(-3.0, 3.0); 3],
        )
        .unwrap();
        assert!((d.eval(&[std::f64::consts::FRAC_PI_2, 0.0, 0.0]) - 2.0).abs() < 1e-15);
        let bad = DensityModel::new(DensityKind::Constant { value: 3.0 }, (1.0, 2.0), &[(-1.0, 1.0)]);
        assert!(matches!(bad, Err(SflabError::InvalidMeasure(_))));
        let p = DensityModel::seeded_piecewise(2, 0.5, 4, (0.5, 2.0), 7).unwrap();
        assert_eq!(p.eval(&[0.1, 0.1]), p.eval(&[0.1 + 2.0, 0.1 - 2.0]));
        let q = DensityModel::seeded_piecewise(2, 0.5, 4, (0.5, 2.0), 7).unwrap();
        assert_eq!(p.kind, q.kind);
    }

    #[test]
    fn euclidean_disk_area() {
        let e = euclidean(2);
        let opts = QuadratureOptions { face_nodes: 8, ..quick() };
        let m = ball_measure(&e, &DensityModel::constant(1.0), &[0.0, 0.0], 1.0, &opts).unwrap();
        assert!((m - std::f64::consts::PI).abs() < 0.03 * std::f64::consts::PI, "{m}");
    }

    #[test]
    fn exact_power_curve_fit() {
        let radii = vec![0.1, 0.2, 0.3, 0.4];
        let curve = BallMeasureCurve {
            masses: radii.iter().map(|r: &f64| r.powi(4)).collect(),
            radii,
            method: "exact".into(),
            sample_count: 0,
        };
        let f = ahlfors_fit(&curve).unwrap();
        assert!((f.q_est - 4.0).abs() < 1e-12 && f.residual < 1e-12 && (f.c_est - 1.0).abs() < 1e-10);
        let mut bad = curve.clone();
        bad.masses[2] = 0.0;
        assert!(matches!(ahlfors_fit(&bad), Err(SflabError::InvalidCurve(_))));
    }

    #[test]
    fn step_density_is_not_lebesgue_on_the_jump() {
        let e = euclidean(2);
        let step = DensityModel::new(
            DensityKind::Step { coordinate: 0, threshold: 0.0, below: 1.0, above: 2.0 },
            (1.0, 2.0),
            &[(-1.0, 1.0); 2],
        )
        .unwrap();
        let radii = [0.4, 0.2, 0.1];
        let rep = lebesgue_point_check(&e, &step, &[0.0, 0.0], &radii, None, &QuadratureOptions { face_nodes: 8, ..quick() }).unwrap();
        // half-disk of density 1 against ρ(q) = 2: deficit π/2 at every radius
        for d in &rep.deficits {
            assert!((d - std::f64::consts::FRAC_PI_2).abs() < 0.03, "{d}");
        }
        assert!(!rep.is_lebesgue_numeric);
        let flat = lebesgue_point_check(&e, &DensityModel::constant(1.0), &[0.0, 0.0], &radii, None, &quick()).unwrap();
        assert!(flat.is_lebesgue_numeric && flat.deficits.iter().all(|d| *d < 1e-12));
    }

    #[test]
    fn euclidean_tangent_normalization() {
        for (n, expect) in [(1usize, 1.0), (2, 3.0 / std::f64::consts::PI)] {
            let e = euclidean(n);
            let (_, nil) = approximate_at(&e, &vec![0.0; n], true).unwrap();
            let m = tangent_normalization(&nil, &QuadratureOptions { face_nodes: 8, ..quick() }).unwrap();
            assert!((m - expect).abs() < 0.03 * expect, "n={n}: {m}");
        }
    }

    #[test]
    fn pushforward_of_zero_and_indicator() {
        let e = euclidean(2);
        let fns = [TestFunction::Zero, TestFunction::SmoothIndicator { radius: 1.0, width: 0.1 }];
        let opts = QuadratureOptions { face_nodes: 6, ..quick() };
        let p = blowup_pushforward(&e, &DensityModel::constant(1.0), &[0.0, 0.0], 0.5, &fns, &opts).unwrap();
        assert_eq!(p[0], 0.0);
        // m(q) ∫ φ with m(q) = 3/π and ∫ φ = π(1 − 0.1 + 0.1²/3)
        let expect = 3.0 * (1.0 - 0.1 + 0.01 / 3.0);
        assert!((p[1] - expect).abs() < 0.03 * expect, "{}", p[1]);
    }

    #[test]
    fn heisenberg_profile_is_homogeneous() {
        let h = heisenberg(NormFamily::euclidean(2));
        let prof = BallProfile::build(&h, &[0.0; 3], 0.1, 0.2, &QuadratureOptions { face_nodes: 2, ..quick() }).unwrap();
        let one = DensityModel::constant(1.0);
        let ratio = prof.mass(&one, 0.2) / prof.mass(&one, 0.1);
        assert!((ratio.log2() - 4.0).abs() < 0.1, "{ratio}");
    }
}
