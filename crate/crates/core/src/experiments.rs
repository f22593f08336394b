//! Named experiments with JSON reports.
//!
//! A report is a pure function of its config: no clocks, no thread counts, ordered maps only.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cdlab::{random_box_pairs, violation_search, CdOptions, DiscreteMeasure};
use crate::coords::{build_privileged, PrivilegedChart};
use crate::error::{Result, SflabError};
use crate::geodesic::{ball_box_check, distance, eps_structure, hat_structure, DistanceCertificate, DistanceOptions, WarmStart};
use crate::measure::{ahlfors_fit, ball_measure_curve, tangent_normalization, DensityKind, DensityModel, QuadratureOptions};
use crate::nilpotent::{approximate_at, verify_homogeneity, verify_nilpotency};
use crate::pmgh::{tangent_check, TangentCheckOptions};
use crate::structure::{fixtures, NormFamily, NormKind, SubFinslerStructure, DEFAULT_DEPTH_CAP};
use crate::symvf::{rat, rat_from_f64};

pub const EXPERIMENTS: [&str; 12] =
    ["flag", "privileged", "nilpotent", "dist", "scaling", "converge", "ballbox", "ballmass", "ahlfors", "mq", "tangent-check", "cd-scan"];

/// Everything an experiment reads.  Unset parameters take the documented defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    /// Structure JSON path, or the name of a bundled fixture.
    pub structure: String,
    /// Norm override: `l2`, `linf`, `l1`, `l<p>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm: Option<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divisions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<Vec<f64>>,
    /// `constant`, `sinusoid`, `piecewise`, or an inline density object.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub face_nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub face_panels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity_chart: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fast: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_axis: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(experiment: &str, structure: &str) -> Self {
        Self { experiment: experiment.into(), structure: structure.into(), ..Default::default() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SflabError::Parse(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub structure: String,
    pub structure_hash: String,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub provenance: Provenance,
    /// `None` for report-only experiments.
    pub passed: Option<bool>,
    pub summary: String,
    pub result: Value,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }
}

pub fn load_structure(spec: &str, norm: Option<&str>) -> Result<SubFinslerStructure> {
    let s = if Path::new(spec).is_file() {
        SubFinslerStructure::load(Path::new(spec))?
    } else {
        fixtures::by_name(spec).ok_or_else(|| SflabError::InvalidArgument(format!("no structure file or bundled fixture named {spec:?}")))?
    };
    match norm {
        None => Ok(s),
        Some(n) => s.with_norm(parse_norm(n, s.fiber_dim())?),
    }
}

pub fn parse_norm(name: &str, k: usize) -> Result<NormFamily> {
    let p = match name.trim().to_ascii_lowercase().as_str() {
        "l2" | "euclidean" => 2.0,
        "linf" | "l_inf" | "max" => f64::INFINITY,
        other => other
            .strip_prefix('l')
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| SflabError::Parse(format!("unknown norm {name:?} (use l2, linf or l<p>)")))?,
    };
    NormFamily::new(k, NormKind::Lp { p })
}

pub fn parse_density(v: Option<&Value>, dim: usize, seed: u64) -> Result<DensityModel> {
    match v {
        None => Ok(DensityModel::constant(1.0)),
        Some(Value::String(name)) => match name.as_str() {
            "constant" => Ok(DensityModel::constant(1.0)),
            "sinusoid" => DensityModel::new(
                DensityKind::Sinusoid { coordinate: 0, offset: 1.5, amplitude: 0.5, frequency: 1.0 },
                (1.0, 2.0),
                &vec![(-8.0, 8.0); dim],
            ),
            "piecewise" => DensityModel::seeded_piecewise(dim, 0.5, 4, (0.5, 2.0), seed),
            other => Err(SflabError::Parse(format!("unknown density {other:?}"))),
        },
        Some(obj) => {
            let kind: DensityKind = serde_json::from_value(obj.get("kind_spec").cloned().unwrap_or_else(|| obj.clone()))?;
            let bounds = obj
                .get("bounds")
                .and_then(|b| serde_json::from_value::<(f64, f64)>(b.clone()).ok())
                .ok_or_else(|| SflabError::Parse("inline densities need \"bounds\": [c, C]".into()))?;
            DensityModel::new(kind, bounds, &vec![(-1.0, 1.0); dim])
        }
    }
}

fn distance_options(cfg: &ExperimentConfig) -> DistanceOptions {
    let base = if cfg.fast.unwrap_or(false) { DistanceOptions::fast() } else { DistanceOptions::default() };
    DistanceOptions { seed: cfg.seed, ..base }
}

fn tolerances(opts: &DistanceOptions, extra: &[(&str, f64)]) -> BTreeMap<String, f64> {
    let mut t = BTreeMap::new();
    t.insert("endpoint_tol".into(), opts.endpoint_tol);
    t.insert("solver_gap".into(), opts.gap);
    for (k, v) in extra {
        t.insert((*k).into(), *v);
    }
    t
}

/// Runs the experiment named in `cfg`.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    let s = load_structure(&cfg.structure, cfg.norm.as_deref())?;
    let q = cfg.point.clone().unwrap_or_else(|| vec![0.0; s.dim()]);
    if q.len() != s.dim() {
        return Err(SflabError::DimensionMismatch { expected: s.dim(), found: q.len() });
    }
    let opts = distance_options(cfg);
    let cap = cfg.depth_cap.unwrap_or(DEFAULT_DEPTH_CAP);
    let (passed, summary, result, tol) = match cfg.experiment.as_str() {
        "flag" => {
            let f = s.flag_at(&q, cap)?;
            let summary = format!("growth {:?}, weights {:?}, step {}, Q = {}", f.growth, f.weights.as_slice(), f.step, f.homogeneous_dimension);
            (None, summary, json!({"growth": f.growth, "weights": f.weights, "step": f.step, "Q": f.homogeneous_dimension, "regular": f.regular, "adapted_frame": f.adapted_frame}), BTreeMap::new())
        }
        "privileged" => {
            let chart = build_privileged(&s, &q, None)?;
            let ok = chart.certify(&s).is_ok();
            let chart_json: Value = serde_json::from_str(&chart.to_json())?;
            (Some(ok), format!("privileged chart certified: {ok}"), json!({"certified": ok, "chart": chart_json}), BTreeMap::new())
        }
        "nilpotent" => {
            let (_, nil) = approximate_at(&s, &q, cfg.identity_chart.unwrap_or(false))?;
            let samples = [rat(1, 2), rat(1, 3), rat(2, 7)];
            let homogeneous = verify_homogeneity(&nil, &samples)?;
            let rep = verify_nilpotency(&nil, nil.step + 1)?;
            let fields: Vec<String> = nil.hat_fields.iter().map(|f| f.to_string()).collect();
            let ok = homogeneous && rep.hoermander_at_0 && rep.step_found == nil.step;
            let summary = format!("homogeneous {homogeneous}, step {}, algebra dim {}, centre dim {}", rep.step_found, rep.algebra_dimension, rep.center_dimension);
            (Some(ok), summary, json!({"hat_fields": fields, "homogeneous": homogeneous, "nilpotency": rep}), BTreeMap::new())
        }
        "dist" => {
            let a = cfg.a.clone().unwrap_or_else(|| vec![0.0; s.dim()]);
            let b = cfg.b.clone().ok_or_else(|| SflabError::InvalidArgument("dist needs an end point".into()))?;
            let c = distance(&s, &a, &b, &opts)?;
            (None, format!("d = {:.9}", c.value), serde_json::to_value(&c)?, tolerances(&opts, &[]))
        }
        "scaling" => {
            let eps = cfg.eps.clone().unwrap_or_else(|| vec![0.5, 0.25, 0.125]);
            let tol = cfg.tolerance.unwrap_or(0.02);
            let r = scaling_experiment(&s, &q, &default_pairs(s.dim()), &eps, &opts)?;
            let ok = r.max_rel_error <= tol;
            (Some(ok), format!("max relative error {:.3e} (tolerance {tol})", r.max_rel_error), serde_json::to_value(&r)?, tolerances(&opts, &[("relative", tol)]))
        }
        "converge" => {
            let levels = cfg.levels.unwrap_or(5);
            let tol = cfg.tolerance.unwrap_or(0.05);
            let (pa, pb) = convergence_grid(s.dim());
            let r = convergence_experiment(&s, &q, &pa, &pb, levels, &opts)?;
            let ok = r.strictly_decreasing && r.final_ratio < tol;
            let summary = format!("sup errors {:?}; final/diameter {:.3e}", r.rows.iter().map(|x| x.sup_error).collect::<Vec<_>>(), r.final_ratio);
            (Some(ok), summary, serde_json::to_value(&r)?, tolerances(&opts, &[("final_ratio", tol)]))
        }
        "ballbox" => {
            let chart = if cfg.identity_chart.unwrap_or(false) { PrivilegedChart::identity(&s, &q, None)? } else { build_privileged(&s, &q, None)? };
            let radii = cfg.radii.clone().unwrap_or_else(|| vec![0.1, 0.2, 0.4]);
            let constants = cfg.constants.clone().unwrap_or_else(|| (0..12).map(|i| 1.0 + 0.25 * i as f64).collect());
            let r = ball_box_check(&s, &chart, &radii, &constants, cfg.divisions.unwrap_or(2), &opts)?;
            let ok = r.c_q.is_some();
            (Some(ok), format!("C_q = {:?}", r.c_q), serde_json::to_value(&r)?, tolerances(&opts, &[]))
        }
        "ballmass" | "ahlfors" => {
            let radii = cfg.radii.clone().unwrap_or_else(|| vec![0.05, 0.0707, 0.1, 0.1414, 0.2]);
            let dens = parse_density(cfg.density.as_ref(), s.dim(), cfg.seed)?;
            let qo = quadrature_options(cfg, &opts);
            let curve = ball_measure_curve(&s, &dens, &q, &radii, &qo)?;
            if cfg.experiment == "ballmass" {
                (None, format!("{} radii", radii.len()), serde_json::to_value(&curve)?, tolerances(&opts, &[]))
            } else {
                let fit = ahlfors_fit(&curve)?;
                let big_q = s.flag_at(&q, cap)?.homogeneous_dimension as f64;
                let tol = cfg.tolerance.unwrap_or(0.05);
                let ok = ((fit.q_est - big_q) / big_q).abs() <= tol;
                let summary = format!("Q_est = {:.4} (Q = {big_q}), C_est = {:.4}", fit.q_est, fit.c_est);
                (Some(ok), summary, json!({"curve": curve, "fit": fit, "Q": big_q}), tolerances(&opts, &[("relative", tol)]))
            }
        }
        "mq" => {
            let (_, nil) = approximate_at(&s, &q, cfg.identity_chart.unwrap_or(false))?;
            let qo = quadrature_options(cfg, &opts);
            let m = tangent_normalization(&nil, &qo)?;
            (None, format!("m(q) = {m:.6}"), json!({"m_q": m, "face_nodes": qo.face_nodes, "face_panels": qo.face_panels, "radial_nodes": qo.radial_nodes}), tolerances(&opts, &[]))
        }
        "tangent-check" => {
            let radii = cfg.radii.clone().unwrap_or_else(|| (1..=5).map(|m| 0.5f64.powi(m)).collect());
            let dens = parse_density(cfg.density.as_ref(), s.dim(), cfg.seed)?;
            let to = TangentCheckOptions {
                grid_size: cfg.grid_size.unwrap_or(6),
                identity_chart: cfg.identity_chart.unwrap_or(false),
                cold: DistanceOptions { seed: cfg.seed, ..DistanceOptions::fast() },
                ..Default::default()
            };
            let tol = cfg.tolerance.unwrap_or(0.05);
            let r = tangent_check(&s, &dens, &q, &radii, &to)?;
            let last = r.rows.last().map(|x| x.distortion).unwrap_or(f64::INFINITY);
            let ok = r.monotone && last < tol * to.radius;
            let summary = format!("monotone {}, final distortion {:.3e}, sample {}", r.monotone, last, r.rows.last().map(|x| x.sample_size).unwrap_or(0));
            (Some(ok), summary, serde_json::to_value(&r)?, tolerances(&to.warm, &[("final_distortion", tol)]))
        }
        "cd-scan" => {
            let n_grid = cfg.n_grid.clone().unwrap_or_else(|| vec![2.0, 5.0, 10.0]);
            let fam = cd_family(&s, cfg)?;
            let co = CdOptions { distance: opts.clone(), ..Default::default() };
            let r = violation_search(&s, &fam, &n_grid, cfg.k.unwrap_or(0.0), cfg.budget.unwrap_or(30), &co)?;
            let summary = format!("{} evaluations, {} above ε_disc, {} skipped", r.evaluated, r.violations.len(), r.skipped.len());
            (None, summary, serde_json::to_value(&r)?, tolerances(&opts, &[]))
        }
        other => return Err(SflabError::InvalidArgument(format!("unknown experiment {other:?}; expected one of {EXPERIMENTS:?}"))),
    };
    Ok(Report {
        provenance: Provenance {
            tool: "sflab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            experiment: cfg.experiment.clone(),
            structure: cfg.structure.clone(),
            structure_hash: s.content_hash(),
            seed: cfg.seed,
            tolerances: tol,
            config: cfg.clone(),
        },
        passed,
        summary,
        result,
    })
}

fn quadrature_options(cfg: &ExperimentConfig, opts: &DistanceOptions) -> QuadratureOptions {
    let d = QuadratureOptions::default();
    QuadratureOptions {
        face_nodes: cfg.face_nodes.unwrap_or(d.face_nodes),
        face_panels: cfg.face_panels.unwrap_or(d.face_panels),
        identity_chart: cfg.identity_chart.unwrap_or(d.identity_chart),
        distance: opts.clone(),
        ..d
    }
}

fn cd_family(s: &SubFinslerStructure, cfg: &ExperimentConfig) -> Result<Vec<(DiscreteMeasure, DiscreteMeasure)>> {
    let n = s.dim();
    let per_axis = cfg.per_axis.unwrap_or(if n <= 2 { 4 } else { 2 });
    random_box_pairs(n, cfg.pairs.unwrap_or(10), per_axis, 0.5, (0.1, 0.4), cfg.seed)
}

/// Five pairs spread over the unit box (privileged coordinates).
pub fn default_pairs(n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let pick = |v: [f64; 3]| v.iter().copied().cycle().take(n).collect::<Vec<_>>();
    vec![
        (vec![0.0; n], pick([0.6, 0.0, 0.0])),
        (vec![0.0; n], pick([0.0, 0.0, 0.4])),
        (pick([0.2, -0.1, 0.1]), pick([-0.3, 0.4, -0.2])),
        (pick([-0.4, 0.3, 0.0]), pick([0.3, 0.3, 0.3])),
        (pick([0.1, 0.1, -0.3]), pick([0.2, -0.4, 0.2])),
    ]
}

/// Two five-point sets whose product is the convergence pair grid.
pub fn convergence_grid(n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let pick = |v: [f64; 3]| v.iter().copied().cycle().take(n).collect::<Vec<_>>();
    let a = vec![vec![0.0; n], pick([0.4, 0.0, 0.0]), pick([0.0, 0.4, 0.1]), pick([-0.3, 0.2, -0.2]), pick([0.2, -0.3, 0.3])];
    let b = vec![pick([0.5, 0.5, 0.0]), pick([0.0, 0.0, 0.5]), pick([-0.5, 0.1, 0.3]), pick([0.3, -0.5, -0.4]), pick([-0.2, -0.4, 0.1])];
    (a, b)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingRow {
    pub pair: usize,
    pub eps: f64,
    pub distance: f64,
    /// `ε · d^ε(δ_{1/ε} a, δ_{1/ε} b)`.
    pub rescaled: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub max_rel_error: f64,
}

/// `ε · d^ε(δ_{1/ε}a, δ_{1/ε}b)` against `d(a, b)`, with pairs in privileged coordinates at `q`.
pub fn scaling_experiment(
    s: &SubFinslerStructure,
    q: &[f64],
    pairs: &[(Vec<f64>, Vec<f64>)],
    eps: &[f64],
    opts: &DistanceOptions,
) -> Result<ScalingReport> {
    let (chart, nil) = approximate_at(s, q, false)?;
    let sp = chart.structure_in_chart(s)?;
    let d = nil.dilations();
    let eps_structs = eps.iter().map(|&e| Ok((e, eps_structure(&sp, &d, &rat_from_f64(e)?)?))).collect::<Result<Vec<_>>>()?;
    let per_pair: Vec<Vec<ScalingRow>> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, (a, b))| {
            let base = distance(&sp, a, b, opts)?;
            eps_structs
                .iter()
                .map(|(e, se)| {
                    let (ae, be) = (d.apply(1.0 / e, a), d.apply(1.0 / e, b));
                    let warm = WarmStart::from(base.path.scaled(1.0 / e));
                    let c = distance(se, &ae, &be, &opts.with_warm_start(Some(warm)))?;
                    let rescaled = e * c.value;
                    Ok(ScalingRow { pair: k, eps: *e, distance: base.value, rescaled, rel_error: (rescaled - base.value).abs() / base.value })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ScalingRow> = per_pair.into_iter().flatten().collect();
    let max_rel_error = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    Ok(ScalingReport { rows, max_rel_error })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub m: usize,
    pub eps: f64,
    pub sup_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub hat: Vec<f64>,
    pub diameter: f64,
    pub strictly_decreasing: bool,
    pub final_ratio: f64,
}

/// `sup |d^ε − d̂|` over `pa × pb` for `ε = 2^{−m}`, `m = 0..=levels`.
///
/// Every `d^ε` solve is warm-started from the next smaller ε (the smallest from `d̂`) with one
/// fixed discretization, so successive errors are comparable.
pub fn convergence_experiment(
    s: &SubFinslerStructure,
    q: &[f64],
    pa: &[Vec<f64>],
    pb: &[Vec<f64>],
    levels: usize,
    opts: &DistanceOptions,
) -> Result<ConvergenceReport> {
    let (chart, nil) = approximate_at(s, q, false)?;
    let sp = chart.structure_in_chart(s)?;
    let hat = hat_structure(&nil)?;
    let d = nil.dilations();
    let pairs: Vec<(usize, usize)> = (0..pa.len()).flat_map(|i| (0..pb.len()).map(move |j| (i, j))).collect();
    let warm_opts = DistanceOptions { segments: vec![32], starts: 0, ..opts.clone() };
    let hat_certs: Vec<DistanceCertificate> = pairs.par_iter().map(|&(i, j)| distance(&hat, &pa[i], &pb[j], opts)).collect::<Result<_>>()?;
    // re-solve the tangent at the chain's discretization so that every level shares it
    let hat_chain: Vec<DistanceCertificate> = pairs
        .par_iter()
        .zip(&hat_certs)
        .map(|(&(i, j), c)| distance(&hat, &pa[i], &pb[j], &warm_opts.with_warm_start(Some(c.warm()))).or_else(|_| Ok(c.clone())))
        .collect::<Result<_>>()?;
    let hat_vals: Vec<f64> = hat_chain.iter().map(|c| c.value).collect();
    let diameter = hat_vals.iter().copied().fold(0.0, f64::max);
    let mut warm: Vec<WarmStart> = hat_chain.iter().map(|c| c.warm()).collect();
    let mut rows = Vec::new();
    for m in (0..=levels).rev() {
        let e = rat(1, 1i64 << m);
        let se = eps_structure(&sp, &d, &e)?;
        let certs: Vec<DistanceCertificate> = pairs
            .par_iter()
            .zip(&warm)
            .map(|(&(i, j), w)| {
                distance(&se, &pa[i], &pb[j], &warm_opts.with_warm_start(Some(w.clone()))).or_else(|_| distance(&se, &pa[i], &pb[j], opts))
            })
            .collect::<Result<_>>()?;
        let sup = certs.iter().zip(&hat_vals).map(|(c, h)| (c.value - h).abs()).fold(0.0, f64::max);
        rows.push(ConvergenceRow { m, eps: 0.5f64.powi(m as i32), sup_error: sup });
        warm = certs.iter().map(|c| c.warm()).collect();
    }
    rows.reverse();
    let strictly_decreasing = rows.windows(2).all(|w| w[1].sup_error < w[0].sup_error);
    let final_ratio = rows.last().map(|r| r.sup_error / diameter).unwrap_or(f64::INFINITY);
    Ok(ConvergenceReport { rows, hat: hat_vals, diameter, strictly_decreasing, final_ratio })
}
