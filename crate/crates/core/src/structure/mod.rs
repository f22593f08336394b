//! Sub-Finsler structures on a polynomial chart: generating family, norm family, flag data.

pub mod fixtures;
mod io;
mod norm;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SflabError};
use crate::sampling::halton_ball;
use crate::symvf::{lie_bracket, CompiledField, PolyVectorField, WeightVector};

pub use io::{poly_from_terms, poly_to_terms, NormSpec, StructureFile, TermSpec};
pub use norm::{
    lp_norm, minimal_control, sample_directions, Gauge, MinimalControl, NormFamily, NormKind, Surrogate,
    SURROGATE_LEVELS,
};

/// Bracket depth used when a structure is constructed.
pub const DEFAULT_DEPTH_CAP: usize = 8;

/// Relative singular-value threshold for numeric ranks.
pub const RANK_TOL: f64 = 1e-9;

/// An iterated bracket of generating fields, e.g. `[X1,[X1,X2]]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BracketExpr {
    Gen(usize),
    Bracket(Box<BracketExpr>, Box<BracketExpr>),
}

impl BracketExpr {
    pub fn len(&self) -> usize {
        match self {
            BracketExpr::Gen(_) => 1,
            BracketExpr::Bracket(a, b) => a.len() + b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Evaluates the expression symbolically on a generating family.
    pub fn field(&self, gens: &[PolyVectorField]) -> Result<PolyVectorField> {
        match self {
            BracketExpr::Gen(i) => gens
                .get(*i)
                .cloned()
                .ok_or_else(|| SflabError::InvalidArgument(format!("no generator X{}", i + 1))),
            BracketExpr::Bracket(a, b) => lie_bracket(&a.field(gens)?, &b.field(gens)?),
        }
    }
}

impl fmt::Display for BracketExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BracketExpr::Gen(i) => write!(f, "X{}", i + 1),
            BracketExpr::Bracket(a, b) => write!(f, "[{a},{b}]"),
        }
    }
}

/// Flag data at a point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlagReport {
    pub growth: Vec<usize>,
    pub weights: WeightVector,
    pub step: u32,
    pub homogeneous_dimension: u32,
    pub regular: bool,
    /// Bracket expressions of the adapted frame, in weight order.
    pub adapted_frame: Vec<String>,
    #[serde(skip)]
    pub frame_exprs: Vec<BracketExpr>,
    #[serde(skip)]
    pub frame_fields: Vec<PolyVectorField>,
}

/// Generating family plus norm family on an axis-aligned chart box.
#[derive(Clone, Debug)]
pub struct SubFinslerStructure {
    n: usize,
    fields: Vec<PolyVectorField>,
    norm: NormFamily,
    chart_box: Vec<(f64, f64)>,
    compiled: Vec<CompiledField>,
}

impl SubFinslerStructure {
    /// Builds a structure and checks Hörmander's condition at the chart centre.
    pub fn new(fields: Vec<PolyVectorField>, norm: NormFamily, chart_box: Vec<(f64, f64)>) -> Result<Self> {
        Self::with_depth_cap(fields, norm, chart_box, DEFAULT_DEPTH_CAP)
    }

    pub fn with_depth_cap(
        fields: Vec<PolyVectorField>,
        norm: NormFamily,
        chart_box: Vec<(f64, f64)>,
        depth_cap: usize,
    ) -> Result<Self> {
        let s = Self::unchecked(fields, norm, chart_box)?;
        let c = s.chart_center();
        s.flag_at(&c, depth_cap)?;
        let mut probes = vec![c];
        probes.extend(s.box_corners());
        s.norm.check_positive(&probes)?;
        Ok(s)
    }

    /// Builds without the Hörmander check (dimension checks only).
    pub fn unchecked(fields: Vec<PolyVectorField>, norm: NormFamily, chart_box: Vec<(f64, f64)>) -> Result<Self> {
        let n = fields.first().map(PolyVectorField::dim).ok_or_else(|| SflabError::InvalidArgument("empty generating family".into()))?;
        if let Some(bad) = fields.iter().find(|f| f.dim() != n) {
            return Err(SflabError::DimensionMismatch { expected: n, found: bad.dim() });
        }
        if norm.fiber_dim() != fields.len() {
            return Err(SflabError::DimensionMismatch { expected: fields.len(), found: norm.fiber_dim() });
        }
        if chart_box.len() != n {
            return Err(SflabError::DimensionMismatch { expected: n, found: chart_box.len() });
        }
        if chart_box.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(SflabError::InvalidArgument("chart box has an empty side".into()));
        }
        let compiled = fields.iter().map(CompiledField::new).collect();
        Ok(Self { n, fields, norm, chart_box, compiled })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn fiber_dim(&self) -> usize {
        self.fields.len()
    }

    pub fn fields(&self) -> &[PolyVectorField] {
        &self.fields
    }

    pub fn compiled(&self) -> &[CompiledField] {
        &self.compiled
    }

    pub fn norm(&self) -> &NormFamily {
        &self.norm
    }

    pub fn chart_box(&self) -> &[(f64, f64)] {
        &self.chart_box
    }

    pub fn with_norm(&self, norm: NormFamily) -> Result<Self> {
        Self::unchecked(self.fields.clone(), norm, self.chart_box.clone())
    }

    pub fn with_chart_box(&self, chart_box: Vec<(f64, f64)>) -> Result<Self> {
        Self::unchecked(self.fields.clone(), self.norm.clone(), chart_box)
    }

    pub fn chart_center(&self) -> Vec<f64> {
        self.chart_box.iter().map(|(a, b)| 0.5 * (a + b)).collect()
    }

    fn box_corners(&self) -> Vec<Vec<f64>> {
        (0..(1usize << self.n))
            .map(|m| self.chart_box.iter().enumerate().map(|(i, (a, b))| if m >> i & 1 == 1 { *b } else { *a }).collect())
            .collect()
    }

    pub fn in_chart(&self, p: &[f64]) -> bool {
        p.iter().zip(&self.chart_box).all(|(x, (a, b))| *x >= *a && *x <= *b)
    }

    /// The `n × k` matrix `[X_1(q) … X_k(q)]`.
    pub fn frame_at(&self, q: &[f64]) -> DMatrix<f64> {
        let cols: Vec<Vec<f64>> = self.compiled.iter().map(|f| f.eval(q)).collect();
        DMatrix::from_fn(self.n, self.fiber_dim(), |i, j| cols[j][i])
    }

    /// `Σ u_i X_i(q)`.
    pub fn velocity(&self, q: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (f, ui) in self.compiled.iter().zip(u) {
            for (o, v) in out.iter_mut().zip(f.eval(q)) {
                *o += ui * v;
            }
        }
        out
    }

    /// `‖v‖_q = min{|u|_q : Σ u_i X_i(q) = v}`.
    pub fn induced_norm(&self, q: &[f64], v: &[f64]) -> Result<f64> {
        Ok(self.minimal_control(q, v)?.value)
    }

    pub fn minimal_control(&self, q: &[f64], v: &[f64]) -> Result<MinimalControl> {
        if q.len() != self.n {
            return Err(SflabError::DimensionMismatch { expected: self.n, found: q.len() });
        }
        minimal_control(&self.norm.at(q), &self.frame_at(q), v)
    }

    pub fn rank_at(&self, q: &[f64]) -> usize {
        numeric_rank(&self.frame_at(q))
    }

    /// Flag of the distribution at `q`, bracketing up to `depth_cap`.
    pub fn flag_at(&self, q: &[f64], depth_cap: usize) -> Result<FlagReport> {
        if depth_cap < 1 {
            return Err(SflabError::InvalidArgument("depth_cap must be at least 1".into()));
        }
        if q.len() != self.n {
            return Err(SflabError::DimensionMismatch { expected: self.n, found: q.len() });
        }
        let levels = self.bracket_levels(q, depth_cap)?;
        let (growth, frame) = growth_at(&levels, q, self.n).map_err(|rank| SflabError::HoermanderUndecided {
            rank,
            dimension: self.n,
            depth: depth_cap,
        })?;
        let weights = WeightVector::from_growth(&growth)?;
        let regular = halton_ball(q, 1e-2 * (1.0 + q.iter().map(|x| x.abs()).fold(0.0, f64::max)), 16)
            .iter()
            .all(|p| growth_at(&levels, p, self.n).map(|(g, _)| g == growth).unwrap_or(false));
        let frame_exprs: Vec<BracketExpr> = frame.iter().map(|(e, _)| e.clone()).collect();
        Ok(FlagReport {
            step: growth.len() as u32,
            homogeneous_dimension: weights.homogeneous_dimension(),
            growth,
            weights,
            regular,
            adapted_frame: frame_exprs.iter().map(ToString::to_string).collect(),
            frame_exprs,
            frame_fields: frame.into_iter().map(|(_, f)| f).collect(),
        })
    }

    /// Brackets grouped by length; stops early once the values at `q` span `R^n`.
    fn bracket_levels(&self, q: &[f64], depth_cap: usize) -> Result<Vec<Vec<(BracketExpr, PolyVectorField)>>> {
        let k = self.fiber_dim();
        let mut levels: Vec<Vec<(BracketExpr, PolyVectorField)>> =
            vec![(0..k).map(|i| (BracketExpr::Gen(i), self.fields[i].clone())).collect()];
        let mut seen: Vec<PolyVectorField> = self.fields.clone();
        while levels.len() < depth_cap {
            if growth_at(&levels, q, self.n).is_ok() {
                break;
            }
            let prev = levels.last().unwrap();
            let mut next = Vec::new();
            for i in 0..k {
                for (e, f) in prev {
                    let b = lie_bracket(&self.fields[i], f)?;
                    if b.is_zero() || seen.contains(&b) {
                        continue;
                    }
                    seen.push(b.clone());
                    next.push((BracketExpr::Bracket(Box::new(BracketExpr::Gen(i)), Box::new(e.clone())), b));
                }
            }
            if next.is_empty() {
                break;
            }
            levels.push(next);
        }
        Ok(levels)
    }

    /// True iff the growth vector at `samples` quasi-random points within `radius` matches `q`.
    pub fn regularity_scan(&self, q: &[f64], radius: f64, samples: usize, depth_cap: usize) -> Result<bool> {
        if samples < 1 {
            return Err(SflabError::InvalidArgument("samples must be ≥ 1".into()));
        }
        let base = self.flag_at(q, depth_cap)?;
        for p in halton_ball(q, radius, samples) {
            if self.flag_at(&p, depth_cap)?.growth != base.growth {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn to_file(&self) -> StructureFile {
        StructureFile::from_structure(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("structure serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: StructureFile = serde_json::from_str(s)?;
        file.into_structure()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(&self.to_file()).expect("structure serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Greedy flag at a point: returns the growth vector and the chosen frame, or the rank reached.
#[allow(clippy::type_complexity)]
fn growth_at(
    levels: &[Vec<(BracketExpr, PolyVectorField)>],
    q: &[f64],
    n: usize,
) -> std::result::Result<(Vec<usize>, Vec<(BracketExpr, PolyVectorField)>), usize> {
    let mut chosen: Vec<(BracketExpr, PolyVectorField)> = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut growth = Vec::new();
    // scale for the relative threshold: largest value over all candidates
    for level in levels {
        for (e, f) in level {
            if cols.len() == n {
                break;
            }
            let v = f.eval(q);
            cols.push(v);
            let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
            if numeric_rank(&m) == cols.len() {
                chosen.push((e.clone(), f.clone()));
            } else {
                cols.pop();
            }
        }
        growth.push(cols.len());
        if cols.len() == n {
            // drop trailing plateau-free bookkeeping: growth ends at n
            return Ok((growth, chosen));
        }
    }
    Err(cols.len())
}

/// Rank with singular values below `RANK_TOL · σ_max` treated as zero.
pub fn numeric_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOL * smax).count()
}
