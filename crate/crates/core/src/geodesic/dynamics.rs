//! RK4 integration of `ẋ = Σ u_i X_i(x)` with piecewise-constant controls, plus sensitivities.

use crate::error::{Result, SflabError};
use crate::structure::SubFinslerStructure;
use crate::symvf::{fill_powers, CompiledField};

/// Compiled control system with scratch space for repeated evaluation.
#[derive(Clone, Debug)]
pub struct ControlSystem {
    pub n: usize,
    pub k: usize,
    fields: Vec<CompiledField>,
    stride: usize,
    chart_box: Vec<(f64, f64)>,
}

/// Per-segment sensitivities: `M = ∂x_{end}/∂x_{start}` (n×n) and `B = ∂x_{end}/∂u` (n×k), row-major.
#[derive(Clone, Debug, Default)]
pub struct SegmentSensitivity {
    pub m: Vec<f64>,
    pub b: Vec<f64>,
}

pub(crate) struct EvalScratch {
    powers: Vec<f64>,
    /// `G(x)`, n×k row-major.
    pub(crate) g: Vec<f64>,
    jac_field: Vec<f64>,
    /// `Σ u_i DX_i(x)`, n×n row-major.
    a: Vec<f64>,
    col: Vec<f64>,
}

pub(crate) struct Scratch {
    pub(crate) ev: EvalScratch,
    stage: [Vec<f64>; 4],
    dstage: [Vec<f64>; 4],
    tmp: Vec<f64>,
    dtmp: Vec<f64>,
}

impl ControlSystem {
    pub fn new(s: &SubFinslerStructure) -> Self {
        let fields = s.compiled().to_vec();
        let stride = fields.iter().map(CompiledField::stride).max().unwrap_or(1);
        Self { n: s.dim(), k: s.fiber_dim(), fields, stride, chart_box: s.chart_box().to_vec() }
    }

    pub(crate) fn scratch(&self) -> Scratch {
        let n = self.n;
        let w = n + self.k;
        Scratch {
            ev: EvalScratch {
                powers: vec![0.0; n * self.stride],
                g: vec![0.0; n * self.k],
                jac_field: vec![0.0; n * n],
                a: vec![0.0; n * n],
                col: vec![0.0; n],
            },
            stage: std::array::from_fn(|_| vec![0.0; n]),
            dstage: std::array::from_fn(|_| vec![0.0; n * w]),
            tmp: vec![0.0; n],
            dtmp: vec![0.0; n * w],
        }
    }

    pub fn in_chart(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.chart_box).all(|(v, (a, b))| v.is_finite() && *v >= *a && *v <= *b)
    }

    /// Fills `ev.g` with `G(x)`.
    pub(crate) fn frame(&self, x: &[f64], ev: &mut EvalScratch) {
        fill_powers(x, self.stride, &mut ev.powers);
        let (n, k) = (self.n, self.k);
        for (i, f) in self.fields.iter().enumerate() {
            f.eval_with(&ev.powers, self.stride, &mut ev.col);
            for j in 0..n {
                ev.g[j * k + i] = ev.col[j];
            }
        }
    }

    fn rhs(&self, x: &[f64], u: &[f64], out: &mut [f64], ev: &mut EvalScratch, with_jac: bool) {
        fill_powers(x, self.stride, &mut ev.powers);
        let (n, k) = (self.n, self.k);
        out.iter_mut().for_each(|v| *v = 0.0);
        if with_jac {
            ev.a.iter_mut().for_each(|v| *v = 0.0);
        }
        for (i, f) in self.fields.iter().enumerate() {
            f.eval_with(&ev.powers, self.stride, &mut ev.col);
            for j in 0..n {
                ev.g[j * k + i] = ev.col[j];
                out[j] += u[i] * ev.col[j];
            }
            if with_jac && u[i] != 0.0 {
                f.jacobian_with(&ev.powers, self.stride, &mut ev.jac_field);
                for (a, d) in ev.a.iter_mut().zip(&ev.jac_field) {
                    *a += u[i] * d;
                }
            }
        }
    }

    /// One RK4 step of length `h` in place; updates the n×(n+k) sensitivity `s` if given.
    fn rk4_step(&self, x: &mut [f64], u: &[f64], h: f64, mut s: Option<&mut [f64]>, sc: &mut Scratch) {
        let n = self.n;
        let k = self.k;
        let w = n + k;
        let with_jac = s.is_some();
        const C: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
        for st in 0..4 {
            if st == 0 {
                sc.tmp.copy_from_slice(x);
            } else {
                let (prev, _) = sc.stage.split_at(st);
                for j in 0..n {
                    sc.tmp[j] = x[j] + C[st] * h * prev[st - 1][j];
                }
            }
            self.rhs(&sc.tmp, u, &mut sc.stage[st], &mut sc.ev, with_jac);
            if let Some(sm) = s.as_deref() {
                // dstage = A (S + c h dstage_prev) + G E
                if st == 0 {
                    sc.dtmp.copy_from_slice(sm);
                } else {
                    let prev = &sc.dstage[st - 1];
                    for (idx, d) in sc.dtmp.iter_mut().enumerate() {
                        *d = sm[idx] + C[st] * h * prev[idx];
                    }
                }
                let ds = &mut sc.dstage[st];
                for r in 0..n {
                    for c in 0..w {
                        let mut acc = 0.0;
                        for m in 0..n {
                            acc += sc.ev.a[r * n + m] * sc.dtmp[m * w + c];
                        }
                        if c >= n {
                            acc += sc.ev.g[r * k + (c - n)];
                        }
                        ds[r * w + c] = acc;
                    }
                }
            }
        }
        for j in 0..n {
            x[j] += h / 6.0 * (sc.stage[0][j] + 2.0 * sc.stage[1][j] + 2.0 * sc.stage[2][j] + sc.stage[3][j]);
        }
        if let Some(sm) = s.as_deref_mut() {
            for idx in 0..n * w {
                sm[idx] +=
                    h / 6.0 * (sc.dstage[0][idx] + 2.0 * sc.dstage[1][idx] + 2.0 * sc.dstage[2][idx] + sc.dstage[3][idx]);
            }
        }
    }

    /// Integrates one segment of duration `dt` with `steps` RK4 steps.
    pub(crate) fn segment(
        &self,
        x: &mut [f64],
        u: &[f64],
        dt: f64,
        steps: usize,
        sens: Option<&mut SegmentSensitivity>,
        sc: &mut Scratch,
        mut record: Option<&mut Vec<Vec<f64>>>,
    ) -> bool {
        let n = self.n;
        let w = n + self.k;
        let h = dt / steps as f64;
        match sens {
            Some(out) => {
                let mut s = vec![0.0; n * w];
                for i in 0..n {
                    s[i * w + i] = 1.0;
                }
                for _ in 0..steps {
                    self.rk4_step(x, u, h, Some(&mut s), sc);
                    if !self.in_chart(x) {
                        return false;
                    }
                    if let Some(r) = record.as_deref_mut() {
                        r.push(x.to_vec());
                    }
                }
                out.m.resize(n * n, 0.0);
                out.b.resize(n * self.k, 0.0);
                for r in 0..n {
                    for c in 0..n {
                        out.m[r * n + c] = s[r * w + c];
                    }
                    for c in 0..self.k {
                        out.b[r * self.k + c] = s[r * w + n + c];
                    }
                }
            }
            None => {
                for _ in 0..steps {
                    self.rk4_step(x, u, h, None, sc);
                    if !self.in_chart(x) {
                        return false;
                    }
                    if let Some(r) = record.as_deref_mut() {
                        r.push(x.to_vec());
                    }
                }
            }
        }
        true
    }
}

/// Piecewise-constant control on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ControlPath {
    pub segments: usize,
    /// `controls[s]` is the control on `[s/N, (s+1)/N)`.
    pub controls: Vec<Vec<f64>>,
}

impl ControlPath {
    pub fn new(controls: Vec<Vec<f64>>) -> Result<Self> {
        if controls.is_empty() {
            return Err(SflabError::InvalidCurve("a control path needs at least one segment".into()));
        }
        let k = controls[0].len();
        if controls.iter().any(|u| u.len() != k) {
            return Err(SflabError::InvalidCurve("controls have inconsistent dimensions".into()));
        }
        if controls.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SflabError::InvalidCurve("non-finite control entry".into()));
        }
        Ok(Self { segments: controls.len(), controls })
    }

    pub fn constant(u: Vec<f64>, segments: usize) -> Self {
        Self { segments, controls: vec![u; segments] }
    }

    pub fn fiber_dim(&self) -> usize {
        self.controls[0].len()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.controls.iter().flatten().copied().collect()
    }

    pub fn from_flat(v: &[f64], k: usize) -> Self {
        Self { segments: v.len() / k, controls: v.chunks(k).map(<[f64]>::to_vec).collect() }
    }

    /// Resamples to `segments` pieces (exact when `segments` is a multiple of the current count).
    pub fn resample(&self, segments: usize) -> Self {
        let n0 = self.segments;
        let controls = (0..segments)
            .map(|s| {
                let t = (s as f64 + 0.5) / segments as f64;
                let idx = ((t * n0 as f64) as usize).min(n0 - 1);
                self.controls[idx].clone()
            })
            .collect();
        Self { segments, controls }
    }

    /// Reverses time: the reversed path runs from the end point back to the start for
    /// symmetric frames with negated controls.
    pub fn reversed(&self) -> Self {
        Self {
            segments: self.segments,
            controls: self.controls.iter().rev().map(|u| u.iter().map(|v| -v).collect()).collect(),
        }
    }

    /// Scales time by `c` (controls multiplied by `c`).
    pub fn scaled(&self, c: f64) -> Self {
        Self { segments: self.segments, controls: self.controls.iter().map(|u| u.iter().map(|v| v * c).collect()).collect() }
    }
}

/// Sampled trajectory of an admissible curve.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// States at every RK4 step, starting with the initial point.
    pub states: Vec<Vec<f64>>,
    pub steps_per_segment: usize,
}

impl Trajectory {
    pub fn end(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// State at the start of segment `s` (and `s = N` for the end point).
    pub fn segment_start(&self, s: usize) -> &[f64] {
        &self.states[s * self.steps_per_segment]
    }

    /// Linear interpolation of the state at time `t ∈ [0,1]`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let m = self.states.len() - 1;
        let pos = (t.clamp(0.0, 1.0) * m as f64).min(m as f64);
        let i = (pos.floor() as usize).min(m.saturating_sub(1));
        let f = pos - i as f64;
        if m == 0 {
            return self.states[0].clone();
        }
        self.states[i].iter().zip(&self.states[i + 1]).map(|(a, b)| a + f * (b - a)).collect()
    }
}
