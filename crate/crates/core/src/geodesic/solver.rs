//! Direct transcription of the minimum-energy problem: augmented Lagrangian on the endpoint
//! constraint, dense BFGS inner loop, min-norm Newton projection at the end.

use nalgebra::{DMatrix, DVector};

use super::dynamics::{ControlPath, ControlSystem, Scratch, SegmentSensitivity, Trajectory};
use crate::structure::{minimal_control, Gauge, NormFamily, Surrogate};

/// Tunables of a single transcription solve.
#[derive(Clone, Debug)]
pub(crate) struct StageParams {
    pub steps_per_segment: usize,
    pub level: usize,
    pub max_outer: usize,
    pub max_inner: usize,
    pub feas_tol: f64,
}

pub(crate) struct Problem<'a> {
    pub sys: &'a ControlSystem,
    pub norm: &'a NormFamily,
    pub a: &'a [f64],
    pub b: &'a [f64],
}

#[derive(Clone, Debug)]
pub(crate) struct StageResult {
    pub controls: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub energy: f64,
    pub endpoint_error: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

struct Forward {
    end: Vec<f64>,
    /// n × (N k), row-major.
    jac: Vec<f64>,
    starts: Vec<Vec<f64>>,
}

struct Workspace<'p, 'a> {
    p: &'p Problem<'a>,
    segments: usize,
    steps: usize,
    sc: Scratch,
    sens: Vec<SegmentSensitivity>,
    surrogates: Vec<Surrogate>,
    evaluations: usize,
}

impl<'p, 'a> Workspace<'p, 'a> {
    fn new(p: &'p Problem<'a>, segments: usize, steps: usize) -> Self {
        Self {
            p,
            segments,
            steps,
            sc: p.sys.scratch(),
            sens: vec![SegmentSensitivity::default(); segments],
            surrogates: Vec::new(),
            evaluations: 0,
        }
    }

    fn k(&self) -> usize {
        self.p.sys.k
    }

    fn forward(&mut self, u: &[f64], with_jac: bool) -> Option<Forward> {
        self.evaluations += 1;
        let sys = self.p.sys;
        let (n, k) = (sys.n, sys.k);
        let dt = 1.0 / self.segments as f64;
        let mut x = self.p.a.to_vec();
        let mut starts = Vec::with_capacity(self.segments);
        for s in 0..self.segments {
            starts.push(x.clone());
            let sens = if with_jac { Some(&mut self.sens[s]) } else { None };
            if !sys.segment(&mut x, &u[s * k..(s + 1) * k], dt, self.steps, sens, &mut self.sc, None) {
                return None;
            }
        }
        let mut jac = Vec::new();
        if with_jac {
            let m = self.segments * k;
            jac = vec![0.0; n * m];
            let mut p = DMatrix::<f64>::identity(n, n);
            for s in (0..self.segments).rev() {
                let sens = &self.sens[s];
                let bm = DMatrix::from_row_slice(n, k, &sens.b);
                let col = &p * bm;
                for r in 0..n {
                    for c in 0..k {
                        jac[r * m + s * k + c] = col[(r, c)];
                    }
                }
                p = &p * DMatrix::from_row_slice(n, n, &sens.m);
            }
        }
        Some(Forward { end: x, jac, starts })
    }

    /// Re-freezes the point-dependent gauges along the current trajectory.
    fn freeze_gauges(&mut self, u: &[f64], level: usize) -> bool {
        let k = self.k();
        if self.p.norm.is_constant() {
            if self.surrogates.is_empty() {
                let g = self.p.norm.at(self.p.a);
                self.surrogates = vec![g.surrogate(k, level)];
            } else {
                let g = self.p.norm.at(self.p.a);
                self.surrogates[0] = g.surrogate(k, level);
            }
            return true;
        }
        let Some(f) = self.forward(u, false) else { return false };
        let mut ends = f.starts[1..].to_vec();
        ends.push(f.end.clone());
        self.surrogates = f
            .starts
            .iter()
            .zip(&ends)
            .map(|(s, e)| {
                let mid: Vec<f64> = s.iter().zip(e).map(|(a, b)| 0.5 * (a + b)).collect();
                self.p.norm.at(&mid).surrogate(k, level)
            })
            .collect();
        true
    }

    fn energy(&self, u: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let k = self.k();
        let h = 1.0 / self.segments as f64;
        let mut e = 0.0;
        let mut tmp = vec![0.0; k];
        match grad {
            Some(g) => {
                for s in 0..self.segments {
                    let sur = &self.surrogates[s.min(self.surrogates.len() - 1)];
                    e += h * sur.energy(&u[s * k..(s + 1) * k], &mut tmp);
                    for c in 0..k {
                        g[s * k + c] = h * tmp[c];
                    }
                }
            }
            None => {
                for s in 0..self.segments {
                    let sur = &self.surrogates[s.min(self.surrogates.len() - 1)];
                    e += h * sur.energy(&u[s * k..(s + 1) * k], &mut tmp);
                }
            }
        }
        e
    }

    /// Augmented Lagrangian value (and gradient), or `None` outside the chart.
    fn al(&mut self, u: &[f64], lambda: &[f64], mu: f64, grad: Option<&mut [f64]>) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let n = self.p.sys.n;
        let with_grad = grad.is_some();
        let f = self.forward(u, with_grad)?;
        let r: Vec<f64> = f.end.iter().zip(self.p.b).map(|(x, y)| x - y).collect();
        let mut val = 0.0;
        match grad {
            Some(g) => {
                val += self.energy(u, Some(g));
                let m = u.len();
                for i in 0..n {
                    let w = lambda[i] + mu * r[i];
                    for j in 0..m {
                        g[j] += w * f.jac[i * m + j];
                    }
                }
            }
            None => val += self.energy(u, None),
        }
        for i in 0..n {
            val += lambda[i] * r[i] + 0.5 * mu * r[i] * r[i];
        }
        Some((val, r, f.jac))
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `(D + μ JᵀJ)^{-1}` with `D = d·I`, by Woodbury.
fn initial_inverse_hessian(jac: &[f64], n: usize, m: usize, d: f64, mu: f64) -> Vec<f64> {
    let j = DMatrix::from_row_slice(n, m, jac);
    let small = DMatrix::<f64>::identity(n, n) / mu + (&j * j.transpose()) / d;
    let inv = small.clone().try_inverse().unwrap_or_else(|| small.pseudo_inverse(1e-14).unwrap());
    let jt = j.transpose();
    let corr = (&jt * inv * &j) / (d * d);
    let mut h = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            h[r * m + c] = -corr[(r, c)];
        }
        h[r * m + r] += 1.0 / d;
    }
    h
}

/// One transcription solve at fixed segment count.
pub(crate) fn solve_stage(
    p: &Problem<'_>,
    u0: &[f64],
    lambda0: &[f64],
    mu0: f64,
    params: &StageParams,
) -> Option<StageResult> {
    let n = p.sys.n;
    let k = p.sys.k;
    let m = u0.len();
    let segments = m / k;
    let mut ws = Workspace::new(p, segments, params.steps_per_segment);
    let mut u = u0.to_vec();
    let mut lambda = lambda0.to_vec();
    let mut mu = mu0;
    let h = 1.0 / segments as f64;
    let mut iterations = 0;
    let mut prev_feas = f64::INFINITY;
    let mut g = vec![0.0; m];
    let mut g_new = vec![0.0; m];

    for _outer in 0..params.max_outer {
        if !ws.freeze_gauges(&u, params.level) {
            return None;
        }
        let (mut val, mut r, mut jac) = ws.al(&u, &lambda, mu, Some(&mut g))?;
        let mut hinv = initial_inverse_hessian(&jac, n, m, 2.0 * h, mu);
        let mut stall = 0;
        for _inner in 0..params.max_inner {
            let gmax = g.iter().fold(0.0f64, |a, b| a.max(b.abs())) / h;
            let scale = 1.0 + (ws.energy(&u, None)).sqrt();
            if gmax <= 1e-9 * scale {
                break;
            }
            // direction −H g
            let mut dir = vec![0.0; m];
            for r_ in 0..m {
                let row = &hinv[r_ * m..(r_ + 1) * m];
                dir[r_] = -row.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            }
            let mut slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
            if slope >= 0.0 {
                // lost descent: restart from the scaled gradient
                hinv = initial_inverse_hessian(&jac, n, m, 2.0 * h, mu);
                for r_ in 0..m {
                    let row = &hinv[r_ * m..(r_ + 1) * m];
                    dir[r_] = -row.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
                }
                slope = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
                if slope >= 0.0 {
                    break;
                }
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                if let Some((v, _, _)) = ws.al(&trial, &lambda, mu, None) {
                    if v <= val + 1e-4 * t * slope {
                        accepted = Some(trial);
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some(u_new) = accepted else { break };
            let (v_new, r_new, jac_new) = ws.al(&u_new, &lambda, mu, Some(&mut g_new))?;
            iterations += 1;
            let s: Vec<f64> = u_new.iter().zip(&u).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            if sy > 1e-14 * norm2(&s) * norm2(&y) {
                let rho = 1.0 / sy;
                let hy: Vec<f64> = (0..m).map(|r_| hinv[r_ * m..(r_ + 1) * m].iter().zip(&y).map(|(a, b)| a * b).sum()).collect();
                let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
                let coef = rho * rho * yhy + rho;
                for r_ in 0..m {
                    for c in 0..m {
                        hinv[r_ * m + c] += -rho * (hy[r_] * s[c] + s[r_] * hy[c]) + coef * s[r_] * s[c];
                    }
                }
            }
            let rel = (val - v_new).abs() / (1.0 + val.abs());
            u = u_new;
            std::mem::swap(&mut g, &mut g_new);
            val = v_new;
            r = r_new;
            jac = jac_new;
            if rel < 1e-15 {
                stall += 1;
                if stall >= 3 {
                    break;
                }
            } else {
                stall = 0;
            }
        }
        let _ = jac;
        let feas = norm2(&r);
        if feas <= params.feas_tol {
            break;
        }
        for i in 0..n {
            lambda[i] += mu * r[i];
        }
        if feas > 0.25 * prev_feas {
            mu *= 10.0;
        }
        prev_feas = feas;
    }

    // min-norm Newton projection onto the endpoint constraint
    let mut endpoint_error = f64::INFINITY;
    for _ in 0..20 {
        let f = ws.forward(&u, true)?;
        let r: Vec<f64> = f.end.iter().zip(p.b).map(|(x, y)| x - y).collect();
        endpoint_error = norm2(&r);
        if endpoint_error <= 1e-11 * (1.0 + norm2(p.b)) {
            break;
        }
        let j = DMatrix::from_row_slice(n, m, &f.jac);
        let jjt = &j * j.transpose();
        let Ok(pinv) = jjt.pseudo_inverse(1e-14) else { break };
        let step = j.transpose() * (pinv * DVector::from_column_slice(&r));
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a - t * b).collect();
            if let Some(ft) = ws.forward(&trial, false) {
                let e = norm2(&ft.end.iter().zip(p.b).map(|(x, y)| x - y).collect::<Vec<_>>());
                if e < endpoint_error {
                    u = trial;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let energy = ws.energy(&u, None);
    Some(StageResult { controls: u, lambda, mu, energy, endpoint_error, iterations, evaluations: ws.evaluations })
}

/// Exact length of the path: minimal-control norm of `G(x_mid) u_s` at segment midpoints.
pub(crate) fn exact_length(sys: &ControlSystem, norm: &NormFamily, a: &[f64], path: &ControlPath, steps: usize) -> Option<(f64, Trajectory)> {
    let (speeds, traj) = segment_speeds(sys, norm, a, path, steps)?;
    Some((speeds.iter().sum::<f64>() / path.segments as f64, traj))
}

/// Speed of each segment (minimal-control norm at the segment midpoint).
pub(crate) fn segment_speeds(sys: &ControlSystem, norm: &NormFamily, a: &[f64], path: &ControlPath, steps: usize) -> Option<(Vec<f64>, Trajectory)> {
    let traj = integrate_path(sys, a, path, steps)?;
    let (n, k) = (sys.n, sys.k);
    let mut sc = sys.scratch();
    let mut speeds = Vec::with_capacity(path.segments);
    for (s, u) in path.controls.iter().enumerate() {
        let x0 = traj.segment_start(s);
        let x1 = traj.segment_start(s + 1);
        let mid: Vec<f64> = if steps % 2 == 0 {
            traj.states[s * steps + steps / 2].clone()
        } else {
            x0.iter().zip(x1).map(|(p, q)| 0.5 * (p + q)).collect()
        };
        sys.frame(&mid, &mut sc.ev);
        let g = DMatrix::from_row_slice(n, k, &sc.ev.g);
        let v = &g * DVector::from_column_slice(u);
        let gauge: Gauge = norm.at(&mid);
        let speed = match minimal_control(&gauge, &g, v.as_slice()) {
            Ok(mc) => mc.value.min(gauge.value(u)),
            Err(_) => gauge.value(u),
        };
        speeds.push(speed);
    }
    Some((speeds, traj))
}

pub(crate) fn integrate_path(sys: &ControlSystem, a: &[f64], path: &ControlPath, steps: usize) -> Option<Trajectory> {
    let mut sc = sys.scratch();
    let mut x = a.to_vec();
    let mut states = vec![x.clone()];
    let dt = 1.0 / path.segments as f64;
    for u in &path.controls {
        if !sys.segment(&mut x, u, dt, steps, None, &mut sc, Some(&mut states)) {
            return None;
        }
    }
    Some(Trajectory { states, steps_per_segment: steps })
}
