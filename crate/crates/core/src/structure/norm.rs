//! Norm families on the control space `R^k` and the induced norm on the distribution.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SflabError};
use crate::symvf::PolyScalar;

/// Exponents used by the smooth surrogate of non-differentiable gauges, coarse to fine.
pub const SURROGATE_LEVELS: [f64; 3] = [4.0, 16.0, 64.0];

/// How the gauge `|·|_q` depends on the base point.
#[derive(Clone, Debug, PartialEq)]
pub enum NormKind {
    /// `ℓ^p` with `p ≥ 1`; `p = ∞` allowed.
    Lp { p: f64 },
    /// `sqrt(uᵀ Q(q) u)`, with `Q` a symmetric matrix of polynomials in the base point.
    Quadratic { matrix: Vec<Vec<PolyScalar>> },
    /// Gauge `max_i ⟨a_i, u⟩` of the polytope `{⟨a_i, u⟩ ≤ 1}`; `smoothing > 0` replaces the
    /// unit ball by its Minkowski sum with a Euclidean ball of that radius.
    Polytope { support_vectors: Vec<Vec<f64>>, smoothing: f64 },
}

/// Point-dependent gauge on the fibre `R^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormFamily {
    k: usize,
    kind: NormKind,
}

impl NormFamily {
    pub fn new(k: usize, kind: NormKind) -> Result<Self> {
        match &kind {
            NormKind::Lp { p } => {
                if !(*p >= 1.0) {
                    return Err(SflabError::InvalidArgument(format!("ℓ^p needs p ≥ 1, got {p}")));
                }
            }
            NormKind::Quadratic { matrix } => {
                if matrix.len() != k || matrix.iter().any(|r| r.len() != k) {
                    return Err(SflabError::DimensionMismatch { expected: k, found: matrix.len() });
                }
                for i in 0..k {
                    for j in 0..i {
                        if matrix[i][j] != matrix[j][i] {
                            return Err(SflabError::InvalidArgument("quadratic norm matrix is not symmetric".into()));
                        }
                    }
                }
            }
            NormKind::Polytope { support_vectors, smoothing } => {
                if support_vectors.iter().any(|a| a.len() != k) {
                    return Err(SflabError::DimensionMismatch { expected: k, found: support_vectors[0].len() });
                }
                if *smoothing < 0.0 {
                    return Err(SflabError::InvalidArgument("polytope smoothing must be ≥ 0".into()));
                }
                // the normals must positively span R^k for the gauge to be positive
                let probe = Gauge::Polytope { normals: support_vectors.clone(), smoothing: 0.0 };
                let dirs = sample_directions(k, 64);
                if dirs.iter().any(|d| probe.value(d) <= 1e-12) {
                    return Err(SflabError::InvalidArgument("polytope support vectors do not span".into()));
                }
            }
        }
        Ok(Self { k, kind })
    }

    pub fn lp(k: usize, p: f64) -> Self {
        Self::new(k, NormKind::Lp { p }).expect("valid ℓ^p exponent")
    }

    pub fn euclidean(k: usize) -> Self {
        Self::lp(k, 2.0)
    }

    pub fn fiber_dim(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> &NormKind {
        &self.kind
    }

    pub fn is_constant(&self) -> bool {
        match &self.kind {
            NormKind::Quadratic { matrix } => matrix.iter().flatten().all(|p| p.total_degree().unwrap_or(0) == 0),
            _ => true,
        }
    }

    /// Freezes the family at a base point.
    pub fn at(&self, q: &[f64]) -> Gauge {
        match &self.kind {
            NormKind::Lp { p } => Gauge::Lp { p: *p },
            NormKind::Quadratic { matrix } => {
                let m = DMatrix::from_fn(self.k, self.k, |i, j| matrix[i][j].eval(q));
                Gauge::Quadratic { matrix: m }
            }
            NormKind::Polytope { support_vectors, smoothing } => {
                Gauge::Polytope { normals: support_vectors.clone(), smoothing: *smoothing }
            }
        }
    }

    /// Checks positive-definiteness of a quadratic family at the given points.
    pub fn check_positive(&self, points: &[Vec<f64>]) -> Result<()> {
        if let NormKind::Quadratic { .. } = self.kind {
            for q in points {
                if let Gauge::Quadratic { matrix } = self.at(q) {
                    if matrix.clone().cholesky().is_none() {
                        return Err(SflabError::InvalidArgument(format!("quadratic norm not positive definite at {q:?}")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A gauge on `R^k` frozen at a point.
#[derive(Clone, Debug, PartialEq)]
pub enum Gauge {
    Lp { p: f64 },
    Quadratic { matrix: DMatrix<f64> },
    Polytope { normals: Vec<Vec<f64>>, smoothing: f64 },
}

impl Gauge {
    pub fn value(&self, u: &[f64]) -> f64 {
        match self {
            Gauge::Lp { p } => lp_norm(u, *p),
            Gauge::Quadratic { matrix } => {
                let v = DVector::from_column_slice(u);
                (v.dot(&(matrix * &v))).max(0.0).sqrt()
            }
            Gauge::Polytope { normals, smoothing } => {
                let g = polytope_gauge(normals, u);
                if *smoothing == 0.0 || g == 0.0 {
                    g
                } else {
                    smoothed_polytope_gauge(normals, *smoothing, u, g)
                }
            }
        }
    }

    /// A subgradient of the gauge at `u`.
    pub fn subgradient(&self, u: &[f64]) -> Vec<f64> {
        let k = u.len();
        match self {
            Gauge::Lp { p } => {
                let nrm = lp_norm(u, *p);
                if nrm == 0.0 {
                    return vec![0.0; k];
                }
                if p.is_infinite() {
                    let (i, _) = argmax_abs(u);
                    let mut g = vec![0.0; k];
                    g[i] = u[i].signum();
                    g
                } else if *p == 1.0 {
                    u.iter().map(|x| if *x == 0.0 { 0.0 } else { x.signum() }).collect()
                } else {
                    u.iter().map(|x| x.signum() * (x.abs() / nrm).powf(p - 1.0)).collect()
                }
            }
            Gauge::Quadratic { matrix } => {
                let v = DVector::from_column_slice(u);
                let mv = matrix * &v;
                let nrm = v.dot(&mv).max(0.0).sqrt();
                if nrm == 0.0 {
                    vec![0.0; k]
                } else {
                    (mv / nrm).iter().copied().collect()
                }
            }
            Gauge::Polytope { normals, smoothing } => {
                if *smoothing == 0.0 {
                    let (i, _) = normals
                        .iter()
                        .enumerate()
                        .map(|(i, a)| (i, dot(a, u)))
                        .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
                    normals[i].clone()
                } else {
                    let h = 1e-7 * (1.0 + u.iter().map(|x| x.abs()).fold(0.0, f64::max));
                    (0..k)
                        .map(|i| {
                            let mut a = u.to_vec();
                            let mut b = u.to_vec();
                            a[i] += h;
                            b[i] -= h;
                            (self.value(&a) - self.value(&b)) / (2.0 * h)
                        })
                        .collect()
                }
            }
        }
    }

    /// True when the squared gauge is continuously differentiable and usable as-is by the solver.
    pub fn is_smooth(&self) -> bool {
        match self {
            Gauge::Lp { p } => *p > 1.0 && p.is_finite(),
            Gauge::Quadratic { .. } => true,
            Gauge::Polytope { .. } => false,
        }
    }

    /// Normals `a_i` with gauge `max_i ⟨a_i, u⟩` for the polyhedral cases.
    fn polyhedral_normals(&self, k: usize) -> Option<Vec<Vec<f64>>> {
        match self {
            Gauge::Lp { p } if p.is_infinite() => Some(
                (0..k)
                    .flat_map(|i| {
                        [1.0, -1.0].map(|s| {
                            let mut a = vec![0.0; k];
                            a[i] = s;
                            a
                        })
                    })
                    .collect(),
            ),
            Gauge::Lp { p } if *p == 1.0 => Some(
                (0..(1usize << k))
                    .map(|mask| (0..k).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect())
                    .collect(),
            ),
            Gauge::Polytope { normals, .. } => Some(normals.clone()),
            _ => None,
        }
    }

    /// Smooth surrogate of the squared gauge used inside the distance solver.
    ///
    /// Smooth gauges return themselves; polyhedral gauges use
    /// `(Σ_i max(⟨a_i,u⟩, 0)^P)^{2/P}` with `P = SURROGATE_LEVELS[level]`.
    pub fn surrogate(&self, k: usize, level: usize) -> Surrogate {
        if self.is_smooth() {
            return Surrogate::Exact(self.clone());
        }
        let normals = self.polyhedral_normals(k).expect("non-smooth gauges are polyhedral");
        Surrogate::SoftMax { normals, power: SURROGATE_LEVELS[level.min(SURROGATE_LEVELS.len() - 1)] }
    }

    /// Constants `(c, C)` with `c |u|_2 ≤ |u| ≤ C |u|_2`.
    pub fn euclidean_equivalence(&self, k: usize) -> (f64, f64) {
        match self {
            Gauge::Lp { p } => {
                let e = if p.is_infinite() { -0.5 } else { 1.0 / p - 0.5 };
                let f = (k as f64).powf(e);
                (f.min(1.0), f.max(1.0))
            }
            Gauge::Quadratic { matrix } => {
                let ev = matrix.clone().symmetric_eigenvalues();
                (ev.min().max(0.0).sqrt(), ev.max().sqrt())
            }
            Gauge::Polytope { .. } => {
                let vals: Vec<f64> = sample_directions(k, 2048).iter().map(|d| self.value(d)).collect();
                (vals.iter().copied().fold(f64::INFINITY, f64::min), vals.iter().copied().fold(0.0, f64::max))
            }
        }
    }
}

/// Differentiable stand-in for the squared gauge.
#[derive(Clone, Debug)]
pub enum Surrogate {
    Exact(Gauge),
    SoftMax { normals: Vec<Vec<f64>>, power: f64 },
}

impl Surrogate {
    /// Value of the squared surrogate; writes its gradient into `grad`.
    pub fn energy(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Surrogate::Exact(Gauge::Lp { p }) => {
                let p = *p;
                if p == 2.0 {
                    let mut s = 0.0;
                    for (g, x) in grad.iter_mut().zip(u) {
                        *g = 2.0 * x;
                        s += x * x;
                    }
                    return s;
                }
                let nrm = lp_norm(u, p);
                if nrm == 0.0 {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    return 0.0;
                }
                for (g, x) in grad.iter_mut().zip(u) {
                    *g = 2.0 * nrm * x.signum() * (x.abs() / nrm).powf(p - 1.0);
                }
                nrm * nrm
            }
            Surrogate::Exact(Gauge::Quadratic { matrix }) => {
                let k = u.len();
                let mut s = 0.0;
                for i in 0..k {
                    let mut row = 0.0;
                    for j in 0..k {
                        row += matrix[(i, j)] * u[j];
                    }
                    grad[i] = 2.0 * row;
                    s += u[i] * row;
                }
                s
            }
            Surrogate::Exact(g) => {
                let v = g.value(u);
                let sg = g.subgradient(u);
                for (o, s) in grad.iter_mut().zip(sg) {
                    *o = 2.0 * v * s;
                }
                v * v
            }
            Surrogate::SoftMax { normals, power } => {
                let p = *power;
                let scale = u.iter().map(|x| x.abs()).fold(0.0, f64::max);
                grad.iter_mut().for_each(|g| *g = 0.0);
                if scale == 0.0 {
                    return 0.0;
                }
                // work with u / scale to keep the powers finite
                let mut sum = 0.0;
                let mut acts = Vec::with_capacity(normals.len());
                for a in normals {
                    let t = dot(a, u) / scale;
                    let t = t.max(0.0);
                    acts.push(t);
                    sum += t.powf(p);
                }
                if sum == 0.0 {
                    return 0.0;
                }
                let s_norm = sum.powf(1.0 / p); // surrogate gauge of u / scale
                let value = scale * s_norm;
                // d value / du = Σ_i (t_i / s)^{p-1} a_i
                for (a, &t) in normals.iter().zip(&acts) {
                    if t > 0.0 {
                        let w = (t / s_norm).powf(p - 1.0);
                        for (g, ai) in grad.iter_mut().zip(a) {
                            *g += w * ai;
                        }
                    }
                }
                for g in grad.iter_mut() {
                    *g *= 2.0 * value;
                }
                value * value
            }
        }
    }
}

pub fn lp_norm(u: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return u.iter().map(|x| x.abs()).fold(0.0, f64::max);
    }
    if p == 2.0 {
        return u.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    if p == 1.0 {
        return u.iter().map(|x| x.abs()).sum();
    }
    let m = u.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if m == 0.0 {
        return 0.0;
    }
    m * u.iter().map(|x| (x.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax_abs(u: &[f64]) -> (usize, f64) {
    u.iter()
        .enumerate()
        .map(|(i, x)| (i, x.abs()))
        .fold((0, -1.0), |b, c| if c.1 > b.1 { c } else { b })
}

fn polytope_gauge(normals: &[Vec<f64>], u: &[f64]) -> f64 {
    normals.iter().map(|a| dot(a, u)).fold(0.0, f64::max)
}

/// Euclidean projection onto `{x : ⟨a_i, x⟩ ≤ 1}` by Dykstra's algorithm.
fn project_polytope(normals: &[Vec<f64>], x0: &[f64]) -> Vec<f64> {
    let k = x0.len();
    let m = normals.len();
    let mut x = x0.to_vec();
    let mut incr = vec![vec![0.0; k]; m];
    for _ in 0..500 {
        let mut moved = 0.0;
        for (i, a) in normals.iter().enumerate() {
            let y: Vec<f64> = x.iter().zip(&incr[i]).map(|(a, b)| a + b).collect();
            let viol = dot(a, &y) - 1.0;
            let aa = dot(a, a);
            let proj: Vec<f64> = if viol > 0.0 { y.iter().zip(a).map(|(yi, ai)| yi - viol / aa * ai).collect() } else { y.clone() };
            for j in 0..k {
                incr[i][j] = y[j] - proj[j];
            }
            moved += x.iter().zip(&proj).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            x = proj;
        }
        if moved < 1e-30 {
            break;
        }
    }
    x
}

fn smoothed_polytope_gauge(normals: &[Vec<f64>], s: f64, u: &[f64], g0: f64) -> f64 {
    // u ∈ t(K + sB)  ⇔  dist(u/t, K) ≤ s; bisect on τ = 1/t
    let dist = |tau: f64| {
        let y: Vec<f64> = u.iter().map(|x| x * tau).collect();
        let p = project_polytope(normals, &y);
        y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let mut lo = 1.0 / g0; // τ u lies in K
    let mut hi = lo * 2.0;
    while dist(hi) <= s {
        hi *= 2.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if dist(mid) <= s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    1.0 / (0.5 * (lo + hi))
}

/// Deterministic unit directions on `S^{k-1}`.
pub fn sample_directions(k: usize, count: usize) -> Vec<Vec<f64>> {
    if k == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    if k == 2 {
        return (0..count)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                vec![th.cos(), th.sin()]
            })
            .collect();
    }
    let h = crate::sampling::Halton::new(k);
    h.take(count)
        .map(|p| {
            // Box-Muller style map from the cube to the sphere
            let v: Vec<f64> = p.iter().map(|x| 2.0 * x - 1.0).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|x| x / n).collect()
        })
        .collect()
}

/// Result of the minimal-control program.
#[derive(Clone, Debug)]
pub struct MinimalControl {
    pub value: f64,
    pub control: Vec<f64>,
}

/// `min |u| subject to G u = v`, with `G` the `n × k` frame matrix (row-major).
pub fn minimal_control(gauge: &Gauge, frame: &DMatrix<f64>, v: &[f64]) -> Result<MinimalControl> {
    let (n, k) = frame.shape();
    if v.len() != n {
        return Err(SflabError::DimensionMismatch { expected: n, found: v.len() });
    }
    let svd = frame.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-9 * smax.max(f64::MIN_POSITIVE);
    let vv = DVector::from_column_slice(v);
    let u_ls = if smax == 0.0 {
        DVector::zeros(k)
    } else {
        svd.clone().pseudo_inverse(tol).map_err(|e| SflabError::InvalidArgument(e.to_string()))? * &vv
    };
    let residual = (frame * &u_ls - &vv).norm();
    if residual > 1e-9 * vv.norm().max(1.0) {
        return Err(SflabError::NotHorizontal { residual });
    }
    // null-space basis of G from the right singular vectors
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut null_cols: Vec<DVector<f64>> = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s <= tol {
            null_cols.push(v_t.row(i).transpose());
        }
    }
    // full SVD of a wide matrix only returns min(n,k) rows; complete the basis
    if v_t.nrows() < k {
        let rows = v_t.nrows();
        let mut basis: Vec<DVector<f64>> = (0..rows).map(|i| v_t.row(i).transpose()).collect();
        for e in 0..k {
            let mut c = DVector::zeros(k);
            c[e] = 1.0;
            for b in &basis {
                let d = b.dot(&c);
                c -= b * d;
            }
            if c.norm() > 1e-8 {
                let c = c.normalize();
                basis.push(c.clone());
                null_cols.push(c);
            }
            if basis.len() == k {
                break;
            }
        }
    }
    let u0: Vec<f64> = u_ls.iter().copied().collect();
    if null_cols.is_empty() {
        return Ok(MinimalControl { value: gauge.value(&u0), control: u0 });
    }
    let z = DMatrix::from_columns(&null_cols);
    let d = z.ncols();
    let at = |y: &DVector<f64>| -> Vec<f64> { (&u_ls + &z * y).iter().copied().collect() };

    if let Gauge::Quadratic { matrix } = gauge {
        let zt_m = z.transpose() * matrix;
        let lhs = &zt_m * &z;
        let rhs = -(&zt_m * &u_ls);
        let y = lhs.lu().solve(&rhs).ok_or_else(|| SflabError::InvalidArgument("singular quadratic norm".into()))?;
        let u = at(&y);
        return Ok(MinimalControl { value: gauge.value(&u), control: u });
    }
    if let Gauge::Lp { p } = gauge {
        if *p == 2.0 {
            return Ok(MinimalControl { value: gauge.value(&u0), control: u0 });
        }
    }

    let (c_lo, _) = gauge.euclidean_equivalence(k);
    let bound = gauge.value(&u0) / c_lo.max(1e-12) + u_ls.norm() + 1e-12;
    let f = |y: &DVector<f64>| gauge.value(&at(y));

    let y = if d == 1 {
        DVector::from_element(1, golden_section(|t| f(&DVector::from_element(1, t)), -bound, bound))
    } else {
        let mut y = DVector::zeros(d);
        let mut best_y = y.clone();
        let mut best = f(&y);
        let mut slack = 0.1 * best.max(1e-300);
        for it in 0..10_000 {
            let u = at(&y);
            let val = gauge.value(&u);
            if val < best {
                best = val;
                best_y = y.clone();
            }
            let g_full = DVector::from_vec(gauge.subgradient(&u));
            let g = z.transpose() * g_full;
            let gn = g.norm_squared();
            if gn < 1e-30 {
                break;
            }
            // Polyak step toward an estimated optimum `best - slack`
            let step = (val - best + slack) / gn;
            y -= g * step;
            if it % 100 == 99 {
                slack *= 0.5;
            }
        }
        // coordinate polish along the null directions
        for _ in 0..20 {
            for j in 0..d {
                let base = best_y.clone();
                let t = golden_section(
                    |t| {
                        let mut yy = base.clone();
                        yy[j] += t;
                        f(&yy)
                    },
                    -bound,
                    bound,
                );
                best_y[j] += t;
            }
        }
        best_y
    };
    let u = at(&y);
    let u = if gauge.value(&u) <= gauge.value(&u0) { u } else { u0 };
    Ok(MinimalControl { value: gauge.value(&u), control: u })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
