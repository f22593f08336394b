//! Rényi entropy along discrete Wasserstein interpolations and CD(K,N) midpoint checks.
//!
//! Interpolant densities come from a local affine fit of the interpolation map over the nearest
//! source points: a source cell of volume `v_i` is carried to volume `v_i |det J_i(t)|`.  Two fits
//! with different neighbourhood sizes, together with the mismatch of the fitted `t = 1` entropy
//! against the exact one, give the discretization error `ε_disc`.

pub mod transport;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SflabError};
use crate::geodesic::{distance, point_at, DistanceCertificate, DistanceOptions};
use crate::sampling::derived_rng;
use crate::structure::SubFinslerStructure;
pub use transport::{brute_force_assignment, optimal_plan, TransportPlan};

pub const MASS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub support: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
    pub cell_volumes: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Vec<Vec<f64>>, masses: Vec<f64>, cell_volumes: Vec<f64>) -> Result<Self> {
        if support.is_empty() || masses.len() != support.len() || cell_volumes.len() != support.len() {
            return Err(SflabError::InvalidMeasure("support, masses and cell volumes must have equal non-zero length".into()));
        }
        let d = support[0].len();
        if support.iter().any(|p| p.len() != d || p.iter().any(|x| !x.is_finite())) {
            return Err(SflabError::InvalidMeasure("support points have inconsistent dimension".into()));
        }
        if masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(SflabError::InvalidMeasure("masses must be non-negative".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(SflabError::InvalidMeasure(format!("masses sum to {total}, not 1")));
        }
        if cell_volumes.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(SflabError::InvalidMeasure("cell volumes must be positive".into()));
        }
        Ok(Self { support, masses, cell_volumes })
    }

    pub fn dirac(point: Vec<f64>, volume: f64) -> Result<Self> {
        Self::new(vec![point], vec![1.0], vec![volume])
    }

    /// Normalized Lebesgue measure on `Π [c_i − h_i, c_i + h_i]`, one atom per grid cell centre.
    pub fn uniform_box(center: &[f64], half_widths: &[f64], per_axis: usize) -> Result<Self> {
        if per_axis == 0 || center.len() != half_widths.len() || half_widths.iter().any(|h| !(*h > 0.0)) {
            return Err(SflabError::InvalidMeasure("uniform box needs positive half-widths and cells".into()));
        }
        let n = center.len();
        let count = per_axis.pow(n as u32);
        let cell: f64 = half_widths.iter().map(|h| 2.0 * h / per_axis as f64).product();
        let support = (0..count)
            .map(|idx| {
                let mut r = idx;
                (0..n)
                    .map(|i| {
                        let k = r % per_axis;
                        r /= per_axis;
                        center[i] - half_widths[i] + (k as f64 + 0.5) * 2.0 * half_widths[i] / per_axis as f64
                    })
                    .collect()
            })
            .collect();
        Self::new(support, vec![1.0 / count as f64; count], vec![cell; count])
    }

    /// Gaussian on the line truncated to `mean ± 3 sd`, cut into `k` cells of equal mass; each atom
    /// sits at its cell's conditional median.
    pub fn gaussian_1d(mean: f64, sd: f64, k: usize) -> Result<Self> {
        if !(sd > 0.0) || k == 0 {
            return Err(SflabError::InvalidMeasure("gaussian needs sd > 0 and k ≥ 1".into()));
        }
        let g = Normal::new(mean, sd).map_err(|e| SflabError::InvalidMeasure(e.to_string()))?;
        let (lo, hi) = (g.cdf(mean - 3.0 * sd), g.cdf(mean + 3.0 * sd));
        let q = |u: f64| g.inverse_cdf(lo + u * (hi - lo));
        let edges: Vec<f64> = (0..=k).map(|i| q(i as f64 / k as f64)).collect();
        let support = (0..k).map(|i| vec![q((i as f64 + 0.5) / k as f64)]).collect();
        let vols = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Self::new(support, vec![1.0 / k as f64; k], vols)
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn density(&self, i: usize) -> f64 {
        self.masses[i] / self.cell_volumes[i]
    }
}

/// `S_N(μ) = −Σ_i (m_i / v_i)^{1−1/N} v_i`.
pub fn renyi_entropy(mu: &DiscreteMeasure, n: f64) -> Result<f64> {
    if !(n > 1.0) {
        return Err(SflabError::InvalidArgument(format!("entropy exponent N = {n} must exceed 1")));
    }
    entropy_of(&mu.masses, &mu.cell_volumes, n)
}

fn entropy_of(masses: &[f64], vols: &[f64], n: f64) -> Result<f64> {
    let a = 1.0 - 1.0 / n;
    let mut s = 0.0;
    for (m, v) in masses.iter().zip(vols) {
        if !(*v > 0.0) {
            return Err(SflabError::InvalidMeasure("zero cell volume".into()));
        }
        s -= (m / v).powf(a) * v;
    }
    Ok(s)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CdOptions {
    pub distance: DistanceOptions,
    /// Neighbourhood sizes of the two Jacobian fits (0 = `2n` and `3n`).
    pub neighbors: (usize, usize),
}

impl Default for CdOptions {
    fn default() -> Self {
        Self { distance: DistanceOptions::fast(), neighbors: (0, 0) }
    }
}

/// Optimal coupling for cost `d²` together with the certificate of every transported pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Coupling {
    pub plan: TransportPlan,
    pub certificates: Vec<DistanceCertificate>,
}

pub fn couple(s: &SubFinslerStructure, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, opts: &CdOptions) -> Result<Coupling> {
    if mu0.dim() != s.dim() || mu1.dim() != s.dim() {
        return Err(SflabError::DimensionMismatch { expected: s.dim(), found: mu0.dim().max(mu1.dim()) });
    }
    let (n0, n1) = (mu0.len(), mu1.len());
    let certs: Vec<DistanceCertificate> = (0..n0 * n1)
        .into_par_iter()
        .map(|k| distance(s, &mu0.support[k / n1], &mu1.support[k % n1], &opts.distance))
        .collect::<Result<_>>()?;
    let cost: Vec<Vec<f64>> = (0..n0).map(|i| (0..n1).map(|j| certs[i * n1 + j].value.powi(2)).collect()).collect();
    let plan = optimal_plan(&cost, &mu0.masses, &mu1.masses)?;
    let certificates = plan.entries.iter().map(|&(i, j, _)| certs[i * n1 + j].clone()).collect();
    Ok(Coupling { plan, certificates })
}

/// Interpolant at `t`: one atom per plan entry, with the `k`-neighbour Jacobian volumes.
struct Placement {
    points: Vec<Vec<f64>>,
    /// Cell volumes for each of the two neighbourhood sizes.
    volumes: [Vec<f64>; 2],
}

fn neighbor_counts(opts: &CdOptions, n: usize) -> [usize; 2] {
    let k1 = if opts.neighbors.0 == 0 { 2 * n } else { opts.neighbors.0 };
    let k2 = if opts.neighbors.1 == 0 { 3 * n } else { opts.neighbors.1 };
    [k1, k2]
}

fn place(s: &SubFinslerStructure, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, c: &Coupling, t: f64, opts: &CdOptions) -> Result<Placement> {
    let points: Vec<Vec<f64>> = c
        .plan
        .entries
        .par_iter()
        .zip(&c.certificates)
        .map(|(&(i, _, _), cert)| point_at(s, &mu0.support[i], &cert.path, t))
        .collect::<Result<_>>()?;
    let n = mu0.dim();
    // barycentric image of each source atom
    let mut image = vec![vec![0.0; n]; mu0.len()];
    for (&(i, _, m), z) in c.plan.entries.iter().zip(&points) {
        for (a, b) in image[i].iter_mut().zip(z) {
            *a += m / mu0.masses[i] * b;
        }
    }
    let scale: Vec<f64> = (0..n)
        .map(|k| {
            let mean = mu0.support.iter().map(|p| p[k]).sum::<f64>() / mu0.len() as f64;
            let var = mu0.support.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / mu0.len() as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let ks = neighbor_counts(opts, n);
    let volumes = ks.map(|k| {
        c.plan
            .entries
            .iter()
            .map(|&(i, j, m)| {
                let jac = jacobian_det(&mu0.support, &image, i, k, &scale).unwrap_or_else(|| {
                    let r = (mu1.cell_volumes[j] / mu0.cell_volumes[i]).powf(1.0 / n as f64);
                    ((1.0 - t) + t * r).powi(n as i32)
                });
                mu0.cell_volumes[i] * jac * m / mu0.masses[i]
            })
            .collect()
    });
    Ok(Placement { points, volumes })
}

/// `|det J|` of the least-squares affine fit of `x ↦ image(x)` over the `k` nearest source points.
fn jacobian_det(src: &[Vec<f64>], image: &[Vec<f64>], i: usize, k: usize, scale: &[f64]) -> Option<f64> {
    let n = src[i].len();
    if src.len() <= n {
        return None;
    }
    let mut order: Vec<(f64, usize)> = (0..src.len())
        .filter(|&j| j != i)
        .map(|j| (src[j].iter().zip(&src[i]).zip(scale).map(|((a, b), s)| ((a - b) / s).powi(2)).sum::<f64>(), j))
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nb: Vec<usize> = order.iter().take(k.max(n)).map(|p| p.1).collect();
    let dx = DMatrix::from_fn(n, nb.len(), |r, c| src[nb[c]][r] - src[i][r]);
    let dy = DMatrix::from_fn(n, nb.len(), |r, c| image[nb[c]][r] - image[i][r]);
    let gram = &dx * dx.transpose();
    let inv = gram.clone().try_inverse()?;
    if gram.determinant().abs() < 1e-14 * gram.norm().powi(n as i32) {
        return None;
    }
    let j = &dy * dx.transpose() * inv;
    Some(j.determinant().abs())
}

/// Discrete displacement interpolation at `t`; the endpoints are returned unchanged.
pub fn w2_interpolate(s: &SubFinslerStructure, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, t: f64, opts: &CdOptions) -> Result<DiscreteMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(SflabError::InvalidArgument(format!("interpolation time {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(mu0.clone());
    }
    if t == 1.0 {
        return Ok(mu1.clone());
    }
    let c = couple(s, mu0, mu1, opts)?;
    let p = place(s, mu0, mu1, &c, t, opts)?;
    let [v, _] = p.volumes;
    let masses: Vec<f64> = c.plan.entries.iter().map(|e| e.2).collect();
    let total: f64 = masses.iter().sum();
    DiscreteMeasure::new(p.points, masses.iter().map(|m| m / total).collect(), v)
}

/// `σ_{K,N}^{(t)}(θ)`.
pub fn sigma(k: f64, n: f64, t: f64, theta: f64) -> f64 {
    if k == 0.0 || theta == 0.0 {
        return t;
    }
    if k > 0.0 {
        let a = theta * (k / n).sqrt();
        if a >= std::f64::consts::PI {
            return f64::INFINITY;
        }
        (t * a).sin() / a.sin()
    } else {
        let a = theta * (-k / n).sqrt();
        (t * a).sinh() / a.sinh()
    }
}

/// `τ_{K,N}^{(t)}(θ) = t^{1/N} σ_{K,N−1}^{(t)}(θ)^{1−1/N}`.
pub fn tau(k: f64, n: f64, t: f64, theta: f64) -> f64 {
    t.powf(1.0 / n) * sigma(k, n - 1.0, t, theta).powf(1.0 - 1.0 / n)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyReport {
    pub n: f64,
    pub k: f64,
    /// Entropy at `t = 0, 1/2, 1`.
    pub s_values: [f64; 3],
    /// Right-hand side of the midpoint inequality; `(S_0 + S_1)/2` when `K = 0`.
    pub bound: f64,
    pub deficit: f64,
    pub eps_disc: f64,
    pub transport_cost: f64,
}

/// Midpoint data shared by every `(N, K)` evaluated on one pair.
pub struct Midpoint {
    mu0: DiscreteMeasure,
    mu1: DiscreteMeasure,
    coupling: Coupling,
    placement: Option<Placement>,
    /// Fitted volumes at `t = 1` (first neighbourhood size), for the consistency term.
    end_volumes: Option<Vec<f64>>,
}

impl Midpoint {
    pub fn new(s: &SubFinslerStructure, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, opts: &CdOptions) -> Result<Self> {
        if mu0 == mu1 {
            let coupling = Coupling { plan: TransportPlan { entries: vec![], cost: 0.0 }, certificates: vec![] };
            return Ok(Self { mu0: mu0.clone(), mu1: mu1.clone(), coupling, placement: None, end_volumes: None });
        }
        let coupling = couple(s, mu0, mu1, opts)?;
        let placement = place(s, mu0, mu1, &coupling, 0.5, opts)?;
        let end = place(s, mu0, mu1, &coupling, 1.0, opts)?;
        let [v1, _] = end.volumes;
        Ok(Self { mu0: mu0.clone(), mu1: mu1.clone(), coupling, placement: Some(placement), end_volumes: Some(v1) })
    }

    pub fn report(&self, n: f64, k: f64) -> Result<EntropyReport> {
        let s0 = renyi_entropy(&self.mu0, n)?;
        let s1 = renyi_entropy(&self.mu1, n)?;
        let (Some(p), Some(v1)) = (&self.placement, &self.end_volumes) else {
            return Ok(EntropyReport { n, k, s_values: [s0, s0, s1], bound: s0, deficit: 0.0, eps_disc: 0.0, transport_cost: 0.0 });
        };
        let masses: Vec<f64> = self.coupling.plan.entries.iter().map(|e| e.2).collect();
        let sm = entropy_of(&masses, &p.volumes[0], n)?;
        let sm2 = entropy_of(&masses, &p.volumes[1], n)?;
        let s1_fit = entropy_of(&masses, v1, n)?;
        let e = 1.0 / n;
        let bound = -self
            .coupling
            .plan
            .entries
            .iter()
            .zip(&self.coupling.certificates)
            .map(|(&(i, j, m), c)| {
                m * (tau(k, n, 0.5, c.value) * self.mu0.density(i).powf(-e) + tau(k, n, 0.5, c.value) * self.mu1.density(j).powf(-e))
            })
            .sum::<f64>();
        let deficit = sm - bound;
        let eps_disc = (sm - sm2).abs() + 0.5 * (s1_fit - s1).abs() + 1e-12;
        Ok(EntropyReport { n, k, s_values: [s0, sm, s1], bound, deficit, eps_disc, transport_cost: self.coupling.plan.cost })
    }
}

pub fn cd_midpoint_check(s: &SubFinslerStructure, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, n: f64, k: f64, opts: &CdOptions) -> Result<EntropyReport> {
    Midpoint::new(s, mu0, mu1, opts)?.report(n, k)
}

/// Seeded pairs of uniform boxes: centres in `[−center_range, center_range]^n`, half-widths in
/// `size_range`.
pub fn random_box_pairs(dim: usize, count: usize, per_axis: usize, center_range: f64, size_range: (f64, f64), seed: u64) -> Result<Vec<(DiscreteMeasure, DiscreteMeasure)>> {
    let mut rng = derived_rng(seed, &[dim as f64, count as f64, per_axis as f64]);
    let one = |rng: &mut rand_chacha::ChaCha8Rng| {
        let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-center_range..=center_range)).collect();
        let h: Vec<f64> = (0..dim).map(|_| rng.gen_range(size_range.0..=size_range.1)).collect();
        DiscreteMeasure::uniform_box(&c, &h, per_axis)
    };
    (0..count).map(|_| Ok((one(&mut rng)?, one(&mut rng)?))).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViolationCandidate {
    pub pair: usize,
    pub report: EntropyReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViolationReport {
    pub evaluated: usize,
    pub skipped: Vec<(usize, String)>,
    /// Every evaluation, by decreasing `deficit − ε_disc`.
    pub ranked: Vec<ViolationCandidate>,
    /// The entries of `ranked` with `deficit > ε_disc`.
    pub violations: Vec<ViolationCandidate>,
}

/// Midpoint checks over `family × n_grid`, at most `budget` evaluations.
pub fn violation_search(
    s: &SubFinslerStructure,
    family: &[(DiscreteMeasure, DiscreteMeasure)],
    n_grid: &[f64],
    k: f64,
    budget: usize,
    opts: &CdOptions,
) -> Result<ViolationReport> {
    if budget == 0 {
        return Err(SflabError::InvalidArgument("budget must be at least 1".into()));
    }
    let per_pair = n_grid.len().max(1);
    let pairs = family.len().min(budget.div_ceil(per_pair));
    let results: Vec<(usize, Result<Midpoint>)> = (0..pairs).into_par_iter().map(|p| (p, Midpoint::new(s, &family[p].0, &family[p].1, opts))).collect();
    let mut ranked = Vec::new();
    let mut skipped = Vec::new();
    let mut evaluated = 0;
    for (p, r) in results {
        match r {
            Ok(mid) => {
                for &n in n_grid {
                    if evaluated == budget {
                        break;
                    }
                    evaluated += 1;
                    match mid.report(n, k) {
                        Ok(report) => ranked.push(ViolationCandidate { pair: p, report }),
                        Err(e) => skipped.push((p, e.to_string())),
                    }
                }
            }
            Err(e) => skipped.push((p, e.to_string())),
        }
    }
    let key = |c: &ViolationCandidate| c.report.deficit - c.report.eps_disc;
    ranked.sort_by(|a, b| key(b).partial_cmp(&key(a)).unwrap_or(std::cmp::Ordering::Equal).then(a.pair.cmp(&b.pair)));
    let violations = ranked.iter().filter(|c| key(c) > 0.0).cloned().collect();
    Ok(ViolationReport { evaluated, skipped, ranked, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::fixtures::*;

    fn cheap() -> CdOptions {
        CdOptions { distance: DistanceOptions { segments: vec![8], starts: 0, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn entropy_examples() {
        let unit = DiscreteMeasure::uniform_box(&[0.0, 0.0], &[0.5, 0.5], 3).unwrap();
        assert!((renyi_entropy(&unit, 2.0).unwrap() + 1.0).abs() < 1e-12);
        let four = DiscreteMeasure::uniform_box(&[0.0, 0.0], &[1.0, 1.0], 3).unwrap();
        assert!((renyi_entropy(&four, 2.0).unwrap() + 2.0).abs() < 1e-12);
        let tiny = DiscreteMeasure::dirac(vec![0.0, 0.0], 1e-12).unwrap();
        assert!(renyi_entropy(&tiny, 2.0).unwrap().abs() < 1e-5);
        assert!(renyi_entropy(&unit, 1.0).is_err());
    }

    #[test]
    fn point_masses_meet_halfway() {
        let e = euclidean(2);
        let a = DiscreteMeasure::dirac(vec![0.0, 0.0], 1.0).unwrap();
        let b = DiscreteMeasure::dirac(vec![2.0, 0.0], 1.0).unwrap();
        let m = w2_interpolate(&e, &a, &b, 0.5, &cheap()).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m.support[0][0] - 1.0).abs() < 1e-6 && m.support[0][1].abs() < 1e-6);
        assert_eq!(w2_interpolate(&e, &a, &b, 0.0, &cheap()).unwrap(), a);
        assert_eq!(w2_interpolate(&e, &a, &b, 1.0, &cheap()).unwrap(), b);
    }

    #[test]
    fn identical_measures_have_zero_deficit() {
        let e = euclidean(2);
        let a = DiscreteMeasure::uniform_box(&[0.0, 0.0], &[1.0, 0.5], 3).unwrap();
        let r = cd_midpoint_check(&e, &a, &a, 3.0, 0.0, &cheap()).unwrap();
        assert_eq!(r.deficit, 0.0);
        let m = w2_interpolate(&e, &a, &a, 0.5, &cheap()).unwrap();
        for (p, q) in m.support.iter().zip(&a.support) {
            assert!(p.iter().zip(q).all(|(x, y)| (x - y).abs() < 1e-6));
        }
    }

    #[test]
    fn euclidean_squares_match_closed_form() {
        let e = euclidean(2);
        let a = DiscreteMeasure::uniform_box(&[-1.0, 0.0], &[0.5, 0.5], 3).unwrap();
        let b = DiscreteMeasure::uniform_box(&[1.0, 0.5], &[1.0, 0.25], 3).unwrap();
        let r = cd_midpoint_check(&e, &a, &b, 2.0, 0.0, &cheap()).unwrap();
        // the midpoint of the affine map is uniform on a 1.5 × 0.75 rectangle
        assert!((r.s_values[1] + (1.5f64 * 0.75).sqrt()).abs() < 1e-6, "{r:?}");
        assert!(r.deficit <= r.eps_disc);
    }

    #[test]
    fn sigma_and_tau() {
        assert_eq!(sigma(0.0, 3.0, 0.3, 1.0), 0.3);
        assert!((tau(0.0, 3.0, 0.3, 2.0) - 0.3).abs() < 1e-15);
        assert!(sigma(1.0, 2.0, 0.5, 1.0) > 0.5);
        assert!(sigma(-1.0, 2.0, 0.5, 1.0) < 0.5);
    }

    #[test]
    fn gaussians_on_the_line() {
        let e = euclidean(1);
        let a = DiscreteMeasure::gaussian_1d(-1.0, 0.5, 12).unwrap();
        let b = DiscreteMeasure::gaussian_1d(1.5, 1.2, 12).unwrap();
        let rep = violation_search(&e, &[(a, b)], &[2.0, 5.0], 0.0, 10, &cheap()).unwrap();
        assert_eq!(rep.evaluated, 2);
        assert!(rep.violations.is_empty(), "{:?}", rep.ranked);
    }
}
