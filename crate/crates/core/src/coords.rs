//! Privileged coordinates: nonholonomic orders and exponential coordinates of the second kind.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SflabError};
use crate::structure::{NormFamily, NormKind, SubFinslerStructure, TermSpec, DEFAULT_DEPTH_CAP};
use crate::symvf::linalg::inverse;
use crate::symvf::{rat_from_f64, rat_to_f64, truncated_flow, PolyScalar, PolyVectorField, Rational, WeightVector};

/// A polynomial chart `ψ̂^q` around `q` together with its truncated inverse.
#[derive(Clone, Debug)]
pub struct PrivilegedChart {
    pub base: Vec<Rational>,
    pub weights: WeightVector,
    /// `x ↦ z`, polynomials in the original coordinates; `forward(q) = 0`.
    pub forward: Vec<PolyScalar>,
    /// `z ↦ x`.
    pub backward: Vec<PolyScalar>,
    pub cap: u32,
    /// Centred versions (`y = x − q`) carried one degree further, used for pushforwards.
    psi: Vec<PolyScalar>,
    phi: Vec<PolyScalar>,
}

#[derive(Serialize, Deserialize)]
struct ChartFile {
    base: Vec<String>,
    weights: WeightVector,
    cap: u32,
    forward: Vec<Vec<TermSpec>>,
    backward: Vec<Vec<TermSpec>>,
}

impl PrivilegedChart {
    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn base_f64(&self) -> Vec<f64> {
        self.base.iter().map(rat_to_f64).collect()
    }

    /// Privileged coordinates of a point given in chart coordinates.
    pub fn to_privileged(&self, x: &[f64]) -> Vec<f64> {
        self.forward.iter().map(|p| p.eval(x)).collect()
    }

    pub fn from_privileged(&self, z: &[f64]) -> Vec<f64> {
        self.backward.iter().map(|p| p.eval(z)).collect()
    }

    /// The chart `z = x − q`, certified to be privileged at `q`.
    pub fn identity(s: &SubFinslerStructure, q: &[f64], cap: Option<u32>) -> Result<Self> {
        let n = s.dim();
        let flag = s.flag_at(q, DEFAULT_DEPTH_CAP)?;
        let cap = cap.unwrap_or(flag.step + 2);
        let base = exact_point(q)?;
        let psi: Vec<PolyScalar> = (0..n).map(|i| PolyScalar::var(n, i)).collect();
        let chart = Self::assemble(base, flag.weights, cap, psi.clone(), psi);
        chart.certify(s)?;
        Ok(chart)
    }

    fn assemble(base: Vec<Rational>, weights: WeightVector, cap: u32, psi: Vec<PolyScalar>, phi: Vec<PolyScalar>) -> Self {
        let n = base.len();
        let neg: Vec<Rational> = base.iter().map(|c| -c.clone()).collect();
        let forward = psi.iter().map(|p| p.truncate(cap).shift(&neg).expect("dimension")).collect();
        let backward = phi
            .iter()
            .enumerate()
            .map(|(i, p)| &p.truncate(cap) + &PolyScalar::constant(n, base[i].clone()))
            .collect();
        Self { base, weights, forward, backward, cap, psi, phi }
    }

    /// Checks `ord_q(z_j) = w_j` for every coordinate.
    pub fn certify(&self, s: &SubFinslerStructure) -> Result<()> {
        let centred = centred_fields(s, &self.base)?;
        for (j, zj) in self.psi.iter().enumerate() {
            let w = self.weights.as_slice()[j];
            let order = centred_order(&centred, &zj.truncate(self.cap), w as usize + 1);
            if order != Some(w as usize) {
                return Err(SflabError::NotPrivileged { coordinate: j, order, weight: w });
            }
        }
        Ok(())
    }

    /// `Y_i = ψ̂_* X_i`, exact through total degree `cap`.
    pub fn pushforward_frame(&self, s: &SubFinslerStructure) -> Result<Vec<PolyVectorField>> {
        let centred = centred_fields(s, &self.base)?;
        let cap = self.cap;
        centred
            .iter()
            .map(|x| {
                let comps = self
                    .psi
                    .iter()
                    .map(|psi_j| Ok(x.apply(psi_j)?.compose(&self.phi, Some(cap))?.truncate(cap)))
                    .collect::<Result<Vec<_>>>()?;
                PolyVectorField::new(comps)
            })
            .collect()
    }

    /// `|det DΦ(z)|` for the backward map `Φ`.
    pub fn backward_jacobian(&self, z: &[f64]) -> f64 {
        if self.is_translation() {
            return 1.0;
        }
        let n = self.dim();
        nalgebra::DMatrix::from_fn(n, n, |a, b| self.backward[a].derivative(b).eval(z)).determinant().abs()
    }

    /// True when the chart is `z = x − q`.
    pub fn is_translation(&self) -> bool {
        self.psi.iter().enumerate().all(|(i, p)| *p == PolyScalar::var(self.dim(), i))
    }

    /// The structure written in privileged coordinates (base point at the origin).
    ///
    /// Exact for translation charts whose fields have degree ≤ `cap`; otherwise frame and norm
    /// are truncated at `cap`, and the box is the largest cube around the base point that fits
    /// the original box.
    pub fn structure_in_chart(&self, s: &SubFinslerStructure) -> Result<SubFinslerStructure> {
        let fields = self.pushforward_frame(s)?;
        let norm = match s.norm().kind() {
            NormKind::Quadratic { matrix } => {
                let m = matrix
                    .iter()
                    .map(|row| row.iter().map(|p| Ok(p.compose(&self.backward, Some(self.cap))?)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                NormFamily::new(s.fiber_dim(), NormKind::Quadratic { matrix: m })?
            }
            _ => s.norm().clone(),
        };
        let q = self.base_f64();
        let chart_box = if self.is_translation() {
            s.chart_box().iter().zip(&q).map(|((lo, hi), c)| (lo - c, hi - c)).collect()
        } else {
            let h = s.chart_box().iter().zip(&q).map(|((lo, hi), c)| (c - lo).min(hi - c)).fold(f64::INFINITY, f64::min);
            vec![(-h, h); self.dim()]
        };
        SubFinslerStructure::unchecked(fields, norm, chart_box)
    }

    pub fn to_json(&self) -> String {
        let file = ChartFile {
            base: self.base.iter().map(crate::symvf::format_rational).collect(),
            weights: self.weights.clone(),
            cap: self.cap,
            forward: self.forward.iter().map(crate::structure::poly_to_terms).collect(),
            backward: self.backward.iter().map(crate::structure::poly_to_terms).collect(),
        };
        serde_json::to_string_pretty(&file).expect("chart serializes")
    }
}

fn exact_point(q: &[f64]) -> Result<Vec<Rational>> {
    q.iter().map(|&v| rat_from_f64(v)).collect()
}

fn centred_fields(s: &SubFinslerStructure, base: &[Rational]) -> Result<Vec<PolyVectorField>> {
    s.fields().iter().map(|f| f.shift(base)).collect()
}

/// Order at 0 of `f` for fields already centred at the base point.
fn centred_order(fields: &[PolyVectorField], f: &PolyScalar, cap: usize) -> Option<usize> {
    if !f.constant_term().is_zero() {
        return Some(0);
    }
    // only monomials of degree ≤ remaining derivative count can reach a constant term
    let mut level: Vec<PolyScalar> = vec![f.truncate(cap as u32)];
    for ell in 1..=cap {
        let keep = (cap - ell) as u32;
        let mut next: Vec<PolyScalar> = Vec::new();
        for g in &level {
            for x in fields {
                let d = x.apply(g).expect("dimensions agree").truncate(keep);
                if d.is_zero() {
                    continue;
                }
                if !d.constant_term().is_zero() {
                    return Some(ell);
                }
                if !next.contains(&d) {
                    next.push(d);
                }
            }
        }
        if next.is_empty() {
            return None;
        }
        level = next;
    }
    None
}

/// Nonholonomic order of `f` at `q`: least `ℓ ≤ cap` with some `X_{j_1}⋯X_{j_ℓ} f (q) ≠ 0`.
pub fn nonholonomic_order(s: &SubFinslerStructure, q: &[f64], f: &PolyScalar, cap: usize) -> Result<Option<usize>> {
    let base = exact_point(q)?;
    let centred = centred_fields(s, &base)?;
    Ok(centred_order(&centred, &f.shift(&base)?, cap))
}

/// Exponential coordinates of the second kind built on the adapted frame at `q`,
/// certified privileged.
pub fn build_privileged(s: &SubFinslerStructure, q: &[f64], cap: Option<u32>) -> Result<PrivilegedChart> {
    let n = s.dim();
    let flag = s.flag_at(q, DEFAULT_DEPTH_CAP)?;
    let cap = cap.unwrap_or(flag.step + 2);
    if cap < flag.step {
        return Err(SflabError::InvalidArgument(format!("cap {cap} below the step {}", flag.step)));
    }
    let base = exact_point(q)?;
    let work = cap + 1;
    let frame: Vec<PolyVectorField> = flag.frame_fields.iter().map(|f| f.shift(&base)).collect::<Result<_>>()?;

    // Φ(z) = e^{z_n Z_n} ∘ ⋯ ∘ e^{z_1 Z_1}(0) in centred coordinates
    let mut phi: Vec<PolyScalar> = vec![PolyScalar::zero(n); n];
    for (j, z) in frame.iter().enumerate() {
        let flow = truncated_flow(z, work)?;
        phi = flow.substitute(&PolyScalar::var(n, j), &phi, Some(work))?;
    }

    // Φ = L z + N(z); invert by z ← L⁻¹(y − N(z))
    let lin: Vec<Vec<Rational>> = (0..n)
        .map(|i| (0..n).map(|j| phi[i].coeff(&unit(n, j))).collect())
        .collect();
    let lin_inv = inverse(&lin)?;
    let nonlin: Vec<PolyScalar> = phi.iter().map(|p| p.filter(|e| e.iter().sum::<u32>() >= 2)).collect();
    let ys: Vec<PolyScalar> = (0..n).map(|i| PolyScalar::var(n, i)).collect();
    let apply_inv = |v: &[PolyScalar]| -> Vec<PolyScalar> {
        (0..n)
            .map(|i| {
                let mut acc = PolyScalar::zero(n);
                for (j, vj) in v.iter().enumerate() {
                    if !lin_inv[i][j].is_zero() {
                        acc = &acc + &vj.scale(&lin_inv[i][j]);
                    }
                }
                acc
            })
            .collect()
    };
    let mut psi = apply_inv(&ys);
    for _ in 0..work {
        let nz: Vec<PolyScalar> = nonlin.iter().map(|p| p.compose(&psi, Some(work))).collect::<Result<_>>()?;
        let rhs: Vec<PolyScalar> = ys.iter().zip(&nz).map(|(y, m)| y - m).collect();
        let next = apply_inv(&rhs);
        if next == psi {
            break;
        }
        psi = next;
    }
    let chart = PrivilegedChart::assemble(base, flag.weights, cap, psi, phi);
    chart.certify(s)?;
    Ok(chart)
}

fn unit(n: usize, j: usize) -> Vec<u32> {
    let mut e = vec![0; n];
    e[j] = 1;
    e
}

/// Checks `backward ∘ forward = id` modulo total degree above the cap (exact).
pub fn round_trip_defect(chart: &PrivilegedChart) -> Result<Vec<PolyScalar>> {
    let n = chart.dim();
    let comp: Vec<PolyScalar> =
        chart.phi.iter().map(|p| p.truncate(chart.cap).compose(&chart.psi, Some(chart.cap))).collect::<Result<_>>()?;
    Ok(comp.iter().enumerate().map(|(i, p)| p - &PolyScalar::var(n, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::fixtures::*;
    use crate::structure::NormFamily;
    use crate::symvf::{field_weighted_order, rat};

    #[test]
    fn heisenberg_orders() {
        let s = heisenberg(NormFamily::euclidean(2));
        let x = PolyScalar::var(3, 0);
        let z = PolyScalar::var(3, 2);
        assert_eq!(nonholonomic_order(&s, &[0.0; 3], &x, 4).unwrap(), Some(1));
        assert_eq!(nonholonomic_order(&s, &[0.0; 3], &z, 4).unwrap(), Some(2));
        assert_eq!(nonholonomic_order(&s, &[0.0; 3], &PolyScalar::one(3), 4).unwrap(), Some(0));
        // z − xy/2 still has order 2; x y has order 2; x^3 has order 3
        assert_eq!(nonholonomic_order(&s, &[0.0; 3], &(&x * &PolyScalar::var(3, 1)), 4).unwrap(), Some(2));
        assert_eq!(nonholonomic_order(&s, &[0.0; 3], &(&(&x * &x) * &x), 4).unwrap(), Some(3));
        assert_eq!(nonholonomic_order(&s, &[0.0; 3], &(&(&x * &x) * &x), 2).unwrap(), None);
    }

    #[test]
    fn euclidean_chart_is_identity() {
        let s = euclidean(2);
        let c = build_privileged(&s, &[0.0, 0.0], None).unwrap();
        assert_eq!(c.forward, vec![PolyScalar::var(2, 0), PolyScalar::var(2, 1)]);
        assert_eq!(c.pushforward_frame(&s).unwrap(), s.fields().to_vec());
    }

    #[test]
    fn heisenberg_chart() {
        let s = heisenberg(NormFamily::euclidean(2));
        let c = build_privileged(&s, &[0.0; 3], None).unwrap();
        assert_eq!(c.weights.as_slice(), &[1, 1, 2]);
        // z3 = y3 − y1 y2 / 2
        let x = PolyScalar::var(3, 0);
        let y = PolyScalar::var(3, 1);
        let expected = &PolyScalar::var(3, 2) - &(&x * &y).scale(&rat(1, 2));
        assert_eq!(c.forward[2], expected);
        assert!(round_trip_defect(&c).unwrap().iter().all(PolyScalar::is_zero));
        for y in c.pushforward_frame(&s).unwrap() {
            assert_eq!(field_weighted_order(&y, &c.weights).unwrap(), Some(-1));
        }
    }

    #[test]
    fn chart_away_from_origin() {
        let s = heisenberg(NormFamily::euclidean(2));
        let q = [0.5, -0.25, 1.0];
        let c = build_privileged(&s, &q, None).unwrap();
        let z = c.to_privileged(&q);
        assert!(z.iter().all(|v| v.abs() < 1e-15));
        let p = [0.6, -0.2, 1.1];
        let back = c.from_privileged(&c.to_privileged(&p));
        // the chart is polynomial and exact for Heisenberg
        for (a, b) in back.iter().zip(p) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grushin_chart() {
        let s = grushin();
        let c = build_privileged(&s, &[0.0, 0.0], None).unwrap();
        assert_eq!(c.weights.as_slice(), &[1, 2]);
        let ys = c.pushforward_frame(&s).unwrap();
        assert_eq!(ys[0], PolyVectorField::coordinate(2, 0));
        assert_eq!(ys[1].component(1), &PolyScalar::var(2, 0));
    }

    #[test]
    fn perturbed_contact_chart_and_identity_chart() {
        let s = contact_perturbed(NormFamily::lp(2, 1.5));
        let c = build_privileged(&s, &[0.0; 3], None).unwrap();
        assert!(round_trip_defect(&c).unwrap().iter().all(PolyScalar::is_zero));
        for y in c.pushforward_frame(&s).unwrap() {
            assert!(field_weighted_order(&y, &c.weights).unwrap().unwrap() >= -1);
        }
        PrivilegedChart::identity(&s, &[0.0; 3], None).unwrap();
    }

    #[test]
    fn non_privileged_identity_is_rejected() {
        // at q = (0,0) for X1 = ∂x + ∂y... use Heisenberg with coordinates swapped: z is not weight 1
        let s = heisenberg(NormFamily::euclidean(2));
        let bad = PrivilegedChart::identity(&s, &[0.0; 3], None).and_then(|mut c| {
            c.weights = WeightVector::new(vec![1, 2, 2]).unwrap();
            c.certify(&s).map(|_| c)
        });
        assert!(matches!(bad, Err(SflabError::NotPrivileged { coordinate: 1, order: Some(1), weight: 2 })));
    }
}
