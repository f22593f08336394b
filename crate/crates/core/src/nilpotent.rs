//! Anisotropic dilations, the dilated frames `Y_i^ε`, the nilpotent limit and algebraic checks on it.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::coords::{build_privileged, PrivilegedChart};
use crate::error::{Result, SflabError};
use crate::structure::{NormFamily, NormKind, SubFinslerStructure};
use crate::symvf::linalg::{nullspace, rank, rref, RatMatrix};
use crate::symvf::{
    field_weighted_order, format_rational, lie_bracket, rat_from_f64, Exponents, PolyScalar, PolyVectorField, Rational,
    WeightVector,
};

/// `δ_ε(z) = (ε^{w_1} z_1, …, ε^{w_n} z_n)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DilationFamily {
    pub weights: WeightVector,
}

impl DilationFamily {
    pub fn new(weights: WeightVector) -> Self {
        Self { weights }
    }

    pub fn apply(&self, eps: f64, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.weights.as_slice()).map(|(x, &w)| x * eps.powi(w as i32)).collect()
    }

    pub fn apply_exact(&self, eps: &Rational, z: &[Rational]) -> Vec<Rational> {
        z.iter().zip(self.weights.as_slice()).map(|(x, &w)| x * num_traits::pow(eps.clone(), w as usize)).collect()
    }
}

fn rat_pow(eps: &Rational, k: i64) -> Rational {
    if k >= 0 {
        num_traits::pow(eps.clone(), k as usize)
    } else {
        Rational::one() / num_traits::pow(eps.clone(), (-k) as usize)
    }
}

/// `Y^ε = ε (δ_{1/ε})_* Y`: the monomial `c z^α` in component `j` becomes `ε^{1 + ⟨w,α⟩ − w_j} c z^α`.
pub fn dilate_field(y: &PolyVectorField, d: &DilationFamily, eps: &Rational) -> Result<PolyVectorField> {
    if !eps.is_positive() {
        return Err(SflabError::InvalidArgument("dilation parameter must be positive".into()));
    }
    let w = d.weights.as_slice();
    if y.dim() != w.len() {
        return Err(SflabError::DimensionMismatch { expected: w.len(), found: y.dim() });
    }
    let n = y.dim();
    let comps = y
        .components()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let terms: Vec<(Exponents, Rational)> = c
                .terms()
                .map(|(e, coef)| {
                    let deg: i64 = e.iter().zip(w).map(|(a, b)| (*a as i64) * (*b as i64)).sum();
                    (e.clone(), coef * rat_pow(eps, 1 + deg - w[j] as i64))
                })
                .collect();
            PolyScalar::from_terms(n, terms)
        })
        .collect::<Result<Vec<_>>>()?;
    PolyVectorField::new(comps)
}

/// Homogeneous limit of the dilated frame, with the norm frozen at the base point.
#[derive(Clone, Debug)]
pub struct NilpotentStructure {
    pub hat_fields: Vec<PolyVectorField>,
    pub frozen_norm: NormFamily,
    pub weights: WeightVector,
    pub step: u32,
}

impl NilpotentStructure {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn fiber_dim(&self) -> usize {
        self.hat_fields.len()
    }

    pub fn dilations(&self) -> DilationFamily {
        DilationFamily::new(self.weights.clone())
    }

    /// The limit as an ordinary structure on the given box (it is defined on all of `R^n`).
    pub fn to_structure(&self, chart_box: Vec<(f64, f64)>) -> Result<SubFinslerStructure> {
        SubFinslerStructure::unchecked(self.hat_fields.clone(), self.frozen_norm.clone(), chart_box)
    }
}

/// Keeps, in component `j`, exactly the monomials of weighted degree `w_j − 1`.
pub fn nilpotent_limit(frame: &[PolyVectorField], d: &DilationFamily, frozen_norm: NormFamily) -> Result<NilpotentStructure> {
    let w = &d.weights;
    let mut hat = Vec::with_capacity(frame.len());
    for (i, y) in frame.iter().enumerate() {
        if y.dim() != w.len() {
            return Err(SflabError::DimensionMismatch { expected: w.len(), found: y.dim() });
        }
        if let Some(o) = field_weighted_order(y, w)? {
            if o < -1 {
                let comp = (0..y.dim())
                    .find(|&j| {
                        matches!(y.component(j).weighted_degree(w), Ok(crate::symvf::Degree::Finite(dg)) if dg - (w.as_slice()[j] as i64) < -1)
                    })
                    .unwrap_or(0);
                return Err(SflabError::NotApproximable { field: i, component: comp });
            }
        }
        let comps = y
            .components()
            .iter()
            .enumerate()
            .map(|(j, c)| c.weighted_part(w, w.as_slice()[j] as i64 - 1))
            .collect();
        hat.push(PolyVectorField::new(comps)?);
    }
    Ok(NilpotentStructure { hat_fields: hat, frozen_norm, weights: w.clone(), step: w.step() })
}

/// Freezes a norm family at a point, producing a constant family.
pub fn freeze_norm(norm: &NormFamily, q: &[f64]) -> Result<NormFamily> {
    match norm.kind() {
        NormKind::Quadratic { matrix } => {
            let k = matrix.len();
            let n = q.len();
            let m = matrix
                .iter()
                .map(|r| r.iter().map(|p| Ok(PolyScalar::constant(n, rat_from_f64(p.eval(q))?))).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            NormFamily::new(k, NormKind::Quadratic { matrix: m })
        }
        _ => Ok(norm.clone()),
    }
}

/// Nilpotent approximation of `S` at `q` through a certified chart.
///
/// With `identity_chart`, the given coordinates themselves are certified privileged and used.
pub fn approximate_at(s: &SubFinslerStructure, q: &[f64], identity_chart: bool) -> Result<(PrivilegedChart, NilpotentStructure)> {
    let chart = if identity_chart { PrivilegedChart::identity(s, q, None)? } else { build_privileged(s, q, None)? };
    let frame = chart.pushforward_frame(s)?;
    let frozen = freeze_norm(s.norm(), q)?;
    let nil = nilpotent_limit(&frame, &DilationFamily::new(chart.weights.clone()), frozen)?;
    Ok((chart, nil))
}

/// True iff every hat field is fixed by `ε (δ_{1/ε})_*` for every sample.
pub fn verify_homogeneity(nil: &NilpotentStructure, eps_samples: &[Rational]) -> Result<bool> {
    let d = nil.dilations();
    for eps in eps_samples {
        for f in &nil.hat_fields {
            if &dilate_field(f, &d, eps)? != f {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Structure of the Lie algebra generated by the hat fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NilpotencyReport {
    pub step_found: u32,
    pub hoermander_at_0: bool,
    pub growth: Vec<usize>,
    pub weights: WeightVector,
    pub algebra_dimension: usize,
    pub center_dimension: usize,
    /// Labels of the basis elements (iterated brackets of the generators).
    pub basis: Vec<String>,
    /// `structure_constants[a][b][c]` is the coefficient of basis element `c` in `[B_a, B_b]`.
    pub structure_constants: Vec<Vec<Vec<String>>>,
    /// Non-zero brackets of basis elements, written out.
    pub bracket_table: Vec<String>,
}

type Key = (usize, Exponents);

fn coeff_map(f: &PolyVectorField) -> BTreeMap<Key, Rational> {
    let mut out = BTreeMap::new();
    for (j, c) in f.components().iter().enumerate() {
        for (e, v) in c.terms() {
            out.insert((j, e.clone()), v.clone());
        }
    }
    out
}

/// Exact coordinates of `f` in the span of `basis`, or `None` if outside it.
fn decompose(basis: &[PolyVectorField], f: &PolyVectorField) -> Option<Vec<Rational>> {
    let maps: Vec<BTreeMap<Key, Rational>> = basis.iter().map(coeff_map).collect();
    let target = coeff_map(f);
    let mut keys: Vec<Key> = maps.iter().flat_map(|m| m.keys().cloned()).collect();
    keys.extend(target.keys().cloned());
    keys.sort();
    keys.dedup();
    let m = basis.len();
    let mut aug: RatMatrix = keys
        .iter()
        .map(|k| {
            let mut row: Vec<Rational> = maps.iter().map(|mp| mp.get(k).cloned().unwrap_or_else(Rational::zero)).collect();
            row.push(target.get(k).cloned().unwrap_or_else(Rational::zero));
            row
        })
        .collect();
    let pivots = rref(&mut aug);
    if pivots.contains(&m) {
        return None;
    }
    let mut x = vec![Rational::zero(); m];
    for (r, &p) in pivots.iter().enumerate() {
        x[p] = aug[r][m].clone();
    }
    Some(x)
}

/// Checks that all brackets longer than the declared step vanish and that Hörmander holds at 0.
pub fn verify_nilpotency(nil: &NilpotentStructure, depth: u32) -> Result<NilpotencyReport> {
    if depth < nil.step + 1 {
        return Err(SflabError::InvalidArgument(format!("depth {depth} must exceed the step {}", nil.step)));
    }
    let gens = &nil.hat_fields;
    let k = gens.len();
    let n = nil.dim();
    // right-normed brackets by length; they span the generated algebra
    let mut levels: Vec<Vec<(String, PolyVectorField)>> =
        vec![gens.iter().enumerate().filter(|(_, g)| !g.is_zero()).map(|(i, g)| (format!("X{}", i + 1), g.clone())).collect()];
    let mut step_found = 1;
    for len in 2..=depth {
        let prev = levels.last().unwrap();
        let mut next = Vec::new();
        for i in 0..k {
            for (label, f) in prev {
                let b = lie_bracket(&gens[i], f)?;
                if !b.is_zero() {
                    next.push((format!("[X{},{}]", i + 1, label), b));
                }
            }
        }
        if next.is_empty() {
            break;
        }
        step_found = len;
        levels.push(next);
    }
    if step_found >= depth || step_found != nil.step {
        return Err(SflabError::StepMismatch { declared: nil.step, found: step_found });
    }

    // graded basis: greedy over levels
    let mut basis: Vec<PolyVectorField> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut growth = Vec::new();
    let mut values_at_0: RatMatrix = Vec::new();
    let origin = vec![Rational::zero(); n];
    for level in &levels {
        for (label, f) in level {
            if decompose(&basis, f).is_none() {
                basis.push(f.clone());
                labels.push(label.clone());
            }
        }
        values_at_0 = basis.iter().map(|b| b.eval_exact(&origin)).collect();
        growth.push(rank(&values_at_0));
    }
    let hoermander_at_0 = rank(&values_at_0) == n;

    let m = basis.len();
    let mut consts = vec![vec![vec![Rational::zero(); m]; m]; m];
    let mut table = Vec::new();
    for a in 0..m {
        for b in 0..m {
            let br = lie_bracket(&basis[a], &basis[b])?;
            let c = decompose(&basis, &br).ok_or_else(|| {
                SflabError::InvalidArgument("bracket of basis elements left the generated span".into())
            })?;
            if a < b && c.iter().any(|v| !v.is_zero()) {
                let rhs: Vec<String> = c
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| !v.is_zero())
                    .map(|(i, v)| format!("({}){}", format_rational(v), labels[i]))
                    .collect();
                table.push(format!("[{},{}] = {}", labels[a], labels[b], rhs.join(" + ")));
            }
            consts[a][b] = c;
        }
    }
    // centre: v with Σ_a v_a c_{ab}^c = 0 for all b, c
    let rows: RatMatrix = (0..m)
        .flat_map(|b| (0..m).map(move |c| (b, c)))
        .map(|(b, c)| (0..m).map(|a| consts[a][b][c].clone()).collect())
        .collect();
    let center_dimension = nullspace(&rows, m).len();
    let growth_clean: Vec<usize> = growth.clone();
    Ok(NilpotencyReport {
        step_found,
        hoermander_at_0,
        weights: nil.weights.clone(),
        growth: growth_clean,
        algebra_dimension: m,
        center_dimension,
        basis: labels,
        structure_constants: consts
            .iter()
            .map(|r| r.iter().map(|c| c.iter().map(format_rational).collect()).collect())
            .collect(),
        bracket_table: table,
    })
}

/// Max coefficient of `Y^ε − X̂` over all fields, for convergence-rate demonstrations.
pub fn coefficient_gap(frame: &[PolyVectorField], nil: &NilpotentStructure, eps: &Rational) -> Result<Rational> {
    let d = nil.dilations();
    let mut best = Rational::zero();
    for (y, h) in frame.iter().zip(&nil.hat_fields) {
        let g = dilate_field(y, &d, eps)?.sub(h)?.max_abs_coeff();
        if g > best {
            best = g;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::fixtures::*;
    use crate::symvf::rat;

    fn one_dim(p: PolyScalar) -> PolyVectorField {
        PolyVectorField::new(vec![p]).unwrap()
    }

    #[test]
    fn dilate_examples() {
        let d1 = DilationFamily::new(WeightVector::uniform(1));
        let x = PolyScalar::var(1, 0);
        let dx = PolyVectorField::coordinate(1, 0);
        assert_eq!(dilate_field(&dx, &d1, &rat(1, 3)).unwrap(), dx);
        let f = one_dim(&x * &x);
        let e = rat(1, 3);
        assert_eq!(dilate_field(&f, &d1, &e).unwrap(), one_dim((&x * &x).scale(&rat(1, 9))));
        assert!(dilate_field(&f, &d1, &rat(0, 1)).is_err());
    }

    #[test]
    fn limit_of_one_dim_example() {
        let x = PolyScalar::var(1, 0);
        let f = one_dim(&PolyScalar::one(1) + &(&x * &x));
        let nil = nilpotent_limit(&[f], &DilationFamily::new(WeightVector::uniform(1)), NormFamily::euclidean(1)).unwrap();
        assert_eq!(nil.hat_fields[0], PolyVectorField::coordinate(1, 0));
    }

    #[test]
    fn non_approximable_field() {
        // ∂z has weighted order −2 for weights (1,1,2)
        let d = DilationFamily::new(WeightVector::new(vec![1, 1, 2]).unwrap());
        let err = nilpotent_limit(&[PolyVectorField::coordinate(3, 2)], &d, NormFamily::euclidean(1)).unwrap_err();
        assert!(matches!(err, SflabError::NotApproximable { field: 0, component: 2 }));
    }

    #[test]
    fn heisenberg_limit() {
        let s = heisenberg(NormFamily::euclidean(2));
        let (_, nil) = approximate_at(&s, &[0.0; 3], false).unwrap();
        assert!(verify_homogeneity(&nil, &[rat(2, 1), rat(1, 3)]).unwrap());
        let rep = verify_nilpotency(&nil, 4).unwrap();
        assert_eq!(rep.step_found, 2);
        assert!(rep.hoermander_at_0);
        assert_eq!(rep.algebra_dimension, 3);
        assert_eq!(rep.center_dimension, 1);
        assert_eq!(rep.growth, vec![2, 3]);
    }

    #[test]
    fn euclidean_and_grushin_limits() {
        let e = euclidean(2);
        let (_, nil) = approximate_at(&e, &[0.0, 0.0], false).unwrap();
        assert_eq!(nil.hat_fields, e.fields().to_vec());
        assert_eq!(verify_nilpotency(&nil, 3).unwrap().step_found, 1);

        let g = grushin();
        let (_, nil) = approximate_at(&g, &[0.0, 0.0], false).unwrap();
        let rep = verify_nilpotency(&nil, 4).unwrap();
        assert_eq!(rep.step_found, 2);
        assert!(rep.hoermander_at_0);
    }

    #[test]
    fn corrupted_field_is_not_homogeneous() {
        let x = PolyScalar::var(1, 0);
        let bad = one_dim(&PolyScalar::one(1) + &x);
        let nil = NilpotentStructure {
            hat_fields: vec![bad],
            frozen_norm: NormFamily::euclidean(1),
            weights: WeightVector::uniform(1),
            step: 1,
        };
        assert!(!verify_homogeneity(&nil, &[rat(2, 1)]).unwrap());
    }

    #[test]
    fn coefficient_gap_decays_linearly() {
        let s = contact_perturbed(NormFamily::lp(2, 1.5));
        let (chart, nil) = approximate_at(&s, &[0.0; 3], true).unwrap();
        let frame = chart.pushforward_frame(&s).unwrap();
        let mut prev = coefficient_gap(&frame, &nil, &rat(1, 2)).unwrap();
        for m in 2..=8 {
            let g = coefficient_gap(&frame, &nil, &rat(1, 1 << m)).unwrap();
            assert_eq!(&g * rat(2, 1), prev);
            prev = g;
        }
    }
}
