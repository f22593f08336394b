//! Exact polynomial algebra: scalar fields, vector fields, Lie brackets, weighted degrees
//! and truncated flows.
//!
//! Everything here works over exact rationals; floating point enters only through
//! [`CompiledField`], the evaluation form used by the numerical solvers.

mod compiled;
mod flow;
pub mod linalg;
mod poly;

use std::fmt;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SflabError};

pub use compiled::{fill_powers, CompiledField, CompiledPoly};
pub use flow::{truncated_flow, FlowMap};
pub use poly::{
    format_rational, parse_rational, rat, rat_from_f64, rat_int, rat_to_f64, Exponents, PolyScalar, Rational,
};

/// Weighted degree of a polynomial; the zero polynomial maps to `NegInfinity`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Degree {
    NegInfinity,
    Finite(i64),
}

/// Non-decreasing positive integer weights with `w_1 = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct WeightVector(Vec<u32>);

impl WeightVector {
    pub fn new(w: Vec<u32>) -> Result<Self> {
        if w.is_empty() {
            return Err(SflabError::InvalidArgument("empty weight vector".into()));
        }
        if w[0] != 1 {
            return Err(SflabError::InvalidArgument(format!("first weight must be 1, got {}", w[0])));
        }
        if w.windows(2).any(|p| p[1] < p[0]) {
            return Err(SflabError::InvalidArgument(format!("weights must be non-decreasing: {w:?}")));
        }
        Ok(Self(w))
    }

    /// Weights from a growth vector `(n_1, …, n_s)`: `w_i = j` for `n_{j-1} < i ≤ n_j`.
    pub fn from_growth(growth: &[usize]) -> Result<Self> {
        let mut w = Vec::new();
        let mut prev = 0;
        for (j, &nj) in growth.iter().enumerate() {
            for _ in prev..nj {
                w.push(j as u32 + 1);
            }
            prev = prev.max(nj);
        }
        Self::new(w)
    }

    /// Inverse of [`WeightVector::from_growth`] for growth vectors without plateaus.
    pub fn to_growth(&self) -> Vec<usize> {
        let step = self.step();
        (1..=step).map(|j| self.0.iter().filter(|&&w| w <= j).count()).collect()
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1; n])
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn step(&self) -> u32 {
        *self.0.last().unwrap()
    }

    pub fn homogeneous_dimension(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<u32>> for WeightVector {
    type Error = SflabError;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<u32> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Polynomial vector field `Σ_j V^j ∂_j` on a chart of `R^n`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PolyVectorField {
    components: Vec<PolyScalar>,
}

impl PolyVectorField {
    pub fn new(components: Vec<PolyScalar>) -> Result<Self> {
        let n = components.len();
        if let Some(bad) = components.iter().find(|c| c.nvars() != n) {
            return Err(SflabError::DimensionMismatch { expected: n, found: bad.nvars() });
        }
        Ok(Self { components })
    }

    pub fn zero(n: usize) -> Self {
        Self { components: vec![PolyScalar::zero(n); n] }
    }

    /// The coordinate field `∂_i`.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut f = Self::zero(n);
        f.components[i] = PolyScalar::one(n);
        f
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[PolyScalar] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &PolyScalar {
        &self.components[j]
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(PolyScalar::is_zero)
    }

    pub fn map_components(&self, f: impl FnMut(&PolyScalar) -> PolyScalar) -> Self {
        Self { components: self.components.iter().map(f).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other.dim())?;
        Ok(Self { components: self.components.iter().zip(&other.components).map(|(a, b)| a + b).collect() })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other.dim())?;
        Ok(Self { components: self.components.iter().zip(&other.components).map(|(a, b)| a - b).collect() })
    }

    pub fn scale(&self, c: &Rational) -> Self {
        self.map_components(|p| p.scale(c))
    }

    pub fn truncate(&self, cap: u32) -> Self {
        self.map_components(|p| p.truncate(cap))
    }

    /// Derivation `X f = Σ_i X^i ∂f/∂x_i`.
    pub fn apply(&self, f: &PolyScalar) -> Result<PolyScalar> {
        self.check_dim(f.nvars())?;
        let mut out = PolyScalar::zero(self.dim());
        for (i, xi) in self.components.iter().enumerate() {
            if xi.is_zero() {
                continue;
            }
            let d = f.derivative(i);
            if !d.is_zero() {
                out = &out + &(xi * &d);
            }
        }
        Ok(out)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    pub fn eval_exact(&self, x: &[Rational]) -> Vec<Rational> {
        self.components.iter().map(|c| c.eval_exact(x)).collect()
    }

    /// `y ↦ X(q + y)`, the field expressed in coordinates centred at `q`.
    pub fn shift(&self, q: &[Rational]) -> Result<Self> {
        self.check_dim(q.len())?;
        Ok(Self { components: self.components.iter().map(|c| c.shift(q)).collect::<Result<_>>()? })
    }

    /// Largest absolute coefficient over all components.
    pub fn max_abs_coeff(&self) -> Rational {
        self.components.iter().map(PolyScalar::max_abs_coeff).max().unwrap_or_else(Rational::zero)
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(SflabError::DimensionMismatch { expected: self.dim(), found: n });
        }
        Ok(())
    }
}

impl fmt::Debug for PolyVectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for PolyVectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (j, c) in self.components.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "[{c}]∂{j}")?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Lie bracket `[X, Y] = (DY)X − (DX)Y`, exact.
pub fn lie_bracket(x: &PolyVectorField, y: &PolyVectorField) -> Result<PolyVectorField> {
    x.check_dim(y.dim())?;
    let n = x.dim();
    let components = (0..n)
        .map(|j| Ok(&x.apply(y.component(j))? - &y.apply(x.component(j))?))
        .collect::<Result<Vec<_>>>()?;
    PolyVectorField::new(components)
}

pub fn apply_derivation(x: &PolyVectorField, f: &PolyScalar) -> Result<PolyScalar> {
    x.apply(f)
}

pub fn weighted_degree(f: &PolyScalar, w: &WeightVector) -> Result<Degree> {
    f.weighted_degree(w)
}

/// Weighted order of a vector field: `min_j (deg_w X^j − w_j)`, `None` for the zero field.
pub fn field_weighted_order(x: &PolyVectorField, w: &WeightVector) -> Result<Option<i64>> {
    let mut best: Option<i64> = None;
    for (j, c) in x.components().iter().enumerate() {
        if let Degree::Finite(d) = c.weighted_degree(w)? {
            let o = d - w.as_slice()[j] as i64;
            best = Some(best.map_or(o, |b: i64| b.min(o)));
        }
    }
    Ok(best)
}
