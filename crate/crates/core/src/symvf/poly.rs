use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::{Degree, WeightVector};
use crate::error::{Result, SflabError};

pub type Rational = BigRational;

/// Exponent multi-index of a monomial.
pub type Exponents = Vec<u32>;

pub fn rat(num: i64, den: i64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(v: i64) -> Rational {
    BigRational::from_integer(BigInt::from(v))
}

/// Exact conversion of a finite `f64` to a rational.
pub fn rat_from_f64(v: f64) -> Result<Rational> {
    BigRational::from_float(v).ok_or_else(|| SflabError::InvalidArgument(format!("non-finite value {v}")))
}

pub fn rat_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // fall back for huge numerators and denominators
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Parses `"p/q"`, `"p"` or a decimal literal into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| SflabError::Parse(format!("bad numerator in {s:?}")))?;
        let q: BigInt = q.trim().parse().map_err(|_| SflabError::Parse(format!("bad denominator in {s:?}")))?;
        if q.is_zero() {
            return Err(SflabError::Parse(format!("zero denominator in {s:?}")));
        }
        return Ok(BigRational::new(p, q));
    }
    if let Ok(i) = s.parse::<BigInt>() {
        return Ok(BigRational::from_integer(i));
    }
    // decimal literal: exact base-10 expansion
    let (int_part, frac_part) = s.split_once('.').ok_or_else(|| SflabError::Parse(format!("bad rational {s:?}")))?;
    let neg = int_part.starts_with('-');
    let digits = format!("{}{}", int_part.trim_start_matches(['-', '+']), frac_part);
    let num: BigInt = digits.parse().map_err(|_| SflabError::Parse(format!("bad rational {s:?}")))?;
    let den = num_traits::pow(BigInt::from(10), frac_part.len());
    let r = BigRational::new(num, den);
    Ok(if neg { -r } else { r })
}

pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Multivariate polynomial in `n` variables with exact rational coefficients.
///
/// Terms are kept in canonical form: no zero coefficients, exponent vectors of length `n`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PolyScalar {
    n: usize,
    terms: BTreeMap<Exponents, Rational>,
}

impl PolyScalar {
    pub fn zero(n: usize) -> Self {
        Self { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: Rational) -> Self {
        let mut p = Self::zero(n);
        p.add_term(vec![0; n], c);
        p
    }

    pub fn one(n: usize) -> Self {
        Self::constant(n, Rational::one())
    }

    /// The coordinate function `x_i`.
    pub fn var(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        Self::monomial(e, Rational::one())
    }

    pub fn monomial(exponents: Exponents, coeff: Rational) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(exponents, coeff);
        p
    }

    pub fn from_terms(n: usize, terms: impl IntoIterator<Item = (Exponents, Rational)>) -> Result<Self> {
        let mut p = Self::zero(n);
        for (e, c) in terms {
            if e.len() != n {
                return Err(SflabError::DimensionMismatch { expected: n, found: e.len() });
            }
            p.add_term(e, c);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, &Rational)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, e: &[u32]) -> Rational {
        self.terms.get(e).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn constant_term(&self) -> Rational {
        self.coeff(&vec![0; self.n])
    }

    fn add_term(&mut self, e: Exponents, c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(e) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn total_degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum()).max()
    }

    /// Minimum over monomials of `sum_i w_i e_i`; `NegInfinity` for the zero polynomial.
    pub fn weighted_degree(&self, w: &WeightVector) -> Result<Degree> {
        if w.len() != self.n {
            return Err(SflabError::DimensionMismatch { expected: self.n, found: w.len() });
        }
        Ok(self
            .terms
            .keys()
            .map(|e| weighted(e, w))
            .min()
            .map(Degree::Finite)
            .unwrap_or(Degree::NegInfinity))
    }

    /// Keeps only monomials whose weighted degree equals `d`.
    pub fn weighted_part(&self, w: &WeightVector, d: i64) -> Self {
        self.filter(|e| weighted(e, w) == d)
    }

    pub fn filter(&self, mut keep: impl FnMut(&[u32]) -> bool) -> Self {
        Self {
            n: self.n,
            terms: self.terms.iter().filter(|(e, _)| keep(e)).map(|(e, c)| (e.clone(), c.clone())).collect(),
        }
    }

    /// Drops every monomial of total degree greater than `cap`.
    pub fn truncate(&self, cap: u32) -> Self {
        self.filter(|e| e.iter().sum::<u32>() <= cap)
    }

    pub fn scale(&self, c: &Rational) -> Self {
        if c.is_zero() {
            return Self::zero(self.n);
        }
        Self {
            n: self.n,
            terms: self.terms.iter().map(|(e, v)| (e.clone(), v * c)).collect(),
        }
    }

    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.n);
        for (e, c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut f = e.clone();
            f[i] -= 1;
            out.add_term(f, c * rat_int(e[i] as i64));
        }
        out
    }

    /// Antiderivative in variable `i` vanishing on `x_i = 0`.
    pub fn integrate(&self, i: usize) -> Self {
        let mut out = Self::zero(self.n);
        for (e, c) in &self.terms {
            let mut f = e.clone();
            f[i] += 1;
            let k = rat_int(f[i] as i64);
            out.add_term(f, c / k);
        }
        out
    }

    pub fn mul_truncated(&self, other: &Self, cap: Option<u32>) -> Self {
        assert_eq!(self.n, other.n, "polynomial dimension mismatch");
        let mut out = Self::zero(self.n);
        for (ea, ca) in &self.terms {
            let da: u32 = ea.iter().sum();
            for (eb, cb) in &other.terms {
                if let Some(cap) = cap {
                    if da + eb.iter().sum::<u32>() > cap {
                        continue;
                    }
                }
                let e: Exponents = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    pub fn pow_truncated(&self, k: u32, cap: Option<u32>) -> Self {
        let mut acc = Self::one(self.n);
        for _ in 0..k {
            acc = acc.mul_truncated(self, cap);
        }
        acc
    }

    /// Substitutes `x_i := subs[i]`; all substitutes share a common variable count.
    /// With `cap`, monomials of total degree above it are dropped along the way.
    pub fn compose(&self, subs: &[PolyScalar], cap: Option<u32>) -> Result<Self> {
        if subs.len() != self.n {
            return Err(SflabError::DimensionMismatch { expected: self.n, found: subs.len() });
        }
        let m = subs.first().map(|s| s.n).unwrap_or(0);
        if let Some(bad) = subs.iter().find(|s| s.n != m) {
            return Err(SflabError::DimensionMismatch { expected: m, found: bad.n });
        }
        // cache powers per variable
        let mut powers: Vec<Vec<PolyScalar>> = subs.iter().map(|s| vec![PolyScalar::one(s.n)]).collect();
        let mut out = Self::zero(m);
        for (e, c) in &self.terms {
            let mut prod = PolyScalar::constant(m, c.clone());
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                while powers[i].len() <= k as usize {
                    let next = powers[i].last().unwrap().mul_truncated(&subs[i], cap);
                    powers[i].push(next);
                }
                prod = prod.mul_truncated(&powers[i][k as usize], cap);
                if prod.is_zero() {
                    break;
                }
            }
            out = &out + &prod;
        }
        Ok(out)
    }

    /// Re-centres the polynomial: returns `y ↦ p(q + y)`.
    pub fn shift(&self, q: &[Rational]) -> Result<Self> {
        let subs: Vec<PolyScalar> = (0..self.n)
            .map(|i| &PolyScalar::var(self.n, i) + &PolyScalar::constant(self.n, q[i].clone()))
            .collect();
        self.compose(&subs, None)
    }

    /// Embeds into a larger variable set: variable `i` becomes variable `map[i]` of `m`.
    pub fn embed(&self, m: usize, map: &[usize]) -> Self {
        let mut out = Self::zero(m);
        for (e, c) in &self.terms {
            let mut f = vec![0; m];
            for (i, &k) in e.iter().enumerate() {
                f[map[i]] += k;
            }
            out.add_term(f, c.clone());
        }
        out
    }

    pub fn eval_exact(&self, x: &[Rational]) -> Rational {
        let mut acc = Rational::zero();
        for (e, c) in &self.terms {
            let mut t = c.clone();
            for (xi, &k) in x.iter().zip(e) {
                if k > 0 {
                    t *= num_traits::pow(xi.clone(), k as usize);
                }
            }
            acc += t;
        }
        acc
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                let mut t = rat_to_f64(c);
                for (xi, &k) in x.iter().zip(e) {
                    if k > 0 {
                        t *= xi.powi(k as i32);
                    }
                }
                t
            })
            .sum()
    }

    /// Largest absolute coefficient (0 for the zero polynomial).
    pub fn max_abs_coeff(&self) -> Rational {
        self.terms.values().map(|c| c.abs()).max().unwrap_or_else(Rational::zero)
    }
}

fn weighted(e: &[u32], w: &WeightVector) -> i64 {
    e.iter().zip(w.as_slice()).map(|(&k, &wi)| k as i64 * wi as i64).sum()
}

impl<'a> Add<&'a PolyScalar> for &'a PolyScalar {
    type Output = PolyScalar;
    fn add(self, rhs: &PolyScalar) -> PolyScalar {
        assert_eq!(self.n, rhs.n, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }
}

impl<'a> Sub<&'a PolyScalar> for &'a PolyScalar {
    type Output = PolyScalar;
    fn sub(self, rhs: &PolyScalar) -> PolyScalar {
        assert_eq!(self.n, rhs.n, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), -c.clone());
        }
        out
    }
}

impl<'a> Mul<&'a PolyScalar> for &'a PolyScalar {
    type Output = PolyScalar;
    fn mul(self, rhs: &PolyScalar) -> PolyScalar {
        self.mul_truncated(rhs, None)
    }
}

impl Neg for &PolyScalar {
    type Output = PolyScalar;
    fn neg(self) -> PolyScalar {
        self.scale(&-Rational::one())
    }
}

impl fmt::Debug for PolyScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for PolyScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (idx, (e, c)) in self.terms.iter().enumerate() {
            if idx > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({})", format_rational(c))?;
            for (i, &k) in e.iter().enumerate() {
                match k {
                    0 => {}
                    1 => write!(f, "*x{i}")?,
                    _ => write!(f, "*x{i}^{k}")?,
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_formats() {
        assert_eq!(parse_rational("3/6").unwrap(), rat(1, 2));
        assert_eq!(parse_rational("-7").unwrap(), rat_int(-7));
        assert_eq!(parse_rational("-0.25").unwrap(), rat(-1, 4));
        assert!(parse_rational("1/0").is_err());
        assert_eq!(format_rational(&rat(-2, 4)), "-1/2");
    }

    #[test]
    fn canonical_form_drops_zero() {
        let x = PolyScalar::var(2, 0);
        let d = &x - &x;
        assert!(d.is_zero());
        assert_eq!(d.num_terms(), 0);
    }

    #[test]
    fn derivative_and_integral() {
        let x = PolyScalar::var(2, 0);
        let y = PolyScalar::var(2, 1);
        let p = &(&x * &x) * &y; // x^2 y
        assert_eq!(p.derivative(0), (&x * &y).scale(&rat_int(2)));
        assert_eq!(p.derivative(0).integrate(0), p);
    }

    #[test]
    fn compose_and_shift() {
        let x = PolyScalar::var(1, 0);
        let p = &x * &x;
        let shifted = p.shift(&[rat_int(1)]).unwrap(); // (y+1)^2
        assert_eq!(shifted.eval_exact(&[rat_int(2)]), rat_int(9));
        assert_eq!(shifted.truncate(1).eval_exact(&[rat_int(2)]), rat_int(5));
    }

    #[test]
    fn weighted_degree_cases() {
        let w = WeightVector::new(vec![1, 1, 2]).unwrap();
        let z = PolyScalar::var(3, 2);
        assert_eq!(z.weighted_degree(&w).unwrap(), Degree::Finite(2));
        let xy = &PolyScalar::var(3, 0) * &PolyScalar::var(3, 1);
        assert_eq!(xy.weighted_degree(&w).unwrap(), Degree::Finite(2));
        assert_eq!(PolyScalar::zero(3).weighted_degree(&w).unwrap(), Degree::NegInfinity);
    }
}
