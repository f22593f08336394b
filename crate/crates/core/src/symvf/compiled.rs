use super::{rat_to_f64, PolyScalar, PolyVectorField};

/// `f64` evaluation form of a [`PolyScalar`].
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    n: usize,
    coeffs: Vec<f64>,
    exps: Vec<u8>,
}

impl CompiledPoly {
    pub fn new(p: &PolyScalar) -> Self {
        let n = p.nvars();
        let mut coeffs = Vec::with_capacity(p.num_terms());
        let mut exps = Vec::with_capacity(p.num_terms() * n);
        for (e, c) in p.terms() {
            coeffs.push(rat_to_f64(c));
            exps.extend(e.iter().map(|&k| u8::try_from(k).expect("exponent exceeds 255")));
        }
        Self { n, coeffs, exps }
    }

    pub fn max_degree(&self) -> usize {
        self.exps.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Evaluates against a power table built by [`fill_powers`].
    #[inline]
    pub fn eval_with(&self, powers: &[f64], stride: usize) -> f64 {
        let mut acc = 0.0;
        for (t, &c) in self.coeffs.iter().enumerate() {
            let e = &self.exps[t * self.n..(t + 1) * self.n];
            let mut v = c;
            for (i, &k) in e.iter().enumerate() {
                if k != 0 {
                    v *= powers[i * stride + k as usize];
                }
            }
            acc += v;
        }
        acc
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let stride = self.max_degree() + 1;
        let mut powers = vec![0.0; self.n * stride];
        fill_powers(x, stride, &mut powers);
        self.eval_with(&powers, stride)
    }
}

/// `powers[i * stride + k] = x_i^k` for `k < stride`.
#[inline]
pub fn fill_powers(x: &[f64], stride: usize, powers: &mut [f64]) {
    for (i, &xi) in x.iter().enumerate() {
        let row = &mut powers[i * stride..(i + 1) * stride];
        let mut v = 1.0;
        for slot in row.iter_mut() {
            *slot = v;
            v *= xi;
        }
    }
}

/// A vector field together with its Jacobian, compiled for repeated `f64` evaluation.
#[derive(Clone, Debug)]
pub struct CompiledField {
    n: usize,
    components: Vec<CompiledPoly>,
    /// Row-major: entry `j * n + i` is `∂X^j / ∂x_i`.
    jacobian: Vec<CompiledPoly>,
    stride: usize,
}

impl CompiledField {
    pub fn new(field: &PolyVectorField) -> Self {
        let n = field.dim();
        let components: Vec<CompiledPoly> = field.components().iter().map(CompiledPoly::new).collect();
        let mut jacobian = Vec::with_capacity(n * n);
        for c in field.components() {
            for i in 0..n {
                jacobian.push(CompiledPoly::new(&c.derivative(i)));
            }
        }
        let stride = components.iter().map(CompiledPoly::max_degree).max().unwrap_or(0) + 1;
        Self { n, components, jacobian, stride }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Power-table stride needed by this field.
    pub fn stride(&self) -> usize {
        self.stride
    }

    #[inline]
    pub fn eval_with(&self, powers: &[f64], stride: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval_with(powers, stride);
        }
    }

    #[inline]
    pub fn jacobian_with(&self, powers: &[f64], stride: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.jacobian) {
            *o = if c.is_zero() { 0.0 } else { c.eval_with(powers, stride) };
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut powers = vec![0.0; self.n * self.stride];
        fill_powers(x, self.stride, &mut powers);
        let mut out = vec![0.0; self.n];
        self.eval_with(&powers, self.stride, &mut out);
        out
    }

    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let mut powers = vec![0.0; self.n * self.stride];
        fill_powers(x, self.stride, &mut powers);
        let mut out = vec![0.0; self.n * self.n];
        self.jacobian_with(&powers, self.stride, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symvf::rat;

    #[test]
    fn compiled_matches_exact() {
        let x = PolyScalar::var(2, 0);
        let y = PolyScalar::var(2, 1);
        let p = &(&(&x * &x) * &y).scale(&rat(3, 2)) - &y;
        let c = CompiledPoly::new(&p);
        let v = c.eval(&[0.5, -2.0]);
        assert!((v - (1.5 * 0.25 * -2.0 + 2.0)).abs() < 1e-15);

        let f = PolyVectorField::new(vec![y.clone(), p.clone()]).unwrap();
        let cf = CompiledField::new(&f);
        let jac = cf.jacobian(&[0.5, -2.0]);
        // d(p)/dx = 3 x y, d(p)/dy = 1.5 x^2 - 1
        assert_eq!(jac[0], 0.0);
        assert_eq!(jac[1], 1.0);
        assert!((jac[2] - (3.0 * 0.5 * -2.0)).abs() < 1e-15);
        assert!((jac[3] - (1.5 * 0.25 - 1.0)).abs() < 1e-15);
    }
}
