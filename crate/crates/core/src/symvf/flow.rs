use super::{PolyScalar, PolyVectorField};
use crate::error::{Result, SflabError};

/// Truncated Taylor polynomial of a flow `(t, p) ↦ e^{tX}(p)`.
///
/// Components are polynomials in `n + 1` variables: variable 0 is time, variables `1..=n`
/// are the initial point.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMap {
    pub cap: u32,
    components: Vec<PolyScalar>,
}

impl FlowMap {
    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[PolyScalar] {
        &self.components
    }

    /// Substitutes `t := time` and `p := point`, dropping terms of total degree above `cap`.
    pub fn substitute(&self, time: &PolyScalar, point: &[PolyScalar], cap: Option<u32>) -> Result<Vec<PolyScalar>> {
        if point.len() != self.dim() {
            return Err(SflabError::DimensionMismatch { expected: self.dim(), found: point.len() });
        }
        let mut subs = Vec::with_capacity(self.dim() + 1);
        subs.push(time.clone());
        subs.extend(point.iter().cloned());
        self.components.iter().map(|c| c.compose(&subs, cap)).collect()
    }

    pub fn eval(&self, t: f64, p: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(p.len() + 1);
        x.push(t);
        x.extend_from_slice(p);
        self.components.iter().map(|c| c.eval(&x)).collect()
    }
}

/// Picard iteration for `e^{tX}`: every retained term has total degree `≤ degree_cap` in `(t, p)`.
pub fn truncated_flow(x: &PolyVectorField, degree_cap: u32) -> Result<FlowMap> {
    if degree_cap < 1 {
        return Err(SflabError::InvalidArgument("degree_cap must be at least 1".into()));
    }
    let n = x.dim();
    let m = n + 1;
    let start: Vec<PolyScalar> = (0..n).map(|i| PolyScalar::var(m, i + 1)).collect();
    let mut current = start.clone();
    // each sweep fixes at least one more order in t
    for _ in 0..=degree_cap {
        let mut next = Vec::with_capacity(n);
        for (j, c) in x.components().iter().enumerate() {
            let rhs = c.compose(&current, Some(degree_cap - 1))?;
            next.push(&start[j] + &rhs.integrate(0));
        }
        if next == current {
            break;
        }
        current = next;
    }
    Ok(FlowMap { cap: degree_cap, components: current })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symvf::rat;

    #[test]
    fn constant_field_flow_is_exact() {
        let dx = PolyVectorField::coordinate(2, 0);
        let flow = truncated_flow(&dx, 4).unwrap();
        // x(t) = p1 + t, y(t) = p2
        let t = PolyScalar::var(3, 0);
        let p1 = PolyScalar::var(3, 1);
        assert_eq!(flow.components()[0], &p1 + &t);
        assert_eq!(flow.components()[1], PolyScalar::var(3, 2));
    }

    #[test]
    fn linear_field_picard_terms() {
        // X = x ∂x, cap 3: x(t) = p (1 + t + t^2/2), the t^3 p term has degree 4
        let x = PolyVectorField::new(vec![PolyScalar::var(1, 0)]).unwrap();
        let flow = truncated_flow(&x, 3).unwrap();
        let t = PolyScalar::var(2, 0);
        let p = PolyScalar::var(2, 1);
        let expected = &(&p + &(&p * &t)) + &(&(&p * &t) * &t).scale(&rat(1, 2));
        assert_eq!(flow.components()[0], expected);

        let flow5 = truncated_flow(&x, 5).unwrap();
        let v = flow5.eval(0.1, &[2.0])[0];
        let exact = 2.0 * (1.0 + 0.1 + 0.01 / 2.0 + 0.001 / 6.0 + 0.0001 / 24.0);
        assert!((v - exact).abs() < 1e-14);
    }

    #[test]
    fn shear_flow_is_exact() {
        // X = x ∂y: y(t) = y0 + a t
        let x = PolyVectorField::new(vec![PolyScalar::zero(2), PolyScalar::var(2, 0)]).unwrap();
        let flow = truncated_flow(&x, 3).unwrap();
        let t = PolyScalar::var(3, 0);
        let a = PolyScalar::var(3, 1);
        let y0 = PolyScalar::var(3, 2);
        assert_eq!(flow.components()[0], a.clone());
        assert_eq!(flow.components()[1], &y0 + &(&a * &t));
        assert_eq!(flow.eval(2.0, &[3.0, 1.0]), vec![3.0, 7.0]);
    }
}
