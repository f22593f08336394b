//! Discrete optimal transport by exact linear programming, and an exhaustive oracle.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SflabError};

pub const MAX_SUPPORT: usize = 200;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `(i, j, mass)` with positive mass.
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

/// Optimal plan between masses `a` and `b` for `cost[i][j]`.
pub fn optimal_plan(cost: &[Vec<f64>], a: &[f64], b: &[f64]) -> Result<TransportPlan> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 || cost.len() != n || cost.iter().any(|r| r.len() != m) {
        return Err(SflabError::InvalidArgument("cost matrix does not match the marginals".into()));
    }
    if n > MAX_SUPPORT || m > MAX_SUPPORT {
        return Err(SflabError::InvalidArgument(format!("transport supports are limited to {MAX_SUPPORT} points")));
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> = (0..n).map(|i| (0..m).map(|j| lp.add_var(cost[i][j], (0.0, f64::INFINITY))).collect()).collect();
    for (i, row) in vars.iter().enumerate() {
        let mut e = LinearExpr::empty();
        for v in row {
            e.add(*v, 1.0);
        }
        lp.add_constraint(e, ComparisonOp::Eq, a[i]);
    }
    // the last column constraint is implied by the others
    for j in 0..m - 1 {
        let mut e = LinearExpr::empty();
        for row in &vars {
            e.add(row[j], 1.0);
        }
        lp.add_constraint(e, ComparisonOp::Eq, b[j]);
    }
    let sol = lp.solve().map_err(|e| SflabError::Internal(format!("transport LP failed: {e}")))?;
    let mut entries = Vec::new();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let x = *sol.var_value(vars[i][j]);
            if x > 1e-15 {
                entries.push((i, j, x));
                total += x * cost[i][j];
            }
        }
    }
    Ok(TransportPlan { entries, cost: total })
}

/// Cheapest permutation for equal uniform masses, by exhaustion (at most 8 points).
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    if n == 0 || n > 8 || cost.iter().any(|r| r.len() != n) {
        return Err(SflabError::InvalidArgument("brute-force assignment needs a square cost matrix with at most 8 rows".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (perm.clone(), f64::INFINITY);
    heap(&mut perm, n, &mut |p| {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / n as f64;
        if c < best.1 {
            best = (p.to_vec(), c);
        }
    });
    Ok(best)
}

fn heap(p: &mut [usize], k: usize, f: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        f(p);
        return;
    }
    for i in 0..k - 1 {
        heap(p, k - 1, f);
        if k % 2 == 0 {
            p.swap(i, k - 1);
        } else {
            p.swap(0, k - 1);
        }
    }
    heap(p, k - 1, f);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lp_matches_assignment() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = vec![1.0 / 3.0; 3];
        let plan = optimal_plan(&cost, &a, &a).unwrap();
        let (perm, c) = brute_force_assignment(&cost).unwrap();
        assert!((plan.cost - c).abs() < 1e-12);
        assert_eq!(perm, vec![1, 0, 2]);
    }

    #[test]
    fn splitting_plan() {
        let plan = optimal_plan(&[vec![1.0, 2.0]], &[1.0], &[0.25, 0.75]).unwrap();
        assert!((plan.cost - 1.75).abs() < 1e-12);
        assert_eq!(plan.entries.len(), 2);
    }
}
