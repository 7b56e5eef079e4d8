//! Effective cost: the cheapest balanced state with a prescribed workload.

use thiserror::Error;

use crate::graph::{workload_vector, DemandSet, GraphError, MatchingGraph};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("cost vector has length {found}, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("cost of class {0} must be positive and finite")]
    NonPositiveCost(usize),
    #[error("{0} is empty, so the effective cost slope is undefined")]
    EmptyComplement(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Positive linear holding costs, one per buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVector(Vec<f64>);

impl CostVector {
    pub fn new(g: &MatchingGraph, c: Vec<f64>) -> Result<Self, CostError> {
        if c.len() != g.dim() {
            return Err(CostError::ShapeMismatch {
                expected: g.dim(),
                found: c.len(),
            });
        }
        if let Some(k) = c.iter().position(|v| !v.is_finite() || *v <= 0.0) {
            return Err(CostError::NonPositiveCost(k));
        }
        Ok(Self(c))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn eval(&self, x: &[u32]) -> f64 {
        self.0.iter().zip(x).map(|(c, &v)| c * v as f64).sum()
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// Slopes of the piecewise-linear effective cost and the buffers that
/// attain them. All indices are global buffer indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveCostSlopes {
    pub c_plus: f64,
    pub c_minus: f64,
    /// Cheapest demand buffer in `D`.
    pub i_plus: usize,
    /// Cheapest supply buffer outside the neighbourhood of `D`.
    pub j_plus: usize,
    /// Cheapest demand buffer outside `D`.
    pub i_minus: usize,
    /// Cheapest supply buffer in the neighbourhood of `D`.
    pub j_minus: usize,
}

impl EffectiveCostSlopes {
    /// `max(c_plus w, -c_minus w)`.
    pub fn cost(&self, w: f64) -> f64 {
        (self.c_plus * w).max(-self.c_minus * w)
    }

    /// One-sided slope used on each half line; zero at the origin.
    pub fn derivative(&self, w: f64) -> f64 {
        if w > 0.0 {
            self.c_plus
        } else if w < 0.0 {
            -self.c_minus
        } else {
            0.0
        }
    }
}

fn argmin(c: &[f64], candidates: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for k in candidates {
        if best.is_none_or(|b| c[k] < c[b]) {
            best = Some(k);
        }
    }
    best
}

/// Effective cost slopes for the workload direction of `d`.
pub fn slopes(
    g: &MatchingGraph,
    c: &CostVector,
    d: &DemandSet,
) -> Result<EffectiveCostSlopes, CostError> {
    let xi = workload_vector(g, d)?;
    let c = c.as_slice();
    let nd = g.n_demand();
    let in_s = |k: usize| xi.xi()[k] == -1;
    let i_plus = argmin(c, d.members().iter().copied()).expect("D is non-empty");
    let i_minus = argmin(c, (0..nd).filter(|&i| !d.contains(i)))
        .ok_or(CostError::EmptyComplement("demand complement"))?;
    let j_plus = argmin(c, (nd..g.dim()).filter(|&k| !in_s(k)))
        .ok_or(CostError::EmptyComplement("supply complement"))?;
    let j_minus = argmin(c, (nd..g.dim()).filter(|&k| in_s(k))).expect("neighbourhood is non-empty");
    Ok(EffectiveCostSlopes {
        c_plus: c[i_plus] + c[j_plus],
        c_minus: c[i_minus] + c[j_minus],
        i_plus,
        j_plus,
        i_minus,
        j_minus,
    })
}

/// Effective cost at workload `w` and the minimizing state, which is
/// supported on two buffers.
pub fn evaluate(s: &EffectiveCostSlopes, dim: usize, w: f64) -> (f64, Vec<f64>) {
    let mut x = vec![0.0; dim];
    if w > 0.0 {
        x[s.i_plus] = w;
        x[s.j_plus] = w;
    } else if w < 0.0 {
        x[s.i_minus] = -w;
        x[s.j_minus] = -w;
    }
    (s.cost(w), x)
}

/// Effective cost by enumerating every basic solution of
/// `{x >= 0 : xi . x = w, balance . x = 0}`, i.e. every index pair.
/// Exact for linear costs since an optimal vertex has at most two
/// non-zero entries.
pub fn brute_oracle(
    g: &MatchingGraph,
    c: &CostVector,
    d: &DemandSet,
    w: i64,
) -> Result<f64, CostError> {
    let xi = workload_vector(g, d)?;
    let b = g.balance_vector();
    let c = c.as_slice();
    let dim = g.dim();
    if w == 0 {
        return Ok(0.0);
    }
    let w = w as f64;
    let mut best = f64::INFINITY;
    for k in 0..dim {
        for l in k + 1..dim {
            // [xi_k xi_l; b_k b_l] [x_k; x_l] = [w; 0]
            let (a11, a12) = (xi.xi()[k] as f64, xi.xi()[l] as f64);
            let (a21, a22) = (b[k] as f64, b[l] as f64);
            let det = a11 * a22 - a12 * a21;
            if det == 0.0 {
                continue;
            }
            let xk = w * a22 / det;
            let xl = -w * a21 / det;
            if xk >= 0.0 && xl >= 0.0 {
                best = best.min(c[k] * xk + c[l] * xl);
            }
        }
    }
    Ok(best)
}
