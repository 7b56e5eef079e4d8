//! Brute-force average-cost value iteration for small instances.
//!
//! [`mdp_value_iteration`] solves the network MDP on a truncated state space
//! and [`relaxation_value_iteration`] solves the one-dimensional workload
//! relaxation on an integer lattice. Both use relative value iteration with
//! an aperiodicity transform and stop on the span seminorm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::arrivals::ArrivalDistribution;
use crate::effective_cost::CostVector;
use crate::graph::{check_ncond, for_each_feasible, GraphError, MatchingDecision, MatchingGraph};
use crate::relaxation::RelaxationModel;
use crate::simulator::CostBasis;
use crate::stats::BatchMeans;

/// Weight on the true transition kernel in the aperiodicity transform.
const LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("value iteration did not converge in {max_iters} iterations (span {span:e})")]
    NoConvergence { max_iters: usize, span: f64 },
    #[error("truncated state space has {states} states, budget is {budget}")]
    StateSpaceTooLarge { states: u128, budget: usize },
    #[error("buffer cap must be at least 2, got {0}")]
    CapTooSmall(u32),
    #[error("the instance violates NCond")]
    NCondViolated,
    #[error("lattice half-width must be at least 1")]
    EmptyLattice,
    #[error("{what} has length {found}, expected {expected}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone)]
pub struct TruncatedMdp {
    pub graph: MatchingGraph,
    pub arrivals: ArrivalDistribution,
    pub cost: CostVector,
    /// Largest admissible level of every buffer. Arrivals that would push
    /// either of their classes past it are dropped.
    pub buffer_cap: u32,
    pub cost_basis: CostBasis,
    /// Maximum number of balanced states.
    pub max_states: usize,
}

impl TruncatedMdp {
    pub fn new(
        graph: MatchingGraph,
        arrivals: ArrivalDistribution,
        cost: CostVector,
        buffer_cap: u32,
        cost_basis: CostBasis,
    ) -> Self {
        Self {
            graph,
            arrivals,
            cost,
            buffer_cap,
            cost_basis,
            max_states: 2_000_000,
        }
    }
}

/// Balanced states of a truncated MDP, indexed compactly.
#[derive(Debug, Clone)]
pub struct StateSpace {
    dim: usize,
    cap: u32,
    states: Vec<Vec<u32>>,
    lookup: Vec<u32>,
}

impl StateSpace {
    fn build(g: &MatchingGraph, cap: u32, budget: usize) -> Result<Self, OracleError> {
        let dim = g.dim();
        let radix = cap as u128 + 1;
        let dense = radix.checked_pow(dim as u32).unwrap_or(u128::MAX);
        // the dense lookup table may hold more slots than balanced states
        if dense > budget as u128 * 64 {
            return Err(OracleError::StateSpaceTooLarge { states: dense, budget });
        }
        let dense = dense as usize;
        let nd = g.n_demand();
        let mut lookup = vec![u32::MAX; dense];
        let mut states = Vec::new();
        let mut x = vec![0u32; dim];
        for (code, slot) in lookup.iter_mut().enumerate() {
            let mut c = code;
            for v in x.iter_mut() {
                *v = (c % (cap as usize + 1)) as u32;
                c /= cap as usize + 1;
            }
            let d: u32 = x[..nd].iter().sum();
            let s: u32 = x[nd..].iter().sum();
            if d == s {
                if states.len() >= budget {
                    return Err(OracleError::StateSpaceTooLarge {
                        states: states.len() as u128 + 1,
                        budget,
                    });
                }
                *slot = states.len() as u32;
                states.push(x.clone());
            }
        }
        Ok(Self { dim, cap, states, lookup })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, idx: usize) -> &[u32] {
        &self.states[idx]
    }

    /// Compact index of `x`, if it lies inside the truncation.
    pub fn index(&self, x: &[u32]) -> Option<usize> {
        if x.len() != self.dim || x.iter().any(|&v| v > self.cap) {
            return None;
        }
        let code = x.iter().rev().fold(0usize, |acc, &v| acc * (self.cap as usize + 1) + v as usize);
        match self.lookup[code] {
            u32::MAX => None,
            i => Some(i as usize),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MdpSolution {
    pub eta_star: f64,
    /// Relative values indexed like [`MdpSolution::states`], zero at the
    /// empty state.
    pub h_star: Vec<f64>,
    /// Greedy decision at every state.
    pub policy: Vec<MatchingDecision>,
    pub states: StateSpace,
    pub iterations: usize,
    /// Span of `Tv - v` at every iteration.
    pub spans: Vec<f64>,
}

impl MdpSolution {
    pub fn h_at(&self, x: &[u32]) -> Option<f64> {
        self.states.index(x).map(|i| self.h_star[i])
    }

    pub fn decision_at(&self, x: &[u32]) -> Option<&MatchingDecision> {
        self.states.index(x).map(|i| &self.policy[i])
    }
}

struct Transitions {
    /// `(post-decision state, decision)` candidates per state.
    actions: Vec<Vec<(u32, MatchingDecision)>>,
    /// Successor per post-decision state and arrival pair.
    next: Vec<Vec<u32>>,
    probs: Vec<f64>,
    cost_pre: Vec<f64>,
    cost_post: Vec<f64>,
}

fn transitions(m: &TruncatedMdp, space: &StateSpace) -> Transitions {
    let g = &m.graph;
    let c = m.cost.as_slice();
    let cost_of = |x: &[u32]| -> f64 { x.iter().zip(c).map(|(&v, ck)| v as f64 * ck).sum() };
    let (pre_w, post_w) = match m.cost_basis {
        CostBasis::X => (1.0, 0.0),
        CostBasis::Q => (0.0, 1.0),
    };
    let probs: Vec<f64> = m.arrivals.probs().to_vec();
    let pairs = m.arrivals.pairs().to_vec();
    let per_state: Vec<_> = (0..space.len())
        .into_par_iter()
        .map(|s| {
            let x = space.state(s);
            let mut acts: Vec<(u32, MatchingDecision)> = Vec::new();
            let mut q = vec![0u32; x.len()];
            for_each_feasible(g, x, |counts| {
                q.copy_from_slice(x);
                for (e, &n) in g.edges().iter().zip(counts) {
                    q[e.demand] -= n;
                    q[g.supply_index(e.supply)] -= n;
                }
                let qi = space.index(&q).expect("post-decision state inside truncation") as u32;
                if !acts.iter().any(|(p, _)| *p == qi) {
                    acts.push((qi, MatchingDecision { counts: counts.to_vec() }));
                }
            });
            let mut nx = x.to_vec();
            let next: Vec<u32> = pairs
                .iter()
                .map(|a| {
                    nx.copy_from_slice(x);
                    nx[a.demand] += 1;
                    nx[g.supply_index(a.supply)] += 1;
                    space.index(&nx).unwrap_or(s) as u32
                })
                .collect();
            (acts, next, pre_w * cost_of(x), post_w * cost_of(x))
        })
        .collect();
    let mut t = Transitions {
        actions: Vec::with_capacity(space.len()),
        next: Vec::with_capacity(space.len()),
        probs,
        cost_pre: Vec::with_capacity(space.len()),
        cost_post: Vec::with_capacity(space.len()),
    };
    for (a, n, cp, cq) in per_state {
        t.actions.push(a);
        t.next.push(n);
        t.cost_pre.push(cp);
        t.cost_post.push(cq);
    }
    t
}

/// Relative value iteration on the truncated network MDP.
pub fn mdp_value_iteration(m: &TruncatedMdp, tol: f64, max_iters: usize) -> Result<MdpSolution, OracleError> {
    let g = &m.graph;
    if m.buffer_cap < 2 {
        return Err(OracleError::CapTooSmall(m.buffer_cap));
    }
    if m.arrivals.dim() != g.dim() {
        return Err(OracleError::ShapeMismatch {
            what: "arrival distribution",
            expected: g.dim(),
            found: m.arrivals.dim(),
        });
    }
    if !check_ncond(g, &m.arrivals.alpha())?.satisfied {
        return Err(OracleError::NCondViolated);
    }
    let space = StateSpace::build(g, m.buffer_cap, m.max_states)?;
    let tr = transitions(m, &space);
    let anchor = space.index(&vec![0; g.dim()]).expect("zero state");
    let n = space.len();
    let mut v = vec![0.0f64; n];
    let mut spans = Vec::new();
    for iter in 1..=max_iters {
        let expect: Vec<f64> = tr
            .next
            .par_iter()
            .enumerate()
            .map(|(q, succ)| tr.cost_post[q] + LAMBDA * succ.iter().zip(&tr.probs).map(|(&s, p)| p * v[s as usize]).sum::<f64>())
            .collect();
        let tv: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|s| {
                let best = tr.actions[s]
                    .iter()
                    .map(|(q, _)| expect[*q as usize])
                    .fold(f64::INFINITY, f64::min);
                tr.cost_pre[s] + best + (1.0 - LAMBDA) * v[s]
            })
            .collect();
        let (lo, hi) = tv
            .iter()
            .zip(&v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(a - b), hi.max(a - b)));
        let span = hi - lo;
        spans.push(span);
        let offset = tv[anchor];
        for (vi, ti) in v.iter_mut().zip(&tv) {
            *vi = ti - offset;
        }
        if span < tol {
            let eta_star = 0.5 * (lo + hi);
            let expect: Vec<f64> = tr
                .next
                .iter()
                .enumerate()
                .map(|(q, succ)| tr.cost_post[q] + succ.iter().zip(&tr.probs).map(|(&s, p)| p * v[s as usize]).sum::<f64>())
                .collect();
            let policy = tr
                .actions
                .iter()
                .map(|acts| {
                    let mut best = &acts[0];
                    for a in &acts[1..] {
                        if expect[a.0 as usize] < expect[best.0 as usize] {
                            best = a;
                        }
                    }
                    best.1.clone()
                })
                .collect();
            return Ok(MdpSolution {
                eta_star,
                h_star: v.iter().map(|x| LAMBDA * x).collect(),
                policy,
                states: space,
                iterations: iter,
                spans,
            });
        }
    }
    Err(OracleError::NoConvergence {
        max_iters,
        span: spans.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Average cost of the solution's policy table on the truncated dynamics,
/// started empty, with batch-means standard error.
pub fn simulate_policy_table(
    m: &TruncatedMdp,
    sol: &MdpSolution,
    horizon: u64,
    seed: u64,
) -> (f64, f64) {
    let g = &m.graph;
    let c = m.cost.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burn = horizon / 100;
    let mut means = BatchMeans::new(horizon - burn, 100);
    let mut q = vec![0u32; g.dim()];
    let mut x = q.clone();
    for t in 0..horizon {
        let a = m.arrivals.sample(&mut rng);
        x.copy_from_slice(&q);
        x[a.demand] += 1;
        x[g.supply_index(a.supply)] += 1;
        if sol.states.index(&x).is_none() {
            x.copy_from_slice(&q);
        }
        let u = sol.decision_at(&x).expect("state inside truncation");
        q.copy_from_slice(&x);
        for (e, &n) in g.edges().iter().zip(&u.counts) {
            q[e.demand] -= n;
            q[g.supply_index(e.supply)] -= n;
        }
        if t >= burn {
            let basis = match m.cost_basis {
                CostBasis::X => &x,
                CostBasis::Q => &q,
            };
            means.push(basis.iter().zip(c).map(|(&v, ck)| v as f64 * ck).sum());
        }
    }
    means.finish()
}

/// Integer lattice `[-w_max, w_max]` for the relaxation; moves past either
/// end are clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    pub w_max: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationVi {
    pub eta_hat_star: f64,
    /// Threshold `tau` whose idleness rule reproduces the optimal switching
    /// level; infinite when the optimal policy never idles.
    pub threshold_estimate: f64,
    /// Relative values on the lattice from `-w_max` upward.
    pub values: Vec<f64>,
    /// Optimal idleness at each lattice point.
    pub idle: Vec<u32>,
    pub iterations: usize,
}

/// Relative value iteration for the workload relaxation.
///
/// The workload is integer valued: `W(t+1) = W(t) + I(t) + k` with
/// `k ~ increments` and idleness `I(t)` in `0..=idle_cap`. Cost is
/// `cbar(W(t))`.
pub fn relaxation_value_iteration(
    model: &RelaxationModel,
    lattice: Lattice,
    tol: f64,
    max_iters: usize,
) -> Result<RelaxationVi, OracleError> {
    if lattice.w_max < 1 {
        return Err(OracleError::EmptyLattice);
    }
    let wm = lattice.w_max;
    let n = (2 * wm + 1) as usize;
    let cap = model.idle_cap.floor() as i64;
    let support: Vec<(i64, f64)> = model.increments.support().into_iter().filter(|&(_, p)| p > 0.0).collect();
    let idx = |w: i64| (w.clamp(-wm, wm) + wm) as usize;
    let cost: Vec<f64> = (-wm..=wm).map(|w| model.cbar(w as f64)).collect();
    let anchor = idx(0);
    let mut v = vec![0.0f64; n];
    let mut last_span = f64::INFINITY;
    for iter in 1..=max_iters {
        // expected continuation from each pre-increment level
        let cont: Vec<f64> = (-wm..=wm)
            .map(|y| support.iter().map(|&(k, p)| p * v[idx(y + k)]).sum())
            .collect();
        let tv: Vec<f64> = (0..n)
            .map(|s| {
                let w = s as i64 - wm;
                let best = (0..=cap).map(|i| cont[idx(w + i)]).fold(f64::INFINITY, f64::min);
                cost[s] + LAMBDA * best + (1.0 - LAMBDA) * v[s]
            })
            .collect();
        let (lo, hi) = tv
            .iter()
            .zip(&v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(a - b), hi.max(a - b)));
        last_span = hi - lo;
        let offset = tv[anchor];
        for (vi, ti) in v.iter_mut().zip(&tv) {
            *vi = ti - offset;
        }
        if last_span < tol {
            let cont: Vec<f64> = (-wm..=wm)
                .map(|y| support.iter().map(|&(k, p)| p * v[idx(y + k)]).sum())
                .collect();
            let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            let idle: Vec<u32> = (0..n)
                .map(|s| {
                    let w = s as i64 - wm;
                    let mut best = 0i64;
                    for i in 1..=cap {
                        if cont[idx(w + i)] < cont[idx(w + best)] - 1e-12 * scale {
                            best = i;
                        }
                    }
                    best as u32
                })
                .collect();
            let target = idle
                .iter()
                .enumerate()
                .filter(|(_, &i)| i > 0)
                .map(|(s, &i)| s as i64 - wm + i as i64)
                .max();
            let threshold_estimate = match target {
                Some(m) => model.delta - m as f64,
                None => f64::INFINITY,
            };
            return Ok(RelaxationVi {
                eta_hat_star: 0.5 * (lo + hi),
                threshold_estimate,
                values: v.iter().map(|x| LAMBDA * x).collect(),
                idle,
                iterations: iter,
            });
        }
    }
    Err(OracleError::NoConvergence {
        max_iters,
        span: last_span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrivals::{build_distribution, IncrementDist};
    use crate::graph::Pair;
    use crate::relaxation::{tau_star, threshold_cost};

    fn p(i: usize, j: usize) -> Pair {
        Pair::new(i, j)
    }

    fn path2(cap: u32, basis: CostBasis) -> TruncatedMdp {
        let edges = vec![p(0, 0), p(1, 0), p(1, 1)];
        let g = MatchingGraph::new(2, 2, edges.clone(), edges, 4).unwrap();
        let d = build_distribution(&g, &[(p(0, 0), 0.4), (p(1, 0), 0.1), (p(1, 1), 0.5)]).unwrap();
        let c = CostVector::new(&g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        TruncatedMdp::new(g, d, c, cap, basis)
    }

    #[test]
    fn single_edge_is_free() {
        let g = MatchingGraph::new(1, 1, vec![p(0, 0)], vec![p(0, 0)], 4).unwrap();
        let d = build_distribution(&g, &[(p(0, 0), 1.0)]).unwrap();
        let c = CostVector::new(&g, vec![1.0, 1.0]).unwrap();
        let m = TruncatedMdp::new(g, d, c, 4, CostBasis::Q);
        let sol = mdp_value_iteration(&m, 1e-10, 10_000).unwrap();
        assert!(sol.eta_star.abs() < 1e-9);
        for s in 0..sol.states.len() {
            let x = sol.states.state(s);
            assert_eq!(sol.policy[s].counts, vec![x[0]]);
        }
    }

    #[test]
    fn state_space_guards() {
        let mut m = path2(1, CostBasis::Q);
        assert_eq!(mdp_value_iteration(&m, 1e-8, 10).unwrap_err(), OracleError::CapTooSmall(1));
        m.buffer_cap = 12;
        m.max_states = 100;
        assert!(matches!(
            mdp_value_iteration(&m, 1e-8, 10),
            Err(OracleError::StateSpaceTooLarge { .. })
        ));
        m.max_states = 1_000_000;
        assert!(matches!(
            mdp_value_iteration(&m, 1e-8, 3),
            Err(OracleError::NoConvergence { max_iters: 3, .. })
        ));
    }

    #[test]
    fn path2_reproducible_and_spans_decrease() {
        let m = path2(12, CostBasis::X);
        let a = mdp_value_iteration(&m, 1e-10, 200_000).unwrap();
        let b = mdp_value_iteration(&m, 1e-10, 200_000).unwrap();
        assert!(a.eta_star > 0.0 && a.eta_star.is_finite());
        assert!((a.eta_star - b.eta_star).abs() < 1e-8);
        for w in a.spans.windows(2).skip(10) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-13);
        }
        assert_eq!(a.h_at(&[0, 0, 0, 0]), Some(0.0));
    }

    #[test]
    fn path2_cap_sensitivity() {
        // dropping arrivals at the cap only removes cost, so a larger cap
        // cannot be cheaper; the effect is already negligible at cap 6
        let small = mdp_value_iteration(&path2(6, CostBasis::X), 1e-10, 200_000).unwrap();
        let large = mdp_value_iteration(&path2(12, CostBasis::X), 1e-10, 200_000).unwrap();
        assert!(small.eta_star <= large.eta_star + 1e-8);
        assert!((large.eta_star - small.eta_star) / large.eta_star < 0.01);
    }

    #[test]
    fn policy_table_simulation_matches() {
        let m = path2(12, CostBasis::X);
        let sol = mdp_value_iteration(&m, 1e-10, 200_000).unwrap();
        let (avg, se) = simulate_policy_table(&m, &sol, 1_000_000, 11);
        assert!((avg - sol.eta_star).abs() <= 3.0 * se, "{avg} {se} {}", sol.eta_star);
    }

    #[test]
    fn pinned_deterministic_chain() {
        let inc = IncrementDist { p_minus: 1.0, p_zero: 0.0, p_plus: 0.0 };
        let model = RelaxationModel::from_increments(inc, 2.0, 3.0, 2.0).unwrap();
        let vi = relaxation_value_iteration(&model, Lattice { w_max: 10 }, 1e-12, 10_000).unwrap();
        let min_cost = (-10..=10).map(|w| model.cbar(w as f64)).fold(f64::INFINITY, f64::min);
        assert!((vi.eta_hat_star - min_cost).abs() < 1e-9);
        assert!(vi.threshold_estimate.abs() < 1e-12);
    }

    #[test]
    fn symmetric_matches_diffusion() {
        let model = RelaxationModel::symmetric(0.1, 1.0, 1.0).unwrap();
        let (tau, eta) = tau_star(&model).unwrap();
        let vi = relaxation_value_iteration(&model, Lattice { w_max: 300 }, 1e-9, 1_000_000).unwrap();
        assert!((vi.eta_hat_star - eta).abs() / eta < 0.25, "{} {eta}", vi.eta_hat_star);
        assert!((vi.threshold_estimate - tau).abs() / tau < 0.25, "{} {tau}", vi.threshold_estimate);
        // the optimum is no worse than any threshold rule
        for t in [tau.floor(), tau, tau.ceil()] {
            assert!(vi.eta_hat_star <= threshold_cost(&model, t).unwrap() + 1e-6);
        }
    }

    #[test]
    fn relaxation_bounds_network() {
        use crate::arrivals::moments;
        use crate::effective_cost::slopes;
        use crate::graph::{workload_vector, DemandSet};
        let m = path2(12, CostBasis::X);
        let dset = DemandSet::new(vec![0]);
        let xi = workload_vector(&m.graph, &dset).unwrap();
        let mom = moments(&m.arrivals, &xi);
        let s = slopes(&m.graph, &m.cost, &dset).unwrap();
        let model = RelaxationModel::from_moments(&mom, &s, m.graph.max_matches()).unwrap();
        let vi = relaxation_value_iteration(&model, Lattice { w_max: 60 }, 1e-10, 1_000_000).unwrap();
        let sol = mdp_value_iteration(&m, 1e-10, 200_000).unwrap();
        assert!(vi.eta_hat_star <= sol.eta_star + 1e-6);
    }
}
