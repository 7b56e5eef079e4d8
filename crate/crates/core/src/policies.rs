//! Matching policies. Every policy sees `x = X(t) = Q(t) + A(t)` together
//! with the arrival pair `A(t)` and returns per-edge match counts.

use rand::Rng;
use thiserror::Error;

use crate::flows::{positive_flow, Flow, FlowError, FlowNetwork, Side};
use crate::graph::{DemandSet, MatchingDecision, MatchingGraph, Pair, WorkloadVector};
use crate::value_function::HParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("no non-empty buffer on the opposite side; the arrival queues")]
    EmptyOppositeSide,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("priority order must list every edge exactly once")]
    InvalidPriority,
    #[error("vector has length {found}, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("class {0} does not belong to any flow component")]
    UncoveredClass(usize),
}

/// h-MaxWeight with a threshold on idleness.
#[derive(Debug, Clone)]
pub struct HMwtPolicy {
    pub params: HParams,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub enum Policy {
    HMwt(HMwtPolicy),
    /// MaxWeight for `h(x) = sum_k w_k x_k^2`; unit weights give Match the
    /// Longest.
    HMaxWeight { weights: Vec<f64> },
    /// Each arrival takes the partner buffer with the largest `w_k x_k`.
    GreedyMaxWeight { weights: Vec<f64> },
    /// Each arrival takes the first available edge in the order (edge
    /// indices).
    Priority { order: Vec<usize> },
    RandomizedFlow(RandomizedFlowPolicy),
}

impl Policy {
    pub fn hmwt(params: HParams, tau: f64) -> Self {
        Policy::HMwt(HMwtPolicy { params, tau })
    }

    pub fn priority(g: &MatchingGraph, order: Vec<usize>) -> Result<Self, PolicyError> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..g.edges().len()).collect::<Vec<_>>() {
            return Err(PolicyError::InvalidPriority);
        }
        Ok(Policy::Priority { order })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Policy::HMwt(_) => "h-mwt",
            Policy::HMaxWeight { .. } => "h-maxweight",
            Policy::GreedyMaxWeight { .. } => "greedy-maxweight",
            Policy::Priority { .. } => "priority",
            Policy::RandomizedFlow(_) => "randomized-flow",
        }
    }

    /// The decision at state `x` after arrival `a`.
    pub fn decide<R: Rng + ?Sized>(
        &self,
        g: &MatchingGraph,
        x: &[u32],
        a: Pair,
        rng: &mut R,
    ) -> MatchingDecision {
        let u = match self {
            Policy::HMwt(p) => hmwt_decide(g, p, x),
            Policy::HMaxWeight { weights } => h_maxweight_decide(g, weights, x),
            Policy::GreedyMaxWeight { weights } => greedy_maxweight_decide(g, weights, x, a),
            Policy::Priority { order } => priority_decide(g, order, x, a),
            Policy::RandomizedFlow(p) => p.decide(g, x, a, rng),
        };
        debug_assert!(u.is_feasible(g, x), "policy {} chose an infeasible decision", self.label());
        u
    }
}

/// Argmax of `sum_e n_e score_e` over feasible decisions using at most
/// `idle_cap` matches on `idle_edge` edges. Ties go to more matches, then
/// to the lexicographically greatest count vector.
pub fn best_decision(
    g: &MatchingGraph,
    x: &[u32],
    score: &[f64],
    idle_edge: &[bool],
    idle_cap: u32,
) -> MatchingDecision {
    struct Search<'a> {
        g: &'a MatchingGraph,
        score: &'a [f64],
        idle_edge: &'a [bool],
        remaining: Vec<u32>,
        counts: Vec<u32>,
        best: Vec<u32>,
        best_score: f64,
        best_total: u32,
    }

    fn go(s: &mut Search, e: usize, budget: u32, idle_left: u32, acc: f64, total: u32) {
        if e == s.counts.len() {
            if acc > s.best_score || (acc == s.best_score && total >= s.best_total) {
                s.best_score = acc;
                s.best_total = total;
                s.best.copy_from_slice(&s.counts);
            }
            return;
        }
        let edge = s.g.edges()[e];
        let (ki, kj) = (edge.demand, s.g.supply_index(edge.supply));
        let mut top = budget.min(s.remaining[ki]).min(s.remaining[kj]);
        if s.idle_edge[e] {
            top = top.min(idle_left);
        }
        for n in 0..=top {
            s.counts[e] = n;
            s.remaining[ki] -= n;
            s.remaining[kj] -= n;
            let idle = if s.idle_edge[e] { idle_left - n } else { idle_left };
            go(s, e + 1, budget - n, idle, acc + n as f64 * s.score[e], total + n);
            s.remaining[ki] += n;
            s.remaining[kj] += n;
        }
        s.counts[e] = 0;
    }

    let m = g.edges().len();
    let mut s = Search {
        g,
        score,
        idle_edge,
        remaining: x.to_vec(),
        counts: vec![0; m],
        best: vec![0; m],
        best_score: f64::NEG_INFINITY,
        best_total: 0,
    };
    go(&mut s, 0, g.max_matches() as u32, idle_cap, 0.0, 0);
    MatchingDecision { counts: s.best }
}

fn edge_scores(g: &MatchingGraph, grad: &[f64]) -> Vec<f64> {
    g.edges()
        .iter()
        .map(|e| grad[e.demand] + grad[g.supply_index(e.supply)])
        .collect()
}

/// Largest idleness the threshold rule allows at workload `w`.
pub fn idle_allowance(w: i64, tau: f64) -> u32 {
    let room = -(w as f64) - tau;
    if (w as f64) >= -tau || room < 1.0 {
        0
    } else {
        room.floor().min(u32::MAX as f64) as u32
    }
}

/// h-MWT: maximize `u . grad h(x)`; cross-matching (idleness) only while
/// the workload is below `-tau`, and no more than `-w - tau` of it.
pub fn hmwt_decide(g: &MatchingGraph, p: &HMwtPolicy, x: &[u32]) -> MatchingDecision {
    let grad = p.params.grad_at(x);
    let score = edge_scores(g, &grad);
    let xi = &p.params.xi;
    let idle_edge: Vec<bool> = g.edges().iter().map(|e| xi.is_cross_edge(g, *e)).collect();
    let cap = idle_allowance(xi.dot(x), p.tau);
    best_decision(g, x, &score, &idle_edge, cap)
}

/// MaxWeight for the weighted quadratic `sum_k w_k x_k^2`.
pub fn h_maxweight_decide(g: &MatchingGraph, weights: &[f64], x: &[u32]) -> MatchingDecision {
    let grad: Vec<f64> = weights.iter().zip(x).map(|(w, &v)| 2.0 * w * v as f64).collect();
    let score = edge_scores(g, &grad);
    let none = vec![false; g.edges().len()];
    best_decision(g, x, &score, &none, 0)
}

fn take(g: &MatchingGraph, u: &mut MatchingDecision, rest: &mut [u32], i: usize, j: usize) {
    let e = g.edge_index(Pair::new(i, j)).expect("match along an edge");
    u.counts[e] += 1;
    rest[i] -= 1;
    rest[g.supply_index(j)] -= 1;
}

/// Greedy cost-weighted MaxWeight: the arriving demand takes the supply
/// neighbour maximizing `w_j x_j`, then the arriving supply (unless it was
/// just taken) does the same on the demand side. Ties go to the lowest
/// index.
pub fn greedy_maxweight_decide(
    g: &MatchingGraph,
    weights: &[f64],
    x: &[u32],
    a: Pair,
) -> MatchingDecision {
    let mut u = MatchingDecision::zero(g);
    let mut rest = x.to_vec();
    let mut supply_taken = false;
    let best_supply = g
        .supply_neighbors(a.demand)
        .iter()
        .copied()
        .filter(|&j| rest[g.supply_index(j)] >= 1)
        .fold(None, |best: Option<(usize, f64)>, j| {
            let k = g.supply_index(j);
            let v = weights[k] * rest[k] as f64;
            if best.is_none_or(|(_, b)| v > b) { Some((j, v)) } else { best }
        });
    if let Some((j, _)) = best_supply {
        take(g, &mut u, &mut rest, a.demand, j);
        supply_taken = j == a.supply;
    }
    if !supply_taken {
        let best_demand = g
            .demand_neighbors(a.supply)
            .iter()
            .copied()
            .filter(|&i| rest[i] >= 1)
            .fold(None, |best: Option<(usize, f64)>, i| {
                let v = weights[i] * rest[i] as f64;
                if best.is_none_or(|(_, b)| v > b) { Some((i, v)) } else { best }
            });
        if let Some((i, _)) = best_demand {
            take(g, &mut u, &mut rest, i, a.supply);
        }
    }
    u
}

/// Static priority: each arrival takes the first edge in `order` that is
/// incident to it and whose other end is non-empty.
pub fn priority_decide(g: &MatchingGraph, order: &[usize], x: &[u32], a: Pair) -> MatchingDecision {
    let mut u = MatchingDecision::zero(g);
    let mut rest = x.to_vec();
    let mut supply_taken = false;
    if let Some(e) = order.iter().map(|&k| g.edges()[k]).find(|e| {
        e.demand == a.demand && rest[g.supply_index(e.supply)] >= 1
    }) {
        take(g, &mut u, &mut rest, e.demand, e.supply);
        supply_taken = e.supply == a.supply;
    }
    if !supply_taken {
        if let Some(e) = order
            .iter()
            .map(|&k| g.edges()[k])
            .find(|e| e.supply == a.supply && rest[e.demand] >= 1)
        {
            take(g, &mut u, &mut rest, e.demand, e.supply);
        }
    }
    u
}

/// One flow component of the randomized policy.
#[derive(Debug, Clone)]
pub struct FlowComponent {
    pub network: FlowNetwork,
    pub flow: Flow,
    pub saturated: Side,
}

/// Randomized policy driven by a strictly positive flow: an arriving item
/// is matched to a queued partner drawn with probability at least
/// `F(i,j) / alpha`.
#[derive(Debug, Clone)]
pub struct RandomizedFlowPolicy {
    n_demand: usize,
    components: Vec<FlowComponent>,
    /// Arrival rate per buffer.
    alpha: Vec<f64>,
    /// `(component, node position)` per buffer.
    home: Vec<(usize, usize)>,
}

impl RandomizedFlowPolicy {
    /// Without `split`, one flow on the whole graph. With `split = Some(D)`,
    /// a demand-saturating flow on `D` and its neighbourhood plus a
    /// supply-saturating flow on the remaining classes; no edge between the
    /// two parts is ever used.
    pub fn new(
        g: &MatchingGraph,
        alpha: &[f64],
        split: Option<&DemandSet>,
    ) -> Result<Self, PolicyError> {
        if alpha.len() != g.dim() {
            return Err(PolicyError::ShapeMismatch {
                expected: g.dim(),
                found: alpha.len(),
            });
        }
        let mut components = Vec::new();
        match split {
            None => {
                let all: Vec<usize> = (0..g.n_demand()).collect();
                let net = FlowNetwork::restricted(g, &all, alpha)?;
                let r = positive_flow(&net, Side::Demand, None)?;
                components.push(FlowComponent { network: net, flow: r.flow, saturated: Side::Demand });
            }
            Some(d) => {
                let net = FlowNetwork::restricted(g, d.members(), alpha)?;
                let r = positive_flow(&net, Side::Demand, None)?;
                components.push(FlowComponent { network: net, flow: r.flow, saturated: Side::Demand });
                let net = FlowNetwork::complement(g, d, alpha)?;
                let r = positive_flow(&net, Side::Supply, None)?;
                components.push(FlowComponent { network: net, flow: r.flow, saturated: Side::Supply });
            }
        }
        let mut home = vec![(usize::MAX, 0); g.dim()];
        for (c, comp) in components.iter().enumerate() {
            for (pos, &i) in comp.network.demand.iter().enumerate() {
                home[i] = (c, pos);
            }
            for (pos, &j) in comp.network.supply.iter().enumerate() {
                home[g.supply_index(j)] = (c, pos);
            }
        }
        if let Some(k) = home.iter().position(|h| h.0 == usize::MAX) {
            return Err(PolicyError::UncoveredClass(k));
        }
        Ok(Self {
            n_demand: g.n_demand(),
            components,
            alpha: alpha.to_vec(),
            home,
        })
    }

    pub fn components(&self) -> &[FlowComponent] {
        &self.components
    }

    /// Total flow through buffer `k`.
    pub fn throughput(&self, k: usize) -> f64 {
        let (c, pos) = self.home[k];
        let f = &self.components[c].flow;
        if k < self.n_demand {
            f.source_flow[pos]
        } else {
            f.sink_flow[pos]
        }
    }

    /// Match probabilities for an arrival of class `k` (global index) at
    /// queue state `q`, as `(partner buffer, probability)`. The leftover
    /// mass `alpha_k - sum F` is spread evenly over the non-empty partners.
    pub fn matching_vectors(&self, q: &[u32], k: usize) -> Result<Vec<(usize, f64)>, PolicyError> {
        let (c, _) = self.home[k];
        let comp = &self.components[c];
        let net = &comp.network;
        let mut cand: Vec<(usize, f64)> = Vec::new();
        for (e, &f) in net.edges.iter().zip(&comp.flow.edge_flow) {
            let partner = if k < self.n_demand {
                (e.demand == k).then_some(self.n_demand + e.supply)
            } else {
                (self.n_demand + e.supply == k).then_some(e.demand)
            };
            if let Some(p) = partner {
                if q[p] >= 1 {
                    cand.push((p, f));
                }
            }
        }
        if cand.is_empty() {
            return Err(PolicyError::EmptyOppositeSide);
        }
        let a = self.alpha[k];
        let used: f64 = cand.iter().map(|(_, f)| f).sum();
        let share = (a - used).max(0.0) / cand.len() as f64;
        let total = used + share * cand.len() as f64;
        Ok(cand.into_iter().map(|(p, f)| (p, (f + share) / total)).collect())
    }

    /// Per-buffer drift bound `q_k + alpha_k - throughput_k` on the
    /// expected next queue length.
    pub fn drift_bounds(&self, q: &[u32]) -> Vec<f64> {
        (0..q.len())
            .map(|k| q[k] as f64 + self.alpha[k] - self.throughput(k))
            .collect()
    }

    fn draw<R: Rng + ?Sized>(&self, q: &[u32], k: usize, rng: &mut R) -> Option<usize> {
        let probs = self.matching_vectors(q, k).ok()?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(p, pr) in &probs {
            acc += pr;
            if u < acc {
                return Some(p);
            }
        }
        probs.last().map(|&(p, _)| p)
    }

    /// Matches each arrival against the queue `q = x - a`. Demand and
    /// supply arrivals draw from opposite sides, so they never compete for
    /// the same item.
    pub fn decide<R: Rng + ?Sized>(
        &self,
        g: &MatchingGraph,
        x: &[u32],
        a: Pair,
        rng: &mut R,
    ) -> MatchingDecision {
        let mut q = x.to_vec();
        q[a.demand] -= 1;
        q[g.supply_index(a.supply)] -= 1;
        let mut u = MatchingDecision::zero(g);
        if let Some(p) = self.draw(&q, a.demand, rng) {
            let e = g.edge_index(Pair::new(a.demand, p - self.n_demand)).expect("edge");
            u.counts[e] += 1;
        }
        if let Some(p) = self.draw(&q, g.supply_index(a.supply), rng) {
            let e = g.edge_index(Pair::new(p, a.supply)).expect("edge");
            u.counts[e] += 1;
        }
        u
    }
}

/// Which workload direction a policy idles along, when it has one.
pub fn designated_workload(p: &Policy) -> Option<&WorkloadVector> {
    match p {
        Policy::HMwt(h) => Some(&h.params.xi),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective_cost::{slopes, CostVector};
    use crate::graph::{feasible_decisions, workload_vector, StateVector};
    use crate::value_function::{build_params, Tuning};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(i: usize, j: usize) -> Pair {
        Pair::new(i, j)
    }

    fn path2() -> MatchingGraph {
        let edges = vec![p(0, 0), p(1, 0), p(1, 1)];
        MatchingGraph::new(2, 2, edges.clone(), edges, 4).unwrap()
    }

    fn path2_hmwt(tau: f64) -> HMwtPolicy {
        let g = path2();
        let d = DemandSet::new(vec![0]);
        let c = CostVector::new(&g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = slopes(&g, &c, &d).unwrap();
        let xi = workload_vector(&g, &d).unwrap();
        HMwtPolicy {
            params: build_params(0.1, 0.09, &s, &xi, &c, Tuning::default()).unwrap(),
            tau,
        }
    }

    /// Argmax by full enumeration with the documented tie rule.
    fn oracle_best(
        g: &MatchingGraph,
        x: &[u32],
        grad: &[f64],
        allowed: impl Fn(&MatchingDecision) -> bool,
    ) -> MatchingDecision {
        let st = StateVector::new(g, x.to_vec()).unwrap();
        let mut best: Option<(f64, u32, MatchingDecision)> = None;
        for u in feasible_decisions(g, &st).into_iter().filter(|u| allowed(u)) {
            let s: f64 = u.induced(g).iter().zip(grad).map(|(&n, gk)| n as f64 * gk).sum();
            let better = match &best {
                None => true,
                Some((bs, bt, bu)) => {
                    s > *bs + 1e-9
                        || ((s - bs).abs() <= 1e-9 && (u.total() > *bt || (u.total() == *bt && u.counts > bu.counts)))
                }
            };
            if better {
                let t = u.total();
                best = Some((s, t, u));
            }
        }
        best.unwrap().2
    }

    #[test]
    fn hmwt_origin_and_simple_match() {
        let g = path2();
        let pol = path2_hmwt(0.3);
        assert!(hmwt_decide(&g, &pol, &[0, 0, 0, 0]).is_zero());
        let u = hmwt_decide(&g, &pol, &[1, 0, 1, 0]);
        let grad = pol.params.grad_at(&[1, 0, 1, 0]);
        assert!(grad[0] + grad[2] > 0.0);
        assert_eq!(u.counts, vec![1, 0, 0]);
    }

    #[test]
    fn hmwt_matches_enumeration_oracle() {
        let g = path2();
        let pol = path2_hmwt(0.3);
        let xi = pol.params.xi.clone();
        let score = |x: &[u32], u: &MatchingDecision| -> f64 {
            let grad = pol.params.grad_at(x);
            u.induced(&g).iter().zip(&grad).map(|(&n, gk)| n as f64 * gk).sum()
        };
        for a in 0..7u32 {
            for b in 0..7u32 {
                for c in 0..7u32 {
                    if a + b < c {
                        continue;
                    }
                    let x = [a, b, c, a + b - c];
                    let w = xi.dot(&x);
                    let grad = pol.params.grad_at(&x);
                    let cap = idle_allowance(w, pol.tau);
                    let want = oracle_best(&g, &x, &grad, |u| xi.idleness(&g, u) <= cap);
                    let got = hmwt_decide(&g, &pol, &x);
                    assert!(got.is_feasible(&g, &x));
                    assert!(xi.idleness(&g, &got) <= cap);
                    assert!((score(&x, &got) - score(&x, &want)).abs() <= 1e-9, "x = {x:?}");
                    if w as f64 >= -pol.tau {
                        assert_eq!(xi.idleness(&g, &got), 0);
                    }
                }
            }
        }
    }

    #[test]
    fn hmwt_cross_match_deep_below_threshold() {
        // only the cross edge (d2,s1) is available, workload -3, tau 0.3
        let g = path2();
        let pol = path2_hmwt(0.3);
        let x = [0, 3, 3, 0];
        assert_eq!(pol.params.xi.dot(&x), -3);
        let u = hmwt_decide(&g, &pol, &x);
        let grad = pol.params.grad_at(&x);
        assert!(grad[1] + grad[2] > 0.0);
        assert_eq!(u.counts, vec![0, 2, 0]);
        // with a larger threshold the same state may not idle
        let pol = path2_hmwt(5.0);
        assert!(hmwt_decide(&g, &pol, &x).is_zero());
    }

    #[test]
    fn idle_allowance_rule() {
        assert_eq!(idle_allowance(0, 1.0), 0);
        assert_eq!(idle_allowance(-1, 1.0), 0);
        assert_eq!(idle_allowance(-5, 3.2), 1);
        assert_eq!(idle_allowance(-5, 0.0), 5);
        assert_eq!(idle_allowance(3, -10.0), 7);
    }

    #[test]
    fn maxweight_examples() {
        let g = MatchingGraph::new(1, 1, vec![p(0, 0)], vec![p(0, 0)], 4).unwrap();
        assert_eq!(h_maxweight_decide(&g, &[1.0, 1.0], &[3, 3]).counts, vec![3]);
        assert!(h_maxweight_decide(&g, &[1.0, 1.0], &[0, 0]).is_zero());
        let g = path2();
        let c = [1.0, 2.0, 3.0, 4.0];
        let c2: Vec<f64> = c.iter().map(|v| 2.0 * v).collect();
        for x in [[2u32, 3, 4, 1], [5, 0, 1, 4], [1, 1, 2, 0]] {
            assert_eq!(h_maxweight_decide(&g, &c, &x), h_maxweight_decide(&g, &c2, &x));
            let grad: Vec<f64> = c.iter().zip(&x).map(|(w, &v)| 2.0 * w * v as f64).collect();
            assert_eq!(h_maxweight_decide(&g, &c, &x), oracle_best(&g, &x, &grad, |_| true));
        }
    }

    #[test]
    fn greedy_examples() {
        let g = path2();
        // c = (1,1,1,2): x_s1 c_s1 = 3, x_s2 c_s2 = 8
        let w = [1.0, 1.0, 1.0, 2.0];
        let u = greedy_maxweight_decide(&g, &w, &[0, 5, 3, 4], p(1, 1));
        assert_eq!(u.counts, vec![0, 0, 1]);
        // arriving supply s2 consumed by the arriving demand; nothing else happens
        let u = greedy_maxweight_decide(&g, &w, &[0, 1, 0, 1], p(1, 1));
        assert_eq!(u.counts, vec![0, 0, 1]);
        // tie between s1 and s2 goes to s1
        let u = greedy_maxweight_decide(&g, &[1.0; 4], &[0, 1, 2, 2], p(1, 1));
        assert_eq!(u.counts[1], 1);
        // arriving demand d1 with no supply queued, arriving supply s2 pairs with queued d2
        let u = greedy_maxweight_decide(&g, &[1.0; 4], &[1, 1, 0, 2], p(0, 1));
        assert_eq!(u.counts, vec![0, 0, 1]);
        let g1 = MatchingGraph::new(2, 2, vec![p(0, 0), p(1, 1), p(1, 0)], vec![p(0, 1)], 4).unwrap();
        assert!(greedy_maxweight_decide(&g1, &[1.0; 4], &[1, 0, 0, 1], p(0, 1)).is_zero());
    }

    #[test]
    fn priority_examples() {
        let g = path2();
        let pol = Policy::priority(&g, vec![0, 2, 1]).unwrap();
        let Policy::Priority { order } = &pol else { unreachable!() };
        assert_eq!(priority_decide(&g, order, &[1, 0, 1, 0], p(0, 0)).counts, vec![1, 0, 0]);
        // (d2,s2) comes first but s2 is empty, so d2 falls to (d2,s1)
        assert_eq!(priority_decide(&g, order, &[0, 1, 1, 0], p(1, 0)).counts, vec![0, 1, 0]);
        let g2 = MatchingGraph::new(2, 2, vec![p(0, 0), p(1, 0), p(1, 1)], vec![p(0, 0), p(1, 0), p(1, 1), p(0, 1)], 4).unwrap();
        // d2 takes s2 first, then the arriving s1 takes the queued d1
        assert_eq!(priority_decide(&g2, order, &[1, 1, 1, 1], p(1, 0)).counts, vec![1, 0, 1]);
        assert_eq!(priority_decide(&g2, order, &[2, 0, 1, 1], p(0, 0)).counts, vec![1, 0, 0]);
        assert!(priority_decide(&g2, order, &[1, 0, 0, 1], p(0, 1)).is_zero());
        assert!(Policy::priority(&g, vec![0, 0, 1]).is_err());
    }

    #[test]
    fn matching_vectors_path2() {
        let g = path2();
        let pol = RandomizedFlowPolicy::new(&g, &[0.4, 0.6, 0.5, 0.5], None).unwrap();
        let v = pol.matching_vectors(&[3, 3, 3, 3], 2).unwrap();
        assert_eq!(v.len(), 2);
        assert!((v[0].1 - 0.8).abs() < 1e-10 && v[0].0 == 0);
        assert!((v[1].1 - 0.2).abs() < 1e-10 && v[1].0 == 1);
        assert_eq!(pol.matching_vectors(&[0, 0, 3, 3], 2), Err(PolicyError::EmptyOppositeSide));
        // only d2 queued: all mass goes to it
        let v = pol.matching_vectors(&[0, 2, 1, 1], 2).unwrap();
        assert_eq!(v, vec![(1, 1.0)]);
    }

    #[test]
    fn matching_vectors_respect_flow_lower_bound() {
        let edges = vec![p(0, 0), p(0, 1), p(1, 1), p(1, 2), p(2, 2), p(2, 0)];
        let g = MatchingGraph::new(3, 3, edges.clone(), edges, 4).unwrap();
        let alpha = [0.3, 0.3, 0.4, 0.35, 0.35, 0.3];
        let pol = RandomizedFlowPolicy::new(&g, &alpha, None).unwrap();
        let comp = &pol.components()[0];
        for q in [[1u32, 1, 1, 1, 1, 1], [0, 2, 1, 1, 0, 2], [3, 0, 0, 1, 1, 1]] {
            for k in 0..6 {
                if let Ok(v) = pol.matching_vectors(&q, k) {
                    let s: f64 = v.iter().map(|(_, pr)| pr).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                    for (partner, pr) in v {
                        let pair = if k < 3 { p(k, partner - 3) } else { p(partner, k - 3) };
                        assert!(pr >= comp.flow.on(&comp.network, pair) / alpha[k] - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn randomized_frequencies_match_vectors() {
        let g = path2();
        let pol = RandomizedFlowPolicy::new(&g, &[0.4, 0.6, 0.5, 0.5], None).unwrap();
        let q = [2u32, 2, 1, 1];
        let a = p(1, 0);
        let mut x = q;
        x[1] += 1;
        x[2] += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut supply_to_d1 = 0usize;
        let mut demand_to_s1 = 0usize;
        for _ in 0..n {
            let u = pol.decide(&g, &x, a, &mut rng);
            assert!(u.is_feasible(&g, &x));
            supply_to_d1 += u.counts[0] as usize;
            demand_to_s1 += u.counts[1] as usize;
        }
        // demand arrival d2: partners s1, s2 ; supply arrival s1: partners d1, d2
        let vs = pol.matching_vectors(&q, 2).unwrap();
        let vd = pol.matching_vectors(&q, 1).unwrap();
        let pd1 = vs.iter().find(|(k, _)| *k == 0).unwrap().1;
        let ps1 = vd.iter().find(|(k, _)| *k == 2).unwrap().1;
        let pd2 = 1.0 - pd1;
        // edge (d2,s1) counts both the demand draw of s1 and the supply draw of d2
        let f1 = supply_to_d1 as f64 / n as f64;
        assert!((f1 - pd1).abs() < 4.0 * (pd1 * (1.0 - pd1) / n as f64).sqrt());
        let mean = demand_to_s1 as f64 / n as f64;
        let expect = ps1 + pd2;
        let var = ps1 * (1.0 - ps1) + pd2 * (1.0 - pd2);
        assert!((mean - expect).abs() < 4.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn split_mode_never_crosses() {
        let edges = vec![p(0, 0), p(1, 0), p(1, 1)];
        let g = MatchingGraph::new(2, 2, edges.clone(), edges, 4).unwrap();
        let d = DemandSet::new(vec![0]);
        let pol = RandomizedFlowPolicy::new(&g, &[0.4, 0.6, 0.5, 0.5], Some(&d)).unwrap();
        assert_eq!(pol.components().len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for a in [p(0, 0), p(1, 0), p(1, 1)] {
            for _ in 0..200 {
                let u = pol.decide(&g, &[3, 3, 3, 3], a, &mut rng);
                assert_eq!(u.counts[1], 0);
            }
        }
        // throughputs: d1 saturated at 0.4 through s1, s2 saturated at 0.5 through d2
        assert!((pol.throughput(0) - 0.4).abs() < 1e-10);
        assert!((pol.throughput(3) - 0.5).abs() < 1e-10);
        let b = pol.drift_bounds(&[1, 1, 1, 1]);
        assert!((b[2] - (1.0 + 0.1)).abs() < 1e-10);
        assert!((b[1] - (1.0 + 0.1)).abs() < 1e-10);
    }
}
