//! Bipartite matching graph, buffer states, matching decisions and workload
//! vectors.
//!
//! Classes are addressed by a single global index `k in 0..dim()`: demand
//! class `i` is `k = i` and supply class `j` is `k = n_demand + j`.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

/// Exhaustive subset enumeration is refused above this many demand classes.
pub const MAX_DEMAND_CLASSES: usize = 20;

/// A (demand, supply) class pair: either a matching edge or an arrival pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub demand: usize,
    pub supply: usize,
}

impl Pair {
    pub const fn new(demand: usize, supply: usize) -> Self {
        Self { demand, supply }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(d{},s{})", self.demand + 1, self.supply + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("matching graph is disconnected; isolated component: {}", .component.join(", "))]
    DisconnectedGraph { component: Vec<String> },
    #[error("class index out of range in pair {pair}")]
    IndexOutOfRange { pair: Pair },
    #[error("matching graph has no edges")]
    EmptyEdgeSet,
    #[error("no arrival pairs given")]
    EmptyArrivalSet,
    #[error("duplicate pair {0}")]
    DuplicatePair(Pair),
    #[error("graph needs at least one demand and one supply class")]
    NoClasses,
    #[error("max_matches must be at least 4, got {0}")]
    MaxMatchesTooSmall(usize),
    #[error("demand subset must be non-empty and proper")]
    EmptyOrFullSubset,
    #[error("demand index {0} out of range")]
    SubsetIndexOutOfRange(usize),
    #[error("subset enumeration supports at most {MAX_DEMAND_CLASSES} demand classes, got {0}")]
    TooManyDemandClasses(usize),
    #[error("vector has length {found}, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("arrival-rate vector is not normalized: demand total {demand}, supply total {supply}")]
    AlphaNotNormalized { demand: f64, supply: f64 },
    #[error("arrival-rate vector has a negative or non-finite entry")]
    AlphaInvalidEntry,
    #[error("state violates the balance constraint (demand total {demand}, supply total {supply})")]
    Unbalanced { demand: u64, supply: u64 },
    #[error("decision has {found} edge counts, graph has {expected} edges")]
    DecisionShape { expected: usize, found: usize },
    #[error("decision uses {total} matches, limit is {limit}")]
    TooManyMatches { total: u32, limit: usize },
    #[error("decision is infeasible: class {class} would go negative")]
    InfeasibleDecision { class: usize },
    #[error("arrival {0} is not an arrival pair of the graph")]
    InvalidArrival(Pair),
}

/// The matching graph together with its arrival pairs and the per-slot
/// match budget.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingGraph {
    n_demand: usize,
    n_supply: usize,
    edges: Vec<Pair>,
    arrival_pairs: Vec<Pair>,
    max_matches: usize,
    // adjacency, indexed by local class index
    demand_adj: Vec<Vec<usize>>,
    supply_adj: Vec<Vec<usize>>,
}

impl MatchingGraph {
    /// Builds and validates a graph.
    pub fn new(
        n_demand: usize,
        n_supply: usize,
        edges: Vec<Pair>,
        arrival_pairs: Vec<Pair>,
        max_matches: usize,
    ) -> Result<Self, GraphError> {
        let mut demand_adj = vec![Vec::new(); n_demand];
        let mut supply_adj = vec![Vec::new(); n_supply];
        for e in &edges {
            if e.demand < n_demand && e.supply < n_supply {
                demand_adj[e.demand].push(e.supply);
                supply_adj[e.supply].push(e.demand);
            }
        }
        for adj in demand_adj.iter_mut().chain(supply_adj.iter_mut()) {
            adj.sort_unstable();
        }
        let g = Self {
            n_demand,
            n_supply,
            edges,
            arrival_pairs,
            max_matches,
            demand_adj,
            supply_adj,
        };
        validate_graph(&g)?;
        Ok(g)
    }

    pub fn n_demand(&self) -> usize {
        self.n_demand
    }

    pub fn n_supply(&self) -> usize {
        self.n_supply
    }

    /// Number of buffers, `n_demand + n_supply`.
    pub fn dim(&self) -> usize {
        self.n_demand + self.n_supply
    }

    pub fn edges(&self) -> &[Pair] {
        &self.edges
    }

    pub fn arrival_pairs(&self) -> &[Pair] {
        &self.arrival_pairs
    }

    pub fn max_matches(&self) -> usize {
        self.max_matches
    }

    /// Global buffer index of supply class `j`.
    pub fn supply_index(&self, j: usize) -> usize {
        self.n_demand + j
    }

    /// Supply classes adjacent to demand class `i`.
    pub fn supply_neighbors(&self, i: usize) -> &[usize] {
        &self.demand_adj[i]
    }

    /// Demand classes adjacent to supply class `j`.
    pub fn demand_neighbors(&self, j: usize) -> &[usize] {
        &self.supply_adj[j]
    }

    pub fn edge_index(&self, pair: Pair) -> Option<usize> {
        self.edges.iter().position(|e| *e == pair)
    }

    pub fn is_arrival_pair(&self, pair: Pair) -> bool {
        self.arrival_pairs.contains(&pair)
    }

    /// Supply neighbourhood of a set of demand classes, sorted.
    pub fn supply_neighborhood(&self, demand: &[usize]) -> Vec<usize> {
        let mut hit = vec![false; self.n_supply];
        for &i in demand {
            for &j in &self.demand_adj[i] {
                hit[j] = true;
            }
        }
        (0..self.n_supply).filter(|&j| hit[j]).collect()
    }

    /// Demand neighbourhood of a set of supply classes, sorted.
    pub fn demand_neighborhood(&self, supply: &[usize]) -> Vec<usize> {
        let mut hit = vec![false; self.n_demand];
        for &j in supply {
            for &i in &self.supply_adj[j] {
                hit[i] = true;
            }
        }
        (0..self.n_demand).filter(|&i| hit[i]).collect()
    }

    /// Human-readable class label (`d1`, `s3`, ...) for a global index.
    pub fn class_label(&self, k: usize) -> String {
        if k < self.n_demand {
            format!("d{}", k + 1)
        } else {
            format!("s{}", k - self.n_demand + 1)
        }
    }

    /// The balance vector: +1 on demand buffers, -1 on supply buffers.
    pub fn balance_vector(&self) -> Vec<i8> {
        let mut v = vec![1i8; self.n_demand];
        v.extend(std::iter::repeat_n(-1i8, self.n_supply));
        v
    }
}

/// Checks every structural invariant of a matching graph.
pub fn validate_graph(g: &MatchingGraph) -> Result<(), GraphError> {
    if g.n_demand == 0 || g.n_supply == 0 {
        return Err(GraphError::NoClasses);
    }
    if g.edges.is_empty() {
        return Err(GraphError::EmptyEdgeSet);
    }
    if g.arrival_pairs.is_empty() {
        return Err(GraphError::EmptyArrivalSet);
    }
    for list in [&g.edges, &g.arrival_pairs] {
        for (n, p) in list.iter().enumerate() {
            if p.demand >= g.n_demand || p.supply >= g.n_supply {
                return Err(GraphError::IndexOutOfRange { pair: *p });
            }
            if list[..n].contains(p) {
                return Err(GraphError::DuplicatePair(*p));
            }
        }
    }
    if g.max_matches < 4 {
        return Err(GraphError::MaxMatchesTooSmall(g.max_matches));
    }

    // BFS from d1 over the undirected graph.
    let dim = g.dim();
    let mut seen = vec![false; dim];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(k) = queue.pop_front() {
        let next: Vec<usize> = if k < g.n_demand {
            g.demand_adj[k].iter().map(|&j| g.n_demand + j).collect()
        } else {
            g.supply_adj[k - g.n_demand].clone()
        };
        for m in next {
            if !seen[m] {
                seen[m] = true;
                queue.push_back(m);
            }
        }
    }
    if let Some(start) = seen.iter().position(|s| !s) {
        // report the component that does not contain d1
        let mut comp = vec![false; dim];
        let mut queue = VecDeque::from([start]);
        comp[start] = true;
        while let Some(k) = queue.pop_front() {
            let next: Vec<usize> = if k < g.n_demand {
                g.demand_adj[k].iter().map(|&j| g.n_demand + j).collect()
            } else {
                g.supply_adj[k - g.n_demand].clone()
            };
            for m in next {
                if !comp[m] {
                    comp[m] = true;
                    queue.push_back(m);
                }
            }
        }
        let component = (0..dim).filter(|&k| comp[k]).map(|k| g.class_label(k)).collect();
        return Err(GraphError::DisconnectedGraph { component });
    }
    Ok(())
}

/// A set of demand classes, kept sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DemandSet(Vec<usize>);

impl DemandSet {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self(members)
    }

    /// Subset encoded by the low bits of `mask`.
    pub fn from_mask(mask: u64, n_demand: usize) -> Self {
        Self((0..n_demand).filter(|&i| mask >> i & 1 == 1).collect())
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for DemandSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(|i| format!("d{}", i + 1)).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// Non-negative integer buffer levels satisfying the balance constraint.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateVector(Vec<u32>);

impl StateVector {
    pub fn new(g: &MatchingGraph, levels: Vec<u32>) -> Result<Self, GraphError> {
        if levels.len() != g.dim() {
            return Err(GraphError::ShapeMismatch {
                expected: g.dim(),
                found: levels.len(),
            });
        }
        let demand: u64 = levels[..g.n_demand].iter().map(|&v| v as u64).sum();
        let supply: u64 = levels[g.n_demand..].iter().map(|&v| v as u64).sum();
        if demand != supply {
            return Err(GraphError::Unbalanced { demand, supply });
        }
        Ok(Self(levels))
    }

    pub fn zeros(g: &MatchingGraph) -> Self {
        Self(vec![0; g.dim()])
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

/// Per-edge match counts for one time slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatchingDecision {
    pub counts: Vec<u32>,
}

impl MatchingDecision {
    pub fn zero(g: &MatchingGraph) -> Self {
        Self {
            counts: vec![0; g.edges().len()],
        }
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.counts.iter().all(|&n| n == 0)
    }

    /// The induced buffer-space vector `u = sum_e n_e (1^i + 1^j)`.
    pub fn induced(&self, g: &MatchingGraph) -> Vec<u32> {
        let mut u = vec![0u32; g.dim()];
        for (e, &n) in g.edges().iter().zip(&self.counts) {
            u[e.demand] += n;
            u[g.supply_index(e.supply)] += n;
        }
        u
    }

    /// Whether the decision respects the budget and `u <= x` componentwise.
    pub fn is_feasible(&self, g: &MatchingGraph, x: &[u32]) -> bool {
        self.counts.len() == g.edges().len()
            && self.total() as usize <= g.max_matches()
            && self.induced(g).iter().zip(x).all(|(u, x)| u <= x)
    }
}

/// Workload vector for a proper demand subset `D`: +1 on `D`, -1 on its
/// supply neighbourhood, 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadVector {
    xi: Vec<i8>,
    demand_set: DemandSet,
    supply_set: Vec<usize>,
}

impl WorkloadVector {
    pub fn xi(&self) -> &[i8] {
        &self.xi
    }

    pub fn demand_set(&self) -> &DemandSet {
        &self.demand_set
    }

    /// The supply neighbourhood of the demand set, as local supply indices.
    pub fn supply_set(&self) -> &[usize] {
        &self.supply_set
    }

    pub fn dot(&self, x: &[u32]) -> i64 {
        self.xi.iter().zip(x).map(|(&c, &v)| c as i64 * v as i64).sum()
    }

    pub fn dot_f64(&self, x: &[f64]) -> f64 {
        self.xi.iter().zip(x).map(|(&c, &v)| c as f64 * v).sum()
    }

    /// Idleness `-xi . u` of a decision: the number of cross-matches between
    /// the supply neighbourhood and the demand complement.
    pub fn idleness(&self, g: &MatchingGraph, u: &MatchingDecision) -> u32 {
        g.edges()
            .iter()
            .zip(&u.counts)
            .filter(|(e, _)| self.is_cross_edge(g, **e))
            .map(|(_, &n)| n)
            .sum()
    }

    /// An edge from the demand complement into the supply neighbourhood.
    pub fn is_cross_edge(&self, g: &MatchingGraph, e: Pair) -> bool {
        self.xi[e.demand] == 0 && self.xi[g.supply_index(e.supply)] == -1
    }
}

/// Builds the workload vector of a proper, non-empty demand subset.
pub fn workload_vector(g: &MatchingGraph, d: &DemandSet) -> Result<WorkloadVector, GraphError> {
    if let Some(&i) = d.members().iter().find(|&&i| i >= g.n_demand()) {
        return Err(GraphError::SubsetIndexOutOfRange(i));
    }
    if d.is_empty() || d.len() == g.n_demand() {
        return Err(GraphError::EmptyOrFullSubset);
    }
    let supply_set = g.supply_neighborhood(d.members());
    let mut xi = vec![0i8; g.dim()];
    for &i in d.members() {
        xi[i] = 1;
    }
    for &j in &supply_set {
        xi[g.supply_index(j)] = -1;
    }
    Ok(WorkloadVector {
        xi,
        demand_set: d.clone(),
        supply_set,
    })
}

/// Outcome of the stabilizability test.
#[derive(Debug, Clone, PartialEq)]
pub struct NCondReport {
    pub satisfied: bool,
    /// A maximizing demand subset when the demand-side test fails.
    pub witness: Option<DemandSet>,
    /// `max_D xi^D . alpha` over proper non-empty demand subsets
    /// (`-inf` when there is a single demand class).
    pub margin: f64,
    /// Supply classes with zero rate whose complement is adjacent to every
    /// demand class; set only when that condition is what fails.
    pub zero_rate_supply: Option<Vec<usize>>,
}

fn check_alpha(g: &MatchingGraph, alpha: &[f64]) -> Result<(), GraphError> {
    if alpha.len() != g.dim() {
        return Err(GraphError::ShapeMismatch {
            expected: g.dim(),
            found: alpha.len(),
        });
    }
    if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(GraphError::AlphaInvalidEntry);
    }
    let demand: f64 = alpha[..g.n_demand()].iter().sum();
    let supply: f64 = alpha[g.n_demand()..].iter().sum();
    if demand <= 0.0 || (demand - supply).abs() > 1e-9 * demand.max(1.0) {
        return Err(GraphError::AlphaNotNormalized { demand, supply });
    }
    Ok(())
}

/// Stabilizability test by exhaustive enumeration of proper demand subsets.
///
/// Supply subsets reduce to demand subsets except when a supply subset is
/// adjacent to every demand class; that case fails only when some supply
/// classes carry zero rate, which is checked directly.
pub fn check_ncond(g: &MatchingGraph, alpha: &[f64]) -> Result<NCondReport, GraphError> {
    check_alpha(g, alpha)?;
    let nd = g.n_demand();
    if nd > MAX_DEMAND_CLASSES {
        return Err(GraphError::TooManyDemandClasses(nd));
    }
    let mut margin = f64::NEG_INFINITY;
    let mut arg: Option<u64> = None;
    for mask in 1..(1u64 << nd) - 1 {
        let d = DemandSet::from_mask(mask, nd);
        let s = g.supply_neighborhood(d.members());
        let value: f64 = d.members().iter().map(|&i| alpha[i]).sum::<f64>()
            - s.iter().map(|&j| alpha[g.supply_index(j)]).sum::<f64>();
        if value > margin {
            margin = value;
            arg = Some(mask);
        }
    }
    let demand_ok = margin < 0.0;

    let positive: Vec<usize> = (0..g.n_supply())
        .filter(|&j| alpha[g.supply_index(j)] > 0.0)
        .collect();
    let zero_rate_supply = if positive.len() < g.n_supply()
        && g.demand_neighborhood(&positive).len() == nd
    {
        Some((0..g.n_supply()).filter(|j| !positive.contains(j)).collect())
    } else {
        None
    };

    let satisfied = demand_ok && zero_rate_supply.is_none();
    Ok(NCondReport {
        satisfied,
        witness: if demand_ok {
            None
        } else {
            arg.map(|m| DemandSet::from_mask(m, nd))
        },
        margin,
        zero_rate_supply,
    })
}

/// Calls `f` with the edge counts of every feasible decision at state `x`:
/// at most `max_matches` matches in total and `u <= x` componentwise.
pub fn for_each_feasible<F: FnMut(&[u32])>(g: &MatchingGraph, x: &[u32], mut f: F) {
    let mut remaining = x.to_vec();
    let mut counts = vec![0u32; g.edges().len()];
    enumerate(g, 0, g.max_matches() as u32, &mut remaining, &mut counts, &mut f);
}

fn enumerate<F: FnMut(&[u32])>(
    g: &MatchingGraph,
    e: usize,
    budget: u32,
    remaining: &mut [u32],
    counts: &mut [u32],
    f: &mut F,
) {
    if e == counts.len() {
        f(counts);
        return;
    }
    let edge = g.edges()[e];
    let (ki, kj) = (edge.demand, g.supply_index(edge.supply));
    let top = budget.min(remaining[ki]).min(remaining[kj]);
    for n in 0..=top {
        counts[e] = n;
        remaining[ki] -= n;
        remaining[kj] -= n;
        enumerate(g, e + 1, budget - n, remaining, counts, f);
        remaining[ki] += n;
        remaining[kj] += n;
    }
    counts[e] = 0;
}

/// All feasible decisions at state `x`, the zero decision first.
pub fn feasible_decisions(g: &MatchingGraph, x: &StateVector) -> Vec<MatchingDecision> {
    let mut out = Vec::new();
    for_each_feasible(g, x.as_slice(), |c| {
        out.push(MatchingDecision { counts: c.to_vec() })
    });
    out
}

/// The buffer-space arrival vector `1^i + 1^j` of an arrival pair.
pub fn arrival_vector(g: &MatchingGraph, a: Pair) -> Vec<u32> {
    let mut v = vec![0u32; g.dim()];
    v[a.demand] += 1;
    v[g.supply_index(a.supply)] += 1;
    v
}

/// One transition `x - u + a`.
pub fn step(
    g: &MatchingGraph,
    x: &StateVector,
    u: &MatchingDecision,
    a: Pair,
) -> Result<StateVector, GraphError> {
    if u.counts.len() != g.edges().len() {
        return Err(GraphError::DecisionShape {
            expected: g.edges().len(),
            found: u.counts.len(),
        });
    }
    if u.total() as usize > g.max_matches() {
        return Err(GraphError::TooManyMatches {
            total: u.total(),
            limit: g.max_matches(),
        });
    }
    if !g.is_arrival_pair(a) {
        return Err(GraphError::InvalidArrival(a));
    }
    let used = u.induced(g);
    let mut next = x.as_slice().to_vec();
    for (k, (v, du)) in next.iter_mut().zip(&used).enumerate() {
        *v = v
            .checked_sub(*du)
            .ok_or(GraphError::InfeasibleDecision { class: k })?;
    }
    next[a.demand] += 1;
    next[g.supply_index(a.supply)] += 1;
    Ok(StateVector(next))
}
