//! Max flows on arrival-rate capacitated bipartite networks.

use std::collections::VecDeque;

use thiserror::Error;

use crate::graph::{DemandSet, MatchingGraph, Pair, MAX_DEMAND_CLASSES};

const EPS: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("rate condition fails on the restricted network (gap {gap})")]
    NCondViolated { gap: f64 },
    #[error("restricted network is empty or disconnected")]
    DisconnectedRestriction,
    #[error("rate vector has length {found}, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("restricted network has {0} nodes on the saturated side; at most {MAX_DEMAND_CLASSES} supported")]
    TooLarge(usize),
}

/// Source `a` feeds demand nodes, demand nodes reach adjacent supply nodes
/// through uncapacitated arcs, and supply nodes drain into sink `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetwork {
    /// Demand classes, in node order.
    pub demand: Vec<usize>,
    /// Supply classes, in node order.
    pub supply: Vec<usize>,
    pub demand_cap: Vec<f64>,
    pub supply_cap: Vec<f64>,
    /// Middle arcs as class pairs.
    pub edges: Vec<Pair>,
}

impl FlowNetwork {
    /// The network on `demand` and its supply neighbourhood, with every
    /// edge leaving `demand`.
    pub fn restricted(
        g: &MatchingGraph,
        demand: &[usize],
        alpha: &[f64],
    ) -> Result<Self, FlowError> {
        check_len(g, alpha)?;
        let mut demand = demand.to_vec();
        demand.sort_unstable();
        demand.dedup();
        let supply = g.supply_neighborhood(&demand);
        let edges = g
            .edges()
            .iter()
            .copied()
            .filter(|e| demand.contains(&e.demand))
            .collect();
        Ok(Self::from_parts(g, demand, supply, edges, alpha))
    }

    /// The network on the demand complement of `d` and the supply classes
    /// outside its neighbourhood, with the edges between them.
    pub fn complement(g: &MatchingGraph, d: &DemandSet, alpha: &[f64]) -> Result<Self, FlowError> {
        check_len(g, alpha)?;
        let s = g.supply_neighborhood(d.members());
        let demand: Vec<usize> = (0..g.n_demand()).filter(|&i| !d.contains(i)).collect();
        let supply: Vec<usize> = (0..g.n_supply()).filter(|j| !s.contains(j)).collect();
        let edges = g
            .edges()
            .iter()
            .copied()
            .filter(|e| demand.contains(&e.demand) && supply.contains(&e.supply))
            .collect();
        Ok(Self::from_parts(g, demand, supply, edges, alpha))
    }

    fn from_parts(
        g: &MatchingGraph,
        demand: Vec<usize>,
        supply: Vec<usize>,
        edges: Vec<Pair>,
        alpha: &[f64],
    ) -> Self {
        let demand_cap = demand.iter().map(|&i| alpha[i]).collect();
        let supply_cap = supply.iter().map(|&j| alpha[g.supply_index(j)]).collect();
        Self {
            demand,
            supply,
            demand_cap,
            supply_cap,
            edges,
        }
    }

    fn demand_pos(&self, i: usize) -> usize {
        self.demand.iter().position(|&d| d == i).expect("edge endpoint in network")
    }

    fn supply_pos(&self, j: usize) -> usize {
        self.supply.iter().position(|&s| s == j).expect("edge endpoint in network")
    }

    /// Whether the undirected middle graph is connected and non-empty.
    pub fn is_connected(&self) -> bool {
        let (nd, ns) = (self.demand.len(), self.supply.len());
        if nd == 0 || ns == 0 {
            return false;
        }
        let mut seen = vec![false; nd + ns];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(k) = queue.pop_front() {
            for e in &self.edges {
                let (a, b) = (self.demand_pos(e.demand), nd + self.supply_pos(e.supply));
                let other = if a == k {
                    b
                } else if b == k {
                    a
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    queue.push_back(other);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    fn transposed(&self) -> Self {
        Self {
            demand: self.supply.clone(),
            supply: self.demand.clone(),
            demand_cap: self.supply_cap.clone(),
            supply_cap: self.demand_cap.clone(),
            edges: self.edges.iter().map(|e| Pair::new(e.supply, e.demand)).collect(),
        }
    }
}

fn check_len(g: &MatchingGraph, alpha: &[f64]) -> Result<(), FlowError> {
    if alpha.len() != g.dim() {
        return Err(FlowError::ShapeMismatch {
            expected: g.dim(),
            found: alpha.len(),
        });
    }
    Ok(())
}

/// A flow, given on every arc of its network.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    /// Flow on each middle arc, aligned with `FlowNetwork::edges`.
    pub edge_flow: Vec<f64>,
    /// Flow on each source arc, aligned with `FlowNetwork::demand`.
    pub source_flow: Vec<f64>,
    /// Flow on each sink arc, aligned with `FlowNetwork::supply`.
    pub sink_flow: Vec<f64>,
    pub value: f64,
}

impl Flow {
    /// Checks non-negativity, capacities, conservation at every inner node
    /// and the value identity, all to `tol`.
    pub fn is_valid(&self, net: &FlowNetwork, tol: f64) -> bool {
        if self.edge_flow.len() != net.edges.len()
            || self.source_flow.len() != net.demand.len()
            || self.sink_flow.len() != net.supply.len()
        {
            return false;
        }
        let all = self.edge_flow.iter().chain(&self.source_flow).chain(&self.sink_flow);
        if all.clone().any(|&f| f < -tol || !f.is_finite()) {
            return false;
        }
        let mut out_of_demand = vec![0.0; net.demand.len()];
        let mut into_supply = vec![0.0; net.supply.len()];
        for (e, &f) in net.edges.iter().zip(&self.edge_flow) {
            out_of_demand[net.demand_pos(e.demand)] += f;
            into_supply[net.supply_pos(e.supply)] += f;
        }
        let caps_ok = self
            .source_flow
            .iter()
            .zip(&net.demand_cap)
            .chain(self.sink_flow.iter().zip(&net.supply_cap))
            .all(|(f, c)| *f <= c + tol);
        let conserved = out_of_demand
            .iter()
            .zip(&self.source_flow)
            .chain(into_supply.iter().zip(&self.sink_flow))
            .all(|(a, b)| (a - b).abs() <= tol);
        let v_in: f64 = self.source_flow.iter().sum();
        let v_out: f64 = self.sink_flow.iter().sum();
        caps_ok && conserved && (v_in - self.value).abs() <= tol && (v_out - self.value).abs() <= tol
    }

    pub fn min_edge_flow(&self) -> f64 {
        self.edge_flow.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Flow on the middle arc `pair`, zero if absent.
    pub fn on(&self, net: &FlowNetwork, pair: Pair) -> f64 {
        net.edges
            .iter()
            .position(|e| *e == pair)
            .map_or(0.0, |k| self.edge_flow[k])
    }

    fn transposed(&self) -> Self {
        Self {
            edge_flow: self.edge_flow.clone(),
            source_flow: self.sink_flow.clone(),
            sink_flow: self.source_flow.clone(),
            value: self.value,
        }
    }
}

struct Arc {
    to: usize,
    cap: f64,
    rev: usize,
}

/// Maximum source-to-sink flow by shortest augmenting paths.
pub fn max_flow(net: &FlowNetwork) -> Flow {
    let nd = net.demand.len();
    let ns = net.supply.len();
    let (source, sink) = (0, nd + ns + 1);
    let mut adj: Vec<Vec<Arc>> = (0..nd + ns + 2).map(|_| Vec::new()).collect();
    let add = |adj: &mut Vec<Vec<Arc>>, u: usize, v: usize, cap: f64| -> (usize, usize) {
        let (ru, rv) = (adj[v].len(), adj[u].len());
        adj[u].push(Arc { to: v, cap, rev: ru });
        adj[v].push(Arc { to: u, cap: 0.0, rev: rv });
        (u, rv)
    };
    let src_arcs: Vec<_> = (0..nd).map(|k| add(&mut adj, source, 1 + k, net.demand_cap[k])).collect();
    let mid_arcs: Vec<_> = net
        .edges
        .iter()
        .map(|e| {
            let u = 1 + net.demand_pos(e.demand);
            let v = 1 + nd + net.supply_pos(e.supply);
            add(&mut adj, u, v, f64::INFINITY)
        })
        .collect();
    let sink_arcs: Vec<_> = (0..ns).map(|k| add(&mut adj, 1 + nd + k, sink, net.supply_cap[k])).collect();
    let original: Vec<Vec<f64>> = adj.iter().map(|a| a.iter().map(|x| x.cap).collect()).collect();

    loop {
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; adj.len()];
        let mut queue = VecDeque::from([source]);
        let mut reached = false;
        'bfs: while let Some(u) = queue.pop_front() {
            for (k, arc) in adj[u].iter().enumerate() {
                if arc.cap > EPS && prev[arc.to].is_none() && arc.to != source {
                    prev[arc.to] = Some((u, k));
                    if arc.to == sink {
                        reached = true;
                        break 'bfs;
                    }
                    queue.push_back(arc.to);
                }
            }
        }
        if !reached {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = sink;
        while let Some((u, k)) = prev[v] {
            bottleneck = bottleneck.min(adj[u][k].cap);
            v = u;
        }
        let mut v = sink;
        while let Some((u, k)) = prev[v] {
            adj[u][k].cap -= bottleneck;
            let r = adj[u][k].rev;
            adj[v][r].cap += bottleneck;
            v = u;
        }
    }

    let used = |(u, k): (usize, usize)| -> f64 {
        if original[u][k].is_infinite() {
            // flow on an uncapacitated arc is the reverse residual
            let arc = &adj[u][k];
            adj[arc.to][arc.rev].cap
        } else {
            (original[u][k] - adj[u][k].cap).max(0.0)
        }
    };
    let source_flow: Vec<f64> = src_arcs.into_iter().map(used).collect();
    Flow {
        edge_flow: mid_arcs.into_iter().map(used).collect(),
        value: source_flow.iter().sum(),
        source_flow,
        sink_flow: sink_arcs.into_iter().map(used).collect(),
    }
}

/// Which side of the network a flow must saturate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Demand,
    Supply,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositiveFlow {
    pub network: FlowNetwork,
    pub flow: Flow,
    /// Smallest middle-arc flow.
    pub gamma: f64,
    /// Uniform base flow placed on every middle arc.
    pub nu: f64,
}

/// Smallest slack `cap(N(L')) - cap(L')` over proper non-empty subsets of
/// the saturated side, and the total slack.
fn subset_gap(net: &FlowNetwork) -> Result<(f64, f64), FlowError> {
    let n = net.demand.len();
    if n > MAX_DEMAND_CLASSES {
        return Err(FlowError::TooLarge(n));
    }
    let slack = |mask: u64| -> f64 {
        let mut hit = vec![false; net.supply.len()];
        let mut load = 0.0;
        for k in 0..n {
            if mask >> k & 1 == 1 {
                load += net.demand_cap[k];
                for e in net.edges.iter().filter(|e| e.demand == net.demand[k]) {
                    hit[net.supply_pos(e.supply)] = true;
                }
            }
        }
        let cap: f64 = (0..net.supply.len()).filter(|&s| hit[s]).map(|s| net.supply_cap[s]).sum();
        cap - load
    };
    let gap = (1..(1u64 << n) - 1).map(slack).fold(f64::INFINITY, f64::min);
    Ok((gap, slack((1u64 << n) - 1)))
}

/// A flow saturating `side` with strictly positive flow on every middle arc.
///
/// A uniform flow `nu` is placed on every arc and the rest is routed by a
/// max flow on the reduced capacities, rescaled so that capacities add up.
pub fn positive_flow(
    net: &FlowNetwork,
    side: Side,
    delta_lower: Option<f64>,
) -> Result<PositiveFlow, FlowError> {
    if side == Side::Supply {
        let mut r = positive_flow(&net.transposed(), Side::Demand, delta_lower)?;
        r.network = net.clone();
        r.flow = r.flow.transposed();
        return Ok(r);
    }
    if !net.is_connected() {
        return Err(FlowError::DisconnectedRestriction);
    }
    let (gap, total_slack) = subset_gap(net)?;
    let min_cap = net
        .demand_cap
        .iter()
        .chain(&net.supply_cap)
        .copied()
        .fold(f64::INFINITY, f64::min);
    if gap <= 0.0 || total_slack < -1e-12 || min_cap <= 0.0 {
        return Err(FlowError::NCondViolated {
            gap: gap.min(total_slack).min(min_cap),
        });
    }
    let m = net.edges.len() as f64;
    let dl = delta_lower.unwrap_or(gap).min(gap);
    let target: f64 = net.demand_cap.iter().sum();
    let mut nu = (0.5 * dl).min(min_cap) / m;
    for _ in 0..60 {
        let scale = 1.0 - m * nu;
        let base = vec![nu; net.edges.len()];
        let deg = |k: usize, supply_side: bool| -> f64 {
            net.edges
                .iter()
                .filter(|e| {
                    if supply_side {
                        e.supply == net.supply[k]
                    } else {
                        e.demand == net.demand[k]
                    }
                })
                .count() as f64
        };
        let edge_flow: Vec<f64> = if scale <= 1e-12 {
            base
        } else {
            let reduced = FlowNetwork {
                demand_cap: (0..net.demand.len())
                    .map(|k| ((net.demand_cap[k] - deg(k, false) * nu) / scale).max(0.0))
                    .collect(),
                supply_cap: (0..net.supply.len())
                    .map(|k| ((net.supply_cap[k] - deg(k, true) * nu) / scale).max(0.0))
                    .collect(),
                ..net.clone()
            };
            let rest = max_flow(&reduced);
            let want: f64 = reduced.demand_cap.iter().sum();
            if rest.value < want - 1e-12 * want.max(1.0) {
                nu *= 0.5;
                continue;
            }
            base.iter().zip(&rest.edge_flow).map(|(b, f)| b + scale * f).collect()
        };
        let flow = assemble(net, edge_flow);
        if (flow.value - target).abs() > 1e-10 * target.max(1.0) {
            nu *= 0.5;
            continue;
        }
        let gamma = flow.min_edge_flow();
        return Ok(PositiveFlow {
            network: net.clone(),
            flow,
            gamma,
            nu,
        });
    }
    Err(FlowError::NCondViolated { gap })
}

fn assemble(net: &FlowNetwork, edge_flow: Vec<f64>) -> Flow {
    let mut source_flow = vec![0.0; net.demand.len()];
    let mut sink_flow = vec![0.0; net.supply.len()];
    for (e, &f) in net.edges.iter().zip(&edge_flow) {
        source_flow[net.demand_pos(e.demand)] += f;
        sink_flow[net.supply_pos(e.supply)] += f;
    }
    Flow {
        value: source_flow.iter().sum(),
        edge_flow,
        source_flow,
        sink_flow,
    }
}

/// Strictly positive flow of value `alpha_D` on `demand` and its supply
/// neighbourhood.
pub fn strictly_positive_flow(
    g: &MatchingGraph,
    demand: &[usize],
    alpha: &[f64],
    delta_lower: Option<f64>,
) -> Result<PositiveFlow, FlowError> {
    let net = FlowNetwork::restricted(g, demand, alpha)?;
    positive_flow(&net, Side::Demand, delta_lower)
}
