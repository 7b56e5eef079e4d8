//! Ready-made instances used by tests, the acceptance suite and the CLI
//! configs.

use crate::arrivals::{build_distribution, ArrivalDistribution};
use crate::effective_cost::CostVector;
use crate::graph::{DemandSet, MatchingGraph, Pair};

#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: MatchingGraph,
    pub arrivals: ArrivalDistribution,
    pub cost: CostVector,
    /// Designated demand set of the workload relaxation.
    pub demand_set: DemandSet,
}

/// One demand class, one supply class, one edge.
pub fn single_edge() -> Instance {
    let e = Pair::new(0, 0);
    let graph = MatchingGraph::new(1, 1, vec![e], vec![e], 4).expect("valid graph");
    let arrivals = build_distribution(&graph, &[(e, 1.0)]).expect("valid arrivals");
    let cost = CostVector::new(&graph, vec![1.0, 1.0]).expect("valid cost");
    Instance {
        graph,
        arrivals,
        cost,
        demand_set: DemandSet::new(vec![0]),
    }
}

/// The path `d1 - s1 - d2 - s2` with arrivals on the edges, drift 0.1 for
/// `D = {d1}`.
pub fn path2() -> Instance {
    let edges = vec![Pair::new(0, 0), Pair::new(1, 0), Pair::new(1, 1)];
    let graph = MatchingGraph::new(2, 2, edges.clone(), edges.clone(), 4).expect("valid graph");
    let arrivals =
        build_distribution(&graph, &[(edges[0], 0.4), (edges[1], 0.1), (edges[2], 0.5)]).expect("valid arrivals");
    let cost = CostVector::new(&graph, vec![1.0, 2.0, 3.0, 4.0]).expect("valid cost");
    Instance {
        graph,
        arrivals,
        cost,
        demand_set: DemandSet::new(vec![0]),
    }
}

/// Edges of the NN network: `d1-s1, d2-s1, d2-s2, d3-s2, d3-s3`.
pub fn nn_edges() -> Vec<Pair> {
    vec![
        Pair::new(0, 0),
        Pair::new(1, 0),
        Pair::new(1, 1),
        Pair::new(2, 1),
        Pair::new(2, 2),
    ]
}

/// Edge indices of the vertical matches `d1-s1, d2-s2, d3-s3` followed by
/// the diagonal ones.
pub const NN_VERTICAL_PRIORITY: [usize; 5] = [0, 2, 4, 1, 3];

/// Demand and supply marginals of the default NN arrivals.
pub const NN_DEMAND_RATES: [f64; 3] = [0.3, 0.3, 0.4];
pub const NN_SUPPLY_RATES: [f64; 3] = [0.593, 0.2, 0.207];

/// The NN network with independent demand and supply arrivals drawn from
/// the given marginals, every demand/supply pair being an arrival pair.
pub fn nn_with_rates(demand: [f64; 3], supply: [f64; 3]) -> Instance {
    let mut pairs = Vec::new();
    for (i, &pd) in demand.iter().enumerate() {
        for (j, &ps) in supply.iter().enumerate() {
            pairs.push((Pair::new(i, j), pd * ps));
        }
    }
    let arrival_pairs: Vec<Pair> = pairs.iter().map(|&(p, _)| p).collect();
    let graph = MatchingGraph::new(3, 3, nn_edges(), arrival_pairs, 4).expect("valid graph");
    let arrivals = build_distribution(&graph, &pairs).expect("valid arrivals");
    let cost = CostVector::new(&graph, vec![1.0, 2.0, 3.0, 3.0, 2.0, 1.0]).expect("valid cost");
    Instance {
        graph,
        arrivals,
        cost,
        demand_set: DemandSet::new(vec![2]),
    }
}

/// The NN network with its default arrivals (drift 0.007 for `D = {d3}`).
pub fn nn() -> Instance {
    nn_with_rates(NN_DEMAND_RATES, NN_SUPPLY_RATES)
}
