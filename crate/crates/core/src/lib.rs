//! Control and simulation of dynamic bipartite matching networks through a
//! one-dimensional workload relaxation.
//!
//! The crate covers the matching model itself ([`graph`], [`arrivals`]), the
//! effective cost and relaxation ([`effective_cost`], [`relaxation`]), the
//! value function behind the h-MWT policy ([`value_function`]), flow-based
//! randomized policies ([`flows`], [`policies`]), a Monte-Carlo engine
//! ([`simulator`]) and brute-force value iteration for small instances
//! ([`oracle`]).

pub mod arrivals;
pub mod effective_cost;
pub mod flows;
pub mod graph;
pub mod instances;
pub mod oracle;
pub mod policies;
pub mod relaxation;
pub mod simulator;
pub mod stats;
pub mod value_function;
