//! TOML experiment configuration and its resolution into library types.
//!
//! Classes are numbered from 1 in configs (`[2, 1]` is the pair `d2-s1`).
//! Vectors indexed by class (cost, initial state, weights) list the demand
//! classes first, then the supply classes.

use std::path::Path;

use matchnet::arrivals::{build_distribution, moments, ArrivalDistribution, ArrivalError, ArrivalFamily, ArrivalMoments};
use matchnet::effective_cost::{slopes, CostError, CostVector, EffectiveCostSlopes};
use matchnet::graph::{workload_vector, DemandSet, GraphError, MatchingGraph, Pair, StateVector, WorkloadVector};
use matchnet::policies::{Policy, PolicyError, RandomizedFlowPolicy};
use matchnet::simulator::{CostBasis, SimConfig};
use matchnet::value_function::{build_params, HParams, Tuning, ValueError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Arrival(#[from] ArrivalError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphConfig,
    pub arrivals: ArrivalsConfig,
    pub cost: CostConfig,
    pub workload: Option<WorkloadConfig>,
    pub policy: Option<PolicyConfig>,
    pub sim: Option<SimSection>,
    /// `sweep` and `compare` each use the first entry of their kind.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub experiment: Vec<ExperimentSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// Number of demand classes.
    pub demand: usize,
    /// Number of supply classes.
    pub supply: usize,
    pub edges: Vec<[usize; 2]>,
    /// Defaults to the edges.
    pub arrival_pairs: Option<Vec<[usize; 2]>>,
    /// Defaults to 4.
    pub max_matches: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairMass {
    pub pair: [usize; 2],
    pub prob: f64,
}

/// Exactly one of the three forms must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalsConfig {
    pub pairs: Option<Vec<PairMass>>,
    /// Demand and supply classes drawn independently; every arrival pair
    /// gets the product of its marginals.
    pub independent: Option<IndependentRates>,
    pub family: Option<FamilyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndependentRates {
    pub demand: Vec<f64>,
    pub supply: Vec<f64>,
}

/// Linear interpolation between two distributions, taken at drift `delta`
/// of the workload direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub endpoint0: Vec<PairMass>,
    pub endpoint1: Vec<PairMass>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Designated demand set.
    #[serde(rename = "D")]
    pub d: Vec<usize>,
    /// Drift every other demand set must stay below (separation check).
    pub delta_lower: Option<f64>,
    /// Required mass of some cross arrival pair.
    pub p_min: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    HMwt,
    Greedy,
    HMaxweight,
    Priority,
    RandomizedFlow,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::HMwt,
        PolicyKind::Greedy,
        PolicyKind::HMaxweight,
        PolicyKind::Priority,
        PolicyKind::RandomizedFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::HMwt => "h-mwt",
            PolicyKind::Greedy => "greedy",
            PolicyKind::HMaxweight => "h-maxweight",
            PolicyKind::Priority => "priority",
            PolicyKind::RandomizedFlow => "randomized-flow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Auto {
    #[serde(rename = "auto")]
    Auto,
}

/// A threshold, or `"auto"` for the diffusion threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Value(f64),
    Auto(Auto),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Row label in comparisons; defaults to the kind.
    pub label: Option<String>,
    /// h-MWT threshold; defaults to `"auto"`.
    pub tau: Option<TauSpec>,
    /// Priority order as edges, every edge exactly once.
    pub order: Option<Vec<[usize; 2]>>,
    /// MaxWeight weights per class; default to the cost vector.
    pub weights: Option<Vec<f64>>,
    /// Randomized flow policy: split the flow at the designated set.
    pub split: Option<bool>,
    pub theta: Option<f64>,
    pub delta_plus: Option<f64>,
    pub beta: Option<f64>,
    pub kappa: Option<f64>,
}

impl PolicyConfig {
    pub fn of_kind(kind: PolicyKind) -> Self {
        Self {
            kind,
            label: None,
            tau: None,
            order: None,
            weights: None,
            split: None,
            theta: None,
            delta_plus: None,
            beta: None,
            kappa: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    fn tuning(&self) -> Tuning {
        let d = Tuning::default();
        Tuning {
            theta: self.theta.unwrap_or(d.theta),
            delta_plus: self.delta_plus.unwrap_or(d.delta_plus),
            beta: self.beta.unwrap_or(d.beta),
            kappa: self.kappa.unwrap_or(d.kappa),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisName {
    Q,
    X,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub horizon: u64,
    /// Defaults to 1% of the horizon.
    pub burn_in: Option<u64>,
    pub seed: u64,
    /// Cost charged on `Q` (after matching, the default) or `X`.
    pub cost_basis: Option<BasisName>,
    pub initial_state: Option<Vec<u32>>,
    pub batches: Option<usize>,
    /// Report the value-function control-variate estimate; defaults to
    /// true when a workload section with positive drift is given.
    pub control_variate: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sweep,
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// Sweep thresholds.
    pub grid: Option<Vec<f64>>,
    /// Read the grid as multiples of the diffusion threshold.
    pub relative: Option<bool>,
    /// Policies to compare.
    pub policies: Option<Vec<PolicyConfig>>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }
}

fn to_pair(p: [usize; 2], g: &GraphConfig) -> Result<Pair, ConfigError> {
    let [i, j] = p;
    if i == 0 || j == 0 || i > g.demand || j > g.supply {
        return invalid(format!(
            "pair [{i}, {j}] out of range (classes are numbered from 1, {} demand and {} supply)",
            g.demand, g.supply
        ));
    }
    Ok(Pair::new(i - 1, j - 1))
}

fn to_pairs(list: &[[usize; 2]], g: &GraphConfig) -> Result<Vec<Pair>, ConfigError> {
    list.iter().map(|&p| to_pair(p, g)).collect()
}

fn to_masses(list: &[PairMass], g: &GraphConfig) -> Result<Vec<(Pair, f64)>, ConfigError> {
    list.iter().map(|m| Ok((to_pair(m.pair, g)?, m.prob))).collect()
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ExperimentConfig,
    pub graph: MatchingGraph,
    pub arrivals: ArrivalDistribution,
    pub family: Option<ArrivalFamily>,
    pub cost: CostVector,
    pub workload: Option<WorkloadVector>,
    pub moments: Option<ArrivalMoments>,
    pub slopes: Option<EffectiveCostSlopes>,
    /// Value function, available when the designated set has positive
    /// drift.
    pub params: Option<HParams>,
}

impl Model {
    pub fn new(config: ExperimentConfig) -> Result<Self, ConfigError> {
        let gc = &config.graph;
        let edges = to_pairs(&gc.edges, gc)?;
        let arrival_pairs = match &gc.arrival_pairs {
            Some(list) => to_pairs(list, gc)?,
            None => edges.clone(),
        };
        let graph = MatchingGraph::new(gc.demand, gc.supply, edges, arrival_pairs, gc.max_matches.unwrap_or(4))?;

        let workload = match &config.workload {
            Some(w) => {
                if w.d.iter().any(|&i| i == 0 || i > gc.demand) {
                    return invalid(format!("workload D {:?} out of range 1..={}", w.d, gc.demand));
                }
                let d = DemandSet::new(w.d.iter().map(|i| i - 1).collect());
                Some(workload_vector(&graph, &d)?)
            }
            None => None,
        };

        let a = &config.arrivals;
        let forms = a.pairs.is_some() as u8 + a.independent.is_some() as u8 + a.family.is_some() as u8;
        if forms != 1 {
            return invalid("arrivals: give exactly one of `pairs`, `independent` or `family`");
        }
        let mut family = None;
        let arrivals = if let Some(pairs) = &a.pairs {
            build_distribution(&graph, &to_masses(pairs, gc)?)?
        } else if let Some(ind) = &a.independent {
            if ind.demand.len() != gc.demand || ind.supply.len() != gc.supply {
                return invalid("arrivals.independent: one rate per demand and per supply class");
            }
            let masses: Vec<(Pair, f64)> = graph
                .arrival_pairs()
                .iter()
                .map(|&p| (p, ind.demand[p.demand] * ind.supply[p.supply]))
                .collect();
            build_distribution(&graph, &masses)?
        } else {
            let f = a.family.as_ref().expect("one form is present");
            let Some(xi) = &workload else {
                return invalid("arrivals.family needs a workload section to measure drift");
            };
            let e0 = build_distribution(&graph, &to_masses(&f.endpoint0, gc)?)?;
            let e1 = build_distribution(&graph, &to_masses(&f.endpoint1, gc)?)?;
            let fam = ArrivalFamily::new(e0, e1, xi)?;
            let dist = fam.at(&graph, f.delta)?;
            family = Some(fam);
            dist
        };

        let cost = CostVector::new(&graph, config.cost.vector.clone())?;
        let mut model = Self {
            graph,
            arrivals,
            family,
            cost,
            moments: None,
            slopes: None,
            params: None,
            workload: None,
            config,
        };
        if let Some(xi) = workload {
            let m = moments(&model.arrivals, &xi);
            let s = slopes(&model.graph, &model.cost, xi.demand_set()).ok();
            let tuning = model.config.policy.as_ref().map_or(Tuning::default(), PolicyConfig::tuning);
            model.params = match s {
                Some(s) if m.delta > 0.0 && m.sigma2_delta > 0.0 => {
                    Some(build_params(m.delta, m.sigma2_delta, &s, &xi, &model.cost, tuning)?)
                }
                _ => None,
            };
            model.moments = Some(m);
            model.slopes = s;
            model.workload = Some(xi);
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::new(ExperimentConfig::load(path)?)
    }

    pub fn demand_set(&self) -> Option<&DemandSet> {
        self.workload.as_ref().map(|xi| xi.demand_set())
    }

    fn require_params(&self, what: &str) -> Result<&HParams, ConfigError> {
        self.params.as_ref().ok_or_else(|| {
            ConfigError::Invalid(format!(
                "{what} needs a workload section whose demand set has positive drift and variance"
            ))
        })
    }

    /// Diffusion threshold of the designated workload.
    pub fn tau_star(&self) -> Result<f64, ConfigError> {
        Ok(self.require_params("the diffusion threshold")?.hhat.tau_star)
    }

    pub fn resolve_tau(&self, tau: Option<TauSpec>) -> Result<f64, ConfigError> {
        match tau {
            Some(TauSpec::Value(t)) if t.is_finite() && t >= 0.0 => Ok(t),
            Some(TauSpec::Value(t)) => invalid(format!("tau must be finite and non-negative, got {t}")),
            None | Some(TauSpec::Auto(_)) => self.tau_star(),
        }
    }

    /// The configured policy, or h-MWT at the diffusion threshold.
    pub fn main_policy(&self) -> PolicyConfig {
        self.config.policy.clone().unwrap_or_else(|| PolicyConfig::of_kind(PolicyKind::HMwt))
    }

    pub fn build_policy(&self, pc: &PolicyConfig) -> Result<Policy, ConfigError> {
        let g = &self.graph;
        let class_vector = |v: &Option<Vec<f64>>| -> Result<Vec<f64>, ConfigError> {
            match v {
                Some(w) if w.len() == g.dim() => Ok(w.clone()),
                Some(w) => invalid(format!("weights have length {}, expected {}", w.len(), g.dim())),
                None => Ok(self.cost.as_slice().to_vec()),
            }
        };
        Ok(match pc.kind {
            PolicyKind::HMwt => {
                let base = self.require_params("h-mwt")?;
                let tau = self.resolve_tau(pc.tau)?;
                let params = if tau == base.hhat.tau_star {
                    base.clone()
                } else {
                    base.with_threshold(tau)?
                };
                Policy::hmwt(params, tau)
            }
            PolicyKind::Greedy => Policy::GreedyMaxWeight {
                weights: class_vector(&pc.weights)?,
            },
            PolicyKind::HMaxweight => Policy::HMaxWeight {
                weights: class_vector(&pc.weights)?,
            },
            PolicyKind::Priority => {
                let order = match &pc.order {
                    Some(list) => to_pairs(list, &self.config.graph)?
                        .into_iter()
                        .map(|p| {
                            g.edge_index(p)
                                .ok_or_else(|| ConfigError::Invalid(format!("priority order names {p}, which is not an edge")))
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                    None => (0..g.edges().len()).collect(),
                };
                Policy::priority(g, order)?
            }
            PolicyKind::RandomizedFlow => {
                let split = if pc.split.unwrap_or(false) {
                    Some(self.demand_set().ok_or_else(|| {
                        ConfigError::Invalid("randomized-flow with split needs a workload section".into())
                    })?)
                } else {
                    None
                };
                Policy::RandomizedFlow(RandomizedFlowPolicy::new(g, &self.arrivals.alpha(), split)?)
            }
        })
    }

    /// Simulation settings for `policy`, with the control variate built
    /// around the policy's threshold.
    pub fn sim_config(&self, policy: Policy) -> Result<SimConfig, ConfigError> {
        let Some(sc) = &self.config.sim else {
            return invalid("this command needs a [sim] section");
        };
        let tau = match &policy {
            Policy::HMwt(h) => Some(h.tau),
            _ => None,
        };
        let hhat = match &policy {
            Policy::HMwt(h) => Some(h.params.hhat),
            _ => self.params.as_ref().map(|p| p.hhat),
        };
        let mut cfg = SimConfig::new(
            self.graph.clone(),
            self.arrivals.clone(),
            self.cost.clone(),
            policy,
            sc.horizon,
            sc.seed,
        );
        cfg.burn_in = sc.burn_in;
        cfg.cost_basis = match sc.cost_basis.unwrap_or(BasisName::Q) {
            BasisName::Q => CostBasis::Q,
            BasisName::X => CostBasis::X,
        };
        if let Some(q0) = &sc.initial_state {
            cfg.initial_state = Some(StateVector::new(&self.graph, q0.clone())?);
        }
        if let Some(b) = sc.batches {
            cfg.batches = b;
        }
        cfg.workload = self.workload.clone();
        if sc.control_variate.unwrap_or(true) {
            cfg.control_variate = hhat;
        }
        cfg.tau = tau;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PATH2: &str = r#"
[graph]
demand = 2
supply = 2
edges = [[1, 1], [2, 1], [2, 2]]

[arrivals]
pairs = [
  { pair = [1, 1], prob = 0.4 },
  { pair = [2, 1], prob = 0.1 },
  { pair = [2, 2], prob = 0.5 },
]

[cost]
vector = [1.0, 2.0, 3.0, 4.0]

[workload]
D = [1]

[policy]
kind = "h-mwt"
tau = "auto"

[sim]
horizon = 1000
seed = 3
"#;

    #[test]
    fn parses_and_resolves() {
        let m = Model::new(ExperimentConfig::parse(PATH2).unwrap()).unwrap();
        let mo = m.moments.as_ref().unwrap();
        assert!((mo.delta - 0.1).abs() < 1e-12);
        assert_eq!(m.resolve_tau(Some(TauSpec::Auto(Auto::Auto))).unwrap(), m.tau_star().unwrap());
        assert_eq!(m.resolve_tau(Some(TauSpec::Value(2.5))).unwrap(), 2.5);
        assert!(m.resolve_tau(Some(TauSpec::Value(-1.0))).is_err());
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::parse(PATH2).unwrap();
        let again = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = PATH2.replace("seed = 3", "seed = 3\nsed = 4");
        assert!(matches!(ExperimentConfig::parse(&text), Err(ConfigError::Parse(_))));
        let text = PATH2.replace("tau = \"auto\"", "tau = \"automatic\"");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn arrival_forms_are_exclusive() {
        let text = PATH2.replace("[cost]", "independent = { demand = [0.5, 0.5], supply = [0.5, 0.5] }\n\n[cost]");
        let err = Model::new(ExperimentConfig::parse(&text).unwrap()).unwrap_err();
        assert!(err.to_string().contains("exactly one"));
    }

    #[test]
    fn one_based_pairs() {
        let text = PATH2.replace("[[1, 1], [2, 1], [2, 2]]", "[[0, 1], [2, 1], [2, 2]]");
        assert!(matches!(
            Model::new(ExperimentConfig::parse(&text).unwrap()),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn priority_order_from_edges() {
        let m = Model::new(ExperimentConfig::parse(PATH2).unwrap()).unwrap();
        let mut pc = PolicyConfig::of_kind(PolicyKind::Priority);
        pc.order = Some(vec![[2, 2], [1, 1], [2, 1]]);
        match m.build_policy(&pc).unwrap() {
            Policy::Priority { order } => assert_eq!(order, vec![2, 0, 1]),
            p => panic!("unexpected {}", p.label()),
        }
        pc.order = Some(vec![[2, 2], [1, 1]]);
        assert!(m.build_policy(&pc).is_err());
    }
}
