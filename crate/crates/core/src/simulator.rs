//! Long-horizon Monte-Carlo simulation of the matching network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::arrivals::{moments, ArrivalDistribution};
use crate::effective_cost::CostVector;
use crate::graph::{MatchingGraph, StateVector, WorkloadVector};
use crate::policies::Policy;
use crate::stats::{derive_seed, BatchMeans};
use crate::value_function::{HatH, ValueError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("burn-in {burn_in} must be shorter than the horizon {horizon}")]
    BurnIn { burn_in: u64, horizon: u64 },
    #[error("{what} has length {found}, expected {expected}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("experiment has no variations")]
    NoVariations,
    #[error("threshold sweep needs an h-MWT base policy")]
    NotThresholdPolicy,
    #[error(transparent)]
    Value(#[from] ValueError),
}

/// Which state the running cost is charged on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostBasis {
    /// `c(Q(t+1))`, the queue left after matching.
    Q,
    /// `c(X(t))`, the queue plus the new arrivals before matching.
    X,
}

impl CostBasis {
    pub fn as_str(&self) -> &'static str {
        match self {
            CostBasis::Q => "Q",
            CostBasis::X => "X",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub graph: MatchingGraph,
    pub arrivals: ArrivalDistribution,
    pub cost: CostVector,
    pub policy: Policy,
    pub horizon: u64,
    /// Defaults to 1% of the horizon.
    pub burn_in: Option<u64>,
    pub seed: u64,
    /// Initial queue `Q(0)`; zero by default.
    pub initial_state: Option<StateVector>,
    pub cost_basis: CostBasis,
    /// Direction used for idleness and workload statistics.
    pub workload: Option<WorkloadVector>,
    pub batches: usize,
    /// Value function for the control-variate estimate.
    pub control_variate: Option<HatH>,
    /// Threshold for counting idleness that happens above it.
    pub tau: Option<f64>,
}

impl SimConfig {
    pub fn new(
        graph: MatchingGraph,
        arrivals: ArrivalDistribution,
        cost: CostVector,
        policy: Policy,
        horizon: u64,
        seed: u64,
    ) -> Self {
        Self {
            graph,
            arrivals,
            cost,
            policy,
            horizon,
            burn_in: None,
            seed,
            initial_state: None,
            cost_basis: CostBasis::Q,
            workload: None,
            batches: 100,
            control_variate: None,
            tau: None,
        }
    }

    pub fn burn_in_steps(&self) -> u64 {
        self.burn_in.unwrap_or(self.horizon / 100)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub avg_cost: f64,
    pub stderr: f64,
    /// Average of `cost + P hhat(W) - hhat(W)` along the path, which has the
    /// same long-run mean as the cost; equals `avg_cost` when no value
    /// function is configured.
    pub cv_avg_cost: f64,
    pub cv_stderr: f64,
    /// Mean idleness per slot (zero without a workload direction).
    pub idleness_rate: f64,
    pub mean_workload: f64,
    pub per_buffer_means: Vec<f64>,
    pub max_buffer: u32,
    /// Slots with positive idleness while the workload was at or above
    /// `-tau`.
    pub idle_above_threshold: u64,
    pub steps: u64,
    pub seed: u64,
    pub cost_basis: CostBasis,
}

impl SimResult {
    /// The control-variate estimate when available, otherwise the plain one.
    pub fn best_estimate(&self) -> (f64, f64) {
        (self.cv_avg_cost, self.cv_stderr)
    }
}

/// Runs one replication.
pub fn run(cfg: &SimConfig) -> Result<SimResult, SimError> {
    let g = &cfg.graph;
    let dim = g.dim();
    if cfg.horizon == 0 {
        return Err(SimError::ZeroHorizon);
    }
    let burn = cfg.burn_in_steps();
    if burn >= cfg.horizon {
        return Err(SimError::BurnIn {
            burn_in: burn,
            horizon: cfg.horizon,
        });
    }
    if cfg.arrivals.dim() != dim {
        return Err(SimError::ShapeMismatch {
            what: "arrival distribution",
            expected: dim,
            found: cfg.arrivals.dim(),
        });
    }
    if cfg.cost.as_slice().len() != dim {
        return Err(SimError::ShapeMismatch {
            what: "cost vector",
            expected: dim,
            found: cfg.cost.as_slice().len(),
        });
    }
    let mut q: Vec<u32> = match &cfg.initial_state {
        Some(s) if s.as_slice().len() != dim => {
            return Err(SimError::ShapeMismatch {
                what: "initial state",
                expected: dim,
                found: s.as_slice().len(),
            })
        }
        Some(s) => s.as_slice().to_vec(),
        None => vec![0; dim],
    };

    let mut arrival_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    policy_rng.set_stream(1);

    let workload = cfg.workload.as_ref();
    let cv = match (&cfg.control_variate, workload) {
        (Some(h), Some(xi)) => Some((h, moments(&cfg.arrivals, xi).increments.support())),
        _ => None,
    };
    let kept = cfg.horizon - burn;
    let mut plain = BatchMeans::new(kept, cfg.batches);
    let mut cv_means = BatchMeans::new(kept, cfg.batches);
    let mut idle_total = 0u64;
    let mut workload_total = 0i128;
    let mut buffer_totals = vec![0u64; dim];
    let mut max_buffer = q.iter().copied().max().unwrap_or(0);
    let mut idle_above = 0u64;
    let c = cfg.cost.as_slice();

    let mut x = q.clone();
    for t in 0..cfg.horizon {
        let a = cfg.arrivals.sample(&mut arrival_rng);
        x.copy_from_slice(&q);
        x[a.demand] += 1;
        x[g.supply_index(a.supply)] += 1;

        let u = cfg.policy.decide(g, &x, a, &mut policy_rng);
        q.copy_from_slice(&x);
        for (e, &n) in g.edges().iter().zip(&u.counts) {
            q[e.demand] -= n;
            q[g.supply_index(e.supply)] -= n;
        }
        debug_assert_eq!(
            q[..g.n_demand()].iter().map(|&v| v as u64).sum::<u64>(),
            q[g.n_demand()..].iter().map(|&v| v as u64).sum::<u64>(),
            "balance violated"
        );

        let basis: &[u32] = match cfg.cost_basis {
            CostBasis::Q => &q,
            CostBasis::X => &x,
        };
        max_buffer = max_buffer.max(q.iter().copied().max().unwrap_or(0));
        if t < burn {
            continue;
        }
        let cost: f64 = basis.iter().zip(c).map(|(&v, ck)| v as f64 * ck).sum();
        plain.push(cost);
        for (tot, &v) in buffer_totals.iter_mut().zip(basis) {
            *tot += v as u64;
        }
        if let Some(xi) = workload {
            let idle = xi.idleness(g, &u);
            let w = xi.dot(&x);
            idle_total += idle as u64;
            workload_total += w as i128;
            if idle > 0 && cfg.tau.is_some_and(|tau| w as f64 >= -tau) {
                idle_above += 1;
            }
            if let Some((h, support)) = cv {
                // cost + P hhat - hhat has the same stationary mean as cost
                let post = xi.dot(&q) as f64;
                let expected: f64 = support.iter().map(|&(k, p)| p * h.eval(post + k as f64, 0)).sum();
                cv_means.push(cost + expected - h.eval(w as f64, 0));
            }
        }
    }

    let (avg_cost, stderr) = plain.finish();
    let (cv_avg_cost, cv_stderr) = if cv.is_some() {
        cv_means.finish()
    } else {
        (avg_cost, stderr)
    };
    let n = kept as f64;
    Ok(SimResult {
        avg_cost,
        stderr,
        cv_avg_cost,
        cv_stderr,
        idleness_rate: idle_total as f64 / n,
        mean_workload: workload_total as f64 / n,
        per_buffer_means: buffer_totals.iter().map(|&s| s as f64 / n).collect(),
        max_buffer,
        idle_above_threshold: idle_above,
        steps: cfg.horizon,
        seed: cfg.seed,
        cost_basis: cfg.cost_basis,
    })
}

/// Variations for [`run_experiment`].
#[derive(Debug, Clone)]
pub enum Experiment {
    /// Thresholds for the h-MWT base policy. Each run rebuilds `hhat`
    /// around its own threshold, and so does the control variate when the
    /// base configuration has one.
    ThresholdSweep(Vec<f64>),
    /// Labelled policies replacing the base policy.
    PolicyCompare(Vec<(String, Policy)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub label: String,
    pub tau: Option<f64>,
    pub result: SimResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
    /// Threshold with the lowest estimated cost (sweeps only); the
    /// control-variate estimate is used when configured.
    pub argmin_tau: Option<f64>,
    /// Diffusion threshold of the base policy (sweeps only).
    pub tau_star: Option<f64>,
}

/// Runs one replication per variation, in parallel, each with the seed
/// `derive_seed(base.seed, index)`. Rows come back in variation order.
pub fn run_experiment(base: &SimConfig, experiment: &Experiment) -> Result<ExperimentTable, SimError> {
    let configs: Vec<(String, Option<f64>, SimConfig)> = match experiment {
        Experiment::ThresholdSweep(taus) => {
            let Policy::HMwt(h) = &base.policy else {
                return Err(SimError::NotThresholdPolicy);
            };
            taus.iter()
                .enumerate()
                .map(|(i, &tau)| {
                    let params = h.params.with_threshold(tau)?;
                    let mut cfg = base.clone();
                    if cfg.control_variate.is_some() {
                        cfg.control_variate = Some(params.hhat);
                    }
                    cfg.policy = Policy::hmwt(params, tau);
                    cfg.tau = Some(tau);
                    cfg.seed = derive_seed(base.seed, i as u64);
                    Ok((format!("h-mwt[{tau}]"), Some(tau), cfg))
                })
                .collect::<Result<_, SimError>>()?
        }
        Experiment::PolicyCompare(list) => list
            .iter()
            .enumerate()
            .map(|(i, (label, policy))| {
                let mut cfg = base.clone();
                cfg.policy = policy.clone();
                let tau = match policy {
                    Policy::HMwt(h) => Some(h.tau),
                    _ => None,
                };
                cfg.tau = tau;
                cfg.seed = derive_seed(base.seed, i as u64);
                (label.clone(), tau, cfg)
            })
            .collect(),
    };
    if configs.is_empty() {
        return Err(SimError::NoVariations);
    }
    let rows = configs
        .into_par_iter()
        .map(|(label, tau, cfg)| run(&cfg).map(|result| ExperimentRow { label, tau, result }))
        .collect::<Result<Vec<_>, _>>()?;
    let (argmin_tau, tau_star) = match experiment {
        Experiment::ThresholdSweep(_) => {
            let best = rows
                .iter()
                .min_by(|a, b| a.result.cv_avg_cost.total_cmp(&b.result.cv_avg_cost))
                .and_then(|r| r.tau);
            let ts = match &base.policy {
                Policy::HMwt(h) => Some(h.params.hhat.tau_star),
                _ => None,
            };
            (best, ts)
        }
        Experiment::PolicyCompare(_) => (None, None),
    };
    Ok(ExperimentTable {
        rows,
        argmin_tau,
        tau_star,
    })
}

/// Column names of [`csv_row`].
pub const CSV_HEADER: &str =
    "label,tau,avg_cost,stderr,cv_avg_cost,cv_stderr,idleness_rate,mean_workload,max_buffer,T,seed,cost_basis";

/// One CSV line (without newline) for an experiment row.
pub fn csv_row(row: &ExperimentRow) -> String {
    let r = &row.result;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        row.label,
        row.tau.map_or(String::new(), |t| t.to_string()),
        r.avg_cost,
        r.stderr,
        r.cv_avg_cost,
        r.cv_stderr,
        r.idleness_rate,
        r.mean_workload,
        r.max_buffer,
        r.steps,
        r.seed,
        r.cost_basis.as_str()
    )
}

/// The whole table as CSV text.
pub fn table_csv(table: &ExperimentTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &table.rows {
        out.push_str(&csv_row(row));
        out.push('\n');
    }
    out
}
