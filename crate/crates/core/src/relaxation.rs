//! One-dimensional workload relaxation under threshold idleness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::arrivals::{ArrivalMoments, IncrementDist};
use crate::effective_cost::EffectiveCostSlopes;
use crate::stats::{derive_seed, BatchMeans};
use crate::value_function::HatH;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelaxationError {
    #[error("drift must be positive, got {0}")]
    ZeroDrift(f64),
    #[error("increment masses are invalid or do not sum to one")]
    InvalidIncrements,
    #[error("increment moments disagree with the given drift and variance")]
    InconsistentMoments,
    #[error("slopes must be positive")]
    InvalidSlopes,
    #[error("idle cap must be at least 1, got {0}")]
    IdleCap(f64),
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
}

/// `(tau*, eta**)`: the diffusion threshold and its predicted cost.
pub(crate) fn diffusion_threshold(delta: f64, sigma2: f64, c_plus: f64, c_minus: f64) -> (f64, f64) {
    let tau = 0.5 * (sigma2 / delta) * (c_plus / c_minus).ln_1p();
    (tau, tau * c_minus)
}

/// Relaxation `W(t+1) = W(t) - delta + I(t) + Delta(t+1)` with effective
/// cost slopes `c_plus`, `c_minus`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationModel {
    pub delta: f64,
    pub sigma2: f64,
    pub increments: IncrementDist,
    pub c_plus: f64,
    pub c_minus: f64,
    pub idle_cap: f64,
}

impl RelaxationModel {
    pub fn new(
        delta: f64,
        sigma2: f64,
        increments: IncrementDist,
        c_plus: f64,
        c_minus: f64,
        idle_cap: f64,
    ) -> Result<Self, RelaxationError> {
        let m = Self::from_increments(increments, c_plus, c_minus, idle_cap)?;
        if (m.delta - delta).abs() > 1e-12 || (m.sigma2 - sigma2).abs() > 1e-12 {
            return Err(RelaxationError::InconsistentMoments);
        }
        Ok(m)
    }

    /// Derives drift and variance from the increment masses.
    pub fn from_increments(
        increments: IncrementDist,
        c_plus: f64,
        c_minus: f64,
        idle_cap: f64,
    ) -> Result<Self, RelaxationError> {
        let IncrementDist { p_minus, p_zero, p_plus } = increments;
        if [p_minus, p_zero, p_plus].iter().any(|p| !(0.0..=1.0).contains(p))
            || (p_minus + p_zero + p_plus - 1.0).abs() > 1e-12
        {
            return Err(RelaxationError::InvalidIncrements);
        }
        if !(c_plus > 0.0 && c_minus > 0.0) {
            return Err(RelaxationError::InvalidSlopes);
        }
        if !(idle_cap >= 1.0) {
            return Err(RelaxationError::IdleCap(idle_cap));
        }
        Ok(Self {
            delta: -increments.mean(),
            sigma2: increments.variance().max(0.0),
            increments,
            c_plus,
            c_minus,
            idle_cap,
        })
    }

    /// The relaxation of a network with given moments and cost slopes.
    pub fn from_moments(
        m: &ArrivalMoments,
        slopes: &EffectiveCostSlopes,
        max_matches: usize,
    ) -> Result<Self, RelaxationError> {
        Self::new(
            m.delta,
            m.sigma2_delta,
            m.increments,
            slopes.c_plus,
            slopes.c_minus,
            max_matches as f64,
        )
    }

    /// Instance with no zero increments and drift `delta`, so that
    /// `sigma2 = 1 - delta^2`.
    pub fn symmetric(delta: f64, c_plus: f64, c_minus: f64) -> Result<Self, RelaxationError> {
        let inc = IncrementDist {
            p_minus: 0.5 * (1.0 + delta),
            p_zero: 0.0,
            p_plus: 0.5 * (1.0 - delta),
        };
        Self::from_increments(inc, c_plus, c_minus, 4.0)
    }

    pub fn cbar(&self, w: f64) -> f64 {
        (self.c_plus * w).max(-self.c_minus * w)
    }

    /// Threshold-policy idleness at workload `w`.
    pub fn idleness(&self, w: f64, tau: f64) -> f64 {
        (self.delta - w - tau).max(0.0)
    }

    /// The value function built on this relaxation's moments.
    pub fn hhat(&self, theta: f64, delta_plus: f64) -> Option<HatH> {
        HatH::new(self.delta, self.sigma2, self.c_plus, self.c_minus, theta, delta_plus).ok()
    }
}

/// `(tau*, eta**)` for a relaxation.
pub fn tau_star(model: &RelaxationModel) -> Result<(f64, f64), RelaxationError> {
    if !(model.delta > 0.0) {
        return Err(RelaxationError::ZeroDrift(model.delta));
    }
    Ok(diffusion_threshold(model.delta, model.sigma2, model.c_plus, model.c_minus))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationSimResult {
    pub avg_cost: f64,
    pub stderr: f64,
    /// Average of `cbar + P hhat - hhat`, with `hhat` built around `tau`.
    /// Same long-run mean as `avg_cost`, far smaller variance.
    pub cv_avg_cost: f64,
    pub cv_stderr: f64,
    pub steps: u64,
}

/// Simulates the relaxation under threshold `tau` from `W(0) = -tau`,
/// discarding the first 1% of the horizon.
pub fn simulate_relaxation(
    model: &RelaxationModel,
    tau: f64,
    horizon: u64,
    seed: u64,
) -> Result<RelaxationSimResult, RelaxationError> {
    if horizon == 0 {
        return Err(RelaxationError::ZeroHorizon);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burn = horizon / 100;
    let kept = horizon - burn;
    let hhat = HatH::with_threshold(model.delta, model.sigma2, model.c_plus, model.c_minus, tau.max(0.0), 1.0, 0.01).ok();
    let inc = model.increments;
    let support = inc.support();
    let mut plain = BatchMeans::new(kept, 100);
    let mut cv = BatchMeans::new(kept, 100);
    let mut w = -tau;
    for t in 0..horizon {
        let post = w - model.delta + model.idleness(w, tau);
        let u: f64 = rng.gen();
        let k = if u < inc.p_minus {
            -1.0
        } else if u < inc.p_minus + inc.p_zero {
            0.0
        } else {
            1.0
        };
        let next = post + model.delta + k;
        if t >= burn {
            let cost = model.cbar(w);
            plain.push(cost);
            // cbar + P hhat - hhat has the same stationary mean as cbar
            let y = match &hhat {
                Some(h) => {
                    let expected: f64 = support
                        .iter()
                        .map(|&(k, p)| p * h.eval(post + model.delta + k as f64, 0))
                        .sum();
                    cost + expected - h.eval(w, 0)
                }
                None => cost,
            };
            cv.push(y);
        }
        w = next;
    }
    let (avg_cost, stderr) = plain.finish();
    let (cv_avg_cost, cv_stderr) = cv.finish();
    Ok(RelaxationSimResult {
        avg_cost,
        stderr,
        cv_avg_cost,
        cv_stderr,
        steps: horizon,
    })
}

/// Exact long-run average cost of threshold `tau`.
///
/// After idleness the workload sits on `-tau + n` for `n >= 0` and moves as
/// a reflected lattice walk, whose stationary law is geometric with ratio
/// `p_plus / p_minus`.
pub fn threshold_cost(model: &RelaxationModel, tau: f64) -> Result<f64, RelaxationError> {
    if !(model.delta > 0.0) {
        return Err(RelaxationError::ZeroDrift(model.delta));
    }
    let inc = model.increments;
    let r = inc.p_plus / inc.p_minus;
    let support = inc.support();
    let mut total = 0.0;
    let mut mass = 1.0 - r;
    let mut n = 0u64;
    while mass > 1e-18 * (1.0 - r) || n == 0 {
        let base = -tau + n as f64 + model.delta;
        let c: f64 = support.iter().map(|&(k, p)| p * model.cbar(base + k as f64)).sum();
        total += mass * c;
        mass *= r;
        n += 1;
        if r == 0.0 {
            break;
        }
    }
    Ok(total)
}

/// How each threshold candidate is costed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdEval {
    Exact,
    Simulation { horizon: u64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSearch {
    pub tau_best: f64,
    pub eta_hat: f64,
    /// `(tau, cost)` per grid point, in grid order.
    pub costs: Vec<(f64, f64)>,
}

/// Best threshold on a grid.
pub fn optimal_threshold(
    model: &RelaxationModel,
    grid: &[f64],
    eval: ThresholdEval,
) -> Result<ThresholdSearch, RelaxationError> {
    if grid.is_empty() {
        return Err(RelaxationError::EmptyGrid);
    }
    let costs: Vec<(f64, f64)> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &tau)| {
            let c = match eval {
                ThresholdEval::Exact => threshold_cost(model, tau)?,
                ThresholdEval::Simulation { horizon, seed } => {
                    simulate_relaxation(model, tau, horizon, derive_seed(seed, i as u64))?.cv_avg_cost
                }
            };
            Ok((tau, c))
        })
        .collect::<Result<_, RelaxationError>>()?;
    let (tau_best, eta_hat) = costs
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |best, (t, c)| if c < best.1 { (t, c) } else { best });
    Ok(ThresholdSearch {
        tau_best,
        eta_hat,
        costs,
    })
}
