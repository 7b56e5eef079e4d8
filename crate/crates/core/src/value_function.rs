//! The relaxation value function `hhat`, smoothing perturbations and the
//! full function `h(x) = hhat(xi . x) + kappa [c(x~) - cbar(w~)]^2`.

use thiserror::Error;

use crate::effective_cost::{CostVector, EffectiveCostSlopes};
use crate::graph::WorkloadVector;
use crate::relaxation::diffusion_threshold;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueError {
    #[error("drift must be positive, got {0}")]
    ZeroDrift(f64),
    #[error("increment variance must be positive, got {0}")]
    ZeroVariance(f64),
    #[error("parameter {name} must be positive and finite, got {value}")]
    InvalidTuning { name: &'static str, value: f64 },
    #[error("coefficient identity '{0}' failed")]
    IdentityViolation(&'static str),
    #[error("state has length {found}, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
}

/// Piecewise closed-form solution of the relaxation's average-cost
/// equation, extended convexly below the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HatH {
    pub delta: f64,
    pub sigma2: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    /// `2 delta / sigma2`.
    pub big_theta: f64,
    pub a_plus: f64,
    pub b_plus: f64,
    pub a_minus: f64,
    pub b_minus: f64,
    pub c_coef: f64,
    pub d_coef: f64,
    /// Optimal diffusion threshold and its average cost.
    pub tau_star: f64,
    pub eta_ss: f64,
    /// Threshold at which `hhat' = 0`, and the diffusion average cost of
    /// idling there. Equal to `tau_star`, `eta_ss` unless built by
    /// [`HatH::with_threshold`].
    pub tau: f64,
    pub eta: f64,
    /// Rate of the exponential extension below the threshold.
    pub theta: f64,
    pub delta_plus: f64,
    value_at_threshold: f64,
}

fn positive(name: &'static str, value: f64) -> Result<(), ValueError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ValueError::InvalidTuning { name, value })
    }
}

fn check_inputs(
    delta: f64,
    sigma2: f64,
    c_plus: f64,
    c_minus: f64,
    theta: f64,
    delta_plus: f64,
) -> Result<(f64, f64), ValueError> {
    if !(delta > 0.0) {
        return Err(ValueError::ZeroDrift(delta));
    }
    if !(sigma2 > 0.0) {
        return Err(ValueError::ZeroVariance(sigma2));
    }
    positive("c_plus", c_plus)?;
    positive("c_minus", c_minus)?;
    positive("theta", theta)?;
    positive("delta_plus", delta_plus)?;
    Ok(diffusion_threshold(delta, sigma2, c_plus, c_minus))
}

/// Diffusion average cost `c_minus tau + [(c_plus + c_minus) e^{-Theta tau} - c_minus] / Theta`
/// of the threshold policy at `tau`.
pub fn threshold_eta(big_theta: f64, c_plus: f64, c_minus: f64, tau: f64) -> f64 {
    c_minus * tau + (c_plus + (c_plus + c_minus) * (-big_theta * tau).exp_m1()) / big_theta
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-10 * scale.max(1.0)
}

impl HatH {
    pub fn new(
        delta: f64,
        sigma2: f64,
        c_plus: f64,
        c_minus: f64,
        theta: f64,
        delta_plus: f64,
    ) -> Result<Self, ValueError> {
        let (tau_star, _) = check_inputs(delta, sigma2, c_plus, c_minus, theta, delta_plus)?;
        let h = Self::build(delta, sigma2, c_plus, c_minus, tau_star, theta, delta_plus)?;
        let t = h.big_theta;
        let curv = t * t * h.d_coef * (-t * tau_star).exp();
        if !close(2.0 * h.a_minus + curv, 0.0, curv.abs()) {
            return Err(ValueError::IdentityViolation("second derivative vanishes at threshold"));
        }
        Ok(h)
    }

    /// Solution of the same equation for the threshold policy at `tau`:
    /// `hhat'(-tau) = 0` and the constant is the diffusion cost of `tau`.
    /// Convex only for `tau <= tau*`.
    pub fn with_threshold(
        delta: f64,
        sigma2: f64,
        c_plus: f64,
        c_minus: f64,
        tau: f64,
        theta: f64,
        delta_plus: f64,
    ) -> Result<Self, ValueError> {
        check_inputs(delta, sigma2, c_plus, c_minus, theta, delta_plus)?;
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(ValueError::InvalidTuning { name: "tau", value: tau });
        }
        Self::build(delta, sigma2, c_plus, c_minus, tau, theta, delta_plus)
    }

    fn build(
        delta: f64,
        sigma2: f64,
        c_plus: f64,
        c_minus: f64,
        tau: f64,
        theta: f64,
        delta_plus: f64,
    ) -> Result<Self, ValueError> {
        let (tau_star, eta_ss) = diffusion_threshold(delta, sigma2, c_plus, c_minus);
        let big_theta = 2.0 * delta / sigma2;
        let eta = if tau == tau_star {
            eta_ss
        } else {
            threshold_eta(big_theta, c_plus, c_minus, tau)
        };
        let a_plus = c_plus / (2.0 * delta);
        let a_minus = -c_minus / (2.0 * delta);
        let b_plus = (2.0 / big_theta) * a_plus - eta / delta;
        let b_minus = (2.0 / big_theta) * a_minus - eta / delta;
        let d_coef = (2.0 / big_theta.powi(3)) * (c_plus + c_minus) / sigma2;
        let c_coef = -d_coef;

        let lhs = b_minus + big_theta * d_coef;
        if !close(lhs, b_plus, b_minus.abs().max(b_plus.abs())) {
            return Err(ValueError::IdentityViolation("first derivative continuous at zero"));
        }

        let mut h = Self {
            delta,
            sigma2,
            c_plus,
            c_minus,
            big_theta,
            a_plus,
            b_plus,
            a_minus,
            b_minus,
            c_coef,
            d_coef,
            tau_star,
            eta_ss,
            tau,
            eta,
            theta,
            delta_plus,
            value_at_threshold: 0.0,
        };
        let slope = h.middle(-tau, 1);
        if !close(slope, 0.0, b_minus.abs().max(2.0 * a_minus.abs() * tau)) {
            return Err(ValueError::IdentityViolation("first derivative vanishes at threshold"));
        }
        h.value_at_threshold = h.middle(-tau, 0);
        Ok(h)
    }

    /// Builds from effective-cost slopes.
    pub fn from_slopes(
        delta: f64,
        sigma2: f64,
        slopes: &EffectiveCostSlopes,
        theta: f64,
        delta_plus: f64,
    ) -> Result<Self, ValueError> {
        Self::new(delta, sigma2, slopes.c_plus, slopes.c_minus, theta, delta_plus)
    }

    /// `max(c_plus w, -c_minus w)`.
    pub fn cbar(&self, w: f64) -> f64 {
        (self.c_plus * w).max(-self.c_minus * w)
    }

    // branch on [-tau, 0), written with expm1 to keep cancellation small
    fn middle(&self, w: f64, order: u8) -> f64 {
        let t = self.big_theta;
        match order {
            0 => self.a_minus * w * w + self.b_minus * w + self.d_coef * (t * w).exp_m1(),
            1 => 2.0 * self.a_minus * w + self.b_plus + t * self.d_coef * (t * w).exp_m1(),
            _ => 2.0 * self.a_minus + t * t * self.d_coef * (t * w).exp(),
        }
    }

    /// `hhat` (order 0) or its first or second derivative.
    pub fn eval(&self, w: f64, order: u8) -> f64 {
        if w >= 0.0 {
            match order {
                0 => self.a_plus * w * w + self.b_plus * w,
                1 => 2.0 * self.a_plus * w + self.b_plus,
                _ => 2.0 * self.a_plus,
            }
        } else if w >= -self.tau {
            self.middle(w, order)
        } else {
            let s = w + self.tau;
            let th = self.theta;
            let k = self.c_minus / self.delta_plus;
            let em = (th * s).exp_m1();
            match order {
                0 => self.value_at_threshold + k * (0.5 * s * s + s / th - em / (th * th)),
                1 => k * (s - em / th),
                _ => -k * em,
            }
        }
    }

    /// Residual of the average-cost equation
    /// `-delta h' + sigma2/2 h'' + cbar - eta`.
    pub fn ode_residual(&self, w: f64) -> f64 {
        -self.delta * self.eval(w, 1) + 0.5 * self.sigma2 * self.eval(w, 2) + self.cbar(w)
            - self.eta
    }

    /// Value at `-tau`, the minimum when `tau <= tau*`.
    pub fn min_value(&self) -> f64 {
        self.value_at_threshold
    }

    /// `(w, h, h', h'')` on an even grid.
    pub fn table(&self, w_min: f64, w_max: f64, points: usize) -> Vec<[f64; 4]> {
        let n = points.max(1);
        (0..n)
            .map(|k| {
                let w = if n == 1 {
                    w_min
                } else {
                    w_min + (w_max - w_min) * k as f64 / (n - 1) as f64
                };
                [w, self.eval(w, 0), self.eval(w, 1), self.eval(w, 2)]
            })
            .collect()
    }
}

/// Smoothed coordinate `sign(v) (|v| + beta (e^{-|v|/beta} - 1))` and its
/// derivative.
pub fn tilde(v: f64, beta: f64) -> (f64, f64) {
    let a = v.abs();
    let em = (-a / beta).exp_m1();
    (v.signum() * (a + beta * em), -em)
}

/// Everything needed to evaluate `h` and its gradient.
#[derive(Debug, Clone)]
pub struct HParams {
    pub hhat: HatH,
    pub xi: WorkloadVector,
    pub cost: CostVector,
    pub slopes: EffectiveCostSlopes,
    pub beta: f64,
    pub kappa: f64,
}

/// Tuning parameters of `h` that the theory leaves open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuning {
    pub theta: f64,
    pub delta_plus: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for Tuning {
    fn default() -> Self {
        Self {
            theta: 1.0,
            delta_plus: 0.01,
            beta: 10.0,
            kappa: 1.0,
        }
    }
}

/// Builds `h` for the drift and variance of the workload process.
pub fn build_params(
    delta: f64,
    sigma2: f64,
    slopes: &EffectiveCostSlopes,
    xi: &WorkloadVector,
    cost: &CostVector,
    tuning: Tuning,
) -> Result<HParams, ValueError> {
    positive("beta", tuning.beta)?;
    positive("kappa", tuning.kappa)?;
    if xi.xi().len() != cost.as_slice().len() {
        return Err(ValueError::ShapeMismatch {
            expected: xi.xi().len(),
            found: cost.as_slice().len(),
        });
    }
    let hhat = HatH::from_slopes(delta, sigma2, slopes, tuning.theta, tuning.delta_plus)?;
    Ok(HParams {
        hhat,
        xi: xi.clone(),
        cost: cost.clone(),
        slopes: *slopes,
        beta: tuning.beta,
        kappa: tuning.kappa,
    })
}

impl HParams {
    /// The same `h` with `hhat` rebuilt around threshold `tau`.
    pub fn with_threshold(&self, tau: f64) -> Result<HParams, ValueError> {
        let h = &self.hhat;
        let hhat = HatH::with_threshold(h.delta, h.sigma2, h.c_plus, h.c_minus, tau, h.theta, h.delta_plus)?;
        Ok(HParams { hhat, ..self.clone() })
    }

    /// `h(x)` and its gradient at a real-valued state.
    pub fn h_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let xi = self.xi.xi();
        let c = self.cost.as_slice();
        let w = self.xi.dot_f64(x);
        let (w_t, w_d) = tilde(w, self.beta);
        let mut cx = 0.0;
        let mut xd = Vec::with_capacity(x.len());
        for (&v, &ck) in x.iter().zip(c) {
            let (t, d) = tilde(v, self.beta);
            cx += ck * t;
            xd.push(d);
        }
        let diff = cx - self.slopes.cost(w_t);
        let cbar_d = self.slopes.derivative(w_t);
        let h1 = self.hhat.eval(w, 1);
        let grad = (0..x.len())
            .map(|k| {
                h1 * xi[k] as f64
                    + 2.0 * self.kappa * diff * (c[k] * xd[k] - cbar_d * w_d * xi[k] as f64)
            })
            .collect();
        (self.hhat.eval(w, 0) + self.kappa * diff * diff, grad)
    }

    /// `h(x)` only.
    pub fn h(&self, x: &[f64]) -> f64 {
        let w = self.xi.dot_f64(x);
        let (w_t, _) = tilde(w, self.beta);
        let cx: f64 = x
            .iter()
            .zip(self.cost.as_slice())
            .map(|(&v, ck)| ck * tilde(v, self.beta).0)
            .sum();
        let diff = cx - self.slopes.cost(w_t);
        self.hhat.eval(w, 0) + self.kappa * diff * diff
    }

    /// Gradient at an integer state.
    pub fn grad_at(&self, x: &[u32]) -> Vec<f64> {
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        self.h_and_grad(&xf).1
    }
}
