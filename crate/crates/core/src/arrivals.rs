//! I.i.d. single-pair arrival distributions, their moments and sampling.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use thiserror::Error;

use crate::graph::{MatchingGraph, Pair, WorkloadVector};

const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArrivalError {
    #[error("arrival probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("pair {0} is not an arrival pair of the graph")]
    UnsupportedPair(Pair),
    #[error("pair {0} has a negative or non-finite probability")]
    InvalidMass(Pair),
    #[error("pair {0} is listed more than once")]
    DuplicatePair(Pair),
    #[error("family endpoints have equal drift {0}; cannot interpolate")]
    DegenerateFamily(f64),
    #[error("target drift {target} lies outside the endpoint range [{lo}, {hi}]")]
    DriftOutOfRange { target: f64, lo: f64, hi: f64 },
    #[error("family endpoints belong to different graphs")]
    ShapeMismatch,
}

/// Probability mass over arrival pairs; exactly one pair arrives per slot.
#[derive(Debug, Clone)]
pub struct ArrivalDistribution {
    n_demand: usize,
    n_supply: usize,
    pairs: Vec<Pair>,
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl PartialEq for ArrivalDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.n_demand == other.n_demand
            && self.n_supply == other.n_supply
            && self.pairs == other.pairs
            && self.probs == other.probs
    }
}

/// Validates `probs` against the arrival pairs of `g`.
pub fn build_distribution(
    g: &MatchingGraph,
    probs: &[(Pair, f64)],
) -> Result<ArrivalDistribution, ArrivalError> {
    let mut pairs = Vec::with_capacity(probs.len());
    let mut masses = Vec::with_capacity(probs.len());
    for &(pair, p) in probs {
        if !g.is_arrival_pair(pair) {
            return Err(ArrivalError::UnsupportedPair(pair));
        }
        if !p.is_finite() || p < 0.0 {
            return Err(ArrivalError::InvalidMass(pair));
        }
        if pairs.contains(&pair) {
            return Err(ArrivalError::DuplicatePair(pair));
        }
        pairs.push(pair);
        masses.push(p);
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(ArrivalError::NotNormalized(total));
    }
    let sampler = WeightedIndex::new(&masses).map_err(|_| ArrivalError::NotNormalized(total))?;
    Ok(ArrivalDistribution {
        n_demand: g.n_demand(),
        n_supply: g.n_supply(),
        pairs,
        probs: masses,
        sampler,
    })
}

impl ArrivalDistribution {
    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn dim(&self) -> usize {
        self.n_demand + self.n_supply
    }

    /// `(pair, mass)` entries in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (Pair, f64)> + '_ {
        self.pairs.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn mass(&self, pair: Pair) -> f64 {
        self.entries()
            .find(|(p, _)| *p == pair)
            .map_or(0.0, |(_, m)| m)
    }

    /// Mean arrival vector `alpha`.
    pub fn alpha(&self) -> Vec<f64> {
        let mut alpha = vec![0.0; self.dim()];
        for (pair, p) in self.entries() {
            alpha[pair.demand] += p;
            alpha[self.n_demand + pair.supply] += p;
        }
        alpha
    }

    /// Draws one arrival pair.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Pair {
        self.pairs[self.sampler.sample(rng)]
    }

    /// Draws one arrival as a buffer-space vector `1^i + 1^j`.
    pub fn sample_vector<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        let pair = self.sample(rng);
        let mut v = vec![0u32; self.dim()];
        v[pair.demand] += 1;
        v[self.n_demand + pair.supply] += 1;
        v
    }
}

/// Distribution of the workload increment `xi . A` over `{-1, 0, +1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementDist {
    pub p_minus: f64,
    pub p_zero: f64,
    pub p_plus: f64,
}

impl IncrementDist {
    pub fn mean(&self) -> f64 {
        self.p_plus - self.p_minus
    }

    pub fn second_moment(&self) -> f64 {
        self.p_plus + self.p_minus
    }

    pub fn variance(&self) -> f64 {
        self.second_moment() - self.mean() * self.mean()
    }

    /// `(increment, mass)` over the three support points.
    pub fn support(&self) -> [(i64, f64); 3] {
        [(-1, self.p_minus), (0, self.p_zero), (1, self.p_plus)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalMoments {
    pub alpha: Vec<f64>,
    /// `-xi . alpha`.
    pub delta: f64,
    /// Variance of `xi . A`.
    pub sigma2_delta: f64,
    pub increments: IncrementDist,
}

/// Mean vector, drift and increment variance along `xi`.
pub fn moments(dist: &ArrivalDistribution, xi: &WorkloadVector) -> ArrivalMoments {
    let x = xi.xi();
    let mut inc = IncrementDist {
        p_minus: 0.0,
        p_zero: 0.0,
        p_plus: 0.0,
    };
    for (pair, p) in dist.entries() {
        let v = x[pair.demand] as i32 + x[dist.n_demand + pair.supply] as i32;
        match v {
            -1 => inc.p_minus += p,
            0 => inc.p_zero += p,
            1 => inc.p_plus += p,
            _ => unreachable!("workload increment {v} outside {{-1,0,1}}"),
        }
    }
    let alpha = dist.alpha();
    let delta = -xi.dot_f64(&alpha);
    ArrivalMoments {
        alpha,
        delta,
        sigma2_delta: inc.variance().max(0.0),
        increments: inc,
    }
}

/// A one-parameter family of distributions obtained by mixing two endpoint
/// distributions, parameterized by the drift it induces along `xi`.
#[derive(Debug, Clone)]
pub struct ArrivalFamily {
    endpoint0: ArrivalDistribution,
    endpoint1: ArrivalDistribution,
    delta0: f64,
    delta1: f64,
}

impl ArrivalFamily {
    pub fn new(
        endpoint0: ArrivalDistribution,
        endpoint1: ArrivalDistribution,
        xi: &WorkloadVector,
    ) -> Result<Self, ArrivalError> {
        if endpoint0.dim() != endpoint1.dim() || endpoint0.dim() != xi.xi().len() {
            return Err(ArrivalError::ShapeMismatch);
        }
        let delta0 = moments(&endpoint0, xi).delta;
        let delta1 = moments(&endpoint1, xi).delta;
        if (delta1 - delta0).abs() < 1e-15 {
            return Err(ArrivalError::DegenerateFamily(delta0));
        }
        Ok(Self {
            endpoint0,
            endpoint1,
            delta0,
            delta1,
        })
    }

    pub fn endpoint_drifts(&self) -> (f64, f64) {
        (self.delta0, self.delta1)
    }

    /// Mixing weight on the second endpoint that yields drift `delta`.
    pub fn weight(&self, delta: f64) -> f64 {
        (delta - self.delta0) / (self.delta1 - self.delta0)
    }

    /// The member of the family with drift exactly `delta`.
    pub fn at(&self, g: &MatchingGraph, delta: f64) -> Result<ArrivalDistribution, ArrivalError> {
        let t = self.weight(delta);
        if !(-1e-12..=1.0 + 1e-12).contains(&t) {
            let (lo, hi) = if self.delta0 < self.delta1 {
                (self.delta0, self.delta1)
            } else {
                (self.delta1, self.delta0)
            };
            return Err(ArrivalError::DriftOutOfRange { target: delta, lo, hi });
        }
        let t = t.clamp(0.0, 1.0);
        let mut probs: Vec<(Pair, f64)> = Vec::new();
        for (pair, p) in self.endpoint0.entries() {
            probs.push((pair, (1.0 - t) * p));
        }
        for (pair, p) in self.endpoint1.entries() {
            match probs.iter_mut().find(|(q, _)| *q == pair) {
                Some(entry) => entry.1 += t * p,
                None => probs.push((pair, t * p)),
            }
        }
        // absorb rounding so the masses sum to one
        let total: f64 = probs.iter().map(|(_, p)| p).sum();
        for entry in &mut probs {
            entry.1 /= total;
        }
        build_distribution(g, &probs)
    }

    /// Constant `b` with `E|A^delta - A^{delta0}| <= b |delta - delta0|` in
    /// the l1 norm, under the coupling that keeps the common mass fixed.
    pub fn continuity_constant(&self) -> f64 {
        let mut pairs: Vec<Pair> = self.endpoint0.pairs().to_vec();
        for p in self.endpoint1.pairs() {
            if !pairs.contains(p) {
                pairs.push(*p);
            }
        }
        let tv: f64 = 0.5
            * pairs
                .iter()
                .map(|&p| (self.endpoint0.mass(p) - self.endpoint1.mass(p)).abs())
                .sum::<f64>();
        // two differing arrival vectors are at most 4 apart in l1
        4.0 * tv / (self.delta1 - self.delta0).abs()
    }
}

/// Diagnostic for the separation of the designated workload direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub satisfied: bool,
    /// Drift `-xi^D . alpha` of the designated set.
    pub designated_drift: f64,
    /// Largest `xi^{D'} . alpha` over other proper demand sets, with the set.
    pub worst_other: Option<(crate::graph::DemandSet, f64)>,
}

/// Checks that every proper demand set other than the designated one has
/// `xi^{D'} . alpha <= -delta_lower`.
pub fn check_separation(
    g: &MatchingGraph,
    dist: &ArrivalDistribution,
    xi: &WorkloadVector,
    delta_lower: f64,
) -> Result<SeparationReport, crate::graph::GraphError> {
    use crate::graph::{workload_vector, DemandSet, GraphError, MAX_DEMAND_CLASSES};
    let nd = g.n_demand();
    if nd > MAX_DEMAND_CLASSES {
        return Err(GraphError::TooManyDemandClasses(nd));
    }
    let alpha = dist.alpha();
    let designated_drift = -xi.dot_f64(&alpha);
    let mut worst: Option<(DemandSet, f64)> = None;
    for mask in 1..(1u64 << nd) - 1 {
        let d = DemandSet::from_mask(mask, nd);
        if &d == xi.demand_set() {
            continue;
        }
        let v = workload_vector(g, &d)?.dot_f64(&alpha);
        if worst.as_ref().is_none_or(|(_, w)| v > *w) {
            worst = Some((d, v));
        }
    }
    let satisfied = designated_drift > 0.0
        && worst.as_ref().is_none_or(|(_, w)| *w <= -delta_lower);
    Ok(SeparationReport {
        satisfied,
        designated_drift,
        worst_other: worst,
    })
}

/// Diagnostic for positive arrival mass on some cross pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossArrivalReport {
    pub satisfied: bool,
    /// Cross pair with the largest arrival mass, if any exists.
    pub best_pair: Option<Pair>,
    pub mass: f64,
}

/// Looks for an arrival pair with demand outside `D` and supply in the
/// supply neighbourhood of `D` carrying mass at least `p_min`.
pub fn check_cross_arrivals(
    g: &MatchingGraph,
    dist: &ArrivalDistribution,
    xi: &WorkloadVector,
    p_min: f64,
) -> CrossArrivalReport {
    let mut best: Option<(Pair, f64)> = None;
    for (pair, p) in dist.entries() {
        let cross = xi.xi()[pair.demand] == 0 && xi.xi()[g.supply_index(pair.supply)] == -1;
        if cross && best.is_none_or(|(_, m)| p > m) {
            best = Some((pair, p));
        }
    }
    let mass = best.map_or(0.0, |(_, m)| m);
    CrossArrivalReport {
        satisfied: best.is_some() && mass >= p_min,
        best_pair: best.map(|(p, _)| p),
        mass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{workload_vector, DemandSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(i: usize, j: usize) -> Pair {
        Pair::new(i, j)
    }

    fn path2() -> MatchingGraph {
        let edges = vec![p(0, 0), p(1, 0), p(1, 1)];
        MatchingGraph::new(2, 2, edges.clone(), edges, 4).unwrap()
    }

    fn path2_dist(g: &MatchingGraph) -> ArrivalDistribution {
        build_distribution(g, &[(p(0, 0), 0.4), (p(1, 0), 0.1), (p(1, 1), 0.5)]).unwrap()
    }

    /// Moments by direct expectation over the support, written independently.
    fn brute_moments(g: &MatchingGraph, d: &ArrivalDistribution, xi: &[i8]) -> (Vec<f64>, f64, f64) {
        let mut alpha = vec![0.0; g.dim()];
        let (mut m1, mut m2) = (0.0, 0.0);
        for (pair, mass) in d.entries() {
            let mut a = vec![0.0; g.dim()];
            a[pair.demand] = 1.0;
            a[g.n_demand() + pair.supply] = 1.0;
            let v: f64 = a.iter().zip(xi).map(|(a, &x)| a * x as f64).sum();
            for (al, ak) in alpha.iter_mut().zip(&a) {
                *al += mass * ak;
            }
            m1 += mass * v;
            m2 += mass * v * v;
        }
        (alpha, -m1, m2 - m1 * m1)
    }

    #[test]
    fn build_errors() {
        let g = MatchingGraph::new(1, 1, vec![p(0, 0)], vec![p(0, 0)], 4).unwrap();
        assert!(build_distribution(&g, &[(p(0, 0), 1.0)]).is_ok());
        let g = path2();
        assert_eq!(
            build_distribution(&g, &[(p(0, 1), 0.5), (p(0, 0), 0.5)]).unwrap_err(),
            ArrivalError::UnsupportedPair(p(0, 1))
        );
        assert!(matches!(
            build_distribution(&g, &[(p(0, 0), 0.4), (p(1, 1), 0.5)]),
            Err(ArrivalError::NotNormalized(_))
        ));
        assert_eq!(
            build_distribution(&g, &[(p(0, 0), 0.5), (p(0, 0), 0.5)]).unwrap_err(),
            ArrivalError::DuplicatePair(p(0, 0))
        );
        assert_eq!(
            build_distribution(&g, &[(p(0, 0), -0.5), (p(1, 1), 1.5)]).unwrap_err(),
            ArrivalError::InvalidMass(p(0, 0))
        );
    }

    #[test]
    fn moments_path2() {
        let g = path2();
        let d = path2_dist(&g);
        let xi = workload_vector(&g, &DemandSet::new(vec![0])).unwrap();
        let m = moments(&d, &xi);
        for (a, b) in m.alpha.iter().zip([0.4, 0.6, 0.5, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((m.delta - 0.1).abs() < 1e-12);
        // only (d2,s1) moves the workload
        assert!((m.sigma2_delta - 0.09).abs() < 1e-12);
        let (alpha, delta, s2) = brute_moments(&g, &d, xi.xi());
        assert_eq!(alpha.len(), 4);
        assert!((delta - m.delta).abs() < 1e-12);
        assert!((s2 - m.sigma2_delta).abs() < 1e-12);
        // the balance direction has zero drift
        let bal: f64 = g
            .balance_vector()
            .iter()
            .zip(&m.alpha)
            .map(|(&b, a)| b as f64 * a)
            .sum();
        assert!(bal.abs() < 1e-12);
    }

    #[test]
    fn degenerate_point_mass() {
        let g = MatchingGraph::new(2, 2, vec![p(0, 0), p(1, 0), p(1, 1)], vec![p(0, 0), p(1, 1)], 4)
            .unwrap();
        let d = build_distribution(&g, &[(p(0, 0), 1.0)]).unwrap();
        let xi = workload_vector(&g, &DemandSet::new(vec![0])).unwrap();
        let m = moments(&d, &xi);
        assert_eq!(m.delta, 0.0);
        assert_eq!(m.sigma2_delta, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| d.sample(&mut rng) == p(0, 0)));
    }

    #[test]
    fn sampling_frequencies_and_determinism() {
        let g = path2();
        let d = path2_dist(&g);
        let n = 1_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let s = d.sample(&mut rng);
            counts[d.pairs().iter().position(|q| *q == s).unwrap()] += 1;
        }
        for (c, &pr) in counts.iter().zip(d.probs()) {
            let se = (pr * (1.0 - pr) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - pr).abs() < 4.0 * se);
        }
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let sa: Vec<Pair> = (0..1000).map(|_| d.sample(&mut a)).collect();
        let sb: Vec<Pair> = (0..1000).map(|_| d.sample(&mut b)).collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn family_interpolates_drift() {
        let g = path2();
        let xi = workload_vector(&g, &DemandSet::new(vec![0])).unwrap();
        let e0 = build_distribution(&g, &[(p(0, 0), 0.5), (p(1, 1), 0.5)]).unwrap();
        let e1 = path2_dist(&g);
        let fam = ArrivalFamily::new(e0.clone(), e1, &xi).unwrap();
        assert_eq!(fam.endpoint_drifts(), (0.0, moments(&path2_dist(&g), &xi).delta));
        let b = fam.continuity_constant();
        for &delta in &[0.0, 0.01, 0.05, 0.1] {
            let d = fam.at(&g, delta).unwrap();
            assert!((moments(&d, &xi).delta - delta).abs() < 1e-12);
            // exact l1 distance under the maximal coupling
            let tv: f64 = 0.5
                * [p(0, 0), p(1, 0), p(1, 1)]
                    .iter()
                    .map(|&q| (d.mass(q) - e0.mass(q)).abs())
                    .sum::<f64>();
            assert!(4.0 * tv <= b * delta + 1e-12);
        }
        assert!(matches!(fam.at(&g, 0.2), Err(ArrivalError::DriftOutOfRange { .. })));
    }

    #[test]
    fn separation_and_cross_checks() {
        let g = path2();
        let d = path2_dist(&g);
        let xi = workload_vector(&g, &DemandSet::new(vec![0])).unwrap();
        let r = check_separation(&g, &d, &xi, 0.1).unwrap();
        // D' = {d2}: alpha_d2 - alpha_s1 - alpha_s2 = -0.4
        assert!(r.satisfied);
        assert!((r.worst_other.unwrap().1 + 0.4).abs() < 1e-12);
        let r = check_cross_arrivals(&g, &d, &xi, 0.05);
        assert!(r.satisfied);
        assert_eq!(r.best_pair, Some(p(1, 0)));
        assert!(!check_cross_arrivals(&g, &d, &xi, 0.2).satisfied);
    }
}
