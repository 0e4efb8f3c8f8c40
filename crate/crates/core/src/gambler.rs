//! Gambler's ruin for a ±1 chain and the shared-uniform comparison of a
//! history-dependent chain with its i.i.d. floor chain.
//!
//! Both chains read the same uniform U_n at step n. The dominated chain
//! steps down when U_n < 1 − q_n, the floor chain when U_n < 1 − p. With
//! q_n ≥ p every down-step of the first is also a down-step of the second,
//! so the first path never falls below the second.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ordered_map;
use crate::rng::{derive, tag, walk_rng};
use crate::stats::EstimateWithCI;

const SIMULATE: u64 = 1;
const PAIR: u64 = 2;
const REACH: u64 = 3;

/// Tolerance when comparing a conditional probability with its floor.
const FLOOR_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuinProblem {
    /// Up-step probability.
    pub p: f64,
    pub alpha1: i64,
    pub alpha: i64,
    pub alpha2: i64,
}

impl RuinProblem {
    pub fn new(p: f64, alpha1: i64, alpha: i64, alpha2: i64) -> Result<Self> {
        let r = RuinProblem { p, alpha1, alpha, alpha2 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Argument(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if !(self.alpha1 <= self.alpha && self.alpha <= self.alpha2) || self.alpha1 == self.alpha2 {
            return Err(Error::Argument(format!(
                "levels must satisfy alpha1 <= alpha <= alpha2 with alpha1 < alpha2, got ({}, {}, {})",
                self.alpha1, self.alpha, self.alpha2
            )));
        }
        Ok(())
    }
}

/// Probability that the chain started at α reaches α₂ before α₁.
///
/// With r = ln(p/(1−p)), D = α₂ − α₁ and u = α₂ − α the closed form
/// (e^{ur} − e^{Dr})/(1 − e^{Dr}) is rewritten with expm1 so that no power
/// is ever formed explicitly.
pub fn ruin_probability(problem: &RuinProblem) -> Result<f64> {
    problem.validate()?;
    if problem.p == 0.5 {
        return Err(Error::Unsupported("closed form requires p != 1/2".into()));
    }
    if problem.alpha == problem.alpha2 {
        return Ok(1.0);
    }
    if problem.alpha == problem.alpha1 {
        return Ok(0.0);
    }
    let r = (problem.p / (1.0 - problem.p)).ln();
    let d = (problem.alpha2 - problem.alpha1) as f64;
    let u = (problem.alpha2 - problem.alpha) as f64;
    let value = if r > 0.0 {
        libm::expm1(-(d - u) * r) / libm::expm1(-d * r)
    } else {
        (u * r).exp() * libm::expm1((d - u) * r) / libm::expm1(d * r)
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Runs the chain until it leaves (α₁, α₂); true when it exits at the top.
fn run_to_exit<R: Rng, F: Fn(&[i64]) -> f64>(
    rng: &mut R,
    start: i64,
    lo: i64,
    hi: i64,
    up_prob: &F,
    floor: Option<f64>,
) -> Result<bool> {
    let mut path = vec![start];
    let mut x = start;
    while x > lo && x < hi {
        let q = up_prob(&path);
        if let Some(f) = floor {
            if q < f - FLOOR_SLACK {
                return Err(Error::Contract { step: path.len() - 1, prob: q, floor: f });
            }
        }
        let u: f64 = rng.random();
        x += if u < 1.0 - q { -1 } else { 1 };
        path.push(x);
    }
    Ok(x >= hi)
}

fn interior(problem: &RuinProblem) -> Result<()> {
    problem.validate()?;
    if problem.alpha2 - problem.alpha1 < 2 || problem.alpha == problem.alpha1 || problem.alpha == problem.alpha2 {
        return Err(Error::Argument(format!(
            "simulation needs alpha1 < alpha < alpha2, got ({}, {}, {})",
            problem.alpha1, problem.alpha, problem.alpha2
        )));
    }
    Ok(())
}

/// Monte Carlo frequency of reaching α₂ first, with binomial standard error.
pub fn simulate_ruin(problem: &RuinProblem, paths: usize, seed: u64) -> Result<EstimateWithCI> {
    interior(problem)?;
    if paths == 0 {
        return Err(Error::Argument("at least one path is required".into()));
    }
    let p = problem.p;
    let hits = ordered_map(paths, |k| {
        let mut rng = walk_rng(derive(seed, &[tag::GAMBLER, SIMULATE, k as u64]));
        run_to_exit(&mut rng, problem.alpha, problem.alpha1, problem.alpha2, &|_: &[i64]| p, None)
    })?;
    Ok(binomial_estimate(&hits, "monte_carlo"))
}

fn binomial_estimate(hits: &[bool], method: &str) -> EstimateWithCI {
    let m = hits.len() as f64;
    let prob = hits.iter().filter(|&&h| h).count() as f64 / m;
    EstimateWithCI::scalar(prob, (prob * (1.0 - prob) / m).sqrt(), hits.len(), method)
}

/// Paths of the two chains driven by one sequence of uniforms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DominatedPair {
    pub shared_uniforms: Vec<f64>,
    /// q_n, the up-step probability of the dominated chain at step n.
    pub conditional_up_probs: Vec<f64>,
    pub floor: f64,
    /// X*_0..X*_N
    pub dominated: Vec<i64>,
    /// X̃*_0..X̃*_N
    pub floor_chain: Vec<i64>,
}

impl DominatedPair {
    /// Steps n with X*_n < X̃*_n.
    pub fn violations(&self) -> usize {
        self.dominated.iter().zip(&self.floor_chain).filter(|(a, b)| a < b).count()
    }
}

/// Builds the coupled pair. `up_prob` receives the dominated path so far
/// and must return a probability ≥ `floor`; a smaller value is reported as
/// a contract violation at that step.
pub fn build_dominated_pair<F: Fn(&[i64]) -> f64>(
    up_prob: F,
    floor: f64,
    n_steps: usize,
    seed: u64,
) -> Result<DominatedPair> {
    build_pair_from(up_prob, floor, n_steps, derive(seed, &[tag::GAMBLER, PAIR]))
}

fn build_pair_from<F: Fn(&[i64]) -> f64>(up_prob: F, floor: f64, n_steps: usize, stream: u64) -> Result<DominatedPair> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::Argument(format!("floor must lie in (0, 1), got {floor}")));
    }
    let mut rng = walk_rng(stream);
    let mut pair = DominatedPair {
        shared_uniforms: Vec::with_capacity(n_steps),
        conditional_up_probs: Vec::with_capacity(n_steps),
        floor,
        dominated: vec![0],
        floor_chain: vec![0],
    };
    pair.dominated.reserve(n_steps);
    pair.floor_chain.reserve(n_steps);
    for n in 0..n_steps {
        let q = up_prob(&pair.dominated);
        if !(q <= 1.0) || q < floor - FLOOR_SLACK {
            return Err(Error::Contract { step: n, prob: q, floor });
        }
        let u: f64 = rng.random();
        let x = pair.dominated[n] + if u < 1.0 - q { -1 } else { 1 };
        let y = pair.floor_chain[n] + if u < 1.0 - floor { -1 } else { 1 };
        pair.shared_uniforms.push(u);
        pair.conditional_up_probs.push(q);
        pair.dominated.push(x);
        pair.floor_chain.push(y);
    }
    Ok(pair)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DominationReport {
    pub paths: usize,
    pub steps: usize,
    pub violations: usize,
    pub violating_paths: usize,
}

/// Builds `paths` independent coupled pairs and counts X*_n < X̃*_n.
pub fn check_domination<F: Fn(&[i64]) -> f64 + Sync>(
    up_prob: F,
    floor: f64,
    paths: usize,
    steps: usize,
    seed: u64,
) -> Result<DominationReport> {
    let counts = ordered_map(paths, |k| {
        let stream = derive(seed, &[tag::GAMBLER, PAIR, k as u64]);
        Ok(build_pair_from(&up_prob, floor, steps, stream)?.violations())
    })?;
    Ok(DominationReport {
        paths,
        steps,
        violations: counts.iter().sum(),
        violating_paths: counts.iter().filter(|&&c| c > 0).count(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReachBound {
    pub dominated_prob: EstimateWithCI,
    pub floor_chain_prob: f64,
    /// estimate + 3 SE ≥ closed form
    pub holds: bool,
}

/// Reach-α₂-first probability of the history-dependent chain against the
/// closed form of its floor chain.
pub fn reach_probability_bound<F: Fn(&[i64]) -> f64 + Sync>(
    up_prob: F,
    floor: f64,
    levels: (i64, i64, i64),
    paths: usize,
    seed: u64,
) -> Result<ReachBound> {
    let (alpha1, alpha, alpha2) = levels;
    let floor_problem = RuinProblem::new(floor, alpha1, alpha, alpha2)?;
    interior(&floor_problem)?;
    let floor_chain_prob = ruin_probability(&floor_problem)?;
    if paths == 0 {
        return Err(Error::Argument("at least one path is required".into()));
    }
    let hits = ordered_map(paths, |k| {
        let mut rng = walk_rng(derive(seed, &[tag::GAMBLER, REACH, k as u64]));
        run_to_exit(&mut rng, alpha, alpha1, alpha2, &up_prob, Some(floor))
    })?;
    let dominated_prob = binomial_estimate(&hits, "monte_carlo");
    let holds = dominated_prob.get() + 3.0 * dominated_prob.se() >= floor_chain_prob;
    Ok(ReachBound { dominated_prob, floor_chain_prob, holds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_value() {
        let r = ruin_probability(&RuinProblem::new(0.6, 0, 1, 3).unwrap()).unwrap();
        assert!((r - 9.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn boundaries_and_half() {
        assert_eq!(ruin_probability(&RuinProblem::new(0.3, 0, 5, 5).unwrap()).unwrap(), 1.0);
        assert_eq!(ruin_probability(&RuinProblem::new(0.3, 0, 0, 5).unwrap()).unwrap(), 0.0);
        assert!(matches!(ruin_probability(&RuinProblem::new(0.5, 0, 1, 3).unwrap()), Err(Error::Unsupported(_))));
        assert!(RuinProblem::new(0.6, 3, 1, 0).is_err());
    }

    #[test]
    fn large_exponents_stay_finite() {
        // (p/(1−p))^D far beyond f64 range
        let up = ruin_probability(&RuinProblem::new(0.9, 0, 1, 5000).unwrap()).unwrap();
        assert!((up - (1.0 - 1.0 / 9.0)).abs() < 1e-12);
        let down = ruin_probability(&RuinProblem::new(0.1, 0, 4999, 5000).unwrap()).unwrap();
        assert!((down - 1.0 / 9.0).abs() < 1e-12);
        let tiny = ruin_probability(&RuinProblem::new(0.1, 0, 1, 5000).unwrap()).unwrap();
        assert!(tiny >= 0.0 && tiny < 1e-300);
    }

    #[test]
    fn complement_symmetry() {
        // P_p(top from α) + P_{1−p}(top from the mirrored start) = 1
        for &(p, a1, a, a2) in &[(0.6, 0, 1, 3), (0.3, -2, 4, 9), (0.55, 0, 7, 20)] {
            let x = ruin_probability(&RuinProblem::new(p, a1, a, a2).unwrap()).unwrap();
            let y = ruin_probability(&RuinProblem::new(1.0 - p, a1, a1 + a2 - a, a2).unwrap()).unwrap();
            assert!((x + y - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_in_p() {
        let ps: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).filter(|&p| p != 0.5).collect();
        let vals: Vec<f64> =
            ps.iter().map(|&p| ruin_probability(&RuinProblem::new(p, 0, 3, 10).unwrap()).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn simulation_edges() {
        // with one interior level the first step decides
        let problem = RuinProblem::new(0.99, 0, 1, 2).unwrap();
        let exact = ruin_probability(&problem).unwrap();
        assert!((exact - 0.99).abs() < 1e-14);
        let sure = simulate_ruin(&problem, 20_000, 1).unwrap();
        let se = (exact * (1.0 - exact) / 20_000.0).sqrt();
        assert!((sure.get() - exact).abs() < 3.0 * se.max(sure.se()) + 1.0 / 20_000.0);
        assert!(simulate_ruin(&RuinProblem::new(0.6, 0, 0, 1).unwrap(), 10, 1).is_err());
        assert!(simulate_ruin(&RuinProblem::new(0.6, 0, 1, 3).unwrap(), 0, 1).is_err());
    }

    #[test]
    fn coupling_collapses_at_floor() {
        let pair = build_dominated_pair(|_| 0.55, 0.55, 500, 4).unwrap();
        assert_eq!(pair.dominated, pair.floor_chain);
        let up = build_dominated_pair(|_| 1.0, 0.55, 500, 4).unwrap();
        assert!(up.dominated.windows(2).all(|w| w[1] == w[0] + 1));
        assert_eq!(up.violations(), 0);
    }

    #[test]
    fn floor_violation_names_step() {
        let err = build_dominated_pair(|h: &[i64]| if h.len() > 7 { 0.4 } else { 0.8 }, 0.55, 20, 0).unwrap_err();
        assert!(matches!(err, Error::Contract { step: 7, .. }), "{err:?}");
    }

    #[test]
    fn reach_bound_improves_with_margin() {
        let same = reach_probability_bound(|_| 0.6, 0.6, (0, 1, 3), 20_000, 3).unwrap();
        assert!((same.floor_chain_prob - 9.0 / 19.0).abs() < 1e-14);
        assert!((same.dominated_prob.get() - same.floor_chain_prob).abs() < 3.0 * same.dominated_prob.se());
        let better = reach_probability_bound(|_| 0.7, 0.6, (0, 1, 3), 100_000, 3).unwrap();
        let target = ruin_probability(&RuinProblem::new(0.7, 0, 1, 3).unwrap()).unwrap();
        assert!(better.dominated_prob.get() - 3.0 * better.dominated_prob.se() > better.floor_chain_prob);
        assert!((better.dominated_prob.get() - target).abs() < 4.0 * better.dominated_prob.se());
    }
}
