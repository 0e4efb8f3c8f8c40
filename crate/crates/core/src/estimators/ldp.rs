//! Large-deviation tails P(‖X̃_m‖/m ≥ a) and their exponential rates.
//!
//! Each replicate is one path read at every m of the grid. For each a the
//! rate is minus the slope of ln P against m, fitted by least squares with
//! the event counts as weights over the points with at least one event.

use serde::{Deserialize, Serialize};

use super::{check_grid, check_replicates, Endpoints, Reference, Report, Table};
use crate::error::{Error, Result};
use crate::experiment::{chunked_reduce, Experiment};
use crate::rng::tag;
use crate::stats::{zero_event_upper_bound, Axes, ScalingFit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpParams {
    pub a_values: Vec<f64>,
    pub m_grid: Vec<u64>,
    pub replicates: usize,
    #[serde(default)]
    pub reference: Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailPoint {
    pub m: u64,
    pub events: u64,
    pub trials: u64,
    pub probability: f64,
    /// One-sided 95% bound, reported when no event was observed.
    pub upper_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailCurve {
    pub a: f64,
    /// True when a exceeds the largest possible speed, so P = 0 for all m.
    pub structurally_zero: bool,
    pub points: Vec<TailPoint>,
    pub fit: Option<ScalingFit>,
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRatio {
    pub a: f64,
    /// rate(2a)/rate(a)
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LdpReport {
    pub drift: Vec<f64>,
    pub curves: Vec<TailCurve>,
    pub ratios: Vec<RateRatio>,
    pub replicates: usize,
    pub sampler: String,
}

/// Replicates of the separate pilot run that estimates v when it is unknown.
pub const PILOT: usize = 10_000;

fn pilot_drift(exp: &Experiment, sampler: &Endpoints, m: u64, reps: usize) -> Result<Vec<f64>> {
    let d = exp.dim();
    let sum = chunked_reduce(
        reps,
        || vec![0.0; d],
        |acc, r| {
            let r = r as u64;
            let x = sampler.nested(exp, exp.env_seed(tag::LDP, 1, r), exp.walk_seed(tag::LDP, 1, r, 0), &[m])?[0];
            for i in 0..d {
                acc[i] += x.coords[i] as f64;
            }
            Ok(())
        },
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
    )?;
    Ok(sum.iter().map(|s| s / (reps as f64 * m as f64)).collect())
}

pub fn large_deviation_rate(exp: &Experiment, p: &LdpParams) -> Result<LdpReport> {
    check_grid("m grid", &p.m_grid)?;
    check_replicates(p.replicates, 1)?;
    if p.a_values.is_empty() || p.a_values.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::Argument("thresholds a must be positive".into()));
    }
    let d = exp.dim();
    let sampler = Endpoints::for_experiment(exp, true)?;
    let drift = match p.reference.resolve(exp)?.drift {
        Some(v) => v,
        None => pilot_drift(exp, &sampler, *p.m_grid.last().expect("grid"), p.replicates.min(PILOT))?,
    };
    let na = p.a_values.len();
    let nm = p.m_grid.len();
    let counts = chunked_reduce(
        p.replicates,
        || vec![0u64; na * nm],
        |acc, r| {
            let r = r as u64;
            let xs = sampler.nested(exp, exp.env_seed(tag::LDP, 0, r), exp.walk_seed(tag::LDP, 0, r, 0), &p.m_grid)?;
            for (k, (x, &m)) in xs.iter().zip(&p.m_grid).enumerate() {
                let dev = (0..d).map(|i| (x.coords[i] as f64 - drift[i] * m as f64).abs()).fold(0.0, f64::max);
                for (j, a) in p.a_values.iter().enumerate() {
                    if dev >= a * m as f64 * (1.0 - 1e-12) {
                        acc[j * nm + k] += 1;
                    }
                }
            }
            Ok(())
        },
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
    )?;
    let speed = exp.kernel.radius() as f64 + drift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let trials = p.replicates as u64;
    let mut curves = Vec::with_capacity(na);
    for (j, &a) in p.a_values.iter().enumerate() {
        let points: Vec<TailPoint> = p
            .m_grid
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                let events = counts[j * nm + k];
                TailPoint {
                    m,
                    events,
                    trials,
                    probability: events as f64 / trials as f64,
                    upper_bound: (events == 0).then(|| zero_event_upper_bound(trials)),
                }
            })
            .collect();
        let usable: Vec<(f64, f64, f64)> =
            points.iter().filter(|q| q.events > 0).map(|q| (q.m as f64, q.probability, q.events as f64)).collect();
        let fit = if usable.len() >= 2 { Some(ScalingFit::fit_weighted(Axes::SemiLog, &usable)?) } else { None };
        let rate = fit.as_ref().map(|f| -f.slope);
        curves.push(TailCurve { a, structurally_zero: a > speed, points, fit, rate });
    }
    let mut ratios = Vec::new();
    for c in &curves {
        if let Some(c2) = curves.iter().find(|c2| (c2.a - 2.0 * c.a).abs() < 1e-12) {
            if let (Some(r1), Some(r2)) = (c.rate, c2.rate) {
                ratios.push(RateRatio { a: c.a, ratio: r2 / r1 });
            }
        }
    }
    Ok(LdpReport { drift, curves, ratios, replicates: p.replicates, sampler: sampler.method().into() })
}

impl Report for LdpReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["a", "m", "events", "trials", "probability", "upper_bound"]);
        for c in &self.curves {
            for q in &c.points {
                t.push(vec![
                    c.a.to_string(),
                    q.m.to_string(),
                    q.events.to_string(),
                    q.trials.to_string(),
                    q.probability.to_string(),
                    q.upper_bound.map(|b| b.to_string()).unwrap_or_default(),
                ]);
            }
        }
        t
    }

    fn fit(&self) -> Option<&ScalingFit> {
        self.curves.first().and_then(|c| c.fit.as_ref())
    }
}

/// Cramér rate of the simple random walk, I(a) = ((1+a)/2)ln(1+a) + ((1−a)/2)ln(1−a).
pub fn simple_walk_rate(a: f64) -> f64 {
    0.5 * (1.0 + a) * (1.0 + a).ln() + 0.5 * (1.0 - a) * (1.0 - a).ln()
}
