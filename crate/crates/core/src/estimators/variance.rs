//! Diffusivity Σ² by the Green–Kubo lag sum and by the spread of X_N.
//!
//! Green–Kubo: after `burn_in` steps, each replicate records `n_steps`
//! increments and accumulates the lagged products Σ_k Δ_k ⊗ Δ_{k−n} for
//! n = 0..=K together with the partial sums needed to center them exactly
//! at any drift. Then Γ(n) = E[(Δ_n − v) ⊗ (Δ_0 − v)] and
//! Σ² = Γ(0) + Σ_{n=1}^{K} (Γ(n) + Γ(n)ᵀ). Standard errors are delete-one
//! jackknife over replicates.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{cell, check_replicates, Reference, Report, Table};
use crate::error::{Error, Result};
use crate::experiment::{ordered_map, Experiment};
use crate::lattice::MAX_DIM;
use crate::rng::tag;
use crate::stats::{jackknife_se, max_abs, EstimateWithCI};

pub const DEFAULT_BURN_IN: u64 = 200;
pub const DEFAULT_LAG_CUTOFF: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenKuboParams {
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    #[serde(default = "default_lag_cutoff")]
    pub lag_cutoff: usize,
    /// Increments recorded per replicate after burn-in.
    pub n_steps: u64,
    pub replicates: usize,
    #[serde(default)]
    pub reference: Reference,
}

fn default_burn_in() -> u64 {
    DEFAULT_BURN_IN
}

fn default_lag_cutoff() -> usize {
    DEFAULT_LAG_CUTOFF
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LagTerm {
    pub lag: usize,
    pub gamma: Vec<f64>,
    pub std_error: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GreenKuboReport {
    pub sigma2: EstimateWithCI,
    pub drift: Vec<f64>,
    pub lags: Vec<LagTerm>,
    /// max |Γ(K)| entry, the truncation diagnostic.
    pub tail_term: f64,
    pub burn_in: u64,
    pub lag_cutoff: usize,
    pub n_steps: u64,
}

/// Sums from one replicate.
struct LagSums {
    /// (K+1)·d² products, later index first.
    prod: Vec<f64>,
    /// Σ_{k<T−n} Δ_k, (K+1)·d.
    head: Vec<f64>,
    /// Σ_{k≥n} Δ_k, (K+1)·d.
    tail: Vec<f64>,
}

impl LagSums {
    fn zeros(lags: usize, d: usize) -> Self {
        LagSums { prod: vec![0.0; lags * d * d], head: vec![0.0; lags * d], tail: vec![0.0; lags * d] }
    }

    fn add(&mut self, o: &LagSums, sign: f64) {
        for (a, b) in self.prod.iter_mut().zip(&o.prod) {
            *a += sign * b;
        }
        for (a, b) in self.head.iter_mut().zip(&o.head) {
            *a += sign * b;
        }
        for (a, b) in self.tail.iter_mut().zip(&o.tail) {
            *a += sign * b;
        }
    }
}

fn replicate_sums(exp: &Experiment, p: &GreenKuboParams, r: u64) -> Result<LagSums> {
    let d = exp.dim();
    let lags = p.lag_cutoff + 1;
    let t = p.n_steps;
    let mut s = LagSums::zeros(lags, d);
    let mut recent: VecDeque<[f64; MAX_DIM]> = VecDeque::with_capacity(lags);
    let mut first = vec![0.0; lags * d];
    let mut total = [0.0; MAX_DIM];
    exp.run_walk(
        exp.env_seed(tag::GREEN_KUBO, 0, r),
        exp.walk_seed(tag::GREEN_KUBO, 0, r, 0),
        p.burn_in + t,
        |step, z, _| {
            if step < p.burn_in {
                return;
            }
            let k = (step - p.burn_in) as usize;
            let mut dz = [0.0; MAX_DIM];
            for i in 0..d {
                dz[i] = z.coords[i] as f64;
                total[i] += dz[i];
            }
            if k < lags {
                // prefix sums Σ_{j≤k} Δ_j
                for i in 0..d {
                    first[k * d + i] = total[i];
                }
            }
            if recent.len() == lags {
                recent.pop_back();
            }
            recent.push_front(dz);
            for (n, earlier) in recent.iter().enumerate() {
                let row = &mut s.prod[n * d * d..(n + 1) * d * d];
                for i in 0..d {
                    for j in 0..d {
                        row[i * d + j] += dz[i] * earlier[j];
                    }
                }
            }
        },
    )?;
    // recent[j] is Δ_{T−1−j}; head(n) drops the last n, tail(n) the first n.
    let mut last = [0.0; MAX_DIM];
    for n in 0..lags {
        for i in 0..d {
            let prefix = if n == 0 { 0.0 } else { first[(n - 1) * d + i] };
            s.head[n * d + i] = total[i] - last[i];
            s.tail[n * d + i] = total[i] - prefix;
        }
        if let Some(x) = recent.get(n) {
            for i in 0..d {
                last[i] += x[i];
            }
        }
    }
    Ok(s)
}

/// Γ(n) for all lags and Σ², from summed statistics over `m` replicates.
fn assemble(s: &LagSums, v: &[f64], m: f64, t: u64, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let lags = s.head.len() / d;
    let mut gammas = Vec::with_capacity(lags);
    let mut sigma = vec![0.0; d * d];
    for n in 0..lags {
        let cnt = m * (t - n as u64) as f64;
        let mut g = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let c = s.prod[n * d * d + i * d + j] - s.tail[n * d + i] * v[j] - v[i] * s.head[n * d + j]
                    + cnt * v[i] * v[j];
                g[i * d + j] = c / cnt;
            }
        }
        for i in 0..d {
            for j in 0..d {
                sigma[i * d + j] += if n == 0 { g[i * d + j] } else { g[i * d + j] + g[j * d + i] };
            }
        }
        gammas.push(g);
    }
    (gammas, sigma)
}

pub fn variance_green_kubo(exp: &Experiment, p: &GreenKuboParams) -> Result<GreenKuboReport> {
    if p.lag_cutoff < 1 {
        return Err(Error::Argument("lag cutoff K must be ≥ 1".into()));
    }
    if p.n_steps <= p.lag_cutoff as u64 {
        return Err(Error::Argument(format!(
            "n_steps = {} must exceed the lag cutoff {}",
            p.n_steps, p.lag_cutoff
        )));
    }
    check_replicates(p.replicates, 2)?;
    let d = exp.dim();
    let fixed = p.reference.resolve(exp)?.drift;
    let per = ordered_map(p.replicates, |r| replicate_sums(exp, p, r as u64))?;
    let mut total = LagSums::zeros(p.lag_cutoff + 1, d);
    for s in &per {
        total.add(s, 1.0);
    }
    let m = p.replicates as f64;
    let t = p.n_steps;
    let drift_of = |s: &LagSums, m: f64| -> Vec<f64> {
        match &fixed {
            Some(v) => v.clone(),
            None => s.head[..d].iter().map(|x| x / (m * t as f64)).collect(),
        }
    };
    let v = drift_of(&total, m);
    let (gammas, sigma) = assemble(&total, &v, m, t, d);
    let asym = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| (sigma[i * d + j] - sigma[j * d + i]).abs())
        .fold(0.0, f64::max);
    if asym > 1e-9 * (1.0 + max_abs(&sigma)) {
        return Err(Error::Numerical { message: "Green–Kubo sum is not symmetric".into(), residual: asym });
    }

    let lags = p.lag_cutoff + 1;
    let mut loo_sigma = vec![Vec::with_capacity(per.len()); d * d];
    let mut loo_gamma = vec![vec![Vec::with_capacity(per.len()); d * d]; lags];
    let mut work = LagSums::zeros(lags, d);
    for s in &per {
        work.prod.copy_from_slice(&total.prod);
        work.head.copy_from_slice(&total.head);
        work.tail.copy_from_slice(&total.tail);
        work.add(s, -1.0);
        let v = drift_of(&work, m - 1.0);
        let (g, sg) = assemble(&work, &v, m - 1.0, t, d);
        for e in 0..d * d {
            loo_sigma[e].push(sg[e]);
            for n in 0..lags {
                loo_gamma[n][e].push(g[n][e]);
            }
        }
    }
    let sigma_se: Vec<f64> = loo_sigma.iter().map(|x| jackknife_se(x)).collect();
    let lag_terms: Vec<LagTerm> = gammas
        .iter()
        .enumerate()
        .map(|(n, g)| LagTerm {
            lag: n,
            gamma: g.clone(),
            std_error: loo_gamma[n].iter().map(|x| jackknife_se(x)).collect(),
        })
        .collect();
    Ok(GreenKuboReport {
        sigma2: EstimateWithCI::matrix(d, sigma, sigma_se, p.replicates, "green_kubo"),
        drift: v,
        tail_term: max_abs(&gammas[p.lag_cutoff]),
        lags: lag_terms,
        burn_in: p.burn_in,
        lag_cutoff: p.lag_cutoff,
        n_steps: p.n_steps,
    })
}

impl Report for GreenKuboReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["lag", "gamma", "std_error"]);
        for l in &self.lags {
            t.push(vec![l.lag.to_string(), cell(&l.gamma), cell(&l.std_error)]);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalParams {
    pub n: u64,
    pub replicates: usize,
    #[serde(default)]
    pub reference: Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalReport {
    pub n: u64,
    pub sigma2: EstimateWithCI,
    pub drift: Vec<f64>,
}

/// Sample covariance of (X_N − v̂N)/√N.
pub fn variance_empirical(exp: &Experiment, p: &EmpiricalParams) -> Result<EmpiricalReport> {
    if p.n == 0 {
        return Err(Error::Argument("N must be positive".into()));
    }
    check_replicates(p.replicates, 2)?;
    let d = exp.dim();
    let fixed = p.reference.resolve(exp)?.drift;
    let xs = super::drift::scaled_endpoints(exp, tag::EMPIRICAL, p.n, p.replicates)?;
    let m = xs.len() as f64;
    let dof = if fixed.is_some() { m } else { m - 1.0 };
    let v = match fixed {
        Some(v) => v,
        None => (0..d).map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / m).collect(),
    };
    let sn = (p.n as f64).sqrt();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| (0..d).map(|i| (x[i] - v[i]) * sn).collect()).collect();
    let mut cov = vec![0.0; d * d];
    let mut se = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let prods: Vec<f64> = ys.iter().map(|y| y[i] * y[j]).collect();
            let c = prods.iter().sum::<f64>() / dof;
            let mean = prods.iter().sum::<f64>() / m;
            let var = prods.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (m - 1.0);
            cov[i * d + j] = c;
            se[i * d + j] = (var / m).sqrt();
        }
    }
    Ok(EmpiricalReport {
        n: p.n,
        sigma2: EstimateWithCI::matrix(d, cov, se, p.replicates, "empirical"),
        drift: v,
    })
}

impl Report for EmpiricalReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["n", "replicates", "sigma2", "std_error"]);
        t.push(vec![
            self.n.to_string(),
            self.sigma2.replicates.to_string(),
            cell(&self.sigma2.value),
            cell(&self.sigma2.std_error),
        ]);
        t
    }
}
