//! Drift v̂ = mean of X_N/N over independent (θ, walk) replicates.

use serde::{Deserialize, Serialize};

use super::{cell, check_replicates, Report, Table};
use crate::error::{Error, Result};
use crate::experiment::{ordered_map, Experiment, CHUNK};
use crate::rng::tag;
use crate::stats::EstimateWithCI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftParams {
    pub n: u64,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchMean {
    pub batch: usize,
    pub replicates: usize,
    pub mean: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub n: u64,
    pub drift: EstimateWithCI,
    pub batches: Vec<BatchMean>,
}

/// Per-replicate X_N/N.
pub(crate) fn scaled_endpoints(exp: &Experiment, est: u64, n: u64, m: usize) -> Result<Vec<Vec<f64>>> {
    let d = exp.dim();
    ordered_map(m, |r| {
        let r = r as u64;
        let x = exp.run_walk(exp.env_seed(est, 0, r), exp.walk_seed(est, 0, r, 0), n, |_, _, _| {})?;
        Ok((0..d).map(|i| x.coords[i] as f64 / n as f64).collect())
    })
}

pub fn estimate_drift(exp: &Experiment, params: &DriftParams) -> Result<DriftReport> {
    if params.n == 0 {
        return Err(Error::Argument("N must be positive".into()));
    }
    check_replicates(params.replicates, 2)?;
    let d = exp.dim();
    let xs = scaled_endpoints(exp, tag::DRIFT, params.n, params.replicates)?;
    let m = xs.len() as f64;
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for x in &xs {
        for i in 0..d {
            mean[i] += x[i];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for x in &xs {
        for i in 0..d {
            sq[i] += (x[i] - mean[i]).powi(2);
        }
    }
    let se: Vec<f64> = sq.iter().map(|s| (s / (m - 1.0) / m).sqrt()).collect();
    let batches = xs
        .chunks(CHUNK)
        .enumerate()
        .map(|(b, chunk)| {
            let k = chunk.len() as f64;
            let mean = (0..d).map(|i| chunk.iter().map(|x| x[i]).sum::<f64>() / k).collect();
            BatchMean { batch: b, replicates: chunk.len(), mean }
        })
        .collect();
    Ok(DriftReport {
        n: params.n,
        drift: EstimateWithCI::vector(mean, se, params.replicates, "mean X_N/N"),
        batches,
    })
}

impl Report for DriftReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["batch", "replicates", "mean"]);
        for b in &self.batches {
            t.push(vec![b.batch.to_string(), b.replicates.to_string(), cell(&b.mean)]);
        }
        t
    }
}
