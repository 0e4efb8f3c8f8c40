//! Monte Carlo estimators and scaling fits.
//!
//! Every estimator returns a report that can be rendered as a CSV table of
//! raw grid points and serialized as a JSON summary.

pub mod clt;
pub mod drift;
pub mod iid;
pub mod ldp;
pub mod quenched;
pub mod two_walk;
pub mod variance;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::lattice::LatticePoint;
use crate::rng::walk_rng;
use crate::stats::ScalingFit;

pub use iid::BlockSampler;

/// How the centering drift v and covariance Σ² are obtained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    /// Exact base moments for environment-free kernels, otherwise in-sample.
    #[default]
    Auto,
    /// Estimated from the same replicates.
    InSample,
    /// Supplied values; `sigma2` is row-major d×d.
    Fixed { drift: Vec<f64>, sigma2: Option<Vec<f64>> },
}

/// Resolved centering: drift and, when known, Σ².
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Moments {
    pub drift: Option<Vec<f64>>,
    pub sigma2: Option<Vec<f64>>,
}

impl Reference {
    pub(crate) fn resolve(&self, exp: &Experiment) -> Result<Moments> {
        let d = exp.dim();
        match self {
            Reference::Auto if exp.kernel.is_environment_free() => {
                let (mean, cov) = exp.kernel.base_moments();
                Ok(Moments { drift: Some(mean), sigma2: Some(cov.concat()) })
            }
            Reference::Auto | Reference::InSample => Ok(Moments { drift: None, sigma2: None }),
            Reference::Fixed { drift, sigma2 } => {
                if drift.len() != d {
                    return Err(Error::Argument(format!("reference drift has {} entries, need {d}", drift.len())));
                }
                if let Some(s) = sigma2 {
                    if s.len() != d * d {
                        return Err(Error::Argument(format!(
                            "reference sigma2 has {} entries, need {}",
                            s.len(),
                            d * d
                        )));
                    }
                }
                Ok(Moments { drift: Some(drift.clone()), sigma2: sigma2.clone() })
            }
        }
    }
}

/// Raw grid rows with a header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }
}

/// Formats a vector as `a;b;c` to keep CSV cells scalar.
pub(crate) fn cell(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Common view of estimator outputs.
pub trait Report: Serialize {
    fn table(&self) -> Table;
    fn fit(&self) -> Option<&ScalingFit> {
        None
    }
}

/// Draws walk endpoints, by block sampling when the kernel ignores θ and by
/// stepwise simulation otherwise.
pub(crate) enum Endpoints {
    Block(BlockSampler),
    Stepwise,
}

impl Endpoints {
    pub fn for_experiment(exp: &Experiment, allow_block: bool) -> Result<Self> {
        if allow_block && exp.kernel.is_environment_free() {
            Ok(Endpoints::Block(BlockSampler::for_kernel(&exp.kernel)?))
        } else {
            Ok(Endpoints::Stepwise)
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            Endpoints::Block(_) => "block",
            Endpoints::Stepwise => "stepwise",
        }
    }

    /// Positions X_n (relative to the start) at each increasing `times[i]`.
    pub fn nested(
        &self,
        exp: &Experiment,
        env_seed: u64,
        walk_seed: u64,
        times: &[u64],
    ) -> Result<Vec<LatticePoint>> {
        let mut out = Vec::with_capacity(times.len());
        match self {
            Endpoints::Block(s) => {
                let mut rng = walk_rng(walk_seed);
                let mut x = LatticePoint::zero();
                let mut t = 0;
                for &n in times {
                    x = x + s.sample(&mut rng, n - t);
                    t = n;
                    out.push(x);
                }
            }
            Endpoints::Stepwise => {
                let last = times.last().copied().unwrap_or(0);
                let mut x = LatticePoint::zero();
                let mut next = 0;
                while next < times.len() && times[next] == 0 {
                    out.push(x);
                    next += 1;
                }
                exp.run_walk(env_seed, walk_seed, last, |k, z, _| {
                    x = x + *z;
                    while next < times.len() && times[next] == k + 1 {
                        out.push(x);
                        next += 1;
                    }
                })?;
            }
        }
        Ok(out)
    }
}

/// Checks a grid is nonempty, positive and strictly increasing.
pub(crate) fn check_grid(name: &str, grid: &[u64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Argument(format!("{name} is empty")));
    }
    if grid[0] == 0 {
        return Err(Error::Argument(format!("{name} must be positive")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

pub(crate) fn check_replicates(m: usize, min: usize) -> Result<()> {
    if m < min {
        return Err(Error::Argument(format!("need at least {min} replicates, got {m}")));
    }
    Ok(())
}

/// Sample mean vector and row-major covariance (denominator M − 1).
pub(crate) fn mean_cov(points: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let m = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for i in 0..d {
            mean[i] += p[i];
        }
    }
    mean.iter_mut().for_each(|x| *x /= m);
    let mut cov = vec![0.0; d * d];
    for p in points {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (p[i] - mean[i]) * (p[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|x| *x /= m - 1.0);
    (mean, cov)
}

/// ⟨t, Σ t⟩ for row-major Σ.
pub(crate) fn quad(t: &[f64], sigma: &[f64]) -> f64 {
    let d = t.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += t[i] * sigma[i * d + j] * t[j];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvModel;
    use crate::kernel::Kernel;
    use crate::map::tripling;

    #[test]
    fn stepwise_nested_matches_single_runs() {
        let k = Kernel::nearest_neighbour(0.5, 0.5, 0.05).unwrap();
        let exp = Experiment::new(EnvModel::preferred(tripling().unwrap(), 1).unwrap(), k, 3).unwrap();
        let e = Endpoints::for_experiment(&exp, true).unwrap();
        assert_eq!(e.method(), "stepwise");
        let xs = e.nested(&exp, 11, 12, &[0, 4, 16]).unwrap();
        let end = exp.run_walk(11, 12, 16, |_, _, _| {}).unwrap();
        assert_eq!(xs[0], LatticePoint::zero());
        assert_eq!(xs[2], end);
        let four = exp.run_walk(11, 12, 4, |_, _, _| {}).unwrap();
        assert_eq!(xs[1], four);
    }

    #[test]
    fn csv_rendering() {
        let mut t = Table::new(&["n", "v"]);
        t.push(vec!["1".into(), cell(&[0.5, 0.25])]);
        assert_eq!(t.to_csv(), "n,v\n1,0.5;0.25\n");
    }
}
