//! Annealed characteristic-function error and invariance-principle
//! diagnostics for the rescaled path.

use serde::{Deserialize, Serialize};

use super::{cell, check_grid, check_replicates, mean_cov, quad, Endpoints, Reference, Report, Table};
use crate::error::{Error, Result};
use crate::experiment::{ordered_map, Experiment};
use crate::rng::tag;
use crate::stats::{mean_se, Axes, ScalingFit};

/// Default |t| grid: 12 points from 0.25 to 3.
pub fn default_t_grid() -> Vec<f64> {
    (1..=12).map(|k| 0.25 * k as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfParams {
    pub n_grid: Vec<u64>,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    pub replicates: usize,
    #[serde(default = "in_sample")]
    pub reference: Reference,
}

fn in_sample() -> Reference {
    Reference::InSample
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CfPoint {
    pub n: u64,
    pub sup_error: f64,
    /// t vector attaining the supremum.
    pub argmax: Vec<f64>,
    pub noise_floor: f64,
    pub drift: Vec<f64>,
    pub sigma2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CfReport {
    pub points: Vec<CfPoint>,
    pub fit: ScalingFit,
    pub replicates: usize,
    pub sampler: String,
    pub warning: Option<String>,
}

/// t vectors: each magnitude along every axis and, for d > 1, along the
/// normalized diagonal.
fn t_vectors(d: usize, grid: &[f64]) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    if d > 1 {
        dirs.push(vec![1.0 / (d as f64).sqrt(); d]);
    }
    dirs.iter().flat_map(|u| grid.iter().map(move |s| u.iter().map(|c| c * s).collect())).collect()
}

/// Sup over `ts` of |mean e^{i⟨t,y⟩} − e^{−⟨t,Σt⟩/2}|, with its argmax.
pub(crate) fn cf_sup_error(ys: &[Vec<f64>], ts: &[Vec<f64>], sigma: &[f64]) -> (f64, Vec<f64>) {
    let m = ys.len() as f64;
    let mut best = (0.0, ts.first().cloned().unwrap_or_default());
    for t in ts {
        let (mut re, mut im) = (0.0, 0.0);
        for y in ys {
            let a: f64 = t.iter().zip(y).map(|(ti, yi)| ti * yi).sum();
            re += a.cos();
            im += a.sin();
        }
        let g = (-0.5 * quad(t, sigma)).exp();
        let err = ((re / m - g).powi(2) + (im / m).powi(2)).sqrt();
        if err > best.0 {
            best = (err, t.clone());
        }
    }
    best
}

pub fn annealed_cf_error(exp: &Experiment, p: &CfParams) -> Result<CfReport> {
    check_grid("N grid", &p.n_grid)?;
    check_replicates(p.replicates, 2)?;
    if p.t_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Argument("t grid must be finite".into()));
    }
    let d = exp.dim();
    let moments = p.reference.resolve(exp)?;
    let sampler = Endpoints::for_experiment(exp, true)?;
    let ts = t_vectors(d, &p.t_grid);
    let mut points = Vec::with_capacity(p.n_grid.len());
    for (slot, &n) in p.n_grid.iter().enumerate() {
        let slot = slot as u64;
        let xs = ordered_map(p.replicates, |r| {
            let r = r as u64;
            let x = sampler.nested(exp, exp.env_seed(tag::CF, slot, r), exp.walk_seed(tag::CF, slot, r, 0), &[n])?[0];
            Ok((0..d).map(|i| x.coords[i] as f64).collect::<Vec<f64>>())
        })?;
        let drift = match &moments.drift {
            Some(v) => v.clone(),
            None => mean_cov(&xs, d).0.iter().map(|x| x / n as f64).collect(),
        };
        let sn = (n as f64).sqrt();
        let ys: Vec<Vec<f64>> =
            xs.iter().map(|x| (0..d).map(|i| (x[i] - drift[i] * n as f64) / sn).collect()).collect();
        let sigma2 = match &moments.sigma2 {
            Some(s) => s.clone(),
            None => {
                let (_, c) = mean_cov(&ys, d);
                let m = ys.len() as f64;
                c.iter().map(|x| x * (m - 1.0) / m).collect()
            }
        };
        let (sup_error, argmax) = cf_sup_error(&ys, &ts, &sigma2);
        points.push(CfPoint {
            n,
            sup_error,
            argmax,
            noise_floor: 1.0 / (p.replicates as f64).sqrt(),
            drift,
            sigma2,
        });
    }
    let grid: Vec<(f64, f64)> = points.iter().map(|q| (q.n as f64, q.sup_error)).collect();
    let fit = ScalingFit::fit(Axes::LogLog, &grid)?;
    let last = points.last().expect("grid is nonempty");
    let warning = (last.sup_error < 3.0 * last.noise_floor).then(|| {
        format!(
            "sup error {:.3e} at N = {} is within 3× the Monte Carlo floor {:.3e}; the fit is noise-limited",
            last.sup_error, last.n, last.noise_floor
        )
    });
    Ok(CfReport { points, fit, replicates: p.replicates, sampler: sampler.method().into(), warning })
}

impl Report for CfReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["n", "sup_error", "argmax_t", "noise_floor", "replicates"]);
        for q in &self.points {
            t.push(vec![
                q.n.to_string(),
                q.sup_error.to_string(),
                cell(&q.argmax),
                q.noise_floor.to_string(),
                self.replicates.to_string(),
            ]);
        }
        t
    }

    fn fit(&self) -> Option<&ScalingFit> {
        Some(&self.fit)
    }
}

pub const DEFAULT_HOLDER_EXPONENT: f64 = 0.4;

fn default_levels() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 10.0]
}

fn default_xi_pairs() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0], [0.5, 1.5]]
}

fn default_times() -> [f64; 2] {
    [0.3, 0.7]
}

fn default_exponent() -> f64 {
    DEFAULT_HOLDER_EXPONENT
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathParams {
    pub n: u64,
    pub replicates: usize,
    #[serde(default = "default_exponent")]
    pub holder_exponent: f64,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_times")]
    pub times: [f64; 2],
    /// (ξ₁, ξ₂) along the first axis.
    #[serde(default = "default_xi_pairs")]
    pub xi_pairs: Vec<[f64; 2]>,
    #[serde(default)]
    pub reference: Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderSummary {
    pub exponent: f64,
    pub depth: u32,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// (L, fraction of replicates with statistic > L).
    pub tail: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoTimeCf {
    pub xi: [f64; 2],
    pub re: f64,
    pub im: f64,
    pub re_se: f64,
    pub im_se: f64,
    pub predicted: f64,
    /// max of the Re and Im deviations in standard errors.
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathReport {
    pub n: u64,
    pub replicates: usize,
    pub drift: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub holder: HolderSummary,
    pub times: [f64; 2],
    pub fdd: Vec<TwoTimeCf>,
}

/// Integer times at which the path is recorded.
fn probe_times(n: u64, depth: u32, times: &[f64; 2]) -> Vec<u64> {
    let mut v: Vec<u64> = (0..=(1u64 << depth)).map(|k| k * n >> depth).collect();
    for t in times {
        let x = t * n as f64;
        v.push(x.floor() as u64);
        v.push((x.ceil() as u64).min(n));
    }
    v.sort_unstable();
    v.dedup();
    v
}

/// X̂_t by linear interpolation of the recorded path between ⌊tN⌋ and ⌈tN⌉.
fn interpolate(times: &[u64], path: &[Vec<f64>], t: f64, n: u64, i: usize) -> f64 {
    let x = t * n as f64;
    let lo = x.floor() as u64;
    let hi = (x.ceil() as u64).min(n);
    let a = times.binary_search(&lo).expect("probe recorded");
    let b = times.binary_search(&hi).expect("probe recorded");
    path[a][i] + (x - lo as f64) * (path[b][i] - path[a][i])
}

pub fn path_diagnostics(exp: &Experiment, p: &PathParams) -> Result<PathReport> {
    if p.n < 2 {
        return Err(Error::Argument("N must be at least 2".into()));
    }
    check_replicates(p.replicates, 2)?;
    if !(p.times[0] > 0.0 && p.times[0] < p.times[1] && p.times[1] <= 1.0) {
        return Err(Error::Argument("times must satisfy 0 < t₁ < t₂ ≤ 1".into()));
    }
    if !(p.holder_exponent > 0.0 && p.holder_exponent < 1.0) {
        return Err(Error::Argument("Hölder exponent must lie in (0, 1)".into()));
    }
    let d = exp.dim();
    let moments = p.reference.resolve(exp)?;
    // dyadic pairs at resolution 2^-depth land on integer times
    let depth = (63 - p.n.leading_zeros()).min(10);
    let times = probe_times(p.n, depth, &p.times);
    let sampler = Endpoints::Stepwise;
    let paths = ordered_map(p.replicates, |r| {
        let r = r as u64;
        let xs = sampler.nested(exp, exp.env_seed(tag::PATH, 0, r), exp.walk_seed(tag::PATH, 0, r, 0), &times)?;
        Ok(xs.iter().map(|x| (0..d).map(|i| x.coords[i] as f64).collect::<Vec<f64>>()).collect::<Vec<_>>())
    })?;
    let nf = p.n as f64;
    let sn = nf.sqrt();
    let drift = match &moments.drift {
        Some(v) => v.clone(),
        None => {
            let ends: Vec<Vec<f64>> = paths.iter().map(|q| q.last().expect("path").clone()).collect();
            mean_cov(&ends, d).0.iter().map(|x| x / nf).collect()
        }
    };
    // X̂ at every probe time, centered and scaled.
    let scaled: Vec<Vec<Vec<f64>>> = paths
        .iter()
        .map(|q| {
            q.iter()
                .zip(&times)
                .map(|(x, &k)| (0..d).map(|i| (x[i] - drift[i] * k as f64) / sn).collect())
                .collect()
        })
        .collect();
    let sigma2 = match &moments.sigma2 {
        Some(s) => s.clone(),
        None => {
            let ends: Vec<Vec<f64>> = scaled.iter().map(|q| q.last().expect("path").clone()).collect();
            mean_cov(&ends, d).1
        }
    };

    // Hölder statistic over adjacent dyadic pairs.
    let mut stats: Vec<f64> = scaled
        .iter()
        .map(|q| {
            let mut best = 0.0f64;
            for j in 1..=depth {
                let width = 2f64.powi(-(j as i32));
                let norm = width.powf(p.holder_exponent);
                for k in 0..(1u64 << j) {
                    let s = times.binary_search(&(k * p.n >> j)).expect("probe");
                    let t = times.binary_search(&((k + 1) * p.n >> j)).expect("probe");
                    let diff = (0..d).map(|i| (q[t][i] - q[s][i]).abs()).fold(0.0, f64::max);
                    best = best.max(diff / norm);
                }
            }
            best
        })
        .collect();
    let m = stats.len() as f64;
    let tail = p.levels.iter().map(|&l| (l, stats.iter().filter(|&&s| s > l).count() as f64 / m)).collect();
    let mean = stats.iter().sum::<f64>() / m;
    stats.sort_by(f64::total_cmp);
    let holder = HolderSummary {
        exponent: p.holder_exponent,
        depth,
        mean,
        median: stats[stats.len() / 2],
        max: *stats.last().expect("replicates"),
        tail,
    };

    let [t1, t2] = p.times;
    let s11 = sigma2[0];
    let fdd = p
        .xi_pairs
        .iter()
        .map(|&[x1, x2]| {
            let (mut re, mut im) = (Vec::with_capacity(paths.len()), Vec::with_capacity(paths.len()));
            for q in &scaled {
                let a = x1 * interpolate(&times, q, t1, p.n, 0) + x2 * interpolate(&times, q, t2, p.n, 0);
                re.push(a.cos());
                im.push(a.sin());
            }
            let (re, re_se) = mean_se(&re);
            let (im, im_se) = mean_se(&im);
            let predicted = (-0.5 * (x2 * x2 * s11 * (t2 - t1) + (x1 + x2).powi(2) * s11 * t1)).exp();
            let z = |dev: f64, se: f64| if se > 0.0 { dev.abs() / se } else if dev == 0.0 { 0.0 } else { f64::INFINITY };
            TwoTimeCf { xi: [x1, x2], re, im, re_se, im_se, predicted, z: z(re - predicted, re_se).max(z(im, im_se)) }
        })
        .collect();

    Ok(PathReport { n: p.n, replicates: p.replicates, drift, sigma2, holder, times: p.times, fdd })
}

impl Report for PathReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["xi1", "xi2", "re", "re_se", "im", "im_se", "predicted", "z"]);
        for c in &self.fdd {
            t.push(vec![
                c.xi[0].to_string(),
                c.xi[1].to_string(),
                c.re.to_string(),
                c.re_se.to_string(),
                c.im.to_string(),
                c.im_se.to_string(),
                c.predicted.to_string(),
                c.z.to_string(),
            ]);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvModel;
    use crate::kernel::Kernel;
    use crate::map::tripling;

    fn exp(a_minus: f64, a_plus: f64, eps: f64) -> Experiment {
        let k = Kernel::nearest_neighbour(a_minus, a_plus, eps).unwrap();
        Experiment::new(EnvModel::preferred(tripling().unwrap(), 1).unwrap(), k, 5).unwrap()
    }

    #[test]
    fn zero_t_has_zero_error() {
        let e = exp(0.3, 0.7, 0.0);
        let p = CfParams { n_grid: vec![16, 64], t_grid: vec![0.0], replicates: 500, reference: Reference::InSample };
        let r = annealed_cf_error(&e, &p);
        // every error is exactly 0, so the log fit must refuse
        assert!(r.is_err());
        let ys = vec![vec![0.3], vec![-1.2]];
        assert_eq!(cf_sup_error(&ys, &[vec![0.0]], &[1.0]).0, 0.0);
    }

    #[test]
    fn cf_report_shape() {
        let e = exp(0.3, 0.7, 0.0);
        let p = CfParams { n_grid: vec![16, 64, 256], t_grid: default_t_grid(), replicates: 2000, reference: Reference::InSample };
        let r = annealed_cf_error(&e, &p).unwrap();
        assert_eq!(r.points.len(), 3);
        assert_eq!(r.sampler, "block");
        assert!(r.points.iter().all(|q| q.sup_error > 0.0 && q.sup_error < 0.2));
        assert!((r.points[2].drift[0] - 0.4).abs() < 0.01);
    }

    #[test]
    fn path_of_simple_walk() {
        let e = exp(0.5, 0.5, 0.0);
        let p = PathParams {
            n: 256,
            replicates: 2000,
            holder_exponent: 0.4,
            levels: default_levels(),
            times: default_times(),
            xi_pairs: default_xi_pairs(),
            reference: Reference::Auto,
        };
        let r = path_diagnostics(&e, &p).unwrap();
        assert_eq!(r.fdd[0].re, 1.0);
        assert_eq!(r.fdd[0].im, 0.0);
        for c in &r.fdd {
            assert!(c.z < 5.0, "{c:?}");
        }
        let tails: Vec<f64> = r.holder.tail.iter().map(|x| x.1).collect();
        assert!(tails.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(r.holder.depth, 8);
    }

    #[test]
    fn probes_include_interpolation_points() {
        let t = probe_times(100, 2, &[0.3, 0.7]);
        assert_eq!(t, vec![0, 25, 30, 50, 70, 75, 100]);
        let path: Vec<Vec<f64>> = t.iter().map(|&k| vec![k as f64]).collect();
        assert_eq!(interpolate(&t, &path, 0.3, 100, 0), 30.0);
    }
}
