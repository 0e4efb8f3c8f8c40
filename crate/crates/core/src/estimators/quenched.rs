//! Quenched concentration: how far the law of X̃_N/√N in one fixed θ sits
//! from the Gaussian limit, averaged over θ.
//!
//! For θ-samples θ_1..θ_J the statistic at N is
//! S(N) = mean_j (E_θj φ(X̃_N/√N) − g)², with g the Gaussian expectation of φ.
//! The Monte Carlo method estimates each conditional mean from W walks and
//! subtracts the within-θ sampling noise s_j²/W. The exact-law method (d = 1)
//! evolves the conditional distribution of X_n in θ_j directly, so there is
//! no within-θ noise at all.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_grid, check_replicates, mean_cov, Endpoints, Reference, Report, Table};
use crate::error::{Error, Result};
use crate::experiment::{ordered_map, Experiment};
use crate::kernel::Kernel;
use crate::lattice::LatticePoint;
use crate::rng::tag;
use crate::stats::{mean_se, normal_cdf, Axes, ScalingFit};

pub const DEFAULT_TRIM: f64 = 1e-20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// exp(−‖y − c‖²/(2h²))
    GaussianBump {
        #[serde(default)]
        center: Vec<f64>,
        width: f64,
    },
    /// Φ((y_i − c)/h)
    SmoothedIndicator {
        #[serde(default)]
        axis: usize,
        #[serde(default)]
        center: f64,
        width: f64,
    },
}

impl TestFunction {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            TestFunction::GaussianBump { center, width } => {
                if !center.is_empty() && center.len() != d {
                    return Err(Error::Argument(format!("bump center has {} entries, need {d}", center.len())));
                }
                if !(*width > 0.0) {
                    return Err(Error::Argument("bump width must be positive".into()));
                }
            }
            TestFunction::SmoothedIndicator { axis, width, .. } => {
                if *axis >= d {
                    return Err(Error::Argument(format!("indicator axis {axis} out of range for d = {d}")));
                }
                if !(*width > 0.0) {
                    return Err(Error::Argument("indicator width must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            TestFunction::GaussianBump { center, width } => {
                let r2: f64 =
                    y.iter().enumerate().map(|(i, v)| (v - center.get(i).copied().unwrap_or(0.0)).powi(2)).sum();
                (-r2 / (2.0 * width * width)).exp()
            }
            TestFunction::SmoothedIndicator { axis, center, width } => normal_cdf((y[*axis] - center) / width),
        }
    }

    /// E φ(Y) for Y ~ N(0, Σ), Σ row-major d×d.
    pub fn gaussian_expectation(&self, sigma: &[f64], d: usize) -> Result<f64> {
        match self {
            TestFunction::GaussianBump { center, width } => {
                let h2 = width * width;
                let s = DMatrix::from_row_slice(d, d, sigma);
                let scaled = DMatrix::identity(d, d) + &s / h2;
                let det = scaled.determinant();
                if !(det > 0.0) {
                    return Err(Error::Numerical { message: "I + Σ/h² is not positive definite".into(), residual: det });
                }
                let c = nalgebra::DVector::from_iterator(d, (0..d).map(|i| center.get(i).copied().unwrap_or(0.0)));
                let inv = (s + DMatrix::identity(d, d) * h2).try_inverse().ok_or_else(|| Error::Numerical {
                    message: "Σ + h²I is singular".into(),
                    residual: det,
                })?;
                let q = c.dot(&(inv * &c));
                Ok(det.powf(-0.5) * (-0.5 * q).exp())
            }
            TestFunction::SmoothedIndicator { axis, center, width } => {
                let v = width * width + sigma[axis * d + axis];
                Ok(normal_cdf(-center / v.sqrt()))
            }
        }
    }

    /// True when the Gaussian expectation does not depend on Σ.
    pub fn sigma_free(&self) -> bool {
        matches!(self, TestFunction::SmoothedIndicator { center, .. } if *center == 0.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuenchedMethod {
    /// Exact law in d = 1, Monte Carlo otherwise.
    #[default]
    Auto,
    MonteCarlo,
    ExactLaw,
}

/// The value g that conditional means are compared against.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    /// Gaussian expectation of φ under the reference Σ².
    #[default]
    Auto,
    /// The across-θ mean of the conditional means.
    InSample,
    Fixed(f64),
}

fn default_trim() -> f64 {
    DEFAULT_TRIM
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchedParams {
    pub n_grid: Vec<u64>,
    pub theta_samples: usize,
    pub walks_per_theta: usize,
    pub test_fn: TestFunction,
    #[serde(default)]
    pub method: QuenchedMethod,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub target: Target,
    /// Exact-law mass below this is dropped at the edges of the support.
    #[serde(default = "default_trim")]
    pub trim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuenchedPoint {
    pub n: u64,
    pub statistic: f64,
    pub std_error: f64,
    /// Mean within-θ noise s²/W that was subtracted (0 for the exact law).
    pub noise_term: f64,
    pub target: f64,
    pub sigma2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuenchedReport {
    pub method: QuenchedMethod,
    pub theta_samples: usize,
    pub walks_per_theta: usize,
    pub drift: Vec<f64>,
    pub points: Vec<QuenchedPoint>,
    pub fit: Option<ScalingFit>,
    /// Set when some statistic is not positive and no log fit is possible.
    pub failure: Option<String>,
    /// Largest probability mass trimmed from any exact law.
    pub dropped_mass: f64,
    /// Per-θ conditional means, one row per θ.
    pub conditional_means: Vec<Vec<f64>>,
}

/// Conditional law of X_n on an interval of Z, d = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LineLaw {
    pub lo: i64,
    pub mass: Vec<f64>,
}

impl LineLaw {
    pub fn mean(&self) -> f64 {
        self.mass.iter().enumerate().map(|(i, p)| p * (self.lo + i as i64) as f64).sum()
    }
}

/// Evolves the law of X_n in the environment seeded by `env_seed`, returning
/// it at every time in `times` together with the total trimmed mass.
pub fn exact_law(
    exp: &Experiment,
    env_seed: u64,
    times: &[u64],
    trim: f64,
) -> Result<(Vec<LineLaw>, f64)> {
    if exp.dim() != 1 {
        return Err(Error::Unsupported("the exact-law method needs d = 1".into()));
    }
    let kernel: &Kernel = &exp.kernel;
    let jumps: Vec<i64> = kernel.support().iter().map(|z| z.coords[0] as i64).collect();
    let r = kernel.radius() as i64;
    let mut env = exp.environment(env_seed);
    let mut scratch = kernel.scratch();
    let mut lo = exp.start.coords[0] as i64;
    let mut mass = vec![1.0];
    let mut next = Vec::new();
    let mut dropped = 0.0;
    let mut out = Vec::with_capacity(times.len());
    let last = times.last().copied().unwrap_or(0);
    let mut want = times.iter().peekable();
    while want.peek() == Some(&&0) {
        out.push(LineLaw { lo, mass: mass.clone() });
        want.next();
    }
    for n in 1..=last {
        next.clear();
        next.resize(mass.len() + 2 * r as usize, 0.0);
        for (i, &p) in mass.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let x = lo + i as i64;
            kernel.local_probabilities(&mut env, &LatticePoint::axis(0, x as i32), &mut scratch);
            for (z, q) in jumps.iter().zip(&scratch.probs) {
                next[(i as i64 + r + z) as usize] += p * q;
            }
        }
        lo -= r;
        let first = next.iter().position(|&p| p >= trim).unwrap_or(0);
        let end = next.iter().rposition(|&p| p >= trim).map_or(next.len(), |k| k + 1);
        dropped += next[..first].iter().sum::<f64>() + next[end..].iter().sum::<f64>();
        mass.clear();
        mass.extend_from_slice(&next[first..end]);
        lo += first as i64;
        env.advance();
        while want.peek() == Some(&&n) {
            out.push(LineLaw { lo, mass: mass.clone() });
            want.next();
        }
    }
    Ok((out, dropped))
}

pub fn quenched_concentration(exp: &Experiment, p: &QuenchedParams) -> Result<QuenchedReport> {
    check_grid("N grid", &p.n_grid)?;
    check_replicates(p.theta_samples, 2)?;
    let d = exp.dim();
    p.test_fn.validate(d)?;
    let method = match p.method {
        QuenchedMethod::Auto if d == 1 => QuenchedMethod::ExactLaw,
        QuenchedMethod::Auto => QuenchedMethod::MonteCarlo,
        m => m,
    };
    if method == QuenchedMethod::MonteCarlo {
        check_replicates(p.walks_per_theta, 2)?;
    }
    if !(p.trim >= 0.0 && p.trim < 1e-6) {
        return Err(Error::Argument("trim must lie in [0, 1e-6)".into()));
    }
    let moments = p.reference.resolve(exp)?;
    let j_count = p.theta_samples;
    let g_len = p.n_grid.len();
    let n_max = *p.n_grid.last().expect("grid");
    let theta = |j: usize| exp.env_seed(tag::QUENCHED, 0, j as u64);

    match method {
        QuenchedMethod::ExactLaw => {
            let laws = ordered_map(j_count, |j| exact_law(exp, theta(j), &p.n_grid, p.trim))?;
            let dropped_mass = laws.iter().map(|l| l.1).fold(0.0, f64::max);
            let v = match &moments.drift {
                Some(v) => v[0],
                None => laws.iter().map(|l| l.0[g_len - 1].mean()).sum::<f64>() / (j_count as f64 * n_max as f64),
            };
            let mut means = vec![vec![0.0; g_len]; j_count];
            let mut points = Vec::with_capacity(g_len);
            for (k, &n) in p.n_grid.iter().enumerate() {
                let sn = (n as f64).sqrt();
                let shift = v * n as f64;
                let mut second = 0.0;
                for (j, (l, _)) in laws.iter().enumerate() {
                    let law = &l[k];
                    let mut m = 0.0;
                    for (i, q) in law.mass.iter().enumerate() {
                        let y = ((law.lo + i as i64) as f64 - shift) / sn;
                        m += q * p.test_fn.eval(&[y]);
                        second += q * y * y;
                    }
                    means[j][k] = m;
                }
                let sigma2 = match &moments.sigma2 {
                    Some(s) => s.clone(),
                    None => vec![second / j_count as f64],
                };
                let conditional: Vec<f64> = means.iter().map(|row| row[k]).collect();
                let (target, terms) = deviations(&p.target, &p.test_fn, &sigma2, d, &conditional)?;
                let (statistic, std_error) = mean_se(&terms);
                points.push(QuenchedPoint { n, statistic, std_error, noise_term: 0.0, target, sigma2 });
            }
            finish(method, p, vec![v], points, dropped_mass, means)
        }
        _ => {
            let sampler = Endpoints::for_experiment(exp, true)?;
            let w_count = p.walks_per_theta;
            let runs = ordered_map(j_count * w_count, |idx| {
                let (j, w) = (idx / w_count, idx % w_count);
                let xs = sampler.nested(exp, theta(j), exp.walk_seed(tag::QUENCHED, j as u64, w as u64, 0), &p.n_grid)?;
                Ok(xs.iter().map(|x| (0..d).map(|i| x.coords[i] as f64).collect::<Vec<f64>>()).collect::<Vec<_>>())
            })?;
            let v = match &moments.drift {
                Some(v) => v.clone(),
                None => {
                    let ends: Vec<Vec<f64>> = runs.iter().map(|r| r[g_len - 1].clone()).collect();
                    mean_cov(&ends, d).0.iter().map(|x| x / n_max as f64).collect()
                }
            };
            let wf = w_count as f64;
            let mut means = vec![vec![0.0; g_len]; j_count];
            let mut points = Vec::with_capacity(g_len);
            for (k, &n) in p.n_grid.iter().enumerate() {
                let sn = (n as f64).sqrt();
                let ys: Vec<Vec<f64>> =
                    runs.iter().map(|r| (0..d).map(|i| (r[k][i] - v[i] * n as f64) / sn).collect()).collect();
                let sigma2 = match &moments.sigma2 {
                    Some(s) => s.clone(),
                    None => mean_cov(&ys, d).1,
                };
                let mut noise = Vec::with_capacity(j_count);
                for j in 0..j_count {
                    let vals: Vec<f64> = ys[j * w_count..(j + 1) * w_count].iter().map(|y| p.test_fn.eval(y)).collect();
                    let m = vals.iter().sum::<f64>() / wf;
                    let s2 = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (wf - 1.0);
                    means[j][k] = m;
                    noise.push(s2 / wf);
                }
                let conditional: Vec<f64> = means.iter().map(|row| row[k]).collect();
                let (target, raw) = deviations(&p.target, &p.test_fn, &sigma2, d, &conditional)?;
                let terms: Vec<f64> = raw.iter().zip(&noise).map(|(a, b)| a - b).collect();
                let (statistic, std_error) = mean_se(&terms);
                let noise_term = noise.iter().sum::<f64>() / j_count as f64;
                points.push(QuenchedPoint { n, statistic, std_error, noise_term, target, sigma2 });
            }
            finish(method, p, v, points, 0.0, means)
        }
    }
}

/// Target g and per-θ squared deviations; for an in-sample target the
/// deviations are rescaled by J/(J−1) so their mean is unbiased.
fn deviations(
    target: &Target,
    phi: &TestFunction,
    sigma2: &[f64],
    d: usize,
    conditional: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let j = conditional.len() as f64;
    let (g, scale) = match target {
        Target::Fixed(g) => (*g, 1.0),
        Target::Auto => (phi.gaussian_expectation(sigma2, d)?, 1.0),
        Target::InSample => (conditional.iter().sum::<f64>() / j, j / (j - 1.0)),
    };
    Ok((g, conditional.iter().map(|m| scale * (m - g).powi(2)).collect()))
}

fn finish(
    method: QuenchedMethod,
    p: &QuenchedParams,
    drift: Vec<f64>,
    points: Vec<QuenchedPoint>,
    dropped_mass: f64,
    conditional_means: Vec<Vec<f64>>,
) -> Result<QuenchedReport> {
    let bad: Vec<u64> = points.iter().filter(|q| !(q.statistic > 0.0)).map(|q| q.n).collect();
    let (fit, failure) = if bad.is_empty() && points.len() >= 2 {
        let grid: Vec<(f64, f64)> = points.iter().map(|q| (q.n as f64, q.statistic)).collect();
        (Some(ScalingFit::fit(Axes::LogLog, &grid)?), None)
    } else if bad.is_empty() {
        (None, None)
    } else {
        (None, Some(format!("noise-corrected statistic not positive at N = {bad:?}")))
    };
    Ok(QuenchedReport {
        method,
        theta_samples: p.theta_samples,
        walks_per_theta: p.walks_per_theta,
        drift,
        points,
        fit,
        failure,
        dropped_mass,
        conditional_means,
    })
}

impl Report for QuenchedReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&[
            "n",
            "statistic",
            "std_error",
            "noise_term",
            "target",
            "theta_samples",
            "walks_per_theta",
        ]);
        for q in &self.points {
            t.push(vec![
                q.n.to_string(),
                q.statistic.to_string(),
                q.std_error.to_string(),
                q.noise_term.to_string(),
                q.target.to_string(),
                self.theta_samples.to_string(),
                self.walks_per_theta.to_string(),
            ]);
        }
        t
    }

    fn fit(&self) -> Option<&ScalingFit> {
        self.fit.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvModel;
    use crate::map::tripling;

    fn exp(eps: f64) -> Experiment {
        let k = Kernel::nearest_neighbour(0.5, 0.5, eps).unwrap();
        Experiment::new(EnvModel::preferred(tripling().unwrap(), 1).unwrap(), k, 21).unwrap()
    }

    fn indicator() -> TestFunction {
        TestFunction::SmoothedIndicator { axis: 0, center: 0.0, width: 0.5 }
    }

    #[test]
    fn gaussian_expectations() {
        let bump = TestFunction::GaussianBump { center: vec![0.5], width: 1.0 };
        // d = 1 closed form h/√(h²+σ²)·exp(−c²/(2(h²+σ²)))
        let want = (1.0 / 3f64.sqrt()) * (-0.25 / 6.0f64).exp();
        assert!((bump.gaussian_expectation(&[2.0], 1).unwrap() - want).abs() < 1e-14);
        let ind = TestFunction::SmoothedIndicator { axis: 1, center: 0.3, width: 0.4 };
        let want = normal_cdf(-0.3 / (0.16f64 + 2.0).sqrt());
        assert!((ind.gaussian_expectation(&[1.0, 0.0, 0.0, 2.0], 2).unwrap() - want).abs() < 1e-15);
        assert!(indicator().sigma_free());
        assert_eq!(indicator().gaussian_expectation(&[7.0], 1).unwrap(), 0.5);
    }

    #[test]
    fn exact_law_matches_binomial() {
        let (laws, dropped) = exact_law(&exp(0.0), 1, &[0, 3, 10], 0.0).unwrap();
        assert_eq!(dropped, 0.0);
        assert_eq!(laws[0], LineLaw { lo: 0, mass: vec![1.0] });
        assert_eq!(laws[1].lo, -3);
        let want = [0.125, 0.0, 0.375, 0.0, 0.375, 0.0, 0.125];
        for (a, b) in laws[1].mass.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let total: f64 = laws[2].mass.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exact_law_matches_walk_frequencies() {
        let e = exp(0.3);
        let seed = e.env_seed(tag::QUENCHED, 0, 0);
        let (laws, _) = exact_law(&e, seed, &[6], 0.0).unwrap();
        let m = 40_000;
        let mut counts = vec![0u64; 13];
        for w in 0..m {
            let x = e.run_walk(seed, 1000 + w, 6, |_, _, _| {}).unwrap();
            counts[(x.coords[0] + 6) as usize] += 1;
        }
        for (i, q) in laws[0].mass.iter().enumerate() {
            let f = counts[(laws[0].lo + 6) as usize + i] as f64 / m as f64;
            let se = (q * (1.0 - q) / m as f64).sqrt();
            assert!((f - q).abs() <= 5.0 * se + 1e-12, "site {i}: {f} vs {q}");
        }
    }

    #[test]
    fn unperturbed_exact_law_is_theta_free() {
        let p = QuenchedParams {
            n_grid: vec![16, 64],
            theta_samples: 4,
            walks_per_theta: 2,
            test_fn: indicator(),
            method: QuenchedMethod::ExactLaw,
            reference: Reference::Auto,
            target: Target::InSample,
            trim: DEFAULT_TRIM,
        };
        let r = quenched_concentration(&exp(0.0), &p).unwrap();
        assert!(r.points.iter().all(|q| q.statistic == 0.0));
        assert!(r.failure.is_some());
    }

    #[test]
    fn monte_carlo_noise_halves() {
        let base = QuenchedParams {
            n_grid: vec![64],
            theta_samples: 16,
            walks_per_theta: 64,
            test_fn: indicator(),
            method: QuenchedMethod::MonteCarlo,
            reference: Reference::Auto,
            target: Target::Auto,
            trim: DEFAULT_TRIM,
        };
        let a = quenched_concentration(&exp(0.0), &base).unwrap();
        let b = quenched_concentration(&exp(0.0), &QuenchedParams { walks_per_theta: 128, ..base }).unwrap();
        let ratio = b.points[0].noise_term / a.points[0].noise_term;
        assert!((ratio - 0.5).abs() < 0.1, "{ratio}");
        assert!(a.points[0].statistic.abs() < 4.0 * a.points[0].std_error);
    }
}
