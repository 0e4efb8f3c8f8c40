//! Estimates with standard errors, least-squares scaling fits and small
//! statistical helpers.

use serde::Serialize;

use crate::error::{Error, Result};

/// A point estimate (scalar, vector or row-major matrix) with its standard
/// error of the same shape.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateWithCI {
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
    pub shape: Vec<usize>,
    pub replicates: usize,
    pub method: String,
}

impl EstimateWithCI {
    pub fn scalar(value: f64, std_error: f64, replicates: usize, method: &str) -> Self {
        EstimateWithCI {
            value: vec![value],
            std_error: vec![std_error],
            shape: vec![],
            replicates,
            method: method.into(),
        }
    }

    pub fn vector(value: Vec<f64>, std_error: Vec<f64>, replicates: usize, method: &str) -> Self {
        let shape = vec![value.len()];
        EstimateWithCI { value, std_error, shape, replicates, method: method.into() }
    }

    pub fn matrix(d: usize, value: Vec<f64>, std_error: Vec<f64>, replicates: usize, method: &str) -> Self {
        debug_assert_eq!(value.len(), d * d);
        EstimateWithCI { value, std_error, shape: vec![d, d], replicates, method: method.into() }
    }

    /// First component.
    pub fn get(&self) -> f64 {
        self.value[0]
    }

    pub fn se(&self) -> f64 {
        self.std_error[0]
    }

    /// Number of standard errors between component `i` and `target`.
    pub fn z_score(&self, i: usize, target: f64) -> f64 {
        let d = self.value[i] - target;
        if self.std_error[i] > 0.0 {
            d.abs() / self.std_error[i]
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Delete-one jackknife standard error from leave-one-out estimates.
pub fn jackknife_se(leave_one_out: &[f64]) -> f64 {
    let n = leave_one_out.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mean = leave_one_out.iter().sum::<f64>() / n;
    let ss: f64 = leave_one_out.iter().map(|x| (x - mean) * (x - mean)).sum();
    ((n - 1.0) / n * ss).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axes {
    /// ln y against ln x
    LogLog,
    /// ln y against x
    SemiLog,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitPoint {
    pub n: f64,
    pub statistic: f64,
    pub weight: f64,
}

/// Weighted least-squares line through transformed grid points.
///
/// With weights w_i, slope = Σw(x−x̄)(y−ȳ)/Σw(x−x̄)², intercept = ȳ − slope·x̄,
/// r² = 1 − Σw(y−ŷ)²/Σw(y−ȳ)², all means weighted.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub axes: Axes,
    pub grid: Vec<FitPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl ScalingFit {
    pub fn fit(axes: Axes, grid: &[(f64, f64)]) -> Result<Self> {
        let pts: Vec<FitPoint> =
            grid.iter().map(|&(n, s)| FitPoint { n, statistic: s, weight: 1.0 }).collect();
        Self::fit_points(axes, pts)
    }

    pub fn fit_weighted(axes: Axes, grid: &[(f64, f64, f64)]) -> Result<Self> {
        let pts: Vec<FitPoint> =
            grid.iter().map(|&(n, s, w)| FitPoint { n, statistic: s, weight: w }).collect();
        Self::fit_points(axes, pts)
    }

    fn fit_points(axes: Axes, grid: Vec<FitPoint>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::Argument(format!("fit needs at least 2 points, got {}", grid.len())));
        }
        let mut xs = Vec::with_capacity(grid.len());
        let mut ys = Vec::with_capacity(grid.len());
        let mut ws = Vec::with_capacity(grid.len());
        for p in &grid {
            if !(p.statistic > 0.0 && p.statistic.is_finite()) {
                return Err(Error::Numerical {
                    message: format!("statistic {} at n = {} cannot be log-transformed", p.statistic, p.n),
                    residual: p.statistic,
                });
            }
            if !(p.weight > 0.0) {
                return Err(Error::Argument(format!("weight {} at n = {} not positive", p.weight, p.n)));
            }
            xs.push(match axes {
                Axes::LogLog => p.n.ln(),
                Axes::SemiLog => p.n,
            });
            ys.push(p.statistic.ln());
            ws.push(p.weight);
        }
        let (slope, intercept, r_squared) = weighted_line(&xs, &ys, &ws)?;
        Ok(ScalingFit { axes, grid, slope, intercept, r_squared })
    }

    /// Model value at `n`.
    pub fn predict(&self, n: f64) -> f64 {
        let x = match self.axes {
            Axes::LogLog => n.ln(),
            Axes::SemiLog => n,
        };
        (self.intercept + self.slope * x).exp()
    }
}

/// (slope, intercept, r²) of the weighted least-squares line.
pub fn weighted_line(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<(f64, f64, f64)> {
    let wsum: f64 = ws.iter().sum();
    let xbar = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / wsum;
    let ybar = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - xbar) * (x - xbar);
        sxy += w * (x - xbar) * (y - ybar);
        syy += w * (y - ybar) * (y - ybar);
    }
    if sxx <= 0.0 {
        return Err(Error::Argument("fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| {
            let r = y - (intercept + slope * x);
            w * r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok((slope, intercept, r_squared))
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// One-sided 95% Clopper–Pearson upper bound for zero events in `trials`.
pub fn zero_event_upper_bound(trials: u64) -> f64 {
    1.0 - 0.05f64.powf(1.0 / trials as f64)
}

/// Largest |x| over a slice.
pub fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
