//! Ulam discretization of the transfer operator, invariant density and
//! spectral-gap estimates.
//!
//! The second modulus is a grid-level estimate of the subdominant spectrum,
//! not a certified bound on the operator acting on BV.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::map::{BranchShape, ExactPoint, PiecewiseExpandingMap, EXACT_BITS, MODULUS};
use crate::rng::{mix64, unit_f64};

pub const DENSITY_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 100_000;
/// Grid used by [`DensitySampler::for_map`].
pub const SAMPLER_BINS: usize = 1 << 12;

/// Row-stochastic Ulam matrix in compressed sparse row form.
#[derive(Clone, Debug)]
pub struct UlamMatrix {
    pub n_bins: usize,
    pub map_name: String,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl UlamMatrix {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Row vector times matrix: `out = v·P`.
    pub fn left_mul(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (j, p) in self.row(i) {
                out[j] += vi * p;
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n_bins)
            .map(|i| {
                let mut r = vec![0.0; self.n_bins];
                for (j, p) in self.row(i) {
                    r[j] = p;
                }
                r
            })
            .collect()
    }
}

/// P[i][j] = m(bin_i ∩ T⁻¹ bin_j) / m(bin_i) on `n_bins` equal bins.
pub fn build_ulam(map: &PiecewiseExpandingMap, n_bins: usize) -> Result<UlamMatrix> {
    if n_bins < 2 {
        return Err(Error::Argument(format!("n_bins must be at least 2, got {n_bins}")));
    }
    let n = n_bins as f64;
    let rows: Vec<Vec<(usize, f64)>> =
        (0..n_bins).into_par_iter().map(|i| ulam_row(map, i, n_bins, n)).collect();
    let mut row_ptr = Vec::with_capacity(n_bins + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for r in rows {
        for (j, v) in r {
            cols.push(j);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(UlamMatrix { n_bins, map_name: map.name().to_string(), row_ptr, cols, vals })
}

fn ulam_row(map: &PiecewiseExpandingMap, i: usize, n_bins: usize, n: f64) -> Vec<(usize, f64)> {
    let (bl, br) = (i as f64 / n, (i + 1) as f64 / n);
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for b in map.branches() {
        let a = bl.max(b.left);
        let c = br.min(b.right);
        if a >= c {
            continue;
        }
        let (y1, y2) = (b.apply(a), b.apply(c));
        let (lo, hi) = (y1.min(y2).max(0.0), y1.max(y2).min(1.0));
        if lo >= hi {
            continue;
        }
        let j0 = ((lo * n).floor() as usize).min(n_bins - 1);
        let j1 = ((hi * n).ceil() as usize).clamp(j0 + 1, n_bins);
        for j in j0..j1 {
            let s_lo = lo.max(j as f64 / n);
            let s_hi = hi.min((j + 1) as f64 / n);
            if s_lo >= s_hi {
                continue;
            }
            let len = match &b.shape {
                BranchShape::Affine { slope, .. } => (s_hi - s_lo) / slope.abs(),
                BranchShape::Smooth { .. } => (b.inverse(s_hi) - b.inverse(s_lo)).abs(),
            };
            let w = len * n;
            match entries.iter_mut().find(|e| e.0 == j) {
                Some(e) => e.1 += w,
                None => entries.push((j, w)),
            }
        }
    }
    entries.sort_by_key(|e| e.0);
    entries
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub map_name: String,
    pub n_bins: usize,
    pub leading_eigenvalue: f64,
    /// Per-bin density values; the bin-weighted sum is 1.
    pub invariant_density: Vec<f64>,
    pub second_modulus: f64,
    /// Power iterations used for the density.
    pub iterations: usize,
    pub gap_iterations: usize,
    pub gap_method: GapMethod,
}

/// Fixed point of m ↦ m·P on bin masses, then the subdominant modulus.
pub fn invariant_density(ulam: &UlamMatrix) -> Result<SpectralReport> {
    let (density, iterations, leading) = power_density(ulam)?;
    let gap = spectral_gap(ulam, &density)?;
    Ok(SpectralReport {
        map_name: ulam.map_name.clone(),
        n_bins: ulam.n_bins,
        leading_eigenvalue: leading,
        invariant_density: density,
        second_modulus: gap.second_modulus,
        iterations,
        gap_iterations: gap.iterations,
        gap_method: gap.method,
    })
}

fn power_density(ulam: &UlamMatrix) -> Result<(Vec<f64>, usize, f64)> {
    let n = ulam.n_bins;
    let mut mass = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        ulam.left_mul(&mass, &mut next);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = l1_distance(&mass, &next);
        std::mem::swap(&mut mass, &mut next);
        if residual < DENSITY_TOL {
            ulam.left_mul(&mass, &mut next);
            let leading = next.iter().sum::<f64>() / mass.iter().sum::<f64>();
            let density = mass.iter().map(|m| m * n as f64).collect();
            return Ok((density, it, leading));
        }
    }
    Err(Error::Numerical {
        message: format!("invariant density did not converge in {MAX_ITERATIONS} iterations"),
        residual,
    })
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMethod {
    /// Real Schur form of P − 1·m.
    Dense,
    /// Norm growth of deflated power iteration.
    NormGrowth,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GapEstimate {
    pub second_modulus: f64,
    pub iterations: usize,
    pub method: GapMethod,
}

/// Largest grid size solved densely.
pub const DENSE_GAP_LIMIT: usize = 1024;
const SCHUR_SWEEPS: usize = 30;
const GROWTH_TOL: f64 = 1e-6;
const GROWTH_MIN: usize = 64;

/// Largest modulus of the Ulam spectrum once the eigenvalue 1 is removed.
pub fn spectral_gap(ulam: &UlamMatrix, density: &[f64]) -> Result<GapEstimate> {
    if density.len() != ulam.n_bins {
        return Err(Error::Argument("density length does not match the grid".into()));
    }
    let n = ulam.n_bins;
    let mass: Vec<f64> = density.iter().map(|h| h / n as f64).collect();
    if n <= DENSE_GAP_LIMIT {
        if let Some(rho) = dense_second_modulus(ulam, &mass) {
            return Ok(GapEstimate { second_modulus: rho, iterations: 0, method: GapMethod::Dense });
        }
    }
    growth_second_modulus(ulam, &mass)
}

/// Rank-one deflation sends the eigenvalue 1 to 0 and keeps the rest.
fn dense_second_modulus(ulam: &UlamMatrix, mass: &[f64]) -> Option<f64> {
    let n = ulam.n_bins;
    let mut m = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, j| -mass[j]);
    for i in 0..n {
        for (j, p) in ulam.row(i) {
            m[(i, j)] += p;
        }
    }
    let schur = nalgebra::Schur::try_new(m, f64::EPSILON, SCHUR_SWEEPS * n)?;
    let ev = schur.complex_eigenvalues();
    Some(ev.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// ρ ≈ (‖v_k‖/‖v_{k/2}‖)^{2/k} on zero-sum vectors, doubling k until two
/// successive estimates agree to `GROWTH_TOL`.
fn growth_second_modulus(ulam: &UlamMatrix, mass: &[f64]) -> Result<GapEstimate> {
    let n = ulam.n_bins;
    let mut seed = 0x5eed_u64;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            seed = mix64(seed);
            unit_f64(seed) - 0.5
        })
        .collect();
    project_zero_sum(&mut v, mass);
    let mut next = vec![0.0; n];
    let mut log_norm = vec![0.0f64];
    let mut prev_est = f64::NAN;
    let mut change = f64::INFINITY;
    for k in 1..=MAX_ITERATIONS {
        ulam.left_mul(&v, &mut next);
        project_zero_sum(&mut next, mass);
        let nv = norm(&next);
        let total = log_norm[k - 1] + nv.ln();
        if nv == 0.0 || total < -700.0 {
            return Ok(GapEstimate {
                second_modulus: 0.0,
                iterations: k,
                method: GapMethod::NormGrowth,
            });
        }
        log_norm.push(total);
        next.iter_mut().for_each(|x| *x /= nv);
        std::mem::swap(&mut v, &mut next);
        if k >= GROWTH_MIN && k.is_power_of_two() {
            let half = k / 2;
            let est = ((log_norm[k] - log_norm[half]) / half as f64).exp();
            change = (est - prev_est).abs();
            if change < GROWTH_TOL {
                return Ok(GapEstimate { second_modulus: est, iterations: k, method: GapMethod::NormGrowth });
            }
            prev_est = est;
        }
    }
    Err(Error::Numerical {
        message: format!("spectral gap iteration did not settle in {MAX_ITERATIONS} iterations"),
        residual: change,
    })
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// v ← v − (Σv)·m, keeping the iteration on the zero-sum subspace.
fn project_zero_sum(v: &mut [f64], mass: &[f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().zip(mass).for_each(|(x, m)| *x -= s * m);
}

/// φ − (∫φ dm)·h: removes the component along the invariant density so
/// the transfer operator drives the result to zero.
pub fn center_observable(phi: &[f64], density: &[f64]) -> Vec<f64> {
    let mean = phi.iter().sum::<f64>() / phi.len() as f64;
    phi.iter().zip(density).map(|(p, h)| p - mean * h).collect()
}

/// ‖Lⁿφ‖₁ on the grid for n = 0..=n_max.
pub fn correlation_decay(ulam: &UlamMatrix, phi: &[f64], n_max: usize) -> Result<Vec<f64>> {
    if phi.len() != ulam.n_bins {
        return Err(Error::Argument(format!(
            "observable has {} values for {} bins",
            phi.len(),
            ulam.n_bins
        )));
    }
    let width = 1.0 / ulam.n_bins as f64;
    let mut v = phi.to_vec();
    let mut next = vec![0.0; v.len()];
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        out.push(v.iter().map(|x| x.abs()).sum::<f64>() * width);
        if n < n_max {
            ulam.left_mul(&v, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
    }
    Ok(out)
}

/// CSV with columns bin_left, bin_right, density.
pub fn density_csv(report: &SpectralReport) -> String {
    let n = report.n_bins as f64;
    let mut s = String::from("bin_left,bin_right,density\n");
    for (i, d) in report.invariant_density.iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", i as f64 / n, (i + 1) as f64 / n, d);
    }
    s
}

/// Inverse-CDF sampler for a piecewise-constant density on equal bins.
#[derive(Clone, Debug)]
pub struct DensitySampler {
    cdf: Vec<f64>,
    /// log2 of the bin count when it is a power of two.
    bin_bits: Option<u32>,
}

impl DensitySampler {
    pub fn new(density: &[f64]) -> Result<Self> {
        let n = density.len();
        if n == 0 || density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Argument("density must be finite and nonnegative".into()));
        }
        let mut cdf = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for d in density {
            acc += d;
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::Argument("density has zero mass".into()));
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        let bin_bits = (n.is_power_of_two() && n.trailing_zeros() <= EXACT_BITS)
            .then(|| n.trailing_zeros());
        Ok(DensitySampler { cdf, bin_bits })
    }

    /// Builds the Ulam density of `map` on the default grid.
    pub fn for_map(map: &PiecewiseExpandingMap) -> Result<Self> {
        Self::for_map_with_bins(map, SAMPLER_BINS)
    }

    pub fn for_map_with_bins(map: &PiecewiseExpandingMap, bins: usize) -> Result<Self> {
        let ulam = build_ulam(map, bins)?;
        let (density, _, _) = power_density(&ulam)?;
        Self::new(&density)
    }

    pub fn n_bins(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.n_bins();
        let pos = (x.clamp(0.0, 1.0) * n as f64).min(n as f64);
        let j = (pos.floor() as usize).min(n - 1);
        let frac = pos - j as f64;
        self.cdf[j] + frac * (self.cdf[j + 1] - self.cdf[j])
    }

    #[inline]
    fn bin(&self, w: u64) -> usize {
        let u = unit_f64(w);
        (self.cdf.partition_point(|&c| c <= u) - 1).min(self.n_bins() - 1)
    }

    /// Sample from two random words. The second word fills the bin with
    /// all remaining grid bits.
    #[inline]
    pub fn sample_exact(&self, w_bin: u64, w_pos: u64) -> ExactPoint {
        let j = self.bin(w_bin) as u64;
        match self.bin_bits {
            Some(bits) => {
                let inner = EXACT_BITS - bits;
                let offset = if inner == 0 { 0 } else { w_pos >> (64 - inner) };
                ExactPoint::from_raw((j << inner) | offset)
            }
            None => {
                let n = self.n_bins() as u128;
                let lo = (j as u128 * MODULUS as u128).div_ceil(n);
                let hi = ((j as u128 + 1) * MODULUS as u128).div_ceil(n);
                let span = (hi - lo).max(1);
                let offset = ((w_pos as u128 * span) >> 64) as u64;
                ExactPoint::from_raw((lo as u64 + offset).min(MODULUS - 1))
            }
        }
    }

    #[inline]
    pub fn sample_f64(&self, w_bin: u64, w_pos: u64) -> f64 {
        let j = self.bin(w_bin);
        let x = (j as f64 + unit_f64(w_pos)) / self.n_bins() as f64;
        x.min(1.0 - f64::EPSILON / 2.0)
    }
}
