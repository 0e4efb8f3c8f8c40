//! Environment-dependent transition kernels.
//!
//! The built-in family is π_z(θ) = a_z·e^{ε u_z(θ)} / Σ_w a_w·e^{ε u_w(θ)}
//! with linear potentials u_z(θ) = ⟨w_z, θ − 1/2⟩ over the window
//! {θ_q : ‖q‖ ≤ C₀}, where C₀ is the largest jump length.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{box_offsets, LatticePoint, MAX_DIM};
use crate::rng::{unit_f64, walk_rng, WalkRng};

const WEIGHT_TOL: f64 = 1e-12;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const ELLIPTIC_FLOOR: f64 = 1e-12;

/// User-supplied π: writes one probability per support point.
pub type TransitionFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum Potential {
    /// One coefficient vector per support point, indexed like the window.
    Linear(Vec<Vec<f64>>),
    Custom(TransitionFn),
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Linear(w) => f.debug_tuple("Linear").field(w).finish(),
            Potential::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Kernel {
    dim: usize,
    radius: i32,
    support: Vec<LatticePoint>,
    base: Vec<f64>,
    epsilon: f64,
    potential: Potential,
    offsets: Vec<LatticePoint>,
    /// Window sites with a nonzero coefficient, and the coefficients
    /// restricted to them.
    active: Vec<LatticePoint>,
    compact: Vec<Vec<f64>>,
    environment_free: bool,
}

impl Kernel {
    /// Exponential family with the given linear potential.
    pub fn exponential(
        dim: usize,
        support: Vec<LatticePoint>,
        base: Vec<f64>,
        epsilon: f64,
        coefficients: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::Argument(format!("epsilon must be ≥ 0, got {epsilon}")));
        }
        let mut k = Self::skeleton(dim, support, base, epsilon, Potential::Linear(Vec::new()))?;
        let w = k.offsets.len();
        if coefficients.len() != k.support.len() {
            return Err(Error::Argument(format!(
                "{} coefficient vectors for {} support points",
                coefficients.len(),
                k.support.len()
            )));
        }
        for (z, c) in k.support.iter().zip(&coefficients) {
            if c.len() != w {
                return Err(Error::Argument(format!(
                    "coefficients for {:?} have length {}, window has {w} sites",
                    z.coords[..dim].to_vec(),
                    c.len()
                )));
            }
            let l1: f64 = c.iter().map(|x| x.abs()).sum();
            if !(l1 <= 1.0 + WEIGHT_TOL) {
                return Err(Error::Argument(format!(
                    "coefficients for {:?} have l1 norm {l1} > 1",
                    z.coords[..dim].to_vec()
                )));
            }
        }
        k.environment_free = epsilon == 0.0 || coefficients.iter().flatten().all(|&c| c == 0.0);
        let used: Vec<usize> =
            (0..w).filter(|&i| coefficients.iter().any(|c| c[i] != 0.0)).collect();
        k.active = used.iter().map(|&i| k.offsets[i]).collect();
        k.compact = coefficients.iter().map(|c| used.iter().map(|&i| c[i]).collect()).collect();
        k.potential = Potential::Linear(coefficients);
        Ok(k)
    }

    /// Exponential family with u_z = ⟨z, 1⟩/(d·C₀)·(θ₀ − 1/2), which in d = 1
    /// with support {−1, +1} is u_{±1} = ±(θ₀ − 1/2).
    pub fn with_default_potential(
        dim: usize,
        support: Vec<LatticePoint>,
        base: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        let radius = support.iter().map(|z| z.norm()).max().unwrap_or(0) as i32;
        let offsets = box_offsets(dim.clamp(1, MAX_DIM), radius);
        let center = offsets.len() / 2;
        let coefficients = support
            .iter()
            .map(|z| {
                let mut c = vec![0.0; offsets.len()];
                if radius > 0 {
                    let s: i64 = z.coords[..dim.min(MAX_DIM)].iter().map(|&x| x as i64).sum();
                    c[center] = s as f64 / (dim as f64 * radius as f64);
                }
                c
            })
            .collect();
        Self::exponential(dim, support, base, epsilon, coefficients)
    }

    /// Nearest-neighbour walk in d = 1 with base weights (a₋, a₊).
    pub fn nearest_neighbour(a_minus: f64, a_plus: f64, epsilon: f64) -> Result<Self> {
        Self::with_default_potential(
            1,
            vec![LatticePoint::axis(0, -1), LatticePoint::axis(0, 1)],
            vec![a_minus, a_plus],
            epsilon,
        )
    }

    /// Arbitrary π given by a function of the radius-`radius` window.
    pub fn custom(
        dim: usize,
        support: Vec<LatticePoint>,
        base: Vec<f64>,
        f: TransitionFn,
    ) -> Result<Self> {
        Self::skeleton(dim, support, base, 0.0, Potential::Custom(f))
    }

    fn skeleton(
        dim: usize,
        support: Vec<LatticePoint>,
        base: Vec<f64>,
        epsilon: f64,
        potential: Potential,
    ) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Argument(format!("dimension must be in 1..={MAX_DIM}, got {dim}")));
        }
        if support.is_empty() {
            return Err(Error::Argument("support is empty".into()));
        }
        if base.len() != support.len() {
            return Err(Error::Argument(format!(
                "{} base weights for {} support points",
                base.len(),
                support.len()
            )));
        }
        for (i, z) in support.iter().enumerate() {
            if z.coords[dim..].iter().any(|&c| c != 0) {
                return Err(Error::Argument(format!("support point {z:?} exceeds dimension {dim}")));
            }
            if support[..i].contains(z) {
                return Err(Error::Argument(format!("support point {z:?} repeated")));
            }
        }
        if base.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Argument("base weights must be nonnegative".into()));
        }
        let total: f64 = base.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Argument(format!("base weights sum to {total}, not 1")));
        }
        let radius = support.iter().map(|z| z.norm()).max().unwrap_or(0) as i32;
        let offsets = box_offsets(dim, radius);
        let environment_free = matches!(potential, Potential::Linear(_)) && epsilon == 0.0;
        Ok(Kernel {
            dim,
            radius,
            support,
            base,
            epsilon,
            potential,
            active: offsets.clone(),
            compact: Vec::new(),
            offsets,
            environment_free,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// C₀: window radius, the largest jump length.
    pub fn radius(&self) -> i32 {
        self.radius
    }

    pub fn support(&self) -> &[LatticePoint] {
        &self.support
    }

    pub fn base_weights(&self) -> &[f64] {
        &self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn window_offsets(&self) -> &[LatticePoint] {
        &self.offsets
    }

    pub fn window_len(&self) -> usize {
        self.offsets.len()
    }

    /// True when π equals the base weights for every window.
    pub fn is_environment_free(&self) -> bool {
        self.environment_free
    }

    pub fn scratch(&self) -> StepScratch {
        StepScratch { window: vec![0.0; self.window_len()], probs: vec![0.0; self.support.len()] }
    }

    pub fn probabilities(&self, window: &[f64]) -> Result<Vec<f64>> {
        if window.len() != self.window_len() {
            return Err(Error::Argument(format!(
                "window has {} sites, kernel needs {}",
                window.len(),
                self.window_len()
            )));
        }
        let mut out = vec![0.0; self.support.len()];
        self.probabilities_into(window, &mut out);
        Ok(out)
    }

    /// Unchecked version of [`probabilities`](Self::probabilities).
    #[inline]
    pub fn probabilities_into(&self, window: &[f64], out: &mut [f64]) {
        if self.environment_free {
            out.copy_from_slice(&self.base);
            return;
        }
        match &self.potential {
            Potential::Linear(w) => {
                let mut total = 0.0;
                for ((o, a), wz) in out.iter_mut().zip(&self.base).zip(w) {
                    let u: f64 = wz.iter().zip(window).map(|(c, t)| c * (t - 0.5)).sum();
                    *o = a * (self.epsilon * u).exp();
                    total += *o;
                }
                out.iter_mut().for_each(|o| *o /= total);
            }
            Potential::Custom(f) => f(window, out),
        }
    }

    /// g(θ) = Σ_z z·π_z(θ).
    pub fn drift_field(&self, window: &[f64]) -> Result<Vec<f64>> {
        let p = self.probabilities(window)?;
        Ok(self.mean_of(&p)[..self.dim].to_vec())
    }

    #[inline]
    pub fn mean_of(&self, probs: &[f64]) -> [f64; MAX_DIM] {
        let mut g = [0.0; MAX_DIM];
        for (z, p) in self.support.iter().zip(probs) {
            for i in 0..self.dim {
                g[i] += p * z.coords[i] as f64;
            }
        }
        g
    }

    /// Mean and covariance of one step under the base weights.
    pub fn base_moments(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.dim;
        let mean = self.mean_of(&self.base)[..d].to_vec();
        let mut cov = vec![vec![0.0; d]; d];
        for (z, a) in self.support.iter().zip(&self.base) {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += a * (z.coords[i] as f64 - mean[i]) * (z.coords[j] as f64 - mean[j]);
                }
            }
        }
        (mean, cov)
    }

    /// Index of the support point selected by the uniform `u`.
    #[inline]
    pub fn pick(probs: &[f64], u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Fills `scratch.probs` with π(τ^x θ) for the environment at its
    /// current time, reading only the sites the potential depends on.
    #[inline]
    pub fn local_probabilities(&self, env: &mut Environment, x: &LatticePoint, scratch: &mut StepScratch) {
        if self.environment_free {
            scratch.probs.copy_from_slice(&self.base);
            return;
        }
        let n = self.active.len();
        env.window_into(x, &self.active, &mut scratch.window[..n]);
        match &self.potential {
            Potential::Linear(_) => {
                let window = &scratch.window[..n];
                let mut total = 0.0;
                for ((o, a), wz) in scratch.probs.iter_mut().zip(&self.base).zip(&self.compact) {
                    let u: f64 = wz.iter().zip(window).map(|(c, t)| c * (t - 0.5)).sum();
                    *o = a * (self.epsilon * u).exp();
                    total += *o;
                }
                scratch.probs.iter_mut().for_each(|o| *o /= total);
            }
            Potential::Custom(f) => f(&scratch.window, &mut scratch.probs),
        }
    }

    /// Draws Δ_n from π(τ^{X_n}θⁿ) and moves the walker.
    #[inline]
    pub fn step(
        &self,
        env: &mut Environment,
        walk: &mut WalkState,
        scratch: &mut StepScratch,
    ) -> Result<LatticePoint> {
        if env.time() != walk.step_count {
            return Err(Error::State(format!(
                "environment at time {} but walker at step {}",
                env.time(),
                walk.step_count
            )));
        }
        self.local_probabilities(env, &walk.position, scratch);
        let u = unit_f64(walk.rng.next_u64());
        let z = self.support[Self::pick(&scratch.probs, u)];
        walk.position = walk.position + z;
        walk.step_count += 1;
        Ok(z)
    }

    pub fn check_perturbation_bound(&self) -> PerturbationBound {
        match &self.potential {
            Potential::Linear(_) => PerturbationBound {
                epsilon_eff: epsilon_eff(self.epsilon),
                certified: true,
                warning: None,
            },
            Potential::Custom(_) => PerturbationBound {
                epsilon_eff: self.sampled_perturbation(10_000, 0).c1_ratio,
                certified: false,
                warning: Some("custom kernel: bound sampled over random windows".into()),
            },
        }
    }

    /// Sampled C¹ distance of π from the base weights, relative to a_z.
    pub fn sampled_perturbation(&self, samples: usize, seed: u64) -> SampledPerturbation {
        let mut rng = walk_rng(seed);
        let n = self.support.len();
        let w = self.window_len();
        let mut sup_value = vec![0.0f64; n];
        let mut sup_deriv = vec![0.0f64; n];
        let mut window = vec![0.0; w];
        let mut probs = vec![0.0; n];
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];
        for _ in 0..samples {
            window.iter_mut().for_each(|t| *t = rng.random::<f64>());
            self.probabilities_into(&window, &mut probs);
            for z in 0..n {
                sup_value[z] = sup_value[z].max((probs[z] - self.base[z]).abs());
            }
            for q in 0..w {
                match (&self.potential, self.environment_free) {
                    (_, true) => {}
                    (Potential::Linear(coef), false) => {
                        let avg: f64 = (0..n).map(|v| probs[v] * coef[v][q]).sum();
                        for z in 0..n {
                            let d = probs[z] * self.epsilon * (coef[z][q] - avg);
                            sup_deriv[z] = sup_deriv[z].max(d.abs());
                        }
                    }
                    (Potential::Custom(_), false) => {
                        let h = 1e-6;
                        let t = window[q];
                        let (lo, hi) = ((t - h).max(0.0), (t + h).min(1.0 - 1e-12));
                        window[q] = hi;
                        self.probabilities_into(&window, &mut plus);
                        window[q] = lo;
                        self.probabilities_into(&window, &mut minus);
                        window[q] = t;
                        for z in 0..n {
                            let d = (plus[z] - minus[z]) / (hi - lo);
                            sup_deriv[z] = sup_deriv[z].max(d.abs());
                        }
                    }
                }
            }
        }
        let mut value_ratio = 0.0f64;
        let mut c1_ratio = 0.0f64;
        for z in 0..n {
            if self.base[z] > 0.0 {
                value_ratio = value_ratio.max(sup_value[z] / self.base[z]);
                c1_ratio = c1_ratio.max((sup_value[z] + sup_deriv[z]) / self.base[z]);
            } else if sup_value[z] + sup_deriv[z] > 0.0 {
                value_ratio = f64::INFINITY;
                c1_ratio = f64::INFINITY;
            }
        }
        SampledPerturbation { samples, value_ratio, c1_ratio }
    }

    /// For each l, the minimum over sampled windows of 1 − |Σ_z π_z e^{i⟨l,z⟩}|.
    pub fn check_ellipticity(
        &self,
        l_set: Option<&[LatticePoint]>,
        sample_count: usize,
        torus_grid: usize,
        seed: u64,
    ) -> EllipticityReport {
        let default_l;
        let l_set = match l_set {
            Some(l) => l,
            None => {
                default_l = default_l_set(self.dim, 3);
                &default_l
            }
        };
        let windows = self.ellipticity_windows(sample_count, seed);
        let mut probs = vec![0.0; self.support.len()];
        let mut min_gap = vec![f64::INFINITY; l_set.len()];
        let mut torus_min = f64::INFINITY;
        let mut torus_arg = Vec::new();
        let torus = torus_points(self.dim, torus_grid);
        let torus_windows = windows.len().min(TORUS_WINDOWS);
        for (k, win) in windows.iter().enumerate() {
            self.probabilities_into(win, &mut probs);
            for (l, g) in l_set.iter().zip(min_gap.iter_mut()) {
                let xi: Vec<f64> = l.coords[..self.dim].iter().map(|&c| c as f64).collect();
                *g = g.min(1.0 - self.char_modulus(&probs, &xi));
            }
            if k < torus_windows {
                for xi in &torus {
                    let gap = 1.0 - self.char_modulus(&probs, xi);
                    if gap < torus_min {
                        torus_min = gap;
                        torus_arg = xi.clone();
                    }
                }
            }
        }
        let entries: Vec<EllipticityEntry> = l_set
            .iter()
            .zip(&min_gap)
            .map(|(l, &g)| EllipticityEntry {
                l: l.coords[..self.dim].to_vec(),
                min_gap: g,
                pass: g > ELLIPTIC_FLOOR,
            })
            .collect();
        let pass = entries.iter().all(|e| e.pass);
        EllipticityReport {
            pass,
            sample_count: windows.len(),
            entries,
            torus: (torus_grid >= 2).then(|| TorusSummary {
                grid: torus_grid,
                windows: torus_windows,
                min_gap: torus_min,
                argmin: torus_arg,
                degenerate: torus_min <= ELLIPTIC_FLOOR,
            }),
        }
    }

    fn ellipticity_windows(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let w = self.window_len();
        let mut rng = walk_rng(seed);
        let mut out = vec![vec![0.0; w], vec![1.0 - f64::EPSILON; w], vec![0.5; w]];
        while out.len() < count.max(3) {
            out.push((0..w).map(|_| rng.random::<f64>()).collect());
        }
        out.truncate(count.max(1));
        out
    }

    fn char_modulus(&self, probs: &[f64], xi: &[f64]) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (z, p) in self.support.iter().zip(probs) {
            let phase: f64 = xi.iter().zip(&z.coords).map(|(x, &c)| x * c as f64).sum();
            re += p * phase.cos();
            im += p * phase.sin();
        }
        re.hypot(im)
    }
}

const TORUS_WINDOWS: usize = 1000;

/// e^{2ε}(1+2ε) − 1.
pub fn epsilon_eff(epsilon: f64) -> f64 {
    (2.0 * epsilon).exp() * (1.0 + 2.0 * epsilon) - 1.0
}

/// All nonzero l ∈ Z^d with ‖l‖∞ ≤ r.
pub fn default_l_set(dim: usize, r: i32) -> Vec<LatticePoint> {
    box_offsets(dim, r).into_iter().filter(|l| *l != LatticePoint::zero()).collect()
}

/// ξ = 2πj/G per coordinate, excluding ξ = 0.
fn torus_points(dim: usize, grid: usize) -> Vec<Vec<f64>> {
    if grid < 2 {
        return Vec::new();
    }
    let total = grid.pow(dim as u32);
    (1..total)
        .map(|mut idx| {
            let mut xi = vec![0.0; dim];
            for c in xi.iter_mut().rev() {
                *c = TAU * (idx % grid) as f64 / grid as f64;
                idx /= grid;
            }
            xi
        })
        .collect()
}

/// Position, step count and private randomness of one walker.
#[derive(Clone, Debug)]
pub struct WalkState {
    pub position: LatticePoint,
    pub step_count: u64,
    pub stream: u64,
    rng: WalkRng,
}

impl WalkState {
    pub fn new(start: LatticePoint, stream: u64) -> Self {
        WalkState { position: start, step_count: 0, stream, rng: walk_rng(stream) }
    }

    pub fn rng(&mut self) -> &mut WalkRng {
        &mut self.rng
    }
}

#[derive(Clone, Debug)]
pub struct StepScratch {
    pub window: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationBound {
    pub epsilon_eff: f64,
    pub certified: bool,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SampledPerturbation {
    pub samples: usize,
    /// max_z sup |π_z − a_z| / a_z
    pub value_ratio: f64,
    /// max_z (sup |π_z − a_z| + sup |∂π_z|) / a_z
    pub c1_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticityEntry {
    pub l: Vec<i32>,
    pub min_gap: f64,
    pub pass: bool,
}

/// Informational scan over a torus grid of frequencies.
#[derive(Clone, Debug, Serialize)]
pub struct TorusSummary {
    pub grid: usize,
    pub windows: usize,
    pub min_gap: f64,
    pub argmin: Vec<f64>,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticityReport {
    pub pass: bool,
    pub sample_count: usize,
    pub entries: Vec<EllipticityEntry>,
    pub torus: Option<TorusSummary>,
}

/// Config form of a kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub support: Vec<Vec<i32>>,
    pub base_weights: Vec<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub potential: Option<PotentialSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// Keys are comma-separated displacements such as "1", "-1" or "1,0".
    Linear { coefficients: BTreeMap<String, Vec<f64>> },
}

impl KernelSpec {
    pub fn build(&self, dim: usize, epsilon: f64) -> Result<Kernel> {
        let support = self
            .support
            .iter()
            .map(|z| {
                if z.len() != dim {
                    Err(Error::Argument(format!("support point {z:?} is not {dim}-dimensional")))
                } else {
                    Ok(LatticePoint::from_slice(z))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        match &self.potential {
            None => Kernel::with_default_potential(dim, support, self.base_weights.clone(), epsilon),
            Some(PotentialSpec::Linear { coefficients }) => {
                let radius = support.iter().map(|z| z.norm()).max().unwrap_or(0) as i32;
                let w = box_offsets(dim, radius).len();
                let mut table = vec![vec![0.0; w]; support.len()];
                for (key, c) in coefficients {
                    let z = parse_point(key, dim)?;
                    let idx = support.iter().position(|s| *s == z).ok_or_else(|| {
                        Error::Argument(format!("coefficient key '{key}' is not in the support"))
                    })?;
                    table[idx] = c.clone();
                }
                Kernel::exponential(dim, support, self.base_weights.clone(), epsilon, table)
            }
        }
    }
}

fn parse_point(key: &str, dim: usize) -> Result<LatticePoint> {
    let coords = key
        .split(',')
        .map(|s| s.trim().parse::<i32>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Argument(format!("cannot parse displacement '{key}'")))?;
    if coords.len() != dim {
        return Err(Error::Argument(format!("displacement '{key}' is not {dim}-dimensional")));
    }
    Ok(LatticePoint::from_slice(&coords))
}
