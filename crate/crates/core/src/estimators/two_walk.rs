//! Two walks in one shared environment: traces, band crossings, encounter
//! counts, excursion survival and cross-correlation of increments.
//!
//! Band conventions: B⁻ = {‖X − Y‖ ≤ L} and B⁺ = {‖X − Y‖ > L}. Exit times
//! s₀, s₂, … are steps j with j−1 in B⁻ and j in B⁺; entry times s₁, s₃, …
//! are steps with j−1 in B⁺ and j in B⁻. They alternate, so
//! s₀ < s₁ < s₂ < …, and J = inf{k : s_k ≥ N} is the number of s_k below N.

use serde::{Deserialize, Serialize};

use super::{cell, check_grid, check_replicates, Reference, Report, Table};
use crate::error::{Error, Result};
use crate::experiment::{ordered_map, Experiment, PairRun};
use crate::kernel::WalkState;
use crate::lattice::{LatticePoint, MAX_DIM};
use crate::rng::tag;
use crate::stats::{mean_se, zero_event_upper_bound, Axes, ScalingFit};

pub const DEFAULT_A: f64 = 2.0;

fn default_a() -> f64 {
    DEFAULT_A
}

/// L_N = A ln N.
pub fn band(a: f64, n: u64) -> f64 {
    a * (n as f64).ln()
}

fn distance(x: &LatticePoint, y: &LatticePoint) -> f64 {
    (*x - *y).norm() as f64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CrossingEpisodes {
    /// s₀, s₁, … up to the first one ≥ N that occurs within the trace.
    pub times: Vec<u64>,
    pub j: usize,
}

impl CrossingEpisodes {
    /// True when s_{2k} < s_{2k+1} < s_{2k+2} throughout.
    pub fn interleaved(&self) -> bool {
        self.times.windows(2).all(|w| w[0] < w[1])
    }
}

/// Crossing times of the band ‖·‖ ≤ `l` for the distance sequence d_0..d_N.
pub fn crossing_episodes(distances: &[f64], l: f64) -> CrossingEpisodes {
    let n = distances.len().saturating_sub(1) as u64;
    let mut times = Vec::new();
    let mut expecting_exit = true;
    for j in 1..distances.len() {
        let before = distances[j - 1] <= l;
        let after = distances[j] <= l;
        if expecting_exit && before && !after {
            times.push(j as u64);
            expecting_exit = false;
        } else if !expecting_exit && !before && after {
            times.push(j as u64);
            expecting_exit = true;
        }
    }
    let j = times.iter().filter(|&&s| s < n).count();
    CrossingEpisodes { times, j }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoWalkTrace {
    pub positions_x: Vec<LatticePoint>,
    pub positions_y: Vec<LatticePoint>,
    pub band: f64,
    pub encounter_flags: Vec<bool>,
    pub crossings: CrossingEpisodes,
}

impl TwoWalkTrace {
    pub fn from_paths(positions_x: Vec<LatticePoint>, positions_y: Vec<LatticePoint>, band: f64) -> Result<Self> {
        if positions_x.len() != positions_y.len() || positions_x.is_empty() {
            return Err(Error::Argument("paths must be nonempty and of equal length".into()));
        }
        let dist: Vec<f64> = positions_x.iter().zip(&positions_y).map(|(x, y)| distance(x, y)).collect();
        let encounter_flags = dist.iter().map(|&d| d <= band).collect();
        let crossings = crossing_episodes(&dist, band);
        Ok(TwoWalkTrace { positions_x, positions_y, band, encounter_flags, crossings })
    }

    pub fn steps(&self) -> u64 {
        self.positions_x.len() as u64 - 1
    }

    /// Card{1 ≤ t ≤ N : ‖X_t − Y_t‖ ≤ L}.
    pub fn encounters(&self) -> usize {
        self.encounter_flags[1..].iter().filter(|&&f| f).count()
    }
}

fn pair<'a>(exp: &'a Experiment, est: u64, slot: u64, rep: u64, offset: LatticePoint) -> PairRun<'a> {
    let env = exp.environment(exp.env_seed(est, slot, rep));
    let x = WalkState::new(exp.start, exp.walk_seed(est, slot, rep, 0));
    let y = WalkState::new(exp.start + offset, exp.walk_seed(est, slot, rep, 1));
    PairRun::new(&exp.kernel, env, x, y)
}

/// Runs two walks for `n` steps from `start` and `start + offset`.
pub fn simulate_trace(exp: &Experiment, n: u64, l: f64, offset: LatticePoint, rep: u64) -> Result<TwoWalkTrace> {
    let mut run = pair(exp, tag::TRACE, 0, rep, offset);
    let mut xs = vec![run.x.position];
    let mut ys = vec![run.y.position];
    for _ in 0..n {
        run.step()?;
        xs.push(run.x.position);
        ys.push(run.y.position);
    }
    TwoWalkTrace::from_paths(xs, ys, l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingParams {
    pub n: u64,
    #[serde(default = "default_a")]
    pub a: f64,
    pub replicates: usize,
    /// Initial offset of Y along the first axis.
    #[serde(default)]
    pub separation: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossingReport {
    pub n: u64,
    pub band: f64,
    pub mean_j: f64,
    pub j_se: f64,
    pub interleaving_violations: usize,
    pub episodes: Vec<CrossingEpisodes>,
}

pub fn crossing_statistics(exp: &Experiment, p: &CrossingParams) -> Result<CrossingReport> {
    if p.n == 0 {
        return Err(Error::Argument("N must be positive".into()));
    }
    check_replicates(p.replicates, 2)?;
    let l = band(p.a, p.n);
    let episodes = ordered_map(p.replicates, |r| {
        Ok(simulate_trace(exp, p.n, l, LatticePoint::axis(0, p.separation), r as u64)?.crossings)
    })?;
    let js: Vec<f64> = episodes.iter().map(|e| e.j as f64).collect();
    let (mean_j, j_se) = mean_se(&js);
    let interleaving_violations = episodes.iter().filter(|e| !e.interleaved()).count();
    Ok(CrossingReport { n: p.n, band: l, mean_j, j_se, interleaving_violations, episodes })
}

impl Report for CrossingReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["replicate", "j", "times"]);
        for (r, e) in self.episodes.iter().enumerate() {
            let times: Vec<String> = e.times.iter().map(|s| s.to_string()).collect();
            t.push(vec![r.to_string(), e.j.to_string(), times.join(";")]);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncounterParams {
    pub n_grid: Vec<u64>,
    #[serde(default = "default_a")]
    pub a: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EncounterPoint {
    pub n: u64,
    pub band: f64,
    pub mean_count: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EncounterReport {
    pub a: f64,
    pub replicates: usize,
    pub points: Vec<EncounterPoint>,
    pub fit: ScalingFit,
}

/// Encounter counts for every N of the grid from one pair of paths run to
/// the largest N.
pub fn encounter_count(exp: &Experiment, p: &EncounterParams) -> Result<EncounterReport> {
    check_grid("N grid", &p.n_grid)?;
    check_replicates(p.replicates, 2)?;
    if !(p.a > 0.0) {
        return Err(Error::Argument("A must be positive".into()));
    }
    let bands: Vec<f64> = p.n_grid.iter().map(|&n| band(p.a, n)).collect();
    let n_max = *p.n_grid.last().expect("grid");
    let counts = ordered_map(p.replicates, |r| {
        let mut run = pair(exp, tag::ENCOUNTER, 0, r as u64, LatticePoint::zero());
        let mut c = vec![0u64; bands.len()];
        for t in 1..=n_max {
            run.step()?;
            let dist = distance(&run.x.position, &run.y.position);
            for (k, (&n, &l)) in p.n_grid.iter().zip(&bands).enumerate() {
                if t <= n && dist <= l {
                    c[k] += 1;
                }
            }
        }
        Ok(c)
    })?;
    let points: Vec<EncounterPoint> = p
        .n_grid
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let xs: Vec<f64> = counts.iter().map(|c| c[k] as f64).collect();
            let (mean_count, std_error) = mean_se(&xs);
            EncounterPoint { n, band: bands[k], mean_count, std_error }
        })
        .collect();
    let grid: Vec<(f64, f64)> = points.iter().map(|q| (q.n as f64, q.mean_count)).collect();
    let fit = ScalingFit::fit(Axes::LogLog, &grid)?;
    Ok(EncounterReport { a: p.a, replicates: p.replicates, points, fit })
}

impl Report for EncounterReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["n", "mean_count", "std_error", "replicates", "band"]);
        for q in &self.points {
            t.push(vec![
                q.n.to_string(),
                q.mean_count.to_string(),
                q.std_error.to_string(),
                self.replicates.to_string(),
                q.band.to_string(),
            ]);
        }
        t
    }

    fn fit(&self) -> Option<&ScalingFit> {
        Some(&self.fit)
    }
}

fn default_separation_factor() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcursionParams {
    pub n_grid: Vec<u64>,
    #[serde(default = "default_a")]
    pub a: f64,
    /// Initial separation ⌈factor·L_N⌉ along the first axis.
    #[serde(default = "default_separation_factor")]
    pub separation_factor: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurvivalPoint {
    pub n: u64,
    pub band: f64,
    pub separation: i32,
    pub survivals: u64,
    pub trials: u64,
    pub probability: f64,
    pub std_error: f64,
    /// Separation beyond reach: the walks cannot meet, probability exactly 1.
    pub structural: bool,
    pub upper_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcursionReport {
    pub a: f64,
    pub points: Vec<SurvivalPoint>,
    pub fit: Option<ScalingFit>,
    /// ρ̂ = −slope of ln P against ln N.
    pub rho: Option<f64>,
}

/// Fraction of `reps` pairs started `separation` apart along the first
/// axis that keep ‖X_j − Y_j‖ > l for all j ≤ n.
pub fn survival_probability(exp: &Experiment, n: u64, separation: i32, l: f64, reps: usize, slot: u64) -> Result<u64> {
    let offset = LatticePoint::axis(0, separation);
    if distance(&LatticePoint::zero(), &offset) <= l {
        return Ok(0);
    }
    let alive = ordered_map(reps, |r| {
        let mut run = pair(exp, tag::EXCURSION, slot, r as u64, offset);
        for _ in 0..n {
            run.step()?;
            if distance(&run.x.position, &run.y.position) <= l {
                return Ok(false);
            }
        }
        Ok(true)
    })?;
    Ok(alive.iter().filter(|&&a| a).count() as u64)
}

pub fn excursion_survival(exp: &Experiment, p: &ExcursionParams) -> Result<ExcursionReport> {
    check_grid("N grid", &p.n_grid)?;
    check_replicates(p.replicates, 2)?;
    if !(p.separation_factor > 1.0) {
        return Err(Error::Argument("separation factor must exceed 1 so that pairs start outside the band".into()));
    }
    let c0 = exp.kernel.radius() as f64;
    let mut points = Vec::with_capacity(p.n_grid.len());
    for (slot, &n) in p.n_grid.iter().enumerate() {
        let l = band(p.a, n);
        let separation = (p.separation_factor * l).ceil().max(l.floor() + 1.0) as i32;
        let trials = p.replicates as u64;
        let structural = separation as f64 > 2.0 * n as f64 * c0 + l;
        let survivals =
            if structural { trials } else { survival_probability(exp, n, separation, l, p.replicates, slot as u64)? };
        let prob = survivals as f64 / trials as f64;
        points.push(SurvivalPoint {
            n,
            band: l,
            separation,
            survivals,
            trials,
            probability: prob,
            std_error: (prob * (1.0 - prob) / trials as f64).sqrt(),
            structural,
            upper_bound: (survivals == 0).then(|| zero_event_upper_bound(trials)),
        });
    }
    let grid: Vec<(f64, f64)> =
        points.iter().filter(|q| q.survivals > 0).map(|q| (q.n as f64, q.probability)).collect();
    let fit = if grid.len() >= 2 { Some(ScalingFit::fit(Axes::LogLog, &grid)?) } else { None };
    let rho = fit.as_ref().map(|f| -f.slope);
    Ok(ExcursionReport { a: p.a, points, fit, rho })
}

impl Report for ExcursionReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&[
            "n",
            "band",
            "separation",
            "survivals",
            "trials",
            "probability",
            "std_error",
            "structural",
        ]);
        for q in &self.points {
            t.push(vec![
                q.n.to_string(),
                q.band.to_string(),
                q.separation.to_string(),
                q.survivals.to_string(),
                q.trials.to_string(),
                q.probability.to_string(),
                q.std_error.to_string(),
                q.structural.to_string(),
            ]);
        }
        t
    }

    fn fit(&self) -> Option<&ScalingFit> {
        self.fit.as_ref()
    }
}

fn default_cross_steps() -> u64 {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossParams {
    /// Initial offsets of Y along the first axis.
    pub separations: Vec<i32>,
    #[serde(default = "default_cross_steps")]
    pub n_steps: u64,
    #[serde(default = "default_a")]
    pub a: f64,
    pub replicates: usize,
    /// Use raw increments Δ instead of the conditional drift g.
    #[serde(default)]
    pub raw: bool,
    #[serde(default)]
    pub reference: Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossPoint {
    pub separation: i32,
    /// Row-major d×d mean of (1/n) Σ_{|k−m|≤W} (Δ̃ˣ_k ⊗ Δ̃ʸ_m).
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Largest |entry| and its standard error.
    pub magnitude: f64,
    pub magnitude_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossReport {
    pub n_steps: u64,
    pub lag_window: u64,
    pub raw: bool,
    pub drift: Vec<f64>,
    pub points: Vec<CrossPoint>,
}

/// Per-replicate sums for one separation, before centering.
struct CrossSums {
    prod: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
    count: f64,
    mean_x: Vec<f64>,
}

fn cross_sums(exp: &Experiment, p: &CrossParams, slot: u64, rep: u64, window: u64) -> Result<CrossSums> {
    let d = exp.dim();
    let sep = p.separations[slot as usize];
    let mut run = pair(exp, tag::CROSS, slot, rep, LatticePoint::axis(0, sep));
    let n = p.n_steps as usize;
    let mut gx = Vec::with_capacity(n);
    let mut gy = Vec::with_capacity(n);
    for _ in 0..n {
        let (zx, zy) = run.step()?;
        if p.raw {
            gx.push(zx.as_f64(d));
            gy.push(zy.as_f64(d));
        } else {
            gx.push(run.kernel.mean_of(run.probs_x())[..d].to_vec());
            gy.push(run.kernel.mean_of(run.probs_y())[..d].to_vec());
        }
    }
    // prefix sums of gy for the lag window
    let mut pre = vec![[0.0; MAX_DIM]; n + 1];
    for k in 0..n {
        for i in 0..d {
            pre[k + 1][i] = pre[k][i] + gy[k][i];
        }
    }
    let w = window as usize;
    let mut s = CrossSums {
        prod: vec![0.0; d * d],
        sx: vec![0.0; d],
        sy: vec![0.0; d],
        count: 0.0,
        mean_x: vec![0.0; d],
    };
    for k in 0..n {
        let lo = k.saturating_sub(w);
        let hi = (k + w + 1).min(n);
        let cnt = (hi - lo) as f64;
        for i in 0..d {
            s.sx[i] += gx[k][i] * cnt;
            s.sy[i] += pre[hi][i] - pre[lo][i];
            s.mean_x[i] += (gx[k][i] + gy[k][i]) / (2.0 * n as f64);
            for j in 0..d {
                s.prod[i * d + j] += gx[k][i] * (pre[hi][j] - pre[lo][j]);
            }
        }
        s.count += cnt;
    }
    Ok(s)
}

pub fn cross_correlation_vs_distance(exp: &Experiment, p: &CrossParams) -> Result<CrossReport> {
    if p.separations.is_empty() {
        return Err(Error::Argument("separation list is empty".into()));
    }
    if p.n_steps < 2 {
        return Err(Error::Argument("n_steps must be at least 2".into()));
    }
    check_replicates(p.replicates, 2)?;
    let d = exp.dim();
    let window = band(p.a, p.n_steps).floor().max(0.0) as u64;
    let fixed = p.reference.resolve(exp)?.drift;
    let mut all = Vec::with_capacity(p.separations.len());
    for slot in 0..p.separations.len() {
        all.push(ordered_map(p.replicates, |r| cross_sums(exp, p, slot as u64, r as u64, window))?);
    }
    let drift = match fixed {
        Some(v) => v,
        None => {
            let total = (all.len() * p.replicates) as f64;
            (0..d).map(|i| all.iter().flatten().map(|s| s.mean_x[i]).sum::<f64>() / total).collect()
        }
    };
    let nf = p.n_steps as f64;
    let points = p
        .separations
        .iter()
        .zip(&all)
        .map(|(&separation, sums)| {
            let mut value = vec![0.0; d * d];
            let mut std_error = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    let c: Vec<f64> = sums
                        .iter()
                        .map(|s| {
                            (s.prod[i * d + j] - s.sx[i] * drift[j] - drift[i] * s.sy[j]
                                + s.count * drift[i] * drift[j])
                                / nf
                        })
                        .collect();
                    let (m, se) = mean_se(&c);
                    value[i * d + j] = m;
                    std_error[i * d + j] = se;
                }
            }
            let (k, magnitude) = value
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (k, v)| if v.abs() > best.1 { (k, v.abs()) } else { best });
            CrossPoint { separation, magnitude_se: std_error[k], value, std_error, magnitude }
        })
        .collect();
    Ok(CrossReport { n_steps: p.n_steps, lag_window: window, raw: p.raw, drift, points })
}

impl Report for CrossReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["separation", "correlation", "std_error", "magnitude", "magnitude_se"]);
        for q in &self.points {
            t.push(vec![
                q.separation.to_string(),
                cell(&q.value),
                cell(&q.std_error),
                q.magnitude.to_string(),
                q.magnitude_se.to_string(),
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

    fn exp(eps: f64) -> Experiment {
        let k = Kernel::nearest_neighbour(0.5, 0.5, eps).unwrap();
        Experiment::new(EnvModel::preferred(tripling().unwrap(), 1).unwrap(), k, 31).unwrap()
    }

    #[test]
    fn hand_built_trace() {
        // distances 0 1 2 3 2 1 2 3 3 1 0 with L = 1.5
        let d = [0, 1, 2, 3, 2, 1, 2, 3, 3, 1, 0];
        let xs: Vec<LatticePoint> = d.iter().map(|&k| LatticePoint::axis(0, k)).collect();
        let ys = vec![LatticePoint::zero(); d.len()];
        let t = TwoWalkTrace::from_paths(xs, ys, 1.5).unwrap();
        assert_eq!(t.crossings.times, vec![2, 5, 6, 9]);
        assert_eq!(t.crossings.j, 4);
        assert!(t.crossings.interleaved());
        assert_eq!(t.encounters(), 4);
        assert_eq!(t.steps(), 10);
    }

    #[test]
    fn crossing_at_last_step_does_not_count() {
        let e = crossing_episodes(&[0.0, 0.0, 5.0], 1.0);
        assert_eq!(e.times, vec![2]);
        assert_eq!(e.j, 0);
        let never = crossing_episodes(&[0.0, 1.0, 0.0, 1.0], 1.0);
        assert!(never.times.is_empty());
        assert_eq!(never.j, 0);
    }

    #[test]
    fn single_step_encounters() {
        let p = EncounterParams { n_grid: vec![1, 2], a: 2.0, replicates: 50 };
        let r = encounter_count(&exp(0.05), &p).unwrap();
        assert!(r.points[0].mean_count <= 1.0);
        // L_1 = 0: an encounter at N = 1 means the walkers coincide
        assert_eq!(r.points[0].band, 0.0);
    }

    #[test]
    fn structural_survival_is_one() {
        let p = ExcursionParams { n_grid: vec![2, 4], a: 1.0, separation_factor: 20.0, replicates: 100 };
        let r = excursion_survival(&exp(0.05), &p).unwrap();
        assert!(r.points.iter().all(|q| q.structural && q.probability == 1.0));
        // the simulation agrees
        let q = &r.points[1];
        assert_eq!(survival_probability(&exp(0.05), q.n, q.separation, q.band, 100, 9).unwrap(), 100);
    }

    #[test]
    fn unperturbed_cross_correlation_vanishes() {
        let p = CrossParams {
            separations: vec![0, 4],
            n_steps: 16,
            a: 2.0,
            replicates: 50,
            raw: false,
            reference: Reference::Auto,
        };
        let r = cross_correlation_vs_distance(&exp(0.0), &p).unwrap();
        assert_eq!(r.lag_window, 5);
        assert!(r.points.iter().all(|q| q.magnitude == 0.0));
    }

    #[test]
    fn trace_interleaving() {
        let e = exp(0.05);
        for rep in 0..50 {
            let t = simulate_trace(&e, 200, 2.0, LatticePoint::zero(), rep).unwrap();
            assert!(t.crossings.interleaved());
            for (f, (x, y)) in t.encounter_flags.iter().zip(t.positions_x.iter().zip(&t.positions_y)) {
                assert_eq!(*f, distance(x, y) <= 2.0);
            }
        }
    }
}
