//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use dynwalk::environment::EnvModel;
use dynwalk::estimators::clt::{annealed_cf_error, default_t_grid, CfParams};
use dynwalk::estimators::drift::{estimate_drift, DriftParams};
use dynwalk::estimators::ldp::{large_deviation_rate, LdpParams};
use dynwalk::estimators::quenched::{quenched_concentration, QuenchedMethod, QuenchedParams, Target, TestFunction};
use dynwalk::estimators::two_walk::{
    band, cross_correlation_vs_distance, encounter_count, excursion_survival, survival_probability, CrossParams,
    EncounterParams, ExcursionParams,
};
use dynwalk::estimators::variance::{variance_empirical, variance_green_kubo, EmpiricalParams, GreenKuboParams};
use dynwalk::estimators::Reference;
use dynwalk::experiment::Experiment;
use dynwalk::gambler::{check_domination, ruin_probability, simulate_ruin, RuinProblem};
use dynwalk::kernel::Kernel;
use dynwalk::map::{markov4, tripling, ExactPoint};
use dynwalk::spectral::{build_ulam, invariant_density};
use dynwalk::stats::{Axes, ScalingFit};
use dynwalk::Error;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const SEED: u64 = 2024;

type Verdict = (bool, String);

fn experiment(a_minus: f64, a_plus: f64, eps: f64) -> Experiment {
    let kernel = Kernel::nearest_neighbour(a_minus, a_plus, eps).unwrap();
    Experiment::new(EnvModel::preferred(tripling().unwrap(), 1).unwrap(), kernel, SEED).unwrap()
}

/// a = (0.3, 0.7) on {−1, +1} without perturbation: v = 0.4, Σ² = 0.84.
fn fixture() -> Experiment {
    experiment(0.3, 0.7, 0.0)
}

fn default_kernel() -> Experiment {
    experiment(0.5, 0.5, 0.05)
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn drift_oracle() -> Verdict {
    let exp = fixture();
    let clock = Instant::now();
    let r = single_threaded(|| estimate_drift(&exp, &DriftParams { n: 1000, replicates: 10_000 })).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    let (v, se) = (r.drift.get(), r.drift.se());
    let ok = (v - 0.4).abs() <= 3.0 * se && secs < 30.0;
    (ok, format!("v = {v:.5} ± {se:.5} against 0.4 (z = {:.2}), {secs:.1} s on one thread", (v - 0.4) / se))
}

fn variance_oracles() -> Verdict {
    let exp = fixture();
    let target = 0.84;
    let emp = variance_empirical(&exp, &EmpiricalParams { n: 1000, replicates: 10_000, reference: Reference::Auto })
        .unwrap();
    let gk = variance_green_kubo(
        &exp,
        &GreenKuboParams { burn_in: 200, lag_cutoff: 50, n_steps: 1000, replicates: 10_000, reference: Reference::Auto },
    )
    .unwrap();
    let close = |x: f64, se: f64| (x - target).abs() <= 3.0 * se && (x - target).abs() <= 0.03 * target;
    let (e, ese) = (emp.sigma2.get(), emp.sigma2.se());
    let (g, gse) = (gk.sigma2.get(), gk.sigma2.se());
    let worst = gk
        .lags
        .iter()
        .filter(|l| l.lag >= 1)
        .map(|l| (l.lag, (l.gamma[0] / l.std_error[0]).abs()))
        .fold((0, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let lags_ok = worst.1 <= 3.0;
    (
        close(e, ese) && close(g, gse) && lags_ok,
        format!(
            "empirical {e:.4} ± {ese:.4}, Green–Kubo {g:.4} ± {gse:.4} vs 0.84; largest lag |z| = {:.2} at lag {}",
            worst.1, worst.0
        ),
    )
}

fn cross_estimator() -> Verdict {
    let exp = default_kernel();
    let n = 1 << 12;
    let emp =
        variance_empirical(&exp, &EmpiricalParams { n, replicates: 10_000, reference: Reference::Auto }).unwrap();
    let gk = variance_green_kubo(
        &exp,
        &GreenKuboParams { burn_in: 200, lag_cutoff: 50, n_steps: n, replicates: 10_000, reference: Reference::Auto },
    )
    .unwrap();
    let (e, g) = (emp.sigma2.get(), gk.sigma2.get());
    let rel = (g - e).abs() / e;
    (rel <= 0.05, format!("Green–Kubo {g:.4}, empirical {e:.4}, relative gap {:.2}%", 100.0 * rel))
}

fn ulam_exactness() -> Verdict {
    let clock = Instant::now();
    let mut worst = 0.0f64;
    for n in [4, 400] {
        let r = invariant_density(&build_ulam(&markov4().unwrap(), n).unwrap()).unwrap();
        for (i, d) in r.invariant_density.iter().enumerate() {
            let q = 4 * i / n;
            let e = if q == 0 || q == 3 { 2.0 / 3.0 } else { 4.0 / 3.0 };
            worst = worst.max((d - e).abs());
        }
    }
    for n in [27, 400] {
        let r = invariant_density(&build_ulam(&tripling().unwrap(), n).unwrap()).unwrap();
        worst = r.invariant_density.iter().fold(worst, |w, d| w.max((d - 1.0).abs()));
    }
    let secs = clock.elapsed().as_secs_f64();
    (worst <= 1e-10 && secs < 5.0, format!("max density error {worst:.2e}, {secs:.2} s"))
}

fn spectral_gap() -> Verdict {
    let u = build_ulam(&tripling().unwrap(), 27).unwrap();
    // bin i of 27 maps onto bins 3i..3i+2 mod 27 with mass 1/3 each
    let oracle = DMatrix::from_fn(27, 27, |i, j| if (j + 27 - (3 * i) % 27) % 27 < 3 { 1.0 / 3.0 } else { 0.0 });
    let same = (0..27).all(|i| (0..27).all(|j| (u.entry(i, j) - oracle[(i, j)]).abs() < 1e-14));
    let mut mods: Vec<f64> = oracle.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    mods.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let est = invariant_density(&u).unwrap().second_modulus;
    let bound = 1.0 / 3.0 + 0.05;
    (
        same && est <= bound && mods[1] <= bound,
        format!("estimate {est:.3e}, brute-force eigensolve {:.3e}, bound {bound:.4}", mods[1]),
    )
}

fn exact_orbit() -> Verdict {
    let map = tripling().unwrap();
    let start = ExactPoint::new(0x2545_f491_4f6c_dd1d).unwrap();
    let mut p = start;
    let mut zero = false;
    let mut mismatches = 0;
    for k in 1..=1_000_000u64 {
        p = map.eval_exact(p).unwrap();
        zero |= p.numerator() == 0;
        if k % 50_000 == 0 && map.iterate_exact(start, k).unwrap() != p {
            mismatches += 1;
        }
    }
    let ff = map.iterate_exact(start, 1_000_000).unwrap();
    let ok = !zero && mismatches == 0 && ff == p && start.numerator() % 2 == 1;
    (ok, format!("10⁶ steps, zero hit: {zero}, checkpoint mismatches: {mismatches}, final {:#x}", p.numerator()))
}

/// I(a) for the ±1 symmetric walk.
fn cramer(a: f64) -> f64 {
    let (p, q) = ((1.0 + a) / 2.0, (1.0 - a) / 2.0);
    p * (2.0 * p).ln() + q * (2.0 * q).ln()
}

fn ldp() -> Verdict {
    let exp = experiment(0.5, 0.5, 0.0);
    let p = LdpParams {
        a_values: vec![0.2, 0.4],
        m_grid: (6..=12).map(|k| 1u64 << k).collect(),
        replicates: 1_000_000,
        reference: Reference::Auto,
    };
    let r = large_deviation_rate(&exp, &p).unwrap();
    let c = &r.curves[0];
    let (rate, r2) = match &c.fit {
        Some(f) => (-f.slope, f.r_squared),
        None => return (false, "no fit for a = 0.2".into()),
    };
    let oracle = cramer(0.2);
    let rel = rate / oracle - 1.0;
    let ratio = r.ratios.iter().find(|x| (x.a - 0.2).abs() < 1e-12).map(|x| x.ratio);
    let ok = r2 >= 0.95 && rel.abs() <= 0.25 && ratio.is_some_and(|x| (2.5..=6.0).contains(&x));
    (
        ok,
        format!(
            "rate(0.2) = {rate:.5} vs {oracle:.6} ({:+.1}%), r² {r2:.4}, rate(0.4)/rate(0.2) = {}",
            100.0 * rel,
            ratio.map_or("n/a".into(), |x| format!("{x:.3}"))
        ),
    )
}

fn annealed_cf() -> Verdict {
    let p = CfParams {
        n_grid: (8..=14).map(|k| 1u64 << k).collect(),
        t_grid: default_t_grid(),
        replicates: 100_000,
        reference: Reference::InSample,
    };
    let r = annealed_cf_error(&fixture(), &p).unwrap();
    let errs: Vec<String> = r.points.iter().map(|q| format!("{:.2e}", q.sup_error)).collect();
    (
        r.fit.slope <= -0.3,
        format!("slope {:.3} (r² {:.3}), sup errors [{}]", r.fit.slope, r.fit.r_squared, errs.join(", ")),
    )
}

fn quenched() -> Verdict {
    let grid: Vec<u64> = (8..=14).map(|k| 1u64 << k).collect();
    let base = QuenchedParams {
        n_grid: grid,
        theta_samples: 64,
        walks_per_theta: 256,
        test_fn: TestFunction::SmoothedIndicator { axis: 0, center: 0.0, width: 0.5 },
        method: QuenchedMethod::ExactLaw,
        // the symmetric kernel has zero drift for every environment law
        reference: Reference::Fixed { drift: vec![0.0], sigma2: None },
        target: Target::Auto,
        trim: 1e-20,
    };
    let hot = quenched_concentration(&default_kernel(), &base).unwrap();
    let (slope, r2) = match &hot.fit {
        Some(f) => (f.slope, f.r_squared),
        None => return (false, format!("no fit: {}", hot.failure.clone().unwrap_or_default())),
    };
    let control = quenched_concentration(
        &experiment(0.5, 0.5, 0.0),
        &QuenchedParams { method: QuenchedMethod::MonteCarlo, ..base },
    )
    .unwrap();
    let worst_z = control.points.iter().map(|q| (q.statistic / q.std_error).abs()).fold(0.0, f64::max);
    let ok = -slope > 0.0 && r2 >= 0.9 && worst_z <= 3.0;
    (ok, format!("β = {:.3} (r² {r2:.4}); ε = 0 control max |z| = {worst_z:.2} over {} N", -slope, control.points.len()))
}

/// Encounter counts of two independent ±1 walks, simulated through their
/// difference only.
fn difference_walk_counts(grid: &[u64], a: f64, reps: usize) -> Vec<f64> {
    let n_max = *grid.last().unwrap();
    let mut sums = vec![0.0; grid.len()];
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(77);
    for _ in 0..reps {
        let mut d = 0i64;
        let mut counts = vec![0u64; grid.len()];
        for t in 1..=n_max {
            let z1: i64 = if rng.random::<bool>() { 1 } else { -1 };
            let z2: i64 = if rng.random::<bool>() { 1 } else { -1 };
            d += z1 - z2;
            for (k, &n) in grid.iter().enumerate() {
                if t <= n && (d.abs() as f64) <= band(a, n) {
                    counts[k] += 1;
                }
            }
        }
        for (s, c) in sums.iter_mut().zip(counts) {
            *s += c as f64;
        }
    }
    sums.iter().map(|s| s / reps as f64).collect()
}

fn encounters() -> Verdict {
    let grid: Vec<u64> = (10..=16).map(|k| 1u64 << k).collect();
    let p = EncounterParams { n_grid: grid.clone(), a: 2.0, replicates: 512 };
    let hot = encounter_count(&default_kernel(), &p).unwrap();
    let cold = encounter_count(&experiment(0.5, 0.5, 0.0), &p).unwrap();
    let oracle_means = difference_walk_counts(&grid, 2.0, 512);
    let pts: Vec<(f64, f64)> = grid.iter().zip(&oracle_means).map(|(&n, &m)| (n as f64, m)).collect();
    let oracle = ScalingFit::fit(Axes::LogLog, &pts).unwrap();
    let in_range = |s: f64| (0.45..=0.75).contains(&s);
    let ok = hot.fit.slope <= 0.95
        && hot.fit.r_squared >= 0.9
        && in_range(cold.fit.slope)
        && in_range(oracle.slope)
        && (cold.fit.slope - oracle.slope).abs() <= 0.1;
    (
        ok,
        format!(
            "δ = {:.3} (r² {:.3}) at ε = 0.05; ε = 0 control {:.3}, difference-walk oracle {:.3}",
            hot.fit.slope, hot.fit.r_squared, cold.fit.slope, oracle.slope
        ),
    )
}

fn excursions() -> Verdict {
    let exp = default_kernel();
    let p = ExcursionParams { n_grid: (6..=12).map(|k| 1u64 << k).collect(), a: 2.0, separation_factor: 2.0, replicates: 4000 };
    let r = excursion_survival(&exp, &p).unwrap();
    let (rho, r2) = match (&r.rho, &r.fit) {
        (Some(rho), Some(f)) => (*rho, f.r_squared),
        _ => return (false, "no survival fit".into()),
    };
    let far = ExcursionParams { n_grid: vec![2, 4, 8], a: 1.0, separation_factor: 20.0, replicates: 500 };
    let s = excursion_survival(&exp, &far).unwrap();
    let structural_exact = s.points.iter().all(|q| q.structural && q.probability == 1.0);
    let simulated = s
        .points
        .iter()
        .all(|q| survival_probability(&exp, q.n, q.separation, q.band, 500, 99).unwrap() == 500);
    (
        rho < 1.0 && r2 >= 0.9 && structural_exact && simulated,
        format!("ρ = {rho:.3} (r² {r2:.3}); structural cases exactly 1: {structural_exact}, simulation agrees: {simulated}"),
    )
}

fn gambler() -> Verdict {
    let problem = RuinProblem::new(0.6, 0, 1, 3).unwrap();
    let closed = ruin_probability(&problem).unwrap();
    // textbook form (1 − (q/p)^α)/(1 − (q/p)^{α₂}) from α₁ = 0
    let r: f64 = 0.4 / 0.6;
    let textbook = (1.0 - r) / (1.0 - r.powi(3));
    let mc = simulate_ruin(&problem, 1_000_000, SEED).unwrap();
    let z = (mc.get() - closed) / mc.se();
    let dom = check_domination(
        |h: &[i64]| {
            let n = h.len() as i64;
            let x = *h.last().unwrap();
            0.55 + 0.4 * (((x + n).rem_euclid(5)) as f64 / 4.0)
        },
        0.55,
        10_000,
        1_000,
        SEED,
    )
    .unwrap();
    let half = matches!(ruin_probability(&RuinProblem::new(0.5, 0, 1, 3).unwrap()), Err(Error::Unsupported(_)));
    let ok = (closed - 0.473684210526).abs() < 1e-11 && (closed - textbook).abs() < 1e-14 && z.abs() <= 3.0 && dom.violations == 0 && half;
    (
        ok,
        format!(
            "closed form {closed:.9}, MC {:.5} ± {:.5} (z = {z:.2}), {} violations over {}×{}, p = 1/2 rejected: {half}",
            mc.get(),
            mc.se(),
            dom.violations,
            dom.paths,
            dom.steps
        ),
    )
}

fn decorrelation() -> Verdict {
    let p = CrossParams {
        separations: vec![0, 2, 8, 32],
        n_steps: 64,
        a: 2.0,
        replicates: 100_000,
        raw: false,
        reference: Reference::Auto,
    };
    let r = cross_correlation_vs_distance(&default_kernel(), &p).unwrap();
    let mags: Vec<f64> = r.points.iter().map(|q| q.magnitude).collect();
    let monotone = mags.windows(2).all(|w| w[1] <= w[0]);
    let last = r.points.last().unwrap();
    let ok = monotone && last.magnitude <= 3.0 * last.magnitude_se;
    let listing: Vec<String> = r.points.iter().map(|q| format!("{}: {:.2e}±{:.1e}", q.separation, q.magnitude, q.magnitude_se)).collect();
    (ok, format!("|c| by separation [{}]", listing.join(", ")))
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run_cli(config: &Path, out: &Path, threads: usize) -> bool {
    Command::new(env!("CARGO_BIN_EXE_dynwalk"))
        .args(["all", "--quiet", "--seed", "31", "--threads", &threads.to_string(), "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn reproducibility() -> Verdict {
    let config = workspace().join("configs/smoke.json");
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    let ran = run_cli(&config, &dirs[0], 1) && run_cli(&config, &dirs[1], 1) && run_cli(&config, &dirs[2], 8);
    if !ran {
        return (false, "CLI run failed".into());
    }
    let runs: Vec<_> = dirs.iter().map(|d| data_files(d)).collect();
    let twice = runs[0] == runs[1];
    let threads = runs[0] == runs[2];
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dirs[0].join("manifest.json")).unwrap()).unwrap();
    let listed = manifest["artifacts"].as_array().map_or(0, |a| a.len());
    (
        twice && threads && listed == runs[0].len() && !runs[0].is_empty(),
        format!(
            "{} artifacts; identical across runs: {twice}, across 1 vs 8 threads: {threads}; manifest lists {listed}",
            runs[0].len()
        ),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Verdict)> = vec![
        ("drift oracle", drift_oracle),
        ("variance oracles", variance_oracles),
        ("cross-estimator variance", cross_estimator),
        ("Ulam exactness", ulam_exactness),
        ("spectral gap", spectral_gap),
        ("exact orbit", exact_orbit),
        ("large deviations", ldp),
        ("annealed CF decay", annealed_cf),
        ("quenched concentration", quenched),
        ("encounter scaling", encounters),
        ("excursion survival", excursions),
        ("gambler's ruin", gambler),
        ("far-apart decorrelation", decorrelation),
        ("reproducibility", reproducibility),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let clock = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(v) => v,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !ok {
            failures += 1;
        }
        println!("{} {name}: {detail} [{:.1} s]", if ok { "PASS" } else { "FAIL" }, clock.elapsed().as_secs_f64());
    }
    println!("acceptance: {} failed", failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
