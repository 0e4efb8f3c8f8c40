use dynwalk::estimators::two_walk::{crossing_episodes, simulate_trace};
use dynwalk::environment::EnvModel;
use dynwalk::experiment::Experiment;
use dynwalk::gambler::{build_dominated_pair, check_domination, ruin_probability, simulate_ruin, RuinProblem};
use dynwalk::kernel::Kernel;
use dynwalk::lattice::LatticePoint;
use dynwalk::map::tripling;
use proptest::prelude::*;

/// Exit and entry times straight from the band definitions, by brute force
/// over every step.
fn brute_force_crossings(d: &[f64], l: f64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut inside_phase = true;
    for j in 1..d.len() {
        let exit = d[j - 1] <= l && d[j] > l;
        let entry = d[j - 1] > l && d[j] <= l;
        if (inside_phase && exit) || (!inside_phase && entry) {
            out.push(j as u64);
            inside_phase = !inside_phase;
        }
    }
    out
}

proptest! {
    #[test]
    fn crossings_interleave(steps in prop::collection::vec(-1i32..=1, 1..400), l in 0.0f64..6.0) {
        let mut x = 0i32;
        let mut d = vec![0.0];
        for s in steps {
            x += s;
            d.push(x.abs() as f64);
        }
        let e = crossing_episodes(&d, l);
        prop_assert_eq!(&e.times, &brute_force_crossings(&d, l));
        prop_assert!(e.interleaved());
        let n = (d.len() - 1) as u64;
        prop_assert_eq!(e.j, e.times.iter().filter(|&&s| s < n).count());
        for (k, &s) in e.times.iter().enumerate() {
            let (before, after) = (d[s as usize - 1], d[s as usize]);
            if k % 2 == 0 {
                prop_assert!(before <= l && after > l);
            } else {
                prop_assert!(before > l && after <= l);
            }
        }
    }

    #[test]
    fn coupled_chain_dominates(
        floor in 0.05f64..0.95,
        lift in prop::collection::vec(0.0f64..1.0, 8),
        seed in any::<u64>(),
    ) {
        // history-dependent probabilities above the floor
        let up = |h: &[i64]| {
            let last = *h.last().unwrap();
            let k = (last.rem_euclid(8)) as usize;
            floor + (1.0 - floor) * lift[k] * if h.len() % 3 == 0 { 0.5 } else { 1.0 }
        };
        let pair = build_dominated_pair(up, floor, 500, seed).unwrap();
        prop_assert_eq!(pair.violations(), 0);
        for n in 0..500 {
            let u = pair.shared_uniforms[n];
            let dx = pair.dominated[n + 1] - pair.dominated[n];
            let dy = pair.floor_chain[n + 1] - pair.floor_chain[n];
            prop_assert_eq!(dx, if u < 1.0 - pair.conditional_up_probs[n] { -1 } else { 1 });
            prop_assert_eq!(dy, if u < 1.0 - floor { -1 } else { 1 });
            prop_assert!(dx >= dy);
        }
    }
}

#[test]
fn domination_over_many_paths() {
    let up = |h: &[i64]| if h.last().unwrap() % 2 == 0 { 0.55 } else { 0.8 };
    let r = check_domination(up, 0.55, 2_000, 1_000, 7).unwrap();
    assert_eq!(r.violations, 0);
}

#[test]
fn closed_form_agrees_with_simulation_on_a_grid() {
    let grid = [(0.6, 0, 1, 3), (0.3, 0, 4, 6), (0.7, -3, 0, 5), (0.45, 0, 5, 10), (0.52, 0, 10, 20)];
    for (k, &(p, a1, a, a2)) in grid.iter().enumerate() {
        let problem = RuinProblem::new(p, a1, a, a2).unwrap();
        let exact = ruin_probability(&problem).unwrap();
        let mc = simulate_ruin(&problem, 40_000, k as u64).unwrap();
        assert!((mc.get() - exact).abs() <= 3.0 * mc.se(), "{problem:?}: {} vs {exact}", mc.get());
    }
}

#[test]
fn traces_from_the_same_seed_agree() {
    let kernel = Kernel::nearest_neighbour(0.5, 0.5, 0.05).unwrap();
    let exp = Experiment::new(EnvModel::preferred(tripling().unwrap(), 1).unwrap(), kernel, 12).unwrap();
    let a = simulate_trace(&exp, 300, 3.0, LatticePoint::axis(0, 5), 4).unwrap();
    let b = simulate_trace(&exp, 300, 3.0, LatticePoint::axis(0, 5), 4).unwrap();
    assert_eq!(a, b);
    let d: Vec<f64> =
        a.positions_x.iter().zip(&a.positions_y).map(|(x, y)| (*x - *y).norm() as f64).collect();
    assert_eq!(a.crossings.times, brute_force_crossings(&d, 3.0));
}
