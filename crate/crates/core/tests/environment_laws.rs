use dynwalk::environment::{Backend, EnvModel};
use dynwalk::lattice::LatticePoint;
use dynwalk::map::{markov4, tripling, PiecewiseExpandingMap};
use proptest::prelude::*;

fn markov4_cdf(x: f64) -> f64 {
    // density 2/3, 4/3, 4/3, 2/3 on the quarters
    let w = [2.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0, 2.0 / 3.0];
    let mut acc = 0.0;
    for (k, d) in w.iter().enumerate() {
        let lo = k as f64 / 4.0;
        if x <= lo {
            break;
        }
        acc += d * (x.min(lo + 0.25) - lo);
    }
    acc
}

fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn site_sample(map: PiecewiseExpandingMap, dim: usize, advances: u64, n: i32) -> Vec<f64> {
    let model = EnvModel::preferred(map, dim).unwrap();
    let mut env = model.instantiate(2024);
    for _ in 0..advances {
        env.advance();
    }
    (0..n).map(|k| env.site_value(&LatticePoint::axis(0, k))).collect()
}

#[test]
fn initial_sites_follow_invariant_density() {
    let d = ks(site_sample(tripling().unwrap(), 1, 0, 100_000), |x| x);
    assert!(d <= 0.01, "tripling KS {d}");
    let d = ks(site_sample(markov4().unwrap(), 1, 0, 100_000), markov4_cdf);
    assert!(d <= 0.01, "markov4 KS {d}");
    let d = ks(site_sample(markov4().unwrap(), 2, 0, 100_000), markov4_cdf);
    assert!(d <= 0.01, "markov4 d=2 KS {d}");
}

#[test]
fn site_law_is_stationary() {
    let d = ks(site_sample(tripling().unwrap(), 1, 1000, 100_000), |x| x);
    assert!(d <= 0.02, "tripling KS {d}");
    let d = ks(site_sample(markov4().unwrap(), 1, 1000, 100_000), markov4_cdf);
    assert!(d <= 0.02, "markov4 KS {d}");
}

#[test]
fn float_backend_follows_same_law() {
    let model = EnvModel::new(markov4().unwrap(), 1, Backend::Float).unwrap();
    let mut env = model.instantiate(5);
    for _ in 0..30 {
        env.advance();
    }
    let xs: Vec<f64> = (0..50_000).map(|k| env.site_value(&LatticePoint::axis(0, k))).collect();
    let d = ks(xs, markov4_cdf);
    assert!(d <= 0.02, "KS {d}");
}

#[test]
fn only_queried_sites_are_stored() {
    let model = EnvModel::preferred(tripling().unwrap(), 2).unwrap();
    let mut env = model.instantiate(1);
    assert_eq!(env.materialized(), 0);
    env.window(&LatticePoint::zero(), 1).unwrap();
    assert_eq!(env.materialized(), 9);
    env.advance();
    env.window(&LatticePoint::axis(0, 1), 1).unwrap();
    assert_eq!(env.materialized(), 12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Values seen by a sparse, shuffled query pattern equal those of a
    /// dense reference pass that reads every site at every time.
    #[test]
    fn access_order_does_not_matter(
        plan in prop::collection::vec(prop::collection::vec(-15i32..15, 0..6), 1..40),
        markov in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let map = if markov { markov4().unwrap() } else { tripling().unwrap() };
        let model = EnvModel::preferred(map, 1).unwrap();
        let mut sparse = model.instantiate(seed);
        let mut dense = model.instantiate(seed);
        for queries in &plan {
            let reference: Vec<u64> = (-15..15).map(|k| dense.site_value(&LatticePoint::axis(0, k)).to_bits()).collect();
            for &k in queries {
                let v = sparse.site_value(&LatticePoint::axis(0, k)).to_bits();
                prop_assert_eq!(v, reference[(k + 15) as usize]);
            }
            sparse.advance();
            dense.advance();
        }
    }
}
