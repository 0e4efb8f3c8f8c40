use dynwalk::map::{builtin, markov4, perturbed_tripling, tripling, ExactPoint};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const MODULUS: u64 = 1 << 62;

#[test]
fn branches_partition_the_interval() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
    for name in ["tripling", "markov4"] {
        let map = builtin(name).unwrap();
        let branches = map.branches();
        for _ in 0..1_000_000 {
            let x: f64 = rng.random();
            let hits = branches.iter().filter(|b| x >= b.left && x < b.right).count();
            assert_eq!(hits, 1, "{name} at {x}");
            let b = map.branch_of(x).unwrap();
            assert!(x >= branches[b].left && x < branches[b].right);
            let y = map.eval(x).unwrap();
            assert!((0.0..=1.0).contains(&y), "{name}: T({x}) = {y}");
        }
    }
}

#[test]
fn tripling_orbit_stays_exact_for_a_million_steps() {
    let map = tripling().unwrap();
    let start = ExactPoint::new(0x1234_5678_9abc_def1).unwrap();
    let mut p = start;
    // independent reference: 3x mod 2^62 on the raw numerator
    let mut raw = start.numerator();
    for _ in 0..1_000_000 {
        p = map.eval_exact(p).unwrap();
        raw = raw.wrapping_mul(3) & (MODULUS - 1);
        assert_eq!(p.numerator(), raw);
        assert_ne!(raw, 0);
        assert_eq!(raw & 1, 1);
    }
    assert_eq!(map.iterate_exact(start, 1_000_000).unwrap(), p);
    assert_eq!(map.iterate_exact_stepwise(start, 1_000_000).unwrap(), p);
}

#[test]
fn markov4_orbit_stepwise_matches_fast_forward() {
    let map = markov4().unwrap();
    let start = ExactPoint::new(0x0f0f_0f0f_0f0f_0f0f).unwrap();
    let mut p = start;
    for _ in 0..1_000_000 {
        p = map.eval_exact(p).unwrap();
    }
    assert_eq!(map.iterate_exact(start, 1_000_000).unwrap(), p);
}

#[test]
fn smooth_branches_expand() {
    let map = perturbed_tripling(0.05).unwrap();
    let lambda = map.lambda_min();
    assert!(lambda > 2.0);
    for b in map.branches() {
        for k in 0..1000 {
            let x = b.left + (b.right - b.left) * (k as f64 + 0.5) / 1000.0;
            let h = 1e-7;
            let numeric = (b.apply(x + h) - b.apply(x - h)) / (2.0 * h);
            assert!(numeric.abs() >= lambda - 1e-6, "{numeric} at {x}");
        }
    }
}

proptest! {
    #[test]
    fn fast_forward_composes(num in 1u64..MODULUS, a in 0u64..5000, b in 0u64..5000) {
        let map = tripling().unwrap();
        let p = ExactPoint::new(num).unwrap();
        let ab = map.iterate_exact(p, a + b).unwrap();
        prop_assert_eq!(ab, map.iterate_exact(map.iterate_exact(p, a).unwrap(), b).unwrap());
        prop_assert_eq!(map.iterate_exact(p, a).unwrap(), map.iterate_exact_stepwise(p, a).unwrap());
    }

    #[test]
    fn exact_step_tracks_float_step(num in 0u64..MODULUS) {
        let map = markov4().unwrap();
        let p = ExactPoint::new(num).unwrap();
        let x = p.to_f64();
        let q = map.eval_exact(p).unwrap().to_f64();
        let y = map.eval(x).unwrap();
        // the two agree up to the 53-bit truncation scaled by the slope, mod 1
        let diff = (q - y).abs();
        prop_assert!(diff < 1e-14 || (1.0 - diff) < 1e-14, "{} vs {}", q, y);
    }
}
