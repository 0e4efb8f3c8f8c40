//! Block sampler for environment-free kernels.
//!
//! When π does not depend on θ the increments are i.i.d. with law a, so the
//! sum of `block` steps can be drawn in one go from the `block`-fold
//! convolution of a. Endpoints have the same law as stepwise simulation but
//! are not bit-identical to it.

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::lattice::LatticePoint;
use crate::rng::WalkRng;

/// Largest block used by [`BlockSampler::for_kernel`].
pub const MAX_BLOCK: usize = 64;
const MAX_CELLS: usize = 1 << 18;

#[derive(Clone, Debug)]
pub struct BlockSampler {
    block: usize,
    step_points: Vec<LatticePoint>,
    step: WeightedAliasIndex<f64>,
    block_points: Vec<LatticePoint>,
    sum: WeightedAliasIndex<f64>,
}

impl BlockSampler {
    /// Largest block ≤ [`MAX_BLOCK`] whose convolution table stays small.
    pub fn for_kernel(kernel: &Kernel) -> Result<Self> {
        let d = kernel.dim() as u32;
        let r = kernel.radius().max(1) as usize;
        let mut block = MAX_BLOCK;
        while block > 1 && (2 * block * r + 1).pow(d) > MAX_CELLS {
            block /= 2;
        }
        Self::new(kernel, block)
    }

    pub fn new(kernel: &Kernel, block: usize) -> Result<Self> {
        if !kernel.is_environment_free() {
            return Err(Error::Unsupported("block sampling needs an environment-free kernel".into()));
        }
        if block == 0 {
            return Err(Error::Argument("block length must be positive".into()));
        }
        let d = kernel.dim();
        let support = kernel.support();
        let base = kernel.base_weights();
        let reach = (block as i32) * kernel.radius();
        let side = (2 * reach + 1) as usize;
        let cells = side.pow(d as u32);
        if cells > MAX_CELLS {
            return Err(Error::Argument(format!("block {block} needs {cells} cells")));
        }
        let index = |p: &LatticePoint| -> usize {
            (0..d).fold(0, |acc, i| acc * side + (p.coords[i] + reach) as usize)
        };
        let point = |mut k: usize| -> LatticePoint {
            let mut p = LatticePoint::zero();
            for i in (0..d).rev() {
                p.coords[i] = (k % side) as i32 - reach;
                k /= side;
            }
            p
        };
        let mut dist = vec![0.0; cells];
        dist[index(&LatticePoint::zero())] = 1.0;
        for _ in 0..block {
            let mut next = vec![0.0; cells];
            for (k, &m) in dist.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let p = point(k);
                for (z, a) in support.iter().zip(base) {
                    if *a > 0.0 {
                        next[index(&(p + *z))] += m * a;
                    }
                }
            }
            dist = next;
        }
        let (block_points, weights): (Vec<_>, Vec<_>) =
            dist.iter().enumerate().filter(|(_, m)| **m > 0.0).map(|(k, m)| (point(k), *m)).unzip();
        let sum = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::Numerical { message: format!("block table: {e}"), residual: 0.0 })?;
        let (step_points, step_w): (Vec<_>, Vec<_>) =
            support.iter().zip(base).filter(|(_, a)| **a > 0.0).map(|(z, a)| (*z, *a)).unzip();
        let step = WeightedAliasIndex::new(step_w)
            .map_err(|e| Error::Numerical { message: format!("step table: {e}"), residual: 0.0 })?;
        Ok(BlockSampler { block, step_points, step, block_points, sum })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    /// Sum of `n` i.i.d. steps.
    pub fn sample(&self, rng: &mut WalkRng, n: u64) -> LatticePoint {
        let b = self.block as u64;
        let mut x = LatticePoint::zero();
        for _ in 0..n / b {
            x = x + self.block_points[rng.sample(&self.sum)];
        }
        for _ in 0..n % b {
            x = x + self.step_points[rng.sample(&self.step)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::walk_rng;

    #[test]
    fn rejects_environment_dependent_kernels() {
        let k = Kernel::nearest_neighbour(0.5, 0.5, 0.05).unwrap();
        assert!(BlockSampler::for_kernel(&k).is_err());
    }

    #[test]
    fn block_law_matches_binomial() {
        let k = Kernel::nearest_neighbour(0.3, 0.7, 0.0).unwrap();
        let s = BlockSampler::new(&k, 8).unwrap();
        let mut rng = walk_rng(5);
        let n = 200_000;
        let mut counts = [0u64; 9];
        for _ in 0..n {
            let x = s.sample(&mut rng, 8).coords[0];
            counts[((x + 8) / 2) as usize] += 1;
        }
        // chi-square against Binomial(8, 0.7) on 9 cells
        let mut chi = 0.0;
        let mut c = 1.0;
        for (j, &obs) in counts.iter().enumerate() {
            if j > 0 {
                c = c * (9 - j) as f64 / j as f64;
            }
            let e = n as f64 * c * 0.7f64.powi(j as i32) * 0.3f64.powi(8 - j as i32);
            chi += (obs as f64 - e).powi(2) / e;
        }
        assert!(chi < 26.1, "chi-square {chi}");
    }

    #[test]
    fn remainder_steps() {
        let k = Kernel::nearest_neighbour(0.0, 1.0, 0.0).unwrap();
        let s = BlockSampler::for_kernel(&k).unwrap();
        assert_eq!(s.block(), MAX_BLOCK);
        let mut rng = walk_rng(1);
        assert_eq!(s.sample(&mut rng, 1000).coords[0], 1000);
    }
}
