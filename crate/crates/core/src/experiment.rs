//! Experiment definition, stream derivation and deterministic parallel
//! reduction over replicates.

use rayon::prelude::*;

use crate::environment::{EnvModel, Environment};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, StepScratch, WalkState};
use crate::lattice::LatticePoint;
use crate::rng::{derive, tag};

/// Replicates per work unit. Each chunk is reduced sequentially and chunk
/// results are merged in index order, so output does not depend on the
/// number of worker threads.
pub const CHUNK: usize = 1024;

#[derive(Clone, Debug)]
pub struct Experiment {
    pub env: EnvModel,
    pub kernel: Kernel,
    pub seed: u64,
    pub start: LatticePoint,
}

impl Experiment {
    pub fn new(env: EnvModel, kernel: Kernel, seed: u64) -> Result<Self> {
        if env.dim() != kernel.dim() {
            return Err(Error::Argument(format!(
                "environment dimension {} differs from kernel dimension {}",
                env.dim(),
                kernel.dim()
            )));
        }
        Ok(Experiment { env, kernel, seed, start: LatticePoint::zero() })
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Seed of the environment used by replicate `rep` of estimator `est`
    /// at grid index `slot`.
    pub fn env_seed(&self, est: u64, slot: u64, rep: u64) -> u64 {
        derive(self.seed, &[tag::ENV, est, slot, rep])
    }

    pub fn walk_seed(&self, est: u64, slot: u64, rep: u64, walker: u64) -> u64 {
        derive(self.seed, &[tag::WALK, est, slot, rep, walker])
    }

    pub fn environment(&self, seed: u64) -> Environment {
        self.env.instantiate(seed)
    }

    /// Runs one walker for `n` steps in a fresh environment, calling
    /// `visit(step, displacement, probabilities)` after every step.
    pub fn run_walk(
        &self,
        env_seed: u64,
        walk_seed: u64,
        n: u64,
        mut visit: impl FnMut(u64, &LatticePoint, &[f64]),
    ) -> Result<LatticePoint> {
        let mut env = self.environment(env_seed);
        let mut walk = WalkState::new(self.start, walk_seed);
        let mut scratch = self.kernel.scratch();
        for k in 0..n {
            let z = self.kernel.step(&mut env, &mut walk, &mut scratch)?;
            visit(k, &z, &scratch.probs);
            env.advance();
        }
        Ok(walk.position)
    }
}

/// Two walkers sharing one environment.
pub struct PairRun<'a> {
    pub kernel: &'a Kernel,
    pub env: Environment,
    pub x: WalkState,
    pub y: WalkState,
    sx: StepScratch,
    sy: StepScratch,
}

impl<'a> PairRun<'a> {
    pub fn new(kernel: &'a Kernel, env: Environment, x: WalkState, y: WalkState) -> Self {
        PairRun { sx: kernel.scratch(), sy: kernel.scratch(), kernel, env, x, y }
    }

    /// One global time step; returns both displacements.
    pub fn step(&mut self) -> Result<(LatticePoint, LatticePoint)> {
        let zx = self.kernel.step(&mut self.env, &mut self.x, &mut self.sx)?;
        let zy = self.kernel.step(&mut self.env, &mut self.y, &mut self.sy)?;
        self.env.advance();
        Ok((zx, zy))
    }

    pub fn probs_x(&self) -> &[f64] {
        &self.sx.probs
    }

    pub fn probs_y(&self) -> &[f64] {
        &self.sy.probs
    }
}

/// Folds `count` items with `fold`, one chunk of [`CHUNK`] items at a time,
/// then merges chunk results in order.
pub fn chunked_reduce<A, I, F, M>(count: usize, init: I, fold: F, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, usize) -> Result<()> + Sync,
    M: Fn(&mut A, A),
{
    let chunks = count.div_ceil(CHUNK);
    let parts: Vec<Result<A>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for i in c * CHUNK..((c + 1) * CHUNK).min(count) {
                fold(&mut acc, i)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = init();
    for p in parts {
        merge(&mut total, p?);
    }
    Ok(total)
}

/// Maps every item, preserving order.
pub fn ordered_map<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    (0..count).into_par_iter().map(&f).collect()
}
