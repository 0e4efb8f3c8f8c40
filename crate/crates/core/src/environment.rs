//! Lazy product environment on Z^d.
//!
//! Sites are created on first access with an initial value drawn from μ₀
//! by a keyed hash of `(seed, q)`, and carry the time they were last
//! brought up to date. [`Environment::advance`] only moves the clock; a
//! site catches up when it is next read. Because every site follows the
//! same deterministic map, the value read at time n is Tⁿ(θ⁰_q) no matter
//! when or in which order sites were touched.

use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticePoint, MAX_DIM};
use crate::map::{ExactPoint, PiecewiseExpandingMap};
use crate::rng::site_words;
use crate::spectral::DensitySampler;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Numerators modulo 2^62; requires an exact map.
    Exact,
    /// Double precision iteration.
    Float,
}

/// Everything needed to instantiate environments except the seed.
#[derive(Clone, Debug)]
pub struct EnvModel {
    map: Arc<PiecewiseExpandingMap>,
    sampler: Arc<DensitySampler>,
    dim: usize,
    backend: Backend,
}

impl EnvModel {
    /// Builds the μ₀ sampler from the map's Ulam density.
    pub fn new(map: PiecewiseExpandingMap, dim: usize, backend: Backend) -> Result<Self> {
        let sampler = DensitySampler::for_map(&map)?;
        Self::with_sampler(map, sampler, dim, backend)
    }

    pub fn with_sampler(
        map: PiecewiseExpandingMap,
        sampler: DensitySampler,
        dim: usize,
        backend: Backend,
    ) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Argument(format!("dimension must be in 1..={MAX_DIM}, got {dim}")));
        }
        if backend == Backend::Exact && !map.is_exact() {
            return Err(Error::Unsupported(format!(
                "map '{}' has no exact representation; use the float backend",
                map.name()
            )));
        }
        Ok(EnvModel { map: Arc::new(map), sampler: Arc::new(sampler), dim, backend })
    }

    /// Exact backend when the map allows it, float otherwise.
    pub fn preferred(map: PiecewiseExpandingMap, dim: usize) -> Result<Self> {
        let backend = if map.is_exact() { Backend::Exact } else { Backend::Float };
        Self::new(map, dim, backend)
    }

    pub fn map(&self) -> &PiecewiseExpandingMap {
        &self.map
    }

    pub fn sampler(&self) -> &DensitySampler {
        &self.sampler
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn instantiate(&self, seed: u64) -> Environment {
        Environment::new(self.clone(), seed)
    }
}

/// Stored state: raw value bits and the time they refer to.
#[derive(Clone, Copy, Debug)]
struct Site {
    bits: u64,
    stamp: u64,
}

const EMPTY: u64 = u64::MAX;

#[derive(Clone, Debug)]
enum Store {
    /// d = 1: contiguous sites `origin..origin + sites.len()`.
    Line { origin: i64, sites: Vec<Site> },
    Hash(FxHashMap<LatticePoint, Site>),
}

/// One realization θ of the environment, evolving in time.
#[derive(Clone, Debug)]
pub struct Environment {
    model: EnvModel,
    seed: u64,
    time: u64,
    store: Store,
}

impl Environment {
    pub fn new(model: EnvModel, seed: u64) -> Self {
        let store = if model.dim == 1 {
            Store::Line { origin: 0, sites: Vec::new() }
        } else {
            Store::Hash(FxHashMap::default())
        };
        Environment { model, seed, time: 0, store }
    }

    pub fn model(&self) -> &EnvModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.model.dim
    }

    /// Number of materialized sites.
    pub fn materialized(&self) -> usize {
        match &self.store {
            Store::Line { sites, .. } => sites.iter().filter(|s| s.stamp != EMPTY).count(),
            Store::Hash(h) => h.len(),
        }
    }

    #[inline]
    pub fn advance(&mut self) {
        self.time += 1;
    }

    /// Initial value θ⁰_q as raw bits (numerator or f64 bits).
    #[inline]
    fn initial_bits(model: &EnvModel, seed: u64, q: &LatticePoint) -> u64 {
        let (w1, w2) = site_words(seed, q);
        match model.backend {
            Backend::Exact => model.sampler.sample_exact(w1, w2).numerator(),
            Backend::Float => model.sampler.sample_f64(w1, w2).to_bits(),
        }
    }

    #[inline]
    fn evolve(model: &EnvModel, bits: u64, steps: u64) -> u64 {
        if steps == 0 {
            return bits;
        }
        match model.backend {
            Backend::Exact => model
                .map
                .exact_stepper()
                .expect("exact backend implies exact map")
                .advance(bits, steps),
            Backend::Float => {
                let mut x = f64::from_bits(bits);
                for _ in 0..steps {
                    x = model.map.eval(x).expect("orbit stays in [0,1)");
                }
                x.to_bits()
            }
        }
    }

    #[inline]
    fn to_value(&self, bits: u64) -> f64 {
        match self.model.backend {
            Backend::Exact => ExactPoint::from_raw(bits).to_f64(),
            Backend::Float => f64::from_bits(bits),
        }
    }

    /// Raw bits of site `q` at the current time.
    #[inline]
    fn site_bits(&mut self, q: &LatticePoint) -> u64 {
        let time = self.time;
        let model = &self.model;
        let site = match &mut self.store {
            Store::Line { origin, sites } => {
                let idx = line_slot(origin, sites, q.coords[0] as i64);
                &mut sites[idx]
            }
            Store::Hash(h) => h.entry(*q).or_insert(Site { bits: 0, stamp: EMPTY }),
        };
        if site.stamp == EMPTY {
            *site = Site { bits: Self::initial_bits(model, self.seed, q), stamp: 0 };
        }
        if site.stamp < time {
            site.bits = Self::evolve(model, site.bits, time - site.stamp);
            site.stamp = time;
        }
        site.bits
    }

    /// θ_q at the current time.
    #[inline]
    pub fn site_value(&mut self, q: &LatticePoint) -> f64 {
        let bits = self.site_bits(q);
        self.to_value(bits)
    }

    /// Exact state of θ_q; `None` on the float backend.
    pub fn site_exact(&mut self, q: &LatticePoint) -> Option<ExactPoint> {
        let bits = self.site_bits(q);
        (self.model.backend == Backend::Exact).then(|| ExactPoint::from_raw(bits))
    }

    /// Values at `center + o` for each offset, written into `out`.
    #[inline]
    pub fn window_into(&mut self, center: &LatticePoint, offsets: &[LatticePoint], out: &mut [f64]) {
        for (o, slot) in offsets.iter().zip(out.iter_mut()) {
            *slot = self.site_value(&(*center + *o));
        }
    }

    /// The (2r+1)^d window around `center`, last coordinate fastest.
    pub fn window(&mut self, center: &LatticePoint, radius: i32) -> Result<Vec<f64>> {
        if radius < 0 {
            return Err(Error::Argument(format!("window radius must be ≥ 0, got {radius}")));
        }
        let offsets = crate::lattice::box_offsets(self.dim(), radius);
        let mut out = vec![0.0; offsets.len()];
        self.window_into(center, &offsets, &mut out);
        Ok(out)
    }

    /// Materialized sites brought to the current time, sorted by coordinate.
    pub fn snapshot(&mut self) -> Snapshot {
        let keys: Vec<LatticePoint> = match &self.store {
            Store::Line { origin, sites } => sites
                .iter()
                .enumerate()
                .filter(|(_, s)| s.stamp != EMPTY)
                .map(|(i, _)| LatticePoint::axis(0, (*origin + i as i64) as i32))
                .collect(),
            Store::Hash(h) => {
                let mut k: Vec<_> = h.keys().copied().collect();
                k.sort();
                k
            }
        };
        let dim = self.dim();
        let sites = keys
            .into_iter()
            .map(|q| SnapshotSite { q: q.coords[..dim].to_vec(), value: self.site_value(&q) })
            .collect();
        Snapshot { time: self.time, seed: self.seed, sites }
    }
}

/// Index of coordinate `x` in the line store, growing it if needed.
#[inline]
fn line_slot(origin: &mut i64, sites: &mut Vec<Site>, x: i64) -> usize {
    let empty = Site { bits: 0, stamp: EMPTY };
    if sites.is_empty() {
        *origin = x - 64;
        sites.resize(129, empty);
    }
    if x < *origin {
        let grow = ((*origin - x) as usize).max(sites.len());
        let mut fresh = vec![empty; grow];
        fresh.extend_from_slice(sites);
        *sites = fresh;
        *origin -= grow as i64;
    }
    let idx = (x - *origin) as usize;
    if idx >= sites.len() {
        let new_len = (idx + 1).max(2 * sites.len());
        sites.resize(new_len, empty);
    }
    idx
}

#[derive(Clone, Debug, Serialize)]
pub struct Snapshot {
    pub time: u64,
    pub seed: u64,
    pub sites: Vec<SnapshotSite>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SnapshotSite {
    pub q: Vec<i32>,
    pub value: f64,
}
