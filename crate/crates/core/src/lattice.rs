use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 4;

/// A point of Z^d. Coordinates beyond the experiment dimension are zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct LatticePoint {
    pub coords: [i32; MAX_DIM],
}

impl LatticePoint {
    pub const fn zero() -> Self {
        LatticePoint { coords: [0; MAX_DIM] }
    }

    pub fn from_slice(c: &[i32]) -> Self {
        assert!(c.len() <= MAX_DIM, "dimension {} exceeds {MAX_DIM}", c.len());
        let mut coords = [0; MAX_DIM];
        coords[..c.len()].copy_from_slice(c);
        LatticePoint { coords }
    }

    pub fn axis(i: usize, k: i32) -> Self {
        let mut p = Self::zero();
        p.coords[i] = k;
        p
    }

    /// Max-norm.
    pub fn norm(&self) -> i64 {
        self.coords.iter().map(|c| (*c as i64).abs()).max().unwrap_or(0)
    }

    pub fn as_f64(&self, dim: usize) -> Vec<f64> {
        self.coords[..dim].iter().map(|&c| c as f64).collect()
    }
}

impl Add for LatticePoint {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut coords = self.coords;
        for (c, d) in coords.iter_mut().zip(o.coords) {
            *c += d;
        }
        LatticePoint { coords }
    }
}

impl Sub for LatticePoint {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for LatticePoint {
    type Output = Self;
    fn neg(self) -> Self {
        LatticePoint { coords: self.coords.map(|c| -c) }
    }
}

impl fmt::Debug for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords)
    }
}

/// Offsets of the box {q : ‖q‖ ≤ radius} in Z^dim, last coordinate fastest.
pub fn box_offsets(dim: usize, radius: i32) -> Vec<LatticePoint> {
    let side = (2 * radius + 1) as usize;
    let count = side.pow(dim as u32);
    (0..count)
        .map(|mut idx| {
            let mut p = LatticePoint::zero();
            for axis in (0..dim).rev() {
                p.coords[axis] = (idx % side) as i32 - radius;
                idx /= side;
            }
            p
        })
        .collect()
}
