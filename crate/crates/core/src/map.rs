//! Piecewise expanding interval maps and exact orbit arithmetic.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// log2 of the exact-arithmetic modulus.
pub const EXACT_BITS: u32 = 62;
/// Exact-arithmetic modulus M = 2^62.
pub const MODULUS: u64 = 1 << EXACT_BITS;
const MASK: u64 = MODULUS - 1;

/// A point of [0,1) stored as `numerator / 2^62`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct ExactPoint(u64);

impl ExactPoint {
    pub fn new(numerator: u64) -> Result<Self> {
        if numerator >= MODULUS {
            return Err(Error::Argument(format!("numerator {numerator} not below 2^62")));
        }
        Ok(ExactPoint(numerator))
    }

    /// Caller guarantees `numerator < 2^62`.
    #[inline]
    pub(crate) fn from_raw(numerator: u64) -> Self {
        debug_assert!(numerator < MODULUS);
        ExactPoint(numerator)
    }

    /// Truncates `x` to the grid.
    pub fn from_f64(x: f64) -> Result<Self> {
        check_unit(x)?;
        Ok(ExactPoint(((x * MODULUS as f64) as u64).min(MASK)))
    }

    #[inline]
    pub fn numerator(self) -> u64 {
        self.0
    }

    /// Nearest double not above the exact value, always inside [0,1).
    #[inline]
    pub fn to_f64(self) -> f64 {
        (self.0 >> (EXACT_BITS - 53)) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl fmt::Debug for ExactPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^62", self.0)
    }
}

#[inline]
fn check_unit(x: f64) -> Result<()> {
    if (0.0..1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(x))
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Shape of one branch, restricted to its domain.
#[derive(Clone)]
pub enum BranchShape {
    /// x ↦ slope·x − offset
    Affine { slope: f64, offset: f64 },
    /// A C² branch given with its derivative.
    Smooth { f: ScalarFn, df: ScalarFn },
}

impl fmt::Debug for BranchShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchShape::Affine { slope, offset } => {
                write!(f, "Affine {{ slope: {slope}, offset: {offset} }}")
            }
            BranchShape::Smooth { .. } => write!(f, "Smooth"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub left: f64,
    pub right: f64,
    pub shape: BranchShape,
}

impl Branch {
    pub fn affine(left: f64, right: f64, slope: f64, offset: f64) -> Self {
        Branch { left, right, shape: BranchShape::Affine { slope, offset } }
    }

    pub fn smooth(left: f64, right: f64, f: ScalarFn, df: ScalarFn) -> Self {
        Branch { left, right, shape: BranchShape::Smooth { f, df } }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match &self.shape {
            BranchShape::Affine { slope, offset } => slope * x - offset,
            BranchShape::Smooth { f, .. } => f(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.shape {
            BranchShape::Affine { slope, .. } => *slope,
            BranchShape::Smooth { df, .. } => df(x),
        }
    }

    /// Value at the right end of the domain, taken as a limit.
    pub fn right_limit(&self) -> f64 {
        self.apply(self.right)
    }

    /// Image interval `[lo, hi]` of the closed domain.
    pub fn image(&self) -> (f64, f64) {
        let a = self.apply(self.left);
        let b = self.right_limit();
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Preimage of `y` inside the domain; `y` must lie in the image.
    pub fn inverse(&self, y: f64) -> f64 {
        match &self.shape {
            BranchShape::Affine { slope, offset } => {
                ((y + offset) / slope).clamp(self.left, self.right)
            }
            BranchShape::Smooth { f, .. } => {
                let increasing = f(self.right) >= f(self.left);
                let (mut lo, mut hi) = (self.left, self.right);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if (f(mid) < y) == increasing {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// Smallest |T'| on the domain. Smooth branches are sampled on a grid.
    fn slope_minimum(&self, index: usize) -> Result<f64> {
        match &self.shape {
            BranchShape::Affine { slope, .. } => {
                if *slope == 0.0 || !slope.is_finite() {
                    return Err(Error::Structural(format!("branch {index} has slope {slope}")));
                }
                Ok(slope.abs())
            }
            BranchShape::Smooth { df, .. } => {
                let samples = SMOOTH_SAMPLES;
                let mut min = f64::INFINITY;
                let mut sign = 0.0f64;
                for k in 0..=samples {
                    let x = self.left + (self.right - self.left) * k as f64 / samples as f64;
                    let d = df(x);
                    if d == 0.0 || !d.is_finite() || (sign != 0.0 && d.signum() != sign) {
                        return Err(Error::Structural(format!(
                            "branch {index} is not strictly monotone near {x}"
                        )));
                    }
                    sign = d.signum();
                    min = min.min(d.abs());
                }
                Ok(min)
            }
        }
    }
}

const SMOOTH_SAMPLES: usize = 4096;

/// Integer data for exact evaluation of an affine branch.
#[derive(Clone, Copy, Debug)]
struct ExactBranch {
    left: u64,
    slope: i64,
    offset: i128,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionReport {
    pub lambda_min: f64,
    pub ok: bool,
    pub branch_minima: Vec<f64>,
}

/// A piecewise monotone map of [0,1) given by an ordered branch list.
#[derive(Clone, Debug)]
pub struct PiecewiseExpandingMap {
    name: String,
    branches: Vec<Branch>,
    lambda_min: f64,
    exact: Option<Vec<ExactBranch>>,
    /// Integer s when the map is x ↦ s·x mod 1.
    multiplier: Option<u64>,
}

const IMAGE_TOL: f64 = 1e-12;

impl PiecewiseExpandingMap {
    /// Validates the branch list. Maps with small slope are accepted;
    /// use [`check_expansion`](Self::check_expansion) to test the bound.
    pub fn new(name: impl Into<String>, branches: Vec<Branch>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::Structural("no branches".into()));
        }
        if branches[0].left != 0.0 {
            return Err(Error::Structural("first branch must start at 0".into()));
        }
        if branches.last().unwrap().right != 1.0 {
            return Err(Error::Structural("last branch must end at 1".into()));
        }
        for (i, w) in branches.windows(2).enumerate() {
            if w[0].right != w[1].left {
                return Err(Error::Structural(format!(
                    "gap or overlap between branches {i} and {}",
                    i + 1
                )));
            }
        }
        let mut minima = Vec::with_capacity(branches.len());
        for (i, b) in branches.iter().enumerate() {
            if !(b.left < b.right) {
                return Err(Error::Structural(format!("branch {i} has empty domain")));
            }
            minima.push(b.slope_minimum(i)?);
            let (lo, hi) = b.image();
            if lo < -IMAGE_TOL || hi > 1.0 + IMAGE_TOL {
                return Err(Error::Structural(format!(
                    "branch {i} image [{lo}, {hi}] leaves [0,1]"
                )));
            }
        }
        let lambda_min = minima.iter().cloned().fold(f64::INFINITY, f64::min);
        let exact = exact_data(&branches);
        let multiplier = exact.as_ref().and_then(|e| multiplier_of(e));
        Ok(PiecewiseExpandingMap { name: name.into(), branches, lambda_min, exact, multiplier })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// True when every branch admits exact evaluation on the 2^-62 grid.
    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    /// The integer s when the map is x ↦ s·x mod 1.
    pub fn multiplier(&self) -> Option<u64> {
        self.multiplier
    }

    pub fn check_expansion(&self) -> Result<ExpansionReport> {
        let branch_minima = self
            .branches
            .iter()
            .enumerate()
            .map(|(i, b)| b.slope_minimum(i))
            .collect::<Result<Vec<_>>>()?;
        let lambda_min = branch_minima.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(ExpansionReport { lambda_min, ok: lambda_min > 2.0, branch_minima })
    }

    #[inline]
    pub fn branch_of(&self, x: f64) -> Result<usize> {
        check_unit(x)?;
        Ok(self.branches.partition_point(|b| b.left <= x) - 1)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let b = &self.branches[self.branch_of(x)?];
        let y = b.apply(x);
        Ok(clamp_unit(y))
    }

    pub fn iterate(&self, x: f64, n: u64) -> Result<f64> {
        let mut y = x;
        check_unit(y)?;
        for _ in 0..n {
            y = self.eval(y)?;
        }
        Ok(y)
    }

    fn exact_table(&self) -> Result<&[ExactBranch]> {
        self.exact.as_deref().ok_or_else(|| {
            Error::Unsupported(format!("map '{}' has no exact representation", self.name))
        })
    }

    pub fn branch_of_exact(&self, p: ExactPoint) -> Result<usize> {
        let table = self.exact_table()?;
        Ok(table.partition_point(|b| b.left <= p.0) - 1)
    }

    /// One exact step. The value 1 is identified with 0.
    pub fn eval_exact(&self, p: ExactPoint) -> Result<ExactPoint> {
        let table = self.exact_table()?;
        Ok(step_exact(table, p))
    }

    /// n exact steps, using the closed form for multiplication maps.
    pub fn iterate_exact(&self, p: ExactPoint, n: u64) -> Result<ExactPoint> {
        match self.multiplier {
            Some(s) => Ok(fast_forward(s, p, n)),
            None => self.iterate_exact_stepwise(p, n),
        }
    }

    pub fn iterate_exact_stepwise(&self, p: ExactPoint, n: u64) -> Result<ExactPoint> {
        let table = self.exact_table()?;
        let mut q = p;
        for _ in 0..n {
            q = step_exact(table, q);
        }
        Ok(q)
    }

    pub(crate) fn exact_stepper(&self) -> Option<ExactStepper<'_>> {
        self.exact.as_deref().map(|table| ExactStepper { table, multiplier: self.multiplier })
    }

    pub fn spec(&self) -> MapSpec {
        match builtin_name(&self.name) {
            Some(name) => MapSpec::Builtin(name.to_string()),
            None => MapSpec::Explicit(ExplicitMap {
                name: Some(self.name.clone()),
                branches: self
                    .branches
                    .iter()
                    .filter_map(|b| match b.shape {
                        BranchShape::Affine { slope, offset } => {
                            Some(BranchSpec { domain: [b.left, b.right], slope, offset })
                        }
                        BranchShape::Smooth { .. } => None,
                    })
                    .collect(),
            }),
        }
    }
}

fn builtin_name(name: &str) -> Option<&'static str> {
    BUILTINS.iter().copied().find(|b| *b == name)
}

/// Borrowed exact evaluator used by the environment store.
#[derive(Clone, Copy)]
pub(crate) struct ExactStepper<'a> {
    table: &'a [ExactBranch],
    multiplier: Option<u64>,
}

impl ExactStepper<'_> {
    #[inline]
    pub(crate) fn advance(&self, numerator: u64, n: u64) -> u64 {
        let p = ExactPoint(numerator);
        match self.multiplier {
            Some(s) => fast_forward(s, p, n).0,
            None => {
                let mut q = p;
                for _ in 0..n {
                    q = step_exact(self.table, q);
                }
                q.0
            }
        }
    }
}

#[inline]
fn clamp_unit(y: f64) -> f64 {
    if y < 0.0 {
        0.0
    } else if y >= 1.0 {
        1.0 - f64::EPSILON / 2.0
    } else {
        y
    }
}

#[inline]
fn step_exact(table: &[ExactBranch], p: ExactPoint) -> ExactPoint {
    let i = table.partition_point(|b| b.left <= p.0) - 1;
    let b = table[i];
    let v = b.slope as i128 * p.0 as i128 - b.offset;
    debug_assert!((0..=MODULUS as i128).contains(&v));
    ExactPoint((v as u64) & MASK)
}

/// s^n · m mod 2^62. Wrapping arithmetic mod 2^64 is exact mod 2^62.
#[inline]
fn fast_forward(s: u64, p: ExactPoint, n: u64) -> ExactPoint {
    let mut base = s;
    let mut e = n;
    let mut acc: u64 = 1;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc.wrapping_mul(base);
        }
        base = base.wrapping_mul(base);
        e >>= 1;
    }
    ExactPoint(acc.wrapping_mul(p.0) & MASK)
}

/// Numerator of `v·2^62` when it is an integer.
fn grid_value(v: f64) -> Option<i128> {
    let scaled = v * MODULUS as f64;
    if scaled.is_finite() && scaled.fract() == 0.0 && scaled.abs() < 2f64.powi(100) {
        Some(scaled as i128)
    } else {
        None
    }
}

fn exact_data(branches: &[Branch]) -> Option<Vec<ExactBranch>> {
    let mut table: Vec<ExactBranch> = branches
        .iter()
        .map(|b| match b.shape {
            BranchShape::Affine { slope, offset } => {
                if slope.fract() != 0.0 || slope.abs() > 1e6 {
                    return None;
                }
                let left = grid_value(b.left)?;
                let offset = grid_value(offset)?;
                Some(ExactBranch { left: left as u64, slope: slope as i64, offset })
            }
            BranchShape::Smooth { .. } => None,
        })
        .collect::<Option<_>>()?;
    // Split points such as 1/3 are off the grid; move each one to the grid
    // point where the left branch stops and the right branch starts mapping
    // into [0,1].
    for k in 1..table.len() {
        let g = table[k].left as i128;
        let fits = |e: i128| {
            e > table[k - 1].left as i128
                && valid(&table[k], e)
                && valid(&table[k - 1], e - 1)
        };
        let e = (0..=SPLIT_SEARCH)
            .flat_map(|d| [g - d, g + d])
            .find(|&e| fits(e))?;
        table[k].left = e as u64;
    }
    Some(table)
}

const SPLIT_SEARCH: i128 = 1 << 12;

fn valid(b: &ExactBranch, m: i128) -> bool {
    (0..MODULUS as i128).contains(&m)
        && (0..=MODULUS as i128).contains(&(b.slope as i128 * m - b.offset))
}

fn multiplier_of(table: &[ExactBranch]) -> Option<u64> {
    let s = table.len() as i64;
    let full = s >= 2
        && table
            .iter()
            .enumerate()
            .all(|(k, b)| b.slope == s && b.offset == k as i128 * MODULUS as i128);
    full.then_some(s as u64)
}

/// Names accepted by [`builtin`].
pub const BUILTINS: &[&str] = &["tripling", "markov4", "tent"];

/// Built-in maps: `tripling` (3x mod 1), `markov4` (four slope-3 branches on
/// the quarters with offsets 0, 1/2, 3/2, 2) and `tent` (slope 2).
pub fn builtin(name: &str) -> Result<PiecewiseExpandingMap> {
    match name {
        "tripling" => tripling(),
        "markov4" => markov4(),
        "tent" => PiecewiseExpandingMap::new(
            "tent",
            vec![Branch::affine(0.0, 0.5, 2.0, 0.0), Branch::affine(0.5, 1.0, -2.0, -2.0)],
        ),
        other => Err(Error::Argument(format!(
            "unknown map '{other}'; expected one of {}",
            BUILTINS.join(", ")
        ))),
    }
}

pub fn tripling() -> Result<PiecewiseExpandingMap> {
    PiecewiseExpandingMap::new(
        "tripling",
        vec![
            Branch::affine(0.0, 1.0 / 3.0, 3.0, 0.0),
            Branch::affine(1.0 / 3.0, 2.0 / 3.0, 3.0, 1.0),
            Branch::affine(2.0 / 3.0, 1.0, 3.0, 2.0),
        ],
    )
}

pub fn markov4() -> Result<PiecewiseExpandingMap> {
    PiecewiseExpandingMap::new(
        "markov4",
        vec![
            Branch::affine(0.0, 0.25, 3.0, 0.0),
            Branch::affine(0.25, 0.5, 3.0, 0.5),
            Branch::affine(0.5, 0.75, 3.0, 1.5),
            Branch::affine(0.75, 1.0, 3.0, 2.0),
        ],
    )
}

/// Full-branch map x ↦ 3x − k + a·sin(2π(3x − k))/(2π) on [k/3, (k+1)/3).
/// Slope lies in [3 − 3a, 3 + 3a]; `a < 1/3` keeps it above 2.
pub fn perturbed_tripling(amplitude: f64) -> Result<PiecewiseExpandingMap> {
    use std::f64::consts::TAU;
    let branches = (0..3)
        .map(|k| {
            let k = k as f64;
            let a = amplitude;
            let f: ScalarFn = Arc::new(move |x| {
                let u = 3.0 * x - k;
                u + a * (TAU * u).sin() / TAU
            });
            let df: ScalarFn = Arc::new(move |x| {
                let u = 3.0 * x - k;
                3.0 * (1.0 + a * (TAU * u).cos())
            });
            Branch::smooth(k / 3.0, (k + 1.0) / 3.0, f, df)
        })
        .collect();
    PiecewiseExpandingMap::new(format!("perturbed_tripling({amplitude})"), branches)
}

/// Config form of a map: a built-in name or an explicit affine branch list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSpec {
    Builtin(String),
    Explicit(ExplicitMap),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitMap {
    #[serde(default)]
    pub name: Option<String>,
    pub branches: Vec<BranchSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub domain: [f64; 2],
    pub slope: f64,
    pub offset: f64,
}

impl MapSpec {
    pub fn build(&self) -> Result<PiecewiseExpandingMap> {
        match self {
            MapSpec::Builtin(name) => builtin(name),
            MapSpec::Explicit(e) => PiecewiseExpandingMap::new(
                e.name.clone().unwrap_or_else(|| "custom".into()),
                e.branches
                    .iter()
                    .map(|b| Branch::affine(b.domain[0], b.domain[1], b.slope, b.offset))
                    .collect(),
            ),
        }
    }
}
