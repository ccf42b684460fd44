//! Exact interval and dyadic-cube arithmetic on the periodic unit circle.
//!
//! Every endpoint is an exact rational. The standard grid (id 0) has cubes
//! `[m 2^-k, (m+1) 2^-k)`, the second grid (id 1) is the same lattice shifted
//! by `1/3`, so its endpoints have denominators dividing `3 * 2^k`.

use std::cmp::Ordering;
use std::fmt;

use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Exact rational used for all cube coordinates.
pub type Rational = Ratio<i64>;

/// Default deepest level a cube may be refined to.
pub const DEFAULT_MAX_DEPTH: u32 = 24;

/// Hard ceiling on cube levels so that `3 * 2^level` never overflows `i64`.
const LEVEL_CEILING: u32 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DyadicError {
    #[error("cube at level {level} cannot be refined past maximum depth {max_depth}")]
    DepthExceeded { level: u32, max_depth: u32 },
    #[error("the level-0 cube has no parent")]
    RootHasNoParent,
    #[error("interval of length {length} exceeds the shifted-cover limit 1/6")]
    IntervalTooLong { length: String },
    #[error("invalid interval length {0}: must lie in (0, 1]")]
    InvalidLength(String),
    #[error("invalid cube (grid {grid}, level {level}, index {index})")]
    InvalidCube { grid: u8, level: u32, index: u64 },
    #[error("sparseness parameter {0} must lie in (0, 1]")]
    InvalidEta(String),
    #[error("duplicate cube {0} in family")]
    DuplicateCube(String),
    #[error("cannot parse rational {0:?}")]
    BadRational(String),
}

fn frac_part(x: Rational) -> Rational {
    x - x.floor()
}

/// Formats a rational as `p/q`, always with an explicit denominator.
pub fn fmt_rational(x: &Rational) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

pub fn parse_rational(s: &str) -> Result<Rational, DyadicError> {
    let bad = || DyadicError::BadRational(s.to_string());
    let s = s.trim();
    match s.split_once('/') {
        Some((p, q)) => {
            let p: i64 = p.trim().parse().map_err(|_| bad())?;
            let q: i64 = q.trim().parse().map_err(|_| bad())?;
            if q == 0 {
                return Err(bad());
            }
            Ok(Rational::new(p, q))
        }
        None => s.parse::<i64>().map(Rational::from_integer).map_err(|_| bad()),
    }
}

/// A half-open arc `[left, left + length)` of the unit circle (or the line,
/// when `periodic` is false).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interval {
    left: Rational,
    length: Rational,
    periodic: bool,
}

impl Interval {
    /// Periodic interval; `left` is reduced modulo 1.
    pub fn new(left: Rational, length: Rational) -> Result<Self, DyadicError> {
        if length <= Rational::zero() || length > Rational::one() {
            return Err(DyadicError::InvalidLength(fmt_rational(&length)));
        }
        let left = if length == Rational::one() {
            Rational::zero()
        } else {
            frac_part(left)
        };
        Ok(Self {
            left,
            length,
            periodic: true,
        })
    }

    /// Non-periodic interval on the real line. Only used for kernel probing.
    pub fn on_line(left: Rational, length: Rational) -> Result<Self, DyadicError> {
        if length <= Rational::zero() {
            return Err(DyadicError::InvalidLength(fmt_rational(&length)));
        }
        Ok(Self {
            left,
            length,
            periodic: false,
        })
    }

    pub fn full_circle() -> Self {
        Self {
            left: Rational::zero(),
            length: Rational::one(),
            periodic: true,
        }
    }

    /// The arc covering samples `start .. start + count` of an `n`-point grid.
    pub fn from_samples(start: usize, count: usize, n: usize) -> Result<Self, DyadicError> {
        Self::new(
            Rational::new(start as i64, n as i64),
            Rational::new(count as i64, n as i64),
        )
    }

    pub fn left(&self) -> Rational {
        self.left
    }

    pub fn length(&self) -> Rational {
        self.length
    }

    /// Right endpoint, not reduced (may exceed 1 for wrapping arcs).
    pub fn right(&self) -> Rational {
        self.left + self.length
    }

    pub fn periodic(&self) -> bool {
        self.periodic
    }

    pub fn is_full(&self) -> bool {
        self.periodic && self.length == Rational::one()
    }

    pub fn center(&self) -> Rational {
        let c = self.left + self.length / 2;
        if self.periodic {
            frac_part(c)
        } else {
            c
        }
    }

    pub fn length_f64(&self) -> f64 {
        ratio_to_f64(&self.length)
    }

    pub fn contains_point(&self, x: Rational) -> bool {
        if self.is_full() {
            return true;
        }
        let offset = if self.periodic {
            frac_part(x - self.left)
        } else {
            x - self.left
        };
        offset >= Rational::zero() && offset < self.length
    }

    /// Set containment `other ⊆ self`.
    pub fn contains(&self, other: &Interval) -> bool {
        if other.length > self.length {
            return false;
        }
        if self.is_full() {
            return true;
        }
        let offset = if self.periodic {
            frac_part(other.left - self.left)
        } else {
            other.left - self.left
        };
        offset >= Rational::zero() && offset + other.length <= self.length
    }

    /// Exact measure of `self ∩ other`.
    pub fn intersection_measure(&self, other: &Interval) -> Rational {
        fn overlap(a0: Rational, a1: Rational, b0: Rational, b1: Rational) -> Rational {
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                hi - lo
            } else {
                Rational::zero()
            }
        }
        if !self.periodic {
            return overlap(self.left, self.right(), other.left, other.right());
        }
        // Coordinates relative to self.left: self = [0, len), other = [d, d + len').
        let d = frac_part(other.left - self.left);
        let end = d + other.length;
        let one = Rational::one();
        overlap(Rational::zero(), self.length, d, end.min(one))
            + overlap(Rational::zero(), self.length, Rational::zero(), (end - one).max(Rational::zero()))
    }

    /// Center-preserving rescaling; saturates to the full circle.
    pub fn scaled(&self, factor: Rational) -> Dilation {
        let length = self.length * factor;
        if self.periodic && length >= Rational::one() {
            return Dilation {
                interval: Interval::full_circle(),
                saturated: true,
            };
        }
        let left = self.left - (length - self.length) / 2;
        let interval = if self.periodic {
            Interval {
                left: frac_part(left),
                length,
                periodic: true,
            }
        } else {
            Interval {
                left,
                length,
                periodic: false,
            }
        };
        Dilation {
            interval,
            saturated: false,
        }
    }

    /// Samples of an `n`-point grid lying in the arc.
    pub fn samples(&self, n: usize) -> SampleRange {
        let nn = n as i64;
        if self.is_full() {
            return SampleRange { start: 0, count: n, n };
        }
        let first = (self.left * nn).ceil().to_integer();
        let end = (self.right() * nn).ceil().to_integer();
        let count = (end - first).max(0) as usize;
        SampleRange {
            start: first.rem_euclid(nn) as usize,
            count: count.min(n),
            n,
        }
    }

    pub fn contains_sample(&self, i: usize, n: usize) -> bool {
        self.contains_point(Rational::new(i as i64, n as i64))
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {} + {})",
            fmt_rational(&self.left),
            fmt_rational(&self.left),
            fmt_rational(&self.length)
        )
    }
}

#[derive(Serialize, Deserialize)]
struct IntervalRepr {
    left: String,
    length: String,
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        IntervalRepr {
            left: fmt_rational(&self.left),
            length: fmt_rational(&self.length),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = IntervalRepr::deserialize(d)?;
        let left = parse_rational(&repr.left).map_err(serde::de::Error::custom)?;
        let length = parse_rational(&repr.length).map_err(serde::de::Error::custom)?;
        Interval::new(left, length).map_err(serde::de::Error::custom)
    }
}

pub fn ratio_to_f64(x: &Rational) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

/// Contiguous (cyclic) run of sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRange {
    pub start: usize,
    pub count: usize,
    pub n: usize,
}

impl SampleRange {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let (start, n) = (self.start, self.n);
        (0..self.count).map(move |i| (start + i) % n)
    }

    /// Position of sample `i` inside the run, if present.
    pub fn position(&self, i: usize) -> Option<usize> {
        let off = (i + self.n - self.start) % self.n;
        (off < self.count).then_some(off)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.position(i).is_some()
    }
}

/// Result of dilating an interval; `saturated` marks the full-circle case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dilation {
    pub interval: Interval,
    pub saturated: bool,
}

/// `alpha * q`: same center, `alpha` times the length.
pub fn dilate(q: &Interval, alpha: u32) -> Dilation {
    assert!(alpha >= 1, "dilation factor must be positive");
    q.scaled(Rational::from_integer(alpha as i64))
}

/// A cube of one of the two dyadic grids on the circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DyadicCube {
    pub grid: u8,
    pub level: u32,
    pub index: u64,
}

impl PartialOrd for DyadicCube {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cubes order by `(level, index, grid)`.
impl Ord for DyadicCube {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.level, self.index, self.grid).cmp(&(other.level, other.index, other.grid))
    }
}

fn grid_shift(grid: u8) -> Rational {
    if grid == 0 {
        Rational::zero()
    } else {
        Rational::new(1, 3)
    }
}

impl DyadicCube {
    pub fn new(grid: u8, level: u32, index: u64) -> Result<Self, DyadicError> {
        if grid > 1 || level > LEVEL_CEILING || index >= 1u64 << level {
            return Err(DyadicError::InvalidCube { grid, level, index });
        }
        Ok(Self { grid, level, index })
    }

    pub fn root(grid: u8) -> Self {
        Self {
            grid,
            level: 0,
            index: 0,
        }
    }

    pub fn side(&self) -> Rational {
        Rational::new(1, 1i64 << self.level)
    }

    pub fn interval(&self) -> Interval {
        let side = self.side();
        let left = Rational::from_integer(self.index as i64) * side + grid_shift(self.grid);
        Interval::new(left, side).expect("cube side lies in (0, 1]")
    }

    pub fn children(&self, max_depth: u32) -> Result<[DyadicCube; 2], DyadicError> {
        if self.level >= max_depth.min(LEVEL_CEILING) {
            return Err(DyadicError::DepthExceeded {
                level: self.level,
                max_depth,
            });
        }
        let level = self.level + 1;
        Ok([
            DyadicCube {
                grid: self.grid,
                level,
                index: 2 * self.index,
            },
            DyadicCube {
                grid: self.grid,
                level,
                index: 2 * self.index + 1,
            },
        ])
    }

    pub fn parent(&self) -> Result<DyadicCube, DyadicError> {
        if self.level == 0 {
            return Err(DyadicError::RootHasNoParent);
        }
        Ok(DyadicCube {
            grid: self.grid,
            level: self.level - 1,
            index: self.index / 2,
        })
    }

    /// All descendants `d` levels down, in index order.
    pub fn descendants(&self, d: u32, max_depth: u32) -> Result<Vec<DyadicCube>, DyadicError> {
        if self.level + d > max_depth.min(LEVEL_CEILING) {
            return Err(DyadicError::DepthExceeded {
                level: self.level + d,
                max_depth,
            });
        }
        let base = self.index << d;
        Ok((0..1u64 << d)
            .map(|j| DyadicCube {
                grid: self.grid,
                level: self.level + d,
                index: base + j,
            })
            .collect())
    }

    /// The cube of `grid` at `level` containing the point `x`.
    pub fn containing(grid: u8, level: u32, x: Rational) -> DyadicCube {
        let offset = frac_part(x - grid_shift(grid));
        let index = (offset * Rational::from_integer(1i64 << level))
            .floor()
            .to_integer() as u64;
        DyadicCube { grid, level, index }
    }

    /// The cube of `grid` at `level` containing sample `i` of an `n`-point grid.
    pub fn containing_sample(grid: u8, level: u32, i: usize, n: usize) -> DyadicCube {
        Self::containing(grid, level, Rational::new(i as i64, n as i64))
    }

    /// Whether `interval` is exactly a grid-0 dyadic cube; returns it if so.
    pub fn from_interval(interval: &Interval) -> Option<DyadicCube> {
        let len = interval.length();
        if *len.numer() != 1 || !(len.denom().count_ones() == 1) {
            return None;
        }
        let level = len.denom().trailing_zeros();
        let idx = interval.left() * Rational::from_integer(1i64 << level);
        idx.is_integer().then(|| DyadicCube {
            grid: 0,
            level,
            index: idx.to_integer() as u64,
        })
    }
}

impl fmt::Display for DyadicCube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.grid, self.level, self.index)
    }
}

impl Serialize for DyadicCube {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.grid, self.level, self.index).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DyadicCube {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (grid, level, index) = <(u8, u32, u64)>::deserialize(d)?;
        DyadicCube::new(grid, level, index).map_err(serde::de::Error::custom)
    }
}

/// Smallest cube of either grid that contains `i`, for `|i| <= 1/6`.
///
/// At the level `k` with `3|i| <= 2^-k < 6|i|` the two grids have no
/// endpoints closer than `2^-k / 3`, so one of them has no cut strictly
/// inside `i`; that grid's level-`k` cube containing `i` is returned unless a
/// deeper container exists.
pub fn shifted_cover(i: &Interval) -> Result<DyadicCube, DyadicError> {
    let len = i.length();
    if len > Rational::new(1, 6) {
        return Err(DyadicError::IntervalTooLong {
            length: fmt_rational(&len),
        });
    }
    // Deepest level whose side still is at least |i|.
    let mut level = 0u32;
    while level < LEVEL_CEILING && Rational::new(1, 1i64 << (level + 1)) >= len {
        level += 1;
    }
    loop {
        for grid in 0..=1u8 {
            let cube = DyadicCube::containing(grid, level, i.left());
            if cube.interval().contains(i) {
                return Ok(cube);
            }
        }
        if level == 0 {
            unreachable!("level-0 cubes are the full circle");
        }
        level -= 1;
    }
}

/// A finite family of distinct intervals with a sparseness parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseFamily {
    #[serde(serialize_with = "ser_rational")]
    eta: Rational,
    cubes: Vec<Interval>,
    #[serde(serialize_with = "ser_certificate")]
    certificate: Option<Vec<Rational>>,
}

fn ser_rational<S: Serializer>(x: &Rational, s: S) -> Result<S::Ok, S::Error> {
    fmt_rational(x).serialize(s)
}

fn ser_certificate<S: Serializer>(c: &Option<Vec<Rational>>, s: S) -> Result<S::Ok, S::Error> {
    c.as_ref()
        .map(|v| v.iter().map(fmt_rational).collect::<Vec<_>>())
        .serialize(s)
}

/// Outcome of the Carleson packing check.
#[derive(Debug, Clone, PartialEq)]
pub enum Packing {
    /// Packing sum `Σ_{P ⊆ Q} |P|` for every cube, in family order.
    Certified(Vec<Rational>),
    /// First cube (in family order) whose packing sum exceeds `|Q| / eta`.
    Violation {
        position: usize,
        cube: Interval,
        packing: Rational,
    },
}

impl Packing {
    pub fn is_certified(&self) -> bool {
        matches!(self, Packing::Certified(_))
    }
}

impl SparseFamily {
    pub fn new(eta: Rational, cubes: Vec<Interval>) -> Result<Self, DyadicError> {
        if eta <= Rational::zero() || eta > Rational::one() {
            return Err(DyadicError::InvalidEta(fmt_rational(&eta)));
        }
        let mut seen = std::collections::HashSet::with_capacity(cubes.len());
        for c in &cubes {
            if !seen.insert(*c) {
                return Err(DyadicError::DuplicateCube(c.to_string()));
            }
        }
        Ok(Self {
            eta,
            cubes,
            certificate: None,
        })
    }

    pub fn eta(&self) -> Rational {
        self.eta
    }

    pub fn cubes(&self) -> &[Interval] {
        &self.cubes
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn certificate(&self) -> Option<&[Rational]> {
        self.certificate.as_deref()
    }

    /// Runs the packing check and stores the certificate on success.
    pub fn certify(&mut self) -> Packing {
        let outcome = sparseness_check(self);
        self.certificate = match &outcome {
            Packing::Certified(sums) => Some(sums.clone()),
            Packing::Violation { .. } => None,
        };
        outcome
    }

    pub fn without(&self, position: usize) -> SparseFamily {
        let mut cubes = self.cubes.clone();
        cubes.remove(position);
        SparseFamily {
            eta: self.eta,
            cubes,
            certificate: None,
        }
    }
}

/// Carleson packing: `Σ_{P ∈ fam, P ⊆ Q} |P| <= |Q| / eta` for every `Q`.
pub fn sparseness_check(fam: &SparseFamily) -> Packing {
    // Longest first, so only a prefix can contain a given cube.
    let mut order: Vec<usize> = (0..fam.cubes.len()).collect();
    order.sort_by(|&a, &b| fam.cubes[b].length().cmp(&fam.cubes[a].length()));
    let mut sums = vec![Rational::zero(); fam.cubes.len()];
    for (rank, &qi) in order.iter().enumerate() {
        let q = &fam.cubes[qi];
        let mut total = q.length();
        for &pi in order[rank + 1..].iter().chain(order[..rank].iter().rev()) {
            let p = &fam.cubes[pi];
            if p.length() > q.length() {
                break;
            }
            if q.contains(p) {
                total += p.length();
            }
        }
        sums[qi] = total;
    }
    let bound = Rational::one() / fam.eta;
    for (position, (cube, packing)) in fam.cubes.iter().zip(&sums).enumerate() {
        if *packing > bound * cube.length() {
            return Packing::Violation {
                position,
                cube: *cube,
                packing: *packing,
            };
        }
    }
    Packing::Certified(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(p: i64, q: i64) -> Rational {
        Rational::new(p, q)
    }

    fn iv(l: Rational, len: Rational) -> Interval {
        Interval::new(l, len).unwrap()
    }

    #[test]
    fn children_examples() {
        let c = DyadicCube::root(0);
        let kids = c.children(DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!(kids, [DyadicCube::new(0, 1, 0).unwrap(), DyadicCube::new(0, 1, 1).unwrap()]);
        let c = DyadicCube::new(0, 1, 1).unwrap();
        let kids = c.children(DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!(kids, [DyadicCube::new(0, 2, 2).unwrap(), DyadicCube::new(0, 2, 3).unwrap()]);

        let c = DyadicCube::new(1, 2, 0).unwrap();
        let [a, b] = c.children(DEFAULT_MAX_DEPTH).unwrap();
        let (pa, ia, ib) = (c.interval(), a.interval(), b.interval());
        assert_eq!(ia.left(), pa.left());
        assert_eq!(ib.left(), frac_part(ia.right()));
        assert_eq!(ia.length() + ib.length(), pa.length());
        assert_eq!(pa.left(), r(1, 3));
    }

    #[test]
    fn depth_limit_is_hard() {
        let c = DyadicCube::new(0, 5, 3).unwrap();
        assert_eq!(
            c.children(5),
            Err(DyadicError::DepthExceeded { level: 5, max_depth: 5 })
        );
    }

    #[test]
    fn parent_examples() {
        assert_eq!(
            DyadicCube::new(0, 2, 3).unwrap().parent().unwrap(),
            DyadicCube::new(0, 1, 1).unwrap()
        );
        assert_eq!(
            DyadicCube::new(1, 1, 0).unwrap().parent().unwrap(),
            DyadicCube::root(1)
        );
        assert_eq!(DyadicCube::root(0).parent(), Err(DyadicError::RootHasNoParent));
        let c = DyadicCube::new(1, 4, 9).unwrap();
        assert_eq!(c.parent().unwrap().side(), c.side() * 2);
    }

    #[test]
    fn dilate_examples() {
        // Center 3/8 is kept, length triples.
        let d = dilate(&iv(r(1, 4), r(1, 4)), 3);
        assert!(!d.saturated);
        assert_eq!(d.interval, iv(r(0, 1), r(3, 4)));
        assert_eq!(d.interval.center(), r(3, 8));
        let d = dilate(&iv(r(3, 8), r(1, 4)), 3);
        assert_eq!(d.interval, iv(r(1, 8), r(3, 4)));
        assert_eq!(d.interval.right(), r(7, 8));

        let d = dilate(&iv(r(0, 1), r(1, 8)), 3);
        assert!(!d.saturated);
        assert_eq!(d.interval.left(), r(7, 8));
        assert_eq!(d.interval.length(), r(3, 8));
        assert!(d.interval.contains_point(r(0, 1)));
        assert!(d.interval.contains_point(r(15, 16)));
        assert!(!d.interval.contains_point(r(1, 4)));

        let d = dilate(&iv(r(0, 1), r(1, 2)), 3);
        assert!(d.saturated);
        assert!(d.interval.is_full());
    }

    #[test]
    fn shifted_cover_examples() {
        let i = iv(r(1, 2) - r(1, 64), r(1, 32));
        let c = shifted_cover(&i).unwrap();
        assert_eq!(c.grid, 1);
        assert!(c.interval().contains(&i));
        assert!(c.side() <= r(3, 16));
        // Exhaustive oracle: smallest container over both grids and all levels.
        let mut best: Option<Rational> = None;
        for level in 0..=12 {
            for grid in 0..=1 {
                for index in 0..(1u64 << level) {
                    let cube = DyadicCube::new(grid, level, index).unwrap();
                    if cube.interval().contains(&i) {
                        best = Some(best.map_or(cube.side(), |b| b.min(cube.side())));
                    }
                }
            }
        }
        assert_eq!(best.unwrap(), c.side());

        let i = iv(r(0, 1), r(1, 64));
        assert_eq!(shifted_cover(&i).unwrap(), DyadicCube::new(0, 6, 0).unwrap());

        assert!(matches!(
            shifted_cover(&iv(r(0, 1), r(1, 5))),
            Err(DyadicError::IntervalTooLong { .. })
        ));
    }

    #[test]
    fn sparseness_examples() {
        let half = r(1, 2);
        let disjoint: Vec<_> = (0..8).map(|m| DyadicCube::new(0, 3, m).unwrap().interval()).collect();
        let fam = SparseFamily::new(r(1, 1), disjoint).unwrap();
        assert!(sparseness_check(&fam).is_certified());

        let fam = SparseFamily::new(
            half,
            vec![iv(r(0, 1), r(1, 1)), iv(r(0, 1), half), iv(half, half)],
        )
        .unwrap();
        match sparseness_check(&fam) {
            Packing::Certified(s) => assert_eq!(s[0], r(2, 1)),
            v => panic!("unexpected {v:?}"),
        }

        let mut all = Vec::new();
        for level in 0..=4 {
            for m in 0..(1u64 << level) {
                all.push(DyadicCube::new(0, level, m).unwrap().interval());
            }
        }
        let fam = SparseFamily::new(half, all).unwrap();
        match sparseness_check(&fam) {
            Packing::Violation { position, packing, .. } => {
                assert_eq!(position, 0);
                assert_eq!(packing, r(5, 1));
            }
            c => panic!("expected violation, got {c:?}"),
        }
    }

    #[test]
    fn duplicates_rejected() {
        let q = DyadicCube::new(0, 2, 1).unwrap().interval();
        assert!(matches!(
            SparseFamily::new(r(1, 2), vec![q, q]),
            Err(DyadicError::DuplicateCube(_))
        ));
    }

    #[test]
    fn samples_of_shifted_cubes() {
        let n = 64;
        for level in 0..=6 {
            for grid in 0..=1 {
                for index in 0..(1u64 << level) {
                    let c = DyadicCube::new(grid, level, index).unwrap();
                    let s = c.interval().samples(n);
                    assert_eq!(s.len(), n >> level);
                    for i in 0..n {
                        assert_eq!(s.contains(i), c.interval().contains_sample(i, n));
                    }
                }
            }
        }
    }

    #[test]
    fn intersection_wraps() {
        let a = iv(r(7, 8), r(1, 4));
        let b = iv(r(0, 1), r(1, 2));
        assert_eq!(a.intersection_measure(&b), r(1, 8));
        assert_eq!(b.intersection_measure(&a), r(1, 8));
        assert_eq!(a.intersection_measure(&Interval::full_circle()), r(1, 4));
    }

    #[test]
    fn serde_shapes() {
        let c = DyadicCube::new(1, 3, 5).unwrap();
        assert_eq!(serde_json::to_string(&c).unwrap(), "[1,3,5]");
        let i = iv(r(1, 4), r(1, 2));
        let s = serde_json::to_string(&i).unwrap();
        assert_eq!(s, r#"{"left":"1/4","length":"1/2"}"#);
        assert_eq!(serde_json::from_str::<Interval>(&s).unwrap(), i);
        let z = iv(r(0, 1), r(1, 1));
        assert_eq!(serde_json::to_string(&z).unwrap(), r#"{"left":"0/1","length":"1/1"}"#);
    }

    fn arb_cube(max_level: u32) -> impl Strategy<Value = DyadicCube> {
        (0u8..=1, 0..=max_level)
            .prop_flat_map(|(g, l)| (Just(g), Just(l), 0..(1u64 << l)))
            .prop_map(|(g, l, i)| DyadicCube::new(g, l, i).unwrap())
    }

    proptest! {
        #[test]
        fn descendants_partition(c in arb_cube(12), d in 0u32..6) {
            let kids = c.descendants(d, DEFAULT_MAX_DEPTH).unwrap();
            let parent = c.interval();
            let mut total = Rational::zero();
            for k in &kids {
                prop_assert!(parent.contains(&k.interval()));
                total += k.interval().length();
            }
            prop_assert_eq!(total, parent.length());
            for w in kids.windows(2) {
                prop_assert_eq!(frac_part(w[0].interval().right()), w[1].interval().left());
                prop_assert_eq!(w[0].interval().intersection_measure(&w[1].interval()), Rational::zero());
            }
        }

        #[test]
        fn same_grid_nested_or_disjoint(a in arb_cube(DEFAULT_MAX_DEPTH), b in arb_cube(DEFAULT_MAX_DEPTH)) {
            let b = DyadicCube { grid: a.grid, ..b };
            let (ia, ib) = (a.interval(), b.interval());
            let meet = ia.intersection_measure(&ib);
            prop_assert!(meet.is_zero() || ia.contains(&ib) || ib.contains(&ia));
        }

        #[test]
        fn parent_inverts_children(c in arb_cube(20)) {
            let [first, second] = c.children(DEFAULT_MAX_DEPTH).unwrap();
            prop_assert_eq!(first.parent().unwrap(), c);
            prop_assert_eq!(second.parent().unwrap(), c);
        }

        #[test]
        fn cover_ratio_at_most_six(start in 0usize..4096, count in 1usize..=682) {
            let i = Interval::from_samples(start, count, 4096).unwrap();
            let c = shifted_cover(&i).unwrap();
            prop_assert!(c.interval().contains(&i));
            prop_assert!(c.side() <= i.length() * 6);
        }

        #[test]
        fn packing_monotone_under_removal(level in 1u32..5, picks in proptest::collection::vec(any::<bool>(), 31), drop in 0usize..31) {
            let mut cubes = Vec::new();
            let mut k = 0;
            for l in 0..=level {
                for m in 0..(1u64 << l) {
                    if k < picks.len() && picks[k] {
                        cubes.push(DyadicCube::new(0, l, m).unwrap().interval());
                    }
                    k += 1;
                }
            }
            prop_assume!(!cubes.is_empty());
            let fam = SparseFamily::new(Rational::new(1, 2), cubes).unwrap();
            if sparseness_check(&fam).is_certified() {
                let smaller = fam.without(drop % fam.len());
                prop_assert!(sparseness_check(&smaller).is_certified());
            }
        }
    }
}
