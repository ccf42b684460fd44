//! Sampled functions on the circle and their local statistics.
//!
//! A [`Signal`] holds `N = 2^m` samples at the points `i / N`. Measures are
//! counting measures scaled by `1 / N`, so a grid-0 cube of level `k` holds
//! exactly `2^(m-k)` samples, and so does every grid-1 cube.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyadic::{DyadicCube, Interval, SampleRange};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("signal length {0} is not a positive power of two")]
    NotPowerOfTwo(usize),
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("cube {0} contains no sample")]
    EmptyCube(String),
    #[error("could not bracket the Orlicz norm within {0} doublings")]
    NonconvergentBisection(usize),
    #[error("sample {x} lies outside cube {cube}")]
    PointOutsideCube { x: usize, cube: String },
    #[error("malformed signal file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniformly sampled real signal on `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    support: Option<Vec<bool>>,
}

impl Signal {
    pub fn new(samples: Vec<f64>) -> Result<Self, SignalError> {
        let n = samples.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(SignalError::NotPowerOfTwo(n));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite { index });
        }
        Ok(Self {
            samples,
            support: None,
        })
    }

    pub fn zeros(n: usize) -> Result<Self, SignalError> {
        Self::new(vec![0.0; n])
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self, SignalError> {
        Self::new((0..n).map(|i| f(i as f64 / n as f64)).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `m` with `N = 2^m`.
    pub fn log2_len(&self) -> u32 {
        self.samples.len().trailing_zeros()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn support_mask(&self) -> Option<&[bool]> {
        self.support.as_deref()
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|v| *v == 0.0)
    }

    /// `f χ_q`: zero outside `q`, with the support mask recorded.
    pub fn restricted(&self, q: &Interval) -> Signal {
        let n = self.len();
        let range = q.samples(n);
        let mut mask = vec![false; n];
        for i in range.iter() {
            mask[i] = true;
        }
        let samples = self
            .samples
            .iter()
            .zip(&mask)
            .map(|(v, inside)| if *inside { *v } else { 0.0 })
            .collect();
        Signal {
            samples,
            support: Some(mask),
        }
    }

    pub fn scaled(&self, k: f64) -> Signal {
        Signal {
            samples: self.samples.iter().map(|v| v * k).collect(),
            support: self.support.clone(),
        }
    }

    pub fn shifted(&self, k: f64) -> Signal {
        Signal {
            samples: self.samples.iter().map(|v| v + k).collect(),
            support: self.support.clone(),
        }
    }

    pub fn abs(&self) -> Signal {
        Signal {
            samples: self.samples.iter().map(|v| v.abs()).collect(),
            support: self.support.clone(),
        }
    }

    /// Samples of `f` in `q`, in cyclic order starting at the left endpoint.
    pub fn values_in(&self, q: &Interval) -> Result<Vec<f64>, SignalError> {
        let range = q.samples(self.len());
        if range.is_empty() {
            return Err(SignalError::EmptyCube(q.to_string()));
        }
        Ok(range.iter().map(|i| self.samples[i]).collect())
    }

    pub fn read_csv(reader: impl BufRead) -> Result<Self, SignalError> {
        let mut lines = reader.lines();
        let header = lines.next().transpose()?;
        if header.as_deref().map(str::trim) != Some("value") {
            return Err(SignalError::Parse("missing header \"value\"".into()));
        }
        let mut samples = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v = line
                .parse::<f64>()
                .map_err(|_| SignalError::Parse(format!("line {}: {line:?}", lineno + 2)))?;
            samples.push(v);
        }
        Self::new(samples)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<(), SignalError> {
        writeln!(w, "value")?;
        for v in &self.samples {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, SignalError> {
        let samples: Vec<f64> =
            serde_json::from_str(s).map_err(|e| SignalError::Parse(e.to_string()))?;
        Self::new(samples)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.samples).expect("finite samples serialize")
    }
}

/// Convex, increasing `Φ` with `Φ(0) = 0`, used for Luxemburg averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum YoungFunction {
    /// `Φ(t) = t^p`, `p >= 1`.
    Power { p: f64 },
    /// `Φ(t) = t log(e + t)`.
    LogBump,
}

impl YoungFunction {
    pub fn name(&self) -> &'static str {
        match self {
            YoungFunction::Power { .. } => "power",
            YoungFunction::LogBump => "log_bump",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            YoungFunction::Power { p } => vec![*p],
            YoungFunction::LogBump => vec![],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            YoungFunction::Power { p } => t.powf(*p),
            YoungFunction::LogBump => t * (std::f64::consts::E + t).ln(),
        }
    }

    /// Checks `Φ(0) = 0`, monotonicity and midpoint convexity on checkpoints.
    pub fn validate(&self, checkpoints: &[f64]) -> bool {
        if self.eval(0.0) != 0.0 {
            return false;
        }
        let mut ts: Vec<f64> = checkpoints.iter().copied().filter(|t| *t >= 0.0).collect();
        ts.sort_by(f64::total_cmp);
        ts.windows(2).all(|w| {
            let (a, b) = (w[0], w[1]);
            let mid = self.eval(0.5 * (a + b));
            self.eval(a) <= self.eval(b) && mid <= 0.5 * (self.eval(a) + self.eval(b)) * (1.0 + 1e-12)
        })
    }

    /// `Φ^{-1}(1)`.
    pub fn inverse_at_one(&self) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while self.eval(hi) < 1.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Largest observed `Φ(t) / t^{p'}` over the grid points `t >= 1`.
    pub fn gamma_hat(&self, p: f64, t_grid: &[f64]) -> f64 {
        let p_conj = conjugate_exponent(p);
        t_grid
            .iter()
            .filter(|t| **t >= 1.0)
            .map(|&t| self.eval(t) / t.powf(p_conj))
            .fold(0.0, f64::max)
    }
}

/// `p' = p / (p - 1)`, with `1' = ∞`.
pub fn conjugate_exponent(p: f64) -> f64 {
    if p <= 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

/// Local statistics of `f` on a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStats {
    pub cube: Interval,
    pub median: f64,
    /// `(λ, ω_λ(f; cube))` pairs.
    pub oscillation: Vec<(f64, f64)>,
    /// `|f|` on the cube sorted non-increasingly; `f*(t)` reads entry `floor(tN)`.
    pub rearranged: Vec<f64>,
}

impl LocalStats {
    pub fn compute(f: &Signal, cube: &Interval, lambdas: &[f64]) -> Result<Self, SignalError> {
        let values = f.values_in(cube)?;
        Ok(Self {
            cube: *cube,
            median: lower_median_of(&values),
            oscillation: lambdas
                .iter()
                .map(|&l| (l, oscillation_of(&values, l)))
                .collect(),
            rearranged: sorted_abs_desc(&values),
        })
    }
}

// ---------------------------------------------------------------------------
// Slice-level kernels. Public so experiments can reuse them on raw samples.

pub fn lp_mean(values: &[f64], p: f64) -> f64 {
    let n = values.len() as f64;
    if p == 1.0 {
        return values.iter().map(|v| v.abs()).sum::<f64>() / n;
    }
    let s: f64 = values.iter().map(|v| v.abs().powf(p)).sum();
    (s / n).powf(1.0 / p)
}

const BRACKET_LIMIT: usize = 200;
const ORLICZ_RTOL: f64 = 1e-9;

pub fn orlicz_of(values: &[f64], phi: &YoungFunction) -> Result<f64, SignalError> {
    if values.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let n = values.len() as f64;
    let mean_phi = |lambda: f64| values.iter().map(|v| phi.eval(v.abs() / lambda)).sum::<f64>() / n;
    let start = lp_mean(values, 1.0) + f64::MIN_POSITIVE;
    let (mut lo, mut hi);
    if mean_phi(start) > 1.0 {
        lo = start;
        hi = start;
        let mut steps = 0;
        while mean_phi(hi) > 1.0 {
            lo = hi;
            hi *= 2.0;
            steps += 1;
            if steps > BRACKET_LIMIT || !hi.is_finite() {
                return Err(SignalError::NonconvergentBisection(BRACKET_LIMIT));
            }
        }
    } else {
        lo = start;
        hi = start;
        let mut steps = 0;
        while mean_phi(lo) <= 1.0 {
            hi = lo;
            lo *= 0.5;
            steps += 1;
            if steps > BRACKET_LIMIT || lo == 0.0 {
                return Err(SignalError::NonconvergentBisection(BRACKET_LIMIT));
            }
        }
    }
    // Invariant: mean_phi(lo) > 1 >= mean_phi(hi).
    while hi - lo > ORLICZ_RTOL * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mean_phi(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

pub fn sorted_abs_desc(values: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    a
}

/// `floor(t * N)` for a measure `t` on an `N`-point grid, snapping values
/// within rounding noise of an integer.
pub fn measure_to_count(t: f64, n: usize) -> usize {
    let x = t * n as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) { r } else { x.floor() };
    k.max(0.0) as usize
}

/// Entry `k` of the non-increasing rearrangement, `0` past the end.
pub fn rearranged_at(sorted_desc: &[f64], k: usize) -> f64 {
    sorted_desc.get(k).copied().unwrap_or(0.0)
}

/// `(f χ_Q)^*(λ|Q|)` on the values of `f` in `Q`.
pub fn rearrangement_at_fraction(values: &[f64], lambda: f64) -> f64 {
    let k = measure_to_count(lambda, values.len());
    rearranged_at(&sorted_abs_desc(values), k)
}

fn sorted_asc(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Smallest and largest sample values that are admissible medians.
pub fn median_bounds(values: &[f64]) -> (f64, f64) {
    let v = sorted_asc(values);
    let n = v.len();
    let admissible = |m: f64| {
        let below = v.partition_point(|x| *x < m);
        let above = n - v.partition_point(|x| *x <= m);
        2 * below <= n && 2 * above <= n
    };
    let lo = v.iter().copied().find(|m| admissible(*m)).expect("a sample median exists");
    let hi = v.iter().rev().copied().find(|m| admissible(*m)).expect("a sample median exists");
    (lo, hi)
}

pub fn lower_median_of(values: &[f64]) -> f64 {
    median_bounds(values).0
}

/// `ω_λ = inf_c ((f - c) χ_Q)^*(λ|Q|)`.
///
/// The value at `c` is at most `r` exactly when `[c - r, c + r]` holds at
/// least `n - floor(λn)` samples, so the infimum is half the narrowest window
/// of that many consecutive sorted values.
pub fn oscillation_of(values: &[f64], lambda: f64) -> f64 {
    let v = sorted_asc(values);
    let n = v.len();
    let k = measure_to_count(lambda, n).min(n - 1);
    let w = n - k;
    (0..=n - w)
        .map(|j| 0.5 * (v[j + w - 1] - v[j]))
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// Cube-level operations.

pub fn lp_average(f: &Signal, q: &Interval, p: f64) -> Result<f64, SignalError> {
    Ok(lp_mean(&f.values_in(q)?, p))
}

pub fn orlicz_norm(f: &Signal, q: &Interval, phi: &YoungFunction) -> Result<f64, SignalError> {
    orlicz_of(&f.values_in(q)?, phi)
}

/// `(f χ_q)^*(t)` for `t` in `(0, |q|]`.
pub fn rearrangement(f: &Signal, q: &Interval, t: f64) -> Result<f64, SignalError> {
    let values = f.values_in(q)?;
    let k = measure_to_count(t, f.len());
    Ok(rearranged_at(&sorted_abs_desc(&values), k))
}

/// Lower median of `f` on `q`.
pub fn median(f: &Signal, q: &Interval) -> Result<f64, SignalError> {
    Ok(lower_median_of(&f.values_in(q)?))
}

pub fn oscillation(f: &Signal, q: &Interval, lambda: f64) -> Result<f64, SignalError> {
    Ok(oscillation_of(&f.values_in(q)?, lambda))
}

/// `sup { ω_λ(f; Q) : Q grid-0 dyadic, x ∈ Q ⊆ q0 }`.
pub fn local_sharp_maximal(
    f: &Signal,
    q0: &Interval,
    lambda: f64,
    x: usize,
) -> Result<f64, SignalError> {
    let n = f.len();
    if !q0.contains_sample(x, n) {
        return Err(SignalError::PointOutsideCube {
            x,
            cube: q0.to_string(),
        });
    }
    let mut best = 0.0f64;
    for level in 0..=f.log2_len() {
        let cube = DyadicCube::containing_sample(0, level, x, n).interval();
        if q0.contains(&cube) {
            best = best.max(oscillation(f, &cube, lambda)?);
        }
    }
    Ok(best)
}

/// Offset (in samples) of the grid-1 lattice on an `n`-point grid.
pub fn grid_offset(grid: u8, n: usize) -> usize {
    if grid == 0 {
        0
    } else {
        n.div_ceil(3) % n
    }
}

/// Sample run of a cube, via integer arithmetic.
pub fn cube_samples(cube: &DyadicCube, n: usize) -> SampleRange {
    let m = n.trailing_zeros();
    if cube.level > m {
        return cube.interval().samples(n);
    }
    let count = n >> cube.level;
    SampleRange {
        start: (cube.index as usize * count + grid_offset(cube.grid, n)) % n,
        count,
        n,
    }
}

/// Index of the cube of `grid` at `level` holding sample `x`.
pub fn cube_index_of(grid: u8, level: u32, x: usize, n: usize) -> u64 {
    let m = n.trailing_zeros();
    (((x + n - grid_offset(grid, n)) % n) >> (m - level)) as u64
}

/// The maximal-operator cube collection through sample `x`: both grids,
/// every level down to single samples.
pub fn cube_chain(x: usize, n: usize) -> impl Iterator<Item = DyadicCube> {
    let m = n.trailing_zeros();
    (0..=1u8).flat_map(move |grid| {
        (0..=m).map(move |level| DyadicCube {
            grid,
            level,
            index: cube_index_of(grid, level, x, n),
        })
    })
}

/// One value per cube of both grids at every level `0..=m`.
#[derive(Debug, Clone)]
pub struct CubeTable {
    n: usize,
    values: [Vec<Vec<f64>>; 2],
}

impl CubeTable {
    pub fn build<E>(
        n: usize,
        mut per_cube: impl FnMut(&DyadicCube, SampleRange) -> Result<f64, E>,
    ) -> Result<Self, E> {
        let m = n.trailing_zeros();
        let mut values: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
        for grid in 0..=1u8 {
            for level in 0..=m {
                let row = (0..1u64 << level)
                    .map(|index| {
                        let cube = DyadicCube { grid, level, index };
                        per_cube(&cube, cube_samples(&cube, n))
                    })
                    .collect::<Result<Vec<_>, E>>()?;
                values[grid as usize].push(row);
            }
        }
        Ok(Self { n, values })
    }

    pub fn get(&self, cube: &DyadicCube) -> f64 {
        self.values[cube.grid as usize][cube.level as usize][cube.index as usize]
    }

    /// Maximum over the chain of cubes through `x`.
    pub fn chain_max(&self, x: usize) -> f64 {
        cube_chain(x, self.n).map(|c| self.get(&c)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn chain_max_all(&self) -> Vec<f64> {
        (0..self.n).map(|x| self.chain_max(x)).collect()
    }
}

fn gather(f: &Signal, range: SampleRange, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(range.iter().map(|i| f.samples()[i]));
}

pub fn lp_table(f: &Signal, r: f64) -> CubeTable {
    let mut buf = Vec::new();
    CubeTable::build::<std::convert::Infallible>(f.len(), |_, range| {
        gather(f, range, &mut buf);
        Ok(lp_mean(&buf, r))
    })
    .expect("infallible")
}

/// `M_r f(x)`: sup of `<f>_{Q,r}` over cubes of both grids containing `x`.
pub fn maximal_r(f: &Signal, r: f64, x: usize) -> f64 {
    let n = f.len();
    let mut buf = Vec::new();
    cube_chain(x, n)
        .map(|c| {
            gather(f, cube_samples(&c, n), &mut buf);
            lp_mean(&buf, r)
        })
        .fold(0.0, f64::max)
}

/// `M_r f` at every sample.
pub fn maximal_r_all(f: &Signal, r: f64) -> Vec<f64> {
    lp_table(f, r).chain_max_all()
}

pub fn orlicz_table(f: &Signal, phi: &YoungFunction) -> Result<CubeTable, SignalError> {
    let mut buf = Vec::new();
    CubeTable::build(f.len(), |_, range| {
        gather(f, range, &mut buf);
        orlicz_of(&buf, phi)
    })
}

/// `M_Φ f(x)` over the same cube collection as [`maximal_r`].
pub fn maximal_orlicz(f: &Signal, phi: &YoungFunction, x: usize) -> Result<f64, SignalError> {
    let n = f.len();
    let mut buf = Vec::new();
    let mut best = 0.0f64;
    for c in cube_chain(x, n) {
        gather(f, cube_samples(&c, n), &mut buf);
        best = best.max(orlicz_of(&buf, phi)?);
    }
    Ok(best)
}

pub fn maximal_orlicz_all(f: &Signal, phi: &YoungFunction) -> Result<Vec<f64>, SignalError> {
    Ok(orlicz_table(f, phi)?.chain_max_all())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::Rational;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(n: usize, seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::new((0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    fn indicator(n: usize, a: f64, b: f64) -> Signal {
        Signal::from_fn(n, |x| if x >= a && x < b { 1.0 } else { 0.0 }).unwrap()
    }

    fn full() -> Interval {
        Interval::full_circle()
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(matches!(Signal::new(vec![0.0; 12]), Err(SignalError::NotPowerOfTwo(12))));
        assert!(matches!(Signal::new(vec![]), Err(SignalError::NotPowerOfTwo(0))));
        assert!(Signal::new(vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn lp_average_examples() {
        let one = Signal::new(vec![1.0; 64]).unwrap();
        let q = DyadicCube::new(1, 3, 5).unwrap().interval();
        for p in [1.0, 1.5, 2.0, 7.0] {
            assert_eq!(lp_average(&one, &q, p).unwrap(), 1.0);
        }
        let half = indicator(64, 0.0, 0.5);
        assert!((lp_average(&half, &full(), 2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);

        let f = random_signal(256, 3);
        let q = DyadicCube::new(0, 2, 1).unwrap().interval();
        let mut oracle = 0.0;
        let mut count = 0;
        for i in 0..256 {
            if i >= 64 && i < 128 {
                oracle += f.samples()[i].abs();
                count += 1;
            }
        }
        oracle /= count as f64;
        assert!((lp_average(&f, &q, 1.0).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn empty_cube_is_an_error() {
        let f = Signal::new(vec![1.0; 4]).unwrap();
        let tiny = Interval::new(Rational::new(1, 16), Rational::new(1, 16)).unwrap();
        assert!(matches!(lp_average(&f, &tiny, 1.0), Err(SignalError::EmptyCube(_))));
    }

    #[test]
    fn orlicz_examples() {
        let f = random_signal(512, 9);
        let q = DyadicCube::new(0, 1, 0).unwrap().interval();
        for p in [1.0, 2.0, 3.5] {
            let a = orlicz_norm(&f, &q, &YoungFunction::Power { p }).unwrap();
            let b = lp_average(&f, &q, p).unwrap();
            assert!((a - b).abs() <= 1e-8 * b, "p={p}: {a} vs {b}");
        }
        let c = Signal::new(vec![2.5; 128]).unwrap();
        let lin = orlicz_norm(&c, &full(), &YoungFunction::Power { p: 1.0 }).unwrap();
        assert!((lin - 2.5).abs() <= 1e-9 * 2.5);
        let bump = YoungFunction::LogBump;
        let v = orlicz_norm(&c, &full(), &bump).unwrap();
        let expected = 2.5 / bump.inverse_at_one();
        assert!((v - expected).abs() <= 1e-8 * expected);
        assert_eq!(orlicz_norm(&Signal::zeros(64).unwrap(), &full(), &bump).unwrap(), 0.0);
    }

    #[test]
    fn rearrangement_examples() {
        let f = indicator(256, 0.0, 0.25);
        assert_eq!(rearrangement(&f, &full(), 0.1).unwrap(), 1.0);
        assert_eq!(rearrangement(&f, &full(), 0.2499).unwrap(), 1.0);
        assert_eq!(rearrangement(&f, &full(), 0.25).unwrap(), 0.0);
        assert_eq!(rearrangement(&f, &full(), 0.9).unwrap(), 0.0);
        let c = Signal::new(vec![-3.0; 64]).unwrap();
        for t in [0.01, 0.5, 1.0 - 1.0 / 64.0] {
            assert_eq!(rearrangement(&c, &full(), t).unwrap(), 3.0);
        }
    }

    #[test]
    fn rearrangement_matches_definition() {
        // inf { a >= 0 : #{|f| > a} <= tN } scanned over candidate levels.
        let f = random_signal(128, 4);
        let q = DyadicCube::new(1, 1, 1).unwrap().interval();
        let vals = f.values_in(&q).unwrap();
        for j in 1..=64 {
            let t = j as f64 / 128.0;
            let mut cands: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
            cands.push(0.0);
            let oracle = cands
                .iter()
                .copied()
                .filter(|a| vals.iter().filter(|v| v.abs() > *a).count() <= j)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(rearrangement(&f, &q, t).unwrap(), oracle);
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&Signal::new(vec![4.0; 32]).unwrap(), &full()).unwrap(), 4.0);
        assert_eq!(median(&indicator(64, 0.0, 0.5), &full()).unwrap(), 0.0);
        for seed in 0..20 {
            let f = random_signal(64, seed);
            let q = DyadicCube::new(0, 1, seed % 2).unwrap().interval();
            let v = f.values_in(&q).unwrap();
            let m = median(&f, &q).unwrap();
            let above = v.iter().filter(|x| **x > m).count();
            let below = v.iter().filter(|x| **x < m).count();
            assert!(2 * above <= v.len() && 2 * below <= v.len());
            // Smallest admissible sample value.
            for cand in v.iter().filter(|x| **x < m) {
                let above = v.iter().filter(|x| *x > cand).count();
                let below = v.iter().filter(|x| *x < cand).count();
                assert!(!(2 * above <= v.len() && 2 * below <= v.len()));
            }
        }
    }

    /// Brute force over every breakpoint of the piecewise-linear objective:
    /// sample values and midpoints of every pair.
    fn oscillation_oracle(values: &[f64], lambda: f64) -> f64 {
        let mut cs: Vec<f64> = values.to_vec();
        for a in values {
            for b in values {
                cs.push(0.5 * (a + b));
            }
        }
        cs.iter()
            .map(|c| {
                let shifted: Vec<f64> = values.iter().map(|v| v - c).collect();
                rearrangement_at_fraction(&shifted, lambda)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn oscillation_examples() {
        let c = Signal::new(vec![1.7; 64]).unwrap();
        assert_eq!(oscillation(&c, &full(), 0.3).unwrap(), 0.0);
        let f = indicator(256, 0.0, 0.5);
        assert_eq!(oscillation(&f, &full(), 0.125).unwrap(), 0.5);
        for seed in 0..10 {
            let f = random_signal(32, seed);
            let v = f.samples();
            for lambda in [0.125, 0.3, 0.49, 0.75] {
                let got = oscillation_of(v, lambda);
                assert_eq!(got, oscillation_oracle(v, lambda));
                let shifted = f.shifted(3.25);
                let moved = oscillation_of(shifted.samples(), lambda);
                assert!((moved - got).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_sharp_examples() {
        let c = Signal::new(vec![2.0; 64]).unwrap();
        assert_eq!(local_sharp_maximal(&c, &full(), 0.125, 7).unwrap(), 0.0);
        let f = random_signal(64, 11);
        let single = DyadicCube::new(0, 6, 9).unwrap().interval();
        assert_eq!(local_sharp_maximal(&f, &single, 0.125, 9).unwrap(), 0.0);
        assert!(matches!(
            local_sharp_maximal(&f, &single, 0.125, 10),
            Err(SignalError::PointOutsideCube { .. })
        ));
        // Enumerate every grid-0 dyadic cube, keep those containing x inside q0.
        let q0 = DyadicCube::new(0, 1, 1).unwrap().interval();
        for x in 32..64 {
            let mut oracle = 0.0f64;
            for level in 0..=6 {
                for index in 0..(1u64 << level) {
                    let q = DyadicCube::new(0, level, index).unwrap().interval();
                    if q.contains_sample(x, 64) && q0.contains(&q) {
                        oracle = oracle.max(oscillation(&f, &q, 0.125).unwrap());
                    }
                }
            }
            assert_eq!(local_sharp_maximal(&f, &q0, 0.125, x).unwrap(), oracle);
        }
    }

    fn maximal_oracle(f: &Signal, r: f64, x: usize) -> f64 {
        let n = f.len();
        let mut best = 0.0f64;
        for grid in 0..=1 {
            for level in 0..=f.log2_len() {
                for index in 0..(1u64 << level) {
                    let q = DyadicCube::new(grid, level, index).unwrap().interval();
                    if q.contains_sample(x, n) {
                        best = best.max(lp_average(f, &q, r).unwrap());
                    }
                }
            }
        }
        best
    }

    #[test]
    fn maximal_examples() {
        let one = Signal::new(vec![1.0; 128]).unwrap();
        assert_eq!(maximal_r(&one, 2.0, 17), 1.0);
        let f = random_signal(128, 5);
        let whole = lp_average(&f, &full(), 2.0).unwrap();
        let all = maximal_r_all(&f, 2.0);
        for x in 0..128 {
            assert!(all[x] >= whole);
            assert!(all[x] >= f.samples()[x].abs());
            assert_eq!(all[x], maximal_r(&f, 2.0, x));
        }
        let g = indicator(64, 0.0, 0.25);
        assert_eq!(maximal_r(&g, 1.0, 32), maximal_oracle(&g, 1.0, 32));
        for x in [0, 5, 31, 50] {
            assert_eq!(maximal_r(&f, 1.5, x), maximal_oracle(&f, 1.5, x));
        }
    }

    #[test]
    fn chain_matches_rational_cubes() {
        for n in [8usize, 64, 256] {
            for x in 0..n {
                for c in cube_chain(x, n) {
                    assert!(c.interval().contains_sample(x, n), "{c} misses {x}");
                    let fast = cube_samples(&c, n);
                    let exact = c.interval().samples(n);
                    assert_eq!(fast.len(), exact.len());
                    assert!((0..n).all(|i| fast.contains(i) == exact.contains(i)));
                }
            }
        }
    }

    #[test]
    fn orlicz_maximal_examples() {
        let f = random_signal(128, 8);
        let lin = YoungFunction::Power { p: 1.0 };
        let all = maximal_orlicz_all(&f, &lin).unwrap();
        for x in 0..128 {
            let m1 = maximal_r(&f, 1.0, x);
            assert!((all[x] - m1).abs() <= 1e-8 * m1);
        }
        assert_eq!(all[3], maximal_orlicz(&f, &lin, 3).unwrap());
        let c = Signal::new(vec![0.75; 64]).unwrap();
        let bump = YoungFunction::LogBump;
        let v = maximal_orlicz(&c, &bump, 10).unwrap();
        assert!((v - 0.75 / bump.inverse_at_one()).abs() < 1e-8);
    }

    #[test]
    fn orlicz_maximal_below_gamma_times_m2() {
        let bump = YoungFunction::LogBump;
        let grid: Vec<f64> = (0..=4000).map(|i| 1.0 + i as f64 * 0.01).collect();
        let gamma = bump.gamma_hat(2.0, &grid);
        assert!((gamma - (std::f64::consts::E + 1.0).ln()).abs() < 1e-12);
        for seed in 0..5 {
            let f = random_signal(256, 100 + seed);
            let mphi = maximal_orlicz_all(&f, &bump).unwrap();
            let m2 = maximal_r_all(&f, 2.0);
            for x in 0..256 {
                assert!(mphi[x] <= gamma * m2[x], "x={x}: {} > {}", mphi[x], gamma * m2[x]);
            }
        }
    }

    #[test]
    fn young_functions_validate() {
        let pts: Vec<f64> = (0..200).map(|i| i as f64 * 0.37).collect();
        assert!(YoungFunction::LogBump.validate(&pts));
        assert!(YoungFunction::Power { p: 1.5 }.validate(&pts));
        assert!(!YoungFunction::Power { p: 0.5 }.validate(&pts));
    }

    #[test]
    fn csv_and_json_io() {
        let f = random_signal(16, 1);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"value\n"));
        assert_eq!(Signal::read_csv(&buf[..]).unwrap(), f);
        assert_eq!(Signal::from_json(&f.to_json()).unwrap(), f);
        assert!(Signal::read_csv(&b"v\n1\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn homogeneity(seed in 0u64..1000, k in 0.0f64..10.0) {
            let f = random_signal(64, seed);
            let g = f.scaled(k);
            let q = DyadicCube::new(1, 2, seed % 4).unwrap().interval();
            let tol = |a: f64| 1e-9 * a.abs().max(1e-300) + 1e-12;
            let a = lp_average(&f, &q, 2.0).unwrap();
            prop_assert!((lp_average(&g, &q, 2.0).unwrap() - k * a).abs() <= tol(k * a));
            let o = oscillation(&f, &q, 0.2).unwrap();
            prop_assert!((oscillation(&g, &q, 0.2).unwrap() - k * o).abs() <= tol(k * o));
            let b = orlicz_norm(&f, &q, &YoungFunction::LogBump).unwrap();
            prop_assert!((orlicz_norm(&g, &q, &YoungFunction::LogBump).unwrap() - k * b).abs() <= 1e-8 * k * b + 1e-12);
        }

        #[test]
        fn orlicz_monotone_in_modulus(seed in 0u64..1000) {
            let f = random_signal(64, seed);
            let g = Signal::new(f.samples().iter().map(|v| 1.3 * v.abs() + 0.1).collect()).unwrap();
            let a = orlicz_norm(&f, &Interval::full_circle(), &YoungFunction::LogBump).unwrap();
            let b = orlicz_norm(&g, &Interval::full_circle(), &YoungFunction::LogBump).unwrap();
            prop_assert!(a <= b * (1.0 + 1e-9));
        }
    }
}
