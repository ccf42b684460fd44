//! Singular integrals on the sampled circle.
//!
//! Every operator here is a midpoint quadrature on the sample grid: the
//! truncated operator at sample `x` sums `K(x, j/N) f(j/N) / N` over the
//! samples whose circular distance to `x` exceeds `ε`. The base operator `T`
//! uses `ε = 1/(2N)`, which drops only the diagonal sample.
//!
//! Batch evaluation goes through [`ModulatedEngine`], which uses FFT
//! convolution for whole-circle sweeps and direct sums for small supports.
//! Both paths are checked against the pointwise functions in the tests.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyadic::{dilate, DyadicCube, Interval, Rational, SampleRange};
use crate::signal::{
    conjugate_exponent, cube_index_of, cube_samples, lp_mean, rearranged_at, sorted_abs_desc,
    measure_to_count, Signal, SignalError,
};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("truncation {eps} is below the resolution floor {base}")]
    EpsilonBelowResolution { eps: f64, base: f64 },
    #[error("Hörmander sum does not level off: last term {last} of partial sum {partial}")]
    DivergentSum { last: f64, partial: f64 },
    #[error("kernel {0} cannot be used for this operation")]
    UnsupportedKernel(&'static str),
    #[error("signal has {got} samples, operator expects {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("invalid probe budget: {0}")]
    InvalidProbe(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Registry of one-dimensional singular kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `cot(π(x - y))` on the circle.
    PeriodicHilbert,
    /// `(1 + a cos(2π h (x - y))) cot(π(x - y))`, `|a| < 1`.
    PerturbedHilbert {
        a: f64,
        #[serde(default = "default_harmonic")]
        harmonic: u32,
    },
    /// `1 / (x - y)` on the real line; only for Hörmander probing.
    LineHilbert,
}

fn default_harmonic() -> u32 {
    1
}

impl KernelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::PeriodicHilbert => "periodic_hilbert",
            KernelSpec::PerturbedHilbert { .. } => "perturbed_hilbert",
            KernelSpec::LineHilbert => "line_hilbert",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            KernelSpec::PerturbedHilbert { a, harmonic } => vec![*a, *harmonic as f64],
            _ => vec![],
        }
    }

    pub fn odd_symmetric(&self) -> bool {
        true
    }

    pub fn periodic(&self) -> bool {
        !matches!(self, KernelSpec::LineHilbert)
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        match self {
            KernelSpec::PerturbedHilbert { a, .. } if !(a.abs() < 1.0) => {
                Err(OperatorError::UnsupportedKernel("perturbed_hilbert with |a| >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// `K(x, y)`; finite off the diagonal.
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        self.profile(x - y)
    }

    /// The kernel as a function of `t = x - y`.
    pub fn profile(&self, t: f64) -> f64 {
        match *self {
            KernelSpec::PeriodicHilbert => 1.0 / (PI * t).tan(),
            KernelSpec::PerturbedHilbert { a, harmonic } => {
                (1.0 + a * (2.0 * PI * harmonic as f64 * t).cos()) / (PI * t).tan()
            }
            KernelSpec::LineHilbert => 1.0 / t,
        }
    }

    /// `K(d/N)` for `d = 0..N`, with the diagonal entry set to zero.
    fn sampled_row(&self, n: usize) -> Vec<f64> {
        let mut row: Vec<f64> = (0..n).map(|d| self.profile(d as f64 / n as f64)).collect();
        row[0] = 0.0;
        // Odd kernels: enforce exact antisymmetry of the sampled row.
        if self.odd_symmetric() {
            for d in 1..n / 2 {
                row[n - d] = -row[d];
            }
            if n % 2 == 0 && n > 1 {
                row[n / 2] = 0.0;
            }
        }
        row
    }
}

/// Finite set of integer frequencies `ξ` (phases `ξ y`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulationFamily {
    frequencies: Vec<i64>,
}

impl ModulationFamily {
    /// Sorted, de-duplicated frequencies.
    pub fn new(mut frequencies: Vec<i64>) -> Self {
        frequencies.sort_unstable();
        frequencies.dedup();
        Self { frequencies }
    }

    /// `{-max, ..., max}`.
    pub fn symmetric(max: u32) -> Self {
        let m = max as i64;
        Self::new((-m..=m).collect())
    }

    pub fn identity() -> Self {
        Self::new(vec![0])
    }

    pub fn frequencies(&self) -> &[i64] {
        &self.frequencies
    }

    pub fn contains_zero(&self) -> bool {
        self.frequencies.binary_search(&0).is_ok()
    }
}

impl Default for ModulationFamily {
    fn default() -> Self {
        Self::symmetric(32)
    }
}

/// Kernel, modulations and calibration data for one resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorProfile {
    pub kernel: KernelSpec,
    pub modulation: ModulationFamily,
    pub n: usize,
    /// `(p, ψ̂)` pairs: empirical lower bounds on the weak `(p, p)` norm.
    pub weak_norm_estimates: Vec<(f64, f64)>,
    /// `(λ, ξ̂(λ))` thresholds of the empirical `W_q` property.
    pub wq_threshold: Vec<(f64, f64)>,
}

impl OperatorProfile {
    pub fn new(kernel: KernelSpec, modulation: ModulationFamily, n: usize) -> Result<Self, OperatorError> {
        kernel.validate()?;
        if !kernel.periodic() {
            return Err(OperatorError::UnsupportedKernel(kernel.name()));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(SignalError::NotPowerOfTwo(n).into());
        }
        Ok(Self {
            kernel,
            modulation,
            n,
            weak_norm_estimates: Vec::new(),
            wq_threshold: Vec::new(),
        })
    }

    pub fn base_epsilon(&self) -> f64 {
        base_epsilon(self.n)
    }

    pub fn epsilon_grid(&self) -> Vec<f64> {
        epsilon_grid(self.n)
    }

    pub fn weak_norm(&self, p: f64) -> Option<f64> {
        self.weak_norm_estimates.iter().find(|(q, _)| *q == p).map(|(_, v)| *v)
    }

    fn check_len(&self, f: &Signal) -> Result<(), OperatorError> {
        if f.len() != self.n {
            return Err(OperatorError::LengthMismatch {
                got: f.len(),
                expected: self.n,
            });
        }
        Ok(())
    }
}

pub fn base_epsilon(n: usize) -> f64 {
    0.5 / n as f64
}

/// `{1/(2N)} ∪ {2^l / N : l = 0..m}`.
pub fn epsilon_grid(n: usize) -> Vec<f64> {
    let m = n.trailing_zeros();
    std::iter::once(base_epsilon(n))
        .chain((0..=m).map(|l| (1u64 << l) as f64 / n as f64))
        .collect()
}

/// Samples at circular distance `d` with `d / N > ε` are kept: `d > floor(εN)`.
fn cut_of(eps: f64, n: usize) -> usize {
    (eps * n as f64).floor() as usize
}

fn circ_dist(d: usize, n: usize) -> usize {
    d.min(n - d)
}

/// `e^{2πik/N}`, built to be exactly conjugate-symmetric.
fn twiddles(n: usize) -> Vec<Complex64> {
    let mut t = vec![Complex64::new(1.0, 0.0); n];
    for k in 1..=n / 2 {
        let (s, c) = (2.0 * PI * k as f64 / n as f64).sin_cos();
        t[k] = Complex64::new(c, s);
        t[n - k] = Complex64::new(c, -s);
    }
    if n % 2 == 0 {
        t[n / 2] = Complex64::new(-1.0, 0.0);
    }
    t
}

fn phase_index(xi: i64, j: usize, n: usize) -> usize {
    ((xi as i128 * j as i128).rem_euclid(n as i128)) as usize
}

fn require_periodic(k: &KernelSpec) -> Result<(), OperatorError> {
    if k.periodic() {
        Ok(())
    } else {
        Err(OperatorError::UnsupportedKernel(k.name()))
    }
}

/// `T_ε f(x) = (1/N) Σ_{dist(x, j/N) > ε} K(x, j/N) f(j/N)` for complex samples.
pub fn truncated_apply_complex(
    f: &[Complex64],
    k: &KernelSpec,
    eps: f64,
    x: usize,
) -> Result<Complex64, OperatorError> {
    require_periodic(k)?;
    let n = f.len();
    let base = base_epsilon(n);
    if eps < base {
        return Err(OperatorError::EpsilonBelowResolution { eps, base });
    }
    let row = k.sampled_row(n);
    let cut = cut_of(eps, n);
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, v) in f.iter().enumerate() {
        let d = (x + n - j) % n;
        if circ_dist(d, n) > cut {
            acc += *v * row[d];
        }
    }
    Ok(acc / n as f64)
}

pub fn truncated_apply(f: &Signal, k: &KernelSpec, eps: f64, x: usize) -> Result<f64, OperatorError> {
    require_periodic(k)?;
    let n = f.len();
    let base = base_epsilon(n);
    if eps < base {
        return Err(OperatorError::EpsilonBelowResolution { eps, base });
    }
    let row = k.sampled_row(n);
    let cut = cut_of(eps, n);
    let mut acc = 0.0;
    for (j, v) in f.samples().iter().enumerate() {
        let d = (x + n - j) % n;
        if circ_dist(d, n) > cut {
            acc += v * row[d];
        }
    }
    Ok(acc / n as f64)
}

/// `T_* f(x)`: max of `|T_ε f(x)|` over the epsilon grid.
pub fn maximal_truncated(f: &Signal, k: &KernelSpec, x: usize) -> Result<f64, OperatorError> {
    let mut best = 0.0f64;
    for eps in epsilon_grid(f.len()) {
        best = best.max(truncated_apply(f, k, eps, x)?.abs());
    }
    Ok(best)
}

/// `e^{2πiξy} f(y)` on the sample grid.
pub fn modulate(f: &Signal, xi: i64) -> Vec<Complex64> {
    let n = f.len();
    let tw = twiddles(n);
    f.samples()
        .iter()
        .enumerate()
        .map(|(j, v)| tw[phase_index(xi, j, n)] * *v)
        .collect()
}

/// `T^F f(x) = max_ξ |T(e_ξ f)(x)|`.
pub fn modulated_sup(f: &Signal, prof: &OperatorProfile, x: usize) -> Result<f64, OperatorError> {
    prof.check_len(f)?;
    let eps = prof.base_epsilon();
    let mut best = 0.0f64;
    for &xi in prof.modulation.frequencies() {
        let g = modulate(f, xi);
        best = best.max(truncated_apply_complex(&g, &prof.kernel, eps, x)?.norm());
    }
    Ok(best)
}

/// `T^F_* f(x)`: max over epsilon grid and frequencies.
pub fn modulated_maximal_sup(f: &Signal, prof: &OperatorProfile, x: usize) -> Result<f64, OperatorError> {
    prof.check_len(f)?;
    let mut best = 0.0f64;
    for &xi in prof.modulation.frequencies() {
        let g = modulate(f, xi);
        for eps in prof.epsilon_grid() {
            best = best.max(truncated_apply_complex(&g, &prof.kernel, eps, x)?.norm());
        }
    }
    Ok(best)
}

/// Levels of the grand-sharp cube collection: side in `[8/N, 1/(2α)]`.
pub fn sharp_levels(n: usize, alpha: u32) -> Vec<u32> {
    let m = n.trailing_zeros();
    (0..=m)
        .filter(|&k| (1usize << k) >= 2 * alpha as usize && (1usize << k) <= n / 8)
        .collect()
}

/// Batch evaluator of `max_{ξ, ε} |T_ε(e_ξ g)(x)|` for a fixed kernel,
/// frequency set and list of truncations.
pub struct ModulatedEngine {
    n: usize,
    row: Vec<f64>,
    freqs: Vec<i64>,
    /// Ascending; truncation `c` keeps samples at distance `> cuts[c]`.
    cuts: Vec<usize>,
    twiddle: Vec<Complex64>,
    spectra: Vec<Vec<Complex64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ModulatedEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModulatedEngine")
            .field("n", &self.n)
            .field("freqs", &self.freqs.len())
            .field("cuts", &self.cuts)
            .finish()
    }
}

impl ModulatedEngine {
    pub fn new(kernel: &KernelSpec, freqs: &[i64], n: usize, epsilons: &[f64]) -> Result<Self, OperatorError> {
        require_periodic(kernel)?;
        kernel.validate()?;
        let base = base_epsilon(n);
        let mut cuts = Vec::with_capacity(epsilons.len());
        for &eps in epsilons {
            if eps < base {
                return Err(OperatorError::EpsilonBelowResolution { eps, base });
            }
            cuts.push(cut_of(eps, n));
        }
        cuts.sort_unstable();
        cuts.dedup();
        let row = kernel.sampled_row(n);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let spectra = cuts
            .iter()
            .map(|&cut| {
                let mut buf: Vec<Complex64> = (0..n)
                    .map(|d| {
                        if circ_dist(d, n) > cut {
                            Complex64::new(row[d], 0.0)
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect();
                fwd.process(&mut buf);
                buf
            })
            .collect();
        Ok(Self {
            n,
            row,
            freqs: freqs.to_vec(),
            cuts,
            twiddle: twiddles(n),
            spectra,
            fwd,
            inv,
        })
    }

    /// Engine for `T^F` (base truncation only).
    pub fn base(prof: &OperatorProfile) -> Result<Self, OperatorError> {
        Self::new(&prof.kernel, prof.modulation.frequencies(), prof.n, &[prof.base_epsilon()])
    }

    /// Engine for `T^F_*` (full epsilon grid).
    pub fn maximal(prof: &OperatorProfile) -> Result<Self, OperatorError> {
        Self::new(&prof.kernel, prof.modulation.frequencies(), prof.n, &prof.epsilon_grid())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slots(&self) -> usize {
        self.freqs.len() * self.cuts.len()
    }

    fn check(&self, g: &Signal) -> Result<(), OperatorError> {
        if g.len() != self.n {
            return Err(OperatorError::LengthMismatch {
                got: g.len(),
                expected: self.n,
            });
        }
        Ok(())
    }

    /// Complex values `T_c(e_ξ g)` for every (frequency, cut) slot at all
    /// samples, via FFT convolution. Layout: `[slot][x]`.
    fn fft_all(&self, g: &[f64]) -> Vec<Vec<Complex64>> {
        let n = self.n;
        let mut spec: Vec<Complex64> = g.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        self.fwd.process(&mut spec);
        let scale = 1.0 / (n as f64 * n as f64);
        self.freqs
            .par_iter()
            .flat_map_iter(|&xi| {
                let shift = xi.rem_euclid(n as i64) as usize;
                let shifted: Vec<Complex64> = (0..n).map(|k| spec[(k + n - shift) % n]).collect();
                self.spectra.iter().map(move |kspec| {
                    let mut buf: Vec<Complex64> =
                        shifted.iter().zip(kspec).map(|(a, b)| a * b).collect();
                    self.inv.process(&mut buf);
                    buf.iter_mut().for_each(|v| *v *= scale);
                    buf
                })
                .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Complex slot values at one target from the given sources.
    /// Layout: `[freq * cuts + cut]`.
    fn direct_at(&self, g: &[f64], sources: &[usize], x: usize) -> Vec<Complex64> {
        let n = self.n;
        let nc = self.cuts.len();
        let mut buckets = vec![Complex64::new(0.0, 0.0); self.slots()];
        let inv_n = 1.0 / n as f64;
        for &j in sources {
            let d = (x + n - j) % n;
            let dist = circ_dist(d, n);
            let b = self.cuts.partition_point(|&c| c < dist);
            if b == 0 {
                continue;
            }
            let w = self.row[d] * g[j] * inv_n;
            for (fi, &xi) in self.freqs.iter().enumerate() {
                buckets[fi * nc + b - 1] += self.twiddle[phase_index(xi, j, n)] * w;
            }
        }
        // Suffix sums: cut c collects every bucket at or above c.
        for fi in 0..self.freqs.len() {
            for c in (0..nc.saturating_sub(1)).rev() {
                let above = buckets[fi * nc + c + 1];
                buckets[fi * nc + c] += above;
            }
        }
        buckets
    }

    fn direct_cost(&self, sources: usize, targets: usize) -> usize {
        sources * targets * self.freqs.len()
    }

    fn fft_cost(&self) -> usize {
        let log = self.n.trailing_zeros().max(1) as usize;
        4 * self.slots() * self.n * log
    }

    /// `max_{ξ, ε} |T_ε(e_ξ g)(x)|` at every sample.
    pub fn apply(&self, g: &Signal) -> Result<Vec<f64>, OperatorError> {
        self.check(g)?;
        let support: Vec<usize> = nonzero(g);
        if support.is_empty() {
            return Ok(vec![0.0; self.n]);
        }
        if self.direct_cost(support.len(), self.n) <= self.fft_cost() {
            return Ok((0..self.n)
                .into_par_iter()
                .map(|x| max_norm(&self.direct_at(g.samples(), &support, x)))
                .collect());
        }
        let all = self.fft_all(g.samples());
        let mut out = vec![0.0f64; self.n];
        for slot in &all {
            for (o, v) in out.iter_mut().zip(slot) {
                *o = o.max(v.norm());
            }
        }
        Ok(out)
    }

    /// Values of the operator and of the grand sharp maximal function
    /// (dilation `alpha`) at the samples of `region`, in region order.
    pub fn local_profile(&self, g: &Signal, alpha: u32, region: &Interval) -> Result<LocalProfile, OperatorError> {
        self.check(g)?;
        let n = self.n;
        let region = region.samples(n);
        let support = nonzero(g);
        let mut values = vec![0.0; region.len()];
        let mut sharp = vec![0.0; region.len()];
        if support.is_empty() {
            return Ok(LocalProfile { values, sharp });
        }

        let cubes = sharp_cubes_touching(&region, n, alpha);
        let mut needed = vec![false; n];
        for i in region.iter() {
            needed[i] = true;
        }
        for c in &cubes {
            for i in cube_samples(c, n).iter() {
                needed[i] = true;
            }
        }
        let targets: Vec<usize> = (0..n).filter(|&i| needed[i]).collect();

        // Global slot values at every target.
        let mut global: Vec<Vec<Complex64>> = vec![Vec::new(); n];
        if self.direct_cost(support.len(), targets.len()) <= self.fft_cost() {
            let vals: Vec<Vec<Complex64>> = targets
                .par_iter()
                .map(|&x| self.direct_at(g.samples(), &support, x))
                .collect();
            for (x, v) in targets.iter().zip(vals) {
                global[*x] = v;
            }
        } else {
            let all = self.fft_all(g.samples());
            for &x in &targets {
                global[x] = all.iter().map(|slot| slot[x]).collect();
            }
        }
        for (pos, x) in region.iter().enumerate() {
            values[pos] = max_norm(&global[x]);
        }

        let ranges: Vec<(DyadicCube, f64)> = cubes
            .par_iter()
            .map(|cube| (*cube, self.cube_range(g, &support, &global, cube, alpha)))
            .collect();
        for (cube, range) in ranges {
            for i in cube_samples(&cube, n).iter() {
                if let Some(pos) = region.position(i) {
                    sharp[pos] = f64::max(sharp[pos], range);
                }
            }
        }
        Ok(LocalProfile { values, sharp })
    }

    /// `max - min` over `x' ∈ P` of `max_slot |T(e_ξ g χ_{(αP)^c})(x')|`.
    fn cube_range(
        &self,
        g: &Signal,
        support: &[usize],
        global: &[Vec<Complex64>],
        cube: &DyadicCube,
        alpha: u32,
    ) -> f64 {
        let n = self.n;
        let star = dilate(&cube.interval(), alpha).interval.samples(n);
        let (inside, outside): (Vec<usize>, Vec<usize>) =
            support.iter().partition(|&&j| star.contains(j));
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in cube_samples(cube, n).iter() {
            let v = if outside.len() <= inside.len() {
                max_norm(&self.direct_at(g.samples(), &outside, x))
            } else {
                let local = self.direct_at(g.samples(), &inside, x);
                global[x]
                    .iter()
                    .zip(&local)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max)
            };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    }
}

fn nonzero(g: &Signal) -> Vec<usize> {
    g.samples()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

fn max_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Cubes of the grand-sharp collection that meet the sample run `region`.
pub fn sharp_cubes_touching(region: &SampleRange, n: usize, alpha: u32) -> Vec<DyadicCube> {
    let mut set = BTreeSet::new();
    for level in sharp_levels(n, alpha) {
        for grid in 0..=1u8 {
            for i in region.iter() {
                set.insert(DyadicCube {
                    grid,
                    level,
                    index: cube_index_of(grid, level, i, n),
                });
            }
        }
    }
    set.into_iter().collect()
}

/// Operator values and grand sharp maximal values on a region.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalProfile {
    pub values: Vec<f64>,
    pub sharp: Vec<f64>,
}

/// `M♯_{T^F, α} f(x)` over the configured cube collection.
pub fn grand_sharp(f: &Signal, prof: &OperatorProfile, alpha: u32, x: usize) -> Result<f64, OperatorError> {
    prof.check_len(f)?;
    let engine = ModulatedEngine::base(prof)?;
    let point = Interval::from_samples(x, 1, f.len()).expect("one sample is a valid arc");
    Ok(engine.local_profile(f, alpha, &point)?.sharp[0])
}

/// `M♯_{T^F, α} f` at every sample.
pub fn grand_sharp_all(f: &Signal, prof: &OperatorProfile, alpha: u32) -> Result<Vec<f64>, OperatorError> {
    prof.check_len(f)?;
    let engine = ModulatedEngine::base(prof)?;
    Ok(engine.local_profile(f, alpha, &Interval::full_circle())?.sharp)
}

pub fn modulated_sup_all(f: &Signal, prof: &OperatorProfile) -> Result<Vec<f64>, OperatorError> {
    prof.check_len(f)?;
    ModulatedEngine::base(prof)?.apply(f)
}

pub fn modulated_maximal_sup_all(f: &Signal, prof: &OperatorProfile) -> Result<Vec<f64>, OperatorError> {
    prof.check_len(f)?;
    ModulatedEngine::maximal(prof)?.apply(f)
}

// ---------------------------------------------------------------------------
// Hörmander constants.

/// Probe policy for [`kappa_estimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeBudget {
    /// Sample resolution used for cube positions and point pairs.
    pub n: usize,
    pub min_level: u32,
    pub max_level: u32,
    pub cubes_per_level: usize,
    pub pairs_per_cube: usize,
    pub k_max: u32,
    /// Midpoint nodes per annulus half on the line (periodic kernels use the sample grid).
    pub line_nodes: usize,
    pub seed: u64,
}

impl ProbeBudget {
    /// Levels `2..=m-3`, 8 cubes per level, 16 pairs per cube, `K_max = 20`.
    pub fn standard(n: usize, seed: u64) -> Self {
        let m = n.trailing_zeros();
        Self {
            n,
            min_level: 2,
            max_level: m.saturating_sub(3),
            cubes_per_level: 8,
            pairs_per_cube: 16,
            k_max: 20,
            line_nodes: 256,
            seed,
        }
    }
}

/// One probe: a cube and two points of its half.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub cube: Interval,
    pub x1: f64,
    pub x2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaEstimate {
    pub kernel: &'static str,
    pub r: f64,
    pub kappa: f64,
    pub probes: usize,
    pub k_max: u32,
    /// Largest number of annuli actually summed (periodic kernels are capped).
    pub annuli_used: u32,
}

/// Probes drawn from the budget: grid-0 cubes and sample pairs in `½Q`.
pub fn draw_probes(budget: &ProbeBudget) -> Result<Vec<Probe>, OperatorError> {
    let n = budget.n;
    if n < 16 || !n.is_power_of_two() || budget.min_level > budget.max_level {
        return Err(OperatorError::InvalidProbe(format!(
            "n = {n}, levels {}..={}",
            budget.min_level, budget.max_level
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut probes = Vec::new();
    for level in budget.min_level..=budget.max_level {
        for _ in 0..budget.cubes_per_level {
            let index = rng.gen_range(0..1u64 << level);
            let cube = DyadicCube { grid: 0, level, index }.interval();
            let half = cube.scaled(Rational::new(1, 2)).interval.samples(n);
            if half.len() < 2 {
                return Err(OperatorError::InvalidProbe(format!("level {level} too fine for n = {n}")));
            }
            let base = cube.left();
            let base = *base.numer() as f64 / *base.denom() as f64;
            for _ in 0..budget.pairs_per_cube {
                let a = rng.gen_range(0..half.len());
                let mut b = rng.gen_range(0..half.len() - 1);
                if b >= a {
                    b += 1;
                }
                // Unwrapped coordinates near the cube, so the line kernel sees them too.
                let at = |pos: usize| {
                    let i = half.iter().nth(pos).expect("position within run");
                    let x = i as f64 / n as f64;
                    if x < base { x + 1.0 } else { x }
                };
                probes.push(Probe {
                    cube,
                    x1: at(a),
                    x2: at(b),
                });
            }
        }
    }
    Ok(probes)
}

/// Per-annulus terms `|2^k Q|^{1/r'} ‖K(x1,·) - K(x2,·)‖_{L^r(2^k Q \ 2^{k-1} Q)}`.
pub fn hormander_terms(
    k: &KernelSpec,
    probe: &Probe,
    r: f64,
    k_max: u32,
    budget: &ProbeBudget,
) -> Vec<f64> {
    let inv_rc = 1.0 / conjugate_exponent(r);
    let len = probe.cube.length_f64();
    let center = {
        let c = probe.cube.left() + probe.cube.length() / 2;
        *c.numer() as f64 / *c.denom() as f64
    };
    let diff = |y: f64| (k.profile(probe.x1 - y) - k.profile(probe.x2 - y)).abs();
    let mut terms = Vec::new();
    for step in 1..=k_max {
        let outer = len * (1u64 << step) as f64;
        if k.periodic() && outer > 1.0 {
            break;
        }
        let integral = if k.periodic() {
            annulus_sum_on_grid(probe, step, budget.n, r, &diff)
        } else {
            annulus_sum_on_line(center, len, step, budget.line_nodes, r, &diff)
        };
        terms.push(outer.powf(inv_rc) * integral.powf(1.0 / r));
    }
    terms
}

/// `∫_{annulus} |ΔK|^r` by the sample-grid midpoint rule.
fn annulus_sum_on_grid(probe: &Probe, step: u32, n: usize, r: f64, diff: &dyn Fn(f64) -> f64) -> f64 {
    let outer = probe.cube.scaled(Rational::from_integer(1i64 << step)).interval.samples(n);
    let inner = probe.cube.scaled(Rational::from_integer(1i64 << (step - 1))).interval.samples(n);
    // Periodic kernels are 1-periodic, so y needs no unwrapping.
    let acc: f64 = outer
        .iter()
        .filter(|j| !inner.contains(*j))
        .map(|j| diff(j as f64 / n as f64).powf(r))
        .sum();
    acc / n as f64
}

fn annulus_sum_on_line(
    center: f64,
    len: f64,
    step: u32,
    nodes: usize,
    r: f64,
    diff: &dyn Fn(f64) -> f64,
) -> f64 {
    let inner_half = 0.5 * len * (1u64 << (step - 1)) as f64;
    let outer_half = 0.5 * len * (1u64 << step) as f64;
    let width = outer_half - inner_half;
    let h = width / nodes as f64;
    let mut acc = 0.0;
    for i in 0..nodes {
        let off = inner_half + (i as f64 + 0.5) * h;
        acc += diff(center + off).powf(r) + diff(center - off).powf(r);
    }
    acc * h
}

/// `κ̂_r`: max over probes of the summed Hörmander terms.
pub fn kappa_estimate(k: &KernelSpec, r: f64, budget: &ProbeBudget) -> Result<KappaEstimate, OperatorError> {
    k.validate()?;
    let probes = draw_probes(budget)?;
    kappa_on_probes(k, r, budget, &probes)
}

pub fn kappa_on_probes(
    k: &KernelSpec,
    r: f64,
    budget: &ProbeBudget,
    probes: &[Probe],
) -> Result<KappaEstimate, OperatorError> {
    let results: Vec<(f64, usize, f64)> = probes
        .par_iter()
        .map(|p| {
            let terms = hormander_terms(k, p, r, budget.k_max, budget);
            let sum: f64 = terms.iter().sum();
            (sum, terms.len(), terms.last().copied().unwrap_or(0.0))
        })
        .collect();
    let mut kappa = 0.0f64;
    let mut annuli = 0usize;
    for &(sum, used, last) in &results {
        if used as u32 == budget.k_max && budget.k_max >= 10 && last > 1e-2 * sum {
            return Err(OperatorError::DivergentSum { last, partial: sum });
        }
        kappa = kappa.max(sum);
        annuli = annuli.max(used);
    }
    Ok(KappaEstimate {
        kernel: k.name(),
        r,
        kappa,
        probes: probes.len(),
        k_max: budget.k_max,
        annuli_used: annuli as u32,
    })
}

// ---------------------------------------------------------------------------
// Weak-type and W_q calibration.

/// `sup_λ λ |{v > λ}|^{1/p}` for samples `v` under the `1/N` counting measure.
pub fn weak_quasinorm(values: &[f64], p: f64) -> f64 {
    let n = values.len();
    let sorted = sorted_abs_desc(values);
    let mut best = 0.0f64;
    for i in 0..n {
        if i + 1 == n || sorted[i + 1] < sorted[i] {
            let measure = (i + 1) as f64 / n as f64;
            best = best.max(sorted[i] * measure.powf(1.0 / p));
        }
    }
    best
}

/// `ψ̂(p)`: largest observed `‖T^F f‖_{p,∞} / ‖f‖_p` over the trials.
/// A lower bound on the true weak norm; stored into the profile.
pub fn weak_norm_estimate(prof: &mut OperatorProfile, p: f64, trials: &[Signal]) -> Result<f64, OperatorError> {
    let engine = ModulatedEngine::base(prof)?;
    let mut best = 0.0f64;
    for f in trials {
        let norm = lp_mean(f.samples(), p);
        if norm == 0.0 {
            continue;
        }
        let values = engine.apply(f)?;
        best = best.max(weak_quasinorm(&values, p) / norm);
    }
    prof.weak_norm_estimates.retain(|(q, _)| *q != p);
    prof.weak_norm_estimates.push((p, best));
    prof.weak_norm_estimates.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(best)
}

/// Ratios `T^F(f χ_Q)(x) / <f>_{q,Q}` for `x ∈ Q`; `None` when `<f>_{q,Q} = 0`.
pub fn wq_ratios(engine: &ModulatedEngine, f: &Signal, cube: &Interval, q: f64) -> Result<Option<Vec<f64>>, OperatorError> {
    let local = f.restricted(cube);
    let avg = lp_mean(&f.values_in(cube)?, q);
    if avg == 0.0 {
        return Ok(None);
    }
    let values = engine.apply(&local)?;
    Ok(Some(cube.samples(f.len()).iter().map(|x| values[x] / avg).collect()))
}

/// Calibrates `ξ̂(λ)` as the largest per-trial `(1-λ)`-quantile of the ratios.
pub fn calibrate_wq(
    prof: &mut OperatorProfile,
    q: f64,
    cube: &Interval,
    lambdas: &[f64],
    trials: &[Signal],
) -> Result<Vec<(f64, f64)>, OperatorError> {
    let engine = ModulatedEngine::base(prof)?;
    let mut thresholds: Vec<(f64, f64)> = lambdas.iter().map(|&l| (l, 0.0)).collect();
    for f in trials {
        if let Some(ratios) = wq_ratios(&engine, f, cube, q)? {
            let sorted = sorted_abs_desc(&ratios);
            for (lambda, xi) in thresholds.iter_mut() {
                let k = measure_to_count(*lambda, sorted.len());
                *xi = xi.max(rearranged_at(&sorted, k));
            }
        }
    }
    prof.wq_threshold = thresholds.clone();
    Ok(thresholds)
}

/// Worst observed fraction `|{x ∈ Q : ratio > ξ̂(λ)}| / |Q|` per `λ`.
pub fn validate_wq(
    prof: &OperatorProfile,
    q: f64,
    cube: &Interval,
    trials: &[Signal],
) -> Result<Vec<(f64, f64)>, OperatorError> {
    let engine = ModulatedEngine::base(prof)?;
    let mut worst: Vec<(f64, f64)> = prof.wq_threshold.iter().map(|&(l, _)| (l, 0.0)).collect();
    for f in trials {
        if let Some(ratios) = wq_ratios(&engine, f, cube, q)? {
            for ((_, xi), (_, frac)) in prof.wq_threshold.iter().zip(worst.iter_mut()) {
                let above = ratios.iter().filter(|v| **v > *xi).count();
                *frac = frac.max(above as f64 / ratios.len() as f64);
            }
        }
    }
    Ok(worst)
}
