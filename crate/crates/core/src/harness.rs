//! Experiment configuration, signal generators, the level-set decay fit,
//! the invariant self-test and report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dyadic::{
    shifted_cover, sparseness_check, DyadicCube, Interval, Rational, SparseFamily,
};
use crate::operators::{
    grand_sharp_all, kappa_estimate, modulated_sup_all, weak_norm_estimate, KernelSpec,
    ModulatedEngine, ModulationFamily, OperatorError, OperatorProfile, ProbeBudget,
};
use crate::signal::{
    conjugate_exponent, cube_samples, lp_mean, maximal_r_all, median_bounds, orlicz_of,
    rearrangement_at_fraction, sorted_abs_desc, Signal, SignalError, YoungFunction,
};
use crate::sparse::{
    lerner_decompose, sparse_dominate, DominationConfig, OperatorHandle, SparseError, Threshold,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("only {survivors} t-points have fraction >= {floor}; at least 4 are needed")]
    InsufficientRange { survivors: usize, floor: f64 },
    #[error("all fractions are equal; the exponential fit is degenerate")]
    DegenerateFit,
    #[error("calibration failure: {0}")]
    Calibration(String),
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

impl From<SparseError> for HarnessError {
    fn from(e: SparseError) -> Self {
        match e {
            SparseError::CalibrationFailure { .. } | SparseError::ResolutionFloor { .. } => {
                HarnessError::Calibration(e.to_string())
            }
            SparseError::Operator(e) => HarnessError::Operator(e),
            SparseError::Signal(e) => HarnessError::Signal(e),
            other => HarnessError::InvalidConfig(other.to_string()),
        }
    }
}

impl HarnessError {
    /// CLI exit code: 1 invalid input, 2 calibration failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::InsufficientRange { .. }
            | HarnessError::DegenerateFit
            | HarnessError::Calibration(_)
            | HarnessError::Operator(OperatorError::DivergentSum { .. }) => 2,
            _ => 1,
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Decay,
    Dominate,
    SharpCheck,
    Kappa,
    Lerner,
    Selftest,
}

impl Experiment {
    pub fn tag(&self) -> &'static str {
        match self {
            Experiment::Decay => "decay",
            Experiment::Dominate => "dominate",
            Experiment::SharpCheck => "sharp-check",
            Experiment::Kappa => "kappa",
            Experiment::Lerner => "lerner",
            Experiment::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// Random trigonometric polynomial restricted to the support.
    Trig,
    /// Indicator of the support.
    Indicator,
    /// `+1` on the left half of the support, `-1` on the right half.
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub n: usize,
    pub seed: u64,
    pub support: Interval,
    pub max_frequency: u32,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            kind: SignalKind::Trig,
            n: 1024,
            seed: 1,
            support: Interval::new(Rational::new(0, 1), Rational::new(1, 2)).expect("valid arc"),
            max_frequency: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandleKind {
    ModulatedSup,
    ModulatedMaximalSup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorSpec {
    pub kernel: KernelSpec,
    /// Frequencies `-max..=max`.
    pub max_frequency: u32,
    pub alpha: u32,
    pub handle: HandleKind,
}

impl Default for OperatorSpec {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::PeriodicHilbert,
            max_frequency: 32,
            alpha: 3,
            handle: HandleKind::ModulatedSup,
        }
    }
}

/// `A` for the domination threshold: a number or the string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    Auto,
    Fixed(f64),
}

impl Serialize for ThresholdSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ThresholdSpec::Auto => s.serialize_str("auto"),
            ThresholdSpec::Fixed(a) => s.serialize_f64(*a),
        }
    }
}

impl<'de> Deserialize<'de> for ThresholdSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) if s.eq_ignore_ascii_case("auto") => Ok(ThresholdSpec::Auto),
            Value::Number(x) => x
                .as_f64()
                .map(ThresholdSpec::Fixed)
                .ok_or_else(|| serde::de::Error::custom("threshold must be finite")),
            other => Err(serde::de::Error::custom(format!(
                "threshold must be \"auto\" or a number, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentParams {
    /// Explicit t-grid; `None` means 24 geometric points in `[0.5, 24]`.
    pub t_grid: Option<Vec<f64>>,
    pub r: f64,
    /// Exponent of the sparse averages; `None` means `max(2, r')`.
    pub s: Option<f64>,
    pub p: f64,
    pub lambdas: Vec<f64>,
    pub threshold: ThresholdSpec,
    pub c0: f64,
    pub trials: usize,
    /// Exponents probed by the `kappa` experiment.
    pub r_values: Vec<f64>,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            t_grid: None,
            r: 2.0,
            s: None,
            p: 2.0,
            lambdas: vec![0.5, 0.25, 0.125],
            threshold: ThresholdSpec::Auto,
            c0: 4.0,
            trials: 4,
            r_values: vec![1.5, 2.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub path: PathBuf,
    pub format: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            path: PathBuf::from("reports"),
            format: "both".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub signal: SignalSpec,
    pub operator: OperatorSpec,
    pub params: ExperimentParams,
    pub output: OutputSpec,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Selftest,
            signal: SignalSpec::default(),
            operator: OperatorSpec::default(),
            params: ExperimentParams::default(),
            output: OutputSpec::default(),
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        let n = self.signal.n;
        if n < 16 || !n.is_power_of_two() {
            return bad(format!("signal.n = {n} must be a power of two >= 16"));
        }
        if self.operator.alpha < 3 || self.operator.alpha % 2 == 0 {
            return bad(format!("operator.alpha = {} must be odd and >= 3", self.operator.alpha));
        }
        self.operator.kernel.validate().map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        if !(self.params.r > 1.0) {
            return bad(format!("params.r = {} must exceed 1", self.params.r));
        }
        if !(self.params.p >= 1.0) {
            return bad(format!("params.p = {} must be at least 1", self.params.p));
        }
        if self.params.trials == 0 {
            return bad("params.trials must be positive".into());
        }
        if let Some(grid) = &self.params.t_grid {
            if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) || grid[0] <= 0.0 {
                return bad("params.t_grid must be positive and strictly increasing".into());
            }
        }
        if self.params.lambdas.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return bad("params.lambdas must lie in (0, 1)".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        Ok(())
    }

    pub fn t_grid(&self) -> Vec<f64> {
        self.params.t_grid.clone().unwrap_or_else(|| default_t_grid(24, 0.5, 24.0))
    }

    pub fn s(&self) -> f64 {
        self.params.s.unwrap_or_else(|| conjugate_exponent(self.params.r).max(2.0))
    }

    pub fn profile(&self) -> Result<OperatorProfile, HarnessError> {
        Ok(OperatorProfile::new(
            self.operator.kernel,
            ModulationFamily::symmetric(self.operator.max_frequency),
            self.signal.n,
        )?)
    }

    /// Seed of trial `t`.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.signal.seed.wrapping_add(trial as u64)
    }
}

/// `count` points spaced geometrically from `lo` to `hi`.
pub fn default_t_grid(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    let ratio = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (ratio * i as f64).exp()).collect()
}

// ---------------------------------------------------------------------------
// Signal generators.

/// Random trigonometric polynomial of degree `max_frequency` with uniform
/// coefficients in `[-1, 1]`, zeroed outside `support`.
pub fn random_trig(n: usize, max_frequency: u32, seed: u64, support: &Interval) -> Result<Signal, SignalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(f64, f64)> = (0..=max_frequency)
        .map(|_| (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)))
        .collect();
    let f = Signal::from_fn(n, |x| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let t = 2.0 * std::f64::consts::PI * k as f64 * x;
                a * t.cos() + b * t.sin()
            })
            .sum()
    })?;
    Ok(f.restricted(support))
}

pub fn generate(spec: &SignalSpec, seed: u64) -> Result<Signal, SignalError> {
    let n = spec.n;
    let range = spec.support.samples(n);
    match spec.kind {
        SignalKind::Trig => random_trig(n, spec.max_frequency, seed, &spec.support),
        SignalKind::Indicator => {
            let mut v = vec![0.0; n];
            for i in range.iter() {
                v[i] = 1.0;
            }
            Signal::new(v)
        }
        SignalKind::Step => {
            let mut v = vec![0.0; n];
            for (pos, i) in range.iter().enumerate() {
                v[i] = if 2 * pos < range.len() { 1.0 } else { -1.0 };
            }
            Signal::new(v)
        }
    }
}

// ---------------------------------------------------------------------------
// Exponential fit.

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentialFit {
    pub c_hat: f64,
    pub alpha_hat: f64,
    pub r_squared: f64,
}

/// Least squares on `ln frac ≈ ln c - α t`.
pub fn fit_exponential(t: &[f64], frac: &[f64]) -> Result<ExponentialFit, HarnessError> {
    let points: Vec<(f64, f64)> = t
        .iter()
        .zip(frac)
        .filter(|(_, f)| **f > 0.0)
        .map(|(t, f)| (*t, f.ln()))
        .collect();
    if points.len() < 4 {
        return Err(HarnessError::InsufficientRange {
            survivors: points.len(),
            floor: 0.0,
        });
    }
    if points.iter().all(|p| p.1 == points[0].1) {
        return Err(HarnessError::DegenerateFit);
    }
    let k = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if stt == 0.0 {
        return Err(HarnessError::DegenerateFit);
    }
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(ExponentialFit {
        c_hat: intercept.exp(),
        alpha_hat: -slope,
        r_squared: 1.0 - ss_res / ss_tot,
    })
}

// ---------------------------------------------------------------------------
// Decay experiment.

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub t_grid: Vec<f64>,
    /// Mean over trials of the per-trial fractions.
    pub fraction: Vec<f64>,
    pub per_trial: Vec<Vec<f64>>,
    pub alpha_hat: f64,
    pub c_hat: f64,
    pub r_squared: f64,
    /// Samples with `M_r f = 0`, summed over trials.
    pub skipped: usize,
    pub trials: usize,
    /// Number of t-points in the fit window.
    pub window: usize,
    pub weak_norm: f64,
}

/// `|{x ∈ Q : op(x) > t M_r f(x)}| / |Q|` for each `t`, skipping `M_r f = 0`.
pub fn level_fractions(op: &[f64], mr: &[f64], region: &Interval, t_grid: &[f64]) -> (Vec<f64>, usize) {
    let n = op.len();
    let samples = region.samples(n);
    let mut ratios = Vec::with_capacity(samples.len());
    let mut skipped = 0;
    for x in samples.iter() {
        if mr[x] == 0.0 {
            skipped += 1;
        } else {
            ratios.push(op[x] / mr[x]);
        }
    }
    ratios.sort_by(f64::total_cmp);
    let total = samples.len() as f64;
    let fractions = t_grid
        .iter()
        .map(|t| (ratios.len() - ratios.partition_point(|r| r <= t)) as f64 / total)
        .collect();
    (fractions, skipped)
}

/// Level-set fractions of `T^F_* f / M_r f` averaged over trials and fitted
/// to `c e^{-α t}` on the points with fraction at least `16/N`.
pub fn run_decay(cfg: &ExperimentConfig) -> Result<DecayReport, HarnessError> {
    cfg.validate()?;
    let n = cfg.signal.n;
    let q = cfg.signal.support;
    let t_grid = cfg.t_grid();
    let mut prof = cfg.profile()?;
    let engine = ModulatedEngine::maximal(&prof)?;
    let signals: Vec<Signal> = (0..cfg.params.trials)
        .map(|t| generate(&cfg.signal, cfg.trial_seed(t)))
        .collect::<Result<_, _>>()?;
    let mut per_trial = Vec::new();
    let mut skipped = 0;
    for f in &signals {
        let op = engine.apply(f)?;
        let mr = maximal_r_all(f, cfg.params.r);
        let (fr, sk) = level_fractions(&op, &mr, &q, &t_grid);
        per_trial.push(fr);
        skipped += sk;
    }
    let trials = per_trial.len();
    let fraction: Vec<f64> = (0..t_grid.len())
        .map(|i| per_trial.iter().map(|fr| fr[i]).sum::<f64>() / trials as f64)
        .collect();
    let weak_norm = weak_norm_estimate(&mut prof, cfg.params.p, &signals)?;

    let floor = 16.0 / n as f64;
    let (wt, wf): (Vec<f64>, Vec<f64>) = t_grid
        .iter()
        .zip(&fraction)
        .filter(|(_, f)| **f >= floor)
        .map(|(t, f)| (*t, *f))
        .unzip();
    if wt.len() < 4 {
        return Err(HarnessError::InsufficientRange {
            survivors: wt.len(),
            floor,
        });
    }
    let fit = fit_exponential(&wt, &wf)?;
    Ok(DecayReport {
        t_grid,
        fraction,
        per_trial,
        alpha_hat: fit.alpha_hat,
        c_hat: fit.c_hat,
        r_squared: fit.r_squared,
        skipped,
        trials,
        window: wt.len(),
        weak_norm,
    })
}

// ---------------------------------------------------------------------------
// Reports.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

impl std::str::FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "both" => Ok(ReportFormat::Both),
            other => Err(HarnessError::IoFailure(format!(
                "unknown report format {other:?}; valid formats are csv, json, both"
            ))),
        }
    }
}

/// A finished experiment: a CSV series and a JSON summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    pub csv: String,
    pub json: Value,
}

impl Report {
    /// Summary with the config echo, seed and crate version appended.
    fn new(name: &str, csv: String, mut summary: Value, cfg: &ExperimentConfig) -> Self {
        let obj = summary.as_object_mut().expect("summary is an object");
        obj.insert("experiment".into(), json!(name));
        obj.insert("seed".into(), json!(cfg.signal.seed));
        obj.insert("version".into(), json!(VERSION));
        let mut echo = serde_json::to_value(cfg).expect("config serializes");
        // Output location and worker count do not affect results.
        if let Some(o) = echo.as_object_mut() {
            o.remove("output");
            o.remove("workers");
        }
        obj.insert("config".into(), echo);
        Self {
            name: name.to_string(),
            csv,
            json: summary,
        }
    }

    pub fn json_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.json).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Writes `<dir>/<name>.csv` and/or `<dir>/<name>.json`; returns the paths.
pub fn write_report(report: &Report, dir: &Path, format: &str) -> Result<Vec<PathBuf>, HarnessError> {
    let format: ReportFormat = format.parse()?;
    let io = |p: &Path, e: std::io::Error| HarnessError::IoFailure(format!("{}: {e}", p.display()));
    if !dir.is_dir() {
        return Err(HarnessError::IoFailure(format!("{} is not a directory", dir.display())));
    }
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        let path = dir.join(format!("{}.csv", report.name));
        std::fs::write(&path, &report.csv).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let path = dir.join(format!("{}.json", report.name));
        std::fs::write(&path, report.json_text()).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn decay_report(cfg: &ExperimentConfig, rep: &DecayReport) -> Report {
    let mut csv = String::from("t,fraction\n");
    for (t, f) in rep.t_grid.iter().zip(&rep.fraction) {
        writeln!(csv, "{t},{f}").expect("string write");
    }
    let summary = json!({
        "alpha_hat": rep.alpha_hat,
        "c_hat": rep.c_hat,
        "r_squared": rep.r_squared,
        "skipped": rep.skipped,
        "trials": rep.trials,
        "window": rep.window,
        "t_grid": rep.t_grid,
        "fraction": rep.fraction,
        "calibration": { "weak_norm": { "p": cfg.params.p, "psi_hat": rep.weak_norm } },
    });
    Report::new("decay", csv, summary, cfg)
}

// ---------------------------------------------------------------------------
// Other experiments.

fn handle_for(cfg: &ExperimentConfig, prof: &OperatorProfile) -> Result<OperatorHandle, HarnessError> {
    Ok(match cfg.operator.handle {
        HandleKind::ModulatedSup => OperatorHandle::modulated_sup(prof)?,
        HandleKind::ModulatedMaximalSup => OperatorHandle::modulated_maximal_sup(prof)?,
    })
}

fn trial_signals(cfg: &ExperimentConfig) -> Result<Vec<Signal>, HarnessError> {
    Ok((0..cfg.params.trials)
        .map(|t| generate(&cfg.signal, cfg.trial_seed(t)))
        .collect::<Result<_, _>>()?)
}

/// Sparse domination on each trial; CSV lists per-trial constants.
pub fn run_dominate(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let mut prof = cfg.profile()?;
    let handle = handle_for(cfg, &prof)?;
    let dcfg = DominationConfig {
        alpha: cfg.operator.alpha,
        s: cfg.s(),
        threshold: match cfg.params.threshold {
            ThresholdSpec::Auto => Threshold::Auto(1.0),
            ThresholdSpec::Fixed(a) => Threshold::Fixed(a),
        },
        c0: cfg.params.c0,
        ..Default::default()
    };
    let signals = trial_signals(cfg)?;
    let mut csv = String::from("trial,a,c0,c_empirical,cubes,depth,skipped\n");
    let mut results = Vec::new();
    for (t, f) in signals.iter().enumerate() {
        let res = sparse_dominate(f, &handle, &cfg.signal.support, &dcfg)?;
        writeln!(
            csv,
            "{t},{},{},{},{},{},{}",
            res.a,
            res.c0,
            res.c_empirical,
            res.cubes.len(),
            res.recursion_depth,
            res.skipped
        )
        .expect("string write");
        results.push(res.to_json());
    }
    let weak = weak_norm_estimate(&mut prof, cfg.params.p, &signals)?;
    let c_max = results.iter().filter_map(|r| r["c_empirical"].as_f64()).fold(0.0, f64::max);
    let summary = json!({
        "operator": handle.name(),
        "s": dcfg.s,
        "c_empirical_max": c_max,
        "trials": results.len(),
        "results": results,
        "calibration": { "weak_norm": { "p": cfg.params.p, "psi_hat": weak } },
    });
    Ok(Report::new("dominate", csv, summary, cfg))
}

/// `M♯ f <= κ̂_r M_{r'} f` per trial; CSV has one row per sample of trial 0.
pub fn run_sharp_check(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let n = cfg.signal.n;
    let prof = cfg.profile()?;
    let r = cfg.params.r;
    let rc = conjugate_exponent(r);
    let kappa = kappa_estimate(&cfg.operator.kernel, r, &ProbeBudget::standard(n, cfg.signal.seed))?;
    let slack = 1.1;
    let mut worst = 0.0f64;
    let mut violations = 0usize;
    let mut csv = String::from("x,sharp,bound\n");
    for (t, f) in trial_signals(cfg)?.iter().enumerate() {
        let sharp = grand_sharp_all(f, &prof, cfg.operator.alpha)?;
        let m = maximal_r_all(f, rc);
        for x in 0..n {
            let bound = kappa.kappa * m[x];
            if sharp[x] > bound * slack {
                violations += 1;
            }
            if bound > 0.0 {
                worst = worst.max(sharp[x] / bound);
            }
            if t == 0 {
                writeln!(csv, "{x},{},{bound}", sharp[x]).expect("string write");
            }
        }
    }
    let summary = json!({
        "r": r,
        "maximal_exponent": rc,
        "slack": slack,
        "max_ratio": worst,
        "violations": violations,
        "passed": violations == 0,
        "calibration": { "kappa": kappa },
    });
    Ok(Report::new("sharp-check", csv, summary, cfg))
}

/// Hörmander constants for each configured exponent.
pub fn run_kappa(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let budget = ProbeBudget::standard(cfg.signal.n, cfg.signal.seed);
    let mut csv = String::from("r,kappa\n");
    let mut rows = Vec::new();
    for &r in &cfg.params.r_values {
        let k = kappa_estimate(&cfg.operator.kernel, r, &budget)?;
        writeln!(csv, "{r},{}", k.kappa).expect("string write");
        rows.push(k);
    }
    let summary = json!({ "budget": budget, "calibration": { "kappa": rows } });
    Ok(Report::new("kappa", csv, summary, cfg))
}

/// Median-oscillation decomposition on each trial.
pub fn run_lerner(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let q = cfg.signal.support;
    let lambda = 0.125;
    let mut csv = String::from("trial,cubes,packing_certified,violations,max_lhs_over_rhs\n");
    let mut total_violations = 0;
    for (t, f) in trial_signals(cfg)?.iter().enumerate() {
        let d = lerner_decompose(f, &q, lambda)?;
        let bound = d.bound(f.len());
        let m = d.root_median();
        let mut violations = 0;
        let mut worst = 0.0f64;
        for x in q.samples(f.len()).iter() {
            let lhs = (f.samples()[x] - m).abs();
            if lhs > bound[x] {
                violations += 1;
            }
            if bound[x] > 0.0 {
                worst = worst.max(lhs / bound[x]);
            }
        }
        total_violations += violations;
        writeln!(csv, "{t},{},{},{violations},{worst}", d.cubes.len(), d.family.certificate().is_some())
            .expect("string write");
    }
    let summary = json!({
        "lambda": lambda,
        "violations": total_violations,
        "trials": cfg.params.trials,
    });
    Ok(Report::new("lerner", csv, summary, cfg))
}

// ---------------------------------------------------------------------------
// Self-test.

/// Median used by the rearrangement checks; swappable for mutation testing.
pub type MedianFn = fn(&[f64]) -> f64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub module: &'static str,
    pub invariant: &'static str,
    pub n: usize,
    pub passed: bool,
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestSummary {
    pub checks: Vec<CheckOutcome>,
}

impl SelftestSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type Check = Result<(), String>;

fn seeded_signals(n: usize, count: u64, base: u64) -> Vec<Signal> {
    (0..count)
        .map(|s| random_trig(n, 12, base + s, &Interval::full_circle()).expect("valid length"))
        .collect()
}

fn grid0_cubes(n: usize, max_level: u32) -> Vec<DyadicCube> {
    (0..=max_level.min(n.trailing_zeros()))
        .flat_map(|level| (0..1u64 << level).map(move |index| DyadicCube { grid: 0, level, index }))
        .collect()
}

fn check_children_partition(_n: usize) -> Check {
    for level in 0..8u32 {
        for index in (0..1u64 << level).step_by(3) {
            for grid in 0..=1u8 {
                let c = DyadicCube { grid, level, index };
                let [a, b] = c.children(24).map_err(|e| e.to_string())?;
                let (ci, ai, bi) = (c.interval(), a.interval(), b.interval());
                let covered = ci.intersection_measure(&ai) + ci.intersection_measure(&bi);
                if covered != ci.length() || !ai.intersection_measure(&bi).is_zero() {
                    return Err(format!("cube {c}"));
                }
            }
        }
    }
    Ok(())
}

fn check_shifted_cover(n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    for _ in 0..200 {
        let count = rng.gen_range(1..=n / 6);
        let start = rng.gen_range(0..n);
        let i = Interval::from_samples(start, count, n).map_err(|e| e.to_string())?;
        let c = shifted_cover(&i).map_err(|e| format!("{i}: {e}"))?;
        if !c.interval().contains(&i) || c.side() > i.length() * Rational::from_integer(6) {
            return Err(format!("interval {i}, cover {c}"));
        }
    }
    Ok(())
}

fn check_rearrangement(n: usize) -> Check {
    for (seed, f) in seeded_signals(n, 4, 10).iter().enumerate() {
        let sorted = sorted_abs_desc(f.samples());
        if sorted.windows(2).any(|w| w[0] < w[1]) {
            return Err(format!("seed {seed}: rearrangement increases"));
        }
        for level in [0.0, 0.3, 0.9] {
            let a = f.samples().iter().filter(|v| v.abs() > level).count();
            let b = sorted.iter().filter(|v| **v > level).count();
            if a != b {
                return Err(format!("seed {seed}: level {level}: {a} vs {b}"));
            }
        }
    }
    Ok(())
}

fn check_median_bound(n: usize, median: MedianFn) -> Check {
    for (seed, f) in seeded_signals(n, 4, 20).iter().enumerate() {
        for cube in grid0_cubes(n, 6) {
            let values: Vec<f64> = cube_samples(&cube, n).iter().map(|i| f.samples()[i]).collect();
            let m = median(&values);
            for lambda in [0.125, 0.25, 0.49] {
                let rhs = rearrangement_at_fraction(&values, lambda);
                if m.abs() > rhs {
                    return Err(format!("seed {seed}, cube {cube}, lambda {lambda}: |m| = {} > {rhs}", m.abs()));
                }
            }
        }
    }
    Ok(())
}

fn check_orlicz_power(n: usize) -> Check {
    for (seed, f) in seeded_signals(n, 3, 30).iter().enumerate() {
        for p in [1.0, 1.5, 2.0, 3.0] {
            let a = orlicz_of(f.samples(), &YoungFunction::Power { p }).map_err(|e| e.to_string())?;
            let b = lp_mean(f.samples(), p);
            if (a - b).abs() > 1e-8 * b {
                return Err(format!("seed {seed}, p {p}: {a} vs {b}"));
            }
        }
    }
    Ok(())
}

fn check_maximal_dominates(n: usize) -> Check {
    for (seed, f) in seeded_signals(n, 2, 40).iter().enumerate() {
        let m = maximal_r_all(f, 2.0);
        for x in 0..n {
            if m[x] < f.samples()[x].abs() {
                return Err(format!("seed {seed}, x {x}"));
            }
        }
    }
    Ok(())
}

fn small_profile(n: usize) -> OperatorProfile {
    OperatorProfile::new(KernelSpec::PeriodicHilbert, ModulationFamily::symmetric(4), n).expect("valid profile")
}

fn check_sublinear(n: usize) -> Check {
    let prof = small_profile(n);
    let fs = seeded_signals(n, 2, 50);
    let sum = Signal::new(fs[0].samples().iter().zip(fs[1].samples()).map(|(a, b)| a + b).collect())
        .map_err(|e| e.to_string())?;
    let (a, b, c) = (
        modulated_sup_all(&fs[0], &prof).map_err(|e| e.to_string())?,
        modulated_sup_all(&fs[1], &prof).map_err(|e| e.to_string())?,
        modulated_sup_all(&sum, &prof).map_err(|e| e.to_string())?,
    );
    for x in 0..n {
        if c[x] > a[x] + b[x] + 1e-9 * (1.0 + a[x] + b[x]) {
            return Err(format!("x {x}: {} > {} + {}", c[x], a[x], b[x]));
        }
    }
    Ok(())
}

fn check_sharp_bound(n: usize) -> Check {
    let prof = small_profile(n);
    let kappa = kappa_estimate(&KernelSpec::PeriodicHilbert, 2.0, &ProbeBudget::standard(n, 3))
        .map_err(|e| e.to_string())?
        .kappa;
    for (seed, f) in seeded_signals(n, 2, 60).iter().enumerate() {
        let sharp = grand_sharp_all(f, &prof, 3).map_err(|e| e.to_string())?;
        let m = maximal_r_all(f, 2.0);
        for x in 0..n {
            if sharp[x] > 1.1 * kappa * m[x] {
                return Err(format!("seed {seed}, x {x}: {} > 1.1 * {kappa} * {}", sharp[x], m[x]));
            }
        }
    }
    Ok(())
}

fn check_lerner(n: usize) -> Check {
    for (seed, f) in seeded_signals(n, 3, 70).iter().enumerate() {
        let d = lerner_decompose(f, &Interval::full_circle(), 0.125).map_err(|e| e.to_string())?;
        if let Some((x, lhs, rhs)) = d.first_violation(f) {
            return Err(format!("seed {seed}, x {x}: {lhs} > {rhs}"));
        }
        if !sparseness_check(&d.family).is_certified() {
            return Err(format!("seed {seed}: packing"));
        }
    }
    Ok(())
}

fn check_domination(n: usize) -> Check {
    let prof = small_profile(n);
    let handle = OperatorHandle::modulated_sup(&prof).map_err(|e| e.to_string())?;
    let q = DyadicCube { grid: 0, level: 1, index: 1 }.interval();
    let f = random_trig(n, 8, 80, &q).map_err(|e| e.to_string())?;
    let res = sparse_dominate(&f, &handle, &q, &DominationConfig::default()).map_err(|e| e.to_string())?;
    let fam = SparseFamily::new(Rational::new(1, 2), res.family.cubes().to_vec()).map_err(|e| e.to_string())?;
    if !sparseness_check(&fam).is_certified() {
        return Err("packing".into());
    }
    let larger = DominationConfig {
        threshold: Threshold::Fixed(2.0 * res.a),
        c0: res.c0,
        ..Default::default()
    };
    sparse_dominate(&f, &handle, &q, &larger).map_err(|e| format!("A = {}: {e}", 2.0 * res.a))?;
    Ok(())
}

fn check_fit(_n: usize) -> Check {
    let t = [1.0, 2.0, 3.0, 4.0];
    let frac: Vec<f64> = t.iter().map(|t: &f64| (-2.0 * t).exp()).collect();
    let fit = fit_exponential(&t, &frac).map_err(|e| e.to_string())?;
    if (fit.alpha_hat - 2.0).abs() > 1e-9 || (fit.c_hat - 1.0).abs() > 1e-9 {
        return Err(format!("{fit:?}"));
    }
    Ok(())
}

fn check_decay_monotone(n: usize) -> Check {
    let prof = small_profile(n);
    let q = DyadicCube { grid: 0, level: 1, index: 0 }.interval();
    let f = random_trig(n, 8, 90, &q).map_err(|e| e.to_string())?;
    let op = ModulatedEngine::maximal(&prof)
        .and_then(|e| e.apply(&f))
        .map_err(|e| e.to_string())?;
    let mr = maximal_r_all(&f, 2.0);
    let (fr, _) = level_fractions(&op, &mr, &q, &default_t_grid(24, 0.5, 24.0));
    if fr.windows(2).any(|w| w[1] > w[0]) || fr.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(format!("{fr:?}"));
    }
    Ok(())
}

/// Runs every module's invariant suite at fixed seeds and `N ∈ {256, 1024}`.
pub fn run_selftest(median: MedianFn) -> SelftestSummary {
    type Named = (&'static str, &'static str, fn(usize) -> Check);
    let suite: Vec<Named> = vec![
        ("dyadic", "children-partition", check_children_partition),
        ("dyadic", "shifted-cover-ratio", check_shifted_cover),
        ("signal", "rearrangement-monotone-equimeasurable", check_rearrangement),
        ("signal", "orlicz-power-consistency", check_orlicz_power),
        ("signal", "maximal-dominates-modulus", check_maximal_dominates),
        ("operators", "sublinearity", check_sublinear),
        ("operators", "sharp-pointwise-bound", check_sharp_bound),
        ("sparse", "oscillation-formula", check_lerner),
        ("sparse", "domination-packing-monotone", check_domination),
        ("harness", "exact-fit", check_fit),
        ("harness", "decay-monotone", check_decay_monotone),
    ];
    let mut checks = Vec::new();
    for n in [256usize, 1024] {
        for (module, invariant, run) in &suite {
            checks.push(outcome(module, invariant, n, run(n)));
        }
        checks.push(outcome("signal", "median-rearrangement-bound", n, check_median_bound(n, median)));
    }
    SelftestSummary { checks }
}

fn outcome(module: &'static str, invariant: &'static str, n: usize, r: Check) -> CheckOutcome {
    CheckOutcome {
        module,
        invariant,
        n,
        passed: r.is_ok(),
        witness: r.err(),
    }
}

/// The default median used by the self-test.
pub fn standard_median(values: &[f64]) -> f64 {
    median_bounds(values).0
}

pub fn selftest_report(cfg: &ExperimentConfig, summary: &SelftestSummary) -> Report {
    let mut csv = String::from("module,invariant,n,status,witness\n");
    for c in &summary.checks {
        writeln!(
            csv,
            "{},{},{},{},{}",
            c.module,
            c.invariant,
            c.n,
            if c.passed { "pass" } else { "fail" },
            c.witness.as_deref().unwrap_or("").replace(',', ";")
        )
        .expect("string write");
    }
    let failures: Vec<&CheckOutcome> = summary.failures().collect();
    let body = json!({
        "passed": summary.passed(),
        "checks": summary.checks.len(),
        "failures": failures,
    });
    Report::new("selftest", csv, body, cfg)
}

/// Runs the configured experiment. Selftest failures are reported in the
/// summary, not as an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Decay => Ok(decay_report(cfg, &run_decay(cfg)?)),
        Experiment::Dominate => run_dominate(cfg),
        Experiment::SharpCheck => run_sharp_check(cfg),
        Experiment::Kappa => run_kappa(cfg),
        Experiment::Lerner => run_lerner(cfg),
        Experiment::Selftest => Ok(selftest_report(cfg, &run_selftest(standard_median))),
    }
}

/// [`run_experiment`] inside a pool of `workers` threads.
pub fn run_with_workers(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<Report, HarnessError> {
    match workers {
        None => run_experiment(cfg),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
            pool.install(|| run_experiment(cfg))
        }
    }
}

/// Mean of per-trial series, computed by a single parallel pass; used to
/// cross-check the sequential aggregation in [`run_decay`].
pub fn mean_series(series: &[Vec<f64>]) -> Vec<f64> {
    let len = series.first().map_or(0, Vec::len);
    (0..len)
        .into_par_iter()
        .map(|i| series.iter().map(|s| s[i]).sum::<f64>() / series.len() as f64)
        .collect()
}
