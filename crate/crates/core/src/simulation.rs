//! Monte Carlo size and power experiments.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, LogNormal, StandardNormal, StudentT, Weibull};
use serde::{Deserialize, Serialize};

use crate::data::{Covariate, Dataset, Link, ModelSpec, Outcome, SeparationPolicy};
use crate::dist::gamma as gamma_fn;
use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::permutation::{run_permtest, PValueMode, PermutationPlan, Scheme};
use crate::rng::{derive_seed, stream, tag};

/// Retention coefficients (α₀, α₁, α₂) of the attrition design.
pub const ATTRITION_DEFAULT: [f64; 3] = [0.1, 0.25, 3.75];
/// The milder coefficients used in the short worked example.
pub const ATTRITION_ILLUSTRATIVE: [f64; 3] = [1.0, 0.5, 1.0];

pub const MAX_REGENERATIONS: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ErrorFamily {
    Normal,
    Student { df: f64 },
    Weibull { shape: f64, scale: f64 },
    LogNormal { mu_log: f64, sigma_log: f64 },
    Cauchy { location: f64, scale: f64 },
}

impl ErrorFamily {
    pub const NAMES: [&'static str; 5] = ["normal", "student", "weibull", "lognormal", "cauchy"];

    /// Family with its default parameters, by name.
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name.to_ascii_lowercase().as_str() {
            "normal" | "n" => Self::Normal,
            "student" | "s" | "t" => Self::Student { df: 3.0 },
            "weibull" | "w" => Self::Weibull { shape: 1.5, scale: 1.0 },
            "lognormal" | "l" => Self::LogNormal {
                mu_log: 0.0,
                sigma_log: 1.0,
            },
            "cauchy" | "c" => Self::Cauchy {
                location: 1.0,
                scale: 0.25,
            },
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Student { .. } => "student",
            Self::Weibull { .. } => "weibull",
            Self::LogNormal { .. } => "lognormal",
            Self::Cauchy { .. } => "cauchy",
        }
    }

    /// Population mean and standard deviation, when both exist.
    pub fn moments(&self) -> Option<(f64, f64)> {
        match *self {
            Self::Normal => Some((0.0, 1.0)),
            Self::Student { df } if df > 2.0 => Some((0.0, libm::sqrt(df / (df - 2.0)))),
            Self::Student { .. } | Self::Cauchy { .. } => None,
            Self::Weibull { shape, scale } => {
                let g1 = gamma_fn(1.0 + 1.0 / shape);
                let g2 = gamma_fn(1.0 + 2.0 / shape);
                Some((scale * g1, scale * libm::sqrt(g2 - g1 * g1)))
            }
            Self::LogNormal { mu_log, sigma_log } => {
                let s2 = sigma_log * sigma_log;
                let mean = libm::exp(mu_log + s2 / 2.0);
                let var = (libm::exp(s2) - 1.0) * libm::exp(2.0 * mu_log + s2);
                Some((mean, libm::sqrt(var)))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Normal => true,
            Self::Student { df } => df > 0.0,
            Self::Weibull { shape, scale } => shape > 0.0 && scale > 0.0,
            Self::LogNormal { mu_log, sigma_log } => mu_log.is_finite() && sigma_log > 0.0,
            Self::Cauchy { location, scale } => location.is_finite() && scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("invalid parameters for {} errors", self.name())))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    #[serde(flatten)]
    pub family: ErrorFamily,
    /// Shift and scale to mean 0, variance 1. Families without a variance
    /// are only centered (Cauchy at its location, Student at 0).
    pub standardize: bool,
}

impl ErrorDistribution {
    pub fn new(family: ErrorFamily) -> Self {
        Self {
            family,
            standardize: true,
        }
    }

    /// Whether draws are actually rescaled to unit variance.
    pub fn scales(&self) -> bool {
        self.standardize && self.family.moments().is_some()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let raw = match self.family {
            ErrorFamily::Normal => rng.sample(StandardNormal),
            ErrorFamily::Student { df } => StudentT::new(df).expect("validated").sample(rng),
            ErrorFamily::Weibull { shape, scale } => Weibull::new(scale, shape).expect("validated").sample(rng),
            ErrorFamily::LogNormal { mu_log, sigma_log } => {
                LogNormal::new(mu_log, sigma_log).expect("validated").sample(rng)
            }
            ErrorFamily::Cauchy { location, scale } => Cauchy::new(location, scale).expect("validated").sample(rng),
        };
        if !self.standardize {
            return raw;
        }
        match (self.family.moments(), self.family) {
            (Some((m, s)), _) => (raw - m) / s,
            (None, ErrorFamily::Cauchy { location, .. }) => raw - location,
            (None, _) => raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    BaselineM1,
    BaselineM2,
    UnbalCovariate,
    UnbalTreatment,
    Attrition,
}

impl Design {
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline_m1" | "m1" => Self::BaselineM1,
            "baseline_m2" | "m2" => Self::BaselineM2,
            "unbal_covariate" => Self::UnbalCovariate,
            "unbal_treatment" => Self::UnbalTreatment,
            "attrition" => Self::Attrition,
            _ => return None,
        })
    }

    fn id(self) -> u64 {
        self as u64
    }

    /// Permutation scheme used when the config does not name one.
    pub fn default_scheme(self) -> Scheme {
        match self {
            Self::BaselineM2 | Self::UnbalCovariate => Scheme::FreedmanLane,
            _ => Scheme::Naive,
        }
    }

    /// The analysis model fitted to every generated dataset.
    pub fn model(self) -> ModelSpec {
        let spec = ModelSpec::new(&["y"], "D");
        match self {
            Self::BaselineM1 | Self::UnbalTreatment => spec,
            Self::BaselineM2 | Self::UnbalCovariate => spec.with_lcvars(&["X1", "X2"]),
            Self::Attrition => spec.with_ipw(&["W"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub design: Design,
    pub n: usize,
    pub gamma_grid: Vec<f64>,
    pub error: ErrorDistribution,
    #[serde(rename = "B", alias = "replications")]
    pub replications: usize,
    pub np: usize,
    pub alpha: f64,
    pub attrition_coeffs: [f64; 3],
    pub seed: u64,
    /// Overrides [`Design::default_scheme`].
    #[serde(default)]
    pub scheme: Option<Scheme>,
    #[serde(default)]
    pub link: Link,
    #[serde(default = "yes")]
    pub reestimate_ipw: bool,
    #[serde(default = "truncate")]
    pub separation: SeparationPolicy,
    /// Redraw a sample whose permutation refits exceed the failure budget
    /// instead of aborting the run. Redraws count as regenerations.
    #[serde(default)]
    pub redraw_failed: bool,
}

fn truncate() -> SeparationPolicy {
    SeparationPolicy::Truncate
}

fn yes() -> bool {
    true
}

impl SimulationConfig {
    pub fn new(design: Design, n: usize, family: ErrorFamily) -> Self {
        Self {
            design,
            n,
            gamma_grid: (0..=8).map(|i| i as f64 / 10.0).collect(),
            error: ErrorDistribution::new(family),
            replications: 1000,
            np: 1000,
            alpha: 0.05,
            attrition_coeffs: ATTRITION_DEFAULT,
            seed: 0,
            scheme: None,
            link: Link::Probit,
            reestimate_ipw: true,
            separation: SeparationPolicy::Truncate,
            redraw_failed: false,
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme.unwrap_or_else(|| self.design.default_scheme())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n < 4 {
            return bad("n must be at least 4");
        }
        if self.replications == 0 || self.np == 0 {
            return bad("B and np must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.gamma_grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("gamma_grid values must be finite and non-negative");
        }
        if self.attrition_coeffs.iter().any(|a| a.is_nan()) {
            return bad("attrition_coeffs must not be NaN");
        }
        if self.scheme == Some(Scheme::Block) {
            return bad("simulated designs have no blocks");
        }
        self.error.family.validate()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn draw(cfg: &SimulationConfig, gamma: f64, rng: &mut ChaCha8Rng) -> Dataset {
    let n = cfg.n;
    let mut d = vec![0u8; n];
    let mut covariates = Vec::new();
    let mut y = vec![0.0; n];
    match cfg.design {
        Design::BaselineM1 | Design::UnbalTreatment => {
            for i in 0..n {
                d[i] = if cfg.design == Design::BaselineM1 {
                    u8::from(normal(rng) < 0.0)
                } else {
                    u8::from(rng.random::<f64>() < 0.3)
                };
                y[i] = gamma * f64::from(d[i]) + cfg.error.sample(rng);
            }
        }
        Design::BaselineM2 | Design::UnbalCovariate => {
            let mut x1 = vec![0.0; n];
            let mut x2 = vec![0.0; n];
            for i in 0..n {
                d[i] = u8::from(normal(rng) < 0.0);
                let shift = match (cfg.design, d[i]) {
                    (Design::BaselineM2, _) => 0.0,
                    (_, 1) => 0.25,
                    _ => -0.25,
                };
                x1[i] = shift + 2.0 * normal(rng);
                x2[i] = if rng.random::<f64>() > 0.7 { 2.0 } else { 1.0 };
                y[i] = gamma * f64::from(d[i]) + 0.20 * x1[i] + 0.05 * x2[i] + cfg.error.sample(rng);
            }
            covariates.push(Covariate::new("X1", x1));
            covariates.push(Covariate::new("X2", x2));
        }
        Design::Attrition => {
            let [a0, a1, a2] = cfg.attrition_coeffs;
            let mut w = vec![0.0; n];
            let mut values = vec![None; n];
            for i in 0..n {
                d[i] = u8::from(normal(rng) < 0.0);
                w[i] = normal(rng);
                let yi = gamma * f64::from(d[i]) + 1.5 * w[i] + cfg.error.sample(rng);
                let r = a0 + a1 * f64::from(d[i]) + a2 * w[i] + normal(rng) > 0.0;
                values[i] = r.then_some(yi);
            }
            covariates.push(Covariate::new("W", w));
            return Dataset::new(vec![Outcome::new("y", values)], "D", d, covariates).expect("consistent lengths");
        }
    }
    let y = y.into_iter().map(Some).collect();
    Dataset::new(vec![Outcome::new("y", y)], "D", d, covariates).expect("consistent lengths")
}

/// Each arm needs at least two respondents and the sample must leave room
/// for a residual degree of freedom.
fn degenerate(ds: &Dataset, spec: &ModelSpec) -> bool {
    let o = &ds.outcomes()[0];
    let mut arms = [0usize; 2];
    for i in o.respondents() {
        arms[usize::from(ds.treatment()[i])] += 1;
    }
    let p = 2 + spec.lc_names.len();
    arms[0] < 2 || arms[1] < 2 || arms[0] + arms[1] <= p
}

fn draw_attempt(cfg: &SimulationConfig, gamma: f64, replicate: usize, attempt: u32) -> Dataset {
    let mut rng = stream(
        cfg.seed,
        &[tag::DESIGN, cfg.design.id(), cfg.n as u64, gamma.to_bits(), replicate as u64, u64::from(attempt)],
    );
    draw(cfg, gamma, &mut rng)
}

/// First accepted draw at or after `first_attempt`, with its attempt number.
fn gen_with<F: Fn(&Dataset) -> bool>(
    cfg: &SimulationConfig,
    gamma: f64,
    replicate: usize,
    first_attempt: u32,
    accept: F,
) -> Result<(Dataset, u32)> {
    if replicate >= cfg.replications {
        return Err(Error::Config(alloc::format!(
            "replicate {replicate} out of range for B = {}",
            cfg.replications
        )));
    }
    for attempt in first_attempt..=MAX_REGENERATIONS {
        let ds = draw_attempt(cfg, gamma, replicate, attempt);
        if accept(&ds) {
            return Ok((ds, attempt));
        }
    }
    Err(Error::TooManyRegenerations(MAX_REGENERATIONS))
}

/// Dataset for replicate `replicate` of the cell at `gamma`, with the number
/// of degenerate draws discarded along the way.
pub fn gen_design_counted(cfg: &SimulationConfig, gamma: f64, replicate: usize) -> Result<(Dataset, u32)> {
    let spec = cfg.design.model();
    gen_with(cfg, gamma, replicate, 0, |ds| !degenerate(ds, &spec))
}

pub fn gen_design(cfg: &SimulationConfig, gamma: f64, replicate: usize) -> Result<Dataset> {
    gen_design_counted(cfg, gamma, replicate).map(|(ds, _)| ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Parametric,
    Permutation,
    ParametricIpw,
    PermutationIpw,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Self::Parametric => "param",
            Self::Permutation => "perm",
            Self::ParametricIpw => "param_ipw",
            Self::PermutationIpw => "perm_ipw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ols,
    Ipw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub method: Method,
    pub rejections: u64,
    pub rate: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub estimator: Estimator,
    pub bias: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub gamma: f64,
    pub rejections: Vec<Rejection>,
    pub accuracy: Vec<Accuracy>,
    /// Mean respondent difference in means (attrition design only).
    pub respondent_ate: Option<f64>,
    /// Degenerate draws discarded and redrawn in this cell.
    pub regenerations: u64,
}

impl Cell {
    pub fn rate(&self, method: Method) -> Option<f64> {
        self.rejections.iter().find(|r| r.method == method).map(|r| r.rate)
    }

    pub fn bias(&self, estimator: Estimator) -> Option<f64> {
        self.accuracy.iter().find(|a| a.estimator == estimator).map(|a| a.bias)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub cells: Vec<Cell>,
}

impl SimulationReport {
    pub fn methods(&self) -> &'static [Method] {
        methods_for(self.config.design)
    }
}

fn methods_for(design: Design) -> &'static [Method] {
    if design == Design::Attrition {
        &[Method::Parametric, Method::Permutation, Method::ParametricIpw, Method::PermutationIpw]
    } else {
        &[Method::Parametric, Method::Permutation]
    }
}

#[derive(Debug, Clone, Copy)]
struct Outcome1 {
    reject: [bool; 4],
    gamma_hat: f64,
    gamma_hat_ipw: f64,
    respondent_diff: f64,
    regenerations: u32,
}

fn one_replicate(cfg: &SimulationConfig, spec: &ModelSpec, gamma: f64, replicate: usize) -> Result<Outcome1> {
    let mut spec = spec.clone();
    spec.link = cfg.link;
    spec.separation = cfg.separation;
    let mut attempt = 0;
    loop {
        let (ds, used) = gen_with(cfg, gamma, replicate, attempt, |ds| !degenerate(ds, &spec))?;
        match analyze(cfg, &spec, &ds, gamma, replicate, used) {
            Err(Error::ReplicateBudget { .. }) if cfg.redraw_failed && used < MAX_REGENERATIONS => attempt = used + 1,
            other => return other,
        }
    }
}

fn analyze(
    cfg: &SimulationConfig,
    spec: &ModelSpec,
    ds: &Dataset,
    gamma: f64,
    replicate: usize,
    regenerations: u32,
) -> Result<Outcome1> {
    let plan = PermutationPlan {
        np: cfg.np,
        scheme: cfg.scheme(),
        seed: derive_seed(cfg.seed, &[tag::REPLICATE_SEED, gamma.to_bits(), replicate as u64]),
        reestimate_ipw: cfg.reestimate_ipw,
        mode: PValueMode::Smoothed,
    };
    let res = run_permtest(ds, spec, &plan, &Sequential)?;
    let e = &res.estimates[0];
    let o = &ds.outcomes()[0];
    let (mut sums, mut counts) = ([0.0; 2], [0usize; 2]);
    for i in o.respondents() {
        let arm = usize::from(ds.treatment()[i]);
        sums[arm] += o.values[i].unwrap_or(0.0);
        counts[arm] += 1;
    }
    let a = cfg.alpha;
    Ok(Outcome1 {
        reject: [e.p_asym_1s < a, res.p_perm[0] < a, e.p_asym_1s_ipw < a, res.p_perm_ipw[0] < a],
        gamma_hat: e.gamma_hat,
        gamma_hat_ipw: e.gamma_hat_ipw,
        respondent_diff: sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64,
        regenerations,
    })
}

/// Called with `(index, total)` as each replicate finishes; `index` is the
/// flat `γ-major` replicate index, so calls may arrive out of order.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

/// Runs every `(γ, replicate)` cell of `cfg` on `exec`.
pub fn run_simulation<E: Executor>(cfg: &SimulationConfig, exec: &E) -> Result<SimulationReport> {
    run_simulation_with_progress(cfg, exec, &|_, _| {})
}

pub fn run_simulation_with_progress<E: Executor>(
    cfg: &SimulationConfig,
    exec: &E,
    progress: Progress<'_>,
) -> Result<SimulationReport> {
    cfg.validate()?;
    let spec = cfg.design.model();
    let b = cfg.replications;
    let total = b * cfg.gamma_grid.len();
    let outs = exec.map_indexed(total, |idx| {
        let out = one_replicate(cfg, &spec, cfg.gamma_grid[idx / b], idx % b);
        progress(idx, total);
        out
    });
    let outs = outs.into_iter().collect::<Result<Vec<_>>>()?;
    let methods = methods_for(cfg.design);
    let cells = cfg
        .gamma_grid
        .iter()
        .zip(outs.chunks(b.max(1)))
        .map(|(&gamma, chunk)| summarize(cfg.design, methods, gamma, chunk))
        .collect();
    Ok(SimulationReport {
        config: cfg.clone(),
        cells,
    })
}

fn summarize(design: Design, methods: &[Method], gamma: f64, chunk: &[Outcome1]) -> Cell {
    let b = chunk.len() as f64;
    let rejections = methods
        .iter()
        .map(|&m| {
            let k = chunk.iter().filter(|o| o.reject[m as usize]).count() as u64;
            let rate = k as f64 / b;
            Rejection {
                method: m,
                rejections: k,
                rate,
                mc_se: libm::sqrt(rate * (1.0 - rate) / b),
            }
        })
        .collect();
    let acc = |est: Estimator, f: fn(&Outcome1) -> f64| {
        let (mut s, mut s2) = (0.0, 0.0);
        for o in chunk {
            let e = f(o) - gamma;
            s += e;
            s2 += e * e;
        }
        Accuracy {
            estimator: est,
            bias: s / b,
            mse: s2 / b,
        }
    };
    let mut accuracy = vec![acc(Estimator::Ols, |o| o.gamma_hat)];
    let attrition = design == Design::Attrition;
    if attrition {
        accuracy.push(acc(Estimator::Ipw, |o| o.gamma_hat_ipw));
    }
    Cell {
        gamma,
        rejections,
        accuracy,
        respondent_ate: attrition.then(|| chunk.iter().map(|o| o.respondent_diff).sum::<f64>() / b),
        regenerations: chunk.iter().map(|o| u64::from(o.regenerations)).sum(),
    }
}

impl core::fmt::Display for Design {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::BaselineM1 => "baseline_m1",
            Self::BaselineM2 => "baseline_m2",
            Self::UnbalCovariate => "unbal_covariate",
            Self::UnbalTreatment => "unbal_treatment",
            Self::Attrition => "attrition",
        })
    }
}

/// Family label used in table headers.
pub fn family_label(e: &ErrorDistribution) -> String {
    e.family.name().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments_of(e: ErrorDistribution, n: usize) -> (f64, f64) {
        let mut rng = stream(11, &[e.family.name().len() as u64]);
        let xs: Vec<f64> = (0..n).map(|_| e.sample(&mut rng)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        (m, v)
    }

    #[test]
    fn standardized_families_have_unit_moments() {
        for name in ["normal", "student", "weibull", "lognormal"] {
            let e = ErrorDistribution::new(ErrorFamily::by_name(name).unwrap());
            let (m, v) = moments_of(e, 1_000_000);
            assert!(m.abs() < 0.01, "{name}: mean {m}");
            // Student(3) has infinite fourth moment; its sample variance
            // converges slowly, so it gets a looser band.
            let tol = if name == "student" { 0.1 } else { 0.01 };
            assert!((v - 1.0).abs() < tol, "{name}: var {v}");
        }
    }

    #[test]
    fn closed_form_moments() {
        let (m, s) = ErrorFamily::Weibull { shape: 1.5, scale: 1.0 }.moments().unwrap();
        // Γ(5/3) and Γ(7/3).
        assert!((m - 0.902_745_292_950_934).abs() < 1e-12);
        assert!((s * s - (1.190_639_348_758_998 - m * m)).abs() < 1e-12);
        let (m, s) = ErrorFamily::by_name("lognormal").unwrap().moments().unwrap();
        let e = core::f64::consts::E;
        assert!((m - libm::sqrt(e)).abs() < 1e-12);
        assert!((s * s - (e - 1.0) * e).abs() < 1e-12);
        assert!(ErrorFamily::Student { df: 2.0 }.moments().is_none());
    }

    #[test]
    fn cauchy_is_centered_at_its_median() {
        let e = ErrorDistribution::new(ErrorFamily::by_name("cauchy").unwrap());
        assert!(!e.scales());
        let mut rng = stream(3, &[]);
        let mut xs: Vec<f64> = (0..200_001).map(|_| e.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        assert!(xs[100_000].abs() < 0.005);
    }

    fn mean_diff(ds: &Dataset) -> f64 {
        let o = &ds.outcomes()[0];
        let (mut s, mut c) = ([0.0; 2], [0.0; 2]);
        for i in o.respondents() {
            let a = usize::from(ds.treatment()[i]);
            s[a] += o.values[i].unwrap();
            c[a] += 1.0;
        }
        s[1] / c[1] - s[0] / c[0]
    }

    #[test]
    fn baseline_difference_in_means_converges() {
        let mut cfg = SimulationConfig::new(Design::BaselineM1, 100_000, ErrorFamily::Normal);
        cfg.replications = 1;
        let ds = gen_design(&cfg, 0.8, 0).unwrap();
        assert!((mean_diff(&ds) - 0.8).abs() < 0.02);
    }

    #[test]
    fn unbalanced_treatment_share() {
        let mut cfg = SimulationConfig::new(Design::UnbalTreatment, 100_000, ErrorFamily::Normal);
        cfg.replications = 1;
        let ds = gen_design(&cfg, 0.0, 0).unwrap();
        let share = ds.treatment().iter().map(|&d| f64::from(d)).sum::<f64>() / 1e5;
        assert!((share - 0.3).abs() < 0.005, "{share}");
    }

    #[test]
    fn unbalanced_covariate_shift() {
        let mut cfg = SimulationConfig::new(Design::UnbalCovariate, 100_000, ErrorFamily::Normal);
        cfg.replications = 1;
        let ds = gen_design(&cfg, 0.0, 0).unwrap();
        let x = ds.covariate("X1").unwrap();
        let (mut s, mut c) = ([0.0; 2], [0.0; 2]);
        for (v, &d) in x.iter().zip(ds.treatment()) {
            s[usize::from(d)] += v;
            c[usize::from(d)] += 1.0;
        }
        assert!((s[1] / c[1] - 0.25).abs() < 0.04);
        assert!((s[0] / c[0] + 0.25).abs() < 0.04);
    }

    #[test]
    fn huge_intercept_removes_attrition() {
        let mut cfg = SimulationConfig::new(Design::Attrition, 500, ErrorFamily::Normal);
        cfg.attrition_coeffs = [1e6, 0.25, 3.75];
        cfg.replications = 1;
        let ds = gen_design(&cfg, 0.3, 0).unwrap();
        assert_eq!(ds.outcomes()[0].respondents().len(), 500);
    }

    #[test]
    fn attrition_drops_low_w() {
        let mut cfg = SimulationConfig::new(Design::Attrition, 20_000, ErrorFamily::Normal);
        cfg.replications = 1;
        let ds = gen_design(&cfg, 0.0, 0).unwrap();
        let o = &ds.outcomes()[0];
        let kept = o.respondents().len() as f64 / 20_000.0;
        // Average of Φ(α₀ / s) and Φ((α₀ + α₁) / s), s = √(1 + 3.75²): about 0.523.
        assert!((kept - 0.523).abs() < 0.015, "{kept}");
    }

    #[test]
    fn never_accepting_gives_up() {
        let mut cfg = SimulationConfig::new(Design::BaselineM1, 10, ErrorFamily::Normal);
        cfg.replications = 1;
        let err = gen_with(&cfg, 0.0, 0, 0, |_| false).unwrap_err();
        assert_eq!(err, Error::TooManyRegenerations(MAX_REGENERATIONS));
        assert!(gen_design(&cfg, 0.0, 1).is_err());
    }

    #[test]
    fn draws_are_keyed_by_cell() {
        let mut cfg = SimulationConfig::new(Design::BaselineM2, 30, ErrorFamily::Normal);
        cfg.replications = 3;
        let a = gen_design(&cfg, 0.2, 1).unwrap();
        assert_eq!(a, gen_design(&cfg, 0.2, 1).unwrap());
        assert_ne!(a, gen_design(&cfg, 0.2, 2).unwrap());
        cfg.gamma_grid.push(5.0);
        assert_eq!(a, gen_design(&cfg, 0.2, 1).unwrap());
    }

    #[test]
    fn small_run_is_reproducible_and_well_formed() {
        let mut cfg = SimulationConfig::new(Design::Attrition, 40, ErrorFamily::Normal);
        cfg.gamma_grid = vec![0.0, 0.8];
        cfg.replications = 12;
        cfg.np = 49;
        cfg.seed = 5;
        let a = run_simulation(&cfg, &Sequential).unwrap();
        assert_eq!(a, run_simulation(&cfg, &Sequential).unwrap());
        assert_eq!(a.cells.len(), 2);
        for c in &a.cells {
            assert_eq!(c.rejections.len(), 4);
            for r in &c.rejections {
                assert!((0.0..=1.0).contains(&r.rate));
                assert_eq!(r.rate, r.rejections as f64 / 12.0);
            }
            assert!(c.respondent_ate.is_some());
        }
    }

    #[test]
    fn power_increases_with_gamma() {
        let mut cfg = SimulationConfig::new(Design::BaselineM1, 40, ErrorFamily::Normal);
        cfg.gamma_grid = vec![0.0, 0.4, 0.8];
        cfg.replications = 150;
        cfg.np = 99;
        let rep = run_simulation(&cfg, &Sequential).unwrap();
        for w in rep.cells.windows(2) {
            let lo = &w[0].rejections[1];
            let hi = &w[1].rejections[1];
            assert!(hi.rate + 2.0 * (lo.mc_se + hi.mc_se) >= lo.rate);
        }
        assert!(rep.cells[2].rate(Method::Permutation).unwrap() > rep.cells[0].rate(Method::Permutation).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SimulationConfig::new(Design::BaselineM1, 20, ErrorFamily::Normal);
        cfg.gamma_grid = vec![-0.1];
        assert!(cfg.validate().is_err());
        let mut cfg = SimulationConfig::new(Design::BaselineM1, 20, ErrorFamily::Student { df: -1.0 });
        assert!(cfg.validate().is_err());
        cfg.error.family = ErrorFamily::Normal;
        cfg.scheme = Some(Scheme::Block);
        assert!(cfg.validate().is_err());
    }
}
