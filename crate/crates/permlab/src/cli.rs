//! `permlab test` and `permlab simulate`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use permlab_core::{
    run_permtest, run_simulation, Executor, Link, ModelSpec, PValueMode, PermutationPlan, Scheme, SeparationPolicy,
    StepdownMethod,
};

use crate::config::{self, OneOrMany, SimulationFile, DEFAULT_SEED};
use crate::csv_io::{load_csv, Filter};
use crate::exec::RayonExecutor;
use crate::report::{emit_permtest, emit_report, Format, SavedResults};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ANALYSIS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "permlab", version, about = "Permutation tests for treatment effects in linear models")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Permutation test on a CSV dataset.
    Test(TestArgs),
    /// Monte Carlo size and power study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SdMethod {
    Rw16,
    Rp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LinkArg {
    Probit,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PValueArg {
    Smoothed,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeparationArg {
    Fail,
    Truncate,
}

/// List flags take one or more values, space- or comma-separated; give the
/// data path before them.
#[derive(Debug, Args)]
pub struct TestArgs {
    /// CSV file with a header row.
    pub data: PathBuf,
    /// Outcome column (repeatable).
    #[arg(long = "outcome", alias = "depvar", required = true, num_args = 1.., value_delimiter = ',')]
    pub outcomes: Vec<String>,
    /// Binary treatment column.
    #[arg(long)]
    pub treat: String,
    /// Number of permutations.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub np: u64,
    /// Block variables; permutations stay within blocks.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub blockvars: Vec<String>,
    /// Linear-conditioning covariates (Freedman-Lane residual permutation).
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub lcvars: Vec<String>,
    /// Per-outcome IPW covariates as `K=VARS`; written `--ipwcovarsK VARS` on the command line.
    #[arg(long = "ipwcovars", value_name = "K=VARS", hide = true)]
    pub ipwcovars: Vec<String>,
    /// Stepdown method for multiple outcomes.
    #[arg(long, value_enum, default_value_t = SdMethod::Rw16)]
    pub sdmethod: SdMethod,
    /// Naive permutation of all rows (overrides --blockvars).
    #[arg(long)]
    pub naive: bool,
    /// Negate every outcome (tests the lower tail).
    #[arg(long)]
    pub reverse: bool,
    /// Heteroskedasticity-robust (HC1) standard errors.
    #[arg(long)]
    pub robust: bool,
    /// Link of the retention model.
    #[arg(long, value_enum, default_value_t = LinkArg::Probit)]
    pub link: LinkArg,
    /// Also report effects in control-group standard deviations.
    #[arg(long)]
    pub effsize: bool,
    /// Progress and fit details on stderr.
    #[arg(long)]
    pub verbose: bool,
    /// Write the full results (t* matrices, weights, permuted outcomes) as JSON.
    #[arg(long, alias = "savemat")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "PERMLAB_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Row filter `column op value`, op one of == != < <= > >=.
    #[arg(long = "where")]
    pub filter: Option<String>,
    #[arg(long = "pvalue", value_enum, default_value_t = PValueArg::Smoothed)]
    pub pvalue: PValueArg,
    /// Keep the observed retention weights instead of refitting per permutation.
    #[arg(long)]
    pub no_reestimate: bool,
    /// Response to a separated retention model.
    #[arg(long, value_enum, default_value_t = SeparationArg::Fail)]
    pub separation: SeparationArg,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML config with one key per setting; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub design: Option<String>,
    /// Sample sizes.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Treatment effects.
    #[arg(long = "gammas", alias = "gamma-grid", num_args = 1.., value_delimiter = ',')]
    pub gammas: Vec<f64>,
    /// Error families, or `all`.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub family: Vec<String>,
    /// Replications per cell (B).
    #[arg(long, alias = "B")]
    pub replications: Option<usize>,
    #[arg(long)]
    pub np: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, env = "PERMLAB_SEED")]
    pub seed: Option<u64>,
    /// Retention coefficients `a0,a1,a2`.
    #[arg(long, num_args = 3, value_delimiter = ',')]
    pub attrition: Vec<f64>,
    /// `default` or `illustrative`.
    #[arg(long)]
    pub attrition_preset: Option<String>,
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub link: Option<String>,
    #[arg(long)]
    pub separation: Option<String>,
    /// Redraw samples whose permutation refits exceed the failure budget.
    #[arg(long)]
    pub redraw_failed: bool,
    #[arg(long)]
    pub no_reestimate: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long)]
    pub verbose: bool,
}

/// Rewrites `--ipwcovarsK a b` and `--tipwcovarsK=a,b` into `--ipwcovars K=a,b`.
fn rewrite_ipw_flags(argv: Vec<OsString>) -> Vec<OsString> {
    let mut out = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter().peekable();
    while let Some(arg) = it.next() {
        let Some(s) = arg.to_str() else {
            out.push(arg);
            continue;
        };
        let body = s.strip_prefix("--tipwcovars").or_else(|| s.strip_prefix("--ipwcovars"));
        let Some(body) = body else {
            out.push(arg);
            continue;
        };
        let (k, inline) = match body.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (body, None),
        };
        if k.is_empty() || !k.bytes().all(|b| b.is_ascii_digit()) {
            out.push(arg);
            continue;
        }
        let mut values: Vec<String> = inline.into_iter().collect();
        while let Some(next) = it.peek() {
            match next.to_str() {
                Some(v) if !v.starts_with('-') => {
                    values.push(v.to_string());
                    it.next();
                }
                _ => break,
            }
        }
        out.push("--ipwcovars".into());
        out.push(format!("{k}={}", values.join(",")).into());
    }
    out
}

pub fn parse_args<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    Cli::try_parse_from(rewrite_ipw_flags(argv))
}

fn usage_error(msg: impl std::fmt::Display) -> clap::Error {
    use clap::CommandFactory;
    Cli::command().error(clap::error::ErrorKind::ValueValidation, msg)
}

fn ipw_lists(raw: &[String]) -> Result<Vec<Vec<String>>, clap::Error> {
    let mut lists: Vec<Vec<String>> = Vec::new();
    for item in raw {
        let (k, vars) = item
            .split_once('=')
            .ok_or_else(|| usage_error(format!("malformed IPW covariate list `{item}`")))?;
        let k: usize = k
            .parse()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| usage_error(format!("IPW list index `{k}` must be a positive integer")))?;
        let vars: Vec<String> = vars.split(',').filter(|v| !v.is_empty()).map(str::to_string).collect();
        if vars.is_empty() {
            return Err(usage_error(format!("--ipwcovars{k} needs at least one variable")));
        }
        if lists.len() < k {
            lists.resize(k, Vec::new());
        }
        lists[k - 1].extend(vars);
    }
    Ok(lists)
}

impl TestArgs {
    /// Model specification and permutation plan implied by the flags.
    pub fn to_spec(&self) -> Result<(ModelSpec, PermutationPlan), clap::Error> {
        let names: Vec<&str> = self.outcomes.iter().map(String::as_str).collect();
        let mut spec = ModelSpec::new(&names, &self.treat);
        spec.lc_names = self.lcvars.clone();
        spec.ipw_names = ipw_lists(&self.ipwcovars)?;
        spec.block_names = if self.naive { Vec::new() } else { self.blockvars.clone() };
        spec.robust = self.robust;
        spec.reverse = self.reverse;
        spec.effsize = self.effsize;
        spec.link = match self.link {
            LinkArg::Probit => Link::Probit,
            LinkArg::Logit => Link::Logit,
        };
        spec.sd_method = match self.sdmethod {
            SdMethod::Rw16 => StepdownMethod::Rw16,
            SdMethod::Rp => StepdownMethod::Rp,
        };
        spec.separation = match self.separation {
            SeparationArg::Fail => SeparationPolicy::Fail,
            SeparationArg::Truncate => SeparationPolicy::Truncate,
        };
        let scheme = if self.naive {
            Scheme::Naive
        } else if !spec.lc_names.is_empty() {
            Scheme::FreedmanLane
        } else if !spec.block_names.is_empty() {
            Scheme::Block
        } else {
            Scheme::Naive
        };
        let mut plan = PermutationPlan::new(self.np as usize, scheme, self.seed.unwrap_or(DEFAULT_SEED));
        plan.reestimate_ipw = !self.no_reestimate;
        plan.mode = match self.pvalue {
            PValueArg::Smoothed => PValueMode::Smoothed,
            PValueArg::Raw => PValueMode::Raw,
        };
        Ok((spec, plan))
    }
}

impl SimulateArgs {
    /// Config file (if any) with the inline flags laid over it.
    pub fn to_file(&self) -> Result<SimulationFile, String> {
        if self.config.is_none() && self.design.is_none() {
            return Err("simulate needs --config or --design".into());
        }
        let mut file = match &self.config {
            Some(p) => SimulationFile::read(p).map_err(|e| e.to_string())?,
            None => SimulationFile::default(),
        };
        let inline = SimulationFile {
            design: self.design.clone(),
            n: (!self.n.is_empty()).then(|| OneOrMany::Many(self.n.clone())),
            gamma_grid: (!self.gammas.is_empty()).then(|| self.gammas.clone()),
            family: (!self.family.is_empty()).then(|| OneOrMany::Many(self.family.clone())),
            replications: self.replications,
            np: self.np,
            alpha: self.alpha,
            attrition_coeffs: (self.attrition.len() == 3).then(|| [self.attrition[0], self.attrition[1], self.attrition[2]]),
            attrition_preset: self.attrition_preset.clone(),
            seed: self.seed,
            scheme: self.scheme.clone(),
            link: self.link.clone(),
            separation: self.separation.clone(),
            redraw_failed: self.redraw_failed.then_some(true),
            reestimate_ipw: self.no_reestimate.then_some(false),
            ..Default::default()
        };
        file.overlay(&inline);
        Ok(file)
    }
}

/// Wraps an executor and reports completed replicates on stderr.
struct Progress<'a, E> {
    inner: &'a E,
    label: &'a str,
}

impl<E: Executor> Executor for Progress<'_, E> {
    fn map_indexed<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let done = AtomicUsize::new(0);
        let step = (len / 100).max(1);
        self.inner.map_indexed(len, |i| {
            let out = f(i);
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            if k % step == 0 || k == len {
                eprintln!("{}: replicate {k}/{len}", self.label);
            }
            out
        })
    }
}

fn executor(threads: usize) -> Result<RayonExecutor, String> {
    RayonExecutor::new(threads).map_err(|e| format!("cannot start thread pool: {e}"))
}

fn run_test(args: &TestArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (spec, plan) = match args.to_spec() {
        Ok(v) => v,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return EXIT_USAGE;
        }
    };
    let filter = match args.filter.as_deref().map(str::parse::<Filter>).transpose() {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let fail = |err: &mut dyn Write, msg: String| {
        let _ = writeln!(err, "error: {msg}");
        EXIT_ANALYSIS
    };
    let ds = match load_csv(&args.data, &spec, filter.as_ref()) {
        Ok(ds) => ds,
        Err(e) => return fail(err, e.to_string()),
    };
    let pool = match executor(args.threads) {
        Ok(p) => p,
        Err(e) => return fail(err, e),
    };
    if args.verbose {
        let _ = writeln!(
            err,
            "{} rows, {} outcome(s), scheme {:?}, {} permutations, {} threads",
            ds.n_rows(),
            spec.outcome_names.len(),
            plan.scheme,
            plan.np,
            pool.threads()
        );
    }
    let res = if args.verbose {
        run_permtest(&ds, &spec, &plan, &Progress { inner: &pool, label: "test" })
    } else {
        run_permtest(&ds, &spec, &plan, &pool)
    };
    let res = match res {
        Ok(r) => r,
        Err(e) => return fail(err, e.to_string()),
    };
    if args.verbose {
        for (e, f) in res.estimates.iter().zip(&res.failed_replicates) {
            let _ = writeln!(
                err,
                "{}: {} respondents, ipw {}, {} failed replicates",
                e.outcome,
                e.respondents,
                if e.ipw_applied { "on" } else { "off" },
                f
            );
        }
    }
    if let Some(path) = &args.out {
        let saved = SavedResults::new(&res, &spec.treatment_name);
        let text = serde_json::to_string_pretty(&saved).expect("results serialize");
        if let Err(e) = std::fs::write(path, text + "\n") {
            return fail(err, format!("{}: {e}", path.display()));
        }
    }
    let _ = out.write_all(emit_permtest(&res, spec.effsize, args.format).as_bytes());
    EXIT_OK
}

fn run_simulate(args: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let file = match args.to_file() {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let configs = match file.expand() {
        Ok(c) => c,
        Err(e @ config::ConfigError::Unknown { .. }) | Err(e @ config::ConfigError::Invalid(_)) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ANALYSIS;
        }
    };
    let pool = match executor(args.threads) {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ANALYSIS;
        }
    };
    let mut reports = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let label = format!("{} n={} {}", cfg.design, cfg.n, cfg.error.family.name());
        let rep = if args.verbose {
            run_simulation(cfg, &Progress { inner: &pool, label: &label })
        } else {
            run_simulation(cfg, &pool)
        };
        match rep {
            Ok(r) => reports.push(r),
            Err(e) => {
                let _ = writeln!(err, "error: {label}: {e}");
                return EXIT_ANALYSIS;
            }
        }
    }
    let text = emit_report(&reports, args.format);
    match &args.output {
        Some(p) => {
            if let Err(e) = std::fs::write(p, text) {
                let _ = writeln!(err, "error: {}: {e}", p.display());
                return EXIT_ANALYSIS;
            }
        }
        None => {
            let _ = out.write_all(text.as_bytes());
        }
    }
    EXIT_OK
}

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match &cli.command {
        Command::Test(a) => run_test(a, out, err),
        Command::Simulate(a) => run_simulate(a, out, err),
    }
}

/// Parses `argv` and runs it, returning the process exit code.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    match parse_args(argv) {
        Ok(cli) => run(&cli, out, err),
        Err(e) => {
            use clap::error::ErrorKind::*;
            let text = e.render().to_string();
            match e.kind() {
                DisplayHelp | DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_args(argv: &[&str]) -> TestArgs {
        let mut full = vec!["permlab", "test"];
        full.extend_from_slice(argv);
        match parse_args(full).unwrap().command {
            Command::Test(a) => a,
            Command::Simulate(_) => unreachable!(),
        }
    }

    #[test]
    fn worked_example_invocation() {
        let a = test_args(&["data.csv", "--outcome", "y", "--treat", "D", "--np", "1000", "--ipwcovars1", "W"]);
        let (spec, plan) = a.to_spec().unwrap();
        assert_eq!(spec.outcome_names, vec!["y"]);
        assert_eq!(spec.ipw_names, vec![vec!["W".to_string()]]);
        assert_eq!(plan.np, 1000);
        assert_eq!(plan.scheme, Scheme::Naive);
        assert_eq!(spec.link, Link::Probit);
        assert_eq!(spec.sd_method, StepdownMethod::Rw16);
        assert_eq!(plan.mode, PValueMode::Smoothed);
    }

    #[test]
    fn naive_overrides_blocks() {
        let a = test_args(&["d.csv", "--outcome", "y", "--treat", "D", "--naive", "--blockvars", "g"]);
        let (spec, plan) = a.to_spec().unwrap();
        assert!(spec.block_names.is_empty());
        assert_eq!(plan.scheme, Scheme::Naive);
        let a = test_args(&["d.csv", "--outcome", "y", "--treat", "D", "--blockvars", "g"]);
        assert_eq!(a.to_spec().unwrap().1.scheme, Scheme::Block);
        let a = test_args(&["d.csv", "--outcome", "y", "--treat", "D", "--lcvars", "x"]);
        assert_eq!(a.to_spec().unwrap().1.scheme, Scheme::FreedmanLane);
    }

    #[test]
    fn ipw_lists_per_outcome_and_alias() {
        let a = test_args(&[
            "d.csv", "--outcome", "y1", "y2", "--treat", "D", "--tipwcovars1", "W", "Z", "--ipwcovars2=Q",
        ]);
        let (spec, _) = a.to_spec().unwrap();
        assert_eq!(spec.outcome_names, vec!["y1", "y2"]);
        assert_eq!(spec.ipw_names, vec![vec!["W".to_string(), "Z".to_string()], vec!["Q".to_string()]]);
    }

    #[test]
    fn usage_errors() {
        assert!(parse_args(["permlab", "test", "d.csv", "--outcome", "y"]).is_err());
        assert!(parse_args(["permlab", "test", "d.csv", "--outcome", "y", "--treat", "D", "--np", "x"]).is_err());
        assert!(parse_args(["permlab", "test", "d.csv", "--outcome", "y", "--treat", "D", "--np", "0"]).is_err());
        assert!(parse_args(["permlab", "test", "d.csv", "--outcome", "y", "--treat", "D", "--bogus"]).is_err());
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(main_with(["permlab"], &mut out, &mut err), EXIT_USAGE);
        assert!(!err.is_empty());
    }

    #[test]
    fn simulate_requires_design_or_config() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(main_with(["permlab", "simulate", "--np", "9"], &mut out, &mut err), EXIT_USAGE);
    }
}
