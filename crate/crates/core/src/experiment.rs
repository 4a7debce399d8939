//! Experiment harness behind the `flexq` binary: builds or loads a problem,
//! runs a list of named methods from a shared starting point, and writes one
//! CSV trace per run plus a JSON summary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directions::StrategySpec;
use crate::error::{Error, Result};
use crate::linops::{
    extremal_eigenvalues, generate_problem, initial_point, ProblemInstance, SpectrumInfo, Vector,
};
use crate::norms::NormSpec;
use crate::runner::{
    compute_bounds, run_flexible, run_nagm_with, verify_run, BaselineOptions, BoundReport,
    PrecondSpec, RunConfig, RunResult, Status, VerificationReport,
};
use crate::textio::{read_matrix, read_vector};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_N: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ProblemSource {
    Generate {
        seed: u64,
        m: usize,
        n: usize,
    },
    Files {
        matrix: PathBuf,
        rhs: PathBuf,
        #[serde(default)]
        solution: Option<PathBuf>,
        /// Seeds the shared initial point.
        #[serde(default)]
        seed: u64,
    },
}

impl ProblemSource {
    pub fn seed(&self) -> u64 {
        match self {
            Self::Generate { seed, .. } | Self::Files { seed, .. } => *seed,
        }
    }

    pub fn load(&self) -> Result<ProblemInstance> {
        match self {
            Self::Generate { seed, m, n } => generate_problem(*seed, *m, *n),
            Self::Files {
                matrix,
                rhs,
                solution,
                ..
            } => {
                let sol = solution.as_ref().map(read_vector).transpose()?;
                ProblemInstance::new(read_matrix(matrix)?, read_vector(rhs)?, sol)
            }
        }
    }
}

/// A framework run or the Nesterov baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Framework(RunConfig),
    Nagm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub name: String,
    /// Preset to start from; defaults to `name` when `config` is absent.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub config: Option<RunConfig>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitFlags {
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub json: bool,
    #[serde(default)]
    pub bounds: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self {
            csv: true,
            json: true,
            bounds: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    pub runs: Vec<RunEntry>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit: EmitFlags,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::InvalidArgument("at least one run is required".into()));
        }
        let mut seen = BTreeSet::new();
        for r in &self.runs {
            if r.name.is_empty()
                || r.name.contains(['/', '\\'])
                || r.name.starts_with('.')
            {
                return Err(Error::InvalidArgument(format!("bad run name `{}`", r.name)));
            }
            if !seen.insert(r.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate run name `{}`", r.name)));
            }
        }
        Ok(())
    }
}

/// The named method catalog. All presets use the identity preconditioner.
pub fn presets() -> Vec<(&'static str, Method)> {
    let ell = |e: f64| NormSpec::from_ell(e).expect("catalog ℓ values are valid");
    let fw = |strategy, norm, omega| {
        let mut c = RunConfig::new(strategy, norm);
        c.omega = omega;
        Method::Framework(c)
    };
    use StrategySpec::*;
    vec![
        ("sd", fw(GradientOnly, ell(0.0), 1.0)),
        ("mg", fw(GradientOnly, ell(0.5), 1.0)),
        ("cg", fw(GradPrevStep, ell(0.0), 1.0)),
        ("cr", fw(GradPrevStep, ell(0.5), 1.0)),
        ("cd1", fw(GradPrevStep, ell(1.0), 1.0)),
        ("forsythe2", fw(Forsythe { s: 2 }, ell(0.0), 1.0)),
        ("forsythe3", fw(Forsythe { s: 3 }, ell(0.0), 1.0)),
        ("forsythe4", fw(Forsythe { s: 4 }, ell(0.0), 1.0)),
        (
            "gdwgm",
            fw(GradPrevStep, NormSpec::gdwgm(0.5).expect("valid μ"), 1.0),
        ),
        ("gdrd", fw(GradRandom, ell(0.0), 0.95)),
        ("forsythe-mom", fw(ForsytheMomentum, ell(0.0), 1.0)),
        ("mom-rand", fw(MomentumRandom, ell(0.0), 1.0)),
        ("nagm", Method::Nagm),
    ]
}

pub fn preset(name: &str) -> Result<Method> {
    presets()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown preset `{name}`")))
}

/// Inline settings applied on top of every run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub omega: Option<f64>,
    /// Replaces the norm of runs using a pure `Ã^{2ℓ−1}` norm.
    pub ell: Option<f64>,
    /// Replaces every other norm with the GDWGM norm for this μ.
    pub mu: Option<f64>,
    pub precond: Option<PrecondSpec>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

impl Overrides {
    fn apply(&self, method: &mut Method) -> Result<()> {
        let Method::Framework(c) = method else {
            return Ok(());
        };
        if let Some(o) = self.omega {
            c.omega = o;
        }
        if c.norm.pure_ell().is_some() {
            if let Some(ell) = self.ell {
                c.norm = NormSpec::from_ell(ell)?;
            }
        } else if let Some(mu) = self.mu {
            c.norm = NormSpec::gdwgm(mu)?;
        }
        if let Some(p) = self.precond {
            c.precond = p;
        }
        if let Some(t) = self.tol {
            c.tol_grad_sq = t;
        }
        if let Some(m) = self.max_iter {
            c.max_iter = m;
        }
        Ok(())
    }

    fn baseline(&self) -> BaselineOptions {
        let d = BaselineOptions::default();
        BaselineOptions {
            tol_grad_sq: self.tol.unwrap_or(d.tol_grad_sq),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            record_iterates: false,
        }
    }
}

/// One resolved run: name and method with overrides applied.
pub fn resolve_runs(config: &ExperimentConfig, overrides: &Overrides) -> Result<Vec<(String, Method)>> {
    config.validate()?;
    let seed = config.problem.seed();
    config
        .runs
        .iter()
        .map(|entry| {
            let mut method = match (&entry.config, &entry.preset) {
                (Some(c), _) => Method::Framework(c.clone()),
                (None, Some(p)) => preset(p)?,
                (None, None) => preset(&entry.name)?,
            };
            if let Method::Framework(c) = &mut method {
                if entry.config.is_none() {
                    c.seed = seed;
                }
                c.record_bounds |= config.emit.bounds;
            }
            overrides.apply(&mut method)?;
            if let Method::Framework(c) = &method {
                c.validate()?;
            }
            Ok((entry.name.clone(), method))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub iterations: usize,
    pub final_f_gap: f64,
    pub final_grad_norm_sq: f64,
    /// `None` for the Nesterov baseline.
    pub config: Option<RunConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub problem: ProblemSource,
    pub n: usize,
    pub kappa: f64,
    pub runs: Vec<RunSummary>,
}

impl ExperimentSummary {
    pub fn any_numerical_failure(&self) -> bool {
        self.runs.iter().any(|r| r.status == Status::NumericalFailure)
    }
}

pub struct ExperimentOutput {
    pub summary: ExperimentSummary,
    pub results: Vec<(String, RunResult)>,
}

fn execute(
    problem: &ProblemInstance,
    spectrum: &SpectrumInfo,
    x0: &Vector,
    name: &str,
    method: &Method,
    overrides: &Overrides,
    want_bounds: bool,
) -> Result<(RunSummary, RunResult)> {
    let (result, config, bounds, verification) = match method {
        Method::Nagm => {
            let r = run_nagm_with(problem, x0, spectrum, &overrides.baseline())?;
            (r, None, None, None)
        }
        Method::Framework(c) => {
            let r = run_flexible(problem, c, x0)?;
            let (b, v) = if want_bounds {
                let spec = extremal_eigenvalues(problem, &c.precond.build(problem))?;
                let b = compute_bounds(&spec, c.omega, &c.norm, r.trace[0].f_gap, c.tol_grad_sq)?;
                let v = verify_run(&r, &b, c);
                (Some(b), Some(v))
            } else {
                (None, None)
            };
            (r, Some(c.clone()), b, v)
        }
    };
    let last = result.final_record();
    let summary = RunSummary {
        name: name.to_owned(),
        status: result.status,
        message: result.message.clone(),
        iterations: result.iterations,
        final_f_gap: last.f_gap,
        final_grad_norm_sq: last.grad_norm_sq,
        config,
        bounds,
        verification,
    };
    Ok((summary, result))
}

/// Runs every entry (in parallel) and writes the requested outputs.
pub fn run_experiment(config: &ExperimentConfig, overrides: &Overrides) -> Result<ExperimentOutput> {
    let runs = resolve_runs(config, overrides)?;
    let problem = config.problem.load()?;
    let n = problem.dim();
    let x0 = initial_point(config.problem.seed(), n);
    let spectrum = extremal_eigenvalues(&problem, &crate::linops::Preconditioner::Identity)?;

    let outcomes: Vec<(RunSummary, RunResult)> = runs
        .par_iter()
        .map(|(name, m)| execute(&problem, &spectrum, &x0, name, m, overrides, config.emit.bounds))
        .collect::<Result<_>>()?;

    let dir = &config.output_dir;
    if config.emit.csv || config.emit.json {
        fs::create_dir_all(dir)?;
    }
    if config.emit.csv {
        for (s, r) in &outcomes {
            fs::write(dir.join(format!("{}.csv", s.name)), r.to_csv())?;
        }
    }
    let (summaries, results): (Vec<_>, Vec<_>) = outcomes
        .into_iter()
        .map(|(s, r)| {
            let name = s.name.clone();
            (s, (name, r))
        })
        .unzip();
    let summary = ExperimentSummary {
        problem: config.problem.clone(),
        n,
        kappa: spectrum.kappa,
        runs: summaries,
    };
    if config.emit.json {
        let text = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Parse(format!("summary serialization: {e}")))?;
        fs::write(dir.join("summary.json"), text + "\n")?;
    }
    Ok(ExperimentOutput { summary, results })
}


#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PrecondArg {
    Identity,
    Jacobi,
}

/// Benchmark harness for multi-direction gradient methods on random or
/// file-based SPD quadratics.
#[derive(Debug, Parser)]
#[command(name = "flexq", version)]
pub struct Cli {
    /// JSON experiment config; inline flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generate a random problem `A = BᵀB`, `B` uniform on [0, 1).
    #[arg(long)]
    pub generate: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rows of `B` (default ⌈1.2·n⌉).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Method to run; repeatable. Replaces the config's run list.
    #[arg(long = "preset")]
    pub presets: Vec<String>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub ell: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, value_enum)]
    pub precond: Option<PrecondArg>,
    /// Stop once ‖g‖₂² falls below this (default 1e-6).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap (default 1000).
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record and check the theoretical bounds for every run.
    #[arg(long)]
    pub bounds: bool,
    /// List the preset names and exit.
    #[arg(long)]
    pub list_presets: bool,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            omega: self.omega,
            ell: self.ell,
            mu: self.mu,
            precond: self.precond.map(|p| match p {
                PrecondArg::Identity => PrecondSpec::Identity,
                PrecondArg::Jacobi => PrecondSpec::Jacobi,
            }),
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    /// Merges the config file (if any) with the inline flags.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => {
                if !self.generate {
                    return Err(Error::InvalidArgument(
                        "either --config or --generate is required".into(),
                    ));
                }
                ExperimentConfig {
                    problem: ProblemSource::Generate {
                        seed: DEFAULT_SEED,
                        m: 0,
                        n: DEFAULT_N,
                    },
                    runs: vec![],
                    output_dir: PathBuf::from("flexq-out"),
                    emit: EmitFlags::default(),
                }
            }
        };
        let from_flags = self.config.is_none();
        if self.generate || self.seed.is_some() || self.m.is_some() || self.n.is_some() {
            cfg.problem = match cfg.problem {
                ProblemSource::Generate { seed, m, n } => {
                    let n = self.n.unwrap_or(n);
                    let m = match self.m {
                        Some(m) => m,
                        None if from_flags || self.n.is_some() => (n * 6).div_ceil(5),
                        None => m,
                    };
                    ProblemSource::Generate {
                        seed: self.seed.unwrap_or(seed),
                        m,
                        n,
                    }
                }
                ProblemSource::Files { .. } if self.generate => ProblemSource::Generate {
                    seed: self.seed.unwrap_or(DEFAULT_SEED),
                    n: self.n.unwrap_or(DEFAULT_N),
                    m: self
                        .m
                        .unwrap_or_else(|| (self.n.unwrap_or(DEFAULT_N) * 6).div_ceil(5)),
                },
                ProblemSource::Files {
                    matrix,
                    rhs,
                    solution,
                    seed,
                } => ProblemSource::Files {
                    matrix,
                    rhs,
                    solution,
                    seed: self.seed.unwrap_or(seed),
                },
            };
        }
        if !self.presets.is_empty() {
            cfg.runs = self
                .presets
                .iter()
                .map(|p| RunEntry {
                    name: p.clone(),
                    preset: None,
                    config: None,
                })
                .collect();
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.emit.bounds |= self.bounds;
        Ok(cfg)
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if cli.list_presets {
        for (name, _) in presets() {
            println!("{name}");
        }
        return EXIT_OK;
    }
    let outcome = cli
        .experiment()
        .and_then(|cfg| run_experiment(&cfg, &cli.overrides()).map(|o| (cfg, o)));
    match outcome {
        Ok((cfg, out)) => {
            for r in &out.summary.runs {
                let verdict = match &r.verification {
                    Some(v) if v.passed() => "  bounds ok",
                    Some(_) => "  BOUNDS VIOLATED",
                    None => "",
                };
                println!(
                    "{:<14} {:?} after {} iterations, f_gap {:e}{}",
                    r.name, r.status, r.iterations, r.final_f_gap, verdict
                );
            }
            if cfg.emit.csv || cfg.emit.json {
                println!("wrote {}", cfg.output_dir.display());
            }
            if out.summary.any_numerical_failure() {
                EXIT_NUMERICAL
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("flexq: {e}");
            match e {
                Error::DegenerateSystem | Error::NormNotPositive { .. } => EXIT_NUMERICAL,
                _ => EXIT_CONFIG,
            }
        }
    }
}
