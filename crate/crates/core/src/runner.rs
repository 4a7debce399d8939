//! The relaxed, preconditioned multi-direction iteration, its trace, the
//! theoretical bounds that apply to it, and textbook baselines (CG, CR,
//! Nesterov) implemented independently for cross-checking.
//!
//! The loop runs in the original variable: with `z = P⁻ᵀx` the update
//! `x_{k+1} = x_k − ω P⁻¹W_k a_k` becomes `z_{k+1} = z_k − ω P⁻ᵀP⁻¹W_k a_k`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::directions::{make_directions, BuiltinStrategy, DirectionStrategy, StrategySpec};
use crate::error::{check_dim, Error, Result};
use crate::linops::{
    extremal_eigenvalues, PrecondOperator, Preconditioner, ProblemInstance, SpectrumInfo, Vector,
};
use crate::norms::{shifted_poly_apply, weighted_norm_sq, NormSpec};
use crate::stepsolver::{flexible_step, stationarity_residual, theta_step, DEFAULT_REL_CUTOFF};

/// Additive slack on every bound check; covers roundoff only.
pub const BOUND_SLACK: f64 = 1e-10;

pub const DEFAULT_TOL_GRAD_SQ: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrecondSpec {
    #[default]
    Identity,
    /// `P_ii = A_ii`.
    Jacobi,
    /// `P_ii = √A_ii`.
    JacobiSqrt,
}

impl PrecondSpec {
    pub fn build(&self, problem: &ProblemInstance) -> Preconditioner {
        match self {
            Self::Identity => Preconditioner::Identity,
            Self::Jacobi => Preconditioner::jacobi(problem),
            Self::JacobiSqrt => Preconditioner::jacobi_sqrt(problem),
        }
    }
}

fn default_omega() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    DEFAULT_TOL_GRAD_SQ
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn default_cutoff() -> f64 {
    DEFAULT_REL_CUTOFF
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub strategy: StrategySpec,
    pub norm: NormSpec,
    #[serde(default)]
    pub precond: PrecondSpec,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_tol")]
    pub tol_grad_sq: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record_bounds: bool,
    #[serde(default)]
    pub record_iterates: bool,
    #[serde(default = "default_cutoff")]
    pub rel_cutoff: f64,
}

impl RunConfig {
    pub fn new(strategy: StrategySpec, norm: NormSpec) -> Self {
        Self {
            strategy,
            norm,
            precond: PrecondSpec::Identity,
            omega: 1.0,
            tol_grad_sq: DEFAULT_TOL_GRAD_SQ,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
            record_bounds: false,
            record_iterates: false,
            rel_cutoff: DEFAULT_REL_CUTOFF,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "omega must lie in the open interval (0, 2), got {}",
                self.omega
            )));
        }
        if !(self.tol_grad_sq > 0.0) {
            return Err(Error::InvalidArgument("tol_grad_sq must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        if !(self.rel_cutoff > 0.0 && self.rel_cutoff < 1.0) {
            return Err(Error::InvalidArgument("rel_cutoff must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    NumericalFailure,
}

/// Quantities recomputed at each step for the theory checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    /// Single-direction step of the matching ℓ-MGD method.
    pub theta: f64,
    /// `‖g̃‖²_N − ‖g̃ − ωÃP⁻¹Wa‖²_N`.
    pub flex_decrease: f64,
    /// `‖g̃‖²_N − ‖g̃ − ωθÃg̃‖²_N`.
    pub theta_decrease: f64,
    pub stationarity: f64,
    pub truncated_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    pub f_gap: f64,
    pub grad_norm_sq: f64,
    pub weighted_gnorm_sq: f64,
    /// Number of directions used to leave `z_k` (0 on the final record).
    pub m_k: usize,
    pub a_k: Vec<f64>,
    pub contraction_ratio: Option<f64>,
    /// `‖x_k − x*‖²` in the `Ã N Ã` norm, computed from `z − z*`.
    pub error_norm_sq: Option<f64>,
    pub diagnostics: Option<StepDiagnostics>,
}

impl TraceRecord {
    fn new(k: usize, f_gap: f64, grad_norm_sq: f64, weighted: f64, prev: Option<f64>) -> Self {
        Self {
            k,
            f_gap,
            grad_norm_sq,
            weighted_gnorm_sq: weighted,
            m_k: 0,
            a_k: vec![],
            contraction_ratio: prev.filter(|p| *p > 0.0).map(|p| weighted / p),
            error_norm_sq: None,
            diagnostics: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub status: Status,
    pub message: Option<String>,
    /// Number of updates performed; the trace has `iterations + 1` rows.
    pub iterations: usize,
    pub trace: Vec<TraceRecord>,
    pub final_z: Vector,
    pub iterates: Option<Vec<Vector>>,
}

pub const CSV_HEADER: &str = "k,f_gap,grad_norm_sq,weighted_gnorm_sq,m_k,contraction_ratio";

impl RunResult {
    pub fn final_record(&self) -> &TraceRecord {
        self.trace.last().expect("trace always has the k = 0 record")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.trace.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.trace {
            let ratio = r.contraction_ratio.map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{},{}",
                r.k, r.f_gap, r.grad_norm_sq, r.weighted_gnorm_sq, r.m_k, ratio
            );
        }
        out
    }
}

struct Recorder {
    trace: Vec<TraceRecord>,
    iterates: Option<Vec<Vector>>,
}

impl Recorder {
    fn new(record_iterates: bool) -> Self {
        Self {
            trace: vec![],
            iterates: record_iterates.then(Vec::new),
        }
    }

    fn prev_weighted(&self) -> Option<f64> {
        self.trace.last().map(|r| r.weighted_gnorm_sq)
    }

    fn push(&mut self, rec: TraceRecord, z: &Vector) {
        self.trace.push(rec);
        if let Some(it) = &mut self.iterates {
            it.push(z.clone());
        }
    }

    fn finish(self, status: Status, message: Option<String>, z: Vector) -> RunResult {
        RunResult {
            status,
            message,
            iterations: self.trace.len() - 1,
            trace: self.trace,
            final_z: z,
            iterates: self.iterates,
        }
    }
}

/// Runs a built-in strategy with the preconditioner named in `config`.
pub fn run_flexible(problem: &ProblemInstance, config: &RunConfig, x0: &Vector) -> Result<RunResult> {
    let precond = config.precond.build(problem);
    let mut strategy = BuiltinStrategy::new(config.strategy, config.seed);
    run_flexible_with(problem, &precond, config, x0, &mut strategy)
}

/// Runs any direction strategy with an explicit preconditioner.
/// `config.strategy` and `config.precond` are ignored here.
pub fn run_flexible_with(
    problem: &ProblemInstance,
    precond: &Preconditioner,
    config: &RunConfig,
    x0: &Vector,
    strategy: &mut dyn DirectionStrategy,
) -> Result<RunResult> {
    config.validate()?;
    config.strategy.validate(problem.dim())?;
    check_dim(problem.dim(), x0.len())?;
    let op = PrecondOperator::new(problem, precond)?;
    let norm = &config.norm;
    if !norm.positive_everywhere() {
        norm.check_positive_on(&extremal_eigenvalues(problem, precond)?)?;
    }
    let z_star = problem.solution();
    let omega = config.omega;

    let mut rec = Recorder::new(config.record_iterates);
    let mut z = x0.clone();
    for k in 0.. {
        let g = problem.gradient(&z)?;
        let gt = precond.apply_inv(&g, false)?;
        let weighted = weighted_norm_sq(norm, &op, &gt)?;
        let gns = g.norm_squared();
        let mut record = TraceRecord::new(
            k,
            problem.f_gap(&z, &z_star)?,
            gns,
            weighted,
            rec.prev_weighted(),
        );
        if !(gns.is_finite() && weighted.is_finite()) {
            rec.push(record, &z);
            return Ok(rec.finish(
                Status::NumericalFailure,
                Some("non-finite gradient".into()),
                z,
            ));
        }
        if config.record_bounds {
            let err = precond.apply_inv(&(problem.matrix() * (&z - &z_star)), false)?;
            record.error_norm_sq = Some(weighted_norm_sq(norm, &op, &err)?);
        }
        if gns < config.tol_grad_sq {
            rec.push(record, &z);
            return Ok(rec.finish(Status::Converged, None, z));
        }
        if k == config.max_iter {
            rec.push(record, &z);
            return Ok(rec.finish(Status::MaxIterations, None, z));
        }

        let w = make_directions(strategy, problem, &z, &g);
        let step = match flexible_step(&op, norm, &w, &gt, config.rel_cutoff) {
            Ok(s) => s,
            Err(Error::DegenerateSystem) => {
                rec.push(record, &z);
                return Ok(rec.finish(
                    Status::NumericalFailure,
                    Some("degenerate step system".into()),
                    z,
                ));
            }
            Err(e) => return Err(e),
        };
        record.m_k = w.ncols();
        record.a_k = step.a.iter().copied().collect();

        if config.record_bounds {
            // both decreases go through the same arithmetic so their rounding matches
            let decrease = |d: &Vector| -> Result<f64> {
                let md = shifted_poly_apply(norm, &op, d)?;
                let ad = op.apply(d)?;
                Ok(2.0 * omega * md.dot(&gt) - omega * omega * md.dot(&ad))
            };
            let theta = theta_step(norm, &op, &gt)?;
            record.diagnostics = Some(StepDiagnostics {
                theta,
                flex_decrease: decrease(&step.direction)?,
                theta_decrease: decrease(&(&gt * theta))?,
                stationarity: stationarity_residual(&op, norm, &w, &gt, &step)?,
                truncated_rank: step.truncated_rank,
            });
        }

        let z_next = &z - precond.apply_inv(&step.direction, true)? * omega;
        strategy.advance(&z, &g);
        rec.push(record, &z);
        z = z_next;
    }
    unreachable!("loop exits through max_iter")
}

/// Rate constants and iteration bound for a spectrum and relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub c_omega: f64,
    pub corollary_rate: f64,
    /// Iterations sufficient for `f − f* ≤ eps`; only for pure `Ã^{2ℓ−1}` norms.
    pub k_bound: Option<f64>,
    pub kappa_tilde: f64,
    pub omega: f64,
    pub eps: f64,
}

/// `c(ω) = 1 − ω(2−ω)·4κ̃/(κ̃+1)²`.
pub fn contraction_factor(kappa: f64, omega: f64) -> f64 {
    1.0 - omega * (2.0 - omega) * 4.0 * kappa / ((kappa + 1.0) * (kappa + 1.0))
}

pub fn compute_bounds(
    spectrum: &SpectrumInfo,
    omega: f64,
    norm: &NormSpec,
    f0_gap: f64,
    eps: f64,
) -> Result<BoundReport> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(Error::InvalidArgument(format!("omega {omega} outside (0, 2)")));
    }
    let kappa = spectrum.kappa;
    let k_bound = norm.pure_ell().map(|ell| {
        let log_arg = kappa.powf(2.0 * ell) * f0_gap / eps;
        let k = (kappa + 1.0).powi(2) / (4.0 * kappa) * log_arg.ln() / (omega * (2.0 - omega));
        k.max(0.0)
    });
    Ok(BoundReport {
        c_omega: contraction_factor(kappa, omega),
        corollary_rate: ((kappa - 1.0) / (kappa + 1.0)).powi(2),
        k_bound,
        kappa_tilde: kappa,
        omega,
        eps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Largest violation-direction margin seen (≤ 0 means comfortably inside).
    pub worst_margin: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tally {
    name: &'static str,
    worst: f64,
    checked: usize,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            worst: f64::NEG_INFINITY,
            checked: 0,
        }
    }

    /// `margin > 0` is a violation.
    fn see(&mut self, margin: f64) {
        self.checked += 1;
        if margin.is_nan() {
            self.worst = f64::INFINITY;
        } else {
            self.worst = self.worst.max(margin);
        }
    }

    fn done(self) -> CheckOutcome {
        CheckOutcome {
            name: self.name,
            passed: self.worst <= 0.0,
            worst_margin: if self.checked == 0 { 0.0 } else { self.worst },
            checked: self.checked,
        }
    }
}

/// Checks a bound-recording run against the theory:
///
/// - `contraction`: each weighted-gradient ratio is at most `c(ω)`;
/// - `corollary` (ω = 1 only): ratios at most `((κ̃−1)/(κ̃+1))²`;
/// - `envelope`: `‖g̃_k‖²_N ≤ c(ω)^k ‖g̃_0‖²_N`;
/// - `domination`: the multi-direction step decreases the weighted norm at
///   least as much as the single-direction θ step;
/// - `stationarity`: first-order optimality of the sub-step sizes;
/// - `error_decay`: `‖x_k − x*‖²` in the `ÃNÃ` norm stays under `c(ω)^k`
///   times its initial value;
/// - `f_gap_bound` (pure powers): `f_k − f* ≤ κ̃^{2ℓ} c(ω)^k (f_0 − f*)`;
/// - `complexity` (pure powers): `f − f* ≤ eps` is reached no later than
///   `⌈K⌉`.
pub fn verify_run(result: &RunResult, bounds: &BoundReport, config: &RunConfig) -> VerificationReport {
    let c = bounds.c_omega;
    let first = &result.trace[0];
    let w0 = first.weighted_gnorm_sq;

    let mut contraction = Tally::new("contraction");
    let mut corollary = Tally::new("corollary");
    let mut envelope = Tally::new("envelope");
    let mut domination = Tally::new("domination");
    let mut stationarity = Tally::new("stationarity");
    let mut error_decay = Tally::new("error_decay");
    let mut f_gap_bound = Tally::new("f_gap_bound");
    let mut complexity = Tally::new("complexity");

    let ell = config.norm.pure_ell();
    let unrelaxed = (config.omega - 1.0).abs() < f64::EPSILON;

    for r in &result.trace {
        if let Some(ratio) = r.contraction_ratio {
            contraction.see(ratio - c - BOUND_SLACK);
            if unrelaxed {
                corollary.see(ratio - bounds.corollary_rate - BOUND_SLACK);
            }
        }
        let ck = c.powi(r.k as i32);
        envelope.see(r.weighted_gnorm_sq - ck * w0 - BOUND_SLACK * w0);
        if let Some(d) = &r.diagnostics {
            let scale = r.weighted_gnorm_sq;
            domination.see((d.theta_decrease - d.flex_decrease) / scale - BOUND_SLACK);
            stationarity.see(d.stationarity - BOUND_SLACK);
        }
        if let (Some(e), Some(e0)) = (r.error_norm_sq, first.error_norm_sq) {
            error_decay.see(e - ck * e0 - BOUND_SLACK * e0);
        }
        if let Some(ell) = ell {
            let amp = bounds.kappa_tilde.powf(2.0 * ell) * first.f_gap;
            f_gap_bound.see(r.f_gap - ck * amp - BOUND_SLACK * amp);
        }
    }

    if let (Some(_), Some(k_bound)) = (ell, bounds.k_bound) {
        let limit = k_bound.ceil();
        let reached = result.trace.iter().find(|r| r.f_gap <= bounds.eps);
        // not reaching eps only counts once the run has gone past the bound
        let k = reached.map_or(result.iterations, |r| r.k);
        complexity.see(k as f64 - limit);
    }

    VerificationReport {
        checks: vec![
            contraction.done(),
            corollary.done(),
            envelope.done(),
            domination.done(),
            stationarity.done(),
            error_decay.done(),
            f_gap_bound.done(),
            complexity.done(),
        ],
    }
}

/// Stopping options shared by the baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    pub tol_grad_sq: f64,
    pub max_iter: usize,
    pub record_iterates: bool,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            tol_grad_sq: DEFAULT_TOL_GRAD_SQ,
            max_iter: DEFAULT_MAX_ITER,
            record_iterates: false,
        }
    }
}

enum Stop {
    Continue,
    Done(Status),
}

fn baseline_record(
    rec: &mut Recorder,
    problem: &ProblemInstance,
    z_star: &Vector,
    z: &Vector,
    g: &Vector,
    weighted: impl Fn(f64, f64) -> f64,
    k: usize,
    opts: &BaselineOptions,
) -> Result<Stop> {
    let gap = problem.f_gap(z, z_star)?;
    let gns = g.norm_squared();
    let record = TraceRecord::new(k, gap, gns, weighted(gap, gns), rec.prev_weighted());
    rec.push(record, z);
    Ok(if !gns.is_finite() {
        Stop::Done(Status::NumericalFailure)
    } else if gns < opts.tol_grad_sq {
        Stop::Done(Status::Converged)
    } else if k == opts.max_iter {
        Stop::Done(Status::MaxIterations)
    } else {
        Stop::Continue
    })
}

/// Textbook conjugate gradients: `z_{k+1} = z_k + α_k d_k`,
/// `d_k = −g_k + β_{k−1} d_{k−1}`, `α_k = −d_kᵀg_k / d_kᵀAd_k`,
/// `β_{k−1} = d_{k−1}ᵀAg_k / d_{k−1}ᵀAd_{k−1}`.
pub fn run_textbook_cg(problem: &ProblemInstance, x0: &Vector, opts: &BaselineOptions) -> Result<RunResult> {
    run_cg(problem, x0, opts, None)
}

/// Conjugate gradients restarted from steepest descent every `restart`
/// iterations.
pub fn run_restarted_cg(
    problem: &ProblemInstance,
    x0: &Vector,
    restart: usize,
    opts: &BaselineOptions,
) -> Result<RunResult> {
    if restart == 0 {
        return Err(Error::InvalidArgument("restart period must be positive".into()));
    }
    run_cg(problem, x0, opts, Some(restart))
}

fn run_cg(
    problem: &ProblemInstance,
    x0: &Vector,
    opts: &BaselineOptions,
    restart: Option<usize>,
) -> Result<RunResult> {
    check_dim(problem.dim(), x0.len())?;
    let a = problem.matrix();
    let z_star = problem.solution();
    let mut rec = Recorder::new(opts.record_iterates);
    let mut z = x0.clone();
    let mut prev_d: Option<(Vector, Vector)> = None;
    for k in 0.. {
        let g = problem.gradient(&z)?;
        if let Stop::Done(status) =
            baseline_record(&mut rec, problem, &z_star, &z, &g, |gap, _| 2.0 * gap, k, opts)?
        {
            return Ok(rec.finish(status, None, z));
        }
        let restart_now = restart.is_some_and(|s| k % s == 0);
        let d = match (&prev_d, restart_now) {
            (Some((d_prev, ad_prev)), false) => {
                let beta = ad_prev.dot(&g) / d_prev.dot(ad_prev);
                -&g + d_prev * beta
            }
            _ => -&g,
        };
        let ad = a * &d;
        let alpha = -d.dot(&g) / d.dot(&ad);
        if let Some(last) = rec.trace.last_mut() {
            last.m_k = if prev_d.is_some() && !restart_now { 2 } else { 1 };
            last.a_k = vec![alpha];
        }
        z.axpy(alpha, &d, 1.0);
        prev_d = Some((d, ad));
    }
    unreachable!()
}

/// Textbook conjugate residuals (minimizes `‖g‖₂` over the Krylov space).
pub fn run_textbook_cr(problem: &ProblemInstance, x0: &Vector, opts: &BaselineOptions) -> Result<RunResult> {
    check_dim(problem.dim(), x0.len())?;
    let a = problem.matrix();
    let z_star = problem.solution();
    let mut rec = Recorder::new(opts.record_iterates);
    let mut z = x0.clone();
    // residual r = b − Az = −g
    let mut state: Option<(Vector, Vector, f64)> = None; // (p, Ap, rᵀAr)
    for k in 0.. {
        let g = problem.gradient(&z)?;
        if let Stop::Done(status) =
            baseline_record(&mut rec, problem, &z_star, &z, &g, |_, gns| gns, k, opts)?
        {
            return Ok(rec.finish(status, None, z));
        }
        let r = -g;
        let ar = a * &r;
        let rar = r.dot(&ar);
        let (p, ap) = match state {
            None => (r.clone(), ar.clone()),
            Some((p, ap, rar_prev)) => {
                let beta = rar / rar_prev;
                (&r + p * beta, &ar + ap * beta)
            }
        };
        let alpha = rar / ap.dot(&ap);
        if let Some(last) = rec.trace.last_mut() {
            last.m_k = if k == 0 { 1 } else { 2 };
            last.a_k = vec![alpha];
        }
        z.axpy(alpha, &p, 1.0);
        state = Some((p, ap, rar));
    }
    unreachable!()
}

/// Nesterov's accelerated gradient in single-sequence form with constant
/// `L = λ₁` and `β = (√λ₁ − √λₙ)/(√λ₁ + √λₙ)`:
/// `z_{k+1} = z_k − g_k/L + β(z_k − z_{k−1}) + (β/L)(g_{k−1} − g_k)`.
pub fn run_nagm(problem: &ProblemInstance, x0: &Vector, opts: &BaselineOptions) -> Result<RunResult> {
    let spec = extremal_eigenvalues(problem, &Preconditioner::Identity)?;
    run_nagm_with(problem, x0, &spec, opts)
}

pub fn run_nagm_with(
    problem: &ProblemInstance,
    x0: &Vector,
    spectrum: &SpectrumInfo,
    opts: &BaselineOptions,
) -> Result<RunResult> {
    check_dim(problem.dim(), x0.len())?;
    let l = spectrum.lambda_max;
    let (s1, sn) = (spectrum.lambda_max.sqrt(), spectrum.lambda_min.sqrt());
    let beta = (s1 - sn) / (s1 + sn);
    let z_star = problem.solution();
    let mut rec = Recorder::new(opts.record_iterates);
    let mut z = x0.clone();
    let mut prev: Option<(Vector, Vector)> = None;
    for k in 0.. {
        let g = problem.gradient(&z)?;
        if let Stop::Done(status) =
            baseline_record(&mut rec, problem, &z_star, &z, &g, |gap, _| 2.0 * gap, k, opts)?
        {
            return Ok(rec.finish(status, None, z));
        }
        let mut next = &z - &g / l;
        if let Some((z_prev, g_prev)) = &prev {
            next += (&z - z_prev) * beta + (g_prev - &g) * (beta / l);
        }
        if let Some(last) = rec.trace.last_mut() {
            last.m_k = if prev.is_some() { 3 } else { 1 };
            last.a_k = vec![1.0 / l, beta, beta / l];
        }
        prev = Some((z, g));
        z = next;
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{generate_problem, generate_with_spectrum, initial_point, Matrix};
    use approx::assert_relative_eq;

    fn cfg(strategy: StrategySpec, ell: f64) -> RunConfig {
        RunConfig::new(strategy, NormSpec::from_ell(ell).unwrap())
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(StrategySpec::GradientOnly, 0.0);
        c.validate().unwrap();
        for bad in [0.0, 2.0, -1.0, f64::NAN] {
            c.omega = bad;
            assert!(c.validate().is_err(), "omega {bad}");
        }
        let json = r#"{"strategy": {"kind": "gradient_only"}, "norm": {"ell": 0}}"#;
        let c: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.omega, 1.0);
        assert_eq!(c.max_iter, 1000);
        assert_eq!(c.tol_grad_sq, 1e-6);
    }

    #[test]
    fn identity_hessian_converges_in_one_step() {
        let b = Vector::from_column_slice(&[1.0, 2.0, -3.0, 0.5]);
        let p = ProblemInstance::new(Matrix::identity(4, 4), b, None).unwrap();
        let x0 = initial_point(1, 4);
        for spec in [
            StrategySpec::GradientOnly,
            StrategySpec::GradPrevStep,
            StrategySpec::Forsythe { s: 3 },
            StrategySpec::GradRandom,
            StrategySpec::MomentumRandom,
        ] {
            let r = run_flexible(&p, &cfg(spec, 0.5), &x0).unwrap();
            assert_eq!(r.status, Status::Converged, "{spec:?}");
            assert_eq!(r.iterations, 1, "{spec:?}");
        }
        let opts = BaselineOptions::default();
        assert_eq!(run_textbook_cg(&p, &x0, &opts).unwrap().iterations, 1);
        assert_eq!(run_textbook_cr(&p, &x0, &opts).unwrap().iterations, 1);
        assert_eq!(run_nagm(&p, &x0, &opts).unwrap().iterations, 1);
    }

    #[test]
    fn steepest_descent_matches_hand_rolled_loop() {
        let p = generate_problem(3, 12, 10).unwrap();
        let x0 = initial_point(3, 10);
        let mut c = cfg(StrategySpec::GradientOnly, 0.0);
        c.max_iter = 20;
        c.record_iterates = true;
        let r = run_flexible(&p, &c, &x0).unwrap();
        let a = p.matrix();
        let mut z = x0.clone();
        for (k, zk) in r.iterates.as_ref().unwrap().iter().enumerate() {
            assert!((zk - &z).norm() <= 1e-10 * z.norm(), "iterate {k}");
            let g = p.gradient(&z).unwrap();
            let step = g.dot(&g) / g.dot(&(a * &g));
            if k < r.trace.len() - 1 {
                assert_relative_eq!(r.trace[k].a_k[0], step, max_relative = 1e-10);
            }
            z -= g * step;
        }
    }

    #[test]
    fn cg_finite_termination_on_2d() {
        let a = Matrix::from_diagonal(&Vector::from_column_slice(&[1.0, 7.0]));
        let p = ProblemInstance::new(a, Vector::from_column_slice(&[1.0, 1.0]), None).unwrap();
        let opts = BaselineOptions {
            tol_grad_sq: 1e-24,
            ..Default::default()
        };
        let r = run_textbook_cg(&p, &Vector::from_column_slice(&[5.0, -2.0]), &opts).unwrap();
        assert!(r.iterations <= 2);
        assert!(r.final_record().f_gap <= 1e-10);
    }

    #[test]
    fn cr_residual_is_monotone() {
        let p = generate_problem(9, 36, 30).unwrap();
        let r = run_textbook_cr(&p, &initial_point(9, 30), &BaselineOptions::default()).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1].grad_norm_sq <= w[0].grad_norm_sq * (1.0 + 1e-12));
        }
    }

    #[test]
    fn nagm_smoke_on_random_problem() {
        let eigs: Vec<f64> = (0..40).map(|i| 1.0 + 99.0 * i as f64 / 39.0).collect();
        let p = generate_with_spectrum(2, &eigs).unwrap();
        let r = run_nagm(&p, &initial_point(2, 40), &BaselineOptions::default()).unwrap();
        assert_eq!(r.status, Status::Converged);
        assert!(r.final_record().f_gap < r.trace[0].f_gap);
    }

    #[test]
    fn bounds_arithmetic() {
        let spec = SpectrumInfo::new(100.0, 1.0).unwrap();
        let norm = NormSpec::from_ell(0.0).unwrap();
        let b = compute_bounds(&spec, 1.0, &norm, 1.0, 1e-6).unwrap();
        assert_relative_eq!(b.c_omega, (99.0f64 / 101.0).powi(2), max_relative = 1e-14);
        assert_relative_eq!(b.c_omega, 9801.0 / 10201.0, max_relative = 1e-14);
        assert_relative_eq!(b.c_omega, b.corollary_rate, max_relative = 1e-14);
        // (101²/400) ln(1e6)
        let k = 101.0f64.powi(2) / 400.0 * (1e6f64).ln();
        assert_relative_eq!(b.k_bound.unwrap(), k, max_relative = 1e-12);

        let one = SpectrumInfo::new(3.0, 3.0).unwrap();
        assert_eq!(compute_bounds(&one, 1.0, &norm, 1.0, 1e-6).unwrap().c_omega, 0.0);

        let lo = compute_bounds(&spec, 0.5, &norm, 1.0, 1e-6).unwrap();
        let hi = compute_bounds(&spec, 1.5, &norm, 1.0, 1e-6).unwrap();
        assert_eq!(lo.c_omega, hi.c_omega);
        assert_eq!(lo.k_bound, hi.k_bound);
        for omega in [0.01, 0.5, 1.0, 1.5, 1.99] {
            let c = contraction_factor(100.0, omega);
            assert!(c > 0.0 && c < 1.0);
        }
        assert!(compute_bounds(&spec, 2.0, &norm, 1.0, 1e-6).is_err());
        assert!(compute_bounds(&spec, 1.0, &NormSpec::gdwgm(0.5).unwrap(), 1.0, 1e-6)
            .unwrap()
            .k_bound
            .is_none());
    }

    #[test]
    fn steepest_descent_passes_every_check() {
        // κ = 100
        let eigs: Vec<f64> = (0..30).map(|i| 1.0 + 99.0 * i as f64 / 29.0).collect();
        let p = generate_with_spectrum(4, &eigs).unwrap();
        let x0 = initial_point(4, 30);
        for omega in [0.5, 1.0, 1.5] {
            let mut c = cfg(StrategySpec::GradientOnly, 0.0);
            c.omega = omega;
            c.record_bounds = true;
            let r = run_flexible(&p, &c, &x0).unwrap();
            let spec = extremal_eigenvalues(&p, &Preconditioner::Identity).unwrap();
            let b = compute_bounds(&spec, omega, &c.norm, r.trace[0].f_gap, 1e-6).unwrap();
            let rep = verify_run(&r, &b, &c);
            assert!(rep.passed(), "omega {omega}: {rep:#?}");
            assert!(rep.get("contraction").unwrap().checked > 0);
        }
    }

    #[test]
    fn csv_shape() {
        let p = generate_problem(1, 12, 10).unwrap();
        let r = run_flexible(&p, &cfg(StrategySpec::GradPrevStep, 0.0), &initial_point(1, 10))
            .unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), r.iterations + 2);
        assert!(lines[1].ends_with(','));
    }
}
