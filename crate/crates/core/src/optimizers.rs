//! Outer iterations: the base model-based loop (which covers iterate
//! averaging), and the accelerated three-term loop.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{build_batch_model, BatchModel, BatchStrategy, ModelError, ModelKind};
use crate::problems::{Batch, Loss, ProblemError, ProblemInstance};
pub use crate::prox::Regularizer;
use crate::prox::{model_step, ProxError, ProxResult, StepContext};
use crate::Vector;

/// A run is declared divergent once its gap exceeds this multiple of the
/// initial gap.
pub const DIVERGENCE_FACTOR: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prox(#[from] ProxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// `α_k = α₀ k^{−β}`; `α₀ = ∞` is allowed for truncated models.
    PolyDecay { alpha0: f64, beta: f64 },
    /// `α_k = 1/(L + η₀ k^{power})`.
    SmoothnessAdaptive { l: f64, eta0: f64, power: f64 },
}

impl StepSchedule {
    pub fn poly(alpha0: f64, beta: f64) -> Self {
        StepSchedule::PolyDecay { alpha0, beta }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: String| Err(OptimizerError::InvalidConfig(m));
        match *self {
            StepSchedule::PolyDecay { alpha0, beta } => {
                if !(alpha0 > 0.0) {
                    return bad(format!("alpha0 must be positive, got {alpha0}"));
                }
                if !(0.0..=1.0).contains(&beta) {
                    return bad(format!("beta must lie in [0, 1], got {beta}"));
                }
            }
            StepSchedule::SmoothnessAdaptive { l, eta0, power } => {
                if !(l >= 0.0 && l.is_finite()) {
                    return bad(format!("L must be finite and nonnegative, got {l}"));
                }
                if !(eta0 >= 0.0 && eta0.is_finite()) {
                    return bad(format!("eta0 must be finite and nonnegative, got {eta0}"));
                }
                if power != 0.0 && power != 0.5 {
                    return bad(format!("power must be 0 or 1/2, got {power}"));
                }
                if l + eta0 == 0.0 {
                    return bad("L and eta0 cannot both be zero".into());
                }
            }
        }
        Ok(())
    }

    /// Stepsize for the 1-based iteration counter `k`.
    pub fn alpha(&self, k: usize) -> f64 {
        let k = k.max(1) as f64;
        match *self {
            StepSchedule::PolyDecay { alpha0, beta } => {
                if beta == 0.0 {
                    alpha0
                } else {
                    alpha0 * k.powf(-beta)
                }
            }
            StepSchedule::SmoothnessAdaptive { l, eta0, power } => 1.0 / (l + eta0 * k.powf(power)),
        }
    }

    /// The leading stepsize constant, when the schedule has one.
    pub fn alpha0(&self) -> Option<f64> {
        match *self {
            StepSchedule::PolyDecay { alpha0, .. } => Some(alpha0),
            StepSchedule::SmoothnessAdaptive { .. } => None,
        }
    }
}

/// `θ_k = 2/(k+2)`, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSchedule {
    #[default]
    Standard,
}

impl ThetaSchedule {
    /// Builds the schedule after checking `(1−θ_k)/θ_k² ≤ 1/θ_{k−1}²` for
    /// `k ≤ 10⁶`.
    pub fn standard() -> Result<Self, OptimizerError> {
        let s = ThetaSchedule::Standard;
        if s.theta(0) != 1.0 {
            return Err(OptimizerError::InvalidConfig("theta_0 must be 1".into()));
        }
        for k in 1..=1_000_000usize {
            let (t, prev) = (s.theta(k), s.theta(k - 1));
            if t > prev || (1.0 - t) / (t * t) > 1.0 / (prev * prev) * (1.0 + 1e-12) {
                return Err(OptimizerError::InvalidConfig(format!(
                    "theta recursion fails at k = {k}"
                )));
            }
        }
        Ok(s)
    }

    pub fn theta(&self, k: usize) -> f64 {
        match self {
            ThetaSchedule::Standard => 2.0 / (k as f64 + 2.0),
        }
    }
}

/// Stepsize rule for the accelerated loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelStep {
    /// `α_k = 1/(Lθ_k + η_k)` (or `1/(L + η_k)` when `tight` is false), with
    /// `η_k = η₀√(k+1)` and 0-based `k`.
    Smoothness { l: f64, eta0: f64, tight: bool },
    /// Any base schedule, evaluated at `k + 1`.
    Schedule(StepSchedule),
}

impl AccelStep {
    pub fn alpha(&self, k: usize, theta: f64) -> f64 {
        match *self {
            AccelStep::Smoothness { l, eta0, tight } => {
                let eta = eta0 * ((k + 1) as f64).sqrt();
                let lt = if tight { l * theta } else { l };
                1.0 / (lt + eta)
            }
            AccelStep::Schedule(s) => s.alpha(k + 1),
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        match *self {
            AccelStep::Smoothness { l, eta0, .. } => StepSchedule::SmoothnessAdaptive {
                l,
                eta0,
                power: 0.5,
            }
            .validate(),
            AccelStep::Schedule(s) => s.validate(),
        }
    }

    pub fn alpha0(&self) -> Option<f64> {
        match self {
            AccelStep::Smoothness { .. } => None,
            AccelStep::Schedule(s) => s.alpha0(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Gap reached the target at this (1-based) iterate index.
    Converged(usize),
    Budget,
    Diverged,
    InnerFail,
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Converged(_) => "converged",
            RunStatus::Budget => "budget",
            RunStatus::Diverged => "diverged",
            RunStatus::InnerFail => "innerfail",
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, RunStatus::Converged(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub strategy: BatchStrategy,
    pub accelerated: bool,
    pub batch_size: usize,
    pub alpha0: Option<f64>,
    pub seed: Option<u64>,
}

/// One trajectory. Iterates are indexed from 1 (`x_1` is the start), and the
/// iterate `x_k` has consumed `k·m` samples by the accounting used here.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iterations: Vec<usize>,
    /// `f(x_k) − f*` at the recorded indices.
    pub gap_trace: Vec<f64>,
    /// Gap of the running average of `x_2, …, x_k` (of `x_1` at `k = 1`).
    pub avg_gap_trace: Vec<f64>,
    pub samples: Vec<usize>,
    pub snapshots: Vec<(usize, Vector)>,
    pub status: RunStatus,
    /// First index at which the gap was at most ε (checked every iteration).
    pub first_hit: Option<usize>,
    pub final_x: Vector,
    pub final_gap: f64,
    pub echo: RunEcho,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub strategy: BatchStrategy,
    pub batch_size: usize,
    /// Number of steps `K`.
    pub max_iters: usize,
    /// Absolute gap target.
    pub epsilon: f64,
    pub record_stride: usize,
    pub snapshot_stride: Option<usize>,
    pub x0: Option<Vector>,
    /// Use every row each step (deterministic), ignoring `batch_size`.
    pub full_batch: bool,
    pub stop_at_epsilon: bool,
    pub ctx: Option<StepContext>,
    pub seed: Option<u64>,
}

impl RunOptions {
    pub fn new(strategy: BatchStrategy, batch_size: usize, max_iters: usize, epsilon: f64) -> Self {
        Self {
            strategy,
            batch_size,
            max_iters,
            epsilon,
            record_stride: 1,
            snapshot_stride: None,
            x0: None,
            full_batch: false,
            stop_at_epsilon: true,
            ctx: None,
            seed: None,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_start(mut self, x0: Vector) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn with_full_batch(mut self) -> Self {
        self.full_batch = true;
        self
    }

    pub fn with_context(mut self, ctx: StepContext) -> Self {
        self.ctx = Some(ctx);
        self
    }

    pub fn without_stopping(mut self) -> Self {
        self.stop_at_epsilon = false;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_snapshots(mut self, stride: usize) -> Self {
        self.snapshot_stride = Some(stride);
        self
    }

    fn validate(&self, inst: &ProblemInstance) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.max_iters == 0 {
            return bad("iteration budget must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.record_stride == 0 {
            return bad("record stride must be at least 1");
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != inst.dim() {
                return bad("start point has the wrong dimension");
            }
        }
        Ok(())
    }

    fn context(&self, inst: &ProblemInstance) -> StepContext {
        self.ctx
            .clone()
            .unwrap_or_else(|| StepContext::euclidean(inst.dim()).with_domain(inst.domain().clone()))
    }

    fn effective_batch(&self, inst: &ProblemInstance) -> usize {
        if self.full_batch {
            inst.n_samples()
        } else {
            self.batch_size
        }
    }
}

/// Optimal value of `f + r`; closed form for ridge regression, the instance
/// reference otherwise.
pub fn composite_optimum(inst: &ProblemInstance, reg: &Regularizer) -> Result<f64, OptimizerError> {
    let mu = reg.mu();
    if mu == 0.0 {
        return Ok(inst.reference_optimum()?.f_star);
    }
    if !matches!(inst.loss(), Loss::Squared) || !inst.is_uniform() {
        return Err(OptimizerError::InvalidConfig(
            "a regularized reference is only available for least squares".into(),
        ));
    }
    let (a, b) = inst.data();
    let n = inst.n_samples() as f64;
    let mut h = a.tr_mul(a) / n;
    for j in 0..inst.dim() {
        h[(j, j)] += mu;
    }
    let x = h
        .cholesky()
        .ok_or_else(|| OptimizerError::InvalidConfig("singular ridge system".into()))?
        .solve(&(a.tr_mul(b) / n));
    Ok(inst.objective_value(&x) + reg.value(&x))
}

/// Tracks gaps, the running average and the stopping rules shared by both loops.
struct Recorder<'a> {
    inst: &'a ProblemInstance,
    reg: Regularizer,
    f_star: f64,
    opts: &'a RunOptions,
    m: usize,
    initial_gap: f64,
    avg: Vector,
    avg_count: usize,
    record: RunRecord,
}

impl<'a> Recorder<'a> {
    fn new(
        inst: &'a ProblemInstance,
        opts: &'a RunOptions,
        reg: Regularizer,
        x1: &Vector,
        accelerated: bool,
        alpha0: Option<f64>,
    ) -> Result<Self, OptimizerError> {
        let f_star = composite_optimum(inst, &reg)?;
        let m = opts.effective_batch(inst);
        let gap = inst.objective_value(x1) + reg.value(x1) - f_star;
        let record = RunRecord {
            iterations: vec![],
            gap_trace: vec![],
            avg_gap_trace: vec![],
            samples: vec![],
            snapshots: vec![],
            status: RunStatus::Budget,
            first_hit: None,
            final_x: x1.clone(),
            final_gap: gap,
            echo: RunEcho {
                strategy: opts.strategy,
                accelerated,
                batch_size: m,
                alpha0,
                seed: opts.seed,
            },
        };
        let mut rec = Self {
            inst,
            reg,
            f_star,
            opts,
            m,
            initial_gap: gap,
            avg: x1.clone(),
            avg_count: 0,
            record,
        };
        rec.push(1, x1, gap, true);
        Ok(rec)
    }

    fn gap(&self, x: &Vector) -> f64 {
        self.inst.objective_value(x) + self.reg.value(x) - self.f_star
    }

    fn push(&mut self, k: usize, x: &Vector, gap: f64, force: bool) {
        let on_stride = (k - 1) % self.opts.record_stride == 0;
        if force || on_stride {
            if self.record.iterations.last() != Some(&k) {
                self.record.iterations.push(k);
                self.record.gap_trace.push(gap);
                self.record.avg_gap_trace.push(self.gap(&self.avg));
                self.record.samples.push(k * self.m);
            }
        }
        if let Some(s) = self.opts.snapshot_stride {
            if (k - 1) % s.max(1) == 0 || force {
                if self.record.snapshots.last().map(|p| p.0) != Some(k) {
                    self.record.snapshots.push((k, x.clone()));
                }
            }
        }
    }

    /// Returns `Some(status)` when the run should stop.
    fn observe(&mut self, k: usize, x: &Vector) -> Option<RunStatus> {
        self.avg_count += 1;
        if self.avg_count == 1 {
            self.avg = x.clone();
        } else {
            let w = 1.0 / self.avg_count as f64;
            self.avg = &self.avg * (1.0 - w) + x * w;
        }
        let gap = self.gap(x);
        self.record.final_x = x.clone();
        self.record.final_gap = gap;
        let diverged = !gap.is_finite()
            || !x.iter().all(|v| v.is_finite())
            || gap > DIVERGENCE_FACTOR * self.initial_gap.max(f64::MIN_POSITIVE);
        let hit = gap <= self.opts.epsilon;
        if hit && self.record.first_hit.is_none() {
            self.record.first_hit = Some(k);
        }
        let last = k == self.opts.max_iters + 1;
        let stop = diverged || (hit && self.opts.stop_at_epsilon);
        self.push(k, x, gap, stop || last || (hit && self.record.first_hit == Some(k)));
        if diverged {
            Some(RunStatus::Diverged)
        } else if hit && self.opts.stop_at_epsilon {
            Some(RunStatus::Converged(k))
        } else {
            None
        }
    }

    fn start_status(&mut self) -> Option<RunStatus> {
        let gap = self.record.final_gap;
        if !gap.is_finite() {
            return Some(RunStatus::Diverged);
        }
        if gap <= self.opts.epsilon {
            self.record.first_hit = Some(1);
            if self.opts.stop_at_epsilon {
                return Some(RunStatus::Converged(1));
            }
        }
        None
    }

    fn finish(mut self, status: RunStatus) -> RunRecord {
        self.record.status = match status {
            RunStatus::Budget => match self.record.first_hit {
                Some(k) => RunStatus::Converged(k),
                None => RunStatus::Budget,
            },
            other => other,
        };
        self.record
    }
}

/// What happened in one step, exposed for per-step checks.
#[derive(Debug, Clone)]
pub struct StepInfo {
    /// 1-based index of the step (producing iterate `k + 1`).
    pub k: usize,
    pub alpha: f64,
    /// Prox center used by the step.
    pub center: Vector,
    pub model: BatchModel,
    pub result: ProxResult,
}

fn draw_batch<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<Batch, OptimizerError> {
    if opts.full_batch {
        Ok(Batch::full(inst.n_samples()))
    } else {
        Ok(inst.sample_batch(opts.batch_size, rng)?)
    }
}

fn solve_with_retry(model: &BatchModel, center: &Vector, alpha: f64, ctx: &StepContext) -> Result<ProxResult, ProxError> {
    match model_step(model, center, alpha, ctx) {
        Err(ProxError::NotConverged { .. }) => {
            let mut loose = ctx.clone();
            loose.tol *= 100.0;
            model_step(model, center, alpha, &loose)
        }
        other => other,
    }
}

/// Stepper for `x_{k+1} = argmin F̄_{x_k}(x) + r(x) + D_h(x, x_k)/α_k`.
pub struct BaseIteration<'a> {
    inst: &'a ProblemInstance,
    opts: &'a RunOptions,
    schedule: StepSchedule,
    ctx: StepContext,
    x: Vector,
    k: usize,
}

impl<'a> BaseIteration<'a> {
    pub fn new(inst: &'a ProblemInstance, opts: &'a RunOptions, schedule: StepSchedule) -> Result<Self, OptimizerError> {
        opts.validate(inst)?;
        schedule.validate()?;
        if let StepSchedule::PolyDecay { alpha0, .. } = schedule {
            if alpha0.is_infinite() && !truncated(opts.strategy) {
                return Err(OptimizerError::InvalidConfig(
                    "an infinite stepsize requires a truncated model".into(),
                ));
            }
        }
        let x = opts.x0.clone().unwrap_or_else(|| Vector::zeros(inst.dim()));
        Ok(Self {
            inst,
            opts,
            schedule,
            ctx: opts.context(inst),
            x,
            k: 0,
        })
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<StepInfo, OptimizerError> {
        self.k += 1;
        let batch = draw_batch(self.inst, self.opts, rng)?;
        let model = build_batch_model(self.inst, &self.x, &batch, self.opts.strategy)?;
        let alpha = self.schedule.alpha(self.k);
        let result = solve_with_retry(&model, &self.x, alpha, &self.ctx)?;
        let center = std::mem::replace(&mut self.x, result.x_next.clone());
        Ok(StepInfo {
            k: self.k,
            alpha,
            center,
            model,
            result,
        })
    }
}

fn truncated(strategy: BatchStrategy) -> bool {
    matches!(
        strategy,
        BatchStrategy::TruncatedAverage
            | BatchStrategy::ModelOfAverage(ModelKind::Truncated)
            | BatchStrategy::IterateAverage(ModelKind::Truncated)
    )
}

/// Base model-based iteration.
pub fn run_base<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    schedule: StepSchedule,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunRecord, OptimizerError> {
    let mut it = BaseIteration::new(inst, opts, schedule)?;
    let reg = it.ctx.regularizer;
    let mut rec = Recorder::new(inst, opts, reg, it.x(), false, schedule.alpha0())?;
    if let Some(status) = rec.start_status() {
        return Ok(rec.finish(status));
    }
    for k in 1..=opts.max_iters {
        let x_next = match it.step(rng) {
            Ok(info) => info.result.x_next,
            Err(OptimizerError::Prox(_)) => return Ok(rec.finish(RunStatus::InnerFail)),
            Err(e) => return Err(e),
        };
        if let Some(status) = rec.observe(k + 1, &x_next) {
            return Ok(rec.finish(status));
        }
    }
    Ok(rec.finish(RunStatus::Budget))
}

/// Iterate averaging: one single-sample step per batch element from the same
/// point, averaged.
pub fn run_pia<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    per_sample: ModelKind,
    schedule: StepSchedule,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunRecord, OptimizerError> {
    let mut opts = opts.clone();
    opts.strategy = BatchStrategy::IterateAverage(per_sample);
    run_base(inst, schedule, &opts, rng)
}

/// `(x, y, z)` of the three-term iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelState {
    pub x: Vector,
    pub y: Vector,
    pub z: Vector,
}

/// Stepper for
/// `y_k = (1−θ_k)x_k + θ_k z_k`,
/// `z_{k+1} = argmin F̄_{y_k}(x) + r(x) + D_h(x, z_k)/α_k`,
/// `x_{k+1} = (1−θ_k)x_k + θ_k z_{k+1}`.
pub struct AcceleratedIteration<'a> {
    inst: &'a ProblemInstance,
    opts: &'a RunOptions,
    step_rule: AccelStep,
    theta: ThetaSchedule,
    ctx: StepContext,
    state: AccelState,
    k: usize,
}

impl<'a> AcceleratedIteration<'a> {
    pub fn new(
        inst: &'a ProblemInstance,
        opts: &'a RunOptions,
        step_rule: AccelStep,
        theta: ThetaSchedule,
    ) -> Result<Self, OptimizerError> {
        opts.validate(inst)?;
        step_rule.validate()?;
        if let Some(a0) = step_rule.alpha0() {
            if a0.is_infinite() {
                return Err(OptimizerError::InvalidConfig(
                    "the accelerated loop requires finite stepsizes".into(),
                ));
            }
        }
        let x = opts.x0.clone().unwrap_or_else(|| Vector::zeros(inst.dim()));
        Ok(Self {
            inst,
            opts,
            step_rule,
            theta,
            ctx: opts.context(inst),
            state: AccelState {
                x: x.clone(),
                y: x.clone(),
                z: x,
            },
            k: 0,
        })
    }

    pub fn state(&self) -> &AccelState {
        &self.state
    }

    /// Current 0-based step counter.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<StepInfo, OptimizerError> {
        let k = self.k;
        let theta = self.theta.theta(k);
        let AccelState { x, z, .. } = &self.state;
        let y = x * (1.0 - theta) + z * theta;
        let batch = draw_batch(self.inst, self.opts, rng)?;
        let model = build_batch_model(self.inst, &y, &batch, self.opts.strategy)?;
        let alpha = self.step_rule.alpha(k, theta);
        let result = solve_with_retry(&model, z, alpha, &self.ctx)?;
        let z_next = result.x_next.clone();
        let x_next = x * (1.0 - theta) + &z_next * theta;
        let center = z.clone();
        let theta_next = self.theta.theta(k + 1);
        let y_next = &x_next * (1.0 - theta_next) + &z_next * theta_next;
        self.state = AccelState {
            x: x_next,
            y: y_next,
            z: z_next,
        };
        self.k += 1;
        Ok(StepInfo {
            k: k + 1,
            alpha,
            center,
            model,
            result,
        })
    }
}

/// Accelerated three-term iteration; the gap is recorded at `x_k`.
pub fn run_accelerated<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    step_rule: AccelStep,
    theta: ThetaSchedule,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunRecord, OptimizerError> {
    let mut it = AcceleratedIteration::new(inst, opts, step_rule, theta)?;
    let reg = it.ctx.regularizer;
    let mut rec = Recorder::new(inst, opts, reg, &it.state.x, true, step_rule.alpha0())?;
    if let Some(status) = rec.start_status() {
        return Ok(rec.finish(status));
    }
    for k in 1..=opts.max_iters {
        match it.step(rng) {
            Ok(_) => {}
            Err(OptimizerError::Prox(_)) => return Ok(rec.finish(RunStatus::InnerFail)),
            Err(e) => return Err(e),
        }
        let x = it.state.x.clone();
        if let Some(status) = rec.observe(k + 1, &x) {
            return Ok(rec.finish(status));
        }
    }
    Ok(rec.finish(RunStatus::Budget))
}

/// Samples consumed when the recorded gap first reaches `ε`: `k·m` for the
/// first recorded index `k` with gap ≤ ε.
pub fn time_to_epsilon(record: &RunRecord, epsilon: f64) -> Option<usize> {
    iterations_to_epsilon(record, epsilon).map(|k| k * record.echo.batch_size)
}

pub fn iterations_to_epsilon(record: &RunRecord, epsilon: f64) -> Option<usize> {
    record
        .iterations
        .iter()
        .zip(&record.gap_trace)
        .find(|(_, &g)| g <= epsilon)
        .map(|(&k, _)| k)
}
