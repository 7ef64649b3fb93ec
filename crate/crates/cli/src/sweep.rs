//! Grid execution. Every cell derives its own random stream from the master
//! seed and its coordinates, so results do not depend on scheduling.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use aprox_core::optimizers::{
    run_accelerated, run_base, AccelStep, OptimizerError, RunOptions, RunRecord, RunStatus, StepSchedule,
    ThetaSchedule,
};
use aprox_core::{derive_stream, mix_seed, ProblemInstance, ProblemParams, Vector};
use rayon::prelude::*;

use crate::config::{MethodSpec, ProblemSpec, ScheduleSpec, SweepConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellStatus {
    Converged,
    Budget,
    Diverged,
    InnerFail,
}

impl CellStatus {
    pub fn label(self) -> &'static str {
        match self {
            CellStatus::Converged => "converged",
            CellStatus::Budget => "budget",
            CellStatus::Diverged => "diverged",
            CellStatus::InnerFail => "innerfail",
        }
    }
}

impl From<RunStatus> for CellStatus {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::Converged(_) => CellStatus::Converged,
            RunStatus::Budget => CellStatus::Budget,
            RunStatus::Diverged => CellStatus::Diverged,
            RunStatus::InnerFail => CellStatus::InnerFail,
        }
    }
}

impl fmt::Display for CellStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CellStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "converged" => Ok(CellStatus::Converged),
            "budget" => Ok(CellStatus::Budget),
            "diverged" => Ok(CellStatus::Diverged),
            "innerfail" => Ok(CellStatus::InnerFail),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub problem: String,
    pub noise: String,
    pub cond: Option<f64>,
    pub method: String,
    pub accelerated: bool,
    pub m: usize,
    pub alpha0: f64,
    pub seed: u64,
    /// First iterate index `k` (the start is `k = 1`) with relative gap ≤ ε.
    pub k_to_eps: Option<usize>,
    pub samples_to_eps: Option<usize>,
    /// Absolute gap at the last iterate.
    pub final_gap: f64,
    pub status: CellStatus,
}

impl CellResult {
    /// Total order over the key columns.
    pub fn key_cmp(&self, other: &Self) -> Ordering {
        self.problem
            .cmp(&other.problem)
            .then_with(|| self.noise.cmp(&other.noise))
            .then_with(|| cmp_cond(self.cond, other.cond))
            .then_with(|| self.method.cmp(&other.method))
            .then_with(|| self.accelerated.cmp(&other.accelerated))
            .then_with(|| self.m.cmp(&other.m))
            .then_with(|| self.alpha0.total_cmp(&other.alpha0))
            .then_with(|| self.seed.cmp(&other.seed))
    }

    /// Identifier of the experiment this row belongs to in a performance
    /// profile: everything except the method.
    pub fn experiment_key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{:e}|{}",
            self.problem,
            self.noise,
            self.cond.map(|c| format!("{c:e}")).unwrap_or_default(),
            self.accelerated,
            self.m,
            self.alpha0,
            self.seed
        )
    }
}

fn cmp_cond(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<CellResult>,
}

impl SweepResult {
    pub fn sort(&mut self) {
        self.rows.sort_by(CellResult::key_cmp);
    }
}

/// Label for a method column, with the acceleration flag kept separately.
pub fn method_label(spec: &MethodSpec) -> String {
    match spec.schedule {
        ScheduleSpec::Poly { beta } if beta == 0.5 => spec.method.label().to_string(),
        ScheduleSpec::Poly { beta } => format!("{}-beta{beta}", spec.method.label()),
        ScheduleSpec::Smoothness { power } => format!("{}-smooth{power}", spec.method.label()),
    }
}

/// One optimizer run at a grid point.
#[derive(Debug, Clone, Copy)]
pub struct CellSpec {
    pub method: MethodSpec,
    pub m: usize,
    pub alpha0: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub max_samples: usize,
}

impl CellSpec {
    pub fn iterations(&self) -> usize {
        self.max_samples.div_ceil(self.m)
    }
}

/// Runs one cell; the gap target is `ε` times the gap at the origin.
pub fn run_cell(inst: &ProblemInstance, cell: &CellSpec, stream_seed: u64) -> Result<RunRecord, OptimizerError> {
    let start = Vector::zeros(inst.dim());
    let initial_gap = inst.gap(&start)?;
    let target = (cell.epsilon * initial_gap).max(f64::MIN_POSITIVE);
    let iters = cell.iterations();
    let opts = RunOptions::new(cell.method.method.strategy(), cell.m, iters, target)
        .with_stride((iters / 200).max(1))
        .with_seed(cell.seed);
    let mut rng = derive_stream(stream_seed, &[]);
    let l = || {
        inst.smoothness_constant()
            .ok_or_else(|| OptimizerError::InvalidConfig("loss has no smoothness constant".into()))
    };
    if cell.method.accelerated {
        let rule = match cell.method.schedule {
            ScheduleSpec::Poly { beta } => AccelStep::Schedule(StepSchedule::poly(cell.alpha0, beta)),
            ScheduleSpec::Smoothness { .. } => AccelStep::Smoothness {
                l: l()?,
                eta0: 1.0 / cell.alpha0,
                tight: true,
            },
        };
        run_accelerated(inst, rule, ThetaSchedule::Standard, &opts, &mut rng)
    } else {
        let schedule = match cell.method.schedule {
            ScheduleSpec::Poly { beta } => StepSchedule::poly(cell.alpha0, beta),
            ScheduleSpec::Smoothness { power } => StepSchedule::SmoothnessAdaptive {
                l: l()?,
                eta0: 1.0 / cell.alpha0,
                power,
            },
        };
        run_base(inst, schedule, &opts, &mut rng)
    }
}

/// Seed of the instance at `(problem, cond, seed)`; shared by all methods,
/// stepsizes and batch sizes so that they see the same data.
pub fn instance_seed(master: u64, problem: usize, cond: usize, seed: u64) -> u64 {
    mix_seed(master, &[1, problem as u64, cond as u64, seed])
}

/// Seed of a cell's sampling stream.
pub fn cell_seed(master: u64, problem: usize, cond: usize, spec: &CellSpec) -> u64 {
    let schedule = match spec.method.schedule {
        ScheduleSpec::Poly { beta } => beta.to_bits(),
        ScheduleSpec::Smoothness { power } => !power.to_bits(),
    };
    mix_seed(
        master,
        &[
            2,
            problem as u64,
            cond as u64,
            spec.method.method as u64,
            spec.method.accelerated as u64,
            schedule,
            spec.m as u64,
            spec.alpha0.to_bits(),
            spec.seed,
        ],
    )
}

struct InstanceSlot {
    problem: usize,
    cond: usize,
    seed: u64,
    inst: Result<ProblemInstance, String>,
}

fn build_instance(spec: &ProblemSpec, cond: Option<f64>, seed: u64) -> Result<ProblemInstance, String> {
    let mut params = ProblemParams::new(spec.kind, spec.n_samples, spec.dim)
        .with_noise(spec.noise)
        .with_seed(seed);
    params.cond = cond;
    let inst = ProblemInstance::generate(&params).map_err(|e| e.to_string())?;
    inst.reference_optimum().map_err(|e| e.to_string())?;
    Ok(inst)
}

/// Runs the full grid on `jobs` worker threads, reporting progress on
/// standard error. Cell failures become statuses; rows come back sorted.
pub fn execute_sweep(cfg: &SweepConfig, jobs: Option<usize>, progress: bool) -> anyhow::Result<SweepResult> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs.or(cfg.jobs) {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;

    let mut slots = Vec::new();
    for (pi, _) in cfg.problems.iter().enumerate() {
        for (ci, _) in cfg.conds.iter().enumerate() {
            for seed in 0..cfg.seeds as u64 {
                slots.push((pi, ci, seed));
            }
        }
    }
    let instances: Vec<InstanceSlot> = pool.install(|| {
        slots
            .par_iter()
            .map(|&(pi, ci, seed)| InstanceSlot {
                problem: pi,
                cond: ci,
                seed,
                inst: build_instance(&cfg.problems[pi], cfg.conds[ci], instance_seed(cfg.master_seed, pi, ci, seed)),
            })
            .collect()
    });

    let mut work = Vec::new();
    for (si, slot) in instances.iter().enumerate() {
        for method in &cfg.methods {
            for &m in &cfg.batch_sizes {
                for &alpha0 in &cfg.alpha0 {
                    work.push((
                        si,
                        CellSpec {
                            method: *method,
                            m,
                            alpha0,
                            seed: slot.seed,
                            epsilon: cfg.epsilon,
                            max_samples: cfg.max_samples,
                        },
                    ));
                }
            }
        }
    }
    let total = work.len();
    let done = AtomicUsize::new(0);
    let step = (total / 20).max(1);
    let rows: Vec<CellResult> = pool.install(|| {
        work.par_iter()
            .map(|(si, cell)| {
                let slot = &instances[*si];
                let spec = &cfg.problems[slot.problem];
                let mut row = CellResult {
                    problem: spec.label(),
                    noise: spec.noise.label(),
                    cond: cfg.conds[slot.cond],
                    method: method_label(&cell.method),
                    accelerated: cell.method.accelerated,
                    m: cell.m,
                    alpha0: cell.alpha0,
                    seed: cell.seed,
                    k_to_eps: None,
                    samples_to_eps: None,
                    final_gap: f64::NAN,
                    status: CellStatus::InnerFail,
                };
                if let Ok(inst) = &slot.inst {
                    let stream = cell_seed(cfg.master_seed, slot.problem, slot.cond, cell);
                    if let Ok(rec) = run_cell(inst, cell, stream) {
                        row.k_to_eps = rec.first_hit;
                        row.samples_to_eps = rec.first_hit.map(|k| k * cell.m);
                        row.final_gap = rec.final_gap;
                        row.status = rec.status.into();
                    }
                }
                let n = done.fetch_add(1, AtomicOrdering::Relaxed) + 1;
                if progress && (n % step == 0 || n == total) {
                    eprintln!("[{}] {n}/{total} cells", cfg.name);
                }
                row
            })
            .collect()
    });
    let mut result = SweepResult { rows };
    result.sort();
    Ok(result)
}
