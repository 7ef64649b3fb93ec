use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use aprox_cli::config::{Method, MethodSpec, SweepConfig};
use aprox_cli::lab::{orthcol_lab, two_point_lab, OrthColParams, TwoPointParams};
use aprox_cli::report::{profiles, speedups, time_vs_step};
use aprox_cli::svg::{emit_svg, PlotKind, Series};
use aprox_cli::sweep::{cell_seed, instance_seed, method_label, run_cell, CellSpec};
use aprox_cli::{execute_sweep, load_config, preset, read_csv, write_csv, write_profile_csv, write_speedup_csv};
use aprox_core::analysis::{estimate_gamma_growth, estimate_noise_to_signal, estimate_sigma0, CostMeasure, GrowthOptions};
use aprox_core::{derive_stream, ProblemInstance, ProblemKind, ProblemParams, Vector};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aprox", version, about = "Minibatch and accelerated aProx experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON sweep configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration name.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Keep only accelerated (true) or non-accelerated (false) methods.
    #[arg(long)]
    accelerated: Option<bool>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and print its gap trace.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        method: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        alpha0: f64,
        #[arg(long)]
        m: Option<usize>,
        /// Instance replicate index.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Execute the full grid and write sweep.csv.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Performance profiles from a sweep table.
    Profile {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Best-stepsize speedups and time-versus-stepsize curves.
    Speedup {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Cost counted by the speedup ratio.
        #[arg(long, value_enum, default_value_t = Cost::Iterations)]
        cost: Cost,
    },
    /// Estimate growth, variance and noise-to-signal constants.
    Growth {
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 4000)]
        n_samples: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 20)]
        directions: usize,
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// Monte Carlo draws per probe; exact enumeration when absent.
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Lower-bound laboratory.
    Lbtest {
        #[arg(long, value_enum)]
        kind: LabKind,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        rounds: usize,
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value = "truncated")]
        method: String,
        #[arg(long, default_value_t = f64::INFINITY)]
        alpha0: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Cost {
    Iterations,
    Samples,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabKind {
    Orthcol,
    Twopoint,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn config(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn resolve(args: &ConfigArgs) -> Result<SweepConfig, Failure> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => load_config(path).map_err(config)?,
        (None, Some(name)) => preset(name).map_err(config)?,
        (None, None) => return Err(config(anyhow::anyhow!("pass --config PATH or --preset NAME"))),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(acc) = args.accelerated {
        cfg.restrict_accelerated(acc);
    }
    Ok(cfg)
}

fn parse_method(s: &str) -> Result<Method, Failure> {
    Method::parse(s).ok_or_else(|| config(anyhow::anyhow!("unknown method `{s}`")))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime)
}

fn cmd_run(args: &ConfigArgs, method: Option<&str>, alpha0: f64, m: Option<usize>, replicate: u64) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let spec = match method {
        Some(name) => {
            let method = parse_method(name)?;
            cfg.methods
                .iter()
                .find(|s| s.method == method)
                .copied()
                .unwrap_or_else(|| MethodSpec::new(method, args.accelerated.unwrap_or(false)))
        }
        None => cfg.methods[0],
    };
    if !(alpha0 > 0.0) {
        return Err(config(anyhow::anyhow!("alpha0 must be positive")));
    }
    let problem = &cfg.problems[0];
    let mut params = ProblemParams::new(problem.kind, problem.n_samples, problem.dim)
        .with_noise(problem.noise)
        .with_seed(instance_seed(cfg.master_seed, 0, 0, replicate));
    params.cond = cfg.conds[0];
    let inst = ProblemInstance::generate(&params).map_err(runtime)?;
    let cell = CellSpec {
        method: spec,
        m: m.unwrap_or(cfg.batch_sizes[0]),
        alpha0,
        seed: replicate,
        epsilon: cfg.epsilon,
        max_samples: cfg.max_samples,
    };
    let rec = run_cell(&inst, &cell, cell_seed(cfg.master_seed, 0, 0, &cell)).map_err(runtime)?;
    println!("k,samples,gap");
    for ((k, s), g) in rec.iterations.iter().zip(&rec.samples).zip(&rec.gap_trace) {
        println!("{k},{s},{g:e}");
    }
    eprintln!(
        "{} (accelerated={}) m={} alpha0={alpha0}: {} after {} iterations, final gap {:e}",
        method_label(&spec),
        spec.accelerated,
        cell.m,
        rec.status.label(),
        rec.iterations.last().copied().unwrap_or(1),
        rec.final_gap
    );
    Ok(())
}

fn cmd_sweep(args: &ConfigArgs, out: Option<PathBuf>, jobs: Option<usize>) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    if jobs == Some(0) {
        return Err(config(anyhow::anyhow!("--jobs must be at least 1")));
    }
    let dir = out.unwrap_or_else(|| cfg.out.clone());
    ensure_dir(&dir)?;
    let result = execute_sweep(&cfg, jobs, true).map_err(runtime)?;
    let path = dir.join("sweep.csv");
    write_csv(&result, &path).map_err(runtime)?;
    let converged = result.rows.iter().filter(|r| r.status == aprox_cli::CellStatus::Converged).count();
    println!("{} cells ({converged} converged) -> {}", result.rows.len(), path.display());
    Ok(())
}

fn group_name(acc: bool) -> &'static str {
    if acc {
        "accelerated"
    } else {
        "base"
    }
}

fn cmd_profile(input: Option<PathBuf>, out: &Path) -> Result<(), Failure> {
    let input = input.unwrap_or_else(|| out.join("sweep.csv"));
    let table = read_csv(&input).map_err(config)?;
    ensure_dir(out)?;
    let set = profiles(&table).map_err(runtime)?;
    write_profile_csv(&set, &out.join("profile.csv")).map_err(runtime)?;
    for (acc, report) in &set.groups {
        println!("{} ({} experiments, {} discarded)", group_name(*acc), report.kept, report.discarded);
        let mut series = Vec::new();
        for c in &report.curves {
            println!(
                "  {:<12} r=1: {:.3}  r=2: {:.3}  r=4: {:.3}",
                c.method,
                c.value_at(1.0),
                c.value_at(2.0),
                c.value_at(4.0)
            );
            series.push(Series::new(c.method.clone(), c.ratios.iter().copied().zip(c.values.iter().copied()).collect()));
        }
        if series.iter().any(|s| !s.points.is_empty()) {
            let path = out.join(format!("profile_{}.svg", group_name(*acc)));
            emit_svg(&series, &path, PlotKind::Profile, &format!("Performance profile ({})", group_name(*acc))).map_err(runtime)?;
        }
    }
    Ok(())
}

fn cmd_speedup(input: Option<PathBuf>, out: &Path, cost: Cost) -> Result<(), Failure> {
    let input = input.unwrap_or_else(|| out.join("sweep.csv"));
    let table = read_csv(&input).map_err(config)?;
    ensure_dir(out)?;
    let measure = match cost {
        Cost::Iterations => CostMeasure::Iterations,
        Cost::Samples => CostMeasure::Samples,
    };
    let set = speedups(&table, measure);
    write_speedup_csv(&set, &out.join("speedup.csv")).map_err(runtime)?;
    for acc in [false, true] {
        let rows: Vec<_> = set.rows.iter().filter(|r| r.accelerated == acc).collect();
        if rows.is_empty() {
            continue;
        }
        println!("{}", group_name(acc));
        let mut series: Vec<Series> = Vec::new();
        for r in &rows {
            println!("  {:<12} m={:<3} T*={:<10} speedup={:.3}", r.method, r.m, r.t_star, r.speedup);
            match series.iter_mut().find(|s| s.label == r.method) {
                Some(s) => s.points.push((r.m as f64, r.speedup)),
                None => series.push(Series::new(r.method.clone(), vec![(r.m as f64, r.speedup)])),
            }
        }
        for s in &mut series {
            s.points.retain(|p| p.1.is_finite());
        }
        let name = group_name(acc);
        if series.iter().any(|s| !s.points.is_empty()) {
            emit_svg(&series, &out.join(format!("speedup_{name}.svg")), PlotKind::Speedup, &format!("Best speedup ({name})"))
                .map_err(runtime)?;
        }
        let tvs = time_vs_step(&table, acc);
        if !tvs.is_empty() {
            emit_svg(&tvs, &out.join(format!("time_vs_step_{name}.svg")), PlotKind::TimeVsStep, &format!("Samples to epsilon ({name})"))
                .map_err(runtime)?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_growth(gamma: f64, dim: usize, n_samples: usize, alpha: f64, directions: usize, m: usize, draws: Option<usize>, seed: u64) -> Result<(), Failure> {
    let params = ProblemParams::new(ProblemKind::PowerReg { gamma }, n_samples, dim).with_seed(seed);
    let inst = ProblemInstance::generate(&params).map_err(config)?;
    let mut rng = derive_stream(seed, &[7]);
    let opts = GrowthOptions { draws, batch_size: m };
    let radii = [0.1, 1.0, 10.0];
    let est = estimate_gamma_growth(&inst, gamma, alpha, &radii, directions, &opts, &mut rng).map_err(runtime)?;
    let x_star = inst.planted().cloned().unwrap_or_else(|| Vector::zeros(dim));
    let probes: Vec<Vector> = radii.iter().map(|&r| x_star.map(|v| v + r)).collect();
    let sigma = estimate_sigma0(&inst, &probes, None, &mut rng).map_err(runtime)?;
    let rho = estimate_noise_to_signal(&inst, &probes).map_err(runtime)?;
    let bound = 1.0 / (2f64.powf(2.0 - gamma) * (1.0 + gamma) * dim as f64);
    let report = serde_json::json!({
        "growth": est,
        "lambda1_analytic_bound": bound,
        "lambda1_meets_bound": est.lambda1_hat >= bound,
        "sigma0_sq": sigma.sigma0_sq,
        "noise_to_signal": rho.rho,
    });
    println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_lbtest(
    kind: LabKind,
    n: usize,
    m: usize,
    radius: f64,
    trials: usize,
    rounds: usize,
    delta: f64,
    gamma: f64,
    method: &str,
    alpha0: f64,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut lines = Vec::new();
    match kind {
        LabKind::Orthcol => {
            let rep = orthcol_lab(&OrthColParams {
                n,
                m,
                radius,
                trials,
                rounds,
                seed,
            })
            .map_err(config)?;
            lines.push("k,risk,realized,closed_form,rel_error,mean_rank,rank_recursion".to_string());
            for r in &rep.rounds {
                lines.push(format!(
                    "{},{:e},{:e},{:e},{:.4},{:.3},{:.3}",
                    r.k,
                    r.risk,
                    r.realized,
                    r.closed_form,
                    r.relative_error(),
                    r.mean_rank,
                    r.rank_recursion
                ));
            }
        }
        LabKind::Twopoint => {
            let method = parse_method(method)?;
            let rep = two_point_lab(&TwoPointParams {
                delta,
                gamma,
                radius,
                method,
                alpha0,
                beta: if alpha0.is_finite() { 0.5 } else { 0.0 },
                trials,
                rounds,
                seed,
            })
            .map_err(config)?;
            lines.push("k,mean_dist_sq,envelope".to_string());
            for r in &rep.rounds {
                lines.push(format!("{},{:e},{:e}", r.k, r.mean_dist_sq, r.envelope));
            }
            eprintln!(
                "lambda1 = {:.4}; empirical rate {:.4} (se {:.4}) vs bound rate {:.4}: {}",
                rep.lambda1,
                rep.empirical_rate,
                rep.rate_std_err,
                rep.envelope_rate,
                if rep.respects_bound() { "consistent" } else { "faster than the bound" }
            );
        }
    }
    let text = lines.join("\n") + "\n";
    print!("{text}");
    if let Some(dir) = out {
        ensure_dir(&dir)?;
        let name = match kind {
            LabKind::Orthcol => "lbtest_orthcol.csv",
            LabKind::Twopoint => "lbtest_twopoint.csv",
        };
        std::fs::write(dir.join(name), text).map_err(runtime)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            cfg,
            method,
            alpha0,
            m,
            replicate,
        } => cmd_run(&cfg, method.as_deref(), alpha0, m, replicate),
        Command::Sweep { cfg, out, jobs } => cmd_sweep(&cfg, out, jobs),
        Command::Profile { input, out } => cmd_profile(input, &out),
        Command::Speedup { input, out, cost } => cmd_speedup(input, &out, cost),
        Command::Growth {
            gamma,
            dim,
            n_samples,
            alpha,
            directions,
            m,
            draws,
            seed,
        } => cmd_growth(gamma, dim, n_samples, alpha, directions, m, draws, seed),
        Command::Lbtest {
            kind,
            n,
            m,
            radius,
            trials,
            rounds,
            delta,
            gamma,
            method,
            alpha0,
            seed,
            out,
        } => cmd_lbtest(kind, n, m, radius, trials, rounds, delta, gamma, &method, alpha0, seed, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
