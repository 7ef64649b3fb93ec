//! Simulations of the two lower-bound constructions: random orthogonal-column
//! regression and the one-dimensional two-point family.

use aprox_core::optimizers::{BaseIteration, RunOptions, StepSchedule};
use aprox_core::problems::OrthColRegression;
use aprox_core::{derive_stream, ProblemInstance, ProblemKind, ProblemParams, Vector};
use thiserror::Error;

use crate::config::Method;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid lab parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Problem(#[from] aprox_core::problems::ProblemError),
    #[error(transparent)]
    Optimizer(#[from] aprox_core::optimizers::OptimizerError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthColParams {
    pub n: usize,
    pub m: usize,
    pub radius: f64,
    pub trials: usize,
    pub rounds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthColRound {
    pub k: usize,
    /// Posterior risk `E[‖x̂ − x*‖² | observed columns]`, averaged over trials.
    pub risk: f64,
    /// Realized `‖x̂ − x*‖²`, averaged over trials.
    pub realized: f64,
    /// `R²(1 − m/n)^k`.
    pub closed_form: f64,
    pub mean_rank: f64,
    /// Trial average of `(1 − m/n) r_{k−1} + m`.
    pub rank_recursion: f64,
}

impl OrthColRound {
    pub fn relative_error(&self) -> f64 {
        if self.closed_form == 0.0 {
            self.risk.abs()
        } else {
            (self.risk - self.closed_form).abs() / self.closed_form
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthColReport {
    pub params: OrthColParams,
    pub rounds: Vec<OrthColRound>,
}

/// Each trial draws `x* ~ N(0, R²/n·I)` and observes `m` fresh columns per
/// round. The posterior mean keeps the observed `U`-coordinates (read off
/// the responses) and zeroes the rest.
pub fn orthcol_lab(p: &OrthColParams) -> Result<OrthColReport, LabError> {
    if p.m == 0 || p.m > p.n || p.trials == 0 || !(p.radius > 0.0) {
        return Err(LabError::Invalid("need 1 <= m <= n, trials >= 1 and R > 0".into()));
    }
    let model = OrthColRegression::new(p.n, p.m, p.radius, p.seed)?;
    let basis = model.basis();
    let unscale = (p.m as f64 / p.n as f64).sqrt();
    let per_coord = p.radius * p.radius / p.n as f64;
    let mut risk = vec![0.0; p.rounds];
    let mut realized = vec![0.0; p.rounds];
    let mut rank = vec![0.0; p.rounds];
    let mut recursion = vec![0.0; p.rounds];
    for t in 0..p.trials {
        let mut rng = derive_stream(p.seed, &[t as u64]);
        let x_star = model.draw_solution(&mut rng);
        let mut coef: Vec<Option<f64>> = vec![None; p.n];
        let mut r_prev = 0usize;
        for k in 0..p.rounds {
            let obs = model.observe(&x_star, &mut rng);
            for (row, &col) in obs.columns.iter().enumerate() {
                coef[col] = Some(obs.b[row] * unscale);
            }
            let mut x_hat = Vector::zeros(p.n);
            for (j, c) in coef.iter().enumerate() {
                if let Some(c) = c {
                    x_hat += basis.column(j) * *c;
                }
            }
            let r = coef.iter().filter(|c| c.is_some()).count();
            risk[k] += per_coord * (p.n - r) as f64;
            realized[k] += (&x_hat - &x_star).norm_squared();
            rank[k] += r as f64;
            recursion[k] += (1.0 - p.m as f64 / p.n as f64) * r_prev as f64 + p.m as f64;
            r_prev = r;
        }
    }
    let trials = p.trials as f64;
    let q = 1.0 - p.m as f64 / p.n as f64;
    let rounds = (0..p.rounds)
        .map(|k| OrthColRound {
            k: k + 1,
            risk: risk[k] / trials,
            realized: realized[k] / trials,
            closed_form: p.radius * p.radius * q.powi(k as i32 + 1),
            mean_rank: rank[k] / trials,
            rank_recursion: recursion[k] / trials,
        })
        .collect();
    Ok(OrthColReport { params: *p, rounds })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointParams {
    pub delta: f64,
    pub gamma: f64,
    pub radius: f64,
    pub method: Method,
    pub alpha0: f64,
    pub beta: f64,
    pub trials: usize,
    pub rounds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointRound {
    pub k: usize,
    /// Trial mean of `dist(x_k, x*)²`.
    pub mean_dist_sq: f64,
    /// `R²(1 − δ)^k`, i.e. the lower bound envelope with `δ = (1+γ)²λ₁`.
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointReport {
    pub params: TwoPointParams,
    pub lambda1: f64,
    /// Per-step contraction `1 − (1+γ)²λ₁` of the lower bound.
    pub envelope_rate: f64,
    /// Fitted per-step contraction of the mean squared distance.
    pub empirical_rate: f64,
    pub rate_std_err: f64,
    pub rounds: Vec<TwoPointRound>,
}

impl TwoPointReport {
    /// The method does not contract faster than the bound allows (up to
    /// three standard errors of the fit).
    pub fn respects_bound(&self) -> bool {
        self.empirical_rate >= self.envelope_rate - 3.0 * self.rate_std_err
    }
}

/// Runs the chosen method from `x = 0` on random draws of the two-point
/// problem with `|x*| = R`.
pub fn two_point_lab(p: &TwoPointParams) -> Result<TwoPointReport, LabError> {
    if !(p.delta > 0.0 && p.delta < 1.0) || !(0.0..=1.0).contains(&p.gamma) || !(p.radius > 0.0) || p.trials == 0 || p.rounds < 2 {
        return Err(LabError::Invalid("need delta in (0, 1), gamma in [0, 1], R > 0, trials >= 1, rounds >= 2".into()));
    }
    let schedule = StepSchedule::poly(p.alpha0, p.beta);
    schedule.validate()?;
    let mut sums = vec![0.0; p.rounds];
    for t in 0..p.trials {
        let params = ProblemParams::new(
            ProblemKind::TwoPoint {
                delta: p.delta,
                radius: p.radius,
                gamma: p.gamma,
            },
            2,
            1,
        )
        .with_seed(aprox_core::mix_seed(p.seed, &[t as u64, 0]));
        let inst = ProblemInstance::generate(&params)?;
        let x_star = inst.planted().cloned().expect("two-point instances carry x*");
        let opts = RunOptions::new(p.method.strategy(), 1, p.rounds, 1e-300);
        let mut it = BaseIteration::new(&inst, &opts, schedule)?;
        let mut rng = derive_stream(p.seed, &[t as u64, 1]);
        for s in sums.iter_mut() {
            let info = it.step(&mut rng)?;
            *s += (&info.result.x_next - &x_star).norm_squared();
        }
    }
    let r2 = p.radius * p.radius;
    let rounds: Vec<TwoPointRound> = sums
        .iter()
        .enumerate()
        .map(|(k, s)| TwoPointRound {
            k: k + 1,
            mean_dist_sq: s / p.trials as f64,
            envelope: r2 * (1.0 - p.delta).powi(k as i32 + 1),
        })
        .collect();
    // Fit log E[dist²] ≈ a + k log q over the rounds before the mean hits 0.
    let usable: Vec<(f64, f64)> = rounds
        .iter()
        .take_while(|r| r.mean_dist_sq > 0.0)
        .map(|r| (r.k as f64, r.mean_dist_sq.ln()))
        .collect();
    let (slope, se) = if usable.len() >= 3 {
        slope_with_error(&usable)
    } else {
        (f64::NEG_INFINITY, 0.0)
    };
    Ok(TwoPointReport {
        params: *p,
        lambda1: p.delta / (1.0 + p.gamma).powi(2),
        envelope_rate: 1.0 - p.delta,
        empirical_rate: slope.exp(),
        rate_std_err: slope.exp() * se,
        rounds,
    })
}

/// Least-squares slope and its standard error.
fn slope_with_error(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let sse: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    (slope, (sse / (n - 2.0) / sxx).sqrt())
}
