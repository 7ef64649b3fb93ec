//! Estimators for problem constants and summaries of experiment grids.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizers::RunRecord;
use crate::problems::{ProblemError, ProblemInstance};
use crate::Vector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} draws, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("every probe has a vanishing full gradient")]
    DegenerateProbes,
    #[error("no probe points given")]
    NoProbes,
    #[error("empty result set")]
    Empty,
    #[error("no finite baseline time for batch size 1")]
    UndefinedBaseline,
    #[error("nonpositive value {value} at index {index}; use a geometric-rate fit")]
    NonPositive { index: usize, value: f64 },
    #[error("need at least two points in the fit window")]
    ShortWindow,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn sample_grads(inst: &ProblemInstance, x: &Vector) -> Vec<Vector> {
    (0..inst.n_samples())
        .map(|i| inst.loss_eval(x, i).expect("valid index and dimension").subgradient)
        .collect()
}

/// Exact variance `Σ wᵢ ‖gᵢ − ∇f‖²` and `∇f` at `x`.
fn population_variance(inst: &ProblemInstance, grads: &[Vector]) -> (f64, Vector) {
    let mean = grads
        .iter()
        .enumerate()
        .fold(Vector::zeros(inst.dim()), |acc, (i, g)| acc + g * inst.weight(i));
    let var = grads
        .iter()
        .enumerate()
        .map(|(i, g)| inst.weight(i) * (g - &mean).norm_squared())
        .sum();
    (var, mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sigma0Estimate {
    pub sigma0_sq: f64,
    /// Index of the maximizing probe.
    pub argmax: usize,
    pub per_probe: Vec<f64>,
}

/// `max_x E‖F'(x;S) − ∇f(x)‖²` over the probes. With `draws = None` the
/// expectation is enumerated exactly; otherwise it is the unbiased Monte Carlo
/// mean of `draws` sampled squared deviations from the exact `∇f(x)`.
pub fn estimate_sigma0<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    probes: &[Vector],
    draws: Option<usize>,
    rng: &mut R,
) -> Result<Sigma0Estimate, AnalysisError> {
    if probes.is_empty() {
        return Err(AnalysisError::NoProbes);
    }
    if let Some(d) = draws {
        if d < 2 {
            return Err(AnalysisError::TooFewDraws { needed: 2, got: d });
        }
    }
    let mut per_probe = Vec::with_capacity(probes.len());
    for x in probes {
        let grads = sample_grads(inst, x);
        let (var, mean) = population_variance(inst, &grads);
        let v = match draws {
            None => var,
            Some(d) => {
                let batch = inst.sample_batch(d, rng)?;
                batch
                    .indices
                    .iter()
                    .map(|&i| (&grads[i] - &mean).norm_squared())
                    .sum::<f64>()
                    / d as f64
            }
        };
        per_probe.push(v);
    }
    let (argmax, &sigma0_sq) = per_probe
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    Ok(Sigma0Estimate {
        sigma0_sq,
        argmax,
        per_probe,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseToSignal {
    pub rho: f64,
    pub argmax: usize,
    /// Probes skipped because `∇f(x)` vanished.
    pub skipped: usize,
}

/// `max_x Var(F'(x;S)) / ‖∇f(x)‖²` by exact enumeration.
pub fn estimate_noise_to_signal(inst: &ProblemInstance, probes: &[Vector]) -> Result<NoiseToSignal, AnalysisError> {
    if probes.is_empty() {
        return Err(AnalysisError::NoProbes);
    }
    let mut best: Option<(usize, f64)> = None;
    let mut skipped = 0;
    for (p, x) in probes.iter().enumerate() {
        let grads = sample_grads(inst, x);
        let (var, mean) = population_variance(inst, &grads);
        let signal = mean.norm_squared();
        if signal <= 1e-24 * (1.0 + var) {
            skipped += 1;
            continue;
        }
        let ratio = var / signal;
        if best.is_none_or(|(_, r)| ratio > r) {
            best = Some((p, ratio));
        }
    }
    let (argmax, rho) = best.ok_or(AnalysisError::DegenerateProbes)?;
    Ok(NoiseToSignal { rho, argmax, skipped })
}

/// Fitted constants of the growth condition
/// `E[(F(x)−F(x*))·min{α, (F(x)−F(x*))/‖F'(x)‖²}] ≥ min{λ₀α, λ₁D^{1−γ}}·D^{1+γ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    pub gamma: f64,
    pub lambda0_hat: f64,
    pub lambda1_hat: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub probe_radii: Vec<f64>,
    /// Samples (or batches) per probe; `None` for exact enumeration.
    pub draws: Option<usize>,
    /// 95% normal half-width of `λ₁` at its minimizing probe (0 when exact).
    pub lambda1_half_width: f64,
    pub lambda0_half_width: f64,
    /// Probe evaluations where a sample was below its value at `x*`.
    pub below_optimum: usize,
}

impl GrowthEstimate {
    /// Right-hand side of the growth inequality.
    pub fn lower_bound(&self, alpha: f64, dist: f64) -> f64 {
        (self.lambda0_hat * alpha).min(self.lambda1_hat * dist.powf(1.0 - self.gamma)) * dist.powf(1.0 + self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GrowthOptions {
    /// Per-probe draws; `None` enumerates the dataset (batch size 1 only).
    pub draws: Option<usize>,
    /// Batch size of the averaged losses.
    pub batch_size: usize,
}

struct ProbeMoments {
    mean: f64,
    std_err: f64,
}

fn moments(xs: &[f64], weights: Option<&[f64]>) -> ProbeMoments {
    match weights {
        Some(w) => {
            let mean: f64 = xs.iter().zip(w).map(|(x, w)| x * w).sum();
            ProbeMoments { mean, std_err: 0.0 }
        }
        None => {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = if xs.len() > 1 {
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            ProbeMoments {
                mean,
                std_err: (var / n).sqrt(),
            }
        }
    }
}

/// Per-batch quantity `(F̄(x) − F̄(x*))·min{α, (F̄(x) − F̄(x*))/‖F̄'(x)‖²}`.
fn growth_term(inst: &ProblemInstance, x: &Vector, x_star: &Vector, rows: &[usize], alpha: f64) -> (f64, bool) {
    let m = rows.len() as f64;
    let mut excess = 0.0;
    let mut grad = Vector::zeros(inst.dim());
    let mut below = false;
    for &i in rows {
        let ex = inst.loss_eval(x, i).expect("valid row");
        let opt = inst.loss_eval(x_star, i).expect("valid row").value;
        below |= ex.value < opt - 1e-12 * (1.0 + opt.abs());
        excess += (ex.value - opt) / m;
        grad += ex.subgradient / m;
    }
    let gn2 = grad.norm_squared();
    if excess <= 0.0 {
        return (0.0, below || excess < 0.0);
    }
    let step = if gn2 == 0.0 { alpha } else { alpha.min(excess / gn2) };
    (excess * step, below)
}

/// Fits `λ₁` as the smallest `E_∞/D²` over probes `x* + r·d` (`d` uniform on
/// the sphere, `directions` per radius), where `E_∞` is the expectation above
/// at `α = ∞`; convexity keeps it in `[0, 1]`. `λ₀` is then the largest value
/// for which every probe satisfies the inequality at the given `α`.
pub fn estimate_gamma_growth<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    gamma: f64,
    alpha: f64,
    radii: &[f64],
    directions: usize,
    opts: &GrowthOptions,
    rng: &mut R,
) -> Result<GrowthEstimate, AnalysisError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(AnalysisError::Invalid(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    if !(alpha > 0.0) || radii.is_empty() || radii.iter().any(|&r| !(r > 0.0)) || directions == 0 {
        return Err(AnalysisError::Invalid("need alpha > 0, positive radii and directions >= 1".into()));
    }
    let m = opts.batch_size.max(1);
    if opts.draws.is_none() && m > 1 {
        return Err(AnalysisError::Invalid("exact enumeration needs batch size 1".into()));
    }
    if let Some(d) = opts.draws {
        if d < 2 {
            return Err(AnalysisError::TooFewDraws { needed: 2, got: d });
        }
    }
    let x_star = inst
        .reference_optimum()?
        .x_star
        .clone()
        .ok_or_else(|| AnalysisError::Invalid("the growth fit needs an attained minimizer".into()))?;
    let n = inst.dim();
    let weights: Option<Vec<f64>> = opts
        .draws
        .is_none()
        .then(|| (0..inst.n_samples()).map(|i| inst.weight(i)).collect());

    // (dist, E_alpha, se_alpha, E_inf, se_inf)
    let mut probes = Vec::new();
    let mut below_optimum = 0;
    for &r in radii {
        for _ in 0..directions {
            let d = Vector::from_iterator(n, (0..n).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)));
            let x = &x_star + d.normalize() * r;
            let batches: Vec<Vec<usize>> = match opts.draws {
                None => (0..inst.n_samples()).map(|i| vec![i]).collect(),
                Some(draws) => (0..draws)
                    .map(|_| inst.sample_batch(m, rng).map(|b| b.indices))
                    .collect::<Result<_, _>>()?,
            };
            let mut fin = Vec::with_capacity(batches.len());
            let mut inf = Vec::with_capacity(batches.len());
            for rows in &batches {
                let (ea, b1) = growth_term(inst, &x, &x_star, rows, alpha);
                let (ei, b2) = growth_term(inst, &x, &x_star, rows, f64::INFINITY);
                below_optimum += usize::from(b1 || b2);
                fin.push(ea);
                inf.push(ei);
            }
            let ma = moments(&fin, weights.as_deref());
            let mi = moments(&inf, weights.as_deref());
            probes.push((r, ma.mean, ma.std_err, mi.mean, mi.std_err));
        }
    }

    let (mut lambda1, mut l1_se) = (f64::INFINITY, 0.0);
    for &(dist, _, _, ei, se) in &probes {
        let v = ei / (dist * dist);
        if v < lambda1 {
            lambda1 = v;
            l1_se = se / (dist * dist);
        }
    }
    let lambda1 = lambda1.clamp(0.0, 1.0);
    let ratio0 = |dist: f64, ea: f64| ea / (alpha * dist.powf(1.0 + gamma));
    let binding: Vec<_> = probes
        .iter()
        .filter(|&&(dist, ea, ..)| lambda1 * dist * dist > ea)
        .collect();
    let pool: Vec<_> = if binding.is_empty() { probes.iter().collect() } else { binding };
    let (mut lambda0, mut l0_se) = (f64::INFINITY, 0.0);
    for &&(dist, ea, se, ..) in &pool {
        let v = ratio0(dist, ea);
        if v < lambda0 {
            lambda0 = v;
            l0_se = se / (alpha * dist.powf(1.0 + gamma));
        }
    }
    let lambda0 = if lambda0.is_finite() { lambda0.max(0.0) } else { 0.0 };

    let est = GrowthEstimate {
        gamma,
        lambda0_hat: lambda0,
        lambda1_hat: lambda1,
        alpha,
        batch_size: m,
        probe_radii: radii.to_vec(),
        draws: opts.draws,
        lambda1_half_width: 1.96 * l1_se,
        lambda0_half_width: 1.96 * l0_se,
        below_optimum,
    };
    for &(dist, ea, ..) in &probes {
        debug_assert!(ea >= est.lower_bound(alpha, dist) - 1e-12 * ea.abs().max(1.0));
    }
    Ok(est)
}

/// Growth constants of batch-averaged losses implied by per-sample constants:
/// `λ₀ = ⌊mp⌋μ/(4m)` and `λ₁ = (⌊mp⌋/m)²μ²/(16L²(1 + ρ/m))`.
pub fn batch_growth_constants(m: usize, p: f64, mu: f64, l: f64, rho: f64) -> (f64, f64) {
    let mf = m as f64;
    let frac = (mf * p).floor() / mf;
    let lambda0 = frac * mu / 4.0;
    let lambda1 = frac * frac * mu * mu / (16.0 * l * l * (1.0 + rho / mf));
    (lambda0, lambda1)
}

/// Fraction-of-experiments curve for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub method: String,
    /// Sorted breakpoints (finite ratios, all ≥ 1).
    pub ratios: Vec<f64>,
    /// Curve value at each breakpoint; non-decreasing in `[0, 1]`.
    pub values: Vec<f64>,
    pub experiments: usize,
}

impl ProfileCurve {
    /// Fraction of experiments solved within a factor `r` of the best method.
    pub fn value_at(&self, r: f64) -> f64 {
        let idx = self.ratios.partition_point(|&x| x <= r);
        if idx == 0 {
            0.0
        } else {
            self.values[idx - 1]
        }
    }
}

/// Per-experiment times for every method; `None` marks a failure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileTable {
    pub methods: Vec<String>,
    pub experiments: BTreeMap<String, BTreeMap<String, Option<f64>>>,
}

impl ProfileTable {
    pub fn insert(&mut self, experiment: &str, method: &str, time: Option<f64>) {
        if !self.methods.iter().any(|m| m == method) {
            self.methods.push(method.to_string());
        }
        self.experiments
            .entry(experiment.to_string())
            .or_default()
            .insert(method.to_string(), time);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub curves: Vec<ProfileCurve>,
    pub kept: usize,
    pub discarded: usize,
}

/// Experiments where more than this many methods fail are dropped.
pub const MAX_FAILURES: usize = 3;

/// Performance profiles: `r_{a,e} = T_{a,e} / min_{a'} T_{a',e}` and
/// `curve_a(r)` the fraction of kept experiments with `r_{a,e} ≤ r`.
/// Failures (and methods missing from an experiment) count as `r = ∞`.
pub fn performance_profile(table: &ProfileTable, methods: &[String]) -> Result<ProfileReport, AnalysisError> {
    if table.experiments.is_empty() || methods.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut ratios: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
    let (mut kept, mut discarded) = (0, 0);
    for cells in table.experiments.values() {
        let times: Vec<Option<f64>> = methods
            .iter()
            .map(|m| cells.get(m).copied().flatten().filter(|t| t.is_finite()))
            .collect();
        let failures = times.iter().filter(|t| t.is_none()).count();
        if failures > MAX_FAILURES {
            discarded += 1;
            continue;
        }
        kept += 1;
        let best = times.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        for (a, t) in times.iter().enumerate() {
            if let Some(t) = t {
                ratios[a].push(if best > 0.0 { t / best } else if *t == 0.0 { 1.0 } else { f64::INFINITY });
            }
        }
    }
    let curves = methods
        .iter()
        .zip(ratios)
        .map(|(m, mut rs)| {
            rs.retain(|r| r.is_finite());
            rs.sort_by(f64::total_cmp);
            let mut pts: Vec<f64> = Vec::new();
            let mut vals: Vec<f64> = Vec::new();
            for (i, &r) in rs.iter().enumerate() {
                let frac = (i + 1) as f64 / kept.max(1) as f64;
                if pts.last() == Some(&r) {
                    *vals.last_mut().expect("paired") = frac;
                } else {
                    pts.push(r);
                    vals.push(frac);
                }
            }
            ProfileCurve {
                method: m.clone(),
                ratios: pts,
                values: vals,
                experiments: kept,
            }
        })
        .collect();
    Ok(ProfileReport {
        curves,
        kept,
        discarded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMeasure {
    /// Iterations `k` to reach the target.
    #[default]
    Iterations,
    /// Samples `k·m`.
    Samples,
}

/// One cell of a speedup study.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupRow {
    pub method: String,
    pub m: usize,
    pub alpha0: f64,
    pub seed: u64,
    pub k_to_eps: Option<usize>,
}

/// Median with failures as `+∞`.
fn median_with_failures(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// `T*_{a,m} = min over α₀ of the median over seeds of T_{a,m}(α₀)`.
pub fn best_time(rows: &[SpeedupRow], method: &str, m: usize, measure: CostMeasure) -> f64 {
    let mut by_alpha: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method == method && r.m == m) {
        let cost = match (r.k_to_eps, measure) {
            (None, _) => f64::INFINITY,
            (Some(k), CostMeasure::Iterations) => k as f64,
            (Some(k), CostMeasure::Samples) => (k * m) as f64,
        };
        by_alpha.entry(r.alpha0.to_bits()).or_default().push(cost);
    }
    by_alpha
        .into_values()
        .map(median_with_failures)
        .fold(f64::INFINITY, f64::min)
}

/// Speedup `T*_{a,1}/T*_{a,m}` for every batch size present.
pub fn speedup_table(rows: &[SpeedupRow], method: &str, measure: CostMeasure) -> Result<BTreeMap<usize, f64>, AnalysisError> {
    let ms: std::collections::BTreeSet<usize> = rows.iter().filter(|r| r.method == method).map(|r| r.m).collect();
    if ms.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let base = best_time(rows, method, 1, measure);
    if !base.is_finite() {
        return Err(AnalysisError::UndefinedBaseline);
    }
    Ok(ms
        .into_iter()
        .map(|m| (m, base / best_time(rows, method, m, measure)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::Invalid("xs and ys differ in length".into()));
    }
    if xs.len() < 2 {
        return Err(AnalysisError::ShortWindow);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::Invalid("constant abscissae".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Points `(k, value)` with `k` in `[lo, hi]`.
fn window(ks: &[usize], values: &[f64], lo: usize, hi: usize) -> (Vec<usize>, Vec<f64>) {
    ks.iter()
        .zip(values)
        .filter(|(k, _)| **k >= lo && **k <= hi)
        .map(|(k, v)| (*k, *v))
        .unzip()
}

/// Slope of `log(value)` against `log(k)` over the window.
pub fn log_log_slope(ks: &[usize], values: &[f64], lo: usize, hi: usize) -> Result<LinearFit, AnalysisError> {
    let (k, v) = window(ks, values, lo, hi);
    if let Some((i, &val)) = v.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(AnalysisError::NonPositive { index: k[i], value: val });
    }
    let lx: Vec<f64> = k.iter().map(|&k| (k as f64).ln()).collect();
    let ly: Vec<f64> = v.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

/// Slope of `log(value)` against `k` (a geometric rate `ln q`).
pub fn geometric_rate(ks: &[usize], values: &[f64], lo: usize, hi: usize) -> Result<LinearFit, AnalysisError> {
    let (k, v) = window(ks, values, lo, hi);
    if let Some((i, &val)) = v.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(AnalysisError::NonPositive { index: k[i], value: val });
    }
    let lx: Vec<f64> = k.iter().map(|&k| k as f64).collect();
    let ly: Vec<f64> = v.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

/// Log-log slope of a run's recorded gap over `k ∈ [lo, hi]`.
pub fn rate_slope(record: &RunRecord, lo: usize, hi: usize) -> Result<f64, AnalysisError> {
    log_log_slope(&record.iterations, &record.gap_trace, lo, hi).map(|f| f.slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{ProblemKind, ProblemParams};
    use crate::StreamRng;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> StreamRng {
        StreamRng::seed_from_u64(seed)
    }

    fn small_linreg() -> ProblemInstance {
        let a = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0, -1.0, 3.0, 2.0, -0.5]);
        let b = Vector::from_column_slice(&[1.0, -1.0, 0.5, 2.0, 0.0]);
        ProblemInstance::from_data(ProblemKind::LinReg, a, b, None).unwrap()
    }

    #[test]
    fn sigma0_single_sample_is_zero() {
        let inst = ProblemInstance::from_data(
            ProblemKind::LinReg,
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            Vector::from_element(1, 3.0),
            None,
        )
        .unwrap();
        let est = estimate_sigma0(&inst, &[Vector::from_element(2, 0.4)], None, &mut rng(0)).unwrap();
        assert_eq!(est.sigma0_sq, 0.0);
    }

    #[test]
    fn sigma0_vanishes_at_interpolating_solution() {
        let inst = ProblemInstance::generate(&ProblemParams::new(ProblemKind::LinReg, 40, 3).with_seed(1)).unwrap();
        let x = inst.planted().unwrap().clone();
        let est = estimate_sigma0(&inst, &[x], Some(100), &mut rng(1)).unwrap();
        assert!(est.sigma0_sq < 1e-20);
    }

    #[test]
    fn sigma0_matches_enumeration() {
        let inst = small_linreg();
        let x = Vector::from_column_slice(&[0.3, -0.2]);
        // Independent enumeration: per-sample gradients (aᵢᵀx − bᵢ)aᵢ.
        let (a, b) = inst.data();
        let grads: Vec<Vector> = (0..5)
            .map(|i| a.row(i).transpose() * (a.row(i).transpose().dot(&x) - b[i]))
            .collect();
        let mean = grads.iter().fold(Vector::zeros(2), |s, g| s + g) / 5.0;
        let oracle = grads.iter().map(|g| (g - &mean).norm_squared()).sum::<f64>() / 5.0;
        let est = estimate_sigma0(&inst, &[x.clone()], None, &mut rng(0)).unwrap();
        assert!((est.sigma0_sq - oracle).abs() < 1e-12);
        let mc = estimate_sigma0(&inst, &[x], Some(200_000), &mut rng(2)).unwrap();
        assert!((mc.sigma0_sq - oracle).abs() < 0.02 * oracle);
        assert!(estimate_sigma0(&inst, &[Vector::zeros(2)], Some(1), &mut rng(0)).is_err());
    }

    #[test]
    fn noise_to_signal_cases() {
        let single = ProblemInstance::from_data(
            ProblemKind::LinReg,
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            Vector::from_element(1, 3.0),
            None,
        )
        .unwrap();
        let probes = [Vector::from_column_slice(&[0.1, 0.1])];
        assert_eq!(estimate_noise_to_signal(&single, &probes).unwrap().rho, 0.0);

        // Four hand rows: gradients at x = 0 are −bᵢaᵢ.
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 0.0]);
        let b = Vector::from_column_slice(&[1.0, 2.0, -1.0, 0.5]);
        let inst = ProblemInstance::from_data(ProblemKind::LinReg, a.clone(), b.clone(), None).unwrap();
        let g: [[f64; 2]; 4] = [[-1.0, 0.0], [0.0, -2.0], [1.0, 1.0], [-1.0, 0.0]];
        let mean: [f64; 2] = [(-1.0 + 0.0 + 1.0 - 1.0) / 4.0, (0.0 - 2.0 + 1.0 + 0.0) / 4.0];
        let var: f64 = g
            .iter()
            .map(|v| (v[0] - mean[0]).powi(2) + (v[1] - mean[1]).powi(2))
            .sum::<f64>()
            / 4.0;
        let oracle = var / (mean[0] * mean[0] + mean[1] * mean[1]);
        let est = estimate_noise_to_signal(&inst, &[Vector::zeros(2)]).unwrap();
        assert!((est.rho - oracle).abs() < 1e-12);

        let doubled = ProblemInstance::from_data(
            ProblemKind::LinReg,
            DMatrix::from_fn(8, 2, |i, j| a[(i % 4, j)]),
            Vector::from_fn(8, |i, _| b[i % 4]),
            None,
        )
        .unwrap();
        let est2 = estimate_noise_to_signal(&doubled, &[Vector::zeros(2)]).unwrap();
        assert!((est2.rho - est.rho).abs() < 1e-12);
    }

    #[test]
    fn growth_of_absolute_value_is_one() {
        // f = |x| in 1-d: F²/F'² = x², so λ₁ = 1.
        let inst = ProblemInstance::from_data(
            ProblemKind::PowerReg { gamma: 0.0 },
            DMatrix::from_element(1, 1, 1.0),
            Vector::zeros(1),
            Some(Vector::zeros(1)),
        )
        .unwrap();
        let est = estimate_gamma_growth(&inst, 0.0, 1e6, &[0.5, 1.0, 2.0], 3, &GrowthOptions::default(), &mut rng(0)).unwrap();
        assert!((est.lambda1_hat - 1.0).abs() < 1e-12);
        assert!(est.lambda1_hat <= 1.0);
    }

    #[test]
    fn batch_growth_constants_formula() {
        let (l0, l1) = batch_growth_constants(8, 0.5, 2.0, 1.0, 4.0);
        assert!((l0 - 0.25).abs() < 1e-15);
        assert!((l1 - 0.25 * 4.0 / (16.0 * 1.5)).abs() < 1e-15);
    }

    fn table(rows: &[(&str, &str, Option<f64>)]) -> ProfileTable {
        let mut t = ProfileTable::default();
        for (e, m, v) in rows {
            t.insert(e, m, *v);
        }
        t
    }

    #[test]
    fn profile_examples() {
        let t = table(&[("e1", "a", Some(10.0)), ("e1", "b", Some(20.0)), ("e2", "a", Some(30.0)), ("e2", "b", Some(15.0))]);
        let rep = performance_profile(&t, &["a".into(), "b".into()]).unwrap();
        for c in &rep.curves {
            assert_eq!(c.value_at(1.0), 0.5);
            assert_eq!(c.value_at(2.0), 1.0);
            assert_eq!(c.value_at(0.99), 0.0);
        }

        let t = table(&[("e1", "a", Some(3.0)), ("e2", "a", Some(1.0))]);
        let rep = performance_profile(&t, &["a".into()]).unwrap();
        assert_eq!(rep.curves[0].value_at(1.0), 1.0);

        let t = table(&[("e1", "a", Some(3.0)), ("e1", "b", None), ("e2", "a", Some(1.0)), ("e2", "b", None)]);
        let rep = performance_profile(&t, &["a".into(), "b".into()]).unwrap();
        assert_eq!(rep.curves[1].value_at(1e9), 0.0);
        assert!(performance_profile(&ProfileTable::default(), &["a".into()]).is_err());
    }

    #[test]
    fn profile_discards_cells_with_many_failures() {
        let methods: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let mut t = ProfileTable::default();
        for (i, m) in methods.iter().enumerate() {
            t.insert("bad", m, if i == 0 { Some(1.0) } else { None });
            t.insert("good", m, Some(1.0 + i as f64));
        }
        let rep = performance_profile(&t, &methods).unwrap();
        assert_eq!((rep.kept, rep.discarded), (1, 1));
        assert_eq!(rep.curves[0].value_at(1.0), 1.0);
    }

    fn row(m: usize, alpha0: f64, seed: u64, k: Option<usize>) -> SpeedupRow {
        SpeedupRow {
            method: "pma".into(),
            m,
            alpha0,
            seed,
            k_to_eps: k,
        }
    }

    #[test]
    fn speedup_examples() {
        // T = C/m exactly.
        let rows: Vec<SpeedupRow> = [1, 2, 4, 8].iter().map(|&m| row(m, 1.0, 0, Some(800 / m))).collect();
        let table = speedup_table(&rows, "pma", CostMeasure::Iterations).unwrap();
        assert_eq!(table[&1], 1.0);
        for (&m, &s) in &table {
            assert!((s - m as f64).abs() < 1e-12);
        }
        // Three-point table with two stepsizes and a failure.
        let rows = vec![
            row(1, 1.0, 0, Some(100)),
            row(1, 1.0, 1, Some(120)),
            row(1, 1.0, 2, None),
            row(1, 0.1, 0, Some(90)),
            row(1, 0.1, 1, Some(200)),
            row(1, 0.1, 2, Some(300)),
            row(4, 1.0, 0, Some(30)),
            row(4, 1.0, 1, Some(40)),
            row(4, 1.0, 2, Some(50)),
        ];
        let table = speedup_table(&rows, "pma", CostMeasure::Iterations).unwrap();
        // m = 1: medians 120 (α₀ = 1) and 200 → 120; m = 4: 40.
        assert!((table[&4] - 3.0).abs() < 1e-12);
        let samples = speedup_table(&rows, "pma", CostMeasure::Samples).unwrap();
        assert!((samples[&4] - 0.75).abs() < 1e-12);
        assert!(speedup_table(&[row(1, 1.0, 0, None), row(2, 1.0, 0, Some(1))], "pma", CostMeasure::Iterations).is_err());
    }

    #[test]
    fn slope_examples() {
        let ks: Vec<usize> = (1..=1000).collect();
        let inv: Vec<f64> = ks.iter().map(|&k| 1.0 / k as f64).collect();
        let inv2: Vec<f64> = ks.iter().map(|&k| 1.0 / (k * k) as f64).collect();
        assert!((log_log_slope(&ks, &inv, 10, 1000).unwrap().slope + 1.0).abs() < 1e-12);
        assert!((log_log_slope(&ks, &inv2, 10, 1000).unwrap().slope + 2.0).abs() < 1e-12);
        let mut r = rng(5);
        let noisy: Vec<f64> = ks
            .iter()
            .map(|&k| 3.0 * (k as f64).powf(-1.5) * (1.0 + 0.01 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)))
            .collect();
        assert!((log_log_slope(&ks, &noisy, 10, 1000).unwrap().slope + 1.5).abs() < 0.05);
        let zeros = vec![0.0; 1000];
        assert!(matches!(log_log_slope(&ks, &zeros, 1, 10), Err(AnalysisError::NonPositive { .. })));
        let geo: Vec<f64> = ks.iter().map(|&k| 0.9f64.powi(k as i32)).collect();
        let fit = geometric_rate(&ks, &geo, 1, 100).unwrap();
        assert!((fit.slope - 0.9f64.ln()).abs() < 1e-12);
        assert!(fit.r_squared > 0.999_999);
    }

    proptest! {
        #[test]
        fn profile_curves_are_monotone_and_bounded(times in prop::collection::vec(prop::option::of(1.0f64..100.0), 12)) {
            let methods: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
            let mut t = ProfileTable::default();
            for (i, v) in times.iter().enumerate() {
                t.insert(&format!("e{}", i / 3), &methods[i % 3], *v);
            }
            let rep = performance_profile(&t, &methods).unwrap();
            for c in rep.curves {
                prop_assert!(c.values.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert!(c.ratios.iter().all(|&r| r >= 1.0));
            }
        }

        #[test]
        fn sigma0_is_permutation_invariant(seed in 0u64..1000) {
            let inst = ProblemInstance::generate(&ProblemParams::new(ProblemKind::LinReg, 12, 3).with_seed(seed)).unwrap();
            let (a, b) = inst.data();
            let perm: Vec<usize> = (0..12).rev().collect();
            let shuffled = ProblemInstance::from_data(
                ProblemKind::LinReg,
                DMatrix::from_fn(12, 3, |i, j| a[(perm[i], j)]),
                Vector::from_fn(12, |i, _| b[perm[i]]),
                None,
            ).unwrap();
            let x = Vector::from_element(3, 0.5);
            let e1 = estimate_sigma0(&inst, &[x.clone()], None, &mut rng(0)).unwrap();
            let e2 = estimate_sigma0(&shuffled, &[x], None, &mut rng(0)).unwrap();
            prop_assert!((e1.sigma0_sq - e2.sigma0_sq).abs() <= 1e-10 * e1.sigma0_sq.max(1.0));
        }
    }
}
