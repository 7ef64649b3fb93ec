//! Solvers for the regularized model subproblem
//! `argmin_x model(x) + r(x) + D_h(x, c) / α`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{mirror_linear_step, project_domain, DgfKind, DistanceGenerator, Domain, GeometryError};
use crate::models::{BatchData, BatchModel, BatchStrategy, ModelKind};
use crate::problems::{sigmoid, softplus, Loss};
use crate::Vector;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const MAX_SWEEPS: usize = 20_000;
const NEWTON_BUDGET: usize = 100;
const ARMIJO_C: f64 = 1e-4;
const ARMIJO_BETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProxError {
    #[error("stepsize must be positive, got {0}")]
    InvalidStep(f64),
    #[error("an infinite stepsize is only supported for truncated steps")]
    InfiniteStep,
    #[error("zero gradient while the model value {value} exceeds its lower bound {lower}")]
    DegenerateGradient { value: f64, lower: f64 },
    #[error("inner solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },
    #[error("unsupported subproblem: {0}")]
    Unsupported(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid box constraints: {0}")]
    InvalidBox(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Known composite term added to every subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    Zero,
    /// `(μ/2)‖x‖²`
    SquaredL2 { mu: f64 },
}

impl Regularizer {
    pub fn value(&self, x: &Vector) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::SquaredL2 { mu } => 0.5 * mu * x.norm_squared(),
        }
    }

    pub fn mu(&self) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::SquaredL2 { mu } => mu,
        }
    }

    /// Absorbs `(μ/2)‖x‖²` into the Euclidean prox term:
    /// `(μ/2)‖x‖² + ‖x − c‖²/(2α) = ‖x − c/(1+αμ)‖² (1+αμ)/(2α) + const`.
    pub fn fold(&self, alpha: f64, center: &Vector) -> (f64, Vector) {
        let mu = self.mu();
        if mu == 0.0 {
            return (alpha, center.clone());
        }
        if alpha.is_infinite() {
            return (1.0 / mu, Vector::zeros(center.len()));
        }
        let s = 1.0 + alpha * mu;
        (alpha / s, center / s)
    }
}

/// Output of one subproblem solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub x_next: Vector,
    /// Dual multipliers for the box-QP based solvers.
    pub dual: Option<Vector>,
    /// Certified suboptimality of `x_next` for the subproblem (0 for closed forms).
    pub duality_gap: f64,
    pub inner_iterations: usize,
}

impl ProxResult {
    fn exact(x_next: Vector) -> Self {
        Self {
            x_next,
            dual: None,
            duality_gap: 0.0,
            inner_iterations: 0,
        }
    }
}

fn check_step(alpha: f64) -> Result<(), ProxError> {
    if alpha > 0.0 {
        Ok(())
    } else {
        Err(ProxError::InvalidStep(alpha))
    }
}

fn check_finite_step(alpha: f64) -> Result<(), ProxError> {
    check_step(alpha)?;
    if alpha.is_infinite() {
        return Err(ProxError::InfiniteStep);
    }
    Ok(())
}

/// `argmin ⟨g, x⟩ + D_h(x, x_k)/α` over the domain.
pub fn linear_step(
    h: &DistanceGenerator,
    dom: &Domain,
    x_k: &Vector,
    g: &Vector,
    alpha: f64,
) -> Result<Vector, ProxError> {
    check_finite_step(alpha)?;
    Ok(mirror_linear_step(h, dom, x_k, g, alpha)?)
}

/// Polyak-truncated step `x_k − min{α, (value − Λ)/‖g‖²}·g`, the prox of
/// `max{value + ⟨g, · − x_k⟩, Λ}`. `α = ∞` gives the pure Polyak step.
pub fn truncated_step(
    x_k: &Vector,
    value: f64,
    g: &Vector,
    lower: f64,
    alpha: f64,
) -> Result<Vector, ProxError> {
    check_step(alpha)?;
    if g.len() != x_k.len() {
        return Err(ProxError::DimensionMismatch {
            expected: x_k.len(),
            found: g.len(),
        });
    }
    let excess = value - lower;
    if excess <= 0.0 {
        return Ok(x_k.clone());
    }
    let gn2 = g.norm_squared();
    if gn2 == 0.0 {
        return Err(ProxError::DegenerateGradient { value, lower });
    }
    let step = alpha.min(excess / gn2);
    Ok(x_k - g * step)
}

/// `max_λ −(α/2)λᵀQλ + λᵀv` subject to `lo ≤ λ ≤ hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    pub q: DMatrix<f64>,
    pub v: Vector,
    pub alpha: f64,
    pub lo: Vector,
    pub hi: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQpSolution {
    pub lambda: Vector,
    pub kkt_residual: f64,
    /// Full coordinate sweeps performed.
    pub iterations: usize,
    pub converged: bool,
}

fn check_box(m: usize, v: &Vector, lo: &Vector, hi: &Vector, alpha: f64) -> Result<(), ProxError> {
    check_finite_step(alpha)?;
    for len in [v.len(), lo.len(), hi.len()] {
        if len != m {
            return Err(ProxError::DimensionMismatch {
                expected: m,
                found: len,
            });
        }
    }
    if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
        return Err(ProxError::InvalidBox("need lo <= hi".into()));
    }
    if lo.iter().chain(hi.iter()).any(|b| !b.is_finite()) {
        return Err(ProxError::InvalidBox("bounds must be finite".into()));
    }
    Ok(())
}

impl BoxQp {
    pub fn new(q: DMatrix<f64>, v: Vector, alpha: f64, lo: Vector, hi: Vector) -> Result<Self, ProxError> {
        let m = q.nrows();
        if q.ncols() != m {
            return Err(ProxError::DimensionMismatch {
                expected: m,
                found: q.ncols(),
            });
        }
        check_box(m, &v, &lo, &hi, alpha)?;
        let scale = q.amax().max(1.0);
        if (&q - q.transpose()).amax() > 1e-12 * scale {
            return Err(ProxError::InvalidBox("Q must be symmetric".into()));
        }
        Ok(Self { q, v, alpha, lo, hi })
    }

    pub fn with_uniform_box(q: DMatrix<f64>, v: Vector, alpha: f64, lo: f64, hi: f64) -> Result<Self, ProxError> {
        let m = v.len();
        Self::new(q, v, alpha, Vector::from_element(m, lo), Vector::from_element(m, hi))
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn objective(&self, lambda: &Vector) -> f64 {
        -0.5 * self.alpha * lambda.dot(&(&self.q * lambda)) + lambda.dot(&self.v)
    }

    /// `v − αQλ`.
    pub fn gradient(&self, lambda: &Vector) -> Vector {
        &self.v - (&self.q * lambda) * self.alpha
    }

    /// Largest violation of the box KKT conditions.
    pub fn kkt_residual(&self, lambda: &Vector) -> f64 {
        kkt_residual(&self.gradient(lambda), lambda, &self.lo, &self.hi)
    }
}

fn kkt_residual(grad: &Vector, lambda: &Vector, lo: &Vector, hi: &Vector) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let g = grad[i];
        let r = if lo[i] == hi[i] {
            0.0
        } else if lambda[i] <= lo[i] {
            g.max(0.0)
        } else if lambda[i] >= hi[i] {
            (-g).max(0.0)
        } else {
            g.abs()
        };
        worst = worst.max(r);
    }
    worst
}

/// Access to `Q` either as a dense matrix or through a factor `Q = GᵀG`.
/// `aux` caches `Qλ` (dense) or `Gλ` (factored).
trait GramOperator {
    fn size(&self) -> usize;
    fn diag(&self, i: usize) -> f64;
    fn entry(&self, i: usize, j: usize) -> f64;
    fn init(&self, lambda: &Vector) -> Vector;
    fn q_lambda(&self, i: usize, aux: &Vector) -> f64;
    fn shift(&self, i: usize, delta: f64, aux: &mut Vector);
    /// `λᵀQλ` given `aux` from `init(λ)`.
    fn quad(&self, lambda: &Vector, aux: &Vector) -> f64;
}

struct DenseGram<'a>(&'a DMatrix<f64>);

impl GramOperator for DenseGram<'_> {
    fn size(&self) -> usize {
        self.0.nrows()
    }
    fn diag(&self, i: usize) -> f64 {
        self.0[(i, i)]
    }
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
    fn init(&self, lambda: &Vector) -> Vector {
        self.0 * lambda
    }
    fn q_lambda(&self, i: usize, aux: &Vector) -> f64 {
        aux[i]
    }
    fn shift(&self, i: usize, delta: f64, aux: &mut Vector) {
        aux.axpy(delta, &self.0.column(i), 1.0);
    }
    fn quad(&self, lambda: &Vector, aux: &Vector) -> f64 {
        lambda.dot(aux)
    }
}

struct FactoredGram<'a> {
    g: &'a DMatrix<f64>,
    diag: Vec<f64>,
}

impl<'a> FactoredGram<'a> {
    fn new(g: &'a DMatrix<f64>) -> Self {
        let diag = g.column_iter().map(|c| c.norm_squared()).collect();
        Self { g, diag }
    }
}

impl GramOperator for FactoredGram<'_> {
    fn size(&self) -> usize {
        self.g.ncols()
    }
    fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.g.column(i).dot(&self.g.column(j))
    }
    fn init(&self, lambda: &Vector) -> Vector {
        self.g * lambda
    }
    fn q_lambda(&self, i: usize, aux: &Vector) -> f64 {
        self.g.column(i).dot(aux)
    }
    fn shift(&self, i: usize, delta: f64, aux: &mut Vector) {
        aux.axpy(delta, &self.g.column(i), 1.0);
    }
    fn quad(&self, _lambda: &Vector, aux: &Vector) -> f64 {
        aux.norm_squared()
    }
}

fn residual_with<O: GramOperator>(op: &O, v: &Vector, alpha: f64, lambda: &Vector, lo: &Vector, hi: &Vector) -> f64 {
    let aux = op.init(lambda);
    let grad = Vector::from_iterator(v.len(), (0..v.len()).map(|i| v[i] - alpha * op.q_lambda(i, &aux)));
    kkt_residual(&grad, lambda, lo, hi)
}

/// Dual objective `vᵀλ − (α/2)λᵀQλ`.
fn dual_value<O: GramOperator>(op: &O, v: &Vector, alpha: f64, lambda: &Vector) -> f64 {
    let aux = op.init(lambda);
    v.dot(lambda) - 0.5 * alpha * op.quad(lambda, &aux)
}

/// Largest `t ≤ t_max` keeping `λ + t·d` (on the free set) inside the box.
fn max_feasible_step(free: &[usize], lambda: &Vector, d: &DVector<f64>, lo: &Vector, hi: &Vector, t_max: f64) -> f64 {
    let mut t = t_max;
    for (a, &i) in free.iter().enumerate() {
        if d[a] > 0.0 {
            t = t.min((hi[i] - lambda[i]) / d[a]);
        } else if d[a] < 0.0 {
            t = t.min((lo[i] - lambda[i]) / d[a]);
        }
    }
    t.max(0.0)
}

/// Moves toward the maximizer of the current face, then along any direction
/// of the face on which the objective is linear, as far as the box allows.
/// Returns the point only if the objective did not decrease.
fn polish<O: GramOperator>(
    op: &O,
    v: &Vector,
    alpha: f64,
    lambda: &Vector,
    lo: &Vector,
    hi: &Vector,
    aux: &Vector,
) -> Option<Vector> {
    let free: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > lo[i] && lambda[i] < hi[i]).collect();
    if free.is_empty() {
        return None;
    }
    let k = free.len();
    let mut qff = DMatrix::zeros(k, k);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate().skip(a) {
            let q = op.entry(i, j);
            qff[(a, b)] = q;
            qff[(b, a)] = q;
        }
    }
    // Gradient on the face divided by α: v_F/α − (Qλ)_F.
    let grad = DVector::from_iterator(k, free.iter().map(|&i| v[i] / alpha - op.q_lambda(i, aux)));
    let svd = qff.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let newton = svd.solve(&grad, eps).ok()?;
    let mut candidate = lambda.clone();
    let t = max_feasible_step(&free, &candidate, &newton, lo, hi, 1.0);
    for (a, &i) in free.iter().enumerate() {
        candidate[i] = (candidate[i] + t * newton[a]).clamp(lo[i], hi[i]);
    }
    // Null directions of Q_FF are null directions of Q, so the objective is
    // linear along them with slope equal to the projected gradient.
    let vt = svd.v_t.as_ref()?;
    let mut ray = DVector::zeros(k);
    for (r, &s) in svd.singular_values.iter().enumerate() {
        if s <= eps {
            let row = vt.row(r).transpose();
            ray += &row * row.dot(&grad);
        }
    }
    if ray.norm() > 1e-14 * grad.norm().max(1.0) {
        let t = max_feasible_step(&free, &candidate, &ray, lo, hi, f64::INFINITY);
        if t.is_finite() {
            for (a, &i) in free.iter().enumerate() {
                candidate[i] = (candidate[i] + t * ray[a]).clamp(lo[i], hi[i]);
            }
        }
    }
    (dual_value(op, v, alpha, &candidate) >= dual_value(op, v, alpha, lambda)).then_some(candidate)
}

fn coordinate_ascent<O: GramOperator>(
    op: &O,
    v: &Vector,
    alpha: f64,
    lo: &Vector,
    hi: &Vector,
    tol: f64,
    warm: Option<&Vector>,
    max_sweeps: usize,
) -> BoxQpSolution {
    let m = op.size();
    let mut lambda = match warm {
        Some(w) if w.len() == m => w.clone(),
        _ => Vector::zeros(m),
    };
    for i in 0..m {
        lambda[i] = lambda[i].clamp(lo[i], hi[i]);
    }
    let mut aux = op.init(&lambda);
    let mut residual = residual_with(op, v, alpha, &lambda, lo, hi);
    let mut sweeps = 0;
    while residual > tol && sweeps < max_sweeps {
        sweeps += 1;
        for i in 0..m {
            let grad = v[i] - alpha * op.q_lambda(i, &aux);
            let qii = op.diag(i);
            let target = if qii > 0.0 {
                (lambda[i] + grad / (alpha * qii)).clamp(lo[i], hi[i])
            } else if grad > 0.0 {
                hi[i]
            } else if grad < 0.0 {
                lo[i]
            } else {
                lambda[i]
            };
            let delta = target - lambda[i];
            if delta != 0.0 {
                lambda[i] = target;
                op.shift(i, delta, &mut aux);
            }
        }
        if sweeps % 64 == 0 {
            aux = op.init(&lambda);
        }
        residual = residual_with(op, v, alpha, &lambda, lo, hi);
        if residual > tol && (sweeps % 8 == 0 || sweeps == 2) {
            if let Some(candidate) = polish(op, v, alpha, &lambda, lo, hi, &aux) {
                let r = residual_with(op, v, alpha, &candidate, lo, hi);
                if r < residual || sweeps % 32 == 0 {
                    lambda = candidate;
                    aux = op.init(&lambda);
                    residual = r;
                }
            }
        }
    }
    BoxQpSolution {
        lambda,
        kkt_residual: residual,
        iterations: sweeps,
        converged: residual <= tol,
    }
}

/// Cyclic coordinate ascent with exact clipped one-dimensional maximization,
/// plus occasional exact solves on the free set. Non-convergence is flagged
/// in the result, which still carries the last iterate.
pub fn solve_box_qp(qp: &BoxQp, tol: f64) -> BoxQpSolution {
    solve_box_qp_warm(qp, tol, None)
}

pub fn solve_box_qp_warm(qp: &BoxQp, tol: f64, warm: Option<&Vector>) -> BoxQpSolution {
    coordinate_ascent(&DenseGram(&qp.q), &qp.v, qp.alpha, &qp.lo, &qp.hi, tol, warm, MAX_SWEEPS)
}

/// Same problem with `Q = GᵀG` given through `G` (`n × m`); each coordinate
/// update costs `O(n)` instead of `O(m)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_box_qp_factored(
    g: &DMatrix<f64>,
    v: &Vector,
    alpha: f64,
    lo: &Vector,
    hi: &Vector,
    tol: f64,
    warm: Option<&Vector>,
    max_sweeps: usize,
) -> Result<BoxQpSolution, ProxError> {
    check_box(g.ncols(), v, lo, hi, alpha)?;
    Ok(coordinate_ascent(&FactoredGram::new(g), v, alpha, lo, hi, tol, warm, max_sweeps))
}

/// Solves `min_x Σᵢ sup_{λᵢ∈[loᵢ,hiᵢ]} λᵢ (vᵢ + ⟨gᵢ, x − c⟩) + ‖x − c‖²/(2α)`
/// through its dual box QP; `x = c − αGλ`. Covers the averaged truncated
/// model, absolute residuals and halfspace distances.
#[allow(clippy::too_many_arguments)]
pub(crate) fn piecewise_linear_prox(
    center: &Vector,
    g: &DMatrix<f64>,
    v: &Vector,
    lo: &Vector,
    hi: &Vector,
    alpha: f64,
    tol: f64,
    warm: Option<&Vector>,
    max_sweeps: usize,
) -> Result<ProxResult, ProxError> {
    let (n, m) = g.shape();
    if center.len() != n {
        return Err(ProxError::DimensionMismatch {
            expected: n,
            found: center.len(),
        });
    }
    check_box(m, v, lo, hi, alpha)?;
    // The gap is at most twice the KKT residual times the box width sum.
    let width: f64 = lo.iter().zip(hi.iter()).map(|(l, h)| h - l).sum::<f64>().max(f64::MIN_POSITIVE);
    let qp_tol = 0.5 * tol / width.max(1.0);
    let sol = if m <= 2 * n || m <= 64 {
        let q = g.tr_mul(g);
        coordinate_ascent(&DenseGram(&q), v, alpha, lo, hi, qp_tol, warm, max_sweeps)
    } else {
        coordinate_ascent(&FactoredGram::new(g), v, alpha, lo, hi, qp_tol, warm, max_sweeps)
    };
    let g_lambda = g * &sol.lambda;
    let x_next = center - &g_lambda * alpha;
    let t = v - g.tr_mul(&g_lambda) * alpha;
    let primal: f64 = (0..m).map(|i| if t[i] > 0.0 { hi[i] * t[i] } else { lo[i] * t[i] }).sum::<f64>()
        + 0.5 * alpha * g_lambda.norm_squared();
    let dual = sol.lambda.dot(v) - 0.5 * alpha * g_lambda.norm_squared();
    let gap = primal - dual;
    if !sol.converged && gap > tol {
        return Err(ProxError::NotConverged {
            residual: sol.kkt_residual,
            iterations: sol.iterations,
        });
    }
    Ok(ProxResult {
        x_next,
        dual: Some(sol.lambda),
        duality_gap: gap,
        inner_iterations: sol.iterations,
    })
}

/// Prox step on the average of per-sample truncated models, with the model
/// anchored at `model.anchor` and the prox term centered at `center`.
pub fn pam_step(model: &BatchModel, center: &Vector, alpha: f64, tol: f64) -> Result<ProxResult, ProxError> {
    check_finite_step(alpha)?;
    let m = model.batch_size();
    let shift = center - &model.anchor;
    let v = &model.values - &model.infima + model.grads.tr_mul(&shift);
    let lo = Vector::zeros(m);
    let hi = Vector::from_element(m, 1.0 / m as f64);
    piecewise_linear_prox(center, &model.grads, &v, &lo, &hi, alpha, tol, None, MAX_SWEEPS)
}

/// Exact minimizer of `c·½‖Ax − b‖² + ‖x − x_k‖²/(2α)`.
pub(crate) fn squared_prox(x_k: &Vector, a: &DMatrix<f64>, b: &Vector, c: f64, alpha: f64) -> Result<Vector, ProxError> {
    check_finite_step(alpha)?;
    let (m, n) = a.shape();
    if x_k.len() != n || b.len() != m {
        return Err(ProxError::DimensionMismatch {
            expected: n,
            found: x_k.len(),
        });
    }
    let s = alpha * c;
    if m < n {
        // (I + s·AAᵀ) r = A x_k − b,  x = x_k − s·Aᵀr
        let k = DMatrix::identity(m, m) + a * a.transpose() * s;
        let rhs = a * x_k - b;
        let r = k
            .cholesky()
            .ok_or_else(|| ProxError::Unsupported("singular Woodbury system".into()))?
            .solve(&rhs);
        Ok(x_k - a.tr_mul(&r) * s)
    } else {
        let k = DMatrix::identity(n, n) + a.tr_mul(a) * s;
        let rhs = x_k + a.tr_mul(b) * s;
        Ok(k
            .cholesky()
            .ok_or_else(|| ProxError::Unsupported("singular normal system".into()))?
            .solve(&rhs))
    }
}

/// Minimizer of `(1/2m)‖A_b x − b_b‖² + ‖x − x_k‖²/(2α)` for a batch of `m` rows.
pub fn prox_step_linreg(x_k: &Vector, a: &DMatrix<f64>, b: &Vector, alpha: f64) -> Result<Vector, ProxError> {
    squared_prox(x_k, a, b, 1.0 / a.nrows() as f64, alpha)
}

/// Minimizer of `c·‖Ax − b‖₁ + ‖x − x_k‖²/(2α)` via the dual box QP on `[−c, c]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn absolute_prox(
    x_k: &Vector,
    a: &DMatrix<f64>,
    b: &Vector,
    c: f64,
    alpha: f64,
    tol: f64,
    warm: Option<&Vector>,
    max_sweeps: usize,
) -> Result<ProxResult, ProxError> {
    check_finite_step(alpha)?;
    let m = a.nrows();
    let g = a.transpose();
    let v = a * x_k - b;
    let lo = Vector::from_element(m, -c);
    let hi = Vector::from_element(m, c);
    piecewise_linear_prox(x_k, &g, &v, &lo, &hi, alpha, tol, warm, max_sweeps)
}

/// Minimizer of `(1/m)‖A_b x − b_b‖₁ + ‖x − x_k‖²/(2α)`.
pub fn prox_step_absreg(x_k: &Vector, a: &DMatrix<f64>, b: &Vector, alpha: f64, tol: f64) -> Result<ProxResult, ProxError> {
    absolute_prox(x_k, a, b, 1.0 / a.nrows() as f64, alpha, tol, None, MAX_SWEEPS)
}

/// Minimizer of `c·Σ dist(x, {⟨aᵢ, y⟩ ≤ bᵢ}) + ‖x − x_k‖²/(2α)`.
fn halfspace_prox(x_k: &Vector, a: &DMatrix<f64>, b: &Vector, c: f64, alpha: f64, tol: f64) -> Result<ProxResult, ProxError> {
    check_finite_step(alpha)?;
    let rows: Vec<usize> = (0..a.nrows()).filter(|&i| a.row(i).norm() > 0.0).collect();
    let n = a.ncols();
    if rows.is_empty() {
        return Ok(ProxResult::exact(x_k.clone()));
    }
    let mut g = DMatrix::zeros(n, rows.len());
    let mut v = Vector::zeros(rows.len());
    for (j, &i) in rows.iter().enumerate() {
        let norm = a.row(i).norm();
        let unit = a.row(i).transpose() / norm;
        v[j] = unit.dot(x_k) - b[i] / norm;
        g.set_column(j, &unit);
    }
    let lo = Vector::zeros(rows.len());
    let hi = Vector::from_element(rows.len(), c);
    piecewise_linear_prox(x_k, &g, &v, &lo, &hi, alpha, tol, None, MAX_SWEEPS)
}

/// Minimizer of `c·Σ log(1 + exp(−bᵢ⟨aᵢ, x⟩)) + ‖x − x_k‖²/(2α)`.
///
/// Works in the subspace `x = x_k + Aᵀw` with damped Newton from `w = 0`.
/// The reported gap bounds the suboptimality by `α‖∇‖²/2`.
pub(crate) fn logistic_prox(x_k: &Vector, a: &DMatrix<f64>, b: &Vector, c: f64, alpha: f64, tol: f64) -> Result<ProxResult, ProxError> {
    check_finite_step(alpha)?;
    let m = a.nrows();
    let kern = a * a.transpose();
    let z0 = a * x_k;
    let objective = |w: &Vector, t: &Vector| -> f64 {
        let loss: f64 = (0..m).map(|i| softplus(-b[i] * t[i])).sum();
        c * loss + 0.5 * w.dot(&(&kern * w)) / alpha
    };
    let mut w = Vector::zeros(m);
    let mut t = z0.clone();
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    while iterations <= NEWTON_BUDGET {
        // dℓ/dt and d²ℓ/dt² per sample
        let s = Vector::from_iterator(m, (0..m).map(|i| -b[i] * sigmoid(-b[i] * t[i])));
        let u = &s * c + &w / alpha;
        let x_grad = a.tr_mul(&u);
        grad_norm = x_grad.norm();
        if grad_norm <= tol || iterations == NEWTON_BUDGET {
            break;
        }
        iterations += 1;
        let d = Vector::from_iterator(m, (0..m).map(|i| {
            let p = sigmoid(b[i] * t[i]);
            p * (1.0 - p)
        }));
        let mut sys = DMatrix::from_diagonal(&(d * c)) * &kern;
        for i in 0..m {
            sys[(i, i)] += 1.0 / alpha;
        }
        let Some(dir) = sys.lu().solve(&(-&u)) else {
            break;
        };
        let slope = (&kern * &u).dot(&dir);
        let f0 = objective(&w, &t);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let w_try = &w + &dir * step;
            let t_try = &z0 + &kern * &w_try;
            let shrinks = || {
                let s = Vector::from_iterator(m, (0..m).map(|i| -b[i] * sigmoid(-b[i] * t_try[i])));
                a.tr_mul(&(&s * c + &w_try / alpha)).norm() < 0.5 * grad_norm
            };
            if objective(&w_try, &t_try) <= f0 + ARMIJO_C * step * slope || shrinks() {
                w = w_try;
                t = t_try;
                accepted = true;
                break;
            }
            step *= ARMIJO_BETA;
        }
        if !accepted {
            break;
        }
    }
    let x_next = x_k + a.tr_mul(&w);
    if grad_norm > tol {
        return Err(ProxError::NotConverged {
            residual: grad_norm,
            iterations,
        });
    }
    Ok(ProxResult {
        x_next,
        dual: None,
        duality_gap: 0.5 * alpha * grad_norm * grad_norm,
        inner_iterations: iterations,
    })
}

/// Minimizer of `(1/m)Σ log(1 + exp(−bᵢ⟨aᵢ, x⟩)) + ‖x − x_k‖²/(2α)`.
pub fn prox_step_logistic(x_k: &Vector, a: &DMatrix<f64>, b: &Vector, alpha: f64, tol: f64) -> Result<ProxResult, ProxError> {
    logistic_prox(x_k, a, b, 1.0 / a.nrows() as f64, alpha, tol)
}

/// Exact prox of the averaged batch loss centered at `center`.
pub fn full_prox_step(center: &Vector, data: &BatchData, alpha: f64, tol: f64) -> Result<ProxResult, ProxError> {
    check_finite_step(alpha)?;
    let c = 1.0 / data.len() as f64;
    match data.loss {
        Loss::Squared => Ok(ProxResult::exact(squared_prox(center, &data.a, &data.b, c, alpha)?)),
        Loss::Power { gamma } if gamma == 1.0 => {
            Ok(ProxResult::exact(squared_prox(center, &data.a, &data.b, c, alpha)?))
        }
        Loss::Absolute => absolute_prox(center, &data.a, &data.b, c, alpha, tol, None, MAX_SWEEPS),
        Loss::Power { gamma } if gamma == 0.0 => {
            absolute_prox(center, &data.a, &data.b, c, alpha, tol, None, MAX_SWEEPS)
        }
        Loss::Logistic => logistic_prox(center, &data.a, &data.b, c, alpha, tol),
        Loss::HalfspaceDistance => halfspace_prox(center, &data.a, &data.b, c, alpha, tol),
        Loss::Power { gamma } => Err(ProxError::Unsupported(format!(
            "full prox for power loss with gamma = {gamma}"
        ))),
    }
}

/// Geometry and composite term shared by every step of a run.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub geometry: DistanceGenerator,
    pub domain: Domain,
    pub regularizer: Regularizer,
    pub tol: f64,
}

impl StepContext {
    pub fn euclidean(dim: usize) -> Self {
        Self {
            geometry: DistanceGenerator::euclidean(dim),
            domain: Domain::AllSpace,
            regularizer: Regularizer::Zero,
            tol: DEFAULT_TOL,
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_regularizer(mut self, regularizer: Regularizer) -> Self {
        self.regularizer = regularizer;
        self
    }

    pub fn with_geometry(mut self, geometry: DistanceGenerator) -> Self {
        self.geometry = geometry;
        self
    }

    fn is_plain(&self) -> bool {
        self.geometry.kind() == DgfKind::EuclideanHalfSq && self.domain.is_all_space()
    }
}

fn is_truncated(strategy: BatchStrategy) -> bool {
    matches!(
        strategy,
        BatchStrategy::TruncatedAverage
            | BatchStrategy::ModelOfAverage(ModelKind::Truncated)
            | BatchStrategy::IterateAverage(ModelKind::Truncated)
    )
}

fn is_linear(strategy: BatchStrategy) -> bool {
    matches!(
        strategy,
        BatchStrategy::ModelOfAverage(ModelKind::Linear) | BatchStrategy::IterateAverage(ModelKind::Linear)
    )
}

/// One step of the strategy: the model is anchored at `model.anchor`, the
/// prox (or Bregman) term is centered at `center`.
pub fn model_step(model: &BatchModel, center: &Vector, alpha: f64, ctx: &StepContext) -> Result<ProxResult, ProxError> {
    check_step(alpha)?;
    if center.len() != model.dim() {
        return Err(ProxError::DimensionMismatch {
            expected: model.dim(),
            found: center.len(),
        });
    }
    let strategy = model.strategy;
    if alpha.is_infinite() && !is_truncated(strategy) {
        return Err(ProxError::InfiniteStep);
    }
    if !ctx.is_plain() {
        if !is_linear(strategy) {
            return Err(ProxError::Unsupported(
                "non-Euclidean geometry or constrained domain requires a linear model".into(),
            ));
        }
        if ctx.geometry.kind() == DgfKind::NegEntropySimplex {
            if ctx.regularizer.mu() != 0.0 {
                return Err(ProxError::Unsupported("regularizer with entropy geometry".into()));
            }
            return Ok(ProxResult::exact(linear_step(&ctx.geometry, &ctx.domain, center, &model.avg_grad, alpha)?));
        }
        let (a, c) = ctx.regularizer.fold(alpha, center);
        let x = &c - &model.avg_grad * a;
        return Ok(ProxResult::exact(project_domain(&ctx.domain, &x)));
    }

    let (a, c) = ctx.regularizer.fold(alpha, center);
    let shift = &c - &model.anchor;
    match strategy {
        BatchStrategy::ModelOfAverage(ModelKind::Linear) | BatchStrategy::IterateAverage(ModelKind::Linear) => {
            Ok(ProxResult::exact(&c - &model.avg_grad * a))
        }
        BatchStrategy::TruncatedAverage | BatchStrategy::ModelOfAverage(ModelKind::Truncated) => {
            let value = model.anchor_value + model.avg_grad.dot(&shift);
            Ok(ProxResult::exact(truncated_step(&c, value, &model.avg_grad, model.lower_bound, a)?))
        }
        BatchStrategy::AverageOfTruncated => pam_step(model, &c, a, ctx.tol),
        BatchStrategy::ModelOfAverage(ModelKind::FullProx) => full_prox_step(&c, &model.data, a, ctx.tol),
        BatchStrategy::IterateAverage(ModelKind::Truncated) => {
            let mut acc = Vector::zeros(c.len());
            for i in 0..model.batch_size() {
                let g = model.grads.column(i).into_owned();
                let value = model.values[i] + g.dot(&shift);
                acc += truncated_step(&c, value, &g, model.infima[i], a)?;
            }
            Ok(ProxResult::exact(acc / model.batch_size() as f64))
        }
        BatchStrategy::IterateAverage(ModelKind::FullProx) => {
            let mut acc = Vector::zeros(c.len());
            let mut gap: f64 = 0.0;
            let mut inner = 0;
            for i in 0..model.batch_size() {
                let r = full_prox_step(&c, &model.data.single(i), a, ctx.tol)?;
                acc += r.x_next;
                gap = gap.max(r.duality_gap);
                inner += r.inner_iterations;
            }
            Ok(ProxResult {
                x_next: acc / model.batch_size() as f64,
                dual: None,
                duality_gap: gap,
                inner_iterations: inner,
            })
        }
    }
}

/// Slack in the three-point inequality for a Euclidean prox step:
/// `[u(y) + ‖y−c‖²/2α − ‖y−x⁺‖²/2α] − [u(x⁺) + ‖x⁺−c‖²/2α]` with
/// `u = model + r`. Nonnegative (up to solver accuracy) for exact steps.
pub fn three_point_slack(
    model: &BatchModel,
    regularizer: &Regularizer,
    center: &Vector,
    alpha: f64,
    x_next: &Vector,
    y: &Vector,
) -> f64 {
    let u = |p: &Vector| model.evaluate(p).expect("matching dimension") + regularizer.value(p);
    let lhs = u(y) + (y - center).norm_squared() / (2.0 * alpha) - (y - x_next).norm_squared() / (2.0 * alpha);
    let rhs = u(x_next) + (x_next - center).norm_squared() / (2.0 * alpha);
    lhs - rhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_batch_model;
    use crate::problems::{Batch, ProblemInstance, ProblemKind, ProblemParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// Minimizes a 1-d function over a uniform grid.
    fn grid_min_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, h: f64) -> f64 {
        let steps = ((hi - lo) / h).round() as usize;
        (0..=steps)
            .map(|i| lo + i as f64 * h)
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap()
    }

    /// Minimizes a 2-d function over a uniform grid.
    fn grid_min_2d(f: impl Fn(f64, f64) -> f64, lo: f64, hi: f64, h: f64) -> (f64, f64) {
        let steps = ((hi - lo) / h).round() as usize;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=steps {
            let x = lo + i as f64 * h;
            for j in 0..=steps {
                let y = lo + j as f64 * h;
                let val = f(x, y);
                if val < best.0 {
                    best = (val, x, y);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn linear_step_examples() {
        let h = DistanceGenerator::euclidean(2);
        let x = v(&[0.5, -1.0]);
        assert_eq!(linear_step(&h, &Domain::AllSpace, &x, &Vector::zeros(2), 1.0).unwrap(), x);
        assert_eq!(linear_step(&h, &Domain::AllSpace, &Vector::zeros(2), &v(&[1.0, 1.0]), 1.0).unwrap(), v(&[-1.0, -1.0]));
        let ball = Domain::ball(Vector::zeros(2), 1.0).unwrap();
        let out = linear_step(&h, &ball, &v(&[0.5, 0.5]), &v(&[-3.0, 1.0]), 0.5).unwrap();
        assert_eq!(out, project_domain(&ball, &v(&[2.0, 0.0])));
        assert!(linear_step(&h, &Domain::AllSpace, &x, &x, 0.0).is_err());
        assert_eq!(linear_step(&h, &Domain::AllSpace, &x, &x, f64::INFINITY), Err(ProxError::InfiniteStep));
    }

    #[test]
    fn truncated_step_examples() {
        let x = v(&[2.0]);
        assert_eq!(truncated_step(&x, 0.0, &v(&[1.0]), 0.0, 10.0).unwrap(), x);
        let out = truncated_step(&x, 2.0, &v(&[1.0]), 0.0, 10.0).unwrap();
        let oracle = grid_min_1d(|y| (2.0 + (y - 2.0)).max(0.0) + (y - 2.0).powi(2) / 20.0, -5.0, 5.0, 1e-4);
        assert!((out[0] - oracle).abs() < 2e-4);
        assert_eq!(out[0], 0.0);
        // Truncation inactive: identical to the linear step.
        let out = truncated_step(&x, 100.0, &v(&[1.0]), 0.0, 0.5).unwrap();
        assert_eq!(out[0], 1.5);
        assert!(matches!(
            truncated_step(&x, 1.0, &v(&[0.0]), 0.0, 1.0),
            Err(ProxError::DegenerateGradient { .. })
        ));
        assert_eq!(truncated_step(&x, 2.0, &v(&[1.0]), 0.0, f64::INFINITY).unwrap()[0], 0.0);
    }

    #[test]
    fn box_qp_examples() {
        let qp = BoxQp::with_uniform_box(DMatrix::identity(3, 3), Vector::zeros(3), 1.0, 0.0, 1.0 / 3.0).unwrap();
        let sol = solve_box_qp(&qp, 1e-12);
        assert_eq!(sol.lambda, Vector::zeros(3));

        let qp = BoxQp::with_uniform_box(DMatrix::identity(2, 2), v(&[1.0, 1.0]), 1.0, 0.0, 0.5).unwrap();
        let sol = solve_box_qp(&qp, 1e-12);
        let (g1, g2) = grid_min_2d(|a, b| -qp.objective(&v(&[a, b])), 0.0, 0.5, 1e-3);
        assert!((sol.lambda[0] - g1).abs() <= 1e-3 && (sol.lambda[1] - g2).abs() <= 1e-3);
        assert_eq!(sol.lambda, v(&[0.5, 0.5]));
        let grad = qp.gradient(&sol.lambda);
        assert!(grad.iter().all(|&g| g >= 0.0));

        assert!(BoxQp::with_uniform_box(DMatrix::identity(2, 2), v(&[1.0, 1.0]), 1.0, 1.0, 0.0).is_err());
        assert!(BoxQp::with_uniform_box(DMatrix::identity(2, 2), v(&[1.0, 1.0]), 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn box_qp_single_coordinate_matches_polyak() {
        let g = v(&[3.0, -1.0]);
        let x = v(&[1.0, 2.0]);
        for (value, alpha) in [(0.7, 0.05), (5.0, 0.01), (0.2, 10.0)] {
            let qp = BoxQp::with_uniform_box(DMatrix::from_element(1, 1, g.norm_squared()), v(&[value]), alpha, 0.0, 1.0).unwrap();
            let sol = solve_box_qp(&qp, 1e-14);
            let expected = (value / (alpha * g.norm_squared())).min(1.0);
            assert!((sol.lambda[0] - expected).abs() < 1e-15);
            let x_qp = &x - &g * (alpha * sol.lambda[0]);
            let x_tr = truncated_step(&x, value, &g, 0.0, alpha).unwrap();
            assert!((x_qp - x_tr).amax() < 1e-14);
        }
    }

    #[test]
    fn zero_diagonal_coordinate_goes_to_bound() {
        let mut q = DMatrix::zeros(2, 2);
        q[(0, 0)] = 2.0;
        let qp = BoxQp::with_uniform_box(q, v(&[1.0, 0.3]), 1.0, 0.0, 1.0).unwrap();
        let sol = solve_box_qp(&qp, 1e-12);
        assert!(sol.converged);
        assert_eq!(sol.lambda[1], 1.0);
        assert!((sol.lambda[0] - 0.5).abs() < 1e-15);
    }

    fn pam_instance() -> (ProblemInstance, Vector) {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = v(&[-1.0, -1.0]);
        let inst = ProblemInstance::from_data(ProblemKind::AbsReg, a, b, None).unwrap();
        (inst, Vector::zeros(2))
    }

    #[test]
    fn pam_orthogonal_unit_gradients_match_grid() {
        let (inst, x) = pam_instance();
        let model = build_batch_model(&inst, &x, &Batch::full(2), BatchStrategy::AverageOfTruncated).unwrap();
        assert_eq!(model.values, v(&[1.0, 1.0]));
        let out = pam_step(&model, &x, 1.0, 1e-12).unwrap();
        let primal = |p: f64, q: f64| {
            let y = v(&[p, q]);
            model.evaluate(&y).unwrap() + 0.5 * y.norm_squared()
        };
        let (gx, gy) = grid_min_2d(primal, -2.0, 2.0, 1e-3);
        assert!((out.x_next[0] - gx).abs() < 1e-2 && (out.x_next[1] - gy).abs() < 1e-2);
        assert!((out.x_next - v(&[-0.5, -0.5])).amax() < 1e-12);
        assert!(out.duality_gap.abs() <= 1e-12);
    }

    #[test]
    fn pam_single_sample_is_truncated_step() {
        let params = ProblemParams::new(ProblemKind::AbsReg, 20, 3).with_seed(1);
        let inst = ProblemInstance::generate(&params).unwrap();
        let x = v(&[0.3, -0.4, 1.0]);
        let batch = Batch::new(vec![4]).unwrap();
        let model = build_batch_model(&inst, &x, &batch, BatchStrategy::AverageOfTruncated).unwrap();
        for alpha in [0.01, 0.3, 5.0] {
            let pam = pam_step(&model, &x, alpha, 1e-13).unwrap();
            let tr = truncated_step(&x, model.anchor_value, &model.avg_grad, 0.0, alpha).unwrap();
            assert!((pam.x_next - tr).amax() < 1e-12);
        }
    }

    #[test]
    fn pam_small_step_is_sgm() {
        let params = ProblemParams::new(ProblemKind::AbsReg, 20, 3).with_seed(2);
        let inst = ProblemInstance::generate(&params).unwrap();
        let x = v(&[1.0, 1.0, 1.0]);
        let batch = Batch::new(vec![1, 5, 9]).unwrap();
        let model = build_batch_model(&inst, &x, &batch, BatchStrategy::AverageOfTruncated).unwrap();
        assert!(model.values.iter().all(|&f| f > 0.0));
        let alpha = 1e-6;
        let out = pam_step(&model, &x, alpha, 1e-14).unwrap();
        let lambda = out.dual.unwrap();
        assert!(lambda.iter().all(|&l| (l - 1.0 / 3.0).abs() < 1e-15));
        assert!((out.x_next - (&x - &model.avg_grad * alpha)).amax() < 1e-15);
    }

    #[test]
    fn pam_rejects_infinite_step() {
        let (inst, x) = pam_instance();
        let model = build_batch_model(&inst, &x, &Batch::full(2), BatchStrategy::AverageOfTruncated).unwrap();
        assert_eq!(pam_step(&model, &x, f64::INFINITY, 1e-9), Err(ProxError::InfiniteStep));
    }

    #[test]
    fn linreg_prox_examples() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let out = prox_step_linreg(&v(&[0.0]), &a, &v(&[4.0]), 1.0).unwrap();
        let oracle = grid_min_1d(|x| 0.5 * (2.0 * x - 4.0).powi(2) + 0.5 * x * x, -5.0, 5.0, 1e-4);
        assert!((out[0] - 1.6).abs() < 1e-14);
        assert!((out[0] - oracle).abs() < 2e-4);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let x_star = v(&[1.0, -2.0, 0.5]);
        let b = &a * &x_star;
        let out = prox_step_linreg(&x_star, &a, &b, 0.7).unwrap();
        assert!((out - &x_star).amax() < 1e-13);

        let b = Vector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let x_ls = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        let out = prox_step_linreg(&Vector::zeros(3), &a, &b, 1e12).unwrap();
        assert!((out - x_ls).amax() < 1e-8);
    }

    #[test]
    fn linreg_woodbury_and_normal_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = DMatrix::from_fn(3, 7, |_, _| rng.random_range(-1.0..1.0));
        let b = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let x_k = Vector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
        let alpha = 0.9;
        let out = prox_step_linreg(&x_k, &a, &b, alpha).unwrap();
        let normal = (DMatrix::identity(7, 7) + a.tr_mul(&a) * (alpha / 3.0))
            .lu()
            .solve(&(&x_k + a.tr_mul(&b) * (alpha / 3.0)))
            .unwrap();
        assert!((&out - normal).amax() < 1e-12);
        let stationarity = a.tr_mul(&(&a * &out - &b)) / 3.0 + (&out - &x_k) / alpha;
        assert!(stationarity.norm() <= 1e-10 * (1.0 + x_k.norm()));
    }

    #[test]
    fn absreg_prox_examples() {
        // Single sample: soft-threshold of the residual along a.
        let a = DMatrix::from_element(1, 1, 2.0);
        for (x0, alpha) in [(3.0, 0.5), (0.1, 0.5), (-2.0, 0.2)] {
            let out = prox_step_absreg(&v(&[x0]), &a, &v(&[1.0]), alpha, 1e-12).unwrap();
            let oracle = grid_min_1d(|x| (2.0 * x - 1.0).abs() + (x - x0).powi(2) / (2.0 * alpha), -5.0, 5.0, 1e-4);
            let r = 2.0 * x0 - 1.0;
            let shrink = (r.abs() - 4.0 * alpha).max(0.0) * r.signum();
            let closed = (shrink + 1.0) / 2.0;
            assert!((out.x_next[0] - closed).abs() < 1e-12);
            assert!((out.x_next[0] - oracle).abs() < 2e-4);
        }
        // Zero residual is a fixed point.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let x = v(&[0.3, 0.2]);
        let b = &a * &x;
        let out = prox_step_absreg(&x, &a, &b, 1.0, 1e-12).unwrap();
        assert!((out.x_next - &x).amax() < 1e-14);
        assert!(out.dual.unwrap().amax() < 1e-14);
    }

    #[test]
    fn absreg_prox_random_batch_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let b = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let x_k = v(&[0.4, -0.3]);
        let alpha = 0.8;
        let out = prox_step_absreg(&x_k, &a, &b, alpha, 1e-12).unwrap();
        let primal = |p: f64, q: f64| {
            let y = v(&[p, q]);
            (&a * &y - &b).abs().sum() / 3.0 + (&y - &x_k).norm_squared() / (2.0 * alpha)
        };
        let (gx, gy) = grid_min_2d(primal, -2.0, 2.0, 1e-3);
        let at_out = primal(out.x_next[0], out.x_next[1]);
        assert!((at_out - primal(gx, gy)).abs() < 1e-2);
        assert!(at_out <= primal(gx, gy) + 1e-12);
        assert!(out.duality_gap >= -1e-10 && out.duality_gap <= 1e-12);
    }

    #[test]
    fn logistic_prox_examples() {
        // Single sample in 1-d.
        let a = DMatrix::from_element(1, 1, 1.5);
        let b = v(&[-1.0]);
        let alpha = 2.0;
        let out = prox_step_logistic(&v(&[0.5]), &a, &b, alpha, 1e-12).unwrap();
        let oracle = grid_min_1d(|x| softplus(1.5 * x) + (x - 0.5).powi(2) / (2.0 * alpha), -5.0, 5.0, 1e-5);
        assert!((out.x_next[0] - oracle).abs() < 1e-4);

        // Huge correct margins: essentially stationary.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = v(&[1.0, -1.0]);
        let x = v(&[80.0, -80.0]);
        let out = prox_step_logistic(&x, &a, &b, 1.0, 1e-10).unwrap();
        assert!((out.x_next - &x).amax() < 1e-10);
    }

    #[test]
    fn logistic_prox_gradient_is_small_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = rng.random_range(1..8);
            let a = DMatrix::from_fn(m, 5, |_, _| rng.random_range(-2.0..2.0));
            let b = Vector::from_fn(m, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
            let x_k = Vector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let alpha = 10f64.powf(rng.random_range(-2.0..2.0));
            let out = prox_step_logistic(&x_k, &a, &b, alpha, 1e-9).unwrap();
            let t = &a * &out.x_next;
            let s = Vector::from_iterator(m, (0..m).map(|i| -b[i] * sigmoid(-b[i] * t[i])));
            let grad = a.tr_mul(&s) / m as f64 + (&out.x_next - &x_k) / alpha;
            assert!(grad.norm() <= 1e-9);
        }
    }

    #[test]
    fn regularizer_fold_matches_direct_minimization() {
        // min g·x + (μ/2)x² + (x − c)²/(2α)  ⇒  x = (c − αg)/(1 + αμ)
        let reg = Regularizer::SquaredL2 { mu: 3.0 };
        let (alpha, center) = reg.fold(0.5, &v(&[2.0]));
        let x = &center - &v(&[1.0]) * alpha;
        assert!((x[0] - (2.0 - 0.5) / 2.5).abs() < 1e-15);
    }

    #[test]
    fn model_step_rejects_unsupported_combinations() {
        let (inst, x) = pam_instance();
        let model = build_batch_model(&inst, &x, &Batch::full(2), BatchStrategy::AverageOfTruncated).unwrap();
        let ctx = StepContext::euclidean(2).with_domain(Domain::ball(Vector::zeros(2), 1.0).unwrap());
        assert!(matches!(model_step(&model, &x, 1.0, &ctx), Err(ProxError::Unsupported(_))));
        let params = ProblemParams::new(ProblemKind::PowerReg { gamma: 0.5 }, 5, 2);
        let inst = ProblemInstance::generate(&params).unwrap();
        let model = build_batch_model(&inst, &x, &Batch::full(2), BatchStrategy::ModelOfAverage(ModelKind::FullProx)).unwrap();
        assert!(matches!(
            model_step(&model, &x, 1.0, &StepContext::euclidean(2)),
            Err(ProxError::Unsupported(_))
        ));
    }

    fn random_psd(m: usize, rank: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(rank, m, |_, _| rng.random_range(-1.0..1.0));
        g.tr_mul(&g)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn box_qp_meets_kkt_and_matches_factored(seed in 0u64..10_000, m in 1usize..12, rank in 1usize..12, alpha in 0.01f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = DMatrix::from_fn(rank, m, |_, _| rng.random_range(-1.0..1.0));
            let q = g.tr_mul(&g);
            let vv = Vector::from_fn(m, |_, _| rng.random_range(-1.0..2.0));
            let qp = BoxQp::with_uniform_box(q, vv.clone(), alpha, 0.0, 1.0 / m as f64).unwrap();
            let sol = solve_box_qp(&qp, 1e-10);
            prop_assert!(sol.converged);
            prop_assert!(qp.kkt_residual(&sol.lambda) <= 1e-10);
            let lo = Vector::zeros(m);
            let hi = Vector::from_element(m, 1.0 / m as f64);
            let fac = solve_box_qp_factored(&g, &vv, alpha, &lo, &hi, 1e-10, None, MAX_SWEEPS).unwrap();
            prop_assert!(fac.converged);
            prop_assert!((qp.objective(&fac.lambda) - qp.objective(&sol.lambda)).abs() <= 1e-9);
        }

        #[test]
        fn pam_three_point_inequality(seed in 0u64..10_000, m in 1usize..6, alpha in 0.05f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = ProblemInstance::generate(&ProblemParams::new(ProblemKind::AbsReg, 12, 3).with_seed(seed)).unwrap();
            let x = Vector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let batch = inst.sample_batch(m, &mut rng).unwrap();
            let model = build_batch_model(&inst, &x, &batch, BatchStrategy::AverageOfTruncated).unwrap();
            let out = pam_step(&model, &x, alpha, 1e-11).unwrap();
            prop_assert!(out.duality_gap >= -1e-10 && out.duality_gap <= 1e-11);
            for _ in 0..10 {
                let y = Vector::from_fn(3, |_, _| rng.random_range(-4.0..4.0));
                prop_assert!(three_point_slack(&model, &Regularizer::Zero, &x, alpha, &out.x_next, &y) >= -1e-9);
            }
        }

        #[test]
        fn dense_and_factored_random_psd(seed in 0u64..10_000, m in 2usize..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rank = rng.random_range(1..=m);
            let q = random_psd(m, rank, &mut rng);
            let vv = Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let qp = BoxQp::with_uniform_box(q, vv, 1.0, -0.5, 0.5).unwrap();
            let sol = solve_box_qp(&qp, 1e-10);
            prop_assert!(sol.converged, "residual {}", sol.kkt_residual);
        }
    }
}
