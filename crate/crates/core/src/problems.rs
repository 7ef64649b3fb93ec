//! Synthetic problem instances, per-sample losses and sampling.
//!
//! Every instance is a finite dataset of rows `(aᵢ, bᵢ)` together with a
//! per-sample loss `F(x; i)` and a sampling law over the rows (uniform unless
//! stated otherwise). The objective is `f(x) = Σᵢ wᵢ F(x; i)`.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Domain;
use crate::reference;
use crate::Vector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("invalid problem parameters: {0}")]
    InvalidParams(String),
    #[error("sample index {index} out of range for {n_samples} samples")]
    IndexOutOfRange { index: usize, n_samples: usize },
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("reference solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    ReferenceNotConverged { residual: f64, iterations: usize },
    #[error("no reference optimum available: {0}")]
    ReferenceUnavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    LinReg,
    AbsReg,
    Logistic,
    HalfspaceIntersection,
    PowerReg { gamma: f64 },
    TwoPoint { delta: f64, radius: f64, gamma: f64 },
}

impl ProblemKind {
    pub fn label(&self) -> &'static str {
        match self {
            ProblemKind::LinReg => "linreg",
            ProblemKind::AbsReg => "absreg",
            ProblemKind::Logistic => "logistic",
            ProblemKind::HalfspaceIntersection => "halfspace",
            ProblemKind::PowerReg { .. } => "powerreg",
            ProblemKind::TwoPoint { .. } => "twopoint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    None,
    GaussianResidual { sigma: f64 },
    LaplaceResidual { sigma: f64 },
    LabelFlip { p: f64 },
}

impl NoiseSpec {
    pub fn label(&self) -> String {
        match self {
            NoiseSpec::None => "none".to_string(),
            NoiseSpec::GaussianResidual { sigma } => format!("gaussian({sigma})"),
            NoiseSpec::LaplaceResidual { sigma } => format!("laplace({sigma})"),
            NoiseSpec::LabelFlip { p } => format!("flip({p})"),
        }
    }

    /// True when the noise has no effect on the data (including zero scale).
    pub fn is_none(&self) -> bool {
        match *self {
            NoiseSpec::None => true,
            NoiseSpec::GaussianResidual { sigma } | NoiseSpec::LaplaceResidual { sigma } => {
                sigma == 0.0
            }
            NoiseSpec::LabelFlip { p } => p == 0.0,
        }
    }
}

/// Reproducible description of a generated instance; the data matrices are
/// regenerated from it, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    pub kind: ProblemKind,
    pub n_samples: usize,
    pub dim: usize,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Target condition number of `A`; `None` keeps the raw Gaussian design.
    #[serde(default)]
    pub cond: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ProblemParams {
    pub fn new(kind: ProblemKind, n_samples: usize, dim: usize) -> Self {
        Self {
            kind,
            n_samples,
            dim,
            noise: NoiseSpec::None,
            cond: None,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_cond(mut self, cond: f64) -> Self {
        self.cond = Some(cond);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Per-row loss. All implemented losses are nonnegative with per-sample
/// infimum 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    /// `½(⟨a, x⟩ − b)²`
    Squared,
    /// `|⟨a, x⟩ − b|`
    Absolute,
    /// `log(1 + exp(−b⟨a, x⟩))`
    Logistic,
    /// `dist(x, {y : ⟨a, y⟩ ≤ b})`
    HalfspaceDistance,
    /// `|⟨a, x⟩ − b|^{1+γ} / (1+γ)`
    Power { gamma: f64 },
}

fn sign0(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `log(1 + exp(t))` without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + exp(−t))` without overflow.
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Loss {
    /// Value and the scalar `s` such that `s·a` is the chosen subgradient,
    /// given the inner product `⟨a, x⟩`, the label and `‖a‖`.
    fn value_and_slope(&self, ax: f64, b: f64, a_norm: f64) -> (f64, f64) {
        match *self {
            Loss::Squared => {
                let r = ax - b;
                (0.5 * r * r, r)
            }
            Loss::Absolute => {
                let r = ax - b;
                (r.abs(), sign0(r))
            }
            Loss::Logistic => {
                let z = b * ax;
                (softplus(-z), -b * sigmoid(-z))
            }
            Loss::HalfspaceDistance => {
                if a_norm == 0.0 {
                    return (0.0, 0.0);
                }
                let s = (ax - b) / a_norm;
                if s > 0.0 {
                    (s, 1.0 / a_norm)
                } else {
                    (0.0, 0.0)
                }
            }
            Loss::Power { gamma } => {
                let r = ax - b;
                let abs = r.abs();
                let value = abs.powf(1.0 + gamma) / (1.0 + gamma);
                let slope = if abs == 0.0 {
                    0.0
                } else {
                    sign0(r) * abs.powf(gamma)
                };
                (value, slope)
            }
        }
    }

    pub fn infimum(&self) -> f64 {
        0.0
    }
}

pub(crate) fn loss_value_and_slope(loss: Loss, ax: f64, b: f64, a_norm: f64) -> (f64, f64) {
    loss.value_and_slope(ax, b, a_norm)
}

/// Result of evaluating one sample's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub subgradient: Vector,
    pub inf_value: f64,
}

/// Indices of one minibatch (with repetition).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn new(indices: Vec<usize>) -> Result<Self, ProblemError> {
        if indices.is_empty() {
            return Err(ProblemError::EmptyBatch);
        }
        Ok(Self { indices })
    }

    pub fn full(n_samples: usize) -> Self {
        Self {
            indices: (0..n_samples).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumMethod {
    ClosedForm,
    LeastSquares,
    HighAccuracySolve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimumInfo {
    pub f_star: f64,
    /// A minimizer when one is known and attained.
    pub x_star: Option<Vector>,
    pub method: OptimumMethod,
    /// Certified accuracy (duality gap or gradient norm, depending on method).
    pub tolerance: f64,
}

#[derive(Debug)]
pub struct ProblemInstance {
    params: Option<ProblemParams>,
    kind: ProblemKind,
    noise: NoiseSpec,
    loss: Loss,
    a: DMatrix<f64>,
    b: Vector,
    row_norms: Vec<f64>,
    /// Sampling law; `None` is uniform over rows.
    weights: Option<Vec<f64>>,
    cumulative: Option<Vec<f64>>,
    planted: Option<Vector>,
    domain: Domain,
    reference: OnceLock<Result<OptimumInfo, ProblemError>>,
}

impl Clone for ProblemInstance {
    fn clone(&self) -> Self {
        let reference = OnceLock::new();
        if let Some(r) = self.reference.get() {
            let _ = reference.set(r.clone());
        }
        Self {
            params: self.params.clone(),
            kind: self.kind,
            noise: self.noise,
            loss: self.loss,
            a: self.a.clone(),
            b: self.b.clone(),
            row_norms: self.row_norms.clone(),
            weights: self.weights.clone(),
            cumulative: self.cumulative.clone(),
            planted: self.planted.clone(),
            domain: self.domain.clone(),
            reference,
        }
    }
}

fn loss_for(kind: &ProblemKind) -> Loss {
    match *kind {
        ProblemKind::LinReg => Loss::Squared,
        ProblemKind::AbsReg => Loss::Absolute,
        ProblemKind::Logistic => Loss::Logistic,
        ProblemKind::HalfspaceIntersection => Loss::HalfspaceDistance,
        ProblemKind::PowerReg { gamma } | ProblemKind::TwoPoint { gamma, .. } => {
            Loss::Power { gamma }
        }
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    // Row-major fill so that row i depends only on the first i rows' draws.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

fn gaussian_vector(n: usize, rng: &mut impl Rng) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// Standard Laplace draw by inverting the CDF.
fn laplace(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -sign0(u) * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

/// Replaces the singular values of `a` by a geometric ramp from `√N` down to
/// `√N / cond`.
fn rescale_condition(a: DMatrix<f64>, cond: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    let svd = a.svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let top = (rows as f64).sqrt();
    let mut sigma = Vector::zeros(k);
    for (rank, &idx) in order.iter().enumerate() {
        let t = if k > 1 {
            rank as f64 / (k - 1) as f64
        } else {
            0.0
        };
        sigma[idx] = top * cond.powf(-t);
    }
    &u * DMatrix::from_diagonal(&sigma) * &vt
}

fn validate(params: &ProblemParams) -> Result<(), ProblemError> {
    let bad = |msg: String| Err(ProblemError::InvalidParams(msg));
    if !matches!(params.kind, ProblemKind::TwoPoint { .. })
        && (params.n_samples == 0 || params.dim == 0)
    {
        return bad("n_samples and dim must be at least 1".into());
    }
    if let Some(c) = params.cond {
        if !(c >= 1.0 && c.is_finite()) {
            return bad(format!("condition number must be >= 1, got {c}"));
        }
    }
    match params.noise {
        NoiseSpec::GaussianResidual { sigma } | NoiseSpec::LaplaceResidual { sigma } => {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad(format!("noise scale must be >= 0, got {sigma}"));
            }
            if !matches!(params.kind, ProblemKind::LinReg | ProblemKind::AbsReg) {
                return bad(format!(
                    "residual noise is only defined for regression, not {}",
                    params.kind.label()
                ));
            }
        }
        NoiseSpec::LabelFlip { p } => {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("flip probability must lie in [0, 1], got {p}"));
            }
            if !matches!(params.kind, ProblemKind::Logistic) {
                return bad("label flips only apply to logistic regression".into());
            }
        }
        NoiseSpec::None => {}
    }
    match params.kind {
        ProblemKind::PowerReg { gamma } if !(0.0..=1.0).contains(&gamma) => {
            bad(format!("power exponent gamma must lie in [0, 1], got {gamma}"))
        }
        ProblemKind::TwoPoint {
            delta,
            radius,
            gamma,
        } => {
            if !(delta > 0.0 && delta < 1.0) {
                return bad(format!("delta must lie in (0, 1), got {delta}"));
            }
            if !(radius > 0.0 && radius.is_finite()) {
                return bad(format!("radius must be positive, got {radius}"));
            }
            if !(0.0..=1.0).contains(&gamma) {
                return bad(format!("gamma must lie in [0, 1], got {gamma}"));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

impl ProblemInstance {
    /// Generates an instance from its description. Rows of `A` and the planted
    /// `x*` are i.i.d. standard normal.
    pub fn generate(params: &ProblemParams) -> Result<Self, ProblemError> {
        validate(params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        if let ProblemKind::TwoPoint { delta, radius, .. } = params.kind {
            let v = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let a = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
            let b = Vector::from_column_slice(&[0.0, v * radius]);
            let mut inst = Self::from_data(
                params.kind,
                a,
                b,
                Some(Vector::from_element(1, v * radius)),
            )?;
            inst.set_weights(vec![1.0 - delta, delta])?;
            inst.params = Some(params.clone());
            return Ok(inst);
        }

        let (n_rows, dim) = (params.n_samples, params.dim);
        let mut a = gaussian_matrix(n_rows, dim, &mut rng);
        let x_star = gaussian_vector(dim, &mut rng);
        if let Some(cond) = params.cond {
            a = rescale_condition(a, cond);
        }
        let clean = &a * &x_star;
        let b = match (params.kind, params.noise) {
            (ProblemKind::LinReg | ProblemKind::AbsReg, NoiseSpec::GaussianResidual { sigma }) => {
                clean + gaussian_vector(n_rows, &mut rng) * sigma
            }
            (ProblemKind::LinReg | ProblemKind::AbsReg, NoiseSpec::LaplaceResidual { sigma }) => {
                clean + Vector::from_iterator(n_rows, (0..n_rows).map(|_| laplace(&mut rng))) * sigma
            }
            (ProblemKind::Logistic, noise) => {
                let p = match noise {
                    NoiseSpec::LabelFlip { p } => p,
                    _ => 0.0,
                };
                clean.map(|z| {
                    let label = if z >= 0.0 { 1.0 } else { -1.0 };
                    if rng.random::<f64>() < p {
                        -label
                    } else {
                        label
                    }
                })
            }
            (ProblemKind::HalfspaceIntersection, _) => {
                clean.map(|z| z + rng.random_range(0.1..=1.0))
            }
            _ => clean,
        };
        let mut inst = Self::from_data(params.kind, a, b, Some(x_star))?;
        inst.noise = params.noise;
        inst.params = Some(params.clone());
        Ok(inst)
    }

    /// Builds an instance from explicit data. `planted`, when given, must be a
    /// point at which every sample attains its infimum (an interpolating
    /// solution); noise-free semantics are assumed.
    pub fn from_data(
        kind: ProblemKind,
        a: DMatrix<f64>,
        b: Vector,
        planted: Option<Vector>,
    ) -> Result<Self, ProblemError> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(ProblemError::InvalidParams("empty data matrix".into()));
        }
        if b.len() != a.nrows() {
            return Err(ProblemError::DimensionMismatch {
                expected: a.nrows(),
                found: b.len(),
            });
        }
        if let Some(p) = &planted {
            if p.len() != a.ncols() {
                return Err(ProblemError::DimensionMismatch {
                    expected: a.ncols(),
                    found: p.len(),
                });
            }
        }
        if matches!(kind, ProblemKind::Logistic) && b.iter().any(|&l| l != 1.0 && l != -1.0) {
            return Err(ProblemError::InvalidParams(
                "logistic labels must be +1 or -1".into(),
            ));
        }
        let row_norms = (0..a.nrows()).map(|i| a.row(i).norm()).collect();
        Ok(Self {
            params: None,
            kind,
            noise: NoiseSpec::None,
            loss: loss_for(&kind),
            a,
            b,
            row_norms,
            weights: None,
            cumulative: None,
            planted,
            domain: Domain::AllSpace,
            reference: OnceLock::new(),
        })
    }

    /// Marks the labels as noisy, so the reference optimum is solved for
    /// instead of read off the planted point.
    pub fn with_noise_label(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self.reference = OnceLock::new();
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self.reference = OnceLock::new();
        self
    }

    /// Replaces the uniform sampling law by explicit row probabilities.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<(), ProblemError> {
        if weights.len() != self.n_samples() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.n_samples(),
                found: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(ProblemError::InvalidParams(
                "sample weights must be a probability vector".into(),
            ));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        self.weights = Some(weights);
        self.cumulative = Some(cumulative);
        self.reference = OnceLock::new();
        Ok(())
    }

    pub fn params(&self) -> Option<&ProblemParams> {
        self.params.as_ref()
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn noise(&self) -> NoiseSpec {
        self.noise
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn n_samples(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn data(&self) -> (&DMatrix<f64>, &Vector) {
        (&self.a, &self.b)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn planted(&self) -> Option<&Vector> {
        self.planted.as_ref()
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    /// Probability of drawing row `i`.
    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.n_samples() as f64,
        }
    }

    /// Whether a single point attains every per-sample infimum.
    pub fn is_interpolating(&self) -> bool {
        self.noise.is_none() && self.planted.is_some()
    }

    fn check_point(&self, x: &Vector) -> Result<(), ProblemError> {
        if x.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `(F(x; i), slope)` with subgradient `slope · aᵢ`.
    pub(crate) fn value_and_slope(&self, x: &Vector, i: usize) -> (f64, f64) {
        let ax = self.a.row(i).transpose().dot(x);
        self.loss.value_and_slope(ax, self.b[i], self.row_norms[i])
    }

    pub fn row(&self, i: usize) -> Vector {
        self.a.row(i).transpose()
    }

    pub fn label(&self, i: usize) -> f64 {
        self.b[i]
    }

    pub fn loss_eval(&self, x: &Vector, i: usize) -> Result<LossEval, ProblemError> {
        if i >= self.n_samples() {
            return Err(ProblemError::IndexOutOfRange {
                index: i,
                n_samples: self.n_samples(),
            });
        }
        self.check_point(x)?;
        let (value, slope) = self.value_and_slope(x, i);
        Ok(LossEval {
            value,
            subgradient: self.row(i) * slope,
            inf_value: self.loss.infimum(),
        })
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        m: usize,
        rng: &mut R,
    ) -> Result<Batch, ProblemError> {
        if m == 0 {
            return Err(ProblemError::EmptyBatch);
        }
        let n = self.n_samples();
        let indices = match &self.cumulative {
            None => (0..m).map(|_| rng.random_range(0..n)).collect(),
            Some(cum) => (0..m)
                .map(|_| {
                    let u: f64 = rng.random();
                    cum.partition_point(|&c| c <= u).min(n - 1)
                })
                .collect(),
        };
        Ok(Batch { indices })
    }

    /// `f(x) = Σᵢ wᵢ F(x; i)`.
    pub fn objective_value(&self, x: &Vector) -> f64 {
        let ax = &self.a * x;
        (0..self.n_samples())
            .map(|i| {
                self.weight(i)
                    * self
                        .loss
                        .value_and_slope(ax[i], self.b[i], self.row_norms[i])
                        .0
            })
            .sum()
    }

    /// `Σᵢ wᵢ F'(x; i)` using the same subgradient selection as `loss_eval`.
    pub fn full_subgradient(&self, x: &Vector) -> Vector {
        let ax = &self.a * x;
        let slopes = Vector::from_iterator(
            self.n_samples(),
            (0..self.n_samples()).map(|i| {
                self.weight(i)
                    * self
                        .loss
                        .value_and_slope(ax[i], self.b[i], self.row_norms[i])
                        .1
            }),
        );
        self.a.tr_mul(&slopes)
    }

    /// Batch average `F̄(x; batch) = (1/m) Σ F(x; sⁱ)`.
    pub fn batch_value(&self, x: &Vector, batch: &Batch) -> f64 {
        batch
            .indices
            .iter()
            .map(|&i| self.value_and_slope(x, i).0)
            .sum::<f64>()
            / batch.len() as f64
    }

    /// Lipschitz constant of `∇f` for the smooth losses.
    pub fn smoothness_constant(&self) -> Option<f64> {
        let scale = match self.loss {
            Loss::Squared => 1.0,
            Loss::Power { gamma } if gamma == 1.0 => 1.0,
            Loss::Logistic => 0.25,
            _ => return None,
        };
        let mut gram = DMatrix::zeros(self.dim(), self.dim());
        for i in 0..self.n_samples() {
            let row = self.row(i);
            gram += &row * row.transpose() * self.weight(i);
        }
        let top = gram
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max);
        Some(scale * top)
    }

    /// The reference optimum, computed once and cached.
    pub fn reference_optimum(&self) -> Result<&OptimumInfo, ProblemError> {
        self.reference
            .get_or_init(|| reference::compute(self))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// `f(x) − f*`.
    pub fn gap(&self, x: &Vector) -> Result<f64, ProblemError> {
        Ok(self.objective_value(x) - self.reference_optimum()?.f_star)
    }
}

/// Noiseless regression whose rows are rescaled random columns of a fixed
/// orthogonal matrix. Each observation reveals `m` coordinates of `x*` in the
/// `U` basis, and `E[AᵀA] = I`.
#[derive(Debug, Clone)]
pub struct OrthColRegression {
    n: usize,
    m: usize,
    radius: f64,
    basis: DMatrix<f64>,
}

/// One round's data `A = √(n/m)·[u_{i(1)} … u_{i(m)}]ᵀ`, `b = A x*`.
#[derive(Debug, Clone)]
pub struct OrthColObservation {
    pub columns: Vec<usize>,
    pub a: DMatrix<f64>,
    pub b: Vector,
}

impl OrthColRegression {
    pub fn new(n: usize, m: usize, radius: f64, seed: u64) -> Result<Self, ProblemError> {
        Self::check(n, m, radius)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = gaussian_matrix(n, n, &mut rng);
        let basis = g.qr().q();
        Ok(Self {
            n,
            m,
            radius,
            basis,
        })
    }

    pub fn with_basis(basis: DMatrix<f64>, m: usize, radius: f64) -> Result<Self, ProblemError> {
        let n = basis.nrows();
        Self::check(n, m, radius)?;
        if basis.ncols() != n {
            return Err(ProblemError::InvalidParams("basis must be square".into()));
        }
        Ok(Self {
            n,
            m,
            radius,
            basis,
        })
    }

    fn check(n: usize, m: usize, radius: f64) -> Result<(), ProblemError> {
        if n == 0 || m == 0 || m > n {
            return Err(ProblemError::InvalidParams(format!(
                "need 1 <= m <= n, got m = {m}, n = {n}"
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ProblemError::InvalidParams(format!(
                "radius must be positive, got {radius}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn batch_size(&self) -> usize {
        self.m
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Draws `x* ~ N(0, (R²/n) I)`.
    pub fn draw_solution<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let scale = self.radius / (self.n as f64).sqrt();
        Vector::from_iterator(
            self.n,
            (0..self.n).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)),
        )
    }

    pub fn observe<R: Rng + ?Sized>(&self, x_star: &Vector, rng: &mut R) -> OrthColObservation {
        let columns = rand::seq::index::sample(rng, self.n, self.m).into_vec();
        let scale = (self.n as f64 / self.m as f64).sqrt();
        let mut a = DMatrix::zeros(self.m, self.n);
        for (r, &c) in columns.iter().enumerate() {
            a.set_row(r, &(self.basis.column(c).transpose() * scale));
        }
        let b = &a * x_star;
        OrthColObservation { columns, a, b }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn generates_full_size_shapes() {
        let params = ProblemParams::new(ProblemKind::LinReg, 1000, 40)
            .with_noise(NoiseSpec::GaussianResidual { sigma: 0.5 })
            .with_seed(7);
        let inst = ProblemInstance::generate(&params).unwrap();
        assert_eq!(inst.n_samples(), 1000);
        assert_eq!(inst.dim(), 40);
        assert!(!inst.is_interpolating());
    }

    #[test]
    fn rejects_invalid_params() {
        let bad = [
            ProblemParams::new(ProblemKind::LinReg, 0, 3),
            ProblemParams::new(ProblemKind::PowerReg { gamma: 1.5 }, 10, 3),
            ProblemParams::new(ProblemKind::LinReg, 10, 3).with_cond(0.5),
            ProblemParams::new(ProblemKind::Logistic, 10, 3)
                .with_noise(NoiseSpec::LabelFlip { p: 2.0 }),
            ProblemParams::new(ProblemKind::Logistic, 10, 3)
                .with_noise(NoiseSpec::GaussianResidual { sigma: 1.0 }),
            ProblemParams::new(
                ProblemKind::TwoPoint {
                    delta: 1.0,
                    radius: 1.0,
                    gamma: 0.0,
                },
                1,
                1,
            ),
        ];
        for p in &bad {
            assert!(
                matches!(ProblemInstance::generate(p), Err(ProblemError::InvalidParams(_))),
                "{p:?}"
            );
        }
    }

    #[test]
    fn label_flip_rate_is_close_to_p() {
        let mut flipped = 0usize;
        let mut total = 0usize;
        for seed in 0..40 {
            let params = ProblemParams::new(ProblemKind::Logistic, 1000, 10)
                .with_noise(NoiseSpec::LabelFlip { p: 0.01 })
                .with_seed(seed);
            let inst = ProblemInstance::generate(&params).unwrap();
            let x_star = inst.planted().unwrap();
            let (a, b) = inst.data();
            let margins = a * x_star;
            flipped += margins
                .iter()
                .zip(b.iter())
                .filter(|(z, l)| (**z >= 0.0) != (**l > 0.0))
                .count();
            total += 1000;
        }
        let rate = flipped as f64 / total as f64;
        // Binomial(40000, 0.01) has sd ≈ 5e-4.
        assert!((rate - 0.01).abs() < 2e-3, "flip rate {rate}");
    }

    #[test]
    fn noiseless_linreg_interpolates() {
        let params = ProblemParams::new(ProblemKind::LinReg, 50, 5).with_seed(3);
        let inst = ProblemInstance::generate(&params).unwrap();
        let opt = inst.reference_optimum().unwrap();
        assert_eq!(opt.f_star, 0.0);
        let x_star = inst.planted().unwrap().clone();
        for i in 0..inst.n_samples() {
            let e = inst.loss_eval(&x_star, i).unwrap();
            assert!(e.value < 1e-20);
            assert!(e.subgradient.norm() < 1e-9);
            assert_eq!(e.inf_value, 0.0);
        }
        assert!(inst.objective_value(&x_star) < 1e-20);
    }

    #[test]
    fn condition_rescaling_hits_target() {
        let params = ProblemParams::new(ProblemKind::LinReg, 200, 10)
            .with_cond(100.0)
            .with_seed(1);
        let inst = ProblemInstance::generate(&params).unwrap();
        let s = inst.data().0.singular_values();
        let max = s.iter().copied().fold(0.0, f64::max);
        let min = s.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((max / min - 100.0).abs() < 1e-8);
        assert!((max - 200f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn absreg_one_dim_eval_matches_finite_difference() {
        let inst = ProblemInstance::from_data(
            ProblemKind::AbsReg,
            DMatrix::from_element(1, 1, 2.0),
            v(&[0.0]),
            None,
        )
        .unwrap();
        let e = inst.loss_eval(&v(&[3.0]), 0).unwrap();
        assert_eq!(e.value, 6.0);
        assert_eq!(e.subgradient[0], 2.0);
        assert_eq!(e.inf_value, 0.0);
        let h = 1e-6;
        let fd = (inst.loss_eval(&v(&[3.0 + h]), 0).unwrap().value
            - inst.loss_eval(&v(&[3.0 - h]), 0).unwrap().value)
            / (2.0 * h);
        assert!((fd - 2.0).abs() < 1e-6);
        assert!(matches!(
            inst.loss_eval(&v(&[3.0]), 1),
            Err(ProblemError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn halfspace_inside_has_zero_loss() {
        let params = ProblemParams::new(ProblemKind::HalfspaceIntersection, 30, 4).with_seed(2);
        let inst = ProblemInstance::generate(&params).unwrap();
        let x_star = inst.planted().unwrap().clone();
        for i in 0..inst.n_samples() {
            let e = inst.loss_eval(&x_star, i).unwrap();
            assert_eq!(e.value, 0.0);
            assert_eq!(e.subgradient, Vector::zeros(4));
        }
    }

    #[test]
    fn objective_examples() {
        let inst = ProblemInstance::from_data(
            ProblemKind::LinReg,
            DMatrix::from_element(1, 1, 2.0),
            v(&[4.0]),
            None,
        )
        .unwrap();
        assert_eq!(inst.objective_value(&v(&[0.0])), 8.0);

        let params = ProblemParams::new(ProblemKind::Logistic, 20, 3).with_seed(9);
        let inst = ProblemInstance::generate(&params).unwrap();
        let x = v(&[0.3, -0.2, 1.1]);
        let mean = (0..20)
            .map(|i| inst.loss_eval(&x, i).unwrap().value)
            .sum::<f64>()
            / 20.0;
        assert!((inst.objective_value(&x) - mean).abs() < 1e-14);
    }

    #[test]
    fn sampling_is_deterministic_and_uniform() {
        let params = ProblemParams::new(ProblemKind::LinReg, 10, 2);
        let inst = ProblemInstance::generate(&params).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(
            inst.sample_batch(5, &mut r1).unwrap(),
            inst.sample_batch(5, &mut r2).unwrap()
        );
        assert_eq!(inst.sample_batch(1, &mut r1).unwrap().len(), 1);
        assert_eq!(inst.sample_batch(0, &mut r1), Err(ProblemError::EmptyBatch));

        let draws = 100_000;
        let batch = inst.sample_batch(draws, &mut r1).unwrap();
        let mut counts = [0usize; 10];
        for &i in &batch.indices {
            counts[i] += 1;
        }
        let expected = draws as f64 / 10.0;
        let sd = (draws as f64 * 0.1 * 0.9).sqrt();
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        for &c in &counts {
            assert!((c as f64 - expected).abs() < 3.0 * sd);
        }
        // 9 degrees of freedom; 27.9 is the 0.999 quantile.
        assert!(chi2 < 27.9, "chi2 = {chi2}");
    }

    #[test]
    fn noisy_linreg_reference_matches_normal_equations() {
        let params = ProblemParams::new(ProblemKind::LinReg, 60, 6)
            .with_noise(NoiseSpec::GaussianResidual { sigma: 0.5 })
            .with_seed(5);
        let inst = ProblemInstance::generate(&params).unwrap();
        let opt = inst.reference_optimum().unwrap();
        let (a, b) = inst.data();
        let ata = a.tr_mul(a);
        let atb = a.tr_mul(b);
        let x_ne = ata.cholesky().unwrap().solve(&atb);
        let f_ne = 0.5 * (a * &x_ne - b).norm_squared() / 60.0;
        assert!((opt.f_star - f_ne).abs() < 1e-8);
        assert!((opt.x_star.as_ref().unwrap() - x_ne).norm() < 1e-8);
        assert!(opt.f_star > 0.0);
    }

    #[test]
    fn separable_logistic_reference_is_zero() {
        let params = ProblemParams::new(ProblemKind::Logistic, 100, 5)
            .with_noise(NoiseSpec::LabelFlip { p: 0.0 })
            .with_seed(4);
        let inst = ProblemInstance::generate(&params).unwrap();
        let opt = inst.reference_optimum().unwrap();
        assert_eq!(opt.f_star, 0.0);
        assert!(opt.x_star.is_none());
    }

    #[test]
    fn two_point_law() {
        let kind = ProblemKind::TwoPoint {
            delta: 0.2,
            radius: 1.5,
            gamma: 0.0,
        };
        let inst = ProblemInstance::generate(&ProblemParams::new(kind, 1, 1).with_seed(1)).unwrap();
        let x_star = inst.planted().unwrap().clone();
        assert_eq!(x_star[0].abs(), 1.5);
        assert_eq!(inst.objective_value(&x_star), 0.0);
        // f(x) = δ |x − vR| for γ = 0.
        assert!((inst.objective_value(&v(&[0.0])) - 0.2 * 1.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 50_000;
        let batch = inst.sample_batch(n, &mut rng).unwrap();
        let zeros = batch.indices.iter().filter(|&&i| i == 0).count() as f64;
        let sd = (n as f64 * 0.2 * 0.8).sqrt();
        assert!((zeros - 0.8 * n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn params_round_trip_through_json() {
        let params = ProblemParams::new(ProblemKind::PowerReg { gamma: 0.5 }, 30, 4)
            .with_cond(10.0)
            .with_seed(99);
        let text = serde_json::to_string(&params).unwrap();
        let back: ProblemParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, params);
        let a = ProblemInstance::generate(&params).unwrap();
        let b = ProblemInstance::generate(&back).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn orthcol_identity_reveals_scaled_coordinates() {
        let oc = OrthColRegression::with_basis(DMatrix::identity(4, 4), 1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = v(&[1.0, 2.0, 3.0, 4.0]);
        let obs = oc.observe(&x, &mut rng);
        let c = obs.columns[0];
        assert_eq!(obs.a[(0, c)], 2.0);
        assert_eq!(obs.b[0], 2.0 * x[c]);
        assert!(OrthColRegression::new(3, 4, 1.0, 0).is_err());
    }

    #[test]
    fn orthcol_second_moment_is_identity() {
        let oc = OrthColRegression::new(6, 2, 1.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Vector::zeros(6);
        let draws = 10_000;
        let mut acc = DMatrix::zeros(6, 6);
        for _ in 0..draws {
            let obs = oc.observe(&x, &mut rng);
            acc += obs.a.tr_mul(&obs.a);
        }
        acc /= draws as f64;
        let err = (acc - DMatrix::<f64>::identity(6, 6)).abs().max();
        assert!(err < 0.02, "max deviation {err}");
    }

    fn instance_for(kind: ProblemKind, seed: u64) -> ProblemInstance {
        ProblemInstance::generate(&ProblemParams::new(kind, 8, 3).with_seed(seed)).unwrap()
    }

    fn kinds() -> Vec<ProblemKind> {
        vec![
            ProblemKind::LinReg,
            ProblemKind::AbsReg,
            ProblemKind::Logistic,
            ProblemKind::HalfspaceIntersection,
            ProblemKind::PowerReg { gamma: 0.0 },
            ProblemKind::PowerReg { gamma: 0.4 },
            ProblemKind::PowerReg { gamma: 1.0 },
        ]
    }

    proptest! {
        #[test]
        fn losses_are_convex_with_valid_subgradients(
            seed in 0u64..50,
            xs in prop::collection::vec(-3.0f64..3.0, 3),
            ys in prop::collection::vec(-3.0f64..3.0, 3),
            t in 0.0f64..1.0,
        ) {
            let x = Vector::from_vec(xs);
            let y = Vector::from_vec(ys);
            for kind in kinds() {
                let inst = instance_for(kind, seed);
                for i in 0..inst.n_samples() {
                    let ex = inst.loss_eval(&x, i).unwrap();
                    let ey = inst.loss_eval(&y, i).unwrap();
                    let mid = inst.loss_eval(&(&x * t + &y * (1.0 - t)), i).unwrap();
                    let scale = 1.0 + ex.value.abs() + ey.value.abs();
                    prop_assert!(mid.value <= t * ex.value + (1.0 - t) * ey.value + 1e-10 * scale);
                    prop_assert!(ey.value >= ex.value + ex.subgradient.dot(&(&y - &x)) - 1e-10 * scale);
                }
            }
        }

        #[test]
        fn planted_point_attains_every_infimum(seed in 0u64..50) {
            for kind in kinds().into_iter().filter(|k| !matches!(k, ProblemKind::Logistic)) {
                let inst = instance_for(kind, seed);
                prop_assert!(inst.is_interpolating());
                let x_star = inst.planted().unwrap().clone();
                for i in 0..inst.n_samples() {
                    let e = inst.loss_eval(&x_star, i).unwrap();
                    prop_assert!((e.value - e.inf_value).abs() < 1e-10);
                }
            }
        }
    }
}
