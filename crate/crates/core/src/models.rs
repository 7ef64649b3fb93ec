//! Batch models: convex lower models of the averaged batch loss, anchored at
//! the current point.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{loss_value_and_slope, Batch, Loss, ProblemError, ProblemInstance};
use crate::Vector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("batch must contain at least one sample")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Truncated,
    FullProx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStrategy {
    /// One single-sample step per batch element from the same point, then
    /// average the resulting points.
    IterateAverage(ModelKind),
    /// Polyak-truncated step on the batch-averaged value and gradient.
    TruncatedAverage,
    /// Prox step on the average of per-sample truncated models.
    AverageOfTruncated,
    /// A single model of the batch-averaged loss.
    ModelOfAverage(ModelKind),
}

impl BatchStrategy {
    /// Whether the model is bounded below by the sample infima.
    pub fn is_lower_bounded(&self) -> bool {
        !matches!(
            self,
            BatchStrategy::ModelOfAverage(ModelKind::Linear)
                | BatchStrategy::IterateAverage(ModelKind::Linear)
        )
    }
}

/// The rows of one batch, copied so that the exact batch loss can be
/// evaluated without the instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchData {
    pub loss: Loss,
    /// `m × n`, one sampled row per batch element (repeats kept).
    pub a: DMatrix<f64>,
    pub b: Vector,
}

impl BatchData {
    pub fn from_batch(inst: &ProblemInstance, batch: &Batch) -> Result<Self, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let (a_full, b_full) = inst.data();
        let n = inst.n_samples();
        let mut a = DMatrix::zeros(batch.len(), inst.dim());
        let mut b = Vector::zeros(batch.len());
        for (r, &i) in batch.indices.iter().enumerate() {
            if i >= n {
                return Err(ProblemError::IndexOutOfRange {
                    index: i,
                    n_samples: n,
                }
                .into());
            }
            a.set_row(r, &a_full.row(i));
            b[r] = b_full[i];
        }
        Ok(Self {
            loss: inst.loss(),
            a,
            b,
        })
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Loss value of row `r` at `x`.
    pub fn sample_value(&self, x: &Vector, r: usize) -> f64 {
        self.sample_value_and_slope(x, r).0
    }

    pub(crate) fn sample_value_and_slope(&self, x: &Vector, r: usize) -> (f64, f64) {
        let row = self.a.row(r);
        let ax = row.transpose().dot(x);
        loss_value_and_slope(self.loss, ax, self.b[r], row.norm())
    }

    /// `F̄(x) = (1/m) Σ F(x; sⁱ)`.
    pub fn value(&self, x: &Vector) -> f64 {
        (0..self.len()).map(|r| self.sample_value(x, r)).sum::<f64>() / self.len() as f64
    }

    /// A single row as its own batch.
    pub fn single(&self, r: usize) -> BatchData {
        BatchData {
            loss: self.loss,
            a: DMatrix::from_rows(&[self.a.row(r).into_owned()]),
            b: Vector::from_element(1, self.b[r]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchModel {
    pub strategy: BatchStrategy,
    pub anchor: Vector,
    /// `F̄(x; batch)` at the anchor.
    pub anchor_value: f64,
    /// `n × m`, column `i` is the subgradient of sample `i` at the anchor.
    pub grads: DMatrix<f64>,
    /// Per-sample losses at the anchor.
    pub values: Vector,
    /// Per-sample infima `inf_z F(z; sⁱ)`.
    pub infima: Vector,
    /// `ḡ = (1/m) Σ gᵢ`.
    pub avg_grad: Vector,
    /// `Λ`, the average of the per-sample infima unless overridden.
    pub lower_bound: f64,
    pub data: BatchData,
}

pub fn build_batch_model(
    inst: &ProblemInstance,
    x: &Vector,
    batch: &Batch,
    strategy: BatchStrategy,
) -> Result<BatchModel, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if x.len() != inst.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: inst.dim(),
            found: x.len(),
        });
    }
    let data = BatchData::from_batch(inst, batch)?;
    let m = data.len();
    let mut grads = DMatrix::zeros(inst.dim(), m);
    let mut values = Vector::zeros(m);
    let infima = Vector::from_element(m, inst.loss().infimum());
    for r in 0..m {
        let (value, slope) = data.sample_value_and_slope(x, r);
        values[r] = value;
        grads.set_column(r, &(data.a.row(r).transpose() * slope));
    }
    let anchor_value = values.sum() / m as f64;
    let avg_grad = grads.column_mean();
    let lower_bound = infima.sum() / m as f64;
    Ok(BatchModel {
        strategy,
        anchor: x.clone(),
        anchor_value,
        grads,
        values,
        infima,
        avg_grad,
        lower_bound,
        data,
    })
}

impl BatchModel {
    pub fn batch_size(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// Overrides `Λ` (and the per-sample infima used by the averaged
    /// truncated model). Meant for negative controls.
    pub fn with_lower_bound(mut self, lower: f64) -> Self {
        self.lower_bound = lower;
        self.infima.fill(lower);
        self
    }

    fn sample_model(&self, kind: ModelKind, r: usize, y: &Vector, shift: &Vector) -> f64 {
        match kind {
            ModelKind::Linear => self.values[r] + self.grads.column(r).dot(shift),
            ModelKind::Truncated => {
                (self.values[r] + self.grads.column(r).dot(shift)).max(self.infima[r])
            }
            ModelKind::FullProx => self.data.sample_value(y, r),
        }
    }

    /// Model value at `y`.
    pub fn evaluate(&self, y: &Vector) -> Result<f64, ModelError> {
        if y.len() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found: y.len(),
            });
        }
        let shift = y - &self.anchor;
        let m = self.batch_size() as f64;
        let linear = || self.anchor_value + self.avg_grad.dot(&shift);
        Ok(match self.strategy {
            BatchStrategy::ModelOfAverage(ModelKind::Linear) => linear(),
            BatchStrategy::TruncatedAverage | BatchStrategy::ModelOfAverage(ModelKind::Truncated) => {
                linear().max(self.lower_bound)
            }
            BatchStrategy::ModelOfAverage(ModelKind::FullProx) => self.data.value(y),
            BatchStrategy::AverageOfTruncated => {
                (0..self.batch_size())
                    .map(|r| self.sample_model(ModelKind::Truncated, r, y, &shift))
                    .sum::<f64>()
                    / m
            }
            BatchStrategy::IterateAverage(kind) => {
                (0..self.batch_size())
                    .map(|r| self.sample_model(kind, r, y, &shift))
                    .sum::<f64>()
                    / m
            }
        })
    }

    /// Exact averaged batch loss `F̄(y; batch)`.
    pub fn batch_value(&self, y: &Vector) -> f64 {
        self.data.value(y)
    }
}

/// Outcome of probing a model against the model conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConditionReport {
    /// Convexity along random segments.
    pub c1_ok: bool,
    /// Exact at the anchor and below the batch loss at probes.
    pub c2_ok: bool,
    /// Bounded below by `Λ`, with `Λ` below the batch loss.
    pub c3_ok: bool,
    /// The averaged subgradient supports the batch loss at the anchor.
    pub subgradient_ok: bool,
    pub anchor_error: f64,
    /// Largest scaled violation across all checks (≤ 0 when all hold).
    pub worst_violation: f64,
    pub probes: usize,
}

impl ModelConditionReport {
    pub fn all_ok(&self) -> bool {
        self.c1_ok && self.c2_ok && self.c3_ok && self.subgradient_ok
    }
}

pub const ANCHOR_TOL: f64 = 1e-12;
pub const LOWER_TOL: f64 = 1e-9;

/// Probes `anchor + (‖x‖ + 1)·N(0, I)` and checks the model conditions.
/// Tolerances are relative to `max(1, |F̄|)`.
pub fn check_model_conditions<R: Rng + ?Sized>(
    model: &BatchModel,
    n_probes: usize,
    rng: &mut R,
) -> ModelConditionReport {
    let n = model.dim();
    let spread = model.anchor.norm() + 1.0;
    let draw = |rng: &mut R| -> Vector {
        &model.anchor
            + Vector::from_iterator(n, (0..n).map(|_| spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)))
    };
    let scale = |v: f64| v.abs().max(1.0);
    let eval = |y: &Vector| model.evaluate(y).expect("probe has model dimension");

    let anchor_model = eval(&model.anchor);
    let anchor_error = (anchor_model - model.anchor_value).abs();
    let mut worst = anchor_error / scale(model.anchor_value) - ANCHOR_TOL;
    let mut c1_ok = true;
    let mut c2_ok = worst <= 0.0;
    let mut c3_ok = true;
    let mut subgradient_ok = true;
    let check_c3 = model.strategy.is_lower_bounded();

    if check_c3 {
        let v = (model.lower_bound - model.anchor_value) / scale(model.anchor_value) - LOWER_TOL;
        worst = worst.max(v);
        c3_ok &= v <= 0.0;
    }

    for _ in 0..n_probes.max(1) {
        let p = draw(rng);
        let q = draw(rng);
        let t: f64 = rng.random();
        let (mp, mq) = (eval(&p), eval(&q));
        let mid = eval(&(&p * t + &q * (1.0 - t)));
        let fp = model.batch_value(&p);

        let conv = (mid - t * mp - (1.0 - t) * mq) / scale(mp.abs().max(mq.abs())) - LOWER_TOL;
        worst = worst.max(conv);
        c1_ok &= conv <= 0.0;

        let below = (mp - fp) / scale(fp) - LOWER_TOL;
        worst = worst.max(below);
        c2_ok &= below <= 0.0;

        let support = (model.anchor_value + model.avg_grad.dot(&(&p - &model.anchor)) - fp)
            / scale(fp)
            - LOWER_TOL;
        worst = worst.max(support);
        subgradient_ok &= support <= 0.0;

        if check_c3 {
            let above = (model.lower_bound - mp) / scale(mp) - LOWER_TOL;
            let lam = (model.lower_bound - fp) / scale(fp) - LOWER_TOL;
            worst = worst.max(above).max(lam);
            c3_ok &= above <= 0.0 && lam <= 0.0;
        }
    }

    ModelConditionReport {
        c1_ok,
        c2_ok,
        c3_ok,
        subgradient_ok,
        anchor_error,
        worst_violation: worst,
        probes: n_probes.max(1),
    }
}
