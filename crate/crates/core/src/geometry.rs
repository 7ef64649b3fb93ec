//! Distance-generating functions, Bregman divergences and mirror steps.
//!
//! Two potentials are provided: the Euclidean `h(x) = ½‖x‖²` (1-strongly convex
//! w.r.t. ℓ2) and the negative entropy `h(x) = Σ xᵢ log xᵢ` restricted to the
//! probability simplex (1-strongly convex w.r.t. ℓ1 by Pinsker's inequality).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vector;

/// Entropy coordinates are clamped to this floor before taking logarithms.
pub const ENTROPY_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("coordinate {index} = {value} is on the boundary of the entropy domain")]
    Boundary { index: usize, value: f64 },
    #[error("stepsize must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("{0:?} cannot be used with this domain")]
    IncompatibleDomain(DgfKind),
    #[error("ball radius must be positive, got {0}")]
    InvalidRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgfKind {
    EuclideanHalfSq,
    NegEntropySimplex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistanceGenerator {
    kind: DgfKind,
    dim: usize,
}

impl DistanceGenerator {
    pub fn euclidean(dim: usize) -> Self {
        Self {
            kind: DgfKind::EuclideanHalfSq,
            dim,
        }
    }

    pub fn entropy(dim: usize) -> Self {
        Self {
            kind: DgfKind::NegEntropySimplex,
            dim,
        }
    }

    pub fn kind(&self) -> DgfKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_dim(&self, x: &Vector) -> Result<(), GeometryError> {
        if x.len() != self.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, x: &Vector) -> Result<f64, GeometryError> {
        self.check_dim(x)?;
        Ok(match self.kind {
            DgfKind::EuclideanHalfSq => 0.5 * x.norm_squared(),
            DgfKind::NegEntropySimplex => x
                .iter()
                .map(|&xi| {
                    let c = xi.max(ENTROPY_FLOOR);
                    c * c.ln()
                })
                .sum(),
        })
    }

    /// Gradient of `h`. For the entropy, coordinates at or below zero are
    /// rejected since `∇h` is undefined there.
    pub fn gradient(&self, x: &Vector) -> Result<Vector, GeometryError> {
        self.check_dim(x)?;
        match self.kind {
            DgfKind::EuclideanHalfSq => Ok(x.clone()),
            DgfKind::NegEntropySimplex => {
                if let Some((index, &value)) = x.iter().enumerate().find(|(_, &v)| v <= 0.0) {
                    return Err(GeometryError::Boundary { index, value });
                }
                Ok(x.map(|xi| xi.max(ENTROPY_FLOOR).ln() + 1.0))
            }
        }
    }

    /// The norm w.r.t. which `h` is 1-strongly convex.
    pub fn norm(&self, x: &Vector) -> f64 {
        match self.kind {
            DgfKind::EuclideanHalfSq => x.norm(),
            DgfKind::NegEntropySimplex => x.lp_norm(1),
        }
    }

    pub fn dual_norm(&self, g: &Vector) -> f64 {
        match self.kind {
            DgfKind::EuclideanHalfSq => g.norm(),
            DgfKind::NegEntropySimplex => g.amax(),
        }
    }

    /// `D_h(x, y) = h(x) − h(y) − ⟨∇h(y), x − y⟩`.
    pub fn bregman(&self, x: &Vector, y: &Vector) -> Result<f64, GeometryError> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        match self.kind {
            DgfKind::EuclideanHalfSq => Ok(0.5 * (x - y).norm_squared()),
            DgfKind::NegEntropySimplex => {
                if let Some((index, &value)) = y.iter().enumerate().find(|(_, &v)| v <= 0.0) {
                    return Err(GeometryError::Boundary { index, value });
                }
                // Written in the generalized-KL form so that it stays exact
                // for unnormalized inputs.
                let d = x
                    .iter()
                    .zip(y.iter())
                    .map(|(&xi, &yi)| {
                        let xc = xi.max(ENTROPY_FLOOR);
                        let yc = yi.max(ENTROPY_FLOOR);
                        xc * (xc / yc).ln() - xc + yc
                    })
                    .sum::<f64>();
                Ok(d.max(0.0))
            }
        }
    }
}

/// The constraint set `𝒳`.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    AllSpace,
    EuclideanBall { center: Vector, radius: f64 },
    Simplex,
}

impl Domain {
    pub fn ball(center: Vector, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::InvalidRadius(radius));
        }
        Ok(Domain::EuclideanBall { center, radius })
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            Domain::AllSpace => true,
            Domain::EuclideanBall { center, radius } => (x - center).norm() <= radius + tol,
            Domain::Simplex => {
                x.iter().all(|&v| v >= -tol) && (x.sum() - 1.0).abs() <= tol * x.len() as f64
            }
        }
    }

    pub fn is_all_space(&self) -> bool {
        matches!(self, Domain::AllSpace)
    }
}

pub fn bregman_divergence(
    h: &DistanceGenerator,
    x: &Vector,
    y: &Vector,
) -> Result<f64, GeometryError> {
    h.bregman(x, y)
}

/// Nearest point of `dom` in ℓ2.
pub fn project_domain(dom: &Domain, x: &Vector) -> Vector {
    match dom {
        Domain::AllSpace => x.clone(),
        Domain::EuclideanBall { center, radius } => {
            let d = x - center;
            let len = d.norm();
            if len <= *radius {
                x.clone()
            } else {
                center + d * (*radius / len)
            }
        }
        Domain::Simplex => project_simplex(x),
    }
}

/// Euclidean projection onto `{x ≥ 0, Σx = 1}` by the sort-and-threshold rule.
fn project_simplex(x: &Vector) -> Vector {
    let n = x.len();
    if n == 0 {
        return x.clone();
    }
    let mut sorted: Vec<f64> = x.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    x.map(|v| (v - theta).max(0.0))
}

/// `argmin_{x ∈ dom} ⟨g, x⟩ + D_h(x, z) / α`.
pub fn mirror_linear_step(
    h: &DistanceGenerator,
    dom: &Domain,
    z: &Vector,
    g: &Vector,
    alpha: f64,
) -> Result<Vector, GeometryError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(GeometryError::InvalidStep(alpha));
    }
    h.check_dim(z)?;
    h.check_dim(g)?;
    match (h.kind(), dom) {
        (DgfKind::EuclideanHalfSq, Domain::AllSpace) => Ok(z - g * alpha),
        (DgfKind::EuclideanHalfSq, Domain::EuclideanBall { .. }) => {
            Ok(project_domain(dom, &(z - g * alpha)))
        }
        (DgfKind::NegEntropySimplex, Domain::Simplex) => {
            let logits: Vec<f64> = z
                .iter()
                .zip(g.iter())
                .map(|(&zi, &gi)| zi.max(ENTROPY_FLOOR).ln() - alpha * gi)
                .collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = weights.iter().sum();
            Ok(Vector::from_iterator(
                weights.len(),
                weights.into_iter().map(|w| (w / total).max(ENTROPY_FLOOR)),
            ))
        }
        (kind, _) => Err(GeometryError::IncompatibleDomain(kind)),
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
    fn euclidean_divergence_examples() {
        let h = DistanceGenerator::euclidean(2);
        assert_eq!(h.bregman(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(h.bregman(&v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 0.5);
    }

    #[test]
    fn entropy_divergence_matches_kl_sum() {
        let h = DistanceGenerator::entropy(2);
        let x = v(&[0.5, 0.5]);
        let y = v(&[0.25, 0.75]);
        // Σ xᵢ log(xᵢ/yᵢ), evaluated term by term with log1p for the
        // second coordinate.
        let oracle = 0.5 * 2f64.ln() + 0.5 * (-1.0f64 / 3.0).ln_1p();
        let d = h.bregman(&x, &y).unwrap();
        assert!((d - oracle).abs() < 1e-15, "{d} vs {oracle}");
    }

    #[test]
    fn entropy_rejects_boundary_and_mismatch() {
        let h = DistanceGenerator::entropy(2);
        assert!(matches!(
            h.bregman(&v(&[0.5, 0.5]), &v(&[1.0, 0.0])),
            Err(GeometryError::Boundary { index: 1, .. })
        ));
        assert!(matches!(
            h.bregman(&v(&[0.5, 0.5]), &v(&[1.0])),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mirror_step_examples() {
        let h = DistanceGenerator::euclidean(2);
        let z = v(&[0.3, -1.0]);
        let out = mirror_linear_step(&h, &Domain::AllSpace, &z, &v(&[0.0, 0.0]), 2.0).unwrap();
        assert_eq!(out, z);

        let ball = Domain::ball(v(&[0.0, 0.0]), 1.0).unwrap();
        let out = mirror_linear_step(&h, &ball, &v(&[0.0, 0.0]), &v(&[-2.0, 0.0]), 1.0).unwrap();
        assert!((out - v(&[1.0, 0.0])).norm() < 1e-15);

        assert!(matches!(
            mirror_linear_step(&h, &Domain::AllSpace, &z, &z, 0.0),
            Err(GeometryError::InvalidStep(_))
        ));
        assert!(matches!(
            mirror_linear_step(&h, &Domain::Simplex, &z, &z, 1.0),
            Err(GeometryError::IncompatibleDomain(_))
        ));
    }

    #[test]
    fn entropy_step_matches_grid_minimization() {
        let h = DistanceGenerator::entropy(2);
        let z = v(&[0.5, 0.5]);
        let g = v(&[2f64.ln(), 0.0]);
        let out = mirror_linear_step(&h, &Domain::Simplex, &z, &g, 1.0).unwrap();
        // Dense grid over the 1-simplex of ⟨g, x⟩ + KL(x‖z).
        let steps = 200_000;
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..steps {
            let t = i as f64 / steps as f64;
            let x = v(&[t, 1.0 - t]);
            let obj = g.dot(&x) + h.bregman(&x, &z).unwrap();
            if obj < best.0 {
                best = (obj, t);
            }
        }
        assert!((best.1 - 1.0 / 3.0).abs() < 1e-4);
        assert!((out[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((out[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let x = v(&[3.0, 4.0]);
        assert_eq!(project_domain(&Domain::AllSpace, &x), x);
        let ball = Domain::ball(v(&[0.0, 0.0]), 1.0).unwrap();
        assert!((project_domain(&ball, &x) - v(&[0.6, 0.8])).norm() < 1e-15);
        let p = project_domain(&Domain::Simplex, &v(&[0.2, 0.2]));
        assert!((p - v(&[0.5, 0.5])).norm() < 1e-15);
    }

    /// Exhaustive active-set enumeration: for each support S, the candidate is
    /// `xᵢ − (Σ_S x − 1)/|S|` on S and 0 elsewhere; keep feasible candidates and
    /// return the closest one.
    fn simplex_projection_oracle(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << n) {
            let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let shift =
                (support.iter().map(|&i| x[i]).sum::<f64>() - 1.0) / support.len() as f64;
            let mut cand = vec![0.0; n];
            for &i in &support {
                cand[i] = x[i] - shift;
            }
            if cand.iter().any(|&c| c < -1e-12) {
                continue;
            }
            let d: f64 = cand.iter().zip(x).map(|(c, xi)| (c - xi).powi(2)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, cand));
            }
        }
        best.unwrap().1
    }

    proptest! {
        #[test]
        fn simplex_projection_matches_enumeration(xs in prop::collection::vec(-2.0f64..2.0, 1..6)) {
            let p = project_domain(&Domain::Simplex, &Vector::from_vec(xs.clone()));
            let oracle = simplex_projection_oracle(&xs);
            for (a, b) in p.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn divergence_dominates_half_norm_sq(
            raw_x in prop::collection::vec(0.01f64..1.0, 3),
            raw_y in prop::collection::vec(0.01f64..1.0, 3),
        ) {
            let eu = DistanceGenerator::euclidean(3);
            let x = Vector::from_vec(raw_x.clone());
            let y = Vector::from_vec(raw_y.clone());
            let d = eu.bregman(&x, &y).unwrap();
            prop_assert!(d >= 0.5 * eu.norm(&(&x - &y)).powi(2) - 1e-12);

            let ent = DistanceGenerator::entropy(3);
            let xs = &x / x.sum();
            let ys = &y / y.sum();
            let d = ent.bregman(&xs, &ys).unwrap();
            prop_assert!(d >= 0.5 * ent.norm(&(&xs - &ys)).powi(2) - 1e-12);
            prop_assert!(ent.bregman(&xs, &xs).unwrap().abs() < 1e-15);
        }

        #[test]
        fn mirror_step_first_order_optimality(
            raw_z in prop::collection::vec(0.05f64..1.0, 4),
            g in prop::collection::vec(-3.0f64..3.0, 4),
            alpha in 0.01f64..5.0,
            raw_probe in prop::collection::vec(0.0f64..1.0, 4),
        ) {
            let h = DistanceGenerator::entropy(4);
            let z = Vector::from_vec(raw_z.clone()) / raw_z.iter().sum::<f64>();
            let g = Vector::from_vec(g);
            let xp = mirror_linear_step(&h, &Domain::Simplex, &z, &g, alpha).unwrap();
            let probe_sum: f64 = raw_probe.iter().sum::<f64>().max(1e-9);
            let probe = Vector::from_vec(raw_probe) / probe_sum;
            let grad = &g + (h.gradient(&xp).unwrap() - h.gradient(&z).unwrap()) / alpha;
            prop_assert!(grad.dot(&(probe - &xp)) >= -1e-8);

            let eu = DistanceGenerator::euclidean(4);
            let ball = Domain::ball(Vector::zeros(4), 0.5).unwrap();
            let z0 = project_domain(&ball, &z);
            let xp = mirror_linear_step(&eu, &ball, &z0, &g, alpha).unwrap();
            let probe = project_domain(&ball, &(Vector::from_element(4, 0.3) - &g));
            let grad = &g + (&xp - &z0) / alpha;
            prop_assert!(grad.dot(&(probe - &xp)) >= -1e-8);

            let free = mirror_linear_step(&eu, &Domain::AllSpace, &z, &g, alpha).unwrap();
            prop_assert_eq!(free, &z - &g * alpha);
        }
    }
}
