//! Warm starts for the diagonal transform and the user co-occurrence
//! regularizer.
//!
//! Both objectives drive `t(c) ⊙ t(c)` (respectively column products of
//! co-selected bits) toward all-ones, so that frequently co-occurring
//! feature values start out with nearly equal columns and the transform
//! begins at the identity. The all-ones matrix is a global minimum of both,
//! which is what makes the warm start kill the initialization variance.

use crate::constraint::{ConstraintVector, CooccurrenceStats};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::DiagonalTransform;

/// Mean over the catalog of `|| 1_k - t(c) ⊙ t(c) ||^2` with
/// `t(c) = D c / ||c||_1`.
pub fn feature_overlap_objective(dmat: &Mat, constraints: &[ConstraintVector]) -> f64 {
    if constraints.is_empty() {
        return 0.0;
    }
    let k = dmat.rows();
    let mut total = 0.0;
    for c in constraints {
        let inv = 1.0 / c.l1();
        for kappa in 0..k {
            let row = dmat.row(kappa);
            let t: f64 = c.active().iter().map(|&j| row[j]).sum::<f64>() * inv;
            let gap = 1.0 - t * t;
            total += gap * gap;
        }
    }
    total / constraints.len() as f64
}

fn feature_overlap_gradient(dmat: &Mat, constraints: &[ConstraintVector]) -> Mat {
    let (k, d) = (dmat.rows(), dmat.cols());
    let mut grad = Mat::zeros(k, d);
    let scale = 1.0 / constraints.len() as f64;
    for c in constraints {
        let inv = 1.0 / c.l1();
        for kappa in 0..k {
            let row = dmat.row(kappa);
            let t: f64 = c.active().iter().map(|&j| row[j]).sum::<f64>() * inv;
            // d/dt of (1 - t^2)^2 = -4 t (1 - t^2)
            let dt = -4.0 * t * (1.0 - t * t) * scale;
            for &j in c.active() {
                grad.add_at(kappa, j, dt * inv);
            }
        }
    }
    grad
}

/// Gradient descent with backtracking from an explicit start. Stops when the
/// objective falls below `target` or the step size collapses.
pub fn minimize_feature_overlap(
    start: Mat,
    constraints: &[ConstraintVector],
    max_iters: usize,
    target: f64,
) -> Mat {
    descend(
        start,
        max_iters,
        target,
        |m| feature_overlap_objective(m, constraints),
        |m| feature_overlap_gradient(m, constraints),
    )
}

/// Initialize the transform by minimizing the feature-overlap objective from
/// an all-ones start. All-ones gives every `t(c)` exactly 1, so the start is
/// already the global minimum and the returned transform is the identity for
/// every observed constraint.
pub fn warm_start_feature_overlap(
    constraints: &[ConstraintVector],
    k: usize,
    d: usize,
) -> Result<DiagonalTransform> {
    if constraints.is_empty() {
        return Err(Error::InvalidConfig(
            "feature-overlap warm start needs a nonempty constraint catalog".into(),
        ));
    }
    for c in constraints {
        if c.d() != d {
            return Err(Error::DimensionMismatch {
                what: "warm start catalog",
                expected: d,
                got: c.d(),
            });
        }
    }
    let dmat = minimize_feature_overlap(Mat::filled(k, d, 1.0), constraints, 500, 1e-3);
    Ok(DiagonalTransform::new(dmat))
}

/// Sum over co-occurring bit pairs (j < j') of
/// `|| 1_k - D[:,j] ⊙ D[:,j'] ||^2`. The per-pair user-count normalization
/// cancels: the summand is the same for every user exhibiting the pair, so
/// each active pair contributes exactly once.
pub fn cooccurrence_objective(dmat: &Mat, stats: &CooccurrenceStats) -> f64 {
    let k = dmat.rows();
    let mut total = 0.0;
    for (j, jp) in stats.active_pairs() {
        for kappa in 0..k {
            let gap = 1.0 - dmat.get(kappa, j) * dmat.get(kappa, jp);
            total += gap * gap;
        }
    }
    total
}

/// The co-occurrence penalty added to the training loss.
pub fn cooccurrence_regularizer(
    diag: &DiagonalTransform,
    stats: &CooccurrenceStats,
    strength: f64,
) -> f64 {
    if strength == 0.0 {
        return 0.0;
    }
    strength * cooccurrence_objective(&diag.dmat, stats)
}

fn cooccurrence_gradient(dmat: &Mat, stats: &CooccurrenceStats) -> Mat {
    let (k, d) = (dmat.rows(), dmat.cols());
    let mut grad = Mat::zeros(k, d);
    for (j, jp) in stats.active_pairs() {
        for kappa in 0..k {
            let (a, b) = (dmat.get(kappa, j), dmat.get(kappa, jp));
            let gap = 1.0 - a * b;
            grad.add_at(kappa, j, -2.0 * gap * b);
            grad.add_at(kappa, jp, -2.0 * gap * a);
        }
    }
    grad
}

pub fn minimize_cooccurrence(
    start: Mat,
    stats: &CooccurrenceStats,
    max_iters: usize,
    target: f64,
) -> Mat {
    descend(
        start,
        max_iters,
        target,
        |m| cooccurrence_objective(m, stats),
        |m| cooccurrence_gradient(m, stats),
    )
}

/// Initialize the transform at the minimum of the co-occurrence regularizer,
/// starting from all-ones (itself a global minimum: every column product is
/// already all-ones).
pub fn warm_start_cooccurrence(stats: &CooccurrenceStats, k: usize, d: usize) -> DiagonalTransform {
    let dmat = minimize_cooccurrence(Mat::filled(k, d, 1.0), stats, 500, 1e-9);
    DiagonalTransform::new(dmat)
}

fn descend(
    start: Mat,
    max_iters: usize,
    target: f64,
    obj: impl Fn(&Mat) -> f64,
    grad: impl Fn(&Mat) -> Mat,
) -> Mat {
    let mut x = start;
    let mut f = obj(&x);
    let mut step = 0.25;
    for _ in 0..max_iters {
        if f <= target {
            break;
        }
        let g = grad(&x);
        let gnorm2: f64 = g.data().iter().map(|v| v * v).sum();
        if gnorm2 < 1e-24 {
            break;
        }
        // Backtracking line search on the Armijo condition.
        let mut accepted = false;
        for _ in 0..40 {
            let cand = Mat::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) - step * g.get(r, c));
            let fc = obj(&cand);
            if fc <= f - 1e-4 * step * gnorm2 {
                x = cand;
                f = fc;
                step *= 1.2;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    x
}
