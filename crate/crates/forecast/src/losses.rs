//! Task risk, invariance penalty and style contrastive loss as graph nodes.
//!
//! Predictions and targets are `n x (steps * point_dim)` row batches;
//! `point_dim` is 2 for trajectories.

use diffcore::{Graph, Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_batch<F: Scalar>(g: &Graph<F>, pred: Var, target: Var, point_dim: usize) -> Result<usize> {
    let (rows, cols) = g.shape(pred);
    if g.shape(target) != (rows, cols) {
        return Err(diffcore::Error::ShapeMismatch {
            op: "task_loss",
            left: (rows, cols),
            right: g.shape(target),
        }
        .into());
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if point_dim == 0 || cols % point_dim != 0 {
        return Err(Error::InvalidInput(format!(
            "{cols} columns do not split into points of {point_dim}"
        )));
    }
    Ok(rows * cols / point_dim)
}

/// Mean over examples and steps of the squared Euclidean error.
pub fn task_loss<F: Scalar>(
    g: &mut Graph<F>,
    pred: Var,
    target: Var,
    point_dim: usize,
) -> Result<Var> {
    check_batch(g, pred, target, point_dim)?;
    let mse = g.squared_error(pred, target)?;
    Ok(g.scale(mse, F::lit(point_dim as f64))?)
}

/// Squared derivative of the task risk with respect to a scalar multiplier
/// on the predictions, taken at 1: `((2 / N) Σ ⟨ŷ, ŷ − y⟩)²` over the `N`
/// predicted points.
pub fn invariant_penalty<F: Scalar>(
    g: &mut Graph<F>,
    pred: Var,
    target: Var,
    point_dim: usize,
) -> Result<Var> {
    check_batch(g, pred, target, point_dim)?;
    let s = slope(g, pred, target, point_dim)?;
    Ok(g.mul(s, s)?)
}

/// How the penalty is estimated from a minibatch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyEstimator {
    /// Square of the batch slope, [`invariant_penalty`].
    #[default]
    Squared,
    /// Product of the slopes of the two batch halves,
    /// [`invariant_penalty_split`].
    Split,
}

fn slope<F: Scalar>(g: &mut Graph<F>, pred: Var, target: Var, point_dim: usize) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let inner = g.mul(pred, diff)?;
    let mean = g.mean(inner)?;
    Ok(g.scale(mean, F::lit(2.0 * point_dim as f64))?)
}

/// Same slope as [`invariant_penalty`], but the product of the slopes over
/// the first and second half of the rows. Its expectation over batches is
/// the squared expected slope; the squared batch slope adds the slope's
/// sampling variance on top. Needs at least two rows.
pub fn invariant_penalty_split<F: Scalar>(
    g: &mut Graph<F>,
    pred: Var,
    target: Var,
    point_dim: usize,
) -> Result<Var> {
    let rows = check_batch(g, pred, target, point_dim).map(|_| g.shape(pred).0)?;
    if rows < 2 {
        return Err(Error::InvalidInput(
            "split penalty needs at least two rows".into(),
        ));
    }
    let half = rows / 2;
    let mut slopes = [pred; 2];
    for (k, range) in [0..half, half..rows].into_iter().enumerate() {
        let idx: Vec<usize> = range.collect();
        let p = g.gather_rows(pred, idx.clone())?;
        let t = g.gather_rows(target, idx)?;
        slopes[k] = slope(g, p, t, point_dim)?;
    }
    Ok(g.mul(slopes[0], slopes[1])?)
}

/// Mean over environments of `risk + λ · penalty`. `batches` holds one
/// `(prediction, target)` pair per environment.
pub fn combined_invariant_objective<F: Scalar>(
    g: &mut Graph<F>,
    batches: &[(Var, Var)],
    lambda: f64,
    point_dim: usize,
) -> Result<Var> {
    combined_invariant_objective_with(g, batches, lambda, point_dim, PenaltyEstimator::Squared)
}

/// [`combined_invariant_objective`] with a chosen penalty estimator.
pub fn combined_invariant_objective_with<F: Scalar>(
    g: &mut Graph<F>,
    batches: &[(Var, Var)],
    lambda: f64,
    point_dim: usize,
    estimator: PenaltyEstimator,
) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "penalty weight must be >= 0, got {lambda}"
        )));
    }
    if batches.is_empty() {
        return Err(Error::InvalidInput("no environments".into()));
    }
    if batches.len() < 2 {
        log::warn!(
            "invariance penalty over a single environment cannot separate spurious features"
        );
    }
    let mut terms = Vec::with_capacity(batches.len());
    for &(pred, target) in batches {
        let risk = task_loss(g, pred, target, point_dim)?;
        let term = if lambda > 0.0 {
            let pen = match estimator {
                PenaltyEstimator::Squared => invariant_penalty(g, pred, target, point_dim)?,
                PenaltyEstimator::Split => invariant_penalty_split(g, pred, target, point_dim)?,
            };
            let weighted = g.scale(pen, F::lit(lambda))?;
            g.add(risk, weighted)?
        } else {
            risk
        };
        terms.push(term);
    }
    let stacked = g.concat_cols(&terms)?;
    Ok(g.mean(stacked)?)
}

/// Ordered pairs `(i, j)`, `i != j`, with equal labels.
pub fn positive_pairs(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, &a) in labels.iter().enumerate() {
        for (j, &b) in labels.iter().enumerate() {
            if i != j && a == b {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Supervised contrastive loss over projected embeddings `p` (one row per
/// sample, normalized inside), averaged over ordered positive pairs. For a
/// pair `(i, j)` the denominator runs over `j` and every sample from a
/// different environment than `i`.
pub fn style_contrastive<F: Scalar>(
    g: &mut Graph<F>,
    p: Var,
    labels: &[usize],
    tau: f64,
) -> Result<Var> {
    let (n, _) = g.shape(p);
    if labels.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} labels for {n} embeddings",
            labels.len()
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    for (i, &e) in labels.iter().enumerate() {
        if !labels.iter().enumerate().any(|(k, &l)| k != i && l == e) {
            return Err(Error::ContrastiveBatch {
                env: e,
                missing: "positive",
            });
        }
        if !labels.iter().any(|&l| l != e) {
            return Err(Error::ContrastiveBatch {
                env: e,
                missing: "negative",
            });
        }
    }
    contrastive_over_pairs(g, p, labels, &positive_pairs(labels), tau)
}

/// Loss of the single positive pair `(i, j)`.
pub fn style_contrastive_pair<F: Scalar>(
    g: &mut Graph<F>,
    p: Var,
    labels: &[usize],
    (i, j): (usize, usize),
    tau: f64,
) -> Result<Var> {
    let (n, _) = g.shape(p);
    if labels.len() != n || i >= n || j >= n || i == j || labels[i] != labels[j] {
        return Err(Error::InvalidInput(format!(
            "({i}, {j}) is not a positive pair of {n} samples"
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    contrastive_over_pairs(g, p, labels, &[(i, j)], tau)
}

fn contrastive_over_pairs<F: Scalar>(
    g: &mut Graph<F>,
    p: Var,
    labels: &[usize],
    pairs: &[(usize, usize)],
    tau: f64,
) -> Result<Var> {
    let (n, _) = g.shape(p);
    let unit = g.normalize_rows(p)?;
    let sim = g.matmul_nt(unit, unit)?;
    let logits = g.scale(sim, F::lit(1.0 / tau))?;
    let anchors: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
    let rows = g.gather_rows(logits, anchors)?;
    let mut mask = Vec::with_capacity(pairs.len() * n);
    for &(i, j) in pairs {
        mask.extend((0..n).map(|k| k == j || labels[k] != labels[i]));
    }
    let denom = g.logsumexp_rows(rows, Some(mask))?;
    let numer = g.gather_elems(logits, pairs.iter().map(|&(i, j)| i * n + j).collect())?;
    let per_pair = g.sub(denom, numer)?;
    Ok(g.mean(per_pair)?)
}
