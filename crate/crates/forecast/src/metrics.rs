//! Displacement errors. Inputs are flat `[x0, y0, x1, y1, ...]` rows or
//! point lists of equal length.

use diffcore::Tensor64;

use crate::error::{Error, Result};

fn check(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths {} and {} must match and be non-zero",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean Euclidean distance over all predicted steps.
pub fn ade(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| dist(p, t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Euclidean distance at the last step.
pub fn fde(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    check(pred, truth)?;
    Ok(dist(
        *pred.last().expect("non-empty"),
        *truth.last().expect("non-empty"),
    ))
}

pub fn points(flat: &[f64]) -> Result<Vec<[f64; 2]>> {
    if !flat.len().is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "odd coordinate count {}",
            flat.len()
        )));
    }
    Ok(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

/// Per-row ADE and FDE of two `n x (2 * steps)` batches.
pub fn batch_errors(pred: &Tensor64, truth: &Tensor64) -> Result<Vec<(f64, f64)>> {
    if pred.shape() != truth.shape() {
        return Err(Error::InvalidInput(format!(
            "shapes {:?} and {:?} differ",
            pred.shape(),
            truth.shape()
        )));
    }
    (0..pred.rows())
        .map(|r| {
            let (p, t) = (points(pred.row(r))?, points(truth.row(r))?);
            Ok((ade(&p, &t)?, fde(&p, &t)?))
        })
        .collect()
}

/// Mean ADE and FDE over a batch.
pub fn mean_errors(pred: &Tensor64, truth: &Tensor64) -> Result<(f64, f64)> {
    let errs = batch_errors(pred, truth)?;
    if errs.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let n = errs.len() as f64;
    Ok((
        errs.iter().map(|e| e.0).sum::<f64>() / n,
        errs.iter().map(|e| e.1).sum::<f64>() / n,
    ))
}

/// Mean absolute error for scalar targets (point dimension 1).
pub fn mean_abs_error(pred: &Tensor64, truth: &Tensor64) -> Result<f64> {
    if pred.shape() != truth.shape() || pred.is_empty() {
        return Err(Error::InvalidInput("shape mismatch or empty".into()));
    }
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_offset() {
        let y: Vec<[f64; 2]> = (0..12).map(|t| [t as f64, -(t as f64)]).collect();
        assert_eq!(ade(&y, &y).unwrap(), 0.0);
        assert_eq!(fde(&y, &y).unwrap(), 0.0);
        let shifted: Vec<[f64; 2]> = y.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        assert!((ade(&shifted, &y).unwrap() - 5.0).abs() < 1e-12);
        assert!((fde(&shifted, &y).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn last_step_only() {
        let y = vec![[0.0, 0.0]; 12];
        let mut p = y.clone();
        p[11] = [2.0, 0.0];
        assert!((ade(&p, &y).unwrap() - 2.0 / 12.0).abs() < 1e-15);
        assert_eq!(fde(&p, &y).unwrap(), 2.0);
    }

    #[test]
    fn mismatch_is_an_error() {
        assert!(ade(&[[0.0, 0.0]], &[[0.0, 0.0], [1.0, 1.0]]).is_err());
        assert!(fde(&[], &[]).is_err());
        assert!(points(&[1.0, 2.0, 3.0]).is_err());
    }
}
