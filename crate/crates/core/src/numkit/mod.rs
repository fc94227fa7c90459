//! Small deterministic numeric kernel shared by every other module.
//!
//! Everything here is a pure function over `f64`. Summations run left to
//! right over the stated index order so results are bit-reproducible across
//! runs and threads.

mod matrix;
mod stats;

pub use matrix::{singular_values, symmetric_eigenvalues, Matrix, SingularSpectrum};
pub use stats::{kendall_tau, moments, MomentStats};

/// Errors raised by the numeric kernel.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("empty input")]
    Empty,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Logistic function `1 / (1 + e^{-x})`, evaluated without overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log σ(x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, NumError> {
    if logits.is_empty() {
        return Err(NumError::Empty);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NumError::NonFinite);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Log-softmax with the same max shift as [`softmax`].
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>, NumError> {
    if logits.is_empty() {
        return Err(NumError::Empty);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NumError::NonFinite);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_z = max + total.ln();
    Ok(logits.iter().map(|&l| l - log_z).collect())
}

/// Dot product, summed left to right.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Population mean. Returns `None` on empty input.
pub fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(700.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-700.0) >= 0.0 && sigmoid(-700.0) < 1e-300);
        // mpmath, 40 digits
        assert!((sigmoid(1.4) - 0.802_183_888_558_581_7).abs() < 1e-15);
        assert!(sigmoid(1000.0).is_finite() && sigmoid(-1000.0).is_finite());
    }

    #[test]
    fn log_sigmoid_reference_points() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        let far = log_sigmoid(-1000.0);
        assert!(far.is_finite());
        assert!((far + 1000.0).abs() < 1e-9);
        assert!((log_sigmoid(2.0) + 0.126_928_011_042_972_5).abs() < 1e-15);
    }

    #[test]
    fn softmax_reference_points() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for p in &u {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        for c in [0.0, 10.0, -10.0] {
            let p = softmax(&[c, c + 3f64.ln()]).unwrap();
            assert!((p[0] - 0.25).abs() < 1e-12, "{c}: {p:?}");
            assert!((p[1] - 0.75).abs() < 1e-12);
        }
        let sat = softmax(&[1000.0, 0.0]).unwrap();
        assert!((sat[0] - 1.0).abs() < 1e-12 && sat[1] < 1e-12);
        assert_eq!(softmax(&[]), Err(NumError::Empty));
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let l = [0.3, -1.2, 2.5, 0.0];
        let p = softmax(&l).unwrap();
        let lp = log_softmax(&l).unwrap();
        for (a, b) in p.iter().zip(&lp) {
            assert!((a.ln() - b).abs() < 1e-14);
        }
    }
}
