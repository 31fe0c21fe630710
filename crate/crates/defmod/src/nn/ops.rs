//! Scalar and small dense-vector primitives shared by every trainer.

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log sigma(x), computed without overflow for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// In-place stable softmax.
pub fn softmax_inplace(xs: &mut [f64]) {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Stable log-softmax: x - max - log(sum exp(x - max)).
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - m - lse).collect()
}

/// Cross-entropy of `target` under softmax(logits). Returns the loss and the
/// gradient over the logits (softmax - onehot).
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::Shape(format!(
            "softmax_xent: target {target} out of range for {} logits",
            logits.len()
        )));
    }
    let lp = log_softmax(logits);
    let loss = -lp[target];
    let mut grad: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// y = W x for a row-major `rows x cols` matrix.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(y.len(), rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x.iter()) {
            acc += a * b;
        }
        y[r] = acc;
    }
}

/// y += W^T d for a row-major `rows x cols` matrix (back-propagated input grad).
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, d: &[f64], y: &mut [f64]) {
    debug_assert_eq!(d.len(), rows);
    debug_assert_eq!(y.len(), cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let dr = d[r];
        for (yc, a) in y.iter_mut().zip(row.iter()) {
            *yc += dr * a;
        }
    }
}

/// grad += d x^T (outer product accumulation into a `rows x cols` gradient).
pub fn outer_acc(grad: &mut [f64], rows: usize, cols: usize, d: &[f64], x: &[f64]) {
    debug_assert_eq!(grad.len(), rows * cols);
    debug_assert_eq!(d.len(), rows);
    debug_assert_eq!(x.len(), cols);
    for r in 0..rows {
        let g = &mut grad[r * cols..(r + 1) * cols];
        let dr = d[r];
        for (gc, xc) in g.iter_mut().zip(x.iter()) {
            *gc += dr * xc;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// y += s * x
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yc, xc) in y.iter_mut().zip(x.iter()) {
        *yc += s * xc;
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let logits = vec![0.3, -2.0, 5.0, 1.7];
        let mut p = logits.clone();
        softmax_inplace(&mut p);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(p.iter().all(|x| *x >= 0.0));

        let shifted: Vec<f64> = logits.iter().map(|x| x + 123.0).collect();
        let (l0, _) = softmax_xent(&logits, 2).unwrap();
        let (l1, _) = softmax_xent(&shifted, 2).unwrap();
        assert_abs_diff_eq!(l0, l1, epsilon = 1e-9);
    }

    #[test]
    fn xent_uniform_logits_gives_log_v() {
        let logits = vec![0.0; 4];
        for t in 0..4 {
            let (loss, grad) = softmax_xent(&logits, t).unwrap();
            assert_abs_diff_eq!(loss, 4.0_f64.ln(), epsilon = 1e-12);
            assert_abs_diff_eq!(grad[t], 0.25 - 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn xent_survives_huge_logits() {
        let (loss, _) = softmax_xent(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.is_finite());
        assert!(loss < 1e-12);
    }

    #[test]
    fn xent_hand_value() {
        // -log(1/(1+e)) = log(1+e)
        let (loss, _) = softmax_xent(&[1.0, 0.0], 1).unwrap();
        assert_abs_diff_eq!(loss, (1.0 + std::f64::consts::E).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 1.3132616875182228, epsilon = 1e-12);
    }

    #[test]
    fn xent_rejects_out_of_range_target() {
        assert!(softmax_xent(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn log_sigmoid_matches_naive_in_safe_range() {
        for x in [-5.0, -1.0, 0.0, 0.5, 3.0] {
            assert_abs_diff_eq!(log_sigmoid(x), sigmoid(x).ln(), epsilon = 1e-12);
        }
        assert!(log_sigmoid(-800.0).is_finite());
        assert!(log_sigmoid(800.0) <= 0.0);
    }
}
