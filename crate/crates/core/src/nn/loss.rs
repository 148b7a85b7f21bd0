use ndarray::{ArrayD, Axis};

use super::Tensor;
use crate::error::{Error, Result};

/// Batch mean of per-sample p-norm distances, each taken over the
/// pixel-mean of `|pred - target|^p`. For `p = 1` this is the mean absolute
/// error over batch and pixels. Returns the loss and its gradient w.r.t.
/// `pred`.
pub fn lp_loss(pred: &Tensor, target: &Tensor, p: f64) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::contract(format!(
            "prediction shape {:?} differs from target shape {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::domain(format!("norm order {p} must be >= 1")));
    }
    let n = pred.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::contract("empty batch"));
    }
    let diff = pred - target;
    let pixels = (diff.len() / n) as f64;
    let mut loss = 0.0;
    let mut grad = ArrayD::<f64>::zeros(diff.raw_dim());
    for (d, mut g) in diff.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))) {
        if p == 1.0 {
            loss += d.iter().map(|v| v.abs()).sum::<f64>() / pixels;
            g.zip_mut_with(&d, |g, &v| *g = v.signum() * f64::from(v != 0.0) / pixels / n as f64);
        } else {
            let mean_pow = d.iter().map(|v| v.abs().powf(p)).sum::<f64>() / pixels;
            loss += mean_pow.powf(1.0 / p);
            if mean_pow > 0.0 {
                let outer = mean_pow.powf(1.0 / p - 1.0) / pixels / n as f64;
                g.zip_mut_with(&d, |g, &v| *g = outer * v.abs().powf(p - 1.0) * v.signum());
            }
        }
    }
    Ok((loss / n as f64, grad))
}

/// Mean binary cross-entropy of `sigmoid(logits)` against a constant label,
/// computed stably from logits. Returns the loss and d(loss)/d(logits).
pub fn bce_with_logits(logits: &Tensor, target: f64) -> (f64, Tensor) {
    let n = logits.len().max(1) as f64;
    let loss = logits
        .iter()
        .map(|&z| z.max(0.0) - z * target + (-z.abs()).exp().ln_1p())
        .sum::<f64>()
        / n;
    let grad = logits.mapv(|z| (sigmoid(z) - target) / n);
    (loss, grad)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    #[test]
    fn l1_reduction_is_a_plain_mean() {
        let pred = ArrayD::zeros(vec![2, 1, 16, 16]);
        let target = ArrayD::from_elem(vec![2, 1, 16, 16], 0.5);
        let (loss, _) = lp_loss(&pred, &target, 1.0).unwrap();
        assert_eq!(loss, 0.5);
        assert_eq!(lp_loss(&target, &target, 1.0).unwrap().0, 0.0);
        assert!(lp_loss(&pred, &ArrayD::zeros(vec![2, 1, 8, 8]), 1.0).is_err());
    }

    #[test]
    fn lp_is_symmetric_and_gradient_matches_differences() {
        let a = ArrayD::from_shape_fn(vec![3, 1, 4, 4], |i| (i[0] * 7 + i[2] * 3 + i[3]) as f64 * 0.1);
        let b = ArrayD::from_shape_fn(vec![3, 1, 4, 4], |i| ((i[0] + i[2] * i[3]) % 5) as f64 * 0.2);
        for p in [1.0, 2.0, 3.0] {
            let (l1, g) = lp_loss(&a, &b, p).unwrap();
            let (l2, _) = lp_loss(&b, &a, p).unwrap();
            assert!((l1 - l2).abs() < 1e-15);
            let eps = 1e-7;
            for k in [0usize, 5, 17, 40] {
                let mut up = a.clone();
                up.as_slice_mut().unwrap()[k] += eps;
                let mut down = a.clone();
                down.as_slice_mut().unwrap()[k] -= eps;
                let num = (lp_loss(&up, &b, p).unwrap().0 - lp_loss(&down, &b, p).unwrap().0) / (2.0 * eps);
                assert!((num - g.as_slice().unwrap()[k]).abs() < 1e-6, "p={p} k={k}");
            }
        }
    }

    #[test]
    fn bce_reference_values() {
        let half = ArrayD::zeros(vec![4, 1]);
        assert!((bce_with_logits(&half, 1.0).0 - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_with_logits(&half, 0.0).0 - std::f64::consts::LN_2).abs() < 1e-15);
        let confident = ArrayD::from_elem(vec![2, 1], 40.0);
        assert!(bce_with_logits(&confident, 1.0).0 < 1e-15);
        let extreme = ArrayD::from_elem(vec![1, 1], -1e300);
        assert!(bce_with_logits(&extreme, 1.0).0.is_finite());
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) >= 0.0);
    }
}
