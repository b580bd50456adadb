//! Training losses: normalized RMSE over a whole stack and the mean
//! per-channel (unsquared) l2 distance.

use ndarray::Array3;

use crate::{Error, Result};

use super::RealTensor;

const EPS: f64 = 1e-12;

/// sqrt(|pred - target|^2) / sqrt(|target|^2) over all entries.
pub fn nrmse_loss(pred: &RealTensor, target: &RealTensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("loss shapes differ"));
    }
    let t_norm: f64 = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    if t_norm == 0.0 {
        return Err(Error::invalid("nRMSE needs a nonzero target"));
    }
    let diff: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        .sqrt();
    Ok(diff / t_norm)
}

pub fn nrmse_loss_grad(pred: &RealTensor, target: &RealTensor) -> Result<RealTensor> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("loss shapes differ"));
    }
    let t_norm: f64 = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    if t_norm == 0.0 {
        return Err(Error::invalid("nRMSE needs a nonzero target"));
    }
    let diff = pred - target;
    let d_norm: f64 = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = 1.0 / (t_norm * d_norm.max(EPS));
    Ok(diff.mapv(|v| v * scale))
}

/// Mean over channels of the unsquared per-channel l2 norm of the residual.
pub fn l2_loss(pred: &RealTensor, target: &RealTensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("loss shapes differ"));
    }
    let j = pred.shape()[0] as f64;
    let mut total = 0.0;
    for c in 0..pred.shape()[0] {
        let norm: f64 = pred
            .slice(ndarray::s![c, .., ..])
            .iter()
            .zip(target.slice(ndarray::s![c, .., ..]).iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            .sqrt();
        total += norm;
    }
    Ok(total / j)
}

pub fn l2_loss_grad(pred: &RealTensor, target: &RealTensor) -> Result<RealTensor> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("loss shapes differ"));
    }
    let j = pred.shape()[0] as f64;
    let mut grad = Array3::<f64>::zeros(pred.raw_dim());
    for c in 0..pred.shape()[0] {
        let diff: Vec<f64> = pred
            .slice(ndarray::s![c, .., ..])
            .iter()
            .zip(target.slice(ndarray::s![c, .., ..]).iter())
            .map(|(p, t)| p - t)
            .collect();
        let norm: f64 = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = 1.0 / (j * norm.max(EPS));
        let mut g = grad.slice_mut(ndarray::s![c, .., ..]);
        for (gv, dv) in g.iter_mut().zip(diff.iter()) {
            *gv = dv * scale;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn identical_inputs_give_zero() {
        let x = Array3::from_shape_fn((2, 3, 3), |(c, i, j)| (c + i + j) as f64 + 1.0);
        assert_eq!(nrmse_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(l2_loss(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn zero_prediction_gives_one() {
        let t = Array3::from_elem((1, 2, 2), 3.0);
        let p = Array3::zeros((1, 2, 2));
        assert!((nrmse_loss(&p, &t).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_element_example() {
        // pred=[1,2], target=[2,2] -> 1/sqrt(8)
        let p = Array3::from_shape_vec((1, 1, 2), vec![1.0, 2.0]).unwrap();
        let t = Array3::from_shape_vec((1, 1, 2), vec![2.0, 2.0]).unwrap();
        assert!((nrmse_loss(&p, &t).unwrap() - 0.35355339059327373).abs() < 1e-14);
    }

    #[test]
    fn zero_target_rejected_for_nrmse() {
        let z = Array3::zeros((1, 2, 2));
        assert!(nrmse_loss(&z, &z).is_err());
    }

    #[test]
    fn grads_match_finite_differences() {
        let mut p = Array3::from_shape_fn((2, 3, 3), |(c, i, j)| (c as f64) * 0.3 + (i * j) as f64 * 0.1 + 0.05);
        let t = Array3::from_shape_fn((2, 3, 3), |(c, i, j)| ((c + 1) * (i + 1)) as f64 * 0.1 - j as f64 * 0.02);
        type LossFn = fn(&RealTensor, &RealTensor) -> Result<f64>;
        type GradFn = fn(&RealTensor, &RealTensor) -> Result<RealTensor>;
        let cases: [(LossFn, GradFn); 2] =
            [(nrmse_loss, nrmse_loss_grad), (l2_loss, l2_loss_grad)];
        for (loss, grad) in cases {
            let g = grad(&p, &t).unwrap();
            let h = 1e-6;
            for idx in 0..p.len() {
                let orig = p.as_slice().unwrap()[idx];
                p.as_slice_mut().unwrap()[idx] = orig + h;
                let lp = loss(&p, &t).unwrap();
                p.as_slice_mut().unwrap()[idx] = orig - h;
                let lm = loss(&p, &t).unwrap();
                p.as_slice_mut().unwrap()[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let a = g.as_slice().unwrap()[idx];
                assert!((a - fd).abs() < 1e-6, "idx {idx}: analytic {a}, fd {fd}");
            }
        }
    }
}
