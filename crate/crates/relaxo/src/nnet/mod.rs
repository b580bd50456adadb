//! Minimal differentiable-network substrate: 3x3 convolutions, ReLU,
//! channel concatenation, losses, and Adam. Fixed architectures with
//! hand-written reverse-mode gradients; no general autograd graph.

mod adam;
mod conv;
mod loss;

pub use adam::AdamState;
pub use conv::{ConvBlock, ConvBlockCache, ConvBlockGrads, ConvLayer};
pub use loss::{l2_loss, l2_loss_grad, nrmse_loss, nrmse_loss_grad};

use ndarray::Array3;

/// Real feature map, `(channels, H, W)`.
pub type RealTensor = Array3<f64>;

pub fn relu(x: &RealTensor) -> RealTensor {
    x.mapv(|v| v.max(0.0))
}

/// ReLU backward; the subgradient at 0 is 0.
pub fn relu_backward(pre: &RealTensor, grad: &RealTensor) -> RealTensor {
    let mut g = grad.clone();
    g.zip_mut_with(pre, |gv, &pv| {
        if pv <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

/// Channel-wise concatenation.
pub fn concat_channels(parts: &[&RealTensor]) -> RealTensor {
    let (h, w) = (parts[0].shape()[1], parts[0].shape()[2]);
    let total: usize = parts.iter().map(|p| p.shape()[0]).sum();
    let mut out = Array3::<f64>::zeros((total, h, w));
    let mut at = 0;
    for p in parts {
        let c = p.shape()[0];
        out.slice_mut(ndarray::s![at..at + c, .., ..]).assign(p);
        at += c;
    }
    out
}

/// Split a gradient back over the channel counts it was concatenated from.
pub fn split_channels(grad: &RealTensor, counts: &[usize]) -> Vec<RealTensor> {
    let mut out = Vec::with_capacity(counts.len());
    let mut at = 0;
    for &c in counts {
        out.push(grad.slice(ndarray::s![at..at + c, .., ..]).to_owned());
        at += c;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn relu_zeroes_negatives_and_backward_masks() {
        let x = Array3::from_shape_fn((1, 2, 2), |(_, i, j)| (i as f64 - 0.5) * (j as f64 + 1.0));
        let y = relu(&x);
        assert!(y.iter().all(|&v| v >= 0.0));
        let g = Array3::from_elem((1, 2, 2), 1.0);
        let gb = relu_backward(&x, &g);
        for (gv, xv) in gb.iter().zip(x.iter()) {
            assert_eq!(*gv, if *xv > 0.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Array3::from_elem((2, 3, 3), 1.0);
        let b = Array3::from_elem((3, 3, 3), 2.0);
        let cat = concat_channels(&[&a, &b]);
        assert_eq!(cat.shape(), &[5, 3, 3]);
        let parts = split_channels(&cat, &[2, 3]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
