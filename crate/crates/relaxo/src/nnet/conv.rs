//! 3x3 same-padding convolution and the conv-relu-conv-relu-conv block.

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;

use crate::seed::Seed;
use crate::{Error, Result};

use super::{relu, relu_backward, RealTensor};

/// One 3x3 convolution layer, zero-padded, stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `(out_ch, in_ch, 3, 3)`
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
}

impl ConvLayer {
    pub fn zeros(out_ch: usize, in_ch: usize) -> Self {
        ConvLayer {
            weights: Array4::zeros((out_ch, in_ch, 3, 3)),
            bias: Array1::zeros(out_ch),
        }
    }

    /// He-style fan-in Gaussian initialization.
    pub fn he_init(out_ch: usize, in_ch: usize, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let std = (2.0 / (in_ch as f64 * 9.0)).sqrt();
        let mut gauss = move || -> f64 {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen::<f64>();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        ConvLayer {
            weights: Array4::from_shape_fn((out_ch, in_ch, 3, 3), |_| std * gauss()),
            bias: Array1::zeros(out_ch),
        }
    }

    pub fn out_ch(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_ch(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn forward(&self, x: &RealTensor) -> Result<RealTensor> {
        if x.shape()[0] != self.in_ch() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_ch(),
                x.shape()[0]
            )));
        }
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let cols = im2col(x);
        let wmat = self
            .weights
            .view()
            .into_shape_with_order((self.out_ch(), self.in_ch() * 9))
            .expect("weights are contiguous");
        let mut out_mat = wmat.dot(&cols);
        for (oc, mut row) in out_mat.axis_iter_mut(Axis(0)).enumerate() {
            row += self.bias[oc];
        }
        Ok(out_mat
            .into_shape_with_order((self.out_ch(), h, w))
            .expect("shape product unchanged"))
    }

    /// Reverse-mode gradients given the cached input and the upstream
    /// gradient. Returns `(grad_input, grad_weights, grad_bias)`.
    pub fn backward(
        &self,
        x: &RealTensor,
        grad_out: &RealTensor,
    ) -> Result<(RealTensor, Array4<f64>, Array1<f64>)> {
        if grad_out.shape() != [self.out_ch(), x.shape()[1], x.shape()[2]] {
            return Err(Error::shape("upstream gradient shape mismatch"));
        }
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let cols = im2col(x);
        let gmat = grad_out
            .view()
            .into_shape_with_order((self.out_ch(), h * w))
            .expect("grad_out is contiguous");
        let grad_b = gmat.sum_axis(Axis(1));
        let grad_w = gmat
            .dot(&cols.t())
            .into_shape_with_order(self.weights.raw_dim())
            .expect("shape product unchanged");
        let wmat = self
            .weights
            .view()
            .into_shape_with_order((self.out_ch(), self.in_ch() * 9))
            .expect("weights are contiguous");
        let gcols = wmat.t().dot(&gmat);
        let grad_in = col2im(&gcols, self.in_ch(), h, w);
        Ok((grad_in, grad_w, grad_b))
    }
}

/// Unfold 3x3 zero-padded patches: row `ic*9 + ky*3 + kx` of the result holds
/// the input channel `ic` shifted by `(ky-1, kx-1)`, flattened over pixels.
fn im2col(x: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut cols = Array2::<f64>::zeros((c * 9, h * w));
    for ic in 0..c {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let i0 = (-dy).max(0);
                let i1 = (h as isize - dy).min(h as isize);
                let j0 = (-dx).max(0) as usize;
                let j1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if i0 >= i1 || j0 >= j1 {
                    continue;
                }
                let mut row = cols.row_mut(ic * 9 + ky * 3 + kx);
                let dst = row.as_slice_mut().expect("contiguous row");
                for i in i0..i1 {
                    let src = x.slice(ndarray::s![
                        ic,
                        (i + dy) as usize,
                        (j0 as isize + dx) as usize..(j1 as isize + dx) as usize
                    ]);
                    let base = i as usize * w;
                    dst[base + j0..base + j1]
                        .copy_from_slice(src.as_slice().expect("contiguous row"));
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col`: scatter-add patch rows back into an image.
fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize) -> Array3<f64> {
    let mut out = Array3::<f64>::zeros((c, h, w));
    for ic in 0..c {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let i0 = (-dy).max(0);
                let i1 = (h as isize - dy).min(h as isize);
                let j0 = (-dx).max(0) as usize;
                let j1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if i0 >= i1 || j0 >= j1 {
                    continue;
                }
                let row = cols.row(ic * 9 + ky * 3 + kx);
                let src = row.as_slice().expect("contiguous row");
                for i in i0..i1 {
                    let mut dst = out.slice_mut(ndarray::s![
                        ic,
                        (i + dy) as usize,
                        (j0 as isize + dx) as usize..(j1 as isize + dx) as usize
                    ]);
                    let base = i as usize * w;
                    for (d, s) in dst
                        .as_slice_mut()
                        .expect("contiguous row")
                        .iter_mut()
                        .zip(&src[base + j0..base + j1])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

/// conv-relu-conv-relu-conv with fixed 3x3 kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub layers: [ConvLayer; 3],
}

/// Forward activations cached for the backward pass.
pub struct ConvBlockCache {
    input: RealTensor,
    pre1: RealTensor,
    act1: RealTensor,
    pre2: RealTensor,
    act2: RealTensor,
}

/// Gradients for one block, same layout as the parameters.
#[derive(Debug, Clone)]
pub struct ConvBlockGrads {
    pub weights: [Array4<f64>; 3],
    pub bias: [Array1<f64>; 3],
}

impl ConvBlock {
    pub fn he_init(in_ch: usize, mid_ch: usize, out_ch: usize, seed: Seed) -> Self {
        ConvBlock {
            layers: [
                ConvLayer::he_init(mid_ch, in_ch, seed.derive(0)),
                ConvLayer::he_init(mid_ch, mid_ch, seed.derive(1)),
                ConvLayer::he_init(out_ch, mid_ch, seed.derive(2)),
            ],
        }
    }

    pub fn forward(&self, x: &RealTensor) -> Result<(RealTensor, ConvBlockCache)> {
        let pre1 = self.layers[0].forward(x)?;
        let act1 = relu(&pre1);
        let pre2 = self.layers[1].forward(&act1)?;
        let act2 = relu(&pre2);
        let out = self.layers[2].forward(&act2)?;
        Ok((
            out,
            ConvBlockCache {
                input: x.clone(),
                pre1,
                act1,
                pre2,
                act2,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &ConvBlockCache,
        grad_out: &RealTensor,
    ) -> Result<(RealTensor, ConvBlockGrads)> {
        let (g_act2, gw3, gb3) = self.layers[2].backward(&cache.act2, grad_out)?;
        let g_pre2 = relu_backward(&cache.pre2, &g_act2);
        let (g_act1, gw2, gb2) = self.layers[1].backward(&cache.act1, &g_pre2)?;
        let g_pre1 = relu_backward(&cache.pre1, &g_act1);
        let (g_in, gw1, gb1) = self.layers[0].backward(&cache.input, &g_pre1)?;
        Ok((
            g_in,
            ConvBlockGrads {
                weights: [gw1, gw2, gw3],
                bias: [gb1, gb2, gb3],
            },
        ))
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
    }

    pub fn load_params(&mut self, data: &[f64], at: &mut usize) {
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = data[*at];
                *at += 1;
            }
            for b in l.bias.iter_mut() {
                *b = data[*at];
                *at += 1;
            }
        }
    }
}

impl ConvBlockGrads {
    pub fn append_flat(&self, out: &mut Vec<f64>) {
        for k in 0..3 {
            out.extend(self.weights[k].iter());
            out.extend(self.bias[k].iter());
        }
    }

    pub fn zeros_like(block: &ConvBlock) -> Self {
        ConvBlockGrads {
            weights: [
                Array4::zeros(block.layers[0].weights.raw_dim()),
                Array4::zeros(block.layers[1].weights.raw_dim()),
                Array4::zeros(block.layers[2].weights.raw_dim()),
            ],
            bias: [
                Array1::zeros(block.layers[0].bias.raw_dim()),
                Array1::zeros(block.layers[1].bias.raw_dim()),
                Array1::zeros(block.layers[2].bias.raw_dim()),
            ],
        }
    }

    pub fn add(&mut self, other: &ConvBlockGrads) {
        for k in 0..3 {
            self.weights[k] += &other.weights[k];
            self.bias[k] += &other.bias[k];
        }
    }

    pub fn scale(&mut self, f: f64) {
        for k in 0..3 {
            self.weights[k] *= f;
            self.bias[k] *= f;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> RealTensor {
        let mut rng = Seed::new(seed).rng();
        Array3::from_shape_fn((c, h, w), |_| rng.gen::<f64>() - 0.5)
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut layer = ConvLayer::zeros(1, 1);
        layer.weights[[0, 0, 1, 1]] = 1.0;
        let x = random_tensor(1, 5, 7, 1);
        let y = layer.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_constant_bias() {
        let mut layer = ConvLayer::zeros(2, 3);
        layer.bias[0] = 1.5;
        layer.bias[1] = -0.25;
        let x = random_tensor(3, 4, 4, 2);
        let y = layer.forward(&x).unwrap();
        assert!(y.slice(ndarray::s![0, .., ..]).iter().all(|&v| v == 1.5));
        assert!(y.slice(ndarray::s![1, .., ..]).iter().all(|&v| v == -0.25));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let layer = ConvLayer::zeros(1, 2);
        let x = random_tensor(3, 4, 4, 3);
        assert!(layer.forward(&x).is_err());
    }

    /// Direct nested-loop convolution oracle.
    fn conv_naive(layer: &ConvLayer, x: &RealTensor) -> RealTensor {
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let mut out = Array3::<f64>::zeros((layer.out_ch(), h, w));
        for oc in 0..layer.out_ch() {
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let mut acc = layer.bias[oc];
                    for ic in 0..layer.in_ch() {
                        for ky in -1isize..=1 {
                            for kx in -1isize..=1 {
                                let ii = i + ky;
                                let jj = j + kx;
                                if ii >= 0 && ii < h as isize && jj >= 0 && jj < w as isize {
                                    acc += layer.weights
                                        [[oc, ic, (ky + 1) as usize, (kx + 1) as usize]]
                                        * x[[ic, ii as usize, jj as usize]];
                                }
                            }
                        }
                    }
                    out[[oc, i as usize, j as usize]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let layer = ConvLayer::he_init(3, 2, Seed::new(4));
        let x = random_tensor(2, 4, 4, 5);
        let fast = layer.forward(&x).unwrap();
        let slow = conv_naive(&layer, &x);
        let err = (&fast - &slow).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "max error {err}");
    }

    #[test]
    fn conv_is_linear_in_input() {
        let mut layer = ConvLayer::he_init(2, 2, Seed::new(6));
        layer.bias.fill(0.0);
        let x = random_tensor(2, 6, 6, 7);
        let z = random_tensor(2, 6, 6, 8);
        let sum = layer.forward(&(&x + &z)).unwrap();
        let separate = layer.forward(&x).unwrap() + layer.forward(&z).unwrap();
        let err = (&sum - &separate).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        // two chained blocks on an 8x8 input, central differences h=1e-5
        let b1 = ConvBlock::he_init(1, 4, 4, Seed::new(10));
        let b2 = ConvBlock::he_init(4, 4, 1, Seed::new(11));
        let x = random_tensor(1, 8, 8, 12);
        let target = random_tensor(1, 8, 8, 13);

        let loss_of = |b1: &ConvBlock, b2: &ConvBlock| -> f64 {
            let (o1, _) = b1.forward(&x).unwrap();
            let (o2, _) = b2.forward(&o1).unwrap();
            0.5 * (&o2 - &target).iter().map(|v| v * v).sum::<f64>()
        };

        let (o1, c1) = b1.forward(&x).unwrap();
        let (o2, c2) = b2.forward(&o1).unwrap();
        let g_out = &o2 - &target;
        let (g_mid, grads2) = b2.backward(&c2, &g_out).unwrap();
        let (_, grads1) = b1.backward(&c1, &g_mid).unwrap();

        let mut analytic = Vec::new();
        grads1.append_flat(&mut analytic);
        grads2.append_flat(&mut analytic);

        let h = 1e-5;
        let mut blocks = [b1, b2];
        let mut k = 0;
        for bi in 0..2 {
            for li in 0..3 {
                let n_w = blocks[bi].layers[li].weights.len();
                for wi in 0..n_w + blocks[bi].layers[li].bias.len() {
                    let read = |bl: &[ConvBlock; 2]| -> f64 {
                        if wi < n_w {
                            *bl[bi].layers[li].weights.as_slice().unwrap().get(wi).unwrap()
                        } else {
                            bl[bi].layers[li].bias[wi - n_w]
                        }
                    };
                    let write = |bl: &mut [ConvBlock; 2], v: f64| {
                        if wi < n_w {
                            bl[bi].layers[li].weights.as_slice_mut().unwrap()[wi] = v;
                        } else {
                            bl[bi].layers[li].bias[wi - n_w] = v;
                        }
                    };
                    let orig = read(&blocks);
                    write(&mut blocks, orig + h);
                    let lp = loss_of(&blocks[0], &blocks[1]);
                    write(&mut blocks, orig - h);
                    let lm = loss_of(&blocks[0], &blocks[1]);
                    write(&mut blocks, orig);
                    let fd = (lp - lm) / (2.0 * h);
                    let a = analytic[k];
                    let denom = fd.abs().max(a.abs()).max(1e-6);
                    assert!(
                        ((a - fd) / denom).abs() < 1e-4,
                        "param {k}: analytic {a}, fd {fd}"
                    );
                    k += 1;
                }
            }
        }
        assert_eq!(k, analytic.len());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let b = ConvBlock::he_init(2, 3, 2, Seed::new(14));
        let x = random_tensor(2, 6, 6, 15);
        let (_, cache) = b.forward(&x).unwrap();
        let g = Array3::zeros((2, 6, 6));
        let (gi, grads) = b.backward(&cache, &g).unwrap();
        assert!(gi.iter().all(|&v| v == 0.0));
        for k in 0..3 {
            assert!(grads.weights[k].iter().all(|&v| v == 0.0));
            assert!(grads.bias[k].iter().all(|&v| v == 0.0));
        }
    }
}
