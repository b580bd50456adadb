//! ADMM scaffold with learnable convolutional operator corrections.
//!
//! Each iteration block carries three small conv pairs (for the data
//! residual, the M-update output, and the Z-update output) acting on the
//! stacked real/imaginary channels, plus a per-iteration dual step size.
//! With identity initialization every correction is an exact pass-through,
//! so the scaffold reproduces the classical reconstruction; training refines
//! the corrections greedily, block by block, and keeps a correction only if
//! it lowers the training error of its block.

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;

use crate::acquisition::{adjoint, forward, CoilProfile, KSpaceData, MeasurementOperator};
use crate::fft::norm3;
use crate::nnet::{relu, relu_backward, AdamState, ConvLayer, RealTensor};
use crate::recon::admm::{zero_filled, ReconConfig};
use crate::seed::Seed;
use crate::types::ContrastImageSet;
use crate::wavelet::shrink;
use crate::{Error, Result};

/// conv(2 -> w) + ReLU + conv(w -> 2) on stacked (re, im) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvPair {
    pub l1: ConvLayer,
    pub l2: ConvLayer,
}

impl ConvPair {
    /// Exact identity: the first layer emits (+re, +im, -re, -im), ReLU
    /// splits signs, the second layer recombines.
    pub fn identity(width: usize) -> Self {
        assert!(width >= 4, "identity embedding needs width >= 4");
        let mut l1 = ConvLayer::zeros(width, 2);
        l1.weights[[0, 0, 1, 1]] = 1.0;
        l1.weights[[1, 1, 1, 1]] = 1.0;
        l1.weights[[2, 0, 1, 1]] = -1.0;
        l1.weights[[3, 1, 1, 1]] = -1.0;
        let mut l2 = ConvLayer::zeros(2, width);
        l2.weights[[0, 0, 1, 1]] = 1.0;
        l2.weights[[0, 2, 1, 1]] = -1.0;
        l2.weights[[1, 1, 1, 1]] = 1.0;
        l2.weights[[1, 3, 1, 1]] = -1.0;
        ConvPair { l1, l2 }
    }

    pub fn width(&self) -> usize {
        self.l1.out_ch()
    }

    pub fn apply(&self, img: &Array2<Complex64>) -> Result<Array2<Complex64>> {
        let x = complex_to_channels(img);
        let pre = self.l1.forward(&x)?;
        let out = self.l2.forward(&relu(&pre))?;
        Ok(channels_to_complex(&out))
    }

    fn forward_cached(&self, x: &RealTensor) -> Result<(RealTensor, RealTensor, RealTensor)> {
        let pre = self.l1.forward(x)?;
        let act = relu(&pre);
        let out = self.l2.forward(&act)?;
        Ok((out, pre, act))
    }

    fn n_params(&self) -> usize {
        self.l1.weights.len() + self.l1.bias.len() + self.l2.weights.len() + self.l2.bias.len()
    }

    fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend(self.l1.weights.iter());
        v.extend(self.l1.bias.iter());
        v.extend(self.l2.weights.iter());
        v.extend(self.l2.bias.iter());
        v
    }

    fn load_flat(&mut self, data: &[f64]) {
        let mut at = 0;
        for w in self.l1.weights.iter_mut() {
            *w = data[at];
            at += 1;
        }
        for b in self.l1.bias.iter_mut() {
            *b = data[at];
            at += 1;
        }
        for w in self.l2.weights.iter_mut() {
            *w = data[at];
            at += 1;
        }
        for b in self.l2.bias.iter_mut() {
            *b = data[at];
            at += 1;
        }
    }
}

pub fn complex_to_channels(img: &Array2<Complex64>) -> RealTensor {
    let (ny, nx) = img.dim();
    let mut out = Array3::<f64>::zeros((2, ny, nx));
    for ((i, j), v) in img.indexed_iter() {
        out[[0, i, j]] = v.re;
        out[[1, i, j]] = v.im;
    }
    out
}

pub fn channels_to_complex(t: &RealTensor) -> Array2<Complex64> {
    let (ny, nx) = (t.shape()[1], t.shape()[2]);
    Array2::from_shape_fn((ny, nx), |(i, j)| Complex64::new(t[[0, i, j]], t[[1, i, j]]))
}

/// One unrolled iteration block.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationOperators {
    pub gamma: ConvPair,
    pub pi: ConvPair,
    pub lambda: ConvPair,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedAdmmModel {
    pub iters: Vec<IterationOperators>,
    pub width: usize,
    pub trained: bool,
}

impl LearnedAdmmModel {
    pub fn identity(n_iters: usize, width: usize, eta: f64) -> Self {
        LearnedAdmmModel {
            iters: (0..n_iters)
                .map(|_| IterationOperators {
                    gamma: ConvPair::identity(width),
                    pi: ConvPair::identity(width),
                    lambda: ConvPair::identity(width),
                    eta,
                })
                .collect(),
            width,
            trained: false,
        }
    }
}

fn apply_pair_stack(pair: &ConvPair, stack: &Array3<Complex64>) -> Result<Array3<Complex64>> {
    let mut out = stack.clone();
    for t in 0..stack.shape()[0] {
        let img = stack.index_axis(Axis(0), t).to_owned();
        out.index_axis_mut(Axis(0), t).assign(&pair.apply(&img)?);
    }
    Ok(out)
}

struct Scaffold<'a> {
    op: MeasurementOperator,
    y: &'a KSpaceData,
    cfg: ReconConfig,
    template_tsl: Vec<f64>,
}

impl<'a> Scaffold<'a> {
    fn new(y: &'a KSpaceData, coils: &CoilProfile, cfg: &ReconConfig) -> Result<Self> {
        Ok(Scaffold {
            op: MeasurementOperator::new(coils.clone(), y.mask.clone())?,
            y,
            cfg: cfg.clone(),
            template_tsl: crate::acquisition::default_tsl(y.n_tsl()),
        })
    }

    fn set(&self, images: Array3<Complex64>) -> ContrastImageSet {
        ContrastImageSet {
            images,
            tsl_ms: self.template_tsl.clone(),
        }
    }

    fn normal_op(&self, x: &Array3<Complex64>, eta: f64) -> Result<Array3<Complex64>> {
        let ax = forward(&self.op, &self.set(x.clone()))?;
        let atax = adjoint(&self.op, &ax)?;
        Ok(&atax.images + &x.mapv(|v| v * eta))
    }

    fn cg(&self, b: &Array3<Complex64>, x0: &Array3<Complex64>, eta: f64) -> Result<Array3<Complex64>> {
        let mut x = x0.clone();
        let mut r = b - &self.normal_op(&x, eta)?;
        let mut p = r.clone();
        let b_norm = norm3(b).max(1e-300);
        let mut rs_old: f64 = r.iter().map(|v| v.norm_sqr()).sum();
        for it in 0..self.cfg.cg_iters {
            if !rs_old.is_finite() {
                return Err(Error::CgDiverged(it));
            }
            if rs_old.sqrt() / b_norm < self.cfg.cg_tol {
                break;
            }
            let ap = self.normal_op(&p, eta)?;
            let denom: f64 = p.iter().zip(ap.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            let alpha = rs_old / denom;
            x = &x + &p.mapv(|v| v * alpha);
            r = &r - &ap.mapv(|v| v * alpha);
            let rs_new: f64 = r.iter().map(|v| v.norm_sqr()).sum();
            p = &r + &p.mapv(|v| v * (rs_new / rs_old));
            rs_old = rs_new;
        }
        Ok(x)
    }

    /// Classical M-step target image, with the Gamma correction applied to
    /// the data-residual adjoint. Identity Gamma makes b the classical
    /// right-hand side.
    fn m_step(
        &self,
        ops: &IterationOperators,
        m_prev: &Array3<Complex64>,
        z: &Array3<Complex64>,
        beta: &Array3<Complex64>,
    ) -> Result<Array3<Complex64>> {
        let am = forward(&self.op, &self.set(m_prev.clone()))?;
        let resid = KSpaceData {
            y: &am.y - &self.y.y,
            mask: self.y.mask.clone(),
            noise_std: 0.0,
        };
        let at_resid = adjoint(&self.op, &resid)?.images;
        let at_resid = apply_pair_stack(&ops.gamma, &at_resid)?;
        let atam = {
            let atm = adjoint(&self.op, &am)?;
            atm.images
        };
        let aty = &atam - &at_resid; // == A^T y when gamma is identity
        let target = z - beta;
        let b = &aty + &target.mapv(|v| v * ops.eta);
        self.cg(&b, m_prev, ops.eta)
    }

    fn z_step(&self, m: &Array3<Complex64>, beta: &Array3<Complex64>) -> Result<Array3<Complex64>> {
        let v = m + beta;
        let mut z = v.clone();
        for t in 0..v.shape()[0] {
            let img = v.index_axis(Axis(0), t).to_owned();
            let zt = shrink(self.cfg.transform, &img, self.cfg.reg_weight / self.cfg.eta)?;
            z.index_axis_mut(Axis(0), t).assign(&zt);
        }
        Ok(z)
    }
}

/// Reconstruction with the learned operator corrections.
pub fn learned_admm_reconstruct(
    y: &KSpaceData,
    coils: &CoilProfile,
    model: &LearnedAdmmModel,
    cfg: &ReconConfig,
) -> Result<ContrastImageSet> {
    cfg.validate()?;
    if model.iters.is_empty() {
        return Err(Error::Untrained("model has no iteration blocks".into()));
    }
    let sc = Scaffold::new(y, coils, cfg)?;
    let zf = zero_filled(y, coils)?;
    let mut m = zf.images.clone();
    let mut z = zf.images.clone();
    let mut beta = Array3::<Complex64>::zeros(m.raw_dim());
    for ops in &model.iters {
        let m_tilde = sc.m_step(ops, &m, &z, &beta)?;
        m = apply_pair_stack(&ops.pi, &m_tilde)?;
        let z_tilde = sc.z_step(&m, &beta)?;
        z = apply_pair_stack(&ops.lambda, &z_tilde)?;
        beta = &beta + &(&m - &z).mapv(|v| v * ops.eta);
    }
    Ok(ContrastImageSet {
        images: m,
        tsl_ms: zf.tsl_ms,
    })
}

/// One training sample: undersampled data plus the fully sampled reference.
pub struct LearnedTrainSample {
    pub y: KSpaceData,
    pub reference: Array3<Complex64>,
}

/// Greedy block-wise training of the Pi and Lambda corrections.
///
/// Samples are unrolled incrementally; at block `n` each correction is fit
/// (Adam, l2 target = reference image) on that block's classical outputs and
/// kept only if it reduces the block's mean error, otherwise reset to
/// identity. Gamma stays identity (it has no direct supervised target).
pub fn train_learned_admm(
    samples: &[LearnedTrainSample],
    coils: &CoilProfile,
    cfg: &ReconConfig,
    width: usize,
    epochs: usize,
    lr: f64,
    seed: Seed,
) -> Result<LearnedAdmmModel> {
    if samples.is_empty() {
        return Err(Error::invalid("need at least one training sample"));
    }
    let mut model = LearnedAdmmModel::identity(cfg.n_iters, width, cfg.eta);

    // per-sample running state
    let mut states: Vec<(Array3<Complex64>, Array3<Complex64>, Array3<Complex64>)> = samples
        .iter()
        .map(|s| {
            let zf = zero_filled(&s.y, coils)?;
            Ok((
                zf.images.clone(),
                zf.images.clone(),
                Array3::zeros(zf.images.raw_dim()),
            ))
        })
        .collect::<Result<_>>()?;

    for n in 0..cfg.n_iters {
        // classical M outputs for this block
        let mut m_tildes = Vec::with_capacity(samples.len());
        for (s, (m, z, beta)) in samples.iter().zip(states.iter()) {
            let sc = Scaffold::new(&s.y, coils, cfg)?;
            m_tildes.push(sc.m_step(&model.iters[n], m, z, beta)?);
        }
        let pi = fit_pair(
            &m_tildes,
            samples,
            width,
            epochs,
            lr,
            seed.derive(2 * n as u64),
        )?;
        model.iters[n].pi = pi;
        for ((s, (m, _z, beta)), m_tilde) in
            samples.iter().zip(states.iter_mut()).zip(m_tildes.iter())
        {
            let _ = s;
            let _ = beta;
            *m = apply_pair_stack(&model.iters[n].pi, m_tilde)?;
        }

        // classical Z outputs
        let mut z_tildes = Vec::with_capacity(samples.len());
        for (s, (m, _z, beta)) in samples.iter().zip(states.iter()) {
            let sc = Scaffold::new(&s.y, coils, cfg)?;
            z_tildes.push(sc.z_step(m, beta)?);
        }
        let lambda = fit_pair(
            &z_tildes,
            samples,
            width,
            epochs,
            lr,
            seed.derive(2 * n as u64 + 1),
        )?;
        model.iters[n].lambda = lambda;
        for ((m, z, beta), z_tilde) in states.iter_mut().zip(z_tildes.iter()) {
            *z = apply_pair_stack(&model.iters[n].lambda, z_tilde)?;
            *beta = &*beta + &(&*m - &*z).mapv(|v| v * model.iters[n].eta);
        }
    }
    model.trained = true;
    Ok(model)
}

/// Fit one conv pair on (input stack, reference stack) pairs; returns the
/// trained pair if it beats identity on the training inputs, else identity.
fn fit_pair(
    inputs: &[Array3<Complex64>],
    samples: &[LearnedTrainSample],
    width: usize,
    epochs: usize,
    lr: f64,
    _seed: Seed,
) -> Result<ConvPair> {
    let mut pair = ConvPair::identity(width);
    let mut adam = AdamState::new(pair.n_params(), lr);
    let mut params = pair.params_flat();

    let mean_loss = |pair: &ConvPair| -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (inp, s) in inputs.iter().zip(samples.iter()) {
            for t in 0..inp.shape()[0] {
                let out = pair.apply(&inp.index_axis(Axis(0), t).to_owned())?;
                let r = s.reference.index_axis(Axis(0), t);
                total += out
                    .indexed_iter()
                    .map(|((i, j), v)| (v - r[[i, j]]).norm_sqr())
                    .sum::<f64>();
                count += 1;
            }
        }
        Ok(total / count as f64)
    };
    let identity_loss = mean_loss(&pair)?;

    for _ in 0..epochs {
        for (inp, s) in inputs.iter().zip(samples.iter()) {
            let mut grad = vec![0.0; params.len()];
            for t in 0..inp.shape()[0] {
                let x = complex_to_channels(&inp.index_axis(Axis(0), t).to_owned());
                let target = complex_to_channels(&s.reference.index_axis(Axis(0), t).to_owned());
                let (out, pre, act) = pair.forward_cached(&x)?;
                let g_out = &out - &target; // d/d out of 0.5 |out - target|^2
                let (g_act, gw2, gb2) = pair.l2.backward(&act, &g_out)?;
                let g_pre = relu_backward(&pre, &g_act);
                let (_, gw1, gb1) = pair.l1.backward(&x, &g_pre)?;
                let mut flat = Vec::with_capacity(params.len());
                flat.extend(gw1.iter());
                flat.extend(gb1.iter());
                flat.extend(gw2.iter());
                flat.extend(gb2.iter());
                for (g, f) in grad.iter_mut().zip(flat.iter()) {
                    *g += f;
                }
            }
            let scale = 1.0 / inp.shape()[0] as f64;
            for g in grad.iter_mut() {
                *g *= scale;
            }
            adam.step(&mut params, &grad)?;
            pair.load_flat(&params);
        }
    }

    if mean_loss(&pair)? < identity_loss {
        Ok(pair)
    } else {
        Ok(ConvPair::identity(width))
    }
}
