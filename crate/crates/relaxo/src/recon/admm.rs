//! Classical ADMM reconstruction: an N-iteration scaffold with a conjugate
//! gradient M-update, transform-domain shrinkage Z-update, and scaled dual
//! ascent.

use ndarray::{Array3, Array4, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::acquisition::{adjoint, forward, CoilProfile, KSpaceData, MeasurementOperator};
use crate::fft::norm3;
use crate::types::ContrastImageSet;
use crate::wavelet::{shrink, Transform};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconMode {
    Classical,
    Learned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconConfig {
    #[serde(default = "default_n_iters")]
    pub n_iters: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub reg_weight: f64,
    #[serde(default = "default_transform")]
    pub transform: Transform,
    #[serde(default = "default_cg_iters")]
    pub cg_iters: usize,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    #[serde(default = "default_mode")]
    pub mode: ReconMode,
}

fn default_n_iters() -> usize {
    10
}
fn default_eta() -> f64 {
    1.0
}
fn default_transform() -> Transform {
    Transform::HaarWavelet
}
fn default_cg_iters() -> usize {
    10
}
fn default_cg_tol() -> f64 {
    1e-8
}
fn default_mode() -> ReconMode {
    ReconMode::Classical
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            n_iters: default_n_iters(),
            eta: default_eta(),
            reg_weight: 0.0,
            transform: default_transform(),
            cg_iters: default_cg_iters(),
            cg_tol: default_cg_tol(),
            mode: default_mode(),
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iters < 1 {
            return Err(Error::invalid("n_iters must be >= 1"));
        }
        if self.eta <= 0.0 {
            return Err(Error::invalid("eta must be > 0"));
        }
        if self.reg_weight < 0.0 {
            return Err(Error::invalid("reg_weight must be >= 0"));
        }
        if self.cg_tol <= 0.0 {
            return Err(Error::invalid("cg_tol must be > 0"));
        }
        Ok(())
    }
}

/// Iteration state: primal image m, auxiliary z, scaled dual beta, and the
/// data-space residual d of the last D-step.
#[derive(Debug, Clone)]
pub struct ADMMState {
    pub m: Array3<Complex64>,
    pub z: Array3<Complex64>,
    pub beta: Array3<Complex64>,
    pub d: Array4<Complex64>,
}

/// Adjoint of the measurement operator applied to the data; baseline and
/// ADMM initializer.
pub fn zero_filled(y: &KSpaceData, coils: &CoilProfile) -> Result<ContrastImageSet> {
    let op = MeasurementOperator::new(coils.clone(), y.mask.clone())?;
    adjoint(&op, y)
}

fn inner3(a: &Array3<Complex64>, b: &Array3<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn with_images(template: &ContrastImageSet, images: Array3<Complex64>) -> ContrastImageSet {
    ContrastImageSet {
        images,
        tsl_ms: template.tsl_ms.clone(),
    }
}

/// Apply (A^T A + eta I) to an image stack.
fn normal_op(
    op: &MeasurementOperator,
    template: &ContrastImageSet,
    x: &Array3<Complex64>,
    eta: f64,
) -> Result<Array3<Complex64>> {
    let ax = forward(op, &with_images(template, x.clone()))?;
    let atax = adjoint(op, &ax)?;
    Ok(&atax.images + &x.mapv(|v| v * eta))
}

/// CG on the normal equations (A^T A + eta I) m = b, warm-started at `x0`.
fn cg_solve(
    op: &MeasurementOperator,
    template: &ContrastImageSet,
    b: &Array3<Complex64>,
    x0: &Array3<Complex64>,
    eta: f64,
    iters: usize,
    tol: f64,
) -> Result<Array3<Complex64>> {
    let mut x = x0.clone();
    let mut r = b - &normal_op(op, template, &x, eta)?;
    let mut p = r.clone();
    let b_norm = norm3(b).max(1e-300);
    let mut rs_old = inner3(&r, &r).re;
    for it in 0..iters {
        if !rs_old.is_finite() {
            return Err(Error::CgDiverged(it));
        }
        if rs_old.sqrt() / b_norm < tol {
            break;
        }
        let ap = normal_op(op, template, &p, eta)?;
        let alpha = rs_old / inner3(&p, &ap).re;
        x = &x + &p.mapv(|v| v * alpha);
        r = &r - &ap.mapv(|v| v * alpha);
        let rs_new = inner3(&r, &r).re;
        let beta = rs_new / rs_old;
        p = &r + &p.mapv(|v| v * beta);
        rs_old = rs_new;
    }
    Ok(x)
}

/// One full ADMM iteration (classical operator instantiation).
pub fn admm_step(
    state: &ADMMState,
    op: &MeasurementOperator,
    y: &KSpaceData,
    cfg: &ReconConfig,
) -> Result<ADMMState> {
    cfg.validate()?;
    let template = ContrastImageSet::new(
        state.m.clone(),
        crate::acquisition::default_tsl(state.m.shape()[0]),
    )?;

    // D-step: data residual d = A m - y
    let am = forward(op, &template)?;
    let d = &am.y - &y.y;

    // M-step: min_m 1/2 |Am - y|^2 + eta/2 |m - (z - beta)|^2
    let aty = adjoint(op, y)?;
    let target = &state.z - &state.beta;
    let b = &aty.images + &target.mapv(|v| v * cfg.eta);
    let m = cg_solve(op, &template, &b, &state.m, cfg.eta, cfg.cg_iters, cfg.cg_tol)?;

    // Z-step: shrink transform coefficients of m + beta
    let v = &m + &state.beta;
    let mut z = v.clone();
    for t in 0..v.shape()[0] {
        let img = v.index_axis(Axis(0), t).to_owned();
        let zt = shrink(cfg.transform, &img, cfg.reg_weight / cfg.eta)?;
        z.index_axis_mut(Axis(0), t).assign(&zt);
    }

    // dual ascent
    let beta = &state.beta + &(&m - &z).mapv(|v| v * cfg.eta);

    Ok(ADMMState { m, z, beta, d })
}

/// Full reconstruction: zero-filled initialization then `n_iters` steps.
pub fn admm_reconstruct(
    y: &KSpaceData,
    coils: &CoilProfile,
    cfg: &ReconConfig,
) -> Result<ContrastImageSet> {
    cfg.validate()?;
    let op = MeasurementOperator::new(coils.clone(), y.mask.clone())?;
    let zf = zero_filled(y, coils)?;
    let mut state = ADMMState {
        m: zf.images.clone(),
        z: zf.images.clone(),
        beta: Array3::zeros(zf.images.raw_dim()),
        d: Array4::zeros(y.y.raw_dim()),
    };
    for _ in 0..cfg.n_iters {
        state = admm_step(&state, &op, y, cfg)?;
    }
    Ok(with_images(&zf, state.m))
}

/// Pick reg_weight by grid search over `{1e-4..1e-1} * max|zero_filled|`,
/// scoring reconstruction nRMSE against a reference image stack.
pub fn tune_reg_weight(
    y: &KSpaceData,
    coils: &CoilProfile,
    reference: &Array3<Complex64>,
    cfg: &ReconConfig,
) -> Result<f64> {
    let zf = zero_filled(y, coils)?;
    let scale = zf.images.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let ref_norm = norm3(reference).max(1e-300);
    let mut best = (f64::INFINITY, 0.0);
    for exp in [-4.0f64, -3.0, -2.0, -1.0] {
        let w = 10f64.powf(exp) * scale;
        let mut c = cfg.clone();
        c.reg_weight = w;
        let rec = admm_reconstruct(y, coils, &c)?;
        let err = norm3(&(&rec.images - reference)) / ref_norm;
        if err < best.0 {
            best = (err, w);
        }
    }
    Ok(best.1)
}
