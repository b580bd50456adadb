//! Low-rank plus sparse decomposition of the contrast series with k-space
//! data consistency.

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::acquisition::{CoilProfile, KSpaceData};
use crate::fft::{fft2c, fft_time, ifft2c, norm3};
use crate::linalg::{nuclear_norm, svt};
use crate::recon::zero_filled;
use crate::types::ContrastImageSet;
use crate::wavelet::soft;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LplusSConfig {
    pub lambda_l: f64,
    pub lambda_s: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iters() -> usize {
    50
}
fn default_tol() -> f64 {
    1e-6
}

impl LplusSConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_l <= 0.0 || self.lambda_s <= 0.0 {
            return Err(Error::invalid("L+S thresholds must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LpsResult {
    pub l: ContrastImageSet,
    pub s: ContrastImageSet,
    pub converged: bool,
    pub iters: usize,
    /// Objective surrogate |L|_* + (lambda_s/lambda_l)|T S|_1 per iteration.
    pub objective: Vec<f64>,
}

impl LpsResult {
    pub fn reconstruction(&self) -> ContrastImageSet {
        ContrastImageSet {
            images: &self.l.images + &self.s.images,
            tsl_ms: self.l.tsl_ms.clone(),
        }
    }
}

fn casorati(stack: &Array3<Complex64>) -> Array2<Complex64> {
    let (t, ny, nx) = (stack.shape()[0], stack.shape()[1], stack.shape()[2]);
    Array2::from_shape_fn((ny * nx, t), |(p, c)| stack[[c, p / nx, p % nx]])
}

fn from_casorati(m: &Array2<Complex64>, ny: usize, nx: usize) -> Array3<Complex64> {
    let t = m.ncols();
    Array3::from_shape_fn((t, ny, nx), |(c, i, j)| m[[i * nx + j, c]])
}

/// Replace sampled per-coil k-space entries of `x` with the acquired values
/// and recombine.
fn data_consistency(
    x: &Array3<Complex64>,
    y: &KSpaceData,
    coils: &CoilProfile,
) -> Array3<Complex64> {
    let (n_coils, ny, nx) = (coils.n_coils(), coils.ny(), coils.nx());
    let n_tsl = x.shape()[0];
    let mut out = Array3::<Complex64>::zeros((n_tsl, ny, nx));
    for c in 0..n_coils {
        let s = coils.sens.index_axis(Axis(0), c);
        for t in 0..n_tsl {
            let xt = x.index_axis(Axis(0), t);
            let weighted = Array2::from_shape_fn((ny, nx), |(i, j)| s[[i, j]] * xt[[i, j]]);
            let mut k = fft2c(&weighted);
            let m = y.mask.mask.index_axis(Axis(0), t);
            k.indexed_iter_mut().for_each(|((i, j), v)| {
                if m[[i, j]] {
                    *v = y.y[[c, t, i, j]];
                }
            });
            let img = ifft2c(&k);
            let mut acc = out.index_axis_mut(Axis(0), t);
            acc.indexed_iter_mut()
                .for_each(|((i, j), v)| *v += s[[i, j]].conj() * img[[i, j]]);
        }
    }
    out
}

/// Iterative L+S decomposition. The sparse component is thresholded in the
/// temporal DFT domain; the final data-consistency correction is absorbed
/// into S so that the returned reconstruction carries the acquired samples.
pub fn ls_reconstruct(
    y: &KSpaceData,
    coils: &CoilProfile,
    cfg: &LplusSConfig,
) -> Result<LpsResult> {
    cfg.validate()?;
    let n_tsl = y.n_tsl();
    if n_tsl < 2 {
        return Err(Error::invalid("L+S needs at least two contrasts"));
    }
    let (ny, nx) = (coils.ny(), coils.nx());
    let zf = zero_filled(y, coils)?;
    let mut m = zf.images.clone();
    let mut l = Array3::<Complex64>::zeros(m.raw_dim());
    let mut s = Array3::<Complex64>::zeros(m.raw_dim());

    let mut converged = false;
    let mut iters = 0;
    let mut objective = Vec::new();
    for _ in 0..cfg.max_iters {
        iters += 1;
        let m_prev = m.clone();

        let l_cas = svt(&casorati(&(&m - &s)), cfg.lambda_l);
        l = from_casorati(&l_cas, ny, nx);

        let sparse_in = fft_time(&(&m - &l), false);
        let thr = sparse_in.mapv(|v| soft(v, cfg.lambda_s));
        s = fft_time(&thr, true);

        m = data_consistency(&(&l + &s), y, coils);

        objective.push(
            nuclear_norm(&casorati(&l))
                + cfg.lambda_s / cfg.lambda_l
                    * fft_time(&s, false).iter().map(|v| v.norm()).sum::<f64>(),
        );

        let denom = norm3(&m_prev).max(1e-300);
        if norm3(&(&m - &m_prev)) / denom < cfg.tol {
            converged = true;
            break;
        }
    }
    // absorb the last data-consistency correction into S
    s = &m - &l;

    Ok(LpsResult {
        l: ContrastImageSet { images: l, tsl_ms: zf.tsl_ms.clone() },
        s: ContrastImageSet { images: s, tsl_ms: zf.tsl_ms },
        converged,
        iters,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{forward, make_coils, make_mask_set, MeasurementOperator};
    use crate::phantom::{rasterize, synthesize, PhantomSpec, EllipseRegion, PhaseMode, KNEE_TSL_MS};
    use crate::seed::Seed;

    fn cfg() -> LplusSConfig {
        LplusSConfig { lambda_l: 0.05, lambda_s: 0.005, max_iters: 50, tol: 1e-6 }
    }

    fn single_t1rho_phantom(ny: usize) -> PhantomSpec {
        PhantomSpec {
            ny,
            nx: ny,
            regions: vec![EllipseRegion {
                cx: 0.5, cy: 0.5, rx: 0.4, ry: 0.35, angle_deg: 0.0, s0: 1.0, t1rho_ms: 40.0,
            }],
        }
    }

    #[test]
    fn zero_data_gives_zero_decomposition() {
        let coils = make_coils(1, 16, 16, Seed::new(0)).unwrap();
        let mask = make_mask_set(16, 16, 2, 2.0, 0.125, Seed::new(1)).unwrap();
        let y = KSpaceData {
            y: ndarray::Array4::zeros((1, 2, 16, 16)),
            mask,
            noise_std: 0.0,
        };
        let res = ls_reconstruct(&y, &coils, &cfg()).unwrap();
        assert!(res.l.images.iter().all(|v| v.norm() == 0.0));
        assert!(res.s.images.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn final_reconstruction_matches_acquired_samples() {
        let (truth, _) = rasterize(&single_t1rho_phantom(32)).unwrap();
        let img = synthesize(&truth, &KNEE_TSL_MS, PhaseMode::SmoothQuadratic).unwrap();
        let coils = make_coils(1, 32, 32, Seed::new(0)).unwrap();
        let mask = make_mask_set(32, 32, 5, 3.0, 0.0625, Seed::new(2)).unwrap();
        let op = MeasurementOperator::new(coils.clone(), mask).unwrap();
        let y = forward(&op, &img).unwrap();
        let res = ls_reconstruct(&y, &coils, &cfg()).unwrap();
        let rec = res.reconstruction();
        let ay = forward(&op, &rec).unwrap();
        let mut worst = 0.0f64;
        for ((c, t, i, j), v) in ay.y.indexed_iter() {
            if y.mask.mask[[t, i, j]] {
                worst = worst.max((v - y.y[[c, t, i, j]]).norm());
            }
        }
        assert!(worst < 1e-10, "worst sampled-point residual {worst}");
    }

    #[test]
    fn rank_one_series_is_captured_by_l() {
        // all pixels share one T1rho, so the Casorati matrix is rank 1
        let (truth, _) = rasterize(&single_t1rho_phantom(32)).unwrap();
        let img = synthesize(&truth, &KNEE_TSL_MS, PhaseMode::Zero).unwrap();
        let coils = make_coils(1, 32, 32, Seed::new(0)).unwrap();
        let mask = make_mask_set(32, 32, 5, 3.0, 0.0625, Seed::new(3)).unwrap();
        let op = MeasurementOperator::new(coils.clone(), mask).unwrap();
        let y = forward(&op, &img).unwrap();
        let c = LplusSConfig { lambda_l: 0.01, lambda_s: 1e6, max_iters: 50, tol: 1e-8 };
        let res = ls_reconstruct(&y, &coils, &c).unwrap();
        let le = norm3(&res.l.images);
        let tot = norm3(&res.reconstruction().images).max(1e-300);
        assert!(le / tot >= 0.95, "L energy fraction {}", le / tot);
    }

    #[test]
    fn objective_surrogate_non_increasing() {
        let (truth, _) = rasterize(&single_t1rho_phantom(32)).unwrap();
        let img = synthesize(&truth, &KNEE_TSL_MS, PhaseMode::SmoothQuadratic).unwrap();
        let coils = make_coils(1, 32, 32, Seed::new(0)).unwrap();
        let mask = make_mask_set(32, 32, 5, 4.6, 0.0625, Seed::new(4)).unwrap();
        let op = MeasurementOperator::new(coils.clone(), mask).unwrap();
        let y = forward(&op, &img).unwrap();
        let res = ls_reconstruct(&y, &coils, &cfg()).unwrap();
        let slack = 1e-8 * (1.0 + res.objective[0].abs());
        for w in res.objective.windows(2) {
            assert!(w[1] <= w[0] + slack, "objective rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn single_contrast_rejected() {
        let coils = make_coils(1, 16, 16, Seed::new(0)).unwrap();
        let y = KSpaceData {
            y: ndarray::Array4::zeros((1, 1, 16, 16)),
            mask: crate::acquisition::SamplingMask::full(1, 16, 16),
            noise_std: 0.0,
        };
        assert!(ls_reconstruct(&y, &coils, &cfg()).is_err());
    }
}
