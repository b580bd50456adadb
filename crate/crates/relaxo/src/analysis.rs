//! Pixel-wise monoexponential parameter estimation and evaluation
//! statistics: Levenberg-Marquardt fitting, the two-point closed form,
//! error metrics, and per-region summaries.

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::types::{ContrastImageSet, ParamMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(default = "default_t_min")]
    pub t1rho_min: f64,
    #[serde(default = "default_t_max")]
    pub t1rho_max: f64,
    /// Pixels whose series never exceeds this are masked out. The map-level
    /// entry point derives it as 5% of the stack maximum when set to `None`.
    #[serde(default)]
    pub intensity_floor: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_lm_iters: usize,
    #[serde(default = "default_tol")]
    pub lm_tol: f64,
    #[serde(default = "default_lambda0")]
    pub lm_lambda0: f64,
}

fn default_t_min() -> f64 {
    1.0
}
fn default_t_max() -> f64 {
    1000.0
}
fn default_max_iters() -> usize {
    50
}
fn default_tol() -> f64 {
    1e-10
}
fn default_lambda0() -> f64 {
    1e-3
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            t1rho_min: default_t_min(),
            t1rho_max: default_t_max(),
            intensity_floor: None,
            max_lm_iters: default_max_iters(),
            lm_tol: default_tol(),
            lm_lambda0: default_lambda0(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.t1rho_min && self.t1rho_min < self.t1rho_max) {
            return Err(Error::invalid("need 0 < t1rho_min < t1rho_max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelFit {
    pub s0: f64,
    pub t1rho_ms: f64,
    pub residual: f64,
    pub converged: bool,
    pub valid: bool,
}

const MASKED: PixelFit = PixelFit {
    s0: 0.0,
    t1rho_ms: 0.0,
    residual: 0.0,
    converged: false,
    valid: false,
};

fn sum_sq_residual(signal: &[f64], tsl_ms: &[f64], s0: f64, t: f64) -> f64 {
    signal
        .iter()
        .zip(tsl_ms.iter())
        .map(|(&s, &ti)| {
            let d = s0 * (-ti / t).exp() - s;
            d * d
        })
        .sum()
}

/// Log-linear least squares on ln(signal) vs time, for the LM start point.
fn log_linear_init(signal: &[f64], tsl_ms: &[f64], floor: f64) -> (f64, f64) {
    let n = signal.len() as f64;
    let logs: Vec<f64> = signal.iter().map(|&s| s.max(floor.max(1e-12)).ln()).collect();
    let mean_t = tsl_ms.iter().sum::<f64>() / n;
    let mean_l = logs.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&t, &l) in tsl_ms.iter().zip(logs.iter()) {
        num += (t - mean_t) * (l - mean_l);
        den += (t - mean_t) * (t - mean_t);
    }
    let slope = if den > 0.0 { num / den } else { 0.0 };
    let intercept = mean_l - slope * mean_t;
    let t1rho = if slope < 0.0 { -1.0 / slope } else { f64::INFINITY };
    (intercept.exp(), t1rho)
}

/// Levenberg-Marquardt fit of S0 * exp(-t / T) to one pixel's series.
pub fn fit_monoexp_pixel(signal: &[f64], tsl_ms: &[f64], cfg: &FitConfig) -> Result<PixelFit> {
    cfg.validate()?;
    if signal.len() != tsl_ms.len() || signal.len() < 2 {
        return Err(Error::shape("need matching signal/time arrays of length >= 2"));
    }
    if signal.iter().any(|&s| s < 0.0) {
        return Err(Error::invalid("signal must be nonnegative"));
    }
    let floor = cfg.intensity_floor.unwrap_or(0.0);
    if signal.iter().all(|&s| s <= floor) {
        return Ok(MASKED);
    }

    let clamp_t = |t: f64| t.clamp(cfg.t1rho_min, cfg.t1rho_max);
    let (s0_init, t_init) = log_linear_init(signal, tsl_ms, floor);
    let mut s0 = s0_init.max(1e-12);
    let mut t = clamp_t(if t_init.is_finite() { t_init } else { cfg.t1rho_max });
    let mut cost = sum_sq_residual(signal, tsl_ms, s0, t);
    let mut lambda = cfg.lm_lambda0;
    let mut converged = false;

    for _ in 0..cfg.max_lm_iters {
        // residuals r_i = model - data; Jacobian wrt (s0, t)
        let mut jtj = [[0.0f64; 2]; 2];
        let mut jtr = [0.0f64; 2];
        for (&s, &ti) in signal.iter().zip(tsl_ms.iter()) {
            let e = (-ti / t).exp();
            let r = s0 * e - s;
            let j0 = e;
            let j1 = s0 * e * ti / (t * t);
            jtj[0][0] += j0 * j0;
            jtj[0][1] += j0 * j1;
            jtj[1][1] += j1 * j1;
            jtr[0] += j0 * r;
            jtr[1] += j1 * r;
        }
        jtj[1][0] = jtj[0][1];

        let a00 = jtj[0][0] * (1.0 + lambda);
        let a11 = jtj[1][1] * (1.0 + lambda);
        let det = a00 * a11 - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let ds0 = -(a11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let dt = -(a00 * jtr[1] - jtj[1][0] * jtr[0]) / det;

        let s0_new = (s0 + ds0).max(1e-12);
        let t_new = clamp_t(t + dt);
        let cost_new = sum_sq_residual(signal, tsl_ms, s0_new, t_new);
        if cost_new < cost {
            let step = ((s0_new - s0).powi(2) + (t_new - t).powi(2)).sqrt();
            s0 = s0_new;
            t = t_new;
            cost = cost_new;
            lambda /= 10.0;
            if step < cfg.lm_tol {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                converged = true; // stalled at a (clamped) minimum
                break;
            }
        }
    }

    Ok(PixelFit {
        s0,
        t1rho_ms: t,
        residual: cost.sqrt(),
        converged,
        valid: true,
    })
}

/// Closed-form two-point inversion. Non-decaying pairs return `None`.
pub fn two_point_fit(s1: f64, s2: f64, t1: f64, t2: f64) -> Option<(f64, f64)> {
    if !(t1 < t2) || !(s1 > s2) || s2 <= 0.0 {
        return None;
    }
    let t = (t2 - t1) / (s1 / s2).ln();
    let s0 = s1 * (t1 / t).exp();
    Some((s0, t))
}

/// Per-pixel fit over a magnitude series. The intensity floor defaults to 5%
/// of the stack maximum; sub-floor or non-converged pixels are masked.
pub fn fit_map(series: &ContrastImageSet, cfg: &FitConfig) -> Result<ParamMap> {
    cfg.validate()?;
    if series.n_tsl() < 2 {
        return Err(Error::invalid("need at least two contrasts to fit"));
    }
    let mags = series.magnitudes();
    let peak = mags.iter().cloned().fold(0.0f64, f64::max);
    let floor = cfg.intensity_floor.unwrap_or(0.05 * peak);
    let pixel_cfg = FitConfig {
        intensity_floor: Some(floor),
        ..cfg.clone()
    };
    let (ny, nx) = (series.ny(), series.nx());
    let mut map = ParamMap::zeros(ny, nx);
    let mut signal = vec![0.0; series.n_tsl()];
    for i in 0..ny {
        for j in 0..nx {
            for (k, s) in signal.iter_mut().enumerate() {
                *s = mags[[k, i, j]];
            }
            let fit = fit_monoexp_pixel(&signal, &series.tsl_ms, &pixel_cfg)?;
            if fit.valid && fit.converged {
                map.s0[[i, j]] = fit.s0;
                map.t1rho_ms[[i, j]] = fit.t1rho_ms;
                map.residual[[i, j]] = fit.residual;
                map.valid_mask[[i, j]] = true;
            }
        }
    }
    Ok(map)
}

/// Normalized root-mean-square error over an optional region of interest.
pub fn nrmse(est: &Array2<f64>, reference: &Array2<f64>, roi: Option<&Array2<bool>>) -> Result<f64> {
    if est.dim() != reference.dim() {
        return Err(Error::shape("nrmse input shapes differ"));
    }
    if let Some(r) = roi {
        if r.dim() != est.dim() {
            return Err(Error::shape("roi shape differs"));
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((i, j), &e) in est.indexed_iter() {
        if roi.map_or(true, |r| r[[i, j]]) {
            let rv = reference[[i, j]];
            num += (e - rv) * (e - rv);
            den += rv * rv;
        }
    }
    if den == 0.0 {
        return Err(Error::invalid("reference has zero norm over the roi"));
    }
    Ok((num / den).sqrt())
}

/// SNR in dB: 20 log10(mean magnitude over roi / noise std).
pub fn snr_db(img: &Array2<Complex64>, roi: &Array2<bool>, noise_std: f64) -> Result<f64> {
    if img.dim() != roi.dim() {
        return Err(Error::shape("roi shape differs"));
    }
    if !(noise_std > 0.0) {
        return Err(Error::invalid("noise std must be positive"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((i, j), v) in img.indexed_iter() {
        if roi[[i, j]] {
            sum += v.norm();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("roi is empty"));
    }
    Ok(20.0 * (sum / n as f64 / noise_std).log10())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionRow {
    pub label: u32,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// True when the region has no valid pixels; the summary fields are 0.
    pub empty: bool,
}

/// Quantile by linear interpolation between order statistics of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Per-region mean/median/quartiles of a value map, restricted to valid
/// pixels. Labels are the phantom's region indices; 0 is background.
pub fn region_stats(
    values: &Array2<f64>,
    valid: &Array2<bool>,
    labels: &Array2<u32>,
) -> Result<Vec<RegionRow>> {
    if values.dim() != labels.dim() || valid.dim() != labels.dim() {
        return Err(Error::shape("label/value shapes differ"));
    }
    let max_label = labels.iter().cloned().max().unwrap_or(0);
    let mut rows = Vec::new();
    for label in 1..=max_label {
        let mut vals: Vec<f64> = values
            .indexed_iter()
            .filter(|&((i, j), _)| labels[[i, j]] == label && valid[[i, j]])
            .map(|(_, &v)| v)
            .collect();
        if vals.is_empty() {
            rows.push(RegionRow {
                label,
                n: 0,
                mean: 0.0,
                median: 0.0,
                q1: 0.0,
                q3: 0.0,
                empty: true,
            });
            continue;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        rows.push(RegionRow {
            label,
            n: vals.len(),
            mean,
            median: quantile_sorted(&vals, 0.5),
            q1: quantile_sorted(&vals, 0.25),
            q3: quantile_sorted(&vals, 0.75),
            empty: false,
        });
    }
    Ok(rows)
}

/// Per-contrast magnitude nRMSE between two image sets.
pub fn series_nrmse(
    est: &ContrastImageSet,
    reference: &ContrastImageSet,
    roi: Option<&Array2<bool>>,
) -> Result<Vec<f64>> {
    if est.images.dim() != reference.images.dim() {
        return Err(Error::shape("series shapes differ"));
    }
    let em: Array3<f64> = est.magnitudes();
    let rm: Array3<f64> = reference.magnitudes();
    (0..est.n_tsl())
        .map(|t| {
            nrmse(
                &em.index_axis(Axis(0), t).to_owned(),
                &rm.index_axis(Axis(0), t).to_owned(),
                roi,
            )
        })
        .collect()
}
