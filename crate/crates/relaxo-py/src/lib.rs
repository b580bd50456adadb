//! Thin Python bindings over the core library.
//!
//! Arrays cross the boundary as flat row-major `list[float]` plus explicit
//! shape arguments, so the Python side needs nothing beyond the stdlib
//! (numpy can wrap the results with `np.asarray(x).reshape(shape)`).

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use relaxo::acquisition::{add_noise, forward, make_coils, make_mask_set, MeasurementOperator};
use relaxo::analysis::{fit_map, FitConfig};
use relaxo::generative::analytic_generate;
use relaxo::phantom::{
    random_phantom, rasterize, synthesize, PhaseMode, BRAIN_TSL_MS, KNEE_TSL_MS,
};
use relaxo::recon::{admm_reconstruct, ls_reconstruct, LplusSConfig, ReconConfig};
use relaxo::seed::Seed;
use relaxo::types::{ContrastImageSet, ParamMap};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array2(data: &[f64], ny: usize, nx: usize) -> PyResult<Array2<f64>> {
    Array2::from_shape_vec((ny, nx), data.to_vec()).map_err(err)
}

fn to_complex3(
    re: &[f64],
    im: &[f64],
    n: usize,
    ny: usize,
    nx: usize,
) -> PyResult<Array3<Complex64>> {
    if re.len() != im.len() {
        return Err(PyValueError::new_err("re/im length mismatch"));
    }
    let v: Vec<Complex64> = re
        .iter()
        .zip(im)
        .map(|(&r, &i)| Complex64::new(r, i))
        .collect();
    Array3::from_shape_vec((n, ny, nx), v).map_err(err)
}

fn split_complex(imgs: &Array3<Complex64>) -> (Vec<f64>, Vec<f64>) {
    let re = imgs.iter().map(|c| c.re).collect();
    let im = imgs.iter().map(|c| c.im).collect();
    (re, im)
}

fn map_from_parts(
    t1rho: &[f64],
    s0: &[f64],
    valid: &[u8],
    ny: usize,
    nx: usize,
) -> PyResult<ParamMap> {
    let mut m = ParamMap::zeros(ny, nx);
    m.t1rho_ms = to_array2(t1rho, ny, nx)?;
    m.s0 = to_array2(s0, ny, nx)?;
    m.valid_mask = Array2::from_shape_vec((ny, nx), valid.iter().map(|&v| v != 0).collect())
        .map_err(err)?;
    Ok(m)
}

/// Standard five-point knee spin-lock schedule in milliseconds.
#[pyfunction]
fn knee_tsl_ms() -> Vec<f64> {
    KNEE_TSL_MS.to_vec()
}

/// Standard five-point brain spin-lock schedule in milliseconds.
#[pyfunction]
fn brain_tsl_ms() -> Vec<f64> {
    BRAIN_TSL_MS.to_vec()
}

/// Rasterize a randomized phantom.
///
/// Returns `(t1rho_ms, s0, valid, labels)` as flat row-major lists of
/// length `ny*nx` (`valid` is 0/1, `labels` is the region id per pixel).
#[pyfunction]
fn random_phantom_maps(
    ny: usize,
    nx: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<u8>, Vec<u32>)> {
    let spec = random_phantom(ny, nx, Seed::new(seed));
    let (truth, labels) = rasterize(&spec).map_err(err)?;
    Ok((
        truth.t1rho_ms.iter().copied().collect(),
        truth.s0.iter().copied().collect(),
        truth.valid_mask.iter().map(|&v| v as u8).collect(),
        labels.iter().copied().collect(),
    ))
}

/// Evaluate the mono-exponential decay model over a spin-lock schedule.
///
/// `phase` is `"zero"` or `"smooth-quadratic"`. Returns the complex series
/// as `(re, im)` flat lists with shape `(len(tsl_ms), ny, nx)`.
#[pyfunction]
#[pyo3(signature = (t1rho, s0, valid, ny, nx, tsl_ms, phase="smooth-quadratic"))]
#[allow(clippy::too_many_arguments)]
fn synthesize_series(
    t1rho: Vec<f64>,
    s0: Vec<f64>,
    valid: Vec<u8>,
    ny: usize,
    nx: usize,
    tsl_ms: Vec<f64>,
    phase: &str,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let truth = map_from_parts(&t1rho, &s0, &valid, ny, nx)?;
    let mode = match phase {
        "zero" => PhaseMode::Zero,
        "smooth-quadratic" => PhaseMode::SmoothQuadratic,
        other => return Err(PyValueError::new_err(format!("unknown phase mode {other:?}"))),
    };
    let series = synthesize(&truth, &tsl_ms, mode).map_err(err)?;
    Ok(split_complex(&series.images))
}

/// Build a per-contrast variable-density Poisson-disc mask set.
///
/// Returns `(mask, realized)`: the 0/1 mask flat with shape
/// `(n_tsl, ny, nx)` and the realized acceleration per contrast.
#[pyfunction]
fn poisson_mask_set(
    ny: usize,
    nx: usize,
    n_tsl: usize,
    r_target: f64,
    calib_frac: f64,
    seed: u64,
) -> PyResult<(Vec<u8>, Vec<f64>)> {
    let m = make_mask_set(ny, nx, n_tsl, r_target, calib_frac, Seed::new(seed)).map_err(err)?;
    let realized = (0..n_tsl).map(|i| m.realized_acceleration(i)).collect();
    Ok((m.mask.iter().map(|&v| v as u8).collect(), realized))
}

/// Simulate a multi-coil undersampled acquisition of a complex contrast
/// series and reconstruct it.
///
/// `mode` is `"zero-filled"`, `"admm"`, or `"l+s"`. `snr_db=None` means a
/// noiseless acquisition. Returns the reconstructed complex series as
/// `(re, im)` flat lists with the input shape.
#[pyfunction]
#[pyo3(signature = (re, im, n_tsl, ny, nx, tsl_ms, n_coils, r_k, seed,
                    mode="admm", snr_db=None, calib_frac=0.0625,
                    reg_weight=0.001, lambda_l=0.01, lambda_s=0.002))]
#[allow(clippy::too_many_arguments)]
fn acquire_and_reconstruct(
    re: Vec<f64>,
    im: Vec<f64>,
    n_tsl: usize,
    ny: usize,
    nx: usize,
    tsl_ms: Vec<f64>,
    n_coils: usize,
    r_k: f64,
    seed: u64,
    mode: &str,
    snr_db: Option<f64>,
    calib_frac: f64,
    reg_weight: f64,
    lambda_l: f64,
    lambda_s: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let imgs = to_complex3(&re, &im, n_tsl, ny, nx)?;
    let series = ContrastImageSet::new(imgs, tsl_ms).map_err(err)?;
    let seed = Seed::new(seed);
    let coils = make_coils(n_coils, ny, nx, seed.derive(1)).map_err(err)?;
    let mask = make_mask_set(ny, nx, n_tsl, r_k, calib_frac, seed.derive(2)).map_err(err)?;
    let op = MeasurementOperator::new(coils.clone(), mask).map_err(err)?;
    let clean = forward(&op, &series).map_err(err)?;
    let y = match snr_db {
        None => clean,
        Some(snr) => {
            let first = series.images.index_axis(Axis(0), 0).to_owned();
            let roi = first.mapv(|c| c.norm() > 0.0);
            add_noise(&clean, snr, &roi, &first, seed.derive(3)).map_err(err)?
        }
    };
    let rec = match mode {
        "zero-filled" => {
            let cfg = ReconConfig {
                n_iters: 0,
                ..Default::default()
            };
            admm_reconstruct(&y, &coils, &cfg).map_err(err)?
        }
        "admm" => {
            let cfg = ReconConfig {
                reg_weight,
                ..Default::default()
            };
            admm_reconstruct(&y, &coils, &cfg).map_err(err)?
        }
        "l+s" => {
            let cfg = LplusSConfig {
                lambda_l,
                lambda_s,
                max_iters: 50,
                tol: 1e-6,
            };
            ls_reconstruct(&y, &coils, &cfg).map_err(err)?.reconstruction()
        }
        other => return Err(PyValueError::new_err(format!("unknown recon mode {other:?}"))),
    };
    Ok(split_complex(&rec.images))
}

/// Closed-form synthesis of intermediate contrasts from two magnitude
/// images acquired at `t_a` and `t_b` milliseconds.
///
/// Returns `(series, valid)` where `series` is flat with shape
/// `(len(t_out), ny, nx)` and `valid` flags pixels above `floor`.
#[pyfunction]
#[pyo3(signature = (img_a, img_b, ny, nx, t_a, t_b, t_out, floor=1e-6))]
#[allow(clippy::too_many_arguments)]
fn analytic_series(
    img_a: Vec<f64>,
    img_b: Vec<f64>,
    ny: usize,
    nx: usize,
    t_a: f64,
    t_b: f64,
    t_out: Vec<f64>,
    floor: f64,
) -> PyResult<(Vec<f64>, Vec<u8>)> {
    let a = to_array2(&img_a, ny, nx)?;
    let b = to_array2(&img_b, ny, nx)?;
    let (imgs, valid) = analytic_generate(&a, &b, t_a, t_b, &t_out, floor).map_err(err)?;
    let mut flat = Vec::with_capacity(t_out.len() * ny * nx);
    for img in &imgs {
        flat.extend(img.iter().copied());
    }
    Ok((flat, valid.iter().map(|&v| v as u8).collect()))
}

/// Per-pixel mono-exponential fit of a complex contrast series.
///
/// Returns `(t1rho_ms, s0, valid)` flat with shape `(ny, nx)`.
#[pyfunction]
#[pyo3(signature = (re, im, n_tsl, ny, nx, tsl_ms, intensity_floor=None))]
#[allow(clippy::too_many_arguments)]
fn fit_t1rho_map(
    re: Vec<f64>,
    im: Vec<f64>,
    n_tsl: usize,
    ny: usize,
    nx: usize,
    tsl_ms: Vec<f64>,
    intensity_floor: Option<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<u8>)> {
    let imgs = to_complex3(&re, &im, n_tsl, ny, nx)?;
    let series = ContrastImageSet::new(imgs, tsl_ms).map_err(err)?;
    let cfg = FitConfig {
        intensity_floor,
        ..Default::default()
    };
    let map = fit_map(&series, &cfg).map_err(err)?;
    Ok((
        map.t1rho_ms.iter().copied().collect(),
        map.s0.iter().copied().collect(),
        map.valid_mask.iter().map(|&v| v as u8).collect(),
    ))
}

/// Normalized root-mean-square error between two real images, optionally
/// restricted to a 0/1 region of interest.
#[pyfunction]
#[pyo3(signature = (est, reference, ny, nx, roi=None))]
fn nrmse(
    est: Vec<f64>,
    reference: Vec<f64>,
    ny: usize,
    nx: usize,
    roi: Option<Vec<u8>>,
) -> PyResult<f64> {
    let e = to_array2(&est, ny, nx)?;
    let r = to_array2(&reference, ny, nx)?;
    let roi = match &roi {
        Some(v) => Some(
            Array2::from_shape_vec((ny, nx), v.iter().map(|&b| b != 0).collect()).map_err(err)?,
        ),
        None => None,
    };
    relaxo::analysis::nrmse(&e, &r, roi.as_ref()).map_err(err)
}

#[pymodule]
fn relaxo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(knee_tsl_ms, m)?)?;
    m.add_function(wrap_pyfunction!(brain_tsl_ms, m)?)?;
    m.add_function(wrap_pyfunction!(random_phantom_maps, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_series, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_mask_set, m)?)?;
    m.add_function(wrap_pyfunction!(acquire_and_reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_series, m)?)?;
    m.add_function(wrap_pyfunction!(fit_t1rho_map, m)?)?;
    m.add_function(wrap_pyfunction!(nrmse, m)?)?;
    Ok(())
}
