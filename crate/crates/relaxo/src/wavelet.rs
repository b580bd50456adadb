//! Sparsifying transforms for the Z-update: single-level periodic Haar
//! (orthonormal, the default) and a periodic finite-difference surrogate.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    HaarWavelet,
    FiniteDifference,
}

/// Magnitude soft-thresholding of a complex value.
pub fn soft(v: Complex64, t: f64) -> Complex64 {
    let mag = v.norm();
    if mag <= t {
        Complex64::new(0.0, 0.0)
    } else {
        v * ((mag - t) / mag)
    }
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Single-level 2D Haar transform, periodic, orthonormal. Requires even dims.
pub fn haar_forward(img: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let (ny, nx) = img.dim();
    if ny % 2 != 0 || nx % 2 != 0 {
        return Err(Error::invalid("Haar transform needs even dimensions"));
    }
    // rows
    let mut tmp = Array2::<Complex64>::zeros((ny, nx));
    for i in 0..ny {
        for j in 0..nx / 2 {
            let a = img[[i, 2 * j]];
            let b = img[[i, 2 * j + 1]];
            tmp[[i, j]] = (a + b) * INV_SQRT2;
            tmp[[i, nx / 2 + j]] = (a - b) * INV_SQRT2;
        }
    }
    // columns
    let mut out = Array2::<Complex64>::zeros((ny, nx));
    for j in 0..nx {
        for i in 0..ny / 2 {
            let a = tmp[[2 * i, j]];
            let b = tmp[[2 * i + 1, j]];
            out[[i, j]] = (a + b) * INV_SQRT2;
            out[[ny / 2 + i, j]] = (a - b) * INV_SQRT2;
        }
    }
    Ok(out)
}

pub fn haar_inverse(coef: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let (ny, nx) = coef.dim();
    if ny % 2 != 0 || nx % 2 != 0 {
        return Err(Error::invalid("Haar transform needs even dimensions"));
    }
    let mut tmp = Array2::<Complex64>::zeros((ny, nx));
    for j in 0..nx {
        for i in 0..ny / 2 {
            let lo = coef[[i, j]];
            let hi = coef[[ny / 2 + i, j]];
            tmp[[2 * i, j]] = (lo + hi) * INV_SQRT2;
            tmp[[2 * i + 1, j]] = (lo - hi) * INV_SQRT2;
        }
    }
    let mut out = Array2::<Complex64>::zeros((ny, nx));
    for i in 0..ny {
        for j in 0..nx / 2 {
            let lo = tmp[[i, j]];
            let hi = tmp[[i, nx / 2 + j]];
            out[[i, 2 * j]] = (lo + hi) * INV_SQRT2;
            out[[i, 2 * j + 1]] = (lo - hi) * INV_SQRT2;
        }
    }
    Ok(out)
}

fn diff_x(img: &Array2<Complex64>) -> Array2<Complex64> {
    let (ny, nx) = img.dim();
    Array2::from_shape_fn((ny, nx), |(i, j)| img[[i, (j + 1) % nx]] - img[[i, j]])
}

fn diff_y(img: &Array2<Complex64>) -> Array2<Complex64> {
    let (ny, nx) = img.dim();
    Array2::from_shape_fn((ny, nx), |(i, j)| img[[(i + 1) % ny, j]] - img[[i, j]])
}

fn diff_x_adj(d: &Array2<Complex64>) -> Array2<Complex64> {
    let (ny, nx) = d.dim();
    Array2::from_shape_fn((ny, nx), |(i, j)| d[[i, (j + nx - 1) % nx]] - d[[i, j]])
}

fn diff_y_adj(d: &Array2<Complex64>) -> Array2<Complex64> {
    let (ny, nx) = d.dim();
    Array2::from_shape_fn((ny, nx), |(i, j)| d[[(i + ny - 1) % ny, j]] - d[[i, j]])
}

/// Shrinkage step for a transform: Haar uses the exact orthonormal
/// analysis-shrink-synthesis; finite differences use one proximal-gradient
/// step on the anisotropic TV objective (step 1/8, the Lipschitz bound of the
/// periodic difference operator).
pub fn shrink(transform: Transform, v: &Array2<Complex64>, t: f64) -> Result<Array2<Complex64>> {
    match transform {
        Transform::HaarWavelet => {
            let mut c = haar_forward(v)?;
            c.mapv_inplace(|x| soft(x, t));
            haar_inverse(&c)
        }
        Transform::FiniteDifference => {
            let dx = diff_x(v);
            let dy = diff_y(v);
            let rx = Array2::from_shape_fn(v.dim(), |ix| dx[ix] - soft(dx[ix], t));
            let ry = Array2::from_shape_fn(v.dim(), |ix| dy[ix] - soft(dy[ix], t));
            let corr = diff_x_adj(&rx) + diff_y_adj(&ry);
            Ok(Array2::from_shape_fn(v.dim(), |ix| v[ix] - corr[ix] / 8.0))
        }
    }
}

/// l1 norm of the transform coefficients (objective bookkeeping).
pub fn l1_of_transform(transform: Transform, v: &Array2<Complex64>) -> Result<f64> {
    Ok(match transform {
        Transform::HaarWavelet => haar_forward(v)?.iter().map(|c| c.norm()).sum(),
        Transform::FiniteDifference => {
            diff_x(v).iter().map(|c| c.norm()).sum::<f64>()
                + diff_y(v).iter().map(|c| c.norm()).sum::<f64>()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(ny: usize, nx: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = crate::seed::Seed::new(seed).rng();
        Array2::from_shape_fn((ny, nx), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        })
    }

    #[test]
    fn soft_threshold_values() {
        assert!((soft(Complex64::new(0.5, 0.0), 0.2).re - 0.3).abs() < 1e-15);
        assert_eq!(soft(Complex64::new(-0.1, 0.0), 0.2), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn haar_round_trip_and_parseval() {
        let img = random_image(16, 12, 1);
        let c = haar_forward(&img).unwrap();
        let back = haar_inverse(&c).unwrap();
        let err = (&back - &img).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
        let n_img: f64 = img.iter().map(|v| v.norm_sqr()).sum();
        let n_c: f64 = c.iter().map(|v| v.norm_sqr()).sum();
        assert!((n_img - n_c).abs() < 1e-11);
    }

    #[test]
    fn haar_rejects_odd_dims() {
        let img = random_image(7, 8, 2);
        assert!(haar_forward(&img).is_err());
    }

    #[test]
    fn shrink_at_zero_threshold_is_identity() {
        let img = random_image(8, 8, 3);
        let out = shrink(Transform::HaarWavelet, &img, 0.0).unwrap();
        let err = (&out - &img).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
        let out = shrink(Transform::FiniteDifference, &img, 0.0).unwrap();
        let err = (&out - &img).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn diff_adjoints_match_inner_product() {
        let x = random_image(10, 12, 4);
        let y = random_image(10, 12, 5);
        let lhs: Complex64 = diff_x(&x).iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum();
        let rhs: Complex64 = x.iter().zip(diff_x_adj(&y).iter()).map(|(a, b)| a.conj() * b).sum();
        assert!((lhs - rhs).norm() < 1e-11);
        let lhs: Complex64 = diff_y(&x).iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum();
        let rhs: Complex64 = x.iter().zip(diff_y_adj(&y).iter()).map(|(a, b)| a.conj() * b).sum();
        assert!((lhs - rhs).norm() < 1e-11);
    }
}
