use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::{Error, Result};

/// Complex-valued 2D image, row-major `(ny, nx)`.
pub type ComplexImage = Array2<Complex64>;

/// Stack of complex contrast-weighted images indexed by spin-lock time.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastImageSet {
    /// `(n_tsl, ny, nx)`
    pub images: Array3<Complex64>,
    /// Spin-lock times in milliseconds, strictly increasing.
    pub tsl_ms: Vec<f64>,
}

impl ContrastImageSet {
    pub fn new(images: Array3<Complex64>, tsl_ms: Vec<f64>) -> Result<Self> {
        if images.shape()[0] != tsl_ms.len() {
            return Err(Error::shape(format!(
                "{} images but {} spin-lock times",
                images.shape()[0],
                tsl_ms.len()
            )));
        }
        validate_tsl(&tsl_ms)?;
        Ok(ContrastImageSet { images, tsl_ms })
    }

    pub fn n_tsl(&self) -> usize {
        self.tsl_ms.len()
    }

    pub fn ny(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn nx(&self) -> usize {
        self.images.shape()[2]
    }

    /// Per-contrast magnitude images.
    pub fn magnitudes(&self) -> Array3<f64> {
        self.images.mapv(|c| c.norm())
    }
}

pub fn validate_tsl(tsl_ms: &[f64]) -> Result<()> {
    if tsl_ms.is_empty() {
        return Err(Error::invalid("empty spin-lock time list"));
    }
    if tsl_ms[0] < 0.0 {
        return Err(Error::invalid("spin-lock times must be nonnegative"));
    }
    if tsl_ms.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("spin-lock times must be strictly increasing"));
    }
    Ok(())
}

/// Per-pixel mono-exponential fit result; the pipeline's end product.
///
/// Where `valid_mask` is false, `s0`, `t1rho_ms` and `residual` are exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMap {
    pub s0: Array2<f64>,
    pub t1rho_ms: Array2<f64>,
    pub valid_mask: Array2<bool>,
    pub residual: Array2<f64>,
}

impl ParamMap {
    pub fn zeros(ny: usize, nx: usize) -> Self {
        ParamMap {
            s0: Array2::zeros((ny, nx)),
            t1rho_ms: Array2::zeros((ny, nx)),
            valid_mask: Array2::from_elem((ny, nx), false),
            residual: Array2::zeros((ny, nx)),
        }
    }

    pub fn ny(&self) -> usize {
        self.s0.nrows()
    }

    pub fn nx(&self) -> usize {
        self.s0.ncols()
    }

    pub fn n_valid(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrast_set_rejects_mismatched_tsl() {
        let imgs = Array3::zeros((3, 8, 8));
        assert!(ContrastImageSet::new(imgs.clone(), vec![1.0, 2.0]).is_err());
        assert!(ContrastImageSet::new(imgs.clone(), vec![2.0, 1.0, 3.0]).is_err());
        assert!(ContrastImageSet::new(imgs, vec![1.0, 2.0, 3.0]).is_ok());
    }

    #[test]
    fn empty_tsl_rejected() {
        assert!(validate_tsl(&[]).is_err());
        assert!(validate_tsl(&[-1.0, 2.0]).is_err());
        assert!(validate_tsl(&[0.0, 5.0, 10.0]).is_ok());
    }
}
