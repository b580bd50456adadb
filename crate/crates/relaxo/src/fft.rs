//! Unitary, centered Fourier transforms.
//!
//! The 2D transform is normalized by 1/sqrt(ny*nx) in both directions and is
//! centered: the DC component sits at `(ny/2, nx/2)`, matching the sampling
//! masks' notion of "k-space center". The centered unitary DFT is its own
//! adjoint-inverse, which the measurement-operator adjoint test relies on.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        cell.borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                FftPlanner::new().plan_fft(len, dir)
            })
            .clone()
    })
}

/// Cyclic shift moving index `src` to index 0 (ifftshift when `src = n/2`).
fn roll_rows(a: &mut Array2<Complex64>, shift: isize) {
    let n = a.nrows() as isize;
    if n == 0 || shift.rem_euclid(n) == 0 {
        return;
    }
    let s = shift.rem_euclid(n) as usize;
    let copy = a.clone();
    for i in 0..a.nrows() {
        let src = (i + a.nrows() - s) % a.nrows();
        a.row_mut(i).assign(&copy.row(src));
    }
}

fn roll_cols(a: &mut Array2<Complex64>, shift: isize) {
    let n = a.ncols() as isize;
    if n == 0 || shift.rem_euclid(n) == 0 {
        return;
    }
    let s = shift.rem_euclid(n) as usize;
    let copy = a.clone();
    for j in 0..a.ncols() {
        let src = (j + a.ncols() - s) % a.ncols();
        a.column_mut(j).assign(&copy.column(src));
    }
}

fn fftshift2(a: &mut Array2<Complex64>) {
    let (ny, nx) = a.dim();
    roll_rows(a, (ny / 2) as isize);
    roll_cols(a, (nx / 2) as isize);
}

fn ifftshift2(a: &mut Array2<Complex64>) {
    let (ny, nx) = a.dim();
    roll_rows(a, -((ny / 2) as isize));
    roll_cols(a, -((nx / 2) as isize));
}

fn fft2_raw(a: &mut Array2<Complex64>, inverse: bool) {
    let (ny, nx) = a.dim();
    let row_plan = plan(nx, inverse);
    for mut row in a.rows_mut() {
        let slice = row.as_slice_mut().expect("row-major layout");
        row_plan.process(slice);
    }
    let col_plan = plan(ny, inverse);
    let mut scratch = vec![Complex64::default(); ny];
    for j in 0..nx {
        for i in 0..ny {
            scratch[i] = a[[i, j]];
        }
        col_plan.process(&mut scratch);
        for i in 0..ny {
            a[[i, j]] = scratch[i];
        }
    }
}

/// Centered unitary 2D DFT.
pub fn fft2c(img: &Array2<Complex64>) -> Array2<Complex64> {
    let (ny, nx) = img.dim();
    let mut a = img.clone();
    ifftshift2(&mut a);
    fft2_raw(&mut a, false);
    fftshift2(&mut a);
    let norm = 1.0 / ((ny * nx) as f64).sqrt();
    a.mapv_inplace(|v| v * norm);
    a
}

/// Centered unitary inverse 2D DFT (the adjoint of [`fft2c`]).
pub fn ifft2c(k: &Array2<Complex64>) -> Array2<Complex64> {
    let (ny, nx) = k.dim();
    let mut a = k.clone();
    ifftshift2(&mut a);
    fft2_raw(&mut a, true);
    fftshift2(&mut a);
    let norm = 1.0 / ((ny * nx) as f64).sqrt();
    a.mapv_inplace(|v| v * norm);
    a
}

/// Unitary DFT along axis 0 (the contrast axis) of a `(n_tsl, ny, nx)` stack.
pub fn fft_time(stack: &Array3<Complex64>, inverse: bool) -> Array3<Complex64> {
    let n = stack.shape()[0];
    let p = plan(n, inverse);
    let norm = 1.0 / (n as f64).sqrt();
    let mut out = stack.clone();
    let (ny, nx) = (stack.shape()[1], stack.shape()[2]);
    let mut scratch = vec![Complex64::default(); n];
    for i in 0..ny {
        for j in 0..nx {
            for t in 0..n {
                scratch[t] = out[[t, i, j]];
            }
            p.process(&mut scratch);
            for t in 0..n {
                out[[t, i, j]] = scratch[t] * norm;
            }
        }
    }
    out
}

/// Sum over all entries of `conj(a) * b`.
pub fn inner2(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm2(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm3(a: &Array3<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Per-image centered FFT of every contrast in a stack.
pub fn fft2c_stack(stack: &Array3<Complex64>) -> Array3<Complex64> {
    let mut out = stack.clone();
    for (i, img) in stack.axis_iter(Axis(0)).enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&fft2c(&img.to_owned()));
    }
    out
}

pub fn ifft2c_stack(stack: &Array3<Complex64>) -> Array3<Complex64> {
    let mut out = stack.clone();
    for (i, img) in stack.axis_iter(Axis(0)).enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&ifft2c(&img.to_owned()));
    }
    out
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
    fn round_trip_identity() {
        let img = random_image(16, 12, 1);
        let back = ifft2c(&fft2c(&img));
        let err = (&back - &img).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "round-trip error {err}");
    }

    #[test]
    fn parseval() {
        let img = random_image(32, 32, 2);
        assert!((norm2(&fft2c(&img)) - norm2(&img)).abs() < 1e-12);
    }

    #[test]
    fn dc_is_centered() {
        let img = Array2::from_elem((8, 8), Complex64::new(1.0, 0.0));
        let k = fft2c(&img);
        assert!((k[[4, 4]].re - 8.0).abs() < 1e-12);
        assert!(k[[0, 0]].norm() < 1e-12);
    }

    #[test]
    fn adjoint_of_fft_is_ifft() {
        let x = random_image(16, 16, 3);
        let y = random_image(16, 16, 4);
        let lhs = inner2(&fft2c(&x), &y);
        let rhs = inner2(&x, &ifft2c(&y));
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn temporal_round_trip() {
        let mut rng = crate::seed::Seed::new(5).rng();
        let stack = Array3::from_shape_fn((5, 6, 7), |_| {
            Complex64::new(rng.gen::<f64>(), rng.gen::<f64>())
        });
        let back = fft_time(&fft_time(&stack, false), true);
        let err = (&back - &stack).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }
}
