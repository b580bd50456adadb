//! Multi-coil encoding, undersampled Fourier measurement, and noise.

use ndarray::{Array2, Array3, Array4, Axis};
use num_complex::Complex64;
use rand::Rng;

pub use crate::mask::{make_mask_set, make_poisson_mask, SamplingMask};

use crate::fft::{fft2c, ifft2c};
use crate::seed::Seed;
use crate::types::{ComplexImage, ContrastImageSet};
use crate::{Error, Result};

/// Sum-of-squares normalized coil sensitivity maps, `(n_coils, ny, nx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilProfile {
    pub sens: Array3<Complex64>,
}

impl CoilProfile {
    pub fn n_coils(&self) -> usize {
        self.sens.shape()[0]
    }

    pub fn ny(&self) -> usize {
        self.sens.shape()[1]
    }

    pub fn nx(&self) -> usize {
        self.sens.shape()[2]
    }
}

/// Multi-coil multi-contrast k-space samples, zero at unsampled points.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    /// `(n_coils, n_tsl, ny, nx)`
    pub y: Array4<Complex64>,
    pub mask: SamplingMask,
    pub noise_std: f64,
}

impl KSpaceData {
    pub fn n_coils(&self) -> usize {
        self.y.shape()[0]
    }

    pub fn n_tsl(&self) -> usize {
        self.y.shape()[1]
    }
}

/// The measurement operator: mask o Fourier o coil weighting.
#[derive(Debug, Clone)]
pub struct MeasurementOperator {
    pub coils: CoilProfile,
    pub mask: SamplingMask,
}

impl MeasurementOperator {
    pub fn new(coils: CoilProfile, mask: SamplingMask) -> Result<Self> {
        if coils.ny() != mask.mask.shape()[1] || coils.nx() != mask.mask.shape()[2] {
            return Err(Error::shape("coil and mask grids differ"));
        }
        Ok(MeasurementOperator { coils, mask })
    }
}

/// Smooth seeded sensitivity profiles (Gaussian lobes on a ring with
/// coil-dependent linear phase), sum-of-squares normalized at every pixel.
pub fn make_coils(n_coils: usize, ny: usize, nx: usize, seed: Seed) -> Result<CoilProfile> {
    if n_coils == 0 {
        return Err(Error::invalid("need at least one coil"));
    }
    if n_coils == 1 {
        return Ok(CoilProfile {
            sens: Array3::from_elem((1, ny, nx), Complex64::new(1.0, 0.0)),
        });
    }
    let mut rng = seed.rng();
    let mut sens = Array3::<Complex64>::zeros((n_coils, ny, nx));
    for c in 0..n_coils {
        let theta = 2.0 * std::f64::consts::PI * (c as f64 + rng.gen::<f64>() * 0.3) / n_coils as f64;
        let (cyf, cxf) = (0.5 + 0.6 * theta.sin(), 0.5 + 0.6 * theta.cos());
        let sigma = 0.45 + 0.1 * rng.gen::<f64>();
        let phi0 = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
        let (px, py) = (rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0);
        for i in 0..ny {
            let yf = (i as f64 + 0.5) / ny as f64;
            for j in 0..nx {
                let xf = (j as f64 + 0.5) / nx as f64;
                let d2 = (yf - cyf).powi(2) + (xf - cxf).powi(2);
                let amp = (-d2 / (2.0 * sigma * sigma)).exp() + 0.05;
                let phase = phi0 + px * xf + py * yf;
                sens[[c, i, j]] = Complex64::from_polar(amp, phase);
            }
        }
    }
    // force sum-of-squares to 1 at every pixel
    for i in 0..ny {
        for j in 0..nx {
            let sos: f64 = (0..n_coils).map(|c| sens[[c, i, j]].norm_sqr()).sum();
            let scale = 1.0 / sos.sqrt();
            for c in 0..n_coils {
                sens[[c, i, j]] *= scale;
            }
        }
    }
    Ok(CoilProfile { sens })
}

/// y[c][t] = mask[t] * F(sens[c] * img[t])
pub fn forward(op: &MeasurementOperator, img: &ContrastImageSet) -> Result<KSpaceData> {
    let (n_coils, ny, nx) = (op.coils.n_coils(), op.coils.ny(), op.coils.nx());
    let n_tsl = img.n_tsl();
    if img.ny() != ny || img.nx() != nx {
        return Err(Error::shape("image grid does not match operator"));
    }
    if op.mask.n_tsl() != n_tsl {
        return Err(Error::shape("mask contrast count does not match image set"));
    }
    let mut y = Array4::<Complex64>::zeros((n_coils, n_tsl, ny, nx));
    for c in 0..n_coils {
        let s = op.coils.sens.index_axis(Axis(0), c);
        for t in 0..n_tsl {
            let img_t = img.images.index_axis(Axis(0), t);
            let weighted = Array2::from_shape_fn((ny, nx), |(i, j)| s[[i, j]] * img_t[[i, j]]);
            let mut k = fft2c(&weighted);
            let m = op.mask.mask.index_axis(Axis(0), t);
            k.indexed_iter_mut().for_each(|((i, j), v)| {
                if !m[[i, j]] {
                    *v = Complex64::new(0.0, 0.0);
                }
            });
            y.index_axis_mut(Axis(0), c).index_axis_mut(Axis(0), t).assign(&k);
        }
    }
    Ok(KSpaceData { y, mask: op.mask.clone(), noise_std: 0.0 })
}

/// img[t] = sum_c conj(sens[c]) * F^-1(mask[t] * y[c][t])
pub fn adjoint(op: &MeasurementOperator, data: &KSpaceData) -> Result<ContrastImageSet> {
    let (n_coils, ny, nx) = (op.coils.n_coils(), op.coils.ny(), op.coils.nx());
    let n_tsl = data.n_tsl();
    if data.n_coils() != n_coils || op.mask.n_tsl() != n_tsl {
        return Err(Error::shape("k-space data does not match operator"));
    }
    let mut images = Array3::<Complex64>::zeros((n_tsl, ny, nx));
    for c in 0..n_coils {
        let s = op.coils.sens.index_axis(Axis(0), c);
        for t in 0..n_tsl {
            let m = op.mask.mask.index_axis(Axis(0), t);
            let coil_k = data.y.index_axis(Axis(0), c);
            let k = coil_k.index_axis(Axis(0), t);
            let masked = Array2::from_shape_fn((ny, nx), |(i, j)| {
                if m[[i, j]] { k[[i, j]] } else { Complex64::new(0.0, 0.0) }
            });
            let img = ifft2c(&masked);
            let mut acc = images.index_axis_mut(Axis(0), t);
            acc.indexed_iter_mut()
                .for_each(|((i, j), v)| *v += s[[i, j]].conj() * img[[i, j]]);
        }
    }
    // tsl list is carried by callers; the adjoint itself is contrast-agnostic
    ContrastImageSet::new(images, default_tsl(n_tsl))
}

/// Placeholder strictly-increasing grid for operators that do not know the
/// physical spin-lock times.
pub fn default_tsl(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64).collect()
}

/// Coil-sensitivity weighted combination; unbiased because the profiles are
/// sum-of-squares normalized.
pub fn coil_combine(per_coil: &Array3<Complex64>, coils: &CoilProfile) -> Result<ComplexImage> {
    if per_coil.shape() != coils.sens.shape() {
        return Err(Error::shape("per-coil stack does not match sensitivities"));
    }
    let (n_coils, ny, nx) = (coils.n_coils(), coils.ny(), coils.nx());
    let mut out = Array2::<Complex64>::zeros((ny, nx));
    for c in 0..n_coils {
        let s = coils.sens.index_axis(Axis(0), c);
        let p = per_coil.index_axis(Axis(0), c);
        out.indexed_iter_mut()
            .for_each(|((i, j), v)| *v += s[[i, j]].conj() * p[[i, j]]);
    }
    Ok(out)
}

/// Add complex white Gaussian noise at sampled k-space locations.
///
/// `snr_db = f64::INFINITY` leaves the data untouched. The noise standard
/// deviation follows SNR = 20 log10(mean(|m|)/sigma) with the mean taken over
/// the ROI of the noise-free coil-combined image.
pub fn add_noise(
    data: &KSpaceData,
    snr_db: f64,
    roi: &Array2<bool>,
    clean_combined: &ComplexImage,
    seed: Seed,
) -> Result<KSpaceData> {
    if snr_db.is_infinite() {
        return Ok(data.clone());
    }
    let n_roi = roi.iter().filter(|&&v| v).count();
    if n_roi == 0 {
        return Err(Error::invalid("empty ROI"));
    }
    if roi.dim() != clean_combined.dim() {
        return Err(Error::shape("ROI does not match image"));
    }
    let mean: f64 = clean_combined
        .indexed_iter()
        .filter(|((i, j), _)| roi[[*i, *j]])
        .map(|(_, v)| v.norm())
        .sum::<f64>()
        / n_roi as f64;
    let sigma = mean / 10f64.powf(snr_db / 20.0);
    let comp_std = sigma / 2f64.sqrt();

    let mut rng = seed.rng();
    let mut gauss = move || -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };

    let mut out = data.clone();
    let (n_coils, n_tsl) = (data.n_coils(), data.n_tsl());
    for c in 0..n_coils {
        for t in 0..n_tsl {
            let m = data.mask.mask.index_axis(Axis(0), t);
            let mut k = out.y.index_axis_mut(Axis(0), c);
            let mut k = k.index_axis_mut(Axis(0), t);
            k.indexed_iter_mut().for_each(|((i, j), v)| {
                if m[[i, j]] {
                    *v += Complex64::new(comp_std * gauss(), comp_std * gauss());
                }
            });
        }
    }
    out.noise_std = sigma;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::norm3;
    use rand::Rng;

    fn random_set(n_tsl: usize, ny: usize, nx: usize, seed: u64) -> ContrastImageSet {
        let mut rng = Seed::new(seed).rng();
        let images = Array3::from_shape_fn((n_tsl, ny, nx), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        ContrastImageSet::new(images, default_tsl(n_tsl)).unwrap()
    }

    #[test]
    fn single_coil_is_unit() {
        let coils = make_coils(1, 16, 16, Seed::new(0)).unwrap();
        assert!(coils.sens.iter().all(|&v| v == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn sos_normalized() {
        let coils = make_coils(8, 24, 20, Seed::new(4)).unwrap();
        for i in 0..24 {
            for j in 0..20 {
                let sos: f64 = (0..8).map(|c| coils.sens[[c, i, j]].norm_sqr()).sum();
                assert!((sos - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn coils_are_seeded() {
        let a = make_coils(4, 16, 16, Seed::new(5)).unwrap();
        let b = make_coils(4, 16, 16, Seed::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_mask_unit_coil_round_trip_and_parseval() {
        let img = random_set(3, 16, 16, 1);
        let coils = make_coils(1, 16, 16, Seed::new(0)).unwrap();
        let op = MeasurementOperator::new(coils, SamplingMask::full(3, 16, 16)).unwrap();
        let y = forward(&op, &img).unwrap();
        let y_norm = y.y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!((y_norm - norm3(&img.images)).abs() < 1e-12);
        let back = adjoint(&op, &y).unwrap();
        let err = (&back.images - &img.images).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn zero_image_gives_zero_kspace() {
        let img = ContrastImageSet::new(Array3::zeros((2, 8, 8)), vec![0.0, 1.0]).unwrap();
        let coils = make_coils(2, 8, 8, Seed::new(1)).unwrap();
        let op = MeasurementOperator::new(coils, SamplingMask::full(2, 8, 8)).unwrap();
        let y = forward(&op, &img).unwrap();
        assert!(y.y.iter().all(|v| v.norm() == 0.0));
        let back = adjoint(&op, &y).unwrap();
        assert!(back.images.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn adjoint_inner_product_identity() {
        // <Ax, y> == <x, A^T y> computed directly
        let seed = Seed::new(9);
        let coils = make_coils(4, 32, 32, seed.derive(0)).unwrap();
        let mask = make_mask_set(32, 32, 5, 3.0, 0.0625, seed.derive(1)).unwrap();
        let op = MeasurementOperator::new(coils, mask).unwrap();
        let x = random_set(5, 32, 32, 2);
        let mut rng = seed.derive(2).rng();
        let y_arr = Array4::from_shape_fn((4, 5, 32, 32), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let y = KSpaceData { y: y_arr, mask: op.mask.clone(), noise_std: 0.0 };

        let ax = forward(&op, &x).unwrap();
        let aty = adjoint(&op, &y).unwrap();
        let lhs: Complex64 = ax.y.iter().zip(y.y.iter()).map(|(a, b)| a.conj() * b).sum();
        let rhs: Complex64 = x.images.iter().zip(aty.images.iter()).map(|(a, b)| a.conj() * b).sum();
        let scale = ax.y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
            * y.y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!((lhs - rhs).norm() / scale < 1e-10);
    }

    #[test]
    fn forward_is_linear() {
        let coils = make_coils(3, 16, 16, Seed::new(6)).unwrap();
        let mask = make_mask_set(16, 16, 2, 2.0, 0.125, Seed::new(7)).unwrap();
        let op = MeasurementOperator::new(coils, mask).unwrap();
        let x = random_set(2, 16, 16, 3);
        let z = random_set(2, 16, 16, 4);
        let (alpha, beta) = (Complex64::new(1.3, -0.2), Complex64::new(-0.4, 0.9));
        let combo = ContrastImageSet::new(
            Array3::from_shape_fn((2, 16, 16), |ix| alpha * x.images[ix] + beta * z.images[ix]),
            default_tsl(2),
        )
        .unwrap();
        let lhs = forward(&op, &combo).unwrap();
        let fx = forward(&op, &x).unwrap();
        let fz = forward(&op, &z).unwrap();
        let err = lhs
            .y
            .indexed_iter()
            .map(|(ix, v)| (v - (alpha * fx.y[ix.clone()] + beta * fz.y[ix])).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn coil_combine_recovers_image() {
        let coils = make_coils(6, 16, 16, Seed::new(8)).unwrap();
        let mut rng = Seed::new(9).rng();
        let m = Array2::from_shape_fn((16, 16), |_| {
            Complex64::new(rng.gen::<f64>(), rng.gen::<f64>())
        });
        let per_coil = Array3::from_shape_fn((6, 16, 16), |(c, i, j)| {
            coils.sens[[c, i, j]] * m[[i, j]]
        });
        let out = coil_combine(&per_coil, &coils).unwrap();
        let err = (&out - &m).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn noise_sigma_matches_snr_definition() {
        // mean(|m|) = 0.5 over roi, 20 dB -> sigma = 0.05
        let img = random_set(1, 32, 32, 10);
        let coils = make_coils(1, 32, 32, Seed::new(0)).unwrap();
        let op = MeasurementOperator::new(coils, SamplingMask::full(1, 32, 32)).unwrap();
        let y = forward(&op, &img).unwrap();
        let clean = Array2::from_elem((32, 32), Complex64::new(0.5, 0.0));
        let roi = Array2::from_elem((32, 32), true);
        let noisy = add_noise(&y, 20.0, &roi, &clean, Seed::new(1)).unwrap();
        assert!((noisy.noise_std - 0.05).abs() < 1e-12);
    }

    #[test]
    fn infinite_snr_is_identity() {
        let img = random_set(1, 8, 8, 11);
        let coils = make_coils(1, 8, 8, Seed::new(0)).unwrap();
        let op = MeasurementOperator::new(coils, SamplingMask::full(1, 8, 8)).unwrap();
        let y = forward(&op, &img).unwrap();
        let roi = Array2::from_elem((8, 8), true);
        let clean = Array2::from_elem((8, 8), Complex64::new(1.0, 0.0));
        let same = add_noise(&y, f64::INFINITY, &roi, &clean, Seed::new(1)).unwrap();
        assert_eq!(same, y);
    }

    #[test]
    fn noise_is_reproducible_and_empirically_calibrated() {
        let img = random_set(1, 256, 256, 12);
        let coils = make_coils(1, 256, 256, Seed::new(0)).unwrap();
        let op = MeasurementOperator::new(coils, SamplingMask::full(1, 256, 256)).unwrap();
        let y = forward(&op, &img).unwrap();
        let roi = Array2::from_elem((256, 256), true);
        let clean = Array2::from_elem((256, 256), Complex64::new(1.0, 0.0));
        let a = add_noise(&y, 20.0, &roi, &clean, Seed::new(2)).unwrap();
        let b = add_noise(&y, 20.0, &roi, &clean, Seed::new(2)).unwrap();
        assert_eq!(a, b);
        // image-domain noise std equals sigma within 3% (unitary DFT)
        let noise_img = crate::fft::ifft2c(
            &Array2::from_shape_fn((256, 256), |(i, j)| a.y[[0, 0, i, j]] - y.y[[0, 0, i, j]]),
        );
        let var: f64 =
            noise_img.iter().map(|v| v.norm_sqr()).sum::<f64>() / (256.0 * 256.0);
        let sigma = a.noise_std;
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.03, "ratio {}", var.sqrt() / sigma);
    }

    #[test]
    fn empty_roi_rejected() {
        let img = random_set(1, 8, 8, 13);
        let coils = make_coils(1, 8, 8, Seed::new(0)).unwrap();
        let op = MeasurementOperator::new(coils, SamplingMask::full(1, 8, 8)).unwrap();
        let y = forward(&op, &img).unwrap();
        let roi = Array2::from_elem((8, 8), false);
        let clean = Array2::from_elem((8, 8), Complex64::new(1.0, 0.0));
        assert!(add_noise(&y, 20.0, &roi, &clean, Seed::new(1)).is_err());
    }
}
