//! Elliptical software phantoms and the mono-exponential signal model.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::Seed;
use crate::types::{validate_tsl, ContrastImageSet, ParamMap};
use crate::{Error, Result};

/// One elliptical region with homogeneous relaxation parameters.
///
/// Center and semi-axes are fractional grid coordinates in `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipseRegion {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle_deg: f64,
    pub s0: f64,
    pub t1rho_ms: f64,
}

impl EllipseRegion {
    /// Containment test at a fractional coordinate (pixel-center convention).
    pub fn contains(&self, xf: f64, yf: f64) -> bool {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let dx = xf - self.cx;
        let dy = yf - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }

    fn validate(&self) -> Result<()> {
        if self.s0 <= 0.0 {
            return Err(Error::invalid("region s0 must be > 0"));
        }
        if !(1.0..=1000.0).contains(&self.t1rho_ms) {
            return Err(Error::invalid("region t1rho_ms must lie in [1, 1000] ms"));
        }
        if self.rx <= 0.0 || self.ry <= 0.0 {
            return Err(Error::invalid("region semi-axes must be > 0"));
        }
        Ok(())
    }
}

/// Ordered region list; later regions overwrite earlier ones on overlap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub ny: usize,
    pub nx: usize,
    pub regions: Vec<EllipseRegion>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ny < 8 || self.nx < 8 {
            return Err(Error::invalid("grid must be at least 8x8"));
        }
        if self.regions.is_empty() {
            return Err(Error::invalid("phantom needs at least one region"));
        }
        for r in &self.regions {
            r.validate()?;
        }
        Ok(())
    }
}

/// Rasterize at pixel centers. Returns the ground-truth map and a label image
/// (0 = background, i = 1-based region index of the last region covering the
/// pixel).
pub fn rasterize(spec: &PhantomSpec) -> Result<(ParamMap, Array2<u32>)> {
    spec.validate()?;
    let mut map = ParamMap::zeros(spec.ny, spec.nx);
    let mut labels = Array2::<u32>::zeros((spec.ny, spec.nx));
    for i in 0..spec.ny {
        let yf = (i as f64 + 0.5) / spec.ny as f64;
        for j in 0..spec.nx {
            let xf = (j as f64 + 0.5) / spec.nx as f64;
            for (ri, region) in spec.regions.iter().enumerate().rev() {
                if region.contains(xf, yf) {
                    map.s0[[i, j]] = region.s0;
                    map.t1rho_ms[[i, j]] = region.t1rho_ms;
                    map.valid_mask[[i, j]] = true;
                    labels[[i, j]] = ri as u32 + 1;
                    break;
                }
            }
        }
    }
    Ok((map, labels))
}

/// How synthesized images get their phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    Zero,
    SmoothQuadratic,
}

/// Evaluate S(t) = S0 exp(-t / T1rho) per pixel for each spin-lock time.
pub fn synthesize(
    truth: &ParamMap,
    tsl_ms: &[f64],
    phase_mode: PhaseMode,
) -> Result<ContrastImageSet> {
    validate_tsl(tsl_ms)?;
    let (ny, nx) = (truth.ny(), truth.nx());
    let mut images = Array3::<Complex64>::zeros((tsl_ms.len(), ny, nx));
    for (ti, &t) in tsl_ms.iter().enumerate() {
        for i in 0..ny {
            for j in 0..nx {
                if truth.valid_mask[[i, j]] {
                    let mag = truth.s0[[i, j]] * (-t / truth.t1rho_ms[[i, j]]).exp();
                    let phase = match phase_mode {
                        PhaseMode::Zero => Complex64::new(1.0, 0.0),
                        PhaseMode::SmoothQuadratic => {
                            let xf = (j as f64 + 0.5) / nx as f64 - 0.5;
                            let yf = (i as f64 + 0.5) / ny as f64 - 0.5;
                            let ph = 2.0 * xf * xf - 1.5 * yf * yf + 1.0 * xf * yf;
                            Complex64::from_polar(1.0, ph)
                        }
                    };
                    images[[ti, i, j]] = phase * mag;
                }
            }
        }
    }
    ContrastImageSet::new(images, tsl_ms.to_vec())
}

/// Knee TSL grid from the simulated protocol, in ms.
pub const KNEE_TSL_MS: [f64; 5] = [5.0, 10.0, 20.0, 40.0, 60.0];
/// Brain TSL grid, in ms.
pub const BRAIN_TSL_MS: [f64; 5] = [1.0, 15.0, 25.0, 45.0, 65.0];

/// Cartilage-band-like preset: a body ellipse plus 40-60 ms bands.
pub fn knee_like(ny: usize, nx: usize) -> PhantomSpec {
    PhantomSpec {
        ny,
        nx,
        regions: vec![
            EllipseRegion { cx: 0.5, cy: 0.5, rx: 0.42, ry: 0.40, angle_deg: 0.0, s0: 0.8, t1rho_ms: 80.0 },
            EllipseRegion { cx: 0.38, cy: 0.42, rx: 0.16, ry: 0.10, angle_deg: 20.0, s0: 1.0, t1rho_ms: 40.0 },
            EllipseRegion { cx: 0.62, cy: 0.44, rx: 0.14, ry: 0.09, angle_deg: -15.0, s0: 1.0, t1rho_ms: 50.0 },
            EllipseRegion { cx: 0.50, cy: 0.66, rx: 0.20, ry: 0.08, angle_deg: 0.0, s0: 0.9, t1rho_ms: 60.0 },
            EllipseRegion { cx: 0.50, cy: 0.30, rx: 0.07, ry: 0.06, angle_deg: 0.0, s0: 0.7, t1rho_ms: 45.0 },
        ],
    }
}

/// White/gray/CSF-like preset (60/80/150 ms).
pub fn brain_like(ny: usize, nx: usize) -> PhantomSpec {
    PhantomSpec {
        ny,
        nx,
        regions: vec![
            EllipseRegion { cx: 0.5, cy: 0.5, rx: 0.40, ry: 0.44, angle_deg: 0.0, s0: 0.9, t1rho_ms: 60.0 },
            EllipseRegion { cx: 0.5, cy: 0.5, rx: 0.30, ry: 0.34, angle_deg: 0.0, s0: 1.0, t1rho_ms: 80.0 },
            EllipseRegion { cx: 0.42, cy: 0.48, rx: 0.06, ry: 0.12, angle_deg: 10.0, s0: 0.8, t1rho_ms: 150.0 },
            EllipseRegion { cx: 0.58, cy: 0.48, rx: 0.06, ry: 0.12, angle_deg: -10.0, s0: 0.8, t1rho_ms: 150.0 },
        ],
    }
}

/// Seeded random phantom for training-set construction: one body ellipse and
/// 2-6 interior structures with T1rho in [20, 160] ms.
pub fn random_phantom(ny: usize, nx: usize, seed: Seed) -> PhantomSpec {
    let mut rng = seed.rng();
    let mut regions = vec![EllipseRegion {
        cx: 0.5 + rng.gen_range(-0.05..0.05),
        cy: 0.5 + rng.gen_range(-0.05..0.05),
        rx: rng.gen_range(0.32..0.42),
        ry: rng.gen_range(0.32..0.42),
        angle_deg: rng.gen_range(0.0..180.0),
        s0: rng.gen_range(0.6..1.0),
        t1rho_ms: rng.gen_range(50.0..100.0),
    }];
    let n_inner = rng.gen_range(2..=6);
    for _ in 0..n_inner {
        regions.push(EllipseRegion {
            cx: rng.gen_range(0.3..0.7),
            cy: rng.gen_range(0.3..0.7),
            rx: rng.gen_range(0.05..0.18),
            ry: rng.gen_range(0.05..0.18),
            angle_deg: rng.gen_range(0.0..180.0),
            s0: rng.gen_range(0.5..1.2),
            t1rho_ms: rng.gen_range(20.0..160.0),
        });
    }
    PhantomSpec { ny, nx, regions }
}
