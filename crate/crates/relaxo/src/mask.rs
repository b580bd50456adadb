//! Variable-density Poisson-disc undersampling masks.
//!
//! The minimum dart distance grows linearly with distance from the k-space
//! center, `r(k) = r0 * (1 + alpha * |k|/k_max)`; `alpha` is tuned by
//! bisection so the realized acceleration hits the target. A central
//! calibration block is always fully sampled.

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;

use crate::seed::Seed;
use crate::{Error, Result};

const BASE_RADIUS: f64 = 0.6;
const ALPHA_MAX: f64 = 512.0;
/// Bisection stops once the realized acceleration is within this relative
/// distance of the target (the contract allows 5%).
const DENSITY_TOL: f64 = 0.02;

/// Multi-contrast sampling pattern with per-contrast distinct masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    /// `(n_tsl, ny, nx)`
    pub mask: Array3<bool>,
    pub r_target: f64,
    pub calib_frac: f64,
}

impl SamplingMask {
    pub fn full(n_tsl: usize, ny: usize, nx: usize) -> Self {
        SamplingMask {
            mask: Array3::from_elem((n_tsl, ny, nx), true),
            r_target: 1.0,
            calib_frac: 1.0,
        }
    }

    pub fn n_tsl(&self) -> usize {
        self.mask.shape()[0]
    }

    /// Realized acceleration (total points / sampled points) of contrast `i`.
    pub fn realized_acceleration(&self, i: usize) -> f64 {
        let m = self.mask.index_axis(Axis(0), i);
        let sampled = m.iter().filter(|&&v| v).count();
        m.len() as f64 / sampled as f64
    }
}

fn calib_range(n: usize, calib_frac: f64) -> std::ops::Range<usize> {
    if calib_frac <= 0.0 {
        return n / 2..n / 2; // empty
    }
    let len = ((n as f64 * calib_frac).round() as usize).max(1).min(n);
    let start = n / 2 - len / 2;
    start..start + len
}

/// One dart-throwing pass at a fixed density shape parameter.
fn throw_darts(ny: usize, nx: usize, alpha: f64, order: &[usize]) -> Array2<bool> {
    let cy = ny as f64 / 2.0;
    let cx = nx as f64 / 2.0;
    let k_max = (cy * cy + cx * cx).sqrt();
    let radius_at = |i: usize, j: usize| -> f64 {
        let d = (((i as f64 - cy).powi(2) + (j as f64 - cx).powi(2)).sqrt()) / k_max;
        BASE_RADIUS * (1.0 + alpha * d)
    };
    let mut accepted = Array2::from_elem((ny, nx), false);
    for &idx in order {
        let i = idx / nx;
        let j = idx % nx;
        let r = radius_at(i, j);
        let w = r.ceil() as isize;
        let mut ok = true;
        'scan: for di in -w..=w {
            let ii = i as isize + di;
            if ii < 0 || ii >= ny as isize {
                continue;
            }
            for dj in -w..=w {
                let jj = j as isize + dj;
                if jj < 0 || jj >= nx as isize {
                    continue;
                }
                if accepted[[ii as usize, jj as usize]] {
                    let dist2 = (di * di + dj * dj) as f64;
                    if dist2 < r * r && dist2 > 0.0 {
                        ok = false;
                        break 'scan;
                    }
                }
            }
        }
        if ok {
            accepted[[i, j]] = true;
        }
    }
    accepted
}

fn apply_calib(mask: &mut Array2<bool>, calib_frac: f64) {
    let (ny, nx) = mask.dim();
    for i in calib_range(ny, calib_frac) {
        for j in calib_range(nx, calib_frac) {
            mask[[i, j]] = true;
        }
    }
}

fn realized(mask: &Array2<bool>) -> f64 {
    let sampled = mask.iter().filter(|&&v| v).count();
    mask.len() as f64 / sampled as f64
}

/// Generate a single variable-density Poisson-disc mask.
pub fn make_poisson_mask(
    ny: usize,
    nx: usize,
    r_target: f64,
    calib_frac: f64,
    seed: Seed,
) -> Result<Array2<bool>> {
    if r_target < 1.0 {
        return Err(Error::invalid("acceleration target must be >= 1"));
    }
    if !(0.0..1.0).contains(&calib_frac) {
        return Err(Error::invalid("calib_frac must lie in [0, 1)"));
    }
    if r_target == 1.0 {
        return Ok(Array2::from_elem((ny, nx), true));
    }

    let mut order: Vec<usize> = (0..ny * nx).collect();
    order.shuffle(&mut seed.rng());

    let build = |alpha: f64| -> Array2<bool> {
        let mut m = throw_darts(ny, nx, alpha, &order);
        apply_calib(&mut m, calib_frac);
        m
    };

    let (mut lo, mut hi) = (0.0_f64, ALPHA_MAX);
    let top = build(hi);
    if realized(&top) < r_target * (1.0 - DENSITY_TOL) {
        return Err(Error::InfeasibleAcceleration { target: r_target, ny, nx });
    }
    let mut best = top;
    let mut best_err = (realized(&best) / r_target - 1.0).abs();
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let m = build(mid);
        let r = realized(&m);
        let err = (r / r_target - 1.0).abs();
        if err < best_err {
            best = m;
            best_err = err;
        }
        if err <= DENSITY_TOL {
            break;
        }
        if r > r_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if best_err > 0.05 {
        return Err(Error::InfeasibleAcceleration { target: r_target, ny, nx });
    }
    Ok(best)
}

/// Generate per-contrast distinct masks from derived seeds.
pub fn make_mask_set(
    ny: usize,
    nx: usize,
    n_tsl: usize,
    r_target: f64,
    calib_frac: f64,
    seed: Seed,
) -> Result<SamplingMask> {
    if n_tsl == 0 {
        return Err(Error::invalid("need at least one contrast"));
    }
    let mut mask = Array3::from_elem((n_tsl, ny, nx), false);
    for t in 0..n_tsl {
        let m = make_poisson_mask(ny, nx, r_target, calib_frac, seed.derive(t as u64))?;
        mask.index_axis_mut(Axis(0), t).assign(&m);
    }
    if r_target > 1.0 {
        for a in 0..n_tsl {
            for b in a + 1..n_tsl {
                let same = mask
                    .index_axis(Axis(0), a)
                    .iter()
                    .zip(mask.index_axis(Axis(0), b).iter())
                    .all(|(x, y)| x == y);
                if same {
                    return Err(Error::invalid(format!(
                        "contrast masks {a} and {b} are identical"
                    )));
                }
            }
        }
    }
    Ok(SamplingMask { mask, r_target, calib_frac })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_one_is_full() {
        let m = make_poisson_mask(32, 32, 1.0, 0.0625, Seed::new(1)).unwrap();
        assert!(m.iter().all(|&v| v));
    }

    #[test]
    fn density_within_tolerance_128() {
        for (r, lo, hi) in [(4.6, 3384, 3740), (6.8, 2289, 2529)] {
            let m = make_poisson_mask(128, 128, r, 0.0625, Seed::new(7)).unwrap();
            let count = m.iter().filter(|&&v| v).count();
            assert!(
                (lo..=hi).contains(&count),
                "r={r}: count {count} outside [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn calibration_block_fully_sampled() {
        let m = make_poisson_mask(64, 64, 6.8, 0.0625, Seed::new(3)).unwrap();
        for i in calib_range(64, 0.0625) {
            for j in calib_range(64, 0.0625) {
                assert!(m[[i, j]]);
            }
        }
    }

    #[test]
    fn mask_set_pairwise_distinct_and_seeded() {
        let s = make_mask_set(64, 64, 5, 4.6, 0.0625, Seed::new(11)).unwrap();
        assert_eq!(s.n_tsl(), 5);
        for t in 0..5 {
            let r = s.realized_acceleration(t);
            assert!((r / 4.6 - 1.0).abs() <= 0.05, "contrast {t}: realized {r}");
        }
        let again = make_mask_set(64, 64, 5, 4.6, 0.0625, Seed::new(11)).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn single_contrast_set_matches_single_mask() {
        let s = make_mask_set(48, 48, 1, 3.0, 0.0625, Seed::new(2)).unwrap();
        let m = make_poisson_mask(48, 48, 3.0, 0.0625, Seed::new(2).derive(0)).unwrap();
        assert_eq!(s.mask.index_axis(Axis(0), 0).to_owned(), m);
    }

    #[test]
    fn infeasible_target_errors() {
        assert!(matches!(
            make_poisson_mask(16, 16, 1e6, 0.0, Seed::new(1)),
            Err(Error::InfeasibleAcceleration { .. })
        ));
    }

    #[test]
    fn broad_target_sweep() {
        for r in [2.0, 3.0, 4.6, 6.8, 17.0] {
            let m = make_poisson_mask(64, 64, r, 0.0625, Seed::new(5)).unwrap();
            let realized = realized(&m);
            assert!(
                (realized / r - 1.0).abs() <= 0.05,
                "target {r}: realized {realized}"
            );
        }
    }
}
