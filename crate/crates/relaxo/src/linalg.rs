//! Small dense Hermitian eigendecomposition (cyclic Jacobi) and the
//! singular-value thresholding it backs. The Casorati matrices here are tall
//! and very thin (pixels x contrasts), so the T x T Gram matrix route is both
//! exact and cheap.

use ndarray::Array2;
use num_complex::Complex64;

/// Eigendecomposition of a Hermitian matrix: returns (eigenvalues, V) with
/// columns of V the orthonormal eigenvectors, eigenvalues descending.
pub fn hermitian_eig(a: &Array2<Complex64>) -> (Vec<f64>, Array2<Complex64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut m = a.clone();
    let mut v = Array2::<Complex64>::eye(n);
    let scale: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().max(1e-300);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| m[[p, q]].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off < 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let g = m[[p, q]];
                if g.norm() < 1e-300 {
                    continue;
                }
                let alpha = m[[p, p]].re;
                let beta = m[[q, q]].re;
                let phi = g.arg();
                let theta = 0.5 * (2.0 * g.norm()).atan2(alpha - beta);
                let c = theta.cos();
                let s = theta.sin();
                let e_pos = Complex64::from_polar(1.0, phi);
                // unitary U: U[p][p]=c, U[q][p]=s*e^{-i phi}, U[p][q]=-s*e^{i phi}, U[q][q]=c
                let upp = Complex64::new(c, 0.0);
                let uqp = Complex64::from_polar(s, -phi);
                let upq = -s * e_pos;
                let uqq = Complex64::new(c, 0.0);
                // m <- U^H m U : columns first, then rows
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = mkp * upp + mkq * uqp;
                    m[[k, q]] = mkp * upq + mkq * uqq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = upp.conj() * mpk + uqp.conj() * mqk;
                    m[[q, k]] = upq.conj() * mpk + uqq.conj() * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * upp + vkq * uqp;
                    v[[k, q]] = vkp * upq + vkq * uqq;
                }
            }
        }
    }

    let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (m[[i, i]].re, i)).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let eigvals: Vec<f64> = pairs.iter().map(|&(l, _)| l).collect();
    let mut vs = Array2::<Complex64>::zeros((n, n));
    for (new_col, &(_, old_col)) in pairs.iter().enumerate() {
        for k in 0..n {
            vs[[k, new_col]] = v[[k, old_col]];
        }
    }
    (eigvals, vs)
}

/// Singular values of a tall matrix `(rows x cols, rows >= cols)` via the
/// Gram matrix, descending.
pub fn singular_values(m: &Array2<Complex64>) -> Vec<f64> {
    let (vals, _) = hermitian_eig(&gram(m));
    vals.iter().map(|&l| l.max(0.0).sqrt()).collect()
}

fn gram(m: &Array2<Complex64>) -> Array2<Complex64> {
    let t = m.ncols();
    let mut g = Array2::<Complex64>::zeros((t, t));
    for a in 0..t {
        for b in 0..t {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..m.nrows() {
                acc += m[[r, a]].conj() * m[[r, b]];
            }
            g[[a, b]] = acc;
        }
    }
    g
}

/// Soft-threshold the singular values of a tall matrix: returns
/// `U soft(S) V^H` computed as `M V diag(f) V^H` with `f_k = soft(s_k)/s_k`.
pub fn svt(m: &Array2<Complex64>, thresh: f64) -> Array2<Complex64> {
    let t = m.ncols();
    let (vals, v) = hermitian_eig(&gram(m));
    let mut w = Array2::<Complex64>::zeros((t, t));
    for k in 0..t {
        let s = vals[k].max(0.0).sqrt();
        let f = if s > thresh { (s - thresh) / s } else { 0.0 };
        if f == 0.0 {
            continue;
        }
        for a in 0..t {
            for b in 0..t {
                w[[a, b]] += v[[a, k]] * v[[b, k]].conj() * f;
            }
        }
    }
    let mut out = Array2::<Complex64>::zeros(m.dim());
    for r in 0..m.nrows() {
        for b in 0..t {
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..t {
                acc += m[[r, a]] * w[[a, b]];
            }
            out[[r, b]] = acc;
        }
    }
    out
}

/// Nuclear norm (sum of singular values) of a tall matrix.
pub fn nuclear_norm(m: &Array2<Complex64>) -> f64 {
    singular_values(m).iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_hermitian(n: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = crate::seed::Seed::new(seed).rng();
        let raw = Array2::from_shape_fn((n, n), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let mut h = Array2::<Complex64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                h[[i, j]] = (raw[[i, j]] + raw[[j, i]].conj()) * 0.5;
            }
        }
        h
    }

    #[test]
    fn eig_reconstructs_matrix() {
        for n in [2, 3, 5] {
            let h = random_hermitian(n, n as u64);
            let (vals, v) = hermitian_eig(&h);
            // V diag(vals) V^H == h
            let mut rec = Array2::<Complex64>::zeros((n, n));
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        rec[[i, j]] += v[[i, k]] * v[[j, k]].conj() * vals[k];
                    }
                }
            }
            let err = (&rec - &h).iter().map(|x| x.norm()).fold(0.0, f64::max);
            assert!(err < 1e-11, "n={n}: reconstruction error {err}");
            // orthonormal columns
            for a in 0..n {
                for b in 0..n {
                    let dot: Complex64 =
                        (0..n).map(|k| v[[k, a]].conj() * v[[k, b]]).sum();
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - expect).norm() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn diagonal_matrix_eigenvalues() {
        let mut h = Array2::<Complex64>::zeros((3, 3));
        h[[0, 0]] = Complex64::new(2.0, 0.0);
        h[[1, 1]] = Complex64::new(-1.0, 0.0);
        h[[2, 2]] = Complex64::new(5.0, 0.0);
        let (vals, _) = hermitian_eig(&h);
        assert_eq!(vals, vec![5.0, 2.0, -1.0]);
    }

    #[test]
    fn singular_values_of_known_matrix() {
        // rank-1 tall matrix: u * v^H with |u|=2, |v|=3 -> single sv = 6
        let u: Vec<f64> = vec![2.0, 0.0, 0.0, 0.0];
        let v: Vec<f64> = vec![3.0, 0.0];
        let m = Array2::from_shape_fn((4, 2), |(i, j)| {
            Complex64::new(u[i] * v[j], 0.0)
        });
        let sv = singular_values(&m);
        assert!((sv[0] - 6.0).abs() < 1e-10);
        assert!(sv[1].abs() < 1e-10);
    }

    #[test]
    fn svt_shrinks_singular_values() {
        let mut rng = crate::seed::Seed::new(17).rng();
        let m = Array2::from_shape_fn((40, 4), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let sv = singular_values(&m);
        let t = sv[1]; // kill all but the largest
        let thr = svt(&m, t);
        let sv_thr = singular_values(&thr);
        assert!((sv_thr[0] - (sv[0] - t)).abs() < 1e-9);
        // killed directions only vanish to the square root of the
        // eigensolver's residual, so allow a scale-relative slack
        for k in 1..4 {
            assert!(sv_thr[k] < 1e-7 * sv[0], "sv_thr[{k}] = {}", sv_thr[k]);
        }
    }

    #[test]
    fn svt_zero_threshold_is_identity() {
        let mut rng = crate::seed::Seed::new(18).rng();
        let m = Array2::from_shape_fn((20, 3), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let out = svt(&m, 0.0);
        let err = (&out - &m).iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }
}
