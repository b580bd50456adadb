#!/usr/bin/env python3
"""End-to-end smoke test of the relaxo_py extension module.

Builds the cdylib with cargo, copies it next to this script under the
import name Python expects, then runs a miniature pipeline: phantom ->
synthesis -> undersampled acquisition -> reconstruction -> analytic
contrast synthesis -> mono-exponential fit, checking the recovered map
against the ground truth.

Usage: python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_extension() -> Path:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "relaxo-py"],
        cwd=ROOT,
        check=True,
    )
    src = ROOT / "target" / "release" / "librelaxo_py.so"
    dst = Path(__file__).resolve().parent / "relaxo_py.so"
    shutil.copyfile(src, dst)
    return dst


def check(name: str, ok: bool, detail: str = "") -> bool:
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
    return ok


def main() -> int:
    build_extension()
    sys.path.insert(0, str(Path(__file__).resolve().parent))
    import relaxo_py as rx

    ny = nx = 48
    seed = 11
    tsl = rx.knee_tsl_ms()
    ok = True

    ok &= check("tsl schedules", tsl == [5.0, 10.0, 20.0, 40.0, 60.0]
                and len(rx.brain_tsl_ms()) == 5)

    t1rho, s0, valid, labels = rx.random_phantom_maps(ny, nx, seed)
    n_valid = sum(valid)
    ok &= check("phantom", 0 < n_valid < ny * nx and len(labels) == ny * nx,
                f"valid={n_valid}/{ny * nx}")

    re, im = rx.synthesize_series(t1rho, s0, valid, ny, nx, tsl)
    mag0 = [math.hypot(a, b) for a, b in zip(re[: ny * nx], im[: ny * nx])]
    ok &= check("synthesis", max(mag0) > 0.5)

    mask, realized = rx.poisson_mask_set(ny, nx, len(tsl), 4.6, 0.0625, seed)
    ok &= check("mask", all(abs(r - 4.6) / 4.6 < 0.05 for r in realized),
                f"realized={['%.2f' % r for r in realized]}")

    # Acquire only the first and last contrasts, reconstruct with ADMM.
    sl = ny * nx
    re2 = re[:sl] + re[4 * sl:]
    im2 = im[:sl] + im[4 * sl:]
    rr, ri = rx.acquire_and_reconstruct(
        re2, im2, 2, ny, nx, [tsl[0], tsl[-1]], 2, 4.6, seed,
        mode="admm", snr_db=30.0)
    rec_err = rx.nrmse([math.hypot(a, b) for a, b in zip(rr[:sl], ri[:sl])],
                       mag0, ny, nx)
    ok &= check("reconstruction", rec_err < 0.15, f"nrmse={rec_err:.4f}")

    # Fill in the middle contrasts analytically from the two recon magnitudes.
    m_a = [math.hypot(a, b) for a, b in zip(rr[:sl], ri[:sl])]
    m_b = [math.hypot(a, b) for a, b in zip(rr[sl:], ri[sl:])]
    full, _ = rx.analytic_series(m_a, m_b, ny, nx, tsl[0], tsl[-1], tsl)
    ok &= check("generation", len(full) == 5 * sl)

    fre = full
    fim = [0.0] * len(full)
    fit_t, fit_s0, fit_valid = rx.fit_t1rho_map(fre, fim, 5, ny, nx, tsl)
    joint = [i for i in range(sl) if valid[i] and fit_valid[i]]
    roi = [1 if (valid[i] and fit_valid[i]) else 0 for i in range(sl)]
    t_err = rx.nrmse(fit_t, t1rho, ny, nx, roi=roi)
    ok &= check("fit", len(joint) > 0 and t_err < 0.2,
                f"t1rho nrmse={t_err:.4f} over {len(joint)} px")

    print("smoke test:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
