#!/usr/bin/env python3
"""Smoke tests of the pybind11 module: shapes, fixed points, round trips."""

import sys

import numpy as np

import fgmamba


def check(name, cond, detail=""):
    status = "PASS" if cond else "FAIL"
    print(f"[{status}] {name} {detail}")
    return cond


def main():
    ok = True
    rng = np.random.default_rng(0)

    # sigmoid fixed point
    y = fgmamba.sigmoid(np.array([0.0, 100.0]))
    ok &= check("sigmoid(0) == 0.5", abs(y[0] - 0.5) < 1e-12 and abs(y[1] - 1.0) < 1e-12)

    # conv2d identity kernel
    x = rng.uniform(0, 1, size=(1, 2, 6, 6))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    out = fgmamba.conv2d(x, w, np.zeros(2), padding=1)
    ok &= check("conv2d Dirac kernel is identity", np.allclose(out, x))

    # fft round trip + parseval
    plane = rng.uniform(0, 1, size=(9, 7))
    re, im = fgmamba.fft2(plane)
    back = fgmamba.ifft2(re, im)
    ok &= check("ifft2(fft2(x)) == x", np.max(np.abs(back - plane)) < 1e-9)
    parseval = abs(np.sum(plane**2) - (np.sum(re**2) + np.sum(im**2)) / plane.size)
    ok &= check("parseval identity", parseval < 1e-9)

    # high-frequency extraction of a constant plane returns the constant
    const = np.full((6, 6), 0.3)
    ok &= check("highfreq_extract keeps the DC of a constant plane",
                np.max(np.abs(fgmamba.highfreq_extract(const) - const)) < 1e-9)

    # pixel shuffle definition
    ps = fgmamba.pixel_shuffle(np.arange(4.0).reshape(1, 4, 1, 1), 2)
    ok &= check("pixel_shuffle layout", np.array_equal(ps.reshape(2, 2), [[0, 1], [2, 3]]))

    # psnr formula
    a = np.full((16, 16), 0.5)
    b = np.full((16, 16), 0.4)
    ok &= check("psnr 20 dB at mse 0.01", abs(fgmamba.psnr(a, b, 1.0) - 20.0) < 1e-9)
    ok &= check("ssim of identical planes is 1",
                abs(fgmamba.ssim(a, a, 1.0) - 1.0) < 1e-9)

    # selective scan: zero input -> zero output
    E, N, L = 4, 3, 6
    y = fgmamba.selective_scan(
        np.zeros((L, E)),
        rng.standard_normal((E, E)) * 0.1,
        np.full(E, -2.25),
        rng.standard_normal((N, E)) * 0.1,
        rng.standard_normal((N, E)) * 0.1,
        np.log(np.arange(1, N + 1))[None, :].repeat(E, axis=0),
        np.ones(E),
    )
    ok &= check("selective_scan(0) == 0", np.max(np.abs(y)) == 0.0)

    # model forward shape contract
    x = rng.uniform(0, 1, size=(1, 1, 16, 16))
    out = fgmamba.model_forward(x, seed=3, channels=8, blocks=1, gasm=1, scale=2, state_dim=4)
    ok &= check("model_forward doubles the extents", out.shape == (1, 1, 32, 32))
    ok &= check("model output finite", bool(np.isfinite(out).all()))
    out2 = fgmamba.model_forward(x, seed=3, channels=8, blocks=1, gasm=1, scale=2, state_dim=4)
    ok &= check("model_forward deterministic", np.array_equal(out, out2))

    # bicubic constant preservation
    c = np.full((1, 8, 8), 0.77)
    ok &= check("bicubic downsample preserves constants",
                np.max(np.abs(fgmamba.bicubic_downsample(c, 2) - 0.77)) < 1e-12)

    # parameter budget of the paper preset
    n = fgmamba.preset_param_count("paper")
    ok &= check("paper preset parameter count in band", 700000 <= n <= 750000, f"n={n}")

    print("OK" if ok else "FAILED")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
