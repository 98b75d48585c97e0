"""Max-entropy diffeomorphisms on square grids and the relative
sensitivity of a black-box predictor to them (vs. isotropic noise of
matched magnitude)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DisplacementField",
    "ZeroSensitivityError",
    "sample_diffeo",
    "apply_diffeo",
    "displacement_pixels",
    "calibrate_T",
    "relative_sensitivity",
    "read_image",
    "write_image",
]


class ZeroSensitivityError(RuntimeError):
    """The predictor is constant: the sensitivity ratio is undefined."""


@dataclass
class DisplacementField:
    """Random sine-basis displacement (tau_u, tau_v) on a P x P grid.

    Components are i.i.d. with coefficients C_ij ~ N(0, T/(i^2+j^2)) on the
    sine basis, so the fields vanish on the grid boundary by construction.
    """

    P: int
    tau_u: np.ndarray
    tau_v: np.ndarray
    T: float
    cutoff: int


def _sine_table(P: int, cutoff: int) -> np.ndarray:
    u = np.linspace(0.0, 1.0, P)
    i = np.arange(1, cutoff + 1)
    return np.sin(np.pi * np.outer(i, u))  # (cutoff, P)


def sample_diffeo(P: int, T: float, cutoff: int, rng: np.random.Generator) -> DisplacementField:
    """Draw one displacement field; T = 0 gives the exact zero field."""
    if cutoff > P // 2:
        raise ValueError("cutoff must not exceed P/2")
    if cutoff < 1 or P < 2:
        raise ValueError("need cutoff >= 1 and P >= 2")
    i = np.arange(1, cutoff + 1)
    std = np.sqrt(T / (i[:, None] ** 2 + i[None, :] ** 2))
    S = _sine_table(P, cutoff)
    C_u = rng.standard_normal((cutoff, cutoff)) * std
    C_v = rng.standard_normal((cutoff, cutoff)) * std
    tau_u = S.T @ C_u @ S
    tau_v = S.T @ C_v @ S
    return DisplacementField(P=P, tau_u=tau_u, tau_v=tau_v, T=T, cutoff=cutoff)


def displacement_pixels(field: DisplacementField) -> np.ndarray:
    """Per-pixel displacement magnitude |tau(s)| in pixel units."""
    return np.hypot(field.tau_u, field.tau_v) * (field.P - 1)


def apply_diffeo(image: np.ndarray, field: DisplacementField) -> np.ndarray:
    """[tau x](s) = x(s - tau(s)) with bilinear interpolation.

    Out-of-range source positions are clamped to the boundary pixel, and
    constant images are reproduced exactly.
    """
    image = np.asarray(image, dtype=float)
    P = field.P
    if image.shape != (P, P):
        raise ValueError(f"image must be {P}x{P}")
    grid = np.arange(P, dtype=float)
    src_u = grid[:, None] - field.tau_u * (P - 1)
    src_v = grid[None, :] - field.tau_v * (P - 1)
    src_u = np.clip(src_u, 0.0, P - 1.0)
    src_v = np.clip(src_v, 0.0, P - 1.0)
    u0 = np.floor(src_u).astype(int)
    v0 = np.floor(src_v).astype(int)
    u1 = np.minimum(u0 + 1, P - 1)
    v1 = np.minimum(v0 + 1, P - 1)
    fu = src_u - u0
    fv = src_v - v0
    return (
        image[u0, v0] * (1 - fu) * (1 - fv)
        + image[u1, v0] * fu * (1 - fv)
        + image[u0, v1] * (1 - fu) * fv
        + image[u1, v1] * fu * fv
    )


def calibrate_T(
    P: int,
    cutoff: int,
    target_displacement: float,
    rng: np.random.Generator | None = None,
    draws: int = 200,
    tol: float = 0.02,
) -> float:
    """Bisection on T until the Monte Carlo mean pixel displacement matches.

    Displacement magnitude scales exactly like sqrt(T), so common random
    numbers across T evaluations make the bisected function monotone.
    """
    if target_displacement < 0:
        raise ValueError("target displacement must be >= 0")
    if target_displacement == 0.0:
        return 0.0
    rng = rng or np.random.default_rng(0)
    fields = [sample_diffeo(P, 1.0, cutoff, rng) for _ in range(draws)]
    m1 = float(np.mean([np.mean(displacement_pixels(f)) for f in fields]))
    if m1 <= 0:
        raise RuntimeError("bracket failure: zero displacement at T=1")
    lo, hi = 0.0, 1.0
    while math.sqrt(hi) * m1 < target_displacement:
        hi *= 4.0
        if hi > 1e12:
            raise RuntimeError("bracket failure: target displacement unreachable")
    while True:
        mid = 0.5 * (lo + hi)
        value = math.sqrt(mid) * m1
        if abs(value - target_displacement) <= tol * target_displacement:
            return mid
        if value < target_displacement:
            lo = mid
        else:
            hi = mid


def relative_sensitivity(
    f,
    samples: np.ndarray,
    T: float,
    cutoff: int,
    draws: int,
    rng: np.random.Generator,
    return_parts: bool = False,
):
    """Sensitivity to diffeomorphisms over sensitivity to matched noise.

    R_f = E||f(tau x) - f(x)||^2 / E||f(x + eta) - f(x)||^2, with eta
    drawn uniformly on the sphere whose radius matches the root mean
    square deformation magnitude E||tau x - x||^2 (so the two probes share
    the calibrated magnitude by construction). f maps a batch of images
    (m, P, P) to an (m,) or (m, k) array and must be deterministic.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or samples.shape[1] != samples.shape[2]:
        raise ValueError("samples must be (m, P, P)")
    if draws < 1:
        raise ValueError("need draws >= 1")
    m, P, _ = samples.shape

    base = np.atleast_2d(np.asarray(f(samples), dtype=float))
    if base.shape[0] != m:
        base = base.reshape(m, -1)

    num = 0.0
    sq_def = 0.0
    deformed_diffs = []
    for _ in range(draws):
        field = sample_diffeo(P, T, cutoff, rng)
        warped = np.stack([apply_diffeo(img, field) for img in samples])
        out = np.atleast_2d(np.asarray(f(warped), dtype=float)).reshape(m, -1)
        deformed_diffs.append(np.sum((out - base.reshape(m, -1)) ** 2, axis=1))
        sq_def += float(np.mean(np.sum((warped - samples).reshape(m, -1) ** 2, axis=1)))
    numerator = float(np.mean(np.concatenate(deformed_diffs)))
    radius = math.sqrt(sq_def / draws)

    den_terms = []
    flat = samples.reshape(m, -1)
    for _ in range(draws):
        g = rng.standard_normal(flat.shape)
        g *= radius / np.linalg.norm(g, axis=1, keepdims=True)
        noisy = (flat + g).reshape(m, P, P)
        out = np.atleast_2d(np.asarray(f(noisy), dtype=float)).reshape(m, -1)
        den_terms.append(np.sum((out - base.reshape(m, -1)) ** 2, axis=1))
    denominator = float(np.mean(np.concatenate(den_terms)))

    if denominator == 0.0:
        raise ZeroSensitivityError("constant predictor: relative sensitivity undefined")
    if return_parts:
        return numerator / denominator, numerator, denominator, radius
    return numerator / denominator


def write_image(path: str | Path, image: np.ndarray) -> None:
    """CSV grid for .csv paths, else raw little-endian float32 with a
    3-int header (P, P, channels=1)."""
    image = np.asarray(image, dtype=float)
    P = image.shape[0]
    if image.shape != (P, P):
        raise ValueError("image must be square")
    path = Path(path)
    if path.suffix == ".csv":
        path.write_text("\n".join(",".join(repr(v) for v in row) for row in image) + "\n")
        return
    with open(path, "wb") as fh:
        np.array([P, P, 1], dtype="<i4").tofile(fh)
        image.astype("<f4").tofile(fh)


def read_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        rows = [[float(v) for v in line.split(",")] for line in path.read_text().strip().splitlines()]
        return np.array(rows)
    with open(path, "rb") as fh:
        header = np.fromfile(fh, dtype="<i4", count=3)
        P, Q, channels = (int(v) for v in header)
        if channels != 1:
            raise ValueError("only single-channel images supported")
        data = np.fromfile(fh, dtype="<f4", count=P * Q)
    return data.astype(float).reshape(P, Q)
