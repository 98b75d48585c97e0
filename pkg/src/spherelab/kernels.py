"""Lazy-regime machinery: closed-form NTK/RFK on the sphere, Gram assembly,
ridgeless interpolation and predictor evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .harmonics import Spectrum
from .targets import SphereSample, cholesky_with_jitter

__all__ = [
    "KernelModel",
    "IllConditionedError",
    "ntk_eval",
    "rfk_eval",
    "spectrum_kernel",
    "resolve_kernel",
    "gram",
    "fit_ridgeless",
    "predict",
]

CLAMP_TOL = 1e-12


class IllConditionedError(RuntimeError):
    """Ridgeless solve failed the interpolation-residual bound."""


def _clamp(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + CLAMP_TOL):
        raise ValueError("kernel argument outside [-1, 1] beyond clamp tolerance")
    return np.clip(t, -1.0, 1.0)


def ntk_eval(t):
    """NTK of a one-hidden-layer ReLU network with Gaussian initialization:
    (2*(pi - arccos t)*t + sqrt(1-t^2)) / (2*pi)."""
    t = _clamp(t)
    return (2.0 * (np.pi - np.arccos(t)) * t + np.sqrt(1.0 - t * t)) / (2.0 * np.pi)


def rfk_eval(t):
    """Random-feature kernel (training the output layer only):
    ((pi - arccos t)*t + sqrt(1-t^2)) / (2*pi)."""
    t = _clamp(t)
    return ((np.pi - np.arccos(t)) * t + np.sqrt(1.0 - t * t)) / (2.0 * np.pi)


def spectrum_kernel(spectrum: Spectrum) -> Callable:
    """Dot-product kernel sum_k N_{k,d} phi_k P_{k,d}(t) from a filter spectrum."""

    def k(t):
        return spectrum.reconstruct(_clamp(t))

    k.__name__ = f"spectrum_d{spectrum.d}_kmax{spectrum.k_max}"
    return k


_NAMED = {"ntk": ntk_eval, "rfk": rfk_eval}


def resolve_kernel(kernel) -> tuple[str, Callable]:
    if callable(kernel):
        return getattr(kernel, "__name__", "custom"), kernel
    name = str(kernel).lower()
    if name not in _NAMED:
        raise ValueError(f"unknown kernel {kernel!r}")
    return name, _NAMED[name]


def gram(points, kernel) -> np.ndarray:
    """K_ij = kernel(x_i . x_j) for unit rows x_i."""
    pts = points.points if isinstance(points, SphereSample) else np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 1:
        raise ValueError("need at least one point")
    _, k = resolve_kernel(kernel)
    G = k(np.clip(pts @ pts.T, -1.0, 1.0).ravel()).reshape(len(pts), len(pts))
    return 0.5 * (G + G.T)


@dataclass
class KernelModel:
    """Fitted ridgeless kernel interpolant with dual weights g_i."""

    kernel: str
    d: int
    train: SphereSample
    dual_weights: np.ndarray
    jitter: float = 0.0

    def __post_init__(self):
        self.dual_weights = np.asarray(self.dual_weights, dtype=float)
        if len(self.dual_weights) != len(self.train):
            raise ValueError("one dual weight per training point")

    def predict(self, x) -> np.ndarray | float:
        return predict(self, x)

    def save(self, path: str | Path, points_file: str, seed=None) -> None:
        payload = {
            "kernel": self.kernel,
            "d": self.d,
            "seed": seed,
            "points-file": points_file,
            "dual_weights": self.dual_weights.tolist(),
        }
        Path(path).write_text(json.dumps(payload, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "KernelModel":
        payload = json.loads(Path(path).read_text())
        sample, _ = SphereSample.load(Path(path).parent / payload["points-file"])
        return cls(
            kernel=payload["kernel"],
            d=payload["d"],
            train=sample,
            dual_weights=np.array(payload["dual_weights"]),
        )


def fit_ridgeless(train: SphereSample, kernel) -> KernelModel:
    """Solve K g = y with the smallest diagonal jitter that factorizes.

    The ridgeless limit is approached from above: jitter starts at
    1e-12*K(1) and escalates tenfold up to 1e-6*K(1). The fitted model is
    checked against the interpolation bound max|K g - y| <= 1e-8 max|y|.
    """
    if train.values is None:
        raise ValueError("training sample carries no target values")
    name, k = resolve_kernel(kernel)
    K = gram(train, k)
    scale = float(k(np.array([1.0]))[0])
    L, jitter = cholesky_with_jitter(K, scale)
    y = train.values
    g = np.linalg.solve(L.T, np.linalg.solve(L, y))
    tol = 1e-8 * max(np.max(np.abs(y)), 1e-300)
    resid = y - K @ g
    for _ in range(5):  # iterative refinement against ill-conditioning
        if np.max(np.abs(resid)) <= tol:
            break
        g = g + np.linalg.solve(L.T, np.linalg.solve(L, resid))
        resid = y - K @ g
    if np.max(np.abs(resid)) > tol:
        raise IllConditionedError(
            f"interpolation residual {np.max(np.abs(resid)):.3g} exceeds {tol:.3g} at jitter {jitter:.3g}"
        )
    return KernelModel(kernel=name, d=train.d, train=train, dual_weights=g, jitter=jitter)


def predict(model: KernelModel, x) -> np.ndarray | float:
    """f(x) = sum_i g_i kernel(x_i . x); accepts one vector or a batch."""
    _, k = resolve_kernel(model.kernel)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("query points must lie on the unit sphere within 1e-9")
    T = np.clip(X @ model.train.points.T, -1.0, 1.0)
    vals = k(T.ravel()).reshape(T.shape) @ model.dual_weights
    return float(vals[0]) if single else vals
