"""Targets for the regression task: uniform sphere samples and isotropic
Gaussian random fields of prescribed smoothness, plus the constant target.

Random fields are drawn jointly over a finite point set from the dense
covariance matrix (Cholesky with escalating diagonal jitter); no explicit
spherical-harmonic basis functions are ever evaluated.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .harmonics import FILTER, TARGET, Spectrum, _legendre_pairs, multiplicity

__all__ = [
    "SphereSample",
    "TargetSpec",
    "CovarianceFunction",
    "TruncationWarning",
    "FactorizationError",
    "sample_uniform_sphere",
    "target_spectrum",
    "target_covariance",
    "sample_grf",
    "constant_target",
    "cholesky_with_jitter",
]

MAX_JOINT_POINTS = 5000


class TruncationWarning(UserWarning):
    """Spectrum tail mass beyond k_max is not negligible."""


class FactorizationError(RuntimeError):
    """Cholesky failed even at the maximum allowed jitter."""


@dataclass
class SphereSample:
    """Points on the unit sphere in R^d with optional target values."""

    d: int
    points: np.ndarray
    values: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != self.d:
            raise ValueError(f"points must be (n, {self.d})")
        norms = np.linalg.norm(self.points, axis=1)
        if self.points.shape[0] and np.max(np.abs(norms - 1.0)) > 1e-12:
            raise ValueError("points must have unit norm within 1e-12")
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=float)
            if len(self.values) != len(self.points):
                raise ValueError("values length must match points")

    def __len__(self) -> int:
        return len(self.points)

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        """One row per point, columns x1..xd,value; JSON sidecar for metadata."""
        path = Path(path)
        header = ",".join(f"x{i+1}" for i in range(self.d)) + ",value"
        rows = [header]
        vals = self.values if self.values is not None else np.full(len(self), np.nan)
        for p, v in zip(self.points, vals):
            rows.append(",".join(repr(c) for c in p) + f",{v!r}")
        path.write_text("\n".join(rows) + "\n")
        path.with_suffix(".json").write_text(json.dumps(meta or {}, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> tuple["SphereSample", dict]:
        path = Path(path)
        lines = path.read_text().strip().splitlines()
        d = len(lines[0].split(",")) - 1
        data = np.array([[float(c) for c in line.split(",")] for line in lines[1:]])
        values = None if np.all(np.isnan(data[:, d])) else data[:, d]
        meta = {}
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            meta = json.loads(sidecar.read_text())
        return cls(d=d, points=data[:, :d], values=values), meta


@dataclass(frozen=True)
class TargetSpec:
    """What to regress: constant, power-law spectrum GRF, or activation GRF.

    nu_t controls smoothness: the spectrum kind uses c_k ~ k^(-2*nu_t-(d-1))
    on even degrees; the activation kind defines the covariance through
    sigma(z) = |z|^(nu_t - 1/2) features.
    """

    kind: str
    d: int
    nu_t: float = math.inf
    k_max: int = 512
    include_c1: bool = True

    def __post_init__(self):
        if self.kind not in ("constant", "grf-spectrum", "grf-activation"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if not self.nu_t > 0:
            raise ValueError("nu_t must be positive")

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "nu_t": self.nu_t if math.isfinite(self.nu_t) else "inf",
            "k_max": self.k_max,
            "include_c1": self.include_c1,
        }


def sample_uniform_sphere(n: int, d: int, rng: np.random.Generator) -> SphereSample:
    """n i.i.d. uniform points on the sphere (normalized Gaussian vectors)."""
    if n < 1 or d < 2:
        raise ValueError("need n >= 1 and d >= 2")
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return SphereSample(d=d, points=g)


def target_spectrum(spec: TargetSpec) -> Spectrum:
    """Variance per degree for the spec, normalized so that C(1) = 1.

    c_0 = c_1 = Z and c_k = Z * k^(-2*nu_t-(d-1)) on even k >= 2 (odd
    degrees above 1 carry no variance so that ReLU networks without biases
    can represent the target).
    """
    if spec.kind == "constant":
        vals = np.zeros(2)
        vals[0] = 1.0
        return Spectrum(d=spec.d, kind=TARGET, values=vals)
    if spec.kind != "grf-spectrum":
        raise ValueError("spectra are defined for constant and grf-spectrum kinds")
    ks = np.arange(spec.k_max + 1)
    vals = np.zeros(spec.k_max + 1)
    vals[0] = 1.0
    if spec.include_c1:
        vals[1] = 1.0
    even = ks[(ks >= 2) & (ks % 2 == 0)]
    vals[even] = even ** (-2.0 * spec.nu_t - (spec.d - 1))
    mults = np.array([multiplicity(k, spec.d) for k in ks], dtype=float)
    vals /= np.sum(mults * vals)
    return Spectrum(d=spec.d, kind=TARGET, values=vals)


class CovarianceFunction:
    """C(t) = sum_k N_{k,d} c_k P_{k,d}(t), callable on [-1, 1].

    For spectrum-based targets the (band-limited, degree k_max) polynomial
    is tabulated once on a dense colatitude grid and evaluated through a
    cubic spline; `exact=True` forces the Gegenbauer recurrence instead
    (used as the accuracy oracle in tests). Activation-based covariances
    are evaluated by 2-D Gauss-Hermite quadrature over the correlated
    Gaussian pair (theta.x, theta.y).
    """

    def __init__(self, spec: TargetSpec, grid: int = 65536, angular_nodes: int = 64):
        self.spec = spec
        self.tail_mass = 0.0
        if spec.kind == "grf-activation":
            self._mode = "activation"
            from scipy.special import roots_jacobi

            p = spec.nu_t - 0.5
            self._p = p
            self._jacobi = roots_jacobi(angular_nodes, p, p) if p > 0 else roots_jacobi(angular_nodes, 0, 0)
            # radial moment of the polar reduction and the t = +/-1 value
            self._pref = 2.0**p * math.gamma(p + 1.0) / (2.0 * math.pi)
            self.c1 = 2.0**p * math.gamma(p + 0.5) / math.sqrt(math.pi)
        else:
            self._mode = "spectrum"
            self.spectrum = target_spectrum(spec)
            if spec.kind == "grf-spectrum":
                self.tail_mass = self.spectrum.tail_bound()
            theta = np.linspace(0.0, np.pi, grid)
            table = self._exact(np.cos(theta))
            self._spline = CubicSpline(theta, table)
            self.c1 = float(table[0])
            if self.tail_mass > 1e-6 * self.c1:
                warnings.warn(
                    f"spectrum tail mass {self.tail_mass:.3g} exceeds 1e-6*C(1); "
                    f"the field is effectively band-limited at k_max={spec.k_max}",
                    TruncationWarning,
                    stacklevel=2,
                )

    def _exact(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        masses = self.spectrum.level_masses()
        acc = np.zeros_like(t)
        for k, p in _legendre_pairs(self.spec.d, t):
            if k > self.spectrum.k_max:
                break
            if masses[k]:
                acc += masses[k] * p
        return acc

    def _activation(self, t: np.ndarray) -> np.ndarray:
        """E[|a|^p |b|^p] over the correlated unit Gaussian pair.

        In polar coordinates the radial moment is closed form and the
        angular factor int |cos(psi)|^p |cos(psi - gamma)|^p dpsi (period
        pi, gamma = arccos t) has pure (distance)^p zeros at the panel
        ends, absorbed exactly by a Gauss-Jacobi(p, p) rule.
        """
        p = self._p
        if p == 0.0:
            return np.ones_like(t)
        x, wj = self._jacobi
        gamma = np.arccos(np.clip(t, -1.0, 1.0))
        out = np.empty_like(t)
        for i, g in enumerate(t.ravel()):
            gam = float(gamma.ravel()[i])
            if gam < 1e-12 or np.pi - gam < 1e-12:
                out.ravel()[i] = self.c1
                continue
            total = 0.0
            for z1, z2 in ((np.pi / 2, np.pi / 2 + gam), (np.pi / 2 + gam, 3 * np.pi / 2)):
                half = 0.5 * (z2 - z1)
                psi = z1 + half * (x + 1.0)
                core = np.abs(np.cos(psi) * np.cos(psi - gam)) / ((psi - z1) * (z2 - psi))
                total += half ** (1.0 + 2.0 * p) * np.sum(wj * core**p)
            out.ravel()[i] = 2.0 * self._pref * total
        return out

    def __call__(self, t, exact: bool = False) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(np.abs(t) > 1.0 + 1e-12):
            raise ValueError("covariance argument outside [-1, 1]")
        t = np.clip(t, -1.0, 1.0)
        if self._mode == "activation":
            return self._activation(t)
        if exact:
            return self._exact(t)
        return self._spline(np.arccos(t))


def target_covariance(spec: TargetSpec, **kwargs) -> CovarianceFunction:
    return CovarianceFunction(spec, **kwargs)


def cholesky_with_jitter(K: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Cholesky factor of K + jitter*I, escalating jitter from 1e-12*scale
    by factors of 10 up to 1e-6*scale."""
    jitter = 1e-12 * scale
    last_err: Exception | None = None
    while jitter <= 1e-6 * scale * (1 + 1e-9):
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(len(K)))
            return L, jitter
        except np.linalg.LinAlgError as err:
            last_err = err
            jitter *= 10.0
    raise FactorizationError(f"jitter escalation exhausted at {jitter:.3g}") from last_err


def sample_grf(
    points: SphereSample,
    spec: TargetSpec,
    rng: np.random.Generator,
    cov: CovarianceFunction | None = None,
) -> np.ndarray:
    """Joint Gaussian draw of the target at the given points.

    Dense factorization: the full covariance matrix is assembled and
    factorized, which caps the point count but keeps the draw exact for
    any dimension.
    """
    if spec.kind == "constant":
        return constant_target(points)
    n = len(points)
    if n > MAX_JOINT_POINTS:
        raise ValueError(f"joint sampling limited to {MAX_JOINT_POINTS} points, got {n}")
    cov = cov or target_covariance(spec)
    gram = points.points @ points.points.T
    K = cov(np.clip(gram, -1.0, 1.0).ravel()).reshape(n, n)
    K = 0.5 * (K + K.T)
    L, _ = cholesky_with_jitter(K, cov.c1)
    return L @ rng.standard_normal(n)


def sample_grf_conditional(
    train: SphereSample,
    train_values: np.ndarray,
    test: SphereSample,
    spec: TargetSpec,
    rng: np.random.Generator,
    cov: CovarianceFunction | None = None,
    block: int = 2000,
) -> np.ndarray:
    """Draw test values conditioned on already-drawn training values.

    Blocks are sampled independently given the training draw, so every
    (train, single test point) marginal is exact while cross-block test
    correlations are not reproduced; pointwise error statistics are
    unaffected. Used when train+test exceeds the dense joint budget.
    """
    cov = cov or target_covariance(spec)
    n = len(train)
    K_tt = cov(np.clip(train.points @ train.points.T, -1, 1).ravel()).reshape(n, n)
    L, jit = cholesky_with_jitter(0.5 * (K_tt + K_tt.T), cov.c1)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, train_values))
    out = np.empty(len(test))
    for start in range(0, len(test), block):
        pts = test.points[start : start + block]
        m = len(pts)
        K_st = cov(np.clip(pts @ train.points.T, -1, 1).ravel()).reshape(m, n)
        K_ss = cov(np.clip(pts @ pts.T, -1, 1).ravel()).reshape(m, m)
        mean = K_st @ alpha
        V = np.linalg.solve(L, K_st.T)
        C = 0.5 * (K_ss + K_ss.T) - V.T @ V
        Lc, _ = cholesky_with_jitter(0.5 * (C + C.T), cov.c1)
        out[start : start + m] = mean + Lc @ rng.standard_normal(m)
    return out


def constant_target(points: SphereSample) -> np.ndarray:
    """The constant function 1 at every point."""
    return np.ones(len(points))
