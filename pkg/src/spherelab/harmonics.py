"""Spherical-harmonic machinery on the unit sphere in R^d.

Everything here works with zonal quantities only: multiplicities N_{k,d},
the Legendre/Gegenbauer polynomials P_{k,d} normalized to P_{k,d}(1) = 1,
Funk-Hecke projections of scalar functions of a dot product, and the
resulting eigenvalue sequences for ReLU features and the NTK/RFK kernels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_legendre

__all__ = [
    "Degree",
    "Spectrum",
    "QuadratureRule",
    "QuadratureError",
    "surface_area",
    "projection_ratio",
    "multiplicity",
    "multiplicity_growth_constant",
    "legendre",
    "gauss_jacobi_rule",
    "funk_hecke",
    "funk_hecke_table",
    "relu_spectrum",
    "kernel_spectrum",
]


class QuadratureError(RuntimeError):
    """Node doubling stopped before two estimates agreed to tolerance."""


@dataclass(frozen=True)
class Degree:
    """Polynomial degree k on the sphere in ambient dimension d."""

    k: int
    d: int

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"ambient dimension must be >= 2, got {self.d}")
        if self.k < 0:
            raise ValueError(f"degree must be >= 0, got {self.k}")


def surface_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def projection_ratio(d: int) -> float:
    """Normalization |S^{d-2}| / |S^{d-1}| of the zonal projection measure."""
    if d < 2:
        raise ValueError("d must be >= 2")
    return surface_area(d - 1) / surface_area(d)


def multiplicity(k: int, d: int) -> int:
    """Number of linearly independent degree-k spherical harmonics in R^d.

    Computed exactly as dim(harmonics) = dim(homogeneous degree k)
    - dim(homogeneous degree k-2), which agrees with the usual binomial
    expression (2k+d-2)/k * binom(d+k-3, k-1) but stays in integer
    arithmetic.
    """
    Degree(k, d)
    if k == 0:
        return 1
    total = math.comb(k + d - 1, d - 1)
    lower = math.comb(k + d - 3, d - 1) if k >= 2 else 0
    return total - lower


def multiplicity_growth_constant(d: int) -> float:
    """Prefactor of the N_{k,d} ~ A_d k^(d-2) growth law.

    Exposed for completeness; nothing downstream consumes it
    quantitatively (the logarithmic-equivalence constant is not
    exercised by any check).
    """
    if d <= 2:
        raise ValueError("growth constant defined for d > 2")
    return math.sqrt(2.0 / math.pi) * (d - 2) ** (1.5 - d) * math.exp(d - 2)


def _validate_t(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + 1e-12):
        raise ValueError("argument outside [-1, 1]")
    return np.clip(t, -1.0, 1.0)


def legendre(k: int, d: int, t):
    """Legendre/Gegenbauer polynomial P_{k,d}(t), normalized to P_{k,d}(1)=1.

    Uses the stable three-term recurrence
        (k+d-2) P_{k+1} = (2k+d-2) t P_k - k P_{k-1},
    which preserves the endpoint normalization exactly.
    """
    Degree(k, d)
    t = _validate_t(t)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    p_prev = np.ones_like(t)
    if k == 0:
        return float(p_prev[0]) if scalar else p_prev
    p = t.copy()
    for j in range(1, k):
        p, p_prev = ((2 * j + d - 2) * t * p - j * p_prev) / (j + d - 2), p
    return float(p[0]) if scalar else p


def _legendre_pairs(d: int, t: np.ndarray):
    """Yield (k, P_{k,d}(t)) for k = 0, 1, 2, ... without storing the table."""
    p_prev = np.ones_like(t)
    yield 0, p_prev
    p = t.copy()
    k = 1
    while True:
        yield k, p
        p, p_prev = ((2 * k + d - 2) * t * p - k * p_prev) / (k + d - 2), p
        k += 1


def gauss_jacobi_rule(d: int, n: int):
    """Nodes/weights in t for the weight (1 - t^2)^((d-3)/2) on [-1, 1].

    d = 2 uses the analytic Chebyshev rule (the weight is then
    (1-t^2)^(-1/2), singular at the endpoints); other dimensions go
    through scipy's Gauss-Jacobi roots.
    """
    if d == 2:
        i = np.arange(1, n + 1)
        nodes = np.cos((2 * i - 1) * np.pi / (2 * n))
        weights = np.full(n, np.pi / n)
        return nodes, weights
    from scipy.special import roots_jacobi

    a = (d - 3) / 2.0
    return roots_jacobi(n, a, a)


@dataclass(frozen=True)
class QuadratureRule:
    """Adaptive rule for Funk-Hecke projections.

    The integral is evaluated in the colatitude variable (t = cos(theta)),
    where the arccos/sqrt endpoint behavior of the closed-form kernels
    becomes analytic; node counts double until two successive estimates
    agree to `tol` relative to the spectrum scale.

    breakpoints: interior t-values where the integrand is not smooth
    (e.g. 0.0 for ReLU); panels are split there.
    """

    tol: float = 1e-10
    base_nodes: int | None = None
    max_doublings: int = 6
    breakpoints: tuple[float, ...] = ()


@lru_cache(maxsize=32)
def _gl_cache(n: int):
    return roots_legendre(n)


def _panels(breakpoints: Sequence[float]):
    cuts = sorted({float(np.arccos(np.clip(b, -1.0, 1.0))) for b in breakpoints})
    cuts = [c for c in cuts if 1e-14 < c < np.pi - 1e-14]
    edges = [0.0, *cuts, np.pi]
    return list(zip(edges[:-1], edges[1:]))


def _theta_nodes(panels, n_per_panel: int):
    x, w = _gl_cache(n_per_panel)
    thetas, weights = [], []
    for a, b in panels:
        h = 0.5 * (b - a)
        thetas.append(h * x + 0.5 * (a + b))
        weights.append(h * w)
    return np.concatenate(thetas), np.concatenate(weights)


def _project_all(f: Callable, k_max: int, d: int, panels, n_per_panel: int) -> np.ndarray:
    if d == 2 and len(panels) == 1:
        # Chebyshev nodes handle the (1-t^2)^(-1/2) endpoint singularity
        # natively, and the node sums for every degree at once are exactly
        # a DCT-II of the sampled integrand.
        from scipy.fft import dct

        n = n_per_panel
        theta = (2.0 * np.arange(1, n + 1) - 1.0) * np.pi / (2.0 * n)
        coef = dct(f(np.cos(theta)), type=2) / (2.0 * n)
        return projection_ratio(2) * np.pi * coef[: k_max + 1]
    theta, w = _theta_nodes(panels, n_per_panel)
    t = np.cos(theta)
    ft = f(t) * np.sin(theta) ** (d - 2) * w
    out = np.empty(k_max + 1)
    for k, p in _legendre_pairs(d, t):
        if k > k_max:
            break
        out[k] = p @ ft
    return projection_ratio(d) * out


def funk_hecke_table(f: Callable, k_max: int, d: int, rule: QuadratureRule | None = None) -> np.ndarray:
    """Funk-Hecke coefficients f_k for all k <= k_max at once.

    f_k = (|S^{d-2}|/|S^{d-1}|) * int f(t) P_{k,d}(t) (1-t^2)^((d-3)/2) dt.
    """
    rule = rule or QuadratureRule()
    panels = _panels(rule.breakpoints)
    n = max(rule.base_nodes or max(64, 4 * (k_max + 8)), k_max + 8)
    est = _project_all(f, k_max, d, panels, n)
    for _ in range(rule.max_doublings):
        n *= 2
        new = _project_all(f, k_max, d, panels, n)
        scale = max(np.max(np.abs(new)), 1e-300)
        if np.max(np.abs(new - est)) <= rule.tol * scale:
            return new
        est = new
    raise QuadratureError(
        f"doubling to {n} nodes did not reach tol={rule.tol:g} (k_max={k_max}, d={d})"
    )


def funk_hecke(f: Callable, k: int, d: int, rule: QuadratureRule | None = None) -> float:
    """Degree-k Funk-Hecke projection of a scalar function on [-1, 1]."""
    Degree(k, d)
    return float(funk_hecke_table(f, k, d, rule)[k])


TARGET = "target"
FILTER = "filter"


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalue (or variance) sequence indexed by degree k.

    values[k] holds c_k for a target spectrum or phi_k for a filter
    spectrum; the truncation index is len(values) - 1 and is stored
    explicitly so that downstream tail sums can report truncation error.
    """

    d: int
    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in (TARGET, FILTER):
            raise ValueError(f"kind must be '{TARGET}' or '{FILTER}'")
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if self.kind == TARGET and np.any(vals < 0):
            raise ValueError("target spectra must be nonnegative")

    @property
    def k_max(self) -> int:
        return len(self.values) - 1

    def multiplicities(self) -> np.ndarray:
        return np.array([multiplicity(k, self.d) for k in range(self.k_max + 1)], dtype=float)

    def level_masses(self) -> np.ndarray:
        """N_{k,d} * values[k] per degree."""
        return self.multiplicities() * self.values

    def total_mass(self) -> float:
        return float(np.sum(self.level_masses()))

    def tail_bound(self) -> float:
        """Estimated mass beyond k_max from a power-law fit of the stored tail.

        Conservative integral bound sum_{k>k_max} N_k |v_k| ~ y(k_max) *
        k_max / (-s - 1) from the fitted log-log slope s; returns inf if
        the tail does not decay summably.
        """
        y = self.multiplicities() * np.abs(self.values)
        ks = np.arange(self.k_max + 1)
        mask = (ks >= max(2, self.k_max // 2)) & (y > 0)
        if mask.sum() < 2:
            return 0.0
        s, logc = np.polyfit(np.log(ks[mask]), np.log(y[mask]), 1)
        if s >= -1.0:
            return math.inf
        y_end = math.exp(logc + s * math.log(self.k_max))
        return y_end * self.k_max / (-s - 1.0)

    def reconstruct(self, t) -> np.ndarray:
        """Evaluate sum_k N_{k,d} values[k] P_{k,d}(t)."""
        t = np.atleast_1d(_validate_t(t))
        acc = np.zeros_like(t)
        masses = self.level_masses()
        for k, p in _legendre_pairs(self.d, t):
            if k > self.k_max:
                break
            acc += masses[k] * p
        return acc

    def save(self, path: str | Path) -> None:
        """CSV with header k,value plus a JSON sidecar {d, kind, k_max}."""
        path = Path(path)
        lines = ["k,value"]
        lines += [f"{k},{v!r}" for k, v in enumerate(self.values)]
        path.write_text("\n".join(lines) + "\n")
        sidecar = {"d": self.d, "kind": self.kind, "k_max": self.k_max}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Spectrum":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        rows = path.read_text().strip().splitlines()[1:]
        values = np.empty(len(rows))
        for row in rows:
            k, v = row.split(",")
            values[int(k)] = float(v)
        if len(values) != meta["k_max"] + 1:
            raise ValueError("sidecar k_max does not match CSV length")
        return cls(d=meta["d"], kind=meta["kind"], values=values)


def relu_spectrum(d: int, k_max: int, rule: QuadratureRule | None = None) -> Spectrum:
    """Funk-Hecke coefficients of the ReLU activation.

    Odd degrees above 1 are exact zeros (parity against P_{k,d}); the even
    tail decays like k^(-(d-1)/2 - 3/2) with alternating signs.
    """
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    rule = rule or QuadratureRule(breakpoints=(0.0,))
    if 0.0 not in rule.breakpoints:
        rule = QuadratureRule(rule.tol, rule.base_nodes, rule.max_doublings, (*rule.breakpoints, 0.0))
    vals = funk_hecke_table(lambda t: np.maximum(t, 0.0), k_max, d, rule)
    ks = np.arange(k_max + 1)
    vals[(ks % 2 == 1) & (ks > 1)] = 0.0
    return Spectrum(d=d, kind=FILTER, values=vals)


def kernel_spectrum(kernel: str, d: int, k_max: int, rule: QuadratureRule | None = None) -> Spectrum:
    """Mercer eigenvalues of the closed-form NTK or RFK on the sphere.

    The even tail decays like k^(-(d-1)-2*nu) with nu = 1/2 (NTK) or
    3/2 (RFK); odd degrees above 1 vanish for the same parity reason as
    ReLU and are snapped to exact zeros.
    """
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    from . import kernels  # deferred: kernels sits above harmonics in the import graph

    try:
        f = {"ntk": kernels.ntk_eval, "rfk": kernels.rfk_eval}[kernel.lower()]
    except KeyError:
        raise ValueError(f"kernel must be 'ntk' or 'rfk', got {kernel!r}") from None
    vals = funk_hecke_table(f, k_max, d, rule or QuadratureRule())
    ks = np.arange(k_max + 1)
    vals[(ks % 2 == 1) & (ks > 1)] = 0.0
    return Spectrum(d=d, kind=FILTER, values=vals)
