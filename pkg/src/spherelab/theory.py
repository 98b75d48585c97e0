"""Closed-form predictions: learning-curve exponents for each training
regime, the self-consistent kernel learning-curve solver, and the d = 2
predictor analysis (curvature constants and chain-of-parabolas checks)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .feature_solver import AtomicMeasure, basis_pursuit_lp, build_dictionary
from .harmonics import Spectrum
from .kernels import KernelModel, fit_ridgeless
from .targets import SphereSample, TruncationWarning

__all__ = [
    "ExponentPrediction",
    "ReplicaSolution",
    "ReplicaBracketError",
    "predicted_exponent",
    "crossover_nu_t",
    "canonical_regime",
    "replica_curve",
    "spectral_error_decomposition",
    "phi_tilde_2d",
    "phi_tilde_2d_second_regular",
    "prop2_ratio",
    "parabola_residual_2d",
    "IntervalRecord",
]

NU_LAZY = {"lazy-ntk": 0.5, "lazy-rfk": 1.5}


class ReplicaBracketError(RuntimeError):
    """The sample count exceeds the number of ranked modes (truncation)."""


def canonical_regime(regime: str) -> str:
    r = regime.lower()
    if r.startswith("feature"):
        return "feature"
    if r in ("lazy-ntk", "ntk"):
        return "lazy-ntk"
    if r in ("lazy-rfk", "rfk"):
        return "lazy-rfk"
    raise ValueError(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class ExponentPrediction:
    regime: str
    d: int
    nu_t: float
    beta: float
    binding_term: str  # "predictor-limited" or "target-limited"

    def as_dict(self) -> dict:
        return {
            "regime": self.regime,
            "d": self.d,
            "nu_t": self.nu_t if math.isfinite(self.nu_t) else "inf",
            "beta_pred": self.beta,
            "binding_term": self.binding_term,
        }


def predicted_exponent(regime: str, d: int, nu_t: float) -> ExponentPrediction:
    """Learning-curve exponent beta with error(n) ~ n^(-beta).

    Lazy: beta = min{2(d-1)+4 nu, 2 nu_t}/(d-1), nu = 1/2 (NTK), 3/2 (RFK).
    Feature: beta = min{(d-1)+3, 2 nu_t}/(d-1).
    nu_t = inf encodes the constant target.
    """
    if d < 2 or not nu_t > 0:
        raise ValueError("need d >= 2 and nu_t > 0")
    regime = canonical_regime(regime)
    if regime == "feature":
        predictor_term = (d - 1) + 3.0
    else:
        predictor_term = 2.0 * (d - 1) + 4.0 * NU_LAZY[regime]
    target_term = 2.0 * nu_t
    binding = "target-limited" if target_term <= predictor_term else "predictor-limited"
    beta = min(predictor_term, target_term) / (d - 1)
    return ExponentPrediction(regime=regime, d=d, nu_t=nu_t, beta=beta, binding_term=binding)


def crossover_nu_t(regime: str, d: int) -> float:
    """Smoothness above which the exponent saturates (predictor-limited)."""
    regime = canonical_regime(regime)
    if regime == "feature":
        return (d - 1) / 2.0 + 1.5
    return (d - 1) + 2.0 * NU_LAZY[regime]


@dataclass
class ReplicaSolution:
    """Self-consistent solution at one sample count.

    Modal errors are stored per degree level (all N_{k,d} degenerate modes
    of a level share one value); total = sum_k N_k level_errors[k].
    """

    n: float
    kappa: float
    level_errors: np.ndarray
    multiplicities: np.ndarray
    total: float
    fixed_point_residual: float


def replica_curve(filter_spec: Spectrum, target_spec: Spectrum, n_grid) -> list[ReplicaSolution]:
    """Learning curve from the self-consistent mode-counting formalism.

    kappa(n) solves n = sum_rho phi_rho/(phi_rho + kappa) (bisection to
    1e-10 relative) and the modal errors are kappa^2/(phi_rho+kappa)^2 c_rho.
    """
    if filter_spec.d != target_spec.d:
        raise ValueError("filter and target spectra must share d")
    if filter_spec.k_max != target_spec.k_max:
        raise ValueError("filter and target spectra must share k_max")
    mult = filter_spec.multiplicities()
    phi = np.abs(filter_spec.values)
    c = target_spec.values
    pos = phi > 0
    n_modes = float(np.sum(mult[pos]))

    out = []
    for n in np.atleast_1d(np.asarray(n_grid, dtype=float)):
        if n >= n_modes:
            raise ReplicaBracketError(
                f"n={n:g} >= {n_modes:g} ranked modes at k_max={filter_spec.k_max}; "
                "kappa has no positive solution (increase k_max)"
            )

        def excess(log_kappa):
            kappa = math.exp(log_kappa)
            return float(np.sum(mult[pos] * phi[pos] / (phi[pos] + kappa))) - n

        lo = math.log(np.min(phi[pos])) - 40.0
        hi = math.log(np.max(phi)) + 40.0
        log_kappa = brentq(excess, lo, hi, rtol=1e-13, maxiter=400)
        kappa = math.exp(log_kappa)
        resid = abs(excess(log_kappa))
        if resid > 1e-8 * n:
            warnings.warn(f"fixed-point residual {resid:.3g} at n={n:g}", RuntimeWarning, stacklevel=2)
        eps_k = kappa**2 / (phi + kappa) ** 2 * c
        out.append(
            ReplicaSolution(
                n=float(n),
                kappa=kappa,
                level_errors=eps_k,
                multiplicities=mult,
                total=float(np.sum(mult * eps_k)),
                fixed_point_residual=resid,
            )
        )
    return out


def _power_tail(ks: np.ndarray, y: np.ndarray) -> float:
    """Extrapolated sum of y beyond its last index, from a log-log fit."""
    mask = (ks >= max(2, ks[-1] // 2)) & (y > 0)
    if mask.sum() < 2:
        return 0.0
    s, logc = np.polyfit(np.log(ks[mask]), np.log(y[mask]), 1)
    if s >= -1.0:
        return math.inf
    k_end = ks[-1]
    return math.exp(logc + s * math.log(k_end)) * k_end / (-s - 1.0)


def spectral_error_decomposition(
    filter_spec: Spectrum, target_spec: Spectrum, g_sq_sum: float, k_c: int
) -> tuple[float, float]:
    """Tail error split at cutoff degree k_c.

    Returns (predictor term, target term) =
    (g_sq_sum * sum_{k>=k_c} N_k phi_k^2, sum_{k>=k_c} N_k c_k). The caller
    supplies g_sq_sum according to the smooth/rough branch it is probing.
    """
    if filter_spec.d != target_spec.d:
        raise ValueError("spectra must share d")
    k_max = min(filter_spec.k_max, target_spec.k_max)
    if k_c > k_max:
        warnings.warn("k_c beyond stored spectrum; returning zeros", TruncationWarning, stacklevel=2)
        return 0.0, 0.0
    ks = np.arange(k_max + 1)
    mult = filter_spec.multiplicities()[: k_max + 1]
    pred_summand = mult * filter_spec.values[: k_max + 1] ** 2
    targ_summand = mult * target_spec.values[: k_max + 1]
    pred = g_sq_sum * float(np.sum(pred_summand[k_c:]))
    targ = float(np.sum(targ_summand[k_c:]))
    for term, summand, label in ((pred / max(g_sq_sum, 1e-300), pred_summand, "predictor"),
                                 (targ, targ_summand, "target")):
        tail = _power_tail(ks, summand)
        if term > 0 and tail > 0.05 * term:
            warnings.warn(
                f"{label} tail beyond k_max={k_max} is {tail:.2g} vs partial sum {term:.2g}",
                TruncationWarning,
                stacklevel=2,
            )
    return pred, targ


def _wrap_angle(x):
    return np.mod(np.asarray(x, dtype=float) + np.pi, 2.0 * np.pi) - np.pi


def phi_tilde_2d(regime: str, x):
    """Unit-bump profile phi~(x) on the circle for each regime."""
    x = _wrap_angle(x)
    a = np.abs(x)
    regime = canonical_regime(regime)
    if regime == "feature":
        return np.maximum(0.0, np.cos(x))
    if regime == "lazy-ntk":
        return (2.0 * (np.pi - a) * np.cos(x) + np.sin(a)) / (2.0 * np.pi)
    return ((np.pi - a) * np.cos(x) + np.sin(a)) / (2.0 * np.pi)


def phi_tilde_2d_second_regular(regime: str, x):
    """Regular part of the second derivative of phi~ (Dirac masses dropped)."""
    x = _wrap_angle(x)
    a = np.abs(x)
    regime = canonical_regime(regime)
    if regime == "feature":
        return -np.maximum(0.0, np.cos(x))
    if regime == "lazy-ntk":
        return (-2.0 * (np.pi - a) * np.cos(x) + 3.0 * np.sin(a)) / (2.0 * np.pi)
    # RFK second derivative is continuous (the Dirac masses only appear at
    # fourth order), so the regular part is the plain second derivative.
    return (np.sin(a) - (np.pi - a) * np.cos(x)) / (2.0 * np.pi)


def _angles_to_points(angles: np.ndarray) -> np.ndarray:
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def points_to_angles(points: np.ndarray) -> np.ndarray:
    return np.arctan2(points[:, 1], points[:, 0])


def prop2_ratio(
    regime: str,
    k_range: tuple[int, int],
    n: int,
    rng: np.random.Generator | None = None,
    grid: int = 2**14,
    H: int | None = None,
) -> float:
    """Estimate the limiting curvature constant c on the circle.

    Fits the requested regime on n random points, evaluates the predictor
    f and the regular part of f'' on a uniform angular grid (the Dirac
    masses at the profile kinks are removed analytically by using the
    closed-form regular second derivative), and averages the Fourier ratio
    f''_r(k)/f(k) = -k^2 phi_r(k)/phi(k) over even k in k_range.
    """
    if n < 256:
        raise ValueError("estimator calibrated for n >= 256")
    k_lo, k_hi = k_range
    if k_hi > grid // 16:
        raise ValueError(f"k_range exceeds Nyquist/8 = {grid // 16} of the {grid}-point grid")
    rng = rng or np.random.default_rng(0)
    regime = canonical_regime(regime)

    angles = rng.uniform(-np.pi, np.pi, n)
    y = rng.standard_normal(n)
    train = SphereSample(d=2, points=_angles_to_points(angles), values=y)
    if regime == "feature":
        dictionary = build_dictionary(H or max(4096, 32 * n), 2, rng)
        measure = basis_pursuit_lp(dictionary, train, rng=rng)
        centers = points_to_angles(measure.features)
        coeffs = measure.weights
    else:
        model = fit_ridgeless(train, regime.replace("lazy-", ""))
        centers = angles
        coeffs = model.dual_weights

    xs = np.linspace(-np.pi, np.pi, grid, endpoint=False)
    diff = xs[None, :] - centers[:, None]
    f = coeffs @ phi_tilde_2d(regime, diff)
    f2r = coeffs @ phi_tilde_2d_second_regular(regime, diff)

    F = np.fft.rfft(f) / grid
    F2r = np.fft.rfft(f2r) / grid
    ks = np.arange(k_lo, k_hi + 1)
    ks = ks[ks % 2 == 0]
    good = np.abs(F[ks]) > 1e-13 * np.max(np.abs(F))
    if not np.any(good):
        raise RuntimeError("predictor has no usable Fourier content in k_range")
    ratios = np.real(F2r[ks[good]] / F[ks[good]])
    return float(np.mean(ratios))


@dataclass(frozen=True)
class IntervalRecord:
    lo: float
    hi: float
    width: float
    max_residual: float
    ratio: float  # max_residual / width^3


def singular_angles(model) -> np.ndarray:
    """Angles where the d = 2 predictor's second derivative is singular."""
    if isinstance(model, AtomicMeasure):
        a = points_to_angles(model.features)
        return np.unique(_wrap_angle(np.concatenate([a - np.pi / 2, a + np.pi / 2])))
    if isinstance(model, KernelModel):
        a = points_to_angles(model.train.points)
        return np.unique(_wrap_angle(np.concatenate([a, a + np.pi])))
    raise TypeError("expected an AtomicMeasure or KernelModel")


def parabola_residual_2d(model, train=None, samples_per_interval: int = 64) -> list[IntervalRecord]:
    """Quadratic-fit residuals of a d = 2 predictor between singular points.

    model may be a fitted KernelModel/AtomicMeasure (singular angles are
    derived from it) or a tuple (predict_fn, angles) with predict_fn
    mapping an array of polar angles to predictor values.
    """
    if isinstance(model, tuple):
        predict_fn, sing = model
        sing = np.unique(_wrap_angle(np.asarray(sing, dtype=float)))
    else:
        sing = singular_angles(model)

        def predict_fn(a):
            return model.predict(_angles_to_points(np.asarray(a)))

    if len(sing) < 2:
        raise ValueError("need at least two singular angles")
    edges = np.concatenate([sing, [sing[0] + 2.0 * np.pi]])
    records = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        width = hi - lo
        if width <= 1e-12:
            continue
        pad = 1e-9 * width
        xs = np.linspace(lo + pad, hi - pad, samples_per_interval)
        vals = predict_fn(_wrap_angle(xs))
        coef = np.polyfit(xs - lo, vals, 2)
        resid = float(np.max(np.abs(vals - np.polyval(coef, xs - lo))))
        records.append(IntervalRecord(lo=lo, hi=hi, width=width, max_residual=resid, ratio=resid / width**3))
    return records
