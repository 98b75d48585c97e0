"""Feature-regime machinery: random atom dictionaries, minimal-L1
interpolation through the split-variable LP, full-batch gradient-descent
trainers (L1-penalized and small-initialization-scale), atom extraction
and the atomic predictor."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .simplex import InfeasibleError, min_l1_interpolate
from .targets import SphereSample

__all__ = [
    "AtomicMeasure",
    "ShallowNet",
    "DivergenceError",
    "build_dictionary",
    "basis_pursuit_lp",
    "gd_min_l1",
    "gd_alpha_trick",
    "extract_atoms",
    "predict_atomic",
    "default_lr",
]


class DivergenceError(RuntimeError):
    """Gradient descent blew past the divergence guard."""


def relu(z):
    return np.maximum(z, 0.0)


def default_lr() -> float:
    # 0.1 / (1 + K(1)) with K the NTK, whose value at 1 is exactly 1
    return 0.05


@dataclass
class AtomicMeasure:
    """Finite signed measure sum_i w_i delta_{theta_i} over unit features."""

    weights: np.ndarray
    features: np.ndarray  # (n_atoms, d)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2 or len(self.weights) != len(self.features):
            raise ValueError("one weight per feature row")
        if len(self.features):
            norms = np.linalg.norm(self.features, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-9:
                raise ValueError("atom features must be unit vectors within 1e-9")

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    @property
    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.weights)))

    def predict(self, x):
        return predict_atomic(self, x)

    def save(self, path: str | Path) -> None:
        d = self.features.shape[1] if len(self.features) else 0
        header = "w," + ",".join(f"theta_{i+1}" for i in range(d))
        rows = [header]
        for w, th in zip(self.weights, self.features):
            rows.append(f"{w!r}," + ",".join(repr(c) for c in th))
        Path(path).write_text("\n".join(rows) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "AtomicMeasure":
        lines = Path(path).read_text().strip().splitlines()
        data = np.array([[float(c) for c in line.split(",")] for line in lines[1:]])
        if data.size == 0:
            return cls(weights=np.empty(0), features=np.empty((0, 0)))
        return cls(weights=data[:, 0], features=data[:, 1:])


@dataclass
class ShallowNet:
    """One-hidden-layer ReLU network f(x) = (alpha/H) sum_h w_h relu(theta_h . x).

    alpha is the output scale used by the small-initialization trick
    (alpha = 1 for the L1-penalized trainer); weights are stored raw.
    """

    weights: np.ndarray
    features: np.ndarray
    alpha: float = 1.0
    steps_run: int = 0
    converged: bool = False
    trace: list = field(default_factory=list)

    @property
    def H(self) -> int:
        return len(self.weights)

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        out = (self.alpha / self.H) * (self.weights @ relu(self.features @ X.T))
        return float(out[0]) if single else out

    @property
    def measure_l1(self) -> float:
        """L1 norm of the induced measure, (alpha/H) sum |w_h|."""
        return float(self.alpha / self.H * np.sum(np.abs(self.weights)))


def build_dictionary(H: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """H i.i.d. uniform unit feature vectors."""
    if H < 1:
        raise ValueError("H must be >= 1")
    g = rng.standard_normal((H, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def basis_pursuit_lp(
    dictionary: np.ndarray,
    train: SphereSample,
    rng: np.random.Generator | None = None,
    max_iter: int | None = None,
) -> AtomicMeasure:
    """Minimal-L1 interpolating measure over the dictionary atoms.

    The design matrix Phi_{i,h} = relu(theta_h . x_i) must have full row
    rank; the LP returns a vertex, so at most n atoms carry weight.
    """
    if train.values is None:
        raise ValueError("training sample carries no target values")
    X, y = train.points, train.values
    n = len(X)
    dictionary = np.asarray(dictionary, dtype=float)
    phi = relu(X @ dictionary.T)  # (n, H)

    # exact duplicate columns make the optimal vertex non-unique; nudge them
    _, first = np.unique(phi.T, axis=0, return_index=True)
    dup = np.setdiff1d(np.arange(phi.shape[1]), first)
    if len(dup):
        rng = rng or np.random.default_rng(0)
        dictionary = dictionary.copy()
        dictionary[dup] += 1e-10 * rng.standard_normal((len(dup), dictionary.shape[1]))
        dictionary[dup] /= np.linalg.norm(dictionary[dup], axis=1, keepdims=True)
        phi[:, dup] = relu(X @ dictionary[dup].T)

    # full-row-rank check on singular values; the cheap Gram route loses
    # half the precision to squaring, so fall back to an exact SVD when
    # it cannot certify the rank
    eigs = np.linalg.eigvalsh(phi @ phi.T)
    sv_tol = max(phi.shape) * np.finfo(float).eps * math.sqrt(max(eigs[-1], 0.0))
    if math.sqrt(max(eigs[0], 0.0)) <= sv_tol:
        sv = np.linalg.svd(phi, compute_uv=False)
        if sv[-1] <= max(phi.shape) * np.finfo(float).eps * sv[0]:
            raise InfeasibleError("design matrix is row-rank deficient; enlarge the dictionary")

    res = min_l1_interpolate(phi, y, max_iter=max_iter)
    idx = np.flatnonzero(np.abs(res.w) > 1e-11 * max(1.0, np.max(np.abs(res.w))))
    if len(idx) > n:
        raise AssertionError(f"LP returned {len(idx)} atoms > n={n}")
    return AtomicMeasure(weights=res.w[idx], features=dictionary[idx])


def predict_atomic(measure: AtomicMeasure, x):
    """sum_i w_i relu(theta_i . x) for unit query vectors."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("query points must lie on the unit sphere within 1e-9")
    if measure.n_atoms == 0:
        out = np.zeros(len(X))
    else:
        out = measure.weights @ relu(measure.features @ X.T)
    return float(out[0]) if single else out


def _gd(
    train: SphereSample,
    H: int,
    rng: np.random.Generator,
    alpha: float,
    lam: float,
    steps: int,
    lr: float | None,
    mse_tol: float,
    lam_decay: bool,
    trace_every: int,
    trace_path: str | Path | None,
    feature_step_cap: float | None = None,
    w_init: float = 0.0,
):
    """Shared full-batch GD loop.

    Gradients are taken in measure units (the 1/H parameter scaling is
    absorbed into the step), so the training speed does not depend on the
    width. feature_step_cap throttles the feature learning rate globally
    so that the largest per-neuron feature step stays below the given
    angular radius: once the small-initialization trick drives weights to
    O(1/alpha) the raw feature steps grow past the data-kink spacing and
    plain GD turns chaotic. The throttle is shared by all neurons, so
    relative feature velocities (and hence which atoms move) are exactly
    those of plain gradient descent.
    """
    X, y = train.points, train.values
    n = len(X)
    lr = default_lr() if lr is None else lr
    theta = build_dictionary(H, train.d, rng)
    w = w_init * rng.standard_normal(H) if w_init else np.zeros(H)

    loss0 = 0.5 * float(np.mean(y**2))
    trace: list[dict] = []
    decay_start = int(0.9 * steps)
    converged = False
    step = 0
    for step in range(1, steps + 1):
        lam_t = lam
        if lam_decay and lam > 0 and step > decay_start:
            lam_t = lam * 10.0 ** (-(step - decay_start) / max(1, steps - decay_start))
        z = theta @ X.T
        a = relu(z)
        f = (w @ a) / H
        resid = y - alpha * f
        mse = float(np.mean(resid**2))
        loss = 0.5 * mse + lam_t * alpha / H * float(np.sum(np.abs(w)))
        if loss > 1e3 * max(loss0, 1e-300):
            raise DivergenceError(f"loss {loss:.3g} at step {step} vs initial {loss0:.3g}; lower lr")
        if step % trace_every == 0 or step == 1:
            trace.append(
                {
                    "step": step,
                    "mse": mse,
                    "l1": alpha / H * float(np.sum(np.abs(w))),
                    "n_active": int(np.sum(np.abs(w) > 1e-12)),
                }
            )
        if mse < mse_tol:
            converged = True
            break
        grad_w = -(a @ resid) / n + lam_t * np.sign(w)
        mask = (z > 0).astype(float)
        grad_theta = -((mask * resid) @ X) * w[:, None] / n
        w -= lr * grad_w
        lr_theta = lr
        if feature_step_cap is not None:
            biggest = lr * np.max(np.linalg.norm(grad_theta, axis=1))
            lr_theta = lr * min(1.0, feature_step_cap / max(biggest, 1e-300))
        theta -= lr_theta * grad_theta
        norms = np.linalg.norm(theta, axis=1, keepdims=True)
        theta /= np.maximum(norms, 1e-300)

    net = ShallowNet(weights=w, features=theta, alpha=alpha, steps_run=step, converged=converged, trace=trace)
    if trace_path is not None:
        with open(trace_path, "w") as fh:
            for row in trace:
                fh.write(json.dumps(row) + "\n")
    return net


def gd_min_l1(
    train: SphereSample,
    H: int,
    lam: float = 1e-5,
    steps: int = 10**6,
    lr: float | None = None,
    rng: np.random.Generator | None = None,
    mse_tol: float = 1e-8,
    trace_every: int = 1000,
    trace_path=None,
) -> ShallowNet:
    """Full-batch GD on half-MSE + (lam/H) sum|w_h|, weights from zero,
    features kept on the unit sphere by re-projection after every step.
    lam holds for the first 90% of the budget, then decays by a decade."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    rng = rng or np.random.default_rng(0)
    return _gd(train, H, rng, 1.0, lam, steps, lr, mse_tol, True, trace_every, trace_path)


def gd_alpha_trick(
    train: SphereSample,
    H: int,
    alpha: float = 1e-3,
    steps: int = 10**6,
    lr: float | None = None,
    rng: np.random.Generator | None = None,
    mse_tol: float = 1e-8,
    trace_every: int = 1000,
    trace_path=None,
    w_init: float = 1e-4,
    feature_step_cap: float | None = 0.02,
) -> ShallowNet:
    """Small-initialization trick: fit alpha * f to the target, forcing
    the weights to grow to O(1/alpha). alpha = 1 with w_init = 0 and no
    feature cap reduces to plain MSE gradient descent.

    Weights start at a small random scale (sign diversity keeps the early
    dynamics from collapsing onto a handful of directions) and the feature
    learning rate is throttled globally; see _gd.
    """
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    rng = rng or np.random.default_rng(0)
    return _gd(
        train, H, rng, alpha, 0.0, steps, lr, mse_tol, False, trace_every, trace_path,
        feature_step_cap=feature_step_cap, w_init=w_init,
    )


def extract_atoms(net: ShallowNet, train: SphereSample, dead_tol: float = 1e-6) -> AtomicMeasure:
    """Collapse a trained net into its atoms.

    Neurons below dead_tol * max|w| are dropped; survivors sharing the
    same binary activation pattern over the training set merge into one
    atom whose weight is the (signed, measure-scaled) group sum and whose
    feature is the L1-weighted mean direction renormalized.
    """
    w, theta = net.weights, net.features
    if len(w) == 0 or np.max(np.abs(w)) == 0.0:
        return AtomicMeasure(weights=np.empty(0), features=np.empty((0, train.d)))
    alive = np.abs(w) >= dead_tol * np.max(np.abs(w))
    if not np.any(alive):
        return AtomicMeasure(weights=np.empty(0), features=np.empty((0, train.d)))
    w, theta = w[alive], theta[alive]
    patterns = (theta @ train.points.T > 0).astype(np.uint8)
    _, inverse = np.unique(patterns, axis=0, return_inverse=True)
    weights, feats = [], []
    scale = net.alpha / net.H
    for g in range(inverse.max() + 1):
        sel = inverse == g
        direction = np.abs(w[sel]) @ theta[sel]
        nrm = np.linalg.norm(direction)
        if nrm == 0:
            continue
        weights.append(scale * float(np.sum(w[sel])))
        feats.append(direction / nrm)
    return AtomicMeasure(weights=np.array(weights), features=np.array(feats))
