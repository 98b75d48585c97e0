"""Experiment orchestration: learning-curve sweeps over (regime, d,
smoothness, n, seed), Monte Carlo test error, exponent fits against the
theory module, and CSV/JSON persistence."""

from __future__ import annotations

import json
import math
import time
import warnings
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import diffeo as diffeo_mod
from .feature_solver import basis_pursuit_lp, build_dictionary, extract_atoms, gd_alpha_trick, gd_min_l1
from .kernels import fit_ridgeless
from .targets import (
    MAX_JOINT_POINTS,
    SphereSample,
    TargetSpec,
    constant_target,
    sample_grf,
    sample_grf_conditional,
    sample_uniform_sphere,
    target_covariance,
)
from .theory import canonical_regime, predicted_exponent

__all__ = [
    "SolverOptions",
    "ExperimentConfig",
    "CurveRecord",
    "LeakageError",
    "InsufficientDataError",
    "test_error",
    "run_row",
    "run_sweep",
    "fit_exponent",
    "summarize",
    "load_records",
    "save_records",
    "diffeo_sense_synthetic",
]

REGIMES = ("lazy-ntk", "lazy-rfk", "feature-lp", "feature-gd-minl1", "feature-gd-alpha")
CSV_HEADER = "d,regime,nu_t,n,seed,test_error,n_A,wall_ms,error"


class LeakageError(RuntimeError):
    """A test point coincides with a training point."""


class InsufficientDataError(RuntimeError):
    """Too few distinct sample counts for an exponent fit."""


@dataclass(frozen=True)
class SolverOptions:
    H: int | None = None          # dictionary/width; default max(4096, 32 n)
    lam: float = 1e-5             # L1 penalty for the min-L1 trainer
    alpha: float = 1e-3           # output scale for the small-init trainer
    steps: int = 200_000
    lr: float | None = None
    mse_tol: float = 1e-8
    lp_max_iter: int | None = None
    gd_H: int | None = None       # width for GD regimes; default max(256, 4 n)


@dataclass(frozen=True)
class ExperimentConfig:
    regimes: tuple[str, ...]
    d: int
    target: TargetSpec
    n_grid: tuple[int, ...]
    seeds: int = 10
    n_test: int = 10_000
    master_seed: int = 0
    out_dir: str | Path = "runs/out"
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n_grid must be strictly increasing")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.n_test < 1000:
            raise ValueError("test size must be >= 1000")
        for r in self.regimes:
            if r not in REGIMES:
                raise ValueError(f"unknown regime {r!r}; choose from {REGIMES}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        regimes = raw.get("regimes") or [raw["regime"]]
        tgt = dict(raw.get("target", {"kind": "constant"}))
        tgt.setdefault("d", raw["d"])
        if str(tgt.get("nu_t", "inf")) == "inf":
            tgt["nu_t"] = math.inf
        solver = SolverOptions(**raw.get("solver", {}))
        return cls(
            regimes=tuple(regimes),
            d=int(raw["d"]),
            target=TargetSpec(**tgt),
            n_grid=tuple(int(n) for n in raw["n_grid"]),
            seeds=int(raw.get("seeds", 10)),
            n_test=int(raw.get("n_test", 10_000)),
            master_seed=int(raw.get("seed", 0)),
            out_dir=raw.get("out_dir", "runs/out"),
            solver=solver,
        )


@dataclass
class CurveRecord:
    d: int
    regime: str
    nu_t: float
    n: int
    seed: int
    test_error: float
    n_A: int
    wall_ms: float
    error: str = ""

    def key(self) -> tuple:
        return (self.regime, self.d, round(float(self.nu_t), 12), self.n, self.seed)

    def to_csv(self) -> str:
        nu = "inf" if math.isinf(self.nu_t) else repr(self.nu_t)
        return (
            f"{self.d},{self.regime},{nu},{self.n},{self.seed},"
            f"{self.test_error!r},{self.n_A},{self.wall_ms:.3f},{self.error}"
        )

    @classmethod
    def from_csv(cls, line: str) -> "CurveRecord":
        parts = line.split(",")
        return cls(
            d=int(parts[0]),
            regime=parts[1],
            nu_t=float(parts[2]),
            n=int(parts[3]),
            seed=int(parts[4]),
            test_error=float(parts[5]),
            n_A=int(parts[6]),
            wall_ms=float(parts[7]),
            error=parts[8] if len(parts) > 8 else "",
        )


def test_error(predictions: np.ndarray, target_values: np.ndarray) -> float:
    """Monte Carlo estimate of the squared generalization error."""
    predictions = np.asarray(predictions, dtype=float)
    target_values = np.asarray(target_values, dtype=float)
    if predictions.shape != target_values.shape:
        raise ValueError("prediction/target length mismatch")
    return float(np.mean((predictions - target_values) ** 2))


def _row_rng(config: ExperimentConfig, regime: str, n: int, seed: int) -> np.random.Generator:
    nu_key = "inf" if math.isinf(config.target.nu_t) else repr(config.target.nu_t)
    tag = zlib.crc32(f"{regime}|{config.d}|{config.target.kind}|{nu_key}|{n}".encode())
    return np.random.default_rng([config.master_seed, tag, seed])


def _sample_task(config: ExperimentConfig, n: int, rng: np.random.Generator, cov=None):
    train = sample_uniform_sphere(n, config.d, rng)
    test = sample_uniform_sphere(config.n_test, config.d, rng)
    # cheap dot-product screen, exact coordinate check on the candidates
    dots = train.points @ test.points.T
    for i, j in zip(*np.nonzero(dots >= 1.0 - 1e-13)):
        if np.max(np.abs(train.points[i] - test.points[j])) <= 1e-12:
            raise LeakageError("test point collides with a training point")
    spec = config.target
    if spec.kind == "constant":
        y_train, y_test = constant_target(train), constant_target(test)
    elif n + config.n_test <= MAX_JOINT_POINTS:
        joint = SphereSample(d=config.d, points=np.vstack([train.points, test.points]))
        values = sample_grf(joint, spec, rng, cov=cov)
        y_train, y_test = values[:n], values[n:]
    else:
        y_train = sample_grf(train, spec, rng, cov=cov)
        y_test = sample_grf_conditional(train, y_train, test, spec, rng, cov=cov)
    train.values = y_train
    return train, test, y_test


def run_row(config: ExperimentConfig, regime: str, n: int, seed: int, cov=None) -> CurveRecord:
    """One (regime, n, seed) cell: sample, fit, score. Deterministic given
    the config (wall time aside)."""
    t0 = time.perf_counter()
    rng = _row_rng(config, regime, n, seed)
    train, test, y_test = _sample_task(config, n, rng, cov=cov)
    sol = config.solver

    if regime in ("lazy-ntk", "lazy-rfk"):
        model = fit_ridgeless(train, regime.replace("lazy-", ""))
        preds = model.predict(test.points)
        n_atoms = n
    elif regime == "feature-lp":
        H = sol.H or max(4096, 32 * n)
        dictionary = build_dictionary(H, config.d, rng)
        measure = basis_pursuit_lp(dictionary, train, rng=rng, max_iter=sol.lp_max_iter)
        preds = measure.predict(test.points)
        n_atoms = measure.n_atoms
    elif regime in ("feature-gd-minl1", "feature-gd-alpha"):
        H = sol.gd_H or max(256, 4 * n)
        if regime == "feature-gd-minl1":
            net = gd_min_l1(train, H, lam=sol.lam, steps=sol.steps, lr=sol.lr, rng=rng, mse_tol=sol.mse_tol)
        else:
            # the throttled feature step tolerates (and needs) a bigger rate
            lr = sol.lr if sol.lr is not None else 0.5
            net = gd_alpha_trick(train, H, alpha=sol.alpha, steps=sol.steps, lr=lr, rng=rng, mse_tol=sol.mse_tol)
        preds = net.predict(test.points)
        n_atoms = extract_atoms(net, train).n_atoms
    else:
        raise ValueError(f"unknown regime {regime!r}")

    err = test_error(preds, y_test)
    wall_ms = (time.perf_counter() - t0) * 1e3
    return CurveRecord(
        d=config.d,
        regime=regime,
        nu_t=config.target.nu_t,
        n=n,
        seed=seed,
        test_error=err,
        n_A=int(n_atoms),
        wall_ms=wall_ms,
    )


def save_records(records: list[CurveRecord], path: str | Path) -> None:
    lines = [CSV_HEADER] + [r.to_csv() for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def load_records(path: str | Path) -> list[CurveRecord]:
    path = Path(path)
    if not path.exists():
        return []
    lines = path.read_text().strip().splitlines()
    return [CurveRecord.from_csv(line) for line in lines[1:]]


def run_sweep(config: ExperimentConfig, verbose: bool = False) -> tuple[list[CurveRecord], int]:
    """Run all (regime, n, seed) cells, skipping completed rows on disk.

    Per-row failures are tagged and the sweep continues; the failure count
    is returned so the CLI can exit with status 2.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "curves.csv"
    records = load_records(csv_path)
    done = {r.key() for r in records if not r.error}
    records = [r for r in records if not r.error]
    cov = None
    if config.target.kind != "constant":
        cov = target_covariance(config.target)
    failures = 0
    for regime in config.regimes:
        for n in config.n_grid:
            for seed in range(config.seeds):
                probe = CurveRecord(config.d, regime, config.target.nu_t, n, seed, 0.0, 0, 0.0)
                if probe.key() in done:
                    continue
                try:
                    rec = run_row(config, regime, n, seed, cov=cov)
                except Exception as err:  # row-level isolation by design
                    failures += 1
                    rec = replace(probe, test_error=math.nan, error=type(err).__name__)
                records.append(rec)
                save_records(records, csv_path)
                if verbose:
                    tag = rec.error or f"err={rec.test_error:.3e} n_A={rec.n_A}"
                    print(f"[sweep] {regime} d={config.d} n={n} seed={seed}: {tag}", flush=True)
    return records, failures


def fit_exponent(records: list[CurveRecord], tail_span: float = 8.0) -> tuple[float, float]:
    """Least-squares slope of log mean-error vs log n over the tail window.

    Records must belong to a single (regime, d, nu_t) group; errors are
    averaged over seeds per n and the fit uses the largest `tail_span`
    factor of n.
    """
    groups = {(r.regime, r.d, round(float(r.nu_t), 12)) for r in records}
    if len(groups) != 1:
        raise ValueError("records must belong to a single (regime, d, nu_t) group")
    by_n: dict[int, list[float]] = {}
    for r in records:
        if not r.error and np.isfinite(r.test_error):
            by_n.setdefault(r.n, []).append(r.test_error)
    if len(by_n) < 4:
        raise InsufficientDataError(f"need >= 4 distinct n, got {len(by_n)}")
    ns = np.array(sorted(by_n))
    means = np.array([np.mean(by_n[n]) for n in ns])
    window = ns >= ns[-1] / tail_span * (1 - 1e-9)
    x = np.log(ns[window].astype(float))
    y = np.log(means[window])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = max(len(x) - 2, 1)
    var = float(np.sum(resid**2)) / dof
    stderr = math.sqrt(var / float(np.sum((x - x.mean()) ** 2)))
    return float(-slope), stderr


def summarize(records: list[CurveRecord]) -> dict:
    """Per-group exponent fits joined with the theory predictions."""
    keyed: dict[tuple, list[CurveRecord]] = {}
    for r in records:
        keyed.setdefault((r.regime, r.d, round(float(r.nu_t), 12)), []).append(r)
    groups = []
    for (regime, d, nu_t), group in sorted(keyed.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        pred = predicted_exponent(canonical_regime(regime), d, float(nu_t) if nu_t else math.inf)
        try:
            beta_hat, stderr = fit_exponent(group)
        except InsufficientDataError:
            beta_hat, stderr = math.nan, math.nan
        groups.append(
            {
                "regime": regime,
                "d": d,
                "nu_t": "inf" if math.isinf(float(nu_t)) else float(nu_t),
                "beta_hat": beta_hat,
                "stderr": stderr,
                "beta_pred": pred.beta,
                "binding_term": pred.binding_term,
                "n_values": sorted({r.n for r in group}),
            }
        )
    out = {"groups": groups}
    if len(groups) == 1:
        out.update(
            beta_hat=groups[0]["beta_hat"],
            beta_pred=groups[0]["beta_pred"],
            stderr=groups[0]["stderr"],
        )
    return out


def smooth_random_images(m: int, P: int, rng: np.random.Generator, blur: float = 1.5) -> np.ndarray:
    """Low-frequency unit-norm random images: blurred white noise on S^(P^2-1)."""
    imgs = gaussian_filter(rng.standard_normal((m, P, P)), sigma=(0, blur, blur), mode="reflect")
    flat = imgs.reshape(m, -1)
    flat /= np.linalg.norm(flat, axis=1, keepdims=True)
    return flat.reshape(m, P, P)


def _normalized_predictor(model):
    def f(batch: np.ndarray) -> np.ndarray:
        flat = np.asarray(batch, dtype=float).reshape(len(batch), -1)
        flat = flat / np.linalg.norm(flat, axis=1, keepdims=True)
        return model.predict(flat)

    return f


def diffeo_sense_synthetic(
    P: int = 8,
    n_train: int = 64,
    n_images: int = 32,
    draws: int = 256,
    cutoff: int | None = None,
    target_displacement: float = 1.0,
    H: int = 2048,
    master_seed: int = 0,
) -> dict:
    """End-to-end sensitivity comparison on a smooth synthetic task.

    Trains the lazy-NTK and LP-feature predictors on the constant target
    over smooth random images (unit-normalized, so they live on the
    sphere) and reports R_f for both under a common calibrated ensemble.
    """
    cutoff = cutoff if cutoff is not None else P // 2
    rng = np.random.default_rng([master_seed, 777])
    T = diffeo_mod.calibrate_T(P, cutoff, target_displacement, rng=np.random.default_rng([master_seed, 1]))

    train_imgs = smooth_random_images(n_train, P, rng)
    test_imgs = smooth_random_images(n_images, P, rng)
    train = SphereSample(d=P * P, points=train_imgs.reshape(n_train, -1))
    train.values = constant_target(train)

    lazy = fit_ridgeless(train, "ntk")
    dictionary = build_dictionary(H, P * P, rng)
    feature = basis_pursuit_lp(dictionary, train, rng=rng)

    results = {}
    for name, model in (("lazy-ntk", lazy), ("feature-lp", feature)):
        r = diffeo_mod.relative_sensitivity(
            _normalized_predictor(model),
            test_imgs,
            T,
            cutoff,
            draws,
            np.random.default_rng([master_seed, 2]),
        )
        results[name] = float(r)
    return {"P": P, "T": T, "cutoff": cutoff, "n_train": n_train, "R_f": results}
