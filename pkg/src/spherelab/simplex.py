"""Dense revised simplex for minimal-L1 interpolation.

Solves min 1^T (u + v) subject to Phi u - Phi v = y, u >= 0, v >= 0
(the standard split-variable recast of min ||w||_1 s.t. Phi w = y) and
returns a vertex solution, so the support size never exceeds the number
of equality rows. Dantzig pricing with a Bland's-rule fallback that kicks
in after a streak of degenerate pivots, which precludes cycling; the
basis inverse is maintained by rank-one updates and refactorized
periodically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LPResult", "SimplexError", "InfeasibleError", "IterationLimitError", "min_l1_interpolate"]

DJ_TOL = 1e-9          # reduced-cost optimality tolerance
PIVOT_TOL = 1e-10      # minimum acceptable pivot magnitude
DEGENERATE_TOL = 1e-12  # step sizes below this count as degenerate
BLAND_STREAK = 40      # degenerate pivots before switching to Bland's rule
REFACTOR_EVERY = 128


class SimplexError(RuntimeError):
    pass


class InfeasibleError(SimplexError):
    """Phase I could not reach a feasible basis (rank-deficient system)."""


class IterationLimitError(SimplexError):
    """Cycling guard exceeded."""


@dataclass
class LPResult:
    w: np.ndarray          # dense signed solution, length H
    objective: float       # sum |w|
    iterations: int
    basis: np.ndarray      # final basic variable indices (u: h, v: H+h)


class _Tableau:
    """Revised simplex state for the paired-column problem."""

    def __init__(self, phi: np.ndarray, y: np.ndarray):
        self.phi = phi
        self.n, self.H = phi.shape
        self.y = y.astype(float)
        sign = np.where(self.y < 0, -1.0, 1.0)
        self.art_sign = sign
        # variable indexing: [0, H) -> u, [H, 2H) -> v, [2H, 2H+n) -> artificial
        self.basis = 2 * self.H + np.arange(self.n)
        self.b_inv = np.diag(sign)
        self.x_b = np.abs(self.y)
        self.iterations = 0

    def column(self, j: int) -> np.ndarray:
        if j < self.H:
            return self.phi[:, j]
        if j < 2 * self.H:
            return -self.phi[:, j - self.H]
        col = np.zeros(self.n)
        col[j - 2 * self.H] = self.art_sign[j - 2 * self.H]
        return col

    def basis_matrix(self) -> np.ndarray:
        B = np.empty((self.n, self.n))
        for i, j in enumerate(self.basis):
            B[:, i] = self.column(j)
        return B

    def refactor(self) -> None:
        B = self.basis_matrix()
        self.b_inv = np.linalg.inv(B)
        x = np.linalg.solve(B, self.y)  # backward-stable, unlike b_inv @ y
        self.x_b = np.where(x < 0, 0.0, x)

    def _phase_costs(self, phase: int) -> np.ndarray:
        if phase == 1:
            return (self.basis >= 2 * self.H).astype(float)
        return (self.basis < 2 * self.H).astype(float)

    def _price(self, phase: int, bland: bool):
        """Return (entering index, reduced cost) or (None, 0) at optimality."""
        c_b = self._phase_costs(phase)
        pi = c_b @ self.b_inv
        s = pi @ self.phi             # pricing of all u columns; v columns are -s
        c_cols = 0.0 if phase == 1 else 1.0
        r_u = c_cols - s
        r_v = c_cols + s
        basic_mask = np.zeros(2 * self.H, dtype=bool)
        basic_mask[self.basis[self.basis < 2 * self.H]] = True
        r = np.concatenate([r_u, r_v])
        r[basic_mask] = np.inf
        if bland:
            idx = np.flatnonzero(r < -DJ_TOL)
            if len(idx) == 0:
                return None, 0.0
            return int(idx[0]), float(r[idx[0]])
        j = int(np.argmin(r))
        if r[j] >= -DJ_TOL:
            return None, 0.0
        return j, float(r[j])

    def _ratio_test(self, d: np.ndarray, bland: bool):
        ok = d > PIVOT_TOL
        if not np.any(ok):
            return None
        ratios = np.where(ok, self.x_b / np.where(ok, d, 1.0), np.inf)
        theta = np.min(ratios)
        ties = np.flatnonzero(ratios <= theta * (1 + 1e-12) + 1e-300)
        if bland:
            leave = ties[np.argmin(self.basis[ties])]
        else:
            leave = ties[np.argmax(d[ties])]
        return int(leave), float(theta)

    def _pivot(self, enter: int, leave_row: int, d: np.ndarray, theta: float) -> None:
        self.x_b = self.x_b - theta * d
        self.x_b[self.x_b < 0] = 0.0
        self.x_b[leave_row] = theta
        self.basis[leave_row] = enter
        piv = d[leave_row]
        e = d / piv
        e[leave_row] = 1.0 - 1.0 / piv
        self.b_inv -= np.outer(e, self.b_inv[leave_row])

    def run_phase(self, phase: int, max_iter: int) -> None:
        bland = False
        streak = 0
        since_refactor = 0
        while True:
            enter, _ = self._price(phase, bland)
            if enter is None:
                if bland:
                    bland = False
                    streak = 0
                    continue  # re-verify optimality under full Dantzig pricing
                break
            d = self.b_inv @ self.column(enter)
            hit = self._ratio_test(d, bland)
            if hit is None:
                raise SimplexError("unbounded direction encountered (numerical breakdown)")
            leave_row, theta = hit
            self._pivot(enter, leave_row, d, theta)
            self.iterations += 1
            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                self.refactor()
                since_refactor = 0
            if theta <= DEGENERATE_TOL:
                streak += 1
                if streak >= BLAND_STREAK:
                    bland = True
            else:
                streak = 0
                bland = False
            if self.iterations > max_iter:
                raise IterationLimitError(f"exceeded {max_iter} simplex iterations")

    def drive_out_artificials(self) -> None:
        for row in np.flatnonzero(self.basis >= 2 * self.H):
            alpha = self.b_inv[row] @ self.phi
            j = int(np.argmax(np.abs(alpha)))
            piv = alpha[j]
            enter = j if piv != 0 else None
            if enter is None or abs(piv) <= PIVOT_TOL:
                raise InfeasibleError("artificial variable stuck in basis: rank-deficient rows")
            d = self.b_inv @ self.column(enter)
            self._pivot(enter, int(row), d, self.x_b[row] / d[row] if d[row] > PIVOT_TOL else 0.0)
        self.refactor()


def min_l1_interpolate(phi: np.ndarray, y: np.ndarray, max_iter: int | None = None) -> LPResult:
    """Minimal-L1 solution of Phi w = y via the split-variable LP.

    phi: (n, H) design matrix with full row rank (checked by the caller);
    returns a basic optimal solution with at most n nonzero entries.
    """
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    n, H = phi.shape
    if max_iter is None:
        max_iter = 2000 + 60 * n
    tab = _Tableau(phi, y)

    tab.run_phase(1, max_iter)
    tab.refactor()
    infeas = float(np.sum(tab.x_b[tab.basis >= 2 * tab.H]))
    if infeas > 1e-9 * max(1.0, np.max(np.abs(y))):
        raise InfeasibleError(f"phase-I infeasibility {infeas:.3g}; system has no solution")
    if np.any(tab.basis >= 2 * tab.H):
        tab.drive_out_artificials()

    tab.run_phase(2, max_iter)
    tab.refactor()

    w = np.zeros(H)
    for value, j in zip(tab.x_b, tab.basis):
        if j < H:
            w[j] += value
        elif j < 2 * H:
            w[j - H] -= value
    resid = np.max(np.abs(phi @ w - y))
    if resid > 1e-8 * max(1.0, np.max(np.abs(y))):
        raise SimplexError(f"solution residual {resid:.3g} out of tolerance")
    return LPResult(w=w, objective=float(np.sum(np.abs(w))), iterations=tab.iterations, basis=tab.basis.copy())
